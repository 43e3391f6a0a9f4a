//! `α(x; ξ)` to roughly twice working precision, as an unevaluated sum
//! `hi + lo`. Differences of two intensities then keep their relative
//! accuracy even when they are far below `ulp(α)`.
//!
//! Complex kernels are handled through the real form of the Gram system:
//! with `G = A(ξ, ξ)` and `b = A(ξ, x)`, `b* G^{-1} b = b̃ᵀ G̃^{-1} b̃` where
//! `G̃ = [[Re G, -Im G], [Im G, Re G]]` and `b̃ = [Re b; Im b]`.

use nalgebra::{DMatrix, DVector};

use super::{check_free, check_positive};
use crate::configuration::Configuration;
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::linalg;

const REFINEMENT_STEPS: usize = 2;

/// Double-double accumulator.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

impl Dd {
    pub fn new(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }

    fn renorm(hi: f64, lo: f64) -> Self {
        let (hi, lo) = two_sum(hi, lo);
        Dd { hi, lo }
    }

    pub fn add(self, v: f64) -> Self {
        let (s, e) = two_sum(self.hi, v);
        Dd::renorm(s, e + self.lo)
    }

    /// `self + a b` with the product formed exactly.
    pub fn add_prod(self, a: f64, b: f64) -> Self {
        let p = a * b;
        let e = a.mul_add(b, -p);
        let (s, e2) = two_sum(self.hi, p);
        Dd::renorm(s, e2 + e + self.lo)
    }

    pub fn sub(self, other: Dd) -> Self {
        let (s, e) = two_sum(self.hi, -other.hi);
        Dd::renorm(s, e + self.lo - other.lo)
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

fn real_system(kernel: &Kernel, x: usize, sites: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
    let a = kernel.a();
    let g = linalg::principal(a, sites);
    let b = linalg::column(a, sites, x);
    let m = sites.len();
    if kernel.is_real() {
        return (g.map(|z| z.re), b.map(|z| z.re));
    }
    let big = DMatrix::from_fn(2 * m, 2 * m, |i, j| {
        let z = g[(i % m, j % m)];
        match (i < m, j < m) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    let rhs = DVector::from_fn(2 * m, |i, _| if i < m { b[i].re } else { b[i - m].im });
    (big, rhs)
}

/// `α(x; ξ)` with the solve refined against double-double residuals and the
/// final quadratic form accumulated in double-double.
pub fn alpha_refined(kernel: &Kernel, x: usize, xi: &Configuration) -> Result<Dd> {
    check_free(kernel, x, xi)?;
    let sites = xi.sites();
    let diag = kernel.a()[(x, x)].re;
    if sites.is_empty() {
        check_positive(kernel, diag)?;
        return Ok(Dd::new(diag));
    }
    let (g, b) = real_system(kernel, x, &sites);
    let chol = g
        .clone()
        .cholesky()
        .ok_or(Error::NumericallySingular { value: 0.0 })?;
    let m = b.len();
    // the solution is kept as a sum of corrections y_0 + y_1 + ...
    let mut parts = vec![chol.solve(&b)];
    for _ in 0..REFINEMENT_STEPS {
        let r = DVector::from_fn(m, |i, _| {
            let mut acc = Dd::new(b[i]);
            for part in &parts {
                for j in 0..m {
                    acc = acc.add_prod(-g[(i, j)], part[j]);
                }
            }
            acc.to_f64()
        });
        parts.push(chol.solve(&r));
    }
    let mut quad = Dd::default();
    for part in &parts {
        for i in 0..m {
            quad = quad.add_prod(b[i], part[i]);
        }
    }
    let value = Dd::new(diag).sub(quad);
    check_positive(kernel, value.to_f64())?;
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn dd_product_is_exact() {
        let a = 1.0 + f64::EPSILON;
        let v = Dd::default().add_prod(a, a).add(-1.0);
        assert_eq!(v.hi, 2.0 * f64::EPSILON);
        assert_eq!(v.lo, f64::EPSILON * f64::EPSILON);
    }

    #[test]
    fn agrees_with_plain_alpha() {
        for k in [
            fixtures::random_dominant(6, 0.4, 0.2, 1),
            fixtures::random_complex_dominant(5, 0.3, 0.2, 2),
        ] {
            let n = k.n_sites();
            for mask in 0..1u64 << n {
                let xi = Configuration::from_mask(n, mask);
                for x in xi.holes() {
                    let r = alpha_refined(&k, x, &xi).unwrap().to_f64();
                    let p = super::super::alpha(&k, x, &xi).unwrap();
                    assert!((r - p).abs() <= 1e-13 * p, "{r} {p}");
                }
            }
        }
    }
}
