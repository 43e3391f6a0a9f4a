//! Papangelou intensities `α(x; ξ)` of the DPP with kernel `K = A (I + A)^{-1}`.
//!
//! On a finite site set the intensity is the Schur complement
//! `A(x, x) - A(x, ξ) A(ξ, ξ)^{-1} A(ξ, x)`, equivalently
//! `det A(xξ, xξ) / det A(ξ, ξ)`. Several independent routes are provided so
//! that they can be checked against each other:
//!
//! * [`alpha`]: Cholesky of `A(ξ, ξ)` and a forward solve,
//! * [`alpha_det_ratio`]: ratio of LU determinants,
//! * [`alpha_variational`]: least squares in the `(f, A g)` inner product,
//! * [`alpha_refined`]: the Cholesky route refined in double-double,
//! * [`beta_variational`]: the dual problem in the `(f, A^{-1} g)` inner
//!   product over the complement `E \ xξ`, whose value is `1 / α`.

mod engine;
mod refined;

pub use engine::{IntensitySnapshot, PapangelouEngine, DEFAULT_REFACTOR_PERIOD};
pub use refined::{alpha_refined, Dd};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::configuration::Configuration;
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::linalg::{self, CMatrix, CVector, C64};

/// Schur complements at or below `SINGULAR_TOL * ‖A‖` are rejected.
pub const SINGULAR_TOL: f64 = 1e-12;

/// Largest site set for which [`AlphaTable`] enumerates every configuration.
pub const ALPHA_TABLE_LIMIT: usize = 16;

/// Largest site set for which [`alpha_bounds_check`] is exhaustive.
pub const BOUNDS_EXHAUSTIVE_LIMIT: usize = 16;

fn check_site(kernel: &Kernel, x: usize) -> Result<()> {
    if x >= kernel.n_sites() {
        return Err(Error::SiteOutOfRange {
            site: x,
            n_sites: kernel.n_sites(),
        });
    }
    Ok(())
}

fn check_free(kernel: &Kernel, x: usize, xi: &Configuration) -> Result<()> {
    check_site(kernel, x)?;
    if xi.n_sites() != kernel.n_sites() {
        return Err(Error::DimensionMismatch {
            expected: kernel.n_sites(),
            found: xi.n_sites(),
        });
    }
    if xi.contains(x) {
        return Err(Error::SiteOccupied(x));
    }
    Ok(())
}

fn check_positive(kernel: &Kernel, value: f64) -> Result<f64> {
    if !(value > SINGULAR_TOL * kernel.op_norm()) {
        return Err(Error::NumericallySingular { value });
    }
    Ok(value)
}

pub(crate) fn forward_solve(l: &CMatrix, b: &CVector) -> CVector {
    let n = b.len();
    let mut z = b.clone();
    for i in 0..n {
        let mut s = z[i];
        for j in 0..i {
            s -= l[(i, j)] * z[j];
        }
        z[i] = s / l[(i, i)];
    }
    z
}

/// `α(x; ξ)` through the Cholesky factor of `A(ξ, ξ)`.
pub fn alpha(kernel: &Kernel, x: usize, xi: &Configuration) -> Result<f64> {
    check_free(kernel, x, xi)?;
    let sites = xi.sites();
    alpha_on_sites(kernel, x, &sites)
}

pub(crate) fn alpha_on_sites(kernel: &Kernel, x: usize, sites: &[usize]) -> Result<f64> {
    let a = kernel.a();
    if sites.is_empty() {
        return check_positive(kernel, a[(x, x)].re);
    }
    let g = linalg::principal(a, sites);
    let l = linalg::cholesky(&g)
        .ok_or(Error::NumericallySingular { value: 0.0 })?
        .unpack();
    let z = forward_solve(&l, &linalg::column(a, sites, x));
    check_positive(kernel, a[(x, x)].re - z.norm_squared())
}

/// `β(x; ξ) = 1 / α(x; ξ)`.
pub fn beta(kernel: &Kernel, x: usize, xi: &Configuration) -> Result<f64> {
    Ok(1.0 / alpha(kernel, x, xi)?)
}

/// `det A(xξ, xξ) / det A(ξ, ξ)` with LU determinants.
pub fn alpha_det_ratio(kernel: &Kernel, x: usize, xi: &Configuration) -> Result<f64> {
    check_free(kernel, x, xi)?;
    let sites = xi.sites();
    let mut with_x = sites.clone();
    with_x.push(x);
    let num = linalg::det_real(&linalg::principal(kernel.a(), &with_x));
    let den = linalg::det_real(&linalg::principal(kernel.a(), &sites));
    if den <= 0.0 {
        return Err(Error::NumericallySingular { value: den });
    }
    check_positive(kernel, num / den)
}

/// Minimizes `(e_x - f)* A (e_x - f)` over `f` spanned by `{e_y : y ∈ ξ}`.
/// The normal equations use the Gram matrix `A(ξ, ξ)` (solved by LU) and
/// the minimum is evaluated as a quadratic form on the full site set.
pub fn alpha_variational(kernel: &Kernel, x: usize, xi: &Configuration) -> Result<f64> {
    check_free(kernel, x, xi)?;
    let sites = xi.sites();
    variational_minimum(kernel.a(), x, &sites).and_then(|v| check_positive(kernel, v))
}

/// Minimizes `(e_x - g)* A^{-1} (e_x - g)` over `g` spanned by
/// `{e_y : y ∈ E \ xξ}`; the result equals `1 / α(x; ξ)`.
pub fn beta_variational(kernel: &Kernel, x: usize, xi: &Configuration) -> Result<f64> {
    check_free(kernel, x, xi)?;
    let n = kernel.n_sites();
    let inverse = kernel
        .a()
        .clone()
        .try_inverse()
        .ok_or(Error::NumericallySingular { value: 0.0 })?;
    let complement: Vec<usize> = (0..n).filter(|&y| y != x && !xi.contains(y)).collect();
    let v = variational_minimum(&inverse, x, &complement)?;
    if !(v > 0.0) {
        return Err(Error::NumericallySingular { value: v });
    }
    Ok(v)
}

fn variational_minimum(gram: &CMatrix, x: usize, span: &[usize]) -> Result<f64> {
    let n = gram.nrows();
    let mut residual = CVector::zeros(n);
    residual[x] = C64::new(1.0, 0.0);
    if !span.is_empty() {
        let g = linalg::principal(gram, span);
        let rhs = linalg::column(gram, span, x);
        let coef = g
            .lu()
            .solve(&rhs)
            .ok_or(Error::NumericallySingular { value: 0.0 })?;
        for (i, &y) in span.iter().enumerate() {
            residual[y] -= coef[i];
        }
    }
    Ok((residual.adjoint() * gram * &residual)[(0, 0)].re)
}

/// The three routes to `α(x; ξ) - α(x; uξ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifferencePaths {
    /// `|A(x,u) - A(x,ξ) A(ξ,ξ)^{-1} A(ξ,u)|^2 / α(u; ξ)`.
    pub formula: f64,
    /// `|S(x,u)|^2 / S(u,u)` with `S` the Schur complement of `A(ξ, ξ)` on
    /// `{x, u}`, obtained by inverting the block of `A(xuξ, xuξ)^{-1}`.
    pub restricted: f64,
    /// `α(x; ξ) - α(x; uξ)` from two direct evaluations in double-double,
    /// so the subtraction does not cancel away the significant digits.
    pub direct: f64,
}

impl DifferencePaths {
    pub fn max_relative_deviation(&self) -> f64 {
        let scale = self
            .formula
            .abs()
            .max(self.restricted.abs())
            .max(self.direct.abs());
        if scale == 0.0 {
            return 0.0;
        }
        let d1 = (self.formula - self.restricted).abs();
        let d2 = (self.formula - self.direct).abs();
        let d3 = (self.restricted - self.direct).abs();
        d1.max(d2).max(d3) / scale
    }
}

fn check_pair(kernel: &Kernel, x: usize, u: usize, xi: &Configuration) -> Result<()> {
    if x == u {
        return Err(Error::IdenticalSites(x));
    }
    check_free(kernel, x, xi)?;
    check_free(kernel, u, xi)
}

/// `α(x; ξ) - α(x; uξ)` through the closed form with the interaction term
/// `w = A(x,u) - A(x,ξ) A(ξ,ξ)^{-1} A(ξ,u)`.
pub fn alpha_difference(kernel: &Kernel, x: usize, u: usize, xi: &Configuration) -> Result<f64> {
    check_pair(kernel, x, u, xi)?;
    let a = kernel.a();
    let sites = xi.sites();
    let (w, alpha_u) = if sites.is_empty() {
        (a[(x, u)], a[(u, u)].re)
    } else {
        let l = linalg::cholesky(&linalg::principal(a, &sites))
            .ok_or(Error::NumericallySingular { value: 0.0 })?
            .unpack();
        let zx = forward_solve(&l, &linalg::column(a, &sites, x));
        let zu = forward_solve(&l, &linalg::column(a, &sites, u));
        (a[(x, u)] - zx.dotc(&zu), a[(u, u)].re - zu.norm_squared())
    };
    let alpha_u = check_positive(kernel, alpha_u)?;
    Ok(w.norm_sqr() / alpha_u)
}

fn alpha_difference_restricted(
    kernel: &Kernel,
    x: usize,
    u: usize,
    xi: &Configuration,
) -> Result<f64> {
    let mut idx = vec![x, u];
    idx.extend(xi.iter());
    let inv = linalg::principal(kernel.a(), &idx)
        .try_inverse()
        .ok_or(Error::NumericallySingular { value: 0.0 })?;
    let pair = inv.view((0, 0), (2, 2)).into_owned();
    let s = pair
        .try_inverse()
        .ok_or(Error::NumericallySingular { value: 0.0 })?;
    let s_uu = check_positive(kernel, s[(1, 1)].re)?;
    Ok(s[(0, 1)].norm_sqr() / s_uu)
}

pub fn alpha_difference_paths(
    kernel: &Kernel,
    x: usize,
    u: usize,
    xi: &Configuration,
) -> Result<DifferencePaths> {
    let formula = alpha_difference(kernel, x, u, xi)?;
    let restricted = alpha_difference_restricted(kernel, x, u, xi)?;
    let direct = alpha_refined(kernel, x, xi)?
        .sub(alpha_refined(kernel, x, &xi.with(u)?)?)
        .to_f64();
    Ok(DifferencePaths {
        formula,
        restricted,
        direct,
    })
}

/// Every intensity `α(x; ξ)` on a small site set, indexed by the bit mask
/// of `ξ`.
#[derive(Debug, Clone)]
pub struct AlphaTable {
    n_sites: usize,
    values: Vec<f64>,
}

impl AlphaTable {
    pub fn build(kernel: &Kernel) -> Result<Self> {
        let n = kernel.n_sites();
        if n > ALPHA_TABLE_LIMIT {
            return Err(Error::EnumerationTooLarge {
                n_sites: n,
                limit: ALPHA_TABLE_LIMIT,
            });
        }
        let a = kernel.a();
        let mut values = vec![f64::NAN; n << n];
        values
            .par_chunks_mut(n)
            .enumerate()
            .try_for_each(|(mask, row)| -> Result<()> {
                let sites = linalg::mask_sites(mask as u64);
                let l = if sites.is_empty() {
                    None
                } else {
                    Some(
                        linalg::cholesky(&linalg::principal(a, &sites))
                            .ok_or(Error::NumericallySingular { value: 0.0 })?
                            .unpack(),
                    )
                };
                for (x, slot) in row.iter_mut().enumerate() {
                    if mask >> x & 1 == 1 {
                        continue;
                    }
                    let v = match &l {
                        None => a[(x, x)].re,
                        Some(l) => {
                            a[(x, x)].re
                                - forward_solve(l, &linalg::column(a, &sites, x)).norm_squared()
                        }
                    };
                    *slot = check_positive(kernel, v)?;
                }
                Ok(())
            })?;
        Ok(AlphaTable { n_sites: n, values })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// `α(x; mask)`; `x` must not be in `mask`.
    #[inline]
    pub fn get(&self, x: usize, mask: u64) -> f64 {
        debug_assert!(mask >> x & 1 == 0);
        self.values[(mask as usize) * self.n_sites + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckMode {
    Exhaustive,
    Sampled { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsReport {
    pub exhaustive: bool,
    pub checked: usize,
    pub lambda: f64,
    pub min_alpha: f64,
    pub max_alpha: f64,
    /// Largest `A(x, x)` over the sites tested.
    pub max_diagonal: f64,
    pub min_witness: (usize, Vec<usize>),
}

/// Checks `λ ≤ α(x; ξ) ≤ A(x, x)` over all `(x, ξ)` when `|E| ≤ 16`,
/// otherwise over random configurations. The lower bound is only asserted
/// when the diagonal-dominance margin `λ` is positive.
pub fn alpha_bounds_check(kernel: &Kernel, mode: Option<CheckMode>) -> Result<BoundsReport> {
    let n = kernel.n_sites();
    let mode = mode.unwrap_or(if n <= BOUNDS_EXHAUSTIVE_LIMIT {
        CheckMode::Exhaustive
    } else {
        CheckMode::Sampled {
            samples: 4096,
            seed: 0,
        }
    });
    let lambda = kernel.lambda_margin();
    let tol = 1e-10 * kernel.op_norm();
    let mut report = BoundsReport {
        exhaustive: matches!(mode, CheckMode::Exhaustive),
        checked: 0,
        lambda,
        min_alpha: f64::INFINITY,
        max_alpha: f64::NEG_INFINITY,
        max_diagonal: (0..n)
            .map(|x| kernel.diag(x))
            .fold(f64::NEG_INFINITY, f64::max),
        min_witness: (0, vec![]),
    };
    let mut visit = |x: usize, xi: &Configuration, value: f64| -> Result<()> {
        report.checked += 1;
        if value < report.min_alpha {
            report.min_alpha = value;
            report.min_witness = (x, xi.sites());
        }
        report.max_alpha = report.max_alpha.max(value);
        let upper = kernel.diag(x);
        if value > upper + tol {
            return Err(Error::BoundViolated {
                site: x,
                configuration: xi.sites(),
                detail: format!("α = {value} exceeds A(x,x) = {upper}"),
            });
        }
        if lambda > 0.0 && value < lambda - tol {
            return Err(Error::BoundViolated {
                site: x,
                configuration: xi.sites(),
                detail: format!("α = {value} below the margin λ = {lambda}"),
            });
        }
        Ok(())
    };
    match mode {
        CheckMode::Exhaustive => {
            if n > BOUNDS_EXHAUSTIVE_LIMIT {
                return Err(Error::EnumerationTooLarge {
                    n_sites: n,
                    limit: BOUNDS_EXHAUSTIVE_LIMIT,
                });
            }
            let table = AlphaTable::build(kernel)?;
            for mask in 0..(1u64 << n) {
                let xi = Configuration::from_mask(n, mask);
                for x in 0..n {
                    if mask >> x & 1 == 0 {
                        visit(x, &xi, table.get(x, mask))?;
                    }
                }
            }
        }
        CheckMode::Sampled { samples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..samples {
                let x = rng.random_range(0..n);
                let p: f64 = rng.random();
                let mut xi = Configuration::empty(n);
                for y in 0..n {
                    if y != x && rng.random::<f64>() < p {
                        xi.insert(y)?;
                    }
                }
                let value = alpha(kernel, x, &xi)?;
                visit(x, &xi, value)?;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn cfg(n: usize, sites: &[usize]) -> Configuration {
        Configuration::from_sites(n, sites).unwrap()
    }

    #[test]
    fn diagonal_kernel_has_constant_intensity() {
        let k = fixtures::diagonal(5, 1.7);
        for mask in 0..32u64 {
            let xi = Configuration::from_mask(5, mask);
            for x in xi.holes() {
                assert!((alpha(&k, x, &xi).unwrap() - 1.7).abs() < 1e-15);
                assert!((beta(&k, x, &xi).unwrap() - 1.0 / 1.7).abs() < 1e-15);
                assert_eq!(
                    alpha_difference(&k, x, (x + 1) % 5, &Configuration::empty(5)).unwrap(),
                    0.0
                );
            }
        }
    }

    #[test]
    fn two_site_examples() {
        let k = fixtures::a2();
        assert_eq!(alpha(&k, 0, &cfg(2, &[])).unwrap(), 2.0);
        let v = alpha(&k, 0, &cfg(2, &[1])).unwrap();
        assert!((v - 1.875).abs() < 1e-15);
        assert!((alpha_det_ratio(&k, 0, &cfg(2, &[1])).unwrap() - 3.75 / 2.0).abs() < 1e-14);
        assert!((beta(&k, 0, &cfg(2, &[1])).unwrap() - 1.0 / 1.875).abs() < 1e-15);
        assert!((alpha_variational(&k, 0, &cfg(2, &[1])).unwrap() - 1.875).abs() < 1e-14);
        assert_eq!(alpha_variational(&k, 0, &cfg(2, &[])).unwrap(), 2.0);
        // complement of {0, 1} is empty: no minimization, (A^{-1})(0, 0)
        assert!((beta_variational(&k, 0, &cfg(2, &[1])).unwrap() - 2.0 / 3.75).abs() < 1e-14);
        let d = alpha_difference_paths(&k, 0, 1, &cfg(2, &[])).unwrap();
        assert!((d.formula - 0.125).abs() < 1e-15);
        assert!((d.direct - 0.125).abs() < 1e-14);
        assert!((d.restricted - 0.125).abs() < 1e-14);
    }

    #[test]
    fn illegal_arguments() {
        let k = fixtures::a2();
        assert_eq!(alpha(&k, 1, &cfg(2, &[1])), Err(Error::SiteOccupied(1)));
        assert_eq!(
            alpha_difference(&k, 0, 0, &cfg(2, &[])),
            Err(Error::IdenticalSites(0))
        );
        assert!(matches!(
            alpha(&k, 2, &cfg(2, &[])),
            Err(Error::SiteOutOfRange { .. })
        ));
        assert!(matches!(
            alpha(&k, 0, &Configuration::empty(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn all_routes_agree_on_random_kernel() {
        let k = fixtures::random_dominant(6, 0.3, 0.2, 11);
        for mask in 0..64u64 {
            let xi = Configuration::from_mask(6, mask);
            for x in xi.holes() {
                let a = alpha(&k, x, &xi).unwrap();
                let r = alpha_det_ratio(&k, x, &xi).unwrap();
                let v = alpha_variational(&k, x, &xi).unwrap();
                let b = beta_variational(&k, x, &xi).unwrap();
                assert!((a - r).abs() <= 1e-9 * a, "det ratio {a} vs {r}");
                assert!((a - v).abs() <= 1e-9 * a, "variational {a} vs {v}");
                assert!((a * b - 1.0).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn table_matches_direct_route() {
        let k = fixtures::random_complex_dominant(5, 0.2, 0.3, 3);
        let table = AlphaTable::build(&k).unwrap();
        for mask in 0..32u64 {
            let xi = Configuration::from_mask(5, mask);
            for x in xi.holes() {
                let direct = alpha(&k, x, &xi).unwrap();
                assert!((table.get(x, mask) - direct).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn bounds_on_worked_examples() {
        let r = alpha_bounds_check(&fixtures::diagonal(4, 2.5), None).unwrap();
        assert_eq!((r.min_alpha, r.max_alpha), (2.5, 2.5));
        let r = alpha_bounds_check(&fixtures::a2(), None).unwrap();
        assert!(r.exhaustive);
        assert!((r.min_alpha - 1.875).abs() < 1e-14 && r.min_alpha >= 1.5);
        assert_eq!(r.max_alpha, 2.0);
        assert_eq!(r.checked, 4);
    }

    #[test]
    fn sampled_bounds_mode() {
        let k = fixtures::torus_nearest_neighbor(&[20], 1.0, 0.2);
        let r = alpha_bounds_check(&k, None).unwrap();
        assert!(!r.exhaustive);
        assert_eq!(r.checked, 4096);
        assert!(r.min_alpha >= 0.6);
    }
}
