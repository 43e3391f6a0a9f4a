//! Real `2n × 2n` form of a complex Hermitian kernel:
//! `Ã = [[A₁, -A₂], [A₂, A₁]]` for `A = A₁ + i A₂`. Site `x` of `E` becomes
//! `x` (first copy) and `x + n` (second copy).

use rayon::prelude::*;
use serde::Serialize;

use super::gamma::{lemma41_bruteforce, GammaData, Lemma41Report};
use crate::error::{Error, Result};
use crate::kernel::{Kernel, SiteSpace};
use crate::linalg::{self, c, CMatrix};
use crate::papangelou::CheckMode;

pub fn complex_embedding(kernel: &Kernel) -> Result<Kernel> {
    if kernel.is_real() {
        return Err(Error::AlreadyReal);
    }
    let n = kernel.n_sites();
    let a = kernel.a();
    let mut out = CMatrix::zeros(2 * n, 2 * n);
    for x in 0..n {
        for y in 0..n {
            let z = a[(x, y)];
            out[(x, y)] = c(z.re);
            out[(x + n, y + n)] = c(z.re);
            out[(x, y + n)] = c(-z.im);
            out[(x + n, y)] = c(z.im);
        }
    }
    let embedded = Kernel::from_matrix(out, SiteSpace::new(2 * n)?)?;
    // keep the same q so that the two Γ matrices are comparable
    let q = kernel.q_value().max(embedded.q_exact());
    embedded.with_q(q)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingReport {
    pub lambda_complex: f64,
    pub lambda_embedded: f64,
    /// Largest `|(C + iD) - A(ξ, ξ)^{-1}|` over the checked subsets.
    pub max_inverse_error: f64,
    /// Largest `|A(ξ, ξ)^{-1}(x, y)| / (M̃(x₁, y₁) + M̃(x₁, y₂))`.
    pub max_recovered_ratio: f64,
    /// Largest `|Γ(x, y) - Γ̃(x₁, y₁) - Γ̃(x₁, y₂)|`: the projected chain on
    /// `E` is the lumped chain on the two copies.
    pub lumping_defect: f64,
    /// Inverse bounds for `Ã` over subsets of both copies.
    pub embedded: Lemma41Report,
}

/// Verifies the embedding on every nonempty `ξ ⊆ E` and runs the inverse
/// bound check for `Ã` over subsets of `E₁ ∪ E₂`.
pub fn embedding_check(kernel: &Kernel, mode: Option<CheckMode>) -> Result<EmbeddingReport> {
    let embedded = complex_embedding(kernel)?;
    let n = kernel.n_sites();
    if n > 16 {
        return Err(Error::EnumerationTooLarge {
            n_sites: n,
            limit: 16,
        });
    }
    let data = GammaData::new(&embedded)?;
    let direct = GammaData::new(kernel)?;
    let mut lumping_defect = 0.0f64;
    for x in 0..n {
        for y in 0..n {
            if x != y {
                let lumped = data.gamma[(x, y)] + data.gamma[(x, y + n)];
                lumping_defect = lumping_defect.max((direct.gamma[(x, y)] - lumped).abs());
            }
        }
    }
    let (max_inverse_error, max_recovered_ratio) = (1..1u64 << n)
        .into_par_iter()
        .map(|mask| {
            let sites = linalg::mask_sites(mask);
            let m = sites.len();
            let inv = linalg::cholesky(&linalg::principal(kernel.a(), &sites))
                .ok_or(Error::NumericallySingular { value: 0.0 })?
                .inverse();
            let doubled: Vec<usize> = sites
                .iter()
                .copied()
                .chain(sites.iter().map(|&x| x + n))
                .collect();
            let big = linalg::cholesky(&linalg::principal(embedded.a(), &doubled))
                .ok_or(Error::NumericallySingular { value: 0.0 })?
                .inverse();
            let (mut err, mut ratio) = (0.0f64, 0.0f64);
            for (i, &x) in sites.iter().enumerate() {
                for (j, &y) in sites.iter().enumerate() {
                    let cc = big[(i, j)].re;
                    let dd = -big[(i, j + m)].re;
                    err = err.max((inv[(i, j)] - crate::linalg::C64::new(cc, dd)).norm());
                    let bound = data.m_bound[(x, y)]
                        + if x == y {
                            data.gamma[(x, x + n)] / data.lambda
                        } else {
                            data.m_bound[(x, y + n)]
                        };
                    ratio = ratio.max(inv[(i, j)].norm() / bound);
                }
            }
            Ok((err, ratio))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold((0.0f64, 0.0f64), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    Ok(EmbeddingReport {
        lambda_complex: kernel.lambda_margin(),
        lambda_embedded: embedded.lambda_margin(),
        max_inverse_error,
        max_recovered_ratio,
        lumping_defect,
        embedded: lemma41_bruteforce(&embedded, mode)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn complex_pair_embedding() {
        let k = fixtures::complex_pair();
        let e = complex_embedding(&k).unwrap();
        assert!((e.lambda_margin() - 1.3).abs() < 1e-14);
        assert!((k.lambda_margin() - 1.3).abs() < 1e-14);
        let rep = embedding_check(&k, None).unwrap();
        assert!(rep.max_inverse_error < 1e-12);
        assert!(rep.max_recovered_ratio <= 1.0 + 1e-9);
        assert!(rep.embedded.max_ratio <= 1.0 + 1e-9);
        assert!(rep.lumping_defect < 1e-14);
    }

    #[test]
    fn real_kernel_is_rejected() {
        assert_eq!(
            complex_embedding(&fixtures::a2()).err(),
            Some(Error::AlreadyReal)
        );
    }

    #[test]
    fn random_complex_embedding() {
        let k = fixtures::random_complex_dominant(5, 0.3, 0.2, 12);
        let rep = embedding_check(&k, None).unwrap();
        assert!(rep.max_inverse_error < 1e-12);
        assert!(rep.max_recovered_ratio <= 1.0 + 1e-9, "{rep:?}");
        assert!(rep.embedded.max_ratio <= 1.0 + 1e-9);
        assert!(rep.lumping_defect < 1e-12);
        assert!((rep.lambda_complex - rep.lambda_embedded).abs() < 1e-12);
    }
}
