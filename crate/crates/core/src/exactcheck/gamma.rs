//! Entrywise bounds on `A(ξ, ξ)^{-1}` for diagonally dominant kernels.
//!
//! With `r = q / (λ + q)` and the stochastic matrix `P̂ = Q̂ + I`, where
//! `Q̂(x, y) = |A(x, y)|_1 / q` off the diagonal, every principal inverse
//! satisfies `|A(ξ, ξ)^{-1}(x, y)| <= M(x, y)` with `M(x, x) = 1 / λ` and
//! `M(x, y) = Γ(x, y) / λ`, `Γ = Σ_{n >= 1} (r P̂)^n = (I - r P̂)^{-1} - I`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::linalg::{self, abs1};
use crate::papangelou::CheckMode;

/// Largest site set whose subsets are enumerated by default.
pub const LEMMA_EXHAUSTIVE_LIMIT: usize = 14;

const SAMPLED_SUBSETS: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct GammaData {
    pub lambda: f64,
    pub q: f64,
    pub r: f64,
    pub q_hat: DMatrix<f64>,
    pub p_hat: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub m_bound: DMatrix<f64>,
}

fn resolvent_minus_identity(p: &DMatrix<f64>, r: f64) -> DMatrix<f64> {
    let n = p.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    // (I - rP) X = rP  gives  X = (I - rP)^{-1} - I
    (&id - p * r)
        .lu()
        .solve(&(p * r))
        .expect("I - rP is nonsingular for r < 1")
}

impl GammaData {
    pub fn new(kernel: &Kernel) -> Result<Self> {
        let lambda = kernel.lambda_margin();
        if !(lambda > 0.0) {
            return Err(Error::AssumptionAViolated { lambda });
        }
        let n = kernel.n_sites();
        let q = kernel.q_value();
        let a = kernel.a();
        let (q_hat, r) = if q > 0.0 {
            let mut qh =
                DMatrix::from_fn(n, n, |x, y| if x == y { 0.0 } else { abs1(a[(x, y)]) / q });
            for x in 0..n {
                qh[(x, x)] = -qh.row(x).sum();
            }
            (qh, q / (lambda + q))
        } else {
            (DMatrix::zeros(n, n), 0.0)
        };
        let p_hat = &q_hat + DMatrix::<f64>::identity(n, n);
        let gamma = resolvent_minus_identity(&p_hat, r);
        let m_bound = DMatrix::from_fn(n, n, |x, y| {
            if x == y {
                1.0 / lambda
            } else {
                gamma[(x, y)] / lambda
            }
        });
        Ok(GammaData {
            lambda,
            q,
            r,
            q_hat,
            p_hat,
            gamma,
            m_bound,
        })
    }

    /// `Σ_{n=1}^{terms} (r P̂)^n`.
    pub fn series(&self, terms: usize) -> DMatrix<f64> {
        let step = &self.p_hat * self.r;
        let mut power = step.clone();
        let mut sum = DMatrix::zeros(step.nrows(), step.ncols());
        for _ in 0..terms {
            sum += &power;
            power = &power * &step;
        }
        sum
    }

    /// Entrywise bound on `Γ - series(terms)`: `r^{terms+1} / (1 - r)`.
    pub fn tail_bound(&self, terms: usize) -> f64 {
        self.r.powi(terms as i32 + 1) / (1.0 - self.r)
    }

    /// `Γ_ξ = (I - r P̂(ξ, ξ))^{-1} - I`, the same series restricted to paths
    /// inside `ξ`.
    pub fn restricted_gamma(&self, sites: &[usize]) -> DMatrix<f64> {
        let p = DMatrix::from_fn(sites.len(), sites.len(), |i, j| {
            self.p_hat[(sites[i], sites[j])]
        });
        resolvent_minus_identity(&p, self.r)
    }

    pub fn stochastic_defect(&self) -> f64 {
        self.p_hat
            .row_iter()
            .map(|r| (r.sum() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub subset: Vec<usize>,
    pub x: usize,
    pub y: usize,
    pub inverse_entry: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lemma41Report {
    pub max_ratio: f64,
    pub witness: Option<Witness>,
    /// Largest ratio among diagonal entries.
    pub max_diagonal_ratio: f64,
    pub subsets_checked: usize,
    pub exhaustive: bool,
}

/// Checks `|A(ξ, ξ)^{-1}(x, y)| <= M(x, y)` over all nonempty subsets
/// (`|E| <= 14`) or over random subsets.
pub fn lemma41_bruteforce(kernel: &Kernel, mode: Option<CheckMode>) -> Result<Lemma41Report> {
    let data = GammaData::new(kernel)?;
    let n = kernel.n_sites();
    let mode = mode.unwrap_or(if n <= LEMMA_EXHAUSTIVE_LIMIT {
        CheckMode::Exhaustive
    } else {
        CheckMode::Sampled {
            samples: SAMPLED_SUBSETS,
            seed: 0,
        }
    });
    let subsets: Vec<Vec<usize>> = match mode {
        CheckMode::Exhaustive => {
            if n > LEMMA_EXHAUSTIVE_LIMIT {
                return Err(Error::EnumerationTooLarge {
                    n_sites: n,
                    limit: LEMMA_EXHAUSTIVE_LIMIT,
                });
            }
            (1..1u64 << n).map(linalg::mask_sites).collect()
        }
        CheckMode::Sampled { samples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..samples)
                .map(|_| (0..n).filter(|_| rng.random::<bool>()).collect::<Vec<_>>())
                .filter(|s: &Vec<usize>| !s.is_empty())
                .collect()
        }
    };
    let exhaustive = matches!(mode, CheckMode::Exhaustive);
    let results: Vec<(f64, f64, Option<Witness>)> = subsets
        .par_iter()
        .map(|sites| check_subset(kernel, &data, sites))
        .collect::<Result<_>>()?;
    let mut max_ratio = 0.0f64;
    let mut max_diagonal_ratio = 0.0f64;
    let mut witness = None;
    for (ratio, diag, w) in results {
        max_diagonal_ratio = max_diagonal_ratio.max(diag);
        if ratio > max_ratio || witness.is_none() {
            max_ratio = ratio;
            witness = w;
        }
    }
    Ok(Lemma41Report {
        max_ratio,
        witness,
        max_diagonal_ratio,
        subsets_checked: subsets.len(),
        exhaustive,
    })
}

fn check_subset(
    kernel: &Kernel,
    data: &GammaData,
    sites: &[usize],
) -> Result<(f64, f64, Option<Witness>)> {
    let sub = linalg::principal(kernel.a(), sites);
    let inv = linalg::cholesky(&sub)
        .ok_or(Error::NumericallySingular { value: 0.0 })?
        .inverse();
    let mut best = (0.0f64, None);
    let mut diag = 0.0f64;
    for (i, &x) in sites.iter().enumerate() {
        for (j, &y) in sites.iter().enumerate() {
            let entry = inv[(i, j)].norm();
            let bound = data.m_bound[(x, y)];
            let ratio = if bound > 0.0 {
                entry / bound
            } else if entry > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            if i == j {
                diag = diag.max(ratio);
            }
            if ratio > best.0 || best.1.is_none() {
                best = (
                    ratio,
                    Some(Witness {
                        subset: sites.to_vec(),
                        x,
                        y,
                        inverse_entry: entry,
                        bound,
                    }),
                );
            }
        }
    }
    Ok((best.0, diag, best.1))
}

/// Largest violation of `Γ_ξ <= Γ(ξ, ξ)` over the given subsets; the
/// result is at most zero when path counts grow with `ξ`.
pub fn restricted_monotonicity(data: &GammaData, subsets: &[Vec<usize>]) -> f64 {
    subsets
        .iter()
        .map(|s| {
            let g = data.restricted_gamma(s);
            let mut worst = f64::NEG_INFINITY;
            for (i, &x) in s.iter().enumerate() {
                for (j, &y) in s.iter().enumerate() {
                    worst = worst.max(g[(i, j)] - data.gamma[(x, y)]);
                }
            }
            worst
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn a2_gamma_values() {
        let d = GammaData::new(&fixtures::a2()).unwrap();
        assert!((d.r - 0.25).abs() < 1e-15);
        assert!((d.gamma[(0, 1)] - 0.25 / 0.9375).abs() < 1e-15);
        assert!((d.m_bound[(0, 1)] - 0.177778).abs() < 1e-6);
        assert!((d.m_bound[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        assert!(d.stochastic_defect() < 1e-15);
        let rep = lemma41_bruteforce(&fixtures::a2(), None).unwrap();
        assert_eq!(rep.subsets_checked, 3);
        assert!(rep.max_ratio <= 1.0);
    }

    #[test]
    fn diagonal_kernel_is_tight() {
        let rep = lemma41_bruteforce(&fixtures::diagonal(5, 2.0), None).unwrap();
        assert!((rep.max_ratio - 1.0).abs() < 1e-15);
        assert!((rep.max_diagonal_ratio - 1.0).abs() < 1e-15);
        let rep =
            lemma41_bruteforce(&fixtures::diagonal(4, 2.0).with_q(0.5).unwrap(), None).unwrap();
        assert!((rep.max_ratio - 1.0).abs() < 1e-15);
    }

    #[test]
    fn series_and_resolvent_agree() {
        let d = GammaData::new(&fixtures::random_dominant(7, 0.4, 0.2, 9)).unwrap();
        for terms in [5, 20, 80] {
            let err = (&d.gamma - d.series(terms)).amax();
            assert!(err <= d.tail_bound(terms) + 1e-14);
        }
        assert!(d.gamma.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn restricted_series_is_dominated() {
        let d = GammaData::new(&fixtures::random_dominant(6, 0.4, 0.1, 2)).unwrap();
        let subsets: Vec<Vec<usize>> = (1..64u64).map(linalg::mask_sites).collect();
        assert!(restricted_monotonicity(&d, &subsets) <= 1e-15);
    }

    #[test]
    fn violated_assumption_is_reported() {
        let k = fixtures::random_positive_definite(4, 0.05, 1);
        if k.lambda_margin() <= 0.0 {
            assert!(matches!(
                lemma41_bruteforce(&k, None),
                Err(Error::AssumptionAViolated { .. })
            ));
        }
    }

    #[test]
    fn torus_and_complex_kernels() {
        let rep =
            lemma41_bruteforce(&fixtures::torus_nearest_neighbor(&[10], 1.0, 0.2), None).unwrap();
        assert_eq!(rep.subsets_checked, 1023);
        assert!(rep.max_ratio <= 1.0 + 1e-9);
        let rep =
            lemma41_bruteforce(&fixtures::random_complex_dominant(6, 0.3, 0.2, 3), None).unwrap();
        assert!(rep.max_ratio <= 1.0 + 1e-9);
    }
}
