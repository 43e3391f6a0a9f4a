//! The determinantal point process with marginal kernel `K = A (I + A)^{-1}`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::configuration::Configuration;
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::linalg::{self, CMatrix, C64};
use crate::papangelou::{self, AlphaTable};

/// Largest site set on which the DLR identity is evaluated by full
/// enumeration, and largest window for the inner sum.
pub const DLR_EXACT_LIMIT: usize = 12;

/// Largest site set for [`DppMeasure::full_distribution`].
pub const FULL_DISTRIBUTION_LIMIT: usize = 20;

#[derive(Debug, Clone)]
pub struct DppMeasure {
    kernel: Kernel,
    eigenvalues: Vec<f64>,
    eigenvectors: CMatrix,
    log_det_complement: f64,
}

impl DppMeasure {
    pub fn new(kernel: &Kernel) -> Self {
        let (mut eigenvalues, eigenvectors) = linalg::hermitian_eigen(kernel.k());
        // K = A (I + A)^{-1} has spectrum in (0, 1); clip round-off only
        for v in &mut eigenvalues {
            *v = v.clamp(0.0, 1.0 - f64::EPSILON);
        }
        let log_det_complement = eigenvalues.iter().map(|v| (1.0 - v).ln()).sum();
        DppMeasure {
            kernel: kernel.clone(),
            eigenvalues,
            eigenvectors,
            log_det_complement,
        }
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn n_sites(&self) -> usize {
        self.kernel.n_sites()
    }

    /// Eigenvalues of `K`, ascending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `log det (I - K)`.
    pub fn log_det_complement(&self) -> f64 {
        self.log_det_complement
    }

    /// Expected number of particles, `tr K`.
    pub fn expected_size(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// `ρ(x_1, .., x_m) = det K(x_i, x_j)`.
    pub fn correlation(&self, sites: &[usize]) -> Result<f64> {
        let n = self.n_sites();
        let mut seen = vec![false; n];
        for &x in sites {
            if x >= n {
                return Err(Error::SiteOutOfRange {
                    site: x,
                    n_sites: n,
                });
            }
            if std::mem::replace(&mut seen[x], true) {
                return Err(Error::DuplicateSites(x));
            }
        }
        if sites.is_empty() {
            return Err(Error::validation("sites", "must be nonempty"));
        }
        Ok(linalg::det_real(&linalg::principal(self.kernel.k(), sites)))
    }

    pub fn window(&self, window: &[usize]) -> Result<WindowMarginals> {
        WindowMarginals::new(&self.kernel, window)
    }

    /// `μ_Λ(ζ) = det(I_Λ - K_Λ) det A_[Λ](ζ, ζ)`; the determinant over the
    /// empty index set is 1.
    pub fn marginal_probability(&self, window: &[usize], zeta: &Configuration) -> Result<f64> {
        self.window(window)?.probability(zeta)
    }

    /// `μ(ξ)` for every configuration, indexed by bit mask.
    pub fn full_distribution(&self) -> Result<Vec<f64>> {
        let n = self.n_sites();
        if n > FULL_DISTRIBUTION_LIMIT {
            return Err(Error::EnumerationTooLarge {
                n_sites: n,
                limit: FULL_DISTRIBUTION_LIMIT,
            });
        }
        let all: Vec<usize> = (0..n).collect();
        let w = self.window(&all)?;
        (0..1u64 << n)
            .map(|mask| w.probability_of_sites(&linalg::mask_sites(mask)))
            .collect()
    }

    pub fn sample(&self, seed: u64) -> Configuration {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng)
    }

    /// Exact spectral sampler: keep eigenvector `i` with probability
    /// `λ_i`, then draw the projection DPP spanned by the kept vectors one
    /// site at a time, projecting out each chosen site.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        let n = self.n_sites();
        let mut basis: Vec<Vec<C64>> = Vec::new();
        for (i, &lam) in self.eigenvalues.iter().enumerate() {
            if rng.random::<f64>() < lam {
                basis.push(self.eigenvectors.column(i).iter().copied().collect());
            }
        }
        let mut out = Configuration::empty(n);
        while !basis.is_empty() {
            let weights: Vec<f64> = (0..n)
                .map(|j| basis.iter().map(|v| v[j].norm_sqr()).sum())
                .collect();
            let total: f64 = weights.iter().sum();
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (j, &w) in weights.iter().enumerate() {
                if w <= 0.0 || out.contains(j) {
                    continue;
                }
                acc += w;
                chosen = Some(j);
                if acc > target {
                    break;
                }
            }
            let Some(j) = chosen else { break };
            out.insert(j).expect("chosen site is empty");

            let pivot = (0..basis.len())
                .max_by(|&a, &b| basis[a][j].norm().total_cmp(&basis[b][j].norm()))
                .expect("basis nonempty");
            let pv = basis.swap_remove(pivot);
            for v in &mut basis {
                let factor = v[j] / pv[j];
                for (vi, pi) in v.iter_mut().zip(&pv) {
                    *vi -= factor * pi;
                }
            }
            orthonormalize(&mut basis);
        }
        out
    }

    /// DLR check on the window `Λ` for the observable `f`: compares
    /// `∫ f dμ` against `∫ μ(dξ) Z_Λ(ξ)^{-1} Σ_ζ α(ζ; ξ_Λᶜ) f(ζ ξ_Λᶜ)`.
    pub fn dlr_residual<F>(&self, window: &[usize], f: F, mode: DlrMode) -> Result<DlrResult>
    where
        F: Fn(&Configuration) -> f64,
    {
        let n = self.n_sites();
        if window.len() > DLR_EXACT_LIMIT {
            return Err(Error::WindowTooLarge {
                size: window.len(),
                limit: DLR_EXACT_LIMIT,
            });
        }
        for &x in window {
            if x >= n {
                return Err(Error::SiteOutOfRange {
                    site: x,
                    n_sites: n,
                });
            }
        }
        let mut in_window = vec![false; n];
        window.iter().for_each(|&x| in_window[x] = true);
        match mode {
            DlrMode::Exact => {
                if n > DLR_EXACT_LIMIT {
                    return Err(Error::WindowTooLarge {
                        size: n,
                        limit: DLR_EXACT_LIMIT,
                    });
                }
                let mu = self.full_distribution()?;
                let table = AlphaTable::build(&self.kernel)?;
                let window_mask: u64 = window.iter().map(|&x| 1u64 << x).sum();
                let mut lhs = 0.0;
                let mut rhs = 0.0;
                let mut cache = std::collections::HashMap::new();
                for (mask, &p) in mu.iter().enumerate() {
                    let mask = mask as u64;
                    let xi = Configuration::from_mask(n, mask);
                    lhs += p * f(&xi);
                    let outside = mask & !window_mask;
                    let g = *cache.entry(outside).or_insert_with(|| {
                        let (num, z) = inner_sum(window, outside, n, |x, m| table.get(x, m), &f);
                        num / z
                    });
                    rhs += p * g;
                }
                Ok(DlrResult {
                    lhs,
                    rhs,
                    residual: (lhs - rhs).abs(),
                    standard_error: None,
                })
            }
            DlrMode::Sampled { samples, seed } => {
                if samples < 2 {
                    return Err(Error::InsufficientData("need at least 2 samples".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (mut sum, mut sum_sq, mut lhs, mut rhs) = (0.0, 0.0, 0.0, 0.0);
                for _ in 0..samples {
                    let xi = self.sample_with(&mut rng);
                    let fv = f(&xi);
                    let outside: Vec<usize> = xi.iter().filter(|&x| !in_window[x]).collect();
                    let g = sampled_inner(&self.kernel, window, &outside, &f)?;
                    lhs += fv;
                    rhs += g;
                    sum += fv - g;
                    sum_sq += (fv - g) * (fv - g);
                }
                let m = samples as f64;
                let mean = sum / m;
                let var = (sum_sq - m * mean * mean) / (m - 1.0);
                Ok(DlrResult {
                    lhs: lhs / m,
                    rhs: rhs / m,
                    residual: mean.abs(),
                    standard_error: Some((var.max(0.0) / m).sqrt()),
                })
            }
        }
    }
}

/// Pearson goodness-of-fit of the sampler against the exact law.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChiSquareReport {
    pub samples: usize,
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    /// States are merged, smallest expected count first, until every bin
    /// expects at least 5 observations.
    pub bins: usize,
}

impl DppMeasure {
    /// Draws `samples` configurations and compares their counts with `μ`.
    pub fn sampler_goodness_of_fit(&self, samples: usize, seed: u64) -> Result<ChiSquareReport> {
        let mu = self.full_distribution()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = vec![0usize; mu.len()];
        for _ in 0..samples {
            counts[self.sample_with(&mut rng).to_mask() as usize] += 1;
        }
        chi_square(&counts, &mu)
    }
}

/// Pearson statistic of `counts` against probabilities `p`, merging sparse
/// bins.
pub fn chi_square(counts: &[usize], p: &[f64]) -> Result<ChiSquareReport> {
    let total: usize = counts.iter().sum();
    let n = total as f64;
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut current = (0.0, 0.0);
    for i in order {
        current.0 += n * p[i];
        current.1 += counts[i] as f64;
        if current.0 >= 5.0 {
            bins.push(current);
            current = (0.0, 0.0);
        }
    }
    if current.0 > 0.0 || current.1 > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += current.0;
                last.1 += current.1;
            }
            None => bins.push(current),
        }
    }
    if bins.len() < 2 {
        return Err(Error::InsufficientData(
            "fewer than two bins with expected count >= 5".into(),
        ));
    }
    let statistic: f64 = bins.iter().map(|(e, o)| (o - e) * (o - e) / e).sum();
    let dof = bins.len() - 1;
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::InsufficientData(e.to_string()))?;
    Ok(ChiSquareReport {
        samples: total,
        statistic,
        degrees_of_freedom: dof,
        p_value: 1.0 - dist.cdf(statistic),
        bins: bins.len(),
    })
}

fn orthonormalize(basis: &mut [Vec<C64>]) {
    for i in 0..basis.len() {
        for k in 0..i {
            let (head, tail) = basis.split_at_mut(i);
            let proj: C64 = head[k]
                .iter()
                .zip(tail[0].iter())
                .map(|(a, b)| a.conj() * b)
                .sum();
            for (v, u) in tail[0].iter_mut().zip(&head[k]) {
                *v -= proj * u;
            }
        }
        let norm = basis[i].iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        for v in basis[i].iter_mut() {
            *v /= norm;
        }
    }
}

/// `(Σ_ζ α(ζ; out) f(ζ out), Z)` with the product intensity built in
/// ascending site order.
fn inner_sum<A, F>(window: &[usize], outside: u64, n: usize, alpha: A, f: &F) -> (f64, f64)
where
    A: Fn(usize, u64) -> f64,
    F: Fn(&Configuration) -> f64,
{
    let mut sorted = window.to_vec();
    sorted.sort_unstable();
    let (mut num, mut z) = (0.0, 0.0);
    for sub in 0..(1u64 << sorted.len()) {
        let mut weight = 1.0;
        let mut current = outside;
        for (i, &x) in sorted.iter().enumerate() {
            if sub >> i & 1 == 1 {
                weight *= alpha(x, current);
                current |= 1 << x;
            }
        }
        z += weight;
        num += weight * f(&Configuration::from_mask(n, current));
    }
    (num, z)
}

fn sampled_inner<F>(kernel: &Kernel, window: &[usize], outside: &[usize], f: &F) -> Result<f64>
where
    F: Fn(&Configuration) -> f64,
{
    let n = kernel.n_sites();
    let mut sorted = window.to_vec();
    sorted.sort_unstable();
    let base = Configuration::from_sites(n, outside)?;
    let (mut num, mut z) = (0.0, 0.0);
    for sub in 0..(1u64 << sorted.len()) {
        let mut weight = 1.0;
        let mut current = base.clone();
        for (i, &x) in sorted.iter().enumerate() {
            if sub >> i & 1 == 1 {
                weight *= papangelou::alpha(kernel, x, &current)?;
                current.insert(x)?;
            }
        }
        z += weight;
        num += weight * f(&current);
    }
    Ok(num / z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DlrMode {
    Exact,
    Sampled { samples: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DlrResult {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub standard_error: Option<f64>,
}

/// Cached `A_[Λ]` and `det(I_Λ - K_Λ)` for repeated marginal queries on one
/// window.
#[derive(Debug, Clone)]
pub struct WindowMarginals {
    window: Vec<usize>,
    local: Vec<usize>,
    bracket: CMatrix,
    det_complement: f64,
}

impl WindowMarginals {
    pub fn new(kernel: &Kernel, window: &[usize]) -> Result<Self> {
        let n = kernel.n_sites();
        let mut local = vec![usize::MAX; n];
        for (i, &x) in window.iter().enumerate() {
            if x >= n {
                return Err(Error::SiteOutOfRange {
                    site: x,
                    n_sites: n,
                });
            }
            if local[x] != usize::MAX {
                return Err(Error::DuplicateSites(x));
            }
            local[x] = i;
        }
        let bracket = kernel.restrict_a_bracket(window)?;
        let m = window.len();
        let i_minus_k = CMatrix::identity(m, m) - linalg::principal(kernel.k(), window);
        let det_complement = linalg::logdet_hpd(&i_minus_k)
            .ok_or(Error::SingularRestriction {
                condition: f64::INFINITY,
            })?
            .exp();
        Ok(WindowMarginals {
            window: window.to_vec(),
            local,
            bracket,
            det_complement,
        })
    }

    pub fn window(&self) -> &[usize] {
        &self.window
    }

    pub fn probability(&self, zeta: &Configuration) -> Result<f64> {
        if zeta.n_sites() != self.local.len() {
            return Err(Error::DimensionMismatch {
                expected: self.local.len(),
                found: zeta.n_sites(),
            });
        }
        self.probability_of_sites(&zeta.sites())
    }

    fn probability_of_sites(&self, sites: &[usize]) -> Result<f64> {
        let mut idx = Vec::with_capacity(sites.len());
        for &x in sites {
            match self.local.get(x) {
                Some(&i) if i != usize::MAX => idx.push(i),
                _ => return Err(Error::ConfigurationNotInWindow),
            }
        }
        let det = linalg::det_real(&linalg::principal(&self.bracket, &idx));
        Ok(self.det_complement * det.max(0.0))
    }

    /// `Σ_{ζ ⊆ Λ} μ_Λ(ζ)`, enumerating all `2^|Λ|` sub-configurations.
    pub fn total_mass(&self) -> Result<f64> {
        let m = self.window.len();
        if m > FULL_DISTRIBUTION_LIMIT {
            return Err(Error::EnumerationTooLarge {
                n_sites: m,
                limit: FULL_DISTRIBUTION_LIMIT,
            });
        }
        let mut total = 0.0;
        for sub in 0..(1u64 << m) {
            let sites: Vec<usize> = linalg::mask_sites(sub)
                .iter()
                .map(|&i| self.window[i])
                .collect();
            total += self.probability_of_sites(&sites)?;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::linalg::c;

    fn cfg(n: usize, s: &[usize]) -> Configuration {
        Configuration::from_sites(n, s).unwrap()
    }

    #[test]
    fn correlations_of_worked_examples() {
        let half = DppMeasure::new(&fixtures::diagonal(3, 1.0));
        assert!((half.correlation(&[1]).unwrap() - 0.5).abs() < 1e-15);
        assert!((half.correlation(&[0, 2]).unwrap() - 0.25).abs() < 1e-15);
        let m = DppMeasure::new(&fixtures::a2());
        assert!((m.correlation(&[0]).unwrap() - 23.0 / 35.0).abs() < 1e-14);
        assert!((m.correlation(&[0, 1]).unwrap() - 525.0 / 1225.0).abs() < 1e-14);
        assert_eq!(m.correlation(&[0, 0]), Err(Error::DuplicateSites(0)));
    }

    #[test]
    fn two_site_marginals() {
        let m = DppMeasure::new(&fixtures::a2());
        let expected = [1.0 / 8.75, 2.0 / 8.75, 2.0 / 8.75, 3.75 / 8.75];
        let dist = m.full_distribution().unwrap();
        for (p, e) in dist.iter().zip(expected) {
            assert!((p - e).abs() < 1e-14);
        }
        assert!(
            (m.marginal_probability(&[0, 1], &cfg(2, &[0])).unwrap() - 2.0 / 8.75).abs() < 1e-14
        );
        assert_eq!(
            m.marginal_probability(&[0], &cfg(2, &[1])),
            Err(Error::ConfigurationNotInWindow)
        );
        // one-site window: P(0 occupied) = K(0,0)
        assert!((m.marginal_probability(&[0], &cfg(2, &[0])).unwrap() - 23.0 / 35.0).abs() < 1e-13);
    }

    #[test]
    fn bernoulli_product_marginals() {
        // K = p I  <=>  A = p/(1-p) I
        let p = 0.3;
        let m = DppMeasure::new(&fixtures::diagonal(5, p / (1.0 - p)));
        let window = [0, 2, 3, 4];
        let w = m.window(&window).unwrap();
        for sub in 0..16u64 {
            let sites: Vec<usize> = linalg::mask_sites(sub).iter().map(|&i| window[i]).collect();
            let k = sites.len() as i32;
            let expected = p.powi(k) * (1.0 - p).powi(4 - k);
            assert!((w.probability(&cfg(5, &sites)).unwrap() - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn window_normalization_and_consistency() {
        let k = fixtures::random_dominant(6, 0.3, 0.3, 21);
        let m = DppMeasure::new(&k);
        let all: Vec<usize> = (0..6).collect();
        assert!((m.window(&all).unwrap().total_mass().unwrap() - 1.0).abs() < 1e-10);
        let w = m.window(&[1, 3, 4]).unwrap();
        assert!((w.total_mass().unwrap() - 1.0).abs() < 1e-10);
        // Σ_{ζ ∋ 3} μ_Λ(ζ) = K(3,3)
        let mut p3 = 0.0;
        for sub in 0..8u64 {
            let sites: Vec<usize> = linalg::mask_sites(sub)
                .iter()
                .map(|&i| [1, 3, 4][i])
                .collect();
            if sites.contains(&3) {
                p3 += w.probability(&cfg(6, &sites)).unwrap();
            }
        }
        assert!((p3 - k.k()[(3, 3)].re).abs() < 1e-10);
    }

    #[test]
    fn chi_square_small_kernel() {
        let m = DppMeasure::new(&fixtures::random_complex_dominant(4, 0.3, 0.3, 2));
        let r = m.sampler_goodness_of_fit(20_000, 9).unwrap();
        assert_eq!(r.samples, 20_000);
        assert!(r.p_value > 0.001, "{r:?}");
        // a wrong law is rejected
        let wrong = DppMeasure::new(&fixtures::diagonal(4, 1.0))
            .full_distribution()
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = vec![0; 16];
        for _ in 0..20_000 {
            counts[m.sample_with(&mut rng).to_mask() as usize] += 1;
        }
        assert!(chi_square(&counts, &wrong).unwrap().p_value < 1e-6);
    }

    #[test]
    fn zero_kernel_limit_samples_empty() {
        // K ≈ 0 for tiny A: every eigenvalue is below 1e-12
        let m = DppMeasure::new(&fixtures::diagonal(4, 1e-13));
        for seed in 0..50 {
            assert!(m.sample(seed).is_empty());
        }
    }

    #[test]
    fn sampler_is_deterministic_per_seed() {
        let m = DppMeasure::new(&fixtures::random_complex_dominant(8, 0.2, 0.3, 1));
        assert_eq!(m.sample(42), m.sample(42));
    }

    #[test]
    fn dlr_exact_examples() {
        let m = DppMeasure::new(&fixtures::a2());
        let r = m.dlr_residual(&[0], |_| 1.0, DlrMode::Exact).unwrap();
        assert_eq!(r.residual, 0.0);
        let r = m
            .dlr_residual(
                &[0],
                |xi| if xi.contains(0) { 1.0 } else { 0.0 },
                DlrMode::Exact,
            )
            .unwrap();
        assert!(r.residual < 1e-12);

        let m8 = DppMeasure::new(&fixtures::torus_nearest_neighbor(&[8], 1.0, 0.2));
        let window = [2, 3, 6];
        let r = m8
            .dlr_residual(
                &window,
                |xi| window.iter().filter(|&&x| xi.contains(x)).count() as f64,
                DlrMode::Exact,
            )
            .unwrap();
        assert!(r.residual < 1e-10, "{r:?}");
    }

    #[test]
    fn dlr_sampled_mode_reports_error() {
        let m = DppMeasure::new(&fixtures::torus_nearest_neighbor(&[14], 1.0, 0.2));
        assert!(matches!(
            m.dlr_residual(&[0], |_| 1.0, DlrMode::Exact),
            Err(Error::WindowTooLarge { .. })
        ));
        let r = m
            .dlr_residual(
                &[0, 1],
                |xi| xi.len() as f64,
                DlrMode::Sampled {
                    samples: 2000,
                    seed: 3,
                },
            )
            .unwrap();
        let se = r.standard_error.unwrap();
        assert!(se > 0.0 && r.residual < 4.0 * se, "{r:?}");
    }

    #[test]
    fn intensity_is_ratio_of_full_probabilities() {
        let k = fixtures::random_complex_dominant(5, 0.2, 0.2, 17);
        let m = DppMeasure::new(&k);
        let mu = m.full_distribution().unwrap();
        for mask in 0..32u64 {
            let xi = Configuration::from_mask(5, mask);
            for x in xi.holes() {
                let ratio = mu[(mask | 1 << x) as usize] / mu[mask as usize];
                let a = papangelou::alpha(&k, x, &xi).unwrap();
                assert!((ratio - a).abs() <= 1e-10 * a);
            }
        }
    }

    #[test]
    fn negative_pair_correlation() {
        let m = DppMeasure::new(&fixtures::random_complex_dominant(6, 0.3, 0.2, 5));
        for x in 0..6 {
            for y in (x + 1)..6 {
                let pair = m.correlation(&[x, y]).unwrap();
                let prod = m.correlation(&[x]).unwrap() * m.correlation(&[y]).unwrap();
                assert!(pair <= prod + 1e-15);
            }
        }
        assert!(
            (m.expected_size() - (0..6).map(|x| m.kernel().k()[(x, x)].re).sum::<f64>()).abs()
                < 1e-12
        );
        let _ = c(0.0);
    }
}
