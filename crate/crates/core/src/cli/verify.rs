use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::config::{ExperimentConfig, VerifySuite};
use crate::configuration::Configuration;
use crate::dpp::{DlrMode, DppMeasure, DLR_EXACT_LIMIT};
use crate::error::Result;
use crate::exactcheck::{self, GENERATOR_LIMIT};
use crate::kernel::Kernel;
use crate::papangelou;
use crate::rates::{self, Dynamics, RateSpec, Rates};

const EXHAUSTIVE_INTENSITY_LIMIT: usize = 10;
const EXHAUSTIVE_DIFFERENCE_LIMIT: usize = 8;
const GAP_SITE_LIMIT: usize = 12;
const CONTRACTION_SITE_LIMIT: usize = 8;
const SAMPLER_SITE_LIMIT: usize = 10;
const SAMPLED_INSTANCES: usize = 2000;
const CONTRACTION_TIMES: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub check_name: String,
    pub status: Status,
    pub residual: Option<f64>,
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl CheckResult {
    fn compare(name: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        CheckResult {
            check_name: name.into(),
            status: if residual <= tolerance {
                Status::Pass
            } else {
                Status::Fail
            },
            residual: Some(residual),
            tolerance: Some(tolerance),
            detail: None,
        }
    }

    fn skipped(name: impl Into<String>, why: impl Into<String>) -> Self {
        CheckResult {
            check_name: name.into(),
            status: Status::Skipped,
            residual: None,
            tolerance: None,
            detail: Some(why.into()),
        }
    }

    fn failed(name: impl Into<String>, why: impl std::fmt::Display) -> Self {
        CheckResult {
            check_name: name.into(),
            status: Status::Fail,
            residual: None,
            tolerance: None,
            detail: Some(why.to_string()),
        }
    }

    fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

/// Runs the requested suites; errors inside a check are reported as a
/// failed check rather than aborting the run.
pub fn run_suites(
    cfg: &ExperimentConfig,
    kernel: &Kernel,
    suites: &[VerifySuite],
) -> Result<Vec<CheckResult>> {
    let spec = cfg.rate_spec(kernel.space())?;
    let mut out = Vec::new();
    for suite in VerifySuite::ALL.iter().filter(|s| suites.contains(s)) {
        let ctx = Context {
            cfg,
            kernel,
            spec: &spec,
        };
        match suite {
            VerifySuite::Intensity => ctx.intensity(&mut out),
            VerifySuite::DetailedBalance => ctx.detailed_balance(&mut out),
            VerifySuite::Invariance => ctx.invariance(&mut out),
            VerifySuite::Dlr => ctx.dlr(&mut out),
            VerifySuite::InverseBounds => ctx.inverse_bounds(&mut out),
            VerifySuite::Constants => ctx.constants(&mut out),
            VerifySuite::Contraction => ctx.contraction(&mut out),
            VerifySuite::Sampler => ctx.sampler(&mut out),
        }
    }
    Ok(out)
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    kernel: &'a Kernel,
    spec: &'a RateSpec,
}

fn guard(name: &str, out: &mut Vec<CheckResult>, f: impl FnOnce() -> Result<CheckResult>) {
    out.push(f().unwrap_or_else(|e| CheckResult::failed(name, e)));
}

fn random_configuration<R: Rng>(n: usize, rng: &mut R) -> Configuration {
    let p: f64 = rng.random();
    let sites: Vec<usize> = (0..n).filter(|_| rng.random::<f64>() < p).collect();
    Configuration::from_sites(n, &sites).expect("distinct sites")
}

impl Context<'_> {
    fn n(&self) -> usize {
        self.kernel.n_sites()
    }

    fn models(&self) -> [(Dynamics, Rates); 2] {
        [
            (Dynamics::Glauber, Rates::Glauber),
            (Dynamics::Kawasaki, Rates::Kawasaki(self.spec.clone())),
        ]
    }

    fn intensity(&self, out: &mut Vec<CheckResult>) {
        let k = self.kernel;
        let n = self.n();
        let tol = &self.cfg.verify.tolerances;
        let seed = self.cfg.verify.seed;
        guard("alpha-bounds", out, || {
            let r = papangelou::alpha_bounds_check(k, None)?;
            let below = if r.lambda > 0.0 {
                (r.lambda - r.min_alpha).max(0.0)
            } else {
                0.0
            };
            Ok(
                CheckResult::compare("alpha-bounds", below, 1e-10 * k.op_norm()).with_detail(
                    format!(
                        "{} intensities, min {} max {}",
                        r.checked, r.min_alpha, r.max_alpha
                    ),
                ),
            )
        });
        guard("duality", out, || {
            let mut worst = 0.0f64;
            let mut check = |x: usize, xi: &Configuration| -> Result<()> {
                let a = papangelou::alpha(k, x, xi)?;
                let b = papangelou::beta_variational(k, x, xi)?;
                worst = worst.max((a * b - 1.0).abs());
                Ok(())
            };
            if n <= EXHAUSTIVE_INTENSITY_LIMIT {
                for mask in 0..1u64 << n {
                    let xi = Configuration::from_mask(n, mask);
                    for x in xi.holes() {
                        check(x, &xi)?;
                    }
                }
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for _ in 0..SAMPLED_INSTANCES {
                    let xi = random_configuration(n, &mut rng);
                    let holes = xi.holes();
                    if !holes.is_empty() {
                        check(holes[rng.random_range(0..holes.len())], &xi)?;
                    }
                }
            }
            Ok(CheckResult::compare("duality", worst, tol.duality))
        });
        guard("difference-paths", out, || {
            let mut worst = 0.0f64;
            let mut check = |x: usize, u: usize, xi: &Configuration| -> Result<()> {
                let p = papangelou::alpha_difference_paths(k, x, u, xi)?;
                worst = worst.max(p.max_relative_deviation());
                Ok(())
            };
            if n < 2 {
                return Ok(CheckResult::skipped("difference-paths", "needs two sites"));
            }
            if n <= EXHAUSTIVE_DIFFERENCE_LIMIT {
                for mask in 0..1u64 << n {
                    let xi = Configuration::from_mask(n, mask);
                    let holes = xi.holes();
                    for &x in &holes {
                        for &u in &holes {
                            if x != u {
                                check(x, u, &xi)?;
                            }
                        }
                    }
                }
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for _ in 0..SAMPLED_INSTANCES {
                    let xi = random_configuration(n, &mut rng);
                    let holes = xi.holes();
                    if holes.len() >= 2 {
                        let x = holes[rng.random_range(0..holes.len())];
                        let mut u = x;
                        while u == x {
                            u = holes[rng.random_range(0..holes.len())];
                        }
                        check(x, u, &xi)?;
                    }
                }
            }
            Ok(CheckResult::compare(
                "difference-paths",
                worst,
                tol.difference,
            ))
        });
    }

    fn detailed_balance(&self, out: &mut Vec<CheckResult>) {
        let tol = self.cfg.verify.tolerances.detailed_balance * self.kernel.op_norm();
        for (d, model) in self.models() {
            let name = format!("detailed-balance-{d}");
            guard(&name.clone(), out, || {
                let r = rates::detailed_balance_residual(self.kernel, &model, None)?;
                Ok(CheckResult::compare(name, r.max_residual, tol)
                    .with_detail(format!("{} cases, exhaustive: {}", r.checked, r.exhaustive)))
            });
        }
    }

    fn invariance(&self, out: &mut Vec<CheckResult>) {
        let tol = self.cfg.verify.tolerances.invariance;
        for (d, model) in self.models() {
            let inv = format!("invariance-{d}");
            let rev = format!("reversibility-{d}");
            if self.n() > GENERATOR_LIMIT {
                out.push(CheckResult::skipped(
                    inv,
                    "site set too large for the full generator",
                ));
                out.push(CheckResult::skipped(
                    rev,
                    "site set too large for the full generator",
                ));
                continue;
            }
            match exactcheck::invariance_residual(self.kernel, &model) {
                Ok(r) => {
                    out.push(CheckResult::compare(inv, r.stationarity, tol));
                    out.push(CheckResult::compare(rev, r.reversibility, tol));
                }
                Err(e) => {
                    out.push(CheckResult::failed(inv, &e));
                    out.push(CheckResult::failed(rev, e));
                }
            }
        }
    }

    fn dlr(&self, out: &mut Vec<CheckResult>) {
        let n = self.n();
        let window: Vec<usize> = (0..n.min(3)).collect();
        let w = window.clone();
        // occupancy of the window weighted by site, plus an outside site
        let f = move |xi: &Configuration| -> f64 {
            let inside: f64 = w
                .iter()
                .map(|&x| if xi.contains(x) { 1.0 + x as f64 } else { 0.0 })
                .sum();
            let outside = if n > w.len() && xi.contains(n - 1) {
                0.5
            } else {
                0.0
            };
            inside * (1.0 + outside)
        };
        guard("dlr", out, || {
            let measure = DppMeasure::new(self.kernel);
            if n <= DLR_EXACT_LIMIT {
                let r = measure.dlr_residual(&window, f, DlrMode::Exact)?;
                Ok(CheckResult::compare(
                    "dlr",
                    r.residual,
                    self.cfg.verify.tolerances.dlr,
                ))
            } else {
                let mode = DlrMode::Sampled {
                    samples: SAMPLED_INSTANCES,
                    seed: self.cfg.verify.seed,
                };
                let r = measure.dlr_residual(&window, f, mode)?;
                let se = r.standard_error.unwrap_or(0.0);
                Ok(CheckResult::compare("dlr", r.residual, 4.0 * se)
                    .with_detail("sampled; tolerance is 4 standard errors"))
            }
        });
        guard("marginal-normalization", out, || {
            let measure = DppMeasure::new(self.kernel);
            let w = measure.window(&window)?;
            Ok(CheckResult::compare(
                "marginal-normalization",
                (w.total_mass()? - 1.0).abs(),
                self.cfg.verify.tolerances.dlr,
            ))
        });
    }

    fn inverse_bounds(&self, out: &mut Vec<CheckResult>) {
        let tol = self.cfg.verify.tolerances.inverse_bound;
        let a = self.kernel.check_assumption_a();
        if !a.holds {
            out.push(CheckResult::skipped(
                "inverse-bounds",
                format!("kernel is not diagonally dominant (margin {})", a.lambda),
            ));
            return;
        }
        guard("inverse-bounds", out, || {
            let r = exactcheck::lemma41_bruteforce(self.kernel, None)?;
            Ok(
                CheckResult::compare("inverse-bounds", (r.max_ratio - 1.0).max(0.0), tol)
                    .with_detail(format!(
                        "max ratio {} over {} subsets",
                        r.max_ratio, r.subsets_checked
                    )),
            )
        });
        if !self.kernel.is_real() {
            if self.n() > 7 {
                out.push(CheckResult::skipped(
                    "inverse-bounds-embedding",
                    "embedded site set too large",
                ));
                return;
            }
            guard("inverse-bounds-embedding", out, || {
                let r = exactcheck::embedding_check(self.kernel, None)?;
                let residual = (r.embedded.max_ratio - 1.0)
                    .max(r.max_recovered_ratio - 1.0)
                    .max(0.0)
                    .max(r.max_inverse_error);
                Ok(CheckResult::compare(
                    "inverse-bounds-embedding",
                    residual,
                    tol,
                ))
            });
        }
    }

    fn constants(&self, out: &mut Vec<CheckResult>) {
        let n = self.n();
        for (d, model) in self.models() {
            let lc = match rates::liggett_constants(self.kernel, &model, None) {
                Ok(lc) => lc,
                Err(e) => {
                    out.push(CheckResult::failed(format!("constants-{d}"), e));
                    continue;
                }
            };
            if d == Dynamics::Glauber {
                out.push(CheckResult::compare(
                    "epsilon-glauber",
                    (lc.epsilon - 1.0).abs(),
                    0.0,
                ));
            }
            if let (Some(m), Some(m1)) = (lc.m_interaction, lc.m1_exact) {
                out.push(CheckResult::compare(
                    format!("m-below-a0-m1-{d}"),
                    (m - lc.a0 * m1).max(0.0),
                    1e-12,
                ));
                out.push(CheckResult::compare(
                    format!("m1-below-bound-{d}"),
                    (m1 - lc.m1_bound).max(0.0),
                    1e-12,
                ));
            }
            let name = format!("spectral-gap-{d}");
            let margin = lc.epsilon - lc.m();
            if !(margin > 0.0) {
                out.push(CheckResult::skipped(
                    name,
                    format!("epsilon - M = {margin} is not positive"),
                ));
                continue;
            }
            if n > GAP_SITE_LIMIT {
                out.push(CheckResult::skipped(
                    name,
                    "site set too large for a dense eigensolve",
                ));
                continue;
            }
            let tol = self.cfg.verify.tolerances.gap;
            guard(&name.clone(), out, || {
                let gen = exactcheck::build_generator(self.kernel, &model)?;
                let mu = DppMeasure::new(self.kernel).full_distribution()?;
                let gap = exactcheck::spectral_gap(&gen, &mu)?.min_gap;
                Ok(CheckResult::compare(name, (margin - gap).max(0.0), tol)
                    .with_detail(format!("gap {gap}, epsilon - M = {margin}")))
            });
        }
    }

    fn contraction(&self, out: &mut Vec<CheckResult>) {
        let n = self.n();
        for (d, model) in self.models() {
            let name = format!("contraction-{d}");
            if n > CONTRACTION_SITE_LIMIT {
                out.push(CheckResult::skipped(
                    name,
                    "site set too large for a dense exponential",
                ));
                continue;
            }
            let tol = self.cfg.verify.tolerances.contraction;
            let seed = self.cfg.verify.seed;
            guard(&name.clone(), out, || {
                let lc = rates::liggett_constants(self.kernel, &model, None)?;
                let gen = exactcheck::build_generator(self.kernel, &model)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let fs: Vec<Vec<f64>> = (0..5)
                    .map(|_| {
                        (0..gen.n_states())
                            .map(|_| rng.random_range(-1.0..1.0))
                            .collect()
                    })
                    .collect();
                let r = exactcheck::contraction_check(&gen, &fs, &CONTRACTION_TIMES, &lc)?;
                let residual = r
                    .max_excess
                    .max(r.max_vector_excess.unwrap_or(0.0))
                    .max(0.0);
                Ok(CheckResult::compare(name, residual, tol))
            });
        }
    }

    fn sampler(&self, out: &mut Vec<CheckResult>) {
        if self.n() > SAMPLER_SITE_LIMIT {
            out.push(CheckResult::skipped(
                "sampler-chi-square",
                "site set too large to enumerate",
            ));
            return;
        }
        let level = self.cfg.verify.tolerances.chi_square_level;
        guard("sampler-chi-square", out, || {
            let r = DppMeasure::new(self.kernel)
                .sampler_goodness_of_fit(self.cfg.verify.sampler_samples, self.cfg.verify.seed)?;
            let critical = ChiSquared::new(r.degrees_of_freedom as f64)
                .map_err(|e| crate::Error::InsufficientData(e.to_string()))?
                .inverse_cdf(1.0 - level);
            Ok(
                CheckResult::compare("sampler-chi-square", r.statistic, critical)
                    .with_detail(format!("{} bins, p = {}", r.bins, r.p_value)),
            )
        });
    }
}
