use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{build_kernel, Entry, Kernel, KernelSpec, SiteSpace};
use crate::rates::{Dynamics, RateSpec, WeightSpec};
use crate::simulate::{InitialState, SimConfig, DEFAULT_BATCHES};

/// A complete experiment description, read from TOML. Unknown keys are
/// rejected at every level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kernel: KernelSection,
    #[serde(default)]
    pub rates: RatesSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Either `n_sites` (plain site set) or `torus` (side lengths) must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_sites: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub torus: Option<Vec<usize>>,
    /// Overrides `q(A)` upward for the inverse bounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    pub spec: KernelSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSection {
    #[serde(default)]
    pub t: f64,
    #[serde(default)]
    pub weights: WeightSpec,
}

impl Default for RatesSection {
    fn default() -> Self {
        RatesSection {
            t: 0.0,
            weights: WeightSpec::NearestNeighbor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub mode: Dynamics,
    pub horizon: f64,
    pub burn_in: f64,
    pub thinning: f64,
    pub seed: u64,
    pub initial: InitialState,
    pub replicas: usize,
    pub batches: usize,
    /// Site tuples whose correlations are estimated; empty means every
    /// single site.
    pub observables: Vec<Vec<usize>>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            mode: Dynamics::Glauber,
            horizon: 1000.0,
            burn_in: 100.0,
            thinning: 1.0,
            seed: 0,
            initial: InitialState::Empty,
            replicas: 1,
            batches: DEFAULT_BATCHES,
            observables: Vec::new(),
        }
    }
}

impl RunSection {
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            horizon: self.horizon,
            burn_in: self.burn_in,
            thinning: self.thinning,
            seed: self.seed,
            initial: self.initial.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum VerifySuite {
    Intensity,
    DetailedBalance,
    Invariance,
    Dlr,
    InverseBounds,
    Constants,
    Contraction,
    Sampler,
}

impl VerifySuite {
    pub const ALL: [VerifySuite; 8] = [
        VerifySuite::Intensity,
        VerifySuite::DetailedBalance,
        VerifySuite::Invariance,
        VerifySuite::Dlr,
        VerifySuite::InverseBounds,
        VerifySuite::Constants,
        VerifySuite::Contraction,
        VerifySuite::Sampler,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Multiplied by `‖A‖`.
    pub detailed_balance: f64,
    pub invariance: f64,
    pub duality: f64,
    pub difference: f64,
    pub inverse_bound: f64,
    pub gap: f64,
    pub contraction: f64,
    pub dlr: f64,
    /// Significance level of the sampler's chi-square test.
    pub chi_square_level: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            detailed_balance: 1e-12,
            invariance: 1e-11,
            duality: 1e-8,
            difference: 1e-9,
            inverse_bound: 1e-9,
            gap: 1e-9,
            contraction: 1e-9,
            dlr: 1e-10,
            chi_square_level: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub suites: Vec<VerifySuite>,
    pub tolerances: Tolerances,
    pub sampler_samples: usize,
    pub seed: u64,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            suites: VerifySuite::ALL.to_vec(),
            tolerances: Tolerances::default(),
            sampler_samples: 20_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Reports are also written here, one file per subcommand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    /// Event log CSV of `simulate`, relative to `dir` when that is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_log: Option<String>,
}

impl ExperimentConfig {
    /// The two-site kernel `[[2, 0.5], [0.5, 2]]` with every default.
    pub fn a2() -> Self {
        let row = |a: f64, b: f64| vec![Entry::Real(a), Entry::Real(b)];
        ExperimentConfig {
            kernel: KernelSection {
                n_sites: Some(2),
                torus: None,
                q: None,
                spec: KernelSpec::Explicit {
                    matrix: vec![row(2.0, 0.5), row(0.5, 2.0)],
                },
            },
            rates: RatesSection::default(),
            run: RunSection::default(),
            verify: VerifySection::default(),
            output: OutputSection::default(),
        }
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse_str(&text).map_err(|e| match e {
            Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn space(&self) -> Result<SiteSpace> {
        match (&self.kernel.n_sites, &self.kernel.torus) {
            (Some(_), Some(_)) => Err(Error::validation(
                "kernel",
                "set either n_sites or torus, not both",
            )),
            (None, None) => Err(Error::validation(
                "kernel",
                "one of n_sites or torus is required",
            )),
            (Some(n), None) => SiteSpace::new(*n),
            (None, Some(sides)) => SiteSpace::torus(sides),
        }
    }

    pub fn build_kernel(&self) -> Result<Kernel> {
        let kernel = build_kernel(&self.kernel.spec, &self.space()?)?;
        match self.kernel.q {
            Some(q) => kernel.with_q(q),
            None => Ok(kernel),
        }
    }

    pub fn rate_spec(&self, space: &SiteSpace) -> Result<RateSpec> {
        RateSpec::from_weight_spec(&self.rates.weights, space, self.rates.t)
    }

    /// Observables to estimate: the configured tuples, or every site.
    pub fn observables(&self, n_sites: usize) -> Vec<Vec<usize>> {
        if self.run.observables.is_empty() {
            (0..n_sites).map(|x| vec![x]).collect()
        } else {
            self.run.observables.clone()
        }
    }

    /// Checks the whole configuration, including that the kernel, weights
    /// and observables agree on the site set.
    pub fn validate(&self) -> Result<()> {
        let kernel = self.build_kernel()?;
        self.rate_spec(kernel.space())?;
        self.run.sim_config().validate()?;
        if self.run.replicas == 0 {
            return Err(Error::validation("run.replicas", "must be at least 1"));
        }
        if self.run.batches < 2 {
            return Err(Error::validation("run.batches", "must be at least 2"));
        }
        let n = kernel.n_sites();
        for tuple in &self.run.observables {
            if tuple.is_empty() {
                return Err(Error::validation("run.observables", "empty site tuple"));
            }
            if let Some(&x) = tuple.iter().find(|&&x| x >= n) {
                return Err(Error::SiteOutOfRange {
                    site: x,
                    n_sites: n,
                });
            }
        }
        if let InitialState::Explicit(bits) = &self.run.initial {
            if bits.trim().len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: bits.trim().len(),
                });
            }
        }
        let level = self.verify.tolerances.chi_square_level;
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::validation(
                "verify.tolerances.chi_square_level",
                "must lie in (0,1)",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::parse_str(
            r#"
            [kernel]
            n_sites = 4
            spec = { kind = "scalar-diagonal", a = 1.0 }
            "#,
        )
        .unwrap();
        assert_eq!(cfg.rates.t, 0.0);
        assert_eq!(cfg.rates.weights, WeightSpec::NearestNeighbor);
        assert_eq!(cfg.run.seed, 0);
        assert_eq!(cfg.build_kernel().unwrap().n_sites(), 4);
    }

    #[test]
    fn t_out_of_range_is_rejected() {
        let err = ExperimentConfig::parse_str(
            r#"
            [kernel]
            n_sites = 4
            spec = { kind = "scalar-diagonal", a = 1.0 }
            [rates]
            t = 1.5
            "#,
        )
        .unwrap_err();
        assert_eq!(err, Error::validation("t", "t must lie in [0,1]"));
    }

    #[test]
    fn unknown_keys_and_bad_dimensions() {
        let unknown = ExperimentConfig::parse_str(
            r#"
            [kernel]
            n_sites = 2
            colour = "blue"
            spec = { kind = "scalar-diagonal", a = 1.0 }
            "#,
        );
        assert!(matches!(unknown, Err(Error::Parse(_))));
        let mismatch = ExperimentConfig::parse_str(
            r#"
            [kernel]
            n_sites = 3
            spec = { kind = "explicit", matrix = [[2.0, 0.5], [0.5, 2.0]] }
            "#,
        );
        assert!(matches!(mismatch, Err(Error::DimensionMismatch { .. })));
        let observable = ExperimentConfig::parse_str(
            r#"
            [kernel]
            n_sites = 2
            spec = { kind = "scalar-diagonal", a = 1.0 }
            [run]
            observables = [[0, 5]]
            "#,
        );
        assert!(matches!(observable, Err(Error::SiteOutOfRange { .. })));
    }

    #[test]
    fn round_trip() {
        let mut cfg = ExperimentConfig::a2();
        cfg.run.initial = InitialState::Explicit("10".into());
        cfg.run.observables = vec![vec![0], vec![0, 1]];
        cfg.rates.weights = WeightSpec::ExponentialDecay { rate: 0.5 };
        cfg.output.event_log = Some("events.csv".into());
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::parse_str(&text).unwrap(), cfg);

        let mut torus = cfg.clone();
        torus.kernel = KernelSection {
            n_sites: None,
            torus: Some(vec![3, 2]),
            q: Some(1.0),
            spec: KernelSpec::TorusConvolution {
                a: 2.0,
                coefficients: vec![0.1, 0.05],
                decay: None,
            },
        };
        torus.run.initial = InitialState::DppSample;
        torus.run.observables.clear();
        let text = torus.to_toml().unwrap();
        assert_eq!(ExperimentConfig::parse_str(&text).unwrap(), torus);
    }
}
