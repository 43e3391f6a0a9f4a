//! Continuous-time simulation of the Glauber and Kawasaki dynamics by the
//! direct (Gillespie) method, and time-averaged correlation estimates.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::configuration::Configuration;
use crate::dpp::DppMeasure;
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::papangelou::{self, PapangelouEngine};
use crate::rates::{Dynamics, RateModel};

pub const DEFAULT_BATCHES: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitialState {
    #[default]
    Empty,
    Full,
    DppSample,
    /// Bitstring, `'1'` for an occupied site, site 0 first.
    Explicit(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub horizon: f64,
    pub burn_in: f64,
    /// Spacing of the snapshots returned by [`Trajectory::samples`].
    pub thinning: f64,
    pub seed: u64,
    pub initial: InitialState,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            horizon: 1000.0,
            burn_in: 100.0,
            thinning: 1.0,
            seed: 0,
            initial: InitialState::Empty,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.burn_in.is_finite() && self.burn_in >= 0.0) {
            return Err(Error::validation(
                "burn_in",
                "must be finite and nonnegative",
            ));
        }
        if !(self.horizon.is_finite() && self.horizon > self.burn_in) {
            return Err(Error::validation(
                "horizon",
                "must be finite and exceed burn_in",
            ));
        }
        if !(self.thinning.is_finite() && self.thinning > 0.0) {
            return Err(Error::validation("thinning", "must be positive"));
        }
        Ok(())
    }

    fn initial_configuration<R: Rng>(&self, kernel: &Kernel, rng: &mut R) -> Result<Configuration> {
        let n = kernel.n_sites();
        match &self.initial {
            InitialState::Empty => Ok(Configuration::empty(n)),
            InitialState::Full => Ok(Configuration::full(n)),
            InitialState::DppSample => Ok(DppMeasure::new(kernel).sample_with(rng)),
            InitialState::Explicit(bits) => {
                let c = Configuration::from_bitstring(bits)?;
                if c.n_sites() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        found: c.n_sites(),
                    });
                }
                Ok(c)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EventKind {
    Birth { site: usize },
    Death { site: usize },
    Jump { from: usize, to: usize },
}

impl EventKind {
    pub fn apply(&self, xi: &mut Configuration) -> Result<()> {
        match *self {
            EventKind::Birth { site } => xi.insert(site),
            EventKind::Death { site } => xi.remove(site),
            EventKind::Jump { from, to } => {
                if xi.contains(to) {
                    return Err(Error::SiteOccupied(to));
                }
                xi.remove(from)?;
                xi.insert(to)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dynamics: Dynamics,
    pub initial: Configuration,
    pub events: Vec<Event>,
    pub horizon: f64,
    pub burn_in: f64,
    pub thinning: f64,
    /// Largest gap between the engine's incremental rates and a from-scratch
    /// recomputation at the final state.
    pub engine_drift: f64,
    pub warnings: Vec<String>,
}

impl Trajectory {
    /// Replays every event, checking legality and strictly increasing
    /// times, and returns the final configuration.
    pub fn replay(&self) -> Result<Configuration> {
        let mut xi = self.initial.clone();
        let mut last = 0.0;
        for (i, e) in self.events.iter().enumerate() {
            if !(e.time > last || (i == 0 && e.time >= 0.0)) || e.time > self.horizon {
                return Err(Error::validation(
                    "events",
                    format!("event {i} at time {} out of order", e.time),
                ));
            }
            last = e.time;
            e.kind.apply(&mut xi)?;
        }
        Ok(xi)
    }

    pub fn final_state(&self) -> Configuration {
        self.replay().expect("trajectory produced by run is legal")
    }

    /// Configuration at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> Configuration {
        let mut xi = self.initial.clone();
        for e in self.events.iter().take_while(|e| e.time <= t) {
            e.kind.apply(&mut xi).expect("legal event");
        }
        xi
    }

    /// Snapshots at `burn_in, burn_in + thinning, ...` up to the horizon.
    pub fn samples(&self) -> Vec<Configuration> {
        let mut out = Vec::new();
        let mut xi = self.initial.clone();
        let mut next = 0;
        let mut k = 0u64;
        loop {
            let t = self.burn_in + k as f64 * self.thinning;
            if t > self.horizon {
                break;
            }
            while next < self.events.len() && self.events[next].time <= t {
                self.events[next].kind.apply(&mut xi).expect("legal event");
                next += 1;
            }
            out.push(xi.clone());
            k += 1;
        }
        out
    }

    /// Writes `time,kind,site,site2` rows.
    pub fn write_event_log<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time,kind,site,site2")?;
        for e in &self.events {
            match e.kind {
                EventKind::Birth { site } => writeln!(w, "{},birth,{site},", e.time)?,
                EventKind::Death { site } => writeln!(w, "{},death,{site},", e.time)?,
                EventKind::Jump { from, to } => writeln!(w, "{},jump,{from},{to}", e.time)?,
            }
        }
        Ok(())
    }
}

/// Enabled transitions and their rates in the engine's current state.
fn enabled_events(
    engine: &PapangelouEngine<'_>,
    model: &dyn RateModel,
    out: &mut Vec<(EventKind, f64)>,
) -> Result<()> {
    out.clear();
    let snap = engine.snapshot()?;
    let xi = engine.configuration();
    let n = xi.n_sites();
    match model.dynamics() {
        Dynamics::Glauber => {
            for x in 0..n {
                if xi.contains(x) {
                    out.push((
                        EventKind::Death { site: x },
                        model.death(x, snap.alpha_removed(x)),
                    ));
                } else {
                    out.push((EventKind::Birth { site: x }, model.birth(x, snap.alpha(x))));
                }
            }
        }
        Dynamics::Kawasaki => {
            let holes = xi.holes();
            for x in xi.iter() {
                for &y in &holes {
                    let (ax, ay) = snap.pair(x, y);
                    let r = model.jump(x, y, ax, ay);
                    if r != 0.0 {
                        out.push((EventKind::Jump { from: x, to: y }, r));
                    }
                }
            }
        }
    }
    for &(_, r) in out.iter() {
        if !(r.is_finite() && r >= 0.0) {
            return Err(Error::RateOverflow { value: r });
        }
    }
    Ok(())
}

/// Rates of every enabled transition at `xi`, recomputed from scratch.
pub fn rates_from_scratch(
    kernel: &Kernel,
    model: &dyn RateModel,
    xi: &Configuration,
) -> Result<Vec<(EventKind, f64)>> {
    let n = xi.n_sites();
    let mut out = Vec::new();
    match model.dynamics() {
        Dynamics::Glauber => {
            for x in 0..n {
                if xi.contains(x) {
                    let a = papangelou::alpha(kernel, x, &xi.without(x)?)?;
                    out.push((EventKind::Death { site: x }, model.death(x, a)));
                } else {
                    let a = papangelou::alpha(kernel, x, xi)?;
                    out.push((EventKind::Birth { site: x }, model.birth(x, a)));
                }
            }
        }
        Dynamics::Kawasaki => {
            let holes = xi.holes();
            for x in xi.iter() {
                let rest = xi.without(x)?;
                let ax = papangelou::alpha(kernel, x, &rest)?;
                for &y in &holes {
                    let ay = papangelou::alpha(kernel, y, &rest)?;
                    let r = model.jump(x, y, ax, ay);
                    if r != 0.0 {
                        out.push((EventKind::Jump { from: x, to: y }, r));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Simulates one trajectory on `[0, horizon]`.
pub fn run(kernel: &Kernel, model: &dyn RateModel, cfg: &SimConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let initial = cfg.initial_configuration(kernel, &mut rng)?;
    let mut warnings = Vec::new();
    if kernel.lambda_margin() <= 0.0 {
        warnings.push(format!(
            "diagonal dominance margin {} is not positive; existence constants are unverified",
            kernel.lambda_margin()
        ));
    }
    let mut engine = PapangelouEngine::new(kernel, &initial)?;
    let mut events = Vec::new();
    let mut enabled = Vec::new();
    let mut time = 0.0;
    loop {
        enabled_events(&engine, model, &mut enabled)?;
        let total: f64 = enabled.iter().map(|e| e.1).sum();
        if !total.is_finite() {
            return Err(Error::RateOverflow { value: total });
        }
        if total <= 0.0 {
            break;
        }
        let u: f64 = rng.random();
        time += -(1.0 - u).ln() / total;
        if time > cfg.horizon {
            break;
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = enabled.last().map(|e| e.0);
        for &(kind, r) in &enabled {
            acc += r;
            if r > 0.0 && acc > target {
                chosen = Some(kind);
                break;
            }
        }
        let kind = chosen.expect("positive total rate");
        match kind {
            EventKind::Birth { site } => engine.add(site)?,
            EventKind::Death { site } => engine.remove(site)?,
            EventKind::Jump { from, to } => {
                engine.remove(from)?;
                engine.add(to)?;
            }
        }
        events.push(Event { time, kind });
    }

    enabled_events(&engine, model, &mut enabled)?;
    let scratch = rates_from_scratch(kernel, model, engine.configuration())?;
    let engine_drift = enabled
        .iter()
        .zip(&scratch)
        .map(|(a, b)| {
            debug_assert_eq!(a.0, b.0);
            (a.1 - b.1).abs()
        })
        .fold(0.0, f64::max);

    Ok(Trajectory {
        dynamics: model.dynamics(),
        initial,
        events,
        horizon: cfg.horizon,
        burn_in: cfg.burn_in,
        thinning: cfg.thinning,
        engine_drift,
        warnings,
    })
}

/// The splitmix64 output function.
pub fn splitmix64(i: u64) -> u64 {
    let mut z = i.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replica `i`: `master ^ splitmix64(i)`.
pub fn replica_seed(master: u64, i: usize) -> u64 {
    master ^ splitmix64(i as u64)
}

/// Runs `n_replicas` independent trajectories in parallel; the result is
/// ordered by replica index and depends only on `cfg.seed` and the count.
pub fn run_replicas(
    kernel: &Kernel,
    model: &dyn RateModel,
    cfg: &SimConfig,
    n_replicas: usize,
) -> Result<Vec<Trajectory>> {
    if n_replicas == 0 {
        return Err(Error::validation("replicas", "need at least one replica"));
    }
    (0..n_replicas)
        .into_par_iter()
        .map(|i| {
            let mut c = cfg.clone();
            c.seed = replica_seed(cfg.seed, i);
            run(kernel, model, &c)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationEstimate {
    pub sites: Vec<usize>,
    pub estimate: f64,
    pub stderr: f64,
    pub batches: usize,
}

/// Time-averaged `ρ̂(x_1, .., x_m)`: the fraction of post-burn-in time with
/// every listed site occupied. Each trajectory's window is cut into
/// `batches` equal pieces; the batch means of all trajectories are pooled,
/// and the standard error is their standard deviation over `√(count)`.
pub fn estimate_correlations(
    trajectories: &[Trajectory],
    tuples: &[Vec<usize>],
    batches: usize,
) -> Result<Vec<CorrelationEstimate>> {
    if batches < 2 {
        return Err(Error::InsufficientData(format!(
            "{batches} batches; need at least 2"
        )));
    }
    if trajectories.is_empty() {
        return Err(Error::InsufficientData("no trajectories".into()));
    }
    let mut means: Vec<Vec<f64>> = vec![Vec::new(); tuples.len()];
    for traj in trajectories {
        let n = traj.initial.n_sites();
        for tuple in tuples {
            if let Some(&x) = tuple.iter().find(|&&x| x >= n) {
                return Err(Error::SiteOutOfRange {
                    site: x,
                    n_sites: n,
                });
            }
        }
        let start = traj.burn_in;
        let width = (traj.horizon - start) / batches as f64;
        if !(width > 0.0) {
            return Err(Error::InsufficientData("empty averaging window".into()));
        }
        let mut occupied_time = vec![vec![0.0; batches]; tuples.len()];
        let mut xi = traj.initial.clone();
        let mut seg_start = 0.0;
        let mut add_segment = |xi: &Configuration, a: f64, b: f64| {
            let (a, b) = (a.max(start), b.min(traj.horizon));
            if b <= a {
                return;
            }
            let flags: Vec<bool> = tuples
                .iter()
                .map(|t| t.iter().all(|&x| xi.contains(x)))
                .collect();
            if !flags.iter().any(|&f| f) {
                return;
            }
            let first = (((a - start) / width) as usize).min(batches - 1);
            let last = (((b - start) / width) as usize).min(batches - 1);
            for k in first..=last {
                let lo = a.max(start + k as f64 * width);
                let hi = b.min(start + (k + 1) as f64 * width);
                if hi > lo {
                    for (j, &f) in flags.iter().enumerate() {
                        if f {
                            occupied_time[j][k] += hi - lo;
                        }
                    }
                }
            }
        };
        for e in &traj.events {
            add_segment(&xi, seg_start, e.time);
            e.kind.apply(&mut xi)?;
            seg_start = e.time;
        }
        add_segment(&xi, seg_start, traj.horizon);
        for (j, row) in occupied_time.iter().enumerate() {
            means[j].extend(row.iter().map(|v| v / width));
        }
    }
    Ok(tuples
        .iter()
        .zip(means)
        .map(|(t, m)| {
            let count = m.len() as f64;
            let mean = m.iter().sum::<f64>() / count;
            let var = m.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1.0);
            CorrelationEstimate {
                sites: t.clone(),
                estimate: mean,
                stderr: (var / count).sqrt(),
                batches: m.len(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::rates::{RateSpec, Rates};

    #[test]
    fn config_validation() {
        let bad = SimConfig {
            horizon: 10.0,
            burn_in: 10.0,
            ..SimConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(SimConfig::default().validate().is_ok());
    }

    #[test]
    fn glauber_trajectory_is_legal_and_consistent() {
        let k = fixtures::random_complex_dominant(10, 0.2, 0.4, 8);
        let cfg = SimConfig {
            horizon: 200.0,
            burn_in: 10.0,
            seed: 3,
            ..SimConfig::default()
        };
        let traj = run(&k, &Rates::Glauber, &cfg).unwrap();
        assert!(!traj.events.is_empty());
        traj.replay().unwrap();
        assert!(traj.engine_drift < 1e-8, "{}", traj.engine_drift);
        assert_eq!(run(&k, &Rates::Glauber, &cfg).unwrap(), traj);
    }

    #[test]
    fn kawasaki_conserves_particles() {
        let k = fixtures::torus_nearest_neighbor(&[4, 3], 1.5, 0.2);
        let spec = RateSpec::nearest_neighbor(k.space(), 0.5).unwrap();
        let cfg = SimConfig {
            horizon: 100.0,
            burn_in: 0.0,
            initial: InitialState::Explicit("110010100001".into()),
            ..SimConfig::default()
        };
        let traj = run(&k, &Rates::Kawasaki(spec), &cfg).unwrap();
        let mut xi = traj.initial.clone();
        for e in &traj.events {
            assert!(matches!(e.kind, EventKind::Jump { .. }));
            e.kind.apply(&mut xi).unwrap();
            assert_eq!(xi.len(), 5);
        }
        assert!(traj.engine_drift < 1e-8);
    }

    #[test]
    fn independent_sites_half_occupied() {
        let k = fixtures::diagonal(4, 1.0);
        let cfg = SimConfig {
            horizon: 2000.0,
            burn_in: 20.0,
            seed: 11,
            ..SimConfig::default()
        };
        let traj = run_replicas(&k, &Rates::Glauber, &cfg, 2).unwrap();
        let est =
            estimate_correlations(&traj, &[vec![0], vec![3], vec![1, 2]], DEFAULT_BATCHES).unwrap();
        for (e, target) in est.iter().zip([0.5, 0.5, 0.25]) {
            assert!((e.estimate - target).abs() < 4.0 * e.stderr, "{e:?}");
        }
    }

    #[test]
    fn estimator_on_hand_built_trajectory() {
        let traj = Trajectory {
            dynamics: Dynamics::Glauber,
            initial: Configuration::empty(1),
            events: vec![
                Event {
                    time: 1.0,
                    kind: EventKind::Birth { site: 0 },
                },
                Event {
                    time: 3.0,
                    kind: EventKind::Death { site: 0 },
                },
            ],
            horizon: 4.0,
            burn_in: 0.0,
            thinning: 1.0,
            engine_drift: 0.0,
            warnings: vec![],
        };
        let est = estimate_correlations(std::slice::from_ref(&traj), &[vec![0]], 4).unwrap();
        assert!((est[0].estimate - 0.5).abs() < 1e-15);
        assert_eq!(
            traj.samples().iter().map(|c| c.len()).collect::<Vec<_>>(),
            vec![0, 1, 1, 0, 0]
        );
        let mut log = Vec::new();
        traj.write_event_log(&mut log).unwrap();
        assert_eq!(
            String::from_utf8(log).unwrap(),
            "time,kind,site,site2\n1,birth,0,\n3,death,0,\n"
        );
        assert!(matches!(
            estimate_correlations(&[traj], &[vec![0]], 1),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn illegal_replay_is_rejected() {
        let traj = Trajectory {
            dynamics: Dynamics::Glauber,
            initial: Configuration::empty(2),
            events: vec![Event {
                time: 1.0,
                kind: EventKind::Death { site: 0 },
            }],
            horizon: 4.0,
            burn_in: 0.0,
            thinning: 1.0,
            engine_drift: 0.0,
            warnings: vec![],
        };
        assert_eq!(traj.replay(), Err(Error::SiteEmpty(0)));
    }

    #[test]
    fn replica_seeds_differ() {
        assert_ne!(replica_seed(5, 0), replica_seed(5, 1));
        assert_eq!(replica_seed(0, 3), splitmix64(3));
    }
}
