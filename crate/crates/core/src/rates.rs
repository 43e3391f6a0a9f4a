//! Flip and jump rates in detailed balance with the DPP, and the Liggett
//! constants `c`, `ε`, `M` that control existence and ergodicity of the
//! resulting dynamics.
//!
//! Glauber dynamics flips one site at a time with birth rate
//! `b(x; ξ) = α / (1 + α)` and death rate `d(x; xξ) = 1 / (1 + α)`, where
//! `α = α(x; ξ)`. Kawasaki dynamics moves a particle from `x` to an empty
//! site `y` at rate `c(x, y; xξ) = d(x, y) α(y; ξ) g_t(α(x; ξ), α(y; ξ))`
//! with `g_t(u, v) = ((1 + u)(1 + v))^{-t}`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::configuration::Configuration;
use crate::error::{Error, Result};
use crate::kernel::{Kernel, SiteSpace};
use crate::papangelou::{self, AlphaTable, CheckMode};

/// Largest site set for exhaustive detailed-balance and Liggett sweeps.
pub const EXHAUSTIVE_LIMIT: usize = 12;

const SAMPLED_CHECKS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Dynamics {
    Glauber,
    Kawasaki,
}

impl std::fmt::Display for Dynamics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Dynamics::Glauber => "glauber",
            Dynamics::Kawasaki => "kawasaki",
        })
    }
}

/// How the jump weights `d(x, y)` are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WeightSpec {
    /// `1 / (2 dim)` per torus neighbour; on a plain site set the sites form
    /// a ring with weight `1/2` per neighbour.
    #[default]
    NearestNeighbor,
    /// `exp(-rate * dist(x, y))` for every pair, with torus distance or ring
    /// distance on a plain site set.
    ExponentialDecay {
        rate: f64,
    },
    Explicit {
        matrix: Vec<Vec<f64>>,
    },
}

/// Interpolation exponent `t` and weight matrix for Kawasaki jumps.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSpec {
    t: f64,
    weights: DMatrix<f64>,
    kind: WeightSpec,
    d1: f64,
    d2: f64,
}

impl RateSpec {
    pub fn new(t: f64, weights: DMatrix<f64>) -> Result<Self> {
        let kind = WeightSpec::Explicit {
            matrix: weights
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        };
        Self::validated(t, weights, kind)
    }

    pub fn from_weight_spec(spec: &WeightSpec, space: &SiteSpace, t: f64) -> Result<Self> {
        let n = space.n_sites();
        let weights = match spec {
            WeightSpec::NearestNeighbor => nearest_neighbor_weights(space),
            WeightSpec::ExponentialDecay { rate } => {
                if !(rate.is_finite() && *rate >= 0.0) {
                    return Err(Error::validation(
                        "rate",
                        "decay rate must be finite and nonnegative",
                    ));
                }
                DMatrix::from_fn(n, n, |x, y| {
                    if x == y {
                        0.0
                    } else {
                        (-rate * site_distance(space, x, y) as f64).exp()
                    }
                })
            }
            WeightSpec::Explicit { matrix } => {
                if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        found: matrix.len(),
                    });
                }
                DMatrix::from_fn(n, n, |x, y| matrix[x][y])
            }
        };
        Self::validated(t, weights, spec.clone())
    }

    pub fn nearest_neighbor(space: &SiteSpace, t: f64) -> Result<Self> {
        Self::from_weight_spec(&WeightSpec::NearestNeighbor, space, t)
    }

    fn validated(t: f64, weights: DMatrix<f64>, kind: WeightSpec) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::validation("t", "t must lie in [0,1]"));
        }
        let n = weights.nrows();
        if weights.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: weights.ncols(),
            });
        }
        for x in 0..n {
            if weights[(x, x)] != 0.0 {
                return Err(Error::validation("weights", "diagonal must be zero"));
            }
            for y in 0..n {
                let w = weights[(x, y)];
                if !(w.is_finite() && w >= 0.0) {
                    return Err(Error::validation(
                        "weights",
                        "entries must be finite and nonnegative",
                    ));
                }
                if (w - weights[(y, x)]).abs() > 1e-12 * w.abs().max(1.0) {
                    return Err(Error::validation("weights", "matrix must be symmetric"));
                }
            }
        }
        let sums: Vec<f64> = weights.row_iter().map(|r| r.sum()).collect();
        let d1 = sums.iter().copied().fold(f64::INFINITY, f64::min);
        let d2 = sums.iter().copied().fold(0.0, f64::max);
        if n >= 2 && !(d1 > 0.0) {
            return Err(Error::validation(
                "weights",
                "every site needs a positive total weight (d1 > 0)",
            ));
        }
        Ok(RateSpec {
            t,
            weights,
            kind,
            d1: if n >= 2 { d1 } else { 0.0 },
            d2,
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn n_sites(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weight(&self, x: usize, y: usize) -> f64 {
        self.weights[(x, y)]
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn kind(&self) -> &WeightSpec {
        &self.kind
    }

    /// `min_x Σ_y d(x, y)`.
    pub fn d1(&self) -> f64 {
        self.d1
    }

    /// `max_x Σ_y d(x, y)`.
    pub fn d2(&self) -> f64 {
        self.d2
    }
}

fn nearest_neighbor_weights(space: &SiteSpace) -> DMatrix<f64> {
    let n = space.n_sites();
    let mut w = DMatrix::zeros(n, n);
    match space.dimension() {
        Some(dim) => {
            let unit = 1.0 / (2 * dim) as f64;
            for x in 0..n {
                for y in space.neighbor_steps(x).unwrap_or_default() {
                    if y != x {
                        w[(x, y)] += unit;
                    }
                }
            }
        }
        None if n >= 2 => {
            for x in 0..n {
                w[(x, (x + 1) % n)] += 0.5;
                w[(x, (x + n - 1) % n)] += 0.5;
            }
        }
        None => {}
    }
    w
}

fn site_distance(space: &SiteSpace, x: usize, y: usize) -> usize {
    space.torus_distance(x, y).unwrap_or_else(|| {
        let d = x.abs_diff(y);
        d.min(space.n_sites() - d)
    })
}

/// `g_t(u, v) = ((1 + u)(1 + v))^{-t}`.
pub fn g_t(t: f64, u: f64, v: f64) -> f64 {
    ((1.0 + u) * (1.0 + v)).powf(-t)
}

/// Rates expressed through Papangelou intensities. Every intensity argument
/// is taken at the configuration with the moving particle removed:
/// `birth`/`death` receive `α(x; ξ)` for `x ∉ ξ`, and `jump(x, y, ..)`
/// receives `α(x; ξ')` and `α(y; ξ')` where `ξ' = ξ \ x`.
pub trait RateModel: Sync {
    fn dynamics(&self) -> Dynamics;

    /// `b(x; ξ)`.
    fn birth(&self, _x: usize, _alpha: f64) -> f64 {
        0.0
    }

    /// `d(x; xξ)`.
    fn death(&self, _x: usize, _alpha: f64) -> f64 {
        0.0
    }

    /// `c(x, y; xξ')`.
    fn jump(&self, _x: usize, _y: usize, _alpha_x: f64, _alpha_y: f64) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Rates {
    Glauber,
    Kawasaki(RateSpec),
}

impl Rates {
    pub fn new(dynamics: Dynamics, spec: &RateSpec) -> Self {
        match dynamics {
            Dynamics::Glauber => Rates::Glauber,
            Dynamics::Kawasaki => Rates::Kawasaki(spec.clone()),
        }
    }
}

impl RateModel for Rates {
    fn dynamics(&self) -> Dynamics {
        match self {
            Rates::Glauber => Dynamics::Glauber,
            Rates::Kawasaki(_) => Dynamics::Kawasaki,
        }
    }

    fn birth(&self, _x: usize, alpha: f64) -> f64 {
        match self {
            // 1 - d rather than α/(1+α), so that b + d == 1 in floating point
            Rates::Glauber => 1.0 - 1.0 / (1.0 + alpha),
            Rates::Kawasaki(_) => 0.0,
        }
    }

    fn death(&self, _x: usize, alpha: f64) -> f64 {
        match self {
            Rates::Glauber => 1.0 / (1.0 + alpha),
            Rates::Kawasaki(_) => 0.0,
        }
    }

    fn jump(&self, x: usize, y: usize, alpha_x: f64, alpha_y: f64) -> f64 {
        match self {
            Rates::Glauber => 0.0,
            Rates::Kawasaki(spec) => {
                let w = spec.weight(x, y);
                if w == 0.0 {
                    0.0
                } else {
                    w * alpha_y * g_t(spec.t, alpha_x, alpha_y)
                }
            }
        }
    }
}

/// `(b(x; ξ), d(x; xξ))` for `x ∉ ξ`.
pub fn glauber_rates(kernel: &Kernel, x: usize, xi: &Configuration) -> Result<(f64, f64)> {
    let a = papangelou::alpha(kernel, x, xi)?;
    Ok((Rates::Glauber.birth(x, a), Rates::Glauber.death(x, a)))
}

/// `c(x, y; ξ)` for `x ∈ ξ`, `y ∉ ξ`.
pub fn kawasaki_rate(
    kernel: &Kernel,
    spec: &RateSpec,
    x: usize,
    y: usize,
    xi: &Configuration,
) -> Result<f64> {
    if x == y {
        return Err(Error::IdenticalSites(x));
    }
    if spec.n_sites() != kernel.n_sites() {
        return Err(Error::DimensionMismatch {
            expected: kernel.n_sites(),
            found: spec.n_sites(),
        });
    }
    let rest = xi.without(x)?;
    if rest.contains(y) {
        return Err(Error::SiteOccupied(y));
    }
    let ax = papangelou::alpha(kernel, x, &rest)?;
    let ay = papangelou::alpha(kernel, y, &rest)?;
    Ok(Rates::Kawasaki(spec.clone()).jump(x, y, ax, ay))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BalanceReport {
    pub max_residual: f64,
    pub checked: usize,
    pub exhaustive: bool,
}

fn iter_submasks(free: u64) -> impl Iterator<Item = u64> {
    let mut next = Some(free);
    std::iter::from_fn(move || {
        let s = next?;
        next = if s == 0 { None } else { Some((s - 1) & free) };
        Some(s)
    })
}

fn full_mask(n: usize) -> u64 {
    if n == 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

/// Largest detailed-balance defect: `|b - α d|` for flips and
/// `|α(x; ξ) c(x, y; xξ) - α(y; ξ) c(y, x; yξ)|` for jumps. Exhaustive for
/// `|E| <= 12` unless a mode is given.
pub fn detailed_balance_residual(
    kernel: &Kernel,
    model: &dyn RateModel,
    mode: Option<CheckMode>,
) -> Result<BalanceReport> {
    let n = kernel.n_sites();
    let mode = mode.unwrap_or(if n <= EXHAUSTIVE_LIMIT {
        CheckMode::Exhaustive
    } else {
        CheckMode::Sampled {
            samples: SAMPLED_CHECKS,
            seed: 0,
        }
    });
    let flip = |x: usize, a: f64| (model.birth(x, a) - a * model.death(x, a)).abs();
    let jump = |x: usize, y: usize, ax: f64, ay: f64| {
        (ax * model.jump(x, y, ax, ay) - ay * model.jump(y, x, ay, ax)).abs()
    };
    let glauber = model.dynamics() == Dynamics::Glauber;
    match mode {
        CheckMode::Exhaustive => {
            if n > EXHAUSTIVE_LIMIT {
                return Err(Error::EnumerationTooLarge {
                    n_sites: n,
                    limit: EXHAUSTIVE_LIMIT,
                });
            }
            let table = AlphaTable::build(kernel)?;
            let (max_residual, checked) = (0..1u64 << n)
                .into_par_iter()
                .map(|mask| {
                    let holes: Vec<usize> = (0..n).filter(|&x| mask >> x & 1 == 0).collect();
                    let mut worst = 0.0f64;
                    let mut count = 0;
                    for (i, &x) in holes.iter().enumerate() {
                        let ax = table.get(x, mask);
                        if glauber {
                            worst = worst.max(flip(x, ax));
                            count += 1;
                        } else {
                            for &y in &holes[i + 1..] {
                                worst = worst.max(jump(x, y, ax, table.get(y, mask)));
                                count += 1;
                            }
                        }
                    }
                    (worst, count)
                })
                .reduce(|| (0.0, 0), |a, b| (a.0.max(b.0), a.1 + b.1));
            Ok(BalanceReport {
                max_residual,
                checked,
                exhaustive: true,
            })
        }
        CheckMode::Sampled { samples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut worst = 0.0f64;
            let mut checked = 0;
            for _ in 0..samples {
                let mut xi = Configuration::empty(n);
                for s in 0..n {
                    if rng.random::<bool>() {
                        xi.insert(s)?;
                    }
                }
                let holes = xi.holes();
                if holes.is_empty() || (!glauber && holes.len() < 2) {
                    continue;
                }
                let x = holes[rng.random_range(0..holes.len())];
                let ax = papangelou::alpha(kernel, x, &xi)?;
                if glauber {
                    worst = worst.max(flip(x, ax));
                } else {
                    let mut y = x;
                    while y == x {
                        y = holes[rng.random_range(0..holes.len())];
                    }
                    let ay = papangelou::alpha(kernel, y, &xi)?;
                    worst = worst.max(jump(x, y, ax, ay));
                }
                checked += 1;
            }
            Ok(BalanceReport {
                max_residual: worst,
                checked,
                exhaustive: false,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiggettMode {
    /// Every supremum over configurations is enumerated (`|E| <= 12`).
    Exhaustive,
    /// Analytic bounds only.
    Bound,
}

/// Liggett constants of a rate model. Exact values are present only after
/// an exhaustive sweep; the analytic bounds are always filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct LiggettConstants {
    pub dynamics: Dynamics,
    pub exhaustive: bool,
    /// Largest total rate at one site (exact, or an upper bound).
    pub c_sup: f64,
    /// Smallest total rate (exact, or a lower bound).
    pub epsilon: f64,
    pub epsilon_lower_bound: f64,
    /// Kawasaki only: the infimum defining `ε` restricted to states where
    /// both the incoming and the outgoing sum are nonempty, i.e.
    /// `1 <= |ξ| <= |E| - 2`. On a finite set the unrestricted infimum is
    /// attained at these boundary states, where one sum is empty.
    pub epsilon_nondegenerate: Option<f64>,
    /// `sup_x Σ_u γ(x, u)`.
    pub m_exact: Option<f64>,
    /// Kawasaki only: `M` without the terms `y = u`, which come from the
    /// exclusion rule rather than from the interaction through `α`.
    pub m_interaction: Option<f64>,
    pub m1_exact: Option<f64>,
    /// Analytic bound on `M₁`.
    pub m1_bound: f64,
    /// Lipschitz constant with `M ≤ a₀ M₁` (interaction part for Kawasaki).
    pub a0: f64,
    /// Upper bound on `M` assembled from `a₀`, `M₁` and, for Kawasaki, the
    /// exclusion term.
    pub m_bound: f64,
    /// `γ(x, u)`, available after an exhaustive sweep.
    pub gamma: Option<DMatrix<f64>>,
    pub ergodic: bool,
}

impl LiggettConstants {
    /// Best available value of `M`: exact if known, else the bound.
    pub fn m(&self) -> f64 {
        self.m_exact.unwrap_or(self.m_bound)
    }
}

/// `(q/λ)(1 + q(λ+q)/λ²)`, infinite unless `λ > 0`.
pub fn glauber_m1_bound(kernel: &Kernel) -> f64 {
    let lambda = kernel.lambda_margin();
    let q = kernel.q_value();
    if lambda <= 0.0 {
        return f64::INFINITY;
    }
    (q / lambda) * (1.0 + q * (lambda + q) / (lambda * lambda))
}

/// Liggett constants of `rates`; `mode` defaults to exhaustive when
/// `|E| <= 12`.
pub fn liggett_constants(
    kernel: &Kernel,
    rates: &Rates,
    mode: Option<LiggettMode>,
) -> Result<LiggettConstants> {
    let n = kernel.n_sites();
    if let Rates::Kawasaki(spec) = rates {
        if spec.n_sites() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: spec.n_sites(),
            });
        }
    }
    let mode = mode.unwrap_or(if n <= EXHAUSTIVE_LIMIT {
        LiggettMode::Exhaustive
    } else {
        LiggettMode::Bound
    });
    let lambda = kernel.lambda_margin();
    let norm = kernel.op_norm();
    let g_bound = glauber_m1_bound(kernel);

    let mut out = match rates {
        Rates::Glauber => {
            let a0 = 2.0 / ((1.0 + lambda.max(0.0)) * (1.0 + lambda.max(0.0)));
            LiggettConstants {
                dynamics: Dynamics::Glauber,
                exhaustive: false,
                c_sup: (norm / (1.0 + norm)).max(1.0 / (1.0 + lambda.max(0.0))),
                epsilon: 1.0,
                epsilon_lower_bound: 1.0,
                epsilon_nondegenerate: None,
                m_exact: None,
                m_interaction: None,
                m1_exact: None,
                m1_bound: g_bound,
                a0,
                m_bound: a0 * g_bound,
                gamma: None,
                ergodic: false,
            }
        }
        Rates::Kawasaki(spec) => {
            let t = spec.t();
            let a0 = 1.0f64.max(t * norm * (1.0 + norm).powf(-t));
            let m1_bound = 2.0 * spec.d2() * g_bound;
            let eps_lb = spec.d1() * lambda.max(0.0) * (1.0 + norm).powf(-2.0 * t);
            LiggettConstants {
                dynamics: Dynamics::Kawasaki,
                exhaustive: false,
                c_sup: spec.d2() * norm,
                epsilon: eps_lb,
                epsilon_lower_bound: eps_lb,
                epsilon_nondegenerate: None,
                m_exact: None,
                m_interaction: None,
                m1_exact: None,
                m1_bound,
                a0,
                m_bound: a0 * m1_bound + spec.d2() * norm,
                gamma: None,
                ergodic: false,
            }
        }
    };

    if mode == LiggettMode::Exhaustive {
        if n > EXHAUSTIVE_LIMIT {
            return Err(Error::EnumerationTooLarge {
                n_sites: n,
                limit: EXHAUSTIVE_LIMIT,
            });
        }
        let table = AlphaTable::build(kernel)?;
        let sweep = match rates {
            Rates::Glauber => glauber_sweep(&table, rates),
            Rates::Kawasaki(spec) => kawasaki_sweep(&table, rates, spec),
        };
        out.exhaustive = true;
        out.c_sup = sweep.c_sup;
        out.epsilon = sweep.epsilon;
        if out.dynamics == Dynamics::Kawasaki {
            out.epsilon_nondegenerate = Some(sweep.epsilon_nondegenerate);
        }
        out.m_exact = Some(row_sup(&sweep.gamma));
        out.m_interaction = Some(row_sup(&sweep.interaction));
        out.m1_exact = Some(sweep.m1);
        out.gamma = Some(sweep.gamma);
    }
    out.ergodic = out.m() < out.epsilon;
    Ok(out)
}

fn row_sup(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.sum()).fold(0.0, f64::max)
}

struct Sweep {
    c_sup: f64,
    epsilon: f64,
    epsilon_nondegenerate: f64,
    gamma: DMatrix<f64>,
    interaction: DMatrix<f64>,
    m1: f64,
}

struct SiteSweep {
    c: f64,
    eps: f64,
    eps_nd: f64,
    gamma_row: Vec<f64>,
    interaction_row: Vec<f64>,
    m1: f64,
}

fn collect(n: usize, rows: Vec<SiteSweep>) -> Sweep {
    let mut gamma = DMatrix::zeros(n, n);
    let mut interaction = DMatrix::zeros(n, n);
    for (x, r) in rows.iter().enumerate() {
        for u in 0..n {
            gamma[(x, u)] = r.gamma_row[u];
            interaction[(x, u)] = r.interaction_row[u];
        }
    }
    Sweep {
        c_sup: rows.iter().map(|r| r.c).fold(0.0, f64::max),
        epsilon: rows.iter().map(|r| r.eps).fold(f64::INFINITY, f64::min),
        epsilon_nondegenerate: rows.iter().map(|r| r.eps_nd).fold(f64::INFINITY, f64::min),
        gamma,
        interaction,
        m1: rows.iter().map(|r| r.m1).fold(0.0, f64::max),
    }
}

fn glauber_sweep(table: &AlphaTable, rates: &Rates) -> Sweep {
    let n = table.n_sites();
    let all = full_mask(n);
    let rows = (0..n)
        .into_par_iter()
        .map(|x| {
            let mut c = 0.0f64;
            let mut eps = f64::INFINITY;
            for xi in iter_submasks(all & !(1 << x)) {
                let a = table.get(x, xi);
                let (b, d) = (rates.birth(x, a), rates.death(x, a));
                c = c.max(b).max(d);
                eps = eps.min(b + d);
            }
            let mut gamma_row = vec![0.0; n];
            let mut m1 = 0.0;
            for u in (0..n).filter(|&u| u != x) {
                let mut g = 0.0f64;
                let mut drop = 0.0f64;
                for xi in iter_submasks(all & !(1 << x) & !(1 << u)) {
                    let a0 = table.get(x, xi);
                    let a1 = table.get(x, xi | 1 << u);
                    let db = (rates.birth(x, a0) - rates.birth(x, a1)).abs();
                    let dd = (rates.death(x, a1) - rates.death(x, a0)).abs();
                    g = g.max(db + dd);
                    drop = drop.max(a0 - a1);
                }
                gamma_row[u] = g;
                m1 += drop;
            }
            SiteSweep {
                c,
                eps,
                eps_nd: eps,
                interaction_row: gamma_row.clone(),
                gamma_row,
                m1,
            }
        })
        .collect();
    collect(n, rows)
}

fn kawasaki_sweep(table: &AlphaTable, rates: &Rates, spec: &RateSpec) -> Sweep {
    let n = table.n_sites();
    let all = full_mask(n);
    let bit = |s: usize| 1u64 << s;
    let rows = (0..n)
        .into_par_iter()
        .map(|x| {
            // c: Σ_y sup max(c(x,y;xξ), c(y,x;yξ)) over ξ ∌ x, y
            let mut c = 0.0;
            for y in (0..n).filter(|&y| y != x) {
                let mut best = 0.0f64;
                for xi in iter_submasks(all & !bit(x) & !bit(y)) {
                    let (ax, ay) = (table.get(x, xi), table.get(y, xi));
                    best = best
                        .max(rates.jump(x, y, ax, ay))
                        .max(rates.jump(y, x, ay, ax));
                }
                c += best;
            }

            // ε at target y = x: min over ξ ∌ x of the total rate into and out of x
            let mut eps = f64::INFINITY;
            let mut eps_nd = f64::INFINITY;
            for xi in iter_submasks(all & !bit(x)) {
                let mut total = 0.0;
                for z in 0..n {
                    if z == x {
                        continue;
                    }
                    if xi & bit(z) != 0 {
                        let rest = xi & !bit(z);
                        total += rates.jump(z, x, table.get(z, rest), table.get(x, rest));
                    } else {
                        total += rates.jump(x, z, table.get(x, xi), table.get(z, xi));
                    }
                }
                eps = f64::min(eps, total);
                if xi != 0 && xi | bit(x) != all {
                    eps_nd = f64::min(eps_nd, total);
                }
            }

            let mut gamma_row = vec![0.0; n];
            let mut interaction_row = vec![0.0; n];
            let mut m1 = 0.0;
            for u in (0..n).filter(|&u| u != x) {
                // exclusion term y = u: c(x,u;xuξ) = 0
                let mut excl = 0.0f64;
                for xi in iter_submasks(all & !bit(x) & !bit(u)) {
                    excl = excl.max(rates.jump(x, u, table.get(x, xi), table.get(u, xi)));
                }
                let mut inter = 0.0;
                for y in (0..n).filter(|&y| y != x && y != u) {
                    let mut g = 0.0f64;
                    let mut drop = 0.0f64;
                    for xi in iter_submasks(all & !bit(x) & !bit(y) & !bit(u)) {
                        let (ax0, ay0) = (table.get(x, xi), table.get(y, xi));
                        let xu = xi | bit(u);
                        let (ax1, ay1) = (table.get(x, xu), table.get(y, xu));
                        let fwd = (rates.jump(x, y, ax0, ay0) - rates.jump(x, y, ax1, ay1)).abs();
                        let bwd = (rates.jump(y, x, ay0, ax0) - rates.jump(y, x, ay1, ax1)).abs();
                        g = g.max(fwd).max(bwd);
                        drop = drop.max((ax0 - ax1) + (ay0 - ay1));
                    }
                    inter += g;
                    m1 += spec.weight(x, y) * drop;
                }
                interaction_row[u] = inter;
                gamma_row[u] = inter + excl;
            }
            SiteSweep {
                c,
                eps: if n < 2 { 0.0 } else { eps },
                eps_nd,
                gamma_row,
                interaction_row,
                m1,
            }
        })
        .collect();
    collect(n, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn cfg(n: usize, s: &[usize]) -> Configuration {
        Configuration::from_sites(n, s).unwrap()
    }

    #[test]
    fn glauber_examples() {
        let (b, d) = glauber_rates(&fixtures::diagonal(3, 1.0), 0, &cfg(3, &[2])).unwrap();
        assert_eq!((b, d), (0.5, 0.5));
        let (b, d) = glauber_rates(&fixtures::a2(), 0, &cfg(2, &[1])).unwrap();
        assert!((b - 1.875 / 2.875).abs() < 1e-15);
        assert!((d - 1.0 / 2.875).abs() < 1e-15);
        assert_eq!(b + d, 1.0);
    }

    #[test]
    fn kawasaki_examples_and_errors() {
        let k = fixtures::a2();
        let spec = RateSpec::nearest_neighbor(k.space(), 0.0).unwrap();
        assert_eq!(spec.weight(0, 1), 1.0);
        assert_eq!(kawasaki_rate(&k, &spec, 0, 1, &cfg(2, &[0])).unwrap(), 2.0);
        assert_eq!(
            kawasaki_rate(&k, &spec, 0, 0, &cfg(2, &[0])),
            Err(Error::IdenticalSites(0))
        );
        assert_eq!(
            kawasaki_rate(&k, &spec, 1, 0, &cfg(2, &[0])),
            Err(Error::SiteEmpty(1))
        );
        assert_eq!(
            kawasaki_rate(&k, &spec, 0, 1, &cfg(2, &[0, 1])),
            Err(Error::SiteOccupied(1))
        );

        let k = fixtures::diagonal(5, 1.7);
        let spec =
            RateSpec::from_weight_spec(&WeightSpec::ExponentialDecay { rate: 0.5 }, k.space(), 0.0)
                .unwrap();
        let c = kawasaki_rate(&k, &spec, 1, 3, &cfg(5, &[1, 4])).unwrap();
        assert!((c - spec.weight(1, 3) * 1.7).abs() < 1e-14);
    }

    #[test]
    fn weights_validation() {
        let space = SiteSpace::torus(&[4, 4]).unwrap();
        let spec = RateSpec::nearest_neighbor(&space, 0.5).unwrap();
        assert_eq!((spec.d1(), spec.d2()), (1.0, 1.0));
        assert_eq!(
            RateSpec::nearest_neighbor(&space, 1.5),
            Err(Error::validation("t", "t must lie in [0,1]"))
        );
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.5, 0.0]);
        assert!(RateSpec::new(0.0, asym).is_err());
        assert!(RateSpec::new(0.0, DMatrix::zeros(3, 3)).is_err());
        // side-2 axis: the single neighbour carries both directions
        let spec = RateSpec::nearest_neighbor(&SiteSpace::torus(&[2]).unwrap(), 0.0).unwrap();
        assert_eq!(spec.weight(0, 1), 1.0);
        let ring = RateSpec::nearest_neighbor(&SiteSpace::new(5).unwrap(), 0.0).unwrap();
        assert_eq!(
            (ring.weight(0, 4), ring.weight(0, 1), ring.weight(0, 2)),
            (0.5, 0.5, 0.0)
        );
    }

    #[test]
    fn g_t_properties() {
        assert_eq!(g_t(0.0, 3.0, 7.0), 1.0);
        assert_eq!(g_t(0.7, 3.0, 7.0), g_t(0.7, 7.0, 3.0));
        assert!((g_t(1.0, 1.0, 1.0) - 0.25).abs() < 1e-16);
    }

    #[test]
    fn detailed_balance_exhaustive() {
        let k = fixtures::a2();
        let r = detailed_balance_residual(&k, &Rates::Glauber, None).unwrap();
        assert!(r.exhaustive && r.checked == 4 && r.max_residual < 1e-15);
        let k = fixtures::torus_nearest_neighbor(&[8], 1.0, 0.2);
        let spec = RateSpec::nearest_neighbor(k.space(), 0.5).unwrap();
        let r = detailed_balance_residual(&k, &Rates::Kawasaki(spec), None).unwrap();
        assert!(r.max_residual < 1e-12);
    }

    struct Perturbed;
    impl RateModel for Perturbed {
        fn dynamics(&self) -> Dynamics {
            Dynamics::Glauber
        }
        fn birth(&self, x: usize, a: f64) -> f64 {
            Rates::Glauber.birth(x, a) + 1e-6
        }
        fn death(&self, x: usize, a: f64) -> f64 {
            Rates::Glauber.death(x, a)
        }
    }

    #[test]
    fn perturbation_is_detected() {
        let r = detailed_balance_residual(&fixtures::a2(), &Perturbed, None).unwrap();
        assert!((r.max_residual - 1e-6).abs() < 1e-9);
    }

    #[test]
    fn a2_glauber_constants() {
        let k = fixtures::a2();
        let lc = liggett_constants(&k, &Rates::Glauber, None).unwrap();
        assert_eq!(lc.epsilon, 1.0);
        let g = lc.gamma.as_ref().unwrap();
        let expected = 2.0 * (2.0 / 3.0 - 1.875 / 2.875);
        assert!((g[(0, 1)] - expected).abs() < 1e-15);
        assert!((lc.m_exact.unwrap() - 0.028986).abs() < 1e-6);
        assert!((lc.m1_bound - 0.481481).abs() < 1e-6);
        assert!((lc.m1_exact.unwrap() - 0.125).abs() < 1e-15);
        assert!(lc.m_exact.unwrap() <= lc.a0 * lc.m1_exact.unwrap());
        assert!(lc.m1_exact.unwrap() <= lc.m1_bound);
        assert!(lc.ergodic);
        assert!((lc.c_sup - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn diagonal_kernel_has_no_interaction() {
        let k = fixtures::diagonal(4, 2.5);
        let lc = liggett_constants(&k, &Rates::Glauber, None).unwrap();
        assert_eq!((lc.m_exact, lc.epsilon, lc.ergodic), (Some(0.0), 1.0, true));
        let spec = RateSpec::nearest_neighbor(k.space(), 0.3).unwrap();
        let lk = liggett_constants(&k, &Rates::Kawasaki(spec), None).unwrap();
        assert_eq!(lk.m_interaction, Some(0.0));
    }

    #[test]
    fn kawasaki_bounds_hold() {
        let k = fixtures::torus_nearest_neighbor(&[7], 1.5, 0.25);
        for t in [0.0, 0.5, 1.0] {
            let spec = RateSpec::nearest_neighbor(k.space(), t).unwrap();
            let rates = Rates::Kawasaki(spec.clone());
            let lc = liggett_constants(&k, &rates, None).unwrap();
            assert!(lc.m_interaction.unwrap() <= lc.a0 * lc.m1_exact.unwrap() + 1e-12);
            assert!(lc.m1_exact.unwrap() <= lc.m1_bound + 1e-12);
            assert!(lc.epsilon >= lc.epsilon_lower_bound - 1e-12);
            assert!(lc.c_sup <= spec.d2() * k.op_norm() + 1e-12);
            assert!(lc.m_exact.unwrap() <= lc.m_bound + 1e-12);
            let bound = liggett_constants(&k, &rates, Some(LiggettMode::Bound)).unwrap();
            assert!(!bound.exhaustive && bound.m_exact.is_none());
        }
    }
}
