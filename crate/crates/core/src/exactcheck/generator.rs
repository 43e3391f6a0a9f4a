use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::expm::expm;
use crate::dpp::DppMeasure;
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::linalg;
use crate::papangelou::AlphaTable;
use crate::rates::{Dynamics, LiggettConstants, RateModel};

/// Largest site set for which the full generator is assembled.
pub const GENERATOR_LIMIT: usize = 14;

/// Largest state space handled by dense eigen and exponential routines.
pub const DENSE_STATE_LIMIT: usize = 4096;

/// Generator on all `2^|E|` configurations; state `i` has site `x`
/// occupied iff bit `x` of `i` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    n_sites: usize,
    dynamics: Dynamics,
    /// Off-diagonal `(target, rate)` pairs per state, ascending target.
    rows: Vec<Vec<(usize, f64)>>,
    diagonal: Vec<f64>,
}

impl GeneratorMatrix {
    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_states(&self) -> usize {
        self.rows.len()
    }

    pub fn dynamics(&self) -> Dynamics {
        self.dynamics
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diagonal[i];
        }
        self.rows[i]
            .binary_search_by_key(&j, |e| e.0)
            .map(|p| self.rows[i][p].1)
            .unwrap_or(0.0)
    }

    /// Largest absolute row sum.
    pub fn row_sum_defect(&self) -> f64 {
        self.rows
            .iter()
            .zip(&self.diagonal)
            .map(|(r, d)| (r.iter().map(|e| e.1).sum::<f64>() + d).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Result<DMatrix<f64>> {
        let m = self.n_states();
        if m > DENSE_STATE_LIMIT {
            return Err(Error::TooManySites {
                n_sites: self.n_sites,
                limit: DENSE_STATE_LIMIT.trailing_zeros() as usize,
            });
        }
        let mut l = DMatrix::zeros(m, m);
        for (i, row) in self.rows.iter().enumerate() {
            l[(i, i)] = self.diagonal[i];
            for &(j, r) in row {
                l[(i, j)] = r;
            }
        }
        Ok(l)
    }

    /// `(L f)(ξ)`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                self.diagonal[i] * f[i] + row.iter().map(|&(j, r)| r * f[j]).sum::<f64>()
            })
            .collect()
    }

    /// `(μᵀ L)(η)`.
    pub fn left_apply(&self, mu: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = mu.iter().zip(&self.diagonal).map(|(m, d)| m * d).collect();
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, r) in row {
                out[j] += mu[i] * r;
            }
        }
        out
    }
}

/// Assembles the generator of `model` on every configuration of `E`.
pub fn build_generator(kernel: &Kernel, model: &dyn RateModel) -> Result<GeneratorMatrix> {
    let n = kernel.n_sites();
    if n > GENERATOR_LIMIT {
        return Err(Error::TooManySites {
            n_sites: n,
            limit: GENERATOR_LIMIT,
        });
    }
    let table = AlphaTable::build(kernel)?;
    let dynamics = model.dynamics();
    let rows: Vec<Vec<(usize, f64)>> = (0..1u64 << n)
        .into_par_iter()
        .map(|mask| {
            let mut row = Vec::new();
            match dynamics {
                Dynamics::Glauber => {
                    for x in 0..n {
                        let bit = 1u64 << x;
                        let rate = if mask & bit != 0 {
                            model.death(x, table.get(x, mask & !bit))
                        } else {
                            model.birth(x, table.get(x, mask))
                        };
                        if rate != 0.0 {
                            row.push(((mask ^ bit) as usize, rate));
                        }
                    }
                }
                Dynamics::Kawasaki => {
                    for x in linalg::mask_sites(mask) {
                        let rest = mask & !(1u64 << x);
                        let ax = table.get(x, rest);
                        for y in (0..n).filter(|&y| mask >> y & 1 == 0) {
                            let rate = model.jump(x, y, ax, table.get(y, rest));
                            if rate != 0.0 {
                                row.push(((rest | 1u64 << y) as usize, rate));
                            }
                        }
                    }
                }
            }
            row.sort_by_key(|e| e.0);
            row
        })
        .collect();
    let diagonal = rows
        .iter()
        .map(|r| -r.iter().map(|e| e.1).sum::<f64>())
        .collect();
    Ok(GeneratorMatrix {
        n_sites: n,
        dynamics,
        rows,
        diagonal,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvarianceReport {
    /// `‖μᵀ L‖_∞`.
    pub stationarity: f64,
    /// `max |μ(ξ) L(ξ, η) - μ(η) L(η, ξ)|`.
    pub reversibility: f64,
    pub row_sum_defect: f64,
}

pub fn invariance_residual(kernel: &Kernel, model: &dyn RateModel) -> Result<InvarianceReport> {
    let gen = build_generator(kernel, model)?;
    let mu = DppMeasure::new(kernel).full_distribution()?;
    Ok(invariance_of(&gen, &mu))
}

pub fn invariance_of(gen: &GeneratorMatrix, mu: &[f64]) -> InvarianceReport {
    let stationarity = gen
        .left_apply(mu)
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    InvarianceReport {
        stationarity,
        reversibility: reversibility_defect(gen, mu),
        row_sum_defect: gen.row_sum_defect(),
    }
}

fn reversibility_defect(gen: &GeneratorMatrix, mu: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..gen.n_states() {
        for &(j, r) in gen.row(i) {
            worst = worst.max((mu[i] * r - mu[j] * gen.entry(j, i)).abs());
        }
    }
    worst
}

/// Smallest nonzero eigenvalue of `-L` in `L²(μ)`, per sector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    /// `(particle number, gap)`; Glauber reports a single entry with
    /// `None`.
    pub sectors: Vec<(Option<usize>, f64)>,
    pub min_gap: f64,
}

/// Relative reversibility tolerance accepted before computing a gap.
const REVERSIBILITY_TOL: f64 = 1e-9;

pub fn spectral_gap(gen: &GeneratorMatrix, mu: &[f64]) -> Result<GapReport> {
    let scale = mu.iter().cloned().fold(0.0, f64::max)
        * gen.diagonal.iter().map(|d| d.abs()).fold(0.0, f64::max);
    let residual = reversibility_defect(gen, mu);
    if residual > REVERSIBILITY_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotReversible { residual });
    }
    let n = gen.n_sites();
    let sectors: Vec<Option<usize>> = match gen.dynamics {
        Dynamics::Glauber => vec![None],
        Dynamics::Kawasaki => (1..n).map(Some).collect(),
    };
    let mut out = Vec::new();
    for sector in sectors {
        let states: Vec<usize> = (0..gen.n_states())
            .filter(|&s| sector.is_none_or(|k| (s as u64).count_ones() as usize == k))
            .collect();
        if states.len() > DENSE_STATE_LIMIT {
            return Err(Error::TooManySites {
                n_sites: n,
                limit: DENSE_STATE_LIMIT.trailing_zeros() as usize,
            });
        }
        let mut local = vec![usize::MAX; gen.n_states()];
        for (i, &s) in states.iter().enumerate() {
            local[s] = i;
        }
        let m = states.len();
        let root: Vec<f64> = states.iter().map(|&s| mu[s].sqrt()).collect();
        let mut sym = DMatrix::zeros(m, m);
        for (i, &s) in states.iter().enumerate() {
            sym[(i, i)] = -gen.diagonal[s];
            for &(t, r) in gen.row(s) {
                let j = local[t];
                if j != usize::MAX {
                    sym[(i, j)] -= 0.5 * root[i] * r / root[j];
                    sym[(j, i)] -= 0.5 * root[i] * r / root[j];
                }
            }
        }
        let eig = linalg::real_symmetric_eigenvalues(&sym);
        out.push((sector, eig.get(1).copied().unwrap_or(f64::INFINITY)));
    }
    let min_gap = out.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    Ok(GapReport {
        sectors: out,
        min_gap,
    })
}

/// `Δ_f(x) = max_{ξ ∌ x} |f(xξ) - f(ξ)|` for a function on states.
pub fn oscillation(n_sites: usize, f: &[f64]) -> Vec<f64> {
    (0..n_sites)
        .map(|x| {
            let bit = 1usize << x;
            (0..f.len())
                .filter(|s| s & bit == 0)
                .map(|s| (f[s | bit] - f[s]).abs())
                .fold(0.0, f64::max)
        })
        .collect()
}

/// `|||f||| = Σ_x Δ_f(x)`.
pub fn triple_norm(n_sites: usize, f: &[f64]) -> f64 {
    oscillation(n_sites, f).iter().sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionPoint {
    pub t: f64,
    pub function: usize,
    pub norm: f64,
    /// `exp((M - ε) t) |||f|||`.
    pub bound: f64,
    /// Largest excess of `Δ_{T_t f}` over `e^{-εt} exp(t Γᵀ) Δ_f`, or
    /// `None` without `Γ`.
    pub vector_excess: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionReport {
    pub points: Vec<ContractionPoint>,
    /// Largest `|||T_t f||| - bound` over all points.
    pub max_excess: f64,
    pub max_vector_excess: Option<f64>,
}

/// Checks `|||T_t f||| <= exp((M - ε) t) |||f|||` and the componentwise
/// bound on `Δ_{T_t f}` for each function and time.
pub fn contraction_check(
    gen: &GeneratorMatrix,
    functions: &[Vec<f64>],
    times: &[f64],
    constants: &LiggettConstants,
) -> Result<ContractionReport> {
    let n = gen.n_sites();
    let l = gen.to_dense()?;
    for f in functions {
        if f.len() != gen.n_states() {
            return Err(Error::DimensionMismatch {
                expected: gen.n_states(),
                found: f.len(),
            });
        }
    }
    let (m, eps) = (constants.m(), constants.epsilon);
    let mut points = Vec::new();
    for &t in times {
        let semigroup = expm(&(&l * t));
        let gamma_flow = constants.gamma.as_ref().map(|g| expm(&(g.transpose() * t)));
        for (fi, f) in functions.iter().enumerate() {
            let fv = nalgebra::DVector::from_column_slice(f);
            let tf = &semigroup * fv;
            let delta0 = oscillation(n, f);
            let delta_t = oscillation(n, tf.as_slice());
            let norm: f64 = delta_t.iter().sum();
            let bound = ((m - eps) * t).exp() * delta0.iter().sum::<f64>();
            let vector_excess = gamma_flow.as_ref().map(|flow| {
                let d0 = nalgebra::DVector::from_column_slice(&delta0);
                let rhs = flow * d0 * (-eps * t).exp();
                delta_t
                    .iter()
                    .zip(rhs.iter())
                    .map(|(a, b)| a - b)
                    .fold(f64::NEG_INFINITY, f64::max)
            });
            points.push(ContractionPoint {
                t,
                function: fi,
                norm,
                bound,
                vector_excess,
            });
        }
    }
    let max_excess = points
        .iter()
        .map(|p| p.norm - p.bound)
        .fold(f64::NEG_INFINITY, f64::max);
    let max_vector_excess = points
        .iter()
        .filter_map(|p| p.vector_excess)
        .reduce(f64::max);
    Ok(ContractionReport {
        points,
        max_excess,
        max_vector_excess,
    })
}

/// `exp(tL)` from the eigendecomposition of the symmetrized generator; an
/// independent route to the Padé exponential for reversible chains.
pub fn reversible_semigroup(gen: &GeneratorMatrix, mu: &[f64], t: f64) -> Result<DMatrix<f64>> {
    let l = gen.to_dense()?;
    let m = l.nrows();
    let root: Vec<f64> = mu.iter().map(|v| v.sqrt()).collect();
    let mut sym = DMatrix::from_fn(m, m, |i, j| root[i] * l[(i, j)] / root[j]);
    sym = (&sym + sym.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let exp_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| (v * t).exp()));
    let s = &eig.eigenvectors * exp_diag * eig.eigenvectors.transpose();
    Ok(DMatrix::from_fn(m, m, |i, j| s[(i, j)] * root[j] / root[i]))
}
