//! Incremental Cholesky maintenance of `A(ξ, ξ)` for repeated intensity
//! queries while `ξ` changes one site at a time.
//!
//! Sites are kept in insertion order and the factor `L` (with
//! `L L* = A(ξ, ξ)` in that order) is stored as packed rows. Adding a site
//! appends a row; removing the site at position `k` drops row `k` and
//! restores triangularity of the trailing block with Givens rotations acting
//! on column pairs `(i, i + 1)`.

use crate::configuration::Configuration;
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::linalg::C64;

pub const DEFAULT_REFACTOR_PERIOD: usize = 256;

const ABSENT: usize = usize::MAX;

#[derive(Debug, Clone)]
pub struct PapangelouEngine<'k> {
    kernel: &'k Kernel,
    config: Configuration,
    order: Vec<usize>,
    position: Vec<usize>,
    rows: Vec<Vec<C64>>,
    refactor_period: usize,
    updates_since_refactor: usize,
    refactorizations: usize,
}

impl<'k> PapangelouEngine<'k> {
    pub fn new(kernel: &'k Kernel, initial: &Configuration) -> Result<Self> {
        Self::with_period(kernel, initial, DEFAULT_REFACTOR_PERIOD)
    }

    pub fn with_period(
        kernel: &'k Kernel,
        initial: &Configuration,
        refactor_period: usize,
    ) -> Result<Self> {
        if initial.n_sites() != kernel.n_sites() {
            return Err(Error::DimensionMismatch {
                expected: kernel.n_sites(),
                found: initial.n_sites(),
            });
        }
        let mut engine = PapangelouEngine {
            kernel,
            config: Configuration::empty(kernel.n_sites()),
            order: Vec::with_capacity(initial.len()),
            position: vec![ABSENT; kernel.n_sites()],
            rows: Vec::with_capacity(initial.len()),
            refactor_period: refactor_period.max(1),
            updates_since_refactor: 0,
            refactorizations: 0,
        };
        for x in initial.iter() {
            engine.append(x)?;
        }
        Ok(engine)
    }

    pub fn kernel(&self) -> &'k Kernel {
        self.kernel
    }

    pub fn configuration(&self) -> &Configuration {
        &self.config
    }

    pub fn refactorizations(&self) -> usize {
        self.refactorizations
    }

    /// `L^{-1} b` for `b` given in the engine's site order.
    fn forward(&self, b: &mut [C64]) {
        for i in 0..b.len() {
            let row = &self.rows[i];
            let mut s = b[i];
            for j in 0..i {
                s -= row[j] * b[j];
            }
            b[i] = s / row[i];
        }
    }

    /// `L^{-*} z`.
    fn backward(&self, z: &mut [C64]) {
        let m = z.len();
        for i in (0..m).rev() {
            let mut s = z[i];
            for j in (i + 1)..m {
                s -= self.rows[j][i].conj() * z[j];
            }
            z[i] = s / self.rows[i][i];
        }
    }

    fn kernel_column(&self, y: usize) -> Vec<C64> {
        let a = self.kernel.a();
        self.order.iter().map(|&s| a[(s, y)]).collect()
    }

    fn tolerance(&self) -> f64 {
        super::SINGULAR_TOL * self.kernel.op_norm()
    }

    fn append(&mut self, x: usize) -> Result<()> {
        let mut z = self.kernel_column(x);
        self.forward(&mut z);
        let schur = self.kernel.diag(x) - z.iter().map(|v| v.norm_sqr()).sum::<f64>();
        if !(schur > self.tolerance()) {
            return Err(Error::NumericallySingular { value: schur });
        }
        // A(ξ, x) = L conj(row)
        let mut row: Vec<C64> = z.iter().map(|v| v.conj()).collect();
        row.push(C64::new(schur.sqrt(), 0.0));
        self.rows.push(row);
        self.position[x] = self.order.len();
        self.order.push(x);
        self.config.insert(x)?;
        Ok(())
    }

    fn delete(&mut self, x: usize) -> Result<()> {
        let k = self.position[x];
        self.rows.remove(k);
        self.order.remove(k);
        self.position[x] = ABSENT;
        for (i, &s) in self.order.iter().enumerate().skip(k) {
            self.position[s] = i;
        }
        let m = self.rows.len();
        for i in k..m {
            let a = self.rows[i][i];
            let b = self.rows[i][i + 1];
            let r = a.norm().hypot(b.norm());
            if !(r > 0.0) {
                return Err(Error::NumericallySingular { value: r });
            }
            for row in self.rows[i..].iter_mut() {
                let (p, q) = (row[i], row[i + 1]);
                row[i] = (a.conj() * p + b.conj() * q) / r;
                row[i + 1] = (-b * p + a * q) / r;
            }
            self.rows[i].pop();
            self.rows[i][i] = C64::new(self.rows[i][i].re, 0.0);
        }
        self.config.remove(x)?;
        Ok(())
    }

    fn after_update(&mut self) -> Result<()> {
        self.updates_since_refactor += 1;
        if self.updates_since_refactor >= self.refactor_period {
            self.refactorize()?;
        }
        Ok(())
    }

    /// Rebuilds the factor from scratch in the current site order.
    pub fn refactorize(&mut self) -> Result<()> {
        let order = std::mem::take(&mut self.order);
        self.rows.clear();
        self.position.iter_mut().for_each(|p| *p = ABSENT);
        self.config = Configuration::empty(self.kernel.n_sites());
        for x in order {
            self.append(x)
                .map_err(|e| Error::RefactorizationFailure(e.to_string()))?;
        }
        self.updates_since_refactor = 0;
        self.refactorizations += 1;
        Ok(())
    }

    pub fn add(&mut self, x: usize) -> Result<()> {
        if x >= self.kernel.n_sites() {
            return Err(Error::SiteOutOfRange {
                site: x,
                n_sites: self.kernel.n_sites(),
            });
        }
        if self.config.contains(x) {
            return Err(Error::SiteOccupied(x));
        }
        self.append(x)?;
        self.after_update()
    }

    pub fn remove(&mut self, x: usize) -> Result<()> {
        if !self.config.contains(x) {
            return Err(if x >= self.kernel.n_sites() {
                Error::SiteOutOfRange {
                    site: x,
                    n_sites: self.kernel.n_sites(),
                }
            } else {
                Error::SiteEmpty(x)
            });
        }
        self.delete(x)?;
        self.after_update()
    }

    /// `α(y; ξ)` for an empty site `y`.
    pub fn alpha(&self, y: usize) -> Result<f64> {
        if self.config.contains(y) {
            return Err(Error::SiteOccupied(y));
        }
        let mut z = self.kernel_column(y);
        self.forward(&mut z);
        let v = self.kernel.diag(y) - z.iter().map(|v| v.norm_sqr()).sum::<f64>();
        if !(v > self.tolerance()) {
            return Err(Error::NumericallySingular { value: v });
        }
        Ok(v)
    }

    /// `α(x; ξ \ x)` for an occupied site `x`, i.e. `1 / A(ξ, ξ)^{-1}(x, x)`.
    pub fn alpha_removed(&self, x: usize) -> Result<f64> {
        if !self.config.contains(x) {
            return Err(Error::SiteEmpty(x));
        }
        let inv = self.inverse_diagonal_at(self.position[x]);
        Ok(1.0 / inv)
    }

    fn inverse_diagonal_at(&self, p: usize) -> f64 {
        // ‖L^{-1} e_p‖², entries before p vanish
        let m = self.order.len();
        let mut z = vec![C64::new(0.0, 0.0); m];
        z[p] = C64::new(1.0, 0.0) / self.rows[p][p];
        for i in (p + 1)..m {
            let row = &self.rows[i];
            let mut s = C64::new(0.0, 0.0);
            for j in p..i {
                s -= row[j] * z[j];
            }
            z[i] = s / row[i];
        }
        z.iter().map(|v| v.norm_sqr()).sum()
    }

    /// `A(ξ, ξ)^{-1} b` with `b` indexed by the engine's site order.
    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let mut z = b.to_vec();
        self.forward(&mut z);
        self.backward(&mut z);
        z
    }

    /// `log det A(ξ, ξ)`.
    pub fn log_det(&self) -> f64 {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| 2.0 * r[i].re.ln())
            .sum()
    }

    /// Sites in factor order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Largest entry of `L L* - A(ξ, ξ)`.
    pub fn factor_error(&self) -> f64 {
        let a = self.kernel.a();
        let m = self.order.len();
        let mut worst = 0.0f64;
        for i in 0..m {
            for j in 0..=i {
                let mut s = C64::new(0.0, 0.0);
                for t in 0..=j {
                    s += self.rows[i][t] * self.rows[j][t].conj();
                }
                worst = worst.max((s - a[(self.order[i], self.order[j])]).norm());
            }
        }
        worst
    }

    /// All intensities needed to evaluate flip and jump rates in the current
    /// configuration.
    pub fn snapshot(&self) -> Result<IntensitySnapshot> {
        let n = self.kernel.n_sites();
        let m = self.order.len();
        let mut alpha = vec![f64::NAN; n];
        let mut inverse_diag = vec![f64::NAN; n];
        let mut projections = vec![Vec::new(); n];
        for y in 0..n {
            if self.config.contains(y) {
                continue;
            }
            let g = self.kernel_column(y);
            let mut z = g.clone();
            self.forward(&mut z);
            let v = self.kernel.diag(y) - z.iter().map(|v| v.norm_sqr()).sum::<f64>();
            if !(v > self.tolerance()) {
                return Err(Error::NumericallySingular { value: v });
            }
            alpha[y] = v;
            self.backward(&mut z);
            projections[y] = z;
        }
        for p in 0..m {
            inverse_diag[self.order[p]] = self.inverse_diagonal_at(p);
        }
        Ok(IntensitySnapshot {
            position: self.position.clone(),
            alpha,
            inverse_diag,
            projections,
        })
    }
}

/// Intensities of one configuration `ξ`.
#[derive(Debug, Clone)]
pub struct IntensitySnapshot {
    position: Vec<usize>,
    alpha: Vec<f64>,
    inverse_diag: Vec<f64>,
    /// `A(ξ, ξ)^{-1} A(ξ, y)` for each empty `y`, in factor order.
    projections: Vec<Vec<C64>>,
}

impl IntensitySnapshot {
    /// `α(y; ξ)` for an empty site.
    pub fn alpha(&self, y: usize) -> f64 {
        self.alpha[y]
    }

    /// `α(x; ξ \ x)` for an occupied site.
    pub fn alpha_removed(&self, x: usize) -> f64 {
        1.0 / self.inverse_diag[x]
    }

    /// `(α(x; ξ \ x), α(y; ξ \ x))` for occupied `x` and empty `y`, using
    /// `α(y; ξ \ x) = α(y; ξ) + |v_x|² / A(ξ,ξ)^{-1}(x,x)` with
    /// `v = A(ξ,ξ)^{-1} A(ξ,y)`.
    pub fn pair(&self, x: usize, y: usize) -> (f64, f64) {
        let inv = self.inverse_diag[x];
        let v = self.projections[y][self.position[x]];
        (1.0 / inv, self.alpha[y] + v.norm_sqr() / inv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::papangelou::alpha;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_add_matches_scratch() {
        let k = fixtures::random_dominant(7, 0.3, 0.3, 5);
        for x in 0..7 {
            let mut e = PapangelouEngine::new(&k, &Configuration::empty(7)).unwrap();
            e.add(x).unwrap();
            let xi = Configuration::from_sites(7, &[x]).unwrap();
            for y in (0..7).filter(|&y| y != x) {
                assert!((e.alpha(y).unwrap() - alpha(&k, y, &xi).unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn add_then_remove_restores_state() {
        let k = fixtures::random_complex_dominant(8, 0.2, 0.2, 9);
        let start = Configuration::from_sites(8, &[1, 4, 6]).unwrap();
        let mut e = PapangelouEngine::new(&k, &start).unwrap();
        let before: Vec<f64> = start.holes().iter().map(|&y| e.alpha(y).unwrap()).collect();
        e.add(2).unwrap();
        e.remove(2).unwrap();
        let after: Vec<f64> = start.holes().iter().map(|&y| e.alpha(y).unwrap()).collect();
        for (b, a) in before.iter().zip(&after) {
            assert!((b - a).abs() < 1e-10);
        }
    }

    #[test]
    fn deletion_from_middle_keeps_factor_exact() {
        let k = fixtures::random_complex_dominant(10, 0.2, 0.2, 2);
        let start = Configuration::from_sites(10, &[0, 2, 3, 5, 7, 9]).unwrap();
        let mut e = PapangelouEngine::new(&k, &start).unwrap();
        e.remove(3).unwrap();
        e.remove(0).unwrap();
        assert!(e.factor_error() < 1e-13, "{}", e.factor_error());
        let xi = e.configuration().clone();
        for y in xi.holes() {
            assert!((e.alpha(y).unwrap() - alpha(&k, y, &xi).unwrap()).abs() < 1e-12);
        }
        for x in xi.iter() {
            let scratch = alpha(&k, x, &xi.without(x).unwrap()).unwrap();
            assert!((e.alpha_removed(x).unwrap() - scratch).abs() < 1e-12);
        }
    }

    #[test]
    fn snapshot_pairs_match_scratch() {
        let k = fixtures::random_dominant(8, 0.3, 0.2, 4);
        let xi = Configuration::from_sites(8, &[1, 2, 5]).unwrap();
        let e = PapangelouEngine::new(&k, &xi).unwrap();
        let snap = e.snapshot().unwrap();
        for x in xi.iter() {
            let reduced = xi.without(x).unwrap();
            for y in xi.holes() {
                let (ax, ay) = snap.pair(x, y);
                assert!((ax - alpha(&k, x, &reduced).unwrap()).abs() < 1e-12);
                assert!((ay - alpha(&k, y, &reduced).unwrap()).abs() < 1e-12);
            }
        }
        let solved = e.solve(&e.order().iter().map(|&s| k.a()[(s, 0)]).collect::<Vec<_>>());
        assert_eq!(solved.len(), 3);
    }

    #[test]
    fn log_det_tracks_updates() {
        let k = fixtures::random_dominant(6, 0.3, 0.3, 8);
        let mut e = PapangelouEngine::new(&k, &Configuration::empty(6)).unwrap();
        assert_eq!(e.log_det(), 0.0);
        e.add(3).unwrap();
        e.add(1).unwrap();
        e.add(4).unwrap();
        e.remove(1).unwrap();
        let sub = crate::linalg::principal(k.a(), &[3, 4]);
        let expected = crate::linalg::logdet_hpd(&sub).unwrap();
        assert!((e.log_det() - expected).abs() < 1e-12);
    }

    #[test]
    fn illegal_updates_rejected() {
        let k = fixtures::a2();
        let mut e = PapangelouEngine::new(&k, &Configuration::empty(2)).unwrap();
        e.add(0).unwrap();
        assert_eq!(e.add(0), Err(Error::SiteOccupied(0)));
        assert_eq!(e.remove(1), Err(Error::SiteEmpty(1)));
        assert_eq!(e.alpha(0), Err(Error::SiteOccupied(0)));
        assert_eq!(e.alpha_removed(1), Err(Error::SiteEmpty(1)));
    }

    #[test]
    fn periodic_refactorization_runs() {
        let k = fixtures::random_dominant(12, 0.2, 0.2, 1);
        let mut e = PapangelouEngine::with_period(&k, &Configuration::empty(12), 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x = rng.random_range(0..12);
            if e.configuration().contains(x) {
                e.remove(x).unwrap();
            } else {
                e.add(x).unwrap();
            }
        }
        assert_eq!(e.refactorizations(), 200 / 16);
        assert!(e.factor_error() < 1e-12);
    }
}
