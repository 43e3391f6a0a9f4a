//! Kernel operators `A` on a finite site set and the derived marginal
//! kernel `K = A (I + A)^{-1}`.

use std::fmt;
use std::path::PathBuf;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, abs1, c, CMatrix, C64};

/// Relative tolerance for the Hermiticity and positivity checks.
pub const VALIDATION_TOL: f64 = 1e-10;

/// Condition number above which `I - K_Λ` is treated as singular.
pub const RESTRICTION_CONDITION_LIMIT: f64 = 1e12;

/// The finite site set, optionally carrying a torus geometry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteSpace {
    n_sites: usize,
    torus: Option<Vec<usize>>,
}

impl SiteSpace {
    pub fn new(n_sites: usize) -> Result<Self> {
        if n_sites == 0 {
            return Err(Error::validation("n_sites", "must be at least 1"));
        }
        Ok(SiteSpace {
            n_sites,
            torus: None,
        })
    }

    /// Torus `Z_{L1} x .. x Z_{Ld}`; site ids enumerate coordinates with the
    /// first axis varying fastest.
    pub fn torus(sides: &[usize]) -> Result<Self> {
        if sides.is_empty() || sides.contains(&0) {
            return Err(Error::validation("torus", "side lengths must be positive"));
        }
        let n_sites = sides.iter().product();
        Ok(SiteSpace {
            n_sites,
            torus: Some(sides.to_vec()),
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn sides(&self) -> Option<&[usize]> {
        self.torus.as_deref()
    }

    pub fn dimension(&self) -> Option<usize> {
        self.torus.as_ref().map(Vec::len)
    }

    pub fn coordinates(&self, site: usize) -> Option<Vec<usize>> {
        let sides = self.torus.as_ref()?;
        let mut rest = site;
        Some(
            sides
                .iter()
                .map(|&l| {
                    let v = rest % l;
                    rest /= l;
                    v
                })
                .collect(),
        )
    }

    pub fn site(&self, coords: &[usize]) -> Option<usize> {
        let sides = self.torus.as_ref()?;
        if coords.len() != sides.len() || coords.iter().zip(sides).any(|(c, l)| c >= l) {
            return None;
        }
        let mut id = 0;
        for (c, l) in coords.iter().zip(sides).rev() {
            id = id * l + c;
        }
        Some(id)
    }

    /// L1 distance on the torus.
    pub fn torus_distance(&self, x: usize, y: usize) -> Option<usize> {
        let sides = self.torus.as_ref()?;
        let (cx, cy) = (self.coordinates(x)?, self.coordinates(y)?);
        Some(
            cx.iter()
                .zip(&cy)
                .zip(sides)
                .map(|((&a, &b), &l)| {
                    let d = a.abs_diff(b);
                    d.min(l - d)
                })
                .sum(),
        )
    }

    /// Nearest neighbours with multiplicity: on an axis of side 2 the two
    /// directions coincide and the neighbour is listed twice; side 1 axes
    /// contribute nothing.
    pub fn neighbor_steps(&self, x: usize) -> Option<Vec<usize>> {
        let sides = self.torus.as_ref()?;
        let coords = self.coordinates(x)?;
        let mut out = Vec::with_capacity(2 * sides.len());
        for (axis, &l) in sides.iter().enumerate() {
            if l < 2 {
                continue;
            }
            for step in [1, l - 1] {
                let mut nc = coords.clone();
                nc[axis] = (nc[axis] + step) % l;
                out.push(self.site(&nc)?);
            }
        }
        Some(out)
    }
}

/// A decay profile for torus convolutions: `amplitude * exp(-rate * r)` for
/// distances `1 <= r <= cutoff`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayProfile {
    pub amplitude: f64,
    pub rate: f64,
    pub cutoff: usize,
}

/// One matrix entry in a configuration file: a plain number or a string
/// `"re"`, `"re+imj"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Real(f64),
    Text(String),
}

impl Entry {
    pub fn value(&self) -> Result<C64> {
        match self {
            Entry::Real(v) => Ok(c(*v)),
            Entry::Text(s) => parse_complex(s),
        }
    }

    pub fn from_value(z: C64) -> Self {
        if z.im == 0.0 {
            Entry::Real(z.re)
        } else {
            Entry::Text(format_complex(z))
        }
    }
}

/// How to build `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelSpec {
    /// `A = a I`.
    ScalarDiagonal {
        a: f64,
    },
    /// `A = a I + C` with `C(x, y)` depending only on the torus distance.
    /// `coefficients[r - 1]` is the coupling at distance `r`.
    TorusConvolution {
        a: f64,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        coefficients: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        decay: Option<DecayProfile>,
    },
    Explicit {
        matrix: Vec<Vec<Entry>>,
    },
    /// Dense text file: `n` on the first line, then `n` rows of entries.
    MatrixFile {
        path: PathBuf,
    },
}

impl KernelSpec {
    pub fn matrix(&self, space: &SiteSpace) -> Result<CMatrix> {
        let n = space.n_sites();
        match self {
            KernelSpec::ScalarDiagonal { a } => Ok(CMatrix::identity(n, n) * c(*a)),
            KernelSpec::TorusConvolution {
                a,
                coefficients,
                decay,
            } => {
                if space.sides().is_none() {
                    return Err(Error::validation(
                        "kernel.kind",
                        "torus-convolution requires a torus geometry",
                    ));
                }
                if !coefficients.is_empty() && decay.is_some() {
                    return Err(Error::validation(
                        "kernel",
                        "give either coefficients or decay, not both",
                    ));
                }
                let coupling = |r: usize| -> f64 {
                    if r == 0 {
                        return 0.0;
                    }
                    if let Some(d) = decay {
                        if r <= d.cutoff {
                            d.amplitude * (-d.rate * r as f64).exp()
                        } else {
                            0.0
                        }
                    } else {
                        coefficients.get(r - 1).copied().unwrap_or(0.0)
                    }
                };
                let mut m = CMatrix::identity(n, n) * c(*a);
                for x in 0..n {
                    for y in 0..n {
                        if x != y {
                            let r = space.torus_distance(x, y).expect("torus geometry");
                            m[(x, y)] += c(coupling(r));
                        }
                    }
                }
                Ok(m)
            }
            KernelSpec::Explicit { matrix } => {
                if matrix.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        found: matrix.len(),
                    });
                }
                let mut m = CMatrix::zeros(n, n);
                for (i, row) in matrix.iter().enumerate() {
                    if row.len() != n {
                        return Err(Error::DimensionMismatch {
                            expected: n,
                            found: row.len(),
                        });
                    }
                    for (j, e) in row.iter().enumerate() {
                        m[(i, j)] = e.value()?;
                    }
                }
                Ok(m)
            }
            KernelSpec::MatrixFile { path } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                let m = parse_matrix_text(&text)?;
                if m.nrows() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        found: m.nrows(),
                    });
                }
                Ok(m)
            }
        }
    }
}

/// A validated Hermitian positive definite kernel with cached derived data.
#[derive(Clone)]
pub struct Kernel {
    space: SiteSpace,
    a: CMatrix,
    k: CMatrix,
    lambda_margin: f64,
    q_exact: f64,
    q_value: f64,
    op_norm: f64,
    min_eigenvalue: f64,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel")
            .field("n_sites", &self.n_sites())
            .field("lambda_margin", &self.lambda_margin)
            .field("q_value", &self.q_value)
            .field("op_norm", &self.op_norm)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionA {
    pub holds: bool,
    pub lambda: f64,
}

pub fn build_kernel(spec: &KernelSpec, space: &SiteSpace) -> Result<Kernel> {
    Kernel::from_matrix(spec.matrix(space)?, space.clone())
}

impl Kernel {
    pub fn from_matrix(a: CMatrix, space: SiteSpace) -> Result<Self> {
        let n = space.n_sites();
        if a.nrows() != n || a.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: a.nrows().max(a.ncols()),
            });
        }
        let herm = (&a + a.adjoint()) * c(0.5);
        let eig = linalg::hermitian_eigenvalues(&herm);
        let min_eigenvalue = eig[0];
        let op_norm = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = VALIDATION_TOL * op_norm.max(f64::MIN_POSITIVE);
        let deviation = linalg::max_abs_diff(&a, &a.adjoint());
        if deviation > tol {
            return Err(Error::NotHermitian {
                deviation,
                tolerance: tol,
            });
        }
        if min_eigenvalue <= tol {
            return Err(Error::NotPositiveDefinite { min_eigenvalue });
        }
        let a = herm;

        // K solves (I + A) K = A; I + A is well conditioned since A > 0.
        let i_plus_a = CMatrix::identity(n, n) + &a;
        let k = linalg::cholesky(&i_plus_a)
            .ok_or(Error::NotPositiveDefinite { min_eigenvalue })?
            .solve(&a);
        let k = (&k + k.adjoint()) * c(0.5);

        let mut lambda_margin = f64::INFINITY;
        let mut q_exact = 0.0f64;
        for x in 0..n {
            let off: f64 = (0..n).filter(|&y| y != x).map(|y| abs1(a[(x, y)])).sum();
            lambda_margin = lambda_margin.min(a[(x, x)].re - off);
            q_exact = q_exact.max(off);
        }
        Ok(Kernel {
            space,
            a,
            k,
            lambda_margin,
            q_exact,
            q_value: q_exact,
            op_norm,
            min_eigenvalue,
        })
    }

    /// Convenience constructor for a real matrix on a plain site set.
    pub fn from_real(a: DMatrix<f64>) -> Result<Self> {
        let space = SiteSpace::new(a.nrows())?;
        Kernel::from_matrix(linalg::to_complex(&a), space)
    }

    /// Raise the constant `q` used by the inverse bounds; it may not drop
    /// below `q(A)`.
    pub fn with_q(mut self, q: f64) -> Result<Self> {
        if !(q >= self.q_exact * (1.0 - 1e-12)) || !q.is_finite() {
            return Err(Error::validation(
                "q",
                format!("q = {q} must be at least q(A) = {}", self.q_exact),
            ));
        }
        self.q_value = q;
        Ok(self)
    }

    pub fn space(&self) -> &SiteSpace {
        &self.space
    }

    pub fn n_sites(&self) -> usize {
        self.space.n_sites()
    }

    pub fn a(&self) -> &CMatrix {
        &self.a
    }

    pub fn k(&self) -> &CMatrix {
        &self.k
    }

    pub fn lambda_margin(&self) -> f64 {
        self.lambda_margin
    }

    /// `q(A) = max_x sum_{y != x} |A(x, y)|_1`.
    pub fn q_exact(&self) -> f64 {
        self.q_exact
    }

    pub fn q_value(&self) -> f64 {
        self.q_value
    }

    /// Largest eigenvalue of `A`.
    pub fn op_norm(&self) -> f64 {
        self.op_norm
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    pub fn is_real(&self) -> bool {
        linalg::is_real(&self.a)
    }

    pub fn diag(&self, x: usize) -> f64 {
        self.a[(x, x)].re
    }

    pub fn check_assumption_a(&self) -> AssumptionA {
        AssumptionA {
            holds: self.lambda_margin > 0.0,
            lambda: self.lambda_margin,
        }
    }

    /// `A_[Λ] = K_Λ (I_Λ - K_Λ)^{-1}` on the window `Λ` (rows in the given
    /// order).
    pub fn restrict_a_bracket(&self, window: &[usize]) -> Result<CMatrix> {
        for &x in window {
            if x >= self.n_sites() {
                return Err(Error::SiteOutOfRange {
                    site: x,
                    n_sites: self.n_sites(),
                });
            }
        }
        let m = window.len();
        if m == 0 {
            return Ok(CMatrix::zeros(0, 0));
        }
        let k_win = linalg::principal(&self.k, window);
        let i_minus_k = CMatrix::identity(m, m) - &k_win;
        let eig = linalg::hermitian_eigenvalues(&i_minus_k);
        let (lo, hi) = (eig[0], eig[m - 1]);
        if lo <= 0.0 || hi / lo > RESTRICTION_CONDITION_LIMIT {
            return Err(Error::SingularRestriction {
                condition: if lo <= 0.0 { f64::INFINITY } else { hi / lo },
            });
        }
        let x = linalg::cholesky(&i_minus_k)
            .ok_or(Error::SingularRestriction {
                condition: f64::INFINITY,
            })?
            .solve(&k_win);
        Ok((&x + x.adjoint()) * c(0.5))
    }

    /// Reconstructs `A = K (I - K)^{-1}` from the cached `K`.
    pub fn reconstruct_a(&self) -> Result<CMatrix> {
        let all: Vec<usize> = (0..self.n_sites()).collect();
        self.restrict_a_bracket(&all)
    }
}

pub fn parse_complex(s: &str) -> Result<C64> {
    let t = s.trim();
    let bad = || Error::Parse(format!("invalid complex number {s:?}"));
    if t.is_empty() {
        return Err(bad());
    }
    let Some(body) = t.strip_suffix(['j', 'i']) else {
        return t.parse::<f64>().map(c).map_err(|_| bad());
    };
    // split at the last sign that is not an exponent sign and not leading
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&i| (bytes[i] == b'+' || bytes[i] == b'-') && !matches!(bytes[i - 1], b'e' | b'E'));
    let parse_im = |p: &str| -> Result<f64> {
        match p {
            "" | "+" => Ok(1.0),
            "-" => Ok(-1.0),
            _ => p.parse::<f64>().map_err(|_| bad()),
        }
    };
    match split {
        Some(i) => {
            let re = body[..i].parse::<f64>().map_err(|_| bad())?;
            Ok(C64::new(re, parse_im(&body[i..])?))
        }
        None => Ok(C64::new(0.0, parse_im(body)?)),
    }
}

pub fn format_complex(z: C64) -> String {
    if z.im == 0.0 {
        format!("{}", z.re)
    } else if z.im < 0.0 {
        format!("{}-{}j", z.re, -z.im)
    } else {
        format!("{}+{}j", z.re, z.im)
    }
}

/// Parses the dense text format: `n`, then `n` rows of `n` entries.
pub fn parse_matrix_text(text: &str) -> Result<CMatrix> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let n: usize = lines
        .next()
        .ok_or_else(|| Error::Parse("empty matrix file".into()))?
        .parse()
        .map_err(|_| Error::Parse("first line must be the dimension n".into()))?;
    let mut m = CMatrix::zeros(n, n);
    for i in 0..n {
        let line = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("expected {n} rows, found {i}")))?;
        let row: Vec<&str> = line.split_whitespace().collect();
        if row.len() != n {
            return Err(Error::Parse(format!(
                "row {} has {} entries, expected {n}",
                i + 1,
                row.len()
            )));
        }
        for (j, tok) in row.iter().enumerate() {
            m[(i, j)] = parse_complex(tok)?;
        }
    }
    if lines.next().is_some() {
        return Err(Error::Parse(format!("more than {n} rows")));
    }
    Ok(m)
}

pub fn format_matrix_text(m: &CMatrix) -> String {
    let mut out = format!("{}\n", m.nrows());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format_complex(m[(i, j)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::a2;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn scalar_diagonal_identity() {
        let space = SiteSpace::new(4).unwrap();
        let k = build_kernel(&KernelSpec::ScalarDiagonal { a: 1.0 }, &space).unwrap();
        assert_eq!(k.lambda_margin(), 1.0);
        assert_eq!(k.q_exact(), 0.0);
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { 0.5 } else { 0.0 };
                assert!(close(k.k()[(i, j)].re, expected, 1e-15));
            }
        }
        let check = k.check_assumption_a();
        assert!(check.holds);
        assert_eq!(check.lambda, 1.0);
    }

    #[test]
    fn two_site_worked_example() {
        let k = a2();
        assert!(close(k.lambda_margin(), 1.5, 1e-15));
        assert!(close(k.q_exact(), 0.5, 1e-15));
        assert!(close(k.op_norm(), 2.5, 1e-12));
        assert!(close(k.k()[(0, 0)].re, 23.0 / 35.0, 1e-14));
        assert!(close(k.k()[(0, 1)].re, 2.0 / 35.0, 1e-14));
        assert!(close(k.min_eigenvalue(), 1.5, 1e-12));
    }

    #[test]
    fn torus_nearest_neighbor_margin() {
        let space = SiteSpace::torus(&[8]).unwrap();
        let spec = KernelSpec::TorusConvolution {
            a: 1.0,
            coefficients: vec![0.2],
            decay: None,
        };
        let k = build_kernel(&spec, &space).unwrap();
        assert!(close(k.lambda_margin(), 0.6, 1e-14));
        assert!(close(k.q_exact(), 0.4, 1e-14));
        assert!(close(k.a()[(0, 7)].re, 0.2, 0.0));
        assert!(close(k.a()[(0, 2)].re, 0.0, 0.0));
    }

    #[test]
    fn torus_requires_geometry() {
        let space = SiteSpace::new(8).unwrap();
        let spec = KernelSpec::TorusConvolution {
            a: 1.0,
            coefficients: vec![0.2],
            decay: None,
        };
        assert!(matches!(
            build_kernel(&spec, &space),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn decay_profile_on_two_dimensional_torus() {
        let space = SiteSpace::torus(&[3, 3]).unwrap();
        let spec = KernelSpec::TorusConvolution {
            a: 2.0,
            coefficients: vec![],
            decay: Some(DecayProfile {
                amplitude: 0.1,
                rate: 1.0,
                cutoff: 2,
            }),
        };
        let k = build_kernel(&spec, &space).unwrap();
        // four neighbours at distance 1, four at distance 2
        let expected = 2.0 - 4.0 * 0.1 * (-1.0f64).exp() - 4.0 * 0.1 * (-2.0f64).exp();
        assert!(close(k.lambda_margin(), expected, 1e-14));
    }

    #[test]
    fn complex_kernel_fails_assumption_under_l1_norm() {
        let m = CMatrix::from_row_slice(
            2,
            2,
            &[c(1.0), C64::new(0.6, 0.6), C64::new(0.6, -0.6), c(1.0)],
        );
        let k = Kernel::from_matrix(m, SiteSpace::new(2).unwrap()).unwrap();
        let check = k.check_assumption_a();
        assert!(!check.holds);
        assert!(close(check.lambda, -0.2, 1e-14));
        // diagonally dominant in modulus all the same
        assert!(k.a()[(0, 1)].norm() < 1.0);
    }

    #[test]
    fn rejects_non_hermitian_and_indefinite() {
        let bad = CMatrix::from_row_slice(2, 2, &[c(2.0), c(0.5), c(0.4), c(2.0)]);
        assert!(matches!(
            Kernel::from_matrix(bad, SiteSpace::new(2).unwrap()),
            Err(Error::NotHermitian { .. })
        ));
        let indefinite = CMatrix::from_row_slice(2, 2, &[c(1.0), c(2.0), c(2.0), c(1.0)]);
        assert!(matches!(
            Kernel::from_matrix(indefinite, SiteSpace::new(2).unwrap()),
            Err(Error::NotPositiveDefinite { .. })
        ));
        let wrong = CMatrix::identity(3, 3);
        assert!(matches!(
            Kernel::from_matrix(wrong, SiteSpace::new(2).unwrap()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn a_bracket_examples() {
        let k = a2();
        let full = k.restrict_a_bracket(&[0, 1]).unwrap();
        assert!(linalg::max_abs_diff(&full, k.a()) < 1e-10);
        let single = k.restrict_a_bracket(&[0]).unwrap();
        assert!(close(single[(0, 0)].re, 23.0 / 12.0, 1e-12));

        let diag = Kernel::from_real(DMatrix::identity(5, 5)).unwrap();
        let sub = diag.restrict_a_bracket(&[1, 3, 4]).unwrap();
        assert!(linalg::max_abs_diff(&sub, &CMatrix::identity(3, 3)) < 1e-14);
    }

    #[test]
    fn q_override_only_upward() {
        let k = a2();
        assert!(k.clone().with_q(0.4).is_err());
        assert_eq!(k.with_q(0.75).unwrap().q_value(), 0.75);
    }

    #[test]
    fn complex_entries_parse() {
        assert_eq!(parse_complex("2").unwrap(), c(2.0));
        assert_eq!(parse_complex("0.3+0.4j").unwrap(), C64::new(0.3, 0.4));
        assert_eq!(parse_complex("0.3-0.4j").unwrap(), C64::new(0.3, -0.4));
        assert_eq!(parse_complex("-1e-3+2e-1j").unwrap(), C64::new(-1e-3, 0.2));
        assert_eq!(parse_complex("-j").unwrap(), C64::new(0.0, -1.0));
        assert_eq!(parse_complex("1.5e+2").unwrap(), c(150.0));
        assert!(parse_complex("abc").is_err());
    }

    #[test]
    fn matrix_text_round_trip() {
        let text = "2\n2 0.3+0.4j\n0.3-0.4j 2\n";
        let m = parse_matrix_text(text).unwrap();
        assert_eq!(m[(0, 1)], C64::new(0.3, 0.4));
        assert_eq!(parse_matrix_text(&format_matrix_text(&m)).unwrap(), m);
        assert!(parse_matrix_text("2\n1 0\n").is_err());
        assert!(parse_matrix_text("2\n1 0 0\n0 1\n").is_err());
    }

    #[test]
    fn torus_indexing_is_bijective() {
        let space = SiteSpace::torus(&[4, 3]).unwrap();
        for s in 0..12 {
            let coords = space.coordinates(s).unwrap();
            assert_eq!(space.site(&coords), Some(s));
        }
        assert_eq!(space.neighbor_steps(0).unwrap().len(), 4);
        let line = SiteSpace::torus(&[2]).unwrap();
        assert_eq!(line.neighbor_steps(0).unwrap(), vec![1, 1]);
    }
}
