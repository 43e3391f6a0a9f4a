//! Reference kernels used by the examples, the tests and the `verify`
//! subcommand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kernel::{build_kernel, Kernel, KernelSpec, SiteSpace};
use crate::linalg::{c, CMatrix, C64};

/// `A = [[2, 0.5], [0.5, 2]]`.
pub fn a2() -> Kernel {
    let m = CMatrix::from_row_slice(2, 2, &[c(2.0), c(0.5), c(0.5), c(2.0)]);
    Kernel::from_matrix(m, SiteSpace::new(2).unwrap()).unwrap()
}

/// `A = a I` on `n` plain sites.
pub fn diagonal(n: usize, a: f64) -> Kernel {
    build_kernel(
        &KernelSpec::ScalarDiagonal { a },
        &SiteSpace::new(n).unwrap(),
    )
    .unwrap()
}

/// `A = a I + C` on a torus with nearest-neighbour coupling.
pub fn torus_nearest_neighbor(sides: &[usize], a: f64, coupling: f64) -> Kernel {
    let spec = KernelSpec::TorusConvolution {
        a,
        coefficients: vec![coupling],
        decay: None,
    };
    build_kernel(&spec, &SiteSpace::torus(sides).unwrap()).unwrap()
}

/// `A = [[2, 0.3+0.4i], [0.3-0.4i, 2]]`.
pub fn complex_pair() -> Kernel {
    let m = CMatrix::from_row_slice(
        2,
        2,
        &[c(2.0), C64::new(0.3, 0.4), C64::new(0.3, -0.4), c(2.0)],
    );
    Kernel::from_matrix(m, SiteSpace::new(2).unwrap()).unwrap()
}

/// Random real symmetric kernel, strictly diagonally dominant with margin
/// at least `margin`; off-diagonal entries are uniform on `[-spread, spread]`.
pub fn random_dominant(n: usize, spread: f64, margin: f64, seed: u64) -> Kernel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = CMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = rng.random_range(-spread..=spread);
            m[(i, j)] = c(v);
            m[(j, i)] = c(v);
        }
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| m[(i, j)].re.abs()).sum();
        m[(i, i)] = c(off + margin + rng.random_range(0.0..=margin));
    }
    Kernel::from_matrix(m, SiteSpace::new(n).unwrap()).unwrap()
}

/// Random complex Hermitian kernel, diagonally dominant under `|z|_1`.
pub fn random_complex_dominant(n: usize, spread: f64, margin: f64, seed: u64) -> Kernel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = CMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let z = C64::new(
                rng.random_range(-spread..=spread),
                rng.random_range(-spread..=spread),
            );
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
    }
    for i in 0..n {
        let off: f64 = (0..n)
            .filter(|&j| j != i)
            .map(|j| crate::linalg::abs1(m[(i, j)]))
            .sum();
        m[(i, i)] = c(off + margin + rng.random_range(0.0..=margin));
    }
    Kernel::from_matrix(m, SiteSpace::new(n).unwrap()).unwrap()
}

/// Random real Hermitian positive definite kernel that need not be
/// diagonally dominant: `B B^T / n + shift I`.
pub fn random_positive_definite(n: usize, shift: f64, seed: u64) -> Kernel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = CMatrix::from_fn(n, n, |_, _| c(rng.random_range(-1.0..=1.0)));
    let m = &b * b.adjoint() * c(1.0 / n as f64) + CMatrix::identity(n, n) * c(shift);
    Kernel::from_matrix(m, SiteSpace::new(n).unwrap()).unwrap()
}
