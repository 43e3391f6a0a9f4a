//! Determinantal point processes on finite site sets and the Glauber and
//! Kawasaki dynamics that leave them invariant.
//!
//! The kernel `A` is a Hermitian positive definite matrix; the process has
//! marginal kernel `K = A (I + A)^{-1}`, and the Papangelou intensity
//! `α(x; ξ)` is the Schur complement of `A(ξ, ξ)` in `A(xξ, xξ)`. Flip and
//! jump rates built from `α` satisfy detailed balance, and the
//! [`exactcheck`] module verifies this, together with the ergodicity
//! constants and inverse bounds, on the full configuration space.

pub mod cli;
pub mod configuration;
pub mod dpp;
pub mod error;
pub mod exactcheck;
pub mod fixtures;
pub mod kernel;
pub mod linalg;
pub mod papangelou;
pub mod rates;
pub mod simulate;

pub use configuration::Configuration;
pub use error::{Error, Result};
pub use kernel::{build_kernel, Kernel, KernelSpec, SiteSpace};
