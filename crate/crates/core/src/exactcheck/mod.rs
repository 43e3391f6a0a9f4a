//! Exact oracles on the full configuration space of small site sets:
//! generator matrices, invariance and reversibility of the DPP, spectral
//! gaps, semigroup contraction, and entrywise inverse bounds.

mod embedding;
mod expm;
mod gamma;
mod generator;

pub use embedding::{complex_embedding, embedding_check, EmbeddingReport};
pub use expm::expm;
pub use gamma::{
    lemma41_bruteforce, restricted_monotonicity, GammaData, Lemma41Report, Witness,
    LEMMA_EXHAUSTIVE_LIMIT,
};
pub use generator::{
    build_generator, contraction_check, invariance_of, invariance_residual, oscillation,
    reversible_semigroup, spectral_gap, triple_norm, ContractionPoint, ContractionReport,
    GapReport, GeneratorMatrix, InvarianceReport, DENSE_STATE_LIMIT, GENERATOR_LIMIT,
};
