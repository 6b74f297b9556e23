//! Supervision-generation and evaluation toolkit for language-driven action
//! localization. The toolkit expands action queries into boundary
//! descriptions through a chat LLM, fuses them with frame embeddings,
//! converts rigid boundary annotations into per-frame probability scores,
//! and evaluates or perturbs localization results.
//!
//! Numeric kernels are generic over the scalar type (see [`scalar::Real`]);
//! the pipeline runs on the `f64` aliases below, while embedding files are
//! stored as `f32`.

pub mod data;
pub mod expand;
pub mod fusion;
pub mod io;
pub mod loss;
pub mod matrix;
pub mod metrics;
pub mod perturb;
pub mod scalar;
pub mod supervision;
pub mod textembed;

pub use matrix::Matrix;
pub use scalar::Real;

/// Default pipeline matrix type.
pub type Mat = Matrix<f64>;
/// Storage-precision matrix type (the binary on-disk format is f32).
pub type Mat32 = Matrix<f32>;
/// Default pipeline boundary-score type.
pub type Scores = supervision::BoundaryScores<f64>;

/// Toolkit version, embedded in run reports.
pub fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}
