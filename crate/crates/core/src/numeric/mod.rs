//! Dense numeric kernels: matrices, a closed-form ridge solver, K-means,
//! Adam, small MLPs with hand-derived backprop, and a finite-difference
//! gradient checker. Everything is `f64` and deterministic given its inputs.
//!
//! All kernels are pure functions over their arguments; nothing in this
//! module holds shared mutable state.

mod adam;
mod gradcheck;
mod kmeans;
mod mat;
mod mlp;
mod ridge;

pub use adam::{adam_step, AdamState};
pub use gradcheck::grad_check;
pub use kmeans::{kmeans, KMeansResult};
pub use mat::Mat;
pub(crate) use mat::dot;
pub use mlp::{Activation, Layer, MlpCache, MlpGrads, MlpParams};
pub use ridge::ridge_solve;
