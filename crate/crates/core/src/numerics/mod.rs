//! Dense tensors, reverse-mode autodiff and gradient checking.

mod gradcheck;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use gradcheck::{gradient_check, GradReport, REL_ERR_FLOOR};
pub use params::{Param, ParamId, ParamStore};
pub use scalar::{Precision, Scalar};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The seeded generator used for every random initializer.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}
