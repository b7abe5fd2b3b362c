//! Output-space adversarial domain adaptation for semantic segmentation.
//!
//! A segmentation network and fully-convolutional discriminators are trained
//! jointly so that segmentation maps predicted on an unlabeled target domain
//! become indistinguishable from those predicted on a labeled source domain.

pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod networks;
pub mod optim;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Shape, Tape, Tensor, Var};
