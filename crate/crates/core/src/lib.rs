//! Core engine for a multitask visuomotor policy learner: a dense tensor
//! type with reverse-mode autodiff, the layer set needed by spatial-
//! attention policy networks, Adam, a finite-difference gradient checker,
//! model builders for the trained variants, and a deterministic 2D
//! push-world that generates demonstration and weakly labeled image data.

pub mod adam;
pub mod attention;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod model;
pub mod param;
pub mod rng;
pub mod scalar;
pub mod sim;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use param::{ParamSet, Parameter};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tape::{BnRunning, Mode, Tape, ValueId};
pub use tensor::Tensor;
