//! Saak transform: data-driven, invertible, orthonormal multi-stage
//! transform for images, with coefficient filtering as an adversarial
//! defense.

pub mod analysis;
pub mod attack;
pub mod covariance;
pub mod eigen;
pub mod error;
pub mod eval;
pub mod filter;
pub mod io;
pub mod kernels;
pub mod model;
pub mod smoothing;
pub mod synthetic;
pub mod tensor;
pub mod transform;

pub use error::{Result, SaakError};
pub use filter::{defend, FilterSpec, FilterStrategy};
pub use model::{train_model, SaakModel};
pub use tensor::{CoefficientTensor, ImageTensor, Tensor3};
pub use transform::{forward, inverse, SaakConfig};
