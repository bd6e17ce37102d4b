pub mod config;
pub mod decoder;
pub mod diagnostics;
pub mod error;
pub mod feature_store;
pub mod metrics;
pub mod nn;
pub mod org;
pub mod scalar;
pub mod trainer;
pub mod trl;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Training precision.
pub type CaptionModelF32 = decoder::CaptionModel<f32>;
/// Gradient-check precision.
pub type CaptionModelF64 = decoder::CaptionModel<f64>;
pub type TapeF32 = nn::Tape<f32>;
pub type TapeF64 = nn::Tape<f64>;
pub type ParameterStoreF32 = nn::ParameterStore<f32>;
pub type ParameterStoreF64 = nn::ParameterStore<f64>;
pub type MatF32 = nn::Mat<f32>;
pub type MatF64 = nn::Mat<f64>;
