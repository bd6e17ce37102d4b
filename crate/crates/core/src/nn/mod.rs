//! Minimal differentiable substrate: matrices, a gradient tape, parameter
//! storage, the layers the model needs, and a finite-difference checker.

mod checkpoint;
mod gradcheck;
mod layers;
mod mat;
mod params;
mod tape;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{grad_check, grad_check_where, GradCheckReport};
pub use layers::{embedding_lookup, linear_forward, softmax_stable, Linear, LstmCell, LstmState};
pub use mat::Mat;
pub use params::{ParamId, Parameter, ParameterStore};
pub use tape::{Gradients, Tape, Var};
