//! Small fully-connected network stack with manual backprop and Adam.

mod adam;
mod checkpoint;
mod gradcheck;
mod matrix;
mod mlp;
mod standardize;

pub use adam::{cosine_lr, AdamState};
pub use checkpoint::{MAGIC, VERSION};
pub use gradcheck::{gradient_check, relative_error, squared_error_loss, GradCheck};
pub use matrix::Matrix;
pub use mlp::{Activation, Cache, Layer, Mlp, MlpSpec, Params};
pub use standardize::Standardizer;
