//! Minimal reverse-mode automatic differentiation over dense 2-D tensors.

mod adam;
mod graph;
pub mod gradcheck;
pub mod io;
mod params;
mod tensor;

pub use adam::Adam;
pub use graph::{Graph, Var};
pub use params::ParamSet;
pub use tensor::Tensor;
pub(crate) use graph::softplus as softplus_f64;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("parameter file: {0}")]
    Format(String),
    #[error("parameter file version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
