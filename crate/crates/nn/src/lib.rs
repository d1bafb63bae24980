//! Tensor and layer engine with analytic backward passes, plus the HIF and
//! load classifiers and the CVAE disaggregator built on it.

pub mod detectors;
pub mod disagg;
pub mod error;
pub mod gradcheck;
pub mod loss;
pub mod model_file;
pub mod network;
pub mod ops;
pub mod optim;
pub mod tensor;
pub mod train;

pub use error::{NnError, Result};
pub use network::{LayerParams, LayerSpec, Network};
pub use optim::{OptimizerKind, TrainConfig};
pub use tensor::Tensor;
