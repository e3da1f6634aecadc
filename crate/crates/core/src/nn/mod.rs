//! Minimal sequential network substrate: dense and LSTM layers, BPTT,
//! optimizers with per-parameter freezing, activation recording and
//! checkpoints.

mod checkpoint;
mod dense;
mod lstm;
mod network;
mod optim;
mod param;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, FORMAT_VERSION};
pub use dense::{dense_forward, DenseCache, DenseLayer, TimeDistributed};
pub use lstm::{lstm_forward, LstmCache, LstmLayer, LstmOutput};
pub use network::{
    record_activations, time_major, Batch, Bottleneck, ForwardPass, LayerActivations, SplitNetwork,
};
pub use optim::{optimizer_step, Optimizer, OptimizerConfig, OptimizerKind};
pub use param::{Activation, Parameter};
pub use tensor::Tensor;
pub(crate) use tensor::gemm;
