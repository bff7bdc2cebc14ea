//! LSTM message encoder with a two-layer regression head, trained on squared
//! residuals by backpropagation through time.

mod gradcheck;
mod network;
mod params;
mod train;

pub use gradcheck::{gradient_check, GradCheckReport, ParamLocation};
pub use network::{encode, encode_states, forward, gradients, loss, lstm_step, step_traced, ForwardMode, Gradients, LstmState, SeqExample, StepTrace};
pub use params::{Dims, Gate, LstmParams, Matrix, ParamBlock, BLOCK_NAMES, GATES};
pub use train::{eval_loss, train, train_from, EpochLog, LayerSizes, LstmModelFile, TrainConfig, TrainOutcome, LSTM_FILE_VERSION};
