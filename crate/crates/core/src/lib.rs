//! Detecting context-dependent conversational messages.
//!
//! A message is context dependent when a sensible reply depends on what came
//! before it. The crate estimates this without manual labels: the diversity of
//! the responses a message received in a large corpus is turned into a weak
//! real-valued label, and an LSTM learns to predict that label from the message
//! text alone.
//!
//! Modules follow the data flow:
//!
//! * [`corpus`] parses triples, tokenizes, groups responses per message and
//!   builds the vocabulary.
//! * [`signals`] computes response entropy, max-mass complement and average
//!   response length, with corpus-level min-max normalization.
//! * [`linear`] is a linear SVM (classification and epsilon-insensitive
//!   regression) used as the signal combiner and as the n-gram regression
//!   baseline.
//! * [`weaklabel`] applies the combiner to every eligible message.
//! * [`lstm`] is the message encoder and regression head with BPTT training.
//! * [`classify`] turns scores into labels and holds the length and
//!   min-document-frequency baselines.
//! * [`eval`] computes accuracy and the exact paired sign test.
//! * [`synth`] generates a synthetic corpus with a known ground truth.
//! * [`pipeline`] runs the stages over a workspace directory with manifests.

pub mod classify;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod linear;
pub mod lstm;
pub mod pipeline;
pub mod signals;
pub mod synth;
pub mod weaklabel;

pub use error::{Error, Result};
