//! Channel prediction toolkit for massive MIMO-OFDM downlinks.
//!
//! The crate is organised along the processing chain:
//!
//! - [`sim`]: seedable clustered-multipath channel generator.
//! - [`dataset`]: normalization, windowing, mixing, splitting and the
//!   binary dataset file format.
//! - [`predictor`]: the 3-D residual CNN predictor and its checkpoint format.
//! - [`training`]: MSE training loop with Adam and milestone decay.
//! - [`eval`]: NMSE, SVD beamformers, cosine similarity, sum rate and the
//!   sample-and-hold baseline.

pub mod channel;
pub mod dataset;
pub mod nn;
pub mod predictor;
pub mod error;
pub mod eval;
pub mod sim;
pub mod training;

pub use channel::{ChannelSequence, ChannelTensor, TensorShape};
pub use error::{Error, Result};
