//! End-to-end audiovisual fusion classifier.
//!
//! A library (plus CLI) that classifies utterances from synchronized image
//! sequences and audio waveforms. Each modality stream compresses its raw
//! frames through a bottleneck encoder, appends first and second temporal
//! derivatives, and models dynamics with a bidirectional LSTM; a fusion
//! BLSTM combines the streams and a per-frame softmax plus majority vote
//! labels the utterance. Encoders can be pretrained layer-wise with
//! Gaussian RBMs, training follows a two-phase schedule (single streams,
//! then joint fine-tuning), and the data pipeline covers spectrograms,
//! modality synchronization, exact-SNR noise injection and a synthetic
//! audiovisual dataset for desk-scale verification.

pub mod checkpoint;
pub mod datapipe;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod rbm;
pub mod recurrent;
pub mod rng;
pub mod tensor;
pub mod training;
pub mod workflow;

pub use error::{Error, Result};
pub use tensor::Matrix;
