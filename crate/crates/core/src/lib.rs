//! Learning-to-hash toolkit: fixed binary target codebooks, an MLP encoder
//! trained against them with a cosine-similarity cross-entropy, bit-packed
//! Hamming retrieval and retrieval metrics.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*F64` and
//! `*F32` aliases below name the common instantiations.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codebook;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod hamming;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod retrieval;
pub mod rng;
pub mod scalar;
pub mod trainer;

pub use codebook::{Codebook, CodebookMethod, HadamardRows};
pub use dataset::{make_gaussian_clusters, LabeledDataset, ToyConfig};
pub use encoder::{Architecture, BatchMode, EncoderParams};
pub use error::{Error, Result};
pub use hamming::{hamming_distance, pack_code, PackedCode};
pub use loss::{LossConfig, MarginKind, SoftTargets};
pub use metrics::EvalReport;
pub use retrieval::{HammingIndex, Hit};
pub use scalar::Scalar;
pub use trainer::{train, LossSettings, Objective, TrainConfig, TrainHistory};

pub type EncoderParamsF64 = EncoderParams<f64>;
pub type EncoderParamsF32 = EncoderParams<f32>;
pub type LossConfigF64 = LossConfig<f64>;
pub type LossConfigF32 = LossConfig<f32>;
pub type SoftTargetsF64 = SoftTargets<f64>;
pub type SoftTargetsF32 = SoftTargets<f32>;
pub type DatasetF64 = LabeledDataset<f64>;
pub type DatasetF32 = LabeledDataset<f32>;
