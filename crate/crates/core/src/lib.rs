//! Deep-learning classifiers with a one-vs-all squared-hinge (L2-SVM) output
//! layer, built without an external ML framework.
//!
//! Three architectures share the same SVM head and training loop:
//!
//! - CNN-SVM: two 5×5 convolutions with max-pooling, a 1024-unit dense layer
//!   and dropout.
//! - GRU-SVM: a stack of gated recurrent layers reading a 32×32 image as 32
//!   timesteps of 32 features.
//! - MLP-SVM: three LeakyReLU dense layers.
//!
//! The crate also carries the data pipeline (binary visualization, bilinear
//! resize, z-score standardization, unstratified 70/30 split), the evaluation
//! metrics, checkpoint persistence and the `dlsvm` command-line tool.
//!
//! All numeric code is generic over [`Scalar`], so the same layers run in
//! 32-bit for training and in 64-bit for finite-difference gradient checks.

pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod svm;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
