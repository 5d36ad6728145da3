//! Smooth adversarial perturbations for image classifiers.
//!
//! The crate contains a small tensor type, smoothing kernels with
//! replicate-padded convolution, a feed-forward network engine, the
//! DeepFool and smooth attacks with their universal variant, and the
//! roughness and fooling-rate metrics used to evaluate them.

pub mod attack;
pub mod conv;
pub mod data;
pub mod fixture;
pub mod kernel;
pub mod metrics;
pub mod net;
pub mod tensor;
pub mod transfer;
pub mod universal;

pub use kernel::{KernelKind, SmoothingKernel};
pub use net::{LabeledDataset, Network};
pub use tensor::Tensor;
