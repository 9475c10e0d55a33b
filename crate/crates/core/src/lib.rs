//! Domain-decomposed CNN training.
//!
//! Images are cut into a grid of non-overlapping subimages; a narrow local CNN
//! is trained on each cell independently (and in parallel), and a small dense
//! network learns to combine the local class distributions. The crate also
//! provides the cheaper combination rules (average probability, majority
//! vote), end-to-end training of the whole graph, and a transfer variant that
//! seeds the end-to-end model with pretrained local weights.
//!
//! Module map:
//! - [`engine`]: tensors, layers, reverse-mode gradients, Adam, checkpoints
//! - [`decomp`]: grid decomposition and reassembly
//! - [`models`]: VGG9 / ResNet20 builders, local CNNs, aggregator, coherent graph
//! - [`strategies`]: training pipelines, combination rules, evaluation
//! - [`data`]: CIFAR-10 ingestion, synthetic datasets, splitting, normalisation
//! - [`experiment`]: declarative experiment runner and report tables
//! - [`verify`]: finite-difference and brute-force checks used by `gridnet check`

pub mod data;
pub mod decomp;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod models;
pub mod strategies;
pub mod verify;

pub use error::{Error, Result};
