//! Graph data model, long-tailed dataset construction, splits, samplers,
//! augmentations and the synthetic generator.

pub mod augment;
mod dataset;
mod graph;
mod sampler;
pub mod synthetic;

pub use augment::{augment, augment_with, Augmented, Strategy};
pub use dataset::{longtail_targets, Dataset, LongTailProfile};
pub use graph::Graph;
pub use sampler::{Batch, ClassSampler, InstanceSampler, ViewTag};
pub use synthetic::generate_synthetic;
