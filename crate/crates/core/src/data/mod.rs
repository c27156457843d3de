//! Imbalanced labeled/unlabeled splits, synthetic data, and class-aware sampling.

mod csv_io;
mod dataset;
mod profile;
mod sampler;
mod synth;

pub use csv_io::{load_csv_dataset, save_csv_dataset};
pub use dataset::{split_labeled_unlabeled, Dataset, LabeledSet, UnlabeledSet, UNLABELED};
pub use profile::{class_counts, ImbalanceKind, ImbalanceProfile};
pub use sampler::{balanced_batch, uniform_batch, BalancedBatchSpec};
pub use synth::{synth_gaussian_mixture, GaussianMixture};
