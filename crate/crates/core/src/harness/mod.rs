//! Experiment drivers: training with spectral-radius tracking, random
//! search, regularization sweeps and the single-unit surface demo.

pub mod config;
pub mod demo;
pub mod presets;
pub mod search;
pub mod sweep;
pub mod train;

pub use config::{HyperConfig, ModelVariant, SearchSpace};
pub use demo::{demo_surface, DemoConfig, Surface};
pub use presets::{preset, Corpus};
pub use search::{random_search, SearchReport};
pub use sweep::{sweep, SweepAxis, SweepTable};
pub use train::{train, EpochRecord, TrainOutcome, TrainingTrace};
