pub mod config;
pub mod dataset;
pub mod synth;

pub use config::RunConfig;
pub use dataset::{read_dataset, write_dataset, PoseSample};
pub use synth::{generate_synthetic, SyntheticGenConfig};
