//! Trajectory generators, normalization, splits and the dataset container.

mod burgers;
mod dataset;
mod grid;
mod molenkamp;
mod presets;
mod sinusoid;

pub use burgers::{gen_burgers, gen_burgers_with, BurgersOptions};
pub use dataset::split_per_param;
pub use dataset::{
    denormalize, normalize, split, MinMax, NormStats, Provenance, SplitRanges, TrajectoryDataset,
};
pub use grid::{GridSpec, ParamRange, TimeGrid};
pub use molenkamp::{gen_molenkamp, MolenkampParams};
pub use presets::{DataPreset, DatasetSplits, PresetSpec, Scale};
pub use sinusoid::{gen_advection, sample_sinusoidal_ic, SinusoidalIc, Wave};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("grid: {0}")]
    Grid(String),
    #[error("time grid: {0}")]
    Time(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error("{requested} sub-steps per interval violate the stability limit; at least {required} are needed")]
    Cfl { requested: usize, required: usize },
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("{0} has max == min; cannot normalize")]
    DegenerateRange(String),
    #[error("normalization: {0}")]
    Normalization(String),
    #[error("split: {0}")]
    Split(String),
    #[error("file format: {0}")]
    Format(String),
    #[error("truth for refined times is unavailable: {0}")]
    Unavailable(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
