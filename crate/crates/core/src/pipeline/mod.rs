//! Everything around the model: configuration, data, training, checkpoints,
//! evaluation, ablations and histogram reports.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod eval;
pub mod hist;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{PipelineConfig, SceneConfig, TrainConfig};
pub use data::{load_samples, synthetic_pairs, synthetic_split, DatasetManifest, Sample, Split};
pub use eval::{ablate, ablation_table, enhance, evaluate, AblationRun, Enhanced};
pub use hist::HistogramReport;
pub use train::{train, CurvePoint, TrainOutcome};
