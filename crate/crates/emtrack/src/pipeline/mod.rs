//! EM orchestration, dataset I/O, evaluation, and the command-line
//! interface.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod estep;
pub mod eval;
pub mod rounds;
pub mod trackrun;
pub mod viz;

pub use config::{FlowSource, PipelineConfig};
pub use dataset::{open_dataset, write_dataset, Dataset, Manifest, SequenceMeta};
pub use estep::{e_step, flow_pair, frame_context, promote, unproject_heat, EnsembleCues, EStepOutput, FrameContext};
pub use eval::{box_precision, evaluate_map, evaluate_tracking, FrameEval, TrackingEval, View};
pub use rounds::{load_all, read_labels_jsonl, run_em, DetectionRecord, EmRun, LabelRecord, LoadedData, RoundReport, RunReport};
pub use trackrun::{run_tracking, TrackRecord, TrackRun, TrackRunReport};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
