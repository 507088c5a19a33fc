//! Desk-scale studies built on the simulator and the exact solvers: decay
//! fits, persistence of vacancies, gap scans and the block pipeline.

mod fit;
mod gapscan;
mod persistence;
mod pipeline;
mod relaxation;

use thiserror::Error;

use crate::exact::ExactError;
use crate::graph::GraphError;
use crate::kmc::KmcError;
use crate::model::ModelError;

pub use fit::{fit_decay, signal_window, DecayFits, DecayModel, FitResult, MIN_FIT_POINTS, NOISE_FLOOR};
pub use gapscan::{run_gap_scan, EnvelopeFit, GapPoint, GapScanReport, StabilityRow, COMPARISON_SITES};
pub use persistence::{run_persistence, PersistenceReport, PersistenceRow};
pub use pipeline::{
    block_scale, run_pipeline_demo, PipelineDemoReport, PipelineObservable, PipelineParams, MC_SITES,
};
pub use relaxation::{run_relaxation, MonotoneCheck, RelaxationReport, SHAPE_R2};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{0}")]
    BadParams(String),
    #[error("observable is not centred under the invariant measure (mean {0:e})")]
    NotCentered(f64),
    #[error(transparent)]
    Kmc(#[from] KmcError),
    #[error(transparent)]
    Exact(#[from] ExactError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}
