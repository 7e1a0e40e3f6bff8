//! Trainable processes: something that trains for a stage under given loss
//! weights and then produces outputs for evaluation.

mod checkpoint;
mod surface;
mod toy;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use surface::ResponseSurface;
pub use toy::{DataSource, FixedPool, SampledPool, ToyRestorer, DEFAULT_LEARNING_RATE};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::ImageBatch;
use crate::loss::{LossError, LossVector};

#[derive(Debug, Error)]
pub enum ProcessError {
    #[error("training diverged at stage {stage}, step {step}: {detail}")]
    Diverged {
        stage: u64,
        step: u64,
        detail: String,
    },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parameters and RNG of a process at a stage boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessState {
    pub parameters: Vec<f64>,
    pub stage_index: u64,
    pub iteration_count: u64,
    pub rng: ChaCha8Rng,
}

impl ProcessState {
    pub fn new(parameters: Vec<f64>, seed: u64) -> Self {
        Self {
            parameters,
            stage_index: 0,
            iteration_count: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn with_rng(parameters: Vec<f64>, rng: ChaCha8Rng) -> Self {
        Self {
            parameters,
            stage_index: 0,
            iteration_count: 0,
            rng,
        }
    }
}

/// Training telemetry for one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub mean_composed_loss: f64,
    pub mean_per_term_loss: LossVector,
    pub steps_taken: u64,
}

/// Frozen evaluation panel.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    pub degraded: ImageBatch,
    pub clean: Option<ImageBatch>,
}

impl TestSet {
    pub fn new(degraded: ImageBatch, clean: Option<ImageBatch>) -> Result<Self, LossError> {
        if degraded.is_empty() {
            return Err(LossError::Dimension {
                expected: 1,
                found: 0,
            });
        }
        if let Some(c) = &clean {
            degraded.ensure_same_shape(c)?;
        }
        Ok(Self { degraded, clean })
    }

    pub fn len(&self) -> usize {
        self.degraded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degraded.is_empty()
    }
}
