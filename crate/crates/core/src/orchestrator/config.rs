use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::RetryPolicy;
use crate::data::Degradation;
use crate::experts::{Direction, ObjectiveKind, ObjectiveSpec};
use crate::loss::{LossRepository, LossWeights, WeightBounds, DEFAULT_TERMS};
use crate::process::DEFAULT_LEARNING_RATE;
use crate::prompt::HistoryMode;

pub const SURFACE_EXPERT: &str = "surface";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Agent,
    Fixed,
    Random,
    GreedyOracle,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Agent => "agent",
            PolicyKind::Fixed => "fixed",
            PolicyKind::Random => "random",
            PolicyKind::GreedyOracle => "greedy_oracle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            PolicyKind::Agent,
            PolicyKind::Fixed,
            PolicyKind::Random,
            PolicyKind::GreedyOracle,
        ]
        .into_iter()
        .find(|p| p.name() == s.trim())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    ToyRestorer,
    ResponseSurface,
}

/// Chat backend used by the agent policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    /// Offline coordinate hill-climber over one score objective
    /// (default: the first score objective).
    HillClimb {
        #[serde(default)]
        objective: Option<String>,
    },
    /// Fixed replies, replayed in order; the last one repeats.
    Scripted { replies: Vec<String> },
    /// Chat-completions endpoint from `LOSSAGENT_API_URL` / `LOSSAGENT_API_KEY`.
    Http {
        model: String,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: f64,
    },
}

fn default_timeout_secs() -> f64 {
    60.0
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::HillClimb { objective: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub kernel_size: usize,
    pub learning_rate: f64,
    pub image_height: usize,
    pub image_width: usize,
    pub pool_size: usize,
    /// Images per SGD step; `None` means the whole pool.
    pub batch_size: Option<usize>,
    pub degradation: Degradation,
    pub noise_sigma: f64,
    pub blur_size: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            kernel_size: 5,
            learning_rate: DEFAULT_LEARNING_RATE,
            image_height: 16,
            image_width: 16,
            pool_size: 8,
            batch_size: None,
            degradation: Degradation::BoxBlur,
            noise_sigma: 0.02,
            blur_size: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurfaceConfig {
    /// Score optimum w*; drawn from the run seed when absent.
    pub optimum: Option<Vec<f64>>,
    /// Snap a drawn optimum onto the `grid_step` lattice.
    pub snap_optimum_to_grid: bool,
    pub grid_step: f64,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self {
            optimum: None,
            snap_optimum_to_grid: true,
            grid_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TemplatePaths {
    #[serde(default)]
    pub system: Option<PathBuf>,
    #[serde(default)]
    pub historical: Option<PathBuf>,
    #[serde(default)]
    pub needs: Option<PathBuf>,
}

/// Everything that defines a run. Serialised as the JSON run configuration;
/// every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub stages: usize,
    pub iterations_per_stage: u64,
    pub initial_weights: Vec<f64>,
    pub loss_terms: Vec<String>,
    pub objectives: Vec<ObjectiveSpec>,
    pub policy: PolicyKind,
    pub history_mode: HistoryMode,
    pub seed: u64,
    pub test_set_size: usize,
    pub process: ProcessKind,
    pub bounds: WeightBounds,
    pub backend: BackendConfig,
    pub retry: RetryPolicy,
    pub task_description: String,
    pub rules: Vec<String>,
    pub toy: ToyConfig,
    pub surface: SurfaceConfig,
    pub prompt_templates: TemplatePaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            stages: 20,
            iterations_per_stage: 5000,
            initial_weights: vec![1.0, 0.1, 0.01],
            loss_terms: DEFAULT_TERMS.iter().map(|s| s.to_string()).collect(),
            objectives: vec![ObjectiveSpec::score(
                "sharpness",
                "sharpness",
                Direction::HigherBetter,
                false,
            )],
            policy: PolicyKind::Agent,
            history_mode: HistoryMode::Full,
            seed: 0,
            test_set_size: 10,
            process: ProcessKind::ToyRestorer,
            bounds: WeightBounds::default(),
            backend: BackendConfig::default(),
            retry: RetryPolicy::default(),
            task_description: "Restore synthetically blurred grayscale images with a small convolutional model.".into(),
            rules: vec![
                "Change the weights gradually unless the feedback clearly calls for a large move.".into(),
                "Consider what each loss encourages before changing its weight.".into(),
            ],
            toy: ToyConfig::default(),
            surface: SurfaceConfig::default(),
            prompt_templates: TemplatePaths::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.stages == 0 {
            return Err("stages must be >= 1".into());
        }
        if self.test_set_size == 0 {
            return Err("test_set_size must be >= 1".into());
        }
        if self.objectives.is_empty() {
            return Err("at least one objective is required".into());
        }
        self.bounds.validate().map_err(|e| e.to_string())?;
        let repo = LossRepository::from_ids(&self.loss_terms).map_err(|e| e.to_string())?;
        if self.initial_weights.len() != repo.len() {
            return Err(format!(
                "initial_weights has {} values for {} loss terms",
                self.initial_weights.len(),
                repo.len()
            ));
        }
        LossWeights::new(self.initial_weights.clone(), &self.bounds).map_err(|e| format!("initial_weights: {e}"))?;
        let mut names = std::collections::BTreeSet::new();
        for o in &self.objectives {
            o.validate().map_err(|e| e.to_string())?;
            if !names.insert(o.name.as_str()) {
                return Err(format!("duplicate objective name `{}`", o.name));
            }
        }
        self.history_mode.validate().map_err(|e| e.to_string())?;
        self.retry.validate().map_err(|e| e.to_string())?;
        match self.process {
            ProcessKind::ToyRestorer => {
                if self.toy.kernel_size.is_multiple_of(2) {
                    return Err("toy.kernel_size must be odd".into());
                }
                if !self.toy.learning_rate.is_finite() || self.toy.learning_rate < 0.0 {
                    return Err("toy.learning_rate must be finite and >= 0".into());
                }
                if self.toy.pool_size == 0 {
                    return Err("toy.pool_size must be >= 1".into());
                }
                if self.toy.batch_size == Some(0) {
                    return Err("toy.batch_size must be >= 1".into());
                }
                if let Some(o) = self.objectives.iter().find(|o| o.expert_id == SURFACE_EXPERT) {
                    return Err(format!("objective `{}` needs the response_surface process", o.name));
                }
            }
            ProcessKind::ResponseSurface => {
                if let Some(o) = self
                    .objectives
                    .iter()
                    .find(|o| o.expert_id != SURFACE_EXPERT || o.kind != ObjectiveKind::Score)
                {
                    return Err(format!(
                        "response_surface only supports score objectives with expert `{SURFACE_EXPERT}` (got `{}`)",
                        o.name
                    ));
                }
                if let Some(opt) = &self.surface.optimum {
                    if opt.len() != repo.len() {
                        return Err("surface.optimum length must equal the loss term count".into());
                    }
                }
                if !(self.surface.grid_step > 0.0 && self.surface.grid_step.is_finite()) {
                    return Err("surface.grid_step must be > 0".into());
                }
            }
        }
        if self.policy == PolicyKind::GreedyOracle && self.process != ProcessKind::ResponseSurface {
            return Err("greedy_oracle requires the response_surface process".into());
        }
        if let BackendConfig::HillClimb { objective: Some(name) } = &self.backend {
            let o = self
                .objectives
                .iter()
                .find(|o| &o.name == name)
                .ok_or_else(|| format!("hill_climb objective `{name}` is not configured"))?;
            if o.kind != ObjectiveKind::Score {
                return Err("hill_climb needs a score objective".into());
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialisation.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Analytic-surface configuration used for policy checks: M=3, bounds [0,1], step 0.1.
    pub fn response_surface(stages: usize, seed: u64) -> Self {
        Self {
            stages,
            iterations_per_stage: 1,
            initial_weights: vec![0.5, 0.5, 0.5],
            objectives: vec![ObjectiveSpec::score(
                "surface",
                SURFACE_EXPERT,
                Direction::HigherBetter,
                false,
            )],
            policy: PolicyKind::GreedyOracle,
            seed,
            test_set_size: 1,
            process: ProcessKind::ResponseSurface,
            bounds: WeightBounds { lower: 0.0, upper: 1.0 },
            ..Self::default()
        }
    }
}
