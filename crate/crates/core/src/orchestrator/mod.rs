//! The staged training loop: train with the current weights, score the frozen
//! test panel, ask the policy for the next weights, repeat.

mod config;
mod trajectory;

pub use config::{
    BackendConfig, PolicyKind, ProcessKind, RunConfig, SurfaceConfig, TemplatePaths, ToyConfig, SURFACE_EXPERT,
};
pub use trajectory::{
    load, load_from, persist, DecisionSummary, TrajectoryEntry, TrajectoryError, TrajectoryFile,
    TrajectoryHeader, TrajectoryWriter, SCHEMA_VERSION,
};

use std::path::Path;
use std::time::Duration;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::agent::{
    decide, AgentError, ChatBackend, HillClimbBackend, HttpBackend, SequenceBackend,
};
use crate::data::{synthesize_dataset, DatasetSpec};
use crate::experts::{Direction, ExpertError, ExpertRegistry, Feedback, FeedbackValues, ObjectiveKind};
use crate::loss::{LossError, LossRepository, LossWeights, WeightBounds};
use crate::process::{
    DataSource, ProcessError, ProcessState, ResponseSurface, SampledPool, StageReport, TestSet, ToyRestorer,
};
use crate::prompt::{PromptBundle, PromptEngine, PromptError, PromptTemplates};
use crate::seed::{stream, Stream};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Process(#[from] ProcessError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Expert(#[from] ExpertError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

impl From<LossError> for RunError {
    fn from(e: LossError) -> Self {
        RunError::Process(ProcessError::Loss(e))
    }
}

impl RunError {
    /// Process exit status: 2 config, 3 divergence, 4 backend, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Agent(AgentError::Config(_)) => 2,
            RunError::Process(ProcessError::Diverged { .. }) => 3,
            RunError::Agent(AgentError::Backend { .. }) => 4,
            _ => 1,
        }
    }
}

/// An aborted run: the error plus every stage completed before it.
#[derive(Debug, Error)]
#[error("run aborted after {} completed stages: {error}", partial.len())]
pub struct RunFailure {
    pub error: RunError,
    pub partial: Vec<TrajectoryEntry>,
}

impl RunFailure {
    fn early(error: impl Into<RunError>) -> Self {
        Self {
            error: error.into(),
            partial: Vec::new(),
        }
    }
}

#[derive(Default)]
pub struct RunOptions {
    /// Trajectory JSONL destination, appended and flushed after every stage.
    pub out: Option<std::path::PathBuf>,
    /// Overrides the backend named in the config (agent policy only).
    pub backend: Option<Box<dyn ChatBackend>>,
}

/// Each component uniform in `[lower, upper]`; a collapsed interval yields `lower`.
pub fn next_weights_random(rng: &mut ChaCha8Rng, bounds: &WeightBounds, m: usize) -> LossWeights {
    let values = (0..m)
        .map(|_| {
            if bounds.upper > bounds.lower {
                rng.gen_range(bounds.lower..=bounds.upper)
            } else {
                bounds.lower
            }
        })
        .collect();
    LossWeights::from_vec_unchecked(values)
}

fn grid_index(v: f64, lower: f64, step: f64) -> Option<i64> {
    let k = ((v - lower) / step).round();
    ((lower + k * step - v).abs() <= 1e-9 * step.max(1.0)).then_some(k as i64)
}

fn step_along(v: f64, delta: i64, lower: f64, step: f64) -> f64 {
    match grid_index(v, lower, step) {
        Some(k) => lower + (k + delta) as f64 * step,
        None => v + delta as f64 * step,
    }
}

/// Best of `current` and its axis-aligned ±`grid_step` neighbours inside
/// `bounds`. Ties keep `current`, then prefer the lowest axis (minus before plus).
pub fn next_weights_greedy_oracle(
    surface: &ResponseSurface,
    current: &LossWeights,
    grid_step: f64,
    bounds: &WeightBounds,
) -> Result<LossWeights, LossError> {
    let tol = 1e-9 * grid_step;
    let mut best = current.values().to_vec();
    let mut best_score = surface.score(&best)?;
    for axis in 0..current.len() {
        for delta in [-1, 1] {
            let mut cand = current.values().to_vec();
            let v = step_along(cand[axis], delta, bounds.lower, grid_step);
            if v < bounds.lower - tol || v > bounds.upper + tol {
                continue;
            }
            cand[axis] = bounds.clip(v);
            let s = surface.score(&cand)?;
            if s > best_score {
                best_score = s;
                best = cand;
            }
        }
    }
    Ok(LossWeights::from_vec_unchecked(best))
}

/// Uniform optimum inside `bounds`, optionally snapped to the `step` lattice.
pub fn draw_surface_optimum(rng: &mut ChaCha8Rng, bounds: &WeightBounds, m: usize, step: f64, snap: bool) -> Vec<f64> {
    let raw = next_weights_random(rng, bounds, m);
    if !snap {
        return raw.values().to_vec();
    }
    let max_k = ((bounds.upper - bounds.lower) / step + 1e-9).floor();
    raw.values()
        .iter()
        .map(|v| bounds.lower + ((v - bounds.lower) / step).round().min(max_k) * step)
        .collect()
}

enum Process {
    Toy {
        restorer: ToyRestorer,
        data: Box<dyn DataSource>,
        test: TestSet,
        registry: ExpertRegistry,
    },
    Surface(ResponseSurface),
}

impl Process {
    fn build(config: &RunConfig, repo: &LossRepository) -> Result<Self, RunError> {
        match config.process {
            ProcessKind::ToyRestorer => {
                let t = &config.toy;
                let data = synthesize_dataset(&DatasetSpec {
                    count: config.test_set_size,
                    height: t.image_height,
                    width: t.image_width,
                    degradation: t.degradation,
                    noise_sigma: t.noise_sigma,
                    blur_size: t.blur_size,
                    pool_size: t.pool_size,
                    seed: config.seed,
                })
                .map_err(RunError::Config)?;
                let source: Box<dyn DataSource> = match t.batch_size {
                    Some(b) if b < t.pool_size => Box::new(SampledPool {
                        pool: data.pool,
                        batch_size: b,
                    }),
                    _ => Box::new(data.pool),
                };
                Ok(Process::Toy {
                    restorer: ToyRestorer::new(t.kernel_size, t.learning_rate, repo.clone()),
                    data: source,
                    test: data.test_set,
                    registry: ExpertRegistry::default(),
                })
            }
            ProcessKind::ResponseSurface => {
                let optimum = match &config.surface.optimum {
                    Some(o) => o.clone(),
                    None => draw_surface_optimum(
                        &mut stream(config.seed, Stream::Surface),
                        &config.bounds,
                        repo.len(),
                        config.surface.grid_step,
                        config.surface.snap_optimum_to_grid,
                    ),
                };
                Ok(Process::Surface(ResponseSurface::new(optimum)))
            }
        }
    }

    fn initial_parameters(&self, initial: &LossWeights) -> Vec<f64> {
        match self {
            Process::Toy { restorer, .. } => restorer.identity_parameters(),
            Process::Surface(_) => initial.values().to_vec(),
        }
    }

    fn train(
        &self,
        state: &ProcessState,
        weights: &LossWeights,
        iterations: u64,
    ) -> Result<(ProcessState, StageReport), RunError> {
        Ok(match self {
            Process::Toy { restorer, data, .. } => restorer.train_stage(state, weights, iterations, data.as_ref())?,
            Process::Surface(s) => s.train_stage(state, weights, iterations)?,
        })
    }

    fn feedback(
        &self,
        config: &RunConfig,
        state: &ProcessState,
        weights: &LossWeights,
        stage_index: u64,
    ) -> Result<Vec<Feedback>, RunError> {
        match self {
            Process::Toy {
                restorer,
                test,
                registry,
                ..
            } => {
                let outputs = restorer.infer(state, &test.degraded);
                config
                    .objectives
                    .iter()
                    .map(|o| Ok(registry.feedback(o, &outputs, test.clean.as_ref(), stage_index)?))
                    .collect()
            }
            Process::Surface(s) => {
                let score = s.score(weights.values())?;
                Ok(config
                    .objectives
                    .iter()
                    .map(|o| Feedback {
                        objective_name: o.name.clone(),
                        stage_index,
                        values: FeedbackValues::Score {
                            per_image: vec![score; config.test_set_size],
                            aggregate: score,
                        },
                    })
                    .collect())
            }
        }
    }
}

/// Backend named by the config. The hill-climber follows the configured
/// objective, or the first score objective when none is named.
pub fn build_backend(config: &RunConfig, term_ids: &[String]) -> Result<Box<dyn ChatBackend>, RunError> {
    match &config.backend {
        BackendConfig::HillClimb { objective } => {
            let spec = match objective {
                Some(name) => config.objectives.iter().find(|o| &o.name == name),
                None => config.objectives.iter().find(|o| o.kind == ObjectiveKind::Score),
            }
            .ok_or_else(|| RunError::Config("hill_climb needs a score objective".into()))?;
            Ok(Box::new(HillClimbBackend {
                term_ids: term_ids.to_vec(),
                objective: spec.name.clone(),
                direction: spec.direction.unwrap_or(Direction::HigherBetter),
                bounds: config.bounds,
            }))
        }
        BackendConfig::Scripted { replies } => {
            if replies.is_empty() {
                return Err(RunError::Config("scripted backend needs at least one reply".into()));
            }
            Ok(Box::new(SequenceBackend::replies(replies.clone())))
        }
        BackendConfig::Http { model, timeout_secs } => {
            if !(timeout_secs.is_finite() && *timeout_secs > 0.0) {
                return Err(RunError::Config("backend.timeout_secs must be > 0".into()));
            }
            HttpBackend::from_env(model.clone(), Duration::from_secs_f64(*timeout_secs))
                .map(|b| Box::new(b) as Box<dyn ChatBackend>)
                .map_err(|e| RunError::Config(e.to_string()))
        }
    }
}

struct Policy {
    kind: PolicyKind,
    backend: Option<Box<dyn ChatBackend>>,
    engine: PromptEngine,
    system_prompt: String,
    needs_prompt: String,
    random_rng: ChaCha8Rng,
    jitter_rng: ChaCha8Rng,
}

impl Policy {
    fn next(
        &mut self,
        config: &RunConfig,
        term_ids: &[String],
        process: &Process,
        trajectory: &[TrajectoryEntry],
    ) -> Result<(LossWeights, Option<DecisionSummary>), RunError> {
        let previous = &trajectory.last().expect("policy runs after stage 0").weights_used;
        match self.kind {
            PolicyKind::Fixed => Ok((previous.clone(), None)),
            PolicyKind::Random => Ok((
                next_weights_random(&mut self.random_rng, &config.bounds, term_ids.len()),
                None,
            )),
            PolicyKind::GreedyOracle => match process {
                Process::Surface(s) => Ok((
                    next_weights_greedy_oracle(s, previous, config.surface.grid_step, &config.bounds)?,
                    None,
                )),
                Process::Toy { .. } => Err(RunError::Config("greedy_oracle requires the response_surface process".into())),
            },
            PolicyKind::Agent => {
                let bundle = PromptBundle {
                    system: self.system_prompt.clone(),
                    historical: self
                        .engine
                        .build_historical_prompt(trajectory, term_ids, config.history_mode)?,
                    needs: self.needs_prompt.clone(),
                };
                let backend = self.backend.as_deref_mut().expect("agent policy has a backend");
                let decision = decide(
                    &bundle,
                    backend,
                    &config.retry,
                    previous,
                    term_ids,
                    &config.bounds,
                    Some(&mut self.jitter_rng),
                )?;
                let summary = DecisionSummary::from(&decision);
                Ok((decision.weights, Some(summary)))
            }
        }
    }
}

/// Runs `config.stages` stages and returns the trajectory. On failure the
/// stages completed so far are returned inside the error (and are already on
/// disk when `options.out` is set).
pub fn run(config: &RunConfig, options: RunOptions) -> Result<Vec<TrajectoryEntry>, RunFailure> {
    config.validate().map_err(|e| RunFailure::early(RunError::Config(e)))?;
    let repo = LossRepository::from_ids(&config.loss_terms).map_err(RunFailure::early)?;
    let term_ids: Vec<String> = repo.ids().iter().map(|s| s.to_string()).collect();
    let initial = LossWeights::new(config.initial_weights.clone(), &config.bounds).map_err(RunFailure::early)?;

    let backend = match (config.policy, options.backend) {
        (PolicyKind::Agent, Some(b)) => Some(b),
        (PolicyKind::Agent, None) if config.stages > 1 => {
            Some(build_backend(config, &term_ids).map_err(RunFailure::early)?)
        }
        _ => None,
    };
    let templates = PromptTemplates::load(
        config.prompt_templates.system.as_deref(),
        config.prompt_templates.historical.as_deref(),
        config.prompt_templates.needs.as_deref(),
    )
    .map_err(RunFailure::early)?;
    let engine = PromptEngine::new(templates).map_err(RunFailure::early)?;
    let system_prompt = engine
        .build_system_prompt(&config.task_description, &config.objectives, repo.terms())
        .map_err(RunFailure::early)?;
    let needs_prompt = engine
        .build_needs_prompt(&config.rules, repo.terms(), &config.bounds)
        .map_err(RunFailure::early)?;
    let mut policy = Policy {
        kind: config.policy,
        backend,
        engine,
        system_prompt,
        needs_prompt,
        random_rng: stream(config.seed, Stream::RandomPolicy),
        jitter_rng: stream(config.seed, Stream::TemperatureJitter),
    };

    let process = Process::build(config, &repo).map_err(RunFailure::early)?;
    let mut writer = match &options.out {
        Some(path) => Some(
            TrajectoryWriter::create(path, &TrajectoryHeader::new(config.digest(), term_ids.clone()))
                .map_err(RunFailure::early)?,
        ),
        None => None,
    };

    let mut trajectory: Vec<TrajectoryEntry> = Vec::with_capacity(config.stages);
    let mut state = ProcessState::with_rng(process.initial_parameters(&initial), stream(config.seed, Stream::Training));
    let mut step = |trajectory: &[TrajectoryEntry], state: &ProcessState| -> Result<(TrajectoryEntry, ProcessState), RunError> {
        let stage_index = trajectory.len() as u64;
        let (weights, decision) = if trajectory.is_empty() {
            (initial.clone(), None)
        } else {
            policy.next(config, &term_ids, &process, trajectory)?
        };
        let (next_state, report) = process.train(state, &weights, config.iterations_per_stage)?;
        let feedback = process.feedback(config, &next_state, &weights, stage_index)?;
        Ok((
            TrajectoryEntry {
                stage_index,
                weights_used: weights,
                feedback,
                decision,
                stage_report: report,
            },
            next_state,
        ))
    };

    for _ in 0..config.stages {
        match step(&trajectory, &state) {
            Ok((entry, next_state)) => {
                if let Some(w) = writer.as_mut() {
                    if let Err(e) = w.append(&entry) {
                        return Err(RunFailure {
                            error: e.into(),
                            partial: trajectory,
                        });
                    }
                }
                trajectory.push(entry);
                state = next_state;
            }
            Err(error) => {
                return Err(RunFailure {
                    error,
                    partial: trajectory,
                })
            }
        }
    }
    Ok(trajectory)
}

/// Runs and writes the trajectory to `out`.
pub fn run_to_file(config: &RunConfig, out: &Path) -> Result<Vec<TrajectoryEntry>, RunFailure> {
    run(
        config,
        RunOptions {
            out: Some(out.to_path_buf()),
            backend: None,
        },
    )
}
