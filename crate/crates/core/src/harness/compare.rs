use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::ParseStatus;
use crate::orchestrator::{run, PolicyKind, RunConfig, RunOptions, TrajectoryEntry};

/// One (policy, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub policy: String,
    pub seed: u64,
    pub stages_completed: usize,
    /// Score objectives of the last completed stage.
    pub final_feedback: BTreeMap<String, f64>,
    pub parse_ok: usize,
    pub parse_fallback: usize,
    pub clipped: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: String,
    pub completed_runs: usize,
    pub failed_runs: usize,
    /// Mean over completed runs of the final score per objective.
    pub mean_final_feedback: BTreeMap<String, f64>,
    pub parse_ok: usize,
    pub parse_fallback: usize,
    pub clipped: usize,
    /// `parse_ok / (parse_ok + parse_fallback)`, absent without agent decisions.
    pub parse_success_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub policies: Vec<String>,
    pub seeds: Vec<u64>,
    /// Policy-major, in request order.
    pub cells: Vec<Cell>,
    pub summaries: Vec<PolicySummary>,
}

impl ComparisonReport {
    pub fn cell(&self, policy: &str, seed: u64) -> Option<&Cell> {
        self.cells.iter().find(|c| c.policy == policy && c.seed == seed)
    }
}

/// Finished or aborted run as input to [`report_from_runs`].
pub type RunRecord = (String, u64, Vec<TrajectoryEntry>, Option<String>);

fn cell_from(policy: String, seed: u64, trajectory: &[TrajectoryEntry], error: Option<String>) -> Cell {
    let final_feedback = trajectory
        .last()
        .map(|e| {
            e.feedback
                .iter()
                .filter_map(|f| Some((f.objective_name.clone(), f.score_aggregate()?)))
                .collect()
        })
        .unwrap_or_default();
    let decisions = trajectory.iter().filter_map(|e| e.decision.as_ref());
    let (mut ok, mut fallback, mut clipped) = (0, 0, 0);
    for d in decisions {
        match d.parse_status {
            ParseStatus::Ok => ok += 1,
            ParseStatus::Fallback => fallback += 1,
        }
        clipped += d.clipped as usize;
    }
    Cell {
        policy,
        seed,
        stages_completed: trajectory.len(),
        final_feedback,
        parse_ok: ok,
        parse_fallback: fallback,
        clipped,
        trajectory: None,
        error,
    }
}

/// Builds the report from per-run trajectories; sequential and pure.
pub fn report_from_runs(policies: &[String], seeds: &[u64], runs: Vec<RunRecord>) -> ComparisonReport {
    let cells: Vec<Cell> = runs
        .into_iter()
        .map(|(p, s, t, e)| cell_from(p, s, &t, e))
        .collect();
    let mut summaries = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for policy in policies {
        if !seen.insert(policy.clone()) {
            continue;
        }
        let mine: Vec<&Cell> = cells.iter().filter(|c| &c.policy == policy).collect();
        let done: Vec<&&Cell> = mine.iter().filter(|c| c.error.is_none()).collect();
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for c in &done {
            for (k, v) in &c.final_feedback {
                let e = sums.entry(k.clone()).or_default();
                e.0 += v;
                e.1 += 1;
            }
        }
        let parse_ok: usize = mine.iter().map(|c| c.parse_ok).sum();
        let parse_fallback: usize = mine.iter().map(|c| c.parse_fallback).sum();
        summaries.push(PolicySummary {
            policy: policy.clone(),
            completed_runs: done.len(),
            failed_runs: mine.len() - done.len(),
            mean_final_feedback: sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
            parse_ok,
            parse_fallback,
            clipped: mine.iter().map(|c| c.clipped).sum(),
            parse_success_rate: (parse_ok + parse_fallback > 0)
                .then(|| parse_ok as f64 / (parse_ok + parse_fallback) as f64),
        });
    }
    ComparisonReport {
        policies: policies.to_vec(),
        seeds: seeds.to_vec(),
        cells,
        summaries,
    }
}

/// Runs every (policy, seed) pair of `base` on up to `workers` threads.
/// Run failures are recorded in their cell; trajectories go to `out_dir`
/// when given.
pub fn compare_policies(
    base: &RunConfig,
    policies: &[PolicyKind],
    seeds: &[u64],
    workers: usize,
    out_dir: Option<&Path>,
) -> Result<ComparisonReport, String> {
    if policies.is_empty() || seeds.is_empty() {
        return Err("compare needs at least one policy and one seed".into());
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    let jobs: Vec<(usize, PolicyKind, u64)> = policies
        .iter()
        .enumerate()
        .flat_map(|(pi, &p)| seeds.iter().map(move |&s| (pi, p, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| e.to_string())?;
    let results: Vec<(RunRecord, Option<PathBuf>)> = pool.install(|| {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|&(pi, policy, seed)| {
                let mut cfg = base.clone();
                cfg.policy = policy;
                cfg.seed = seed;
                let path = out_dir.map(|d| d.join(format!("p{pi}_{}_seed{seed}.jsonl", policy.name())));
                let options = RunOptions {
                    out: path.clone(),
                    backend: None,
                };
                let (trajectory, error) = match run(&cfg, options) {
                    Ok(t) => (t, None),
                    Err(f) => (f.partial, Some(f.error.to_string())),
                };
                ((policy.name().to_string(), seed, trajectory, error), path)
            })
            .collect()
    });
    let (runs, paths): (Vec<RunRecord>, Vec<Option<PathBuf>>) = results.into_iter().unzip();
    let names: Vec<String> = policies.iter().map(|p| p.name().to_string()).collect();
    let mut report = report_from_runs(&names, seeds, runs);
    for (cell, path) in report.cells.iter_mut().zip(paths) {
        cell.trajectory = path;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn surface() -> RunConfig {
        RunConfig::response_surface(20, 0)
    }

    #[test]
    fn single_cell_equals_its_run() {
        let mut cfg = surface();
        cfg.policy = PolicyKind::Fixed;
        let report = compare_policies(&cfg, &[PolicyKind::Fixed], &[0], 1, None).unwrap();
        assert_eq!(report.cells.len(), 1);
        let direct = run(&cfg, RunOptions::default()).unwrap();
        let expected = direct.last().unwrap().feedback[0].score_aggregate().unwrap();
        assert_eq!(report.cells[0].final_feedback["surface"], expected);
        assert_eq!(report.summaries[0].mean_final_feedback["surface"], expected);
    }

    #[test]
    fn duplicate_policy_gives_identical_cells() {
        let report = compare_policies(&surface(), &[PolicyKind::Random, PolicyKind::Random], &[3, 4], 2, None).unwrap();
        assert_eq!(report.cells.len(), 4);
        assert_eq!(report.cells[0], report.cells[2]);
        assert_eq!(report.cells[1], report.cells[3]);
        assert_eq!(report.summaries.len(), 1);
    }

    #[test]
    fn oracle_dominates_random() {
        let seeds: Vec<u64> = (0..10).collect();
        let report = compare_policies(&surface(), &[PolicyKind::GreedyOracle, PolicyKind::Random], &seeds, 4, None).unwrap();
        for &s in &seeds {
            let o = report.cell("greedy_oracle", s).unwrap().final_feedback["surface"];
            let r = report.cell("random", s).unwrap().final_feedback["surface"];
            assert!(o >= r, "seed {s}: {o} < {r}");
        }
    }

    #[test]
    fn failures_are_recorded_per_cell() {
        // greedy_oracle is invalid on the toy restorer; fixed still completes
        let mut cfg = RunConfig {
            stages: 2,
            iterations_per_stage: 2,
            test_set_size: 2,
            ..RunConfig::default()
        };
        cfg.toy.image_height = 8;
        cfg.toy.image_width = 8;
        let dir = tempfile::tempdir().unwrap();
        let report = compare_policies(
            &cfg,
            &[PolicyKind::Fixed, PolicyKind::GreedyOracle],
            &[1],
            2,
            Some(dir.path()),
        )
        .unwrap();
        assert!(report.cells[0].error.is_none());
        assert!(report.cells[1].error.is_some());
        assert_eq!(report.summaries[1].failed_runs, 1);
        assert!(report.cells[0].trajectory.as_ref().unwrap().exists());
    }

    #[test]
    fn empty_requests_are_rejected() {
        assert!(compare_policies(&surface(), &[], &[1], 1, None).is_err());
        assert!(compare_policies(&surface(), &[PolicyKind::Fixed], &[], 1, None).is_err());
    }
}
