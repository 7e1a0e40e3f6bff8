//! Loss-weight curves as CSV: `stage,<term ids...>,<score objectives...>`,
//! one row per stage, every value in 6-decimal fixed format. Textual
//! objectives have no numeric value and are left out.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::orchestrator::TrajectoryEntry;

#[derive(Debug, Error)]
pub enum CurveError {
    #[error("trajectory is empty")]
    EmptyInput,
    #[error("stage {stage}: {message}")]
    Inconsistent { stage: u64, message: String },
    #[error("csv line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn write_weight_curves<S: AsRef<str>, W: Write>(
    trajectory: &[TrajectoryEntry],
    term_ids: &[S],
    mut out: W,
) -> Result<(), CurveError> {
    let first = trajectory.first().ok_or(CurveError::EmptyInput)?;
    let objectives: Vec<&str> = first
        .feedback
        .iter()
        .filter(|f| f.score_aggregate().is_some())
        .map(|f| f.objective_name.as_str())
        .collect();

    let mut header = vec!["stage"];
    header.extend(term_ids.iter().map(AsRef::as_ref));
    header.extend(objectives.iter().copied());
    writeln!(out, "{}", header.join(","))?;

    for e in trajectory {
        if e.weights_used.len() != term_ids.len() {
            return Err(CurveError::Inconsistent {
                stage: e.stage_index,
                message: format!("{} weights for {} terms", e.weights_used.len(), term_ids.len()),
            });
        }
        let mut row = vec![e.stage_index.to_string()];
        row.extend(e.weights_used.values().iter().map(|v| format!("{v:.6}")));
        for name in &objectives {
            let v = e
                .feedback_for(name)
                .and_then(|f| f.score_aggregate())
                .ok_or_else(|| CurveError::Inconsistent {
                    stage: e.stage_index,
                    message: format!("no score for `{name}`"),
                })?;
            row.push(format!("{v:.6}"));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn emit_weight_curves<S: AsRef<str>>(
    trajectory: &[TrajectoryEntry],
    term_ids: &[S],
    out_path: &Path,
) -> Result<(), CurveError> {
    if trajectory.is_empty() {
        return Err(CurveError::EmptyInput);
    }
    let file = std::io::BufWriter::new(std::fs::File::create(out_path)?);
    write_weight_curves(trajectory, term_ids, file)
}

/// Header and numeric rows of a curve file (the stage column included).
pub fn read_weight_curves(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>), CurveError> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or(CurveError::EmptyInput)?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row: Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
        let row = row.map_err(|e| CurveError::Malformed {
            line: i + 2,
            message: e.to_string(),
        })?;
        if row.len() != header.len() {
            return Err(CurveError::Malformed {
                line: i + 2,
                message: format!("{} fields, header has {}", row.len(), header.len()),
            });
        }
        rows.push(row);
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::{run, PolicyKind, RunConfig, RunOptions};

    fn surface_run(policy: PolicyKind) -> Vec<TrajectoryEntry> {
        let mut cfg = RunConfig::response_surface(20, 7);
        cfg.policy = policy;
        run(&cfg, RunOptions::default()).unwrap()
    }

    fn csv(t: &[TrajectoryEntry]) -> String {
        let mut buf = Vec::new();
        write_weight_curves(t, &["l1", "edge", "tv"], &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn one_row_per_stage() {
        let text = csv(&surface_run(PolicyKind::Random));
        assert_eq!(text.lines().count(), 21);
        assert_eq!(text.lines().next().unwrap(), "stage,l1,edge,tv,surface");
        assert!(text.lines().nth(1).unwrap().starts_with("0,0.500000,0.500000,0.500000,"));
    }

    #[test]
    fn fixed_policy_columns_are_constant() {
        let (_, rows) = read_weight_curves(&csv(&surface_run(PolicyKind::Fixed))).unwrap();
        for col in 1..4 {
            assert!(rows.iter().all(|r| r[col] == rows[0][col]));
        }
    }

    #[test]
    fn csv_recovers_weights() {
        let t = surface_run(PolicyKind::Random);
        let (_, rows) = read_weight_curves(&csv(&t)).unwrap();
        for (e, r) in t.iter().zip(&rows) {
            assert_eq!(r[0], e.stage_index as f64);
            for (a, b) in e.weights_used.values().iter().zip(&r[1..4]) {
                assert!((a - b).abs() <= 5e-7);
            }
        }
    }

    #[test]
    fn empty_trajectory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = emit_weight_curves::<&str>(&[], &[], &dir.path().join("c.csv")).unwrap_err();
        assert!(matches!(err, CurveError::EmptyInput));
    }
}
