use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{parse_weights, ParseStatus};
use crate::gradcheck::{compare, random_pair, REL_TOLERANCE};
use crate::loss::{LossRepository, TermKind, WeightBounds};
use crate::orchestrator::{run, BackendConfig, PolicyKind, RunConfig, RunOptions, ToyConfig};
use crate::prompt::format_weight_pattern;

#[derive(Debug, Clone, Default)]
pub struct SelftestOptions {
    /// Scales one analytic gradient by 1.01 so the gradient check must fail.
    pub inject_gradient_fault: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSweep {
    pub samples: usize,
    /// Worst relative error per term, in repository order.
    pub worst: Vec<(String, f64)>,
}

impl GradientSweep {
    pub fn passed(&self) -> bool {
        self.worst.iter().all(|(_, e)| *e <= REL_TOLERANCE)
    }
}

/// Checks every loss term's analytic gradient against central differences on
/// `samples` random `h`×`w` pairs. `fault` names a term whose analytic
/// gradient is deliberately scaled by 1.01.
pub fn gradient_sweep(samples: usize, h: usize, w: usize, seed: u64, fault: Option<&str>) -> GradientSweep {
    let ids: Vec<&str> = TermKind::ALL.iter().map(|k| k.id()).collect();
    let repo = LossRepository::from_ids(&ids).expect("built-in terms");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = vec![0.0f64; ids.len()];
    for _ in 0..samples {
        let (p, t) = random_pair(&mut rng, h, w);
        for (i, id) in ids.iter().enumerate() {
            let mut g = repo.loss_gradient(id, &p, &t).expect("shapes match");
            if fault == Some(*id) {
                g = g.map(|v| v * 1.01);
            }
            let check = compare(&repo, i, &p, &t, &g).expect("shapes match");
            worst[i] = worst[i].max(check.max_rel_error);
        }
    }
    GradientSweep {
        samples,
        worst: ids.iter().map(|s| s.to_string()).zip(worst).collect(),
    }
}

fn parse_round_trips(count: usize) -> Result<(), String> {
    let ids = ["l1", "edge", "tv"];
    let bounds = WeightBounds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..count {
        let values: Vec<f64> = (0..ids.len()).map(|_| (rng.gen_range(0.0..10.0) * 1e4f64).round() / 1e4).collect();
        let reply = format!("After looking at the feedback:\n{}", format_weight_pattern(&ids, &values));
        let parsed = parse_weights(&reply, &ids, &bounds).map_err(|e| format!("{reply:?}: {e}"))?;
        if parsed.weights.values() != values.as_slice() {
            return Err(format!("{reply:?} parsed as {:?}", parsed.weights.values()));
        }
    }
    if parse_weights("Keep the edge weight where it is.", &ids, &bounds).is_ok() {
        return Err("a reply without a weight line parsed".into());
    }
    Ok(())
}

fn smoke_run() -> Result<(), String> {
    let cfg = RunConfig {
        stages: 3,
        iterations_per_stage: 10,
        policy: PolicyKind::Agent,
        backend: BackendConfig::HillClimb { objective: None },
        test_set_size: 2,
        toy: ToyConfig {
            kernel_size: 3,
            image_height: 8,
            image_width: 8,
            pool_size: 2,
            ..ToyConfig::default()
        },
        ..RunConfig::default()
    };
    let t = run(&cfg, RunOptions::default()).map_err(|e| e.to_string())?;
    if t.len() != 3 {
        return Err(format!("{} stages recorded, expected 3", t.len()));
    }
    for e in &t[1..] {
        match &e.decision {
            Some(d) if d.parse_status == ParseStatus::Ok => {}
            other => return Err(format!("stage {}: unexpected decision {other:?}", e.stage_index)),
        }
    }
    Ok(())
}

/// Runs every check, prints one line each to `out`, and reports overall success.
pub fn selftest(options: &SelftestOptions, out: &mut dyn Write) -> bool {
    let mut ok = true;
    let mut report = |name: &str, result: Result<(), String>| {
        let line = match &result {
            Ok(()) => format!("PASS {name}"),
            Err(e) => format!("FAIL {name}: {e}"),
        };
        let _ = writeln!(out, "{line}");
        ok &= result.is_ok();
    };

    let fault = options.inject_gradient_fault.then_some("l1");
    let sweep = gradient_sweep(20, 8, 8, 1, fault);
    for (id, err) in &sweep.worst {
        report(
            &format!("gradient {id}"),
            if *err <= REL_TOLERANCE {
                Ok(())
            } else {
                Err(format!("max relative error {err:.3e} > {REL_TOLERANCE:e}"))
            },
        );
    }
    report("parse round-trip", parse_round_trips(200));
    report("3-stage smoke run (scripted backend)", smoke_run());
    ok
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pristine_build_passes() {
        let mut out = Vec::new();
        assert!(selftest(&SelftestOptions::default(), &mut out));
        let text = String::from_utf8(out).unwrap();
        assert!(!text.contains("FAIL"), "{text}");
    }

    #[test]
    fn injected_fault_fails_only_the_gradient_check() {
        let mut out = Vec::new();
        assert!(!selftest(
            &SelftestOptions {
                inject_gradient_fault: true
            },
            &mut out
        ));
        let text = String::from_utf8(out).unwrap();
        let fails: Vec<&str> = text.lines().filter(|l| l.starts_with("FAIL")).collect();
        assert_eq!(fails.len(), 1);
        assert!(fails[0].starts_with("FAIL gradient l1"));
    }
}
