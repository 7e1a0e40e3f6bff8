//! Policy comparison, curve export and the offline self-test.

mod compare;
mod curves;
mod selftest;

pub use compare::{compare_policies, report_from_runs, Cell, ComparisonReport, PolicySummary, RunRecord};
pub use curves::{emit_weight_curves, read_weight_curves, write_weight_curves, CurveError};
pub use selftest::{gradient_sweep, selftest, GradientSweep, SelftestOptions};
