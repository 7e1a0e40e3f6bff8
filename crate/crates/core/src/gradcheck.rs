//! Central finite-difference checks for the repository's analytic gradients.
//!
//! The numeric side only calls `evaluate_losses`, so it stays independent of
//! the hand-derived gradient code it verifies.

use rand::Rng;

use crate::image::ImageBatch;
use crate::loss::{LossError, LossRepository};

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOLERANCE: f64 = 1e-5;
/// Entries whose analytic value cancels to zero only carry rounding noise of
/// order eps·|f|/h, so the denominator is floored at this fraction of the
/// gradient's max-norm.
const REL_FLOOR_FRACTION: f64 = 1e-3;
const REL_FLOOR_MIN: f64 = 1e-12;

/// Minimum distance from any kink of the absolute-value terms. A central
/// difference of width `2 * FD_STEP` straddling a kink would measure the
/// average of two one-sided slopes rather than the derivative.
const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central differences of the term value with respect to every prediction entry.
pub fn numeric_gradient(
    repo: &LossRepository,
    term_index: usize,
    prediction: &ImageBatch,
    target: &ImageBatch,
    step: f64,
) -> Result<Vec<f64>, LossError> {
    let mut probe = prediction.clone();
    let mut out = Vec::with_capacity(prediction.data().len());
    for k in 0..prediction.data().len() {
        let orig = probe.data()[k];
        probe.data_mut()[k] = orig + step;
        let plus = repo.evaluate_losses(&probe, target)?.values()[term_index];
        probe.data_mut()[k] = orig - step;
        let minus = repo.evaluate_losses(&probe, target)?.values()[term_index];
        probe.data_mut()[k] = orig;
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// Compares `analytic` with central differences of term `term_index`.
pub fn compare(
    repo: &LossRepository,
    term_index: usize,
    prediction: &ImageBatch,
    target: &ImageBatch,
    analytic: &ImageBatch,
) -> Result<GradCheck, LossError> {
    let numeric = numeric_gradient(repo, term_index, prediction, target, FD_STEP)?;
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
    };
    let scale = analytic.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (REL_FLOOR_FRACTION * scale).max(REL_FLOOR_MIN);
    for (k, (a, n)) in analytic.data().iter().zip(&numeric).enumerate() {
        let e = relative_error(*a, *n, floor);
        if e > worst.max_rel_error {
            worst = GradCheck {
                max_rel_error: e,
                worst_index: k,
            };
        }
    }
    Ok(worst)
}

fn min_kink_distance(p: &[f64], t: &[f64], h: usize, w: usize) -> f64 {
    let mut m = f64::INFINITY;
    for k in 0..p.len() {
        m = m.min((p[k] - t[k]).abs());
    }
    for i in 0..h {
        for j in 0..w {
            let a = i * w + j;
            let mut pair = |c: usize| {
                m = m.min((p[c] - p[a]).abs());
                m = m.min(((p[c] - p[a]) - (t[c] - t[a])).abs());
            };
            if j + 1 < w {
                pair(a + 1);
            }
            if i + 1 < h {
                pair(a + w);
            }
        }
    }
    m
}

/// Uniform [0,1) prediction/target pair of one `h`×`w` image, resampled until
/// every absolute-value argument sits at least `KINK_MARGIN` from zero.
pub fn random_pair<R: Rng>(rng: &mut R, h: usize, w: usize) -> (ImageBatch, ImageBatch) {
    loop {
        let p: Vec<f64> = (0..h * w).map(|_| rng.gen::<f64>()).collect();
        let t: Vec<f64> = (0..h * w).map(|_| rng.gen::<f64>()).collect();
        if min_kink_distance(&p, &t, h, w) >= KINK_MARGIN {
            return (
                ImageBatch::new(1, h, w, p).expect("sized"),
                ImageBatch::new(1, h, w, t).expect("sized"),
            );
        }
    }
}
