use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;

use super::{ProcessError, ProcessState, StageReport};
use crate::image::ImageBatch;
use crate::loss::{compose, LossError, LossRepository, LossVector, LossWeights};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;

/// Supplies `(degraded, clean)` training batches.
pub trait DataSource {
    fn next_batch(&self, rng: &mut ChaCha8Rng) -> (ImageBatch, ImageBatch);
}

/// Full-batch source: every step sees the whole pool.
#[derive(Debug, Clone)]
pub struct FixedPool {
    pub degraded: ImageBatch,
    pub clean: ImageBatch,
}

impl DataSource for FixedPool {
    fn next_batch(&self, _rng: &mut ChaCha8Rng) -> (ImageBatch, ImageBatch) {
        (self.degraded.clone(), self.clean.clone())
    }
}

/// Draws `batch_size` distinct pool images per step.
#[derive(Debug, Clone)]
pub struct SampledPool {
    pub pool: FixedPool,
    pub batch_size: usize,
}

impl DataSource for SampledPool {
    fn next_batch(&self, rng: &mut ChaCha8Rng) -> (ImageBatch, ImageBatch) {
        let n = self.pool.degraded.len();
        let idx = sample(rng, n, self.batch_size.min(n)).into_vec();
        (self.pool.degraded.select(&idx), self.pool.clean.select(&idx))
    }
}

/// One k×k zero-padded convolution kernel, no bias, no nonlinearity.
#[derive(Debug, Clone)]
pub struct ToyRestorer {
    pub kernel_size: usize,
    pub learning_rate: f64,
    pub repository: LossRepository,
}

impl ToyRestorer {
    pub fn new(kernel_size: usize, learning_rate: f64, repository: LossRepository) -> Self {
        assert!(kernel_size % 2 == 1, "kernel size must be odd");
        Self {
            kernel_size,
            learning_rate,
            repository,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.kernel_size * self.kernel_size
    }

    /// Delta kernel: the restorer starts as the identity map.
    pub fn identity_parameters(&self) -> Vec<f64> {
        let mut k = vec![0.0; self.parameter_count()];
        let c = self.kernel_size / 2;
        k[c * self.kernel_size + c] = 1.0;
        k
    }

    pub fn infer(&self, state: &ProcessState, degraded: &ImageBatch) -> ImageBatch {
        convolve(&state.parameters, self.kernel_size, degraded)
    }

    /// Runs `iterations` SGD steps on the weighted loss, returning a new state.
    pub fn train_stage(
        &self,
        state: &ProcessState,
        weights: &LossWeights,
        iterations: u64,
        data: &dyn DataSource,
    ) -> Result<(ProcessState, StageReport), ProcessError> {
        if weights.len() != self.repository.len() {
            return Err(LossError::Dimension {
                expected: self.repository.len(),
                found: weights.len(),
            }
            .into());
        }
        let mut next = state.clone();
        let mut sum_composed = 0.0;
        let mut sum_terms = vec![0.0; self.repository.len()];

        for step in 0..iterations {
            let (degraded, clean) = data.next_batch(&mut next.rng);
            let output = convolve(&next.parameters, self.kernel_size, &degraded);
            let diverged = |detail: String| ProcessError::Diverged {
                stage: state.stage_index,
                step,
                detail,
            };
            if !output.is_finite() {
                return Err(diverged("non-finite model output".into()));
            }
            let (losses, grad_out) = self
                .repository
                .weighted_value_and_gradient(weights, &output, &clean)?;
            let composed = compose(weights, &losses).map_err(|e| diverged(e.to_string()))?;
            if !composed.is_finite() {
                return Err(diverged(format!("composed loss {composed}")));
            }
            sum_composed += composed;
            for (acc, v) in sum_terms.iter_mut().zip(losses.values()) {
                *acc += v;
            }

            let grad_kernel = kernel_gradient(&grad_out, &degraded, self.kernel_size);
            for (p, g) in next.parameters.iter_mut().zip(&grad_kernel) {
                *p -= self.learning_rate * g;
            }
            if next.parameters.iter().any(|p| !p.is_finite()) {
                return Err(diverged("non-finite parameters after update".into()));
            }
        }

        next.stage_index += 1;
        next.iteration_count += iterations;
        let denom = iterations.max(1) as f64;
        let report = StageReport {
            mean_composed_loss: sum_composed / denom,
            mean_per_term_loss: LossVector::new(sum_terms.into_iter().map(|v| v / denom).collect()),
            steps_taken: iterations,
        };
        Ok((next, report))
    }

    /// Composed loss of the current parameters on a fixed batch.
    pub fn validation_loss(
        &self,
        state: &ProcessState,
        weights: &LossWeights,
        degraded: &ImageBatch,
        clean: &ImageBatch,
    ) -> Result<f64, LossError> {
        let out = self.infer(state, degraded);
        compose(weights, &self.repository.evaluate_losses(&out, clean)?)
    }
}

/// y(b,i,j) = Σ_{u,v} K(u,v) · x(b, i+u−c, j+v−c), zero outside the image.
fn convolve(kernel: &[f64], k: usize, input: &ImageBatch) -> ImageBatch {
    let (b, h, w) = input.shape();
    let c = (k / 2) as isize;
    let mut out = ImageBatch::zeros(b, h, w);
    for img in 0..b {
        let x = input.image(img);
        let y = out.image_mut(img);
        for u in 0..k {
            for v in 0..k {
                let kv = kernel[u * k + v];
                if kv == 0.0 {
                    continue;
                }
                let du = u as isize - c;
                let dv = v as isize - c;
                for i in 0..h {
                    let si = i as isize + du;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let src_row = si as usize * w;
                    let dst_row = i * w;
                    let j_lo = (-dv).max(0) as usize;
                    let j_hi = (w as isize - dv).min(w as isize).max(0) as usize;
                    for j in j_lo..j_hi {
                        y[dst_row + j] += kv * x[src_row + (j as isize + dv) as usize];
                    }
                }
            }
        }
    }
    out
}

/// ∂L/∂K(u,v) = Σ_{b,i,j} g(b,i,j) · x(b, i+u−c, j+v−c).
fn kernel_gradient(grad_out: &ImageBatch, input: &ImageBatch, k: usize) -> Vec<f64> {
    let (b, h, w) = input.shape();
    let c = (k / 2) as isize;
    let mut gk = vec![0.0; k * k];
    for img in 0..b {
        let x = input.image(img);
        let g = grad_out.image(img);
        for u in 0..k {
            for v in 0..k {
                let du = u as isize - c;
                let dv = v as isize - c;
                let mut acc = 0.0;
                for i in 0..h {
                    let si = i as isize + du;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let src_row = si as usize * w;
                    let dst_row = i * w;
                    let j_lo = (-dv).max(0) as usize;
                    let j_hi = (w as isize - dv).min(w as isize).max(0) as usize;
                    for j in j_lo..j_hi {
                        acc += g[dst_row + j] * x[src_row + (j as isize + dv) as usize];
                    }
                }
                gk[u * k + v] += acc;
            }
        }
    }
    gk
}
