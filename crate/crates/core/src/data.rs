//! Procedural image synthesis standing in for natural-image datasets.
//!
//! Clean images mix a linear gradient, a few flat rectangles and a sinusoid,
//! clamped to [0, 1], so they have both flat regions and edges. Degraded
//! copies are box-blurred (edge-replicated borders) and/or get additive
//! Gaussian noise.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::image::ImageBatch;
use crate::process::{FixedPool, TestSet};
use crate::seed::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degradation {
    GaussianNoise,
    BoxBlur,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub degradation: Degradation,
    pub noise_sigma: f64,
    /// Odd box-blur side length; 1 is the identity.
    #[serde(default = "default_blur")]
    pub blur_size: usize,
    /// Training pool images drawn after the test images.
    #[serde(default)]
    pub pool_size: usize,
    pub seed: u64,
}

fn default_blur() -> usize {
    3
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.count == 0 {
            return Err("dataset count must be >= 1".into());
        }
        if self.height == 0 || self.width == 0 {
            return Err("image dimensions must be >= 1".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err("noise_sigma must be finite and >= 0".into());
        }
        if self.blur_size == 0 || self.blur_size.is_multiple_of(2) {
            return Err("blur_size must be odd".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub test_set: TestSet,
    pub pool: FixedPool,
}

pub fn clean_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<f64> {
    let base = rng.gen_range(0.2..0.6);
    let gx = rng.gen_range(-0.3..0.3);
    let gy = rng.gen_range(-0.3..0.3);
    let mut img: Vec<f64> = (0..h * w)
        .map(|k| {
            let (i, j) = ((k / w) as f64 / h as f64, (k % w) as f64 / w as f64);
            base + gx * j + gy * i
        })
        .collect();

    let rects = rng.gen_range(1..=3);
    for _ in 0..rects {
        let (i0, j0) = (rng.gen_range(0..h), rng.gen_range(0..w));
        let (rh, rw) = (rng.gen_range(1..=h.max(2) / 2), rng.gen_range(1..=w.max(2) / 2));
        let v = rng.gen_range(0.0..1.0);
        for i in i0..(i0 + rh).min(h) {
            for j in j0..(j0 + rw).min(w) {
                img[i * w + j] = v;
            }
        }
    }

    let amp = rng.gen_range(0.05..0.15);
    let (fx, fy) = (rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0));
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    for i in 0..h {
        for j in 0..w {
            let t = std::f64::consts::TAU * (fx * j as f64 / w as f64 + fy * i as f64 / h as f64) + phase;
            img[i * w + j] = (img[i * w + j] + amp * t.sin()).clamp(0.0, 1.0);
        }
    }
    img
}

/// k×k mean filter with edge-replicated borders.
pub fn box_blur(img: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    if k <= 1 {
        return img.to_vec();
    }
    let r = (k / 2) as isize;
    let norm = (k * k) as f64;
    let mut out = vec![0.0; h * w];
    for i in 0..h as isize {
        for j in 0..w as isize {
            let mut acc = 0.0;
            for di in -r..=r {
                for dj in -r..=r {
                    let si = (i + di).clamp(0, h as isize - 1) as usize;
                    let sj = (j + dj).clamp(0, w as isize - 1) as usize;
                    acc += img[si * w + sj];
                }
            }
            out[i as usize * w + j as usize] = acc / norm;
        }
    }
    out
}

fn degrade(clean: &[f64], spec: &DatasetSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = match spec.degradation {
        Degradation::BoxBlur | Degradation::Both => box_blur(clean, spec.height, spec.width, spec.blur_size),
        Degradation::GaussianNoise => clean.to_vec(),
    };
    if matches!(spec.degradation, Degradation::GaussianNoise | Degradation::Both) && spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).expect("sigma validated");
        for v in &mut out {
            *v += normal.sample(rng);
        }
    }
    out
}

fn draw(rng: &mut ChaCha8Rng, spec: &DatasetSpec, n: usize) -> (ImageBatch, ImageBatch) {
    let mut clean = Vec::with_capacity(n);
    let mut degraded = Vec::with_capacity(n);
    for _ in 0..n {
        let c = clean_image(rng, spec.height, spec.width);
        degraded.push(degrade(&c, spec, rng));
        clean.push(c);
    }
    (
        ImageBatch::from_images(spec.height, spec.width, &degraded).expect("sized"),
        ImageBatch::from_images(spec.height, spec.width, &clean).expect("sized"),
    )
}

/// Test panel of `count` images and a training pool of `pool_size`, both
/// drawn from the data stream of `seed`.
pub fn synthesize_dataset(spec: &DatasetSpec) -> Result<SyntheticData, String> {
    spec.validate()?;
    let mut rng = stream(spec.seed, Stream::Data);
    let (test_degraded, test_clean) = draw(&mut rng, spec, spec.count);
    let (pool_degraded, pool_clean) = draw(&mut rng, spec, spec.pool_size);
    Ok(SyntheticData {
        test_set: TestSet::new(test_degraded, Some(test_clean)).map_err(|e| e.to_string())?,
        pool: FixedPool {
            degraded: pool_degraded,
            clean: pool_clean,
        },
    })
}
