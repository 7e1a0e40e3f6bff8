//! Weighted compositional loss repository.
//!
//! A [`LossRepository`] is an ordered set of differentiable loss terms. The
//! training loss for a stage is the dot product of a [`LossWeights`] vector
//! with the per-term [`LossVector`] evaluated on a batch. Every term reduces by
//! the mean over batch and pixels, so magnitudes stay comparable across image
//! sizes.
//!
//! Built-in terms:
//!
//! | id              | reference | meaning                                                        |
//! |-----------------|-----------|----------------------------------------------------------------|
//! | `l1`            | yes       | mean absolute residual                                         |
//! | `edge`          | yes       | mean absolute difference of first-order spatial differences    |
//! | `tv`            | no        | total variation of the prediction                              |
//! | `mse`           | yes       | mean squared residual                                          |
//! | `ssim_proxy`    | yes       | `1 - SSIM` computed from whole-image statistics                |
//! | `neg_sharpness` | no        | negative Laplacian variance; the "objective as loss" mode      |
//!
//! `neg_sharpness` exists to compare against training directly on a
//! no-reference objective. It is unbounded below and tends to destabilise
//! training, so it is never part of a default repository.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{laplacian_interior, ImageBatch};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize, usize),
        right: (usize, usize, usize),
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("unknown loss term `{0}`")]
    UnknownTerm(String),
    #[error("invalid loss term id `{0}`: ids must be non-empty without whitespace, `:` or `=`")]
    InvalidId(String),
    #[error("duplicate loss term id `{0}`")]
    DuplicateId(String),
    #[error("weight {index} = {value} outside bounds [{lower}, {upper}]")]
    OutOfBounds {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("invalid weight bounds [{lower}, {upper}]")]
    InvalidBounds { lower: f64, upper: f64 },
}

/// Inclusive range every loss weight must lie in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightBounds {
    pub lower: f64,
    pub upper: f64,
}

impl Default for WeightBounds {
    fn default() -> Self {
        Self {
            lower: 0.0,
            upper: 10.0,
        }
    }
}

impl WeightBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self, LossError> {
        let b = Self { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if !self.lower.is_finite() || !self.upper.is_finite() || self.lower > self.upper {
            return Err(LossError::InvalidBounds {
                lower: self.lower,
                upper: self.upper,
            });
        }
        Ok(())
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }

    pub fn clip(&self, v: f64) -> f64 {
        v.clamp(self.lower, self.upper)
    }
}

/// Coefficients applied to the repository terms, aligned by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LossWeights(Vec<f64>);

impl LossWeights {
    /// Validates finiteness and bounds.
    pub fn new(values: Vec<f64>, bounds: &WeightBounds) -> Result<Self, LossError> {
        let w = Self(values);
        w.validate(bounds)?;
        Ok(w)
    }

    /// Wraps values without bounds checking; callers must validate before training.
    pub fn from_vec_unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn validate(&self, bounds: &WeightBounds) -> Result<(), LossError> {
        for (index, &value) in self.0.iter().enumerate() {
            if !value.is_finite() {
                return Err(LossError::NonFinite("weights"));
            }
            if !bounds.contains(value) {
                return Err(LossError::OutOfBounds {
                    index,
                    value,
                    lower: bounds.lower,
                    upper: bounds.upper,
                });
            }
        }
        Ok(())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-term loss magnitudes for one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LossVector(Vec<f64>);

impl LossVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Σ_m w_m · L_m, summed left to right.
pub fn compose(weights: &LossWeights, losses: &LossVector) -> Result<f64, LossError> {
    if weights.len() != losses.len() {
        return Err(LossError::Dimension {
            expected: weights.len(),
            found: losses.len(),
        });
    }
    if weights.values().iter().any(|v| !v.is_finite()) {
        return Err(LossError::NonFinite("weights"));
    }
    if losses.values().iter().any(|v| !v.is_finite()) {
        return Err(LossError::NonFinite("losses"));
    }
    let mut acc = 0.0;
    for (w, l) in weights.values().iter().zip(losses.values()) {
        acc += w * l;
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    L1,
    Edge,
    Tv,
    Mse,
    SsimProxy,
    NegSharpness,
}

impl TermKind {
    pub const ALL: [TermKind; 6] = [
        TermKind::L1,
        TermKind::Edge,
        TermKind::Tv,
        TermKind::Mse,
        TermKind::SsimProxy,
        TermKind::NegSharpness,
    ];

    pub fn id(self) -> &'static str {
        match self {
            TermKind::L1 => "l1",
            TermKind::Edge => "edge",
            TermKind::Tv => "tv",
            TermKind::Mse => "mse",
            TermKind::SsimProxy => "ssim_proxy",
            TermKind::NegSharpness => "neg_sharpness",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.id() == id)
    }

    pub fn describe(self) -> LossTerm {
        let (description, requires_reference) = match self {
            TermKind::L1 => ("pixel-wise mean absolute error against the clean target", true),
            TermKind::Edge => (
                "mean absolute difference between prediction and target spatial gradients (structure/perceptual proxy)",
                true,
            ),
            TermKind::Tv => (
                "total variation of the prediction (smoothness/realism regulariser)",
                false,
            ),
            TermKind::Mse => ("pixel-wise mean squared error against the clean target", true),
            TermKind::SsimProxy => (
                "one minus global structural similarity against the clean target",
                true,
            ),
            TermKind::NegSharpness => (
                "negative Laplacian variance of the prediction (no-reference objective used directly as a loss)",
                false,
            ),
        };
        LossTerm {
            id: self.id().to_string(),
            description: description.to_string(),
            requires_reference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossTerm {
    pub id: String,
    pub description: String,
    pub requires_reference: bool,
}

impl LossTerm {
    pub fn new(
        id: impl Into<String>,
        description: impl Into<String>,
        requires_reference: bool,
    ) -> Result<Self, LossError> {
        let id = id.into();
        validate_term_id(&id)?;
        Ok(Self {
            id,
            description: description.into(),
            requires_reference,
        })
    }
}

pub fn validate_term_id(id: &str) -> Result<(), LossError> {
    if id.is_empty() || id.chars().any(|c| c.is_whitespace() || c == ':' || c == '=') {
        return Err(LossError::InvalidId(id.to_string()));
    }
    Ok(())
}

/// Ordered set of loss terms.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRepository {
    kinds: Vec<TermKind>,
    terms: Vec<LossTerm>,
}

pub const DEFAULT_TERMS: [&str; 3] = ["l1", "edge", "tv"];
pub const EXTENDED_TERMS: [&str; 5] = ["l1", "edge", "tv", "mse", "ssim_proxy"];

impl Default for LossRepository {
    fn default() -> Self {
        Self::from_ids(&DEFAULT_TERMS).expect("default terms are registered")
    }
}

impl LossRepository {
    pub fn from_ids<S: AsRef<str>>(ids: &[S]) -> Result<Self, LossError> {
        let mut kinds = Vec::with_capacity(ids.len());
        for id in ids {
            let id = id.as_ref();
            let kind = TermKind::from_id(id).ok_or_else(|| LossError::UnknownTerm(id.to_string()))?;
            if kinds.contains(&kind) {
                return Err(LossError::DuplicateId(id.to_string()));
            }
            kinds.push(kind);
        }
        let terms = kinds.iter().map(|k| k.describe()).collect();
        Ok(Self { kinds, terms })
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn terms(&self) -> &[LossTerm] {
        &self.terms
    }

    pub fn kinds(&self) -> &[TermKind] {
        &self.kinds
    }

    pub fn ids(&self) -> Vec<&str> {
        self.kinds.iter().map(|k| k.id()).collect()
    }

    pub fn evaluate_losses(
        &self,
        prediction: &ImageBatch,
        target: &ImageBatch,
    ) -> Result<LossVector, LossError> {
        check_inputs(prediction, target)?;
        Ok(LossVector(
            self.kinds
                .iter()
                .map(|&k| term_value(k, prediction, target))
                .collect(),
        ))
    }

    /// ∂term/∂prediction for the term named `term_id`.
    pub fn loss_gradient(
        &self,
        term_id: &str,
        prediction: &ImageBatch,
        target: &ImageBatch,
    ) -> Result<ImageBatch, LossError> {
        let kind = self
            .kinds
            .iter()
            .copied()
            .find(|k| k.id() == term_id)
            .ok_or_else(|| LossError::UnknownTerm(term_id.to_string()))?;
        check_inputs(prediction, target)?;
        Ok(term_gradient(kind, prediction, target))
    }

    /// Per-term values and the gradient of the weighted sum in one pass.
    pub fn weighted_value_and_gradient(
        &self,
        weights: &LossWeights,
        prediction: &ImageBatch,
        target: &ImageBatch,
    ) -> Result<(LossVector, ImageBatch), LossError> {
        if weights.len() != self.len() {
            return Err(LossError::Dimension {
                expected: self.len(),
                found: weights.len(),
            });
        }
        check_inputs(prediction, target)?;
        let (b, h, w) = prediction.shape();
        let mut grad = ImageBatch::zeros(b, h, w);
        let mut values = Vec::with_capacity(self.len());
        for (&kind, &wt) in self.kinds.iter().zip(weights.values()) {
            values.push(term_value(kind, prediction, target));
            if wt != 0.0 {
                let g = term_gradient(kind, prediction, target);
                for (acc, gv) in grad.data_mut().iter_mut().zip(g.data()) {
                    *acc += wt * gv;
                }
            }
        }
        Ok((LossVector(values), grad))
    }
}

fn check_inputs(prediction: &ImageBatch, target: &ImageBatch) -> Result<(), LossError> {
    prediction.ensure_same_shape(target)?;
    if !prediction.is_finite() {
        return Err(LossError::NonFinite("prediction"));
    }
    if !target.is_finite() {
        return Err(LossError::NonFinite("target"));
    }
    Ok(())
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn element_count(batch: &ImageBatch) -> f64 {
    (batch.len() * batch.pixels_per_image()).max(1) as f64
}

/// Visits every horizontal and vertical neighbour pair `(a, b)` (b right of or below a).
fn for_each_neighbour_pair(h: usize, w: usize, mut f: impl FnMut(usize, usize)) {
    for i in 0..h {
        for j in 0..w {
            let a = i * w + j;
            if j + 1 < w {
                f(a, a + 1);
            }
            if i + 1 < h {
                f(a, a + w);
            }
        }
    }
}

const SSIM_C1: f64 = 1e-4; // (0.01 * peak)^2, peak = 1
const SSIM_C2: f64 = 9e-4; // (0.03 * peak)^2

struct GlobalStats {
    mean_p: f64,
    mean_t: f64,
    var_p: f64,
    var_t: f64,
    cov: f64,
}

fn global_stats(p: &[f64], t: &[f64]) -> GlobalStats {
    let n = p.len() as f64;
    let mean_p = p.iter().sum::<f64>() / n;
    let mean_t = t.iter().sum::<f64>() / n;
    let (mut var_p, mut var_t, mut cov) = (0.0, 0.0, 0.0);
    for (a, b) in p.iter().zip(t) {
        let (dp, dt) = (a - mean_p, b - mean_t);
        var_p += dp * dp;
        var_t += dt * dt;
        cov += dp * dt;
    }
    GlobalStats {
        mean_p,
        mean_t,
        var_p: var_p / n,
        var_t: var_t / n,
        cov: cov / n,
    }
}

fn ssim_parts(s: &GlobalStats) -> (f64, f64, f64, f64) {
    (
        2.0 * s.mean_p * s.mean_t + SSIM_C1,
        2.0 * s.cov + SSIM_C2,
        s.mean_p * s.mean_p + s.mean_t * s.mean_t + SSIM_C1,
        s.var_p + s.var_t + SSIM_C2,
    )
}

fn term_value(kind: TermKind, prediction: &ImageBatch, target: &ImageBatch) -> f64 {
    let n = element_count(prediction);
    let (b, h, w) = prediction.shape();
    let p = prediction.data();
    let t = target.data();
    match kind {
        TermKind::L1 => p.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>() / n,
        TermKind::Mse => p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n,
        TermKind::Edge => {
            let mut acc = 0.0;
            for (pi, ti) in prediction.images().zip(target.images()) {
                for_each_neighbour_pair(h, w, |a, c| {
                    acc += ((pi[c] - pi[a]) - (ti[c] - ti[a])).abs();
                });
            }
            acc / n
        }
        TermKind::Tv => {
            let mut acc = 0.0;
            for pi in prediction.images() {
                for_each_neighbour_pair(h, w, |a, c| acc += (pi[c] - pi[a]).abs());
            }
            acc / n
        }
        TermKind::SsimProxy => {
            if b == 0 || h * w == 0 {
                return 0.0;
            }
            let mut acc = 0.0;
            for (pi, ti) in prediction.images().zip(target.images()) {
                let (a1, b1, c1, d1) = ssim_parts(&global_stats(pi, ti));
                acc += 1.0 - (a1 * b1) / (c1 * d1);
            }
            acc / b as f64
        }
        TermKind::NegSharpness => {
            if b == 0 {
                return 0.0;
            }
            let acc: f64 = prediction
                .images()
                .map(|pi| crate::image::variance(&laplacian_interior(pi, h, w)))
                .sum();
            -acc / b as f64
        }
    }
}

fn term_gradient(kind: TermKind, prediction: &ImageBatch, target: &ImageBatch) -> ImageBatch {
    let n = element_count(prediction);
    let (b, h, w) = prediction.shape();
    let mut grad = ImageBatch::zeros(b, h, w);
    match kind {
        TermKind::L1 => {
            for ((g, a), c) in grad.data_mut().iter_mut().zip(prediction.data()).zip(target.data()) {
                *g = sign(a - c) / n;
            }
        }
        TermKind::Mse => {
            for ((g, a), c) in grad.data_mut().iter_mut().zip(prediction.data()).zip(target.data()) {
                *g = 2.0 * (a - c) / n;
            }
        }
        TermKind::Edge | TermKind::Tv => {
            for img in 0..b {
                let pi = prediction.image(img);
                let ti = target.image(img);
                let gi = grad.image_mut(img);
                for_each_neighbour_pair(h, w, |a, c| {
                    let d = if kind == TermKind::Edge {
                        (pi[c] - pi[a]) - (ti[c] - ti[a])
                    } else {
                        pi[c] - pi[a]
                    };
                    let s = sign(d) / n;
                    gi[c] += s;
                    gi[a] -= s;
                });
            }
        }
        TermKind::SsimProxy => {
            if b == 0 || h * w == 0 {
                return grad;
            }
            let px = (h * w) as f64;
            for img in 0..b {
                let pi = prediction.image(img);
                let ti = target.image(img);
                let st = global_stats(pi, ti);
                let (a1, b1, c1, d1) = ssim_parts(&st);
                let ssim = (a1 * b1) / (c1 * d1);
                let gi = grad.image_mut(img);
                for k in 0..pi.len() {
                    let da = 2.0 * st.mean_t / px;
                    let db = 2.0 * (ti[k] - st.mean_t) / px;
                    let dc = 2.0 * st.mean_p / px;
                    let dd = 2.0 * (pi[k] - st.mean_p) / px;
                    let dssim = ssim * (da / a1 + db / b1 - dc / c1 - dd / d1);
                    gi[k] = -dssim / b as f64;
                }
            }
        }
        TermKind::NegSharpness => {
            if b == 0 || h < 3 || w < 3 {
                return grad;
            }
            let count = ((h - 2) * (w - 2)) as f64;
            for img in 0..b {
                let lap = laplacian_interior(prediction.image(img), h, w);
                let mean = lap.iter().sum::<f64>() / count;
                let gi = grad.image_mut(img);
                let mut idx = 0;
                for i in 1..h - 1 {
                    for j in 1..w - 1 {
                        // d(-var)/d(lap_k) = -2 (lap_k - mean) / count, averaged over the batch
                        let g = -2.0 * (lap[idx] - mean) / count / b as f64;
                        gi[(i - 1) * w + j] += g;
                        gi[(i + 1) * w + j] += g;
                        gi[i * w + j - 1] += g;
                        gi[i * w + j + 1] += g;
                        gi[i * w + j] -= 4.0 * g;
                        idx += 1;
                    }
                }
            }
        }
    }
    grad
}
