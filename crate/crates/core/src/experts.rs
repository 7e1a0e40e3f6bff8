//! External evaluation experts: scorers and critics that turn restored test
//! images into score or textual feedback.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{laplacian_interior, total_variation_sum, variance, ImageBatch};

pub const PSNR_CAP_DB: f64 = 100.0;
pub const DEFAULT_TEXT_CAP: usize = 400;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExpertError {
    #[error("unknown expert `{0}`")]
    UnknownExpert(String),
    #[error("expert `{0}` needs reference images but none were supplied")]
    MissingReference(String),
    #[error("expert `{expert}` is {actual:?}, not {requested:?}")]
    WrongKind {
        expert: String,
        requested: ObjectiveKind,
        actual: ObjectiveKind,
    },
    #[error("improvement is only defined for score feedback")]
    UnsupportedKind,
    #[error("feedback for `{0}` and `{1}` cannot be compared")]
    ObjectiveMismatch(String, String),
    #[error("objective `{0}`: {1}")]
    InvalidObjective(String, String),
    #[error("shape mismatch between outputs and references")]
    Shape,
    #[error("remote expert `{expert}`: {message}")]
    Remote { expert: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Score,
    Textual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

impl Direction {
    pub fn word(self) -> &'static str {
        match self {
            Direction::HigherBetter => "higher",
            Direction::LowerBetter => "lower",
        }
    }
}

/// An optimisation objective and the expert that measures it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub name: String,
    pub expert_id: String,
    pub kind: ObjectiveKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    #[serde(default)]
    pub needs_reference: bool,
}

impl ObjectiveSpec {
    pub fn score(
        name: impl Into<String>,
        expert_id: impl Into<String>,
        direction: Direction,
        needs_reference: bool,
    ) -> Self {
        Self {
            name: name.into(),
            expert_id: expert_id.into(),
            kind: ObjectiveKind::Score,
            direction: Some(direction),
            needs_reference,
        }
    }

    pub fn textual(name: impl Into<String>, expert_id: impl Into<String>, needs_reference: bool) -> Self {
        Self {
            name: name.into(),
            expert_id: expert_id.into(),
            kind: ObjectiveKind::Textual,
            direction: None,
            needs_reference,
        }
    }

    pub fn validate(&self) -> Result<(), ExpertError> {
        let bad = |m: &str| Err(ExpertError::InvalidObjective(self.name.clone(), m.into()));
        if self.name.trim().is_empty() {
            return bad("name must not be empty");
        }
        match (self.kind, self.direction) {
            (ObjectiveKind::Score, None) => bad("score objectives need a direction"),
            (ObjectiveKind::Textual, Some(_)) => bad("textual objectives carry no direction"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeedbackValues {
    Score { per_image: Vec<f64>, aggregate: f64 },
    Textual { per_image: Vec<String>, aggregate: String },
}

/// One objective's feedback on the test panel after a stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feedback {
    pub objective_name: String,
    pub stage_index: u64,
    #[serde(flatten)]
    pub values: FeedbackValues,
}

impl Feedback {
    pub fn score_aggregate(&self) -> Option<f64> {
        match &self.values {
            FeedbackValues::Score { aggregate, .. } => Some(*aggregate),
            FeedbackValues::Textual { .. } => None,
        }
    }

    pub fn image_count(&self) -> usize {
        match &self.values {
            FeedbackValues::Score { per_image, .. } => per_image.len(),
            FeedbackValues::Textual { per_image, .. } => per_image.len(),
        }
    }
}

/// Raw per-image output of an expert.
#[derive(Debug, Clone, PartialEq)]
pub enum ExpertOutput {
    Scores(Vec<f64>),
    Texts(Vec<String>),
}

pub trait Expert: Send + Sync {
    fn id(&self) -> &str;
    fn kind(&self) -> ObjectiveKind;
    fn needs_reference(&self) -> bool;
    fn evaluate(
        &self,
        outputs: &ImageBatch,
        references: Option<&ImageBatch>,
    ) -> Result<ExpertOutput, ExpertError>;
}

/// Signed progress between two score feedbacks: positive iff `current` is better.
pub fn improvement(previous: &Feedback, current: &Feedback, spec: &ObjectiveSpec) -> Result<f64, ExpertError> {
    if previous.objective_name != current.objective_name {
        return Err(ExpertError::ObjectiveMismatch(
            previous.objective_name.clone(),
            current.objective_name.clone(),
        ));
    }
    let (Some(prev), Some(cur)) = (previous.score_aggregate(), current.score_aggregate()) else {
        return Err(ExpertError::UnsupportedKind);
    };
    match spec.direction {
        Some(Direction::HigherBetter) => Ok(cur - prev),
        Some(Direction::LowerBetter) => Ok(prev - cur),
        None => Err(ExpertError::UnsupportedKind),
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

fn per_image<F>(outputs: &ImageBatch, references: Option<&ImageBatch>, f: F) -> Vec<f64>
where
    F: Fn(&[f64], Option<&[f64]>) -> f64,
{
    (0..outputs.len())
        .map(|i| f(outputs.image(i), references.map(|r| r.image(i))))
        .collect()
}

fn require_reference<'a>(
    id: &str,
    outputs: &ImageBatch,
    references: Option<&'a ImageBatch>,
) -> Result<&'a ImageBatch, ExpertError> {
    let r = references.ok_or_else(|| ExpertError::MissingReference(id.to_string()))?;
    if r.shape() != outputs.shape() {
        return Err(ExpertError::Shape);
    }
    Ok(r)
}

/// PSNR in dB for signals on a [0, 1] scale, capped at [`PSNR_CAP_DB`].
pub fn psnr(output: &[f64], reference: &[f64]) -> f64 {
    let n = output.len().max(1) as f64;
    let mse = output
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
}

/// Variance of the interior 4-neighbour Laplacian.
pub fn sharpness(img: &[f64], h: usize, w: usize) -> f64 {
    variance(&laplacian_interior(img, h, w))
}

/// Negative per-pixel total variation.
pub fn smoothness(img: &[f64], h: usize, w: usize) -> f64 {
    -total_variation_sum(img, h, w) / (h * w).max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinScorer {
    Psnr,
    NegL1,
    Sharpness,
    Smoothness,
}

impl BuiltinScorer {
    fn id(self) -> &'static str {
        match self {
            BuiltinScorer::Psnr => "psnr",
            BuiltinScorer::NegL1 => "neg_l1",
            BuiltinScorer::Sharpness => "sharpness",
            BuiltinScorer::Smoothness => "smoothness",
        }
    }

    fn score_batch(self, outputs: &ImageBatch, references: Option<&ImageBatch>) -> Vec<f64> {
        let (h, w) = (outputs.height(), outputs.width());
        match self {
            BuiltinScorer::Psnr => per_image(outputs, references, |o, r| psnr(o, r.expect("checked"))),
            BuiltinScorer::NegL1 => per_image(outputs, references, |o, r| {
                let r = r.expect("checked");
                -o.iter().zip(r).map(|(a, b)| (a - b).abs()).sum::<f64>() / o.len().max(1) as f64
            }),
            BuiltinScorer::Sharpness => per_image(outputs, None, |o, _| sharpness(o, h, w)),
            BuiltinScorer::Smoothness => per_image(outputs, None, |o, _| smoothness(o, h, w)),
        }
    }
}

impl Expert for BuiltinScorer {
    fn id(&self) -> &str {
        BuiltinScorer::id(*self)
    }

    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::Score
    }

    fn needs_reference(&self) -> bool {
        matches!(self, BuiltinScorer::Psnr | BuiltinScorer::NegL1)
    }

    fn evaluate(
        &self,
        outputs: &ImageBatch,
        references: Option<&ImageBatch>,
    ) -> Result<ExpertOutput, ExpertError> {
        let refs = if self.needs_reference() {
            Some(require_reference(Expert::id(self), outputs, references)?)
        } else {
            None
        };
        Ok(ExpertOutput::Scores(self.score_batch(outputs, refs)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum QualityBand {
    Poor,
    Fair,
    Good,
    Excellent,
}

impl QualityBand {
    pub fn from_index(i: usize) -> Self {
        match i {
            0 => QualityBand::Poor,
            1 => QualityBand::Fair,
            2 => QualityBand::Good,
            _ => QualityBand::Excellent,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            QualityBand::Poor => "poor",
            QualityBand::Fair => "fair",
            QualityBand::Good => "good",
            QualityBand::Excellent => "excellent",
        }
    }

    fn remark(self) -> &'static str {
        match self {
            QualityBand::Poor => "heavy distortion remains and structures are hard to make out",
            QualityBand::Fair => "noticeable blur or noise remains over large areas",
            QualityBand::Good => "minor artifacts are visible on close inspection",
            QualityBand::Excellent => "the image looks clean and edges are crisp",
        }
    }
}

impl fmt::Display for QualityBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Quartile band of `score` within `[lo, hi]`; a score equal to a boundary
/// falls in the lower band.
pub fn band_for(score: f64, lo: f64, hi: f64) -> QualityBand {
    let step = (hi - lo) / 4.0;
    let above = (1..=3).filter(|&k| score > lo + k as f64 * step).count();
    QualityBand::from_index(above)
}

/// Template critic that bands a proxy score and phrases it as text.
#[derive(Clone)]
pub struct TextCritic {
    pub id: String,
    pub proxy: BuiltinScorer,
    pub range: (f64, f64),
    pub max_chars: usize,
}

impl fmt::Debug for TextCritic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TextCritic")
            .field("id", &self.id)
            .field("proxy", &self.proxy)
            .field("range", &self.range)
            .finish()
    }
}

impl Default for TextCritic {
    fn default() -> Self {
        Self {
            id: "text_critic".into(),
            proxy: BuiltinScorer::Psnr,
            range: (10.0, 40.0),
            max_chars: DEFAULT_TEXT_CAP,
        }
    }
}

impl TextCritic {
    pub fn phrase(&self, index: usize, proxy_score: f64) -> String {
        let band = band_for(proxy_score, self.range.0, self.range.1);
        let text = format!("Image {}: {} quality; {}.", index + 1, band, band.remark());
        truncate_chars(&text, self.max_chars)
    }
}

pub fn truncate_chars(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((idx, _)) => s[..idx].to_string(),
        None => s.to_string(),
    }
}

impl Expert for TextCritic {
    fn id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::Textual
    }

    fn needs_reference(&self) -> bool {
        Expert::needs_reference(&self.proxy)
    }

    fn evaluate(
        &self,
        outputs: &ImageBatch,
        references: Option<&ImageBatch>,
    ) -> Result<ExpertOutput, ExpertError> {
        let scores = match self.proxy.evaluate(outputs, references).map_err(|e| match e {
            ExpertError::MissingReference(_) => ExpertError::MissingReference(self.id.clone()),
            other => other,
        })? {
            ExpertOutput::Scores(s) => s,
            ExpertOutput::Texts(_) => unreachable!("builtin scorers return scores"),
        };
        Ok(ExpertOutput::Texts(
            scores.iter().enumerate().map(|(i, &s)| self.phrase(i, s)).collect(),
        ))
    }
}

pub const TEXT_JOIN: &str = " / ";

/// Experts by id.
#[derive(Clone)]
pub struct ExpertRegistry {
    experts: BTreeMap<String, Arc<dyn Expert>>,
}

impl fmt::Debug for ExpertRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.experts.keys()).finish()
    }
}

impl Default for ExpertRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        for s in [
            BuiltinScorer::Psnr,
            BuiltinScorer::NegL1,
            BuiltinScorer::Sharpness,
            BuiltinScorer::Smoothness,
        ] {
            r.register(Arc::new(s));
        }
        r.register(Arc::new(TextCritic::default()));
        r
    }
}

impl ExpertRegistry {
    pub fn empty() -> Self {
        Self {
            experts: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, expert: Arc<dyn Expert>) {
        self.experts.insert(expert.id().to_string(), expert);
    }

    pub fn get(&self, id: &str) -> Result<&Arc<dyn Expert>, ExpertError> {
        self.experts
            .get(id)
            .ok_or_else(|| ExpertError::UnknownExpert(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.experts.keys().map(String::as_str)
    }

    fn run(
        &self,
        expert_id: &str,
        requested: ObjectiveKind,
        outputs: &ImageBatch,
        references: Option<&ImageBatch>,
    ) -> Result<ExpertOutput, ExpertError> {
        let expert = self.get(expert_id)?;
        if expert.kind() != requested {
            return Err(ExpertError::WrongKind {
                expert: expert_id.to_string(),
                requested,
                actual: expert.kind(),
            });
        }
        if expert.needs_reference() && references.is_none() {
            return Err(ExpertError::MissingReference(expert_id.to_string()));
        }
        expert.evaluate(outputs, references)
    }

    /// Score feedback; the aggregate is the mean over the test images.
    pub fn score(
        &self,
        expert_id: &str,
        outputs: &ImageBatch,
        references: Option<&ImageBatch>,
    ) -> Result<FeedbackValues, ExpertError> {
        match self.run(expert_id, ObjectiveKind::Score, outputs, references)? {
            ExpertOutput::Scores(per_image) => {
                check_len(expert_id, per_image.len(), outputs.len())?;
                let aggregate = mean(&per_image);
                Ok(FeedbackValues::Score { per_image, aggregate })
            }
            ExpertOutput::Texts(_) => Err(ExpertError::WrongKind {
                expert: expert_id.into(),
                requested: ObjectiveKind::Score,
                actual: ObjectiveKind::Textual,
            }),
        }
    }

    /// Textual feedback; the aggregate joins the per-image texts.
    pub fn textual_critique(
        &self,
        expert_id: &str,
        outputs: &ImageBatch,
        references: Option<&ImageBatch>,
    ) -> Result<FeedbackValues, ExpertError> {
        match self.run(expert_id, ObjectiveKind::Textual, outputs, references)? {
            ExpertOutput::Texts(per_image) => {
                check_len(expert_id, per_image.len(), outputs.len())?;
                let aggregate = per_image.join(TEXT_JOIN);
                Ok(FeedbackValues::Textual { per_image, aggregate })
            }
            ExpertOutput::Scores(_) => Err(ExpertError::WrongKind {
                expert: expert_id.into(),
                requested: ObjectiveKind::Textual,
                actual: ObjectiveKind::Score,
            }),
        }
    }

    /// Evaluates one objective, passing references only when its expert needs them.
    pub fn feedback(
        &self,
        objective: &ObjectiveSpec,
        outputs: &ImageBatch,
        references: Option<&ImageBatch>,
        stage_index: u64,
    ) -> Result<Feedback, ExpertError> {
        let values = match objective.kind {
            ObjectiveKind::Score => self.score(&objective.expert_id, outputs, references)?,
            ObjectiveKind::Textual => self.textual_critique(&objective.expert_id, outputs, references)?,
        };
        Ok(Feedback {
            objective_name: objective.name.clone(),
            stage_index,
            values,
        })
    }
}

fn check_len(expert: &str, got: usize, expected: usize) -> Result<(), ExpertError> {
    if got != expected {
        return Err(ExpertError::Remote {
            expert: expert.into(),
            message: format!("returned {got} results for {expected} images"),
        });
    }
    Ok(())
}

/// JSON image payload for the remote-expert wire format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

fn to_wire(batch: &ImageBatch) -> Vec<WireImage> {
    batch
        .images()
        .map(|img| WireImage {
            height: batch.height(),
            width: batch.width(),
            pixels: img.to_vec(),
        })
        .collect()
}

/// Request body sent to a remote expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteExpertRequest {
    pub expert_id: String,
    pub kind: ObjectiveKind,
    pub images: Vec<WireImage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub references: Option<Vec<WireImage>>,
}

/// Response body from a remote expert: `scores` for score experts, `texts` for textual ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteExpertResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texts: Option<Vec<String>>,
}

pub type ExpertTransport = dyn Fn(&str) -> Result<String, String> + Send + Sync;

/// Adapter that forwards evaluation to an out-of-process expert over JSON.
pub struct RemoteExpert {
    pub id: String,
    pub kind: ObjectiveKind,
    pub needs_reference: bool,
    transport: Box<ExpertTransport>,
}

impl RemoteExpert {
    pub fn new(
        id: impl Into<String>,
        kind: ObjectiveKind,
        needs_reference: bool,
        transport: Box<ExpertTransport>,
    ) -> Self {
        Self {
            id: id.into(),
            kind,
            needs_reference,
            transport,
        }
    }

    fn remote_err(&self, message: impl Into<String>) -> ExpertError {
        ExpertError::Remote {
            expert: self.id.clone(),
            message: message.into(),
        }
    }
}

impl Expert for RemoteExpert {
    fn id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    fn needs_reference(&self) -> bool {
        self.needs_reference
    }

    fn evaluate(
        &self,
        outputs: &ImageBatch,
        references: Option<&ImageBatch>,
    ) -> Result<ExpertOutput, ExpertError> {
        let request = RemoteExpertRequest {
            expert_id: self.id.clone(),
            kind: self.kind,
            images: to_wire(outputs),
            references: if self.needs_reference {
                Some(to_wire(require_reference(&self.id, outputs, references)?))
            } else {
                None
            },
        };
        let body = serde_json::to_string(&request).map_err(|e| self.remote_err(e.to_string()))?;
        let reply = (self.transport)(&body).map_err(|e| self.remote_err(e))?;
        let response: RemoteExpertResponse =
            serde_json::from_str(&reply).map_err(|e| self.remote_err(format!("malformed response: {e}")))?;
        let out = match (self.kind, response.scores, response.texts) {
            (ObjectiveKind::Score, Some(s), _) => ExpertOutput::Scores(s),
            (ObjectiveKind::Textual, _, Some(t)) => ExpertOutput::Texts(t),
            _ => return Err(self.remote_err("response lacks the field for this expert kind")),
        };
        let n = match &out {
            ExpertOutput::Scores(s) => s.len(),
            ExpertOutput::Texts(t) => t.len(),
        };
        if n != outputs.len() {
            return Err(self.remote_err(format!("returned {n} results for {} images", outputs.len())));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(b: usize, h: usize, w: usize, f: impl Fn(usize) -> f64) -> ImageBatch {
        ImageBatch::new(b, h, w, (0..b * h * w).map(f).collect()).unwrap()
    }

    #[test]
    fn psnr_caps_on_identical_images() {
        let r = ExpertRegistry::default();
        let x = img(2, 4, 4, |i| (i % 5) as f64 / 5.0);
        let fb = r.score("psnr", &x, Some(&x)).unwrap();
        assert_eq!(fb, FeedbackValues::Score { per_image: vec![100.0, 100.0], aggregate: 100.0 });
    }

    #[test]
    fn psnr_closed_form() {
        // constant difference 0.1 → MSE 0.01 → 20 dB
        let x = img(1, 3, 3, |i| i as f64 / 10.0);
        let y = x.map(|v| v + 0.1);
        assert!((psnr(y.data(), x.data()) - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_residual_invariance() {
        let x = img(1, 4, 4, |i| ((i * 3) % 7) as f64 / 7.0);
        let y = img(1, 4, 4, |i| ((i * 5) % 7) as f64 / 7.0);
        let a = psnr(y.data(), x.data());
        let b = psnr(y.map(|v| v + 0.37).data(), x.map(|v| v + 0.37).data());
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn sharpness_of_flat_image_is_zero() {
        let r = ExpertRegistry::default();
        let x = ImageBatch::filled(2, 6, 6, 0.4);
        match r.score("sharpness", &x, None).unwrap() {
            FeedbackValues::Score { aggregate, .. } => assert!(aggregate.abs() < 1e-15),
            _ => unreachable!(),
        }
    }

    #[test]
    fn missing_reference_is_config_error() {
        let r = ExpertRegistry::default();
        let x = ImageBatch::filled(1, 3, 3, 0.4);
        assert!(matches!(r.score("psnr", &x, None), Err(ExpertError::MissingReference(_))));
        assert!(matches!(
            r.textual_critique("text_critic", &x, None),
            Err(ExpertError::MissingReference(_))
        ));
        assert!(matches!(r.score("niqe", &x, None), Err(ExpertError::UnknownExpert(_))));
        assert!(matches!(r.score("text_critic", &x, Some(&x)), Err(ExpertError::WrongKind { .. })));
    }

    #[test]
    fn aggregate_is_mean_of_per_image() {
        let r = ExpertRegistry::default();
        let x = img(5, 5, 5, |i| ((i * 31) % 17) as f64 / 17.0);
        if let FeedbackValues::Score { per_image, aggregate } = r.score("sharpness", &x, None).unwrap() {
            assert!((aggregate - per_image.iter().sum::<f64>() / 5.0).abs() < 1e-12);
        } else {
            unreachable!()
        }
    }

    #[test]
    fn perfect_restoration_reads_excellent() {
        let r = ExpertRegistry::default();
        let x = img(2, 4, 4, |i| (i % 3) as f64 / 3.0);
        match r.textual_critique("text_critic", &x, Some(&x)).unwrap() {
            FeedbackValues::Textual { per_image, aggregate } => {
                assert!(per_image.iter().all(|t| t.contains("excellent")));
                assert!(aggregate.contains(TEXT_JOIN));
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn band_boundaries_go_to_lower_band() {
        // range [10, 40] → boundaries 17.5, 25, 32.5
        assert_eq!(band_for(17.5, 10.0, 40.0), QualityBand::Poor);
        assert_eq!(band_for(17.5 + 1e-9, 10.0, 40.0), QualityBand::Fair);
        assert_eq!(band_for(25.0, 10.0, 40.0), QualityBand::Fair);
        assert_eq!(band_for(32.5, 10.0, 40.0), QualityBand::Good);
        assert_eq!(band_for(-5.0, 10.0, 40.0), QualityBand::Poor);
        assert_eq!(band_for(100.0, 10.0, 40.0), QualityBand::Excellent);
    }

    #[test]
    fn band_is_monotone_across_boundaries() {
        let mut prev = QualityBand::Poor;
        let mut s = 0.0;
        while s <= 50.0 {
            let b = band_for(s, 10.0, 40.0);
            assert!(b >= prev, "band dropped at {s}");
            prev = b;
            s += 0.125;
        }
        assert_eq!(prev, QualityBand::Excellent);
    }

    #[test]
    fn critique_text_respects_cap() {
        let critic = TextCritic {
            max_chars: 12,
            ..TextCritic::default()
        };
        assert_eq!(critic.phrase(0, 50.0).chars().count(), 12);
        assert!(TextCritic::default().phrase(99, 0.0).chars().count() <= DEFAULT_TEXT_CAP);
    }

    fn fb(name: &str, v: f64) -> Feedback {
        Feedback {
            objective_name: name.into(),
            stage_index: 0,
            values: FeedbackValues::Score { per_image: vec![v], aggregate: v },
        }
    }

    #[test]
    fn improvement_respects_direction() {
        let lower = ObjectiveSpec::score("niqe", "x", Direction::LowerBetter, false);
        let higher = ObjectiveSpec::score("q", "x", Direction::HigherBetter, false);
        assert_eq!(improvement(&fb("niqe", 5.0), &fb("niqe", 4.0), &lower).unwrap(), 1.0);
        assert!((improvement(&fb("q", 0.3), &fb("q", 0.5), &higher).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(improvement(&fb("q", 0.3), &fb("q", 0.3), &higher).unwrap(), 0.0);
        let text = Feedback {
            objective_name: "t".into(),
            stage_index: 0,
            values: FeedbackValues::Textual { per_image: vec![], aggregate: String::new() },
        };
        assert_eq!(
            improvement(&text, &text, &ObjectiveSpec::textual("t", "text_critic", true)),
            Err(ExpertError::UnsupportedKind)
        );
    }

    #[test]
    fn objective_direction_rules() {
        assert!(ObjectiveSpec::score("a", "psnr", Direction::HigherBetter, true).validate().is_ok());
        let mut bad = ObjectiveSpec::textual("t", "text_critic", true);
        bad.direction = Some(Direction::LowerBetter);
        assert!(bad.validate().is_err());
        let mut bad = ObjectiveSpec::score("a", "psnr", Direction::HigherBetter, true);
        bad.direction = None;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn feedback_json_shape() {
        let f = fb("psnr", 21.5);
        let j = serde_json::to_value(&f).unwrap();
        assert_eq!(j["kind"], "score");
        assert_eq!(j["aggregate"], 21.5);
        let back: Feedback = serde_json::from_value(j).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn remote_adapter_speaks_json() {
        let remote = RemoteExpert::new(
            "remote_iqa",
            ObjectiveKind::Score,
            false,
            Box::new(|body: &str| {
                let req: RemoteExpertRequest = serde_json::from_str(body).map_err(|e| e.to_string())?;
                let scores: Vec<f64> = req.images.iter().map(|i| i.pixels.iter().sum()).collect();
                Ok(serde_json::to_string(&RemoteExpertResponse { scores: Some(scores), texts: None }).unwrap())
            }),
        );
        let mut reg = ExpertRegistry::default();
        reg.register(Arc::new(remote));
        let x = img(2, 2, 2, |i| i as f64);
        match reg.score("remote_iqa", &x, None).unwrap() {
            FeedbackValues::Score { per_image, aggregate } => {
                assert_eq!(per_image, vec![6.0, 22.0]);
                assert_eq!(aggregate, 14.0);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn remote_adapter_rejects_bad_payloads() {
        let remote = RemoteExpert::new(
            "broken",
            ObjectiveKind::Score,
            false,
            Box::new(|_: &str| Ok(r#"{"scores":[1.0]}"#.to_string())),
        );
        let x = img(2, 2, 2, |i| i as f64);
        assert!(matches!(remote.evaluate(&x, None), Err(ExpertError::Remote { .. })));
        let garbled = RemoteExpert::new("g", ObjectiveKind::Textual, false, Box::new(|_: &str| Ok("{".into())));
        assert!(garbled.evaluate(&x, None).is_err());
    }
}
