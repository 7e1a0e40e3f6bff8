//! Deterministic scripted agent that hill-climbs one score objective.
//!
//! It keeps no state between calls: every reply is recomputed from the
//! history lines in the user message, so the same prompt always gets the same
//! answer. Starting from stage 0, the best stage seen so far is tracked; a
//! stage that improves on it becomes the new best and the move that produced
//! it is repeated, otherwise the next move in the cycle
//! `(axis 0 up, axis 0 down, axis 1 up, ...)` is tried from the best weights.

use super::{format_reply, BackendError, ChatBackend, ChatMessage, ErrorCategory, Role};
use crate::experts::Direction;
use crate::loss::WeightBounds;

const MIN_UP_STEP: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct HillClimbBackend {
    pub term_ids: Vec<String>,
    pub objective: String,
    pub direction: Direction,
    pub bounds: WeightBounds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryPoint {
    pub stage: u64,
    pub weights: Vec<f64>,
    pub score: f64,
}

/// Reads `Stage i | weights: a=.., b=.. | feedback: name=..; ...` lines.
pub fn parse_history(text: &str, objective: &str) -> Vec<HistoryPoint> {
    let mut points = Vec::new();
    for line in text.lines() {
        let Some(rest) = line.strip_prefix("Stage ") else {
            continue;
        };
        let mut parts = rest.splitn(3, " | ");
        let (Some(stage), Some(weights), Some(feedback)) = (parts.next(), parts.next(), parts.next()) else {
            continue;
        };
        let Ok(stage) = stage.trim().parse::<u64>() else {
            continue;
        };
        let Some(weights) = weights.strip_prefix("weights: ") else {
            continue;
        };
        let weights: Option<Vec<f64>> = weights
            .split(", ")
            .map(|kv| kv.split_once('=').and_then(|(_, v)| v.parse().ok()))
            .collect();
        let score = feedback
            .strip_prefix("feedback: ")
            .unwrap_or(feedback)
            .split("; ")
            .find_map(|kv| {
                let (k, v) = kv.split_once('=')?;
                (k == objective).then(|| v.parse::<f64>().ok()).flatten()
            });
        if let (Some(weights), Some(score)) = (weights, score) {
            points.push(HistoryPoint { stage, weights, score });
        }
    }
    points
}

impl HillClimbBackend {
    fn better(&self, a: f64, b: f64) -> bool {
        match self.direction {
            Direction::HigherBetter => a > b,
            Direction::LowerBetter => a < b,
        }
    }

    fn apply(&self, weights: &[f64], mv: usize) -> Vec<f64> {
        let mut w = weights.to_vec();
        let axis = mv / 2;
        let v = w[axis];
        w[axis] = if mv.is_multiple_of(2) {
            v + (0.5 * v).max(MIN_UP_STEP)
        } else {
            0.5 * v
        };
        w[axis] = self.bounds.clip((w[axis] * 1e4).round() / 1e4);
        w
    }

    /// Next weights for the given history, or `None` without usable history.
    pub fn propose(&self, history: &[HistoryPoint]) -> Option<Vec<f64>> {
        let m = self.term_ids.len();
        let first = history.first()?;
        if first.weights.len() != m || m == 0 {
            return None;
        }
        let moves = 2 * m;
        let mut best = first;
        let mut mv = 0;
        for point in &history[1..] {
            if self.better(point.score, best.score) {
                best = point;
            } else {
                mv = (mv + 1) % moves;
            }
        }
        // skip moves that cannot change anything at a bound
        for offset in 0..moves {
            let candidate = self.apply(&best.weights, (mv + offset) % moves);
            if candidate != best.weights {
                return Some(candidate);
            }
        }
        Some(best.weights.clone())
    }
}

impl ChatBackend for HillClimbBackend {
    fn chat(&mut self, messages: &[ChatMessage], _temperature: f64) -> Result<String, BackendError> {
        let user = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .ok_or_else(|| BackendError::new(ErrorCategory::InvalidRequest, "no user message"))?;
        let history = parse_history(&user.content, &self.objective);
        match self.propose(&history) {
            Some(w) => Ok(format_reply(
                &format!(
                    "Comparing {} recorded stages on {}, I adjust one loss weight at a time and keep changes that helped.",
                    history.len(),
                    self.objective
                ),
                &self.term_ids,
                &w,
            )),
            None => Ok("I need at least one completed stage before suggesting weights.".into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn backend() -> HillClimbBackend {
        HillClimbBackend {
            term_ids: vec!["l1".into(), "edge".into()],
            objective: "sharpness".into(),
            direction: Direction::HigherBetter,
            bounds: WeightBounds::default(),
        }
    }

    fn p(stage: u64, w: &[f64], score: f64) -> HistoryPoint {
        HistoryPoint {
            stage,
            weights: w.to_vec(),
            score,
        }
    }

    #[test]
    fn reads_rendered_history_lines() {
        let text = "Optimization trajectory so far:\n2 of 2 completed stages shown.\n\
                    Stage 0 | weights: l1=1.0000, edge=0.1000 | feedback: psnr=20.0000; sharpness=0.0125\n\
                    Stage 1 | weights: l1=1.5000, edge=0.1000 | feedback: critic: \"Image 1: good\"; sharpness=0.0130";
        let h = parse_history(text, "sharpness");
        assert_eq!(h, vec![p(0, &[1.0, 0.1], 0.0125), p(1, &[1.5, 0.1], 0.013)]);
    }

    #[test]
    fn repeats_successful_moves_and_cycles_on_failure() {
        let b = backend();
        assert_eq!(b.propose(&[p(0, &[1.0, 0.1], 1.0)]).unwrap(), vec![1.5, 0.1]);
        // improvement: repeat axis-0 up from the new best
        let h = [p(0, &[1.0, 0.1], 1.0), p(1, &[1.5, 0.1], 2.0)];
        assert_eq!(b.propose(&h).unwrap(), vec![2.25, 0.1]);
        // no improvement: axis-0 down from the best (stage 0)
        let h = [p(0, &[1.0, 0.1], 1.0), p(1, &[1.5, 0.1], 0.5)];
        assert_eq!(b.propose(&h).unwrap(), vec![0.5, 0.1]);
        let h = [p(0, &[1.0, 0.1], 1.0), p(1, &[1.5, 0.1], 0.5), p(2, &[0.5, 0.1], 0.9)];
        assert_eq!(b.propose(&h).unwrap(), vec![1.0, 0.15]);
        assert!(b.propose(&[]).is_none());
    }

    #[test]
    fn reply_is_parseable_and_deterministic() {
        let mut b = backend();
        let msgs = vec![
            ChatMessage::new(Role::System, "sys"),
            ChatMessage::new(
                Role::User,
                "Stage 0 | weights: l1=1.0000, edge=0.1000 | feedback: sharpness=0.0100\n\nl1:edge=0.7:0.3",
            ),
        ];
        let a = b.chat(&msgs, 0.2).unwrap();
        assert_eq!(a, b.chat(&msgs, 0.9).unwrap());
        let parsed = super::super::parse_weights(&a, &b.term_ids, &b.bounds).unwrap();
        assert_eq!(parsed.weights.values(), &[1.5, 0.1]);
    }
}
