use super::{ProcessState, StageReport};
use crate::loss::{LossError, LossVector, LossWeights};

/// Analytic process whose score is a concave function of the last weights used:
/// `1 − ‖w_last − w*‖²`. Training a stage only records the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseSurface {
    pub optimum: Vec<f64>,
}

impl ResponseSurface {
    pub fn new(optimum: Vec<f64>) -> Self {
        Self { optimum }
    }

    pub fn score(&self, weights: &[f64]) -> Result<f64, LossError> {
        if weights.len() != self.optimum.len() {
            return Err(LossError::Dimension {
                expected: self.optimum.len(),
                found: weights.len(),
            });
        }
        let dist2: f64 = weights
            .iter()
            .zip(&self.optimum)
            .map(|(w, o)| (w - o) * (w - o))
            .sum();
        Ok(1.0 - dist2)
    }

    pub fn surface_feedback(&self, history: &[LossWeights]) -> Result<f64, LossError> {
        let last = history.last().ok_or(LossError::Dimension {
            expected: 1,
            found: 0,
        })?;
        self.score(last.values())
    }

    /// The state's parameters become the weights used for the stage.
    pub fn train_stage(
        &self,
        state: &ProcessState,
        weights: &LossWeights,
        iterations: u64,
    ) -> Result<(ProcessState, StageReport), LossError> {
        let score = self.score(weights.values())?;
        let mut next = state.clone();
        next.parameters = weights.values().to_vec();
        next.stage_index += 1;
        next.iteration_count += iterations;
        let report = StageReport {
            mean_composed_loss: 1.0 - score,
            mean_per_term_loss: LossVector::new(vec![0.0; weights.len()]),
            steps_taken: iterations,
        };
        Ok((next, report))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::WeightBounds;

    fn w(v: &[f64]) -> LossWeights {
        LossWeights::new(v.to_vec(), &WeightBounds::default()).unwrap()
    }

    #[test]
    fn optimum_scores_one() {
        let s = ResponseSurface::new(vec![0.6, 0.3, 0.1]);
        assert_eq!(s.surface_feedback(&[w(&[0.6, 0.3, 0.1])]).unwrap(), 1.0);
    }

    #[test]
    fn offset_along_one_axis() {
        // 1 − 0.1² = 0.99
        let s = ResponseSurface::new(vec![0.6, 0.3, 0.1]);
        let got = s.surface_feedback(&[w(&[0.0, 0.0, 0.0]), w(&[0.7, 0.3, 0.1])]).unwrap();
        assert!((got - 0.99).abs() < 1e-12);
    }

    #[test]
    fn errors_on_dimension_and_empty() {
        let s = ResponseSurface::new(vec![0.5, 0.5]);
        assert!(s.surface_feedback(&[w(&[0.5])]).is_err());
        assert!(s.surface_feedback(&[]).is_err());
    }
}
