//! Three-part prompt construction (system, historical, customized needs) and
//! rendering to chat messages.
//!
//! Templates use `{name}` placeholders. The recognised set is `task`,
//! `losses`, `objectives`, `history`, `rules`, `bounds` and `format_example`;
//! any other brace group is left untouched. All numbers are printed with four
//! fixed decimals except the format example, which uses the shortest
//! round-tripping decimal so the agent sees e.g. `l1:edge:tv=0.7:0.3:0.05`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{ChatMessage, Role};
use crate::experts::{FeedbackValues, ObjectiveKind, ObjectiveSpec};
use crate::loss::{LossTerm, WeightBounds};
use crate::orchestrator::TrajectoryEntry;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("trajectory is not contiguous: expected stage {expected}, found {found}")]
    Integrity { expected: u64, found: u64 },
    #[error("template `{name}`: {message}")]
    Template { name: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const PLACEHOLDERS: [&str; 7] = [
    "task",
    "losses",
    "objectives",
    "history",
    "rules",
    "bounds",
    "format_example",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum HistoryMode {
    #[default]
    Full,
    LastK { k: usize },
}

impl HistoryMode {
    pub fn validate(&self) -> Result<(), PromptError> {
        match self {
            HistoryMode::LastK { k: 0 } => Err(PromptError::Config("last_k needs k >= 1".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub historical: String,
    pub needs: String,
}

pub const DEFAULT_SYSTEM_TEMPLATE: &str = "\
You are a loss agent. You tune the weights of a compositional loss that trains an image processing model, one training stage at a time.
Task: {task}
Loss repository, in order:
{losses}
After every stage, external evaluation experts judge the model's outputs on a fixed set of test images. You receive the history of loss weights and feedback, and you reply with the loss weights for the next stage.
Optimization objectives:
{objectives}
Your ultimate goal is to help the model achieve better feedback on every objective above.";

pub const DEFAULT_HISTORY_TEMPLATE: &str = "Optimization trajectory so far:\n{history}";

pub const DEFAULT_NEEDS_TEMPLATE: &str = "\
Rules:
{rules}
Every weight must stay within {bounds}.
End your reply with exactly one line in the format below, listing every loss id in repository order followed by its weight:
{format_example}";

const EXAMPLE_VALUES: [f64; 3] = [0.7, 0.3, 0.05];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub system: String,
    pub historical: String,
    pub needs: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            system: DEFAULT_SYSTEM_TEMPLATE.into(),
            historical: DEFAULT_HISTORY_TEMPLATE.into(),
            needs: DEFAULT_NEEDS_TEMPLATE.into(),
        }
    }
}

impl PromptTemplates {
    /// Loads overrides from plain-text files; `None` keeps the default for that part.
    pub fn load(
        system: Option<&Path>,
        historical: Option<&Path>,
        needs: Option<&Path>,
    ) -> Result<Self, PromptError> {
        let mut t = Self::default();
        if let Some(p) = system {
            t.system = std::fs::read_to_string(p)?;
        }
        if let Some(p) = historical {
            t.historical = std::fs::read_to_string(p)?;
        }
        if let Some(p) = needs {
            t.needs = std::fs::read_to_string(p)?;
        }
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        require_once("system", &self.system, "objectives")?;
        require_once("historical", &self.historical, "history")?;
        require_once("needs", &self.needs, "format_example")
    }
}

fn require_once(name: &str, template: &str, placeholder: &str) -> Result<(), PromptError> {
    let n = template.matches(&format!("{{{placeholder}}}")).count();
    if n != 1 {
        return Err(PromptError::Template {
            name: name.into(),
            message: format!("must contain {{{placeholder}}} exactly once (found {n})"),
        });
    }
    Ok(())
}

/// Substitutes recognised `{name}` placeholders in a single left-to-right pass;
/// substituted text is never rescanned.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let replaced = after.find('}').and_then(|close| {
            let key = &after[..close];
            values
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| (v, close))
        });
        match replaced {
            Some((v, close)) => {
                out.push_str(v);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn fixed4(v: f64) -> String {
    format!("{v:.4}")
}

/// The sentence telling the agent which way a score objective improves.
pub fn direction_sentence(objective: &ObjectiveSpec) -> Option<String> {
    objective.direction.map(|d| {
        format!(
            "For {}, {} scores indicate better image quality.",
            objective.name,
            d.word()
        )
    })
}

/// `id1:id2:...:idM=v1:v2:...:vM` with shortest round-trip decimals.
pub fn format_weight_pattern<S: AsRef<str>>(ids: &[S], values: &[f64]) -> String {
    let ids: Vec<&str> = ids.iter().map(AsRef::as_ref).collect();
    let vals: Vec<String> = values.iter().map(|v| format!("{v}")).collect();
    format!("{}={}", ids.join(":"), vals.join(":"))
}

/// Example weights for the format line, cycling 0.7, 0.3, 0.05 and clipped to bounds.
pub fn example_weights(m: usize, bounds: &WeightBounds) -> Vec<f64> {
    (0..m).map(|i| bounds.clip(EXAMPLE_VALUES[i % EXAMPLE_VALUES.len()])).collect()
}

#[derive(Debug, Clone, Default)]
pub struct PromptEngine {
    pub templates: PromptTemplates,
}

impl PromptEngine {
    pub fn new(templates: PromptTemplates) -> Result<Self, PromptError> {
        templates.validate()?;
        Ok(Self { templates })
    }

    pub fn build_system_prompt(
        &self,
        task_description: &str,
        objectives: &[ObjectiveSpec],
        loss_terms: &[LossTerm],
    ) -> Result<String, PromptError> {
        if objectives.is_empty() {
            return Err(PromptError::Config("at least one objective is required".into()));
        }
        if loss_terms.is_empty() {
            return Err(PromptError::Config("at least one loss term is required".into()));
        }
        let losses = loss_terms
            .iter()
            .map(|t| format!("- {}: {}", t.id, t.description))
            .collect::<Vec<_>>()
            .join("\n");
        let objectives_text = objectives
            .iter()
            .map(|o| match (o.kind, direction_sentence(o)) {
                (ObjectiveKind::Score, Some(sentence)) => {
                    format!("- {} (score from expert `{}`). {}", o.name, o.expert_id, sentence)
                }
                _ => format!(
                    "- {} (textual assessment from expert `{}`); read the critique and steer toward the quality it praises.",
                    o.name, o.expert_id
                ),
            })
            .collect::<Vec<_>>()
            .join("\n");
        Ok(fill(
            &self.templates.system,
            &[
                ("task", task_description),
                ("losses", &losses),
                ("objectives", &objectives_text),
            ],
        ))
    }

    /// `term_ids` label the weight vector entries.
    pub fn build_historical_prompt<S: AsRef<str>>(
        &self,
        trajectory: &[TrajectoryEntry],
        term_ids: &[S],
        mode: HistoryMode,
    ) -> Result<String, PromptError> {
        mode.validate()?;
        for pair in trajectory.windows(2) {
            if pair[1].stage_index != pair[0].stage_index + 1 {
                return Err(PromptError::Integrity {
                    expected: pair[0].stage_index + 1,
                    found: pair[1].stage_index,
                });
            }
        }
        let shown = match mode {
            HistoryMode::Full => trajectory,
            HistoryMode::LastK { k } => &trajectory[trajectory.len().saturating_sub(k)..],
        };
        let history = if shown.is_empty() {
            "No optimization history yet (stage 0).".to_string()
        } else {
            let mut s = format!(
                "{} of {} completed stages shown.",
                shown.len(),
                trajectory.len()
            );
            for entry in shown {
                s.push('\n');
                s.push_str(&render_entry(entry, term_ids));
            }
            s
        };
        Ok(fill(&self.templates.historical, &[("history", &history)]))
    }

    pub fn build_needs_prompt(
        &self,
        rules: &[String],
        loss_terms: &[LossTerm],
        bounds: &WeightBounds,
    ) -> Result<String, PromptError> {
        if loss_terms.is_empty() {
            return Err(PromptError::Config("at least one loss term is required".into()));
        }
        let rules_text = if rules.is_empty() {
            "- (no additional rules)".to_string()
        } else {
            rules.iter().map(|r| format!("- {r}")).collect::<Vec<_>>().join("\n")
        };
        let bounds_text = format!("[{}, {}]", fixed4(bounds.lower), fixed4(bounds.upper));
        let ids: Vec<&str> = loss_terms.iter().map(|t| t.id.as_str()).collect();
        let example = format_weight_pattern(&ids, &example_weights(ids.len(), bounds));
        Ok(fill(
            &self.templates.needs,
            &[
                ("rules", &rules_text),
                ("bounds", &bounds_text),
                ("format_example", &example),
            ],
        ))
    }
}

/// One history line: `Stage i | weights: id=v, ... | feedback: name=v; name: "text"`.
pub fn render_entry<S: AsRef<str>>(entry: &TrajectoryEntry, term_ids: &[S]) -> String {
    let mut line = format!("Stage {} | weights: ", entry.stage_index);
    for (i, v) in entry.weights_used.values().iter().enumerate() {
        if i > 0 {
            line.push_str(", ");
        }
        let id = term_ids.get(i).map(AsRef::as_ref).unwrap_or("w");
        let _ = write!(line, "{id}={}", fixed4(*v));
    }
    line.push_str(" | feedback: ");
    for (i, fb) in entry.feedback.iter().enumerate() {
        if i > 0 {
            line.push_str("; ");
        }
        match &fb.values {
            FeedbackValues::Score { aggregate, .. } => {
                let _ = write!(line, "{}={}", fb.objective_name, fixed4(*aggregate));
            }
            FeedbackValues::Textual { aggregate, .. } => {
                let _ = write!(line, "{}: \"{}\"", fb.objective_name, aggregate);
            }
        }
    }
    line
}

/// System message, then one user message carrying history and needs separated by a blank line.
pub fn render(bundle: &PromptBundle) -> Vec<ChatMessage> {
    vec![
        ChatMessage::new(Role::System, bundle.system.clone()),
        ChatMessage::new(Role::User, format!("{}\n\n{}", bundle.historical, bundle.needs)),
    ]
}
