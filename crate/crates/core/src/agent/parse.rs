//! Extraction of `id1:id2:...:idM=v1:v2:...:vM` weight lines from free text.

use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::loss::{LossWeights, WeightBounds};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("no weight pattern found in reply")]
    NoPattern,
    #[error("loss ids out of order: expected {expected}, found {found}")]
    IdOrder { expected: String, found: String },
    #[error("expected {expected} values, found {found}")]
    ValueCount { expected: usize, found: usize },
    #[error("value `{0}` is not a decimal number")]
    NonNumeric(String),
    #[error("term id list is empty")]
    NoTerms,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedWeights {
    pub weights: LossWeights,
    /// At least one value was moved into bounds.
    pub clipped: bool,
    /// The matched pattern text.
    pub matched: String,
}

fn candidate_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        // tokens exclude whitespace and the two delimiters; delimiters may be
        // padded by spaces or tabs but never span lines
        Regex::new(r"[^\s:=]+(?:[ \t]*:[ \t]*[^\s:=]+)*[ \t]*=[ \t]*[^\s:=]+(?:[ \t]*:[ \t]*[^\s:=]+)*")
            .expect("valid regex")
    })
}

fn decimal_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?$").expect("valid regex"))
}

fn split_tokens(s: &str) -> Vec<&str> {
    s.split(':').map(str::trim).collect()
}

/// Markup and sentence punctuation the model may wrap around the line.
fn strip_value(v: &str) -> &str {
    v.trim_end_matches(['.', ',', ';', ')', ']', '*', '`', '"', '\'', '_'])
}

fn first_id_matches(token: &str, id: &str) -> bool {
    let t = token.to_lowercase();
    let id = id.to_lowercase();
    if t == id {
        return true;
    }
    // allow leading markup such as `**` or a backtick, but not a longer word
    t.strip_suffix(&id)
        .is_some_and(|prefix| prefix.chars().all(|c| !c.is_alphanumeric()))
}

enum Classified {
    Valid(Vec<f64>),
    Invalid(ParseError),
    Irrelevant,
}

fn classify<S: AsRef<str>>(ids: &[&str], raw_values: &[&str], term_ids: &[S]) -> Classified {
    let m = term_ids.len();
    if ids.len() >= m {
        let tail = &ids[ids.len() - m..];
        let matches = tail.iter().zip(term_ids).enumerate().all(|(i, (tok, id))| {
            if i == 0 {
                first_id_matches(tok, id.as_ref())
            } else {
                tok.eq_ignore_ascii_case(id.as_ref())
            }
        });
        if matches {
            if raw_values.len() != m {
                return Classified::Invalid(ParseError::ValueCount {
                    expected: m,
                    found: raw_values.len(),
                });
            }
            let mut values = Vec::with_capacity(m);
            for raw in raw_values {
                let v = strip_value(raw);
                if !decimal_regex().is_match(v) {
                    return Classified::Invalid(ParseError::NonNumeric(raw.to_string()));
                }
                values.push(v.parse::<f64>().expect("decimal literal parses"));
            }
            return Classified::Valid(values);
        }
    }
    // same ids in another order
    let lower: Vec<String> = ids.iter().map(|s| s.trim_start_matches(|c: char| !c.is_alphanumeric()).to_lowercase()).collect();
    let mut want: Vec<String> = term_ids.iter().map(|s| s.as_ref().to_lowercase()).collect();
    let mut have: Vec<String> = lower.iter().filter(|t| want.contains(t)).cloned().collect();
    if have.len() == m {
        want.sort();
        have.sort();
        if want == have {
            return Classified::Invalid(ParseError::IdOrder {
                expected: term_ids.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(":"),
                found: ids.join(":"),
            });
        }
    }
    Classified::Irrelevant
}

/// Parses the last weight pattern naming `term_ids` in order and clips the
/// values into `bounds`.
pub fn parse_weights<S: AsRef<str>>(
    reply: &str,
    term_ids: &[S],
    bounds: &WeightBounds,
) -> Result<ParsedWeights, ParseError> {
    if term_ids.is_empty() {
        return Err(ParseError::NoTerms);
    }
    let mut last_error: Option<ParseError> = None;
    let mut last_valid: Option<(Vec<f64>, String)> = None;
    for m in candidate_regex().find_iter(reply) {
        let text = m.as_str();
        let (lhs, rhs) = text.split_once('=').expect("regex guarantees `=`");
        let ids = split_tokens(lhs);
        let values = split_tokens(rhs);
        match classify(&ids, &values, term_ids) {
            Classified::Valid(v) => {
                last_valid = Some((v, text.trim().to_string()));
                last_error = None;
            }
            Classified::Invalid(e) => {
                if last_valid.is_none() {
                    last_error = Some(e);
                }
            }
            Classified::Irrelevant => {}
        }
    }
    match (last_valid, last_error) {
        (Some((values, matched)), _) => {
            let clipped_values: Vec<f64> = values.iter().map(|v| bounds.clip(*v)).collect();
            let clipped = clipped_values.iter().zip(&values).any(|(a, b)| a != b);
            Ok(ParsedWeights {
                weights: LossWeights::from_vec_unchecked(clipped_values),
                clipped,
                matched,
            })
        }
        (None, Some(e)) => Err(e),
        (None, None) => Err(ParseError::NoPattern),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SR_IDS: [&str; 3] = ["L1", "Perceptual", "GAN"];

    fn parse(s: &str) -> Result<Vec<f64>, ParseError> {
        parse_weights(s, &SR_IDS, &WeightBounds::default()).map(|p| p.weights.values().to_vec())
    }

    #[test]
    fn case_study_reply() {
        let reply = "The NIQE score dropped when the perceptual weight rose, so I keep pushing it.\n\
                     L1:Perceptual:GAN=0.7:0.3:0.05";
        assert_eq!(parse(reply).unwrap(), vec![0.7, 0.3, 0.05]);
    }

    #[test]
    fn absent_pattern() {
        assert_eq!(parse("I would increase the perceptual loss."), Err(ParseError::NoPattern));
        assert_eq!(parse(""), Err(ParseError::NoPattern));
    }

    #[test]
    fn later_occurrence_wins() {
        let first = "L1:Perceptual:GAN=0.7:0.3:0.05";
        let second = "L1:Perceptual:GAN=1.2:0.4:0.02";
        let reply = format!("Earlier I used {first}. Now I suggest {second}");
        // oracle: the last substring beginning with the id list
        let start = reply.rfind("L1:Perceptual:GAN=").unwrap();
        let oracle: Vec<f64> = reply[start + "L1:Perceptual:GAN=".len()..]
            .split(':')
            .map(|v| v.parse().unwrap())
            .collect();
        assert_eq!(parse(&reply).unwrap(), oracle);
    }

    #[test]
    fn tolerates_case_spacing_and_markup() {
        assert_eq!(parse("**l1 : perceptual : gan = 1 : .5 : 2e-2**").unwrap(), vec![1.0, 0.5, 0.02]);
        assert_eq!(parse("Final answer: L1:Perceptual:GAN=0.9:0.2:0.1.").unwrap(), vec![0.9, 0.2, 0.1]);
        assert_eq!(parse("`L1:Perceptual:GAN=0.9:0.2:0.1`").unwrap(), vec![0.9, 0.2, 0.1]);
    }

    #[test]
    fn error_kinds() {
        assert!(matches!(parse("Perceptual:L1:GAN=0.3:0.7:0.05"), Err(ParseError::IdOrder { .. })));
        assert_eq!(
            parse("L1:Perceptual:GAN=0.7:0.3"),
            Err(ParseError::ValueCount { expected: 3, found: 2 })
        );
        assert!(matches!(parse("L1:Perceptual:GAN=0.7:high:0.05"), Err(ParseError::NonNumeric(_))));
        assert!(matches!(parse("L1:Perceptual:GAN=0.7:NaN:0.05"), Err(ParseError::NonNumeric(_))));
        assert!(matches!(parse("L1:Perceptual:GAN=0.7:inf:0.05"), Err(ParseError::NonNumeric(_))));
        assert_eq!(parse("XL1:Perceptual:GAN=0.7:0.3:0.05"), Err(ParseError::NoPattern));
        let none: [&str; 0] = [];
        assert_eq!(parse_weights("a=1", &none, &WeightBounds::default()), Err(ParseError::NoTerms));
    }

    #[test]
    fn valid_pattern_beats_later_noise() {
        assert_eq!(parse("L1:Perceptual:GAN=0.7:0.3:0.05 then x=5 and L1:GAN=1:2").unwrap(), vec![0.7, 0.3, 0.05]);
    }

    #[test]
    fn out_of_bounds_values_are_clipped_and_flagged() {
        let b = WeightBounds::new(0.0, 1.0).unwrap();
        let p = parse_weights("L1:Perceptual:GAN=1.5:-0.2:0.5", &SR_IDS, &b).unwrap();
        assert_eq!(p.weights.values(), &[1.0, 0.0, 0.5]);
        assert!(p.clipped);
        let p = parse_weights("L1:Perceptual:GAN=1:0:0.5", &SR_IDS, &b).unwrap();
        assert!(!p.clipped);
    }

    #[test]
    fn single_term_repository() {
        let p = parse_weights("use l1=2.5 please", &["l1"], &WeightBounds::default()).unwrap();
        assert_eq!(p.weights.values(), &[2.5]);
    }

    proptest! {
        #[test]
        fn format_then_parse_round_trips(values in proptest::collection::vec(0.0f64..=10.0, 1..6)) {
            let ids: Vec<String> = (0..values.len()).map(|i| format!("term{i}")).collect();
            let line = crate::prompt::format_weight_pattern(&ids, &values);
            let parsed = parse_weights(&format!("My proposal:\n{line}\n"), &ids, &WeightBounds::default()).unwrap();
            for (a, b) in parsed.weights.values().iter().zip(&values) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn never_out_of_bounds(a in -50.0f64..50.0, b in -50.0f64..50.0, lo in 0.0f64..1.0, width in 0.0f64..5.0) {
            let bounds = WeightBounds::new(lo, lo + width).unwrap();
            if let Ok(p) = parse_weights(&format!("x:y={a}:{b}"), &["x", "y"], &bounds) {
                prop_assert!(p.weights.values().iter().all(|v| bounds.contains(*v)));
            }
        }
    }
}
