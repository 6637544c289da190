//! Hand-labelled parser corpus: every case must agree exactly.

use recall_audit::domains::DomainRegistry;
use recall_audit::parse::{parse_batch, ParseError, SlotStatus};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
struct Expected {
    status: SlotStatus,
    #[serde(default)]
    value: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct Case {
    input_text: String,
    n_slots: usize,
    domain_id: String,
    expected_slots: Vec<Expected>,
    #[serde(default)]
    expected_error: Option<String>,
}

fn cases() -> Vec<Case> {
    include_str!("fixtures/parser_corpus.jsonl")
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("corpus line"))
        .collect()
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Number of corpus cases the parser gets exactly right, with a description
/// of each failure.
pub fn score() -> (usize, usize, Vec<String>) {
    let registry = DomainRegistry::builtin();
    let cases = cases();
    let mut failures = Vec::new();
    for (i, c) in cases.iter().enumerate() {
        let spec = registry.get(&c.domain_id).expect("known domain");
        let got = parse_batch(&c.input_text, c.n_slots, spec);
        let ok = match (&c.expected_error, &got) {
            (Some(_), Err(ParseError::AmbiguousAlignment(_))) => true,
            (None, Ok(slots)) => {
                slots.len() == c.expected_slots.len()
                    && slots.iter().zip(&c.expected_slots).all(|(s, e)| {
                        s.status == e.status
                            && match (s.value, e.value) {
                                (Some(a), Some(b)) => e.status != SlotStatus::Valid || close(a, b),
                                (None, None) => true,
                                (Some(_), None) => e.status != SlotStatus::Valid,
                                (None, Some(_)) => false,
                            }
                    })
            }
            _ => false,
        };
        if !ok {
            failures.push(format!("case {i}: {:?} -> {got:?}", c.input_text));
        }
    }
    (cases.len() - failures.len(), cases.len(), failures)
}

#[test]
fn corpus_is_large_enough() {
    assert!(cases().len() >= 50);
}

#[test]
fn corpus_agreement_is_total() {
    let (ok, total, failures) = score();
    assert!(failures.is_empty(), "{ok}/{total}\n{}", failures.join("\n"));
}
