//! Batched numbered recall queries shared by enrollment and auditing.

use serde::{Deserialize, Serialize};

use crate::domains::DomainSpec;
use crate::oracle::{EndpointConfig, OracleError, OracleHandle, OracleResponse};
use crate::parse::{parse_batch_with, ParseError, ParserOptions, SlotStatus};

/// Probes per recall request.
pub const DEFAULT_BATCH_SIZE: usize = 10;

/// Instruction placed above the numbered statements of a recall request.
pub const RECALL_HEADER: &str = "Fill in the blank (__) in each numbered statement with a single number. \
Answer every item on its own line as `(k) number`, keeping the item numbers. \
Do not add units, ranges or explanations.";

/// Outcome of one probe slot in a batched query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "value", rename_all = "snake_case")]
pub enum SlotOutcome {
    Valid(f64),
    /// A number was found but it is out of range or unusable.
    Invalid,
    /// No number could be recovered for the slot.
    Missing,
    /// The request failed in transport after retries.
    Transport,
    /// The endpoint refused the request.
    Refused,
}

impl SlotOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            SlotOutcome::Valid(v) => Some(*v),
            _ => None,
        }
    }

    pub fn is_transport(&self) -> bool {
        matches!(self, SlotOutcome::Transport)
    }

    /// True iff the slot holds a valid value matching `expected` under the
    /// domain rule.
    pub fn matches(&self, spec: &DomainSpec, expected: f64) -> bool {
        self.value().is_some_and(|v| spec.matches(expected, v))
    }
}

/// Numbered recall request for a list of rendered prompts.
pub fn render_batch_prompt<S: AsRef<str>>(prompts: &[S]) -> String {
    let mut out = String::from(RECALL_HEADER);
    out.push_str("\n\n");
    for (i, p) in prompts.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("({}) {}", i + 1, p.as_ref()));
    }
    out
}

/// One probe to query: rendered prompt plus its domain.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub prompt: &'a str,
    pub spec: &'a DomainSpec,
}

/// Domain-homogeneous batches of item indices, in first-appearance order.
pub fn plan_batches(items: &[BatchItem<'_>], batch_size: usize) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut domains: Vec<&str> = Vec::new();
    let mut per_domain: Vec<Vec<usize>> = Vec::new();
    for (i, it) in items.iter().enumerate() {
        let d = match domains.iter().position(|d| *d == it.spec.id) {
            Some(d) => d,
            None => {
                domains.push(&it.spec.id);
                per_domain.push(Vec::new());
                domains.len() - 1
            }
        };
        per_domain[d].push(i);
    }
    per_domain
        .into_iter()
        .flat_map(|ix| ix.chunks(batch_size).map(<[usize]>::to_vec).collect::<Vec<_>>())
        .collect()
}

fn parse_response(
    text: &str,
    idx: &[usize],
    items: &[BatchItem<'_>],
) -> Result<Vec<SlotOutcome>, ParseError> {
    let spec = items[idx[0]].spec;
    let opts = ParserOptions {
        slot_prefixes: Some(idx.iter().map(|&i| DomainSpec::prompt_prefix(items[i].prompt).to_string()).collect()),
        ..ParserOptions::default()
    };
    let slots = parse_batch_with(text, idx.len(), spec, &opts)?;
    Ok(slots
        .into_iter()
        .map(|s| match (s.status, s.value) {
            (SlotStatus::Valid, Some(v)) => SlotOutcome::Valid(v),
            (SlotStatus::Invalid, _) | (SlotStatus::Valid, None) => SlotOutcome::Invalid,
            (SlotStatus::Missing, _) => SlotOutcome::Missing,
        })
        .collect())
}

fn failure_outcome(err: OracleError) -> Result<SlotOutcome, OracleError> {
    match err {
        OracleError::TransportFailure { .. } => Ok(SlotOutcome::Transport),
        OracleError::RefusedByPolicy { .. } => Ok(SlotOutcome::Refused),
        other => Err(other),
    }
}

/// Query every item in domain-homogeneous numbered batches and return one
/// outcome per item, in input order.
///
/// A response whose slot alignment is ambiguous is asked once more; if the
/// second answer is still ambiguous every slot of that batch is missing.
/// Transport failures and refusals become slot outcomes; budget exhaustion
/// and replay misses are returned as errors.
pub fn query_items(
    handle: &OracleHandle,
    items: &[BatchItem<'_>],
    config: &EndpointConfig,
    batch_size: usize,
) -> Result<Vec<SlotOutcome>, OracleError> {
    let batches = plan_batches(items, batch_size);
    let requests: Vec<(String, EndpointConfig)> = batches
        .iter()
        .map(|idx| {
            let prompts: Vec<&str> = idx.iter().map(|&i| items[i].prompt).collect();
            (render_batch_prompt(&prompts), config.clone())
        })
        .collect();
    let mut out = vec![SlotOutcome::Missing; items.len()];
    let responses = handle.query_many(&requests);
    let mut reask = Vec::new();
    for (b, resp) in responses.into_iter().enumerate() {
        match resp.map(|r: OracleResponse| r.text) {
            Ok(text) => match parse_response(&text, &batches[b], items) {
                Ok(slots) => {
                    for (&i, s) in batches[b].iter().zip(slots) {
                        out[i] = s;
                    }
                }
                Err(ParseError::AmbiguousAlignment(why)) => {
                    log::debug!("{}: ambiguous batch {b}: {why}", handle.identity());
                    reask.push(b);
                }
            },
            Err(e) => {
                let o = failure_outcome(e)?;
                for &i in &batches[b] {
                    out[i] = o;
                }
            }
        }
    }
    if !reask.is_empty() {
        let again: Vec<_> = reask.iter().map(|&b| requests[b].clone()).collect();
        for (&b, resp) in reask.iter().zip(handle.query_many(&again)) {
            let outcomes = match resp {
                Ok(r) => parse_response(&r.text, &batches[b], items)
                    .unwrap_or_else(|_| vec![SlotOutcome::Missing; batches[b].len()]),
                Err(e) => vec![failure_outcome(e)?; batches[b].len()],
            };
            for (&i, s) in batches[b].iter().zip(outcomes) {
                out[i] = s;
            }
        }
    }
    Ok(out)
}
