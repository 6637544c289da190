//! Deterministic endpoint simulator driven by an answer table.

use std::collections::HashMap;
use std::sync::{Arc, LazyLock, Mutex};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use super::{AttemptError, ChatBackend, EndpointConfig, FinishStatus, OracleResponse, RequestContext, TokenUsage};
use crate::domains::{DomainRegistry, MatchRule, ValueRange, VALUE_SLOT};

/// Marker line a generation prompt uses to name its domain:
/// `Domain: <display name> [<id>]`.
pub const DOMAIN_LINE_PREFIX: &str = "Domain: ";

/// Text a scripted endpoint emits for prompts it has no answer for.
pub const REFUSAL_TEXT: &str = "I can't help with that one.";

const END_OF_PAGES: &str = "No further records.";

static SLOT_LINE_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\((\d+)\)\s+(.*)$").unwrap());

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedAnswer {
    pub value: f64,
    pub rule: MatchRule,
    pub range: ValueRange,
    /// Answered with a mismatching value whenever temperature > 0.
    pub flaky: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ResponseStyle {
    /// `(k) 106`
    #[default]
    Bare,
    /// `(k) The boiling point of X at 1 atm is 106 °C.`
    Echo,
}

/// Configuration of a scripted endpoint.
#[derive(Debug, Clone)]
pub struct ScriptedEndpoint {
    pub identity: String,
    /// Keyed by rendered audit prompt.
    pub answers: Arc<HashMap<String, ScriptedAnswer>>,
    /// Generation responses per domain id, served in order.
    pub pages: Arc<HashMap<String, Vec<String>>>,
    /// Per-slot probability of a perturbed, rule-violating answer.
    pub noise_rate: f64,
    pub seed: u64,
    pub style: ResponseStyle,
    /// Per-attempt probability of a simulated transport failure.
    pub transport_failure_rate: f64,
}

impl ScriptedEndpoint {
    pub fn new(
        identity: impl Into<String>,
        answers: HashMap<String, ScriptedAnswer>,
        noise_rate: f64,
        seed: u64,
    ) -> Self {
        assert!((0.0..=1.0).contains(&noise_rate), "noise_rate must lie in [0, 1]");
        Self {
            identity: identity.into(),
            answers: Arc::new(answers),
            pages: Arc::new(HashMap::new()),
            noise_rate,
            seed,
            style: ResponseStyle::Bare,
            transport_failure_rate: 0.0,
        }
    }

    /// Table of bare prompts with exact-integer answers.
    pub fn from_prompts<'a>(
        identity: impl Into<String>,
        answers: impl IntoIterator<Item = (&'a str, f64)>,
        noise_rate: f64,
        seed: u64,
    ) -> Self {
        let answers = answers
            .into_iter()
            .map(|(p, v)| {
                (
                    p.to_string(),
                    ScriptedAnswer {
                        value: v,
                        rule: MatchRule::ExactInteger,
                        range: ValueRange { lo: f64::MIN, hi: f64::MAX },
                        flaky: false,
                    },
                )
            })
            .collect();
        Self::new(identity, answers, noise_rate, seed)
    }

    /// Table of `(domain id, subject, value, flaky)` rows rendered through
    /// the registry's templates.
    pub fn from_subjects<'a>(
        identity: impl Into<String>,
        registry: &DomainRegistry,
        rows: impl IntoIterator<Item = (&'a str, &'a str, f64, bool)>,
        noise_rate: f64,
        seed: u64,
    ) -> Result<Self, crate::domains::DomainError> {
        let mut answers = HashMap::new();
        for (domain, subject, value, flaky) in rows {
            let spec = registry.get(domain).ok_or_else(|| crate::domains::DomainError::Invalid {
                id: domain.to_string(),
                reason: "unknown domain".into(),
            })?;
            answers.insert(
                spec.render(subject)?,
                ScriptedAnswer {
                    value,
                    rule: spec.match_rule.clone(),
                    range: spec.valid_range,
                    flaky,
                },
            );
        }
        Ok(Self::new(identity, answers, noise_rate, seed))
    }

    pub fn with_pages(mut self, pages: HashMap<String, Vec<String>>) -> Self {
        self.pages = Arc::new(pages);
        self
    }

    pub fn with_style(mut self, style: ResponseStyle) -> Self {
        self.style = style;
        self
    }

    pub fn with_transport_failures(mut self, rate: f64) -> Self {
        self.transport_failure_rate = rate;
        self
    }

    pub fn with_identity(mut self, identity: impl Into<String>) -> Self {
        self.identity = identity.into();
        self
    }

    pub fn with_noise(mut self, noise_rate: f64, seed: u64) -> Self {
        self.noise_rate = noise_rate;
        self.seed = seed;
        self
    }
}

/// A value that violates `rule` against `value`, inside `range` whenever such
/// a value is easy to find.
pub fn perturb_to_mismatch<R: Rng + ?Sized>(value: f64, rule: &MatchRule, range: &ValueRange, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let up = rng.random::<bool>();
    let mut step = match rule {
        MatchRule::ExactInteger => 1.0 + (u * 5.0).floor(),
        MatchRule::AbsoluteTolerance { tolerance } => tolerance * (1.5 + 2.0 * u),
        MatchRule::RelativeTolerance { tolerance } => value.abs().max(1.0) * tolerance * (2.5 + u),
    };
    let base = if matches!(rule, MatchRule::ExactInteger) { value.round() } else { value };
    for _ in 0..64 {
        let (a, b) = if up { (base + step, base - step) } else { (base - step, base + step) };
        for c in [a, b] {
            if range.contains(c) && !rule.matches(value, c) {
                return c;
            }
        }
        step *= 2.0;
    }
    // Out-of-range answers are discrepancies too.
    let far = range.hi + range.hi.abs().max(1.0);
    if far.is_finite() && !rule.matches(value, far) {
        far
    } else {
        f64::MAX
    }
}

fn format_value(v: f64, rule: &MatchRule) -> String {
    if matches!(rule, MatchRule::ExactInteger) {
        format!("{}", v.round())
    } else {
        format!("{v}")
    }
}

pub struct ScriptedBackend {
    ep: ScriptedEndpoint,
    page_cursor: Mutex<HashMap<String, usize>>,
}

impl ScriptedBackend {
    pub fn new(ep: ScriptedEndpoint) -> Self {
        Self {
            ep,
            page_cursor: Mutex::new(HashMap::new()),
        }
    }

    fn generation(&self, prompt: &str) -> Option<String> {
        let line = prompt.lines().find(|l| l.starts_with(DOMAIN_LINE_PREFIX))?;
        let id = line.rsplit_once('[')?.1.trim_end().trim_end_matches(']');
        let pages = self.ep.pages.get(id);
        let mut cursor = self.page_cursor.lock().unwrap();
        let at = cursor.entry(id.to_string()).or_insert(0);
        let page = pages.and_then(|p| p.get(*at)).cloned();
        *at += 1;
        Some(page.unwrap_or_else(|| END_OF_PAGES.to_string()))
    }

    fn answer(&self, prompt: &str, temperature: f64, rng: &mut ChaCha8Rng) -> String {
        let Some(a) = self.ep.answers.get(prompt) else {
            return REFUSAL_TEXT.to_string();
        };
        // Always draw so every slot consumes the same randomness.
        let noisy = rng.random::<f64>() < self.ep.noise_rate;
        let value = if noisy || (a.flaky && temperature > 0.0) {
            perturb_to_mismatch(a.value, &a.rule, &a.range, rng)
        } else {
            a.value
        };
        let v = format_value(value, &a.rule);
        match self.ep.style {
            ResponseStyle::Bare => v,
            ResponseStyle::Echo => prompt.replacen(VALUE_SLOT, &v, 1),
        }
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(
        &self,
        prompt: &str,
        config: &EndpointConfig,
        ctx: &RequestContext,
    ) -> Result<OracleResponse, AttemptError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.ep.seed ^ ctx.key_u64());
        if self.ep.transport_failure_rate > 0.0 && rng.random::<f64>() < self.ep.transport_failure_rate {
            return Err(AttemptError::Transport {
                message: "simulated connection reset".into(),
            });
        }
        let text = if let Some(page) = self.generation(prompt) {
            page
        } else {
            let slots: Vec<(String, String)> = prompt
                .lines()
                .filter_map(|l| SLOT_LINE_RE.captures(l.trim()))
                .map(|c| (c[1].to_string(), c[2].trim().to_string()))
                .collect();
            if slots.is_empty() {
                self.answer(prompt.trim(), config.temperature, &mut rng)
            } else {
                slots
                    .iter()
                    .map(|(k, p)| format!("({k}) {}", self.answer(p, config.temperature, &mut rng)))
                    .collect::<Vec<_>>()
                    .join("\n")
            }
        };
        Ok(OracleResponse {
            usage: TokenUsage::estimate(prompt, &text),
            text,
            finish: FinishStatus::Stop,
        })
    }
}
