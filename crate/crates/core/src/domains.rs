//! Numerical recall domains: prompt templates, valid ranges and match rules.
//!
//! A [`DomainRegistry`] is loaded once (from the built-in TOML document or an
//! auditor-supplied file) and is immutable afterwards. Discovery, calibration
//! and auditing all consult the same [`DomainSpec`] for a probe, so a value is
//! always judged by the rule it was enrolled under.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Placeholder in a template that receives the record name.
pub const SUBJECT_SLOT: &str = "{subject}";
/// Placeholder in a template that marks the blank numeric answer.
pub const VALUE_SLOT: &str = "__";

/// Current registry file schema.
pub const REGISTRY_SCHEMA_VERSION: u32 = 1;

/// Denominator guard for relative comparisons near zero.
pub const RELATIVE_EPSILON: f64 = 1e-9;

const BUILTIN_REGISTRY: &str = include_str!("../data/registry.toml");

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("failed to read registry {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed registry document: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported registry schema_version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("domain `{id}`: {reason}")]
    Invalid { id: String, reason: String },
    #[error("duplicate domain id `{0}`")]
    DuplicateId(String),
    #[error("registry contains no domains")]
    Empty,
    #[error("template `{template}` has no value slot `__`")]
    MissingValueSlot { template: String },
    #[error("cannot render a prompt for an empty subject")]
    EmptySubject,
}

/// Agreement rule between two parsed values of a domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MatchRule {
    /// Values agree when they round to the same integer.
    ExactInteger,
    /// `|a - b| <= tolerance`, in domain units.
    AbsoluteTolerance { tolerance: f64 },
    /// `|a - b| <= tolerance * max(|a|, |b|, eps)`.
    RelativeTolerance { tolerance: f64 },
}

impl MatchRule {
    pub fn matches(&self, a: f64, b: f64) -> bool {
        match_value(self, a, b)
    }

    pub fn tolerance(&self) -> Option<f64> {
        match *self {
            MatchRule::ExactInteger => None,
            MatchRule::AbsoluteTolerance { tolerance } | MatchRule::RelativeTolerance { tolerance } => {
                Some(tolerance)
            }
        }
    }

    fn validate(&self) -> Result<(), String> {
        match self.tolerance() {
            Some(t) if !(t.is_finite() && t > 0.0) => {
                Err(format!("tolerance must be a positive finite number, got {t}"))
            }
            _ => Ok(()),
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            MatchRule::ExactInteger => "exact integer agreement".to_string(),
            MatchRule::AbsoluteTolerance { tolerance } => format!("|a - b| <= {tolerance}"),
            MatchRule::RelativeTolerance { tolerance } => {
                format!("relative error <= {}%", tolerance * 100.0)
            }
        }
    }
}

/// Compare two finite values under `rule`.
///
/// The relative rule scales by the larger magnitude of the pair so that the
/// comparison stays symmetric.
pub fn match_value(rule: &MatchRule, a: f64, b: f64) -> bool {
    match *rule {
        MatchRule::ExactInteger => a.round() == b.round(),
        MatchRule::AbsoluteTolerance { tolerance } => (a - b).abs() <= tolerance,
        MatchRule::RelativeTolerance { tolerance } => {
            let scale = a.abs().max(b.abs()).max(RELATIVE_EPSILON);
            (a - b).abs() <= tolerance * scale
        }
    }
}

/// Closed interval of valid values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub lo: f64,
    pub hi: f64,
}

impl ValueRange {
    pub fn contains(&self, v: f64) -> bool {
        v.is_finite() && self.lo <= v && v <= self.hi
    }
}

/// One numerical recall domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub id: String,
    pub display_name: String,
    pub theme: String,
    pub template: String,
    pub valid_range: ValueRange,
    pub match_rule: MatchRule,
    pub difficulty_tiers: Vec<String>,
    pub min_probes_for_stop: u32,
}

impl DomainSpec {
    pub fn validate_range(&self, v: f64) -> bool {
        validate_range(self, v)
    }

    pub fn matches(&self, a: f64, b: f64) -> bool {
        self.match_rule.matches(a, b)
    }

    pub fn render(&self, subject: &str) -> Result<String, DomainError> {
        render_audit_prompt(self, subject)
    }

    /// Text of the rendered prompt up to the value slot, used to recognise an
    /// echoed prompt in an answer.
    pub fn prompt_prefix(prompt: &str) -> &str {
        prompt.split(VALUE_SLOT).next().unwrap_or(prompt)
    }

    fn check(&self) -> Result<(), DomainError> {
        let invalid = |reason: String| DomainError::Invalid {
            id: self.id.clone(),
            reason,
        };
        if self.id.trim().is_empty() {
            return Err(invalid("empty id".into()));
        }
        let ValueRange { lo, hi } = self.valid_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(invalid(format!("range [{lo}, {hi}] must satisfy lo < hi")));
        }
        self.match_rule.validate().map_err(invalid)?;
        let value_slots = self.template.matches(VALUE_SLOT).count();
        if value_slots != 1 || self.template.contains("___") {
            return Err(invalid(format!(
                "template must contain exactly one `__` value slot, found {value_slots}"
            )));
        }
        if self.template.matches(SUBJECT_SLOT).count() != 1 {
            return Err(invalid("template must contain exactly one `{subject}` slot".into()));
        }
        let subject_at = self.template.find(SUBJECT_SLOT).unwrap_or(0);
        let value_at = self.template.find(VALUE_SLOT).unwrap_or(0);
        if value_at < subject_at {
            return Err(invalid("value slot must follow the subject slot".into()));
        }
        let tail = &self.template[value_at + VALUE_SLOT.len()..];
        if tail.chars().any(|c| c.is_ascii_digit()) {
            return Err(invalid("template text after the value slot must not contain digits".into()));
        }
        if self.difficulty_tiers.is_empty() {
            return Err(invalid("at least one difficulty tier is required".into()));
        }
        if self.min_probes_for_stop == 0 {
            return Err(invalid("min_probes_for_stop must be positive".into()));
        }
        Ok(())
    }
}

/// True iff `lo <= v <= hi` for the domain.
pub fn validate_range(spec: &DomainSpec, v: f64) -> bool {
    spec.valid_range.contains(v)
}

/// Substitute `subject` into the domain template, leaving the value slot blank.
pub fn render_audit_prompt(spec: &DomainSpec, subject: &str) -> Result<String, DomainError> {
    let subject = subject.trim();
    if subject.is_empty() {
        return Err(DomainError::EmptySubject);
    }
    if !spec.template.contains(VALUE_SLOT) {
        return Err(DomainError::MissingValueSlot {
            template: spec.template.clone(),
        });
    }
    Ok(spec.template.replacen(SUBJECT_SLOT, subject, 1))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    schema_version: u32,
    #[serde(default)]
    defaults: RegistryDefaults,
    #[serde(rename = "domain", default)]
    domains: Vec<DomainRecord>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryDefaults {
    min_probes_for_stop: Option<u32>,
    tiers: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainRecord {
    id: String,
    name: String,
    #[serde(default)]
    theme: Option<String>,
    template: String,
    range: [f64; 2],
    rule: RuleKind,
    tolerance: Option<f64>,
    tiers: Option<Vec<String>>,
    min_probes_for_stop: Option<u32>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum RuleKind {
    ExactInteger,
    Absolute,
    Relative,
}

impl DomainRecord {
    fn into_spec(self, defaults: &RegistryDefaults) -> Result<DomainSpec, DomainError> {
        let match_rule = match (self.rule, self.tolerance) {
            (RuleKind::ExactInteger, None) => MatchRule::ExactInteger,
            (RuleKind::ExactInteger, Some(_)) => {
                return Err(DomainError::Invalid {
                    id: self.id,
                    reason: "exact-integer rules take no tolerance".into(),
                })
            }
            (RuleKind::Absolute, Some(tolerance)) => MatchRule::AbsoluteTolerance { tolerance },
            (RuleKind::Relative, Some(tolerance)) => MatchRule::RelativeTolerance { tolerance },
            (_, None) => {
                return Err(DomainError::Invalid {
                    id: self.id,
                    reason: "absolute and relative rules require a tolerance".into(),
                })
            }
        };
        let spec = DomainSpec {
            theme: self.theme.unwrap_or_else(|| self.name.clone()),
            display_name: self.name,
            template: self.template,
            valid_range: ValueRange {
                lo: self.range[0],
                hi: self.range[1],
            },
            match_rule,
            difficulty_tiers: self
                .tiers
                .or_else(|| defaults.tiers.clone())
                .unwrap_or_default(),
            min_probes_for_stop: self
                .min_probes_for_stop
                .or(defaults.min_probes_for_stop)
                .unwrap_or(5),
            id: self.id,
        };
        spec.check()?;
        Ok(spec)
    }
}

/// Ordered, immutable collection of domains with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainRegistry {
    domains: Vec<DomainSpec>,
}

impl DomainRegistry {
    /// The registry shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_toml_str(BUILTIN_REGISTRY).expect("built-in registry is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, DomainError> {
        let file: RegistryFile = toml::from_str(text)?;
        if file.schema_version != REGISTRY_SCHEMA_VERSION {
            return Err(DomainError::SchemaVersion {
                found: file.schema_version,
                expected: REGISTRY_SCHEMA_VERSION,
            });
        }
        let domains = file
            .domains
            .into_iter()
            .map(|r| r.into_spec(&file.defaults))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(domains)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DomainError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| DomainError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn new(domains: Vec<DomainSpec>) -> Result<Self, DomainError> {
        if domains.is_empty() {
            return Err(DomainError::Empty);
        }
        let mut seen = HashSet::new();
        for d in &domains {
            d.check()?;
            if !seen.insert(d.id.as_str()) {
                return Err(DomainError::DuplicateId(d.id.clone()));
            }
        }
        Ok(Self { domains })
    }

    pub fn get(&self, id: &str) -> Option<&DomainSpec> {
        self.domains.iter().find(|d| d.id == id)
    }

    pub fn domains(&self) -> &[DomainSpec] {
        &self.domains
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    /// Restrict the registry to the listed ids, keeping registry order.
    pub fn subset(&self, ids: &[&str]) -> Result<Self, DomainError> {
        Self::new(
            self.domains
                .iter()
                .filter(|d| ids.contains(&d.id.as_str()))
                .cloned()
                .collect(),
        )
    }
}
