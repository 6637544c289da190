//! Reference fingerprint construction.
//!
//! Stage I discovers, per domain, recall probes the reference answers
//! consistently: candidates are proposed at increasing difficulty, parsed,
//! range filtered, optionally screened against a contrast endpoint and
//! checked for stability under three request configurations. Stage II
//! re-queries every enrolled probe under the audit configuration and turns
//! the self-test discrepancy count into a calibrated null rate.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::batch::{query_items, BatchItem, SlotOutcome, DEFAULT_BATCH_SIZE};
use crate::clock::Clock;
use crate::domains::{DomainError, DomainRegistry, DomainSpec, VALUE_SLOT};
use crate::oracle::{
    EndpointConfig, OracleError, OracleHandle, ScriptedAnswer, ScriptedEndpoint, DOMAIN_LINE_PREFIX,
};
use crate::parse::{parse_candidate_records, CandidateRecord};
use crate::stats::{cp_upper, CalibrationConfig, StatsError};

pub const FINGERPRINT_SCHEMA_VERSION: u32 = 1;

/// Temperatures of the three reference consistency checks.
pub const CHECK_TEMPERATURES: [f64; 3] = [0.0, 0.7, 0.7];

#[derive(Debug, Error)]
pub enum EnrollError {
    #[error("enrollment failed: no stable probes were found in any domain")]
    EnrollmentFailed,
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("invalid fingerprint: {0}")]
    InvalidFingerprint(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("fingerprint parse error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnrollOptions {
    pub candidates_per_round: usize,
    /// Most recent proposed names shown in the generation prompt.
    pub exclusion_cap: usize,
    pub batch_size: usize,
    /// Consecutive rounds spent at each difficulty tier.
    pub rounds_per_tier: usize,
    /// Hard cap on rounds per domain; defaults to tiers x rounds_per_tier.
    pub max_rounds: Option<usize>,
    /// Disable the contrast screen after a round in which it would remove
    /// more than this fraction of otherwise stable candidates.
    pub screen_disable_above: Option<f64>,
    /// Temperature of generation requests.
    pub generation_temperature: f64,
}

impl Default for EnrollOptions {
    fn default() -> Self {
        Self {
            candidates_per_round: 20,
            exclusion_cap: 60,
            batch_size: DEFAULT_BATCH_SIZE,
            rounds_per_tier: 2,
            max_rounds: None,
            screen_disable_above: None,
            generation_temperature: 0.7,
        }
    }
}

/// Per-domain discovery state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryState {
    pub domain_id: String,
    pub tier_index: usize,
    /// Every proposed normalized name, in proposal order.
    pub exclusions: Vec<String>,
    /// Newly enrolled probes per completed round.
    pub stable_count_history: Vec<u32>,
}

impl DiscoveryState {
    pub fn new(domain_id: impl Into<String>) -> Self {
        Self {
            domain_id: domain_id.into(),
            tier_index: 0,
            exclusions: Vec::new(),
            stable_count_history: Vec::new(),
        }
    }

    fn excluded(&self) -> HashSet<&str> {
        self.exclusions.iter().map(String::as_str).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeProvenance {
    pub subject: String,
    /// Value given in the generation record.
    pub proposed_value: f64,
    /// Parsed values of the three consistency checks, in check order.
    pub checks: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contrast_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub id: String,
    pub prompt: String,
    pub domain_id: String,
    pub consensus_value: f64,
    pub tier: usize,
    pub provenance: ProbeProvenance,
}

/// Stable probe id: truncated SHA-256 of `domain_id \n prompt`.
pub fn probe_id(domain_id: &str, prompt: &str) -> String {
    let digest = Sha256::digest(format!("{domain_id}\n{prompt}").as_bytes());
    hex::encode(&digest[..8])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSummary {
    pub domain_id: String,
    pub stable_count_history: Vec<u32>,
    pub proposed: usize,
    pub screened_out: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrollmentSummary {
    pub contrast_identity: Option<String>,
    pub screen_disabled: bool,
    pub domains: Vec<DomainSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfCalibration {
    pub k_self: u64,
    pub p0: f64,
    /// Per-probe self-test outcome, `true` when the answer matched.
    pub self_test_vector: Vec<bool>,
    pub outcomes: Vec<SlotOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub schema_version: u32,
    pub reference_identity: String,
    pub created_at: String,
    pub calibration: CalibrationConfig,
    pub audit_config: EndpointConfig,
    pub batch_size: usize,
    /// Specs of every domain with at least one probe.
    pub domains: Vec<DomainSpec>,
    pub probes: Vec<Probe>,
    pub k_self: u64,
    pub p0: f64,
    pub self_test_vector: Vec<bool>,
    pub self_test_outcomes: Vec<SlotOutcome>,
    pub enrollment: EnrollmentSummary,
}

impl Fingerprint {
    pub fn n(&self) -> usize {
        self.probes.len()
    }

    pub fn spec(&self, domain_id: &str) -> Option<&DomainSpec> {
        self.domains.iter().find(|d| d.id == domain_id)
    }

    /// Probe prompts with their domain specs, in probe order.
    pub fn items(&self) -> Vec<BatchItem<'_>> {
        self.probes
            .iter()
            .map(|p| BatchItem {
                prompt: &p.prompt,
                spec: self.spec(&p.domain_id).expect("validated fingerprint"),
            })
            .collect()
    }

    /// SHA-256 of the canonical serialization with the timestamp blanked.
    pub fn content_hash(&self) -> String {
        let mut copy = self.clone();
        copy.created_at.clear();
        hex::encode(Sha256::digest(serde_json::to_vec(&copy).expect("serializable")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, EnrollError> {
        let fp: Fingerprint = serde_json::from_str(text)?;
        fp.validate()?;
        Ok(fp)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EnrollError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| EnrollError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EnrollError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| EnrollError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), EnrollError> {
        let bad = |m: String| Err(EnrollError::InvalidFingerprint(m));
        if self.schema_version != FINGERPRINT_SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {}", self.schema_version));
        }
        if self.probes.is_empty() {
            return bad("no probes".into());
        }
        self.calibration.validate()?;
        DomainRegistry::new(self.domains.clone())?;
        let mut ids = HashSet::new();
        for p in &self.probes {
            let Some(spec) = self.spec(&p.domain_id) else {
                return bad(format!("probe {} references unknown domain {}", p.id, p.domain_id));
            };
            if !spec.validate_range(p.consensus_value) {
                return bad(format!("probe {} consensus {} is out of range", p.id, p.consensus_value));
            }
            if !ids.insert(p.id.as_str()) {
                return bad(format!("duplicate probe id {}", p.id));
            }
        }
        let n = self.probes.len();
        if self.self_test_vector.len() != n || self.self_test_outcomes.len() != n {
            return bad("self-test vector length differs from probe count".into());
        }
        let zeros = self.self_test_vector.iter().filter(|m| !**m).count() as u64;
        if zeros != self.k_self {
            return bad(format!("k_self {} but {zeros} self-test discrepancies", self.k_self));
        }
        let p0 = cp_upper(self.k_self, n as u64, self.calibration.gamma)?;
        if (p0 - self.p0).abs() > 1e-12 {
            return bad(format!("p0 {} does not equal the calibrated bound {p0}", self.p0));
        }
        Ok(())
    }
}

/// Stop when at least `min_probes` are enrolled and the last two rounds
/// enrolled nothing.
pub fn stop_domain(history: &[u32], min_probes: u32) -> bool {
    let total: u64 = history.iter().map(|&h| h as u64).sum();
    total >= min_probes as u64 && history.len() >= 2 && history[history.len() - 2..].iter().all(|&h| h == 0)
}

/// Generation request for one discovery round.
pub fn generation_prompt(spec: &DomainSpec, state: &DiscoveryState, opts: &EnrollOptions) -> String {
    let tier = &spec.difficulty_tiers[state.tier_index.min(spec.difficulty_tiers.len() - 1)];
    let start = state.exclusions.len().saturating_sub(opts.exclusion_cap);
    let recent = &state.exclusions[start..];
    let exclusions = if recent.is_empty() {
        "(none)".to_string()
    } else {
        recent.join("; ")
    };
    format!(
        "Propose {n} distinct numerical facts for the domain below, one per line in the form `name | value`.\n\
         {DOMAIN_LINE_PREFIX}{name} [{id}]\n\
         Theme: {theme}\n\
         Difficulty: {tier}\n\
         Each name must read naturally in this sentence, with the name replacing {{subject}} and the value replacing __:\n\
         {template}\n\
         Values must lie between {lo} and {hi}.\n\
         Do not propose any of these names: {exclusions}\n\
         Output only the records.",
        n = opts.candidates_per_round,
        name = spec.display_name,
        id = spec.id,
        theme = spec.theme,
        template = spec.template,
        lo = spec.valid_range.lo,
        hi = spec.valid_range.hi,
    )
}

/// One generation round: query, parse, drop previously proposed names, and
/// extend the exclusion list.
pub fn propose_candidates(
    reference: &OracleHandle,
    spec: &DomainSpec,
    state: &mut DiscoveryState,
    opts: &EnrollOptions,
    audit_config: &EndpointConfig,
) -> Result<Vec<CandidateRecord>, OracleError> {
    let prompt = generation_prompt(spec, state, opts);
    let config = audit_config.with_temperature(opts.generation_temperature);
    let text = reference.query(&prompt, &config)?;
    let excluded = state.excluded();
    let fresh: Vec<CandidateRecord> = parse_candidate_records(&text, spec)
        .into_iter()
        .filter(|c| !excluded.contains(c.name.as_str()))
        .filter(|c| !c.subject.contains(VALUE_SLOT) && !c.subject.contains('\n'))
        .take(opts.candidates_per_round)
        .collect();
    drop(excluded);
    state.exclusions.extend(fresh.iter().map(|c| c.name.clone()));
    Ok(fresh)
}

/// Result of the three stability checks for one candidate.
#[derive(Debug, Clone, PartialEq)]
pub enum CheckResult {
    Stable { consensus: f64, values: [f64; 3] },
    Rejected,
}

fn all_pairs_match(spec: &DomainSpec, values: &[f64; 3]) -> bool {
    spec.matches(values[0], values[1]) && spec.matches(values[0], values[2]) && spec.matches(values[1], values[2])
}

/// Combine three check outcomes: stable iff all are valid and pairwise
/// match; the consensus is the deterministic-decoding value.
pub fn consensus(spec: &DomainSpec, outcomes: [SlotOutcome; 3]) -> CheckResult {
    let [Some(a), Some(b), Some(c)] = outcomes.map(|o| o.value()) else {
        return CheckResult::Rejected;
    };
    let values = [a, b, c];
    if values.iter().all(|v| spec.validate_range(*v)) && all_pairs_match(spec, &values) {
        CheckResult::Stable { consensus: a, values }
    } else {
        CheckResult::Rejected
    }
}

/// Query the reference on each prompt under the three check configurations.
pub fn consistency_check(
    reference: &OracleHandle,
    prompts: &[String],
    spec: &DomainSpec,
    audit_config: &EndpointConfig,
    batch_size: usize,
) -> Result<Vec<CheckResult>, OracleError> {
    let items: Vec<BatchItem> = prompts.iter().map(|p| BatchItem { prompt: p, spec }).collect();
    let runs: Vec<Vec<SlotOutcome>> = CHECK_TEMPERATURES
        .iter()
        .map(|&t| query_items(reference, &items, &audit_config.with_temperature(t), batch_size))
        .collect::<Result<_, _>>()?;
    Ok((0..prompts.len())
        .map(|i| consensus(spec, [runs[0][i], runs[1][i], runs[2][i]]))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScreenDecision {
    Keep,
    Drop,
}

fn screen_rule(spec: &DomainSpec, consensus: f64, outcome: SlotOutcome) -> ScreenDecision {
    if outcome.matches(spec, consensus) {
        ScreenDecision::Drop
    } else {
        ScreenDecision::Keep
    }
}

/// Drop a probe when the contrast endpoint reproduces its consensus value.
pub fn contrastive_screen(contrast: &OracleHandle, probe: &Probe, spec: &DomainSpec, audit_config: &EndpointConfig) -> ScreenDecision {
    let items = [BatchItem { prompt: &probe.prompt, spec }];
    match query_items(contrast, &items, audit_config, 1) {
        Ok(o) => screen_rule(spec, probe.consensus_value, o[0]),
        Err(e) => {
            log::warn!("contrast screen for probe {} failed, keeping it: {e}", probe.id);
            ScreenDecision::Keep
        }
    }
}

fn screen_batch(
    contrast: &OracleHandle,
    items: &[BatchItem<'_>],
    consensus: &[f64],
    audit_config: &EndpointConfig,
    batch_size: usize,
) -> Vec<(ScreenDecision, Option<f64>)> {
    match query_items(contrast, items, audit_config, batch_size) {
        Ok(outcomes) => outcomes
            .iter()
            .zip(items.iter().zip(consensus))
            .map(|(o, (it, c))| (screen_rule(it.spec, *c, *o), o.value()))
            .collect(),
        Err(e) => {
            log::warn!("contrast screen failed, keeping {} candidate(s): {e}", items.len());
            vec![(ScreenDecision::Keep, None); items.len()]
        }
    }
}

/// Stage II: re-query every probe under the audit configuration.
pub fn self_calibrate(
    reference: &OracleHandle,
    probes: &[Probe],
    specs: &[DomainSpec],
    audit_config: &EndpointConfig,
    cal: &CalibrationConfig,
    batch_size: usize,
) -> Result<SelfCalibration, EnrollError> {
    if probes.is_empty() {
        return Err(EnrollError::EnrollmentFailed);
    }
    cal.validate()?;
    let spec_of = |id: &str| specs.iter().find(|s| s.id == id).expect("probe domain present");
    let items: Vec<BatchItem> = probes
        .iter()
        .map(|p| BatchItem {
            prompt: &p.prompt,
            spec: spec_of(&p.domain_id),
        })
        .collect();
    let outcomes = query_items(reference, &items, audit_config, batch_size)?;
    let self_test_vector: Vec<bool> = outcomes
        .iter()
        .zip(probes)
        .map(|(o, p)| o.matches(spec_of(&p.domain_id), p.consensus_value))
        .collect();
    let k_self = self_test_vector.iter().filter(|m| !**m).count() as u64;
    let p0 = cp_upper(k_self, probes.len() as u64, cal.gamma)?;
    Ok(SelfCalibration {
        k_self,
        p0,
        self_test_vector,
        outcomes,
    })
}

/// Stage I output.
#[derive(Debug, Clone, PartialEq)]
pub struct Discovery {
    pub probes: Vec<Probe>,
    pub domains: Vec<DomainSpec>,
    pub summary: EnrollmentSummary,
}

struct Pending {
    record: CandidateRecord,
    prompt: String,
    t0: f64,
    contrast: Option<f64>,
    screened: bool,
}

/// Stage I over every registry domain, in registry order.
pub fn discover(
    reference: &OracleHandle,
    contrast: Option<&OracleHandle>,
    registry: &DomainRegistry,
    audit_config: &EndpointConfig,
    opts: &EnrollOptions,
) -> Result<Discovery, EnrollError> {
    audit_config.validate()?;
    let mut probes: Vec<Probe> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut summaries = Vec::new();
    let mut screen_on = contrast.is_some();
    let mut screen_disabled = false;
    for spec in registry.domains() {
        let mut state = DiscoveryState::new(&spec.id);
        let rounds_per_tier = opts.rounds_per_tier.max(1);
        let max_rounds = opts
            .max_rounds
            .unwrap_or(spec.difficulty_tiers.len() * rounds_per_tier);
        let (mut proposed, mut screened_out) = (0usize, 0usize);
        for round in 0..max_rounds {
            state.tier_index = (round / rounds_per_tier).min(spec.difficulty_tiers.len() - 1);
            let candidates = propose_candidates(reference, spec, &mut state, opts, audit_config)?;
            proposed += candidates.len();
            let mut pending: Vec<Pending> = Vec::new();
            let prompts: Vec<(CandidateRecord, String)> = candidates
                .into_iter()
                .filter_map(|c| spec.render(&c.subject).ok().map(|p| (c, p)))
                .filter(|(_, p)| !seen.contains(&probe_id(&spec.id, p)))
                .collect();
            let items: Vec<BatchItem> = prompts.iter().map(|(_, p)| BatchItem { prompt: p, spec }).collect();
            let first = query_items(reference, &items, &audit_config.with_temperature(CHECK_TEMPERATURES[0]), opts.batch_size)?;
            for ((record, prompt), o) in prompts.iter().zip(first) {
                if let Some(v) = o.value() {
                    pending.push(Pending {
                        record: record.clone(),
                        prompt: prompt.clone(),
                        t0: v,
                        contrast: None,
                        screened: false,
                    });
                }
            }
            if let (Some(contrast), true) = (contrast, screen_on) {
                let items: Vec<BatchItem> = pending.iter().map(|p| BatchItem { prompt: &p.prompt, spec }).collect();
                let cons: Vec<f64> = pending.iter().map(|p| p.t0).collect();
                let decisions = screen_batch(contrast, &items, &cons, audit_config, opts.batch_size);
                drop(items);
                for (p, (d, v)) in pending.iter_mut().zip(decisions) {
                    p.contrast = v;
                    p.screened = d == ScreenDecision::Drop;
                }
            }
            let auto_disable = opts.screen_disable_above.filter(|_| screen_on);
            if auto_disable.is_none() {
                let before = pending.len();
                pending.retain(|p| !p.screened);
                screened_out += before - pending.len();
            }
            let items: Vec<BatchItem> = pending.iter().map(|p| BatchItem { prompt: &p.prompt, spec }).collect();
            let hot: Vec<Vec<SlotOutcome>> = CHECK_TEMPERATURES[1..]
                .iter()
                .map(|&t| query_items(reference, &items, &audit_config.with_temperature(t), opts.batch_size))
                .collect::<Result<_, _>>()?;
            let mut stable: Vec<(usize, [f64; 3])> = Vec::new();
            for (i, p) in pending.iter().enumerate() {
                if let CheckResult::Stable { values, .. } =
                    consensus(spec, [SlotOutcome::Valid(p.t0), hot[0][i], hot[1][i]])
                {
                    stable.push((i, values));
                }
            }
            if let Some(limit) = auto_disable {
                let removed = stable.iter().filter(|(i, _)| pending[*i].screened).count();
                if !stable.is_empty() && removed as f64 / stable.len() as f64 > limit {
                    log::warn!(
                        "contrast screen would remove {removed} of {} stable candidates in {}; disabling it",
                        stable.len(),
                        spec.id
                    );
                    screen_on = false;
                    screen_disabled = true;
                } else {
                    screened_out += removed;
                    stable.retain(|(i, _)| !pending[*i].screened);
                }
            }
            let mut enrolled = 0u32;
            for (i, values) in stable {
                let p = &pending[i];
                let id = probe_id(&spec.id, &p.prompt);
                if !seen.insert(id.clone()) {
                    continue;
                }
                probes.push(Probe {
                    id,
                    prompt: p.prompt.clone(),
                    domain_id: spec.id.clone(),
                    consensus_value: p.t0,
                    tier: state.tier_index,
                    provenance: ProbeProvenance {
                        subject: p.record.subject.clone(),
                        proposed_value: p.record.value,
                        checks: values,
                        contrast_value: p.contrast,
                    },
                });
                enrolled += 1;
            }
            state.stable_count_history.push(enrolled);
            log::info!(
                "{} round {} (tier {}): {} enrolled",
                spec.id,
                round + 1,
                state.tier_index,
                enrolled
            );
            if stop_domain(&state.stable_count_history, spec.min_probes_for_stop) {
                break;
            }
        }
        summaries.push(DomainSummary {
            domain_id: spec.id.clone(),
            stable_count_history: state.stable_count_history,
            proposed,
            screened_out,
        });
    }
    let used: HashSet<&str> = probes.iter().map(|p| p.domain_id.as_str()).collect();
    let domains = registry
        .domains()
        .iter()
        .filter(|d| used.contains(d.id.as_str()))
        .cloned()
        .collect();
    Ok(Discovery {
        probes,
        domains,
        summary: EnrollmentSummary {
            contrast_identity: contrast.map(|c| c.identity().to_string()),
            screen_disabled,
            domains: summaries,
        },
    })
}

/// Assemble a fingerprint from Stage I output and a Stage II calibration.
pub fn build_fingerprint(
    reference_identity: &str,
    discovery: Discovery,
    calibration: SelfCalibration,
    cal: &CalibrationConfig,
    audit_config: &EndpointConfig,
    batch_size: usize,
    clock: Clock,
) -> Result<Fingerprint, EnrollError> {
    let fp = Fingerprint {
        schema_version: FINGERPRINT_SCHEMA_VERSION,
        reference_identity: reference_identity.to_string(),
        created_at: clock.stamp(),
        calibration: *cal,
        audit_config: audit_config.redacted(),
        batch_size,
        domains: discovery.domains,
        probes: discovery.probes,
        k_self: calibration.k_self,
        p0: calibration.p0,
        self_test_vector: calibration.self_test_vector,
        self_test_outcomes: calibration.outcomes,
        enrollment: discovery.summary,
    };
    fp.validate()?;
    Ok(fp)
}

/// Full enrollment: Stage I discovery followed by Stage II self calibration
/// against the same reference handle.
pub fn enroll(
    reference: &OracleHandle,
    contrast: Option<&OracleHandle>,
    registry: &DomainRegistry,
    cal: &CalibrationConfig,
    audit_config: &EndpointConfig,
    opts: &EnrollOptions,
) -> Result<Fingerprint, EnrollError> {
    cal.validate()?;
    let discovery = discover(reference, contrast, registry, audit_config, opts)?;
    if discovery.probes.is_empty() {
        return Err(EnrollError::EnrollmentFailed);
    }
    let calibration = self_calibrate(reference, &discovery.probes, &discovery.domains, audit_config, cal, opts.batch_size)?;
    build_fingerprint(reference.identity(), discovery, calibration, cal, audit_config, opts.batch_size, reference.clock())
}

/// Scripted endpoint answering every fingerprint probe with its consensus
/// value, subject to iid per-slot noise.
pub fn scripted_replica(fp: &Fingerprint, identity: impl Into<String>, noise_rate: f64, seed: u64) -> ScriptedEndpoint {
    let answers: HashMap<String, ScriptedAnswer> = fp
        .probes
        .iter()
        .map(|p| {
            let spec = fp.spec(&p.domain_id).expect("validated fingerprint");
            (
                p.prompt.clone(),
                ScriptedAnswer {
                    value: p.consensus_value,
                    rule: spec.match_rule,
                    range: spec.valid_range,
                    flaky: false,
                },
            )
        })
        .collect();
    ScriptedEndpoint::new(identity, answers, noise_rate, seed)
}
