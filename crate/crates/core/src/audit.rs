//! Endpoint audits against a fingerprint, and report assembly.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch::{query_items, BatchItem, SlotOutcome};
use crate::clock::Clock;
use crate::enroll::Fingerprint;
use crate::oracle::{EndpointConfig, OracleError, OracleHandle, TokenUsage};
use crate::stats::{
    binom_tail_pvalue, estimate_pi_known_with, mcnemar_exact, pi_interval_unknown, two_round_null_pvalue,
    CalibrationConfig, KnownPiOptions, MismatchTable, PiEstimate, SeOptions, StatsError,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Minimum fraction of transport-failed slots that aborts an audit.
pub const ABORT_TRANSPORT_FRACTION: f64 = 0.5;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("audit aborted: {failed} of {n} slots failed in transport")]
    AuditAborted { failed: usize, n: usize },
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Same,
    Different,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Same => "SAME",
            Verdict::Different => "DIFFERENT",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn verdict_for(p_value: f64, alpha: f64) -> Verdict {
    if p_value < alpha {
        Verdict::Different
    } else {
        Verdict::Same
    }
}

/// p-value and verdict of the single-round test; a pure function of
/// `(k, N, p0, alpha)`.
pub fn score_once(k: u64, n: u64, p0: f64, alpha: f64) -> Result<(f64, Verdict), StatsError> {
    let p = binom_tail_pvalue(k, n, p0)?;
    Ok((p, verdict_for(p, alpha)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOutcome {
    pub n: u64,
    pub k: u64,
    pub r_disc: f64,
    pub p_value: f64,
    pub verdict: Verdict,
    /// Discrepancy bits `Z_i`, in fingerprint probe order.
    pub per_probe: Vec<bool>,
    /// Raw slot outcomes; transport failures stay visible here.
    pub outcomes: Vec<SlotOutcome>,
    pub transport_failures: u64,
    pub config_used: EndpointConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoRoundOutcome {
    pub w1: u64,
    pub w2: u64,
    pub t: u64,
    pub p_value: f64,
    pub verdict: Verdict,
    pub round2_probe_ids: Vec<String>,
    pub round2_outcomes: Vec<SlotOutcome>,
    pub round_one: AuditOutcome,
}

fn discrepancies(fp: &Fingerprint, outcomes: &[SlotOutcome]) -> Vec<bool> {
    fp.probes
        .iter()
        .zip(outcomes)
        .map(|(p, o)| !o.matches(fp.spec(&p.domain_id).expect("validated fingerprint"), p.consensus_value))
        .collect()
}

fn run_round_one(sus: &OracleHandle, fp: &Fingerprint, cal: &CalibrationConfig) -> Result<AuditOutcome, AuditError> {
    fp.validate().map_err(|e| AuditError::Invalid(e.to_string()))?;
    cal.validate()?;
    let outcomes = query_items(sus, &fp.items(), &fp.audit_config, fp.batch_size)?;
    let n = outcomes.len();
    let failed = outcomes.iter().filter(|o| o.is_transport()).count();
    if failed as f64 > ABORT_TRANSPORT_FRACTION * n as f64 {
        return Err(AuditError::AuditAborted { failed, n });
    }
    let per_probe = discrepancies(fp, &outcomes);
    let k = per_probe.iter().filter(|z| **z).count() as u64;
    let (p_value, verdict) = score_once(k, n as u64, fp.p0, cal.alpha)?;
    Ok(AuditOutcome {
        n: n as u64,
        k,
        r_disc: k as f64 / n as f64,
        p_value,
        verdict,
        per_probe,
        outcomes,
        transport_failures: failed as u64,
        config_used: fp.audit_config.clone(),
    })
}

/// Single-round audit: query every probe once and test the discrepancy
/// count against `Bin(N, p0)`.
pub fn audit_once(sus: &OracleHandle, fp: &Fingerprint, cal: &CalibrationConfig) -> Result<AuditOutcome, AuditError> {
    run_round_one(sus, fp, cal)
}

/// Two-round audit: round-one mismatches are re-queried once each, in
/// single-probe requests under the same configuration.
pub fn audit_two_round(sus: &OracleHandle, fp: &Fingerprint, cal: &CalibrationConfig) -> Result<TwoRoundOutcome, AuditError> {
    let round_one = run_round_one(sus, fp, cal)?;
    let idx: Vec<usize> = (0..fp.probes.len()).filter(|&i| round_one.per_probe[i]).collect();
    let items: Vec<BatchItem> = {
        let all = fp.items();
        idx.iter().map(|&i| all[i]).collect()
    };
    let round2_outcomes = if items.is_empty() {
        Vec::new()
    } else {
        query_items(sus, &items, &fp.audit_config, 1)?
    };
    let w2 = discrepancies_at(fp, &idx, &round2_outcomes);
    let w1 = round_one.k;
    let t = w1 + w2;
    let p_value = two_round_null_pvalue(t, round_one.n, fp.p0)?;
    Ok(TwoRoundOutcome {
        w1,
        w2,
        t,
        p_value,
        verdict: verdict_for(p_value, cal.alpha),
        round2_probe_ids: idx.iter().map(|&i| fp.probes[i].id.clone()).collect(),
        round2_outcomes,
        round_one,
    })
}

fn discrepancies_at(fp: &Fingerprint, idx: &[usize], outcomes: &[SlotOutcome]) -> u64 {
    idx.iter()
        .zip(outcomes)
        .filter(|(&i, o)| {
            let p = &fp.probes[i];
            !o.matches(fp.spec(&p.domain_id).expect("validated fingerprint"), p.consensus_value)
        })
        .count() as u64
}

/// One fresh reference query and one substitute query per probe, each
/// compared with the stored consensus. Failed slots count as mismatches.
pub fn build_mismatch_table(reference: &OracleHandle, sub: &OracleHandle, fp: &Fingerprint) -> Result<MismatchTable, AuditError> {
    let items = fp.items();
    let r = query_items(reference, &items, &fp.audit_config, fp.batch_size)?;
    let s = query_items(sub, &items, &fp.audit_config, fp.batch_size)?;
    let (zr, zs) = (discrepancies(fp, &r), discrepancies(fp, &s));
    Ok(MismatchTable::from_bits(zr.into_iter().zip(zs)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McNemarDiagnostic {
    /// Probes discrepant in the audit but matching in the self-test.
    pub b: u64,
    /// Probes matching in the audit but discrepant in the self-test.
    pub c: u64,
    pub p_value: f64,
}

pub fn mcnemar_diagnostic(self_test_vector: &[bool], per_probe: &[bool]) -> Option<McNemarDiagnostic> {
    if self_test_vector.len() != per_probe.len() || per_probe.is_empty() {
        return None;
    }
    let (mut b, mut c) = (0, 0);
    for (&self_match, &z) in self_test_vector.iter().zip(per_probe) {
        match (z, self_match) {
            (true, true) => b += 1,
            (false, false) => c += 1,
            _ => {}
        }
    }
    Some(McNemarDiagnostic {
        b,
        c,
        p_value: mcnemar_exact(b, c),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolCandidate {
    pub identity: String,
    pub p_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PiSection {
    KnownSubstitute {
        substitute: String,
        table: MismatchTable,
        w1: u64,
        t: u64,
        estimate: PiEstimate,
    },
    CandidatePool {
        candidates: Vec<PoolCandidate>,
        p_r: f64,
        w1: u64,
        n: u64,
        estimate: PiEstimate,
    },
}

/// Routed-fraction estimate with a known substitute whose joint behavior
/// has been measured in `table`.
pub fn estimate_pi_with_substitute(
    substitute: &str,
    table: MismatchTable,
    outcome: &TwoRoundOutcome,
    se_seed: u64,
) -> Result<PiSection, AuditError> {
    let opts = KnownPiOptions {
        w1: Some(outcome.w1),
        se: Some(SeOptions {
            seed: se_seed,
            ..SeOptions::default()
        }),
    };
    let estimate = estimate_pi_known_with(&table, outcome.t, &opts)?;
    Ok(PiSection::KnownSubstitute {
        substitute: substitute.to_string(),
        table,
        w1: outcome.w1,
        t: outcome.t,
        estimate,
    })
}

/// Routed-fraction interval when the substitute is one of `candidates`.
/// The reference rate is the fingerprint's self-test discrepancy rate.
pub fn estimate_pi_with_pool(fp: &Fingerprint, w1: u64, candidates: Vec<PoolCandidate>) -> Result<PiSection, AuditError> {
    if candidates.is_empty() {
        return Err(AuditError::Invalid("candidate pool is empty".into()));
    }
    let n = fp.n() as u64;
    let p_r = fp.k_self as f64 / n as f64;
    let lo = candidates.iter().map(|c| c.p_s).fold(f64::INFINITY, f64::min);
    let hi = candidates.iter().map(|c| c.p_s).fold(f64::NEG_INFINITY, f64::max);
    let estimate = pi_interval_unknown(w1, n, p_r, lo, hi)?;
    Ok(PiSection::CandidatePool {
        candidates,
        p_r,
        w1,
        n,
        estimate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema_version: u32,
    pub reference_identity: String,
    pub fingerprint_hash: String,
    pub suspect_identity: String,
    pub n: u64,
    pub k_self: u64,
    pub p0: f64,
    pub gamma: f64,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub single_round: Option<AuditOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub two_round: Option<TwoRoundOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mcnemar: Option<McNemarDiagnostic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi: Option<PiSection>,
    pub usage: TokenUsage,
    pub created_at: String,
}

pub struct ReportInputs<'a> {
    pub fingerprint: &'a Fingerprint,
    pub suspect_identity: &'a str,
    pub calibration: CalibrationConfig,
    pub single_round: Option<AuditOutcome>,
    pub two_round: Option<TwoRoundOutcome>,
    pub pi: Option<PiSection>,
    pub usage: TokenUsage,
    pub clock: Clock,
}

pub fn assemble_report(inputs: ReportInputs<'_>) -> Result<AuditReport, AuditError> {
    let fp = inputs.fingerprint;
    let per_probe = inputs
        .single_round
        .as_ref()
        .or(inputs.two_round.as_ref().map(|t| &t.round_one))
        .map(|o| o.per_probe.clone())
        .ok_or_else(|| AuditError::Invalid("a report needs at least one audit outcome".into()))?;
    Ok(AuditReport {
        schema_version: REPORT_SCHEMA_VERSION,
        reference_identity: fp.reference_identity.clone(),
        fingerprint_hash: fp.content_hash(),
        suspect_identity: inputs.suspect_identity.to_string(),
        n: fp.n() as u64,
        k_self: fp.k_self,
        p0: fp.p0,
        gamma: fp.calibration.gamma,
        alpha: inputs.calibration.alpha,
        mcnemar: mcnemar_diagnostic(&fp.self_test_vector, &per_probe),
        single_round: inputs.single_round,
        two_round: inputs.two_round,
        pi: inputs.pi,
        usage: inputs.usage,
        created_at: inputs.clock.stamp(),
    })
}

impl AuditReport {
    /// Verdict of the primary test: two-round when present.
    pub fn verdict(&self) -> Verdict {
        match (&self.two_round, &self.single_round) {
            (Some(t), _) => t.verdict,
            (None, Some(o)) => o.verdict,
            (None, None) => Verdict::Same,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# Audit report: {}\n", self.suspect_identity);
        let _ = writeln!(s, "**Verdict: {}**\n", self.verdict());
        let _ = writeln!(s, "| Field | Value |\n|---|---|");
        let _ = writeln!(s, "| Reference | `{}` |", self.reference_identity);
        let _ = writeln!(s, "| Suspect | `{}` |", self.suspect_identity);
        let _ = writeln!(s, "| Fingerprint hash | `{}` |", self.fingerprint_hash);
        let _ = writeln!(s, "| Created | {} |", self.created_at);
        let _ = writeln!(s, "\n## Statistical inputs\n");
        let _ = writeln!(s, "| Symbol | Value |\n|---|---|");
        let _ = writeln!(s, "| N (probes) | {} |", self.n);
        let _ = writeln!(s, "| k_self | {} |", self.k_self);
        let _ = writeln!(s, "| gamma | {} |", self.gamma);
        let _ = writeln!(s, "| p0 = CP upper(k_self, N, gamma) | {} |", self.p0);
        let _ = writeln!(s, "| alpha | {} |", self.alpha);
        if let Some(o) = &self.single_round {
            let _ = writeln!(s, "\n## Single-round audit\n");
            let _ = writeln!(s, "| Quantity | Value |\n|---|---|");
            let _ = writeln!(s, "| k (discrepancies) | {} |", o.k);
            let _ = writeln!(s, "| r_disc = k / N | {} |", o.r_disc);
            let _ = writeln!(s, "| transport failures | {} |", o.transport_failures);
            let _ = writeln!(s, "| p = P(Bin(N, p0) >= k) | {:e} |", o.p_value);
            let _ = writeln!(s, "| verdict | {} |", o.verdict);
        }
        if let Some(t) = &self.two_round {
            let _ = writeln!(s, "\n## Two-round audit\n");
            let _ = writeln!(s, "| Quantity | Value |\n|---|---|");
            let _ = writeln!(s, "| W1 (round-one mismatches) | {} |", t.w1);
            let _ = writeln!(s, "| W2 (repeated mismatches) | {} |", t.w2);
            let _ = writeln!(s, "| T = W1 + W2 | {} |", t.t);
            let _ = writeln!(s, "| p = P(T >= t) under the null | {:e} |", t.p_value);
            let _ = writeln!(s, "| verdict | {} |", t.verdict);
        }
        if let Some(m) = &self.mcnemar {
            let _ = writeln!(s, "\n## McNemar diagnostic (audit vs self-test)\n");
            let _ = writeln!(s, "b/c = {}/{}, exact p = {}", m.b, m.c, m.p_value);
        }
        if let Some(pi) = &self.pi {
            let _ = writeln!(s, "\n## Routed fraction\n");
            let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
            let est = match pi {
                PiSection::KnownSubstitute { substitute, table, w1, t, estimate } => {
                    let _ = writeln!(s, "Known substitute `{substitute}`.\n");
                    let _ = writeln!(
                        s,
                        "Table n00={} n01={} n10={} n11={}; W1={w1}, T={t}.\n",
                        table.n00, table.n01, table.n10, table.n11
                    );
                    estimate
                }
                PiSection::CandidatePool { candidates, p_r, w1, n, estimate } => {
                    let _ = writeln!(s, "Candidate pool (p_R = {p_r}, W1 = {w1}, N = {n}):\n");
                    for c in candidates {
                        let _ = writeln!(s, "- `{}`: p_S = {}", c.identity, c.p_s);
                    }
                    let _ = writeln!(s);
                    estimate
                }
            };
            let _ = writeln!(s, "| Quantity | Value |\n|---|---|");
            let _ = writeln!(s, "| point | {} |", fmt(est.point));
            let _ = writeln!(s, "| se | {} |", fmt(est.se));
            let interval = est.interval.map_or("n/a".to_string(), |(a, b)| format!("[{a:.4}, {b:.4}]"));
            let _ = writeln!(s, "| interval | {interval} |");
            if est.diagnostics.unidentifiable {
                let _ = writeln!(s, "\nThe routed fraction is not identifiable from this table.");
            }
        }
        let _ = writeln!(s, "\n## Usage\n");
        let _ = writeln!(
            s,
            "{} prompt tokens, {} completion tokens ({} total).",
            self.usage.prompt_tokens,
            self.usage.completion_tokens,
            self.usage.total()
        );
        s
    }
}
