//! Exact statistical kernels for calibration and auditing.

mod beta;
mod binomial;
mod mcnemar;
mod routing;
mod two_round;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use beta::{cp_upper, ln_gamma, regularized_incomplete_beta};
pub use binomial::{binom_tail_pvalue, binomial_pmf, binomial_pmf_vec};
pub use mcnemar::mcnemar_exact;
pub use routing::{
    estimate_pi_known, estimate_pi_known_with, expected_t, pi_interval_unknown, simulate_two_round,
    KnownPiOptions, PiDiagnostics, PiEstimate, SeOptions,
};
pub use two_round::{two_round_null_pvalue, TwoRoundNull};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("candidate pool indistinguishable from reference (pS_min {ps_min} <= pR {p_r})")]
    IndistinguishablePool { p_r: f64, ps_min: f64 },
}

pub(crate) fn check_unit_open(name: &str, v: f64) -> Result<(), StatsError> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(StatsError::InvalidArgument(format!("{name} must lie in (0, 1), got {v}")))
    }
}

pub(crate) fn check_unit_closed(name: &str, v: f64) -> Result<(), StatsError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(StatsError::InvalidArgument(format!("{name} must lie in [0, 1], got {v}")))
    }
}

/// Confidence level of the self-calibration bound and significance level of
/// the audit tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            alpha: 0.05,
        }
    }
}

impl CalibrationConfig {
    pub fn new(gamma: f64, alpha: f64) -> Result<Self, StatsError> {
        let c = Self { gamma, alpha };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), StatsError> {
        check_unit_open("gamma", self.gamma)?;
        check_unit_open("alpha", self.alpha)
    }
}

/// Joint per-probe mismatch counts. The first index is the fresh reference
/// mismatch bit, the second the substitute mismatch bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MismatchTable {
    pub n00: u64,
    pub n01: u64,
    pub n10: u64,
    pub n11: u64,
}

impl MismatchTable {
    pub fn new(n00: u64, n01: u64, n10: u64, n11: u64) -> Result<Self, StatsError> {
        let t = Self { n00, n01, n10, n11 };
        if t.n() == 0 {
            return Err(StatsError::InvalidArgument("mismatch table is empty".into()));
        }
        Ok(t)
    }

    /// Accumulate `(reference_mismatch, substitute_mismatch)` bits.
    pub fn from_bits(bits: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut t = Self::default();
        for bit in bits {
            match bit {
                (false, false) => t.n00 += 1,
                (false, true) => t.n01 += 1,
                (true, false) => t.n10 += 1,
                (true, true) => t.n11 += 1,
            }
        }
        t
    }

    pub fn n(&self) -> u64 {
        self.n00 + self.n01 + self.n10 + self.n11
    }

    /// Fresh reference mismatch rate.
    pub fn p_r(&self) -> f64 {
        (self.n10 + self.n11) as f64 / self.n() as f64
    }

    /// Substitute mismatch rate.
    pub fn p_s(&self) -> f64 {
        (self.n01 + self.n11) as f64 / self.n() as f64
    }
}
