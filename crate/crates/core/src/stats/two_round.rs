//! Exact null law of the two-round statistic `T = W1 + W2`, where
//! `W1 ~ Binomial(N, p0)` and `W2 | W1 = w ~ Binomial(w, p0)`.

use serde::{Deserialize, Serialize};

use super::{binomial_pmf_vec, check_unit_closed, StatsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoRoundNull {
    pub n: u64,
    pub p0: f64,
    /// `pmf[t] = P(T = t)` for `t` in `0..=2N`.
    pub pmf: Vec<f64>,
    /// `sf[t] = P(T >= t)` for `t` in `0..=2N + 1`.
    pub sf: Vec<f64>,
}

impl TwoRoundNull {
    pub fn new(n: u64, p0: f64) -> Result<Self, StatsError> {
        if n == 0 {
            return Err(StatsError::InvalidArgument("N must be at least 1".into()));
        }
        check_unit_closed("p0", p0)?;
        let first = binomial_pmf_vec(n, p0);
        let mut pmf = vec![0.0; 2 * n as usize + 1];
        for (w, &pw) in first.iter().enumerate() {
            if pw == 0.0 {
                continue;
            }
            for (v, &pv) in binomial_pmf_vec(w as u64, p0).iter().enumerate() {
                pmf[w + v] += pw * pv;
            }
        }
        let mut sf = vec![0.0; pmf.len() + 1];
        for t in (0..pmf.len()).rev() {
            sf[t] = sf[t + 1] + pmf[t];
        }
        for s in &mut sf {
            *s = s.min(1.0);
        }
        sf[0] = 1.0;
        Ok(Self { n, p0, pmf, sf })
    }

    /// `P(T >= t)`.
    pub fn pvalue(&self, t_obs: u64) -> f64 {
        self.sf.get(t_obs as usize).copied().unwrap_or(0.0)
    }

    /// Smallest `t` with `P(T >= t) < alpha`.
    pub fn cutoff(&self, alpha: f64) -> u64 {
        self.sf.iter().position(|&s| s < alpha).unwrap_or(self.sf.len()) as u64
    }

    pub fn mean(&self) -> f64 {
        self.pmf.iter().enumerate().map(|(t, p)| t as f64 * p).sum()
    }
}

/// `P(T >= t_obs)` under the two-round null.
pub fn two_round_null_pvalue(t_obs: u64, n: u64, p0: f64) -> Result<f64, StatsError> {
    if t_obs > 2 * n {
        return Err(StatsError::InvalidArgument(format!(
            "need T <= 2N, got T={t_obs}, N={n}"
        )));
    }
    Ok(TwoRoundNull::new(n, p0)?.pvalue(t_obs))
}
