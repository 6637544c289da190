//! Monte Carlo power and estimator studies on per-probe behavior tables.
//!
//! Probes carry deterministic types `ab` from a [`MismatchTable`]: `a` is the
//! reference mismatch bit and `b` the substitute mismatch bit. A simulated
//! audit routes each probe to the substitute with probability `pi`.

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audit::{verdict_for, Verdict};
use crate::stats::{
    binom_tail_pvalue, cp_upper, estimate_pi_known_with, pi_interval_unknown, simulate_two_round, KnownPiOptions,
    MismatchTable, StatsError, TwoRoundNull,
};

/// Confidence level used to turn the reference rate into a simulation p0.
pub const SIMULATION_GAMMA: f64 = 0.99;
pub const DEFAULT_TRIALS: usize = 10_000;

const STREAM_AUDIT: u64 = 0x6175_6469_74;
const STREAM_ESTIMATE: u64 = 0x6573_7469_6d;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairProfile {
    pub label: String,
    pub table: MismatchTable,
}

/// Profile as written in a file: either an explicit table or a summary row
/// to reconstruct one from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileSpec {
    Table { label: String, table: MismatchTable },
    Row { label: String, n: u64, n01: u64, p_s: f64, p_r: f64 },
}

impl ProfileSpec {
    pub fn into_profile(self) -> Result<PairProfile, StatsError> {
        match self {
            ProfileSpec::Table { label, table } => PairProfile::new(label, table),
            ProfileSpec::Row { label, n, n01, p_s, p_r } => PairProfile::from_row(label, n, n01, p_s, p_r),
        }
    }
}

impl PairProfile {
    pub fn new(label: impl Into<String>, table: MismatchTable) -> Result<Self, StatsError> {
        if table.n() == 0 {
            return Err(StatsError::InvalidArgument("profile table is empty".into()));
        }
        Ok(Self {
            label: label.into(),
            table,
        })
    }

    /// Reconstruct deterministic types from `(N, n01, pS, pR)`:
    /// `n11 = round(pS N) - n01`, `n10 = round(pR N) - n11`, both clamped at
    /// zero, and the remainder is `n00`.
    pub fn from_row(label: impl Into<String>, n: u64, n01: u64, p_s: f64, p_r: f64) -> Result<Self, StatsError> {
        for (name, v) in [("pS", p_s), ("pR", p_r)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(StatsError::InvalidArgument(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        let nf = n as f64;
        let n11 = ((p_s * nf).round() as i64 - n01 as i64).max(0) as u64;
        let n10 = ((p_r * nf).round() as i64 - n11 as i64).max(0) as u64;
        let used = n01 + n11 + n10;
        if n == 0 || used > n {
            return Err(StatsError::InvalidArgument(format!(
                "row N={n}, n01={n01}, pS={p_s}, pR={p_r} does not fit in N probes"
            )));
        }
        Self::new(
            label,
            MismatchTable {
                n00: n - used,
                n01,
                n10,
                n11,
            },
        )
    }

    pub fn n(&self) -> u64 {
        self.table.n()
    }

    pub fn p_r(&self) -> f64 {
        self.table.p_r()
    }

    pub fn p_s(&self) -> f64 {
        self.table.p_s()
    }

    /// `cp_upper(round(pR N), N, 0.99)`, mirroring enrollment.
    pub fn simulation_p0(&self) -> f64 {
        let k = (self.p_r() * self.n() as f64).round() as u64;
        cp_upper(k, self.n(), SIMULATION_GAMMA).expect("valid profile")
    }

    /// Four candidate substitute rates bracketing the profile's own pS.
    pub fn default_pool(&self) -> Vec<f64> {
        let p = self.p_s();
        vec![(p - 0.05).max(self.p_r() + 1e-3), p - 0.02, p, (p + 0.05).min(1.0)]
    }
}

/// Precomputed null survival functions for one `(N, p0)`.
#[derive(Debug, Clone)]
pub struct NullTables {
    pub once: Vec<f64>,
    pub two_round: TwoRoundNull,
}

impl NullTables {
    pub fn new(n: u64, p0: f64) -> Result<Self, StatsError> {
        let once = (0..=n).map(|k| binom_tail_pvalue(k, n, p0)).collect::<Result<_, _>>()?;
        Ok(Self {
            once,
            two_round: TwoRoundNull::new(n, p0)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatedAudit {
    pub w1: u64,
    pub w2: u64,
    pub p_value: f64,
    pub verdict: Verdict,
}

/// One simulated audit with routing fraction `pi`.
pub fn simulate_audit<R: Rng + ?Sized>(
    profile: &PairProfile,
    pi: f64,
    null: &NullTables,
    two_round: bool,
    alpha: f64,
    rng: &mut R,
) -> SimulatedAudit {
    let (w1, w2) = simulate_two_round(&profile.table, pi, rng);
    let (w2, p_value) = if two_round {
        (w2, null.two_round.pvalue(w1 + w2))
    } else {
        (0, null.once[w1 as usize])
    };
    SimulatedAudit {
        w1,
        w2,
        p_value,
        verdict: verdict_for(p_value, alpha),
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// RNG for one trial, a pure function of `(seed, stream, grid index, trial)`.
pub fn trial_rng(seed: u64, stream: u64, grid_index: usize, trial: usize) -> ChaCha8Rng {
    let s = splitmix(splitmix(splitmix(seed ^ stream) ^ grid_index as u64) ^ trial as u64);
    ChaCha8Rng::seed_from_u64(s)
}

/// Evaluate `f` for every grid index on a scoped thread pool; output order
/// follows the grid.
fn par_grid<T: Send>(len: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(len.max(1));
    let mut out: Vec<Option<T>> = (0..len).map(|_| None).collect();
    std::thread::scope(|s| {
        let chunk_len = len.div_ceil(workers).max(1);
        for (c, slot) in out.chunks_mut(chunk_len).enumerate() {
            let f = &f;
            s.spawn(move || {
                for (j, o) in slot.iter_mut().enumerate() {
                    *o = Some(f(c * chunk_len + j));
                }
            });
        }
    });
    out.into_iter().map(|o| o.expect("filled")).collect()
}

/// `{0.05, 0.10, ..., 1.00}`.
pub fn default_mdr_grid() -> Vec<f64> {
    (1..=20).map(|i| i as f64 / 20.0).collect()
}

/// `{0.05, 0.10, ..., 0.95}`.
pub fn default_estimator_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 / 20.0).collect()
}

pub fn validate_grid(grid: &[f64]) -> Result<(), StatsError> {
    if grid.is_empty() {
        return Err(StatsError::InvalidArgument("grid is empty".into()));
    }
    if grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(StatsError::InvalidArgument("grid values must lie in [0, 1]".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(StatsError::InvalidArgument("grid must be strictly ascending".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerResult {
    pub label: String,
    pub two_round: bool,
    pub p0: f64,
    pub alpha: f64,
    pub grid: Vec<f64>,
    pub tpr: Vec<f64>,
    pub mdr_65: Option<f64>,
    pub mdr_80: Option<f64>,
    pub mdr_95: Option<f64>,
    pub trials: usize,
    pub seed: u64,
}

/// Smallest grid value whose TPR reaches `level`.
pub fn mdr(grid: &[f64], tpr: &[f64], level: f64) -> Option<f64> {
    grid.iter().zip(tpr).find(|(_, t)| **t >= level).map(|(g, _)| *g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerOptions {
    pub trials: usize,
    pub seed: u64,
    pub alpha: f64,
    pub two_round: bool,
}

impl Default for PowerOptions {
    fn default() -> Self {
        Self {
            trials: DEFAULT_TRIALS,
            seed: 0,
            alpha: 0.05,
            two_round: true,
        }
    }
}

fn check_trials(trials: usize) -> Result<(), StatsError> {
    if trials == 0 {
        return Err(StatsError::InvalidArgument("trials must be at least 1".into()));
    }
    Ok(())
}

/// TPR per grid point and MDR thresholds.
pub fn mdr_curve(profile: &PairProfile, p0: f64, grid: &[f64], opts: &PowerOptions) -> Result<PowerResult, StatsError> {
    validate_grid(grid)?;
    check_trials(opts.trials)?;
    let null = NullTables::new(profile.n(), p0)?;
    let tpr = par_grid(grid.len(), |g| {
        let hits = (0..opts.trials)
            .filter(|&t| {
                let mut rng = trial_rng(opts.seed, STREAM_AUDIT, g, t);
                simulate_audit(profile, grid[g], &null, opts.two_round, opts.alpha, &mut rng).verdict == Verdict::Different
            })
            .count();
        hits as f64 / opts.trials as f64
    });
    Ok(PowerResult {
        label: profile.label.clone(),
        two_round: opts.two_round,
        p0,
        alpha: opts.alpha,
        mdr_65: mdr(grid, &tpr, 0.65),
        mdr_80: mdr(grid, &tpr, 0.80),
        mdr_95: mdr(grid, &tpr, 0.95),
        grid: grid.to_vec(),
        tpr,
        trials: opts.trials,
        seed: opts.seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorPoint {
    pub pi: f64,
    /// Scenario A mean of `pi_hat - pi` over identifiable trials.
    pub bias: Option<f64>,
    /// Scenario A sample standard deviation of `pi_hat`.
    pub se: Option<f64>,
    /// Share of trials excluded as unidentifiable.
    pub exclusion_rate: f64,
    /// Scenario B share of intervals containing `pi`, when a pool is given.
    pub coverage: Option<f64>,
}

/// Scenario A (known substitute) and optionally Scenario B (candidate pool)
/// over a grid of true routing fractions.
pub fn estimator_sweep(
    profile: &PairProfile,
    grid: &[f64],
    pool: Option<&[f64]>,
    trials: usize,
    seed: u64,
) -> Result<Vec<EstimatorPoint>, StatsError> {
    validate_grid(grid)?;
    check_trials(trials)?;
    let bounds = match pool {
        Some(p) if p.is_empty() => return Err(StatsError::InvalidArgument("candidate pool is empty".into())),
        Some(p) => {
            let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            // Fails early on an indistinguishable pool.
            pi_interval_unknown(0, profile.n(), profile.p_r(), lo, hi)?;
            Some((lo, hi))
        }
        None => None,
    };
    let (n, p_r) = (profile.n(), profile.p_r());
    par_grid(grid.len(), |g| {
        let pi = grid[g];
        let (mut sum, mut sum_sq, mut used, mut covered) = (0.0, 0.0, 0usize, 0usize);
        for t in 0..trials {
            let mut rng = trial_rng(seed, STREAM_ESTIMATE, g, t);
            let (w1, w2) = simulate_two_round(&profile.table, pi, &mut rng);
            let opts = KnownPiOptions { w1: Some(w1), se: None };
            if let Some(p) = estimate_pi_known_with(&profile.table, w1 + w2, &opts)?.point {
                sum += p;
                sum_sq += p * p;
                used += 1;
            }
            if let Some((lo, hi)) = bounds {
                let (a, b) = pi_interval_unknown(w1, n, p_r, lo, hi)?.interval.expect("interval");
                if a - 1e-12 <= pi && pi <= b + 1e-12 {
                    covered += 1;
                }
            }
        }
        let mean = (used > 0).then(|| sum / used as f64);
        let se = (used > 1).then(|| {
            let m = sum / used as f64;
            ((sum_sq - used as f64 * m * m) / (used as f64 - 1.0)).max(0.0).sqrt()
        });
        Ok(EstimatorPoint {
            pi,
            bias: mean.map(|m| m - pi),
            se,
            exclusion_rate: (trials - used) as f64 / trials as f64,
            coverage: bounds.map(|_| covered as f64 / trials as f64),
        })
    })
    .into_iter()
    .collect()
}

/// CSV with columns `pi,tpr,bias,se,coverage`; absent values are empty.
pub fn power_csv(power: &PowerResult, estimates: &[EstimatorPoint]) -> String {
    let mut s = String::from("pi,tpr,bias,se,coverage\n");
    let cell = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
    for (i, pi) in power.grid.iter().enumerate() {
        let e = estimates.iter().find(|e| (e.pi - pi).abs() < 1e-12);
        let _ = writeln!(
            s,
            "{pi:.2},{},{},{},{}",
            cell(power.tpr.get(i).copied()),
            cell(e.and_then(|e| e.bias)),
            cell(e.and_then(|e| e.se)),
            cell(e.and_then(|e| e.coverage)),
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opus() -> PairProfile {
        PairProfile::from_row("opus-kimi", 667, 152, 0.259, 0.043).unwrap()
    }

    #[test]
    fn reconstruction_matches_hand_counts() {
        let t = opus().table;
        assert_eq!((t.n01, t.n11, t.n10, t.n00), (152, 21, 8, 486));
        let t = PairProfile::from_row("sonnet-glm", 224, 33, 0.161, 0.013).unwrap().table;
        assert_eq!((t.n01, t.n11, t.n10, t.n00), (33, 3, 0, 188));
        assert!(PairProfile::from_row("bad", 10, 9, 0.9, 0.9).is_err());
    }

    #[test]
    fn simulation_p0_uses_rounded_reference_count() {
        let p = opus();
        assert_eq!(p.simulation_p0(), cp_upper(29, 667, 0.99).unwrap());
    }

    #[test]
    fn extremes_of_routing() {
        let p = opus();
        let null = NullTables::new(p.n(), p.simulation_p0()).unwrap();
        let mut rng = trial_rng(1, 0, 0, 0);
        for _ in 0..50 {
            assert_eq!(simulate_audit(&p, 0.0, &null, false, 0.05, &mut rng).w1, 29);
            assert_eq!(simulate_audit(&p, 1.0, &null, false, 0.05, &mut rng).w1, 173);
        }
        let clean = PairProfile::new("clean", MismatchTable { n00: 300, n01: 20, n10: 0, n11: 0 }).unwrap();
        let null = NullTables::new(300, 0.015).unwrap();
        for _ in 0..50 {
            let s = simulate_audit(&clean, 0.0, &null, true, 0.05, &mut rng);
            assert_eq!((s.w1, s.verdict), (0, Verdict::Same));
        }
    }

    #[test]
    fn nothing_to_detect_stays_at_fpr() {
        let p = PairProfile::new("flat", MismatchTable { n00: 290, n01: 0, n10: 0, n11: 10 }).unwrap();
        let r = mdr_curve(&p, p.simulation_p0(), &default_mdr_grid(), &PowerOptions { trials: 1000, ..Default::default() }).unwrap();
        assert!(r.tpr.iter().all(|&t| t <= 0.05), "{:?}", r.tpr);
        assert_eq!(r.mdr_95, None);
    }

    #[test]
    fn curve_is_reproducible_and_monotone() {
        let p = PairProfile::from_row("sonnet-glm", 224, 33, 0.161, 0.013).unwrap();
        let opts = PowerOptions { trials: 2000, seed: 5, ..Default::default() };
        let a = mdr_curve(&p, p.simulation_p0(), &default_mdr_grid(), &opts).unwrap();
        let b = mdr_curve(&p, p.simulation_p0(), &default_mdr_grid(), &opts).unwrap();
        assert_eq!(a, b);
        let m = opts.trials as f64;
        for w in a.tpr.windows(2) {
            let slack = 3.0 * ((w[0] * (1.0 - w[0]) + w[1] * (1.0 - w[1])) / m).sqrt() + 1e-9;
            assert!(w[1] + slack >= w[0], "{:?}", a.tpr);
        }
    }

    #[test]
    fn zero_trials_is_an_error() {
        let p = opus();
        let opts = PowerOptions { trials: 0, ..Default::default() };
        assert!(mdr_curve(&p, 0.06, &default_mdr_grid(), &opts).is_err());
        assert!(estimator_sweep(&p, &[0.5], None, 0, 0).is_err());
    }

    #[test]
    fn estimator_is_consistent() {
        let p = opus();
        let trials = 2000;
        let pts = estimator_sweep(&p, &[0.2, 0.6], Some(&p.default_pool()), trials, 3).unwrap();
        for e in &pts {
            let (bias, se) = (e.bias.unwrap(), e.se.unwrap());
            assert!(bias.abs() <= 3.0 * se / (trials as f64).sqrt() + 0.005, "{e:?}");
            assert!(e.coverage.unwrap() > 0.0);
            assert_eq!(e.exclusion_rate, 0.0);
        }
    }

    #[test]
    fn csv_layout() {
        let p = opus();
        let opts = PowerOptions { trials: 200, ..Default::default() };
        let grid = [0.05, 0.5];
        let r = mdr_curve(&p, p.simulation_p0(), &grid, &opts).unwrap();
        let e = estimator_sweep(&p, &grid, None, 200, 0).unwrap();
        let csv = power_csv(&r, &e);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "pi,tpr,bias,se,coverage");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0.05,") && lines[1].ends_with(','));
    }
}
