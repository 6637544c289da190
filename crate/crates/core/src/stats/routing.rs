//! Routed-fraction estimators for the two-round audit.
//!
//! Under fixed-probability routing with fraction `pi`, a probe of type `ab`
//! mismatches in a round when it is served by the reference and `a = 1`, or
//! by the substitute and `b = 1`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use super::{check_unit_closed, MismatchTable, StatsError};

const ROOT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PiDiagnostics {
    /// Real roots of the moment quadratic, ascending.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub roots: Vec<f64>,
    /// Both roots fell in `[0, 1]`.
    #[serde(default)]
    pub double_root: bool,
    #[serde(default)]
    pub clipped_point: bool,
    #[serde(default)]
    pub clipped_min: bool,
    #[serde(default)]
    pub clipped_max: bool,
    #[serde(default)]
    pub unidentifiable: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PiEstimate {
    pub point: Option<f64>,
    pub interval: Option<(f64, f64)>,
    pub se: Option<f64>,
    pub diagnostics: PiDiagnostics,
}

/// Parametric Monte Carlo settings for the standard error of the point
/// estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeOptions {
    pub replicates: usize,
    pub seed: u64,
}

impl Default for SeOptions {
    fn default() -> Self {
        Self {
            replicates: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KnownPiOptions {
    /// Observed round-one mismatch count, used to choose between two
    /// admissible roots.
    pub w1: Option<u64>,
    pub se: Option<SeOptions>,
}

/// `E[T]` at routed fraction `pi`.
pub fn expected_t(table: &MismatchTable, pi: f64) -> f64 {
    let (n01, n10, n11) = (table.n01 as f64, table.n10 as f64, table.n11 as f64);
    n01 * pi * (1.0 + pi) + n10 * (1.0 - pi) * (2.0 - pi) + 2.0 * n11
}

/// Simulate one two-round audit of `table` at routed fraction `pi`; returns
/// `(W1, W2)`. Routing is redrawn for every query.
pub fn simulate_two_round<R: Rng + ?Sized>(table: &MismatchTable, pi: f64, rng: &mut R) -> (u64, u64) {
    let mut draw = |n: u64, p: f64| -> u64 {
        if n == 0 || p <= 0.0 {
            0
        } else if p >= 1.0 {
            n
        } else {
            Binomial::new(n, p).expect("valid binomial").sample(rng)
        }
    };
    let sub1 = draw(table.n01, pi);
    let ref1 = draw(table.n10, 1.0 - pi);
    let sub2 = draw(sub1, pi);
    let ref2 = draw(ref1, 1.0 - pi);
    (sub1 + ref1 + table.n11, sub2 + ref2 + table.n11)
}

fn first_round_moment(table: &MismatchTable, w1: u64) -> Option<f64> {
    let slope = table.n01 as f64 - table.n10 as f64;
    (slope != 0.0).then(|| (w1 as f64 - (table.n10 + table.n11) as f64) / slope)
}

/// Moment estimate of the routed fraction when the substitute's per-probe
/// behavior is known, from the observed two-round statistic.
pub fn estimate_pi_known(table: &MismatchTable, t_obs: u64) -> Result<PiEstimate, StatsError> {
    estimate_pi_known_with(table, t_obs, &KnownPiOptions::default())
}

pub fn estimate_pi_known_with(
    table: &MismatchTable,
    t_obs: u64,
    opts: &KnownPiOptions,
) -> Result<PiEstimate, StatsError> {
    let n = table.n();
    if n == 0 {
        return Err(StatsError::InvalidArgument("mismatch table is empty".into()));
    }
    if t_obs > 2 * n {
        return Err(StatsError::InvalidArgument(format!("need T <= 2N, got T={t_obs}, N={n}")));
    }
    if opts.w1.is_some_and(|w| w > n) {
        return Err(StatsError::InvalidArgument("W1 exceeds N".into()));
    }
    let mut est = solve_point(table, t_obs, opts.w1);
    if let (Some(point), Some(se)) = (est.point, opts.se) {
        est.se = Some(monte_carlo_se(table, point, se));
    }
    Ok(est)
}

fn solve_point(table: &MismatchTable, t_obs: u64, w1: Option<u64>) -> PiEstimate {
    let (n01, n10, n11) = (table.n01 as f64, table.n10 as f64, table.n11 as f64);
    let a = n01 + n10;
    let b = n01 - 3.0 * n10;
    let c = 2.0 * n10 + 2.0 * n11 - t_obs as f64;
    let mut est = PiEstimate::default();
    if a == 0.0 {
        est.diagnostics.unidentifiable = true;
        return est;
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        let vertex = -b / (2.0 * a);
        est.point = Some(vertex.clamp(0.0, 1.0));
        est.diagnostics.clipped_point = true;
        return est;
    }
    let sq = disc.sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    let mut roots = if q == 0.0 {
        vec![0.0]
    } else {
        vec![q / a, c / q]
    };
    roots.sort_by(f64::total_cmp);
    roots.dedup();
    let inside: Vec<f64> = roots
        .iter()
        .copied()
        .filter(|r| (-ROOT_SLACK..=1.0 + ROOT_SLACK).contains(r))
        .map(|r| r.clamp(0.0, 1.0))
        .collect();
    est.diagnostics.roots = roots.clone();
    est.point = Some(match inside.as_slice() {
        [] => {
            let dist = |r: f64| if r < 0.0 { -r } else { r - 1.0 };
            est.diagnostics.clipped_point = true;
            roots
                .iter()
                .copied()
                .min_by(|x, y| dist(*x).total_cmp(&dist(*y)))
                .expect("at least one root")
                .clamp(0.0, 1.0)
        }
        [r] => *r,
        [lo, hi, ..] => {
            est.diagnostics.double_root = true;
            match w1.and_then(|w| first_round_moment(table, w)) {
                Some(anchor) if (hi - anchor).abs() < (lo - anchor).abs() => *hi,
                _ => *lo,
            }
        }
    });
    est
}

fn monte_carlo_se(table: &MismatchTable, pi: f64, opts: SeOptions) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let draws: Vec<f64> = (0..opts.replicates)
        .filter_map(|_| {
            let (w1, w2) = simulate_two_round(table, pi, &mut rng);
            solve_point(table, w1 + w2, Some(w1)).point
        })
        .collect();
    if draws.len() < 2 {
        return 0.0;
    }
    let m = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / m;
    (draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
}

/// Routed-fraction interval when the substitute is only known to lie in a
/// candidate pool with substitute mismatch rates in `[ps_min, ps_max]`.
pub fn pi_interval_unknown(
    w1: u64,
    n: u64,
    p_r: f64,
    ps_min: f64,
    ps_max: f64,
) -> Result<PiEstimate, StatsError> {
    if n == 0 || w1 > n {
        return Err(StatsError::InvalidArgument(format!("need 0 <= W1 <= N, got W1={w1}, N={n}")));
    }
    check_unit_closed("pR", p_r)?;
    check_unit_closed("pS_min", ps_min)?;
    check_unit_closed("pS_max", ps_max)?;
    if ps_min <= p_r {
        return Err(StatsError::IndistinguishablePool { p_r, ps_min });
    }
    if ps_max < ps_min {
        return Err(StatsError::InvalidArgument(format!(
            "pS_max {ps_max} is below pS_min {ps_min}"
        )));
    }
    let excess = w1 as f64 / n as f64 - p_r;
    let raw_min = excess / (ps_max - p_r);
    let raw_max = excess / (ps_min - p_r);
    let lo = raw_min.clamp(0.0, 1.0);
    let hi = raw_max.clamp(0.0, 1.0);
    Ok(PiEstimate {
        interval: Some((lo, hi)),
        diagnostics: PiDiagnostics {
            clipped_min: lo != raw_min,
            clipped_max: hi != raw_max,
            ..PiDiagnostics::default()
        },
        ..PiEstimate::default()
    })
}
