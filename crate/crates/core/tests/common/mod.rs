//! Independent reference computations shared by the integration suites.
//! None of these call into the library's statistical kernels.
#![allow(dead_code)]

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

/// `p` as an exact dyadic rational `a / 2^e`.
fn dyadic(p: f64) -> (BigUint, u32) {
    assert!(p > 0.0 && p < 1.0);
    let bits = p.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    let (mant, e2) = if exp == 0 { (frac, -1074) } else { (frac | (1u64 << 52), exp - 1075) };
    let tz = mant.trailing_zeros();
    (BigUint::from(mant >> tz), (-(e2 + tz as i32)) as u32)
}

fn ldexp(mut v: f64, mut e: i64) -> f64 {
    while e > 1000 {
        v *= 2f64.powi(1000);
        e -= 1000;
    }
    while e < -1000 {
        v *= 2f64.powi(-1000);
        e += 1000;
    }
    v * 2f64.powi(e as i32)
}

/// `num / 2^shift` correctly rounded to about 64 significant bits.
fn ratio_to_f64(num: &BigUint, shift: u64) -> f64 {
    if num.is_zero() {
        return 0.0;
    }
    let bits = num.bits();
    let drop = bits.saturating_sub(64);
    let top = (num >> drop).to_u64().unwrap() as f64;
    ldexp(top, drop as i64 - shift as i64)
}

/// Exact `P(X >= k)` for `X ~ Binomial(n, p)` in big-integer arithmetic.
pub fn exact_binom_tail(k: u64, n: u64, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let (a, e) = dyadic(p);
    let b = (BigUint::one() << e) - &a;
    // S_i = C(n,i) b^(n-i) + a S_{i+1}, with B_i = C(n,i) b^(n-i) built from
    // B_{i+1} by exact small-integer steps.
    let mut big_b = BigUint::one();
    let mut s = BigUint::one();
    for i in (k..n).rev() {
        big_b = big_b * &b * BigUint::from(i + 1) / BigUint::from(n - i);
        s = &big_b + &a * s;
    }
    let num = s * a.pow(k as u32);
    ratio_to_f64(&num, e as u64 * n)
}

/// Lower binomial CDF in log space from a log-factorial table.
pub fn log_space_binom_cdf(k: u64, n: u64, p: f64) -> f64 {
    if p <= 0.0 {
        return 1.0;
    }
    if p >= 1.0 {
        return if k >= n { 1.0 } else { 0.0 };
    }
    let mut lf = vec![0.0f64; n as usize + 1];
    for i in 1..=n as usize {
        lf[i] = lf[i - 1] + (i as f64).ln();
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let logs: Vec<f64> = (0..=k.min(n))
        .map(|i| {
            let i = i as usize;
            lf[n as usize] - lf[i] - lf[n as usize - i] + i as f64 * lp + (n as usize - i) as f64 * lq
        })
        .collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (m.exp() * logs.iter().map(|l| (l - m).exp()).sum::<f64>()).min(1.0)
}

/// Largest `p` with `P(X <= k; n, p) >= 1 - gamma`, by bisection.
pub fn cp_bisection_oracle(k: u64, n: u64, gamma: f64) -> f64 {
    if k == n {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if log_space_binom_cdf(k, n, mid) >= 1.0 - gamma {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(serde::Deserialize)]
pub struct Golden {
    pub cp_upper: Vec<GoldenCp>,
    pub binom_tail: Vec<GoldenTail>,
    pub mcnemar: Vec<GoldenMcNemar>,
}

#[derive(serde::Deserialize)]
pub struct GoldenCp {
    pub k: u64,
    pub n: u64,
    pub gamma: f64,
    pub value: f64,
}

#[derive(serde::Deserialize)]
pub struct GoldenTail {
    pub k: u64,
    pub n: u64,
    pub p0: f64,
    pub value: f64,
}

#[derive(serde::Deserialize)]
pub struct GoldenMcNemar {
    pub b: u64,
    pub c: u64,
    pub value: f64,
}

pub fn golden() -> Golden {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/golden_stats.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Deterministic 200-point `(k, N, p0)` grid with N <= 1000 whose tails are
/// representable in double precision.
pub fn tail_grid() -> Vec<(u64, u64, f64)> {
    let ns = [1u64, 2, 7, 20, 50, 100, 250, 500, 750, 1000];
    let ps = [0.001, 0.02, 0.05, 0.0625, 0.13, 0.3, 0.5, 0.77, 0.95, 0.999];
    let zs = [-2.0, 0.0, 1.0, 3.0, 6.0];
    let mut out = Vec::new();
    'outer: for (i, &n) in ns.iter().enumerate() {
        for (j, &p) in ps.iter().enumerate() {
            for (l, &z) in zs.iter().enumerate() {
                if (i + j + l) % 5 > 1 {
                    continue;
                }
                let mean = n as f64 * p;
                let sd = (mean * (1.0 - p)).sqrt();
                let k = (mean + z * sd).round().clamp(0.0, n as f64) as u64;
                out.push((k, n, p));
                if out.len() == 200 {
                    break 'outer;
                }
            }
        }
    }
    let mut extra = 0u64;
    while out.len() < 200 {
        let n = 1 + (extra * 37) % 1000;
        let p = ps[(extra % ps.len() as u64) as usize];
        let k = ((n as f64 * p).ceil() as u64 + extra % 4).min(n);
        out.push((k, n, p));
        extra += 1;
    }
    out
}
