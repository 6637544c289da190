//! Binomial probabilities without logarithms: the largest term of interest is
//! built as a scaled product and every other term follows by exact ratios.

use super::{check_unit_closed, StatsError};

const CHUNK: i32 = 512;

/// A positive float with an extra exponent in units of `2^CHUNK`.
#[derive(Clone, Copy)]
struct Scaled {
    mant: f64,
    exp: i32,
}

impl Scaled {
    fn one() -> Self {
        Self { mant: 1.0, exp: 0 }
    }

    fn mul(&mut self, x: f64) {
        self.mant *= x;
        let big = 2f64.powi(CHUNK);
        while self.mant > big {
            self.mant /= big;
            self.exp += 1;
        }
        while self.mant != 0.0 && self.mant < 1.0 {
            self.mant *= big;
            self.exp -= 1;
        }
    }

    fn to_f64(self) -> f64 {
        let mut v = self.mant;
        let step = 2f64.powi(CHUNK);
        for _ in 0..self.exp.unsigned_abs() {
            v = if self.exp > 0 { v * step } else { v / step };
            if v == 0.0 || v.is_infinite() {
                break;
            }
        }
        v
    }
}

/// `C(n, k) p^k (1-p)^(n-k)` in scaled form, for `0 < p < 1`.
fn scaled_term(k: u64, n: u64, p: f64) -> Scaled {
    let q = 1.0 - p;
    let mut s = Scaled::one();
    for j in 1..=k {
        s.mul((n - k + j) as f64 / j as f64);
    }
    for _ in 0..k {
        s.mul(p);
    }
    for _ in 0..n - k {
        s.mul(q);
    }
    s
}

fn mode(n: u64, p: f64) -> u64 {
    (((n + 1) as f64 * p).floor() as u64).min(n)
}

/// `P(X = k)` for `X ~ Binomial(n, p)`.
pub fn binomial_pmf(k: u64, n: u64, p: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    if p <= 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p >= 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    scaled_term(k, n, p).to_f64()
}

/// Full probability mass vector of `Binomial(n, p)`, indices `0..=n`.
pub fn binomial_pmf_vec(n: u64, p: f64) -> Vec<f64> {
    let len = n as usize + 1;
    let mut out = vec![0.0; len];
    if p <= 0.0 {
        out[0] = 1.0;
        return out;
    }
    if p >= 1.0 {
        out[len - 1] = 1.0;
        return out;
    }
    let m = mode(n, p);
    let odds = p / (1.0 - p);
    let anchor = scaled_term(m, n, p).to_f64();
    out[m as usize] = anchor;
    let mut t = anchor;
    for i in m..n {
        t *= (n - i) as f64 / (i + 1) as f64 * odds;
        if t == 0.0 {
            break;
        }
        out[i as usize + 1] = t;
    }
    let mut t = anchor;
    for i in (1..=m).rev() {
        t *= i as f64 / (n - i + 1) as f64 / odds;
        if t == 0.0 {
            break;
        }
        out[i as usize - 1] = t;
    }
    out
}

/// One-sided p-value `P(X >= k)` for `X ~ Binomial(n, p0)`.
pub fn binom_tail_pvalue(k: u64, n: u64, p0: f64) -> Result<f64, StatsError> {
    if k > n {
        return Err(StatsError::InvalidArgument(format!("need k <= N, got k={k}, N={n}")));
    }
    check_unit_closed("p0", p0)?;
    if k == 0 || p0 >= 1.0 {
        return Ok(1.0);
    }
    if p0 <= 0.0 {
        return Ok(0.0);
    }
    // The largest term in [k, n] anchors the sum; terms away from it shrink.
    let anchor_at = mode(n, p0).max(k);
    let odds = p0 / (1.0 - p0);
    let mut terms = vec![1.0f64];
    let mut t = 1.0;
    for i in anchor_at..n {
        t *= (n - i) as f64 / (i + 1) as f64 * odds;
        if t < 1e-300 {
            break;
        }
        terms.push(t);
    }
    let mut t = 1.0;
    for i in (k + 1..=anchor_at).rev() {
        t *= i as f64 / (n - i + 1) as f64 / odds;
        if t < 1e-300 {
            break;
        }
        terms.push(t);
    }
    terms.sort_by(f64::total_cmp);
    let rel: f64 = terms.iter().sum();
    let mut s = scaled_term(anchor_at, n, p0);
    s.mul(rel);
    Ok(s.to_f64().min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tail_edges() {
        assert_eq!(binom_tail_pvalue(0, 50, 0.3).unwrap(), 1.0);
        let v = binom_tail_pvalue(40, 40, 0.3).unwrap();
        assert!((v / 0.3f64.powi(40) - 1.0).abs() < 1e-13);
        assert_eq!(binom_tail_pvalue(3, 10, 0.0).unwrap(), 0.0);
        assert_eq!(binom_tail_pvalue(3, 10, 1.0).unwrap(), 1.0);
        assert!(binom_tail_pvalue(11, 10, 0.5).is_err());
        assert!(binom_tail_pvalue(1, 10, 1.5).is_err());
    }

    #[test]
    fn pmf_vec_sums_to_one() {
        for &(n, p) in &[(1u64, 0.5), (10, 0.01), (300, 0.05), (1000, 0.999), (2000, 0.3)] {
            let v = binomial_pmf_vec(n, p);
            let s: f64 = v.iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "n={n} p={p} sum={s}");
            for (k, &x) in v.iter().enumerate().step_by(7) {
                let single = binomial_pmf(k as u64, n, p);
                assert!((x - single).abs() <= 1e-12 * single.max(1e-300), "k={k}");
            }
        }
    }

    #[test]
    fn tiny_tails_do_not_underflow_early() {
        let v = binom_tail_pvalue(900, 1000, 0.05).unwrap();
        assert!(v > 0.0 || v.is_finite());
        let w = binom_tail_pvalue(200, 1000, 0.05).unwrap();
        assert!(w > 0.0 && w < 1e-40);
    }
}
