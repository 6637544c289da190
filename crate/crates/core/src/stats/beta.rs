//! Regularized incomplete beta function and the Clopper–Pearson upper bound.

use super::{check_unit_open, StatsError};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural logarithm of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection keeps the series in its accurate region.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Modified Lentz evaluation of the incomplete beta continued fraction.
fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=100_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)` for `a, b > 0` and `x` in `[0, 1]`.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (-x).ln_1p() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        (ln_front.exp() * beta_cf(x, a, b) / a).clamp(0.0, 1.0)
    } else {
        (1.0 - ln_front.exp() * beta_cf(1.0 - x, b, a) / b).clamp(0.0, 1.0)
    }
}

/// One-sided Clopper–Pearson upper bound at level `gamma` on a binomial rate
/// after `k` failures in `n` trials: the `gamma` quantile of
/// `Beta(k + 1, n - k)`. Returns 1.0 when `k == n`.
pub fn cp_upper(k: u64, n: u64, gamma: f64) -> Result<f64, StatsError> {
    if n == 0 || k > n {
        return Err(StatsError::InvalidArgument(format!(
            "need 0 <= k <= n and n >= 1, got k={k}, n={n}"
        )));
    }
    check_unit_open("gamma", gamma)?;
    if k == n {
        return Ok(1.0);
    }
    let (a, b) = ((k + 1) as f64, (n - k) as f64);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if regularized_incomplete_beta(mid, a, b) < gamma {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_factorials() {
        let mut f = 0.0f64;
        for n in 1..=170u32 {
            f += (n as f64).ln();
            let want = f;
            let got = ln_gamma(n as f64 + 1.0);
            assert!((got - want).abs() <= 1e-13 * want.abs().max(1.0), "n={n}: {got} vs {want}");
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        for &x in &[0.01, 0.3, 0.5, 0.77, 0.999] {
            assert!((regularized_incomplete_beta(x, 1.0, 1.0) - x).abs() < 1e-14);
            // I_x(a, 1) = x^a, I_x(1, b) = 1 - (1 - x)^b.
            assert!((regularized_incomplete_beta(x, 3.0, 1.0) - x.powi(3)).abs() < 1e-14);
            let want = 1.0 - (1.0 - x).powi(5);
            assert!((regularized_incomplete_beta(x, 1.0, 5.0) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_failure_bound_has_closed_form() {
        // I_p(1, n) = 1 - (1-p)^n, so the k = 0 bound is 1 - (1-gamma)^(1/n).
        for n in [1u64, 16, 100, 667] {
            for g in [0.9, 0.95, 0.99] {
                let want = 1.0 - (1.0f64 - g).powf(1.0 / n as f64);
                assert!((cp_upper(0, n, g).unwrap() - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn published_sixteen_trial_bound() {
        let v = cp_upper(0, 16, 0.95).unwrap();
        assert!((v - 0.1707).abs() <= 0.0005, "{v}");
    }

    #[test]
    fn edge_cases_and_errors() {
        assert_eq!(cp_upper(7, 7, 0.99).unwrap(), 1.0);
        assert!(cp_upper(0, 0, 0.99).is_err());
        assert!(cp_upper(3, 2, 0.99).is_err());
        assert!(cp_upper(1, 2, 1.0).is_err());
        assert!(cp_upper(1, 2, 0.0).is_err());
    }
}
