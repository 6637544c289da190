mod common;

use common::{cp_bisection_oracle, exact_binom_tail, golden, log_space_binom_cdf, tail_grid};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use recall_audit::stats::{
    binom_tail_pvalue, cp_upper, mcnemar_exact, two_round_null_pvalue, TwoRoundNull,
};

#[test]
fn oracles_agree_with_each_other() {
    // The big-integer tail and the log-space CDF are complementary. The
    // log-factorial table costs the CDF a few ulps per term, well inside the
    // 1e-9 the CP oracle is used at.
    for &(k, n, p) in &[(3u64, 10u64, 0.3), (50, 300, 0.2), (1, 1, 0.5), (700, 1000, 0.7)] {
        let tail = exact_binom_tail(k, n, p);
        let cdf = log_space_binom_cdf(k - 1, n, p);
        assert!((tail + cdf - 1.0).abs() < 1e-10, "k={k} n={n} p={p}: {tail} + {cdf}");
    }
}

#[test]
fn frozen_golden_values() {
    let g = golden();
    for c in &g.cp_upper {
        let v = cp_upper(c.k, c.n, c.gamma).unwrap();
        assert!((v - c.value).abs() < 1e-12, "cp_upper({}, {}, {}) = {v}", c.k, c.n, c.gamma);
        let o = cp_bisection_oracle(c.k, c.n, c.gamma);
        assert!((o - c.value).abs() < 1e-12, "oracle drifted: {o}");
    }
    for t in &g.binom_tail {
        let v = binom_tail_pvalue(t.k, t.n, t.p0).unwrap();
        assert!((v / t.value - 1.0).abs() < 1e-12, "tail = {v}");
        assert!((exact_binom_tail(t.k, t.n, t.p0) / t.value - 1.0).abs() < 1e-12);
    }
    for m in &g.mcnemar {
        assert_eq!(mcnemar_exact(m.b, m.c), m.value);
    }
}

#[test]
fn tail_matches_exact_summation_on_grid() {
    let grid = tail_grid();
    assert_eq!(grid.len(), 200);
    for (k, n, p) in grid {
        let want = exact_binom_tail(k, n, p);
        let got = binom_tail_pvalue(k, n, p).unwrap();
        assert!(want > 1e-300);
        assert!((got / want - 1.0).abs() <= 1e-12, "k={k} N={n} p0={p}: {got} vs {want}");
    }
}

#[test]
fn cp_monotone_in_k_and_n() {
    for &g in &[0.9, 0.99] {
        for n in [5u64, 50, 200] {
            let row: Vec<f64> = (0..=n).map(|k| cp_upper(k, n, g).unwrap()).collect();
            assert!(row.windows(2).all(|w| w[0] <= w[1]), "n={n}");
        }
        for k in [0u64, 3, 10] {
            let col: Vec<f64> = (k.max(1)..400).map(|n| cp_upper(k, n, g).unwrap()).collect();
            assert!(col.windows(2).all(|w| w[0] >= w[1]), "k={k}");
        }
    }
}

#[test]
fn two_round_matches_convolution_by_hand() {
    // Direct double sum over (w1, w2) with the big-integer oracle's pmf.
    let (n, p) = (12u64, 0.15);
    let pmf = |k: u64, m: u64| exact_binom_tail(k, m, p) - if k < m { exact_binom_tail(k + 1, m, p) } else { 0.0 };
    for t in 0..=2 * n {
        let mut want = 0.0;
        for w1 in 0..=n {
            for w2 in 0..=w1 {
                if w1 + w2 >= t {
                    want += pmf(w1, n) * pmf(w2, w1);
                }
            }
        }
        let got = two_round_null_pvalue(t, n, p).unwrap();
        assert!((got - want).abs() < 1e-13, "t={t}: {got} vs {want}");
    }
}

#[test]
fn two_round_pmf_matches_sampler_small() {
    let null = TwoRoundNull::new(40, 0.1).unwrap();
    let m = 200_000u64;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let first = Binomial::new(40, 0.1).unwrap();
    let mut hist = vec![0u64; 81];
    for _ in 0..m {
        let w1 = first.sample(&mut rng);
        let w2 = Binomial::new(w1, 0.1).unwrap().sample(&mut rng);
        hist[(w1 + w2) as usize] += 1;
    }
    for (t, &c) in hist.iter().enumerate() {
        let p = null.pmf[t];
        let se = (p * (1.0 - p) / m as f64).sqrt();
        let f = c as f64 / m as f64;
        assert!((f - p).abs() <= 4.0 * se + 1.0 / m as f64, "t={t}: {f} vs {p}");
    }
}

proptest! {
    #[test]
    fn tail_monotone(n in 1u64..400, k in 0u64..400, p in 0.0f64..=1.0, dp in 0.0f64..0.2) {
        let k = k.min(n);
        let a = binom_tail_pvalue(k, n, p).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        if k < n {
            prop_assert!(binom_tail_pvalue(k + 1, n, p).unwrap() <= a * (1.0 + 1e-12));
        }
        let p2 = (p + dp).min(1.0);
        prop_assert!(binom_tail_pvalue(k, n, p2).unwrap() >= a * (1.0 - 1e-12));
    }

    #[test]
    fn mcnemar_symmetric(b in 0u64..200, c in 0u64..200) {
        prop_assert_eq!(mcnemar_exact(b, c), mcnemar_exact(c, b));
        let v = mcnemar_exact(b, c);
        prop_assert!(v > 0.0 && v <= 1.0);
    }

    #[test]
    fn cp_dominates_point_rate(n in 1u64..500, k in 0u64..500, g in 0.5f64..0.999) {
        let k = k.min(n);
        let v = cp_upper(k, n, g).unwrap();
        prop_assert!(v > 0.0);
        prop_assert!(v >= k as f64 / n as f64);
    }
}
