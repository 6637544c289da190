use super::binom_tail_pvalue;

/// Two-sided exact McNemar test on discordant counts `b` and `c`.
pub fn mcnemar_exact(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let tail = binom_tail_pvalue(b.max(c), n, 0.5).expect("arguments are in domain");
    (2.0 * tail).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(mcnemar_exact(6, 6), 1.0);
        assert_eq!(mcnemar_exact(0, 0), 1.0);
        assert_eq!(mcnemar_exact(3, 9), mcnemar_exact(9, 3));
        // 2 * (C(11,10) + C(11,11)) / 2^11
        assert!((mcnemar_exact(10, 1) - 24.0 / 2048.0).abs() < 1e-15);
    }
}
