//! Small numeric helpers shared by the bound formulas and the control synthesizer.

/// Returns `max(⌈log_base(num / den)⌉, 0)` for `base` in (0, 1).
///
/// Equivalently, the smallest integer `k >= 0` with `base^k * den <= num`.
/// A floating-point candidate is computed from logarithms and then corrected by
/// testing the defining inequality directly, so ratios of short decimals such as
/// `0.2 / 0.4` do not pick up an off-by-one from rounding in `ln`.
pub fn ceil_log_clamped(base: f64, num: f64, den: f64) -> u64 {
    debug_assert!(base > 0.0 && base < 1.0);
    debug_assert!(num > 0.0 && den > 0.0);
    if num >= den {
        return 0;
    }
    let estimate = ((num / den).ln() / base.ln()).ceil();
    let mut k = if estimate.is_finite() && estimate > 0.0 {
        estimate as u64
    } else {
        0
    };
    while k > 0 && base.powi((k - 1) as i32) * den <= num {
        k -= 1;
    }
    while base.powi(k as i32) * den > num {
        k += 1;
    }
    k
}

/// `x^k` for `x` in [0, 1] and a possibly huge exponent, evaluated in log space.
pub fn pow_log_space(x: f64, k: u128) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if x <= 0.0 {
        return 0.0;
    }
    (x.ln() * k as f64).exp()
}

/// `(1 - q^m)^k` without forming `1 - q^m` directly, for `q` in (0, 1).
///
/// `q^m` may be far below `f64::EPSILON`; the base is carried as `ln(1 - q^m)`.
pub fn one_minus_pow_then_pow(q: f64, m: u128, k: u128) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let ln_qm = q.ln() * m as f64;
    let ln_base = (-ln_qm.exp()).ln_1p();
    (ln_base * k as f64).exp()
}

/// Number of unordered pairs among `n` agents.
pub fn pair_count(n: usize) -> usize {
    n * (n - 1) / 2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_log_exact_powers() {
        assert_eq!(ceil_log_clamped(0.5, 0.2, 0.4), 1);
        assert_eq!(ceil_log_clamped(0.5, 0.5, 0.5), 0);
        assert_eq!(ceil_log_clamped(0.5, 0.25, 1.0), 2);
        assert_eq!(ceil_log_clamped(0.5, 0.26, 1.0), 2);
        assert_eq!(ceil_log_clamped(0.5, 0.24, 1.0), 3);
        assert_eq!(ceil_log_clamped(0.25, 0.047, 0.5), 2);
        assert_eq!(ceil_log_clamped(0.5, 2.0, 1.0), 0);
    }

    #[test]
    fn ceil_log_matches_definition_on_grid() {
        for &base in &[0.5, 0.4, 0.25, 0.1] {
            for a in 1..40 {
                for b in 1..40 {
                    let (num, den) = (a as f64 / 40.0, b as f64 / 40.0);
                    let k = ceil_log_clamped(base, num, den);
                    assert!(base.powi(k as i32) * den <= num);
                    if k > 0 {
                        assert!(base.powi(k as i32 - 1) * den > num);
                    }
                }
            }
        }
    }

    #[test]
    fn log_space_powers() {
        assert!((pow_log_space(2.0 / 3.0, 34) - (2.0f64 / 3.0).powi(34)).abs() < 1e-15);
        assert_eq!(pow_log_space(0.3, 0), 1.0);
        let q: f64 = 1.0 / 3.0;
        let direct = (1.0 - q.powi(16)).powi(2);
        assert!((one_minus_pow_then_pow(q, 16, 2) - direct).abs() < 1e-15);
        // q^m underflows: the power is indistinguishable from 1.
        assert_eq!(one_minus_pow_then_pow(1.0 / 90.0, 1_000_000, 5), 1.0);
    }
}
