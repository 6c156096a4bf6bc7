//! Digamma via the asymptotic series with argument-shift recurrence.

/// Digamma function for strictly positive arguments.
///
/// Arguments below 6 are shifted up with psi(x) = psi(x+1) - 1/x, then the
/// Stirling-type series is evaluated; absolute accuracy is better than 1e-10
/// for x >= 6 and preserved by the exact recurrence below it.
pub fn digamma(x: f64) -> f64 {
    if x <= 0.0 || x.is_nan() {
        return f64::NAN;
    }
    let mut shift = 0.0;
    let mut x = x;
    while x < 6.0 {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // ln x - 1/(2x) - sum_{n>=1} B_{2n} / (2n x^{2n})
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2
                                        * (1.0 / 132.0
                                            - inv2 * (691.0 / 32760.0 - inv2 * (1.0 / 12.0)))))));
    shift + x.ln() - 0.5 * inv - series
}

#[cfg(test)]
mod tests {
    use super::*;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    #[test]
    fn known_values() {
        assert!((digamma(1.0) + EULER_GAMMA).abs() < 1e-12);
        // psi(1/2) = -gamma - 2 ln 2
        assert!((digamma(0.5) - (-EULER_GAMMA - 2.0 * std::f64::consts::LN_2)).abs() < 1e-12);
        // psi(2) = 1 - gamma
        assert!((digamma(2.0) - (1.0 - EULER_GAMMA)).abs() < 1e-12);
        // psi(10) = H_9 - gamma
        let h9: f64 = (1..=9).map(|i| 1.0 / i as f64).sum();
        assert!((digamma(10.0) - (h9 - EULER_GAMMA)).abs() < 1e-12);
    }

    #[test]
    fn recurrence_identity() {
        // psi(x + n) - psi(x) == sum_{j=0}^{n-1} 1/(x+j), exact in the reals.
        for &x in &[0.03, 0.7, 1.5, 5.9, 12.25] {
            for n in 1..=40usize {
                let lhs = digamma(x + n as f64) - digamma(x);
                let rhs: f64 = (0..n).map(|j| 1.0 / (x + j as f64)).sum();
                assert!((lhs - rhs).abs() < 1e-10, "x={x} n={n}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn rejects_nonpositive() {
        assert!(digamma(0.0).is_nan());
        assert!(digamma(-1.5).is_nan());
    }
}
