//! Digamma, trigamma, inverse digamma and log-gamma.

pub use statrs::function::gamma::{digamma, ln_gamma};

/// Euler–Mascheroni constant, `-Ψ(1)`.
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Trigamma function Ψ'(x) for x > 0.
pub fn trigamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    // Asymptotic series with Bernoulli coefficients.
    acc + r
        + 0.5 * r2
        + r * r2 * (1.0 / 6.0 - r2 * (1.0 / 30.0 - r2 * (1.0 / 42.0 - r2 * (1.0 / 30.0 - r2 * 5.0 / 66.0))))
}

/// Inverse of the digamma function on the positive reals.
///
/// Newton iterations on `Ψ(x) = y`, started from `exp(y) + 1/2` when
/// `y >= -2.22` and from `-1 / (y - Ψ(1))` otherwise. Converges to full
/// double precision in at most a handful of steps over the useful range.
pub fn inv_digamma(y: f64) -> f64 {
    if y.is_nan() {
        return f64::NAN;
    }
    if y == f64::INFINITY {
        return f64::INFINITY;
    }
    if y == f64::NEG_INFINITY {
        return 0.0;
    }
    let mut x = if y >= -2.22 {
        y.exp() + 0.5
    } else {
        -1.0 / (y + EULER_GAMMA)
    };
    for _ in 0..25 {
        let step = (digamma(x) - y) / trigamma(x);
        let next = x - step;
        // Newton can overshoot below zero for tiny x; halve toward zero instead.
        x = if next > 0.0 { next } else { 0.5 * x };
        if step.abs() <= 1e-15 * x.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    x
}

/// Numerically stable `log Σ exp(v_i)`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log multivariate beta `Σ lnΓ(a_i) − lnΓ(Σ a_i)`, the Dirichlet log-partition.
pub fn ln_multi_beta(a: &[f64]) -> f64 {
    a.iter().map(|&x| ln_gamma(x)).sum::<f64>() - ln_gamma(a.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digamma_recurrence() {
        for &x in &[0.1, 0.5, 1.0, 2.5, 7.0, 30.0] {
            let lhs = digamma(x + 1.0);
            let rhs = digamma(x) + 1.0 / x;
            assert!((lhs - rhs).abs() < 1e-13, "x={x}");
        }
        assert!((digamma(1.0) + EULER_GAMMA).abs() < 1e-13);
    }

    #[test]
    fn trigamma_known_values() {
        let pi2_6 = std::f64::consts::PI.powi(2) / 6.0;
        assert!((trigamma(1.0) - pi2_6).abs() < 1e-13);
        assert!((trigamma(0.5) - std::f64::consts::PI.powi(2) / 2.0).abs() < 1e-12);
        // recurrence Ψ'(x+1) = Ψ'(x) - 1/x²
        for &x in &[0.3, 1.7, 12.0] {
            assert!((trigamma(x + 1.0) - trigamma(x) + 1.0 / (x * x)).abs() < 1e-12);
        }
    }

    #[test]
    fn trigamma_matches_finite_difference() {
        for &x in &[0.2, 0.9, 3.0, 11.0, 50.0] {
            let h = 1e-5 * x;
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert!((fd - trigamma(x)).abs() < 1e-6 * trigamma(x), "x={x}");
        }
    }

    #[test]
    fn inverse_digamma_round_trip_grid() {
        let mut y = -20.0;
        while y <= 10.0 {
            let x = inv_digamma(y);
            assert!(x > 0.0);
            assert!((digamma(x) - y).abs() <= 1e-10, "y={y} x={x}");
            y += 0.01;
        }
    }

    #[test]
    fn log_sum_exp_handles_large_magnitudes() {
        let v = [-1000.0, -1000.0];
        assert!((log_sum_exp(&v) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
