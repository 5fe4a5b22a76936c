//! Numerical special functions used throughout the models.
//!
//! Everything that touches a partition function or a normalized probability
//! is computed in log space. `ln Γ` comes from `statrs`; digamma and
//! trigamma are evaluated here by upward recurrence into the asymptotic
//! region followed by the Bernoulli-number expansion.

pub use statrs::function::gamma::ln_gamma;

/// Below this magnitude the rate of a truncated exponential is treated as
/// zero and the series / uniform branches are used.
pub const SMALL_RATE: f64 = 1e-6;

// B_{2k} / (2k) for k = 1..8.
const DIGAMMA_ASYMP: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
    -3617.0 / 8160.0,
];

// B_{2k} for k = 1..8.
const TRIGAMMA_ASYMP: [f64; 8] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
];

/// Digamma ψ(x) = d/dx ln Γ(x) for x > 0.
///
/// Shifts x up to at least 6 with ψ(x) = ψ(x + 1) − 1/x, then sums the
/// asymptotic series ψ(x) ≈ ln x − 1/(2x) − Σ B₂ₖ / (2k x²ᵏ).
/// Returns NaN for x ≤ 0 or NaN input.
pub fn digamma(x: f64) -> f64 {
    if x.is_nan() || x <= 0.0 {
        return f64::NAN;
    }
    if x.is_infinite() {
        return f64::INFINITY;
    }
    let mut acc = 0.0;
    let mut x = x;
    while x < 6.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    acc += x.ln() - 0.5 / x;
    let inv_x2 = 1.0 / (x * x);
    let mut term = inv_x2;
    for c in DIGAMMA_ASYMP {
        acc -= c * term;
        term *= inv_x2;
    }
    acc
}

/// Trigamma ψ₁(x) = d²/dx² ln Γ(x) for x > 0.
pub fn trigamma(x: f64) -> f64 {
    if x.is_nan() || x <= 0.0 {
        return f64::NAN;
    }
    if x.is_infinite() {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut x = x;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    // ψ₁(x) ≈ 1/x + 1/(2x²) + Σ B₂ₖ / x²ᵏ⁺¹
    let inv_x = 1.0 / x;
    let inv_x2 = inv_x * inv_x;
    acc += inv_x + 0.5 * inv_x2;
    let mut term = inv_x2 * inv_x;
    for b in TRIGAMMA_ASYMP {
        acc += b * term;
        term *= inv_x2;
    }
    acc
}

/// ln B(a, b) for the two-argument Beta function.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// ln of the multivariate Beta function Π Γ(xᵢ) / Γ(Σ xᵢ).
pub fn ln_multi_beta(xs: &[f64]) -> f64 {
    let sum: f64 = xs.iter().sum();
    xs.iter().map(|&x| ln_gamma(x)).sum::<f64>() - ln_gamma(sum)
}

/// ln(1 + eˣ) without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln Σ exp(xᵢ), shifted by the maximum. Returns −∞ for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max.is_infinite() {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Normalizes log-weights in place into probabilities (max-shifted softmax).
pub fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

/// ln ∫₀¹ e^{a y} dy = ln((eᵃ − 1)/a), the continuous-covariate analogue of
/// `softplus`. Uses the series a/2 + a²/24 near the removable singularity.
pub fn ln_exp_integral(a: f64) -> f64 {
    if a.abs() < SMALL_RATE {
        a / 2.0 + a * a / 24.0
    } else if a > 0.0 {
        // eᵃ(1 − e⁻ᵃ)/a
        a + (-(-a).exp_m1() / a).ln()
    } else {
        (a.exp_m1() / a).ln()
    }
}

/// Mean of the density a e^{a y}/(eᵃ − 1) on [0, 1].
pub fn truncated_exp_mean(a: f64) -> f64 {
    if a.abs() < SMALL_RATE {
        0.5 + a / 12.0
    } else {
        // 1/(1 − e⁻ᵃ) − 1/a
        -1.0 / (-a).exp_m1() - 1.0 / a
    }
}

/// Inverse-CDF draw from the density ∝ e^{a z} on [0, len] given a uniform
/// variate `u` in [0, 1).
///
/// Stable for any magnitude of `a·len`: the positive branch is rewritten as
/// `len + ln(u + (1 − u) e^{−a·len}) / a` so nothing is exponentiated upward.
pub fn truncated_exp_inverse_cdf(a: f64, len: f64, u: f64) -> f64 {
    if len <= 0.0 {
        return 0.0;
    }
    let z = if a.abs() < SMALL_RATE {
        u * len
    } else if a > 0.0 {
        len + (u + (1.0 - u) * (-a * len).exp()).ln() / a
    } else {
        (u * (a * len).exp_m1()).ln_1p() / a
    };
    z.clamp(0.0, len)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

    #[test]
    fn digamma_known_values() {
        assert!((digamma(1.0) + EULER_GAMMA).abs() < 1e-13);
        assert!((digamma(2.0) - (1.0 - EULER_GAMMA)).abs() < 1e-13);
        // ψ(1/2) = −γ − 2 ln 2
        assert!((digamma(0.5) + EULER_GAMMA + 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!(digamma(0.0).is_nan());
        assert!(digamma(-1.5).is_nan());
    }

    #[test]
    fn digamma_recurrence() {
        for &x in &[0.01, 0.3, 1.7, 5.9, 6.0, 12.5, 300.0] {
            let lhs = digamma(x + 1.0);
            let rhs = digamma(x) + 1.0 / x;
            assert!((lhs - rhs).abs() < 1e-11 * (1.0 + rhs.abs()), "x = {x}");
        }
    }

    #[test]
    fn digamma_matches_statrs() {
        for i in 1..400 {
            let x = i as f64 * 0.137;
            let ours = digamma(x);
            let theirs = statrs::function::gamma::digamma(x);
            assert!(
                (ours - theirs).abs() < 1e-10 * (1.0 + theirs.abs()),
                "x = {x}"
            );
        }
    }

    #[test]
    fn trigamma_known_values_and_derivative() {
        // ψ₁(1) = π²/6
        let pi2_6 = std::f64::consts::PI.powi(2) / 6.0;
        assert!((trigamma(1.0) - pi2_6).abs() < 1e-12);
        for &x in &[0.2f64, 0.9, 3.3, 9.99, 10.0, 45.0] {
            let h = 1e-5 * x.max(1.0);
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert!((trigamma(x) - fd).abs() < 1e-6 * trigamma(x), "x = {x}");
        }
    }

    #[test]
    fn softplus_and_sigmoid_are_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn log_sum_exp_shift() {
        let xs = [1000.0, 1000.0];
        assert!((log_sum_exp(&xs) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn exp_integral_branches_agree() {
        assert_eq!(ln_exp_integral(0.0), 0.0);
        for &a in &[-3.0f64, -1e-5, -1e-7, 1e-7, 1e-5, 2.0, 800.0] {
            let direct = if a.abs() < 50.0 {
                (a.exp_m1() / a).ln()
            } else {
                a - a.ln()
            };
            assert!((ln_exp_integral(a) - direct).abs() < 1e-9, "a = {a}");
        }
    }

    #[test]
    fn truncated_exp_mean_closed_form() {
        // (e²(2 − 1) + 1) / (2(e² − 1))
        let e2 = 2f64.exp();
        let expected = (e2 + 1.0) / (2.0 * (e2 - 1.0));
        assert!((truncated_exp_mean(2.0) - expected).abs() < 1e-14);
        assert!((truncated_exp_mean(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn inverse_cdf_is_monotone_and_bounded() {
        for &a in &[-500.0, -3.0, 0.0, 1e-8, 4.0, 500.0] {
            let mut prev = -1.0;
            for i in 0..=100 {
                let u = i as f64 / 100.0;
                let z = truncated_exp_inverse_cdf(a, 0.7, u);
                assert!((0.0..=0.7).contains(&z));
                assert!(z >= prev - 1e-15, "a = {a}");
                prev = z;
            }
        }
    }
}
