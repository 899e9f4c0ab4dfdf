//! Standard-normal tail probabilities in log space.
//!
//! Joint detection over tens of thousands of tokens routinely produces
//! p-values far below `f64::MIN_POSITIVE`, so p-values leave this module only
//! as `log10 p`.

use std::f64::consts::{LN_10, PI};

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

/// Above this z the upper tail is evaluated with the asymptotic series.
pub const ASYMPTOTIC_Z: f64 = 8.0;

/// `log10(1 - Phi(z))`, finite for every finite z.
pub fn log10_upper_tail(z: f64) -> f64 {
    if z <= ASYMPTOTIC_Z {
        // 1 - Phi(z) = erfc(z / sqrt 2) / 2, well conditioned for all z here.
        (0.5 * erfc(z / std::f64::consts::SQRT_2)).log10()
    } else {
        log10_mills_tail(z)
    }
}

/// Asymptotic upper tail:
/// `phi(z)/z * (1 - 1/z^2 + 3/z^4 - 15/z^6 + 105/z^8 - 945/z^10)`.
/// At z = 8 the first omitted term is below 2e-8 relative.
fn log10_mills_tail(z: f64) -> f64 {
    let inv2 = 1.0 / (z * z);
    let mut term = 1.0;
    let mut series = 1.0;
    for k in 1..=5 {
        term *= -((2 * k - 1) as f64) * inv2;
        series += term;
    }
    let ln_tail = -0.5 * z * z - 0.5 * (2.0 * PI).ln() - z.ln() + series.ln();
    ln_tail / LN_10
}

/// `Phi^-1(p)` for `p` in (0, 1).
pub fn normal_quantile(p: f64) -> f64 {
    // Normal::standard() is infallible to construct.
    Normal::standard().inverse_cdf(p)
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    Normal::standard().cdf(z)
}

/// The z-score whose upper tail equals `10^log10_alpha`.
pub fn z_threshold(log10_alpha: f64) -> f64 {
    // Invert in log space by bisection so thresholds below 1e-300 still work.
    let (mut lo, mut hi) = (-40.0_f64, 60.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if log10_upper_tail(mid) > log10_alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
