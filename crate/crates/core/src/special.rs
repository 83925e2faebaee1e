//! Special functions: log-gamma, regularized incomplete gamma, χ² CDF and quantile,
//! standard normal CDF.

use crate::error::{ReproError, Result};

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `log C(n, k)` computed through log-gamma; exact enough for any `n` without overflow.
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    if k == 0 || k == n {
        return 0.0;
    }
    let (n, k) = (n as f64, k as f64);
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

/// Standard normal CDF via the complementary error function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

const GAMMA_EPS: f64 = 1e-16;
const GAMMA_MAX_ITER: usize = 10_000;

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0);
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    if x < a + 1.0 {
        gamma_p_series(a, x)
    } else {
        1.0 - gamma_q_continued_fraction(a, x)
    }
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 - P(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_continued_fraction(a, x)
    }
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..GAMMA_MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * GAMMA_EPS {
            break;
        }
    }
    (sum.ln() - x + a * x.ln() - ln_gamma(a)).exp()
}

// Modified Lentz evaluation of the continued fraction for Q(a, x).
fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..GAMMA_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < GAMMA_EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

pub fn chi2_cdf(x: f64, df: usize) -> f64 {
    gamma_p(df as f64 / 2.0, x / 2.0)
}

pub fn chi2_pdf(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        return if df == 2 { 0.5 } else { 0.0 };
    }
    let k = df as f64 / 2.0;
    ((k - 1.0) * x.ln() - x / 2.0 - k * std::f64::consts::LN_2 - ln_gamma(k)).exp()
}

/// Inverse χ² CDF: the `alpha`-quantile of a χ² variable with `df` degrees of freedom.
///
/// Bracketed Newton iteration on the regularized incomplete gamma function; the result
/// satisfies `|chi2_cdf(q, df) - alpha| <= 1e-10` for `alpha` in (0, 1).
pub fn chi2_quantile(alpha: f64, df: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ReproError::Domain(format!("quantile level {alpha} outside (0,1)")));
    }
    if df == 0 {
        return Err(ReproError::Domain("chi-square needs df >= 1".into()));
    }
    let k = df as f64;

    // Wilson-Hilferty start, clamped positive.
    let z = normal_quantile_approx(alpha);
    let wh = k * (1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt()).powi(3);
    let mut x = if wh > 0.0 { wh } else { k * 0.5 };

    let mut lo = 0.0_f64;
    let mut hi = f64::INFINITY;
    for _ in 0..1000 {
        let f = chi2_cdf(x, df) - alpha;
        if f == 0.0 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi.is_finite() && (hi - lo) <= 1e-15 * hi {
            break;
        }
        let pdf = chi2_pdf(x, df);
        let newton = if pdf > 0.0 { x - f / pdf } else { f64::NAN };
        x = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else if hi.is_infinite() {
            2.0 * x.max(1.0)
        } else if lo > 0.0 && hi / lo > 4.0 {
            // geometric bisection resolves quantiles that are many decades below 1
            (lo * hi).sqrt()
        } else if lo == 0.0 {
            hi / 16.0
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(x)
}

// Acklam-style rational approximation; only used as a starting point.
fn normal_quantile_approx(p: f64) -> f64 {
    let t = if p < 0.5 { p } else { 1.0 - p };
    let s = (-2.0 * t.ln()).sqrt();
    let num = 2.515517 + 0.802853 * s + 0.010328 * s * s;
    let den = 1.0 + 1.432788 * s + 0.189269 * s * s + 0.001308 * s * s * s;
    let z = s - num / den;
    if p < 0.5 {
        -z
    } else {
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn chi2_quantile_reference_values() {
        assert_relative_eq!(chi2_quantile(0.95, 1).unwrap(), 3.841458820694124, epsilon = 1e-9);
        assert_relative_eq!(chi2_quantile(0.95, 4).unwrap(), 9.487729036781154, epsilon = 1e-9);
    }

    #[test]
    fn chi2_quantile_tiny_level() {
        let q = chi2_quantile(1e-12, 1).unwrap();
        assert!(q > 0.0 && q < 1e-5);
        assert!((chi2_cdf(q, 1) - 1e-12).abs() <= 1e-10);
    }

    #[test]
    fn chi2_quantile_domain_errors() {
        assert!(chi2_quantile(0.0, 1).is_err());
        assert!(chi2_quantile(1.0, 1).is_err());
        assert!(chi2_quantile(0.5, 0).is_err());
    }

    #[test]
    fn ln_binomial_matches_direct() {
        assert_relative_eq!(ln_binomial(10, 3), (120.0f64).ln(), epsilon = 1e-12);
        assert_eq!(ln_binomial(5, 0), 0.0);
        assert!(ln_binomial(1000, 4).is_finite());
    }

    #[test]
    fn normal_cdf_symmetric() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert_relative_eq!(normal_cdf(1.959963984540054), 0.975, epsilon = 1e-12);
    }
}
