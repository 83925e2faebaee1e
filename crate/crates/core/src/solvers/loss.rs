use serde::{Deserialize, Serialize};

/// Margin-based surrogate for the 0-1 loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateLoss {
    /// `log(1 + e^{-m})`
    Logistic,
    /// `max(0, 1 - m)`
    Hinge,
}

/// Smoothing width of the Huberized hinge used inside the solvers.
pub const HINGE_SMOOTHING: f64 = 1e-3;

impl SurrogateLoss {
    /// Exact loss value at margin `m`.
    pub fn value(self, m: f64) -> f64 {
        match self {
            SurrogateLoss::Logistic => logistic_value(m),
            SurrogateLoss::Hinge => (1.0 - m).max(0.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SurrogateLoss::Logistic => "logistic",
            SurrogateLoss::Hinge => "hinge",
        }
    }

    /// The differentiable version minimized by coordinate descent.
    pub fn smooth(self) -> SmoothLoss {
        match self {
            SurrogateLoss::Logistic => SmoothLoss::Logistic,
            SurrogateLoss::Hinge => SmoothLoss::HuberHinge { delta: HINGE_SMOOTHING },
        }
    }
}

impl std::str::FromStr for SurrogateLoss {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "logistic" => Ok(SurrogateLoss::Logistic),
            "hinge" => Ok(SurrogateLoss::Hinge),
            other => Err(format!("unknown loss '{other}' (expected hinge or logistic)")),
        }
    }
}

fn logistic_value(m: f64) -> f64 {
    // log(1 + e^{-m})
    if m > 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

/// Convex, nonincreasing, once-differentiable margin loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SmoothLoss {
    Logistic,
    /// Quadratic on `(1 - delta, 1)`, linear below, zero above.
    HuberHinge { delta: f64 },
}

impl SmoothLoss {
    #[inline]
    pub fn value(self, m: f64) -> f64 {
        match self {
            SmoothLoss::Logistic => logistic_value(m),
            SmoothLoss::HuberHinge { delta } => {
                if m >= 1.0 {
                    0.0
                } else if m > 1.0 - delta {
                    (1.0 - m) * (1.0 - m) / (2.0 * delta)
                } else {
                    1.0 - m - 0.5 * delta
                }
            }
        }
    }

    #[inline]
    pub fn deriv(self, m: f64) -> f64 {
        match self {
            SmoothLoss::Logistic => {
                // -1 / (1 + e^m)
                if m > 0.0 {
                    let e = (-m).exp();
                    -e / (1.0 + e)
                } else {
                    -1.0 / (1.0 + m.exp())
                }
            }
            SmoothLoss::HuberHinge { delta } => {
                if m >= 1.0 {
                    0.0
                } else if m > 1.0 - delta {
                    -(1.0 - m) / delta
                } else {
                    -1.0
                }
            }
        }
    }

    /// First and second derivative together.
    #[inline]
    pub fn deriv2(self, m: f64) -> (f64, f64) {
        match self {
            SmoothLoss::Logistic => {
                let (e_neg, p) = if m > 0.0 {
                    let e = (-m).exp();
                    (e / (1.0 + e), 1.0 / (1.0 + e))
                } else {
                    let e = m.exp();
                    (1.0 / (1.0 + e), e / (1.0 + e))
                };
                (-e_neg, e_neg * p)
            }
            SmoothLoss::HuberHinge { delta } => {
                if m >= 1.0 {
                    (0.0, 0.0)
                } else if m > 1.0 - delta {
                    (-(1.0 - m) / delta, 1.0 / delta)
                } else {
                    (-1.0, 0.0)
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_values_at_zero() {
        assert!((SurrogateLoss::Logistic.value(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(SurrogateLoss::Hinge.value(0.0), 1.0);
        assert_eq!(SurrogateLoss::Hinge.value(2.0), 0.0);
    }

    #[test]
    fn smooth_derivatives_match_differences() {
        for loss in [SmoothLoss::Logistic, SmoothLoss::HuberHinge { delta: 0.1 }] {
            for i in -40..40 {
                let m = i as f64 * 0.137;
                let h = 1e-6;
                let fd = (loss.value(m + h) - loss.value(m - h)) / (2.0 * h);
                assert!((fd - loss.deriv(m)).abs() < 1e-5, "{loss:?} m={m}");
                assert_eq!(loss.deriv(m), loss.deriv2(m).0);
            }
        }
    }

    #[test]
    fn losses_are_convex_and_nonincreasing() {
        for loss in [SurrogateLoss::Logistic, SurrogateLoss::Hinge] {
            let grid: Vec<f64> = (-50..50).map(|i| i as f64 * 0.1).collect();
            for w in grid.windows(3) {
                let (a, b, c) = (loss.value(w[0]), loss.value(w[1]), loss.value(w[2]));
                assert!(b <= a + 1e-15 && c <= b + 1e-15);
                assert!(a + c - 2.0 * b >= -1e-12);
            }
        }
    }
}
