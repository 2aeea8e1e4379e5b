//! Point estimates with delta-method confidence intervals on transformed
//! scales, so bounded quantities get intervals inside their range.

use serde::Serialize;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EstimateCi {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub se: f64,
}

impl EstimateCi {
    pub fn degenerate(estimate: f64) -> Self {
        Self { estimate, lower: estimate, upper: estimate, se: 0.0 }
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    /// Symmetric interval on the natural scale.
    pub fn identity(estimate: f64, se: f64) -> Self {
        Self { estimate, lower: estimate - Z95 * se, upper: estimate + Z95 * se, se }
    }

    /// Interval built on the logit scale; `estimate` must lie in (0, 1).
    pub fn logit(estimate: f64, se: f64) -> Self {
        if se == 0.0 {
            return Self::degenerate(estimate);
        }
        if !(estimate > 0.0 && estimate < 1.0) {
            // Boundary estimate: fall back to a clamped symmetric interval.
            let lo = (estimate - Z95 * se).clamp(0.0, 1.0);
            let hi = (estimate + Z95 * se).clamp(0.0, 1.0);
            return Self { estimate, lower: lo, upper: hi, se };
        }
        let t = (estimate / (1.0 - estimate)).ln();
        let se_t = se / (estimate * (1.0 - estimate));
        let expit = |v: f64| 1.0 / (1.0 + (-v).exp());
        Self { estimate, lower: expit(t - Z95 * se_t), upper: expit(t + Z95 * se_t), se }
    }

    /// Interval built on the log scale; `estimate` must be positive.
    pub fn log_scale(estimate: f64, se: f64) -> Self {
        if se == 0.0 || estimate <= 0.0 {
            return Self::degenerate(estimate);
        }
        let se_t = se / estimate;
        Self {
            estimate,
            lower: estimate * (-Z95 * se_t).exp(),
            upper: estimate * (Z95 * se_t).exp(),
            se,
        }
    }

    /// Interval built on the atanh scale; `estimate` must lie in (-1, 1).
    pub fn atanh_scale(estimate: f64, se: f64) -> Self {
        if se == 0.0 {
            return Self::degenerate(estimate);
        }
        if estimate.abs() >= 1.0 {
            return Self::degenerate(estimate);
        }
        let t = estimate.atanh();
        let se_t = se / (1.0 - estimate * estimate);
        Self {
            estimate,
            lower: (t - Z95 * se_t).tanh(),
            upper: (t + Z95 * se_t).tanh(),
            se,
        }
    }
}
