//! Least-squares fits used by the scaling experiments.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in the fitted variable.
    pub rms_residual: f64,
}

/// Ordinary least squares `y = intercept + slope x`.
pub fn ols(x: &[f64], y: &[f64]) -> LinearFit {
    assert_eq!(x.len(), y.len());
    assert!(x.len() >= 2, "need at least two points");
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let rms_residual = (x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    LinearFit {
        slope,
        intercept,
        rms_residual,
    }
}

/// Fitted scaling models for values `V(eta)`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct ScalingFit {
    /// Model parameters (meaning depends on the model).
    pub params: [f64; 2],
    /// RMS of `log(fit / V)`.
    pub log_residual: f64,
    /// Largest `|fit - V| / V`.
    pub max_rel_residual: f64,
}

fn residuals(values: &[f64], fitted: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut sq = 0.0;
    let mut worst: f64 = 0.0;
    for (v, f) in values.iter().zip(fitted) {
        sq += (f / v).ln().powi(2);
        worst = worst.max((f - v).abs() / v.abs());
    }
    ((sq / values.len() as f64).sqrt(), worst)
}

/// `V = C eta^{-s}`; params `[s, C]`.
pub fn power_fit(eta: &[f64], values: &[f64]) -> ScalingFit {
    let x: Vec<f64> = eta.iter().map(|e| (1.0 / e).ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let f = ols(&x, &y);
    let fitted = x.iter().map(|xi| (f.intercept + f.slope * xi).exp());
    let (log_residual, max_rel_residual) = residuals(values, fitted);
    ScalingFit {
        params: [f.slope, f.intercept.exp()],
        log_residual,
        max_rel_residual,
    }
}

/// Best `V = C eta^{-s}` subject to `s >= s_min`; params `[s, C]`.
pub fn power_fit_min_exponent(eta: &[f64], values: &[f64], s_min: f64) -> ScalingFit {
    let free = power_fit(eta, values);
    if free.params[0] >= s_min {
        return free;
    }
    // The log-space objective is a convex quadratic in s: the constrained
    // optimum sits on the boundary.
    let x: Vec<f64> = eta.iter().map(|e| (1.0 / e).ln()).collect();
    let log_c = values
        .iter()
        .zip(&x)
        .map(|(v, xi)| v.ln() - s_min * xi)
        .sum::<f64>()
        / x.len() as f64;
    let fitted = x.iter().map(|xi| (log_c + s_min * xi).exp());
    let (log_residual, max_rel_residual) = residuals(values, fitted);
    ScalingFit {
        params: [s_min, log_c.exp()],
        log_residual,
        max_rel_residual,
    }
}

/// `V = c1 + c2 |log eta|`; params `[c1, c2]`.
pub fn log_linear_fit(eta: &[f64], values: &[f64]) -> ScalingFit {
    let x: Vec<f64> = eta.iter().map(|e| e.ln().abs()).collect();
    let f = ols(&x, values);
    let fitted = x.iter().map(|xi| f.intercept + f.slope * xi);
    let (log_residual, max_rel_residual) = residuals(values, fitted);
    ScalingFit {
        params: [f.intercept, f.slope],
        log_residual,
        max_rel_residual,
    }
}

/// `V = C |log eta|^k`; params `[k, C]`.
pub fn polylog_fit(eta: &[f64], values: &[f64]) -> ScalingFit {
    let x: Vec<f64> = eta.iter().map(|e| e.ln().abs().ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let f = ols(&x, &y);
    let fitted = x.iter().map(|xi| (f.intercept + f.slope * xi).exp());
    let (log_residual, max_rel_residual) = residuals(values, fitted);
    ScalingFit {
        params: [f.slope, f.intercept.exp()],
        log_residual,
        max_rel_residual,
    }
}
