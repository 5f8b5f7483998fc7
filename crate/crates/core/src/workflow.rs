//! End-to-end fit of an observed series: preprocessing, estimation,
//! stationarity diagnostics and inference.

use serde::{Deserialize, Serialize};

use crate::covariance::{covariance_report_masked, CovarianceMethod, CovarianceReport};
use crate::error::Result;
use crate::estimate::{estimate, EstimationResult, SolverOptions};
use crate::model::{theta_to_model, validate, ThetaVector, DEFAULT_BETAS};
use crate::moments::default_n_lags;
use crate::simulate::preprocess_series;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub difference: bool,
    pub demean: bool,
    /// Defaults to `2 (K² + K)`.
    pub n_lags: Option<usize>,
    pub solver: SolverOptions,
    pub covariance: CovarianceMethod,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { difference: false, demean: true, n_lags: None, solver: SolverOptions::default(), covariance: CovarianceMethod::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub k: usize,
    pub n_raw: usize,
    pub n: usize,
    pub n_lags: usize,
    pub coordinate_names: Vec<String>,
    pub estimation: EstimationResult,
    pub stationary_distribution: Option<Vec<f64>>,
    /// `Σ π(i) log |a(i)|`
    pub lyapunov: Option<f64>,
    /// Diagonal of the fitted transition matrix.
    pub persistence: Option<Vec<f64>>,
    pub spectral_radius_a2p: Option<f64>,
    pub in_theta: bool,
    pub covariance: Option<CovarianceReport>,
    pub covariance_error: Option<String>,
}

/// Fits a `k`-regime model to an already loaded series.
pub fn fit_series(raw: &[f64], k: usize, opts: &FitOptions) -> Result<FitReport> {
    let x = preprocess_series(raw, opts.difference, opts.demean)?;
    let n_lags = opts.n_lags.unwrap_or_else(|| default_n_lags(k));
    let estimation = estimate(&x, k, n_lags, &opts.solver)?;
    let theta: &ThetaVector = &estimation.theta_hat;
    let report = validate(theta, &DEFAULT_BETAS);
    let model = theta_to_model(theta).ok();
    let pi = model.as_ref().and_then(|m| m.stationary_distribution().ok());
    let fixed: Vec<usize> = opts.solver.mask.iter().map(|m| m.0).collect();
    let persistence = model.as_ref().map(|m| (0..k).map(|i| m.p[(i, i)]).collect());
    let (covariance, covariance_error) = match covariance_report_masked(&x, theta, n_lags, &opts.covariance, &fixed) {
        Ok(c) => {
            let err = c.omega_error.clone();
            (Some(c), err)
        }
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(FitReport {
        k,
        n_raw: raw.len(),
        n: x.len(),
        n_lags,
        coordinate_names: ThetaVector::coordinate_names(k),
        stationary_distribution: pi.map(|p| p.iter().copied().collect()),
        lyapunov: report.lyapunov_sufficient,
        persistence,
        spectral_radius_a2p: report.radius(2.0),
        in_theta: report.in_theta,
        estimation,
        covariance,
        covariance_error,
    })
}

/// Reads a one-column CSV and fits it.
pub fn fit_workflow(csv_path: &std::path::Path, k: usize, column: Option<&str>, opts: &FitOptions) -> Result<FitReport> {
    let raw = crate::io::read_series_csv(csv_path, column)?;
    fit_series(&raw, k, opts)
}
