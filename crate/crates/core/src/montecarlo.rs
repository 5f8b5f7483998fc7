//! Replication studies: simulate, estimate and summarize many seeded paths.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{self, CovarianceMethod, Z95};
use crate::error::{ArhmcError, Result};
use crate::estimate::{estimate, EstimationResult, SolverOptions};
use crate::model::{theta_to_model, ThetaVector};
use crate::moments::{jacobian_psi, numerical_rank, DEFAULT_RANK_TOL};
use crate::rng::{derive_seed, tag};
use crate::simulate::{simulate_arhmc, NoiseSpec, DEFAULT_BURNIN};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub theta0: ThetaVector,
    pub noise: NoiseSpec,
    pub n: usize,
    #[serde(rename = "R")]
    pub replications: usize,
    #[serde(rename = "N")]
    pub n_lags: usize,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub covariance_method: Option<CovarianceMethod>,
    #[serde(default = "default_burnin")]
    pub burnin: usize,
    /// Truncation of the closed-form `I` in coverage studies.
    #[serde(default = "default_coverage_truncation")]
    pub coverage_truncation: (usize, usize),
}

fn default_burnin() -> usize {
    DEFAULT_BURNIN
}

fn default_coverage_truncation() -> (usize, usize) {
    (20, 40)
}

impl StudyConfig {
    pub fn new(theta0: ThetaVector, noise: NoiseSpec, n: usize, replications: usize, n_lags: usize) -> Self {
        Self {
            theta0,
            noise,
            n,
            replications,
            n_lags,
            solver: SolverOptions::default(),
            master_seed: 0,
            covariance_method: None,
            burnin: DEFAULT_BURNIN,
            coverage_truncation: default_coverage_truncation(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(ArhmcError::Structural("R must be at least 1".into()));
        }
        if self.n <= self.n_lags {
            return Err(ArhmcError::Structural(format!("n = {} must exceed N = {}", self.n, self.n_lags)));
        }
        self.noise.validate()?;
        self.solver.validate()?;
        theta_to_model(&self.theta0).map(|_| ())
    }

    /// Seed of replication `j`.
    pub fn replication_seed(&self, j: usize) -> u64 {
        derive_seed(self.master_seed, &[tag::REPLICATION, j as u64])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Replication {
    pub index: usize,
    pub seed: u64,
    pub result: Option<EstimationResult>,
    pub covariance: Option<covariance::CovarianceReport>,
    pub error: Option<String>,
}

impl Replication {
    pub fn converged(&self) -> bool {
        self.result.as_ref().is_some_and(|r| r.converged)
    }
}

fn simulate_replication(cfg: &StudyConfig, j: usize) -> Result<(u64, Vec<f64>)> {
    let model = theta_to_model(&cfg.theta0)?;
    let seed = cfg.replication_seed(j);
    Ok((seed, simulate_arhmc(&model, &cfg.noise, cfg.n, cfg.burnin, seed, false)?.x))
}

fn run_one(cfg: &StudyConfig, j: usize) -> Replication {
    let seed = cfg.replication_seed(j);
    let failed = |e: ArhmcError| Replication { index: j, seed, result: None, covariance: None, error: Some(e.to_string()) };
    let x = match simulate_replication(cfg, j) {
        Ok((_, x)) => x,
        Err(e) => return failed(e),
    };
    let opts = SolverOptions { seed, ..cfg.solver.clone() };
    let result = match estimate(&x, cfg.theta0.k, cfg.n_lags, &opts) {
        Ok(r) => r,
        Err(e) => return failed(e),
    };
    let (covariance, error) = match (&cfg.covariance_method, result.converged) {
        (Some(m), true) => match covariance::covariance_report(&x, &result.theta_hat, cfg.n_lags, m) {
            Ok(c) => (Some(c), None),
            Err(e) => (None, Some(e.to_string())),
        },
        _ => (None, None),
    };
    Replication { index: j, seed, result: Some(result), covariance, error }
}

/// Runs every replication on its own derived substream.
pub fn run_replications(cfg: &StudyConfig) -> Result<Vec<Replication>> {
    cfg.validate()?;
    Ok((0..cfg.replications).into_par_iter().map(|j| run_one(cfg, j)).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CoordinateSummary {
    pub name: String,
    pub truth: f64,
    pub min: f64,
    pub q1: f64,
    pub mean: f64,
    pub rmse: f64,
    pub bias: f64,
    pub median: f64,
    pub std: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryTable {
    pub coordinates: Vec<CoordinateSummary>,
    pub n_total: usize,
    pub n_converged: usize,
    pub convergence_rate: f64,
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summary statistics of a set of estimates against the truth. `std` uses
/// the `R - 1` denominator, `rmse` the `R` denominator.
pub fn summarize_estimates(estimates: &[ThetaVector], theta0: &ThetaVector, n_total: usize) -> Result<SummaryTable> {
    if estimates.is_empty() {
        return Err(ArhmcError::Structural("no converged replications to summarize".into()));
    }
    let names = ThetaVector::coordinate_names(theta0.k);
    let r = estimates.len() as f64;
    let coordinates = (0..theta0.len())
        .map(|c| {
            let mut v: Vec<f64> = estimates.iter().map(|t| t.values[c]).collect();
            v.sort_by(f64::total_cmp);
            let truth = theta0.values[c];
            let mean = v.iter().sum::<f64>() / r;
            let std = if v.len() > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt()
            } else {
                0.0
            };
            let rmse = (v.iter().map(|x| (x - truth).powi(2)).sum::<f64>() / r).sqrt();
            CoordinateSummary {
                name: names[c].clone(),
                truth,
                min: v[0],
                q1: quantile(&v, 0.25),
                mean,
                rmse,
                bias: mean - truth,
                median: quantile(&v, 0.5),
                std,
                q3: quantile(&v, 0.75),
                max: v[v.len() - 1],
            }
        })
        .collect();
    Ok(SummaryTable {
        coordinates,
        n_total,
        n_converged: estimates.len(),
        convergence_rate: estimates.len() as f64 / n_total.max(1) as f64,
    })
}

/// Summary over the converged replications.
pub fn summarize(results: &[Replication], theta0: &ThetaVector) -> Result<SummaryTable> {
    let est: Vec<ThetaVector> = results
        .iter()
        .filter(|r| r.converged())
        .map(|r| r.result.as_ref().unwrap().theta_hat.clone())
        .collect();
    summarize_estimates(&est, theta0, results.len())
}

pub const SUMMARY_ROWS: [&str; 9] = ["Min", "Q1", "Mean", "Rmse", "Bias", "Q2", "Std", "Q3", "Max"];

/// Table with one row per statistic and one column per coordinate.
pub fn write_summary_csv<W: Write>(table: &SummaryTable, mut w: W) -> Result<()> {
    let names: Vec<&str> = table.coordinates.iter().map(|c| c.name.as_str()).collect();
    writeln!(w, "statistic,{}", names.join(","))?;
    for (i, row) in SUMMARY_ROWS.iter().enumerate() {
        let vals: Vec<String> = table
            .coordinates
            .iter()
            .map(|c| {
                let v = [c.min, c.q1, c.mean, c.rmse, c.bias, c.median, c.std, c.q3, c.max][i];
                crate::io::format_float(v)
            })
            .collect();
        writeln!(w, "{row},{}", vals.join(","))?;
    }
    Ok(())
}

pub fn write_replications_csv<W: Write>(reps: &[Replication], k: usize, mut w: W) -> Result<()> {
    let names = ThetaVector::coordinate_names(k);
    writeln!(w, "index,seed,converged,iterations,residual_norm,moment_residual_norm,start_index,{}", names.join(","))?;
    for r in reps {
        match &r.result {
            Some(res) => {
                let vals: Vec<String> = res.theta_hat.values.iter().map(|v| crate::io::format_float(*v)).collect();
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    r.index,
                    r.seed,
                    res.converged,
                    res.iterations,
                    crate::io::format_float(res.residual_norm),
                    crate::io::format_float(res.moment_residual_norm),
                    res.start_index,
                    vals.join(",")
                )?;
            }
            None => {
                let blanks = vec![""; names.len()].join(",");
                writeln!(w, "{},{},false,,,,,{}", r.index, r.seed, blanks)?;
            }
        }
    }
    Ok(())
}

/// Per-replication record of the coverage study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub index: usize,
    pub converged: bool,
    /// `n (θ̂_j - θ0_j)²`
    pub scaled_sq_error: Vec<f64>,
    pub omega_strong_diag: Option<Vec<f64>>,
    pub omega_spectral_diag: Option<Vec<f64>>,
    /// Whether the spectral 95% interval contains `θ0_j`.
    pub covered: Option<Vec<bool>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub records: Vec<CoverageRecord>,
    pub mean_scaled_sq_error: Vec<f64>,
    pub mean_omega_strong: Option<Vec<f64>>,
    pub mean_omega_spectral: Option<Vec<f64>>,
    pub coverage: Option<Vec<f64>>,
    /// Replications with both covariance estimates available.
    pub n_used: usize,
}

fn coverage_one(cfg: &StudyConfig, j: usize) -> CoverageRecord {
    let p = cfg.theta0.len();
    let mut rec = CoverageRecord {
        index: j,
        converged: false,
        scaled_sq_error: vec![f64::NAN; p],
        omega_strong_diag: None,
        omega_spectral_diag: None,
        covered: None,
        error: None,
    };
    let mut run = || -> Result<()> {
        let (seed, x) = simulate_replication(cfg, j)?;
        let opts = SolverOptions { seed, ..cfg.solver.clone() };
        let res = estimate(&x, cfg.theta0.k, cfg.n_lags, &opts)?;
        rec.converged = res.converged;
        let th = &res.theta_hat;
        rec.scaled_sq_error = th.values.iter().zip(&cfg.theta0.values).map(|(a, b)| cfg.n as f64 * (a - b).powi(2)).collect();
        if !res.converged {
            return Err(ArhmcError::Numerical("estimation did not converge".into()));
        }
        let jac = jacobian_psi(th, cfg.n_lags)?;
        let rank = numerical_rank(&jac, DEFAULT_RANK_TOL);
        if rank < p {
            return Err(ArhmcError::Domain(format!(
                "moment Jacobian has rank {rank} < {p}: the sandwich covariance does not exist"
            )));
        }
        let m = jac.transpose() * &jac;
        let (r1, r2) = cfg.coverage_truncation;
        let i_s = covariance::strong_i(th, cfg.n_lags, r1, r2, crate::covariance::GAUSSIAN_MU4)?;
        let y = covariance::build_y_series(&x, cfg.n_lags)?;
        let (i_sp, _) = covariance::spectral_i(&y, None)?;
        let o_s = covariance::omega(&m, &jac, &i_s)?;
        let o_sp = covariance::omega(&m, &jac, &i_sp)?;
        let d_sp: Vec<f64> = (0..p).map(|c| o_sp[(c, c)]).collect();
        rec.covered = Some(
            (0..p)
                .map(|c| {
                    let se = (d_sp[c].max(0.0) / cfg.n as f64).sqrt();
                    (th.values[c] - cfg.theta0.values[c]).abs() <= Z95 * se
                })
                .collect(),
        );
        rec.omega_strong_diag = Some((0..p).map(|c| o_s[(c, c)]).collect());
        rec.omega_spectral_diag = Some(d_sp);
        Ok(())
    };
    if let Err(e) = run() {
        rec.error = Some(e.to_string());
    }
    rec
}

fn column_means(rows: &[&Vec<f64>], p: usize) -> Vec<f64> {
    (0..p).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / rows.len() as f64).collect()
}

/// Compares `n (θ̂ - θ0)²` with the diagonals of both sandwich estimates and
/// reports the empirical coverage of the spectral 95% intervals.
pub fn coverage_study(cfg: &StudyConfig) -> Result<CoverageSummary> {
    cfg.validate()?;
    let p = cfg.theta0.len();
    let records: Vec<CoverageRecord> = (0..cfg.replications).into_par_iter().map(|j| coverage_one(cfg, j)).collect();
    let conv: Vec<&Vec<f64>> = records.iter().filter(|r| r.converged).map(|r| &r.scaled_sq_error).collect();
    let mean_scaled_sq_error = if conv.is_empty() { vec![f64::NAN; p] } else { column_means(&conv, p) };
    let used: Vec<&CoverageRecord> = records.iter().filter(|r| r.covered.is_some()).collect();
    let n_used = used.len();
    let (ms, msp, cov) = if n_used == 0 {
        (None, None, None)
    } else {
        let s: Vec<&Vec<f64>> = used.iter().map(|r| r.omega_strong_diag.as_ref().unwrap()).collect();
        let sp: Vec<&Vec<f64>> = used.iter().map(|r| r.omega_spectral_diag.as_ref().unwrap()).collect();
        let cov = (0..p)
            .map(|c| used.iter().filter(|r| r.covered.as_ref().unwrap()[c]).count() as f64 / n_used as f64)
            .collect();
        (Some(column_means(&s, p)), Some(column_means(&sp, p)), Some(cov))
    };
    Ok(CoverageSummary { records, mean_scaled_sq_error, mean_omega_strong: ms, mean_omega_spectral: msp, coverage: cov, n_used })
}

pub fn write_coverage_csv<W: Write>(summary: &CoverageSummary, k: usize, mut w: W) -> Result<()> {
    let names = ThetaVector::coordinate_names(k);
    let mut header = vec!["index".to_string(), "converged".to_string()];
    for prefix in ["sq_err", "omega_strong", "omega_spectral", "covered"] {
        header.extend(names.iter().map(|n| format!("{prefix}_{n}")));
    }
    header.push("error".into());
    writeln!(w, "{}", header.join(","))?;
    let fmt_opt = |v: &Option<Vec<f64>>| -> Vec<String> {
        match v {
            Some(v) => v.iter().map(|x| crate::io::format_float(*x)).collect(),
            None => vec![String::new(); names.len()],
        }
    };
    for r in &summary.records {
        let mut cells = vec![r.index.to_string(), r.converged.to_string()];
        cells.extend(r.scaled_sq_error.iter().map(|x| crate::io::format_float(*x)));
        cells.extend(fmt_opt(&r.omega_strong_diag));
        cells.extend(fmt_opt(&r.omega_spectral_diag));
        match &r.covered {
            Some(c) => cells.extend(c.iter().map(|b| b.to_string())),
            None => cells.extend(vec![String::new(); names.len()]),
        }
        cells.push(r.error.as_deref().unwrap_or("").replace(',', ";"));
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn theta0() -> ThetaVector {
        ThetaVector::new(2, vec![-0.4, 0.3, 0.3, 0.2, 1.0, 0.5]).unwrap()
    }

    #[test]
    fn identical_estimates_have_zero_spread() {
        let t = theta0();
        let s = summarize_estimates(&vec![t.clone(); 5], &t, 5).unwrap();
        for c in &s.coordinates {
            assert_eq!((c.bias, c.rmse, c.std), (0.0, 0.0, 0.0));
            assert_eq!(c.min, c.max);
            assert_eq!(c.min, c.truth);
        }
        assert_eq!(s.convergence_rate, 1.0);
    }

    #[test]
    fn two_point_summary() {
        let t = theta0();
        let d = 0.1;
        let mut up = t.clone();
        up.values[0] += d;
        let mut down = t.clone();
        down.values[0] -= d;
        let s = summarize_estimates(&[up, down], &t, 4).unwrap();
        let c = &s.coordinates[0];
        assert_abs_diff_eq!(c.mean, t.values[0], epsilon = 1e-15);
        assert_abs_diff_eq!(c.bias, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.rmse, d, epsilon = 1e-15);
        assert_abs_diff_eq!(c.std, d * 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(c.median, t.values[0], epsilon = 1e-15);
        assert_eq!(s.convergence_rate, 0.5);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 1.0), 4.0);
    }

    #[test]
    fn empty_summary_is_an_error() {
        assert!(summarize(&[], &theta0()).is_err());
    }

    #[test]
    fn scalar_study_is_reproducible() {
        let t = ThetaVector::new(1, vec![0.5, 1.0]).unwrap();
        let mut cfg = StudyConfig::new(t.clone(), NoiseSpec::Strong, 500, 6, 4);
        cfg.master_seed = 9;
        cfg.solver.n_starts = 3;
        let a = run_replications(&cfg).unwrap();
        let b = run_replications(&cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.seed, y.seed);
            assert_eq!(
                x.result.as_ref().map(|r| r.theta_hat.values.clone()),
                y.result.as_ref().map(|r| r.theta_hat.values.clone())
            );
        }
        let s = summarize(&a, &t).unwrap();
        assert!(s.n_converged >= 1);
        let mut buf = Vec::new();
        write_summary_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 10);
        assert!(text.starts_with("statistic,a1,f1"));
    }

    #[test]
    fn single_replication_coverage() {
        let t = ThetaVector::new(1, vec![0.5, 1.0]).unwrap();
        let mut cfg = StudyConfig::new(t, NoiseSpec::Strong, 2000, 1, 2);
        cfg.coverage_truncation = (10, 20);
        let s = coverage_study(&cfg).unwrap();
        assert_eq!(s.records.len(), 1);
        if let Some(c) = &s.coverage {
            assert!(c.iter().all(|v| *v == 0.0 || *v == 1.0));
        }
    }
}
