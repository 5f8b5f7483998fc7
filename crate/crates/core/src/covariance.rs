//! Asymptotic covariance of the moment estimator.
//!
//! `√n (θ̂ - θ0)` is asymptotically normal with covariance
//! `Ω = M^{-1} J' I J M^{-1}`, `M = J'J`, where `J = J_Ψ(θ0)` and `I` is the
//! long-run covariance of `Y_t = X_t (X_{t+1}, .., X_{t+N})'`. Three
//! estimators of `I` are provided: a VAR-based spectral estimator at
//! frequency zero, a closed form valid for i.i.d. noise, and a brute-force
//! batch-means oracle.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{ArhmcError, Result};
use crate::model::{theta_to_model, validate, RegimeModel, ThetaVector};
use crate::moments::{empirical_moments, jacobian_psi, numerical_rank, TransferCache, DEFAULT_RANK_TOL};
use crate::rng::tag;
use crate::simulate::{simulate_arhmc, NoiseSpec, DEFAULT_BURNIN};

pub const DEFAULT_R1: usize = 30;
pub const DEFAULT_R2: usize = 60;
pub const GAUSSIAN_MU4: f64 = 3.0;
/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;
const PSD_TOL: f64 = 1e-10;

/// Centered products `Ŷ_t = X_t (X_{t+1}, .., X_{t+N})' - ĉ`, `t = 1..n-N`.
#[derive(Debug, Clone)]
pub struct YSeries {
    /// `n_eff × N`
    pub rows: DMatrix<f64>,
    pub c_hat: Vec<f64>,
}

impl YSeries {
    pub fn n_eff(&self) -> usize {
        self.rows.nrows()
    }

    pub fn n_lags(&self) -> usize {
        self.rows.ncols()
    }
}

pub fn build_y_series(x: &[f64], n_lags: usize) -> Result<YSeries> {
    if n_lags == 0 {
        return Err(ArhmcError::Structural("need at least one lag".into()));
    }
    if x.len() <= n_lags {
        return Err(ArhmcError::Structural(format!(
            "series of length {} is too short for {n_lags} lags",
            x.len()
        )));
    }
    let c_hat = empirical_moments(x, n_lags)?;
    let n_eff = x.len() - n_lags;
    let rows = DMatrix::from_fn(n_eff, n_lags, |t, m| x[t] * x[t + m + 1] - c_hat[m]);
    Ok(YSeries { rows, c_hat })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarFit {
    pub order: usize,
    /// `φ_1 .. φ_r`, each `N × N`, so that `Ŷ_t ≈ Σ_i φ_i Ŷ_{t-i}`.
    pub phi: Vec<Vec<Vec<f64>>>,
    pub sigma_u: Vec<Vec<f64>>,
    pub aic: f64,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Least-squares moments of the zero-padded lag regression up to `r_max`:
/// the Gram matrix `Z'Z`, the cross products `Z'Y` and `Y'Y`.
struct LagMoments {
    n: usize,
    gram: DMatrix<f64>,
    cross: DMatrix<f64>,
    yy: DMatrix<f64>,
}

impl LagMoments {
    fn new(y: &YSeries, r_max: usize) -> Self {
        let (n, d) = (y.n_eff(), y.n_lags());
        let rows = &y.rows;
        let lagged = |t: usize, lag: usize| -> Option<usize> { (t >= lag).then(|| t - lag) };
        let dim = r_max * d;
        let mut gram = DMatrix::zeros(dim, dim);
        let mut cross = DMatrix::zeros(dim, d);
        let mut z = vec![0.0; dim];
        for t in 0..n {
            for lag in 1..=r_max {
                let block = &mut z[(lag - 1) * d..lag * d];
                match lagged(t, lag) {
                    Some(s) => {
                        for (m, slot) in block.iter_mut().enumerate() {
                            *slot = rows[(s, m)];
                        }
                    }
                    None => block.fill(0.0),
                }
            }
            for i in 0..dim {
                let zi = z[i];
                if zi == 0.0 {
                    continue;
                }
                for j in i..dim {
                    gram[(i, j)] += zi * z[j];
                }
                for m in 0..d {
                    cross[(i, m)] += zi * rows[(t, m)];
                }
            }
        }
        for i in 0..dim {
            for j in 0..i {
                gram[(i, j)] = gram[(j, i)];
            }
        }
        let yy = rows.transpose() * rows;
        Self { n, gram, cross, yy }
    }

    /// Coefficients `B = (Z'Z)^{-1} Z'Y` (stacked `φ_i'`) and `Σ_u`.
    fn fit(&self, r: usize, d: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if r == 0 {
            return Ok((DMatrix::zeros(0, d), &self.yy / self.n as f64));
        }
        let dim = r * d;
        let g = self.gram.view((0, 0), (dim, dim)).into_owned();
        let h = self.cross.view((0, 0), (dim, d)).into_owned();
        let chol = g.cholesky().ok_or_else(|| {
            ArhmcError::Numerical(format!("lag regression of order {r} has a singular Gram matrix; try a smaller order"))
        })?;
        let b = chol.solve(&h);
        let sigma = symmetrize(&((&self.yy - h.transpose() * &b) / self.n as f64));
        Ok((b, sigma))
    }
}

fn aic(sigma: &DMatrix<f64>, r: usize, d: usize, n: usize) -> f64 {
    let det = sigma.clone().cholesky().map(|c| {
        let l = c.l();
        (0..d).map(|i| 2.0 * l[(i, i)].ln()).sum::<f64>()
    });
    match det {
        Some(logdet) => logdet + 2.0 * (r * d * d) as f64 / n as f64,
        None => f64::INFINITY,
    }
}

fn var_fit_from(b: &DMatrix<f64>, sigma: &DMatrix<f64>, r: usize, d: usize, n: usize) -> VarFit {
    let phi = (0..r)
        .map(|i| rows_of(&b.view((i * d, 0), (d, d)).transpose().into_owned()))
        .collect();
    VarFit { order: r, phi, sigma_u: rows_of(sigma), aic: aic(sigma, r, d, n) }
}

fn check_rows(y: &YSeries, r: usize) -> Result<()> {
    let (n, d) = (y.n_eff(), y.n_lags());
    if n <= r * d + d {
        return Err(ArhmcError::Structural(format!(
            "{n} rows are not enough for a lag-{r} regression in dimension {d}"
        )));
    }
    Ok(())
}

/// Least-squares VAR(`r`) fit of the rows with zero padding before the
/// sample start.
pub fn fit_var(y: &YSeries, r: usize) -> Result<VarFit> {
    check_rows(y, r)?;
    let d = y.n_lags();
    let lm = LagMoments::new(y, r);
    let (b, sigma) = lm.fit(r, d)?;
    Ok(var_fit_from(&b, &sigma, r, d, y.n_eff()))
}

/// Default maximal order `floor(n_eff^{1/3})`.
pub fn default_r_max(n_eff: usize) -> usize {
    ((n_eff as f64).cbrt() + 1e-9).floor().max(1.0) as usize
}

fn select_with(lm: &LagMoments, r_max: usize, d: usize) -> usize {
    let mut best = (1, f64::INFINITY);
    for r in 1..=r_max {
        if let Ok((_, sigma)) = lm.fit(r, d) {
            let a = aic(&sigma, r, d, lm.n);
            if a < best.1 {
                best = (r, a);
            }
        }
    }
    best.0
}

/// AIC-minimizing order in `1..=r_max`, ties to the smallest.
pub fn select_var_order(y: &YSeries, r_max: usize) -> Result<usize> {
    if r_max == 0 {
        return Err(ArhmcError::Structural("r_max must be at least 1".into()));
    }
    let d = y.n_lags();
    let r_max = r_max.min((y.n_eff().saturating_sub(d + 1)) / d).max(1);
    check_rows(y, 1)?;
    let lm = LagMoments::new(y, r_max);
    Ok(select_with(&lm, r_max, d))
}

/// Spectral estimator `φ(1)^{-1} Σ_u φ(1)'^{-1}`, `φ(1) = I - Σ φ_i`, with
/// the VAR order given or chosen by AIC.
pub fn spectral_i(y: &YSeries, r: Option<usize>) -> Result<(DMatrix<f64>, VarFit)> {
    let d = y.n_lags();
    let (lm, order) = match r {
        Some(r) => {
            check_rows(y, r)?;
            (LagMoments::new(y, r), r)
        }
        None => {
            check_rows(y, 1)?;
            let r_max = default_r_max(y.n_eff()).min((y.n_eff() - d - 1) / d).max(1);
            let lm = LagMoments::new(y, r_max);
            let order = select_with(&lm, r_max, d);
            (lm, order)
        }
    };
    let (b, sigma) = lm.fit(order, d)?;
    let mut phi1 = DMatrix::identity(d, d);
    for i in 0..order {
        phi1 -= b.view((i * d, 0), (d, d)).transpose();
    }
    let inv = phi1
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| ArhmcError::Numerical("I - Σφ_i is singular (near unit root); try a smaller order".into()))?;
    let i_hat = symmetrize(&(&inv * &sigma * inv.transpose()));
    Ok((i_hat, var_fit_from(&b, &sigma, order, d, y.n_eff())))
}

/// Closed-form truncated `I` for i.i.d. noise with unit variance and
/// fourth moment `mu4`.
///
/// With `X_t = Σ_i d_i^t η_{t-i}` and
/// `d_i^t = a(Δ_t)..a(Δ_{t-i+1}) f(Δ_{t-i})`,
/// `I(m1, m2) = Σ_{|k|≤r1} Cov(X_0 X_{m1}, X_{-k} X_{m2-k})`, and each
/// covariance splits by the pairings of the four noise indices: all equal
/// (weight `mu4`), three ways of two distinct pairs, minus the product of
/// means. Free summation indices run over `0..=r2`.
pub fn strong_i(theta: &ThetaVector, n_lags: usize, r1: usize, r2: usize, mu4: f64) -> Result<DMatrix<f64>> {
    if n_lags == 0 || r1 == 0 || r2 == 0 {
        return Err(ArhmcError::Structural("n_lags, r1 and r2 must be at least 1".into()));
    }
    let report = validate(theta, &[2.0]);
    if !report.in_theta {
        return Err(ArhmcError::Domain(format!("parameter outside the admissible space: {}", report.messages.join("; "))));
    }
    let model = theta_to_model(theta)?;
    strong_i_model(&model, n_lags, r1, r2, mu4)
}

pub fn strong_i_model(model: &RegimeModel, n_lags: usize, r1: usize, r2: usize, mu4: f64) -> Result<DMatrix<f64>> {
    if model.k > 16 {
        return Err(ArhmcError::Structural("closed-form I supports at most 16 regimes".into()));
    }
    let pi = model.stationary_distribution()?;
    let max_len = 2 * r2 + 3 * r1 + 3 * n_lags + 8;
    let cache = TransferCache::new(model, &pi, max_len);
    let cells: Vec<(usize, usize)> = (1..=n_lags).flat_map(|a| (a..=n_lags).map(move |b| (a, b))).collect();
    let values: Vec<f64> = cells.par_iter().map(|&(m1, m2)| strong_cell(&cache, m1 as i64, m2 as i64, r1 as i64, r2 as i64, mu4)).collect();
    let mut out = DMatrix::zeros(n_lags, n_lags);
    for (&(a, b), v) in cells.iter().zip(values) {
        out[(a - 1, b - 1)] = v;
        out[(b - 1, a - 1)] = v;
    }
    Ok(out)
}

fn strong_cell(cache: &TransferCache, m1: i64, m2: i64, r1: i64, r2: i64, mu4: f64) -> f64 {
    // Times of the four factors X_0, X_{-k}, X_{m1}, X_{m2-k}; a factor
    // d_i^t is passed as (t, t - i).
    let e = |fs: &[(i64, i64)]| cache.d_product(fs);
    let nonneg = |v: &[i64]| v.iter().all(|&i| i >= 0);
    let mut total = 0.0;
    let p1: f64 = (0..=r2).map(|i1| e(&[(0, -i1), (m1, -i1)])).sum();
    for k in -r1..=r1 {
        let (t2, t4) = (-k, m2 - k);
        let mut acc = 0.0;
        // All four noise indices equal.
        let mut c1 = 0.0;
        for i1 in 0..=r2 {
            let (i2, i3, i4) = (i1 - k, m1 + i1, m2 - k + i1);
            if nonneg(&[i2, i3, i4]) {
                c1 += e(&[(0, -i1), (t2, t2 - i2), (m1, m1 - i3), (t4, t4 - i4)]);
            }
        }
        acc += mu4 * c1;
        // {X_0, X_{-k}} and {X_{m1}, X_{m2-k}} paired.
        for i1 in 0..=r2 {
            let i2 = i1 - k;
            if i2 < 0 {
                continue;
            }
            for i3 in 0..=r2 {
                let i4 = i3 + m2 - m1 - k;
                if i4 < 0 || i3 == i1 + m1 {
                    continue;
                }
                acc += e(&[(0, -i1), (t2, t2 - i2), (m1, m1 - i3), (t4, t4 - i4)]);
            }
        }
        // {X_0, X_{m1}} and {X_{-k}, X_{m2-k}} paired.
        for i1 in 0..=r2 {
            let i3 = m1 + i1;
            for i2 in 0..=r2 {
                if i1 == k + i2 {
                    continue;
                }
                let i4 = m2 + i2;
                acc += e(&[(0, -i1), (t2, t2 - i2), (m1, m1 - i3), (t4, t4 - i4)]);
            }
        }
        // {X_0, X_{m2-k}} and {X_{-k}, X_{m1}} paired.
        for i1 in 0..=r2 {
            let i4 = m2 - k + i1;
            if i4 < 0 {
                continue;
            }
            for i2 in 0..=r2 {
                let i3 = m1 + k + i2;
                if i3 < 0 || i1 == k + i2 {
                    continue;
                }
                acc += e(&[(0, -i1), (t2, t2 - i2), (m1, m1 - i3), (t4, t4 - i4)]);
            }
        }
        let p2: f64 = (0..=r2).map(|i2| e(&[(t2, t2 - i2), (t4, t2 - i2)])).sum();
        total += acc - p1 * p2;
    }
    total
}

/// Monte Carlo estimate of `I` by batch means over independent paths,
/// with entrywise standard errors.
pub fn mc_i_oracle(
    model: &RegimeModel,
    spec: &NoiseSpec,
    batch_len: usize,
    n_lags: usize,
    n_batches: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if n_batches < 2 {
        return Err(ArhmcError::Structural("need at least two batches".into()));
    }
    if batch_len <= n_lags {
        return Err(ArhmcError::Structural("batches must be longer than n_lags".into()));
    }
    let means: Vec<DVector<f64>> = (0..n_batches)
        .into_par_iter()
        .map(|b| -> Result<DVector<f64>> {
            let bseed = crate::rng::derive_seed(seed, &[tag::BATCH, b as u64]);
            let path = simulate_arhmc(model, spec, batch_len, DEFAULT_BURNIN, bseed, false)?;
            let x = &path.x;
            let n_eff = batch_len - n_lags;
            Ok(DVector::from_fn(n_lags, |m, _| {
                (0..n_eff).map(|t| x[t] * x[t + m + 1]).sum::<f64>() / n_eff as f64
            }))
        })
        .collect::<Result<_>>()?;
    let n_eff = (batch_len - n_lags) as f64;
    let bcount = n_batches as f64;
    let grand = means.iter().fold(DVector::zeros(n_lags), |acc, m| acc + m) / bcount;
    let outers: Vec<DMatrix<f64>> = means
        .iter()
        .map(|m| {
            let d = m - &grand;
            &d * d.transpose() * (n_eff * bcount / (bcount - 1.0))
        })
        .collect();
    let i_hat = outers.iter().fold(DMatrix::zeros(n_lags, n_lags), |acc, o| acc + o) / bcount;
    let mut se = DMatrix::zeros(n_lags, n_lags);
    for i in 0..n_lags {
        for j in 0..n_lags {
            let var = outers.iter().map(|o| (o[(i, j)] - i_hat[(i, j)]).powi(2)).sum::<f64>() / (bcount - 1.0);
            se[(i, j)] = (var / bcount).sqrt();
        }
    }
    Ok((symmetrize(&i_hat), se))
}

/// `Ω = M^{-1} J' I J M^{-1}` with `M = J'J`.
pub fn omega(m_hat: &DMatrix<f64>, j_hat: &DMatrix<f64>, i_hat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = j_hat.ncols();
    if m_hat.shape() != (p, p) || i_hat.shape() != (j_hat.nrows(), j_hat.nrows()) {
        return Err(ArhmcError::Structural("non-conformable sandwich factors".into()));
    }
    let rank = numerical_rank(j_hat, DEFAULT_RANK_TOL);
    if rank < p {
        return Err(ArhmcError::Domain(format!(
            "moment Jacobian has rank {rank} < {p}: the parameter is not locally identified by these moments and the sandwich covariance does not exist"
        )));
    }
    let m_inv = m_hat
        .clone()
        .try_inverse()
        .ok_or_else(|| ArhmcError::Domain("M = J'J is singular".into()))?;
    Ok(symmetrize(&(&m_inv * j_hat.transpose() * i_hat * j_hat * &m_inv)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Inference {
    pub se: Vec<f64>,
    pub z: Vec<f64>,
    pub p: Vec<f64>,
    pub ci95: Vec<(f64, f64)>,
    /// Coordinates whose standard error is zero (p reported as 0).
    pub zero_se: Vec<usize>,
    /// Coordinates held fixed during estimation (z and p reported as null).
    #[serde(default)]
    pub fixed: Vec<usize>,
}

/// Wald statistics from `Ω̂` and the sample size.
pub fn inference_report(theta: &ThetaVector, omega: &DMatrix<f64>, n: usize) -> Result<Inference> {
    inference_report_masked(theta, omega, n, &[])
}

/// Wald statistics where the `fixed` coordinates carry no sampling variability.
pub fn inference_report_masked(theta: &ThetaVector, omega: &DMatrix<f64>, n: usize, fixed: &[usize]) -> Result<Inference> {
    let p = theta.len();
    if omega.shape() != (p, p) {
        return Err(ArhmcError::Structural("Ω has the wrong dimension".into()));
    }
    if n == 0 {
        return Err(ArhmcError::Structural("sample size must be positive".into()));
    }
    let normal = Normal::standard();
    let mut out = Inference { se: vec![], z: vec![], p: vec![], ci95: vec![], zero_se: vec![], fixed: fixed.to_vec() };
    for j in 0..p {
        let th = theta.values[j];
        if fixed.contains(&j) {
            out.se.push(0.0);
            out.z.push(f64::NAN);
            out.p.push(f64::NAN);
            out.ci95.push((th, th));
            continue;
        }
        let d = omega[(j, j)];
        if d < -PSD_TOL * omega.amax().max(1.0) || !d.is_finite() {
            return Err(ArhmcError::Numerical(format!("Ω has negative diagonal entry {d} at {j}")));
        }
        let se = (d.max(0.0) / n as f64).sqrt();
        let (z, pv) = if se > 0.0 {
            let z = th / se;
            (z, 2.0 * (1.0 - normal.cdf(z.abs())))
        } else {
            out.zero_se.push(j);
            let z = if th == 0.0 { 0.0 } else { f64::INFINITY.copysign(th) };
            (z, 0.0)
        };
        out.se.push(se);
        out.z.push(z);
        out.p.push(pv);
        out.ci95.push((th - Z95 * se, th + Z95 * se));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum CovarianceMethod {
    Spectral {
        #[serde(default)]
        r: Option<usize>,
    },
    Strong {
        #[serde(default = "default_r1")]
        r1: usize,
        #[serde(default = "default_r2")]
        r2: usize,
        #[serde(default = "default_mu4")]
        mu4: f64,
    },
    McOracle {
        noise: NoiseSpec,
        #[serde(default = "default_batches")]
        n_batches: usize,
        #[serde(default = "default_batch_len")]
        batch_len: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_r1() -> usize {
    DEFAULT_R1
}
fn default_r2() -> usize {
    DEFAULT_R2
}
fn default_mu4() -> f64 {
    GAUSSIAN_MU4
}
fn default_batches() -> usize {
    200
}
fn default_batch_len() -> usize {
    10_000
}

impl Default for CovarianceMethod {
    fn default() -> Self {
        Self::Spectral { r: None }
    }
}

impl CovarianceMethod {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Spectral { .. } => "spectral",
            Self::Strong { .. } => "strong",
            Self::McOracle { .. } => "mc-oracle",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub method: String,
    pub n: usize,
    pub n_lags: usize,
    pub theta: ThetaVector,
    /// Columns of the free coordinates only when some are held fixed.
    #[serde(rename = "J_hat")]
    pub j_hat: Vec<Vec<f64>>,
    #[serde(rename = "M_hat")]
    pub m_hat: Vec<Vec<f64>>,
    #[serde(rename = "I_hat")]
    pub i_hat: Vec<Vec<f64>>,
    /// Monte Carlo standard errors of `I_hat` (oracle method only).
    pub i_se: Option<Vec<Vec<f64>>>,
    pub var_order: Option<usize>,
    /// Set when a truncated closed-form `I_hat` is not positive semidefinite.
    pub i_not_psd: bool,
    pub jacobian_rank: usize,
    pub omega: Option<Vec<Vec<f64>>>,
    pub inference: Option<Inference>,
    /// Why `omega` and `inference` are missing.
    pub omega_error: Option<String>,
}

fn is_psd(m: &DMatrix<f64>) -> bool {
    let eig = m.clone().symmetric_eigenvalues();
    let scale = m.amax().max(f64::MIN_POSITIVE);
    eig.iter().all(|&l| l >= -PSD_TOL * scale)
}

/// `I` from the chosen method.
pub fn estimate_i(x: &[f64], theta: &ThetaVector, n_lags: usize, method: &CovarianceMethod) -> Result<(DMatrix<f64>, Option<DMatrix<f64>>, Option<usize>)> {
    match method {
        CovarianceMethod::Spectral { r } => {
            let y = build_y_series(x, n_lags)?;
            let (i, fit) = spectral_i(&y, *r)?;
            Ok((i, None, Some(fit.order)))
        }
        CovarianceMethod::Strong { r1, r2, mu4 } => Ok((strong_i(theta, n_lags, *r1, *r2, *mu4)?, None, None)),
        CovarianceMethod::McOracle { noise, n_batches, batch_len, seed } => {
            let model = theta_to_model(theta)?;
            let (i, se) = mc_i_oracle(&model, noise, *batch_len, n_lags, *n_batches, *seed)?;
            Ok((i, Some(se), None))
        }
    }
}

/// Full sandwich report at `θ̂` for the series `x` (of length `n`). A
/// rank-deficient Jacobian leaves `omega` empty and records the reason.
pub fn covariance_report(x: &[f64], theta: &ThetaVector, n_lags: usize, method: &CovarianceMethod) -> Result<CovarianceReport> {
    covariance_report_masked(x, theta, n_lags, method, &[])
}

/// Report for an estimate whose `fixed` coordinates were held at known
/// values: `Ĵ` keeps only the free columns and `Ω̂` is zero on the fixed ones.
pub fn covariance_report_masked(
    x: &[f64],
    theta: &ThetaVector,
    n_lags: usize,
    method: &CovarianceMethod,
    fixed: &[usize],
) -> Result<CovarianceReport> {
    let p = theta.len();
    if let Some(&bad) = fixed.iter().find(|&&i| i >= p) {
        return Err(ArhmcError::Structural(format!("fixed coordinate {bad} out of range 0..{p}")));
    }
    let free: Vec<usize> = (0..p).filter(|i| !fixed.contains(i)).collect();
    let j = jacobian_psi(theta, n_lags)?.select_columns(&free);
    let m = j.transpose() * &j;
    let (i_hat, i_se, var_order) = estimate_i(x, theta, n_lags, method)?;
    let i_not_psd = matches!(method, CovarianceMethod::Strong { .. }) && !is_psd(&i_hat);
    let rank = numerical_rank(&j, DEFAULT_RANK_TOL);
    let (omega_m, inference, omega_error) = match omega(&m, &j, &i_hat) {
        Ok(o_free) => {
            let mut o = DMatrix::zeros(p, p);
            for (a, &ia) in free.iter().enumerate() {
                for (b, &ib) in free.iter().enumerate() {
                    o[(ia, ib)] = o_free[(a, b)];
                }
            }
            let inf = inference_report_masked(theta, &o, x.len(), fixed)?;
            (Some(rows_of(&o)), Some(inf), None)
        }
        Err(e @ ArhmcError::Domain(_)) => (None, None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    Ok(CovarianceReport {
        method: method.name().to_string(),
        n: x.len(),
        n_lags,
        theta: theta.clone(),
        j_hat: rows_of(&j),
        m_hat: rows_of(&m),
        i_hat: rows_of(&i_hat),
        i_se: i_se.as_ref().map(rows_of),
        var_order,
        i_not_psd,
        jacobian_rank: rank,
        omega: omega_m,
        inference,
        omega_error,
    })
}

/// Matrix stored as rows back into nalgebra form.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    from_rows(rows)
}
