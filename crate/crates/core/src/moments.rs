//! Theoretical and empirical moments.
//!
//! For a stationary chain with transition matrix `P` and stationary law `π`,
//! the expectation of a product of per-state functions evaluated along
//! consecutive times is a chain of transfer matrices
//!
//! ```text
//! E[g_1(Δ_t) g_2(Δ_{t-1}) .. g_{m+1}(Δ_{t-m})] = 1' Q_{g_1} .. Q_{g_m} π_{g_{m+1}}
//! Q_g(i, j) = g(i) p(j, i),      π_g(i) = g(i) π(i)
//! ```
//!
//! The lag-`k` autocovariance of the process is
//! `c_k = 1' (A P')^k (I - A² P')^{-1} V π` with `V = diag(f²)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{ArhmcError, Result};
use crate::model::{self, theta_len, theta_to_model, RegimeModel, ThetaVector};

/// Default relative tolerance of [`numerical_rank`].
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Default number of lags, `2 (K² + K)`.
pub fn default_n_lags(k: usize) -> usize {
    2 * theta_len(k)
}

/// Per-time exponents `(a_exp, f_exp)` of `a(Δ_τ)^{a_exp} f(Δ_τ)^{f_exp}`
/// over consecutive times, most recent first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExponentProfile {
    /// `(time, a_exp, f_exp)`, times strictly decreasing by one.
    pub window: Vec<(i64, u32, u32)>,
}

impl ExponentProfile {
    /// Builds a profile from arbitrary entries: exponents at equal times are
    /// added and missing times in between are filled with `(0, 0)`.
    pub fn from_entries(entries: &[(i64, u32, u32)]) -> Result<Self> {
        if entries.is_empty() {
            return Err(ArhmcError::Structural("empty exponent profile".into()));
        }
        let top = entries.iter().map(|e| e.0).max().unwrap();
        let bottom = entries.iter().map(|e| e.0).min().unwrap();
        let len = (top - bottom + 1) as usize;
        let mut window: Vec<(i64, u32, u32)> = (0..len).map(|i| (top - i as i64, 0, 0)).collect();
        for &(t, a, f) in entries {
            let slot = &mut window[(top - t) as usize];
            slot.1 += a;
            slot.2 += f;
        }
        Ok(Self { window })
    }

    /// Profile of `∏_j d_{i_j}^{t_j}` with
    /// `d_i^t = a(Δ_t) a(Δ_{t-1}) .. a(Δ_{t-i+1}) f(Δ_{t-i})`.
    pub fn from_factors(factors: &[(i64, i64)]) -> Result<Self> {
        let mut entries = Vec::new();
        for &(t, i) in factors {
            if i < 0 {
                return Err(ArhmcError::Structural(format!("negative lag index {i}")));
            }
            entries.extend((0..i).map(|j| (t - j, 1, 0)));
            entries.push((t - i, 0, 1));
        }
        Self::from_entries(&entries)
    }
}

/// Transfer-matrix product applied to a vector in place: `v <- Q_g v`.
fn apply_q(p: &DMatrix<f64>, g: &[f64], v: &mut [f64], scratch: &mut [f64]) {
    let k = g.len();
    for i in 0..k {
        let mut s = 0.0;
        for j in 0..k {
            s += p[(j, i)] * v[j];
        }
        scratch[i] = g[i] * s;
    }
    v.copy_from_slice(&scratch[..k]);
}

/// `E[∏_τ a(Δ_τ)^{a_exp} f(Δ_τ)^{f_exp}]` under the stationary chain.
pub fn chain_product_expectation(model: &RegimeModel, profile: &ExponentProfile) -> Result<f64> {
    let pi = model.stationary_distribution()?;
    Ok(chain_product_with_pi(model, &pi, profile))
}

pub(crate) fn chain_product_with_pi(model: &RegimeModel, pi: &DVector<f64>, profile: &ExponentProfile) -> f64 {
    let k = model.k;
    let g = |a_exp: u32, f_exp: u32| -> Vec<f64> {
        (0..k).map(|i| model.a[i].powi(a_exp as i32) * model.f[i].powi(f_exp as i32)).collect()
    };
    let mut iter = profile.window.iter().rev();
    let &(_, a0, f0) = iter.next().expect("nonempty profile");
    let g0 = g(a0, f0);
    let mut v: Vec<f64> = (0..k).map(|i| g0[i] * pi[i]).collect();
    let mut scratch = vec![0.0; k];
    for &(_, a, f) in iter {
        apply_q(&model.p, &g(a, f), &mut v, &mut scratch);
    }
    v.iter().sum()
}

/// Precomputed transfer matrices for fast evaluation of products of up to
/// four `d` factors: every `Q_{a^e f^h}` for `e, h ≤ 4` and powers of
/// `Q_{a^e}` up to a maximal run length.
pub(crate) struct TransferCache {
    k: usize,
    /// `q_single[e][h]`, row-major `K×K`.
    q_single: Vec<Vec<Vec<f64>>>,
    /// `q_pow[e][len]`, row-major `K×K`.
    q_pow: Vec<Vec<Vec<f64>>>,
    pi: Vec<f64>,
    g_last: Vec<Vec<Vec<f64>>>,
}

pub(crate) const MAX_FACTORS: usize = 4;

impl TransferCache {
    pub(crate) fn new(model: &RegimeModel, pi: &DVector<f64>, max_len: usize) -> Self {
        let k = model.k;
        let pt = model.p.transpose();
        let q_of = |e: u32, h: u32| -> Vec<f64> {
            let mut q = vec![0.0; k * k];
            for i in 0..k {
                let gi = model.a[i].powi(e as i32) * model.f[i].powi(h as i32);
                for j in 0..k {
                    q[i * k + j] = gi * pt[(i, j)];
                }
            }
            q
        };
        let e_max = MAX_FACTORS as u32;
        let q_single: Vec<Vec<Vec<f64>>> = (0..=e_max).map(|e| (0..=e_max).map(|h| q_of(e, h)).collect()).collect();
        let mut q_pow = Vec::new();
        for e in 0..=e_max as usize {
            let base = &q_single[e][0];
            let mut pows = Vec::with_capacity(max_len + 1);
            let mut id = vec![0.0; k * k];
            for i in 0..k {
                id[i * k + i] = 1.0;
            }
            pows.push(id);
            for l in 1..=max_len {
                let prev = &pows[l - 1];
                let mut next = vec![0.0; k * k];
                for i in 0..k {
                    for j in 0..k {
                        let mut s = 0.0;
                        for m in 0..k {
                            s += prev[i * k + m] * base[m * k + j];
                        }
                        next[i * k + j] = s;
                    }
                }
                pows.push(next);
            }
            q_pow.push(pows);
        }
        let pi_v: Vec<f64> = pi.iter().copied().collect();
        let g_last = (0..=e_max)
            .map(|e| {
                (0..=e_max)
                    .map(|h| {
                        (0..k)
                            .map(|i| model.a[i].powi(e as i32) * model.f[i].powi(h as i32) * pi_v[i])
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self { k, q_single, q_pow, pi: pi_v, g_last }
    }

    #[inline]
    fn matvec(&self, m: &[f64], v: &mut [f64; 16], scratch: &mut [f64; 16]) {
        let k = self.k;
        for i in 0..k {
            let row = &m[i * k..(i + 1) * k];
            let mut s = 0.0;
            for j in 0..k {
                s += row[j] * v[j];
            }
            scratch[i] = s;
        }
        v[..k].copy_from_slice(&scratch[..k]);
    }

    /// `E[∏_j d_{i_j}^{t_j}]` for factors given as `(t_j, s_j = t_j - i_j)`.
    pub(crate) fn d_product(&self, factors: &[(i64, i64)]) -> f64 {
        debug_assert!(factors.len() <= MAX_FACTORS && self.k <= 16);
        let mut points = [0i64; 2 * MAX_FACTORS];
        let mut np = 0;
        for &(t, s) in factors {
            points[np] = t;
            points[np + 1] = s;
            np += 2;
        }
        let pts = &mut points[..np];
        pts.sort_unstable_by(|a, b| b.cmp(a));
        let mut m = 1;
        for i in 1..np {
            if pts[i] != pts[m - 1] {
                pts[m] = pts[i];
                m += 1;
            }
        }
        let pts = &pts[..m];
        let exps_at = |tau: i64| -> (usize, usize) {
            let mut a = 0;
            let mut h = 0;
            for &(t, s) in factors {
                if s < tau && tau <= t {
                    a += 1;
                }
                if s == tau {
                    h += 1;
                }
            }
            (a, h)
        };
        let gap_exp = |upper: i64, lower: i64| -> usize {
            factors.iter().filter(|&&(t, s)| s <= lower && t >= upper).count()
        };
        let k = self.k;
        let mut v = [0.0f64; 16];
        let mut scratch = [0.0f64; 16];
        let bottom = pts[m - 1];
        let (a0, h0) = exps_at(bottom);
        v[..k].copy_from_slice(&self.g_last[a0][h0]);
        for idx in (0..m - 1).rev() {
            let upper = pts[idx];
            let lower = pts[idx + 1];
            let len = (upper - lower - 1) as usize;
            if len > 0 {
                let e = gap_exp(upper, lower);
                self.matvec(&self.q_pow[e][len], &mut v, &mut scratch);
            }
            let (a, h) = exps_at(upper);
            self.matvec(&self.q_single[a][h], &mut v, &mut scratch);
        }
        v[..k].iter().sum()
    }

    #[allow(dead_code)]
    pub(crate) fn pi(&self) -> &[f64] {
        &self.pi
    }
}

/// Moment machinery for one parameter value: `C = A P'`, `D = A² P'`,
/// `R = (I - D)^{-1}`, `π` and `w = V π`.
pub(crate) struct MomentEngine {
    pub model: RegimeModel,
    pub pi: DVector<f64>,
    pub c: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// `R w`
    pub u0: DVector<f64>,
}

impl MomentEngine {
    pub(crate) fn new(theta: &ThetaVector) -> Result<Self> {
        let model = theta_to_model(theta)?;
        Self::from_model(model)
    }

    pub(crate) fn from_model(model: RegimeModel) -> Result<Self> {
        let k = model.k;
        let d = model.a_power_transfer(2);
        let rho = model::spectral_radius(&d)?;
        if rho >= 1.0 {
            return Err(ArhmcError::Domain(format!(
                "spectral radius of A²P' is {rho} >= 1: second moments do not exist"
            )));
        }
        let pi = model::stationary_distribution(&model.p)?;
        let c = model.a_power_transfer(1);
        let r = (DMatrix::identity(k, k) - d)
            .try_inverse()
            .ok_or_else(|| ArhmcError::Numerical("I - A²P' is singular".into()))?;
        let w = DVector::from_fn(k, |i, _| model.f[i] * model.f[i] * pi[i]);
        let u0 = &r * w;
        Ok(Self { model, pi, c, r, u0 })
    }

    /// `c_0 .. c_n`
    pub(crate) fn autocovs(&self, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n + 1);
        let mut u = self.u0.clone();
        out.push(u.sum());
        for _ in 0..n {
            u = &self.c * u;
            out.push(u.sum());
        }
        out
    }

    /// Jacobian of `(c_1, .., c_n)` with respect to the flat parameter.
    pub(crate) fn jacobian(&self, n: usize) -> Result<DMatrix<f64>> {
        let model = &self.model;
        let k = model.k;
        let dim = theta_len(k);
        let pt = model.p.transpose();
        // l[r] = 1' C^r (as column vectors), u[s] = C^s R w.
        let mut l = Vec::with_capacity(n + 1);
        let mut u = Vec::with_capacity(n + 1);
        l.push(DVector::from_element(k, 1.0));
        u.push(self.u0.clone());
        let ct = self.c.transpose();
        for s in 1..=n {
            l.push(&ct * &l[s - 1]);
            u.push(&self.c * &u[s - 1]);
        }
        // lr[k] = (1' C^k R)'
        let rt = self.r.transpose();
        let lr: Vec<DVector<f64>> = l.iter().map(|x| &rt * x).collect();

        let b_inv = if k > 1 {
            Some(
                model::balance_matrix(&model.p)
                    .try_inverse()
                    .ok_or_else(|| ArhmcError::Numerical("stationary-distribution system is singular".into()))?,
            )
        } else {
            None
        };

        let mut jac = DMatrix::zeros(n, dim);
        for col in 0..dim {
            // dC, dD as dense matrices; dw as a vector.
            let (dc, dd, dw): (Option<DMatrix<f64>>, Option<DMatrix<f64>>, Option<DVector<f64>>) = if col < k {
                let i = col;
                let mut e_pt = DMatrix::zeros(k, k);
                e_pt.row_mut(i).copy_from(&pt.row(i));
                let dd = &e_pt * (2.0 * model.a[i]);
                (Some(e_pt), Some(dd), None)
            } else if col < k * k {
                let idx = col - k;
                let (i, j) = (idx / (k - 1), idx % (k - 1));
                let mut dp = DMatrix::zeros(k, k);
                dp[(i, j)] = 1.0;
                dp[(i, k - 1)] = -1.0;
                let dpt = dp.transpose();
                let dc = DMatrix::from_fn(k, k, |r, c| model.a[r] * dpt[(r, c)]);
                let dd = DMatrix::from_fn(k, k, |r, c| model.a[r] * model.a[r] * dpt[(r, c)]);
                // ∂π = -B^{-1} (∂B) π, ∂B = rows 0..K-2 of ∂P', last row zero.
                let mut db = dpt.clone();
                db.row_mut(k - 1).fill(0.0);
                let dpi = -(b_inv.as_ref().unwrap() * (db * &self.pi));
                let dw = DVector::from_fn(k, |r, _| model.f[r] * model.f[r] * dpi[r]);
                (Some(dc), Some(dd), Some(dw))
            } else {
                let i = col - k * k;
                let mut dw = DVector::zeros(k);
                dw[i] = 2.0 * model.f[i] * self.pi[i];
                (None, None, Some(dw))
            };
            let dc_u: Option<Vec<DVector<f64>>> = dc.as_ref().map(|dc| u.iter().take(n).map(|x| dc * x).collect());
            let dd_u0 = dd.as_ref().map(|dd| dd * &self.u0);
            let rdw = dw.as_ref().map(|dw| &self.r * dw);
            for lag in 1..=n {
                let mut val = 0.0;
                if let Some(dcu) = &dc_u {
                    for r in 0..lag {
                        val += l[r].dot(&dcu[lag - 1 - r]);
                    }
                }
                if let Some(ddu) = &dd_u0 {
                    val += lr[lag].dot(ddu);
                }
                if let Some(rdw) = &rdw {
                    val += l[lag].dot(rdw);
                }
                jac[(lag - 1, col)] = val;
            }
        }
        Ok(jac)
    }
}

/// `c_k(θ) = E[X_k X_0]`.
pub fn theoretical_autocov(theta: &ThetaVector, k: usize) -> Result<f64> {
    Ok(MomentEngine::new(theta)?.autocovs(k)[k])
}

/// `(c_0, .., c_n)` for a structured model.
pub fn model_autocovs(model: &RegimeModel, n: usize) -> Result<Vec<f64>> {
    Ok(MomentEngine::from_model(model.clone())?.autocovs(n))
}

/// `Ψ^N(θ) = (c_1(θ), .., c_N(θ))`.
pub fn psi_vector(theta: &ThetaVector, n_lags: usize) -> Result<Vec<f64>> {
    if n_lags == 0 {
        return Err(ArhmcError::Structural("need at least one lag".into()));
    }
    Ok(MomentEngine::new(theta)?.autocovs(n_lags)[1..].to_vec())
}

/// `ĉ_k = (n-k)^{-1} Σ_{t=1}^{n-k} X_{t+k} X_t`.
pub fn empirical_autocov(x: &[f64], k: usize) -> Result<f64> {
    let n = x.len();
    if k >= n {
        return Err(ArhmcError::Structural(format!("lag {k} needs more than {n} observations")));
    }
    let s: f64 = x[k..].iter().zip(&x[..n - k]).map(|(a, b)| a * b).sum();
    Ok(s / (n - k) as f64)
}

/// `(ĉ_1, .., ĉ_N)`.
pub fn empirical_moments(x: &[f64], n_lags: usize) -> Result<Vec<f64>> {
    (1..=n_lags).map(|k| empirical_autocov(x, k)).collect()
}

/// Analytic Jacobian `J_{Ψ^N}(θ)`, `N × (K² + K)`.
pub fn jacobian_psi(theta: &ThetaVector, n_lags: usize) -> Result<DMatrix<f64>> {
    MomentEngine::new(theta)?.jacobian(n_lags)
}

/// Finite-difference Jacobian with the coordinates that fell back to a
/// one-sided difference.
#[derive(Debug, Clone)]
pub struct FdJacobian {
    pub matrix: DMatrix<f64>,
    pub one_sided: Vec<usize>,
}

/// Central-difference Jacobian of [`psi_vector`] (test oracle).
pub fn jacobian_psi_fd(theta: &ThetaVector, n_lags: usize, h: f64) -> Result<FdJacobian> {
    let base = psi_vector(theta, n_lags)?;
    let dim = theta.len();
    let mut matrix = DMatrix::zeros(n_lags, dim);
    let mut one_sided = Vec::new();
    let shifted = |j: usize, delta: f64| -> Option<Vec<f64>> {
        let mut t = theta.clone();
        t.values[j] += delta;
        if !model::validate(&t, &[2.0]).in_theta {
            return None;
        }
        psi_vector(&t, n_lags).ok()
    };
    for j in 0..dim {
        let col: Vec<f64> = match (shifted(j, h), shifted(j, -h)) {
            (Some(up), Some(down)) => up.iter().zip(&down).map(|(u, d)| (u - d) / (2.0 * h)).collect(),
            (Some(up), None) => {
                one_sided.push(j);
                up.iter().zip(&base).map(|(u, b)| (u - b) / h).collect()
            }
            (None, Some(down)) => {
                one_sided.push(j);
                base.iter().zip(&down).map(|(b, d)| (b - d) / h).collect()
            }
            (None, None) => {
                return Err(ArhmcError::Domain(format!(
                    "coordinate {j}: both finite-difference steps leave the parameter space"
                )))
            }
        };
        for (r, v) in col.into_iter().enumerate() {
            matrix[(r, j)] = v;
        }
    }
    Ok(FdJacobian { matrix, one_sided })
}

/// Number of singular values above `rel_tol` times the largest.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}
