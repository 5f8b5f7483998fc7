//! Moment estimator: the residual `F = ĉ - Ψ(θ)`, the estimating equation
//! `𝓕 = J_Ψ(θ)' F`, Newton and Broyden root finders, projection onto the
//! parameter space, multi-start and fixed-coordinate masks.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ArhmcError, Result};
use crate::model::{self, canonicalize, canonicalize_signs, theta_len, theta_to_model, ThetaVector};
use crate::moments::{empirical_moments, jacobian_psi, MomentEngine};
use crate::rng::{self, tag};

/// Regularization added to a singular Newton Jacobian before giving up.
pub const NEWTON_RIDGE: f64 = 1e-8;
/// Offset of Broyden's second starting point.
pub const BROYDEN_OFFSET: f64 = 1e-3;
/// Reciprocal condition number below which a linear system counts as singular.
const SINGULAR_RCOND: f64 = 1e-13;
const MAX_RESCALES: usize = 500;
const MAX_BACKTRACK: usize = 40;
const ARMIJO: f64 = 1e-4;
const PINV_RCOND: f64 = 1e-10;
const LM_DAMPING: [f64; 3] = [1e-6, 1e-3, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SolverMethod {
    Newton,
    #[default]
    Broyden,
}

impl std::str::FromStr for SolverMethod {
    type Err = ArhmcError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "newton" => Ok(Self::Newton),
            "broyden" => Ok(Self::Broyden),
            other => Err(ArhmcError::Structural(format!("unknown solver method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub method: SolverMethod,
    pub tol: f64,
    pub max_iter: usize,
    pub fd_step: f64,
    pub n_starts: usize,
    pub projection_margin: f64,
    /// `(coordinate index, fixed value)` pairs.
    pub mask: Vec<(usize, f64)>,
    /// Newton with the surrogate `-J'J` instead of a finite-difference `J_𝓕`.
    pub gauss_newton: bool,
    /// Broyden with `B0 = I` instead of a finite-difference `J_𝓕`.
    pub broyden_identity_b0: bool,
    /// Extra start tried before the random ones.
    pub init: Option<ThetaVector>,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            method: SolverMethod::Broyden,
            tol: 1e-8,
            max_iter: 200,
            fd_step: 1e-6,
            n_starts: 8,
            projection_margin: 1e-4,
            mask: Vec::new(),
            gauss_newton: false,
            broyden_identity_b0: false,
            init: None,
            seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(ArhmcError::Structural(format!("tol must be positive, got {}", self.tol)));
        }
        if !(self.projection_margin > 0.0 && self.projection_margin < 0.1) {
            return Err(ArhmcError::Structural(format!(
                "projection margin must lie in (0, 0.1), got {}",
                self.projection_margin
            )));
        }
        if !(self.fd_step > 0.0) {
            return Err(ArhmcError::Structural("fd_step must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(ArhmcError::Structural("max_iter must be at least 1".into()));
        }
        Ok(())
    }

    /// Parses `"a2=0,p1_1=0.3"` style mask specifications.
    pub fn parse_mask(k: usize, text: &str) -> Result<Vec<(usize, f64)>> {
        let mut out = Vec::new();
        for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (name, value) = item
                .split_once('=')
                .ok_or_else(|| ArhmcError::Structural(format!("mask entry `{item}` is not `coord=value`")))?;
            let idx = ThetaVector::parse_coordinate(k, name.trim())?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| ArhmcError::Structural(format!("mask value `{value}` is not a number")))?;
            out.push((idx, v));
        }
        Ok(out)
    }
}

/// Outcome of one solver start.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttemptSummary {
    pub start_index: usize,
    pub converged: bool,
    pub iterations: usize,
    pub residual_norm: f64,
    pub moment_residual_norm: f64,
    pub message: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationResult {
    pub theta_hat: ThetaVector,
    pub converged: bool,
    pub iterations: usize,
    /// `‖𝓕(θ̂)‖`
    pub residual_norm: f64,
    /// `‖F(θ̂)‖`
    pub moment_residual_norm: f64,
    pub start_index: usize,
    pub trace: Option<Vec<f64>>,
    #[serde(rename = "final_B")]
    pub final_b: Option<Vec<Vec<f64>>>,
    /// `‖B δ - Δ𝓕‖∞` after every Broyden update.
    pub secant_errors: Option<Vec<f64>>,
    pub message: Option<String>,
    pub attempts: Vec<AttemptSummary>,
}

/// `F = ĉ - Ψ(θ)`.
pub fn moment_residual(theta: &ThetaVector, c_hat: &[f64]) -> Result<Vec<f64>> {
    let engine = MomentEngine::new(theta)?;
    let psi = engine.autocovs(c_hat.len());
    Ok(c_hat.iter().zip(&psi[1..]).map(|(c, p)| c - p).collect())
}

/// `𝓕 = J_Ψ(θ)' (ĉ - Ψ(θ))`.
pub fn estimating_equation(theta: &ThetaVector, c_hat: &[f64]) -> Result<Vec<f64>> {
    let f = moment_residual(theta, c_hat)?;
    let j = jacobian_psi(theta, c_hat.len())?;
    Ok((j.transpose() * DVector::from_vec(f)).iter().copied().collect())
}

/// Maps any vector to a nearby point of the parameter space.
pub fn project_to_theta_space(raw: &ThetaVector, margin: f64) -> ThetaVector {
    let k = raw.k;
    let mut v = raw.values.clone();
    for i in 0..k {
        let ai = &mut v[ThetaVector::a_index(k, i)];
        if !ai.is_finite() {
            *ai = 0.0;
        }
        let fi = &mut v[ThetaVector::f_index(k, i)];
        if !fi.is_finite() {
            *fi = 1.0;
        } else if fi.abs() < margin {
            *fi = if *fi < 0.0 { -margin } else { margin };
        }
    }
    if k > 1 {
        for i in 0..k {
            let idx: Vec<usize> = (0..k - 1).map(|j| ThetaVector::p_index(k, i, j)).collect();
            for &q in &idx {
                v[q] = if v[q].is_finite() { v[q].clamp(margin, 1.0 - margin) } else { 1.0 / k as f64 };
            }
            let s: f64 = idx.iter().map(|&q| v[q]).sum();
            if s > 1.0 - margin {
                let free_mass = 1.0 - k as f64 * margin;
                let excess = s - (k - 1) as f64 * margin;
                for &q in &idx {
                    v[q] = margin + (v[q] - margin) * free_mass / excess;
                }
            }
        }
    }
    let mut theta = ThetaVector { k, values: v };
    for _ in 0..MAX_RESCALES {
        let rho = match theta_to_model(&theta).and_then(|m| model::spectral_radius(&m.a_power_transfer(2))) {
            Ok(r) => r,
            Err(_) => break,
        };
        if rho < 1.0 {
            break;
        }
        let factor = 0.98 / rho.sqrt();
        for i in 0..k {
            theta.values[ThetaVector::a_index(k, i)] *= factor;
        }
    }
    theta
}

/// Solver problem in the free coordinates.
struct Problem<'a> {
    c_hat: &'a [f64],
    mask: &'a [(usize, f64)],
    free: Vec<usize>,
    margin: f64,
}

struct Eval {
    g: DVector<f64>,
    f_norm: f64,
    /// Reduced Jacobian of `Ψ`.
    j: DMatrix<f64>,
}

impl<'a> Problem<'a> {
    fn new(k: usize, c_hat: &'a [f64], opts: &'a SolverOptions) -> Result<Self> {
        let dim = theta_len(k);
        for &(i, _) in &opts.mask {
            if i >= dim {
                return Err(ArhmcError::Structural(format!("mask coordinate {i} out of range 0..{dim}")));
            }
        }
        let free: Vec<usize> = (0..dim).filter(|i| !opts.mask.iter().any(|m| m.0 == *i)).collect();
        if free.is_empty() {
            return Err(ArhmcError::Structural("mask fixes every coordinate".into()));
        }
        Ok(Self { c_hat, mask: &opts.mask, free, margin: opts.projection_margin })
    }

    fn dim(&self) -> usize {
        self.free.len()
    }

    fn with_mask(&self, mut theta: ThetaVector) -> ThetaVector {
        for &(i, v) in self.mask {
            theta.values[i] = v;
        }
        theta
    }

    fn embed(&self, base: &ThetaVector, z: &DVector<f64>) -> ThetaVector {
        let mut t = base.clone();
        for (n, &i) in self.free.iter().enumerate() {
            t.values[i] = z[n];
        }
        self.with_mask(t)
    }

    fn restrict(&self, theta: &ThetaVector) -> DVector<f64> {
        DVector::from_iterator(self.free.len(), self.free.iter().map(|&i| theta.values[i]))
    }

    fn project(&self, theta: &ThetaVector) -> ThetaVector {
        self.with_mask(project_to_theta_space(&self.with_mask(theta.clone()), self.margin))
    }

    fn eval(&self, theta: &ThetaVector) -> Result<Eval> {
        let engine = MomentEngine::new(theta)?;
        let n = self.c_hat.len();
        let psi = engine.autocovs(n);
        let f = DVector::from_iterator(n, self.c_hat.iter().zip(&psi[1..]).map(|(c, p)| c - p));
        let j = engine.jacobian(n)?.select_columns(&self.free);
        let g = j.transpose() * &f;
        if g.iter().any(|x| !x.is_finite()) {
            return Err(ArhmcError::Numerical("non-finite estimating equation".into()));
        }
        Ok(Eval { g, f_norm: f.norm(), j })
    }

    /// Central differences of the reduced `𝓕`, one-sided where a step leaves
    /// the domain.
    fn fd_jacobian(&self, theta: &ThetaVector, base: &DVector<f64>, h: f64) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let mut jac = DMatrix::zeros(d, d);
        for (col, &i) in self.free.iter().enumerate() {
            let shifted = |delta: f64| -> Option<DVector<f64>> {
                let mut t = theta.clone();
                t.values[i] += delta;
                self.eval(&t).ok().map(|e| e.g)
            };
            let column = match (shifted(h), shifted(-h)) {
                (Some(up), Some(down)) => (up - down) / (2.0 * h),
                (Some(up), None) => (up - base) / h,
                (None, Some(down)) => (base - down) / h,
                (None, None) => {
                    return Err(ArhmcError::Numerical(format!("coordinate {i}: no valid finite-difference step")))
                }
            };
            jac.set_column(col, &column);
        }
        Ok(jac)
    }
}

/// Solves `m x = b`, returning `None` when `m` is numerically singular.
fn solve(m: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if m.iter().any(|x| !x.is_finite()) {
        return None;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    if !(max > 0.0) || sv.min() <= SINGULAR_RCOND * max {
        return None;
    }
    let x = m.clone().lu().solve(b)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

struct Attempt {
    theta: ThetaVector,
    eval: Option<Eval>,
    converged: bool,
    iterations: usize,
    trace: Vec<f64>,
    final_b: Option<DMatrix<f64>>,
    secant_errors: Option<Vec<f64>>,
    message: Option<String>,
}

impl Attempt {
    fn failed(theta: ThetaVector, iterations: usize, trace: Vec<f64>, message: String) -> Self {
        Self { theta, eval: None, converged: false, iterations, trace, final_b: None, secant_errors: None, message: Some(message) }
    }

    fn residual_norm(&self) -> f64 {
        self.eval.as_ref().map_or(f64::INFINITY, |e| e.g.norm())
    }

    fn f_norm(&self) -> f64 {
        self.eval.as_ref().map_or(f64::INFINITY, |e| e.f_norm)
    }
}

/// Globalized update: the proposed step `s` (with `θ_next = θ - s`) is kept
/// when it is a descent direction of `½‖F‖²`, otherwise minimum-norm
/// Gauss–Newton and then increasingly damped Levenberg steps replace it; each
/// is backtracked until `‖F‖` decreases.
fn safeguarded_step(p: &Problem, theta: &ThetaVector, cur: &Eval, proposal: Option<DVector<f64>>) -> Option<(ThetaVector, Eval)> {
    let z = p.restrict(theta);
    let phi0 = 0.5 * cur.f_norm * cur.f_norm;
    let try_dir = |s: &DVector<f64>| -> Option<(ThetaVector, Eval)> {
        let slope = cur.g.dot(s);
        if !(slope < 0.0) {
            return None;
        }
        let mut t = 1.0;
        for _ in 0..MAX_BACKTRACK {
            let cand = p.project(&p.embed(theta, &(&z - s * t)));
            if let Ok(e) = p.eval(&cand) {
                if 0.5 * e.f_norm * e.f_norm <= phi0 + ARMIJO * t * slope {
                    return Some((cand, e));
                }
            }
            t *= 0.5;
        }
        None
    };
    if let Some(res) = proposal.as_ref().and_then(&try_dir) {
        return Some(res);
    }
    let jtj = cur.j.transpose() * &cur.j;
    let scale = jtj.diagonal().amax() + 1e-300;
    if let Some(res) = jtj.clone().pseudo_inverse(PINV_RCOND * scale).ok().and_then(|pinv| try_dir(&-(pinv * &cur.g))) {
        return Some(res);
    }
    for mu in LM_DAMPING {
        let lm = &jtj + DMatrix::identity(p.dim(), p.dim()) * (mu * scale);
        if let Some(res) = lm.lu().solve(&cur.g).and_then(|s| try_dir(&-s)) {
            return Some(res);
        }
    }
    None
}

fn newton_attempt(p: &Problem, init: &ThetaVector, opts: &SolverOptions) -> Attempt {
    let mut theta = p.project(init);
    let mut cur = match p.eval(&theta) {
        Ok(e) => e,
        Err(e) => return Attempt::failed(theta, 0, vec![], e.to_string()),
    };
    let mut trace = vec![cur.g.norm()];
    let mut iterations = 0;
    let mut stalled = false;
    while cur.g.norm() >= opts.tol && iterations < opts.max_iter {
        iterations += 1;
        let jac = if opts.gauss_newton {
            Ok(-(cur.j.transpose() * &cur.j))
        } else {
            p.fd_jacobian(&theta, &cur.g, opts.fd_step)
        };
        let jac = match jac {
            Ok(j) => j,
            Err(e) => return Attempt::failed(theta, iterations, trace, e.to_string()),
        };
        let step = match solve(&jac, &cur.g) {
            Some(s) => s,
            None => {
                let ridged = &jac + DMatrix::identity(p.dim(), p.dim()) * NEWTON_RIDGE;
                match ridged.lu().solve(&cur.g).filter(|s| s.iter().all(|v| v.is_finite())) {
                    Some(s) => s,
                    None => {
                        return Attempt::failed(theta, iterations, trace, "singular Newton Jacobian".into());
                    }
                }
            }
        };
        match safeguarded_step(p, &theta, &cur, Some(step)) {
            Some((t, e)) => {
                theta = t;
                cur = e;
            }
            None => {
                stalled = true;
                break;
            }
        }
        trace.push(cur.g.norm());
    }
    let converged = cur.g.norm() < opts.tol;
    let message = match (converged, stalled) {
        (true, _) => None,
        (false, true) => Some("no step decreases the moment residual".to_string()),
        (false, false) => Some("iteration limit reached".to_string()),
    };
    Attempt { theta, eval: Some(cur), converged, iterations, trace, final_b: None, secant_errors: None, message }
}

fn broyden_attempt(p: &Problem, init0: &ThetaVector, init1: &ThetaVector, b0: Option<DMatrix<f64>>, opts: &SolverOptions) -> Attempt {
    let theta0 = p.project(init0);
    let mut theta = p.project(init1);
    let (prev, mut cur) = match (p.eval(&theta0), p.eval(&theta)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Attempt::failed(theta, 0, vec![], e.to_string()),
    };
    let fresh_b = |t: &ThetaVector, g: &DVector<f64>| -> Result<DMatrix<f64>> {
        if opts.broyden_identity_b0 {
            Ok(DMatrix::identity(p.dim(), p.dim()))
        } else {
            p.fd_jacobian(t, g, opts.fd_step)
        }
    };
    let mut b = match b0.map(Ok).unwrap_or_else(|| fresh_b(&theta, &cur.g)) {
        Ok(b) => b,
        Err(e) => return Attempt::failed(theta, 0, vec![], e.to_string()),
    };
    let mut trace = vec![prev.g.norm(), cur.g.norm()];
    let mut secant = Vec::new();
    let mut reset_used = false;
    let mut iterations = 0;
    let mut delta = p.restrict(&theta) - p.restrict(&theta0);
    let mut dg = &cur.g - &prev.g;
    let mut message = None;
    loop {
        // Rank-one secant update with the latest step.
        let dd = delta.norm_squared();
        if dd > 0.0 {
            let corr = (&dg - &b * &delta) / dd;
            b += corr * delta.transpose();
            secant.push((&b * &delta - &dg).amax());
        }
        if cur.g.norm() < opts.tol {
            break;
        }
        if iterations >= opts.max_iter {
            message = Some("iteration limit reached".to_string());
            break;
        }
        if delta.norm() < opts.tol {
            message = Some("step size below tolerance before the residual".to_string());
            break;
        }
        iterations += 1;
        let step = match solve(&b, &cur.g) {
            Some(s) => Some(s),
            None if !reset_used => {
                reset_used = true;
                match fresh_b(&theta, &cur.g) {
                    Ok(nb) => {
                        b = nb;
                        solve(&b, &cur.g)
                    }
                    Err(_) => None,
                }
            }
            None => None,
        };
        let Some(step) = step else {
            message = Some("singular Broyden matrix".to_string());
            break;
        };
        let z_old = p.restrict(&theta);
        let Some((next, next_eval)) = safeguarded_step(p, &theta, &cur, Some(step)) else {
            message = Some("no step decreases the moment residual".to_string());
            break;
        };
        delta = p.restrict(&next) - z_old;
        dg = &next_eval.g - &cur.g;
        theta = next;
        cur = next_eval;
        trace.push(cur.g.norm());
    }
    let converged = cur.g.norm() < opts.tol;
    Attempt {
        theta,
        eval: Some(cur),
        converged,
        iterations,
        trace,
        final_b: Some(b),
        secant_errors: Some(secant),
        message: if converged { None } else { message },
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn finish(p: &Problem, attempt: Attempt, start_index: usize, attempts: Vec<AttemptSummary>) -> EstimationResult {
    let Attempt { theta, eval, converged, iterations, trace, final_b, secant_errors, message } = attempt;
    let residual_norm = eval.as_ref().map_or(f64::INFINITY, |e| e.g.norm());
    let moment_residual_norm = eval.as_ref().map_or(f64::INFINITY, |e| e.f_norm);
    let theta_hat = if p.mask.is_empty() {
        canonicalize(&theta).unwrap_or(theta)
    } else {
        let fixed: Vec<usize> = p.mask.iter().map(|m| m.0).collect();
        canonicalize_signs(&theta, &fixed)
    };
    EstimationResult {
        theta_hat,
        converged,
        iterations,
        residual_norm,
        moment_residual_norm,
        start_index,
        trace: Some(trace),
        final_b: final_b.as_ref().map(matrix_rows),
        secant_errors,
        message,
        attempts,
    }
}

fn summary(i: usize, a: &Attempt) -> AttemptSummary {
    AttemptSummary {
        start_index: i,
        converged: a.converged,
        iterations: a.iterations,
        residual_norm: a.residual_norm(),
        moment_residual_norm: a.f_norm(),
        message: a.message.clone(),
    }
}

/// Newton iteration from one start.
pub fn newton_solve(c_hat: &[f64], init: &ThetaVector, opts: &SolverOptions) -> Result<EstimationResult> {
    opts.validate()?;
    let p = Problem::new(init.k, c_hat, opts)?;
    let a = newton_attempt(&p, init, opts);
    let s = summary(0, &a);
    Ok(finish(&p, a, 0, vec![s]))
}

/// Broyden iteration from two starts; `b0 = None` uses a finite-difference
/// Jacobian at `init1` (or the identity when requested by the options).
pub fn broyden_solve(
    c_hat: &[f64],
    init0: &ThetaVector,
    init1: &ThetaVector,
    b0: Option<DMatrix<f64>>,
    opts: &SolverOptions,
) -> Result<EstimationResult> {
    opts.validate()?;
    if init0.k != init1.k {
        return Err(ArhmcError::Structural("starting points have different K".into()));
    }
    let p = Problem::new(init0.k, c_hat, opts)?;
    if let Some(b) = &b0 {
        if b.nrows() != p.dim() || b.ncols() != p.dim() {
            return Err(ArhmcError::Structural(format!("B0 must be {0}x{0}", p.dim())));
        }
    }
    let a = broyden_attempt(&p, init0, init1, b0, opts);
    let s = summary(0, &a);
    Ok(finish(&p, a, 0, vec![s]))
}

/// Latin-hypercube draws over `a ∈ (-0.95, 0.95)`, free transition entries
/// in `(0.05, 0.95)` and amplitudes in `(0.1, 2) · scale`.
pub fn latin_hypercube_starts(k: usize, n: usize, scale: f64, seed: u64) -> Vec<ThetaVector> {
    let dim = theta_len(k);
    let mut rng = rng::stream(seed, &[tag::STARTS]);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dim);
    for c in 0..dim {
        let mut strata: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            strata.swap(i, rng.random_range(0..=i));
        }
        let (lo, hi) = if c < k {
            (-0.95, 0.95)
        } else if c < k * k {
            (0.05, 0.95)
        } else {
            (0.1 * scale, 2.0 * scale)
        };
        cols.push(
            strata
                .into_iter()
                .map(|s| {
                    let u: f64 = rng.random();
                    lo + (hi - lo) * (s as f64 + u) / n as f64
                })
                .collect(),
        );
    }
    (0..n)
        .map(|i| ThetaVector { k, values: cols.iter().map(|c| c[i]).collect() })
        .collect()
}

/// Multi-start estimation from precomputed empirical moments `ĉ_1..ĉ_N`.
/// `scale` sets the amplitude range of the random starts.
pub fn estimate_from_moments(c_hat: &[f64], k: usize, scale: f64, opts: &SolverOptions) -> Result<EstimationResult> {
    opts.validate()?;
    if k == 0 {
        return Err(ArhmcError::Structural("K must be at least 1".into()));
    }
    if c_hat.is_empty() {
        return Err(ArhmcError::Structural("need at least one lag".into()));
    }
    if c_hat.iter().any(|c| !c.is_finite()) {
        return Err(ArhmcError::Numerical("non-finite empirical moments".into()));
    }
    if c_hat.iter().all(|&c| c == 0.0) {
        return Err(ArhmcError::Domain("all empirical autocovariances are zero".into()));
    }
    let p = Problem::new(k, c_hat, opts)?;
    let mut starts = Vec::new();
    if let Some(init) = &opts.init {
        if init.k != k {
            return Err(ArhmcError::Structural(format!("initial point has K = {}, expected {k}", init.k)));
        }
        starts.push(init.clone());
    }
    starts.extend(latin_hypercube_starts(k, opts.n_starts, scale, opts.seed));
    if starts.is_empty() {
        return Err(ArhmcError::Structural("no starting points".into()));
    }
    let attempts: Vec<Attempt> = starts
        .par_iter()
        .map(|s| match opts.method {
            SolverMethod::Newton => newton_attempt(&p, s, opts),
            SolverMethod::Broyden => {
                let s0 = p.project(s);
                let shifted = ThetaVector { k, values: s0.values.iter().map(|v| v + BROYDEN_OFFSET).collect() };
                broyden_attempt(&p, &s0, &p.project(&shifted), None, opts)
            }
        })
        .collect();
    let summaries: Vec<AttemptSummary> = attempts.iter().enumerate().map(|(i, a)| summary(i, a)).collect();
    let converged_best = attempts
        .iter()
        .enumerate()
        .filter(|(_, a)| a.converged)
        .min_by(|(i, a), (j, b)| a.f_norm().total_cmp(&b.f_norm()).then(i.cmp(j)))
        .map(|(i, _)| i);
    let best = converged_best.unwrap_or_else(|| {
        attempts
            .iter()
            .enumerate()
            .min_by(|(i, a), (j, b)| a.residual_norm().total_cmp(&b.residual_norm()).then(i.cmp(j)))
            .map(|(i, _)| i)
            .unwrap()
    });
    let chosen = attempts.into_iter().nth(best).unwrap();
    let mut result = finish(&p, chosen, best, summaries);
    if converged_best.is_none() && result.message.is_none() {
        result.message = Some("no start converged".into());
    }
    Ok(result)
}

/// Multi-start estimation of a `K`-regime model from a (preprocessed) series.
pub fn estimate(series: &[f64], k: usize, n_lags: usize, opts: &SolverOptions) -> Result<EstimationResult> {
    if series.len() <= n_lags {
        return Err(ArhmcError::Structural(format!(
            "series of length {} is too short for {n_lags} lags",
            series.len()
        )));
    }
    if n_lags == 0 {
        return Err(ArhmcError::Structural("need at least one lag".into()));
    }
    let c_hat = empirical_moments(series, n_lags)?;
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let sd = (series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
    estimate_from_moments(&c_hat, k, scale, opts)
}
