//! Parameter space of the Markov-switching AR(1) model.
//!
//! A model with `K` regimes is described by `K² + K` numbers laid out as
//!
//! ```text
//! [ a(1) .. a(K) | p(1,1) .. p(1,K-1) | .. | p(K,1) .. p(K,K-1) | f(1) .. f(K) ]
//! ```
//!
//! where `a` are the per-regime AR coefficients, `p(i, j)` the probability of
//! moving from state `i` to state `j` (the last column of every row is
//! implied by the row sum) and `f` the per-regime noise amplitudes.
//!
//! A parameter belongs to the admissible set when the transition matrix is
//! irreducible with entries in `(0, 1)`, `f` is not identically zero and the
//! spectral radius of `A² P'` is below one, `A = diag(a)`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ArhmcError, Result};

/// Tolerance on row sums of a transition matrix.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Entries above this threshold count as edges in the irreducibility test.
pub const EDGE_TOL: f64 = 1e-12;

/// Number of parameters for `k` regimes.
pub fn theta_len(k: usize) -> usize {
    k * k + k
}

/// Flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    pub k: usize,
    #[serde(rename = "theta")]
    pub values: Vec<f64>,
}

impl ThetaVector {
    pub fn new(k: usize, values: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(ArhmcError::Structural("regime count must be at least 1".into()));
        }
        if values.len() != theta_len(k) {
            return Err(ArhmcError::Structural(format!(
                "theta for K={k} needs {} values, got {}",
                theta_len(k),
                values.len()
            )));
        }
        Ok(Self { k, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Index of `a(i)` (0-based regime).
    pub fn a_index(k: usize, i: usize) -> usize {
        debug_assert!(i < k);
        i
    }

    /// Index of the free transition entry `p(i, j)`, `j < K - 1` (0-based).
    pub fn p_index(k: usize, i: usize, j: usize) -> usize {
        debug_assert!(i < k && j + 1 < k);
        k + i * (k - 1) + j
    }

    /// Index of `f(i)` (0-based regime).
    pub fn f_index(k: usize, i: usize) -> usize {
        debug_assert!(i < k);
        k + k * (k - 1) + i
    }

    pub fn a(&self) -> &[f64] {
        &self.values[..self.k]
    }

    pub fn f(&self) -> &[f64] {
        &self.values[self.k * self.k..]
    }

    /// Human-readable coordinate names (`a1`, `p1_1`, `f1`, ... 1-based).
    pub fn coordinate_names(k: usize) -> Vec<String> {
        let mut names = Vec::with_capacity(theta_len(k));
        names.extend((1..=k).map(|i| format!("a{i}")));
        for i in 1..=k {
            for j in 1..k {
                names.push(format!("p{i}_{j}"));
            }
        }
        names.extend((1..=k).map(|i| format!("f{i}")));
        names
    }

    /// Resolves a coordinate name or a plain 0-based index.
    ///
    /// Accepted spellings: `3`, `a2`, `f1`, `p2_1` and, when `K < 10`, `p21`.
    pub fn parse_coordinate(k: usize, name: &str) -> Result<usize> {
        let name = name.trim();
        let bad = || ArhmcError::Structural(format!("unknown theta coordinate '{name}' for K={k}"));
        if let Ok(idx) = name.parse::<usize>() {
            return if idx < theta_len(k) { Ok(idx) } else { Err(bad()) };
        }
        let lower = name.to_ascii_lowercase();
        let (head, rest) = lower.split_at(1.min(lower.len()));
        let regime = |s: &str| -> Result<usize> {
            let i: usize = s.parse().map_err(|_| bad())?;
            if i == 0 || i > k {
                return Err(bad());
            }
            Ok(i - 1)
        };
        match head {
            "a" => Ok(Self::a_index(k, regime(rest)?)),
            "f" => Ok(Self::f_index(k, regime(rest)?)),
            "p" => {
                let (si, sj) = if let Some((si, sj)) = rest.split_once('_') {
                    (si.to_string(), sj.to_string())
                } else if k < 10 && rest.len() == 2 {
                    (rest[..1].to_string(), rest[1..].to_string())
                } else {
                    return Err(bad());
                };
                let i = regime(&si)?;
                let j = regime(&sj)?;
                if j + 1 >= k {
                    return Err(ArhmcError::Structural(format!(
                        "'{name}' names the derived last column, which is not a free parameter"
                    )));
                }
                Ok(Self::p_index(k, i, j))
            }
            _ => Err(bad()),
        }
    }
}

/// Structured view of a parameter: AR coefficients, transition matrix and
/// noise amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeModel {
    pub k: usize,
    pub a: DVector<f64>,
    pub p: DMatrix<f64>,
    pub f: DVector<f64>,
}

impl RegimeModel {
    /// Builds a model and checks the row-stochastic structure of `p`.
    pub fn new(a: Vec<f64>, p: Vec<Vec<f64>>, f: Vec<f64>) -> Result<Self> {
        let k = a.len();
        if k == 0 || f.len() != k || p.len() != k || p.iter().any(|r| r.len() != k) {
            return Err(ArhmcError::Structural(format!(
                "inconsistent model dimensions: a has {}, f has {}, p is {}x{}",
                a.len(),
                f.len(),
                p.len(),
                p.first().map_or(0, |r| r.len())
            )));
        }
        let pm = DMatrix::from_fn(k, k, |i, j| p[i][j]);
        let model = Self {
            k,
            a: DVector::from_vec(a),
            p: pm,
            f: DVector::from_vec(f),
        };
        model.check_structure()?;
        Ok(model)
    }

    fn check_structure(&self) -> Result<()> {
        let values = self.a.iter().chain(self.p.iter()).chain(self.f.iter());
        if values.clone().any(|v| !v.is_finite()) {
            return Err(ArhmcError::Domain("model contains non-finite entries".into()));
        }
        for i in 0..self.k {
            let s: f64 = self.p.row(i).sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(ArhmcError::Domain(format!("row {} of P sums to {s}", i + 1)));
            }
            if self.p.row(i).iter().any(|&x| x < 0.0) {
                return Err(ArhmcError::Domain(format!("row {} of P has a negative entry", i + 1)));
            }
        }
        if self.f.iter().all(|&x| x == 0.0) {
            return Err(ArhmcError::Domain("noise amplitudes f are all zero".into()));
        }
        Ok(())
    }

    pub fn a_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.a)
    }

    /// `A^e P'`, the transfer matrix of the function `a(x)^e`.
    pub fn a_power_transfer(&self, e: i32) -> DMatrix<f64> {
        let pt = self.p.transpose();
        DMatrix::from_fn(self.k, self.k, |i, j| self.a[i].powi(e) * pt[(i, j)])
    }

    /// `V = diag(f²)`.
    pub fn v_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.f.map(|x| x * x))
    }

    pub fn stationary_distribution(&self) -> Result<DVector<f64>> {
        stationary_distribution(&self.p)
    }
}

/// Converts a flat parameter into its structured view.
pub fn theta_to_model(theta: &ThetaVector) -> Result<RegimeModel> {
    let k = theta.k;
    if k == 0 || theta.values.len() != theta_len(k) {
        return Err(ArhmcError::Structural(format!(
            "theta for K={k} needs {} values, got {}",
            theta_len(k),
            theta.values.len()
        )));
    }
    if theta.values.iter().any(|v| !v.is_finite()) {
        return Err(ArhmcError::Domain("theta contains non-finite entries".into()));
    }
    let mut p = DMatrix::zeros(k, k);
    if k == 1 {
        p[(0, 0)] = 1.0;
    } else {
        for i in 0..k {
            let mut sum = 0.0;
            for j in 0..k - 1 {
                let v = theta.values[ThetaVector::p_index(k, i, j)];
                if !(v > 0.0 && v < 1.0) {
                    return Err(ArhmcError::Domain(format!(
                        "transition probability p({},{}) = {v} outside (0,1)",
                        i + 1,
                        j + 1
                    )));
                }
                p[(i, j)] = v;
                sum += v;
            }
            let last = 1.0 - sum;
            if !(last > 0.0 && last < 1.0) {
                return Err(ArhmcError::Domain(format!(
                    "derived transition probability p({},{k}) = {last} outside (0,1)",
                    i + 1
                )));
            }
            p[(i, k - 1)] = last;
        }
    }
    let a = DVector::from_column_slice(theta.a());
    let f = DVector::from_column_slice(theta.f());
    if f.iter().all(|&x| x == 0.0) {
        return Err(ArhmcError::Domain("noise amplitudes f are all zero".into()));
    }
    Ok(RegimeModel { k, a, p, f })
}

/// Inverse of [`theta_to_model`].
pub fn model_to_theta(model: &RegimeModel) -> ThetaVector {
    let k = model.k;
    let mut values = Vec::with_capacity(theta_len(k));
    values.extend(model.a.iter());
    for i in 0..k {
        for j in 0..k.saturating_sub(1) {
            values.push(model.p[(i, j)]);
        }
    }
    values.extend(model.f.iter());
    ThetaVector { k, values }
}

/// Strong connectivity of the graph with edges `i -> j` where `p(i,j) > EDGE_TOL`.
pub fn is_irreducible(p: &DMatrix<f64>) -> bool {
    let k = p.nrows();
    if k == 0 || p.ncols() != k {
        return false;
    }
    let reach = |forward: bool| {
        let mut seen = vec![false; k];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..k {
                let w = if forward { p[(u, v)] } else { p[(v, u)] };
                if w > EDGE_TOL && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Stationary distribution `π` of an irreducible transition matrix.
///
/// Solves the `K×K` system whose first `K-1` rows are `P' - I` and whose last
/// row is all ones, with right-hand side `(0, .., 0, 1)`.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let k = p.nrows();
    if k == 0 || p.ncols() != k {
        return Err(ArhmcError::Structural("transition matrix must be square and nonempty".into()));
    }
    if !is_irreducible(p) {
        return Err(ArhmcError::Domain("transition matrix is reducible".into()));
    }
    let b = balance_matrix(p);
    let mut rhs = DVector::zeros(k);
    rhs[k - 1] = 1.0;
    b.lu()
        .solve(&rhs)
        .filter(|pi| pi.iter().all(|x| x.is_finite()))
        .ok_or_else(|| ArhmcError::Numerical("stationary distribution system is singular".into()))
}

/// The matrix `B` with `B π = (0, .., 0, 1)'`.
pub(crate) fn balance_matrix(p: &DMatrix<f64>) -> DMatrix<f64> {
    let k = p.nrows();
    DMatrix::from_fn(k, k, |r, c| {
        if r + 1 == k {
            1.0
        } else {
            p[(c, r)] - if r == c { 1.0 } else { 0.0 }
        }
    })
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(ArhmcError::Structural("spectral radius of a non-square matrix".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(ArhmcError::Domain("matrix has non-finite entries".into()));
    }
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    if m.nrows() == 1 {
        return Ok(m[(0, 0)].abs());
    }
    let eig = m.complex_eigenvalues();
    Ok(eig.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Outcome of [`validate`]; failures are carried in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub in_theta: bool,
    /// `ρ(A^β P')` keyed by the exponent `β` (printed as a string key).
    pub spectral_radii: BTreeMap<String, f64>,
    /// `Σ π(i) log|a(i)|`, `None` when some `a(i) = 0` or `π` is unavailable.
    pub lyapunov_sufficient: Option<f64>,
    /// True when the Lyapunov value is available and negative.
    pub lyapunov_stationary: bool,
    pub irreducible: bool,
    pub messages: Vec<String>,
}

impl ValidationReport {
    pub fn radius(&self, beta: f64) -> Option<f64> {
        self.spectral_radii.get(&beta_key(beta)).copied()
    }
}

fn beta_key(beta: f64) -> String {
    format!("{beta}")
}

/// Default exponents checked by [`validate`].
pub const DEFAULT_BETAS: [f64; 3] = [2.0, 4.0, 8.0];

/// Checks membership in the parameter space and the moment conditions
/// `ρ(A^β P') < 1`, plus the sufficient strict-stationarity value
/// `Σ π(i) log|a(i)|`.
pub fn validate(theta: &ThetaVector, betas: &[f64]) -> ValidationReport {
    let mut report = ValidationReport {
        in_theta: false,
        spectral_radii: BTreeMap::new(),
        lyapunov_sufficient: None,
        lyapunov_stationary: false,
        irreducible: false,
        messages: Vec::new(),
    };
    let model = match theta_to_model(theta) {
        Ok(m) => m,
        Err(e) => {
            report.messages.push(e.to_string());
            return report;
        }
    };
    validate_model_into(&model, betas, &mut report);
    report
}

/// [`validate`] for an already structured model.
pub fn validate_model(model: &RegimeModel, betas: &[f64]) -> ValidationReport {
    let mut report = ValidationReport {
        in_theta: false,
        spectral_radii: BTreeMap::new(),
        lyapunov_sufficient: None,
        lyapunov_stationary: false,
        irreducible: false,
        messages: Vec::new(),
    };
    validate_model_into(model, betas, &mut report);
    report
}

fn validate_model_into(model: &RegimeModel, betas: &[f64], report: &mut ValidationReport) {
    report.irreducible = is_irreducible(&model.p);
    if !report.irreducible {
        report.messages.push("transition matrix is reducible".into());
    }
    let pt = model.p.transpose();
    let mut betas: Vec<f64> = betas.to_vec();
    if !betas.contains(&2.0) {
        betas.push(2.0);
    }
    for &beta in &betas {
        // Integer exponents use a^β exactly; fractional ones use |a|^β.
        let apt = if beta.fract() == 0.0 {
            DMatrix::from_fn(model.k, model.k, |i, j| model.a[i].powi(beta as i32) * pt[(i, j)])
        } else {
            DMatrix::from_fn(model.k, model.k, |i, j| model.a[i].abs().powf(beta) * pt[(i, j)])
        };
        match spectral_radius(&apt) {
            Ok(r) => {
                if r >= 1.0 {
                    report.messages.push(format!("spectral radius of A^{beta} P' is {r} >= 1"));
                }
                report.spectral_radii.insert(beta_key(beta), r);
            }
            Err(e) => report.messages.push(e.to_string()),
        }
    }
    let f_nonzero = model.f.iter().any(|&x| x != 0.0);
    if !f_nonzero {
        report.messages.push("noise amplitudes f are all zero".into());
    }
    if report.irreducible {
        match stationary_distribution(&model.p) {
            Ok(pi) => {
                if model.a.iter().all(|&x| x != 0.0) {
                    let value: f64 = pi.iter().zip(model.a.iter()).map(|(p, a)| p * a.abs().ln()).sum();
                    report.lyapunov_sufficient = Some(value);
                    report.lyapunov_stationary = value < 0.0;
                } else {
                    report.messages.push("some a(i) = 0: Lyapunov sufficient value unavailable".into());
                }
            }
            Err(e) => report.messages.push(e.to_string()),
        }
    }
    let rho2 = report.radius(2.0).unwrap_or(f64::INFINITY);
    let entries_ok = model.k == 1 || model.p.iter().all(|&x| x > 0.0 && x < 1.0);
    if !entries_ok {
        report.messages.push("transition probabilities must lie in (0,1)".into());
    }
    report.in_theta = report.irreducible && rho2 < 1.0 && f_nonzero && entries_ok;
}

/// Applies a regime permutation and sign flips of the noise amplitudes.
///
/// Regime `i` of the output is regime `perm[i]` of the input; `signs[i]`
/// multiplies the output amplitude of regime `i`.
pub fn permute_regimes(model: &RegimeModel, perm: &[usize], signs: &[f64]) -> RegimeModel {
    let k = model.k;
    RegimeModel {
        k,
        a: DVector::from_fn(k, |i, _| model.a[perm[i]]),
        p: DMatrix::from_fn(k, k, |i, j| model.p[(perm[i], perm[j])]),
        f: DVector::from_fn(k, |i, _| signs[i] * model.f[perm[i]]),
    }
}

/// Canonical representative of a parameter under relabelling of the
/// regimes and sign changes of the amplitudes: `a` nondecreasing (ties by
/// `f²`), all amplitudes nonnegative.
pub fn canonicalize(theta: &ThetaVector) -> Result<ThetaVector> {
    let model = theta_to_model(theta)?;
    let k = model.k;
    let mut perm: Vec<usize> = (0..k).collect();
    perm.sort_by(|&i, &j| {
        model.a[i]
            .total_cmp(&model.a[j])
            .then((model.f[i] * model.f[i]).total_cmp(&(model.f[j] * model.f[j])))
            .then(i.cmp(&j))
    });
    let signs: Vec<f64> = perm.iter().map(|&i| if model.f[i] < 0.0 { -1.0 } else { 1.0 }).collect();
    Ok(model_to_theta(&permute_regimes(&model, &perm, &signs)))
}

/// Canonicalizes amplitude signs only, leaving the listed coordinates
/// untouched. Used when some coordinates are held fixed.
pub fn canonicalize_signs(theta: &ThetaVector, fixed: &[usize]) -> ThetaVector {
    let mut out = theta.clone();
    for i in 0..theta.k {
        let idx = ThetaVector::f_index(theta.k, i);
        if !fixed.contains(&idx) && out.values[idx] < 0.0 {
            out.values[idx] = -out.values[idx];
        }
    }
    out
}

/// Model accepted from JSON: either the structured or the flat form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelJson {
    Flat { k: usize, theta: Vec<f64> },
    Structured { k: usize, a: Vec<f64>, p: Vec<Vec<f64>>, f: Vec<f64> },
}

impl ModelJson {
    pub fn into_theta(self) -> Result<ThetaVector> {
        match self {
            ModelJson::Flat { k, theta } => ThetaVector::new(k, theta),
            ModelJson::Structured { k, a, p, f } => {
                let model = RegimeModel::new(a, p, f)?;
                if model.k != k {
                    return Err(ArhmcError::Structural(format!(
                        "declared k={k} but the model has {} regimes",
                        model.k
                    )));
                }
                Ok(model_to_theta(&model))
            }
        }
    }

    pub fn from_model(model: &RegimeModel) -> Self {
        ModelJson::Structured {
            k: model.k,
            a: model.a.iter().copied().collect(),
            p: (0..model.k).map(|i| model.p.row(i).iter().copied().collect()).collect(),
            f: model.f.iter().copied().collect(),
        }
    }
}

/// Parses either model JSON form.
pub fn parse_model_json(text: &str) -> Result<ThetaVector> {
    let parsed: ModelJson = serde_json::from_str(text)
        .map_err(|e| ArhmcError::Structural(format!("invalid model JSON: {e}")))?;
    parsed.into_theta()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn theta0() -> ThetaVector {
        ThetaVector::new(2, vec![-0.4, 0.3, 0.3, 0.2, 1.0, 0.5]).unwrap()
    }

    #[test]
    fn theta_to_model_reference_layout() {
        let m = theta_to_model(&theta0()).unwrap();
        assert_eq!(m.a.as_slice(), &[-0.4, 0.3]);
        assert_abs_diff_eq!(m.p[(0, 0)], 0.3);
        assert_abs_diff_eq!(m.p[(0, 1)], 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(m.p[(1, 0)], 0.2);
        assert_abs_diff_eq!(m.p[(1, 1)], 0.8, epsilon = 1e-15);
        assert_eq!(m.f.as_slice(), &[1.0, 0.5]);
    }

    #[test]
    fn single_regime_forces_unit_transition() {
        let m = theta_to_model(&ThetaVector::new(1, vec![0.5, 1.0]).unwrap()).unwrap();
        assert_eq!(m.p[(0, 0)], 1.0);
        assert_eq!(model_to_theta(&m).values, vec![0.5, 1.0]);
    }

    #[test]
    fn derived_column_outside_unit_interval_is_rejected() {
        let t = ThetaVector::new(2, vec![0.0, 0.0, 1.2, 0.2, 1.0, 1.0]).unwrap();
        assert!(matches!(theta_to_model(&t), Err(ArhmcError::Domain(_))));
        let t = ThetaVector::new(2, vec![0.0, 0.0, 0.6, 0.2, 1.0, 1.0]).unwrap();
        assert!(theta_to_model(&t).is_ok());
    }

    #[test]
    fn length_mismatch_is_structural() {
        assert!(matches!(ThetaVector::new(2, vec![0.0; 5]), Err(ArhmcError::Structural(_))));
        let t = ThetaVector { k: 2, values: vec![0.0; 4] };
        assert!(matches!(theta_to_model(&t), Err(ArhmcError::Structural(_))));
    }

    #[test]
    fn model_round_trip_is_exact() {
        let t = theta0();
        assert_eq!(model_to_theta(&theta_to_model(&t).unwrap()), t);
        let table6 = ThetaVector::new(2, vec![-0.342, 1.534, 0.816, 0.678, 1.505, 0.151]).unwrap();
        assert_eq!(model_to_theta(&theta_to_model(&table6).unwrap()), table6);
    }

    #[test]
    fn stationary_distribution_cases() {
        let uniform = DMatrix::from_element(3, 3, 1.0 / 3.0);
        let pi = stationary_distribution(&uniform).unwrap();
        for x in pi.iter() {
            assert_abs_diff_eq!(*x, 1.0 / 3.0, epsilon = 1e-14);
        }
        // 2x2 balance: π1 p12 = π2 p21 → π1 = 0.2 / 0.9.
        let p = DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 0.2, 0.8]);
        let pi = stationary_distribution(&p).unwrap();
        assert_abs_diff_eq!(pi[0], 2.0 / 9.0, epsilon = 1e-14);
        assert_abs_diff_eq!(pi[1], 7.0 / 9.0, epsilon = 1e-14);
        let p = DMatrix::from_row_slice(2, 2, &[0.816, 0.183, 0.678, 0.321]);
        let pi = stationary_distribution(&p).unwrap();
        assert_abs_diff_eq!(pi[0], 0.787, epsilon = 0.002);
        assert_abs_diff_eq!(pi[1], 0.212, epsilon = 0.002);
    }

    #[test]
    fn reducible_chain_is_rejected() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.5]);
        assert!(!is_irreducible(&p));
        assert!(matches!(stationary_distribution(&p), Err(ArhmcError::Domain(_))));
    }

    #[test]
    fn spectral_radius_cases() {
        assert_abs_diff_eq!(spectral_radius(&DMatrix::identity(3, 3)).unwrap(), 1.0, epsilon = 1e-12);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -0.9]));
        assert_abs_diff_eq!(spectral_radius(&d).unwrap(), 0.9, epsilon = 1e-12);
        // Rotation by 90 degrees scaled by 0.7 has complex eigenvalues ±0.7i.
        let r = DMatrix::from_row_slice(2, 2, &[0.0, -0.7, 0.7, 0.0]);
        assert_abs_diff_eq!(spectral_radius(&r).unwrap(), 0.7, epsilon = 1e-12);
        let bad = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        assert!(matches!(spectral_radius(&bad), Err(ArhmcError::Domain(_))));
    }

    #[test]
    fn spectral_radius_of_reference_model() {
        let m = theta_to_model(&theta0()).unwrap();
        let rho = spectral_radius(&m.a_power_transfer(2)).unwrap();
        // A²P' = [[0.048, 0.032], [0.063, 0.072]]; eigenvalues of a 2x2 from
        // trace and determinant.
        let (tr, det): (f64, f64) = (0.048 + 0.072, 0.048 * 0.072 - 0.032 * 0.063);
        let exact = (tr + (tr * tr - 4.0 * det).sqrt()) / 2.0;
        assert_abs_diff_eq!(rho, exact, epsilon = 1e-12);
        assert!(rho < 1.0);
    }

    #[test]
    fn validate_reference_and_boundary() {
        let r = validate(&theta0(), &DEFAULT_BETAS);
        assert!(r.in_theta, "{:?}", r.messages);
        assert!(r.irreducible);
        assert!(r.radius(8.0).unwrap() < 1.0);

        let t = ThetaVector::new(2, vec![1.0, 1.0, 0.3, 0.2, 1.0, 0.5]).unwrap();
        let r = validate(&t, &DEFAULT_BETAS);
        assert!(!r.in_theta);
        assert_abs_diff_eq!(r.lyapunov_sufficient.unwrap(), 0.0);
        assert_abs_diff_eq!(r.radius(2.0).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn explosive_regime_with_negative_lyapunov_value() {
        let t = ThetaVector::new(2, vec![-0.342, 1.534, 0.816, 0.678, 1.505, 0.151]).unwrap();
        let r = validate(&t, &DEFAULT_BETAS);
        let value = r.lyapunov_sufficient.unwrap();
        assert_abs_diff_eq!(value, -0.752, epsilon = 0.005);
        assert!(r.lyapunov_stationary);
    }

    #[test]
    fn zero_ar_coefficient_leaves_lyapunov_unavailable() {
        let t = ThetaVector::new(2, vec![0.0, 0.5, 0.3, 0.2, 1.0, 0.5]).unwrap();
        let r = validate(&t, &DEFAULT_BETAS);
        assert!(r.in_theta);
        assert!(r.lyapunov_sufficient.is_none());
    }

    #[test]
    fn canonicalize_fixed_point_and_swap() {
        let t = theta0();
        assert_eq!(canonicalize(&t).unwrap(), t);
        let swapped = model_to_theta(&permute_regimes(&theta_to_model(&t).unwrap(), &[1, 0], &[1.0, 1.0]));
        let back = canonicalize(&swapped).unwrap();
        for (x, y) in back.values.iter().zip(t.values.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn canonicalize_flips_amplitude_signs() {
        let t = ThetaVector::new(2, vec![-0.3, 0.5, 0.4, 0.3, -1.911, -1.636]).unwrap();
        let c = canonicalize(&t).unwrap();
        assert_eq!(c.f(), &[1.911, 1.636]);
    }

    #[test]
    fn coordinate_parsing() {
        assert_eq!(ThetaVector::parse_coordinate(3, "a2").unwrap(), 1);
        assert_eq!(ThetaVector::parse_coordinate(3, "p2_1").unwrap(), 5);
        assert_eq!(ThetaVector::parse_coordinate(3, "p21").unwrap(), 5);
        assert_eq!(ThetaVector::parse_coordinate(3, "f3").unwrap(), 11);
        assert_eq!(ThetaVector::parse_coordinate(3, "7").unwrap(), 7);
        assert!(ThetaVector::parse_coordinate(3, "p13").is_err());
        assert!(ThetaVector::parse_coordinate(3, "a4").is_err());
        let names = ThetaVector::coordinate_names(2);
        assert_eq!(names, vec!["a1", "a2", "p1_1", "p2_1", "f1", "f2"]);
    }

    #[test]
    fn model_json_forms() {
        let flat = parse_model_json(r#"{"k": 2, "theta": [-0.4, 0.3, 0.3, 0.2, 1.0, 0.5]}"#).unwrap();
        let structured =
            parse_model_json(r#"{"k": 2, "a": [-0.4, 0.3], "p": [[0.3, 0.7], [0.2, 0.8]], "f": [1.0, 0.5]}"#)
                .unwrap();
        assert_eq!(flat, structured);
        assert!(parse_model_json(r#"{"k": 3, "theta": [1.0]}"#).is_err());
    }
}
