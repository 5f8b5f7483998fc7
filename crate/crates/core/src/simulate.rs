//! Hidden chains, innovation generators and sample paths.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ArhmcError, Result};
use crate::model::{self, RegimeModel, DEFAULT_BETAS};
use crate::rng::{self, tag};

/// Burn-in of the AR recursion when none is given.
pub const DEFAULT_BURNIN: usize = 1000;
/// Steps discarded inside the GARCH recursion.
pub const GARCH_BURNIN: usize = 500;

/// Innovation families. Lagged forms use one extra pre-sample draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseSpec {
    /// `η_t = u_t`
    Strong,
    /// `η_t = u_t u_{t-1}`
    Weak1,
    /// `η_t = u_t² u_{t-1}`
    Weak2,
    /// `η_t = u_t / (|u_{t-1}| + 1)`
    Weak3,
    /// `η_t = h_t^{1/2} u_t`, `h_t = ω + α η_{t-1}² + β h_{t-1}`
    Garch { omega: f64, alpha: f64, beta: f64 },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if let NoiseSpec::Garch { omega, alpha, beta } = *self {
            if !(omega > 0.0) || alpha < 0.0 || beta < 0.0 || !(alpha + beta < 1.0) {
                return Err(ArhmcError::Domain(format!(
                    "GARCH parameters need omega > 0, alpha, beta >= 0 and alpha + beta < 1 \
                     (got {omega}, {alpha}, {beta})"
                )));
            }
        }
        Ok(())
    }

    /// Parses `strong`, `weak1`..`weak3` or `garch:omega,alpha,beta`.
    pub fn parse(text: &str) -> Result<Self> {
        let lower = text.trim().to_ascii_lowercase();
        let spec = match lower.as_str() {
            "strong" => NoiseSpec::Strong,
            "weak1" => NoiseSpec::Weak1,
            "weak2" => NoiseSpec::Weak2,
            "weak3" => NoiseSpec::Weak3,
            "garch" => NoiseSpec::Garch { omega: 0.2, alpha: 0.1, beta: 0.5 },
            other => {
                let params = other
                    .strip_prefix("garch:")
                    .ok_or_else(|| ArhmcError::Structural(format!("unknown noise kind '{text}'")))?;
                let v: Vec<f64> = params
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| ArhmcError::Structural(format!("bad GARCH parameters '{params}': {e}")))?;
                if v.len() != 3 {
                    return Err(ArhmcError::Structural("GARCH needs omega,alpha,beta".into()));
                }
                NoiseSpec::Garch { omega: v[0], alpha: v[1], beta: v[2] }
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `E η⁴` when it has a closed form (used as the default fourth moment of
    /// the strong-form covariance).
    pub fn fourth_moment(&self) -> Option<f64> {
        match self {
            NoiseSpec::Strong => Some(3.0),
            NoiseSpec::Weak1 => Some(9.0),
            NoiseSpec::Weak2 => Some(105.0 * 3.0),
            _ => None,
        }
    }
}

/// A simulated series with its latent quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedPath {
    pub x: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<f64>>,
    pub seed: u64,
    pub burnin: usize,
    pub spec: NoiseSpec,
}

fn draw_index<R: Rng + ?Sized>(weights: impl Iterator<Item = f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Stationary chain of length `n` (0-based states): the first state from the
/// stationary distribution, the rest from the rows of `p`.
pub fn simulate_chain<R: Rng + ?Sized>(p: &DMatrix<f64>, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    let pi = model::stationary_distribution(p)?;
    let k = p.nrows();
    let mut states = Vec::with_capacity(n);
    if n == 0 {
        return Ok(states);
    }
    if k == 1 {
        states.resize(n, 0);
        return Ok(states);
    }
    let mut s = draw_index(pi.iter().copied(), rng);
    states.push(s);
    for _ in 1..n {
        s = draw_index(p.row(s).iter().copied(), rng);
        states.push(s);
    }
    Ok(states)
}

/// Innovations of the requested family.
pub fn generate_noise<R: Rng + ?Sized>(spec: &NoiseSpec, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    let out = match *spec {
        NoiseSpec::Strong => (0..n).map(|_| normal()).collect(),
        NoiseSpec::Weak1 | NoiseSpec::Weak2 | NoiseSpec::Weak3 => {
            let u: Vec<f64> = (0..=n).map(|_| normal()).collect();
            u.windows(2)
                .map(|w| {
                    let (prev, cur) = (w[0], w[1]);
                    match spec {
                        NoiseSpec::Weak1 => cur * prev,
                        NoiseSpec::Weak2 => cur * cur * prev,
                        _ => cur / (prev.abs() + 1.0),
                    }
                })
                .collect()
        }
        NoiseSpec::Garch { omega, alpha, beta } => {
            let mut h = omega / (1.0 - alpha - beta);
            let mut eta_prev_sq = h;
            let mut out = Vec::with_capacity(n);
            for t in 0..n + GARCH_BURNIN {
                h = omega + alpha * eta_prev_sq + beta * h;
                let eta = h.sqrt() * normal();
                eta_prev_sq = eta * eta;
                if t >= GARCH_BURNIN {
                    out.push(eta);
                }
            }
            out
        }
    };
    Ok(out)
}

/// Simulates `X_t = a(Δ_t) X_{t-1} + f(Δ_t) η_t` from `X = 0`, discarding the
/// first `burnin` values. Chain and noise use substreams of `seed`.
pub fn simulate_arhmc(
    model: &RegimeModel,
    spec: &NoiseSpec,
    n: usize,
    burnin: usize,
    seed: u64,
    keep_latent: bool,
) -> Result<SimulatedPath> {
    let report = model::validate_model(model, &DEFAULT_BETAS[..1]);
    if !report.in_theta {
        return Err(ArhmcError::Domain(format!(
            "model is outside the parameter space: {}",
            report.messages.join("; ")
        )));
    }
    let total = n + burnin;
    let states = simulate_chain(&model.p, total, &mut rng::stream(seed, &[tag::CHAIN]))?;
    let eta = generate_noise(spec, total, &mut rng::stream(seed, &[tag::NOISE]))?;
    let mut x = Vec::with_capacity(n);
    let mut prev = 0.0;
    for t in 0..total {
        let s = states[t];
        prev = model.a[s] * prev + model.f[s] * eta[t];
        if !prev.is_finite() {
            return Err(ArhmcError::Numerical(format!(
                "simulated path became non-finite at step {t}: explosive configuration"
            )));
        }
        if t >= burnin {
            x.push(prev);
        }
    }
    let (states, eta) = if keep_latent {
        (Some(states[burnin..].to_vec()), Some(eta[burnin..].to_vec()))
    } else {
        (None, None)
    };
    Ok(SimulatedPath { x, states, eta, seed, burnin, spec: *spec })
}

/// Optional first differencing followed by optional demeaning.
pub fn preprocess_series(raw: &[f64], difference: bool, demean: bool) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(ArhmcError::Structural("empty series".into()));
    }
    let mut out: Vec<f64> = if difference {
        if raw.len() < 2 {
            return Err(ArhmcError::Structural("differencing needs at least two values".into()));
        }
        raw.windows(2).map(|w| w[1] - w[0]).collect()
    } else {
        raw.to_vec()
    };
    if demean {
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        out.iter_mut().for_each(|v| *v -= mean);
    }
    Ok(out)
}
