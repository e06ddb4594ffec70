//! DDPM machinery over pixel spectra.
//!
//! Timesteps are 1-based throughout: `t = 1` is the least noisy state and
//! `t = T` the last. Closed-form forward sampling is
//! `x_t = sqrt(ᾱ_t)·x_0 + sqrt(1 − ᾱ_t)·ε`, and the reverse step is
//! `x_{t−1} = μ_θ(x_t, t) + σ_t·z` with
//! `μ_θ = (x_t − β_t/sqrt(1 − ᾱ_t)·ε_θ) / sqrt(α_t)`.

use std::collections::BTreeMap;

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::hsi::SpectrumBatch;
use crate::numerics::RngStream;

/// Which fixed variance the reverse step uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReverseVariance {
    /// `σ_t² = β_t`.
    #[default]
    Beta,
    /// `σ_t² = β̃_t = (1 − ᾱ_{t−1}) / (1 − ᾱ_t) · β_t`.
    PosteriorBetaTilde,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    reverse_variance: ReverseVariance,
}

/// Linear β schedule from `beta_1` at `t = 1` to `beta_t` at `t = T`.
pub fn make_schedule(t_steps: usize, beta_1: f64, beta_t: f64) -> Result<VarianceSchedule> {
    if t_steps == 0 {
        return Err(Error::InvalidArgument("schedule needs T >= 1".into()));
    }
    if !(beta_1 > 0.0 && beta_1 <= beta_t && beta_t < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < beta_1 <= beta_T < 1, got {beta_1}, {beta_t}"
        )));
    }
    if t_steps > 1 && beta_1 == beta_t {
        return Err(Error::InvalidArgument(
            "beta must be strictly increasing when T > 1".into(),
        ));
    }
    let beta: Vec<f64> = (0..t_steps)
        .map(|i| {
            if t_steps == 1 {
                beta_1
            } else {
                beta_1 + (beta_t - beta_1) * i as f64 / (t_steps - 1) as f64
            }
        })
        .collect();
    VarianceSchedule::from_betas(beta)
}

impl VarianceSchedule {
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::InvalidArgument("empty schedule".into()));
        }
        if beta.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::InvalidArgument("betas must lie in (0, 1)".into()));
        }
        if beta.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("betas must be strictly increasing".into()));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
            reverse_variance: ReverseVariance::Beta,
        })
    }

    pub fn with_reverse_variance(mut self, v: ReverseVariance) -> Self {
        self.reverse_variance = v;
        self
    }

    pub fn reverse_variance(&self) -> ReverseVariance {
        self.reverse_variance
    }

    /// Number of timesteps `T`.
    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.len() {
            return Err(Error::TimestepOutOfRange { t, max: self.len() });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    /// `ᾱ_{t−1}` with `ᾱ_0 = 1`.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 1 {
            1.0
        } else {
            self.alpha_bar[t - 2]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Reverse-step standard deviation `σ_t`.
    pub fn sigma(&self, t: usize) -> f64 {
        match self.reverse_variance {
            ReverseVariance::Beta => self.beta(t).sqrt(),
            ReverseVariance::PosteriorBetaTilde => {
                ((1.0 - self.alpha_bar_prev(t)) / (1.0 - self.alpha_bar(t)) * self.beta(t)).sqrt()
            }
        }
    }
}

/// Affine map applied to spectra before they enter the diffusion process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataMap {
    /// Raw `[0, 1]` values.
    #[default]
    Identity,
    /// `x ↦ 2x − 1`, so `[0, 1]` becomes `[−1, 1]`.
    SignedUnit,
}

impl DataMap {
    pub fn scale(self) -> f64 {
        match self {
            DataMap::Identity => 1.0,
            DataMap::SignedUnit => 2.0,
        }
    }

    pub fn offset(self) -> f64 {
        match self {
            DataMap::Identity => 0.0,
            DataMap::SignedUnit => -1.0,
        }
    }

    pub fn apply(self, x: &Array2<f64>) -> Array2<f64> {
        match self {
            DataMap::Identity => x.clone(),
            _ => x.mapv(|v| self.scale() * v + self.offset()),
        }
    }

    pub fn invert(self, x: &Array2<f64>) -> Array2<f64> {
        match self {
            DataMap::Identity => x.clone(),
            _ => x.mapv(|v| (v - self.offset()) / self.scale()),
        }
    }
}

/// A noise-prediction network `ε_θ(x_t, t)` with an input vector-Jacobian
/// product, evaluated deterministically (no dropout).
pub trait NoisePredictor {
    type Tape;

    fn bands(&self) -> usize;

    /// Map applied to `[0, 1]` spectra before diffusion.
    fn data_map(&self) -> DataMap {
        DataMap::Identity
    }

    fn forward(&self, x_t: &Array2<f64>, t: usize) -> Result<(Array2<f64>, Self::Tape)>;

    /// `Jᵀ·upstream`, where `J = ∂ε_θ/∂x_t` at the taped point.
    fn input_vjp(&self, tape: &Self::Tape, upstream: &Array2<f64>) -> Result<Array2<f64>>;

    fn predict(&self, x_t: &Array2<f64>, t: usize) -> Result<Array2<f64>> {
        self.forward(x_t, t).map(|(p, _)| p)
    }
}

/// `ε_θ ≡ 0`, for tests and for sanity baselines.
#[derive(Debug, Clone, Copy)]
pub struct ZeroPredictor {
    pub bands: usize,
}

impl NoisePredictor for ZeroPredictor {
    type Tape = (usize, usize);

    fn bands(&self) -> usize {
        self.bands
    }

    fn forward(&self, x_t: &Array2<f64>, _t: usize) -> Result<(Array2<f64>, Self::Tape)> {
        Ok((Array2::zeros(x_t.dim()), x_t.dim()))
    }

    fn input_vjp(&self, tape: &Self::Tape, _upstream: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(Array2::zeros(*tape))
    }
}

fn check_same(context: &'static str, a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(shape_err(context, format!("{:?}", a.dim()), format!("{:?}", b.dim())));
    }
    Ok(())
}

/// `sqrt(ᾱ_t)·x0 + sqrt(1 − ᾱ_t)·eps`.
pub fn q_sample(
    x0: &Array2<f64>,
    t: usize,
    eps: &Array2<f64>,
    sched: &VarianceSchedule,
) -> Result<Array2<f64>> {
    sched.check_t(t)?;
    check_same("q_sample", x0, eps)?;
    let a = sched.alpha_bar(t).sqrt();
    let s = (1.0 - sched.alpha_bar(t)).sqrt();
    Ok(Zip::from(x0).and(eps).map_collect(|&x, &e| a * x + s * e))
}

/// Per-row timesteps variant of [`q_sample`], used by training.
pub fn q_sample_rows(
    x0: &Array2<f64>,
    ts: &[usize],
    eps: &Array2<f64>,
    sched: &VarianceSchedule,
) -> Result<Array2<f64>> {
    check_same("q_sample_rows", x0, eps)?;
    if ts.len() != x0.nrows() {
        return Err(shape_err("q_sample_rows timesteps", x0.nrows(), ts.len()));
    }
    let mut out = Array2::zeros(x0.dim());
    for (i, &t) in ts.iter().enumerate() {
        sched.check_t(t)?;
        let a = sched.alpha_bar(t).sqrt();
        let s = (1.0 - sched.alpha_bar(t)).sqrt();
        for j in 0..x0.ncols() {
            out[[i, j]] = a * x0[[i, j]] + s * eps[[i, j]];
        }
    }
    Ok(out)
}

/// `μ_θ(x_t, t)` from a noise prediction.
pub fn posterior_mean(
    x_t: &Array2<f64>,
    t: usize,
    eps_pred: &Array2<f64>,
    sched: &VarianceSchedule,
) -> Result<Array2<f64>> {
    sched.check_t(t)?;
    check_same("posterior_mean", x_t, eps_pred)?;
    let inv_sqrt_alpha = 1.0 / sched.alpha(t).sqrt();
    let coef = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    Ok(Zip::from(x_t)
        .and(eps_pred)
        .map_collect(|&x, &e| inv_sqrt_alpha * (x - coef * e)))
}

/// One ancestral step `x_t → x_{t−1}`; `noise` must be zero at `t = 1`.
pub fn ddpm_step(
    x_t: &Array2<f64>,
    t: usize,
    eps_pred: &Array2<f64>,
    noise: &Array2<f64>,
    sched: &VarianceSchedule,
) -> Result<Array2<f64>> {
    check_same("ddpm_step noise", x_t, noise)?;
    let mut mean = posterior_mean(x_t, t, eps_pred, sched)?;
    if t == 1 {
        if noise.iter().any(|v| *v != 0.0) {
            return Err(Error::InvalidArgument("noise must be zero at t = 1".into()));
        }
        return Ok(mean);
    }
    let sigma = sched.sigma(t);
    Zip::from(&mut mean).and(noise).for_each(|m, &z| *m += sigma * z);
    Ok(mean)
}

/// Ancestral sampling output: the final batch plus requested intermediates.
#[derive(Debug, Clone)]
pub struct Generation {
    pub samples: SpectrumBatch,
    /// `t ↦ x_t` in data space; `0` is the final sample, `T` the initial draw.
    pub checkpoints: BTreeMap<usize, SpectrumBatch>,
}

/// Draw `n` spectra by running the reverse chain from `t = T` down to 1.
///
/// Each row owns a substream `rng.split_index(row)`, consumed once for the
/// initial draw and once per step, so rows are reproducible independently.
pub fn generate_spectra<M: NoisePredictor>(
    model: &M,
    n: usize,
    sched: &VarianceSchedule,
    rng: &RngStream,
    checkpoints: &[usize],
) -> Result<Generation> {
    if n == 0 {
        return Err(Error::InvalidArgument("generate_spectra needs n >= 1".into()));
    }
    let t_max = sched.len();
    if let Some(&bad) = checkpoints.iter().find(|&&t| t > t_max) {
        return Err(Error::TimestepOutOfRange { t: bad, max: t_max });
    }
    let bands = model.bands();
    let map = model.data_map();
    let mut rows: Vec<RngStream> = (0..n).map(|i| rng.split_index(i as u64)).collect();
    let mut x = Array2::zeros((n, bands));
    for (i, r) in rows.iter_mut().enumerate() {
        for j in 0..bands {
            x[[i, j]] = r.normal();
        }
    }

    let mut saved = BTreeMap::new();
    let mut record = |t: usize, x: &Array2<f64>| -> Result<()> {
        if checkpoints.contains(&t) {
            saved.insert(t, SpectrumBatch::new(map.invert(x))?);
        }
        Ok(())
    };
    record(t_max, &x)?;
    for t in (1..=t_max).rev() {
        let eps = model.predict(&x, t)?;
        let mut noise = Array2::zeros((n, bands));
        if t > 1 {
            for (i, r) in rows.iter_mut().enumerate() {
                for j in 0..bands {
                    noise[[i, j]] = r.normal();
                }
            }
        }
        x = ddpm_step(&x, t, &eps, &noise, sched)?;
        record(t - 1, &x)?;
    }
    Ok(Generation {
        samples: SpectrumBatch::new(map.invert(&x))?,
        checkpoints: saved,
    })
}
