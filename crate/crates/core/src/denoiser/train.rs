use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{DenoiserParams, Mode};
use crate::diffusion::{q_sample_rows, VarianceSchedule};
use crate::error::{Error, Result};
use crate::hsi::SpectrumBatch;
use crate::numerics::{gaussian_matrix, AdamConfig, AdamState, RngStream};

/// Learning rate as a function of the global step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LrSchedule {
    Constant,
    /// `base · 0.001 · max(1000 − step/10, 1)`: starts at `base`, reaches the
    /// floor `base · 0.001` at step 9990.
    LinearDecay,
}

impl LrSchedule {
    pub fn lr(self, base: f64, step: u64) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::LinearDecay => base * 0.001 * (1000.0 - step as f64 / 10.0).max(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Optimizer steps to run (one batch each).
    pub steps: u64,
    pub base_lr: f64,
    pub lr_schedule: LrSchedule,
    #[serde(skip)]
    pub adam: AdamConfig,
}

impl TrainConfig {
    /// Batch 512, 30000 steps, base rate 0.01 with linear decay.
    pub fn reference() -> Self {
        Self {
            batch_size: 512,
            steps: 30_000,
            base_lr: 0.01,
            lr_schedule: LrSchedule::LinearDecay,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: DenoiserParams,
    pub adam: AdamState,
    /// Global step count after training.
    pub step: u64,
    pub trace: Vec<LossRecord>,
}

/// Fit `ε_θ` to the simple denoising objective.
///
/// Each global step `s` draws everything it needs (batch rows, timesteps,
/// noise, dropout masks) from `rng.split_index(s)`, so a run resumed from a
/// checkpoint with its optimizer state replays the uninterrupted run.
/// Batches are sampled with replacement. The loss is the batch mean of
/// `‖ε − ε_θ(x_t, t)‖²`.
pub fn train_denoiser(
    mut params: DenoiserParams,
    spectra: &SpectrumBatch,
    cfg: &TrainConfig,
    sched: &VarianceSchedule,
    rng: &RngStream,
    resume: Option<(u64, AdamState)>,
) -> Result<TrainOutcome> {
    if cfg.batch_size == 0 || cfg.steps == 0 {
        return Err(Error::InvalidArgument("batch_size and steps must be >= 1".into()));
    }
    if spectra.bands() != params.config().n_bands {
        return Err(crate::error::shape_err(
            "train_denoiser bands",
            params.config().n_bands,
            spectra.bands(),
        ));
    }
    let lens: Vec<usize> = params.weights().tensors().iter().map(|t| t.len()).collect();
    let (start, mut adam) = match resume {
        Some((s, st)) => {
            if st.lens() != lens {
                return Err(crate::error::shape_err("resumed optimizer state", format!("{lens:?}"), format!("{:?}", st.lens())));
            }
            (s, st)
        }
        None => (0, AdamState::new(cfg.adam, &lens)?),
    };
    let map = params.config().data_map;
    let data = map.apply(spectra.data());
    let t_max = sched.len();
    let b = cfg.batch_size;
    let mut trace = Vec::with_capacity(cfg.steps as usize);

    for step in start..start + cfg.steps {
        let mut r = rng.split_index(step);
        let rows: Vec<usize> = (0..b).map(|_| r.below(data.nrows())).collect();
        let ts: Vec<usize> = (0..b).map(|_| 1 + r.below(t_max)).collect();
        let x0 = data.select(ndarray::Axis(0), &rows);
        let eps = gaussian_matrix(&mut r, b, data.ncols());
        let xt = q_sample_rows(&x0, &ts, &eps, sched)?;

        let (pred, tape) = params.forward_rows(&xt, &ts, Mode::Train(&mut r))?;
        let resid: Array2<f64> = &eps - &pred;
        let loss = resid.iter().map(|v| v * v).sum::<f64>() / b as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                stage: format!("training step {step}"),
                detail: format!(
                    "loss={loss}, max|pred|={}, timesteps[0..4]={:?}",
                    pred.iter().fold(0.0f64, |a, v| a.max(v.abs())),
                    &ts[..ts.len().min(4)]
                ),
            });
        }
        let upstream = resid.mapv(|v| -2.0 * v / b as f64);
        let (grads, _) = params.backward(&tape, &upstream)?;
        let lr = cfg.lr_schedule.lr(cfg.base_lr, step);
        let g = grads.tensors();
        adam.step(&mut params.tensors_mut(), &g, lr)?;
        trace.push(LossRecord { step, lr, loss });
    }
    Ok(TrainOutcome {
        params,
        adam,
        step: start + cfg.steps,
        trace,
    })
}
