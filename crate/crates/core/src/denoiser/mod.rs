//! MLP noise predictor `ε_θ(x_t, t)` with dense skip connections.
//!
//! Each hidden block computes `affine → activation → dropout` and
//! concatenates its output with its own input, so block `l` sees
//! `n_bands + l·hidden` features. The sinusoidal embedding of `t` goes
//! through one affine layer and is added to the first block's
//! pre-activation. A final affine head maps back to `n_bands`.
//!
//! Gradients are hand-derived: [`DenoiserParams::backward`] replays the
//! forward tape and returns gradients for every weight and for the input.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ScheduleSpec};
pub use train::{train_denoiser, LossRecord, LrSchedule, TrainConfig, TrainOutcome};

use ndarray::{concatenate, s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::diffusion::{DataMap, NoisePredictor};
use crate::error::{shape_err, Error, Result};
use crate::numerics::RngStream;

/// Sinusoidal embedding: pairs `(sin(tω_i), cos(tω_i))`, `ω_i = 10000^(−2i/dim)`.
pub fn time_embedding(t: usize, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::InvalidArgument(format!("embedding dim must be even and positive, got {dim}")));
    }
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let omega = 10000f64.powf(-2.0 * i as f64 / dim as f64);
        let arg = t as f64 * omega;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `x·sigmoid(x)`.
    #[default]
    Silu,
    /// No nonlinearity; mostly useful for hand-checked tests.
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Linear => x,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Linear => 1.0,
        }
    }
}

/// What each hidden block's output is concatenated with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SkipMode {
    /// The block's own input (features accumulate).
    #[default]
    LayerInput,
    /// The original network input `x_t`.
    OriginalInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub n_bands: usize,
    /// Number of hidden skip blocks `L`.
    pub layers: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub activation: Activation,
    pub skip: SkipMode,
    pub dropout: f64,
    pub data_map: DataMap,
}

impl DenoiserConfig {
    /// Defaults for `n_bands` spectra: four blocks of 512, a 64-dim time
    /// embedding and dropout 0.001.
    pub fn reference(n_bands: usize) -> Self {
        Self {
            n_bands,
            layers: 4,
            hidden: 512,
            embed_dim: 64,
            activation: Activation::Silu,
            skip: SkipMode::LayerInput,
            dropout: 0.001,
            data_map: DataMap::Identity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bands == 0 || self.layers == 0 || self.hidden == 0 {
            return Err(Error::InvalidArgument(format!("denoiser dims must be >= 1: {self:?}")));
        }
        if self.embed_dim == 0 || self.embed_dim % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "embedding dim must be even and positive, got {}",
                self.embed_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    /// Input width of hidden block `l`.
    pub fn block_input(&self, l: usize) -> usize {
        match (l, self.skip) {
            (0, _) => self.n_bands,
            (_, SkipMode::LayerInput) => self.n_bands + l * self.hidden,
            (_, SkipMode::OriginalInput) => self.n_bands + self.hidden,
        }
    }

    /// Input width of the output head.
    pub fn head_input(&self) -> usize {
        self.block_input(self.layers)
    }
}

/// `y = x·Wᵀ + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Affine {
    pub fn zeros(inp: usize, out: usize) -> Self {
        Self {
            weight: Array2::zeros((out, inp)),
            bias: Array1::zeros(out),
        }
    }

    fn uniform(inp: usize, out: usize, rng: &mut RngStream) -> Self {
        let bound = (1.0 / inp as f64).sqrt();
        Self {
            weight: Array2::from_shape_simple_fn((out, inp), || bound * (2.0 * rng.uniform() - 1.0)),
            bias: Array1::zeros(out),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }
}

/// Weights of the network, or gradients with the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub time_mlp: Affine,
    pub blocks: Vec<Affine>,
    pub head: Affine,
}

impl Weights {
    fn zeros_for(cfg: &DenoiserConfig) -> Self {
        Self {
            time_mlp: Affine::zeros(cfg.embed_dim, cfg.hidden),
            blocks: (0..cfg.layers)
                .map(|l| Affine::zeros(cfg.block_input(l), cfg.hidden))
                .collect(),
            head: Affine::zeros(cfg.head_input(), cfg.n_bands),
        }
    }

    /// Tensor names in serialization and optimizer order.
    pub fn names(&self) -> Vec<String> {
        let mut v = vec!["time_mlp.weight".to_string(), "time_mlp.bias".to_string()];
        for l in 0..self.blocks.len() {
            v.push(format!("blocks.{l}.weight"));
            v.push(format!("blocks.{l}.bias"));
        }
        v.push("head.weight".into());
        v.push("head.bias".into());
        v
    }

    fn affines(&self) -> impl Iterator<Item = &Affine> {
        std::iter::once(&self.time_mlp)
            .chain(self.blocks.iter())
            .chain(std::iter::once(&self.head))
    }

    fn affines_mut(&mut self) -> impl Iterator<Item = &mut Affine> {
        std::iter::once(&mut self.time_mlp)
            .chain(self.blocks.iter_mut())
            .chain(std::iter::once(&mut self.head))
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.affines()
            .flat_map(|a| [a.weight.shape().to_vec(), a.bias.shape().to_vec()])
            .collect()
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.affines()
            .flat_map(|a| {
                [
                    a.weight.as_slice().expect("standard layout"),
                    a.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.affines_mut()
            .flat_map(|a| {
                [
                    a.weight.as_slice_mut().expect("standard layout"),
                    a.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Network weights plus their configuration.
///
/// `revision` changes whenever weights are handed out mutably, which lets
/// [`DenoiserParams::backward`] reject tapes recorded against older weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    config: DenoiserConfig,
    weights: Weights,
    revision: u64,
}

/// Everything the backward pass needs from a forward call.
#[derive(Debug, Clone)]
pub struct Tape {
    revision: u64,
    embed: Array2<f64>,
    /// Input to each hidden block, then the head input.
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
}

/// Dropout behavior of a forward pass.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut RngStream),
}

pub fn init_denoiser(config: DenoiserConfig, rng: &mut RngStream) -> Result<DenoiserParams> {
    config.validate()?;
    let weights = Weights {
        time_mlp: Affine::uniform(config.embed_dim, config.hidden, rng),
        blocks: (0..config.layers)
            .map(|l| Affine::uniform(config.block_input(l), config.hidden, rng))
            .collect(),
        head: Affine::uniform(config.head_input(), config.n_bands, rng),
    };
    DenoiserParams::from_weights(config, weights)
}

impl DenoiserParams {
    pub fn from_weights(config: DenoiserConfig, weights: Weights) -> Result<Self> {
        config.validate()?;
        let want = Weights::zeros_for(&config).shapes();
        if weights.blocks.len() != config.layers || weights.shapes() != want {
            return Err(shape_err(
                "DenoiserParams layer shapes",
                format!("{want:?}"),
                format!("{:?}", weights.shapes()),
            ));
        }
        if weights.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument("non-finite weights".into()));
        }
        Ok(Self {
            config,
            weights,
            revision: 0,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    /// Mutable tensors in [`Weights::names`] order; invalidates older tapes.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.revision += 1;
        self.weights.tensors_mut()
    }

    pub fn zero_grads(&self) -> Weights {
        Weights::zeros_for(&self.config)
    }

    /// Forward pass with one timestep per row.
    pub fn forward_rows(&self, x: &Array2<f64>, ts: &[usize], mode: Mode<'_>) -> Result<(Array2<f64>, Tape)> {
        let cfg = &self.config;
        if x.ncols() != cfg.n_bands {
            return Err(shape_err("denoiser_forward bands", cfg.n_bands, x.ncols()));
        }
        if ts.len() != x.nrows() {
            return Err(shape_err("denoiser_forward timesteps", x.nrows(), ts.len()));
        }
        if let Some(&t) = ts.iter().find(|&&t| t == 0) {
            return Err(Error::TimestepOutOfRange { t, max: usize::MAX });
        }
        let n = x.nrows();
        let mut embed = Array2::zeros((n, cfg.embed_dim));
        let mut cached: Option<(usize, Vec<f64>)> = None;
        for (i, &t) in ts.iter().enumerate() {
            if cached.as_ref().map(|(ct, _)| *ct) != Some(t) {
                cached = Some((t, time_embedding(t, cfg.embed_dim)?));
            }
            let e = &cached.as_ref().unwrap().1;
            embed.row_mut(i).assign(&ndarray::ArrayView1::from(e.as_slice()));
        }
        let cond = self.weights.time_mlp.apply(&embed);

        let mut rng = match mode {
            Mode::Eval => None,
            Mode::Train(r) => Some(r),
        };
        let keep = 1.0 - cfg.dropout;
        let mut inputs = Vec::with_capacity(cfg.layers + 1);
        let mut pres = Vec::with_capacity(cfg.layers);
        let mut masks = Vec::with_capacity(cfg.layers);
        let mut u = x.to_owned();
        for (l, block) in self.weights.blocks.iter().enumerate() {
            let mut pre = block.apply(&u);
            if l == 0 {
                pre += &cond;
            }
            let mut act = pre.mapv(|v| cfg.activation.apply(v));
            let mask = match rng.as_deref_mut() {
                Some(r) if cfg.dropout > 0.0 => {
                    let m = Array2::from_shape_simple_fn(act.dim(), || {
                        if r.uniform() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    act *= &m;
                    Some(m)
                }
                _ => None,
            };
            let skip = match cfg.skip {
                SkipMode::LayerInput => u.view(),
                SkipMode::OriginalInput => x.view(),
            };
            let next = concatenate![Axis(1), act.view(), skip];
            inputs.push(u);
            pres.push(pre);
            masks.push(mask);
            u = next;
        }
        let out = self.weights.head.apply(&u);
        inputs.push(u);
        Ok((
            out,
            Tape {
                revision: self.revision,
                embed,
                inputs,
                pre: pres,
                masks,
            },
        ))
    }

    pub fn forward(&self, x: &Array2<f64>, t: usize, mode: Mode<'_>) -> Result<(Array2<f64>, Tape)> {
        self.forward_rows(x, &vec![t; x.nrows()], mode)
    }

    /// Gradients of `⟨upstream, ε_θ⟩` w.r.t. every weight and the input.
    pub fn backward(&self, tape: &Tape, upstream: &Array2<f64>) -> Result<(Weights, Array2<f64>)> {
        let (g, dx) = self.backward_impl(tape, upstream, true)?;
        Ok((g.expect("requested"), dx))
    }

    /// Input gradient only; skips all weight-gradient products.
    pub fn backward_input(&self, tape: &Tape, upstream: &Array2<f64>) -> Result<Array2<f64>> {
        self.backward_impl(tape, upstream, false).map(|(_, dx)| dx)
    }

    fn backward_impl(
        &self,
        tape: &Tape,
        upstream: &Array2<f64>,
        want_params: bool,
    ) -> Result<(Option<Weights>, Array2<f64>)> {
        if tape.revision != self.revision {
            return Err(Error::StaleTape {
                tape: tape.revision,
                params: self.revision,
            });
        }
        let cfg = &self.config;
        let n = tape.inputs[0].nrows();
        if upstream.dim() != (n, cfg.n_bands) {
            return Err(shape_err(
                "denoiser_backward upstream",
                format!("({n}, {})", cfg.n_bands),
                format!("{:?}", upstream.dim()),
            ));
        }
        let mut grads = want_params.then(|| self.zero_grads());
        let w = &self.weights;

        let head_in = &tape.inputs[cfg.layers];
        if let Some(gr) = grads.as_mut() {
            gr.head.weight.assign(&upstream.t().dot(head_in));
            gr.head.bias.assign(&upstream.sum_axis(Axis(0)));
        }
        let mut g_u = upstream.dot(&w.head.weight);
        let mut g_x: Array2<f64> = Array2::zeros((n, cfg.n_bands));
        let h = cfg.hidden;

        for l in (0..cfg.layers).rev() {
            let g_act = g_u.slice(s![.., ..h]);
            let g_rest = g_u.slice(s![.., h..]).to_owned();
            let mut g_pre = g_act.to_owned();
            if let Some(m) = &tape.masks[l] {
                g_pre *= m;
            }
            ndarray::Zip::from(&mut g_pre)
                .and(&tape.pre[l])
                .for_each(|g, &p| *g *= cfg.activation.derivative(p));

            let u_l = &tape.inputs[l];
            if let Some(gr) = grads.as_mut() {
                gr.blocks[l].weight.assign(&g_pre.t().dot(u_l));
                gr.blocks[l].bias.assign(&g_pre.sum_axis(Axis(0)));
                if l == 0 {
                    gr.time_mlp.weight.assign(&g_pre.t().dot(&tape.embed));
                    gr.time_mlp.bias.assign(&g_pre.sum_axis(Axis(0)));
                }
            }
            let mut g_in = g_pre.dot(&w.blocks[l].weight);
            match cfg.skip {
                SkipMode::LayerInput => g_in += &g_rest,
                SkipMode::OriginalInput => g_x += &g_rest,
            }
            g_u = g_in;
        }
        g_x += &g_u;
        Ok((grads, g_x))
    }
}

impl NoisePredictor for DenoiserParams {
    type Tape = Tape;

    fn bands(&self) -> usize {
        self.config.n_bands
    }

    fn data_map(&self) -> DataMap {
        self.config.data_map
    }

    fn forward(&self, x_t: &Array2<f64>, t: usize) -> Result<(Array2<f64>, Tape)> {
        DenoiserParams::forward(self, x_t, t, Mode::Eval)
    }

    fn input_vjp(&self, tape: &Tape, upstream: &Array2<f64>) -> Result<Array2<f64>> {
        self.backward_input(tape, upstream)
    }
}
