//! Synthetic scenes built from a few smooth endmember spectra.

use ndarray::{Array2, Array3};

use crate::degradation::{gaussian_kernel, ikonos_like_srf, DegradationModel};
use crate::denoiser::{DenoiserConfig, LrSchedule, TrainConfig};
use crate::diffusion::{make_schedule, VarianceSchedule};
use crate::error::{Error, Result};
use crate::hsi::{cube_to_spectra, split_top_bottom, HyperCube, SpectrumBatch};
use crate::numerics::RngStream;

pub const TOY_BANDS: usize = 31;
pub const TOY_SIZE: usize = 32;
pub const TOY_ENDMEMBERS: usize = 4;
pub const TOY_T: usize = 200;

/// 7×7 Gaussian PSF with σ = 1.7, factor 4, four IKONOS-like bands over
/// 400–1000 nm, 20 dB on the LR-HSI and 30 dB on the HR-MSI.
pub fn toy_degradation(bands: usize) -> Result<DegradationModel> {
    DegradationModel::new(
        gaussian_kernel(7, 1.7)?,
        4,
        ikonos_like_srf(bands, 400.0, 1000.0)?,
        20.0,
        30.0,
    )
}

/// Linear schedule from 1e-4 to 0.02 over [`TOY_T`] steps.
pub fn toy_schedule() -> Result<VarianceSchedule> {
    make_schedule(TOY_T, 1e-4, 0.02)
}

/// Three blocks of 64 with a 32-dim embedding.
pub fn toy_denoiser_config(bands: usize) -> DenoiserConfig {
    DenoiserConfig {
        layers: 3,
        hidden: 64,
        embed_dim: 32,
        ..DenoiserConfig::reference(bands)
    }
}

pub fn toy_train_config(steps: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 256,
        steps,
        base_lr: 0.01,
        lr_schedule: LrSchedule::LinearDecay,
        ..TrainConfig::reference()
    }
}

/// `count × bands` spectra in `[0.05, 0.95]`, each a low-order cosine series.
pub fn smooth_endmembers(count: usize, bands: usize, rng: &mut RngStream) -> Result<Array2<f64>> {
    if count == 0 || bands < 2 {
        return Err(Error::InvalidArgument("need >= 1 endmember and >= 2 bands".into()));
    }
    let mut out = Array2::zeros((count, bands));
    for k in 0..count {
        let coef: Vec<(f64, f64)> = (1..=3)
            .map(|j| ((rng.uniform() - 0.5) / j as f64, rng.uniform() * std::f64::consts::TAU))
            .collect();
        let raw: Vec<f64> = (0..bands)
            .map(|i| {
                let u = i as f64 / (bands - 1) as f64;
                coef.iter()
                    .enumerate()
                    .map(|(j, (a, p))| a * ((j + 1) as f64 * std::f64::consts::PI * u + p).cos())
                    .sum()
            })
            .collect();
        let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (a, b) = (0.1 + 0.3 * rng.uniform(), 0.55 + 0.4 * rng.uniform());
        for (i, v) in raw.iter().enumerate() {
            out[[k, i]] = a + (b - a) * (v - lo) / (hi - lo).max(1e-12);
        }
    }
    Ok(out)
}

/// `count × h × w` abundances summing to one per pixel. Each endmember
/// owns a few Gaussian blobs; squaring and normalizing gives mostly pure
/// regions with smooth transitions.
pub fn blob_abundances(count: usize, h: usize, w: usize, rng: &mut RngStream) -> Array3<f64> {
    let blobs = 3;
    let scale = (h.min(w) as f64 / 4.0).max(1.0);
    let centers: Vec<Vec<(f64, f64)>> = (0..count)
        .map(|_| (0..blobs).map(|_| (rng.uniform() * h as f64, rng.uniform() * w as f64)).collect())
        .collect();
    let mut a = Array3::from_shape_fn((count, h, w), |(k, i, j)| {
        let g: f64 = centers[k]
            .iter()
            .map(|&(ci, cj)| {
                let d2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
                (-d2 / (2.0 * scale * scale)).exp()
            })
            .sum();
        (g + 0.05).powi(2)
    });
    for i in 0..h {
        for j in 0..w {
            let s: f64 = (0..count).map(|k| a[[k, i, j]]).sum();
            for k in 0..count {
                a[[k, i, j]] /= s;
            }
        }
    }
    a
}

/// Linear mixture `E^T A`, shape `bands × h × w`.
pub fn mix(endmembers: &Array2<f64>, abundances: &Array3<f64>) -> Result<HyperCube> {
    let (count, bands) = endmembers.dim();
    let (c2, h, w) = abundances.dim();
    if count != c2 {
        return Err(crate::error::shape_err("abundance count", count, c2));
    }
    let flat = abundances
        .view()
        .into_shape_with_order((count, h * w))
        .map_err(|e| Error::Malformed(e.to_string()))?;
    let cube = endmembers.t().dot(&flat);
    HyperCube::new(cube.into_shape_with_order((bands, h, w)).map_err(|e| Error::Malformed(e.to_string()))?)
}

#[derive(Debug, Clone)]
pub struct ToyScene {
    /// Bottom half, used as the fusion reference.
    pub reference: HyperCube,
    /// Spectra of the top half, for training.
    pub training: SpectrumBatch,
    pub endmembers: Array2<f64>,
}

/// A `bands × h × w` mixture of `endmembers` smooth spectra.
pub fn toy_cube(bands: usize, h: usize, w: usize, endmembers: usize, seed: u64) -> Result<(HyperCube, Array2<f64>)> {
    let root = RngStream::new(seed);
    let e = smooth_endmembers(endmembers, bands, &mut root.split("endmembers"))?;
    let a = blob_abundances(endmembers, h, w, &mut root.split("abundances"));
    Ok((mix(&e, &a)?, e))
}

/// A `bands × 2h × w` mixture split into a training top half and an
/// `h × w` reference bottom half.
pub fn toy_scene(bands: usize, h: usize, w: usize, endmembers: usize, seed: u64) -> Result<ToyScene> {
    let (full, e) = toy_cube(bands, 2 * h, w, endmembers, seed)?;
    let (top, bottom) = split_top_bottom(&full)?;
    Ok(ToyScene {
        reference: bottom,
        training: cube_to_spectra(&top),
        endmembers: e,
    })
}
