//! Spectral diffusion priors for hyperspectral/multispectral image fusion.
//!
//! An MLP is trained as a per-pixel DDPM noise predictor on clean spectra
//! and then used as a plug-in prior inside an Adam-based fusion of a
//! low-resolution hyperspectral cube with a high-resolution multispectral
//! image.
//!
//! ```
//! use sdprior::diffusion::make_schedule;
//!
//! let sched = make_schedule(1000, 1e-4, 0.02).unwrap();
//! assert!(sched.alpha_bar(1000) < 1e-4);
//! ```

pub mod degradation;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod fusion;
pub mod hsi;
pub mod metrics;
pub mod numerics;
pub mod toy;

pub use error::{Error, Result};
pub use hsi::{HyperCube, SpectrumBatch};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/degradation.md")]
    mod degradation {}
    #[doc = include_str!("../../../book/src/diffusion.md")]
    mod diffusion {}
    #[doc = include_str!("../../../book/src/denoiser.md")]
    mod denoiser {}
    #[doc = include_str!("../../../book/src/fusion.md")]
    mod fusion {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
