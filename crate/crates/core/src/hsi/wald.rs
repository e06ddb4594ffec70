use super::{fmt_dims, HyperCube};
use crate::degradation::{add_awgn, check_factor, DegradationModel};
use crate::error::{shape_err, Error, Result};
use crate::numerics::RngStream;

/// The two observations of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub lr_hsi: HyperCube,
    pub hr_msi: HyperCube,
}

/// Degrade a reference cube into an LR-HSI and an HR-MSI.
///
/// Noise for each observation comes from its own labeled substream of `rng`,
/// so changing one SNR leaves the other observation's noise untouched.
pub fn wald_synthesize(
    reference: &HyperCube,
    deg: &DegradationModel,
    rng: &RngStream,
) -> Result<Observations> {
    if reference.bands() != deg.hsi_bands() {
        return Err(shape_err(
            "wald_synthesize",
            format!("{} bands", deg.hsi_bands()),
            fmt_dims(reference.dims()),
        ));
    }
    check_factor(reference.height(), reference.width(), deg.factor())?;
    let clean_lr = deg.spatial(reference)?;
    let clean_msi = deg.spectral(reference)?;
    Ok(Observations {
        lr_hsi: add_awgn(&clean_lr, deg.hsi_snr_db, &mut rng.split("hsi_noise")),
        hr_msi: add_awgn(&clean_msi, deg.msi_snr_db, &mut rng.split("msi_noise")),
    })
}

/// Split a cube into its top and bottom halves (height must be even).
pub fn split_top_bottom(cube: &HyperCube) -> Result<(HyperCube, HyperCube)> {
    let h = cube.height();
    if h < 2 || h % 2 != 0 {
        return Err(Error::NotDivisible {
            dim: "height",
            value: h,
            factor: 2,
        });
    }
    let half = h / 2;
    Ok((
        cube.crop(0, 0, half, cube.width())?,
        cube.crop(half, 0, half, cube.width())?,
    ))
}

/// Global min-max scaling into `[0, 1]`. A constant cube maps to zeros.
pub fn minmax_scale(cube: &HyperCube) -> HyperCube {
    let (lo, hi) = cube
        .as_slice()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = hi - lo;
    let mut out = cube.clone();
    for v in out.as_slice_mut() {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.0 };
    }
    out
}
