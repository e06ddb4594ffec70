//! Spatial blur `B`, decimation `D`, spectral response `R`, their adjoints,
//! and SNR-controlled Gaussian noise.
//!
//! Every spatial operator uses circular boundaries, which makes `B` a
//! circulant matrix whose adjoint is correlation with the same kernel.

use ndarray::{Array2, Array3, Axis, Zip};
use rayon::prelude::*;

use crate::error::{shape_err, Error, Result};
use crate::hsi::{fmt_dims, HyperCube};
use crate::numerics::RngStream;

/// Tolerance on the kernel normalization.
pub const KERNEL_SUM_TOL: f64 = 1e-12;

/// The observation model shared by synthesis and fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationModel {
    psf: Array2<f64>,
    factor: usize,
    srf: Array2<f64>,
    pub hsi_snr_db: f64,
    pub msi_snr_db: f64,
}

impl DegradationModel {
    pub fn new(
        psf: Array2<f64>,
        factor: usize,
        srf: Array2<f64>,
        hsi_snr_db: f64,
        msi_snr_db: f64,
    ) -> Result<Self> {
        validate_kernel(&psf)?;
        if factor == 0 {
            return Err(Error::InvalidArgument("downsampling factor must be >= 1".into()));
        }
        if srf.nrows() == 0 || srf.ncols() == 0 {
            return Err(Error::InvalidArgument("empty SRF".into()));
        }
        if srf.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("SRF entries must be finite and non-negative".into()));
        }
        for snr in [hsi_snr_db, msi_snr_db] {
            if snr.is_nan() || snr == f64::NEG_INFINITY {
                return Err(Error::InvalidArgument(format!("invalid SNR {snr}")));
            }
        }
        Ok(Self {
            psf,
            factor,
            srf,
            hsi_snr_db,
            msi_snr_db,
        })
    }

    pub fn psf(&self) -> &Array2<f64> {
        &self.psf
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn srf(&self) -> &Array2<f64> {
        &self.srf
    }

    /// Number of hyperspectral bands the SRF consumes.
    pub fn hsi_bands(&self) -> usize {
        self.srf.ncols()
    }

    pub fn msi_bands(&self) -> usize {
        self.srf.nrows()
    }

    /// `X ↦ XBD`: blur, then decimate.
    pub fn spatial(&self, x: &HyperCube) -> Result<HyperCube> {
        downsample(&blur(x, &self.psf, false), self.factor)
    }

    /// Adjoint of [`Self::spatial`]: zero-fill upsample, then correlate.
    pub fn spatial_adjoint(&self, y: &HyperCube) -> HyperCube {
        blur(&upsample_zero_fill(y, self.factor), &self.psf, true)
    }

    /// `X ↦ RX`.
    pub fn spectral(&self, x: &HyperCube) -> Result<HyperCube> {
        apply_srf(x, &self.srf, false)
    }

    pub fn spectral_adjoint(&self, z: &HyperCube) -> Result<HyperCube> {
        apply_srf(z, &self.srf, true)
    }
}

fn validate_kernel(k: &Array2<f64>) -> Result<()> {
    let (r, c) = k.dim();
    if r != c || r % 2 == 0 {
        return Err(Error::InvalidArgument(format!("PSF kernel must be square and odd-sized, got {r}x{c}")));
    }
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("PSF kernel has non-finite entries".into()));
    }
    let s = k.sum();
    if (s - 1.0).abs() > KERNEL_SUM_TOL {
        return Err(Error::InvalidArgument(format!("PSF kernel sums to {s}, expected 1")));
    }
    Ok(())
}

/// Rescale a kernel so its entries sum to one.
pub fn normalize_kernel(mut k: Array2<f64>) -> Result<Array2<f64>> {
    let s = k.sum();
    if !(s.is_finite() && s != 0.0) {
        return Err(Error::InvalidArgument(format!("cannot normalize kernel with sum {s}")));
    }
    k.mapv_inplace(|v| v / s);
    Ok(k)
}

/// Isotropic Gaussian sampled at integer offsets from the kernel center,
/// normalized to unit sum.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Array2<f64>> {
    if size == 0 || size % 2 == 0 {
        return Err(Error::InvalidArgument(format!("kernel size must be odd, got {size}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let c = (size / 2) as f64;
    let k = Array2::from_shape_fn((size, size), |(i, j)| {
        let (di, dj) = (i as f64 - c, j as f64 - c);
        (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp()
    });
    normalize_kernel(k)
}

fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

/// Per-band circular convolution with `kernel` (centered). With `adjoint`
/// set, correlates instead, which is the exact transpose.
pub fn blur(cube: &HyperCube, kernel: &Array2<f64>, adjoint: bool) -> HyperCube {
    let (b, h, w) = cube.dims();
    let ks = kernel.nrows();
    assert!(ks % 2 == 1 && kernel.ncols() == ks, "kernel must be square and odd-sized");
    let c = (ks / 2) as isize;
    let sign: isize = if adjoint { 1 } else { -1 };

    // For offset u, row i reads source row (i + sign*(u - c)) mod h.
    let row_src: Vec<Vec<usize>> = (0..ks)
        .map(|u| (0..h).map(|i| wrap(i as isize + sign * (u as isize - c), h)).collect())
        .collect();
    let col_src: Vec<Vec<usize>> = (0..ks)
        .map(|v| (0..w).map(|j| wrap(j as isize + sign * (v as isize - c), w)).collect())
        .collect();

    let mut out = Array3::<f64>::zeros((b, h, w));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(cube.data().axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut dst, src)| {
            for u in 0..ks {
                for v in 0..ks {
                    let kv = kernel[[u, v]];
                    if kv == 0.0 {
                        continue;
                    }
                    let rs = &row_src[u];
                    let cs = &col_src[v];
                    for i in 0..h {
                        let srow = src.row(rs[i]);
                        let mut drow = dst.row_mut(i);
                        for j in 0..w {
                            drow[j] += kv * srow[cs[j]];
                        }
                    }
                }
            }
        });
    HyperCube::new(out).expect("finite input gives finite output")
}

/// Keep samples at `(d*i, d*j)`.
pub fn downsample(cube: &HyperCube, d: usize) -> Result<HyperCube> {
    let (b, h, w) = cube.dims();
    check_factor(h, w, d)?;
    let out = Array3::from_shape_fn((b, h / d, w / d), |(k, i, j)| cube.data()[[k, d * i, d * j]]);
    HyperCube::new(out)
}

pub(crate) fn check_factor(h: usize, w: usize, d: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::InvalidArgument("factor must be >= 1".into()));
    }
    if h % d != 0 {
        return Err(Error::NotDivisible {
            dim: "height",
            value: h,
            factor: d,
        });
    }
    if w % d != 0 {
        return Err(Error::NotDivisible {
            dim: "width",
            value: w,
            factor: d,
        });
    }
    Ok(())
}

/// Adjoint of [`downsample`]: values at `(d*i, d*j)`, zeros elsewhere.
pub fn upsample_zero_fill(cube: &HyperCube, d: usize) -> HyperCube {
    assert!(d >= 1, "factor must be >= 1");
    let (b, h, w) = cube.dims();
    let mut out = Array3::zeros((b, h * d, w * d));
    for ((k, i, j), v) in cube.data().indexed_iter() {
        out[[k, d * i, d * j]] = *v;
    }
    HyperCube::new(out).expect("finite")
}

/// Per-pixel `R·x` or, with `adjoint`, `Rᵀ·z`.
pub fn apply_srf(cube: &HyperCube, srf: &Array2<f64>, adjoint: bool) -> Result<HyperCube> {
    let (b, h, w) = cube.dims();
    let m = if adjoint { srf.t() } else { srf.view() };
    if m.ncols() != b {
        return Err(shape_err(
            "apply_srf",
            format!("{} input bands", m.ncols()),
            fmt_dims(cube.dims()),
        ));
    }
    let flat = cube.data().view().into_shape_with_order((b, h * w)).expect("standard layout");
    let prod = m.dot(&flat);
    HyperCube::new(prod.into_shape_with_order((m.nrows(), h, w)).expect("sized"))
}

/// Noise standard deviation for a target SNR, with signal power taken as the
/// mean square of the whole cube.
pub fn noise_sigma(cube: &HyperCube, snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        return 0.0;
    }
    (cube.mean_square() * 10f64.powf(-snr_db / 10.0)).sqrt()
}

/// Add i.i.d. Gaussian noise at `snr_db`; `f64::INFINITY` disables it.
pub fn add_awgn(cube: &HyperCube, snr_db: f64, rng: &mut RngStream) -> HyperCube {
    let sigma = noise_sigma(cube, snr_db);
    if sigma == 0.0 {
        return cube.clone();
    }
    let mut out = cube.clone();
    Zip::from(out.data_mut()).for_each(|v| *v += sigma * rng.normal());
    out
}

/// Central wavelengths (nm) and full widths at half maximum of the
/// blue, green, red and near-infrared bands of an IKONOS-like sensor.
pub const IKONOS_LIKE_BANDS: [(f64, f64); 4] =
    [(480.0, 70.0), (550.0, 90.0), (665.0, 66.0), (805.0, 96.0)];

/// Approximate 4-band IKONOS-style response sampled on `n_bands` equally
/// spaced wavelengths in `[start_nm, end_nm]`, rows normalized to unit sum.
///
/// This is a Gaussian stand-in for the tabulated sensor response.
pub fn ikonos_like_srf(n_bands: usize, start_nm: f64, end_nm: f64) -> Result<Array2<f64>> {
    if n_bands == 0 || !(end_nm > start_nm) {
        return Err(Error::InvalidArgument(format!(
            "bad wavelength grid: {n_bands} bands over [{start_nm}, {end_nm}]"
        )));
    }
    let step = if n_bands > 1 {
        (end_nm - start_nm) / (n_bands - 1) as f64
    } else {
        0.0
    };
    let mut srf = Array2::zeros((4, n_bands));
    for (k, (center, fwhm)) in IKONOS_LIKE_BANDS.iter().enumerate() {
        let sigma = fwhm / (8.0 * std::f64::consts::LN_2).sqrt();
        for b in 0..n_bands {
            let lam = start_nm + step * b as f64;
            srf[[k, b]] = (-(lam - center).powi(2) / (2.0 * sigma * sigma)).exp();
        }
        let s: f64 = srf.row(k).sum();
        if s < 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "wavelength grid misses the band centered at {center} nm"
            )));
        }
        srf.row_mut(k).mapv_inplace(|v| v / s);
    }
    Ok(srf)
}
