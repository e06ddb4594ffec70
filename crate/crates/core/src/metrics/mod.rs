//! Quality measures: full-reference, spectral FID and no-reference QNR.

mod fid;
mod noref;
mod rank;

pub use fid::{fid_curve, fid_spectra, write_fid_csv};
pub use noref::{no_reference, NoRefReport};
pub use rank::spearman;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::hsi::{fmt_dims, HyperCube};

/// Side length of the square windows used by the Q index.
pub const Q_WINDOW: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean of the per-band PSNR; `inf` when every band is exact.
    #[serde(with = "inf_sentinel")]
    pub psnr_db: f64,
    pub sam_deg: f64,
    pub rmse: f64,
    pub ergas: f64,
    pub uiqi: f64,
    #[serde(with = "inf_sentinel_vec")]
    pub per_band_psnr: Vec<f64>,
    /// Row-major over pixels; skipped pixels are absent.
    pub per_pixel_sam: Vec<f64>,
    /// Pixels with a zero spectrum in either cube.
    pub sam_skipped: usize,
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Spectral angle in degrees between two equal-length vectors, or `None`
/// when either is zero.
pub fn spectral_angle(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    // 2·atan2(|â − b̂|, |â + b̂|) stays accurate near 0 and 180 degrees
    let (mut diff, mut sum) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (u, v) = (x / na, y / nb);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    Some((2.0 * diff.sqrt().atan2(sum.sqrt())).to_degrees())
}

/// Universal image quality index of one window, or `None` when the
/// denominator vanishes (zero variance or zero mean on both sides).
pub fn q_index(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let (mut va, mut vb, mut cab) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b.iter()) {
        let (dx, dy) = (x - ma, y - mb);
        va += dx * dx;
        vb += dy * dy;
        cab += dx * dy;
    }
    let den = (va + vb) * (ma * ma + mb * mb);
    if den == 0.0 {
        return None;
    }
    // grouped so that identical inputs give exactly 1
    Some(4.0 * (cab * (ma * mb)) / den)
}

/// Top-left corners of the non-overlapping `win × win` windows; an image
/// smaller than `win` along an axis is one window along that axis.
fn windows(h: usize, w: usize, win: usize) -> (usize, usize, Vec<(usize, usize)>) {
    let wh = win.min(h);
    let ww = win.min(w);
    let mut out = Vec::new();
    for r in (0..=h - wh).step_by(wh) {
        for c in (0..=w - ww).step_by(ww) {
            out.push((r, c));
        }
    }
    (wh, ww, out)
}

/// Sum and count of the non-degenerate window Q values.
fn q_windows(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, win: usize) -> (f64, usize) {
    let (h, w) = a.dim();
    let (wh, ww, corners) = windows(h, w, win);
    let mut sum = 0.0;
    let mut count = 0;
    for (r, c) in corners {
        let s = ndarray::s![r..r + wh, c..c + ww];
        if let Some(q) = q_index(a.slice(s), b.slice(s)) {
            sum += q;
            count += 1;
        }
    }
    (sum, count)
}

/// Window-averaged Q between two images. When every window is degenerate
/// the result is 1 for identical images and 0 otherwise.
pub fn q_windowed(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, win: usize) -> f64 {
    let (sum, count) = q_windows(a, b, win);
    if count > 0 {
        sum / count as f64
    } else if a == b {
        1.0
    } else {
        0.0
    }
}

pub fn full_reference(reference: &HyperCube, est: &HyperCube, ratio: usize) -> Result<MetricsReport> {
    if !reference.same_shape(est) {
        return Err(shape_err("full_reference", fmt_dims(reference.dims()), fmt_dims(est.dims())));
    }
    if ratio == 0 {
        return Err(Error::InvalidArgument("ERGAS ratio must be >= 1".into()));
    }
    let (b, h, w) = reference.dims();
    let npx = (h * w) as f64;
    let (r, e) = (reference.data(), est.data());

    let mut per_band_psnr = Vec::with_capacity(b);
    let mut ergas_acc = 0.0;
    let mut total_sq = 0.0;
    let (mut q_sum, mut q_count) = (0.0, 0);
    for k in 0..b {
        let (rb, eb) = (reference.band(k), est.band(k));
        let sq: f64 = rb.iter().zip(eb.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
        total_sq += sq;
        let mse = sq / npx;
        per_band_psnr.push(psnr_from_mse(mse));
        let mu = rb.sum() / npx;
        if mu == 0.0 {
            return Err(Error::InvalidArgument(format!("ERGAS undefined: band {k} has zero mean")));
        }
        ergas_acc += mse / (mu * mu);
        let (s, c) = q_windows(rb, eb, Q_WINDOW);
        q_sum += s;
        q_count += c;
    }
    let psnr_db = per_band_psnr.iter().sum::<f64>() / b as f64;
    let rmse = (total_sq / (npx * b as f64)).sqrt();
    let ergas = 100.0 / ratio as f64 * (ergas_acc / b as f64).sqrt();
    let uiqi = if q_count > 0 {
        q_sum / q_count as f64
    } else if reference == est {
        1.0
    } else {
        0.0
    };

    let mut per_pixel_sam = Vec::with_capacity(h * w);
    let mut sam_skipped = 0;
    let (mut sa, mut sb) = (vec![0.0; b], vec![0.0; b]);
    for i in 0..h {
        for j in 0..w {
            for k in 0..b {
                sa[k] = r[[k, i, j]];
                sb[k] = e[[k, i, j]];
            }
            match spectral_angle(&sa, &sb) {
                Some(a) => per_pixel_sam.push(a),
                None => sam_skipped += 1,
            }
        }
    }
    let sam_deg = if per_pixel_sam.is_empty() {
        0.0
    } else {
        per_pixel_sam.iter().sum::<f64>() / per_pixel_sam.len() as f64
    };

    Ok(MetricsReport {
        psnr_db,
        sam_deg,
        rmse,
        ergas,
        uiqi,
        per_band_psnr,
        per_pixel_sam,
        sam_skipped,
    })
}

mod inf_sentinel {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    pub(super) enum Repr {
        Num(f64),
        Text(String),
    }

    pub(super) fn to_repr(v: f64) -> Repr {
        if v == f64::INFINITY {
            Repr::Text("inf".into())
        } else {
            Repr::Num(v)
        }
    }

    pub(super) fn from_repr<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Text(s) => Err(E::custom(format!("expected number or \"inf\", got {s:?}"))),
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }
}

mod inf_sentinel_vec {
    use super::inf_sentinel::{from_repr, to_repr, Repr};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|x| to_repr(*x)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Repr>::deserialize(d)?.into_iter().map(from_repr).collect()
    }
}
