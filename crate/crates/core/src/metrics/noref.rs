use serde::{Deserialize, Serialize};

use super::{q_windowed, Q_WINDOW};
use crate::degradation::DegradationModel;
use crate::error::{shape_err, Result};
use crate::hsi::{fmt_dims, HyperCube};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoRefReport {
    pub d_lambda: f64,
    pub d_s: f64,
    pub qnr: f64,
}

/// QNR with `p = q = 1` and unit exponents.
///
/// `D_λ` averages `|Q(F_l, F_r) − Q(Y_l, Y_r)|` over band pairs `l ≠ r`.
/// `D_s` averages `|Q(F_l, Z_m) − Q(Y_l, Z̃_m)|` over HSI band `l` and MSI
/// band `m`, where `Z̃ = ZBD` is the MSI brought to the LR grid with the
/// same spatial operator. Windows are `Q_WINDOW` on the HR grid and
/// `Q_WINDOW / d` on the LR grid.
pub fn no_reference(
    fused: &HyperCube,
    lr_hsi: &HyperCube,
    hr_msi: &HyperCube,
    deg: &DegradationModel,
) -> Result<NoRefReport> {
    let (b, h, w) = fused.dims();
    let d = deg.factor();
    if b != deg.hsi_bands() || h % d != 0 || w % d != 0 {
        return Err(shape_err("fused cube", format!("{} bands, dims divisible by {d}", deg.hsi_bands()), fmt_dims(fused.dims())));
    }
    if lr_hsi.dims() != (b, h / d, w / d) {
        return Err(shape_err("LR-HSI", fmt_dims((b, h / d, w / d)), fmt_dims(lr_hsi.dims())));
    }
    if hr_msi.dims() != (deg.msi_bands(), h, w) {
        return Err(shape_err("HR-MSI", fmt_dims((deg.msi_bands(), h, w)), fmt_dims(hr_msi.dims())));
    }
    let hr_win = Q_WINDOW;
    let lr_win = (Q_WINDOW / d).max(1);

    let mut dl = 0.0;
    let mut pairs = 0usize;
    for l in 0..b {
        for r in 0..b {
            if l == r {
                continue;
            }
            let qf = q_windowed(fused.band(l), fused.band(r), hr_win);
            let qy = q_windowed(lr_hsi.band(l), lr_hsi.band(r), lr_win);
            dl += (qf - qy).abs();
            pairs += 1;
        }
    }
    let d_lambda = if pairs > 0 { dl / pairs as f64 } else { 0.0 };

    let msi_lr = deg.spatial(hr_msi)?;
    let m = hr_msi.bands();
    let mut ds = 0.0;
    for l in 0..b {
        for k in 0..m {
            let qf = q_windowed(fused.band(l), hr_msi.band(k), hr_win);
            let qy = q_windowed(lr_hsi.band(l), msi_lr.band(k), lr_win);
            ds += (qf - qy).abs();
        }
    }
    let d_s = ds / (b * m) as f64;
    Ok(NoRefReport {
        d_lambda,
        d_s,
        qnr: (1.0 - d_lambda) * (1.0 - d_s),
    })
}
