use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};

use crate::diffusion::{generate_spectra, NoisePredictor, VarianceSchedule};
use crate::error::{shape_err, Error, Result};
use crate::hsi::SpectrumBatch;
use crate::numerics::{psd_sqrt, RngStream};

const COV_REG: f64 = 1e-6;

fn moments(batch: &SpectrumBatch) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = batch.count();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("FID needs >= 2 spectra per batch, got {n}")));
    }
    let x = batch.data();
    let mu = x.mean_axis(Axis(0)).expect("non-empty");
    let centered = x - &mu;
    let mut cov = centered.t().dot(&centered) / (n - 1) as f64;
    cov.diag_mut().iter_mut().for_each(|v| *v += COV_REG);
    Ok((mu, cov))
}

/// Fréchet distance between Gaussian fits of two spectrum batches.
pub fn fid_spectra(real: &SpectrumBatch, gen: &SpectrumBatch) -> Result<f64> {
    if real.bands() != gen.bands() {
        return Err(shape_err("fid bands", real.bands(), gen.bands()));
    }
    let (m1, s1) = moments(real)?;
    let (m2, s2) = moments(gen)?;
    let r1 = psd_sqrt(&s1)?;
    let mut inner = r1.dot(&s2).dot(&r1);
    let sym = (&inner + &inner.t()) * 0.5;
    inner = sym;
    let cross = psd_sqrt(&inner)?;
    let dm = &m1 - &m2;
    Ok(dm.dot(&dm) + s1.diag().sum() + s2.diag().sum() - 2.0 * cross.diag().sum())
}

/// FID of the partially denoised batches at each checkpoint, ascending in `t`.
pub fn fid_curve<M: NoisePredictor>(
    model: &M,
    sched: &VarianceSchedule,
    real: &SpectrumBatch,
    checkpoints: &[usize],
    n: usize,
    rng: &RngStream,
) -> Result<Vec<(usize, f64)>> {
    if let Some(&bad) = checkpoints.iter().find(|&&t| t == 0 || t > sched.len()) {
        return Err(Error::TimestepOutOfRange { t: bad, max: sched.len() });
    }
    let gen = generate_spectra(model, n, sched, rng, checkpoints)?;
    gen.checkpoints
        .iter()
        .map(|(&t, batch)| Ok((t, fid_spectra(real, batch)?)))
        .collect()
}

/// CSV with header `t,fid`.
pub fn write_fid_csv(curve: &[(usize, f64)], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("t,fid\n");
    for (t, f) in curve {
        out.push_str(&format!("{t},{f}\n"));
    }
    std::fs::File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{make_schedule, ZeroPredictor};
    use crate::numerics::gaussian_matrix;

    fn batch(seed: u64, n: usize, b: usize, shift: f64) -> SpectrumBatch {
        SpectrumBatch::new(gaussian_matrix(&mut RngStream::new(seed), n, b).mapv(|v| v + shift)).unwrap()
    }

    #[test]
    fn self_distance_is_zero() {
        let a = batch(1, 50, 6, 0.0);
        assert!(fid_spectra(&a, &a).unwrap().abs() < 1e-8);
    }

    #[test]
    fn symmetric() {
        let a = batch(1, 40, 5, 0.0);
        let b = SpectrumBatch::new(batch(2, 60, 5, 0.3).data().mapv(|v| v * 1.7)).unwrap();
        let ab = fid_spectra(&a, &b).unwrap();
        let ba = fid_spectra(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-8, "{ab} vs {ba}");
    }

    #[test]
    fn equal_covariance_gives_mean_gap() {
        let a = batch(3, 20000, 4, 0.0);
        let b = batch(4, 20000, 4, 0.5);
        let f = fid_spectra(&a, &b).unwrap();
        assert!((f - 1.0).abs() < 0.05, "{f}");
    }

    #[test]
    fn degenerate_batches() {
        let one = batch(1, 1, 3, 0.0);
        let two = batch(2, 5, 3, 0.0);
        assert!(matches!(fid_spectra(&one, &two), Err(Error::InvalidArgument(_))));
        assert!(fid_spectra(&two, &batch(3, 5, 4, 0.0)).is_err());
    }

    #[test]
    fn zero_model_curve_is_flat_and_deterministic() {
        let sched = make_schedule(20, 1e-3, 0.05).unwrap();
        let real = SpectrumBatch::new(Array2::from_elem((64, 3), 0.5) + &gaussian_matrix(&mut RngStream::new(1), 64, 3).mapv(|v| 0.05 * v)).unwrap();
        let model = ZeroPredictor { bands: 3 };
        let rng = RngStream::new(5);
        let c1 = fid_curve(&model, &sched, &real, &[1, 10, 20], 500, &rng).unwrap();
        let c2 = fid_curve(&model, &sched, &real, &[1, 10, 20], 500, &rng).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(c1.iter().map(|p| p.0).collect::<Vec<_>>(), vec![1, 10, 20]);
        assert!(c1.iter().all(|&(_, f)| f > 1.0));
        assert!(fid_curve(&model, &sched, &real, &[0], 10, &rng).is_err());
    }
}
