//! Seeded sampling, the Adam optimizer, and the symmetric PSD square root.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{shape_err, Error, Result};

const SPLITMIX_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(SPLITMIX_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A deterministic random stream.
///
/// Streams are identified by a 64-bit seed. Child streams derived with
/// [`RngStream::split`] or [`RngStream::split_index`] depend only on the
/// parent's seed and the label, never on how much of the parent has been
/// consumed, so substreams can be handed to worker threads in any order.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream keyed by a text label (FNV-1a, then mixed with the seed).
    pub fn split(&self, label: &str) -> RngStream {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        RngStream::new(splitmix64(self.seed ^ splitmix64(h)))
    }

    /// Child stream keyed by an integer (row index, step number, ...).
    pub fn split_index(&self, index: u64) -> RngStream {
        RngStream::new(splitmix64(splitmix64(self.seed).wrapping_add(splitmix64(!index))))
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// `rows × cols` matrix of i.i.d. standard normal draws, filled row-major.
pub fn gaussian_matrix(rng: &mut RngStream, rows: usize, cols: usize) -> Array2<f64> {
    assert!(rows >= 1 && cols >= 1, "gaussian_matrix needs non-empty shape");
    Array2::from_shape_simple_fn((rows, cols), || rng.normal())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment buffers for Adam over a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
}

impl AdamState {
    /// Zeroed state for tensors of the given flat lengths.
    pub fn new(config: AdamConfig, lens: &[usize]) -> Result<Self> {
        if !(config.beta1 > 0.0 && config.beta1 < 1.0)
            || !(config.beta2 > 0.0 && config.beta2 < 1.0)
            || !(config.epsilon > 0.0)
        {
            return Err(Error::InvalidArgument(format!(
                "adam hyperparameters out of range: {config:?}"
            )));
        }
        Ok(Self {
            config,
            first_moment: lens.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: lens.iter().map(|&n| vec![0.0; n]).collect(),
            step_count: 0,
        })
    }

    pub fn lens(&self) -> Vec<usize> {
        self.first_moment.iter().map(Vec::len).collect()
    }

    /// Zero the moments and the step counter, keeping the shapes.
    pub fn reset(&mut self) {
        for m in self.first_moment.iter_mut().chain(self.second_moment.iter_mut()) {
            m.iter_mut().for_each(|v| *v = 0.0);
        }
        self.step_count = 0;
    }

    /// One bias-corrected Adam update, in place.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(shape_err(
                "adam_step tensor count",
                self.first_moment.len(),
                format!("{} params / {} grads", params.len(), grads.len()),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let n = self.first_moment[i].len();
            if p.len() != n || g.len() != n {
                return Err(shape_err(
                    "adam_step tensor length",
                    n,
                    format!("{} params / {} grads", p.len(), g.len()),
                ));
            }
        }

        self.step_count += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bc1 = 1.0 - beta1.powf(self.step_count as f64);
        let bc2 = 1.0 - beta2.powf(self.step_count as f64);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// Principal square root of a symmetric positive semidefinite matrix.
///
/// Eigenvalues in `[-tol, 0)` with `tol = 1e-10 * spectral_radius` are treated
/// as rounding noise and clamped to zero; anything more negative is rejected.
pub fn psd_sqrt(m: &Array2<f64>) -> Result<Array2<f64>> {
    let (n, c) = m.dim();
    if n != c || n == 0 {
        return Err(shape_err("psd_sqrt", "non-empty square matrix", format!("{n}x{c}")));
    }
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[[i, j]] - m[[j, i]]).abs() > 1e-12 * scale.max(1e-300) {
                return Err(Error::InvalidArgument(format!(
                    "psd_sqrt input not symmetric at ({i},{j})"
                )));
            }
        }
    }
    let sym = DMatrix::from_fn(n, n, |i, j| 0.5 * (m[[i, j]] + m[[j, i]]));
    let eig = SymmetricEigen::new(sym);
    let radius = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-10 * radius;
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -tol {
        return Err(Error::NotPositiveSemidefinite {
            min_eigenvalue: min,
            tolerance: tol,
        });
    }
    let roots: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let v = &eig.eigenvectors;
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let s: f64 = (0..n).map(|k| v[(i, k)] * roots[k] * v[(j, k)]).sum();
            out[[i, j]] = s;
            out[[j, i]] = s;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn same_seed_same_matrix() {
        let a = gaussian_matrix(&mut RngStream::new(7), 2, 3);
        let b = gaussian_matrix(&mut RngStream::new(7), 2, 3);
        assert_eq!(a, b);
        let c = gaussian_matrix(&mut RngStream::new(8), 2, 2);
        let d = gaussian_matrix(&mut RngStream::new(7), 2, 2);
        assert_ne!(c, d);
    }

    #[test]
    fn gaussian_moments() {
        let x = gaussian_matrix(&mut RngStream::new(7), 100_000, 1);
        let n = x.len() as f64;
        let mean = x.sum() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn split_is_stable_and_distinct() {
        let root = RngStream::new(11);
        let mut consumed = root.clone();
        consumed.normal();
        assert_eq!(root.split("noise").seed(), consumed.split("noise").seed());
        assert_ne!(root.split("a").seed(), root.split("b").seed());
        assert_ne!(root.split_index(0).seed(), root.split_index(1).seed());
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut st = AdamState::new(AdamConfig::default(), &[3]).unwrap();
        let mut p = vec![1.0, 2.0, 3.0];
        st.step(&mut [&mut p[..]], &[&[0.0; 3][..]], 0.1).unwrap();
        assert_eq!(p, vec![1.0, 2.0, 3.0]);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn adam_moments_decay_under_zero_gradient() {
        let mut st = AdamState::new(AdamConfig::default(), &[2]).unwrap();
        st.first_moment[0] = vec![0.5, -0.5];
        st.second_moment[0] = vec![0.25, 0.25];
        let mut p = vec![0.0, 0.0];
        st.step(&mut [&mut p[..]], &[&[0.0; 2][..]], 0.1).unwrap();
        assert_eq!(st.first_moment[0], vec![0.45, -0.45]);
        assert!(st.second_moment[0].iter().all(|v| *v < 0.25));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut st = AdamState::new(AdamConfig::default(), &[1]).unwrap();
        let mut p = vec![1.0];
        st.step(&mut [&mut p[..]], &[&[1.0][..]], 0.1).unwrap();
        // m_hat = 1, v_hat = 1 → p = 1 - 0.1 * 1 / (1 + 1e-8)
        assert!((p[0] - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut st = AdamState::new(AdamConfig::default(), &[1]).unwrap();
        let mut p = vec![1.0];
        for _ in 0..100 {
            let g = [2.0 * p[0]];
            st.step(&mut [&mut p[..]], &[&g[..]], 0.1).unwrap();
        }
        assert!(p[0].abs() < 0.1, "p = {}", p[0]);
        assert_eq!(st.step_count, 100);
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut st = AdamState::new(AdamConfig::default(), &[2]).unwrap();
        let mut p = vec![0.0; 3];
        let err = st.step(&mut [&mut p[..]], &[&[0.0; 3][..]], 0.1).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn psd_sqrt_trivial_cases() {
        let i3 = Array2::<f64>::eye(3);
        let s = psd_sqrt(&i3).unwrap();
        assert!((&s - &i3).iter().all(|v| v.abs() < 1e-14));
        let d = ndarray::arr2(&[[4.0, 0.0], [0.0, 9.0]]);
        let s = psd_sqrt(&d).unwrap();
        let want = ndarray::arr2(&[[2.0, 0.0], [0.0, 3.0]]);
        assert!((&s - &want).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn psd_sqrt_rejects_indefinite() {
        let m = ndarray::arr2(&[[1.0, 0.0], [0.0, -1.0]]);
        assert!(matches!(psd_sqrt(&m), Err(Error::NotPositiveSemidefinite { .. })));
    }

    #[test]
    fn psd_sqrt_clamps_rounding_negatives() {
        // rank-1 matrix; one eigenvalue is ~0 and may come out slightly negative
        let m = ndarray::arr2(&[[1.0, 1.0], [1.0, 1.0]]);
        let s = psd_sqrt(&m).unwrap();
        let ss = s.dot(&s);
        assert!((&ss - &m).iter().all(|v| v.abs() < 1e-12));
    }

    fn rel_frobenius(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let num = (a - b).iter().map(|v| v * v).sum::<f64>().sqrt();
        let den = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        num / den
    }

    #[test]
    fn psd_sqrt_random_5x5() {
        let mut rng = RngStream::new(3);
        let a = gaussian_matrix(&mut rng, 5, 5);
        let m = a.t().dot(&a);
        let s = psd_sqrt(&m).unwrap();
        assert!(rel_frobenius(&s.dot(&s), &m) <= 1e-8);
    }

    #[test]
    fn psd_sqrt_thousand_random() {
        let mut rng = RngStream::new(2024);
        for i in 0..1000 {
            let n = 1 + i % 32;
            let k = 1 + rng.below(n + 4);
            let a = gaussian_matrix(&mut rng, k, n);
            let m = a.t().dot(&a);
            let s = psd_sqrt(&m).unwrap();
            let err = rel_frobenius(&s.dot(&s), &m);
            assert!(err <= 1e-8, "case {i} ({n}x{n}, rank {k}): {err:e}");
        }
    }

    proptest! {
        #[test]
        fn streams_reproduce(seed in any::<u64>(), rows in 1usize..6, cols in 1usize..6) {
            let a = gaussian_matrix(&mut RngStream::new(seed), rows, cols);
            let b = gaussian_matrix(&mut RngStream::new(seed), rows, cols);
            prop_assert_eq!(a, b);
        }
    }
}
