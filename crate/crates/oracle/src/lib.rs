//! Straightforward loop implementations of the quality metrics, written
//! without sharing code or conventions with the main crate. Every formula
//! takes a different arithmetic route where one exists: SAM via `acos`,
//! Q via its three-factor form with unbiased moments, and the FID matrix
//! root via Denman–Beavers iteration on the non-symmetric `Σ₁Σ₂`.

/// Row-major `bands × height × width` values.
#[derive(Debug, Clone)]
pub struct Cube {
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Cube {
    pub fn at(&self, k: usize, i: usize, j: usize) -> f64 {
        self.values[(k * self.height + i) * self.width + j]
    }

    fn band(&self, k: usize) -> Vec<Vec<f64>> {
        (0..self.height)
            .map(|i| (0..self.width).map(|j| self.at(k, i, j)).collect())
            .collect()
    }
}

pub fn psnr_per_band(a: &Cube, b: &Cube) -> Vec<f64> {
    (0..a.bands)
        .map(|k| {
            let mut s = 0.0;
            for i in 0..a.height {
                for j in 0..a.width {
                    let d = a.at(k, i, j) - b.at(k, i, j);
                    s += d * d;
                }
            }
            let mse = s / (a.height * a.width) as f64;
            10.0 * (1.0 / mse).log10()
        })
        .collect()
}

pub fn sam_degrees(a: &Cube, b: &Cube) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    for i in 0..a.height {
        for j in 0..a.width {
            let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
            for k in 0..a.bands {
                ab += a.at(k, i, j) * b.at(k, i, j);
                aa += a.at(k, i, j).powi(2);
                bb += b.at(k, i, j).powi(2);
            }
            if aa > 0.0 && bb > 0.0 {
                let c = (ab / (aa * bb).sqrt()).clamp(-1.0, 1.0);
                total += c.acos() * 180.0 / std::f64::consts::PI;
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

pub fn rmse(a: &Cube, b: &Cube) -> f64 {
    let s: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).powi(2)).sum();
    (s / a.values.len() as f64).sqrt()
}

pub fn ergas(reference: &Cube, est: &Cube, ratio: usize) -> f64 {
    let npx = (reference.height * reference.width) as f64;
    let mut acc = 0.0;
    for k in 0..reference.bands {
        let (mut se, mut mu) = (0.0, 0.0);
        for i in 0..reference.height {
            for j in 0..reference.width {
                se += (reference.at(k, i, j) - est.at(k, i, j)).powi(2);
                mu += reference.at(k, i, j);
            }
        }
        let rmse_b = (se / npx).sqrt();
        mu /= npx;
        acc += (rmse_b / mu).powi(2);
    }
    100.0 / ratio as f64 * (acc / reference.bands as f64).sqrt()
}

/// Q over one window, `None` when undefined.
pub fn q_window(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / (n - 1.0);
    let vb = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / (n - 1.0);
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0);
    let (sa, sb) = (va.sqrt(), vb.sqrt());
    if sa > 0.0 && sb > 0.0 && (ma != 0.0 || mb != 0.0) {
        let corr = cov / (sa * sb);
        let lum = 2.0 * ma * mb / (ma * ma + mb * mb);
        let con = 2.0 * sa * sb / (va + vb);
        Some(corr * lum * con)
    } else {
        let den = (va + vb) * (ma * ma + mb * mb);
        (den != 0.0).then(|| 4.0 * cov * ma * mb / den)
    }
}

fn q_image_parts(a: &[Vec<f64>], b: &[Vec<f64>], win: usize) -> (f64, usize) {
    let (h, w) = (a.len(), a[0].len());
    let (wh, ww) = (win.min(h), win.min(w));
    let (mut sum, mut count) = (0.0, 0);
    let mut r = 0;
    while r + wh <= h {
        let mut c = 0;
        while c + ww <= w {
            let mut xa = Vec::new();
            let mut xb = Vec::new();
            for i in r..r + wh {
                for j in c..c + ww {
                    xa.push(a[i][j]);
                    xb.push(b[i][j]);
                }
            }
            if let Some(q) = q_window(&xa, &xb) {
                sum += q;
                count += 1;
            }
            c += ww;
        }
        r += wh;
    }
    (sum, count)
}

pub fn q_image(a: &[Vec<f64>], b: &[Vec<f64>], win: usize) -> f64 {
    let (s, c) = q_image_parts(a, b, win);
    if c > 0 {
        s / c as f64
    } else if a == b {
        1.0
    } else {
        0.0
    }
}

/// Mean of Q over every (band, window) pair with a defined value.
pub fn uiqi(a: &Cube, b: &Cube, win: usize) -> f64 {
    let (mut s, mut c) = (0.0, 0);
    for k in 0..a.bands {
        let (ds, dc) = q_image_parts(&a.band(k), &b.band(k), win);
        s += ds;
        c += dc;
    }
    s / c as f64
}

type Mat = Vec<Vec<f64>>;

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    let m = b[0].len();
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for k in 0..b.len() {
            for j in 0..m {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

/// Gauss–Jordan inverse with partial pivoting.
pub fn inverse(a: &Mat) -> Mat {
    let n = a.len();
    let mut m: Mat = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap();
        m.swap(col, piv);
        let p = m[col][col];
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Principal square root by Denman–Beavers iteration.
pub fn sqrtm(a: &Mat) -> Mat {
    let n = a.len();
    let mut y = a.clone();
    let mut z: Mat = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _ in 0..100 {
        let yi = inverse(&y);
        let zi = inverse(&z);
        let ny: Mat = (0..n).map(|i| (0..n).map(|j| 0.5 * (y[i][j] + zi[i][j])).collect()).collect();
        let nz: Mat = (0..n).map(|i| (0..n).map(|j| 0.5 * (z[i][j] + yi[i][j])).collect()).collect();
        let delta: f64 = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| (ny[i][j] - y[i][j]).abs())
            .fold(0.0, f64::max);
        y = ny;
        z = nz;
        if delta < 1e-15 {
            break;
        }
    }
    y
}

fn mean_cov(rows: &[Vec<f64>], reg: f64) -> (Vec<f64>, Mat) {
    let n = rows.len();
    let b = rows[0].len();
    let mut mu = vec![0.0; b];
    for r in rows {
        for k in 0..b {
            mu[k] += r[k] / n as f64;
        }
    }
    let mut cov = vec![vec![0.0; b]; b];
    for r in rows {
        for i in 0..b {
            for j in 0..b {
                cov[i][j] += (r[i] - mu[i]) * (r[j] - mu[j]) / (n - 1) as f64;
            }
        }
    }
    for (i, row) in cov.iter_mut().enumerate() {
        row[i] += reg;
    }
    (mu, cov)
}

/// `‖μ₁ − μ₂‖² + tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^{1/2})`, with `reg·I` added to both covariances.
pub fn fid(real: &[Vec<f64>], gen: &[Vec<f64>], reg: f64) -> f64 {
    let (m1, s1) = mean_cov(real, reg);
    let (m2, s2) = mean_cov(gen, reg);
    let root = sqrtm(&matmul(&s1, &s2));
    let b = m1.len();
    let mut out = 0.0;
    for i in 0..b {
        out += (m1[i] - m2[i]).powi(2) + s1[i][i] + s2[i][i] - 2.0 * root[i][i];
    }
    out
}

/// Circular convolution with a centred odd kernel, then decimation at `(d·i, d·j)`.
pub fn blur_decimate(x: &Cube, kernel: &[Vec<f64>], d: usize) -> Cube {
    let (h, w) = (x.height, x.width);
    let ks = kernel.len();
    let c = (ks / 2) as isize;
    let (lh, lw) = (h / d, w / d);
    let mut values = Vec::with_capacity(x.bands * lh * lw);
    for k in 0..x.bands {
        for i in 0..lh {
            for j in 0..lw {
                let (ri, cj) = ((i * d) as isize, (j * d) as isize);
                let mut s = 0.0;
                for u in 0..ks {
                    for v in 0..ks {
                        let si = (ri - (u as isize - c)).rem_euclid(h as isize) as usize;
                        let sj = (cj - (v as isize - c)).rem_euclid(w as isize) as usize;
                        s += kernel[u][v] * x.at(k, si, sj);
                    }
                }
                values.push(s);
            }
        }
    }
    Cube { bands: x.bands, height: lh, width: lw, values }
}

/// `(D_λ, D_s, QNR)` with `p = q = 1`; windows `win` on the HR grid and
/// `win / d` on the LR grid.
pub fn qnr(
    fused: &Cube,
    lr: &Cube,
    msi: &Cube,
    kernel: &[Vec<f64>],
    d: usize,
    win: usize,
) -> (f64, f64, f64) {
    let lr_win = (win / d).max(1);
    let fb: Vec<Mat> = (0..fused.bands).map(|k| fused.band(k)).collect();
    let lb: Vec<Mat> = (0..lr.bands).map(|k| lr.band(k)).collect();
    let mut dl = 0.0;
    let mut pairs = 0;
    for l in 0..fused.bands {
        for r in 0..fused.bands {
            if l != r {
                dl += (q_image(&fb[l], &fb[r], win) - q_image(&lb[l], &lb[r], lr_win)).abs();
                pairs += 1;
            }
        }
    }
    let dl = dl / pairs as f64;
    let msi_lr = blur_decimate(msi, kernel, d);
    let mut ds = 0.0;
    for l in 0..fused.bands {
        for m in 0..msi.bands {
            let hi = q_image(&fb[l], &msi.band(m), win);
            let lo = q_image(&lb[l], &msi_lr.band(m), lr_win);
            ds += (hi - lo).abs();
        }
    }
    let ds = ds / (fused.bands * msi.bands) as f64;
    (dl, ds, (1.0 - dl) * (1.0 - ds))
}
