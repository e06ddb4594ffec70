//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::Array2;

use sdprior::degradation::{apply_srf, blur, downsample, gaussian_kernel, normalize_kernel, upsample_zero_fill};
use sdprior::denoiser::{init_denoiser, train_denoiser, DenoiserConfig, DenoiserParams, Mode};
use sdprior::diffusion::{generate_spectra, make_schedule, q_sample, VarianceSchedule};
use sdprior::fusion::{
    baseline_fuse, fidelity_grad, prior_grad_with_noise, sdp_fuse, FusionConfig, Prior, PriorReduction,
};
use sdprior::hsi::{cube_to_spectra, wald_synthesize, Observations};
use sdprior::metrics::{fid_curve, fid_spectra, full_reference, no_reference, spearman, Q_WINDOW};
use sdprior::numerics::{gaussian_matrix, RngStream};
use sdprior::toy::{toy_degradation, toy_denoiser_config, toy_scene, toy_schedule, toy_train_config, ToyScene};
use sdprior::{HyperCube, SpectrumBatch};
use sdprior_oracle as oracle;

type Outcome = Result<(bool, String), String>;

struct Suite {
    failures: usize,
}

impl Suite {
    fn run(&mut self, id: usize, name: &str, f: impl FnOnce() -> Outcome) {
        let t0 = Instant::now();
        let (ok, detail) = match f() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            self.failures += 1;
        }
        println!(
            "[{}] {id} {name}: {detail} ({:.1} s)",
            if ok { "PASS" } else { "FAIL" },
            t0.elapsed().as_secs_f64()
        );
    }
}

fn e<T: std::fmt::Display>(err: T) -> String {
    err.to_string()
}

fn random_cube(rng: &mut RngStream, b: usize, h: usize, w: usize) -> HyperCube {
    let m = gaussian_matrix(rng, b, h * w);
    HyperCube::new(m.into_shape_with_order((b, h, w)).unwrap()).unwrap()
}

fn adjoint_gap(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0)
}

fn criterion_adjoints() -> Outcome {
    const TOL: f64 = 1e-10;
    let t0 = Instant::now();
    let mut rng = RngStream::new(101);
    let (mut worst_blur, mut worst_down, mut worst_srf) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let b = 1 + rng.below(5);
        let h = 4 + rng.below(20);
        let w = 4 + rng.below(20);
        let ks = 2 * rng.below(4) + 1;
        let k = normalize_kernel(gaussian_matrix(&mut rng, ks, ks).mapv(|v| v.abs() + 0.01)).map_err(e)?;
        let x = random_cube(&mut rng, b, h, w);
        let y = random_cube(&mut rng, b, h, w);
        worst_blur = worst_blur.max(adjoint_gap(blur(&x, &k, false).dot(&y), x.dot(&blur(&y, &k, true))));
    }
    for _ in 0..100 {
        let d = 1 + rng.below(4);
        let b = 1 + rng.below(5);
        let (lh, lw) = (1 + rng.below(8), 1 + rng.below(8));
        let x = random_cube(&mut rng, b, lh * d, lw * d);
        let y = random_cube(&mut rng, b, lh, lw);
        let dx = downsample(&x, d).map_err(e)?;
        worst_down = worst_down.max(adjoint_gap(dx.dot(&y), x.dot(&upsample_zero_fill(&y, d))));
    }
    for _ in 0..100 {
        let (nb, mb) = (2 + rng.below(30), 1 + rng.below(6));
        let (h, w) = (1 + rng.below(10), 1 + rng.below(10));
        let r = gaussian_matrix(&mut rng, mb, nb);
        let x = random_cube(&mut rng, nb, h, w);
        let z = random_cube(&mut rng, mb, h, w);
        let rx = apply_srf(&x, &r, false).map_err(e)?;
        let rtz = apply_srf(&z, &r, true).map_err(e)?;
        worst_srf = worst_srf.max(adjoint_gap(rx.dot(&z), x.dot(&rtz)));
    }
    let secs = t0.elapsed().as_secs_f64();
    let ok = worst_blur <= TOL && worst_down <= TOL && worst_srf <= TOL && secs < 10.0;
    Ok((
        ok,
        format!(
            "max gap blur {worst_blur:.2e}, downsample {worst_down:.2e}, srf {worst_srf:.2e} (tol {TOL:.0e}); {secs:.2} s (limit 10 s)"
        ),
    ))
}

/// |a − n| / max(|a|, |n|, 1e-3·max|n|) over all coordinates.
fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3 * scale))
        .fold(0.0, f64::max)
}

fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let fp = f(&p);
            p[i] = x[i] - h;
            let fm = f(&p);
            p[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn criterion_gradients() -> Outcome {
    const TOL: f64 = 1e-5;
    let t0 = Instant::now();
    let mut rng = RngStream::new(202);
    let cfg = DenoiserConfig {
        layers: 3,
        hidden: 8,
        embed_dim: 6,
        ..DenoiserConfig::reference(5)
    };
    let model = init_denoiser(cfg, &mut rng).map_err(e)?;
    let x = gaussian_matrix(&mut rng, 4, 5);
    let ts = [1, 7, 250, 1000];
    let up = gaussian_matrix(&mut rng, 4, 5);
    let loss = |m: &DenoiserParams, x: &Array2<f64>| -> f64 {
        let (out, _) = m.forward_rows(x, &ts, Mode::Eval).unwrap();
        (&out * &up).sum()
    };
    let (_, tape) = model.forward_rows(&x, &ts, Mode::Eval).map_err(e)?;
    let (gw, gx) = model.backward(&tape, &up).map_err(e)?;

    let flat: Vec<f64> = model.weights().tensors().iter().flat_map(|t| t.iter().copied()).collect();
    let num_w = central_diff(&flat, 1e-6, |p| {
        let mut m = model.clone();
        let mut off = 0;
        for t in m.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&p[off..off + n]);
            off += n;
        }
        loss(&m, &x)
    });
    let ana_w: Vec<f64> = gw.tensors().iter().flat_map(|t| t.iter().copied()).collect();
    let err_w = max_rel_err(&ana_w, &num_w);

    let num_x = central_diff(x.as_slice().unwrap(), 1e-6, |p| {
        loss(&model, &Array2::from_shape_vec((4, 5), p.to_vec()).unwrap())
    });
    let err_x = max_rel_err(gx.as_slice().unwrap(), &num_x);

    let sched = make_schedule(1000, 1e-4, 0.02).map_err(e)?;
    let deg = toy_degradation(5).map_err(e)?;
    let truth = HyperCube::new(random_cube(&mut rng, 5, 16, 16).into_inner().mapv(|v| 0.5 + 0.1 * v)).map_err(e)?;
    let obs = wald_synthesize(&truth, &deg, &RngStream::new(3)).map_err(e)?;
    let xc = HyperCube::new(random_cube(&mut rng, 5, 16, 16).into_inner().mapv(|v| 0.5 + 0.1 * v)).map_err(e)?;
    let with = |p: &[f64]| HyperCube::from_vec(5, 16, 16, p.to_vec()).unwrap();

    let (_, fg) = fidelity_grad(&xc, &obs, &deg, 0.1).map_err(e)?;
    // O(1) losses with O(1e-3) gradients: h = 1e-4 balances roundoff and truncation
    let num_f = central_diff(xc.as_slice(), 1e-4, |p| fidelity_grad(&with(p), &obs, &deg, 0.1).unwrap().0.total());
    let err_f = max_rel_err(fg.as_slice(), &num_f);

    let eps = gaussian_matrix(&mut rng, 256, 5);
    let prior_model = init_denoiser(cfg, &mut rng).map_err(e)?;
    let prior = |c: &HyperCube| prior_grad_with_noise(c, 300, &eps, &prior_model, &sched, 1e-3, PriorReduction::Sum).unwrap();
    let (_, pg) = prior(&xc);
    let num_p = central_diff(xc.as_slice(), 1e-4, |p| prior(&with(p)).0);
    let err_p = max_rel_err(pg.as_slice(), &num_p);

    let secs = t0.elapsed().as_secs_f64();
    let ok = [err_w, err_x, err_f, err_p].iter().all(|v| *v <= TOL) && secs < 60.0;
    Ok((
        ok,
        format!(
            "max rel err params {err_w:.2e}, input {err_x:.2e}, fidelity {err_f:.2e}, prior {err_p:.2e} (tol {TOL:.0e}); {secs:.2} s (limit 60 s)"
        ),
    ))
}

fn criterion_schedule() -> Outcome {
    let s = make_schedule(1000, 1e-4, 0.02).map_err(e)?;
    let log_ab = s.alpha_bar(1000).ln();
    let decreasing = (2..=1000).all(|t| s.alpha_bar(t) < s.alpha_bar(t - 1));
    let ok = log_ab > -11.0 && log_ab < -9.0 && decreasing;
    Ok((ok, format!("log alpha_bar_T = {log_ab:.4} (want in (-11, -9)); strictly decreasing: {decreasing}")))
}

fn criterion_q_sample() -> Outcome {
    let s = make_schedule(1000, 1e-4, 0.02).map_err(e)?;
    let n = 10_000;
    let x0_val = 0.7;
    let x0 = Array2::from_elem((n, 1), x0_val);
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, &t) in [1usize, 250, 500, 1000].iter().enumerate() {
        let eps = gaussian_matrix(&mut RngStream::new(400 + i as u64), n, 1);
        let xt = q_sample(&x0, t, &eps, &s).map_err(e)?;
        let mean = xt.sum() / n as f64;
        let var = xt.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let ab = s.alpha_bar(t);
        let (m_want, v_want) = (ab.sqrt() * x0_val, 1.0 - ab);
        let z_mean = (mean - m_want) / (v_want / n as f64).sqrt();
        let z_var = (var - v_want) / (v_want * (2.0 / (n - 1) as f64).sqrt());
        ok &= z_mean.abs() <= 3.0 && z_var.abs() <= 3.0;
        parts.push(format!("t={t} z_mean {z_mean:+.2} z_var {z_var:+.2}"));
    }
    Ok((ok, format!("{} (limit 3 sigma)", parts.join(", "))))
}

struct Toy {
    scene: ToyScene,
    deg: sdprior::degradation::DegradationModel,
    obs: Observations,
    sched: VarianceSchedule,
    model: DenoiserParams,
    train_time: Duration,
    held_out: SpectrumBatch,
}

fn train_toy(scene: &ToyScene, steps: u64, hidden: usize, sched: &VarianceSchedule) -> sdprior::Result<DenoiserParams> {
    let cfg = DenoiserConfig {
        hidden,
        ..toy_denoiser_config(scene.training.bands())
    };
    let init = init_denoiser(cfg, &mut RngStream::new(11))?;
    let out = train_denoiser(init, &scene.training, &toy_train_config(steps), sched, &RngStream::new(12), None)?;
    Ok(out.params)
}

fn build_toy() -> sdprior::Result<Toy> {
    let scene = toy_scene(31, 32, 32, 4, 0)?;
    let deg = toy_degradation(31)?;
    let obs = wald_synthesize(&scene.reference, &deg, &RngStream::new(1))?;
    let sched = toy_schedule()?;
    let t0 = Instant::now();
    let model = train_toy(&scene, 5000, 64, &sched)?;
    let held_out = cube_to_spectra(&scene.reference);
    Ok(Toy {
        scene,
        deg,
        obs,
        sched,
        model,
        train_time: t0.elapsed(),
        held_out,
    })
}

fn fuse_psnr(toy: &Toy, model: &DenoiserParams) -> sdprior::Result<(f64, f64)> {
    let cfg = FusionConfig::reference(toy.sched.len());
    let prior = Prior {
        model,
        schedule: &toy.sched,
    };
    let x = sdp_fuse(&toy.obs, &toy.deg, Some(prior), &cfg)?.estimate;
    let r = full_reference(&toy.scene.reference, &x, toy.deg.factor())?;
    Ok((r.psnr_db, r.sam_deg))
}

fn criterion_end_to_end(toy: &Toy) -> Outcome {
    let t0 = Instant::now();
    let mut cfg = FusionConfig::reference(toy.sched.len());
    cfg.gamma = 0.0;
    let base = baseline_fuse(&toy.obs, &toy.deg, &cfg).map_err(e)?;
    let rb = full_reference(&toy.scene.reference, &base.estimate, 4).map_err(e)?;
    let (ps, ss) = fuse_psnr(toy, &toy.model).map_err(e)?;
    let secs = (t0.elapsed() + toy.train_time).as_secs_f64();
    let ok = ps >= rb.psnr_db + 0.5 && ss <= rb.sam_deg && secs < 1800.0;
    Ok((
        ok,
        format!(
            "PSNR baseline {:.3} dB, SDP {ps:.3} dB (need +0.5); SAM baseline {:.3}, SDP {ss:.3} deg; {secs:.1} s incl. training (limit 1800 s)",
            rb.psnr_db, rb.sam_deg
        ),
    ))
}

fn criterion_fid_curve(toy: &Toy) -> Outcome {
    let t_max = toy.sched.len();
    let at: Vec<usize> = std::iter::once(1).chain((1..=10).map(|i| i * t_max / 10)).collect();
    let curve = fid_curve(&toy.model, &toy.sched, &toy.held_out, &at, 1000, &RngStream::new(21)).map_err(e)?;
    let first = curve.first().unwrap().1;
    let last = curve.last().unwrap().1;
    let pairs = curve.len() - 1;
    let monotone = curve.windows(2).filter(|w| w[0].1 <= w[1].1).count();
    let frac = monotone as f64 / pairs as f64;
    let ok = first < last && frac >= 0.7;
    Ok((
        ok,
        format!("fid(t=1) {first:.4} < fid(t={t_max}) {last:.4}; non-increasing toward t=1 on {monotone}/{pairs} pairs (need 70%)"),
    ))
}

fn criterion_fid_psnr(toy: &Toy) -> Outcome {
    let mut fids = Vec::new();
    let mut psnrs = Vec::new();
    let mut desc = Vec::new();
    let variants: [(u64, usize); 5] = [(100, 16), (300, 32), (1000, 32), (2500, 64), (5000, 64)];
    for (steps, hidden) in variants {
        let model = if (steps, hidden) == (5000, 64) {
            toy.model.clone()
        } else {
            train_toy(&toy.scene, steps, hidden, &toy.sched).map_err(e)?
        };
        let gen = generate_spectra(&model, 1000, &toy.sched, &RngStream::new(31), &[]).map_err(e)?;
        let fid = fid_spectra(&toy.held_out, &gen.samples).map_err(e)?;
        let (psnr, _) = fuse_psnr(toy, &model).map_err(e)?;
        desc.push(format!("{steps}x{hidden}: fid {fid:.3} psnr {psnr:.2}"));
        fids.push(fid);
        psnrs.push(psnr);
    }
    let rho = spearman(&fids, &psnrs).map_err(e)?;
    Ok((rho < 0.0, format!("spearman {rho:+.3} (need < 0); {}", desc.join(", "))))
}

fn to_oracle(c: &HyperCube) -> oracle::Cube {
    oracle::Cube {
        bands: c.bands(),
        height: c.height(),
        width: c.width(),
        values: c.as_slice().to_vec(),
    }
}

fn criterion_metrics() -> Outcome {
    const TOL: f64 = 1e-10;
    let mut rng = RngStream::new(808);
    let pos = |rng: &mut RngStream, b, h, w| {
        HyperCube::new(random_cube(rng, b, h, w).into_inner().mapv(|v| (0.5 + 0.15 * v).clamp(0.01, 1.0))).unwrap()
    };
    let mut worst = 0.0f64;
    let mut gap = |a: f64, b: f64| worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1.0));

    let (r, est) = (pos(&mut rng, 4, 8, 8), pos(&mut rng, 4, 8, 8));
    let rep = full_reference(&r, &est, 4).map_err(e)?;
    let (or, oe) = (to_oracle(&r), to_oracle(&est));
    let bands = oracle::psnr_per_band(&or, &oe);
    gap(rep.psnr_db, bands.iter().sum::<f64>() / bands.len() as f64);
    gap(rep.sam_deg, oracle::sam_degrees(&or, &oe));
    gap(rep.rmse, oracle::rmse(&or, &oe));
    gap(rep.ergas, oracle::ergas(&or, &oe, 4));
    let (r2, e2) = (pos(&mut rng, 3, 64, 48), pos(&mut rng, 3, 64, 48));
    gap(
        full_reference(&r2, &e2, 2).map_err(e)?.uiqi,
        oracle::uiqi(&to_oracle(&r2), &to_oracle(&e2), Q_WINDOW),
    );

    let a = SpectrumBatch::new(gaussian_matrix(&mut rng, 40, 6)).map_err(e)?;
    let b = SpectrumBatch::new(gaussian_matrix(&mut rng, 30, 6).mapv(|v| 0.6 * v + 0.3)).map_err(e)?;
    let row_vecs = |s: &SpectrumBatch| s.data().rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>();
    gap(fid_spectra(&a, &b).map_err(e)?, oracle::fid(&row_vecs(&a), &row_vecs(&b), 1e-6));

    let deg = toy_degradation(6).map_err(e)?;
    let (f, l, m) = (pos(&mut rng, 6, 32, 32), pos(&mut rng, 6, 8, 8), pos(&mut rng, 4, 32, 32));
    let nr = no_reference(&f, &l, &m, &deg).map_err(e)?;
    let kernel: Vec<Vec<f64>> = gaussian_kernel(7, 1.7).map_err(e)?.rows().into_iter().map(|r| r.to_vec()).collect();
    let (dl, ds, q) = oracle::qnr(&to_oracle(&f), &to_oracle(&l), &to_oracle(&m), &kernel, 4, Q_WINDOW);
    gap(nr.d_lambda, dl);
    gap(nr.d_s, ds);
    gap(nr.qnr, q);

    let same = full_reference(&r2, &r2, 2).map_err(e)?;
    let exact = same.rmse == 0.0 && same.uiqi == 1.0 && nr.qnr == (1.0 - nr.d_lambda) * (1.0 - nr.d_s);
    Ok((
        worst <= TOL && exact,
        format!("max oracle gap {worst:.2e} (tol {TOL:.0e}); RMSE 0, UIQI 1, QNR product law exact: {exact}"),
    ))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_sdprior")).args(args).output().map_err(e)?;
    if !out.status.success() {
        return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(())
}

fn cli_pipeline(root: &Path) -> Result<(), String> {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    run_cli(&["--threads", "2", "synth", "--toy", "--seed", "5", "--out", &p("synth")])?;
    run_cli(&[
        "--threads", "2", "train", "--preset", "toy", "--spectra", &p("synth/clean_spectra.csv"),
        "--steps", "200", "--seed", "6", "--out", &p("train"),
    ])?;
    run_cli(&[
        "--threads", "2", "fuse", "--lr-hsi", &p("synth/lr_hsi.hsc"), "--hr-msi", &p("synth/hr_msi.hsc"),
        "--psf", &p("synth/psf.csv"), "--srf", &p("synth/srf.csv"), "--factor", "4",
        "--checkpoint", &p("train/checkpoint.sdm"), "--seed", "7", "--out", &p("fuse"),
    ])
}

fn criterion_cli_determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(e)?;
    let b = tempfile::tempdir().map_err(e)?;
    cli_pipeline(a.path())?;
    cli_pipeline(b.path())?;
    let files = [
        "synth/lr_hsi.hsc", "synth/hr_msi.hsc", "synth/reference.hsc", "synth/clean_spectra.csv",
        "train/checkpoint.sdm", "train/loss_trace.csv", "fuse/fused.hsc", "fuse/trace.csv",
    ];
    let mut differing = Vec::new();
    for f in files {
        let x = std::fs::read(a.path().join(f)).map_err(e)?;
        let y = std::fs::read(b.path().join(f)).map_err(e)?;
        if x != y {
            differing.push(f);
        }
    }
    Ok((
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} artifacts byte-identical across two synth/train/fuse runs", files.len())
        } else {
            format!("differing: {differing:?}")
        },
    ))
}

fn main() {
    let mut suite = Suite { failures: 0 };
    suite.run(1, "adjoint suite", criterion_adjoints);
    suite.run(2, "finite-difference gradients", criterion_gradients);
    suite.run(3, "variance schedule", criterion_schedule);
    suite.run(4, "q_sample moments", criterion_q_sample);
    match build_toy() {
        Ok(toy) => {
            suite.run(5, "toy end-to-end fusion", || criterion_end_to_end(&toy));
            suite.run(6, "FID versus timestep", || criterion_fid_curve(&toy));
            suite.run(7, "FID and fusion PSNR rank correlation", || criterion_fid_psnr(&toy));
        }
        Err(err) => {
            for (id, name) in [(5, "toy end-to-end fusion"), (6, "FID versus timestep"), (7, "FID and fusion PSNR rank correlation")] {
                suite.run(id, name, || Err(format!("toy training failed: {err}")));
            }
        }
    }
    suite.run(8, "metrics oracles", criterion_metrics);
    suite.run(9, "CLI determinism", criterion_cli_determinism);
    if suite.failures > 0 {
        println!("{} criteria failed", suite.failures);
        std::process::exit(1);
    }
    println!("all criteria passed");
}
