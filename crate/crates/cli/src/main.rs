//! Command-line pipeline: synthesize observations, train the spectral
//! denoiser, sample, fuse and evaluate. Every command writes its outputs and
//! a `manifest.json` into `--out`.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sdprior::degradation::{gaussian_kernel, ikonos_like_srf, DegradationModel};
use sdprior::denoiser::{
    init_denoiser, load_checkpoint, save_checkpoint, train_denoiser, Checkpoint, DenoiserConfig,
    LrSchedule, ScheduleSpec,
};
use sdprior::diffusion::{generate_spectra, DataMap, ReverseVariance};
use sdprior::fusion::{
    baseline_fuse, sdp_fuse, write_trace_csv, FusionConfig, FusionProfile, InitStrategy, Prior,
    PriorReduction,
};
use sdprior::hsi::{
    cube_to_spectra, load_cube, load_matrix_csv, load_spectra_csv, minmax_scale, save_cube,
    save_matrix_csv, save_spectra_csv, split_top_bottom, wald_synthesize,
};
use sdprior::metrics::{fid_curve, full_reference, no_reference, write_fid_csv};
use sdprior::numerics::{AdamConfig, RngStream};
use sdprior::toy;

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "sdprior", version, about = "Spectral diffusion prior for HSI/MSI fusion")]
struct Cli {
    /// Worker threads (0 = one per core). Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Degrade a reference cube into LR-HSI and HR-MSI observations.
    Synth(SynthArgs),
    /// Train the denoiser on clean spectra.
    Train(TrainArgs),
    /// Draw spectra from a trained denoiser.
    Sample(SampleArgs),
    /// FID of partially denoised spectra against real ones, per timestep.
    FidCurve(FidCurveArgs),
    /// Fuse LR-HSI and HR-MSI, with the diffusion prior unless `--gamma 0`.
    Fuse(FuseArgs),
    /// Score a fused cube.
    Eval(EvalArgs),
}

#[derive(Args, Serialize)]
struct SynthArgs {
    /// Reference cube (HSC1). The top half becomes training spectra, the
    /// bottom half is degraded.
    #[arg(long, required_unless_present = "toy", conflicts_with = "toy")]
    reference: Option<PathBuf>,
    /// Use a built-in 31-band 64×32 endmember mixture and toy degradation defaults.
    #[arg(long)]
    toy: bool,
    #[arg(long, default_value_t = 0)]
    toy_seed: u64,
    /// Rescale the reference to [0, 1] first.
    #[arg(long)]
    minmax: bool,
    /// PSF as headerless CSV; overrides --psf-size/--psf-sigma.
    #[arg(long)]
    psf: Option<PathBuf>,
    #[arg(long)]
    psf_size: Option<usize>,
    #[arg(long)]
    psf_sigma: Option<f64>,
    /// SRF (MSI bands × HSI bands) as headerless CSV; default is IKONOS-like.
    #[arg(long)]
    srf: Option<PathBuf>,
    #[arg(long, default_value_t = 400.0)]
    wl_start: f64,
    #[arg(long, default_value_t = 1000.0)]
    wl_end: f64,
    #[arg(long)]
    factor: Option<usize>,
    #[arg(long, default_value_t = 20.0)]
    snr_hsi: f64,
    #[arg(long, default_value_t = 30.0)]
    snr_msi: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Preset {
    /// Four blocks of 512, T = 1000, batch 512.
    Reference,
    /// Three blocks of 64, T = 200, batch 256.
    Toy,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum LrRule {
    LinearDecay,
    Constant,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum MapArg {
    Identity,
    SignedUnit,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum VarianceArg {
    Beta,
    BetaTilde,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    /// Training spectra, one per CSV row.
    #[arg(long)]
    spectra: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Reference)]
    preset: Preset,
    #[arg(long, default_value_t = 30_000)]
    steps: u64,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, value_enum, default_value_t = LrRule::LinearDecay)]
    lr_schedule: LrRule,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long, default_value_t = 1e-4)]
    beta_1: f64,
    #[arg(long, default_value_t = 0.02)]
    beta_t: f64,
    #[arg(long, value_enum, default_value_t = VarianceArg::Beta)]
    reverse_variance: VarianceArg,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    embed: Option<usize>,
    #[arg(long, default_value_t = 0.001)]
    dropout: f64,
    #[arg(long, value_enum, default_value_t = MapArg::Identity)]
    data_map: MapArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Continue from a checkpoint with optimizer state; architecture and
    /// schedule flags are taken from it.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Also save x_t at these timesteps (0 is the final sample).
    #[arg(long, value_delimiter = ',')]
    at: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct FidCurveArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Real spectra CSV.
    #[arg(long)]
    real: PathBuf,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Timesteps in 1..=T; default is 1 and every T/10.
    #[arg(long, value_delimiter = ',')]
    at: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ProfileArg {
    Paviau,
    Ksc,
    Dc,
    Toy,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ReductionArg {
    Sum,
    Mean,
}

#[derive(Args, Serialize)]
struct DegradationArgs {
    #[arg(long)]
    psf: PathBuf,
    #[arg(long)]
    srf: PathBuf,
    #[arg(long)]
    factor: usize,
}

#[derive(Args, Serialize)]
struct FuseArgs {
    #[arg(long)]
    lr_hsi: PathBuf,
    #[arg(long)]
    hr_msi: PathBuf,
    #[command(flatten)]
    degradation: DegradationArgs,
    /// Trained denoiser; required unless `--gamma 0`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 0.001)]
    gamma: f64,
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Overrides the profile's learning rate.
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long, value_enum, default_value_t = ProfileArg::Toy)]
    profile: ProfileArg,
    /// Outer subproblems; defaults to the checkpoint's T, or 1000.
    #[arg(long)]
    t: Option<usize>,
    #[arg(long, value_enum, default_value_t = ReductionArg::Sum)]
    reduction: ReductionArg,
    /// Zero Adam moments at each new t.
    #[arg(long)]
    reset_moments: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    estimate: PathBuf,
    /// Ground truth for full-reference metrics.
    #[arg(long, required_unless_present = "no_ref")]
    reference: Option<PathBuf>,
    /// ERGAS resolution ratio.
    #[arg(long, default_value_t = 1)]
    ratio: usize,
    /// Also compute D_λ, D_s and QNR; needs the observations and operators.
    #[arg(long, requires_all = ["lr_hsi", "hr_msi", "psf", "srf", "factor"])]
    no_ref: bool,
    #[arg(long)]
    lr_hsi: Option<PathBuf>,
    #[arg(long)]
    hr_msi: Option<PathBuf>,
    #[arg(long)]
    psf: Option<PathBuf>,
    #[arg(long)]
    srf: Option<PathBuf>,
    #[arg(long)]
    factor: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .context("configuring thread pool")?;
    }
    let start = Instant::now();
    let (name, params, seed, out, outputs) = match &cli.command {
        Command::Synth(a) => ("synth", to_json(a)?, Some(a.seed), &a.out, cmd_synth(a)?),
        Command::Train(a) => ("train", to_json(a)?, Some(a.seed), &a.out, cmd_train(a)?),
        Command::Sample(a) => ("sample", to_json(a)?, Some(a.seed), &a.out, cmd_sample(a)?),
        Command::FidCurve(a) => ("fid-curve", to_json(a)?, Some(a.seed), &a.out, cmd_fid_curve(a)?),
        Command::Fuse(a) => ("fuse", to_json(a)?, Some(a.seed), &a.out, cmd_fuse(a)?),
        Command::Eval(a) => ("eval", to_json(a)?, None, &a.out, cmd_eval(a)?),
    };
    let manifest = RunManifest::new(name, params, seed, cli.threads, out, &outputs, start.elapsed())?;
    manifest.write(out)?;
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

/// Outputs staged in memory and written only after the command succeeded.
#[derive(Default)]
struct Staged {
    files: Vec<(String, Box<dyn FnOnce(&Path) -> sdprior::Result<()>>)>,
}

impl Staged {
    fn add(&mut self, name: &str, write: impl FnOnce(&Path) -> sdprior::Result<()> + 'static) {
        self.files.push((name.to_string(), Box::new(write)));
    }

    fn commit(self, out: &Path) -> Result<Vec<String>> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let mut names = Vec::with_capacity(self.files.len());
        for (name, write) in self.files {
            let path = out.join(&name);
            write(&path).with_context(|| format!("writing {}", path.display()))?;
            names.push(name);
        }
        Ok(names)
    }
}

fn cmd_synth(a: &SynthArgs) -> Result<Vec<String>> {
    let full = match &a.reference {
        Some(p) => load_cube(p).with_context(|| format!("reading {}", p.display()))?,
        None => {
            toy::toy_cube(toy::TOY_BANDS, 2 * toy::TOY_SIZE, toy::TOY_SIZE, toy::TOY_ENDMEMBERS, a.toy_seed)?.0
        }
    };
    let full = if a.minmax { minmax_scale(&full) } else { full };
    let (top, bottom) = split_top_bottom(&full)?;
    let psf = match &a.psf {
        Some(p) => load_matrix_csv(p).with_context(|| format!("reading {}", p.display()))?,
        None => {
            let (size, sigma) = if a.toy { (7, 1.7) } else { (15, 3.4) };
            gaussian_kernel(a.psf_size.unwrap_or(size), a.psf_sigma.unwrap_or(sigma))?
        }
    };
    let srf = match &a.srf {
        Some(p) => load_matrix_csv(p).with_context(|| format!("reading {}", p.display()))?,
        None => ikonos_like_srf(full.bands(), a.wl_start, a.wl_end)?,
    };
    let factor = a.factor.unwrap_or(if a.toy { 4 } else { 8 });
    let deg = DegradationModel::new(psf.clone(), factor, srf.clone(), a.snr_hsi, a.snr_msi)?;
    let obs = wald_synthesize(&bottom, &deg, &RngStream::new(a.seed))?;

    let mut s = Staged::default();
    s.add("lr_hsi.hsc", move |p| save_cube(&obs.lr_hsi, p));
    s.add("hr_msi.hsc", move |p| save_cube(&obs.hr_msi, p));
    s.add("reference.hsc", move |p| save_cube(&bottom, p));
    let spectra = cube_to_spectra(&top);
    s.add("clean_spectra.csv", move |p| save_spectra_csv(&spectra, p));
    s.add("psf.csv", move |p| save_matrix_csv(&psf, p));
    s.add("srf.csv", move |p| save_matrix_csv(&srf, p));
    s.commit(&a.out)
}

fn cmd_train(a: &TrainArgs) -> Result<Vec<String>> {
    let spectra = load_spectra_csv(&a.spectra).with_context(|| format!("reading {}", a.spectra.display()))?;
    let toy = matches!(a.preset, Preset::Toy);
    let (params, schedule, start, adam) = match &a.resume {
        Some(p) => {
            let ck = load_checkpoint(p).with_context(|| format!("reading {}", p.display()))?;
            let Some(adam) = ck.adam else {
                bail!("{} has no optimizer state; it cannot be resumed", p.display());
            };
            (ck.params, ck.schedule, ck.step, Some((ck.step, adam)))
        }
        None => {
            let base = if toy {
                toy::toy_denoiser_config(spectra.bands())
            } else {
                DenoiserConfig::reference(spectra.bands())
            };
            let cfg = DenoiserConfig {
                layers: a.layers.unwrap_or(base.layers),
                hidden: a.hidden.unwrap_or(base.hidden),
                embed_dim: a.embed.unwrap_or(base.embed_dim),
                dropout: a.dropout,
                data_map: match a.data_map {
                    MapArg::Identity => DataMap::Identity,
                    MapArg::SignedUnit => DataMap::SignedUnit,
                },
                ..base
            };
            let schedule = ScheduleSpec {
                t_steps: a.t.unwrap_or(if toy { toy::TOY_T } else { 1000 }),
                beta_1: a.beta_1,
                beta_t: a.beta_t,
                reverse_variance: match a.reverse_variance {
                    VarianceArg::Beta => ReverseVariance::Beta,
                    VarianceArg::BetaTilde => ReverseVariance::PosteriorBetaTilde,
                },
            };
            let root = RngStream::new(a.seed);
            (init_denoiser(cfg, &mut root.split("init"))?, schedule, 0, None)
        }
    };
    let tc = sdprior::denoiser::TrainConfig {
        batch_size: a.batch.unwrap_or(if toy { 256 } else { 512 }),
        steps: a.steps,
        base_lr: a.lr,
        lr_schedule: match a.lr_schedule {
            LrRule::LinearDecay => LrSchedule::LinearDecay,
            LrRule::Constant => LrSchedule::Constant,
        },
        adam: AdamConfig::default(),
    };
    let sched = schedule.build()?;
    let outcome = train_denoiser(params, &spectra, &tc, &sched, &RngStream::new(a.seed).split("train"), adam)?;
    if let (Some(first), Some(last)) = (outcome.trace.first(), outcome.trace.last()) {
        println!(
            "steps {}..{}: loss {:.4} -> {:.4}",
            start,
            outcome.step,
            first.loss,
            last.loss
        );
    }
    let mut trace = String::from("step,lr,loss\n");
    for r in &outcome.trace {
        trace.push_str(&format!("{},{},{}\n", r.step, r.lr, r.loss));
    }
    let ck = Checkpoint {
        params: outcome.params,
        schedule,
        step: outcome.step,
        adam: Some(outcome.adam),
    };
    let mut s = Staged::default();
    s.add("checkpoint.sdm", move |p| save_checkpoint(&ck, p));
    s.add("loss_trace.csv", move |p| Ok(fs::write(p, trace)?));
    s.commit(&a.out)
}

fn open_checkpoint(p: &Path) -> Result<Checkpoint> {
    ensure!(p.is_file(), "checkpoint {} does not exist", p.display());
    load_checkpoint(p).with_context(|| format!("reading {}", p.display()))
}

fn cmd_sample(a: &SampleArgs) -> Result<Vec<String>> {
    let ck = open_checkpoint(&a.checkpoint)?;
    let sched = ck.schedule.build()?;
    let gen = generate_spectra(&ck.params, a.n, &sched, &RngStream::new(a.seed).split("sample"), &a.at)?;
    let mut s = Staged::default();
    let samples = gen.samples;
    s.add("samples.csv", move |p| save_spectra_csv(&samples, p));
    for (t, batch) in gen.checkpoints {
        s.add(&format!("x_t{t}.csv"), move |p| save_spectra_csv(&batch, p));
    }
    s.commit(&a.out)
}

fn cmd_fid_curve(a: &FidCurveArgs) -> Result<Vec<String>> {
    let ck = open_checkpoint(&a.checkpoint)?;
    let real = load_spectra_csv(&a.real).with_context(|| format!("reading {}", a.real.display()))?;
    let sched = ck.schedule.build()?;
    let t_max = sched.len();
    let at = if a.at.is_empty() {
        let mut v: Vec<usize> = (0..=10).map(|i| (i * t_max / 10).max(1)).collect();
        v.dedup();
        v
    } else {
        a.at.clone()
    };
    let curve = fid_curve(&ck.params, &sched, &real, &at, a.n, &RngStream::new(a.seed).split("fid_curve"))?;
    for (t, f) in &curve {
        println!("t={t} fid={f:.6}");
    }
    let mut s = Staged::default();
    s.add("fid_curve.csv", move |p| write_fid_csv(&curve, p));
    s.commit(&a.out)
}

fn load_degradation(d: &DegradationArgs) -> Result<DegradationModel> {
    let psf = load_matrix_csv(&d.psf).with_context(|| format!("reading {}", d.psf.display()))?;
    let srf = load_matrix_csv(&d.srf).with_context(|| format!("reading {}", d.srf.display()))?;
    Ok(DegradationModel::new(psf, d.factor, srf, f64::INFINITY, f64::INFINITY)?)
}

fn cmd_fuse(a: &FuseArgs) -> Result<Vec<String>> {
    let ck = match &a.checkpoint {
        Some(p) => Some(open_checkpoint(p)?),
        None if a.gamma > 0.0 => bail!("--gamma {} needs --checkpoint; use --gamma 0 for the baseline", a.gamma),
        None => None,
    };
    let deg = load_degradation(&a.degradation)?;
    let obs = sdprior::hsi::Observations {
        lr_hsi: load_cube(&a.lr_hsi).with_context(|| format!("reading {}", a.lr_hsi.display()))?,
        hr_msi: load_cube(&a.hr_msi).with_context(|| format!("reading {}", a.hr_msi.display()))?,
    };
    let profile = match a.profile {
        ProfileArg::Paviau => FusionProfile::Paviau,
        ProfileArg::Ksc => FusionProfile::Ksc,
        ProfileArg::Dc => FusionProfile::Dc,
        ProfileArg::Toy => FusionProfile::Toy,
    };
    let t_steps = match (&ck, a.t) {
        (Some(c), Some(t)) if t != c.schedule.t_steps && a.gamma > 0.0 => {
            bail!("--t {t} disagrees with the checkpoint's T = {}", c.schedule.t_steps)
        }
        (_, Some(t)) => t,
        (Some(c), None) => c.schedule.t_steps,
        (None, None) => 1000,
    };
    let cfg = FusionConfig {
        lambda: a.lambda,
        gamma: a.gamma,
        k_inner: a.k,
        mu: a.mu.unwrap_or(profile.mu()),
        t_steps,
        seed: a.seed,
        init: InitStrategy::Bilinear,
        reduction: match a.reduction {
            ReductionArg::Sum => PriorReduction::Sum,
            ReductionArg::Mean => PriorReduction::Mean,
        },
        reset_moments_each_t: a.reset_moments,
        adam: AdamConfig::default(),
    };
    let result = if a.gamma == 0.0 {
        baseline_fuse(&obs, &deg, &cfg)?
    } else {
        let ck = ck.expect("checked above");
        let sched = ck.schedule.build()?;
        sdp_fuse(&obs, &deg, Some(Prior { model: &ck.params, schedule: &sched }), &cfg)?
    };
    if let Some(last) = result.trace.last() {
        println!("final fidelity {:.6e} prior {:.6e}", last.fidelity_loss, last.prior_loss);
    }
    let mut s = Staged::default();
    let (estimate, trace) = (result.estimate, result.trace);
    s.add("fused.hsc", move |p| save_cube(&estimate, p));
    s.add("trace.csv", move |p| write_trace_csv(&trace, p));
    s.commit(&a.out)
}

fn cmd_eval(a: &EvalArgs) -> Result<Vec<String>> {
    let est = load_cube(&a.estimate).with_context(|| format!("reading {}", a.estimate.display()))?;
    let mut s = Staged::default();
    if let Some(r) = &a.reference {
        let reference = load_cube(r).with_context(|| format!("reading {}", r.display()))?;
        let rep = full_reference(&reference, &est, a.ratio)?;
        println!(
            "PSNR {:.4} dB  SAM {:.4} deg  RMSE {:.6}  ERGAS {:.4}  UIQI {:.4}",
            rep.psnr_db, rep.sam_deg, rep.rmse, rep.ergas, rep.uiqi
        );
        let mut bands = String::from("band,psnr_db\n");
        for (i, p) in rep.per_band_psnr.iter().enumerate() {
            bands.push_str(&format!("{i},{p}\n"));
        }
        let mut sam = rep.per_pixel_sam.clone();
        sam.sort_by(f64::total_cmp);
        let mut sam_csv = String::from("rank,sam_deg\n");
        for (i, v) in sam.iter().enumerate() {
            sam_csv.push_str(&format!("{i},{v}\n"));
        }
        let json = serde_json::to_string_pretty(&rep)?;
        s.add("metrics.json", move |p| Ok(fs::write(p, json)?));
        s.add("per_band_psnr.csv", move |p| Ok(fs::write(p, bands)?));
        s.add("sam_sorted.csv", move |p| Ok(fs::write(p, sam_csv)?));
    }
    if a.no_ref {
        let deg = load_degradation(&DegradationArgs {
            psf: a.psf.clone().expect("required by clap"),
            srf: a.srf.clone().expect("required by clap"),
            factor: a.factor.expect("required by clap"),
        })?;
        let lr = a.lr_hsi.as_ref().expect("required by clap");
        let msi = a.hr_msi.as_ref().expect("required by clap");
        let rep = no_reference(
            &est,
            &load_cube(lr).with_context(|| format!("reading {}", lr.display()))?,
            &load_cube(msi).with_context(|| format!("reading {}", msi.display()))?,
            &deg,
        )?;
        println!("D_lambda {:.6}  D_s {:.6}  QNR {:.6}", rep.d_lambda, rep.d_s, rep.qnr);
        let json = serde_json::to_string_pretty(&rep)?;
        s.add("noref.json", move |p| Ok(fs::write(p, json)?));
    }
    s.commit(&a.out)
}
