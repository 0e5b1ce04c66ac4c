//! Command-line interface. Exit status: 0 success, 2 usage or config error,
//! 3 data or IO error, 4 numeric failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use roomxfer_core::audio::SAMPLE_RATE;
use roomxfer_core::dataset::{child_seed, rng_from, Split};
use roomxfer_core::dsp::{griffin_lim, patch_log_spectrogram, LogSpectrogram, StftConfig};
use roomxfer_core::rir::{
    image_source_rir, noise_decay_rir, sabine_rt60, RoomSpec, SizeClass, DEFAULT_IR_LEN, MAX_ORDER_LIMIT,
};
use roomxfer_core::synth::{synth_dry, DryKind};

use crate::builder::{build_dataset, validate_options, BuildOptions, RirMeta};
use crate::config::{load_config, TrainConfig, CONFIG_DIR_ENV};
use crate::error::{Error, Result};
use crate::formats::{write_ckpt1, write_spec1};
use crate::fsutil::{write_bytes_atomic, write_json_atomic};
use crate::models::{checkpoint, load_evaluator, load_transfer};
use crate::report::{evaluate_models, EvaluateOptions};
use crate::train::{init_transfer, train_evaluator, train_transfer};
use crate::wav::{read_wav, write_wav};

#[derive(Debug, Parser)]
#[command(name = "roomxfer", version, about = "One-shot acoustic space transfer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a room impulse response to WAV plus a JSON sidecar.
    MakeRir(MakeRir),
    /// Synthesize a dry test signal at 16 kHz.
    SynthDry(SynthDry),
    /// Generate a dataset directory of transfer examples and pairs.
    BuildDataset(BuildDataset),
    /// Train the transfer model from a JSON config.
    TrainTransfer(TrainArgs),
    /// Train the same/different-space evaluator from a JSON config.
    TrainEval(TrainArgs),
    /// Write an untrained transfer checkpoint.
    InitTransfer(InitTransfer),
    /// Re-render audio into the space heard in a conditioning recording.
    Transfer(TransferArgs),
    /// Print the probability that two recordings come from different spaces.
    Score(ScoreArgs),
    /// Score a transfer model on held-out examples and emit a JSON report.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct MakeRir {
    /// Draw a random room of this size class (small, medium, large).
    #[arg(long, value_name = "CLASS", conflicts_with = "dims")]
    pub sample: Option<String>,
    /// Room dimensions in meters, `x,y,z`.
    #[arg(long, value_delimiter = ',', value_name = "X,Y,Z", requires_all = ["source", "receiver"])]
    pub dims: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', value_name = "X,Y,Z")]
    pub source: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', value_name = "X,Y,Z")]
    pub receiver: Option<Vec<f64>>,
    /// Absorption applied to all six surfaces (overrides sampled values).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Render exponentially decaying noise with this RT60 instead.
    #[arg(long, conflicts_with_all = ["sample", "dims", "alpha"])]
    pub rt60: Option<f64>,
    #[arg(long)]
    pub max_order: Option<u32>,
    /// Response length in samples.
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthDry {
    /// tone, noise, chirp or pluck.
    #[arg(long)]
    pub kind: String,
    /// Duration in seconds.
    #[arg(long, default_value_t = 3.0)]
    pub dur: f64,
    /// Tone fundamental in Hz.
    #[arg(long)]
    pub freq: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildDataset {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 24)]
    pub rooms: usize,
    #[arg(long, default_value_t = 2000)]
    pub examples: usize,
    #[arg(long, default_value_t = 4000)]
    pub pairs: usize,
    /// Number of synthetic dry clips.
    #[arg(long, default_value_t = 24)]
    pub dry_clips: usize,
    /// Length of each synthetic dry clip in seconds.
    #[arg(long, default_value_t = 10.0)]
    pub dry_secs: f64,
    /// Directory of extra 16 kHz dry WAVs.
    #[arg(long)]
    pub dry_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON config; looked up under $ROOMXFER_CONFIG_DIR when not found.
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct InitTransfer {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep the random output projection instead of zeroing it.
    #[arg(long)]
    pub random_residual: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub cond: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 60)]
    pub gl_iters: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write input, predicted and residual SPEC1 grids here.
    #[arg(long)]
    pub export_spec: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long = "eval")]
    pub evaluator: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "eval")]
    pub evaluator: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// train, validation or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub limit: Option<usize>,
    /// Conditioning-mismatch trials to run (0 to skip).
    #[arg(long, default_value_t = 0)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn point(v: &Option<Vec<f64>>, flag: &str) -> Result<[f64; 3]> {
    match v.as_deref() {
        Some([x, y, z]) => Ok([*x, *y, *z]),
        _ => Err(Error::Usage(format!("--{flag} needs three comma-separated values"))),
    }
}

fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}

fn make_rir(args: &MakeRir, stdout: &mut dyn Write) -> Result<()> {
    if let Some(rt60) = args.rt60 {
        let length = args.length.unwrap_or(DEFAULT_IR_LEN);
        let ir = noise_decay_rir(rt60, SAMPLE_RATE, length, &mut rng_from(args.seed))?;
        write_wav(&ir.clip, &args.out)?;
        let meta = serde_json::json!({ "kind": "noise-decay", "rt60": rt60, "seed": args.seed, "samples": length });
        write_json_atomic(&sidecar_path(&args.out), &meta).map_err(|e| Error::io(sidecar_path(&args.out), e))?;
        writeln!(stdout, "rt60 {rt60:.3} s (requested)").ok();
        return Ok(());
    }
    let (class, mut spec) = match (&args.sample, &args.dims) {
        (_, Some(_)) => {
            let spec = RoomSpec::uniform(
                point(&args.dims, "dims")?,
                args.alpha.unwrap_or(0.3),
                point(&args.source, "source")?,
                point(&args.receiver, "receiver")?,
            );
            (None, spec)
        }
        (sample, None) => {
            let name = sample.as_deref().unwrap_or("medium");
            let class = SizeClass::parse(name)
                .ok_or_else(|| Error::Usage(format!("unknown size class `{name}` (small, medium, large)")))?;
            let mut spec = roomxfer_core::rir::sample_room(&mut rng_from(args.seed), class);
            if let Some(a) = args.alpha {
                spec.absorption = [a; 6];
            }
            (Some(class), spec)
        }
    };
    if let Some(order) = args.max_order {
        if order > MAX_ORDER_LIMIT {
            return Err(Error::Usage(format!("--max-order {order} exceeds {MAX_ORDER_LIMIT}")));
        }
        spec.max_order = order;
    }
    if let Some(len) = args.length {
        spec.length = len;
    }
    let rt60 = sabine_rt60(&spec)?;
    let ir = image_source_rir(&spec)?;
    let meta = RirMeta {
        id: args
            .out
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        split: Split::Train,
        size_class: class.unwrap_or(SizeClass::Medium),
        rt60_sabine: rt60,
        samples: ir.clip.len(),
        truncated_images: ir.truncated,
        room: spec,
    };
    write_wav(&ir.clip, &args.out)?;
    write_json_atomic(&sidecar_path(&args.out), &meta).map_err(|e| Error::io(sidecar_path(&args.out), e))?;
    writeln!(stdout, "rt60 {rt60:.3} s (sabine)").ok();
    Ok(())
}

fn synth(args: &SynthDry, stdout: &mut dyn Write) -> Result<()> {
    let kind = DryKind::parse(&args.kind)
        .ok_or_else(|| Error::Usage(format!("unknown kind `{}` (tone, noise, chirp, pluck)", args.kind)))?;
    if !(args.dur.is_finite() && args.dur > 0.0) {
        return Err(Error::Usage(format!("--dur must be positive, got {}", args.dur)));
    }
    if let Some(f) = args.freq {
        if !(f > 0.0 && f < SAMPLE_RATE as f64 / 2.0) {
            return Err(Error::Usage(format!("--freq {f} is outside (0, {}) Hz", SAMPLE_RATE / 2)));
        }
    }
    let samples = (args.dur * SAMPLE_RATE as f64).round() as usize;
    let clip = synth_dry(kind, samples, args.freq, &mut rng_from(args.seed));
    write_wav(&clip, &args.out)?;
    writeln!(stdout, "{} samples at {} Hz", clip.len(), clip.sample_rate).ok();
    Ok(())
}

fn build(args: &BuildDataset, stdout: &mut dyn Write) -> Result<()> {
    let opts = BuildOptions {
        out: args.out.clone(),
        seed: args.seed,
        rooms: args.rooms,
        examples: args.examples,
        pairs: args.pairs,
        dry_clips: args.dry_clips,
        dry_secs: args.dry_secs,
        dry_dir: args.dry_dir.clone(),
    };
    validate_options(&opts)?;
    let summary = build_dataset(&opts)?;
    writeln!(
        stdout,
        "wrote {}: rooms {:?}, dry clips {:?}, examples {:?}, pairs {:?} (train/validation/test)",
        summary.out.display(),
        summary.rooms,
        summary.dry_clips,
        summary.examples,
        summary.pairs
    )
    .ok();
    Ok(())
}

fn train(args: &TrainArgs, evaluator: bool, stdout: &mut dyn Write) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let mut progress = |line: &str| {
        writeln!(stdout, "{line}").ok();
    };
    let summary = if evaluator {
        train_evaluator(&cfg, &mut progress)?
    } else {
        train_transfer(&cfg, &mut progress)?
    };
    let mut line = format!(
        "done: {} epochs, first train loss {:.6}, final {:.6}",
        summary.epochs, summary.first_train_loss, summary.final_train_loss
    );
    if let Some(a) = summary.test_accuracy {
        line += &format!(", test accuracy {a:.4}");
    }
    writeln!(stdout, "{line}").ok();
    Ok(())
}

fn init(args: &InitTransfer, stdout: &mut dyn Write) -> Result<()> {
    let mut cfg = TrainConfig::new("", "");
    cfg.seed = args.seed;
    cfg.dropout = 0.0;
    cfg.zero_init = !args.random_residual;
    let model = init_transfer(&cfg)?;
    write_ckpt1(&checkpoint(&model.params, None), &args.out)?;
    writeln!(stdout, "wrote {} ({} parameters)", args.out.display(), model.params.numel()).ok();
    Ok(())
}

fn transfer(args: &TransferArgs, stdout: &mut dyn Write) -> Result<()> {
    if args.gl_iters == 0 {
        return Err(Error::Usage("--gl-iters must be at least 1".into()));
    }
    let model = load_transfer(&args.model)?;
    let x = read_wav(&args.input)?;
    let cond = read_wav(&args.cond)?;
    let cfg = StftConfig::default();
    let parts = model.transfer_chunks(&x, &cond, &cfg)?;
    let collect = |f: fn(&roomxfer_core::transfer::TransferOutput) -> &LogSpectrogram| {
        LogSpectrogram::concat_frames(&parts.iter().map(|p| f(p).clone()).collect::<Vec<_>>())
    };
    let predicted = collect(|p| &p.predicted)?;
    let gl = griffin_lim(&predicted, args.gl_iters)?;
    let out = gl.clip.fit_to(x.len());
    out.check_finite()
        .map_err(|e| Error::Numeric(format!("reconstructed audio: {e}")))?;
    if let Some(dir) = &args.export_spec {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_spec1(&collect(|p| &p.input)?, &dir.join("input.spec1"))?;
        write_spec1(&predicted, &dir.join("predicted.spec1"))?;
        write_spec1(&collect(|p| &p.residual)?, &dir.join("residual.spec1"))?;
    }
    write_wav(&out, &args.out)?;
    let err = gl.errors.last().copied().unwrap_or(f64::NAN);
    writeln!(
        stdout,
        "wrote {} ({} samples, {} chunks, spectral convergence {err:.4})",
        args.out.display(),
        out.len(),
        parts.len()
    )
    .ok();
    Ok(())
}

fn score(args: &ScoreArgs, stdout: &mut dyn Write) -> Result<()> {
    let model = load_evaluator(&args.evaluator)?;
    let cfg = StftConfig::default();
    let spec = |p: &Path| -> Result<LogSpectrogram> {
        let clip = read_wav(p)?;
        clip.check_rate(cfg.sample_rate)?;
        let need = cfg.span_of(roomxfer_core::dsp::PATCH_FRAMES);
        if clip.len() < need {
            return Err(Error::Data(format!(
                "{}: {} samples, needs at least {need}",
                p.display(),
                clip.len()
            )));
        }
        Ok(patch_log_spectrogram(&clip, &cfg)?)
    };
    let (a, b) = (spec(&args.a)?, spec(&args.b)?);
    let ab = model.score_pair(&a, &b)?;
    let ba = model.score_pair(&b, &a)?;
    writeln!(stdout, "P(different) a,b {ab:.6}").ok();
    writeln!(stdout, "P(different) b,a {ba:.6}").ok();
    Ok(())
}

fn parse_split(s: &str) -> Result<Split> {
    Split::ALL
        .into_iter()
        .find(|x| x.name() == s)
        .ok_or_else(|| Error::Usage(format!("unknown split `{s}` (train, validation, test)")))
}

fn evaluate(args: &EvaluateArgs, stdout: &mut dyn Write) -> Result<()> {
    let opts = EvaluateOptions {
        split: parse_split(&args.split)?,
        limit: args.limit,
        trials: args.trials,
        seed: child_seed(args.seed, 0, 0),
    };
    if args.limit == Some(0) {
        return Err(Error::Usage("--limit must be at least 1".into()));
    }
    let report = evaluate_models(&args.model, &args.evaluator, &args.dataset, &opts)?;
    let mut bytes = serde_json::to_vec_pretty(&report).map_err(|e| Error::Data(e.to_string()))?;
    bytes.push(b'\n');
    match &args.out {
        Some(path) => {
            write_bytes_atomic(path, &bytes).map_err(|e| Error::io(path, e))?;
            writeln!(
                stdout,
                "mean before {:.6}, after {:.6} over {} examples",
                report.mean_before, report.mean_after, report.count
            )
            .ok();
        }
        None => {
            stdout.write_all(&bytes).map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    Ok(())
}

pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::MakeRir(a) => make_rir(a, stdout),
        Command::SynthDry(a) => synth(a, stdout),
        Command::BuildDataset(a) => build(a, stdout),
        Command::TrainTransfer(a) => train(a, false, stdout),
        Command::TrainEval(a) => train(a, true, stdout),
        Command::InitTransfer(a) => init(a, stdout),
        Command::Transfer(a) => transfer(a, stdout),
        Command::Score(a) => score(a, stdout),
        Command::Evaluate(a) => evaluate(a, stdout),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit status.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            if code == 0 {
                write!(stdout, "{rendered}").ok();
            } else {
                write!(stderr, "{rendered}").ok();
            }
            return code;
        }
    };
    match run(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            writeln!(stderr, "error: {e}").ok();
            if matches!(e, Error::Config(_)) {
                writeln!(stderr, "(config files are also looked up under ${CONFIG_DIR_ENV})").ok();
            }
            e.exit_code()
        }
    }
}
