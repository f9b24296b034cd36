//! `affectkit` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use affectkit::affect_types::{Split, Task};
use affectkit::gradcheck::{run_check, run_suite, CheckResult, CHECKS, DEFAULT_EPS};
use affectkit::harness::config::{parse_heads, RelatednessChoice, RunConfig};
use affectkit::harness::dataset::Dataset;
use affectkit::harness::ops::{
    apply_va_postprocess, fuse_manifest, select_va_postprocess, utterance_predictions, va_csv, zero_shot,
    zero_shot_accuracy, zero_shot_csv,
};
use affectkit::harness::{
    evaluate, generate_dataset, load_model, parse_predictions, predict_samples, prediction_records, predictions_csv,
    run_training, SyntheticSpec,
};
use affectkit::preprocess::{fit_alignment, load_audio, parse_landmarks, spectrogram, LandmarkSet, SpectrogramConfig};
use affectkit::zeroshot::{default_compound_defs, parse_defs};
use anyhow::{Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "affectkit", version, about = "Multi-task facial affect toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted emotion/AU structure.
    GenData(GenData),
    /// Train a model from a run configuration.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Fuse member prediction files weighted by validation CCC.
    Fuse(FuseArgs),
    /// Classify compound expressions from basic-task predictions.
    ZeroShot(ZeroShotArgs),
    /// Fit 5-point affine alignments to the canonical template.
    Align(AlignArgs),
    /// Compute a normalised magnitude spectrogram.
    Spectrogram(SpectrogramArgs),
    /// Compare analytic gradients with central finite differences.
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
struct GenData {
    /// Synthetic spec file (`key = value`); defaults when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "data")]
    out: PathBuf,
    /// cognitive, empirical or file:PATH.
    #[arg(long, default_value = "cognitive")]
    relatedness: String,
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint path; the model description goes to `<out>.cfg`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Start from this checkpoint; its trunk is reused.
    #[arg(long)]
    init_from: Option<PathBuf>,
    /// Heads of the new model, e.g. `compound:11`.
    #[arg(long)]
    heads: Option<String>,
    /// With --init-from, train only the heads.
    #[arg(long)]
    freeze_trunk: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Comma-separated tasks (va, expr, au, compound); all available when omitted.
    #[arg(long)]
    tasks: Option<String>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Metric report path; printed to stdout otherwise.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also write per-frame predictions here.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args)]
struct FuseArgs {
    /// Manifest lines `member_id, ccc_v, ccc_a, path`.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "fused.csv")]
    out: PathBuf,
    /// Manifest of validation predictions used to choose post-processing.
    #[arg(long, requires = "gate_data")]
    gate_manifest: Option<PathBuf>,
    /// Dataset holding the validation VA labels.
    #[arg(long, requires = "gate_manifest")]
    gate_data: Option<PathBuf>,
    /// Dataset whose sequences order the fused frames for post-processing
    /// and utterance aggregation.
    #[arg(long)]
    layout: Option<PathBuf>,
    /// Write utterance-level predictions here (needs --layout).
    #[arg(long, requires = "layout")]
    utterances: Option<PathBuf>,
}

#[derive(Args)]
struct ZeroShotArgs {
    #[arg(long)]
    predictions: PathBuf,
    /// Compound definitions `name, emo1, emo2, bonus[, au:w ...]`.
    #[arg(long)]
    defs: Option<PathBuf>,
    #[arg(long, default_value = "cognitive")]
    relatedness: String,
    #[arg(long, default_value = "compound.csv")]
    out: PathBuf,
    /// Dataset with COMPOUND labels; prints accuracy.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct AlignArgs {
    /// CSV `frame,x1,y1,…,x5,y5`.
    #[arg(long)]
    landmarks: PathBuf,
    #[arg(long, default_value = "aligned.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct SpectrogramArgs {
    /// Raw audio file (`AFAUDIO rate=N length=N` header, f64 samples).
    #[arg(long)]
    audio: PathBuf,
    #[arg(long, default_value_t = 33.0)]
    window_ms: f64,
    #[arg(long, default_value_t = 11.0)]
    overlap_ms: f64,
    /// Treat --overlap-ms as the hop length.
    #[arg(long)]
    overlap_is_hop: bool,
    #[arg(long, default_value = "spectrogram.csv")]
    out: PathBuf,
}

#[derive(Args)]
#[command(group(ArgGroup::new("which").required(true).args(["all", "check"])))]
struct GradCheckArgs {
    /// Run every check.
    #[arg(long)]
    all: bool,
    /// Run one named check.
    #[arg(long)]
    check: Option<String>,
    #[arg(long, default_value_t = 50)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn relatedness(s: &str) -> Result<RelatednessChoice> {
    RelatednessChoice::parse(s).with_context(|| format!("unknown relatedness {s:?}"))
}

fn gen_data(a: GenData) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => SyntheticSpec::load(p)?,
        None => SyntheticSpec::default(),
    };
    let table = relatedness(&a.relatedness)?.load()?;
    let ds = generate_dataset(&spec, &table, a.seed)?;
    ds.write_dir(&a.out)?;
    println!("wrote {} samples to {}", ds.samples.len(), a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let (mut cfg, dir) = match &a.config {
        Some(p) => (RunConfig::load(p)?, p.parent().map(Path::to_path_buf)),
        None => (RunConfig::default(), None),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.data = a.data.or(cfg.data);
    cfg.out = a.out.or(cfg.out);
    cfg.log = a.log.or(cfg.log);
    cfg.init_from = a.init_from.or(cfg.init_from);
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(h) = &a.heads {
        cfg.heads = parse_heads(h).with_context(|| format!("bad heads {h:?}"))?;
    }
    cfg.freeze_trunk |= a.freeze_trunk;
    let outcome = run_training(&cfg, dir.as_deref())?;
    for e in &outcome.epochs {
        println!("epoch {} loss {:.6}", e.epoch, e.loss);
    }
    if let Some(out) = &cfg.out {
        println!("checkpoint {}", out.display());
    }
    Ok(())
}

fn parse_tasks(s: &str) -> Result<Vec<Task>> {
    s.split(',')
        .map(|t| Task::parse(t).with_context(|| format!("unknown task {t:?}")))
        .collect()
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let data = Dataset::read_dir(&a.data)?;
    let split = Split::parse(&a.split).with_context(|| format!("unknown split {:?}", a.split))?;
    let samples = data.split(split);
    let tasks = a.tasks.as_deref().map(parse_tasks).transpose()?.unwrap_or_default();
    let report = evaluate(&model, &samples, &tasks, a.threshold)?;
    match &a.report {
        Some(p) => write(p, &report.render())?,
        None => print!("{}", report.render()),
    }
    if let Some(p) = &a.predictions {
        let outputs = predict_samples(&model, &samples)?;
        write(p, &predictions_csv(&prediction_records(&samples, &outputs))?)?;
    }
    Ok(())
}

fn fuse_cmd(a: FuseArgs) -> Result<()> {
    let mut fused = fuse_manifest(&a.manifest)?;
    if let (Some(gm), Some(gd)) = (&a.gate_manifest, &a.gate_data) {
        let layout = a
            .layout
            .as_ref()
            .context("--gate-manifest needs --layout for the fused frames")?;
        let val = fuse_manifest(gm)?;
        let [(pv, sv), (pa, sa)] = select_va_postprocess(&val, &Dataset::read_dir(gd)?)?;
        println!("valence post-processing {pv:?} (validation CCC {sv:.6})");
        println!("arousal post-processing {pa:?} (validation CCC {sa:.6})");
        fused = apply_va_postprocess(&fused, &Dataset::read_dir(layout)?, [pv, pa])?;
    }
    write(&a.out, &va_csv(&fused)?)?;
    if let (Some(u), Some(layout)) = (&a.utterances, &a.layout) {
        let utt = utterance_predictions(&fused, &Dataset::read_dir(layout)?)?;
        let mut text = String::from("utterance_id,valence,arousal\n");
        for (k, v) in utt {
            text.push_str(&format!("{k},{},{}\n", v[0], v[1]));
        }
        write(u, &text)?;
    }
    println!("fused {} frames into {}", fused.len(), a.out.display());
    Ok(())
}

fn zero_shot_cmd(a: ZeroShotArgs) -> Result<()> {
    let table = relatedness(&a.relatedness)?.load()?;
    let defs = match &a.defs {
        Some(p) => parse_defs(
            &std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            &table,
        )?,
        None => default_compound_defs(&table),
    };
    let text =
        std::fs::read_to_string(&a.predictions).with_context(|| format!("reading {}", a.predictions.display()))?;
    let records = parse_predictions(&text)?;
    let classes = zero_shot(&defs, &records)?;
    write(&a.out, &zero_shot_csv(&defs, &records, &classes))?;
    if let Some(t) = &a.truth {
        match zero_shot_accuracy(&records, &classes, &Dataset::read_dir(t)?) {
            Some(acc) => println!("compound.accuracy = {acc:.6}"),
            None => println!("no compound labels matched the predictions"),
        }
    }
    Ok(())
}

fn align_cmd(a: AlignArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.landmarks).with_context(|| format!("reading {}", a.landmarks.display()))?;
    let template = LandmarkSet::template();
    let mut out = String::from("frame,a11,a12,a13,a21,a22,a23,residual\n");
    for (frame, lm) in parse_landmarks(&text)? {
        let fit = fit_alignment(&lm, &template)?;
        let m = fit.affine.m;
        out.push_str(&format!(
            "{frame},{},{},{},{},{},{},{}\n",
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], fit.residual
        ));
    }
    write(&a.out, &out)
}

fn spectrogram_cmd(a: SpectrogramArgs) -> Result<()> {
    let (rate, samples) = load_audio(&a.audio)?;
    let cfg = SpectrogramConfig {
        sample_rate_hz: rate,
        window_ms: a.window_ms,
        overlap_ms: a.overlap_ms,
        overlap_is_hop: a.overlap_is_hop,
    };
    let spec = spectrogram(&samples, &cfg)?;
    let mut out = String::new();
    for i in 0..spec.frames {
        let row: Vec<String> = spec.frame(i).iter().map(f64::to_string).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write(&a.out, &out)?;
    println!(
        "{} frames x {} bins (window {}, hop {})",
        spec.frames,
        spec.bins,
        cfg.window_samples(),
        cfg.hop_samples()
    );
    Ok(())
}

fn grad_check_cmd(a: GradCheckArgs) -> Result<bool> {
    let results: Vec<CheckResult> = match &a.check {
        Some(name) => {
            let name = CHECKS
                .iter()
                .find(|c| **c == name.as_str())
                .with_context(|| format!("unknown check {name:?}; known: {}", CHECKS.join(", ")))?;
            vec![run_check(name, a.points, a.seed, DEFAULT_EPS).map_err(anyhow::Error::msg)?]
        }
        None => run_suite(a.points, a.seed).map_err(anyhow::Error::msg)?,
    };
    let mut ok = true;
    for r in &results {
        ok &= r.passed();
        println!(
            "{:<28} points {:>3}  max rel error {:.3e}  {}",
            r.name,
            r.points,
            r.max_rel_error,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    Ok(ok)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData(a) => gen_data(a)?,
        Command::Train(a) => train_cmd(a)?,
        Command::Eval(a) => eval_cmd(a)?,
        Command::Fuse(a) => fuse_cmd(a)?,
        Command::ZeroShot(a) => zero_shot_cmd(a)?,
        Command::Align(a) => align_cmd(a)?,
        Command::Spectrogram(a) => spectrogram_cmd(a)?,
        Command::GradCheck(a) => return grad_check_cmd(a),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
