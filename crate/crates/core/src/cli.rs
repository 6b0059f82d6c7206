//! `sstu` command-line interface.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::compositor::CameraRig;
use crate::dataset::{
    balanced_sampler, load_dataset, load_split, synth_blobs, ChromaConfig, Origin, Sample, SynthVariant,
};
use crate::error::{Error, Result};
use crate::imaging::{read_mask, read_prob};
use crate::metrics::{evaluate_set, EvalReport, ImageMetrics, DEFAULT_THRESHOLD};
use crate::model::{build, load_weights, predict, save_weights, ArchConfig, Decoders, WeightBundle};
use crate::pipeline::{
    forge_dataset, parse_timing_csv, segment_frames, simulate_stream, timing_summary, write_timing_csv, ForgeConfig,
    FrameRecord, SegmentConfig, StreamConfig, DEFAULT_CAPTURE_MS, DEFAULT_FPS,
};
use crate::toy;
use crate::train::{finetune, train_base, train_ego_decoder, FinetuneMode, TrainConfig, Trained};

#[derive(Debug, Parser)]
#[command(
    name = "sstu",
    version,
    about = "Egocentric body segmentation and video compositing for AV headsets"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment stereo frame pairs and composite them over a virtual layer.
    Segment(SegmentArgs),
    /// Simulate frame drops of a single inference worker.
    Simulate(SimulateArgs),
    /// Forge an ego-body dataset from green-screen shots and backgrounds.
    Forge(ForgeArgs),
    /// Train or fine-tune a weight bundle.
    Train(TrainArgs),
    /// Score predicted masks against ground truth.
    Eval(EvalArgs),
    /// Summarise per-frame stage timings.
    Timing(TimingArgs),
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Directory of `<n>_L.png` / `<n>_R.png` frames.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Virtual layer renders; a gradient scene at 2 m is used otherwise.
    #[arg(long = "virtual")]
    pub virtual_dir: Option<PathBuf>,
    /// Composite in eye-display space using this rig description.
    #[arg(long)]
    pub camera_config: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f32,
    #[arg(long, default_value_t = DEFAULT_CAPTURE_MS)]
    pub capture_ms: f64,
    #[arg(long, default_value_t = DEFAULT_FPS)]
    pub fps: f64,
    /// Run the two eyes one after the other.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = DEFAULT_FPS)]
    pub fps: f64,
    #[arg(long)]
    pub inference_ms: f64,
    #[arg(long, default_value_t = 0.0)]
    pub prep_ms: f64,
    #[arg(long, default_value_t = 0.0)]
    pub composite_ms: f64,
    #[arg(long, default_value_t = DEFAULT_CAPTURE_MS)]
    pub capture_ms: f64,
    /// Stream length in seconds.
    #[arg(long, default_value_t = 1.0)]
    pub duration: f64,
    /// Write the per-frame schedule as a timing CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ForgeArgs {
    /// Directory with `foreground/` and `background/` subdirectories.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 75.0)]
    pub hue_min: f32,
    #[arg(long, default_value_t = 165.0)]
    pub hue_max: f32,
    #[arg(long, default_value_t = 0.3)]
    pub min_saturation: f32,
    #[arg(long, default_value_t = 0.15)]
    pub min_value: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RegimeArg {
    Base,
    F1,
    F2,
    Ego,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run the synthetic blob experiment.
    #[arg(long)]
    pub toy: bool,
    #[arg(long, value_enum, default_value_t = RegimeArg::Base)]
    pub regime: RegimeArg,
    /// Starting weights (required for f1, f2 and ego).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Dataset root with `train/` and `val/`: exo data for `base`, ego data otherwise.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Exo dataset root balanced against the ego data for f1, f2 and ego.
    #[arg(long)]
    pub exo: Option<PathBuf>,
    /// Where to save the trained bundle.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 12)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Input size of a freshly built bundle.
    #[arg(long)]
    pub input_size: Option<usize>,
    /// Base channel count of a freshly built bundle.
    #[arg(long)]
    pub base_channels: Option<usize>,
    /// Disable data augmentation.
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Bundles to evaluate; without one, `--in` must hold `<id>_pred.png`
    /// next to `<id>_mask.png`.
    #[arg(long)]
    pub model: Vec<PathBuf>,
    /// Dataset roots (or split directories).
    #[arg(long = "in", required = true)]
    pub input: Vec<PathBuf>,
    /// Directory for the per-image CSV reports.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f32,
}

#[derive(Debug, Args)]
pub struct TimingArgs {
    /// Timing CSV written by `segment` or `simulate`.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub prep_ms: Option<f64>,
    #[arg(long)]
    pub inference_ms: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub composite_ms: f64,
    #[arg(long, default_value_t = DEFAULT_CAPTURE_MS)]
    pub capture_ms: f64,
    #[arg(long, default_value_t = 1)]
    pub frames: usize,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let text = match cli.command {
        Command::Segment(a) => cmd_segment(&a).map_err(|e| e.in_command("segment")),
        Command::Simulate(a) => cmd_simulate(&a).map_err(|e| e.in_command("simulate")),
        Command::Forge(a) => cmd_forge(&a).map_err(|e| e.in_command("forge")),
        Command::Train(a) => cmd_train(&a).map_err(|e| e.in_command("train")),
        Command::Eval(a) => cmd_eval(&a).map_err(|e| e.in_command("eval")),
        Command::Timing(a) => cmd_timing(&a).map_err(|e| e.in_command("timing")),
    }?;
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn cmd_segment(a: &SegmentArgs) -> Result<String> {
    let bundle = load_weights(&a.model)?;
    let rig = a.camera_config.as_deref().map(CameraRig::load).transpose()?;
    let cfg = SegmentConfig {
        virtual_dir: a.virtual_dir.clone(),
        rig,
        threshold: a.threshold,
        capture_ms: a.capture_ms,
        fps: a.fps,
        parallel_eyes: !a.sequential,
        ..SegmentConfig::new(&a.input, &a.out)
    };
    let s = segment_frames(&bundle, &cfg)?;
    let mut text = format!("segmented {} frame(s) with {}", s.frames.len(), bundle.tag());
    if !s.skipped.is_empty() {
        let _ = write!(text, ", skipped {}", s.skipped.join(" "));
    }
    text.push('\n');
    for (name, c) in s.frames.iter().zip(&s.stereo_consistency) {
        let _ = writeln!(text, "{name} stereo_consistency {c:.4}");
    }
    if !s.records.is_empty() {
        text.push_str(&timing_summary(&s.records)?.render());
    }
    Ok(text)
}

fn cmd_simulate(a: &SimulateArgs) -> Result<String> {
    let cfg = StreamConfig {
        fps: a.fps,
        prep_ms: a.prep_ms,
        inference_ms: a.inference_ms,
        composite_ms: a.composite_ms,
        duration_s: a.duration,
        capture_ms: a.capture_ms,
    };
    let s = simulate_stream(&cfg)?;
    if let Some(p) = &a.out {
        write_timing_csv(&s.frames, p)?;
    }
    Ok(format!(
        "frames {} processed {} dropped {} ratio {:.4}\n",
        s.frames.len(),
        s.processed,
        s.dropped,
        s.ratio()
    ))
}

fn cmd_forge(a: &ForgeArgs) -> Result<String> {
    let cfg = ForgeConfig {
        chroma: ChromaConfig {
            hue_min_deg: a.hue_min,
            hue_max_deg: a.hue_max,
            min_saturation: a.min_saturation,
            min_value: a.min_value,
        },
        val_fraction: a.val_fraction,
        seed: a.seed,
        ..ForgeConfig::new(&a.input, &a.out)
    };
    let s = forge_dataset(&cfg)?;
    let mut text = String::new();
    for (f, b) in &s.pairs {
        let _ = writeln!(text, "{f} <- background {b}");
    }
    let _ = writeln!(
        text,
        "forged {} train / {} val samples into {}",
        s.train,
        s.val,
        a.out.display()
    );
    Ok(text)
}

fn train_config(a: &TrainArgs, default_epochs: usize) -> TrainConfig {
    let base = TrainConfig::default();
    TrainConfig {
        epochs: a.epochs.unwrap_or(default_epochs),
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: a.seed,
        augment: if a.no_augment { None } else { base.augment.clone() },
        ..base
    }
}

fn fresh_arch(a: &TrainArgs, default: ArchConfig) -> ArchConfig {
    ArchConfig {
        input_size: a.input_size.unwrap_or(default.input_size),
        base_channels: a.base_channels.unwrap_or(default.base_channels),
        ..default
    }
}

fn require<'a>(v: &'a Option<PathBuf>, flag: &str, regime: RegimeArg) -> Result<&'a Path> {
    v.as_deref()
        .ok_or_else(|| Error::Invalid(format!("--{flag} is required for regime {regime:?}")))
}

fn balanced(ego: Vec<Sample>, exo_root: Option<&Path>, seed: u64) -> Result<Vec<Sample>> {
    match exo_root {
        None => Ok(ego),
        Some(root) => {
            let (exo, _) = load_dataset(root, Origin::Exo)?;
            balanced_sampler(&ego, &exo, &mut ChaCha8Rng::seed_from_u64(seed))
        }
    }
}

fn cmd_train(a: &TrainArgs) -> Result<String> {
    let trained = if a.toy {
        let data = synth_blobs(
            toy::TOY_TRAIN,
            toy::TOY_VAL,
            SynthVariant::Exo,
            &mut ChaCha8Rng::seed_from_u64(a.seed),
        )?;
        let bundle = build(&fresh_arch(a, toy::toy_arch()), a.seed)?;
        train_base(bundle, &data.train, &data.val, &train_config(a, toy::TOY_EPOCHS))?
    } else {
        run_regime(a)?
    };
    let mut text = String::new();
    for e in &trained.log {
        let _ = writeln!(text, "{}", e.line());
    }
    if let Some(last) = trained.log.last() {
        let _ = writeln!(text, "final val_miou {:.4}", last.val_miou);
    }
    if let Some(p) = &a.out {
        save_weights(&trained.bundle, p)?;
        let _ = writeln!(text, "saved {} to {}", trained.bundle.tag(), p.display());
    }
    Ok(text)
}

fn run_regime(a: &TrainArgs) -> Result<Trained> {
    let input = require(&a.input, "in", a.regime)?;
    let cfg = train_config(a, 1);
    match a.regime {
        RegimeArg::Base => {
            let bundle = match &a.model {
                Some(p) => load_weights(p)?,
                None => build(&fresh_arch(a, ArchConfig::default()), a.seed)?,
            };
            let (train, val) = load_dataset(input, Origin::Exo)?;
            train_base(bundle, &train, &val, &cfg)
        }
        RegimeArg::F1 | RegimeArg::F2 | RegimeArg::Ego => {
            let bundle = load_weights(require(&a.model, "model", a.regime)?)?;
            let (ego, val) = load_dataset(input, Origin::Ego)?;
            let train = balanced(ego, a.exo.as_deref(), a.seed)?;
            match a.regime {
                RegimeArg::F1 => finetune(bundle, &train, &val, FinetuneMode::F1, &cfg),
                RegimeArg::F2 => finetune(bundle, &train, &val, FinetuneMode::F2, &cfg),
                _ => {
                    let two = match bundle.arch().decoders {
                        Decoders::One => bundle.to_two_decoder()?,
                        Decoders::Two => bundle,
                    };
                    train_ego_decoder(two, &train, &val, &cfg)
                }
            }
        }
    }
}

fn dataset_name(p: &Path) -> String {
    p.file_name()
        .and_then(|n| n.to_str())
        .map_or_else(|| p.display().to_string(), str::to_string)
}

/// Validation split of a dataset root, or the directory itself.
fn eval_samples(p: &Path) -> Result<Vec<Sample>> {
    let val = p.join("val");
    let dir = if val.is_dir() { val } else { p.to_path_buf() };
    let samples = load_split(&dir, Origin::Exo)?;
    if samples.is_empty() {
        return Err(Error::Empty(format!("{}: no <id>_img.png samples", dir.display())));
    }
    Ok(samples)
}

fn eval_mask_dir(dir: &Path, threshold: f32) -> Result<EvalReport> {
    let mut ids: Vec<String> = crate::dataset::list_pngs(dir)?
        .iter()
        .filter_map(|p| p.file_name()?.to_str()?.strip_suffix("_pred.png").map(str::to_string))
        .collect();
    ids.sort();
    let gts = ids
        .iter()
        .map(|id| Ok((id.clone(), read_mask(&dir.join(format!("{id}_mask.png")))?)))
        .collect::<Result<Vec<_>>>()?;
    if gts.is_empty() {
        return Err(Error::Empty(format!("{}: no <id>_pred.png masks", dir.display())));
    }
    evaluate_set(
        &|id: &str| read_prob(&dir.join(format!("{id}_pred.png"))),
        &gts,
        threshold,
    )
}

fn eval_bundle(bundle: &WeightBundle, samples: &[Sample], threshold: f32) -> Result<EvalReport> {
    let size = bundle.arch().input_size;
    let images = samples
        .iter()
        .map(|s| {
            let s = s.resized(size);
            let pred = crate::metrics::binarize(&predict(bundle, &s.image)?, threshold);
            ImageMetrics::from_masks(s.id.clone(), &pred, &s.mask)
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_images(images)
}

fn summary_line(name: &str, r: &EvalReport) -> String {
    format!(
        "{name}: mIoU {:.4} PA {:.4} precision {:.4} recall {:.4} aggregate IoU {:.4}\n",
        r.miou,
        r.mpa,
        r.mean_precision,
        r.mean_recall,
        r.aggregate_iou()
    )
}

/// Rows are bundle tags, columns dataset names, cells `f(report)`.
fn render_table(
    title: &str,
    tags: &[String],
    datasets: &[String],
    cells: &[Vec<EvalReport>],
    f: fn(&EvalReport) -> f64,
) -> String {
    let w = datasets.iter().map(String::len).max().unwrap_or(0).max(8);
    let tw = tags.iter().map(String::len).max().unwrap_or(0).max(title.len());
    let mut out = format!("{title:<tw$}");
    for d in datasets {
        let _ = write!(out, "  {d:>w$}");
    }
    out.push('\n');
    for (tag, row) in tags.iter().zip(cells) {
        let _ = write!(out, "{tag:<tw$}");
        for r in row {
            let _ = write!(out, "  {:>w$.4}", f(r));
        }
        out.push('\n');
    }
    out
}

fn cmd_eval(a: &EvalArgs) -> Result<String> {
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = String::new();
    if a.model.is_empty() {
        for dir in &a.input {
            let r = eval_mask_dir(dir, a.threshold)?;
            let name = dataset_name(dir);
            if let Some(o) = &a.out {
                r.write_csv(&o.join(format!("{name}.csv")))?;
            }
            text.push_str(&summary_line(&name, &r));
        }
        return Ok(text);
    }
    let datasets: Vec<String> = a.input.iter().map(|p| dataset_name(p)).collect();
    let sets = a.input.iter().map(|p| eval_samples(p)).collect::<Result<Vec<_>>>()?;
    let mut tags = Vec::new();
    let mut cells = Vec::new();
    for m in &a.model {
        let bundle = load_weights(m)?;
        let mut row = Vec::new();
        for (name, samples) in datasets.iter().zip(&sets) {
            let r = eval_bundle(&bundle, samples, a.threshold)?;
            if let Some(o) = &a.out {
                r.write_csv(&o.join(format!("{}_{name}.csv", bundle.tag())))?;
            }
            text.push_str(&summary_line(&format!("{} on {name}", bundle.tag()), &r));
            row.push(r);
        }
        tags.push(bundle.tag().to_string());
        cells.push(row);
    }
    text.push('\n');
    text.push_str(&render_table("mIoU", &tags, &datasets, &cells, |r| r.miou));
    text.push('\n');
    text.push_str(&render_table("PA", &tags, &datasets, &cells, |r| r.mpa));
    text.push('\n');
    text.push_str(&render_table(
        "aggregate IoU",
        &tags,
        &datasets,
        &cells,
        EvalReport::aggregate_iou,
    ));
    Ok(text)
}

fn cmd_timing(a: &TimingArgs) -> Result<String> {
    let records = match (&a.input, a.prep_ms, a.inference_ms) {
        (Some(p), None, None) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_timing_csv(&text, &p.display().to_string())?
        }
        (None, Some(prep), Some(inf)) => {
            let us = crate::pipeline::ms_to_us;
            (0..a.frames)
                .map(|i| FrameRecord {
                    index: i,
                    arrival_us: 0,
                    processed: true,
                    prep_us: us(prep),
                    inference_us: us(inf),
                    composite_us: us(a.composite_ms),
                    capture_us: us(a.capture_ms),
                })
                .collect()
        }
        _ => {
            return Err(Error::Invalid(
                "give either --in <timing.csv> or both --prep-ms and --inference-ms".into(),
            ))
        }
    };
    for (name, v) in [("prep", a.prep_ms), ("inference", a.inference_ms)] {
        if v.is_some_and(|v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::Invalid(format!("{name} time must be non-negative")));
        }
    }
    Ok(timing_summary(&records)?.render())
}
