use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use samnet_core::data::{make_dataset, read_manifest, read_pfm, read_ppm, read_sample, write_dataset, write_pfm, write_ppm};
use samnet_core::harness::{
    evaluate_manifest, evaluate_predictions, format_log, load_model, stage1_checkpoint, stage2_checkpoint,
    train_stage1, train_stage2, Checkpoint, EvalReport, TrainConfig, TrainedModel, Variant,
};
use samnet_core::metrics::{format_report, format_report_csv};
use samnet_core::{SceneSample, Tensor};

type CliResult<T> = Result<T, Box<dyn Error>>;

#[derive(Parser)]
#[command(name = "samnet", version, about = "Synthetic depth estimation with structure-attentioned memory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// `key = value` file applied over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed (the data seed for gen-data).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the train and validation splits as PPM/PFM files plus manifests.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the depth auto-encoder.
    TrainStage1 {
        #[command(flatten)]
        common: Common,
        /// Directory holding `train.csv`; generated in memory when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train the image network against a stage-1 checkpoint.
    TrainStage2 {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        stage1: PathBuf,
    },
    /// Score a checkpoint, or a set of predicted maps, on the validation split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory holding `val.csv`, or a manifest path.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, required_unless_present = "predictions")]
        checkpoint: Option<PathBuf>,
        /// Manifest whose depth files are predictions, matched to `--data` by line.
        #[arg(long, conflicts_with = "checkpoint")]
        predictions: Option<PathBuf>,
    },
    /// Predict depth for one PPM image.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse()
}

fn load_config(common: &Common) -> CliResult<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        config.apply_text(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(variant) = common.variant {
        config.variant = variant;
    }
    config.validate()?;
    Ok(config)
}

fn manifest_in(data: &Path, split: &str) -> PathBuf {
    if data.is_dir() {
        data.join(format!("{split}.csv"))
    } else {
        data.to_path_buf()
    }
}

fn load_split(config: &TrainConfig, data: Option<&Path>, split: &str) -> CliResult<Vec<SceneSample>> {
    match data {
        Some(dir) => {
            let entries = read_manifest(&manifest_in(dir, split))?;
            Ok(entries.iter().map(read_sample).collect::<Result<_, _>>()?)
        }
        None => {
            let (train, val) = make_dataset(config.n_train, config.n_val, config.data_seed);
            let specs = if split == "train" { train } else { val };
            let (h, w) = (config.model.height, config.model.width);
            Ok(specs.iter().map(|s| s.generate(h, w)).collect::<Result<_, _>>()?)
        }
    }
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn gen_data(common: &Common) -> CliResult<()> {
    let mut config = load_config(common)?;
    if let Some(seed) = common.seed {
        config.data_seed = seed;
    }
    let (train, val) = make_dataset(config.n_train, config.n_val, config.data_seed);
    let (h, w) = (config.model.height, config.model.width);
    let train_manifest = write_dataset(&common.out, "train", &train, h, w)?;
    let val_manifest = write_dataset(&common.out, "val", &val, h, w)?;
    println!("{} training samples -> {}", train.len(), train_manifest.display());
    println!("{} validation samples -> {}", val.len(), val_manifest.display());
    Ok(())
}

fn stage1(common: &Common, data: Option<&Path>) -> CliResult<()> {
    let config = load_config(common)?;
    let train = load_split(&config, data, "train")?;
    fs::create_dir_all(&common.out)?;
    let started = Instant::now();
    let outcome = train_stage1(&config, &train)?;
    let path = common.out.join("stage1.ckpt");
    stage1_checkpoint(&config, &outcome).save(&path)?;
    write(&common.out.join("stage1_log.csv"), &format_log(&outcome.log))?;
    let last = outcome.log.last().map_or(f64::NAN, |r| r.total);
    println!(
        "stage 1: {} steps in {:.1?}, final L_AE {last:.4} -> {}",
        outcome.log.len(),
        started.elapsed(),
        path.display()
    );
    Ok(())
}

fn stage2(common: &Common, data: Option<&Path>, stage1: &Path) -> CliResult<()> {
    let config = load_config(common)?;
    let train = load_split(&config, data, "train")?;
    let ck = Checkpoint::load(stage1)?;
    fs::create_dir_all(&common.out)?;
    let started = Instant::now();
    let outcome = train_stage2(&config, &train, &ck)?;
    let path = common.out.join("stage2.ckpt");
    stage2_checkpoint(&config, &outcome).save(&path)?;
    write(&common.out.join("stage2_log.csv"), &format_log(&outcome.log))?;
    if !outcome.attention_trace.is_empty() {
        let slots = outcome.attention_trace[0].split(',').count() - 2;
        let mut trace = String::from("step,level");
        for k in 1..=slots {
            trace.push_str(&format!(",alpha{k}"));
        }
        trace.push('\n');
        for row in &outcome.attention_trace {
            trace.push_str(row);
            trace.push('\n');
        }
        write(&common.out.join("attention_trace.csv"), &trace)?;
    }
    let last = outcome.log.last().map_or(f64::NAN, |r| r.total);
    println!(
        "stage 2 ({}): {} steps in {:.1?}, final loss {last:.4} -> {}",
        config.variant,
        outcome.log.len(),
        started.elapsed(),
        path.display()
    );
    Ok(())
}

fn eval(common: &Common, data: &Path, checkpoint: Option<&Path>, predictions: Option<&Path>) -> CliResult<()> {
    let truth = read_manifest(&manifest_in(data, "val"))?;
    let (label, report) = match (checkpoint, predictions) {
        (Some(ck), _) => {
            let (config, model) = load_model(&Checkpoint::load(ck)?)?;
            let label = match model {
                TrainedModel::AutoEncoder(_) => "autoencoder".to_string(),
                TrainedModel::Net(_) => config.variant.to_string(),
            };
            (label, evaluate_manifest(&model, &truth))
        }
        (None, Some(pred)) => {
            let preds = read_manifest(pred)?;
            if preds.len() != truth.len() {
                return Err(format!("{} predictions for {} ground-truth maps", preds.len(), truth.len()).into());
            }
            let pairs = truth
                .iter()
                .zip(&preds)
                .map(|(t, p)| Ok((format!("{}:{}", t.family, t.seed), read_pfm(&p.depth_path)?, read_pfm(&t.depth_path)?)))
                .collect::<CliResult<Vec<_>>>()?;
            ("predictions".to_string(), evaluate_predictions(&pairs)?)
        }
        (None, None) => unreachable!("clap requires one of them"),
    };
    report_eval(common, &label, &report)
}

fn report_eval(common: &Common, label: &str, report: &EvalReport) -> CliResult<()> {
    for (name, reason) in &report.failures {
        eprintln!("skipped {name}: {reason}");
    }
    if report.per_sample.is_empty() {
        return Err("no sample could be evaluated".into());
    }
    fs::create_dir_all(&common.out)?;
    let table = format_report(&[report.mean], &[label]);
    write(&common.out.join("report.txt"), &table)?;
    write(&common.out.join("report.csv"), &format_report_csv(&[report.mean], &[label]))?;
    write(&common.out.join("per_sample.csv"), &report.per_sample_csv())?;
    print!("{table}");
    Ok(())
}

/// Min-max normalised, near is bright.
fn visualize(depth: &Tensor) -> Tensor {
    let v = depth.values();
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let gray: Vec<f64> = v.iter().map(|d| (hi - d) / span).collect();
    let [_, _, h, w] = depth.shape().dims();
    let rgb = [gray.clone(), gray.clone(), gray].concat();
    Tensor::from_vec(samnet_core::Shape::new(1, 3, h, w).expect("non-empty map"), rgb).expect("three planes")
}

fn predict(common: &Common, checkpoint: &Path, input: &Path) -> CliResult<()> {
    let (_, model) = load_model(&Checkpoint::load(checkpoint)?)?;
    if matches!(model, TrainedModel::AutoEncoder(_)) {
        return Err("predict needs a stage-2 checkpoint; the auto-encoder takes depth, not images".into());
    }
    let rgb = read_ppm(input)?;
    let c = model.config();
    let [_, _, h, w] = rgb.shape().dims();
    if (h, w) != (c.height, c.width) {
        return Err(format!("{}: image is {w}x{h}, the model expects {}x{}", input.display(), c.width, c.height).into());
    }
    let depth = model.predict(&rgb, None)?;
    fs::create_dir_all(&common.out)?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("prediction");
    let pfm = common.out.join(format!("{stem}_depth.pfm"));
    let ppm = common.out.join(format!("{stem}_depth.ppm"));
    write_pfm(&pfm, &depth)?;
    write_ppm(&ppm, &visualize(&depth))?;
    println!("{} {}", pfm.display(), ppm.display());
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::GenData { common } => gen_data(common),
        Command::TrainStage1 { common, data } => stage1(common, data.as_deref()),
        Command::TrainStage2 { common, data, stage1 } => stage2(common, data.as_deref(), stage1),
        Command::Eval {
            common,
            data,
            checkpoint,
            predictions,
        } => eval(common, data, checkpoint.as_deref(), predictions.as_deref()),
        Command::Predict {
            common,
            checkpoint,
            input,
        } => predict(common, checkpoint, input),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
