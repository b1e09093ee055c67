use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use cardioscope_core::classifier::{
    class_from_logits, forward, load_model, prepare_image, save_model, train_with, Model, Tensor,
};
use cardioscope_core::dsp::resample_linear;
use cardioscope_core::eval::MetricsReport;
use cardioscope_core::ingest::{load_labels, write_csv, write_record_csv, LabelSet};
use cardioscope_core::pipeline::{
    list_records, read_feature_wave, read_peaks, write_feature_wave, write_peaks, Pipeline,
};
use cardioscope_core::rpeak::{pt_chain, pt_highpass, pt_highpass_printed, pt_lowpass, PT_FS};
use cardioscope_core::scalogram::{to_grayscale, write_f32, write_pgm};
use cardioscope_core::{Class, EcgRecord, PipelineConfig};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "cardioscope", version, about = "ECG rhythm classification from scalogram images")]
struct Cli {
    /// Pipeline config (JSON). Missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ImageFormat {
    Pgm,
    F32,
}

#[derive(Subcommand)]
enum Command {
    /// Low-pass filter a record; writes csv plus a json sidecar.
    Preprocess {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Detect R peaks; writes one sample index per line.
    Detect {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Input is already low-pass filtered.
        #[arg(long)]
        filtered: bool,
        /// Also write the band-pass, derivative, squared and integrated
        /// signals (at 200 Hz) into this directory.
        #[arg(long)]
        taps: Option<PathBuf>,
    },
    /// Cut the four-cycle feature wave, or zeros if the record is gated.
    Featurize {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        filtered: bool,
        /// Use these peaks instead of running the detector.
        #[arg(long)]
        peaks: Option<PathBuf>,
    },
    /// Render the time-frequency diagram.
    Scalogram {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value = "pgm")]
        format: ImageFormat,
        /// Input is a feature wave written by `featurize`.
        #[arg(long, conflicts_with = "filtered")]
        wave: bool,
        #[arg(long)]
        filtered: bool,
    },
    /// Run the pipeline over a directory of records and train the classifier.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// `id,label` csv with labels N, A, O or ~.
        #[arg(long)]
        labels: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Score a model (or a predictions file) against reference labels.
    Eval {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, required_unless_present = "predictions", requires = "data")]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// `id,label` csv in the reference format instead of a model.
        #[arg(long, conflicts_with = "model")]
        predictions: Option<PathBuf>,
        /// Write the metrics report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Classify records; prints N, A, O or ~ (`id,label` lines for several).
    Predict {
        #[arg(required = true)]
        records: Vec<PathBuf>,
        #[arg(long)]
        model: PathBuf,
    },
    /// Print the effective config as JSON.
    Config {
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print filter coefficients as JSON.
    Filters {
        /// Sampling rate for the Butterworth design; defaults to the config's.
        #[arg(long)]
        fs: Option<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Preprocess { .. } => "preprocess",
            Command::Detect { .. } => "detect",
            Command::Featurize { .. } => "featurize",
            Command::Scalogram { .. } => "scalogram",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Predict { .. } => "predict",
            Command::Config { .. } => "config",
            Command::Filters { .. } => "filters",
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Write into a scratch directory beside `path`, then rename every file
/// produced (the target and any sidecars) into place.
fn atomic<T>(path: &Path, write: impl FnOnce(&Path) -> anyhow::Result<T>) -> anyhow::Result<T> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path.file_name().context("output path has no file name")?;
    let scratch = tempfile::Builder::new()
        .prefix(".cardioscope-")
        .tempdir_in(parent)
        .with_context(|| format!("cannot create scratch directory in {}", parent.display()))?;
    let value = write(&scratch.path().join(name))?;
    for entry in fs::read_dir(scratch.path())? {
        let entry = entry?;
        fs::rename(entry.path(), parent.join(entry.file_name()))?;
    }
    Ok(value)
}

fn load_filtered(pipeline: &Pipeline, input: &Path, filtered: bool) -> anyhow::Result<EcgRecord> {
    let record = pipeline.load(input)?;
    Ok(if filtered { record } else { pipeline.preprocess(&record)? })
}

fn labelled(data: &Path, labels: &LabelSet) -> anyhow::Result<(Vec<PathBuf>, Vec<Class>)> {
    let records = list_records(data)?;
    let mut paths = Vec::new();
    let mut classes = Vec::new();
    let mut unlabelled = 0;
    for (id, path) in records {
        match labels.get(&id) {
            Some(c) => {
                paths.push(path);
                classes.push(c);
            }
            None => unlabelled += 1,
        }
    }
    if unlabelled > 0 {
        eprintln!("skipping {unlabelled} records without a label");
    }
    let missing = labels.len() - paths.len();
    if missing > 0 {
        eprintln!("{missing} labelled ids have no record file");
    }
    if paths.is_empty() {
        bail!("no labelled records in {}", data.display());
    }
    Ok((paths, classes))
}

fn predict_paths(pipeline: &Pipeline, model: &Model, paths: &[PathBuf]) -> anyhow::Result<Vec<Class>> {
    let net = model.config();
    paths
        .par_iter()
        .map(|p| {
            let record = pipeline.load(p)?;
            let image = pipeline.image(&record)?;
            let input = prepare_image(image.pixels(), image.height(), image.width(), net)?;
            let batch = Tensor::from_images(&[&input], net.input_height, net.input_width)?;
            let logits = forward(model, &batch)?;
            Ok(class_from_logits(logits.data()))
        })
        .collect::<Result<Vec<_>, cardioscope_core::Error>>()
        .map_err(Into::into)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Config { output } => {
            let text = cfg.to_json()?;
            match output {
                Some(p) => atomic(p, |tmp| Ok(cfg.save(tmp)?))?,
                None => println!("{text}"),
            }
            return Ok(());
        }
        Command::Filters { fs } => {
            let fs = fs.unwrap_or(cfg.default_fs);
            let butter = Pipeline::new(cfg.clone())?.lowpass(fs)?;
            let dump = serde_json::json!({
                "butterworth": { "fs": fs, "cascade": butter },
                "pt_lowpass": pt_lowpass(),
                "pt_highpass": pt_highpass(),
                "pt_highpass_printed": pt_highpass_printed(),
            });
            println!("{}", serde_json::to_string_pretty(&dump)?);
            return Ok(());
        }
        _ => {}
    }

    let pipeline = Pipeline::new(cfg)?;
    match &cli.command {
        Command::Preprocess { input, output } => {
            let record = pipeline.load(input)?;
            let filtered = pipeline.preprocess(&record)?;
            atomic(output, |tmp| Ok(write_record_csv(tmp, &filtered)?))?;
        }
        Command::Detect {
            input,
            output,
            filtered,
            taps,
        } => {
            let record = load_filtered(&pipeline, input, *filtered)?;
            let peaks = pipeline.detect(&record)?;
            atomic(output, |tmp| Ok(write_peaks(tmp, record.id(), &peaks)?))?;
            if let Some(dir) = taps {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                let x = resample_linear(record.samples(), record.fs(), PT_FS);
                let chain = pt_chain(&x, PT_FS, pipeline.config().detector.window)?;
                for (name, values) in [
                    ("bandpassed", &chain.bandpassed),
                    ("derivative", &chain.derivative),
                    ("squared", &chain.squared),
                    ("integrated", &chain.integrated),
                ] {
                    let path = dir.join(format!("{}.{name}.csv", record.id()));
                    atomic(&path, |tmp| Ok(write_csv(tmp, values)?))?;
                }
            }
            eprintln!("{} peaks", peaks.len());
        }
        Command::Featurize {
            input,
            output,
            filtered,
            peaks,
        } => {
            let record = load_filtered(&pipeline, input, *filtered)?;
            let peaks = match peaks {
                Some(p) => read_peaks(p, record.fs()).context("featurize: reading peaks")?,
                None => pipeline.detect(&record)?,
            };
            let wave = pipeline.featurize(&record, &peaks)?;
            atomic(output, |tmp| Ok(write_feature_wave(tmp, &wave)?))?;
            if let Some(reason) = wave.gate_reason() {
                eprintln!("gated: {reason:?}");
            }
        }
        Command::Scalogram {
            input,
            output,
            format,
            wave,
            filtered,
        } => {
            let feature = if *wave {
                read_feature_wave(input).context("scalogram: reading feature wave")?
            } else {
                let record = load_filtered(&pipeline, input, *filtered)?;
                let peaks = pipeline.detect(&record)?;
                pipeline.featurize(&record, &peaks)?
            };
            let scalogram = pipeline.scalogram(&feature)?;
            match format {
                ImageFormat::Pgm => {
                    let image = to_grayscale(&scalogram);
                    atomic(output, |tmp| Ok(write_pgm(&image, tmp)?))?;
                }
                ImageFormat::F32 => atomic(output, |tmp| Ok(write_f32(&scalogram, tmp)?))?,
            }
        }
        Command::Train { data, labels, output } => {
            let labels = load_labels(labels)?;
            let (paths, classes) = labelled(data, &labels)?;
            eprintln!("building {} scalograms", paths.len());
            let images = pipeline.network_inputs(&paths)?;
            let targets: Vec<usize> = classes.iter().map(|c| c.index()).collect();
            let cfg = pipeline.config();
            let model = train_with(&images, &targets, &cfg.network, &cfg.train_config(), |r| {
                println!(
                    "epoch {:>3} loss {:.6} accuracy {:.4}",
                    r.epoch + 1,
                    r.mean_loss,
                    r.accuracy
                );
            })
            .context("train")?;
            atomic(output, |tmp| Ok(save_model(&model, tmp)?))?;
        }
        Command::Eval {
            labels,
            model,
            data,
            predictions,
            report,
        } => {
            let reference = load_labels(labels)?;
            let (preds, truth) = match (predictions, model, data) {
                (Some(p), _, _) => {
                    let predicted = load_labels(p)?;
                    let missing = predicted.missing(reference.iter().map(|(id, _)| id));
                    if !missing.is_empty() {
                        bail!("eval: {} labelled ids have no prediction, first '{}'", missing.len(), missing[0]);
                    }
                    reference
                        .iter()
                        .map(|(id, t)| (predicted.get(id).expect("checked above"), t))
                        .unzip()
                }
                (None, Some(m), Some(d)) => {
                    let model = load_model(m)?;
                    let (paths, truth) = labelled(d, &reference)?;
                    (predict_paths(&pipeline, &model, &paths)?, truth)
                }
                _ => bail!("eval needs --predictions, or --model with --data"),
            };
            let metrics = MetricsReport::score(&preds, &truth)?;
            println!("{metrics}");
            if let Some(path) = report {
                let json = metrics.to_json()?;
                atomic(path, |tmp| Ok(fs::write(tmp, &json)?))?;
            }
        }
        Command::Predict { records, model } => {
            let model = load_model(model)?;
            let classes = predict_paths(&pipeline, &model, records)?;
            if let [only] = classes.as_slice() {
                println!("{}", only.symbol());
            } else {
                for (path, class) in records.iter().zip(&classes) {
                    let id = path.file_stem().unwrap_or_default().to_string_lossy();
                    println!("{id},{}", class.symbol());
                }
            }
        }
        Command::Config { .. } | Command::Filters { .. } => unreachable!(),
    }
    Ok(())
}

fn error_line(command: &str, err: &anyhow::Error) -> String {
    let stage = err
        .chain()
        .find_map(|e| match e.downcast_ref::<cardioscope_core::Error>() {
            Some(cardioscope_core::Error::Stage { stage, .. }) => Some(*stage),
            _ => None,
        })
        .unwrap_or(command);
    serde_json::json!({
        "status": "error",
        "command": command,
        "stage": stage,
        "message": format!("{err:#}"),
    })
    .to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", error_line(cli.command.name(), &err));
            ExitCode::FAILURE
        }
    }
}
