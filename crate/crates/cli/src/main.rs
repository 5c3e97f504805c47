use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use attrgan::annotations::{aggregate, read_records, statistics_report, write_records, ReportConfig, DEFAULT_ANNOTATORS};
use attrgan::attributes::{AttributeNet, AttributeSchedule};
use attrgan::autodiff::Tensor;
use attrgan::gan::{mode_coverage, train, Evaluator, RunStatus, TrainingConfig};
use attrgan::harness::{
    build_report, fit_attribute_net, generate_dataset, run_experiment, synthesize_annotations, Dataset, DatasetSpec,
    ExperimentConfig, ImagePool, SynthesisSpec,
};
use attrgan::metrics::{evaluate, label_histogram, ClassifierConfig, FeatureExtractor, MeanTerm};
use attrgan::Error;
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Attribute-augmented GAN laboratory.
#[derive(Parser, Debug)]
#[command(name = "attrgan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Seed for every random draw this command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a labeled toy dataset (config: dataset spec).
    GenData {
        #[command(flatten)]
        common: Common,
        /// Built-in dataset when no config is given: ring8, grid25 or images8.
        #[arg(long, default_value = "ring8")]
        dataset: String,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Simulate a rating campaign over real and generated images (config: synthesis spec).
    GenAnnotations {
        #[command(flatten)]
        common: Common,
        /// Dataset file whose samples are the real images.
        #[arg(long)]
        data: PathBuf,
        /// Sample matrix of generated images; drawn over the oracle's domain if absent.
        #[arg(long)]
        fake: Option<PathBuf>,
        /// Images taken from each group.
        #[arg(long, default_value_t = 200)]
        images: usize,
    },
    /// Quality control, aggregation, group tests and factor analyses (config: report config).
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        annotations: PathBuf,
    },
    /// Fit the attribute net to oracle or annotated scores (config: attribute schedule).
    TrainAttr {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Annotation CSV whose aggregated scores replace the oracle for matching image ids.
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Training inputs: half from the dataset, half over the oracle's domain.
        #[arg(long, default_value_t = 2000)]
        samples: usize,
    },
    /// Train one GAN (config: training config).
    TrainGan {
        #[command(flatten)]
        common: Common,
        /// Dataset file; a fresh ring-of-8 sample if absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Rows held out for the critic's test-set value.
        #[arg(long, default_value_t = 2000)]
        test_samples: usize,
        #[arg(long)]
        attribute_net: Option<PathBuf>,
        /// Classifier settings for end-of-run metrics.
        #[arg(long)]
        classifier: Option<PathBuf>,
    },
    /// IS, MS and FID of a sample matrix (config: classifier config).
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Use the unsquared mean distance in FID.
        #[arg(long)]
        unsquared_mean: bool,
    },
    /// Comparison report for an experiment directory; with --config, first
    /// runs or resumes the experiment there (config: experiment config).
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        experiment: PathBuf,
    },
}

enum Failure {
    User(String),
    Diverged(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFinite { .. } => Failure::Diverged(e.to_string()),
            Error::Shape { .. } | Error::NonConvergence { .. } => Failure::Internal(e.to_string()),
            _ => Failure::User(e.to_string()),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn config_or<T: DeserializeOwned>(common: &Common, default: impl FnOnce() -> T) -> Result<T, Error> {
    match &common.config {
        Some(p) => read_json(p),
        None => Ok(default()),
    }
}

fn out_path(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn rng(common: &Common) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(common.seed.unwrap_or(0))
}

fn builtin_dataset(name: &str) -> Result<DatasetSpec, Error> {
    match name {
        "ring8" => Ok(DatasetSpec::ring8()),
        "grid25" => Ok(DatasetSpec::grid25()),
        "images8" => Ok(DatasetSpec::images8()),
        other => Err(Error::Config {
            field: "dataset".into(),
            message: format!("unknown dataset `{other}`; expected ring8, grid25 or images8"),
        }),
    }
}

fn gen_data(common: &Common, dataset: &str, samples: usize) -> Outcome {
    let spec = match &common.config {
        Some(p) => read_json(p)?,
        None => builtin_dataset(dataset)?,
    };
    let data = generate_dataset(&spec, samples, &mut rng(common))?;
    let out = out_path(common, "data.json");
    data.save(&out)?;
    println!("wrote {} samples to {}", data.len(), out.display());
    Ok(())
}

fn gen_annotations(common: &Common, data: &Path, fake: Option<&Path>, images: usize) -> Outcome {
    let spec: SynthesisSpec = config_or(common, SynthesisSpec::default)?;
    let dataset = Dataset::load(data)?;
    let mut rng = rng(common);
    let m = images.min(dataset.len());
    if m == 0 {
        return Err(Failure::User("--images must be at least 1".into()));
    }
    let real = dataset.samples.slice_rows(0, m)?;
    let fake = match fake {
        Some(p) => {
            let t: Tensor = read_json(p)?;
            t.slice_rows(0, m.min(t.rows()))?
        }
        None => dataset.spec.sample_domain(m, &mut rng)?,
    };
    let mut rows = real.to_rows();
    rows.extend(fake.to_rows());
    // real images keep their dataset ids so train-attr can match them
    let ids: Vec<String> = dataset.image_ids()[..m]
        .iter()
        .cloned()
        .chain((0..fake.rows()).map(|i| format!("fake{i:05}")))
        .collect();
    let pool = ImagePool {
        is_real: (0..ids.len()).map(|i| i < real.rows()).collect(),
        ids,
        samples: Tensor::from_rows(&rows)?,
    };
    let syn = synthesize_annotations(&pool, &dataset.spec.oracle()?, &spec, &mut rng)?;
    let out = out_path(common, "annotations.csv");
    write_records(&out, &syn.records)?;
    println!(
        "wrote {} records for {} images to {} ({} tainted assignments)",
        syn.records.len(),
        pool.ids.len(),
        out.display(),
        syn.tainted.len()
    );
    Ok(())
}

fn stats(common: &Common, annotations: &Path) -> Outcome {
    let config: ReportConfig = config_or(common, ReportConfig::default)?;
    let records = read_records(annotations)?;
    let report = statistics_report(&records, &config)?;
    let out = out_path(common, "report.json");
    write_json(&out, &report)?;
    let md = out.with_extension("md");
    fs::write(&md, report.to_markdown()).map_err(|e| io_error(&md, e))?;
    println!("{}", report.to_markdown());
    Ok(())
}

fn train_attr(common: &Common, data: &Path, annotations: Option<&Path>, samples: usize) -> Outcome {
    let schedule: AttributeSchedule = config_or(common, AttributeSchedule::default)?;
    let dataset = Dataset::load(data)?;
    let mut rng = rng(common);
    let net = match annotations {
        None => {
            let config = ExperimentConfig {
                dataset: dataset.spec.clone(),
                attribute: schedule,
                attribute_samples: samples,
                ..ExperimentConfig::default()
            };
            fit_attribute_net(&config, &dataset, &mut rng)?
        }
        Some(path) => {
            // aggregated ratings of dataset images become the targets
            let records = read_records(path)?;
            let agg = aggregate(&records, DEFAULT_ANNOTATORS)?;
            let ids = dataset.image_ids();
            let mut x = Vec::new();
            let mut y = Vec::new();
            for s in &agg.images {
                if let Some(i) = ids.iter().position(|id| *id == s.image_id) {
                    x.push(dataset.samples.row(i).to_vec());
                    y.push(s.scores.0.to_vec());
                }
            }
            if x.len() < 4 {
                return Err(Failure::User(format!(
                    "only {} annotated images match dataset ids; need at least 4",
                    x.len()
                )));
            }
            let split = |keep: usize| -> Result<(Tensor, Tensor), Error> {
                let xs: Vec<Vec<f64>> = x.iter().skip(keep).step_by(2).cloned().collect();
                let ys: Vec<Vec<f64>> = y.iter().skip(keep).step_by(2).cloned().collect();
                Ok((Tensor::from_rows(&xs)?, Tensor::from_rows(&ys)?))
            };
            let (tx, ty) = split(0)?;
            let (vx, vy) = split(1)?;
            AttributeNet::train(&tx, &ty, &vx, &vy, &schedule, &mut rng)?
        }
    };
    let out = out_path(common, "attribute_net.json");
    net.save(&out)?;
    println!(
        "attribute net: {} epochs ({:?}), best validation MSE {:.5}; wrote {}",
        net.epochs_run,
        net.stop_reason,
        net.best_val_mse,
        out.display()
    );
    Ok(())
}

fn train_gan(
    common: &Common,
    data: Option<&Path>,
    test_samples: usize,
    attribute_net: Option<&Path>,
    classifier: Option<&Path>,
) -> Outcome {
    let mut config: TrainingConfig = config_or(common, TrainingConfig::default)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config.validate()?;
    let dataset = match data {
        Some(p) => Dataset::load(p)?,
        None => generate_dataset(&DatasetSpec::ring8(), 10_000, &mut ChaCha8Rng::seed_from_u64(config.seed))?,
    };
    let (train_set, test_set) = dataset.split(test_samples)?;
    let net = attribute_net.map(AttributeNet::load).transpose()?;
    let classifier: ClassifierConfig = match classifier {
        Some(p) => read_json(p)?,
        None => ClassifierConfig::default(),
    };
    let classes = dataset.spec.classes();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let extractor = FeatureExtractor::train(&train_set.samples, &train_set.labels, classes, &classifier, &mut rng)?;
    let real_moments = extractor.moments(&test_set.samples)?;
    let labels = label_histogram(&train_set.labels, classes);
    let evaluator = Evaluator {
        extractor: &extractor,
        real_moments: &real_moments,
        data_labels: &labels,
    };
    let dir = out_path(common, "run");
    fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
    let trace_path = dir.join("trace.jsonl");
    let file = fs::File::create(&trace_path).map_err(|e| io_error(&trace_path, e))?;
    let mut sink = BufWriter::new(file);
    let mut outcome = train(config, &train_set.samples, &test_set.samples, net, Some(&evaluator), |r| {
        let line = serde_json::to_string(r)?;
        writeln!(sink, "{line}").map_err(|e| io_error(&trace_path, e))
    })?;
    sink.flush().map_err(|e| io_error(&trace_path, e))?;
    write_json(&dir.join("status.json"), &outcome.status)?;
    if let RunStatus::Diverged { iteration, detail } = &outcome.status {
        return Err(Failure::Diverged(format!("diverged at iteration {iteration}: {detail}")));
    }
    let samples = outcome.trainer.sample(outcome.trainer.config.eval_samples)?;
    write_json(&dir.join("samples.json"), &samples)?;
    write_json(&dir.join("generator.json"), &outcome.trainer.generator)?;
    if let Some(last) = outcome.trace.last() {
        println!(
            "finished {} iterations: d_train {:.4}, d_test {:.4}, IS {:?}, MS {:?}, FID {:?}",
            last.iter, last.d_train, last.d_test, last.is, last.ms, last.fid
        );
    }
    if !matches!(dataset.spec, DatasetSpec::Images { .. }) {
        let cov = mode_coverage(&samples, &dataset.spec.centers(), dataset.spec.sigma(), 3.0, 0.02)?;
        println!("modes covered: {}/{}", cov.covered, cov.fractions.len());
        write_json(&dir.join("coverage.json"), &cov)?;
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn eval(common: &Common, samples: &Path, data: &Path, unsquared: bool) -> Outcome {
    let classifier: ClassifierConfig = config_or(common, ClassifierConfig::default)?;
    let generated: Tensor = read_json(samples)?;
    let dataset = Dataset::load(data)?;
    let classes = dataset.spec.classes();
    let extractor = FeatureExtractor::train(&dataset.samples, &dataset.labels, classes, &classifier, &mut rng(common))?;
    let real = extractor.moments(&dataset.samples)?;
    let labels = label_histogram(&dataset.labels, classes);
    let term = if unsquared { MeanTerm::Unsquared } else { MeanTerm::Squared };
    let metrics = evaluate(&extractor, &generated, &real, &labels, term)?;
    let text = serde_json::to_string_pretty(&metrics).map_err(Error::from)?;
    if let Some(out) = &common.out {
        write_json(out, &metrics)?;
    }
    println!("{text}");
    Ok(())
}

fn report(common: &Common, experiment: &Path) -> Outcome {
    let report = match &common.config {
        Some(path) => {
            let config = ExperimentConfig::load(path)?;
            run_experiment(&config, experiment)?
        }
        None => build_report(experiment)?,
    };
    if let Some(out) = &common.out {
        write_json(&out.with_extension("json"), &report)?;
        let md = out.with_extension("md");
        fs::write(&md, report.to_markdown()).map_err(|e| io_error(&md, e))?;
    }
    println!("{}", report.to_markdown());
    Ok(())
}

fn dispatch(cli: Cli) -> Outcome {
    match cli.command {
        Command::GenData { common, dataset, samples } => gen_data(&common, &dataset, samples),
        Command::GenAnnotations { common, data, fake, images } => {
            gen_annotations(&common, &data, fake.as_deref(), images)
        }
        Command::Stats { common, annotations } => stats(&common, &annotations),
        Command::TrainAttr { common, data, annotations, samples } => {
            train_attr(&common, &data, annotations.as_deref(), samples)
        }
        Command::TrainGan { common, data, test_samples, attribute_net, classifier } => train_gan(
            &common,
            data.as_deref(),
            test_samples,
            attribute_net.as_deref(),
            classifier.as_deref(),
        ),
        Command::Eval { common, samples, data, unsquared_mean } => eval(&common, &samples, &data, unsquared_mean),
        Command::Report { common, experiment } => report(&common, &experiment),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match std::panic::catch_unwind(|| dispatch(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Failure::User(m))) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Ok(Err(Failure::Diverged(m))) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Ok(Err(Failure::Internal(m))) => {
            eprintln!("internal error: {m}");
            ExitCode::from(3)
        }
        Err(_) => ExitCode::from(3),
    }
}
