use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::annotate::{synthesize_annotations, ImagePool, SynthesisSpec};
use super::data::{generate_dataset, Dataset, DatasetSpec};
use crate::annotations::{
    compare_groups, mann_whitney, statistics_report, write_records, AttributeComparison, ImageScore,
    MannWhitney, ReportConfig, StatisticsReport,
};
use crate::attributes::{Attribute, AttributeNet, AttributeSchedule, AttributeVector};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::gan::{
    independence_test, mode_coverage, train, Evaluator, FusionMode, LossKind, ModeCoverage, PermutationTest,
    RunStatus, TraceRecord, Trainer, TrainingConfig,
};
use crate::metrics::{label_histogram, ClassifierConfig, FeatureExtractor, MetricSet};

/// The loss × fusion × seed matrix and everything shared by its runs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub train_samples: usize,
    pub test_samples: usize,
    pub data_seed: u64,
    /// Base settings for every run; loss, fusion and seed are overridden.
    pub training: TrainingConfig,
    /// Take optimizer, learning rate and critic steps from each loss's desk
    /// preset instead of from `training`.
    pub loss_presets: bool,
    pub losses: Vec<LossKind>,
    pub fusions: Vec<FusionMode>,
    pub seeds: Vec<u64>,
    pub attribute: AttributeSchedule,
    /// Inputs for fitting the attribute net: half real, half drawn over the
    /// oracle's domain.
    pub attribute_samples: usize,
    pub classifier: ClassifierConfig,
    pub annotation: SynthesisSpec,
    /// Real and generated images each, for the statistics block.
    pub annotated_images: usize,
    pub report: ReportConfig,
    /// Permutations for the random-noise independence test.
    pub permutations: usize,
    pub independence_bins: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::ring8(),
            train_samples: 8000,
            test_samples: 2000,
            data_seed: 0,
            training: TrainingConfig::desk(LossKind::WganGp),
            loss_presets: true,
            losses: LossKind::ALL.to_vec(),
            fusions: FusionMode::ALL.to_vec(),
            seeds: vec![1, 2, 3, 4, 5],
            attribute: AttributeSchedule::default(),
            attribute_samples: 2000,
            classifier: ClassifierConfig::default(),
            annotation: SynthesisSpec::default(),
            annotated_images: 200,
            report: ReportConfig::default(),
            permutations: 199,
            independence_bins: 4,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c: ExperimentConfig = read_json(path)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.training.validate()?;
        self.annotation.validate()?;
        for (field, empty) in [
            ("losses", self.losses.is_empty()),
            ("fusions", self.fusions.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ] {
            if empty {
                return Err(Error::config(field, "must list at least one entry"));
            }
        }
        if self.train_samples < 2 || self.test_samples < 2 {
            return Err(Error::config("train_samples", "train and test splits need at least 2 samples"));
        }
        if self.attribute_samples < 4 {
            return Err(Error::config("attribute_samples", "must be at least 4"));
        }
        if self.annotated_images < 2 || self.annotated_images > self.test_samples {
            return Err(Error::config("annotated_images", "must lie between 2 and the test split size"));
        }
        if self.permutations == 0 || self.independence_bins < 2 {
            return Err(Error::config("permutations", "need at least one permutation and two bins"));
        }
        Ok(())
    }

    /// Settings for one cell of the matrix.
    pub fn run_config(&self, loss: LossKind, fusion: FusionMode, seed: u64) -> TrainingConfig {
        let mut c = self.training.clone();
        if self.loss_presets {
            let p = TrainingConfig::desk(loss);
            c.optimizer = p.optimizer;
            c.learning_rate = p.learning_rate;
            c.n_critic = p.n_critic;
        }
        c.loss = loss;
        c.fusion = fusion;
        c.seed = seed;
        c
    }

    /// SHA-256 of the canonical JSON form, used to match resumable output.
    pub fn content_hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    pub fn run_ids(&self) -> Vec<String> {
        let mut ids = Vec::new();
        for &loss in &self.losses {
            for &fusion in &self.fusions {
                for &seed in &self.seeds {
                    ids.push(run_id(loss, fusion, seed));
                }
            }
        }
        ids
    }
}

pub fn run_id(loss: LossKind, fusion: FusionMode, seed: u64) -> String {
    format!("{}-{}-s{seed}", loss.name(), fusion.name())
}

/// Outcome of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub id: String,
    pub loss: LossKind,
    pub fusion: FusionMode,
    pub seed: u64,
    pub config_hash: String,
    pub status: RunStatus,
    pub metrics: Option<MetricSet>,
    pub coverage: Option<ModeCoverage>,
    pub final_d_train: Option<f64>,
    pub final_d_test: Option<f64>,
    /// Only for random-noise fusion: is the attribute input independent of the sample?
    pub independence: Option<PermutationTest>,
}

/// Median and range of one metric across seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Spread> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Some(Spread {
            median,
            min: v[0],
            max: v[n - 1],
            count: n,
        })
    }
}

/// One row of the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub loss: LossKind,
    pub fusion: FusionMode,
    pub runs: usize,
    pub diverged: usize,
    pub inception_score: Option<Spread>,
    pub mode_score: Option<Spread>,
    pub fid: Option<Spread>,
    pub modes_covered: Option<Spread>,
}

/// Real-versus-generated statistics on the oracle attributes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StatisticsBlock {
    /// Run whose generator supplied the fake images.
    pub generated_by: String,
    /// Group comparison on the raw oracle scores.
    pub oracle: Vec<AttributeComparison>,
    /// Realism of real samples against an untrained generator's samples.
    pub realism_dominance: MannWhitney,
    /// The full annotation pipeline run on synthesized ratings.
    pub annotations: StatisticsReport,
    pub tainted_assignments: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub runs: Vec<RunSummary>,
    pub table: Vec<ComparisonRow>,
    pub statistics: Option<StatisticsBlock>,
}

/// Paths inside an experiment directory.
struct Layout(PathBuf);

impl Layout {
    fn config(&self) -> PathBuf {
        self.0.join("config.json")
    }
    fn trace(&self, id: &str) -> PathBuf {
        self.0.join("traces").join(format!("{id}.jsonl"))
    }
    fn run(&self, id: &str) -> PathBuf {
        self.0.join("runs").join(format!("{id}.json"))
    }
    fn samples(&self, id: &str) -> PathBuf {
        self.0.join("samples").join(format!("{id}.json"))
    }
    fn statistics(&self) -> PathBuf {
        self.0.join("statistics.json")
    }
    fn report_json(&self) -> PathBuf {
        self.0.join("report.json")
    }
    fn report_md(&self) -> PathBuf {
        self.0.join("report.md")
    }
}

#[derive(Serialize, Deserialize)]
struct StoredConfig {
    config_hash: String,
    config: ExperimentConfig,
}

fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Data, classifier and attribute net shared by every run.
struct Shared {
    train: Dataset,
    test: Dataset,
    extractor: FeatureExtractor,
    real_moments: crate::metrics::GaussianMoments,
    data_labels: Vec<f64>,
    attribute_net: Option<AttributeNet>,
}

fn prepare(config: &ExperimentConfig) -> Result<Shared> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.data_seed);
    let data = generate_dataset(&config.dataset, config.train_samples + config.test_samples, &mut rng)?;
    let (train, test) = data.split(config.test_samples)?;
    let classes = config.dataset.classes();
    let extractor = FeatureExtractor::train(&train.samples, &train.labels, classes, &config.classifier, &mut rng)?;
    let real_moments = extractor.moments(&test.samples)?;
    let data_labels = label_histogram(&train.labels, classes);
    let attribute_net = if config.fusions.contains(&FusionMode::AttributeNet) {
        Some(fit_attribute_net(config, &train, &mut rng)?)
    } else {
        None
    };
    Ok(Shared {
        train,
        test,
        extractor,
        real_moments,
        data_labels,
        attribute_net,
    })
}

/// Fits the attribute net to oracle scores on real and off-distribution
/// inputs, holding out every other row for validation.
pub fn fit_attribute_net(config: &ExperimentConfig, train: &Dataset, rng: &mut ChaCha8Rng) -> Result<AttributeNet> {
    let oracle = config.dataset.oracle()?;
    let half = config.attribute_samples / 2;
    let real_rows = half.min(train.len());
    let real = train.samples.slice_rows(0, real_rows)?;
    let off = config.dataset.sample_domain(config.attribute_samples - real_rows, rng)?;
    let mut rows = real.to_rows();
    rows.extend(off.to_rows());
    let (tr, va): (Vec<_>, Vec<_>) = rows.into_iter().enumerate().partition(|(i, _)| i % 2 == 0);
    let unzip = |part: Vec<(usize, Vec<f64>)>| -> Result<(Tensor, Tensor)> {
        let x: Vec<Vec<f64>> = part.into_iter().map(|(_, r)| r).collect();
        let xt = Tensor::from_rows(&x)?;
        let yt = oracle.eval_batch(&xt)?;
        Ok((xt, yt))
    };
    let (tx, ty) = unzip(tr)?;
    let (vx, vy) = unzip(va)?;
    AttributeNet::train(&tx, &ty, &vx, &vy, &config.attribute, rng)
}

fn run_one(
    config: &ExperimentConfig,
    shared: &Shared,
    layout: &Layout,
    hash: &str,
    loss: LossKind,
    fusion: FusionMode,
    seed: u64,
) -> Result<RunSummary> {
    let id = run_id(loss, fusion, seed);
    let cfg = config.run_config(loss, fusion, seed);
    let evaluator = Evaluator {
        extractor: &shared.extractor,
        real_moments: &shared.real_moments,
        data_labels: &shared.data_labels,
    };
    let trace_path = layout.trace(&id);
    let file = File::create(&trace_path).map_err(|e| Error::io(&trace_path, e))?;
    let mut sink = BufWriter::new(file);
    let net = match fusion {
        FusionMode::AttributeNet => shared.attribute_net.clone(),
        _ => None,
    };
    let mut outcome = train(cfg, &shared.train.samples, &shared.test.samples, net, Some(&evaluator), |r: &TraceRecord| {
        let line = serde_json::to_string(r)?;
        writeln!(sink, "{line}").map_err(|e| Error::io(&trace_path, e))
    })?;
    sink.flush().map_err(|e| Error::io(&trace_path, e))?;
    let last = outcome.trace.last();
    let mut summary = RunSummary {
        id: id.clone(),
        loss,
        fusion,
        seed,
        config_hash: hash.to_string(),
        status: outcome.status.clone(),
        metrics: last.and_then(|r| {
            Some(MetricSet {
                inception_score: r.is?,
                mode_score: r.ms?,
                fid: r.fid?,
            })
        }),
        coverage: None,
        final_d_train: last.map(|r| r.d_train),
        final_d_test: last.map(|r| r.d_test),
        independence: None,
    };
    if outcome.status == RunStatus::Success {
        let samples = outcome.trainer.sample(outcome.trainer.config.eval_samples)?;
        if samples.all_finite() {
            if !matches!(config.dataset, DatasetSpec::Images { .. }) {
                summary.coverage = Some(mode_coverage(&samples, &config.dataset.centers(), config.dataset.sigma(), 3.0, 0.02)?);
            }
            if fusion == FusionMode::RandomNoise {
                let attrs = outcome
                    .trainer
                    .attribute_input(&samples)?
                    .ok_or_else(|| Error::contract("random-noise fusion produced no attribute input"))?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
                summary.independence = Some(independence_test(
                    &samples,
                    &attrs,
                    config.independence_bins,
                    config.permutations,
                    &mut rng,
                )?);
            }
            write_json(layout.samples(&id), &samples)?;
        }
    }
    Ok(summary)
}

fn statistics_block(config: &ExperimentConfig, shared: &Shared, layout: &Layout, runs: &[RunSummary]) -> Result<Option<StatisticsBlock>> {
    let Some(source) = runs.iter().find(|r| r.status == RunStatus::Success && layout.samples(&r.id).exists()) else {
        return Ok(None);
    };
    let generated: Tensor = read_json(layout.samples(&source.id))?;
    let m = config.annotated_images.min(generated.rows());
    let real = shared.test.samples.slice_rows(0, m)?;
    let fake = generated.slice_rows(0, m)?;
    let oracle = config.dataset.oracle()?;

    let score = |t: &Tensor, tag: &str, is_real: bool| -> Result<Vec<ImageScore>> {
        (0..t.rows())
            .map(|i| {
                Ok(ImageScore {
                    image_id: format!("{tag}{i:05}"),
                    is_real,
                    scores: oracle.eval(t.row(i))?,
                    annotators: 1,
                })
            })
            .collect()
    };
    let mut images = score(&real, "real", true)?;
    images.extend(score(&fake, "fake", false)?);
    let oracle_cmp = compare_groups(&images)?;

    // an untrained generator stands in for early training
    let mut early = Trainer::new(config.run_config(source.loss, source.fusion, source.seed), shared.train.samples.cols(), shared.attribute_net.clone())?;
    let early_samples = early.sample(m)?;
    let realism = |t: &Tensor| -> Result<Vec<f64>> {
        (0..t.rows()).map(|i| Ok(oracle.eval(t.row(i))?.get(Attribute::Realism))).collect()
    };
    let realism_dominance = mann_whitney(&realism(&real)?, &realism(&early_samples)?)?;

    let mut rows = real.to_rows();
    rows.extend(fake.to_rows());
    let pool = ImagePool {
        ids: images.iter().map(|s| s.image_id.clone()).collect(),
        samples: Tensor::from_rows(&rows)?,
        is_real: images.iter().map(|s| s.is_real).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.data_seed ^ 0xa77);
    let syn = synthesize_annotations(&pool, &oracle, &config.annotation, &mut rng)?;
    write_records(layout.0.join("annotations.csv"), &syn.records)?;
    let annotations = statistics_report(&syn.records, &config.report)?;
    Ok(Some(StatisticsBlock {
        generated_by: source.id.clone(),
        oracle: oracle_cmp,
        realism_dominance,
        annotations,
        tainted_assignments: syn.tainted.len(),
    }))
}

/// Runs every cell of the matrix into `out_dir` and writes the report.
///
/// Output written under the same configuration is reused: finished runs are
/// not retrained and a finished experiment returns its stored report.
pub fn run_experiment(config: &ExperimentConfig, out_dir: impl AsRef<Path>) -> Result<ExperimentReport> {
    config.validate()?;
    let layout = Layout(out_dir.as_ref().to_path_buf());
    let hash = config.content_hash()?;
    if layout.config().exists() {
        let stored: StoredConfig = read_json(layout.config())?;
        if stored.config_hash != hash {
            return Err(Error::config(
                "out",
                format!("{} holds an experiment with a different configuration", layout.0.display()),
            ));
        }
        if layout.report_json().exists() {
            let report: ExperimentReport = read_json(layout.report_json())?;
            if report.config_hash == hash && report.runs.len() == config.run_ids().len() {
                return Ok(report);
            }
        }
    }
    for sub in ["traces", "runs", "samples"] {
        create_dir(&layout.0.join(sub))?;
    }
    write_json(layout.config(), &StoredConfig { config_hash: hash.clone(), config: config.clone() })?;

    let shared = prepare(config)?;
    if let Some(net) = &shared.attribute_net {
        net.save(layout.0.join("attribute_net.json"))?;
    }
    let mut runs = Vec::new();
    for &loss in &config.losses {
        for &fusion in &config.fusions {
            for &seed in &config.seeds {
                let id = run_id(loss, fusion, seed);
                let path = layout.run(&id);
                if path.exists() {
                    let done: RunSummary = read_json(&path)?;
                    if done.config_hash == hash {
                        runs.push(done);
                        continue;
                    }
                }
                log::info!("training {id}");
                let summary = run_one(config, &shared, &layout, &hash, loss, fusion, seed)?;
                write_json(&path, &summary)?;
                runs.push(summary);
            }
        }
    }
    let stats = statistics_block(config, &shared, &layout, &runs)?;
    match &stats {
        Some(s) => write_json(layout.statistics(), s)?,
        None => {
            let _ = fs::remove_file(layout.statistics());
        }
    }
    build_report(&layout.0)
}

/// Rebuilds the comparison report from the run summaries in `dir` and
/// writes `report.json` and `report.md`.
pub fn build_report(dir: impl AsRef<Path>) -> Result<ExperimentReport> {
    let layout = Layout(dir.as_ref().to_path_buf());
    let stored: StoredConfig = read_json(layout.config())?;
    let mut runs = Vec::new();
    for id in stored.config.run_ids() {
        let path = layout.run(&id);
        if path.exists() {
            let r: RunSummary = read_json(&path)?;
            if r.config_hash == stored.config_hash {
                runs.push(r);
            }
        }
    }
    let statistics = if layout.statistics().exists() {
        Some(read_json(layout.statistics())?)
    } else {
        None
    };
    let report = ExperimentReport {
        config_hash: stored.config_hash,
        table: comparison_table(&runs),
        runs,
        statistics,
    };
    write_json(layout.report_json(), &report)?;
    fs::write(layout.report_md(), report.to_markdown()).map_err(|e| Error::io(layout.report_md(), e))?;
    Ok(report)
}

pub fn comparison_table(runs: &[RunSummary]) -> Vec<ComparisonRow> {
    let mut cells: BTreeMap<(usize, usize), Vec<&RunSummary>> = BTreeMap::new();
    let loss_pos = |l: LossKind| LossKind::ALL.iter().position(|&x| x == l).unwrap_or(0);
    let fusion_pos = |f: FusionMode| FusionMode::ALL.iter().position(|&x| x == f).unwrap_or(0);
    for r in runs {
        cells.entry((loss_pos(r.loss), fusion_pos(r.fusion))).or_default().push(r);
    }
    cells
        .into_iter()
        .map(|((l, f), rs)| {
            let metric = |get: &dyn Fn(&MetricSet) -> f64| {
                Spread::of(&rs.iter().filter_map(|r| r.metrics.as_ref().map(get)).collect::<Vec<_>>())
            };
            ComparisonRow {
                loss: LossKind::ALL[l],
                fusion: FusionMode::ALL[f],
                runs: rs.len(),
                diverged: rs.iter().filter(|r| r.status != RunStatus::Success).count(),
                inception_score: metric(&|m| m.inception_score),
                mode_score: metric(&|m| m.mode_score),
                fid: metric(&|m| m.fid),
                modes_covered: Spread::of(
                    &rs.iter().filter_map(|r| r.coverage.as_ref().map(|c| c.covered as f64)).collect::<Vec<_>>(),
                ),
            }
        })
        .collect()
}

fn cell(s: &Option<Spread>, digits: usize) -> String {
    match s {
        Some(s) => format!("{:.d$} [{:.d$}, {:.d$}]", s.median, s.min, s.max, d = digits),
        None => "n/a".into(),
    }
}

impl ExperimentReport {
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Experiment report\n\n");
        out += &format!("Configuration hash: `{}`\n\n", self.config_hash);
        out += "## Comparison across fusion modes\n\nMedian [min, max] over seeds.\n\n";
        out += "| Loss | Fusion | Runs | Diverged | IS | MS | FID | Modes |\n";
        out += "|---|---|---|---|---|---|---|---|\n";
        for r in &self.table {
            out += &format!(
                "| {} | {} | {} | {} | {} | {} | {} | {} |\n",
                r.loss.name(),
                r.fusion.name(),
                r.runs,
                r.diverged,
                cell(&r.inception_score, 3),
                cell(&r.mode_score, 3),
                cell(&r.fid, 4),
                cell(&r.modes_covered, 0),
            );
        }
        let tests: Vec<&RunSummary> = self.runs.iter().filter(|r| r.independence.is_some()).collect();
        if !tests.is_empty() {
            out += "\n## Random-noise independence\n\n| Run | MI statistic | p |\n|---|---|---|\n";
            for r in tests {
                let t = r.independence.as_ref().expect("filtered");
                out += &format!("| {} | {:.4} | {:.3} |\n", r.id, t.statistic, t.p_value);
            }
        }
        let diverged: Vec<&RunSummary> = self.runs.iter().filter(|r| r.status != RunStatus::Success).collect();
        if !diverged.is_empty() {
            out += "\n## Diverged runs\n\n";
            for r in diverged {
                if let RunStatus::Diverged { iteration, detail } = &r.status {
                    out += &format!("- {} at iteration {iteration}: {detail}\n", r.id);
                }
            }
        }
        if let Some(s) = &self.statistics {
            out += &format!("\n## Real versus generated ({})\n\n", s.generated_by);
            out += "Oracle scores:\n\n| Attribute | Real mean (sd) | Generated mean (sd) | z | p |\n|---|---|---|---|---|\n";
            for c in &s.oracle {
                let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
                out += &format!(
                    "| {} | {:.3} ({:.3}) | {:.3} ({:.3}) | {} | {} |\n",
                    c.attribute.name(),
                    c.mean_real,
                    c.sd_real,
                    c.mean_fake,
                    c.sd_fake,
                    opt(c.z),
                    opt(c.p)
                );
            }
            let d = &s.realism_dominance;
            out += &format!(
                "\nRealism of real samples over an untrained generator: U = {:.1}, z = {:.2}, p = {:.3e}\n",
                d.u, d.z, d.p
            );
            out += &format!(
                "\nSynthesized ratings: {} tainted assignments planted.\n\n",
                s.tainted_assignments
            );
            out += &s.annotations.to_markdown();
        }
        out
    }
}

/// Attribute vector of each row, for callers that want raw oracle output.
pub fn oracle_scores(spec: &DatasetSpec, samples: &Tensor) -> Result<Vec<AttributeVector>> {
    let oracle = spec.oracle()?;
    (0..samples.rows()).map(|i| oracle.eval(samples.row(i))).collect()
}
