//! Two-stage transfer procedure: pre-transfer training on labeled source data
//! with the Lautum term over unlabeled target data, then fine-tuning of the
//! whole network on a few labeled target samples.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Arch, DataSource, ExperimentConfig, Mode};
use crate::cov_stream::{precompute_target_cov, CovarianceAccumulator};
use crate::data::{load_idx, Dataset, DomainPair};
use crate::lautum_reg::{self, pretrain_loss};
use crate::linalg::Mat;
use crate::nn_core::{self, adam_step, AdamState, NetworkParams, NetworkSpec};
use crate::par::Exec;
use crate::{Error, Result};

const SOURCE_STREAM: u64 = 1;
const TARGET_STREAM: u64 = 2;
const FINETUNE_STREAM: u64 = 3;
const SPLIT_STREAM: u64 = 4;

pub const METRICS_HEADER: &str =
    "stage,epoch,iteration,ce_loss,lautum_value,target_test_acc,source_test_acc,wall_time_s";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.toml";
pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.csv";
pub const SWEEP_CELLS_FILE: &str = "sweep_cells.csv";

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub labeled_count: usize,
    pub seed: u64,
}

/// Unlabeled target inputs. Every read goes through [`UnlabeledPool::gather`],
/// which counts accesses.
#[derive(Debug)]
pub struct UnlabeledPool {
    inputs: Mat,
    accesses: AtomicUsize,
}

impl UnlabeledPool {
    pub fn new(inputs: Mat) -> Self {
        Self {
            inputs,
            accesses: AtomicUsize::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn gather(&self, indices: &[usize]) -> Mat {
        self.accesses.fetch_add(1, Ordering::Relaxed);
        self.inputs.select_columns(indices)
    }

    /// `Σx` of the whole pool plus jitter.
    pub fn covariance(&self, jitter: f64) -> Result<Mat> {
        self.accesses.fetch_add(1, Ordering::Relaxed);
        precompute_target_cov(&self.inputs, jitter)
    }

    pub fn access_count(&self) -> usize {
        self.accesses.load(Ordering::Relaxed)
    }
}

/// Labeled part and unlabeled part of a target training set.
#[derive(Debug)]
pub struct TargetSplit {
    pub labeled: Dataset,
    pub unlabeled: UnlabeledPool,
    pub labeled_indices: Vec<usize>,
    pub unlabeled_indices: Vec<usize>,
}

/// Splits `dataset` into a labeled subset and an unlabeled pool.
///
/// Classes are visited round-robin in index order, each contributing its next
/// shuffled sample, so counts differ by at most one and the lowest classes
/// receive the remainder. With fewer labels than classes the selection is a
/// plain shuffle.
pub fn split_target(dataset: &Dataset, spec: SplitSpec) -> Result<TargetSplit> {
    let n = dataset.len();
    if spec.labeled_count == 0 {
        return Err(Error::Config("labeled_count must be positive".into()));
    }
    if spec.labeled_count > n {
        return Err(Error::Config(format!(
            "labeled_count {} exceeds the {n} target training samples",
            spec.labeled_count
        )));
    }
    let mut rng = stream_rng(spec.seed, SPLIT_STREAM);
    let k = dataset.classes();
    let mut labeled = if spec.labeled_count < k {
        warn!(
            "labeled_count {} is below the {k} classes; drawing the labeled split without stratification",
            spec.labeled_count
        );
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        all.truncate(spec.labeled_count);
        all
    } else {
        let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &y) in dataset.labels().iter().enumerate() {
            per_class[y].push(i);
        }
        for c in &mut per_class {
            c.shuffle(&mut rng);
        }
        let mut picked = Vec::with_capacity(spec.labeled_count);
        let mut depth = 0;
        while picked.len() < spec.labeled_count {
            for c in &per_class {
                if picked.len() == spec.labeled_count {
                    break;
                }
                if let Some(&i) = c.get(depth) {
                    picked.push(i);
                }
            }
            depth += 1;
        }
        picked
    };
    labeled.sort_unstable();
    let mut is_labeled = vec![false; n];
    for &i in &labeled {
        is_labeled[i] = true;
    }
    let unlabeled: Vec<usize> = (0..n).filter(|&i| !is_labeled[i]).collect();
    Ok(TargetSplit {
        labeled: dataset.subset(&labeled)?,
        unlabeled: UnlabeledPool::new(dataset.gather_inputs(&unlabeled)),
        labeled_indices: labeled,
        unlabeled_indices: unlabeled,
    })
}

/// Fraction of samples whose argmax logit equals the label; ties go to the
/// lowest class index.
pub fn evaluate_accuracy(params: &NetworkParams, testset: &Dataset) -> Result<f64> {
    if testset.is_empty() {
        return Err(Error::Config("cannot evaluate accuracy on an empty test set".into()));
    }
    let logits = params.predict(testset.inputs())?;
    let correct = logits
        .column_iter()
        .zip(testset.labels())
        .filter(|(col, &y)| argmax(col.as_slice()) == y)
        .count();
    Ok(correct as f64 / testset.len() as f64)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pre,
    Post,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Pre => "pre",
            Stage::Post => "post",
        }
    }
}

/// One row of the metrics stream, written once per epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub stage: Stage,
    pub epoch: usize,
    /// Optimizer steps taken in this stage so far.
    pub iteration: usize,
    /// Mean batch cross-entropy over the epoch.
    pub ce_loss: f64,
    /// Mean Lautum value over the epoch; NaN when never evaluated.
    pub lautum_value: f64,
    pub target_test_acc: f64,
    pub source_test_acc: f64,
    pub wall_time_s: f64,
}

impl MetricsRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.stage.as_str(),
            self.epoch,
            self.iteration,
            self.ce_loss,
            self.lautum_value,
            self.target_test_acc,
            self.source_test_acc,
            self.wall_time_s
        )
    }
}

/// Serializes records under the fixed header.
pub fn metrics_to_csv(records: &[MetricsRecord]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{}", r.to_csv_row());
    }
    s
}

/// Parses a metrics CSV. Row numbers in errors are 1-based file lines.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        Some((_, h)) => {
            return Err(Error::Parse {
                row: 1,
                message: format!("unexpected header {h:?}"),
            })
        }
        None => {
            return Err(Error::Parse {
                row: 1,
                message: "empty file".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Parse {
                row,
                message: format!("expected 8 fields, found {}", fields.len()),
            });
        }
        let stage = match fields[0] {
            "pre" => Stage::Pre,
            "post" => Stage::Post,
            other => {
                return Err(Error::Parse {
                    row,
                    message: format!("unknown stage {other:?}"),
                })
            }
        };
        let int = |j: usize| {
            fields[j].parse::<usize>().map_err(|e| Error::Parse {
                row,
                message: format!("field {j}: {e}"),
            })
        };
        let float = |j: usize| {
            fields[j].parse::<f64>().map_err(|e| Error::Parse {
                row,
                message: format!("field {j}: {e}"),
            })
        };
        out.push(MetricsRecord {
            stage,
            epoch: int(1)?,
            iteration: int(2)?,
            ce_loss: float(3)?,
            lautum_value: float(4)?,
            target_test_acc: float(5)?,
            source_test_acc: float(6)?,
            wall_time_s: float(7)?,
        });
    }
    Ok(out)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics_csv(&text).map_err(|e| e.context(path.display().to_string()))
}

/// Loads the source/target datasets named by the config.
pub fn load_data(cfg: &ExperimentConfig) -> Result<DomainPair> {
    match &cfg.data {
        DataSource::Synthetic { .. } => cfg.synthetic_spec().expect("synthetic source").generate(),
        DataSource::Idx(p) => Ok(DomainPair {
            source_train: load_idx(&p.source_train_images, &p.source_train_labels)?,
            source_test: load_idx(&p.source_test_images, &p.source_test_labels)?,
            target_train: load_idx(&p.target_train_images, &p.target_train_labels)?,
            target_test: load_idx(&p.target_test_images, &p.target_test_labels)?,
        }),
    }
}

/// Everything one experiment needs, with the target split already made.
#[derive(Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub source_train: Dataset,
    pub source_test: Dataset,
    pub target_test: Dataset,
    pub split: TargetSplit,
    pub classes: usize,
}

impl Experiment {
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        let data = load_data(config).map_err(|e| e.context("loading data"))?;
        Self::from_data(config, data)
    }

    pub fn from_data(config: &ExperimentConfig, data: DomainPair) -> Result<Self> {
        config.validate()?;
        let DomainPair {
            source_train,
            source_test,
            target_train,
            target_test,
        } = data;
        let dims = [
            source_train.dim(),
            source_test.dim(),
            target_train.dim(),
            target_test.dim(),
        ];
        if dims.iter().any(|&d| d != dims[0]) {
            return Err(Error::Shape(format!(
                "one network needs a common input dimension, datasets have {dims:?}"
            )));
        }
        let classes = [&source_train, &source_test, &target_train, &target_test]
            .iter()
            .map(|d| d.classes())
            .max()
            .unwrap_or(0);
        let split = split_target(
            &target_train,
            SplitSpec {
                labeled_count: config.split.labeled_count,
                seed: config.split_seed(),
            },
        )?;
        Ok(Self {
            config: config.clone(),
            source_train,
            source_test,
            target_test,
            split,
            classes,
        })
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        let cfg = &self.config;
        match cfg.network.arch {
            Arch::Mlp => Ok(NetworkSpec::mlp(
                self.source_train.dim(),
                &cfg.network.hidden,
                self.classes,
                cfg.seed,
            )),
            Arch::Cnn => {
                let (c, h, w) = self
                    .source_train
                    .image_shape()
                    .ok_or_else(|| Error::Config("arch = \"cnn\" needs image-shaped data".into()))?;
                Ok(NetworkSpec::small_cnn(c, h, w, self.classes, cfg.seed))
            }
        }
    }

    pub fn init_params(&self) -> Result<NetworkParams> {
        NetworkParams::init(&self.network_spec()?)
    }

    /// Pre-transfer stage: `epochs` passes over the labeled source set, each
    /// step paired with an equally sized unlabeled target batch.
    pub fn pretrain_stage(
        &self,
        params: &mut NetworkParams,
        sink: &mut dyn FnMut(&MetricsRecord) -> Result<()>,
    ) -> Result<Vec<MetricsRecord>> {
        let cfg = &self.config;
        let reg = cfg.lautum_reg();
        let b = cfg.batch_size;
        let pool = &self.split.unlabeled;
        let n_src = self.source_train.len();
        if n_src < b {
            return Err(Error::BatchSize(format!(
                "source set has {n_src} samples, batch size is {b}"
            )));
        }
        let mut acc = if pool.len() >= b {
            let sigma_x = pool.covariance(cfg.jitter)?;
            Some(CovarianceAccumulator::new(sigma_x, self.classes, cfg.alpha, cfg.jitter)?.with_batch_size(b))
        } else if reg.lambda > 0.0 {
            return Err(Error::BatchSize(format!(
                "unlabeled pool has {} samples, batch size is {b}",
                pool.len()
            )));
        } else {
            None
        };

        let mut src_rng = stream_rng(cfg.seed, SOURCE_STREAM);
        let mut tgt_rng = stream_rng(cfg.seed, TARGET_STREAM);
        let mut adam = AdamState::new(params, cfg.pretrain.optimizer);
        let mut src_order: Vec<usize> = (0..n_src).collect();
        let mut tgt_order: Vec<usize> = (0..pool.len()).collect();
        let start = Instant::now();
        let mut iteration = 0;
        let mut records = Vec::with_capacity(cfg.pretrain.epochs);

        for epoch in 1..=cfg.pretrain.epochs {
            src_order.shuffle(&mut src_rng);
            tgt_order.shuffle(&mut tgt_rng);
            let mut tgt_pos = 0;
            let (mut ce_sum, mut lautum_sum, mut lautum_n, mut steps) = (0.0, 0.0, 0usize, 0usize);
            for src_idx in src_order.chunks_exact(b) {
                let xs = self.source_train.gather_inputs(src_idx);
                let ys = nn_core::one_hot(&self.source_train.gather_labels(src_idx), self.classes)?;
                let ctx = |e: Error| e.context(format!("pretrain epoch {epoch} iteration {}", iteration + 1));
                let out = match acc.as_mut() {
                    Some(acc) => {
                        if tgt_pos + b > tgt_order.len() {
                            tgt_order.shuffle(&mut tgt_rng);
                            tgt_pos = 0;
                        }
                        let xt = pool.gather(&tgt_order[tgt_pos..tgt_pos + b]);
                        tgt_pos += b;
                        pretrain_loss(&xs, &ys, &xt, params, acc, &reg).map_err(ctx)?
                    }
                    None => {
                        let (logits, cache) = params.forward(&xs).map_err(ctx)?;
                        let (ce, d) = nn_core::softmax_ce_loss(&logits, &ys).map_err(ctx)?;
                        lautum_reg::PretrainOutput {
                            loss: ce,
                            ce,
                            lautum: None,
                            grads: params.backward(&cache, &d).map_err(ctx)?,
                        }
                    }
                };
                if !out.loss.is_finite() {
                    return Err(ctx(Error::Numerical(format!("loss became {}", out.loss))));
                }
                adam_step(params, &out.grads, &mut adam).map_err(ctx)?;
                iteration += 1;
                steps += 1;
                ce_sum += out.ce;
                if let Some(l) = &out.lautum {
                    debug!("pretrain iteration {iteration}: lautum {} ({})", l.value, l.diagnostics);
                    lautum_sum += l.value;
                    lautum_n += 1;
                }
            }
            let rec = MetricsRecord {
                stage: Stage::Pre,
                epoch,
                iteration,
                ce_loss: ce_sum / steps as f64,
                lautum_value: if lautum_n > 0 {
                    lautum_sum / lautum_n as f64
                } else {
                    f64::NAN
                },
                target_test_acc: evaluate_accuracy(params, &self.target_test)?,
                source_test_acc: evaluate_accuracy(params, &self.source_test)?,
                wall_time_s: self.wall_time(start),
            };
            info!(
                "pre epoch {epoch}: ce {:.4} lautum {:.4} target acc {:.4}",
                rec.ce_loss, rec.lautum_value, rec.target_test_acc
            );
            sink(&rec)?;
            records.push(rec);
        }
        Ok(records)
    }

    /// Post-transfer stage on the labeled target subset.
    pub fn finetune_stage(
        &self,
        params: &mut NetworkParams,
        sink: &mut dyn FnMut(&MetricsRecord) -> Result<()>,
    ) -> Result<Vec<MetricsRecord>> {
        finetune_stage(
            &self.config,
            params,
            &self.split.labeled,
            &self.target_test,
            &self.source_test,
            sink,
        )
    }

    fn wall_time(&self, start: Instant) -> f64 {
        wall_time(&self.config, start)
    }

    /// Runs both stages and summarizes, streaming records into `sink`.
    pub fn run(&self, sink: &mut dyn FnMut(&MetricsRecord) -> Result<()>) -> Result<ExperimentOutcome> {
        let mut params = self.init_params()?;
        let mut records = self
            .pretrain_stage(&mut params, sink)
            .map_err(|e| e.context("pre-transfer stage"))?;
        let post = self
            .finetune_stage(&mut params, sink)
            .map_err(|e| e.context("post-transfer stage"))?;
        let summary = Summary::from_records(&self.config, &post);
        records.extend(post);
        Ok(ExperimentOutcome {
            records,
            summary,
            params,
        })
    }
}

fn wall_time(cfg: &ExperimentConfig, start: Instant) -> f64 {
    if cfg.record_wall_time {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    }
}

/// Fine-tunes every parameter with plain cross-entropy on `labeled`. Partial
/// final batches are kept, and the optimizer state starts fresh.
pub fn finetune_stage(
    cfg: &ExperimentConfig,
    params: &mut NetworkParams,
    labeled: &Dataset,
    target_test: &Dataset,
    source_test: &Dataset,
    sink: &mut dyn FnMut(&MetricsRecord) -> Result<()>,
) -> Result<Vec<MetricsRecord>> {
    if labeled.is_empty() {
        return Err(Error::Config("no labeled target samples to fine-tune on".into()));
    }
    let classes = params.output_dim();
    let mut rng = stream_rng(cfg.seed, FINETUNE_STREAM);
    let mut adam = AdamState::new(params, cfg.finetune.optimizer);
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    let start = Instant::now();
    let mut iteration = 0;
    let mut records = Vec::with_capacity(cfg.finetune.epochs);
    for epoch in 1..=cfg.finetune.epochs {
        order.shuffle(&mut rng);
        let (mut ce_sum, mut steps) = (0.0, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let ctx = |e: Error| e.context(format!("finetune epoch {epoch} iteration {}", iteration + 1));
            let x = labeled.gather_inputs(idx);
            let y = nn_core::one_hot(&labeled.gather_labels(idx), classes).map_err(ctx)?;
            let (logits, cache) = params.forward(&x).map_err(ctx)?;
            let (ce, d) = nn_core::softmax_ce_loss(&logits, &y).map_err(ctx)?;
            if !ce.is_finite() {
                return Err(ctx(Error::Numerical(format!("loss became {ce}"))));
            }
            let grads = params.backward(&cache, &d).map_err(ctx)?;
            adam_step(params, &grads, &mut adam).map_err(ctx)?;
            iteration += 1;
            steps += 1;
            ce_sum += ce;
        }
        let rec = MetricsRecord {
            stage: Stage::Post,
            epoch,
            iteration,
            ce_loss: ce_sum / steps as f64,
            lautum_value: f64::NAN,
            target_test_acc: evaluate_accuracy(params, target_test)?,
            source_test_acc: evaluate_accuracy(params, source_test)?,
            wall_time_s: wall_time(cfg, start),
        };
        info!(
            "post epoch {epoch}: ce {:.4} target acc {:.4}",
            rec.ce_loss, rec.target_test_acc
        );
        sink(&rec)?;
        records.push(rec);
    }
    Ok(records)
}

/// Post-transfer accuracy summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: Mode,
    pub lambda: f64,
    pub seed: u64,
    pub final_acc: f64,
    pub best_acc: f64,
    /// Mean target accuracy over the first `early_epochs` post-transfer epochs.
    pub early_acc: f64,
    pub early_epochs: usize,
}

impl Summary {
    pub fn from_records(cfg: &ExperimentConfig, post: &[MetricsRecord]) -> Self {
        let acc: Vec<f64> = post
            .iter()
            .filter(|r| r.stage == Stage::Post)
            .map(|r| r.target_test_acc)
            .collect();
        let early = cfg.early_epochs.min(acc.len());
        Self {
            mode: cfg.mode,
            lambda: cfg.effective_lambda(),
            seed: cfg.seed,
            final_acc: acc.last().copied().unwrap_or(f64::NAN),
            best_acc: acc.iter().copied().fold(f64::NAN, f64::max),
            early_acc: if early > 0 {
                acc[..early].iter().sum::<f64>() / early as f64
            } else {
                f64::NAN
            },
            early_epochs: early,
        }
    }
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    summary: &'a Summary,
    config: &'a ExperimentConfig,
}

#[derive(Deserialize)]
struct SummaryFileOwned {
    summary: Summary,
}

pub fn summary_to_toml(summary: &Summary, cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string(&SummaryFile { summary, config: cfg })
        .map_err(|e| Error::Config(format!("cannot serialize summary: {e}")))
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let f: SummaryFileOwned = toml::from_str(&text).map_err(|e| Error::Parse {
        row: 0,
        message: format!("{}: {}", path.display(), e.message()),
    })?;
    Ok(f.summary)
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub records: Vec<MetricsRecord>,
    pub summary: Summary,
    pub params: NetworkParams,
}

/// Runs one experiment without touching the filesystem (synthetic data).
pub fn run_in_memory(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    Experiment::prepare(cfg)?.run(&mut |_| Ok(()))
}

/// Runs one experiment, streaming `metrics.csv` and writing `summary.toml`
/// into `cfg.output`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let exp = Experiment::prepare(cfg)?;
    let dir = &cfg.output;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let metrics_path = dir.join(METRICS_FILE);
    let mut file = fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    writeln!(file, "{METRICS_HEADER}").map_err(|e| Error::io(&metrics_path, e))?;
    let outcome = exp.run(&mut |r| {
        writeln!(file, "{}", r.to_csv_row()).map_err(|e| Error::io(&metrics_path, e))?;
        file.flush().map_err(|e| Error::io(&metrics_path, e))
    })?;
    let summary_path = dir.join(SUMMARY_FILE);
    fs::write(&summary_path, summary_to_toml(&outcome.summary, cfg)?).map_err(|e| Error::io(&summary_path, e))?;
    Ok(outcome)
}

/// One `(λ, seed)` cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub lambda: f64,
    pub seed: u64,
    pub output: PathBuf,
    pub summary: Summary,
}

/// Mean and population standard deviation of a sweep column for one λ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub mode: Mode,
    pub seeds: usize,
    pub early_acc: Aggregate,
    pub final_acc: Aggregate,
    pub best_acc: Aggregate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub cells: Vec<SweepCell>,
    pub rows: Vec<SweepRow>,
}

impl SweepOutcome {
    pub fn cell(&self, lambda: f64, seed: u64) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.lambda == lambda && c.seed == seed)
    }
}

/// Config for one sweep cell: λ = 0 runs standard transfer.
pub fn cell_config(base: &ExperimentConfig, lambda: f64, seed: u64) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.seed = seed;
    cfg.lambda = lambda;
    cfg.mode = if lambda == 0.0 {
        Mode::StandardTransfer
    } else {
        Mode::Lautum
    };
    cfg.output = base.output.join(format!("lambda_{lambda}_seed_{seed}"));
    cfg
}

/// Runs every `(λ, seed)` cell, each writing to its own directory, then
/// writes the per-cell and per-λ tables into `base.output`.
pub fn run_sweep(base: &ExperimentConfig, lambdas: &[f64], seeds: &[u64], exec: Exec) -> Result<SweepOutcome> {
    if lambdas.is_empty() || seeds.is_empty() {
        return Err(Error::Config("a sweep needs at least one lambda and one seed".into()));
    }
    if let Some(l) = lambdas.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::Config(format!("lambda must be >= 0, got {l}")));
    }
    let cells: Vec<(f64, u64)> = lambdas
        .iter()
        .flat_map(|&l| seeds.iter().map(move |&s| (l, s)))
        .collect();
    let results = exec.map(&cells, |&(lambda, seed)| {
        let cfg = cell_config(base, lambda, seed);
        run_experiment(&cfg)
            .map(|o| SweepCell {
                lambda,
                seed,
                output: cfg.output.clone(),
                summary: o.summary,
            })
            .map_err(|e| e.context(format!("sweep cell lambda={lambda} seed={seed}")))
    });
    let cells = results.into_iter().collect::<Result<Vec<_>>>()?;
    let rows = lambdas
        .iter()
        .map(|&lambda| {
            let s: Vec<&Summary> = cells
                .iter()
                .filter(|c| c.lambda == lambda)
                .map(|c| &c.summary)
                .collect();
            let col = |f: fn(&Summary) -> f64| Aggregate::of(&s.iter().map(|x| f(x)).collect::<Vec<_>>());
            SweepRow {
                lambda,
                mode: s[0].mode,
                seeds: s.len(),
                early_acc: col(|x| x.early_acc),
                final_acc: col(|x| x.final_acc),
                best_acc: col(|x| x.best_acc),
            }
        })
        .collect();
    let outcome = SweepOutcome { cells, rows };
    write_sweep_tables(&base.output, &outcome)?;
    Ok(outcome)
}

fn write_sweep_tables(dir: &Path, outcome: &SweepOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut cells = String::from("lambda,seed,mode,early_acc,final_acc,best_acc\n");
    for c in &outcome.cells {
        let s = &c.summary;
        let _ = writeln!(
            cells,
            "{},{},{},{},{},{}",
            c.lambda,
            c.seed,
            s.mode.as_str(),
            s.early_acc,
            s.final_acc,
            s.best_acc
        );
    }
    let mut rows = String::from(
        "lambda,mode,seeds,early_acc_mean,early_acc_std,final_acc_mean,final_acc_std,best_acc_mean,best_acc_std\n",
    );
    for r in &outcome.rows {
        let _ = writeln!(
            rows,
            "{},{},{},{},{},{},{},{},{}",
            r.lambda,
            r.mode.as_str(),
            r.seeds,
            r.early_acc.mean,
            r.early_acc.std,
            r.final_acc.mean,
            r.final_acc.std,
            r.best_acc.mean,
            r.best_acc.std
        );
    }
    let p = dir.join(SWEEP_CELLS_FILE);
    fs::write(&p, cells).map_err(|e| Error::io(&p, e))?;
    let p = dir.join(SWEEP_SUMMARY_FILE);
    fs::write(&p, rows).map_err(|e| Error::io(&p, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SplitTag;

    fn balanced(n_per: usize, k: usize) -> Dataset {
        let n = n_per * k;
        let inputs = Mat::from_fn(2, n, |r, c| (r * n + c) as f64);
        Dataset::new("t", SplitTag::Train, inputs, (0..n).map(|i| i % k).collect(), k).unwrap()
    }

    #[test]
    fn stratified_split_counts() {
        let ds = balanced(100, 10);
        let s = split_target(
            &ds,
            SplitSpec {
                labeled_count: 50,
                seed: 3,
            },
        )
        .unwrap();
        let mut counts = [0usize; 10];
        for &y in s.labeled.labels() {
            counts[y] += 1;
        }
        assert_eq!(counts, [5; 10]);
        assert_eq!(s.unlabeled.len(), 950);
    }

    #[test]
    fn remainder_goes_to_lowest_classes() {
        let ds = balanced(10, 4);
        let s = split_target(
            &ds,
            SplitSpec {
                labeled_count: 6,
                seed: 0,
            },
        )
        .unwrap();
        let mut counts = [0usize; 4];
        for &y in s.labeled.labels() {
            counts[y] += 1;
        }
        assert_eq!(counts, [2, 2, 1, 1]);
    }

    #[test]
    fn split_is_deterministic_disjoint_and_complete() {
        let ds = balanced(30, 3);
        let spec = SplitSpec {
            labeled_count: 7,
            seed: 11,
        };
        let a = split_target(&ds, spec).unwrap();
        let b = split_target(&ds, spec).unwrap();
        assert_eq!(a.labeled_indices, b.labeled_indices);
        let mut all: Vec<usize> = a.labeled_indices.iter().chain(&a.unlabeled_indices).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..90).collect::<Vec<_>>());
        let c = split_target(&ds, SplitSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a.labeled_indices, c.labeled_indices);
    }

    #[test]
    fn split_edge_cases() {
        let ds = balanced(5, 2);
        let full = split_target(
            &ds,
            SplitSpec {
                labeled_count: 10,
                seed: 0,
            },
        )
        .unwrap();
        assert!(full.unlabeled.is_empty());
        let few = split_target(
            &ds,
            SplitSpec {
                labeled_count: 1,
                seed: 0,
            },
        )
        .unwrap();
        assert_eq!(few.labeled.len(), 1);
        assert!(split_target(
            &ds,
            SplitSpec {
                labeled_count: 0,
                seed: 0
            }
        )
        .is_err());
        assert!(split_target(
            &ds,
            SplitSpec {
                labeled_count: 11,
                seed: 0
            }
        )
        .is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 1.0, 0.5]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let r = MetricsRecord {
            stage: Stage::Post,
            epoch: 3,
            iteration: 3,
            ce_loss: 0.25,
            lautum_value: f64::NAN,
            target_test_acc: 0.5,
            source_test_acc: 1.0,
            wall_time_s: 0.0,
        };
        let text = metrics_to_csv(&[r]);
        let back = parse_metrics_csv(&text).unwrap();
        assert_eq!(back[0].epoch, 3);
        assert!(back[0].lautum_value.is_nan());
        let bad = format!("{METRICS_HEADER}\n{}\npost,1,1,x,0,0,0,0\n", r.to_csv_row());
        assert!(matches!(parse_metrics_csv(&bad), Err(Error::Parse { row: 3, .. })));
    }

    #[test]
    fn aggregate_is_population_std() {
        let a = Aggregate::of(&[1.0, 3.0]);
        assert_eq!(a.mean, 2.0);
        assert_eq!(a.std, 1.0);
    }
}
