//! Experiment orchestration: config → corruption → training → CSV.
//!
//! A run is a pure function of its config: the same JSON yields the same CSV
//! bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::data::{gen_synthetic, load_mnist, split, LabeledDataset};
use crate::error::{CoteachError, Result};
use crate::metrics::EpochMetrics;
use crate::noise::{corrupt_labels, empirical_noise_rate, NoiseKind, TransitionMatrix};
use crate::selection::{ScheduleKind, ScheduleParams};
use crate::strategies::{
    epoch_seed, run_training, Learner, LrSchedule, Model, NetworkPair, Strategy, StrategyConfig,
    TrainingConfig, WarmupMode,
};
use crate::nn::DenseNet;

pub const CSV_HEADER: &str =
    "epoch,lambda,test_acc_1,test_acc_2,mean_tv,selection_purity,skipped_batches,lr";

/// Epochs at the end of a run that the accuracy summary averages over.
pub const SUMMARY_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Mnist(MnistSpec),
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MnistSpec {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    #[serde(default)]
    pub train_limit: Option<usize>,
    #[serde(default)]
    pub test_limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_per_class: usize,
    pub num_classes: usize,
    pub dim: usize,
    pub spread: f64,
    pub seed: u64,
    pub test_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    #[serde(default)]
    pub tau: f64,
    /// Required for `custom`: text file with C, then C rows of C probabilities.
    #[serde(default)]
    pub matrix_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub name: Strategy,
    pub schedule: ScheduleKind,
    /// Estimated noise rate for λ(e); defaults to the corruption rate.
    #[serde(default)]
    pub tau: Option<f64>,
    pub e_k: usize,
    #[serde(default)]
    pub warmup_epochs: usize,
    #[serde(default = "default_warmup_mode")]
    pub warmup_mode: WarmupMode,
}

fn default_warmup_mode() -> WarmupMode {
    WarmupMode::None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Hidden layer widths; input and output widths come from the data.
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub lr: f64,
    pub decay_start: usize,
    /// E_max.
    pub epochs: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub init1: u64,
    pub init2: u64,
    pub noise: u64,
    pub shuffle: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    pub tv_samples: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec { tv_samples: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub noise: NoiseSpec,
    pub strategy: StrategySpec,
    pub network: NetworkSpec,
    pub optimizer: OptimizerSpec,
    pub seeds: Seeds,
    #[serde(default)]
    pub eval: EvalSpec,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CoteachError::Config(format!("config: {e}")))
    }

    /// Read and validate a config file. Relative paths inside it are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoteachError::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DatasetSpec::Mnist(m) = &mut self.dataset {
            fix(&mut m.train_images);
            fix(&mut m.train_labels);
            fix(&mut m.test_images);
            fix(&mut m.test_labels);
        }
        if let Some(p) = &mut self.noise.matrix_path {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.seeds;
        let seeds = [s.init1, s.init2, s.noise, s.shuffle];
        for i in 0..seeds.len() {
            for j in i + 1..seeds.len() {
                if seeds[i] == seeds[j] {
                    return Err(CoteachError::Config(
                        "seeds init1, init2, noise and shuffle must be distinct".into(),
                    ));
                }
            }
        }
        if self.network.hidden.contains(&0) {
            return Err(CoteachError::Config("hidden widths must be positive".into()));
        }
        if self.noise.kind == NoiseKind::Custom && self.noise.matrix_path.is_none() {
            return Err(CoteachError::Config("custom noise needs matrix_path".into()));
        }
        if self.noise.kind != NoiseKind::Custom && !(0.0..1.0).contains(&self.noise.tau) {
            return Err(CoteachError::Config(format!(
                "noise tau {} outside [0, 1)",
                self.noise.tau
            )));
        }
        if let DatasetSpec::Mnist(m) = &self.dataset {
            if m.train_limit == Some(0) || m.test_limit == Some(0) {
                return Err(CoteachError::Config("dataset limits must be positive".into()));
            }
        }
        // schedule tau for custom noise is only known after loading the matrix
        self.training_config(self.strategy.tau.unwrap_or(self.noise.tau))?
            .validate()
    }

    pub fn training_config(&self, estimated_tau: f64) -> Result<TrainingConfig> {
        Ok(TrainingConfig {
            strategy: StrategyConfig {
                strategy: self.strategy.name,
                schedule: ScheduleParams {
                    tau: self.strategy.tau.unwrap_or(estimated_tau),
                    e_k: self.strategy.e_k,
                    e_max: self.optimizer.epochs,
                    kind: self.strategy.schedule,
                },
                warmup_epochs: self.strategy.warmup_epochs,
                warmup_mode: self.strategy.warmup_mode,
                batch_size: self.optimizer.batch_size,
                shuffle_seed: self.seeds.shuffle,
            },
            lr: LrSchedule {
                base: self.optimizer.lr,
                decay_start: self.optimizer.decay_start,
            },
            tv_samples: self.eval.tv_samples,
        })
    }

    /// Copy with strategy and trial-specific seeds. Trial 0 is the config
    /// itself; the noise seed never changes.
    pub fn for_cell(&self, strategy: Strategy, trial: usize) -> ExperimentConfig {
        let mut cfg = self.clone();
        cfg.strategy.name = strategy;
        if trial > 0 {
            let mix = |s: u64| epoch_seed(s ^ 0x7472_6961_6c00_0000, trial);
            cfg.seeds.init1 = mix(self.seeds.init1);
            cfg.seeds.init2 = mix(self.seeds.init2);
            cfg.seeds.shuffle = mix(self.seeds.shuffle);
        }
        cfg
    }
}

/// Train/test sets with the training labels already corrupted.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub transition: TransitionMatrix,
    pub empirical_noise_rate: f64,
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let (train, test) = match &cfg.dataset {
        DatasetSpec::Mnist(m) => (
            load_mnist(&m.train_images, &m.train_labels, m.train_limit)?,
            load_mnist(&m.test_images, &m.test_labels, m.test_limit)?,
        ),
        DatasetSpec::Synthetic(s) => {
            let all = gen_synthetic(s.n_per_class, s.num_classes, s.dim, s.spread, s.seed)?;
            split(&all, s.test_fraction, s.seed.wrapping_add(1))?
        }
    };
    let transition = match (&cfg.noise.kind, &cfg.noise.matrix_path) {
        (NoiseKind::Custom, Some(p)) => TransitionMatrix::load(p)?,
        (NoiseKind::Custom, None) => {
            return Err(CoteachError::Config("custom noise needs matrix_path".into()))
        }
        (&kind, _) => TransitionMatrix::build(kind, cfg.noise.tau, train.num_classes())?,
    };
    if transition.num_classes() != train.num_classes() {
        return Err(CoteachError::Config(format!(
            "transition matrix has {} classes, dataset has {}",
            transition.num_classes(),
            train.num_classes()
        )));
    }
    let noisy = corrupt_labels(train.clean_labels(), &transition, cfg.seeds.noise)?;
    let rate = empirical_noise_rate(train.clean_labels(), &noisy)?;
    Ok(PreparedData {
        train: train.with_noisy_labels(noisy)?,
        test,
        transition,
        empirical_noise_rate: rate,
    })
}

/// Per-run summary; accuracies are over the last [`SUMMARY_WINDOW`] epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: Strategy,
    pub trial: usize,
    pub epochs: usize,
    pub empirical_noise_rate: f64,
    pub final_test_acc_1: Option<f64>,
    pub mean_acc_1: Option<f64>,
    pub max_acc_1: Option<f64>,
    pub mean_acc_2: Option<f64>,
    pub max_acc_2: Option<f64>,
    /// Peak single-epoch accuracy of the first network over the whole run.
    pub peak_acc_1: Option<f64>,
    /// Mean TV over the last quarter of the epochs (at least one).
    pub mean_tv_last_quarter: Option<f64>,
    pub mean_purity: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn max(v: &[f64]) -> Option<f64> {
    v.iter().copied().reduce(f64::max)
}

fn tail<T>(v: &[T], n: usize) -> &[T] {
    &v[v.len().saturating_sub(n)..]
}

pub fn summarize(strategy: Strategy, trial: usize, noise_rate: f64, history: &[EpochMetrics]) -> RunSummary {
    let last = tail(history, SUMMARY_WINDOW);
    let acc1: Vec<f64> = last.iter().map(|m| m.test_acc_1).collect();
    let acc2: Vec<f64> = last.iter().filter_map(|m| m.test_acc_2).collect();
    let purity: Vec<f64> = last.iter().filter_map(|m| m.selection_purity).collect();
    let quarter = tail(history, (history.len() / 4).max(1));
    let tv: Vec<f64> = quarter.iter().filter_map(|m| m.mean_tv).collect();
    let all_acc1: Vec<f64> = history.iter().map(|m| m.test_acc_1).collect();
    RunSummary {
        strategy,
        trial,
        epochs: history.len(),
        empirical_noise_rate: noise_rate,
        final_test_acc_1: history.last().map(|m| m.test_acc_1),
        mean_acc_1: mean(&acc1),
        max_acc_1: max(&acc1),
        mean_acc_2: mean(&acc2),
        max_acc_2: max(&acc2),
        peak_acc_1: max(&all_acc1),
        mean_tv_last_quarter: mean(&tv),
        mean_purity: mean(&purity),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-epoch CSV with the fixed header.
pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::with_capacity(64 * (history.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for m in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            m.epoch,
            m.lambda,
            m.test_acc_1,
            opt(m.test_acc_2),
            opt(m.mean_tv),
            opt(m.selection_purity),
            m.skipped_batches,
            m.lr
        );
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CoteachError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CoteachError::io(path, e))
}

fn build_model(cfg: &ExperimentConfig, data: &PreparedData) -> Result<Model> {
    let mut sizes = vec![data.train.dim()];
    sizes.extend_from_slice(&cfg.network.hidden);
    sizes.push(data.train.num_classes());
    let lr = cfg.optimizer.lr;
    Ok(if cfg.strategy.name.uses_pair() {
        Model::Pair(NetworkPair::glorot(&sizes, cfg.seeds.init1, cfg.seeds.init2, lr)?)
    } else {
        Model::Single(Learner::new(DenseNet::glorot(&sizes, cfg.seeds.init1)?, lr))
    })
}

/// Train one configuration on already-prepared data.
pub fn train_prepared(
    cfg: &ExperimentConfig,
    data: &PreparedData,
) -> Result<(Model, Vec<EpochMetrics>)> {
    let training = cfg.training_config(data.transition.noise_rate())?;
    let mut model = build_model(cfg, data)?;
    let history = run_training(&mut model, &data.train, &data.test, &training)?;
    Ok((model, history))
}

/// Train, then write `csv_path`.
pub fn run_prepared(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    trial: usize,
    csv_path: &Path,
) -> Result<RunSummary> {
    let (_, history) = train_prepared(cfg, data)?;
    write_file(csv_path, &metrics_csv(&history))?;
    Ok(summarize(cfg.strategy.name, trial, data.empirical_noise_rate, &history))
}

/// Full pipeline for one config: writes `metrics.csv` and `summary.json`
/// under `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let summary = run_prepared(cfg, &data, 0, &out_dir.join("metrics.csv"))?;
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&out_dir.join("summary.json"), &(json + "\n"))?;
    Ok(summary)
}

/// One row of the combined sweep table: trial means per strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub strategy: Strategy,
    pub trials: usize,
    pub mean_acc: Option<f64>,
    pub max_acc: Option<f64>,
    pub mean_tv: Option<f64>,
    pub mean_purity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Strategy-major, trial-minor.
    pub cells: Vec<RunSummary>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn cells_for(&self, strategy: Strategy) -> impl Iterator<Item = &RunSummary> {
        self.cells.iter().filter(move |c| c.strategy == strategy)
    }
}

pub fn cell_csv_name(strategy: Strategy, trial: usize) -> String {
    format!("{strategy}_trial{trial}.csv")
}

pub fn sweep_table_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("strategy,trials,mean_acc,max_acc,mean_tv,mean_purity\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.strategy,
            r.trials,
            opt(r.mean_acc),
            opt(r.max_acc),
            opt(r.mean_tv),
            opt(r.mean_purity)
        );
    }
    out
}

/// Run every (strategy, trial) cell on the same corrupted data. Up to `jobs`
/// cells run concurrently. The first failure stops new cells from starting;
/// CSVs already written stay on disk.
pub fn run_sweep(
    base: &ExperimentConfig,
    strategies: &[Strategy],
    trials: usize,
    out_dir: &Path,
    jobs: usize,
) -> Result<SweepResult> {
    if strategies.is_empty() || trials == 0 {
        return Err(CoteachError::Config("sweep needs a strategy and a trial".into()));
    }
    base.validate()?;
    let data = prepare_data(base)?;
    let cells: Vec<(Strategy, usize)> = strategies
        .iter()
        .flat_map(|&s| (0..trials).map(move |t| (s, t)))
        .collect();

    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let results: Mutex<Vec<Option<Result<RunSummary>>>> =
        Mutex::new((0..cells.len()).map(|_| None).collect());
    let workers = jobs.clamp(1, cells.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if failed.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(strategy, trial)) = cells.get(i) else {
                    break;
                };
                let cfg = base.for_cell(strategy, trial);
                let res = run_prepared(&cfg, &data, trial, &out_dir.join(cell_csv_name(strategy, trial)));
                if res.is_err() {
                    failed.store(true, Ordering::SeqCst);
                }
                results.lock().unwrap()[i] = Some(res);
            });
        }
    });

    let mut summaries = Vec::with_capacity(cells.len());
    for r in results.into_inner().unwrap().into_iter().flatten() {
        summaries.push(r?);
    }
    let rows = strategies
        .iter()
        .map(|&s| {
            let mine: Vec<&RunSummary> = summaries.iter().filter(|c| c.strategy == s).collect();
            let pick = |f: fn(&RunSummary) -> Option<f64>| {
                mean(&mine.iter().filter_map(|c| f(c)).collect::<Vec<_>>())
            };
            SweepRow {
                strategy: s,
                trials: mine.len(),
                mean_acc: pick(|c| c.mean_acc_1),
                max_acc: pick(|c| c.max_acc_1),
                mean_tv: pick(|c| c.mean_tv_last_quarter),
                mean_purity: pick(|c| c.mean_purity),
            }
        })
        .collect::<Vec<_>>();
    write_file(&out_dir.join("summary.csv"), &sweep_table_csv(&rows))?;
    Ok(SweepResult {
        cells: summaries,
        rows,
    })
}
