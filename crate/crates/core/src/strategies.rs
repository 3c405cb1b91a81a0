//! Training paradigms as mini-batch epoch procedures.
//!
//! | strategy          | networks | small-loss | disagreement | peer update |
//! |-------------------|----------|------------|--------------|-------------|
//! | `standard`        | 1        |            |              |             |
//! | `mentornet`       | 1        | yes        |              |             |
//! | `decoupling`      | 2        |            | yes          |             |
//! | `coteaching`      | 2        | yes        |              | yes         |
//! | `coteaching_plus` | 2        | yes        | yes          | yes         |
//!
//! Every epoch shuffles the training set with a seed derived from
//! `(shuffle_seed, epoch)`. The trailing partial batch is kept.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{CoteachError, Result};
use crate::metrics::{self, EpochMetrics, PurityCounter};
use crate::nn::{adam_step, argmax_rows, lr_at, per_sample_loss, AdamState, Batch, DenseNet, Matrix};
use crate::selection::{
    lambda_schedule, select_disagreement, select_small_loss, IndexSet, ScheduleParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Standard,
    Mentornet,
    Decoupling,
    Coteaching,
    CoteachingPlus,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Standard,
        Strategy::Mentornet,
        Strategy::Decoupling,
        Strategy::Coteaching,
        Strategy::CoteachingPlus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Standard => "standard",
            Strategy::Mentornet => "mentornet",
            Strategy::Decoupling => "decoupling",
            Strategy::Coteaching => "coteaching",
            Strategy::CoteachingPlus => "coteaching_plus",
        }
    }

    pub fn uses_pair(self) -> bool {
        !matches!(self, Strategy::Standard | Strategy::Mentornet)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = CoteachError;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| CoteachError::Config(format!("unknown strategy `{s}`")))
    }
}

/// What Co-teaching+ runs before the disagreement filter switches on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmupMode {
    Coteaching,
    /// Each network trains on its own small-loss samples.
    ParallelSmallloss,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    pub schedule: ScheduleParams,
    /// Only honoured by `coteaching_plus`.
    pub warmup_epochs: usize,
    pub warmup_mode: WarmupMode,
    pub batch_size: usize,
    pub shuffle_seed: u64,
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.batch_size == 0 {
            return Err(CoteachError::Config("batch size must be at least 1".into()));
        }
        if self.warmup_epochs > self.schedule.e_max {
            return Err(CoteachError::Config(format!(
                "warm-up of {} epochs exceeds E_max = {}",
                self.warmup_epochs, self.schedule.e_max
            )));
        }
        if self.warmup_mode == WarmupMode::None && self.warmup_epochs > 0 {
            return Err(CoteachError::Config(
                "warmup_epochs > 0 needs a warm-up mode".into(),
            ));
        }
        Ok(())
    }
}

/// A network with its own optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Learner {
    pub net: DenseNet,
    pub adam: AdamState,
}

impl Learner {
    pub fn new(net: DenseNet, base_lr: f64) -> Self {
        let adam = AdamState::new(&net, base_lr);
        Learner { net, adam }
    }

    /// One Adam step on the mean loss over `batch`. No-op for an empty batch.
    pub fn update_on(&mut self, batch: &Batch, lr: f64) -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        let (grads, _) = self.net.backward(batch)?;
        adam_step(&mut self.net, &grads, &mut self.adam, lr)
    }
}

/// Two networks with identical architecture and independent initializations.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkPair {
    pub first: Learner,
    pub second: Learner,
}

impl NetworkPair {
    pub fn new(first: Learner, second: Learner) -> Result<Self> {
        let shape = |n: &DenseNet| {
            n.layers()
                .iter()
                .map(|l| (l.in_dim(), l.out_dim(), l.activation()))
                .collect::<Vec<_>>()
        };
        if shape(&first.net) != shape(&second.net) {
            return Err(CoteachError::Config("paired networks differ in architecture".into()));
        }
        Ok(NetworkPair { first, second })
    }

    /// Glorot-initialized pair from two seeds.
    pub fn glorot(sizes: &[usize], seed1: u64, seed2: u64, base_lr: f64) -> Result<Self> {
        NetworkPair::new(
            Learner::new(DenseNet::glorot(sizes, seed1)?, base_lr),
            Learner::new(DenseNet::glorot(sizes, seed2)?, base_lr),
        )
    }

    pub fn swapped(self) -> Self {
        NetworkPair {
            first: self.second,
            second: self.first,
        }
    }
}

/// What `run_training` trains: one network or a pair.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Single(Learner),
    Pair(NetworkPair),
}

impl Model {
    pub fn primary(&self) -> &DenseNet {
        match self {
            Model::Single(l) => &l.net,
            Model::Pair(p) => &p.first.net,
        }
    }
}

/// Per-epoch inputs shared by all epoch procedures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochPlan {
    pub epoch: usize,
    /// Keep fraction λ(e).
    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub shuffle_seed: u64,
}

impl EpochPlan {
    /// Shuffled index batches covering `0..n`; the last one may be short.
    pub fn batches(&self, n: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(self.shuffle_seed, self.epoch));
        order.shuffle(&mut rng);
        order
            .chunks(self.batch_size.max(1))
            .map(<[usize]>::to_vec)
            .collect()
    }
}

/// SplitMix64 finalizer over `(seed, epoch)`.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    let mut z = seed ^ (epoch as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Diagnostics returned by every epoch procedure.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EpochStats {
    pub batches: usize,
    /// Batches where no network was updated.
    pub skipped_batches: usize,
    /// Samples that drove updates of the first and second network.
    pub used: [usize; 2],
    pub purity: PurityCounter,
}

/// Candidate set for the cross-update of Co-teaching+.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateFilter {
    /// Samples on which the two networks' predictions differ.
    Disagreement,
    /// Every sample: reduces Co-teaching+ to Co-teaching.
    AllIndices,
}

/// Result of one cross-update batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrossOutcome {
    pub candidates: IndexSet,
    /// Small-loss picks of the first network; these train the second.
    pub picked_by_first: IndexSet,
    /// Small-loss picks of the second network; these train the first.
    pub picked_by_second: IndexSet,
}

impl CrossOutcome {
    pub fn skipped(&self) -> bool {
        self.candidates.is_empty()
    }
}

fn small_loss_within(probs: &Matrix, labels: &[usize], within: &IndexSet, lambda: f64) -> Result<IndexSet> {
    let losses = per_sample_loss(probs, labels)?;
    let local: Vec<f64> = within.iter().map(|&i| losses[i]).collect();
    Ok(within.compose(&select_small_loss(&local, lambda)?))
}

/// Cross-update on one batch: both networks predict, candidates are
/// filtered, each network picks its small-loss candidates, and each network
/// steps on the peer's picks. An empty candidate set skips the batch.
pub fn cross_update_step(
    pair: &mut NetworkPair,
    batch: &Batch,
    lambda: f64,
    lr: f64,
    filter: CandidateFilter,
) -> Result<CrossOutcome> {
    let p1 = pair.first.net.forward(&batch.features)?;
    let p2 = pair.second.net.forward(&batch.features)?;
    let candidates = match filter {
        CandidateFilter::Disagreement => select_disagreement(&argmax_rows(&p1), &argmax_rows(&p2))?,
        CandidateFilter::AllIndices => IndexSet::all(batch.len()),
    };
    if candidates.is_empty() {
        return Ok(CrossOutcome {
            candidates,
            picked_by_first: IndexSet::empty(),
            picked_by_second: IndexSet::empty(),
        });
    }
    let picked_by_first = small_loss_within(&p1, &batch.labels, &candidates, lambda)?;
    let picked_by_second = small_loss_within(&p2, &batch.labels, &candidates, lambda)?;
    pair.first
        .update_on(&batch.gather(picked_by_second.as_slice()), lr)?;
    pair.second
        .update_on(&batch.gather(picked_by_first.as_slice()), lr)?;
    Ok(CrossOutcome {
        candidates,
        picked_by_first,
        picked_by_second,
    })
}

/// Self-paced small-loss step: the learner trains on its own picks.
pub fn small_loss_step(learner: &mut Learner, batch: &Batch, lambda: f64, lr: f64) -> Result<IndexSet> {
    let probs = learner.net.forward(&batch.features)?;
    let picked = small_loss_within(&probs, &batch.labels, &IndexSet::all(batch.len()), lambda)?;
    learner.update_on(&batch.gather(picked.as_slice()), lr)?;
    Ok(picked)
}

/// Update by disagreement: both networks train on the full disagreement set
/// with their own gradients.
pub fn decoupling_step(pair: &mut NetworkPair, batch: &Batch, lr: f64) -> Result<IndexSet> {
    let pred1 = pair.first.net.predict(&batch.features)?;
    let pred2 = pair.second.net.predict(&batch.features)?;
    let disagreement = select_disagreement(&pred1, &pred2)?;
    if !disagreement.is_empty() {
        let sub = batch.gather(disagreement.as_slice());
        pair.first.update_on(&sub, lr)?;
        pair.second.update_on(&sub, lr)?;
    }
    Ok(disagreement)
}

struct EpochBatch {
    batch: Batch,
    clean_mask: Vec<bool>,
}

fn epoch_batches(train: &LabeledDataset, plan: &EpochPlan) -> Result<Vec<EpochBatch>> {
    let mask = train.clean_mask();
    plan.batches(train.len())
        .into_iter()
        .map(|idx| {
            Ok(EpochBatch {
                clean_mask: idx.iter().map(|&i| mask[i]).collect(),
                batch: train.noisy_batch(&idx)?,
            })
        })
        .collect()
}

fn check_plan(plan: &EpochPlan) -> Result<()> {
    if plan.batch_size == 0 {
        return Err(CoteachError::Config("batch size must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&plan.lambda) {
        return Err(CoteachError::Input(format!("lambda {} outside [0, 1]", plan.lambda)));
    }
    Ok(())
}

pub fn standard_epoch(learner: &mut Learner, train: &LabeledDataset, plan: &EpochPlan) -> Result<EpochStats> {
    check_plan(plan)?;
    let mut stats = EpochStats::default();
    for eb in epoch_batches(train, plan)? {
        learner.update_on(&eb.batch, plan.lr)?;
        stats.batches += 1;
        stats.used[0] += eb.batch.len();
        stats
            .purity
            .record(&IndexSet::all(eb.batch.len()), &eb.clean_mask);
    }
    Ok(stats)
}

pub fn mentornet_epoch(learner: &mut Learner, train: &LabeledDataset, plan: &EpochPlan) -> Result<EpochStats> {
    check_plan(plan)?;
    let mut stats = EpochStats::default();
    for eb in epoch_batches(train, plan)? {
        let picked = small_loss_step(learner, &eb.batch, plan.lambda, plan.lr)?;
        stats.batches += 1;
        if picked.is_empty() {
            stats.skipped_batches += 1;
        }
        stats.used[0] += picked.len();
        stats.purity.record(&picked, &eb.clean_mask);
    }
    Ok(stats)
}

/// Both networks run [`small_loss_step`] independently on the same batches.
pub fn parallel_small_loss_epoch(
    pair: &mut NetworkPair,
    train: &LabeledDataset,
    plan: &EpochPlan,
) -> Result<EpochStats> {
    check_plan(plan)?;
    let mut stats = EpochStats::default();
    for eb in epoch_batches(train, plan)? {
        let a = small_loss_step(&mut pair.first, &eb.batch, plan.lambda, plan.lr)?;
        let b = small_loss_step(&mut pair.second, &eb.batch, plan.lambda, plan.lr)?;
        stats.batches += 1;
        if a.is_empty() && b.is_empty() {
            stats.skipped_batches += 1;
        }
        stats.used[0] += a.len();
        stats.used[1] += b.len();
        stats.purity.record(&a, &eb.clean_mask);
        stats.purity.record(&b, &eb.clean_mask);
    }
    Ok(stats)
}

pub fn decoupling_epoch(pair: &mut NetworkPair, train: &LabeledDataset, plan: &EpochPlan) -> Result<EpochStats> {
    check_plan(plan)?;
    let mut stats = EpochStats::default();
    for eb in epoch_batches(train, plan)? {
        let d = decoupling_step(pair, &eb.batch, plan.lr)?;
        stats.batches += 1;
        if d.is_empty() {
            stats.skipped_batches += 1;
        }
        stats.used[0] += d.len();
        stats.used[1] += d.len();
        stats.purity.record(&d, &eb.clean_mask);
        stats.purity.record(&d, &eb.clean_mask);
    }
    Ok(stats)
}

fn cross_update_epoch(
    pair: &mut NetworkPair,
    train: &LabeledDataset,
    plan: &EpochPlan,
    filter: CandidateFilter,
) -> Result<EpochStats> {
    check_plan(plan)?;
    let mut stats = EpochStats::default();
    for eb in epoch_batches(train, plan)? {
        let out = cross_update_step(pair, &eb.batch, plan.lambda, plan.lr, filter)?;
        stats.batches += 1;
        if out.skipped() {
            stats.skipped_batches += 1;
        }
        stats.used[0] += out.picked_by_second.len();
        stats.used[1] += out.picked_by_first.len();
        stats.purity.record(&out.picked_by_first, &eb.clean_mask);
        stats.purity.record(&out.picked_by_second, &eb.clean_mask);
    }
    Ok(stats)
}

pub fn coteaching_epoch(pair: &mut NetworkPair, train: &LabeledDataset, plan: &EpochPlan) -> Result<EpochStats> {
    cross_update_epoch(pair, train, plan, CandidateFilter::AllIndices)
}

pub fn coteaching_plus_epoch(pair: &mut NetworkPair, train: &LabeledDataset, plan: &EpochPlan) -> Result<EpochStats> {
    cross_update_epoch(pair, train, plan, CandidateFilter::Disagreement)
}

/// Co-teaching+ with an explicit candidate filter. `AllIndices` removes the
/// disagreement step.
pub fn coteaching_plus_epoch_with_filter(
    pair: &mut NetworkPair,
    train: &LabeledDataset,
    plan: &EpochPlan,
    filter: CandidateFilter,
) -> Result<EpochStats> {
    cross_update_epoch(pair, train, plan, filter)
}

/// Learning-rate schedule: constant, then linear decay to zero at the last epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub decay_start: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub strategy: StrategyConfig,
    pub lr: LrSchedule,
    /// Leading test rows used for the between-network total variation.
    pub tv_samples: usize,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        if !(self.lr.base > 0.0 && self.lr.base.is_finite()) {
            return Err(CoteachError::Config(format!(
                "learning rate {} must be positive",
                self.lr.base
            )));
        }
        if self.tv_samples == 0 {
            return Err(CoteachError::Config("tv_samples must be positive".into()));
        }
        Ok(())
    }

    pub fn plan(&self, epoch: usize) -> EpochPlan {
        let s = &self.strategy;
        EpochPlan {
            epoch,
            lambda: lambda_schedule(epoch, &s.schedule),
            lr: lr_at(epoch, self.lr.base, self.lr.decay_start, s.schedule.e_max),
            batch_size: s.batch_size,
            shuffle_seed: s.shuffle_seed,
        }
    }
}

/// One epoch of the configured strategy, with Co-teaching+ warm-up dispatch.
pub fn run_epoch(
    model: &mut Model,
    train: &LabeledDataset,
    cfg: &StrategyConfig,
    plan: &EpochPlan,
) -> Result<EpochStats> {
    match (cfg.strategy, model) {
        (Strategy::Standard, Model::Single(l)) => standard_epoch(l, train, plan),
        (Strategy::Mentornet, Model::Single(l)) => mentornet_epoch(l, train, plan),
        (Strategy::Decoupling, Model::Pair(p)) => decoupling_epoch(p, train, plan),
        (Strategy::Coteaching, Model::Pair(p)) => coteaching_epoch(p, train, plan),
        (Strategy::CoteachingPlus, Model::Pair(p)) => {
            if plan.epoch < cfg.warmup_epochs {
                match cfg.warmup_mode {
                    WarmupMode::Coteaching => coteaching_epoch(p, train, plan),
                    WarmupMode::ParallelSmallloss => parallel_small_loss_epoch(p, train, plan),
                    WarmupMode::None => coteaching_plus_epoch(p, train, plan),
                }
            } else {
                coteaching_plus_epoch(p, train, plan)
            }
        }
        (s, _) => Err(CoteachError::Config(format!(
            "strategy `{s}` needs {}",
            if s.uses_pair() { "a network pair" } else { "a single network" }
        ))),
    }
}

/// Train for `E_max` epochs, evaluating after each one.
pub fn run_training(
    model: &mut Model,
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &TrainingConfig,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    let strategy = cfg.strategy.strategy;
    if strategy.uses_pair() != matches!(model, Model::Pair(_)) {
        return Err(CoteachError::Config(format!(
            "strategy `{strategy}` got the wrong number of networks"
        )));
    }
    if train.noisy_labels().is_none() {
        return Err(CoteachError::Config("training set has no noisy labels".into()));
    }
    if test.is_empty() {
        return Err(CoteachError::Input("empty test set".into()));
    }
    let input_dim = model.primary().input_dim();
    if train.dim() != input_dim || test.dim() != input_dim {
        return Err(CoteachError::Config(format!(
            "datasets have {} / {} features, network expects {input_dim}",
            train.dim(),
            test.dim()
        )));
    }
    let tv_rows = cfg.tv_samples.min(test.len());
    let tv_features = test.features().slice_rows(0, tv_rows);

    let mut history = Vec::with_capacity(cfg.strategy.schedule.e_max);
    for epoch in 0..cfg.strategy.schedule.e_max {
        let plan = cfg.plan(epoch);
        let stats = run_epoch(model, train, &cfg.strategy, &plan)?;
        let purity = stats.purity.purity();
        let (test_acc_1, test_acc_2, mean_tv) = match &*model {
            Model::Single(l) => (metrics::test_accuracy(&l.net, test)?, None, None),
            Model::Pair(p) => {
                let tv = metrics::total_variation(
                    &metrics::predict_proba(&p.first.net, &tv_features)?,
                    &metrics::predict_proba(&p.second.net, &tv_features)?,
                )?;
                (
                    metrics::test_accuracy(&p.first.net, test)?,
                    Some(metrics::test_accuracy(&p.second.net, test)?),
                    Some(tv),
                )
            }
        };
        history.push(EpochMetrics {
            epoch,
            lambda: plan.lambda,
            lr: plan.lr,
            test_acc_1,
            test_acc_2,
            mean_tv,
            selection_purity: Some(purity.value),
            purity_empty: purity.empty,
            skipped_batches: stats.skipped_batches,
        });
    }
    Ok(history)
}
