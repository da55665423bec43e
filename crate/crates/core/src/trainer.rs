//! Mini-batch training with a plateau learning-rate schedule and, for the
//! boundary loss, periodic grid search over the boundary weight.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{threshold, BinaryMap, ProbMap};
use crate::losses::{LossParams, TrainLoss};
use crate::metrics::{self, ConfusionCounts, DistanceMode};
use crate::nnet::{self, AdamConfig, Architecture, ModelParams, OptState, ParamGrads};
use crate::synthgen::SynthSample;

/// Distance threshold of the logged boundary F1.
pub const VAL_THETA_DIST: f64 = 3.0;
/// Binarization threshold for validation metrics.
pub const VAL_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub image: ProbMap,
    pub mask: BinaryMap,
}

impl From<SynthSample> for Example {
    fn from(s: SynthSample) -> Self {
        Example {
            image: s.image,
            mask: s.mask,
        }
    }
}

impl From<&SynthSample> for Example {
    fn from(s: &SynthSample) -> Self {
        Example {
            image: s.image.clone(),
            mask: s.mask.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSchedule {
    pub initial: f64,
    /// Epochs without a new lowest validation loss before decaying.
    pub patience: usize,
    pub factor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            initial: 3e-3,
            patience: 10,
            factor: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightSchedule {
    /// Epochs trained with `w = 0` before the first search.
    pub warmup_epochs: usize,
    /// Epochs between searches.
    pub search_period: usize,
    pub w_grid: Vec<f64>,
    /// Epochs each candidate weight is trained for during a search.
    pub search_epochs: usize,
}

impl Default for WeightSchedule {
    fn default() -> Self {
        WeightSchedule {
            warmup_epochs: 8,
            search_period: 30,
            w_grid: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            search_epochs: 2,
        }
    }
}

impl WeightSchedule {
    fn is_search_point(&self, completed: usize) -> bool {
        completed >= self.warmup_epochs && (completed - self.warmup_epochs) % self.search_period == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: TrainLoss,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: LrSchedule,
    pub loss_params: LossParams,
    pub schedule: WeightSchedule,
    pub architecture: Architecture,
    pub adam: AdamConfig,
    /// Reshuffle the training order every epoch (seeded).
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: TrainLoss::BceIou,
            epochs: 40,
            batch_size: 8,
            lr: LrSchedule::default(),
            loss_params: LossParams::default(),
            schedule: WeightSchedule::default(),
            architecture: Architecture::default(),
            adam: AdamConfig::default(),
            shuffle: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::param("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be at least 1"));
        }
        if !(self.lr.initial > 0.0 && self.lr.initial.is_finite()) {
            return Err(Error::param("lr.initial", format!("{} must be positive", self.lr.initial)));
        }
        if !(self.lr.factor >= 1.0 && self.lr.factor.is_finite()) {
            return Err(Error::param("lr.factor", format!("{} must be >= 1", self.lr.factor)));
        }
        if self.lr.patience == 0 {
            return Err(Error::param("lr.patience", "must be at least 1"));
        }
        if self.schedule.search_period == 0 {
            return Err(Error::param("schedule.search_period", "must be at least 1"));
        }
        if self.schedule.search_epochs == 0 {
            return Err(Error::param("schedule.search_epochs", "must be at least 1"));
        }
        if self.loss.uses_boundary_weight() && self.schedule.w_grid.is_empty() {
            return Err(Error::param("schedule.w_grid", "must not be empty"));
        }
        if let Some(w) = self.schedule.w_grid.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::param("schedule.w_grid", format!("{w} is outside [0, 1]")));
        }
        self.loss_params.validate()?;
        self.architecture.validate()
    }
}

/// Metrics logged after every completed epoch.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub loss: f64,
    /// Mean loss over the validation set after the epoch, at the epoch's `w`.
    pub val_loss: f64,
    pub iou: f64,
    pub bf1: f64,
    pub w: f64,
    pub lr: f64,
}

/// Validation metrics of a model.
#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct Validation {
    /// IoU of the confusion counts summed over the validation set.
    pub iou: f64,
    /// Mean per-image boundary F1.
    pub bf1: f64,
    pub counts: ConfusionCounts,
}

pub fn validate(params: &ModelParams, val: &[Example]) -> Result<Validation> {
    validate_with_loss(params, val, None).map(|(v, _)| v)
}

/// Validation metrics, plus the mean of `loss` at weight `w` if given.
fn validate_with_loss(
    params: &ModelParams,
    val: &[Example],
    loss: Option<(TrainLoss, f64, &LossParams)>,
) -> Result<(Validation, f64)> {
    if val.is_empty() {
        return Err(Error::param("validation set", "must not be empty"));
    }
    let per_image: Vec<(ConfusionCounts, f64, f64)> = val
        .par_iter()
        .map(|ex| {
            let (out, _) = nnet::forward(params, &ex.image)?;
            let l = match loss {
                Some((kind, w, lp)) => kind.evaluate(&out, &ex.mask, w, lp)?.value,
                None => 0.0,
            };
            let pred = threshold(&out, VAL_THRESHOLD)?;
            let c = metrics::confusion(&pred, &ex.mask)?;
            let b = metrics::exact_bf1(&pred, &ex.mask, VAL_THETA_DIST, DistanceMode::Euclidean)?;
            Ok((c, b.bf1, l))
        })
        .collect::<Result<_>>()?;
    let counts: ConfusionCounts = per_image.iter().map(|(c, _, _)| *c).sum();
    let n = val.len() as f64;
    let bf1 = per_image.iter().map(|(_, b, _)| b).sum::<f64>() / n;
    let mean_loss = per_image.iter().map(|(_, _, l)| l).sum::<f64>() / n;
    Ok((
        Validation {
            iou: metrics::iou(&counts),
            bf1,
            counts,
        },
        mean_loss,
    ))
}

/// Everything that evolves during training; cloned wholesale for search branches.
#[derive(Clone, Debug)]
struct TrainState {
    params: ModelParams,
    opt: OptState,
    lr: f64,
    w: f64,
    epochs_done: usize,
    /// Lowest validation loss since the objective last changed.
    lowest_val_loss: Option<f64>,
    since_lowest: usize,
    best: Option<(EpochRecord, ModelParams)>,
    records: Vec<EpochRecord>,
}

impl TrainState {
    fn new(cfg: &TrainConfig) -> Self {
        let params = ModelParams::init(&cfg.architecture, cfg.seed);
        TrainState {
            opt: OptState::new(&params),
            params,
            lr: cfg.lr.initial,
            w: 0.0,
            epochs_done: 0,
            lowest_val_loss: None,
            since_lowest: 0,
            best: None,
            records: Vec::new(),
        }
    }
}

fn epoch_order(cfg: &TrainConfig, n: usize, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if cfg.shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
    }
    order
}

fn run_epoch(state: &mut TrainState, cfg: &TrainConfig, train: &[Example], val: &[Example]) -> Result<()> {
    let epoch = state.epochs_done + 1;
    let order = epoch_order(cfg, train.len(), epoch);
    let mut loss_sum = 0.0;
    for batch in order.chunks(cfg.batch_size) {
        let per_sample: Vec<(f64, ParamGrads)> = batch
            .par_iter()
            .map(|&i| {
                let ex = &train[i];
                let (out, cache) = nnet::forward(&state.params, &ex.image)?;
                let l = cfg.loss.evaluate(&out, &ex.mask, state.w, &cfg.loss_params)?;
                if !l.value.is_finite() || l.grad.values().iter().any(|g| !g.is_finite()) {
                    return Err(Error::NonFiniteLoss { epoch, sample: i });
                }
                Ok((l.value, nnet::backward(&state.params, &cache, &l.grad)?))
            })
            .collect::<Result<_>>()?;
        let mut total = ParamGrads::zeros_like(&state.params);
        let scale = 1.0 / batch.len() as f64;
        for (value, g) in &per_sample {
            loss_sum += value;
            total.add_scaled(g, scale);
        }
        nnet::adam_step(&mut state.params, &total, &mut state.opt, state.lr, &cfg.adam)?;
    }
    let (v, val_loss) = validate_with_loss(&state.params, val, Some((cfg.loss, state.w, &cfg.loss_params)))?;
    let record = EpochRecord {
        epoch,
        loss: loss_sum / train.len() as f64,
        val_loss,
        iou: v.iou,
        bf1: v.bf1,
        w: state.w,
        lr: state.lr,
    };
    state.records.push(record);
    state.epochs_done = epoch;
    if state.best.as_ref().is_none_or(|(b, _)| record.iou > b.iou) {
        state.best = Some((record, state.params.clone()));
    }
    if state.lowest_val_loss.is_none_or(|l| val_loss < l) {
        state.lowest_val_loss = Some(val_loss);
        state.since_lowest = 0;
    } else {
        state.since_lowest += 1;
        if state.since_lowest >= cfg.lr.patience {
            state.lr /= cfg.lr.factor;
            state.since_lowest = 0;
        }
    }
    Ok(())
}

/// One candidate of a weight search.
#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct Candidate {
    pub w: f64,
    /// Validation IoU after the branch; `None` if the branch diverged.
    pub iou: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub w: f64,
    pub candidates: Vec<Candidate>,
}

/// Train a copy of `state` for `epochs` epochs with every weight in `grid`
/// and keep the branch with the best validation IoU (ties go to the smaller
/// weight). Diverged branches are disqualified.
fn weight_search(
    state: &TrainState,
    cfg: &TrainConfig,
    train: &[Example],
    val: &[Example],
    grid: &[f64],
    epochs: usize,
) -> Result<(SearchOutcome, TrainState)> {
    if grid.is_empty() {
        return Err(Error::param("w_grid", "must not be empty"));
    }
    let branches: Vec<Result<TrainState>> = grid
        .par_iter()
        .map(|&w| {
            let mut branch = state.clone();
            branch.w = w;
            // Losses at different weights are not comparable.
            branch.lowest_val_loss = None;
            branch.since_lowest = 0;
            for _ in 0..epochs {
                run_epoch(&mut branch, cfg, train, val)?;
            }
            Ok(branch)
        })
        .collect();
    let mut candidates = Vec::with_capacity(grid.len());
    let mut winner: Option<(usize, f64)> = None;
    let mut first_error = None;
    for (k, (b, &w)) in branches.iter().zip(grid).enumerate() {
        let iou = match b {
            Ok(b) => b.records.last().map(|r| r.iou).filter(|v| v.is_finite()),
            Err(e) => {
                if first_error.is_none() && !matches!(e, Error::NonFiniteLoss { .. }) {
                    first_error = Some(k);
                }
                None
            }
        };
        candidates.push(Candidate { w, iou });
        if let Some(v) = iou {
            let better = match winner {
                None => true,
                Some((j, best)) => v > best || (v == best && w < grid[j]),
            };
            if better {
                winner = Some((k, v));
            }
        }
    }
    if let Some(k) = first_error {
        return Err(branches.into_iter().nth(k).unwrap().unwrap_err());
    }
    let Some((k, _)) = winner else {
        // Every branch diverged: report the first divergence.
        return Err(branches.into_iter().find_map(|b| b.err()).expect("all branches failed"));
    };
    let state = branches.into_iter().nth(k).unwrap()?;
    Ok((
        SearchOutcome {
            w: grid[k],
            candidates,
        },
        state,
    ))
}

/// Result of a full training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation IoU.
    pub params: ModelParams,
    pub best: EpochRecord,
    pub records: Vec<EpochRecord>,
    /// Weight searches in the order they ran, with the epoch count before each.
    pub searches: Vec<(usize, SearchOutcome)>,
}

pub fn train(cfg: &TrainConfig, train: &[Example], val: &[Example]) -> Result<TrainOutcome> {
    train_observed(cfg, train, val, |_| {})
}

/// [`train`], calling `on_epoch` for every epoch that enters the log.
pub fn train_observed(
    cfg: &TrainConfig,
    train: &[Example],
    val: &[Example],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::param("training set", "must not be empty"));
    }
    if val.is_empty() {
        return Err(Error::param("validation set", "must not be empty"));
    }
    let shape = train[0].image.shape();
    for ex in train.iter().chain(val) {
        shape.ensure_same(ex.image.shape())?;
        shape.ensure_same(ex.mask.shape())?;
    }
    if shape.height % 4 != 0 || shape.width % 4 != 0 {
        return Err(Error::param("image", format!("size {shape} must be divisible by 4")));
    }

    let mut state = TrainState::new(cfg);
    let mut searches = Vec::new();
    while state.epochs_done < cfg.epochs {
        let logged = state.records.len();
        if cfg.loss.uses_boundary_weight() && cfg.schedule.is_search_point(state.epochs_done) {
            let epochs = cfg.schedule.search_epochs.min(cfg.epochs - state.epochs_done);
            let before = state.epochs_done;
            let (outcome, winner) = weight_search(&state, cfg, train, val, &cfg.schedule.w_grid, epochs)?;
            state = winner;
            searches.push((before, outcome));
        } else {
            run_epoch(&mut state, cfg, train, val)?;
        }
        state.records[logged..].iter().for_each(&mut on_epoch);
    }
    let (best, params) = state.best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        params,
        best,
        records: state.records,
        searches,
    })
}

/// One row of the loss comparison table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub loss: TrainLoss,
    pub iou: f64,
    pub bf1: f64,
}

impl ResultRow {
    pub fn from_outcome(loss: TrainLoss, outcome: &TrainOutcome) -> Self {
        ResultRow {
            loss,
            iou: outcome.best.iou,
            bf1: outcome.best.bf1,
        }
    }
}

/// Train `base` once per loss on the same data and seed.
pub fn compare_losses(
    base: &TrainConfig,
    losses: &[TrainLoss],
    train_set: &[Example],
    val: &[Example],
) -> Result<Vec<(ResultRow, TrainOutcome)>> {
    compare_losses_observed(base, losses, train_set, val, |_, _| {})
}

/// [`compare_losses`], reporting each logged epoch together with its loss.
pub fn compare_losses_observed(
    base: &TrainConfig,
    losses: &[TrainLoss],
    train_set: &[Example],
    val: &[Example],
    mut on_epoch: impl FnMut(TrainLoss, &EpochRecord),
) -> Result<Vec<(ResultRow, TrainOutcome)>> {
    if losses.is_empty() {
        return Err(Error::param("losses", "must not be empty"));
    }
    losses
        .iter()
        .map(|&loss| {
            let cfg = TrainConfig {
                loss,
                ..base.clone()
            };
            let outcome = train_observed(&cfg, train_set, val, |r| on_epoch(loss, r))?;
            Ok((ResultRow::from_outcome(loss, &outcome), outcome))
        })
        .collect()
}

pub const CURVES_HEADER: &str = "epoch,loss,iou,bf1,w,lr";
pub const RESULTS_HEADER: &str = "loss,iou,bf1";

pub fn curves_csv(records: &[EpochRecord]) -> String {
    let mut s = format!("{CURVES_HEADER}\n");
    for r in records {
        writeln!(s, "{},{},{},{},{},{}", r.epoch, r.loss, r.iou, r.bf1, r.w, r.lr).unwrap();
    }
    s
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut s = format!("{RESULTS_HEADER}\n");
    for r in rows {
        writeln!(s, "{},{},{}", r.loss, r.iou, r.bf1).unwrap();
    }
    s
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Write `curves.csv`, `results.csv` and `checkpoint.bin` for one run.
pub fn write_run(dir: impl AsRef<Path>, loss: TrainLoss, outcome: &TrainOutcome) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("curves.csv"), &curves_csv(&outcome.records))?;
    write_file(
        &dir.join("results.csv"),
        &results_csv(&[ResultRow::from_outcome(loss, outcome)]),
    )?;
    nnet::save_checkpoint(&outcome.params, dir.join("checkpoint.bin"))
}

/// Per-loss subdirectories plus a top-level `results.csv`.
pub fn write_comparison(dir: impl AsRef<Path>, runs: &[(ResultRow, TrainOutcome)]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (row, outcome) in runs {
        let sub = dir.join(row.loss.name());
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        write_file(&sub.join("curves.csv"), &curves_csv(&outcome.records))?;
        nnet::save_checkpoint(&outcome.params, sub.join("checkpoint.bin"))?;
    }
    let rows: Vec<ResultRow> = runs.iter().map(|(r, _)| r.clone()).collect();
    write_file(&dir.join("results.csv"), &results_csv(&rows))
}
