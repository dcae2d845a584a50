//! End-to-end flows: calibrated training, interpolated inference,
//! pseudo-labeling, few-shot sampling, evaluation and grid sweeps.
//!
//! Modes:
//!
//! - `knn-only`: the kNN distribution alone.
//! - `model-only`: the classifier trained with plain cross-entropy.
//! - `union-inf`: plain training, then `λ·P_kNN + (1−λ)·P_model` at inference.
//! - `union-all`: leave-one-out kNN priors reweight the training loss, then the
//!   same interpolation at inference.

mod metrics;
mod sweep;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::{precompute_priors, ModulatingFactor, PriorTable};
use crate::embedstore::{normalize_vector, EmbeddingStore, Unlabeled};
use crate::error::{Error, Result};
use crate::knn::{knn_predict, Metric, ProbDist};
use crate::model::{forward, loss_and_grad, optimizer_step, Architecture, ClassifierParams, Example, OptimizerState};

pub use metrics::{evaluate, ClassMetrics, EvalReport};
pub use sweep::{sweep, SweepGrid, SweepResult};

/// Seeds used for repeated few-shot draws unless configured otherwise.
pub const FEW_SHOT_SEEDS: [u64; 3] = [13, 42, 87];
pub const DEFAULT_SEED: u64 = 42;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    KnnOnly,
    ModelOnly,
    UnionInf,
    #[default]
    UnionAll,
}

impl Mode {
    pub fn uses_knn(self) -> bool {
        self != Mode::ModelOnly
    }

    pub fn uses_model(self) -> bool {
        self != Mode::KnnOnly
    }

    pub fn calibrates_training(self) -> bool {
        self == Mode::UnionAll
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::KnnOnly => "knn-only",
            Mode::ModelOnly => "model-only",
            Mode::UnionInf => "union-inf",
            Mode::UnionAll => "union-all",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knn-only" => Ok(Mode::KnnOnly),
            "model-only" => Ok(Mode::ModelOnly),
            "union-inf" => Ok(Mode::UnionInf),
            "union-all" => Ok(Mode::UnionAll),
            other => Err(Error::InvalidParameter(format!("unknown mode {other:?}"))),
        }
    }
}

/// Every hyperparameter of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub k: usize,
    pub tau: f64,
    pub lambda: f64,
    pub metric: Metric,
    pub factor: ModulatingFactor,
    pub mode: Mode,
    pub seed: u64,
    pub architecture: Architecture,
    pub max_steps: u64,
    pub eval_every: u64,
    pub batch_size: usize,
    /// Micro-batches accumulated per optimizer step.
    pub grad_accum: usize,
    pub lr: f64,
    /// Defaults to 10% of `max_steps` when unset.
    pub warmup_steps: Option<u64>,
    pub weight_decay: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            k: 16,
            tau: 1.0,
            lambda: 0.5,
            metric: Metric::Euclidean,
            factor: ModulatingFactor::default(),
            mode: Mode::UnionAll,
            seed: DEFAULT_SEED,
            architecture: Architecture::Linear,
            max_steps: 1000,
            eval_every: 100,
            batch_size: 8,
            grad_accum: 1,
            lr: 1e-2,
            warmup_steps: None,
            weight_decay: 0.0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        self.factor.validate()?;
        if self.max_steps == 0 || self.eval_every == 0 || self.batch_size == 0 || self.grad_accum == 0 {
            return bad("max_steps, eval_every, batch_size and grad_accum must be positive".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("lr and weight_decay must be nonnegative".into());
        }
        if self.warmup_steps.is_some_and(|w| w > self.max_steps) {
            return bad("warmup_steps cannot exceed max_steps".into());
        }
        Ok(())
    }

    pub fn warmup(&self) -> u64 {
        self.warmup_steps.unwrap_or(self.max_steps / 10)
    }
}

/// `λ·p_knn + (1−λ)·p_model`.
pub fn interpolate(p_knn: &ProbDist, p_model: &ProbDist, lambda: f64) -> Result<ProbDist> {
    if p_knn.len() != p_model.len() {
        return Err(Error::ShapeMismatch {
            expected: p_knn.len(),
            found: p_model.len(),
        });
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    if lambda == 0.0 {
        return Ok(p_model.clone());
    }
    if lambda == 1.0 {
        return Ok(p_knn.clone());
    }
    let mixed = p_knn
        .probs()
        .iter()
        .zip(p_model.probs())
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    Ok(ProbDist::from_vec_unchecked(mixed))
}

fn combine(config: &RunConfig, knn: Option<&ProbDist>, model: Option<ProbDist>) -> Result<ProbDist> {
    match (config.mode, knn, model) {
        (Mode::KnnOnly, Some(k), _) => Ok(k.clone()),
        (Mode::ModelOnly, _, Some(m)) => Ok(m),
        (Mode::UnionInf | Mode::UnionAll, Some(k), Some(m)) => interpolate(k, &m, config.lambda),
        _ => unreachable!("predictor inputs are computed from the mode"),
    }
}

fn check_compatible(params: &ClassifierParams, store: &EmbeddingStore) -> Result<()> {
    if params.dim() != store.dim() {
        return Err(Error::ShapeMismatch {
            expected: params.dim(),
            found: store.dim(),
        });
    }
    if params.classes() != store.class_count() {
        return Err(Error::InvalidParameter(format!(
            "model has {} classes but store has {}",
            params.classes(),
            store.class_count()
        )));
    }
    Ok(())
}

fn predict_unit(config: &RunConfig, params: &ClassifierParams, store: &EmbeddingStore, q: &[f32]) -> Result<ProbDist> {
    let knn = if config.mode.uses_knn() {
        Some(knn_predict(store, q, config.k, config.tau, config.metric, None)?)
    } else {
        None
    };
    let model = if config.mode.uses_model() {
        let x: Vec<f64> = q.iter().map(|&v| v as f64).collect();
        Some(forward(params, &x)?.1)
    } else {
        None
    };
    combine(config, knn.as_ref(), model)
}

/// Class distribution for `query` under the configured mode, and its argmax
/// (lowest index on ties). The query is L2-normalized first.
pub fn predict(
    config: &RunConfig,
    params: &ClassifierParams,
    store: &EmbeddingStore,
    query: &[f32],
) -> Result<(ProbDist, usize)> {
    config.validate()?;
    check_compatible(params, store)?;
    if query.len() != store.dim() {
        return Err(Error::ShapeMismatch {
            expected: store.dim(),
            found: query.len(),
        });
    }
    if query.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("query has a non-finite entry".into()));
    }
    let q = normalize_vector(query).ok_or_else(|| Error::InvalidParameter("zero-norm query".into()))?;
    let dist = predict_unit(config, params, store, &q)?;
    let class = dist.argmax();
    Ok((dist, class))
}

/// Predictions for every row of `queries`, whose rows are already unit-norm.
pub fn predict_store(
    config: &RunConfig,
    params: &ClassifierParams,
    store: &EmbeddingStore,
    queries: &EmbeddingStore,
) -> Result<Vec<(ProbDist, usize)>> {
    config.validate()?;
    check_compatible(params, store)?;
    check_compatible(params, queries)?;
    (0..queries.len())
        .into_par_iter()
        .map(|i| {
            let d = predict_unit(config, params, store, queries.row(i))?;
            let c = d.argmax();
            Ok((d, c))
        })
        .collect()
}

/// Evaluates `config` on a labeled split with `store` as the datastore.
pub fn evaluate_split(
    config: &RunConfig,
    params: &ClassifierParams,
    store: &EmbeddingStore,
    split: &EmbeddingStore,
) -> Result<EvalReport> {
    let preds: Vec<usize> = predict_store(config, params, store, split)?
        .into_iter()
        .map(|(_, c)| c)
        .collect();
    let gold: Vec<usize> = split.labels().iter().map(|&l| l as usize).collect();
    evaluate(&preds, &gold, split.class_count())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    /// Mean calibrated loss over the steps since the previous record.
    pub train_loss: f64,
    pub dev_accuracy: f64,
    pub dev_macro_f1: f64,
    /// Learning rate used by the last optimizer step before this record.
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<LogRecord>,
    /// Step of the returned checkpoint.
    pub best_step: u64,
    /// Neighbors actually used at inference, `min(k, |train|)`.
    pub effective_k: usize,
    /// Neighbors actually used for leave-one-out priors, `min(k, |train| − 1)`.
    pub effective_prior_k: usize,
}

impl TrainingLog {
    /// One JSON object per evaluation, newline-terminated.
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("log records serialize") + "\n")
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    /// Checkpoint with the best dev accuracy, earliest on ties.
    pub params: ClassifierParams,
    pub log: TrainingLog,
    pub priors: PriorTable,
}

/// Endless stream of training indices, reshuffled every epoch from `(seed, epoch)`.
struct BatchOrder {
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchOrder {
    fn new(n: usize, seed: u64) -> Self {
        let mut b = BatchOrder {
            seed,
            epoch: 0,
            order: (0..n).collect(),
            cursor: 0,
        };
        b.shuffle();
        b
    }

    fn shuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        // Stream 0 is used for parameter initialization.
        rng.set_stream(self.epoch + 1);
        self.order.sort_unstable();
        self.order.shuffle(&mut rng);
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut batch = Vec::with_capacity(size);
        while batch.len() < size {
            if self.cursor == self.order.len() {
                self.epoch += 1;
                self.cursor = 0;
                self.shuffle();
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }
}

fn check_pair(train: &EmbeddingStore, dev: &EmbeddingStore) -> Result<()> {
    if train.dim() != dev.dim() {
        return Err(Error::ShapeMismatch {
            expected: train.dim(),
            found: dev.dim(),
        });
    }
    if train.class_count() != dev.class_count() {
        return Err(Error::InvalidParameter(format!(
            "train has {} classes but dev has {}",
            train.class_count(),
            dev.class_count()
        )));
    }
    Ok(())
}

/// Trains the classifier on `train` with the calibrated loss when the mode is
/// `union-all` (plain cross-entropy otherwise), evaluating on `dev` every
/// `eval_every` steps and at the final step.
pub fn train_calibrated(config: &RunConfig, train: &EmbeddingStore, dev: &EmbeddingStore) -> Result<TrainedModel> {
    config.validate()?;
    if train.len() < 2 {
        return Err(Error::InvalidParameter("training set needs at least two rows".into()));
    }
    if dev.is_empty() {
        return Err(Error::EmptyStore);
    }
    check_pair(train, dev)?;

    let priors = if config.mode.calibrates_training() {
        precompute_priors(train, config.k, config.tau, config.metric)?
    } else {
        PriorTable::uniform_one(train.len(), config.k, config.tau, config.metric)
    };

    // The datastore is fixed during training, so dev kNN distributions are too.
    let dev_knn: Option<Vec<ProbDist>> = if config.mode.uses_knn() {
        Some(
            (0..dev.len())
                .into_par_iter()
                .map(|i| knn_predict(train, dev.row(i), config.k, config.tau, config.metric, None))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };
    let dev_x: Vec<Vec<f64>> = (0..dev.len()).map(|i| dev.row_f64(i)).collect();
    let dev_gold: Vec<usize> = dev.labels().iter().map(|&l| l as usize).collect();
    let evaluate_dev = |params: &ClassifierParams| -> Result<EvalReport> {
        let preds = (0..dev.len())
            .map(|i| {
                let model = if config.mode.uses_model() {
                    Some(forward(params, &dev_x[i])?.1)
                } else {
                    None
                };
                let knn = dev_knn.as_ref().map(|d| &d[i]);
                Ok(combine(config, knn, model)?.argmax())
            })
            .collect::<Result<Vec<_>>>()?;
        evaluate(&preds, &dev_gold, dev.class_count())
    };

    let train_x: Vec<Vec<f64>> = (0..train.len()).map(|i| train.row_f64(i)).collect();
    let mut params = ClassifierParams::init(config.architecture, train.dim(), train.class_count(), config.seed)?;
    let mut state = OptimizerState::new(
        &params,
        config.lr,
        config.warmup(),
        config.max_steps,
        config.weight_decay,
    );
    let mut order = BatchOrder::new(train.len(), config.seed);

    let mut log = TrainingLog {
        effective_k: config.k.min(train.len()),
        effective_prior_k: config.k.min(train.len() - 1),
        ..TrainingLog::default()
    };
    let mut best: Option<(f64, ClassifierParams)> = None;
    let mut loss_sum = 0.0;
    let mut loss_steps = 0u64;

    for step in 0..config.max_steps {
        let lr = state.lr_at(state.step);
        let mut accumulated: Option<ClassifierParams> = None;
        let mut step_loss = 0.0;
        for _ in 0..config.grad_accum {
            let idx = order.next_batch(config.batch_size);
            let batch: Vec<Example> = idx
                .iter()
                .map(|&i| Example {
                    x: &train_x[i],
                    label: train.label(i) as usize,
                    prior: priors.priors[i],
                })
                .collect();
            let (loss, grads) = loss_and_grad(&params, &batch, config.factor)?;
            step_loss += loss;
            match accumulated.as_mut() {
                None => accumulated = Some(grads),
                Some(acc) => acc
                    .values_mut()
                    .iter_mut()
                    .zip(grads.values())
                    .for_each(|(a, g)| *a += g),
            }
        }
        let mut grads = accumulated.expect("grad_accum >= 1");
        if config.grad_accum > 1 {
            let inv = 1.0 / config.grad_accum as f64;
            grads.values_mut().iter_mut().for_each(|g| *g *= inv);
            step_loss *= inv;
        }
        optimizer_step(&mut state, &mut params, &grads)?;
        loss_sum += step_loss;
        loss_steps += 1;

        let done = step + 1;
        if done % config.eval_every == 0 || done == config.max_steps {
            let report = evaluate_dev(&params)?;
            log.records.push(LogRecord {
                step: done,
                train_loss: loss_sum / loss_steps as f64,
                dev_accuracy: report.accuracy,
                dev_macro_f1: report.macro_f1,
                lr,
            });
            loss_sum = 0.0;
            loss_steps = 0;
            if best.as_ref().is_none_or(|(acc, _)| report.accuracy > *acc) {
                best = Some((report.accuracy, params.clone()));
                log.best_step = done;
            }
        }
    }

    let (_, params) = best.expect("at least one evaluation runs");
    Ok(TrainedModel { params, log, priors })
}

/// A datastore whose labels come from a classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabeledStore {
    pub store: EmbeddingStore,
    /// Largest predicted probability for each row.
    pub confidences: Vec<f64>,
}

impl PseudoLabeledStore {
    /// `<row index><TAB><label><TAB><confidence>` per line.
    pub fn to_tsv(&self) -> String {
        self.store
            .labels()
            .iter()
            .zip(&self.confidences)
            .enumerate()
            .map(|(i, (l, c))| format!("{i}\t{l}\t{c}\n"))
            .collect()
    }
}

/// Parses pseudo-label TSV into `(label, confidence)` pairs in row order.
pub fn parse_pseudo_labels(text: &str) -> Result<Vec<(u32, f64)>> {
    text.lines()
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(row, line)| {
            let bad = |message: String| Error::MalformedRow { row, message };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(bad(format!("expected 3 columns, found {}", cols.len())));
            }
            if cols[0].parse::<usize>().ok() != Some(row) {
                return Err(bad(format!("expected index {row}, found {:?}", cols[0])));
            }
            let label = cols[1].parse().map_err(|_| bad(format!("bad label {:?}", cols[1])))?;
            let conf: f64 = cols[2]
                .parse()
                .map_err(|_| bad(format!("bad confidence {:?}", cols[2])))?;
            if !(0.0..=1.0).contains(&conf) {
                return Err(bad(format!("confidence {conf} outside [0, 1]")));
            }
            Ok((label, conf))
        })
        .collect()
}

/// Labels each row with the classifier's argmax so the rows can serve as a
/// kNN datastore. Rows are L2-normalized first.
pub fn pseudo_label(params: &ClassifierParams, unlabeled: &Unlabeled) -> Result<PseudoLabeledStore> {
    if unlabeled.dim() != params.dim() {
        return Err(Error::ShapeMismatch {
            expected: params.dim(),
            found: unlabeled.dim(),
        });
    }
    let mut vectors = Vec::with_capacity(unlabeled.len() * unlabeled.dim());
    let mut labels = Vec::with_capacity(unlabeled.len());
    let mut confidences = Vec::with_capacity(unlabeled.len());
    for row in 0..unlabeled.len() {
        let unit = normalize_vector(unlabeled.row(row)).ok_or(Error::ZeroNorm { row })?;
        let x: Vec<f64> = unit.iter().map(|&v| v as f64).collect();
        let (_, dist) = forward(params, &x)?;
        let class = dist.argmax();
        labels.push(class as u32);
        confidences.push(dist.probs()[class]);
        vectors.extend_from_slice(&unit);
    }
    let raw = crate::embedstore::RawEmbeddings::new(vectors, unlabeled.dim(), labels, params.classes())?;
    // Rows are already unit-norm; rebuilding keeps construction in one place.
    let store = crate::embedstore::build_store(raw)?;
    Ok(PseudoLabeledStore { store, confidences })
}

/// Indices of exactly `shots` rows per class, drawn deterministically from
/// `seed`, grouped by class in ascending class order.
pub fn sample_k_shot(store: &EmbeddingStore, shots: usize, seed: u64) -> Result<Vec<usize>> {
    if shots == 0 {
        return Err(Error::InvalidParameter("shots must be at least 1".into()));
    }
    let mut by_class = vec![Vec::new(); store.class_count()];
    for (i, &l) in store.labels().iter().enumerate() {
        by_class[l as usize].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = Vec::with_capacity(shots * store.class_count());
    for (class, mut rows) in by_class.into_iter().enumerate() {
        if rows.len() < shots {
            return Err(Error::InvalidParameter(format!(
                "class {class} has {} rows, fewer than {shots} shots",
                rows.len()
            )));
        }
        rows.shuffle(&mut rng);
        rows.truncate(shots);
        rows.sort_unstable();
        picked.extend(rows);
    }
    Ok(picked)
}
