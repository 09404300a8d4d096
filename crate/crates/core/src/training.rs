//! Adam training with split loss routing, threshold selection on the
//! validation window, evaluation, and the ablation and sweep drivers.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, TensorError};
use crate::data::{Dataset, ItemExample, Sample};
use crate::model::{self, ModelConfig, ModelError, ModelParams, ParamKey};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: {message}")]
    Output { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Items whose gradients are averaged per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    /// Stop after this many epochs without a better validation F1.
    pub patience: usize,
    /// Candidate decision thresholds tried on the validation window.
    pub threshold_grid: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            patience: 10,
            threshold_grid: default_grid(),
        }
    }
}

/// Steps of 0.001 below 0.01, then steps of 0.01; scores cluster near the
/// positive rate on imbalanced data.
pub fn default_grid() -> Vec<f64> {
    (1..10)
        .map(|k| k as f64 / 1000.0)
        .chain((1..100).map(|k| k as f64 / 100.0))
        .collect()
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config("epochs and batch_size must be at least 1".into()));
        }
        if self.threshold_grid.iter().any(|t| !(0.0..1.0).contains(t)) {
            return Err(TrainError::Config("threshold_grid values must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Positive-class confusion counts and the derived scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
        let precision = ratio(tp, fp);
        let recall = ratio(tp, fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Metrics {
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1,
        }
    }

    /// Predicts positive when `score > threshold`.
    pub fn at_threshold(scores: &[f64], labels: &[bool], threshold: f64) -> Self {
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (&s, &y) in scores.iter().zip(labels) {
            match (s > threshold, y) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        Metrics::from_counts(tp, fp, fn_, tn)
    }
}

/// Best F1 over `grid`; the earliest threshold wins ties.
pub fn best_threshold(scores: &[f64], labels: &[bool], grid: &[f64]) -> (f64, Metrics) {
    let mut best = (0.5, Metrics::at_threshold(scores, labels, 0.5));
    let mut first = true;
    for &t in grid {
        let m = Metrics::at_threshold(scores, labels, t);
        if first || m.f1 > best.1.f1 {
            best = (t, m);
            first = false;
        }
    }
    best
}

/// Probability that a random positive outscores a random negative; ties count half.
/// `None` unless both classes are present.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut rank_sum, mut pos) = (0.0, 0usize);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum += mid;
                pos += 1;
            }
        }
        i = j + 1;
    }
    let neg = scores.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    Some((rank_sum - (pos * (pos + 1)) as f64 / 2.0) / (pos * neg) as f64)
}

/// Per-parameter first and second moment estimates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: BTreeMap<ParamKey, Vec<f64>>,
    v: BTreeMap<ParamKey, Vec<f64>>,
}

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

pub fn adam_step(params: &mut ModelParams, grads: &BTreeMap<ParamKey, Vec<f64>>, state: &mut AdamState, lr: f64) {
    state.step += 1;
    let bc1 = 1.0 - BETA1.powi(state.step as i32);
    let bc2 = 1.0 - BETA2.powi(state.step as i32);
    for (key, g) in grads {
        let Some(t) = params.tensors.get_mut(key) else { continue };
        let m = state.m.entry(*key).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(*key).or_insert_with(|| vec![0.0; g.len()]);
        for (((w, &gi), mi), vi) in t.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
            *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
            let step = lr * (*mi / bc1) / ((*vi / bc2).sqrt() + ADAM_EPS);
            *w -= step;
        }
    }
}

/// Routed gradients and loss values for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemGradients {
    pub scale_loss: f64,
    pub bce: f64,
    pub grads: BTreeMap<ParamKey, Vec<f64>>,
}

/// `∂Loss_1` for every parameter plus `∂Loss_0` for the GNN-path parameters.
pub fn item_gradients(params: &ModelParams, ex: &ItemExample<'_>) -> Result<ItemGradients> {
    let mut tape = Tape::with_capacity(512);
    let vars = params.load(&mut tape);
    let out = model::forward(&mut tape, &vars, &params.config, ex)?;
    let loss = model::losses(&mut tape, &out, ex)?;
    let grad_of = |tape: &Tape, key: ParamKey| -> Vec<f64> {
        match tape.grad(vars.get(key)) {
            Some(g) => g.data().to_vec(),
            None => vec![0.0; params.tensors[&key].numel()],
        }
    };
    tape.backward(loss.bce)?;
    let mut grads: BTreeMap<ParamKey, Vec<f64>> = params.keys().map(|k| (k, grad_of(&tape, k))).collect();
    let mut scale_loss = 0.0;
    if let Some(scale) = loss.scale {
        scale_loss = tape.value(scale).item();
        tape.zero_grads();
        tape.backward(scale)?;
        for (key, g) in grads.iter_mut().filter(|(k, _)| k.gnn_path()) {
            for (a, b) in g.iter_mut().zip(grad_of(&tape, *key)) {
                *a += b;
            }
        }
    }
    Ok(ItemGradients {
        scale_loss,
        bce: tape.value(loss.bce).item(),
        grads,
    })
}

/// Averages the routed gradients of `batch` and applies one Adam step.
/// Returns the batch-mean scale and classification losses.
pub fn train_step(
    params: &mut ModelParams,
    state: &mut AdamState,
    batch: &[ItemExample<'_>],
    lr: f64,
) -> Result<(f64, f64)> {
    let mut sum: BTreeMap<ParamKey, Vec<f64>> =
        params.tensors.iter().map(|(&k, t)| (k, vec![0.0; t.numel()])).collect();
    let (mut l0, mut l1) = (0.0, 0.0);
    for ex in batch {
        let g = item_gradients(params, ex)?;
        l0 += g.scale_loss;
        l1 += g.bce;
        for (key, acc) in sum.iter_mut() {
            for (a, b) in acc.iter_mut().zip(&g.grads[key]) {
                *a += b;
            }
        }
    }
    let n = batch.len().max(1) as f64;
    for acc in sum.values_mut() {
        acc.iter_mut().for_each(|x| *x /= n);
    }
    adam_step(params, &sum, state, lr);
    Ok((l0 / n, l1 / n))
}

pub fn predict_samples(params: &ModelParams, dataset: &Dataset, samples: &[Sample]) -> Result<Vec<f64>> {
    let steps = params.config.time_steps;
    samples
        .iter()
        .map(|s| Ok(model::predict(params, &dataset.example(s, steps))?))
        .collect()
}

pub fn evaluate(params: &ModelParams, dataset: &Dataset, samples: &[Sample], threshold: f64) -> Result<Metrics> {
    let scores = predict_samples(params, dataset, samples)?;
    let labels: Vec<bool> = samples.iter().map(|s| s.label).collect();
    Ok(Metrics::at_threshold(&scores, &labels, threshold))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_0: f64,
    pub loss_1: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_f1: f64,
    pub val_auc: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation F1.
    pub params: ModelParams,
    pub threshold: f64,
    pub best_epoch: usize,
    pub val: Metrics,
    pub history: Vec<EpochLog>,
}

/// Trains on `dataset.train`, selecting the epoch and threshold on `dataset.val`.
///
/// When the span is too short for a validation window, selection falls back
/// to the training samples.
pub fn train(dataset: &Dataset, model_config: &ModelConfig, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    model_config.validate()?;
    if dataset.train.is_empty() {
        return Err(TrainError::Config("the training split is empty".into()));
    }
    let select = if dataset.val.is_empty() {
        log::warn!("no validation window; selecting on the training split");
        &dataset.train
    } else {
        &dataset.val
    };
    let select_labels: Vec<bool> = select.iter().map(|s| s.label).collect();
    let steps = model_config.time_steps;

    let mut params = ModelParams::init(model_config, dataset.feature_dim, config.seed)?;
    let mut state = AdamState::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005e_ed0f_7a1e);
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();

    let mut best: Option<(ModelParams, f64, usize, Metrics)> = None;
    let mut history = Vec::with_capacity(config.epochs);
    let mut stale = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut l0, mut l1, mut batches) = (0.0, 0.0, 0);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<ItemExample<'_>> = chunk
                .iter()
                .map(|&i| dataset.example(&dataset.train[i], steps))
                .collect();
            let (a, b) = train_step(&mut params, &mut state, &batch, config.learning_rate)?;
            l0 += a;
            l1 += b;
            batches += 1;
        }
        let scores = predict_samples(&params, dataset, select)?;
        let (threshold, val) = best_threshold(&scores, &select_labels, &config.threshold_grid);
        let log = EpochLog {
            epoch,
            loss_0: l0 / batches as f64,
            loss_1: l1 / batches as f64,
            val_precision: val.precision,
            val_recall: val.recall,
            val_f1: val.f1,
            val_auc: auc(&scores, &select_labels).unwrap_or(f64::NAN),
            threshold,
        };
        log::debug!(
            "epoch {epoch}: loss_0 {:.4} loss_1 {:.4} val f1 {:.4} at {threshold}",
            log.loss_0,
            log.loss_1,
            val.f1
        );
        history.push(log);
        if best.as_ref().is_none_or(|b| val.f1 > b.3.f1) {
            best = Some((params.clone(), threshold, epoch, val));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    let (params, threshold, best_epoch, val) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        params,
        threshold,
        best_epoch,
        val,
        history,
    })
}

/// The five ablations plus the full model.
pub const VARIANTS: [&str; 6] = ["full", "-r", "-np", "-nm", "-nc", "-nd"];

pub fn variant_config(base: &ModelConfig, variant: &str) -> Option<ModelConfig> {
    let mut c = base.clone();
    match variant {
        "full" => {}
        "-r" => c.no_graph = true,
        "-np" => c.no_pickgate = true,
        "-nm" => c.no_multitask = true,
        "-nc" => c.no_coupling = true,
        "-nd" => c.no_dynamics = true,
        _ => return None,
    }
    Some(c)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    /// Variant name or swept value.
    pub label: String,
    pub threshold: f64,
    pub best_epoch: usize,
    pub val_f1: f64,
    #[serde(flatten)]
    pub test: Metrics,
}

fn train_and_test(dataset: &Dataset, label: String, model: &ModelConfig, config: &TrainConfig) -> Result<ResultRow> {
    let out = train(dataset, model, config)?;
    let test = if dataset.test.is_empty() {
        out.val
    } else {
        evaluate(&out.params, dataset, &dataset.test, out.threshold)?
    };
    Ok(ResultRow {
        label,
        threshold: out.threshold,
        best_epoch: out.best_epoch,
        val_f1: out.val.f1,
        test,
    })
}

/// Test metrics for every variant, trained with the same seed and settings.
pub fn ablation_matrix(dataset: &Dataset, base: &ModelConfig, config: &TrainConfig) -> Result<Vec<ResultRow>> {
    VARIANTS
        .iter()
        .map(|v| {
            let cfg = variant_config(base, v).expect("known variant");
            train_and_test(dataset, v.to_string(), &cfg, config)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    TimeSteps,
    Layers,
}

impl SweepParam {
    pub fn parse(name: &str) -> Option<SweepParam> {
        match name {
            "time_steps" => Some(SweepParam::TimeSteps),
            "layers" => Some(SweepParam::Layers),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepParam::TimeSteps => "time_steps",
            SweepParam::Layers => "layers",
        }
    }
}

/// Test metrics of the full model for each value of `param`.
pub fn sweep(
    dataset: &Dataset,
    base: &ModelConfig,
    config: &TrainConfig,
    param: SweepParam,
    values: &[usize],
) -> Result<Vec<ResultRow>> {
    values
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            match param {
                SweepParam::TimeSteps => cfg.time_steps = v,
                SweepParam::Layers => cfg.layers = v,
            }
            train_and_test(dataset, v.to_string(), &cfg, config)
        })
        .collect()
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> TrainError + '_ {
    move |e| TrainError::Output {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let err = csv_error(path);
    let mut w = csv::Writer::from_path(path).map_err(&err)?;
    for r in rows {
        w.serialize(r).map_err(&err)?;
    }
    w.flush().map_err(|e| TrainError::Output {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn write_history(path: &Path, history: &[EpochLog]) -> Result<()> {
    write_rows(path, history)
}

/// Flat CSV row; the csv crate cannot serialize flattened structs.
#[derive(Serialize)]
struct ResultLine<'a> {
    label: &'a str,
    precision: f64,
    recall: f64,
    f1: f64,
    threshold: f64,
    best_epoch: usize,
    val_f1: f64,
    tp: usize,
    fp: usize,
    #[serde(rename = "fn")]
    fn_: usize,
    tn: usize,
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let lines: Vec<ResultLine<'_>> = rows
        .iter()
        .map(|r| ResultLine {
            label: &r.label,
            precision: r.test.precision,
            recall: r.test.recall,
            f1: r.test.f1,
            threshold: r.threshold,
            best_epoch: r.best_epoch,
            val_f1: r.val_f1,
            tp: r.test.tp,
            fp: r.test.fp,
            fn_: r.test.fn_,
            tn: r.test.tn,
        })
        .collect();
    write_rows(path, &lines)
}
