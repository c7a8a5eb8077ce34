//! Cross-instance max-pooling, class-weighted cross-entropy, the SGD training
//! loop with step learning-rate decay, and thresholded prediction.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;

use rand::seq::SliceRandom;

use crate::data::{label_frequencies, Dataset};
use crate::error::{Error, Result};
use crate::gnb::{self, GnbConfig, GnbParams, ScoreMatrix};
use crate::graphs::{build_label_graph, top_m_indices, AssignmentGraph, AttributedGraph, Instance, LabelVocab};
use crate::metrics::{self, EvalResult};
use crate::numeric::{sgd_step, Tape, Tensor, Var};
use crate::rng;

/// Clamp applied inside every log of the loss.
pub const LOG_EPS: f64 = 1e-12;

/// Binary annotation of an image over the label vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector(Vec<bool>);

impl LabelVector {
    pub fn new(values: Vec<bool>) -> Self {
        LabelVector(values)
    }

    pub fn from_indices(num_labels: usize, positives: &[usize]) -> Result<Self> {
        let mut y = vec![false; num_labels];
        for c in positives {
            *y.get_mut(*c).ok_or_else(|| {
                Error::Data(format!("label index {c} out of range for {num_labels} labels"))
            })? = true;
        }
        Ok(LabelVector(y))
    }

    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter_map(|(c, y)| y.then_some(c))
    }

    pub fn value(&self, c: usize) -> f64 {
        if self.0[c] {
            1.0
        } else {
            0.0
        }
    }
}

impl Deref for LabelVector {
    type Target = [bool];

    fn deref(&self) -> &[bool] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    /// Fraction of training images annotated with each label.
    pub ratios: Vec<f64>,
    pub beta: f64,
}

impl ClassStats {
    pub fn new(ratios: Vec<f64>, beta: f64) -> Result<Self> {
        if let Some(r) = ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Data(format!("label ratio {r} outside [0, 1]")));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("beta must be ≥ 0, got {beta}")));
        }
        Ok(ClassStats { ratios, beta })
    }
}

/// `w^c = y^c·e^{β(1−r^c)} + (1−y^c)·e^{β·r^c}`.
pub fn class_weights(y: &LabelVector, stats: &ClassStats) -> Result<Vec<f64>> {
    if y.len() != stats.ratios.len() {
        return Err(Error::shape("class weights", &[stats.ratios.len()], &[y.len()]));
    }
    Ok(y.iter()
        .zip(&stats.ratios)
        .map(|(pos, r)| {
            if *pos {
                libm::exp(stats.beta * (1.0 - r))
            } else {
                libm::exp(stats.beta * r)
            }
        })
        .collect())
}

/// Per-class maximum over instances of a score matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub p: Vec<f64>,
    /// Instance holding the maximum for each class (lowest index on ties).
    pub argmax: Vec<usize>,
}

pub fn max_pool_scores(s: &ScoreMatrix) -> Pooled {
    let (m, c) = (s.num_instances(), s.num_labels());
    let mut p = s.row(0).to_vec();
    let mut argmax = vec![0; c];
    for i in 1..m {
        for (k, v) in s.row(i).iter().enumerate() {
            if *v > p[k] {
                p[k] = *v;
                argmax[k] = i;
            }
        }
    }
    Pooled { p, argmax }
}

fn check_loss_inputs(p: &[f64], y: &LabelVector, w: &[f64]) -> Result<()> {
    if p.len() != y.len() || w.len() != y.len() {
        return Err(Error::shape("cross-entropy inputs", &[y.len(), y.len()], &[p.len(), w.len()]));
    }
    Ok(())
}

/// `−Σ_c w^c·[y^c·ln p^c + (1−y^c)·ln(1−p^c)]`, each log argument clamped below at [`LOG_EPS`].
pub fn weighted_bce_loss(p: &[f64], y: &LabelVector, w: &[f64]) -> Result<f64> {
    check_loss_inputs(p, y, w)?;
    let mut loss = 0.0;
    for c in 0..p.len() {
        let yc = y.value(c);
        let pos = libm::log(p[c].max(LOG_EPS));
        let neg = libm::log((1.0 - p[c]).max(LOG_EPS));
        loss -= w[c] * (yc * pos + (1.0 - yc) * neg);
    }
    Ok(loss)
}

/// Unweighted binary cross-entropy, the `β = 0` special case.
pub fn bce_loss(p: &[f64], y: &LabelVector) -> Result<f64> {
    weighted_bce_loss(p, y, &vec![1.0; y.len()])
}

/// Records max-pooling of `(M·C) × 1` scores into a `C × 1` tape value.
pub fn max_pool_on_tape(tape: &mut Tape, graph: &AssignmentGraph, scores: Var) -> Result<Var> {
    tape.max_over_set(scores, &graph.match_by_label)
}

/// Records the weighted cross-entropy of pooled `C × 1` predictions.
pub fn weighted_bce_on_tape(tape: &mut Tape, p: Var, y: &LabelVector, w: &[f64]) -> Result<Var> {
    let c = tape.value(p).rows();
    if y.len() != c || w.len() != c {
        return Err(Error::shape("cross-entropy inputs", &[c, c], &[y.len(), w.len()]));
    }
    let col = |v: Vec<f64>| Tensor::new(vec![c, 1], v);
    let pos_coef = tape.constant(col((0..c).map(|k| -w[k] * y.value(k)).collect())?);
    let neg_coef = tape.constant(col((0..c).map(|k| -w[k] * (1.0 - y.value(k))).collect())?);
    let minus_one = tape.constant(col(vec![-1.0; c])?);
    let one = tape.constant(col(vec![1.0; c])?);

    let log_p = tape.log(p, LOG_EPS);
    let neg_p = tape.mul(p, minus_one)?;
    let one_minus_p = tape.add(neg_p, one)?;
    let log_q = tape.log(one_minus_p, LOG_EPS);
    let a = tape.mul(pos_coef, log_p)?;
    let b = tape.mul(neg_coef, log_q)?;
    let terms = tape.add(a, b)?;
    Ok(tape.sum(terms))
}

/// Tape values of one image's forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ImagePass {
    pub scores: Var,
    pub pooled: Var,
    pub loss: Var,
}

/// Graph → block → max-pool → loss, recorded on `tape`.
pub fn image_loss_on_tape(
    tape: &mut Tape,
    graph: &AssignmentGraph,
    params: &GnbParams,
    y: &LabelVector,
    w: &[f64],
) -> Result<ImagePass> {
    let scores = gnb::forward_on_tape(tape, graph, params)?;
    let pooled = max_pool_on_tape(tape, graph, scores)?;
    let loss = weighted_bce_on_tape(tape, pooled, y, w)?;
    Ok(ImagePass { scores, pooled, loss })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Divisor applied to the learning rate every `lr_period` epochs.
    pub lr_decay: f64,
    pub lr_period: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub beta: f64,
    pub seed: u64,
    pub top_m: usize,
    pub knn_k: usize,
    /// Images whose gradients are averaged before each update.
    pub accumulate: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 90,
            lr: 0.01,
            lr_decay: 10.0,
            lr_period: 30,
            momentum: 0.9,
            weight_decay: 1e-4,
            beta: 0.0,
            seed: 0,
            top_m: 10,
            knn_k: 3,
            accumulate: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr, self.lr_decay];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("learning rate and decay factor must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..).contains(&self.weight_decay) || !(0.0..).contains(&self.beta) {
            return Err(Error::Config("momentum must be in [0, 1); weight decay and beta ≥ 0".into()));
        }
        if self.lr_period == 0 || self.top_m == 0 || self.knn_k == 0 || self.accumulate == 0 {
            return Err(Error::Config("period, top_m, knn_k and accumulate must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn inference(&self) -> InferenceOptions {
        InferenceOptions {
            top_m: self.top_m,
            knn_k: self.knn_k,
            ..InferenceOptions::default()
        }
    }
}

/// `initial · decay^(−⌊epoch / period⌋)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let steps = (epoch / cfg.lr_period) as f64;
    cfg.lr / libm::pow(cfg.lr_decay, steps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    pub val_map: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceOptions {
    pub top_m: usize,
    pub knn_k: usize,
    pub threshold: f64,
    pub top_k: usize,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        InferenceOptions {
            top_m: 10,
            knn_k: 3,
            threshold: 0.5,
            top_k: 3,
        }
    }
}

/// Assignment graph of an image after keeping its `top_m` most confident
/// instances. Also returns the kept instances' original indices.
pub fn image_graph(
    instances: &[Instance],
    label_graph: &AttributedGraph,
    top_m: usize,
    knn_k: usize,
) -> Result<(AssignmentGraph, Vec<usize>)> {
    let kept = top_m_indices(instances, top_m);
    if kept.is_empty() {
        return Err(Error::Contract("image has no instances".into()));
    }
    let selected: Vec<Instance> = kept.iter().map(|i| instances[*i].clone()).collect();
    Ok((AssignmentGraph::build(&selected, label_graph, knn_k)?, kept))
}

fn take_grads(params: &GnbParams) -> Vec<Tensor> {
    params.store.iter().map(|(_, p)| p.grad.clone()).collect()
}

/// Trains a freshly initialized block. See [`train_from`].
pub fn train(
    dataset: &Dataset,
    vocab: &LabelVocab,
    gnb_config: GnbConfig,
    cfg: &TrainConfig,
    validation: Option<&Dataset>,
) -> Result<(GnbParams, Vec<EpochRecord>)> {
    cfg.validate()?;
    let params = GnbParams::init(gnb_config, &mut rng::stream(cfg.seed, rng::STREAM_INIT))?;
    train_from(params, dataset, vocab, cfg, validation, |_, _| Ok(()))
}

/// Runs `cfg.epochs` epochs of per-image SGD starting from `params`.
///
/// Each epoch visits the images in an order shuffled from the run seed and
/// steps the optimizer after every `cfg.accumulate` images with their averaged
/// gradient. `on_epoch` sees every finished epoch, e.g. to write checkpoints.
pub fn train_from(
    mut params: GnbParams,
    dataset: &Dataset,
    vocab: &LabelVocab,
    cfg: &TrainConfig,
    validation: Option<&Dataset>,
    mut on_epoch: impl FnMut(&EpochRecord, &GnbParams) -> Result<()>,
) -> Result<(GnbParams, Vec<EpochRecord>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if dataset.num_labels != vocab.len() {
        return Err(Error::shape("dataset labels vs vocabulary", &[vocab.len()], &[dataset.num_labels]));
    }
    let stats = ClassStats::new(label_frequencies(dataset)?, cfg.beta)?;
    let label_graph = build_label_graph(vocab)?;
    let mut prepared = Vec::with_capacity(dataset.len());
    for r in &dataset.records {
        let (graph, _) = image_graph(&r.instances, &label_graph, cfg.top_m, cfg.knn_k)?;
        prepared.push((graph, class_weights(&r.labels, &stats)?));
    }

    let mut shuffle = rng::stream(cfg.seed, rng::STREAM_SHUFFLE);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut pending: Option<Vec<Tensor>> = None;
    let mut pending_count = 0usize;

    params.store.zero_grad();
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for (step, idx) in order.iter().enumerate() {
            let record = &dataset.records[*idx];
            let (graph, weights) = &prepared[*idx];
            let mut tape = Tape::new();
            let pass = image_loss_on_tape(&mut tape, graph, &params, &record.labels, weights)?;
            let loss = tape.value(pass.loss).data()[0];
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss at epoch {epoch}, image {} (`{}`)",
                    idx, record.id
                )));
            }
            total += loss;
            tape.backward(pass.loss, &mut params.store)?;

            if cfg.accumulate == 1 {
                sgd_step(&mut params.store, lr, cfg.momentum, cfg.weight_decay)?;
                params.store.zero_grad();
                continue;
            }
            match &mut pending {
                Some(acc) => {
                    for (a, (_, p)) in acc.iter_mut().zip(params.store.iter()) {
                        a.add_assign(&p.grad);
                    }
                }
                None => pending = Some(take_grads(&params)),
            }
            pending_count += 1;
            params.store.zero_grad();
            let last = step + 1 == order.len();
            if pending_count == cfg.accumulate || last {
                let acc = pending.take().expect("accumulated gradients");
                let scale = 1.0 / pending_count as f64;
                for (p, mut g) in params.store.iter_mut().zip(acc) {
                    g.data_mut().iter_mut().for_each(|v| *v *= scale);
                    p.grad = g;
                }
                sgd_step(&mut params.store, lr, cfg.momentum, cfg.weight_decay)?;
                params.store.zero_grad();
                pending_count = 0;
            }
        }
        let val_map = match validation {
            Some(v) => Some(evaluate_model(v, vocab, &params, &cfg.inference())?.map),
            None => None,
        };
        let record = EpochRecord {
            epoch,
            mean_loss: total / dataset.len() as f64,
            lr,
            val_map,
        };
        on_epoch(&record, &params)?;
        history.push(record);
    }
    Ok((params, history))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: LabelVector,
    /// Pooled per-label probabilities.
    pub scores: Vec<f64>,
    /// For each label, the index (into the image's full instance list) of the
    /// instance whose matching score was pooled.
    pub responsible: Vec<usize>,
    pub matching: ScoreMatrix,
}

/// Scores one image and thresholds the pooled probabilities (`p > threshold`).
pub fn predict(
    instances: &[Instance],
    label_graph: &AttributedGraph,
    params: &GnbParams,
    opts: &InferenceOptions,
) -> Result<Prediction> {
    let (graph, kept) = image_graph(instances, label_graph, opts.top_m, opts.knn_k)?;
    let s = gnb::forward(&graph, params)?;
    let pooled = max_pool_scores(&s);
    Ok(Prediction {
        labels: LabelVector::new(metrics::threshold_select(&pooled.p, opts.threshold)),
        responsible: pooled.argmax.iter().map(|i| kept[*i]).collect(),
        scores: pooled.p,
        matching: s,
    })
}

/// Predictions for every record of `dataset`, in record order.
pub fn predict_dataset(
    dataset: &Dataset,
    vocab: &LabelVocab,
    params: &GnbParams,
    opts: &InferenceOptions,
) -> Result<Vec<Prediction>> {
    let label_graph = build_label_graph(vocab)?;
    dataset
        .records
        .iter()
        .map(|r| predict(&r.instances, &label_graph, params, opts))
        .collect()
}

pub fn evaluate_model(
    dataset: &Dataset,
    vocab: &LabelVocab,
    params: &GnbParams,
    opts: &InferenceOptions,
) -> Result<EvalResult> {
    let preds = predict_dataset(dataset, vocab, params, opts)?;
    let scores: Vec<Vec<f64>> = preds.into_iter().map(|p| p.scores).collect();
    metrics::evaluate(&scores, &dataset.truths(), opts.threshold, opts.top_k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_picks_column_max() {
        let s = ScoreMatrix::new(3, 2, vec![0.2, 0.5, 0.9, 0.1, 0.4, 0.5]).unwrap();
        let p = max_pool_scores(&s);
        assert_eq!(p.p, vec![0.9, 0.5]);
        assert_eq!(p.argmax, vec![1, 0]);
        let single = ScoreMatrix::new(1, 3, vec![0.1, 0.2, 0.3]).unwrap();
        assert_eq!(max_pool_scores(&single).p, vec![0.1, 0.2, 0.3]);
    }

    #[test]
    fn weights() {
        let y = LabelVector::new(vec![true, false, true]);
        let s0 = ClassStats::new(vec![0.3, 0.5, 0.9], 0.0).unwrap();
        assert_eq!(class_weights(&y, &s0).unwrap(), vec![1.0; 3]);
        let s = ClassStats::new(vec![0.5, 0.5, 1.0], 0.4).unwrap();
        let w = class_weights(&y, &s).unwrap();
        assert!((w[0] - 1.2214027581601699).abs() < 1e-12);
        assert!((w[1] - 1.2214027581601699).abs() < 1e-12);
        assert_eq!(w[2], 1.0);
        assert!(ClassStats::new(vec![1.5], 0.0).is_err());
    }

    #[test]
    fn loss_closed_forms() {
        let y = LabelVector::new(vec![true]);
        let l = weighted_bce_loss(&[0.5], &y, &[1.0]).unwrap();
        assert!((l - core::f64::consts::LN_2).abs() < 1e-15);
        let y = LabelVector::new(vec![true, false]);
        let near = weighted_bce_loss(&[1.0 - 1e-12, 1e-12], &y, &[1.0, 1.0]).unwrap();
        assert!((0.0..=2.0 * 1e-11).contains(&near));
        assert!(weighted_bce_loss(&[0.5], &y, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn tape_loss_matches_direct_loss() {
        let p = [0.3, 0.8, 0.5];
        let y = LabelVector::new(vec![true, false, true]);
        let w = [1.2, 0.7, 2.0];
        let mut tape = Tape::new();
        let pv = tape.constant(Tensor::new(vec![3, 1], p.to_vec()).unwrap());
        let l = weighted_bce_on_tape(&mut tape, pv, &y, &w).unwrap();
        let direct = weighted_bce_loss(&p, &y, &w).unwrap();
        assert!((tape.value(l).data()[0] - direct).abs() < 1e-15);
    }

    #[test]
    fn schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg), 0.01);
        assert_eq!(lr_at(29, &cfg), 0.01);
        assert!((lr_at(30, &cfg) - 0.001).abs() < 1e-18);
        assert!((lr_at(65, &cfg) - 0.0001).abs() < 1e-18);
    }

    #[test]
    fn label_vector_from_indices() {
        let y = LabelVector::from_indices(4, &[0, 2]).unwrap();
        assert_eq!(y.positives().collect::<Vec<_>>(), vec![0, 2]);
        assert!(LabelVector::from_indices(2, &[2]).is_err());
    }
}
