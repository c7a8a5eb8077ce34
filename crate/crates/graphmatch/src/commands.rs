//! Subcommand bodies. Each takes a resolved [`RunConfig`] and an output
//! directory, writes its artifacts there and returns what it computed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use graphmatch_core::data::{synth_generate, Dataset, SynthOutput};
use graphmatch_core::gnb::GnbParams;
use graphmatch_core::graphs::{build_label_graph, AssignmentGraph, BBox, Instance, LabelVocab};
use graphmatch_core::metrics::EvalResult;
use graphmatch_core::numeric::{finite_difference_grad, relative_error, Tape, Tensor};
use graphmatch_core::rng;
use graphmatch_core::training::{
    self, class_weights, image_loss_on_tape, ClassStats, EpochRecord, LabelVector, Prediction,
};
use rand::Rng as _;
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::dataset::{load_dataset, save_dataset};
use crate::embeddings::{load_embeddings, save_embeddings};
use crate::error::{self, Error, Result};
use crate::report;

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const MODEL_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const REPORT_FILE: &str = "eval.txt";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const GRADCHECK_FILE: &str = "gradcheck.txt";

fn load_vocab(cfg: &RunConfig) -> Result<LabelVocab> {
    let path = cfg.require("data.embeddings", &cfg.embeddings)?;
    let names = (!cfg.labels.is_empty()).then_some(cfg.labels.as_slice());
    Ok(load_embeddings(path, names)?.vocab)
}

/// Checkpoint, vocabulary and the dataset under `data.test`, checked for
/// compatibility. The checkpoint is read first.
fn load_scoring_inputs(cfg: &RunConfig) -> Result<(GnbParams, LabelVocab, Dataset)> {
    let path = cfg.require("checkpoint", &cfg.checkpoint)?;
    let params = load_checkpoint(path)?;
    let vocab = load_vocab(cfg)?;
    let data = load_dataset(cfg.require("data.test", &cfg.test_data)?, vocab.len())?;
    check_compatible(&params, &vocab, &data, path)?;
    Ok((params, vocab, data))
}

fn check_compatible(params: &GnbParams, vocab: &LabelVocab, data: &Dataset, path: &Path) -> Result<()> {
    let c = &params.config;
    if c.embed_dim != vocab.embed_dim() || c.feature_dim != data.feature_dim {
        return Err(Error::Data(format!(
            "{} expects features of extent {} and embeddings of extent {}, data has {} and {}",
            path.display(),
            c.feature_dim,
            c.embed_dim,
            data.feature_dim,
            vocab.embed_dim()
        )));
    }
    Ok(())
}

/// Generates the synthetic splits and embeddings. The resolved config points
/// its data paths at the written files.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<SynthOutput> {
    let generated = synth_generate(&cfg.synth_config()?)?;
    let (train, test, emb) = (out.join(TRAIN_FILE), out.join(TEST_FILE), out.join(EMBEDDINGS_FILE));
    save_dataset(&train, &generated.train)?;
    save_dataset(&test, &generated.test)?;
    save_embeddings(&emb, &generated.vocab)?;
    let mut resolved = cfg.clone();
    resolved.train_data = Some(train);
    resolved.test_data = Some(test);
    resolved.embeddings = Some(emb);
    resolved.write_resolved(out)?;
    Ok(generated)
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: GnbParams,
    pub history: Vec<EpochRecord>,
    pub checkpoint: PathBuf,
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainOutcome> {
    let tcfg = cfg.train_config()?;
    let vocab = load_vocab(cfg)?;
    let train = load_dataset(cfg.require("data.train", &cfg.train_data)?, vocab.len())?;
    let val = match &cfg.val_data {
        Some(p) => Some(load_dataset(p, vocab.len())?),
        None => None,
    };
    let params = match &cfg.resume {
        Some(p) => {
            let params = load_checkpoint(p)?;
            check_compatible(&params, &vocab, &train, p)?;
            params
        }
        None => {
            let gnb = cfg.gnb_config(train.feature_dim, vocab.embed_dim())?;
            GnbParams::init(gnb, &mut rng::stream(cfg.seed, rng::STREAM_INIT))?
        }
    };
    let every = cfg.checkpoint_every;
    let mut save_err = None;
    let trained = training::train_from(params, &train, &vocab, &tcfg, val.as_ref(), |rec, p| {
        log::info!("epoch {} loss {} lr {}", rec.epoch, rec.mean_loss, rec.lr);
        if every > 0 && (rec.epoch + 1) % every == 0 {
            let path = out.join(CHECKPOINT_DIR).join(format!("epoch-{:04}.ckpt", rec.epoch + 1));
            if let Err(e) = save_checkpoint(&path, p) {
                let msg = e.to_string();
                save_err = Some(e);
                return Err(graphmatch_core::Error::Data(msg));
            }
        }
        Ok(())
    });
    if let Some(e) = save_err {
        return Err(e);
    }
    let (params, history) = trained?;
    let checkpoint = out.join(MODEL_FILE);
    save_checkpoint(&checkpoint, &params)?;
    error::write(&out.join(HISTORY_FILE), report::history_csv(&history))?;
    let mut resolved = cfg.clone();
    resolved.checkpoint = Some(checkpoint.clone());
    resolved.write_resolved(out)?;
    Ok(TrainOutcome {
        params,
        history,
        checkpoint,
    })
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub result: EvalResult,
    pub report: String,
}

pub fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<EvalOutcome> {
    let (params, vocab, test) = load_scoring_inputs(cfg)?;
    let result = training::evaluate_model(&test, &vocab, &params, &cfg.inference())?;
    let report = report::eval_report(&result, vocab.names());
    error::write(&out.join(REPORT_FILE), &report)?;
    cfg.write_resolved(out)?;
    Ok(EvalOutcome { result, report })
}

#[derive(Debug, Serialize)]
struct PredictionLine<'a> {
    id: &'a str,
    scores: &'a [f64],
    labels: Vec<&'a str>,
    /// Per label, the index of the instance whose matching score was pooled.
    responsible: &'a [usize],
}

#[derive(Debug)]
pub struct PredictOutcome {
    pub predictions: Vec<(String, Prediction)>,
    pub jsonl: String,
}

pub fn cmd_predict(cfg: &RunConfig, out: &Path) -> Result<PredictOutcome> {
    let (params, vocab, data) = load_scoring_inputs(cfg)?;
    let records: Vec<_> = match &cfg.predict_id {
        Some(id) => vec![data
            .find(id)
            .ok_or_else(|| Error::Data(format!("no record with id `{id}`")))?],
        None => data.records.iter().collect(),
    };
    let label_graph = build_label_graph(&vocab)?;
    let opts = cfg.inference();
    let mut predictions = Vec::with_capacity(records.len());
    let mut jsonl = String::new();
    for r in records {
        let p = training::predict(&r.instances, &label_graph, &params, &opts)?;
        let line = PredictionLine {
            id: &r.id,
            scores: &p.scores,
            labels: p.labels.positives().map(|c| vocab.names()[c].as_str()).collect(),
            responsible: &p.responsible,
        };
        jsonl.push_str(&serde_json::to_string(&line).expect("predictions serialize"));
        jsonl.push('\n');
        predictions.push((r.id.clone(), p));
    }
    error::write(&out.join(PREDICTIONS_FILE), &jsonl)?;
    cfg.write_resolved(out)?;
    Ok(PredictOutcome { predictions, jsonl })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    /// Checkpoint family name with its largest relative gradient error.
    pub families: Vec<(String, f64)>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn failures(&self) -> Vec<&str> {
        self.families
            .iter()
            .filter(|(_, e)| !(..=self.tolerance).contains(e))
            .map(|(f, _)| f.as_str())
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (family, err) in &self.families {
            let status = if *err <= self.tolerance { "ok" } else { "FAIL" };
            writeln!(out, "{family} {err:e} {status}").unwrap();
        }
        out
    }
}

/// Seeded two-instance, two-label graph with its labels and class weights.
pub fn gradcheck_problem(cfg: &RunConfig) -> Result<(AssignmentGraph, GnbParams, LabelVector, Vec<f64>)> {
    let (feature_dim, embed_dim) = (3, 2);
    let mut r = rng::stream(cfg.seed, rng::STREAM_SYNTH);
    let mut uniform = |n: usize| -> Vec<f64> { (0..n).map(|_| r.random_range(-1.0..1.0)).collect() };
    let boxes = [BBox::new(0.1, 0.2, 0.3, 0.4), BBox::new(0.5, 0.4, 0.4, 0.5)];
    let instances: Vec<Instance> = boxes
        .iter()
        .enumerate()
        .map(|(k, b)| Instance {
            feature: uniform(feature_dim),
            bbox: *b,
            confidence: 0.9,
            class: k,
        })
        .collect();
    let emb = Tensor::new(vec![2, embed_dim], uniform(2 * embed_dim))?;
    let vocab = LabelVocab::new(vec!["a".into(), "b".into()], emb)?;
    let graph = AssignmentGraph::build(&instances, &build_label_graph(&vocab)?, 1)?;
    let mut gnb = cfg.gnb_config(feature_dim, embed_dim)?;
    gnb.latent_widths = cfg.gradcheck_widths.clone();
    gnb.validate()?;
    let params = GnbParams::init(gnb, &mut rng::stream(cfg.seed, rng::STREAM_INIT))?;
    let y = LabelVector::new(vec![true, false]);
    let w = class_weights(&y, &ClassStats::new(vec![0.25, 0.75], 0.4)?)?;
    Ok((graph, params, y, w))
}

/// Finite-difference check of every parameter family. `corrupt` names a
/// family whose backward pass is deliberately broken.
pub fn gradcheck(cfg: &RunConfig, corrupt: Option<&str>) -> Result<GradcheckReport> {
    let (graph, mut params, y, w) = gradcheck_problem(cfg)?;
    let families: Vec<String> = params.families().iter().map(|(n, _)| n.to_string()).collect();
    if let Some(f) = corrupt {
        if !families.iter().any(|n| n == f) {
            return Err(Error::Config(format!("unknown family `{f}`")));
        }
    }
    let mut tape = Tape::new();
    let pass = image_loss_on_tape(&mut tape, &graph, &params, &y, &w)?;
    match corrupt {
        Some(f) => tape.backward_with_fault(pass.loss, &mut params.store, &format!("{f}."))?,
        None => tape.backward(pass.loss, &mut params.store)?,
    }
    let gnb = params.config.clone();
    let numeric = finite_difference_grad(&mut params.store, cfg.gradcheck_eps, |s| {
        let q = GnbParams::from_store(gnb.clone(), s.clone())?;
        let mut t = Tape::new();
        let pass = image_loss_on_tape(&mut t, &graph, &q, &y, &w)?;
        Ok(t.value(pass.loss).data()[0])
    })?;
    let mut worst = vec![0.0f64; families.len()];
    for ((_, p), n) in params.store.iter().zip(&numeric) {
        let family = p.name().rsplit_once('.').map_or(p.name(), |(f, _)| f);
        let k = families.iter().position(|f| f == family).expect("every leaf belongs to a family");
        for (a, n) in p.grad.data().iter().zip(n) {
            worst[k] = worst[k].max(relative_error(*a, *n));
        }
    }
    Ok(GradcheckReport {
        families: families.into_iter().zip(worst).collect(),
        tolerance: cfg.gradcheck_tolerance,
    })
}

pub fn cmd_gradcheck(cfg: &RunConfig, out: &Path, corrupt: Option<&str>) -> Result<GradcheckReport> {
    let report = gradcheck(cfg, corrupt)?;
    error::write(&out.join(GRADCHECK_FILE), report.to_text())?;
    cfg.write_resolved(out)?;
    Ok(report)
}
