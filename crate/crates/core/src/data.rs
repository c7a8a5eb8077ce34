//! Image records, datasets, class frequencies and the seeded synthetic generator.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::graphs::{BBox, Instance, LabelVocab};
use crate::numeric::Tensor;
use crate::rng::{self, Rng};
use crate::training::LabelVector;

/// One image: its instances (boxes normalized to the unit square) and its label set.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub width: f64,
    pub height: f64,
    pub instances: Vec<Instance>,
    /// Boxes as ingested, in image pixel units `[x, y, w, h]`.
    pub pixel_boxes: Vec<[f64; 4]>,
    pub labels: LabelVector,
}

impl ImageRecord {
    /// Builds a record from instances whose `bbox` is still in pixel units,
    /// validating every invariant and normalizing the boxes.
    pub fn from_pixels(
        id: impl Into<String>,
        width: f64,
        height: f64,
        mut instances: Vec<Instance>,
        labels: LabelVector,
        num_labels: usize,
    ) -> Result<Self> {
        let id = id.into();
        let bad = |msg: String| Error::Data(format!("record `{id}`: {msg}"));
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(bad(format!("image size {width}x{height} must be positive")));
        }
        if instances.is_empty() {
            return Err(bad("no instances".into()));
        }
        if labels.len() != num_labels {
            return Err(bad(format!("label vector has extent {}, expected {num_labels}", labels.len())));
        }
        let d = instances[0].feature.len();
        if d == 0 {
            return Err(bad("empty feature vector".into()));
        }
        let mut pixel_boxes = Vec::with_capacity(instances.len());
        for (k, inst) in instances.iter_mut().enumerate() {
            if inst.feature.len() != d {
                return Err(bad(format!(
                    "instance {k} feature extent {} differs from {d}",
                    inst.feature.len()
                )));
            }
            if inst.feature.iter().any(|v| !v.is_finite()) {
                return Err(bad(format!("instance {k} has a non-finite feature")));
            }
            if !(0.0..=1.0).contains(&inst.confidence) {
                return Err(bad(format!("instance {k} confidence {} outside [0, 1]", inst.confidence)));
            }
            if inst.class >= num_labels {
                return Err(bad(format!("instance {k} class {} ≥ {num_labels}", inst.class)));
            }
            let b = inst.bbox;
            let inside = b.w > 0.0
                && b.h > 0.0
                && b.x >= 0.0
                && b.y >= 0.0
                && b.x + b.w <= width
                && b.y + b.h <= height;
            if !inside {
                return Err(bad(format!(
                    "instance {k} box [{}, {}, {}, {}] exceeds the {width}x{height} image",
                    b.x, b.y, b.w, b.h
                )));
            }
            pixel_boxes.push([b.x, b.y, b.w, b.h]);
            inst.bbox = BBox::new(b.x / width, b.y / height, b.w / width, b.h / height);
        }
        Ok(ImageRecord {
            id,
            width,
            height,
            instances,
            pixel_boxes,
            labels,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.instances[0].feature.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: String,
    pub records: Vec<ImageRecord>,
    pub num_labels: usize,
    pub feature_dim: usize,
}

impl Dataset {
    pub fn new(split: impl Into<String>, records: Vec<ImageRecord>, num_labels: usize) -> Result<Self> {
        let split = split.into();
        let first = records
            .first()
            .ok_or_else(|| Error::Data(format!("dataset `{split}` has no records")))?;
        let feature_dim = first.feature_dim();
        for r in &records {
            if r.feature_dim() != feature_dim {
                return Err(Error::Data(format!(
                    "record `{}`: feature extent {} differs from {feature_dim}",
                    r.id,
                    r.feature_dim()
                )));
            }
            if r.labels.len() != num_labels {
                return Err(Error::Data(format!("record `{}`: label extent mismatch", r.id)));
            }
        }
        Ok(Dataset {
            split,
            records,
            num_labels,
            feature_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn find(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn truths(&self) -> Vec<Vec<bool>> {
        self.records.iter().map(|r| r.labels.to_vec()).collect()
    }
}

/// Fraction of images annotated with each label.
pub fn label_frequencies(dataset: &Dataset) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(Error::Data("label frequencies of an empty dataset".into()));
    }
    let mut counts = vec![0usize; dataset.num_labels];
    for r in &dataset.records {
        for c in r.labels.positives() {
            counts[c] += 1;
        }
    }
    let n = dataset.len() as f64;
    Ok(counts.into_iter().map(|k| k as f64 / n).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub num_labels: usize,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub train_images: usize,
    pub test_images: usize,
    /// Inclusive range for the instance count of an image. Raised to the
    /// number of positive labels when smaller.
    pub min_instances: usize,
    pub max_instances: usize,
    /// Probability that an instance slot beyond the one-per-label minimum is junk.
    pub distractor_rate: f64,
    /// Standard deviation of the per-coordinate feature noise.
    pub noise_sigma: f64,
    /// Place the instances of positive labels around a shared anchor.
    pub cluster_positives: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_labels: 6,
            feature_dim: 16,
            embed_dim: 8,
            train_images: 200,
            test_images: 100,
            min_instances: 2,
            max_instances: 6,
            distractor_rate: 0.3,
            noise_sigma: 0.05,
            cluster_positives: true,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.num_labels,
            self.feature_dim,
            self.embed_dim,
            self.train_images,
            self.test_images,
            self.min_instances,
        ];
        if counts.contains(&0) {
            return Err(Error::Config("synthetic counts must all be at least 1".into()));
        }
        if self.max_instances < self.min_instances {
            return Err(Error::Config("max_instances must be ≥ min_instances".into()));
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return Err(Error::Config(format!("distractor rate {} outside [0, 1]", self.distractor_rate)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise sigma {} must be ≥ 0", self.noise_sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub train: Dataset,
    pub test: Dataset,
    pub vocab: LabelVocab,
    /// Ground-truth feature centers, one row per label.
    pub prototypes: Tensor,
    /// Feature center of distractor instances.
    pub junk_prototype: Vec<f64>,
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

fn unit_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(rng, n);
        let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Label inclusion probability: decreasing linearly from 0.6 for label 0 to 0.2
/// for the last label, so class frequencies differ.
fn label_rate(c: usize, num_labels: usize) -> f64 {
    if num_labels == 1 {
        0.6
    } else {
        0.6 - 0.4 * c as f64 / (num_labels - 1) as f64
    }
}

fn sample_label_sets(cfg: &SynthConfig, n: usize, rng: &mut Rng) -> Vec<Vec<bool>> {
    let c = cfg.num_labels;
    let mut sets: Vec<Vec<bool>> = (0..n)
        .map(|_| {
            let mut y: Vec<bool> = (0..c).map(|k| rng.random_bool(label_rate(k, c))).collect();
            if !y.contains(&true) {
                y[rng.random_range(0..c)] = true;
            }
            y
        })
        .collect();
    if n < 2 || c < 2 {
        return sets;
    }
    // Keep every frequency strictly inside (0, 1).
    for k in 0..c {
        if sets.iter().all(|y| !y[k]) {
            sets[k % n][k] = true;
        }
        if sets.iter().all(|y| y[k]) {
            let i = sets
                .iter()
                .position(|y| y.iter().filter(|v| **v).count() > 1)
                .unwrap_or(0);
            sets[i][k] = false;
            if !sets[i].contains(&true) {
                sets[i][(k + 1) % c] = true;
            }
        }
    }
    sets
}

fn random_box(rng: &mut Rng, anchor: Option<(f64, f64)>) -> BBox {
    let w = rng.random_range(0.05..0.3);
    let h = rng.random_range(0.05..0.3);
    let (x, y) = match anchor {
        Some((ax, ay)) => {
            let cx = (ax + rng.random_range(-0.1..0.1)).clamp(w / 2.0, 1.0 - w / 2.0);
            let cy = (ay + rng.random_range(-0.1..0.1)).clamp(h / 2.0, 1.0 - h / 2.0);
            (cx - w / 2.0, cy - h / 2.0)
        }
        None => (rng.random_range(0.0..1.0 - w), rng.random_range(0.0..1.0 - h)),
    };
    BBox::new(x.max(0.0), y.max(0.0), w, h)
}

#[allow(clippy::too_many_arguments)]
fn generate_split(
    cfg: &SynthConfig,
    split: &str,
    n: usize,
    prototypes: &[Vec<f64>],
    junk: &[f64],
    rng: &mut Rng,
) -> Result<Dataset> {
    let label_sets = sample_label_sets(cfg, n, rng);
    let mut records = Vec::with_capacity(n);
    for (idx, y) in label_sets.into_iter().enumerate() {
        let positives: Vec<usize> = (0..cfg.num_labels).filter(|k| y[*k]).collect();
        let total = rng
            .random_range(cfg.min_instances..=cfg.max_instances)
            .max(positives.len());
        // One instance per positive label, then extra slots filled with
        // distractors or further views of a positive label.
        let mut sources: Vec<Option<usize>> = positives.iter().map(|c| Some(*c)).collect();
        while sources.len() < total {
            if rng.random_bool(cfg.distractor_rate) {
                sources.push(None);
            } else {
                sources.push(Some(positives[rng.random_range(0..positives.len())]));
            }
        }
        sources.shuffle(rng);
        let anchor = cfg
            .cluster_positives
            .then(|| (rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)));
        let instances = sources
            .into_iter()
            .map(|src| {
                let (center, confidence, class, anchor) = match src {
                    Some(c) => (prototypes[c].as_slice(), rng.random_range(0.5..=1.0), c, anchor),
                    None => (junk, rng.random_range(0.0..=0.6), rng.random_range(0..cfg.num_labels), None),
                };
                let feature = center
                    .iter()
                    .map(|m| m + cfg.noise_sigma * normal(rng))
                    .collect();
                Instance {
                    feature,
                    bbox: random_box(rng, anchor),
                    confidence,
                    class,
                }
            })
            .collect();
        records.push(ImageRecord::from_pixels(
            format!("{split}-{idx:05}"),
            1.0,
            1.0,
            instances,
            LabelVector::new(y),
            cfg.num_labels,
        )?);
    }
    Dataset::new(split, records, cfg.num_labels)
}

/// Generates train and test splits plus a label vocabulary.
///
/// Each label has a fixed feature prototype; an instance of that label is its
/// prototype plus Gaussian noise, and distractor instances come from a separate
/// junk prototype with lower detector confidence. Label embeddings are random
/// unit vectors. Images have unit width and height, so pixel and normalized
/// boxes coincide.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut r = rng::stream(cfg.seed, rng::STREAM_SYNTH);
    let (c, d) = (cfg.num_labels, cfg.feature_dim);

    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(c + 1);
    while centers.len() < c + 1 {
        let v = gaussian_vec(&mut r, d);
        if centers.iter().all(|u| distance(u, &v) > 1e-3) {
            centers.push(v);
        }
    }
    let junk = centers.pop().expect("c + 1 centers");
    let names = (0..c).map(|k| format!("class{k:02}")).collect();
    let emb: Vec<Vec<f64>> = (0..c).map(|_| unit_vec(&mut r, cfg.embed_dim)).collect();
    let vocab = LabelVocab::new(names, Tensor::from_rows(&emb)?)?;

    let train = generate_split(cfg, "train", cfg.train_images, &centers, &junk, &mut r)?;
    let test = generate_split(cfg, "test", cfg.test_images, &centers, &junk, &mut r)?;
    Ok(SynthOutput {
        train,
        test,
        vocab,
        prototypes: Tensor::from_rows(&centers)?,
        junk_prototype: junk,
    })
}
