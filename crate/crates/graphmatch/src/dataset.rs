//! Line-delimited JSON dataset files. One record per line:
//!
//! ```text
//! {"id":"img0","width":640.0,"height":480.0,"labels":[0,3],
//!  "instances":[{"feature":[0.1,0.2],"bbox":[10.0,20.0,30.0,40.0],"confidence":0.9,"class":3}]}
//! ```
//!
//! Boxes are `[x, y, w, h]` in pixels. See `schema/dataset.schema.json`.

use std::path::Path;

use graphmatch_core::data::{Dataset, ImageRecord};
use graphmatch_core::graphs::{BBox, Instance};
use graphmatch_core::training::LabelVector;
use serde::{Deserialize, Serialize};

use crate::error::{self, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    width: f64,
    height: f64,
    labels: Vec<usize>,
    instances: Vec<InstanceLine>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceLine {
    feature: Vec<f64>,
    bbox: [f64; 4],
    confidence: f64,
    class: usize,
}

fn parse_lines(path: &Path, text: &str) -> Result<Vec<(usize, RecordLine)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordLine = serde_json::from_str(line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

fn to_record(path: &Path, line: usize, rec: RecordLine, num_labels: usize) -> Result<ImageRecord> {
    let at = |e: graphmatch_core::Error| Error::parse(path, line, e.to_string());
    let labels = LabelVector::from_indices(num_labels, &rec.labels).map_err(at)?;
    let instances = rec
        .instances
        .into_iter()
        .map(|i| Instance {
            feature: i.feature,
            bbox: BBox::new(i.bbox[0], i.bbox[1], i.bbox[2], i.bbox[3]),
            confidence: i.confidence,
            class: i.class,
        })
        .collect();
    ImageRecord::from_pixels(rec.id, rec.width, rec.height, instances, labels, num_labels).map_err(at)
}

fn to_line(r: &ImageRecord) -> RecordLine {
    RecordLine {
        id: r.id.clone(),
        width: r.width,
        height: r.height,
        labels: r.labels.positives().collect(),
        instances: r
            .instances
            .iter()
            .zip(&r.pixel_boxes)
            .map(|(i, b)| InstanceLine {
                feature: i.feature.clone(),
                bbox: *b,
                confidence: i.confidence,
                class: i.class,
            })
            .collect(),
    }
}

/// Parses dataset text. `path` only labels error messages; the split name is its file stem.
pub fn parse_dataset(path: &Path, text: &str, num_labels: usize) -> Result<Dataset> {
    let mut records = Vec::new();
    for (line, rec) in parse_lines(path, text)? {
        records.push(to_record(path, line, rec, num_labels)?);
    }
    let split = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ds = Dataset::new(split, records, num_labels).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(ds)
}

pub fn load_dataset(path: impl AsRef<Path>, num_labels: usize) -> Result<Dataset> {
    let path = path.as_ref();
    parse_dataset(path, &error::read_to_string(path)?, num_labels)
}

pub fn dataset_to_string(ds: &Dataset) -> String {
    let mut out = String::new();
    for r in &ds.records {
        out.push_str(&serde_json::to_string(&to_line(r)).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    error::write(path.as_ref(), dataset_to_string(ds))
}

/// Canonical form of dataset text: compact JSON with fixed key order, sorted
/// label lists and no blank lines. Validates syntax only.
pub fn canonicalize(path: &Path, text: &str) -> Result<String> {
    let mut out = String::new();
    for (_, mut rec) in parse_lines(path, text)? {
        rec.labels.sort_unstable();
        rec.labels.dedup();
        out.push_str(&serde_json::to_string(&rec).expect("records serialize"));
        out.push('\n');
    }
    Ok(out)
}
