use std::fmt::Write as _;

use graphmatch_core::metrics::{EvalResult, Prf};
use graphmatch_core::training::EpochRecord;

pub const HISTORY_HEADER: &str = "epoch,mean_loss,lr,val_mAP";

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in history {
        let val = r.val_map.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{val}", r.epoch, r.mean_loss, r.lr).unwrap();
    }
    out
}

fn prf_lines(out: &mut String, p: &Prf, suffix: &str) {
    for (key, v) in [("CP", p.cp), ("CR", p.cr), ("CF1", p.cf1), ("OP", p.op), ("OR", p.or), ("OF1", p.of1)] {
        writeln!(out, "{key}{suffix} = {v}").unwrap();
    }
}

/// Flat `key = value` report. Threshold metrics use plain names, rank
/// metrics carry an `@k` suffix, and per-class AP is `AP.<label>` (`NA`
/// for classes without positives).
pub fn eval_report(result: &EvalResult, labels: &[String]) -> String {
    let mut out = String::new();
    writeln!(out, "mAP = {}", result.map).unwrap();
    prf_lines(&mut out, &result.all, "");
    prf_lines(&mut out, &result.top_k, &format!("@{}", result.k));
    writeln!(out, "threshold = {}", result.threshold).unwrap();
    writeln!(out, "k = {}", result.k).unwrap();
    for (name, ap) in labels.iter().zip(&result.per_class_ap) {
        match ap {
            Some(v) => writeln!(out, "AP.{name} = {v}").unwrap(),
            None => writeln!(out, "AP.{name} = NA").unwrap(),
        }
    }
    out
}

/// Reads a report back into `(key, value)` pairs.
pub fn parse_report(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}
