//! Multi-label evaluation: AP/mAP and per-class / overall precision, recall and F1.
//!
//! AP is the non-interpolated variant: images are ranked by descending score
//! (ties broken by lower image index) and precision is averaged over the ranks
//! at which positives appear. Classes without any positive image are excluded
//! from mAP and reported as `None`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Average precision of one class; `None` when there are no positives.
pub fn average_precision(scores: &[f64], truths: &[bool]) -> Result<Option<f64>> {
    if scores.len() != truths.len() {
        return Err(Error::shape("average precision", &[scores.len()], &[truths.len()]));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, i) in order.iter().enumerate() {
        if truths[*i] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok((hits > 0).then(|| total / hits as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub map: f64,
    /// AP per class; `None` for classes without positives.
    pub per_class: Vec<Option<f64>>,
}

impl MapResult {
    pub fn excluded_classes(&self) -> Vec<usize> {
        self.per_class
            .iter()
            .enumerate()
            .filter_map(|(c, ap)| ap.is_none().then_some(c))
            .collect()
    }
}

fn check_matrix<T, U>(a: &[Vec<T>], b: &[Vec<U>], what: &str) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("{what} rows"), &[a.len()], &[b.len()]));
    }
    let c = a.first().map(Vec::len).unwrap_or(0);
    for (i, (ra, rb)) in a.iter().zip(b).enumerate() {
        if ra.len() != c || rb.len() != c {
            return Err(Error::shape(format!("{what} row {i}"), &[c, c], &[ra.len(), rb.len()]));
        }
    }
    Ok(c)
}

/// Unweighted mean of per-class AP over classes with at least one positive.
/// `scores[n][c]` and `truths[n][c]` are indexed by image, then class.
pub fn mean_average_precision(scores: &[Vec<f64>], truths: &[Vec<bool>]) -> Result<MapResult> {
    let c = check_matrix(scores, truths, "mAP")?;
    let mut per_class = Vec::with_capacity(c);
    for k in 0..c {
        let s: Vec<f64> = scores.iter().map(|r| r[k]).collect();
        let t: Vec<bool> = truths.iter().map(|r| r[k]).collect();
        per_class.push(average_precision(&s, &t)?);
    }
    let valid: Vec<f64> = per_class.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::Data("mAP undefined: no class has a positive example".into()));
    }
    Ok(MapResult {
        map: valid.iter().sum::<f64>() / valid.len() as f64,
        per_class,
    })
}

/// Precision / recall / F1, per-class averaged (`C*`) and pooled overall (`O*`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub cp: f64,
    pub cr: f64,
    pub cf1: f64,
    pub op: f64,
    pub or: f64,
    pub of1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn prf_suite(predictions: &[Vec<bool>], truths: &[Vec<bool>]) -> Result<Prf> {
    let c = check_matrix(predictions, truths, "precision/recall")?;
    let mut tp = vec![0usize; c];
    let mut fp = vec![0usize; c];
    let mut fneg = vec![0usize; c];
    for (pr, tr) in predictions.iter().zip(truths) {
        for k in 0..c {
            match (pr[k], tr[k]) {
                (true, true) => tp[k] += 1,
                (true, false) => fp[k] += 1,
                (false, true) => fneg[k] += 1,
                (false, false) => {}
            }
        }
    }
    let (mut cp, mut cr) = (0.0, 0.0);
    for k in 0..c {
        cp += ratio(tp[k], tp[k] + fp[k]);
        cr += ratio(tp[k], tp[k] + fneg[k]);
    }
    if c > 0 {
        cp /= c as f64;
        cr /= c as f64;
    }
    let (stp, sfp, sfn) = (tp.iter().sum(), fp.iter().sum::<usize>(), fneg.iter().sum::<usize>());
    let op = ratio(stp, stp + sfp);
    let or = ratio(stp, stp + sfn);
    Ok(Prf {
        cp,
        cr,
        cf1: f1(cp, cr),
        op,
        or,
        of1: f1(op, or),
    })
}

/// Marks exactly `min(k, C)` labels positive: the largest scores, ties to the lower index.
pub fn topk_select(p: &[f64], k: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|a, b| p[*b].total_cmp(&p[*a]).then(a.cmp(b)));
    let mut out = vec![false; p.len()];
    for i in order.into_iter().take(k) {
        out[i] = true;
    }
    out
}

/// Label `c` is positive iff `p[c] > threshold`.
pub fn threshold_select(p: &[f64], threshold: f64) -> Vec<bool> {
    p.iter().map(|v| *v > threshold).collect()
}

/// Full report: mAP plus the six P/R/F1 metrics under the threshold rule ("All")
/// and under top-k selection ("Top-k").
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub map: f64,
    pub per_class_ap: Vec<Option<f64>>,
    pub all: Prf,
    pub top_k: Prf,
    pub k: usize,
    pub threshold: f64,
}

pub fn evaluate(scores: &[Vec<f64>], truths: &[Vec<bool>], threshold: f64, k: usize) -> Result<EvalResult> {
    let map = mean_average_precision(scores, truths)?;
    let by_threshold: Vec<Vec<bool>> = scores.iter().map(|p| threshold_select(p, threshold)).collect();
    let by_rank: Vec<Vec<bool>> = scores.iter().map(|p| topk_select(p, k)).collect();
    Ok(EvalResult {
        map: map.map,
        per_class_ap: map.per_class,
        all: prf_suite(&by_threshold, truths)?,
        top_k: prf_suite(&by_rank, truths)?,
        k,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_ranking_has_unit_ap() {
        let ap = average_precision(&[0.9, 0.8, 0.1, 0.05], &[true, true, false, false]).unwrap();
        assert_eq!(ap, Some(1.0));
    }

    #[test]
    fn positive_at_rank_two() {
        assert_eq!(average_precision(&[0.9, 0.8], &[false, true]).unwrap(), Some(0.5));
    }

    #[test]
    fn no_positive_means_no_ap() {
        assert_eq!(average_precision(&[0.3, 0.2], &[false, false]).unwrap(), None);
    }

    #[test]
    fn ties_rank_by_index() {
        // positive at index 1 loses the tie against index 0
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]).unwrap(), Some(0.5));
    }

    #[test]
    fn map_is_mean_over_valid_classes() {
        let scores = vec![vec![0.9, 0.9, 0.1], vec![0.1, 0.8, 0.2]];
        let truths = vec![vec![true, false, false], vec![false, true, false]];
        let r = mean_average_precision(&scores, &truths).unwrap();
        assert_eq!(r.per_class, vec![Some(1.0), Some(0.5), None]);
        assert_eq!(r.map, 0.75);
        assert_eq!(r.excluded_classes(), vec![2]);
        let none = vec![vec![false; 3]; 2];
        assert!(mean_average_precision(&scores, &none).is_err());
    }

    #[test]
    fn perfect_predictions() {
        let t = vec![vec![true, false], vec![false, true], vec![true, true]];
        let prf = prf_suite(&t, &t).unwrap();
        for v in [prf.cp, prf.cr, prf.cf1, prf.op, prf.or, prf.of1] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn all_negative_predictions() {
        let t = vec![vec![true, false], vec![false, false]];
        let p = vec![vec![false; 2]; 2];
        let prf = prf_suite(&p, &t).unwrap();
        assert_eq!((prf.cr, prf.or, prf.cf1, prf.of1), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn top_k() {
        assert_eq!(topk_select(&[0.1, 0.9, 0.5, 0.7], 3), vec![false, true, true, true]);
        assert_eq!(topk_select(&[0.1, 0.2], 3), vec![true, true]);
        assert_eq!(topk_select(&[0.5, 0.5, 0.5], 2), vec![true, true, false]);
    }

    #[test]
    fn threshold_is_strict() {
        assert_eq!(threshold_select(&[0.9, 0.1, 0.5], 0.5), vec![true, false, false]);
    }
}
