//! Evaluation: greedy one-to-one instance matching on pairwise IoU,
//! detection-style IoU/F1 at a threshold, counting MAE/MSE (crowd
//! convention: MSE is the root of the mean squared error), and a
//! density-bucketed wall-clock timing harness.

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::InstanceLabelMap;

/// One matched (prediction, ground truth) pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchPair {
    pub pred_id: u32,
    pub gt_id: u32,
    pub iou: f64,
}

/// Outcome of greedy instance matching.
#[derive(Clone, Debug, Default)]
pub struct MatchResult {
    pub pairs: Vec<MatchPair>,
    pub unmatched_pred: Vec<u32>,
    pub unmatched_gt: Vec<u32>,
}

impl MatchResult {
    pub fn gt_count(&self) -> usize {
        self.pairs.len() + self.unmatched_gt.len()
    }

    pub fn pred_count(&self) -> usize {
        self.pairs.len() + self.unmatched_pred.len()
    }
}

/// Greedy one-to-one matching on descending pairwise IoU; ties prefer the
/// smaller gt id, then the smaller pred id. Pairs with zero overlap never
/// match.
pub fn match_instances(pred: &InstanceLabelMap, gt: &InstanceLabelMap) -> Result<MatchResult> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.dims().h,
            pred.dims().w,
            gt.dims().h,
            gt.dims().w
        )));
    }
    let pred_areas = pred.areas();
    let gt_areas = gt.areas();
    let mut inter: HashMap<(u32, u32), usize> = HashMap::new();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if p != 0 && g != 0 {
            *inter.entry((p, g)).or_insert(0) += 1;
        }
    }
    let mut candidates: Vec<MatchPair> = inter
        .into_iter()
        .map(|((p, g), i)| MatchPair {
            pred_id: p,
            gt_id: g,
            iou: i as f64 / (pred_areas[&p] + gt_areas[&g] - i) as f64,
        })
        .collect();
    candidates.sort_by(|a, b| {
        b.iou
            .partial_cmp(&a.iou)
            .expect("IoU is finite")
            .then(a.gt_id.cmp(&b.gt_id))
            .then(a.pred_id.cmp(&b.pred_id))
    });
    let mut used_pred = std::collections::HashSet::new();
    let mut used_gt = std::collections::HashSet::new();
    let mut pairs = Vec::new();
    for c in candidates {
        if used_pred.contains(&c.pred_id) || used_gt.contains(&c.gt_id) {
            continue;
        }
        used_pred.insert(c.pred_id);
        used_gt.insert(c.gt_id);
        pairs.push(c);
    }
    let unmatched_pred = pred_areas
        .keys()
        .filter(|id| !used_pred.contains(id))
        .copied()
        .collect();
    let unmatched_gt = gt_areas
        .keys()
        .filter(|id| !used_gt.contains(id))
        .copied()
        .collect();
    Ok(MatchResult {
        pairs,
        unmatched_pred,
        unmatched_gt,
    })
}

/// Id-linked matching: instances sharing an id are paired directly (this
/// pipeline assigns prediction ids from the same points that define the
/// ground truth, so identity is meaningful); ids present on only one side
/// stay unmatched. Zero-overlap pairs keep IoU 0 rather than unmatching.
pub fn match_by_id(pred: &InstanceLabelMap, gt: &InstanceLabelMap) -> Result<MatchResult> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.dims().h,
            pred.dims().w,
            gt.dims().h,
            gt.dims().w
        )));
    }
    let pred_areas = pred.areas();
    let gt_areas = gt.areas();
    let mut inter: HashMap<u32, usize> = HashMap::new();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        if p != 0 && p == g {
            *inter.entry(p).or_insert(0) += 1;
        }
    }
    let mut pairs = Vec::new();
    let mut unmatched_pred = Vec::new();
    let mut unmatched_gt = Vec::new();
    for (&id, &pa) in &pred_areas {
        match gt_areas.get(&id) {
            Some(&ga) => {
                let i = inter.get(&id).copied().unwrap_or(0);
                pairs.push(MatchPair {
                    pred_id: id,
                    gt_id: id,
                    iou: i as f64 / (pa + ga - i) as f64,
                });
            }
            None => unmatched_pred.push(id),
        }
    }
    for &id in gt_areas.keys() {
        if !pred_areas.contains_key(&id) {
            unmatched_gt.push(id);
        }
    }
    Ok(MatchResult {
        pairs,
        unmatched_pred,
        unmatched_gt,
    })
}

/// Detection metrics at an IoU threshold. `mean_iou` averages matched-pair
/// IoUs over all ground-truth instances (unmatched gt counts as 0).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub mean_iou: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_count: usize,
}

/// Scores a match result: pairs at or above the threshold are true
/// positives; below-threshold pairs count against both sides.
pub fn iou_f1(m: &MatchResult, threshold: f64) -> Result<DetectionMetrics> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "IoU threshold must lie in (0, 1], got {threshold}"
        )));
    }
    let gt_total = m.gt_count();
    if gt_total == 0 {
        return Err(Error::InvalidArgument("no ground-truth instances".into()));
    }
    let tp = m.pairs.iter().filter(|p| p.iou >= threshold).count();
    let below = m.pairs.len() - tp;
    let fp = m.unmatched_pred.len() + below;
    let fn_count = m.unmatched_gt.len() + below;
    let mean_iou = m.pairs.iter().map(|p| p.iou).sum::<f64>() / gt_total as f64;
    let f1 = 2.0 * tp as f64 / (2.0 * tp as f64 + fp as f64 + fn_count as f64);
    Ok(DetectionMetrics {
        mean_iou,
        f1,
        tp,
        fp,
        fn_count,
    })
}

/// Counting errors across images. `mse` follows the crowd-counting
/// convention (root of the mean squared error), which is why `mse >= mae`
/// does not hold in general.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CountingErrors {
    pub mae: f64,
    pub mse: f64,
}

pub fn counting_errors(pred_counts: &[f64], gt_counts: &[f64]) -> Result<CountingErrors> {
    if pred_counts.len() != gt_counts.len() || pred_counts.is_empty() {
        return Err(Error::DimMismatch(format!(
            "{} predicted counts vs {} ground-truth counts",
            pred_counts.len(),
            gt_counts.len()
        )));
    }
    let n = pred_counts.len() as f64;
    let mae = pred_counts
        .iter()
        .zip(gt_counts)
        .map(|(p, g)| (p - g).abs())
        .sum::<f64>()
        / n;
    let mse = (pred_counts
        .iter()
        .zip(gt_counts)
        .map(|(p, g)| (p - g) * (p - g))
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(CountingErrors { mae, mse })
}

/// A named group of scenes sharing a density level.
#[derive(Clone, Debug)]
pub struct TimingBucket<S> {
    pub label: String,
    pub scenes: Vec<S>,
}

/// Wall-clock summary for one bucket.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BucketTiming {
    pub bucket: String,
    pub mean_s: f64,
    pub max_s: f64,
}

/// Times `run` once per scene per bucket. The first scene of each bucket
/// is executed once beforehand as an unmeasured warm-up.
pub fn timing_harness<S, F>(mut run: F, buckets: &[TimingBucket<S>]) -> Vec<BucketTiming>
where
    F: FnMut(&S),
{
    let mut out = Vec::with_capacity(buckets.len());
    for bucket in buckets {
        assert!(
            !bucket.scenes.is_empty(),
            "timing bucket '{}' has no scenes",
            bucket.label
        );
        run(&bucket.scenes[0]); // warm-up, excluded from the stats
        let mut total = 0.0;
        let mut max_s: f64 = 0.0;
        for scene in &bucket.scenes {
            let t0 = Instant::now();
            run(scene);
            let dt = t0.elapsed().as_secs_f64();
            total += dt;
            max_s = max_s.max(dt);
        }
        out.push(BucketTiming {
            bucket: bucket.label.clone(),
            mean_s: total / bucket.scenes.len() as f64,
            max_s,
        });
    }
    out
}

/// The metrics report emitted by the CLI: detection quality, counting
/// errors, and optional timing rows.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mean_iou: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_count: usize,
    pub mae: f64,
    pub mse: f64,
    pub timing: Vec<BucketTiming>,
}

impl MetricsReport {
    pub fn new(detection: DetectionMetrics, counting: CountingErrors) -> Self {
        Self {
            mean_iou: detection.mean_iou,
            f1: detection.f1,
            tp: detection.tp,
            fp: detection.fp,
            fn_count: detection.fn_count,
            mae: counting.mae,
            mse: counting.mse,
            timing: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}
