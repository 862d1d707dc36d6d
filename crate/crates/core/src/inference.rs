//! Proposal generation, temporal NMS, and the evaluation metrics.
//!
//! Proposals come from thresholding each selected class's activation column
//! (min-max normalized per video per class) at every value of a threshold
//! grid, pooling the maximal runs. NMS is class-agnostic within a video.
//! Evaluation reports mAP over an IoU grid plus clustering NMI.

use std::collections::BTreeMap;

use crate::dataset::GroundTruth;
use crate::error::{Error, Result};
use crate::localizer::ActivationMaps;

/// One temporal detection in snippet units.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub video_id: String,
    pub start: f64,
    pub end: f64,
    pub label: usize,
    pub score: f64,
}

/// Metric grid for one evaluation pass.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MapReport {
    pub iou_thresholds: Vec<f64>,
    pub map_per_iou: Vec<f64>,
    pub average_map: f64,
    /// Per threshold, per class; `None` for classes absent from ground truth.
    pub per_class_ap: Vec<Vec<Option<f64>>>,
}

/// The IoU grid used throughout: 0.5 to 0.95 in steps of 0.05.
pub fn default_iou_grid() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// The default segmentation grid: 0 to 0.15 in steps of 0.015, inclusive.
pub fn default_tau_a_grid() -> Vec<f64> {
    (0..=10).map(|i| 15 * i).map(|v| v as f64 / 1000.0).collect()
}

/// Multi-threshold segmentation of every confident class's activation
/// column. Columns are min-max normalized per video per class; flat columns
/// normalize to all zeros and produce nothing under strict thresholds.
pub fn generate_proposals(
    video_id: &str,
    maps: &ActivationMaps,
    class_threshold: f64,
    tau_a_grid: &[f64],
) -> Result<Vec<Proposal>> {
    if tau_a_grid.is_empty() {
        return Err(Error::invalid("the segmentation threshold grid is empty"));
    }
    let t = maps.activation.rows();
    let mut proposals = Vec::new();
    for (label, &prob) in maps.class_probs.iter().enumerate() {
        if prob <= class_threshold {
            continue;
        }
        let raw = maps.activation.column(label);
        let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let norm: Vec<f64> = if hi > lo {
            raw.iter().map(|v| (v - lo) / (hi - lo)).collect()
        } else {
            vec![0.0; t]
        };
        for &tau_a in tau_a_grid {
            let mut start = None;
            for i in 0..=t {
                let active = i < t && norm[i] > tau_a;
                match (start, active) {
                    (None, true) => start = Some(i),
                    (Some(s), false) => {
                        proposals.push(Proposal {
                            video_id: video_id.to_string(),
                            start: s as f64,
                            end: i as f64,
                            label,
                            score: score_proposal(&norm, s, i),
                        });
                        start = None;
                    }
                    _ => {}
                }
            }
        }
    }
    Ok(proposals)
}

/// Outer-inner contrast: mean inside the segment minus the mean of the two
/// flanking margins of length ⌊len/4⌋ each. A margin clipped to nothing
/// contributes 0.
pub fn score_proposal(column: &[f64], start: usize, end: usize) -> f64 {
    debug_assert!(start < end && end <= column.len());
    let len = end - start;
    let margin = len / 4;
    let mean = |lo: usize, hi: usize| -> f64 {
        if lo >= hi {
            0.0
        } else {
            column[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        }
    };
    let inner = mean(start, end);
    let left = mean(start.saturating_sub(margin), start);
    let right = mean(end, (end + margin).min(column.len()));
    inner - (left + right) / 2.0
}

pub fn temporal_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn by_score_desc(a: &Proposal, b: &Proposal) -> std::cmp::Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap()
        .then(a.video_id.cmp(&b.video_id))
        .then(a.label.cmp(&b.label))
        .then(a.start.partial_cmp(&b.start).unwrap())
        .then(a.end.partial_cmp(&b.end).unwrap())
}

/// Greedy class-agnostic NMS over one video's proposals: keep the best
/// remaining proposal, drop everything overlapping it above `threshold`.
pub fn nms(proposals: &[Proposal], threshold: f64) -> Vec<Proposal> {
    let mut order: Vec<&Proposal> = proposals.iter().collect();
    order.sort_by(|a, b| by_score_desc(a, b));
    let mut kept: Vec<Proposal> = Vec::new();
    for candidate in order {
        debug_assert!(candidate.score.is_finite());
        let suppressed = kept.iter().any(|k| {
            temporal_iou((k.start, k.end), (candidate.start, candidate.end)) > threshold
        });
        if !suppressed {
            kept.push(candidate.clone());
        }
    }
    kept
}

/// Majority ground-truth class per cluster; ties to the lower class, empty
/// clusters map to class 0 with a warning.
pub fn map_clusters_to_labels(
    assignments: &[usize],
    gt_labels: &[Option<usize>],
    num_clusters: usize,
    num_classes: usize,
) -> Result<Vec<usize>> {
    if assignments.len() != gt_labels.len() {
        return Err(Error::invalid(format!(
            "{} assignments vs {} ground-truth labels",
            assignments.len(),
            gt_labels.len()
        )));
    }
    let mut votes = vec![vec![0usize; num_classes]; num_clusters];
    for (&cluster, gt) in assignments.iter().zip(gt_labels) {
        if cluster >= num_clusters {
            return Err(Error::invalid(format!(
                "cluster id {cluster} outside [0, {num_clusters})"
            )));
        }
        if let Some(label) = gt {
            votes[cluster][*label] += 1;
        }
    }
    let mut mapping = Vec::with_capacity(num_clusters);
    for (cluster, tally) in votes.iter().enumerate() {
        let (best, count) = tally
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(c, &n)| (c, n))
            .unwrap();
        if count == 0 {
            log::warn!("cluster {cluster} has no labeled members; mapping to class 0");
            mapping.push(0);
        } else {
            mapping.push(best);
        }
    }
    Ok(mapping)
}

/// mAP over an IoU grid. Proposals are ranked per class by score across
/// videos; each ground-truth segment can match at most one proposal (the
/// unmatched segment with maximal IoU is tried, greedily in score order).
/// AP uses all-point interpolation; mAP averages classes present in the
/// ground truth.
pub fn mean_average_precision(
    proposals: &[Proposal],
    gt: &GroundTruth,
    num_classes: usize,
    iou_thresholds: &[f64],
) -> Result<MapReport> {
    if iou_thresholds.is_empty() {
        return Err(Error::invalid("the IoU threshold grid is empty"));
    }
    // Ground truth per (video, class), in snippet units.
    let mut gt_segments: BTreeMap<(String, usize), Vec<(f64, f64)>> = BTreeMap::new();
    let mut gt_count_per_class = vec![0usize; num_classes];
    for video_id in gt.videos.keys() {
        for seg in gt.snippet_segments(video_id)? {
            if seg.label >= num_classes {
                return Err(Error::validation(format!(
                    "ground-truth label {} outside [0, {num_classes})",
                    seg.label
                )));
            }
            gt_count_per_class[seg.label] += 1;
            gt_segments
                .entry((video_id.clone(), seg.label))
                .or_default()
                .push((seg.start, seg.end));
        }
    }
    if gt_segments.is_empty() {
        log::warn!("ground truth is empty; reporting zero mAP");
        return Ok(MapReport {
            iou_thresholds: iou_thresholds.to_vec(),
            map_per_iou: vec![0.0; iou_thresholds.len()],
            average_map: 0.0,
            per_class_ap: vec![vec![None; num_classes]; iou_thresholds.len()],
        });
    }

    let mut per_class_ap: Vec<Vec<Option<f64>>> = Vec::with_capacity(iou_thresholds.len());
    let mut map_per_iou = Vec::with_capacity(iou_thresholds.len());
    for &threshold in iou_thresholds {
        let mut aps: Vec<Option<f64>> = vec![None; num_classes];
        for class in 0..num_classes {
            if gt_count_per_class[class] == 0 {
                continue;
            }
            let mut ranked: Vec<&Proposal> =
                proposals.iter().filter(|p| p.label == class).collect();
            ranked.sort_by(|a, b| by_score_desc(a, b));

            let mut matched: BTreeMap<String, Vec<bool>> = BTreeMap::new();
            let mut cum_tp = 0usize;
            let mut ap = 0.0;
            let mut precisions: Vec<f64> = Vec::with_capacity(ranked.len());
            let mut tp_flags: Vec<bool> = Vec::with_capacity(ranked.len());
            for p in &ranked {
                let segs = gt_segments.get(&(p.video_id.clone(), class));
                let mut is_tp = false;
                if let Some(segs) = segs {
                    let flags = matched
                        .entry(p.video_id.clone())
                        .or_insert_with(|| vec![false; segs.len()]);
                    let mut best: Option<(usize, f64)> = None;
                    for (i, &seg) in segs.iter().enumerate() {
                        if flags[i] {
                            continue;
                        }
                        let iou = temporal_iou((p.start, p.end), seg);
                        if best.map_or(true, |(_, b)| iou > b) {
                            best = Some((i, iou));
                        }
                    }
                    if let Some((i, iou)) = best {
                        if iou >= threshold {
                            flags[i] = true;
                            is_tp = true;
                        }
                    }
                }
                if is_tp {
                    cum_tp += 1;
                }
                tp_flags.push(is_tp);
                precisions.push(cum_tp as f64 / (precisions.len() + 1) as f64);
            }
            // All-point interpolation: at each TP rank, the recall step times
            // the best precision achieved at that rank or later.
            let recall_step = 1.0 / gt_count_per_class[class] as f64;
            let mut best_later = 0.0f64;
            let mut interpolated = vec![0.0; ranked.len()];
            for i in (0..ranked.len()).rev() {
                best_later = best_later.max(precisions[i]);
                interpolated[i] = best_later;
            }
            for i in 0..ranked.len() {
                if tp_flags[i] {
                    ap += recall_step * interpolated[i];
                }
            }
            aps[class] = Some(ap);
        }
        let present: Vec<f64> = aps.iter().flatten().copied().collect();
        map_per_iou.push(present.iter().sum::<f64>() / present.len() as f64);
        per_class_ap.push(aps);
    }
    let average_map = map_per_iou.iter().sum::<f64>() / map_per_iou.len() as f64;
    Ok(MapReport {
        iou_thresholds: iou_thresholds.to_vec(),
        map_per_iou,
        average_map,
        per_class_ap,
    })
}

/// Normalized mutual information with arithmetic-mean normalization. Two
/// single-cluster partitions count as identical (NMI 1).
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "partitions differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::invalid("partitions must be non-empty"));
    }
    let n = a.len() as f64;
    let mut count_a: BTreeMap<usize, usize> = BTreeMap::new();
    let mut count_b: BTreeMap<usize, usize> = BTreeMap::new();
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *count_a.entry(x).or_default() += 1;
        *count_b.entry(y).or_default() += 1;
        *joint.entry((x, y)).or_default() += 1;
    }
    let entropy = |counts: &BTreeMap<usize, usize>| -> f64 {
        counts
            .values()
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let h_a = entropy(&count_a);
    let h_b = entropy(&count_b);
    if h_a == 0.0 && h_b == 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for (&(x, y), &c) in &joint {
        let p_xy = c as f64 / n;
        let p_x = count_a[&x] as f64 / n;
        let p_y = count_b[&y] as f64 / n;
        mi += p_xy * (p_xy / (p_x * p_y)).ln();
    }
    Ok((mi / (0.5 * (h_a + h_b))).clamp(0.0, 1.0))
}
