//! Incremental instance selection: pseudo-labels from refined distances,
//! per-cluster filtered rankings, and a growing easy-first training subset.
//!
//! The selection rate starts small and reaches exactly 1 at the final
//! iteration, either linearly (`constant`) or along a convex curve
//! (`variable`, concavity μ). Every cluster uses the same rate.

use serde::{Deserialize, Serialize};

use crate::cci::RefinedRanking;
use crate::error::{Error, Result};

/// Per-video pseudo-label with the distance to its assigned center.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    pub labels: Vec<usize>,
    pub distances: Vec<f64>,
    pub num_clusters: usize,
}

/// Per cluster: videos labeled with that cluster, in refined-ranking order.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredRanking {
    pub per_cluster: Vec<Vec<usize>>,
}

impl FilteredRanking {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.per_cluster.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.per_cluster.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    Constant,
    Variable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionSchedule {
    pub mode: ScheduleMode,
    pub i_max: usize,
    /// Concavity for variable mode; must exceed 1 there, unused otherwise.
    pub mu: f64,
}

impl SelectionSchedule {
    pub fn constant(i_max: usize) -> Result<Self> {
        if i_max == 0 {
            return Err(Error::invalid("schedule needs at least one iteration"));
        }
        Ok(SelectionSchedule {
            mode: ScheduleMode::Constant,
            i_max,
            mu: 1.0,
        })
    }

    pub fn variable(i_max: usize, mu: f64) -> Result<Self> {
        if i_max == 0 {
            return Err(Error::invalid("schedule needs at least one iteration"));
        }
        if !(mu > 1.0) || !mu.is_finite() {
            return Err(Error::invalid(format!(
                "variable schedule needs mu > 1, got {mu}"
            )));
        }
        Ok(SelectionSchedule {
            mode: ScheduleMode::Variable,
            i_max,
            mu,
        })
    }
}

/// One selection round: the chosen (video, label) pairs and bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRound {
    pub iteration: usize,
    pub rate: f64,
    pub selected: Vec<(usize, usize)>,
    pub per_cluster_counts: Vec<usize>,
}

/// Labels each video with its nearest center by refined distance; ties go to
/// the lower center index.
pub fn assign_pseudolabels(refined: &RefinedRanking) -> PseudoLabelSet {
    let k = refined.refined.rows();
    let n = refined.refined.cols();
    let mut labels = Vec::with_capacity(n);
    let mut distances = Vec::with_capacity(n);
    for v in 0..n {
        let mut best = (0usize, f64::INFINITY);
        for c in 0..k {
            let d = refined.refined[(c, v)];
            if d < best.1 {
                best = (c, d);
            }
        }
        labels.push(best.0);
        distances.push(best.1);
    }
    PseudoLabelSet {
        labels,
        distances,
        num_clusters: k,
    }
}

/// Keeps only same-labeled videos in each center's ranking, preserving order.
pub fn filtered_rankings(
    rankings: &[Vec<usize>],
    labels: &PseudoLabelSet,
) -> Result<FilteredRanking> {
    if rankings.len() != labels.num_clusters {
        return Err(Error::invalid(format!(
            "{} rankings for {} clusters",
            rankings.len(),
            labels.num_clusters
        )));
    }
    let per_cluster: Vec<Vec<usize>> = rankings
        .iter()
        .enumerate()
        .map(|(k, ranking)| {
            ranking
                .iter()
                .copied()
                .filter(|&v| labels.labels[v] == k)
                .collect()
        })
        .collect();
    let filtered = FilteredRanking { per_cluster };
    debug_assert_eq!(filtered.total(), labels.labels.len());
    Ok(filtered)
}

/// Selection rate β_i for iteration `i` (1-based).
pub fn selection_rate(i: usize, schedule: &SelectionSchedule) -> Result<f64> {
    if i == 0 || i > schedule.i_max {
        return Err(Error::invalid(format!(
            "iteration {i} outside [1, {}]",
            schedule.i_max
        )));
    }
    Ok(match schedule.mode {
        ScheduleMode::Constant => i as f64 / schedule.i_max as f64,
        ScheduleMode::Variable => {
            (schedule.mu.powi(i as i32) - 1.0) / (schedule.mu.powi(schedule.i_max as i32) - 1.0)
        }
    })
}

/// Takes the top ⌊β·n_k⌋ prefix of every cluster's filtered ranking.
pub fn select_instances(
    filtered: &FilteredRanking,
    rate: f64,
    iteration: usize,
) -> Result<SelectionRound> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::invalid(format!(
            "selection rate must lie in [0, 1], got {rate}"
        )));
    }
    let mut selected = Vec::new();
    let mut per_cluster_counts = Vec::with_capacity(filtered.per_cluster.len());
    for (k, ranking) in filtered.per_cluster.iter().enumerate() {
        let count = (rate * ranking.len() as f64).floor() as usize;
        per_cluster_counts.push(count);
        for &v in ranking.iter().take(count) {
            selected.push((v, k));
        }
    }
    Ok(SelectionRound {
        iteration,
        rate,
        selected,
        per_cluster_counts,
    })
}

/// Training epochs proportional to the selected fraction: ⌈E_max·sel/N⌉, at
/// least 1.
pub fn epochs_for_iteration(e_max: usize, selected_count: usize, total: usize) -> Result<usize> {
    if total == 0 || e_max == 0 {
        return Err(Error::invalid("epoch budget needs N >= 1 and E_max >= 1"));
    }
    if selected_count > total {
        return Err(Error::invalid(format!(
            "selected {selected_count} exceeds dataset size {total}"
        )));
    }
    let epochs = (e_max * selected_count).div_ceil(total);
    Ok(epochs.max(1))
}
