//! The full iterative loop: cluster, refine, select, train, evaluate.
//!
//! Each iteration builds attention maps (uniform on the first pass, from the
//! trained head afterwards), aggregates global features, clusters them,
//! refines the cluster confidences, selects a growing top-ranked fraction of
//! each cluster, and trains the localization head on that subset for a
//! proportional number of epochs. A final inference pass produces proposals
//! and, when ground truth is available, mAP and NMI.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cci::{refined_distance_matrix, CciConfig, EntityUniverse, RefinedRanking};
use crate::clustering::{
    build_global_features, euclidean_confidence_matrix, kmeans, snippetwise_pseudolabels,
    uniform_attention,
};
use crate::curriculum::{
    assign_pseudolabels, epochs_for_iteration, filtered_rankings, select_instances,
    selection_rate, PseudoLabelSet, ScheduleMode, SelectionSchedule,
};
use crate::dataset::{
    generate_synthetic, load_features, load_ground_truth, Dataset, GroundTruth, SynthConfig,
};
use crate::error::{Error, Result};
use crate::inference::{
    default_iou_grid, default_tau_a_grid, generate_proposals, map_clusters_to_labels,
    mean_average_precision, nmi, nms, MapReport, Proposal,
};
use crate::localizer::{
    forward, l_high, save_checkpoint, train_iteration, LocalizerParams, LossConfig, TrainSettings,
};
use crate::numerics::{argsort_ascending, AdamState, RealMatrix, SeededRng};

/// Every knob of the loop; serializable so a resolved copy reproduces a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Binary feature file; mutually exclusive with `synth`.
    pub features: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    /// Converts second-based ground truth into snippet units.
    pub seconds_per_snippet: Option<f64>,
    pub synth: Option<SynthConfig>,
    /// Number of action classes; inferred from `synth` when absent.
    pub num_classes: Option<usize>,

    pub i_max: usize,
    pub mode: ScheduleMode,
    pub mu: f64,

    pub gamma: f64,
    pub l: usize,
    pub l_expansion: usize,
    pub query_expansion: bool,

    pub disable_cci: bool,
    pub disable_iis: bool,
    pub snippet_wise: bool,
    /// Top-attention snippets per video fed to snippet-wise clustering.
    pub snippet_top_k: usize,

    pub e_max: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub temperature: f64,
    pub normalize_contrastive: bool,
    pub tau_c: f64,
    pub erosion_margin: Option<usize>,
    pub dilation_margin: Option<usize>,
    /// Re-draw head weights every iteration instead of warm-starting.
    pub reinit_each_iteration: bool,

    pub class_threshold: f64,
    pub tau_a_grid: Vec<f64>,
    pub nms_threshold: f64,
    pub iou_thresholds: Vec<f64>,
    pub eval_each_iteration: bool,

    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub overwrite: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            features: None,
            ground_truth: None,
            seconds_per_snippet: None,
            synth: None,
            num_classes: None,
            i_max: 6,
            mode: ScheduleMode::Constant,
            mu: 1.05,
            gamma: 0.7,
            l: 20,
            l_expansion: 6,
            query_expansion: true,
            disable_cci: false,
            disable_iis: false,
            snippet_wise: false,
            snippet_top_k: 5,
            e_max: 20,
            batch_size: 16,
            learning_rate: 1e-4,
            lambda: 0.005,
            temperature: 0.07,
            normalize_contrastive: true,
            tau_c: 0.5,
            erosion_margin: None,
            dilation_margin: None,
            reinit_each_iteration: false,
            class_threshold: 0.1,
            tau_a_grid: default_tau_a_grid(),
            nms_threshold: 0.7,
            iou_thresholds: default_iou_grid(),
            eval_each_iteration: true,
            seed: 0,
            out_dir: None,
            overwrite: false,
        }
    }
}

impl PipelineConfig {
    /// Validates and materializes inferred fields (currently `num_classes`).
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = self.clone();
        match (&cfg.features, &cfg.synth) {
            (Some(_), Some(_)) => {
                return Err(Error::invalid(
                    "configure either a feature file or a synthetic dataset, not both",
                ))
            }
            (None, None) => {
                return Err(Error::invalid(
                    "no data source: set `features` or `synth`",
                ))
            }
            (None, Some(synth)) => match cfg.num_classes {
                None => cfg.num_classes = Some(synth.num_classes),
                Some(k) if k != synth.num_classes => {
                    return Err(Error::invalid(format!(
                        "num_classes {k} conflicts with synthetic num_classes {}",
                        synth.num_classes
                    )))
                }
                Some(_) => {}
            },
            (Some(_), None) => {
                if cfg.num_classes.is_none() {
                    return Err(Error::invalid("num_classes is required with a feature file"));
                }
            }
        }
        if cfg.num_classes.unwrap() < 2 {
            return Err(Error::invalid("need at least 2 classes"));
        }
        if cfg.i_max == 0 {
            return Err(Error::invalid("i_max must be at least 1"));
        }
        // Schedule construction validates mode-specific constraints (μ > 1).
        cfg.schedule()?;
        if !(0.0..=1.0).contains(&cfg.gamma) {
            return Err(Error::invalid(format!("gamma must lie in [0, 1], got {}", cfg.gamma)));
        }
        if cfg.l == 0 || cfg.l_expansion == 0 {
            return Err(Error::invalid("l and l_expansion must be at least 1"));
        }
        if cfg.snippet_wise && cfg.snippet_top_k == 0 {
            return Err(Error::invalid("snippet_top_k must be at least 1"));
        }
        if cfg.e_max == 0 || cfg.batch_size == 0 {
            return Err(Error::invalid("e_max and batch_size must be at least 1"));
        }
        if !(cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive and finite"));
        }
        if cfg.tau_a_grid.is_empty() || cfg.iou_thresholds.is_empty() {
            return Err(Error::invalid("tau_a_grid and iou_thresholds must be non-empty"));
        }
        if !(0.0..=1.0).contains(&cfg.nms_threshold) {
            return Err(Error::invalid("nms_threshold must lie in [0, 1]"));
        }
        for &t in &cfg.iou_thresholds {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::invalid(format!("IoU threshold {t} outside (0, 1]")));
            }
        }
        // λ, temperature, and τ_c are validated by the loss settings below.
        cfg.train_settings().loss.validate()?;
        Ok(cfg)
    }

    fn schedule(&self) -> Result<SelectionSchedule> {
        match self.mode {
            ScheduleMode::Constant => SelectionSchedule::constant(self.i_max),
            ScheduleMode::Variable => SelectionSchedule::variable(self.i_max, self.mu),
        }
    }

    fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            loss: LossConfig {
                lambda: self.lambda,
                temperature: self.temperature,
                normalize_contrastive: self.normalize_contrastive,
            },
            tau_c: self.tau_c,
            erosion_margin: self.erosion_margin,
            dilation_margin: self.dilation_margin,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
        }
    }

    fn cci_config(&self) -> CciConfig {
        CciConfig {
            gamma: self.gamma,
            l: self.l,
            l_expansion: self.l_expansion,
            query_expansion: self.query_expansion,
        }
    }
}

/// Everything measured about one completed iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub beta: f64,
    pub selected_count: usize,
    pub per_cluster_counts: Vec<usize>,
    pub epochs: usize,
    /// Mean batch loss of the final epoch; absent when nothing trained.
    pub train_loss: Option<f64>,
    pub nmi_full: Option<f64>,
    pub nmi_selected: Option<f64>,
    pub accuracy_full: Option<f64>,
    pub accuracy_selected: Option<f64>,
    pub map_50: Option<f64>,
    pub map_avg: Option<f64>,
    pub duration_ms: u128,
}

/// Final-pass metrics; fields stay `None` without ground truth.
#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub map: Option<MapReport>,
    pub nmi: Option<f64>,
    pub num_proposals: usize,
    /// Majority mapping from cluster index to ground-truth class.
    pub cluster_to_label: Option<Vec<usize>>,
}

pub struct PipelineOutput {
    pub config: PipelineConfig,
    pub records: Vec<IterationRecord>,
    pub final_eval: EvalSummary,
    pub proposals: Vec<Proposal>,
    pub params: LocalizerParams,
    pub adam: AdamState,
}

fn load_inputs(cfg: &PipelineConfig) -> Result<(Dataset, Option<GroundTruth>)> {
    if let Some(synth) = &cfg.synth {
        let (dataset, gt) = generate_synthetic(synth)?;
        return Ok((dataset, Some(gt)));
    }
    let k = cfg.num_classes.unwrap();
    let dataset = load_features(cfg.features.as_ref().unwrap(), k)?;
    let gt = match &cfg.ground_truth {
        Some(path) => {
            let gt = load_ground_truth(path, k, cfg.seconds_per_snippet)?;
            gt.validate_against(&dataset)?;
            Some(gt)
        }
        None => None,
    };
    Ok((dataset, gt))
}

/// Permutation sending current cluster ids onto the previous iteration's
/// label ids by greedy maximal overlap; ties favor lower indices.
fn alignment_permutation(current: &[usize], previous: &[usize], k: usize) -> Vec<usize> {
    debug_assert_eq!(current.len(), previous.len());
    let mut overlap = vec![vec![0usize; k]; k];
    for (&c, &p) in current.iter().zip(previous) {
        overlap[c][p] += 1;
    }
    let mut perm = vec![usize::MAX; k];
    let mut taken = vec![false; k];
    for _ in 0..k {
        let mut best: Option<(usize, usize, usize)> = None;
        for (c, row) in overlap.iter().enumerate() {
            if perm[c] != usize::MAX {
                continue;
            }
            for (p, &count) in row.iter().enumerate() {
                if taken[p] {
                    continue;
                }
                if best.is_none_or(|(n, _, _)| count > n) {
                    best = Some((count, c, p));
                }
            }
        }
        let (_, c, p) = best.unwrap();
        perm[c] = p;
        taken[p] = true;
    }
    perm
}

fn permute_center_rows(centers: &RealMatrix, perm: &[usize]) -> RealMatrix {
    let mut out = RealMatrix::zeros(centers.rows(), centers.cols());
    for (c, &target) in perm.iter().enumerate() {
        out.row_mut(target).copy_from_slice(centers.row(c));
    }
    out
}

/// Centroid of each label group; empty groups fall back to the grand mean.
fn group_centroids(features: &RealMatrix, labels: &[usize], k: usize) -> RealMatrix {
    let dim = features.cols();
    let mut sums = RealMatrix::zeros(k, dim);
    let mut counts = vec![0usize; k];
    for (n, &label) in labels.iter().enumerate() {
        counts[label] += 1;
        for (dst, &x) in sums.row_mut(label).iter_mut().zip(features.row(n)) {
            *dst += x;
        }
    }
    let grand: Vec<f64> = (0..dim)
        .map(|d| (0..features.rows()).map(|n| features[(n, d)]).sum::<f64>() / features.rows() as f64)
        .collect();
    for label in 0..k {
        if counts[label] == 0 {
            log::warn!("snippet-wise cluster {label} is empty; centering on the grand mean");
            sums.row_mut(label).copy_from_slice(&grand);
        } else {
            let inv = 1.0 / counts[label] as f64;
            for v in sums.row_mut(label) {
                *v *= inv;
            }
        }
    }
    sums
}

fn identity_ranking(d_e: &RealMatrix) -> RefinedRanking {
    let rankings = (0..d_e.rows()).map(|c| argsort_ascending(d_e.row(c))).collect();
    RefinedRanking {
        refined: d_e.clone(),
        gamma: 0.0,
        rankings,
    }
}

/// (nmi, accuracy) of the pseudo-labels against ground truth over `subset`,
/// using the majority `mapping` for accuracy. Videos without a ground-truth
/// label are skipped; an empty intersection yields `None`.
fn subset_metrics(
    pseudo: &[usize],
    mapping: &[usize],
    gt_labels: &[Option<usize>],
    subset: &[usize],
) -> Result<(Option<f64>, Option<f64>)> {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    let mut hits = 0usize;
    for &v in subset {
        if let Some(g) = gt_labels[v] {
            pred.push(pseudo[v]);
            truth.push(g);
            if mapping[pseudo[v]] == g {
                hits += 1;
            }
        }
    }
    if pred.is_empty() {
        return Ok((None, None));
    }
    Ok((
        Some(nmi(&pred, &truth)?),
        Some(hits as f64 / pred.len() as f64),
    ))
}

/// Forward pass, proposal generation, NMS, and metric computation over the
/// whole dataset. Proposal labels are translated through the majority
/// cluster-to-class mapping when ground truth exists; otherwise they stay
/// raw cluster indices.
fn infer_and_eval(
    dataset: &Dataset,
    gt: Option<&GroundTruth>,
    gt_labels: Option<&[Option<usize>]>,
    params: &LocalizerParams,
    cfg: &PipelineConfig,
    assignments: &[usize],
) -> Result<(Vec<Proposal>, EvalSummary)> {
    let k = cfg.num_classes.unwrap();
    let mapping = match gt_labels {
        Some(labels) => Some(map_clusters_to_labels(assignments, labels, k, k)?),
        None => None,
    };
    let mut proposals = Vec::new();
    for video in &dataset.videos {
        let maps = forward(&video.features, params, l_high(video.num_snippets()))?;
        let raw = generate_proposals(&video.video_id, &maps, cfg.class_threshold, &cfg.tau_a_grid)?;
        for mut p in nms(&raw, cfg.nms_threshold) {
            if let Some(mapping) = &mapping {
                p.label = mapping[p.label];
            }
            proposals.push(p);
        }
    }
    let map = match gt {
        Some(gt) => Some(mean_average_precision(&proposals, gt, k, &cfg.iou_thresholds)?),
        None => None,
    };
    let nmi_full = match gt_labels {
        Some(labels) => {
            let all: Vec<usize> = (0..dataset.len()).collect();
            subset_metrics(assignments, mapping.as_ref().unwrap(), labels, &all)?.0
        }
        None => None,
    };
    Ok((
        proposals,
        EvalSummary {
            map,
            nmi: nmi_full,
            num_proposals: 0,
            cluster_to_label: mapping,
        },
    ))
}

fn map_at(report: &MapReport, threshold: f64) -> Option<f64> {
    report
        .iou_thresholds
        .iter()
        .position(|&t| (t - threshold).abs() < 1e-9)
        .map(|i| report.map_per_iou[i])
}

/// Runs the complete loop and the final evaluation. Reports are written only
/// when the resolved config names an output directory.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutput> {
    let cfg = config.resolve()?;
    let (dataset, gt) = load_inputs(&cfg)?;
    let k = cfg.num_classes.unwrap();
    if dataset.len() < k {
        return Err(Error::invalid(format!(
            "{} videos cannot form {k} clusters",
            dataset.len()
        )));
    }
    let gt_labels: Option<Vec<Option<usize>>> = match &gt {
        Some(gt) => Some(gt.majority_labels(&dataset)?),
        None => None,
    };
    let schedule = cfg.schedule()?;
    let settings = cfg.train_settings();

    let mut params = LocalizerParams::init(
        dataset.feature_dim(),
        k,
        &mut SeededRng::for_purpose(cfg.seed, 0, "init"),
    )?;
    let mut adam = AdamState::new(params.param_count(), cfg.learning_rate);
    let mut previous_labels: Option<Vec<usize>> = None;
    let mut last_assignments = vec![0usize; dataset.len()];
    let mut records = Vec::with_capacity(cfg.i_max);

    for i in 1..=cfg.i_max {
        let started = Instant::now();
        let record = (|| -> Result<IterationRecord> {
            let attention: Vec<Vec<f64>> = if i == 1 {
                dataset
                    .videos
                    .iter()
                    .map(|v| uniform_attention(v.num_snippets()))
                    .collect::<Result<_>>()?
            } else {
                dataset
                    .videos
                    .iter()
                    .map(|v| Ok(forward(&v.features, &params, l_high(v.num_snippets()))?.attention))
                    .collect::<Result<_>>()?
            };
            let globals = build_global_features(&dataset, &attention, i)?;
            let mut kmeans_rng = SeededRng::for_purpose(cfg.seed, i as u64, "kmeans");

            let (mut centers, mut snippet_labels) = if cfg.snippet_wise {
                let labels = snippetwise_pseudolabels(
                    &dataset,
                    &attention,
                    cfg.snippet_top_k,
                    k,
                    &mut kmeans_rng,
                )?;
                (group_centroids(&globals.features, &labels, k), Some(labels))
            } else {
                let state = kmeans(&globals.features, k, &mut kmeans_rng)?;
                last_assignments = state.assignments;
                (state.centers, None)
            };

            // Keep cluster ids stable across iterations so the warm-started
            // classifier head retains class meaning.
            if let Some(previous) = &previous_labels {
                let raw = snippet_labels.as_ref().unwrap_or(&last_assignments);
                let perm = alignment_permutation(raw, previous, k);
                centers = permute_center_rows(&centers, &perm);
                if let Some(labels) = &mut snippet_labels {
                    for label in labels.iter_mut() {
                        *label = perm[*label];
                    }
                }
            }

            let d_e = euclidean_confidence_matrix(&centers, &globals.features)?;
            let refined = if cfg.disable_cci {
                identity_ranking(&d_e)
            } else {
                let universe = EntityUniverse::new(&centers, &globals.features)?;
                refined_distance_matrix(&d_e, &universe, &cfg.cci_config())?
            };

            let pseudo = match snippet_labels {
                Some(labels) => {
                    let distances = labels
                        .iter()
                        .enumerate()
                        .map(|(v, &c)| refined.refined[(c, v)])
                        .collect();
                    PseudoLabelSet {
                        labels,
                        distances,
                        num_clusters: k,
                    }
                }
                None => assign_pseudolabels(&refined),
            };
            last_assignments = pseudo.labels.clone();
            previous_labels = Some(pseudo.labels.clone());

            let filtered = filtered_rankings(&refined.rankings, &pseudo)?;
            let beta = if cfg.disable_iis {
                1.0
            } else {
                selection_rate(i, &schedule)?
            };
            let selection = select_instances(&filtered, beta, i)?;
            if i == 1 && selection.selected.len() < k {
                log::warn!(
                    "first-round selection holds {} videos for {k} clusters; \
                     some classes start untrained",
                    selection.selected.len()
                );
            }
            let epochs = epochs_for_iteration(cfg.e_max, selection.selected.len(), dataset.len())?;

            if cfg.reinit_each_iteration {
                params = LocalizerParams::init(
                    dataset.feature_dim(),
                    k,
                    &mut SeededRng::for_purpose(cfg.seed, i as u64, "init"),
                )?;
            }
            let outcome = train_iteration(
                &dataset,
                &selection,
                &mut params,
                &settings,
                epochs,
                &mut SeededRng::for_purpose(cfg.seed, i as u64, "train"),
            )?;
            adam = outcome.adam;

            let (nmi_full, nmi_selected, accuracy_full, accuracy_selected) = match &gt_labels {
                Some(labels) => {
                    let mapping = map_clusters_to_labels(&pseudo.labels, labels, k, k)?;
                    let all: Vec<usize> = (0..dataset.len()).collect();
                    let (nmi_f, acc_f) = subset_metrics(&pseudo.labels, &mapping, labels, &all)?;
                    let chosen: Vec<usize> =
                        selection.selected.iter().map(|&(v, _)| v).collect();
                    let (nmi_s, acc_s) = subset_metrics(&pseudo.labels, &mapping, labels, &chosen)?;
                    (nmi_f, nmi_s, acc_f, acc_s)
                }
                None => (None, None, None, None),
            };

            let (map_50, map_avg) = if cfg.eval_each_iteration && gt.is_some() {
                let (_, eval) = infer_and_eval(
                    &dataset,
                    gt.as_ref(),
                    gt_labels.as_deref(),
                    &params,
                    &cfg,
                    &pseudo.labels,
                )?;
                let report = eval.map.unwrap();
                (map_at(&report, 0.5), Some(report.average_map))
            } else {
                (None, None)
            };

            Ok(IterationRecord {
                iteration: i,
                beta,
                selected_count: selection.selected.len(),
                per_cluster_counts: selection.per_cluster_counts,
                epochs,
                train_loss: outcome.epoch_losses.last().copied(),
                nmi_full,
                nmi_selected,
                accuracy_full,
                accuracy_selected,
                map_50,
                map_avg,
                duration_ms: started.elapsed().as_millis(),
            })
        })()
        .map_err(|e| e.at_iteration(i))?;
        records.push(record);
    }

    let (proposals, mut final_eval) = infer_and_eval(
        &dataset,
        gt.as_ref(),
        gt_labels.as_deref(),
        &params,
        &cfg,
        &last_assignments,
    )?;
    final_eval.num_proposals = proposals.len();

    let output = PipelineOutput {
        config: cfg.clone(),
        records,
        final_eval,
        proposals,
        params,
        adam,
    };
    if let Some(dir) = &cfg.out_dir {
        emit_reports(&output, dir, cfg.overwrite)?;
    }
    Ok(output)
}

fn format_opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

/// CSV with one row per iteration; the duration column is last so diffs can
/// exclude it cheaply.
pub fn iterations_csv(records: &[IterationRecord]) -> String {
    let mut out = String::from(
        "iteration,beta,selected_count,per_cluster_counts,epochs,train_loss,\
         nmi_full,nmi_selected,accuracy_full,accuracy_selected,map_50,map_avg,duration_ms\n",
    );
    for r in records {
        let counts = r
            .per_cluster_counts
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.iteration,
            r.beta,
            r.selected_count,
            counts,
            r.epochs,
            format_opt(r.train_loss),
            format_opt(r.nmi_full),
            format_opt(r.nmi_selected),
            format_opt(r.accuracy_full),
            format_opt(r.accuracy_selected),
            format_opt(r.map_50),
            format_opt(r.map_avg),
            r.duration_ms,
        ));
    }
    out
}

fn proposals_csv(proposals: &[Proposal]) -> String {
    let mut out = String::from("video_id,label,start,end,score\n");
    for p in proposals {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.video_id, p.label, p.start, p.end, p.score
        ));
    }
    out
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes iterations.csv, final_eval.json, config_resolved.json,
/// proposals.csv, and checkpoint.bin into `out_dir`. Existing files are an
/// error unless `overwrite` is set; each file lands via rename so a crash
/// never leaves a torn report.
pub fn emit_reports(output: &PipelineOutput, out_dir: &Path, overwrite: bool) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let names = [
        "iterations.csv",
        "final_eval.json",
        "config_resolved.json",
        "proposals.csv",
        "checkpoint.bin",
    ];
    if !overwrite {
        for name in names {
            let path = out_dir.join(name);
            if path.exists() {
                return Err(Error::validation(format!(
                    "{} already exists; pass overwrite to replace it",
                    path.display()
                )));
            }
        }
    }
    write_atomic(
        &out_dir.join("iterations.csv"),
        iterations_csv(&output.records).as_bytes(),
    )?;
    let final_eval = serde_json::to_string_pretty(&output.final_eval)
        .map_err(|e| Error::validation(format!("final_eval serialization failed: {e}")))?;
    write_atomic(&out_dir.join("final_eval.json"), final_eval.as_bytes())?;
    let config = serde_json::to_string_pretty(&output.config)
        .map_err(|e| Error::validation(format!("config serialization failed: {e}")))?;
    write_atomic(&out_dir.join("config_resolved.json"), config.as_bytes())?;
    write_atomic(
        &out_dir.join("proposals.csv"),
        proposals_csv(&output.proposals).as_bytes(),
    )?;
    let tmp = out_dir.join("checkpoint.tmp");
    save_checkpoint(
        &tmp,
        &output.params,
        &output.adam,
        output.records.len(),
    )?;
    std::fs::rename(&tmp, out_dir.join("checkpoint.bin"))?;
    Ok(())
}
