//! Training: per-video plans, analytic gradients, and the mini-batch loop.
//!
//! A plan freezes every discrete choice of one optimization step (top-k rows,
//! mined pools, sampled triples) so the loss is differentiable given the
//! plan. Gradients are exact for the planned loss; finite differences over
//! the same plan must agree.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{
    contrastive_loss, forward, l_high, mine_snippets, LocalizerParams, LossConfig, MiningConfig,
};
use crate::curriculum::SelectionRound;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{dot, l2_normalize_rows, softmax, AdamState, RealMatrix, SeededRng};

/// One contrastive triple as row indices into the video.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleIndices {
    pub query: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

/// Frozen discrete choices for one video in one step.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoPlan {
    pub label: usize,
    /// Per class: the activation rows feeding the video-level score.
    pub topk: Vec<Vec<usize>>,
    pub action_triple: Option<TripleIndices>,
    pub background_triple: Option<TripleIndices>,
}

/// Parameter gradients in the same layout as [`LocalizerParams`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub embed_weight: RealMatrix,
    pub embed_bias: Vec<f64>,
    pub class_weight: RealMatrix,
    pub class_bias: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(params: &LocalizerParams) -> Self {
        Gradients {
            embed_weight: RealMatrix::zeros(params.feature_dim, params.feature_dim),
            embed_bias: vec![0.0; params.feature_dim],
            class_weight: RealMatrix::zeros(params.feature_dim, params.num_classes),
            class_bias: vec![0.0; params.num_classes],
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.embed_weight.as_slice());
        out.extend_from_slice(&self.embed_bias);
        out.extend_from_slice(self.class_weight.as_slice());
        out.extend_from_slice(&self.class_bias);
        out
    }
}

fn sample_triple(
    query_pool: &[usize],
    positive_pool: &[usize],
    negative_pool: &[usize],
    count: usize,
    rng: &mut SeededRng,
) -> Option<TripleIndices> {
    if query_pool.is_empty() || positive_pool.is_empty() || negative_pool.is_empty() {
        return None;
    }
    let query = query_pool[rng.random_range(0..query_pool.len())];
    let positive = positive_pool[rng.random_range(0..positive_pool.len())];
    let negatives: Vec<usize> = if negative_pool.len() >= count {
        rand::seq::index::sample(rng, negative_pool.len(), count)
            .into_iter()
            .map(|i| negative_pool[i])
            .collect()
    } else {
        (0..count)
            .map(|_| negative_pool[rng.random_range(0..negative_pool.len())])
            .collect()
    };
    Some(TripleIndices {
        query,
        positive,
        negatives,
    })
}

/// Runs the forward pass and freezes all discrete choices for one video.
pub fn plan_video(
    x: &RealMatrix,
    params: &LocalizerParams,
    label: usize,
    mining: &MiningConfig,
    rng: &mut SeededRng,
) -> Result<VideoPlan> {
    if label >= params.num_classes {
        return Err(Error::invalid(format!(
            "label {label} outside [0, {})",
            params.num_classes
        )));
    }
    let maps = forward(x, params, l_high(x.rows()))?;
    let mined = mine_snippets(&maps.attention, mining, rng)?;
    let action_triple = sample_triple(
        &mined.hard_action,
        &mined.easy_action,
        &mined.easy_background,
        mining.t_neg,
        rng,
    );
    let background_triple = sample_triple(
        &mined.hard_background,
        &mined.easy_background,
        &mined.easy_action,
        mining.t_neg,
        rng,
    );
    Ok(VideoPlan {
        label,
        topk: maps.topk_indices,
        action_triple,
        background_triple,
    })
}

struct PlannedForward {
    embedded: RealMatrix,
    activation: RealMatrix,
    class_probs: Vec<f64>,
    features: RealMatrix,
    norms: Vec<f64>,
    l_cls: f64,
    l_ctr: f64,
}

fn planned_forward(
    x: &RealMatrix,
    params: &LocalizerParams,
    cfg: &LossConfig,
    plan: &VideoPlan,
) -> Result<PlannedForward> {
    cfg.validate()?;
    if plan.topk.len() != params.num_classes {
        return Err(Error::shape("plan has wrong class count"));
    }
    let mut embedded = super::affine(x, &params.embed_weight, &params.embed_bias)?;
    super::relu_in_place(&mut embedded);
    let mut activation = super::affine(&embedded, &params.class_weight, &params.class_bias)?;
    super::relu_in_place(&mut activation);

    let scores: Vec<f64> = plan
        .topk
        .iter()
        .enumerate()
        .map(|(k, rows)| {
            rows.iter().map(|&t| activation[(t, k)]).sum::<f64>() / rows.len() as f64
        })
        .collect();
    let class_probs = softmax(&scores)?;
    let l_cls = -class_probs[plan.label].ln();

    let norms: Vec<f64> = (0..embedded.rows())
        .map(|t| dot(embedded.row(t), embedded.row(t)).sqrt())
        .collect();
    let features = if cfg.normalize_contrastive {
        l2_normalize_rows(&embedded)
    } else {
        embedded.clone()
    };
    let mut l_ctr = 0.0;
    for triple in [&plan.action_triple, &plan.background_triple]
        .into_iter()
        .flatten()
    {
        let negs: Vec<&[f64]> = triple.negatives.iter().map(|&i| features.row(i)).collect();
        l_ctr += contrastive_loss(
            features.row(triple.query),
            features.row(triple.positive),
            &negs,
            cfg.temperature,
        )?;
    }
    Ok(PlannedForward {
        embedded,
        activation,
        class_probs,
        features,
        norms,
        l_cls,
        l_ctr,
    })
}

/// Classification and contrastive loss under a frozen plan.
pub fn loss_with_plan(
    x: &RealMatrix,
    params: &LocalizerParams,
    cfg: &LossConfig,
    plan: &VideoPlan,
) -> Result<(f64, f64)> {
    let fwd = planned_forward(x, params, cfg, plan)?;
    Ok((fwd.l_cls, fwd.l_ctr))
}

/// Accumulates exact gradients of `weight_cls·L_cls + weight_ctr·L_ctr` for
/// one planned video. Returns the unweighted loss components.
pub fn backward_with_plan(
    x: &RealMatrix,
    params: &LocalizerParams,
    cfg: &LossConfig,
    plan: &VideoPlan,
    weight_cls: f64,
    weight_ctr: f64,
    grads: &mut Gradients,
) -> Result<(f64, f64)> {
    let fwd = planned_forward(x, params, cfg, plan)?;
    let t = x.rows();
    let d = params.feature_dim;
    let k = params.num_classes;

    // Classification path: d/d_score = p - onehot, spread uniformly over the
    // frozen top-k rows of each class column.
    let mut d_scores: Vec<f64> = fwd.class_probs.clone();
    d_scores[plan.label] -= 1.0;
    let mut d_act = RealMatrix::zeros(t, k);
    for (class, rows) in plan.topk.iter().enumerate() {
        let coef = weight_cls * d_scores[class] / rows.len() as f64;
        for &row in rows {
            d_act[(row, class)] += coef;
        }
    }

    // Contrastive path into the (possibly normalized) feature rows.
    let mut d_feat = RealMatrix::zeros(t, d);
    for triple in [&plan.action_triple, &plan.background_triple]
        .into_iter()
        .flatten()
    {
        let q = fwd.features.row(triple.query).to_vec();
        let pos = fwd.features.row(triple.positive).to_vec();
        let u_pos = dot(&q, &pos) / cfg.temperature;
        let u_negs: Vec<f64> = triple
            .negatives
            .iter()
            .map(|&i| dot(&q, fwd.features.row(i)) / cfg.temperature)
            .collect();
        let m = u_negs.iter().cloned().fold(u_pos, f64::max);
        let denom: f64 =
            (u_pos - m).exp() + u_negs.iter().map(|u| (u - m).exp()).sum::<f64>();
        let w_pos = (u_pos - m).exp() / denom;
        let scale = weight_ctr / cfg.temperature;

        // dL/du_pos = w_pos - 1, dL/du_neg_j = w_j.
        for (i, &qv) in q.iter().enumerate() {
            d_feat[(triple.positive, i)] += scale * (w_pos - 1.0) * qv;
        }
        let mut d_q = vec![0.0; d];
        for (i, &pv) in pos.iter().enumerate() {
            d_q[i] += (w_pos - 1.0) * pv;
        }
        for (j, &neg) in triple.negatives.iter().enumerate() {
            let w_j = (u_negs[j] - m).exp() / denom;
            let neg_row = fwd.features.row(neg);
            for (i, &nv) in neg_row.iter().enumerate() {
                d_q[i] += w_j * nv;
                d_feat[(neg, i)] += scale * w_j * q[i];
            }
        }
        for (i, &g) in d_q.iter().enumerate() {
            d_feat[(triple.query, i)] += scale * g;
        }
    }

    // Back through row normalization: for y = v/|v|,
    // dL/dv = (dL/dy - (y·dL/dy) y) / |v|. Zero rows stay zero.
    let mut d_emb = RealMatrix::zeros(t, d);
    if cfg.normalize_contrastive {
        for row in 0..t {
            if fwd.norms[row] > 0.0 {
                let y = fwd.features.row(row);
                let dy = d_feat.row(row);
                let proj = dot(y, dy);
                for i in 0..d {
                    d_emb[(row, i)] = (dy[i] - proj * y[i]) / fwd.norms[row];
                }
            }
        }
    } else {
        d_emb = d_feat;
    }

    // Classifier layer; ReLU subgradient at 0 is 0 (strict > masks).
    let mut d_zc = d_act;
    for row in 0..t {
        for c in 0..k {
            if fwd.activation[(row, c)] <= 0.0 {
                d_zc[(row, c)] = 0.0;
            }
        }
    }
    let dw_c = fwd.embedded.transpose().matmul(&d_zc)?;
    for i in 0..d * k {
        grads.class_weight.as_mut_slice()[i] += dw_c.as_slice()[i];
    }
    for row in 0..t {
        for c in 0..k {
            grads.class_bias[c] += d_zc[(row, c)];
        }
    }
    let d_emb_cls = d_zc.matmul(&params.class_weight.transpose())?;
    for i in 0..t * d {
        d_emb.as_mut_slice()[i] += d_emb_cls.as_slice()[i];
    }

    // Embedding layer.
    let mut d_ze = d_emb;
    for row in 0..t {
        for i in 0..d {
            if fwd.embedded[(row, i)] <= 0.0 {
                d_ze[(row, i)] = 0.0;
            }
        }
    }
    let dw_e = x.transpose().matmul(&d_ze)?;
    for i in 0..d * d {
        grads.embed_weight.as_mut_slice()[i] += dw_e.as_slice()[i];
    }
    for row in 0..t {
        for i in 0..d {
            grads.embed_bias[i] += d_ze[(row, i)];
        }
    }

    Ok((fwd.l_cls, fwd.l_ctr))
}

/// Mining/optimizer settings for a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub loss: LossConfig,
    pub tau_c: f64,
    /// Overrides for the length-derived morphology margins.
    pub erosion_margin: Option<usize>,
    pub dilation_margin: Option<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            loss: LossConfig::default(),
            tau_c: 0.5,
            erosion_margin: None,
            dilation_margin: None,
            learning_rate: 1e-4,
            batch_size: 16,
        }
    }
}

impl TrainSettings {
    pub fn mining_for(&self, t: usize) -> Result<MiningConfig> {
        let mut cfg = MiningConfig::for_video_length(t)?;
        cfg.tau_c = self.tau_c;
        if let Some(m) = self.erosion_margin {
            cfg.erosion_margin = m;
        }
        if let Some(m) = self.dilation_margin {
            cfg.dilation_margin = m;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub adam: AdamState,
}

/// Shuffled mini-batch Adam over the selected (video, pseudo-label) pairs.
/// The batch loss is mean classification plus λ times summed contrastive.
pub fn train_iteration(
    dataset: &Dataset,
    selection: &SelectionRound,
    params: &mut LocalizerParams,
    settings: &TrainSettings,
    epochs: usize,
    rng: &mut SeededRng,
) -> Result<TrainOutcome> {
    settings.loss.validate()?;
    if settings.batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let mut adam = AdamState::new(params.param_count(), settings.learning_rate);
    if selection.selected.is_empty() {
        log::warn!(
            "iteration {}: empty selection, skipping training",
            selection.iteration
        );
        return Ok(TrainOutcome {
            epoch_losses: Vec::new(),
            adam,
        });
    }
    for &(video, _) in &selection.selected {
        if video >= dataset.len() {
            return Err(Error::invalid(format!(
                "selected video index {video} outside dataset of {}",
                dataset.len()
            )));
        }
    }

    let lambda = settings.loss.lambda;
    let mut flat = params.flatten();
    let mut epoch_losses = Vec::with_capacity(epochs);
    for _epoch in 0..epochs {
        let mut order = selection.selected.clone();
        order.shuffle(rng);
        let mut batch_losses = Vec::new();
        for chunk in order.chunks(settings.batch_size) {
            let mut grads = Gradients::zeros_like(params);
            let weight_cls = 1.0 / chunk.len() as f64;
            let mut cls_sum = 0.0;
            let mut ctr_sum = 0.0;
            for &(video, label) in chunk {
                let x = &dataset.videos[video].features;
                let mining = settings.mining_for(x.rows())?;
                let plan = plan_video(x, params, label, &mining, rng)?;
                let (cls, ctr) =
                    backward_with_plan(x, params, &settings.loss, &plan, weight_cls, lambda, &mut grads)?;
                cls_sum += cls;
                ctr_sum += ctr;
            }
            adam.apply(&mut flat, &grads.flatten())?;
            params.load_flat(&flat)?;
            batch_losses.push(cls_sum / chunk.len() as f64 + lambda * ctr_sum);
        }
        epoch_losses.push(batch_losses.iter().sum::<f64>() / batch_losses.len() as f64);
    }
    Ok(TrainOutcome { epoch_losses, adam })
}
