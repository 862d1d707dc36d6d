//! The trainable localization head.
//!
//! Two linear layers with ReLU: snippet embedding (2d -> 2d) and a
//! class-specific activation map (2d -> K). The class-agnostic attention is
//! the sigmoid of each row sum of the activation map. Video-level class
//! scores average the top-l_high activations per class; training combines a
//! cross-entropy term with a snippet-level contrastive term over mined hard
//! and easy snippets.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use train::{
    backward_with_plan, loss_with_plan, plan_video, train_iteration, Gradients, TrainOutcome,
    TrainSettings, TripleIndices, VideoPlan,
};

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{
    dot, sigmoid, softmax, topk_indices_per_column, RealMatrix, SeededRng,
};

/// Embedding layer (2d -> 2d) and classifier layer (2d -> K).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizerParams {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub embed_weight: RealMatrix,
    pub embed_bias: Vec<f64>,
    pub class_weight: RealMatrix,
    pub class_bias: Vec<f64>,
}

impl LocalizerParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(feature_dim: usize, num_classes: usize, rng: &mut SeededRng) -> Result<Self> {
        if feature_dim == 0 || num_classes == 0 {
            return Err(Error::invalid("params need feature_dim >= 1 and K >= 1"));
        }
        let mut glorot = |fan_in: usize, fan_out: usize, rows: usize, cols: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            RealMatrix::from_fn(rows, cols, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * bound)
        };
        let embed_weight = glorot(feature_dim, feature_dim, feature_dim, feature_dim);
        let class_weight = glorot(feature_dim, num_classes, feature_dim, num_classes);
        Ok(LocalizerParams {
            feature_dim,
            num_classes,
            embed_weight,
            embed_bias: vec![0.0; feature_dim],
            class_weight,
            class_bias: vec![0.0; num_classes],
        })
    }

    pub fn param_count(&self) -> usize {
        self.feature_dim * self.feature_dim
            + self.feature_dim
            + self.feature_dim * self.num_classes
            + self.num_classes
    }

    /// Flat layout: embed weights row-major, embed bias, class weights
    /// row-major, class bias. Gradients use the same layout.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(self.embed_weight.as_slice());
        out.extend_from_slice(&self.embed_bias);
        out.extend_from_slice(self.class_weight.as_slice());
        out.extend_from_slice(&self.class_bias);
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let d = self.feature_dim;
        let k = self.num_classes;
        let mut at = 0usize;
        self.embed_weight = RealMatrix::from_vec(d, d, flat[at..at + d * d].to_vec())?;
        at += d * d;
        self.embed_bias = flat[at..at + d].to_vec();
        at += d;
        self.class_weight = RealMatrix::from_vec(d, k, flat[at..at + d * k].to_vec())?;
        at += d * k;
        self.class_bias = flat[at..at + k].to_vec();
        Ok(())
    }
}

/// All per-video forward products.
#[derive(Debug, Clone)]
pub struct ActivationMaps {
    pub embedded: RealMatrix,
    pub activation: RealMatrix,
    /// Class-agnostic attention, sigmoid of activation row sums.
    pub attention: Vec<f64>,
    pub video_scores: Vec<f64>,
    pub class_probs: Vec<f64>,
    /// Rows feeding each entry of `video_scores`.
    pub topk_indices: Vec<Vec<usize>>,
}

/// Top-k pool size for the video-level prediction.
pub fn l_high(t: usize) -> usize {
    (t / 8).max(1)
}

fn affine(x: &RealMatrix, weight: &RealMatrix, bias: &[f64]) -> Result<RealMatrix> {
    let mut out = x.matmul(weight)?;
    for r in 0..out.rows() {
        for (v, &b) in out.row_mut(r).iter_mut().zip(bias) {
            *v += b;
        }
    }
    Ok(out)
}

fn relu_in_place(m: &mut RealMatrix) {
    for v in m.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

pub fn forward(x: &RealMatrix, params: &LocalizerParams, top_k: usize) -> Result<ActivationMaps> {
    if x.cols() != params.feature_dim {
        return Err(Error::shape(format!(
            "input is {}-dim but the head expects {}",
            x.cols(),
            params.feature_dim
        )));
    }
    let mut embedded = affine(x, &params.embed_weight, &params.embed_bias)?;
    relu_in_place(&mut embedded);
    let mut activation = affine(&embedded, &params.class_weight, &params.class_bias)?;
    relu_in_place(&mut activation);

    let attention: Vec<f64> = (0..activation.rows())
        .map(|t| sigmoid(activation.row(t).iter().sum()))
        .collect();
    let topk_indices = topk_indices_per_column(&activation, top_k)?;
    let video_scores: Vec<f64> = topk_indices
        .iter()
        .enumerate()
        .map(|(k, rows)| rows.iter().map(|&t| activation[(t, k)]).sum::<f64>() / top_k as f64)
        .collect();
    let class_probs = softmax(&video_scores)?;

    debug_assert!(activation.as_slice().iter().all(|&a| a >= 0.0));
    // Sigmoid saturates to exactly 1.0 in f64 once a row sum exceeds ~37.
    debug_assert!(attention.iter().all(|&s| s > 0.0 && s <= 1.0));
    debug_assert!((class_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    Ok(ActivationMaps {
        embedded,
        activation,
        attention,
        video_scores,
        class_probs,
        topk_indices,
    })
}

/// Mining sizes and thresholds for one video length.
#[derive(Debug, Clone, PartialEq)]
pub struct MiningConfig {
    /// Actionness threshold on the attention values.
    pub tau_c: f64,
    pub t_easy: usize,
    pub t_hard: usize,
    /// Negatives per contrastive triple.
    pub t_neg: usize,
    pub erosion_margin: usize,
    pub dilation_margin: usize,
}

impl MiningConfig {
    pub fn for_video_length(t: usize) -> Result<Self> {
        if t == 0 {
            return Err(Error::invalid("mining needs at least one snippet"));
        }
        let t_easy = (t / 8).max(1);
        Ok(MiningConfig {
            tau_c: 0.5,
            t_easy,
            t_hard: (t / 32).max(1),
            t_neg: t_easy,
            erosion_margin: (t / 64).max(1),
            dilation_margin: (t / 64).max(1),
        })
    }

    fn validate(&self) -> Result<()> {
        if self.t_easy == 0 || self.t_hard == 0 || self.t_neg == 0 {
            return Err(Error::invalid("mining counts must be at least 1"));
        }
        if self.erosion_margin == 0 || self.dilation_margin == 0 {
            return Err(Error::invalid("morphology margins must be at least 1"));
        }
        if !self.tau_c.is_finite() {
            return Err(Error::invalid("tau_c must be finite"));
        }
        Ok(())
    }
}

/// Index pools for the contrastive triples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MinedSnippets {
    pub hard_action: Vec<usize>,
    pub hard_background: Vec<usize>,
    pub easy_action: Vec<usize>,
    pub easy_background: Vec<usize>,
}

/// Erosion keeps positions whose whole clipped window is inside the mask;
/// dilation marks positions with any mask hit in the clipped window. No
/// padding beyond the sequence ends.
fn erode(mask: &[bool], margin: usize) -> Vec<bool> {
    (0..mask.len())
        .map(|t| {
            let lo = t.saturating_sub(margin);
            let hi = (t + margin).min(mask.len() - 1);
            (lo..=hi).all(|i| mask[i])
        })
        .collect()
}

fn dilate(mask: &[bool], margin: usize) -> Vec<bool> {
    (0..mask.len())
        .map(|t| {
            let lo = t.saturating_sub(margin);
            let hi = (t + margin).min(mask.len() - 1);
            (lo..=hi).any(|i| mask[i])
        })
        .collect()
}

fn subsample(pool: Vec<usize>, cap: usize, rng: &mut SeededRng) -> Vec<usize> {
    if pool.len() <= cap {
        return pool;
    }
    let mut picked: Vec<usize> = rand::seq::index::sample(rng, pool.len(), cap)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// Splits snippets into hard action (mask boundary interior side), hard
/// background (just outside the mask), and easy action/background (extreme
/// attention values). Hard pools larger than `t_hard` are subsampled. For
/// T=1 the easy pools would coincide; the background pool drops the overlap.
pub fn mine_snippets(
    attention: &[f64],
    cfg: &MiningConfig,
    rng: &mut SeededRng,
) -> Result<MinedSnippets> {
    cfg.validate()?;
    let t = attention.len();
    if t == 0 {
        return Err(Error::invalid("mining needs at least one snippet"));
    }
    let mask: Vec<bool> = attention.iter().map(|&s| s > cfg.tau_c).collect();
    let eroded = erode(&mask, cfg.erosion_margin);
    let dilated = dilate(&mask, cfg.dilation_margin);

    let hard_action: Vec<usize> = (0..t).filter(|&i| mask[i] && !eroded[i]).collect();
    let hard_background: Vec<usize> = (0..t).filter(|&i| dilated[i] && !mask[i]).collect();
    let hard_action = subsample(hard_action, cfg.t_hard, rng);
    let hard_background = subsample(hard_background, cfg.t_hard, rng);

    let count = cfg.t_easy.min(t);
    let mut by_value: Vec<usize> = (0..t).collect();
    by_value.sort_by(|&a, &b| attention[b].partial_cmp(&attention[a]).unwrap().then(a.cmp(&b)));
    let easy_action: Vec<usize> = by_value[..count].to_vec();
    let mut easy_background: Vec<usize> = Vec::with_capacity(count);
    for &i in by_value.iter().rev() {
        if easy_background.len() == count {
            break;
        }
        if !easy_action.contains(&i) {
            easy_background.push(i);
        }
    }

    Ok(MinedSnippets {
        hard_action,
        hard_background,
        easy_action,
        easy_background,
    })
}

/// Loss blending and contrastive settings.
#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub temperature: f64,
    /// L2-normalize embedded rows before contrastive dot products.
    pub normalize_contrastive: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.005,
            temperature: 0.07,
            normalize_contrastive: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::invalid("lambda must be finite and >= 0"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        Ok(())
    }
}

pub fn classification_loss(probs: &[f64], label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::invalid(format!(
            "label {label} outside [0, {})",
            probs.len()
        )));
    }
    Ok(-probs[label].ln())
}

/// InfoNCE over one triple: `-log softmax` weight of the positive among
/// positive plus negatives.
pub fn contrastive_loss(
    query: &[f64],
    positive: &[f64],
    negatives: &[&[f64]],
    temperature: f64,
) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    if positive.len() != query.len() || negatives.iter().any(|n| n.len() != query.len()) {
        return Err(Error::shape("contrastive features disagree in dimension"));
    }
    let u_pos = dot(query, positive) / temperature;
    let u_negs: Vec<f64> = negatives
        .iter()
        .map(|n| dot(query, n) / temperature)
        .collect();
    let m = u_negs.iter().cloned().fold(u_pos, f64::max);
    let denom: f64 =
        (u_pos - m).exp() + u_negs.iter().map(|u| (u - m).exp()).sum::<f64>();
    Ok(m + denom.ln() - u_pos)
}

pub fn total_loss(l_cls: f64, l_ctr: f64, lambda: f64) -> f64 {
    l_cls + lambda * l_ctr
}
