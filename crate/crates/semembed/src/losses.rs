//! Ranking, contrastive, triplet, and difference losses with analytic
//! gradients w.r.t. the projection weights, plus the combined objective.
//!
//! Distances are cosine distances `d(u, v) = 1 − u·v` between unit-norm
//! embeddings. Hinge subgradients use the one-sided convention: a hinge
//! whose argument is exactly zero contributes nothing.

use ndarray::{Array1, Array2, ArrayView1};
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine_distance, EmbeddingModel, Instance, LabelTable};
use crate::error::{Error, Result};
use crate::sampling::Batch;

/// Which discriminative constraint shapes image-image distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscMode {
    #[default]
    None,
    Contrastive,
    Triplet,
}

impl std::str::FromStr for DiscMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(DiscMode::None),
            "contrastive" => Ok(DiscMode::Contrastive),
            "triplet" => Ok(DiscMode::Triplet),
            other => Err(Error::InvalidConfig(format!(
                "unknown discriminative mode {other:?} (expected none, contrastive or triplet)"
            ))),
        }
    }
}

/// Margins, balance weights, and term selection for the training objective.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossConfig {
    pub margin_rank: f64,
    pub margin_disc: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub weight_decay: f64,
    pub disc_mode: DiscMode,
    pub difference_enabled: bool,
    pub rank_enabled: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin_rank: 0.1,
            margin_disc: 1.0,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            weight_decay: 0.0005,
            disc_mode: DiscMode::None,
            difference_enabled: false,
            rank_enabled: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin_rank < 0.0 || self.margin_disc < 0.0 {
            return Err(Error::InvalidConfig("margins must be non-negative".into()));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.lambda3 < 0.0 {
            return Err(Error::InvalidConfig(
                "balance weights must be non-negative".into(),
            ));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig(
                "weight decay must be non-negative".into(),
            ));
        }
        if !self.rank_enabled && self.disc_mode == DiscMode::None && !self.difference_enabled {
            return Err(Error::InvalidConfig("no loss term enabled".into()));
        }
        Ok(())
    }

    /// True when only the ranking term is active.
    pub fn is_rank_only(&self) -> bool {
        self.rank_enabled && self.disc_mode == DiscMode::None && !self.difference_enabled
    }
}

/// A loss value together with its gradient w.r.t. the model weights.
#[derive(Debug, Clone)]
pub struct LossValueAndGrad {
    pub value: f64,
    pub grad: Array2<f64>,
}

impl LossValueAndGrad {
    fn zero(model: &EmbeddingModel) -> Self {
        Self {
            value: 0.0,
            grad: Array2::zeros((model.embed_dim(), model.feature_dim())),
        }
    }
}

fn lookup<'t>(labels: &'t LabelTable, id: &str) -> Result<ArrayView1<'t, f64>> {
    labels
        .get(id)
        .ok_or_else(|| Error::LabelNotFound(id.to_string()))
}

/// Hinge loss pushing the true label's distance below every other label's
/// distance by margin `m`, summed over all non-true labels.
pub fn ranking_loss(
    model: &EmbeddingModel,
    instance: &Instance,
    labels: &LabelTable,
    m: f64,
) -> Result<LossValueAndGrad> {
    ranking_loss_over(model, instance, labels, None, m)
}

/// As [`ranking_loss`] but restricted to the given negative label ids when
/// `negatives` is set (the sampler's optional cap on the full sum).
pub fn ranking_loss_over(
    model: &EmbeddingModel,
    instance: &Instance,
    labels: &LabelTable,
    negatives: Option<&[String]>,
    m: f64,
) -> Result<LossValueAndGrad> {
    let s_true = lookup(labels, &instance.label)?;
    let proj = model.project_cached(instance.features.view())?;
    let f = proj.embedding.view();
    let d_true = cosine_distance(f, s_true)?;

    let mut value = 0.0;
    let mut upstream: Array1<f64> = Array1::zeros(model.embed_dim());
    let mut active = 0usize;

    let mut accumulate = |s_other: ArrayView1<'_, f64>| -> Result<()> {
        let d_other = cosine_distance(f, s_other)?;
        let hinge = m + d_true - d_other;
        if hinge > 0.0 {
            value += hinge;
            // ∂hinge/∂f = ∂(−f·s_true + f·s_other)/∂f = s_other − s_true.
            upstream += &(&s_other - &s_true);
            active += 1;
        }
        Ok(())
    };

    match negatives {
        None => {
            for (id, s_other) in labels.iter() {
                if id != instance.label {
                    accumulate(s_other)?;
                }
            }
        }
        Some(ids) => {
            for id in ids {
                if *id != instance.label {
                    accumulate(lookup(labels, id)?)?;
                }
            }
        }
    }

    let grad = if active == 0 {
        Array2::zeros((model.embed_dim(), model.feature_dim()))
    } else {
        model.backprop_to_weights(instance.features.view(), &proj, upstream.view())
    };
    Ok(LossValueAndGrad { value, grad })
}

/// Same-class pairs are pulled together by their embedding distance;
/// different-class pairs are pushed apart up to margin `m`.
pub fn contrastive_loss(
    model: &EmbeddingModel,
    a: &Instance,
    b: &Instance,
    m: f64,
) -> Result<LossValueAndGrad> {
    let pa = model.project_cached(a.features.view())?;
    let pb = model.project_cached(b.features.view())?;
    let d = cosine_distance(pa.embedding.view(), pb.embedding.view())?;

    let (value, sign) = if a.label == b.label {
        (d, -1.0)
    } else {
        let hinge = m - d;
        if hinge > 0.0 {
            (hinge, 1.0)
        } else {
            return Ok(LossValueAndGrad::zero(model));
        }
    };

    // ∂d/∂f_a = −f_b, so the upstream is ∓f_b depending on the branch sign.
    let ua = &pb.embedding * sign;
    let ub = &pa.embedding * sign;
    let grad = model.backprop_to_weights(a.features.view(), &pa, ua.view())
        + model.backprop_to_weights(b.features.view(), &pb, ub.view());
    Ok(LossValueAndGrad { value, grad })
}

/// Enforces `d(ref, pos) + m ≤ d(ref, neg)` with a hinge.
pub fn triplet_loss(
    model: &EmbeddingModel,
    reference: &Instance,
    positive: &Instance,
    negative: &Instance,
    m: f64,
) -> Result<LossValueAndGrad> {
    if reference.label != positive.label {
        return Err(Error::InvalidData(format!(
            "triplet positive {:?} has label {:?}, reference has {:?}",
            positive.id, positive.label, reference.label
        )));
    }
    if reference.label == negative.label {
        return Err(Error::InvalidData(format!(
            "triplet negative {:?} shares the reference label {:?}",
            negative.id, negative.label
        )));
    }
    let pr = model.project_cached(reference.features.view())?;
    let pp = model.project_cached(positive.features.view())?;
    let pn = model.project_cached(negative.features.view())?;
    let d_pos = cosine_distance(pr.embedding.view(), pp.embedding.view())?;
    let d_neg = cosine_distance(pr.embedding.view(), pn.embedding.view())?;
    let hinge = m + d_pos - d_neg;
    if hinge <= 0.0 {
        return Ok(LossValueAndGrad::zero(model));
    }

    let ur = &pn.embedding - &pp.embedding;
    let up = -&pr.embedding;
    let un = pr.embedding.clone();
    let grad = model.backprop_to_weights(reference.features.view(), &pr, ur.view())
        + model.backprop_to_weights(positive.features.view(), &pp, up.view())
        + model.backprop_to_weights(negative.features.view(), &pn, un.view());
    Ok(LossValueAndGrad { value: hinge, grad })
}

/// Aligns the difference vector of two image embeddings with the difference
/// vector of their label embeddings (squared Euclidean error).
pub fn difference_loss(
    model: &EmbeddingModel,
    a: &Instance,
    b: &Instance,
    labels: &LabelTable,
) -> Result<LossValueAndGrad> {
    let sa = lookup(labels, &a.label)?;
    let sb = lookup(labels, &b.label)?;
    let pa = model.project_cached(a.features.view())?;
    let pb = model.project_cached(b.features.view())?;

    let residual = (&pa.embedding - &pb.embedding) - (&sa.to_owned() - &sb);
    let value = residual.dot(&residual);
    let ua = &residual * 2.0;
    let ub = -&ua;
    let grad = model.backprop_to_weights(a.features.view(), &pa, ua.view())
        + model.backprop_to_weights(b.features.view(), &pb, ub.view());
    Ok(LossValueAndGrad { value, grad })
}

enum Term<'a> {
    Rank(&'a Instance),
    Pair(&'a Instance, &'a Instance),
    Triplet(&'a Instance, &'a Instance, &'a Instance),
    Diff(&'a Instance, &'a Instance),
}

fn batch_terms<'a>(batch: &'a Batch, cfg: &LossConfig) -> Result<Vec<Term<'a>>> {
    if cfg.disc_mode != DiscMode::Contrastive && !batch.pairs.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "batch holds {} pairs but the discriminative mode is not contrastive",
            batch.pairs.len()
        )));
    }
    if cfg.disc_mode != DiscMode::Triplet && !batch.triplets.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "batch holds {} triplets but the discriminative mode is not triplet",
            batch.triplets.len()
        )));
    }
    let mut terms = Vec::new();
    if cfg.rank_enabled {
        terms.extend(batch.ranking_instances.iter().map(Term::Rank));
    }
    match cfg.disc_mode {
        DiscMode::None => {}
        DiscMode::Contrastive => terms.extend(batch.pairs.iter().map(|(a, b)| Term::Pair(a, b))),
        DiscMode::Triplet => terms.extend(
            batch
                .triplets
                .iter()
                .map(|(r, p, n)| Term::Triplet(r, p, n)),
        ),
    }
    if cfg.difference_enabled {
        terms.extend(batch.diff_pairs.iter().map(|(a, b)| Term::Diff(a, b)));
    }
    Ok(terms)
}

fn eval_term(
    model: &EmbeddingModel,
    labels: &LabelTable,
    batch: &Batch,
    cfg: &LossConfig,
    term: &Term<'_>,
) -> Result<LossValueAndGrad> {
    let (weight, mut lv) = match term {
        Term::Rank(inst) => (
            cfg.lambda1,
            ranking_loss_over(
                model,
                inst,
                labels,
                batch.negative_label_ids.as_deref(),
                cfg.margin_rank,
            )?,
        ),
        Term::Pair(a, b) => (cfg.lambda2, contrastive_loss(model, a, b, cfg.margin_disc)?),
        Term::Triplet(r, p, n) => (cfg.lambda2, triplet_loss(model, r, p, n, cfg.margin_disc)?),
        Term::Diff(a, b) => (cfg.lambda3, difference_loss(model, a, b, labels)?),
    };
    lv.value *= weight;
    lv.grad *= weight;
    Ok(lv)
}

fn add_decay(
    model: &EmbeddingModel,
    cfg: &LossConfig,
    mut acc: LossValueAndGrad,
) -> LossValueAndGrad {
    let w = cfg.weight_decay;
    acc.value += 0.5 * w * model.weight_norm_sq();
    acc.grad.scaled_add(w, model.weights());
    acc
}

/// The full training objective: weight decay plus the λ-weighted sums of
/// ranking, discriminative, and difference terms over the batch.
pub fn combined_objective(
    model: &EmbeddingModel,
    batch: &Batch,
    labels: &LabelTable,
    cfg: &LossConfig,
) -> Result<LossValueAndGrad> {
    cfg.validate()?;
    let terms = batch_terms(batch, cfg)?;
    let mut acc = LossValueAndGrad::zero(model);
    for term in &terms {
        let lv = eval_term(model, labels, batch, cfg, term)?;
        acc.value += lv.value;
        acc.grad += &lv.grad;
    }
    Ok(add_decay(model, cfg, acc))
}

/// Parallel variant of [`combined_objective`]: batch terms are evaluated on
/// the rayon pool and summed. The reassociated sum may differ from the
/// sequential result by float roundoff (~1e-9 at desk scale).
#[cfg(feature = "parallel")]
pub fn combined_objective_par(
    model: &EmbeddingModel,
    batch: &Batch,
    labels: &LabelTable,
    cfg: &LossConfig,
) -> Result<LossValueAndGrad> {
    cfg.validate()?;
    let terms = batch_terms(batch, cfg)?;
    let acc = terms
        .par_iter()
        .map(|term| eval_term(model, labels, batch, cfg, term))
        .try_reduce(
            || LossValueAndGrad::zero(model),
            |mut a, b| {
                a.value += b.value;
                a.grad += &b.grad;
                Ok(a)
            },
        )?;
    Ok(add_decay(model, cfg, acc))
}
