//! Nearest-neighbor inference, zero-shot evaluation, embedding
//! concatenation, and the multi-label metric suite.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use ndarray::Array1;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::Serialize;

use crate::embedding::{l2_norm, Dataset, EmbeddingModel, LabelTable};
use crate::error::{Error, Result};

/// Candidate labels ranked by cosine similarity (score = 1 − distance).
#[derive(Debug, Clone, Serialize)]
pub struct PredictionRanking {
    pub instance_id: String,
    pub ranked: Vec<(String, f64)>,
}

impl PredictionRanking {
    pub fn top(&self) -> &str {
        &self.ranked[0].0
    }

    fn score_map(&self) -> HashMap<&str, f64> {
        self.ranked.iter().map(|(l, s)| (l.as_str(), *s)).collect()
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MultiLabelMetrics {
    pub per_class_precision: f64,
    pub per_class_recall: f64,
    pub per_class_f1: f64,
    pub overall_precision: f64,
    pub overall_recall: f64,
    pub overall_f1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    /// `counts[i][j]`: instances of true class `i` predicted as class `j`.
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts
            .iter()
            .map(|row| row.iter().sum::<usize>())
            .sum()
    }
}

/// Metric bundle; sections that do not apply to a run stay `None`.
#[derive(Debug, Clone, Serialize, Default)]
pub struct EvalReport {
    pub hit_at_k: BTreeMap<usize, f64>,
    pub multilabel_k: Option<usize>,
    pub multilabel: Option<MultiLabelMetrics>,
    pub map: Option<f64>,
    pub map_at_n: BTreeMap<usize, f64>,
    pub confusion: Option<ConfusionMatrix>,
}

/// Scores every candidate label against the projected features, sorted by
/// descending similarity; ties keep label-table order.
pub fn rank_labels(
    model: &EmbeddingModel,
    instance_id: &str,
    features: ndarray::ArrayView1<'_, f64>,
    candidates: &LabelTable,
) -> Result<PredictionRanking> {
    if candidates.dim() != model.embed_dim() {
        return Err(Error::DimensionMismatch(format!(
            "label table dimension {} does not match model output dimension {}",
            candidates.dim(),
            model.embed_dim()
        )));
    }
    let f = model.project(features)?;
    let mut ranked: Vec<(String, f64)> = candidates
        .iter()
        .map(|(id, s)| (id.to_string(), f.dot(&s)))
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite scores"));
    Ok(PredictionRanking {
        instance_id: instance_id.to_string(),
        ranked,
    })
}

/// Ranks every instance of `dataset`, preserving instance order.
pub fn rank_dataset(
    model: &EmbeddingModel,
    dataset: &Dataset,
    candidates: &LabelTable,
) -> Result<Vec<PredictionRanking>> {
    dataset
        .instances()
        .iter()
        .map(|inst| rank_labels(model, &inst.id, inst.features.view(), candidates))
        .collect()
}

/// Parallel variant of [`rank_dataset`]; output order is identical.
#[cfg(feature = "parallel")]
pub fn rank_dataset_par(
    model: &EmbeddingModel,
    dataset: &Dataset,
    candidates: &LabelTable,
) -> Result<Vec<PredictionRanking>> {
    dataset
        .instances()
        .par_iter()
        .map(|inst| rank_labels(model, &inst.id, inst.features.view(), candidates))
        .collect()
}

fn ground_truth_of<'m>(
    gt: &'m HashMap<String, String>,
    ranking: &PredictionRanking,
) -> Result<&'m str> {
    gt.get(&ranking.instance_id)
        .map(String::as_str)
        .ok_or_else(|| {
            Error::InvalidData(format!(
                "no ground truth for instance {:?}",
                ranking.instance_id
            ))
        })
}

/// Fraction of instances whose true label appears in the top `k`.
pub fn hit_at_k(
    rankings: &[PredictionRanking],
    ground_truth: &HashMap<String, String>,
    k: usize,
) -> Result<f64> {
    if k < 1 {
        return Err(Error::InvalidConfig("hit@k needs k ≥ 1".into()));
    }
    if rankings.is_empty() {
        return Err(Error::InvalidData("no rankings to evaluate".into()));
    }
    let mut hits = 0usize;
    for ranking in rankings {
        let label = ground_truth_of(ground_truth, ranking)?;
        if !ranking.ranked.iter().any(|(l, _)| l == label) {
            return Err(Error::LabelNotFound(label.to_string()));
        }
        if ranking.ranked.iter().take(k).any(|(l, _)| l == label) {
            hits += 1;
        }
    }
    Ok(hits as f64 / rankings.len() as f64)
}

fn harmonic_f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Per-class and overall precision/recall/F1 from top-`k` predicted label
/// sets. Classes never predicted count a precision of 0; classes absent
/// from every ground-truth set are excluded from the recall average.
pub fn multilabel_metrics(
    rankings: &[PredictionRanking],
    gt_sets: &HashMap<String, BTreeSet<String>>,
    k: usize,
) -> Result<MultiLabelMetrics> {
    if k < 1 {
        return Err(Error::InvalidConfig("top-k metrics need k ≥ 1".into()));
    }
    if rankings.is_empty() {
        return Err(Error::InvalidData("no rankings to evaluate".into()));
    }
    let universe: Vec<&str> = rankings[0].ranked.iter().map(|(l, _)| l.as_str()).collect();
    let class_idx: HashMap<&str, usize> =
        universe.iter().enumerate().map(|(i, l)| (*l, i)).collect();

    let mut predicted = vec![0usize; universe.len()];
    let mut correct = vec![0usize; universe.len()];
    let mut gt_count = vec![0usize; universe.len()];

    for ranking in rankings {
        let gt = gt_sets.get(&ranking.instance_id).ok_or_else(|| {
            Error::InvalidData(format!(
                "no ground-truth set for instance {:?}",
                ranking.instance_id
            ))
        })?;
        for label in gt {
            let &idx = class_idx
                .get(label.as_str())
                .ok_or_else(|| Error::LabelNotFound(label.clone()))?;
            gt_count[idx] += 1;
        }
        for (label, _) in ranking.ranked.iter().take(k) {
            let idx = class_idx[label.as_str()];
            predicted[idx] += 1;
            if gt.contains(label) {
                correct[idx] += 1;
            }
        }
    }

    let mut cp_sum = 0.0;
    for i in 0..universe.len() {
        if predicted[i] > 0 {
            cp_sum += correct[i] as f64 / predicted[i] as f64;
        }
    }
    let per_class_precision = cp_sum / universe.len() as f64;

    let recall_classes: Vec<usize> = (0..universe.len()).filter(|&i| gt_count[i] > 0).collect();
    let per_class_recall = if recall_classes.is_empty() {
        0.0
    } else {
        recall_classes
            .iter()
            .map(|&i| correct[i] as f64 / gt_count[i] as f64)
            .sum::<f64>()
            / recall_classes.len() as f64
    };

    let total_correct: usize = correct.iter().sum();
    let total_gt: usize = gt_count.iter().sum();
    let overall_precision = total_correct as f64 / (k * rankings.len()) as f64;
    let overall_recall = if total_gt > 0 {
        total_correct as f64 / total_gt as f64
    } else {
        0.0
    };

    Ok(MultiLabelMetrics {
        per_class_precision,
        per_class_recall,
        per_class_f1: harmonic_f1(per_class_precision, per_class_recall),
        overall_precision,
        overall_recall,
        overall_f1: harmonic_f1(overall_precision, overall_recall),
    })
}

/// Non-interpolated mean average precision: per class, test images are
/// ranked by that class's score and precision is averaged at each positive.
/// Classes without positives are excluded with a warning.
pub fn mean_average_precision(
    rankings: &[PredictionRanking],
    gt_sets: &HashMap<String, BTreeSet<String>>,
) -> Result<f64> {
    if rankings.is_empty() {
        return Err(Error::InvalidData("no rankings to evaluate".into()));
    }
    let universe: Vec<&str> = rankings[0].ranked.iter().map(|(l, _)| l.as_str()).collect();
    let score_maps: Vec<HashMap<&str, f64>> = rankings.iter().map(|r| r.score_map()).collect();
    let positives: Vec<&BTreeSet<String>> = rankings
        .iter()
        .map(|r| {
            gt_sets.get(&r.instance_id).ok_or_else(|| {
                Error::InvalidData(format!(
                    "no ground-truth set for instance {:?}",
                    r.instance_id
                ))
            })
        })
        .collect::<Result<_>>()?;

    let mut ap_sum = 0.0;
    let mut classes = 0usize;
    for class in &universe {
        let n_pos = positives.iter().filter(|gt| gt.contains(*class)).count();
        if n_pos == 0 {
            log::warn!("class {class:?} has no positive test images; excluded from mAP");
            continue;
        }
        let mut order: Vec<usize> = (0..rankings.len()).collect();
        let scores: Vec<f64> = score_maps
            .iter()
            .map(|m| *m.get(*class).expect("class in every ranking"))
            .collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));

        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        for (rank, &img) in order.iter().enumerate() {
            if positives[img].contains(*class) {
                hits += 1;
                precision_sum += hits as f64 / (rank + 1) as f64;
            }
        }
        ap_sum += precision_sum / n_pos as f64;
        classes += 1;
    }
    if classes == 0 {
        return Err(Error::InvalidData(
            "every class lacks positive test images; mAP undefined".into(),
        ));
    }
    Ok(ap_sum / classes as f64)
}

/// Per-image average precision over the top `n` ranked labels, averaged
/// over images; the per-image denominator is `min(|gt|, n)`.
pub fn map_at_n(
    rankings: &[PredictionRanking],
    gt_sets: &HashMap<String, BTreeSet<String>>,
    n: usize,
) -> Result<f64> {
    if n < 1 {
        return Err(Error::InvalidConfig("mAP@N needs N ≥ 1".into()));
    }
    if rankings.is_empty() {
        return Err(Error::InvalidData("no rankings to evaluate".into()));
    }
    let mut ap_sum = 0.0;
    let mut counted = 0usize;
    for ranking in rankings {
        let gt = gt_sets.get(&ranking.instance_id).ok_or_else(|| {
            Error::InvalidData(format!(
                "no ground-truth set for instance {:?}",
                ranking.instance_id
            ))
        })?;
        let denom = gt.len().min(n);
        if denom == 0 {
            log::warn!(
                "instance {:?} has an empty ground-truth set; excluded from mAP@N",
                ranking.instance_id
            );
            continue;
        }
        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        for (rank, (label, _)) in ranking.ranked.iter().take(n).enumerate() {
            if gt.contains(label) {
                hits += 1;
                precision_sum += hits as f64 / (rank + 1) as f64;
            }
        }
        ap_sum += precision_sum / denom as f64;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::InvalidData("no instances with ground truth".into()));
    }
    Ok(ap_sum / counted as f64)
}

/// Top-1 confusion counts over `class_order`.
pub fn confusion_matrix(
    rankings: &[PredictionRanking],
    ground_truth: &HashMap<String, String>,
    class_order: &[String],
) -> Result<ConfusionMatrix> {
    let idx: HashMap<&str, usize> = class_order
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let mut counts = vec![vec![0usize; class_order.len()]; class_order.len()];
    for ranking in rankings {
        let truth = ground_truth_of(ground_truth, ranking)?;
        let &ti = idx
            .get(truth)
            .ok_or_else(|| Error::LabelNotFound(truth.to_string()))?;
        let predicted = ranking.top();
        let &pi = idx
            .get(predicted)
            .ok_or_else(|| Error::LabelNotFound(predicted.to_string()))?;
        counts[ti][pi] += 1;
    }
    Ok(ConfusionMatrix {
        labels: class_order.to_vec(),
        counts,
    })
}

/// Label ids paired with their (concatenated) embedding vectors.
pub type LabeledVectors = Vec<(String, Array1<f64>)>;

/// Concatenates each model's unit-norm projection of its feature view and
/// each label's unit-norm embeddings across tables. All tables must carry
/// the same label set; the first table fixes the output order.
pub fn concat_embeddings(
    models: &[&EmbeddingModel],
    tables: &[&LabelTable],
    features: &[ndarray::ArrayView1<'_, f64>],
) -> Result<(Array1<f64>, LabeledVectors)> {
    if models.is_empty() || models.len() != tables.len() || models.len() != features.len() {
        return Err(Error::InvalidConfig(format!(
            "embedding concatenation needs equally many models, tables and feature \
             vectors; got {}/{}/{}",
            models.len(),
            tables.len(),
            features.len()
        )));
    }
    let reference = tables[0];
    for table in &tables[1..] {
        if table.len() != reference.len() || !reference.ids().iter().all(|id| table.contains(id)) {
            return Err(Error::InvalidData(
                "label tables disagree on the label set".into(),
            ));
        }
    }

    let mut image_parts = Vec::with_capacity(models.len());
    for ((model, table), x) in models.iter().zip(tables).zip(features) {
        if model.embed_dim() != table.dim() {
            return Err(Error::DimensionMismatch(format!(
                "model output dimension {} does not match its label table dimension {}",
                model.embed_dim(),
                table.dim()
            )));
        }
        image_parts.push(model.project(*x)?);
    }
    let image_vec = concat(&image_parts);

    let mut label_vecs = Vec::with_capacity(reference.len());
    for id in reference.ids() {
        let parts: Vec<Array1<f64>> = tables
            .iter()
            .map(|t| t.get(id).expect("validated above").to_owned())
            .collect();
        label_vecs.push((id.clone(), concat(&parts)));
    }
    Ok((image_vec, label_vecs))
}

fn concat(parts: &[Array1<f64>]) -> Array1<f64> {
    let total: usize = parts.iter().map(|p| p.len()).sum();
    let mut out = Array1::zeros(total);
    let mut offset = 0;
    for p in parts {
        out.slice_mut(ndarray::s![offset..offset + p.len()])
            .assign(p);
        offset += p.len();
    }
    out
}

/// Ranks labels by cosine similarity between renormalized concatenated
/// embeddings; with a single model this reduces to [`rank_labels`].
pub fn rank_labels_concat(
    models: &[&EmbeddingModel],
    tables: &[&LabelTable],
    instance_id: &str,
    features: &[ndarray::ArrayView1<'_, f64>],
) -> Result<PredictionRanking> {
    let (image_vec, label_vecs) = concat_embeddings(models, tables, features)?;
    let image_norm = l2_norm(image_vec.view());
    let mut ranked: Vec<(String, f64)> = label_vecs
        .into_iter()
        .map(|(id, v)| {
            let score = image_vec.dot(&v) / (image_norm * l2_norm(v.view()));
            (id, score)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite scores"));
    Ok(PredictionRanking {
        instance_id: instance_id.to_string(),
        ranked,
    })
}

fn single_label_ground_truth(dataset: &Dataset) -> HashMap<String, String> {
    dataset
        .instances()
        .iter()
        .map(|i| (i.id.clone(), i.label.clone()))
        .collect()
}

/// Nearest-neighbor zero-shot evaluation. The candidate set is the unseen
/// table, or the seen ∪ unseen union in generalized mode. Reports hit@k for
/// each requested k plus the confusion matrix over the candidate set.
pub fn zero_shot_eval(
    model: &EmbeddingModel,
    test: &Dataset,
    unseen: &LabelTable,
    seen: Option<&LabelTable>,
    generalized: bool,
    ks: &[usize],
) -> Result<EvalReport> {
    test.validate_against(unseen)?;
    let candidates = if generalized {
        let seen = seen.ok_or_else(|| {
            Error::InvalidConfig("generalized zero-shot needs the seen label table".into())
        })?;
        seen.union(unseen)?
    } else {
        if let Some(seen) = seen {
            if let Some(dup) = unseen.ids().iter().find(|id| seen.contains(id)) {
                return Err(Error::InvalidData(format!(
                    "label {dup:?} appears in both the training and unseen sets"
                )));
            }
        }
        unseen.clone()
    };

    let rankings = rank_dataset(model, test, &candidates)?;
    report_from_rankings(&rankings, test, &candidates, ks)
}

/// Zero-shot evaluation over concatenated embedding spaces (e.g. word and
/// attribute vectors): one model and one pair of label tables per space,
/// all sharing the same label-id sets, scored on the same test features.
pub fn zero_shot_eval_concat(
    models: &[&EmbeddingModel],
    test: &Dataset,
    unseen_tables: &[&LabelTable],
    seen_tables: Option<&[&LabelTable]>,
    generalized: bool,
    ks: &[usize],
) -> Result<EvalReport> {
    if models.is_empty() || models.len() != unseen_tables.len() {
        return Err(Error::InvalidConfig(format!(
            "concatenated zero-shot needs one unseen table per model; got {} and {}",
            models.len(),
            unseen_tables.len()
        )));
    }
    test.validate_against(unseen_tables[0])?;

    let candidate_tables: Vec<LabelTable> = if generalized {
        let seen = seen_tables.ok_or_else(|| {
            Error::InvalidConfig("generalized zero-shot needs the seen label tables".into())
        })?;
        if seen.len() != models.len() {
            return Err(Error::InvalidConfig(format!(
                "concatenated zero-shot needs one seen table per model; got {} and {}",
                seen.len(),
                models.len()
            )));
        }
        seen.iter()
            .zip(unseen_tables)
            .map(|(s, u)| s.union(u))
            .collect::<Result<_>>()?
    } else {
        if let Some(seen) = seen_tables {
            for table in seen {
                if let Some(dup) = unseen_tables[0].ids().iter().find(|id| table.contains(id)) {
                    return Err(Error::InvalidData(format!(
                        "label {dup:?} appears in both the training and unseen sets"
                    )));
                }
            }
        }
        unseen_tables.iter().map(|t| (*t).clone()).collect()
    };
    let table_refs: Vec<&LabelTable> = candidate_tables.iter().collect();

    let rankings: Vec<PredictionRanking> = test
        .instances()
        .iter()
        .map(|inst| {
            let features: Vec<ndarray::ArrayView1<'_, f64>> =
                models.iter().map(|_| inst.features.view()).collect();
            rank_labels_concat(models, &table_refs, &inst.id, &features)
        })
        .collect::<Result<_>>()?;
    report_from_rankings(&rankings, test, &candidate_tables[0], ks)
}

fn report_from_rankings(
    rankings: &[PredictionRanking],
    test: &Dataset,
    candidates: &LabelTable,
    ks: &[usize],
) -> Result<EvalReport> {
    let gt = single_label_ground_truth(test);
    let mut hit = BTreeMap::new();
    for &k in ks {
        hit.insert(k, hit_at_k(rankings, &gt, k)?);
    }
    let confusion = confusion_matrix(rankings, &gt, candidates.ids())?;
    Ok(EvalReport {
        hit_at_k: hit,
        confusion: Some(confusion),
        ..EvalReport::default()
    })
}

/// Full metric suite over a single-label test set: hit@k, top-`multilabel_k`
/// precision/recall/F1, mAP, mAP@N and the confusion matrix.
pub fn evaluate(
    model: &EmbeddingModel,
    test: &Dataset,
    labels: &LabelTable,
    ks: &[usize],
    multilabel_k: usize,
    map_ns: &[usize],
) -> Result<EvalReport> {
    test.validate_against(labels)?;
    let rankings = rank_dataset(model, test, labels)?;
    let gt = single_label_ground_truth(test);
    let gt_sets: HashMap<String, BTreeSet<String>> = gt
        .iter()
        .map(|(id, label)| (id.clone(), BTreeSet::from([label.clone()])))
        .collect();

    let mut hit = BTreeMap::new();
    for &k in ks {
        hit.insert(k, hit_at_k(&rankings, &gt, k)?);
    }
    let mut map_n = BTreeMap::new();
    for &n in map_ns {
        map_n.insert(n, map_at_n(&rankings, &gt_sets, n)?);
    }
    Ok(EvalReport {
        hit_at_k: hit,
        multilabel_k: Some(multilabel_k),
        multilabel: Some(multilabel_metrics(&rankings, &gt_sets, multilabel_k)?),
        map: Some(mean_average_precision(&rankings, &gt_sets)?),
        map_at_n: map_n,
        confusion: Some(confusion_matrix(&rankings, &gt, labels.ids())?),
    })
}
