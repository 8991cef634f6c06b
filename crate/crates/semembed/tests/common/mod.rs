//! Brute-force reference implementations of the metric suite, kept
//! independent of the library's computation paths, plus a seeded generator
//! for random micro-datasets.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semembed::PredictionRanking;

pub struct MicroDataset {
    pub classes: Vec<String>,
    pub rankings: Vec<PredictionRanking>,
    pub single_gt: HashMap<String, String>,
    pub multi_gt: HashMap<String, BTreeSet<String>>,
}

/// Random scores over ≤5 classes for ≤20 images, with single-label and
/// multi-label ground truth drawn independently of the scores.
pub fn random_micro_dataset(seed: u64) -> MicroDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_classes = rng.gen_range(2..=5usize);
    let n_images = rng.gen_range(2..=20usize);
    let classes: Vec<String> = (0..n_classes).map(|c| format!("k{c}")).collect();

    let mut rankings = Vec::new();
    let mut single_gt = HashMap::new();
    let mut multi_gt = HashMap::new();
    for i in 0..n_images {
        let id = format!("img{i}");
        let mut scored: Vec<(String, f64)> = classes
            .iter()
            .map(|c| (c.clone(), rng.gen_range(-1.0..1.0)))
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        rankings.push(PredictionRanking {
            instance_id: id.clone(),
            ranked: scored,
        });

        single_gt.insert(id.clone(), classes[rng.gen_range(0..n_classes)].clone());
        let mut set = BTreeSet::new();
        let size = rng.gen_range(1..=n_classes);
        while set.len() < size {
            set.insert(classes[rng.gen_range(0..n_classes)].clone());
        }
        multi_gt.insert(id, set);
    }
    MicroDataset {
        classes,
        rankings,
        single_gt,
        multi_gt,
    }
}

fn top_k(ranking: &PredictionRanking, k: usize) -> Vec<&str> {
    ranking
        .ranked
        .iter()
        .take(k)
        .map(|(l, _)| l.as_str())
        .collect()
}

pub fn oracle_hit_at_k(
    rankings: &[PredictionRanking],
    gt: &HashMap<String, String>,
    k: usize,
) -> f64 {
    let mut hits = 0;
    for r in rankings {
        let truth = &gt[&r.instance_id];
        if top_k(r, k).contains(&truth.as_str()) {
            hits += 1;
        }
    }
    hits as f64 / rankings.len() as f64
}

pub struct OracleMultiLabel {
    pub cp: f64,
    pub cr: f64,
    pub cf1: f64,
    pub op: f64,
    pub or_: f64,
    pub of1: f64,
}

pub fn oracle_multilabel(
    rankings: &[PredictionRanking],
    gt: &HashMap<String, BTreeSet<String>>,
    classes: &[String],
    k: usize,
) -> OracleMultiLabel {
    let f1 = |p: f64, r: f64| {
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    };

    // Per-class precision over every class; never-predicted classes count 0.
    let mut cp = 0.0;
    for class in classes {
        let mut predicted = 0;
        let mut correct = 0;
        for r in rankings {
            if top_k(r, k).contains(&class.as_str()) {
                predicted += 1;
                if gt[&r.instance_id].contains(class) {
                    correct += 1;
                }
            }
        }
        if predicted > 0 {
            cp += correct as f64 / predicted as f64;
        }
    }
    cp /= classes.len() as f64;

    // Per-class recall over classes present in some ground-truth set.
    let mut cr = 0.0;
    let mut recall_classes = 0;
    for class in classes {
        let mut in_gt = 0;
        let mut recovered = 0;
        for r in rankings {
            if gt[&r.instance_id].contains(class) {
                in_gt += 1;
                if top_k(r, k).contains(&class.as_str()) {
                    recovered += 1;
                }
            }
        }
        if in_gt > 0 {
            cr += recovered as f64 / in_gt as f64;
            recall_classes += 1;
        }
    }
    if recall_classes > 0 {
        cr /= recall_classes as f64;
    }

    let mut correct_total = 0;
    let mut gt_total = 0;
    for r in rankings {
        let truth = &gt[&r.instance_id];
        gt_total += truth.len();
        for label in top_k(r, k) {
            if truth.contains(label) {
                correct_total += 1;
            }
        }
    }
    let op = correct_total as f64 / (k * rankings.len()) as f64;
    let or_ = if gt_total > 0 {
        correct_total as f64 / gt_total as f64
    } else {
        0.0
    };

    OracleMultiLabel {
        cp,
        cr,
        cf1: f1(cp, cr),
        op,
        or_,
        of1: f1(op, or_),
    }
}

/// Average precision by explicit precision-at-each-positive summation over
/// the per-class image ranking. Classes without positives are skipped.
pub fn oracle_map(
    rankings: &[PredictionRanking],
    gt: &HashMap<String, BTreeSet<String>>,
    classes: &[String],
) -> Option<f64> {
    let mut aps = Vec::new();
    for class in classes {
        let mut scored: Vec<(f64, bool)> = rankings
            .iter()
            .map(|r| {
                let score = r
                    .ranked
                    .iter()
                    .find(|(l, _)| l == class)
                    .map(|(_, s)| *s)
                    .unwrap();
                (score, gt[&r.instance_id].contains(class))
            })
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let n_pos = scored.iter().filter(|(_, p)| *p).count();
        if n_pos == 0 {
            continue;
        }
        let mut seen_pos = 0;
        let mut ap = 0.0;
        for (rank0, (_, is_pos)) in scored.iter().enumerate() {
            if *is_pos {
                seen_pos += 1;
                ap += seen_pos as f64 / (rank0 + 1) as f64;
            }
        }
        aps.push(ap / n_pos as f64);
    }
    if aps.is_empty() {
        None
    } else {
        Some(aps.iter().sum::<f64>() / aps.len() as f64)
    }
}

pub fn oracle_confusion(
    rankings: &[PredictionRanking],
    gt: &HashMap<String, String>,
    classes: &[String],
) -> Vec<Vec<usize>> {
    let mut counts = vec![vec![0usize; classes.len()]; classes.len()];
    for r in rankings {
        let truth = &gt[&r.instance_id];
        let predicted = &r.ranked[0].0;
        let ti = classes.iter().position(|c| c == truth).unwrap();
        let pi = classes.iter().position(|c| c == predicted).unwrap();
        counts[ti][pi] += 1;
    }
    counts
}
