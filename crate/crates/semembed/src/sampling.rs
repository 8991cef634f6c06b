//! Seeded construction of ranking/pair/triplet batches.
//!
//! Pair batches hold equal numbers of same-class and different-class pairs;
//! triplet batches give every reference a fixed fraction of same-class
//! partners and form all (reference, positive, negative) combinations.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{Dataset, Instance};
use crate::error::{Error, Result};

/// One training batch. Unused sections are left empty; the objective
/// validates that the populated sections match the configured loss mode.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub ranking_instances: Vec<Instance>,
    pub pairs: Vec<(Instance, Instance)>,
    pub triplets: Vec<(Instance, Instance, Instance)>,
    pub diff_pairs: Vec<(Instance, Instance)>,
    /// When set, ranking terms sum only over these negative labels instead
    /// of every non-true label in the table.
    pub negative_label_ids: Option<Vec<String>>,
}

impl Batch {
    pub fn is_empty(&self) -> bool {
        self.ranking_instances.is_empty()
            && self.pairs.is_empty()
            && self.triplets.is_empty()
            && self.diff_pairs.is_empty()
    }
}

/// Knobs for batch construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Pairs per batch in contrastive mode, instances per batch in
    /// rank-only mode. Must be even when pairs are drawn.
    pub batch_size: usize,
    /// References per batch in triplet mode.
    pub references_per_batch: usize,
    /// Partners drawn for each reference in triplet mode.
    pub candidates_per_ref: usize,
    /// Fraction of each reference's partners drawn from its own class.
    pub positive_fraction: f64,
    /// Optional cap on ranking negatives per batch (unlimited when `None`).
    pub max_negatives: Option<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            references_per_batch: 16,
            candidates_per_ref: 10,
            positive_fraction: 0.2,
            max_negatives: None,
        }
    }
}

/// Instance indices grouped by class, in order of first appearance.
struct ClassIndex {
    classes: Vec<(String, Vec<usize>)>,
}

impl ClassIndex {
    fn build(dataset: &Dataset) -> Self {
        let mut classes: Vec<(String, Vec<usize>)> = Vec::new();
        for (i, inst) in dataset.instances().iter().enumerate() {
            match classes.iter_mut().find(|(label, _)| *label == inst.label) {
                Some((_, members)) => members.push(i),
                None => classes.push((inst.label.clone(), vec![i])),
            }
        }
        Self { classes }
    }

    fn validate_pairable(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::InvalidData(format!(
                "pair/triplet sampling needs at least 2 classes, found {}",
                self.classes.len()
            )));
        }
        for (label, members) in &self.classes {
            if members.len() < 2 {
                return Err(Error::InvalidData(format!(
                    "class {label:?} has {} instance(s); at least 2 required",
                    members.len()
                )));
            }
        }
        Ok(())
    }
}

/// Draws `count` distinct items from `pool`, falling back to drawing with
/// replacement when the pool is too small.
fn draw<R: Rng>(pool: &[usize], count: usize, rng: &mut R) -> Vec<usize> {
    if pool.len() >= count {
        pool.choose_multiple(rng, count).copied().collect()
    } else {
        (0..count)
            .map(|_| pool[rng.gen_range(0..pool.len())])
            .collect()
    }
}

fn distinct_instances(dataset: &Dataset, indices: impl Iterator<Item = usize>) -> Vec<Instance> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for i in indices {
        if seen.insert(i) {
            out.push(dataset.instances()[i].clone());
        }
    }
    out
}

fn sample_negative_labels<R: Rng>(
    dataset: &Dataset,
    cap: Option<usize>,
    rng: &mut R,
) -> Option<Vec<String>> {
    let cap = cap?;
    let mut labels = dataset.label_ids();
    labels.shuffle(rng);
    labels.truncate(cap);
    Some(labels)
}

/// Draws `batch_size` pairs, exactly half from the same class and half from
/// different classes. `diff_pairs` mirrors the pair list and
/// `ranking_instances` holds the distinct instances appearing in it.
pub fn sample_pair_batch(dataset: &Dataset, batch_size: usize, rng_seed: u64) -> Result<Batch> {
    sample_pair_batch_with(dataset, batch_size, None, rng_seed)
}

pub fn sample_pair_batch_with(
    dataset: &Dataset,
    batch_size: usize,
    max_negatives: Option<usize>,
    rng_seed: u64,
) -> Result<Batch> {
    let index = ClassIndex::build(dataset);
    index.validate_pairable()?;
    if !batch_size.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "pair batch size must be even, got {batch_size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let n_classes = index.classes.len();
    let mut pair_indices: Vec<(usize, usize)> = Vec::with_capacity(batch_size);

    for _ in 0..batch_size / 2 {
        let c = rng.gen_range(0..n_classes);
        let picked = draw(&index.classes[c].1, 2, &mut rng);
        pair_indices.push((picked[0], picked[1]));
    }
    for _ in 0..batch_size / 2 {
        let ca = rng.gen_range(0..n_classes);
        let offset = rng.gen_range(1..n_classes);
        let cb = (ca + offset) % n_classes;
        let a = index.classes[ca].1[rng.gen_range(0..index.classes[ca].1.len())];
        let b = index.classes[cb].1[rng.gen_range(0..index.classes[cb].1.len())];
        pair_indices.push((a, b));
    }

    let pairs: Vec<(Instance, Instance)> = pair_indices
        .iter()
        .map(|&(a, b)| {
            (
                dataset.instances()[a].clone(),
                dataset.instances()[b].clone(),
            )
        })
        .collect();
    let ranking_instances =
        distinct_instances(dataset, pair_indices.iter().flat_map(|&(a, b)| [a, b]));
    let negative_label_ids = sample_negative_labels(dataset, max_negatives, &mut rng);
    Ok(Batch {
        ranking_instances,
        diff_pairs: pairs.clone(),
        pairs,
        triplets: Vec::new(),
        negative_label_ids,
    })
}

/// Draws `batch_size` references. Each reference gets
/// `round(positive_fraction × candidates_per_ref)` same-class partners and
/// the rest from other classes; all (ref, pos, neg) combinations become
/// triplets and the (ref, partner) pairs are deduplicated into `diff_pairs`.
pub fn sample_triplet_batch(
    dataset: &Dataset,
    batch_size: usize,
    positive_fraction: f64,
    candidates_per_ref: usize,
    rng_seed: u64,
) -> Result<Batch> {
    sample_triplet_batch_with(
        dataset,
        batch_size,
        positive_fraction,
        candidates_per_ref,
        None,
        rng_seed,
    )
}

pub fn sample_triplet_batch_with(
    dataset: &Dataset,
    batch_size: usize,
    positive_fraction: f64,
    candidates_per_ref: usize,
    max_negatives: Option<usize>,
    rng_seed: u64,
) -> Result<Batch> {
    let index = ClassIndex::build(dataset);
    index.validate_pairable()?;
    if !(0.0..=1.0).contains(&positive_fraction) {
        return Err(Error::InvalidConfig(format!(
            "positive fraction must be in [0, 1], got {positive_fraction}"
        )));
    }
    let pos_count = (positive_fraction * candidates_per_ref as f64).round() as usize;
    if candidates_per_ref > 0 && pos_count == 0 {
        return Err(Error::InvalidConfig(format!(
            "positive fraction {positive_fraction} with {candidates_per_ref} candidates \
             yields no positives; a triplet needs a same-class partner"
        )));
    }
    if candidates_per_ref > 0 && pos_count == candidates_per_ref {
        return Err(Error::InvalidConfig(format!(
            "positive fraction {positive_fraction} with {candidates_per_ref} candidates \
             yields no negatives"
        )));
    }
    let neg_count = candidates_per_ref - pos_count.min(candidates_per_ref);

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut triplets = Vec::new();
    let mut diff_pairs: Vec<(Instance, Instance)> = Vec::new();
    let mut seen_pairs = std::collections::HashSet::new();
    let mut instance_order: Vec<usize> = Vec::new();

    for _ in 0..batch_size {
        let ref_idx = rng.gen_range(0..dataset.len());
        let ref_inst = &dataset.instances()[ref_idx];
        let class_members = &index
            .classes
            .iter()
            .find(|(label, _)| *label == ref_inst.label)
            .expect("reference class present")
            .1;
        let same_pool: Vec<usize> = class_members
            .iter()
            .copied()
            .filter(|&i| i != ref_idx)
            .collect();
        let same_pool = if same_pool.is_empty() {
            // Lone positive: pair the reference with itself.
            vec![ref_idx]
        } else {
            same_pool
        };
        let other_pool: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.instances()[i].label != ref_inst.label)
            .collect();

        let positives = draw(&same_pool, pos_count, &mut rng);
        let negatives = draw(&other_pool, neg_count, &mut rng);

        instance_order.push(ref_idx);
        instance_order.extend(&positives);
        instance_order.extend(&negatives);

        for &p in &positives {
            for &n in &negatives {
                triplets.push((
                    ref_inst.clone(),
                    dataset.instances()[p].clone(),
                    dataset.instances()[n].clone(),
                ));
            }
        }
        for &partner in positives.iter().chain(negatives.iter()) {
            if seen_pairs.insert((ref_idx, partner)) {
                diff_pairs.push((ref_inst.clone(), dataset.instances()[partner].clone()));
            }
        }
    }

    let ranking_instances = distinct_instances(dataset, instance_order.into_iter());
    let negative_label_ids = sample_negative_labels(dataset, max_negatives, &mut rng);
    Ok(Batch {
        ranking_instances,
        pairs: Vec::new(),
        triplets,
        diff_pairs,
        negative_label_ids,
    })
}

/// Uniformly draws `batch_size` instances for rank-only training.
pub fn sample_instance_batch(
    dataset: &Dataset,
    batch_size: usize,
    max_negatives: Option<usize>,
    rng_seed: u64,
) -> Result<Batch> {
    if dataset.is_empty() {
        return Err(Error::InvalidData(
            "cannot sample from an empty dataset".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let all: Vec<usize> = (0..dataset.len()).collect();
    let picked = draw(&all, batch_size, &mut rng);
    let ranking_instances = picked
        .into_iter()
        .map(|i| dataset.instances()[i].clone())
        .collect();
    let negative_label_ids = sample_negative_labels(dataset, max_negatives, &mut rng);
    Ok(Batch {
        ranking_instances,
        negative_label_ids,
        ..Batch::default()
    })
}
