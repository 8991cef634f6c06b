//! Region mining: a linear one-vs-rest scorer trained on whole-image
//! features assigns each ground-truth image label to its best-matched
//! candidate region, producing single-label training instances.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedding::Instance;
use crate::error::{Error, Result};

/// An image's whole-image features, ground-truth label set, and candidate
/// region features.
#[derive(Debug, Clone)]
pub struct MultiLabelImage {
    pub id: String,
    pub image_features: Array1<f64>,
    pub labels: BTreeSet<String>,
    pub regions: Vec<(String, Array1<f64>)>,
}

impl MultiLabelImage {
    pub fn new(
        id: impl Into<String>,
        image_features: Array1<f64>,
        labels: BTreeSet<String>,
        regions: Vec<(String, Array1<f64>)>,
    ) -> Result<Self> {
        let id = id.into();
        if labels.is_empty() {
            return Err(Error::InvalidData(format!(
                "image {id:?} has an empty label set"
            )));
        }
        let dim = image_features.len();
        for (rid, features) in &regions {
            if features.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "region {rid:?} of image {id:?} has dimension {}, expected {dim}",
                    features.len()
                )));
            }
        }
        Ok(Self {
            id,
            image_features,
            labels,
            regions,
        })
    }
}

/// Independent logistic one-vs-rest scorers, one row per label.
#[derive(Debug, Clone)]
pub struct MultiLabelScorer {
    labels: Vec<String>,
    weights: Array2<f64>,
    biases: Array1<f64>,
}

impl MultiLabelScorer {
    /// Scorer with explicit rows; `weights` has one row per label.
    pub fn from_parts(
        labels: Vec<String>,
        weights: Array2<f64>,
        biases: Array1<f64>,
    ) -> Result<Self> {
        if weights.nrows() != labels.len() || biases.len() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels with {} weight rows and {} biases",
                labels.len(),
                weights.nrows(),
                biases.len()
            )));
        }
        if weights.iter().chain(biases.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scorer parameters".into()));
        }
        Ok(Self {
            labels,
            weights,
            biases,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn biases(&self) -> &Array1<f64> {
        &self.biases
    }

    /// Raw score (logit) of `label` for the given features.
    pub fn score(&self, features: ArrayView1<'_, f64>, label: &str) -> Result<f64> {
        let idx = self
            .labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| Error::LabelNotFound(label.to_string()))?;
        if features.len() != self.weights.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "features have dimension {}, scorer expects {}",
                features.len(),
                self.weights.ncols()
            )));
        }
        Ok(self.weights.row(idx).dot(&features) + self.biases[idx])
    }

    /// Label-membership prediction: logit > 0.
    pub fn predicts(&self, features: ArrayView1<'_, f64>, label: &str) -> Result<bool> {
        Ok(self.score(features, label)? > 0.0)
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Fits one logistic classifier per label on whole-image features by seeded
/// SGD. The label universe is the sorted union of the images' label sets.
pub fn train_scorer(
    images: &[MultiLabelImage],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<MultiLabelScorer> {
    let labels: Vec<String> = images
        .iter()
        .flat_map(|img| img.labels.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    train_scorer_over(images, labels, epochs, lr, seed)
}

/// As [`train_scorer`] with an explicit label universe. Universe labels with
/// zero positive images keep an all-zero row and emit a warning.
pub fn train_scorer_over(
    images: &[MultiLabelImage],
    labels: Vec<String>,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<MultiLabelScorer> {
    if images.is_empty() {
        return Err(Error::InvalidData(
            "no images to train the scorer on".into(),
        ));
    }
    let dim = images[0].image_features.len();
    for img in images {
        if img.image_features.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "image {:?} has feature dimension {}, expected {dim}",
                img.id,
                img.image_features.len()
            )));
        }
        for label in &img.labels {
            if !labels.contains(label) {
                return Err(Error::LabelNotFound(label.clone()));
            }
        }
    }
    if labels.len() < 2 {
        return Err(Error::InvalidData(format!(
            "scorer training needs at least 2 distinct labels, found {}",
            labels.len()
        )));
    }

    let mut trainable = vec![true; labels.len()];
    for (l, label) in labels.iter().enumerate() {
        let positives = images
            .iter()
            .filter(|img| img.labels.contains(label))
            .count();
        if positives == 0 {
            log::warn!("label {label:?} has no positive images; leaving its row at zero");
            trainable[l] = false;
        }
    }

    let mut weights = Array2::zeros((labels.len(), dim));
    let mut biases = Array1::zeros(labels.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..images.len()).collect();

    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let img = &images[i];
            for (l, label) in labels.iter().enumerate() {
                if !trainable[l] {
                    continue;
                }
                let target = img.labels.contains(label) as u8 as f64;
                let logit = weights.row(l).dot(&img.image_features) + biases[l];
                let err = sigmoid(logit) - target;
                let mut row = weights.row_mut(l);
                row.scaled_add(-lr * err, &img.image_features);
                biases[l] -= lr * err;
            }
        }
    }

    Ok(MultiLabelScorer {
        labels,
        weights,
        biases,
    })
}

/// For each ground-truth label of `image`, emits one instance carrying the
/// features of the region that scores highest for that label. Ties go to
/// the lowest region index.
pub fn mine_regions(image: &MultiLabelImage, scorer: &MultiLabelScorer) -> Result<Vec<Instance>> {
    if image.regions.is_empty() {
        return Err(Error::InvalidData(format!(
            "image {:?} has no candidate regions",
            image.id
        )));
    }
    let mut out = Vec::with_capacity(image.labels.len());
    for label in &image.labels {
        let mut best = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for (idx, (_, features)) in image.regions.iter().enumerate() {
            let s = scorer.score(features.view(), label)?;
            if s > best_score {
                best_score = s;
                best = idx;
            }
        }
        let (region_id, features) = &image.regions[best];
        out.push(Instance::new(
            format!("{}:{}:{}", image.id, region_id, label),
            features.clone(),
            label.clone(),
        ));
    }
    Ok(out)
}

/// Keeps proposals whose width and height are at least 0.3 of the image's
/// and whose aspect ratio lies within [0.25, 4], bounds inclusive.
pub fn filter_proposals(
    proposals: &[(f64, f64, f64, f64)],
    image_w: f64,
    image_h: f64,
) -> Vec<(f64, f64, f64, f64)> {
    let min_w = 0.3 * image_w;
    let min_h = 0.3 * image_h;
    proposals
        .iter()
        .copied()
        .filter(|&(_, _, w, h)| {
            let ratio = w / h;
            w >= min_w && h >= min_h && (0.25..=4.0).contains(&ratio)
        })
        .collect()
}
