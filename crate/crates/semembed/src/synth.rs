//! Synthetic dataset generation: unit-sphere label vectors with a
//! controllable overlap, pushed through a hidden orthonormal-column linear
//! map into feature space with Gaussian noise.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{l2_norm, Dataset, Instance, LabelTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub noise_sigma: f64,
    /// 0 keeps class directions near-orthogonal (exactly orthonormal when
    /// the class count fits the dimension); 1 collapses them onto a single
    /// random center.
    pub class_overlap: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::InvalidConfig("need at least 2 classes".into()));
        }
        if self.per_class < 2 {
            return Err(Error::InvalidConfig(
                "need at least 2 instances per class".into(),
            ));
        }
        if self.embed_dim == 0 {
            return Err(Error::InvalidConfig(
                "embedding dimension must be ≥ 1".into(),
            ));
        }
        if self.feature_dim < self.embed_dim {
            return Err(Error::InvalidConfig(format!(
                "feature dimension {} must be ≥ embedding dimension {} so the hidden \
                 map stays injective",
                self.feature_dim, self.embed_dim
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidConfig("noise sigma must be ≥ 0".into()));
        }
        if !(0.0..=1.0).contains(&self.class_overlap) {
            return Err(Error::InvalidConfig(format!(
                "class overlap must be in [0, 1], got {}",
                self.class_overlap
            )));
        }
        Ok(())
    }
}

fn gaussian_vec<R: Rng>(dim: usize, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_fn(dim, |_| rng.sample::<f64, _>(StandardNormal))
}

fn unit_vec<R: Rng>(dim: usize, rng: &mut R) -> Array1<f64> {
    loop {
        let v = gaussian_vec(dim, rng);
        let norm = l2_norm(v.view());
        if norm > 1e-6 {
            return v / norm;
        }
    }
}

/// Random orthonormal set of `count ≤ dim` vectors (Gram-Schmidt on
/// Gaussian draws, redrawing degenerate residuals).
fn orthonormal_set<R: Rng>(count: usize, dim: usize, rng: &mut R) -> Vec<Array1<f64>> {
    let mut basis: Vec<Array1<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian_vec(dim, rng);
        for b in &basis {
            let coeff = v.dot(b);
            v.scaled_add(-coeff, b);
        }
        let norm = l2_norm(v.view());
        if norm > 1e-6 {
            basis.push(v / norm);
        }
    }
    basis
}

/// Spreads `count > dim` unit vectors by descending the frame potential
/// Σ (v_i·v_j)², which pushes pairwise angles apart.
fn spread_set<R: Rng>(count: usize, dim: usize, rng: &mut R) -> Vec<Array1<f64>> {
    let mut vectors: Vec<Array1<f64>> = (0..count).map(|_| unit_vec(dim, rng)).collect();
    let step = 0.1;
    for _ in 0..200 {
        for i in 0..count {
            let mut grad = Array1::zeros(dim);
            for j in 0..count {
                if i != j {
                    let dot = vectors[i].dot(&vectors[j]);
                    grad.scaled_add(dot, &vectors[j]);
                }
            }
            let mut v = vectors[i].clone();
            v.scaled_add(-step, &grad);
            let norm = l2_norm(v.view());
            if norm > 1e-9 {
                vectors[i] = v / norm;
            }
        }
    }
    vectors
}

/// Generates `(train, test, labels)` with an 80/20 per-class split. The
/// hidden map has orthonormal columns, so with zero noise a perfect linear
/// model (its transpose) recovers every label exactly.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset, LabelTable)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.embed_dim;

    let mut directions = if spec.classes <= d {
        orthonormal_set(spec.classes, d, &mut rng)
    } else {
        spread_set(spec.classes, d, &mut rng)
    };

    let t = spec.class_overlap;
    if t > 0.0 {
        loop {
            let center = unit_vec(d, &mut rng);
            let blended: Vec<Array1<f64>> = directions
                .iter()
                .map(|v| v * (1.0 - t) + &center * t)
                .collect();
            if blended.iter().all(|v| l2_norm(v.view()) > 1e-6) {
                directions = blended
                    .into_iter()
                    .map(|v| {
                        let norm = l2_norm(v.view());
                        v / norm
                    })
                    .collect();
                break;
            }
        }
    }

    // Hidden feature map with orthonormal columns, stored column-wise.
    let columns = orthonormal_set(d, spec.feature_dim, &mut rng);
    let mut hidden = Array2::zeros((spec.feature_dim, d));
    for (j, col) in columns.iter().enumerate() {
        hidden.column_mut(j).assign(col);
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    let n_train = ((4 * spec.per_class) / 5).clamp(1, spec.per_class - 1);
    for (ci, direction) in directions.iter().enumerate() {
        let label = format!("c{ci}");
        let clean = hidden.dot(direction);
        for j in 0..spec.per_class {
            let noise = gaussian_vec(spec.feature_dim, &mut rng);
            let features = &clean + &(noise * spec.noise_sigma);
            let inst = Instance::new(format!("c{ci}_i{j}"), features, label.clone());
            if j < n_train {
                train.push(inst);
            } else {
                test.push(inst);
            }
        }
    }

    let labels = LabelTable::new(
        directions
            .into_iter()
            .enumerate()
            .map(|(ci, v)| (format!("c{ci}"), v))
            .collect(),
    )?;
    Ok((Dataset::new(train)?, Dataset::new(test)?, labels))
}
