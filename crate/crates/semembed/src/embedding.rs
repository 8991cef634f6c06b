//! Semantic space data model: label embeddings, instances, and the
//! linear + unit-normalization projection with its weight Jacobian.

use std::collections::HashMap;

use ndarray::{Array1, Array2, Array3, ArrayView1};

use crate::error::{Error, Result};

/// Default norm guard below which a projection input is rejected.
pub const DEFAULT_NORM_EPSILON: f64 = 1e-12;

/// Tolerance used when asserting that stored label vectors are unit norm.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// Named, unit-normalized label embedding vectors in a fixed order.
///
/// Vectors are renormalized on construction. A norm that deviates from 1.0
/// by more than 1e-3 triggers a warning; more than 0.5 is rejected as a
/// likely wrong file.
#[derive(Debug, Clone)]
pub struct LabelTable {
    ids: Vec<String>,
    vectors: Vec<Array1<f64>>,
    index: HashMap<String, usize>,
    dim: usize,
}

impl LabelTable {
    pub fn new(entries: Vec<(String, Array1<f64>)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidData("label table is empty".into()));
        }
        let dim = entries[0].1.len();
        let mut ids = Vec::with_capacity(entries.len());
        let mut vectors = Vec::with_capacity(entries.len());
        let mut index = HashMap::with_capacity(entries.len());
        for (id, vector) in entries {
            if vector.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "label {id:?} has dimension {}, expected {dim}",
                    vector.len()
                )));
            }
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("label {id:?} embedding")));
            }
            let norm = l2_norm(vector.view());
            let deviation = (norm - 1.0).abs();
            if deviation > 0.5 {
                return Err(Error::InvalidData(format!(
                    "label {id:?} has norm {norm:.6}, too far from unit length"
                )));
            }
            if norm <= DEFAULT_NORM_EPSILON {
                return Err(Error::DegenerateInput(format!(
                    "label {id:?} embedding has near-zero norm"
                )));
            }
            if deviation > 1e-3 {
                log::warn!("label {id:?} has norm {norm:.6}; renormalizing");
            }
            if index.insert(id.clone(), ids.len()).is_some() {
                return Err(Error::DuplicateLabel(id));
            }
            vectors.push(vector / norm);
            ids.push(id);
        }
        Ok(Self {
            ids,
            vectors,
            index,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<ArrayView1<'_, f64>> {
        self.index.get(id).map(|&i| self.vectors[i].view())
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Entries in table order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, ArrayView1<'_, f64>)> {
        self.ids
            .iter()
            .zip(self.vectors.iter())
            .map(|(id, v)| (id.as_str(), v.view()))
    }

    /// Concatenation of two tables; duplicate ids are rejected.
    pub fn union(&self, other: &LabelTable) -> Result<LabelTable> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch(format!(
                "cannot join label tables of dimension {} and {}",
                self.dim, other.dim
            )));
        }
        let entries: Vec<(String, Array1<f64>)> = self
            .iter()
            .chain(other.iter())
            .map(|(id, v)| (id.to_string(), v.to_owned()))
            .collect();
        // `new` re-checks duplicate ids across the two tables.
        LabelTable::new(entries)
    }
}

/// A single training or test instance: one feature vector, one label.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub features: Array1<f64>,
    pub label: String,
}

impl Instance {
    pub fn new(id: impl Into<String>, features: Array1<f64>, label: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            features,
            label: label.into(),
        }
    }
}

/// A collection of instances with a common feature dimension.
#[derive(Debug, Clone)]
pub struct Dataset {
    instances: Vec<Instance>,
    feature_dim: usize,
}

impl Dataset {
    pub fn new(instances: Vec<Instance>) -> Result<Self> {
        let Some(first) = instances.first() else {
            return Err(Error::InvalidData("dataset is empty".into()));
        };
        let feature_dim = first.features.len();
        for inst in &instances {
            if inst.features.len() != feature_dim {
                return Err(Error::DimensionMismatch(format!(
                    "instance {:?} has feature dimension {}, expected {feature_dim}",
                    inst.id,
                    inst.features.len()
                )));
            }
        }
        Ok(Self {
            instances,
            feature_dim,
        })
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Every instance label must exist in `labels`.
    pub fn validate_against(&self, labels: &LabelTable) -> Result<()> {
        for inst in &self.instances {
            if !labels.contains(&inst.label) {
                return Err(Error::LabelNotFound(inst.label.clone()));
            }
        }
        Ok(())
    }

    /// Distinct labels in order of first appearance.
    pub fn label_ids(&self) -> Vec<String> {
        let mut seen = HashMap::new();
        let mut out = Vec::new();
        for inst in &self.instances {
            if seen.insert(inst.label.clone(), ()).is_none() {
                out.push(inst.label.clone());
            }
        }
        out
    }
}

/// Result of projecting a feature vector: the unit-norm embedding together
/// with the pre-normalization norm, which the backward pass needs.
#[derive(Debug, Clone)]
pub struct Projection {
    pub embedding: Array1<f64>,
    pub pre_norm: f64,
}

/// Learnable linear map from feature space to the semantic space, followed
/// by normalization to unit length.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    weights: Array2<f64>,
    epsilon: f64,
}

impl EmbeddingModel {
    /// `weights` has shape (embed_dim, feature_dim).
    pub fn from_weights(weights: Array2<f64>) -> Result<Self> {
        Self::with_epsilon(weights, DEFAULT_NORM_EPSILON)
    }

    pub fn with_epsilon(weights: Array2<f64>, epsilon: f64) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("model weights".into()));
        }
        if epsilon <= 0.0 {
            return Err(Error::InvalidConfig(
                "norm guard epsilon must be > 0".into(),
            ));
        }
        Ok(Self { weights, epsilon })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weights
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn embed_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.ncols()
    }

    /// Squared Frobenius norm of the weights.
    pub fn weight_norm_sq(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum()
    }

    /// Projects `x` into the semantic space: `W·x / ‖W·x‖`.
    ///
    /// Fails with a degenerate-input error when `‖W·x‖` is at or below the
    /// norm guard, since the direction is then undefined.
    pub fn project(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.project_cached(x)?.embedding)
    }

    /// As [`project`](Self::project), keeping the pre-normalization norm.
    pub fn project_cached(&self, x: ArrayView1<'_, f64>) -> Result<Projection> {
        if x.len() != self.feature_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input has dimension {}, model expects {}",
                x.len(),
                self.feature_dim()
            )));
        }
        let raw = self.weights.dot(&x);
        let pre_norm = l2_norm(raw.view());
        if pre_norm <= self.epsilon {
            return Err(Error::DegenerateInput(format!(
                "‖W·x‖ = {pre_norm:.3e} is at or below the norm guard {:.1e}",
                self.epsilon
            )));
        }
        Ok(Projection {
            embedding: raw / pre_norm,
            pre_norm,
        })
    }

    /// Jacobian of the projection with respect to the weights.
    ///
    /// Entry `[a, b, c]` is `∂f_a/∂W_{bc}`, i.e. `(δ_ab − f_a f_b) x_c / ‖W·x‖`.
    pub fn project_jacobian(&self, x: ArrayView1<'_, f64>) -> Result<Array3<f64>> {
        let proj = self.project_cached(x)?;
        let (d, fdim) = (self.embed_dim(), self.feature_dim());
        let f = &proj.embedding;
        let mut jac = Array3::zeros((d, d, fdim));
        for a in 0..d {
            for b in 0..d {
                let coeff = ((a == b) as u8 as f64 - f[a] * f[b]) / proj.pre_norm;
                for c in 0..fdim {
                    jac[(a, b, c)] = coeff * x[c];
                }
            }
        }
        Ok(jac)
    }

    /// Pulls a gradient w.r.t. the embedding back to a gradient w.r.t. the
    /// weights: `grad_W = ((u − (u·f)f) / ‖W·x‖) ⊗ x`.
    pub(crate) fn backprop_to_weights(
        &self,
        x: ArrayView1<'_, f64>,
        proj: &Projection,
        upstream: ArrayView1<'_, f64>,
    ) -> Array2<f64> {
        let f = &proj.embedding;
        let uf = upstream.dot(f);
        let left = (&upstream - &(f * uf)) / proj.pre_norm;
        outer(left.view(), x)
    }
}

/// Cosine distance `1 − u·v` between unit-norm vectors.
pub fn cosine_distance(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch(format!(
            "cosine distance between vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    Ok(1.0 - u.dot(&v))
}

pub(crate) fn l2_norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

pub(crate) fn outer(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros((u.len(), v.len()));
    for (i, &ui) in u.iter().enumerate() {
        for (j, &vj) in v.iter().enumerate() {
            out[(i, j)] = ui * vj;
        }
    }
    out
}
