//! SGD with momentum, step-decay learning rate, and seeded initialization.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{Dataset, EmbeddingModel, LabelTable};
use crate::error::{Error, Result};
use crate::losses::{combined_objective, DiscMode, LossConfig, LossValueAndGrad};
use crate::sampling::{
    sample_instance_batch, sample_pair_batch_with, sample_triplet_batch_with, Batch, SamplerConfig,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Learning rate is multiplied by `lr_step_factor` every
    /// `lr_step_epochs` epochs; 0 disables the decay.
    pub lr_step_epochs: usize,
    pub lr_step_factor: f64,
    pub epochs: usize,
    /// Batches per epoch; derived from the dataset size when `None`.
    pub batches_per_epoch: Option<usize>,
    #[serde(default)]
    pub sampler: SamplerConfig,
    pub rng_seed: u64,
    pub init_scale: f64,
    /// Evaluate batch terms on the rayon pool. Falls back to sequential
    /// execution when the `parallel` feature is compiled out.
    pub parallel: bool,
    /// Emit `epoch <n> loss <value>` lines on stdout.
    pub progress: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            lr_step_epochs: 80,
            lr_step_factor: 0.1,
            epochs: 120,
            batches_per_epoch: None,
            sampler: SamplerConfig::default(),
            rng_seed: 0,
            init_scale: 0.1,
            parallel: false,
            progress: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("learning rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.lr_step_factor > 0.0 && self.lr_step_factor <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "lr step factor must be in (0, 1], got {}",
                self.lr_step_factor
            )));
        }
        if self.init_scale < 0.0 {
            return Err(Error::InvalidConfig(
                "init scale must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if self.lr_step_epochs == 0 {
            return self.learning_rate;
        }
        let steps = (epoch / self.lr_step_epochs) as i32;
        self.learning_rate * self.lr_step_factor.powi(steps)
    }
}

/// Model weights with optimizer state and the per-epoch loss trace.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: EmbeddingModel,
    pub velocity: Array2<f64>,
    pub epoch: usize,
    pub loss_history: Vec<(usize, f64)>,
}

impl TrainState {
    pub fn new(model: EmbeddingModel) -> Self {
        let velocity = Array2::zeros((model.embed_dim(), model.feature_dim()));
        Self {
            model,
            velocity,
            epoch: 0,
            loss_history: Vec::new(),
        }
    }
}

/// Weights i.i.d. uniform in [−init_scale, +init_scale], seeded.
pub fn init_model(
    feature_dim: usize,
    embed_dim: usize,
    init_scale: f64,
    rng_seed: u64,
) -> Result<EmbeddingModel> {
    if feature_dim == 0 || embed_dim == 0 {
        return Err(Error::InvalidConfig("model dimensions must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let weights = Array2::from_shape_fn((embed_dim, feature_dim), |_| {
        if init_scale == 0.0 {
            0.0
        } else {
            rng.gen_range(-init_scale..=init_scale)
        }
    });
    EmbeddingModel::from_weights(weights)
}

/// One momentum step: `v ← μ·v − lr·g`, `w ← w + v`. Weight decay is part
/// of the objective gradient, not applied here.
pub fn sgd_step(state: &mut TrainState, grad: &Array2<f64>, momentum: f64, lr: f64) -> Result<()> {
    if grad.raw_dim() != state.velocity.raw_dim() {
        return Err(Error::DimensionMismatch(format!(
            "gradient shape {:?} does not match weights {:?}",
            grad.shape(),
            state.velocity.shape()
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    state.velocity *= momentum;
    state.velocity.scaled_add(-lr, grad);
    *state.model.weights_mut() += &state.velocity;
    Ok(())
}

/// Draws the batch shape the loss configuration expects.
fn sample_batch(
    dataset: &Dataset,
    loss_cfg: &LossConfig,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<Batch> {
    let mut batch = match loss_cfg.disc_mode {
        DiscMode::Contrastive => {
            sample_pair_batch_with(dataset, sampler.batch_size, sampler.max_negatives, seed)?
        }
        DiscMode::Triplet => sample_triplet_batch_with(
            dataset,
            sampler.references_per_batch,
            sampler.positive_fraction,
            sampler.candidates_per_ref,
            sampler.max_negatives,
            seed,
        )?,
        DiscMode::None if loss_cfg.difference_enabled => {
            let mut b =
                sample_pair_batch_with(dataset, sampler.batch_size, sampler.max_negatives, seed)?;
            b.pairs.clear();
            b
        }
        DiscMode::None => {
            sample_instance_batch(dataset, sampler.batch_size, sampler.max_negatives, seed)?
        }
    };
    if !loss_cfg.difference_enabled {
        batch.diff_pairs.clear();
    }
    Ok(batch)
}

/// Drops batch entries whose instances project degenerately under the
/// current weights. Returns (kept batch, distinct seen, distinct skipped).
fn filter_degenerate(model: &EmbeddingModel, batch: Batch) -> (Batch, usize, usize) {
    use std::collections::HashMap;
    let mut status: HashMap<String, bool> = HashMap::new();
    let mut ok = |inst: &crate::embedding::Instance| -> bool {
        if let Some(&good) = status.get(&inst.id) {
            return good;
        }
        let good = model.project(inst.features.view()).is_ok();
        if !good {
            log::warn!("skipping instance {:?}: degenerate projection", inst.id);
        }
        status.insert(inst.id.clone(), good);
        good
    };

    let ranking_instances = batch
        .ranking_instances
        .into_iter()
        .filter(|i| ok(i))
        .collect();
    let pairs = batch
        .pairs
        .into_iter()
        .filter(|(a, b)| ok(a) && ok(b))
        .collect();
    let triplets = batch
        .triplets
        .into_iter()
        .filter(|(r, p, n)| ok(r) && ok(p) && ok(n))
        .collect();
    let diff_pairs = batch
        .diff_pairs
        .into_iter()
        .filter(|(a, b)| ok(a) && ok(b))
        .collect();

    let seen = status.len();
    let skipped = status.values().filter(|&&good| !good).count();
    (
        Batch {
            ranking_instances,
            pairs,
            triplets,
            diff_pairs,
            negative_label_ids: batch.negative_label_ids,
        },
        seen,
        skipped,
    )
}

fn objective(
    model: &EmbeddingModel,
    batch: &Batch,
    labels: &LabelTable,
    loss_cfg: &LossConfig,
    parallel: bool,
) -> Result<LossValueAndGrad> {
    #[cfg(feature = "parallel")]
    if parallel {
        return crate::losses::combined_objective_par(model, batch, labels, loss_cfg);
    }
    #[cfg(not(feature = "parallel"))]
    if parallel {
        log::warn!("parallel execution requested but the `parallel` feature is disabled");
    }
    combined_objective(model, batch, labels, loss_cfg)
}

/// Full training loop: sample → objective → momentum step, with step decay
/// on the learning rate and per-epoch mean batch loss in the history.
pub fn train(
    dataset: &Dataset,
    labels: &LabelTable,
    loss_cfg: &LossConfig,
    cfg: &TrainConfig,
) -> Result<TrainState> {
    cfg.validate()?;
    loss_cfg.validate()?;
    dataset.validate_against(labels)?;

    let model = init_model(
        dataset.feature_dim(),
        labels.dim(),
        cfg.init_scale,
        cfg.rng_seed,
    )?;
    let mut state = TrainState::new(model);
    let sampler = cfg.sampler.clone();
    let batch_unit = match loss_cfg.disc_mode {
        DiscMode::Triplet => sampler.references_per_batch,
        _ => sampler.batch_size,
    };
    let batches_per_epoch = cfg
        .batches_per_epoch
        .unwrap_or_else(|| (dataset.len() / batch_unit.max(1)).max(1));
    let mut seed_stream = ChaCha8Rng::seed_from_u64(cfg.rng_seed.wrapping_add(1));

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        let mut loss_sum = 0.0;
        let mut seen_total = 0usize;
        let mut skipped_total = 0usize;

        for _ in 0..batches_per_epoch {
            let batch_seed: u64 = seed_stream.gen();
            let batch = sample_batch(dataset, loss_cfg, &sampler, batch_seed)?;
            let (batch, seen, skipped) = filter_degenerate(&state.model, batch);
            seen_total += seen;
            skipped_total += skipped;
            let lv = objective(&state.model, &batch, labels, loss_cfg, cfg.parallel)?;
            loss_sum += lv.value;
            sgd_step(&mut state, &lv.grad, cfg.momentum, lr)?;
        }

        if seen_total > 0 && skipped_total * 2 > seen_total {
            return Err(Error::TooManySkipped {
                skipped: skipped_total,
                total: seen_total,
                epoch,
            });
        }

        let mean_loss = loss_sum / batches_per_epoch as f64;
        state.epoch = epoch + 1;
        state.loss_history.push((state.epoch, mean_loss));
        if cfg.progress {
            println!("epoch {} loss {}", state.epoch, mean_loss);
        }
    }
    Ok(state)
}
