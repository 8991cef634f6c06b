//! Central finite-difference verification of every analytic gradient.
//!
//! The numerical side only ever evaluates loss *values* on perturbed
//! weights, so it stays independent of the backward-pass code it checks.
//! Configurations are rejection-sampled away from hinge kinks, where the
//! subgradient is one-sided and finite differences straddle the corner.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::embedding::{cosine_distance, EmbeddingModel, Instance, LabelTable};
use crate::error::{Error, Result};
use crate::losses::{
    combined_objective, contrastive_loss, difference_loss, ranking_loss, triplet_loss, DiscMode,
    LossConfig,
};
use crate::sampling::Batch;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Maximum allowed relative error between analytic and numerical gradients.
pub const REL_TOL: f64 = 1e-4;
/// Configurations with any |hinge argument| at or below this are resampled.
pub const KINK_GUARD: f64 = 1e-3;

/// Outcome of one gradient check family.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub configs: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// Central finite differences of `eval` w.r.t. every weight entry.
pub fn numerical_weight_gradient<F>(
    weights: &Array2<f64>,
    step: f64,
    mut eval: F,
) -> Result<Array2<f64>>
where
    F: FnMut(&EmbeddingModel) -> Result<f64>,
{
    let mut grad = Array2::zeros(weights.raw_dim());
    for idx in 0..weights.len() {
        let (r, c) = (idx / weights.ncols(), idx % weights.ncols());
        let mut wp = weights.clone();
        wp[(r, c)] += step;
        let plus = eval(&EmbeddingModel::from_weights(wp)?)?;
        let mut wm = weights.clone();
        wm[(r, c)] -= step;
        let minus = eval(&EmbeddingModel::from_weights(wm)?)?;
        grad[(r, c)] = (plus - minus) / (2.0 * step);
    }
    Ok(grad)
}

/// Relative error with an absolute floor so that exactly-zero gradients do
/// not divide roundoff noise by itself.
pub fn max_rel_err(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn unit_vec(&mut self, dim: usize) -> Array1<f64> {
        loop {
            let v: Array1<f64> =
                Array1::from_shape_fn(dim, |_| self.rng.sample::<f64, _>(StandardNormal));
            let norm = v.dot(&v).sqrt();
            if norm > 1e-3 {
                return v / norm;
            }
        }
    }

    /// Feature vector bounded away from the origin so a weight draw with a
    /// comfortable pre-normalization norm exists.
    fn features(&mut self, dim: usize) -> Array1<f64> {
        loop {
            let x: Array1<f64> = Array1::from_shape_fn(dim, |_| self.rng.gen_range(-1.0..1.0));
            if x.dot(&x).sqrt() > 0.3 {
                return x;
            }
        }
    }

    /// Model with entries in [−1, 1] under which the given inputs all
    /// project with a comfortable pre-normalization norm. `None` when a
    /// bounded number of draws fails; the caller resamples the inputs too.
    fn model_for(&mut self, d: usize, f: usize, inputs: &[&Array1<f64>]) -> Option<EmbeddingModel> {
        for _ in 0..64 {
            let w = Array2::from_shape_fn((d, f), |_| self.rng.gen_range(-1.0..1.0));
            let model = EmbeddingModel::from_weights(w).expect("finite weights");
            let ok = inputs.iter().all(|x| {
                model
                    .project_cached(x.view())
                    .map(|p| p.pre_norm > 0.1)
                    .unwrap_or(false)
            });
            if ok {
                return Some(model);
            }
        }
        None
    }

    fn label_table(&mut self, count: usize, dim: usize) -> LabelTable {
        let entries = (0..count)
            .map(|i| (format!("l{i}"), self.unit_vec(dim)))
            .collect();
        LabelTable::new(entries).expect("generated labels are valid")
    }
}

fn away_from_kinks(args: &[f64]) -> bool {
    args.iter().all(|a| a.abs() > KINK_GUARD)
}

type Config = (
    EmbeddingModel,
    Box<dyn Fn(&EmbeddingModel) -> Result<f64>>,
    Array2<f64>,
);

/// Draws `count` kink-free configurations via `draw`, then verifies each
/// analytic gradient against finite differences.
fn run_family<D>(name: &'static str, count: usize, mut draw: D) -> Result<CheckReport>
where
    D: FnMut() -> Result<Option<Config>>,
{
    let mut configs = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while configs.len() < count {
        attempts += 1;
        if attempts > count * 200 {
            return Err(Error::GradCheckFailed(format!(
                "{name}: could not sample {count} kink-free configurations"
            )));
        }
        if let Some(cfg) = draw()? {
            configs.push(cfg);
        }
    }

    let check_one = |(model, eval, analytic): &Config| -> Result<f64> {
        let numeric = numerical_weight_gradient(model.weights(), FD_STEP, |m| eval(m))?;
        Ok(max_rel_err(analytic, &numeric))
    };
    let errs: Result<Vec<f64>> = configs.iter().map(check_one).collect();
    let worst = errs?.into_iter().fold(0.0, f64::max);

    Ok(CheckReport {
        name,
        configs: count,
        max_rel_err: worst,
        tolerance: REL_TOL,
    })
}

pub fn check_projection(seed: u64, count: usize) -> Result<CheckReport> {
    let mut s = Sampler::new(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < count {
        let d = s.rng.gen_range(2..5usize);
        let fdim = s.rng.gen_range(2..6usize);
        let x = s.features(fdim);
        let Some(model) = s.model_for(d, fdim, &[&x]) else {
            continue;
        };
        let jac = model.project_jacobian(x.view())?;
        for a in 0..d {
            let numeric = numerical_weight_gradient(model.weights(), FD_STEP, |m| {
                Ok(m.project(x.view())?[a])
            })?;
            let analytic = Array2::from_shape_fn((d, fdim), |(b, c)| jac[(a, b, c)]);
            worst = worst.max(max_rel_err(&analytic, &numeric));
        }
        done += 1;
    }
    Ok(CheckReport {
        name: "projection",
        configs: count,
        max_rel_err: worst,
        tolerance: REL_TOL,
    })
}

pub fn check_ranking(seed: u64, count: usize) -> Result<CheckReport> {
    let mut s = Sampler::new(seed);
    run_family("ranking", count, move || {
        let d = s.rng.gen_range(2..5usize);
        let fdim = s.rng.gen_range(2..6usize);
        let n_labels = s.rng.gen_range(2..6usize);
        let labels = s.label_table(n_labels, d);
        let margin = s.rng.gen_range(0.05..0.5);
        let x = s.features(fdim);
        let Some(model) = s.model_for(d, fdim, &[&x]) else {
            return Ok(None);
        };
        let instance = Instance::new("i", x, "l0");

        let f = model.project(instance.features.view())?;
        let s_true = labels.get("l0").unwrap();
        let d_true = cosine_distance(f.view(), s_true)?;
        let mut args = Vec::new();
        for (id, vec) in labels.iter() {
            if id != "l0" {
                args.push(margin + d_true - cosine_distance(f.view(), vec)?);
            }
        }
        if !away_from_kinks(&args) {
            return Ok(None);
        }

        let analytic = ranking_loss(&model, &instance, &labels, margin)?.grad;
        let labels_c = labels.clone();
        let inst_c = instance.clone();
        Ok(Some((
            model,
            Box::new(move |m| Ok(ranking_loss(m, &inst_c, &labels_c, margin)?.value)),
            analytic,
        )))
    })
}

pub fn check_contrastive(seed: u64, count: usize) -> Result<CheckReport> {
    let mut s = Sampler::new(seed);
    run_family("contrastive", count, move || {
        let d = s.rng.gen_range(2..5usize);
        let fdim = s.rng.gen_range(2..6usize);
        let margin = s.rng.gen_range(0.2..1.5);
        let xa = s.features(fdim);
        let xb = s.features(fdim);
        let Some(model) = s.model_for(d, fdim, &[&xa, &xb]) else {
            return Ok(None);
        };
        let same = s.rng.gen_bool(0.5);
        let a = Instance::new("a", xa, "c0");
        let b = Instance::new("b", xb, if same { "c0" } else { "c1" });

        if !same {
            let fa = model.project(a.features.view())?;
            let fb = model.project(b.features.view())?;
            let arg = margin - cosine_distance(fa.view(), fb.view())?;
            if !away_from_kinks(&[arg]) {
                return Ok(None);
            }
        }

        let analytic = contrastive_loss(&model, &a, &b, margin)?.grad;
        let (ac, bc) = (a.clone(), b.clone());
        Ok(Some((
            model,
            Box::new(move |m| Ok(contrastive_loss(m, &ac, &bc, margin)?.value)),
            analytic,
        )))
    })
}

pub fn check_triplet(seed: u64, count: usize) -> Result<CheckReport> {
    let mut s = Sampler::new(seed);
    run_family("triplet", count, move || {
        let d = s.rng.gen_range(2..5usize);
        let fdim = s.rng.gen_range(2..6usize);
        let margin = s.rng.gen_range(0.2..1.5);
        let xr = s.features(fdim);
        let xp = s.features(fdim);
        let xn = s.features(fdim);
        let Some(model) = s.model_for(d, fdim, &[&xr, &xp, &xn]) else {
            return Ok(None);
        };
        let r = Instance::new("r", xr, "c0");
        let p = Instance::new("p", xp, "c0");
        let n = Instance::new("n", xn, "c1");

        let fr = model.project(r.features.view())?;
        let fp = model.project(p.features.view())?;
        let fn_ = model.project(n.features.view())?;
        let arg = margin + cosine_distance(fr.view(), fp.view())?
            - cosine_distance(fr.view(), fn_.view())?;
        if !away_from_kinks(&[arg]) {
            return Ok(None);
        }

        let analytic = triplet_loss(&model, &r, &p, &n, margin)?.grad;
        let (rc, pc, nc) = (r.clone(), p.clone(), n.clone());
        Ok(Some((
            model,
            Box::new(move |m| Ok(triplet_loss(m, &rc, &pc, &nc, margin)?.value)),
            analytic,
        )))
    })
}

pub fn check_difference(seed: u64, count: usize) -> Result<CheckReport> {
    let mut s = Sampler::new(seed);
    run_family("difference", count, move || {
        let d = s.rng.gen_range(2..5usize);
        let fdim = s.rng.gen_range(2..6usize);
        let labels = s.label_table(2, d);
        let xa = s.features(fdim);
        let xb = s.features(fdim);
        let Some(model) = s.model_for(d, fdim, &[&xa, &xb]) else {
            return Ok(None);
        };
        let a = Instance::new("a", xa, "l0");
        let b = Instance::new("b", xb, "l1");

        let analytic = difference_loss(&model, &a, &b, &labels)?.grad;
        let (ac, bc, lc) = (a.clone(), b.clone(), labels.clone());
        Ok(Some((
            model,
            Box::new(move |m| Ok(difference_loss(m, &ac, &bc, &lc)?.value)),
            analytic,
        )))
    })
}

pub fn check_combined(seed: u64, count: usize) -> Result<CheckReport> {
    let mut s = Sampler::new(seed);
    run_family("combined", count, move || {
        let d = s.rng.gen_range(2..4usize);
        let fdim = s.rng.gen_range(2..5usize);
        let labels = s.label_table(3, d);
        let use_triplet = s.rng.gen_bool(0.5);
        let cfg = LossConfig {
            margin_rank: s.rng.gen_range(0.05..0.3),
            margin_disc: s.rng.gen_range(0.3..1.2),
            lambda1: s.rng.gen_range(0.2..2.0),
            lambda2: s.rng.gen_range(0.2..2.0),
            lambda3: s.rng.gen_range(0.2..2.0),
            weight_decay: 0.0005,
            disc_mode: if use_triplet {
                DiscMode::Triplet
            } else {
                DiscMode::Contrastive
            },
            difference_enabled: true,
            rank_enabled: true,
        };

        let xs: Vec<Array1<f64>> = (0..4).map(|_| s.features(fdim)).collect();
        let refs: Vec<&Array1<f64>> = xs.iter().collect();
        let Some(model) = s.model_for(d, fdim, &refs) else {
            return Ok(None);
        };
        let i0 = Instance::new("i0", xs[0].clone(), "l0");
        let i1 = Instance::new("i1", xs[1].clone(), "l0");
        let i2 = Instance::new("i2", xs[2].clone(), "l1");
        let i3 = Instance::new("i3", xs[3].clone(), "l2");

        let batch = Batch {
            ranking_instances: vec![i0.clone(), i2.clone()],
            pairs: if use_triplet {
                Vec::new()
            } else {
                vec![(i0.clone(), i1.clone()), (i0.clone(), i2.clone())]
            },
            triplets: if use_triplet {
                vec![(i0.clone(), i1.clone(), i2.clone())]
            } else {
                Vec::new()
            },
            diff_pairs: vec![(i0.clone(), i2.clone()), (i1.clone(), i3.clone())],
            negative_label_ids: None,
        };

        // Hinge arguments of every term in the batch.
        let mut args = Vec::new();
        let embed = |inst: &Instance| model.project(inst.features.view());
        for inst in &batch.ranking_instances {
            let f = embed(inst)?;
            let d_true = cosine_distance(f.view(), labels.get(&inst.label).unwrap())?;
            for (id, vec) in labels.iter() {
                if id != inst.label {
                    args.push(cfg.margin_rank + d_true - cosine_distance(f.view(), vec)?);
                }
            }
        }
        for (a, b) in &batch.pairs {
            if a.label != b.label {
                let dist = cosine_distance(embed(a)?.view(), embed(b)?.view())?;
                args.push(cfg.margin_disc - dist);
            }
        }
        for (r, p, n) in &batch.triplets {
            let fr = embed(r)?;
            let arg = cfg.margin_disc + cosine_distance(fr.view(), embed(p)?.view())?
                - cosine_distance(fr.view(), embed(n)?.view())?;
            args.push(arg);
        }
        if !away_from_kinks(&args) {
            return Ok(None);
        }

        let analytic = combined_objective(&model, &batch, &labels, &cfg)?.grad;
        let (bc, lc, cc) = (batch.clone(), labels.clone(), cfg.clone());
        Ok(Some((
            model,
            Box::new(move |m| Ok(combined_objective(m, &bc, &lc, &cc)?.value)),
            analytic,
        )))
    })
}

/// Runs every gradient check family with `count` configurations each.
pub fn run_suite(seed: u64, count: usize) -> Result<Vec<CheckReport>> {
    let families: Vec<fn(u64, usize) -> Result<CheckReport>> = vec![
        check_projection,
        check_ranking,
        check_contrastive,
        check_triplet,
        check_difference,
        check_combined,
    ];

    #[cfg(feature = "parallel")]
    {
        families
            .into_par_iter()
            .enumerate()
            .map(|(i, f)| f(seed.wrapping_add(i as u64), count))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        families
            .into_iter()
            .enumerate()
            .map(|(i, f)| f(seed.wrapping_add(i as u64), count))
            .collect()
    }
}
