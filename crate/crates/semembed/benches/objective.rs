//! Sequential vs rayon-parallel throughput of the batch objective and
//! dataset ranking.

use criterion::{criterion_group, criterion_main, Criterion};

use semembed::eval::rank_dataset;
use semembed::losses::{combined_objective, DiscMode, LossConfig};
use semembed::sampling::{sample_pair_batch, sample_triplet_batch};
use semembed::synth::{generate_synthetic, SyntheticSpec};
use semembed::trainer::init_model;
use semembed::{Batch, Dataset, EmbeddingModel, LabelTable};

struct Fixture {
    model: EmbeddingModel,
    labels: LabelTable,
    train: Dataset,
    pair_batch: Batch,
    triplet_batch: Batch,
}

fn fixture() -> Fixture {
    let spec = SyntheticSpec {
        classes: 10,
        per_class: 50,
        feature_dim: 64,
        embed_dim: 32,
        noise_sigma: 0.1,
        class_overlap: 0.2,
        seed: 7,
    };
    let (train, _, labels) = generate_synthetic(&spec).expect("synthetic data");
    let model = init_model(spec.feature_dim, spec.embed_dim, 0.1, 1).expect("model");
    let pair_batch = sample_pair_batch(&train, 256, 3).expect("pair batch");
    let triplet_batch = sample_triplet_batch(&train, 32, 0.2, 10, 3).expect("triplet batch");
    Fixture {
        model,
        labels,
        train,
        pair_batch,
        triplet_batch,
    }
}

fn bench_objective(c: &mut Criterion) {
    let fx = fixture();
    let contrastive_cfg = LossConfig {
        disc_mode: DiscMode::Contrastive,
        difference_enabled: true,
        ..LossConfig::default()
    };
    let triplet_cfg = LossConfig {
        disc_mode: DiscMode::Triplet,
        difference_enabled: true,
        ..LossConfig::default()
    };

    let mut group = c.benchmark_group("combined_objective");
    group.bench_function("pairs/sequential", |b| {
        b.iter(|| {
            combined_objective(&fx.model, &fx.pair_batch, &fx.labels, &contrastive_cfg).unwrap()
        })
    });
    #[cfg(feature = "parallel")]
    group.bench_function("pairs/parallel", |b| {
        b.iter(|| {
            semembed::losses::combined_objective_par(
                &fx.model,
                &fx.pair_batch,
                &fx.labels,
                &contrastive_cfg,
            )
            .unwrap()
        })
    });
    group.bench_function("triplets/sequential", |b| {
        b.iter(|| {
            combined_objective(&fx.model, &fx.triplet_batch, &fx.labels, &triplet_cfg).unwrap()
        })
    });
    #[cfg(feature = "parallel")]
    group.bench_function("triplets/parallel", |b| {
        b.iter(|| {
            semembed::losses::combined_objective_par(
                &fx.model,
                &fx.triplet_batch,
                &fx.labels,
                &triplet_cfg,
            )
            .unwrap()
        })
    });
    group.finish();

    let mut group = c.benchmark_group("rank_dataset");
    group.bench_function("sequential", |b| {
        b.iter(|| rank_dataset(&fx.model, &fx.train, &fx.labels).unwrap())
    });
    #[cfg(feature = "parallel")]
    group.bench_function("parallel", |b| {
        b.iter(|| semembed::eval::rank_dataset_par(&fx.model, &fx.train, &fx.labels).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_objective);
criterion_main!(benches);
