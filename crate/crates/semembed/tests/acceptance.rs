//! Acceptance suite: one test per release criterion, each printing a
//! pass/fail line (visible with `cargo test --test acceptance -- --nocapture`).

mod common;

use std::collections::HashMap;
use std::time::Instant;

use ndarray::arr1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semembed::embedding::{Dataset, EmbeddingModel, Instance, LabelTable};
use semembed::eval::{
    confusion_matrix, hit_at_k, mean_average_precision, multilabel_metrics, rank_dataset,
    zero_shot_eval,
};
use semembed::fileio::{load_checkpoint, save_checkpoint};
use semembed::gradcheck;
use semembed::losses::{
    combined_objective, contrastive_loss, difference_loss, ranking_loss, triplet_loss, DiscMode,
    LossConfig,
};
use semembed::mining::{mine_regions, MultiLabelImage, MultiLabelScorer};
use semembed::sampling::{sample_pair_batch, sample_triplet_batch, Batch, SamplerConfig};
use semembed::synth::{generate_synthetic, SyntheticSpec};
use semembed::trainer::{train, TrainConfig, TrainState};

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

fn quiet_train_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        rng_seed: seed,
        progress: false,
        ..TrainConfig::default()
    }
}

fn held_out_hit_at_1(model: &EmbeddingModel, test: &Dataset, labels: &LabelTable) -> f64 {
    let rankings = rank_dataset(model, test, labels).unwrap();
    let gt: HashMap<String, String> = test
        .instances()
        .iter()
        .map(|i| (i.id.clone(), i.label.clone()))
        .collect();
    hit_at_k(&rankings, &gt, 1).unwrap()
}

/// Criterion 1: analytic gradients of every loss match central finite
/// differences (step 1e-5) within 1e-4 relative error on ≥100 kink-free
/// seeded configurations, in under 30 s.
#[test]
fn criterion_1_gradient_correctness() {
    let started = Instant::now();
    let reports = gradcheck::run_suite(0, 100).unwrap();
    let elapsed = started.elapsed();
    assert!(reports.len() >= 5);
    for r in &reports {
        assert!(
            r.passed(),
            "{}: max rel err {} exceeds {}",
            r.name,
            r.max_rel_err,
            r.tolerance
        );
    }
    assert!(
        elapsed.as_secs_f64() < 30.0,
        "gradient suite took {elapsed:?}"
    );
    let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    println!(
        "criterion 1 (gradient correctness): PASS: worst rel err {worst:.3e} in {:.2}s",
        elapsed.as_secs_f64()
    );
}

/// Unit vector at cosine distance `d` from (1, 0).
fn at_distance(d: f64) -> ndarray::Array1<f64> {
    let c = 1.0 - d;
    arr1(&[c, (1.0 - c * c).sqrt()])
}

/// Criterion 2: the hand-derived loss fixtures reproduce within 1e-9.
#[test]
fn criterion_2_loss_fixtures() {
    let model = EmbeddingModel::from_weights(ndarray::arr2(&[[1.0, 0.0], [0.0, 1.0]])).unwrap();
    let labels = LabelTable::new(vec![
        ("t".into(), arr1(&[1.0, 0.0])),
        ("o".into(), at_distance(0.05)),
    ])
    .unwrap();

    let i_true = Instance::new("i", arr1(&[1.0, 0.0]), "t");
    let rank = ranking_loss(&model, &i_true, &labels, 0.1).unwrap();
    assert!((rank.value - 0.05).abs() < 1e-9);

    let a = Instance::new("a", arr1(&[1.0, 0.0]), "t");
    let b_same = Instance::new("b", at_distance(0.3), "t");
    let b_diff = Instance::new("b", at_distance(0.3), "o");
    let same = contrastive_loss(&model, &a, &b_same, 1.0).unwrap();
    assert!((same.value - 0.3).abs() < 1e-9);
    let diff = contrastive_loss(&model, &a, &b_diff, 1.0).unwrap();
    assert!((diff.value - 0.7).abs() < 1e-9);

    let pos = Instance::new("p", at_distance(0.2), "t");
    let neg = Instance::new("n", at_distance(0.9), "o");
    let trip = triplet_loss(&model, &a, &pos, &neg, 1.0).unwrap();
    assert!((trip.value - 0.3).abs() < 1e-9);

    // f-diff (0.1, 0) against s-diff (0, 0.1): residual norm² = 0.02.
    let a2 = (-0.2 + 7.96f64.sqrt()) / 4.0;
    let a1 = a2 + 0.1;
    let u = Instance::new("u", arr1(&[a1, a2]), "t");
    let v = Instance::new("v", arr1(&[a2, a1]), "t");
    let d = difference_loss(&model, &u, &v, &labels).unwrap();
    assert!((d.value - 0.02).abs() < 1e-9);

    let batch = Batch {
        ranking_instances: vec![i_true],
        pairs: vec![(a, b_same)],
        diff_pairs: vec![(u, v)],
        ..Batch::default()
    };
    let cfg = LossConfig {
        disc_mode: DiscMode::Contrastive,
        difference_enabled: true,
        ..LossConfig::default()
    };
    let combined = combined_objective(&model, &batch, &labels, &cfg).unwrap();
    assert!(
        (combined.value - 0.3705).abs() < 1e-9,
        "combined = {}",
        combined.value
    );

    let heavy = EmbeddingModel::from_weights(ndarray::Array2::ones((2, 2))).unwrap();
    let empty = combined_objective(&heavy, &Batch::default(), &labels, &cfg).unwrap();
    assert!((empty.value - 0.001).abs() < 1e-9);
    for g in empty.grad.iter() {
        assert!((g - 0.0005).abs() < 1e-9);
    }
    println!("criterion 2 (loss fixtures): PASS: all hand values within 1e-9");
}

/// Criterion 3: the metric suite matches brute-force oracles on 200 seeded
/// random micro-datasets within 1e-9, and the O-P fixture is exact.
#[test]
fn criterion_3_metric_oracle_equivalence() {
    for seed in 0..200u64 {
        let micro = common::random_micro_dataset(seed);
        let n_classes = micro.classes.len();

        for k in 1..=n_classes {
            let ours = hit_at_k(&micro.rankings, &micro.single_gt, k).unwrap();
            let oracle = common::oracle_hit_at_k(&micro.rankings, &micro.single_gt, k);
            assert!((ours - oracle).abs() < 1e-9, "hit@{k} seed {seed}");
        }

        for k in 1..=n_classes.min(3) {
            let ours = multilabel_metrics(&micro.rankings, &micro.multi_gt, k).unwrap();
            let oracle =
                common::oracle_multilabel(&micro.rankings, &micro.multi_gt, &micro.classes, k);
            for (got, want, name) in [
                (ours.per_class_precision, oracle.cp, "C-P"),
                (ours.per_class_recall, oracle.cr, "C-R"),
                (ours.per_class_f1, oracle.cf1, "C-F1"),
                (ours.overall_precision, oracle.op, "O-P"),
                (ours.overall_recall, oracle.or_, "O-R"),
                (ours.overall_f1, oracle.of1, "O-F1"),
            ] {
                assert!(
                    (got - want).abs() < 1e-9,
                    "{name} at k={k} seed {seed}: {got} vs {want}"
                );
            }
        }

        let ours = mean_average_precision(&micro.rankings, &micro.multi_gt).unwrap();
        let oracle = common::oracle_map(&micro.rankings, &micro.multi_gt, &micro.classes)
            .expect("some class has positives");
        assert!((ours - oracle).abs() < 1e-9, "mAP seed {seed}");

        let ours = confusion_matrix(&micro.rankings, &micro.single_gt, &micro.classes).unwrap();
        let oracle = common::oracle_confusion(&micro.rankings, &micro.single_gt, &micro.classes);
        assert_eq!(ours.counts, oracle, "confusion seed {seed}");
        assert_eq!(ours.total(), micro.rankings.len());
    }

    // O-P = 0.5 / O-R = 1.0 fixture, exact.
    let mk = |id: &str, order: [&str; 5]| semembed::PredictionRanking {
        instance_id: id.to_string(),
        ranked: order
            .iter()
            .enumerate()
            .map(|(i, l)| (l.to_string(), 1.0 - 0.1 * i as f64))
            .collect(),
    };
    let rankings = vec![
        mk("i1", ["a", "b", "x", "c", "y"]),
        mk("i2", ["c", "x", "y", "a", "b"]),
    ];
    let mut gt = HashMap::new();
    gt.insert(
        "i1".to_string(),
        ["a", "b"].iter().map(|s| s.to_string()).collect(),
    );
    gt.insert(
        "i2".to_string(),
        ["c"].iter().map(|s| s.to_string()).collect(),
    );
    let m = multilabel_metrics(&rankings, &gt, 3).unwrap();
    assert_eq!(m.overall_precision, 0.5);
    assert_eq!(m.overall_recall, 1.0);
    println!("criterion 3 (metric oracle equivalence): PASS: 200 micro-datasets within 1e-9");
}

/// Criterion 4: rank-only training on the recoverable synthetic set reaches
/// held-out hit@1 ≥ 0.95 with defaults in under 60 s single-threaded.
#[test]
fn criterion_4_synthetic_recovery() {
    let spec = SyntheticSpec {
        classes: 8,
        per_class: 50,
        feature_dim: 16,
        embed_dim: 8,
        noise_sigma: 0.05,
        class_overlap: 0.0,
        seed: 42,
    };
    let (train_set, test_set, labels) = generate_synthetic(&spec).unwrap();
    let cfg = quiet_train_cfg(0);
    assert!(cfg.epochs <= 200, "defaults must stay within 200 epochs");

    let started = Instant::now();
    let state = train(&train_set, &labels, &LossConfig::default(), &cfg).unwrap();
    let elapsed = started.elapsed();
    let hit1 = held_out_hit_at_1(&state.model, &test_set, &labels);

    assert!(hit1 >= 0.95, "held-out hit@1 = {hit1}");
    assert!(elapsed.as_secs_f64() < 60.0, "training took {elapsed:?}");
    println!(
        "criterion 4 (synthetic recovery): PASS: hit@1 {hit1} in {:.2}s",
        elapsed.as_secs_f64()
    );
}

/// Criterion 5: on the harder synthetic sets (overlap 0.6, noise 0.15) the
/// full model's median held-out hit@1 over 5 seeds is at least the
/// rank-only baseline's. A trend check, not an absolute-accuracy claim.
#[test]
fn criterion_5_structured_constraint_trend() {
    let train_cfg = |seed: u64| TrainConfig {
        epochs: 100,
        sampler: SamplerConfig {
            candidates_per_ref: 5,
            ..SamplerConfig::default()
        },
        ..quiet_train_cfg(seed)
    };
    let rank_cfg = LossConfig::default();
    let full_cfg = LossConfig {
        disc_mode: DiscMode::Triplet,
        difference_enabled: true,
        lambda1: 1.0,
        lambda2: 1.0,
        lambda3: 1.0,
        ..LossConfig::default()
    };

    let mut rank_scores = Vec::new();
    let mut full_scores = Vec::new();
    for seed in 1..=5u64 {
        let spec = SyntheticSpec {
            classes: 8,
            per_class: 12,
            feature_dim: 16,
            embed_dim: 8,
            noise_sigma: 0.15,
            class_overlap: 0.6,
            seed,
        };
        let (train_set, test_set, labels) = generate_synthetic(&spec).unwrap();
        let rank_state = train(&train_set, &labels, &rank_cfg, &train_cfg(0)).unwrap();
        rank_scores.push(held_out_hit_at_1(&rank_state.model, &test_set, &labels));
        let full_state = train(&train_set, &labels, &full_cfg, &train_cfg(0)).unwrap();
        full_scores.push(held_out_hit_at_1(&full_state.model, &test_set, &labels));
    }

    let rank_median = median(&mut rank_scores.clone());
    let full_median = median(&mut full_scores.clone());
    assert!(
        full_median >= rank_median,
        "full median {full_median} < rank-only median {rank_median} \
         (full {full_scores:?}, rank {rank_scores:?})"
    );
    println!(
        "criterion 5 (structured-constraint trend): PASS: full median {full_median} ≥ \
         rank-only median {rank_median}"
    );
}

fn subset_by_labels(dataset: &Dataset, keep: &[String]) -> Dataset {
    Dataset::new(
        dataset
            .instances()
            .iter()
            .filter(|i| keep.contains(&i.label))
            .cloned()
            .collect(),
    )
    .unwrap()
}

fn subset_table(table: &LabelTable, keep: &[String]) -> LabelTable {
    LabelTable::new(
        table
            .iter()
            .filter(|(id, _)| keep.contains(&id.to_string()))
            .map(|(id, v)| (id.to_string(), v.to_owned()))
            .collect(),
    )
    .unwrap()
}

/// Criterion 6: zero-shot transfer. Training the full model on 6 of 10
/// classes, nearest-neighbor inference over the 4 unseen classes reaches a
/// median hit@1 of at least 3× chance across 5 seeds, and the generalized
/// candidate set (all 10) stays strictly above its 0.10 chance level.
#[test]
fn criterion_6_zero_shot_sanity() {
    let seen_ids: Vec<String> = (0..6).map(|c| format!("c{c}")).collect();
    let unseen_ids: Vec<String> = (6..10).map(|c| format!("c{c}")).collect();
    let full_cfg = LossConfig {
        disc_mode: DiscMode::Triplet,
        difference_enabled: true,
        ..LossConfig::default()
    };

    let mut standard = Vec::new();
    let mut generalized = Vec::new();
    for seed in 1..=5u64 {
        let spec = SyntheticSpec {
            classes: 10,
            per_class: 30,
            feature_dim: 12,
            embed_dim: 4,
            noise_sigma: 0.05,
            class_overlap: 0.0,
            seed,
        };
        let (train_all, test_all, labels) = generate_synthetic(&spec).unwrap();
        let train_seen = subset_by_labels(&train_all, &seen_ids);
        let test_unseen = subset_by_labels(&test_all, &unseen_ids);
        let seen_table = subset_table(&labels, &seen_ids);
        let unseen_table = subset_table(&labels, &unseen_ids);

        let state = train(&train_seen, &seen_table, &full_cfg, &quiet_train_cfg(0)).unwrap();

        let std_report = zero_shot_eval(
            &state.model,
            &test_unseen,
            &unseen_table,
            Some(&seen_table),
            false,
            &[1],
        )
        .unwrap();
        standard.push(std_report.hit_at_k[&1]);
        let gen_report = zero_shot_eval(
            &state.model,
            &test_unseen,
            &unseen_table,
            Some(&seen_table),
            true,
            &[1],
        )
        .unwrap();
        assert_eq!(
            gen_report.confusion.as_ref().unwrap().labels.len(),
            10,
            "generalized candidate set must cover seen ∪ unseen"
        );
        generalized.push(gen_report.hit_at_k[&1]);
    }

    let std_median = median(&mut standard.clone());
    let gen_median = median(&mut generalized.clone());
    assert!(
        std_median >= 0.75,
        "standard zero-shot median {std_median} < 0.75 ({standard:?})"
    );
    assert!(
        gen_median > 0.10,
        "generalized zero-shot median {gen_median} not above chance ({generalized:?})"
    );
    println!(
        "criterion 6 (zero-shot sanity): PASS: standard median {std_median}, \
         generalized median {gen_median}"
    );
}

/// Criterion 7: mined region assignments equal exhaustive per-label argmax
/// re-scans on 100 random images, and the 3-region/2-label fixture holds.
#[test]
fn criterion_7_region_mining_correctness() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let scorer = MultiLabelScorer::from_parts(
        (0..3).map(|c| format!("m{c}")).collect(),
        ndarray::Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0)),
        ndarray::Array1::from_shape_fn(3, |_| rng.gen_range(-0.2..0.2)),
    )
    .unwrap();

    for i in 0..100 {
        let n_regions = rng.gen_range(1..7);
        let regions: Vec<(String, ndarray::Array1<f64>)> = (0..n_regions)
            .map(|r| {
                (
                    format!("r{r}"),
                    ndarray::Array1::from_shape_fn(4, |_| rng.gen_range(-1.0..1.0)),
                )
            })
            .collect();
        let gt: std::collections::BTreeSet<String> =
            (0..rng.gen_range(1..4)).map(|c| format!("m{c}")).collect();
        let image = MultiLabelImage::new(
            format!("img{i}"),
            ndarray::Array1::from_shape_fn(4, |_| rng.gen_range(-1.0..1.0)),
            gt.clone(),
            regions.clone(),
        )
        .unwrap();
        let mined = mine_regions(&image, &scorer).unwrap();
        assert_eq!(mined.len(), gt.len());
        for inst in &mined {
            // Exhaustive re-scan: the first region attaining the max score.
            let scores: Vec<f64> = regions
                .iter()
                .map(|(_, f)| scorer.score(f.view(), &inst.label).unwrap())
                .collect();
            let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let expect_idx = scores.iter().position(|&s| s == best).unwrap();
            assert_eq!(inst.features, regions[expect_idx].1, "label {}", inst.label);
        }
    }

    // 3-region / 2-label fixture with score matrix (regions × labels)
    // [[0.1, 0.9], [0.8, 0.2], [0.3, 0.3]] via one-hot region features:
    // label 1 takes region 2, label 2 takes region 1.
    let fixture_scorer = MultiLabelScorer::from_parts(
        vec!["l1".into(), "l2".into()],
        ndarray::arr2(&[[0.1, 0.8, 0.3], [0.9, 0.2, 0.3]]),
        ndarray::Array1::zeros(2),
    )
    .unwrap();
    let image = MultiLabelImage::new(
        "fixture",
        arr1(&[1.0, 0.0, 0.0]),
        ["l1".to_string(), "l2".to_string()].into_iter().collect(),
        vec![
            ("r1".into(), arr1(&[1.0, 0.0, 0.0])),
            ("r2".into(), arr1(&[0.0, 1.0, 0.0])),
            ("r3".into(), arr1(&[0.0, 0.0, 1.0])),
        ],
    )
    .unwrap();
    let mined = mine_regions(&image, &fixture_scorer).unwrap();
    assert_eq!(mined.len(), 2);
    assert_eq!(mined[0].label, "l1");
    assert_eq!(mined[0].features, arr1(&[0.0, 1.0, 0.0]));
    assert_eq!(mined[1].label, "l2");
    assert_eq!(mined[1].features, arr1(&[1.0, 0.0, 0.0]));
    println!("criterion 7 (region mining): PASS: argmax re-scan exact on 100 images");
}

/// Criterion 8: bit-identical synthetic data, batches, and single-threaded
/// checkpoints for identical seeds; lossless checkpoint round-trip.
#[test]
fn criterion_8_determinism_and_persistence() {
    let spec = SyntheticSpec {
        classes: 5,
        per_class: 8,
        feature_dim: 10,
        embed_dim: 5,
        noise_sigma: 0.1,
        class_overlap: 0.3,
        seed: 9,
    };
    let (tr1, te1, l1) = generate_synthetic(&spec).unwrap();
    let (tr2, te2, l2) = generate_synthetic(&spec).unwrap();
    assert_eq!(tr1.instances(), tr2.instances());
    assert_eq!(te1.instances(), te2.instances());
    for (a, b) in l1.iter().zip(l2.iter()) {
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    let b1 = sample_pair_batch(&tr1, 12, 4).unwrap();
    let b2 = sample_pair_batch(&tr1, 12, 4).unwrap();
    let pair_ids = |b: &Batch| {
        b.pairs
            .iter()
            .map(|(x, y)| (x.id.clone(), y.id.clone()))
            .collect::<Vec<_>>()
    };
    assert_eq!(pair_ids(&b1), pair_ids(&b2));
    let t1 = sample_triplet_batch(&tr1, 4, 0.2, 10, 4).unwrap();
    let t2 = sample_triplet_batch(&tr1, 4, 0.2, 10, 4).unwrap();
    assert_eq!(t1.triplets.len(), t2.triplets.len());
    for (x, y) in t1.triplets.iter().zip(t2.triplets.iter()) {
        assert_eq!((&x.0.id, &x.1.id, &x.2.id), (&y.0.id, &y.1.id, &y.2.id));
    }

    let loss_cfg = LossConfig {
        disc_mode: DiscMode::Contrastive,
        difference_enabled: true,
        ..LossConfig::default()
    };
    let cfg = TrainConfig {
        epochs: 20,
        sampler: SamplerConfig {
            batch_size: 8,
            ..SamplerConfig::default()
        },
        ..quiet_train_cfg(3)
    };
    let s1 = train(&tr1, &l1, &loss_cfg, &cfg).unwrap();
    let s2 = train(&tr1, &l1, &loss_cfg, &cfg).unwrap();
    assert_eq!(s1.model.weights(), s2.model.weights());
    assert_eq!(s1.velocity, s2.velocity);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.ckpt");
    save_checkpoint(&s1, &path).unwrap();
    let loaded: TrainState = load_checkpoint(&path).unwrap();
    assert_eq!(s1.model.weights(), loaded.model.weights());
    assert_eq!(s1.velocity, loaded.velocity);
    assert_eq!(s1.epoch, loaded.epoch);
    println!("criterion 8 (determinism & persistence): PASS: bit-identical replays and round-trip");
}

/// Criterion 9: contrastive and difference losses are exactly symmetric
/// under argument swap on 1,000 random pairs.
#[test]
fn criterion_9_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let labels = LabelTable::new(vec![
        ("c0".into(), arr1(&[1.0, 0.0, 0.0])),
        ("c1".into(), arr1(&[0.0, 1.0, 0.0])),
        ("c2".into(), arr1(&[0.0, 0.0, 1.0])),
    ])
    .unwrap();
    let mut checked = 0;
    while checked < 1000 {
        let w = ndarray::Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0));
        let model = EmbeddingModel::from_weights(w).unwrap();
        let feat =
            |rng: &mut ChaCha8Rng| ndarray::Array1::from_shape_fn(4, |_| rng.gen_range(-1.0..1.0));
        let la = format!("c{}", rng.gen_range(0..3));
        let lb = format!("c{}", rng.gen_range(0..3));
        let a = Instance::new("a", feat(&mut rng), la);
        let b = Instance::new("b", feat(&mut rng), lb);

        let (Ok(cab), Ok(cba)) = (
            contrastive_loss(&model, &a, &b, 1.0),
            contrastive_loss(&model, &b, &a, 1.0),
        ) else {
            continue;
        };
        assert_eq!(cab.value, cba.value, "contrastive value asymmetric");
        assert_eq!(cab.grad, cba.grad, "contrastive grad asymmetric");

        let (Ok(dab), Ok(dba)) = (
            difference_loss(&model, &a, &b, &labels),
            difference_loss(&model, &b, &a, &labels),
        ) else {
            continue;
        };
        assert_eq!(dab.value, dba.value, "difference value asymmetric");
        assert_eq!(dab.grad, dba.grad, "difference grad asymmetric");
        checked += 1;
    }
    println!("criterion 9 (symmetry): PASS: exact equality on 1,000 pairs");
}
