use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

use phonaudit::cohorts::{CohortPlan, Setting};
use phonaudit::embedding_store::{filter_outliers, normalize_utterance, pool_phoneme};
use phonaudit::geometry::{knn_distance, mean_distance, pca_fit};
use phonaudit::probes::{loss_and_gradient, train_probe, LabeledSet, ProbeHyper, ProbeModel};
use phonaudit::seed::SeedMixer;
use phonaudit::stats::{fairness_gap, pearson_r, relative_to_sg_average, t_one_sample, Side};
use phonaudit::{DemographicVariable, FrameMatrix, PhonemeSample, PhonemeSpan};

fn point_set(max_n: usize, max_dim: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, usize)> {
    (1usize..=5, 2usize..=max_dim).prop_flat_map(move |(k, dim)| {
        let n = (k + 1)..=max_n;
        (prop::collection::vec(prop::collection::vec(-50.0f64..50.0, dim), n), Just(k))
    })
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}

/// Random orthogonal matrix from the QR factorization of a Gaussian matrix.
fn rotation(dim: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = SeedMixer::new(seed).str("rotation").rng();
    let m = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    m.qr().q()
}

fn apply(m: &DMatrix<f64>, p: &[f64]) -> Vec<f64> {
    (m * DVector::from_column_slice(p)).iter().copied().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn knn_ignores_point_order((points, k) in point_set(40, 12), seed in any::<u64>()) {
        let mut shuffled = points.clone();
        let mut rng = SeedMixer::new(seed).rng();
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        let a = knn_distance(&points, k).unwrap();
        let b = knn_distance(&shuffled, k).unwrap();
        prop_assert!(rel_close(a, b, 1e-12), "{a} vs {b}");
    }

    #[test]
    fn knn_is_rotation_invariant((points, k) in point_set(40, 12), seed in any::<u64>()) {
        let q = rotation(points[0].len(), seed);
        let rotated: Vec<Vec<f64>> = points.iter().map(|p| apply(&q, p)).collect();
        let a = knn_distance(&points, k).unwrap();
        let b = knn_distance(&rotated, k).unwrap();
        prop_assert!(rel_close(a, b, 1e-9), "{a} vs {b}");
    }

    #[test]
    fn knn_scales_quadratically((points, k) in point_set(40, 12), c in 0.01f64..100.0) {
        let scaled: Vec<Vec<f64>> = points.iter().map(|p| p.iter().map(|v| c * v).collect()).collect();
        let a = knn_distance(&points, k).unwrap();
        let b = knn_distance(&scaled, k).unwrap();
        prop_assert!(rel_close(c * c * a, b, 1e-9), "{} vs {b}", c * c * a);
    }

    #[test]
    fn knn_survives_isometric_embedding((points, k) in point_set(30, 8), extra in 1usize..6) {
        let lifted: Vec<Vec<f64>> =
            points.iter().map(|p| p.iter().copied().chain(std::iter::repeat_n(0.0, extra)).collect()).collect();
        let a = knn_distance(&points, k).unwrap();
        let b = knn_distance(&lifted, k).unwrap();
        prop_assert!(rel_close(a, b, 1e-12));
    }

    #[test]
    fn pca_keeps_threshold_variance(
        rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 6), 3..40),
        threshold in 0.5f64..=1.0,
    ) {
        let Ok(pca) = pca_fit(&rows, threshold) else { return Ok(()) };
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let total: f64 = rows.iter().flat_map(|r| r.iter().zip(&mean).map(|(x, m)| (x - m).powi(2))).sum();
        let kept: f64 = rows.iter().map(|r| pca.project(r).iter().map(|v| v * v).sum::<f64>()).sum();
        prop_assert!(kept >= threshold * total - 1e-8 * total, "{kept} < {threshold} * {total}");
        let gram = &pca.components * pca.components.transpose();
        let eye = DMatrix::identity(pca.n_components(), pca.n_components());
        prop_assert!((gram - eye).abs().max() < 1e-6);
    }

    #[test]
    fn t_test_is_antisymmetric(values in prop::collection::vec(-20.0f64..20.0, 3..20), mu0 in -5.0f64..5.0) {
        let mirrored: Vec<f64> = values.iter().map(|v| 2.0 * mu0 - v).collect();
        let (Ok(up), Ok(up_m)) = (t_one_sample(&values, mu0, Side::Upper), t_one_sample(&mirrored, mu0, Side::Upper))
        else { return Ok(()) };
        let low_m = t_one_sample(&mirrored, mu0, Side::Lower).unwrap();
        prop_assert!((up.statistic + up_m.statistic).abs() <= 1e-9 * up.statistic.abs().max(1.0));
        prop_assert!((up.p_value - low_m.p_value).abs() < 1e-9);
        let two = t_one_sample(&values, mu0, Side::TwoSided).unwrap();
        let low = t_one_sample(&values, mu0, Side::Lower).unwrap();
        prop_assert!((0.0..=1.0).contains(&two.p_value));
        prop_assert!((two.p_value - (2.0 * up.p_value.min(low.p_value)).min(1.0)).abs() < 1e-12);
    }

    #[test]
    fn pearson_is_affine_invariant(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 4..30),
        a in 0.1f64..10.0,
        b in -10.0f64..10.0,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let Ok(base) = pearson_r(&x, &y) else { return Ok(()) };
        let moved: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let flipped: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
        let r_moved = pearson_r(&moved, &y).unwrap().statistic;
        let r_flipped = pearson_r(&flipped, &y).unwrap().statistic;
        prop_assert!((base.statistic - r_moved).abs() < 1e-9);
        prop_assert!((base.statistic + r_flipped).abs() < 1e-9);
    }

    #[test]
    fn gap_is_scale_invariant(scores in prop::collection::vec(0.05f64..1.0, 2..6), c in 0.01f64..50.0) {
        let per_sg: BTreeMap<String, f64> = scores.iter().enumerate().map(|(i, s)| (format!("G{i}"), *s)).collect();
        let scaled: BTreeMap<String, f64> = per_sg.iter().map(|(k, v)| (k.clone(), c * v)).collect();
        let g = fairness_gap("dialect", &per_sg).unwrap();
        let gs = fairness_gap("dialect", &scaled).unwrap();
        prop_assert!(g.gap >= 0.0 && g.best >= g.worst);
        prop_assert!((g.gap - gs.gap).abs() < 1e-9);
    }

    #[test]
    fn relative_scores_sum_to_zero(scores in prop::collection::vec(0.0f64..1.0, 2..8)) {
        let per_sg: BTreeMap<String, f64> = scores.iter().enumerate().map(|(i, s)| (format!("G{i}"), *s)).collect();
        let rel = relative_to_sg_average(&per_sg).unwrap();
        prop_assert!(rel.values().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn pooling_is_translation_equivariant(
        t in 1usize..30,
        start_frac in 0.0f64..1.0,
        shift in prop::collection::vec(-100.0f64..100.0, 4),
        seed in any::<u64>(),
    ) {
        let mut rng = SeedMixer::new(seed).rng();
        let frames = DMatrix::from_fn(t, 4, |_, _| rng.random_range(-5.0..5.0));
        let shifted = DMatrix::from_fn(t, 4, |r, c| frames[(r, c)] + shift[c]);
        let start = ((t - 1) as f64 * start_frac) as usize;
        let span = PhonemeSpan { utterance_id: "u".into(), phoneme: "AA".into(), start_frame: start, end_frame: t };
        let a = pool_phoneme(&FrameMatrix::new("u", 0, frames).unwrap(), &span).unwrap();
        let b = pool_phoneme(&FrameMatrix::new("u", 0, shifted).unwrap(), &span).unwrap();
        for ((x, y), c) in a.iter().zip(&b).zip(&shift) {
            prop_assert!((x + c - y).abs() < 1e-9);
        }
    }

    #[test]
    fn normalization_standardizes(t in 2usize..40, seed in any::<u64>()) {
        let mut rng = SeedMixer::new(seed).rng();
        let scales: Vec<f64> = (0..5).map(|_| rng.random_range(0.01..100.0)).collect();
        let frames = DMatrix::from_fn(t, 5, |_, c| scales[c] * rng.random_range(-1.0..1.0) + 7.0);
        let out = normalize_utterance(&FrameMatrix::new("u", 0, frames.clone()).unwrap()).unwrap();
        for (c, col) in out.frames.column_iter().enumerate() {
            let spread = frames.column(c).max() - frames.column(c).min();
            if spread < 1e-9 * scales[c] {
                continue;
            }
            let mean = col.mean();
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64).sqrt();
            prop_assert!(mean.abs() < 1e-9 && (sd - 1.0).abs() < 1e-6, "mean {mean} sd {sd}");
        }
    }

    #[test]
    fn shifted_logits_keep_prediction(
        weights in prop::collection::vec(-3.0f64..3.0, 12),
        bias in prop::collection::vec(-3.0f64..3.0, 3),
        v in prop::collection::vec(-5.0f64..5.0, 4),
        shift in -100.0f64..100.0,
    ) {
        let model = |b: Vec<f64>| ProbeModel {
            classes: vec!["a".into(), "b".into(), "c".into()],
            weights: DMatrix::from_row_slice(3, 4, &weights),
            bias: DVector::from_vec(b),
            final_loss: 0.0,
            epochs: 0,
            hyper: ProbeHyper::default(),
        };
        let shifted_bias: Vec<f64> = bias.iter().map(|b| b + shift).collect();
        prop_assert_eq!(model(bias.clone()).predict(&v), model(shifted_bias.clone()).predict(&v));

        let x = DMatrix::from_row_slice(1, 4, &v);
        let w = DMatrix::from_row_slice(3, 4, &weights);
        let l0 = loss_and_gradient(&w, &DVector::from_vec(bias), &x, &[1], 0.0).0;
        let l1 = loss_and_gradient(&w, &DVector::from_vec(shifted_bias), &x, &[1], 0.0).0;
        prop_assert!((l0 - l1).abs() < 1e-9 * l0.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn training_loss_never_increases(seed in any::<u64>(), lr in 0.5f64..20.0) {
        let mut rng = SeedMixer::new(seed).rng();
        let classes: Vec<String> = (0..3).map(|i| format!("P{i}")).collect();
        let mut set = LabeledSet::default();
        for i in 0..60 {
            let label = i % 3;
            let v: Vec<f64> = (0..5).map(|d| if d == label { 1.5 } else { 0.0 } + rng.random_range(-1.0..1.0)).collect();
            set.push(v, label);
        }
        let mut previous = f64::INFINITY;
        for epochs in 1..=25 {
            let hyper = ProbeHyper { learning_rate: lr, max_epochs: epochs, tolerance: 0.0, ..Default::default() };
            let model = train_probe(&set, &classes, &hyper).unwrap();
            prop_assert!(model.final_loss <= previous, "epoch {epochs}: {} > {previous}", model.final_loss);
            previous = model.final_loss;
        }
    }

    #[test]
    fn cohorts_are_disjoint_and_equal_sized(
        sizes in prop::collection::vec(5usize..30, 2..5),
        seed in any::<u64>(),
        replication in 0usize..5,
    ) {
        let mut sg_of = BTreeMap::new();
        for (g, &n) in sizes.iter().enumerate() {
            for i in 0..n {
                sg_of.insert(format!("G{g}_{i:03}"), format!("G{g}"));
            }
        }
        let plan = CohortPlan::new(&sg_of, DemographicVariable::Age, seed, 0.2).unwrap();
        let n = plan.default_speakers_per_sg().min(4);
        let mut totals = Vec::new();
        let mut settings: Vec<Setting> = plan.groups().map(|g| Setting::SingleSg(g.to_string())).collect();
        settings.push(Setting::Balanced);
        for setting in settings {
            let spec = plan.spec(setting, Some(n), replication);
            let cohort = plan.cohort(&spec).unwrap();
            prop_assert_eq!(&cohort, &plan.cohort(&spec).unwrap());
            for test in cohort.test_speakers_by_sg.values() {
                prop_assert!(!test.is_empty());
                prop_assert!(test.iter().all(|s| !cohort.train_speakers.contains(s)));
            }
            prop_assert_eq!(&cohort.test_speakers_by_sg, plan.test_sets());
            totals.push(cohort.train_speakers.len());
        }
        prop_assert!(totals.windows(2).all(|w| w[0] == w[1]), "{totals:?}");
    }
}

fn gaussian_group(n: usize, dim: usize, seed: u64) -> Vec<PhonemeSample> {
    let mut rng = SeedMixer::new(seed).str("outliers").rng();
    (0..n)
        .map(|i| PhonemeSample {
            speaker_id: "S".into(),
            phoneme: "AA".into(),
            layer: 0,
            sample_index: i as u32,
            groups: BTreeMap::new(),
            vector: (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect(),
        })
        .collect()
}

#[test]
fn outlier_filter_keeps_most_gaussian_samples() {
    for seed in 0..200 {
        for (n, dim) in [(30, 16), (50, 4), (100, 64)] {
            let group = gaussian_group(n, dim, seed);
            let kept = filter_outliers(&group, 3.0).unwrap();
            let limit = n.div_ceil(10);
            assert!(n - kept.len() <= limit, "seed {seed}: dropped {} of {n}", n - kept.len());
        }
    }
}

#[test]
fn separated_clusters_have_small_knn_relative_to_mean_distance() {
    let mut rng = SeedMixer::new(9).rng();
    let points: Vec<Vec<f64>> = (0..40)
        .map(|i| {
            let centre = if i % 2 == 0 { -50.0 } else { 50.0 };
            (0..3).map(|_| centre + rng.random_range(-1.0..1.0)).collect()
        })
        .collect();
    assert!(knn_distance(&points, 3).unwrap() < mean_distance(&points).unwrap());
}
