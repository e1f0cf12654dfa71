use std::collections::BTreeMap;

use ambigzsl::eval::{harmonic_mean, median, mnrg, per_class_top1, top1_on};
use ambigzsl::nets::predict;
use ambigzsl::rng::{normal_matrix, stream};
use ambigzsl::trainer::fit_final_classifier;
use ambigzsl::{ClassId, LabeledFeatures, TrainConfig};
use nalgebra::DMatrix;
use ndarray::{Array2, Axis};
use proptest::prelude::*;

fn tally_oracle(preds: &[u32], labels: &[u32], classes: &[u32]) -> f64 {
    let mut sum = 0.0;
    for &c in classes {
        let mut total = 0;
        let mut hit = 0;
        for i in 0..labels.len() {
            if labels[i] == c {
                total += 1;
                if preds[i] == c {
                    hit += 1;
                }
            }
        }
        sum += hit as f64 / total as f64;
    }
    100.0 * sum / classes.len() as f64
}

fn fixture() -> impl Strategy<Value = (Vec<u32>, Vec<u32>, Vec<u32>)> {
    (1u32..8).prop_flat_map(|k| {
        let classes: Vec<u32> = (1..=k).collect();
        // every class appears at least once, then random extra samples
        (Just(classes.clone()), prop::collection::vec(1..=k, 0..60)).prop_flat_map(move |(cls, extra)| {
            let mut labels = cls.clone();
            labels.extend(extra);
            let n = labels.len();
            (Just(labels), prop::collection::vec(1..=k + 2, n), Just(cls))
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn per_class_top1_matches_brute_force((labels, preds, classes) in fixture()) {
        let ids = |v: &[u32]| v.iter().map(|&c| ClassId(c)).collect::<Vec<_>>();
        let got = per_class_top1(&ids(&preds), &ids(&labels), &ids(&classes)).unwrap();
        prop_assert_eq!(got, tally_oracle(&preds, &labels, &classes));
    }

    #[test]
    fn harmonic_mean_bounds(u in 0.0..=100.0f64, s in 0.0..=100.0f64) {
        let h = harmonic_mean(u, s);
        prop_assert!(h >= u.min(s) - 1e-9 || u + s == 0.0);
        prop_assert!(h <= 0.5 * (u + s) + 1e-9);
        prop_assert!(h <= u.max(s) + 1e-9);
        prop_assert_eq!(h, harmonic_mean(s, u));
    }

    #[test]
    fn mnrg_translates_with_the_method_scores(
        scores in prop::collection::vec((0.0..100.0f64, 0.0..100.0f64), 1..8),
        shift in -20.0..20.0f64,
    ) {
        let method: BTreeMap<String, f64> = scores.iter().enumerate().map(|(i, s)| (format!("d{i}"), s.0)).collect();
        let reference: BTreeMap<String, f64> = scores.iter().enumerate().map(|(i, s)| (format!("d{i}"), s.1)).collect();
        let shifted: BTreeMap<String, f64> = method.iter().map(|(k, v)| (k.clone(), v + shift)).collect();
        let (_, base) = mnrg(&method, &reference).unwrap();
        let (_, moved) = mnrg(&shifted, &reference).unwrap();
        prop_assert!((moved - base - shift).abs() < 1e-9);
        let (_, zero) = mnrg(&reference, &reference).unwrap();
        prop_assert_eq!(zero, 0.0);
    }

    #[test]
    fn mnrg_ignores_one_extreme_dataset(
        gains in prop::collection::vec(-10.0..10.0f64, 3..8),
        outlier in 50.0..1e6f64,
    ) {
        let reference: BTreeMap<String, f64> = (0..gains.len()).map(|i| (format!("d{i}"), 50.0)).collect();
        let method: BTreeMap<String, f64> = gains.iter().enumerate().map(|(i, g)| (format!("d{i}"), 50.0 + g)).collect();
        let (_, base) = mnrg(&method, &reference).unwrap();
        // push the best dataset arbitrarily far up
        let (best, _) = method.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        let mut wild = method.clone();
        wild.insert(best.clone(), 50.0 + outlier);
        let (_, m) = mnrg(&wild, &reference).unwrap();
        prop_assert!((m - base).abs() < 1e-9);
        prop_assert!((median(&gains).unwrap() - base).abs() < 1e-9);
    }
}

fn blobs(n_per_class: usize, seed: u64) -> LabeledFeatures {
    let d = 5;
    let centres = [[0.2, 0.8, 0.5, 0.3, 0.6], [0.8, 0.2, 0.4, 0.7, 0.3], [0.5, 0.5, 0.9, 0.1, 0.8]];
    let noise = normal_matrix(&mut stream(seed, 0), 3 * n_per_class, d) * 0.08;
    let mut x = Array2::zeros((3 * n_per_class, d));
    let mut labels = Vec::new();
    for (k, c) in centres.iter().enumerate() {
        for i in 0..n_per_class {
            let r = k * n_per_class + i;
            for j in 0..d {
                x[[r, j]] = c[j] + noise[[r, j]];
            }
            labels.push(ClassId(k as u32 + 1));
        }
    }
    LabeledFeatures { features: x, labels }
}

/// One-hot least squares with a bias column, solved by SVD.
fn least_squares_accuracy(train: &LabeledFeatures, test: &LabeledFeatures, classes: &[ClassId]) -> f64 {
    let design = |f: &Array2<f64>| {
        DMatrix::from_fn(f.nrows(), f.ncols() + 1, |r, c| if c == f.ncols() { 1.0 } else { f[[r, c]] })
    };
    let a = design(&train.features);
    let y = DMatrix::from_fn(train.len(), classes.len(), |r, c| if train.labels[r] == classes[c] { 1.0 } else { 0.0 });
    let w = a.clone().svd(true, true).solve(&y, 1e-12).unwrap();
    let scores = design(&test.features) * w;
    let preds: Vec<ClassId> = (0..test.len())
        .map(|r| classes[scores.row(r).transpose().argmax().0])
        .collect();
    per_class_top1(&preds, &test.labels, classes).unwrap()
}

#[test]
fn final_classifier_on_separable_blobs() {
    let classes: Vec<ClassId> = (1..=3).map(ClassId).collect();
    let train = blobs(60, 1);
    let test = blobs(40, 2);
    // 180 samples give only 60 steps; use the desk-scale learning rate
    let clf = fit_final_classifier(&train, &classes, TrainConfig::default().clf_epochs, 1e-2, 7).unwrap();
    let acc = top1_on(&clf, test.features.view(), &test.labels).unwrap();
    let oracle = least_squares_accuracy(&train, &test, &classes);
    eprintln!("softmax {acc:.2}, least squares {oracle:.2}");
    assert!(acc >= 95.0, "accuracy {acc}");
    assert!(acc >= oracle - 3.0, "accuracy {acc} vs oracle {oracle}");
    // predictions come out in class-id space
    let preds = predict(&clf, test.features.view()).unwrap();
    assert!(preds.iter().all(|p| classes.contains(p)));
    assert_eq!(test.features.len_of(Axis(0)), preds.len());
}
