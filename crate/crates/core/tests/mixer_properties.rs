mod common;

use ambigzsl::mixer::{make_ambiguous_batch, mix, LambdaPolicy, PoolSelector};
use ambigzsl::rng::stream;
use ambigzsl::ClassId;
use ndarray::Array1;
use proptest::prelude::*;

const TOL: f64 = 1e-12;

fn vec_pair(len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(-5.0..5.0f64, len),
        prop::collection::vec(-5.0..5.0f64, len),
    )
}

fn pair_and_lambda() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
    (1usize..12).prop_flat_map(|n| (vec_pair(n), 0.0..=1.0f64).prop_map(|((a, b), l)| (a, b, l)))
}

fn pool() -> impl Strategy<Value = PoolSelector> {
    prop_oneof![
        Just(PoolSelector::Seen),
        Just(PoolSelector::Unseen),
        Just(PoolSelector::Both)
    ]
}

fn policy() -> impl Strategy<Value = LambdaPolicy> {
    prop_oneof![
        (0.0..=1.0f64).prop_map(LambdaPolicy::fixed),
        Just(LambdaPolicy::uniform(0.0, 1.0)),
        Just(LambdaPolicy::normal(0.5, 0.25)),
        Just(LambdaPolicy::beta(0.3, 0.3)),
        Just(LambdaPolicy::uniform(0.0, 1.0).per_row()),
        Just(LambdaPolicy::beta(2.0, 5.0).per_row()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn mixing_is_symmetric_in_lambda((a, b, lam) in pair_and_lambda()) {
        let a = Array1::from(a);
        let b = Array1::from(b);
        let ab = mix(a.view(), b.view(), lam);
        let ba = mix(b.view(), a.view(), 1.0 - lam);
        for (x, y) in ab.iter().zip(&ba) {
            prop_assert!((x - y).abs() <= TOL * (1.0 + x.abs()));
        }
    }

    #[test]
    fn mixing_stays_within_the_segment((a, b, lam) in pair_and_lambda()) {
        let m = mix(Array1::from(a.clone()).view(), Array1::from(b.clone()).view(), lam);
        for ((&x, &y), &v) in a.iter().zip(&b).zip(&m) {
            prop_assert!(v >= x.min(y) - TOL && v <= x.max(y) + TOL);
        }
    }

    #[test]
    fn endpoints_recover_the_parents((a, b, _lam) in pair_and_lambda()) {
        let (av, bv) = (Array1::from(a), Array1::from(b));
        prop_assert_eq!(mix(av.view(), bv.view(), 1.0), av.clone());
        prop_assert_eq!(mix(av.view(), bv.view(), 0.0), bv);
    }

    #[test]
    fn batches_are_well_formed(
        seed in any::<u64>(),
        n_seen in 2usize..5,
        n_unseen in 2usize..4,
        pool in pool(),
        policy in policy(),
        batch in 1usize..9,
    ) {
        let bundle = common::bundle(n_seen, n_unseen, seed % 64);
        bundle.access().reset();
        let mut rng = stream(seed, 0);
        let b = make_ambiguous_batch(&bundle, pool, &policy, batch, &mut rng).unwrap();
        let split = bundle.split();
        let pool_ids = pool.classes(split);
        prop_assert_eq!(&b.pool_classes, &pool_ids);
        prop_assert_eq!(b.len(), batch);

        for row in 0..batch {
            let (ci, cj) = b.source_pairs[row];
            prop_assert!(ci != cj);
            prop_assert!(pool_ids.contains(&ci) && pool_ids.contains(&cj));
            let lam = b.lambdas[row];
            prop_assert!((0.0..=1.0).contains(&lam));

            // soft label: simplex, support only on the two parents
            let y = b.soft_labels.row(row);
            prop_assert!((y.sum() - 1.0).abs() < TOL);
            let i = pool_ids.iter().position(|&c| c == ci).unwrap();
            let j = pool_ids.iter().position(|&c| c == cj).unwrap();
            for (k, &v) in y.iter().enumerate() {
                prop_assert!(v >= 0.0);
                if k != i && k != j {
                    prop_assert_eq!(v, 0.0);
                }
            }
            prop_assert!((y[i] - lam).abs() < TOL && (y[j] - (1.0 - lam)).abs() < TOL);

            // prototype: the matching convex combination of the parents
            let expect = mix(bundle.prototype(ci).unwrap(), bundle.prototype(cj).unwrap(), lam);
            for (v, e) in b.prototypes.row(row).iter().zip(&expect) {
                prop_assert!((v - e).abs() < TOL);
            }
            if lam == 1.0 {
                prop_assert_eq!(b.prototypes.row(row).to_owned(), bundle.prototype(ci).unwrap().to_owned());
            }
            if lam == 0.0 {
                prop_assert_eq!(b.prototypes.row(row).to_owned(), bundle.prototype(cj).unwrap().to_owned());
            }
        }

        if policy.per_minibatch {
            prop_assert!(b.lambdas.iter().all(|&l| l == b.lambdas[0]));
        }
    }

    #[test]
    fn seen_pool_never_reads_unseen_prototypes(seed in any::<u64>(), policy in policy(), batch in 1usize..9) {
        let bundle = common::bundle(3, 3, seed % 64);
        bundle.access().reset();
        let mut rng = stream(seed, 1);
        let b = make_ambiguous_batch(&bundle, PoolSelector::Seen, &policy, batch, &mut rng).unwrap();
        let unseen: Vec<ClassId> = bundle.split().unseen.clone();
        prop_assert_eq!(bundle.access().snapshot().prototype_reads_of(&unseen), 0);
        prop_assert!(b.source_pairs.iter().all(|(a, c)| !unseen.contains(a) && !unseen.contains(c)));
    }

    #[test]
    fn unseen_pool_draws_only_unseen_pairs(seed in any::<u64>(), batch in 1usize..9) {
        let bundle = common::bundle(3, 3, seed % 64);
        let mut rng = stream(seed, 2);
        let b = make_ambiguous_batch(&bundle, PoolSelector::Unseen, &LambdaPolicy::fixed(0.5), batch, &mut rng).unwrap();
        let split = bundle.split();
        prop_assert!(b.source_pairs.iter().all(|&(a, c)| split.is_unseen(a) && split.is_unseen(c)));
    }
}
