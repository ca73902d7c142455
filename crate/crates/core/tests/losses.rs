mod common;

use ctalign::corpus::load_corpus;
use ctalign::embed::EmbeddingMatrix;
use ctalign::losses::{
    build_positive_sets, distill_loss, infonce_loss, roco_loss, roco_loss_with, ContrastiveOptions,
    PositiveSetMap, Reduction,
};
use ctalign::toytrain::{gradcheck, GradLoss};
use proptest::prelude::*;

fn m(rows: &[[f64; 2]]) -> EmbeddingMatrix {
    EmbeddingMatrix::from_rows(rows).unwrap()
}

#[test]
fn analytic_fixtures() {
    let same = m(&[[1.0, 1.0], [1.0, 1.0]]);
    let ln2 = std::f64::consts::LN_2;
    assert!(
        (roco_loss(&same, &same, &PositiveSetMap::singletons(2), 0.07)
            .unwrap()
            .value
            - ln2)
            .abs()
            < 1e-6
    );
    let both = PositiveSetMap::new(vec![vec![0, 1], vec![0, 1]]).unwrap();
    assert!((roco_loss(&same, &same, &both, 1.0).unwrap().value - ln2).abs() < 1e-6);

    let eye = m(&[[1.0, 0.0], [0.0, 1.0]]);
    let v = infonce_loss(&eye, &eye, 1.0).unwrap().value;
    assert!((v - 0.313262).abs() < 1e-6, "{v}");

    let one = m(&[[0.3, -2.0]]);
    assert_eq!(infonce_loss(&one, &one, 0.07).unwrap().value, 0.0);

    assert_eq!(distill_loss(&eye, &eye, Reduction::Sum).unwrap().value, 0.0);
    assert_eq!(
        distill_loss(&m(&[[1.0, 0.0]]), &m(&[[0.0, 1.0]]), Reduction::Sum)
            .unwrap()
            .value,
        2.0
    );
    assert_eq!(
        distill_loss(&eye, &m(&[[1.0, 0.0], [1.0, 0.0]]), Reduction::Sum)
            .unwrap()
            .value,
        4.0
    );
}

#[test]
fn fixture_positive_sets() {
    let corpus = load_corpus(common::fixture("positive_sets.jsonl")).unwrap();
    let sets = build_positive_sets(corpus.records());
    let healthy = vec![0, 2, 6];
    let identical = vec![1, 4];
    let expected: Vec<Vec<usize>> = (0..12)
        .map(|i| match i {
            0 | 2 | 6 => healthy.clone(),
            1 | 4 => identical.clone(),
            _ => vec![i],
        })
        .collect();
    assert_eq!(sets.sets(), expected.as_slice());
    assert!(sets.is_symmetric());
}

#[test]
fn singletons_reduce_to_infonce_bitwise() {
    let mut rng = common::rng(5);
    for _ in 0..10 {
        let a = common::random_matrix(&mut rng, 6, 4);
        let b = common::random_matrix(&mut rng, 6, 4);
        let x = infonce_loss(&a, &b, 0.1).unwrap();
        let y = roco_loss(&a, &b, &PositiveSetMap::singletons(6), 0.1).unwrap();
        assert_eq!(x.value.to_bits(), y.value.to_bits());
        assert_eq!(x.grads, y.grads);
    }
}

#[test]
fn gradients_match_finite_differences() {
    for loss in [GradLoss::Roco, GradLoss::Infonce, GradLoss::Distill] {
        for seed in 0..3 {
            let r = gradcheck(loss, 8, 16, seed).unwrap();
            assert!(
                r.max_relative_error < 1e-4,
                "{loss:?} seed {seed}: {}",
                r.max_relative_error
            );
        }
    }
}

#[test]
fn symmetric_variant_averages_directions() {
    let mut rng = common::rng(8);
    let a = common::random_matrix(&mut rng, 5, 3);
    let b = common::random_matrix(&mut rng, 5, 3);
    let p = PositiveSetMap::new(vec![vec![0, 3], vec![1], vec![2], vec![0, 3], vec![4]]).unwrap();
    let opts = ContrastiveOptions {
        temperature: 0.2,
        symmetric: true,
    };
    let sym = roco_loss_with(&a, &b, &p, &opts).unwrap();
    let i2t = roco_loss(&a, &b, &p, 0.2).unwrap().value;
    let t2i = roco_loss(&b, &a, &p.transpose(), 0.2).unwrap().value;
    assert!((sym.value - 0.5 * (i2t + t2i)).abs() < 1e-12);
}

#[test]
fn stable_at_small_temperature() {
    let a = m(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]]);
    let b = m(&[[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0]]);
    let l = infonce_loss(&a, &b, 0.01).unwrap();
    assert!(l.value.is_finite() && l.value > 100.0);
    assert!(l
        .grads
        .iter()
        .all(|g| g.data().iter().all(|v| v.is_finite())));
}

#[test]
fn adding_tied_top_column_keeps_loss() {
    // rows 0 and 1 of the text side are identical, so image 0 scores them equally
    let img = m(&[[1.0, 0.2], [0.0, 1.0], [-1.0, 0.5]]);
    let txt = m(&[[1.0, 0.1], [1.0, 0.1], [0.0, 1.0]]);
    let base = roco_loss(&img, &txt, &PositiveSetMap::singletons(3), 0.1)
        .unwrap()
        .value;
    let grown = PositiveSetMap::new(vec![vec![0, 1], vec![1], vec![2]]).unwrap();
    let with = roco_loss(&img, &txt, &grown, 0.1).unwrap().value;
    assert!(with <= base + 1e-12);
}

#[test]
fn shape_and_input_errors() {
    let a = m(&[[1.0, 0.0], [0.0, 1.0]]);
    let b = m(&[[1.0, 0.0]]);
    assert!(infonce_loss(&a, &b, 0.1).is_err());
    assert!(infonce_loss(&a, &a, 0.0).is_err());
    assert!(distill_loss(&a, &b, Reduction::Sum).is_err());
    let z = m(&[[0.0, 0.0], [0.0, 1.0]]);
    assert!(infonce_loss(&z, &a, 0.1).is_err());
    assert!(PositiveSetMap::new(vec![vec![1], vec![1]]).is_err());
}

fn instance() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 1usize..7, 1usize..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn roco_bounded_below_by_positive_set_sizes((seed, n, d) in instance()) {
        let mut rng = common::rng(seed);
        let a = common::random_matrix(&mut rng, n, d);
        let b = common::random_matrix(&mut rng, n, d);
        let keys: Vec<Option<usize>> = (0..n).map(|i| if i % 3 == 0 { Some(0) } else { None }).collect();
        let p = PositiveSetMap::from_group_keys(&keys);
        let bound: f64 = (0..n).map(|i| (p.get(i).len() as f64).ln()).sum::<f64>() / n as f64;
        let v = roco_loss(&a, &b, &p, 0.2).unwrap().value;
        prop_assert!(v >= bound - 1e-12);
    }

    #[test]
    fn losses_invariant_under_rotation_and_rescaling((seed, n, d) in instance()) {
        let mut rng = common::rng(seed);
        let a = common::random_matrix(&mut rng, n, d);
        let b = common::random_matrix(&mut rng, n, d);
        let rot = common::random_rotation(&mut rng, d);
        let base = infonce_loss(&a, &b, 0.3).unwrap().value;
        let rotated = infonce_loss(&common::rotate(&a, &rot), &common::rotate(&b, &rot), 0.3).unwrap().value;
        prop_assert!((base - rotated).abs() < 1e-6);
        let scaled = infonce_loss(&common::rescale_rows(&a, &mut rng), &common::rescale_rows(&b, &mut rng), 0.3).unwrap().value;
        prop_assert!((base - scaled).abs() < 1e-6);
        let d0 = distill_loss(&a, &b, Reduction::Sum).unwrap().value;
        let d1 = distill_loss(&common::rotate(&a, &rot), &common::rotate(&b, &rot), Reduction::Sum).unwrap().value;
        prop_assert!((d0 - d1).abs() < 1e-6 * d0.max(1.0));
        prop_assert!(d0 >= 0.0);
    }

    #[test]
    fn teacher_gets_no_gradient((seed, n, d) in instance()) {
        let mut rng = common::rng(seed);
        let a = common::random_matrix(&mut rng, n, d);
        let b = common::random_matrix(&mut rng, n, d);
        let l = distill_loss(&a, &b, Reduction::Mean).unwrap();
        prop_assert!(l.grads.len() < 2 || l.grads[1].data().iter().all(|&g| g == 0.0));
    }
}
