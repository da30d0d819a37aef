mod support;

use mmfed_core::metrics::{accumulate, ConfusionMatrix};
use rand::Rng;
use support::{criteria, oracle};

#[test]
fn hand_matrix_and_recount_criterion() {
    criteria::metrics().unwrap();
}

#[test]
fn concatenation_equals_sum_of_parts() {
    let mut r = oracle::rng(1);
    let classes = 5;
    let preds: Vec<usize> = (0..300).map(|_| r.random_range(1..=classes)).collect();
    let truths: Vec<usize> = (0..300).map(|_| r.random_range(1..=classes)).collect();
    let whole = accumulate(classes, &preds, &truths).unwrap();
    let mut parts = accumulate(classes, &preds[..120], &truths[..120]).unwrap();
    parts += &accumulate(classes, &preds[120..], &truths[120..]).unwrap();
    assert_eq!(whole, parts);
}

#[test]
fn empty_input_gives_zero_matrix() {
    assert_eq!(accumulate(3, &[], &[]).unwrap(), ConfusionMatrix::new(3));
}

#[test]
fn diagonal_iff_kappa_one() {
    let perfect = accumulate(3, &[1, 2, 3, 3], &[1, 2, 3, 3]).unwrap();
    assert!(perfect.is_diagonal());
    let s = perfect.scores().unwrap();
    assert_eq!((s.oa, s.aa, s.kappa), (1.0, 1.0, 1.0));
    let off = accumulate(3, &[1, 2, 3, 2], &[1, 2, 3, 3]).unwrap();
    assert!(!off.is_diagonal());
    assert!(off.scores().unwrap().kappa < 1.0);
}
