//! Randomized invariants of the discrepancy terms, the loss and the metrics.

use jda_core::adaptation::{conditional_mmd2, jda_penalty, marginal_mmd2, AdaptMode, FeatureBatch};
use jda_core::data::standardize;
use jda_core::eval::ConfusionMatrix;
use jda_core::nn::{softmax, softmax_cross_entropy};
use jda_core::{Domain, Tensor};
use proptest::prelude::*;

const WIDTH: usize = 4;
const CLASSES: usize = 3;

/// A feature batch: rows of `WIDTH` values with labels in `[0, CLASSES)`.
fn batch() -> impl Strategy<Value = (Tensor, Vec<usize>)> {
    (1usize..10).prop_flat_map(|n| {
        (
            prop::collection::vec(-50.0..50.0f64, n * WIDTH),
            prop::collection::vec(0..CLASSES, n),
        )
            .prop_map(move |(data, labels)| (Tensor::new(vec![n, WIDTH], data).unwrap(), labels))
    })
}

fn fb<'a>(t: &'a Tensor, l: &'a [usize], domain: Domain) -> FeatureBatch<'a> {
    FeatureBatch::new(t, l, domain).unwrap()
}

fn shifted(t: &Tensor, offset: &[f64]) -> Tensor {
    let mut out = t.clone();
    for r in 0..out.rows() {
        for (v, o) in out.row_mut(r).iter_mut().zip(offset) {
            *v += o;
        }
    }
    out
}

proptest! {
    #[test]
    fn discrepancies_are_nonnegative_and_symmetric((a, la) in batch(), (b, lb) in batch()) {
        let s = fb(&a, &la, Domain::Source);
        let t = fb(&b, &lb, Domain::Target);
        let ab = marginal_mmd2(&s, &t).unwrap();
        let ba = marginal_mmd2(&t, &s).unwrap();
        prop_assert!(ab.value >= 0.0);
        prop_assert_eq!(ab.value, ba.value);
        for c in 0..CLASSES {
            match (conditional_mmd2(&s, &t, c).unwrap(), conditional_mmd2(&t, &s, c).unwrap()) {
                (Some(x), Some(y)) => {
                    prop_assert!(x.value >= 0.0);
                    prop_assert_eq!(x.value, y.value);
                }
                (None, None) => prop_assert!(!la.contains(&c) || !lb.contains(&c)),
                _ => prop_assert!(false, "skip decision must not depend on argument order"),
            }
        }
    }

    #[test]
    fn identical_sets_have_zero_discrepancy((a, la) in batch()) {
        let s = fb(&a, &la, Domain::Source);
        let t = fb(&a, &la, Domain::Target);
        for mode in [AdaptMode::Mda, AdaptMode::Jda] {
            let p = jda_penalty(&s, &t, mode, CLASSES).unwrap();
            prop_assert!(p.total.abs() <= 1e-12);
            prop_assert!(p.dfeatures_source.data().iter().all(|g| g.abs() <= 1e-12));
        }
    }

    #[test]
    fn common_translation_changes_nothing(
        (a, la) in batch(),
        (b, lb) in batch(),
        offset in prop::collection::vec(-100.0..100.0f64, WIDTH),
    ) {
        let (a2, b2) = (shifted(&a, &offset), shifted(&b, &offset));
        let before = jda_penalty(&fb(&a, &la, Domain::Source), &fb(&b, &lb, Domain::Target), AdaptMode::Jda, CLASSES).unwrap();
        let after = jda_penalty(&fb(&a2, &la, Domain::Source), &fb(&b2, &lb, Domain::Target), AdaptMode::Jda, CLASSES).unwrap();
        prop_assert!((before.marginal_mmd2 - after.marginal_mmd2).abs() <= 1e-9);
        for (x, y) in before.conditional_mmd2.iter().zip(&after.conditional_mmd2) {
            match (x, y) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() <= 1e-9),
                (None, None) => {}
                _ => prop_assert!(false, "translation changed class membership"),
            }
        }
    }

    #[test]
    fn total_is_the_sum_of_its_parts((a, la) in batch(), (b, lb) in batch()) {
        let s = fb(&a, &la, Domain::Source);
        let t = fb(&b, &lb, Domain::Target);
        let p = jda_penalty(&s, &t, AdaptMode::Jda, CLASSES).unwrap();
        let mut sum = p.marginal_mmd2;
        for v in p.conditional_mmd2.iter().flatten() {
            sum += v;
        }
        prop_assert_eq!(p.total, sum);
        let m = jda_penalty(&s, &t, AdaptMode::Mda, CLASSES).unwrap();
        prop_assert_eq!(m.total, m.marginal_mmd2);
        prop_assert!(m.conditional_mmd2.iter().all(Option::is_none));
    }

    #[test]
    fn one_class_doubles_the_marginal((a, _) in batch(), (b, _) in batch()) {
        let la = vec![0; a.rows()];
        let lb = vec![0; b.rows()];
        let p = jda_penalty(&fb(&a, &la, Domain::Source), &fb(&b, &lb, Domain::Target), AdaptMode::Jda, 2).unwrap();
        prop_assert!((p.total - 2.0 * p.marginal_mmd2).abs() <= 1e-12 * p.total.max(1.0));
    }

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..6, logits in prop::collection::vec(-500.0..500.0f64, 30)) {
        let t = Tensor::new(vec![rows, 5], logits[..rows * 5].to_vec()).unwrap();
        let p = softmax(&t);
        for r in 0..rows {
            let row = p.row(r);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        let labels: Vec<usize> = (0..rows).map(|r| r % 5).collect();
        let (loss, grad) = softmax_cross_entropy(&t, &labels).unwrap();
        prop_assert!(loss.is_finite() && loss >= 0.0);
        for r in 0..rows {
            prop_assert!(grad.row(r).iter().sum::<f64>().abs() <= 1e-12);
        }
    }

    #[test]
    fn accuracy_is_the_normalized_trace(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..200)) {
        let (truth, pred): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let cm = ConfusionMatrix::from_predictions(&truth, &pred, 4).unwrap();
        let direct = truth.iter().zip(&pred).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64;
        prop_assert_eq!(cm.accuracy(), direct);
        prop_assert_eq!(cm.trace() as f64 / cm.total() as f64, direct);
        for row in cm.normalized().into_iter().flatten() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn standardization_centres_and_scales(x in prop::collection::vec(-1e3..1e3f64, 2..100)) {
        let z = standardize(&x);
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        prop_assert!(mean.abs() <= 1e-9);
        let var = z.iter().map(|v| v * v).sum::<f64>() / n;
        prop_assert!(var.abs() <= 1.0 + 1e-9);
    }
}
