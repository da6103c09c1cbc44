use fosls_twophase::adapt::{mark_ace, mark_dorfler, ErrorField, WorkModel};
use fosls_twophase::linsolve::wu_account;
use proptest::prelude::*;

fn field(values: &[f64]) -> ErrorField {
    ErrorField::new((0..values.len()).map(|k| 10 + 3 * k).collect(), values.to_vec()).unwrap()
}

fn permuted(values: &[f64], seed: u64) -> ErrorField {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
    ErrorField::new(order.iter().map(|&k| 10 + 3 * k).collect(), order.iter().map(|&k| values[k]).collect()).unwrap()
}

fn marked_sum(f: &ErrorField, marks: &fosls_twophase::mesh::MarkSet) -> f64 {
    f.ids().iter().zip(f.values()).filter(|(id, _)| marks.contains(**id)).map(|(_, v)| v).sum()
}

#[test]
fn ace_on_a_single_dominant_element() {
    // one element holds all of the error: marking it alone is optimal
    let f = field(&[1.0, 0.0, 0.0, 0.0]);
    let m = mark_ace(&f, 2, WorkModel::default());
    assert_eq!(m.iter().collect::<Vec<_>>(), vec![10]);
    assert!(mark_ace(&field(&[0.0; 3]), 2, WorkModel::default()).is_empty());
}

#[test]
fn dorfler_rejects_bad_theta() {
    for t in [0.0, -0.1, 1.5, f64::NAN] {
        assert!(mark_dorfler(&field(&[1.0]), t).is_err());
    }
    assert!(ErrorField::new(vec![1], vec![-1.0]).is_err());
    assert!(ErrorField::new(vec![1, 2], vec![1.0]).is_err());
}

proptest! {
    #[test]
    fn marking_is_permutation_invariant(values in prop::collection::vec(0.0f64..1.0, 1..60), seed in 0u64..1000, theta in 0.05f64..1.0) {
        let (a, b) = (field(&values), permuted(&values, seed));
        prop_assert_eq!(mark_dorfler(&a, theta).unwrap(), mark_dorfler(&b, theta).unwrap());
        prop_assert_eq!(mark_ace(&a, 2, WorkModel::default()), mark_ace(&b, 2, WorkModel::default()));
    }

    #[test]
    fn dorfler_captures_theta_minimally(values in prop::collection::vec(0.0f64..1.0, 1..60), theta in 0.05f64..1.0) {
        let f = field(&values);
        let total: f64 = values.iter().sum();
        let m = mark_dorfler(&f, theta).unwrap();
        prop_assert!(m.iter().all(|id| f.ids().contains(&id)));
        if total > 0.0 {
            prop_assert!(marked_sum(&f, &m) >= theta * total * (1.0 - 1e-12));
            // no set with one element fewer reaches theta: check the best such set
            let mut sorted = values.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let best_smaller: f64 = sorted[..m.len() - 1].iter().sum();
            prop_assert!(best_smaller < theta * total);
        }
    }

    #[test]
    fn ace_picks_the_most_efficient_prefix(values in prop::collection::vec(0.0f64..1.0, 1..40), degree in 1usize..4, exponent in 0.5f64..2.0) {
        let f = field(&values);
        let m = mark_ace(&f, degree, WorkModel { exponent });
        prop_assert!(m.iter().all(|id| f.ids().contains(&id)));
        let total: f64 = values.iter().sum();
        if total > 0.0 {
            let mut sorted = values.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let n = values.len() as f64;
            let eff = |k: usize| {
                let r: f64 = sorted[..k].iter().sum::<f64>() / total;
                -(1.0 - r * (1.0 - 0.25f64.powi(degree as i32))).ln() / (n + 3.0 * k as f64).powf(exponent)
            };
            let best = (1..=values.len()).map(eff).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(!m.is_empty());
            prop_assert!(eff(m.len()) >= best * (1.0 - 1e-12));
            // marked elements are the largest ones
            let smallest_marked = f.ids().iter().zip(f.values()).filter(|(id, _)| m.contains(**id)).map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
            let largest_unmarked = f.ids().iter().zip(f.values()).filter(|(id, _)| !m.contains(**id)).map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(smallest_marked >= largest_unmarked);
        }
    }

    #[test]
    fn work_units_are_linear_and_level_blind(
        levels in prop::collection::vec((1usize..10_000, 0.0f64..50.0), 1..6),
        scale in 0.0f64..10.0,
        finest in 1usize..10_000,
        seed in 0u64..100,
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let nnz: Vec<usize> = levels.iter().map(|l| l.0).collect();
        let ops: Vec<f64> = levels.iter().map(|l| l.1).collect();
        let w = wu_account(&nnz, &ops, finest).unwrap();
        let scaled: Vec<f64> = ops.iter().map(|c| c * scale).collect();
        prop_assert!((wu_account(&nnz, &scaled, finest).unwrap() - scale * w).abs() <= 1e-12 * (1.0 + scale * w));
        let doubled: Vec<f64> = ops.iter().map(|c| 2.0 * c).collect();
        let sum = wu_account(&nnz, &doubled, finest).unwrap();
        prop_assert!((sum - 2.0 * w).abs() <= 1e-12 * (1.0 + w));
        let mut pairs = levels.clone();
        pairs.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let (n2, o2): (Vec<usize>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assert!((wu_account(&n2, &o2, finest).unwrap() - w).abs() <= 1e-12 * (1.0 + w));
    }
}
