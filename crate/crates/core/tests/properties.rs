//! Property tests over the numeric and serialization invariants.

use fipo::dataset::{
    load_preferences, save_jsonl, PreferencePair, Split, NUM_FALLACY_TYPES,
};
use fipo::judge::{randolph_kappa, AnnotationLabel, AnnotationRecord};
use fipo::losses::ClassWeights;
use fipo::model::{nucleus_topk_filter, Stance};
use fipo::tensor::{Precision, Tape};
use proptest::prelude::*;

fn arb_pair() -> impl Strategy<Value = PreferencePair> {
    (
        "[a-z]{1,8}( [a-z]{1,8}){0,3}",
        prop::bool::ANY,
        "[a-z ]{1,30}",
        "[a-z ]{1,30}",
        1u8..=NUM_FALLACY_TYPES as u8,
    )
        .prop_filter_map("non-empty and distinct", |(topic, sup, w, l, k)| {
            let w = w.trim().to_string();
            let l = l.trim().to_string();
            if w.is_empty() || l.is_empty() || w == l {
                return None;
            }
            Some(PreferencePair {
                topic,
                stance: if sup { Stance::Support } else { Stance::Counter },
                preferred: w,
                dispreferred: l,
                fallacy_type: k,
                split: Split::Train,
            })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Rows of log_softmax exponentiate-and-sum to 1 for any finite input.
    #[test]
    fn log_softmax_rows_normalize(
        rows in 1usize..4,
        cols in 1usize..8,
        values in prop::collection::vec(-1e4f64..1e4, 1..32),
    ) {
        let mut data = values;
        data.resize(rows * cols, 0.37);
        let tape = Tape::new(Precision::F64);
        let x = tape.leaf(vec![rows, cols], data, false);
        let y = x.log_softmax().unwrap().data();
        for r in 0..rows {
            let s: f64 = y[r * cols..(r + 1) * cols].iter().map(|v| v.exp()).sum();
            prop_assert!((s - 1.0).abs() < 1e-6, "row {r} sums to {s}");
        }
    }

    /// exp(log_sigmoid(x)) + exp(log_sigmoid(-x)) = 1.
    #[test]
    fn log_sigmoid_complement(x in -700f64..700.0) {
        let tape = Tape::new(Precision::F64);
        let v = tape.leaf(vec![1], vec![x], false);
        let s = v.log_sigmoid().data()[0].exp() + v.neg().log_sigmoid().data()[0].exp();
        prop_assert!((s - 1.0).abs() < 1e-9, "{s}");
    }

    /// Preference datasets survive a save/load round trip structurally.
    #[test]
    fn preference_jsonl_roundtrip(pairs in prop::collection::vec(arb_pair(), 1..20)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        save_jsonl(&path, &pairs).unwrap();
        let loaded = load_preferences(&path).unwrap();
        prop_assert_eq!(loaded.records, pairs);
    }

    /// Fallacy-class weights sum to 1 and are permutation-invariant.
    #[test]
    fn class_weights_sum_and_permutation(
        mut ids in prop::collection::vec(1u8..=NUM_FALLACY_TYPES as u8, 1..200),
        swap in prop::collection::vec((0usize..200, 0usize..200), 0..16),
    ) {
        let before = ClassWeights::from_type_ids(ids.clone()).unwrap();
        prop_assert!((before.fallacy_sum() - 1.0).abs() < 1e-9);
        let n = ids.len();
        for (a, b) in swap {
            ids.swap(a % n, b % n);
        }
        let after = ClassWeights::from_type_ids(ids).unwrap();
        prop_assert_eq!(before, after);
    }

    /// The sampling filter always keeps a non-empty prefix within top-k,
    /// renormalized to unit mass, and never drops the argmax.
    #[test]
    fn nucleus_filter_invariants(
        raw in prop::collection::vec(1e-6f64..1.0, 1..40),
        top_p in 0.01f64..1.0,
        top_k in 1usize..40,
    ) {
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
        let kept = nucleus_topk_filter(&probs, top_p, top_k);
        prop_assert!(!kept.is_empty());
        prop_assert!(kept.len() <= top_k);
        let mass: f64 = kept.iter().map(|&(_, p)| p).sum();
        prop_assert!((mass - 1.0).abs() < 1e-9, "mass {mass}");
        let argmax = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            .unwrap()
            .0;
        prop_assert!(kept.iter().any(|&(i, _)| i == argmax), "argmax dropped");
    }

    /// Kappa is invariant under swapping the Agree/Disagree label names.
    #[test]
    fn kappa_label_swap_symmetry(
        rows in prop::collection::vec(prop::collection::vec(prop::bool::ANY, 3), 1..20),
    ) {
        let as_records = |invert: bool| -> Vec<AnnotationRecord> {
            rows.iter()
                .enumerate()
                .map(|(i, labels)| AnnotationRecord {
                    id: format!("r{i}"),
                    labels: labels
                        .iter()
                        .map(|&b| {
                            if b != invert {
                                AnnotationLabel::Agree
                            } else {
                                AnnotationLabel::Disagree
                            }
                        })
                        .collect(),
                })
                .collect()
        };
        let k1 = randolph_kappa(&as_records(false)).unwrap();
        let k2 = randolph_kappa(&as_records(true)).unwrap();
        prop_assert!((k1 - k2).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&k1));
    }
}
