use std::collections::HashSet;

use proptest::prelude::*;

use srd_core::data::{generate_synthetic, truncate_by_deadline};
use srd_core::optim::{cosine_lr, Adam};
use srd_core::ssl::{psid_loss, Similarity, ViewBatch};
use srd_core::{ParamStore, Tape, Tensor};

fn psid(g: &Tensor, t: &Tensor, tau: f64, sim: Similarity) -> f64 {
    let mut tape = Tape::new();
    let (g, t) = (tape.constant(g.clone()).unwrap(), tape.constant(t.clone()).unwrap());
    let l = psid_loss(&mut tape, ViewBatch { g, t }, tau, sim).unwrap();
    tape.scalar(l)
}

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(t.rows(), t.cols());
    for (i, &p) in perm.iter().enumerate() {
        out.row_mut(i).copy_from_slice(t.row(p));
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn truncation_is_monotone_in_the_deadline(seed in 0u64..500, a in 0.0f64..300.0, b in 0.0f64..300.0) {
        let (lo, hi) = (a.min(b), a.max(b));
        for e in generate_synthetic(4, 2, 0.8, seed).unwrap() {
            let early = truncate_by_deadline(&e, lo);
            let late = truncate_by_deadline(&e, hi);
            let ids = |x: &srd_core::EventRecord| x.nodes.iter().map(|n| n.node_id).collect::<HashSet<_>>();
            prop_assert!(ids(&early).is_subset(&ids(&late)));
            prop_assert_eq!(&early.nodes[0], &e.nodes[0]);
            let kept = ids(&early);
            for n in &early.nodes[1..] {
                prop_assert!(n.timestamp_minutes <= lo);
                prop_assert!(kept.contains(&n.parent_id.unwrap()));
            }
        }
    }

    #[test]
    fn psid_is_invariant_to_batch_order(
        values in prop::collection::vec(-2.0f64..2.0, 2 * 5 * 3),
        shift in 1usize..5,
        tau in 0.1f64..2.0,
        cosine in any::<bool>(),
    ) {
        let g = Tensor::from_vec(5, 3, values[..15].to_vec()).unwrap();
        let t = Tensor::from_vec(5, 3, values[15..].to_vec()).unwrap();
        let sim = if cosine { Similarity::Cosine } else { Similarity::Dot };
        let perm: Vec<usize> = (0..5).map(|i| (i + shift) % 5).collect();
        let base = psid(&g, &t, tau, sim);
        let moved = psid(&permute_rows(&g, &perm), &permute_rows(&t, &perm), tau, sim);
        prop_assert!(base >= 0.0);
        prop_assert!((base - moved).abs() <= 1e-12 * base.abs().max(1.0));
    }

    #[test]
    fn adam_first_step_is_bounded_by_the_learning_rate(
        grads in prop::collection::vec(-1e3f64..1e3, 6),
        lr in 1e-5f64..1e-1,
    ) {
        let mut store = ParamStore::new();
        store.register("p", Tensor::zeros(2, 3));
        let mut adam = Adam::new(&store);
        adam.step(&mut store, &[Tensor::from_vec(2, 3, grads.clone()).unwrap()], lr).unwrap();
        for (p, g) in store.tensors()[0].data().iter().zip(&grads) {
            prop_assert!(p.abs() <= lr * (1.0 + 1e-9));
            prop_assert!(*g == 0.0 || p.signum() == -g.signum() || *p == 0.0);
        }
    }

    #[test]
    fn cosine_schedule_stays_between_its_bounds(total in 1usize..500, lo in 0.0f64..1e-3, span in 0.0f64..1e-2) {
        let hi = lo + span;
        let mut prev = f64::INFINITY;
        for s in 0..=total {
            let lr = cosine_lr(s, total, hi, lo);
            prop_assert!(lr <= prev);
            prop_assert!(lr >= lo - 1e-18 && lr <= hi + 1e-18);
            prev = lr;
        }
    }
}
