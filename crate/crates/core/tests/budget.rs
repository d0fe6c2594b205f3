use deltatok_core::budget::{plan_budget, sample_gops, tokens_per_gop, BudgetPlan, BudgetQuery};
use proptest::prelude::*;

#[test]
fn one_keyframe_gop_costs_m_plus_seven_n() {
    let q = BudgetQuery::reference(1_000_000);
    assert_eq!(tokens_per_gop(&q).unwrap(), 210 + 7 * 8);
    let plan = plan_budget(&q).unwrap();
    assert_eq!(
        plan,
        BudgetPlan::Coverage {
            max_gops: 3759,
            max_duration_seconds: 30072.0,
            tokens_used: 3759 * 266,
            tokens_per_gop: 266,
        }
    );
    let hours = plan.max_duration_seconds() / 3600.0;
    assert!((8.0..=8.5).contains(&hours));
}

#[test]
fn dense_gop_costs_eight_keyframes() {
    let q = BudgetQuery {
        keyframes_per_gop: 8,
        ..BudgetQuery::reference(1_000_000)
    };
    assert_eq!(tokens_per_gop(&q).unwrap(), 1680);
    let plan = plan_budget(&q).unwrap();
    assert_eq!(plan.max_gops(), 595);
    assert_eq!(plan.max_duration_seconds(), 4760.0);
}

#[test]
fn sampling_large_totals() {
    let idx = sample_gops(128, 64);
    assert_eq!(idx, (0..64).map(|j| 2 * j).collect::<Vec<_>>());
    assert_eq!(sample_gops(1, 64), vec![0]);
}

proptest! {
    #[test]
    fn sampling_is_strictly_increasing(total in 1usize..5000, cap in 1usize..200) {
        let idx = sample_gops(total, cap);
        prop_assert_eq!(idx.len(), total.min(cap));
        prop_assert_eq!(idx[0], 0);
        prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(*idx.last().unwrap() < total);
    }

    #[test]
    fn plan_is_monotone(budget in 0usize..3_000_000, extra in 0usize..100_000, k in 1usize..8) {
        let q = BudgetQuery { keyframes_per_gop: k, ..BudgetQuery::reference(budget) };
        let more = BudgetQuery { context_budget: budget + extra, ..q };
        prop_assert!(plan_budget(&more).unwrap().max_gops() >= plan_budget(&q).unwrap().max_gops());
        let denser = BudgetQuery { keyframes_per_gop: k + 1, ..q };
        prop_assert!(tokens_per_gop(&denser).unwrap() >= tokens_per_gop(&q).unwrap());
    }
}
