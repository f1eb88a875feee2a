mod common;

use common::oracle::{bm25_brute_force, bm25_mismatches, close, reward_chain_holds};
use proptest::prelude::*;
use quite::domain::{discounted_return, Reward};
use quite::kb::Bm25Index;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn bm25_ranking_matches_brute_force(seed in any::<u64>()) {
        prop_assert_eq!(bm25_mismatches(seed), 0);
    }

    #[test]
    fn bm25_scores_match_formula(
        docs in prop::collection::vec(prop::collection::vec("[a-e]", 0..10), 1..20),
        query in prop::collection::vec("[a-f]", 1..5),
    ) {
        let texts: Vec<String> = docs.iter().map(|d| d.join(" ")).collect();
        let got = Bm25Index::build(&texts).scores(&query.join(" "));
        let want = bm25_brute_force(&docs, &query);
        for (g, w) in got.iter().zip(&want) {
            prop_assert!(close(*g, *w), "{} vs {}", g, w);
            prop_assert!(*g >= 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn reward_antisymmetric_and_telescoping(costs in prop::collection::vec(0.0f64..1e7, 1..15)) {
        prop_assert_eq!(reward_chain_holds(&costs), Ok(()));
    }

    #[test]
    fn discount_matches_explicit_sum(values in prop::collection::vec(-1e4f64..1e4, 0..10), gamma in 0.0f64..=1.0) {
        let rewards: Vec<Reward> = values.iter().map(|&value| Reward { value }).collect();
        let explicit: f64 = values.iter().enumerate().map(|(i, v)| gamma.powi(i as i32) * v).sum();
        prop_assert!(close(discounted_return(&rewards, gamma), explicit));
    }
}

#[test]
fn single_state_chain_has_zero_return() {
    assert_eq!(reward_chain_holds(&[42.0]), Ok(()));
    assert_eq!(discounted_return(&[], 1.0), 0.0);
}
