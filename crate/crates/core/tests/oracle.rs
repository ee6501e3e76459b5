mod common;

use proptest::prelude::*;

#[test]
fn engine_matches_reference_on_fixed_seeds() {
    for seed in 1000..1012 {
        common::oracle_run(seed, 300, 3).unwrap();
    }
}

#[test]
fn fuzz_worlds_exercise_every_phase() {
    let mut total = common::Coverage::default();
    for seed in 0..10 {
        let c = common::coverage(seed, 1_000);
        total.births += c.births;
        total.deaths += c.deaths;
        total.kills += c.kills;
        total.canceled_moves += c.canceled_moves;
    }
    assert!(
        total.births > 0 && total.deaths > 0 && total.kills > 0 && total.canceled_moves > 0,
        "{total:?}"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    #[test]
    fn engine_matches_reference_on_random_seeds(seed in any::<u64>(), workers in 1usize..5) {
        prop_assert_eq!(common::oracle_run(seed, 150, workers), Ok(()));
    }
}
