mod common;

use common::BoxLp;
use flexdom::ipm::{solve, IpmOptions, SolveStatus};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn random_lps_match_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..50 {
        let lp = BoxLp::random(&mut rng, 2 + trial % 3);
        let r = solve(&lp.problem(), &IpmOptions::default(), None).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal, "trial {trial}");
        let expected = lp.vertex_optimum();
        assert!(
            (r.objective - expected).abs() < 1e-7,
            "trial {trial}: {} vs {expected}",
            r.objective
        );
    }
}

#[test]
fn combinations_of_three_from_five() {
    // 50 LPs exercise the enumeration; this pins a known vertex
    let lp = BoxLp {
        c: vec![-1.0, -1.0],
        u: vec![1.0, 1.0],
        cuts: vec![(vec![1.0, 1.0], 1.5)],
    };
    assert!((lp.vertex_optimum() + 1.5).abs() < 1e-12);
}
