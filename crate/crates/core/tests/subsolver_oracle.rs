mod common;

use clusterloc::subsolver::{solve_subproblem, verify_constraints, BarrierSettings};
use common::{norm2, project_epigraph, projected_gradient, random_subproblem, relative_error};
use proptest::prelude::*;

const ORACLE_ITERATIONS: usize = 1_000_000;
const ORACLE_TOL: f64 = 1e-10;

#[test]
fn barrier_matches_projected_gradient() {
    let settings = BarrierSettings::default();
    let mut worst = 0.0f64;
    for seed in 0..40 {
        let spec = random_subproblem(seed);
        let state = solve_subproblem(&spec, &settings).unwrap();
        assert!(verify_constraints(&spec.data.positions, &state).feasible, "seed {seed}");
        let oracle = projected_gradient(&spec, ORACLE_ITERATIONS, ORACLE_TOL);
        let barrier = spec.objective(&state);
        let err = relative_error(barrier, oracle.objective);
        worst = worst.max(err);
        assert!(err <= 1e-4, "seed {seed}: barrier {barrier} oracle {}", oracle.objective);
    }
    println!("worst relative objective error {worst:.3e}");
}

#[test]
fn oracle_recovers_a_known_optimum() {
    // Exact ranges from a point outside the sensor hull: the unconstrained
    // optimum is tight and the cost is zero there.
    let mut spec = random_subproblem(7);
    spec.anchors.clear();
    spec.linear = vec![0.0; 2];
    spec.constant = 0.0;
    let event = [spec.data.positions[0][0] + 6.0, spec.data.positions[0][1] - 4.0];
    spec.data.ranges = spec
        .data
        .positions
        .iter()
        .map(|a| ((a[0] - event[0]).powi(2) + (a[1] - event[1]).powi(2)).sqrt())
        .collect();
    let oracle = projected_gradient(&spec, ORACLE_ITERATIONS, ORACLE_TOL);
    assert!(oracle.objective.abs() < 1e-8, "{}", oracle.objective);
}

proptest! {
    #[test]
    fn epigraph_projection_is_a_projection(
        x in proptest::collection::vec(-5.0f64..5.0, 2),
        y in -5.0f64..30.0,
        probe in proptest::collection::vec(-3.0f64..3.0, 2),
    ) {
        let z = vec![x[0], x[1], y];
        let p = project_epigraph(&z, 2);
        prop_assert!(p[2] >= norm2(&p[..2]) - 1e-12);
        // Variational inequality against feasible points q: (z − p)ᵀ(q − p) ≤ 0.
        let q = [probe[0], probe[1], norm2(&probe) + 0.5];
        let lhs: f64 = (0..3).map(|k| (z[k] - p[k]) * (q[k] - p[k])).sum();
        prop_assert!(lhs <= 1e-9 * (1.0 + norm2(&z)), "{}", lhs);
        // Idempotent.
        let pp = project_epigraph(&p, 2);
        prop_assert!((0..3).all(|k| (pp[k] - p[k]).abs() <= 1e-12 * (1.0 + p[k].abs())));
    }
}
