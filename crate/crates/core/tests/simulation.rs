use hle_core::simcheck::{agreement_checks, simulate, SimulationConfig};
use hle_core::TransitionMatrix;

fn scalar_config(agents: usize, seed: u64) -> SimulationConfig {
    SimulationConfig {
        agents,
        seed,
        measure: None,
        gender: None,
        matrices: vec![TransitionMatrix::from_column_slice(1, &[0.9]).unwrap(); 100],
        birth_mix: vec![1.0],
        healthy_states: vec![0],
        report_age: 5,
    }
}

#[test]
fn scalar_chain_matches_geometric_survival() {
    let cfg = scalar_config(200_000, 17);
    let sum = simulate(&cfg).unwrap();
    for i in [1usize, 5, 10, 20] {
        let want = 0.9f64.powi(i as i32);
        let e = sum.survival[i - 1];
        assert!((e.mean - want).abs() <= 3.0 * e.se, "age {i}: {} vs {want}", e.mean);
    }
    let years: f64 = (1..=100).map(|t| 0.9f64.powi(t)).sum();
    let z = sum.state_years[0][0].unwrap();
    assert!((z.mean - years).abs() <= 3.0 * z.se);
    let checks = agreement_checks(&cfg, &sum, &[1, 5, 10, 20], 3.0).unwrap();
    assert!(checks.iter().all(|c| c.passed), "{checks:?}");
}

#[test]
fn same_seed_reproduces_exactly() {
    let small = simulate(&scalar_config(5_000, 8)).unwrap();
    let again = simulate(&scalar_config(5_000, 8)).unwrap();
    assert_eq!(small, again);
    let other = simulate(&scalar_config(5_000, 9)).unwrap();
    assert_ne!(small.survival, other.survival);
}
