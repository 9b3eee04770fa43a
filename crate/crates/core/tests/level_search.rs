use proptest::prelude::*;
use robust_doa_core::doa::{search_alpha_constant, search_alpha_with, AlphaSchedule, StateSamples};
use robust_doa_core::grid::{Region, UniformGrid};
use robust_doa_core::lyapunov::FixedLyapunov;

proptest! {
    /// For a threshold predicate the refinement search must land on the
    /// largest lattice value not above the threshold, like the constant
    /// walk.
    #[test]
    fn refinement_agrees_with_the_constant_walk(units in 1u64..3000) {
        let schedule = AlphaSchedule::new(1.0, 0.01).unwrap();
        let threshold = units as f64 * 0.01 + 0.004;
        let fast = search_alpha_with(&schedule, |a| Ok(a <= threshold)).unwrap();
        let slow = search_alpha_constant(&schedule, |a| Ok(a <= threshold)).unwrap();
        prop_assert!((fast.alpha_star - slow.alpha_star).abs() < 1e-9);
        prop_assert!(fast.check_count() <= slow.check_count() + 2);
        prop_assert!(fast.checks.iter().all(|&(a, ok)| ok == (a <= threshold)));
    }

    #[test]
    fn level_sets_grow_with_alpha(a in 0.0f64..4.0, b in 0.0f64..4.0) {
        let grid = UniformGrid::new(Region::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap(), vec![16, 16]).unwrap();
        let samples = StateSamples::draw(&grid, 20_000, 3, 10).unwrap();
        let l = FixedLyapunov::parse("x1^2 + 0.5*x2^2", 2).unwrap();
        let table = samples.table(&l).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let small = table.level_set(lo).mask;
        let large = table.level_set(hi).mask;
        prop_assert!(small.is_subset_of(&large).unwrap());
    }
}

#[test]
fn decimal_refinement_check_count() {
    let schedule = AlphaSchedule::new(10.0, 0.001).unwrap();
    let fast = search_alpha_with(&schedule, |a| Ok(a <= 97.678)).unwrap();
    assert_eq!(fast.check_count(), 42);
    assert!((fast.alpha_star - 97.678).abs() < 1e-9);
    let slow = search_alpha_constant(&schedule, |a| Ok(a <= 97.678)).unwrap();
    assert_eq!(slow.check_count(), 97679);
}
