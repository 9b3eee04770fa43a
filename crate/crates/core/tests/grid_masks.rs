use proptest::prelude::*;
use robust_doa_core::grid::{CellMask, Region, UniformGrid};

fn grids() -> (UniformGrid, UniformGrid) {
    let state = UniformGrid::new(Region::new(vec![-2.0], vec![2.0]).unwrap(), vec![13]).unwrap();
    let control = UniformGrid::new(Region::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(), vec![3, 4]).unwrap();
    (state, control)
}

fn mask(grid: &UniformGrid) -> impl Strategy<Value = CellMask> {
    let grid = grid.clone();
    prop::collection::vec(any::<bool>(), grid.len()).prop_map(move |bits| CellMask::from_bools(&grid, &bits).unwrap())
}

fn product() -> UniformGrid {
    let (s, c) = grids();
    s.product(&c)
}

proptest! {
    #[test]
    fn projection_distributes_over_union(a in mask(&product()), b in mask(&product())) {
        let state = grids().0;
        let lhs = a.or(&b).unwrap().project(&state).unwrap();
        let rhs = a.project(&state).unwrap().or(&b.project(&state).unwrap()).unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn projection_matches_brute_force(a in mask(&product())) {
        let (state, control) = grids();
        let p = a.project(&state).unwrap();
        for s in 0..state.len() {
            let any = (0..control.len()).any(|c| a.get(s * control.len() + c));
            prop_assert_eq!(p.get(s), any);
        }
    }

    #[test]
    fn volume_is_monotone(a in mask(&product()), b in mask(&product())) {
        let union = a.or(&b).unwrap();
        prop_assert!(a.is_subset_of(&union).unwrap());
        prop_assert!(a.volume() <= union.volume());
        prop_assert!(a.and(&b).unwrap().volume() <= a.volume());
    }

    #[test]
    fn every_point_lands_in_one_cell(x in -2.0f64..=2.0) {
        let state = grids().0;
        let cell = state.locate(&[x]).unwrap();
        let (lo, hi) = state.cell_bounds(cell);
        prop_assert!(lo[0] <= x && x <= hi[0]);
        if x < hi[0] {
            prop_assert!(lo[0] <= x);
        }
    }
}
