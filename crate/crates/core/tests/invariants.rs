use std::sync::Arc;

use obstacle_bsde::engine::{BackwardEngine, LatticeEngine};
use obstacle_bsde::forward::{build_lattice, LatticeBox, MarkovLattice};
use obstacle_bsde::gbsde::solve_gbsde;
use obstacle_bsde::grid::TimeGrid;
use obstacle_bsde::model::{DiffusionSpec, DriverSpec, MeasureData, ScalarFn};
use obstacle_bsde::pde::{solve_obstacle_projected, SpaceTimeGrid};
use obstacle_bsde::rbsde::{
    decompose_obstacle, obstacle_increments, solve_rbsde_homographic, solve_rbsde_penalized, solve_rbsde_projected,
};
use proptest::prelude::*;

fn lattice(a: f64) -> MarkovLattice {
    let spec = DiffusionSpec::constant(vec![a], vec![0.0]).unwrap();
    let grid = TimeGrid::uniform(0.0, 1.0, 200).unwrap();
    build_lattice(&spec, &grid, &LatticeBox::centered(&[1.0], &[1.5], &[0.1]).unwrap()).unwrap()
}

fn put_obstacle(strike: f64) -> ScalarFn {
    // smoothed put payoff
    Arc::new(move |_, x| {
        let d = strike - x[0];
        0.5 * (d + (d * d + 0.01).sqrt())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn larger_data_gives_larger_solution(a in 0.05f64..0.5, rate in 0.0f64..1.0, lift in 0.0f64..0.5, push in 0.0f64..1.0) {
        let lat = lattice(a);
        let eng = LatticeEngine::new(&lat, &[1.0]).unwrap();
        let lo = DriverSpec::discounted(rate, Arc::new(|x| x[0].sin()));
        let hi = DriverSpec::discounted(rate, Arc::new(move |x| x[0].sin() + lift))
            .with_f(Arc::new(move |_, _, y, _| -rate * y + push), rate + push, Some(rate));
        let zero = eng.measure_increments(&MeasureData::zero()).unwrap();
        let mass = eng.measure_increments(&MeasureData::constant(push)).unwrap();
        let s1 = solve_gbsde(&eng, &lo, &zero).unwrap();
        let s2 = solve_gbsde(&eng, &hi, &zero).unwrap();
        let gp = DriverSpec::discounted(rate, Arc::new(|x| x[0].sin())).with_g(Arc::new(|_, _, _| 1.0), 1.0);
        let s3 = solve_gbsde(&eng, &gp, &mass).unwrap();
        for k in 0..s1.y.len() {
            for i in 0..s1.y[k].len() {
                if s1.law[k][i] > 0.0 {
                    prop_assert!(s1.y[k][i] <= s2.y[k][i] + 1e-12);
                    prop_assert!(s1.y[k][i] <= s3.y[k][i] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn reflected_solutions_sandwich(a in 0.05f64..0.5, rate in 0.0f64..0.3, strike in 0.8f64..1.2) {
        let lat = lattice(a);
        let eng = LatticeEngine::new(&lat, &[1.0]).unwrap();
        let spec = DiffusionSpec::constant(vec![a], vec![0.0]).unwrap();
        let h = put_obstacle(strike);
        let hh = h.clone();
        let driver = DriverSpec::discounted(rate, Arc::new(move |x| hh(1.0, x)));
        let ob = decompose_obstacle(h, &driver, &spec, lat.grid()).unwrap();
        let inc = obstacle_increments(&eng, &ob, &driver).unwrap();
        let refl = solve_rbsde_projected(&eng, &driver, &inc).unwrap();
        let pen = solve_rbsde_penalized(&eng, &driver, &inc, 16.0).unwrap();
        let hom = solve_rbsde_homographic(&eng, &driver, &inc, 16.0).unwrap();
        prop_assert!(pen.y0() <= refl.y0() + 1e-12);
        prop_assert!(hom.solution.y0() >= refl.y0() - 1e-12);
        for k in 0..refl.dk.len() {
            for i in 0..refl.dk[k].len() {
                if refl.law()[k][i] > 0.0 {
                    prop_assert!(refl.y()[k][i] >= refl.s[k][i] - 1e-12);
                    prop_assert!(refl.dk[k][i] >= -1e-14);
                    prop_assert!((0.0..=1.0 + 1e-12).contains(&hom.alpha[k][i]));
                }
            }
        }
    }

    #[test]
    fn projected_pde_is_complementary(a in 0.05f64..0.5, rate in 0.0f64..0.3, strike in 0.8f64..1.2) {
        let spec = DiffusionSpec::constant(vec![a], vec![0.0]).unwrap();
        let grid = SpaceTimeGrid::centered(TimeGrid::uniform(0.0, 1.0, 50).unwrap(), &[1.0], &[1.5], 0.05).unwrap();
        let h = put_obstacle(strike);
        let hh = h.clone();
        let driver = DriverSpec::discounted(rate, Arc::new(move |x| hh(1.0, x)));
        let sol = solve_obstacle_projected(&grid, &spec, &driver, &h).unwrap();
        let c = sol.complementarity().unwrap();
        prop_assert!(c.min_excess >= -1e-9);
        prop_assert!(c.min_reaction >= -1e-12);
        prop_assert!(c.pairing.abs() <= 1e-6 * sol.sup_norm());
    }
}
