//! Linearity and maximum-principle properties of the membrane solver.

use phaselock::membrane::{relative_residual, solve_deformation, MembraneGeometry, PressureMap};
use proptest::prelude::*;

#[test]
fn zero_load_gives_zero_field() {
    let geom = MembraneGeometry::new(5e-3, 5e-3, 10.0, 100e-6, 21, 21).unwrap();
    let field = solve_deformation(&geom, &PressureMap::zeros(geom.shape())).unwrap();
    assert_eq!(field.max_abs(), 0.0);
}

fn small_geom() -> MembraneGeometry {
    MembraneGeometry::new(4e-3, 3e-3, 20.0, 100e-6, 17, 13).unwrap()
}

fn pressure(values: Vec<f64>) -> PressureMap {
    let mut p = PressureMap::zeros(small_geom().shape());
    p.values = values;
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn solution_is_linear_in_the_load(
        p1 in prop::collection::vec(0.0f64..100.0, 17 * 13),
        p2 in prop::collection::vec(0.0f64..100.0, 17 * 13),
        a in 0.0f64..3.0,
        b in 0.0f64..3.0,
    ) {
        let geom = small_geom();
        let w1 = solve_deformation(&geom, &pressure(p1.clone())).unwrap();
        let w2 = solve_deformation(&geom, &pressure(p2.clone())).unwrap();
        let mixed: Vec<f64> = p1.iter().zip(&p2).map(|(x, y)| a * x + b * y).collect();
        let w = solve_deformation(&geom, &pressure(mixed)).unwrap();
        let scale = w.max_abs().max(1e-30);
        for k in 0..w.values.len() {
            let want = a * w1.values[k] + b * w2.values[k];
            prop_assert!((w.values[k] - want).abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn non_negative_load_gives_bounded_non_negative_field(
        p in prop::collection::vec(0.0f64..100.0, 17 * 13),
    ) {
        let geom = small_geom();
        let load = pressure(p.clone());
        let w = solve_deformation(&geom, &load).unwrap();
        prop_assert!(relative_residual(&geom, &load, &w) < 1e-9);
        let shape = geom.shape();
        // the uniform load at the peak value bounds the response from above
        let pmax = p.iter().copied().fold(0.0, f64::max);
        let upper = solve_deformation(&geom, &PressureMap::uniform(shape, pmax)).unwrap();
        let tol = 1e-9 * upper.max_abs().max(1e-30);
        for j in 0..shape.ny {
            for i in 0..shape.nx {
                let v = w.at(i, j);
                if shape.is_boundary(i, j) {
                    prop_assert_eq!(v, 0.0);
                } else {
                    prop_assert!(v >= -tol);
                    prop_assert!(v <= upper.at(i, j) + tol);
                }
            }
        }
    }
}
