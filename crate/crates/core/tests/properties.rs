use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use rnnctl::activation::make_tanh;
use rnnctl::controllability::{b_class_check, controllability_verdict, verify_certificate};
use rnnctl::reach::{grid_reach, Expansion, ReachOptions};
use rnnctl::steer2d::{ray_plan, simulate_ray, Form1Transformed};
use rnnctl::systems::RecurrentNet;

fn small_int_matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2i8..=2, rows * cols)
        .prop_map(move |v| DMatrix::from_iterator(rows, cols, v.into_iter().map(f64::from)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn verdict_ignores_column_order(b in small_int_matrix(4, 3), perm in Just([2usize, 0, 1])) {
        let mut shuffled = b.clone();
        for (c, p) in perm.iter().enumerate() {
            shuffled.set_column(c, &b.column(*p));
        }
        let r1 = b_class_check(&b, 0.0);
        let r2 = b_class_check(&shuffled, 0.0);
        prop_assert_eq!(r1, r2);
    }

    #[test]
    fn certificates_survive_row_permutation(
        a in prop::collection::vec(-2.0f64..2.0, 16),
        b in small_int_matrix(4, 2),
        seed in 0u64..1000,
    ) {
        let a = DMatrix::from_vec(4, 4, a);
        let net = RecurrentNet::new(a.clone(), b.clone(), make_tanh()).unwrap();
        let verdict = controllability_verdict(&net);
        let Some(certs) = verdict.certificates() else { return Ok(()) };
        let perm = [3usize, 1, 0, 2];
        let mut pa = DMatrix::zeros(4, 4);
        let mut pb = DMatrix::zeros(4, 2);
        for i in 0..4 {
            for j in 0..4 {
                pa[(perm[i], perm[j])] = a[(i, j)];
            }
            pb.set_row(perm[i], &b.row(i));
        }
        let pnet = RecurrentNet::new(pa, pb, make_tanh()).unwrap();
        for cert in certs {
            let moved = cert.permuted(&perm);
            prop_assert_eq!(moved.residual(&pnet.b), 0.0);
            let r = verify_certificate(&pnet, &moved, 500, 10.0, seed).unwrap();
            prop_assert!(r.all_passed());
        }
    }

    #[test]
    fn admissible_rays_stay_collinear(
        a in 0.2f64..3.0,
        b in -3.0f64..3.0,
        x0 in -2.0f64..2.0,
        y0 in -2.0f64..2.0,
    ) {
        let ft = Form1Transformed::new(a, b);
        let Ok(plan) = ray_plan(&ft, (x0, y0)) else { return Ok(()) };
        prop_assume!(plan.admissible);
        let sim = simulate_ray(&ft, &plan, 2.0, 1e-2).unwrap();
        let c = &sim.certificate;
        let start = (x0 * x0 + y0 * y0).sqrt();
        prop_assert!(c.collinearity_defect <= 1e-6 * start);
        prop_assert!(c.max_abs_v < 1.0);
        prop_assert!(c.final_norm < c.start_norm);
    }
}

#[test]
fn refining_the_grid_keeps_reached_regions() {
    let net = RecurrentNet::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
        DMatrix::from_column_slice(2, 1, &[1.0, 2.0]),
        make_tanh(),
    )
    .unwrap();
    let controls: Vec<DVector<f64>> = [-3.0, 0.0, 3.0].iter().map(|u| DVector::from_element(1, *u)).collect();
    let bounds = [-1.0, 1.0, -1.0, 1.0];
    for expansion in [Expansion::CellCenter, Expansion::Representative] {
        let options = ReachOptions { expansion, ..ReachOptions::default() };
        let coarse = grid_reach(&net, &DVector::zeros(2), bounds, 0.2, &controls, 0.25, &options).unwrap();
        let fine = grid_reach(&net, &DVector::zeros(2), bounds, 0.1, &controls, 0.25, &options).unwrap();
        for (i, j) in coarse.reached_cells() {
            // one coarse cell of slack in every direction
            let (cx, cy) = coarse.center(i, j);
            let near = fine.reached_cells().any(|(a, b)| {
                let (fx, fy) = fine.center(a, b);
                (fx - cx).abs() <= 0.3 + 1e-9 && (fy - cy).abs() <= 0.3 + 1e-9
            });
            assert!(near, "{expansion:?}: coarse cell ({i}, {j}) lost under refinement");
        }
    }
}
