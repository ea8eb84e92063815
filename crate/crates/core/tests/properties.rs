//! Property tests for the structural invariants.

use proptest::prelude::*;
use s6v_core::lattice::{collapse, compare, shift, OccupancyWindow, WindowOrder};
use s6v_core::measures::{LambdaKernel, QnbParams};
use s6v_core::qseries::{build_l_tensor, ModelParams};

fn valid_params() -> impl Strategy<Value = ModelParams> {
    // both stochasticity regimes, capacities up to 3
    let forward = (1.2f64..6.0, 0.05f64..0.95, 1u32..=3, 1u32..=3).prop_map(|(q, c, i, j)| {
        let alpha = -c * q.powi(-((i + j) as i32) + 1);
        ModelParams::new(q, alpha, i, j).unwrap()
    });
    let backward = (0.15f64..0.9, 1.1f64..20.0, 1u32..=3, 1u32..=3).prop_map(|(q, c, i, j)| {
        let alpha = -c * q.powi(-((i + j) as i32) + 1);
        ModelParams::new(q, alpha, i, j).unwrap()
    });
    prop_oneof![forward, backward]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weight_tensor_rows_are_stochastic_and_conserving(params in valid_params()) {
        let t = build_l_tensor(&params).unwrap();
        prop_assert!(t.max_row_defect < 1e-10, "raw row defect {}", t.max_row_defect);
        for i1 in 0..=params.cap_i {
            for j1 in 0..=params.cap_j {
                let sum = t.row_sum(i1, j1);
                prop_assert!((sum - 1.0).abs() < 1e-10);
                for i2 in 0..=params.cap_i {
                    for j2 in 0..=params.cap_j {
                        let w = t.get(i1, j1, i2, j2);
                        prop_assert!(w >= 0.0);
                        if i1 + j1 != i2 + j2 {
                            prop_assert!(w == 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn collapse_commutes_with_block_shifts(
        bits in proptest::collection::vec(0u8..=1, 12),
        block in 1u32..=4,
        k in -3i64..=3,
        base in -2i64..=2,
    ) {
        let n = i64::from(block);
        let len = (bits.len() as i64 / n) * n;
        let values = bits[..len as usize].to_vec();
        prop_assume!(!values.is_empty());
        let w = OccupancyWindow::new(base * n, 1, values).unwrap();
        let lhs = collapse(&shift(&w, n * k), block).unwrap();
        let rhs = shift(&collapse(&w, block).unwrap(), k);
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn window_order_is_a_partial_order(
        a in proptest::collection::vec(0u8..=1, 10),
        b in proptest::collection::vec(0u8..=1, 10),
        c in proptest::collection::vec(0u8..=1, 10),
    ) {
        let wa = OccupancyWindow::new(0, 1, a).unwrap();
        let wb = OccupancyWindow::new(0, 1, b).unwrap();
        let wc = OccupancyWindow::new(0, 1, c).unwrap();
        // reflexivity
        prop_assert_eq!(compare(&wa, &wa).unwrap(), WindowOrder::Equal);
        // antisymmetry
        if compare(&wa, &wb).unwrap() == WindowOrder::Greater {
            prop_assert_eq!(compare(&wb, &wa).unwrap(), WindowOrder::Less);
        }
        // transitivity on comparable triples
        if compare(&wa, &wb).unwrap() == WindowOrder::Greater
            && compare(&wb, &wc).unwrap() == WindowOrder::Greater
        {
            prop_assert_eq!(compare(&wa, &wc).unwrap(), WindowOrder::Greater);
        }
    }

    #[test]
    fn lambda_rows_are_supported_probability_vectors(
        n in 1u32..=6,
        q in 0.2f64..4.0,
        reversed in any::<bool>(),
    ) {
        prop_assume!((q - 1.0).abs() > 1e-6);
        let kernel = if reversed {
            LambdaKernel::reversed(n, q)
        } else {
            LambdaKernel::forward(n, q)
        };
        for v in 0..=n {
            let row = kernel.row(v).unwrap();
            let total: f64 = row.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            for (mask, &w) in row.iter().enumerate() {
                if (mask as u32).count_ones() == v {
                    prop_assert!(w > 0.0);
                } else {
                    prop_assert!(w == 0.0);
                }
            }
        }
    }

    #[test]
    fn qnb_masses_sum_to_one(
        k in 1u32..=6,
        gamma in 0.01f64..5.0,
        q in prop_oneof![0.3f64..0.9, 1.2f64..4.0],
    ) {
        let p = -q.powi(k as i32) * gamma;
        let params = QnbParams::from_k(k, p, q).unwrap();
        let total: f64 = params.density().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-10);
        prop_assert!(params.pmf(k + 1) == 0.0);
    }
}
