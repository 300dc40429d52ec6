use heatnet_core::linalg::BorderedBidiagonal;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Blocks of the given sizes; the last row of every block is a dense column.
fn matrix_strategy() -> impl Strategy<Value = (BorderedBidiagonal, Vec<f64>)> {
    prop::collection::vec(1usize..5, 1..5).prop_flat_map(|blocks| {
        let n: usize = blocks.iter().sum();
        let m = blocks.len();
        (
            prop::collection::vec(1.0f64..3.0, n),
            prop::collection::vec(-1.0f64..1.0, n),
            prop::collection::vec(-0.3f64..0.3, n * m),
            prop::collection::vec(-10.0f64..10.0, n),
        )
            .prop_map(move |(diag, mut sub, mut border, b)| {
                let mut special = Vec::new();
                let mut start = 0;
                for &len in &blocks {
                    sub[start] = 0.0;
                    special.push(start + len - 1);
                    start += len;
                }
                for (k, &c) in special.iter().enumerate() {
                    border[k * n + c] = 0.0;
                }
                (BorderedBidiagonal { diag, sub, special, border }, b)
            })
    })
}

proptest! {
    #[test]
    fn solves_agree_with_dense_lu((m, b) in matrix_strategy()) {
        let n = m.dim();
        let dense = DMatrix::from_row_slice(n, n, &m.to_dense());
        let x_ref = dense.clone().lu().solve(&DVector::from_vec(b.clone()));
        let xt_ref = dense.transpose().lu().solve(&DVector::from_vec(b.clone()));
        let f = m.factor();
        match (f, x_ref, xt_ref) {
            (Some(f), Some(x_ref), Some(xt_ref)) => {
                let x = f.solve(&b);
                let xt = f.solve_transpose(&b);
                let scale = 1.0 + x_ref.amax();
                for i in 0..n {
                    prop_assert!((x[i] - x_ref[i]).abs() <= 1e-9 * scale);
                    prop_assert!((xt[i] - xt_ref[i]).abs() <= 1e-9 * (1.0 + xt_ref.amax()));
                }
            }
            // singular capacitance matrices are possible but rare; both sides must agree
            (None, _, _) => {}
            (Some(_), _, _) => prop_assert!(false, "dense solve failed where the structured one did not"),
        }
    }

    #[test]
    fn mul_vec_matches_dense((m, x) in matrix_strategy()) {
        let n = m.dim();
        let dense = DMatrix::from_row_slice(n, n, &m.to_dense());
        let want = &dense * DVector::from_vec(x.clone());
        let got = m.mul_vec(&x);
        for i in 0..n {
            prop_assert!((got[i] - want[i]).abs() <= 1e-12 * (1.0 + want.amax()));
        }
    }
}
