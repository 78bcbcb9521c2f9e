//! Deterministic numerics: dense matrices, elementwise nonlinearities,
//! counter-based randomness, and the central-difference gradient gate.

mod gradcheck;
mod matrix;
mod rng;

pub use gradcheck::{grad_check, ParamTensor};
pub use matrix::{elementwise, sigmoid, silu, silu_grad, softplus, Elementwise, Matrix};
pub use rng::Rng;

#[cfg(test)]
mod tests {
    use super::{Matrix, Rng};
    use proptest::prelude::*;

    fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.range(-1.0, 1.0))
    }

    proptest! {
        #[test]
        fn matmul_associativity_on_random_chains(seed in 0u64..500) {
            let mut rng = Rng::new(seed);
            let a = random_matrix(&mut rng, 4, 4);
            let b = random_matrix(&mut rng, 4, 4);
            let c = random_matrix(&mut rng, 4, 4);
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let scale = left.max_abs().max(1.0);
            prop_assert!(left.max_abs_diff(&right).unwrap() / scale <= 1e-9);
        }

        #[test]
        fn rng_stream_is_reproducible(seed in 0u64..1000) {
            let xs: Vec<u64> = {
                let mut r = Rng::new(seed);
                (0..32).map(|_| r.next_u64()).collect()
            };
            let ys: Vec<u64> = {
                let mut r = Rng::new(seed);
                (0..32).map(|_| r.next_u64()).collect()
            };
            prop_assert_eq!(xs, ys);
        }
    }
}
