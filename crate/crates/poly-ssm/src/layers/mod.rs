//! Sequence layers with exact forward semantics: time-invariant scans,
//! selective scans in their original and simplified forms, causal
//! attention with and without softmax, and the full gated block. Every
//! forward here is a pure function of (weights, input); the trainer uses
//! matching hand-written reverse passes kept alongside each kernel.

pub(crate) mod attention;
mod io;
pub(crate) mod lti;
pub(crate) mod mamba;
mod pe;
pub(crate) mod s6;

pub use attention::{
    causal_linear_attention_forward, softmax_attention_forward, AttentionWeights,
};
pub use io::{layer_from_json, layer_to_json, LayerWeights};
pub use lti::{lti_ssm_forward, LtiWeights};
pub use mamba::{mamba_block_forward, Linear, MambaBlockWeights};
pub use pe::LearnablePE;
pub use s6::{p1_eval, p2_eval, selective_forward, selective_step, S6Variant, S6Weights, ScanState};

pub(crate) use attention::{
    linear_attention_backward, linear_attention_scan, softmax_attention_backward,
    softmax_attention_scan,
};
pub(crate) use lti::{lti_backward, lti_scan};
pub(crate) use mamba::{mamba_backward, mamba_scan};
pub(crate) use s6::{s6_scan, s6_scan_backward};

use crate::numerics::Matrix;

/// Number of trainable scalars in a weight container, biases and encoding
/// tables included.
pub trait ParameterCount {
    fn count_parameters(&self) -> usize;
}

impl ParameterCount for S6Weights {
    fn count_parameters(&self) -> usize {
        count(&self.s_b) + count(&self.s_c) + count(&self.s_delta) + count(&self.a)
    }
}

impl ParameterCount for AttentionWeights {
    fn count_parameters(&self) -> usize {
        count(&self.w_q) + count(&self.w_k) + count(&self.w_v)
    }
}

impl ParameterCount for Linear {
    fn count_parameters(&self) -> usize {
        count(&self.w) + self.b.len()
    }
}

impl ParameterCount for LtiWeights {
    fn count_parameters(&self) -> usize {
        3 * self.state_size()
    }
}

impl ParameterCount for LearnablePE {
    fn count_parameters(&self) -> usize {
        count(&self.pe)
    }
}

impl ParameterCount for MambaBlockWeights {
    fn count_parameters(&self) -> usize {
        self.linear_in.count_parameters()
            + self.gate_linear.count_parameters()
            + self.linear_out.count_parameters()
            + self.s6.count_parameters()
            + if self.use_conv {
                count(&self.conv_kernel)
            } else {
                0
            }
    }
}

fn count(m: &Matrix) -> usize {
    m.rows() * m.cols()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::proptest;

    #[test]
    fn parameter_counts_by_shape_arithmetic() {
        let s6 = S6Weights::new(
            Matrix::zeros(1, 1),
            Matrix::zeros(1, 1),
            Matrix::zeros(1, 1),
            Matrix::zeros(1, 1),
        )
        .unwrap();
        assert_eq!(s6.count_parameters(), 4);
        let att = AttentionWeights::new(
            Matrix::zeros(2, 2),
            Matrix::zeros(2, 2),
            Matrix::zeros(2, 2),
            1.0,
        )
        .unwrap();
        assert_eq!(att.count_parameters(), 12);
        // Disabled conv contributes nothing; enabling it adds D*2.
        let mut block = MambaBlockWeights::identity(3);
        let base = block.count_parameters();
        block.use_conv = true;
        assert_eq!(block.count_parameters(), base + 6);
    }

    fn random_matrix(rng: &mut Rng, r: usize, c: usize, scale: f64) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.range(-scale, scale))
    }

    fn random_s6(rng: &mut Rng, d: usize, n: usize, scale: f64) -> S6Weights {
        S6Weights::new(
            random_matrix(rng, n, d, scale),
            random_matrix(rng, n, d, scale),
            random_matrix(rng, 1, d, scale),
            random_matrix(rng, d, n, scale),
        )
        .unwrap()
    }

    // Perturbing position t must leave all earlier outputs bit-identical.
    proptest! {
        #[test]
        fn forwards_are_causal(seed in 0u64..1000, t in 1usize..6) {
            let mut rng = Rng::new(seed);
            let d = 2;
            let l = 6;
            let x = random_matrix(&mut rng, d, l, 1.0);
            let mut x2 = x.clone();
            x2.set(0, t, x2.get(0, t) + 0.731);
            x2.set(1, t, x2.get(1, t) - 0.144);

            let s6 = random_s6(&mut rng, d, 2, 0.6);
            for variant in [
                S6Variant::Original,
                S6Variant::SimplifiedNonPoly,
                S6Variant::linear_poly(),
            ] {
                let a = selective_forward(&s6, &variant, &x).unwrap();
                let b = selective_forward(&s6, &variant, &x2).unwrap();
                for tt in 0..t {
                    for dd in 0..d {
                        assert_eq!(a.get(dd, tt).to_bits(), b.get(dd, tt).to_bits());
                    }
                }
            }

            let att = AttentionWeights::new(
                random_matrix(&mut rng, d, d, 0.8),
                random_matrix(&mut rng, d, d, 0.8),
                random_matrix(&mut rng, d, d, 0.8),
                1.0,
            ).unwrap();
            let pe = LearnablePE::new(random_matrix(&mut rng, l, d, 0.5));
            let a = causal_linear_attention_forward(&att, &x).unwrap();
            let b = causal_linear_attention_forward(&att, &x2).unwrap();
            let sa = softmax_attention_forward(&att, &x, &pe).unwrap();
            let sb = softmax_attention_forward(&att, &x2, &pe).unwrap();
            for tt in 0..t {
                for dd in 0..d {
                    assert_eq!(a.get(dd, tt).to_bits(), b.get(dd, tt).to_bits());
                    assert_eq!(sa.get(dd, tt).to_bits(), sb.get(dd, tt).to_bits());
                }
            }

            let block = {
                let mut b = MambaBlockWeights::identity(d);
                b.linear_in = Linear::new(random_matrix(&mut rng, d, d, 0.5), vec![0.1; d]).unwrap();
                b.gate_linear = Linear::new(random_matrix(&mut rng, d, d, 0.5), vec![0.2; d]).unwrap();
                b.linear_out = Linear::new(random_matrix(&mut rng, d, d, 0.5), vec![0.0; d]).unwrap();
                b.s6 = random_s6(&mut rng, d, 1, 0.4);
                b.use_silu = true;
                b.use_conv = true;
                b.conv_kernel = random_matrix(&mut rng, d, 2, 0.9);
                b
            };
            let a = mamba_block_forward(&block, &x).unwrap();
            let b = mamba_block_forward(&block, &x2).unwrap();
            for tt in 0..t {
                for dd in 0..d {
                    assert_eq!(a.get(dd, tt).to_bits(), b.get(dd, tt).to_bits());
                }
            }
        }

        // Stacking two independent size-1 state systems block-diagonally
        // gives the sum of their outputs: states evolve independently and
        // the readout is a sum over state coordinates.
        #[test]
        fn selective_state_coordinates_are_additive(seed in 0u64..1000) {
            let mut rng = Rng::new(seed);
            let d = 3;
            let s_delta = random_matrix(&mut rng, 1, d, 0.5);
            let sys1 = S6Weights::new(
                random_matrix(&mut rng, 1, d, 0.7),
                random_matrix(&mut rng, 1, d, 0.7),
                s_delta.clone(),
                random_matrix(&mut rng, d, 1, 0.7),
            ).unwrap();
            let sys2 = S6Weights::new(
                random_matrix(&mut rng, 1, d, 0.7),
                random_matrix(&mut rng, 1, d, 0.7),
                s_delta.clone(),
                random_matrix(&mut rng, d, 1, 0.7),
            ).unwrap();
            let stacked = S6Weights::new(
                Matrix::from_fn(2, d, |n, c| if n == 0 { sys1.s_b.get(0, c) } else { sys2.s_b.get(0, c) }),
                Matrix::from_fn(2, d, |n, c| if n == 0 { sys1.s_c.get(0, c) } else { sys2.s_c.get(0, c) }),
                s_delta,
                Matrix::from_fn(d, 2, |r, n| if n == 0 { sys1.a.get(r, 0) } else { sys2.a.get(r, 0) }),
            ).unwrap();
            let x = random_matrix(&mut rng, d, 5, 0.8);
            for variant in [S6Variant::Original, S6Variant::SimplifiedNonPoly, S6Variant::linear_poly()] {
                let y1 = selective_forward(&sys1, &variant, &x).unwrap();
                let y2 = selective_forward(&sys2, &variant, &x).unwrap();
                let y = selective_forward(&stacked, &variant, &x).unwrap();
                let sum = y1.add(&y2).unwrap();
                assert!(y.max_abs_diff(&sum).unwrap() < 1e-12, "variant {variant:?}");
            }
        }
    }

    #[test]
    fn taylor_truncations_approach_the_smooth_variant() {
        // At D=1 the 1/sqrt(D) normalization disappears, so raising both
        // truncation degrees must shrink the gap to the smooth model on
        // inputs bounded by 0.5.
        let mut rng = Rng::new(42);
        let mut worst = [0.0f64; 3];
        for _ in 0..50 {
            let w = random_s6(&mut rng, 1, 2, 0.8);
            let x = random_matrix(&mut rng, 1, 6, 0.5);
            let smooth = selective_forward(&w, &S6Variant::SimplifiedNonPoly, &x).unwrap();
            for (slot, deg) in [2u32, 4, 6].iter().enumerate() {
                let v = S6Variant::SimplifiedPoly {
                    p1_degree: *deg,
                    p2_degree: *deg,
                    linear_pa: false,
                };
                let approx = selective_forward(&w, &v, &x).unwrap();
                worst[slot] = worst[slot].max(approx.max_abs_diff(&smooth).unwrap());
            }
        }
        assert!(
            worst[0] > worst[1] && worst[1] > worst[2],
            "gaps did not shrink: {worst:?}"
        );
        assert!(worst[2] < 1e-2, "degree-6 gap too large: {}", worst[2]);
    }

    #[test]
    fn scalar_linear_attention_matches_a_selective_configuration() {
        // Scalar head (wq, wk, wv, scale 1) against the affine-transition
        // scan with s_delta = 0, a = 1, s_b = wk wv, s_c = wq: both compute
        // y_t = wq wk wv x_t sum_{j<=t} x_j^2.
        let mut rng = Rng::new(7);
        for _ in 0..100 {
            let (wq, wk, wv) = (
                rng.range(-2.0, 2.0),
                rng.range(-2.0, 2.0),
                rng.range(-2.0, 2.0),
            );
            let att = AttentionWeights::new(
                Matrix::filled(1, 1, wq),
                Matrix::filled(1, 1, wk),
                Matrix::filled(1, 1, wv),
                1.0,
            )
            .unwrap();
            let s6 = S6Weights::new(
                Matrix::filled(1, 1, wk * wv),
                Matrix::filled(1, 1, wq),
                Matrix::zeros(1, 1),
                Matrix::filled(1, 1, 1.0),
            )
            .unwrap();
            let l = 1 + rng.below(8) as usize;
            let x = random_matrix(&mut rng, 1, l, 1.5);
            let ya = causal_linear_attention_forward(&att, &x).unwrap();
            let ys = selective_forward(&s6, &S6Variant::linear_poly(), &x).unwrap();
            let scale = ya.max_abs().max(1.0);
            assert!(ya.max_abs_diff(&ys).unwrap() / scale < 1e-12);
        }
    }
}
