//! Tagged JSON serialization for layer weights. Floats ride through
//! serde_json's shortest round-trippable decimal form, so save followed by
//! load reproduces every entry bit for bit.

use crate::error::{Error, Result};
use crate::layers::{
    AttentionWeights, LearnablePE, LtiWeights, MambaBlockWeights, S6Variant, S6Weights,
};
use serde::{Deserialize, Serialize};

/// Any storable layer, tagged so a file identifies itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer_type", rename_all = "snake_case")]
pub enum LayerWeights {
    S6 {
        weights: S6Weights,
        variant: S6Variant,
    },
    Attention {
        weights: AttentionWeights,
    },
    Lti {
        weights: LtiWeights,
    },
    MambaBlock {
        weights: Box<MambaBlockWeights>,
    },
    PositionalEncoding {
        weights: LearnablePE,
    },
}

pub fn layer_to_json(layer: &LayerWeights) -> Result<String> {
    serde_json::to_string_pretty(layer)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Error::InvalidInput {
            reason: format!("weight serialization failed: {e}"),
        })
}

pub fn layer_from_json(text: &str) -> Result<LayerWeights> {
    let layer: LayerWeights = serde_json::from_str(text).map_err(|e| Error::InvalidInput {
        reason: format!("weight deserialization failed: {e}"),
    })?;
    layer.validate()?;
    Ok(layer)
}

impl LayerWeights {
    /// Re-runs the constructors' cross-field shape checks; individual
    /// matrices already validate themselves during deserialization.
    pub fn validate(&self) -> Result<()> {
        match self {
            LayerWeights::S6 { weights, variant } => {
                let w = weights.clone();
                S6Weights::new(w.s_b, w.s_c, w.s_delta, w.a)?;
                variant.validate()
            }
            LayerWeights::Attention { weights } => {
                let w = weights.clone();
                AttentionWeights::new(w.w_q, w.w_k, w.w_v, w.scale).map(|_| ())
            }
            LayerWeights::Lti { weights } => {
                let w = weights.clone();
                LtiWeights::new(w.abar, w.bbar, w.c).map(|_| ())
            }
            LayerWeights::MambaBlock { weights } => {
                let w = (**weights).clone();
                MambaBlockWeights::new(
                    w.linear_in,
                    w.conv_kernel,
                    w.gate_linear,
                    w.linear_out,
                    w.s6,
                    w.variant,
                    w.use_silu,
                    w.use_conv,
                    w.use_residual,
                )
                .map(|_| ())
            }
            LayerWeights::PositionalEncoding { .. } => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Matrix, Rng};

    #[test]
    fn s6_round_trip_is_bit_exact() {
        let mut rng = Rng::new(11);
        let mut rand_mat = |r: usize, c: usize| {
            Matrix::from_fn(r, c, |_, _| rng.range(-1.0, 1.0))
        };
        let w = S6Weights::new(
            rand_mat(3, 2),
            rand_mat(3, 2),
            rand_mat(1, 2),
            rand_mat(2, 3),
        )
        .unwrap();
        let layer = LayerWeights::S6 {
            weights: w,
            variant: S6Variant::SimplifiedPoly {
                p1_degree: 3,
                p2_degree: 4,
                linear_pa: false,
            },
        };
        let json = layer_to_json(&layer).unwrap();
        let back = layer_from_json(&json).unwrap();
        match (&layer, &back) {
            (
                LayerWeights::S6 { weights: a, variant: va },
                LayerWeights::S6 { weights: b, variant: vb },
            ) => {
                assert_eq!(va, vb);
                for (x, y) in a.s_b.data().iter().zip(b.s_b.data()) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
                for (x, y) in a.a.data().iter().zip(b.a.data()) {
                    assert_eq!(x.to_bits(), y.to_bits());
                }
            }
            _ => panic!("tag changed across round trip"),
        }
    }

    #[test]
    fn mamba_block_round_trip_preserves_flags() {
        let block = MambaBlockWeights::identity(2);
        let layer = LayerWeights::MambaBlock {
            weights: Box::new(block),
        };
        let json = layer_to_json(&layer).unwrap();
        assert!(json.contains("\"layer_type\": \"mamba_block\""));
        assert_eq!(layer_from_json(&json).unwrap(), layer);
    }

    #[test]
    fn corrupt_payload_is_reported() {
        assert!(layer_from_json("{\"layer_type\": \"s6\"}").is_err());
        // A non-finite entry must not slip in through the text form.
        let inf = r#"{"layer_type":"lti","weights":{"abar":[1e999],"bbar":[1.0],"c":[1.0]}}"#;
        assert!(layer_from_json(inf).is_err());
        // Hand-edited length mismatch is caught by the validation pass.
        let skew = r#"{"layer_type":"lti","weights":{"abar":[0.5],"bbar":[1.0,2.0],"c":[1.0]}}"#;
        assert!(layer_from_json(skew).is_err());
    }
}
