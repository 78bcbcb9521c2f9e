//! Exact symbolic unrolling of scalar layers into [`MultiPoly`] values.
//! Each sequence position becomes a variable, each output position a
//! polynomial, and the degree statistics of those polynomials are the
//! expressivity measurements everything downstream rests on.

use crate::error::{Error, Result};
use crate::layers::{AttentionWeights, S6Weights};
use crate::polyalg::MultiPoly;

/// Unrolls one scalar selective channel (D = N = 1, affine transition)
/// over L positions. Entry t-1 of the result is the exact polynomial
/// computed at position t:
///
/// ```text
/// h_t = (s_d x_t + a) h_{t-1} + (s_b x_t) x_t,   y_t = (s_c x_t) h_t
/// ```
pub fn extract_s6_channel_poly(w: &S6Weights, l: usize) -> Result<Vec<MultiPoly>> {
    let (d, n) = w.dims();
    if d != 1 || n != 1 {
        return Err(Error::Unsupported {
            reason: format!("symbolic unrolling needs a scalar channel, got D={d} N={n}"),
        });
    }
    let (s_b, s_c) = (w.s_b.get(0, 0), w.s_c.get(0, 0));
    let (s_d, a) = (w.s_delta.get(0, 0), w.a.get(0, 0));

    let mut h = MultiPoly::zero(l);
    let mut out = Vec::with_capacity(l);
    for t in 1..=l as u32 {
        let x_t = MultiPoly::var(t, l);
        let abar = x_t.scale(s_d).add(&MultiPoly::constant(a, l))?;
        let inject = x_t.mul(&x_t)?.scale(s_b);
        h = abar.mul(&h)?.add(&inject)?;
        out.push(x_t.scale(s_c).mul(&h)?);
    }
    Ok(out)
}

/// The polynomial computed by the last position of a scalar causal linear
/// attention head with scale 1: y_L = w_q w_k w_v sum_{j<=L} x_j^2 x_L.
pub fn extract_attention_poly(w: &AttentionWeights, l: usize) -> Result<MultiPoly> {
    if w.dim() != 1 {
        return Err(Error::Unsupported {
            reason: format!("symbolic attention needs a scalar head, got D={}", w.dim()),
        });
    }
    if w.scale != 1.0 {
        return Err(Error::Unsupported {
            reason: format!("symbolic attention is stated at scale 1, got {}", w.scale),
        });
    }
    if l == 0 {
        return Ok(MultiPoly::zero(0));
    }
    let coeff = w.w_q.get(0, 0) * w.w_k.get(0, 0) * w.w_v.get(0, 0);
    let x_l = MultiPoly::var(l as u32, l);
    let mut sum_sq = MultiPoly::zero(l);
    for j in 1..=l as u32 {
        let x_j = MultiPoly::var(j, l);
        sum_sq = sum_sq.add(&x_j.mul(&x_j)?)?;
    }
    sum_sq.mul(&x_l).map(|p| p.scale(coeff))
}

/// The polynomial computed by the last position of a scalar time-invariant
/// scan: y_L = sum_j (c abar^(L-j) bbar) x_j, degree 1.
pub fn extract_lti_ssm_poly(abar: f64, bbar: f64, c: f64, l: usize) -> MultiPoly {
    let mut p = MultiPoly::zero(l);
    let mut kernel = c * bbar; // coefficient of x_L, then x_{L-1}, ...
    for j in (1..=l as u32).rev() {
        p = p
            .add(&MultiPoly::var(j, l).scale(kernel))
            .expect("same variable count by construction");
        kernel *= abar;
    }
    p
}

/// Applies a scalar causal linear attention head symbolically: position t
/// of the input is the polynomial `position_polys[t-1]`, and the output at
/// t is scale * w_q w_k w_v * p_t * sum_{j<=t} p_j^2, computed with a
/// running prefix sum of the squares.
pub fn attention_layer_symbolic(
    position_polys: &[MultiPoly],
    w: &AttentionWeights,
) -> Result<Vec<MultiPoly>> {
    if w.dim() != 1 {
        return Err(Error::Unsupported {
            reason: format!("symbolic attention needs a scalar head, got D={}", w.dim()),
        });
    }
    let coeff = w.scale * w.w_q.get(0, 0) * w.w_k.get(0, 0) * w.w_v.get(0, 0);
    let n_vars = position_polys.first().map_or(0, |p| p.n_vars());
    let mut prefix = MultiPoly::zero(n_vars);
    let mut out = Vec::with_capacity(position_polys.len());
    for p_t in position_polys {
        prefix = prefix.add(&p_t.mul(p_t)?)?;
        out.push(p_t.mul(&prefix)?.scale(coeff));
    }
    Ok(out)
}
