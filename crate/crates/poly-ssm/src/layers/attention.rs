//! Causal single-head attention in two flavors. The linear form drops the
//! softmax and is a polynomial map of fixed degree 3 in the inputs, which
//! is what makes it directly comparable to the selective scan; the softmax
//! form is the usual baseline.

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use serde::{Deserialize, Serialize};

/// Single-head projection weights, each D x D, plus the score scale
/// (conventionally 1/sqrt(D), stored explicitly so constructions can pin
/// it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionWeights {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub scale: f64,
}

impl AttentionWeights {
    pub fn new(w_q: Matrix, w_k: Matrix, w_v: Matrix, scale: f64) -> Result<AttentionWeights> {
        let d = w_q.rows();
        for (name, m) in [("w_q", &w_q), ("w_k", &w_k), ("w_v", &w_v)] {
            if m.shape() != (d, d) {
                return Err(Error::ShapeMismatch {
                    op: "AttentionWeights",
                    lhs: (d, d),
                    rhs: m.shape(),
                });
            }
            let _ = name;
        }
        if !scale.is_finite() {
            return Err(Error::NonFinite {
                context: "attention scale".to_string(),
            });
        }
        Ok(AttentionWeights { w_q, w_k, w_v, scale })
    }

    pub fn dim(&self) -> usize {
        self.w_q.rows()
    }
}

/// Everything the backward passes need.
pub(crate) struct AttentionCache {
    pub x: Matrix,
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
    /// Row t holds the attention row for position t: raw scaled scores for
    /// the linear form, softmax weights for the softmax form; entries
    /// j > t are zero.
    pub att: Matrix,
}

pub(crate) struct AttentionGrads {
    pub d_w_q: Matrix,
    pub d_w_k: Matrix,
    pub d_w_v: Matrix,
    pub d_x: Matrix,
}

fn check_input(w: &AttentionWeights, x: &Matrix, op: &'static str) -> Result<()> {
    if x.rows() != w.dim() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: (w.dim(), 0),
            rhs: x.shape(),
        });
    }
    Ok(())
}

fn dot_col(a: &Matrix, i: usize, b: &Matrix, j: usize) -> f64 {
    (0..a.rows()).map(|d| a.get(d, i) * b.get(d, j)).sum()
}

/// y_t = scale * sum_{j <= t} (q_t . k_j) v_j. `x` is D x L.
pub(crate) fn linear_attention_scan(
    w: &AttentionWeights,
    x: &Matrix,
    want_cache: bool,
) -> Result<(Matrix, Option<AttentionCache>)> {
    check_input(w, x, "linear_attention input")?;
    let (d_ch, l) = x.shape();
    let q = w.w_q.matmul(x)?;
    let k = w.w_k.matmul(x)?;
    let v = w.w_v.matmul(x)?;
    let mut y = Matrix::zeros(d_ch, l);
    let mut att = want_cache.then(|| Matrix::zeros(l, l));
    for t in 0..l {
        for j in 0..=t {
            let s = w.scale * dot_col(&q, t, &k, j);
            for d in 0..d_ch {
                y.set(d, t, y.get(d, t) + s * v.get(d, j));
            }
            if let Some(a) = att.as_mut() {
                a.set(t, j, s);
            }
        }
    }
    Ok((
        y,
        att.map(|att| AttentionCache {
            x: x.clone(),
            q,
            k,
            v,
            att,
        }),
    ))
}

/// y_t = sum_{j <= t} softmax_j(scale * q_t . k_j) v_j. `x` is D x L.
pub(crate) fn softmax_attention_scan(
    w: &AttentionWeights,
    x: &Matrix,
    want_cache: bool,
) -> Result<(Matrix, Option<AttentionCache>)> {
    check_input(w, x, "softmax_attention input")?;
    let (d_ch, l) = x.shape();
    let q = w.w_q.matmul(x)?;
    let k = w.w_k.matmul(x)?;
    let v = w.w_v.matmul(x)?;
    let mut y = Matrix::zeros(d_ch, l);
    let mut att = want_cache.then(|| Matrix::zeros(l, l));
    let mut row = vec![0.0f64; l];
    for t in 0..l {
        let mut max_s = f64::NEG_INFINITY;
        for (j, slot) in row.iter_mut().enumerate().take(t + 1) {
            *slot = w.scale * dot_col(&q, t, &k, j);
            max_s = max_s.max(*slot);
        }
        let mut norm = 0.0;
        for slot in row.iter_mut().take(t + 1) {
            *slot = (*slot - max_s).exp();
            norm += *slot;
        }
        for (j, slot) in row.iter().enumerate().take(t + 1) {
            let a_tj = slot / norm;
            for d in 0..d_ch {
                y.set(d, t, y.get(d, t) + a_tj * v.get(d, j));
            }
            if let Some(a) = att.as_mut() {
                a.set(t, j, a_tj);
            }
        }
    }
    Ok((
        y,
        att.map(|att| AttentionCache {
            x: x.clone(),
            q,
            k,
            v,
            att,
        }),
    ))
}

/// Shared tail of both backward passes: given gradients with respect to
/// the projected Q, K, V, produce weight and input gradients.
fn project_back(
    w: &AttentionWeights,
    x: &Matrix,
    dq: &Matrix,
    dk: &Matrix,
    dv: &Matrix,
) -> AttentionGrads {
    let xt = x.transpose();
    let d_w_q = dq.matmul(&xt).expect("shape fixed by construction");
    let d_w_k = dk.matmul(&xt).expect("shape fixed by construction");
    let d_w_v = dv.matmul(&xt).expect("shape fixed by construction");
    let mut d_x = w.w_q.transpose().matmul(dq).expect("shape fixed");
    d_x = d_x
        .add(&w.w_k.transpose().matmul(dk).expect("shape fixed"))
        .expect("shape fixed");
    d_x = d_x
        .add(&w.w_v.transpose().matmul(dv).expect("shape fixed"))
        .expect("shape fixed");
    AttentionGrads { d_w_q, d_w_k, d_w_v, d_x }
}

pub(crate) fn linear_attention_backward(
    w: &AttentionWeights,
    cache: &AttentionCache,
    dy: &Matrix,
) -> AttentionGrads {
    let (d_ch, l) = dy.shape();
    let (q, k, v) = (&cache.q, &cache.k, &cache.v);
    let mut dq = Matrix::zeros(d_ch, l);
    let mut dk = Matrix::zeros(d_ch, l);
    let mut dv = Matrix::zeros(d_ch, l);
    for t in 0..l {
        for j in 0..=t {
            // y_t += scale (q_t . k_j) v_j, score s = att[t][j].
            let s = cache.att.get(t, j);
            let dy_dot_v = (0..d_ch).map(|d| dy.get(d, t) * v.get(d, j)).sum::<f64>();
            let d_score = w.scale * dy_dot_v;
            for d in 0..d_ch {
                dv.set(d, j, dv.get(d, j) + s * dy.get(d, t));
                dq.set(d, t, dq.get(d, t) + d_score * k.get(d, j));
                dk.set(d, j, dk.get(d, j) + d_score * q.get(d, t));
            }
        }
    }
    project_back(w, &cache.x, &dq, &dk, &dv)
}

pub(crate) fn softmax_attention_backward(
    w: &AttentionWeights,
    cache: &AttentionCache,
    dy: &Matrix,
) -> AttentionGrads {
    let (d_ch, l) = dy.shape();
    let (q, k, v) = (&cache.q, &cache.k, &cache.v);
    let mut dq = Matrix::zeros(d_ch, l);
    let mut dk = Matrix::zeros(d_ch, l);
    let mut dv = Matrix::zeros(d_ch, l);
    let mut d_alpha = vec![0.0f64; l];
    for t in 0..l {
        let mut inner = 0.0; // sum_j alpha_tj d_alpha_tj, the softmax shift
        for (j, slot) in d_alpha.iter_mut().enumerate().take(t + 1) {
            *slot = (0..d_ch).map(|d| dy.get(d, t) * v.get(d, j)).sum();
            inner += cache.att.get(t, j) * *slot;
        }
        for j in 0..=t {
            let a_tj = cache.att.get(t, j);
            let d_logit = a_tj * (d_alpha[j] - inner);
            for d in 0..d_ch {
                dv.set(d, j, dv.get(d, j) + a_tj * dy.get(d, t));
                dq.set(d, t, dq.get(d, t) + w.scale * d_logit * k.get(d, j));
                dk.set(d, j, dk.get(d, j) + w.scale * d_logit * q.get(d, t));
            }
        }
    }
    project_back(w, &cache.x, &dq, &dk, &dv)
}

/// Forward semantics of causal linear attention; `x` is D x L.
pub fn causal_linear_attention_forward(w: &AttentionWeights, x: &Matrix) -> Result<Matrix> {
    Ok(linear_attention_scan(w, x, false)?.0)
}

/// Forward semantics of causal softmax attention with positional encoding
/// added before the projections; `x` is D x L, output D x L. The encoding
/// may pad the sequence; causality makes the padded tail invisible to the
/// first L positions, which are all this returns.
pub fn softmax_attention_forward(
    w: &AttentionWeights,
    x: &Matrix,
    pe: &crate::layers::LearnablePE,
) -> Result<Matrix> {
    let l = x.cols();
    let padded = pe.apply(x)?;
    let y = softmax_attention_scan(w, &padded, false)?.0;
    Ok(Matrix::from_fn(x.rows(), l, |d, t| y.get(d, t)))
}
