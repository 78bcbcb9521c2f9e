//! The full gated block: a selective scan wrapped in linear maps, an
//! optional short causal convolution, an optional SiLU nonlinearity, a
//! multiplicative gate branch, and an optional residual connection.
//!
//! ```text
//! X = sigma(Conv1D(W_in U + b_in))     (scan branch)
//! Z = sigma(W_g U + b_g)               (gate branch)
//! Y = S6(X)
//! out = W_out (Y (*) Z) + b_out [+ U]
//! ```
//!
//! sigma is SiLU when `use_silu`, identity otherwise; Conv1D is identity
//! when `use_conv` is off.

use crate::error::{Error, Result};
use crate::layers::s6::{s6_scan, s6_scan_backward, S6Cache, S6Grads, S6Variant, S6Weights};
use crate::numerics::{silu_grad, Matrix};
use serde::{Deserialize, Serialize};

/// Affine map y = W u + b with one bias per output row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn new(w: Matrix, b: Vec<f64>) -> Result<Linear> {
        if b.len() != w.rows() {
            return Err(Error::ShapeMismatch {
                op: "Linear bias",
                lhs: (w.rows(), 1),
                rhs: (b.len(), 1),
            });
        }
        Ok(Linear { w, b })
    }

    pub fn identity(d: usize) -> Linear {
        Linear {
            w: Matrix::identity(d),
            b: vec![0.0; d],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Linear {
        Linear {
            w: Matrix::zeros(rows, cols),
            b: vec![0.0; rows],
        }
    }

    /// Applies the map to each column of `u`.
    pub fn forward(&self, u: &Matrix) -> Result<Matrix> {
        let mut out = self.w.matmul(u)?;
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                out.set(r, c, out.get(r, c) + self.b[r]);
            }
        }
        Ok(out)
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }
}

/// Weights of one gated block. The convolution kernel holds one width-2
/// causal filter per channel: row d is (k_prev, k_curr), identity = (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MambaBlockWeights {
    pub linear_in: Linear,
    pub conv_kernel: Matrix,
    pub gate_linear: Linear,
    pub linear_out: Linear,
    pub s6: S6Weights,
    pub variant: S6Variant,
    pub use_silu: bool,
    pub use_conv: bool,
    pub use_residual: bool,
}

impl MambaBlockWeights {
    /// Validates channel consistency: linear_in and gate_linear map the
    /// block input to the scan width, the scan keeps it, linear_out maps
    /// it back, and a residual requires output width = input width.
    pub fn new(
        linear_in: Linear,
        conv_kernel: Matrix,
        gate_linear: Linear,
        linear_out: Linear,
        s6: S6Weights,
        variant: S6Variant,
        use_silu: bool,
        use_conv: bool,
        use_residual: bool,
    ) -> Result<MambaBlockWeights> {
        let d_in = linear_in.in_dim();
        let d_scan = linear_in.out_dim();
        let (d_s6, _) = s6.dims();
        if d_s6 != d_scan
            || gate_linear.in_dim() != d_in
            || gate_linear.out_dim() != d_scan
            || linear_out.in_dim() != d_scan
            || conv_kernel.shape() != (d_scan, 2)
        {
            return Err(Error::ShapeMismatch {
                op: "MambaBlockWeights channels",
                lhs: (d_in, d_scan),
                rhs: (gate_linear.out_dim(), d_s6),
            });
        }
        if use_residual && linear_out.out_dim() != d_in {
            return Err(Error::ShapeMismatch {
                op: "MambaBlockWeights residual",
                lhs: (d_in, 0),
                rhs: (linear_out.out_dim(), 0),
            });
        }
        Ok(MambaBlockWeights {
            linear_in,
            conv_kernel,
            gate_linear,
            linear_out,
            s6,
            variant,
            use_silu,
            use_conv,
            use_residual,
        })
    }

    /// A do-nothing block: the scan branch ends in a zero linear_out, the
    /// gate is fixed at 1 via its bias, and the residual carries the input.
    pub fn identity(d: usize) -> MambaBlockWeights {
        let mut gate = Linear::zeros(d, d);
        gate.b = vec![1.0; d];
        let s6 = S6Weights::new(
            Matrix::zeros(1, d),
            Matrix::zeros(1, d),
            Matrix::zeros(1, d),
            Matrix::zeros(d, 1),
        )
        .expect("scalar-state shapes are consistent");
        MambaBlockWeights {
            linear_in: Linear::identity(d),
            conv_kernel: Matrix::from_fn(d, 2, |_, c| if c == 1 { 1.0 } else { 0.0 }),
            gate_linear: gate,
            linear_out: Linear::zeros(d, d),
            s6,
            variant: S6Variant::linear_poly(),
            use_silu: false,
            use_conv: false,
            use_residual: true,
        }
    }

    pub fn channels(&self) -> usize {
        self.linear_in.in_dim()
    }
}

/// Width-2 causal convolution per channel with zero left padding.
fn conv_forward(kernel: &Matrix, p: &Matrix) -> Matrix {
    let (d, l) = p.shape();
    Matrix::from_fn(d, l, |di, t| {
        let prev = if t > 0 { p.get(di, t - 1) } else { 0.0 };
        kernel.get(di, 0) * prev + kernel.get(di, 1) * p.get(di, t)
    })
}

fn maybe_silu(m: &Matrix, on: bool) -> Matrix {
    if on {
        m.silu()
    } else {
        m.clone()
    }
}

pub(crate) struct MambaCache {
    pub u: Matrix,
    pub p: Matrix,
    pub q: Matrix,
    pub g0: Matrix,
    pub z: Matrix,
    pub y: Matrix,
    pub s6: S6Cache,
}

pub(crate) struct MambaGrads {
    pub d_linear_in_w: Matrix,
    pub d_linear_in_b: Vec<f64>,
    pub d_conv_kernel: Matrix,
    pub d_gate_w: Matrix,
    pub d_gate_b: Vec<f64>,
    pub d_linear_out_w: Matrix,
    pub d_linear_out_b: Vec<f64>,
    pub d_s6: S6Grads,
    pub d_u: Matrix,
}

pub(crate) fn mamba_scan(
    w: &MambaBlockWeights,
    u: &Matrix,
    want_cache: bool,
) -> Result<(Matrix, Option<MambaCache>)> {
    if u.rows() != w.channels() {
        return Err(Error::ShapeMismatch {
            op: "mamba_block_forward input",
            lhs: (w.channels(), 0),
            rhs: u.shape(),
        });
    }
    let p = w.linear_in.forward(u)?;
    let q = if w.use_conv {
        conv_forward(&w.conv_kernel, &p)
    } else {
        p.clone()
    };
    let x = maybe_silu(&q, w.use_silu);
    let (y, s6_cache) = s6_scan(&w.s6, &w.variant, &x, want_cache)?;
    let g0 = w.gate_linear.forward(u)?;
    let z = maybe_silu(&g0, w.use_silu);
    let gated = y.hadamard(&z)?;
    let mut out = w.linear_out.forward(&gated)?;
    if w.use_residual {
        out = out.add(u)?;
    }
    let cache = want_cache.then(|| MambaCache {
        u: u.clone(),
        p,
        q,
        g0,
        z,
        y,
        s6: s6_cache.expect("cache requested from s6_scan"),
    });
    Ok((out, cache))
}

pub(crate) fn mamba_backward(
    w: &MambaBlockWeights,
    cache: &MambaCache,
    d_out: &Matrix,
) -> Result<MambaGrads> {
    let u = &cache.u;
    let l = u.cols();
    let d_scan = w.linear_in.out_dim();

    // out = linear_out(Y (*) Z) [+ U]
    let gated = cache.y.hadamard(&cache.z)?;
    let d_linear_out_w = d_out.matmul(&gated.transpose())?;
    let d_linear_out_b = row_sums(d_out);
    let d_gated = w.linear_out.w.transpose().matmul(d_out)?;
    let mut d_u = if w.use_residual {
        d_out.clone()
    } else {
        Matrix::zeros(u.rows(), l)
    };

    let d_y = d_gated.hadamard(&cache.z)?;
    let d_z = d_gated.hadamard(&cache.y)?;

    // Gate branch: Z = sigma(G0), G0 = W_g U + b_g.
    let d_g0 = if w.use_silu {
        Matrix::from_fn(d_scan, l, |r, c| d_z.get(r, c) * silu_grad(cache.g0.get(r, c)))
    } else {
        d_z
    };
    let d_gate_w = d_g0.matmul(&u.transpose())?;
    let d_gate_b = row_sums(&d_g0);
    d_u = d_u.add(&w.gate_linear.w.transpose().matmul(&d_g0)?)?;

    // Scan branch: Y = S6(X), X = sigma(Q), Q = conv(P), P = W_in U + b_in.
    let s6_grads = s6_scan_backward(&w.s6, &w.variant, &cache.s6, &d_y);
    let d_x = &s6_grads.d_x;
    let d_q = if w.use_silu {
        Matrix::from_fn(d_scan, l, |r, c| d_x.get(r, c) * silu_grad(cache.q.get(r, c)))
    } else {
        d_x.clone()
    };
    let mut d_conv_kernel = Matrix::zeros(d_scan, 2);
    let d_p = if w.use_conv {
        let mut d_p = Matrix::zeros(d_scan, l);
        for d in 0..d_scan {
            let (mut dk0, mut dk1) = (0.0, 0.0);
            for t in 0..l {
                let dq = d_q.get(d, t);
                let prev = if t > 0 { cache.p.get(d, t - 1) } else { 0.0 };
                dk0 += dq * prev;
                dk1 += dq * cache.p.get(d, t);
                d_p.set(d, t, d_p.get(d, t) + w.conv_kernel.get(d, 1) * dq);
                if t > 0 {
                    d_p.set(d, t - 1, d_p.get(d, t - 1) + w.conv_kernel.get(d, 0) * dq);
                }
            }
            d_conv_kernel.set(d, 0, dk0);
            d_conv_kernel.set(d, 1, dk1);
        }
        d_p
    } else {
        d_q
    };
    let d_linear_in_w = d_p.matmul(&u.transpose())?;
    let d_linear_in_b = row_sums(&d_p);
    d_u = d_u.add(&w.linear_in.w.transpose().matmul(&d_p)?)?;

    Ok(MambaGrads {
        d_linear_in_w,
        d_linear_in_b,
        d_conv_kernel,
        d_gate_w,
        d_gate_b,
        d_linear_out_w,
        d_linear_out_b,
        d_s6: s6_grads,
        d_u,
    })
}

fn row_sums(m: &Matrix) -> Vec<f64> {
    (0..m.rows())
        .map(|r| (0..m.cols()).map(|c| m.get(r, c)).sum())
        .collect()
}

/// Forward semantics of one gated block; `u` is D x L, output D x L.
pub fn mamba_block_forward(w: &MambaBlockWeights, u: &Matrix) -> Result<Matrix> {
    Ok(mamba_scan(w, u, false)?.0)
}
