//! Selective state-space scan. One layer maps a D-channel length-L input
//! to a D-channel output through per-channel linear recurrences whose
//! transition, injection, and readout all depend on the current input
//! column, which is exactly what lifts the layer's expressivity past
//! attention and time-invariant scans.
//!
//! Shared structure across all variants, per channel d with state size N:
//!
//! ```text
//! B_t = S_B x_t,  C_t = S_C x_t,  s_t = S_d x_t           (projections)
//! h_{d,t} = Abar_{d,t} (*) h_{d,t-1} + Bbar_t * X_{d,t}   (recurrence)
//! y_{d,t} = C_t . h_{d,t},        h_{d,0} = 0
//! ```
//!
//! The variants differ only in how (Abar, Bbar) are produced from (s_t, A,
//! B_t); see [`S6Variant`]. The scalar s_t is shared by every channel at a
//! given position, so per-channel behavior enters only through row d of A.

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, softplus, Matrix};
use serde::{Deserialize, Serialize};

/// Parameters of one selective layer. Shapes, with D input channels and
/// state size N: `s_b` and `s_c` are N x D, `s_delta` is 1 x D, `a` is
/// D x N (row d parameterizes channel d's transition).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct S6Weights {
    pub s_b: Matrix,
    pub s_c: Matrix,
    pub s_delta: Matrix,
    pub a: Matrix,
}

impl S6Weights {
    /// Validates the shape contract: s_b, s_c N x D; s_delta 1 x D; a D x N.
    pub fn new(s_b: Matrix, s_c: Matrix, s_delta: Matrix, a: Matrix) -> Result<S6Weights> {
        let (n, d) = s_b.shape();
        if s_c.shape() != (n, d) {
            return Err(Error::ShapeMismatch {
                op: "S6Weights s_c",
                lhs: (n, d),
                rhs: s_c.shape(),
            });
        }
        if s_delta.shape() != (1, d) {
            return Err(Error::ShapeMismatch {
                op: "S6Weights s_delta",
                lhs: (1, d),
                rhs: s_delta.shape(),
            });
        }
        if a.shape() != (d, n) {
            return Err(Error::ShapeMismatch {
                op: "S6Weights a",
                lhs: (d, n),
                rhs: a.shape(),
            });
        }
        Ok(S6Weights { s_b, s_c, s_delta, a })
    }

    /// (channels D, state size N).
    pub fn dims(&self) -> (usize, usize) {
        (self.a.rows(), self.a.cols())
    }

    /// True when every entry of A is strictly negative, the validity
    /// precondition for a contraction certificate (then Abar = exp(dA) < 1
    /// for every positive d).
    pub fn a_strictly_negative(&self) -> bool {
        self.a.data().iter().all(|&v| v < 0.0)
    }
}

/// Chooses how the raw projections become recurrence coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum S6Variant {
    /// Discretized form: d_t = softplus(s_t), Abar = exp(d_t A),
    /// Bbar = d_t B_t.
    Original,
    /// Polynomial form: Bbar = B_t and Abar = p2(p1(s_t / sqrt(D)) * A)
    /// with Taylor truncations p1 (of softplus) and p2 (of exp) at the
    /// configured degrees, both in [1, 6]. With `linear_pa`, the transition
    /// is instead the affine Abar = s_t + A, the degree-minimal case (A = 0
    /// recovers the pure product unrolling; s_delta = 0, A = 1 yields a
    /// running sum).
    SimplifiedPoly {
        p1_degree: u32,
        p2_degree: u32,
        linear_pa: bool,
    },
    /// As Original but without discretizing the injection: Bbar = B_t,
    /// Abar = exp(softplus(s_t) A).
    SimplifiedNonPoly,
    /// Original with the injection discretization removed (Bbar = B_t);
    /// the transition keeps its discretized form. Numerically identical to
    /// `SimplifiedNonPoly`, kept as a distinct tag because experiments
    /// toggle it independently.
    BbarEqualsB,
}

impl S6Variant {
    pub fn validate(&self) -> Result<()> {
        if let S6Variant::SimplifiedPoly {
            p1_degree,
            p2_degree,
            linear_pa: _,
        } = self
        {
            for (name, deg) in [("p1_degree", p1_degree), ("p2_degree", p2_degree)] {
                if !(1..=6).contains(deg) {
                    return Err(Error::Unsupported {
                        reason: format!("{name} = {deg} outside [1, 6]"),
                    });
                }
            }
        }
        Ok(())
    }

    /// The affine-transition polynomial variant used by symbolic unrolling
    /// and the constructive compiler.
    pub fn linear_poly() -> S6Variant {
        S6Variant::SimplifiedPoly {
            p1_degree: 1,
            p2_degree: 1,
            linear_pa: true,
        }
    }
}

/// Taylor coefficients of softplus at 0, degrees 0..=6. Odd coefficients
/// above 1 vanish because the second derivative s(1-s) is even around 0.
const P1_COEFFS: [f64; 7] = [
    std::f64::consts::LN_2,
    0.5,
    0.125,
    0.0,
    -1.0 / 192.0,
    0.0,
    1.0 / 2880.0,
];

/// p1: truncated softplus series, degree in [1, 6].
pub fn p1_eval(z: f64, degree: u32) -> f64 {
    let mut acc = 0.0;
    let mut zp = 1.0;
    for k in 0..=degree as usize {
        acc += P1_COEFFS[k] * zp;
        zp *= z;
    }
    acc
}

pub(crate) fn p1_grad(z: f64, degree: u32) -> f64 {
    let mut acc = 0.0;
    let mut zp = 1.0;
    for k in 1..=degree as usize {
        acc += k as f64 * P1_COEFFS[k] * zp;
        zp *= z;
    }
    acc
}

/// p2: truncated exponential series, degree in [1, 6].
pub fn p2_eval(z: f64, degree: u32) -> f64 {
    let mut acc = 1.0;
    let mut term = 1.0;
    for k in 1..=degree as u64 {
        term *= z / k as f64;
        acc += term;
    }
    acc
}

pub(crate) fn p2_grad(z: f64, degree: u32) -> f64 {
    // d/dz sum z^k/k! = sum z^{k-1}/(k-1)!, the series one degree lower.
    p2_eval(z, degree - 1)
}

/// Hidden state of a scan in progress: row d of `h` is channel d's
/// length-N state, zero before the first position; `t` counts consumed
/// positions.
#[derive(Debug, Clone)]
pub struct ScanState {
    pub h: Matrix,
    pub t: usize,
}

impl ScanState {
    pub fn initial(d: usize, n: usize) -> ScanState {
        ScanState {
            h: Matrix::zeros(d, n),
            t: 0,
        }
    }
}

/// Position-t coefficients shared by every channel.
struct StepCoeffs {
    s: f64,
    /// softplus(s) for the discretized variants, p1(s / sqrt D) for the
    /// truncated polynomial variant, 0 for the affine transition.
    inner: f64,
    b: Vec<f64>,
    c: Vec<f64>,
    bbar: Vec<f64>,
}

/// Projects one input column and applies the variant's coefficient maps.
fn step_coeffs(w: &S6Weights, variant: &S6Variant, x: &Matrix, t: usize) -> StepCoeffs {
    let (d_ch, n_st) = w.dims();
    let mut s = 0.0;
    for d in 0..d_ch {
        s += w.s_delta.get(0, d) * x.get(d, t);
    }
    let mut b = vec![0.0; n_st];
    let mut c = vec![0.0; n_st];
    for n in 0..n_st {
        for d in 0..d_ch {
            let xv = x.get(d, t);
            b[n] += w.s_b.get(n, d) * xv;
            c[n] += w.s_c.get(n, d) * xv;
        }
    }
    let mut bbar = b.clone();
    let mut inner = 0.0;
    match variant {
        S6Variant::Original => {
            inner = softplus(s);
            for v in bbar.iter_mut() {
                *v *= inner;
            }
        }
        S6Variant::SimplifiedNonPoly | S6Variant::BbarEqualsB => inner = softplus(s),
        S6Variant::SimplifiedPoly {
            p1_degree,
            linear_pa,
            ..
        } => {
            if !linear_pa {
                inner = p1_eval(s / (d_ch as f64).sqrt(), *p1_degree);
            }
        }
    }
    StepCoeffs { s, inner, b, c, bbar }
}

/// Transition coefficient for one (channel, state) entry.
fn abar_value(variant: &S6Variant, co: &StepCoeffs, a_dn: f64) -> f64 {
    match variant {
        S6Variant::Original | S6Variant::SimplifiedNonPoly | S6Variant::BbarEqualsB => {
            (co.inner * a_dn).exp()
        }
        S6Variant::SimplifiedPoly {
            p2_degree,
            linear_pa,
            ..
        } => {
            if *linear_pa {
                co.s + a_dn
            } else {
                p2_eval(co.inner * a_dn, *p2_degree)
            }
        }
    }
}

/// Everything the backward pass needs, recorded per position.
pub(crate) struct S6Cache {
    pub x: Matrix,
    pub s: Vec<f64>,
    pub inner: Vec<f64>,
    /// abar[t * D * N + d * N + n]
    pub abar: Vec<f64>,
    /// b[t * N + n], c likewise; bbar may differ from b (Original).
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub bbar: Vec<f64>,
    /// h[(t + 1) * D * N + d * N + n]; slot t = 0 is the zero initial state.
    pub h: Vec<f64>,
}

/// Gradients of one scan with respect to weights and input.
pub(crate) struct S6Grads {
    pub d_s_b: Matrix,
    pub d_s_c: Matrix,
    pub d_s_delta: Matrix,
    pub d_a: Matrix,
    pub d_x: Matrix,
}

/// Runs the scan. `x` is D x L. Returns the D x L output, plus the cache
/// when `want_cache` is set.
pub(crate) fn s6_scan(
    w: &S6Weights,
    variant: &S6Variant,
    x: &Matrix,
    want_cache: bool,
) -> Result<(Matrix, Option<S6Cache>)> {
    variant.validate()?;
    let (d_ch, n_st) = w.dims();
    if x.rows() != d_ch {
        return Err(Error::ShapeMismatch {
            op: "selective_forward input",
            lhs: (d_ch, 0),
            rhs: x.shape(),
        });
    }
    let l = x.cols();

    let mut y = Matrix::zeros(d_ch, l);
    let mut h = vec![0.0f64; d_ch * n_st];
    let mut cache = want_cache.then(|| S6Cache {
        x: x.clone(),
        s: vec![0.0; l],
        inner: vec![0.0; l],
        abar: vec![0.0; l * d_ch * n_st],
        b: vec![0.0; l * n_st],
        c: vec![0.0; l * n_st],
        bbar: vec![0.0; l * n_st],
        h: vec![0.0; (l + 1) * d_ch * n_st],
    });

    for t in 0..l {
        let co = step_coeffs(w, variant, x, t);
        for d in 0..d_ch {
            let mut y_dt = 0.0;
            for n in 0..n_st {
                let abar = abar_value(variant, &co, w.a.get(d, n));
                let idx = d * n_st + n;
                let hv = abar * h[idx] + co.bbar[n] * x.get(d, t);
                if !hv.is_finite() {
                    return Err(Error::ScanOverflow {
                        channel: d + 1,
                        position: t + 1,
                    });
                }
                h[idx] = hv;
                y_dt += co.c[n] * hv;
                if let Some(c) = cache.as_mut() {
                    c.abar[t * d_ch * n_st + idx] = abar;
                }
            }
            y.set(d, t, y_dt);
        }
        if let Some(c) = cache.as_mut() {
            c.s[t] = co.s;
            c.inner[t] = co.inner;
            c.b[t * n_st..(t + 1) * n_st].copy_from_slice(&co.b);
            c.c[t * n_st..(t + 1) * n_st].copy_from_slice(&co.c);
            c.bbar[t * n_st..(t + 1) * n_st].copy_from_slice(&co.bbar);
            c.h[(t + 1) * d_ch * n_st..(t + 2) * d_ch * n_st].copy_from_slice(&h);
        }
    }
    Ok((y, cache))
}

/// Reverse pass of [`s6_scan`]. `dy` is D x L.
pub(crate) fn s6_scan_backward(
    w: &S6Weights,
    variant: &S6Variant,
    cache: &S6Cache,
    dy: &Matrix,
) -> S6Grads {
    let (d_ch, n_st) = w.dims();
    let l = dy.cols();
    let sqrt_d = (d_ch as f64).sqrt();
    let x = &cache.x;

    let mut g = S6Grads {
        d_s_b: Matrix::zeros(w.s_b.rows(), w.s_b.cols()),
        d_s_c: Matrix::zeros(w.s_c.rows(), w.s_c.cols()),
        d_s_delta: Matrix::zeros(1, d_ch),
        d_a: Matrix::zeros(d_ch, n_st),
        d_x: Matrix::zeros(d_ch, l),
    };
    // Carry: d loss / d h_{d,t} accumulated from positions > t.
    let mut dh = vec![0.0f64; d_ch * n_st];
    let mut dbvec = vec![0.0f64; n_st];
    let mut dcvec = vec![0.0f64; n_st];
    let mut dbbar = vec![0.0f64; n_st];

    for t in (0..l).rev() {
        let h_t = &cache.h[(t + 1) * d_ch * n_st..(t + 2) * d_ch * n_st];
        let h_prev = &cache.h[t * d_ch * n_st..(t + 1) * d_ch * n_st];
        let cvec = &cache.c[t * n_st..(t + 1) * n_st];
        let bvec = &cache.b[t * n_st..(t + 1) * n_st];
        let bbar = &cache.bbar[t * n_st..(t + 1) * n_st];
        let abar_t = &cache.abar[t * d_ch * n_st..(t + 1) * d_ch * n_st];
        let inner = cache.inner[t];
        let s_t = cache.s[t];

        // Readout y_{d,t} = sum_n c_n h_{d,t,n}.
        dcvec.fill(0.0);
        for d in 0..d_ch {
            let dy_dt = dy.get(d, t);
            for n in 0..n_st {
                dcvec[n] += dy_dt * h_t[d * n_st + n];
                dh[d * n_st + n] += dy_dt * cvec[n];
            }
        }

        // Recurrence h = abar (*) h_prev + bbar * x_d. `ds` accumulates
        // d loss / d inner along the transition path (d loss / d s_t
        // directly for the affine transition).
        dbbar.fill(0.0);
        let mut ds = 0.0;
        for d in 0..d_ch {
            let x_dt = x.get(d, t);
            let mut dx_inj = 0.0;
            for n in 0..n_st {
                let idx = d * n_st + n;
                let dh_v = dh[idx];
                let dabar = dh_v * h_prev[idx];
                dbbar[n] += dh_v * x_dt;
                dx_inj += dh_v * bbar[n];
                match variant {
                    S6Variant::Original
                    | S6Variant::SimplifiedNonPoly
                    | S6Variant::BbarEqualsB => {
                        // abar = exp(inner a): d abar = abar (a d inner + inner d a).
                        let chain = dabar * abar_t[idx];
                        ds += chain * w.a.get(d, n);
                        g.d_a.set(d, n, g.d_a.get(d, n) + chain * inner);
                    }
                    S6Variant::SimplifiedPoly {
                        p2_degree,
                        linear_pa,
                        ..
                    } => {
                        if *linear_pa {
                            ds += dabar;
                            g.d_a.set(d, n, g.d_a.get(d, n) + dabar);
                        } else {
                            let dp2 = dabar * p2_grad(inner * w.a.get(d, n), *p2_degree);
                            ds += dp2 * w.a.get(d, n);
                            g.d_a.set(d, n, g.d_a.get(d, n) + dp2 * inner);
                        }
                    }
                }
                // Carry to position t-1.
                dh[idx] = dh_v * abar_t[idx];
            }
            g.d_x.set(d, t, g.d_x.get(d, t) + dx_inj);
        }

        // Convert d inner to d s_t and fold in the injection's dependence
        // on the projections.
        dbvec.fill(0.0);
        let ds_t = match variant {
            S6Variant::Original => {
                // bbar = delta b, inner = delta = softplus(s).
                let mut d_inner = ds;
                for n in 0..n_st {
                    d_inner += dbbar[n] * bvec[n];
                    dbvec[n] = inner * dbbar[n];
                }
                d_inner * sigmoid(s_t)
            }
            S6Variant::SimplifiedNonPoly | S6Variant::BbarEqualsB => {
                dbvec.copy_from_slice(&dbbar);
                ds * sigmoid(s_t)
            }
            S6Variant::SimplifiedPoly {
                p1_degree,
                linear_pa,
                ..
            } => {
                dbvec.copy_from_slice(&dbbar);
                if *linear_pa {
                    ds
                } else {
                    ds * p1_grad(s_t / sqrt_d, *p1_degree) / sqrt_d
                }
            }
        };

        // Projection gradients: b = S_B x, c = S_C x, s = S_d x.
        for d in 0..d_ch {
            let x_dt = x.get(d, t);
            let mut dx_dt = g.d_x.get(d, t);
            for n in 0..n_st {
                g.d_s_b.set(n, d, g.d_s_b.get(n, d) + dbvec[n] * x_dt);
                g.d_s_c.set(n, d, g.d_s_c.get(n, d) + dcvec[n] * x_dt);
                dx_dt += w.s_b.get(n, d) * dbvec[n] + w.s_c.get(n, d) * dcvec[n];
            }
            g.d_s_delta.set(0, d, g.d_s_delta.get(0, d) + ds_t * x_dt);
            dx_dt += ds_t * w.s_delta.get(0, d);
            g.d_x.set(d, t, dx_dt);
        }
    }
    g
}

/// Forward semantics of one selective layer; `x` is D x L, output D x L.
pub fn selective_forward(w: &S6Weights, variant: &S6Variant, x: &Matrix) -> Result<Matrix> {
    Ok(s6_scan(w, variant, x, false)?.0)
}

/// Consumes one input column incrementally, updating `state` in place and
/// returning the output column. Column t of [`selective_forward`] equals
/// the t-th step's output, bit for bit.
pub fn selective_step(
    w: &S6Weights,
    variant: &S6Variant,
    state: &mut ScanState,
    x_col: &[f64],
) -> Result<Vec<f64>> {
    variant.validate()?;
    let (d_ch, n_st) = w.dims();
    if x_col.len() != d_ch || state.h.shape() != (d_ch, n_st) {
        return Err(Error::InvalidInput {
            reason: format!(
                "selective_step expects {d_ch} channels and {d_ch}x{n_st} state"
            ),
        });
    }
    let x = Matrix::from_vec(d_ch, 1, x_col.to_vec())?;
    let co = step_coeffs(w, variant, &x, 0);
    let mut y = vec![0.0; d_ch];
    for d in 0..d_ch {
        for n in 0..n_st {
            let abar = abar_value(variant, &co, w.a.get(d, n));
            let hv = abar * state.h.get(d, n) + co.bbar[n] * x.get(d, 0);
            if !hv.is_finite() {
                return Err(Error::ScanOverflow {
                    channel: d + 1,
                    position: state.t + 1,
                });
            }
            state.h.set(d, n, hv);
            y[d] += co.c[n] * hv;
        }
    }
    state.t += 1;
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_weights(s_b: f64, s_c: f64, s_delta: f64, a: f64) -> S6Weights {
        S6Weights::new(
            Matrix::filled(1, 1, s_b),
            Matrix::filled(1, 1, s_c),
            Matrix::filled(1, 1, s_delta),
            Matrix::filled(1, 1, a),
        )
        .unwrap()
    }

    #[test]
    fn simplified_nonpoly_hand_recurrence() {
        // D=N=1, S_B=S_C=1, S_d=0, A=0: abar = e^0 = 1, so h_t = sum x_j^2
        // and y_t = x_t h_t: x = (1,2) gives h = (1,5), y = (1, 10).
        let w = scalar_weights(1.0, 1.0, 0.0, 0.0);
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let y = selective_forward(&w, &S6Variant::SimplifiedNonPoly, &x).unwrap();
        assert!((y.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((y.get(0, 1) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn simplified_poly_linear_hand_recurrence() {
        // Affine transition, S_B=S_C=S_d=1, A=0, x=(1,1): abar_2 = 1,
        // h = (1, 2), y = (1, 2).
        let w = scalar_weights(1.0, 1.0, 1.0, 0.0);
        let x = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let y = selective_forward(&w, &S6Variant::linear_poly(), &x).unwrap();
        assert!((y.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((y.get(0, 1) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_s_b_gives_zero_output_in_every_variant() {
        let variants = [
            S6Variant::Original,
            S6Variant::SimplifiedNonPoly,
            S6Variant::BbarEqualsB,
            S6Variant::linear_poly(),
            S6Variant::SimplifiedPoly {
                p1_degree: 3,
                p2_degree: 3,
                linear_pa: false,
            },
        ];
        let w = scalar_weights(0.0, 1.0, 0.7, -0.5);
        let x = Matrix::from_rows(&[vec![0.3, -1.2, 0.8]]).unwrap();
        for v in variants {
            let y = selective_forward(&w, &v, &x).unwrap();
            assert_eq!(y.max_abs(), 0.0, "variant {v:?}");
        }
    }

    #[test]
    fn taylor_degrees_outside_range_are_rejected() {
        let w = scalar_weights(1.0, 1.0, 1.0, 0.0);
        let x = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let v = S6Variant::SimplifiedPoly {
            p1_degree: 0,
            p2_degree: 3,
            linear_pa: false,
        };
        assert!(matches!(
            selective_forward(&w, &v, &x),
            Err(Error::Unsupported { .. })
        ));
        let v = S6Variant::SimplifiedPoly {
            p1_degree: 3,
            p2_degree: 7,
            linear_pa: false,
        };
        assert!(selective_forward(&w, &v, &x).is_err());
    }

    #[test]
    fn taylor_helpers_match_series_values() {
        // p1 at z=0 is ln 2; p2 at z=1 with degree 6 is sum 1/k!.
        assert!((p1_eval(0.0, 6) - std::f64::consts::LN_2).abs() < 1e-15);
        let e6: f64 = (0..=6)
            .map(|k| 1.0 / (1..=k).product::<u64>().max(1) as f64)
            .sum();
        assert!((p2_eval(1.0, 6) - e6).abs() < 1e-15);
        // Derivative of the degree-d exp series is the degree d-1 series.
        assert_eq!(p2_grad(0.37, 4), p2_eval(0.37, 3));
    }

    #[test]
    fn step_matches_full_scan() {
        let w = S6Weights::new(
            Matrix::from_rows(&[vec![0.3, -0.2], vec![0.1, 0.5]]).unwrap(),
            Matrix::from_rows(&[vec![-0.4, 0.2], vec![0.6, 0.1]]).unwrap(),
            Matrix::from_rows(&[vec![0.2, -0.3]]).unwrap(),
            Matrix::from_rows(&[vec![-0.5, -1.0], vec![-0.2, -0.8]]).unwrap(),
        )
        .unwrap();
        let x = Matrix::from_rows(&[vec![0.1, -0.7, 0.4], vec![0.9, 0.2, -0.3]]).unwrap();
        for variant in [S6Variant::Original, S6Variant::SimplifiedNonPoly] {
            let full = selective_forward(&w, &variant, &x).unwrap();
            let mut state = ScanState::initial(2, 2);
            for t in 0..3 {
                let col: Vec<f64> = (0..2).map(|d| x.get(d, t)).collect();
                let y = selective_step(&w, &variant, &mut state, &col).unwrap();
                for d in 0..2 {
                    assert_eq!(y[d], full.get(d, t), "variant {variant:?} t={t} d={d}");
                }
            }
        }
    }

    #[test]
    fn scan_overflow_names_channel_and_position() {
        // Affine transition 2 with injection 1 doubles the state each step;
        // from x = 2 everywhere the state passes 1e308 near step 1024.
        let w = scalar_weights(1.0, 1.0, 1.0, 0.0);
        let x = Matrix::filled(1, 1100, 2.0);
        let err = selective_forward(&w, &S6Variant::linear_poly(), &x).unwrap_err();
        match err {
            Error::ScanOverflow { channel, position } => {
                assert_eq!(channel, 1);
                assert!(position > 900, "position {position}");
            }
            other => panic!("expected overflow, got {other:?}"),
        }
    }
}
