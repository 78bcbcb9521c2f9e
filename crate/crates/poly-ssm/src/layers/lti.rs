//! Time-invariant diagonal state-space scan, the degree-1 reference point:
//! with fixed coefficients the output is a causal linear filter of the
//! input, y_t = sum_{j <= t} c . (abar^(t-j) (*) bbar) x_j.

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use serde::{Deserialize, Serialize};

/// Diagonal LTI parameters, each a length-N vector applied identically to
/// every channel: h_t = abar (*) h_{t-1} + bbar x_t, y_t = c . h_t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtiWeights {
    pub abar: Vec<f64>,
    pub bbar: Vec<f64>,
    pub c: Vec<f64>,
}

impl LtiWeights {
    pub fn new(abar: Vec<f64>, bbar: Vec<f64>, c: Vec<f64>) -> Result<LtiWeights> {
        let n = abar.len();
        if bbar.len() != n || c.len() != n || n == 0 {
            return Err(Error::ShapeMismatch {
                op: "LtiWeights",
                lhs: (n, 1),
                rhs: (bbar.len(), c.len()),
            });
        }
        for v in abar.iter().chain(&bbar).chain(&c) {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    context: "LtiWeights entries".to_string(),
                });
            }
        }
        Ok(LtiWeights { abar, bbar, c })
    }

    pub fn state_size(&self) -> usize {
        self.abar.len()
    }
}

pub(crate) struct LtiCache {
    pub x: Matrix,
    /// h[(t + 1) * D * N + d * N + n], slot 0 the zero initial state.
    pub h: Vec<f64>,
}

pub(crate) struct LtiGrads {
    pub d_abar: Vec<f64>,
    pub d_bbar: Vec<f64>,
    pub d_c: Vec<f64>,
    pub d_x: Matrix,
}

pub(crate) fn lti_scan(
    w: &LtiWeights,
    x: &Matrix,
    want_cache: bool,
) -> Result<(Matrix, Option<LtiCache>)> {
    let (d_ch, l) = x.shape();
    let n_st = w.state_size();
    let mut y = Matrix::zeros(d_ch, l);
    let mut h = vec![0.0f64; d_ch * n_st];
    let mut hist = want_cache.then(|| vec![0.0f64; (l + 1) * d_ch * n_st]);
    for t in 0..l {
        for d in 0..d_ch {
            let x_dt = x.get(d, t);
            let mut y_dt = 0.0;
            for n in 0..n_st {
                let idx = d * n_st + n;
                let hv = w.abar[n] * h[idx] + w.bbar[n] * x_dt;
                if !hv.is_finite() {
                    return Err(Error::ScanOverflow {
                        channel: d + 1,
                        position: t + 1,
                    });
                }
                h[idx] = hv;
                y_dt += w.c[n] * hv;
            }
            y.set(d, t, y_dt);
        }
        if let Some(hist) = hist.as_mut() {
            hist[(t + 1) * d_ch * n_st..(t + 2) * d_ch * n_st].copy_from_slice(&h);
        }
    }
    Ok((
        y,
        hist.map(|h| LtiCache { x: x.clone(), h }),
    ))
}

pub(crate) fn lti_backward(w: &LtiWeights, cache: &LtiCache, dy: &Matrix) -> LtiGrads {
    let (d_ch, l) = dy.shape();
    let n_st = w.state_size();
    let x = &cache.x;
    let mut g = LtiGrads {
        d_abar: vec![0.0; n_st],
        d_bbar: vec![0.0; n_st],
        d_c: vec![0.0; n_st],
        d_x: Matrix::zeros(d_ch, l),
    };
    let mut dh = vec![0.0f64; d_ch * n_st];
    for t in (0..l).rev() {
        let h_t = &cache.h[(t + 1) * d_ch * n_st..(t + 2) * d_ch * n_st];
        let h_prev = &cache.h[t * d_ch * n_st..(t + 1) * d_ch * n_st];
        for d in 0..d_ch {
            let dy_dt = dy.get(d, t);
            let x_dt = x.get(d, t);
            let mut dx_dt = 0.0;
            for n in 0..n_st {
                let idx = d * n_st + n;
                g.d_c[n] += dy_dt * h_t[idx];
                let dh_v = dh[idx] + dy_dt * w.c[n];
                g.d_abar[n] += dh_v * h_prev[idx];
                g.d_bbar[n] += dh_v * x_dt;
                dx_dt += dh_v * w.bbar[n];
                dh[idx] = dh_v * w.abar[n];
            }
            g.d_x.set(d, t, dx_dt);
        }
    }
    g
}

/// Forward semantics of the time-invariant scan over a scalar sequence.
pub fn lti_ssm_forward(w: &LtiWeights, x: &[f64]) -> Result<Vec<f64>> {
    let xm = Matrix::from_vec(1, x.len(), x.to_vec())?;
    let (y, _) = lti_scan(w, &xm, false)?;
    Ok(y.data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_filter_values() {
        // N=1, abar=0.5, bbar=c=1: y_t = sum_j 0.5^(t-j) x_j.
        // x = (1, 1): y = (1, 1.5).
        let w = LtiWeights::new(vec![0.5], vec![1.0], vec![1.0]).unwrap();
        let y = lti_ssm_forward(&w, &[1.0, 1.0]).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-15);
        assert!((y[1] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn identity_and_running_sum_configurations() {
        let ident = LtiWeights::new(vec![0.0], vec![1.0], vec![1.0]).unwrap();
        let x = [4.0, -2.5, 0.3];
        assert_eq!(lti_ssm_forward(&ident, &x).unwrap(), x.to_vec());
        let runsum = LtiWeights::new(vec![1.0], vec![1.0], vec![1.0]).unwrap();
        let y = lti_ssm_forward(&runsum, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y, vec![1.0, 3.0, 6.0]);
    }

    #[test]
    fn output_is_linear_in_input() {
        let w = LtiWeights::new(vec![0.3, -0.6], vec![1.0, 0.5], vec![0.8, -0.2]).unwrap();
        let x1 = [0.4, -1.1, 0.7];
        let x2 = [-0.9, 0.2, 0.5];
        let sum: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a + b).collect();
        let y_sum = lti_ssm_forward(&w, &sum).unwrap();
        let y1 = lti_ssm_forward(&w, &x1).unwrap();
        let y2 = lti_ssm_forward(&w, &x2).unwrap();
        for t in 0..3 {
            assert!((y_sum[t] - (y1[t] + y2[t])).abs() < 1e-14);
        }
    }

    #[test]
    fn mismatched_vector_lengths_are_rejected() {
        assert!(LtiWeights::new(vec![0.5], vec![1.0, 2.0], vec![1.0]).is_err());
        assert!(LtiWeights::new(vec![], vec![], vec![]).is_err());
    }
}
