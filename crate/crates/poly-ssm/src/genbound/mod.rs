//! Margin-based generalization certificate for a selective-scan classifier:
//! the closed-form logit evaluation, the weight-norm profile, the empirical
//! contraction constant measured on data, the margin error, and a two-term
//! bound together with its sequence-length sweep.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::S6Weights;
use crate::numerics::{softplus, Matrix};

/// Safety margin added on top of the largest observed state multiplier.
const CONTRACTION_MARGIN: f64 = 1e-9;

/// A single selective layer with simplified input coupling, composed with
/// a linear class head W (classes x channels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierWeights {
    pub s6: S6Weights,
    pub w: Matrix,
}

impl ClassifierWeights {
    pub fn new(s6: S6Weights, w: Matrix) -> Result<ClassifierWeights> {
        let (d, _) = s6.dims();
        if w.cols() != d {
            return Err(Error::ShapeMismatch {
                op: "classifier head",
                lhs: (w.rows(), w.cols()),
                rhs: (w.rows(), d),
            });
        }
        Ok(ClassifierWeights { s6, w })
    }

    /// (classes, channels, state size).
    pub fn dims(&self) -> (usize, usize, usize) {
        let (d, n) = self.s6.dims();
        (self.w.rows(), d, n)
    }
}

/// Norms entering the certificate. `gamma_product` is the product of the
/// five factors; `rho_b` uses the max row l2 norm convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormProfile {
    pub rho_w: f64,
    pub rho_a: f64,
    pub rho_b: f64,
    pub rho_c: f64,
    pub rho_delta: f64,
    #[serde(rename = "Gamma")]
    pub gamma_product: f64,
}

/// Scalar parameters of one bound evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub gamma: f64,
    pub delta: f64,
    pub m: usize,
    #[serde(rename = "D")]
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "C")]
    pub c: usize,
}

impl BoundInputs {
    fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidInput {
                reason: "bound needs at least one sample".into(),
            });
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::InvalidInput {
                reason: format!("margin gamma must be positive, got {}", self.gamma),
            });
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidInput {
                reason: format!("confidence delta must lie in (0, 1), got {}", self.delta),
            });
        }
        if self.d == 0 || self.n == 0 || self.l == 0 || self.c == 0 {
            return Err(Error::InvalidInput {
                reason: "bound dimensions D, N, L, C must be positive".into(),
            });
        }
        Ok(())
    }
}

/// One evaluated certificate. `margin_error` is filled by callers that
/// also hold a labeled dataset; `notes` records the conventions the
/// numbers depend on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    #[serde(rename = "K")]
    pub k: f64,
    pub gamma: f64,
    pub delta: f64,
    pub m: usize,
    #[serde(rename = "D")]
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "C")]
    pub c: usize,
    pub data_norm: f64,
    pub term1: f64,
    pub term2: f64,
    pub bound: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin_error: Option<f64>,
    pub notes: Vec<String>,
}

fn report_notes() -> Vec<String> {
    vec![
        "rho_B is the max row l2 norm of S_B".into(),
        "K is measured on the supplied data, plus a 1e-9 margin".into(),
        "the log factor uses 4*L*C*D^4*N".into(),
    ]
}

/// Class scores at the last position, evaluated in closed form: for each
/// channel the state at L is the input-coupled sum over positions i,
/// weighted by the product of the state multipliers exp(softplus(s_k) a)
/// for k past i, then read out through S_C at position L and the head W.
pub fn classifier_logits(w: &ClassifierWeights, x: &Matrix) -> Result<Vec<f64>> {
    let (c_classes, d_chan, n_state) = w.dims();
    if x.rows() != d_chan || x.cols() == 0 {
        return Err(Error::ShapeMismatch {
            op: "classifier logits",
            lhs: (d_chan, 1),
            rhs: x.shape(),
        });
    }
    let l = x.cols();
    let delta: Vec<f64> = (0..l)
        .map(|k| {
            let mut s = 0.0;
            for di in 0..d_chan {
                s += w.s6.s_delta.get(0, di) * x.get(di, k);
            }
            softplus(s)
        })
        .collect();
    let b: Vec<Vec<f64>> = (0..l)
        .map(|i| {
            (0..n_state)
                .map(|n| {
                    let mut s = 0.0;
                    for di in 0..d_chan {
                        s += w.s6.s_b.get(n, di) * x.get(di, i);
                    }
                    s
                })
                .collect()
        })
        .collect();
    let c_last: Vec<f64> = (0..n_state)
        .map(|n| {
            let mut s = 0.0;
            for di in 0..d_chan {
                s += w.s6.s_c.get(n, di) * x.get(di, l - 1);
            }
            s
        })
        .collect();

    let mut channel_out = vec![0.0; d_chan];
    for di in 0..d_chan {
        let mut suffix = vec![1.0; n_state];
        let mut acc = vec![0.0; n_state];
        for i in (0..l).rev() {
            for n in 0..n_state {
                acc[n] += suffix[n] * b[i][n] * x.get(di, i);
                suffix[n] *= (delta[i] * w.s6.a.get(di, n)).exp();
            }
        }
        let mut y = 0.0;
        for n in 0..n_state {
            y += c_last[n] * acc[n];
        }
        channel_out[di] = y;
    }

    Ok((0..c_classes)
        .map(|ci| {
            let mut f = 0.0;
            for di in 0..d_chan {
                f += w.w.get(ci, di) * channel_out[di];
            }
            f
        })
        .collect())
}

fn row_l2(m: &Matrix, r: usize) -> f64 {
    m.row(r).iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// The five weight norms and their product.
pub fn norm_profile(w: &ClassifierWeights) -> NormProfile {
    let rho_w = w.w.frobenius();
    let rho_a = w.s6.a.max_abs();
    let rho_b = (0..w.s6.s_b.rows())
        .map(|r| row_l2(&w.s6.s_b, r))
        .fold(0.0, f64::max);
    let rho_c = w.s6.s_c.frobenius();
    let rho_delta = w.s6.s_delta.frobenius();
    NormProfile {
        rho_w,
        rho_a,
        rho_b,
        rho_c,
        rho_delta,
        gamma_product: rho_w * rho_a * rho_b * rho_c * rho_delta,
    }
}

/// Largest state multiplier |exp(softplus(s_delta x_k) a)| observed over
/// the dataset, plus a small safety margin. Values at or above 1 mean the
/// state does not contract and the certificate does not apply.
pub fn contraction_k(w: &ClassifierWeights, dataset: &[Matrix]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput {
            reason: "contraction constant needs a nonempty dataset".into(),
        });
    }
    let (_, d_chan, n_state) = w.dims();
    let mut max_abs = f64::NEG_INFINITY;
    let mut at = (0, 0, 0);
    for (j, x) in dataset.iter().enumerate() {
        if x.rows() != d_chan {
            return Err(Error::ShapeMismatch {
                op: "contraction constant",
                lhs: (d_chan, 0),
                rhs: x.shape(),
            });
        }
        for k in 0..x.cols() {
            let mut s = 0.0;
            for di in 0..d_chan {
                s += w.s6.s_delta.get(0, di) * x.get(di, k);
            }
            let dk = softplus(s);
            for di in 0..d_chan {
                for n in 0..n_state {
                    let abar = (dk * w.s6.a.get(di, n)).exp().abs();
                    if abar > max_abs {
                        max_abs = abar;
                        at = (j, di, k);
                    }
                }
            }
        }
    }
    let k = max_abs + CONTRACTION_MARGIN;
    if k >= 1.0 {
        return Err(Error::ContractionViolation {
            sample: at.0 + 1,
            channel: at.1 + 1,
            position: at.2 + 1,
            value: max_abs,
        });
    }
    Ok(k)
}

/// Fraction of samples whose true-class score fails to clear every other
/// class by more than `gamma`. Ties count as violations.
pub fn empirical_margin_error(
    w: &ClassifierWeights,
    dataset: &[(Matrix, usize)],
    gamma: f64,
) -> Result<f64> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::InvalidInput {
            reason: format!("margin gamma must be positive, got {gamma}"),
        });
    }
    if dataset.is_empty() {
        return Err(Error::InvalidInput {
            reason: "margin error needs a nonempty dataset".into(),
        });
    }
    let (c_classes, _, _) = w.dims();
    let mut violations = 0usize;
    for (x, y) in dataset {
        if *y >= c_classes {
            return Err(Error::InvalidInput {
                reason: format!("label {y} outside the {c_classes} classes"),
            });
        }
        let logits = classifier_logits(w, x)?;
        let best_other = logits
            .iter()
            .enumerate()
            .filter(|(c, _)| c != y)
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max);
        if best_other + gamma >= logits[*y] {
            violations += 1;
        }
    }
    Ok(violations as f64 / dataset.len() as f64)
}

/// sqrt of the largest per-entry energy: max over (channel, position) of
/// the sum of squared values across samples.
pub fn data_norm(dataset: &[Matrix]) -> Result<f64> {
    let first = dataset.first().ok_or_else(|| Error::InvalidInput {
        reason: "data norm needs a nonempty dataset".into(),
    })?;
    let shape = first.shape();
    let mut energy = Matrix::zeros(shape.0, shape.1);
    for x in dataset {
        if x.shape() != shape {
            return Err(Error::ShapeMismatch {
                op: "data norm",
                lhs: shape,
                rhs: x.shape(),
            });
        }
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let v = x.get(r, c);
                energy.set(r, c, energy.get(r, c) + v * v);
            }
        }
    }
    Ok(energy.data().iter().fold(0.0f64, |m, &v| m.max(v)).sqrt())
}

/// Evaluates the two-term certificate at the given norms, contraction
/// constant, and data scale.
pub fn evaluate_bound(
    profile: &NormProfile,
    k: f64,
    inputs: &BoundInputs,
    data_norm: f64,
) -> Result<BoundReport> {
    inputs.validate()?;
    if !(k.is_finite() && k > 0.0 && k < 1.0) {
        return Err(Error::InvalidInput {
            reason: format!("contraction constant K = {k} must lie in (0, 1)"),
        });
    }
    if !(data_norm.is_finite() && data_norm >= 0.0) {
        return Err(Error::InvalidInput {
            reason: format!("data norm must be finite and nonnegative, got {data_norm}"),
        });
    }
    let (gamma, delta, m) = (inputs.gamma, inputs.delta, inputs.m as f64);
    let (d, n, l, c) = (
        inputs.d as f64,
        inputs.n as f64,
        inputs.l as f64,
        inputs.c as f64,
    );
    let dn2 = d * d * n * n;
    let log_factor = 1.0 + (2.0 * (4.0 * l * c * d.powi(4) * n).ln()).sqrt();
    let term1 = (2.0 * 2.0f64.sqrt() / (gamma * m))
        * (profile.gamma_product + 1.0 / dn2)
        * (d * d)
        * log_factor
        * data_norm
        * k
        / ((k - 1.0) * (k - 1.0));
    let term2 =
        3.0 * (((2.0 / delta).ln() + 2.0 * (dn2 * profile.gamma_product + 2.0).ln()) / (2.0 * m))
            .sqrt();
    Ok(BoundReport {
        k,
        gamma: inputs.gamma,
        delta: inputs.delta,
        m: inputs.m,
        d: inputs.d,
        n: inputs.n,
        l: inputs.l,
        c: inputs.c,
        data_norm,
        term1,
        term2,
        bound: term1 + term2,
        margin_error: None,
        notes: report_notes(),
    })
}

/// The certificate across sequence lengths, with norms, K, m, and the
/// data scale held fixed. Only the logarithmic factor inside term1 varies.
pub fn bound_length_sweep(
    profile: &NormProfile,
    k: f64,
    inputs: &BoundInputs,
    data_norm: f64,
    lengths: &[usize],
) -> Result<Vec<BoundReport>> {
    lengths
        .iter()
        .map(|&l| {
            let mut per_length = *inputs;
            per_length.l = l;
            evaluate_bound(profile, k, &per_length, data_norm)
        })
        .collect()
}
