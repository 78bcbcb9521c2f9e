//! Central-difference verification of analytic gradients. This is the
//! quality gate for every trainable layer: a configuration may only be
//! trained after its hand-derived backward pass agrees with finite
//! differences at the documented tolerance.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// A trainable tensor: value plus accumulated gradient of identical shape.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub value: Matrix,
    pub grad: Matrix,
    pub name: String,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, value: Matrix) -> ParamTensor {
        let grad = Matrix::zeros(value.rows(), value.cols());
        ParamTensor {
            value,
            grad,
            name: name.into(),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

/// Compares the gradients already stored in `params` against central
/// differences of `loss_fn`, returning the max over all parameters of
/// |analytic - numeric| / (|analytic| + 1e-12), where |.| is the
/// Euclidean norm over a parameter's entries.
///
/// The comparison is per parameter, not per entry: a single entry whose
/// true derivative cancels to the quantization floor of the difference
/// quotient would otherwise dominate the report with noise, while a wrong
/// formula shifts a parameter's whole gradient and moves the norm.
///
/// `loss_fn` must be a pure function of the parameter values; `epsilon`
/// must lie in [1e-7, 1e-3]. Parameter values are restored exactly.
pub fn grad_check<F>(mut loss_fn: F, params: &mut [ParamTensor], epsilon: f64) -> Result<f64>
where
    F: FnMut(&[ParamTensor]) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::InvalidInput {
            reason: format!("grad_check epsilon {epsilon} outside [1e-7, 1e-3]"),
        });
    }
    let mut max_rel = 0.0f64;
    for p in 0..params.len() {
        let n_entries = params[p].value.data().len();
        let mut diff_sq = 0.0f64;
        let mut analytic_sq = 0.0f64;
        for i in 0..n_entries {
            let saved = params[p].value.data()[i];
            params[p].value.data_mut()[i] = saved + epsilon;
            let loss_plus = loss_fn(params)?;
            params[p].value.data_mut()[i] = saved - epsilon;
            let loss_minus = loss_fn(params)?;
            params[p].value.data_mut()[i] = saved;
            if !loss_plus.is_finite() || !loss_minus.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("grad_check loss near parameter {}", params[p].name),
                });
            }
            let numeric = (loss_plus - loss_minus) / (2.0 * epsilon);
            let analytic = params[p].grad.data()[i];
            diff_sq += (analytic - numeric) * (analytic - numeric);
            analytic_sq += analytic * analytic;
        }
        let rel = diff_sq.sqrt() / (analytic_sq.sqrt() + 1e-12);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::softplus;

    #[test]
    fn quadratic_loss_gradient_is_theta() {
        // loss = 0.5 * ||theta||^2, gradient = theta.
        let value = Matrix::from_rows(&[vec![0.3, -1.7], vec![2.0, 0.01]]).unwrap();
        let mut p = ParamTensor::new("theta", value.clone());
        p.grad = value;
        let err = grad_check(
            |ps| Ok(0.5 * ps[0].value.data().iter().map(|v| v * v).sum::<f64>()),
            &mut [p],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-6, "relative error {err}");
    }

    #[test]
    fn softplus_gradient_matches_sigmoid() {
        // d softplus(x)/dx = sigmoid(x); at x=1 that is 0.731058...
        let mut p = ParamTensor::new("x", Matrix::filled(1, 1, 1.0));
        p.grad.set(0, 0, crate::numerics::sigmoid(1.0));
        let err = grad_check(|ps| Ok(softplus(ps[0].value.get(0, 0))), &mut [p], 1e-5).unwrap();
        assert!(err <= 1e-6, "relative error {err}");
    }

    #[test]
    fn constant_loss_has_zero_error() {
        let p = ParamTensor::new("x", Matrix::filled(2, 2, 0.5));
        let err = grad_check(|_| Ok(4.25), &mut [p], 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn a_wrong_tensor_is_flagged_next_to_a_correct_one() {
        // Same quadratic loss, but the second parameter stores double the
        // true gradient: its norm ratio is 0.5 regardless of the first.
        let good = Matrix::from_rows(&[vec![0.4, -1.1]]).unwrap();
        let bad = Matrix::from_rows(&[vec![0.9, 0.6]]).unwrap();
        let mut p0 = ParamTensor::new("good", good.clone());
        p0.grad = good;
        let mut p1 = ParamTensor::new("bad", bad.clone());
        p1.grad = bad.scale(2.0).unwrap();
        let loss = |ps: &[ParamTensor]| {
            Ok(ps
                .iter()
                .map(|p| 0.5 * p.value.data().iter().map(|v| v * v).sum::<f64>())
                .sum())
        };
        let err = grad_check(loss, &mut [p0, p1], 1e-5).unwrap();
        assert!((err - 0.5).abs() < 1e-6, "relative error {err}");
    }

    #[test]
    fn epsilon_outside_range_is_rejected() {
        let mut p = [ParamTensor::new("x", Matrix::zeros(1, 1))];
        assert!(grad_check(|_| Ok(0.0), &mut p, 1e-2).is_err());
        assert!(grad_check(|_| Ok(0.0), &mut p, 1e-8).is_err());
    }

    #[test]
    fn values_are_restored_after_check() {
        let mut p = [ParamTensor::new("x", Matrix::filled(1, 3, 0.125))];
        grad_check(|ps| Ok(ps[0].value.data().iter().sum()), &mut p, 1e-5).unwrap();
        for &v in p[0].value.data() {
            assert_eq!(v, 0.125);
        }
    }
}
