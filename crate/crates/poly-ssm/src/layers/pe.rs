//! Learnable positional encoding with optional zero padding. Row t of the
//! table is the vector added to the input at position t; positions beyond
//! the raw sequence carry input value 0, so a longer table extends the
//! sequence with encoding-only columns. The constructive compiler leans on
//! this tail to finish its bookkeeping after the data has gone by.

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use serde::{Deserialize, Serialize};

/// Position table, L' x D. `zero_pad()` is the padded length L'.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnablePE {
    pub pe: Matrix,
}

impl LearnablePE {
    pub fn new(pe: Matrix) -> LearnablePE {
        LearnablePE { pe }
    }

    pub fn zeros(padded_len: usize, d: usize) -> LearnablePE {
        LearnablePE {
            pe: Matrix::zeros(padded_len, d),
        }
    }

    /// Padded length L'.
    pub fn zero_pad(&self) -> usize {
        self.pe.rows()
    }

    /// Pads `x` (D x L) with zero columns to width L' and adds the
    /// encoding. Requires L' >= L and matching channel count.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let (d, l) = x.shape();
        let l_pad = self.zero_pad();
        if self.pe.cols() != d || l_pad < l {
            return Err(Error::ShapeMismatch {
                op: "positional encoding",
                lhs: (l_pad, self.pe.cols()),
                rhs: (l, d),
            });
        }
        Ok(Matrix::from_fn(d, l_pad, |di, t| {
            let base = if t < l { x.get(di, t) } else { 0.0 };
            base + self.pe.get(t, di)
        }))
    }
}
