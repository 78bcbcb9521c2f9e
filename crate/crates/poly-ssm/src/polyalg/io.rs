//! Polynomial JSON: `{"n_vars": L, "terms": [{"exps": [[var, power], ...],
//! "coeff": c}, ...]}` with terms in graded-lexicographic order, so equal
//! polynomials serialize to identical text and the round trip is exact.

use crate::error::{Error, Result};
use crate::polyalg::{Monomial, MultiPoly};
use serde::{Deserialize, Serialize};

#[derive(Serialize, Deserialize)]
struct TermRepr {
    exps: Vec<(u32, u32)>,
    coeff: f64,
}

#[derive(Serialize, Deserialize)]
struct PolyRepr {
    n_vars: usize,
    terms: Vec<TermRepr>,
}

pub fn poly_to_json(p: &MultiPoly) -> Result<String> {
    let repr = PolyRepr {
        n_vars: p.n_vars(),
        terms: p
            .terms_graded_lex()
            .into_iter()
            .map(|(m, c)| TermRepr {
                exps: m.exps().to_vec(),
                coeff: c,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&repr)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Error::InvalidInput {
            reason: format!("polynomial serialization failed: {e}"),
        })
}

pub fn poly_from_json(text: &str) -> Result<MultiPoly> {
    let repr: PolyRepr = serde_json::from_str(text).map_err(|e| Error::InvalidInput {
        reason: format!("polynomial deserialization failed: {e}"),
    })?;
    let mut p = MultiPoly::zero(repr.n_vars);
    for term in repr.terms {
        if !term.coeff.is_finite() {
            return Err(Error::NonFinite {
                context: "polynomial coefficient".to_string(),
            });
        }
        for &(v, _) in &term.exps {
            if v == 0 || v as usize > repr.n_vars {
                return Err(Error::InvalidInput {
                    reason: format!(
                        "variable x_{v} outside 1..={} in polynomial file",
                        repr.n_vars
                    ),
                });
            }
        }
        p.add_term(Monomial::from_pairs(&term.exps), term.coeff);
    }
    Ok(p)
}
