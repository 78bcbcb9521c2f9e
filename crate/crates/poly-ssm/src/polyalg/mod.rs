//! Sparse multivariate polynomial algebra. Variables are the sequence
//! positions x_1..x_L; a polynomial is a map from exponent vectors to f64
//! coefficients. This is the intermediate representation that makes layer
//! expressivity exactly comparable: each layer's output position is
//! unrolled into a `MultiPoly` and measured by degree.

mod extract;
mod io;

pub use extract::{
    attention_layer_symbolic, extract_attention_poly, extract_lti_ssm_poly,
    extract_s6_channel_poly,
};
pub use io::{poly_from_json, poly_to_json};

use crate::error::{Error, Result};
use std::collections::{BTreeMap, HashMap};

/// Coefficients with absolute value below this are dropped; the canonical
/// sparse form never stores them (below f64 relative precision at O(1)
/// coefficient scale).
pub const COEFF_EPS: f64 = 1e-15;

/// A product of variable powers. Stored as (variable index, power) pairs,
/// sorted by index, with no zero powers; variable indices are 1-based.
/// The empty monomial is the constant 1.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Monomial {
    exps: Vec<(u32, u32)>,
}

impl Monomial {
    /// The constant monomial (all exponents zero).
    pub fn one() -> Monomial {
        Monomial::default()
    }

    /// The single variable x_index (1-based).
    pub fn var(index: u32) -> Monomial {
        assert!(index >= 1, "variable indices are 1-based");
        Monomial {
            exps: vec![(index, 1)],
        }
    }

    /// Builds from arbitrary (index, power) pairs: merges repeats, drops
    /// zero powers, sorts by index.
    pub fn from_pairs(pairs: &[(u32, u32)]) -> Monomial {
        let mut map: BTreeMap<u32, u32> = BTreeMap::new();
        for &(v, p) in pairs {
            assert!(v >= 1, "variable indices are 1-based");
            if p > 0 {
                *map.entry(v).or_insert(0) += p;
            }
        }
        Monomial {
            exps: map.into_iter().collect(),
        }
    }

    pub fn exps(&self) -> &[(u32, u32)] {
        &self.exps
    }

    /// Largest variable index used; 0 for the constant monomial.
    pub fn max_var(&self) -> u32 {
        self.exps.last().map_or(0, |&(v, _)| v)
    }

    pub fn total_degree(&self) -> u32 {
        self.exps.iter().map(|&(_, p)| p).sum()
    }

    /// Product of two monomials: merge sorted pairs, adding powers.
    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut out = Vec::with_capacity(self.exps.len() + other.exps.len());
        let (mut i, mut j) = (0, 0);
        while i < self.exps.len() && j < other.exps.len() {
            let (va, pa) = self.exps[i];
            let (vb, pb) = other.exps[j];
            match va.cmp(&vb) {
                std::cmp::Ordering::Less => {
                    out.push((va, pa));
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push((vb, pb));
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push((va, pa + pb));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&self.exps[i..]);
        out.extend_from_slice(&other.exps[j..]);
        Monomial { exps: out }
    }

    /// Evaluates at `x`, where `x[i]` is the value of variable i+1.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.exps
            .iter()
            .map(|&(v, p)| x[(v - 1) as usize].powi(p as i32))
            .product()
    }

    /// Graded-lexicographic comparison: total degree first, ties broken by
    /// the dense exponent vector (e_1, e_2, ...) compared entrywise.
    pub fn cmp_graded_lex(&self, other: &Monomial) -> std::cmp::Ordering {
        self.total_degree()
            .cmp(&other.total_degree())
            .then_with(|| {
                let last = self.max_var().max(other.max_var());
                for v in 1..=last {
                    let ea = self.power_of(v);
                    let eb = other.power_of(v);
                    if ea != eb {
                        return ea.cmp(&eb);
                    }
                }
                std::cmp::Ordering::Equal
            })
    }

    fn power_of(&self, var: u32) -> u32 {
        self.exps
            .binary_search_by_key(&var, |&(v, _)| v)
            .map(|i| self.exps[i].1)
            .unwrap_or(0)
    }
}

/// Sparse multivariate polynomial over variables x_1..x_{n_vars}.
///
/// Canonical form: term keys are unique, every stored coefficient has
/// |c| >= [`COEFF_EPS`], and every monomial uses only variables within
/// range. The zero polynomial has no terms.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiPoly {
    n_vars: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl MultiPoly {
    pub fn zero(n_vars: usize) -> MultiPoly {
        MultiPoly {
            n_vars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(c: f64, n_vars: usize) -> MultiPoly {
        let mut p = MultiPoly::zero(n_vars);
        p.add_term(Monomial::one(), c);
        p
    }

    /// The polynomial x_index (1-based; must be within n_vars).
    pub fn var(index: u32, n_vars: usize) -> MultiPoly {
        assert!(index >= 1 && index as usize <= n_vars);
        let mut p = MultiPoly::zero(n_vars);
        p.add_term(Monomial::var(index), 1.0);
        p
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    /// Adds `coeff` to the monomial's coefficient, restoring canonical form.
    pub fn add_term(&mut self, mono: Monomial, coeff: f64) {
        assert!(
            mono.max_var() as usize <= self.n_vars,
            "monomial uses variable x_{} outside n_vars = {}",
            mono.max_var(),
            self.n_vars
        );
        match self.terms.entry(mono) {
            std::collections::btree_map::Entry::Occupied(mut e) => {
                *e.get_mut() += coeff;
                if e.get().abs() < COEFF_EPS {
                    e.remove();
                }
            }
            std::collections::btree_map::Entry::Vacant(e) => {
                if coeff.abs() >= COEFF_EPS {
                    e.insert(coeff);
                }
            }
        }
    }

    fn check_vars(&self, other: &MultiPoly, op: &'static str) -> Result<()> {
        if self.n_vars != other.n_vars {
            return Err(Error::ShapeMismatch {
                op,
                lhs: (1, self.n_vars),
                rhs: (1, other.n_vars),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &MultiPoly) -> Result<MultiPoly> {
        self.check_vars(other, "poly add")?;
        let mut out = self.clone();
        for (m, c) in other.terms() {
            out.add_term(m.clone(), c);
        }
        Ok(out)
    }

    pub fn sub(&self, other: &MultiPoly) -> Result<MultiPoly> {
        self.check_vars(other, "poly sub")?;
        let mut out = self.clone();
        for (m, c) in other.terms() {
            out.add_term(m.clone(), -c);
        }
        Ok(out)
    }

    /// Exact sparse product. Accumulates through a hash map (term counts in
    /// stacked-layer extractions reach the tens of thousands), then
    /// canonicalizes.
    pub fn mul(&self, other: &MultiPoly) -> Result<MultiPoly> {
        self.check_vars(other, "poly mul")?;
        let mut acc: HashMap<Monomial, f64> =
            HashMap::with_capacity(self.terms.len().max(other.terms.len()) * 2);
        for (ma, ca) in self.terms() {
            for (mb, cb) in other.terms() {
                *acc.entry(ma.mul(mb)).or_insert(0.0) += ca * cb;
            }
        }
        let mut out = MultiPoly::zero(self.n_vars);
        out.terms = acc
            .into_iter()
            .filter(|(_, c)| c.abs() >= COEFF_EPS)
            .collect();
        Ok(out)
    }

    pub fn scale(&self, s: f64) -> MultiPoly {
        let mut out = MultiPoly::zero(self.n_vars);
        out.terms = self
            .terms
            .iter()
            .map(|(m, &c)| (m.clone(), c * s))
            .filter(|(_, c)| c.abs() >= COEFF_EPS)
            .collect();
        out
    }

    /// Sum of coeff * prod x^e over all terms; `x` must have n_vars entries.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_vars {
            return Err(Error::InvalidInput {
                reason: format!(
                    "poly eval point has {} coordinates, polynomial has {} variables",
                    x.len(),
                    self.n_vars
                ),
            });
        }
        Ok(self.terms().map(|(m, c)| c * m.eval(x)).sum())
    }

    /// Exact degree and term-count statistics. The zero polynomial reports
    /// degree 0 and 0 monomials.
    pub fn stats(&self) -> PolyStats {
        PolyStats {
            max_total_degree: self
                .terms
                .keys()
                .map(|m| m.total_degree())
                .max()
                .unwrap_or(0),
            n_monomials: self.terms.len(),
        }
    }

    /// Terms in graded-lexicographic order (ascending degree, then
    /// ascending dense exponent vector). This is the serialization order.
    pub fn terms_graded_lex(&self) -> Vec<(&Monomial, f64)> {
        let mut v: Vec<_> = self.terms().collect();
        v.sort_by(|(a, _), (b, _)| a.cmp_graded_lex(b));
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolyStats {
    pub max_total_degree: u32,
    pub n_monomials: usize,
}

/// Second operand for [`poly_arith`].
#[derive(Debug, Clone, Copy)]
pub enum PolyArg<'a> {
    Poly(&'a MultiPoly),
    Scalar(f64),
}

/// Operation selector for [`poly_arith`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolyOp {
    Add,
    Mul,
    Scale,
}

/// Generic dispatch over the three arithmetic operations. `Add` and `Mul`
/// require a polynomial second operand with equal n_vars; `Scale` requires
/// a scalar.
pub fn poly_arith(kind: PolyOp, p: &MultiPoly, q: PolyArg) -> Result<MultiPoly> {
    match (kind, q) {
        (PolyOp::Add, PolyArg::Poly(q)) => p.add(q),
        (PolyOp::Mul, PolyArg::Poly(q)) => p.mul(q),
        (PolyOp::Scale, PolyArg::Scalar(s)) => Ok(p.scale(s)),
        (PolyOp::Scale, PolyArg::Poly(_)) => Err(Error::InvalidInput {
            reason: "Scale takes a scalar operand".into(),
        }),
        (op, PolyArg::Scalar(_)) => Err(Error::InvalidInput {
            reason: format!("{op:?} takes a polynomial operand"),
        }),
    }
}

/// Convenience for building sums of monomial terms in tests and targets.
pub fn poly_from_terms(n_vars: usize, terms: &[(&[(u32, u32)], f64)]) -> MultiPoly {
    let mut p = MultiPoly::zero(n_vars);
    for &(pairs, c) in terms {
        p.add_term(Monomial::from_pairs(pairs), c);
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn x1_times_x1_is_x1_squared() {
        let x1 = MultiPoly::var(1, 2);
        let sq = x1.mul(&x1).unwrap();
        assert_eq!(sq.n_terms(), 1);
        assert_eq!(sq.coeff(&Monomial::from_pairs(&[(1, 2)])), 1.0);
    }

    #[test]
    fn difference_of_squares() {
        // (x1 + x2)(x1 - x2) = x1^2 - x2^2
        let x1 = MultiPoly::var(1, 2);
        let x2 = MultiPoly::var(2, 2);
        let sum = x1.add(&x2).unwrap();
        let diff = x1.sub(&x2).unwrap();
        let prod = sum.mul(&diff).unwrap();
        let expect = poly_from_terms(2, &[(&[(1, 2)], 1.0), (&[(2, 2)], -1.0)]);
        assert_eq!(prod, expect);
    }

    #[test]
    fn scale_halves_coefficients() {
        let p = poly_from_terms(2, &[(&[(1, 1), (2, 1)], 2.0)]);
        let half = p.scale(0.5);
        assert_eq!(half.coeff(&Monomial::from_pairs(&[(1, 1), (2, 1)])), 1.0);
    }

    #[test]
    fn eval_constant_and_monomials() {
        let c = MultiPoly::constant(5.0, 3);
        assert_eq!(c.eval(&[9.0, -2.0, 0.3]).unwrap(), 5.0);
        // x1^2 x2 at (2,3) = 12
        let p = poly_from_terms(2, &[(&[(1, 2), (2, 1)], 1.0)]);
        assert_eq!(p.eval(&[2.0, 3.0]).unwrap(), 12.0);
        // x2^2 x1^2 + x2^3 at (1,2) = 4 + 8 = 12
        let q = poly_from_terms(2, &[(&[(1, 2), (2, 2)], 1.0), (&[(2, 3)], 1.0)]);
        assert_eq!(q.eval(&[1.0, 2.0]).unwrap(), 12.0);
    }

    #[test]
    fn cancellation_restores_canonical_form() {
        let p = poly_from_terms(2, &[(&[(1, 1)], 1.0)]);
        let q = poly_from_terms(2, &[(&[(1, 1)], -1.0)]);
        let sum = p.add(&q).unwrap();
        assert!(sum.is_zero());
        assert_eq!(sum.stats().max_total_degree, 0);
        assert_eq!(sum.stats().n_monomials, 0);
    }

    #[test]
    fn stats_by_inspection() {
        let p = poly_from_terms(2, &[(&[(1, 2), (2, 2)], 1.0), (&[(2, 3)], 1.0)]);
        let s = p.stats();
        assert_eq!(s.max_total_degree, 4);
        assert_eq!(s.n_monomials, 2);
    }

    #[test]
    fn poly_arith_dispatch_matches_methods() {
        let p = MultiPoly::var(1, 1);
        let sq = poly_arith(PolyOp::Mul, &p, PolyArg::Poly(&p)).unwrap();
        assert_eq!(sq, p.mul(&p).unwrap());
        assert!(poly_arith(PolyOp::Add, &p, PolyArg::Scalar(1.0)).is_err());
    }

    #[test]
    fn n_vars_mismatch_is_an_error() {
        let p = MultiPoly::var(1, 2);
        let q = MultiPoly::var(1, 3);
        assert!(p.add(&q).is_err());
        assert!(p.mul(&q).is_err());
    }

    #[test]
    fn graded_lex_orders_by_degree_then_vector() {
        let p = poly_from_terms(
            2,
            &[
                (&[(2, 3)], 1.0),         // degree 3
                (&[(1, 2), (2, 2)], 1.0), // degree 4
                (&[(1, 1)], 1.0),         // degree 1
            ],
        );
        let degs: Vec<u32> = p
            .terms_graded_lex()
            .iter()
            .map(|(m, _)| m.total_degree())
            .collect();
        assert_eq!(degs, vec![1, 3, 4]);
    }
}
