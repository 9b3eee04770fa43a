//! Positive-definite candidate functions.
//!
//! The main family is `L(x) = S_d(x)ᵀ QᵀQ S_d(x) = ‖Q S_d(x)‖²`, where
//! `S_d` collects every monomial of total degree `1..=d` in graded
//! lexicographic order (lower degree first; within a degree, larger
//! exponent on `x1` first, then `x2`, ...). For `n = 2, d = 2` that is
//! `(x1, x2, x1², x1·x2, x2²)`. With no constant monomial, `L(0) = 0`, and a
//! full-rank `Q` makes `L` positive away from the origin.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::expr::Expression;

pub const DEFAULT_MAX_BASIS: usize = 256;
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-6;

/// Anything usable as a Lyapunov candidate. Implementations must be cheap to
/// evaluate and safe to share between threads.
pub trait Lyapunov: Sync {
    fn state_dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonomialBasis {
    n: usize,
    d: usize,
    exponents: Vec<Vec<u32>>,
    /// Monomial `i` is monomial `parents[i].0` (or 1 when `None`) times
    /// `x[parents[i].1]`, the factor taken from the last non-zero axis so
    /// the products match a left-to-right power loop exactly.
    parents: Vec<(Option<usize>, usize)>,
}

fn binomial(n: usize, k: usize) -> Option<usize> {
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    Some(acc)
}

/// Exponent vectors of total degree `deg` in `n` variables, lexicographically
/// descending.
fn exponents_of_degree(n: usize, deg: u32) -> Vec<Vec<u32>> {
    if n == 1 {
        return vec![vec![deg]];
    }
    let mut out = Vec::new();
    for first in (0..=deg).rev() {
        for mut rest in exponents_of_degree(n - 1, deg - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

impl MonomialBasis {
    pub fn new(n: usize, d: usize) -> Result<Self> {
        Self::with_limit(n, d, DEFAULT_MAX_BASIS)
    }

    pub fn with_limit(n: usize, d: usize, max: usize) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::InvalidParameter(format!("basis needs n ≥ 1 and d ≥ 1, got n = {n}, d = {d}")));
        }
        let size = binomial(n + d, d).map(|c| c - 1).unwrap_or(usize::MAX);
        if size > max {
            return Err(Error::BasisTooLarge { size, max });
        }
        let exponents = (1..=d as u32).flat_map(|deg| exponents_of_degree(n, deg)).collect::<Vec<_>>();
        debug_assert_eq!(exponents.len(), size);
        let parents = exponents
            .iter()
            .map(|e| {
                let axis = e.iter().rposition(|&p| p > 0).expect("degree ≥ 1");
                let mut prev = e.clone();
                prev[axis] -= 1;
                (exponents.iter().position(|q| *q == prev), axis)
            })
            .collect();
        Ok(Self { n, d, exponents, parents })
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn half_degree(&self) -> usize {
        self.d
    }

    /// Number of monomials `r = C(n + d, d) - 1`.
    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.parents.len() {
            let (parent, axis) = self.parents[i];
            out[i] = match parent {
                Some(p) => out[p] * x[axis],
                None => x[axis],
            };
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(x, &mut out);
        out
    }
}

/// Singular values of a row-major `r × r` matrix, largest first.
pub fn singular_values(q: &[f64], r: usize) -> Vec<f64> {
    let m = DMatrix::from_row_slice(r, r, q);
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Full rank iff the smallest singular value exceeds `rel_tol` times the
/// largest one (and the matrix is not zero).
pub fn check_full_rank(q: &[f64], r: usize, rel_tol: f64) -> bool {
    if q.len() != r * r || q.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let sv = singular_values(q, r);
    let largest = sv[0];
    largest > 0.0 && sv[r - 1] > rel_tol * largest
}

/// A polynomial as `(exponent vector, coefficient)` terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    pub terms: Vec<(Vec<u32>, f64)>,
}

impl Polynomial {
    pub fn coefficient(&self, exponents: &[u32]) -> f64 {
        self.terms.iter().find(|(e, _)| e == exponents).map_or(0.0, |(_, c)| *c)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| c * e.iter().zip(x).map(|(&k, xi)| libm::pow(*xi, f64::from(k))).product::<f64>())
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovSos {
    basis: MonomialBasis,
    q: Vec<f64>,
}

impl LyapunovSos {
    /// `q` is row-major `r × r`; rejected unless full rank at `rel_tol`.
    pub fn new(basis: MonomialBasis, q: Vec<f64>, rel_tol: f64) -> Result<Self> {
        let r = basis.len();
        if q.len() != r * r {
            return Err(Error::Dimension { expected: r * r, got: q.len() });
        }
        if !check_full_rank(&q, r, rel_tol) {
            return Err(Error::InvalidLyapunov("Q is not full rank".into()));
        }
        Ok(Self { basis, q })
    }

    pub fn basis(&self) -> &MonomialBasis {
        &self.basis
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    /// Evaluates `‖Q S_d(x)‖²`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let r = self.basis.len();
        if r <= 8 {
            let mut s = [0.0; 8];
            self.basis.eval_into(x, &mut s[..r]);
            self.quadratic(&s[..r])
        } else {
            let mut s = vec![0.0; r];
            self.basis.eval_into(x, &mut s);
            self.quadratic(&s)
        }
    }

    fn quadratic(&self, s: &[f64]) -> f64 {
        let mut total = 0.0;
        for row in self.q.chunks_exact(s.len()) {
            let mut y = 0.0;
            for (a, b) in row.iter().zip(s) {
                y += a * b;
            }
            total += y * y;
        }
        total
    }

    /// Expands `S_dᵀ QᵀQ S_d` into monomial coefficients, graded order.
    pub fn expand(&self) -> Polynomial {
        let r = self.basis.len();
        let gram = |a: usize, b: usize| (0..r).map(|k| self.q[k * r + a] * self.q[k * r + b]).sum::<f64>();
        let mut terms: Vec<(Vec<u32>, f64)> = Vec::new();
        for a in 0..r {
            for b in 0..r {
                let e: Vec<u32> =
                    self.basis.exponents[a].iter().zip(&self.basis.exponents[b]).map(|(p, q)| p + q).collect();
                let g = gram(a, b);
                match terms.iter_mut().find(|(t, _)| *t == e) {
                    Some((_, c)) => *c += g,
                    None => terms.push((e, g)),
                }
            }
        }
        terms.sort_by(|(a, _), (b, _)| {
            let da: u32 = a.iter().sum();
            let db: u32 = b.iter().sum();
            da.cmp(&db).then_with(|| b.cmp(a))
        });
        Polynomial { terms }
    }
}

impl Lyapunov for LyapunovSos {
    fn state_dim(&self) -> usize {
        self.basis.n
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval(x))
    }
}

/// A user-supplied expression in `x1..xn`, such as `x1^2`.
#[derive(Debug, Clone)]
pub struct FixedLyapunov {
    expr: Expression,
    source: String,
}

impl FixedLyapunov {
    pub fn parse(source: &str, n: usize) -> Result<Self> {
        let expr = Expression::parse(source, n, 0)
            .map_err(|error| Error::Parse { source_text: source.into(), error })?;
        let at_origin = expr
            .evaluate(&vec![0.0; n], &[])
            .map_err(|source| Error::Eval { context: "L(0)".into(), source })?;
        if at_origin != 0.0 {
            return Err(Error::InvalidLyapunov(format!("L(0) = {at_origin}, expected 0")));
        }
        Ok(Self { expr, source: source.into() })
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

impl Lyapunov for FixedLyapunov {
    fn state_dim(&self) -> usize {
        self.expr.state_dim()
    }

    /// Fails if the value is not positive at a nonzero point.
    fn value(&self, x: &[f64]) -> Result<f64> {
        let v = self
            .expr
            .evaluate(x, &[])
            .map_err(|source| Error::Eval { context: format!("L at {x:?}"), source })?;
        if v <= 0.0 && x.iter().any(|xi| *xi != 0.0) {
            return Err(Error::InvalidLyapunov(format!("L({x:?}) = {v} is not positive")));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Coefficients of the optimised benchmark candidate.
    pub(crate) const Q_STAR: [f64; 4] = [0.3587, 0.9232, 1.0000, 0.8249];

    #[test]
    fn basis_shapes() {
        let b = MonomialBasis::new(1, 2).unwrap();
        assert_eq!(b.exponents(), [vec![1], vec![2]]);
        let b = MonomialBasis::new(2, 1).unwrap();
        assert_eq!(b.exponents(), [vec![1, 0], vec![0, 1]]);
        let b = MonomialBasis::new(2, 2).unwrap();
        assert_eq!(b.len(), 5);
        assert_eq!(b.exponents()[2..], [vec![2, 0], vec![1, 1], vec![0, 2]]);
        assert_eq!(MonomialBasis::new(3, 3).unwrap().len(), 19);
        assert!(matches!(MonomialBasis::with_limit(4, 4, 10), Err(Error::BasisTooLarge { size: 69, .. })));
        assert!(MonomialBasis::new(0, 2).is_err());
    }

    #[test]
    fn identity_evaluation() {
        let l = LyapunovSos::new(MonomialBasis::new(1, 2).unwrap(), vec![1.0, 0.0, 0.0, 1.0], 1e-6).unwrap();
        assert_eq!(l.eval(&[2.0]), 20.0);
        assert_eq!(l.eval(&[0.0]), 0.0);
    }

    #[test]
    fn optimum_expansion() {
        let l = LyapunovSos::new(MonomialBasis::new(1, 2).unwrap(), Q_STAR.to_vec(), 1e-6).unwrap();
        let p = l.expand();
        assert!((p.coefficient(&[4]) - 1.5327).abs() < 5e-4);
        assert!((p.coefficient(&[3]) - 2.3121).abs() < 5e-4);
        assert!((p.coefficient(&[2]) - 1.1286).abs() < 5e-4);
        assert_eq!(p.terms.len(), 3);
    }

    #[test]
    fn rank_checks() {
        assert!(check_full_rank(&[1.0, 0.0, 0.0, 1.0], 2, 1e-6));
        assert!(!check_full_rank(&[0.0; 4], 2, 1e-6));
        assert!(!check_full_rank(&[1.0, 2.0, 2.0, 4.0], 2, 1e-6));
        assert!(check_full_rank(&Q_STAR, 2, 1e-6));
        // |det| equals the product of singular values
        let sv = singular_values(&Q_STAR, 2);
        let det = Q_STAR[0] * Q_STAR[3] - Q_STAR[1] * Q_STAR[2];
        assert!((det - -0.62731).abs() < 1e-4);
        assert!((sv[0] * sv[1] - det.abs()).abs() < 1e-12);
        assert!(LyapunovSos::new(MonomialBasis::new(1, 2).unwrap(), vec![0.0; 4], 1e-6).is_err());
    }

    #[test]
    fn fixed_candidates() {
        let l = FixedLyapunov::parse("x1^2", 1).unwrap();
        assert_eq!(l.value(&[3.0]).unwrap(), 9.0);
        assert_eq!(l.value(&[0.0]).unwrap(), 0.0);
        assert!(FixedLyapunov::parse("x1^2 + 1", 1).is_err());
        assert!(FixedLyapunov::parse("x1 + u1", 1).is_err());
        let bad = FixedLyapunov::parse("x1", 1).unwrap();
        assert!(bad.value(&[-1.0]).is_err());
    }
}
