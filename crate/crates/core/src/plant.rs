//! Set-valued plants: a nominal map `f̂` with a componentwise error bound `δ`.
//!
//! Every plant `f` with `f̂ - δ ≤ f ≤ f̂ + δ` belongs to the set, so the
//! successor of `(x, u)` is only known to lie in an axis-aligned box.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::expr::Expression;

const ORIGIN_TOLERANCE: f64 = 1e-12;

/// Registered benchmark plants as `(name, nominal, delta)` with `n = m = 1`.
const BUILTINS: &[(&str, &str, &str)] = &[(
    "benchmark-1d",
    "-sin(2*x1) - x1*u1 - 0.2*x1 - u1^2 + u1",
    "1 - exp(-0.5*(x1^2 + u1^2))",
)];

/// Alternative names accepted by [`PlantSet::builtin`].
const ALIASES: &[(&str, &str)] = &[("paper-sec5", "benchmark-1d")];

#[derive(Debug, Clone, PartialEq)]
pub struct SuccessorBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SuccessorBox {
    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(p, (l, u))| *l <= *p && *p <= *u)
    }
}

#[derive(Debug, Clone)]
pub struct PlantSet {
    n: usize,
    m: usize,
    nominal: Vec<Expression>,
    delta: Vec<Expression>,
    name: Option<String>,
}

fn describe_point(x: &[f64], u: &[f64]) -> String {
    format!("(x = {x:?}, u = {u:?})")
}

impl PlantSet {
    /// Builds a plant set and checks `f̂(0,0) = 0` and `δ(0,0) = 0`.
    pub fn new(n: usize, m: usize, nominal: Vec<Expression>, delta: Vec<Expression>) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidPlant(format!("dimensions must be positive (n = {n}, m = {m})")));
        }
        if nominal.len() != n || delta.len() != n {
            return Err(Error::InvalidPlant(format!(
                "expected {n} nominal and {n} delta expressions, got {} and {}",
                nominal.len(),
                delta.len()
            )));
        }
        for e in nominal.iter().chain(&delta) {
            if e.state_dim() != n || e.input_dim() != m {
                return Err(Error::InvalidPlant("expression declared with mismatched dimensions".into()));
            }
        }
        let plant = Self { n, m, nominal, delta, name: None };
        let zero_x = alloc::vec![0.0; n];
        let zero_u = alloc::vec![0.0; m];
        for i in 0..n {
            let f0 = plant.eval_nominal(i, &zero_x, &zero_u)?;
            if f0.abs() > ORIGIN_TOLERANCE {
                return Err(Error::InvalidPlant(format!("nominal[{i}](0, 0) = {f0}, expected 0")));
            }
            let d0 = plant.eval_delta(i, &zero_x, &zero_u)?;
            if d0.abs() > ORIGIN_TOLERANCE {
                return Err(Error::InvalidPlant(format!("delta[{i}](0, 0) = {d0}, expected 0")));
            }
        }
        Ok(plant)
    }

    /// Parses one expression per state dimension for `f̂` and `δ`.
    pub fn from_sources<S: AsRef<str>>(n: usize, m: usize, nominal: &[S], delta: &[S]) -> Result<Self> {
        let parse = |s: &S| {
            Expression::parse(s.as_ref(), n, m)
                .map_err(|error| Error::Parse { source_text: s.as_ref().into(), error })
        };
        let nominal = nominal.iter().map(parse).collect::<Result<Vec<_>>>()?;
        let delta = delta.iter().map(parse).collect::<Result<Vec<_>>>()?;
        Self::new(n, m, nominal, delta)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let canonical = ALIASES.iter().find(|(alias, _)| *alias == name).map_or(name, |(_, c)| *c);
        let (key, nominal, delta) = BUILTINS
            .iter()
            .find(|(key, _, _)| *key == canonical)
            .ok_or_else(|| Error::UnknownPlant { name: name.into(), available: Self::builtin_names().join(", ") })?;
        let mut plant = Self::from_sources(1, 1, &[*nominal], &[*delta])?;
        plant.name = Some((*key).into());
        Ok(plant)
    }

    pub fn builtin_names() -> Vec<&'static str> {
        BUILTINS.iter().map(|(k, _, _)| *k).chain(ALIASES.iter().map(|(a, _)| *a)).collect()
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn nominal(&self) -> &[Expression] {
        &self.nominal
    }

    pub fn delta(&self) -> &[Expression] {
        &self.delta
    }

    fn eval_nominal(&self, i: usize, x: &[f64], u: &[f64]) -> Result<f64> {
        self.nominal[i]
            .evaluate(x, u)
            .map_err(|source| Error::Eval { context: format!("nominal[{i}] {}", describe_point(x, u)), source })
    }

    fn eval_delta(&self, i: usize, x: &[f64], u: &[f64]) -> Result<f64> {
        self.delta[i]
            .evaluate(x, u)
            .map_err(|source| Error::Eval { context: format!("delta[{i}] {}", describe_point(x, u)), source })
    }

    fn check_dims(&self, x: &[f64], u: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::Dimension { expected: self.n, got: x.len() });
        }
        if u.len() != self.m {
            return Err(Error::Dimension { expected: self.m, got: u.len() });
        }
        Ok(())
    }

    /// `f̂(x, u)`.
    pub fn nominal_at(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(x, u)?;
        (0..self.n).map(|i| self.eval_nominal(i, x, u)).collect()
    }

    /// `δ(x, u)`; a negative component is a hard error.
    pub fn bound_at(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(x, u)?;
        (0..self.n)
            .map(|i| {
                let d = self.eval_delta(i, x, u)?;
                if d < 0.0 {
                    Err(Error::NegativeBound { value: d, context: describe_point(x, u) })
                } else {
                    Ok(d)
                }
            })
            .collect()
    }

    /// The box `[f̂ - δ, f̂ + δ]` holding every possible successor.
    pub fn successor_box(&self, x: &[f64], u: &[f64]) -> Result<SuccessorBox> {
        let center = self.nominal_at(x, u)?;
        let delta = self.bound_at(x, u)?;
        Ok(SuccessorBox {
            lower: center.iter().zip(&delta).map(|(c, d)| c - d).collect(),
            upper: center.iter().zip(&delta).map(|(c, d)| c + d).collect(),
        })
    }
}
