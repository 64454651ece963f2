//! Expression trees for implicit equations F(x, y, p) and their evaluation,
//! either as plain values or as degree-3 jets.
//!
//! The surface syntax is a small arithmetic grammar over the variables
//! `x`, `y`, `p`, free parameter names, the functions `sin`, `cos`, `exp`,
//! `ln`, and integer powers. See [`parse`].

mod jet;
mod parser;

pub use jet::{Jet3, MULTI_INDICES, N_COEFFS};
pub use parser::{parse, ParseError};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

/// One of the three distinguished variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
    P,
}

/// Built-in univariate functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Ln => "ln",
        }
    }
}

/// Binary arithmetic operators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Expression tree over x, y, p and named parameters.
///
/// Invariants: `Pow` exponents are integers, and a negative exponent only
/// appears over a constant, nonzero base (enforced by the parser). Every
/// parameter must be bound before evaluation.
#[derive(Clone, Debug, PartialEq)]
pub enum ExprAst {
    Num(f64),
    Var(Var),
    Param(String),
    Neg(Box<ExprAst>),
    Func(Func, Box<ExprAst>),
    Bin(BinOp, Box<ExprAst>, Box<ExprAst>),
    Pow(Box<ExprAst>, i32),
}

/// Evaluation failures.
#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("parameter `{0}` has no binding")]
    UnboundParam(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("evaluation produced a non-finite value")]
    NonFinite,
}

impl ExprAst {
    /// Names of all parameters appearing in the tree.
    pub fn param_names(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_params(&mut out);
        out
    }

    fn collect_params(&self, out: &mut BTreeSet<String>) {
        match self {
            ExprAst::Param(name) => {
                out.insert(name.clone());
            }
            ExprAst::Neg(e) | ExprAst::Func(_, e) | ExprAst::Pow(e, _) => e.collect_params(out),
            ExprAst::Bin(_, l, r) => {
                l.collect_params(out);
                r.collect_params(out);
            }
            _ => {}
        }
    }

    /// Constant value of the subtree, folding only literals and negation.
    pub fn const_value(&self) -> Option<f64> {
        match self {
            ExprAst::Num(v) => Some(*v),
            ExprAst::Neg(e) => e.const_value().map(|v| -v),
            _ => None,
        }
    }

    /// Plain value of the expression at a point.
    pub fn eval_scalar(
        &self,
        params: &BTreeMap<String, f64>,
        point: [f64; 3],
    ) -> Result<f64, EvalError> {
        let v = self.eval_scalar_inner(params, point)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    fn eval_scalar_inner(
        &self,
        params: &BTreeMap<String, f64>,
        point: [f64; 3],
    ) -> Result<f64, EvalError> {
        Ok(match self {
            ExprAst::Num(v) => *v,
            ExprAst::Var(Var::X) => point[0],
            ExprAst::Var(Var::Y) => point[1],
            ExprAst::Var(Var::P) => point[2],
            ExprAst::Param(name) => *params
                .get(name)
                .ok_or_else(|| EvalError::UnboundParam(name.clone()))?,
            ExprAst::Neg(e) => -e.eval_scalar_inner(params, point)?,
            ExprAst::Func(f, e) => {
                let v = e.eval_scalar_inner(params, point)?;
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                    Func::Ln => {
                        if v > 0.0 {
                            v.ln()
                        } else {
                            return Err(EvalError::Domain(format!("ln of {v}")));
                        }
                    }
                }
            }
            ExprAst::Bin(op, l, r) => {
                let a = l.eval_scalar_inner(params, point)?;
                let b = r.eval_scalar_inner(params, point)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(EvalError::Domain("division by zero".into()));
                        }
                        a / b
                    }
                }
            }
            ExprAst::Pow(base, n) => {
                let b = base.eval_scalar_inner(params, point)?;
                if *n < 0 && b == 0.0 {
                    return Err(EvalError::Domain("zero base with negative exponent".into()));
                }
                b.powi(*n)
            }
        })
    }

    /// Degree-3 jet of the expression at a center point.
    pub fn eval_jet(
        &self,
        params: &BTreeMap<String, f64>,
        center: [f64; 3],
    ) -> Result<Jet3, EvalError> {
        let jet = self.eval_jet_inner(params, center)?;
        if jet.is_finite() {
            Ok(jet)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    fn eval_jet_inner(
        &self,
        params: &BTreeMap<String, f64>,
        center: [f64; 3],
    ) -> Result<Jet3, EvalError> {
        Ok(match self {
            ExprAst::Num(v) => Jet3::constant(*v, center),
            ExprAst::Var(Var::X) => Jet3::variable(0, center),
            ExprAst::Var(Var::Y) => Jet3::variable(1, center),
            ExprAst::Var(Var::P) => Jet3::variable(2, center),
            ExprAst::Param(name) => Jet3::constant(
                *params
                    .get(name)
                    .ok_or_else(|| EvalError::UnboundParam(name.clone()))?,
                center,
            ),
            ExprAst::Neg(e) => e.eval_jet_inner(params, center)?.neg(),
            ExprAst::Func(f, e) => {
                let g = e.eval_jet_inner(params, center)?;
                match f {
                    Func::Sin => g.sin(),
                    Func::Cos => g.cos(),
                    Func::Exp => g.exp(),
                    Func::Ln => g
                        .ln()
                        .ok_or_else(|| EvalError::Domain(format!("ln of {}", g.value())))?,
                }
            }
            ExprAst::Bin(op, l, r) => {
                let a = l.eval_jet_inner(params, center)?;
                let b = r.eval_jet_inner(params, center)?;
                match op {
                    BinOp::Add => a.add(&b),
                    BinOp::Sub => a.sub(&b),
                    BinOp::Mul => a.mul(&b),
                    BinOp::Div => a
                        .div(&b)
                        .ok_or_else(|| EvalError::Domain("division by zero".into()))?,
                }
            }
            ExprAst::Pow(base, n) => {
                let b = base.eval_jet_inner(params, center)?;
                b.powi(*n)
                    .ok_or_else(|| EvalError::Domain("zero base with negative exponent".into()))?
            }
        })
    }

    fn precedence(&self) -> u8 {
        match self {
            ExprAst::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            ExprAst::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            ExprAst::Neg(_) => 3,
            ExprAst::Pow(..) => 4,
            _ => 5,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let prec = self.precedence();
        if prec < min {
            write!(f, "(")?;
        }
        match self {
            ExprAst::Num(v) => write!(f, "{v}")?,
            ExprAst::Var(Var::X) => write!(f, "x")?,
            ExprAst::Var(Var::Y) => write!(f, "y")?,
            ExprAst::Var(Var::P) => write!(f, "p")?,
            ExprAst::Param(name) => write!(f, "{name}")?,
            ExprAst::Neg(e) => {
                write!(f, "-")?;
                e.fmt_prec(f, 3)?;
            }
            ExprAst::Func(func, e) => {
                write!(f, "{}(", func.name())?;
                e.fmt_prec(f, 0)?;
                write!(f, ")")?;
            }
            ExprAst::Bin(op, l, r) => {
                let sym = match op {
                    BinOp::Add => " + ",
                    BinOp::Sub => " - ",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                };
                l.fmt_prec(f, prec)?;
                write!(f, "{sym}")?;
                r.fmt_prec(f, prec + 1)?;
            }
            ExprAst::Pow(base, n) => {
                base.fmt_prec(f, 5)?;
                write!(f, "^{n}")?;
            }
        }
        if prec < min {
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl fmt::Display for ExprAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn no_params() -> BTreeMap<String, f64> {
        BTreeMap::new()
    }

    #[test]
    fn jet_of_fold_example() {
        // F = p^2 - x at the origin.
        let ast = parse("p^2 - x").unwrap();
        let j = ast.eval_jet(&no_params(), [0.0; 3]).unwrap();
        assert_eq!(j.value(), 0.0);
        assert_eq!(j.dp(), 0.0);
        assert_eq!(j.dx(), -1.0);
        assert_eq!(j.dpp(), 2.0);
        assert_eq!(j.dy(), 0.0);
        assert_eq!(j.dppp(), 0.0);
    }

    #[test]
    fn jet_of_cusp_family_example() {
        // F = 2xp - p^3/3 - y at the origin.
        let ast = parse("2*x*p - p^3/3 - y").unwrap();
        let j = ast.eval_jet(&no_params(), [0.0; 3]).unwrap();
        assert_eq!(j.dxp(), 2.0);
        assert_eq!(j.dppp(), -2.0);
        assert_eq!(j.dy(), -1.0);
        assert_eq!(j.dp(), 0.0);
        assert_eq!(j.dx(), 0.0);
        assert_eq!(j.dpp(), 0.0);
    }

    #[test]
    fn jet_of_product_transcendental_closed_form() {
        // F = sin(p) * exp(x): every partial is exp(x) times a shifted sine.
        let ast = parse("sin(p)*exp(x)").unwrap();
        let center = [0.37, -0.82, 1.21];
        let j = ast.eval_jet(&no_params(), center).unwrap();
        let ex = center[0].exp();
        let (s, c) = center[2].sin_cos();
        let trig = [s, c, -s, -c];
        for &(i, jj, k) in MULTI_INDICES.iter() {
            let expected = if jj > 0 {
                0.0
            } else {
                ex * trig[(k % 4) as usize]
            };
            assert_relative_eq!(
                j.partial(i, jj, k),
                expected,
                epsilon = 1e-12,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn unbound_parameter_is_reported() {
        let ast = parse("b*x - y").unwrap();
        let err = ast.eval_jet(&no_params(), [0.0; 3]).unwrap_err();
        assert_eq!(err, EvalError::UnboundParam("b".into()));
    }

    #[test]
    fn scalar_and_jet_values_agree() {
        let ast = parse("cos(x*p) + ln(2 + y) - p/(1 + x^2)").unwrap();
        let pt = [0.3, 0.4, -0.2];
        let v = ast.eval_scalar(&no_params(), pt).unwrap();
        let j = ast.eval_jet(&no_params(), pt).unwrap();
        assert_relative_eq!(v, j.value(), epsilon = 1e-14);
    }

    #[test]
    fn domain_errors_surface() {
        let ast = parse("ln(x)").unwrap();
        assert!(matches!(
            ast.eval_scalar(&no_params(), [-1.0, 0.0, 0.0]),
            Err(EvalError::Domain(_))
        ));
        let ast = parse("1/x").unwrap();
        assert!(matches!(
            ast.eval_jet(&no_params(), [0.0; 3]),
            Err(EvalError::Domain(_))
        ));
    }

    #[test]
    fn display_round_trips_structures() {
        for src in [
            "b*x*p - p^3/3 - y",
            "(p - x)^2 - y",
            "-(x + y)*p",
            "x - (y - p)",
            "sin(x)^2 + cos(x)^2",
            "1/(1 + x)^2",
            "2^-1*x",
        ] {
            let ast = parse(src).unwrap();
            let printed = ast.to_string();
            let reparsed = parse(&printed).unwrap();
            assert_eq!(ast, reparsed, "round trip failed for {src} -> {printed}");
        }
    }
}
