use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use super::expr::{BinOp, Expr, Func};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound variable {0:?}")]
    UnboundVariable(String),
    #[error("division by zero")]
    DivisionByZero,
    #[error("log of non-positive value {0}")]
    LogDomain(f64),
    #[error("sqrt of negative value {0}")]
    SqrtDomain(f64),
    #[error("non-integer power {exponent} of non-positive base {base}")]
    PowDomain { base: f64, exponent: f64 },
    #[error("evaluation produced NaN")]
    NotANumber,
}

/// Variable lookup used by [`eval`].
pub trait Bindings {
    fn lookup(&self, name: &str) -> Option<f64>;
}

impl Bindings for HashMap<String, f64> {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl Bindings for BTreeMap<String, f64> {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl Bindings for [(&str, f64)] {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.iter().find(|(n, _)| *n == name).map(|(_, x)| *x)
    }
}

impl<const N: usize> Bindings for [(&str, f64); N] {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.as_slice().lookup(name)
    }
}

/// Names paired positionally with a value slice.
pub struct NamedSlice<'a> {
    pub names: &'a [String],
    pub values: &'a [f64],
}

impl Bindings for NamedSlice<'_> {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .and_then(|i| self.values.get(i).copied())
    }
}

pub(crate) fn apply_func(f: Func, x: f64) -> Result<f64, EvalError> {
    match f {
        Func::Sin => Ok(x.sin()),
        Func::Cos => Ok(x.cos()),
        Func::Exp => Ok(x.exp()),
        Func::Log => {
            if x > 0.0 {
                Ok(x.ln())
            } else {
                Err(EvalError::LogDomain(x))
            }
        }
        Func::Sqrt => {
            if x >= 0.0 {
                Ok(x.sqrt())
            } else {
                Err(EvalError::SqrtDomain(x))
            }
        }
    }
}

pub(crate) fn apply_binary(op: BinOp, a: f64, b: f64) -> Result<f64, EvalError> {
    match op {
        BinOp::Add => Ok(a + b),
        BinOp::Sub => Ok(a - b),
        BinOp::Mul => Ok(a * b),
        BinOp::Div => {
            if b == 0.0 {
                Err(EvalError::DivisionByZero)
            } else {
                Ok(a / b)
            }
        }
    }
}

pub(crate) fn apply_pow(base: f64, e: f64) -> Result<f64, EvalError> {
    if e.fract() == 0.0 && e.abs() <= i32::MAX as f64 {
        if base == 0.0 && e < 0.0 {
            return Err(EvalError::DivisionByZero);
        }
        Ok(base.powi(e as i32))
    } else if base > 0.0 {
        Ok((e * base.ln()).exp())
    } else {
        Err(EvalError::PowDomain { base, exponent: e })
    }
}

fn finite_check(x: f64) -> Result<f64, EvalError> {
    if x.is_nan() {
        Err(EvalError::NotANumber)
    } else {
        Ok(x)
    }
}

/// Evaluates `e` in IEEE double precision.
pub fn eval<B: Bindings + ?Sized>(e: &Expr, bindings: &B) -> Result<f64, EvalError> {
    let x = match e {
        Expr::Const(c) => *c,
        Expr::Var(v) => bindings
            .lookup(v)
            .ok_or_else(|| EvalError::UnboundVariable(v.clone()))?,
        Expr::Neg(a) => -eval(a, bindings)?,
        Expr::Call(f, a) => apply_func(*f, eval(a, bindings)?)?,
        Expr::Pow(a, p) => apply_pow(eval(a, bindings)?, *p)?,
        Expr::Binary(op, a, b) => apply_binary(*op, eval(a, bindings)?, eval(b, bindings)?)?,
    };
    finite_check(x)
}

/// An expression whose variables have been resolved to positions in a fixed
/// coordinate list, so evaluation needs no name lookups.
#[derive(Debug, Clone, PartialEq)]
pub enum Compiled {
    Const(f64),
    Slot(usize),
    Neg(Box<Compiled>),
    Call(Func, Box<Compiled>),
    Binary(BinOp, Box<Compiled>, Box<Compiled>),
    Pow(Box<Compiled>, f64),
}

impl Compiled {
    /// Resolves every variable of `e` against `coords`.
    pub fn new(e: &Expr, coords: &[String]) -> Result<Compiled, EvalError> {
        Ok(match e {
            Expr::Const(c) => Compiled::Const(*c),
            Expr::Var(v) => Compiled::Slot(
                coords
                    .iter()
                    .position(|c| c == v)
                    .ok_or_else(|| EvalError::UnboundVariable(v.clone()))?,
            ),
            Expr::Neg(a) => Compiled::Neg(Box::new(Compiled::new(a, coords)?)),
            Expr::Call(f, a) => Compiled::Call(*f, Box::new(Compiled::new(a, coords)?)),
            Expr::Pow(a, p) => Compiled::Pow(Box::new(Compiled::new(a, coords)?), *p),
            Expr::Binary(op, a, b) => Compiled::Binary(
                *op,
                Box::new(Compiled::new(a, coords)?),
                Box::new(Compiled::new(b, coords)?),
            ),
        })
    }

    /// Evaluates at `point`, whose entries follow the coordinate list the
    /// expression was compiled against. Extra trailing entries are ignored.
    pub fn eval(&self, point: &[f64]) -> Result<f64, EvalError> {
        let x = match self {
            Compiled::Const(c) => *c,
            Compiled::Slot(i) => point[*i],
            Compiled::Neg(a) => -a.eval(point)?,
            Compiled::Call(f, a) => apply_func(*f, a.eval(point)?)?,
            Compiled::Pow(a, p) => apply_pow(a.eval(point)?, *p)?,
            Compiled::Binary(op, a, b) => apply_binary(*op, a.eval(point)?, b.eval(point)?)?,
        };
        finite_check(x)
    }

    /// Largest slot index referenced, if any.
    pub fn max_slot(&self) -> Option<usize> {
        match self {
            Compiled::Const(_) => None,
            Compiled::Slot(i) => Some(*i),
            Compiled::Neg(a) | Compiled::Call(_, a) | Compiled::Pow(a, _) => a.max_slot(),
            Compiled::Binary(_, a, b) => match (a.max_slot(), b.max_slot()) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, y) => x.or(y),
            },
        }
    }
}
