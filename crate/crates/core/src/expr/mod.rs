//! Scalar expressions: parsing, printing, evaluation and exact symbolic
//! differentiation.
//!
//! Every user-supplied function of the toolkit (the constraint map, the
//! Lagrangian, extrinsic constraints, gauge functions) is an [`Expr`].
//! Identifiers are split at parse time into variables and parameters; the
//! parameter set is supplied by the caller.

mod diff;
mod eval;
mod parse;
mod print;

use std::fmt;
use std::sync::Arc;

pub(crate) use diff::{add, mul};
pub use eval::{CompiledExpr, Environment};
pub use parse::{parse, parse_with_params};

/// Unary built-in functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Sinh,
    Cosh,
    Tanh,
    Atan,
    /// k-th derivative of the flat step `exp(-1/u^2)` for `u < 0`, `0` for `u >= 0`.
    /// `Flat(0)` is spelled `flatstep`, higher orders `flatstep_d<k>`.
    Flat(u32),
}

impl Func {
    pub fn from_name(name: &str) -> Option<Func> {
        let f = match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "tanh" => Func::Tanh,
            "atan" => Func::Atan,
            "flatstep" => Func::Flat(0),
            _ => {
                let order = name.strip_prefix("flatstep_d")?;
                if order.is_empty() || !order.bytes().all(|b| b.is_ascii_digit()) {
                    return None;
                }
                Func::Flat(order.parse().ok()?)
            }
        };
        Some(f)
    }

    pub fn name(&self) -> String {
        match self {
            Func::Sin => "sin".into(),
            Func::Cos => "cos".into(),
            Func::Tan => "tan".into(),
            Func::Exp => "exp".into(),
            Func::Log => "log".into(),
            Func::Sqrt => "sqrt".into(),
            Func::Sinh => "sinh".into(),
            Func::Cosh => "cosh".into(),
            Func::Tanh => "tanh".into(),
            Func::Atan => "atan".into(),
            Func::Flat(0) => "flatstep".into(),
            Func::Flat(k) => format!("flatstep_d{k}"),
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tan => x.tan(),
            Func::Exp => x.exp(),
            Func::Log => x.ln(),
            Func::Sqrt => x.sqrt(),
            Func::Sinh => x.sinh(),
            Func::Cosh => x.cosh(),
            Func::Tanh => x.tanh(),
            Func::Atan => x.atan(),
            Func::Flat(k) => flat_derivative(*k, x),
        }
    }
}

/// k-th derivative of `exp(-1/x^2)` (x < 0), identically zero for x >= 0.
///
/// With `u = 1/x` the derivative is `Q_k(u) exp(-u^2)` where
/// `Q_{k+1}(u) = -u^2 (Q_k'(u) - 2u Q_k(u))`, `Q_0 = 1`.
fn flat_derivative(k: u32, x: f64) -> f64 {
    if x.is_nan() {
        return x;
    }
    if x >= 0.0 {
        return 0.0;
    }
    let u = 1.0 / x;
    let damp = (-u * u).exp();
    if damp == 0.0 {
        return 0.0;
    }
    let mut coeffs = vec![1.0_f64];
    for _ in 0..k {
        let mut next = vec![0.0; coeffs.len() + 3];
        for (j, &c) in coeffs.iter().enumerate() {
            // -u^2 * d/du (c u^j) = -j c u^{j+1}
            if j > 0 {
                next[j + 1] -= j as f64 * c;
            }
            // -u^2 * (-2u) c u^j = 2 c u^{j+3}
            next[j + 3] += 2.0 * c;
        }
        coeffs = next;
    }
    let poly = coeffs.iter().rev().fold(0.0, |acc, &c| acc * u + c);
    poly * damp
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Expression tree. Subtrees are shared through `Arc`, so cloning is cheap
/// and derivative trees reuse the nodes of their source.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Param(String),
    Neg(Arc<Expr>),
    Binary(BinOp, Arc<Expr>, Arc<Expr>),
    Call(Func, Arc<Expr>),
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn param(name: impl Into<String>) -> Expr {
        Expr::Param(name.into())
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Arc::new(lhs), Arc::new(rhs))
    }

    pub fn call(f: Func, arg: Expr) -> Expr {
        Expr::Call(f, Arc::new(arg))
    }

    pub fn neg(e: Expr) -> Expr {
        Expr::Neg(Arc::new(e))
    }

    /// Exact symbolic derivative with respect to the variable `var`.
    /// Parameters are constants.
    pub fn differentiate(&self, var: &str) -> Expr {
        diff::derivative(self, var)
    }

    /// Evaluates against an environment of variable and parameter bindings.
    pub fn evaluate(&self, env: &Environment) -> Result<f64, ExprError> {
        eval::evaluate(self, env)
    }

    /// Names of free variables, sorted and deduplicated.
    pub fn variables(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect(&mut out, false);
        out.sort();
        out.dedup();
        out
    }

    /// Names of parameters, sorted and deduplicated.
    pub fn parameters(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect(&mut out, true);
        out.sort();
        out.dedup();
        out
    }

    fn collect(&self, out: &mut Vec<String>, params: bool) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(n) if !params => out.push(n.clone()),
            Expr::Param(n) if params => out.push(n.clone()),
            Expr::Var(_) | Expr::Param(_) => {}
            Expr::Neg(a) | Expr::Call(_, a) => a.collect(out, params),
            Expr::Binary(_, a, b) => {
                a.collect(out, params);
                b.collect(out, params);
            }
        }
    }

    /// True when the expression is the literal zero.
    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 0.0)
    }

    /// Number of nodes in the tree.
    pub fn size(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::Var(_) | Expr::Param(_) => 1,
            Expr::Neg(a) | Expr::Call(_, a) => 1 + a.size(),
            Expr::Binary(_, a, b) => 1 + a.size() + b.size(),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        print::write_expr(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown function `{name}` at offset {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("unbound symbol `{0}`")]
    UnboundSymbol(String),
}
