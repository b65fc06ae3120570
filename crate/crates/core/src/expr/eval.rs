use std::collections::HashMap;

use super::{BinOp, Expr, ExprError, Func};

/// Named bindings for variables and parameters. Both share one namespace.
#[derive(Clone, Debug, Default)]
pub struct Environment {
    values: HashMap<String, f64>,
}

impl Environment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, name: &str, value: f64) -> &mut Self {
        self.values.insert(name.to_string(), value);
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }
}

impl<S: Into<String>> FromIterator<(S, f64)> for Environment {
    fn from_iter<I: IntoIterator<Item = (S, f64)>>(iter: I) -> Self {
        Environment {
            values: iter.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }
}

fn binary(op: BinOp, x: f64, y: f64) -> f64 {
    match op {
        BinOp::Add => x + y,
        BinOp::Sub => x - y,
        BinOp::Mul => x * y,
        BinOp::Div => x / y,
        BinOp::Pow => power(x, y),
    }
}

fn power(x: f64, y: f64) -> f64 {
    if y.fract() == 0.0 && y.abs() <= 64.0 {
        x.powi(y as i32)
    } else {
        x.powf(y)
    }
}

pub(super) fn evaluate(e: &Expr, env: &Environment) -> Result<f64, ExprError> {
    Ok(match e {
        Expr::Num(v) => *v,
        Expr::Var(n) | Expr::Param(n) => env
            .get(n)
            .ok_or_else(|| ExprError::UnboundSymbol(n.clone()))?,
        Expr::Neg(a) => -evaluate(a, env)?,
        Expr::Binary(op, a, b) => binary(*op, evaluate(a, env)?, evaluate(b, env)?),
        Expr::Call(f, a) => f.apply(evaluate(a, env)?),
    })
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Const(f64),
    Slot(usize),
    Neg,
    Bin(BinOp),
    Square,
    Call(Func),
}

/// Expression flattened to a postfix program over an indexed slot vector.
///
/// Variables are resolved to positions in the slot list given at compile
/// time; parameters are folded into constants.
#[derive(Clone, Debug)]
pub struct CompiledExpr {
    ops: Vec<Op>,
    depth: usize,
}

const INLINE_STACK: usize = 32;

impl CompiledExpr {
    pub fn compile<S: AsRef<str>>(
        expr: &Expr,
        slots: &[S],
        params: &HashMap<String, f64>,
    ) -> Result<CompiledExpr, ExprError> {
        let mut ops = Vec::with_capacity(expr.size());
        emit(expr, slots, params, &mut ops)?;
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        for op in &ops {
            match op {
                Op::Const(_) | Op::Slot(_) => depth += 1,
                Op::Bin(_) => depth -= 1,
                _ => {}
            }
            max_depth = max_depth.max(depth);
        }
        Ok(CompiledExpr {
            ops,
            depth: max_depth,
        })
    }

    /// Constant program (used for identically zero derivatives).
    pub fn constant(v: f64) -> CompiledExpr {
        CompiledExpr {
            ops: vec![Op::Const(v)],
            depth: 1,
        }
    }

    pub fn is_constant_zero(&self) -> bool {
        matches!(self.ops.as_slice(), [Op::Const(v)] if *v == 0.0)
    }

    pub fn eval(&self, slots: &[f64]) -> f64 {
        if let [Op::Const(v)] = self.ops.as_slice() {
            return *v;
        }
        if self.depth <= INLINE_STACK {
            let mut stack = [0.0; INLINE_STACK];
            run(&self.ops, slots, &mut stack)
        } else {
            let mut stack = vec![0.0; self.depth];
            run(&self.ops, slots, &mut stack)
        }
    }
}

fn run(ops: &[Op], slots: &[f64], stack: &mut [f64]) -> f64 {
    let mut sp = 0usize;
    for op in ops {
        match *op {
            Op::Const(v) => {
                stack[sp] = v;
                sp += 1;
            }
            Op::Slot(i) => {
                stack[sp] = slots[i];
                sp += 1;
            }
            Op::Neg => stack[sp - 1] = -stack[sp - 1],
            Op::Square => stack[sp - 1] *= stack[sp - 1],
            Op::Call(f) => stack[sp - 1] = f.apply(stack[sp - 1]),
            Op::Bin(b) => {
                sp -= 1;
                stack[sp - 1] = binary(b, stack[sp - 1], stack[sp]);
            }
        }
    }
    stack[0]
}

fn emit<S: AsRef<str>>(
    e: &Expr,
    slots: &[S],
    params: &HashMap<String, f64>,
    ops: &mut Vec<Op>,
) -> Result<(), ExprError> {
    match e {
        Expr::Num(v) => ops.push(Op::Const(*v)),
        Expr::Param(n) => {
            let v = params
                .get(n)
                .ok_or_else(|| ExprError::UnboundSymbol(n.clone()))?;
            ops.push(Op::Const(*v));
        }
        Expr::Var(n) => {
            let i = slots
                .iter()
                .position(|s| s.as_ref() == n)
                .ok_or_else(|| ExprError::UnboundSymbol(n.clone()))?;
            ops.push(Op::Slot(i));
        }
        Expr::Neg(a) => {
            emit(a, slots, params, ops)?;
            ops.push(Op::Neg);
        }
        Expr::Call(f, a) => {
            emit(a, slots, params, ops)?;
            ops.push(Op::Call(*f));
        }
        Expr::Binary(BinOp::Pow, a, b) if matches!(b.as_ref(), Expr::Num(v) if *v == 2.0) => {
            emit(a, slots, params, ops)?;
            ops.push(Op::Square);
        }
        Expr::Binary(op, a, b) => {
            emit(a, slots, params, ops)?;
            emit(b, slots, params, ops)?;
            ops.push(Op::Bin(*op));
        }
    }
    Ok(())
}
