use std::sync::Arc;

use super::{BinOp, Expr, Func};

fn depends_on(e: &Expr, var: &str) -> bool {
    match e {
        Expr::Num(_) | Expr::Param(_) => false,
        Expr::Var(n) => n == var,
        Expr::Neg(a) | Expr::Call(_, a) => depends_on(a, var),
        Expr::Binary(_, a, b) => depends_on(a, var) || depends_on(b, var),
    }
}

fn num_of(e: &Expr) -> Option<f64> {
    match e {
        Expr::Num(v) => Some(*v),
        _ => None,
    }
}

pub(crate) fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(v) => Expr::Num(-v),
        Expr::Neg(inner) => Arc::unwrap_or_clone(inner),
        other => Expr::neg(other),
    }
}

pub(crate) fn add(a: Expr, b: Expr) -> Expr {
    match (num_of(&a), num_of(&b)) {
        (Some(x), Some(y)) => Expr::Num(x + y),
        (Some(x), _) if x == 0.0 => b,
        (_, Some(y)) if y == 0.0 => a,
        _ => match b {
            Expr::Neg(inner) => Expr::Binary(BinOp::Sub, Arc::new(a), inner),
            b => Expr::binary(BinOp::Add, a, b),
        },
    }
}

pub(crate) fn sub(a: Expr, b: Expr) -> Expr {
    match (num_of(&a), num_of(&b)) {
        (Some(x), Some(y)) => Expr::Num(x - y),
        (Some(x), _) if x == 0.0 => neg(b),
        (_, Some(y)) if y == 0.0 => a,
        _ => Expr::binary(BinOp::Sub, a, b),
    }
}

pub(crate) fn mul(a: Expr, b: Expr) -> Expr {
    match (num_of(&a), num_of(&b)) {
        (Some(x), Some(y)) => Expr::Num(x * y),
        (Some(x), _) | (_, Some(x)) if x == 0.0 => Expr::Num(0.0),
        (Some(x), _) if x == 1.0 => b,
        (_, Some(y)) if y == 1.0 => a,
        (Some(x), _) if x == -1.0 => neg(b),
        (_, Some(y)) if y == -1.0 => neg(a),
        _ => Expr::binary(BinOp::Mul, a, b),
    }
}

pub(crate) fn div(a: Expr, b: Expr) -> Expr {
    match (num_of(&a), num_of(&b)) {
        (Some(x), Some(y)) if y != 0.0 => Expr::Num(x / y),
        (Some(x), _) if x == 0.0 => Expr::Num(0.0),
        (_, Some(y)) if y == 1.0 => a,
        _ => Expr::binary(BinOp::Div, a, b),
    }
}

pub(crate) fn pow(a: Expr, b: Expr) -> Expr {
    match (num_of(&a), num_of(&b)) {
        (Some(x), Some(y)) => Expr::Num(x.powf(y)),
        (_, Some(y)) if y == 0.0 => Expr::Num(1.0),
        (_, Some(y)) if y == 1.0 => a,
        _ => Expr::binary(BinOp::Pow, a, b),
    }
}

fn call(f: Func, a: Expr) -> Expr {
    match a {
        Expr::Num(v) => Expr::Num(f.apply(v)),
        a => Expr::call(f, a),
    }
}

pub(super) fn derivative(e: &Expr, var: &str) -> Expr {
    if !depends_on(e, var) {
        return Expr::Num(0.0);
    }
    match e {
        Expr::Num(_) | Expr::Param(_) => Expr::Num(0.0),
        Expr::Var(_) => Expr::Num(1.0),
        Expr::Neg(a) => neg(derivative(a, var)),
        Expr::Binary(op, a, b) => {
            let (a, b) = (a.as_ref(), b.as_ref());
            match op {
                BinOp::Add => add(derivative(a, var), derivative(b, var)),
                BinOp::Sub => sub(derivative(a, var), derivative(b, var)),
                BinOp::Mul => add(
                    mul(derivative(a, var), b.clone()),
                    mul(a.clone(), derivative(b, var)),
                ),
                BinOp::Div => {
                    let da = derivative(a, var);
                    if !depends_on(b, var) {
                        return div(da, b.clone());
                    }
                    let num = sub(mul(da, b.clone()), mul(a.clone(), derivative(b, var)));
                    div(num, pow(b.clone(), Expr::Num(2.0)))
                }
                BinOp::Pow => {
                    let da = derivative(a, var);
                    if !depends_on(b, var) {
                        let lowered = sub(b.clone(), Expr::Num(1.0));
                        return mul(mul(b.clone(), pow(a.clone(), lowered)), da);
                    }
                    // d(a^b) = a^b (b' ln a + b a'/a)
                    let db = derivative(b, var);
                    let inner = add(
                        mul(db, call(Func::Log, a.clone())),
                        mul(b.clone(), div(da, a.clone())),
                    );
                    mul(e.clone(), inner)
                }
            }
        }
        Expr::Call(f, a) => {
            let a = a.as_ref();
            let outer = match f {
                Func::Sin => call(Func::Cos, a.clone()),
                Func::Cos => neg(call(Func::Sin, a.clone())),
                Func::Tan => add(
                    Expr::Num(1.0),
                    pow(call(Func::Tan, a.clone()), Expr::Num(2.0)),
                ),
                Func::Exp => e.clone(),
                Func::Log => div(Expr::Num(1.0), a.clone()),
                Func::Sqrt => div(Expr::Num(0.5), e.clone()),
                Func::Sinh => call(Func::Cosh, a.clone()),
                Func::Cosh => call(Func::Sinh, a.clone()),
                Func::Tanh => sub(
                    Expr::Num(1.0),
                    pow(call(Func::Tanh, a.clone()), Expr::Num(2.0)),
                ),
                Func::Atan => div(
                    Expr::Num(1.0),
                    add(Expr::Num(1.0), pow(a.clone(), Expr::Num(2.0))),
                ),
                Func::Flat(k) => call(Func::Flat(k + 1), a.clone()),
            };
            mul(outer, derivative(a, var))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{parse, parse_with_params, Environment};
    use super::*;

    fn env(pairs: &[(&str, f64)]) -> Environment {
        let mut env = Environment::new();
        for (k, v) in pairs {
            env.set(k, *v);
        }
        env
    }

    #[test]
    fn derivative_of_cosine_term() {
        let e = parse_with_params("v*cos(z1)", &["v"]).unwrap();
        let d = e.differentiate("z1");
        let env = env(&[("v", 2.0), ("z1", 0.3)]);
        let want = -2.0 * 0.3_f64.sin();
        assert!((d.evaluate(&env).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn constants_fold_away() {
        let e = parse("x^2").unwrap();
        assert_eq!(e.differentiate("x").to_string(), "2.0*x");
        assert_eq!(e.differentiate("y"), Expr::Num(0.0));
        let e = parse_with_params("a*x + b", &["a", "b"]).unwrap();
        assert_eq!(e.differentiate("x"), Expr::param("a"));
    }

    #[test]
    fn variable_exponent() {
        let e = parse("x^y").unwrap();
        let env = env(&[("x", 1.7), ("y", 0.6)]);
        let dy = e.differentiate("y").evaluate(&env).unwrap();
        assert!((dy - 1.7_f64.powf(0.6) * 1.7_f64.ln()).abs() < 1e-14);
        let dx = e.differentiate("x").evaluate(&env).unwrap();
        assert!((dx - 0.6 * 1.7_f64.powf(-0.4)).abs() < 1e-14);
    }

    #[test]
    fn flatstep_chain() {
        let e = parse("flatstep(2*t)").unwrap();
        let d = e.differentiate("t");
        assert_eq!(d.to_string(), "flatstep_d1(2.0*t)*2.0");
    }
}
