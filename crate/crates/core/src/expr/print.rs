use std::fmt;

use super::{BinOp, Expr};

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Binary(BinOp::Add | BinOp::Sub, ..) => 1,
        Expr::Binary(BinOp::Mul | BinOp::Div, ..) => 2,
        Expr::Neg(_) => 3,
        Expr::Num(v) if v.is_sign_negative() => 3,
        Expr::Binary(BinOp::Pow, ..) => 4,
        _ => 5,
    }
}

fn op_symbol(op: BinOp) -> &'static str {
    match op {
        BinOp::Add => "+",
        BinOp::Sub => "-",
        BinOp::Mul => "*",
        BinOp::Div => "/",
        BinOp::Pow => "^",
    }
}

fn write_wrapped(e: &Expr, wrap: bool, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if wrap {
        f.write_str("(")?;
        write_expr(e, f)?;
        f.write_str(")")
    } else {
        write_expr(e, f)
    }
}

fn write_number(v: f64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if v.is_nan() {
        f.write_str("(0/0)")
    } else if v.is_infinite() {
        f.write_str(if v > 0.0 { "(1/0)" } else { "(-1/0)" })
    } else {
        // Debug output is the shortest representation that parses back exactly.
        write!(f, "{v:?}")
    }
}

/// Writes the expression with the minimum parentheses needed to reparse to
/// the same tree.
pub(super) fn write_expr(e: &Expr, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match e {
        Expr::Num(v) if v.is_sign_negative() && *v != 0.0 => {
            f.write_str("-")?;
            write_number(-v, f)
        }
        Expr::Num(v) => write_number(*v, f),
        Expr::Var(n) | Expr::Param(n) => f.write_str(n),
        Expr::Neg(a) => {
            f.write_str("-")?;
            write_wrapped(a, precedence(a) < 3, f)
        }
        Expr::Call(func, a) => {
            write!(f, "{}(", func.name())?;
            write_expr(a, f)?;
            f.write_str(")")
        }
        Expr::Binary(op, a, b) => {
            let p = precedence(e);
            let (wrap_l, wrap_r) = if *op == BinOp::Pow {
                (precedence(a) <= 4, precedence(b) < 3)
            } else {
                (precedence(a) < p, precedence(b) <= p)
            };
            write_wrapped(a, wrap_l, f)?;
            f.write_str(op_symbol(*op))?;
            write_wrapped(b, wrap_r, f)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse;

    fn round_trip(s: &str) {
        let e = parse(s).unwrap();
        let printed = e.to_string();
        let again = parse(&printed).unwrap();
        assert_eq!(e, again, "{s} -> {printed}");
    }

    #[test]
    fn round_trips() {
        for s in [
            "v*cos(z1)",
            "z1^2 - a^2*t^2",
            "(a+b)*c",
            "a-(b-c)",
            "a/(b*c)",
            "(-a)^b",
            "a^(b+c)",
            "a^-b",
            "a^b^c",
            "(a^b)^c",
            "--x",
            "-(x+y)",
            "exp(-1/t^2)",
            "1e-7*x + 0.1",
            "flatstep(t)*z1",
        ] {
            round_trip(s);
        }
    }

    #[test]
    fn minimal_parentheses() {
        assert_eq!(parse("(a*b)+c").unwrap().to_string(), "a*b+c");
        assert_eq!(parse("a*(b+c)").unwrap().to_string(), "a*(b+c)");
        assert_eq!(parse("v*cos(z1)").unwrap().to_string(), "v*cos(z1)");
    }
}
