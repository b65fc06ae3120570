use super::{BinOp, Expr, ExprError, Func};

/// Parses `source`, treating every identifier as a variable.
pub fn parse(source: &str) -> Result<Expr, ExprError> {
    parse_with_params(source, &[] as &[&str])
}

/// Parses `source`; identifiers listed in `params` become [`Expr::Param`].
pub fn parse_with_params<S: AsRef<str>>(source: &str, params: &[S]) -> Result<Expr, ExprError> {
    let mut p = Parser {
        src: source.as_bytes(),
        pos: 0,
        params: params.iter().map(|s| s.as_ref()).collect(),
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    params: Vec<&'a str>,
}

impl<'a> Parser<'a> {
    fn error(&self, message: &str) -> ExprError {
        ExprError::Syntax {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(Expr::neg(inner));
        }
        self.power()
    }

    // `^` binds tighter than unary minus and is right-associative; its
    // exponent may carry a sign (`a^-b`).
    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Expr::binary(BinOp::Pow, base, exponent));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.error("expected `)`"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            Some(_) => Err(self.error("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        let s = self.src;
        let mut i = self.pos;
        while i < s.len() && s[i].is_ascii_digit() {
            i += 1;
        }
        if i < s.len() && s[i] == b'.' {
            i += 1;
            while i < s.len() && s[i].is_ascii_digit() {
                i += 1;
            }
        }
        if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
            let mut j = i + 1;
            if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
                j += 1;
            }
            if j < s.len() && s[j].is_ascii_digit() {
                while j < s.len() && s[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = std::str::from_utf8(&s[start..i]).expect("ascii slice");
        match text.parse::<f64>() {
            Ok(v) => {
                self.pos = i;
                Ok(Expr::Num(v))
            }
            Err(_) => Err(self.error("malformed number")),
        }
    }

    fn identifier(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        let s = self.src;
        let mut i = self.pos;
        while i < s.len() && (s[i].is_ascii_alphanumeric() || s[i] == b'_') {
            i += 1;
        }
        let name = std::str::from_utf8(&s[start..i]).expect("ascii slice");
        self.pos = i;
        if self.peek() == Some(b'(') {
            let func = Func::from_name(name).ok_or_else(|| ExprError::UnknownFunction {
                name: name.to_string(),
                offset: start,
            })?;
            self.pos += 1;
            let arg = self.expr()?;
            if self.peek() != Some(b')') {
                return Err(self.error("expected `)`"));
            }
            self.pos += 1;
            return Ok(Expr::call(func, arg));
        }
        if self.params.contains(&name) {
            Ok(Expr::Param(name.to_string()))
        } else {
            Ok(Expr::Var(name.to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_of_param_and_call() {
        let e = parse_with_params("v*cos(z1)", &["v"]).unwrap();
        let want = Expr::binary(
            BinOp::Mul,
            Expr::param("v"),
            Expr::call(Func::Cos, Expr::var("z1")),
        );
        assert_eq!(e, want);
    }

    #[test]
    fn precedence_case() {
        let e = parse_with_params("z1^2 - a^2*t^2", &["a"]).unwrap();
        let want = Expr::binary(
            BinOp::Sub,
            Expr::binary(BinOp::Pow, Expr::var("z1"), Expr::num(2.0)),
            Expr::binary(
                BinOp::Mul,
                Expr::binary(BinOp::Pow, Expr::param("a"), Expr::num(2.0)),
                Expr::binary(BinOp::Pow, Expr::var("t"), Expr::num(2.0)),
            ),
        );
        assert_eq!(e, want);
    }

    #[test]
    fn unbalanced_paren_reports_end_offset() {
        assert_eq!(
            parse("sin("),
            Err(ExprError::Syntax {
                offset: 4,
                message: "unexpected end of input".into()
            })
        );
        match parse("(x+1") {
            Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_function() {
        assert_eq!(
            parse("1 + abs(x)"),
            Err(ExprError::UnknownFunction {
                name: "abs".into(),
                offset: 4
            })
        );
    }

    #[test]
    fn power_is_right_associative_and_above_negation() {
        let e = parse("-a^b^c").unwrap();
        let want = Expr::neg(Expr::binary(
            BinOp::Pow,
            Expr::var("a"),
            Expr::binary(BinOp::Pow, Expr::var("b"), Expr::var("c")),
        ));
        assert_eq!(e, want);
        let e = parse("2^-x").unwrap();
        assert_eq!(
            e,
            Expr::binary(BinOp::Pow, Expr::num(2.0), Expr::neg(Expr::var("x")))
        );
    }

    #[test]
    fn subtraction_is_left_associative() {
        let e = parse("a-b-c").unwrap();
        let want = Expr::binary(
            BinOp::Sub,
            Expr::binary(BinOp::Sub, Expr::var("a"), Expr::var("b")),
            Expr::var("c"),
        );
        assert_eq!(e, want);
    }

    #[test]
    fn numbers() {
        assert_eq!(parse("1e-6").unwrap(), Expr::num(1e-6));
        assert_eq!(parse(".5").unwrap(), Expr::num(0.5));
        assert_eq!(parse("2.5E+3").unwrap(), Expr::num(2500.0));
        assert!(parse("x y").is_err());
        assert!(parse("3 +").is_err());
        assert!(parse("#").is_err());
    }

    #[test]
    fn flatstep_is_a_function() {
        let e = parse("flatstep(t)").unwrap();
        assert_eq!(e, Expr::call(Func::Flat(0), Expr::var("t")));
    }
}
