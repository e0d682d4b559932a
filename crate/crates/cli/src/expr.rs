//! Call-style expressions for parameter processes and observables.
//!
//! Grammar: `expr := number | name | name "(" [expr ("," expr)*] ")"`.
//! Parameter processes: `const(c)`, `affine(offset, slope)`,
//! `sin(mean, amp[, freq[, phase]])`, `step(v0, v1, ...)`, or a bare number.
//! Observables: `const(c)`, `cos(amp, freq)`, `sin(amp, freq)`, `pow(coef, exp)`,
//! `poly(c0, c1, ...)`, `sum(e, ...)`, `product(a, b)`, plus the names
//! `cos2pi`, `x` and `identity`.

use qlsv_core::base::ParamExpr;
use qlsv_core::profile::Profile;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Name(String),
    Call(String, Vec<Node>),
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, reason: impl Into<String>) -> CliError {
        CliError::Expr {
            expr: self.src.to_string(),
            reason: format!("{} (at byte {})", reason.into(), self.pos),
        }
    }

    fn skip_ws(&mut self) {
        while self.src[self.pos..].starts_with(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.src[self.pos..].chars().next()
    }

    fn expect(&mut self, c: char) -> CliResult<()> {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            Err(self.err(format!("expected '{c}'")))
        }
    }

    fn node(&mut self) -> CliResult<Node> {
        match self.peek() {
            Some(c) if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.src[self.pos..].starts_with(|c: char| c.is_ascii_alphanumeric() || c == '_') {
                    self.pos += 1;
                }
                let name = self.src[start..self.pos].to_ascii_lowercase();
                if self.peek() != Some('(') {
                    return Ok(Node::Name(name));
                }
                self.expect('(')?;
                let mut args = Vec::new();
                if self.peek() == Some(')') {
                    self.pos += 1;
                    return Ok(Node::Call(name, args));
                }
                loop {
                    args.push(self.node()?);
                    match self.peek() {
                        Some(',') => self.pos += 1,
                        Some(')') => {
                            self.pos += 1;
                            return Ok(Node::Call(name, args));
                        }
                        _ => return Err(self.err("expected ',' or ')'")),
                    }
                }
            }
            Some(_) => Err(self.err("unexpected character")),
            None => Err(self.err("unexpected end of input")),
        }
    }

    fn number(&mut self) -> CliResult<Node> {
        let start = self.pos;
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() {
            let c = bytes[self.pos] as char;
            let exp_sign = (c == '-' || c == '+') && self.pos > start && matches!(bytes[self.pos - 1], b'e' | b'E');
            if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || exp_sign || (self.pos == start && (c == '-' || c == '+')) {
                self.pos += 1;
            } else {
                break;
            }
        }
        self.src[start..self.pos]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Node::Num)
            .ok_or_else(|| self.err("malformed number"))
    }
}

fn parse(src: &str) -> CliResult<Node> {
    let mut p = Parser { src, pos: 0 };
    let node = p.node()?;
    if p.peek().is_some() {
        return Err(p.err("trailing input"));
    }
    Ok(node)
}

fn numbers(src: &str, name: &str, args: &[Node], min: usize, max: usize) -> CliResult<Vec<f64>> {
    let err = |reason: String| CliError::Expr {
        expr: src.to_string(),
        reason,
    };
    if args.len() < min || args.len() > max {
        return Err(err(format!("{name} takes {min}..={max} arguments, got {}", args.len())));
    }
    args.iter()
        .map(|a| match a {
            Node::Num(v) => Ok(*v),
            _ => Err(err(format!("{name} takes numeric arguments"))),
        })
        .collect()
}

pub fn parse_param_expr(src: &str) -> CliResult<ParamExpr> {
    let err = |reason: &str| CliError::Expr {
        expr: src.to_string(),
        reason: reason.to_string(),
    };
    match parse(src)? {
        Node::Num(c) => Ok(ParamExpr::Const(c)),
        Node::Name(n) => Err(err(&format!("unknown name {n}"))),
        Node::Call(name, args) => match name.as_str() {
            "const" => Ok(ParamExpr::Const(numbers(src, &name, &args, 1, 1)?[0])),
            "affine" => {
                let v = numbers(src, &name, &args, 2, 2)?;
                Ok(ParamExpr::Affine {
                    offset: v[0],
                    slope: v[1],
                })
            }
            "sin" => {
                let v = numbers(src, &name, &args, 2, 4)?;
                Ok(ParamExpr::Sin {
                    mean: v[0],
                    amp: v[1],
                    freq: v.get(2).copied().unwrap_or(1.0),
                    phase: v.get(3).copied().unwrap_or(0.0),
                })
            }
            "step" => Ok(ParamExpr::Step(numbers(src, &name, &args, 1, usize::MAX)?)),
            other => Err(err(&format!("unknown function {other}"))),
        },
    }
}

fn profile_of(src: &str, node: &Node) -> CliResult<Profile> {
    let err = |reason: String| CliError::Expr {
        expr: src.to_string(),
        reason,
    };
    match node {
        Node::Num(c) => Ok(Profile::Const(*c)),
        Node::Name(n) => match n.as_str() {
            "cos2pi" => Ok(Profile::cos2pi()),
            "x" | "identity" => Ok(Profile::identity()),
            other => Err(err(format!("unknown name {other}"))),
        },
        Node::Call(name, args) => match name.as_str() {
            "const" => Ok(Profile::Const(numbers(src, name, args, 1, 1)?[0])),
            "cos" | "sin" => {
                let v = numbers(src, name, args, 2, 2)?;
                let (amp, freq) = (v[0], v[1]);
                Ok(if name == "cos" {
                    Profile::Cos { amp, freq }
                } else {
                    Profile::Sin { amp, freq }
                })
            }
            "pow" => {
                let v = numbers(src, name, args, 2, 2)?;
                if v[1] < 0.0 {
                    return Err(err("pow needs a nonnegative exponent".into()));
                }
                Ok(Profile::Pow { coef: v[0], exp: v[1] })
            }
            "poly" => Ok(Profile::Poly(numbers(src, name, args, 1, usize::MAX)?)),
            "sum" => {
                if args.is_empty() {
                    return Err(err("sum needs at least one term".into()));
                }
                Ok(Profile::Sum(args.iter().map(|a| profile_of(src, a)).collect::<CliResult<_>>()?))
            }
            "product" => {
                if args.len() != 2 {
                    return Err(err("product takes two factors".into()));
                }
                Ok(Profile::Product(
                    Box::new(profile_of(src, &args[0])?),
                    Box::new(profile_of(src, &args[1])?),
                ))
            }
            other => Err(err(format!("unknown function {other}"))),
        },
    }
}

pub fn parse_profile(src: &str) -> CliResult<Profile> {
    profile_of(src, &parse(src)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_expressions() {
        assert_eq!(parse_param_expr("0.25").unwrap(), ParamExpr::Const(0.25));
        assert_eq!(parse_param_expr(" sin(0.2, 0.1) ").unwrap(), ParamExpr::sin(0.2, 0.1));
        assert_eq!(
            parse_param_expr("SIN(0.2,0.1,2,0.5)").unwrap(),
            ParamExpr::Sin {
                mean: 0.2,
                amp: 0.1,
                freq: 2.0,
                phase: 0.5
            }
        );
        assert_eq!(
            parse_param_expr("affine(1e-1, -2.5E-2)").unwrap(),
            ParamExpr::Affine {
                offset: 0.1,
                slope: -0.025
            }
        );
        assert_eq!(parse_param_expr("step(0.1,0.2,0.3)").unwrap(), ParamExpr::Step(vec![0.1, 0.2, 0.3]));
    }

    #[test]
    fn parameter_expression_errors() {
        for bad in ["", "sin(0.2)", "cos(1,1)", "const(1,2)", "sin(0.2, 0.1", "0.2 0.3", "const(x)", "1e999"] {
            assert!(parse_param_expr(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn observable_expressions() {
        assert_eq!(parse_profile("cos2pi").unwrap(), Profile::cos2pi());
        assert_eq!(parse_profile("x").unwrap(), Profile::identity());
        assert_eq!(parse_profile("pow(1, 0.3)").unwrap(), Profile::monomial(0.3));
        assert_eq!(
            parse_profile("sum(cos(1, 1), product(x, -0.5))").unwrap(),
            Profile::Sum(vec![
                Profile::cos2pi(),
                Profile::Product(Box::new(Profile::identity()), Box::new(Profile::Const(-0.5)))
            ])
        );
        assert!(parse_profile("pow(1, -0.5)").is_err());
        assert!(parse_profile("tan(1, 1)").is_err());
        assert!(parse_profile("product(x)").is_err());
    }
}
