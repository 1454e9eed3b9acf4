//! A tiny arithmetic language for user losses over a scalar decision `x` and
//! a point `xi` (components `xi0` … `xi7`; `xi` is `xi0`).
//!
//! Grammar: `+ - * / ^`, parentheses, numeric literals, `pi`, and the
//! functions `sin`, `exp`, `abs`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    X,
    Xi(usize),
    Neg(Box<Expr>),
    Bin(char, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Exp,
    Abs,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.sum()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Config(format!("unexpected trailing input in '{src}'")));
        }
        Ok(e)
    }

    /// Highest `xi` component referenced, plus one.
    pub fn dim_needed(&self) -> usize {
        match self {
            Expr::Num(_) | Expr::X => 0,
            Expr::Xi(k) => k + 1,
            Expr::Neg(a) | Expr::Call(_, a) => a.dim_needed(),
            Expr::Bin(_, a, b) => a.dim_needed().max(b.dim_needed()),
        }
    }

    pub fn eval(&self, x: f64, xi: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::X => x,
            Expr::Xi(k) => xi.get(*k).copied().unwrap_or(f64::NAN),
            Expr::Neg(a) => -a.eval(x, xi),
            Expr::Bin(op, a, b) => {
                let (u, v) = (a.eval(x, xi), b.eval(x, xi));
                match op {
                    '+' => u + v,
                    '-' => u - v,
                    '*' => u * v,
                    '/' => u / v,
                    _ => u.powf(v),
                }
            }
            Expr::Call(f, a) => {
                let u = a.eval(x, xi);
                match f {
                    Func::Sin => u.sin(),
                    Func::Exp => u.exp(),
                    Func::Abs => u.abs(),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let save = i;
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                if i < chars.len() && chars[i].is_ascii_digit() {
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number '{text}'")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else if c == '·' {
            out.push(Tok::Op('*'));
            i += 1;
        } else if c == '(' {
            out.push(Tok::LParen);
            i += 1;
        } else if c == ')' {
            out.push(Tok::RParen);
            i += 1;
        } else {
            return Err(Error::Config(format!("unexpected character '{c}' in loss expression")));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn sum(&mut self) -> Result<Expr> {
        let mut lhs = self.product()?;
        while let Some(Tok::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.product()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(op @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(Tok::Op('-')) => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some(Tok::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Bin('^', Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let tok = self
            .peek()
            .cloned()
            .ok_or_else(|| Error::Config("unexpected end of loss expression".into()))?;
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::LParen => {
                let e = self.sum()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Tok::Ident(name) => match name.as_str() {
                "x" => Ok(Expr::X),
                "xi" => Ok(Expr::Xi(0)),
                "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                "sin" | "exp" | "abs" => {
                    let f = match name.as_str() {
                        "sin" => Func::Sin,
                        "exp" => Func::Exp,
                        _ => Func::Abs,
                    };
                    if self.peek() != Some(&Tok::LParen) {
                        return Err(Error::Config(format!("'{name}' must be followed by '('")));
                    }
                    self.pos += 1;
                    let arg = self.sum()?;
                    self.expect_rparen()?;
                    Ok(Expr::Call(f, Box::new(arg)))
                }
                other => {
                    if let Some(k) = other.strip_prefix("xi").and_then(|s| s.parse::<usize>().ok()) {
                        if k < 8 {
                            return Ok(Expr::Xi(k));
                        }
                    }
                    Err(Error::Config(format!("unknown identifier '{other}' in loss expression")))
                }
            },
            Tok::Op(c) => Err(Error::Config(format!("unexpected operator '{c}'"))),
            Tok::RParen => Err(Error::Config("unexpected ')'".into())),
        }
    }

    fn expect_rparen(&mut self) -> Result<()> {
        if self.peek() == Some(&Tok::RParen) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Config("missing ')'".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: f64, xi: &[f64]) -> f64 {
        Expr::parse(s).unwrap().eval(x, xi)
    }

    #[test]
    fn precedence_and_functions() {
        assert_eq!(ev("1 + 2 * 3", 0.0, &[]), 7.0);
        assert_eq!(ev("-2^2", 0.0, &[]), -4.0);
        assert_eq!(ev("(x - xi)^2", 3.0, &[1.0]), 4.0);
        assert_eq!(ev("abs(xi1 - xi0)", 0.0, &[1.0, -2.0]), 3.0);
        assert!((ev("sin(pi/2) + exp(0)", 0.0, &[]) - 2.0).abs() < 1e-15);
        assert_eq!(ev("2e-1*x", 10.0, &[]), 2.0);
        assert_eq!(ev("x·xi", 2.0, &[3.0]), 6.0);
    }

    #[test]
    fn rejects_unknown_names() {
        assert!(Expr::parse("cos(x)").is_err());
        assert!(Expr::parse("y + 1").is_err());
        assert!(Expr::parse("(x").is_err());
        assert!(Expr::parse("x x").is_err());
    }

    #[test]
    fn dimension_tracking() {
        assert_eq!(Expr::parse("x + xi3").unwrap().dim_needed(), 4);
        assert_eq!(Expr::parse("x").unwrap().dim_needed(), 0);
    }
}
