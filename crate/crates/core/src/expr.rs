//! Tiny arithmetic expression language used by config files to describe
//! conductivities and boundary data.
//!
//! Grammar: `+ - * / ^`, parentheses, unary minus, numeric literals,
//! the constants `pi` and `e`, the variables `x`, `y`, `s`, `theta`, and
//! the functions `sin cos tan exp log sqrt abs tanh cosh sinh`.

use crate::error::{CdiError, Result};

#[derive(Debug, Clone)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(Op, Box<Expr>, Box<Expr>),
    Fun(Fun, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
    S,
    Theta,
}

#[derive(Debug, Clone, Copy)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy)]
pub enum Fun {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
    Tanh,
    Sinh,
    Cosh,
}

/// Evaluation context: grid coordinates and, for boundary traces, the
/// arc-length parameter and polar angle.
#[derive(Debug, Clone, Copy, Default)]
pub struct Env {
    pub x: f64,
    pub y: f64,
    pub s: f64,
    pub theta: f64,
}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr> {
        let mut p = Parser {
            chars: text.chars().collect(),
            pos: 0,
            text,
        };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.chars.len() {
            return Err(CdiError::Parse(format!(
                "trailing input at offset {} in expression '{}'",
                p.pos, text
            )));
        }
        Ok(e)
    }

    pub fn eval(&self, env: &Env) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(Var::X) => env.x,
            Expr::Var(Var::Y) => env.y,
            Expr::Var(Var::S) => env.s,
            Expr::Var(Var::Theta) => env.theta,
            Expr::Neg(e) => -e.eval(env),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(env), b.eval(env));
                match op {
                    Op::Add => a + b,
                    Op::Sub => a - b,
                    Op::Mul => a * b,
                    Op::Div => a / b,
                    Op::Pow => a.powf(b),
                }
            }
            Expr::Fun(f, e) => {
                let v = e.eval(env);
                match f {
                    Fun::Sin => v.sin(),
                    Fun::Cos => v.cos(),
                    Fun::Tan => v.tan(),
                    Fun::Exp => v.exp(),
                    Fun::Log => v.ln(),
                    Fun::Sqrt => v.sqrt(),
                    Fun::Abs => v.abs(),
                    Fun::Tanh => v.tanh(),
                    Fun::Sinh => v.sinh(),
                    Fun::Cosh => v.cosh(),
                }
            }
        }
    }
}

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    text: &'a str,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek();
        if c.is_some() {
            self.pos += 1;
        }
        c
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(c) = self.peek() {
            let op = match c {
                '+' => Op::Add,
                '-' => Op::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.power()?;
        while let Some(c) = self.peek() {
            let op = match c {
                '*' => Op::Mul,
                '/' => Op::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.power()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.unary()?;
        if self.peek() == Some('^') {
            self.bump();
            let exp = self.power()?; // right associative
            return Ok(Expr::Bin(Op::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek() == Some('-') {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.peek() == Some('+') {
            self.bump();
            return self.unary();
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            Some('(') => {
                self.bump();
                let e = self.expr()?;
                if self.bump() != Some(')') {
                    return Err(CdiError::Parse(format!("missing ')' in '{}'", self.text)));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == '_' => self.ident(),
            other => Err(CdiError::Parse(format!(
                "unexpected {:?} in expression '{}'",
                other, self.text
            ))),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.chars.len() {
            let c = self.chars[self.pos];
            if c.is_ascii_digit() || c == '.' {
                self.pos += 1;
            } else if (c == 'e' || c == 'E')
                && self.pos > start
                && self
                    .chars
                    .get(self.pos + 1)
                    .is_some_and(|&n| n.is_ascii_digit() || n == '+' || n == '-')
            {
                self.pos += 2;
            } else {
                break;
            }
        }
        let s: String = self.chars[start..self.pos].iter().collect();
        s.parse::<f64>()
            .map(Expr::Num)
            .map_err(|e| CdiError::Parse(format!("bad number '{s}': {e}")))
    }

    fn ident(&mut self) -> Result<Expr> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.chars.len()
            && (self.chars[self.pos].is_ascii_alphanumeric() || self.chars[self.pos] == '_')
        {
            self.pos += 1;
        }
        let name: String = self.chars[start..self.pos].iter().collect();
        match name.as_str() {
            "x" => Ok(Expr::Var(Var::X)),
            "y" => Ok(Expr::Var(Var::Y)),
            "s" => Ok(Expr::Var(Var::S)),
            "theta" => Ok(Expr::Var(Var::Theta)),
            "pi" => Ok(Expr::Num(std::f64::consts::PI)),
            "e" => Ok(Expr::Num(std::f64::consts::E)),
            _ => {
                let f = match name.as_str() {
                    "sin" => Fun::Sin,
                    "cos" => Fun::Cos,
                    "tan" => Fun::Tan,
                    "exp" => Fun::Exp,
                    "log" => Fun::Log,
                    "sqrt" => Fun::Sqrt,
                    "abs" => Fun::Abs,
                    "tanh" => Fun::Tanh,
                    "sinh" => Fun::Sinh,
                    "cosh" => Fun::Cosh,
                    _ => {
                        return Err(CdiError::Parse(format!(
                            "unknown identifier '{name}' in '{}'",
                            self.text
                        )))
                    }
                };
                if self.bump() != Some('(') {
                    return Err(CdiError::Parse(format!("expected '(' after '{name}'")));
                }
                let arg = self.expr()?;
                if self.bump() != Some(')') {
                    return Err(CdiError::Parse(format!("missing ')' after {name}(...)")));
                }
                Ok(Expr::Fun(f, Box::new(arg)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(text: &str, x: f64, y: f64) -> f64 {
        Expr::parse(text).unwrap().eval(&Env {
            x,
            y,
            ..Default::default()
        })
    }

    #[test]
    fn arithmetic() {
        assert_eq!(eval("1 + 2*3", 0.0, 0.0), 7.0);
        assert_eq!(eval("2^3^2", 0.0, 0.0), 512.0);
        assert_eq!(eval("-x + y/2", 3.0, 4.0), -1.0);
        assert!((eval("exp(-x)*cos(pi*y)", 1.0, 1.0) - (-1.0f64).exp() * -1.0).abs() < 1e-15);
        assert_eq!(eval("1e-3 * 2", 0.0, 0.0), 2e-3);
    }

    #[test]
    fn errors() {
        assert!(Expr::parse("1 +").is_err());
        assert!(Expr::parse("foo(x)").is_err());
        assert!(Expr::parse("sin x").is_err());
        assert!(Expr::parse("(1").is_err());
    }

    #[test]
    fn boundary_vars() {
        let e = Expr::parse("cos(theta) + s").unwrap();
        let v = e.eval(&Env {
            theta: 0.0,
            s: 1.5,
            ..Default::default()
        });
        assert_eq!(v, 2.5);
    }
}
