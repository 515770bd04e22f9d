//! Tiny arithmetic expression language for inline field definitions in
//! scenario files, e.g. `"exp(-theta)"` or `"x*y - z^2"`.
//!
//! Expressions compile to an AST that evaluates on [`Jet`]s, so inline fields
//! are differentiable like every built-in one.

use crate::error::{Error, Result};
use crate::jet::Jet;

const MAX_DEPTH: usize = 96;
const MAX_LEN: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Ln,
    Sin,
    Cos,
    Tan,
    Sqrt,
    Sinh,
    Cosh,
    Tanh,
}

impl Func {
    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "exp" => Func::Exp,
            "ln" | "log" => Func::Ln,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "sqrt" => Func::Sqrt,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "tanh" => Func::Tanh,
            _ => return None,
        })
    }

    fn apply(self, x: &Jet) -> Jet {
        match self {
            Func::Exp => x.exp(),
            Func::Ln => x.ln(),
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tan => x.tan(),
            Func::Sqrt => x.sqrt(),
            Func::Sinh => x.sinh(),
            Func::Cosh => x.cosh(),
            Func::Tanh => x.tanh(),
        }
    }
}

impl Expr {
    /// Parse `src` with the given variable names. `x0, x1, …` are always
    /// accepted as positional aliases.
    pub fn parse(src: &str, vars: &[&str]) -> Result<Expr> {
        if src.len() > MAX_LEN {
            return Err(perr(0, "expression too long"));
        }
        let toks = lex(src)?;
        let mut p = Parser {
            toks,
            pos: 0,
            vars,
            depth: 0,
        };
        let e = p.expr()?;
        if let Some(t) = p.toks.get(p.pos) {
            return Err(perr(t.at, "unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn eval(&self, x: &[Jet]) -> Jet {
        match self {
            Expr::Num(v) => Jet::constant(*v),
            Expr::Var(i) => x.get(*i).cloned().unwrap_or_else(|| Jet::constant(f64::NAN)),
            Expr::Neg(a) => -a.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Pow(a, b) => {
                let base = a.eval(x);
                // constant exponents avoid the exp/ln route, which loses exactness
                if b.max_var().is_none() {
                    let p = b.eval_f64(&[]);
                    if p.fract() == 0.0 && p.abs() <= 64.0 {
                        base.powi(p as i32)
                    } else {
                        base.powf(p)
                    }
                } else {
                    (b.eval(x) * base.ln()).exp()
                }
            }
            Expr::Call(f, a) => f.apply(&a.eval(x)),
        }
    }

    pub fn eval_f64(&self, x: &[f64]) -> f64 {
        let j: Vec<Jet> = x.iter().map(|v| Jet::constant(*v)).collect();
        self.eval(&j).value()
    }

    /// Largest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Num(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Neg(a) | Expr::Call(_, a) => a.max_var(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => a.max_var().max(b.max_var()),
        }
    }
}

fn perr(at: usize, msg: &str) -> Error {
    Error::Parse {
        line: 1,
        column: at + 1,
        message: msg.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    at: usize,
}

fn lex(src: &str) -> Result<Vec<Token>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let save = i;
                i += 1;
                if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
                    i += 1;
                }
                if i < bytes.len() && bytes[i].is_ascii_digit() {
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    // `2e` followed by something else: the `e` belongs to an identifier
                    i = save;
                }
            }
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| perr(start, "malformed number"))?;
            out.push(Token {
                tok: Tok::Num(v),
                at: start,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(src[start..i].to_string()),
                at: start,
            });
        } else if "+-*/^(),".contains(c) {
            out.push(Token { tok: Tok::Op(c), at: i });
            i += 1;
        } else {
            // column counts bytes; good enough for ASCII sources
            return Err(perr(i, "unexpected character"));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    vars: &'a [&'a str],
    depth: usize,
}

impl Parser<'_> {
    fn peek_op(&self) -> Option<char> {
        match self.toks.get(self.pos) {
            Some(Token { tok: Tok::Op(c), .. }) => Some(*c),
            _ => None,
        }
    }

    fn here(&self) -> usize {
        self.toks
            .get(self.pos)
            .map(|t| t.at)
            .or_else(|| self.toks.last().map(|t| t.at + 1))
            .unwrap_or(0)
    }

    fn enter(&mut self) -> Result<()> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(perr(self.here(), "expression nested too deeply"));
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Expr> {
        self.enter()?;
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        self.depth -= 1;
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        self.enter()?;
        let e = match self.peek_op() {
            Some('-') => {
                self.pos += 1;
                Expr::Neg(Box::new(self.unary()?))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()?
            }
            _ => self.power()?,
        };
        self.depth -= 1;
        Ok(e)
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let at = self.here();
        let tok = self
            .toks
            .get(self.pos)
            .cloned()
            .ok_or_else(|| perr(at, "unexpected end of expression"))?;
        self.pos += 1;
        match tok.tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Op('(') => {
                let e = self.expr()?;
                if self.peek_op() != Some(')') {
                    return Err(perr(self.here(), "expected `)`"));
                }
                self.pos += 1;
                Ok(e)
            }
            Tok::Op(_) => Err(perr(tok.at, "expected a number, variable or `(`")),
            Tok::Ident(name) => {
                if let Some(f) = Func::from_name(&name) {
                    if self.peek_op() != Some('(') {
                        return Err(perr(self.here(), "expected `(` after function name"));
                    }
                    self.pos += 1;
                    let arg = self.expr()?;
                    if self.peek_op() != Some(')') {
                        return Err(perr(self.here(), "expected `)`"));
                    }
                    self.pos += 1;
                    return Ok(Expr::Call(f, Box::new(arg)));
                }
                if let Some(i) = self.vars.iter().position(|v| *v == name) {
                    return Ok(Expr::Var(i));
                }
                match name.as_str() {
                    "pi" => return Ok(Expr::Num(std::f64::consts::PI)),
                    "e" => return Ok(Expr::Num(std::f64::consts::E)),
                    _ => {}
                }
                if let Some(rest) = name.strip_prefix('x') {
                    if let Ok(i) = rest.parse::<usize>() {
                        if i < 64 {
                            return Ok(Expr::Var(i));
                        }
                    }
                }
                Err(perr(tok.at, &format!("unknown identifier `{name}`")))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn precedence_and_associativity() {
        let e = Expr::parse("1 + 2*3^2 - -4/2", &[]).unwrap();
        assert_eq!(e.eval_f64(&[]), 1.0 + 18.0 + 2.0);
        let e = Expr::parse("2^3^2", &[]).unwrap();
        assert_eq!(e.eval_f64(&[]), 512.0);
        let e = Expr::parse("-2^2", &[]).unwrap();
        assert_eq!(e.eval_f64(&[]), -4.0);
    }

    #[test]
    fn named_and_positional_variables() {
        let e = Expr::parse("exp(-theta) + x1", &["theta", "phi"]).unwrap();
        assert!((e.eval_f64(&[0.5, 2.0]) - ((-0.5f64).exp() + 2.0)).abs() < 1e-15);
        assert_eq!(e.max_var(), Some(1));
    }

    #[test]
    fn derivatives_flow_through() {
        let e = Expr::parse("sin(x0)*x0^2", &[]).unwrap();
        let x = [Jet::variable(0.4, 0)];
        let v = e.eval(&x);
        let expect = 0.4f64.cos() * 0.16 + 2.0 * 0.4 * 0.4f64.sin();
        assert!((v.coef(1) - expect).abs() < 1e-14);
    }

    #[test]
    fn errors_carry_columns() {
        match Expr::parse("1 + $", &[]) {
            Err(Error::Parse { column, .. }) => assert_eq!(column, 5),
            other => panic!("{other:?}"),
        }
        assert!(Expr::parse("sin 3", &[]).is_err());
        assert!(Expr::parse("(1+2", &[]).is_err());
        assert!(Expr::parse("foo", &[]).is_err());
        assert!(Expr::parse("", &[]).is_err());
        assert!(Expr::parse(&"(".repeat(500), &[]).is_err());
    }

    proptest! {
        #[test]
        fn parser_never_panics(s in "\\PC{0,64}") {
            let _ = Expr::parse(&s, &["x", "y"]);
        }

        #[test]
        fn printed_integers_round_trip(a in -1000i64..1000, b in 1i64..1000) {
            let e = Expr::parse(&format!("({a})/({b})"), &[]).unwrap();
            prop_assert!((e.eval_f64(&[]) - a as f64 / b as f64).abs() < 1e-12);
        }
    }
}
