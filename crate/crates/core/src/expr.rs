//! Scalar expressions in `x`, `y`, `z`.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?          right-associative
//! atom   := number | 'pi' | 'e' | 'x' | 'y' | 'z' | func '(' expr ')' | '(' expr ')'
//! func   := 'sin' | 'cos' | 'exp' | 'sqrt'
//! ```

use std::fmt;
use std::sync::Arc;

use crate::error::Error;
use crate::problem::Field;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Exp => v.exp(),
            Func::Sqrt => v.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Pi,
    E,
    /// 0, 1, 2 for `x`, `y`, `z`.
    Var(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn eval(&self, p: [f64; 3]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Pi => std::f64::consts::PI,
            Expr::E => std::f64::consts::E,
            Expr::Var(i) => p[*i],
            Expr::Neg(a) => -a.eval(p),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(p), b.eval(p));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                }
            }
            Expr::Call(f, a) => f.apply(a.eval(p)),
        }
    }

    pub fn into_field(self) -> Field {
        Arc::new(move |p| self.eval(p))
    }
}

/// Fully parenthesized; parses back to an equal tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Pi => f.write_str("pi"),
            Expr::E => f.write_str("e"),
            Expr::Var(i) => f.write_str(["x", "y", "z"][*i]),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Bin(op, a, b) => {
                let s = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({a} {s} {b})")
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    /// Byte offset into the source.
    pub offset: usize,
    pub expected: Vec<&'static str>,
    pub found: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "syntax error at byte {}: expected {}, found {}", self.offset, self.expected.join(" or "), self.found)
    }
}

impl std::error::Error for ParseError {}

impl From<ParseError> for Error {
    fn from(e: ParseError) -> Error {
        Error::Format(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

const ATOM: [&str; 4] = ["number", "identifier", "'('", "'-'"];

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    tok: Tok,
    start: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self, ParseError> {
        let mut p = Parser { src, pos: 0, tok: Tok::End, start: 0 };
        p.advance()?;
        Ok(p)
    }

    fn describe(&self) -> String {
        match &self.tok {
            Tok::End => "end of input".into(),
            _ => format!("'{}'", &self.src[self.start..self.pos]),
        }
    }

    fn fail<T>(&self, expected: &[&'static str]) -> Result<T, ParseError> {
        Err(ParseError { offset: self.start, expected: expected.to_vec(), found: self.describe() })
    }

    fn advance(&mut self) -> Result<(), ParseError> {
        let b = self.src.as_bytes();
        while self.pos < b.len() && b[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        self.start = self.pos;
        if self.pos == b.len() {
            self.tok = Tok::End;
            return Ok(());
        }
        let c = b[self.pos];
        if c.is_ascii_digit() || c == b'.' {
            let mut i = self.pos;
            while i < b.len() && (b[i].is_ascii_digit() || b[i] == b'.') {
                i += 1;
            }
            if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
                let mut j = i + 1;
                if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
                    j += 1;
                }
                if j < b.len() && b[j].is_ascii_digit() {
                    while j < b.len() && b[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            self.pos = i;
            return match self.src[self.start..i].parse::<f64>() {
                Ok(v) => {
                    self.tok = Tok::Num(v);
                    Ok(())
                }
                Err(_) => {
                    self.tok = Tok::Sym('?');
                    self.fail(&["number"])
                }
            };
        }
        if c.is_ascii_alphabetic() {
            let mut i = self.pos;
            while i < b.len() && (b[i].is_ascii_alphanumeric() || b[i] == b'_') {
                i += 1;
            }
            self.pos = i;
            self.tok = Tok::Ident(self.src[self.start..i].to_string());
            return Ok(());
        }
        let ch = self.src[self.pos..].chars().next().expect("non-empty");
        self.pos += ch.len_utf8();
        self.tok = Tok::Sym(ch);
        if "+-*/^()".contains(ch) {
            Ok(())
        } else {
            self.fail(&["operator", "number", "identifier"])
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.tok {
                Tok::Sym('+') => BinOp::Add,
                Tok::Sym('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.advance()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.tok {
                Tok::Sym('*') => BinOp::Mul,
                Tok::Sym('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.advance()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.tok == Tok::Sym('-') {
            self.advance()?;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.tok == Tok::Sym('^') {
            self.advance()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn expect_close(&mut self) -> Result<(), ParseError> {
        if self.tok != Tok::Sym(')') {
            return self.fail(&["')'", "operator"]);
        }
        self.advance()
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.advance()?;
                Ok(Expr::Num(v))
            }
            Tok::Sym('(') => {
                self.advance()?;
                let e = self.expr()?;
                self.expect_close()?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let func = match name.as_str() {
                    "sin" => Some(Func::Sin),
                    "cos" => Some(Func::Cos),
                    "exp" => Some(Func::Exp),
                    "sqrt" => Some(Func::Sqrt),
                    _ => None,
                };
                if let Some(f) = func {
                    self.advance()?;
                    if self.tok != Tok::Sym('(') {
                        return self.fail(&["'('"]);
                    }
                    self.advance()?;
                    let arg = self.expr()?;
                    self.expect_close()?;
                    return Ok(Expr::Call(f, Box::new(arg)));
                }
                let e = match name.as_str() {
                    "pi" => Expr::Pi,
                    "e" => Expr::E,
                    "x" => Expr::Var(0),
                    "y" => Expr::Var(1),
                    "z" => Expr::Var(2),
                    _ => return self.fail(&["x", "y", "z", "pi", "e", "sin", "cos", "exp", "sqrt"]),
                };
                self.advance()?;
                Ok(e)
            }
            _ => self.fail(&ATOM),
        }
    }
}

pub fn parse(src: &str) -> Result<Expr, ParseError> {
    let mut p = Parser::new(src)?;
    let e = p.expr()?;
    if p.tok != Tok::End {
        return p.fail(&["operator", "end of input"]);
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn planar_source_peak() {
        let e = parse("-2*pi^2*sin(pi*x)*sin(pi*y)").unwrap();
        assert!((e.eval([0.5, 0.5, 7.0]) + 2.0 * PI * PI).abs() < 1e-12);
        assert_eq!(parse("x").unwrap().eval([3.0, 0.0, 0.0]), 3.0);
        let s = parse("sin(x)*sin(y)*sin(z)*(x^2+y^2+z^2-121)*(x^2+y^2+z^2-81)").unwrap();
        assert_eq!(s.eval([0.0, 4.0, 5.0]), 0.0);
    }

    #[test]
    fn precedence_and_associativity() {
        let v = |s: &str| parse(s).unwrap().eval([2.0, 3.0, 0.5]);
        assert_eq!(v("-2^2"), -4.0);
        assert_eq!(v("2^3^2"), 512.0);
        assert_eq!(v("2^-1"), 0.5);
        assert_eq!(v("1-2-3"), -4.0);
        assert_eq!(v("8/4/2"), 1.0);
        assert_eq!(v("1+2*3"), 7.0);
        assert_eq!(v("--x"), 2.0);
        assert_eq!(v("x*-y"), -6.0);
        assert_eq!(v("1.5e2 + .5"), 150.5);
        assert_eq!(v("sqrt(4)+exp(0)+cos(0)"), 4.0);
        assert!((v("e") - std::f64::consts::E).abs() == 0.0);
    }

    #[test]
    fn errors_carry_offset_and_expectations() {
        let e = parse("1 + * 2").unwrap_err();
        assert_eq!(e.offset, 4);
        assert!(e.expected.contains(&"number"));
        let e = parse("sin x").unwrap_err();
        assert_eq!((e.offset, e.expected.clone()), (4, vec!["'('"]));
        let e = parse("(x + 1").unwrap_err();
        assert_eq!(e.offset, 6);
        assert_eq!(e.found, "end of input");
        let e = parse("foo(1)").unwrap_err();
        assert_eq!(e.offset, 0);
        assert!(parse("x $ 1").unwrap_err().offset == 2);
        assert!(parse("").is_err());
        assert!(parse("1 2").unwrap_err().expected.contains(&"end of input"));
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0f64..1e6).prop_map(Expr::Num),
            Just(Expr::Pi),
            Just(Expr::E),
            (0usize..3).prop_map(Expr::Var),
        ];
        leaf.prop_recursive(5, 48, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
                (
                    prop_oneof![Just(BinOp::Add), Just(BinOp::Sub), Just(BinOp::Mul), Just(BinOp::Div), Just(BinOp::Pow)],
                    inner.clone(),
                    inner.clone()
                )
                    .prop_map(|(o, a, b)| Expr::Bin(o, Box::new(a), Box::new(b))),
                (prop_oneof![Just(Func::Sin), Just(Func::Cos), Just(Func::Exp), Just(Func::Sqrt)], inner)
                    .prop_map(|(f, a)| Expr::Call(f, Box::new(a))),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(e in arb_expr()) {
            let printed = e.to_string();
            let back = parse(&printed).unwrap();
            prop_assert_eq!(&back, &e);
            prop_assert_eq!(back.to_string(), printed);
        }

        #[test]
        fn parse_print_parse_is_stable(a in -50.0f64..50.0, b in 0.1f64..5.0) {
            let src = format!("{a:?}*x^2 - sin({b:?}*y)/(1+z^2)");
            let first = parse(&src).unwrap();
            let second = parse(&first.to_string()).unwrap();
            prop_assert_eq!(&first, &second);
            let p = [0.3, -1.2, 2.0];
            prop_assert_eq!(first.eval(p).to_bits(), second.eval(p).to_bits());
        }
    }
}
