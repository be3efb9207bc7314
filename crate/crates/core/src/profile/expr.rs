//! A small expression language for radial coefficient profiles.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?          right associative
//! primary := number | 'r' | 'pi' | 'e' | call | '(' expr ')'
//! call    := ident '(' expr (',' expr)? ')'
//! ```
//!
//! `^` binds tighter than a leading minus, so `-2^2` is `-(2^2)`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at position {position}: expected {expected}")]
    Syntax { position: usize, expected: String },
    #[error("unknown identifier `{name}`")]
    UnknownIdentifier { name: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func1 {
    Ln,
    Exp,
    Sin,
    Cos,
    Abs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func2 {
    Pow,
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constant {
    Pi,
    E,
}

/// Expression tree node.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var,
    Const(Constant),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call1(Func1, Box<Expr>),
    Call2(Func2, Box<Expr>, Box<Expr>),
}

/// Result of an evaluation that did not hit a domain error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    /// Set when some intermediate result left the finite range.
    pub overflow: bool,
}

impl Func1 {
    fn name(self) -> &'static str {
        match self {
            Func1::Ln => "ln",
            Func1::Exp => "exp",
            Func1::Sin => "sin",
            Func1::Cos => "cos",
            Func1::Abs => "abs",
        }
    }
}

impl Func2 {
    fn name(self) -> &'static str {
        match self {
            Func2::Pow => "pow",
            Func2::Min => "min",
            Func2::Max => "max",
        }
    }
}

impl Expr {
    pub fn num(v: f64) -> Self {
        Expr::Num(v)
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Self {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    /// Evaluate at radius `r`, reporting overflow through the flag.
    pub fn eval_checked(&self, r: f64) -> Result<Evaluation, EvalError> {
        let mut overflow = false;
        let value = self.eval_inner(r, &mut overflow)?;
        Ok(Evaluation {
            value,
            overflow: overflow || value.is_infinite(),
        })
    }

    /// Evaluate at radius `r`. Overflow yields a signed infinity.
    pub fn eval(&self, r: f64) -> Result<f64, EvalError> {
        self.eval_checked(r).map(|e| e.value)
    }

    fn eval_inner(&self, r: f64, overflow: &mut bool) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Var => r,
            Expr::Const(Constant::Pi) => std::f64::consts::PI,
            Expr::Const(Constant::E) => std::f64::consts::E,
            Expr::Neg(a) => -a.eval_inner(r, overflow)?,
            Expr::Bin(op, a, b) => {
                let x = a.eval_inner(r, overflow)?;
                let y = b.eval_inner(r, overflow)?;
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y == 0.0 && x == 0.0 {
                            return Err(EvalError::Domain("0/0".into()));
                        }
                        x / y
                    }
                    BinOp::Pow => power(x, y)?,
                }
            }
            Expr::Call1(f, a) => {
                let x = a.eval_inner(r, overflow)?;
                match f {
                    Func1::Ln => {
                        if x <= 0.0 {
                            return Err(EvalError::Domain(format!("ln({x})")));
                        }
                        x.ln()
                    }
                    Func1::Exp => x.exp(),
                    Func1::Sin => x.sin(),
                    Func1::Cos => x.cos(),
                    Func1::Abs => x.abs(),
                }
            }
            Expr::Call2(f, a, b) => {
                let x = a.eval_inner(r, overflow)?;
                let y = b.eval_inner(r, overflow)?;
                match f {
                    Func2::Pow => power(x, y)?,
                    Func2::Min => x.min(y),
                    Func2::Max => x.max(y),
                }
            }
        };
        if v.is_nan() {
            return Err(EvalError::Domain("result is not a number".into()));
        }
        if v.is_infinite() {
            *overflow = true;
        }
        Ok(v)
    }
}

fn power(x: f64, y: f64) -> Result<f64, EvalError> {
    if x < 0.0 && y.fract() != 0.0 {
        return Err(EvalError::Domain(format!("{x}^{y} has no real value")));
    }
    if x == 0.0 && y < 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(x.powf(y))
}

/// Fully parenthesised printing; the output re-parses to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var => write!(f, "r"),
            Expr::Const(Constant::Pi) => write!(f, "pi"),
            Expr::Const(Constant::E) => write!(f, "e"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Bin(op, a, b) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({a}{sym}{b})")
            }
            Expr::Call1(func, a) => write!(f, "{}({a})", func.name()),
            Expr::Call2(func, a, b) => write!(f, "{}({a},{b})", func.name()),
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
    Comma,
    End,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(text: &'a str) -> Result<Vec<(usize, Tok)>, ParseError> {
        let mut lx = Lexer {
            src: text.as_bytes(),
            pos: 0,
        };
        let mut out = Vec::new();
        loop {
            while lx.pos < lx.src.len() && lx.src[lx.pos].is_ascii_whitespace() {
                lx.pos += 1;
            }
            let start = lx.pos;
            let Some(&c) = lx.src.get(lx.pos) else {
                out.push((start, Tok::End));
                return Ok(out);
            };
            let tok = match c {
                b'0'..=b'9' | b'.' => lx.number()?,
                b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                    while lx
                        .src
                        .get(lx.pos)
                        .is_some_and(|c| c.is_ascii_alphanumeric() || *c == b'_')
                    {
                        lx.pos += 1;
                    }
                    Tok::Ident(text[start..lx.pos].to_string())
                }
                b'+' | b'-' | b'*' | b'/' | b'^' => {
                    lx.pos += 1;
                    Tok::Op(c as char)
                }
                b'(' => {
                    lx.pos += 1;
                    Tok::LParen
                }
                b')' => {
                    lx.pos += 1;
                    Tok::RParen
                }
                b',' => {
                    lx.pos += 1;
                    Tok::Comma
                }
                _ => {
                    return Err(ParseError::Syntax {
                        position: start,
                        expected: "number, identifier, operator or parenthesis".into(),
                    })
                }
            };
            out.push((start, tok));
        }
    }

    fn number(&mut self) -> Result<Tok, ParseError> {
        let start = self.pos;
        let digits = |lx: &mut Self| {
            let s = lx.pos;
            while lx.src.get(lx.pos).is_some_and(u8::is_ascii_digit) {
                lx.pos += 1;
            }
            lx.pos - s
        };
        let mut n = digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            return Err(ParseError::Syntax {
                position: start,
                expected: "digits".into(),
            });
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            // Only treat as exponent when followed by digits (optionally signed),
            // otherwise `e` is left for the constant.
            let save = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse::<f64>()
            .map(Tok::Num)
            .map_err(|_| ParseError::Syntax {
                position: start,
                expected: "a decimal literal".into(),
            })
    }
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    idx: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.idx].1
    }

    fn pos(&self) -> usize {
        self.toks[self.idx].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.idx].1.clone();
        if self.idx + 1 < self.toks.len() {
            self.idx += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(ParseError::Syntax {
                position: self.pos(),
                expected: what.into(),
            })
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Op('+') => BinOp::Add,
                Tok::Op('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Op('*') => BinOp::Mul,
                Tok::Op('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Op('-') {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if *self.peek() == Tok::Op('^') {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Expr::bin(BinOp::Pow, base, exponent));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let position = self.pos();
        match self.bump() {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => self.ident(name),
            _ => Err(ParseError::Syntax {
                position,
                expected: "number, `r`, constant, function call or `(`".into(),
            }),
        }
    }

    fn ident(&mut self, name: String) -> Result<Expr, ParseError> {
        let f1 = match name.as_str() {
            "r" => return Ok(Expr::Var),
            "pi" => return Ok(Expr::Const(Constant::Pi)),
            "e" => return Ok(Expr::Const(Constant::E)),
            "ln" => Some(Func1::Ln),
            "exp" => Some(Func1::Exp),
            "sin" => Some(Func1::Sin),
            "cos" => Some(Func1::Cos),
            "abs" => Some(Func1::Abs),
            _ => None,
        };
        let f2 = match name.as_str() {
            "pow" => Some(Func2::Pow),
            "min" => Some(Func2::Min),
            "max" => Some(Func2::Max),
            _ => None,
        };
        if f1.is_none() && f2.is_none() {
            return Err(ParseError::UnknownIdentifier { name });
        }
        self.expect(Tok::LParen, "`(` after function name")?;
        let a = self.expr()?;
        let e = if let Some(f) = f2 {
            self.expect(Tok::Comma, "`,` (function takes two arguments)")?;
            let b = self.expr()?;
            Expr::Call2(f, Box::new(a), Box::new(b))
        } else {
            Expr::Call1(f1.expect("one-argument function"), Box::new(a))
        };
        self.expect(Tok::RParen, "`)`")?;
        Ok(e)
    }
}

/// Parse a profile expression.
pub fn parse_profile(text: &str) -> Result<Expr, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::Syntax {
            position: 0,
            expected: "a nonempty expression".into(),
        });
    }
    let toks = Lexer::tokens(text)?;
    let mut p = Parser { toks, idx: 0 };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(ParseError::Syntax {
            position: p.pos(),
            expected: "operator or end of input".into(),
        });
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(s: &str, r: f64) -> f64 {
        parse_profile(s).unwrap().eval(r).unwrap()
    }

    #[test]
    fn tree_shapes() {
        let one = Expr::num(1.0);
        assert_eq!(
            parse_profile("1/(1+r)").unwrap(),
            Expr::bin(BinOp::Div, one.clone(), Expr::bin(BinOp::Add, one.clone(), Expr::Var))
        );
        let t = parse_profile("ln(1/r)^(-1)").unwrap();
        assert_eq!(
            t,
            Expr::bin(
                BinOp::Pow,
                Expr::Call1(Func1::Ln, Box::new(Expr::bin(BinOp::Div, one, Expr::Var))),
                Expr::Neg(Box::new(Expr::num(1.0)))
            )
        );
        let r = (-3.0f64).exp();
        assert!((t.eval(r).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn evaluation_examples() {
        assert!((ev("pow(ln(1/r), -0.5)", (-4.0f64).exp()) - 0.5).abs() < 1e-15);
        assert_eq!(ev("r", 0.25), 0.25);
        assert!((ev("2+sin(1/r)", 2.0 / std::f64::consts::PI) - 3.0).abs() < 1e-15);
        assert!((ev("ln(1/r)", (-2.0f64).exp()) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn precedence() {
        assert_eq!(ev("2+3*4", 1.0), 14.0);
        assert_eq!(ev("2^3^2", 1.0), 512.0);
        assert_eq!(ev("-2^2", 1.0), -4.0);
        assert_eq!(ev("2^-1", 1.0), 0.5);
        assert_eq!(ev("10-4-3", 1.0), 3.0);
        assert_eq!(ev("max(1, min(pi, e))", 1.0), std::f64::consts::E);
        assert_eq!(ev("1.5e2 + 1", 1.0), 151.0);
        assert_eq!(ev("2*e", 1.0), 2.0 * std::f64::consts::E);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            parse_profile("foo(r)"),
            Err(ParseError::UnknownIdentifier { name }) if name == "foo"
        ));
        assert!(matches!(
            parse_profile("1 + * 2"),
            Err(ParseError::Syntax { position: 4, .. })
        ));
        assert!(matches!(parse_profile("(r"), Err(ParseError::Syntax { position: 2, .. })));
        assert!(matches!(parse_profile("pow(r)"), Err(ParseError::Syntax { .. })));
        assert!(parse_profile("   ").is_err());
        assert!(parse_profile("r r").is_err());
    }

    #[test]
    fn domain_and_overflow() {
        let e = parse_profile("ln(r-1)").unwrap();
        assert!(matches!(e.eval(0.5), Err(EvalError::Domain(_))));
        let e = parse_profile("(-2)^0.5").unwrap();
        assert!(e.eval(1.0).is_err());
        assert_eq!(ev("(-2)^3", 1.0), -8.0);
        let e = parse_profile("exp(1/r)").unwrap().eval_checked(1e-3).unwrap();
        assert!(e.overflow && e.value == f64::INFINITY);
        let e = parse_profile("-1/r").unwrap().eval_checked(0.0).unwrap();
        assert!(e.overflow && e.value == f64::NEG_INFINITY);
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0f64..100.0).prop_map(Expr::Num),
            Just(Expr::Var),
            Just(Expr::Const(Constant::Pi)),
            Just(Expr::Const(Constant::E)),
        ];
        leaf.prop_recursive(4, 32, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
                (
                    prop_oneof![
                        Just(BinOp::Add),
                        Just(BinOp::Sub),
                        Just(BinOp::Mul),
                        Just(BinOp::Div),
                        Just(BinOp::Pow)
                    ],
                    inner.clone(),
                    inner.clone()
                )
                    .prop_map(|(op, a, b)| Expr::bin(op, a, b)),
                (
                    prop_oneof![
                        Just(Func1::Ln),
                        Just(Func1::Exp),
                        Just(Func1::Sin),
                        Just(Func1::Cos),
                        Just(Func1::Abs)
                    ],
                    inner.clone()
                )
                    .prop_map(|(f, a)| Expr::Call1(f, Box::new(a))),
                (
                    prop_oneof![Just(Func2::Pow), Just(Func2::Min), Just(Func2::Max)],
                    inner.clone(),
                    inner
                )
                    .prop_map(|(f, a, b)| Expr::Call2(f, Box::new(a), Box::new(b))),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(e in arb_expr()) {
            let printed = e.to_string();
            let back = parse_profile(&printed).unwrap();
            prop_assert_eq!(&back, &e);
            prop_assert_eq!(parse_profile(&back.to_string()).unwrap(), back);
        }
    }
}
