//! A tiny symbolic expression language over the variables `x` and `u`.
//!
//! Reaction terms and reduced roots are supplied as text, parsed into an
//! [`Expr`] tree, differentiated symbolically and evaluated in `f64`.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! sum     := product (("+" | "-") product)*
//! product := unary (("*" | "/") unary)*
//! unary   := "-" unary | power
//! power   := primary ("^" ["-"] integer)?
//! primary := number | "x" | "u" | func "(" sum ")" | "(" sum ")"
//! func    := sin | cos | exp | ln | tanh | sqrt
//! ```

use std::fmt;

use thiserror::Error;

/// Built-in unary functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Tanh,
    Sqrt,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Tanh => "tanh",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "tanh" => Func::Tanh,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }
}

/// Differentiation variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    U,
}

/// Expression tree. Negative literals are always stored as `Const`, never as
/// `Neg(Const)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    X,
    U,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("empty expression")]
    Empty,
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier \"{name}\" at byte {offset}")]
    UnknownIdentifier { offset: usize, name: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero (numerator {numerator})")]
    DivisionByZero { numerator: f64 },
    #[error("ln of non-positive operand {operand}")]
    LogDomain { operand: f64 },
    #[error("sqrt of negative operand {operand}")]
    SqrtDomain { operand: f64 },
    #[error("zero raised to negative power {exponent}")]
    ZeroNegativePower { exponent: i32 },
}

// ---------------------------------------------------------------------------
// Folding constructors

fn is_const(e: &Expr, v: f64) -> bool {
    matches!(e, Expr::Const(c) if *c == v)
}

fn finite_const(v: f64) -> Option<Expr> {
    v.is_finite().then_some(Expr::Const(v))
}

impl Expr {
    pub fn constant(v: f64) -> Expr {
        Expr::Const(v)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Const(c) => Expr::Const(-c),
            Expr::Neg(inner) => *inner,
            other => Expr::Neg(Box::new(other)),
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(x), Expr::Const(y)) => finite_const(x + y)
                .unwrap_or_else(|| Expr::Add(Box::new(a), Box::new(b))),
            _ if is_const(&a, 0.0) => b,
            _ if is_const(&b, 0.0) => a,
            _ => Expr::Add(Box::new(a), Box::new(b)),
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(x), Expr::Const(y)) => finite_const(x - y)
                .unwrap_or_else(|| Expr::Sub(Box::new(a), Box::new(b))),
            _ if is_const(&b, 0.0) => a,
            _ if is_const(&a, 0.0) => Expr::neg(b),
            _ => Expr::Sub(Box::new(a), Box::new(b)),
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(x), Expr::Const(y)) => finite_const(x * y)
                .unwrap_or_else(|| Expr::Mul(Box::new(a), Box::new(b))),
            _ if is_const(&a, 0.0) || is_const(&b, 0.0) => Expr::Const(0.0),
            _ if is_const(&a, 1.0) => b,
            _ if is_const(&b, 1.0) => a,
            _ if is_const(&a, -1.0) => Expr::neg(b),
            _ if is_const(&b, -1.0) => Expr::neg(a),
            _ => Expr::Mul(Box::new(a), Box::new(b)),
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn div(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(x), Expr::Const(y)) if *y != 0.0 => finite_const(x / y)
                .unwrap_or_else(|| Expr::Div(Box::new(a), Box::new(b))),
            _ if is_const(&b, 1.0) => a,
            _ if is_const(&a, 0.0) && !matches!(b, Expr::Const(_)) => Expr::Const(0.0),
            _ => Expr::Div(Box::new(a), Box::new(b)),
        }
    }

    pub fn pow(a: Expr, n: i32) -> Expr {
        match (&a, n) {
            (_, 0) => Expr::Const(1.0),
            (_, 1) => a,
            (Expr::Const(c), _) if *c != 0.0 || n > 0 => {
                finite_const(c.powi(n)).unwrap_or(Expr::Pow(Box::new(a), n))
            }
            _ => Expr::Pow(Box::new(a), n),
        }
    }

    pub fn call(f: Func, a: Expr) -> Expr {
        if let Expr::Const(c) = a {
            let v = match f {
                Func::Sin => Some(c.sin()),
                Func::Cos => Some(c.cos()),
                Func::Exp => Some(c.exp()),
                Func::Tanh => Some(c.tanh()),
                Func::Ln if c > 0.0 => Some(c.ln()),
                Func::Sqrt if c >= 0.0 => Some(c.sqrt()),
                _ => None,
            };
            if let Some(v) = v.and_then(finite_const) {
                return v;
            }
        }
        Expr::Call(f, Box::new(a))
    }
}

// ---------------------------------------------------------------------------
// Evaluation, differentiation, substitution

impl Expr {
    pub fn eval(&self, x: f64, u: f64) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::X => x,
            Expr::U => u,
            Expr::Neg(a) => -a.eval(x, u)?,
            Expr::Add(a, b) => a.eval(x, u)? + b.eval(x, u)?,
            Expr::Sub(a, b) => a.eval(x, u)? - b.eval(x, u)?,
            Expr::Mul(a, b) => a.eval(x, u)? * b.eval(x, u)?,
            Expr::Div(a, b) => {
                let num = a.eval(x, u)?;
                let den = b.eval(x, u)?;
                if den == 0.0 {
                    return Err(EvalError::DivisionByZero { numerator: num });
                }
                num / den
            }
            Expr::Pow(a, n) => {
                let base = a.eval(x, u)?;
                if base == 0.0 && *n < 0 {
                    return Err(EvalError::ZeroNegativePower { exponent: *n });
                }
                base.powi(*n)
            }
            Expr::Call(f, a) => {
                let v = a.eval(x, u)?;
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                    Func::Tanh => v.tanh(),
                    Func::Ln => {
                        if v <= 0.0 {
                            return Err(EvalError::LogDomain { operand: v });
                        }
                        v.ln()
                    }
                    Func::Sqrt => {
                        if v < 0.0 {
                            return Err(EvalError::SqrtDomain { operand: v });
                        }
                        v.sqrt()
                    }
                }
            }
        })
    }

    /// Exact symbolic derivative with respect to `var`.
    pub fn differentiate(&self, var: Var) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::X => Expr::Const(if var == Var::X { 1.0 } else { 0.0 }),
            Expr::U => Expr::Const(if var == Var::U { 1.0 } else { 0.0 }),
            Expr::Neg(a) => Expr::neg(a.differentiate(var)),
            Expr::Add(a, b) => Expr::add(a.differentiate(var), b.differentiate(var)),
            Expr::Sub(a, b) => Expr::sub(a.differentiate(var), b.differentiate(var)),
            Expr::Mul(a, b) => Expr::add(
                Expr::mul(a.differentiate(var), (**b).clone()),
                Expr::mul((**a).clone(), b.differentiate(var)),
            ),
            Expr::Div(a, b) => {
                // (a' b - a b') / b^2
                let num = Expr::sub(
                    Expr::mul(a.differentiate(var), (**b).clone()),
                    Expr::mul((**a).clone(), b.differentiate(var)),
                );
                Expr::div(num, Expr::pow((**b).clone(), 2))
            }
            Expr::Pow(a, n) => Expr::mul(
                Expr::mul(Expr::Const(*n as f64), Expr::pow((**a).clone(), n - 1)),
                a.differentiate(var),
            ),
            Expr::Call(f, a) => {
                let inner = (**a).clone();
                let da = a.differentiate(var);
                let outer = match f {
                    Func::Sin => Expr::call(Func::Cos, inner),
                    Func::Cos => Expr::neg(Expr::call(Func::Sin, inner)),
                    Func::Exp => Expr::call(Func::Exp, inner),
                    Func::Ln => return Expr::div(da, inner),
                    Func::Tanh => {
                        Expr::sub(Expr::Const(1.0), Expr::pow(Expr::call(Func::Tanh, inner), 2))
                    }
                    Func::Sqrt => {
                        return Expr::div(
                            da,
                            Expr::mul(Expr::Const(2.0), Expr::call(Func::Sqrt, inner)),
                        )
                    }
                };
                Expr::mul(outer, da)
            }
        }
    }

    /// Replace every occurrence of `u` by `with`.
    pub fn substitute_u(&self, with: &Expr) -> Expr {
        match self {
            Expr::Const(_) | Expr::X => self.clone(),
            Expr::U => with.clone(),
            Expr::Neg(a) => Expr::neg(a.substitute_u(with)),
            Expr::Add(a, b) => Expr::add(a.substitute_u(with), b.substitute_u(with)),
            Expr::Sub(a, b) => Expr::sub(a.substitute_u(with), b.substitute_u(with)),
            Expr::Mul(a, b) => Expr::mul(a.substitute_u(with), b.substitute_u(with)),
            Expr::Div(a, b) => Expr::div(a.substitute_u(with), b.substitute_u(with)),
            Expr::Pow(a, n) => Expr::pow(a.substitute_u(with), *n),
            Expr::Call(f, a) => Expr::call(*f, a.substitute_u(with)),
        }
    }

    pub fn depends_on(&self, var: Var) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::X => var == Var::X,
            Expr::U => var == Var::U,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.depends_on(var),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.depends_on(var) || b.depends_on(var)
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::X | Expr::U => 1,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => 1 + a.depth(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                1 + a.depth().max(b.depth())
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Printing

const PREC_SUM: u8 = 1;
const PREC_PRODUCT: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_POWER: u8 = 4;
const PREC_ATOM: u8 = 5;

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Add(..) | Expr::Sub(..) => PREC_SUM,
        Expr::Mul(..) | Expr::Div(..) => PREC_PRODUCT,
        Expr::Neg(_) => PREC_UNARY,
        Expr::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => PREC_UNARY,
        Expr::Pow(..) => PREC_POWER,
        _ => PREC_ATOM,
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::X => f.write_str("x"),
            Expr::U => f.write_str("u"),
            Expr::Neg(a) => {
                f.write_str("-")?;
                write_child(f, a, precedence(a) < PREC_UNARY)
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                let (op, prec) = match self {
                    Expr::Add(..) => (" + ", PREC_SUM),
                    Expr::Sub(..) => (" - ", PREC_SUM),
                    Expr::Mul(..) => ("*", PREC_PRODUCT),
                    _ => ("/", PREC_PRODUCT),
                };
                write_child(f, a, precedence(a) < prec)?;
                f.write_str(op)?;
                write_child(f, b, precedence(b) <= prec)
            }
            Expr::Pow(a, n) => {
                write_child(f, a, precedence(a) < PREC_ATOM)?;
                write!(f, "^{n}")
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let lit = &text[start..i];
                let v: f64 = lit.parse().map_err(|_| ParseError::Syntax {
                    offset: start,
                    message: format!("malformed number \"{lit}\""),
                })?;
                out.push((start, Tok::Num(v)));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Ident(text[start..i].to_string())));
                continue;
            }
            _ => {
                return Err(ParseError::Syntax {
                    offset: start,
                    message: format!("unexpected character '{}'", text[start..].chars().next().unwrap()),
                })
            }
        };
        out.push((start, tok));
        i += 1;
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax { offset: self.offset(), message: message.into() })
    }

    fn sum(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.product()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.product()?));
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.product()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(match inner {
                Expr::Const(c) => Expr::Const(-c),
                other => Expr::Neg(Box::new(other)),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.peek() != Some(&Tok::Caret) {
            return Ok(base);
        }
        self.pos += 1;
        let negative = if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            true
        } else {
            false
        };
        match self.peek() {
            Some(Tok::Num(v)) if v.fract() == 0.0 && *v <= i32::MAX as f64 => {
                let n = *v as i32;
                self.pos += 1;
                Ok(Expr::Pow(Box::new(base), if negative { -n } else { n }))
            }
            _ => self.syntax("exponent must be an integer literal"),
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let offset = self.offset();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Const(v))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                match name.as_str() {
                    "x" => Ok(Expr::X),
                    "u" => Ok(Expr::U),
                    _ => match Func::from_name(&name) {
                        Some(func) => {
                            if self.peek() != Some(&Tok::LParen) {
                                return self.syntax(format!("expected '(' after {name}"));
                            }
                            self.pos += 1;
                            let arg = self.sum()?;
                            self.expect_rparen()?;
                            Ok(Expr::Call(func, Box::new(arg)))
                        }
                        None => Err(ParseError::UnknownIdentifier { offset, name }),
                    },
                }
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.sum()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Some(tok) => self.syntax(format!("unexpected token {tok:?}")),
            None => self.syntax("unexpected end of input"),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        if self.peek() == Some(&Tok::RParen) {
            self.pos += 1;
            Ok(())
        } else {
            self.syntax("expected ')'")
        }
    }
}

/// Parse an expression in `x` and `u`.
pub fn parse(text: &str) -> Result<Expr, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, end: text.len() };
    let e = p.sum()?;
    if p.pos != p.toks.len() {
        return p.syntax("trailing input");
    }
    Ok(e)
}

impl std::str::FromStr for Expr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}
