//! Scalar expressions in the variables `x1..xd`.
//!
//! Map components and Jacobian entries of an IFS are written in a small
//! language:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' number)*
//! atom   := number | 'x'<int> | func '(' expr ')' | '(' expr ')'
//! func   := sin | cos | exp | log | sqrt | neg
//! ```
//!
//! Exponents are literal constants (optionally signed). A leading `-` is
//! sugar for `neg(..)`.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl UnaryOp {
    fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "neg" => UnaryOp::Neg,
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "exp" => UnaryOp::Exp,
            "log" => UnaryOp::Log,
            "sqrt" => UnaryOp::Sqrt,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
        }
    }
}

/// Expression tree. Variables are 1-based (`Var(1)` is `x1`).
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    /// Power with a literal exponent.
    Pow(Box<Expr>, f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at position {position}: expected {expected}, found {found}")]
    Syntax {
        position: usize,
        expected: String,
        found: String,
    },
    #[error("variable x{index} at position {position} is out of range 1..{dim}")]
    VariableOutOfRange { position: usize, index: usize, dim: usize },
    #[error("unknown function '{name}' at position {position}")]
    UnknownFunction { position: usize, name: String },
    #[error("empty expression")]
    Empty,
}

impl ParseError {
    pub fn position(&self) -> Option<usize> {
        match self {
            ParseError::Syntax { position, .. }
            | ParseError::VariableOutOfRange { position, .. }
            | ParseError::UnknownFunction { position, .. } => Some(*position),
            ParseError::Empty => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("domain error in '{expr}': {reason}")]
    Domain { expr: String, reason: &'static str },
    #[error("point has {len} coordinates but expression uses x{index}")]
    MissingVariable { index: usize, len: usize },
}

/// Parses `source` as an expression over `dim` variables.
pub fn parse_expr(source: &str, dim: usize) -> Result<Expr, ParseError> {
    if source.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let tokens = tokenize(source)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        dim,
        src_len: source.len(),
    };
    let expr = parser.expr()?;
    if let Some(tok) = parser.peek() {
        return Err(ParseError::Syntax {
            position: tok.pos,
            expected: "operator or end of input".into(),
            found: tok.kind.describe(),
        });
    }
    Ok(expr)
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Number(v) => format!("number {v}"),
            TokenKind::Ident(s) => format!("'{s}'"),
            TokenKind::Plus => "'+'".into(),
            TokenKind::Minus => "'-'".into(),
            TokenKind::Star => "'*'".into(),
            TokenKind::Slash => "'/'".into(),
            TokenKind::Caret => "'^'".into(),
            TokenKind::LParen => "'('".into(),
            TokenKind::RParen => "')'".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    pos: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let single = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => Some(TokenKind::Plus),
            b'-' => Some(TokenKind::Minus),
            b'*' => Some(TokenKind::Star),
            b'/' => Some(TokenKind::Slash),
            b'^' => Some(TokenKind::Caret),
            b'(' => Some(TokenKind::LParen),
            b')' => Some(TokenKind::RParen),
            _ => None,
        };
        if let Some(kind) = single {
            out.push(Token { kind, pos: start });
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || c == b'.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            // exponent part: e[+-]digits
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
            let text = &src[start..i];
            let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
                position: start,
                expected: "number".into(),
                found: format!("'{text}'"),
            })?;
            out.push(Token {
                kind: TokenKind::Number(value),
                pos: start,
            });
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                kind: TokenKind::Ident(src[start..i].to_string()),
                pos: start,
            });
            continue;
        }
        let ch = src[start..].chars().next().unwrap_or('?');
        return Err(ParseError::Syntax {
            position: start,
            expected: "expression".into(),
            found: format!("'{ch}'"),
        });
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    dim: usize,
    src_len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let tok = self.tokens.get(self.pos).cloned();
        if tok.is_some() {
            self.pos += 1;
        }
        tok
    }

    fn error_here(&self, expected: &str) -> ParseError {
        match self.peek() {
            Some(tok) => ParseError::Syntax {
                position: tok.pos,
                expected: expected.into(),
                found: tok.kind.describe(),
            },
            None => ParseError::Syntax {
                position: self.src_len,
                expected: expected.into(),
                found: "end of input".into(),
            },
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().map(|t| &t.kind) {
                Some(TokenKind::Plus) => BinaryOp::Add,
                Some(TokenKind::Minus) => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().map(|t| &t.kind) {
                Some(TokenKind::Star) => BinaryOp::Mul,
                Some(TokenKind::Slash) => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if matches!(self.peek().map(|t| &t.kind), Some(TokenKind::Minus)) {
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(Expr::Unary(UnaryOp::Neg, Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let mut base = self.atom()?;
        while matches!(self.peek().map(|t| &t.kind), Some(TokenKind::Caret)) {
            self.pos += 1;
            let exponent = self.signed_number()?;
            base = Expr::Pow(Box::new(base), exponent);
        }
        Ok(base)
    }

    fn signed_number(&mut self) -> Result<f64, ParseError> {
        let mut sign = 1.0;
        match self.peek().map(|t| &t.kind) {
            Some(TokenKind::Minus) => {
                sign = -1.0;
                self.pos += 1;
            }
            Some(TokenKind::Plus) => {
                self.pos += 1;
            }
            _ => {}
        }
        match self.peek().map(|t| t.kind.clone()) {
            Some(TokenKind::Number(v)) => {
                self.pos += 1;
                Ok(sign * v)
            }
            _ => Err(self.error_here("numeric exponent")),
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let Some(tok) = self.next() else {
            return Err(self.error_here("number, variable, function or '('"));
        };
        match tok.kind {
            TokenKind::Number(v) => Ok(Expr::Const(v)),
            TokenKind::LParen => {
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(inner)
            }
            TokenKind::Ident(name) => {
                if let Some(index) = variable_index(&name) {
                    if index == 0 || index > self.dim {
                        return Err(ParseError::VariableOutOfRange {
                            position: tok.pos,
                            index,
                            dim: self.dim,
                        });
                    }
                    return Ok(Expr::Var(index));
                }
                let Some(op) = UnaryOp::from_name(&name) else {
                    return Err(ParseError::UnknownFunction { position: tok.pos, name });
                };
                match self.peek().map(|t| &t.kind) {
                    Some(TokenKind::LParen) => self.pos += 1,
                    _ => return Err(self.error_here("'(' after function name")),
                }
                let inner = self.expr()?;
                self.expect_rparen()?;
                Ok(Expr::Unary(op, Box::new(inner)))
            }
            _ => {
                self.pos -= 1;
                Err(self.error_here("number, variable, function or '('"))
            }
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        match self.peek().map(|t| &t.kind) {
            Some(TokenKind::RParen) => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.error_here("')'")),
        }
    }
}

fn variable_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

impl Expr {
    pub fn constant(v: f64) -> Self {
        Expr::Const(v)
    }

    pub fn var(index: usize) -> Self {
        Expr::Var(index)
    }

    /// Largest variable index used, 0 if none.
    pub fn max_var(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(i) => *i,
            Expr::Unary(_, a) | Expr::Pow(a, _) => a.max_var(),
            Expr::Binary(_, a, b) => a.max_var().max(b.max_var()),
        }
    }

    pub fn variables(&self) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<usize>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(i) => {
                out.insert(*i);
            }
            Expr::Unary(_, a) | Expr::Pow(a, _) => a.collect_vars(out),
            Expr::Binary(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    pub fn depends_on(&self, var: usize) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(i) => *i == var,
            Expr::Unary(_, a) | Expr::Pow(a, _) => a.depends_on(var),
            Expr::Binary(_, a, b) => a.depends_on(var) || b.depends_on(var),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.max_var() == 0
    }

    /// Renames `xk` to `x(k+offset)`; used when embedding a factor of a
    /// direct product.
    pub fn shift_vars(&self, offset: usize) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(i) => Expr::Var(i + offset),
            Expr::Unary(op, a) => Expr::Unary(*op, Box::new(a.shift_vars(offset))),
            Expr::Binary(op, a, b) => Expr::Binary(*op, Box::new(a.shift_vars(offset)), Box::new(b.shift_vars(offset))),
            Expr::Pow(a, e) => Expr::Pow(Box::new(a.shift_vars(offset)), *e),
        }
    }

    /// Evaluates at `point`, where `point[k-1]` is the value of `xk`.
    pub fn eval(&self, point: &[f64]) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => *point.get(i - 1).ok_or(EvalError::MissingVariable {
                index: *i,
                len: point.len(),
            })?,
            Expr::Unary(op, a) => {
                let x = a.eval(point)?;
                match op {
                    UnaryOp::Neg => -x,
                    UnaryOp::Sin => x.sin(),
                    UnaryOp::Cos => x.cos(),
                    UnaryOp::Exp => x.exp(),
                    UnaryOp::Log => {
                        if x <= 0.0 {
                            return Err(self.domain("logarithm of a non-positive value"));
                        }
                        x.ln()
                    }
                    UnaryOp::Sqrt => {
                        if x < 0.0 {
                            return Err(self.domain("square root of a negative value"));
                        }
                        x.sqrt()
                    }
                }
            }
            Expr::Binary(op, a, b) => {
                let x = a.eval(point)?;
                let y = b.eval(point)?;
                match op {
                    BinaryOp::Add => x + y,
                    BinaryOp::Sub => x - y,
                    BinaryOp::Mul => x * y,
                    BinaryOp::Div => {
                        if y == 0.0 {
                            return Err(self.domain("division by zero"));
                        }
                        x / y
                    }
                }
            }
            Expr::Pow(a, e) => {
                let x = a.eval(point)?;
                if x < 0.0 && e.fract() != 0.0 {
                    return Err(self.domain("non-integer power of a negative value"));
                }
                if x == 0.0 && *e < 0.0 {
                    return Err(self.domain("negative power of zero"));
                }
                x.powf(*e)
            }
        };
        if !v.is_finite() {
            return Err(self.domain("non-finite result"));
        }
        Ok(v)
    }

    fn domain(&self, reason: &'static str) -> EvalError {
        EvalError::Domain {
            expr: self.to_string(),
            reason,
        }
    }
}

// Constructors that fold the trivial cases produced by differentiation.
fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), _) if *x == 0.0 => b,
        (_, Expr::Const(y)) if *y == 0.0 => a,
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        _ => Expr::Binary(BinaryOp::Add, Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (_, Expr::Const(y)) if *y == 0.0 => a,
        (Expr::Const(x), _) if *x == 0.0 => neg(b),
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
        _ => Expr::Binary(BinaryOp::Sub, Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), _) | (_, Expr::Const(x)) if *x == 0.0 => Expr::Const(0.0),
        (Expr::Const(x), _) if *x == 1.0 => b,
        (_, Expr::Const(y)) if *y == 1.0 => a,
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        _ => Expr::Binary(BinaryOp::Mul, Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), _) if *x == 0.0 => Expr::Const(0.0),
        (_, Expr::Const(y)) if *y == 1.0 => a,
        _ => Expr::Binary(BinaryOp::Div, Box::new(a), Box::new(b)),
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(x) if x == 0.0 => Expr::Const(0.0),
        other => Expr::Unary(UnaryOp::Neg, Box::new(other)),
    }
}

fn unary(op: UnaryOp, a: Expr) -> Expr {
    Expr::Unary(op, Box::new(a))
}

/// Symbolic partial derivative with respect to `x{var}`.
///
/// The result is lightly folded (zeros and ones) but otherwise unsimplified.
pub fn differentiate(e: &Expr, var: usize) -> Expr {
    match e {
        Expr::Const(_) => Expr::Const(0.0),
        Expr::Var(i) => Expr::Const(if *i == var { 1.0 } else { 0.0 }),
        Expr::Unary(op, a) => {
            let da = differentiate(a, var);
            if matches!(da, Expr::Const(z) if z == 0.0) {
                return Expr::Const(0.0);
            }
            let a = (**a).clone();
            match op {
                UnaryOp::Neg => neg(da),
                UnaryOp::Sin => mul(unary(UnaryOp::Cos, a), da),
                UnaryOp::Cos => mul(neg(unary(UnaryOp::Sin, a)), da),
                UnaryOp::Exp => mul(unary(UnaryOp::Exp, a), da),
                UnaryOp::Log => div(da, a),
                UnaryOp::Sqrt => div(da, mul(Expr::Const(2.0), unary(UnaryOp::Sqrt, a))),
            }
        }
        Expr::Binary(op, a, b) => {
            let da = differentiate(a, var);
            let db = differentiate(b, var);
            let (a, b) = ((**a).clone(), (**b).clone());
            match op {
                BinaryOp::Add => add(da, db),
                BinaryOp::Sub => sub(da, db),
                BinaryOp::Mul => add(mul(da, b), mul(a, db)),
                BinaryOp::Div => {
                    // (a'b - ab') / b^2
                    let num = sub(mul(da, b.clone()), mul(a, db));
                    div(num, Expr::Pow(Box::new(b), 2.0))
                }
            }
        }
        Expr::Pow(a, exp) => {
            let da = differentiate(a, var);
            if matches!(da, Expr::Const(z) if z == 0.0) || *exp == 0.0 {
                return Expr::Const(0.0);
            }
            let base = if *exp == 2.0 {
                (**a).clone()
            } else if *exp == 1.0 {
                Expr::Const(1.0)
            } else {
                Expr::Pow(a.clone(), exp - 1.0)
            };
            mul(mul(Expr::Const(*exp), base), da)
        }
    }
}

/// Renders fully parenthesised binary operations so that the output
/// reparses to the same tree (for trees whose constants are non-negative).
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if *c < 0.0 {
                    write!(f, "neg({})", -c)
                } else {
                    write!(f, "{c}")
                }
            }
            Expr::Var(i) => write!(f, "x{i}"),
            Expr::Unary(op, a) => write!(f, "{}({a})", op.name()),
            Expr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Pow(a, e) => write!(f, "({a})^{e}"),
        }
    }
}
