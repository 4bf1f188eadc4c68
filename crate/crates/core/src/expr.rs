//! Rate expressions.
//!
//! A small arithmetic language for transition rates and containment
//! functions. Grammar (lowest to highest precedence):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?          // right associative
//! atom    := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Identifiers `x1`, `x2`, ... are state coordinates, `k` is the offspring
//! index of an offspring series, and every other bare identifier is a named
//! parameter that must be bound before evaluation. Functions: `min`, `max`,
//! `log`, `exp`, `sqrt`, `abs`, `lfact` (log-factorial) and
//! `ifle(a, b, c, d)` (`c` if `a <= b`, else `d`).

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("variable x{index} exceeds the state dimension {dim}")]
    DimensionTooSmall { index: usize, dim: usize },
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Min,
    Max,
    Log,
    Exp,
    Sqrt,
    Abs,
    LogFactorial,
    IfLe,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "min" => Func::Min,
            "max" => Func::Max,
            "log" => Func::Log,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "lfact" => Func::LogFactorial,
            "ifle" => Func::IfLe,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Min => "min",
            Func::Max => "max",
            Func::Log => "log",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::LogFactorial => "lfact",
            Func::IfLe => "ifle",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            Func::IfLe => 4,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    /// Zero-based state coordinate; printed as `x{i+1}`.
    Var(usize),
    Param(String),
    /// Offspring index `k`.
    Index,
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// A parsed rate expression together with its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct RateExpr {
    source: String,
    ast: Expr,
}

pub fn parse_rate_expr(text: &str) -> Result<RateExpr, ExprError> {
    if text.trim().is_empty() {
        return Err(ExprError::Syntax { pos: 0, msg: "empty expression".into() });
    }
    let tokens = tokenize(text)?;
    let mut parser = Parser { tokens, pos: 0, end: text.len() };
    let ast = parser.expr()?;
    if let Some(tok) = parser.peek() {
        return Err(ExprError::Syntax {
            pos: tok.pos,
            msg: format!("unexpected token {:?}", tok.kind),
        });
    }
    Ok(RateExpr { source: text.to_string(), ast })
}

impl RateExpr {
    pub fn from_ast(ast: Expr) -> Self {
        RateExpr { source: ast.to_string(), ast }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn ast(&self) -> &Expr {
        &self.ast
    }

    /// Canonical text; re-parses to the same syntax tree.
    pub fn canonical(&self) -> String {
        self.ast.to_string()
    }

    /// Names of the free parameters.
    pub fn parameters(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.ast.visit(&mut |e| {
            if let Expr::Param(name) = e {
                if !out.contains(name) {
                    out.push(name.clone());
                }
            }
        });
        out
    }

    /// Largest coordinate index referenced (1-based), 0 when state-free.
    pub fn max_variable(&self) -> usize {
        let mut m = 0;
        self.ast.visit(&mut |e| {
            if let Expr::Var(i) = e {
                m = m.max(i + 1);
            }
        });
        m
    }

    /// Substitute parameters and check coordinates against `dim`.
    pub fn bind(&self, params: &BTreeMap<String, f64>, dim: usize) -> Result<CompiledExpr, ExprError> {
        let ast = self.ast.substitute(params)?;
        let max_var = RateExpr::from_ast(ast.clone()).max_variable();
        if max_var > dim {
            return Err(ExprError::DimensionTooSmall { index: max_var, dim });
        }
        Ok(CompiledExpr { ast: ast.fold() })
    }

    /// Evaluate with parameters resolved on the fly (slow path, for one-off use).
    pub fn eval(&self, x: &[f64], params: &BTreeMap<String, f64>) -> Result<f64, ExprError> {
        self.bind(params, x.len())?.eval(x)
    }
}

/// Parameter-free expression ready for repeated evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledExpr {
    ast: Expr,
}

impl CompiledExpr {
    pub fn constant(c: f64) -> Self {
        CompiledExpr { ast: Expr::Num(c) }
    }

    pub fn ast(&self) -> &Expr {
        &self.ast
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, ExprError> {
        self.ast.eval(x, f64::NAN)
    }

    pub fn eval_at_index(&self, x: &[f64], k: f64) -> Result<f64, ExprError> {
        self.ast.eval(x, k)
    }

    /// Evaluation with domain errors mapped to NaN, for hot loops whose inputs were validated.
    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        self.ast.eval(x, f64::NAN).unwrap_or(f64::NAN)
    }

    #[inline]
    pub fn value_at_index(&self, x: &[f64], k: f64) -> f64 {
        self.ast.eval(x, k).unwrap_or(f64::NAN)
    }

    pub fn derivative(&self, coord: usize) -> CompiledExpr {
        CompiledExpr { ast: self.ast.derivative(coord).fold() }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.ast, Expr::Num(_))
    }

    pub fn depends_on_state(&self) -> bool {
        let mut found = false;
        self.ast.visit(&mut |e| found |= matches!(e, Expr::Var(_)));
        found
    }

    pub fn depends_on_index(&self) -> bool {
        let mut found = false;
        self.ast.visit(&mut |e| found |= matches!(e, Expr::Index));
        found
    }
}

impl fmt::Display for CompiledExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.ast.fmt(f)
    }
}

impl Expr {
    fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Neg(a) => a.visit(f),
            Expr::Bin(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.visit(f)),
            _ => {}
        }
    }

    fn substitute(&self, params: &BTreeMap<String, f64>) -> Result<Expr, ExprError> {
        Ok(match self {
            Expr::Param(name) => match params.get(name) {
                Some(v) => Expr::Num(*v),
                None => return Err(ExprError::UnknownIdentifier(name.clone())),
            },
            Expr::Neg(a) => Expr::Neg(Box::new(a.substitute(params)?)),
            Expr::Bin(op, a, b) => Expr::Bin(*op, Box::new(a.substitute(params)?), Box::new(b.substitute(params)?)),
            Expr::Call(func, args) => {
                Expr::Call(*func, args.iter().map(|a| a.substitute(params)).collect::<Result<_, _>>()?)
            }
            other => other.clone(),
        })
    }

    pub fn eval(&self, x: &[f64], k: f64) -> Result<f64, ExprError> {
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Var(i) => x
                .get(*i)
                .copied()
                .ok_or(ExprError::DimensionTooSmall { index: i + 1, dim: x.len() }),
            Expr::Param(name) => Err(ExprError::UnknownIdentifier(name.clone())),
            Expr::Index => {
                if k.is_nan() {
                    Err(ExprError::UnknownIdentifier("k".into()))
                } else {
                    Ok(k)
                }
            }
            Expr::Neg(a) => Ok(-a.eval(x, k)?),
            Expr::Bin(op, a, b) => {
                let a = a.eval(x, k)?;
                let b = b.eval(x, k)?;
                match op {
                    BinOp::Add => Ok(a + b),
                    BinOp::Sub => Ok(a - b),
                    BinOp::Mul => Ok(a * b),
                    BinOp::Div => {
                        if b == 0.0 {
                            Err(ExprError::Domain(format!("division by zero ({a}/0)")))
                        } else {
                            Ok(a / b)
                        }
                    }
                    BinOp::Pow => {
                        let r = a.powf(b);
                        if r.is_nan() {
                            Err(ExprError::Domain(format!("{a}^{b} is undefined")))
                        } else if a == 0.0 && b < 0.0 {
                            Err(ExprError::Domain(format!("0^{b} is undefined")))
                        } else {
                            Ok(r)
                        }
                    }
                }
            }
            Expr::Call(func, args) => {
                let mut vals = [0.0; 4];
                for (slot, a) in vals.iter_mut().zip(args) {
                    *slot = a.eval(x, k)?;
                }
                match func {
                    Func::Min => Ok(vals[0].min(vals[1])),
                    Func::Max => Ok(vals[0].max(vals[1])),
                    Func::Log => {
                        if vals[0] > 0.0 {
                            Ok(vals[0].ln())
                        } else {
                            Err(ExprError::Domain(format!("log({}) of a non-positive value", vals[0])))
                        }
                    }
                    Func::Exp => Ok(vals[0].exp()),
                    Func::Sqrt => {
                        if vals[0] >= 0.0 {
                            Ok(vals[0].sqrt())
                        } else {
                            Err(ExprError::Domain(format!("sqrt({}) of a negative value", vals[0])))
                        }
                    }
                    Func::Abs => Ok(vals[0].abs()),
                    Func::LogFactorial => log_factorial(vals[0]),
                    Func::IfLe => Ok(if vals[0] <= vals[1] { vals[2] } else { vals[3] }),
                }
            }
        }
    }

    /// Symbolic partial derivative with respect to coordinate `coord` (zero-based).
    pub fn derivative(&self, coord: usize) -> Expr {
        use Expr::*;
        let num = |v: f64| Num(v);
        let bx = |e: Expr| Box::new(e);
        match self {
            Num(_) | Param(_) | Index => num(0.0),
            Var(i) => num(if *i == coord { 1.0 } else { 0.0 }),
            Neg(a) => Neg(bx(a.derivative(coord))),
            Bin(op, a, b) => {
                let da = a.derivative(coord);
                let db = b.derivative(coord);
                match op {
                    BinOp::Add => Bin(BinOp::Add, bx(da), bx(db)),
                    BinOp::Sub => Bin(BinOp::Sub, bx(da), bx(db)),
                    BinOp::Mul => Bin(
                        BinOp::Add,
                        bx(Bin(BinOp::Mul, bx(da), b.clone())),
                        bx(Bin(BinOp::Mul, a.clone(), bx(db))),
                    ),
                    BinOp::Div => Bin(
                        BinOp::Div,
                        bx(Bin(
                            BinOp::Sub,
                            bx(Bin(BinOp::Mul, bx(da), b.clone())),
                            bx(Bin(BinOp::Mul, a.clone(), bx(db))),
                        )),
                        bx(Bin(BinOp::Pow, b.clone(), bx(num(2.0)))),
                    ),
                    BinOp::Pow => {
                        if b.is_state_free() {
                            // b * a^(b-1) * a'
                            Bin(
                                BinOp::Mul,
                                bx(Bin(
                                    BinOp::Mul,
                                    b.clone(),
                                    bx(Bin(BinOp::Pow, a.clone(), bx(Bin(BinOp::Sub, b.clone(), bx(num(1.0)))))),
                                )),
                                bx(da),
                            )
                        } else {
                            // a^b * (b' log a + b a'/a)
                            Bin(
                                BinOp::Mul,
                                bx(self.clone()),
                                bx(Bin(
                                    BinOp::Add,
                                    bx(Bin(BinOp::Mul, bx(db), bx(Call(Func::Log, vec![(**a).clone()])))),
                                    bx(Bin(BinOp::Div, bx(Bin(BinOp::Mul, b.clone(), bx(da))), a.clone())),
                                )),
                            )
                        }
                    }
                }
            }
            Call(func, args) => {
                let a = &args[0];
                let da = a.derivative(coord);
                match func {
                    Func::Min => Call(
                        Func::IfLe,
                        vec![args[0].clone(), args[1].clone(), da, args[1].derivative(coord)],
                    ),
                    Func::Max => Call(
                        Func::IfLe,
                        vec![args[0].clone(), args[1].clone(), args[1].derivative(coord), da],
                    ),
                    Func::Log => Bin(BinOp::Div, bx(da), bx(a.clone())),
                    Func::Exp => Bin(BinOp::Mul, bx(self.clone()), bx(da)),
                    Func::Sqrt => Bin(
                        BinOp::Div,
                        bx(da),
                        bx(Bin(BinOp::Mul, bx(num(2.0)), bx(self.clone()))),
                    ),
                    Func::Abs => Call(
                        Func::IfLe,
                        vec![a.clone(), num(0.0), Neg(bx(da.clone())), da],
                    ),
                    // piecewise constant in the state for integer arguments
                    Func::LogFactorial => num(0.0),
                    Func::IfLe => Call(
                        Func::IfLe,
                        vec![
                            args[0].clone(),
                            args[1].clone(),
                            args[2].derivative(coord),
                            args[3].derivative(coord),
                        ],
                    ),
                }
            }
        }
    }

    fn is_state_free(&self) -> bool {
        let mut free = true;
        self.visit(&mut |e| free &= !matches!(e, Expr::Var(_)));
        free
    }

    /// Constant folding and removal of additive/multiplicative identities.
    pub fn fold(&self) -> Expr {
        use Expr::*;
        match self {
            Neg(a) => match a.fold() {
                Num(v) => Num(-v),
                Neg(inner) => *inner,
                other => Neg(Box::new(other)),
            },
            Bin(op, a, b) => {
                let a = a.fold();
                let b = b.fold();
                if let (Num(x), Num(y)) = (&a, &b) {
                    if let Ok(v) = Bin(*op, Box::new(Num(*x)), Box::new(Num(*y))).eval(&[], f64::NAN) {
                        if v.is_finite() {
                            return Num(v);
                        }
                    }
                }
                let is = |e: &Expr, c: f64| matches!(e, Num(v) if *v == c);
                match op {
                    BinOp::Add if is(&a, 0.0) => b,
                    BinOp::Add | BinOp::Sub if is(&b, 0.0) => a,
                    BinOp::Sub if is(&a, 0.0) => Neg(Box::new(b)).fold(),
                    BinOp::Mul if is(&a, 0.0) || is(&b, 0.0) => Num(0.0),
                    BinOp::Mul if is(&a, 1.0) => b,
                    BinOp::Mul | BinOp::Div if is(&b, 1.0) => a,
                    BinOp::Div if is(&a, 0.0) => Num(0.0),
                    BinOp::Pow if is(&b, 1.0) => a,
                    BinOp::Pow if is(&b, 0.0) => Num(1.0),
                    _ => Bin(*op, Box::new(a), Box::new(b)),
                }
            }
            Call(func, args) => {
                let args: Vec<Expr> = args.iter().map(Expr::fold).collect();
                if let Func::IfLe = func {
                    if args[2] == args[3] {
                        return args[2].clone();
                    }
                }
                if args.iter().all(|a| matches!(a, Num(_))) {
                    if let Ok(v) = Call(*func, args.clone()).eval(&[], f64::NAN) {
                        if v.is_finite() {
                            return Num(v);
                        }
                    }
                }
                Call(*func, args)
            }
            other => other.clone(),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(op, _, _) => op.precedence(),
            Expr::Neg(_) => 3,
            Expr::Num(v) if *v < 0.0 => 3,
            _ => 5,
        }
    }
}

fn log_factorial(k: f64) -> Result<f64, ExprError> {
    if k < 0.0 || k.fract() != 0.0 {
        return Err(ExprError::Domain(format!("lfact({k}) needs a non-negative integer")));
    }
    Ok(crate::numerics::ln_factorial(k as u64))
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => {
                if *v < 0.0 {
                    write!(f, "-{}", -v)
                } else {
                    write!(f, "{v}")
                }
            }
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Param(name) => f.write_str(name),
            Expr::Index => f.write_str("k"),
            Expr::Neg(a) => {
                if a.precedence() <= 3 {
                    write!(f, "-({a})")
                } else {
                    write!(f, "-{a}")
                }
            }
            Expr::Bin(op, a, b) => {
                let p = op.precedence();
                // left operand: parenthesize looser ops; for ^ also unary minus
                let left_paren = match op {
                    BinOp::Pow => a.precedence() <= p,
                    _ => a.precedence() < p,
                };
                // right operand: left-associative ops need equal precedence parenthesized;
                // the exponent is parsed as a unary expression
                let right_paren = match op {
                    BinOp::Pow => b.precedence() < 3,
                    _ => b.precedence() <= p && b.precedence() != 3,
                };
                if left_paren {
                    write!(f, "({a})")?;
                } else {
                    write!(f, "{a}")?;
                }
                match op {
                    BinOp::Pow => f.write_str("^")?,
                    _ => write!(f, " {} ", op.symbol())?,
                }
                if right_paren {
                    write!(f, "({b})")
                } else {
                    write!(f, "{b}")
                }
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    pos: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let kind = if c.is_ascii_digit() || c == '.' {
            while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let lit = &text[start..i];
            let v: f64 = lit.parse().map_err(|_| ExprError::Syntax {
                pos: start,
                msg: format!("malformed number `{lit}`"),
            })?;
            TokenKind::Num(v)
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            TokenKind::Ident(text[start..i].to_string())
        } else {
            i += 1;
            match c {
                '+' | '-' | '*' | '/' | '^' => TokenKind::Op(c),
                '(' => TokenKind::LParen,
                ')' => TokenKind::RParen,
                ',' => TokenKind::Comma,
                _ => {
                    return Err(ExprError::Syntax { pos: start, msg: format!("unexpected character `{c}`") })
                }
            }
        };
        tokens.push(Token { kind, pos: start });
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn here(&self) -> usize {
        self.peek().map_or(self.end, |t| t.pos)
    }

    fn eat_op(&mut self, ops: &[char]) -> Option<char> {
        match self.peek() {
            Some(Token { kind: TokenKind::Op(c), .. }) if ops.contains(c) => {
                let c = *c;
                self.pos += 1;
                Some(c)
            }
            _ => None,
        }
    }

    fn expect(&mut self, kind: TokenKind, what: &str) -> Result<(), ExprError> {
        let pos = self.here();
        match self.next() {
            Some(t) if t.kind == kind => Ok(()),
            _ => Err(ExprError::Syntax { pos, msg: format!("expected {what}") }),
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Some(c) = self.eat_op(&['+', '-']) {
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(c) = self.eat_op(&['*', '/']) {
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.eat_op(&['-']).is_some() {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if self.eat_op(&['^']).is_some() {
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let pos = self.here();
        let tok = self.next().ok_or(ExprError::Syntax { pos, msg: "unexpected end of input".into() })?;
        match tok.kind {
            TokenKind::Num(v) => Ok(Expr::Num(v)),
            TokenKind::LParen => {
                let e = self.expr()?;
                self.expect(TokenKind::RParen, "`)`")?;
                Ok(e)
            }
            TokenKind::Ident(name) => {
                if matches!(self.peek(), Some(Token { kind: TokenKind::LParen, .. })) {
                    let func = Func::from_name(&name).ok_or_else(|| ExprError::UnknownIdentifier(name.clone()))?;
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while matches!(self.peek(), Some(Token { kind: TokenKind::Comma, .. })) {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    self.expect(TokenKind::RParen, "`)` closing the argument list")?;
                    if args.len() != func.arity() {
                        return Err(ExprError::Syntax {
                            pos: tok.pos,
                            msg: format!("{} takes {} argument(s), got {}", name, func.arity(), args.len()),
                        });
                    }
                    return Ok(Expr::Call(func, args));
                }
                if Func::from_name(&name).is_some() {
                    return Err(ExprError::Syntax { pos: tok.pos, msg: format!("function `{name}` needs arguments") });
                }
                if name == "k" {
                    return Ok(Expr::Index);
                }
                if let Some(idx) = name.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
                    if idx == 0 {
                        return Err(ExprError::UnknownIdentifier(name));
                    }
                    return Ok(Expr::Var(idx - 1));
                }
                Ok(Expr::Param(name))
            }
            other => Err(ExprError::Syntax { pos: tok.pos, msg: format!("unexpected token {other:?}") }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn carrying_capacity_cutoff_vanishes_above_capacity() {
        let e = parse_rate_expr("x1*(kappa - min(x1,kappa))").unwrap();
        assert_eq!(e.eval(&[2.0], &params(&[("kappa", 1.0)])).unwrap(), 0.0);
        assert_eq!(e.eval(&[0.5], &params(&[("kappa", 1.0)])).unwrap(), 0.25);
    }

    #[test]
    fn constant_literal() {
        let e = parse_rate_expr("1").unwrap();
        assert_eq!(e.ast(), &Expr::Num(1.0));
        assert_eq!(e.eval(&[3.0], &BTreeMap::new()).unwrap(), 1.0);
    }

    #[test]
    fn log_of_zero_is_a_domain_error() {
        let e = parse_rate_expr("log(x1)").unwrap();
        assert!(matches!(e.eval(&[0.0], &BTreeMap::new()), Err(ExprError::Domain(_))));
        let d = parse_rate_expr("1/x1").unwrap();
        assert!(matches!(d.eval(&[0.0], &BTreeMap::new()), Err(ExprError::Domain(_))));
    }

    #[test]
    fn precedence_and_associativity() {
        let p = BTreeMap::new();
        let v = |s: &str| parse_rate_expr(s).unwrap().eval(&[2.0, 3.0], &p).unwrap();
        assert_eq!(v("1 + 2 * 3"), 7.0);
        assert_eq!(v("2 ^ 3 ^ 2"), 512.0);
        assert_eq!(v("-x1^2"), -4.0);
        assert_eq!(v("(-x1)^2"), 4.0);
        assert_eq!(v("8 / 4 / 2"), 1.0);
        assert_eq!(v("5 - 3 - 1"), 1.0);
        assert_eq!(v("x1 * -x2"), -6.0);
        assert_eq!(v("2^-1"), 0.5);
        assert_eq!(v("1e-3 * 1000"), 1.0);
    }

    #[test]
    fn syntax_errors_report_positions() {
        match parse_rate_expr("x1 + * 2") {
            Err(ExprError::Syntax { pos, .. }) => assert_eq!(pos, 5),
            other => panic!("unexpected {other:?}"),
        }
        match parse_rate_expr("min(x1, 2") {
            Err(ExprError::Syntax { pos, .. }) => assert_eq!(pos, 9),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_rate_expr("foo(x1)"), Err(ExprError::UnknownIdentifier(_))));
        assert!(matches!(parse_rate_expr("   "), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse_rate_expr("x1 $ 2"), Err(ExprError::Syntax { pos: 3, .. })));
    }

    #[test]
    fn unbound_parameter_is_unknown_identifier() {
        let e = parse_rate_expr("beta * x1").unwrap();
        assert_eq!(e.parameters(), vec!["beta".to_string()]);
        assert!(matches!(e.bind(&BTreeMap::new(), 1), Err(ExprError::UnknownIdentifier(n)) if n == "beta"));
        assert!(matches!(
            parse_rate_expr("x3").unwrap().bind(&BTreeMap::new(), 2),
            Err(ExprError::DimensionTooSmall { index: 3, dim: 2 })
        ));
    }

    #[test]
    fn offspring_index_and_log_factorial() {
        let e = parse_rate_expr("exp(k*log(beta) - beta - lfact(k))")
            .unwrap()
            .bind(&params(&[("beta", 2.0)]), 1)
            .unwrap();
        let p3 = e.eval_at_index(&[1.0], 3.0).unwrap();
        let exact = 2f64.powi(3) * (-2f64).exp() / 6.0;
        assert!((p3 - exact).abs() < 1e-15);
        assert!(e.depends_on_index());
        assert!(e.eval(&[1.0]).is_err());
    }

    #[test]
    fn derivative_matches_central_differences() {
        let cases = [
            "x1*(kappa - min(x1,kappa))",
            "log(log(x1))",
            "delta*log(1 + x1^2)",
            "exp(-x1) * sqrt(x1) / (1 + x2)",
            "max(x1, x2)^2 + abs(x2 - 3)",
            "x1^x2",
        ];
        let p = params(&[("kappa", 2.0), ("delta", 0.3)]);
        let pts: [[f64; 2]; 3] = [[3.3, 1.7], [1.2, 2.5], [5.0, 0.4]];
        for src in cases {
            let f = parse_rate_expr(src).unwrap().bind(&p, 2).unwrap();
            for x in pts {
                for c in 0..2 {
                    let df = f.derivative(c).eval(&x).unwrap();
                    let h = 1e-6;
                    let mut xp = x;
                    let mut xm = x;
                    xp[c] += h;
                    xm[c] -= h;
                    let fd = (f.eval(&xp).unwrap() - f.eval(&xm).unwrap()) / (2.0 * h);
                    assert!((df - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "{src} d/dx{}: {df} vs {fd}", c + 1);
                }
            }
        }
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0u32..1000).prop_map(|v| Expr::Num(v as f64 / 8.0)),
            (0usize..3).prop_map(Expr::Var),
            Just(Expr::Param("beta".into())),
            Just(Expr::Index),
        ];
        leaf.prop_recursive(5, 40, 4, |inner| {
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
                    .prop_map(|(op, a, b)| Expr::Bin(op, Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Call(Func::Min, vec![a, b])),
                inner.prop_map(|a| Expr::Call(Func::Exp, vec![a])),
            ]
        })
    }

    proptest! {
        #[test]
        fn canonical_printer_round_trips(e in arb_expr()) {
            let text = e.to_string();
            let reparsed = parse_rate_expr(&text).unwrap();
            prop_assert_eq!(reparsed.ast(), &e, "printed as {}", text);
        }
    }
}
