//! A small arithmetic expression language for problem data.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! cond    := sum ("<" | "<=" | ">" | ">=") sum
//! sum     := product (("+" | "-") product)*
//! product := unary (("*" | "/") unary)*
//! unary   := "-" unary | power
//! power   := primary ("^" unary)?              (right-associative)
//! primary := number | "z" | "t" | "pi" | "eta0"
//!          | func "(" sum ")"                  func: cos sin exp sqrt abs
//!          | "if" "(" cond "," sum "," sum ")"
//!          | "(" sum ")"
//! ```
//!
//! `-2^2` is `-(2^2)`. Numbers accept an optional fraction and exponent
//! (`1.5e-3`). `eta0` is only meaningful in the terminal profile, where it is
//! bound after the Riccati stage.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    Z,
    T,
    Pi,
    Eta0,
}

impl Symbol {
    pub fn name(self) -> &'static str {
        match self {
            Symbol::Z => "z",
            Symbol::T => "t",
            Symbol::Pi => "pi",
            Symbol::Eta0 => "eta0",
        }
    }
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
    Cos,
    Sin,
    Exp,
    Sqrt,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "cos" => Func::Cos,
            "sin" => Func::Sin,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Cos => "cos",
            Func::Sin => "sin",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub op: CmpOp,
    pub lhs: Expr,
    pub rhs: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Sym(Symbol),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
    If(Box<Condition>, Box<Expr>, Box<Expr>),
}

/// Values for the free symbols of an expression. `pi` is always bound.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Bindings {
    pub z: Option<f64>,
    pub t: Option<f64>,
    pub eta0: Option<f64>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn z(mut self, z: f64) -> Self {
        self.z = Some(z);
        self
    }

    pub fn t(mut self, t: f64) -> Self {
        self.t = Some(t);
        self
    }

    pub fn eta0(mut self, eta0: f64) -> Self {
        self.eta0 = Some(eta0);
        self
    }

    fn lookup(&self, sym: Symbol) -> Result<f64> {
        let value = match sym {
            Symbol::Pi => Some(PI),
            Symbol::Z => self.z,
            Symbol::T => self.t,
            Symbol::Eta0 => self.eta0,
        };
        value.ok_or_else(|| Error::Eval(format!("unbound symbol `{}`", sym.name())))
    }

    fn with(self, variable: Symbol, value: f64) -> Self {
        match variable {
            Symbol::Z => self.z(value),
            Symbol::T => self.t(value),
            Symbol::Eta0 => self.eta0(value),
            Symbol::Pi => self,
        }
    }
}

// ---------------------------------------------------------------------------
// Lexing

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
    Comma,
    Cmp(CmpOp),
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Cmp(op) => format!("`{}`", op.symbol()),
            Tok::End => "end of input".into(),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let ch = bytes[pos];
        if ch.is_ascii_whitespace() {
            pos += 1;
            continue;
        }
        let start = pos;
        let tok = match ch {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b',' => Tok::Comma,
            b'<' | b'>' => {
                let eq = bytes.get(pos + 1) == Some(&b'=');
                let op = match (ch, eq) {
                    (b'<', false) => CmpOp::Lt,
                    (b'<', true) => CmpOp::Le,
                    (_, false) => CmpOp::Gt,
                    (_, true) => CmpOp::Ge,
                };
                if eq {
                    pos += 1;
                }
                Tok::Cmp(op)
            }
            b'0'..=b'9' | b'.' => {
                let mut end = pos;
                while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
                    end += 1;
                }
                if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
                    let mut exp_end = end + 1;
                    if exp_end < bytes.len() && (bytes[exp_end] == b'+' || bytes[exp_end] == b'-') {
                        exp_end += 1;
                    }
                    let digits_start = exp_end;
                    while exp_end < bytes.len() && bytes[exp_end].is_ascii_digit() {
                        exp_end += 1;
                    }
                    if exp_end > digits_start {
                        end = exp_end;
                    }
                }
                let text = &src[pos..end];
                let value: f64 = text.parse().map_err(|_| Error::Syntax {
                    offset: start,
                    expected: format!("a number, found `{text}`"),
                })?;
                pos = end;
                out.push((Tok::Num(value), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut end = pos;
                while end < bytes.len() && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_')
                {
                    end += 1;
                }
                out.push((Tok::Ident(src[pos..end].to_string()), start));
                pos = end;
                continue;
            }
            _ => {
                return Err(Error::Syntax {
                    offset: start,
                    expected: format!("an operator or operand, found `{}`", ch as char),
                })
            }
        };
        out.push((tok, start));
        pos += 1;
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parsing

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let tok = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        tok
    }

    fn fail<T>(&self, expected: &str) -> Result<T> {
        Err(Error::Syntax {
            offset: self.offset(),
            expected: format!("{expected}, found {}", self.peek().describe()),
        })
    }

    fn expect(&mut self, tok: Tok) -> Result<()> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.fail(&tok.describe())
        }
    }

    fn sum(&mut self) -> Result<Expr> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.product()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn product(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn condition(&mut self) -> Result<Condition> {
        let lhs = self.sum()?;
        let op = match self.peek() {
            Tok::Cmp(op) => *op,
            _ => return self.fail("a comparison `<`, `<=`, `>` or `>=`"),
        };
        self.bump();
        let rhs = self.sum()?;
        Ok(Condition { op, lhs, rhs })
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Num(v))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.sum()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                let sym = match name.as_str() {
                    "z" => Some(Symbol::Z),
                    "t" => Some(Symbol::T),
                    "pi" => Some(Symbol::Pi),
                    "eta0" => Some(Symbol::Eta0),
                    _ => None,
                };
                if let Some(sym) = sym {
                    self.bump();
                    return Ok(Expr::Sym(sym));
                }
                if name == "if" {
                    self.bump();
                    self.expect(Tok::LParen)?;
                    let cond = self.condition()?;
                    self.expect(Tok::Comma)?;
                    let then = self.sum()?;
                    self.expect(Tok::Comma)?;
                    let otherwise = self.sum()?;
                    self.expect(Tok::RParen)?;
                    return Ok(Expr::If(Box::new(cond), Box::new(then), Box::new(otherwise)));
                }
                if let Some(func) = Func::from_name(&name) {
                    self.bump();
                    self.expect(Tok::LParen)?;
                    let arg = self.sum()?;
                    self.expect(Tok::RParen)?;
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                self.fail("one of z, t, pi, eta0, if, cos, sin, exp, sqrt, abs")
            }
            _ => self.fail("a number, symbol, function call or `(`"),
        }
    }
}

/// Parses an expression; syntax errors carry the byte offset of the
/// offending token (the input length at end of input).
pub fn parse(text: &str) -> Result<Expr> {
    let mut parser = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let expr = parser.sum()?;
    if *parser.peek() != Tok::End {
        return parser.fail("an operator or end of input");
    }
    Ok(expr)
}

impl FromStr for Expr {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse(s)
    }
}

// ---------------------------------------------------------------------------
// Evaluation

fn finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Eval(format!("non-finite result in {what}")))
    }
}

impl Expr {
    pub fn evaluate(&self, bindings: &Bindings) -> Result<f64> {
        self.eval_inner(bindings, &mut None)
    }

    /// Evaluates and records every conditional decision in evaluation order.
    pub fn evaluate_traced(&self, bindings: &Bindings, trace: &mut Vec<bool>) -> Result<f64> {
        let mut slot = Some(std::mem::take(trace));
        let result = self.eval_inner(bindings, &mut slot);
        *trace = slot.unwrap_or_default();
        result
    }

    fn eval_inner(&self, b: &Bindings, trace: &mut Option<Vec<bool>>) -> Result<f64> {
        match self {
            Expr::Num(v) => finite(*v, "literal"),
            Expr::Sym(sym) => finite(b.lookup(*sym)?, sym.name()),
            Expr::Neg(inner) => Ok(-inner.eval_inner(b, trace)?),
            Expr::Binary(op, lhs, rhs) => {
                let x = lhs.eval_inner(b, trace)?;
                let y = rhs.eval_inner(b, trace)?;
                match op {
                    BinOp::Add => finite(x + y, "addition"),
                    BinOp::Sub => finite(x - y, "subtraction"),
                    BinOp::Mul => finite(x * y, "multiplication"),
                    BinOp::Div => {
                        if y == 0.0 {
                            return Err(Error::Eval("division by zero".into()));
                        }
                        finite(x / y, "division")
                    }
                    BinOp::Pow => {
                        if x < 0.0 && y.fract() != 0.0 {
                            return Err(Error::Eval(format!(
                                "negative base {x} raised to non-integer power {y}"
                            )));
                        }
                        finite(x.powf(y), "exponentiation")
                    }
                }
            }
            Expr::Call(func, arg) => {
                let x = arg.eval_inner(b, trace)?;
                let value = match func {
                    Func::Cos => x.cos(),
                    Func::Sin => x.sin(),
                    Func::Exp => x.exp(),
                    Func::Sqrt => {
                        if x < 0.0 {
                            return Err(Error::Eval(format!("sqrt of negative value {x}")));
                        }
                        x.sqrt()
                    }
                    Func::Abs => x.abs(),
                };
                finite(value, func.name())
            }
            Expr::If(cond, then, otherwise) => {
                let lhs = cond.lhs.eval_inner(b, trace)?;
                let rhs = cond.rhs.eval_inner(b, trace)?;
                let taken = cond.op.holds(lhs, rhs);
                if let Some(trace) = trace.as_mut() {
                    trace.push(taken);
                }
                if taken {
                    then.eval_inner(b, trace)
                } else {
                    otherwise.eval_inner(b, trace)
                }
            }
        }
    }

    /// Free symbols referenced anywhere in the tree (`pi` excluded).
    pub fn symbols(&self) -> BTreeSet<Symbol> {
        let mut out = BTreeSet::new();
        self.collect_symbols(&mut out);
        out
    }

    fn collect_symbols(&self, out: &mut BTreeSet<Symbol>) {
        match self {
            Expr::Num(_) => {}
            Expr::Sym(Symbol::Pi) => {}
            Expr::Sym(s) => {
                out.insert(*s);
            }
            Expr::Neg(e) | Expr::Call(_, e) => e.collect_symbols(out),
            Expr::Binary(_, l, r) => {
                l.collect_symbols(out);
                r.collect_symbols(out);
            }
            Expr::If(c, a, b) => {
                c.lhs.collect_symbols(out);
                c.rhs.collect_symbols(out);
                a.collect_symbols(out);
                b.collect_symbols(out);
            }
        }
    }
}

/// Evaluates `expr` at each point with `variable` bound, on top of `extra`.
pub fn sample(expr: &Expr, variable: Symbol, points: &[f64], extra: &Bindings) -> Result<Vec<f64>> {
    points
        .iter()
        .map(|&p| {
            expr.evaluate(&extra.with(variable, p))
                .map_err(|err| Error::SampleEval {
                    expr: expr.to_string(),
                    variable: variable.name().chars().next().unwrap_or('?'),
                    coord: p,
                    reason: match err {
                        Error::Eval(msg) => msg,
                        other => other.to_string(),
                    },
                })
        })
        .collect()
}

/// Largest jump across a conditional threshold found on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpReport {
    pub max_jump: f64,
    /// Approximate coordinate of the largest jump, if any threshold was crossed.
    pub location: Option<f64>,
}

/// Samples `expr` at `samples` uniform points and, wherever the branch
/// pattern of the conditionals changes between neighbours, bisects down to
/// the threshold and measures the value jump across it.
pub fn jump_report(
    expr: &Expr,
    variable: Symbol,
    lo: f64,
    hi: f64,
    extra: &Bindings,
    samples: usize,
) -> Result<JumpReport> {
    let samples = samples.max(2);
    let eval = |x: f64| -> Result<(f64, Vec<bool>)> {
        let mut trace = Vec::new();
        let v = expr.evaluate_traced(&extra.with(variable, x), &mut trace)?;
        Ok((v, trace))
    };
    let step = (hi - lo) / (samples - 1) as f64;
    let mut report = JumpReport {
        max_jump: 0.0,
        location: None,
    };
    let mut prev_x = lo;
    let mut prev = eval(lo)?;
    for n in 1..samples {
        let x = if n == samples - 1 { hi } else { lo + n as f64 * step };
        let cur = eval(x)?;
        if cur.1 != prev.1 {
            let (mut a, mut b) = (prev_x, x);
            let (mut fa, mut fb) = (prev.clone(), cur.clone());
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if mid <= a || mid >= b {
                    break;
                }
                let fm = eval(mid)?;
                if fm.1 == fa.1 {
                    a = mid;
                    fa = fm;
                } else {
                    b = mid;
                    fb = fm;
                }
            }
            let jump = (fb.0 - fa.0).abs();
            if jump > report.max_jump || report.location.is_none() {
                report.max_jump = jump;
                report.location = Some(0.5 * (a + b));
            }
        }
        prev_x = x;
        prev = cur;
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Printing: fully parenthesized so that reparsing gives the same tree.

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Sym(s) => f.write_str(s.name()),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Binary(op, l, r) => write!(f, "({l}{}{r})", op.symbol()),
            Expr::Call(func, arg) => write!(f, "{}({arg})", func.name()),
            Expr::If(c, a, b) => write!(f, "if({}{}{}, {a}, {b})", c.lhs, c.op.symbol(), c.rhs),
        }
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse(&text).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eval(src: &str, b: Bindings) -> Result<f64> {
        parse(src)?.evaluate(&b)
    }

    /// Three-branch profile written with nested conditionals.
    const PIECEWISE_ETA: &str = "if(z<=0.25, 10-16*(10-eta0)*(z-0.25)^2, \
                                 if(z<=0.75, 10, 10-128*(z-0.75)^2))";

    #[test]
    fn constant_arithmetic() {
        assert_eq!(eval("2*(3+4)", Bindings::new()).unwrap(), 14.0);
        assert_eq!(eval("2*(3+4)", Bindings::new().z(9.0).t(1.0)).unwrap(), 14.0);
    }

    #[test]
    fn cosine_data_at_origin() {
        let e = parse("1+cos(8*pi*z)").unwrap();
        assert_eq!(e.evaluate(&Bindings::new().z(0.0)).unwrap(), 2.0);
    }

    #[test]
    fn unbalanced_paren_reports_offset() {
        match parse("1+cos(8*pi*") {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, 11),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn syntax_errors_point_at_token() {
        match parse("z + * 2") {
            Err(Error::Syntax { offset, expected }) => {
                assert_eq!(offset, 4);
                assert!(expected.contains("`*`"), "{expected}");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("foo(z)"), Err(Error::Syntax { offset: 0, .. })));
        assert!(matches!(parse("z z"), Err(Error::Syntax { offset: 2, .. })));
        assert!(matches!(parse("if(z, 1, 2)"), Err(Error::Syntax { .. })));
        assert!(matches!(parse(""), Err(Error::Syntax { offset: 0, .. })));
    }

    #[test]
    fn conditional_takes_one_branch() {
        assert_eq!(eval("if(z<=0.25, 1, 0)", Bindings::new().z(0.3)).unwrap(), 0.0);
        assert_eq!(eval("if(z<=0.25, 1, 0)", Bindings::new().z(0.25)).unwrap(), 1.0);
        // the untaken branch would fail
        assert_eq!(eval("if(z>0, 1/z, 5)", Bindings::new().z(0.0)).unwrap(), 5.0);
    }

    #[test]
    fn linear_target_endpoint() {
        let v = eval("eta0 + (10-eta0)*z", Bindings::new().z(1.0).eta0(2.2737)).unwrap();
        assert!((v - 10.0).abs() < 1e-12);
    }

    #[test]
    fn evaluation_errors() {
        assert!(matches!(eval("1/z", Bindings::new().z(0.0)), Err(Error::Eval(_))));
        assert!(matches!(eval("exp(z)", Bindings::new().z(1000.0)), Err(Error::Eval(_))));
        assert!(matches!(eval("(-2)^0.5", Bindings::new()), Err(Error::Eval(_))));
        assert_eq!(eval("(-2)^3", Bindings::new()).unwrap(), -8.0);
        assert!(matches!(eval("sqrt(-1)", Bindings::new()), Err(Error::Eval(_))));
        match eval("z + t", Bindings::new().z(1.0)) {
            Err(Error::Eval(msg)) => assert!(msg.contains("`t`")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(eval("eta0", Bindings::new()), Err(Error::Eval(_))));
    }

    #[test]
    fn precedence_and_associativity() {
        let b = Bindings::new();
        assert_eq!(eval("-2^2", b).unwrap(), -4.0);
        assert_eq!(eval("2^3^2", b).unwrap(), 512.0);
        assert_eq!(eval("2^-1", b).unwrap(), 0.5);
        assert_eq!(eval("8/4/2", b).unwrap(), 1.0);
        assert_eq!(eval("8-4-2", b).unwrap(), 2.0);
        assert_eq!(eval("1+2*3", b).unwrap(), 7.0);
        assert_eq!(eval("1.5e1 + 2E-1", b).unwrap(), 15.2);
        assert!((eval("abs(sin(pi))", b).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn sample_identity_and_data() {
        let z = parse("z").unwrap();
        assert_eq!(
            sample(&z, Symbol::Z, &[0.0, 0.5, 1.0], &Bindings::new()).unwrap(),
            vec![0.0, 0.5, 1.0]
        );
        let eta = parse(PIECEWISE_ETA).unwrap();
        let v = sample(&eta, Symbol::Z, &[0.5], &Bindings::new().eta0(0.4547)).unwrap();
        assert_eq!(v, vec![10.0]);
        let phi = parse("1+cos(pi*t)").unwrap();
        let v = sample(&phi, Symbol::T, &[4.0], &Bindings::new()).unwrap();
        assert!((v[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn sample_reports_failing_coordinate() {
        let e = parse("1/(z-0.5)").unwrap();
        match sample(&e, Symbol::Z, &[0.0, 0.25, 0.5, 1.0], &Bindings::new()) {
            Err(Error::SampleEval { coord, variable, .. }) => {
                assert_eq!(coord, 0.5);
                assert_eq!(variable, 'z');
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn symbols_are_collected() {
        let e = parse(PIECEWISE_ETA).unwrap();
        let syms: Vec<_> = e.symbols().into_iter().collect();
        assert_eq!(syms, vec![Symbol::Z, Symbol::Eta0]);
        assert!(parse("pi*2").unwrap().symbols().is_empty());
    }

    #[test]
    fn jump_report_finds_discontinuity() {
        let step = parse("if(z<=0.5, 0, 3)").unwrap();
        let rep = jump_report(&step, Symbol::Z, 0.0, 1.0, &Bindings::new(), 101).unwrap();
        assert!((rep.max_jump - 3.0).abs() < 1e-12);
        assert!((rep.location.unwrap() - 0.5).abs() < 1e-9);

        let eta = parse(PIECEWISE_ETA).unwrap();
        let rep = jump_report(&eta, Symbol::Z, 0.0, 1.0, &Bindings::new().eta0(0.4547), 1001)
            .unwrap();
        assert!(rep.max_jump < 1e-9, "{rep:?}");

        let smooth = parse("z^2").unwrap();
        let rep = jump_report(&smooth, Symbol::Z, 0.0, 1.0, &Bindings::new(), 11).unwrap();
        assert_eq!(rep.max_jump, 0.0);
        assert!(rep.location.is_none());
    }

    #[test]
    fn serde_uses_source_text() {
        let e: Expr = serde_json::from_str("\"1+cos(pi*t)\"").unwrap();
        let back = serde_json::to_string(&e).unwrap();
        let again: Expr = serde_json::from_str(&back).unwrap();
        assert_eq!(e, again);
        assert!(serde_json::from_str::<Expr>("\"1+\"").is_err());
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0f64..1e6).prop_map(Expr::Num),
            Just(Expr::Sym(Symbol::Z)),
            Just(Expr::Sym(Symbol::T)),
            Just(Expr::Sym(Symbol::Pi)),
            Just(Expr::Sym(Symbol::Eta0)),
        ];
        leaf.prop_recursive(5, 48, 3, |inner| {
            let op = prop_oneof![
                Just(BinOp::Add),
                Just(BinOp::Sub),
                Just(BinOp::Mul),
                Just(BinOp::Div),
                Just(BinOp::Pow)
            ];
            let func = prop_oneof![
                Just(Func::Cos),
                Just(Func::Sin),
                Just(Func::Exp),
                Just(Func::Sqrt),
                Just(Func::Abs)
            ];
            let cmp = prop_oneof![Just(CmpOp::Lt), Just(CmpOp::Le), Just(CmpOp::Gt), Just(CmpOp::Ge)];
            prop_oneof![
                inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                (op, inner.clone(), inner.clone())
                    .prop_map(|(op, l, r)| Expr::Binary(op, Box::new(l), Box::new(r))),
                (func, inner.clone()).prop_map(|(f, a)| Expr::Call(f, Box::new(a))),
                (cmp, inner.clone(), inner.clone(), inner.clone(), inner).prop_map(
                    |(op, lhs, rhs, a, b)| Expr::If(
                        Box::new(Condition { op, lhs, rhs }),
                        Box::new(a),
                        Box::new(b)
                    )
                ),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_then_parse_is_identity(e in arb_expr()) {
            let printed = e.to_string();
            let reparsed = parse(&printed).unwrap();
            prop_assert_eq!(&reparsed, &e);
            prop_assert_eq!(reparsed.to_string(), printed);
        }

        #[test]
        fn evaluation_is_deterministic(e in arb_expr(), z in -2.0f64..2.0, t in 0.0f64..6.0) {
            let b = Bindings::new().z(z).t(t).eta0(1.5);
            let first = e.evaluate(&b).ok();
            let second = e.evaluate(&b).ok();
            prop_assert_eq!(first.map(f64::to_bits), second.map(f64::to_bits));
        }
    }
}
