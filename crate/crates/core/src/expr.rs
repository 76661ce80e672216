//! Closed expression grammar for user-supplied scalar functions.
//!
//! Functions such as `f`, `σ`, `h` and initial data are given as text, e.g.
//! `u*log(exp(1)+abs(u))` or `40*sin(pi*x)`. The grammar is closed:
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | const | var | func '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Constants are `e` and `pi`. Functions are `exp`, `log`, `abs`, `min`,
//! `max`, `sqrt`, `sign`, `sin` and `cos`. Parsed expressions are constant
//! folded and compiled to a small stack program.
//!
//! Besides plain `f64` evaluation, an expression can be evaluated on
//! [`LogReal`] values, which carry a sign and `ln|x|`. This lets growth
//! functions be evaluated at abscissae such as `exp(1e10)` that are far
//! beyond the `f64` range.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("parse error at byte {pos} in `{source_text}`: {message}")]
    Parse {
        source_text: String,
        pos: usize,
        message: String,
    },
    #[error("non-finite value while evaluating `{expr}` at {at}")]
    NonFinite { expr: String, at: String },
    #[error("log-space evaluation of `{expr}` is undefined: {reason}")]
    LogSpace { expr: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Func {
    Exp,
    Log,
    Abs,
    Min,
    Max,
    Sqrt,
    Sign,
    Sin,
    Cos,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            "sqrt" => Func::Sqrt,
            "sign" => Func::Sign,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
            Func::Sqrt => "sqrt",
            Func::Sign => "sign",
            Func::Sin => "sin",
            Func::Cos => "cos",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }

    fn apply(self, args: &[f64]) -> f64 {
        match self {
            Func::Exp => args[0].exp(),
            Func::Log => args[0].ln(),
            Func::Abs => args[0].abs(),
            Func::Min => args[0].min(args[1]),
            Func::Max => args[0].max(args[1]),
            Func::Sqrt => args[0].sqrt(),
            Func::Sign => {
                if args[0] > 0.0 {
                    1.0
                } else if args[0] < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Func::Sin => args[0].sin(),
            Func::Cos => args[0].cos(),
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
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
            BinOp::Pow => a.powf(b),
        }
    }
}

/// Expression tree. Variables are referenced by position in the variable
/// list the expression was parsed against.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

impl Node {
    fn has_var(&self) -> bool {
        match self {
            Node::Const(_) => false,
            Node::Var(_) => true,
            Node::Neg(a) => a.has_var(),
            Node::Bin(_, a, b) => a.has_var() || b.has_var(),
            Node::Call(_, args) => args.iter().any(Node::has_var),
        }
    }

    fn eval_const(&self) -> Option<f64> {
        match self {
            Node::Const(c) => Some(*c),
            Node::Var(_) => None,
            Node::Neg(a) => a.eval_const().map(|v| -v),
            Node::Bin(op, a, b) => Some(op.apply(a.eval_const()?, b.eval_const()?)),
            Node::Call(f, args) => {
                let vals: Option<Vec<f64>> = args.iter().map(Node::eval_const).collect();
                Some(f.apply(&vals?))
            }
        }
    }

    /// Replace variable-free subtrees by their value.
    fn fold(self) -> Node {
        if !self.has_var() {
            if let Some(v) = self.eval_const() {
                if v.is_finite() {
                    return Node::Const(v);
                }
            }
        }
        match self {
            Node::Neg(a) => Node::Neg(Box::new(a.fold())),
            Node::Bin(op, a, b) => Node::Bin(op, Box::new(a.fold()), Box::new(b.fold())),
            Node::Call(f, args) => Node::Call(f, args.into_iter().map(Node::fold).collect()),
            other => other,
        }
    }

    fn substitute(&self, var: usize, with: &Node) -> Node {
        match self {
            Node::Var(i) if *i == var => with.clone(),
            Node::Const(_) | Node::Var(_) => self.clone(),
            Node::Neg(a) => Node::Neg(Box::new(a.substitute(var, with))),
            Node::Bin(op, a, b) => Node::Bin(
                *op,
                Box::new(a.substitute(var, with)),
                Box::new(b.substitute(var, with)),
            ),
            Node::Call(f, args) => {
                Node::Call(*f, args.iter().map(|a| a.substitute(var, with)).collect())
            }
        }
    }

    fn compile(&self, out: &mut Vec<Op>) {
        match self {
            Node::Const(c) => out.push(Op::Const(*c)),
            Node::Var(i) => out.push(Op::Var(*i)),
            Node::Neg(a) => {
                a.compile(out);
                out.push(Op::Neg);
            }
            Node::Bin(op, a, b) => {
                a.compile(out);
                b.compile(out);
                out.push(Op::Bin(*op));
            }
            Node::Call(f, args) => {
                for a in args {
                    a.compile(out);
                }
                out.push(Op::Call(*f));
            }
        }
    }

    fn write(&self, vars: &[String], f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Const(c) => {
                if *c < 0.0 {
                    write!(f, "({c})")
                } else {
                    write!(f, "{c}")
                }
            }
            Node::Var(i) => write!(f, "{}", vars[*i]),
            Node::Neg(a) => {
                write!(f, "(-")?;
                a.write(vars, f)?;
                write!(f, ")")
            }
            Node::Bin(op, a, b) => {
                write!(f, "(")?;
                a.write(vars, f)?;
                write!(f, "{}", op.symbol())?;
                b.write(vars, f)?;
                write!(f, ")")
            }
            Node::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        write!(f, ",")?;
                    }
                    a.write(vars, f)?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Var(usize),
    Neg,
    Bin(BinOp),
    Call(Func),
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    vars: &'a [String],
}

impl<'a> Parser<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Parse {
            source_text: self.src.to_string(),
            pos: self.pos,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exponent = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            None => self.err("unexpected end of input"),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return self.err("expected `)`");
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            Some(c) => self.err(format!("unexpected character `{}`", c as char)),
        }
    }

    fn number(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        while self.pos < self.bytes.len()
            && (self.bytes[self.pos].is_ascii_digit() || self.bytes[self.pos] == b'.')
        {
            self.pos += 1;
        }
        if self.pos < self.bytes.len() && (self.bytes[self.pos] | 0x20) == b'e' {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.bytes.len() && matches!(self.bytes[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if self.pos == digits {
                // `2e` is not an exponent; leave `e` for the identifier rule.
                self.pos = save;
            }
        }
        match self.src[start..self.pos].parse::<f64>() {
            Ok(v) => Ok(Node::Const(v)),
            Err(_) => {
                self.pos = start;
                self.err("malformed number")
            }
        }
    }

    fn ident(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        while self.pos < self.bytes.len()
            && (self.bytes[self.pos].is_ascii_alphanumeric() || self.bytes[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];
        if let Some(i) = self.vars.iter().position(|v| v == name) {
            return Ok(Node::Var(i));
        }
        match name {
            "e" => return Ok(Node::Const(std::f64::consts::E)),
            "pi" => return Ok(Node::Const(std::f64::consts::PI)),
            _ => {}
        }
        let Some(func) = Func::from_name(name) else {
            self.pos = start;
            return self.err(format!("unknown identifier `{name}`"));
        };
        if !self.eat(b'(') {
            return self.err(format!("expected `(` after `{name}`"));
        }
        let mut args = vec![self.expr()?];
        while self.eat(b',') {
            args.push(self.expr()?);
        }
        if !self.eat(b')') {
            return self.err("expected `)` or `,`");
        }
        if args.len() != func.arity() {
            return self.err(format!(
                "`{name}` takes {} argument(s), got {}",
                func.arity(),
                args.len()
            ));
        }
        Ok(Node::Call(func, args))
    }
}

/// A parsed, folded and compiled expression.
#[derive(Debug, Clone)]
pub struct Expr {
    root: Node,
    vars: Vec<String>,
    program: Vec<Op>,
    depth: usize,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root && self.vars == other.vars
    }
}

impl Expr {
    /// Parse an expression in the single state variable `u`.
    pub fn parse(src: &str) -> Result<Expr, ExprError> {
        Expr::parse_with_vars(src, &["u"])
    }

    /// Parse an expression in spatial variables `x`, `y`, `z` (initial data).
    pub fn parse_spatial(src: &str, dim: usize) -> Result<Expr, ExprError> {
        let names = ["x", "y", "z"];
        Expr::parse_with_vars(src, &names[..dim.clamp(1, 3)])
    }

    pub fn parse_with_vars(src: &str, vars: &[&str]) -> Result<Expr, ExprError> {
        let vars: Vec<String> = vars.iter().map(|s| s.to_string()).collect();
        let mut p = Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            vars: &vars,
        };
        let root = p.expr()?;
        if p.peek().is_some() {
            return p.err("trailing input");
        }
        Ok(Expr::from_node(root, vars))
    }

    fn from_node(root: Node, vars: Vec<String>) -> Expr {
        let root = root.fold();
        let mut program = Vec::new();
        root.compile(&mut program);
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        for op in &program {
            match op {
                Op::Const(_) | Op::Var(_) => depth += 1,
                Op::Neg => {}
                Op::Bin(_) => depth -= 1,
                Op::Call(f) => depth -= f.arity() - 1,
            }
            max_depth = max_depth.max(depth);
        }
        Expr {
            root,
            vars,
            program,
            depth: max_depth,
        }
    }

    pub fn constant(c: f64) -> Expr {
        Expr::from_node(Node::Const(c), vec!["u".to_string()])
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    /// `Some(c)` when the expression does not depend on any variable.
    pub fn as_constant(&self) -> Option<f64> {
        match self.root {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_constant() == Some(0.0)
    }

    /// Compose with the clamp `u ↦ min(max(u, -c), c)`.
    pub fn clamp_composed(&self, c: f64) -> Expr {
        let clamp = Node::Call(
            Func::Min,
            vec![
                Node::Call(Func::Max, vec![Node::Var(0), Node::Const(-c)]),
                Node::Const(c),
            ],
        );
        Expr::from_node(self.root.substitute(0, &clamp), self.vars.clone())
    }

    /// Evaluate at a single point of the first variable.
    pub fn eval(&self, u: f64) -> f64 {
        self.eval_vars(&[u])
    }

    pub fn eval_vars(&self, vars: &[f64]) -> f64 {
        let mut stack = [0.0f64; 32];
        if self.depth <= stack.len() {
            self.run(vars, &mut stack)
        } else {
            let mut heap = vec![0.0; self.depth];
            self.run(vars, &mut heap)
        }
    }

    /// Evaluate pointwise over a slice of values of the first variable.
    pub fn eval_into(&self, input: &[f64], output: &mut [f64]) {
        debug_assert_eq!(input.len(), output.len());
        if let Some(c) = self.as_constant() {
            output.fill(c);
            return;
        }
        let mut heap;
        let mut small = [0.0f64; 32];
        let stack: &mut [f64] = if self.depth <= small.len() {
            &mut small
        } else {
            heap = vec![0.0; self.depth];
            &mut heap
        };
        for (o, &u) in output.iter_mut().zip(input) {
            *o = self.run(std::slice::from_ref(&u), stack);
        }
    }

    #[inline]
    fn run(&self, vars: &[f64], stack: &mut [f64]) -> f64 {
        let mut sp = 0usize;
        for op in &self.program {
            match *op {
                Op::Const(c) => {
                    stack[sp] = c;
                    sp += 1;
                }
                Op::Var(i) => {
                    stack[sp] = vars[i];
                    sp += 1;
                }
                Op::Neg => stack[sp - 1] = -stack[sp - 1],
                Op::Bin(b) => {
                    sp -= 1;
                    stack[sp - 1] = b.apply(stack[sp - 1], stack[sp]);
                }
                Op::Call(f) => {
                    let n = f.arity();
                    let v = f.apply(&stack[sp - n..sp]);
                    sp -= n - 1;
                    stack[sp - 1] = v;
                }
            }
        }
        stack[0]
    }

    /// Evaluate with the first variable given in log-magnitude form.
    pub fn eval_log(&self, u: LogReal) -> Result<LogReal, ExprError> {
        let mut stack: Vec<LogReal> = Vec::with_capacity(self.depth);
        for op in &self.program {
            match *op {
                Op::Const(c) => stack.push(LogReal::from_f64(c)),
                Op::Var(_) => stack.push(u),
                Op::Neg => {
                    let a = stack.pop().unwrap();
                    stack.push(a.neg());
                }
                Op::Bin(b) => {
                    let rhs = stack.pop().unwrap();
                    let lhs = stack.pop().unwrap();
                    let v = match b {
                        BinOp::Add => Ok(lhs.add(rhs)),
                        BinOp::Sub => Ok(lhs.add(rhs.neg())),
                        BinOp::Mul => Ok(lhs.mul(rhs)),
                        BinOp::Div => lhs.div(rhs),
                        BinOp::Pow => lhs.pow(rhs),
                    };
                    stack.push(v.map_err(|reason| self.log_err(reason))?);
                }
                Op::Call(f) => {
                    let v = match f {
                        Func::Min | Func::Max => {
                            let b = stack.pop().unwrap();
                            let a = stack.pop().unwrap();
                            let a_less = a.lt(&b);
                            Ok(if (f == Func::Min) == a_less { a } else { b })
                        }
                        _ => {
                            let a = stack.pop().unwrap();
                            match f {
                                Func::Exp => a.exp(),
                                Func::Log => a.log(),
                                Func::Abs => Ok(a.abs()),
                                Func::Sqrt => a.pow(LogReal::from_f64(0.5)),
                                Func::Sign => Ok(LogReal::from_f64(a.sign as f64)),
                                Func::Sin | Func::Cos => match a.to_f64() {
                                    x if x.is_finite() => Ok(LogReal::from_f64(f.apply(&[x]))),
                                    _ => Err("trigonometric function of a huge argument".into()),
                                },
                                Func::Min | Func::Max => unreachable!(),
                            }
                        }
                    };
                    stack.push(v.map_err(|reason| self.log_err(reason))?);
                }
            }
        }
        Ok(stack.pop().unwrap())
    }

    fn log_err(&self, reason: String) -> ExprError {
        ExprError::LogSpace {
            expr: self.to_string(),
            reason,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.write(&self.vars, f)
    }
}

impl std::str::FromStr for Expr {
    type Err = ExprError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expr::parse(s)
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Expr::parse(&text).map_err(serde::de::Error::custom)
    }
}

/// A real number stored as a sign and the natural log of its magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogReal {
    /// -1, 0 or 1.
    pub sign: i8,
    /// `ln|x|`; meaningless when `sign == 0`.
    pub ln: f64,
}

// `div` is fallible, so these stay inherent methods rather than operator impls.
#[allow(clippy::should_implement_trait)]
impl LogReal {
    pub const ZERO: LogReal = LogReal {
        sign: 0,
        ln: f64::NEG_INFINITY,
    };

    pub fn from_f64(x: f64) -> LogReal {
        if x == 0.0 {
            LogReal::ZERO
        } else {
            LogReal {
                sign: if x > 0.0 { 1 } else { -1 },
                ln: x.abs().ln(),
            }
        }
    }

    /// The positive number `exp(ln)`.
    pub fn from_ln(ln: f64) -> LogReal {
        LogReal { sign: 1, ln }
    }

    pub fn to_f64(self) -> f64 {
        match self.sign {
            0 => 0.0,
            s => s as f64 * self.ln.exp(),
        }
    }

    pub fn neg(self) -> LogReal {
        LogReal {
            sign: -self.sign,
            ln: self.ln,
        }
    }

    pub fn abs(self) -> LogReal {
        LogReal {
            sign: self.sign.abs(),
            ln: self.ln,
        }
    }

    pub fn add(self, other: LogReal) -> LogReal {
        if self.sign == 0 {
            return other;
        }
        if other.sign == 0 {
            return self;
        }
        let (big, small) = if self.ln >= other.ln {
            (self, other)
        } else {
            (other, self)
        };
        let d = (small.ln - big.ln).exp();
        if big.sign == small.sign {
            LogReal {
                sign: big.sign,
                ln: big.ln + d.ln_1p(),
            }
        } else if d == 1.0 {
            LogReal::ZERO
        } else {
            LogReal {
                sign: big.sign,
                ln: big.ln + (-d).ln_1p(),
            }
        }
    }

    pub fn mul(self, other: LogReal) -> LogReal {
        if self.sign == 0 || other.sign == 0 {
            return LogReal::ZERO;
        }
        LogReal {
            sign: self.sign * other.sign,
            ln: self.ln + other.ln,
        }
    }

    pub fn div(self, other: LogReal) -> Result<LogReal, String> {
        if other.sign == 0 {
            return Err("division by zero".into());
        }
        if self.sign == 0 {
            return Ok(LogReal::ZERO);
        }
        Ok(LogReal {
            sign: self.sign * other.sign,
            ln: self.ln - other.ln,
        })
    }

    pub fn pow(self, exponent: LogReal) -> Result<LogReal, String> {
        let b = exponent.to_f64();
        if !b.is_finite() {
            return Err("exponent out of range".into());
        }
        match self.sign {
            0 if b > 0.0 => Ok(LogReal::ZERO),
            0 if b == 0.0 => Ok(LogReal::from_f64(1.0)),
            0 => Err("zero raised to a negative power".into()),
            1 => Ok(LogReal {
                sign: 1,
                ln: b * self.ln,
            }),
            _ => {
                if b.fract() != 0.0 {
                    return Err("negative base with non-integer exponent".into());
                }
                let odd = (b % 2.0).abs() == 1.0;
                Ok(LogReal {
                    sign: if odd { -1 } else { 1 },
                    ln: b * self.ln,
                })
            }
        }
    }

    pub fn exp(self) -> Result<LogReal, String> {
        let x = self.to_f64();
        if x.is_nan() || x == f64::INFINITY {
            return Err("exp of a value beyond the log-space range".into());
        }
        Ok(LogReal::from_ln(x))
    }

    pub fn log(self) -> Result<LogReal, String> {
        if self.sign <= 0 {
            return Err("log of a non-positive value".into());
        }
        Ok(LogReal::from_f64(self.ln))
    }

    fn lt(&self, other: &LogReal) -> bool {
        let key = |v: &LogReal| -> (i8, f64) {
            match v.sign {
                0 => (0, 0.0),
                1 => (1, v.ln),
                _ => (-1, -v.ln),
            }
        };
        let (sa, la) = key(self);
        let (sb, lb) = key(other);
        if sa != sb {
            sa < sb
        } else {
            la < lb
        }
    }
}
