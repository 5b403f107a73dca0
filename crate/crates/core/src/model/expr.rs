//! Arithmetic expressions over one or two real variables.
//!
//! Expressions are parsed once into an AST (kept for printing) and compiled
//! into postfix bytecode for evaluation. Named parameters are substituted as
//! constants at parse time and constant subtrees are folded.

use std::collections::HashMap;
use std::fmt;

use crate::error::ExprError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    #[inline]
    fn raw(self, v: f64) -> f64 {
        self.apply(v).unwrap_or(f64::NAN)
    }

    fn apply(self, v: f64) -> Result<f64, ExprError> {
        match self {
            Func::Exp => Ok(v.exp()),
            Func::Log if v > 0.0 => Ok(v.ln()),
            Func::Log => Err(ExprError::Domain {
                func: "log",
                value: v,
            }),
            Func::Sin => Ok(v.sin()),
            Func::Cos => Ok(v.cos()),
            Func::Sqrt if v >= 0.0 => Ok(v.sqrt()),
            Func::Sqrt => Err(ExprError::Domain {
                func: "sqrt",
                value: v,
            }),
            Func::Abs => Ok(v.abs()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
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

    #[inline]
    fn raw(self, l: f64, r: f64) -> f64 {
        match self {
            BinOp::Add => l + r,
            BinOp::Sub => l - r,
            BinOp::Mul => l * r,
            BinOp::Div if r == 0.0 => f64::NAN,
            BinOp::Div => l / r,
            BinOp::Pow => pow(l, r),
        }
    }

    fn apply(self, l: f64, r: f64) -> Result<f64, ExprError> {
        match self {
            BinOp::Add => Ok(l + r),
            BinOp::Sub => Ok(l - r),
            BinOp::Mul => Ok(l * r),
            BinOp::Div if r == 0.0 => Err(ExprError::DivisionByZero),
            BinOp::Div => Ok(l / r),
            BinOp::Pow => {
                let v = pow(l, r);
                if v.is_nan() && !l.is_nan() && !r.is_nan() {
                    Err(ExprError::Domain {
                        func: "pow",
                        value: l,
                    })
                } else {
                    Ok(v)
                }
            }
        }
    }
}

#[inline]
fn pow(l: f64, r: f64) -> f64 {
    if r == 2.0 {
        l * l
    } else if r.fract() == 0.0 && r.abs() < 64.0 {
        l.powi(r as i32)
    } else {
        l.powf(r)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

impl Node {
    fn fold(self) -> Result<Node, ExprError> {
        Ok(match self {
            Node::Neg(inner) => match inner.fold()? {
                Node::Const(v) => Node::Const(-v),
                other => Node::Neg(Box::new(other)),
            },
            Node::Bin(op, l, r) => match (l.fold()?, r.fold()?) {
                (Node::Const(a), Node::Const(b)) => Node::Const(op.apply(a, b)?),
                (a, b) => Node::Bin(op, Box::new(a), Box::new(b)),
            },
            Node::Call(f, arg) => match arg.fold()? {
                Node::Const(v) => Node::Const(f.apply(v)?),
                other => Node::Call(f, Box::new(other)),
            },
            leaf => leaf,
        })
    }

    fn compile(&self, code: &mut Vec<Op>) {
        match self {
            Node::Const(v) => code.push(Op::Const(*v)),
            Node::Var(i) => code.push(Op::Var(*i)),
            Node::Neg(inner) => {
                inner.compile(code);
                code.push(Op::Neg);
            }
            Node::Bin(op, l, r) => {
                l.compile(code);
                r.compile(code);
                code.push(Op::Bin(*op));
            }
            Node::Call(f, arg) => {
                arg.compile(code);
                code.push(Op::Call(*f));
            }
        }
    }

    fn write(&self, out: &mut fmt::Formatter<'_>, names: &[String]) -> fmt::Result {
        match self {
            Node::Const(v) if *v < 0.0 || v.is_sign_negative() => write!(out, "({v:?})"),
            Node::Const(v) if v.is_infinite() => write!(out, "({v:?})"),
            Node::Const(v) => write!(out, "{v:?}"),
            Node::Var(i) => write!(out, "{}", names[*i]),
            Node::Neg(inner) => {
                write!(out, "(-")?;
                inner.write(out, names)?;
                write!(out, ")")
            }
            Node::Bin(op, l, r) => {
                write!(out, "(")?;
                l.write(out, names)?;
                write!(out, " {} ", op.symbol())?;
                r.write(out, names)?;
                write!(out, ")")
            }
            Node::Call(f, arg) => {
                write!(out, "{}(", f.name())?;
                arg.write(out, names)?;
                write!(out, ")")
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Var(usize),
    Neg,
    Bin(BinOp),
    Call(Func),
}

const STACK: usize = 32;

/// A parsed, immutable arithmetic expression.
#[derive(Debug, Clone)]
pub struct Expr {
    ast: Node,
    code: Vec<Op>,
    depth: usize,
    vars: Vec<String>,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.ast == other.ast && self.vars == other.vars
    }
}

/// Parses `text` over the variables `vars` with no named parameters.
pub fn parse_expr(text: &str, vars: &[&str]) -> Result<Expr, ExprError> {
    Expr::parse(text, vars, &HashMap::new())
}

impl Expr {
    /// Parses `text` over `vars`, substituting entries of `params` as constants.
    pub fn parse(
        text: &str,
        vars: &[&str],
        params: &HashMap<String, f64>,
    ) -> Result<Expr, ExprError> {
        if text.trim().is_empty() {
            return Err(ExprError::Syntax {
                pos: 0,
                msg: "empty expression".into(),
            });
        }
        let mut parser = Parser {
            src: text.as_bytes(),
            pos: 0,
            vars,
            params,
        };
        let ast = parser.expr()?;
        parser.skip_ws();
        if parser.pos < parser.src.len() {
            return Err(parser.error("unexpected trailing input"));
        }
        let ast = ast.fold()?;
        let mut code = Vec::new();
        ast.compile(&mut code);
        let depth = stack_depth(&code);
        Ok(Expr {
            ast,
            code,
            depth,
            vars: vars.iter().map(|s| s.to_string()).collect(),
        })
    }

    /// Number of variables the expression was declared over.
    pub fn arity(&self) -> usize {
        self.vars.len()
    }

    /// Returns the value if the expression folded to a constant.
    pub fn as_constant(&self) -> Option<f64> {
        match self.ast {
            Node::Const(v) => Some(v),
            _ => None,
        }
    }

    /// Evaluates at `args`, which must have one entry per declared variable.
    pub fn eval(&self, args: &[f64]) -> Result<f64, ExprError> {
        if args.len() != self.vars.len() {
            return Err(ExprError::Arity {
                expected: self.vars.len(),
                got: args.len(),
            });
        }
        if self.depth <= 4 {
            let mut stack = [0.0; 4];
            self.run(args, &mut stack)
        } else if self.depth <= STACK {
            let mut stack = [0.0; STACK];
            self.run(args, &mut stack)
        } else {
            let mut stack = vec![0.0; self.depth];
            self.run(args, &mut stack)
        }
    }

    /// Evaluates a one-variable expression.
    #[inline]
    pub fn eval1(&self, x: f64) -> Result<f64, ExprError> {
        self.eval(&[x])
    }

    /// Evaluates a one-variable expression, mapping every domain error to NaN.
    #[inline]
    pub fn eval1_or_nan(&self, x: f64) -> f64 {
        if self.depth > 8 {
            return self.eval1(x).unwrap_or(f64::NAN);
        }
        let mut stack = [0.0; 8];
        let mut sp = 0;
        for op in &self.code {
            match *op {
                Op::Const(v) => {
                    stack[sp] = v;
                    sp += 1;
                }
                Op::Var(_) => {
                    stack[sp] = x;
                    sp += 1;
                }
                Op::Neg => stack[sp - 1] = -stack[sp - 1],
                Op::Bin(b) => {
                    sp -= 1;
                    stack[sp - 1] = b.raw(stack[sp - 1], stack[sp]);
                }
                Op::Call(f) => stack[sp - 1] = f.raw(stack[sp - 1]),
            }
        }
        stack[0]
    }

    /// Evaluates a two-variable expression.
    #[inline]
    pub fn eval2(&self, x: f64, y: f64) -> Result<f64, ExprError> {
        self.eval(&[x, y])
    }

    fn run(&self, args: &[f64], stack: &mut [f64]) -> Result<f64, ExprError> {
        let mut sp = 0;
        for op in &self.code {
            match *op {
                Op::Const(v) => {
                    stack[sp] = v;
                    sp += 1;
                }
                Op::Var(i) => {
                    stack[sp] = args[i];
                    sp += 1;
                }
                Op::Neg => stack[sp - 1] = -stack[sp - 1],
                Op::Bin(b) => {
                    sp -= 1;
                    stack[sp - 1] = b.apply(stack[sp - 1], stack[sp])?;
                }
                Op::Call(f) => stack[sp - 1] = f.apply(stack[sp - 1])?,
            }
        }
        Ok(stack[0])
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.ast.write(f, &self.vars)
    }
}

fn stack_depth(code: &[Op]) -> usize {
    let mut sp: usize = 0;
    let mut max = 0;
    for op in code {
        match op {
            Op::Const(_) | Op::Var(_) => sp += 1,
            Op::Bin(_) => sp -= 1,
            Op::Neg | Op::Call(_) => {}
        }
        max = max.max(sp);
    }
    max
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    vars: &'a [&'a str],
    params: &'a HashMap<String, f64>,
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> ExprError {
        ExprError::Syntax {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
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
        let base = self.primary()?;
        if self.eat(b'^') {
            let exponent = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected `)`"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            Some(_) => Err(self.error("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
        };
        digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            digits(self);
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if self.src.get(self.pos).is_some_and(u8::is_ascii_digit) {
                digits(self);
            } else {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii slice");
        text.parse::<f64>()
            .map(Node::Const)
            .map_err(|_| ExprError::Syntax {
                pos: start,
                msg: format!("invalid number `{text}`"),
            })
    }

    fn identifier(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii slice");
        if let Some(i) = self.vars.iter().position(|v| *v == name) {
            return Ok(Node::Var(i));
        }
        if let Some(&v) = self.params.get(name) {
            return Ok(Node::Const(v));
        }
        if let Some(func) = Func::from_name(name) {
            if !self.eat(b'(') {
                return Err(self.error(&format!("expected `(` after `{name}`")));
            }
            let arg = self.expr()?;
            if !self.eat(b')') {
                return Err(self.error("expected `)`"));
            }
            return Ok(Node::Call(func, Box::new(arg)));
        }
        if name == "pi" {
            return Ok(Node::Const(std::f64::consts::PI));
        }
        Err(ExprError::UnknownIdentifier {
            name: name.to_string(),
            pos: start,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn square_at_three() {
        let e = parse_expr("x^2", &["x"]).unwrap();
        assert_eq!(e.eval1(3.0).unwrap(), 9.0);
    }

    #[test]
    fn linear_cost_with_parameters() {
        let p = params(&[("c", 150.0), ("lambda", 50.0)]);
        let e = Expr::parse("-c - lambda*(x - y)", &["x", "y"], &p).unwrap();
        let v = e.eval2(12.261, 5.077).unwrap();
        assert!((v - (-509.2)).abs() < 1e-9);
    }

    #[test]
    fn trig_difference() {
        let e = parse_expr("sin(x) - sin(y)", &["x", "y"]).unwrap();
        let v = e.eval2(std::f64::consts::FRAC_PI_2, 0.0).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn precedence_and_associativity() {
        let e = parse_expr("-x^2", &["x"]).unwrap();
        assert_eq!(e.eval1(3.0).unwrap(), -9.0);
        let e = parse_expr("2^3^2", &[]).unwrap();
        assert_eq!(e.as_constant(), Some(512.0));
        let e = parse_expr("2^-1", &[]).unwrap();
        assert_eq!(e.as_constant(), Some(0.5));
        let e = parse_expr("8/4/2", &[]).unwrap();
        assert_eq!(e.as_constant(), Some(1.0));
        let e = parse_expr("1 - 2 - 3", &[]).unwrap();
        assert_eq!(e.as_constant(), Some(-4.0));
        let e = parse_expr("1.5e-1 * 2", &[]).unwrap();
        assert_eq!(e.as_constant(), Some(0.3));
    }

    #[test]
    fn reports_errors() {
        assert!(matches!(
            parse_expr("x + z", &["x"]),
            Err(ExprError::UnknownIdentifier { pos: 4, .. })
        ));
        assert!(matches!(
            parse_expr("x + (1", &["x"]),
            Err(ExprError::Syntax { .. })
        ));
        assert!(matches!(
            parse_expr("  ", &["x"]),
            Err(ExprError::Syntax { .. })
        ));
        assert!(matches!(
            parse_expr("1/0", &[]),
            Err(ExprError::DivisionByZero)
        ));
        let e = parse_expr("1/x", &["x"]).unwrap();
        assert_eq!(e.eval1(0.0), Err(ExprError::DivisionByZero));
        let e = parse_expr("log(x)", &["x"]).unwrap();
        assert!(matches!(
            e.eval1(-1.0),
            Err(ExprError::Domain { func: "log", .. })
        ));
        let e = parse_expr("x^0.75", &["x"]).unwrap();
        assert!(matches!(
            e.eval1(-1.0),
            Err(ExprError::Domain { func: "pow", .. })
        ));
        assert!(matches!(e.eval(&[1.0, 2.0]), Err(ExprError::Arity { .. })));
    }

    #[test]
    fn constants_fold() {
        let p = params(&[("a", 2.0)]);
        let e = Expr::parse("exp(0) * a + sqrt(4)", &["x"], &p).unwrap();
        assert_eq!(e.as_constant(), Some(4.0));
        let e = parse_expr("x * 0 + 1", &["x"]).unwrap();
        assert_eq!(e.as_constant(), None);
    }

    #[test]
    fn display_round_trips() {
        let p = params(&[("k", 0.7), ("g", 0.75), ("K", -0.1)]);
        for text in [
            "k*(x-y)^g + K",
            "-x^2",
            "abs(x - y) / (1 + exp(-x)) - cos(y)*log(2 + x^2)",
            "-(-x)",
        ] {
            let e = Expr::parse(text, &["x", "y"], &p).unwrap();
            let again = parse_expr(&e.to_string(), &["x", "y"]).unwrap();
            for &(x, y) in &[(1.3, 0.2), (2.5, -1.0), (0.4, 0.1)] {
                assert_eq!(e.eval2(x, y), again.eval2(x, y));
            }
        }
    }

    #[test]
    fn deep_expressions_use_heap_stack() {
        let text = (0..40).map(|_| "(x+").collect::<String>() + "1" + &")".repeat(40);
        let e = parse_expr(&text, &["x"]).unwrap();
        assert_eq!(e.eval1(1.0).unwrap(), 41.0);
    }
}
