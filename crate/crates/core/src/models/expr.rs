//! Coefficient expressions.
//!
//! Grammar (precedence `^` > unary `-` > `* /` > `+ -`, `^` right-associative):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | ident | func '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! so `-x^2` is `-(x^2)`, `2^-1` is `2^(-1)` and `2^3^2` is `2^9`.
//! Functions: `abs sgn exp tanh sin cos sqrt` (one argument), `min max` (two).

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: expected {}, found {found}", expected.join(" | "))]
    Syntax { offset: usize, expected: Vec<String>, found: String },
    #[error("unknown identifier `{name}` at byte {offset}; valid variables: {}", valid.join(", "))]
    UnknownIdentifier { name: String, offset: usize, valid: Vec<String> },
    #[error("unknown function `{name}` at byte {offset}; valid functions: {}", valid.join(", "))]
    UnknownFunction { name: String, offset: usize, valid: Vec<String> },
    #[error("function `{name}` at byte {offset} takes {expected} argument(s), got {got}")]
    Arity { name: String, offset: usize, expected: usize, got: usize },
    #[error("division by zero at byte {offset}")]
    DivisionByZero { offset: usize },
    #[error("sqrt of negative value {value} at byte {offset}")]
    SqrtNegative { offset: usize, value: f64 },
    #[error("wrong number of variables: expression over {expected}, point has {got}")]
    Dimension { expected: usize, got: usize },
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
pub enum Func {
    Abs,
    Sgn,
    Exp,
    Tanh,
    Sin,
    Cos,
    Sqrt,
    Min,
    Max,
}

const FUNCS: [(&str, Func, usize); 9] = [
    ("abs", Func::Abs, 1),
    ("sgn", Func::Sgn, 1),
    ("exp", Func::Exp, 1),
    ("tanh", Func::Tanh, 1),
    ("sin", Func::Sin, 1),
    ("cos", Func::Cos, 1),
    ("sqrt", Func::Sqrt, 1),
    ("min", Func::Min, 2),
    ("max", Func::Max, 2),
];

impl Func {
    fn name(self) -> &'static str {
        FUNCS.iter().find(|(_, f, _)| *f == self).map(|(n, _, _)| *n).unwrap()
    }
}

/// Expression tree. Byte offsets are kept on nodes that can fail at evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Bin { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr>, offset: usize },
    Call { func: Func, args: Vec<Expr>, offset: usize },
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

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(x) => write!(f, "number {x}"),
            Tok::Ident(s) => write!(f, "identifier `{s}`"),
            Tok::Op(c) => write!(f, "`{c}`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::End => f.write_str("end of input"),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || (c == '.' && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit())) {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
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
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| ExprError::Syntax {
                offset: start,
                expected: vec!["number".into()],
                found: format!("`{text}`"),
            })?;
            out.push((Tok::Num(v), start));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((Tok::Ident(src[start..i].to_string()), start));
            continue;
        }
        let tok = match c {
            '+' | '-' | '*' | '/' | '^' => Tok::Op(c),
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            _ => {
                let ch = src[start..].chars().next().unwrap();
                return Err(ExprError::Syntax {
                    offset: start,
                    expected: vec!["number".into(), "identifier".into(), "operator".into(), "`(`".into()],
                    found: format!("`{ch}`"),
                });
            }
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    vars: &'a [String],
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> ExprError {
        ExprError::Syntax {
            offset: self.offset(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.peek().to_string(),
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Tok::Op(c @ ('+' | '-')) = *self.peek() {
            let (_, offset) = self.bump();
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Bin { op, lhs: Box::new(lhs), rhs: Box::new(rhs), offset };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        while let Tok::Op(c @ ('*' | '/')) = *self.peek() {
            let (_, offset) = self.bump();
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Bin { op, lhs: Box::new(lhs), rhs: Box::new(rhs), offset };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if *self.peek() == Tok::Op('-') {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.primary()?;
        if *self.peek() == Tok::Op('^') {
            let (_, offset) = self.bump();
            let exp = self.unary()?;
            return Ok(Expr::Bin { op: BinOp::Pow, lhs: Box::new(base), rhs: Box::new(exp), offset });
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        const START: [&str; 4] = ["number", "identifier", "`(`", "`-`"];
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Num(v))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                if *self.peek() != Tok::RParen {
                    return Err(self.error(&["`)`", "operator"]));
                }
                self.bump();
                Ok(e)
            }
            Tok::Ident(name) => {
                let (_, offset) = self.bump();
                if *self.peek() == Tok::LParen {
                    return self.call(name, offset);
                }
                self.variable(&name, offset)
            }
            _ => Err(self.error(&START)),
        }
    }

    fn call(&mut self, name: String, offset: usize) -> Result<Expr, ExprError> {
        let Some(&(_, func, arity)) = FUNCS.iter().find(|(n, _, _)| *n == name) else {
            return Err(ExprError::UnknownFunction {
                name,
                offset,
                valid: FUNCS.iter().map(|(n, _, _)| n.to_string()).collect(),
            });
        };
        self.bump(); // '('
        let mut args = vec![self.expr()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            args.push(self.expr()?);
        }
        if *self.peek() != Tok::RParen {
            return Err(self.error(&["`,`", "`)`", "operator"]));
        }
        self.bump();
        if args.len() != arity {
            return Err(ExprError::Arity { name, offset, expected: arity, got: args.len() });
        }
        Ok(Expr::Call { func, args, offset })
    }

    fn variable(&self, name: &str, offset: usize) -> Result<Expr, ExprError> {
        if let Some(i) = self.vars.iter().position(|v| v == name) {
            return Ok(Expr::Var(i));
        }
        // canonical names z1..zd are always accepted
        if let Some(i) = name.strip_prefix('z').and_then(|s| s.parse::<usize>().ok()) {
            if i >= 1 && i <= self.vars.len() {
                return Ok(Expr::Var(i - 1));
            }
        }
        Err(ExprError::UnknownIdentifier { name: name.to_string(), offset, valid: self.vars.to_vec() })
    }
}

#[derive(Debug, Clone, Copy)]
enum Instr {
    Const(f64),
    Var(usize),
    Neg,
    Add,
    Sub,
    Mul,
    Div(usize),
    Pow,
    Call1(Func, usize),
    Call2(Func),
}

/// A parsed coefficient expression over a fixed list of variables, compiled
/// to a small postfix program for evaluation.
#[derive(Debug, Clone)]
pub struct CoeffExpr {
    ast: Expr,
    vars: Vec<String>,
    program: Vec<Instr>,
    max_stack: usize,
}

impl PartialEq for CoeffExpr {
    fn eq(&self, other: &Self) -> bool {
        self.ast == other.ast && self.vars == other.vars
    }
}

/// Parse `src` over the given variable names.
pub fn parse_coeff_expr(src: &str, vars: &[String]) -> Result<CoeffExpr, ExprError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, vars };
    let ast = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(p.error(&["operator", "end of input"]));
    }
    Ok(CoeffExpr::from_ast(ast, vars.to_vec()))
}

impl CoeffExpr {
    pub fn from_ast(ast: Expr, vars: Vec<String>) -> Self {
        let mut program = Vec::new();
        compile(&ast, &mut program);
        let mut depth = 0usize;
        let mut max_stack = 0usize;
        for ins in &program {
            match ins {
                Instr::Const(_) | Instr::Var(_) => depth += 1,
                Instr::Neg | Instr::Call1(..) => {}
                _ => depth -= 1,
            }
            max_stack = max_stack.max(depth);
        }
        Self { ast, vars, program, max_stack }
    }

    pub fn constant(v: f64, vars: Vec<String>) -> Self {
        Self::from_ast(Expr::Num(v), vars)
    }

    pub fn ast(&self) -> &Expr {
        &self.ast
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn is_constant_zero(&self) -> bool {
        matches!(self.ast, Expr::Num(v) if v == 0.0)
    }

    /// True when the expression mentions no variable.
    pub fn is_constant(&self) -> bool {
        !self.program.iter().any(|i| matches!(i, Instr::Var(_)))
    }

    pub fn eval(&self, z: &[f64]) -> Result<f64, ExprError> {
        if z.len() < self.vars.len() {
            return Err(ExprError::Dimension { expected: self.vars.len(), got: z.len() });
        }
        let mut inline = [0.0f64; 32];
        let mut heap;
        let stack: &mut [f64] = if self.max_stack <= inline.len() {
            &mut inline
        } else {
            heap = vec![0.0; self.max_stack];
            &mut heap
        };
        let mut sp = 0usize;
        for ins in &self.program {
            match *ins {
                Instr::Const(v) => {
                    stack[sp] = v;
                    sp += 1;
                }
                Instr::Var(i) => {
                    stack[sp] = z[i];
                    sp += 1;
                }
                Instr::Neg => stack[sp - 1] = -stack[sp - 1],
                Instr::Call1(f, offset) => stack[sp - 1] = apply1(f, stack[sp - 1], offset)?,
                _ => {
                    let b = stack[sp - 1];
                    let a = stack[sp - 2];
                    sp -= 1;
                    stack[sp - 1] = match *ins {
                        Instr::Add => a + b,
                        Instr::Sub => a - b,
                        Instr::Mul => a * b,
                        Instr::Div(offset) => {
                            if b == 0.0 {
                                return Err(ExprError::DivisionByZero { offset });
                            }
                            a / b
                        }
                        Instr::Pow => pow(a, b),
                        Instr::Call2(Func::Min) => a.min(b),
                        Instr::Call2(_) => a.max(b),
                        _ => unreachable!(),
                    };
                }
            }
        }
        Ok(stack[0])
    }
}

fn pow(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() <= i32::MAX as f64 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

fn apply1(f: Func, x: f64, offset: usize) -> Result<f64, ExprError> {
    Ok(match f {
        Func::Abs => x.abs(),
        Func::Sgn => {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }
        Func::Exp => x.exp(),
        Func::Tanh => x.tanh(),
        Func::Sin => x.sin(),
        Func::Cos => x.cos(),
        Func::Sqrt => {
            if x < 0.0 {
                return Err(ExprError::SqrtNegative { offset, value: x });
            }
            x.sqrt()
        }
        Func::Min | Func::Max => unreachable!("binary function compiled as Call2"),
    })
}

fn compile(e: &Expr, out: &mut Vec<Instr>) {
    match e {
        Expr::Num(v) => out.push(Instr::Const(*v)),
        Expr::Var(i) => out.push(Instr::Var(*i)),
        Expr::Neg(inner) => {
            compile(inner, out);
            out.push(Instr::Neg);
        }
        Expr::Bin { op, lhs, rhs, offset } => {
            compile(lhs, out);
            compile(rhs, out);
            out.push(match op {
                BinOp::Add => Instr::Add,
                BinOp::Sub => Instr::Sub,
                BinOp::Mul => Instr::Mul,
                BinOp::Div => Instr::Div(*offset),
                BinOp::Pow => Instr::Pow,
            });
        }
        Expr::Call { func, args, offset } => {
            for a in args {
                compile(a, out);
            }
            out.push(match func {
                Func::Min | Func::Max => Instr::Call2(*func),
                f => Instr::Call1(*f, *offset),
            });
        }
    }
}

// Printer. Levels: 1 = + -, 2 = * /, 3 = unary -, 4 = ^, 5 = atom.
fn level(e: &Expr) -> u8 {
    match e {
        Expr::Num(v) if *v < 0.0 || v.is_sign_negative() => 3,
        Expr::Num(_) | Expr::Var(_) | Expr::Call { .. } => 5,
        Expr::Neg(_) => 3,
        Expr::Bin { op, .. } => match op {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        },
    }
}

fn write_expr(e: &Expr, vars: &[String], min: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let paren = level(e) < min;
    if paren {
        f.write_str("(")?;
    }
    match e {
        Expr::Num(v) => {
            if v.is_sign_negative() {
                write!(f, "-{}", -v)?;
            } else {
                write!(f, "{v}")?;
            }
        }
        Expr::Var(i) => match vars.get(*i) {
            Some(name) => f.write_str(name)?,
            None => write!(f, "z{}", i + 1)?,
        },
        Expr::Neg(inner) => {
            f.write_str("-")?;
            write_expr(inner, vars, 3, f)?;
        }
        Expr::Bin { op, lhs, rhs, .. } => {
            let (sym, lmin, rmin) = match op {
                BinOp::Add => (" + ", 1, 2),
                BinOp::Sub => (" - ", 1, 2),
                BinOp::Mul => ("*", 2, 3),
                BinOp::Div => ("/", 2, 3),
                BinOp::Pow => ("^", 5, 3),
            };
            write_expr(lhs, vars, lmin, f)?;
            f.write_str(sym)?;
            write_expr(rhs, vars, rmin, f)?;
        }
        Expr::Call { func, args, .. } => {
            write!(f, "{}(", func.name())?;
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write_expr(a, vars, 0, f)?;
            }
            f.write_str(")")?;
        }
    }
    if paren {
        f.write_str(")")?;
    }
    Ok(())
}

impl fmt::Display for CoeffExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(&self.ast, &self.vars, 0, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xyz() -> Vec<String> {
        vec!["x".into(), "y".into(), "z".into()]
    }

    fn eval(src: &str, z: &[f64]) -> f64 {
        parse_coeff_expr(src, &xyz()).unwrap().eval(z).unwrap()
    }

    #[test]
    fn drift_of_three_dimensional_example() {
        assert_eq!(eval("-x^3 + y/abs(y)", &[2.0, 1.0, 0.0]), -7.0);
    }

    #[test]
    fn zero_literal() {
        let e = parse_coeff_expr("0", &xyz()).unwrap();
        assert!(e.is_constant_zero());
        assert_eq!(e.eval(&[1.0, 2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn power_is_right_associative_and_binds_tighter_than_negation() {
        assert_eq!(eval("2^3^2", &[0.0; 3]), 512.0);
        assert_eq!(eval("-2^2", &[0.0; 3]), -4.0);
        assert_eq!(eval("2^-1", &[0.0; 3]), 0.5);
        assert_eq!(eval("(-2)^2", &[0.0; 3]), 4.0);
        assert_eq!(eval("2*3^2", &[0.0; 3]), 18.0);
        assert_eq!(eval("8/2/2", &[0.0; 3]), 2.0);
        assert_eq!(eval("1 - 2 - 3", &[0.0; 3]), -4.0);
    }

    #[test]
    fn functions_and_canonical_names() {
        assert_eq!(eval("max(x, z3) + min(1, 2)", &[1.0, 0.0, 5.0]), 6.0);
        assert_eq!(eval("sgn(y)", &[1.0, 0.0, 5.0]), 0.0);
        assert_eq!(eval("sqrt(4) + exp(0) + cos(0) + sin(0) + tanh(0)", &[0.0; 3]), 4.0);
        assert_eq!(eval("1.5e1 + .5", &[0.0; 3]), 15.5);
    }

    #[test]
    fn syntax_errors_carry_offset() {
        match parse_coeff_expr("x + * y", &xyz()) {
            Err(ExprError::Syntax { offset, expected, .. }) => {
                assert_eq!(offset, 4);
                assert!(expected.iter().any(|e| e == "identifier"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_coeff_expr("(x", &xyz()), Err(ExprError::Syntax { offset: 2, .. })));
        assert!(matches!(parse_coeff_expr("x y", &xyz()), Err(ExprError::Syntax { offset: 2, .. })));
        assert!(matches!(parse_coeff_expr("x # y", &xyz()), Err(ExprError::Syntax { offset: 2, .. })));
    }

    #[test]
    fn unknown_identifier_lists_variables() {
        match parse_coeff_expr("x + w", &xyz()) {
            Err(ExprError::UnknownIdentifier { name, offset, valid }) => {
                assert_eq!((name.as_str(), offset), ("w", 4));
                assert_eq!(valid, xyz());
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_coeff_expr("foo(x)", &xyz()), Err(ExprError::UnknownFunction { .. })));
        assert!(matches!(parse_coeff_expr("min(x)", &xyz()), Err(ExprError::Arity { .. })));
    }

    #[test]
    fn evaluation_errors() {
        let e = parse_coeff_expr("1 + x/y", &xyz()).unwrap();
        assert_eq!(e.eval(&[1.0, 0.0, 0.0]), Err(ExprError::DivisionByZero { offset: 5 }));
        let e = parse_coeff_expr("sqrt(x)", &xyz()).unwrap();
        assert!(matches!(e.eval(&[-1.0, 0.0, 0.0]), Err(ExprError::SqrtNegative { offset: 0, .. })));
    }

    #[test]
    fn printer_round_trip() {
        for src in ["-x^3 + y/abs(y)", "2^3^2", "(2^3)^2", "-(x + y)*z", "x - (y - z)", "x/(y*z)", "--x", "2^-x", "(-x)^2"] {
            let e = parse_coeff_expr(src, &xyz()).unwrap();
            let printed = e.to_string();
            let again = parse_coeff_expr(&printed, &xyz()).unwrap();
            assert_eq!(again.to_string(), printed, "{src}");
            for z in [[0.3, -1.2, 2.0], [1.5, 0.7, -0.4]] {
                assert_eq!(e.eval(&z).unwrap().to_bits(), again.eval(&z).unwrap().to_bits(), "{src} -> {printed}");
            }
        }
    }
}
