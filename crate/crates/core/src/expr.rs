//! Arithmetic expression language for problem coefficients.
//!
//! Grammar, loosest to tightest binding:
//!
//! ```text
//! expr   := expr ('+' | '-') expr      left-associative
//!         | expr ('*' | '/') expr      left-associative
//!         | '-' expr                   unary minus
//!         | expr '^' expr              right-associative
//!         | number | ident | 'pi' | func '(' expr ')' | '(' expr ')'
//! func   := sin | cos | exp | sqrt | tanh | abs
//! ```
//!
//! Unary minus binds looser than `^`, so `-2^2` is `-(2^2)`. An exponent may
//! itself start with a minus sign (`2^-1`).

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("no binding for variable `{0}`")]
    Unbound(String),
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
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

    // (left, right) binding powers for the Pratt loop.
    fn binding_power(self) -> (u8, u8) {
        match self {
            BinOp::Add | BinOp::Sub => (1, 2),
            BinOp::Mul | BinOp::Div => (3, 4),
            BinOp::Pow => (7, 6),
        }
    }
}

const PREFIX_NEG_BP: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Tanh,
    Abs,
}

impl Func {
    pub const ALL: [Func; 6] = [Func::Sin, Func::Cos, Func::Exp, Func::Sqrt, Func::Tanh, Func::Abs];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Tanh => "tanh",
            Func::Abs => "abs",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }

    fn apply(self, v: f64) -> Result<f64, ExprError> {
        match self {
            Func::Sin => Ok(v.sin()),
            Func::Cos => Ok(v.cos()),
            Func::Exp => Ok(v.exp()),
            Func::Sqrt if v < 0.0 => Err(ExprError::Domain(format!("sqrt of negative value {v}"))),
            Func::Sqrt => Ok(v.sqrt()),
            Func::Tanh => Ok(v.tanh()),
            Func::Abs => Ok(v.abs()),
        }
    }
}

/// Parsed expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Variable bindings for [`Expr::eval`].
#[derive(Debug, Clone, Default)]
pub struct EvalEnv(HashMap<String, f64>);

impl EvalEnv {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.0.insert(name.to_string(), value);
        self
    }

    pub fn set(&mut self, name: &str, value: f64) {
        self.0.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.get(name).copied()
    }
}

fn check_finite(v: f64, what: &str) -> Result<f64, ExprError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ExprError::Domain(format!("{what} produced a non-finite value")))
    }
}

fn apply_binary(op: BinOp, l: f64, r: f64) -> Result<f64, ExprError> {
    let v = match op {
        BinOp::Add => l + r,
        BinOp::Sub => l - r,
        BinOp::Mul => l * r,
        BinOp::Div => {
            if r == 0.0 {
                return Err(ExprError::Domain("division by zero".into()));
            }
            l / r
        }
        BinOp::Pow => l.powf(r),
    };
    check_finite(v, match op {
        BinOp::Pow => "power",
        _ => "arithmetic",
    })
}

impl Expr {
    pub fn parse(source: &str) -> Result<Expr, ExprError> {
        parse(source)
    }

    pub fn constant(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn is_zero_constant(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    pub fn eval(&self, env: &EvalEnv) -> Result<f64, ExprError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var(name) => env.get(name).ok_or_else(|| ExprError::Unbound(name.clone())),
            Expr::Neg(e) => Ok(-e.eval(env)?),
            Expr::Binary(op, l, r) => apply_binary(*op, l.eval(env)?, r.eval(env)?),
            Expr::Call(f, arg) => check_finite(f.apply(arg.eval(env)?)?, f.name()),
        }
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(name) => {
                out.insert(name.clone());
            }
            Expr::Neg(e) | Expr::Call(_, e) => e.collect_vars(out),
            Expr::Binary(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
        }
    }

    /// Resolve variable names against `symbols` so the expression can be
    /// evaluated from a plain slice in hot loops.
    pub fn bind(&self, symbols: &[&str]) -> Result<BoundExpr, ExprError> {
        let node = self.bind_node(symbols)?;
        Ok(BoundExpr { node })
    }

    fn bind_node(&self, symbols: &[&str]) -> Result<Node, ExprError> {
        Ok(match self {
            Expr::Const(c) => Node::Const(*c),
            Expr::Var(name) => {
                let slot = symbols
                    .iter()
                    .position(|s| s == name)
                    .ok_or_else(|| ExprError::Unbound(name.clone()))?;
                Node::Slot(slot)
            }
            Expr::Neg(e) => Node::Neg(Box::new(e.bind_node(symbols)?)),
            Expr::Binary(op, l, r) => Node::Binary(
                *op,
                Box::new(l.bind_node(symbols)?),
                Box::new(r.bind_node(symbols)?),
            ),
            Expr::Call(f, e) => Node::Call(*f, Box::new(e.bind_node(symbols)?)),
        })
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Binary(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Binary(BinOp::Pow, ..) => 4,
            Expr::Const(c) if c.is_sign_negative() => 3,
            _ => 5,
        }
    }

    fn fmt_child(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        if self.precedence() < min_prec {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Var(name) => f.write_str(name),
            Expr::Neg(e) => {
                f.write_str("-")?;
                e.fmt_child(f, 3)
            }
            Expr::Binary(op, l, r) => {
                let (lmin, rmin) = match op {
                    BinOp::Add | BinOp::Sub => (1, 2),
                    BinOp::Mul | BinOp::Div => (2, 3),
                    BinOp::Pow => (5, 3),
                };
                l.fmt_child(f, lmin)?;
                write!(f, "{}", op.symbol())?;
                r.fmt_child(f, rmin)
            }
            Expr::Call(func, arg) => write!(f, "{}({arg})", func.name()),
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Const(f64),
    Slot(usize),
    Neg(Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

impl Node {
    fn eval(&self, vars: &[f64]) -> Result<f64, ExprError> {
        match self {
            Node::Const(c) => Ok(*c),
            Node::Slot(i) => Ok(vars[*i]),
            Node::Neg(e) => Ok(-e.eval(vars)?),
            Node::Binary(op, l, r) => apply_binary(*op, l.eval(vars)?, r.eval(vars)?),
            Node::Call(f, arg) => check_finite(f.apply(arg.eval(vars)?)?, f.name()),
        }
    }
}

/// An expression whose variables were resolved to slot indices.
#[derive(Debug, Clone)]
pub struct BoundExpr {
    node: Node,
}

impl BoundExpr {
    pub fn eval(&self, vars: &[f64]) -> Result<f64, ExprError> {
        self.node.eval(vars)
    }

    pub fn constant_value(&self) -> Option<f64> {
        match self.node {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(BinOp),
    LParen,
    RParen,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn next(&mut self) -> Result<(usize, Tok), ExprError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&c) = bytes.get(self.pos) else {
            return Ok((start, Tok::End));
        };
        let tok = match c {
            b'+' => Tok::Op(BinOp::Add),
            b'-' => Tok::Op(BinOp::Sub),
            b'*' => Tok::Op(BinOp::Mul),
            b'/' => Tok::Op(BinOp::Div),
            b'^' => Tok::Op(BinOp::Pow),
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'0'..=b'9' | b'.' => return self.number(start),
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while self
                    .src
                    .as_bytes()
                    .get(self.pos)
                    .is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'_')
                {
                    self.pos += 1;
                }
                return Ok((start, Tok::Ident(self.src[start..self.pos].to_string())));
            }
            _ => {
                let ch = self.src[start..].chars().next().unwrap_or('?');
                return Err(ExprError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        };
        self.pos += 1;
        Ok((start, tok))
    }

    fn number(&mut self, start: usize) -> Result<(usize, Tok), ExprError> {
        let bytes = self.src.as_bytes();
        let digits = |pos: &mut usize| {
            let from = *pos;
            while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
                *pos += 1;
            }
            *pos - from
        };
        let mut n = digits(&mut self.pos);
        if bytes.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            n += digits(&mut self.pos);
        }
        if n == 0 {
            return Err(ExprError::Syntax { offset: start, message: "malformed number".into() });
        }
        if matches!(bytes.get(self.pos), Some(b'e' | b'E')) {
            let mut look = self.pos + 1;
            if matches!(bytes.get(look), Some(b'+' | b'-')) {
                look += 1;
            }
            if digits(&mut look) == 0 {
                return Err(ExprError::Syntax {
                    offset: self.pos,
                    message: "missing exponent digits".into(),
                });
            }
            self.pos = look;
        }
        let text = &self.src[start..self.pos];
        let value: f64 = text.parse().map_err(|_| ExprError::Syntax {
            offset: start,
            message: format!("malformed number `{text}`"),
        })?;
        if !value.is_finite() {
            return Err(ExprError::Syntax { offset: start, message: "number out of range".into() });
        }
        Ok((start, Tok::Num(value)))
    }
}

// ---------------------------------------------------------------------------
// Parser

struct Parser<'a> {
    lexer: Lexer<'a>,
    peeked: (usize, Tok),
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self, ExprError> {
        let mut lexer = Lexer { src, pos: 0 };
        let peeked = lexer.next()?;
        Ok(Parser { lexer, peeked })
    }

    fn bump(&mut self) -> Result<(usize, Tok), ExprError> {
        let next = self.lexer.next()?;
        Ok(std::mem::replace(&mut self.peeked, next))
    }

    fn expect_rparen(&mut self) -> Result<(), ExprError> {
        match self.bump()? {
            (_, Tok::RParen) => Ok(()),
            (offset, tok) => Err(ExprError::Syntax {
                offset,
                message: format!("expected `)`, found {}", describe(&tok)),
            }),
        }
    }

    fn expr(&mut self, min_bp: u8) -> Result<Expr, ExprError> {
        let mut lhs = self.prefix()?;
        loop {
            let op = match &self.peeked.1 {
                Tok::Op(op) => *op,
                Tok::RParen | Tok::End => break,
                tok => {
                    return Err(ExprError::Syntax {
                        offset: self.peeked.0,
                        message: format!("expected an operator, found {}", describe(tok)),
                    })
                }
            };
            let (lbp, rbp) = op.binding_power();
            if lbp < min_bp {
                break;
            }
            self.bump()?;
            let rhs = self.expr(rbp)?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn prefix(&mut self) -> Result<Expr, ExprError> {
        let (offset, tok) = self.bump()?;
        match tok {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::Op(BinOp::Sub) => Ok(Expr::Neg(Box::new(self.expr(PREFIX_NEG_BP)?))),
            Tok::LParen => {
                let inner = self.expr(0)?;
                self.expect_rparen()?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if self.peeked.1 == Tok::LParen {
                    let func = Func::from_name(&name)
                        .ok_or(ExprError::UnknownFunction { name, offset })?;
                    self.bump()?;
                    let arg = self.expr(0)?;
                    self.expect_rparen()?;
                    Ok(Expr::Call(func, Box::new(arg)))
                } else if name == "pi" {
                    Ok(Expr::Const(std::f64::consts::PI))
                } else {
                    Ok(Expr::Var(name))
                }
            }
            other => Err(ExprError::Syntax {
                offset,
                message: format!("expected an operand, found {}", describe(&other)),
            }),
        }
    }
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Num(v) => format!("number {v}"),
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Op(op) => format!("`{}`", op.symbol()),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::End => "end of input".into(),
    }
}

/// Parse `source` into an expression tree.
pub fn parse(source: &str) -> Result<Expr, ExprError> {
    let mut parser = Parser::new(source)?;
    let expr = parser.expr(0)?;
    match parser.peeked {
        (_, Tok::End) => Ok(expr),
        (offset, ref tok) => Err(ExprError::Syntax {
            offset,
            message: format!("unexpected {} after expression", describe(tok)),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn var(s: &str) -> Box<Expr> {
        Box::new(Expr::Var(s.into()))
    }

    fn ev(src: &str, env: &EvalEnv) -> f64 {
        parse(src).unwrap().eval(env).unwrap()
    }

    #[test]
    fn literal() {
        assert_eq!(parse("1").unwrap(), Expr::Const(1.0));
        assert_eq!(parse(" 2.5e-1 ").unwrap(), Expr::Const(0.25));
    }

    #[test]
    fn shape_of_sum_of_call_and_product() {
        let e = parse("sin(t) + x*u1").unwrap();
        let want = Expr::Binary(
            BinOp::Add,
            Box::new(Expr::Call(Func::Sin, var("t"))),
            Box::new(Expr::Binary(BinOp::Mul, var("x"), var("u1"))),
        );
        assert_eq!(e, want);
    }

    #[test]
    fn power_is_right_associative() {
        // 2^(3^2) = 2^9
        assert_eq!(ev("2^3^2", &EvalEnv::new()), 512.0);
        assert_eq!(ev("(2^3)^2", &EvalEnv::new()), 64.0);
    }

    #[test]
    fn unary_minus_binds_looser_than_power() {
        assert_eq!(ev("-2^2", &EvalEnv::new()), -4.0);
        assert_eq!(ev("2^-1", &EvalEnv::new()), 0.5);
        assert_eq!(ev("-3*2", &EvalEnv::new()), -6.0);
        assert_eq!(ev("1 - -1", &EvalEnv::new()), 2.0);
    }

    #[test]
    fn evaluation_examples() {
        let env = EvalEnv::new().with("x", 0.5).with("t", 2.0);
        assert_eq!(ev("x*t", &env), 1.0);
        assert_eq!(ev("exp(0)", &EvalEnv::new()), 1.0);
        let env = EvalEnv::new().with("t", std::f64::consts::FRAC_PI_2);
        assert!((ev("sin(t)", &env) - 1.0).abs() <= 1e-15);
        assert!((ev("pi", &EvalEnv::new()) - std::f64::consts::PI).abs() == 0.0);
    }

    #[test]
    fn free_variables_are_a_set() {
        assert!(parse("1+2").unwrap().free_vars().is_empty());
        let fv: Vec<_> = parse("x*u2").unwrap().free_vars().into_iter().collect();
        assert_eq!(fv, vec!["u2".to_string(), "x".to_string()]);
        let fv: Vec<_> = parse("sin(t)+sin(t)").unwrap().free_vars().into_iter().collect();
        assert_eq!(fv, vec!["t".to_string()]);
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        match parse("1 + * 2") {
            Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("unexpected {other:?}"),
        }
        match parse("(1 + 2") {
            Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, 6),
            other => panic!("unexpected {other:?}"),
        }
        match parse("2 $ 3") {
            Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("1e"), Err(ExprError::Syntax { offset: 1, .. })));
        assert!(matches!(parse("x y"), Err(ExprError::Syntax { offset: 2, .. })));
        assert!(matches!(parse(""), Err(ExprError::Syntax { offset: 0, .. })));
    }

    #[test]
    fn unknown_function() {
        assert_eq!(
            parse("1 + log(x)"),
            Err(ExprError::UnknownFunction { name: "log".into(), offset: 4 })
        );
    }

    #[test]
    fn domain_errors_are_reported() {
        let env = EvalEnv::new().with("x", 0.0);
        assert!(matches!(parse("1/x").unwrap().eval(&env), Err(ExprError::Domain(_))));
        assert!(matches!(parse("sqrt(x-1)").unwrap().eval(&env), Err(ExprError::Domain(_))));
        assert!(matches!(parse("exp(1000)").unwrap().eval(&env), Err(ExprError::Domain(_))));
        assert!(matches!(parse("(-1)^0.5").unwrap().eval(&env), Err(ExprError::Domain(_))));
    }

    #[test]
    fn missing_binding() {
        assert_eq!(parse("x+t").unwrap().eval(&EvalEnv::new().with("x", 1.0)), Err(ExprError::Unbound("t".into())));
        assert!(parse("u3").unwrap().bind(&["x", "t", "u1"]).is_err());
    }

    #[test]
    fn bound_matches_env_evaluation() {
        let e = parse("x^2 - 3*tanh(t) / (1 + abs(u1))").unwrap();
        let b = e.bind(&["x", "t", "u1"]).unwrap();
        let env = EvalEnv::new().with("x", 0.3).with("t", -1.2).with("u1", 0.7);
        assert_eq!(b.eval(&[0.3, -1.2, 0.7]).unwrap(), e.eval(&env).unwrap());
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0f64..1e6).prop_map(Expr::Const),
            prop::sample::select(vec!["x", "t", "u1", "u2"]).prop_map(|s| Expr::Var(s.into())),
        ];
        leaf.prop_recursive(6, 64, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                (
                    prop::sample::select(vec![BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div, BinOp::Pow]),
                    inner.clone(),
                    inner.clone()
                )
                    .prop_map(|(op, l, r)| Expr::Binary(op, Box::new(l), Box::new(r))),
                (prop::sample::select(Func::ALL.to_vec()), inner)
                    .prop_map(|(f, e)| Expr::Call(f, Box::new(e))),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_then_parse_round_trips(e in arb_expr()) {
            let printed = e.to_string();
            prop_assert_eq!(parse(&printed).unwrap(), e, "printed: {}", printed);
        }

        #[test]
        fn product_binds_tighter_than_sum(a in -10.0f64..10.0, b in -10.0f64..10.0, c in -10.0f64..10.0) {
            let env = EvalEnv::new().with("a", a).with("b", b).with("c", c);
            prop_assert_eq!(ev("a+b*c", &env), ev("a+(b*c)", &env));
            prop_assert_eq!(ev("a-b/c", &env), ev("a-(b/c)", &env));
        }

        #[test]
        fn evaluation_is_pure(e in arb_expr(), x in -1.0f64..1.0) {
            let env = EvalEnv::new().with("x", x).with("t", 0.5).with("u1", 0.1).with("u2", -0.2);
            prop_assert_eq!(e.eval(&env), e.eval(&env));
        }
    }
}
