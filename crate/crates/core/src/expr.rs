//! Arithmetic expressions over the state variables `x1..xn`.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?          right associative
//! atom    := number | var | func '(' expr ')' | '(' expr ')'
//! func    := exp | ln | sqrt
//! var     := 'x' digits                 1-based index
//! ```
//!
//! Evaluation never returns NaN: every operation that leaves the real
//! domain is reported as an [`EvalError`].

use std::fmt;

use thiserror::Error;

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
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Ln,
    Sqrt,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
        }
    }
}

/// Expression tree. Variables are stored 0-based.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("syntax error at byte {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero in `{0}`")]
    DivisionByZero(String),
    #[error("logarithm of non-positive value {value} in `{expr}`")]
    LogDomain { expr: String, value: f64 },
    #[error("square root of negative value {value} in `{expr}`")]
    SqrtDomain { expr: String, value: f64 },
    #[error("non-real power in `{0}`")]
    PowDomain(String),
    #[error("non-finite result in `{0}`")]
    NonFinite(String),
    #[error("variable x{index} out of range for a {n}-dimensional point")]
    VarOutOfRange { index: usize, n: usize },
}

impl Expr {
    pub fn parse(text: &str, n_vars: usize) -> Result<Expr, ParseError> {
        let mut p = Parser {
            src: text.as_bytes(),
            pos: 0,
            n_vars,
        };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => *x.get(*i).ok_or(EvalError::VarOutOfRange {
                index: i + 1,
                n: x.len(),
            })?,
            Expr::Neg(e) => -e.eval(x)?,
            Expr::Bin(op, l, r) => {
                let a = l.eval(x)?;
                let b = r.eval(x)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(EvalError::DivisionByZero(self.to_string()));
                        }
                        a / b
                    }
                    BinOp::Pow => {
                        let v = a.powf(b);
                        if v.is_nan() {
                            return Err(EvalError::PowDomain(self.to_string()));
                        }
                        v
                    }
                }
            }
            Expr::Call(f, arg) => {
                let a = arg.eval(x)?;
                match f {
                    Func::Exp => a.exp(),
                    Func::Ln => {
                        if a <= 0.0 {
                            return Err(EvalError::LogDomain {
                                expr: self.to_string(),
                                value: a,
                            });
                        }
                        a.ln()
                    }
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(EvalError::SqrtDomain {
                                expr: self.to_string(),
                                value: a,
                            });
                        }
                        a.sqrt()
                    }
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite(self.to_string()))
        }
    }

    /// Replaces every variable by `map(index)`: either a new variable index
    /// or a constant.
    pub fn substitute(&self, map: &dyn Fn(usize) -> VarSubst) -> Expr {
        match self {
            Expr::Num(v) => Expr::Num(*v),
            Expr::Var(i) => match map(*i) {
                VarSubst::Var(j) => Expr::Var(j),
                VarSubst::Const(c) => Expr::Num(c),
            },
            Expr::Neg(e) => Expr::Neg(Box::new(e.substitute(map))),
            Expr::Bin(op, l, r) => {
                Expr::Bin(*op, Box::new(l.substitute(map)), Box::new(r.substitute(map)))
            }
            Expr::Call(f, a) => Expr::Call(*f, Box::new(a.substitute(map))),
        }
    }

    /// Largest variable index referenced (0-based), if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Num(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Neg(e) | Expr::Call(_, e) => e.max_var(),
            Expr::Bin(_, l, r) => match (l.max_var(), r.max_var()) {
                (Some(a), Some(b)) => Some(a.max(b)),
                (a, b) => a.or(b),
            },
        }
    }

    /// True if the expression references no variables.
    pub fn is_constant(&self) -> bool {
        self.max_var().is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarSubst {
    Var(usize),
    Const(f64),
}

/// Fully parenthesized; `Expr::parse(&e.to_string())` evaluates like `e`.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => {
                if v.is_sign_negative() {
                    write!(f, "(-{:?})", -v)
                } else {
                    write!(f, "{v:?}")
                }
            }
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    n_vars: usize,
}

impl Parser<'_> {
    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            offset: self.pos,
            message: message.into(),
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

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exponent = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected `)`"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(c) => Err(self.error(format!("unexpected character `{}`", c as char))),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
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
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            let exp_start = self.pos;
            digits(self);
            if self.pos == exp_start {
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse::<f64>().map(Expr::Num).map_err(|_| ParseError {
            offset: start,
            message: format!("invalid number `{text}`"),
        })
    }

    fn ident(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        let func = match name {
            "exp" => Some(Func::Exp),
            "ln" => Some(Func::Ln),
            "sqrt" => Some(Func::Sqrt),
            _ => None,
        };
        if let Some(func) = func {
            if !self.eat(b'(') {
                return Err(self.error(format!("expected `(` after `{name}`")));
            }
            let arg = self.expr()?;
            if !self.eat(b')') {
                return Err(self.error("expected `)`"));
            }
            return Ok(Expr::Call(func, Box::new(arg)));
        }
        let index = name
            .strip_prefix('x')
            .and_then(|d| d.parse::<usize>().ok())
            .filter(|_| name.len() > 1 && name[1..].bytes().all(|b| b.is_ascii_digit()));
        match index {
            Some(i) if i >= 1 && i <= self.n_vars => Ok(Expr::Var(i - 1)),
            Some(i) => Err(ParseError {
                offset: start,
                message: format!("variable x{i} outside x1..x{}", self.n_vars),
            }),
            None => Err(ParseError {
                offset: start,
                message: format!("unknown identifier `{name}`"),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eval(s: &str, x: &[f64]) -> Result<f64, EvalError> {
        Expr::parse(s, x.len()).unwrap().eval(x)
    }

    #[test]
    fn lv_row_at_unit_point() {
        assert_eq!(eval("3 - 2*x1 - x2", &[1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn exp_of_zero_is_one() {
        for x in [0.0, 0.3, 7.0] {
            assert_eq!(eval("exp(0*x1)", &[x, 2.0]).unwrap(), 1.0);
        }
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(eval("ln(x1)", &[0.0, 1.0]), Err(EvalError::LogDomain { .. })));
        assert!(matches!(eval("1/(x1-x2)", &[1.0, 1.0]), Err(EvalError::DivisionByZero(_))));
        assert!(matches!(eval("sqrt(x1-2)", &[1.0]), Err(EvalError::SqrtDomain { .. })));
        assert!(matches!(eval("(0-x1)^0.5", &[2.0]), Err(EvalError::PowDomain(_))));
        assert!(matches!(eval("exp(x1)", &[1000.0]), Err(EvalError::NonFinite(_))));
    }

    #[test]
    fn domain_error_names_subexpression() {
        let err = eval("1 + ln(x1 - 1)", &[0.5]).unwrap_err();
        assert_eq!(
            err,
            EvalError::LogDomain {
                expr: "ln((x1 - 1.0))".into(),
                value: -0.5
            }
        );
    }

    #[test]
    fn precedence() {
        assert_eq!(eval("-x1^2", &[3.0]).unwrap(), -9.0);
        assert_eq!(eval("2^3^2", &[]).unwrap(), 512.0);
        assert_eq!(eval("1 - 2 - 3", &[]).unwrap(), -4.0);
        assert_eq!(eval("8 / 4 / 2", &[]).unwrap(), 1.0);
        assert_eq!(eval("2*-x1", &[3.0]).unwrap(), -6.0);
        assert_eq!(eval("1.5e1 + .5", &[]).unwrap(), 15.5);
        assert_eq!(eval("sqrt(x1)*x2", &[4.0, 3.0]).unwrap(), 6.0);
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        let err = Expr::parse("1 + * 2", 1).unwrap_err();
        assert_eq!(err.offset, 4);
        let err = Expr::parse("x3", 2).unwrap_err();
        assert_eq!(err.offset, 0);
        let err = Expr::parse("log(x1)", 1).unwrap_err();
        assert!(err.message.contains("log"));
        let err = Expr::parse("(x1 + 1", 1).unwrap_err();
        assert_eq!(err.offset, 7);
        assert!(Expr::parse("x1 x2", 2).is_err());
        assert!(Expr::parse("x0", 2).is_err());
    }

    #[test]
    fn substitute_pins_variables() {
        let e = Expr::parse("x1 + 2*x2 + x3", 3).unwrap();
        let s = e.substitute(&|i| match i {
            0 => VarSubst::Var(0),
            1 => VarSubst::Const(0.0),
            _ => VarSubst::Var(1),
        });
        assert_eq!(s.eval(&[1.0, 5.0]).unwrap(), 6.0);
        assert_eq!(s.max_var(), Some(1));
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (-5.0f64..5.0).prop_map(Expr::Num),
            (0usize..3).prop_map(Expr::Var),
        ];
        leaf.prop_recursive(5, 32, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                (inner.clone(), inner.clone(), prop_oneof![
                    Just(BinOp::Add),
                    Just(BinOp::Sub),
                    Just(BinOp::Mul),
                    Just(BinOp::Div),
                    Just(BinOp::Pow)
                ])
                    .prop_map(|(l, r, op)| Expr::Bin(op, Box::new(l), Box::new(r))),
                (inner, prop_oneof![Just(Func::Exp), Just(Func::Ln), Just(Func::Sqrt)])
                    .prop_map(|(a, f)| Expr::Call(f, Box::new(a))),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(e in arb_expr(), x in proptest::collection::vec(0.0f64..10.0, 3)) {
            let back = Expr::parse(&e.to_string(), 3).unwrap();
            prop_assert_eq!(back.eval(&x), e.eval(&x));
            prop_assert_eq!(back.to_string(), Expr::parse(&back.to_string(), 3).unwrap().to_string());
        }

        #[test]
        fn eval_is_never_nan(e in arb_expr(), x in proptest::collection::vec(0.0f64..10.0, 3)) {
            if let Ok(v) = e.eval(&x) {
                prop_assert!(v.is_finite());
            }
        }
    }
}
