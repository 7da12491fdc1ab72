use std::collections::BTreeSet;
use std::fmt;

/// Elementary functions accepted in function-call position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "log" => Some(Func::Log),
            "sqrt" => Some(Func::Sqrt),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }
}

/// Real-valued expression tree over named variables.
///
/// Exponents of [`Expr::Pow`] are constants; integer exponents evaluate by
/// repeated multiplication, all others through `exp(e*log(base))`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(String),
    Neg(Box<Expr>),
    Call(Func, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, f64),
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn zero() -> Expr {
        Expr::Const(0.0)
    }

    pub fn one() -> Expr {
        Expr::Const(1.0)
    }

    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn call(f: Func, arg: Expr) -> Expr {
        Expr::Call(f, Box::new(arg))
    }

    pub fn pow(base: Expr, exponent: f64) -> Expr {
        Expr::Pow(Box::new(base), exponent)
    }

    pub fn binary(op: BinOp, l: Expr, r: Expr) -> Expr {
        Expr::Binary(op, Box::new(l), Box::new(r))
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    pub fn is_one(&self) -> bool {
        self.as_const() == Some(1.0)
    }

    /// Names of all variables occurring in the tree, sorted.
    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(v) => {
                out.insert(v.clone());
            }
            Expr::Neg(a) | Expr::Call(_, a) | Expr::Pow(a, _) => a.collect_vars(out),
            Expr::Binary(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Replaces every occurrence of each named variable by the paired
    /// expression. Replacements are simultaneous, not recursive.
    pub fn substitute(&self, map: &dyn Fn(&str) -> Option<Expr>) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(v) => map(v).unwrap_or_else(|| Expr::Var(v.clone())),
            Expr::Neg(a) => Expr::Neg(Box::new(a.substitute(map))),
            Expr::Call(f, a) => Expr::Call(*f, Box::new(a.substitute(map))),
            Expr::Pow(a, e) => Expr::Pow(Box::new(a.substitute(map)), *e),
            Expr::Binary(op, a, b) => Expr::Binary(
                *op,
                Box::new(a.substitute(map)),
                Box::new(b.substitute(map)),
            ),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Binary(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => 3,
            Expr::Pow(..) => 4,
            Expr::Const(_) | Expr::Var(_) | Expr::Call(..) => 5,
        }
    }
}

impl std::ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::binary(BinOp::Add, self, rhs)
    }
}

impl std::ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::binary(BinOp::Sub, self, rhs)
    }
}

impl std::ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::binary(BinOp::Mul, self, rhs)
    }
}

impl std::ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        Expr::binary(BinOp::Div, self, rhs)
    }
}

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }
}

fn write_const(f: &mut fmt::Formatter<'_>, c: f64) -> fmt::Result {
    // `{}` on f64 is the shortest string that parses back to the same value.
    if c.is_finite() {
        write!(f, "{c}")
    } else if c.is_nan() {
        write!(f, "(0/0)")
    } else if c > 0.0 {
        write!(f, "(1/0)")
    } else {
        write!(f, "(-1/0)")
    }
}

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool, tight: bool) -> fmt::Result {
    let r = Render { e, tight };
    if parens {
        write!(f, "({r})")
    } else {
        write!(f, "{r}")
    }
}

/// Rendering of an expression; `tight` drops the spaces around `*` and `/`.
struct Render<'a> {
    e: &'a Expr,
    tight: bool,
}

impl fmt::Display for Render<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tight = self.tight;
        match self.e {
            Expr::Const(c) => write_const(f, *c),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(a) => {
                write!(f, "-")?;
                // `--x` would lex fine but `-(-2)` reads better.
                write_operand(f, a, a.precedence() <= 3, tight)
            }
            Expr::Call(func, a) => write!(f, "{}({})", func.name(), Render { e: a, tight }),
            Expr::Pow(a, e) => {
                write_operand(f, a, a.precedence() <= 4, tight)?;
                write!(f, "^")?;
                if *e < 0.0 || (*e == 0.0 && e.is_sign_negative()) {
                    write!(f, "(")?;
                    write_const(f, *e)?;
                    write!(f, ")")
                } else {
                    write_const(f, *e)
                }
            }
            Expr::Binary(op, a, b) => {
                let p = self.e.precedence();
                write_operand(f, a, a.precedence() < p, tight)?;
                if tight && matches!(op, BinOp::Mul | BinOp::Div) {
                    write!(f, "{}", op.symbol())?;
                } else {
                    write!(f, " {} ", op.symbol())?;
                }
                // left-associative: a right operand of equal precedence needs parens
                write_operand(f, b, b.precedence() <= p, tight)
            }
        }
    }
}

impl Expr {
    /// Like `Display` but without spaces around `*` and `/`.
    pub fn compact(&self) -> impl fmt::Display + '_ {
        Render {
            e: self,
            tight: true,
        }
    }
}

impl fmt::Display for Expr {
    /// Infix rendering with the minimum parentheses needed to reparse to the
    /// same tree shape.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Render {
            e: self,
            tight: false,
        }
        .fmt(f)
    }
}
