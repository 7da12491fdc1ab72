use super::eval::{apply_binary, apply_func, apply_pow};
use super::expr::{BinOp, Expr};

fn fold(r: Result<f64, super::eval::EvalError>) -> Option<Expr> {
    match r {
        Ok(x) if x.is_finite() => Some(Expr::Const(x)),
        _ => None,
    }
}

/// Local rewrites (identities, annihilators, constant folding). Preserves the
/// value at every binding where the input evaluates; reaches no normal form.
pub fn simplify(e: &Expr) -> Expr {
    match e {
        Expr::Const(_) | Expr::Var(_) => e.clone(),
        Expr::Neg(a) => match simplify(a) {
            Expr::Const(c) => Expr::Const(-c),
            Expr::Neg(inner) => *inner,
            s => -s,
        },
        Expr::Call(f, a) => {
            let s = simplify(a);
            if let Some(c) = s.as_const() {
                if let Some(folded) = fold(apply_func(*f, c)) {
                    return folded;
                }
            }
            Expr::call(*f, s)
        }
        Expr::Pow(a, p) => {
            let s = simplify(a);
            if *p == 1.0 {
                return s;
            }
            if *p == 0.0 {
                return Expr::one();
            }
            if let Some(c) = s.as_const() {
                if let Some(folded) = fold(apply_pow(c, *p)) {
                    return folded;
                }
            }
            if let Expr::Pow(inner, q) = &s {
                if p.fract() == 0.0 && q.fract() == 0.0 {
                    return simplify(&Expr::Pow(inner.clone(), p * q));
                }
            }
            Expr::pow(s, *p)
        }
        Expr::Binary(op, a, b) => binary(*op, simplify(a), simplify(b)),
    }
}

fn binary(op: BinOp, a: Expr, b: Expr) -> Expr {
    if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
        if let Some(folded) = fold(apply_binary(op, x, y)) {
            return folded;
        }
    }
    match op {
        BinOp::Add => {
            if a.is_zero() {
                b
            } else if b.is_zero() {
                a
            } else if let Expr::Neg(nb) = b {
                Expr::binary(BinOp::Sub, a, *nb)
            } else {
                a + b
            }
        }
        BinOp::Sub => {
            if b.is_zero() {
                a
            } else if a.is_zero() {
                simplify(&-b)
            } else if let Expr::Neg(nb) = b {
                Expr::binary(BinOp::Add, a, *nb)
            } else if let Some(c) = b.as_const().filter(|c| *c < 0.0) {
                a + Expr::Const(-c)
            } else {
                a - b
            }
        }
        BinOp::Mul => {
            if a.is_zero() || b.is_zero() {
                return Expr::zero();
            }
            if a.is_one() {
                return b;
            }
            if b.is_one() {
                return a;
            }
            // constants to the front
            let (a, b) = if b.as_const().is_some() {
                (b, a)
            } else {
                (a, b)
            };
            if let Some(c) = a.as_const() {
                if c == -1.0 {
                    return simplify(&-b);
                }
                match b {
                    Expr::Binary(BinOp::Mul, inner_a, inner_b) if inner_a.as_const().is_some() => {
                        let c2 = inner_a.as_const().unwrap_or(1.0);
                        return binary(BinOp::Mul, Expr::Const(c * c2), *inner_b);
                    }
                    Expr::Neg(inner) => return binary(BinOp::Mul, Expr::Const(-c), *inner),
                    other => return Expr::Const(c) * other,
                }
            }
            a * b
        }
        BinOp::Div => {
            if b.is_one() {
                a
            } else if a.is_zero() {
                Expr::zero()
            } else if let Some(c) = b
                .as_const()
                .filter(|c| *c != 0.0 && c.abs().log2().fract() == 0.0)
            {
                // exact reciprocal
                binary(BinOp::Mul, Expr::Const(1.0 / c), a)
            } else {
                a / b
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symcore::parse;

    #[test]
    fn annihilator() {
        let e = parse("0*v1_1 + q1").unwrap();
        assert_eq!(simplify(&e), Expr::var("q1"));
    }

    #[test]
    fn constant_fold() {
        assert_eq!(simplify(&parse("2*3").unwrap()), Expr::Const(6.0));
        assert_eq!(simplify(&parse("sin(0) + 2^3").unwrap()), Expr::Const(8.0));
    }

    #[test]
    fn keeps_failing_constants_unfolded() {
        let e = simplify(&parse("1/(2-2)").unwrap());
        assert_eq!(e, Expr::Const(1.0) / Expr::Const(0.0));
        assert!(crate::symcore::eval(&e, &[("x", 0.0)]).is_err());
        assert!(simplify(&parse("log(0)").unwrap()).as_const().is_none());
    }

    #[test]
    fn coefficient_merging() {
        let e = parse("0.5*(2*v1_1)").unwrap();
        assert_eq!(simplify(&e), Expr::var("v1_1"));
        assert_eq!(simplify(&parse("--q1").unwrap()), Expr::var("q1"));
        assert_eq!(
            simplify(&parse("q1 - -q2").unwrap()),
            Expr::var("q1") + Expr::var("q2")
        );
        assert_eq!(
            simplify(&parse("(q1^2)^3").unwrap()),
            Expr::pow(Expr::var("q1"), 6.0)
        );
        assert_eq!(simplify(&parse("-(2*q1)/2").unwrap()), -Expr::var("q1"));
        assert_eq!(
            simplify(&parse("q1/3").unwrap()),
            Expr::var("q1") / Expr::Const(3.0)
        );
    }
}
