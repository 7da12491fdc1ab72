use super::expr::{BinOp, Expr, Func};
use super::simplify::simplify;

/// Exact partial derivative of `e` with respect to `x`, simplified.
pub fn diff(e: &Expr, x: &str) -> Expr {
    simplify(&raw_diff(e, x))
}

fn raw_diff(e: &Expr, x: &str) -> Expr {
    match e {
        Expr::Const(_) => Expr::zero(),
        Expr::Var(v) => {
            if v == x {
                Expr::one()
            } else {
                Expr::zero()
            }
        }
        Expr::Neg(a) => -raw_diff(a, x),
        Expr::Binary(op, a, b) => {
            let da = raw_diff(a, x);
            let db = raw_diff(b, x);
            match op {
                BinOp::Add => da + db,
                BinOp::Sub => da - db,
                BinOp::Mul => da * (**b).clone() + (**a).clone() * db,
                BinOp::Div => {
                    (da * (**b).clone() - (**a).clone() * db) / Expr::pow((**b).clone(), 2.0)
                }
            }
        }
        Expr::Pow(a, p) => {
            if *p == 0.0 {
                return Expr::zero();
            }
            Expr::Const(*p) * Expr::pow((**a).clone(), p - 1.0) * raw_diff(a, x)
        }
        Expr::Call(f, a) => {
            let inner = raw_diff(a, x);
            let arg = (**a).clone();
            let outer = match f {
                Func::Sin => Expr::call(Func::Cos, arg),
                Func::Cos => -Expr::call(Func::Sin, arg),
                Func::Exp => Expr::call(Func::Exp, arg),
                Func::Log => Expr::one() / arg,
                Func::Sqrt => Expr::one() / (Expr::Const(2.0) * Expr::call(Func::Sqrt, arg)),
            };
            outer * inner
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symcore::{eval, parse};

    #[test]
    fn power_rule() {
        let d = diff(&parse("q1^2").unwrap(), "q1");
        assert_eq!(d, Expr::Const(2.0) * Expr::var("q1"));
    }

    #[test]
    fn product_rule() {
        let d = diff(&parse("v1_1*v2_2").unwrap(), "v1_1");
        assert_eq!(d, Expr::var("v2_2"));
    }

    #[test]
    fn independent_variables() {
        let d = diff(&parse("sin(q2)*exp(v1_1)").unwrap(), "q1");
        assert_eq!(d, Expr::zero());
    }

    #[test]
    fn quadratic_lagrangian_momentum() {
        let l = parse("0.5*(v1_1^2 + v1_2^2) - q1^2").unwrap();
        assert_eq!(diff(&l, "v1_1"), Expr::var("v1_1"));
        assert_eq!(diff(&l, "v1_2"), Expr::var("v1_2"));
        let dq = diff(&l, "q1");
        assert_eq!(eval(&dq, &[("q1", 0.75)]).unwrap(), -1.5);
    }

    #[test]
    fn chain_rule_functions() {
        let e = parse("log(1 + q1^2) + sqrt(2 + cos(q1)) / exp(q1)").unwrap();
        let d = diff(&e, "q1");
        let x = 0.4_f64;
        let expected = 2.0 * x / (1.0 + x * x)
            + (-x.sin() / (2.0 * (2.0 + x.cos()).sqrt()) - (2.0 + x.cos()).sqrt()) / x.exp();
        assert!((eval(&d, &[("q1", x)]).unwrap() - expected).abs() < 1e-14);
    }
}
