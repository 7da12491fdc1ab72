//! Minimal computer-algebra substrate: expression trees over named real
//! variables with parsing, exact differentiation, local simplification and
//! checked evaluation.
//!
//! Coordinates follow one naming convention everywhere in the crate: fields
//! `q1..qn`, velocities `vI_A` (field `I`, parameter `A`), momenta `pA_I`.

mod diff;
mod eval;
mod expr;
mod parse;
mod simplify;

pub use diff::diff;
pub use eval::{eval, Bindings, Compiled, EvalError, NamedSlice};
pub use expr::{BinOp, Expr, Func};
pub use parse::{parse, ParseError, ParseErrorKind};
pub use simplify::simplify;

/// Field coordinate name `qI` (1-based).
pub fn q_name(i: usize) -> String {
    format!("q{}", i + 1)
}

/// Velocity coordinate name `vI_A` for field `i` and parameter `a` (0-based).
pub fn v_name(i: usize, a: usize) -> String {
    format!("v{}_{}", i + 1, a + 1)
}

/// Momentum coordinate name `pA_I` for parameter `a` and field `i` (0-based).
pub fn p_name(a: usize, i: usize) -> String {
    format!("p{}_{}", a + 1, i + 1)
}

/// Parameter name `tA` (0-based index).
pub fn t_name(a: usize) -> String {
    format!("t{}", a + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const VARS: [&str; 3] = ["q1", "v1_1", "v1_2"];

    /// Random trees whose only partial operations are guarded, so that every
    /// point of [-1, 1]^3 is inside the domain.
    fn random_tree(rng: &mut ChaCha8Rng, depth: usize) -> Expr {
        if depth == 0 || rng.gen_bool(0.2) {
            return if rng.gen_bool(0.6) {
                Expr::var(VARS[rng.gen_range(0..VARS.len())])
            } else {
                Expr::Const((rng.gen_range(-20..=20) as f64) / 8.0)
            };
        }
        let sub = |rng: &mut ChaCha8Rng| random_tree(rng, depth - 1);
        let guard = |e: Expr| Expr::one() + Expr::pow(e, 2.0);
        match rng.gen_range(0..11) {
            0 => sub(rng) + sub(rng),
            1 => sub(rng) - sub(rng),
            2 => sub(rng) * sub(rng),
            3 => {
                let num = sub(rng);
                num / guard(sub(rng))
            }
            4 => -sub(rng),
            5 => Expr::call(Func::Sin, sub(rng)),
            6 => Expr::call(Func::Cos, sub(rng)),
            7 => Expr::call(Func::Exp, Expr::call(Func::Sin, sub(rng))),
            8 => Expr::call(Func::Log, guard(sub(rng))),
            9 => Expr::call(Func::Sqrt, guard(sub(rng))),
            _ => Expr::pow(sub(rng), rng.gen_range(0..=3) as f64),
        }
    }

    fn point(rng: &mut ChaCha8Rng) -> [(&'static str, f64); 3] {
        [
            (VARS[0], rng.gen_range(-1.0..1.0)),
            (VARS[1], rng.gen_range(-1.0..1.0)),
            (VARS[2], rng.gen_range(-1.0..1.0)),
        ]
    }

    fn bounded(e: &Expr, rng: &mut ChaCha8Rng) -> bool {
        (0..20).all(|_| eval(e, &point(rng)).map(|x| x.abs() < 1e4).unwrap_or(false))
    }

    #[test]
    fn diff_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let h = 1e-5;
        let mut corpus = 0;
        while corpus < 20 {
            let e = random_tree(&mut rng, 6);
            if !bounded(&e, &mut rng) {
                continue;
            }
            corpus += 1;
            for x in VARS {
                let d = diff(&e, x);
                for _ in 0..50 {
                    let p = point(&mut rng);
                    let shifted = |delta: f64| {
                        let mut q = p;
                        for slot in q.iter_mut() {
                            if slot.0 == x {
                                slot.1 += delta;
                            }
                        }
                        eval(&e, &q).unwrap()
                    };
                    let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                    let exact = eval(&d, &p).unwrap();
                    assert!(
                        (exact - fd).abs() <= 1e-6 * exact.abs().max(1.0),
                        "d/d{x} of {e}: exact {exact} vs fd {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn simplify_preserves_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let e = random_tree(&mut rng, 5);
            let s = simplify(&e);
            for _ in 0..10 {
                let p = point(&mut rng);
                match (eval(&e, &p), eval(&s, &p)) {
                    (Ok(a), Ok(b)) => assert!(
                        (a - b).abs() <= 1e-12 * a.abs().max(1.0),
                        "{e} -> {s}: {a} vs {b}"
                    ),
                    // numeric blow-ups the guards don't cover
                    (Err(_), _) => {}
                    (Ok(a), Err(err)) => panic!("{e} -> {s} lost value {a}: {err}"),
                }
            }
        }
    }

    proptest! {
        #[test]
        fn print_then_parse_is_equivalent(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e = random_tree(&mut rng, 5);
            let text = e.to_string();
            let back = parse(&text).unwrap_or_else(|err| panic!("{text}: {err}"));
            for _ in 0..5 {
                let p = point(&mut rng);
                match (eval(&e, &p), eval(&back, &p)) {
                    (Ok(a), Ok(b)) => prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0)),
                    (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
                }
            }
        }
    }
}
