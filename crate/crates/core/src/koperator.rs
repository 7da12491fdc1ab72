//! The field operator `𝒦`: a k-vector field along the Legendre map, its
//! constructions and the checks of its defining conditions.

use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::geometry::{p_index, v_index, FieldModel, LagPoint, Space};
use crate::integrate::Section;
use crate::kvector::{contract_values, Coeffs, KVectorField};
use crate::linalg;
use crate::symcore::{p_name, simplify, v_name, Expr};

/// `𝒦 = (𝒦_1, .., 𝒦_k)` with coefficients that are functions of the
/// Lagrangian point `x` and components in covelocity coordinates, tangent at
/// `FL(x)`. The base-point condition `τ ∘ 𝒦 = FL` holds by construction.
#[derive(Debug, Clone)]
pub struct FieldOperatorK {
    n: usize,
    k: usize,
    coeffs: Coeffs,
}

impl FieldOperatorK {
    pub fn symbolic(n: usize, k: usize, exprs: Vec<Vec<Expr>>) -> Result<FieldOperatorK> {
        check_dim(k, exprs.len())?;
        for e in &exprs {
            check_dim(Space::Hamiltonian.dim(n, k), e.len())?;
        }
        Ok(FieldOperatorK {
            n,
            k,
            coeffs: Coeffs::symbolic(exprs, &Space::Lagrangian.coordinates(n, k))?,
        })
    }

    pub fn pointwise<F>(n: usize, k: usize, f: F) -> FieldOperatorK
    where
        F: Fn(&[f64]) -> Result<Vec<Vec<f64>>> + Send + Sync + 'static,
    {
        FieldOperatorK {
            n,
            k,
            coeffs: Coeffs::Pointwise(Arc::new(f)),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn exprs(&self) -> Option<Vec<Vec<Expr>>> {
        self.coeffs.exprs()
    }

    /// `𝒦_A(x)` for every `A`, at flat Lagrangian coordinates.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_dim(Space::Lagrangian.dim(self.n, self.k), x.len())?;
        let out = self.coeffs.eval(x)?;
        check_dim(self.k, out.len())?;
        for c in &out {
            check_dim(Space::Hamiltonian.dim(self.n, self.k), c.len())?;
        }
        Ok(out)
    }
}

fn check_model(m: &FieldModel, k_op: &FieldOperatorK) -> Result<()> {
    check_dim(m.n(), k_op.n)?;
    check_dim(m.k(), k_op.k)
}

/// `(𝒦_A)^i = v^i_A`, `(𝒦_A)^B_i = δ_AB (1/k) ∂L/∂q^i`.
pub fn default_k(m: &FieldModel) -> FieldOperatorK {
    let (n, k) = (m.n(), m.k());
    let exprs = (0..k)
        .map(|a| {
            let mut c: Vec<Expr> = (0..n).map(|i| Expr::var(v_name(i, a))).collect();
            c.resize(Space::Hamiltonian.dim(n, k), Expr::zero());
            for i in 0..n {
                c[p_index(n, a, i)] =
                    simplify(&(m.dl_dq_expr(i).clone() / Expr::constant(k as f64)));
            }
            c
        })
        .collect();
    FieldOperatorK::symbolic(n, k, exprs).expect("model coordinates")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KCheck {
    /// Base-point condition; holds by representation.
    pub structural: bool,
    /// `max |FL^*(Σ_A ι_{𝒦_A}(ω₀)_A) - dE_L|` per sample.
    pub field_eq_residual: Vec<f64>,
    pub second_order_residual: f64,
    pub kl_residual: f64,
    pub tolerance: f64,
    pub field_eq: bool,
    pub second_order: bool,
}

impl KCheck {
    pub fn max_field_eq(&self) -> f64 {
        linalg::max_abs(self.field_eq_residual.iter().copied())
    }

    pub fn all_pass(&self) -> bool {
        self.structural && self.field_eq && self.second_order
    }
}

struct SampleCheck {
    field_eq: f64,
    second_order: f64,
    kl: f64,
}

fn check_sample(m: &FieldModel, k_op: &FieldOperatorK, xc: &[f64]) -> Result<SampleCheck> {
    let (n, k) = (m.n(), m.k());
    let kv = k_op.eval(xc)?;
    let y = m.legendre_flat(xc)?;
    let c = contract_values(m.canonical_forms(), &kv, &y)?;
    let jac = m.fl_jacobian_flat(xc)?;
    let pulled = jac.transpose() * DVector::from_vec(c);
    let de = m.energy_grad.eval(xc)?;
    let field_eq = linalg::max_abs(pulled.iter().zip(&de).map(|(a, b)| a - b));
    let mut second_order = 0.0_f64;
    for (a, ka) in kv.iter().enumerate() {
        for i in 0..n {
            second_order = second_order.max((ka[i] - xc[v_index(n, k, i, a)]).abs());
        }
    }
    let dq = m.dl_dq.eval(xc)?;
    let kl = linalg::max_abs(
        (0..n).map(|i| (0..k).map(|a| kv[a][p_index(n, a, i)]).sum::<f64>() - dq[i]),
    );
    Ok(SampleCheck {
        field_eq,
        second_order,
        kl,
    })
}

/// Checks the three defining conditions of a field operator at `samples`.
pub fn verify_k(
    m: &FieldModel,
    k_op: &FieldOperatorK,
    samples: &[LagPoint],
    tol: f64,
) -> Result<KCheck> {
    check_model(m, k_op)?;
    let coords: Vec<Vec<f64>> = samples
        .iter()
        .map(|x| m.lag_coords_of(x))
        .collect::<Result<_>>()?;
    let checks: Vec<SampleCheck> = coords
        .par_iter()
        .map(|xc| check_sample(m, k_op, xc))
        .collect::<Result<_>>()?;
    let field_eq_residual: Vec<f64> = checks.iter().map(|c| c.field_eq).collect();
    let second_order_residual = linalg::max_abs(checks.iter().map(|c| c.second_order));
    let kl_residual = linalg::max_abs(checks.iter().map(|c| c.kl));
    let max_field = linalg::max_abs(field_eq_residual.iter().copied());
    Ok(KCheck {
        structural: true,
        field_eq: max_field <= tol,
        second_order: second_order_residual <= tol,
        field_eq_residual,
        second_order_residual,
        kl_residual,
        tolerance: tol,
    })
}

/// `𝒦_A = T(FL) ∘ (X_L)_A`.
pub fn k_from_sopde(m: &FieldModel, xl: &KVectorField) -> Result<FieldOperatorK> {
    if xl.space() != Space::Lagrangian {
        return Err(Error::Invalid(
            "field operator needs a field on T1kQ".into(),
        ));
    }
    let (n, k) = (m.n(), m.k());
    check_dim(n, xl.n())?;
    check_dim(k, xl.k())?;
    if let Some(exprs) = xl.exprs() {
        let pushed = exprs
            .into_iter()
            .map(|xa| {
                let mut c: Vec<Expr> = xa[..n].to_vec();
                for b in 0..k {
                    for i in 0..n {
                        let mut e = Expr::zero();
                        for j in 0..n {
                            e = e + xa[j].clone() * m.d2_qv_expr(j, i, b).clone();
                            for cc in 0..k {
                                e = e + xa[v_index(n, k, j, cc)].clone()
                                    * m.d2_vv_expr(j, cc, i, b).clone();
                            }
                        }
                        c.push(simplify(&e));
                    }
                }
                c
            })
            .collect();
        return FieldOperatorK::symbolic(n, k, pushed);
    }
    let (model, field) = (m.clone(), xl.clone());
    Ok(FieldOperatorK::pointwise(n, k, move |xc| {
        let j = model.fl_jacobian_flat(xc)?;
        field
            .eval(xc)?
            .into_iter()
            .map(|xa| Ok((&j * DVector::from_vec(xa)).iter().copied().collect()))
            .collect()
    }))
}

/// `𝒦_A = (X₀)_A ∘ FL` for a field `X₀` on the covelocity bundle.
pub fn k_from_hamiltonian(m: &FieldModel, x0: &KVectorField) -> Result<FieldOperatorK> {
    if x0.space() != Space::Hamiltonian {
        return Err(Error::Invalid(
            "expected a field on the covelocity bundle".into(),
        ));
    }
    let (n, k) = (m.n(), m.k());
    check_dim(n, x0.n())?;
    check_dim(k, x0.k())?;
    if let Some(exprs) = x0.exprs() {
        let graph = |name: &str| -> Option<Expr> {
            (0..k)
                .flat_map(|a| (0..n).map(move |i| (a, i)))
                .find(|(a, i)| p_name(*a, *i) == name)
                .map(|(a, i)| m.dl_dv_expr(i, a).clone())
        };
        let composed = exprs
            .into_iter()
            .map(|xa| xa.iter().map(|e| simplify(&e.substitute(&graph))).collect())
            .collect();
        return FieldOperatorK::symbolic(n, k, composed);
    }
    let (model, field) = (m.clone(), x0.clone());
    Ok(FieldOperatorK::pointwise(n, k, move |xc| {
        field.eval(&model.legendre_flat(xc)?)
    }))
}

/// Per node, `J_FL(ψ) ∂ψ/∂t^A - 𝒦_A(ψ)` for each `A`, concatenated.
/// Invalid nodes give NaN. For a `𝒦` passing the second-order check, a
/// vanishing residual is taken as the holonomy criterion for `ψ`.
pub fn k_integral_residual(
    m: &FieldModel,
    k_op: &FieldOperatorK,
    psi: &Section,
) -> Result<Vec<Vec<f64>>> {
    if psi.space != Space::Lagrangian {
        return Err(Error::Invalid(
            "integral-section check needs a section of T1kQ".into(),
        ));
    }
    check_model(m, k_op)?;
    check_dim(m.n(), psi.n)?;
    check_dim(m.k(), psi.k)?;
    let d1 = psi.first_derivatives()?;
    let width = m.k() * Space::Hamiltonian.dim(m.n(), m.k());
    (0..psi.grid.len())
        .into_par_iter()
        .map(|node| {
            if !psi.valid[node] {
                return Ok(vec![f64::NAN; width]);
            }
            let x = &psi.values[node];
            let j = m.fl_jacobian_flat(x)?;
            let kv = k_op.eval(x)?;
            let mut out = Vec::with_capacity(width);
            for (a, ka) in kv.iter().enumerate() {
                let pushed = &j * DVector::from_column_slice(&d1[node][a]);
                out.extend(pushed.iter().zip(ka).map(|(u, w)| u - w));
            }
            Ok(out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamside::hamiltonian_field;
    use crate::integrate::{prolong, Grid};
    use crate::lagside::{sopde_field, Ansatz};
    use crate::symcore::parse;

    fn harmonic() -> FieldModel {
        FieldModel::parse(2, 1, "0.5*(v1_1^2 + v1_2^2) - q1^2").unwrap()
    }

    fn corpus() -> Vec<FieldModel> {
        [
            (2, 1, "0.5*(v1_1^2 + v1_2^2) - q1^2"),
            (2, 1, "0.5*(v1_1^2 + v1_2^2)"),
            (1, 1, "0.5*v1_1^2 - 0.5*q1^2"),
            (2, 2, "v1_1*v2_2"),
            (2, 1, "0.5*v1_1^2"),
            (2, 1, "v1_1"),
            (2, 1, "0.5*(v1_1^2 - v1_2^2) - (1 - cos(q1))"),
            (2, 2, "0.5*(1+q1^2)*(v1_1^2+v1_2^2) + q2*v1_1 - sin(q1*q2)"),
        ]
        .into_iter()
        .map(|(k, n, l)| FieldModel::parse(k, n, l).unwrap())
        .collect()
    }

    #[test]
    fn default_k_examples() {
        let osc = FieldModel::parse(1, 1, "0.5*v1_1^2 - 0.5*q1^2").unwrap();
        let e = default_k(&osc).exprs().unwrap();
        assert_eq!(e[0][0].to_string(), "v1_1");
        assert_eq!(e[0][1].to_string(), "-q1");

        let h = default_k(&harmonic()).exprs().unwrap();
        assert_eq!(h[0][1].to_string(), "-q1");
        assert_eq!(h[0][2], Expr::zero());
        assert_eq!(h[1][1], Expr::zero());
        assert_eq!(h[1][2].to_string(), "-q1");

        let free = default_k(&FieldModel::parse(2, 2, "v1_1*v2_2").unwrap())
            .exprs()
            .unwrap();
        assert!(free.iter().all(|c| c[2..].iter().all(Expr::is_zero)));
    }

    #[test]
    fn default_k_satisfies_all_conditions() {
        for m in corpus() {
            let samples = m.random_points(100, 21, 1.0);
            let r = verify_k(&m, &default_k(&m), &samples, 1e-10).unwrap();
            assert!(r.all_pass(), "{}: {r:?}", m.lagrangian());
            assert!(r.kl_residual < 1e-12 && r.second_order_residual < 1e-12);
        }
    }

    #[test]
    fn corrupted_operators_fail() {
        let m = harmonic();
        let samples = m.random_points(20, 22, 1.0);
        let base = default_k(&m);
        let shifted = FieldOperatorK::pointwise(1, 2, move |x| {
            let mut v = base.eval(x)?;
            v[0][1] += 1.0;
            Ok(v)
        });
        let r = verify_k(&m, &shifted, &samples, 1e-10).unwrap();
        assert!((r.kl_residual - 1.0).abs() < 1e-12);
        assert!(!r.field_eq);

        let base = default_k(&m);
        let grounded = FieldOperatorK::pointwise(1, 2, move |x| {
            let mut v = base.eval(x)?;
            v[0][0] = 0.0;
            v[1][0] = 0.0;
            Ok(v)
        });
        let r = verify_k(&m, &grounded, &samples, 1e-10).unwrap();
        let max_v = samples
            .iter()
            .flat_map(|x| x.v.iter().flatten().copied())
            .fold(0.0_f64, |a, b| a.max(b.abs()));
        assert_eq!(r.second_order_residual, max_v);
    }

    #[test]
    fn from_sopde() {
        let m = harmonic();
        let samples = m.random_points(50, 23, 1.0);
        let xl = sopde_field(&m, &Ansatz::Symmetric);
        let r = verify_k(&m, &k_from_sopde(&m, &xl).unwrap(), &samples, 1e-10).unwrap();
        assert!(r.all_pass() && r.kl_residual < 1e-10);

        let broken = KVectorField::pointwise(Space::Lagrangian, 1, 2, {
            let xl = xl.clone();
            move |x| {
                let mut v = xl.eval(x)?;
                v[0][0] += 0.5;
                Ok(v)
            }
        });
        let r = verify_k(&m, &k_from_sopde(&m, &broken).unwrap(), &samples, 1e-10).unwrap();
        assert!(!r.second_order);
        assert!((r.second_order_residual - 0.5).abs() < 1e-12);

        let free = FieldModel::parse(2, 1, "0.5*(v1_1^2 + v1_2^2)").unwrap();
        let e = |s: &str| parse(s).unwrap();
        let zero_accel = KVectorField::symbolic(
            Space::Lagrangian,
            1,
            2,
            vec![
                vec![e("v1_1"), e("0"), e("0")],
                vec![e("v1_2"), e("0"), e("0")],
            ],
        )
        .unwrap();
        assert_eq!(
            k_from_sopde(&free, &zero_accel).unwrap().exprs(),
            default_k(&free).exprs()
        );
    }

    #[test]
    fn from_hamiltonian_field() {
        let m = harmonic();
        let samples = m.random_points(20, 24, 1.0);
        let xh = hamiltonian_field(&m, &sopde_field(&m, &Ansatz::Symmetric));
        let r = verify_k(&m, &k_from_hamiltonian(&m, &xh).unwrap(), &samples, 1e-9).unwrap();
        assert!(r.all_pass(), "{r:?}");

        let zero = KVectorField::zero(Space::Hamiltonian, 1, 2);
        let k0 = k_from_hamiltonian(&m, &zero).unwrap();
        assert!(k0.exprs().unwrap().iter().flatten().all(Expr::is_zero));
        let r = verify_k(&m, &k0, &samples, 1e-9).unwrap();
        assert!(!r.second_order);
        let at_rest = [LagPoint::new(vec![0.0], vec![vec![0.0, 0.0]])];
        assert!(verify_k(&m, &k0, &at_rest, 1e-9).unwrap().second_order);
    }

    #[test]
    fn symbolic_hamiltonian_composition() {
        let m = FieldModel::parse(2, 1, "0.5*v1_1^2").unwrap();
        let e = |s: &str| parse(s).unwrap();
        // (X₀)_1 = p1_1 ∂_q, (X₀)_2 = 0
        let x0 = KVectorField::symbolic(
            Space::Hamiltonian,
            1,
            2,
            vec![
                vec![e("p1_1"), e("0"), e("0")],
                vec![e("0"), e("0"), e("0")],
            ],
        )
        .unwrap();
        let k_op = k_from_hamiltonian(&m, &x0).unwrap();
        assert_eq!(k_op.exprs().unwrap()[0][0].to_string(), "v1_1");
        let on = [LagPoint::new(vec![0.3], vec![vec![0.7, 0.0]])];
        assert!(verify_k(&m, &k_op, &on, 1e-12).unwrap().all_pass());
        let off = [LagPoint::new(vec![0.3], vec![vec![0.7, 0.4]])];
        let r = verify_k(&m, &k_op, &off, 1e-12).unwrap();
        assert!(r.field_eq && !r.second_order);
    }

    #[test]
    fn integral_sections() {
        let m = harmonic();
        let grid = Grid::uniform(2, 0.0, 1.0, 0.05).unwrap();
        let phi = Section::from_exprs(grid.clone(), &[parse("sin(t1+t2)").unwrap()]).unwrap();
        let psi = prolong(&phi).unwrap();
        let ones = Ansatz::UserMatrix(vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        let k_op = k_from_sopde(&m, &sopde_field(&m, &ones)).unwrap();
        let r = k_integral_residual(&m, &k_op, &psi).unwrap();
        assert!(psi.max_over(&r, 0) < 1e-12);
        // the diagonal split has no such integral section
        let r = k_integral_residual(&m, &default_k(&m), &psi).unwrap();
        assert!(psi.max_over(&r, 0) > 0.5);

        let free = FieldModel::parse(2, 1, "0.5*(v1_1^2 + v1_2^2)").unwrap();
        let constant = Section::from_exprs(grid.clone(), &[parse("0.4").unwrap()]).unwrap();
        let psi0 = prolong(&constant).unwrap();
        let r = k_integral_residual(&free, &default_k(&free), &psi0).unwrap();
        assert_eq!(psi0.max_over(&r, 0), 0.0);

        // moving q with v ≡ 0
        let values: Vec<Vec<f64>> = (0..grid.len())
            .map(|s| vec![grid.t(s)[0], 0.0, 0.0])
            .collect();
        let bad = Section::new(grid, Space::Lagrangian, 1, 2, values)
            .unwrap()
            .with_finite_differences();
        let r = k_integral_residual(&free, &default_k(&free), &bad).unwrap();
        assert!((bad.max_over(&r, 2) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn equivalence_chain_on_regular_models() {
        for (k, n, l) in [
            (2, 1, "0.5*(v1_1^2 + v1_2^2) - q1^2"),
            (1, 1, "0.5*v1_1^2 - 0.5*q1^2"),
            (2, 1, "0.5*(v1_1^2 - v1_2^2) - (1 - cos(q1))"),
        ] {
            let m = FieldModel::parse(k, n, l).unwrap();
            let samples = m.random_points(30, 25, 1.0);
            let xl = sopde_field(&m, &Ansatz::Symmetric);
            for x in &samples {
                let r = crate::lagside::lag_geoeq_residual(&m, &xl, x).unwrap();
                assert!(linalg::max_abs(r) < 1e-9);
            }
            let check = verify_k(&m, &k_from_sopde(&m, &xl).unwrap(), &samples, 1e-9).unwrap();
            assert!(check.all_pass());
            let h = crate::hamside::Hamiltonian::implicit(&m);
            let xh = hamiltonian_field(&m, &xl);
            for x in &samples {
                let y = crate::geometry::legendre(&m, x).unwrap();
                let r = crate::hamside::ham_geoeq_residual(&h, &xh, &y).unwrap();
                assert!(linalg::max_abs(r) < 1e-6, "{l}");
            }
        }
    }
}
