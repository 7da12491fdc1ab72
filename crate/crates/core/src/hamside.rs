//! Hamilton-De Donder-Weyl side: Hamiltonians, the field equations along
//! sections, the geometric equation, Legendre inversion and the pushforward
//! of Lagrangian fields.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::geometry::{
    canonical_forms_on, p_index, CompiledVec, ConstraintSet, FieldModel, HamPoint, LagPoint, Space,
    TwoFormFamily, REGULARITY_TOL,
};
use crate::integrate::Section;
use crate::kvector::{contract, contract_values, KVectorField};
use crate::linalg::{self, PIVOT_TOL};
use crate::symcore::{diff, Expr};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-12,
            max_iter: 50,
        }
    }
}

/// A Hamiltonian on `(T¹ₖ)*Q`, either an expression or `E_L ∘ FL⁻¹` through
/// Newton inversion.
#[derive(Debug, Clone)]
pub struct Hamiltonian(Kind);

#[derive(Debug, Clone)]
enum Kind {
    Explicit {
        n: usize,
        k: usize,
        value: CompiledVec,
        gradient: CompiledVec,
        canonical: TwoFormFamily,
    },
    Implicit {
        model: FieldModel,
        newton: NewtonOptions,
        /// Central-difference step for the gradient.
        step: f64,
        canonical: TwoFormFamily,
    },
}

impl Hamiltonian {
    pub fn explicit(n: usize, k: usize, h: Expr) -> Result<Hamiltonian> {
        let coords = Space::Hamiltonian.coordinates(n, k);
        if let Some(bad) = h.free_vars().into_iter().find(|v| !coords.contains(v)) {
            return Err(Error::InvalidModel(format!(
                "hamiltonian uses {bad:?}, which is not a coordinate of the covelocity bundle"
            )));
        }
        let grad: Vec<Expr> = coords.iter().map(|c| diff(&h, c)).collect();
        Ok(Hamiltonian(Kind::Explicit {
            n,
            k,
            value: CompiledVec::new(vec![h], &coords)?,
            gradient: CompiledVec::new(grad, &coords)?,
            canonical: canonical_forms_on(n, k, Space::Hamiltonian),
        }))
    }

    pub fn implicit(m: &FieldModel) -> Hamiltonian {
        Hamiltonian(Kind::Implicit {
            model: m.clone(),
            newton: NewtonOptions::default(),
            step: 1e-6,
            canonical: canonical_forms_on(m.n(), m.k(), Space::Hamiltonian),
        })
    }

    pub fn n(&self) -> usize {
        match &self.0 {
            Kind::Explicit { n, .. } => *n,
            Kind::Implicit { model, .. } => model.n(),
        }
    }

    pub fn k(&self) -> usize {
        match &self.0 {
            Kind::Explicit { k, .. } => *k,
            Kind::Implicit { model, .. } => model.k(),
        }
    }

    pub fn expr(&self) -> Option<&Expr> {
        match &self.0 {
            Kind::Explicit { value, .. } => Some(&value.exprs[0]),
            Kind::Implicit { .. } => None,
        }
    }

    fn canonical(&self) -> &TwoFormFamily {
        match &self.0 {
            Kind::Explicit { canonical, .. } | Kind::Implicit { canonical, .. } => canonical,
        }
    }

    pub fn value(&self, y: &[f64]) -> Result<f64> {
        check_dim(Space::Hamiltonian.dim(self.n(), self.k()), y.len())?;
        match &self.0 {
            Kind::Explicit { value, .. } => Ok(value.eval(y)?[0]),
            Kind::Implicit { model, newton, .. } => {
                let hp = HamPoint::from_coords(model.n(), model.k(), y)?;
                let x = invert_legendre(model, &hp, None, newton)?;
                crate::geometry::energy(model, &x)
            }
        }
    }

    pub fn gradient(&self, y: &[f64]) -> Result<Vec<f64>> {
        match &self.0 {
            Kind::Explicit { gradient, n, k, .. } => {
                check_dim(Space::Hamiltonian.dim(*n, *k), y.len())?;
                gradient.eval(y)
            }
            Kind::Implicit { step, .. } => (0..y.len())
                .map(|c| {
                    let mut plus = y.to_vec();
                    let mut minus = y.to_vec();
                    plus[c] += step;
                    minus[c] -= step;
                    Ok((self.value(&plus)? - self.value(&minus)?) / (2.0 * step))
                })
                .collect(),
        }
    }
}

/// Residuals of the Hamilton-De Donder-Weyl equations at every node:
/// `∂H/∂q^i + Σ_A ∂ψ^A_i/∂t^A` for each `i`, then `∂H/∂p^A_i - ∂ψ^i/∂t^A`
/// for each `(A, i)`.
pub fn hdw_residual(h: &Hamiltonian, psi: &Section) -> Result<Vec<Vec<f64>>> {
    if psi.space != Space::Hamiltonian {
        return Err(Error::Invalid(
            "hdw_residual needs a section of the covelocity bundle".into(),
        ));
    }
    let (n, k) = (h.n(), h.k());
    check_dim(n, psi.n)?;
    check_dim(k, psi.k)?;
    let d1 = psi.first_derivatives()?;
    (0..psi.grid.len())
        .map(|node| {
            if !psi.valid[node] {
                return Ok(vec![f64::NAN; n + n * k]);
            }
            let g = h.gradient(&psi.values[node])?;
            let mut r: Vec<f64> = (0..n)
                .map(|i| g[i] + (0..k).map(|a| d1[node][a][p_index(n, a, i)]).sum::<f64>())
                .collect();
            for a in 0..k {
                for i in 0..n {
                    r.push(g[p_index(n, a, i)] - d1[node][a][i]);
                }
            }
            Ok(r)
        })
        .collect()
}

/// `Σ_A ι_{X_A}(ω₀)_A - dH` at `y`.
pub fn ham_geoeq_residual(h: &Hamiltonian, x: &KVectorField, y: &HamPoint) -> Result<Vec<f64>> {
    ham_geoeq_residual_flat(h, x, &y.coords())
}

pub(crate) fn ham_geoeq_residual_flat(
    h: &Hamiltonian,
    x: &KVectorField,
    y: &[f64],
) -> Result<Vec<f64>> {
    let c = contract(h.canonical(), x, y)?;
    let g = h.gradient(y)?;
    Ok(c.iter().zip(&g).map(|(a, b)| a - b).collect())
}

/// Newton iteration on `v ↦ ∂L/∂v(q, v) - p` with the velocity Hessian as
/// Jacobian, halving the step while the residual grows. The default guess
/// is `v = 0`.
pub fn invert_legendre(
    m: &FieldModel,
    y: &HamPoint,
    guess: Option<&LagPoint>,
    opts: &NewtonOptions,
) -> Result<LagPoint> {
    let (n, k) = (m.n(), m.k());
    let yc = y.coords();
    check_dim(m.lag_dim(), yc.len())?;
    let mut x = match guess {
        Some(g) => m.lag_coords_of(g)?,
        None => vec![0.0; m.lag_dim()],
    };
    x[..n].copy_from_slice(&yc[..n]);
    let target: Vec<f64> = (0..n)
        .flat_map(|i| (0..k).map(move |a| (i, a)))
        .map(|(i, a)| yc[p_index(n, a, i)])
        .collect();
    let residual = |x: &[f64]| -> Result<DVector<f64>> {
        let p = m.momenta_at(x)?;
        Ok(DVector::from_iterator(
            p.len(),
            p.iter().zip(&target).map(|(a, b)| a - b),
        ))
    };
    let mut f = residual(&x)?;
    for _ in 0..opts.max_iter {
        if f.amax() <= opts.tol {
            return LagPoint::from_coords(n, k, &x);
        }
        let step = linalg::min_norm_solve(&m.hessian_flat(&x)?, &-f.clone(), PIVOT_TOL).x;
        let mut alpha = 1.0;
        let (next, next_f) = loop {
            let mut trial = x.clone();
            for (t, s) in trial[n..].iter_mut().zip(step.iter()) {
                *t += alpha * s;
            }
            match residual(&trial) {
                Ok(ft) if ft.norm() <= f.norm() => break (trial, ft),
                _ if alpha > 1e-6 => alpha *= 0.5,
                Ok(ft) => break (trial, ft),
                Err(e) => return Err(e),
            }
        };
        x = next;
        f = next_f;
    }
    if f.amax() <= opts.tol {
        return LagPoint::from_coords(n, k, &x);
    }
    Err(Error::NotConverged {
        iterations: opts.max_iter,
        residual: f.amax(),
    })
}

/// `(X_H)_A(y) = J_FL(x) (X_L)_A(x)` with `x = FL⁻¹(y)`.
pub fn pushforward_xh(
    m: &FieldModel,
    xl: &KVectorField,
    y: &HamPoint,
    opts: &NewtonOptions,
) -> Result<Vec<Vec<f64>>> {
    let x = invert_legendre(m, y, None, opts)?;
    pushforward_at(m, xl, &x.coords())
}

pub(crate) fn pushforward_at(
    m: &FieldModel,
    xl: &KVectorField,
    xc: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let det = linalg::det(&m.hessian_flat(xc)?);
    if det.abs() <= REGULARITY_TOL {
        return Err(Error::SingularHessian(det));
    }
    let j = m.fl_jacobian_flat(xc)?;
    Ok(xl
        .eval(xc)?
        .into_iter()
        .map(|xa| (&j * DVector::from_vec(xa)).iter().copied().collect())
        .collect())
}

/// The Hamiltonian k-vector field `FL_* X_L`, evaluated through Legendre
/// inversion.
pub fn hamiltonian_field(m: &FieldModel, xl: &KVectorField) -> KVectorField {
    let (model, field) = (m.clone(), xl.clone());
    KVectorField::pointwise(Space::Hamiltonian, m.n(), m.k(), move |y| {
        let hp = HamPoint::from_coords(model.n(), model.k(), y)?;
        pushforward_xh(&model, &field, &hp, &NewtonOptions::default())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestrictedResidual {
    /// `[Σ ι ω₀ - dH₀]` paired with an orthonormal tangent basis.
    pub tangential: Vec<f64>,
    /// `dc · (X₀)_A` for every constraint and every `A`.
    pub tangency: Vec<f64>,
    pub constraint_rank: usize,
    pub constraint_count: usize,
    pub rank_deficient: bool,
    pub max_residual: f64,
}

/// Orthonormal tangent basis of the constraint set at `y`.
fn tangent_basis(cs: &ConstraintSet, y: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>, usize)> {
    let jac = cs.jacobian(y)?;
    let rank = linalg::rank(&jac, PIVOT_TOL);
    Ok((linalg::nullspace(&jac, PIVOT_TOL), jac, rank))
}

fn check_on_constraints(cs: &ConstraintSet, y: &[f64], tol: f64) -> Result<()> {
    let v = cs.violation(y)?;
    if v > tol {
        return Err(Error::Precondition(format!(
            "point violates the constraints by {v:e}"
        )));
    }
    Ok(())
}

/// Residual of `Σ_A ι_{(X₀)_A} ω⁰_A = dH₀` on the constraint set through
/// `y`, where `ω⁰` is the restriction of the canonical forms.
pub fn restricted_ham_residual(
    constraints: &ConstraintSet,
    h0: &Hamiltonian,
    x0: &KVectorField,
    y: &HamPoint,
    tol: f64,
) -> Result<RestrictedResidual> {
    let yc = y.coords();
    check_on_constraints(constraints, &yc, tol)?;
    let values = x0.eval(&yc)?;
    let c = contract_values(h0.canonical(), &values, &yc)?;
    let g = h0.gradient(&yc)?;
    let (basis, jac, rank) = tangent_basis(constraints, &yc)?;
    let diff = DVector::from_iterator(c.len(), c.iter().zip(&g).map(|(a, b)| a - b));
    let tangential: Vec<f64> = (basis.transpose() * diff).iter().copied().collect();
    let tangency: Vec<f64> = values
        .iter()
        .flat_map(|xa| {
            (&jac * DVector::from_column_slice(xa))
                .iter()
                .copied()
                .collect::<Vec<_>>()
        })
        .collect();
    let max_residual = linalg::max_abs(tangential.iter().chain(&tangency).copied());
    Ok(RestrictedResidual {
        tangential,
        tangency,
        constraint_rank: rank,
        constraint_count: constraints.len(),
        rank_deficient: rank < constraints.len(),
        max_residual,
    })
}

/// Minimum-norm `X₀` at `y` making [`restricted_ham_residual`] vanish in the
/// least-squares sense, with its residual norm.
pub fn restricted_solve(
    constraints: &ConstraintSet,
    h0: &Hamiltonian,
    y: &[f64],
) -> Result<(Vec<Vec<f64>>, f64)> {
    let d = y.len();
    let k = h0.k();
    let (basis, jac, _) = tangent_basis(constraints, y)?;
    let t = basis.ncols();
    let r = jac.nrows();
    let mut a_mat = DMatrix::zeros(t + k * r, k * d);
    for a in 0..k {
        let w = h0.canonical().eval(a, y)?;
        // entry j of ωᵀ X, paired with the basis
        let block = basis.transpose() * w.transpose();
        a_mat.view_mut((0, a * d), (t, d)).copy_from(&block);
        a_mat.view_mut((t + a * r, a * d), (r, d)).copy_from(&jac);
    }
    let g = DVector::from_vec(h0.gradient(y)?);
    let mut rhs = DVector::zeros(t + k * r);
    rhs.rows_mut(0, t).copy_from(&(basis.transpose() * g));
    let ls = linalg::min_norm_solve(&a_mat, &rhs, PIVOT_TOL);
    let x0 = (0..k)
        .map(|a| ls.x.rows(a * d, d).iter().copied().collect())
        .collect();
    Ok((x0, ls.residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{energy, legendre};
    use crate::integrate::Grid;
    use crate::lagside::{lag_geoeq_residual, sopde_field, Ansatz};
    use crate::linalg::max_abs;
    use crate::symcore::parse;

    fn harmonic() -> FieldModel {
        FieldModel::parse(2, 1, "0.5*(v1_1^2 + v1_2^2) - q1^2").unwrap()
    }

    fn harmonic_h() -> Hamiltonian {
        Hamiltonian::explicit(1, 2, parse("0.5*(p1_1^2 + p2_1^2) + q1^2").unwrap()).unwrap()
    }

    #[test]
    fn hdw_of_exact_harmonic_section() {
        let grid = Grid::uniform(2, 0.0, 1.0, 0.1).unwrap();
        let s = Section::analytic(
            grid,
            Space::Hamiltonian,
            1,
            2,
            &|t| {
                let (s, c) = (t[0] + t[1]).sin_cos();
                vec![s, c, c]
            },
            Some(&|t| {
                let (s, c) = (t[0] + t[1]).sin_cos();
                vec![c, -s, -s, c, -s, -s]
            }),
            None,
        )
        .unwrap();
        let r = hdw_residual(&harmonic_h(), &s).unwrap();
        assert!(s.max_over(&r, 0) <= 1e-12);
    }

    #[test]
    fn hdw_trivial_cases() {
        let grid = Grid::uniform(1, 0.0, 1.0, 0.1).unwrap();
        let zero = Hamiltonian::explicit(1, 1, Expr::zero()).unwrap();
        let constant = Section::analytic(
            grid.clone(),
            Space::Hamiltonian,
            1,
            1,
            &|_| vec![0.3, 0.2],
            Some(&|_| vec![0.0, 0.0]),
            None,
        )
        .unwrap();
        assert_eq!(
            constant.max_over(&hdw_residual(&zero, &constant).unwrap(), 0),
            0.0
        );
        let free = Hamiltonian::explicit(1, 1, parse("0.5*p1_1^2").unwrap()).unwrap();
        let line = Section::analytic(
            grid,
            Space::Hamiltonian,
            1,
            1,
            &|t| vec![t[0], 1.0],
            Some(&|_| vec![1.0, 0.0]),
            None,
        )
        .unwrap();
        assert_eq!(line.max_over(&hdw_residual(&free, &line).unwrap(), 0), 0.0);
        assert!(Hamiltonian::explicit(1, 1, parse("v1_1").unwrap()).is_err());
    }

    #[test]
    fn coordinate_solution_of_geometric_equation() {
        // (X_A)^i = ∂H/∂p^A_i, Σ_A (X_A)^A_i = -∂H/∂q^i split evenly
        let h = harmonic_h();
        let x = KVectorField::symbolic(
            Space::Hamiltonian,
            1,
            2,
            vec![
                vec![
                    parse("p1_1").unwrap(),
                    parse("-q1").unwrap(),
                    parse("7*q1").unwrap(),
                ],
                vec![
                    parse("p2_1").unwrap(),
                    parse("p1_1").unwrap(),
                    parse("-q1").unwrap(),
                ],
            ],
        )
        .unwrap();
        let y = HamPoint::new(vec![0.3], vec![vec![0.1], vec![-0.4]]);
        assert!(max_abs(ham_geoeq_residual(&h, &x, &y).unwrap()) < 1e-12);
        let constant = Hamiltonian::explicit(1, 2, Expr::constant(3.0)).unwrap();
        let zero = KVectorField::zero(Space::Hamiltonian, 1, 2);
        assert_eq!(
            max_abs(ham_geoeq_residual(&constant, &zero, &y).unwrap()),
            0.0
        );
    }

    #[test]
    fn newton_inversion() {
        let m = harmonic();
        let y = HamPoint::new(vec![0.2], vec![vec![1.0], vec![2.0]]);
        let x = invert_legendre(&m, &y, None, &NewtonOptions::default()).unwrap();
        assert_eq!(x.v, vec![vec![1.0, 2.0]]);

        let quartic = FieldModel::parse(1, 1, "v1_1^4/4").unwrap();
        let y = HamPoint::new(vec![0.0], vec![vec![8.0]]);
        let guess = LagPoint::new(vec![0.0], vec![vec![1.0]]);
        let x = invert_legendre(&quartic, &y, Some(&guess), &NewtonOptions::default()).unwrap();
        assert!((x.v[0][0] - 2.0).abs() < 1e-12);

        let affine = FieldModel::parse(2, 1, "v1_1").unwrap();
        let y = HamPoint::new(vec![0.0], vec![vec![1.0], vec![0.5]]);
        assert!(matches!(
            invert_legendre(&affine, &y, None, &NewtonOptions::default()),
            Err(Error::NotConverged { .. })
        ));
    }

    #[test]
    fn inversion_round_trip() {
        let m = FieldModel::parse(2, 2, "0.5*(1+q1^2)*(v1_1^2+v1_2^2) + 0.5*(v2_1^2+v2_2^2) + q2*v1_1 - sin(q1*q2) + 0.1*v1_1^4").unwrap();
        for x in m.random_points(100, 12, 1.0) {
            let y = legendre(&m, &x).unwrap();
            let back = invert_legendre(&m, &y, None, &NewtonOptions::default()).unwrap();
            assert!(max_abs(back.coords().iter().zip(x.coords()).map(|(a, b)| a - b)) < 1e-10);
        }
    }

    #[test]
    fn implicit_hamiltonian_matches_energy() {
        let m = FieldModel::parse(2, 1, "0.5*(v1_1^2 + v1_2^2) - q1^2 + 0.1*v1_1^4").unwrap();
        let h = Hamiltonian::implicit(&m);
        for x in m.random_points(20, 13, 1.0) {
            let y = legendre(&m, &x).unwrap().coords();
            assert!((h.value(&y).unwrap() - energy(&m, &x).unwrap()).abs() < 1e-10);
            // ∂H/∂p^A_i ∘ FL = v^i_A
            let g = h.gradient(&y).unwrap();
            assert!((g[1] - x.v[0][0]).abs() < 1e-7);
            assert!((g[2] - x.v[0][1]).abs() < 1e-7);
        }
    }

    #[test]
    fn pushforward_of_harmonic_sopde() {
        let m = harmonic();
        let xl = sopde_field(&m, &Ansatz::Symmetric);
        let h = harmonic_h();
        for x in m.random_points(50, 14, 1.0) {
            let y = legendre(&m, &x).unwrap();
            let xh = pushforward_xh(&m, &xl, &y, &NewtonOptions::default()).unwrap();
            // (X_A)^1 = p^A, Σ_A (X_A)^A = -2q
            assert!((xh[0][0] - y.p[0][0]).abs() < 1e-12);
            assert!((xh[1][0] - y.p[1][0]).abs() < 1e-12);
            assert!((xh[0][1] + xh[1][2] + 2.0 * y.q[0]).abs() < 1e-12);
            let field = hamiltonian_field(&m, &xl);
            assert!(max_abs(ham_geoeq_residual(&h, &field, &y).unwrap()) < 1e-10);
        }
        let zero = KVectorField::zero(Space::Lagrangian, 1, 2);
        let y = HamPoint::new(vec![0.1], vec![vec![0.2], vec![0.3]]);
        let pushed = pushforward_xh(&m, &zero, &y, &NewtonOptions::default()).unwrap();
        assert!(pushed.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn oscillator_pushforward_is_standard_field() {
        let m = FieldModel::parse(1, 1, "0.5*v1_1^2 - 0.5*q1^2").unwrap();
        let xl = sopde_field(&m, &Ansatz::Symmetric);
        let y = HamPoint::new(vec![0.7], vec![vec![-0.2]]);
        let xh = pushforward_xh(&m, &xl, &y, &NewtonOptions::default()).unwrap();
        assert!((xh[0][0] + 0.2).abs() < 1e-14 && (xh[0][1] + 0.7).abs() < 1e-14);
    }

    #[test]
    fn fl_related_fields_vanish_together() {
        for (k, n, l) in [
            (
                2,
                2,
                "0.5*(1+q1^2)*(v1_1^2+v1_2^2) + 0.5*(v2_1^2+v2_2^2) + q2*v1_1 - sin(q1*q2)",
            ),
            (2, 1, "0.5*(v1_1^2 - v1_2^2) + cos(q1)"),
        ] {
            let m = FieldModel::parse(k, n, l).unwrap();
            let xl = sopde_field(&m, &Ansatz::Symmetric);
            let xh = hamiltonian_field(&m, &xl);
            let h = Hamiltonian::implicit(&m);
            for x in m.random_points(10, 15, 1.0) {
                let rl = max_abs(lag_geoeq_residual(&m, &xl, &x).unwrap());
                let y = legendre(&m, &x).unwrap();
                let rh = max_abs(ham_geoeq_residual(&h, &xh, &y).unwrap());
                assert!(rl < 1e-9 && rh < 1e-7, "{l}: {rl} {rh}");
            }
        }
    }

    #[test]
    fn restricted_residual_on_primary_constraint() {
        let cs =
            ConstraintSet::new(Space::Hamiltonian, 1, 2, vec![parse("p2_1").unwrap()]).unwrap();
        let h0 = Hamiltonian::explicit(1, 2, parse("0.5*p1_1^2").unwrap()).unwrap();
        let x0 = KVectorField::symbolic(
            Space::Hamiltonian,
            1,
            2,
            vec![
                vec![parse("p1_1").unwrap(), Expr::zero(), Expr::zero()],
                vec![Expr::zero(); 3],
            ],
        )
        .unwrap();
        let y = HamPoint::new(vec![0.3], vec![vec![0.8], vec![0.0]]);
        let r = restricted_ham_residual(&cs, &h0, &x0, &y, 1e-12).unwrap();
        assert!(r.max_residual < 1e-10);
        assert_eq!(r.constraint_rank, 1);
        assert!(!r.rank_deficient);

        let (solved, res) = restricted_solve(&cs, &h0, &y.coords()).unwrap();
        assert!(res < 1e-12);
        assert!((solved[0][0] - 0.8).abs() < 1e-12);
        assert!(max_abs(solved[0][1..].iter().chain(&solved[1]).copied()) < 1e-12);

        let off = HamPoint::new(vec![0.3], vec![vec![0.8], vec![0.5]]);
        assert!(matches!(
            restricted_ham_residual(&cs, &h0, &x0, &off, 1e-12),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn unconstrained_reduces_to_geometric_equation() {
        let h = harmonic_h();
        let empty = ConstraintSet::new(Space::Hamiltonian, 1, 2, vec![]).unwrap();
        let x = KVectorField::pointwise(Space::Hamiltonian, 1, 2, |y| {
            Ok(vec![
                vec![y[1], y[0].sin(), 0.2],
                vec![y[2], -y[0], y[1] * y[2]],
            ])
        });
        let y = HamPoint::new(vec![0.4], vec![vec![0.1], vec![0.9]]);
        let r = restricted_ham_residual(&empty, &h, &x, &y, 1e-12).unwrap();
        let g = ham_geoeq_residual(&h, &x, &y).unwrap();
        assert!((max_abs(r.tangential.iter().copied()) - max_abs(g)).abs() < 1e-14);
    }
}
