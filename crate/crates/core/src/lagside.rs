//! Euler-Lagrange side: residuals of the field equations along sections,
//! SOPDE solutions of the Lagrangian geometric equation and its residual.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::geometry::{v_index, FieldModel, LagPoint, Space};
use crate::integrate::Section;
use crate::kvector::{contract, KVectorField};
use crate::linalg::{self, PIVOT_TOL};

/// Left side of the Euler-Lagrange equations,
/// `Σ_A d/dt^A(∂L/∂v^i_A) - ∂L/∂q^i`, expanded by the chain rule at every
/// node of a configuration-space section. Invalid nodes give NaN.
pub fn el_residual(m: &FieldModel, phi: &Section) -> Result<Vec<Vec<f64>>> {
    if phi.space != Space::Configuration {
        return Err(Error::Invalid("el_residual needs a section of Q".into()));
    }
    let (n, k) = (m.n(), m.k());
    check_dim(n, phi.n)?;
    check_dim(k, phi.k)?;
    let d1 = phi.first_derivatives()?;
    let d2 = phi.second_derivatives()?;
    let nk = n * k;
    (0..phi.grid.len())
        .map(|node| {
            if !phi.valid[node] {
                return Ok(vec![f64::NAN; n]);
            }
            let mut x = phi.values[node].clone();
            for i in 0..n {
                for a in 0..k {
                    x.push(d1[node][a][i]);
                }
            }
            let dq = m.dl_dq.eval(&x)?;
            let mixed = m.mixed_flat(&x)?;
            let hess = m.d2_vv.eval(&x)?;
            Ok((0..n)
                .map(|i| {
                    let mut r = -dq[i];
                    for a in 0..k {
                        for j in 0..n {
                            r += mixed[(j * n + i) * k + a] * d1[node][a][j];
                            for b in 0..k {
                                r += hess[(i * k + a) * nk + j * k + b] * d2[node][a][b][j];
                            }
                        }
                    }
                    r
                })
                .collect())
        })
        .collect()
}

/// Which member of the solution family of the second-order equations is
/// selected.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Ansatz {
    /// `(X_A)^i_B = (X_B)^i_A`, minimum norm over the independent entries.
    Symmetric,
    /// `(X_A)^i_B = M_AB λ^i` for a fixed `k x k` matrix `M`, minimum norm
    /// over `λ`.
    UserMatrix(Vec<Vec<f64>>),
    /// Minimum norm over all `nk²` accelerations.
    Full,
}

impl Ansatz {
    pub(crate) fn basis(&self, n: usize, k: usize) -> Result<DMatrix<f64>> {
        let unknown = |a: usize, j: usize, b: usize| a * n * k + j * k + b;
        let total = n * k * k;
        match self {
            Ansatz::Full => Ok(DMatrix::identity(total, total)),
            Ansatz::Symmetric => {
                let pairs: Vec<(usize, usize)> =
                    (0..k).flat_map(|a| (a..k).map(move |b| (a, b))).collect();
                let mut e = DMatrix::zeros(total, n * pairs.len());
                for j in 0..n {
                    for (p, (a, b)) in pairs.iter().enumerate() {
                        let col = j * pairs.len() + p;
                        e[(unknown(*a, j, *b), col)] = 1.0;
                        e[(unknown(*b, j, *a), col)] = 1.0;
                    }
                }
                Ok(e)
            }
            Ansatz::UserMatrix(mat) => {
                check_dim(k, mat.len())?;
                let mut e = DMatrix::zeros(total, n);
                for (a, row) in mat.iter().enumerate() {
                    check_dim(k, row.len())?;
                    for (b, c) in row.iter().enumerate() {
                        for j in 0..n {
                            e[(unknown(a, j, b), j)] = *c;
                        }
                    }
                }
                Ok(e)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SopdeSolution {
    /// `accel[a][i][b]` is `(X_A)^i_B`.
    pub accel: Vec<Vec<Vec<f64>>>,
    /// Euclidean residual of the `n` second-order equations.
    pub residual: f64,
    pub consistent: bool,
    pub rank: usize,
}

pub const CONSISTENCY_TOL: f64 = 1e-9;

/// Solves `∂²L/∂q^j∂v^i_A v^j_A + ∂²L/∂v^i_A∂v^j_B (X_A)^j_B = ∂L/∂q^i`
/// for the accelerations at `x` within the selected ansatz.
pub fn sopde_solve(m: &FieldModel, x: &LagPoint, ansatz: &Ansatz) -> Result<SopdeSolution> {
    let xc = m.lag_coords_of(x)?;
    sopde_solve_flat(m, &xc, ansatz)
}

pub(crate) fn sopde_solve_flat(
    m: &FieldModel,
    xc: &[f64],
    ansatz: &Ansatz,
) -> Result<SopdeSolution> {
    let (n, k) = (m.n(), m.k());
    let nk = n * k;
    let dq = m.dl_dq.eval(xc)?;
    let mixed = m.mixed_flat(xc)?;
    let hess = m.d2_vv.eval(xc)?;
    let mut a_mat = DMatrix::zeros(n, n * k * k);
    let mut rhs = DVector::zeros(n);
    for i in 0..n {
        let mut r = dq[i];
        for a in 0..k {
            for j in 0..n {
                r -= mixed[(j * n + i) * k + a] * xc[v_index(n, k, j, a)];
                for b in 0..k {
                    a_mat[(i, a * nk + j * k + b)] = hess[(i * k + a) * nk + j * k + b];
                }
            }
        }
        rhs[i] = r;
    }
    let basis = ansatz.basis(n, k)?;
    let ls = linalg::min_norm_solve(&(&a_mat * &basis), &rhs, PIVOT_TOL);
    let full = &basis * &ls.x;
    let accel = (0..k)
        .map(|a| {
            (0..n)
                .map(|i| (0..k).map(|b| full[a * nk + i * k + b]).collect())
                .collect()
        })
        .collect();
    Ok(SopdeSolution {
        accel,
        residual: ls.residual,
        consistent: ls.residual <= CONSISTENCY_TOL * rhs.norm().max(1.0),
        rank: ls.rank,
    })
}

/// The SOPDE `X_A = v^i_A ∂/∂q^i + (X_A)^i_B ∂/∂v^i_B` with accelerations
/// from `sopde_solve` at every point. Points where the system is
/// inconsistent still return the least-squares accelerations.
pub fn sopde_field(m: &FieldModel, ansatz: &Ansatz) -> KVectorField {
    let (n, k) = (m.n(), m.k());
    let model = m.clone();
    let ansatz = ansatz.clone();
    KVectorField::pointwise(Space::Lagrangian, n, k, move |xc| {
        let sol = sopde_solve_flat(&model, xc, &ansatz)?;
        Ok(sopde_from_accel(n, k, xc, &sol.accel))
    })
}

pub(crate) fn sopde_from_accel(
    n: usize,
    k: usize,
    xc: &[f64],
    accel: &[Vec<Vec<f64>>],
) -> Vec<Vec<f64>> {
    (0..k)
        .map(|a| {
            let mut c: Vec<f64> = (0..n).map(|i| xc[v_index(n, k, i, a)]).collect();
            for row in &accel[a] {
                c.extend_from_slice(row);
            }
            c
        })
        .collect()
}

/// `Σ_A ι_{X_A}(ω_L)_A - dE_L` at `x`.
pub fn lag_geoeq_residual(m: &FieldModel, x: &KVectorField, p: &LagPoint) -> Result<Vec<f64>> {
    let xc = m.lag_coords_of(p)?;
    lag_geoeq_residual_flat(m, x, &xc)
}

pub(crate) fn lag_geoeq_residual_flat(
    m: &FieldModel,
    x: &KVectorField,
    xc: &[f64],
) -> Result<Vec<f64>> {
    let c = contract(m.lag_forms(), x, xc)?;
    let de = m.energy_grad.eval(xc)?;
    Ok(c.iter().zip(&de).map(|(a, b)| a - b).collect())
}

/// All k-vector fields solving the geometric equation at `x`, as a
/// minimum-norm particular solution plus a nullspace basis, each column
/// holding `X_1, .., X_k` stacked.
#[derive(Debug, Clone)]
pub struct GeoeqSolutions {
    pub particular: Vec<Vec<f64>>,
    pub nullspace: DMatrix<f64>,
    pub residual: f64,
}

pub fn lag_geoeq_solutions(m: &FieldModel, x: &LagPoint) -> Result<GeoeqSolutions> {
    let xc = m.lag_coords_of(x)?;
    let d = m.lag_dim();
    let k = m.k();
    let forms = m.lag_forms();
    // entry j of Σ_A ω_Aᵀ X_A
    let mut a_mat = DMatrix::zeros(d, k * d);
    for a in 0..k {
        let w = forms.eval(a, &xc)?;
        a_mat.view_mut((0, a * d), (d, d)).copy_from(&w.transpose());
    }
    let rhs = DVector::from_vec(m.energy_grad.eval(&xc)?);
    let ls = linalg::min_norm_solve(&a_mat, &rhs, PIVOT_TOL);
    Ok(GeoeqSolutions {
        particular: (0..k)
            .map(|a| ls.x.rows(a * d, d).iter().copied().collect())
            .collect(),
        nullspace: linalg::nullspace(&a_mat, PIVOT_TOL),
        residual: ls.residual,
    })
}
