//! Unified (Skinner-Rusk) formalism on the Whitney sum `T¹ₖQ ⊕ (T¹ₖ)*Q`:
//! coupling and Hamiltonian functions, the unified equation as pointwise
//! linear algebra, the graph of the Legendre map and the constraint
//! algorithm `P₀ ⊇ P₁ ⊇ ..`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::geometry::{
    unified_p_index, v_index, ConstraintSet, FieldModel, LagPoint, Space, UnifiedPoint,
};
use crate::kvector::{contract_values, is_sopde, KVectorField};
use crate::lagside::Ansatz;
use crate::linalg::{self, PIVOT_TOL};
use crate::symcore::{p_name, simplify, Expr};

/// Rank tolerance for constraint Jacobians and solvability systems.
pub const RANK_TOL: f64 = 1e-8;

fn unified_coords(m: &FieldModel, w: &UnifiedPoint) -> Result<Vec<f64>> {
    let c = w.coords();
    check_dim(m.unified_dim(), c.len())?;
    check_dim(m.n(), w.q.len())?;
    Ok(c)
}

/// `Σ_A Σ_i p^A_i v^i_A`
pub fn coupling(m: &FieldModel, w: &UnifiedPoint) -> Result<f64> {
    let c = unified_coords(m, w)?;
    Ok(coupling_flat(m, &c))
}

fn coupling_flat(m: &FieldModel, c: &[f64]) -> f64 {
    let (n, k) = (m.n(), m.k());
    (0..k)
        .flat_map(|a| (0..n).map(move |i| (a, i)))
        .map(|(a, i)| c[unified_p_index(n, k, a, i)] * c[v_index(n, k, i, a)])
        .sum()
}

/// `𝓗 = Σ p^A_i v^i_A - L(q, v)`
pub fn unified_hamiltonian(m: &FieldModel, w: &UnifiedPoint) -> Result<f64> {
    let c = unified_coords(m, w)?;
    Ok(coupling_flat(m, &c) - m.l.eval(&c[..m.lag_dim()])?[0])
}

/// `(q, v, ∂L/∂v)`
pub fn graph_point(m: &FieldModel, x: &LagPoint) -> Result<UnifiedPoint> {
    let xc = m.lag_coords_of(x)?;
    UnifiedPoint::from_coords(m.n(), m.k(), &graph_flat(m, &xc)?)
}

pub(crate) fn graph_flat(m: &FieldModel, xc: &[f64]) -> Result<Vec<f64>> {
    let y = m.legendre_flat(xc)?;
    let mut w = xc.to_vec();
    w.extend_from_slice(&y[m.n()..]);
    Ok(w)
}

/// Graph constraints `p^A_i - ∂L/∂v^i_A`, ordered `(A, i)`.
pub fn graph_constraints(m: &FieldModel) -> Vec<Expr> {
    let (n, k) = (m.n(), m.k());
    (0..k)
        .flat_map(|a| (0..n).map(move |i| (a, i)))
        .map(|(a, i)| simplify(&(Expr::var(p_name(a, i)) - m.dl_dv_expr(i, a).clone())))
        .collect()
}

fn graph_residual_flat(m: &FieldModel, c: &[f64]) -> Result<Vec<f64>> {
    let (n, k) = (m.n(), m.k());
    let dv = m.momenta_at(&c[..m.lag_dim()])?;
    Ok((0..k)
        .flat_map(|a| (0..n).map(move |i| (a, i)))
        .map(|(a, i)| c[unified_p_index(n, k, a, i)] - dv[i * k + a])
        .collect())
}

/// Tangency condition to the graph with `(Z_A)^i = v^i_A` already imposed:
/// `(Z_A)^B_j - v^i_A ∂²L/∂q^i∂v^j_B - (Z_A)^i_C ∂²L/∂v^i_C∂v^j_B`,
/// ordered `(A, B, j)`.
pub fn tangency_residual(m: &FieldModel, z: &[Vec<f64>], w: &UnifiedPoint) -> Result<Vec<f64>> {
    let c = unified_coords(m, w)?;
    tangency_flat(m, z, &c, false)
}

/// With `general`, the base components of `Z` replace `v` in the first term,
/// which is the tangency of an arbitrary vector field to the graph.
fn tangency_flat(m: &FieldModel, z: &[Vec<f64>], c: &[f64], general: bool) -> Result<Vec<f64>> {
    let (n, k) = (m.n(), m.k());
    let nk = n * k;
    check_dim(k, z.len())?;
    let xc = &c[..m.lag_dim()];
    let mixed = m.mixed_flat(xc)?;
    let hess = m.d2_vv.eval(xc)?;
    let mut out = Vec::with_capacity(k * k * n);
    for (a, za) in z.iter().enumerate() {
        check_dim(m.unified_dim(), za.len())?;
        for b in 0..k {
            for j in 0..n {
                let mut r = za[unified_p_index(n, k, b, j)];
                for i in 0..n {
                    let base = if general {
                        za[i]
                    } else {
                        c[v_index(n, k, i, a)]
                    };
                    r -= base * mixed[(i * n + j) * k + b];
                    for cc in 0..k {
                        r -= za[v_index(n, k, i, cc)] * hess[(i * k + cc) * nk + j * k + b];
                    }
                }
                out.push(r);
            }
        }
    }
    Ok(out)
}

/// `Σ_A ι_{Z_A} Ω_A - d𝓗` at `w`.
pub fn unified_residual(m: &FieldModel, z: &[Vec<f64>], w: &UnifiedPoint) -> Result<Vec<f64>> {
    let c = unified_coords(m, w)?;
    unified_residual_flat(m, z, &c)
}

pub(crate) fn unified_residual_flat(m: &FieldModel, z: &[Vec<f64>], c: &[f64]) -> Result<Vec<f64>> {
    let contraction = contract_values(m.unified_forms(), z, c)?;
    let grad = m.unified_hamiltonian().gradient.eval(c)?;
    Ok(contraction.iter().zip(&grad).map(|(a, b)| a - b).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SrAnsatz {
    Symmetric,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SrSolution {
    /// `p^A_i - ∂L/∂v^i_A`, ordered `(A, i)`.
    pub graph_residual: Vec<f64>,
    pub feasible: bool,
    /// `Z_A` in unified coordinates, when the point is on the graph.
    pub z: Option<Vec<Vec<f64>>>,
    /// Which acceleration ansatz produced `z`.
    pub ansatz: Option<SrAnsatz>,
    pub tangency_residual: f64,
    /// Dimension of the solution family of the full unified system at `w`.
    pub gauge_dimension: usize,
}

/// Solves the unified equation at `w`: `(Z_A)^i = v^i_A`, the momentum
/// split `(Z_A)^B_i = δ_AB (1/k) ∂L/∂q^i`, and accelerations from the
/// tangency equations, symmetric minimum-norm first and unrestricted
/// minimum-norm if that is inconsistent.
pub fn sr_solve(m: &FieldModel, w: &UnifiedPoint, tol: f64) -> Result<SrSolution> {
    let c = unified_coords(m, w)?;
    let graph_residual = graph_residual_flat(m, &c)?;
    if linalg::max_abs(graph_residual.iter().copied()) > tol {
        return Ok(SrSolution {
            graph_residual,
            feasible: false,
            z: None,
            ansatz: None,
            tangency_residual: f64::NAN,
            gauge_dimension: 0,
        });
    }
    let (n, k) = (m.n(), m.k());
    let nk = n * k;
    let xc = &c[..m.lag_dim()];
    let dq = m.dl_dq.eval(xc)?;
    let mixed = m.mixed_flat(xc)?;
    let hess = m.d2_vv.eval(xc)?;
    // unknowns (Z_A)^i_C at a*nk + i*k + c; equations (A, B, j)
    let mut a_mat = DMatrix::zeros(k * k * n, k * nk);
    let mut rhs = DVector::zeros(k * k * n);
    for a in 0..k {
        for b in 0..k {
            for j in 0..n {
                let row = (a * k + b) * n + j;
                let mut r = if a == b { dq[j] / k as f64 } else { 0.0 };
                for i in 0..n {
                    r -= c[v_index(n, k, i, a)] * mixed[(i * n + j) * k + b];
                    for cc in 0..k {
                        a_mat[(row, a * nk + i * k + cc)] = hess[(i * k + cc) * nk + j * k + b];
                    }
                }
                rhs[row] = r;
            }
        }
    }
    let scale = tol * rhs.norm().max(1.0);
    let sym_basis = Ansatz::Symmetric.basis(n, k)?;
    let sym = linalg::min_norm_solve(&(&a_mat * &sym_basis), &rhs, PIVOT_TOL);
    let (accel, used, residual) = if sym.residual <= scale {
        (&sym_basis * &sym.x, SrAnsatz::Symmetric, sym.residual)
    } else {
        let full = linalg::min_norm_solve(&a_mat, &rhs, PIVOT_TOL);
        (full.x, SrAnsatz::Full, full.residual)
    };
    let z: Vec<Vec<f64>> = (0..k)
        .map(|a| {
            let mut za = vec![0.0; m.unified_dim()];
            for i in 0..n {
                za[i] = c[v_index(n, k, i, a)];
                for cc in 0..k {
                    za[v_index(n, k, i, cc)] = accel[a * nk + i * k + cc];
                }
                za[unified_p_index(n, k, a, i)] = dq[i] / k as f64;
            }
            za
        })
        .collect();
    let tangency = linalg::max_abs(tangency_flat(m, &z, &c, false)?);
    let cs = ConstraintSet::new(Space::Unified, n, k, graph_constraints(m))?;
    let (sys, _) = solvability_system(m, &cs, &c)?;
    let gauge_dimension = sys.ncols() - linalg::rank(&sys, RANK_TOL);
    Ok(SrSolution {
        graph_residual,
        feasible: residual <= scale,
        z: Some(z),
        ansatz: Some(used),
        tangency_residual: tangency,
        gauge_dimension,
    })
}

/// Max of `|Ω_A(j_* u, j_* u') - (ω_L)_A(u, u')|` over random pairs of
/// tangent vectors at `x`, with `j` the graph embedding.
pub fn graph_pullback_check(m: &FieldModel, x: &LagPoint, trials: usize, seed: u64) -> Result<f64> {
    let xc = m.lag_coords_of(x)?;
    let w = graph_flat(m, &xc)?;
    let (dl, du) = (m.lag_dim(), m.unified_dim());
    let fl = m.fl_jacobian_flat(&xc)?;
    let mut jg = DMatrix::zeros(du, dl);
    jg.view_mut((0, 0), (dl, dl)).fill_with_identity();
    jg.view_mut((dl, 0), (du - dl, dl))
        .copy_from(&fl.rows(m.n(), du - dl));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for a in 0..m.k() {
        let big = m.unified_forms().eval(a, &w)?;
        let small = m.lag_forms().eval(a, &xc)?;
        for _ in 0..trials {
            let u = DVector::from_fn(dl, |_, _| rng.gen_range(-1.0..1.0));
            let v = DVector::from_fn(dl, |_, _| rng.gen_range(-1.0..1.0));
            let lhs = (&jg * &u).dot(&(&big * (&jg * &v)));
            let rhs = u.dot(&(&small * &v));
            worst = worst.max((lhs - rhs).abs());
        }
    }
    Ok(worst)
}

/// `Z_A = (Id ⊕ FL)_* X_A` for a SOPDE `X`, as a field on the Whitney sum
/// whose coefficients depend on `(q, v)` only.
pub fn lift_from_lagrangian(
    m: &FieldModel,
    xl: &KVectorField,
    test_points: &[LagPoint],
) -> Result<KVectorField> {
    if xl.space() != Space::Lagrangian {
        return Err(Error::Invalid("lift needs a field on T1kQ".into()));
    }
    let check = is_sopde(xl, test_points, 1e-12)?;
    if !check.holds {
        return Err(Error::NotSopde(check.max_violation));
    }
    let (n, k) = (m.n(), m.k());
    if let Some(exprs) = xl.exprs() {
        let lifted = exprs
            .into_iter()
            .map(|xa| {
                let mut za = xa.clone();
                for cc in 0..k {
                    for j in 0..n {
                        let mut e = Expr::zero();
                        for i in 0..n {
                            e = e + xa[i].clone() * m.d2_qv_expr(i, j, cc).clone();
                            for b in 0..k {
                                e = e + xa[v_index(n, k, i, b)].clone()
                                    * m.d2_vv_expr(i, b, j, cc).clone();
                            }
                        }
                        za.push(simplify(&e));
                    }
                }
                za
            })
            .collect();
        return KVectorField::symbolic(Space::Unified, n, k, lifted);
    }
    let (model, field) = (m.clone(), xl.clone());
    Ok(KVectorField::pointwise(Space::Unified, n, k, move |w| {
        let xc = &w[..model.lag_dim()];
        let fl = model.fl_jacobian_flat(xc)?;
        let dl = model.lag_dim();
        field
            .eval(xc)?
            .into_iter()
            .map(|xa| {
                let pushed = &fl * DVector::from_column_slice(&xa);
                let mut za = xa;
                za.extend(pushed.iter().skip(model.n()).take(w.len() - dl));
                Ok(za)
            })
            .collect()
    }))
}

/// Drops the momentum components of a field tangent to the graph and
/// re-expresses any momentum dependence through `p = ∂L/∂v`.
pub fn project_to_lagrangian(
    m: &FieldModel,
    z: &KVectorField,
    test_points: &[LagPoint],
    tol: f64,
) -> Result<KVectorField> {
    if z.space() != Space::Unified {
        return Err(Error::Invalid(
            "projection needs a field on the Whitney sum".into(),
        ));
    }
    let mut worst = 0.0_f64;
    for x in test_points {
        let w = graph_flat(m, &m.lag_coords_of(x)?)?;
        let zv = z.eval(&w)?;
        worst = worst.max(linalg::max_abs(tangency_flat(m, &zv, &w, true)?));
    }
    if worst > tol {
        return Err(Error::NotTangent(worst));
    }
    let (n, k) = (m.n(), m.k());
    let dl = m.lag_dim();
    if let Some(exprs) = z.exprs() {
        let graph = |name: &str| -> Option<Expr> {
            (0..k)
                .flat_map(|a| (0..n).map(move |i| (a, i)))
                .find(|(a, i)| p_name(*a, *i) == name)
                .map(|(a, i)| m.dl_dv_expr(i, a).clone())
        };
        let projected = exprs
            .into_iter()
            .map(|za| {
                za[..dl]
                    .iter()
                    .map(|e| simplify(&e.substitute(&graph)))
                    .collect()
            })
            .collect();
        return KVectorField::symbolic(Space::Lagrangian, n, k, projected);
    }
    let (model, field) = (m.clone(), z.clone());
    Ok(KVectorField::pointwise(
        Space::Lagrangian,
        n,
        k,
        move |xc| {
            let w = graph_flat(&model, xc)?;
            Ok(field
                .eval(&w)?
                .into_iter()
                .map(|za| za[..xc.len()].to_vec())
                .collect())
        },
    ))
}

/// Linear system of the constraint algorithm at `w`: unknowns are the
/// unified components of `Z_1, .., Z_k`; rows are `(Z_A)^i = v^i_A`,
/// `Σ_A (Z_A)^A_i = ∂L/∂q^i` and `dc · Z_A = 0` for every constraint.
fn solvability_system(
    m: &FieldModel,
    cs: &ConstraintSet,
    w: &[f64],
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (n, k) = (m.n(), m.k());
    let du = m.unified_dim();
    let rows = n * k + n + cs.len() * k;
    let mut a_mat = DMatrix::zeros(rows, k * du);
    let mut b = DVector::zeros(rows);
    let mut r = 0;
    for a in 0..k {
        for i in 0..n {
            a_mat[(r, a * du + i)] = 1.0;
            b[r] = w[v_index(n, k, i, a)];
            r += 1;
        }
    }
    let dq = m.dl_dq.eval(&w[..m.lag_dim()])?;
    for (i, d) in dq.iter().enumerate() {
        for a in 0..k {
            a_mat[(r, a * du + unified_p_index(n, k, a, i))] = 1.0;
        }
        b[r] = *d;
        r += 1;
    }
    let jac = cs.jacobian(w)?;
    for c in 0..cs.len() {
        for a in 0..k {
            for x in 0..du {
                a_mat[(r, a * du + x)] = jac[(c, x)];
            }
            r += 1;
        }
    }
    Ok((a_mat, b))
}

/// Right-hand side of [`solvability_system`] as expressions.
fn symbolic_rhs(m: &FieldModel, constraint_count: usize) -> Vec<Expr> {
    let (n, k) = (m.n(), m.k());
    let mut b: Vec<Expr> = (0..k)
        .flat_map(|a| (0..n).map(move |i| Expr::var(crate::symcore::v_name(i, a))))
        .collect();
    b.extend((0..n).map(|i| m.dl_dq_expr(i).clone()));
    b.extend(std::iter::repeat(Expr::zero()).take(constraint_count * k));
    b
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintOptions {
    pub max_levels: usize,
    /// Consistency and constraint-satisfaction tolerance.
    pub tol: f64,
}

impl Default for ConstraintOptions {
    fn default() -> Self {
        ConstraintOptions {
            max_levels: 6,
            tol: 1e-9,
        }
    }
}

/// A component of `Z` fixed by the equations, with its value at the first
/// consistent sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeterminedComponent {
    pub field: usize,
    pub coordinate: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintLevel {
    pub level: usize,
    pub constraints: Vec<String>,
    pub equations: usize,
    pub unknowns: usize,
    pub samples_tested: usize,
    pub system_ranks: Vec<usize>,
    pub jacobian_ranks: Vec<usize>,
    pub consistency_residuals: Vec<f64>,
    pub consistent_samples: usize,
    /// The system matrix is the same at every sample, so consistency
    /// conditions were extracted symbolically.
    pub linear: bool,
    pub new_constraints: Vec<String>,
    /// Inconsistent samples not explained by a symbolic constraint.
    pub numeric_failures: Vec<usize>,
    pub determined: Vec<DeterminedComponent>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintReport {
    pub levels: Vec<ConstraintLevel>,
    pub stabilized: bool,
    pub final_level: usize,
    pub final_constraints: Vec<String>,
    /// Every retained sample admits a solution at the final level.
    pub all_consistent: bool,
    #[serde(skip)]
    pub final_exprs: Vec<Expr>,
    /// Retained samples, projected onto the final constraint set.
    #[serde(skip)]
    pub final_samples: Vec<UnifiedPoint>,
}

struct SampleSystem {
    matrix: DMatrix<f64>,
    residual: f64,
    rank: usize,
    jacobian_rank: usize,
    solution: DVector<f64>,
    consistent: bool,
}

fn matrices_equal(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    a.shape() == b.shape() && a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= 1e-12)
}

/// Iterates the constraint algorithm from the graph constraints on the
/// given samples, which must lie on the graph.
pub fn constraint_algorithm(
    m: &FieldModel,
    samples: &[UnifiedPoint],
    opts: &ConstraintOptions,
) -> Result<ConstraintReport> {
    if samples.is_empty() {
        return Err(Error::Precondition(
            "constraint algorithm needs samples".into(),
        ));
    }
    let (n, k) = (m.n(), m.k());
    let du = m.unified_dim();
    let mut exprs = graph_constraints(m);
    let mut points: Vec<Vec<f64>> = samples
        .iter()
        .map(|w| unified_coords(m, w))
        .collect::<Result<_>>()?;
    {
        let cs = ConstraintSet::new(Space::Unified, n, k, exprs.clone())?;
        for (s, p) in points.iter().enumerate() {
            let v = cs.violation(p)?;
            if v > opts.tol {
                return Err(Error::Precondition(format!(
                    "sample {s} is off the graph of the Legendre map by {v:e}"
                )));
            }
        }
    }
    let coords = Space::Unified.coordinates(n, k);
    let mut levels = Vec::new();
    let mut stabilized = false;
    let mut all_consistent = false;
    for level in 0..opts.max_levels {
        let cs = ConstraintSet::new(Space::Unified, n, k, exprs.clone())?;
        let systems: Vec<SampleSystem> = points
            .par_iter()
            .map(|p| {
                let (a_mat, b) = solvability_system(m, &cs, p)?;
                let ls = linalg::min_norm_solve(&a_mat, &b, PIVOT_TOL);
                let rank = linalg::rank(&a_mat, RANK_TOL);
                let jacobian_rank = linalg::rank(&cs.jacobian(p)?, RANK_TOL);
                Ok(SampleSystem {
                    consistent: ls.residual <= opts.tol * b.norm().max(1.0),
                    residual: ls.residual,
                    rank,
                    jacobian_rank,
                    solution: ls.x,
                    matrix: a_mat,
                })
            })
            .collect::<Result<_>>()?;
        let linear = systems
            .iter()
            .all(|s| matrices_equal(&s.matrix, &systems[0].matrix));
        let failing: Vec<usize> = (0..systems.len())
            .filter(|s| !systems[*s].consistent)
            .collect();
        let determined = systems
            .iter()
            .find(|s| s.consistent)
            .map(|s| determined_components(&s.matrix, &s.solution, &coords, du))
            .unwrap_or_default();
        let mut entry = ConstraintLevel {
            level,
            constraints: exprs.iter().map(ToString::to_string).collect(),
            equations: systems[0].matrix.nrows(),
            unknowns: systems[0].matrix.ncols(),
            samples_tested: points.len(),
            system_ranks: systems.iter().map(|s| s.rank).collect(),
            jacobian_ranks: systems.iter().map(|s| s.jacobian_rank).collect(),
            consistency_residuals: systems.iter().map(|s| s.residual).collect(),
            consistent_samples: points.len() - failing.len(),
            linear,
            new_constraints: Vec::new(),
            numeric_failures: Vec::new(),
            determined,
        };
        if failing.is_empty() {
            levels.push(entry);
            stabilized = true;
            all_consistent = true;
            break;
        }
        let mut added = Vec::new();
        if linear {
            let b = symbolic_rhs(m, exprs.len());
            let left = linalg::left_nullspace(&systems[0].matrix, RANK_TOL);
            for col in left.column_iter() {
                let scale = col
                    .iter()
                    .fold(0.0_f64, |acc, y| if y.abs() > acc.abs() { *y } else { acc });
                let mut e = Expr::zero();
                for (y, br) in col.iter().zip(&b) {
                    let y = y / scale;
                    if y.abs() > 1e-12 {
                        e = e + Expr::constant(y) * br.clone();
                    }
                }
                let e = simplify(&e);
                let candidate = ConstraintSet::new(Space::Unified, n, k, vec![e.clone()])?;
                let violated = failing.iter().any(|s| {
                    candidate
                        .violation(&points[*s])
                        .map(|v| v > opts.tol)
                        .unwrap_or(true)
                });
                if violated && !added.contains(&e) {
                    added.push(e);
                }
            }
        }
        entry.numeric_failures = if added.is_empty() {
            failing.clone()
        } else {
            Vec::new()
        };
        entry.new_constraints = added.iter().map(ToString::to_string).collect();
        levels.push(entry);
        if added.is_empty() {
            // nothing symbolic to adjoin: keep the consistent samples only
            stabilized = true;
            points = (0..points.len())
                .filter(|s| systems[*s].consistent)
                .map(|s| points[s].clone())
                .collect();
            break;
        }
        exprs.extend(added);
        let next = ConstraintSet::new(Space::Unified, n, k, exprs.clone())?;
        points = points
            .into_iter()
            .filter_map(|p| next.project(&p, opts.tol * 1e-3, 50).ok())
            .collect();
        if points.is_empty() {
            break;
        }
    }
    let final_level = levels.len() - 1;
    Ok(ConstraintReport {
        final_constraints: exprs.iter().map(ToString::to_string).collect(),
        final_exprs: exprs,
        stabilized,
        final_level,
        all_consistent,
        final_samples: points
            .iter()
            .map(|p| UnifiedPoint::from_coords(n, k, p))
            .collect::<Result<_>>()?,
        levels,
    })
}

fn determined_components(
    a: &DMatrix<f64>,
    x: &DVector<f64>,
    coords: &[String],
    du: usize,
) -> Vec<DeterminedComponent> {
    let null = linalg::nullspace(a, RANK_TOL);
    (0..a.ncols())
        .filter(|u| null.ncols() == 0 || null.row(*u).amax() <= 1e-9)
        .map(|u| DeterminedComponent {
            field: u / du + 1,
            coordinate: coords[u % du].clone(),
            value: x[u],
        })
        .collect()
}

/// A field on the Whitney sum from per-point coefficient vectors, for
/// callers holding `Z` values rather than expressions.
pub fn field_from_fn<F>(m: &FieldModel, f: F) -> KVectorField
where
    F: Fn(&[f64]) -> Result<Vec<Vec<f64>>> + Send + Sync + 'static,
{
    KVectorField::pointwise(Space::Unified, m.n(), m.k(), f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::energy;
    use crate::lagside::{lag_geoeq_residual, sopde_field, sopde_solve};
    use crate::linalg::max_abs;

    fn harmonic() -> FieldModel {
        FieldModel::parse(2, 1, "0.5*(v1_1^2 + v1_2^2) - q1^2").unwrap()
    }

    fn graph_samples(m: &FieldModel, count: usize, seed: u64) -> Vec<UnifiedPoint> {
        m.random_points(count, seed, 1.0)
            .iter()
            .map(|x| graph_point(m, x).unwrap())
            .collect()
    }

    #[test]
    fn coupling_and_hamiltonian() {
        let m = harmonic();
        let w = UnifiedPoint::new(vec![0.0], vec![vec![1.0, -1.0]], vec![vec![2.0], vec![3.0]]);
        assert_eq!(coupling(&m, &w).unwrap(), -1.0);
        let zero_v = UnifiedPoint::new(vec![0.3], vec![vec![0.0, 0.0]], vec![vec![2.0], vec![3.0]]);
        assert_eq!(coupling(&m, &zero_v).unwrap(), 0.0);
        let w = UnifiedPoint::new(vec![0.0], vec![vec![1.0, 1.0]], vec![vec![1.0], vec![1.0]]);
        assert_eq!(unified_hamiltonian(&m, &w).unwrap(), 1.0);
        let null = FieldModel::parse(2, 1, "0").unwrap();
        let w = UnifiedPoint::new(vec![0.7], vec![vec![0.5, 2.0]], vec![vec![3.0], vec![-1.0]]);
        assert_eq!(
            unified_hamiltonian(&null, &w).unwrap(),
            coupling(&null, &w).unwrap()
        );
    }

    #[test]
    fn hamiltonian_on_graph_is_energy() {
        let m = FieldModel::parse(
            2,
            2,
            "0.5*(1+q1^2)*(v1_1^2+v1_2^2) + q2*v1_1 - sin(q1*q2) + v2_1*v2_2",
        )
        .unwrap();
        for x in m.random_points(50, 3, 1.0) {
            let w = graph_point(&m, &x).unwrap();
            assert!((unified_hamiltonian(&m, &w).unwrap() - energy(&m, &x).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn off_graph_is_infeasible() {
        let m = harmonic();
        let w = UnifiedPoint::new(vec![0.1], vec![vec![1.0, 0.5]], vec![vec![1.5], vec![0.0]]);
        let s = sr_solve(&m, &w, 1e-10).unwrap();
        assert!(!s.feasible && s.z.is_none());
        assert_eq!(s.graph_residual, vec![0.5, -0.5]);
    }

    #[test]
    fn harmonic_sr_solution() {
        let m = harmonic();
        for w in graph_samples(&m, 20, 4) {
            let s = sr_solve(&m, &w, 1e-10).unwrap();
            assert!(s.feasible);
            assert_eq!(s.ansatz, Some(SrAnsatz::Symmetric));
            let z = s.z.unwrap();
            let q = w.q[0];
            // (Z_A)^1 = v_A exactly, (Z_A)^A_1 = -q
            assert_eq!(z[0][0], w.v[0][0]);
            assert_eq!(z[1][0], w.v[0][1]);
            assert!((z[0][3] + q).abs() < 1e-15 && (z[1][4] + q).abs() < 1e-15);
            assert!(s.tangency_residual < 1e-10);
            let r = unified_residual(&m, &z, &w).unwrap();
            assert!(max_abs(r) < 1e-12);
            // off-diagonal momentum rates and the split of the diagonal are free
            assert_eq!(s.gauge_dimension, 3);
        }
    }

    #[test]
    fn regular_model_sr_solution() {
        let m = FieldModel::parse(
            2,
            2,
            "0.5*(1+q1^2)*(v1_1^2+v1_2^2) + 0.5*(v2_1^2+v2_2^2) + q2*v1_1 - sin(q1*q2)",
        )
        .unwrap();
        for w in graph_samples(&m, 10, 5) {
            let s = sr_solve(&m, &w, 1e-9).unwrap();
            assert!(s.feasible);
            let z = s.z.unwrap();
            assert!(s.tangency_residual < 1e-9);
            // (s5) holds exactly by construction, (s4) exactly
            let r = unified_residual(&m, &z, &w).unwrap();
            assert!(max_abs(r) < 1e-12);
        }
    }

    #[test]
    fn null_lagrangian_on_zero_momenta() {
        let m = FieldModel::parse(2, 1, "0").unwrap();
        let w = UnifiedPoint::new(vec![0.2], vec![vec![0.3, -0.4]], vec![vec![0.0], vec![0.0]]);
        let s = sr_solve(&m, &w, 1e-12).unwrap();
        let z = s.z.unwrap();
        assert_eq!(z[0], vec![0.3, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(z[1], vec![-0.4, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn tangency_cases() {
        let free = FieldModel::parse(2, 1, "0.5*(v1_1^2 + v1_2^2)").unwrap();
        let w = UnifiedPoint::new(
            vec![0.2],
            vec![vec![0.3, -0.4]],
            vec![vec![0.3], vec![-0.4]],
        );
        let z = vec![
            vec![0.3, 0.0, 0.0, 0.0, 0.0],
            vec![-0.4, 0.0, 0.0, 0.0, 0.0],
        ];
        assert!(tangency_residual(&free, &z, &w)
            .unwrap()
            .iter()
            .all(|r| *r == 0.0));

        let m = harmonic();
        let w = graph_point(&m, &LagPoint::new(vec![0.5], vec![vec![0.1, 0.2]])).unwrap();
        let mut z = sr_solve(&m, &w, 1e-10).unwrap().z.unwrap();
        let before = tangency_residual(&m, &z, &w).unwrap();
        z[0][1] += 1.0;
        let after = tangency_residual(&m, &z, &w).unwrap();
        // (A, B, j) = (1, 1, 1) moves by the Hessian entry
        assert!((after[0] - before[0] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn graph_pullback_identity() {
        for (k, n, l) in [
            (2, 1, "0.5*(v1_1^2 + v1_2^2) - q1^2"),
            (2, 2, "v1_1*v2_2"),
            (2, 2, "0.5*(1+q1^2)*(v1_1^2+v1_2^2) + q2*v1_1 - sin(q1*q2)"),
        ] {
            let m = FieldModel::parse(k, n, l).unwrap();
            for (s, x) in m.random_points(20, 6, 1.0).iter().enumerate() {
                assert!(graph_pullback_check(&m, x, 10, s as u64).unwrap() < 1e-9);
            }
        }
    }

    #[test]
    fn lift_and_project() {
        let m = harmonic();
        let xl = sopde_field(&m, &Ansatz::Symmetric);
        let samples = m.random_points(20, 7, 1.0);
        let z = lift_from_lagrangian(&m, &xl, &samples).unwrap();
        let back = project_to_lagrangian(&m, &z, &samples, 1e-10).unwrap();
        for x in &samples {
            let xc = x.coords();
            let w = graph_flat(&m, &xc).unwrap();
            let zv = z.eval(&w).unwrap();
            assert!(max_abs(tangency_flat(&m, &zv, &w, true).unwrap()) < 1e-12);
            assert!(
                max_abs(
                    tangency_residual(&m, &zv, &UnifiedPoint::from_coords(1, 2, &w).unwrap())
                        .unwrap()
                ) < 1e-12
            );
            let a = xl.eval(&xc).unwrap();
            let b = back.eval(&xc).unwrap();
            assert!(
                max_abs(
                    a.iter()
                        .flatten()
                        .zip(b.iter().flatten())
                        .map(|(u, v)| u - v)
                ) < 1e-12
            );
            // both the lifted field and the sr_solve field satisfy the unified equation
            assert!(max_abs(unified_residual_flat(&m, &zv, &w).unwrap()) < 1e-12);
            assert!(max_abs(lag_geoeq_residual(&m, &back, x).unwrap()) < 1e-10);
        }
    }

    #[test]
    fn symbolic_lift_round_trip() {
        let m = FieldModel::parse(2, 1, "0.5*(v1_1^2 + v1_2^2)").unwrap();
        let e = |s: &str| crate::symcore::parse(s).unwrap();
        let xl = KVectorField::symbolic(
            Space::Lagrangian,
            1,
            2,
            vec![
                vec![e("v1_1"), e("0"), e("0")],
                vec![e("v1_2"), e("0"), e("0")],
            ],
        )
        .unwrap();
        let samples = m.random_points(5, 8, 1.0);
        let z = lift_from_lagrangian(&m, &xl, &samples).unwrap();
        let exprs = z.exprs().unwrap();
        assert_eq!(exprs[0][3], Expr::zero());
        assert_eq!(exprs[1][4], Expr::zero());
        let back = project_to_lagrangian(&m, &z, &samples, 1e-12).unwrap();
        assert_eq!(back.exprs().unwrap(), xl.exprs().unwrap());

        let not_sopde = KVectorField::zero(Space::Lagrangian, 1, 2);
        assert!(matches!(
            lift_from_lagrangian(&m, &not_sopde, &samples),
            Err(Error::NotSopde(_))
        ));
    }

    #[test]
    fn projection_rejects_non_tangent_fields() {
        let m = harmonic();
        let z = KVectorField::pointwise(Space::Unified, 1, 2, |w| {
            Ok(vec![
                vec![w[1], 0.0, 0.0, 5.0, 0.0],
                vec![w[2], 0.0, 0.0, 0.0, 0.0],
            ])
        });
        let samples = m.random_points(3, 9, 1.0);
        assert!(matches!(
            project_to_lagrangian(&m, &z, &samples, 1e-9),
            Err(Error::NotTangent(_))
        ));
    }

    #[test]
    fn projected_sr_field_matches_sopde_solution() {
        let m = harmonic();
        let model = m.clone();
        let z = field_from_fn(&m, move |w| {
            let p = UnifiedPoint::from_coords(1, 2, w)?;
            Ok(sr_solve(&model, &p, 1e-9)?.z.unwrap_or_default())
        });
        let samples = m.random_points(10, 10, 1.0);
        let xl = project_to_lagrangian(&m, &z, &samples, 1e-10).unwrap();
        for x in &samples {
            let s = sopde_solve(&m, x, &Ansatz::Symmetric).unwrap();
            let got = xl.eval(&x.coords()).unwrap();
            for a in 0..2 {
                for b in 0..2 {
                    assert!((got[a][1 + b] - s.accel[a][0][b]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn regular_harmonic_stabilizes_immediately() {
        let m = harmonic();
        let r = constraint_algorithm(
            &m,
            &graph_samples(&m, 10, 11),
            &ConstraintOptions::default(),
        )
        .unwrap();
        assert!(r.stabilized && r.all_consistent);
        assert_eq!(r.final_level, 0);
        assert_eq!(r.final_constraints, vec!["p1_1 - v1_1", "p2_1 - v1_2"]);
    }

    #[test]
    fn half_v_squared_hand_analysis() {
        let m = FieldModel::parse(2, 1, "0.5*v1_1^2").unwrap();
        let r = constraint_algorithm(&m, &graph_samples(&m, 8, 12), &ConstraintOptions::default())
            .unwrap();
        assert!(r.stabilized && r.all_consistent);
        assert_eq!(r.final_level, 0);
        assert_eq!(r.final_constraints, vec!["p1_1 - v1_1", "p2_1"]);
        let l0 = &r.levels[0];
        assert_eq!((l0.equations, l0.unknowns), (7, 10));
        assert!(l0.system_ranks.iter().all(|r| *r == 7));
        assert!(l0.jacobian_ranks.iter().all(|r| *r == 2));
        // (Z_1)^{p1_1} = 0 and hence (Z_1)^{v1_1} = 0
        for coord in ["p1_1", "v1_1"] {
            let d = l0
                .determined
                .iter()
                .find(|d| d.field == 1 && d.coordinate == coord)
                .unwrap();
            assert!(d.value.abs() < 1e-12);
        }
    }

    #[test]
    fn affine_models() {
        let m = FieldModel::parse(2, 1, "v1_1").unwrap();
        let r = constraint_algorithm(&m, &graph_samples(&m, 8, 13), &ConstraintOptions::default())
            .unwrap();
        assert!(r.stabilized);
        assert_eq!(r.final_level, 0);
        assert_eq!(r.final_constraints, vec!["p1_1 - 1", "p2_1"]);
        // momentum-split row is implied by the tangency rows
        assert!(r.levels[0].system_ranks.iter().all(|r| *r == 6));

        let m = FieldModel::parse(1, 1, "q1*v1_1").unwrap();
        let r = constraint_algorithm(&m, &graph_samples(&m, 8, 14), &ConstraintOptions::default())
            .unwrap();
        assert!(r.stabilized && r.all_consistent);
        assert_eq!(r.final_level, 0);
        assert_eq!(r.final_constraints, vec!["p1_1 - q1"]);
    }

    #[test]
    fn secondary_constraints_appear() {
        let m = FieldModel::parse(1, 2, "0.5*v1_1^2 - 0.5*q2^2").unwrap();
        let r = constraint_algorithm(&m, &graph_samples(&m, 6, 15), &ConstraintOptions::default())
            .unwrap();
        assert!(r.stabilized && r.all_consistent);
        assert_eq!(r.final_level, 2);
        assert_eq!(r.levels[0].new_constraints.len(), 1);
        assert_eq!(r.levels[1].new_constraints.len(), 1);
        let cs = ConstraintSet::new(Space::Unified, 2, 1, r.final_exprs.clone()).unwrap();
        for w in &r.final_samples {
            let c = w.coords();
            assert!(cs.violation(&c).unwrap() < 1e-9);
            assert!(w.q[1].abs() < 1e-9 && w.v[1][0].abs() < 1e-9);
        }
    }

    #[test]
    fn off_graph_samples_rejected() {
        let m = harmonic();
        let w = UnifiedPoint::new(vec![0.0], vec![vec![1.0, 0.0]], vec![vec![0.0], vec![0.0]]);
        assert!(constraint_algorithm(&m, &[w], &ConstraintOptions::default()).is_err());
        assert!(constraint_algorithm(&m, &[], &ConstraintOptions::default()).is_err());
    }
}
