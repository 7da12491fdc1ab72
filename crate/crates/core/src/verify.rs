//! End-to-end reports: the equivalence chain between the Lagrangian,
//! Hamiltonian, unified and field-operator descriptions on a regular model,
//! and the constrained pathway for singular ones.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{energy, is_regular, legendre, ConstraintSet, FieldModel, LagPoint, Space};
use crate::hamside::{
    ham_geoeq_residual, hamiltonian_field, hdw_residual, restricted_solve, Hamiltonian,
};
use crate::integrate::{
    holonomy_check, integrate_section, path_independence, pushforward_section, Grid,
    IntegrateOptions, Section,
};
use crate::koperator::{
    default_k, k_from_hamiltonian, k_from_sopde, k_integral_residual, verify_k, KCheck,
};
use crate::kvector::KVectorField;
use crate::lagside::{el_residual, lag_geoeq_residual, sopde_field, sopde_solve, Ansatz};
use crate::linalg::max_abs;
use crate::symcore::Expr;
use crate::unified::{
    constraint_algorithm, graph_flat, graph_point, lift_from_lagrangian, tangency_residual,
    unified_residual, ConstraintOptions, ConstraintReport,
};

/// Tolerance for stages limited by integration and finite differences.
pub const INTEGRATION_TOL: f64 = 1e-5;
/// Tolerance for pointwise algebraic identities.
pub const ALGEBRAIC_TOL: f64 = 1e-9;

/// Hex SHA-256 of `k=..;n=..;L=..` with the Lagrangian as printed.
pub fn model_hash(m: &FieldModel) -> String {
    let text = format!("k={};n={};L={}", m.k(), m.n(), m.lagrangian());
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stage {
    pub name: String,
    /// Which identity the stage certifies.
    pub claim: String,
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub model_hash: String,
    pub stages: Vec<Stage>,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub ansatz: Ansatz,
    /// Explicit Hamiltonian for the field-equation stages; `E_L ∘ FL⁻¹`
    /// through Newton inversion when absent.
    pub hamiltonian: Option<Expr>,
    pub samples: usize,
    pub seed: u64,
    /// Closed-form configuration section in `t1..tk` to compare against.
    pub exact: Option<Vec<Expr>>,
    pub integrate: IntegrateOptions,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            ansatz: Ansatz::Symmetric,
            hamiltonian: None,
            samples: 100,
            seed: 0,
            exact: None,
            integrate: IntegrateOptions::default(),
        }
    }
}

/// `q`-part of a section of `T¹ₖQ`, with finite-difference derivatives.
fn base_section(psi: &Section) -> Result<Section> {
    let values = psi.values.iter().map(|x| x[..psi.n].to_vec()).collect();
    let mut phi = Section::new(psi.grid.clone(), Space::Configuration, psi.n, psi.k, values)?;
    phi.valid = psi.valid.clone();
    Ok(phi.with_finite_differences())
}

struct Runner {
    stages: Vec<Stage>,
    failed: bool,
}

impl Runner {
    fn stage(&mut self, name: &str, claim: &str, tolerance: f64, f: impl FnOnce() -> Result<f64>) {
        if self.failed {
            return;
        }
        let (max_residual, error) = match f() {
            Ok(r) => (r, None),
            Err(e) => (f64::NAN, Some(e.to_string())),
        };
        let pass = error.is_none() && max_residual <= tolerance;
        self.failed |= error.is_some();
        self.stages.push(Stage {
            name: name.into(),
            claim: claim.into(),
            max_residual,
            tolerance,
            pass,
            error,
        });
    }
}

/// Runs the full chain from a SOPDE solution through its integral section
/// at `x0`. A stage that errors is recorded as failed and ends the run.
pub fn equivalence_report(
    m: &FieldModel,
    x0: &LagPoint,
    grid: &Grid,
    opts: &VerifyOptions,
) -> Result<EquivalenceReport> {
    let regular = is_regular(m, std::slice::from_ref(x0), crate::geometry::REGULARITY_TOL)?;
    if !regular.regular {
        return Err(Error::WrongPathway(
            "the Lagrangian is not regular at the initial point; use the constraint pathway".into(),
        ));
    }
    let mut samples = vec![x0.clone()];
    samples.extend(m.random_points(opts.samples, opts.seed, 1.0));
    let xl = sopde_field(m, &opts.ansatz);
    let h = match &opts.hamiltonian {
        Some(e) => Hamiltonian::explicit(m.n(), m.k(), e.clone())?,
        None => Hamiltonian::implicit(m),
    };
    // the implicit Hamiltonian differentiates numerically
    let ham_tol = if opts.hamiltonian.is_some() {
        ALGEBRAIC_TOL
    } else {
        1e-6
    };
    let mut run = Runner {
        stages: Vec::new(),
        failed: false,
    };

    run.stage(
        "sopde_geometric_equation",
        "lagrangian-geometric-equation",
        ALGEBRAIC_TOL,
        || {
            let worst = samples
                .par_iter()
                .map(|x| {
                    let s = sopde_solve(m, x, &opts.ansatz)?;
                    if !s.consistent {
                        return Err(Error::Invalid(format!(
                            "no SOPDE solution within the ansatz (residual {:e})",
                            s.residual
                        )));
                    }
                    Ok(max_abs(lag_geoeq_residual(m, &xl, x)?))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(max_abs(worst))
        },
    );

    let mut psi: Option<Section> = None;
    run.stage(
        "integration_path_independence",
        "integrability",
        INTEGRATION_TOL,
        || {
            let section = integrate_section(&xl, x0, grid, &opts.integrate)?;
            if !section.is_complete() {
                return Err(Error::Invalid(section.diagnostics.join("; ")));
            }
            psi = Some(section.with_finite_differences());
            path_independence(&xl, &x0.coords(), grid, &opts.integrate)
        },
    );
    // later stages only run when integration succeeded
    let psi = psi.unwrap_or_else(|| empty_section(grid));

    run.stage(
        "holonomy",
        "integral-section-is-prolongation",
        INTEGRATION_TOL,
        || Ok(holonomy_check(&psi, INTEGRATION_TOL)?.max_violation),
    );
    if let Some(exact) = &opts.exact {
        run.stage(
            "exact_solution",
            "closed-form-solution",
            INTEGRATION_TOL,
            || base_section(&psi)?.max_error_against(exact),
        );
    }
    run.stage(
        "euler_lagrange",
        "euler-lagrange-equations",
        INTEGRATION_TOL,
        || {
            let phi = base_section(&psi)?;
            let r = el_residual(m, &phi)?;
            Ok(phi.max_over(&r, phi.margin(2)))
        },
    );
    run.stage(
        "hdw",
        "hamilton-de-donder-weyl-equations",
        INTEGRATION_TOL,
        || {
            let image = pushforward_section(m, &psi)?;
            let r = hdw_residual(&h, &image)?;
            Ok(image.max_over(&r, image.margin(1)))
        },
    );
    run.stage("fl_related", "legendre-related-fields", ham_tol, || {
        let xh = hamiltonian_field(m, &xl);
        let worst = samples
            .par_iter()
            .map(|x| Ok(max_abs(ham_geoeq_residual(&h, &xh, &legendre(m, x)?)?)))
            .collect::<Result<Vec<f64>>>()?;
        Ok(max_abs(worst))
    });
    let mut z: Option<KVectorField> = None;
    run.stage(
        "unified_tangency",
        "unified-field-tangent-to-graph",
        ALGEBRAIC_TOL,
        || {
            let lifted = lift_from_lagrangian(m, &xl, &samples)?;
            let r = along_graph(m, &psi, |w| {
                let zv = lifted.eval(&w.coords())?;
                Ok(max_abs(tangency_residual(m, &zv, w)?))
            })?;
            z = Some(lifted);
            Ok(r)
        },
    );
    run.stage(
        "unified_equation",
        "unified-equation",
        ALGEBRAIC_TOL,
        || {
            let lifted = z
                .as_ref()
                .ok_or_else(|| Error::Invalid("no unified field".into()))?;
            along_graph(m, &psi, |w| {
                Ok(max_abs(unified_residual(m, &lifted.eval(&w.coords())?, w)?))
            })
        },
    );
    let mut k_op = None;
    run.stage(
        "field_operator_conditions",
        "field-operator-conditions",
        ALGEBRAIC_TOL,
        || {
            let op = k_from_sopde(m, &xl)?;
            let check = verify_k(m, &op, &samples, ALGEBRAIC_TOL)?;
            k_op = Some(op);
            Ok(check.max_field_eq().max(check.second_order_residual))
        },
    );
    run.stage(
        "field_operator_integral_section",
        "field-operator-integral-section",
        INTEGRATION_TOL,
        || {
            let op = k_op
                .as_ref()
                .ok_or_else(|| Error::Invalid("no field operator".into()))?;
            let r = k_integral_residual(m, op, &psi)?;
            Ok(psi.max_over(&r, psi.margin(1)))
        },
    );
    if m.k() == 1 {
        let mechanics = default_k(m);
        run.stage(
            "mechanics_tangent_legendre",
            "mechanics-operator-from-lagrangian-field",
            ALGEBRAIC_TOL,
            || {
                coefficient_gap(m, &samples, &mechanics, |xc| {
                    let j = m.fl_jacobian_flat(xc)?;
                    Ok(xl
                        .eval(xc)?
                        .into_iter()
                        .map(|xa| (&j * DVector::from_vec(xa)).iter().copied().collect())
                        .collect())
                })
            },
        );
        run.stage(
            "mechanics_hamiltonian_field",
            "mechanics-operator-from-hamiltonian-field",
            ALGEBRAIC_TOL,
            || {
                let xh = hamiltonian_field(m, &xl);
                coefficient_gap(m, &samples, &mechanics, |xc| xh.eval(&m.legendre_flat(xc)?))
            },
        );
    }
    let first_failure = run.stages.iter().find(|s| !s.pass).map(|s| s.name.clone());
    Ok(EquivalenceReport {
        model_hash: model_hash(m),
        pass: first_failure.is_none(),
        first_failure,
        stages: run.stages,
    })
}

fn empty_section(grid: &Grid) -> Section {
    Section {
        grid: grid.clone(),
        space: Space::Lagrangian,
        n: 0,
        k: grid.k(),
        values: Vec::new(),
        first: None,
        second: None,
        source: crate::integrate::DerivativeSource::FiniteDifference,
        valid: Vec::new(),
        diagnostics: Vec::new(),
        metadata: Default::default(),
    }
}

/// Max of `f` over the graph images of the valid interior nodes of `psi`.
fn along_graph(
    m: &FieldModel,
    psi: &Section,
    f: impl Fn(&crate::geometry::UnifiedPoint) -> Result<f64> + Sync,
) -> Result<f64> {
    let nodes = psi.interior(0);
    let worst = nodes
        .par_iter()
        .filter(|node| psi.valid[**node])
        .map(|node| {
            let w = graph_flat(m, &psi.values[*node])?;
            f(&crate::geometry::UnifiedPoint::from_coords(
                m.n(),
                m.k(),
                &w,
            )?)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(max_abs(worst))
}

fn coefficient_gap(
    m: &FieldModel,
    samples: &[LagPoint],
    reference: &crate::koperator::FieldOperatorK,
    f: impl Fn(&[f64]) -> Result<Vec<Vec<f64>>> + Sync,
) -> Result<f64> {
    let worst = samples
        .par_iter()
        .map(|x| {
            let xc = m.lag_coords_of(x)?;
            let a = f(&xc)?;
            let b = reference.eval(&xc)?;
            Ok(max_abs(
                a.iter()
                    .flatten()
                    .zip(b.iter().flatten())
                    .map(|(u, v)| u - v),
            ))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(max_abs(worst))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingularReport {
    pub model_hash: String,
    pub constraints: ConstraintReport,
    /// Largest least-squares residual of the restricted Hamiltonian equation.
    pub hamiltonian_solve_residual: f64,
    /// `max |H₀(FL(x)) - E_L(x)|` over the samples.
    pub energy_match: f64,
    pub field_operator: KCheck,
    pub structural: bool,
    pub field_equation: bool,
    pub second_order: bool,
}

/// Constrained pathway for singular models: the constraint algorithm on the
/// graph lifts of `samples`, then `X₀` solving the Hamiltonian equation on
/// the primary constraints `ham_constraints` with Hamiltonian `h0`, and the
/// induced field operator `X₀ ∘ FL`.
pub fn singular_report(
    m: &FieldModel,
    samples: &[LagPoint],
    ham_constraints: &[Expr],
    h0: &Expr,
    tol: f64,
) -> Result<SingularReport> {
    if samples.is_empty() {
        return Err(Error::Precondition("singular report needs samples".into()));
    }
    if is_regular(m, samples, crate::geometry::REGULARITY_TOL)?.regular {
        return Err(Error::WrongPathway(
            "the Lagrangian is regular at every sample; use the equivalence report".into(),
        ));
    }
    let lifts: Vec<_> = samples
        .iter()
        .map(|x| graph_point(m, x))
        .collect::<Result<_>>()?;
    let constraints = constraint_algorithm(
        m,
        &lifts,
        &ConstraintOptions {
            tol,
            ..ConstraintOptions::default()
        },
    )?;
    let cs = ConstraintSet::new(Space::Hamiltonian, m.n(), m.k(), ham_constraints.to_vec())?;
    let h = Hamiltonian::explicit(m.n(), m.k(), h0.clone())?;
    let mut solve_residual = 0.0_f64;
    let mut energy_match = 0.0_f64;
    for x in samples {
        let y = legendre(m, x)?.coords();
        let v = cs.violation(&y)?;
        if v > tol {
            return Err(Error::Precondition(format!(
                "the image of a sample violates the Hamiltonian constraints by {v:e}"
            )));
        }
        solve_residual = solve_residual.max(restricted_solve(&cs, &h, &y)?.1);
        energy_match = energy_match.max((h.value(&y)? - energy(m, x)?).abs());
    }
    let x0 = {
        let (cs, h) = (cs.clone(), h.clone());
        KVectorField::pointwise(Space::Hamiltonian, m.n(), m.k(), move |y| {
            Ok(restricted_solve(&cs, &h, y)?.0)
        })
    };
    let field_operator = verify_k(m, &k_from_hamiltonian(m, &x0)?, samples, tol)?;
    Ok(SingularReport {
        model_hash: model_hash(m),
        constraints,
        hamiltonian_solve_residual: solve_residual,
        energy_match,
        structural: field_operator.structural,
        field_equation: field_operator.field_eq,
        second_order: field_operator.second_order,
        field_operator,
    })
}
