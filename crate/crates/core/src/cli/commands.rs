use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::model_file::{parse_numbers, ModelFile};
use super::{CliError, Format};
use crate::geometry::{
    is_regular, lagrangian_two_forms, pullback_check, FieldModel, LagPoint, REGULARITY_TOL,
};
use crate::integrate::{
    holonomy_check, integrate_section, path_independence, Grid, IntegrateOptions, Section,
};
use crate::koperator::{default_k, verify_k};
use crate::lagside::sopde_field;
use crate::linalg::max_abs;
use crate::symcore::{q_name, simplify, t_name, v_name, Expr};
use crate::unified::{constraint_algorithm, graph_point, ConstraintOptions};
use crate::verify::{equivalence_report, model_hash, singular_report, VerifyOptions};
use crate::{json, Error};

/// Text for stdout and the exit status.
pub struct Outcome {
    pub stdout: String,
    pub code: i32,
}

impl Outcome {
    fn new(stdout: String, pass: bool) -> Outcome {
        Outcome {
            stdout,
            code: if pass { 0 } else { 1 },
        }
    }
}

fn load(path: &Path) -> Result<ModelFile, CliError> {
    ModelFile::load(path).map_err(|e| CliError::Usage(e.to_string()))
}

fn usage(e: Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn join_terms(terms: &[Expr]) -> String {
    let mut out = String::new();
    for (idx, t) in terms.iter().enumerate() {
        match (idx, t) {
            (0, Expr::Neg(inner)) => write!(out, "-{}", inner.compact()),
            (0, t) => write!(out, "{}", t.compact()),
            (_, Expr::Neg(inner)) => write!(out, " - {}", inner.compact()),
            (_, t) => write!(out, " + {}", t.compact()),
        }
        .expect("writing to a String");
    }
    if out.is_empty() {
        out.push('0');
    }
    out
}

/// `Σ_A d/dt^A(∂L/∂v^i_A) - ∂L/∂q^i = 0` per field.
pub fn el_lines(m: &FieldModel) -> Vec<String> {
    (0..m.n())
        .map(|i| {
            let mut terms = Vec::new();
            let mut text = String::new();
            for a in 0..m.k() {
                let p = m.dl_dv_expr(i, a);
                // constant momenta have vanishing divergence
                if p.as_const().is_none() {
                    if !text.is_empty() {
                        text.push_str(" + ");
                    }
                    write!(text, "d/d{}({})", t_name(a), p.compact()).expect("writing to a String");
                }
            }
            let force = simplify(&-m.dl_dq_expr(i).clone());
            if !force.is_zero() {
                terms.push(force);
            }
            let rest = join_terms(&terms);
            let body = match (text.is_empty(), terms.is_empty()) {
                (true, _) => rest,
                (false, true) => text,
                (false, false) if rest.starts_with('-') => format!("{text} - {}", &rest[1..]),
                (false, false) => format!("{text} + {rest}"),
            };
            format!("EL[{}]: {body} = 0", i + 1)
        })
        .collect()
}

pub fn derive(path: &Path) -> Result<Outcome, CliError> {
    let f = load(path)?;
    let m = &f.model;
    let (n, k) = (m.n(), m.k());
    let mut out = String::new();
    let w = &mut out;
    let line = |w: &mut String, s: String| {
        w.push_str(&s);
        w.push('\n');
    };
    line(w, format!("model: k = {k}, n = {n}"));
    line(w, format!("L = {}", m.lagrangian().compact()));
    for l in el_lines(m) {
        line(w, l);
    }
    for a in 0..k {
        for i in 0..n {
            line(
                w,
                format!(
                    "FL: {} = {}",
                    crate::symcore::p_name(a, i),
                    m.dl_dv_expr(i, a).compact()
                ),
            );
        }
    }
    line(w, format!("E_L = {}", m.energy_expr().compact()));
    let vs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..k).map(move |a| (i, a))).collect();
    for &(i, a) in &vs {
        let row: Vec<String> = vs
            .iter()
            .map(|&(j, b)| m.d2_vv_expr(i, a, j, b).compact().to_string())
            .collect();
        line(w, format!("Hessian[{}]: {}", v_name(i, a), row.join(", ")));
    }
    for a in 0..k {
        let terms: Vec<String> = (0..n)
            .filter(|i| !m.dl_dv_expr(*i, a).is_zero())
            .map(|i| format!("({}) d{}", m.dl_dv_expr(i, a).compact(), q_name(i)))
            .collect();
        let body = if terms.is_empty() {
            "0".to_string()
        } else {
            terms.join(" + ")
        };
        line(w, format!("theta_L[{}] = {body}", a + 1));
    }
    let forms = lagrangian_two_forms(m);
    for a in 0..k {
        let mut any = false;
        for r in 0..forms.dim() {
            for c in r + 1..forms.dim() {
                let e = forms.forms[a].entry(r, c);
                if !e.is_zero() {
                    any = true;
                    line(
                        w,
                        format!(
                            "omega_L[{}]: d{} ^ d{} : {}",
                            a + 1,
                            forms.coordinates[r],
                            forms.coordinates[c],
                            e.compact()
                        ),
                    );
                }
            }
        }
        if !any {
            line(w, format!("omega_L[{}] = 0", a + 1));
        }
    }
    Ok(Outcome::new(out, true))
}

#[derive(Serialize)]
struct KSummary {
    kl_residual: f64,
    second_order_residual: f64,
    field_equation_residual: f64,
    pass: bool,
}

#[derive(Serialize)]
struct CheckReport {
    model_hash: String,
    samples: usize,
    seed: u64,
    tolerance: f64,
    regular: bool,
    hessian_rank_min: usize,
    hessian_rank_max: usize,
    min_abs_determinant: f64,
    pullback_max_residual: f64,
    pullback_pass: bool,
    field_operator: KSummary,
    pass: bool,
}

pub fn check(path: &Path, samples: usize, seed: u64, tol: f64) -> Result<Outcome, CliError> {
    if samples == 0 {
        return Err(CliError::Usage("--samples must be at least 1".into()));
    }
    let f = load(path)?;
    let m = &f.model;
    let points = m.random_points(samples, seed, 1.0);
    let reg = is_regular(m, &points, REGULARITY_TOL).map_err(usage)?;
    let mut pullback = 0.0_f64;
    for x in &points {
        pullback = pullback.max(max_abs(pullback_check(m, x).map_err(usage)?));
    }
    let kc = verify_k(m, &default_k(m), &points, tol).map_err(usage)?;
    let k_pass = kc.all_pass() && kc.kl_residual <= tol;
    let report = CheckReport {
        model_hash: model_hash(m),
        samples,
        seed,
        tolerance: tol,
        regular: reg.regular,
        hessian_rank_min: reg.ranks.iter().copied().min().unwrap_or(0),
        hessian_rank_max: reg.ranks.iter().copied().max().unwrap_or(0),
        min_abs_determinant: reg
            .determinants
            .iter()
            .fold(f64::INFINITY, |a, d| a.min(d.abs())),
        pullback_max_residual: pullback,
        pullback_pass: pullback <= tol,
        field_operator: KSummary {
            kl_residual: kc.kl_residual,
            second_order_residual: kc.second_order_residual,
            field_equation_residual: kc.max_field_eq(),
            pass: k_pass,
        },
        pass: pullback <= tol && k_pass,
    };
    let pass = report.pass;
    Ok(Outcome::new(json::to_string(&report).map_err(usage)?, pass))
}

/// Initial point from `--q`/`--v`, else the first sample of the file.
fn initial_point(f: &ModelFile, q: Option<&str>, v: Option<&str>) -> Result<LagPoint, CliError> {
    let (n, k) = (f.model.n(), f.model.k());
    match (q, v) {
        (None, None) => f.samples.first().map(|(_, x)| x.clone()).ok_or_else(|| {
            CliError::Usage(
                "no initial point: pass --q and --v or add a sample to the model file".into(),
            )
        }),
        (q, v) => {
            let q = match q {
                Some(s) => parse_numbers(s).map_err(CliError::Usage)?,
                None => vec![0.0; n],
            };
            let v = match v {
                Some(s) => parse_numbers(s).map_err(CliError::Usage)?,
                None => vec![0.0; n * k],
            };
            let mut coords = q;
            coords.extend(v);
            LagPoint::from_coords(n, k, &coords).map_err(|_| {
                CliError::Usage(format!(
                    "--q needs {n} values and --v needs {} values (v1_1, v1_2, ..)",
                    n * k
                ))
            })
        }
    }
}

fn grid_for(f: &ModelFile, grid: Option<&str>) -> Result<Grid, CliError> {
    let text = grid.or(f.grid.as_deref()).ok_or_else(|| {
        CliError::Usage("no grid: pass --grid or add a grid to the model file".into())
    })?;
    Grid::parse(text, f.model.k()).map_err(usage)
}

pub struct IntegrateArgs<'a> {
    pub q: Option<&'a str>,
    pub v: Option<&'a str>,
    pub grid: Option<&'a str>,
    pub substeps: usize,
    pub out: Option<&'a Path>,
    pub format: Option<Format>,
}

fn section_json(s: &Section) -> Result<String, CliError> {
    json::to_string(&s.to_json_value()).map_err(usage)
}

pub fn integrate(path: &Path, args: &IntegrateArgs<'_>) -> Result<Outcome, CliError> {
    if args.substeps == 0 {
        return Err(CliError::Usage("--substeps must be at least 1".into()));
    }
    let f = load(path)?;
    let m = &f.model;
    let x0 = initial_point(&f, args.q, args.v)?;
    let grid = grid_for(&f, args.grid)?;
    let opts = IntegrateOptions {
        substeps: args.substeps,
        ..IntegrateOptions::default()
    };
    let xl = sopde_field(m, &f.ansatz);
    let mut section = integrate_section(&xl, &x0, &grid, &opts).map_err(usage)?;
    let complete = section.is_complete();
    if complete {
        let fd = section.clone().with_finite_differences();
        let holonomy = holonomy_check(&fd, f64::INFINITY)
            .map_err(usage)?
            .max_violation;
        section
            .metadata
            .insert("holonomy_max_violation".into(), holonomy);
        let pi = path_independence(&xl, &x0.coords(), &grid, &opts).map_err(usage)?;
        section.metadata.insert("path_independence".into(), pi);
        if let Some(exact) = &f.exact {
            let phi = Section::new(
                grid.clone(),
                crate::geometry::Space::Configuration,
                m.n(),
                m.k(),
                section.values.iter().map(|x| x[..m.n()].to_vec()).collect(),
            )
            .map_err(usage)?;
            let err = phi.max_error_against(exact).map_err(usage)?;
            section.metadata.insert("max_error_exact".into(), err);
        }
    }
    let stdout = match args.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)
                .map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;
            let mut written = String::new();
            let write = |name: &str, body: String, written: &mut String| -> Result<(), CliError> {
                let p = dir.join(name);
                std::fs::write(&p, body)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                writeln!(written, "{}", p.display()).expect("writing to a String");
                Ok(())
            };
            if args.format != Some(Format::Json) {
                write("section.csv", section.to_csv(), &mut written)?;
            }
            if args.format != Some(Format::Csv) {
                write("section.json", section_json(&section)?, &mut written)?;
            }
            written
        }
        None => match args.format {
            Some(Format::Csv) => section.to_csv(),
            _ => section_json(&section)?,
        },
    };
    Ok(Outcome::new(stdout, complete))
}

pub struct VerifyArgs<'a> {
    pub q: Option<&'a str>,
    pub v: Option<&'a str>,
    pub grid: Option<&'a str>,
    pub samples: usize,
    pub seed: u64,
    pub tol: f64,
}

pub fn verify(path: &Path, args: &VerifyArgs<'_>) -> Result<Outcome, CliError> {
    let f = load(path)?;
    let m = &f.model;
    let x0 = initial_point(&f, args.q, args.v)?;
    let regular = is_regular(m, std::slice::from_ref(&x0), REGULARITY_TOL).map_err(usage)?;
    if regular.regular {
        let grid = grid_for(&f, args.grid)?;
        let opts = VerifyOptions {
            ansatz: f.ansatz.clone(),
            hamiltonian: f.hamiltonian.clone(),
            samples: args.samples,
            seed: args.seed,
            exact: f.exact.clone(),
            integrate: IntegrateOptions::default(),
        };
        let report = equivalence_report(m, &x0, &grid, &opts).map_err(usage)?;
        return Ok(Outcome::new(
            json::to_string(&report).map_err(usage)?,
            report.pass,
        ));
    }
    let h0 = f.h0.clone().ok_or_else(|| {
        CliError::Usage("singular model: the model file needs h0 and its constraints".into())
    })?;
    let samples: Vec<LagPoint> = if f.samples.is_empty() {
        m.random_points(args.samples.max(1), args.seed, 1.0)
    } else {
        f.samples.iter().map(|(_, x)| x.clone()).collect()
    };
    let report = singular_report(m, &samples, &f.constraints, &h0, args.tol).map_err(usage)?;
    let pass = report.constraints.stabilized
        && report.structural
        && report.field_equation
        && report.second_order;
    Ok(Outcome::new(json::to_string(&report).map_err(usage)?, pass))
}

pub fn constraints(path: &Path, samples: usize, seed: u64, tol: f64) -> Result<Outcome, CliError> {
    let f = load(path)?;
    let m = &f.model;
    let points: Vec<LagPoint> = if f.samples.is_empty() {
        if samples == 0 {
            return Err(CliError::Usage("--samples must be at least 1".into()));
        }
        m.random_points(samples, seed, 1.0)
    } else {
        f.samples.iter().map(|(_, x)| x.clone()).collect()
    };
    let lifts = points
        .iter()
        .map(|x| graph_point(m, x))
        .collect::<Result<Vec<_>, _>>()
        .map_err(usage)?;
    let report = constraint_algorithm(
        m,
        &lifts,
        &ConstraintOptions {
            tol,
            ..ConstraintOptions::default()
        },
    )
    .map_err(usage)?;
    let pass = report.stabilized && report.all_consistent;
    Ok(Outcome::new(json::to_string(&report).map_err(usage)?, pass))
}
