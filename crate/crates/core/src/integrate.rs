//! Integral sections on rectangular parameter grids: leg-composition
//! integration of k-vector fields, finite-difference derivative data,
//! prolongation, holonomy and path-independence diagnostics, and export.
//!
//! Nodes are stored in row-major order with `t1` the slowest axis.
//!
//! Finite-difference derivatives use the five-point central stencil at nodes
//! at least two steps from an edge, the three-point central stencil one step
//! from an edge and the three-point one-sided stencil on the edge. Second
//! derivatives are the first-derivative operator applied twice, so residuals
//! built from first derivatives are fourth-order accurate at interior margin
//! 2 and those built from second derivatives at margin 4.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::geometry::{FieldModel, LagPoint, Space};
use crate::kvector::{sopde_violation, KVectorField};
use crate::symcore::{diff, t_name, Compiled, Expr};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Axis {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Axis {
    pub fn new(start: f64, stop: f64, step: f64) -> Result<Axis> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::Invalid(format!(
                "grid step must be positive, got {step}"
            )));
        }
        if !start.is_finite() || !stop.is_finite() || stop < start {
            return Err(Error::Invalid(format!(
                "grid interval [{start}, {stop}] is empty"
            )));
        }
        let cells = (stop - start) / step;
        if (cells - cells.round()).abs() > 1e-6 {
            return Err(Error::Invalid(format!(
                "step {step} does not divide [{start}, {stop}]"
            )));
        }
        Ok(Axis { start, stop, step })
    }

    pub fn count(&self) -> usize {
        ((self.stop - self.start) / self.step).round() as usize + 1
    }

    pub fn value(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    /// Index of the node at `t = 0`, if there is one.
    pub fn origin(&self) -> Option<usize> {
        let i = -self.start / self.step;
        let r = i.round();
        ((i - r).abs() < 1e-6 && r >= 0.0 && (r as usize) < self.count()).then_some(r as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    pub axes: Vec<Axis>,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Grid> {
        if axes.is_empty() {
            return Err(Error::Invalid("grid needs at least one axis".into()));
        }
        Ok(Grid { axes })
    }

    /// The same `[start, stop]` with the given step on each of `k` axes.
    pub fn uniform(k: usize, start: f64, stop: f64, step: f64) -> Result<Grid> {
        Grid::new(vec![Axis::new(start, stop, step)?; k])
    }

    /// Parses `t1=0:1:0.01,t2=0:1:0.01`. Every axis `t1..tk` must appear once.
    pub fn parse(text: &str, k: usize) -> Result<Grid> {
        let mut axes: Vec<Option<Axis>> = vec![None; k];
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, spec) = part
                .split_once('=')
                .ok_or_else(|| Error::Invalid(format!("grid entry {part:?} lacks '='")))?;
            let a = (0..k)
                .find(|a| t_name(*a) == name.trim())
                .ok_or_else(|| Error::Invalid(format!("unknown grid axis {name:?}")))?;
            let nums: Vec<f64> = spec
                .split(':')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| Error::Invalid(format!("bad grid range {spec:?}")))?;
            let [start, stop, step] = nums[..] else {
                return Err(Error::Invalid(format!(
                    "grid range {spec:?} is not start:stop:step"
                )));
            };
            if axes[a].replace(Axis::new(start, stop, step)?).is_some() {
                return Err(Error::Invalid(format!("grid axis {name} given twice")));
            }
        }
        let axes = axes
            .into_iter()
            .enumerate()
            .map(|(a, ax)| {
                ax.ok_or_else(|| Error::Invalid(format!("grid lacks axis {}", t_name(a))))
            })
            .collect::<Result<_>>()?;
        Grid::new(axes)
    }

    pub fn k(&self) -> usize {
        self.axes.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Axis::count).collect()
    }

    pub fn len(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn strides(&self) -> Vec<usize> {
        let shape = self.shape();
        let mut strides = vec![1; shape.len()];
        for a in (0..shape.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * shape[a + 1];
        }
        strides
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        self.strides()
            .iter()
            .zip(self.shape())
            .map(|(s, c)| (node / s) % c)
            .collect()
    }

    pub fn node(&self, idx: &[usize]) -> usize {
        idx.iter().zip(self.strides()).map(|(i, s)| i * s).sum()
    }

    pub fn t(&self, node: usize) -> Vec<f64> {
        self.multi_index(node)
            .iter()
            .zip(&self.axes)
            .map(|(i, ax)| ax.value(*i))
            .collect()
    }

    pub fn origin(&self) -> Result<Vec<usize>> {
        self.axes
            .iter()
            .enumerate()
            .map(|(a, ax)| {
                ax.origin().ok_or_else(|| {
                    Error::Precondition(format!("grid axis {} misses t = 0", t_name(a)))
                })
            })
            .collect()
    }

    /// Nodes at least `margin` steps from every edge.
    pub fn interior(&self, margin: usize) -> Vec<usize> {
        let shape = self.shape();
        (0..self.len())
            .filter(|node| {
                self.multi_index(*node)
                    .iter()
                    .zip(&shape)
                    .all(|(i, c)| *i >= margin && i + margin < *c)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeSource {
    Analytic,
    FiniteDifference,
}

/// Values of a map from a parameter grid into a phase space, with optional
/// derivative data. Invalid (truncated) nodes hold NaN.
#[derive(Debug, Clone)]
pub struct Section {
    pub grid: Grid,
    pub space: Space,
    pub n: usize,
    pub k: usize,
    pub values: Vec<Vec<f64>>,
    /// `first[node][a]` is `∂/∂t^A` of the state.
    pub first: Option<Vec<Vec<Vec<f64>>>>,
    /// `second[node][a][b]` is `∂²/∂t^A∂t^B` of the state.
    pub second: Option<Vec<Vec<Vec<Vec<f64>>>>>,
    pub source: DerivativeSource,
    pub valid: Vec<bool>,
    pub diagnostics: Vec<String>,
    pub metadata: BTreeMap<String, f64>,
}

type NodeFn<'a> = &'a dyn Fn(&[f64]) -> Vec<f64>;

impl Section {
    pub fn new(
        grid: Grid,
        space: Space,
        n: usize,
        k: usize,
        values: Vec<Vec<f64>>,
    ) -> Result<Section> {
        check_dim(k, grid.k())?;
        check_dim(grid.len(), values.len())?;
        let dim = space.dim(n, k);
        for v in &values {
            check_dim(dim, v.len())?;
        }
        let valid = values
            .iter()
            .map(|v| v.iter().all(|x| x.is_finite()))
            .collect();
        Ok(Section {
            grid,
            space,
            n,
            k,
            values,
            first: None,
            second: None,
            source: DerivativeSource::FiniteDifference,
            valid,
            diagnostics: Vec::new(),
            metadata: BTreeMap::new(),
        })
    }

    /// A section with analytic values and, optionally, analytic first and
    /// second derivatives as functions of `t`. `d1(t)` returns the `k` first
    /// derivative vectors concatenated; `d2(t)` the `k*k` second derivative
    /// vectors in `(A, B)` row-major order.
    pub fn analytic(
        grid: Grid,
        space: Space,
        n: usize,
        k: usize,
        value: NodeFn,
        d1: Option<NodeFn>,
        d2: Option<NodeFn>,
    ) -> Result<Section> {
        let dim = space.dim(n, k);
        let ts: Vec<Vec<f64>> = (0..grid.len()).map(|node| grid.t(node)).collect();
        let mut s = Section::new(grid, space, n, k, ts.iter().map(|t| value(t)).collect())?;
        let chunk = |flat: Vec<f64>, parts: usize| -> Result<Vec<Vec<f64>>> {
            check_dim(parts * dim, flat.len())?;
            Ok(flat.chunks(dim).map(<[f64]>::to_vec).collect())
        };
        if let Some(d1) = d1 {
            s.first = Some(ts.iter().map(|t| chunk(d1(t), k)).collect::<Result<_>>()?);
        }
        if let Some(d2) = d2 {
            s.second = Some(
                ts.iter()
                    .map(|t| {
                        let rows = chunk(d2(t), k * k)?;
                        Ok(rows.chunks(k).map(<[Vec<f64>]>::to_vec).collect())
                    })
                    .collect::<Result<_>>()?,
            );
        }
        s.source = DerivativeSource::Analytic;
        Ok(s)
    }

    /// Configuration-space section `φ(t)` given by expressions in
    /// `t1..tk`, with exact first and second derivatives.
    pub fn from_exprs(grid: Grid, phi: &[Expr]) -> Result<Section> {
        let (n, k) = (phi.len(), grid.k());
        let ts: Vec<String> = (0..k).map(t_name).collect();
        let compile = |e: &Expr| Compiled::new(e, &ts).map_err(Error::from);
        let f0: Vec<Compiled> = phi.iter().map(compile).collect::<Result<_>>()?;
        let f1: Vec<Compiled> = (0..k)
            .flat_map(|a| phi.iter().map(move |e| diff(e, &t_name(a))))
            .map(|e| compile(&e))
            .collect::<Result<_>>()?;
        let f2: Vec<Compiled> = (0..k)
            .flat_map(|a| (0..k).map(move |b| (a, b)))
            .flat_map(|(a, b)| {
                phi.iter()
                    .map(move |e| diff(&diff(e, &t_name(a)), &t_name(b)))
            })
            .map(|e| compile(&e))
            .collect::<Result<_>>()?;
        let run = |fs: &[Compiled], t: &[f64]| -> Vec<f64> {
            fs.iter().map(|f| f.eval(t).unwrap_or(f64::NAN)).collect()
        };
        Section::analytic(
            grid,
            Space::Configuration,
            n,
            k,
            &|t| run(&f0, t),
            Some(&|t| run(&f1, t)),
            Some(&|t| run(&f2, t)),
        )
    }

    pub fn dim(&self) -> usize {
        self.space.dim(self.n, self.k)
    }

    pub fn is_complete(&self) -> bool {
        self.valid.iter().all(|v| *v)
    }

    pub fn first_derivatives(&self) -> Result<&Vec<Vec<Vec<f64>>>> {
        self.first
            .as_ref()
            .ok_or(Error::MissingDerivatives("first"))
    }

    pub fn second_derivatives(&self) -> Result<&Vec<Vec<Vec<Vec<f64>>>>> {
        self.second
            .as_ref()
            .ok_or(Error::MissingDerivatives("second"))
    }

    /// Replaces derivative data by finite differences of the stored values.
    pub fn with_finite_differences(mut self) -> Section {
        let first = fd_gradient(&self.grid, &self.values);
        let second = (0..self.grid.len())
            .map(|_| vec![vec![Vec::new(); self.k]; self.k])
            .collect::<Vec<Vec<Vec<Vec<f64>>>>>();
        let mut second = second;
        for a in 0..self.k {
            let column: Vec<Vec<f64>> = first.iter().map(|f| f[a].clone()).collect();
            let grad = fd_gradient(&self.grid, &column);
            for (node, g) in grad.into_iter().enumerate() {
                for (b, gb) in g.into_iter().enumerate() {
                    // ∂_B ∂_A
                    second[node][b][a] = gb;
                }
            }
        }
        self.first = Some(first);
        self.second = Some(second);
        self.source = DerivativeSource::FiniteDifference;
        self
    }

    /// Interior margin at which residuals of the given derivative order are
    /// reliable.
    pub fn margin(&self, order: usize) -> usize {
        match self.source {
            DerivativeSource::Analytic => 0,
            DerivativeSource::FiniteDifference => 2 * order,
        }
    }

    /// Valid nodes at least `margin` steps from the boundary.
    pub fn interior(&self, margin: usize) -> Vec<usize> {
        self.grid
            .interior(margin)
            .into_iter()
            .filter(|n| self.valid[*n])
            .collect()
    }

    /// Max-abs component of per-node residuals over the interior. Non-finite
    /// entries at included nodes propagate as infinity.
    pub fn max_over(&self, residuals: &[Vec<f64>], margin: usize) -> f64 {
        self.interior(margin)
            .into_iter()
            .flat_map(|node| residuals[node].iter())
            .fold(0.0_f64, |m, r| {
                if r.is_finite() {
                    m.max(r.abs())
                } else {
                    f64::INFINITY
                }
            })
    }

    /// Max error of the leading components against expressions in `t1..tk`.
    pub fn max_error_against(&self, exact: &[Expr]) -> Result<f64> {
        let ts: Vec<String> = (0..self.k).map(t_name).collect();
        let compiled = exact
            .iter()
            .map(|e| Compiled::new(e, &ts))
            .collect::<Result<Vec<_>, _>>()?;
        let mut worst = 0.0_f64;
        for node in self.interior(0) {
            let t = self.grid.t(node);
            for (c, f) in compiled.iter().enumerate() {
                worst = worst.max((self.values[node][c] - f.eval(&t)?).abs());
            }
        }
        Ok(worst)
    }

    pub fn coordinates(&self) -> Vec<String> {
        self.space.coordinates(self.n, self.k)
    }

    /// One header line, then one line per node: `t` coordinates then the
    /// state in canonical coordinate order.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = (0..self.k).map(t_name).chain(self.coordinates()).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for (node, v) in self.values.iter().enumerate() {
            let row: Vec<String> = self
                .grid
                .t(node)
                .iter()
                .chain(v.iter())
                .map(|x| format_float(*x))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json_value(&self) -> SectionDocument<'_> {
        SectionDocument {
            space: self.space,
            n: self.n,
            k: self.k,
            grid: &self.grid,
            columns: (0..self.k).map(t_name).chain(self.coordinates()).collect(),
            valid_nodes: self.valid.iter().filter(|v| **v).count(),
            total_nodes: self.valid.len(),
            diagnostics: &self.diagnostics,
            metadata: &self.metadata,
            rows: self
                .values
                .iter()
                .enumerate()
                .map(|(node, v)| {
                    self.grid
                        .t(node)
                        .into_iter()
                        .chain(v.iter().copied())
                        .collect()
                })
                .collect(),
        }
    }
}

/// Serialized form of a section: grid metadata, then rows in the CSV column
/// order.
#[derive(Serialize)]
pub struct SectionDocument<'a> {
    pub space: Space,
    pub n: usize,
    pub k: usize,
    pub grid: &'a Grid,
    pub columns: Vec<String>,
    pub valid_nodes: usize,
    pub total_nodes: usize,
    pub diagnostics: &'a [String],
    pub metadata: &'a BTreeMap<String, f64>,
    pub rows: Vec<Vec<f64>>,
}

/// 17 significant digits.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

fn derivative_1d(f: &[f64], h: f64, i: usize) -> f64 {
    let m = f.len();
    match m {
        0 | 1 => f64::NAN,
        2 => (f[1] - f[0]) / h,
        _ if i >= 2 && i + 2 < m => {
            (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) / (12.0 * h)
        }
        _ if i >= 1 && i + 1 < m => (f[i + 1] - f[i - 1]) / (2.0 * h),
        _ if i == 0 => (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h),
        _ => (3.0 * f[m - 1] - 4.0 * f[m - 2] + f[m - 3]) / (2.0 * h),
    }
}

/// `out[node][a]` is the finite-difference derivative along axis `a`.
fn fd_gradient(grid: &Grid, values: &[Vec<f64>]) -> Vec<Vec<Vec<f64>>> {
    let shape = grid.shape();
    let dim = values.first().map_or(0, Vec::len);
    let mut out = vec![vec![vec![0.0; dim]; grid.k()]; values.len()];
    for (a, axis) in grid.axes.iter().enumerate() {
        let stride = grid.strides()[a];
        // first node of every line along axis a
        let starts = (0..values.len()).filter(|node| grid.multi_index(*node)[a] == 0);
        for start in starts {
            let line: Vec<usize> = (0..shape[a]).map(|i| start + i * stride).collect();
            for c in 0..dim {
                let f: Vec<f64> = line.iter().map(|node| values[*node][c]).collect();
                for (i, node) in line.iter().enumerate() {
                    out[*node][a][c] = derivative_1d(&f, axis.step, i);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisOrder {
    Ascending,
    Descending,
}

#[derive(Debug, Clone, Copy)]
pub struct IntegrateOptions {
    /// Classical Runge-Kutta steps per grid step.
    pub substeps: usize,
    pub order: AxisOrder,
    /// Integration stops on a line once `‖state‖∞` exceeds this.
    pub blowup: f64,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            substeps: 1,
            order: AxisOrder::Ascending,
            blowup: 1e12,
        }
    }
}

fn rk4_step(x: &KVectorField, a: usize, y: &[f64], h: f64) -> Result<Vec<f64>> {
    let axpy = |base: &[f64], s: f64, d: &[f64]| -> Vec<f64> {
        base.iter().zip(d).map(|(b, v)| b + s * v).collect()
    };
    let k1 = x.eval_component(a, y)?;
    let k2 = x.eval_component(a, &axpy(y, h / 2.0, &k1))?;
    let k3 = x.eval_component(a, &axpy(y, h / 2.0, &k2))?;
    let k4 = x.eval_component(a, &axpy(y, h, &k3))?;
    Ok((0..y.len())
        .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Integrates along one line from `start` in direction `dir`, `steps` grid
/// steps, returning the states reached (excluding the start) or stopping
/// early with a message.
fn integrate_leg(
    x: &KVectorField,
    a: usize,
    start: &[f64],
    h: f64,
    steps: usize,
    opts: &IntegrateOptions,
) -> (Vec<Vec<f64>>, Option<String>) {
    let sub = opts.substeps.max(1);
    let hs = h / sub as f64;
    let mut y = start.to_vec();
    let mut out = Vec::with_capacity(steps);
    for step in 0..steps {
        for _ in 0..sub {
            match rk4_step(x, a, &y, hs) {
                Ok(next) => y = next,
                Err(e) => {
                    return (
                        out,
                        Some(format!("axis t{}: step {}: {e}", a + 1, step + 1)),
                    )
                }
            }
        }
        let norm = y.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if !(norm <= opts.blowup) {
            return (
                out,
                Some(format!(
                    "axis t{}: state norm {norm:e} exceeds threshold after step {}",
                    a + 1,
                    step + 1
                )),
            );
        }
        out.push(y.clone());
    }
    (out, None)
}

/// Builds the section of any k-vector field from `x0` at the grid origin by
/// sweeping the axes in the given order, each leg with the flow of the
/// matching component.
pub fn integrate_field(
    x: &KVectorField,
    x0: &[f64],
    grid: &Grid,
    opts: &IntegrateOptions,
) -> Result<Section> {
    check_dim(x.k(), grid.k())?;
    check_dim(x.dim(), x0.len())?;
    let origin = grid.origin()?;
    let shape = grid.shape();
    let mut values: Vec<Option<Vec<f64>>> = vec![None; grid.len()];
    values[grid.node(&origin)] = Some(x0.to_vec());
    let mut diagnostics = Vec::new();
    let axes: Vec<usize> = match opts.order {
        AxisOrder::Ascending => (0..grid.k()).collect(),
        AxisOrder::Descending => (0..grid.k()).rev().collect(),
    };
    for (pos, &a) in axes.iter().enumerate() {
        let done = &axes[..pos];
        // line starts: processed axes arbitrary, others at the origin
        let starts: Vec<usize> = (0..grid.len())
            .filter(|node| {
                let idx = grid.multi_index(*node);
                (0..grid.k()).all(|b| done.contains(&b) || idx[b] == origin[b])
            })
            .collect();
        let step = grid.axes[a].step;
        let lines: Vec<_> = starts
            .par_iter()
            .map(|&start| {
                let Some(y0) = values[start].clone() else {
                    return Vec::new();
                };
                let idx = grid.multi_index(start);
                let forward = shape[a] - 1 - idx[a];
                let backward = idx[a];
                let mut placed = Vec::new();
                let mut notes = Vec::new();
                for (dir, count) in [(1.0, forward), (-1.0, backward)] {
                    let (states, note) = integrate_leg(x, a, &y0, dir * step, count, opts);
                    for (s, state) in states.into_iter().enumerate() {
                        let mut j = idx.clone();
                        j[a] = if dir > 0.0 {
                            idx[a] + s + 1
                        } else {
                            idx[a] - s - 1
                        };
                        placed.push((grid.node(&j), Ok(state)));
                    }
                    if let Some(n) = note {
                        notes.push(n);
                    }
                }
                placed.extend(notes.into_iter().map(|n| (start, Err(n))));
                placed
            })
            .collect();
        for line in lines {
            for (node, entry) in line {
                match entry {
                    Ok(state) => values[node] = Some(state),
                    Err(note) => diagnostics.push(note),
                }
            }
        }
    }
    let dim = x.dim();
    let mut section = Section::new(
        grid.clone(),
        x.space(),
        x.n(),
        x.k(),
        values
            .into_iter()
            .map(|v| v.unwrap_or_else(|| vec![f64::NAN; dim]))
            .collect(),
    )?;
    if !section.is_complete() {
        diagnostics.push(format!(
            "section truncated: {} of {} nodes reached",
            section.valid.iter().filter(|v| **v).count(),
            section.valid.len()
        ));
    }
    section.diagnostics = diagnostics;
    Ok(section)
}

/// Integral section of a SOPDE on `T¹ₖQ` through `x0` at the grid origin.
pub fn integrate_section(
    x: &KVectorField,
    x0: &LagPoint,
    grid: &Grid,
    opts: &IntegrateOptions,
) -> Result<Section> {
    if x.space() != Space::Lagrangian {
        return Err(Error::Invalid(
            "integrate_section needs a field on T1kQ".into(),
        ));
    }
    let coords = x0.coords();
    let violation = sopde_violation(x, &coords)?;
    if violation > 1e-12 {
        return Err(Error::NotSopde(violation));
    }
    integrate_field(x, &coords, grid, opts)
}

/// Max node-wise distance between the ascending- and descending-order
/// sweeps.
pub fn path_independence(
    x: &KVectorField,
    x0: &[f64],
    grid: &Grid,
    opts: &IntegrateOptions,
) -> Result<f64> {
    let up = integrate_field(
        x,
        x0,
        grid,
        &IntegrateOptions {
            order: AxisOrder::Ascending,
            ..*opts
        },
    )?;
    let down = integrate_field(
        x,
        x0,
        grid,
        &IntegrateOptions {
            order: AxisOrder::Descending,
            ..*opts
        },
    )?;
    let mut worst = 0.0_f64;
    for node in 0..grid.len() {
        if up.valid[node] && down.valid[node] {
            for (a, b) in up.values[node].iter().zip(&down.values[node]) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(worst)
}

/// `φ ↦ φ⁽¹⁾ = (φ^i, ∂φ^i/∂t^A)`. Uses stored derivatives, computing finite
/// differences first if there are none.
pub fn prolong(phi: &Section) -> Result<Section> {
    if phi.space != Space::Configuration {
        return Err(Error::Invalid("prolong needs a section of Q".into()));
    }
    let phi = if phi.first.is_none() {
        phi.clone().with_finite_differences()
    } else {
        phi.clone()
    };
    let (n, k) = (phi.n, phi.k);
    let d1 = phi.first_derivatives()?;
    let values: Vec<Vec<f64>> = (0..phi.grid.len())
        .map(|node| {
            let mut state = phi.values[node].clone();
            for i in 0..n {
                for a in 0..k {
                    state.push(d1[node][a][i]);
                }
            }
            state
        })
        .collect();
    let mut out = Section::new(phi.grid.clone(), Space::Lagrangian, n, k, values)?;
    out.valid = out
        .valid
        .iter()
        .zip(&phi.valid)
        .map(|(a, b)| *a && *b)
        .collect();
    out.source = phi.source;
    if phi.source == DerivativeSource::Analytic {
        if let Some(d2) = &phi.second {
            // ∂_A of (φ^i, ∂_B φ^i)
            out.first = Some(
                (0..phi.grid.len())
                    .map(|node| {
                        (0..k)
                            .map(|a| {
                                let mut row = d1[node][a].clone();
                                for i in 0..n {
                                    for b in 0..k {
                                        row.push(d2[node][a][b][i]);
                                    }
                                }
                                row
                            })
                            .collect()
                    })
                    .collect(),
            );
        }
    } else {
        out = out.with_finite_differences();
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HolonomyReport {
    pub max_violation: f64,
    pub pass: bool,
}

/// `max |v^i_A - ∂q^i/∂t^A|` over interior nodes.
pub fn holonomy_check(psi: &Section, tol: f64) -> Result<HolonomyReport> {
    if psi.space != Space::Lagrangian {
        return Err(Error::Invalid(
            "holonomy check needs a section of T1kQ".into(),
        ));
    }
    let d1 = psi.first_derivatives()?;
    let (n, k) = (psi.n, psi.k);
    let residuals: Vec<Vec<f64>> = (0..psi.grid.len())
        .map(|node| {
            (0..k)
                .flat_map(|a| (0..n).map(move |i| (a, i)))
                .map(|(a, i)| psi.values[node][n + i * k + a] - d1[node][a][i])
                .collect()
        })
        .collect();
    let max_violation = psi.max_over(&residuals, psi.margin(1));
    Ok(HolonomyReport {
        max_violation,
        pass: max_violation <= tol,
    })
}

/// Node-wise Legendre map, with finite-difference derivatives on the image.
pub fn pushforward_section(m: &FieldModel, psi: &Section) -> Result<Section> {
    if psi.space != Space::Lagrangian {
        return Err(Error::Invalid("pushforward needs a section of T1kQ".into()));
    }
    check_dim(m.n(), psi.n)?;
    check_dim(m.k(), psi.k)?;
    let dim = Space::Hamiltonian.dim(m.n(), m.k());
    let values: Vec<Vec<f64>> = psi
        .values
        .par_iter()
        .zip(&psi.valid)
        .map(|(x, ok)| {
            if *ok {
                m.legendre_flat(x).unwrap_or_else(|_| vec![f64::NAN; dim])
            } else {
                vec![f64::NAN; dim]
            }
        })
        .collect();
    let mut out = Section::new(psi.grid.clone(), Space::Hamiltonian, m.n(), m.k(), values)?;
    out.diagnostics = psi.diagnostics.clone();
    Ok(out.with_finite_differences())
}
