//! Field models and the canonical and Lagrangian geometric structures on the
//! bundle of k¹-velocities `T¹ₖQ` and k¹-covelocities `(T¹ₖ)*Q`.
//!
//! Coordinate order is fixed crate-wide:
//!
//! * configuration space: `q1..qn`
//! * `T¹ₖQ`: `q1..qn, v1_1, v1_2, .., v1_k, v2_1, .., vn_k` (field major)
//! * `(T¹ₖ)*Q`: `q1..qn, p1_1, .., p1_n, p2_1, .., pk_n` (parameter major)
//! * Whitney sum: the `T¹ₖQ` coordinates followed by the momenta
//!
//! Two-forms are full antisymmetric matrices `M` with `M[a][b] = ω(e_a, e_b)`,
//! so `dq^i ∧ dp^A_i` has `+1` in the `(q, p)` slot.

use std::ops::Deref;
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::linalg;
use crate::symcore::{diff, p_name, parse, q_name, simplify, v_name, Compiled, Expr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Configuration,
    Lagrangian,
    Hamiltonian,
    Unified,
}

impl Space {
    pub fn dim(self, n: usize, k: usize) -> usize {
        match self {
            Space::Configuration => n,
            Space::Lagrangian | Space::Hamiltonian => n + n * k,
            Space::Unified => n + 2 * n * k,
        }
    }

    pub fn coordinates(self, n: usize, k: usize) -> Vec<String> {
        let q = (0..n).map(q_name);
        let v = (0..n).flat_map(move |i| (0..k).map(move |a| v_name(i, a)));
        let p = (0..k).flat_map(move |a| (0..n).map(move |i| p_name(a, i)));
        match self {
            Space::Configuration => q.collect(),
            Space::Lagrangian => q.chain(v).collect(),
            Space::Hamiltonian => q.chain(p).collect(),
            Space::Unified => q.chain(v).chain(p).collect(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Space::Configuration => "configuration",
            Space::Lagrangian => "lagrangian",
            Space::Hamiltonian => "hamiltonian",
            Space::Unified => "unified",
        }
    }
}

/// Flat index of `v^i_A` in Lagrangian (and unified) coordinates.
pub fn v_index(n: usize, k: usize, i: usize, a: usize) -> usize {
    n + i * k + a
}

/// Flat index of `p^A_i` in Hamiltonian coordinates.
pub fn p_index(n: usize, a: usize, i: usize) -> usize {
    n + a * n + i
}

/// Flat index of `p^A_i` in unified coordinates.
pub fn unified_p_index(n: usize, k: usize, a: usize, i: usize) -> usize {
    n + n * k + a * n + i
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagPoint {
    pub q: Vec<f64>,
    /// `v[i][a]` is `v^i_A`.
    pub v: Vec<Vec<f64>>,
}

impl LagPoint {
    pub fn new(q: Vec<f64>, v: Vec<Vec<f64>>) -> LagPoint {
        LagPoint { q, v }
    }

    pub fn zero(n: usize, k: usize) -> LagPoint {
        LagPoint {
            q: vec![0.0; n],
            v: vec![vec![0.0; k]; n],
        }
    }

    pub fn coords(&self) -> Vec<f64> {
        let mut out = self.q.clone();
        for row in &self.v {
            out.extend_from_slice(row);
        }
        out
    }

    pub fn from_coords(n: usize, k: usize, x: &[f64]) -> Result<LagPoint> {
        check_dim(n + n * k, x.len())?;
        Ok(LagPoint {
            q: x[..n].to_vec(),
            v: (0..n)
                .map(|i| x[n + i * k..n + (i + 1) * k].to_vec())
                .collect(),
        })
    }

    fn check(&self, n: usize, k: usize) -> Result<()> {
        check_dim(n, self.q.len())?;
        check_dim(n, self.v.len())?;
        self.v.iter().try_for_each(|row| check_dim(k, row.len()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HamPoint {
    pub q: Vec<f64>,
    /// `p[a][i]` is `p^A_i`.
    pub p: Vec<Vec<f64>>,
}

impl HamPoint {
    pub fn new(q: Vec<f64>, p: Vec<Vec<f64>>) -> HamPoint {
        HamPoint { q, p }
    }

    pub fn coords(&self) -> Vec<f64> {
        let mut out = self.q.clone();
        for row in &self.p {
            out.extend_from_slice(row);
        }
        out
    }

    pub fn from_coords(n: usize, k: usize, y: &[f64]) -> Result<HamPoint> {
        check_dim(n + n * k, y.len())?;
        Ok(HamPoint {
            q: y[..n].to_vec(),
            p: (0..k)
                .map(|a| y[n + a * n..n + (a + 1) * n].to_vec())
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnifiedPoint {
    pub q: Vec<f64>,
    pub v: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
}

impl UnifiedPoint {
    pub fn new(q: Vec<f64>, v: Vec<Vec<f64>>, p: Vec<Vec<f64>>) -> UnifiedPoint {
        UnifiedPoint { q, v, p }
    }

    pub fn coords(&self) -> Vec<f64> {
        let mut out = self.q.clone();
        for row in &self.v {
            out.extend_from_slice(row);
        }
        for row in &self.p {
            out.extend_from_slice(row);
        }
        out
    }

    pub fn from_coords(n: usize, k: usize, w: &[f64]) -> Result<UnifiedPoint> {
        check_dim(n + 2 * n * k, w.len())?;
        let nl = n + n * k;
        let lag = LagPoint::from_coords(n, k, &w[..nl])?;
        let mut ham = w[..n].to_vec();
        ham.extend_from_slice(&w[nl..]);
        let h = HamPoint::from_coords(n, k, &ham)?;
        Ok(UnifiedPoint {
            q: lag.q,
            v: lag.v,
            p: h.p,
        })
    }

    pub fn lagrangian_part(&self) -> LagPoint {
        LagPoint::new(self.q.clone(), self.v.clone())
    }

    pub fn hamiltonian_part(&self) -> HamPoint {
        HamPoint::new(self.q.clone(), self.p.clone())
    }
}

/// Expressions that are compiled once and evaluated many times.
#[derive(Debug, Clone)]
pub(crate) struct CompiledVec {
    pub exprs: Vec<Expr>,
    pub compiled: Vec<Compiled>,
}

impl CompiledVec {
    pub fn new(exprs: Vec<Expr>, coords: &[String]) -> Result<CompiledVec> {
        let compiled = exprs
            .iter()
            .map(|e| Compiled::new(e, coords))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(CompiledVec { exprs, compiled })
    }

    pub fn eval(&self, point: &[f64]) -> Result<Vec<f64>> {
        self.compiled
            .iter()
            .map(|c| c.eval(point).map_err(Error::from))
            .collect()
    }
}

#[derive(Debug)]
pub(crate) struct UnifiedHamiltonian {
    pub gradient: CompiledVec,
}

/// A first-order Lagrangian `L(q^i, v^i_A)` with `k` parameters and `n`
/// fields, together with its precomputed derivatives. Cloning is cheap.
#[derive(Debug, Clone)]
pub struct FieldModel {
    data: Arc<ModelData>,
}

impl Deref for FieldModel {
    type Target = ModelData;

    fn deref(&self) -> &ModelData {
        &self.data
    }
}

#[derive(Debug)]
pub struct ModelData {
    k: usize,
    n: usize,
    lagrangian: Expr,
    lag_coords: Vec<String>,
    pub(crate) l: CompiledVec,
    /// `∂L/∂q^i`
    pub(crate) dl_dq: CompiledVec,
    /// `∂L/∂v^i_A` at index `i*k + a`
    pub(crate) dl_dv: CompiledVec,
    /// `∂²L/∂q^j∂v^i_A` at index `(j*n + i)*k + a`
    pub(crate) d2_qv: CompiledVec,
    /// `∂²L/∂v^i_A∂v^j_B` at row-major index over `(i,A) x (j,B)`
    pub(crate) d2_vv: CompiledVec,
    pub(crate) energy: CompiledVec,
    pub(crate) energy_grad: CompiledVec,
    /// Jacobian of the Legendre map, rows in Hamiltonian order, columns in
    /// Lagrangian order, obtained by differentiating its components.
    pub(crate) fl_jacobian: CompiledVec,
    unified_h: OnceLock<UnifiedHamiltonian>,
    lag_forms: OnceLock<TwoFormFamily>,
    canonical: OnceLock<TwoFormFamily>,
    unified_forms: OnceLock<TwoFormFamily>,
}

impl FieldModel {
    pub fn new(k: usize, n: usize, lagrangian: Expr) -> Result<FieldModel> {
        if k == 0 || n == 0 {
            return Err(Error::InvalidModel("k and n must be positive".into()));
        }
        let lag_coords = Space::Lagrangian.coordinates(n, k);
        if let Some(bad) = lagrangian
            .free_vars()
            .into_iter()
            .find(|v| !lag_coords.contains(v))
        {
            return Err(Error::InvalidModel(format!(
                "lagrangian uses {bad:?}, which is not a coordinate of T1kQ for k={k}, n={n}"
            )));
        }
        let lagrangian = simplify(&lagrangian);
        let dq: Vec<Expr> = (0..n).map(|i| diff(&lagrangian, &q_name(i))).collect();
        let dv: Vec<Expr> = (0..n)
            .flat_map(|i| (0..k).map(move |a| (i, a)))
            .map(|(i, a)| diff(&lagrangian, &v_name(i, a)))
            .collect();
        let mut d2_qv = Vec::with_capacity(n * n * k);
        for j in 0..n {
            for i in 0..n {
                for a in 0..k {
                    d2_qv.push(diff(&dv[i * k + a], &q_name(j)));
                }
            }
        }
        let vnames: Vec<String> = lag_coords[n..].to_vec();
        let nk = n * k;
        let mut d2_vv = vec![Expr::zero(); nk * nk];
        for r in 0..nk {
            for c in r..nk {
                let e = diff(&dv[r], &vnames[c]);
                d2_vv[c * nk + r] = e.clone();
                d2_vv[r * nk + c] = e;
            }
        }
        // E_L = C(L) - L with C = v^i_A ∂/∂v^i_A
        let mut liouville = Expr::zero();
        for i in 0..n {
            for a in 0..k {
                liouville = liouville + Expr::var(v_name(i, a)) * dv[i * k + a].clone();
            }
        }
        let energy = simplify(&(liouville - lagrangian.clone()));
        let energy_grad: Vec<Expr> = lag_coords.iter().map(|c| diff(&energy, c)).collect();

        let ham_coords = Space::Hamiltonian.coordinates(n, k);
        let mut components: Vec<Expr> = (0..n).map(|i| Expr::var(q_name(i))).collect();
        components.resize(ham_coords.len(), Expr::zero());
        for a in 0..k {
            for i in 0..n {
                components[p_index(n, a, i)] = dv[i * k + a].clone();
            }
        }
        let fl_jacobian: Vec<Expr> = components
            .iter()
            .flat_map(|c| lag_coords.iter().map(move |x| diff(c, x)))
            .collect();

        Ok(FieldModel {
            data: Arc::new(ModelData {
                k,
                n,
                l: CompiledVec::new(vec![lagrangian.clone()], &lag_coords)?,
                dl_dq: CompiledVec::new(dq, &lag_coords)?,
                dl_dv: CompiledVec::new(dv, &lag_coords)?,
                d2_qv: CompiledVec::new(d2_qv, &lag_coords)?,
                d2_vv: CompiledVec::new(d2_vv, &lag_coords)?,
                energy: CompiledVec::new(vec![energy], &lag_coords)?,
                energy_grad: CompiledVec::new(energy_grad, &lag_coords)?,
                fl_jacobian: CompiledVec::new(fl_jacobian, &lag_coords)?,
                lagrangian,
                lag_coords,
                unified_h: OnceLock::new(),
                lag_forms: OnceLock::new(),
                canonical: OnceLock::new(),
                unified_forms: OnceLock::new(),
            }),
        })
    }

    pub fn parse(k: usize, n: usize, lagrangian: &str) -> Result<FieldModel> {
        FieldModel::new(k, n, parse(lagrangian)?)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lagrangian(&self) -> &Expr {
        &self.lagrangian
    }

    pub fn lag_dim(&self) -> usize {
        self.n + self.n * self.k
    }

    pub fn unified_dim(&self) -> usize {
        self.n + 2 * self.n * self.k
    }

    pub fn coordinates(&self, space: Space) -> Vec<String> {
        if space == Space::Lagrangian {
            return self.lag_coords.clone();
        }
        space.coordinates(self.n, self.k)
    }

    pub fn dl_dq_expr(&self, i: usize) -> &Expr {
        &self.dl_dq.exprs[i]
    }

    pub fn dl_dv_expr(&self, i: usize, a: usize) -> &Expr {
        &self.dl_dv.exprs[i * self.k + a]
    }

    /// `∂²L/∂q^j∂v^i_A`
    pub fn d2_qv_expr(&self, j: usize, i: usize, a: usize) -> &Expr {
        &self.d2_qv.exprs[(j * self.n + i) * self.k + a]
    }

    /// `∂²L/∂v^i_A∂v^j_B`
    pub fn d2_vv_expr(&self, i: usize, a: usize, j: usize, b: usize) -> &Expr {
        let nk = self.n * self.k;
        &self.d2_vv.exprs[(i * self.k + a) * nk + j * self.k + b]
    }

    /// The energy `E_L = Σ v^i_A ∂L/∂v^i_A - L` as a symbolic expression.
    pub fn energy_expr(&self) -> &Expr {
        &self.energy.exprs[0]
    }

    /// Checks the point has the model's dimensions and returns its coordinates.
    pub fn lag_coords_of(&self, x: &LagPoint) -> Result<Vec<f64>> {
        x.check(self.n, self.k)?;
        Ok(x.coords())
    }

    pub(crate) fn lag_forms(&self) -> &TwoFormFamily {
        self.lag_forms
            .get_or_init(|| build_lagrangian_two_forms(self))
    }

    pub(crate) fn canonical_forms(&self) -> &TwoFormFamily {
        self.canonical
            .get_or_init(|| canonical_forms_on(self.n, self.k, Space::Hamiltonian))
    }

    /// `Ω_A`, the canonical forms pulled back to the Whitney sum.
    pub(crate) fn unified_forms(&self) -> &TwoFormFamily {
        self.unified_forms
            .get_or_init(|| canonical_forms_on(self.n, self.k, Space::Unified))
    }

    pub(crate) fn unified_hamiltonian(&self) -> &UnifiedHamiltonian {
        self.unified_h.get_or_init(|| {
            let coords = Space::Unified.coordinates(self.n, self.k);
            let mut coupling = Expr::zero();
            for a in 0..self.k {
                for i in 0..self.n {
                    coupling = coupling + Expr::var(p_name(a, i)) * Expr::var(v_name(i, a));
                }
            }
            let h = simplify(&(coupling - self.lagrangian.clone()));
            let grad: Vec<Expr> = coords.iter().map(|c| diff(&h, c)).collect();
            UnifiedHamiltonian {
                gradient: CompiledVec::new(grad, &coords).expect("unified coordinates"),
            }
        })
    }

    /// `∂L/∂v` at flat Lagrangian coordinates, indexed `i*k + a`.
    pub(crate) fn momenta_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.dl_dv.eval(x)
    }

    /// Legendre map on flat coordinates.
    pub(crate) fn legendre_flat(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (n, k) = (self.n, self.k);
        let dv = self.momenta_at(x)?;
        let mut y = x[..n].to_vec();
        y.resize(n + n * k, 0.0);
        for a in 0..k {
            for i in 0..n {
                y[p_index(n, a, i)] = dv[i * k + a];
            }
        }
        Ok(y)
    }

    pub(crate) fn hessian_flat(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let nk = self.n * self.k;
        Ok(DMatrix::from_row_slice(nk, nk, &self.d2_vv.eval(x)?))
    }

    /// `∂²L/∂q^j∂v^i_A` values indexed `(j*n + i)*k + a`.
    pub(crate) fn mixed_flat(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.d2_qv.eval(x)
    }

    pub(crate) fn fl_jacobian_flat(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.lag_dim();
        Ok(DMatrix::from_row_slice(d, d, &self.fl_jacobian.eval(x)?))
    }

    /// Seeded random Lagrangian points with coordinates uniform in
    /// `[-scale, scale]`.
    pub fn random_points(&self, count: usize, seed: u64, scale: f64) -> Vec<LagPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let x: Vec<f64> = (0..self.lag_dim())
                    .map(|_| rng.gen_range(-scale..=scale))
                    .collect();
                LagPoint::from_coords(self.n, self.k, &x).expect("dimension")
            })
            .collect()
    }
}

/// `FL(q, v) = (q, ∂L/∂v)`.
pub fn legendre(m: &FieldModel, x: &LagPoint) -> Result<HamPoint> {
    let xc = m.lag_coords_of(x)?;
    HamPoint::from_coords(m.n(), m.k(), &m.legendre_flat(&xc)?)
}

/// Velocity Hessian `∂²L/∂v^i_A∂v^j_B`, rows and columns in `(i, A)`
/// lexicographic order.
pub fn hessian(m: &FieldModel, x: &LagPoint) -> Result<DMatrix<f64>> {
    m.hessian_flat(&m.lag_coords_of(x)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularityReport {
    pub regular: bool,
    pub determinants: Vec<f64>,
    pub ranks: Vec<usize>,
    pub tolerance: f64,
}

pub const REGULARITY_TOL: f64 = 1e-9;

/// Regular iff `|det H| > tol` at every sample.
pub fn is_regular(m: &FieldModel, samples: &[LagPoint], tol: f64) -> Result<RegularityReport> {
    if samples.is_empty() {
        return Err(Error::Precondition("regularity check needs samples".into()));
    }
    let mut determinants = Vec::with_capacity(samples.len());
    let mut ranks = Vec::with_capacity(samples.len());
    for x in samples {
        let h = hessian(m, x)?;
        determinants.push(linalg::det(&h));
        ranks.push(linalg::rank(&h, linalg::PIVOT_TOL));
    }
    Ok(RegularityReport {
        regular: determinants.iter().all(|d| d.abs() > tol),
        determinants,
        ranks,
        tolerance: tol,
    })
}

/// `E_L(x) = Σ v^i_A ∂L/∂v^i_A(x) - L(x)`, by numeric contraction.
pub fn energy(m: &FieldModel, x: &LagPoint) -> Result<f64> {
    let xc = m.lag_coords_of(x)?;
    let dv = m.momenta_at(&xc)?;
    let contraction: f64 = xc[m.n()..].iter().zip(&dv).map(|(v, p)| v * p).sum();
    Ok(contraction - m.l.eval(&xc)?[0])
}

/// Matrix of exact expressions for one two-form.
#[derive(Debug, Clone)]
pub struct FormMatrix {
    dim: usize,
    entries: Vec<Expr>,
    compiled: Vec<Compiled>,
}

impl FormMatrix {
    fn zeros(dim: usize) -> FormMatrix {
        FormMatrix {
            dim,
            entries: vec![Expr::zero(); dim * dim],
            compiled: Vec::new(),
        }
    }

    /// Sets `M[r][c] = e` and `M[c][r] = -e`.
    fn set_pair(&mut self, r: usize, c: usize, e: Expr) {
        let neg = simplify(&-e.clone());
        self.entries[r * self.dim + c] = e;
        self.entries[c * self.dim + r] = neg;
    }

    fn compile(&mut self, coords: &[String]) -> Result<()> {
        self.compiled = self
            .entries
            .iter()
            .map(|e| Compiled::new(e, coords))
            .collect::<Result<_, _>>()?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, r: usize, c: usize) -> &Expr {
        &self.entries[r * self.dim + c]
    }

    pub fn eval(&self, point: &[f64]) -> Result<DMatrix<f64>> {
        let vals = self
            .compiled
            .iter()
            .map(|c| c.eval(point))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DMatrix::from_row_slice(self.dim, self.dim, &vals))
    }
}

/// The component family `(ω_1, .., ω_k)` of a polysymplectic-type structure.
#[derive(Debug, Clone)]
pub struct TwoFormFamily {
    pub space: Space,
    pub coordinates: Vec<String>,
    pub forms: Vec<FormMatrix>,
}

impl TwoFormFamily {
    pub fn k(&self) -> usize {
        self.forms.len()
    }

    pub fn dim(&self) -> usize {
        self.coordinates.len()
    }

    pub fn eval(&self, a: usize, point: &[f64]) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), point.len())?;
        self.forms[a].eval(point)
    }

    fn finish(space: Space, coordinates: Vec<String>, mut forms: Vec<FormMatrix>) -> Result<Self> {
        for f in &mut forms {
            f.compile(&coordinates)?;
        }
        Ok(TwoFormFamily {
            space,
            coordinates,
            forms,
        })
    }
}

/// `(ω₀)_A = dq^i ∧ dp^A_i` on `(T¹ₖ)*Q`.
pub fn canonical_two_forms(m: &FieldModel) -> TwoFormFamily {
    canonical_forms_on(m.n(), m.k(), Space::Hamiltonian)
}

/// Canonical forms on either `(T¹ₖ)*Q` or, pulled back by the projection, on
/// the Whitney sum.
pub(crate) fn canonical_forms_on(n: usize, k: usize, space: Space) -> TwoFormFamily {
    let coords = space.coordinates(n, k);
    let forms = (0..k)
        .map(|a| {
            let mut f = FormMatrix::zeros(coords.len());
            for i in 0..n {
                let p = match space {
                    Space::Unified => unified_p_index(n, k, a, i),
                    _ => p_index(n, a, i),
                };
                f.set_pair(i, p, Expr::one());
            }
            f
        })
        .collect();
    TwoFormFamily::finish(space, coords, forms).expect("constant forms compile")
}

/// `(ω_L)_A = -d(θ_L)_A` with `(θ_L)_A = ∂L/∂v^i_A dq^i`, on `T¹ₖQ`.
pub fn lagrangian_two_forms(m: &FieldModel) -> TwoFormFamily {
    m.lag_forms().clone()
}

fn build_lagrangian_two_forms(m: &FieldModel) -> TwoFormFamily {
    let (n, k) = (m.n(), m.k());
    let coords = m.coordinates(Space::Lagrangian);
    let forms = (0..k)
        .map(|a| {
            let mut f = FormMatrix::zeros(coords.len());
            for i in 0..n {
                for j in (i + 1)..n {
                    // coefficient of dq^i∧dq^j after antisymmetrizing
                    let e =
                        simplify(&(m.d2_qv_expr(j, i, a).clone() - m.d2_qv_expr(i, j, a).clone()));
                    f.set_pair(i, j, e);
                }
                for j in 0..n {
                    for b in 0..k {
                        f.set_pair(i, v_index(n, k, j, b), m.d2_vv_expr(i, a, j, b).clone());
                    }
                }
            }
            f
        })
        .collect();
    TwoFormFamily::finish(Space::Lagrangian, coords, forms).expect("model expressions compile")
}

/// Max-abs entry of `Jᵀ (ω₀)_A J - (ω_L)_A` at `x`, per `A`, with `J` the
/// Jacobian of the Legendre map.
pub fn pullback_check(m: &FieldModel, x: &LagPoint) -> Result<Vec<f64>> {
    let xc = m.lag_coords_of(x)?;
    let y = m.legendre_flat(&xc)?;
    let j = m.fl_jacobian_flat(&xc)?;
    let canonical = m.canonical_forms();
    let lagrangian = m.lag_forms();
    (0..m.k())
        .map(|a| {
            let pulled = j.transpose() * canonical.eval(a, &y)? * &j;
            let direct = lagrangian.eval(a, &xc)?;
            Ok(linalg::max_abs((pulled - direct).iter().copied()))
        })
        .collect()
}

/// A finite list of constraint functions on one phase space with their
/// compiled Jacobian.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    pub space: Space,
    coords: Vec<String>,
    values: CompiledVec,
    jacobian: CompiledVec,
}

impl ConstraintSet {
    pub fn new(space: Space, n: usize, k: usize, exprs: Vec<Expr>) -> Result<ConstraintSet> {
        let coords = space.coordinates(n, k);
        let exprs: Vec<Expr> = exprs.iter().map(simplify).collect();
        let jac: Vec<Expr> = exprs
            .iter()
            .flat_map(|c| coords.iter().map(move |x| diff(c, x)))
            .collect();
        Ok(ConstraintSet {
            space,
            values: CompiledVec::new(exprs, &coords)?,
            jacobian: CompiledVec::new(jac, &coords)?,
            coords,
        })
    }

    pub fn exprs(&self) -> &[Expr] {
        &self.values.exprs
    }

    pub fn len(&self) -> usize {
        self.values.exprs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn eval(&self, point: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), point.len())?;
        self.values.eval(point)
    }

    pub fn jacobian(&self, point: &[f64]) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), point.len())?;
        Ok(DMatrix::from_row_slice(
            self.len(),
            self.dim(),
            &self.jacobian.eval(point)?,
        ))
    }

    /// Largest constraint violation at `point`.
    pub fn violation(&self, point: &[f64]) -> Result<f64> {
        Ok(linalg::max_abs(self.eval(point)?))
    }

    /// Gauss-Newton with minimum-norm steps onto the zero set, starting at
    /// `point`.
    pub fn project(&self, point: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
        let mut x = point.to_vec();
        for iteration in 0..max_iter {
            let c = nalgebra::DVector::from_vec(self.eval(&x)?);
            if linalg::max_abs(c.iter().copied()) <= tol {
                return Ok(x);
            }
            let step = linalg::min_norm_solve(&self.jacobian(&x)?, &-c.clone(), linalg::PIVOT_TOL);
            if step.x.norm() == 0.0 {
                return Err(Error::NotConverged {
                    iterations: iteration,
                    residual: c.amax(),
                });
            }
            for (xi, s) in x.iter_mut().zip(step.x.iter()) {
                *xi += s;
            }
        }
        let residual = self.violation(&x)?;
        if residual <= tol {
            Ok(x)
        } else {
            Err(Error::NotConverged {
                iterations: max_iter,
                residual,
            })
        }
    }
}
