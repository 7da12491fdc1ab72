//! k-vector fields on the three phase spaces, the second-order (SOPDE)
//! condition, contraction with two-form families and numeric Lie brackets.

use std::fmt;
use std::sync::Arc;

use crate::error::{check_dim, Error, Result};
use crate::geometry::{v_index, CompiledVec, LagPoint, Space, TwoFormFamily};
use crate::symcore::Expr;

/// Evaluates all `k` coefficient vectors at a point given in flat coordinates.
pub type PointFn = dyn Fn(&[f64]) -> Result<Vec<Vec<f64>>> + Send + Sync;

/// Coefficient functions `x ↦ (C_1(x), .., C_k(x))`, each of length `dim`,
/// over some domain coordinate list.
#[derive(Clone)]
pub(crate) enum Coeffs {
    Symbolic(Vec<CompiledVec>),
    Pointwise(Arc<PointFn>),
}

impl Coeffs {
    pub fn symbolic(exprs: Vec<Vec<Expr>>, domain: &[String]) -> Result<Coeffs> {
        Ok(Coeffs::Symbolic(
            exprs
                .into_iter()
                .map(|e| CompiledVec::new(e, domain))
                .collect::<Result<_>>()?,
        ))
    }

    pub fn eval(&self, point: &[f64]) -> Result<Vec<Vec<f64>>> {
        match self {
            Coeffs::Symbolic(parts) => parts.iter().map(|p| p.eval(point)).collect(),
            Coeffs::Pointwise(f) => f(point),
        }
    }

    /// Coefficients of a single component, skipping the others when possible.
    pub fn eval_one(&self, a: usize, point: &[f64]) -> Result<Vec<f64>> {
        match self {
            Coeffs::Symbolic(parts) => parts[a].eval(point),
            Coeffs::Pointwise(f) => f(point)?.into_iter().nth(a).ok_or_else(|| {
                Error::Invalid("pointwise field returned too few components".into())
            }),
        }
    }

    pub fn exprs(&self) -> Option<Vec<Vec<Expr>>> {
        match self {
            Coeffs::Symbolic(parts) => Some(parts.iter().map(|p| p.exprs.clone()).collect()),
            Coeffs::Pointwise(_) => None,
        }
    }
}

impl fmt::Debug for Coeffs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coeffs::Symbolic(parts) => f
                .debug_list()
                .entries(parts.iter().map(|p| &p.exprs))
                .finish(),
            Coeffs::Pointwise(_) => f.write_str("<pointwise>"),
        }
    }
}

/// `(X_1, .., X_k)` on one of the phase spaces. Component `a` holds the
/// coefficients of `X_{a+1}` in that space's canonical coordinate order.
#[derive(Clone, Debug)]
pub struct KVectorField {
    space: Space,
    n: usize,
    k: usize,
    pub(crate) coeffs: Coeffs,
}

impl KVectorField {
    pub fn symbolic(space: Space, n: usize, k: usize, exprs: Vec<Vec<Expr>>) -> Result<Self> {
        check_dim(k, exprs.len())?;
        let dim = space.dim(n, k);
        for e in &exprs {
            check_dim(dim, e.len())?;
        }
        let coords = space.coordinates(n, k);
        Ok(KVectorField {
            space,
            n,
            k,
            coeffs: Coeffs::symbolic(exprs, &coords)?,
        })
    }

    /// A field known only through a function of the flat coordinates. The
    /// function must return `k` vectors of the space's dimension.
    pub fn pointwise<F>(space: Space, n: usize, k: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> Result<Vec<Vec<f64>>> + Send + Sync + 'static,
    {
        KVectorField {
            space,
            n,
            k,
            coeffs: Coeffs::Pointwise(Arc::new(f)),
        }
    }

    pub fn zero(space: Space, n: usize, k: usize) -> Self {
        let dim = space.dim(n, k);
        KVectorField::symbolic(space, n, k, vec![vec![Expr::zero(); dim]; k]).expect("constant")
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.space.dim(self.n, self.k)
    }

    /// Coefficient expressions, if the field is symbolic.
    pub fn exprs(&self) -> Option<Vec<Vec<Expr>>> {
        self.coeffs.exprs()
    }

    /// Coefficients of `X_{a+1}` at `x`.
    pub fn eval_component(&self, a: usize, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let out = self.coeffs.eval_one(a, x)?;
        check_dim(self.dim(), out.len())?;
        Ok(out)
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_dim(self.dim(), x.len())?;
        let out = self.coeffs.eval(x)?;
        check_dim(self.k, out.len())?;
        for c in &out {
            check_dim(self.dim(), c.len())?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SopdeCheck {
    pub holds: bool,
    pub max_violation: f64,
}

/// Checks `(X_A)^i = v^i_A` at every sample.
pub fn is_sopde(x: &KVectorField, samples: &[LagPoint], tol: f64) -> Result<SopdeCheck> {
    if x.space() != Space::Lagrangian {
        return Err(Error::Invalid("SOPDE check needs a field on T1kQ".into()));
    }
    let mut worst = 0.0_f64;
    for p in samples {
        let coords = p.coords();
        worst = worst.max(sopde_violation(x, &coords)?);
    }
    Ok(SopdeCheck {
        holds: worst <= tol,
        max_violation: worst,
    })
}

pub(crate) fn sopde_violation(x: &KVectorField, coords: &[f64]) -> Result<f64> {
    let (n, k) = (x.n(), x.k());
    let c = x.eval(coords)?;
    let mut worst = 0.0_f64;
    for (a, ca) in c.iter().enumerate() {
        for i in 0..n {
            worst = worst.max((ca[i] - coords[v_index(n, k, i, a)]).abs());
        }
    }
    Ok(worst)
}

/// `Σ_A ι_{X_A} ω_A` with entry `j = Σ_A Σ_i X_A^i (ω_A)_{ij}`.
pub fn contract(omega: &TwoFormFamily, x: &KVectorField, point: &[f64]) -> Result<Vec<f64>> {
    if omega.space != x.space() {
        return Err(Error::Invalid(format!(
            "form family on {} contracted with a field on {}",
            omega.space.name(),
            x.space().name()
        )));
    }
    check_dim(omega.k(), x.k())?;
    contract_values(omega, &x.eval(point)?, point)
}

pub(crate) fn contract_values(
    omega: &TwoFormFamily,
    values: &[Vec<f64>],
    point: &[f64],
) -> Result<Vec<f64>> {
    let d = omega.dim();
    check_dim(d, point.len())?;
    let mut out = vec![0.0; d];
    for (a, xa) in values.iter().enumerate() {
        check_dim(d, xa.len())?;
        let w = omega.eval(a, point)?;
        for (j, o) in out.iter_mut().enumerate() {
            *o += (0..d).map(|i| xa[i] * w[(i, j)]).sum::<f64>();
        }
    }
    Ok(out)
}

pub const BRACKET_STEP: f64 = 1e-4;

/// `[X_A, X_B](x)` by central differences of each field's coefficients
/// along the other, `h` measured in state space.
pub fn bracket_numeric(
    x: &KVectorField,
    a: usize,
    b: usize,
    point: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    if a == b {
        return Err(Error::Precondition(
            "bracket needs two distinct indices".into(),
        ));
    }
    if a >= x.k() || b >= x.k() {
        return Err(Error::Invalid(format!(
            "index out of range for k = {}",
            x.k()
        )));
    }
    if h <= 0.0 {
        return Err(Error::Invalid("bracket step must be positive".into()));
    }
    let at = x.eval(point)?;
    let directional = |along: &[f64], of: usize| -> Result<Vec<f64>> {
        let shift = |s: f64| -> Vec<f64> {
            point
                .iter()
                .zip(along)
                .map(|(p, d)| p + s * h * d)
                .collect()
        };
        let plus = x.eval(&shift(1.0))?;
        let minus = x.eval(&shift(-1.0))?;
        Ok(plus[of]
            .iter()
            .zip(&minus[of])
            .map(|(p, m)| (p - m) / (2.0 * h))
            .collect())
    };
    let ab = directional(&at[a], b)?;
    let ba = directional(&at[b], a)?;
    Ok(ab.iter().zip(&ba).map(|(u, v)| u - v).collect())
}
