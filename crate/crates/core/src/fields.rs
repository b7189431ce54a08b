//! Smooth maps on a chart `U ⊆ R^n` and the differential operations built
//! on them: generalized Poisson brackets, Lie brackets and derivatives,
//! symmetry residuals and the closedness (Courant) residual of a Dirac
//! structure given by a skew field `J` and a distribution `Δ`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{DiracError, Result};
use crate::subspace::{Subspace, DEFAULT_RANK_TOL};

pub type EvalFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-6;

/// A smooth map `R^in -> R^out`, optionally with an exact Jacobian.
#[derive(Clone)]
pub struct SmoothMap {
    in_dim: usize,
    out_dim: usize,
    eval: EvalFn,
    jacobian: Option<JacobianFn>,
    fd_step: f64,
}

impl fmt::Debug for SmoothMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothMap")
            .field("in_dim", &self.in_dim)
            .field("out_dim", &self.out_dim)
            .field("exact_jacobian", &self.jacobian.is_some())
            .field("fd_step", &self.fd_step)
            .finish()
    }
}

impl SmoothMap {
    pub fn new<F>(in_dim: usize, out_dim: usize, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        SmoothMap {
            in_dim,
            out_dim,
            eval: Arc::new(f),
            jacobian: None,
            fd_step: FD_STEP,
        }
    }

    /// Scalar-valued convenience constructor.
    pub fn scalar<F>(in_dim: usize, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        SmoothMap::new(in_dim, 1, move |x| DVector::from_element(1, f(x)))
    }

    pub fn with_jacobian<F>(mut self, jac: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    /// Scalar map with exact gradient.
    pub fn scalar_with_gradient<F, G>(in_dim: usize, f: F, grad: G) -> Self
    where
        F: Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        G: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        SmoothMap::scalar(in_dim, f).with_jacobian(move |x| {
            let g = grad(x);
            DMatrix::from_row_slice(1, g.len(), g.as_slice())
        })
    }

    pub fn with_fd_step(mut self, h: f64) -> Self {
        self.fd_step = h;
        self
    }

    pub fn constant(in_dim: usize, value: DVector<f64>) -> Self {
        let out = value.len();
        let v2 = value.clone();
        SmoothMap::new(in_dim, out, move |_| v2.clone())
            .with_jacobian(move |_| DMatrix::zeros(out, in_dim))
    }

    pub fn zero(in_dim: usize, out_dim: usize) -> Self {
        SmoothMap::constant(in_dim, DVector::zeros(out_dim))
    }

    /// Linear map `x -> a x`.
    pub fn linear(a: DMatrix<f64>) -> Self {
        let (out, inp) = a.shape();
        let a2 = a.clone();
        SmoothMap::new(inp, out, move |x| &a2 * x).with_jacobian(move |_| a.clone())
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn has_exact_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        (self.eval)(x)
    }

    pub fn eval_scalar(&self, x: &DVector<f64>) -> f64 {
        self.eval(x)[0]
    }

    /// `out × in` Jacobian: exact when supplied, central differences otherwise.
    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.jacobian {
            Some(j) => j(x),
            None => self.fd_jacobian(x),
        }
    }

    pub fn fd_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        fd_jacobian(&|y| self.eval(y), x, self.out_dim, self.fd_step)
    }

    /// Gradient of a scalar map.
    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.jacobian(x).row(0).transpose()
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &SmoothMap) -> SmoothMap {
        let (outer, inner) = (self.clone(), inner.clone());
        let (o2, i2) = (outer.clone(), inner.clone());
        SmoothMap::new(inner.in_dim, outer.out_dim, move |x| outer.eval(&inner.eval(x)))
            .with_jacobian(move |x| o2.jacobian(&i2.eval(x)) * i2.jacobian(x))
    }

    /// Relative deviation between the exact and central-difference Jacobians.
    pub fn jacobian_consistency(&self, x: &DVector<f64>) -> f64 {
        let exact = self.jacobian(x);
        let fd = self.fd_jacobian(x);
        (&exact - &fd).norm() / exact.norm().max(1.0)
    }
}

/// Central differences of an arbitrary function.
pub fn fd_jacobian(
    f: &dyn Fn(&DVector<f64>) -> DVector<f64>,
    x: &DVector<f64>,
    out_dim: usize,
    h: f64,
) -> DMatrix<f64> {
    let n = x.len();
    let mut jac = DMatrix::zeros(out_dim, n);
    let mut xp = x.clone();
    for k in 0..n {
        let step = h * x[k].abs().max(1.0);
        xp[k] = x[k] + step;
        let fp = f(&xp);
        xp[k] = x[k] - step;
        let fm = f(&xp);
        xp[k] = x[k];
        jac.set_column(k, &((fp - fm) / (2.0 * step)));
    }
    jac
}

/// Generalized Poisson field: a skew `n × n` matrix field, stored row-major
/// as a map `R^n -> R^{n²}`. No Jacobi identity is assumed.
#[derive(Debug, Clone)]
pub struct PoissonField {
    n: usize,
    map: SmoothMap,
}

impl PoissonField {
    pub fn new(n: usize, map: SmoothMap) -> Result<Self> {
        if map.in_dim() != n || map.out_dim() != n * n {
            return Err(DiracError::DimensionMismatch {
                expected: n * n,
                found: map.out_dim(),
            });
        }
        Ok(PoissonField { n, map })
    }

    pub fn from_fn<F>(n: usize, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        let map = SmoothMap::new(n, n * n, move |x| {
            let m = f(x);
            DVector::from_iterator(n * n, m.transpose().iter().cloned())
        });
        PoissonField { n, map }
    }

    pub fn constant(j: DMatrix<f64>) -> Result<Self> {
        crate::dirac_point::check_skew(&j)?;
        let n = j.nrows();
        let flat = DVector::from_iterator(n * n, j.transpose().iter().cloned());
        Ok(PoissonField {
            n,
            map: SmoothMap::constant(n, flat),
        })
    }

    /// Canonical structure on `T*R^d` in coordinates `(q, p)`.
    pub fn canonical(d: usize) -> Self {
        PoissonField::constant(canonical_matrix(d)).expect("canonical matrix is skew")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn map(&self) -> &SmoothMap {
        &self.map
    }

    pub fn matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let flat = self.map.eval(x);
        DMatrix::from_row_slice(self.n, self.n, flat.as_slice())
    }

    /// `∂J/∂x_k` for each k.
    pub fn derivatives(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let jac = self.map.jacobian(x);
        (0..self.n)
            .map(|k| DMatrix::from_row_slice(self.n, self.n, jac.column(k).as_slice()))
            .collect()
    }

    pub fn skew_residual(&self, x: &DVector<f64>) -> f64 {
        let j = self.matrix(x);
        (&j + j.transpose()).norm()
    }
}

pub fn canonical_matrix(d: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        j[(i, d + i)] = 1.0;
        j[(d + i, i)] = -1.0;
    }
    j
}

/// Distribution spanned pointwise by `m` vector fields.
#[derive(Debug, Clone)]
pub struct DistributionField {
    n: usize,
    fields: Vec<SmoothMap>,
}

impl DistributionField {
    pub fn new(n: usize, fields: Vec<SmoothMap>) -> Result<Self> {
        for g in &fields {
            if g.in_dim() != n || g.out_dim() != n {
                return Err(DiracError::DimensionMismatch {
                    expected: n,
                    found: g.out_dim(),
                });
            }
        }
        Ok(DistributionField { n, fields })
    }

    pub fn zero(n: usize) -> Self {
        DistributionField {
            n,
            fields: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.fields.len()
    }

    pub fn fields(&self) -> &[SmoothMap] {
        &self.fields
    }

    /// `n × m` matrix with columns `g_j(x)`.
    pub fn matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.n, self.fields.len());
        for (j, f) in self.fields.iter().enumerate() {
            g.set_column(j, &f.eval(x));
        }
        g
    }

    pub fn subspace(&self, x: &DVector<f64>) -> Subspace {
        Subspace::from_columns(&self.matrix(x), DEFAULT_RANK_TOL)
    }

    pub fn rank(&self, x: &DVector<f64>) -> usize {
        crate::subspace::numerical_rank(&self.matrix(x), DEFAULT_RANK_TOL)
    }
}

/// `{f, h}(x) = df(x)^T J(x) dh(x)`.
pub fn bracket(f: &SmoothMap, h: &SmoothMap, j: &PoissonField, x: &DVector<f64>) -> f64 {
    let df = f.gradient(x);
    let dh = h.gradient(x);
    df.dot(&(j.matrix(x) * dh))
}

/// `[X, Y](x) = DY X - DX Y`.
pub fn lie_bracket(xf: &SmoothMap, yf: &SmoothMap, x: &DVector<f64>) -> DVector<f64> {
    yf.jacobian(x) * xf.eval(x) - xf.jacobian(x) * yf.eval(x)
}

/// `X[f](x) = <df, X>`.
pub fn lie_derivative_scalar(xf: &SmoothMap, f: &SmoothMap, x: &DVector<f64>) -> f64 {
    f.gradient(x).dot(&xf.eval(x))
}

/// `(L_Y J)(x) = DJ[Y] - DY J - J DY^T`.
pub fn lie_derivative_j(y: &SmoothMap, j: &PoissonField, x: &DVector<f64>) -> DMatrix<f64> {
    let yv = y.eval(x);
    let dy = y.jacobian(x);
    let jm = j.matrix(x);
    let mut dj_y = DMatrix::zeros(j.n(), j.n());
    for (k, djk) in j.derivatives(x).iter().enumerate() {
        dj_y += djk * yv[k];
    }
    dj_y - &dy * &jm - &jm * dy.transpose()
}

pub fn symmetry_residual_j(y: &SmoothMap, j: &PoissonField, x: &DVector<f64>) -> f64 {
    lie_derivative_j(y, j, x).norm()
}

/// Largest component of `[Y, g_j]` outside `span{g(x)}`.
pub fn symmetry_residual_delta(y: &SmoothMap, delta: &DistributionField, x: &DVector<f64>) -> f64 {
    let span = delta.subspace(x);
    delta
        .fields()
        .iter()
        .map(|g| span.distance_to(&lie_bracket(y, g, x)))
        .fold(0.0, f64::max)
}

/// Largest component of `[g_i, g_j]` outside `Δ`.
pub fn involutivity_residual(delta: &DistributionField, x: &DVector<f64>) -> f64 {
    let span = delta.subspace(x);
    let fs = delta.fields();
    let mut worst = 0.0_f64;
    for i in 0..fs.len() {
        for j in (i + 1)..fs.len() {
            worst = worst.max(span.distance_to(&lie_bracket(&fs[i], &fs[j], x)));
        }
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosednessReport {
    /// Largest cyclic sum `<L_X1 a2, X3> + <L_X2 a3, X1> + <L_X3 a1, X2>`
    /// over the sampled section triples.
    pub cyclic_max: f64,
    /// Largest component of `[g_i, g_j]` outside `Δ`.
    pub involutivity: f64,
    pub probes: usize,
}

/// Local section `(X, a)` of `D = {(v, a) : v - J a ∈ Δ, a ∈ Δ°}` generated by
/// constant vectors: `a(y) = P_{Δ°(y)} c`, `X(y) = J(y) a(y) + P_{Δ(y)} b`.
struct Section {
    covector: DVector<f64>,
    vector: DVector<f64>,
}

impl Section {
    fn eval(&self, j: &PoissonField, delta: &DistributionField, y: &DVector<f64>) -> DVector<f64> {
        let n = j.n();
        let g = delta.matrix(y);
        let (p_delta, p_ann) = if g.ncols() == 0 {
            (DMatrix::zeros(n, n), DMatrix::identity(n, n))
        } else {
            // projector onto span{g(y)} via the normal equations; smooth in y
            let gram = g.transpose() * &g;
            let inv = gram
                .try_inverse()
                .unwrap_or_else(|| DMatrix::zeros(g.ncols(), g.ncols()));
            let p = &g * inv * g.transpose();
            let ann = DMatrix::identity(n, n) - &p;
            (p, ann)
        };
        let a = &p_ann * &self.covector;
        let v = j.matrix(y) * &a + &p_delta * &self.vector;
        let mut out = DVector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&v);
        out.rows_mut(n, n).copy_from(&a);
        out
    }
}

/// Probe-based closedness residual at `x`.
///
/// A large value certifies non-closedness; a small value is evidence of
/// closedness on the sampled family only.
pub fn closedness_residual<R: Rng + ?Sized>(
    j: &PoissonField,
    delta: &DistributionField,
    x: &DVector<f64>,
    probe_count: usize,
    rng: &mut R,
) -> Result<ClosednessReport> {
    if probe_count == 0 {
        return Err(DiracError::Precondition("probe_count must be >= 1".into()));
    }
    let n = j.n();
    let unit = |rng: &mut R| -> DVector<f64> {
        let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        v / norm
    };
    let h = 1e-5;
    let mut worst = 0.0_f64;
    for _ in 0..probe_count {
        let secs: Vec<Section> = (0..3)
            .map(|_| Section {
                covector: unit(rng),
                vector: unit(rng),
            })
            .collect();
        let vals: Vec<DVector<f64>> = secs.iter().map(|s| s.eval(j, delta, x)).collect();
        let jacs: Vec<DMatrix<f64>> = secs
            .iter()
            .map(|s| fd_jacobian(&|y| s.eval(j, delta, y), x, 2 * n, h))
            .collect();
        // <L_X a, Y> = Y^T (Da) X + a^T (DX) Y
        let lie = |i: usize, k: usize, l: usize| -> f64 {
            let xi = vals[i].rows(0, n);
            let ak = vals[k].rows(n, n);
            let yl = vals[l].rows(0, n);
            let dak = jacs[k].view((n, 0), (n, n));
            let dxi = jacs[i].view((0, 0), (n, n));
            yl.dot(&(dak * xi)) + (dxi.transpose() * ak).dot(&yl)
        };
        let cyc = lie(0, 1, 2) + lie(1, 2, 0) + lie(2, 0, 1);
        worst = worst.max(cyc.abs());
    }
    Ok(ClosednessReport {
        cyclic_max: worst,
        involutivity: involutivity_residual(delta, x),
        probes: probe_count,
    })
}
