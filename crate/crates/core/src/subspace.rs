//! Linear subspaces of R^d stored as orthonormal bases.
//!
//! Every constructor re-orthonormalizes through an SVD, so two subspaces
//! compare through [`Subspace::distance`] rather than by basis entries.
//! Numerical rank keeps singular values `>= tol * sigma_max`.

use nalgebra::{DMatrix, DVector};

use crate::error::{DiracError, Result};

/// Default relative singular-value threshold for rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    ambient_dim: usize,
    basis: DMatrix<f64>,
    tol: f64,
}

/// Full SVD `m = U diag(s) V^T` with `U` (rows × rows), `V` (cols × cols) and
/// `min(rows, cols)` singular values in descending order.
///
/// Computed with faer: nalgebra 0.35's SVD returns inaccurate factors for
/// some rank-deficient inputs.
pub(crate) struct FullSvd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

pub(crate) fn full_svd(m: &DMatrix<f64>) -> FullSvd {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return FullSvd {
            u: DMatrix::identity(r, r),
            s: Vec::new(),
            v: DMatrix::identity(c, c),
        };
    }
    let fm = faer::Mat::<f64>::from_fn(r, c, |i, j| m[(i, j)]);
    match fm.svd() {
        Ok(svd) => {
            let (u, v, sd) = (svd.U(), svd.V(), svd.S().column_vector());
            FullSvd {
                u: DMatrix::from_fn(r, r, |i, j| u[(i, j)]),
                s: (0..r.min(c)).map(|i| sd[i]).collect(),
                v: DMatrix::from_fn(c, c, |i, j| v[(i, j)]),
            }
        }
        // non-convergence only happens for non-finite input
        Err(_) => FullSvd {
            u: DMatrix::identity(r, r),
            s: vec![f64::NAN; r.min(c)],
            v: DMatrix::identity(c, c),
        },
    }
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Vec::new();
    }
    let fm = faer::Mat::<f64>::from_fn(r, c, |i, j| m[(i, j)]);
    fm.singular_values()
        .unwrap_or_else(|_| vec![f64::NAN; r.min(c)])
}

/// Orthonormal basis of the column space of `m` (relative threshold `tol`).
pub(crate) fn column_space(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    column_space_scaled(m, tol, 0.0)
}

/// Column space with threshold `tol * max(σ_max, scale)`, so that a product
/// whose entries are pure roundoff relative to `scale` has rank 0.
pub(crate) fn column_space_scaled(m: &DMatrix<f64>, tol: f64, scale: f64) -> DMatrix<f64> {
    let d = m.nrows();
    if m.ncols() == 0 || d == 0 {
        return DMatrix::zeros(d, 0);
    }
    let svd = full_svd(m);
    let smax = svd.s.first().cloned().unwrap_or(0.0);
    if smax == 0.0 || !smax.is_finite() {
        return DMatrix::zeros(d, 0);
    }
    let cut = tol * smax.max(scale);
    let k = svd.s.iter().filter(|&&s| s >= cut && s > 0.0).count();
    svd.u.columns(0, k).into_owned()
}

/// Orthonormal basis of the null space of `m` (vectors x with m x = 0).
pub(crate) fn null_space(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    null_space_scaled(m, tol, 0.0)
}

/// Null space with threshold `tol * max(σ_max, scale)`.
pub(crate) fn null_space_scaled(m: &DMatrix<f64>, tol: f64, scale: f64) -> DMatrix<f64> {
    let n = m.ncols();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    if m.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let svd = full_svd(m);
    let smax = svd.s.first().cloned().unwrap_or(0.0);
    let cut = tol * smax.max(scale);
    let rank = svd.s.iter().filter(|&&s| s > 0.0 && s >= cut).count();
    svd.v.columns(rank, n - rank).into_owned()
}

/// Null space with an absolute singular-value threshold.
pub(crate) fn null_space_abs(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let n = m.ncols();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    if m.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let svd = full_svd(m);
    let rank = svd.s.iter().filter(|&&s| s > tol).count();
    svd.v.columns(rank, n - rank).into_owned()
}

/// Number of singular values `>= tol * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let sv = singular_values(m);
    let smax = sv.first().cloned().unwrap_or(0.0);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s >= tol * smax).count()
}

impl Subspace {
    /// Column space of `m` (columns are spanning vectors).
    pub fn from_columns(m: &DMatrix<f64>, tol: f64) -> Self {
        Subspace {
            ambient_dim: m.nrows(),
            basis: column_space(m, tol),
            tol,
        }
    }

    pub fn span(ambient_dim: usize, vectors: &[DVector<f64>], tol: f64) -> Result<Self> {
        for v in vectors {
            if v.len() != ambient_dim {
                return Err(DiracError::DimensionMismatch {
                    expected: ambient_dim,
                    found: v.len(),
                });
            }
        }
        let m = DMatrix::from_fn(ambient_dim, vectors.len(), |r, c| vectors[c][r]);
        Ok(Self::from_columns(&m, tol))
    }

    pub fn zero(ambient_dim: usize) -> Self {
        Subspace {
            ambient_dim,
            basis: DMatrix::zeros(ambient_dim, 0),
            tol: DEFAULT_RANK_TOL,
        }
    }

    pub fn full(ambient_dim: usize) -> Self {
        Subspace {
            ambient_dim,
            basis: DMatrix::identity(ambient_dim, ambient_dim),
            tol: DEFAULT_RANK_TOL,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    fn check_same(&self, other: &Subspace) -> Result<()> {
        if self.ambient_dim != other.ambient_dim {
            return Err(DiracError::DimensionMismatch {
                expected: self.ambient_dim,
                found: other.ambient_dim,
            });
        }
        Ok(())
    }

    /// Orthogonal projector onto the subspace.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }

    pub fn project_vector(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.basis * (self.basis.transpose() * v)
    }

    /// Euclidean distance from `v` to the subspace.
    pub fn distance_to(&self, v: &DVector<f64>) -> f64 {
        (v - self.project_vector(v)).norm()
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        self.distance_to(v) <= tol * v.norm().max(1.0)
    }

    pub fn sum(&self, other: &Subspace) -> Result<Subspace> {
        self.check_same(other)?;
        let mut m = DMatrix::zeros(self.ambient_dim, self.dim() + other.dim());
        m.view_mut((0, 0), (self.ambient_dim, self.dim()))
            .copy_from(&self.basis);
        m.view_mut((0, self.dim()), (self.ambient_dim, other.dim()))
            .copy_from(&other.basis);
        Ok(Subspace::from_columns(&m, self.tol))
    }

    /// `A ∩ B`, from the null space of `[A | -B]`.
    pub fn intersect(&self, other: &Subspace) -> Result<Subspace> {
        self.check_same(other)?;
        let (ka, kb) = (self.dim(), other.dim());
        if ka == 0 || kb == 0 {
            return Ok(Subspace::zero(self.ambient_dim).with_tol(self.tol));
        }
        let mut m = DMatrix::zeros(self.ambient_dim, ka + kb);
        m.view_mut((0, 0), (self.ambient_dim, ka))
            .copy_from(&self.basis);
        m.view_mut((0, ka), (self.ambient_dim, kb))
            .copy_from(&(-&other.basis));
        // Both bases are orthonormal, so singular values of [A | -B] are
        // sqrt(1 ± cos θ); an absolute threshold is the right scale here.
        let ns = null_space(&m, self.tol.max(1e-8));
        let vecs = &self.basis * ns.rows(0, ka);
        Ok(Subspace::from_columns(&vecs, self.tol))
    }

    /// `A°`: covectors vanishing on A, with R^d* identified with R^d.
    pub fn annihilator(&self) -> Subspace {
        let ns = if self.dim() == 0 {
            DMatrix::identity(self.ambient_dim, self.ambient_dim)
        } else {
            null_space(&self.basis.transpose(), self.tol)
        };
        Subspace {
            ambient_dim: self.ambient_dim,
            basis: ns,
            tol: self.tol,
        }
    }

    /// Gap metric `|P_A - P_B|_2`: the sine of the largest principal angle
    /// when dimensions agree, 1 otherwise.
    pub fn distance(&self, other: &Subspace) -> Result<f64> {
        self.check_same(other)?;
        if self.ambient_dim == 0 {
            return Ok(0.0);
        }
        let diff = self.projector() - other.projector();
        let sv = singular_values(&diff);
        Ok(sv.first().cloned().unwrap_or(0.0).min(1.0))
    }

    /// Image under `l` (d' × d).
    pub fn image(&self, l: &DMatrix<f64>) -> Result<Subspace> {
        if l.ncols() != self.ambient_dim {
            return Err(DiracError::DimensionMismatch {
                expected: self.ambient_dim,
                found: l.ncols(),
            });
        }
        Ok(Subspace {
            ambient_dim: l.nrows(),
            basis: column_space_scaled(&(l * &self.basis), self.tol, l.norm()),
            tol: self.tol,
        })
    }

    /// Preimage `{x : l x ∈ self}` of this subspace under `l` (d × d0).
    pub fn preimage(&self, l: &DMatrix<f64>) -> Result<Subspace> {
        if l.nrows() != self.ambient_dim {
            return Err(DiracError::DimensionMismatch {
                expected: self.ambient_dim,
                found: l.nrows(),
            });
        }
        let ann = self.annihilator();
        let cond = ann.basis.transpose() * l;
        Ok(Subspace {
            ambient_dim: l.ncols(),
            basis: null_space_scaled(&cond, self.tol, l.norm()),
            tol: self.tol,
        })
    }
}

pub fn span(ambient_dim: usize, vectors: &[DVector<f64>], tol: f64) -> Result<Subspace> {
    Subspace::span(ambient_dim, vectors, tol)
}

pub fn intersect(a: &Subspace, b: &Subspace) -> Result<Subspace> {
    a.intersect(b)
}

pub fn annihilator(a: &Subspace) -> Subspace {
    a.annihilator()
}

pub fn subspace_distance(a: &Subspace, b: &Subspace) -> Result<f64> {
    a.distance(b)
}

pub fn map_image(l: &DMatrix<f64>, a: &Subspace) -> Result<Subspace> {
    a.image(l)
}

pub fn map_preimage(l: &DMatrix<f64>, b: &Subspace) -> Result<Subspace> {
    b.preimage(l)
}
