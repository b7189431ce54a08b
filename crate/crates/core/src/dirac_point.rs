//! Constant Dirac structures on a single fiber `R^n x R^n`.
//!
//! An element is written `(v, a)` with `v` the tangent part (first `n`
//! coordinates) and `a` the cotangent part (last `n`). The symmetric pairing
//! is `<<(v,a),(w,b)>> = <a,w> + <b,v>`; a Dirac fiber is an `n`-dimensional
//! subspace on which this pairing vanishes identically.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{DiracError, Result};
use crate::subspace::{null_space, Subspace, DEFAULT_RANK_TOL};

/// Isotropy tolerance used by the checked constructors.
pub const DIRAC_TOL: f64 = 1e-9;

/// Skewness tolerance for `J` and `omega` inputs.
pub const SKEW_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantDirac {
    n: usize,
    space: Subspace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiracReport {
    pub n: usize,
    pub dim: usize,
    pub isotropy_residual: f64,
    pub is_dirac: bool,
}

/// The pairing matrix `[[0, I], [I, 0]]` on `R^{2n}`.
pub fn pairing_matrix(n: usize) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        q[(i, n + i)] = 1.0;
        q[(n + i, i)] = 1.0;
    }
    q
}

fn half_dim(s: &Subspace) -> Result<usize> {
    let d = s.ambient_dim();
    if d % 2 != 0 {
        return Err(DiracError::OddDimension(d));
    }
    Ok(d / 2)
}

pub(crate) fn check_skew(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(DiracError::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    let asym = (m + m.transpose()).norm();
    if asym > SKEW_TOL * m.norm().max(1.0) {
        return Err(DiracError::NotSkew(asym));
    }
    Ok(())
}

/// `S^⊥` with respect to the symmetric pairing.
pub fn plus_orthogonal(s: &Subspace) -> Result<Subspace> {
    let n = half_dim(s)?;
    if s.dim() == 0 {
        return Ok(Subspace::full(2 * n).with_tol(s.tol()));
    }
    let qb = pairing_matrix(n) * s.basis();
    let ns = null_space(&qb.transpose(), s.tol());
    Ok(Subspace::from_columns(&ns, s.tol()))
}

/// Largest `|<<b_i, b_j>>|` over pairs of orthonormal basis vectors.
pub fn isotropy_residual(s: &Subspace) -> Result<f64> {
    let n = half_dim(s)?;
    let b = s.basis();
    let gram = b.transpose() * pairing_matrix(n) * b;
    Ok(gram.iter().fold(0.0_f64, |m, x| m.max(x.abs())))
}

pub fn is_dirac(s: &Subspace) -> Result<DiracReport> {
    is_dirac_with_tol(s, DIRAC_TOL)
}

pub fn is_dirac_with_tol(s: &Subspace, tol: f64) -> Result<DiracReport> {
    let n = half_dim(s)?;
    let iso = isotropy_residual(s)?;
    Ok(DiracReport {
        n,
        dim: s.dim(),
        isotropy_residual: iso,
        is_dirac: s.dim() == n && iso < tol,
    })
}

impl ConstantDirac {
    /// Wraps a subspace after checking dimension and isotropy.
    pub fn new(space: Subspace) -> Result<Self> {
        let rep = is_dirac(&space)?;
        if !rep.is_dirac {
            return Err(DiracError::NotDirac {
                dim: rep.dim,
                n: rep.n,
                isotropy: rep.isotropy_residual,
            });
        }
        Ok(ConstantDirac { n: rep.n, space })
    }

    fn from_generators(n: usize, gens: &DMatrix<f64>) -> Result<Self> {
        ConstantDirac::new(Subspace::from_columns(gens, DEFAULT_RANK_TOL))
            .map(|d| {
                debug_assert_eq!(d.n, n);
                d
            })
    }

    /// Graph `{(J a, a)}` of a skew map.
    pub fn from_poisson(j: &DMatrix<f64>) -> Result<Self> {
        check_skew(j)?;
        let n = j.nrows();
        let mut g = DMatrix::zeros(2 * n, n);
        g.view_mut((0, 0), (n, n)).copy_from(j);
        g.view_mut((n, 0), (n, n)).fill_with_identity();
        Self::from_generators(n, &g)
    }

    /// Graph `{(v, omega v)}` of a skew two-form.
    pub fn from_presymplectic(omega: &DMatrix<f64>) -> Result<Self> {
        check_skew(omega)?;
        let n = omega.nrows();
        let mut g = DMatrix::zeros(2 * n, n);
        g.view_mut((0, 0), (n, n)).fill_with_identity();
        g.view_mut((n, 0), (n, n)).copy_from(omega);
        Self::from_generators(n, &g)
    }

    /// `{(v, a) : v - J a ∈ Δ, a ∈ Δ°}`.
    pub fn from_j_delta(j: &DMatrix<f64>, delta: &Subspace) -> Result<Self> {
        check_skew(j)?;
        let n = j.nrows();
        if delta.ambient_dim() != n {
            return Err(DiracError::DimensionMismatch {
                expected: n,
                found: delta.ambient_dim(),
            });
        }
        let ann = delta.annihilator();
        let (k, c) = (delta.dim(), ann.dim());
        // (J a, a) for a in Δ°, and (d, 0) for d in Δ.
        let mut g = DMatrix::zeros(2 * n, k + c);
        g.view_mut((0, 0), (n, c)).copy_from(&(j * ann.basis()));
        g.view_mut((n, 0), (n, c)).copy_from(ann.basis());
        g.view_mut((0, c), (n, k)).copy_from(delta.basis());
        Self::from_generators(n, &g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn space(&self) -> &Subspace {
        &self.space
    }

    /// Distance from `(v, a)` to the fiber.
    pub fn membership_residual(&self, v: &DVector<f64>, a: &DVector<f64>) -> f64 {
        let mut z = DVector::zeros(2 * self.n);
        z.rows_mut(0, self.n).copy_from(v);
        z.rows_mut(self.n, self.n).copy_from(a);
        self.space.distance_to(&z)
    }

    pub fn distance(&self, other: &ConstantDirac) -> Result<f64> {
        self.space.distance(&other.space)
    }

    fn tangent_inclusion(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut l = DMatrix::zeros(2 * n, n);
        l.view_mut((0, 0), (n, n)).fill_with_identity();
        l
    }

    fn cotangent_inclusion(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut l = DMatrix::zeros(2 * n, n);
        l.view_mut((n, 0), (n, n)).fill_with_identity();
        l
    }

    /// Δ = `{v : (v, 0) ∈ D}`.
    pub fn characteristic_distribution(&self) -> Subspace {
        self.space
            .preimage(&self.tangent_inclusion())
            .expect("dimensions agree by construction")
    }

    /// Γ, the cotangent projection of D.
    pub fn codistribution_gamma(&self) -> Subspace {
        self.space
            .image(&self.cotangent_inclusion().transpose())
            .expect("dimensions agree by construction")
    }

    /// Γ₀ = `{a : (0, a) ∈ D}`.
    pub fn codistribution_gamma0(&self) -> Subspace {
        self.space
            .preimage(&self.cotangent_inclusion())
            .expect("dimensions agree by construction")
    }

    /// Θ, the tangent projection of D.
    pub fn distribution_theta(&self) -> Subspace {
        self.space
            .image(&self.tangent_inclusion().transpose())
            .expect("dimensions agree by construction")
    }

    /// Pull back along an injective linear map `phi: R^d -> R^n`:
    /// `{(w, phi^T a) : (phi w, a) ∈ D}`.
    pub fn pullback(&self, phi: &DMatrix<f64>) -> Result<ConstantDirac> {
        let n = self.n;
        if phi.nrows() != n {
            return Err(DiracError::DimensionMismatch {
                expected: n,
                found: phi.nrows(),
            });
        }
        let d = phi.ncols();
        let b = self.space.basis();
        let (vb, ab) = (b.rows(0, n), b.rows(n, n));
        // (c, w) with V c = phi w
        let mut m = DMatrix::zeros(n, n + d);
        m.view_mut((0, 0), (n, n)).copy_from(&vb);
        m.view_mut((0, n), (n, d)).copy_from(&(-phi));
        let ker = null_space(&m, self.space.tol().max(1e-12));
        let (cs, ws) = (ker.rows(0, n), ker.rows(n, d));
        let mut gens = DMatrix::zeros(2 * d, ker.ncols());
        gens.view_mut((0, 0), (d, ker.ncols())).copy_from(&ws);
        gens.view_mut((d, 0), (d, ker.ncols()))
            .copy_from(&(phi.transpose() * ab * cs));
        ConstantDirac::new(Subspace::from_columns(&gens, DEFAULT_RANK_TOL))
    }

    /// Restriction to a subspace `tn` of the tangent fiber. The result is
    /// expressed in the orthonormal chart given by the columns of
    /// `tn.basis()`, which is returned alongside.
    pub fn restrict(&self, tn: &Subspace) -> Result<(ConstantDirac, DMatrix<f64>)> {
        let chart = tn.basis().clone();
        Ok((self.pullback(&chart)?, chart))
    }

    /// Push forward along a surjective linear map `tpi: R^n -> R^{n'}`:
    /// `{(tpi v, b) : (v, tpi^T b) ∈ D}`.
    pub fn project(&self, tpi: &DMatrix<f64>) -> Result<ConstantDirac> {
        let n = self.n;
        if tpi.ncols() != n {
            return Err(DiracError::DimensionMismatch {
                expected: n,
                found: tpi.ncols(),
            });
        }
        let np = tpi.nrows();
        let rank = crate::subspace::numerical_rank(tpi, DEFAULT_RANK_TOL);
        if rank < np {
            return Err(DiracError::RankDeficient { rank, rows: np });
        }
        let b = self.space.basis();
        let (vb, ab) = (b.rows(0, n), b.rows(n, n));
        // (c, b) with A c = tpi^T b
        let mut m = DMatrix::zeros(n, n + np);
        m.view_mut((0, 0), (n, n)).copy_from(&ab);
        m.view_mut((0, n), (n, np)).copy_from(&(-tpi.transpose()));
        let ker = null_space(&m, self.space.tol().max(1e-12));
        let (cs, bs) = (ker.rows(0, n), ker.rows(n, np));
        let mut gens = DMatrix::zeros(2 * np, ker.ncols());
        gens.view_mut((0, 0), (np, ker.ncols()))
            .copy_from(&(tpi * vb * cs));
        gens.view_mut((np, 0), (np, ker.ncols())).copy_from(&bs);
        ConstantDirac::new(Subspace::from_columns(&gens, DEFAULT_RANK_TOL))
    }
}
