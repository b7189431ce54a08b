//! Regular and singular reduction, realized pointwise.
//!
//! Regular reduction restricts the Dirac fibers to a level set `P^{-1}(μ)`
//! (described by a [`LevelSetChart`]) and pushes them forward along a quotient
//! map. Singular reduction at `μ = 0` works through an [`InvariantChart`]: the
//! reduced space is coordinatized by G-invariant functions `σ`, the reduced
//! bracket is the table `{σ_i, σ_j}`, and the reduced constraint directions
//! are the actions `X_i[σ_j]` of a projectable Δ-basis.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dirac_point::ConstantDirac;
use crate::error::{DiracError, Result};
use crate::fields::{fd_jacobian, lie_bracket, SmoothMap};
use crate::ihs_core::{ImplicitSystem, Trajectory};
use crate::report::CheckReport;
use crate::subspace::{null_space, Subspace, DEFAULT_RANK_TOL};
use crate::symmetry::{
    check_action_symmetry, momentum_rank, stabilizer_class, GroupAction, MomentumMap,
    SYMMETRY_TOL,
};

/// Level-set membership tolerance.
pub const LEVEL_TOL: f64 = 1e-9;

/// Agreement tolerance for projected fibers over one orbit.
pub const ORBIT_FIBER_TOL: f64 = 1e-8;

/// Orbit-independence tolerance for reduced bracket tables.
pub const TABLE_TOL: f64 = 1e-9;

/// Pass threshold for singular dynamics and projectability residuals.
pub const DYNAMICS_TOL: f64 = 1e-6;

/// Parametrization of a level set `N = P^{-1}(μ)` by `u ∈ R^d`, with a left
/// inverse `coords` mapping points of N back to chart coordinates.
#[derive(Debug, Clone)]
pub struct LevelSetChart {
    pub mu: DVector<f64>,
    pub parametrization: SmoothMap,
    pub coords: SmoothMap,
}

impl LevelSetChart {
    pub fn new(mu: DVector<f64>, parametrization: SmoothMap, coords: SmoothMap) -> Result<Self> {
        if coords.in_dim() != parametrization.out_dim()
            || coords.out_dim() != parametrization.in_dim()
        {
            return Err(DiracError::DimensionMismatch {
                expected: parametrization.in_dim(),
                found: coords.out_dim(),
            });
        }
        Ok(LevelSetChart {
            mu,
            parametrization,
            coords,
        })
    }

    /// The whole chart domain as a trivial level set.
    pub fn identity(n: usize) -> Self {
        let id = SmoothMap::linear(DMatrix::identity(n, n));
        LevelSetChart {
            mu: DVector::zeros(0),
            parametrization: id.clone(),
            coords: id,
        }
    }

    pub fn dim(&self) -> usize {
        self.parametrization.in_dim()
    }

    pub fn point(&self, u: &DVector<f64>) -> DVector<f64> {
        self.parametrization.eval(u)
    }

    pub fn tangent(&self, u: &DVector<f64>) -> DMatrix<f64> {
        self.parametrization.jacobian(u)
    }

    /// Checks `P(φ(u)) = μ`, full-rank tangents and `coords ∘ φ = id`.
    pub fn validate(&self, p: &MomentumMap, probes: &[DVector<f64>]) -> CheckReport {
        let mut rep = CheckReport::new("level-set-chart", LEVEL_TOL);
        for u in probes {
            let x = self.point(u);
            let off = if self.mu.is_empty() {
                0.0
            } else {
                (p.eval(&x) - &self.mu).amax()
            };
            rep.observe(u, off, "chart leaves the level set");
            let rank = crate::subspace::numerical_rank(&self.tangent(u), DEFAULT_RANK_TOL);
            if rank != self.dim() {
                rep.fail(u, format!("tangent rank {rank} < {}", self.dim()));
            }
            let back = (self.coords.eval(&x) - u).amax();
            if back > 1e-8 * u.norm().max(1.0) {
                rep.fail(u, format!("coords do not invert the parametrization ({back:.3e})"));
            }
        }
        rep.finish()
    }
}

/// G-invariant generators `σ: R^n -> R^k` with the relations and sign
/// constraints satisfied on the image of the zero level set.
#[derive(Debug, Clone)]
pub struct InvariantChart {
    pub sigmas: SmoothMap,
    /// `R^k -> R^l`, vanishing on `σ(N)`.
    pub relations: Option<SmoothMap>,
    /// `R^k -> R^q`, componentwise `>= 0` on `σ(N)`.
    pub inequalities: Option<SmoothMap>,
}

impl InvariantChart {
    pub fn new(sigmas: SmoothMap) -> Self {
        InvariantChart {
            sigmas,
            relations: None,
            inequalities: None,
        }
    }

    pub fn with_relations(mut self, r: SmoothMap) -> Self {
        self.relations = Some(r);
        self
    }

    pub fn with_inequalities(mut self, q: SmoothMap) -> Self {
        self.inequalities = Some(q);
        self
    }

    pub fn k(&self) -> usize {
        self.sigmas.out_dim()
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        self.sigmas.eval(x)
    }

    /// Invariance, relations, sign constraints and sampled orbit separation
    /// at points of N.
    pub fn validate(&self, action: &GroupAction, points: &[DVector<f64>]) -> CheckReport {
        let mut rep = CheckReport::new("invariant-chart", 1e-8);
        let mut images = Vec::with_capacity(points.len());
        for x in points {
            let dsig = self.sigmas.jacobian(x);
            let scale = x.norm_squared().max(1.0);
            let inv = action
                .generators()
                .iter()
                .map(|xi| (&dsig * xi.eval(x)).amax())
                .fold(0.0, f64::max);
            rep.observe(x, inv / scale, "sigma not invariant");
            let s = self.eval(x);
            if let Some(rel) = &self.relations {
                let r = rel.eval(&s).amax();
                rep.observe(x, r / scale.powi(2), "relation violated");
            }
            if let Some(q) = &self.inequalities {
                let worst = q.eval(&s).iter().cloned().fold(0.0_f64, |m, v| m.max(-v));
                rep.observe(x, worst / scale, "sign constraint violated");
            }
            images.push(s);
        }
        // distinct sampled orbits must have distinct images
        if action.has_flow() {
            for i in 0..points.len() {
                for j in (i + 1)..points.len() {
                    if (&images[i] - &images[j]).amax() > 1e-10 {
                        continue;
                    }
                    let same_orbit = action
                        .orbit(&points[i])
                        .map(|orb| orb.iter().any(|y| (y - &points[j]).amax() < 1e-6))
                        .unwrap_or(false);
                    if !same_orbit {
                        rep.fail(&points[j], "sigma identifies points on different orbits");
                    }
                }
            }
        }
        rep.finish()
    }
}

/// `{σ_i, σ_j}(x) = Dσ J Dσ^T`.
pub fn bracket_table_at(sys: &ImplicitSystem, chart: &InvariantChart, x: &DVector<f64>) -> DMatrix<f64> {
    let ds = chart.sigmas.jacobian(x);
    &ds * sys.j().matrix(x) * ds.transpose()
}

/// Actions `X_i[σ_j](x)` of a Δ-basis on the invariants, as an `m × k` array.
pub fn basis_actions_at(basis: &[SmoothMap], chart: &InvariantChart, x: &DVector<f64>) -> DMatrix<f64> {
    let ds = chart.sigmas.jacobian(x);
    let mut out = DMatrix::zeros(basis.len(), chart.k());
    for (i, b) in basis.iter().enumerate() {
        out.set_row(i, &(&ds * b.eval(x)).transpose());
    }
    out
}

/// The reduced pair (bracket table, projected Δ-basis) on `P^{-1}(0)/G`.
#[derive(Debug, Clone)]
pub struct TopologicalDirac {
    pub chart: InvariantChart,
    pub projected_basis: Vec<SmoothMap>,
}

impl TopologicalDirac {
    pub fn new(chart: InvariantChart, projected_basis: Vec<SmoothMap>) -> Self {
        TopologicalDirac {
            chart,
            projected_basis,
        }
    }

    pub fn bracket_table(&self, sys: &ImplicitSystem, x: &DVector<f64>) -> DMatrix<f64> {
        bracket_table_at(sys, &self.chart, x)
    }

    pub fn basis_actions(&self, x: &DVector<f64>) -> DMatrix<f64> {
        basis_actions_at(&self.projected_basis, &self.chart, x)
    }

    /// Skewness of the table plus orbit-independence of the table and of the
    /// basis actions.
    pub fn well_definedness(
        &self,
        sys: &ImplicitSystem,
        action: &GroupAction,
        points: &[DVector<f64>],
    ) -> Result<CheckReport> {
        let mut rep = CheckReport::new("topological-dirac", TABLE_TOL);
        for x in points {
            let t = self.bracket_table(sys, x);
            let skew = (&t + t.transpose()).amax();
            let b = self.basis_actions(x);
            let mut dev = skew;
            for y in action.orbit(x)? {
                dev = dev.max((self.bracket_table(sys, &y) - &t).amax());
                dev = dev.max((self.basis_actions(&y) - &b).amax());
            }
            rep.observe(x, dev, "reduced data depends on the orbit representative");
        }
        Ok(rep.finish())
    }
}

/// Pointwise Dirac fiber restricted to a level-set chart, in chart coordinates.
#[derive(Debug, Clone)]
pub struct RestrictedFiber {
    pub u: DVector<f64>,
    pub x: DVector<f64>,
    pub fiber: ConstantDirac,
}

pub fn restricted_fiber(
    sys: &ImplicitSystem,
    chart: &LevelSetChart,
    u: &DVector<f64>,
) -> Result<RestrictedFiber> {
    let x = chart.point(u);
    let d = sys.dirac_at(&x)?;
    let fiber = d.pullback(&chart.tangent(u))?;
    Ok(RestrictedFiber {
        u: u.clone(),
        x,
        fiber,
    })
}

fn check_constant_dim(points: &[(DVector<f64>, usize)]) -> Result<()> {
    if let Some((p0, d0)) = points.first() {
        for (p, d) in points.iter().skip(1) {
            if d != d0 {
                return Err(DiracError::DimensionJump {
                    point_a: p0.as_slice().to_vec(),
                    dim_a: *d0,
                    point_b: p.as_slice().to_vec(),
                    dim_b: *d,
                });
            }
        }
    }
    Ok(())
}

/// Restrict `D` to the level set at every probe, checking that
/// `D ∩ (TN × T*M)` has constant dimension.
pub fn restrict_system(
    sys: &ImplicitSystem,
    p: &MomentumMap,
    chart: &LevelSetChart,
    probes: &[DVector<f64>],
) -> Result<Vec<RestrictedFiber>> {
    let valid = chart.validate(p, probes);
    if !valid.pass {
        return Err(DiracError::Precondition(format!(
            "level-set chart invalid: {}",
            valid
                .failures
                .first()
                .map(|f| f.detail.clone())
                .unwrap_or_default()
        )));
    }
    let mut dims = Vec::with_capacity(probes.len());
    let mut out = Vec::with_capacity(probes.len());
    for u in probes {
        let x = chart.point(u);
        let d = sys.dirac_at(&x)?;
        let tn = Subspace::from_columns(&chart.tangent(u), DEFAULT_RANK_TOL);
        // dim of D ∩ (TN × R^n)
        let n = sys.n();
        let mut emb = DMatrix::zeros(2 * n, tn.dim() + n);
        emb.view_mut((0, 0), (n, tn.dim())).copy_from(tn.basis());
        emb.view_mut((n, tn.dim()), (n, n)).fill_with_identity();
        let e = Subspace::from_columns(&emb, DEFAULT_RANK_TOL);
        dims.push((x.clone(), d.space().intersect(&e)?.dim()));
        out.push(restricted_fiber(sys, chart, u)?);
    }
    check_constant_dim(&dims)?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ProjectedFiber {
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    pub fiber: ConstantDirac,
}

fn projected_fiber(
    sys: &ImplicitSystem,
    chart: &LevelSetChart,
    quotient: &SmoothMap,
    u: &DVector<f64>,
) -> Result<ProjectedFiber> {
    let r = restricted_fiber(sys, chart, u)?;
    let tpi = quotient.jacobian(u);
    Ok(ProjectedFiber {
        u: u.clone(),
        y: quotient.eval(u),
        fiber: r.fiber.project(&tpi)?,
    })
}

/// Push the restricted fibers forward along `quotient: R^d -> R^{d'}` and
/// check that fibers over one orbit agree.
pub fn project_system(
    sys: &ImplicitSystem,
    action: &GroupAction,
    chart: &LevelSetChart,
    quotient: &SmoothMap,
    probes: &[DVector<f64>],
) -> Result<(Vec<ProjectedFiber>, CheckReport)> {
    let mut rep = CheckReport::new("projected-fibers-orbit-agreement", ORBIT_FIBER_TOL);
    let mut out = Vec::with_capacity(probes.len());
    let mut dims = Vec::new();
    for u in probes {
        let pf = projected_fiber(sys, chart, quotient, u)?;
        dims.push((u.clone(), pf.fiber.space().dim()));
        let x = chart.point(u);
        let mut worst = 0.0_f64;
        if action.has_flow() {
            for gx in action.orbit(&x)? {
                let u2 = chart.coords.eval(&gx);
                let other = projected_fiber(sys, chart, quotient, &u2)?;
                let base_gap = (&other.y - &pf.y).amax();
                if base_gap > 1e-8 * pf.y.norm().max(1.0) {
                    rep.fail(
                        &u2,
                        format!("quotient map is not orbit-invariant (gap {base_gap:.3e} from {u:?})"),
                    );
                }
                worst = worst.max(other.fiber.distance(&pf.fiber)?);
            }
        }
        rep.observe(u, worst, "fibers over one orbit disagree");
        out.push(pf);
    }
    check_constant_dim(&dims)?;
    Ok((out, rep.finish()))
}

/// Reduced bracket table at `x ∈ P^{-1}(0)`, checked for orbit independence.
pub fn reduced_bracket_table(
    sys: &ImplicitSystem,
    action: &GroupAction,
    p: &MomentumMap,
    chart: &InvariantChart,
    x: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let off = p.eval(x).amax();
    if off > LEVEL_TOL * x.norm().max(1.0) {
        return Err(DiracError::Precondition(format!(
            "point is off P^-1(0) by {off:.3e}"
        )));
    }
    let t = bracket_table_at(sys, chart, x);
    let dev = orbit_table_deviation(sys, action, chart, x, &t)?;
    if dev > TABLE_TOL {
        return Err(DiracError::Precondition(format!(
            "bracket table depends on the orbit representative (deviation {dev:.3e})"
        )));
    }
    Ok(t)
}

fn orbit_table_deviation(
    sys: &ImplicitSystem,
    action: &GroupAction,
    chart: &InvariantChart,
    x: &DVector<f64>,
    t: &DMatrix<f64>,
) -> Result<f64> {
    let mut dev = 0.0_f64;
    for y in action.orbit(x)? {
        dev = dev.max((bracket_table_at(sys, chart, &y) - t).amax());
    }
    Ok(dev)
}

/// Orbit independence and skewness of the reduced table at many points.
pub fn reduced_bracket_check(
    sys: &ImplicitSystem,
    action: &GroupAction,
    p: &MomentumMap,
    chart: &InvariantChart,
    points: &[DVector<f64>],
) -> Result<CheckReport> {
    let mut rep = CheckReport::new("reduced-bracket", TABLE_TOL);
    for x in points {
        let off = p.eval(x).amax();
        if off > LEVEL_TOL * x.norm().max(1.0) {
            return Err(DiracError::Precondition(format!(
                "point {:?} is off P^-1(0) by {off:.3e}",
                x.as_slice()
            )));
        }
        let t = bracket_table_at(sys, chart, x);
        let skew = (&t + t.transpose()).amax();
        let dev = orbit_table_deviation(sys, action, chart, x, &t)?;
        rep.observe(x, dev.max(skew), "table not skew or orbit-dependent");
    }
    Ok(rep.finish())
}

/// Largest cyclic sum `{σ_a,{σ_b,σ_c}} + {σ_b,{σ_c,σ_a}} + {σ_c,{σ_a,σ_b}}`.
pub fn reduced_jacobiator(sys: &ImplicitSystem, chart: &InvariantChart, x: &DVector<f64>) -> f64 {
    let k = chart.k();
    let ds = chart.sigmas.jacobian(x);
    let jm = sys.j().matrix(x);
    let table = |y: &DVector<f64>| {
        let t = bracket_table_at(sys, chart, y);
        DVector::from_iterator(k * k, t.iter().cloned())
    };
    // column-major flattening: entry (b, c) at index b + c k
    let dt = fd_jacobian(&table, x, k * k, 1e-5);
    let outer = |a: usize, b: usize, c: usize| -> f64 {
        let grad = dt.row(b + c * k).transpose();
        ds.row(a).dot(&(&jm * grad).transpose())
    };
    let mut worst = 0.0_f64;
    for a in 0..k {
        for b in 0..k {
            for c in 0..k {
                let s = outer(a, b, c) + outer(b, c, a) + outer(c, a, b);
                worst = worst.max(s.abs());
            }
        }
    }
    worst
}

/// Checks `[X_i, ξ_M] ∈ span{ξ_M}` and `L_ξ(X_i[f]) = 0` for the invariant
/// test functions `f`.
pub fn projectable_basis_check(
    sys: &ImplicitSystem,
    action: &GroupAction,
    basis: &[SmoothMap],
    invariants: &SmoothMap,
    probes: &[DVector<f64>],
) -> Result<CheckReport> {
    let mut rep = CheckReport::new("projectable-basis", DYNAMICS_TOL);
    for x in probes {
        let delta = sys.delta().subspace(x);
        let mut bm = DMatrix::zeros(sys.n(), basis.len());
        for (i, b) in basis.iter().enumerate() {
            bm.set_column(i, &b.eval(x));
        }
        let bs = Subspace::from_columns(&bm, DEFAULT_RANK_TOL);
        if bs.dim() != basis.len() || bs.distance(&delta)? > 1e-8 {
            return Err(DiracError::Precondition(format!(
                "basis does not span the constraint distribution at {:?}",
                x.as_slice()
            )));
        }
        let v = Subspace::from_columns(&action.generator_matrix(x), DEFAULT_RANK_TOL);
        let mut worst = 0.0_f64;
        for b in basis {
            for xi in action.generators() {
                worst = worst.max(v.distance_to(&lie_bracket(b, xi, x)));
                let xv = xi.eval(x);
                let eps = 1e-5 / xv.norm().max(1.0);
                let act = |y: &DVector<f64>| invariants.jacobian(y) * b.eval(y);
                let d = (act(&(x + &xv * eps)) - act(&(x - &xv * eps))) / (2.0 * eps);
                worst = worst.max(d.amax());
            }
        }
        rep.observe(x, worst, "basis field is not projectable");
    }
    Ok(rep.finish())
}

/// Per-sample residuals of the singular reduced dynamics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingularDynamicsReport {
    pub times: Vec<f64>,
    /// `max_i |d/dt σ_i − {σ_i, H} − Σ λ_j X_j[σ_i]|`.
    pub sigma_residual: Vec<f64>,
    /// `max_j |X_j[H]|`.
    pub constraint_residual: Vec<f64>,
    /// `max_f |d/dt f_0 − {f_0, H_0}_0|` over admissible test functions.
    pub admissible_residual: Vec<f64>,
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Fourth-order finite-difference derivative of uniformly sampled data.
pub(crate) fn time_derivative(values: &[DVector<f64>], dt: f64) -> Vec<DVector<f64>> {
    let n = values.len();
    let f = |i: usize| &values[i];
    (0..n)
        .map(|i| {
            let d = if i >= 2 && i + 2 < n {
                (f(i - 2) - f(i - 1) * 8.0 + f(i + 1) * 8.0 - f(i + 2)) / 12.0
            } else if i < 2 {
                let s = |k: usize| f(i + k);
                match i {
                    0 => (s(0) * -25.0 + s(1) * 48.0 - s(2) * 36.0 + s(3) * 16.0 - s(4) * 3.0) / 12.0,
                    _ => (f(i - 1) * -3.0 - s(0) * 10.0 + s(1) * 18.0 - s(2) * 6.0 + s(3)) / 12.0,
                }
            } else {
                let s = |k: usize| f(i - k);
                if i + 1 == n {
                    (s(0) * 25.0 - s(1) * 48.0 + s(2) * 36.0 - s(3) * 16.0 + s(4) * 3.0) / 12.0
                } else {
                    (f(i + 1) * 3.0 + s(0) * 10.0 - s(1) * 18.0 + s(2) * 6.0 - s(3)) / 12.0
                }
            };
            d / dt
        })
        .collect()
}

/// Residuals of the singular reduced dynamics along a trajectory on
/// `P^{-1}(0)`, using the trajectory's recorded multipliers.
pub fn singular_dynamics_residual(
    sys: &ImplicitSystem,
    action: &GroupAction,
    p: &MomentumMap,
    chart: &InvariantChart,
    traj: &Trajectory,
    admissible: &[SmoothMap],
) -> Result<SingularDynamicsReport> {
    let len = traj.len();
    if len < 5 {
        return Err(DiracError::Precondition(
            "trajectory needs at least 5 samples".into(),
        ));
    }
    let dt = traj.times[1] - traj.times[0];
    for w in traj.times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1.0) {
            return Err(DiracError::Precondition(
                "trajectory samples must be uniformly spaced".into(),
            ));
        }
    }
    for x in &traj.states {
        let off = p.eval(x).amax();
        if off > 1e-8 {
            return Err(DiracError::Precondition(format!(
                "trajectory leaves P^-1(0) (|P| = {off:.3e})"
            )));
        }
    }
    let stride = (len / 20).max(1);
    let sampled: Vec<DVector<f64>> = traj.states.iter().step_by(stride).cloned().collect();
    let sym = check_action_symmetry(sys, action, &sampled);
    if sym.max_h >= SYMMETRY_TOL {
        return Err(DiracError::Precondition(format!(
            "Hamiltonian is not G-invariant (|L_xi H| = {:.3e})",
            sym.max_h
        )));
    }

    let sigmas: Vec<DVector<f64>> = traj.states.iter().map(|x| chart.eval(x)).collect();
    let rates = time_derivative(&sigmas, dt);
    let f_values: Vec<DVector<f64>> = sigmas
        .iter()
        .map(|s| DVector::from_iterator(admissible.len(), admissible.iter().map(|f| f.eval_scalar(s))))
        .collect();
    let f_rates = time_derivative(&f_values, dt);

    let mut out = SingularDynamicsReport {
        times: traj.times.clone(),
        sigma_residual: Vec::with_capacity(len),
        constraint_residual: Vec::with_capacity(len),
        admissible_residual: Vec::with_capacity(len),
        max_residual: 0.0,
        tolerance: DYNAMICS_TOL,
        pass: true,
    };
    for (i, x) in traj.states.iter().enumerate() {
        let ds = chart.sigmas.jacobian(x);
        let jm = sys.j().matrix(x);
        let dh = sys.grad_h(x);
        let g = sys.delta().matrix(x);
        // {σ_i, H} + Σ λ_j X_j[σ_i]
        let mut model = &ds * (&jm * &dh);
        if g.ncols() > 0 {
            model += &ds * (&g * &traj.multipliers[i]);
        }
        let r_sigma = (&rates[i] - model).amax();
        let r_constraint = if g.ncols() > 0 { (g.transpose() * &dh).amax() } else { 0.0 };
        let mut r_adm = 0.0_f64;
        for (a, f) in admissible.iter().enumerate() {
            // {f∘σ, H}(x) realizes {f_0, H_0}_0 at γ(t)
            let df = f.gradient(&sigmas[i]);
            let grad_x = ds.transpose() * df;
            let br = grad_x.dot(&(&jm * &dh));
            r_adm = r_adm.max((f_rates[i][a] - br).abs());
        }
        out.sigma_residual.push(r_sigma);
        out.constraint_residual.push(r_constraint);
        out.admissible_residual.push(r_adm);
        out.max_residual = out.max_residual.max(r_sigma).max(r_constraint).max(r_adm);
    }
    out.pass = out.max_residual < DYNAMICS_TOL;
    Ok(out)
}

/// Tangent space of the orbit-type manifold through `x`: the tangent space
/// of the fixed-point set of the (identity component of the) stabilizer,
/// plus the orbit directions.
pub fn orbit_type_tangent(action: &GroupAction, x: &DVector<f64>) -> Subspace {
    let n = action.n();
    let iso = action.isotropy_algebra(x);
    if iso.ncols() == 0 {
        return Subspace::full(n);
    }
    let jacs: Vec<DMatrix<f64>> = action.generators().iter().map(|g| g.jacobian(x)).collect();
    let mut stacked = DMatrix::zeros(n * iso.ncols(), n);
    for c in 0..iso.ncols() {
        let mut lin = DMatrix::zeros(n, n);
        for (a, j) in jacs.iter().enumerate() {
            lin += j * iso[(a, c)];
        }
        stacked.view_mut((c * n, 0), (n, n)).copy_from(&lin);
    }
    let fix = null_space(&stacked, DEFAULT_RANK_TOL);
    let gm = action.generator_matrix(x);
    let mut all = DMatrix::zeros(n, fix.ncols() + gm.ncols());
    all.view_mut((0, 0), (n, fix.ncols())).copy_from(&fix);
    all.view_mut((0, fix.ncols()), (n, gm.ncols())).copy_from(&gm);
    Subspace::from_columns(&all, DEFAULT_RANK_TOL)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stratum {
    pub label: String,
    pub count: usize,
    /// Invariant coordinates of the first point seen in this stratum.
    pub representative_sigma: Vec<f64>,
    /// Bracket table at the representative point, row-major.
    pub representative_table: Vec<Vec<f64>>,
    /// `max |{σ_i,σ_j}_(K) − {σ_i,σ_j}|` over the stratum's points.
    pub max_table_deviation: f64,
    /// `max |X_i[σ]` through the stratum tangent projector `− X_i[σ]|`.
    pub max_basis_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrataReport {
    pub labels: Vec<String>,
    pub strata: Vec<Stratum>,
    pub tolerance: f64,
    pub pass: bool,
}

impl StrataReport {
    pub fn stratum(&self, label: &str) -> Option<&Stratum> {
        self.strata.iter().find(|s| s.label == label)
    }
}

/// Label points of `P^{-1}(0)` by orbit type and compare each stratum's
/// bracket table (Hamiltonian fields projected to the stratum) with the
/// singular table.
pub fn piece_classification(
    sys: &ImplicitSystem,
    action: &GroupAction,
    p: &MomentumMap,
    chart: &InvariantChart,
    points: &[DVector<f64>],
) -> Result<StrataReport> {
    if !action.has_flow() {
        return Err(DiracError::MissingFlow);
    }
    let mut labels = Vec::with_capacity(points.len());
    let mut strata: Vec<Stratum> = Vec::new();
    for x in points {
        let off = p.eval(x).amax();
        if off > LEVEL_TOL * x.norm().max(1.0) {
            return Err(DiracError::Precondition(format!(
                "point {:?} is off P^-1(0) by {off:.3e}",
                x.as_slice()
            )));
        }
        let delta = sys.delta().subspace(x);
        let orbit_dirs = Subspace::from_columns(&action.generator_matrix(x), DEFAULT_RANK_TOL);
        let orbit_dirs = if action.isotropy_dimension(x) == action.r() {
            Subspace::zero(sys.n())
        } else {
            orbit_dirs
        };
        if delta.intersect(&orbit_dirs)?.dim() > 0 {
            return Err(DiracError::Precondition(format!(
                "constraint distribution meets the orbit directions at {:?}",
                x.as_slice()
            )));
        }
        let label = stabilizer_class(action, x)?.orbit_type.label();
        let tangent = orbit_type_tangent(action, x);
        let proj = tangent.projector();
        let ds = chart.sigmas.jacobian(x);
        let jm = sys.j().matrix(x);
        let t = &ds * &jm * ds.transpose();
        let tk = &ds * &proj * &jm * ds.transpose();
        let tdev = (&tk - &t).amax();
        let g = sys.delta().matrix(x);
        let bdev = if g.ncols() > 0 {
            (&ds * &proj * &g - &ds * &g).amax()
        } else {
            0.0
        };
        match strata.iter_mut().find(|s| s.label == label) {
            Some(s) => {
                s.count += 1;
                s.max_table_deviation = s.max_table_deviation.max(tdev);
                s.max_basis_deviation = s.max_basis_deviation.max(bdev);
            }
            None => strata.push(Stratum {
                label: label.clone(),
                count: 1,
                representative_sigma: chart.eval(x).as_slice().to_vec(),
                representative_table: (0..t.nrows())
                    .map(|i| t.row(i).iter().cloned().collect())
                    .collect(),
                max_table_deviation: tdev,
                max_basis_deviation: bdev,
            }),
        }
        labels.push(label);
    }
    let pass = strata.iter().all(|s| s.max_table_deviation <= TABLE_TOL);
    Ok(StrataReport {
        labels,
        strata,
        tolerance: TABLE_TOL,
        pass,
    })
}

/// Orbit-type labels along a trajectory.
pub fn labels_along(action: &GroupAction, traj: &Trajectory) -> Result<Vec<String>> {
    traj.states
        .iter()
        .map(|x| stabilizer_class(action, x).map(|c| c.orbit_type.label()))
        .collect()
}

/// Compare two-step pointwise reduction with `from_j_delta` of the reduced
/// bracket table and projected Δ in the quotient chart `y = invariant_to_chart(x)`.
pub fn regular_equality_check(
    sys: &ImplicitSystem,
    action: &GroupAction,
    p: &MomentumMap,
    level_chart: &LevelSetChart,
    invariant_to_chart: &SmoothMap,
    probes: &[DVector<f64>],
) -> Result<CheckReport> {
    for u in probes {
        let x = level_chart.point(u);
        if momentum_rank(p, &x) != p.r() {
            return Err(DiracError::Precondition(format!(
                "mu is not a regular value (rank drop at {:?})",
                x.as_slice()
            )));
        }
    }
    let restricted = restrict_system(sys, p, level_chart, probes)?;
    let quotient = invariant_to_chart.compose(&level_chart.parametrization);
    let mut rep = CheckReport::new("regular-equality", ORBIT_FIBER_TOL);
    for r in &restricted {
        let two_step = r.fiber.project(&quotient.jacobian(&r.u))?;
        let dy = invariant_to_chart.jacobian(&r.x);
        let j0 = &dy * sys.j().matrix(&r.x) * dy.transpose();
        let j0 = (&j0 - j0.transpose()) * 0.5;
        let delta_hat = Subspace::from_columns(&(&dy * sys.delta().matrix(&r.x)), DEFAULT_RANK_TOL);
        let reduced = ConstantDirac::from_j_delta(&j0, &delta_hat)?;
        rep.observe(&r.u, two_step.distance(&reduced)?, "two-step reduction differs");
    }
    let _ = action;
    Ok(rep.finish())
}
