//! Group actions through infinitesimal generators, momentum maps and the
//! pointwise checks that make a group a symmetry of an implicit system.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{DiracError, Result};
use crate::fields::{lie_bracket, symmetry_residual_delta, symmetry_residual_j, SmoothMap};
use crate::ihs_core::ImplicitSystem;
use crate::report::CheckReport;
use crate::subspace::{null_space_abs, DEFAULT_RANK_TOL};

/// `flow(t, x)`: the group element `exp(Σ t_a ξ_a)` acting on `x`.
pub type FlowFn = Arc<dyn Fn(&[f64], &DVector<f64>) -> DVector<f64> + Send + Sync>;

/// Generator-norm threshold below which a point counts as fixed.
pub const FIXED_TOL: f64 = 1e-9;

/// Pass threshold for symmetry residuals.
pub const SYMMETRY_TOL: f64 = 1e-6;

/// Pass threshold for momentum membership.
pub const MOMENTUM_TOL: f64 = 1e-8;

#[derive(Clone)]
pub struct GroupAction {
    n: usize,
    generators: Vec<SmoothMap>,
    flow: Option<FlowFn>,
    /// `c[a][b][k]` with `[ξ_a, ξ_b] = Σ_k c[a][b][k] ξ_k`.
    structure_constants: Vec<Vec<Vec<f64>>>,
    group_samples: Vec<Vec<f64>>,
}

impl fmt::Debug for GroupAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GroupAction")
            .field("n", &self.n)
            .field("r", &self.generators.len())
            .field("has_flow", &self.flow.is_some())
            .field("group_samples", &self.group_samples.len())
            .finish()
    }
}

impl GroupAction {
    /// Abelian action (zero structure constants) without a flow.
    pub fn new(n: usize, generators: Vec<SmoothMap>) -> Result<Self> {
        for g in &generators {
            if g.in_dim() != n || g.out_dim() != n {
                return Err(DiracError::DimensionMismatch {
                    expected: n,
                    found: g.out_dim(),
                });
            }
        }
        let r = generators.len();
        Ok(GroupAction {
            n,
            generators,
            flow: None,
            structure_constants: vec![vec![vec![0.0; r]; r]; r],
            group_samples: Vec::new(),
        })
    }

    pub fn trivial(n: usize) -> Self {
        GroupAction::new(n, Vec::new())
            .expect("no generators to check")
            .with_flow(|_, x| x.clone(), Vec::new())
    }

    pub fn with_flow<F>(mut self, flow: F, group_samples: Vec<Vec<f64>>) -> Self
    where
        F: Fn(&[f64], &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        self.flow = Some(Arc::new(flow));
        self.group_samples = group_samples;
        self
    }

    pub fn with_structure_constants(mut self, c: Vec<Vec<Vec<f64>>>) -> Self {
        self.structure_constants = c;
        self
    }

    pub fn with_group_samples(mut self, samples: Vec<Vec<f64>>) -> Self {
        self.group_samples = samples;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.generators.len()
    }

    pub fn generators(&self) -> &[SmoothMap] {
        &self.generators
    }

    pub fn has_flow(&self) -> bool {
        self.flow.is_some()
    }

    pub fn group_samples(&self) -> &[Vec<f64>] {
        &self.group_samples
    }

    pub fn act(&self, t: &[f64], x: &DVector<f64>) -> Result<DVector<f64>> {
        match &self.flow {
            Some(f) => Ok(f(t, x)),
            None => Err(DiracError::MissingFlow),
        }
    }

    /// Orbit translates `g·x` for every group sample.
    pub fn orbit(&self, x: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        self.group_samples.iter().map(|t| self.act(t, x)).collect()
    }

    /// `n × r` matrix with columns `ξ_M(x)`.
    pub fn generator_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.r());
        for (a, g) in self.generators.iter().enumerate() {
            m.set_column(a, &g.eval(x));
        }
        m
    }

    /// `max_{a,b} |[ξ_a,M, ξ_b,M] + ([ξ_a, ξ_b])_M|`.
    pub fn anti_homomorphism_residual(&self, x: &DVector<f64>) -> f64 {
        let r = self.r();
        let mut worst = 0.0_f64;
        for a in 0..r {
            for b in 0..r {
                let mut lhs = lie_bracket(&self.generators[a], &self.generators[b], x);
                for k in 0..r {
                    let c = self.structure_constants[a][b][k];
                    if c != 0.0 {
                        lhs += self.generators[k].eval(x) * c;
                    }
                }
                worst = worst.max(lhs.norm());
            }
        }
        worst
    }

    /// Dimension of the isotropy algebra `g_x` (generators vanishing at x).
    pub fn isotropy_dimension(&self, x: &DVector<f64>) -> usize {
        self.r() - rank_abs(&self.generator_matrix(x), FIXED_TOL)
    }

    /// Basis of `g_x` as coefficient vectors in the generator basis.
    pub fn isotropy_algebra(&self, x: &DVector<f64>) -> DMatrix<f64> {
        null_space_abs(&self.generator_matrix(x), FIXED_TOL)
    }
}

fn rank_abs(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    crate::subspace::singular_values(m).iter().filter(|&&s| s > tol).count()
}

/// Momentum map `P: R^n -> R^r`, component `a` paired with generator `a`.
#[derive(Debug, Clone)]
pub struct MomentumMap {
    map: SmoothMap,
}

impl MomentumMap {
    pub fn new(map: SmoothMap) -> Self {
        MomentumMap { map }
    }

    pub fn zero(n: usize, r: usize) -> Self {
        MomentumMap {
            map: SmoothMap::zero(n, r),
        }
    }

    pub fn map(&self) -> &SmoothMap {
        &self.map
    }

    pub fn r(&self) -> usize {
        self.map.out_dim()
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        self.map.eval(x)
    }

    /// `dP_a(x)`.
    pub fn differential(&self, x: &DVector<f64>, a: usize) -> DVector<f64> {
        self.map.jacobian(x).row(a).transpose()
    }

    /// Scalar component `P_a` as its own map.
    pub fn component(&self, a: usize) -> SmoothMap {
        let (m1, m2) = (self.map.clone(), self.map.clone());
        SmoothMap::new(self.map.in_dim(), 1, move |x| DVector::from_element(1, m1.eval(x)[a]))
            .with_jacobian(move |x| m2.jacobian(x).rows(a, 1).into_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SymmetryReport {
    pub max_j: f64,
    pub max_delta: f64,
    pub max_h: f64,
    pub probes: usize,
    pub pass: bool,
}

impl SymmetryReport {
    pub fn max_residual(&self) -> f64 {
        self.max_j.max(self.max_delta).max(self.max_h)
    }
}

/// Residuals of `L_ξ J`, `L_ξ Δ` and `L_ξ H` over generators and probes.
pub fn check_action_symmetry(
    sys: &ImplicitSystem,
    action: &GroupAction,
    probes: &[DVector<f64>],
) -> SymmetryReport {
    let (mut mj, mut md, mut mh) = (0.0_f64, 0.0_f64, 0.0_f64);
    for x in probes {
        let dh = sys.grad_h(x);
        for xi in action.generators() {
            mj = mj.max(symmetry_residual_j(xi, sys.j(), x));
            md = md.max(symmetry_residual_delta(xi, sys.delta(), x));
            mh = mh.max(dh.dot(&xi.eval(x)).abs());
        }
    }
    SymmetryReport {
        max_j: mj,
        max_delta: md,
        max_h: mh,
        probes: probes.len(),
        pass: mj < SYMMETRY_TOL && md < SYMMETRY_TOL && mh < SYMMETRY_TOL,
    }
}

/// Distance of `(ξ_M(x), dP_ξ(x))` from `D(x)`, for every generator and probe.
pub fn check_momentum_membership(
    sys: &ImplicitSystem,
    action: &GroupAction,
    p: &MomentumMap,
    probes: &[DVector<f64>],
) -> Result<CheckReport> {
    if p.r() != action.r() {
        return Err(DiracError::DimensionMismatch {
            expected: action.r(),
            found: p.r(),
        });
    }
    let mut rep = CheckReport::new("momentum-membership", MOMENTUM_TOL);
    for x in probes {
        let d = sys.dirac_at(x)?;
        let jac = p.map().jacobian(x);
        let mut worst = 0.0_f64;
        for (a, xi) in action.generators().iter().enumerate() {
            let dp = jac.row(a).transpose();
            worst = worst.max(d.membership_residual(&xi.eval(x), &dp));
        }
        rep.observe(x, worst, "(xi_M, dP_xi) not in D");
    }
    Ok(rep.finish())
}

/// Largest `|<dP_a, g_j>|`: Δ-sections are tangent to the level sets of P.
pub fn delta_tangency_residual(sys: &ImplicitSystem, p: &MomentumMap, x: &DVector<f64>) -> f64 {
    let g = sys.delta().matrix(x);
    if g.ncols() == 0 || p.r() == 0 {
        return 0.0;
    }
    (p.map().jacobian(x) * g).abs().max()
}

/// Cotangent lift of an action on `Q = R^d` to `T*Q` in coordinates `(q, p)`.
///
/// Generators become `(ξ_Q(q), -(∂ξ_Q/∂q)^T p)` and the momentum map is
/// `P_ξ(q, p) = p^T ξ_Q(q)`. A base flow `φ_t(q)` lifts to
/// `(φ_t(q), (Dφ_t(q))^{-T} p)` with `Dφ_t` by central differences.
pub fn lifted_cotangent_action(
    d: usize,
    base_generators: &[SmoothMap],
    base_flow: Option<FlowFn>,
    group_samples: Vec<Vec<f64>>,
) -> Result<(GroupAction, MomentumMap)> {
    for g in base_generators {
        if g.in_dim() != d || g.out_dim() != d {
            return Err(DiracError::DimensionMismatch {
                expected: d,
                found: g.out_dim(),
            });
        }
    }
    let n = 2 * d;
    let gens: Vec<SmoothMap> = base_generators
        .iter()
        .map(|xi| {
            let xi = xi.clone();
            SmoothMap::new(n, n, move |x| {
                let q = x.rows(0, d).into_owned();
                let p = x.rows(d, d).into_owned();
                let mut out = DVector::zeros(n);
                out.rows_mut(0, d).copy_from(&xi.eval(&q));
                out.rows_mut(d, d).copy_from(&(-(xi.jacobian(&q).transpose() * p)));
                out
            })
        })
        .collect();
    let base: Vec<SmoothMap> = base_generators.to_vec();
    let r = base.len();
    let base2 = base.clone();
    let momentum = SmoothMap::new(n, r, move |x| {
        let q = x.rows(0, d).into_owned();
        let p = x.rows(d, d).into_owned();
        DVector::from_iterator(r, base.iter().map(|xi| p.dot(&xi.eval(&q))))
    })
    .with_jacobian(move |x| {
        let q = x.rows(0, d).into_owned();
        let p = x.rows(d, d).into_owned();
        let mut jac = DMatrix::zeros(r, n);
        for (a, xi) in base2.iter().enumerate() {
            let dq = xi.jacobian(&q).transpose() * &p;
            jac.view_mut((a, 0), (1, d)).copy_from(&dq.transpose());
            jac.view_mut((a, d), (1, d)).copy_from(&xi.eval(&q).transpose());
        }
        jac
    });
    let mut action = GroupAction::new(n, gens)?;
    if let Some(flow) = base_flow {
        action = action.with_flow(
            move |t, x| {
                let q = x.rows(0, d).into_owned();
                let p = x.rows(d, d).into_owned();
                let phi = |y: &DVector<f64>| flow(t, y);
                let dphi = crate::fields::fd_jacobian(&phi, &q, d, 1e-6);
                let p_new = dphi
                    .transpose()
                    .lu()
                    .solve(&p)
                    .unwrap_or_else(|| DVector::from_element(d, f64::NAN));
                let mut out = DVector::zeros(n);
                out.rows_mut(0, d).copy_from(&flow(t, &q));
                out.rows_mut(d, d).copy_from(&p_new);
                out
            },
            group_samples,
        );
    } else {
        action = action.with_group_samples(group_samples);
    }
    Ok((action, MomentumMap::new(momentum)))
}

/// Orbit type of a point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OrbitType {
    /// Every generator vanishes.
    Fixed,
    /// Trivial stabilizer on the sampled grid.
    Free,
    /// Continuous stabilizer of the given dimension, short of the full group.
    Partial { isotropy_dim: usize },
    /// Discrete nontrivial stabilizer detected on the sample grid.
    Discrete { fixing_samples: usize },
}

impl OrbitType {
    pub fn label(&self) -> String {
        match self {
            OrbitType::Fixed => "fixed".into(),
            OrbitType::Free => "free".into(),
            OrbitType::Partial { isotropy_dim } => format!("isotropy_dim_{isotropy_dim}"),
            OrbitType::Discrete { fixing_samples } => format!("discrete_{fixing_samples}"),
        }
    }
}

impl fmt::Display for OrbitType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilizerClass {
    pub orbit_type: OrbitType,
    /// Indices of group samples (other than the identity) fixing x.
    pub fixing_samples: Vec<usize>,
}

/// Classify `x` by generator vanishing, cross-checked against the flow on
/// the action's group-sample grid.
pub fn stabilizer_class(action: &GroupAction, x: &DVector<f64>) -> Result<StabilizerClass> {
    if !action.has_flow() {
        return Err(DiracError::MissingFlow);
    }
    let iso = action.isotropy_dimension(x);
    let scale = x.norm().max(1.0);
    let mut fixing = Vec::new();
    for (i, t) in action.group_samples().iter().enumerate() {
        if t.iter().all(|v| *v == 0.0) {
            continue;
        }
        if (action.act(t, x)? - x).norm() < 1e-9 * scale {
            fixing.push(i);
        }
    }
    let orbit_type = if action.r() > 0 && iso == action.r() {
        OrbitType::Fixed
    } else if iso > 0 {
        OrbitType::Partial { isotropy_dim: iso }
    } else if !fixing.is_empty() {
        OrbitType::Discrete {
            fixing_samples: fixing.len(),
        }
    } else {
        OrbitType::Free
    };
    Ok(StabilizerClass {
        orbit_type,
        fixing_samples: fixing,
    })
}

/// Numerical rank of `DP(x)`.
pub fn momentum_rank(p: &MomentumMap, x: &DVector<f64>) -> usize {
    let jac = p.map().jacobian(x);
    if jac.nrows() == 0 {
        return 0;
    }
    let sv = crate::subspace::singular_values(&jac);
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let thresh = (DEFAULT_RANK_TOL * smax).max(FIXED_TOL);
    sv.iter().filter(|&&s| s > thresh).count()
}

/// `|rank DP(x) + dim g_x - r|`; zero when `Im T_xP = g_x°` holds at x.
pub fn annihilator_rank_defect(action: &GroupAction, p: &MomentumMap, x: &DVector<f64>) -> usize {
    let lhs = momentum_rank(p, x) + action.isotropy_dimension(x);
    lhs.abs_diff(action.r())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{DistributionField, PoissonField};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn rotation_q() -> SmoothMap {
        SmoothMap::linear(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]))
    }

    fn rotation_flow() -> FlowFn {
        Arc::new(|t: &[f64], q: &DVector<f64>| {
            let (s, c) = t[0].sin_cos();
            v(&[c * q[0] - s * q[1], s * q[0] + c * q[1]])
        })
    }

    fn angles(k: usize) -> Vec<Vec<f64>> {
        (0..k)
            .map(|i| vec![2.0 * std::f64::consts::PI * i as f64 / k as f64])
            .collect()
    }

    fn oscillator(h: SmoothMap) -> ImplicitSystem {
        ImplicitSystem::new(PoissonField::canonical(2), DistributionField::zero(4), h).unwrap()
    }

    fn probes() -> Vec<DVector<f64>> {
        vec![
            v(&[0.3, -0.5, 0.8, 0.1]),
            v(&[1.2, 0.4, -0.2, 0.9]),
            v(&[-0.7, 0.6, 0.5, -1.1]),
        ]
    }

    #[test]
    fn lifted_rotation_generator_and_momentum() {
        let (action, p) =
            lifted_cotangent_action(2, &[rotation_q()], Some(rotation_flow()), angles(12)).unwrap();
        let x = v(&[1.0, 2.0, 3.0, 4.0]);
        let xi = action.generators()[0].eval(&x);
        assert!((xi - v(&[-2.0, 1.0, -4.0, 3.0])).norm() < 1e-12);
        assert!((p.eval(&v(&[1.0, 0.0, 0.0, 1.0]))[0] - 1.0).abs() < 1e-15);

        let sys = oscillator(SmoothMap::scalar(4, |x| 0.5 * x.norm_squared()));
        let rep = check_momentum_membership(&sys, &action, &p, &probes()).unwrap();
        assert!(rep.pass, "{rep:?}");
        let x2 = action.act(&[0.3], &x).unwrap();
        assert!((p.eval(&x2) - p.eval(&x)).norm() < 1e-8);
    }

    #[test]
    fn lifted_translation() {
        let shift = SmoothMap::constant(2, v(&[1.0, 0.0]));
        let (action, p) = lifted_cotangent_action(2, &[shift], None, vec![]).unwrap();
        let x = v(&[0.3, 0.4, 0.5, 0.6]);
        assert!((action.generators()[0].eval(&x) - v(&[1.0, 0.0, 0.0, 0.0])).norm() < 1e-15);
        assert_eq!(p.eval(&x)[0], 0.5);
    }

    #[test]
    fn lifted_zero_generator() {
        let (action, p) = lifted_cotangent_action(2, &[SmoothMap::zero(2, 2)], None, vec![]).unwrap();
        let x = v(&[0.3, 0.4, 0.5, 0.6]);
        assert_eq!(action.generators()[0].eval(&x).norm(), 0.0);
        assert_eq!(p.eval(&x)[0], 0.0);
    }

    #[test]
    fn action_symmetry_pass_and_fail() {
        let (action, _) = lifted_cotangent_action(2, &[rotation_q()], None, vec![]).unwrap();
        let ok = oscillator(SmoothMap::scalar(4, |x| 0.5 * x.norm_squared()));
        assert!(check_action_symmetry(&ok, &action, &probes()).pass);
        let bad = oscillator(SmoothMap::scalar(4, |x| x[0]));
        let rep = check_action_symmetry(&bad, &action, &probes());
        assert!(!rep.pass);
        assert!(rep.max_h > 0.1);
        assert!(check_action_symmetry(&bad, &GroupAction::trivial(4), &probes()).pass);
    }

    #[test]
    fn momentum_membership_failures() {
        let (action, _) = lifted_cotangent_action(2, &[rotation_q()], None, vec![]).unwrap();
        let sys = oscillator(SmoothMap::scalar(4, |x| 0.5 * x.norm_squared()));
        let rep = check_momentum_membership(&sys, &action, &MomentumMap::zero(4, 1), &probes()).unwrap();
        assert!(!rep.pass);
        let rep = check_momentum_membership(
            &sys,
            &GroupAction::trivial(4),
            &MomentumMap::zero(4, 0),
            &probes(),
        )
        .unwrap();
        assert!(rep.pass);
    }

    #[test]
    fn stabilizers_and_ranks() {
        let (action, p) =
            lifted_cotangent_action(2, &[rotation_q()], Some(rotation_flow()), angles(360)).unwrap();
        let origin = DVector::zeros(4);
        assert_eq!(stabilizer_class(&action, &origin).unwrap().orbit_type, OrbitType::Fixed);
        let x = v(&[0.3, -0.2, 0.1, 0.7]);
        assert_eq!(stabilizer_class(&action, &x).unwrap().orbit_type, OrbitType::Free);
        assert_eq!(momentum_rank(&p, &x), 1);
        assert_eq!(momentum_rank(&p, &origin), 0);
        assert_eq!(annihilator_rank_defect(&action, &p, &x), 0);
        assert_eq!(annihilator_rank_defect(&action, &p, &origin), 0);

        assert_eq!(momentum_rank(&MomentumMap::zero(4, 0), &x), 0);
        let trivial = GroupAction::trivial(4);
        assert_eq!(stabilizer_class(&trivial, &x).unwrap().orbit_type, OrbitType::Free);
        let no_flow = GroupAction::new(4, vec![SmoothMap::zero(4, 4)]).unwrap();
        assert!(matches!(stabilizer_class(&no_flow, &x), Err(DiracError::MissingFlow)));
    }

    #[test]
    fn discrete_stabilizer_is_seen_through_the_flow() {
        // Rotation by 2θ on the plane: angle π fixes every point.
        let gen = SmoothMap::linear(DMatrix::from_row_slice(2, 2, &[0.0, -2.0, 2.0, 0.0]));
        let action = GroupAction::new(2, vec![gen]).unwrap().with_flow(
            |t, q| {
                let (s, c) = (2.0 * t[0]).sin_cos();
                v(&[c * q[0] - s * q[1], s * q[0] + c * q[1]])
            },
            angles(4),
        );
        let cls = stabilizer_class(&action, &v(&[1.0, 0.5])).unwrap();
        assert_eq!(cls.orbit_type, OrbitType::Discrete { fixing_samples: 1 });
    }

    #[test]
    fn anti_homomorphism_for_abelian_lift() {
        let shift = SmoothMap::constant(2, v(&[1.0, 0.0]));
        let (action, _) = lifted_cotangent_action(2, &[rotation_q(), shift], None, vec![]).unwrap();
        // rotation and x-translation do not commute: [ξ_rot, ξ_x] ≠ 0
        assert!(action.anti_homomorphism_residual(&v(&[0.1, 0.2, 0.3, 0.4])) > 0.1);
        let (rot, _) = lifted_cotangent_action(2, &[rotation_q()], None, vec![]).unwrap();
        assert!(rot.anti_homomorphism_residual(&v(&[0.1, 0.2, 0.3, 0.4])) < 1e-5);
    }
}
