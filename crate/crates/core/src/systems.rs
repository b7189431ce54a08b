//! Built-in example systems with exact derivatives, symmetry data, momentum
//! maps and invariant charts.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{DiracError, Result};
use crate::fields::{DistributionField, PoissonField, SmoothMap};
use crate::ihs_core::ImplicitSystem;
use crate::reduction::{InvariantChart, LevelSetChart};
use crate::symmetry::{check_action_symmetry, check_momentum_membership, GroupAction, MomentumMap};

pub const BUILTIN_NAMES: [&str; 4] = [
    "oscillator_s1",
    "spherical_pendulum",
    "knife_edge",
    "free_particle_translation",
];

/// Default gravitational acceleration for the spherical pendulum.
pub const DEFAULT_G0: f64 = 9.81;

/// Number of group samples used for orbit-independence checks.
pub const DEFAULT_GROUP_SAMPLES: usize = 12;

pub type Sampler = Arc<dyn Fn(&mut dyn RngCore) -> DVector<f64> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuiltinOptions {
    pub g0: f64,
    pub group_samples: usize,
}

impl Default for BuiltinOptions {
    fn default() -> Self {
        BuiltinOptions {
            g0: DEFAULT_G0,
            group_samples: DEFAULT_GROUP_SAMPLES,
        }
    }
}

/// A level set with the data needed for regular reduction.
#[derive(Clone)]
pub struct LevelChartSpec {
    pub chart: LevelSetChart,
    /// Quotient map from chart coordinates to reduced coordinates `y`.
    pub quotient: SmoothMap,
    /// The same quotient expressed on the ambient space, `y(x)`.
    pub invariant_to_chart: SmoothMap,
    /// Samples chart coordinates `u`.
    pub sampler: Sampler,
}

impl fmt::Debug for LevelChartSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LevelChartSpec")
            .field("chart", &self.chart)
            .field("quotient", &self.quotient)
            .finish_non_exhaustive()
    }
}

/// Closed-form facts used in tests.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReferenceData {
    pub values: BTreeMap<String, f64>,
    /// Orbit-type labels expected on `P^{-1}(0)`.
    pub expected_strata: Vec<String>,
    pub notes: Vec<String>,
}

#[derive(Clone)]
pub struct SystemBundle {
    pub name: String,
    pub sys: ImplicitSystem,
    pub action: GroupAction,
    pub p: MomentumMap,
    /// Whether `(ξ_M, dP_ξ) ∈ D` holds, i.e. P is a momentum map for D.
    pub momentum_horizontal: bool,
    pub level_charts: Vec<LevelChartSpec>,
    level_chart_builder: Option<fn(f64) -> Result<LevelChartSpec>>,
    pub invariant_chart: InvariantChart,
    /// G-projectable basis of Δ.
    pub projectable_basis: Vec<SmoothMap>,
    /// Admissible reduced functions `f_0` on the invariant chart.
    pub admissible: Vec<SmoothMap>,
    /// Fixed points of the action on `P^{-1}(0)`, for strata tests.
    pub fixed_points: Vec<DVector<f64>>,
    /// Same system with a deliberately non-invariant Hamiltonian.
    pub broken: ImplicitSystem,
    pub broken_description: String,
    pub reference: ReferenceData,
    domain_sampler: Sampler,
    constraint_sampler: Sampler,
    zero_level_sampler: Sampler,
}

impl fmt::Debug for SystemBundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemBundle")
            .field("name", &self.name)
            .field("n", &self.sys.n())
            .field("m", &self.sys.m())
            .field("r", &self.action.r())
            .finish()
    }
}

impl SystemBundle {
    pub fn n(&self) -> usize {
        self.sys.n()
    }

    /// Level-set chart for the momentum value `mu`.
    pub fn level_chart(&self, mu: f64) -> Result<LevelChartSpec> {
        match self.level_chart_builder {
            Some(build) => build(mu),
            None => Err(DiracError::Precondition(format!(
                "{} has no regular level-set chart",
                self.name
            ))),
        }
    }

    /// A point of the chart domain.
    pub fn sample_domain(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        (self.domain_sampler)(rng)
    }

    /// A point of the constraint manifold `M_c`.
    pub fn sample_constraint(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        (self.constraint_sampler)(rng)
    }

    /// A point of `P^{-1}(0)` (and of `M_c` where the two meet generically).
    pub fn sample_zero_level(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        (self.zero_level_sampler)(rng)
    }

    pub fn sample_many(
        &self,
        which: SampleKind,
        count: usize,
        rng: &mut dyn RngCore,
    ) -> Vec<DVector<f64>> {
        (0..count)
            .map(|_| match which {
                SampleKind::Domain => self.sample_domain(rng),
                SampleKind::Constraint => self.sample_constraint(rng),
                SampleKind::ZeroLevel => self.sample_zero_level(rng),
            })
            .collect()
    }

    /// Structural checks: symmetry of J, Δ, H under the action, momentum
    /// membership (when P is horizontal) and invariant-chart validity.
    pub fn verify(&self, probes: usize, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = self.sample_many(SampleKind::Domain, probes, &mut rng);
        let sym = check_action_symmetry(&self.sys, &self.action, &pts);
        if !sym.pass {
            return Err(DiracError::Precondition(format!(
                "{}: action is not a symmetry (residual {:.3e})",
                self.name,
                sym.max_residual()
            )));
        }
        if self.momentum_horizontal {
            let rep = check_momentum_membership(&self.sys, &self.action, &self.p, &pts)?;
            if !rep.pass {
                return Err(DiracError::Precondition(format!(
                    "{}: momentum membership fails (residual {:.3e})",
                    self.name, rep.max_residual
                )));
            }
        }
        let zero = self.sample_many(SampleKind::ZeroLevel, probes, &mut rng);
        let rep = self.invariant_chart.validate(&self.action, &zero);
        if !rep.pass {
            return Err(DiracError::Precondition(format!(
                "{}: invariant chart invalid: {:?}",
                self.name,
                rep.failures.first()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    Domain,
    Constraint,
    ZeroLevel,
}

pub fn builtin(name: &str) -> Result<SystemBundle> {
    builtin_with(name, &BuiltinOptions::default())
}

pub fn builtin_with(name: &str, opts: &BuiltinOptions) -> Result<SystemBundle> {
    let bundle = match name {
        "oscillator_s1" => oscillator_s1(opts)?,
        "spherical_pendulum" => spherical_pendulum(opts)?,
        "knife_edge" => knife_edge(opts)?,
        "free_particle_translation" => free_particle_translation(opts)?,
        other => return Err(DiracError::UnknownSystem(other.to_string())),
    };
    bundle.verify(8, 0)?;
    Ok(bundle)
}

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

fn normal(rng: &mut dyn RngCore) -> f64 {
    rng.sample(StandardNormal)
}

fn uniform(rng: &mut dyn RngCore, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn angle_samples(count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|k| vec![2.0 * PI * k as f64 / count as f64])
        .collect()
}

/// Rotation generator on `T*R^d` rotating the `(i, j)` plane of both q and p.
fn plane_rotation(d: usize, i: usize, j: usize) -> (SmoothMap, impl Fn(&[f64], &DVector<f64>) -> DVector<f64>) {
    let n = 2 * d;
    let mut r = DMatrix::zeros(n, n);
    for off in [0, d] {
        r[(off + i, off + j)] = -1.0;
        r[(off + j, off + i)] = 1.0;
    }
    let flow = move |t: &[f64], x: &DVector<f64>| {
        let (c, s) = (t[0].cos(), t[0].sin());
        let mut y = x.clone();
        for off in [0, d] {
            let (a, b) = (x[off + i], x[off + j]);
            y[off + i] = c * a - s * b;
            y[off + j] = s * a + c * b;
        }
        y
    };
    (SmoothMap::linear(r), flow)
}

/// Angular momentum `q_i p_j - q_j p_i` on `T*R^d` with exact gradient.
fn angular_momentum(d: usize, i: usize, j: usize) -> MomentumMap {
    let n = 2 * d;
    MomentumMap::new(
        SmoothMap::new(n, 1, move |x| v(&[x[i] * x[d + j] - x[j] * x[d + i]])).with_jacobian(
            move |x| {
                let mut g = DMatrix::zeros(1, n);
                g[(0, i)] = x[d + j];
                g[(0, j)] = -x[d + i];
                g[(0, d + i)] = -x[j];
                g[(0, d + j)] = x[i];
                g
            },
        ),
    )
}

/// `H = ½ x^T W x + c·x` with exact gradient and Hessian.
fn quadratic_hamiltonian(w: DMatrix<f64>, c: DVector<f64>) -> (SmoothMap, SmoothMap) {
    let n = w.nrows();
    let (w1, c1) = (w.clone(), c.clone());
    let h = SmoothMap::scalar(n, move |x| 0.5 * x.dot(&(&w1 * x)) + c1.dot(x));
    let (w2, c2) = (w.clone(), c.clone());
    let h = h.with_jacobian(move |x| row(&(&w2 * x + &c2)));
    let w3 = w.clone();
    let grad = SmoothMap::new(n, n, move |x| &w3 * x + &c).with_jacobian(move |_| w.clone());
    (h, grad)
}

fn system(j: PoissonField, delta: DistributionField, w: DMatrix<f64>, c: DVector<f64>) -> Result<ImplicitSystem> {
    let (h, g) = quadratic_hamiltonian(w, c);
    ImplicitSystem::with_gradient(j, delta, h, g)
}

fn row(x: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, x.len(), x.as_slice())
}

fn unit(n: usize, i: usize) -> DVector<f64> {
    let mut e = DVector::zeros(n);
    e[i] = 1.0;
    e
}

fn sphere_point(rng: &mut dyn RngCore) -> DVector<f64> {
    loop {
        let q = v(&[normal(rng), normal(rng), normal(rng)]);
        let nq = q.norm();
        if nq > 1e-3 {
            return q / nq;
        }
    }
}

/// Canonical T*R² with the lifted rotation, `H = ½(|q|² + |p|²)`, Δ = 0.
fn oscillator_s1(opts: &BuiltinOptions) -> Result<SystemBundle> {
    let n = 4;
    let j = PoissonField::canonical(2);
    let sys = system(j.clone(), DistributionField::zero(n), DMatrix::identity(n, n), DVector::zeros(n))?;
    let broken = system(j, DistributionField::zero(n), DMatrix::identity(n, n), unit(n, 0))?;
    let (gen, flow) = plane_rotation(2, 0, 1);
    let action = GroupAction::new(n, vec![gen])?.with_flow(flow, angle_samples(opts.group_samples));
    let p = angular_momentum(2, 0, 1);

    let sigmas = SmoothMap::new(n, 3, |x| {
        let (q1, q2, p1, p2) = (x[0], x[1], x[2], x[3]);
        v(&[q1 * q1 + q2 * q2, p1 * p1 + p2 * p2, q1 * p1 + q2 * p2])
    })
    .with_jacobian(|x| {
        let (q1, q2, p1, p2) = (x[0], x[1], x[2], x[3]);
        DMatrix::from_row_slice(
            3,
            4,
            &[
                2.0 * q1, 2.0 * q2, 0.0, 0.0, //
                0.0, 0.0, 2.0 * p1, 2.0 * p2, //
                p1, p2, q1, q2,
            ],
        )
    });
    let relations = SmoothMap::new(3, 1, |s| v(&[s[0] * s[1] - s[2] * s[2]]))
        .with_jacobian(|s| DMatrix::from_row_slice(1, 3, &[s[1], s[0], -2.0 * s[2]]));
    let inequalities = SmoothMap::linear(DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
    let chart = InvariantChart::new(sigmas)
        .with_relations(relations)
        .with_inequalities(inequalities);

    let mu = 0.5;
    let level = oscillator_level(mu)?;

    let domain: Sampler = Arc::new(|rng| DVector::from_fn(4, |_, _| normal(rng)));
    let zero: Sampler = Arc::new(|rng| {
        // q and p parallel: P = 0
        let phi = uniform(rng, -PI, PI);
        let (r, s) = (uniform(rng, 0.1, 2.0), uniform(rng, -2.0, 2.0));
        v(&[r * phi.cos(), r * phi.sin(), s * phi.cos(), s * phi.sin()])
    });

    let mut reference = ReferenceData::default();
    reference.values.insert("level_mu".into(), mu);
    reference.expected_strata = vec!["fixed".into(), "free".into()];
    reference
        .notes
        .push("{s1,s2} = 4 s3, {s1,s3} = 2 s1, {s2,s3} = -2 s2".into());

    Ok(SystemBundle {
        name: "oscillator_s1".into(),
        sys,
        action,
        p,
        momentum_horizontal: true,
        level_charts: vec![level],
        level_chart_builder: Some(oscillator_level),
        invariant_chart: chart,
        projectable_basis: Vec::new(),
        admissible: vec![
            SmoothMap::linear(DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0])),
            SmoothMap::linear(DMatrix::from_row_slice(1, 3, &[0.0, 0.0, 1.0])),
        ],
        fixed_points: vec![DVector::zeros(4)],
        broken,
        broken_description: "H + q1".into(),
        reference,
        domain_sampler: domain.clone(),
        constraint_sampler: domain,
        zero_level_sampler: zero,
    })
}

/// Level set `P = μ ≠ 0` of the oscillator: `u = (r, φ, a)` with `a = q·p / r`,
/// reduced coordinates `y = (|q|², q·p)`.
fn oscillator_level(mu: f64) -> Result<LevelChartSpec> {
    if mu == 0.0 {
        return Err(DiracError::Precondition(
            "mu = 0 is a singular value of the oscillator momentum map".into(),
        ));
    }
    // Level set P = μ away from the origin: u = (r, φ, a), with a = q·p / r.
    let param = SmoothMap::new(3, 4, move |u| {
        let (r, phi, a) = (u[0], u[1], u[2]);
        let (c, s) = (phi.cos(), phi.sin());
        v(&[r * c, r * s, a * c - mu / r * s, a * s + mu / r * c])
    })
    .with_jacobian(move |u| {
        let (r, phi, a) = (u[0], u[1], u[2]);
        let (c, s) = (phi.cos(), phi.sin());
        let m = mu / (r * r);
        DMatrix::from_row_slice(
            4,
            3,
            &[
                c, -r * s, 0.0, //
                s, r * c, 0.0, //
                m * s, -a * s - mu / r * c, c, //
                -m * c, a * c - mu / r * s, s,
            ],
        )
    });
    let coords = SmoothMap::new(4, 3, |x| {
        let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
        v(&[r, x[1].atan2(x[0]), (x[0] * x[2] + x[1] * x[3]) / r])
    });
    let quotient = SmoothMap::new(3, 2, |u| v(&[u[0] * u[0], u[0] * u[2]]))
        .with_jacobian(|u| DMatrix::from_row_slice(2, 3, &[2.0 * u[0], 0.0, 0.0, u[2], 0.0, u[0]]));
    let to_chart = SmoothMap::new(4, 2, |x| v(&[x[0] * x[0] + x[1] * x[1], x[0] * x[2] + x[1] * x[3]]))
        .with_jacobian(|x| {
            DMatrix::from_row_slice(2, 4, &[2.0 * x[0], 2.0 * x[1], 0.0, 0.0, x[2], x[3], x[0], x[1]])
        });
    Ok(LevelChartSpec {
        chart: LevelSetChart::new(v(&[mu]), param, coords)?,
        quotient,
        invariant_to_chart: to_chart,
        sampler: Arc::new(|rng| {
            v(&[uniform(rng, 0.5, 2.0), uniform(rng, -PI, PI), uniform(rng, -1.0, 1.0)])
        }),
    })
}

/// Constraint force field `(0, q)` on `T*R³`.
fn radial_force() -> SmoothMap {
    SmoothMap::new(6, 6, |x| v(&[0.0, 0.0, 0.0, x[0], x[1], x[2]])).with_jacobian(|_| {
        let mut m = DMatrix::zeros(6, 6);
        m.view_mut((3, 0), (3, 3)).fill_with_identity();
        m
    })
}

/// Pendulum on `T*R³` constrained by `A(q) = q`, rotation about e3.
fn spherical_pendulum(opts: &BuiltinOptions) -> Result<SystemBundle> {
    let n = 6;
    let g0 = opts.g0;
    let j = PoissonField::canonical(3);
    let delta = DistributionField::new(n, vec![radial_force()])?;
    let mut w = DMatrix::zeros(n, n);
    w.view_mut((3, 3), (3, 3)).fill_with_identity();
    let sys = system(j.clone(), delta.clone(), w.clone(), unit(n, 2) * g0)?;
    let broken = system(j, delta, w, unit(n, 0) * g0)?;
    let (gen, flow) = plane_rotation(3, 0, 1);
    let action = GroupAction::new(n, vec![gen])?.with_flow(flow, angle_samples(opts.group_samples));
    let p = angular_momentum(3, 0, 1);

    let sigmas = SmoothMap::new(n, 6, |x| {
        let (q1, q2, q3, p1, p2, p3) = (x[0], x[1], x[2], x[3], x[4], x[5]);
        v(&[
            q3,
            p3,
            q1 * q1 + q2 * q2,
            p1 * p1 + p2 * p2,
            q1 * p1 + q2 * p2,
            q1 * p2 - q2 * p1,
        ])
    })
    .with_jacobian(|x| {
        let (q1, q2, _q3, p1, p2, _p3) = (x[0], x[1], x[2], x[3], x[4], x[5]);
        DMatrix::from_row_slice(
            6,
            6,
            &[
                0.0, 0.0, 1.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 0.0, 0.0, 1.0, //
                2.0 * q1, 2.0 * q2, 0.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 2.0 * p1, 2.0 * p2, 0.0, //
                p1, p2, 0.0, q1, q2, 0.0, //
                p2, -p1, 0.0, -q2, q1, 0.0,
            ],
        )
    });
    let relations = SmoothMap::new(6, 1, |s| v(&[s[2] * s[3] - s[4] * s[4] - s[5] * s[5]]))
        .with_jacobian(|s| DMatrix::from_row_slice(1, 6, &[0.0, 0.0, s[3], s[2], -2.0 * s[4], -2.0 * s[5]]));
    let mut ineq = DMatrix::zeros(2, 6);
    ineq[(0, 2)] = 1.0;
    ineq[(1, 3)] = 1.0;
    let chart = InvariantChart::new(sigmas)
        .with_relations(relations)
        .with_inequalities(SmoothMap::linear(ineq));

    let domain: Sampler = Arc::new(|rng| DVector::from_fn(6, |_, _| normal(rng)));
    let constraint: Sampler = Arc::new(|rng| {
        let q = sphere_point(rng);
        let p = v(&[normal(rng), normal(rng), normal(rng)]);
        let p = &p - &q * q.dot(&p);
        let mut x = DVector::zeros(6);
        x.rows_mut(0, 3).copy_from(&q);
        x.rows_mut(3, 3).copy_from(&p);
        x
    });
    let zero: Sampler = Arc::new(|rng| {
        // p in the vertical plane through q and tangent to the sphere: q × p ⟂ e3
        let q = sphere_point(rng);
        let e3 = v(&[0.0, 0.0, 1.0]);
        let t = &e3 - &q * q[2];
        let p = t * normal(rng);
        let mut x = DVector::zeros(6);
        x.rows_mut(0, 3).copy_from(&q);
        x.rows_mut(3, 3).copy_from(&p);
        x
    });

    let mut reference = ReferenceData::default();
    reference.values.insert("g0".into(), g0);
    reference.values.insert("index1_on_unit_sphere".into(), 1.0);
    reference.expected_strata = vec!["fixed".into(), "free".into()];
    reference.notes.push(
        "multiplier on M_c: lambda = (g0 q3 - |p|^2) / |q|^2, so the constraint force is -(|p|^2 - g0 q3) q".into(),
    );

    Ok(SystemBundle {
        name: "spherical_pendulum".into(),
        sys,
        action,
        p,
        momentum_horizontal: true,
        level_charts: Vec::new(),
        level_chart_builder: None,
        invariant_chart: chart,
        projectable_basis: vec![radial_force()],
        admissible: vec![
            SmoothMap::linear(row(&unit(6, 0))),
            SmoothMap::linear(row(&unit(6, 2))),
        ],
        fixed_points: vec![
            v(&[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]),
            v(&[0.0, 0.0, -1.0, 0.0, 0.0, 0.0]),
            v(&[0.0, 0.0, 0.7, 0.0, 0.0, 0.4]),
            v(&[0.0, 0.0, -1.3, 0.0, 0.0, -0.2]),
        ],
        broken,
        broken_description: "H = |p|^2 / 2 + g0 q1".into(),
        reference,
        domain_sampler: domain,
        constraint_sampler: constraint,
        zero_level_sampler: zero,
    })
}

/// Knife edge constraint field `(0, 0, 0, sin θ, -cos θ, 0)`.
fn knife_force() -> SmoothMap {
    SmoothMap::new(6, 6, |x| v(&[0.0, 0.0, 0.0, x[2].sin(), -x[2].cos(), 0.0])).with_jacobian(|x| {
        let mut m = DMatrix::zeros(6, 6);
        m[(3, 2)] = x[2].cos();
        m[(4, 2)] = x[2].sin();
        m
    })
}

/// Knife edge quotient by translations, as Poisson reduction on the whole
/// space: the trivial level chart and the projection to `(θ, p_x, p_y, p_θ)`.
/// The momentum value is ignored since `P` is not conserved.
fn knife_edge_level(_mu: f64) -> Result<LevelChartSpec> {
    let n = 6;
    let mut proj = DMatrix::zeros(4, n);
    for (row, col) in [2, 3, 4, 5].into_iter().enumerate() {
        proj[(row, col)] = 1.0;
    }
    Ok(LevelChartSpec {
        chart: LevelSetChart::identity(n),
        quotient: SmoothMap::linear(proj.clone()),
        invariant_to_chart: SmoothMap::linear(proj),
        sampler: Arc::new(|rng| DVector::from_fn(6, |_, _| normal(rng))),
    })
}

/// Knife edge on `T*R³`, coordinates `(x, y, θ, p_x, p_y, p_θ)`, with the
/// planar translation symmetry.
fn knife_edge(opts: &BuiltinOptions) -> Result<SystemBundle> {
    let n = 6;
    let j = PoissonField::canonical(3);
    let delta = DistributionField::new(n, vec![knife_force()])?;
    let mut w = DMatrix::zeros(n, n);
    w.view_mut((3, 3), (3, 3)).fill_with_identity();
    let sys = system(j.clone(), delta.clone(), w.clone(), DVector::zeros(n))?;
    let broken = system(j, delta, w, unit(n, 0))?;

    let gens = vec![
        SmoothMap::constant(n, unit(n, 0)),
        SmoothMap::constant(n, unit(n, 1)),
    ];
    let samples: Vec<Vec<f64>> = (0..opts.group_samples)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / opts.group_samples as f64;
            vec![1.5 * a.cos(), -0.7 + 0.9 * a.sin()]
        })
        .collect();
    let action = GroupAction::new(n, gens)?.with_flow(
        |t, x| {
            let mut y = x.clone();
            y[0] += t[0];
            y[1] += t[1];
            y
        },
        samples,
    );
    let mut pm = DMatrix::zeros(2, n);
    pm[(0, 3)] = 1.0;
    pm[(1, 4)] = 1.0;
    let p = MomentumMap::new(SmoothMap::linear(pm));

    let mut proj = DMatrix::zeros(4, n);
    for (row, col) in [2, 3, 4, 5].into_iter().enumerate() {
        proj[(row, col)] = 1.0;
    }
    let chart = InvariantChart::new(SmoothMap::linear(proj));
    let level = knife_edge_level(0.0)?;

    let domain: Sampler = Arc::new(|rng| DVector::from_fn(6, |_, _| normal(rng)));
    let constraint: Sampler = Arc::new(|rng| {
        let mut x = DVector::from_fn(6, |_, _| normal(rng));
        let (s, c) = (x[2].sin(), x[2].cos());
        let speed = normal(rng);
        x[3] = speed * c;
        x[4] = speed * s;
        x
    });
    let zero: Sampler = Arc::new(|rng| {
        let mut x = DVector::from_fn(6, |_, _| normal(rng));
        x[3] = 0.0;
        x[4] = 0.0;
        x
    });

    let mut reference = ReferenceData::default();
    reference.values.insert("index1".into(), 1.0);
    reference.expected_strata = vec!["free".into()];
    reference.notes.push(
        "P = (p_x, p_y) is not horizontal: dP_x is not in the annihilator of the constraint field, so it is not conserved".into(),
    );
    reference
        .notes
        .push("the forward speed p_x cos(theta) + p_y sin(theta) is conserved".into());

    Ok(SystemBundle {
        name: "knife_edge".into(),
        sys,
        action,
        p,
        momentum_horizontal: false,
        level_charts: vec![level],
        level_chart_builder: Some(knife_edge_level),
        invariant_chart: chart,
        projectable_basis: vec![knife_force()],
        admissible: Vec::new(),
        fixed_points: Vec::new(),
        broken,
        broken_description: "H + x".into(),
        reference,
        domain_sampler: domain,
        constraint_sampler: constraint,
        zero_level_sampler: zero,
    })
}

/// Level set `p2 = μ` of the free particle: `u = (q1, q2, p1)`, reduced
/// coordinates `y = (q1, p1)`.
fn free_particle_level(mu: f64) -> Result<LevelChartSpec> {
    let mut embed = DMatrix::zeros(4, 3);
    embed[(0, 0)] = 1.0;
    embed[(1, 1)] = 1.0;
    embed[(2, 2)] = 1.0;
    let e2 = embed.clone();
    let param = SmoothMap::new(3, 4, move |u| {
        let mut x = &e2 * u;
        x[3] = mu;
        x
    })
    .with_jacobian(move |_| embed.clone());
    let coords = SmoothMap::linear(DMatrix::from_row_slice(
        3,
        4,
        &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
    ));
    Ok(LevelChartSpec {
        chart: LevelSetChart::new(v(&[mu]), param, coords)?,
        quotient: SmoothMap::linear(DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0])),
        invariant_to_chart: SmoothMap::linear(DMatrix::from_row_slice(
            2,
            4,
            &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        )),
        sampler: Arc::new(|rng| DVector::from_fn(3, |_, _| normal(rng))),
    })
}

/// Free particle on canonical T*R², translation in q2, `P = p2`.
fn free_particle_translation(opts: &BuiltinOptions) -> Result<SystemBundle> {
    let n = 4;
    let j = PoissonField::canonical(2);
    let mut w = DMatrix::zeros(n, n);
    w.view_mut((2, 2), (2, 2)).fill_with_identity();
    let sys = system(j.clone(), DistributionField::zero(n), w.clone(), DVector::zeros(n))?;
    let broken = system(j, DistributionField::zero(n), w, unit(n, 1))?;
    let samples: Vec<Vec<f64>> = (0..opts.group_samples)
        .map(|k| vec![-3.0 + 6.0 * k as f64 / opts.group_samples as f64])
        .collect();
    let action = GroupAction::new(n, vec![SmoothMap::constant(n, unit(n, 1))])?.with_flow(
        |t, x| {
            let mut y = x.clone();
            y[1] += t[0];
            y
        },
        samples,
    );
    let p = MomentumMap::new(SmoothMap::linear(row(&unit(n, 3))));

    let mu = 1.0;
    let level = free_particle_level(mu)?;
    let chart = InvariantChart::new(SmoothMap::linear(DMatrix::from_row_slice(
        3,
        4,
        &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0],
    )));

    let domain: Sampler = Arc::new(|rng| DVector::from_fn(4, |_, _| normal(rng)));
    let zero: Sampler = Arc::new(|rng| {
        let mut x = DVector::from_fn(4, |_, _| normal(rng));
        x[3] = 0.0;
        x
    });
    let mut reference = ReferenceData::default();
    reference.values.insert("level_mu".into(), mu);
    reference.expected_strata = vec!["free".into()];

    Ok(SystemBundle {
        name: "free_particle_translation".into(),
        sys,
        action,
        p,
        momentum_horizontal: true,
        level_charts: vec![level],
        level_chart_builder: Some(free_particle_level),
        invariant_chart: chart,
        projectable_basis: Vec::new(),
        admissible: vec![SmoothMap::linear(DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]))],
        fixed_points: Vec::new(),
        broken,
        broken_description: "H + q2".into(),
        reference,
        domain_sampler: domain.clone(),
        constraint_sampler: domain,
        zero_level_sampler: zero,
    })
}
