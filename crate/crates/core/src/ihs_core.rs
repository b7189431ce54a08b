//! Implicit Hamiltonian systems `(ẋ, dH) ∈ D(x)` with `D` built from a skew
//! field `J` and a constraint distribution `Δ = span{g_j}`.
//!
//! For index-1 systems the multipliers are eliminated and the dynamics
//! `ẋ = J dH + Σ λ_j g_j` are integrated with classical RK4, optionally
//! followed by a Newton projection back onto `M_c = {L_{g_j} H = 0}`.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dirac_point::ConstantDirac;
use crate::error::{DiracError, Result};
use crate::fields::{DistributionField, PoissonField, SmoothMap};

/// Largest condition number accepted for the index-1 matrix.
pub const MAX_CONDITION: f64 = 1e12;

/// Off-manifold distance above which multiplier solves log a warning.
pub const CONSTRAINT_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct ImplicitSystem {
    n: usize,
    j: PoissonField,
    delta: DistributionField,
    hamiltonian: SmoothMap,
    gradient: SmoothMap,
}

impl ImplicitSystem {
    /// The gradient map is derived from `hamiltonian`'s Jacobian; its own
    /// Jacobian (the Hessian) falls back to central differences.
    pub fn new(j: PoissonField, delta: DistributionField, hamiltonian: SmoothMap) -> Result<Self> {
        let n = j.n();
        let h2 = hamiltonian.clone();
        let gradient = SmoothMap::new(n, n, move |x| h2.gradient(x));
        Self::with_gradient(j, delta, hamiltonian, gradient)
    }

    /// Supply the gradient explicitly, typically with an exact Hessian.
    pub fn with_gradient(
        j: PoissonField,
        delta: DistributionField,
        hamiltonian: SmoothMap,
        gradient: SmoothMap,
    ) -> Result<Self> {
        let n = j.n();
        if delta.n() != n || hamiltonian.in_dim() != n || hamiltonian.out_dim() != 1 {
            return Err(DiracError::DimensionMismatch {
                expected: n,
                found: hamiltonian.in_dim(),
            });
        }
        if gradient.in_dim() != n || gradient.out_dim() != n {
            return Err(DiracError::DimensionMismatch {
                expected: n,
                found: gradient.out_dim(),
            });
        }
        Ok(ImplicitSystem {
            n,
            j,
            delta,
            hamiltonian,
            gradient,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.delta.m()
    }

    pub fn j(&self) -> &PoissonField {
        &self.j
    }

    pub fn delta(&self) -> &DistributionField {
        &self.delta
    }

    pub fn hamiltonian(&self) -> &SmoothMap {
        &self.hamiltonian
    }

    pub fn energy(&self, x: &DVector<f64>) -> f64 {
        self.hamiltonian.eval_scalar(x)
    }

    pub fn grad_h(&self, x: &DVector<f64>) -> DVector<f64> {
        self.gradient.eval(x)
    }

    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.gradient.jacobian(x)
    }

    /// Replace the Hamiltonian, keeping `J` and `Δ`.
    pub fn with_hamiltonian(&self, hamiltonian: SmoothMap) -> Result<Self> {
        ImplicitSystem::new(self.j.clone(), self.delta.clone(), hamiltonian)
    }

    /// Dirac fiber `from_j_delta(J(x), Δ(x))`.
    pub fn dirac_at(&self, x: &DVector<f64>) -> Result<ConstantDirac> {
        ConstantDirac::from_j_delta(&self.j.matrix(x), &self.delta.subspace(x))
    }

    /// `X_H = J dH`.
    pub fn hamiltonian_field(&self, x: &DVector<f64>) -> DVector<f64> {
        self.j.matrix(x) * self.grad_h(x)
    }

    /// Rows are `d(L_{g_j} H)(x)`.
    fn constraint_differentials(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let hess = self.hessian(x);
        let grad = self.grad_h(x);
        let mut rows = DMatrix::zeros(self.m(), self.n);
        for (j, g) in self.delta.fields().iter().enumerate() {
            let dc = &hess * g.eval(x) + g.jacobian(x).transpose() * &grad;
            rows.set_row(j, &dc.transpose());
        }
        rows
    }
}

/// `(L_{g_j} H(x))_j`.
pub fn constraint_residual(sys: &ImplicitSystem, x: &DVector<f64>) -> DVector<f64> {
    sys.delta().matrix(x).transpose() * sys.grad_h(x)
}

/// `[L_{g_i} L_{g_j} H(x)]_{i,j}`.
pub fn index1_matrix(sys: &ImplicitSystem, x: &DVector<f64>) -> DMatrix<f64> {
    // dc rows times g columns gives entry (j, i) = L_{g_i} L_{g_j} H
    (sys.constraint_differentials(x) * sys.delta().matrix(x)).transpose()
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = crate::subspace::singular_values(m);
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Multipliers keeping `d/dt L_{g_j} H = 0` along `ẋ = J dH + Σ λ_j g_j`.
pub fn solve_multipliers(sys: &ImplicitSystem, x: &DVector<f64>) -> Result<DVector<f64>> {
    let m = sys.m();
    if m == 0 {
        return Ok(DVector::zeros(0));
    }
    let off = constraint_residual(sys, x).norm();
    if off > CONSTRAINT_TOL {
        log::warn!(
            "multiplier solve at a point {off:.3e} off the constraint manifold; \
             project onto M_c first"
        );
    }
    let dc = sys.constraint_differentials(x);
    let a = &dc * sys.delta().matrix(x);
    let cond = condition_number(&a);
    if !(cond <= MAX_CONDITION) {
        return Err(DiracError::NotIndexOne {
            point: x.as_slice().to_vec(),
            condition: cond,
        });
    }
    let rhs = -(&dc * sys.hamiltonian_field(x));
    a.col_piv_qr()
        .solve(&rhs)
        .ok_or_else(|| DiracError::NotIndexOne {
            point: x.as_slice().to_vec(),
            condition: cond,
        })
}

/// Multiplier-eliminated vector field and its multipliers.
pub fn eliminated_field(sys: &ImplicitSystem, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let lambda = solve_multipliers(sys, x)?;
    let mut v = sys.hamiltonian_field(x);
    if sys.m() > 0 {
        v += sys.delta().matrix(x) * &lambda;
    }
    Ok((v, lambda))
}

/// Newton projection onto `M_c` along the constraint gradients.
///
/// At least one correction is applied whenever the residual is nonzero:
/// stopping on the first `|c| <= tol` would leave a residual just under
/// `tol` after every step, and that bias accumulates into an energy drift
/// that no longer shrinks with the step size.
pub fn project_to_constraint(
    sys: &ImplicitSystem,
    x: &DVector<f64>,
    max_iter: usize,
    tol: f64,
) -> DVector<f64> {
    let mut y = x.clone();
    if sys.m() == 0 {
        return y;
    }
    for it in 0..max_iter {
        let c = constraint_residual(sys, &y);
        let norm = c.norm();
        if norm == 0.0 || (it > 0 && norm <= tol) {
            break;
        }
        let dc = sys.constraint_differentials(&y);
        let gram = &dc * dc.transpose();
        match gram.lu().solve(&c) {
            Some(mu) => y -= dc.transpose() * mu,
            None => break,
        }
    }
    y
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    /// Classical explicit fourth-order Runge–Kutta.
    Rk4,
}

#[derive(Debug, Clone)]
pub struct IntegrateOptions {
    pub method: Method,
    /// Newton projection onto `M_c` after every step.
    pub projection: bool,
    /// Project the initial state onto `M_c` before integrating.
    pub project_initial: bool,
    pub newton_max_iter: usize,
    pub newton_tol: f64,
    /// Monitored first integrals, recorded per step.
    pub first_integrals: Option<SmoothMap>,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            method: Method::Rk4,
            projection: true,
            project_initial: true,
            newton_max_iter: 5,
            newton_tol: 1e-12,
            first_integrals: None,
        }
    }
}

/// One step; returns the new state and the multipliers at the old state.
pub fn step(
    sys: &ImplicitSystem,
    x: &DVector<f64>,
    dt: f64,
    method: Method,
) -> Result<(DVector<f64>, DVector<f64>)> {
    match method {
        Method::Rk4 => {
            let (k1, lambda) = eliminated_field(sys, x)?;
            let (k2, _) = eliminated_field(sys, &(x + &k1 * (0.5 * dt)))?;
            let (k3, _) = eliminated_field(sys, &(x + &k2 * (0.5 * dt)))?;
            let (k4, _) = eliminated_field(sys, &(x + &k3 * dt))?;
            let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
            Ok((next, lambda))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub multipliers: Vec<DVector<f64>>,
    pub energy: Vec<f64>,
    pub constraint_norm: Vec<f64>,
    pub momenta: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<&DVector<f64>> {
        self.states.last()
    }

    fn record(
        &mut self,
        sys: &ImplicitSystem,
        t: f64,
        x: DVector<f64>,
        lambda: DVector<f64>,
        integrals: Option<&SmoothMap>,
    ) {
        self.times.push(t);
        self.energy.push(sys.energy(&x));
        self.constraint_norm.push(constraint_residual(sys, &x).norm());
        self.momenta.push(match integrals {
            Some(p) => p.eval(&x),
            None => DVector::zeros(0),
        });
        self.multipliers.push(lambda);
        self.states.push(x);
    }

    /// CSV with header `t,x1..xn,lambda1..lambdam,H,constraint_norm,P1..Pk`,
    /// values in 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.states.first().map_or(0, |s| s.len());
        let m = self.multipliers.first().map_or(0, |s| s.len());
        let k = self.momenta.first().map_or(0, |s| s.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("lambda{i}")));
        header.push("H".into());
        header.push("constraint_norm".into());
        header.extend((1..=k).map(|i| format!("P{i}")));
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut row = vec![fmt17(self.times[i])];
            row.extend(self.states[i].iter().map(|v| fmt17(*v)));
            row.extend(self.multipliers[i].iter().map(|v| fmt17(*v)));
            row.push(fmt17(self.energy[i]));
            row.push(fmt17(self.constraint_norm[i]));
            row.extend(self.momenta[i].iter().map(|v| fmt17(*v)));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

pub(crate) fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn integrate(
    sys: &ImplicitSystem,
    x0: &DVector<f64>,
    t_end: f64,
    dt: f64,
    options: &IntegrateOptions,
) -> Result<Trajectory> {
    if !(dt > 0.0) || !(t_end > 0.0) {
        return Err(DiracError::Config(format!(
            "dt and t_end must be positive (dt = {dt}, t_end = {t_end})"
        )));
    }
    if x0.len() != sys.n() {
        return Err(DiracError::DimensionMismatch {
            expected: sys.n(),
            found: x0.len(),
        });
    }
    let mut x = if options.project_initial {
        project_to_constraint(sys, x0, options.newton_max_iter, options.newton_tol)
    } else {
        x0.clone()
    };
    // refuse non-index-1 data up front
    solve_multipliers(sys, &x)?;

    let steps = (t_end / dt - 1e-9).ceil().max(1.0) as usize;
    let mut traj = Trajectory::default();
    let integrals = options.first_integrals.as_ref();
    let mut t = 0.0;
    for i in 0..steps {
        let h = if i + 1 == steps { t_end - t } else { dt };
        let (next, lambda) = step(sys, &x, h, options.method).map_err(|e| {
            DiracError::IntegrationAborted {
                time: t,
                state: x.as_slice().to_vec(),
                source: Box::new(e),
            }
        })?;
        traj.record(sys, t, x, lambda, integrals);
        x = if options.projection {
            project_to_constraint(sys, &next, options.newton_max_iter, options.newton_tol)
        } else {
            next
        };
        t = if i + 1 == steps { t_end } else { (i + 1) as f64 * dt };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DiracError::IntegrationAborted {
                time: t,
                state: x.as_slice().to_vec(),
                source: Box::new(DiracError::Precondition("state became non-finite".into())),
            });
        }
    }
    let lambda = solve_multipliers(sys, &x).map_err(|e| DiracError::IntegrationAborted {
        time: t,
        state: x.as_slice().to_vec(),
        source: Box::new(e),
    })?;
    traj.record(sys, t, x, lambda, integrals);
    Ok(traj)
}

/// `max_t |H(x(t)) - H(x(0))|`.
pub fn energy_drift(traj: &Trajectory) -> f64 {
    match traj.energy.first() {
        Some(&e0) => traj.energy.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max),
        None => 0.0,
    }
}

/// Componentwise `max_t |P(x(t)) - P(x(0))|`.
pub fn first_integral_drift(traj: &Trajectory, p: &SmoothMap) -> DVector<f64> {
    let Some(x0) = traj.states.first() else {
        return DVector::zeros(p.out_dim());
    };
    let p0 = p.eval(x0);
    let mut drift = DVector::zeros(p.out_dim());
    for x in &traj.states {
        let d = (p.eval(x) - &p0).abs();
        drift = drift.sup(&d);
    }
    drift
}

/// Largest constraint norm along the trajectory.
pub fn constraint_drift(traj: &Trajectory) -> f64 {
    traj.constraint_norm.iter().cloned().fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::PoissonField;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn oscillator() -> ImplicitSystem {
        let h = SmoothMap::scalar_with_gradient(2, |x| 0.5 * x.norm_squared(), |x| x.clone());
        let grad = SmoothMap::linear(DMatrix::identity(2, 2));
        ImplicitSystem::with_gradient(PoissonField::canonical(1), DistributionField::zero(2), h, grad)
            .unwrap()
    }

    /// Particle on T*R² with Δ = span{∂/∂p1}.
    fn planar_with_p1_constraint() -> ImplicitSystem {
        let h = SmoothMap::scalar_with_gradient(
            4,
            |x| 0.5 * (x[2] * x[2] + x[3] * x[3]) + x[0],
            |x| v(&[1.0, 0.0, x[2], x[3]]),
        );
        let g = SmoothMap::constant(4, v(&[0.0, 0.0, 1.0, 0.0]));
        ImplicitSystem::new(
            PoissonField::canonical(2),
            DistributionField::new(4, vec![g]).unwrap(),
            h,
        )
        .unwrap()
    }

    #[test]
    fn unconstrained_has_empty_residual_and_multipliers() {
        let s = oscillator();
        let x = v(&[0.3, 0.4]);
        assert_eq!(constraint_residual(&s, &x).len(), 0);
        assert_eq!(index1_matrix(&s, &x).shape(), (0, 0));
        assert_eq!(solve_multipliers(&s, &x).unwrap().len(), 0);
        let (f, _) = eliminated_field(&s, &x).unwrap();
        assert!((f - v(&[0.4, -0.3])).norm() < 1e-15);
    }

    #[test]
    fn p1_constraint_multiplier_freezes_p1() {
        let s = planar_with_p1_constraint();
        let x = v(&[0.2, -0.1, 0.0, 0.7]);
        assert!(constraint_residual(&s, &x).norm() < 1e-15);
        // L_g L_g H = ∂²H/∂p1² = 1; L_{X_H} p1 = -∂H/∂q1 = -1, so λ = 1
        let lambda = solve_multipliers(&s, &x).unwrap();
        assert!((lambda[0] - 1.0).abs() < 1e-8);
        let (f, _) = eliminated_field(&s, &x).unwrap();
        assert!(f[2].abs() < 1e-8);
    }

    #[test]
    fn constant_hamiltonian_is_stationary_and_not_index1() {
        let s = planar_with_p1_constraint()
            .with_hamiltonian(SmoothMap::constant(4, v(&[2.0])))
            .unwrap();
        let x = v(&[1.0, 2.0, 3.0, 4.0]);
        assert!(index1_matrix(&s, &x).norm() < 1e-12);
        assert!(matches!(
            solve_multipliers(&s, &x),
            Err(DiracError::NotIndexOne { .. })
        ));
        let free = oscillator()
            .with_hamiltonian(SmoothMap::constant(2, v(&[1.0])))
            .unwrap();
        let traj = integrate(&free, &v(&[0.5, 0.5]), 1.0, 0.1, &IntegrateOptions::default()).unwrap();
        assert!(traj.states.iter().all(|s| (s - v(&[0.5, 0.5])).norm() == 0.0));
        assert_eq!(energy_drift(&traj), 0.0);
    }

    #[test]
    fn oscillator_returns_after_one_period() {
        let s = oscillator();
        let x0 = v(&[1.0, 0.0]);
        let traj = integrate(&s, &x0, 2.0 * std::f64::consts::PI, 1e-3, &IntegrateOptions::default())
            .unwrap();
        assert!((traj.last_state().unwrap() - &x0).norm() < 1e-8);
        assert!(energy_drift(&traj) < 1e-9);
        assert!((traj.times.last().unwrap() - 2.0 * std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_step() {
        let s = oscillator();
        let e = integrate(&s, &v(&[1.0, 0.0]), 1.0, 0.0, &IntegrateOptions::default()).unwrap_err();
        assert!(matches!(e, DiracError::Config(_)));
        let e = integrate(&s, &v(&[1.0, 0.0]), -1.0, 0.1, &IntegrateOptions::default()).unwrap_err();
        assert!(matches!(e, DiracError::Config(_)));
    }

    #[test]
    fn csv_header_and_precision() {
        let s = planar_with_p1_constraint();
        let opts = IntegrateOptions {
            first_integrals: Some(SmoothMap::scalar(4, |x| x[3])),
            ..Default::default()
        };
        let traj = integrate(&s, &v(&[0.0, 0.0, 0.0, 1.0]), 0.2, 0.1, &opts).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x1,x2,x3,x4,lambda1,H,constraint_norm,P1");
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 9);
        assert_eq!(row[0], "0.0000000000000000e0");
        assert_eq!(text.lines().count(), 4);
    }
}
