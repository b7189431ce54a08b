use dirac_core::fields::{DistributionField, PoissonField, SmoothMap};
use dirac_core::poly::{poly_map, Polynomial, Term};
use dirac_core::reduction::{
    bracket_table_at, piece_classification, project_system, projectable_basis_check,
    regular_equality_check, restrict_system, singular_dynamics_residual, InvariantChart,
    LevelSetChart,
};
use dirac_core::symmetry::{GroupAction, MomentumMap};
use dirac_core::systems::SampleKind;
use dirac_core::{builtin, integrate, DiracError, ImplicitSystem, IntegrateOptions};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn probes(n: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| DVector::from_fn(n, |_, _| rng.sample(StandardNormal))).collect()
}

fn mono(coef: f64, exps: [u32; 4]) -> Term {
    Term { coef, exps: exps.to_vec() }
}

#[test]
fn identity_level_set_keeps_the_fibers() {
    let b = builtin("oscillator_s1").unwrap();
    let chart = LevelSetChart::identity(4);
    let us = probes(4, 10, 1);
    let fibers = restrict_system(&b.sys, &MomentumMap::zero(4, 0), &chart, &us).unwrap();
    for f in &fibers {
        assert!(f.fiber.distance(&b.sys.dirac_at(&f.x).unwrap()).unwrap() < 1e-10);
    }
    let quotient = SmoothMap::linear(DMatrix::identity(4, 4));
    let (projected, rep) = project_system(&b.sys, &GroupAction::trivial(4), &chart, &quotient, &us).unwrap();
    assert!(rep.pass);
    for (p, f) in projected.iter().zip(&fibers) {
        assert!(p.fiber.distance(&f.fiber).unwrap() < 1e-10);
    }
}

#[test]
fn chart_off_the_level_is_rejected() {
    let b = builtin("oscillator_s1").unwrap();
    let id = SmoothMap::linear(DMatrix::identity(4, 4));
    let chart = LevelSetChart::new(DVector::from_element(1, 1.0), id.clone(), id).unwrap();
    let err = restrict_system(&b.sys, &b.p, &chart, &probes(4, 5, 2)).unwrap_err();
    assert!(matches!(err, DiracError::Precondition(_)));
}

#[test]
fn zero_structure_projects_to_zero_structure() {
    // J = 0 and Δ = everything gives D = R^n × {0}
    let n = 3;
    let fields = (0..n)
        .map(|i| SmoothMap::constant(n, DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 })))
        .collect();
    let sys = ImplicitSystem::new(
        PoissonField::constant(DMatrix::zeros(n, n)).unwrap(),
        DistributionField::new(n, fields).unwrap(),
        SmoothMap::scalar(n, |_| 0.0),
    )
    .unwrap();
    let quotient = SmoothMap::linear(DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 1.0]));
    let (projected, _) =
        project_system(&sys, &GroupAction::trivial(n), &LevelSetChart::identity(n), &quotient, &probes(n, 4, 3)).unwrap();
    let zero = dirac_core::ConstantDirac::from_presymplectic(&DMatrix::zeros(2, 2)).unwrap();
    for p in projected {
        assert!(p.fiber.distance(&zero).unwrap() < 1e-12);
    }
}

#[test]
fn invariants_commute_with_the_momentum() {
    // oscillator invariants plus P itself: {σ_i, P} = 0 everywhere
    let sigmas = vec![
        Polynomial { terms: vec![mono(1.0, [2, 0, 0, 0]), mono(1.0, [0, 2, 0, 0])] },
        Polynomial { terms: vec![mono(1.0, [0, 0, 2, 0]), mono(1.0, [0, 0, 0, 2])] },
        Polynomial { terms: vec![mono(1.0, [1, 0, 1, 0]), mono(1.0, [0, 1, 0, 1])] },
        Polynomial { terms: vec![mono(1.0, [1, 0, 0, 1]), mono(-1.0, [0, 1, 1, 0])] },
    ];
    let chart = InvariantChart::new(poly_map(4, sigmas));
    let b = builtin("oscillator_s1").unwrap();
    for x in probes(4, 20, 4) {
        let t = bracket_table_at(&b.sys, &chart, &x);
        assert!(t.column(3).amax() < 1e-12 && t.row(3).amax() < 1e-12);
    }
    let constants = InvariantChart::new(SmoothMap::constant(4, DVector::from_column_slice(&[1.0, 2.0])));
    assert_eq!(bracket_table_at(&b.sys, &constants, &probes(4, 1, 5)[0]).amax(), 0.0);
}

#[test]
fn projectable_bases() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for name in ["spherical_pendulum", "free_particle_translation", "knife_edge"] {
        let b = builtin(name).unwrap();
        let pts = b.sample_many(SampleKind::Domain, 20, &mut rng);
        let rep = projectable_basis_check(&b.sys, &b.action, &b.projectable_basis, &b.invariant_chart.sigmas, &pts).unwrap();
        assert!(rep.pass, "{name}: {}", rep.max_residual);
    }
    // rescaling the pendulum constraint field by a non-invariant factor
    // keeps the span but breaks equivariance
    let b = builtin("spherical_pendulum").unwrap();
    let g = b.projectable_basis[0].clone();
    let bent = SmoothMap::new(6, 6, move |x| g.eval(x) * (1.0 + x[0] * x[0])).with_fd_step(1e-6);
    let pts = b.sample_many(SampleKind::Domain, 20, &mut rng);
    let rep = projectable_basis_check(&b.sys, &b.action, &[bent], &b.invariant_chart.sigmas, &pts).unwrap();
    assert!(!rep.pass);
}

#[test]
fn singular_dynamics_edge_cases() {
    let b = builtin("spherical_pendulum").unwrap();
    let rest = DVector::from_column_slice(&[0.0, 0.0, -1.0, 0.0, 0.0, 0.0]);
    let traj = integrate(&b.sys, &rest, 0.5, 0.01, &IntegrateOptions::default()).unwrap();
    let r = singular_dynamics_residual(&b.sys, &b.action, &b.p, &b.invariant_chart, &traj, &b.admissible).unwrap();
    assert!(r.max_residual < 1e-12 && r.pass);

    let spinning = DVector::from_column_slice(&[0.6, 0.0, -0.8, 0.0, 1.0, 0.0]);
    let traj = integrate(&b.sys, &spinning, 0.5, 0.01, &IntegrateOptions::default()).unwrap();
    let err = singular_dynamics_residual(&b.sys, &b.action, &b.p, &b.invariant_chart, &traj, &b.admissible).unwrap_err();
    assert!(matches!(err, DiracError::Precondition(_)));
}

#[test]
fn trivial_action_has_one_stratum() {
    let b = builtin("free_particle_translation").unwrap();
    let rep = piece_classification(
        &b.sys,
        &GroupAction::trivial(4),
        &MomentumMap::zero(4, 0),
        &b.invariant_chart,
        &probes(4, 15, 7),
    )
    .unwrap();
    assert_eq!(rep.strata.len(), 1);
    assert_eq!(rep.strata[0].count, 15);
}

#[test]
fn regular_equality_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (name, mu) in [("free_particle_translation", 1.0), ("free_particle_translation", -0.3), ("oscillator_s1", 0.5), ("oscillator_s1", -2.0)] {
        let b = builtin(name).unwrap();
        let lc = b.level_chart(mu).unwrap();
        let us: Vec<_> = (0..25).map(|_| (lc.sampler)(&mut rng)).collect();
        let rep = regular_equality_check(&b.sys, &b.action, &b.p, &lc.chart, &lc.invariant_to_chart, &us).unwrap();
        assert!(rep.pass, "{name} at {mu}: {}", rep.max_residual);
    }
    // trivial group: both sides are the original fibers
    let b = builtin("knife_edge").unwrap();
    let id = SmoothMap::linear(DMatrix::identity(6, 6));
    let rep = regular_equality_check(
        &b.sys,
        &GroupAction::trivial(6),
        &MomentumMap::zero(6, 0),
        &LevelSetChart::identity(6),
        &id,
        &probes(6, 10, 9),
    )
    .unwrap();
    assert!(rep.pass, "{}", rep.max_residual);
}

#[test]
fn oscillator_level_zero_is_singular() {
    let b = builtin("oscillator_s1").unwrap();
    assert!(matches!(b.level_chart(0.0).unwrap_err(), DiracError::Precondition(_)));
}
