use dirac_core::fields::{bracket, lie_bracket, lie_derivative_scalar, PoissonField, SmoothMap};
use dirac_core::poly::{poly_map, poly_scalar, Polynomial, Term};
use nalgebra::DVector;
use proptest::prelude::*;

const N: usize = 4;

fn term() -> impl Strategy<Value = Term> {
    (-2.0f64..2.0, prop::collection::vec(0u32..3, N))
        .prop_filter("degree <= 2", |(_, e)| e.iter().sum::<u32>() <= 2)
        .prop_map(|(coef, exps)| Term { coef, exps })
}

fn poly() -> impl Strategy<Value = Polynomial> {
    prop::collection::vec(term(), 1..4).prop_map(|terms| Polynomial { terms })
}

fn point() -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-1.5f64..1.5, N).prop_map(DVector::from_vec)
}

fn product(a: &Polynomial, b: &Polynomial) -> Polynomial {
    let mut terms = Vec::new();
    for s in &a.terms {
        for t in &b.terms {
            terms.push(Term {
                coef: s.coef * t.coef,
                exps: s.exps.iter().zip(&t.exps).map(|(x, y)| x + y).collect(),
            });
        }
    }
    Polynomial { terms }
}

/// `{f, g}` as a function, differentiated by central differences.
fn bracket_map(f: SmoothMap, g: SmoothMap, j: PoissonField) -> SmoothMap {
    SmoothMap::scalar(N, move |x| bracket(&f, &g, &j, x)).with_fd_step(1e-5)
}

fn bracket_field(x: SmoothMap, y: SmoothMap) -> SmoothMap {
    SmoothMap::new(N, N, move |p| lie_bracket(&x, &y, p)).with_fd_step(1e-5)
}

proptest! {
    #[test]
    fn leibniz_rule(f in poly(), g in poly(), h in poly(), x in point()) {
        let j = PoissonField::canonical(2);
        let (pf, pg, ph) = (poly_scalar(N, f), poly_scalar(N, g.clone()), poly_scalar(N, h.clone()));
        let gh = poly_scalar(N, product(&g, &h));
        let lhs = bracket(&pf, &gh, &j, &x);
        let rhs = bracket(&pf, &pg, &j, &x) * ph.eval_scalar(&x) + pg.eval_scalar(&x) * bracket(&pf, &ph, &j, &x);
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn bracket_is_skew_and_satisfies_jacobi(f in poly(), g in poly(), h in poly(), x in point()) {
        let j = PoissonField::canonical(2);
        let (f, g, h) = (poly_scalar(N, f), poly_scalar(N, g), poly_scalar(N, h));
        prop_assert!((bracket(&f, &g, &j, &x) + bracket(&g, &f, &j, &x)).abs() < 1e-12);
        let gh = bracket_map(g.clone(), h.clone(), j.clone());
        let hf = bracket_map(h.clone(), f.clone(), j.clone());
        let fg = bracket_map(f.clone(), g.clone(), j.clone());
        let cyc = bracket(&f, &gh, &j, &x) + bracket(&g, &hf, &j, &x) + bracket(&h, &fg, &j, &x);
        prop_assert!(cyc.abs() < 1e-5, "cyclic sum {}", cyc);
    }

    #[test]
    fn vector_field_jacobi(
        xs in prop::collection::vec(poly(), N),
        ys in prop::collection::vec(poly(), N),
        zs in prop::collection::vec(poly(), N),
        p in point(),
    ) {
        let (x, y, z) = (poly_map(N, xs), poly_map(N, ys), poly_map(N, zs));
        prop_assert!((lie_bracket(&x, &y, &p) + lie_bracket(&y, &x, &p)).amax() < 1e-12);
        let yz = bracket_field(y.clone(), z.clone());
        let zx = bracket_field(z.clone(), x.clone());
        let xy = bracket_field(x.clone(), y.clone());
        let cyc = lie_bracket(&x, &yz, &p) + lie_bracket(&y, &zx, &p) + lie_bracket(&z, &xy, &p);
        prop_assert!(cyc.amax() < 1e-5, "cyclic sum {}", cyc.amax());
    }

    #[test]
    fn lie_derivative_is_a_derivation(xs in prop::collection::vec(poly(), N), f in poly(), g in poly(), p in point()) {
        let x = poly_map(N, xs);
        let fg = poly_scalar(N, product(&f, &g));
        let (f, g) = (poly_scalar(N, f), poly_scalar(N, g));
        let lhs = lie_derivative_scalar(&x, &fg, &p);
        let rhs = lie_derivative_scalar(&x, &f, &p) * g.eval_scalar(&p) + f.eval_scalar(&p) * lie_derivative_scalar(&x, &g, &p);
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
    }
}
