//! Polynomial coefficient tables with exact derivatives.
//!
//! A [`Polynomial`] is a list of `(coefficient, exponents)` terms; a vector of
//! them becomes a [`SmoothMap`] whose Jacobian is computed exactly. Used for
//! file-defined systems, where closures are unavailable.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DiracError, Result};
use crate::fields::SmoothMap;

/// Highest total degree accepted from scenario files.
pub const MAX_DEGREE: u32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coef: f64,
    pub exps: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial {
    pub terms: Vec<Term>,
}

impl Polynomial {
    pub fn zero() -> Self {
        Polynomial { terms: Vec::new() }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        Polynomial {
            terms: vec![Term {
                coef: c,
                exps: vec![0; nvars],
            }],
        }
    }

    /// The coordinate function `x_i`.
    pub fn var(nvars: usize, i: usize) -> Self {
        let mut exps = vec![0; nvars];
        exps[i] = 1;
        Polynomial {
            terms: vec![Term { coef: 1.0, exps }],
        }
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|t| t.exps.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    /// Every term must have `nvars` exponents and total degree `<= max_degree`.
    pub fn validate(&self, nvars: usize, max_degree: u32) -> Result<()> {
        for t in &self.terms {
            if t.exps.len() != nvars {
                return Err(DiracError::DimensionMismatch {
                    expected: nvars,
                    found: t.exps.len(),
                });
            }
            if !t.coef.is_finite() {
                return Err(DiracError::Config("non-finite polynomial coefficient".into()));
            }
        }
        if self.degree() > max_degree {
            return Err(DiracError::Config(format!(
                "polynomial degree {} exceeds {max_degree}",
                self.degree()
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.exps
                    .iter()
                    .enumerate()
                    .fold(t.coef, |acc, (i, &e)| acc * x[i].powi(e as i32))
            })
            .sum()
    }

    /// Exact partial derivative in variable `k`.
    pub fn derivative(&self, k: usize) -> Polynomial {
        let terms = self
            .terms
            .iter()
            .filter(|t| t.exps[k] > 0)
            .map(|t| {
                let mut exps = t.exps.clone();
                exps[k] -= 1;
                Term {
                    coef: t.coef * t.exps[k] as f64,
                    exps,
                }
            })
            .collect();
        Polynomial { terms }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(x.len(), (0..x.len()).map(|k| self.derivative(k).eval(x)))
    }
}

/// Vector of polynomials as a smooth map with exact Jacobian.
pub fn poly_map(nvars: usize, components: Vec<Polynomial>) -> SmoothMap {
    let out = components.len();
    let derivs: Vec<Vec<Polynomial>> = components
        .iter()
        .map(|p| (0..nvars).map(|k| p.derivative(k)).collect())
        .collect();
    let comps = components.clone();
    SmoothMap::new(nvars, out, move |x| {
        DVector::from_iterator(comps.len(), comps.iter().map(|p| p.eval(x)))
    })
    .with_jacobian(move |x| DMatrix::from_fn(out, nvars, |i, k| derivs[i][k].eval(x)))
}

/// Scalar polynomial as a smooth map.
pub fn poly_scalar(nvars: usize, p: Polynomial) -> SmoothMap {
    poly_map(nvars, vec![p])
}

/// Gradient map of a polynomial, with exact (Hessian) Jacobian.
pub fn poly_gradient(nvars: usize, p: &Polynomial) -> SmoothMap {
    poly_map(nvars, (0..nvars).map(|k| p.derivative(k)).collect())
}
