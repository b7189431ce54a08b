//! Probe-based check reports, serialized as
//! `{check, probes, max_residual, tolerance, pass, failures: [{point, detail}]}`.

use nalgebra::DVector;
use serde::Serialize;

/// Failures kept per report; the count of probes is always exact.
pub const MAX_RECORDED_FAILURES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub point: Vec<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub check: String,
    pub probes: usize,
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub failures: Vec<Failure>,
}

impl CheckReport {
    pub fn new(check: impl Into<String>, tolerance: f64) -> Self {
        CheckReport {
            check: check.into(),
            probes: 0,
            max_residual: 0.0,
            tolerance,
            pass: true,
            failures: Vec::new(),
        }
    }

    /// Record one probe. NaN residuals count as failures.
    pub fn observe(&mut self, point: &DVector<f64>, residual: f64, detail: &str) {
        self.probes += 1;
        if residual.is_nan() {
            self.max_residual = f64::INFINITY;
        } else {
            self.max_residual = self.max_residual.max(residual);
        }
        if !(residual <= self.tolerance) {
            self.pass = false;
            if self.failures.len() < MAX_RECORDED_FAILURES {
                self.failures.push(Failure {
                    point: point.as_slice().to_vec(),
                    detail: format!("{detail} (residual {residual:.3e})"),
                });
            }
        }
    }

    /// Record a failure that has no residual attached.
    pub fn fail(&mut self, point: &DVector<f64>, detail: impl Into<String>) {
        self.pass = false;
        if self.failures.len() < MAX_RECORDED_FAILURES {
            self.failures.push(Failure {
                point: point.as_slice().to_vec(),
                detail: detail.into(),
            });
        }
    }

    pub fn finish(mut self) -> Self {
        self.pass = self.pass && self.failures.is_empty();
        self
    }

    /// Merge another report into this one (max residual, failures, probes).
    pub fn absorb(&mut self, other: &CheckReport) {
        self.probes += other.probes;
        self.max_residual = self.max_residual.max(other.max_residual);
        self.pass &= other.pass;
        for f in &other.failures {
            if self.failures.len() < MAX_RECORDED_FAILURES {
                self.failures.push(f.clone());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observe_tracks_failures() {
        let mut r = CheckReport::new("demo", 1e-6);
        let x = DVector::from_column_slice(&[1.0, 2.0]);
        r.observe(&x, 1e-9, "fine");
        assert!(r.pass);
        r.observe(&x, 1e-3, "too big");
        r.observe(&x, f64::NAN, "nan");
        let r = r.finish();
        assert!(!r.pass);
        assert_eq!(r.probes, 3);
        assert_eq!(r.failures.len(), 2);
        assert!(r.max_residual.is_infinite());
    }
}
