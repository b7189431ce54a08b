//! Scenario files and the system context they resolve to.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use dirac_core::fields::{DistributionField, PoissonField};
use dirac_core::ihs_core::{project_to_constraint, ImplicitSystem};
use dirac_core::poly::{poly_gradient, poly_map, poly_scalar, Polynomial, MAX_DEGREE};
use dirac_core::reduction::InvariantChart;
use dirac_core::symmetry::{GroupAction, MomentumMap};
use dirac_core::systems::{builtin_with, BuiltinOptions, SampleKind, SystemBundle};
use dirac_core::{DiracError, Result};
use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub system: SystemSpec,
    #[serde(default)]
    pub run: Option<RunSpec>,
    #[serde(default)]
    pub checks: Vec<CheckSpec>,
    #[serde(default)]
    pub outputs: OutputSpec,
}

/// `"name"`, `{"builtin": "name", "g0": 1.62}` or `{"inline": {...}}`.
#[derive(Debug, Clone)]
pub enum SystemSpec {
    Name(String),
    Builtin { builtin: String, g0: Option<f64> },
    Inline { inline: InlineSystem },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BuiltinRef {
    builtin: String,
    #[serde(default)]
    g0: Option<f64>,
}

impl<'de> Deserialize<'de> for SystemSpec {
    // dispatched by hand so inline parse errors keep their message
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let v = serde_json::Value::deserialize(d)?;
        match v {
            serde_json::Value::String(s) => Ok(SystemSpec::Name(s)),
            serde_json::Value::Object(ref m) if m.contains_key("inline") => {
                let inline = m.get("inline").cloned().unwrap_or_default();
                if m.len() != 1 {
                    return Err(D::Error::custom("inline system takes no sibling keys"));
                }
                serde_json::from_value(inline)
                    .map(|inline| SystemSpec::Inline { inline })
                    .map_err(|e| D::Error::custom(format!("inline system: {e}")))
            }
            serde_json::Value::Object(_) => serde_json::from_value::<BuiltinRef>(v)
                .map(|b| SystemSpec::Builtin {
                    builtin: b.builtin,
                    g0: b.g0,
                })
                .map_err(|e| D::Error::custom(format!("system: {e}"))),
            _ => Err(D::Error::custom("system must be a name or an object")),
        }
    }
}

/// A file-defined system. Every smooth map is a polynomial table, so all
/// derivatives are exact.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineSystem {
    pub name: Option<String>,
    pub n: usize,
    /// `n × n` entries of the skew field J.
    pub j: Vec<Vec<Polynomial>>,
    /// Constraint force fields, each with `n` components.
    #[serde(default)]
    pub g: Vec<Vec<Polynomial>>,
    pub h: Polynomial,
    /// Infinitesimal generators, each with `n` components.
    #[serde(default)]
    pub generators: Vec<Vec<Polynomial>>,
    /// Momentum map components, one per generator.
    #[serde(default)]
    pub momentum: Vec<Polynomial>,
    /// Invariant generators.
    #[serde(default)]
    pub sigmas: Vec<Polynomial>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub x0: Vec<f64>,
    pub t_end: f64,
    pub dt: f64,
    #[serde(default = "default_true")]
    pub projection: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    pub name: String,
    #[serde(default)]
    pub probes: Option<usize>,
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub trajectory: Option<String>,
    pub report: Option<String>,
    pub sigma: Option<String>,
    pub strata: Option<String>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Scenario> {
        let text = fs::read_to_string(path)
            .map_err(|e| DiracError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| DiracError::Config(format!("invalid scenario {}: {e}", path.display())))
    }

    pub fn for_system(name: &str) -> Scenario {
        Scenario {
            system: SystemSpec::Name(name.to_string()),
            run: None,
            checks: Vec::new(),
            outputs: OutputSpec::default(),
        }
    }
}

impl RunSpec {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.x0.len() != n {
            return Err(DiracError::Config(format!(
                "x0 has {} entries, system dimension is {n}",
                self.x0.len()
            )));
        }
        if !(self.dt > 0.0) || !(self.t_end > 0.0) {
            return Err(DiracError::Config(format!(
                "dt and t_end must be positive (dt = {}, t_end = {})",
                self.dt, self.t_end
            )));
        }
        Ok(())
    }
}

type Sampler = Arc<dyn Fn(&mut dyn RngCore) -> DVector<f64> + Send + Sync>;

/// Everything a command needs about the selected system.
#[derive(Clone)]
pub struct Context {
    pub name: String,
    pub sys: ImplicitSystem,
    pub action: GroupAction,
    pub p: MomentumMap,
    pub chart: Option<InvariantChart>,
    pub bundle: Option<SystemBundle>,
    inline_domain: Option<Sampler>,
}

impl Context {
    pub fn resolve(spec: &SystemSpec, g0: Option<f64>) -> Result<Context> {
        match spec {
            SystemSpec::Name(name) => Self::from_builtin(name, g0),
            SystemSpec::Builtin { builtin, g0: file_g0 } => Self::from_builtin(builtin, g0.or(*file_g0)),
            SystemSpec::Inline { inline } => Self::from_inline(inline),
        }
    }

    fn from_builtin(name: &str, g0: Option<f64>) -> Result<Context> {
        let mut opts = BuiltinOptions::default();
        if let Some(g) = g0 {
            opts.g0 = g;
        }
        let b = builtin_with(name, &opts)?;
        Ok(Context {
            name: b.name.clone(),
            sys: b.sys.clone(),
            action: b.action.clone(),
            p: b.p.clone(),
            chart: Some(b.invariant_chart.clone()),
            bundle: Some(b),
            inline_domain: None,
        })
    }

    fn from_inline(s: &InlineSystem) -> Result<Context> {
        let n = s.n;
        let check = |p: &Polynomial| p.validate(n, MAX_DEGREE);
        if s.j.len() != n || s.j.iter().any(|row| row.len() != n) {
            return Err(DiracError::Config(format!("j must be {n} x {n}")));
        }
        s.j.iter().flatten().try_for_each(check)?;
        s.g.iter().flatten().try_for_each(check)?;
        s.generators.iter().flatten().try_for_each(check)?;
        s.momentum.iter().try_for_each(check)?;
        s.sigmas.iter().try_for_each(check)?;
        check(&s.h)?;
        if s.g.iter().chain(s.generators.iter()).any(|f| f.len() != n) {
            return Err(DiracError::Config(format!("vector fields need {n} components")));
        }
        if !s.momentum.is_empty() && s.momentum.len() != s.generators.len() {
            return Err(DiracError::Config(
                "momentum needs one component per generator".into(),
            ));
        }
        // row-major flattening, as PoissonField expects
        let entries: Vec<Polynomial> = s.j.iter().flatten().cloned().collect();
        let j = PoissonField::new(n, poly_map(n, entries))?;
        let fields = s.g.iter().map(|g| poly_map(n, g.clone())).collect();
        let delta = DistributionField::new(n, fields)?;
        let sys = ImplicitSystem::with_gradient(
            j,
            delta,
            poly_scalar(n, s.h.clone()),
            poly_gradient(n, &s.h),
        )?;
        let gens = s.generators.iter().map(|g| poly_map(n, g.clone())).collect();
        let action = GroupAction::new(n, gens)?;
        let action = if s.generators.is_empty() {
            GroupAction::trivial(n)
        } else {
            action
        };
        let p = if s.momentum.is_empty() {
            MomentumMap::zero(n, s.generators.len())
        } else {
            MomentumMap::new(poly_map(n, s.momentum.clone()))
        };
        let chart = if s.sigmas.is_empty() {
            None
        } else {
            Some(InvariantChart::new(poly_map(n, s.sigmas.clone())))
        };
        let domain: Sampler = Arc::new(move |rng| {
            DVector::from_fn(n, |_, _| StandardNormal.sample(&mut *rng))
        });
        Ok(Context {
            name: s.name.clone().unwrap_or_else(|| "inline".into()),
            sys,
            action,
            p,
            chart,
            bundle: None,
            inline_domain: Some(domain),
        })
    }

    pub fn n(&self) -> usize {
        self.sys.n()
    }

    pub fn sample(&self, kind: SampleKind, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
        if let Some(b) = &self.bundle {
            return Ok(match kind {
                SampleKind::Domain => b.sample_domain(rng),
                SampleKind::Constraint => b.sample_constraint(rng),
                SampleKind::ZeroLevel => b.sample_zero_level(rng),
            });
        }
        let domain = self
            .inline_domain
            .as_ref()
            .expect("inline contexts carry a domain sampler");
        match kind {
            SampleKind::Domain => Ok(domain(rng)),
            SampleKind::Constraint => Ok(project_to_constraint(&self.sys, &domain(rng), 50, 1e-13)),
            SampleKind::ZeroLevel if self.p.r() == 0 => {
                Ok(project_to_constraint(&self.sys, &domain(rng), 50, 1e-13))
            }
            SampleKind::ZeroLevel => Err(DiracError::Config(
                "inline systems have no sampler for the zero momentum level".into(),
            )),
        }
    }

    pub fn samples(&self, kind: SampleKind, count: usize, rng: &mut dyn RngCore) -> Result<Vec<DVector<f64>>> {
        (0..count).map(|_| self.sample(kind, rng)).collect()
    }

    pub fn require_chart(&self) -> Result<&InvariantChart> {
        self.chart
            .as_ref()
            .ok_or_else(|| DiracError::Config(format!("{} has no invariant chart", self.name)))
    }

    /// Default initial data per built-in system.
    pub fn default_run(&self, purpose: RunPurpose) -> Option<RunSpec> {
        let (x0, t_end, dt) = match (self.name.as_str(), purpose) {
            ("oscillator_s1", RunPurpose::Simulate) => (vec![1.0, 0.0, 0.0, 1.0], 2.0 * std::f64::consts::PI, 0.01),
            ("oscillator_s1", RunPurpose::Reduce) => (vec![1.0, 0.5, -0.4, -0.2], 1.998, 0.002),
            ("spherical_pendulum", RunPurpose::Simulate) => {
                let a: f64 = 1.0;
                (vec![a.sin(), 0.0, -a.cos(), 0.0, 1.0, 0.0], 10.0, 1e-3)
            }
            ("spherical_pendulum", RunPurpose::Reduce) => {
                let a: f64 = 1.0;
                (vec![a.sin(), 0.0, -a.cos(), 0.0, 0.0, 0.0], 1.998, 0.002)
            }
            ("knife_edge", _) => (vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.5], 10.0, 1e-3),
            ("free_particle_translation", RunPurpose::Simulate) => (vec![0.0, 0.0, 1.0, -0.5], 5.0, 0.01),
            ("free_particle_translation", RunPurpose::Reduce) => (vec![0.0, 0.0, 1.0, 0.0], 1.998, 0.002),
            _ => return None,
        };
        Some(RunSpec {
            x0,
            t_end,
            dt,
            projection: true,
        })
    }

    pub fn level_mu(&self) -> Option<f64> {
        self.bundle
            .as_ref()
            .and_then(|b| b.reference.values.get("level_mu").copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunPurpose {
    Simulate,
    Reduce,
}

/// Random skew matrix with standard normal entries.
pub fn random_skew(n: usize, rng: &mut dyn RngCore) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut *rng));
    (&a - a.transpose()) * 0.5
}
