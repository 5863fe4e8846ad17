//! Declarative experiment files (TOML) and their validation.
//!
//! ```toml
//! seed = 7
//! reference_variant = "generic_gksl"
//!
//! [dims]
//! a = 2
//! b = 2
//!
//! [operators]
//! h_a = { preset = "pauli_z", scale = 0.5 }
//! h_b = "zero"
//! l_ops = ["pauli_z"]
//! m_ops = []
//!
//! [noise]
//! sigma_aa = [[0.5]]
//!
//! [initial]
//! kind = "fixed"
//! x = [0.7071067811865476, 0.7071067811865476]
//! y = [1, 0]
//!
//! [window]
//! epsilon = 0.1
//! ensemble = 2000
//! tau = { start = 0.0, stop = 1.5, count = 16 }
//! ```
//!
//! Complex numbers are written as `[re, im]`; a bare number is real.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coarse::WindowConfig;
use crate::error::{DcmError, Result};
use crate::gksl::ReferenceVariant;
use crate::harness::{InitialState, RunSettings, SweepConfig};
use crate::hilbert::{presets, ComplexMatrix, ComplexVector, HilbertDims, C64};
use crate::micro::{InteractionTerm, Mode, SystemSpec};
use crate::noise::{build_noise_model, NoiseKind, NoiseModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Real(f64),
    Complex([f64; 2]),
}

impl Scalar {
    pub fn value(self) -> C64 {
        match self {
            Scalar::Real(x) => C64::new(x, 0.0),
            Scalar::Complex([re, im]) => C64::new(re, im),
        }
    }
}

/// An operator given by preset name, literal rows, or either with a scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OperatorSpec {
    Preset(String),
    Rows(Vec<Vec<Scalar>>),
    Scaled {
        #[serde(default)]
        preset: Option<String>,
        #[serde(default)]
        matrix: Option<Vec<Vec<Scalar>>>,
        #[serde(default)]
        scale: Option<Scalar>,
    },
}

fn rows_to_matrix(rows: &[Vec<Scalar>], r: usize, c: usize, what: &str) -> Result<ComplexMatrix> {
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        return Err(DcmError::dim(format!("{what}: expected a {r}x{c} matrix")));
    }
    Ok(ComplexMatrix::from_fn(r, c, |i, j| rows[i][j].value()))
}

impl OperatorSpec {
    pub fn resolve(&self, dim: usize, what: &str) -> Result<ComplexMatrix> {
        let preset = |name: &str| {
            presets::by_name(name, dim).ok_or_else(|| {
                DcmError::config(format!("{what}: unknown preset `{name}` for dimension {dim}"))
            })
        };
        match self {
            OperatorSpec::Preset(name) => preset(name),
            OperatorSpec::Rows(rows) => rows_to_matrix(rows, dim, dim, what),
            OperatorSpec::Scaled { preset: p, matrix, scale } => {
                let base = match (p, matrix) {
                    (Some(name), None) => preset(name)?,
                    (None, Some(rows)) => rows_to_matrix(rows, dim, dim, what)?,
                    _ => {
                        return Err(DcmError::config(format!(
                            "{what}: give exactly one of `preset` or `matrix`"
                        )))
                    }
                };
                Ok(base.scale(scale.map_or(C64::new(1.0, 0.0), Scalar::value)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionSpec {
    pub a: OperatorSpec,
    pub b: OperatorSpec,
    /// Real coupling multiplying `Â`.
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsSection {
    pub a: usize,
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorsSection {
    #[serde(default = "zero_op")]
    pub h_a: OperatorSpec,
    #[serde(default = "zero_op")]
    pub h_b: OperatorSpec,
    #[serde(default)]
    pub l_ops: Vec<OperatorSpec>,
    #[serde(default)]
    pub m_ops: Vec<OperatorSpec>,
    #[serde(default)]
    pub interaction: Vec<InteractionSpec>,
}

fn zero_op() -> OperatorSpec {
    OperatorSpec::Preset("zero".into())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub kind: NoiseKind,
    /// Omitted blocks are zero.
    #[serde(default, rename = "sigmaAA", alias = "sigma_aa")]
    pub sigma_aa: Option<Vec<Vec<Scalar>>>,
    #[serde(default, rename = "sigmaBB", alias = "sigma_bb")]
    pub sigma_bb: Option<Vec<Vec<Scalar>>>,
    #[serde(default, rename = "sigmaAB", alias = "sigma_ab")]
    pub sigma_ab: Option<Vec<Vec<Scalar>>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicroSection {
    #[serde(default)]
    pub mode: Mode,
    /// Overrides the derived step `c_dt ε²`.
    #[serde(default)]
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    #[default]
    Fixed,
    RandomHaar,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    #[serde(default)]
    pub kind: InitialKind,
    #[serde(default)]
    pub x: Option<Vec<Scalar>>,
    #[serde(default)]
    pub y: Option<Vec<Scalar>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauSpec {
    List(Vec<f64>),
    Range { start: f64, stop: f64, count: usize },
}

impl TauSpec {
    pub fn grid(&self) -> Result<Vec<f64>> {
        match self {
            TauSpec::List(v) => Ok(v.clone()),
            TauSpec::Range { start, stop, count } => {
                if *count < 2 {
                    return Err(DcmError::config("tau range needs count >= 2"));
                }
                let step = (stop - start) / (*count - 1) as f64;
                Ok((0..*count).map(|k| start + step * k as f64).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSection {
    pub epsilon: f64,
    #[serde(default = "one")]
    pub c_delta: f64,
    #[serde(default = "default_c_dt")]
    pub c_dt: f64,
    #[serde(default = "default_ensemble")]
    pub ensemble: usize,
    pub tau: TauSpec,
}

fn default_c_dt() -> f64 {
    0.1
}

fn default_ensemble() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub epsilons: Vec<f64>,
    /// Defaults to the window ensemble.
    #[serde(default)]
    pub ensemble: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    /// Defaults to the micro step.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_lags")]
    pub lags: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            dt: None,
            lags: default_lags(),
            samples: default_samples(),
        }
    }
}

fn default_lags() -> usize {
    3
}

fn default_samples() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub reference_variant: ReferenceVariant,
    pub dims: DimsSection,
    pub operators: OperatorsSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub micro: MicroSection,
    #[serde(default)]
    pub initial: InitialSection,
    pub window: WindowSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
}

/// A fully validated experiment, ready to run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub spec: SystemSpec,
    pub window: WindowConfig,
    pub settings: RunSettings,
    pub ensemble: usize,
    pub sweep: Option<SweepConfig>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| DcmError::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config is serializable")
    }

    fn noise_model(&self, n_a: usize, n_b: usize) -> Result<NoiseModel> {
        let block = |m: &Option<Vec<Vec<Scalar>>>, r: usize, c: usize, what: &str| match m {
            // An empty block such as `[[]]` stands for any zero-size shape.
            Some(rows) if r * c > 0 || rows.iter().any(|row| !row.is_empty()) => {
                rows_to_matrix(rows, r, c, what)
            }
            _ => Ok(ComplexMatrix::zeros(r, c)),
        };
        let aa = block(&self.noise.sigma_aa, n_a, n_a, "sigmaAA")?;
        let bb = block(&self.noise.sigma_bb, n_b, n_b, "sigmaBB")?;
        let ab = block(&self.noise.sigma_ab, n_a, n_b, "sigmaAB")?;
        build_noise_model(&aa, &bb, &ab, self.noise.kind)
    }

    fn initial_state(&self, dims: HilbertDims) -> Result<InitialState> {
        match self.initial.kind {
            InitialKind::RandomHaar => Ok(InitialState::RandomHaar),
            InitialKind::Fixed => {
                let vec = |v: &Option<Vec<Scalar>>, d: usize, what: &str| -> Result<ComplexVector> {
                    let v = v
                        .as_ref()
                        .ok_or_else(|| DcmError::config(format!("fixed initial state needs `{what}`")))?;
                    if v.len() != d {
                        return Err(DcmError::dim(format!("initial {what}: expected {d} entries")));
                    }
                    let out = ComplexVector::from_vec(v.iter().map(|s| s.value()).collect());
                    if out.norm_sqr() == 0.0 {
                        return Err(DcmError::config(format!("initial {what} is the zero vector")));
                    }
                    Ok(out)
                };
                Ok(InitialState::Fixed {
                    x: vec(&self.initial.x, dims.dim_a, "x")?,
                    y: vec(&self.initial.y, dims.dim_b, "y")?,
                })
            }
        }
    }

    /// Build and check every object a run needs, before any compute.
    pub fn validate(&self) -> Result<Experiment> {
        let dims = HilbertDims::new(self.dims.a, self.dims.b)?;
        let ops = &self.operators;
        let h_a = ops.h_a.resolve(dims.dim_a, "h_a")?;
        let h_b = ops.h_b.resolve(dims.dim_b, "h_b")?;
        let l_ops = ops
            .l_ops
            .iter()
            .enumerate()
            .map(|(j, o)| o.resolve(dims.dim_a, &format!("l_ops[{j}]")))
            .collect::<Result<Vec<_>>>()?;
        let m_ops = ops
            .m_ops
            .iter()
            .enumerate()
            .map(|(k, o)| o.resolve(dims.dim_b, &format!("m_ops[{k}]")))
            .collect::<Result<Vec<_>>>()?;
        let interaction = ops
            .interaction
            .iter()
            .enumerate()
            .map(|(m, t)| {
                Ok(InteractionTerm {
                    a: t.a.resolve(dims.dim_a, &format!("interaction[{m}].a"))?.scale_real(t.scale),
                    b: t.b.resolve(dims.dim_b, &format!("interaction[{m}].b"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let noise = self.noise_model(l_ops.len(), m_ops.len())?;
        let spec = SystemSpec::new(dims, h_a, h_b, l_ops, m_ops, interaction, noise)?;

        if self.micro.mode == Mode::Free && !spec.interaction().is_empty() {
            return Err(DcmError::config(
                "interaction terms need micro.mode = \"interacting\"",
            ));
        }
        if self.workers == Some(0) {
            return Err(DcmError::config("workers must be positive"));
        }

        let tau = self.window.tau.grid()?;
        let make_window = |eps: f64| -> Result<WindowConfig> {
            let w = WindowConfig::new(eps, self.window.c_delta, self.window.c_dt, tau.clone())?;
            let w = match self.micro.dt {
                Some(dt) => w.with_dt(dt)?,
                None => w,
            };
            spec.check_dt(w.dt_micro)?;
            Ok(w)
        };
        let window = make_window(self.window.epsilon)?;
        let initial = self.initial_state(dims)?;
        let mut settings = RunSettings::new(self.micro.mode, initial, self.seed, self.reference_variant);
        settings.workers = self.workers;

        let sweep = match &self.sweep {
            None => None,
            Some(s) => {
                let sweep = SweepConfig {
                    epsilons: s.epsilons.clone(),
                    c_delta: self.window.c_delta,
                    c_dt: self.window.c_dt,
                    ensemble_size: s.ensemble.unwrap_or(self.window.ensemble),
                    tau_grid: tau.clone(),
                    reference_variant: self.reference_variant,
                };
                for w in sweep.validate()? {
                    spec.check_dt(w.dt_micro)?;
                }
                Some(sweep)
            }
        };
        if self.window.ensemble < crate::harness::MIN_ENSEMBLE {
            return Err(DcmError::config(format!(
                "window.ensemble must be at least {}",
                crate::harness::MIN_ENSEMBLE
            )));
        }
        if let Some(dt) = self.diagnostics.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(DcmError::config("diagnostics.dt must be positive"));
            }
        }
        Ok(Experiment {
            config: self.clone(),
            spec,
            window,
            settings,
            ensemble: self.window.ensemble,
            sweep,
        })
    }
}
