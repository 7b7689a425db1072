//! TOML run configuration.
//!
//! A document is parsed and validated in full before any design work starts;
//! unknown keys are rejected at every level.
//!
//! ```toml
//! mode = "linear"            # linear | event_triggered | nonlinear
//! x0 = [1.0, -0.5]
//! horizon = 5000
//! seed = 7
//! key_bits = "auto"          # or an integer bit length
//!
//! [linear]
//! a = [[1.0, 1.0], [0.0, 1.0]]
//! b = [[0.0], [1.0]]
//! poles = [0.3, 0.4]         # or k = [[k1, k2]]
//!
//! [output]
//! csv = "trajectory.csv"
//! metrics = "metrics.json"
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_bigint::BigUint;
use serde::Deserialize;
use thiserror::Error;

use crate::lindesign::{place_poles_single_input, DesignParams, PlantModel};
use crate::polyapprox::{Interval, NonlinearModel, NonlinearParams, ScalarFn};
use crate::simloop::{KeyChoice, Mode, Scenario, System, TransportKind, DEFAULT_FLOOR_RATIO};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("ConfigIo: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("ConfigSchema: {0}")]
    Schema(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

fn schema<T>(msg: impl Into<String>) -> Result<T> {
    Err(ConfigError::Schema(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Linear,
    EventTriggered,
    Nonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportName {
    #[default]
    InProcess,
    Tcp,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum KeyBits {
    Bits(u64),
    Named(String),
}

impl Default for KeyBits {
    fn default() -> Self {
        KeyBits::Named("auto".into())
    }
}

/// Nonlinearities available to nonlinear runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaName {
    Zero,
    Square,
    Sin,
    Cubic,
}

impl AlphaName {
    pub fn function(self) -> ScalarFn {
        match self {
            AlphaName::Zero => Arc::new(|_| 0.0),
            AlphaName::Square => Arc::new(|x| x * x),
            AlphaName::Sin => Arc::new(f64::sin),
            AlphaName::Cubic => Arc::new(|x| x * x * x),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSection {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub k: Option<Vec<Vec<f64>>>,
    /// Closed-loop poles for single-input plants, instead of `k`.
    pub poles: Option<Vec<f64>>,
    pub q: Option<Vec<Vec<f64>>>,
    pub q_bar: Option<Vec<Vec<f64>>>,
    pub epsilon: Option<f64>,
    pub safety_factor: Option<f64>,
    pub q_sat: Option<i64>,
    pub r_max: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearSection {
    pub a: f64,
    pub b: f64,
    pub k: f64,
    pub alpha: AlphaName,
    pub interval: [f64; 2],
    pub target_eps: Option<f64>,
    pub max_degree: Option<usize>,
    pub q_sat: Option<i64>,
    pub epsilon: Option<f64>,
    pub safety_factor: Option<f64>,
    pub r_max: Option<u64>,
    pub c2: Option<f64>,
    pub delta0: Option<f64>,
    pub freeze_stage: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub csv: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: ModeName,
    pub x0: Vec<f64>,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub transport: TransportName,
    #[serde(default)]
    pub key_bits: KeyBits,
    /// Explicit `[p, q]`; overrides `key_bits`.
    pub key_primes: Option<[u64; 2]>,
    #[serde(default)]
    pub allow_undersized_key: bool,
    #[serde(default = "default_floor_ratio")]
    pub floor_ratio: f64,
    #[serde(default)]
    pub always_trigger: bool,
    #[serde(default)]
    pub reblind_each_step: bool,
    #[serde(default)]
    pub record_timing: bool,
    pub linear: Option<LinearSection>,
    pub nonlinear: Option<NonlinearSection>,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_horizon() -> u64 {
    5000
}

fn default_floor_ratio() -> f64 {
    DEFAULT_FLOOR_RATIO
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return schema(format!("{name} must be a non-empty matrix"));
    }
    if rows.iter().any(|row| row.len() != c) {
        return schema(format!("{name} has rows of different lengths"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return schema(format!("{name} has non-finite entries"));
    }
    Ok(DMatrix::from_row_slice(r, c, &flat))
}

fn positive(name: &str, v: Option<f64>) -> Result<()> {
    match v {
        Some(v) if !(v > 0.0 && v.is_finite()) => schema(format!("{name} must be positive")),
        _ => Ok(()),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Schema(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return schema("horizon must be at least 1");
        }
        if self.x0.is_empty() || self.x0.iter().any(|v| !v.is_finite()) {
            return schema("x0 must be a non-empty list of finite numbers");
        }
        if let KeyBits::Named(s) = &self.key_bits {
            if s != "auto" {
                return schema(format!("key_bits must be an integer or \"auto\", got {s:?}"));
            }
        }
        positive("floor_ratio", Some(self.floor_ratio))?;
        match (self.mode, &self.linear, &self.nonlinear) {
            (ModeName::Nonlinear, None, Some(nl)) => {
                if self.x0.len() != 1 {
                    return schema("nonlinear runs take a scalar x0");
                }
                if !(nl.interval[0] < nl.interval[1]) {
                    return schema("interval must satisfy lo < hi");
                }
                for (name, v) in [("target_eps", nl.target_eps), ("epsilon", nl.epsilon), ("c2", nl.c2), ("delta0", nl.delta0)] {
                    positive(name, v)?;
                }
                Ok(())
            }
            (ModeName::Nonlinear, _, _) => schema("nonlinear mode needs a [nonlinear] section and no [linear] section"),
            (_, Some(lin), None) => {
                if lin.k.is_some() == lin.poles.is_some() {
                    return schema("[linear] needs exactly one of k or poles");
                }
                positive("epsilon", lin.epsilon)?;
                positive("safety_factor", lin.safety_factor)?;
                let n = self.x0.len();
                let a = matrix("a", &lin.a)?;
                let b = matrix("b", &lin.b)?;
                if a.shape() != (n, n) || b.nrows() != n {
                    return schema(format!("a must be {n}x{n} and b must have {n} rows to match x0"));
                }
                if let Some(k) = &lin.k {
                    if matrix("k", k)?.shape() != (b.ncols(), n) {
                        return schema(format!("k must be {}x{n}", b.ncols()));
                    }
                }
                for (name, m) in [("q", &lin.q), ("q_bar", &lin.q_bar)] {
                    if let Some(m) = m {
                        if matrix(name, m)?.shape() != (n, n) {
                            return schema(format!("{name} must be {n}x{n}"));
                        }
                    }
                }
                Ok(())
            }
            _ => schema("linear modes need a [linear] section and no [nonlinear] section"),
        }
    }

    fn linear_system(&self, lin: &LinearSection) -> Result<System> {
        let a = matrix("a", &lin.a)?;
        let b = matrix("b", &lin.b)?;
        let plant = PlantModel::new(a.clone(), b.clone()).map_err(|e| ConfigError::Schema(e.to_string()))?;
        let k = match (&lin.k, &lin.poles) {
            (Some(k), _) => matrix("k", k)?,
            (None, Some(poles)) => {
                if b.ncols() != 1 {
                    return schema("poles needs a single-input plant");
                }
                let b = DVector::from_column_slice(b.column(0).as_slice());
                place_poles_single_input(&a, &b, poles).map_err(|e| ConfigError::Schema(e.to_string()))?
            }
            (None, None) => unreachable!("validated"),
        };
        let mut params = DesignParams::default();
        params.epsilon = lin.epsilon.unwrap_or(params.epsilon);
        params.safety_factor = lin.safety_factor.unwrap_or(params.safety_factor);
        params.q_sat = lin.q_sat.unwrap_or(params.q_sat);
        params.r_max = lin.r_max.unwrap_or(params.r_max);
        Ok(System::Linear {
            plant,
            k,
            q: lin.q.as_deref().map(|q| matrix("q", q)).transpose()?,
            q_bar: lin.q_bar.as_deref().map(|q| matrix("q_bar", q)).transpose()?,
            params,
        })
    }

    fn nonlinear_system(nl: &NonlinearSection) -> Result<System> {
        let domain = Interval::new(nl.interval[0], nl.interval[1]).map_err(|e| ConfigError::Schema(e.to_string()))?;
        let model = NonlinearModel::new(nl.a, nl.b, nl.k, nl.alpha.function(), domain).map_err(|e| ConfigError::Schema(e.to_string()))?;
        let mut params = NonlinearParams::default();
        params.target_eps = nl.target_eps.unwrap_or(params.target_eps);
        params.max_degree = nl.max_degree.unwrap_or(params.max_degree);
        params.q_sat = nl.q_sat.unwrap_or(params.q_sat);
        params.epsilon = nl.epsilon.unwrap_or(params.epsilon);
        params.safety_factor = nl.safety_factor.unwrap_or(params.safety_factor);
        params.r_max = nl.r_max.unwrap_or(params.r_max);
        params.c2 = nl.c2.unwrap_or(params.c2);
        params.delta0 = nl.delta0.or(params.delta0);
        params.freeze_stage = nl.freeze_stage.or(params.freeze_stage);
        Ok(System::Nonlinear { model, params })
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let (mode, system) = match (self.mode, &self.linear, &self.nonlinear) {
            (ModeName::Linear, Some(lin), _) => (Mode::Linear, self.linear_system(lin)?),
            (ModeName::EventTriggered, Some(lin), _) => (Mode::EventTriggered, self.linear_system(lin)?),
            (ModeName::Nonlinear, _, Some(nl)) => (Mode::Nonlinear, Self::nonlinear_system(nl)?),
            _ => return schema("mode and system sections disagree"),
        };
        let mut sc = Scenario::new(mode, system, self.x0.clone());
        sc.horizon = self.horizon;
        sc.seed = self.seed;
        sc.transport = match self.transport {
            TransportName::InProcess => TransportKind::InProcess,
            TransportName::Tcp => TransportKind::Tcp,
        };
        sc.key = match (&self.key_primes, &self.key_bits) {
            (Some([p, q]), _) => KeyChoice::Primes(BigUint::from(*p), BigUint::from(*q)),
            (None, KeyBits::Bits(b)) => KeyChoice::Bits(*b),
            (None, KeyBits::Named(_)) => KeyChoice::Auto,
        };
        sc.allow_undersized_key = self.allow_undersized_key;
        sc.floor_ratio = self.floor_ratio;
        sc.always_trigger = self.always_trigger;
        sc.reblind_each_step = self.reblind_each_step;
        sc.record_timing = self.record_timing;
        Ok(sc)
    }
}
