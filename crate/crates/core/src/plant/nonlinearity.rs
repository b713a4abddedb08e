//! Memoryless nonlinearities `v = f(t, z)`: a small named catalog that can be
//! stored in model files, plus arbitrary closures through the library API.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::Vector;

type NonlinFn = dyn Fn(f64, &Vector) -> Vector + Send + Sync;

/// Catalog reference as stored in `model.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearitySpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl NonlinearitySpec {
    pub fn new(name: &str) -> Self {
        NonlinearitySpec {
            name: name.to_string(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    fn param(&self, key: &str, default: f64) -> f64 {
        self.params.get(key).copied().unwrap_or(default)
    }
}

/// Names accepted by [`Nonlinearity::from_spec`]. All act componentwise.
pub const CATALOG: &[&str] = &[
    "surge_phi",
    "tanh",
    "cubic",
    "sin",
    "sector_tanh",
    "linear",
    "zero",
];

#[derive(Clone)]
pub struct Nonlinearity {
    spec: Option<NonlinearitySpec>,
    func: Arc<NonlinFn>,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.spec {
            Some(s) => write!(f, "Nonlinearity({} {:?})", s.name, s.params),
            None => write!(f, "Nonlinearity(<custom>)"),
        }
    }
}

/// `z^3 / 2 + 3 z^2 / 2 + 9 z / 8`, a passive surge characteristic.
pub fn surge_phi(z: f64) -> f64 {
    0.5 * z * z * z + 1.5 * z * z + 1.125 * z
}

impl Nonlinearity {
    pub fn custom<F>(f: F) -> Self
    where
        F: Fn(f64, &Vector) -> Vector + Send + Sync + 'static,
    {
        Nonlinearity {
            spec: None,
            func: Arc::new(f),
        }
    }

    fn componentwise(
        spec: NonlinearitySpec,
        g: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Nonlinearity {
            spec: Some(spec),
            func: Arc::new(move |_, z: &Vector| z.map(&g)),
        }
    }

    pub fn from_spec(spec: &NonlinearitySpec) -> Result<Self> {
        let s = spec.clone();
        let gain = spec.param("gain", 1.0);
        Ok(match spec.name.as_str() {
            "surge_phi" => Self::componentwise(s, surge_phi),
            "tanh" => Self::componentwise(s, move |z| gain * z.tanh()),
            "cubic" => Self::componentwise(s, move |z| gain * z * z * z),
            "sin" => Self::componentwise(s, move |z| gain * z.sin()),
            "linear" => Self::componentwise(s, move |z| gain * z),
            "sector_tanh" => {
                let a = spec.param("a", 0.0);
                let b = spec.param("b", 1.0);
                Self::componentwise(s, move |z| a * z + (b - a) * z.tanh())
            }
            "zero" => Self::componentwise(s, |_| 0.0),
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown nonlinearity `{other}`; known: {}",
                    CATALOG.join(", ")
                )))
            }
        })
    }

    pub fn spec(&self) -> Option<&NonlinearitySpec> {
        self.spec.as_ref()
    }

    pub fn eval(&self, t: f64, z: &Vector) -> Vector {
        (self.func)(t, z)
    }
}
