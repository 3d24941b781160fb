//! Layered settings: built-in defaults, then the JSON config file, then flags.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use cld_core::CldParams;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// Keys of the config file that are shared by every experiment.
const COMMON_KEYS: [&str; 3] = ["seed", "format", "params"];

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    pub common: Map<String, Value>,
    pub experiment: Map<String, Value>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let Value::Object(map) = value else {
            bail!("config file must hold a JSON object");
        };
        let mut out = Self::default();
        for (k, v) in map {
            if COMMON_KEYS.contains(&k.as_str()) {
                out.common.insert(k, v);
            } else {
                out.experiment.insert(k, v);
            }
        }
        Ok(out)
    }
}

/// Overlay `layers` onto the serialized `base`. Every key must already exist
/// in `base`, so typos are reported instead of silently ignored.
pub fn resolve<T: Serialize + DeserializeOwned>(base: T, layers: &[&Map<String, Value>]) -> Result<T> {
    let Value::Object(mut merged) = serde_json::to_value(base)? else {
        bail!("settings must serialize to an object");
    };
    for layer in layers {
        for (k, v) in layer.iter() {
            if !merged.contains_key(k) {
                let known: Vec<&String> = merged.keys().collect();
                bail!("unknown setting `{k}`; expected one of {known:?}");
            }
            merged.insert(k.clone(), v.clone());
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| anyhow!("invalid setting: {e}"))
}

/// Serialize flag values, dropping the ones that were not given.
pub fn flags<T: Serialize>(args: &T) -> Result<Map<String, Value>> {
    match serde_json::to_value(args)? {
        Value::Object(m) => Ok(m.into_iter().filter(|(_, v)| !v.is_null()).collect()),
        _ => bail!("flags must serialize to an object"),
    }
}

/// Diffusion hyperparameters as they appear in config files. The mass is
/// always derived as `Γ²/4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSettings {
    pub beta: f64,
    pub gamma_fric: f64,
    pub gamma0: f64,
    pub t_final: f64,
    pub eps_cutoff: f64,
    pub eps_num: f64,
}

impl From<CldParams> for ParamSettings {
    fn from(p: CldParams) -> Self {
        Self {
            beta: p.beta,
            gamma_fric: p.gamma_fric,
            gamma0: p.gamma0,
            t_final: p.t_final,
            eps_cutoff: p.eps_cutoff,
            eps_num: p.eps_num,
        }
    }
}

impl ParamSettings {
    pub fn to_params(self) -> Result<CldParams> {
        let p = CldParams::new(self.beta, self.gamma_fric, self.gamma0)
            .with_t_final(self.t_final)
            .with_eps_cutoff(self.eps_cutoff)
            .with_eps_num(self.eps_num);
        p.validate()?;
        Ok(p)
    }
}
