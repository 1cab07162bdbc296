//! Configuration file loader.
//!
//! The file is TOML, read as a flat namespace of dotted keys: a nested
//! `[chamber]` table with `thermal_mass = 1` and a top-level
//! `"chamber.thermal_mass" = 1` mean the same thing. Unknown keys are
//! rejected so typos do not silently fall back to defaults. The key list
//! is in `docs/config.md`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::control::{merge_patch, ControllerConfig};
use crate::datastore::KindSet;
use crate::simchamber::{scenario_preset, Scenario};
use crate::variable::Variable;

/// Environment variable naming a configuration file when no flag is given.
pub const CONFIG_ENV: &str = "OPENCHAMBER_CONFIG";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SettingsError {
    #[error("cannot read {path}: {detail}")]
    Io { path: String, detail: String },
    #[error("malformed configuration: {0}")]
    Syntax(String),
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("configuration key `{key}`: {detail}")]
    BadValue { key: String, detail: String },
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub preset: String,
    pub seed: u64,
    pub scenario: Scenario<f64>,
    pub control: ControllerConfig,
    /// Store file; `None` keeps everything in memory.
    pub store_path: Option<PathBuf>,
    pub bind: String,
    pub port: u16,
    pub token: Option<String>,
    /// Simulated seconds per wall second under `serve`; `None` runs flat out.
    pub speed: Option<f64>,
    pub peer_id: String,
    pub sync_server: Option<String>,
    /// Background sync period under `serve`; `None` means sync only on demand.
    pub sync_interval_s: Option<u64>,
    pub pull_filter: KindSet,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            preset: "default_desktop".into(),
            seed: 0,
            scenario: scenario_preset("default_desktop").expect("built-in preset"),
            control: ControllerConfig::default(),
            store_path: None,
            bind: "127.0.0.1".into(),
            port: 8080,
            token: None,
            speed: Some(1.0),
            peer_id: "chamber".into(),
            sync_server: None,
            sync_interval_s: None,
            pull_filter: "recipe".parse().expect("kind set"),
        }
    }
}

impl Settings {
    pub fn load(path: impl AsRef<Path>) -> Result<Settings, SettingsError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| SettingsError::Io { path: path.display().to_string(), detail: e.to_string() })?;
        Settings::from_toml(&text)
    }

    /// `path`, else the file named by `OPENCHAMBER_CONFIG`, else defaults.
    pub fn resolve(path: Option<&Path>) -> Result<Settings, SettingsError> {
        match path {
            Some(p) => Settings::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Settings::load(PathBuf::from(p)),
                _ => Ok(Settings::default()),
            },
        }
    }

    pub fn from_toml(text: &str) -> Result<Settings, SettingsError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| SettingsError::Syntax(e.to_string()))?;
        let mut flat = BTreeMap::new();
        flatten("", &toml::Value::Table(table), &mut flat);
        Settings::from_flat(flat)
    }

    pub fn from_flat(mut flat: BTreeMap<String, toml::Value>) -> Result<Settings, SettingsError> {
        let mut s = Settings::default();
        if let Some(v) = flat.remove("preset") {
            s.preset = string("preset", &v)?;
            s.scenario = scenario_preset(&s.preset)
                .map_err(|e| SettingsError::BadValue { key: "preset".into(), detail: e.to_string() })?;
        }
        let mut control_patch = Value::Object(Default::default());
        for (key, v) in &flat {
            let (head, rest) = key.split_once('.').unwrap_or((key.as_str(), ""));
            match (head, rest) {
                ("seed", "") => s.seed = integer(key, v)?,
                ("port", "") => {
                    s.port = u16::try_from(integer(key, v)?).map_err(|_| bad(key, "port out of range"))?
                }
                ("bind", "") => s.bind = string(key, v)?,
                ("token", "") => s.token = Some(string(key, v)?),
                ("speed", "") => {
                    s.speed = match v {
                        toml::Value::String(m) if m == "max" => None,
                        _ => {
                            let x = number(key, v)?;
                            if !(x > 0.0) {
                                return Err(bad(key, "must be positive or \"max\""));
                            }
                            Some(x)
                        }
                    }
                }
                ("store", "path") => s.store_path = Some(PathBuf::from(string(key, v)?)),
                ("sync", "peer_id") => s.peer_id = string(key, v)?,
                ("sync", "server") => s.sync_server = Some(string(key, v)?),
                ("sync", "interval_s") => {
                    let n = integer(key, v)?;
                    if n == 0 {
                        return Err(bad(key, "must be positive"));
                    }
                    s.sync_interval_s = Some(n);
                }
                ("sync", "pull_filter") => {
                    s.pull_filter = string(key, v)?.parse().map_err(|e: String| bad(key, &e))?
                }
                ("chamber", field) => set_chamber(&mut s.scenario, key, field, v)?,
                ("sensors", field) => set_sensor(&mut s.scenario, key, field, v)?,
                ("control", field) => {
                    let json = serde_json::to_value(v).map_err(|e| bad(key, &e.to_string()))?;
                    let mut node = json;
                    for part in field.split('.').rev() {
                        node = Value::Object([(part.to_string(), node)].into_iter().collect());
                    }
                    merge_patch(&mut control_patch, &node);
                }
                _ => return Err(SettingsError::UnknownKey(key.clone())),
            }
        }
        s.control = s.control.patched(&control_patch).map_err(|e| bad("control", &e.0))?;
        s.scenario.params.validate().map_err(|e| bad("chamber", &e.to_string()))?;
        s.scenario.sensors.validate().map_err(|e| bad("sensors", &e))?;
        Ok(s)
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut BTreeMap<String, toml::Value>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                // dosing and controller entries are whole tables on the control side
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

fn bad(key: &str, detail: &str) -> SettingsError {
    SettingsError::BadValue { key: key.into(), detail: detail.into() }
}

fn string(key: &str, v: &toml::Value) -> Result<String, SettingsError> {
    v.as_str().map(str::to_string).ok_or_else(|| bad(key, "expected a string"))
}

fn integer(key: &str, v: &toml::Value) -> Result<u64, SettingsError> {
    v.as_integer().and_then(|i| u64::try_from(i).ok()).ok_or_else(|| bad(key, "expected a non-negative integer"))
}

fn number(key: &str, v: &toml::Value) -> Result<f64, SettingsError> {
    match v {
        toml::Value::Float(x) => Ok(*x),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(bad(key, "expected a number")),
    }
}

fn variable(key: &str, name: &str) -> Result<Variable, SettingsError> {
    name.parse().map_err(|_| SettingsError::UnknownKey(key.to_string()))
}

fn set_chamber(sc: &mut Scenario<f64>, key: &str, field: &str, v: &toml::Value) -> Result<(), SettingsError> {
    let p = &mut sc.params;
    if let Some((group, name)) = field.split_once('.') {
        let var = variable(key, name)?;
        let x = number(key, v)?;
        match group {
            "coupling" => p.coupling[var.index()] = x,
            "ambient" => p.ambient.set(var, x),
            "initial" => sc.state.set(var, x),
            _ => return Err(SettingsError::UnknownKey(key.into())),
        }
        return Ok(());
    }
    if field == "integration_step" {
        p.integration_step = integer(key, v)?;
        return Ok(());
    }
    let x = number(key, v)?;
    let slot = match field {
        "thermal_mass" => &mut p.thermal_mass,
        "heater_watts" => &mut p.heater_watts,
        "chiller_watts" => &mut p.chiller_watts,
        "vent_rate" => &mut p.vent_rate,
        "humidifier_rate" => &mut p.humidifier_rate,
        "co2_drawdown" => &mut p.co2_drawdown,
        "ph_per_ml_per_liter" => &mut p.ph_per_ml_per_liter,
        "ec_per_ml_per_liter" => &mut p.ec_per_ml_per_liter,
        "reservoir_liters" => &mut p.reservoir_liters,
        "level_mm_per_ml" => &mut p.level_mm_per_ml,
        "evaporation_mm_s" => &mut p.evaporation_mm_s,
        "lux_red" => &mut p.lux_red,
        "lux_blue" => &mut p.lux_blue,
        "lux_white" => &mut p.lux_white,
        _ => return Err(SettingsError::UnknownKey(key.into())),
    };
    *slot = x;
    Ok(())
}

fn set_sensor(sc: &mut Scenario<f64>, key: &str, field: &str, v: &toml::Value) -> Result<(), SettingsError> {
    let (name, attr) = field.split_once('.').ok_or_else(|| SettingsError::UnknownKey(key.into()))?;
    let ch = sc.sensors.channel_mut(variable(key, name)?);
    match attr {
        "quantization" => ch.quantization = number(key, v)?,
        "sigma" => ch.sigma = number(key, v)?,
        "warm_up_s" => ch.warm_up_s = integer(key, v)?,
        _ => return Err(SettingsError::UnknownKey(key.into())),
    }
    Ok(())
}
