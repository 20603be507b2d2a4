//! Config files and their merge with command-line flags.
//!
//! A file holds optional `format` and `jobs` keys, a `[model]` table and one
//! table per command, keyed like the long flags (`x0`, `t-end`, ...). Flags
//! given on the command line win. The resolved configuration is echoed into
//! every output as JSON with the same layout, so it can be fed back with
//! `--config`.

use std::path::Path;

use lorenz_tz::Params;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::{CliError, Format, ModelArgs};

#[derive(Debug, Default)]
pub struct ConfigFile {
    pub format: Option<Format>,
    pub jobs: Option<usize>,
    tables: Map<String, Value>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let value: Value = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| e.to_string())?
        } else {
            let t: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
            serde_json::to_value(t).map_err(|e| e.to_string())?
        };
        let Value::Object(mut tables) = value else { return Err("config must be a table".into()) };
        let format = tables.remove("format").map(serde_json::from_value).transpose().map_err(|e| format!("format: {e}"))?;
        let jobs = tables.remove("jobs").map(serde_json::from_value).transpose().map_err(|e| format!("jobs: {e}"))?;
        Ok(Self { format, jobs, tables })
    }

    /// Model parameters and command options with flags laid over the file.
    pub fn resolve<T: Serialize + DeserializeOwned>(&self, command: &str, model: &ModelArgs, opts: &T) -> Result<(ModelArgs, T), CliError> {
        Ok((overlay(model, self.tables.get("model"))?, overlay(opts, self.tables.get(command))?))
    }
}

fn overlay<T: Serialize + DeserializeOwned>(flags: &T, file: Option<&Value>) -> Result<T, CliError> {
    let mut merged = match file {
        Some(Value::Object(m)) => m.clone(),
        Some(_) => return Err(CliError::Usage("config sections must be tables".into())),
        None => Map::new(),
    };
    if let Value::Object(f) = serde_json::to_value(flags).expect("flags serialize") {
        for (k, v) in f {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("config: {e}")))
}

impl ModelArgs {
    /// Fills `eps2`, `B`, `D` with the reference slice; `eps1` and `eps3`
    /// are required.
    pub fn resolved(&self) -> Result<(ModelArgs, Params), CliError> {
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| CliError::Usage(format!("--{name} is required (flag or [model] table)")));
        let m = ModelArgs {
            eps1: Some(need(self.eps1, "eps1")?),
            eps2: Some(self.eps2.unwrap_or(-1.0)),
            eps3: Some(need(self.eps3, "eps3")?),
            b: Some(self.b.unwrap_or(-0.1)),
            d: Some(self.d.unwrap_or(0.01)),
        };
        let p = Params::new(m.eps1.unwrap(), m.eps2.unwrap(), m.eps3.unwrap(), m.b.unwrap(), m.d.unwrap());
        p.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok((m, p))
    }
}

/// The configuration block embedded in outputs.
pub fn echo<T: Serialize>(command: &str, format: Format, model: &ModelArgs, opts: &T) -> Value {
    let mut m = Map::new();
    m.insert("format".into(), serde_json::to_value(format).unwrap());
    m.insert("model".into(), serde_json::to_value(model).unwrap());
    m.insert(command.into(), serde_json::to_value(opts).unwrap());
    Value::Object(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Deserialize, Default)]
    struct Opts {
        x0: Option<f64>,
        #[serde(rename = "t-end")]
        t_end: Option<f64>,
    }

    #[test]
    fn flags_override_file() {
        let f = ConfigFile::parse("format = \"json\"\n[model]\neps1 = -8.0\neps3 = 0.085\n[simulate]\nx0 = 1.0\nt-end = 5.0\n").unwrap();
        assert_eq!(f.format, Some(Format::Json));
        let flags = ModelArgs { eps1: Some(-6.3), ..Default::default() };
        let (m, o) = f.resolve("simulate", &flags, &Opts { x0: Some(2.0), t_end: None }).unwrap();
        assert_eq!((m.eps1, m.eps3), (Some(-6.3), Some(0.085)));
        assert_eq!((o.x0, o.t_end), (Some(2.0), Some(5.0)));
    }

    #[test]
    fn json_config_round_trips_the_echo() {
        let m = ModelArgs { eps1: Some(-8.0), eps2: Some(-1.0), eps3: Some(0.085), b: Some(-0.1), d: Some(0.01) };
        let e = echo("simulate", Format::Csv, &m, &Opts { x0: Some(0.0), t_end: Some(1.0) });
        let f = ConfigFile::parse(&e.to_string()).unwrap();
        let (back, o) = f.resolve("simulate", &ModelArgs::default(), &Opts::default()).unwrap();
        assert_eq!(back.b, Some(-0.1));
        assert_eq!(o.t_end, Some(1.0));
    }

    #[test]
    fn missing_parameter_is_a_usage_error() {
        let r = ModelArgs { eps1: Some(1.0), ..Default::default() }.resolved();
        assert!(matches!(r, Err(CliError::Usage(_))));
    }

    #[test]
    fn malformed_file_is_a_usage_error() {
        assert!(ConfigFile::parse("[model\neps1 = ").is_err());
        assert!(ConfigFile::parse("[model]\neps1 = \"x\"").unwrap().resolve("simulate", &ModelArgs::default(), &Opts::default()).is_err());
    }
}
