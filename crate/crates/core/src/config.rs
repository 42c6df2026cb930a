//! Run configuration: TOML with one level of sections, strict keys,
//! `section.key=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::macro_sim::step_count;
use crate::mesh::ProblemVariant;
use crate::studies::SweepParameter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    CellsOnly,
    Simulate,
    Convergence,
    Sweep,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "cells-only" => Some(Mode::CellsOnly),
            "simulate" => Some(Mode::Simulate),
            "convergence" => Some(Mode::Convergence),
            "sweep" => Some(Mode::Sweep),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantName {
    MixedModel,
    PureDirichlet,
}

impl From<VariantName> for ProblemVariant {
    fn from(v: VariantName) -> Self {
        match v {
            VariantName::MixedModel => ProblemVariant::MixedModel,
            VariantName::PureDirichlet => ProblemVariant::PureDirichlet,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepName {
    Amplitude,
    Frequency,
}

impl From<SweepName> for SweepParameter {
    fn from(v: SweepName) -> Self {
        match v {
            SweepName::Amplitude => SweepParameter::Amplitude,
            SweepName::Frequency => SweepParameter::Frequency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Geometry {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub macro_refinement: u32,
    pub cell_refinement: u32,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry { lower: [-0.5, -0.5], upper: [0.5, 0.5], macro_refinement: 4, cell_refinement: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Physics {
    pub lambda: f64,
    pub mu: f64,
    pub d11: f64,
    pub d12: f64,
    pub d21: f64,
    pub d22: f64,
    pub amplitude: f64,
    pub frequency: f64,
    pub variant: VariantName,
    pub theta: f64,
    pub dt: f64,
    pub t_end: f64,
    /// `|Y^s|`; 0 takes the area of the cell grid.
    pub solid_fraction: f64,
    pub j_min: f64,
}

impl Default for Physics {
    fn default() -> Self {
        Physics {
            lambda: 1.0,
            mu: 1.0,
            d11: 0.5,
            d12: 0.0,
            d21: 0.0,
            d22: 0.5,
            amplitude: 0.25,
            frequency: 1.0,
            variant: VariantName::MixedModel,
            theta: 0.5,
            dt: 0.05,
            t_end: 25.0,
            solid_fraction: 0.0,
            j_min: crate::kinematics::DEFAULT_J_MIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Output {
    pub directory: String,
    /// VTK snapshot every `vtk_stride` steps; 0 disables snapshots.
    pub vtk_stride: u32,
}

impl Default for Output {
    fn default() -> Self {
        Output { directory: "out".into(), vtk_stride: 0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Parallel {
    /// 0 uses every available core.
    pub workers: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Cache {
    pub enabled: bool,
    pub quantization: f64,
}

impl Default for Cache {
    fn default() -> Self {
        Cache { enabled: true, quantization: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Study {
    pub max_cycle: u32,
    pub t_eval: f64,
    /// Cell refinement used by convergence studies.
    pub cell_refinement: u32,
    pub sweep_parameter: SweepName,
    pub sweep_values: Vec<f64>,
}

impl Default for Study {
    fn default() -> Self {
        Study {
            max_cycle: 5,
            t_eval: 1.5,
            cell_refinement: 4,
            sweep_parameter: SweepName::Amplitude,
            sweep_values: vec![-0.125, 0.0, 0.125, 0.25],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: Mode,
    pub geometry: Geometry,
    pub physics: Physics,
    pub output: Output,
    pub parallel: Parallel,
    pub cache: Cache,
    pub study: Study,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Simulate,
            geometry: Geometry::default(),
            physics: Physics::default(),
            output: Output::default(),
            parallel: Parallel::default(),
            cache: Cache::default(),
            study: Study::default(),
        }
    }
}

fn config_err(key: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config { key: key.into(), message: message.into() }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "string",
        Value::Integer(_) => "integer",
        Value::Float(_) => "float",
        Value::Boolean(_) => "boolean",
        Value::Datetime(_) => "datetime",
        Value::Array(_) => "array",
        Value::Table(_) => "table",
    }
}

/// Checks `value` against the shape of `template` and widens integers to
/// floats where a float is expected.
fn conform(key: &str, value: Value, template: &Value) -> Result<Value> {
    match (template, value) {
        (Value::Table(tt), Value::Table(vt)) => {
            let mut out = Table::new();
            for (k, v) in vt {
                let path = if key.is_empty() { k.clone() } else { format!("{key}.{k}") };
                let t = tt.get(&k).ok_or_else(|| config_err(&path, "unknown key"))?;
                out.insert(k, conform(&path, v, t)?);
            }
            Ok(Value::Table(out))
        }
        (Value::Float(_), Value::Integer(i)) => Ok(Value::Float(i as f64)),
        (Value::Integer(_), Value::Integer(i)) if i < 0 => Err(config_err(key, format!("must be non-negative, got {i}"))),
        (Value::Array(ta), Value::Array(va)) => match ta.first() {
            Some(elem) => va.into_iter().map(|v| conform(key, v, elem)).collect::<Result<Vec<_>>>().map(Value::Array),
            None => Ok(Value::Array(va)),
        },
        (t, v) if std::mem::discriminant(t) == std::mem::discriminant(&v) => Ok(v),
        (t, v) => Err(config_err(key, format!("expected {}, got {}", type_name(t), type_name(&v)))),
    }
}

fn template() -> Value {
    let mut t = Value::try_from(RunConfig::default()).expect("default config serializes");
    // Empty default arrays carry no element type.
    if let Some(Value::Table(study)) = t.as_table_mut().and_then(|t| t.get_mut("study")) {
        study.insert("sweep_values".into(), Value::Array(vec![Value::Float(0.0)]));
    }
    t
}

/// Narrows a deserialization failure to the first key that fails on its own.
fn locate_error(value: &Value, e: toml::de::Error) -> Error {
    let fails = |v: Value| RunConfig::deserialize(v).is_err();
    if let Value::Table(t) = value {
        for (k, v) in t {
            let single = |v: Value| Value::Table(Table::from_iter([(k.clone(), v)]));
            if !fails(single(v.clone())) {
                continue;
            }
            if let Value::Table(inner) = v {
                for (k2, v2) in inner {
                    if fails(single(Value::Table(Table::from_iter([(k2.clone(), v2.clone())])))) {
                        return config_err(format!("{k}.{k2}"), e.message().to_string());
                    }
                }
            }
            return config_err(k.clone(), e.message().to_string());
        }
    }
    config_err("<input>", e.message().to_string())
}

/// Sets `key` (`name` or `section.name`) to `raw`, which is read as a TOML
/// value and otherwise taken as a bare string.
pub fn apply_override(table: &mut Table, key: &str, raw: &str) -> Result<()> {
    let value = match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    match parts.as_slice() {
        [name] if !name.is_empty() => {
            table.insert(name.to_string(), value);
        }
        [section, name] if !section.is_empty() && !name.is_empty() => {
            let entry = table.entry(section.to_string()).or_insert_with(|| Value::Table(Table::new()));
            match entry {
                Value::Table(t) => {
                    t.insert(name.to_string(), value);
                }
                _ => return Err(config_err(*section, "is not a section")),
            }
        }
        _ => return Err(config_err(key, "keys have the form `name` or `section.name`")),
    }
    Ok(())
}

/// Parses `key=value`.
pub fn split_override(s: &str) -> Result<(&str, &str)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| config_err(s, "override must have the form key=value"))
}

impl RunConfig {
    /// Parses TOML text, applies overrides in order and validates.
    pub fn from_toml_with(text: &str, overrides: &[(String, String)]) -> Result<RunConfig> {
        let mut table: Table = text.parse().map_err(|e: toml::de::Error| config_err("<input>", e.message().to_string()))?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v)?;
        }
        let value = conform("", Value::Table(table), &template())?;
        let cfg: RunConfig = value.clone().try_into().map_err(|e: toml::de::Error| locate_error(&value, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<RunConfig> {
        Self::from_toml_with(text, &[])
    }

    /// Reads `path` if given (defaults otherwise) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| config_err("--config", format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_with(&text, overrides)
    }

    /// Canonical TOML; parsing it gives back the same configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Copy with the swept parameter set to `value`.
    pub fn with_sweep_value(&self, value: f64) -> RunConfig {
        let mut c = self.clone();
        match self.study.sweep_parameter {
            SweepName::Amplitude => c.physics.amplitude = value,
            SweepName::Frequency => c.physics.frequency = value,
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        let p = &self.physics;
        let check = |ok: bool, key: &str, msg: String| if ok { Ok(()) } else { Err(config_err(key, msg)) };
        let finite2 = |v: [f64; 2]| v.iter().all(|x| x.is_finite());
        check(finite2(g.lower) && finite2(g.upper), "geometry.lower", "bounds must be finite".into())?;
        check(g.lower[0] < g.upper[0] && g.lower[1] < g.upper[1], "geometry.upper", format!("{:?} must exceed {:?} componentwise", g.upper, g.lower))?;
        check(g.macro_refinement <= 11, "geometry.macro_refinement", format!("{} exceeds the supported maximum 11", g.macro_refinement))?;
        check(g.cell_refinement <= 8, "geometry.cell_refinement", format!("{} exceeds the supported maximum 8", g.cell_refinement))?;
        check(p.mu > 0.0, "physics.mu", format!("must be positive, got {}", p.mu))?;
        check(p.lambda.is_finite() && p.lambda + p.mu > 0.0, "physics.lambda", format!("lambda + mu must be positive, got {}", p.lambda + p.mu))?;
        check([p.d11, p.d12, p.d21, p.d22].iter().all(|x| x.is_finite()), "physics.d11", "diffusion entries must be finite".into())?;
        check(p.d12 == p.d21, "physics.d21", format!("diffusion tensor must be symmetric, d12 = {} but d21 = {}", p.d12, p.d21))?;
        check(p.d11 > 0.0 && p.d11 * p.d22 - p.d12 * p.d21 > 0.0, "physics.d22", "diffusion tensor must be positive definite".into())?;
        check(p.amplitude.is_finite(), "physics.amplitude", format!("must be finite, got {}", p.amplitude))?;
        check(p.frequency > 0.0 && p.frequency.is_finite(), "physics.frequency", format!("must be positive, got {}", p.frequency))?;
        check((0.0..=1.0).contains(&p.theta), "physics.theta", format!("must lie in [0, 1], got {}", p.theta))?;
        check(p.dt > 0.0 && p.dt.is_finite(), "physics.dt", format!("must be positive, got {}", p.dt))?;
        check(p.t_end >= 0.0, "physics.t_end", format!("must be non-negative, got {}", p.t_end))?;
        step_count(p.t_end, p.dt).map_err(|e| config_err("physics.t_end", e.to_string()))?;
        check((0.0..=1.0).contains(&p.solid_fraction), "physics.solid_fraction", format!("must lie in [0, 1], got {}", p.solid_fraction))?;
        check(p.j_min >= 0.0 && p.j_min.is_finite(), "physics.j_min", format!("must be non-negative, got {}", p.j_min))?;
        check(!self.output.directory.is_empty(), "output.directory", "must not be empty".into())?;
        check(self.cache.quantization >= 0.0 && self.cache.quantization.is_finite(), "cache.quantization", format!("must be non-negative, got {}", self.cache.quantization))?;
        let s = &self.study;
        check(s.max_cycle >= 2, "study.max_cycle", format!("must be at least 2, got {}", s.max_cycle))?;
        check(s.max_cycle <= 11, "study.max_cycle", format!("{} exceeds the supported maximum 11", s.max_cycle))?;
        check(s.cell_refinement <= 8, "study.cell_refinement", format!("{} exceeds the supported maximum 8", s.cell_refinement))?;
        check(s.t_eval > 0.0, "study.t_eval", format!("must be positive, got {}", s.t_eval))?;
        step_count(s.t_eval, p.dt).map_err(|e| config_err("study.t_eval", e.to_string()))?;
        check(!s.sweep_values.is_empty(), "study.sweep_values", "must not be empty".into())?;
        check(s.sweep_values.iter().all(|v| v.is_finite()), "study.sweep_values", "values must be finite".into())?;
        if s.sweep_parameter == SweepName::Frequency {
            check(s.sweep_values.iter().all(|&v| v > 0.0), "study.sweep_values", "frequencies must be positive".into())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key_of(e: Error) -> String {
        match e {
            Error::Config { key, .. } => key,
            e => panic!("not a config error: {e}"),
        }
    }

    #[test]
    fn empty_config_gives_model_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.physics.amplitude, 0.25);
        assert_eq!(c.physics.frequency, 1.0);
        assert_eq!(c.physics.theta, 0.5);
    }

    #[test]
    fn integer_theta_selects_implicit_euler() {
        let c = RunConfig::from_toml("[physics]\ntheta = 1\n").unwrap();
        assert_eq!(c.physics.theta, 1.0);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = RunConfig::from_toml("[physics]\nampltude = 0.1\n").unwrap_err();
        assert_eq!(key_of(e), "physics.ampltude");
        let e = RunConfig::from_toml("colour = 1\n").unwrap_err();
        assert_eq!(key_of(e), "colour");
    }

    #[test]
    fn type_mismatch_is_named() {
        let e = RunConfig::from_toml("[physics]\ndt = \"small\"\n").unwrap_err();
        assert_eq!(key_of(e), "physics.dt");
        let e = RunConfig::from_toml("[geometry]\nmacro_refinement = -1\n").unwrap_err();
        assert_eq!(key_of(e), "geometry.macro_refinement");
    }

    #[test]
    fn constraint_violations_are_named() {
        for (text, key) in [
            ("[physics]\ndt = 0.0\n", "physics.dt"),
            ("[physics]\ntheta = 1.5\n", "physics.theta"),
            ("[physics]\nt_end = 0.33\n", "physics.t_end"),
            ("[physics]\nmu = -1.0\n", "physics.mu"),
            ("[study]\nmax_cycle = 1\n", "study.max_cycle"),
            ("[physics]\nd12 = 0.1\n", "physics.d21"),
        ] {
            assert_eq!(key_of(RunConfig::from_toml(text).unwrap_err()), key, "{text}");
        }
    }

    #[test]
    fn bad_mode_is_rejected() {
        assert_eq!(key_of(RunConfig::from_toml("mode = \"fly\"\n").unwrap_err()), "mode");
        assert_eq!(key_of(RunConfig::from_toml("[physics]\nvariant = \"open\"\n").unwrap_err()), "physics.variant");
        let c = RunConfig::from_toml("mode = \"cells-only\"\n").unwrap();
        assert_eq!(c.mode, Mode::CellsOnly);
    }

    #[test]
    fn overrides_take_precedence() {
        let ov = vec![
            ("physics.amplitude".to_string(), "0.125".to_string()),
            ("physics.variant".to_string(), "pure-dirichlet".to_string()),
            ("mode".to_string(), "sweep".to_string()),
            ("study.sweep_values".to_string(), "[0, 1]".to_string()),
        ];
        let c = RunConfig::from_toml_with("[physics]\namplitude = 0.5\n", &ov).unwrap();
        assert_eq!(c.physics.amplitude, 0.125);
        assert_eq!(c.physics.variant, VariantName::PureDirichlet);
        assert_eq!(c.mode, Mode::Sweep);
        assert_eq!(c.study.sweep_values, vec![0.0, 1.0]);
        let bad = vec![("physics.amplitud".to_string(), "1".to_string())];
        assert_eq!(key_of(RunConfig::from_toml_with("", &bad).unwrap_err()), "physics.amplitud");
        assert!(split_override("novalue").is_err());
        assert_eq!(split_override("a.b = 3").unwrap(), ("a.b", "3"));
    }

    #[test]
    fn serialization_round_trips() {
        let mut c = RunConfig::default();
        c.physics.amplitude = -0.125;
        c.physics.theta = 1.0;
        c.geometry.lower = [0.0, -2.0];
        c.study.sweep_parameter = SweepName::Frequency;
        c.study.sweep_values = vec![0.5, 1.0, 2.0];
        let text = c.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
        assert_eq!(RunConfig::from_toml(&text).unwrap().to_toml(), text);
    }

    #[test]
    fn sweep_configs_differ_in_one_field() {
        let base = RunConfig::default();
        let a: Table = base.with_sweep_value(0.0).to_toml().parse().unwrap();
        let b: Table = base.with_sweep_value(0.125).to_toml().parse().unwrap();
        let mut diffs = Vec::new();
        for (section, v) in &a {
            match v {
                Value::Table(t) => {
                    for (k, x) in t {
                        if b[section][k.as_str()] != *x {
                            diffs.push(format!("{section}.{k}"));
                        }
                    }
                }
                x if b[section.as_str()] != *x => diffs.push(section.clone()),
                _ => {}
            }
        }
        assert_eq!(diffs, vec!["physics.amplitude".to_string()]);
    }
}
