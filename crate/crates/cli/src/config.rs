//! `key=value` run configuration.
//!
//! | key | modes | default |
//! |---|---|---|
//! | `mode` | all | required: `single`, `composite`, `validate`, `sweep`, `integrate` |
//! | `gamma_a`, `gamma_b` | single | required unless `modes_file` is given |
//! | `gamma_c` | single | `0` |
//! | `omega` | single | required |
//! | `modes_file`, `bath_dt` | single | unset; `bath_dt` required with `modes_file` |
//! | `omega_c`, `omega_0`, `kappa`, `Gamma`, `N`, `g_c` | composite, sweep, integrate | resonant fixture `100, 100, 0.1, 1e-3, 100, 0.1` |
//! | `cutoff_cavity` | integrate | `6` |
//! | `cutoff_atom` | integrate | `cutoff_cavity` |
//! | `sweep` | sweep | required, `var:start:stop:points:lin\|log` |
//! | `t_final`, `samples`, `dt` | integrate | `1`, `20`, `min(0.05/max(ω̃_c, ω̃_0), 0.05/ζ)` |
//! | `regime_threshold` | composite, sweep | `1e-2` |
//! | `trace_tol`, `cutoff_tol` | integrate | `1e-10`, `1e-6` |
//! | `output` | all | standard output |
//!
//! All rates and frequencies are angular, in the same inverse time unit.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use cavity_leak::bath::{coefficients_abcd, rates_from_coefficients, ModeSet};
use cavity_leak::composite::{CompositeParams, DEFAULT_REGIME_THRESHOLD};
use cavity_leak::master::SingleParams;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    /// Where the offending entry came from, e.g. `line 3` or `argument 2`.
    pub location: Option<String>,
    pub message: String,
}

impl ConfigError {
    fn new(key: &str, location: Option<&str>, message: impl Into<String>) -> Self {
        Self { key: key.to_string(), location: location.map(str::to_string), message: message.into() }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.location {
            Some(loc) => write!(f, "{loc}: {}: {}", self.key, self.message),
            None => write!(f, "{}: {}", self.key, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Single,
    Composite,
    Validate,
    Sweep,
    Integrate,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Single => "single",
            Mode::Composite => "composite",
            Mode::Validate => "validate",
            Mode::Sweep => "sweep",
            Mode::Integrate => "integrate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spacing {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    N,
    OmegaC,
    Omega0,
    Kappa,
    Gamma,
    GC,
}

impl SweepVariable {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "N" => Self::N,
            "omega_c" => Self::OmegaC,
            "omega_0" => Self::Omega0,
            "kappa" => Self::Kappa,
            "Gamma" => Self::Gamma,
            "g_c" => Self::GC,
            _ => return None,
        })
    }

    /// Copy of `base` with this variable set to `value`; `N` is rounded to
    /// the nearest integer.
    pub fn apply(self, base: &CompositeParams, value: f64) -> CompositeParams {
        let mut p = *base;
        match self {
            Self::N => p.n = value.round().max(1.0) as u64,
            Self::OmegaC => p.omega_c = value,
            Self::Omega0 => p.omega_0 = value,
            Self::Kappa => p.kappa = value,
            Self::Gamma => p.gamma = value,
            Self::GC => p.g_c = value,
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    pub spacing: Spacing,
}

impl SweepSpec {
    pub fn parse(text: &str) -> Result<Self, String> {
        let parts: Vec<&str> = text.split(':').map(str::trim).collect();
        if parts.len() != 5 {
            return Err(format!("expected var:start:stop:points:lin|log, found '{text}'"));
        }
        let variable = SweepVariable::parse(parts[0])
            .ok_or_else(|| format!("unknown sweep variable '{}' (N, omega_c, omega_0, kappa, Gamma, g_c)", parts[0]))?;
        let number = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| format!("'{s}' is not a number"));
        let start = number(parts[1])?;
        let stop = number(parts[2])?;
        let points: usize = parts[3].parse().map_err(|_| format!("'{}' is not a point count", parts[3]))?;
        if points < 2 {
            return Err(format!("points = {points}, need at least 2"));
        }
        let spacing = match parts[4] {
            "lin" => Spacing::Linear,
            "log" => Spacing::Log,
            other => return Err(format!("spacing '{other}' is neither lin nor log")),
        };
        if spacing == Spacing::Log && !(start > 0.0 && stop > 0.0) {
            return Err("log spacing needs positive endpoints".into());
        }
        Ok(Self { variable, start, stop, points, spacing })
    }

    pub fn values(&self) -> Vec<f64> {
        let last = (self.points - 1) as f64;
        (0..self.points)
            .map(|k| {
                let t = k as f64 / last;
                match self.spacing {
                    Spacing::Linear => self.start + (self.stop - self.start) * t,
                    Spacing::Log => {
                        let (a, b) = (self.start.log10(), self.stop.log10());
                        10f64.powf(a + (b - a) * t)
                    }
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateSettings {
    pub cutoff_cavity: usize,
    pub cutoff_atom: usize,
    pub t_final: f64,
    pub samples: usize,
    pub dt: f64,
    pub trace_tol: f64,
    pub cutoff_tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    Single(SingleParams),
    Composite(CompositeParams),
    Validate,
    Sweep(CompositeParams, SweepSpec),
    Integrate(CompositeParams, IntegrateSettings),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub regime_threshold: f64,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn mode(&self) -> Mode {
        match self.task {
            Task::Single(_) => Mode::Single,
            Task::Composite(_) => Mode::Composite,
            Task::Validate => Mode::Validate,
            Task::Sweep(..) => Mode::Sweep,
            Task::Integrate(..) => Mode::Integrate,
        }
    }
}

const KEYS: &[&str] = &[
    "mode",
    "gamma_a",
    "gamma_b",
    "gamma_c",
    "omega",
    "modes_file",
    "bath_dt",
    "omega_c",
    "omega_0",
    "kappa",
    "Gamma",
    "N",
    "g_c",
    "cutoff_cavity",
    "cutoff_atom",
    "sweep",
    "t_final",
    "samples",
    "dt",
    "regime_threshold",
    "trace_tol",
    "cutoff_tol",
    "output",
];

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    location: String,
}

/// Raw entries; later insertions override earlier ones.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    entries: BTreeMap<String, Entry>,
}

impl RawConfig {
    /// Reads `key=value` lines; `#` starts a comment.
    pub fn add_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (idx, line) in text.lines().enumerate() {
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            self.add_pair(content, &format!("line {}", idx + 1))?;
        }
        Ok(())
    }

    /// Command-line overrides, numbered from 1.
    pub fn add_overrides<S: AsRef<str>>(&mut self, args: &[S]) -> Result<(), ConfigError> {
        for (idx, arg) in args.iter().enumerate() {
            self.add_pair(arg.as_ref().trim(), &format!("argument {}", idx + 1))?;
        }
        Ok(())
    }

    fn add_pair(&mut self, content: &str, location: &str) -> Result<(), ConfigError> {
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| ConfigError::new(content, Some(location), "expected key=value"))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(ConfigError::new(key, Some(location), "unknown key"));
        }
        self.entries.insert(key.to_string(), Entry { value: value.trim().to_string(), location: location.to_string() });
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.get(key)
    }

    fn number(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(e) => match e.value.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(Some(v)),
                _ => Err(ConfigError::new(key, Some(&e.location), format!("'{}' is not a finite number", e.value))),
            },
        }
    }

    fn number_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.number(key)?.unwrap_or(default))
    }

    fn required(&self, key: &str, mode: Mode) -> Result<f64, ConfigError> {
        self.number(key)?
            .ok_or_else(|| ConfigError::new(key, None, format!("required for mode={}", mode.name())))
    }

    fn positive(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v = self.number_or(key, default)?;
        if v > 0.0 {
            Ok(v)
        } else {
            Err(self.invalid(key, "must be positive"))
        }
    }

    fn count(&self, key: &str, default: usize, min: usize) -> Result<usize, ConfigError> {
        let v = match self.get(key) {
            None => default,
            Some(e) => e
                .value
                .parse::<usize>()
                .map_err(|_| ConfigError::new(key, Some(&e.location), format!("'{}' is not a whole number", e.value)))?,
        };
        if v < min {
            return Err(self.invalid(key, &format!("must be at least {min}")));
        }
        Ok(v)
    }

    fn invalid(&self, key: &str, message: &str) -> ConfigError {
        ConfigError::new(key, self.get(key).map(|e| e.location.as_str()), message)
    }

    fn composite(&self) -> Result<CompositeParams, ConfigError> {
        let fixture = CompositeParams::resonant_fixture();
        let n = match self.number("N")? {
            None => fixture.n,
            Some(v) if v >= 1.0 && v.fract() == 0.0 && v <= u64::MAX as f64 => v as u64,
            Some(_) => return Err(self.invalid("N", "must be a positive integer")),
        };
        CompositeParams::new(
            self.number_or("omega_c", fixture.omega_c)?,
            self.number_or("omega_0", fixture.omega_0)?,
            self.number_or("kappa", fixture.kappa)?,
            self.number_or("Gamma", fixture.gamma)?,
            n,
            self.number_or("g_c", fixture.g_c)?,
        )
        .map_err(|e| match e {
            cavity_leak::Error::InvalidParameter { name, reason } => self.invalid(name, &reason),
            other => ConfigError::new("composite", None, other.to_string()),
        })
    }

    fn single(&self) -> Result<SingleParams, ConfigError> {
        let omega = self.required("omega", Mode::Single)?;
        let gamma_c = self.number_or("gamma_c", 0.0)?;
        let (gamma_a, gamma_b) = match self.get("modes_file") {
            Some(entry) => {
                for key in ["gamma_a", "gamma_b"] {
                    if self.get(key).is_some() {
                        return Err(self.invalid(key, "conflicts with modes_file"));
                    }
                }
                let dt = self.required("bath_dt", Mode::Single)?;
                let text = std::fs::read_to_string(&entry.value).map_err(|e| {
                    ConfigError::new("modes_file", Some(&entry.location), format!("{}: {e}", entry.value))
                })?;
                let modes = ModeSet::from_table(&text)
                    .map_err(|e| ConfigError::new("modes_file", Some(&entry.location), e.to_string()))?;
                let coef = coefficients_abcd(&modes, omega, dt).map_err(|e| self.invalid("bath_dt", &e.to_string()))?;
                rates_from_coefficients(&coef)
            }
            None => (self.required("gamma_a", Mode::Single)?, self.required("gamma_b", Mode::Single)?),
        };
        SingleParams::new(gamma_a, gamma_b, gamma_c, omega).map_err(|e| match e {
            cavity_leak::Error::InvalidParameter { name, reason } => self.invalid(name, &reason),
            other => ConfigError::new("single", None, other.to_string()),
        })
    }

    pub fn finish(&self) -> Result<RunConfig, ConfigError> {
        let mode_entry = self.get("mode").ok_or_else(|| ConfigError::new("mode", None, "required"))?;
        let mode = match mode_entry.value.as_str() {
            "single" => Mode::Single,
            "composite" => Mode::Composite,
            "validate" => Mode::Validate,
            "sweep" => Mode::Sweep,
            "integrate" => Mode::Integrate,
            other => {
                return Err(ConfigError::new(
                    "mode",
                    Some(&mode_entry.location),
                    format!("'{other}' is not one of single, composite, validate, sweep, integrate"),
                ))
            }
        };
        let task = match mode {
            Mode::Single => Task::Single(self.single()?),
            Mode::Composite => Task::Composite(self.composite()?),
            Mode::Validate => Task::Validate,
            Mode::Sweep => {
                let entry = self.get("sweep").ok_or_else(|| ConfigError::new("sweep", None, "required for mode=sweep"))?;
                let spec = SweepSpec::parse(&entry.value).map_err(|m| ConfigError::new("sweep", Some(&entry.location), m))?;
                Task::Sweep(self.composite()?, spec)
            }
            Mode::Integrate => {
                let p = self.composite()?;
                let cutoff_cavity = self.count("cutoff_cavity", 6, 2)?;
                let cutoff_atom = self.count("cutoff_atom", cutoff_cavity, 2)?;
                let default_dt = f64::min(0.05 / p.omega_c.max(p.omega_0), 0.05 / p.zeta().max(f64::MIN_POSITIVE));
                Task::Integrate(
                    p,
                    IntegrateSettings {
                        cutoff_cavity,
                        cutoff_atom,
                        t_final: self.positive("t_final", 1.0)?,
                        samples: self.count("samples", 20, 1)?,
                        dt: self.positive("dt", default_dt)?,
                        trace_tol: self.positive("trace_tol", 1e-10)?,
                        cutoff_tol: self.positive("cutoff_tol", 1e-6)?,
                    },
                )
            }
        };
        Ok(RunConfig {
            task,
            regime_threshold: self.positive("regime_threshold", DEFAULT_REGIME_THRESHOLD)?,
            output: self.get("output").map(|e| PathBuf::from(&e.value)),
        })
    }
}

/// Parses a configuration file body and applies `overrides` on top.
pub fn parse_config<S: AsRef<str>>(text: &str, overrides: &[S]) -> Result<RunConfig, ConfigError> {
    let mut raw = RawConfig::default();
    raw.add_text(text)?;
    raw.add_overrides(overrides)?;
    raw.finish()
}
