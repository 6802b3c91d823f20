use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use chctl::dynamics::Scheme;
use chctl::io::read_field;
use chctl::saturation::{Injection, TrigMode};
use chctl::spectral::{Mask, SpectralField, TorusGrid};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config does not parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, message: message.into() }
}

/// A field given as a list of trigonometric modes or as a binary field file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldRecipe {
    pub modes: Vec<TrigMode>,
    pub file: Option<PathBuf>,
}

impl FieldRecipe {
    fn validate(&self, field: &'static str, grid: TorusGrid) -> Result<(), ConfigError> {
        if self.file.is_some() && !self.modes.is_empty() {
            return Err(invalid(field, "give either `modes` or `file`, not both"));
        }
        for m in &self.modes {
            if m.p.len() != grid.d() {
                return Err(invalid(
                    field,
                    format!("mode {:?} has {} components, grid has d = {}", m.p, m.p.len(), grid.d()),
                ));
            }
            if m.p.iter().any(|&k| k.abs() >= grid.n() as i64 / 2) {
                return Err(invalid(field, format!("mode {:?} is not resolved on n = {}", m.p, grid.n())));
            }
            if !m.amplitude.is_finite() {
                return Err(invalid(field, "amplitudes must be finite"));
            }
        }
        Ok(())
    }

    pub fn to_field(&self, grid: TorusGrid, base: &Path) -> anyhow::Result<SpectralField> {
        if let Some(file) = &self.file {
            let u = read_field(&base.join(file))?;
            anyhow::ensure!(
                u.grid() == grid,
                "field file {} is on grid {}, expected {}",
                file.display(),
                u.grid(),
                grid
            );
            return Ok(u);
        }
        let mut u = SpectralField::zeros(grid);
        for m in &self.modes {
            u += &m.to_field(grid);
        }
        Ok(u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskRecipe {
    Full,
    /// Nodes whose first coordinate lies in `[a, b)`.
    Slab([f64; 2]),
    /// Node index list such as `0-15,20`.
    Indices(String),
}

/// Expands `0-15,20` into node indices.
fn parse_ranges(text: &str) -> Result<Vec<usize>, ConfigError> {
    let number = |t: &str| t.trim().parse::<usize>().map_err(|_| invalid("mask", format!("bad node index `{t}`")));
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (number(a)?, number(b)?);
                if a > b {
                    return Err(invalid("mask", format!("empty range `{part}`")));
                }
                out.extend(a..=b);
            }
            None => out.push(number(part)?),
        }
    }
    Ok(out)
}

impl Default for MaskRecipe {
    fn default() -> Self {
        MaskRecipe::Slab([0.0, PI])
    }
}

impl MaskRecipe {
    pub fn to_mask(&self, grid: TorusGrid) -> Result<Mask, ConfigError> {
        let mask = match self {
            MaskRecipe::Full => Mask::full(grid),
            MaskRecipe::Slab([a, b]) => Mask::slab(grid, *a, *b),
            MaskRecipe::Indices(s) => {
                Mask::from_indices(grid, &parse_ranges(s)?).map_err(|e| invalid("mask", e.to_string()))?
            }
        };
        if mask.is_empty() {
            return Err(invalid("mask", "selects no grid node"));
        }
        Ok(mask)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub d: usize,
    pub n: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { d: 1, n: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub horizon: f64,
    pub dt: f64,
    pub scheme: Scheme,
    pub k_reg: Option<f64>,
    /// Recording interval of the trajectory CSV; every step when absent.
    pub sample_every: Option<f64>,
    pub forcing: FieldRecipe,
    pub shift: FieldRecipe,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            dt: 1e-3,
            scheme: Scheme::Etdrk2,
            k_reg: None,
            sample_every: Some(1e-2),
            forcing: FieldRecipe::default(),
            shift: FieldRecipe::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SteerConfig {
    /// `H^k` tolerance around the target.
    pub eps: f64,
    pub t_max: f64,
    /// Hold the state near the target until exactly this time.
    pub exact_time: Option<f64>,
    pub k_reg: f64,
    pub dt: f64,
    pub delta0: f64,
    pub halvings: usize,
    pub level: usize,
}

impl Default for SteerConfig {
    fn default() -> Self {
        Self { eps: 0.05, t_max: 0.5, exact_time: None, k_reg: 1.0, dt: 1e-3, delta0: 1e-2, halvings: 20, level: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearConfig {
    pub horizon: f64,
    pub lambda_max: f64,
    pub mask: MaskRecipe,
    pub m: f64,
    pub p: f64,
    pub q: f64,
    pub samples_per_interval: usize,
    /// Horizons of the minimal control-cost trend; skipped when empty.
    pub cost_horizons: Vec<f64>,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            lambda_max: 16.0,
            mask: MaskRecipe::default(),
            m: 0.1,
            p: 3.0,
            q: 1.2,
            samples_per_interval: 8,
            cost_horizons: vec![1.0, 0.5, 0.25],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlobalConfig {
    pub eps_t: f64,
    pub delta_t: f64,
    pub horizon: f64,
    pub lambda_max: f64,
    pub mask: MaskRecipe,
    pub safety: f64,
    /// Largest accepted terminal `L²` norm.
    pub terminal_tol: f64,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            eps_t: 0.05,
            delta_t: 0.5,
            horizon: 1.0,
            lambda_max: 16.0,
            mask: MaskRecipe::default(),
            safety: 0.5,
            terminal_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaturationConfig {
    /// Modes to plan; the `target` recipe's modes when empty.
    pub modes: Vec<TrigMode>,
    pub injection: Injection,
    /// Relative amplitude tolerance of the realized spectrum.
    pub tol: f64,
}

impl Default for SaturationConfig {
    fn default() -> Self {
        Self { modes: Vec::new(), injection: Injection::FirstArgument, tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Random seeds of the energy suite.
    pub seeds: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { seeds: 10 }
    }
}

/// Full experiment description; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub out: PathBuf,
    pub grid: GridConfig,
    pub initial: FieldRecipe,
    pub target: FieldRecipe,
    pub simulate: SimulateConfig,
    pub steer: SteerConfig,
    pub null_linear: LinearConfig,
    pub null_global: GlobalConfig,
    pub saturation: SaturationConfig,
    pub verify: VerifyConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            out: PathBuf::from("out"),
            grid: GridConfig::default(),
            initial: FieldRecipe::default(),
            target: FieldRecipe::default(),
            simulate: SimulateConfig::default(),
            steer: SteerConfig::default(),
            null_linear: LinearConfig::default(),
            null_global: GlobalConfig::default(),
            saturation: SaturationConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

fn positive(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive and finite, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::parse(&text)
    }

    pub fn torus(&self) -> Result<TorusGrid, ConfigError> {
        TorusGrid::new(self.grid.d, self.grid.n).map_err(|e| invalid("grid", e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        if !(1..=2).contains(&self.grid.d) {
            return Err(invalid("grid.d", format!("must be 1 or 2, got {}", self.grid.d)));
        }
        let grid = self.torus()?;
        self.initial.validate("initial", grid)?;
        self.target.validate("target", grid)?;

        let s = &self.simulate;
        positive("simulate.horizon", s.horizon)?;
        positive("simulate.dt", s.dt)?;
        if let Some(k) = s.k_reg {
            if !(k >= 0.0) {
                return Err(invalid("simulate.k_reg", format!("must be non-negative, got {k}")));
            }
        }
        if let Some(e) = s.sample_every {
            positive("simulate.sample_every", e)?;
        }
        s.forcing.validate("simulate.forcing", grid)?;
        s.shift.validate("simulate.shift", grid)?;

        let st = &self.steer;
        positive("steer.eps", st.eps)?;
        positive("steer.t_max", st.t_max)?;
        positive("steer.dt", st.dt)?;
        positive("steer.delta0", st.delta0)?;
        if let Some(t) = st.exact_time {
            positive("steer.exact_time", t)?;
        }

        let l = &self.null_linear;
        positive("null_linear.horizon", l.horizon)?;
        positive("null_linear.lambda_max", l.lambda_max)?;
        positive("null_linear.m", l.m)?;
        positive("null_linear.p", l.p)?;
        if !(l.q > 1.0) {
            return Err(invalid("null_linear.q", format!("must exceed 1, got {}", l.q)));
        }
        if l.samples_per_interval < 2 {
            return Err(invalid("null_linear.samples_per_interval", "must be at least 2"));
        }
        for &h in &l.cost_horizons {
            positive("null_linear.cost_horizons", h)?;
        }
        l.mask.to_mask(grid)?;

        let g = &self.null_global;
        if !(0.0 < g.eps_t && g.eps_t < g.delta_t && g.delta_t < g.horizon) {
            return Err(invalid(
                "null_global",
                format!("need 0 < eps_t < delta_t < horizon, got ({}, {}, {})", g.eps_t, g.delta_t, g.horizon),
            ));
        }
        positive("null_global.lambda_max", g.lambda_max)?;
        positive("null_global.terminal_tol", g.terminal_tol)?;
        if !(g.safety > 0.0 && g.safety <= 1.0) {
            return Err(invalid("null_global.safety", format!("must lie in (0, 1], got {}", g.safety)));
        }
        g.mask.to_mask(grid)?;

        for m in &self.saturation.modes {
            if m.p.len() != grid.d() {
                return Err(invalid("saturation.modes", format!("mode {:?} does not match d = {}", m.p, grid.d())));
            }
        }
        positive("saturation.tol", self.saturation.tol)?;
        if self.verify.seeds == 0 {
            return Err(invalid("verify.seeds", "must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        assert_eq!(ExperimentConfig::parse("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn round_trips_through_json() {
        let mut c = ExperimentConfig {
            initial: FieldRecipe { modes: vec![TrigMode::sin(&[1], 0.5)], file: None },
            ..ExperimentConfig::default()
        };
        c.null_linear.mask = MaskRecipe::Indices("0-7".into());
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::parse(&text).unwrap(), c);
    }

    #[test]
    fn reports_the_offending_field() {
        let e = ExperimentConfig::parse(r#"{"steer": {"eps": -1}}"#).unwrap_err();
        assert!(e.to_string().contains("steer.eps"), "{e}");
        let e = ExperimentConfig::parse(r#"{"grid": {"d": 1, "n": 7}}"#).unwrap_err();
        assert!(e.to_string().contains("grid"), "{e}");
        let e = ExperimentConfig::parse(r#"{"null_global": {"eps_t": 0.6}}"#).unwrap_err();
        assert!(e.to_string().contains("null_global"), "{e}");
        let e = ExperimentConfig::parse(r#"{"initial": {"modes": [{"p": [20], "phase": "sin", "amplitude": 1}]}}"#)
            .unwrap_err();
        assert!(e.to_string().contains("initial"), "{e}");
    }

    #[test]
    fn rejects_unknown_fields_and_versions() {
        assert!(matches!(ExperimentConfig::parse(r#"{"bogus": 1}"#), Err(ConfigError::Parse(_))));
        assert!(ExperimentConfig::parse(r#"{"schema_version": 2}"#).is_err());
    }

    #[test]
    fn mask_recipes() {
        let g = TorusGrid::new(1, 16).unwrap();
        assert_eq!(MaskRecipe::default().to_mask(g).unwrap().count(), 8);
        assert_eq!(MaskRecipe::Full.to_mask(g).unwrap().count(), 16);
        assert!(MaskRecipe::Slab([1.0, 1.1]).to_mask(g).is_err());
    }
}
