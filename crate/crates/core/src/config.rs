//! TOML run configuration. Unknown keys are errors; every omitted key takes the default
//! listed here, and [`Config::echo`] writes the fully defaulted form back out.
//!
//! ```toml
//! [grid]
//! L = 8.0            # half-width of [-L, L]²
//! N = 257            # nodes per side, at least 16
//!
//! [flow]
//! dt_safety = 0.2    # dt = dt_safety·h²
//! t_end = 0.1
//! snapshot_times = []
//! diagnostic_stride = 10
//! two_pass = false   # rerun with T1 at the observed concentration stop
//!
//! [diag]
//! T1 = <t_end>       # must be >= t_end
//! R = <min(1, sqrt(T1))>
//! E0 = 0.0
//! center = [0.0, 0.0]
//! log_spacing = 0.0  # > 0: also record every time log(R/sqrt(T1 - t)) grows by this much
//! snapshot_every_record = false
//!
//! [init]
//! kind = "bubble"    # degree, lambda, center, axis, angle
//! kind = "equivariant"  # m, amplitude, lambda, representation = "radial" | "grid"
//! kind = "file"      # path to a .sfld snapshot
//!
//! [radial]
//! r_min = <1e-4·L>
//! ratio = 1.02
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{make_bubble, Rotation};
use crate::flow::{FlowConfig, State};
use crate::grid::Grid;
use crate::radial::{geometric_nodes, lift, RadialProfile};
use crate::snapshot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(rename = "L", default = "default_l")]
    pub l: f64,
    #[serde(rename = "N", default = "default_n")]
    pub n: usize,
}

fn default_l() -> f64 {
    8.0
}
fn default_n() -> usize {
    257
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { l: default_l(), n: default_n() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    #[serde(default = "default_dt_safety")]
    pub dt_safety: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default = "default_stride")]
    pub diagnostic_stride: usize,
    #[serde(default)]
    pub two_pass: bool,
}

fn default_dt_safety() -> f64 {
    0.2
}
fn default_t_end() -> f64 {
    0.1
}
fn default_stride() -> usize {
    10
}

impl Default for FlowSection {
    fn default() -> Self {
        FlowSection {
            dt_safety: default_dt_safety(),
            t_end: default_t_end(),
            snapshot_times: Vec::new(),
            diagnostic_stride: default_stride(),
            two_pass: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagSection {
    #[serde(rename = "T1", default, skip_serializing_if = "Option::is_none")]
    pub t1: Option<f64>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(rename = "E0", default)]
    pub e0: f64,
    #[serde(default)]
    pub center: [f64; 2],
    #[serde(default)]
    pub log_spacing: f64,
    #[serde(default)]
    pub snapshot_every_record: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    #[default]
    Radial,
    Grid,
}

fn one() -> u32 {
    1
}
fn one_f() -> f64 {
    1.0
}
fn z_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitSpec {
    /// Rational bubble z ↦ Q·S(((z − c)/λ)^degree).
    Bubble {
        #[serde(default = "one")]
        degree: u32,
        lambda: f64,
        #[serde(default)]
        center: [f64; 2],
        #[serde(default = "z_axis")]
        axis: [f64; 3],
        #[serde(default)]
        angle: f64,
    },
    /// m-equivariant map with h(r) = amplitude·2·atan(r/λ).
    Equivariant {
        #[serde(default = "one")]
        m: u32,
        #[serde(default = "one_f")]
        amplitude: f64,
        lambda: f64,
        #[serde(default)]
        representation: Representation,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadialSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_min: Option<f64>,
    #[serde(default = "default_ratio")]
    pub ratio: f64,
}

fn default_ratio() -> f64 {
    1.02
}

impl Default for RadialSection {
    fn default() -> Self {
        RadialSection { r_min: None, ratio: default_ratio() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub flow: FlowSection,
    #[serde(default)]
    pub diag: DiagSection,
    pub init: InitSpec,
    #[serde(default)]
    pub radial: RadialSection,
}

impl Config {
    /// Parses TOML text, fills the derived defaults and validates.
    pub fn from_toml(text: &str) -> Result<Config> {
        let mut c: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.fill_defaults();
        c.validate()?;
        Ok(c)
    }

    fn fill_defaults(&mut self) {
        let t1 = *self.diag.t1.get_or_insert(self.flow.t_end);
        self.diag.r.get_or_insert(t1.sqrt().min(1.0));
        self.radial.r_min.get_or_insert(1e-4 * self.grid.l);
    }

    pub fn validate(&self) -> Result<()> {
        Grid::new(self.grid.l, self.grid.n)?;
        self.flow_config()?.validate()?;
        if let InitSpec::Bubble { lambda, .. } | InitSpec::Equivariant { lambda, .. } = self.init {
            if !(lambda > 0.0) {
                return Err(Error::Config(format!("init.lambda must be positive, got {lambda}")));
            }
        }
        if self.diag.log_spacing < 0.0 {
            return Err(Error::Config("diag.log_spacing must be non-negative".into()));
        }
        Ok(())
    }

    /// The fully defaulted configuration as TOML; parsing it back gives an equal Config.
    pub fn echo(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.l, self.grid.n)
    }

    pub fn flow_config(&self) -> Result<FlowConfig> {
        let t1 = self.diag.t1.unwrap_or(self.flow.t_end);
        let r = self.diag.r.unwrap_or(t1.sqrt().min(1.0));
        let mut f = FlowConfig::new(self.grid()?, self.flow.t_end, t1, r);
        f.dt_safety = self.flow.dt_safety;
        f.snapshot_times = self.flow.snapshot_times.clone();
        f.diagnostic_stride = self.flow.diagnostic_stride;
        f.e0 = self.diag.e0;
        f.center = self.diag.center;
        f.diag_log_spacing = (self.diag.log_spacing > 0.0).then_some(self.diag.log_spacing);
        f.snapshot_every_record = self.diag.snapshot_every_record;
        Ok(f)
    }

    pub fn radial_nodes(&self) -> Result<Vec<f64>> {
        geometric_nodes(self.grid.l, self.radial.r_min.unwrap_or(1e-4 * self.grid.l), self.radial.ratio)
    }

    /// Builds the initial state; relative file paths resolve against `base_dir`.
    pub fn initial_state(&self, base_dir: &Path) -> Result<State> {
        match &self.init {
            InitSpec::Bubble { degree, lambda, center, axis, angle } => {
                let q = if *angle == 0.0 { Rotation::identity() } else { Rotation::from_axis_angle(*axis, *angle)? };
                Ok(State::Field(make_bubble(self.grid()?, *degree, *lambda, *center, &q)?))
            }
            InitSpec::Equivariant { m, amplitude, lambda, representation } => {
                let (a, l) = (*amplitude, *lambda);
                let p = RadialProfile::from_fn(self.radial_nodes()?, *m, |r| a * 2.0 * (r / l).atan())?;
                match representation {
                    Representation::Radial => Ok(State::Profile(p)),
                    Representation::Grid => Ok(State::Field(lift(&p, self.grid()?)?)),
                }
            }
            InitSpec::File { path } => {
                let full = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                let snap = snapshot::read(&full)?;
                if let State::Field(u) = &snap.state {
                    if u.grid() != &self.grid()? {
                        return Err(Error::Config(format!(
                            "snapshot grid (L = {}, N = {}) differs from [grid]",
                            u.grid().half_width(),
                            u.grid().n()
                        )));
                    }
                }
                Ok(snap.state)
            }
        }
    }
}

/// Sets a dotted key such as `init.lambda` in TOML text. `value` is read as a TOML value
/// when it parses as one (numbers, booleans, arrays) and as a string otherwise.
pub fn override_key(text: &str, key: &str, value: &str) -> Result<String> {
    let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let (last, path) =
        parts.split_last().filter(|(l, _)| !l.is_empty()).ok_or_else(|| Error::Config(format!("bad key {key:?}")))?;
    let mut table = &mut doc;
    for part in path {
        let entry = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| Error::Config(format!("{part} in {key} is not a table")))?;
    }
    table.insert(last.to_string(), parsed);
    toml::to_string(&doc).map_err(|e| Error::Config(e.to_string()))
}

pub fn parse_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path)?;
    Config::from_toml(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_is_defaulted() {
        let c = Config::from_toml("[init]\nkind = \"bubble\"\nlambda = 0.1\n").unwrap();
        assert_eq!(c.grid, GridSection { l: 8.0, n: 257 });
        assert_eq!(c.flow.dt_safety, 0.2);
        assert_eq!(c.diag.t1, Some(0.1));
        assert_eq!(c.diag.r, Some(0.1f64.sqrt()));
        assert_eq!(c.radial.r_min, Some(8e-4));
        assert!(matches!(c.init, InitSpec::Bubble { degree: 1, lambda, .. } if lambda == 0.1));
    }

    #[test]
    fn echo_round_trips() {
        let text = r#"
            [grid]
            N = 65
            [flow]
            t_end = 0.3
            snapshot_times = [0.1, 0.2]
            [diag]
            T1 = 0.7
            E0 = 12.566370614359172
            log_spacing = 0.02
            [init]
            kind = "equivariant"
            amplitude = 1.1
            lambda = 0.05
            representation = "grid"
        "#;
        let c = Config::from_toml(text).unwrap();
        let again = Config::from_toml(&c.echo().unwrap()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.echo().unwrap(), again.echo().unwrap());
    }

    #[test]
    fn overrides_set_nested_keys() {
        let base = "[init]\nkind = \"bubble\"\nlambda = 0.1\n";
        let c = Config::from_toml(&override_key(base, "init.lambda", "0.25").unwrap()).unwrap();
        assert!(matches!(c.init, InitSpec::Bubble { lambda, .. } if lambda == 0.25));
        let c = Config::from_toml(&override_key(base, "grid.N", "65").unwrap()).unwrap();
        assert_eq!(c.grid.n, 65);
        let c = Config::from_toml(&override_key(base, "init.kind", "equivariant").unwrap()).unwrap();
        assert!(matches!(c.init, InitSpec::Equivariant { .. }));
        assert!(override_key(base, "init.kind.x", "1").is_err());
    }

    #[test]
    fn rejections() {
        let small = Config::from_toml("[grid]\nN = 8\n[init]\nkind = \"bubble\"\nlambda = 0.1\n");
        assert!(small.unwrap_err().to_string().contains("16"));
        let early =
            Config::from_toml("[flow]\nt_end = 1.0\n[diag]\nT1 = 0.5\n[init]\nkind = \"bubble\"\nlambda = 0.1\n");
        assert!(early.unwrap_err().to_string().contains("tau = T1 - t > 0"));
        let typo = Config::from_toml("[grid]\nNN = 65\n[init]\nkind = \"bubble\"\nlambda = 0.1\n");
        assert!(typo.is_err());
        let typo_init = Config::from_toml("[init]\nkind = \"bubble\"\nlambda = 0.1\nlamda = 2\n");
        assert!(typo_init.is_err());
        assert!(Config::from_toml("[init]\nkind = \"vortex\"\n").is_err());
    }
}
