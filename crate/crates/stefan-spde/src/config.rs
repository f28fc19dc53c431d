//! Flat `key = value` run configuration with named presets.
//!
//! A `preset` line is expanded first; every other key overrides it regardless
//! of position. Unknown and repeated keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisSpec, Mode};
use crate::enthalpy::{validate_model, ModelError, PhysicalParams};
use crate::noise::NoiseSpec;
use crate::sde::{InitialCondition, Ip1Policy, SimConfig, Source, TimeStep};
use crate::verification::VerifyOptions;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` already set on line {first}")]
    Duplicate { line: usize, key: String, first: usize },
    #[error("line {line}: invalid value for `{key}`: {message}")]
    Value { line: usize, key: String, message: String },
    #[error("{}:{line}: {message}", path.display())]
    Data { path: PathBuf, line: usize, message: String },
    #[error("`{key}` is required when {when}")]
    Missing { key: &'static str, when: &'static str },
    #[error(transparent)]
    Rejected(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "heat1d")]
    Heat1d,
    #[serde(rename = "heat2d")]
    Heat2d,
    #[serde(rename = "heat2d-exact")]
    Heat2dExact,
    #[serde(rename = "stefan2d")]
    Stefan2d,
    #[serde(rename = "stefan2d-deterministic")]
    Stefan2dDeterministic,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Heat1d, Preset::Heat2d, Preset::Heat2dExact, Preset::Stefan2d, Preset::Stefan2dDeterministic];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Heat1d => "heat1d",
            Preset::Heat2d => "heat2d",
            Preset::Heat2dExact => "heat2d-exact",
            Preset::Stefan2d => "stefan2d",
            Preset::Stefan2dDeterministic => "stefan2d-deterministic",
        }
    }

    /// Fully resolved configuration of the preset.
    pub fn config(self) -> Config {
        let mut c = Config::default();
        let heat = |c: &mut Config, dim: usize| {
            c.sim.basis = BasisSpec::new(dim, 16);
            c.sim.physics = PhysicalParams::heat_reduction();
            c.sim.noise = NoiseSpec::silent();
            c.sim.final_time = 0.01;
        };
        match self {
            Preset::Heat1d => {
                heat(&mut c, 1);
                c.sim.dt = TimeStep::Fixed(1e-5);
                c.sim.initial = InitialCondition::Mode { mode: [1, 0], amplitude: 1.0 };
            }
            Preset::Heat2d => heat(&mut c, 2),
            Preset::Heat2dExact => {
                heat(&mut c, 2);
                c.sim.dt = TimeStep::Fixed(1e-5);
                c.sim.initial = InitialCondition::Mode { mode: [1, 1], amplitude: 1.0 };
            }
            Preset::Stefan2d => c.sim.ip1_policy = Ip1Policy::Warn,
            Preset::Stefan2dDeterministic => {
                c.sim.ip1_policy = Ip1Policy::Warn;
                c.sim.noise = NoiseSpec::silent();
            }
        }
        c.preset = Some(self);
        c
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
            format!("unknown preset `{s}` (expected one of {})", names.join(", "))
        })
    }
}

/// Everything a command needs: the simulation plus verification settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub preset: Option<Preset>,
    pub sim: SimConfig,
    pub verify: VerifyOptions,
    /// Coarse modes per axis of the convergence sweep; each is paired with 2m.
    pub converge_modes: Vec<usize>,
    pub converge_path: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            preset: None,
            sim: SimConfig {
                basis: BasisSpec::new(2, 16),
                physics: PhysicalParams::default(),
                noise: NoiseSpec::default(),
                final_time: 0.05,
                dt: TimeStep::Auto,
                initial: InitialCondition::Slab { theta_solid: 0.5, theta_liquid: 1.0, width: 0.1 },
                source: Source::Zero,
                seed: 0,
                paths: 1,
                save_every: 100,
                ip1_policy: Ip1Policy::Reject,
            },
            verify: VerifyOptions::default(),
            converge_modes: vec![8, 16, 32],
            converge_path: 0,
        }
    }
}

/// Documented keys: name, default without a preset, meaning.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("preset", "none", "heat1d | heat2d | heat2d-exact | stefan2d | stefan2d-deterministic"),
    ("dim", "2", "spatial dimension, 1 or 2"),
    ("modes", "16", "retained modes per axis m"),
    ("grid", "auto", "collocation points per axis M, auto = 2m"),
    ("c1", "1", "solid heat capacity"),
    ("c2", "1", "liquid heat capacity"),
    ("k1", "1", "solid conductivity"),
    ("k2", "1", "liquid conductivity"),
    ("latent_heat", "1", "latent heat"),
    ("eta_cutoff", "0.05", "noise cutoff ε"),
    ("eta_lipschitz", "1", "Lipschitz constant L of the cutoff"),
    ("mush_width", "0.05", "mushy-region half width"),
    ("psi_floor", "0.05", "lower bound ψ₀ of Ψ′"),
    ("blend_width", "0.1", "smoothing width of the capacity kink"),
    ("noise_modes", "32", "number K of transport noise fields"),
    ("alpha0", "0.5", "noise amplitude"),
    ("decay", "2", "amplitude decay p in α_k = α₀(1 + λ_k)^(−p)"),
    ("ip1_policy", "reject", "reject | warn when the (Ip1) series is not converged"),
    ("T", "0.05", "final time"),
    ("dt", "auto", "time step, auto = stable step"),
    ("initial", "slab", "mode | slab | file"),
    ("initial_mode", "1,1", "multi-index for initial = mode"),
    ("initial_amplitude", "1", "amplitude for initial = mode"),
    ("slab_theta_solid", "0.5", "solid temperature magnitude for initial = slab"),
    ("slab_theta_liquid", "1", "liquid temperature for initial = slab"),
    ("slab_width", "0.1", "transition width for initial = slab"),
    ("initial_file", "none", "coefficient file for initial = file"),
    ("source", "zero", "zero | file"),
    ("source_file", "none", "coefficient file for source = file"),
    ("seed", "0", "noise seed"),
    ("paths", "1", "ensemble size"),
    ("save_every", "100", "snapshot stride in steps"),
    ("quadrature_nodes", "auto", "Gauss–Legendre nodes per axis for audits"),
    ("martingale_grid", "1024", "intervals per axis of the martingale quadrature"),
    ("weak_form_modes", "8", "test modes of the weak-form check"),
    ("weak_form_paths", "4", "paths whose weak form is reconstructed"),
    ("moment_r", "4", "increment moment order r"),
    ("moment_beta", "5", "Sobolev index β of the increment norm"),
    ("moment_origins", "16", "increment origins per path and lag"),
    ("moment_min_paths", "200", "paths needed for a conclusive moment fit"),
    ("converge_modes", "8,16,32", "coarse modes of the convergence sweep"),
    ("converge_path", "0", "path index driving the convergence sweep"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum InitialKind {
    Mode,
    Slab,
    File,
}

/// Mutable parse state; resolved into a [`Config`] after all lines are read.
struct Builder {
    config: Config,
    grid: Option<usize>,
    initial: InitialKind,
    mode: Option<Mode>,
    amplitude: f64,
    slab: (f64, f64, f64),
    initial_file: Option<PathBuf>,
    source_from_file: Option<bool>,
    source_file: Option<PathBuf>,
}

impl Builder {
    fn new(base: Config) -> Self {
        let initial = match base.sim.initial {
            InitialCondition::Mode { .. } => InitialKind::Mode,
            _ => InitialKind::Slab,
        };
        let (mode, amplitude) = match base.sim.initial {
            InitialCondition::Mode { mode, amplitude } => (Some(mode), amplitude),
            _ => (None, 1.0),
        };
        Self {
            config: base,
            grid: None,
            initial,
            mode,
            amplitude,
            slab: (0.5, 1.0, 0.1),
            initial_file: None,
            source_from_file: None,
            source_file: None,
        }
    }

    fn set(&mut self, key: &str, value: &str, line: usize, dir: &Path) -> Result<(), ConfigError> {
        let bad = |message: String| ConfigError::Value { line, key: key.to_string(), message };
        let sim = &mut self.config.sim;
        let ph = &mut sim.physics;
        let vo = &mut self.config.verify;
        match key {
            "dim" => sim.basis.dim = num(value).map_err(bad)?,
            "modes" => sim.basis.modes = num(value).map_err(bad)?,
            "grid" => self.grid = auto_or(value).map_err(bad)?,
            "c1" => ph.c1 = num(value).map_err(bad)?,
            "c2" => ph.c2 = num(value).map_err(bad)?,
            "k1" => ph.k1 = num(value).map_err(bad)?,
            "k2" => ph.k2 = num(value).map_err(bad)?,
            "latent_heat" => ph.latent_heat = num(value).map_err(bad)?,
            "eta_cutoff" => ph.eta_cutoff = num(value).map_err(bad)?,
            "eta_lipschitz" => ph.eta_lipschitz = num(value).map_err(bad)?,
            "mush_width" => ph.mush_width = num(value).map_err(bad)?,
            "psi_floor" => ph.psi_floor = num(value).map_err(bad)?,
            "blend_width" => ph.blend_width = num(value).map_err(bad)?,
            "noise_modes" => sim.noise.modes = num(value).map_err(bad)?,
            "alpha0" => sim.noise.alpha0 = num(value).map_err(bad)?,
            "decay" => sim.noise.decay = num(value).map_err(bad)?,
            "ip1_policy" => {
                sim.ip1_policy = match value {
                    "reject" => Ip1Policy::Reject,
                    "warn" => Ip1Policy::Warn,
                    _ => return Err(bad(format!("expected reject or warn, got `{value}`"))),
                }
            }
            "T" => sim.final_time = num(value).map_err(bad)?,
            "dt" => sim.dt = auto_or(value).map_err(bad)?.map_or(TimeStep::Auto, TimeStep::Fixed),
            "initial" => {
                self.initial = match value {
                    "mode" => InitialKind::Mode,
                    "slab" => InitialKind::Slab,
                    "file" => InitialKind::File,
                    _ => return Err(bad(format!("expected mode, slab or file, got `{value}`"))),
                }
            }
            "initial_mode" => self.mode = Some(mode_index(value).map_err(bad)?),
            "initial_amplitude" => self.amplitude = num(value).map_err(bad)?,
            "slab_theta_solid" => self.slab.0 = num(value).map_err(bad)?,
            "slab_theta_liquid" => self.slab.1 = num(value).map_err(bad)?,
            "slab_width" => self.slab.2 = num(value).map_err(bad)?,
            "initial_file" => self.initial_file = Some(dir.join(value)),
            "source" => {
                self.source_from_file = Some(match value {
                    "zero" => false,
                    "file" => true,
                    _ => return Err(bad(format!("expected zero or file, got `{value}`"))),
                })
            }
            "source_file" => self.source_file = Some(dir.join(value)),
            "seed" => sim.seed = num(value).map_err(bad)?,
            "paths" => sim.paths = num(value).map_err(bad)?,
            "save_every" => sim.save_every = num(value).map_err(bad)?,
            "quadrature_nodes" => vo.quadrature_nodes = auto_or(value).map_err(bad)?,
            "martingale_grid" => vo.martingale_grid = num(value).map_err(bad)?,
            "weak_form_modes" => vo.weak_form_modes = num(value).map_err(bad)?,
            "weak_form_paths" => vo.weak_form_paths = num(value).map_err(bad)?,
            "moment_r" => vo.moments.r = num(value).map_err(bad)?,
            "moment_beta" => vo.moments.beta = num(value).map_err(bad)?,
            "moment_origins" => vo.moments.origins = num(value).map_err(bad)?,
            "moment_min_paths" => vo.moments.min_paths = num(value).map_err(bad)?,
            "converge_modes" => {
                let list: Vec<usize> = value.split(',').map(|v| num(v.trim())).collect::<Result<_, _>>().map_err(bad)?;
                if list.is_empty() || list.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(bad("expected a strictly ascending list".into()));
                }
                self.config.converge_modes = list;
            }
            "converge_path" => self.config.converge_path = num(value).map_err(bad)?,
            _ => return Err(ConfigError::UnknownKey { line, key: key.to_string() }),
        }
        Ok(())
    }

    fn finish(mut self) -> Result<Config, ConfigError> {
        let sim = &mut self.config.sim;
        sim.basis.grid = self.grid.unwrap_or(2 * sim.basis.modes);
        let dim = sim.basis.dim;
        sim.initial = match self.initial {
            InitialKind::Mode => {
                let mode = self.mode.unwrap_or(if dim == 1 { [1, 0] } else { [1, 1] });
                InitialCondition::Mode { mode, amplitude: self.amplitude }
            }
            InitialKind::Slab => {
                let (theta_solid, theta_liquid, width) = self.slab;
                InitialCondition::Slab { theta_solid, theta_liquid, width }
            }
            InitialKind::File => {
                let path = self.initial_file.ok_or(ConfigError::Missing { key: "initial_file", when: "initial = file" })?;
                InitialCondition::Coefficients(read_coefficients(&path, dim)?)
            }
        };
        match self.source_from_file {
            Some(true) => {
                let path = self.source_file.ok_or(ConfigError::Missing { key: "source_file", when: "source = file" })?;
                sim.source = Source::Coefficients(read_coefficients(&path, dim)?);
            }
            Some(false) => sim.source = Source::Zero,
            None => {}
        }
        Ok(self.config)
    }
}

fn num<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("`{v}`: {e}"))
}

fn auto_or<T: FromStr>(v: &str) -> Result<Option<T>, String>
where
    T::Err: fmt::Display,
{
    if v == "auto" {
        Ok(None)
    } else {
        num(v).map(Some)
    }
}

fn mode_index(v: &str) -> Result<Mode, String> {
    let parts: Vec<usize> = v.split(',').map(|p| num(p.trim())).collect::<Result<_, _>>()?;
    match parts[..] {
        [a] => Ok([a, 0]),
        [a, b] => Ok([a, b]),
        _ => Err(format!("expected `k1` or `k1,k2`, got `{v}`")),
    }
}

/// Reads `k1 [k2] value` lines, separated by whitespace or commas.
pub fn read_coefficients(path: &Path, dim: usize) -> Result<Vec<(Mode, f64)>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_coefficients(&text, dim).map_err(|(line, message)| ConfigError::Data { path: path.to_path_buf(), line, message })
}

pub fn parse_coefficients(text: &str, dim: usize) -> Result<Vec<(Mode, f64)>, (usize, String)> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|f| !f.is_empty()).collect();
        if fields.len() != dim + 1 {
            return Err((i + 1, format!("expected {} fields, got {}", dim + 1, fields.len())));
        }
        let idx = |f: &str| num::<usize>(f).map_err(|e| (i + 1, e));
        let k = if dim == 1 { [idx(fields[0])?, 0] } else { [idx(fields[0])?, idx(fields[1])?] };
        let v: f64 = num(fields[dim]).map_err(|e| (i + 1, e))?;
        out.push((k, v));
    }
    Ok(out)
}

fn strip_comment(line: &str) -> &str {
    line.split('#').next().unwrap_or("").trim()
}

/// Parses configuration text; relative file paths resolve against `dir`.
pub fn parse_str(text: &str, dir: &Path) -> Result<Config, ConfigError> {
    let mut entries: Vec<(usize, String, String)> = Vec::new();
    let mut seen: Vec<(String, usize)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: i + 1,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1, message: "empty key or value".into() });
        }
        if let Some((_, first)) = seen.iter().find(|(k, _)| k == key) {
            return Err(ConfigError::Duplicate { line: i + 1, key: key.into(), first: *first });
        }
        seen.push((key.into(), i + 1));
        entries.push((i + 1, key.into(), value.into()));
    }
    let base = match entries.iter().find(|(_, k, _)| k == "preset") {
        Some((line, key, value)) => value
            .parse::<Preset>()
            .map_err(|message| ConfigError::Value { line: *line, key: key.clone(), message })?
            .config(),
        None => Config::default(),
    };
    let mut b = Builder::new(base);
    for (line, key, value) in entries.iter().filter(|(_, k, _)| k != "preset") {
        b.set(key, value, *line, dir)?;
    }
    let config = b.finish()?;
    validate_model(config.sim.physics)?;
    Ok(config)
}

/// Reads and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<Config, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    parse_str(&text, dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Config, ConfigError> {
        parse_str(text, Path::new("."))
    }

    #[test]
    fn preset_alone_is_fully_defaulted() {
        let c = parse("preset = heat1d\n").unwrap();
        assert_eq!(c, Preset::Heat1d.config());
        assert_eq!(c.sim.physics, PhysicalParams::heat_reduction());
        assert_eq!(c.sim.basis, BasisSpec::new(1, 16));
        assert_eq!(c.sim.noise.alpha0, 0.0);
    }

    #[test]
    fn keys_override_preset_in_any_order() {
        let c = parse("modes = 8\npreset = heat2d-exact  # trailing comment\nT = 0.02\n").unwrap();
        assert_eq!(c.sim.basis, BasisSpec::new(2, 8));
        assert_eq!(c.sim.final_time, 0.02);
        assert_eq!(c.sim.initial, InitialCondition::Mode { mode: [1, 1], amplitude: 1.0 });
    }

    #[test]
    fn capacity_below_one_names_inverse_hypothesis() {
        let err = parse("c2 = 0.5\n").unwrap_err().to_string();
        assert!(err.contains("0 ≤ (γ̃⁻¹)′ ≤ 1"), "{err}");
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert!(matches!(parse("# c\n\nbogus = 1\n"), Err(ConfigError::UnknownKey { line: 3, .. })));
        assert!(matches!(parse("modes 4\n"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(parse("seed = 1\nseed = 2\n"), Err(ConfigError::Duplicate { line: 2, first: 1, .. })));
        assert!(matches!(parse("modes = -3\n"), Err(ConfigError::Value { line: 1, .. })));
        assert!(matches!(parse("preset = nope\n"), Err(ConfigError::Value { line: 1, .. })));
    }

    #[test]
    fn dt_and_grid_accept_auto() {
        let c = parse("dt = auto\ngrid = auto\nmodes = 12\n").unwrap();
        assert_eq!(c.sim.dt, TimeStep::Auto);
        assert_eq!(c.sim.basis.grid, 24);
        let c = parse("dt = 2.5e-6\ngrid = 40\n").unwrap();
        assert_eq!(c.sim.dt, TimeStep::Fixed(2.5e-6));
        assert_eq!(c.sim.basis.grid, 40);
    }

    #[test]
    fn coefficient_files_resolve_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("x0.txt"), "# k1 k2 value\n1 1 0.5\n2,3, -0.25\n").unwrap();
        std::fs::write(dir.path().join("f.txt"), "1 2 1.5\n").unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "initial = file\ninitial_file = x0.txt\nsource = file\nsource_file = f.txt\n").unwrap();
        let c = parse_config(&cfg).unwrap();
        assert_eq!(c.sim.initial, InitialCondition::Coefficients(vec![([1, 1], 0.5), ([2, 3], -0.25)]));
        assert_eq!(c.sim.source, Source::Coefficients(vec![([1, 2], 1.5)]));
        assert!(matches!(parse("initial = file\n"), Err(ConfigError::Missing { key: "initial_file", .. })));
        assert!(matches!(parse("source = file\n"), Err(ConfigError::Missing { key: "source_file", .. })));
    }

    #[test]
    fn every_documented_key_is_accepted() {
        for (key, default, _) in KEYS {
            let value = match *key {
                "preset" => "stefan2d",
                "initial_file" | "source_file" => continue,
                _ if *default == "none" => continue,
                _ => default,
            };
            parse(&format!("{key} = {value}\n")).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }

    #[test]
    fn documented_defaults_match() {
        let c = parse("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.sim.ip1_policy, Ip1Policy::Reject);
    }
}
