//! Run configuration.
//!
//! The text format is INI-like: `[section]` headers, `key = value` lines and
//! `#` comments. Every key has a default; `ParsedConfig::echo` writes the
//! effective configuration back out with defaulted keys marked, and the
//! output parses to the same `RunConfig`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::fields::{FieldError, Grid};
use crate::linsolve::Preconditioner;
use crate::model::{ConsumptionLaw, DiffusionLaw, ModelParams, Potential, RegimeQuery, SensitivityLaw};
use crate::stepper::{InvariantTolerances, SolverSettings, StepControl};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown section [{name}]; nearest known section is [{nearest}]")]
    UnknownSection { line: usize, name: String, nearest: String },
    #[error("line {line}: unknown key `{key}` in [{section}]; nearest known key is `{nearest}`")]
    UnknownKey { line: usize, section: String, key: String, nearest: String },
    #[error("line {line}: `{key}` is set twice in [{section}] (first on line {first})")]
    Duplicate { line: usize, first: usize, section: String, key: String },
    #[error("line {line}: `{key}` expects {expected}, got `{value}`")]
    Type { line: usize, key: String, expected: &'static str, value: String },
    #[error("{}{message}", line_prefix(*.line))]
    Invalid { line: Option<usize>, message: String },
}

fn line_prefix(line: Option<usize>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

/// Known keys per section, in echo order.
pub const SCHEMA: &[(&str, &[&str])] = &[
    ("grid", &["dim", "n_cells", "lengths"]),
    (
        "model",
        &[
            "m",
            "kappa_d",
            "eps",
            "diffusion",
            "diffusion_coeff",
            "diffusion_offset",
            "diffusion_table",
            "consumption",
            "consumption_rate",
            "consumption_exponent",
            "sensitivity",
            "chi0",
            "delta",
            "sensitivity_matrix",
            "potential",
            "potential_gradient",
            "potential_amplitude",
            "potential_axis",
            "potential_wavenumber",
            "require_positive_consumption",
            "p",
            "q",
            "r",
        ],
    ),
    (
        "stepping",
        &["t_end", "cfl_adv", "cfl_diff", "dt_max", "dt_min", "cg_tol", "cg_max_iter", "precond", "proj_tol"],
    ),
    (
        "initial",
        &[
            "n0", "n0_value", "n0_center", "n0_width", "n0_amplitude", "n0_base", "n0_mass", "n0_seed", "n0_path",
            "c0", "c0_value", "c0_center", "c0_width", "c0_amplitude", "c0_base", "c0_mass", "c0_seed", "c0_path",
            "u0", "u0_value", "u0_amplitude", "u0_seed", "u0_path",
        ],
    ),
    ("output", &["directory", "cadence", "snapshot_cadence", "snapshot_format"]),
    (
        "checks",
        &["slack", "transient_fraction", "cumulative_bounds", "boundedness", "mass_rel", "c_slack", "div_max"],
    ),
];

macro_rules! named_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const NAMES: &'static [&'static str] = &[$($text),+];

            pub fn name(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }

            pub fn from_name(s: &str) -> Option<Self> {
                match s { $($text => Some($name::$variant),)+ _ => None }
            }
        }
    };
}

named_enum!(DiffusionKind { Prototype => "prototype", PowerPlusConstant => "power-plus-constant", Table => "table" });
named_enum!(ConsumptionKind { Linear => "linear", Saturating => "saturating", Power => "power" });
named_enum!(SensitivityKind { Scalar => "scalar", Rotation => "rotation", Matrix => "matrix" });
named_enum!(PotentialKind { Linear => "linear", Sinusoidal => "sinusoidal" });
named_enum!(
    /// Generator for a cell-centered initial field.
    ScalarGenerator {
        Constant => "constant",
        GaussianBump => "gaussian-bump",
        SeededRandom => "seeded-random",
        FromFile => "from-file",
    }
);
named_enum!(
    /// Generator for the initial velocity (always projected afterwards).
    VelocityGenerator { Zero => "zero", Constant => "constant", SeededRandom => "seeded-random", FromFile => "from-file" }
);
named_enum!(SnapshotFormat { Csv => "csv", Bin => "bin" });

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub dim: usize,
    pub n_cells: Vec<usize>,
    pub lengths: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub m: f64,
    pub kappa_d: f64,
    pub eps: f64,
    pub diffusion: DiffusionKind,
    pub diffusion_coeff: f64,
    pub diffusion_offset: f64,
    /// `(n, D)` knots for the table law.
    pub diffusion_table: Vec<(f64, f64)>,
    pub consumption: ConsumptionKind,
    pub consumption_rate: f64,
    pub consumption_exponent: f64,
    pub sensitivity: SensitivityKind,
    pub chi0: f64,
    pub delta: f64,
    /// Row-major `dim x dim` entries.
    pub sensitivity_matrix: Vec<f64>,
    pub potential: PotentialKind,
    pub potential_gradient: Vec<f64>,
    pub potential_amplitude: f64,
    pub potential_axis: usize,
    pub potential_wavenumber: f64,
    pub require_positive_consumption: bool,
    /// Exponents of the monitored functional and the regime check.
    pub p: f64,
    pub q: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteppingConfig {
    pub t_end: f64,
    pub cfl_adv: f64,
    pub cfl_diff: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub precond: Preconditioner,
    pub proj_tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarInit {
    pub generator: ScalarGenerator,
    pub value: f64,
    pub center: Vec<f64>,
    pub width: f64,
    pub amplitude: f64,
    pub base: f64,
    /// Rescale the generated field to this total, if set.
    pub mass: Option<f64>,
    pub seed: u64,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityInit {
    pub generator: VelocityGenerator,
    pub value: Vec<f64>,
    pub amplitude: f64,
    pub seed: u64,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialConfig {
    pub n0: ScalarInit,
    pub c0: ScalarInit,
    pub u0: VelocityInit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub directory: String,
    /// Diagnostics are recorded every `cadence` units of simulation time.
    pub cadence: f64,
    /// Snapshot spacing in simulation time; 0 writes only the first and last state.
    pub snapshot_cadence: f64,
    pub snapshot_format: SnapshotFormat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChecksConfig {
    pub slack: f64,
    pub transient_fraction: f64,
    pub cumulative_bounds: bool,
    pub boundedness: bool,
    pub mass_rel: f64,
    pub c_slack: f64,
    pub div_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub model: ModelConfig,
    pub stepping: SteppingConfig,
    pub initial: InitialConfig,
    pub output: OutputConfig,
    pub checks: ChecksConfig,
}

/// A parsed configuration together with what the parser noticed on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedConfig {
    pub config: RunConfig,
    /// `section.key` names that were filled from defaults.
    pub defaulted: BTreeSet<String>,
    pub warnings: Vec<String>,
}

impl ParsedConfig {
    /// The effective configuration, with `# default` after defaulted keys.
    pub fn echo(&self) -> String {
        self.config.render(&self.defaulted)
    }
}

struct Entry {
    value: String,
    line: usize,
}

struct Reader {
    entries: BTreeMap<(String, String), Entry>,
    defaulted: BTreeSet<String>,
}

fn known_keys(section: &str) -> Option<&'static [&'static str]> {
    SCHEMA.iter().find(|(s, _)| *s == section).map(|(_, k)| *k)
}

fn nearest<'a>(target: &str, candidates: impl Iterator<Item = &'a str>) -> String {
    candidates
        .map(|c| (strsim::levenshtein(target, c), c))
        .min_by_key(|&(d, _)| d)
        .map(|(_, c)| c.to_string())
        .unwrap_or_default()
}

fn strip_comment(line: &str) -> &str {
    let mut prev_space = true;
    for (i, ch) in line.char_indices() {
        if (ch == '#' || ch == ';') && prev_space {
            return &line[..i];
        }
        prev_space = ch.is_whitespace();
    }
    line
}

impl Reader {
    fn tokenize(text: &str) -> Result<Self, ConfigError> {
        let mut entries: BTreeMap<(String, String), Entry> = BTreeMap::new();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = strip_comment(raw).trim();
            if body.is_empty() {
                continue;
            }
            if let Some(rest) = body.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::Syntax { line, message: format!("unterminated section header `{body}`") })?
                    .trim()
                    .to_string();
                if known_keys(&name).is_none() {
                    let near = nearest(&name, SCHEMA.iter().map(|(s, _)| *s));
                    return Err(ConfigError::UnknownSection { line, name, nearest: near });
                }
                section = Some(name);
                continue;
            }
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| ConfigError::Syntax { line, message: format!("expected `key = value`, got `{body}`") })?;
            let (key, value) = (key.trim().to_string(), value.trim().to_string());
            let sec = section
                .clone()
                .ok_or_else(|| ConfigError::Syntax { line, message: format!("`{key}` appears before any [section]") })?;
            let keys = known_keys(&sec).unwrap_or(&[]);
            if !keys.contains(&key.as_str()) {
                // a key that lives in another section is the likeliest mistake
                let elsewhere = SCHEMA
                    .iter()
                    .find(|(_, ks)| ks.contains(&key.as_str()))
                    .map(|(s, _)| format!("{key} (in [{s}])"));
                let near = elsewhere.unwrap_or_else(|| nearest(&key, keys.iter().copied()));
                return Err(ConfigError::UnknownKey { line, section: sec, key, nearest: near });
            }
            if let Some(prev) = entries.get(&(sec.clone(), key.clone())) {
                return Err(ConfigError::Duplicate { line, first: prev.line, section: sec, key });
            }
            entries.insert((sec, key), Entry { value, line });
        }
        Ok(Reader { entries, defaulted: BTreeSet::new() })
    }

    fn line_of(&self, sec: &str, key: &str) -> Option<usize> {
        self.entries.get(&(sec.to_string(), key.to_string())).map(|e| e.line)
    }

    fn get<T>(
        &mut self,
        sec: &str,
        key: &str,
        default: T,
        expected: &'static str,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<T, ConfigError> {
        match self.entries.get(&(sec.to_string(), key.to_string())) {
            None => {
                self.defaulted.insert(format!("{sec}.{key}"));
                Ok(default)
            }
            Some(e) => parse(&e.value).ok_or_else(|| ConfigError::Type {
                line: e.line,
                key: key.to_string(),
                expected,
                value: e.value.clone(),
            }),
        }
    }

    fn f64(&mut self, sec: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
        self.get(sec, key, default, "a finite number", parse_f64)
    }

    fn usize(&mut self, sec: &str, key: &str, default: usize) -> Result<usize, ConfigError> {
        self.get(sec, key, default, "a nonnegative integer", |s| s.parse().ok())
    }

    fn u64(&mut self, sec: &str, key: &str, default: u64) -> Result<u64, ConfigError> {
        self.get(sec, key, default, "a 64-bit unsigned integer", |s| s.parse().ok())
    }

    fn bool(&mut self, sec: &str, key: &str, default: bool) -> Result<bool, ConfigError> {
        self.get(sec, key, default, "true or false", |s| s.parse().ok())
    }

    fn string(&mut self, sec: &str, key: &str, default: &str) -> Result<String, ConfigError> {
        self.get(sec, key, default.to_string(), "a string", |s| Some(unquote(s).to_string()))
    }

    fn f64_list(&mut self, sec: &str, key: &str, default: Vec<f64>) -> Result<Vec<f64>, ConfigError> {
        self.get(sec, key, default, "a list of numbers", |s| list(s).map(parse_f64).collect())
    }

    fn choice<T>(
        &mut self,
        sec: &str,
        key: &str,
        default: T,
        names: &'static [&'static str],
        from: fn(&str) -> Option<T>,
    ) -> Result<T, ConfigError> {
        let expected: &'static str = Box::leak(format!("one of {}", names.join("|")).into_boxed_str());
        self.get(sec, key, default, expected, from)
    }
}

fn unquote(s: &str) -> &str {
    s.strip_prefix('"').and_then(|t| t.strip_suffix('"')).unwrap_or(s)
}

fn parse_f64(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn list(s: &str) -> impl Iterator<Item = &str> {
    s.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty())
}

fn parse_precond(s: &str) -> Option<Preconditioner> {
    match s {
        "none" => Some(Preconditioner::None),
        "diag" => Some(Preconditioner::Diag),
        "ssor" => Some(Preconditioner::Ssor),
        _ => None,
    }
}

fn precond_name(p: Preconditioner) -> &'static str {
    match p {
        Preconditioner::None => "none",
        Preconditioner::Diag => "diag",
        Preconditioner::Ssor => "ssor",
    }
}

fn parse_knots(s: &str) -> Option<Vec<(f64, f64)>> {
    list(s)
        .map(|t| {
            let (n, d) = t.split_once(':')?;
            Some((parse_f64(n)?, parse_f64(d)?))
        })
        .collect()
}

fn invalid(line: Option<usize>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { line, message: message.into() }
}

/// Broadcasts a one-element list to `dim` entries.
fn per_axis<T: Copy>(v: Vec<T>, dim: usize, key: &str, line: Option<usize>) -> Result<Vec<T>, ConfigError> {
    match v.len() {
        1 => Ok(vec![v[0]; dim]),
        n if n == dim => Ok(v),
        n => Err(invalid(line, format!("`{key}` needs 1 or {dim} entries, got {n}"))),
    }
}

/// Parses configuration text, applying defaults and semantic checks.
pub fn parse_config(text: &str) -> Result<ParsedConfig, ConfigError> {
    let mut rd = Reader::tokenize(text)?;
    let mut warnings = Vec::new();

    let dim = rd.usize("grid", "dim", 2)?;
    if dim != 2 && dim != 3 {
        return Err(invalid(rd.line_of("grid", "dim"), format!("dim must be 2 or 3, got {dim}")));
    }
    let cells = rd.get("grid", "n_cells", vec![64], "a list of cell counts", |s| list(s).map(|t| t.parse().ok()).collect())?;
    let n_cells = per_axis(cells, dim, "n_cells", rd.line_of("grid", "n_cells"))?;
    if let Some(&small) = n_cells.iter().find(|&&n| n < 4) {
        return Err(invalid(rd.line_of("grid", "n_cells"), format!("n_cells must be at least 4 per axis, got {small}")));
    }
    let lengths = rd.f64_list("grid", "lengths", vec![1.0])?;
    let lengths = per_axis(lengths, dim, "lengths", rd.line_of("grid", "lengths"))?;
    if lengths.iter().any(|&l| l <= 0.0) {
        return Err(invalid(rd.line_of("grid", "lengths"), "lengths must be positive"));
    }
    let grid = GridConfig { dim, n_cells, lengths };

    let m = rd.f64("model", "m", 2.0)?;
    if m <= 1.0 {
        return Err(invalid(rd.line_of("model", "m"), format!("m must exceed 1, got {m}")));
    }
    if m <= 7.0 / 6.0 {
        warnings.push(format!(
            "m = {m} is at or below 7/6: runs are allowed, but the boundedness theory does not cover this regime"
        ));
    }
    let diffusion = rd.choice("model", "diffusion", DiffusionKind::Prototype, DiffusionKind::NAMES, DiffusionKind::from_name)?;
    let diffusion_coeff = rd.f64("model", "diffusion_coeff", 1.0)?;
    let kappa_default = match diffusion {
        DiffusionKind::PowerPlusConstant => diffusion_coeff,
        _ => m,
    };
    let centre: Vec<f64> = grid.lengths.iter().map(|l| 0.5 * l).collect();
    let model = ModelConfig {
        m,
        kappa_d: rd.f64("model", "kappa_d", kappa_default)?,
        eps: rd.f64("model", "eps", 0.05)?,
        diffusion,
        diffusion_coeff,
        diffusion_offset: rd.f64("model", "diffusion_offset", 0.0)?,
        diffusion_table: rd.get("model", "diffusion_table", vec![], "a list of n:D knots", parse_knots)?,
        consumption: rd.choice("model", "consumption", ConsumptionKind::Linear, ConsumptionKind::NAMES, ConsumptionKind::from_name)?,
        consumption_rate: rd.f64("model", "consumption_rate", 1.0)?,
        consumption_exponent: rd.f64("model", "consumption_exponent", 1.0)?,
        sensitivity: rd.choice("model", "sensitivity", SensitivityKind::Scalar, SensitivityKind::NAMES, SensitivityKind::from_name)?,
        chi0: rd.f64("model", "chi0", 1.0)?,
        delta: rd.f64("model", "delta", 0.5)?,
        sensitivity_matrix: {
            let identity = (0..dim * dim).map(|i| if i % (dim + 1) == 0 { 1.0 } else { 0.0 }).collect();
            let v = rd.f64_list("model", "sensitivity_matrix", identity)?;
            if v.len() != dim * dim {
                return Err(invalid(
                    rd.line_of("model", "sensitivity_matrix"),
                    format!("sensitivity_matrix needs {} entries, got {}", dim * dim, v.len()),
                ));
            }
            v
        },
        potential: rd.choice("model", "potential", PotentialKind::Linear, PotentialKind::NAMES, PotentialKind::from_name)?,
        potential_gradient: {
            let v = rd.f64_list("model", "potential_gradient", vec![0.0; dim])?;
            per_axis(v, dim, "potential_gradient", rd.line_of("model", "potential_gradient"))?
        },
        potential_amplitude: rd.f64("model", "potential_amplitude", 0.0)?,
        potential_axis: rd.usize("model", "potential_axis", dim - 1)?,
        potential_wavenumber: rd.f64("model", "potential_wavenumber", 1.0)?,
        require_positive_consumption: rd.bool("model", "require_positive_consumption", false)?,
        p: rd.f64("model", "p", 2.0)?,
        q: rd.f64("model", "q", 2.0)?,
        r: rd.f64("model", "r", 2.0)?,
    };

    let defaults = StepControl::default();
    let solver = SolverSettings::default();
    let stepping = SteppingConfig {
        t_end: rd.f64("stepping", "t_end", defaults.t_end)?,
        cfl_adv: rd.f64("stepping", "cfl_adv", defaults.cfl_adv)?,
        cfl_diff: rd.f64("stepping", "cfl_diff", defaults.cfl_diff)?,
        dt_max: rd.f64("stepping", "dt_max", defaults.dt_max)?,
        dt_min: rd.f64("stepping", "dt_min", defaults.dt_min)?,
        cg_tol: rd.f64("stepping", "cg_tol", solver.cg_tol)?,
        cg_max_iter: rd.usize("stepping", "cg_max_iter", solver.cg_max_iter)?,
        precond: rd.get("stepping", "precond", solver.precond, "one of none|diag|ssor", parse_precond)?,
        proj_tol: rd.f64("stepping", "proj_tol", solver.proj_tol)?,
    };

    let scalar_init = |rd: &mut Reader, name: &str, generator: ScalarGenerator| -> Result<ScalarInit, ConfigError> {
        let key = |k: &str| format!("{name}_{k}");
        let center = rd.f64_list("initial", &key("center"), centre.clone())?;
        let center = per_axis(center, dim, &key("center"), rd.line_of("initial", &key("center")))?;
        Ok(ScalarInit {
            generator: rd.choice("initial", name, generator, ScalarGenerator::NAMES, ScalarGenerator::from_name)?,
            value: rd.f64("initial", &key("value"), 1.0)?,
            center,
            width: rd.f64("initial", &key("width"), 0.15)?,
            amplitude: rd.f64("initial", &key("amplitude"), 1.0)?,
            base: rd.f64("initial", &key("base"), 0.0)?,
            mass: rd.get("initial", &key("mass"), None, "a number or none", |s| {
                if s == "none" {
                    Some(None)
                } else {
                    parse_f64(s).map(Some)
                }
            })?,
            seed: rd.u64("initial", &key("seed"), 0)?,
            path: rd.string("initial", &key("path"), "")?,
        })
    };
    let n0 = scalar_init(&mut rd, "n0", ScalarGenerator::Constant)?;
    let c0 = scalar_init(&mut rd, "c0", ScalarGenerator::Constant)?;
    let u0 = VelocityInit {
        generator: rd.choice("initial", "u0", VelocityGenerator::Zero, VelocityGenerator::NAMES, VelocityGenerator::from_name)?,
        value: {
            let v = rd.f64_list("initial", "u0_value", vec![0.0; dim])?;
            per_axis(v, dim, "u0_value", rd.line_of("initial", "u0_value"))?
        },
        amplitude: rd.f64("initial", "u0_amplitude", 0.0)?,
        seed: rd.u64("initial", "u0_seed", 0)?,
        path: rd.string("initial", "u0_path", "")?,
    };
    for (name, init) in [("n0", &n0), ("c0", &c0)] {
        let line = rd.line_of("initial", name);
        if init.generator == ScalarGenerator::FromFile && init.path.is_empty() {
            return Err(invalid(line, format!("{name} = from-file needs {name}_path")));
        }
        if init.generator == ScalarGenerator::GaussianBump && !(init.width > 0.0) {
            return Err(invalid(rd.line_of("initial", &format!("{name}_width")), format!("{name}_width must be positive")));
        }
    }
    if u0.generator == VelocityGenerator::FromFile && u0.path.is_empty() {
        return Err(invalid(rd.line_of("initial", "u0"), "u0 = from-file needs u0_path"));
    }
    let initial = InitialConfig { n0, c0, u0 };

    let output = OutputConfig {
        directory: rd.string("output", "directory", "out")?,
        cadence: rd.f64("output", "cadence", 0.01)?,
        snapshot_cadence: rd.f64("output", "snapshot_cadence", 0.1)?,
        snapshot_format: rd.choice("output", "snapshot_format", SnapshotFormat::Csv, SnapshotFormat::NAMES, SnapshotFormat::from_name)?,
    };
    if !(output.cadence > 0.0) {
        return Err(invalid(rd.line_of("output", "cadence"), "cadence must be positive"));
    }
    if output.snapshot_cadence < 0.0 {
        return Err(invalid(rd.line_of("output", "snapshot_cadence"), "snapshot_cadence must be >= 0"));
    }

    let tol = InvariantTolerances::default();
    let checks = ChecksConfig {
        slack: rd.f64("checks", "slack", 0.05)?,
        transient_fraction: rd.f64("checks", "transient_fraction", 0.3)?,
        cumulative_bounds: rd.bool("checks", "cumulative_bounds", true)?,
        boundedness: rd.bool("checks", "boundedness", true)?,
        mass_rel: rd.f64("checks", "mass_rel", tol.mass_rel)?,
        c_slack: rd.f64("checks", "c_slack", tol.c_slack)?,
        div_max: rd.f64("checks", "div_max", tol.div_max)?,
    };
    if !(0.0..1.0).contains(&checks.transient_fraction) {
        return Err(invalid(rd.line_of("checks", "transient_fraction"), "transient_fraction must lie in [0, 1)"));
    }

    let config = RunConfig { grid, model, stepping, initial, output, checks };
    config.model_params().map_err(|e| invalid(None, e))?;
    config.step_control().validate().map_err(|e| invalid(None, e.to_string()))?;
    Ok(ParsedConfig { config, defaulted: rd.defaulted, warnings })
}

fn fmt_list<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

impl RunConfig {
    pub fn grid(&self) -> Result<Grid, FieldError> {
        Grid::new(&self.grid.n_cells, &self.grid.lengths)
    }

    fn lengths3(&self) -> [f64; 3] {
        let mut l = [1.0; 3];
        l[..self.grid.dim].copy_from_slice(&self.grid.lengths);
        l
    }

    pub fn model_params(&self) -> Result<ModelParams, String> {
        let mc = &self.model;
        let dim = self.grid.dim;
        let diffusion = match mc.diffusion {
            DiffusionKind::Prototype => DiffusionLaw::Prototype,
            DiffusionKind::PowerPlusConstant => {
                DiffusionLaw::PowerPlusConstant { coeff: mc.diffusion_coeff, offset: mc.diffusion_offset }
            }
            DiffusionKind::Table => DiffusionLaw::Table { knots: mc.diffusion_table.clone() },
        };
        let consumption = match mc.consumption {
            ConsumptionKind::Linear => ConsumptionLaw::Linear,
            ConsumptionKind::Saturating => ConsumptionLaw::Saturating,
            ConsumptionKind::Power => ConsumptionLaw::Power { rate: mc.consumption_rate, exponent: mc.consumption_exponent },
        };
        let sensitivity = match mc.sensitivity {
            SensitivityKind::Scalar => SensitivityLaw::Scalar { chi0: mc.chi0 },
            SensitivityKind::Rotation => SensitivityLaw::Rotation { chi0: mc.chi0, delta: mc.delta },
            SensitivityKind::Matrix => {
                let mut entries = [[0.0; 3]; 3];
                for (i, v) in mc.sensitivity_matrix.iter().enumerate() {
                    entries[i / dim][i % dim] = *v;
                }
                SensitivityLaw::Matrix { entries }
            }
        };
        let potential = match mc.potential {
            PotentialKind::Linear => {
                let mut gradient = [0.0; 3];
                gradient[..dim].copy_from_slice(&mc.potential_gradient);
                Potential::Linear { gradient }
            }
            PotentialKind::Sinusoidal => Potential::Sinusoidal {
                amplitude: mc.potential_amplitude,
                axis: mc.potential_axis,
                wavenumber: mc.potential_wavenumber,
            },
        };
        let params = ModelParams {
            dim,
            lengths: self.lengths3(),
            m: mc.m,
            kappa_d: mc.kappa_d,
            eps: mc.eps,
            diffusion,
            consumption,
            sensitivity,
            potential,
            require_positive_consumption: mc.require_positive_consumption,
        };
        params.validate().map_err(|e| e.to_string())?;
        Ok(params)
    }

    pub fn step_control(&self) -> StepControl {
        let s = &self.stepping;
        StepControl { cfl_adv: s.cfl_adv, cfl_diff: s.cfl_diff, dt_max: s.dt_max, dt_min: s.dt_min, t_end: s.t_end }
    }

    pub fn solver_settings(&self) -> SolverSettings {
        let s = &self.stepping;
        SolverSettings { cg_tol: s.cg_tol, cg_max_iter: s.cg_max_iter, precond: s.precond, proj_tol: s.proj_tol }
    }

    pub fn tolerances(&self) -> InvariantTolerances {
        InvariantTolerances { mass_rel: self.checks.mass_rel, c_slack: self.checks.c_slack, div_max: self.checks.div_max }
    }

    pub fn regime_query(&self) -> RegimeQuery {
        RegimeQuery { m: self.model.m, p: self.model.p, q: self.model.q, r: self.model.r }
    }

    /// Full text form; parses back to an equal configuration.
    pub fn serialize(&self) -> String {
        self.render(&BTreeSet::new())
    }

    fn values(&self) -> BTreeMap<(&'static str, &'static str), String> {
        let mut v = BTreeMap::new();
        let g = &self.grid;
        v.insert(("grid", "dim"), g.dim.to_string());
        v.insert(("grid", "n_cells"), fmt_list(&g.n_cells));
        v.insert(("grid", "lengths"), fmt_list(&g.lengths));
        let m = &self.model;
        for (k, s) in [
            ("m", m.m.to_string()),
            ("kappa_d", m.kappa_d.to_string()),
            ("eps", m.eps.to_string()),
            ("diffusion", m.diffusion.name().to_string()),
            ("diffusion_coeff", m.diffusion_coeff.to_string()),
            ("diffusion_offset", m.diffusion_offset.to_string()),
            ("diffusion_table", m.diffusion_table.iter().map(|(n, d)| format!("{n}:{d}")).collect::<Vec<_>>().join(" ")),
            ("consumption", m.consumption.name().to_string()),
            ("consumption_rate", m.consumption_rate.to_string()),
            ("consumption_exponent", m.consumption_exponent.to_string()),
            ("sensitivity", m.sensitivity.name().to_string()),
            ("chi0", m.chi0.to_string()),
            ("delta", m.delta.to_string()),
            ("sensitivity_matrix", fmt_list(&m.sensitivity_matrix)),
            ("potential", m.potential.name().to_string()),
            ("potential_gradient", fmt_list(&m.potential_gradient)),
            ("potential_amplitude", m.potential_amplitude.to_string()),
            ("potential_axis", m.potential_axis.to_string()),
            ("potential_wavenumber", m.potential_wavenumber.to_string()),
            ("require_positive_consumption", m.require_positive_consumption.to_string()),
            ("p", m.p.to_string()),
            ("q", m.q.to_string()),
            ("r", m.r.to_string()),
        ] {
            v.insert(("model", k), s);
        }
        let s = &self.stepping;
        for (k, val) in [
            ("t_end", s.t_end.to_string()),
            ("cfl_adv", s.cfl_adv.to_string()),
            ("cfl_diff", s.cfl_diff.to_string()),
            ("dt_max", s.dt_max.to_string()),
            ("dt_min", s.dt_min.to_string()),
            ("cg_tol", s.cg_tol.to_string()),
            ("cg_max_iter", s.cg_max_iter.to_string()),
            ("precond", precond_name(s.precond).to_string()),
            ("proj_tol", s.proj_tol.to_string()),
        ] {
            v.insert(("stepping", k), val);
        }
        let scalar_keys: [(&'static str, [&'static str; 8]); 2] = [
            ("n0", ["n0_value", "n0_center", "n0_width", "n0_amplitude", "n0_base", "n0_mass", "n0_seed", "n0_path"]),
            ("c0", ["c0_value", "c0_center", "c0_width", "c0_amplitude", "c0_base", "c0_mass", "c0_seed", "c0_path"]),
        ];
        for ((name, keys), init) in scalar_keys.into_iter().zip([&self.initial.n0, &self.initial.c0]) {
            v.insert(("initial", name), init.generator.name().to_string());
            let vals = [
                init.value.to_string(),
                fmt_list(&init.center),
                init.width.to_string(),
                init.amplitude.to_string(),
                init.base.to_string(),
                init.mass.map_or("none".to_string(), |x| x.to_string()),
                init.seed.to_string(),
                quote(&init.path),
            ];
            for (k, val) in keys.into_iter().zip(vals) {
                v.insert(("initial", k), val);
            }
        }
        let u = &self.initial.u0;
        v.insert(("initial", "u0"), u.generator.name().to_string());
        v.insert(("initial", "u0_value"), fmt_list(&u.value));
        v.insert(("initial", "u0_amplitude"), u.amplitude.to_string());
        v.insert(("initial", "u0_seed"), u.seed.to_string());
        v.insert(("initial", "u0_path"), quote(&u.path));
        let o = &self.output;
        v.insert(("output", "directory"), quote(&o.directory));
        v.insert(("output", "cadence"), o.cadence.to_string());
        v.insert(("output", "snapshot_cadence"), o.snapshot_cadence.to_string());
        v.insert(("output", "snapshot_format"), o.snapshot_format.name().to_string());
        let c = &self.checks;
        for (k, val) in [
            ("slack", c.slack.to_string()),
            ("transient_fraction", c.transient_fraction.to_string()),
            ("cumulative_bounds", c.cumulative_bounds.to_string()),
            ("boundedness", c.boundedness.to_string()),
            ("mass_rel", c.mass_rel.to_string()),
            ("c_slack", c.c_slack.to_string()),
            ("div_max", c.div_max.to_string()),
        ] {
            v.insert(("checks", k), val);
        }
        v
    }

    fn render(&self, defaulted: &BTreeSet<String>) -> String {
        let values = self.values();
        let mut out = String::new();
        for (i, (section, keys)) in SCHEMA.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            let _ = writeln!(out, "[{section}]");
            for key in keys.iter() {
                let value = &values[&(*section, *key)];
                let mark = if defaulted.contains(&format!("{section}.{key}")) { "  # default" } else { "" };
                let _ = writeln!(out, "{key} = {value}{mark}");
            }
        }
        out
    }
}

/// Strings are quoted so an empty value and values with `#` survive a round trip.
fn quote(s: &str) -> String {
    format!("\"{s}\"")
}
