//! Configuration ingestion, validation and unit normalization.
//!
//! Configs are TOML documents with five sections:
//!
//! ```toml
//! [market]
//! sigma = 100.0        # daily volatility, bp
//! gamma = 1e-3         # risk aversion, 1/(bp * M)
//!
//! [ladder]
//! sizes = [1, 2, 5, 10, 20, 50]          # M notional, strictly increasing
//! amplitudes = [2000, 800, 600, 400, 100, 50]   # 1/day
//! a = [-1, -1, -1, -1, -1, -1]
//! b = [7, 7, 7, 7, 7, 7]                 # 1/bp
//!
//! [execution]
//! psi = 0.2            # proportional cost, bp
//! eta = 1.5            # quadratic cost, bp * s / M
//! k = 0.005            # impact push, bp / M
//! beta = 1000.0        # impact decay, 1/day
//!
//! [solver]             # optional, defaults shown
//! q_max = 100.0
//! q_step = 1.0
//! x_max = 1.0
//! x_nodes = 101
//! horizon = 0.05
//! dt = "auto"          # or a number of days
//! stationarity_tol = 1e-4
//!
//! [simulation]         # optional, defaults shown
//! paths = 10000
//! shock = 50.0
//! horizon = "auto"     # 10 / omega, or a number of days
//! dt = 1e-5
//! seed = 20240117
//! output_points = 200
//! ```
//!
//! Canonical units everywhere downstream are bp, M notional and days. The
//! only field that needs converting is `eta`, which is entered per second.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};

/// Seconds per day, used to convert the quadratic hedge cost into day units.
pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Environment variable that overrides `[simulation].seed`.
pub const SEED_ENV: &str = "FXMM_SEED";

/// One validation problem, located by key path and (when known) source line.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub key: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{} (line {}): {}", self.key, line, self.message),
            None => write!(f, "{}: {}", self.key, self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config is not valid TOML: {0}")]
    Syntax(String),
    #[error("invalid config:\n{}", .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<ConfigIssue>),
}

impl ConfigError {
    pub fn issues(&self) -> &[ConfigIssue] {
        match self {
            ConfigError::Invalid(issues) => issues,
            _ => &[],
        }
    }
}

/// Time-step choice for the backward solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TimeStep {
    Auto,
    Fixed(f64),
}

/// Either an explicit horizon in days or "auto" (ten relaxation times).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Horizon {
    Auto,
    Days(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSection {
    pub q_max: f64,
    pub q_step: f64,
    pub x_max: f64,
    pub x_nodes: usize,
    pub horizon: f64,
    pub dt: TimeStep,
    pub stationarity_tol: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            q_max: 100.0,
            q_step: 1.0,
            x_max: 1.0,
            x_nodes: 101,
            horizon: 0.05,
            dt: TimeStep::Auto,
            stationarity_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSection {
    pub paths: usize,
    pub shock: f64,
    pub horizon: Horizon,
    pub dt: f64,
    pub seed: u64,
    pub output_points: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            paths: 10_000,
            shock: 50.0,
            horizon: Horizon::Auto,
            dt: 1e-5,
            seed: 20_240_117,
            output_points: 200,
        }
    }
}

/// Configuration exactly as entered, in input units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawConfig {
    pub ladder_notional: Vec<f64>,
    pub intensity_amplitudes: Vec<f64>,
    pub intensity_a: Vec<f64>,
    pub intensity_b: Vec<f64>,
    /// Daily volatility, bp.
    pub sigma_daily: f64,
    pub gamma: f64,
    pub psi: f64,
    /// Quadratic hedge cost, bp * s / M.
    pub eta: f64,
    pub k: f64,
    pub beta: f64,
    pub solver: SolverSection,
    pub simulation: SimulationSection,
}

/// One rung of the client size ladder with its intensity parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tier {
    /// Trade size, M.
    pub size: f64,
    /// Intensity amplitude, 1/day.
    pub lambda0: f64,
    pub a: f64,
    /// Intensity slope, 1/bp.
    pub b: f64,
}

/// Model parameters in canonical units {bp, M, day}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub tiers: Vec<Tier>,
    /// bp / sqrt(day)
    pub sigma: f64,
    /// 1 / (bp * M)
    pub gamma: f64,
    /// bp
    pub psi: f64,
    /// bp * day / M
    pub eta: f64,
    /// bp / M
    pub k: f64,
    /// 1 / day
    pub beta: f64,
    pub solver: SolverSection,
    pub simulation: SimulationSection,
}

impl ModelParams {
    pub fn n_tiers(&self) -> usize {
        self.tiers.len()
    }

    pub fn sizes(&self) -> Vec<f64> {
        self.tiers.iter().map(|t| t.size).collect()
    }

    /// Copy with the impact decay switched off (permanent-impact model).
    pub fn with_beta(&self, beta: f64) -> Self {
        Self {
            beta,
            ..self.clone()
        }
    }
}

/// The FX example used throughout the docs and tests: a six-rung ladder for a
/// liquid pair with sigmoid intensities and institutional execution costs.
pub fn fx_example() -> RawConfig {
    RawConfig {
        ladder_notional: vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0],
        intensity_amplitudes: vec![2000.0, 800.0, 600.0, 400.0, 100.0, 50.0],
        intensity_a: vec![-1.0; 6],
        intensity_b: vec![7.0; 6],
        sigma_daily: 100.0,
        gamma: 1e-3,
        psi: 0.2,
        eta: 1.5,
        k: 0.005,
        beta: 1000.0,
        solver: SolverSection::default(),
        simulation: SimulationSection::default(),
    }
}

/// Load and validate a config from its TOML source text.
pub fn load_config(source: &str) -> Result<RawConfig, ConfigError> {
    let table: Table = source
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
    let mut reader = Reader {
        source,
        issues: Vec::new(),
    };
    let raw = reader.read(&table);
    if reader.issues.is_empty() {
        Ok(raw)
    } else {
        Err(ConfigError::Invalid(reader.issues))
    }
}

pub fn load_config_file(path: &std::path::Path) -> Result<RawConfig, ConfigError> {
    let source = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_config(&source)
}

/// Apply `FXMM_SEED` if it is set. Only the seed may be overridden from the
/// environment.
pub fn apply_env_overrides(raw: &mut RawConfig) -> Result<(), ConfigError> {
    if let Ok(value) = std::env::var(SEED_ENV) {
        raw.simulation.seed = value.trim().parse().map_err(|_| {
            ConfigError::Invalid(vec![ConfigIssue {
                key: SEED_ENV.to_string(),
                line: None,
                message: format!("expected an unsigned integer, got {value:?}"),
            }])
        })?;
    }
    Ok(())
}

/// Convert a validated config into canonical units.
pub fn normalize(raw: &RawConfig) -> ModelParams {
    let tiers = raw
        .ladder_notional
        .iter()
        .zip(&raw.intensity_amplitudes)
        .zip(raw.intensity_a.iter().zip(&raw.intensity_b))
        .map(|((&size, &lambda0), (&a, &b))| Tier { size, lambda0, a, b })
        .collect();
    ModelParams {
        tiers,
        sigma: raw.sigma_daily,
        gamma: raw.gamma,
        psi: raw.psi,
        eta: raw.eta / SECONDS_PER_DAY,
        k: raw.k,
        beta: raw.beta,
        solver: raw.solver.clone(),
        simulation: raw.simulation.clone(),
    }
}

/// Inverse of [`normalize`].
pub fn denormalize(params: &ModelParams) -> RawConfig {
    RawConfig {
        ladder_notional: params.tiers.iter().map(|t| t.size).collect(),
        intensity_amplitudes: params.tiers.iter().map(|t| t.lambda0).collect(),
        intensity_a: params.tiers.iter().map(|t| t.a).collect(),
        intensity_b: params.tiers.iter().map(|t| t.b).collect(),
        sigma_daily: params.sigma,
        gamma: params.gamma,
        psi: params.psi,
        eta: params.eta * SECONDS_PER_DAY,
        k: params.k,
        beta: params.beta,
        solver: params.solver.clone(),
        simulation: params.simulation.clone(),
    }
}

/// Check every invariant of a `RawConfig` that was built in code rather than
/// parsed.
pub fn validate(raw: &RawConfig) -> Result<(), ConfigError> {
    let mut reader = Reader {
        source: "",
        issues: Vec::new(),
    };
    reader.check_semantics(raw);
    if reader.issues.is_empty() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(reader.issues))
    }
}

struct Reader<'a> {
    source: &'a str,
    issues: Vec<ConfigIssue>,
}

impl<'a> Reader<'a> {
    fn push(&mut self, key: &str, message: impl Into<String>) {
        let line = find_key_line(self.source, key);
        self.issues.push(ConfigIssue {
            key: key.to_string(),
            line,
            message: message.into(),
        });
    }

    fn section<'t>(&mut self, table: &'t Table, name: &str, required: bool) -> Option<&'t Table> {
        match table.get(name) {
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                self.push(name, "expected a table section");
                None
            }
            None => {
                if required {
                    self.push(name, "missing section");
                }
                None
            }
        }
    }

    fn number(&mut self, section: Option<&Table>, sname: &str, key: &str) -> Option<f64> {
        let path = format!("{sname}.{key}");
        let section = section?;
        match section.get(key) {
            Some(v) => match as_f64(v) {
                Some(x) => Some(x),
                None => {
                    self.push(&path, format!("expected a number, got {}", v.type_str()));
                    None
                }
            },
            None => {
                self.push(&path, "missing key");
                None
            }
        }
    }

    fn optional_number(&mut self, section: Option<&Table>, sname: &str, key: &str, default: f64) -> f64 {
        match section.and_then(|s| s.get(key)) {
            None => default,
            Some(v) => match as_f64(v) {
                Some(x) => x,
                None => {
                    self.push(&format!("{sname}.{key}"), format!("expected a number, got {}", v.type_str()));
                    default
                }
            },
        }
    }

    fn optional_count(&mut self, section: Option<&Table>, sname: &str, key: &str, default: u64) -> u64 {
        match section.and_then(|s| s.get(key)) {
            None => default,
            Some(Value::Integer(i)) if *i >= 0 => *i as u64,
            Some(v) => {
                self.push(
                    &format!("{sname}.{key}"),
                    format!("expected a non-negative integer, got {}", v.type_str()),
                );
                default
            }
        }
    }

    fn optional_auto(&mut self, section: Option<&Table>, sname: &str, key: &str) -> Option<Option<f64>> {
        match section.and_then(|s| s.get(key)) {
            None => None,
            Some(Value::String(s)) if s == "auto" => Some(None),
            Some(v) => match as_f64(v) {
                Some(x) => Some(Some(x)),
                None => {
                    self.push(&format!("{sname}.{key}"), "expected a number or \"auto\"");
                    None
                }
            },
        }
    }

    fn list(&mut self, section: Option<&Table>, sname: &str, key: &str) -> Option<Vec<f64>> {
        let path = format!("{sname}.{key}");
        let section = section?;
        match section.get(key) {
            Some(Value::Array(items)) => {
                let mut out = Vec::with_capacity(items.len());
                for (i, item) in items.iter().enumerate() {
                    match as_f64(item) {
                        Some(x) => out.push(x),
                        None => {
                            self.push(&format!("{path}[{i}]"), format!("expected a number, got {}", item.type_str()));
                            return None;
                        }
                    }
                }
                Some(out)
            }
            Some(v) => {
                self.push(&path, format!("expected a list of numbers, got {}", v.type_str()));
                None
            }
            None => {
                self.push(&path, "missing key");
                None
            }
        }
    }

    fn read(&mut self, table: &Table) -> RawConfig {
        let market = self.section(table, "market", true);
        let ladder = self.section(table, "ladder", true);
        let execution = self.section(table, "execution", true);
        let solver = self.section(table, "solver", false);
        let simulation = self.section(table, "simulation", false);

        let sigma = self.number(market, "market", "sigma");
        let gamma = self.number(market, "market", "gamma");

        let sizes = self.list(ladder, "ladder", "sizes");
        let amplitudes = self.list(ladder, "ladder", "amplitudes");
        let a = self.list(ladder, "ladder", "a");
        let b = self.list(ladder, "ladder", "b");

        let psi = self.number(execution, "execution", "psi");
        let eta = self.number(execution, "execution", "eta");
        let k = self.number(execution, "execution", "k");
        let beta = self.number(execution, "execution", "beta");

        let sd = SolverSection::default();
        let solver_section = SolverSection {
            q_max: self.optional_number(solver, "solver", "q_max", sd.q_max),
            q_step: self.optional_number(solver, "solver", "q_step", sd.q_step),
            x_max: self.optional_number(solver, "solver", "x_max", sd.x_max),
            x_nodes: self.optional_count(solver, "solver", "x_nodes", sd.x_nodes as u64) as usize,
            horizon: self.optional_number(solver, "solver", "horizon", sd.horizon),
            dt: match self.optional_auto(solver, "solver", "dt") {
                Some(Some(dt)) => TimeStep::Fixed(dt),
                _ => TimeStep::Auto,
            },
            stationarity_tol: self.optional_number(solver, "solver", "stationarity_tol", sd.stationarity_tol),
        };

        let md = SimulationSection::default();
        let simulation_section = SimulationSection {
            paths: self.optional_count(simulation, "simulation", "paths", md.paths as u64) as usize,
            shock: self.optional_number(simulation, "simulation", "shock", md.shock),
            horizon: match self.optional_auto(simulation, "simulation", "horizon") {
                Some(Some(h)) => Horizon::Days(h),
                _ => Horizon::Auto,
            },
            dt: self.optional_number(simulation, "simulation", "dt", md.dt),
            seed: self.optional_count(simulation, "simulation", "seed", md.seed),
            output_points: self.optional_count(simulation, "simulation", "output_points", md.output_points as u64)
                as usize,
        };

        let raw = RawConfig {
            ladder_notional: sizes.unwrap_or_default(),
            intensity_amplitudes: amplitudes.unwrap_or_default(),
            intensity_a: a.unwrap_or_default(),
            intensity_b: b.unwrap_or_default(),
            sigma_daily: sigma.unwrap_or(f64::NAN),
            gamma: gamma.unwrap_or(f64::NAN),
            psi: psi.unwrap_or(f64::NAN),
            eta: eta.unwrap_or(f64::NAN),
            k: k.unwrap_or(f64::NAN),
            beta: beta.unwrap_or(f64::NAN),
            solver: solver_section,
            simulation: simulation_section,
        };
        // Semantic checks only make sense once every key parsed.
        if self.issues.is_empty() {
            self.check_semantics(&raw);
        }
        raw
    }

    fn check_semantics(&mut self, raw: &RawConfig) {
        let n = raw.ladder_notional.len();
        if n == 0 {
            self.push("ladder.sizes", "N>=1 violated: ladder is empty");
        }
        if raw.ladder_notional.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            self.push("ladder.sizes", "tier sizes must be positive");
        }
        if raw.ladder_notional.windows(2).any(|w| !(w[1] > w[0])) {
            self.push("ladder.sizes", "strictly increasing violated");
        }
        for (key, list) in [
            ("ladder.amplitudes", &raw.intensity_amplitudes),
            ("ladder.a", &raw.intensity_a),
            ("ladder.b", &raw.intensity_b),
        ] {
            if list.len() != n {
                self.push(key, format!("length mismatch: {} entries but ladder has {n}", list.len()));
            }
        }
        if raw.intensity_amplitudes.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
            self.push("ladder.amplitudes", "amplitudes must be nonnegative");
        }
        if raw.intensity_a.iter().any(|a| !a.is_finite()) {
            self.push("ladder.a", "offsets must be finite");
        }
        if raw.intensity_b.iter().any(|&b| !(b > 0.0) || !b.is_finite()) {
            self.push("ladder.b", "slopes must be positive");
        }
        for (key, value) in [
            ("market.sigma", raw.sigma_daily),
            ("market.gamma", raw.gamma),
            ("execution.psi", raw.psi),
            ("execution.eta", raw.eta),
            ("execution.k", raw.k),
            ("execution.beta", raw.beta),
        ] {
            if !(value >= 0.0) || !value.is_finite() {
                self.push(key, "must be a finite nonnegative number");
            }
        }

        let s = &raw.solver;
        if !(s.q_step > 0.0) {
            self.push("solver.q_step", "must be positive");
        } else {
            for (i, &d) in raw.ladder_notional.iter().enumerate() {
                let ratio = d / s.q_step;
                if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
                    self.push(
                        &format!("ladder.sizes[{i}]"),
                        format!("tier {d} is not an integer multiple of solver.q_step = {}", s.q_step),
                    );
                }
            }
            let ratio = s.q_max / s.q_step;
            if !(s.q_max > 0.0) || (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
                self.push("solver.q_max", "must be a positive integer multiple of solver.q_step");
            }
        }
        if !(s.x_max > 0.0) {
            self.push("solver.x_max", "must be positive");
        }
        if s.x_nodes % 2 == 0 || s.x_nodes < 3 {
            self.push("solver.x_nodes", "must be odd and at least 3 so x = 0 is a node");
        }
        if !(s.horizon > 0.0) {
            self.push("solver.horizon", "must be positive");
        }
        if let TimeStep::Fixed(dt) = s.dt {
            if !(dt > 0.0) {
                self.push("solver.dt", "must be positive or \"auto\"");
            }
        }
        if !(s.stationarity_tol > 0.0) {
            self.push("solver.stationarity_tol", "must be positive");
        }

        let m = &raw.simulation;
        if !(m.dt > 0.0) {
            self.push("simulation.dt", "must be positive");
        }
        if let Horizon::Days(h) = m.horizon {
            if !(h > 0.0) {
                self.push("simulation.horizon", "must be positive or \"auto\"");
            }
        }
        if !m.shock.is_finite() {
            self.push("simulation.shock", "must be finite");
        }
        if m.output_points == 0 {
            self.push("simulation.output_points", "must be at least 1");
        }
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(x) => Some(*x),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

/// Best-effort 1-based line of `section.key` in the source text.
fn find_key_line(source: &str, path: &str) -> Option<usize> {
    let base = path.split('[').next().unwrap_or(path);
    let (section, key) = match base.split_once('.') {
        Some((s, k)) => (s, Some(k)),
        None => (base, None),
    };
    let mut current = "";
    for (idx, line) in source.lines().enumerate() {
        let trimmed = line.trim();
        if let Some(header) = trimmed.strip_prefix('[').and_then(|h| h.strip_suffix(']')) {
            current = header.trim();
            if key.is_none() && current == section {
                return Some(idx + 1);
            }
            continue;
        }
        if let Some(key) = key {
            if current == section {
                if let Some((lhs, _)) = trimmed.split_once('=') {
                    if lhs.trim() == key {
                        return Some(idx + 1);
                    }
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    const PAPER: &str = r#"
[market]
sigma = 100.0
gamma = 1e-3

[ladder]
sizes = [1, 2, 5, 10, 20, 50]
amplitudes = [2000, 800, 600, 400, 100, 50]
a = [-1, -1, -1, -1, -1, -1]
b = [7, 7, 7, 7, 7, 7]

[execution]
psi = 0.2
eta = 1.5
k = 0.005
beta = 1000.0
"#;

    #[test]
    fn paper_ladder_loads() {
        let raw = load_config(PAPER).unwrap();
        assert_eq!(raw.ladder_notional, vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0]);
        assert_eq!(raw.intensity_amplitudes.len(), 6);
        assert_eq!(raw.solver, SolverSection::default());
    }

    #[test]
    fn example_matches_document() {
        assert_eq!(load_config(PAPER).unwrap(), fx_example());
        validate(&fx_example()).unwrap();
    }

    #[test]
    fn eta_converts_to_days() {
        let p = normalize(&load_config(PAPER).unwrap());
        assert!((p.eta - 1.5 / 86_400.0).abs() < 1e-18);
        assert!((p.eta - 1.7361e-5).abs() < 1e-9);
        assert_eq!(p.beta, 1000.0);
        assert_eq!(p.sigma, 100.0);
    }

    #[test]
    fn empty_ladder_rejected() {
        let src = PAPER
            .replace("sizes = [1, 2, 5, 10, 20, 50]", "sizes = []")
            .replace("amplitudes = [2000, 800, 600, 400, 100, 50]", "amplitudes = []")
            .replace("a = [-1, -1, -1, -1, -1, -1]", "a = []")
            .replace("b = [7, 7, 7, 7, 7, 7]", "b = []");
        let err = load_config(&src).unwrap_err();
        assert!(err.issues().iter().any(|i| i.message.contains("N>=1 violated")), "{err}");
    }

    #[test]
    fn duplicate_tier_rejected() {
        let src = PAPER
            .replace("sizes = [1, 2, 5, 10, 20, 50]", "sizes = [1, 1, 2]")
            .replace("amplitudes = [2000, 800, 600, 400, 100, 50]", "amplitudes = [1, 1, 1]")
            .replace("a = [-1, -1, -1, -1, -1, -1]", "a = [-1, -1, -1]")
            .replace("b = [7, 7, 7, 7, 7, 7]", "b = [7, 7, 7]");
        let err = load_config(&src).unwrap_err();
        let issue = err
            .issues()
            .iter()
            .find(|i| i.message.contains("strictly increasing violated"))
            .unwrap();
        assert_eq!(issue.key, "ladder.sizes");
        assert_eq!(issue.line, Some(7));
    }

    #[test]
    fn errors_are_collected() {
        let src = PAPER
            .replace("gamma = 1e-3", "")
            .replace("psi = 0.2", "psi = \"cheap\"")
            .replace("b = [7, 7, 7, 7, 7, 7]", "b = [7, 7]");
        let err = load_config(&src).unwrap_err();
        let keys: Vec<_> = err.issues().iter().map(|i| i.key.as_str()).collect();
        assert!(keys.contains(&"market.gamma"));
        assert!(keys.contains(&"execution.psi"));
        let psi = err.issues().iter().find(|i| i.key == "execution.psi").unwrap();
        assert!(psi.message.contains("expected a number"));
        assert!(psi.line.is_some());
    }

    #[test]
    fn length_mismatch_rejected() {
        let src = PAPER.replace("b = [7, 7, 7, 7, 7, 7]", "b = [7, 7]");
        let err = load_config(&src).unwrap_err();
        assert!(err.issues().iter().any(|i| i.key == "ladder.b" && i.message.contains("length mismatch")));
    }

    #[test]
    fn misaligned_tier_rejected() {
        let src = format!("{PAPER}\n[solver]\nq_step = 3.0\nq_max = 99.0\n");
        let err = load_config(&src).unwrap_err();
        assert!(err.issues().iter().any(|i| i.key.starts_with("ladder.sizes[")));
    }

    #[test]
    fn solver_and_simulation_sections_parse() {
        let src = format!(
            "{PAPER}\n[solver]\ndt = 1e-6\nx_nodes = 21\n[simulation]\nhorizon = 0.01\npaths = 7\nseed = 3\n"
        );
        let raw = load_config(&src).unwrap();
        assert_eq!(raw.solver.dt, TimeStep::Fixed(1e-6));
        assert_eq!(raw.solver.x_nodes, 21);
        assert_eq!(raw.simulation.horizon, Horizon::Days(0.01));
        assert_eq!(raw.simulation.paths, 7);
        assert_eq!(raw.simulation.seed, 3);
    }

    #[test]
    fn even_x_nodes_rejected() {
        let src = format!("{PAPER}\n[solver]\nx_nodes = 20\n");
        assert!(load_config(&src).is_err());
    }

    #[test]
    fn syntax_error_reports_line() {
        let err = load_config("[market]\nsigma = = 1\n").unwrap_err();
        match err {
            ConfigError::Syntax(msg) => assert!(msg.contains('2'), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
