//! Named experiments: TOML configuration, the case catalog, runners and
//! the artifacts they write.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::bridge::{compare_representation, verify_control_measure, verify_measure_correspondence, Allowance, BridgeMethod};
use crate::engine::{BackwardEngine, LatticeEngine, RegressionEngine};
use crate::error::{Error, Result};
use crate::forward::{accumulate_functional, build_lattice, simulate_paths, LatticeBox, MarkovLattice};
use crate::gbsde::{check_comparison, maximal_solution, minimal_solution, solve_gbsde, ScheduleOptions};
use crate::grid::{TimeGrid, WeightSpec};
use crate::model::{DiffusionSpec, DriverSpec, MeasureData, ScalarFn, TerminalFn};
use crate::pde::{
    check_pde_lewy_stampacchia, homographic_table, recover_reaction_density, restrict, solve_obstacle_homographic,
    solve_obstacle_projected, solve_parabolic_measure, weighted_l2, write_table_csv, SpaceTimeGrid,
};
use crate::plot::{heat_map, line_plot, Axes, Series};
use crate::rbsde::{
    check_lewy_stampacchia, check_skorokhod, control_density, decompose_obstacle, homographic_sequence, obstacle_increments,
    solve_rbsde_homographic, solve_rbsde_penalization, solve_rbsde_penalized, solve_rbsde_projected, ObstacleIncrements,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[default]
    Constant,
    /// Constant `a`, drift `b_i + slope·x_i`.
    Affine,
    /// `a(x) = a₀(1 + ε sin 2πx)` in 1D, `b = 0`.
    Trigonometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverKind {
    #[default]
    Zero,
    Discount,
    SqrtCapped,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalKind {
    #[default]
    Zero,
    Constant,
    Gaussian,
    Put,
    Cosine,
    Bump,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleKind {
    #[default]
    None,
    Linear,
    Put,
    Bump,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    #[default]
    Zero,
    Clock,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    #[default]
    Lattice,
    Lsmc,
    Pde,
    Homographic,
    Penalization,
    Projected,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Probe {
    pub t: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub horizon: f64,
    /// Lattice time steps.
    pub n_steps: usize,
    /// Monte Carlo path time steps; 0 reuses `n_steps`.
    pub mc_n_steps: usize,
    pub dx: f64,
    pub half_width: f64,
    pub x0: Vec<f64>,
    /// PDE time steps and spacing.
    pub pde_n_steps: usize,
    pub pde_dx: f64,
    pub probes: Vec<Probe>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoefficientConfig {
    pub family: Family,
    /// Row-major `a`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub amplitude: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriverConfig {
    pub kind: DriverKind,
    pub rate: f64,
    pub z_coef: f64,
    /// Constant `g` multiplying `dR` when a measure is present.
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TerminalConfig {
    pub kind: TerminalKind,
    pub level: f64,
    pub strike: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObstacleConfig {
    pub kind: ObstacleKind,
    pub c: f64,
    pub strike: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureConfig {
    pub kind: MeasureKind,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    pub n_list: Vec<f64>,
    pub schedule: Vec<u32>,
    pub n_paths: usize,
    pub basis_order: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub case: String,
    pub seed: u64,
    pub out: String,
    pub grid: GridConfig,
    pub coefficients: CoefficientConfig,
    pub driver: DriverConfig,
    pub terminal: TerminalConfig,
    pub obstacle: ObstacleConfig,
    pub measure: MeasureConfig,
    pub scheme: SchemeConfig,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn toml_error(text: &str, e: toml::de::Error) -> Error {
    Error::Config { line: e.span().map(|s| line_of(text, s.start)), message: e.message().to_string() }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Sets a dotted key such as `grid.n_steps` to a value parsed as TOML.
pub fn set_override(table: &mut toml::Table, key: &str, raw: &str) -> Result<()> {
    let value: toml::Value = format!("v = {raw}")
        .parse::<toml::Table>()
        .map(|mut t| t.remove("v").unwrap())
        .or_else(|_| Ok::<_, Error>(toml::Value::String(raw.to_string())))?;
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config { line: None, message: format!("{p} is not a table") })?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses a configuration and fills every field the file leaves out from
/// the named case's defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_with(text, &[])
}

pub fn parse_config_with(text: &str, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    // shape check with line numbers
    let shaped: ExperimentConfig = toml::from_str(text).map_err(|e| toml_error(text, e))?;
    if shaped.schema_version != SCHEMA_VERSION {
        let line = text.lines().position(|l| l.trim_start().starts_with("schema_version")).map(|i| i + 1);
        return Err(Error::Config {
            line,
            message: format!("schema_version must be {SCHEMA_VERSION}, got {}", shaped.schema_version),
        });
    }
    let base = default_config(&shaped.case).ok_or_else(|| {
        let line = text.lines().position(|l| l.trim_start().starts_with("case")).map(|i| i + 1);
        Error::Config { line, message: format!("unknown case '{}'", shaped.case) }
    })?;
    let mut table = toml::Table::try_from(&base).map_err(|e| Error::Config { line: None, message: e.to_string() })?;
    let user: toml::Table = text.parse().map_err(|e| toml_error(text, e))?;
    merge(&mut table, user);
    for (k, v) in overrides {
        set_override(&mut table, k, v)?;
    }
    let merged = toml::to_string(&table).map_err(|e| Error::Config { line: None, message: e.to_string() })?;
    let cfg: ExperimentConfig =
        toml::from_str(&merged).map_err(|e| Error::Config { line: None, message: format!("after overrides: {}", e.message()) })?;
    validate(&cfg)?;
    Ok(cfg)
}

/// `cfg` with one dotted key replaced, revalidated.
pub fn with_override(cfg: &ExperimentConfig, key: &str, raw: &str) -> Result<ExperimentConfig> {
    let mut table = toml::Table::try_from(cfg).map_err(|e| cfg_err(e.to_string()))?;
    set_override(&mut table, key, raw)?;
    let text = toml::to_string(&table).map_err(|e| cfg_err(e.to_string()))?;
    let out: ExperimentConfig = toml::from_str(&text).map_err(|e| cfg_err(format!("{key}: {}", e.message())))?;
    validate(&out)?;
    Ok(out)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

fn cfg_err(message: impl Into<String>) -> Error {
    Error::Config { line: None, message: message.into() }
}

/// Checks that do not need any solve.
pub fn validate(cfg: &ExperimentConfig) -> Result<()> {
    let g = &cfg.grid;
    let d = g.x0.len();
    if d == 0 || d > 2 {
        return Err(cfg_err("grid.x0 must have one or two coordinates"));
    }
    if !(g.horizon > 0.0) || g.n_steps == 0 {
        return Err(cfg_err("grid.horizon and grid.n_steps must be positive"));
    }
    if !(g.dx > 0.0) || !(g.half_width > 0.0) {
        return Err(cfg_err("grid.dx and grid.half_width must be positive"));
    }
    let c = &cfg.coefficients;
    if c.family != Family::Trigonometric && (c.a.len() != d * d || c.b.len() != d) {
        return Err(cfg_err(format!("coefficients.a needs {} and coefficients.b {} entries", d * d, d)));
    }
    if c.family == Family::Trigonometric && (d != 1 || c.a.len() != 1 || !(c.amplitude.abs() < 1.0)) {
        return Err(cfg_err("trigonometric coefficients are 1D with |amplitude| < 1"));
    }
    for p in &g.probes {
        if p.x.len() != d || !(p.t >= 0.0 && p.t < g.horizon) {
            return Err(cfg_err(format!("probe {p:?} does not match the grid")));
        }
    }
    if uses_lattice(&cfg.case) {
        let a_max = match c.family {
            Family::Constant | Family::Affine => (0..d).map(|i| c.a[i * d + i]).fold(0.0, f64::max),
            Family::Trigonometric => c.a[0] * (1.0 + c.amplitude.abs()),
        };
        let ratio = a_max * (g.horizon / g.n_steps as f64) / (g.dx * g.dx);
        if ratio > 1.0 + 1e-12 {
            return Err(Error::Cfl { ratio, required_steps: (g.n_steps as f64 * ratio).ceil() as usize });
        }
    }
    let s = &cfg.scheme;
    if s.n_list.windows(2).any(|w| w[1] <= w[0]) || s.n_list.iter().any(|n| *n <= 0.0) {
        return Err(cfg_err("scheme.n_list must be strictly increasing and positive"));
    }
    if s.schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(cfg_err("scheme.schedule must be strictly increasing"));
    }
    Ok(())
}

fn uses_lattice(case: &str) -> bool {
    !matches!(case, "measure_correspondence" | "lewy_stampacchia_pde" | "pde_homographic" | "reaction_density")
}

pub struct CaseInfo {
    pub name: &'static str,
    pub description: &'static str,
    pub claims: &'static str,
}

pub const CATALOG: &[CaseInfo] = &[
    CaseInfo {
        name: "heat_baseline",
        description: "heat equation with Gaussian terminal data, PDE against Monte Carlo",
        claims: "Feynman–Kac representation u(s,x) = Y_s, Z = σᵀ∇u",
    },
    CaseInfo {
        name: "discounting",
        description: "f(y) = −r y with unit terminal value on lattice, LSMC and PDE",
        claims: "well-posedness, closed-form value e^{−r(T−s)}",
    },
    CaseInfo {
        name: "clock_measure",
        description: "g ≡ 1 against the clock measure q ≡ 1",
        claims: "generalized BSDE with dR term, Y_t = T − t",
    },
    CaseInfo {
        name: "measure_correspondence",
        description: "E ∫ ξ dR along paths against ∫∫ ξ p q",
        claims: "measure ↔ additive functional correspondence",
    },
    CaseInfo {
        name: "minimal_maximal",
        description: "f(y) = √(y⁺) ∧ 1 with zero terminal value",
        claims: "minimal and maximal solutions under continuous coefficients",
    },
    CaseInfo {
        name: "comparison_suite",
        description: "randomized ordered Lipschitz driver pairs",
        claims: "comparison theorem Y¹ ≤ Y²",
    },
    CaseInfo {
        name: "deterministic_barrier",
        description: "barrier S_t = c(T − t), homographic iterates",
        claims: "homographic approximation Y^n ≥ S, K^n → K",
    },
    CaseInfo {
        name: "american_put_style",
        description: "put barrier (κ − x)⁺ with discounting: projected, penalized, homographic, PDE",
        claims: "reflected solution, Skorokhod condition, u = Y for the obstacle problem",
    },
    CaseInfo {
        name: "homographic_sweep",
        description: "convergence table of homographic iterates over n_list",
        claims: "monotone convergence of Y^n, Z^n, K^n",
    },
    CaseInfo {
        name: "lewy_stampacchia_bsde",
        description: "0 ≤ ΔK ≤ 1{contact} ΔR over the barrier corpus",
        claims: "Lewy–Stampacchia inequality for reflected BSDEs",
    },
    CaseInfo {
        name: "lewy_stampacchia_pde",
        description: "two-sided Lewy–Stampacchia bound for the PDE obstacle problem",
        claims: "Lewy–Stampacchia inequality for the obstacle problem with symmetric L",
    },
    CaseInfo {
        name: "pde_homographic",
        description: "PDE homographic sequence u_n against the LCP solution",
        claims: "u_n ↓ u, μ_n ⇒ μ",
    },
    CaseInfo {
        name: "reaction_density",
        description: "α̂ = r / Φ⁻ on the barrier corpus",
        claims: "reaction density r = α Φ⁻ with 0 ≤ α ≤ 1 supported on contact",
    },
];

/// Case names whose name or description contains `filter` (case-insensitive).
pub fn list_cases(filter: Option<&str>) -> Vec<&'static CaseInfo> {
    let f = filter.map(str::to_lowercase);
    CATALOG
        .iter()
        .filter(|c| f.as_ref().is_none_or(|f| c.name.contains(f.as_str()) || c.description.to_lowercase().contains(f.as_str())))
        .collect()
}

fn base(case: &str) -> ExperimentConfig {
    ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        case: case.into(),
        seed: 20_240_601,
        out: format!("out/{case}"),
        grid: GridConfig {
            horizon: 1.0,
            n_steps: 100,
            mc_n_steps: 0,
            dx: 0.05,
            half_width: 6.0,
            x0: vec![0.0],
            pde_n_steps: 200,
            pde_dx: 0.02,
            probes: Vec::new(),
        },
        coefficients: CoefficientConfig { family: Family::Constant, a: vec![1.0], b: vec![0.0], amplitude: 0.0, slope: 0.0 },
        driver: DriverConfig { kind: DriverKind::Zero, rate: 0.0, z_coef: 0.0, g: 1.0 },
        terminal: TerminalConfig { kind: TerminalKind::Zero, level: 1.0, strike: 1.0 },
        obstacle: ObstacleConfig { kind: ObstacleKind::None, c: 1.0, strike: 1.0 },
        measure: MeasureConfig { kind: MeasureKind::Zero, level: 1.0 },
        scheme: SchemeConfig {
            kind: SchemeKind::Lattice,
            n_list: vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0],
            schedule: vec![1, 2, 4, 8, 16, 32],
            n_paths: 20_000,
            basis_order: 4,
            trials: 50,
        },
    }
}

fn put_case(case: &str) -> ExperimentConfig {
    let mut c = base(case);
    c.grid = GridConfig {
        horizon: 1.0,
        n_steps: 1000,
        mc_n_steps: 0,
        dx: 0.03,
        half_width: 1.8,
        x0: vec![1.0],
        pde_n_steps: 200,
        pde_dx: 0.02,
        probes: vec![Probe { t: 0.0, x: vec![1.0] }, Probe { t: 0.0, x: vec![0.8] }, Probe { t: 0.5, x: vec![1.1] }],
    };
    c.coefficients.a = vec![0.09];
    c.driver = DriverConfig { kind: DriverKind::Discount, rate: 0.1, z_coef: 0.0, g: 0.0 };
    c.terminal = TerminalConfig { kind: TerminalKind::Put, level: 1.0, strike: 1.0 };
    c.obstacle = ObstacleConfig { kind: ObstacleKind::Put, c: 1.0, strike: 1.0 };
    c
}

/// The built-in defaults for `case`, or `None` when the case is unknown.
pub fn default_config(case: &str) -> Option<ExperimentConfig> {
    let mut c = base(case);
    match case {
        "heat_baseline" => {
            c.grid.horizon = 0.5;
            c.grid.n_steps = 500;
            c.grid.pde_n_steps = 500;
            c.grid.pde_dx = 0.02;
            c.grid.half_width = 8.0;
            c.grid.probes = [(0.0, 0.0), (0.0, 0.5), (0.1, -0.5), (0.25, 1.0), (0.25, 0.0)]
                .iter()
                .map(|(t, x)| Probe { t: *t, x: vec![*x] })
                .collect();
            c.terminal.kind = TerminalKind::Gaussian;
            c.scheme.kind = SchemeKind::Lsmc;
        }
        "discounting" => {
            c.grid.half_width = 3.0;
            c.grid.dx = 0.1;
            c.grid.pde_dx = 0.1;
            c.grid.pde_n_steps = 500;
            c.grid.n_steps = 1000;
            c.grid.mc_n_steps = 100;
            c.grid.probes = [(0.0, 0.0), (0.0, 1.0), (0.3, -0.5), (0.5, 0.0), (0.8, 0.7)]
                .iter()
                .map(|(t, x)| Probe { t: *t, x: vec![*x] })
                .collect();
            c.driver = DriverConfig { kind: DriverKind::Discount, rate: 1.0, z_coef: 0.0, g: 0.0 };
            c.terminal = TerminalConfig { kind: TerminalKind::Constant, level: 1.0, strike: 1.0 };
            c.scheme.kind = SchemeKind::Lsmc;
        }
        "clock_measure" => {
            c.grid.half_width = 3.0;
            c.grid.dx = 0.1;
            c.measure.kind = MeasureKind::Clock;
            c.scheme.n_paths = 2000;
        }
        "measure_correspondence" => {
            c.grid.n_steps = 200;
            c.measure.kind = MeasureKind::Gaussian;
            c.grid.x0 = vec![0.3];
        }
        "minimal_maximal" => {
            c.grid.n_steps = 1000;
            c.grid.dx = 0.1;
            c.grid.half_width = 0.2;
            c.driver.kind = DriverKind::SqrtCapped;
            c.scheme.schedule = vec![2, 4, 8, 16, 32];
        }
        "comparison_suite" => {
            c.grid.n_steps = 100;
            c.grid.dx = 0.1;
            c.grid.half_width = 3.0;
            c.terminal.kind = TerminalKind::Cosine;
        }
        "deterministic_barrier" => {
            c.grid.n_steps = 1000;
            c.grid.dx = 0.1;
            c.grid.half_width = 0.3;
            c.obstacle = ObstacleConfig { kind: ObstacleKind::Linear, c: 1.0, strike: 1.0 };
            c.scheme.kind = SchemeKind::Homographic;
        }
        "american_put_style" => {
            c = put_case(case);
            c.scheme.kind = SchemeKind::Projected;
            c.scheme.schedule = vec![4, 8, 16, 32];
        }
        "homographic_sweep" => {
            c = put_case(case);
            c.scheme.kind = SchemeKind::Homographic;
        }
        "lewy_stampacchia_bsde" | "lewy_stampacchia_pde" | "reaction_density" => {
            c = put_case(case);
            c.scheme.kind = if case == "lewy_stampacchia_bsde" { SchemeKind::Projected } else { SchemeKind::Pde };
        }
        "pde_homographic" => {
            c = put_case(case);
            c.scheme.kind = SchemeKind::Pde;
            c.scheme.n_list = (0..16).map(|i| f64::from(1u32 << i)).collect();
        }
        _ => return None,
    }
    Some(c)
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when `value ≤ bound`.
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Check {
        Check { name: name.into(), value, bound, pass: value <= bound }
    }
    /// Passes when `value ≥ bound`.
    pub fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Check {
        Check { name: name.into(), value, bound, pass: value >= bound }
    }
    pub fn flag(name: impl Into<String>, ok: bool) -> Check {
        Check { name: name.into(), value: f64::from(u8::from(ok)), bound: 1.0, pass: ok }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub case: String,
    pub seed: u64,
    pub checks: Vec<Check>,
    /// `(file name, CSV text)`.
    pub tables: Vec<(String, String)>,
    /// `(file name, SVG text)`.
    pub plots: Vec<(String, String)>,
    pub stdout: String,
}

#[derive(Serialize)]
struct Summary<'a> {
    case: &'a str,
    seed: u64,
    pass: bool,
    checks: &'a [Check],
    files: Vec<&'a str>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn summary_json(&self) -> String {
        let s = Summary {
            case: &self.case,
            seed: self.seed,
            pass: self.passed(),
            checks: &self.checks,
            files: self.tables.iter().map(|t| t.0.as_str()).collect(),
        };
        let mut out = serde_json::to_string_pretty(&s).unwrap_or_default();
        out.push('\n');
        out
    }

    /// Writes the tables, `summary.json` and, with `svg`, the plots.
    pub fn write(&self, dir: &Path, svg: bool) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, text) in &self.tables {
            std::fs::write(dir.join(name), text)?;
        }
        if svg {
            for (name, text) in &self.plots {
                std::fs::write(dir.join(name), text)?;
            }
        }
        std::fs::write(dir.join("summary.json"), self.summary_json())?;
        Ok(())
    }

    pub fn report(&self) -> String {
        let mut s = format!("case {} (seed {})\n", self.case, self.seed);
        for c in &self.checks {
            let _ = writeln!(s, "  [{}] {}: {:.6e} (bound {:.6e})", if c.pass { "pass" } else { "FAIL" }, c.name, c.value, c.bound);
        }
        s.push_str(&self.stdout);
        s
    }
}

// ---------------------------------------------------------------- builders

pub fn build_spec(cfg: &ExperimentConfig) -> Result<DiffusionSpec> {
    let c = &cfg.coefficients;
    match c.family {
        Family::Constant => DiffusionSpec::constant(c.a.clone(), c.b.clone()),
        Family::Affine => {
            let a = c.a.clone();
            let (b, slope) = (c.b.clone(), c.slope);
            let d = b.len();
            let lam = DiffusionSpec::constant(a.clone(), vec![0.0; d])?;
            let far = cfg.grid.x0.iter().fold(0.0f64, |m, v| m.max(v.abs())) + cfg.grid.half_width;
            let reach = b.iter().fold(0.0f64, |m, v| m.max(v.abs())) + slope.abs() * far;
            DiffusionSpec::new(
                d,
                Arc::new(move |_, _, out: &mut [f64]| out.copy_from_slice(&a)),
                Arc::new(move |_, x, out: &mut [f64]| {
                    for i in 0..d {
                        out[i] = b[i] + slope * x[i];
                    }
                }),
                lam.lambda_lo(),
                lam.lambda_hi().max(reach),
            )
            .map(|s| s.with_div_a(Arc::new(|_, _, out: &mut [f64]| out.fill(0.0))).time_homogeneous(true))
        }
        Family::Trigonometric => {
            let (a0, eps) = (c.a[0], c.amplitude);
            let tau = 2.0 * std::f64::consts::PI;
            DiffusionSpec::new(
                1,
                Arc::new(move |_, x, out: &mut [f64]| out[0] = a0 * (1.0 + eps * (tau * x[0]).sin())),
                Arc::new(|_, _, out: &mut [f64]| out[0] = 0.0),
                a0 * (1.0 - eps.abs()),
                a0 * (1.0 + eps.abs()),
            )
            .map(|s| s.with_div_a(Arc::new(move |_, x, out: &mut [f64]| out[0] = a0 * eps * tau * (tau * x[0]).cos())).time_homogeneous(true))
        }
    }
}

pub fn build_terminal(cfg: &ExperimentConfig) -> TerminalFn {
    let t = &cfg.terminal;
    let (level, k) = (t.level, t.strike);
    match t.kind {
        TerminalKind::Zero => Arc::new(|_| 0.0),
        TerminalKind::Constant => Arc::new(move |_| level),
        TerminalKind::Gaussian => Arc::new(|x| {
            let d = x.len() as f64;
            (-0.5 * x.iter().map(|v| v * v).sum::<f64>()).exp() / (2.0 * std::f64::consts::PI).powf(0.5 * d)
        }),
        TerminalKind::Put => Arc::new(move |x| (k - x[0]).max(0.0)),
        TerminalKind::Cosine => Arc::new(|x| x[0].cos()),
        TerminalKind::Bump => Arc::new(move |x| bump(level, k, x[0])),
    }
}

fn bump(level: f64, center: f64, x: f64) -> f64 {
    let u = (x - center) / 0.5;
    level * (1.0 - u * u).max(0.0)
}

pub fn build_driver(cfg: &ExperimentConfig) -> DriverSpec {
    let phi = build_terminal(cfg);
    let dc = &cfg.driver;
    let (r, zc) = (dc.rate, dc.z_coef);
    let mut d = match dc.kind {
        DriverKind::Zero => DriverSpec::zero(phi),
        DriverKind::Discount => DriverSpec::discounted(r, phi),
        DriverKind::SqrtCapped => DriverSpec::zero(phi)
            .with_f(Arc::new(|_, _, y, _| y.max(0.0).sqrt().min(1.0)), 1.0, None)
            .with_gamma(Arc::new(|_, _| 1.0)),
        DriverKind::Linear => DriverSpec::zero(phi).with_f(
            Arc::new(move |_, _, y, z| -r * y + zc * z[0]),
            r.abs() + zc.abs(),
            Some(r.abs() + zc.abs()),
        ),
    };
    if cfg.measure.kind != MeasureKind::Zero {
        let g = dc.g;
        d = d.with_g(Arc::new(move |_, _, _| g), g.abs());
    }
    d
}

pub fn build_measure(cfg: &ExperimentConfig) -> MeasureData {
    let level = cfg.measure.level;
    match cfg.measure.kind {
        MeasureKind::Zero => MeasureData::zero(),
        MeasureKind::Clock => MeasureData::constant(level),
        MeasureKind::Gaussian => MeasureData::from_density(Arc::new(move |_, x| level * (-x.iter().map(|v| v * v).sum::<f64>()).exp())),
    }
}

pub fn build_obstacle(cfg: &ExperimentConfig) -> Option<ScalarFn> {
    let o = &cfg.obstacle;
    let (c, k, horizon) = (o.c, o.strike, cfg.grid.horizon);
    let level = cfg.terminal.level;
    match o.kind {
        ObstacleKind::None => None,
        ObstacleKind::Linear => Some(Arc::new(move |t, _| c * (horizon - t))),
        ObstacleKind::Put => Some(Arc::new(move |_, x| (k - x[0]).max(0.0))),
        ObstacleKind::Bump => Some(Arc::new(move |_, x| bump(level, k, x[0]))),
    }
}

pub fn build_time_grid(cfg: &ExperimentConfig) -> Result<TimeGrid> {
    TimeGrid::uniform(0.0, cfg.grid.horizon, cfg.grid.n_steps)
}

pub fn build_path_grid(cfg: &ExperimentConfig) -> Result<TimeGrid> {
    let n = if cfg.grid.mc_n_steps == 0 { cfg.grid.n_steps } else { cfg.grid.mc_n_steps };
    TimeGrid::uniform(0.0, cfg.grid.horizon, n)
}

pub fn build_lattice_for(cfg: &ExperimentConfig, spec: &DiffusionSpec) -> Result<MarkovLattice> {
    let g = &cfg.grid;
    let d = g.x0.len();
    let bx = LatticeBox::centered(&g.x0, &vec![g.half_width; d], &vec![g.dx; d])?;
    build_lattice(spec, &build_time_grid(cfg)?, &bx)
}

pub fn build_pde_grid(cfg: &ExperimentConfig) -> Result<SpaceTimeGrid> {
    let g = &cfg.grid;
    let d = g.x0.len();
    let n = if g.pde_n_steps == 0 { g.n_steps } else { g.pde_n_steps };
    let dx = if g.pde_dx > 0.0 { g.pde_dx } else { g.dx };
    SpaceTimeGrid::centered(TimeGrid::uniform(0.0, g.horizon, n)?, &g.x0, &vec![g.half_width; d], dx)
}

fn probes(cfg: &ExperimentConfig) -> Vec<(f64, Vec<f64>)> {
    cfg.grid.probes.iter().map(|p| (p.t, p.x.clone())).collect()
}

fn csv(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

fn pde_heat_map(sol: &crate::pde::PDESolution, title: &str) -> String {
    let rows: Vec<Vec<f64>> = sol.u.clone();
    let lo = sol.grid.lo()[0];
    let hi = sol.grid.hi()[0];
    heat_map(title, &rows, (lo, hi), (sol.grid.time.t0(), sol.grid.time.horizon()))
}

// ---------------------------------------------------------------- runners

/// Runs the configured case. Solver errors propagate; failed checks are
/// reported in the outcome.
pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    validate(cfg)?;
    let mut out = Outcome { case: cfg.case.clone(), seed: cfg.seed, ..Outcome::default() };
    match cfg.case.as_str() {
        "heat_baseline" | "discounting" => run_representation(cfg, &mut out)?,
        "clock_measure" => run_clock(cfg, &mut out)?,
        "measure_correspondence" => run_correspondence(cfg, &mut out)?,
        "minimal_maximal" => run_minimal_maximal(cfg, &mut out)?,
        "comparison_suite" => run_comparison(cfg, &mut out)?,
        "deterministic_barrier" => run_deterministic_barrier(cfg, &mut out)?,
        "american_put_style" => run_american(cfg, &mut out)?,
        "homographic_sweep" => run_sweep_table(cfg, &mut out)?,
        "lewy_stampacchia_bsde" => run_ls_bsde(cfg, &mut out)?,
        "lewy_stampacchia_pde" => run_ls_pde(cfg, &mut out)?,
        "pde_homographic" => run_pde_homographic(cfg, &mut out)?,
        "reaction_density" => run_reaction(cfg, &mut out)?,
        other => return Err(cfg_err(format!("unknown case '{other}'"))),
    }
    Ok(out)
}

fn run_representation(cfg: &ExperimentConfig, out: &mut Outcome) -> Result<()> {
    let spec = build_spec(cfg)?;
    let driver = build_driver(cfg);
    let mu = build_measure(cfg);
    let pg = build_pde_grid(cfg)?;
    let lat = build_lattice_for(cfg, &spec)?;
    let pts = probes(cfg);
    let pde = solve_parabolic_measure(&pg, &spec, &driver, &mu)?;
    let method = match cfg.scheme.kind {
        SchemeKind::Lsmc => BridgeMethod::MonteCarlo { n_paths: cfg.scheme.n_paths, basis_order: cfg.scheme.basis_order, seed: cfg.seed },
        _ => BridgeMethod::Lattice { dx: cfg.grid.dx, half_width: cfg.grid.half_width },
    };
    let rep = compare_representation(&pde, &spec, &driver, &mu, None, &pts, method, Allowance { abs: 1e-3, rel: 0.0 })?;
    for (i, p) in rep.points.iter().enumerate() {
        out.checks.push(Check::at_most(format!("probe {i} |u − Y|"), (p.pde_value - p.mc_value).abs(), p.bound));
    }
    // gradient identity on the lattice at the first probe
    let zrep = compare_representation(
        &pde,
        &spec,
        &driver,
        &mu,
        None,
        &pts[..1],
        BridgeMethod::Lattice { dx: cfg.grid.dx, half_width: cfg.grid.half_width },
        Allowance { abs: 1e-3, rel: 0.0 },
    )?;
    if cfg.terminal.kind != TerminalKind::Constant {
        out.checks.push(Check::at_most("relative ‖Z − σᵀ∇u‖", zrep.z_gap.unwrap_or(f64::NAN), 0.05));
    }
    if cfg.case == "discounting" {
        let eng = LatticeEngine::new(&lat, &cfg.grid.x0)?;
        let dr = eng.measure_increments(&mu)?;
        let sol = solve_gbsde(&eng, &driver, &dr)?;
        let exact = cfg.terminal.level * (-cfg.driver.rate * cfg.grid.horizon).exp();
        out.checks.push(Check::at_most("lattice |Y_0 − e^{−rT}|", (sol.y0() - exact).abs(), 1e-3));
        let paths = simulate_paths(&spec, &build_path_grid(cfg)?, (0.0, &cfg.grid.x0), cfg.scheme.n_paths, cfg.seed)?;
        let r = accumulate_functional(&paths, &mu)?;
        let reng = RegressionEngine::new(&paths, cfg.scheme.basis_order)?.with_functional(&r)?;
        let ls = solve_gbsde(&reng, &driver, &reng.measure_increments(&mu)?)?;
        out.checks.push(Check::at_most(
            "LSMC |Y_0 − e^{−rT}|",
            (ls.y0() - exact).abs(),
            3.0 * ls.y0_stderr() + 0.01 * exact,
        ));
    }
    let mut buf = Vec::new();
    pde.write_csv(&mut buf)?;
    out.tables.push(("u_grid.csv".into(), String::from_utf8_lossy(&buf).into_owned()));
    let mut buf = Vec::new();
    rep.write_csv(&mut buf)?;
    out.tables.push(("bridge.csv".into(), String::from_utf8_lossy(&buf).into_owned()));
    out.plots.push(("u.svg".into(), pde_heat_map(&pde, "u(t, x)")));
    out.stdout.push_str(&rep.summary());
    Ok(())
}

fn run_clock(cfg: &ExperimentConfig, out: &mut Outcome) -> Result<()> {
    let spec = build_spec(cfg)?;
    let driver = build_driver(cfg);
    let mu = build_measure(cfg);
    let lat = build_lattice_for(cfg, &spec)?;
    let grid = build_time_grid(cfg)?;
    let eng = LatticeEngine::new(&lat, &cfg.grid.x0)?;
    let sol = solve_gbsde(&eng, &driver, &eng.measure_increments(&mu)?)?;
    let paths = simulate_paths(&spec, &build_path_grid(cfg)?, (0.0, &cfg.grid.x0), cfg.scheme.n_paths, cfg.seed)?;
    let r = accumulate_functional(&paths, &mu)?;
    let reng = RegressionEngine::new(&paths, cfg.scheme.basis_order)?.with_functional(&r)?;
    let ls = solve_gbsde(&reng, &driver, &reng.measure_increments(&mu)?)?;
    let scale = cfg.driver.g * cfg.measure.level;
    let mut err_lat: f64 = 0.0;
    let mut err_mc: f64 = 0.0;
    let mut rows = Vec::new();
    for k in 0..=grid.n_steps() {
        let exact = scale * (grid.horizon() - grid.time(k));
        for i in 0..eng.n_states() {
            if sol.law[k][i] > 0.0 {
                err_lat = err_lat.max((sol.y[k][i] - exact).abs());
            }
        }
        rows.push(format!("{:.8},{:.12e},{:.12e}", grid.time(k), sol.y[k][eng.start().min(sol.y[k].len() - 1)], exact));
    }
    out.checks.push(Check::at_most("lattice max |Y_t − (T − t)|", err_lat, grid.max_dt()));
    let pgrid = build_path_grid(cfg)?;
    for k in 0..=pgrid.n_steps() {
        let exact = scale * (pgrid.horizon() - pgrid.time(k));
        err_mc = ls.y[k].iter().fold(err_mc, |a, v| a.max((v - exact).abs()));
    }
    out.checks.push(Check::at_most("LSMC max |Y_t − (T − t)|", err_mc, pgrid.max_dt()));
    let pg = build_pde_grid(cfg)?;
    let pde = solve_parabolic_measure(&pg, &spec, &driver, &mu)?;
    let mut err_pde: f64 = 0.0;
    for k in 0..=pg.time.n_steps() {
        let exact = scale * (pg.time.horizon() - pg.time.time(k));
        err_pde = err_pde.max(pde.u[k].iter().fold(0.0, |a, v| a.max((v - exact).abs())));
    }
    out.checks.push(Check::at_most("PDE max |u − (T − t)|", err_pde, pg.time.max_dt()));
    out.tables.push(("clock.csv".into(), csv("t,y_lattice_at_start,exact", rows)));
    Ok(())
}

fn run_correspondence(cfg: &ExperimentConfig, out: &mut Outcome) -> Result<()> {
    let spec = build_spec(cfg)?;
    let grid = build_time_grid(cfg)?;
    let mu = build_measure(cfg);
    let xi: ScalarFn = Arc::new(|_, x| x[0].cos());
    let rep = verify_measure_correspondence(&spec, &mu, &xi, (0.0, &cfg.grid.x0), &grid, cfg.scheme.n_paths, cfg.seed)?;
    out.checks.push(Check::at_most("|lhs − rhs| (ξ = cos)", rep.gap, 3.0 * rep.lhs_stderr));
    let one: ScalarFn = Arc::new(|_, _| 1.0);
    let clock = verify_measure_correspondence(&spec, &MeasureData::constant(1.0), &one, (0.0, &cfg.grid.x0), &grid, 100, cfg.seed)?;
    let span = grid.horizon() - grid.t0();
    out.checks.push(Check::at_most("clock |lhs − (T − s)|", (clock.lhs - span).abs(), 1e-12));
    out.checks.push(Check::at_most("clock |rhs − (T − s)|", (clock.rhs - span).abs(), 1e-9));
    let zero = verify_measure_correspondence(&spec, &MeasureData::zero(), &xi, (0.0, &cfg.grid.x0), &grid, 100, cfg.seed)?;
    out.checks.push(Check::at_most("zero measure |lhs| + |rhs|", zero.lhs.abs() + zero.rhs.abs(), 0.0));
    out.tables.push((
        "correspondence.csv".into(),
        csv(
            "case,lhs,lhs_stderr,rhs,gap",
            [("gaussian_cos", &rep), ("clock", &clock), ("zero", &zero)]
                .iter()
                .map(|(n, r)| format!("{n},{:.12e},{:.12e},{:.12e},{:.12e}", r.lhs, r.lhs_stderr, r.rhs, r.gap)),
        ),
    ));
    Ok(())
}

fn run_minimal_maximal(cfg: &ExperimentConfig, out: &mut Outcome) -> Result<()> {
    let spec = build_spec(cfg)?;
    let driver = build_driver(cfg);
    let lat = build_lattice_for(cfg, &spec)?;
    let eng = LatticeEngine::new(&lat, &cfg.grid.x0)?;
    let dr = eng.measure_increments(&MeasureData::zero())?;
    let opts = ScheduleOptions { schedule: cfg.scheme.schedule.clone(), stop_gap: 0.0, y_box: None };
    let lo = minimal_solution(&eng, &driver, &dr, &opts)?;
    let hi = maximal_solution(&eng, &driver, &dr, &opts)?;
    let t = cfg.grid.horizon;
    let oracle = (t / 2.0).powi(2);
    out.checks.push(Check::at_most("maximal relative |Y_0 − (T/2)²|", (hi.solution.y0() - oracle).abs() / oracle, 0.02));
    out.checks.push(Check::at_most("minimal |Y_0|", lo.solution.y0().abs(), 1e-6));
    let mut order: f64 = 0.0;
    for (a, b) in lo.solution.y.iter().flatten().zip(hi.solution.y.iter().flatten()) {
        order = order.max(a - b);
    }
    out.checks.push(Check::at_most("max (Y_min − Y_max)⁺", order.max(0.0), 1e-8));
    let rows = lo
        .levels
        .iter()
        .map(|l| ("minimal", l))
        .chain(hi.levels.iter().map(|l| ("maximal", l)))
        .map(|(s, l)| format!("{s},{},{:.12e},{:.12e}", l.n, l.y0, l.sup_gap));
    out.tables.push(("levels.csv".into(), csv("side,n,y0,sup_gap", rows)));
    Ok(())
}

/// Random ordered pair: `f¹ = −a y + b z + c₁ ≤ f² = −a y + b z + c₁ + δ`,
/// `φ¹ = cos ≤ φ² = cos + ε`.
fn run_comparison(cfg: &ExperimentConfig, out: &mut Outcome) -> Result<()> {
    let spec = build_spec(cfg)?;
    let lat = build_lattice_for(cfg, &spec)?;
    let eng = LatticeEngine::new(&lat, &cfg.grid.x0)?;
    let dr = eng.measure_increments(&MeasureData::zero())?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut worst: f64 = 0.0;
    let mut rows = Vec::new();
    for trial in 0..cfg.scheme.trials {
        let a: f64 = rng.random_range(-1.0..1.0);
        let b: f64 = rng.random_range(-0.5..0.5);
        let c: f64 = rng.random_range(-1.0..1.0);
        let delta: f64 = rng.random_range(0.0..0.5);
        let eps: f64 = rng.random_range(0.0..0.3);
        let w: f64 = rng.random_range(0.5..2.0);
        let l = a.abs() + b.abs() + 1.0;
        let d1 = DriverSpec::zero(Arc::new(move |x| (w * x[0]).cos()))
            .with_f(Arc::new(move |_, x, y, z| -a * y + b * z[0] + c * x[0].sin()), l, Some(l));
        let d2 = DriverSpec::zero(Arc::new(move |x| (w * x[0]).cos() + eps))
            .with_f(Arc::new(move |_, x, y, z| -a * y + b * z[0] + c * x[0].sin() + delta * (1.0 + x[0] * x[0]).recip()), l, Some(l));
        let s1 = solve_gbsde(&eng, &d1, &dr)?;
        let s2 = solve_gbsde(&eng, &d2, &dr)?;
        let rep = check_comparison(&eng, &s1, &s2, (&d1, &dr), (&d2, &dr))?;
        worst = worst.max(rep.max_violation);
        rows.push(format!("{trial},{:.12e},{:.12e}", rep.max_violation, rep.hypothesis_excess));
    }
    out.checks.push(Check::at_most("max (Y¹ − Y²)⁺ over trials", worst, 1e-6));
    out.tables.push(("comparison.csv".into(), csv("trial,max_violation,hypothesis_excess", rows)));
    Ok(())
}

struct ObstacleSetup {
    spec: DiffusionSpec,
    driver: DriverSpec,
    h: ScalarFn,
    lat: MarkovLattice,
}

fn obstacle_setup(cfg: &ExperimentConfig) -> Result<ObstacleSetup> {
    let spec = build_spec(cfg)?;
    let driver = build_driver(cfg);
    let h = build_obstacle(cfg).ok_or_else(|| cfg_err(format!("case {} needs an obstacle", cfg.case)))?;
    let lat = build_lattice_for(cfg, &spec)?;
    Ok(ObstacleSetup { spec, driver, h, lat })
}

fn increments(s: &ObstacleSetup, eng: &LatticeEngine) -> Result<ObstacleIncrements> {
    let ob = decompose_obstacle(s.h.clone(), &s.driver, &s.spec, s.lat.grid())?;
    obstacle_increments(eng, &ob, &s.driver)
}

fn convergence_plot(rows: &[crate::rbsde::ConvergenceRow]) -> String {
    let series = vec![
        Series { name: "sup gap Y".into(), points: rows.iter().map(|r| (r.n, r.sup_gap_y)).collect() },
        Series { name: "L2 gap Z".into(), points: rows.iter().map(|r| (r.n, r.int_gap_z)).collect() },
        Series { name: "sup gap K".into(), points: rows.iter().map(|r| (r.n, r.sup_gap_k)).collect() },
    ];
    line_plot("homographic convergence", "n", "gap", &series, Axes { log_x: true, log_y: true })
}

fn run_deterministic_barrier(cfg: &ExperimentConfig, out: &mut Outcome) -> Result<()> {
    let s = obstacle_setup(cfg)?;
    let eng = LatticeEngine::new(&s.lat, &cfg.grid.x0)?;
    let inc = increments(&s, &eng)?;
    let reference = solve_rbsde_projected(&eng, &s.driver, &inc)?;
    let (rep, _) = homographic_sequence(&eng, &s.driver, &inc, &cfg.scheme.n_list, &reference, 2.0 * cfg.grid.dx)?;
    let ct = cfg.obstacle.c * cfg.grid.horizon;
    out.checks.push(Check::at_least("min (Y^n − S)", rep.min_excess, -1e-9));
    out.checks.push(Check::at_most("monotone excess", rep.monotone_excess, 1e-6));
    let kgap = rep.rows.iter().fold(0.0f64, |a, r| a.max((r.k_total - ct).abs()));
    out.checks.push(Check::at_most("max |E K^n_T − cT|", kgap, 1e-9 + build_time_grid(cfg)?.max_dt()));
    let mut buf = Vec::new();
    rep.write_csv(&mut buf)?;
    out.tables.push(("convergence.csv".into(), String::from_utf8_lossy(&buf).into_owned()));
    out.plots.push(("convergence.svg".into(), convergence_plot(&rep.rows)));
    Ok(())
}

fn run_american(cfg: &ExperimentConfig, out: &mut Outcome) -> Result<()> {
    let s = obstacle_setup(cfg)?;
    let pg = build_pde_grid(cfg)?;
    let eng = LatticeEngine::new(&s.lat, &cfg.grid.x0)?;
    let inc = increments(&s, &eng)?;
    let proj = solve_rbsde_projected(&eng, &s.driver, &inc)?;
    let pen = solve_rbsde_penalization(&eng, &s.driver, &inc, &cfg.scheme.schedule)?;
    let n_last = f64::from(*cfg.scheme.schedule.last().unwrap_or(&32));
    let hom = solve_rbsde_homographic(&eng, &s.driver, &inc, n_last)?;
    let pde = solve_obstacle_projected(&pg, &s.spec, &s.driver, &s.h)?;
    let u0 = pde.value_at(0.0, &cfg.grid.x0)?;
    out.checks.push(Check::at_most("relative |Y_0 − u(0, x0)| (projected lattice)", (proj.y0() - u0).abs() / u0.abs(), 0.01));
    out.checks.push(Check::at_most("monotone penalization excess", pen.monotone_excess, 1e-8));
    out.checks.push(Check::at_least("min (Y^n − S) homographic", hom.solution.min_excess(), -1e-9));
    let sk = check_skorokhod(&pen.solution);
    out.checks.push(Check::at_most(
        "|Σ(Y − S)ΔK| penalization",
        sk.abs(),
        1e-3 * pen.solution.y_sup() * pen.solution.expected_k_total(),
    ));
    out.checks.push(Check::at_most("|Σ(Y − S)ΔK| projected", check_skorokhod(&proj).abs(), 1e-12));
    let rep = compare_representation(
        &pde,
        &s.spec,
        &s.driver,
        &MeasureData::zero(),
        Some(&s.h),
        &probes(cfg),
        BridgeMethod::Lattice { dx: cfg.grid.dx, half_width: cfg.grid.half_width },
        Allowance { abs: 0.0, rel: 0.02 },
    )?;
    for (i, p) in rep.points.iter().enumerate() {
        out.checks.push(Check::at_most(format!("probe {i} |u − Y|"), (p.pde_value - p.mc_value).abs(), p.bound));
    }
    let rows = [
        ("projected_lattice", proj.y0(), proj.expected_k_total()),
        ("penalization_last", pen.solution.y0(), pen.solution.expected_k_total()),
        ("penalization_extrapolated", pen.extrapolated_y0(), f64::NAN),
        ("homographic", hom.solution.y0(), hom.solution.expected_k_total()),
        ("pde_lcp", u0, f64::NAN),
    ]
    .iter()
    .map(|(n, y, k)| format!("{n},{y:.12e},{k:.12e}"))
    .collect::<Vec<_>>();
    out.tables.push(("values.csv".into(), csv("method,y0,k_total", rows)));
    let mut buf = Vec::new();
    rep.write_csv(&mut buf)?;
    out.tables.push(("bridge.csv".into(), String::from_utf8_lossy(&buf).into_owned()));
    out.plots.push(("u.svg".into(), pde_heat_map(&pde, "obstacle solution u(t, x)")));
    out.stdout.push_str(&rep.summary());
    Ok(())
}

fn run_sweep_table(cfg: &ExperimentConfig, out: &mut Outcome) -> Result<()> {
    let s = obstacle_setup(cfg)?;
    let eng = LatticeEngine::new(&s.lat, &cfg.grid.x0)?;
    let inc = increments(&s, &eng)?;
    let reference = solve_rbsde_projected(&eng, &s.driver, &inc)?;
    let (rep, _) = homographic_sequence(&eng, &s.driver, &inc, &cfg.scheme.n_list, &reference, 2.0 * cfg.grid.dx)?;
    out.checks.push(Check::at_least("min (Y^n − S)", rep.min_excess, -1e-9));
    out.checks.push(Check::at_most("monotone excess", rep.monotone_excess, 1e-6));
    let dec = rep.rows.windows(2).all(|w| w[1].sup_gap_y <= w[0].sup_gap_y + 1e-12);
    out.checks.push(Check::flag("sup gap Y nonincreasing in n", dec));
    let mut buf = Vec::new();
    rep.write_csv(&mut buf)?;
    out.tables.push(("convergence.csv".into(), String::from_utf8_lossy(&buf).into_owned()));
    out.plots.push(("convergence.svg".into(), convergence_plot(&rep.rows)));
    Ok(())
}

/// The barrier corpus: put, deterministic linear barrier, bump barrier.
pub fn corpus() -> Vec<ExperimentConfig> {
    let put = put_case("corpus_put");
    let mut lin = put_case("corpus_linear");
    lin.obstacle = ObstacleConfig { kind: ObstacleKind::Linear, c: 1.0, strike: 1.0 };
    lin.terminal = TerminalConfig { kind: TerminalKind::Zero, level: 0.0, strike: 1.0 };
    lin.driver = DriverConfig { kind: DriverKind::Zero, rate: 0.0, z_coef: 0.0, g: 0.0 };
    let mut bump = put_case("corpus_bump");
    bump.obstacle = ObstacleConfig { kind: ObstacleKind::Bump, c: 1.0, strike: 1.0 };
    bump.terminal = TerminalConfig { kind: TerminalKind::Bump, level: 0.3, strike: 1.0 };
    bump.driver.rate = 0.05;
    vec![put, lin, bump]
}

fn run_ls_bsde(cfg: &ExperimentConfig, out: &mut Outcome) -> Result<()> {
    let mut rows = Vec::new();
    for mut c in corpus() {
        c.grid.n_steps = cfg.grid.n_steps;
        c.grid.dx = cfg.grid.dx;
        let s = obstacle_setup(&c)?;
        let eng = LatticeEngine::new(&s.lat, &c.grid.x0)?;
        let inc = increments(&s, &eng)?;
        let proj = solve_rbsde_projected(&eng, &s.driver, &inc)?;
        let rep = check_lewy_stampacchia(&proj, &inc.dr, 2.0 * c.grid.dx, 1e-8);
        out.checks.push(Check::at_most(format!("{} violations", c.case), rep.violations as f64, 0.0));
        let (_, cd) = control_density(&proj, &inc.dr, 2.0 * c.grid.dx, 1e-14);
        out.checks.push(Check::flag(format!("{} α̂ ∈ [−1e−6, 1 + 1e−6]", c.case), cd.in_range(1e-6)));
        rows.push(format!("{},{},{},{:.6e},{:.6e}", c.case, rep.checked, rep.violations, rep.lower_excess, rep.upper_excess));
    }
    out.tables.push(("lewy_stampacchia_bsde.csv".into(), csv("case,checked,violations,lower_excess,upper_excess", rows)));
    Ok(())
}

fn run_ls_pde(cfg: &ExperimentConfig, out: &mut Outcome) -> Result<()> {
    let mut rows = Vec::new();
    for mut c in corpus() {
        c.grid.pde_n_steps = cfg.grid.pde_n_steps;
        c.grid.pde_dx = cfg.grid.pde_dx;
        let spec = build_spec(&c)?;
        let driver = build_driver(&c);
        let h = build_obstacle(&c).unwrap();
        let pg = build_pde_grid(&c)?;
        let sol = solve_obstacle_projected(&pg, &spec, &driver, &h)?;
        let rep = check_pde_lewy_stampacchia(&sol, &spec, &driver, 1e-8)?;
        out.checks.push(Check::at_most(format!("{} violations", c.case), rep.violations as f64, 0.0));
        let comp = sol.complementarity().unwrap();
        out.checks.push(Check::at_least(format!("{} min r", c.case), comp.min_reaction, -1e-12));
        out.checks.push(Check::at_least(format!("{} min (u − h)", c.case), comp.min_excess, -1e-9));
        out.checks.push(Check::at_most(format!("{} |Σ r(u − h)|", c.case), comp.pairing.abs(), 1e-6 * sol.sup_norm()));
        rows.push(format!(
            "{},{},{},{:.6e},{:.6e},{:.6e}",
            c.case, rep.checked, rep.violations, rep.lower_excess, rep.upper_excess, rep.free_residual
        ));
    }
    out.tables.push(("lewy_stampacchia_pde.csv".into(), csv("case,checked,violations,lower_excess,upper_excess,free_residual", rows)));
    Ok(())
}

/// Smooth test functions for the weak pairings of `μ_n`.
pub fn test_functions() -> Vec<ScalarFn> {
    vec![
        Arc::new(|_, _| 1.0),
        Arc::new(|t, x| (-(x[0] - 0.8) * (x[0] - 0.8)).exp() * (1.0 + t)),
        Arc::new(|_, x| (x[0]).cos()),
    ]
}

fn run_pde_homographic(cfg: &ExperimentConfig, out: &mut Outcome) -> Result<()> {
    let spec = build_spec(cfg)?;
    let driver = build_driver(cfg);
    let h = build_obstacle(cfg).ok_or_else(|| cfg_err("pde_homographic needs an obstacle"))?;
    let pg = build_pde_grid(cfg)?;
    let mut fine_cfg = cfg.clone();
    fine_cfg.grid.pde_n_steps = 2 * pg.time.n_steps();
    fine_cfg.grid.pde_dx = pg.dx() / 2.0;
    let fine_grid = build_pde_grid(&fine_cfg)?;
    let proj = solve_obstacle_projected(&pg, &spec, &driver, &h)?;
    let fine = solve_obstacle_projected(&fine_grid, &spec, &driver, &h)?;
    let weight = WeightSpec::new(1.0)?;
    let self_err = weighted_l2(&pg, &restrict(&fine, &pg)?, &proj.u, Some(&weight));
    let hom = solve_obstacle_homographic(&pg, &spec, &driver, &h, &cfg.scheme.n_list)?;
    let table = homographic_table(&hom, &proj, Some(&weight));
    let dec = table.windows(2).all(|w| w[1].l2rho_gap < w[0].l2rho_gap);
    out.checks.push(Check::flag("‖u_n − u‖_{2,ρ} decreasing", dec));
    let last = table.last().unwrap();
    out.checks.push(Check::at_most("final ‖u_n − u‖_{2,ρ}", last.l2rho_gap, 2.0 * self_err));
    let hv = hom.obstacle.as_ref().unwrap();
    let min_ex = hom
        .mu_n_sequence
        .iter()
        .flat_map(|m| m.u.iter().flatten().zip(hv.iter().flatten()).map(|(u, h)| u - h))
        .fold(f64::INFINITY, f64::min);
    out.checks.push(Check::at_least("min (u_n − h)", min_ex, -1e-9));
    let m = hom.mu_n_sequence.len();
    // Cauchy gap at n = 32 (or the last pair when the list stops earlier)
    let j = table.iter().position(|r| r.n >= 32.0).unwrap_or(m - 1).max(1);
    if m >= 2 {
        let (a, b) = (table[j - 1].mu_mass, table[j].mu_mass);
        out.checks.push(Check::at_most(
            format!("μ_n mass Cauchy gap at n = {} (relative)", table[j].n),
            (b - a).abs() / b.abs().max(1e-300),
            0.05,
        ));
    }
    let r = proj.reaction.as_ref().unwrap();
    let mut rows = Vec::new();
    for (j, xi) in test_functions().iter().enumerate() {
        let target = proj.pairing(r, |t, x| xi(t, x));
        let got = hom.pairing(&hom.mu_n_sequence[m - 1].mu, |t, x| xi(t, x));
        out.checks.push(Check::at_most(format!("pairing ξ{j} relative gap"), (got - target).abs() / target.abs().max(1e-300), 0.10));
        for mem in &hom.mu_n_sequence {
            rows.push(format!("{j},{},{:.12e},{:.12e}", mem.n, hom.pairing(&mem.mu, |t, x| xi(t, x)), target));
        }
    }
    let mut buf = Vec::new();
    write_table_csv(&table, &mut buf)?;
    out.tables.push(("pde_homographic.csv".into(), String::from_utf8_lossy(&buf).into_owned()));
    out.tables.push(("pairings.csv".into(), csv("xi,n,pairing,projected_pairing", rows)));
    out.stdout.push_str(&format!("grid self-convergence error {self_err:.6e}\n"));
    let series = vec![Series { name: "L2ρ gap".into(), points: table.iter().map(|r| (r.n, r.l2rho_gap)).collect() }];
    out.plots.push(("pde_homographic.svg".into(), line_plot("u_n against LCP", "n", "gap", &series, Axes { log_x: true, log_y: true })));
    Ok(())
}

fn run_reaction(cfg: &ExperimentConfig, out: &mut Outcome) -> Result<()> {
    let mut rows = Vec::new();
    for mut c in corpus() {
        c.grid.pde_n_steps = cfg.grid.pde_n_steps;
        c.grid.pde_dx = cfg.grid.pde_dx;
        let spec = build_spec(&c)?;
        let driver = build_driver(&c);
        let h = build_obstacle(&c).unwrap();
        let pg = build_pde_grid(&c)?;
        let sol = solve_obstacle_projected(&pg, &spec, &driver, &h)?;
        let (_, rep) = recover_reaction_density(&sol, 1e-10)?;
        out.checks.push(Check::flag(format!("{} α̂ ∈ [−1e−6, 1 + 1e−6]", c.case), rep.in_range(1e-6)));
        if c.obstacle.kind == ObstacleKind::Linear {
            let dev = (rep.min_alpha - 1.0).abs().max((rep.max_alpha - 1.0).abs());
            out.checks.push(Check::at_most("fully active |α̂ − 1|", dev, 1e-3));
        }
        rows.push(format!(
            "{},{},{},{:.9e},{:.9e},{:.9e}",
            c.case, rep.defined, rep.undefined, rep.min_alpha, rep.max_alpha, rep.off_contact_max
        ));
    }
    out.tables.push(("reaction_density.csv".into(), csv("case,defined,undefined,min_alpha,max_alpha,off_contact_max", rows)));
    Ok(())
}

/// Unused import guard for the penalized single-level solver in sweeps.
#[doc(hidden)]
pub fn penalized_y0(cfg: &ExperimentConfig, n: f64) -> Result<f64> {
    let s = obstacle_setup(cfg)?;
    let eng = LatticeEngine::new(&s.lat, &cfg.grid.x0)?;
    let inc = increments(&s, &eng)?;
    Ok(solve_rbsde_penalized(&eng, &s.driver, &inc, n)?.y0())
}

/// Headline number of a case for sweep tables.
pub fn headline(out: &Outcome) -> (String, f64) {
    out.checks.first().map_or_else(|| ("none".into(), f64::NAN), |c| (c.name.clone(), c.value))
}

/// Pairs of a control measure check for the put case, used by the bridge suite.
pub fn control_measure_gaps(cfg: &ExperimentConfig) -> Result<Vec<crate::bridge::ControlMeasureGap>> {
    let s = obstacle_setup(cfg)?;
    let eng = LatticeEngine::new(&s.lat, &cfg.grid.x0)?;
    let inc = increments(&s, &eng)?;
    let proj = solve_rbsde_projected(&eng, &s.driver, &inc)?;
    let pde = solve_obstacle_projected(&build_pde_grid(cfg)?, &s.spec, &s.driver, &s.h)?;
    verify_control_measure(&eng, &proj, &pde, &s.spec, &test_functions())
}
