mod figures;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fxmm_core::closedform::{client_turnover, ClosedFormCoeffs};
use fxmm_core::hjb::{solve, ControlField, GridSpec, SolveMode, SolveOutput, SolveReport};
use fxmm_core::intensity::{curves_from_tiers, IntensityCurve};
use fxmm_core::io::{read_controls_cache, write_controls_cache, write_controls_csv, write_path_stats_csv, write_value_csv};
use fxmm_core::params::{apply_env_overrides, fx_example, load_config, normalize, ConfigError, validate, ModelParams, RawConfig};
use fxmm_core::simulate::{simulate_paths, PerformanceReport, SimConfig, SimOutcome};
use serde::Serialize;

use manifest::{sha256_hex, ConfigEcho, RunManifest};

#[derive(Parser)]
#[command(name = "fxmm", version, about = "Dealer quoting and hedging under transient impact")]
struct Cli {
    /// TOML config; the built-in FX example when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form coefficients and per-tier quantities.
    Coeffs,
    /// Backward HJB solve; writes controls, value and figure data.
    Solve(SolveArgs),
    /// Monte Carlo of an inventory shock.
    Simulate(SimulateArgs),
    /// Closed-form coefficients over a range of one parameter.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Transient,
    Baseline,
    Ac,
}

impl From<ModeArg> for SolveMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Transient => SolveMode::Transient,
            ModeArg::Baseline => SolveMode::Baseline,
            ModeArg::Ac => SolveMode::AlmgrenChriss,
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long, value_enum, default_value = "transient")]
    mode: ModeArg,
    /// Also write gnuplot scripts for the figure data.
    #[arg(long)]
    gnuplot: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    paths: Option<usize>,
    /// Initial client trade, M.
    #[arg(long, allow_hyphen_values = true)]
    shock: Option<f64>,
    /// Overrides FXMM_SEED and the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Also simulate the controls optimized with beta = 0.
    #[arg(long)]
    compare_ac: bool,
    #[arg(long, value_enum, default_value = "transient")]
    mode: ModeArg,
    /// Control cache from a previous solve instead of solving here.
    #[arg(long)]
    controls: Option<PathBuf>,
    /// Control cache for the comparison policy.
    #[arg(long, requires = "compare_ac")]
    ac_controls: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SweepParam {
    #[value(alias = "β")]
    Beta,
    #[value(alias = "γ")]
    Gamma,
    #[value(alias = "σ")]
    Sigma,
    #[value(alias = "ψ")]
    Psi,
    #[value(alias = "η")]
    Eta,
    K,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::Beta => "beta",
            SweepParam::Gamma => "gamma",
            SweepParam::Sigma => "sigma",
            SweepParam::Psi => "psi",
            SweepParam::Eta => "eta",
            SweepParam::K => "k",
        }
    }

    fn set(self, raw: &mut RawConfig, v: f64) {
        match self {
            SweepParam::Beta => raw.beta = v,
            SweepParam::Gamma => raw.gamma = v,
            SweepParam::Sigma => raw.sigma_daily = v,
            SweepParam::Psi => raw.psi = v,
            SweepParam::Eta => raw.eta = v,
            SweepParam::K => raw.k = v,
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    param: SweepParam,
    /// Comma-separated values, in config units.
    #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
    values: Vec<f64>,
}

/// Usage and config problems.
const EXIT_INPUT: u8 = 2;
/// Solver, simulation or check failures.
const EXIT_RUN: u8 = 1;

struct Loaded {
    raw: RawConfig,
    params: ModelParams,
    curves: Vec<IntensityCurve>,
}

fn load(cli: &Cli, m: &mut RunManifest) -> Result<Loaded> {
    let (mut raw, echo) = match &cli.config {
        Some(path) => {
            let text = fs::read(path).map_err(|source| ConfigError::Io {
                path: path.display().to_string(),
                source,
            })?;
            let source = String::from_utf8(text.clone())
                .map_err(|_| ConfigError::Syntax(format!("{} is not UTF-8", path.display())))?;
            let raw = load_config(&source)?;
            (
                raw,
                ConfigEcho {
                    path: Some(path.display().to_string()),
                    sha256: sha256_hex(&text),
                },
            )
        }
        None => {
            let raw = fx_example();
            let text = serde_json::to_vec(&raw)?;
            (
                raw,
                ConfigEcho {
                    path: None,
                    sha256: sha256_hex(&text),
                },
            )
        }
    };
    apply_env_overrides(&mut raw)?;
    m.config = Some(echo);
    m.params = Some(serde_json::to_value(&raw)?);
    let params = normalize(&raw);
    let curves = curves_from_tiers(&params.tiers)?;
    Ok(Loaded { raw, params, curves })
}

fn coeffs_for(params: &ModelParams, curves: &[IntensityCurve], mode: SolveMode) -> ClosedFormCoeffs {
    match mode {
        SolveMode::AlmgrenChriss => ClosedFormCoeffs::new(&params.with_beta(0.0), curves),
        _ => ClosedFormCoeffs::new(params, curves),
    }
}

#[derive(Serialize)]
struct TierRow {
    tier: usize,
    size: f64,
    delta0: f64,
    curvature: f64,
    spread_at_zero: f64,
    turnover: f64,
}

#[derive(Serialize)]
struct CoeffsReport {
    coeffs: ClosedFormCoeffs,
    top_of_book_spread: f64,
    client_turnover: f64,
    zone_half_width: f64,
    zone_half_width_ac: f64,
    tiers: Vec<TierRow>,
}

fn coeffs_report(params: &ModelParams, curves: &[IntensityCurve]) -> CoeffsReport {
    let cf = ClosedFormCoeffs::new(params, curves);
    let ac = ClosedFormCoeffs::new(&params.with_beta(0.0), curves);
    let tiers = curves
        .iter()
        .enumerate()
        .map(|(n, c)| TierRow {
            tier: n + 1,
            size: c.tier_size,
            delta0: c.delta_zero(),
            curvature: c.curvature(),
            spread_at_zero: cf.spread_at_zero(c),
            turnover: c.tier_size * c.intensity(c.delta_zero()),
        })
        .collect();
    CoeffsReport {
        coeffs: cf,
        top_of_book_spread: curves.first().map_or(f64::NAN, |c| cf.spread_at_zero(c)),
        client_turnover: client_turnover(curves),
        zone_half_width: cf.internalization_half_width(params.k, params.psi),
        zone_half_width_ac: ac.internalization_half_width(params.k, params.psi),
        tiers,
    }
}

fn cmd_coeffs(cli: &Cli, m: &mut RunManifest) -> Result<()> {
    let l = load(cli, m)?;
    let r = coeffs_report(&l.params, &l.curves);
    let c = &r.coeffs;
    println!("A0     {:.6e} bp/M", c.a0);
    println!("xi     {:.6e} M/(day bp)", c.xi);
    println!("omega  {:.4} 1/day", c.omega);
    println!("B0     {:.6}", c.b0);
    println!("top-of-book spread  {:.4} bp", r.top_of_book_spread);
    println!("client turnover     {:.1} M/day", r.client_turnover);
    println!("zone half-width     {:.4} M (beta = 0: {:.4} M)", r.zone_half_width, r.zone_half_width_ac);
    println!();
    println!("{:>4} {:>8} {:>10} {:>12} {:>10} {:>12}", "tier", "size", "delta0", "c", "spread", "turnover");
    for t in &r.tiers {
        println!(
            "{:>4} {:>8} {:>10.5} {:>12.5} {:>10.5} {:>12.2}",
            t.tier, t.size, t.delta0, t.curvature, t.spread_at_zero, t.turnover
        );
    }
    m.write("coeffs.json", (serde_json::to_string_pretty(&r)? + "\n").as_bytes())?;
    Ok(())
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn run_solve(l: &Loaded, mode: SolveMode, m: &mut RunManifest, label: &str) -> Result<SolveOutput> {
    let spec = GridSpec::from(&l.params.solver);
    let t0 = Instant::now();
    let out = solve(&l.params, &l.curves, &spec, mode).with_context(|| format!("{} solve failed", mode.as_str()))?;
    m.time(&format!("solve_{label}"), t0.elapsed().as_secs_f64());
    check_solve(m, label, &out);
    Ok(out)
}

fn check_solve(m: &mut RunManifest, label: &str, out: &SolveOutput) {
    m.check(&format!("{label}_stationary"), out.report.stationary);
    let v = &out.value;
    m.check(&format!("{label}_symmetric"), v.max_asymmetry() <= 1e-8 * v.max_abs().max(1.0));
}

#[derive(Serialize)]
struct SolveSummary<'a> {
    report: &'a SolveReport,
    coeffs: ClosedFormCoeffs,
    max_value_asymmetry: f64,
    clamped_quotes: usize,
    zone: Vec<figures::ZoneRow>,
}

fn cmd_solve(cli: &Cli, args: &SolveArgs, m: &mut RunManifest) -> Result<()> {
    let l = load(cli, m)?;
    let mode = SolveMode::from(args.mode);
    let out = run_solve(&l, mode, m, mode.as_str())?;
    let cf = coeffs_for(&l.params, &l.curves, mode);
    let f = &out.controls;

    m.write("controls.csv", &csv_bytes(|w| write_controls_csv(f, w))?)?;
    m.write("value.csv", &csv_bytes(|w| write_value_csv(&out.value, w))?)?;
    m.write("controls.bin", &csv_bytes(|w| write_controls_cache(f, w))?)?;
    m.write("fig1.csv", &figures::fig1(f, &l.curves, &cf))?;
    let zone = figures::zone_rows(f, &cf, &l.params);
    if mode.has_hedging() {
        m.write("fig2.csv", &figures::fig2(f))?;
    }
    if args.gnuplot {
        m.write("fig1.gp", figures::FIG1_GP.as_bytes())?;
        if mode.has_hedging() {
            m.write("fig2.gp", figures::FIG2_GP.as_bytes())?;
        }
    }
    let summary = SolveSummary {
        report: &out.report,
        coeffs: cf,
        max_value_asymmetry: out.value.max_asymmetry(),
        clamped_quotes: f.clamped_quotes,
        zone,
    };
    m.write("solve.json", (serde_json::to_string_pretty(&summary)? + "\n").as_bytes())?;
    let r = &out.report;
    println!(
        "{} solve: {} steps of {:.3e} day, stationarity {:.2e}, max rate*dt {:.3}",
        mode.as_str(),
        r.steps,
        r.dt,
        r.stationarity,
        r.max_rate_dt
    );
    Ok(())
}

fn read_cache(path: &Path, expect: SolveMode) -> Result<ControlField> {
    let file = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let field = read_controls_cache(std::io::BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
    if field.mode != expect {
        bail!(
            "{} holds {} controls, expected {}",
            path.display(),
            field.mode.as_str(),
            expect.as_str()
        );
    }
    Ok(field)
}

fn controls_for(
    l: &Loaded,
    mode: SolveMode,
    cache: Option<&Path>,
    m: &mut RunManifest,
) -> Result<(ControlField, Option<SolveReport>)> {
    match cache {
        Some(path) => Ok((read_cache(path, mode)?, None)),
        None => {
            let out = run_solve(l, mode, m, mode.as_str())?;
            Ok((out.controls, Some(out.report)))
        }
    }
}

#[derive(Serialize)]
struct PolicySummary {
    mode: SolveMode,
    mean_terminal_pnl: f64,
    se_terminal_pnl: f64,
    /// Per tier, `[bid fills, ask fills]` over all paths.
    trade_counts: Vec<[u64; 2]>,
    clamped_lookups: u64,
    total_lookups: u64,
    solve: Option<SolveReport>,
}

fn policy_summary(mode: SolveMode, out: &SimOutcome, solve: Option<SolveReport>) -> PolicySummary {
    let (mean, se) = fxmm_core::simulate::mean_and_se(&out.terminal_pnl);
    PolicySummary {
        mode,
        mean_terminal_pnl: mean,
        se_terminal_pnl: se,
        trade_counts: out.trade_counts.clone(),
        clamped_lookups: out.stats.clamped_lookups,
        total_lookups: out.stats.total_lookups,
        solve,
    }
}

#[derive(Serialize)]
struct SimulateSummary {
    config: SimConfig,
    policies: Vec<PolicySummary>,
    comparison: Option<PerformanceReport>,
    z_score: Option<f64>,
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs, m: &mut RunManifest) -> Result<()> {
    let mut l = load(cli, m)?;
    if let Some(paths) = args.paths {
        l.raw.simulation.paths = paths;
    }
    if let Some(shock) = args.shock {
        l.raw.simulation.shock = shock;
    }
    if let Some(seed) = args.seed {
        l.raw.simulation.seed = seed;
    }
    if l.raw.simulation.paths == 0 {
        bail!("at least 1 path is required (got --paths 0)");
    }
    validate(&l.raw)?;
    l.params = normalize(&l.raw);
    m.params = Some(serde_json::to_value(&l.raw)?);
    let cfg = SimConfig::from_params(&l.params, &l.curves);
    m.seed = Some(cfg.seed);

    let mode = SolveMode::from(args.mode);
    if args.compare_ac && mode != SolveMode::Transient {
        bail!("--compare-ac compares against the transient policy; drop --mode or use --mode transient");
    }
    let (primary, primary_report) = controls_for(&l, mode, args.controls.as_deref(), m)?;
    let t0 = Instant::now();
    let out = simulate_paths(&primary, &l.params, &l.curves, &cfg)?;
    m.time(&format!("simulate_{}", mode.as_str()), t0.elapsed().as_secs_f64());
    m.write(
        &format!("paths_{}.csv", mode.as_str()),
        &csv_bytes(|w| write_path_stats_csv(&out.stats, w))?,
    )?;
    let mut policies = vec![policy_summary(mode, &out, primary_report)];
    let mut comparison = None;

    if args.compare_ac {
        let (ac, ac_report) = controls_for(&l, SolveMode::AlmgrenChriss, args.ac_controls.as_deref(), m)?;
        let t0 = Instant::now();
        let ac_out = simulate_paths(&ac, &l.params, &l.curves, &cfg)?;
        m.time("simulate_ac", t0.elapsed().as_secs_f64());
        m.write("paths_ac.csv", &csv_bytes(|w| write_path_stats_csv(&ac_out.stats, w))?)?;
        comparison = Some(PerformanceReport::from_outcomes(&cfg, &out, &ac_out));
        policies.push(policy_summary(SolveMode::AlmgrenChriss, &ac_out, ac_report));
    }

    for p in &policies {
        println!(
            "{:>9}: mean terminal P&L {:.4} +- {:.4} bp*M over {} paths",
            p.mode.as_str(),
            p.mean_terminal_pnl,
            p.se_terminal_pnl,
            cfg.n_paths
        );
    }
    if let Some(c) = &comparison {
        println!("difference {:.4} +- {:.4} (z = {:.2})", c.difference, c.difference_se, c.z_score());
    }
    let summary = SimulateSummary {
        z_score: comparison.as_ref().map(PerformanceReport::z_score),
        config: cfg,
        policies,
        comparison,
    };
    m.write("summary.json", (serde_json::to_string_pretty(&summary)? + "\n").as_bytes())?;
    Ok(())
}

fn cmd_sweep(cli: &Cli, args: &SweepArgs, m: &mut RunManifest) -> Result<()> {
    let l = load(cli, m)?;
    let mut csv = String::from("param,value,xi,a0,omega,b0,zone_half_width,top_of_book_spread\n");
    for &v in &args.values {
        let mut raw = l.raw.clone();
        args.param.set(&mut raw, v);
        validate(&raw).with_context(|| format!("{} = {v}", args.param.name()))?;
        let p = normalize(&raw);
        let cf = ClosedFormCoeffs::new(&p, &l.curves);
        let zone = cf.internalization_half_width(p.k, p.psi);
        let tob = l.curves.first().map_or(f64::NAN, |c| cf.spread_at_zero(c));
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            args.param.name(),
            v,
            cf.xi,
            cf.a0,
            cf.omega,
            cf.b0,
            zone,
            tob
        ));
    }
    print!("{csv}");
    m.write("sweep.csv", csv.as_bytes())?;
    Ok(())
}

fn dispatch(cli: &Cli, m: &mut RunManifest) -> Result<()> {
    match &cli.command {
        Command::Coeffs => cmd_coeffs(cli, m),
        Command::Solve(a) => cmd_solve(cli, a, m),
        Command::Simulate(a) => cmd_simulate(cli, a, m),
        Command::Sweep(a) => cmd_sweep(cli, a, m),
    }
}

fn is_input_error(err: &anyhow::Error) -> bool {
    err.chain().any(|e| e.is::<ConfigError>())
        || err.to_string().starts_with("at least 1 path")
        || err.to_string().starts_with("--compare-ac")
}

/// The error chain on one line, skipping causes a message already quotes.
fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(EXIT_INPUT);
        }
    }
    if let Err(e) = fs::create_dir_all(&cli.out) {
        eprintln!("error: cannot create {}: {e}", cli.out.display());
        return ExitCode::from(EXIT_RUN);
    }
    let mut m = RunManifest::new(&cli.out);
    let t0 = Instant::now();
    let result = dispatch(&cli, &mut m);
    m.time("total", t0.elapsed().as_secs_f64());
    let code = match &result {
        Ok(()) if m.is_ok() => ExitCode::SUCCESS,
        Ok(()) => {
            eprintln!("error: {}", m.failure.as_deref().unwrap_or("check failed"));
            ExitCode::from(EXIT_RUN)
        }
        Err(e) => {
            m.fail(describe(e));
            eprintln!("error: {}", describe(e));
            if is_input_error(e) {
                ExitCode::from(EXIT_INPUT)
            } else {
                ExitCode::from(EXIT_RUN)
            }
        }
    };
    if let Err(e) = m.finish() {
        eprintln!("error: cannot write manifest in {}: {e}", m.out_dir().display());
        return ExitCode::from(EXIT_RUN);
    }
    code
}
