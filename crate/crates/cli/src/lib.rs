//! Command-line front end: loads a config, runs analyses and simulations,
//! and writes plot-ready CSV and JSON next to a run manifest.
//!
//! Exit codes: 0 success, 1 a reproduction check failed, 2 config or usage
//! error, 3 numeric analysis failure, 4 infeasible scenario or schedule,
//! 5 simulation blowup.

pub mod output;
pub mod reproduce;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use mmctrl_core::config::{Config, ConfigError};
use mmctrl_core::profile::{generate_city, generate_highway, DriveProfile, CITY_SEED, HIGHWAY_SEED};
use mmctrl_core::scheduler::write_dwell_trace;
use mmctrl_core::simulator::{
    compare, run_acc_shared, run_braking, run_cruising, slip_metrics, write_utilization_csv, ControllerSpec, Scenario,
    SimError,
};
use mmctrl_core::stability::{bode_data, calibrate, max_stable_period, stability_surface, GridRange, StabilityError};
use mmctrl_core::supervisor::write_transition_log;
use serde::Serialize;
use thiserror::Error;

use output::{num, OutDir};

pub const SURFACE_HEADER: &str = "v_kmh,lambda,max_pole_mag";
pub const BODE_HEADER: &str = "omega_rad_s,mag_db,phase_deg";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("simulation blowup: {0}")]
    Blowup(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{failed} of {total} reproduction checks failed")]
    ChecksFailed { failed: usize, total: usize },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::ChecksFailed { .. } => 1,
            CliError::Usage(_) | CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Numeric(_) => 3,
            CliError::Infeasible(_) => 4,
            CliError::Blowup(_) => 5,
        }
    }
}

impl From<StabilityError> for CliError {
    fn from(e: StabilityError) -> Self {
        match e {
            StabilityError::InvalidGrid(_) | StabilityError::InvalidArgument(_) => CliError::Usage(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Blowup { .. } | SimError::Plant(_) => CliError::Blowup(e.to_string()),
            SimError::Infeasible { .. } | SimError::Scheduler(_) => CliError::Infeasible(e.to_string()),
            SimError::Supervisor(_) | SimError::Profile(_) | SimError::Config(_) | SimError::InvalidScenario(_) => {
                CliError::Usage(e.to_string())
            }
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mmctrl",
    version,
    about = "Multi-mode sampling-period analysis for an ABS control loop"
)]
pub struct Cli {
    /// JSON config; defaults are used when absent.
    #[arg(long, global = true, env = "MMCTRL_CONFIG")]
    pub config: Option<PathBuf>,
    /// Directory receiving outputs and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Largest closed-loop pole magnitude over a speed/slip grid.
    StabilitySurface(SurfaceArgs),
    /// Closed-loop frequency response at one operating point.
    Bode(BodeArgs),
    /// Largest stable sampling period at one operating point.
    MaxPeriod(MaxPeriodArgs),
    /// Run a braking, cruising or ACC-sharing scenario.
    #[command(subcommand)]
    Simulate(SimulateCmd),
    /// Run one braking scenario under several controllers.
    Compare(CompareArgs),
    /// Run a canned experiment and check it against its thresholds.
    Reproduce(ReproduceArgs),
    /// Grid-search PID gains for the configured stability regions.
    Calibrate(CalibrateArgs),
    /// Write a seeded synthetic drive profile.
    GenerateProfile(GenerateArgs),
    /// Print the effective config as JSON.
    ShowConfig,
}

#[derive(Debug, Args)]
pub struct SurfaceArgs {
    /// Sampling period (s).
    #[arg(long)]
    pub ts: f64,
    /// Speed grid `min:max:step` in km/h.
    #[arg(long)]
    pub v: Option<GridRange>,
    /// Slip grid `min:max:step`.
    #[arg(long)]
    pub lambda: Option<GridRange>,
    #[arg(long)]
    pub surface: Option<String>,
}

#[derive(Debug, Args)]
pub struct BodeArgs {
    /// Speed (km/h).
    #[arg(long)]
    pub v: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Sampling periods (s); one file per period.
    #[arg(long, num_args = 1..)]
    pub ts: Vec<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub surface: Option<String>,
}

#[derive(Debug, Args)]
pub struct MaxPeriodArgs {
    #[arg(long)]
    pub v: f64,
    #[arg(long)]
    pub lambda: f64,
    /// Search bounds (s).
    #[arg(long, default_value_t = 1e-5)]
    pub lo: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub hi: f64,
    #[arg(long)]
    pub surface: Option<String>,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// `multimode` or `fixed:<period in s>`.
    #[arg(long, default_value = "multimode")]
    pub controller: ControllerSpec,
    #[arg(long, default_value = "dry_asphalt")]
    pub surface: String,
    /// Initial speed (km/h).
    #[arg(long, default_value_t = 200.0)]
    pub v0: f64,
    /// Pedal pressure in [0, 1]; defaults to the panic-braking value.
    #[arg(long)]
    pub bpp: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum SimulateCmd {
    /// Straight-line stop until rest.
    Braking(ScenarioArgs),
    /// Follow a drive profile; defaults to the shipped city fixture.
    Cruise {
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// ABS and ACC on one ECU; defaults to the shipped highway fixture.
    AccShared {
        #[arg(long)]
        profile: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Controller variants, at least two.
    #[arg(long = "controller", required = true)]
    pub controllers: Vec<ControllerSpec>,
    #[arg(long, default_value = "dry_asphalt")]
    pub surface: String,
    #[arg(long, default_value_t = 200.0)]
    pub v0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Bundle {
    Table1,
    Surfaces,
    Fig8,
    Fig9,
    Fig10,
    Fig11,
    Fig13,
    All,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[arg(value_enum)]
    pub bundle: Bundle,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Skip the closed-loop braking screen.
    #[arg(long)]
    pub no_screen: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileKind {
    City,
    Highway,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum, default_value = "city")]
    pub kind: ProfileKind,
    /// Defaults to the seed of the shipped fixture.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Length (s).
    #[arg(long, default_value_t = 600.0)]
    pub duration: f64,
}

pub fn load_config(path: Option<&Path>) -> Result<Config, CliError> {
    match path {
        Some(p) => Ok(Config::load(p)?),
        None => Ok(Config::default()),
    }
}

/// The invocation recorded in the manifest, without the location-dependent
/// `--out-dir` and `--config` flags (the config is identified by its hash).
pub fn manifest_command(args: &[OsString]) -> String {
    let mut out = Vec::new();
    let mut skip = false;
    for a in args.iter().skip(1) {
        let s = a.to_string_lossy();
        if skip {
            skip = false;
            continue;
        }
        if s == "--out-dir" || s == "--config" {
            skip = true;
            continue;
        }
        if s.starts_with("--out-dir=") || s.starts_with("--config=") {
            continue;
        }
        out.push(s.into_owned());
    }
    out.join(" ")
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli, &manifest_command(&args)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli, command: &str) -> Result<(), CliError> {
    let cfg = load_config(cli.config.as_deref())?;
    let config_json = cfg.to_json();
    if let Command::ShowConfig = cli.command {
        print!("{config_json}");
        return Ok(());
    }
    let mut out = OutDir::create(&cli.out_dir)?;
    let result = match &cli.command {
        Command::StabilitySurface(a) => cmd_surface(a, &cfg, &mut out),
        Command::Bode(a) => cmd_bode(a, &cfg, &mut out),
        Command::MaxPeriod(a) => cmd_max_period(a, &cfg, &mut out),
        Command::Simulate(s) => cmd_simulate(s, &cfg, &mut out),
        Command::Compare(a) => cmd_compare(a, &cfg, &mut out),
        Command::Reproduce(a) => reproduce::run_bundle(a.bundle, &cfg, &mut out),
        Command::Calibrate(a) => cmd_calibrate(a, &cfg, &mut out),
        Command::GenerateProfile(a) => cmd_generate(a, &mut out),
        Command::ShowConfig => unreachable!("handled above"),
    };
    // Partial outputs of a failed run are still listed, so they can be diagnosed.
    out.finish(command.to_string(), &config_json)?;
    result
}

fn surface_name<'a>(given: &'a Option<String>, cfg: &'a Config) -> &'a str {
    given.as_deref().unwrap_or(&cfg.numerics.analysis_surface)
}

fn check_period(t: f64) -> Result<(), CliError> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("sampling period {t} must be positive")))
    }
}

fn cmd_surface(a: &SurfaceArgs, cfg: &Config, out: &mut OutDir) -> Result<(), CliError> {
    check_period(a.ts)?;
    let spec = cfg.loop_spec(surface_name(&a.surface, cfg))?;
    let v = a.v.unwrap_or(cfg.numerics.surface_v);
    let l = a.lambda.unwrap_or(cfg.numerics.surface_lambda);
    let surf = stability_surface(&v, &l, a.ts, &spec)?;
    out.write("stability_surface.csv", surface_csv(&surf).as_bytes())?;
    for d in surf.diagnostics.iter().filter(|d| d.at_rest) {
        eprintln!(
            "warning: cell v = {} km/h, lambda = {} left as NaN: {}",
            d.v_kmh, d.lambda, d.message
        );
    }
    let failed: Vec<String> = surf
        .diagnostics
        .iter()
        .filter(|d| !d.at_rest)
        .map(|d| format!("(v = {} km/h, lambda = {}): {}", d.v_kmh, d.lambda, d.message))
        .collect();
    if !failed.is_empty() {
        return Err(CliError::Numeric(format!(
            "{} cells failed: {}",
            failed.len(),
            failed.join("; ")
        )));
    }
    let max = surf
        .values
        .iter()
        .copied()
        .filter(|x| x.is_finite())
        .fold(0.0, f64::max);
    println!("{} cells, max |p| = {}", surf.values.len(), num(max));
    Ok(())
}

pub fn surface_csv(surf: &mmctrl_core::stability::StabilitySurface) -> String {
    let mut s = String::from(SURFACE_HEADER);
    s.push('\n');
    for (v, l, x) in surf.cells() {
        s.push_str(&format!("{},{},{}\n", num(v), num(l), num(x)));
    }
    s
}

pub fn bode_csv(b: &mmctrl_core::stability::BodeData) -> String {
    let mut s = String::from(BODE_HEADER);
    s.push('\n');
    for i in 0..b.omega.len() {
        s.push_str(&format!(
            "{},{},{}\n",
            num(b.omega[i]),
            num(b.magnitude_db[i]),
            num(b.phase_deg[i])
        ));
    }
    s
}

/// File name for a per-period output, e.g. `bode_ts_1e-4.csv`.
pub fn period_file(stem: &str, period: f64) -> String {
    format!("{stem}_ts_{period:e}.csv")
}

fn cmd_bode(a: &BodeArgs, cfg: &Config, out: &mut OutDir) -> Result<(), CliError> {
    let spec = cfg.loop_spec(surface_name(&a.surface, cfg))?;
    let v = a.v.unwrap_or(cfg.reproduce.bode_v_kmh);
    let l = a.lambda.unwrap_or(cfg.reproduce.bode_lambda);
    let periods = if a.ts.is_empty() {
        cfg.reproduce.bode_periods.clone()
    } else {
        a.ts.clone()
    };
    let points = a.points.unwrap_or(cfg.numerics.bode_points);
    for &t in &periods {
        check_period(t)?;
    }
    for t in periods {
        let sys = spec.closed_loop_at(v, l, t)?;
        let tf = sys.to_tf().map_err(StabilityError::from)?;
        let b = bode_data(&tf, points)?;
        out.write(&period_file("bode", t), bode_csv(&b).as_bytes())?;
        let max = spec.max_pole_at(v, l, t)?;
        println!("T = {t:e} s: max |p| = {}", num(max));
    }
    Ok(())
}

fn cmd_max_period(a: &MaxPeriodArgs, cfg: &Config, out: &mut OutDir) -> Result<(), CliError> {
    let spec = cfg.loop_spec(surface_name(&a.surface, cfg))?;
    let r = max_stable_period(a.v, a.lambda, (a.lo, a.hi), cfg.numerics.period_search_tol, &spec)?;
    out.write_json("max_period.json", &r)?;
    println!(
        "T* = {:e} s{}",
        r.period,
        if r.unbounded { " (upper bound stable)" } else { "" }
    );
    Ok(())
}

#[derive(Serialize)]
struct BrakingReport<'a> {
    scenario: &'a Scenario,
    stopping_distance_m: f64,
    stopped: bool,
    duration_s: f64,
    slip: mmctrl_core::simulator::SlipMetrics,
    bandwidth: &'a mmctrl_core::scheduler::BandwidthReport,
}

fn load_profile(path: &Option<PathBuf>, fallback: fn() -> DriveProfile) -> Result<DriveProfile, CliError> {
    match path {
        Some(p) => DriveProfile::from_path(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display()))),
        None => Ok(fallback()),
    }
}

fn keep_blowup_trace(e: &SimError, out: &mut OutDir) -> Result<(), CliError> {
    if let SimError::Blowup { trace, .. } = e {
        out.write_with("blowup_trace.csv", |w| trace.write_csv(w))?;
    }
    Ok(())
}

fn cmd_simulate(s: &SimulateCmd, cfg: &Config, out: &mut OutDir) -> Result<(), CliError> {
    match s {
        SimulateCmd::Braking(a) => {
            let mut sc = Scenario::panic_braking(a.v0, &a.surface, a.controller, cfg);
            if let Some(b) = a.bpp {
                sc.bpp = b;
            }
            let o = run_braking(&sc, cfg).or_else(|e| {
                keep_blowup_trace(&e, out)?;
                Err(CliError::from(e))
            })?;
            out.write_with("trace.csv", |w| o.trace.write_csv(w))?;
            out.write_with("dwell.csv", |w| write_dwell_trace(&o.segments, w))?;
            out.write_with("transitions.csv", |w| write_transition_log(&o.transitions, w))?;
            out.write_json(
                "report.json",
                &BrakingReport {
                    scenario: &sc,
                    stopping_distance_m: o.stopping_distance,
                    stopped: o.stopped,
                    duration_s: o.duration,
                    slip: slip_metrics(&o.trace, sc.lambda_d, cfg.simulation.slip_floor),
                    bandwidth: &o.report,
                },
            )?;
            println!(
                "{} on {}: distance {:.3} m in {:.3} s, savings {:.4}",
                sc.controller, sc.surface, o.stopping_distance, o.duration, o.report.savings
            );
            if !o.stopped {
                return Err(CliError::Infeasible(format!(
                    "no stop within the {} s time cap",
                    cfg.simulation.time_cap
                )));
            }
        }
        SimulateCmd::Cruise { profile } => {
            let p = load_profile(profile, DriveProfile::city_fixture)?;
            let o = run_cruising(&p, cfg).or_else(|e| {
                keep_blowup_trace(&e, out)?;
                Err(CliError::from(e))
            })?;
            out.write_with("trace.csv", |w| o.trace.write_csv(w))?;
            out.write_with("dwell.csv", |w| write_dwell_trace(&o.segments, w))?;
            out.write_with("transitions.csv", |w| write_transition_log(&o.transitions, w))?;
            out.write_json(
                "report.json",
                &serde_json::json!({
                    "distance_m": o.distance,
                    "transitions": o.transitions.len(),
                    "bandwidth": o.report,
                }),
            )?;
            let d = o.report.dwell;
            println!(
                "dwell N0 {:.4} N1 {:.4} E {:.4}, savings {:.4}",
                d.n0, d.n1, d.e, o.report.savings
            );
        }
        SimulateCmd::AccShared { profile } => {
            if !cfg.acc.enabled {
                return Err(CliError::Usage("acc-shared needs acc.enabled in the config".into()));
            }
            let p = load_profile(profile, DriveProfile::highway_fixture)?;
            let o = run_acc_shared(&p, cfg).or_else(|e| {
                keep_blowup_trace(&e, out)?;
                Err(CliError::from(e))
            })?;
            out.write_with("trace.csv", |w| o.trace.write_csv(w))?;
            out.write_with("utilization.csv", |w| write_utilization_csv(&o.combined, w))?;
            out.write_with("dwell.csv", |w| write_dwell_trace(&o.segments, w))?;
            out.write_json(
                "report.json",
                &serde_json::json!({
                    "abs": o.abs,
                    "acc": o.acc,
                    "combined_mean": o.combined_mean,
                    "combined_max": o.combined_max,
                    "baseline": o.baseline,
                }),
            )?;
            println!(
                "combined utilization mean {:.4}, max {:.4}, two-task fixed baseline {:.4}",
                o.combined_mean, o.combined_max, o.baseline
            );
        }
    }
    Ok(())
}

fn cmd_compare(a: &CompareArgs, cfg: &Config, out: &mut OutDir) -> Result<(), CliError> {
    if a.controllers.len() < 2 {
        return Err(CliError::Usage(format!(
            "compare needs at least two --controller values, got {}",
            a.controllers.len()
        )));
    }
    let sc = Scenario::panic_braking(a.v0, &a.surface, ControllerSpec::Multimode, cfg);
    let c = compare(&sc, &a.controllers, cfg)?;
    out.write_json("comparison.json", &c)?;
    for v in &c.variants {
        match (&v.result, &v.error) {
            (Some(r), _) => println!(
                "{}: distance {:.3} m, slip variance {:.3e}, savings {:.4}",
                v.label, r.stopping_distance, r.slip.variance, r.bandwidth.savings
            ),
            (None, Some(e)) => println!("{}: failed: {e}", v.label),
            (None, None) => {}
        }
    }
    Ok(())
}

fn cmd_calibrate(a: &CalibrateArgs, cfg: &Config, out: &mut OutDir) -> Result<(), CliError> {
    let base = cfg.loop_spec(&cfg.numerics.analysis_surface)?;
    let screen = |g: &mmctrl_core::discretization::PidGains| mmctrl_core::simulator::braking_screen(g, cfg);
    let r = calibrate(
        &cfg.numerics.calibration,
        &base,
        if a.no_screen { None } else { Some(&screen) },
    )?;
    out.write_json("calibration.json", &r)?;
    let tuned = Config {
        gains: r.gains,
        ..cfg.clone()
    };
    out.write("calibrated-config.json", tuned.to_json().as_bytes())?;
    println!(
        "kp = {}, ki = {}, kd = {}, objective = {}",
        r.gains.kp,
        r.gains.ki,
        r.gains.kd,
        num(r.objective)
    );
    Ok(())
}

fn cmd_generate(a: &GenerateArgs, out: &mut OutDir) -> Result<(), CliError> {
    if !(a.duration > 0.0 && a.duration.is_finite()) {
        return Err(CliError::Usage(format!("duration {} must be positive", a.duration)));
    }
    let (p, name) = match a.kind {
        ProfileKind::City => (generate_city(a.seed.unwrap_or(CITY_SEED), a.duration), "city.csv"),
        ProfileKind::Highway => (
            generate_highway(a.seed.unwrap_or(HIGHWAY_SEED), a.duration),
            "highway.csv",
        ),
    };
    out.write_with(name, |w| p.write_csv(w))?;
    println!("{} rows", p.rows().len());
    Ok(())
}
