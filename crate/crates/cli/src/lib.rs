//! `dfa-fusion` command line: simulate sensor logs, replay them through the
//! filter, compare runs and serve the treasure-hunt game.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use dfa_fusion::config::Config;
use dfa_fusion::geodesy::GeodeticPosition;
use dfa_fusion::pipeline::FusionMode;
use dfa_fusion::replay::{compare, load_inputs, read_truth_csv, run_fusion, ReplayError, RunReport};
use dfa_fusion::sim::{default_origin, emit_streams, MotionProfile, SimConfig};

pub mod serve;

#[derive(Debug, Parser)]
#[command(name = "dfa-fusion", version, about = "GPS/IMU fusion with automaton model selection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate GPS, IMU and truth logs for a motion profile.
    Simulate(SimulateArgs),
    /// Replay GPS and IMU logs through the filter.
    Fuse(FuseArgs),
    /// Compare two run reports (A against B).
    Compare(CompareArgs),
    /// Run the game service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// stationary, constant_walk, varying_speed or scripted_waypoints
    #[arg(long)]
    pub profile: String,
    #[arg(long, default_value_t = 600.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Config file; its sim_* keys set the sensor noise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub gps_sigma: Option<f64>,
    #[arg(long)]
    pub accel_sigma: Option<f64>,
    /// lat,lon,alt of the local frame origin
    #[arg(long, value_parser = parse_origin)]
    pub origin: Option<GeodeticPosition>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub gps: PathBuf,
    #[arg(long)]
    pub imu: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "dfa")]
    pub mode: FusionMode,
    #[arg(long)]
    pub out_traj: Option<PathBuf>,
    #[arg(long)]
    pub out_err: Option<PathBuf>,
    #[arg(long)]
    pub out_models: Option<PathBuf>,
    /// Run report, JSON.
    #[arg(long)]
    pub out_report: Option<PathBuf>,
    #[arg(long)]
    pub out_geojson: Option<PathBuf>,
    /// Truth CSV from `simulate`; adds the truth RMS to the report.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Origin the truth CSV is relative to (lat,lon,alt).
    #[arg(long, value_parser = parse_origin)]
    pub origin: Option<GeodeticPosition>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Also write the comparison as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long)]
    pub arena_radius: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of UI assets served at `/`.
    #[arg(long, default_value = "ui")]
    pub static_dir: PathBuf,
    /// Tick period in milliseconds; defaults to the filter cycle period.
    #[arg(long)]
    pub tick_ms: Option<u64>,
}

fn parse_origin(s: &str) -> Result<GeodeticPosition, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let [lat, lon, alt] = parts[..] else {
        return Err("expected lat,lon,alt".into());
    };
    GeodeticPosition::new(lat, lon, alt).map_err(|e| e.to_string())
}

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad or missing input; exit code 1.
    Input(String),
    /// The filter lost covariance health; exit code 2.
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<ReplayError> for CliError {
    fn from(e: ReplayError) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

fn input_err(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn load_config(path: Option<&Path>) -> Result<Config, CliError> {
    match path {
        Some(p) => Config::load(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display()))),
        None => Ok(Config::default()),
    }
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn simulate(args: &SimulateArgs) -> Result<String, CliError> {
    let config = load_config(args.config.as_deref())?;
    let profile = MotionProfile::named(&args.profile, args.duration).map_err(input_err)?;
    let mut sim = SimConfig {
        seed: args.seed,
        duration_s: args.duration,
        imu_period_s: config.fusion.imu_dt_s,
        origin: args.origin.unwrap_or_else(default_origin),
        ..SimConfig::default()
    }
    .with_noise(&config.sim);
    if let Some(s) = args.gps_sigma {
        sim.gps_sigma_m = s;
    }
    if let Some(s) = args.accel_sigma {
        sim.accel_sigma = s;
    }
    let streams = emit_streams(&profile, &sim).map_err(input_err)?;
    streams.write_to_dir(&args.out_dir).map_err(input_err)?;
    let meta = serde_json::json!({
        "profile": args.profile,
        "duration_s": sim.duration_s,
        "seed": sim.seed,
        "gps_period_s": sim.gps_period_s,
        "imu_period_s": sim.imu_period_s,
        "gps_sigma_m": sim.gps_sigma_m,
        "accel_sigma": sim.accel_sigma,
        "origin": [sim.origin.latitude_deg(), sim.origin.longitude_deg(), sim.origin.altitude_m()],
    });
    write(&args.out_dir.join("meta.json"), &serde_json::to_string_pretty(&meta).expect("json"))?;
    Ok(format!(
        "{}: {} GGA lines, {} IMU rows ({})",
        args.out_dir.display(),
        streams.nmea.len(),
        streams.imu.len(),
        args.profile
    ))
}

pub fn fuse(args: &FuseArgs) -> Result<String, CliError> {
    let config = load_config(args.config.as_deref())?;
    let inputs = load_inputs(&args.gps, &args.imu)?;
    let mut run = run_fusion(&inputs, &config.fusion, args.mode)?;
    if let Some(truth_path) = &args.truth {
        let truth = read_truth_csv(truth_path)?;
        run.attach_truth(&truth, &args.origin.unwrap_or_else(default_origin));
    }
    if let Some(p) = &args.out_traj {
        write(p, &run.trajectory_csv())?;
    }
    if let Some(p) = &args.out_err {
        write(p, &run.errors_csv())?;
    }
    if let Some(p) = &args.out_models {
        write(p, &run.models_csv())?;
    }
    if let Some(p) = &args.out_geojson {
        write(p, &run.geojson().to_string())?;
    }
    if let Some(p) = &args.out_report {
        write(p, &serde_json::to_string_pretty(&run.report).expect("json"))?;
    }
    Ok(summary(&run.report, &inputs.gps_tally.to_string()))
}

fn summary(r: &RunReport, gps: &str) -> String {
    let mut s = format!(
        "mode {}: {} cycles ({} updates, {} coasting), rms innovation {:.4} m, max {:.4} m\n\
         occupancy P0 {:.3} P1 {:.3} P2 {:.3}\ngps: {gps}",
        r.mode,
        r.cycles,
        r.updates,
        r.coasting_cycles,
        r.rms_innovation_m,
        r.max_innovation_m,
        r.occupancy[0],
        r.occupancy[1],
        r.occupancy[2],
    );
    if let Some(t) = r.truth_rms_m {
        s.push_str(&format!("\ntruth rms {t:.4} m"));
    }
    s
}

fn read_report(path: &Path) -> Result<RunReport, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn compare_reports(args: &CompareArgs) -> Result<String, CliError> {
    let a = read_report(&args.a)?;
    let b = read_report(&args.b)?;
    let cmp = compare(&a, &b)?;
    if let Some(p) = &args.out {
        write(p, &serde_json::to_string_pretty(&cmp).expect("json"))?;
    }
    Ok(cmp.table())
}

pub fn serve_command(args: &ServeArgs) -> Result<(), CliError> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(r) = args.arena_radius {
        config.game.arena_radius_m = r;
    }
    // fail fast on a layout that can never be placed
    dfa_fusion::game::layout_items(&config.game, args.seed).map_err(input_err)?;
    let tick = args
        .tick_ms
        .map(Duration::from_millis)
        .unwrap_or_else(|| Duration::from_secs_f64(config.fusion.cycle_period_s()));
    let state = serve::ServeState {
        config,
        seed: args.seed,
        tick,
        static_dir: args.static_dir.clone(),
    };
    let runtime = tokio::runtime::Runtime::new().map_err(input_err)?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port))
            .await
            .map_err(|e| CliError::Input(format!("cannot bind {}:{}: {e}", args.host, args.port)))?;
        eprintln!("listening on http://{}", listener.local_addr().map_err(input_err)?);
        serve::serve(listener, state).await.map_err(input_err)
    })
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a).map(|s| println!("{s}")),
        Command::Fuse(a) => fuse(a).map(|s| println!("{s}")),
        Command::Compare(a) => compare_reports(a).map(|s| print!("{s}")),
        Command::Serve(a) => serve_command(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
