use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dronepida::linear::{closed_loop_matrix, linearize_hover};
use dronepida::sim::{self, SimError};
use dronepida::tuning::{tune, ChannelTuning};
use dronepida::{Channel, ConfigError, LinearError, Scenario};
use nalgebra::DMatrix;

mod plot;

const EXIT_FAILURE: u8 = 1;
const EXIT_DIVERGED: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "dronepida", version, about = "Quadcopter PIDA/SDSA flight simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (TOML). Defaults to the built-in scenario of the verb.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Four-channel step response with metrics.
    Step(Common),
    /// Approach a target and hold the safe distance.
    Mission(Common),
    /// Tune controller gains with SDSA.
    Tune {
        #[command(flatten)]
        common: Common,
        /// Channels to tune.
        #[arg(long, value_delimiter = ',', default_values = ["roll", "pitch", "yaw", "altitude"])]
        channels: Vec<ChannelArg>,
    },
    /// Linearize at hover and certify the closed loop.
    Analyze(Common),
    /// Render trajectory or convergence-history CSVs to SVG.
    Plot {
        #[command(flatten)]
        common: Common,
        /// CSV files to render.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ChannelArg {
    Roll,
    Pitch,
    Yaw,
    Altitude,
}

impl From<ChannelArg> for Channel {
    fn from(c: ChannelArg) -> Self {
        match c {
            ChannelArg::Roll => Channel::Roll,
            ChannelArg::Pitch => Channel::Pitch,
            ChannelArg::Yaw => Channel::Yaw,
            ChannelArg::Altitude => Channel::Altitude,
        }
    }
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl ToString) -> Self {
        Self { code: EXIT_CONFIG, message: message.to_string() }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self { code: EXIT_FAILURE, message: format!("{}: {e}", path.display()) }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let code = match e {
            SimError::Diverged { .. } => EXIT_DIVERGED,
            SimError::Config(_) | SimError::MissingSection(_) | SimError::Controller(_) => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::config(e)
    }
}

fn load(common: &Common, fallback: fn() -> Scenario) -> Result<Scenario, Failure> {
    let mut sc = match &common.scenario {
        Some(path) => Scenario::load(path)?,
        None => fallback(),
    };
    if let Some(seed) = common.seed {
        sc.seed = seed;
    }
    Ok(sc)
}

fn out_dir(common: &Common) -> Result<&Path, Failure> {
    fs::create_dir_all(&common.out).map_err(|e| Failure::io(&common.out, e))?;
    Ok(&common.out)
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::io(path, e))
}

fn run_step(common: &Common) -> Result<(), Failure> {
    let sc = load(common, Scenario::step_default)?;
    let mut run = sim::run_step_response(&sc)?;
    let dir = out_dir(common)?;
    let csv = dir.join(format!("{}_trajectory.csv", sc.name));
    run.trajectory.save(&csv)?;
    run.report.trajectory_file = Some(csv.display().to_string());
    write(&dir.join(format!("{}_report.json", sc.name)), &run.report.to_json())?;
    if let Some(step) = &run.report.step {
        for c in Channel::ALL {
            match step.get(c).metrics() {
                Some(m) => println!(
                    "{c:<8} overshoot {:6.2} %  settling {:5.3} s  steady-state {:+.2e}",
                    m.overshoot_pct, m.settling_time, m.steady_state_error
                ),
                None => println!("{c:<8} {:?}", step.get(c)),
            }
        }
    }
    Ok(())
}

fn run_mission(common: &Common) -> Result<(), Failure> {
    let sc = load(common, Scenario::mission_default)?;
    let mut run = sim::run_mission(&sc)?;
    let dir = out_dir(common)?;
    let csv = dir.join(format!("{}_trajectory.csv", sc.name));
    run.trajectory.save(&csv)?;
    run.report.trajectory_file = Some(csv.display().to_string());
    write(&dir.join(format!("{}_report.json", sc.name)), &run.report.to_json())?;
    let m = run.report.mission.expect("mission metrics");
    match m.time_to_arrive {
        Some(t) => println!(
            "arrived at {t:.3} s; hold distance [{:.3}, {:.3}] m; final height {:.3} m",
            m.min_hold_distance.unwrap_or(f64::NAN),
            m.max_hold_distance.unwrap_or(f64::NAN),
            m.final_height
        ),
        None => println!("safe distance not reached; final height {:.3} m", m.final_height),
    }
    Ok(())
}

fn write_history(path: &Path, t: &ChannelTuning) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Failure::io(path, e))?;
    w.write_record(["iteration", "evaluations", "best_value"]).map_err(|e| Failure::io(path, e))?;
    for h in &t.history {
        w.write_record([h.iteration.to_string(), h.evaluations.to_string(), format!("{:?}", h.best_value)])
            .map_err(|e| Failure::io(path, e))?;
    }
    w.flush().map_err(|e| Failure::io(path, e))
}

fn run_tune(common: &Common, channels: &[ChannelArg]) -> Result<(), Failure> {
    let mut sc = load(common, Scenario::step_default)?;
    if common.seed.is_some() {
        sc.sdsa.seed = sc.seed;
    }
    let channels: Vec<Channel> = channels.iter().map(|c| (*c).into()).collect();
    let result = tune(&sc, &channels)?;
    let dir = out_dir(common)?;
    for t in &result.channels {
        write_history(&dir.join(format!("history_{}.csv", t.channel)), t)?;
        println!("{:<8} cost {:.4} after {} evaluations: {:?}", t.channel, t.cost, t.evaluations, t.gains);
    }
    sc.gains = result.gains;
    let tuned = dir.join(format!("{}_tuned.toml", sc.name));
    sc.save(&tuned)?;
    let json = serde_json::to_string_pretty(&result).expect("tuning result serializes");
    write(&dir.join("tuning.json"), &json)?;
    println!("tuned scenario written to {}", tuned.display());
    Ok(())
}

fn run_analyze(common: &Common) -> Result<(), Failure> {
    let sc = load(common, Scenario::step_default)?;
    sc.validate()?;
    let model = linearize_hover(&sc.quad).map_err(Failure::config)?;
    let report = match sim::certify(&sc) {
        Ok(r) => r,
        Err(LinearError::EigenNoConvergence) => {
            return Err(Failure { code: EXIT_FAILURE, message: LinearError::EigenNoConvergence.to_string() })
        }
        Err(e) => return Err(Failure::config(e)),
    };
    let dir = out_dir(common)?;
    let json = serde_json::json!({
        "scenario": sc.name,
        "open_loop": { "a": rows(&model.a), "b": rows(&model.b), "c": rows(&model.c) },
        "closed_loop": rows(&closed_loop_matrix(&model, &sc.gains).map_err(Failure::config)?),
        "stability": report,
    });
    write(&dir.join(format!("{}_analysis.json", sc.name)), &serde_json::to_string_pretty(&json).expect("serializes"))?;
    println!("max real part {:.6e}; {}", report.max_real_part, if report.is_stable { "stable" } else { "NOT stable" });
    if report.is_stable {
        Ok(())
    } else {
        Err(Failure { code: EXIT_DIVERGED, message: "closed loop is not asymptotically stable".into() })
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn run_plot(common: &Common, inputs: &[PathBuf]) -> Result<(), Failure> {
    let dir = out_dir(common)?;
    for input in inputs {
        let written = plot::render(input, dir)?;
        for p in written {
            println!("{}", p.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Step(c) => run_step(c),
        Command::Mission(c) => run_mission(c),
        Command::Tune { common, channels } => run_tune(common, channels),
        Command::Analyze(c) => run_analyze(c),
        Command::Plot { common, inputs } => run_plot(common, inputs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
