//! `wmm`: plan, verify, check proximity, render and benchmark scenarios.
//!
//! Exit codes: 0 success, 1 the task failed (no plan, verification or
//! oracle mismatch), 2 unreadable or invalid input, 3 planner timeout.

mod bench;
mod proxcheck;
mod render;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use wmm_core::costs::{pose_error, CostDesign};
use wmm_core::planner::{plan, PlanContext};
use wmm_core::scenario::{Scenario, ScenarioFile};
use wmm_core::sim::{rollout, SimOptions};
use wmm_core::trajopt::{within_tolerance, Trajectory};
use wmm_core::{coulomb_residuals, Error};

#[derive(Parser)]
#[command(name = "wmm", version, about = "Planar whole-body manipulation planner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan a scenario and write the trajectory, tree and statistics.
    Plan {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Wall-clock budget in seconds (overrides the scenario file).
        #[arg(long)]
        timeout: Option<f64>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Replay a trajectory in the simulator and report its errors.
    Verify {
        trajectory: PathBuf,
        scenario: PathBuf,
        /// Friction coefficient multiplier applied to the simulated object.
        #[arg(long, default_value_t = 1.0)]
        mu_scale: f64,
    },
    /// Compare closed-form proximity against a brute-force oracle.
    ProxCheck {
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write one SVG frame per trajectory state.
    Render {
        trajectory: PathBuf,
        scenario: PathBuf,
        #[arg(long, default_value = "frames")]
        out: PathBuf,
    },
    /// Plan each scenario repeatedly and tabulate success and timing.
    Bench {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        #[arg(long, default_value_t = 10)]
        repeats: u64,
        /// Override the contact cost design of every scenario.
        #[arg(long, value_enum)]
        cost: Option<CostArg>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CostArg {
    Ours,
    Baseline,
}

impl From<CostArg> for CostDesign {
    fn from(c: CostArg) -> Self {
        match c {
            CostArg::Ours => CostDesign::Manipulability,
            CostArg::Baseline => CostDesign::Baseline,
        }
    }
}

/// A failure that maps to an exit code.
enum Failure {
    Task(String),
    Input(String),
    Timeout,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Input(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Plan {
            scenario,
            seed,
            timeout,
            out,
        } => cmd_plan(&scenario, seed, timeout, &out),
        Command::Verify {
            trajectory,
            scenario,
            mu_scale,
        } => cmd_verify(&trajectory, &scenario, mu_scale),
        Command::ProxCheck { trials, seed } => proxcheck::run(trials, seed),
        Command::Render {
            trajectory,
            scenario,
            out,
        } => cmd_render(&trajectory, &scenario, &out),
        Command::Bench {
            scenarios,
            repeats,
            cost,
        } => bench::run(&scenarios, repeats, cost.map(Into::into)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Task(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Timeout) => {
            eprintln!("planner timed out");
            ExitCode::from(3)
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

/// Loads a scenario file; parse errors carry the file name and the line
/// and column reported by the TOML parser.
pub(crate) fn load_scenario(path: &Path) -> Result<(ScenarioFile, Scenario), Failure> {
    let text = read(path)?;
    let file = ScenarioFile::parse(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let scenario = file
        .build()
        .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    Ok((file, scenario))
}

/// Trajectory files hold `null` when planning found no path.
fn load_trajectory(path: &Path) -> Result<Option<Trajectory>, Failure> {
    let text = read(path)?;
    serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Input(e.to_string()))?;
    fs::write(path, text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct PlanReport<'a> {
    scenario: &'a str,
    seed: u64,
    success: bool,
    timed_out: bool,
    wall_time: f64,
    nodes: usize,
    iterations: usize,
    extends: usize,
    steps: usize,
}

fn cmd_plan(path: &Path, seed: Option<u64>, timeout: Option<f64>, out: &Path) -> Result<(), Failure> {
    let (_, sc) = load_scenario(path)?;
    let mut settings = sc.planner_with_seed(seed.unwrap_or(sc.planner.seed));
    if let Some(t) = timeout {
        settings.timeout = t;
    }
    let ctx = PlanContext {
        plant: &sc.plant,
        cost: &sc.costs,
        phase: &sc.phase,
        settings: &settings,
    };
    let result = plan(&ctx, &sc.q_init, &sc.goal)?;
    fs::create_dir_all(out).map_err(|e| Failure::Input(format!("{}: {e}", out.display())))?;
    let report = PlanReport {
        scenario: &sc.name,
        seed: settings.seed,
        success: result.success,
        timed_out: result.stats.timed_out,
        wall_time: result.stats.wall_time,
        nodes: result.stats.nodes,
        iterations: result.stats.iterations,
        extends: result.stats.extends,
        steps: result.path.as_ref().map_or(0, |p| p.steps.len()),
    };
    write_json(&out.join("stats.json"), &report)?;
    write_json(&out.join("tree.json"), &result.tree)?;
    write_json(&out.join("trajectory.json"), &result.path)?;
    println!(
        "{}: success {} in {:.2} s, {} nodes, {} steps",
        report.scenario, report.success, report.wall_time, report.nodes, report.steps
    );
    if result.success {
        Ok(())
    } else if result.stats.timed_out {
        Err(Failure::Timeout)
    } else {
        Err(Failure::Task("no plan found".into()))
    }
}

#[derive(Serialize)]
struct VerifyReport {
    mu_scale: f64,
    steps: usize,
    /// `(x m, y m, theta rad)` from the goal.
    terminal_error: [f64; 3],
    within_tolerance: bool,
    /// Largest Coulomb residual violation over the contacts of each step.
    coulomb_violation: Vec<f64>,
    /// Largest object-pose gap between simulated and planned states.
    max_state_gap: f64,
    failure: Option<String>,
}

fn cmd_verify(traj_path: &Path, scenario_path: &Path, mu_scale: f64) -> Result<(), Failure> {
    let (_, sc) = load_scenario(scenario_path)?;
    let Some(traj) = load_trajectory(traj_path)? else {
        return Err(Failure::Task("the trajectory file holds no plan".into()));
    };
    let options = SimOptions {
        mu_scale,
        ..SimOptions::default()
    };
    let trace = rollout(&sc.plant, &traj.start, &traj.inputs(), &options)?;
    let mu = sc.plant.object.mu * mu_scale;
    let coulomb_violation = trace
        .forces
        .iter()
        .map(|fs| fs.iter().map(|c| coulomb_residuals(c.f, c.v, mu).violation()).fold(0.0, f64::max))
        .collect();
    let max_state_gap = trace
        .states
        .iter()
        .zip(traj.states())
        .map(|(a, b)| sc.planner.distance(&a.q_u, &b.q_u))
        .fold(0.0, f64::max);
    let end = trace.last_state().q_u;
    let within = trace.failure.is_none() && within_tolerance(&end, &sc.goal, sc.planner.goal_tolerance);
    let report = VerifyReport {
        mu_scale,
        steps: trace.states.len() - 1,
        terminal_error: pose_error(&end, &sc.goal),
        within_tolerance: within,
        coulomb_violation,
        max_state_gap,
        failure: trace.failure.clone(),
    };
    println!("{}", serde_json::to_string_pretty(&report).map_err(|e| Failure::Input(e.to_string()))?);
    if within {
        Ok(())
    } else {
        Err(Failure::Task("simulated terminal pose is outside the goal tolerance".into()))
    }
}

fn cmd_render(traj_path: &Path, scenario_path: &Path, out: &Path) -> Result<(), Failure> {
    let (_, sc) = load_scenario(scenario_path)?;
    let traj = load_trajectory(traj_path)?;
    fs::create_dir_all(out).map_err(|e| Failure::Input(format!("{}: {e}", out.display())))?;
    let n = render::write_frames(&sc.plant, traj.as_ref(), &sc.goal, out)
        .map_err(|e| Failure::Input(format!("{}: {e}", out.display())))?;
    println!("wrote {n} frames to {}", out.display());
    Ok(())
}
