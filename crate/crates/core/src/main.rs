use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use gridprice::export::{export_trajectory, plot_sidecar};
use gridprice::report::{compare, run, RunOutcome};
use gridprice::scenario::{load_scenario, ControllerChoice, Scenario};
use gridprice::ControllerState;

#[derive(Parser)]
#[command(name = "gridprice", version, about = "Distributed real-time pricing on a swing-equation power network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one controller and write trajectory, plots and report.
    Run(Common),
    /// Simulate both controllers and write a joint report.
    Compare(Common),
    /// Print the optimal operating point of the scenario.
    Equilibrium(Common),
    /// Load and validate a scenario without running it.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file; the bundled four-area benchmark when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, value_parser = parse_controller)]
    controller: Option<ControllerChoice>,
    /// Output directory (overrides the scenario's).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
}

fn parse_controller(s: &str) -> Result<ControllerChoice, String> {
    s.parse()
}

type Failure = Box<dyn std::error::Error>;

fn load(args: &Common) -> Result<Scenario, Failure> {
    let mut s = match &args.scenario {
        Some(path) => load_scenario(path)?,
        None => Scenario::four_area(),
    };
    if let Some(c) = args.controller {
        s = s.with_controller(c)?;
    }
    if let Some(dt) = args.dt {
        s = s.with_dt(dt)?;
    }
    if let Some(t) = args.t_end {
        s = s.with_t_end(t)?;
    }
    if let Some(out) = &args.out {
        s.output_dir = out.clone();
    }
    Ok(s)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn write_run(dir: &Path, outcome: &RunOutcome) -> Result<(), Failure> {
    let name = &outcome.report.controller;
    let csv = format!("{name}.csv");
    export_trajectory(&outcome.trajectory, dir.join(&csv))?;
    write_json(&dir.join(format!("{name}.plots.json")), &plot_sidecar(&outcome.trajectory, &csv))?;
    write_json(&dir.join(format!("{name}.report.json")), &outcome.report)?;
    Ok(())
}

#[derive(Serialize)]
struct Timing<'a> {
    controller: &'a str,
    wall_clock_seconds: f64,
}

fn verdict(converged: bool) -> ExitCode {
    if converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn execute(cli: Cli) -> Result<ExitCode, Failure> {
    match cli.command {
        Command::Validate(args) => {
            let s = load(&args)?;
            println!(
                "ok: {} (n = {}, m = {}, m_c = {}, controller = {}, events = {})",
                s.name,
                s.physics.node_count(),
                s.physics.edge_count(),
                s.comm.edge_count(),
                s.controller.name(),
                s.events.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Equilibrium(args) => {
            let s = load(&args)?;
            let sys = s.system()?;
            let eq = sys.solve_equilibrium()?;
            let (ug, ud) = sys.dispatch(&eq)?;
            let v = match &eq.controller {
                ControllerState::Gradient(c) => Some(c.v.iter().copied().collect::<Vec<_>>()),
                ControllerState::InternalModel(_) => None,
            };
            let value = serde_json::json!({
                "controller": s.controller.name(),
                "lambda_star": eq.controller.lam()[0],
                "lambda": eq.controller.lam().iter().collect::<Vec<_>>(),
                "ug": ug.iter().collect::<Vec<_>>(),
                "ud": ud.iter().collect::<Vec<_>>(),
                "eta": eq.physical.eta.iter().collect::<Vec<_>>(),
                "p": eq.physical.p.iter().collect::<Vec<_>>(),
                "v": v,
                "kkt_residual": sys.kkt_residual(&eq)?,
            });
            println!("{}", serde_json::to_string_pretty(&value)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(args) => {
            let s = load(&args)?;
            std::fs::create_dir_all(&s.output_dir)?;
            let outcome = run(&s, None)?;
            write_run(&s.output_dir, &outcome)?;
            let seconds = outcome.elapsed.as_secs_f64();
            write_json(
                &s.output_dir.join(format!("{}.timing.json", outcome.report.controller)),
                &Timing {
                    controller: &outcome.report.controller,
                    wall_clock_seconds: seconds,
                },
            )?;
            let r = &outcome.report;
            println!(
                "{}: {} samples, final max|omega| = {:.3e}, kkt = {:.3e}, converged = {}, {:.2} s",
                r.controller, r.samples, r.final_omega_max, r.kkt_residual, r.converged, seconds
            );
            Ok(verdict(r.converged))
        }
        Command::Compare(args) => {
            let s = load(&args)?;
            std::fs::create_dir_all(&s.output_dir)?;
            let outcome = compare(&s)?;
            write_run(&s.output_dir, &outcome.internal_model)?;
            write_run(&s.output_dir, &outcome.gradient)?;
            write_json(&s.output_dir.join("compare.report.json"), &outcome.report)?;
            let timings = [&outcome.internal_model, &outcome.gradient].map(|o| Timing {
                controller: &o.report.controller,
                wall_clock_seconds: o.elapsed.as_secs_f64(),
            });
            write_json(&s.output_dir.join("compare.timing.json"), &timings)?;
            let r = &outcome.report;
            println!(
                "lambda_1 total variation: internal-model {:.6e}, gradient {:.6e} -> {}",
                r.lambda1_total_variation_internal_model,
                r.lambda1_total_variation_gradient,
                if r.gradient_more_oscillatory { "pass" } else { "fail" }
            );
            Ok(verdict(r.converged && r.gradient_more_oscillatory))
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
