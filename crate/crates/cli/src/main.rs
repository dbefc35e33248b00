use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use taskdob::experiment::{run_reaching_comparison, run_regulation_comparison, run_single};
use taskdob::export::{emit_plot_data, PlotSelection};
use taskdob::scenario::{resolve_scenario, ObserverVariant, Scenario};
use taskdob::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_PARSE: u8 = 3;
const EXIT_SIMULATION: u8 = 4;
const EXIT_PRECONDITION: u8 = 5;

#[derive(Parser)]
#[command(name = "taskdob", version, about = "Task-space disturbance observer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file, or a bundled fixture name (`regulation`, `reaching`).
    #[arg(long, short)]
    scenario: String,
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    /// Override the observer variant (none, mass_damper, nonlinear).
    #[arg(long)]
    variant: Option<ObserverVariant>,
    /// Override the noise seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its trace and metrics.
    Run(Common),
    /// Run the scenario with the mass-damper and nonlinear nominal models.
    CompareRegulation(Common),
    /// Run the reaching scenario with and without its perturbations.
    CompareReaching(Common),
    /// Run a scenario and write selected series (joint:N, ee:x|y|z, ee:path3d, fhat:x|y|z).
    PlotData {
        #[command(flatten)]
        common: Common,
        #[arg(long = "select", value_delimiter = ',')]
        select: Vec<String>,
    },
}

struct Failure {
    code: u8,
    error: Error,
}

fn load(common: &Common) -> Result<Scenario, Failure> {
    let mut scenario = resolve_scenario(&common.scenario).map_err(|error| Failure {
        code: EXIT_PARSE,
        error,
    })?;
    if let Some(v) = common.variant {
        scenario = scenario.with_variant(v);
    }
    if let Some(seed) = common.seed {
        scenario = scenario.with_seed(seed);
    }
    Ok(scenario)
}

fn classify(error: Error) -> Failure {
    let code = match &error {
        Error::Diverged { .. } | Error::StepFailed { .. } | Error::StaleObserverState { .. } | Error::NonFinite(_) => {
            EXIT_SIMULATION
        }
        Error::ComparisonMismatch(_) | Error::DegenerateChord(_) => EXIT_PRECONDITION,
        Error::UnknownSelection(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    };
    Failure { code, error }
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(common) => {
            let scenario = load(&common)?;
            let out = run_single(&scenario).map_err(classify)?;
            let d = out.report.deviation.movement_deviation_m;
            println!(
                "{} ({}): rms deviation x={:.3e} y={:.3e} z={:.3e} m",
                out.report.scenario, out.report.observer_variant, d[0], d[1], d[2]
            );
            print_written(&out.write(&common.out).map_err(classify)?);
        }
        Command::CompareRegulation(common) => {
            let scenario = load(&common)?;
            let out = run_regulation_comparison(&scenario).map_err(classify)?;
            let r = &out.report;
            for (name, d) in [
                (r.baseline_variant, r.deviation_baseline_m),
                (r.improved_variant, r.deviation_improved_m),
            ] {
                println!("{name}: x={:.3e} y={:.3e} z={:.3e} m", d[0], d[1], d[2]);
            }
            let p = r.reduction_percent;
            println!("reduction: x={:.2}% y={:.2}% z={:.2}%", p[0], p[1], p[2]);
            print_written(&out.write(&common.out).map_err(classify)?);
        }
        Command::CompareReaching(common) => {
            let scenario = load(&common)?;
            let out = run_reaching_comparison(&scenario).map_err(classify)?;
            let r = &out.report;
            println!("max joint deviation {:.4} rad", r.max_joint_deviation_rad);
            println!(
                "straightness/chord perturbed {:.4}, unperturbed {:.4}",
                r.straightness_ratio_perturbed, r.straightness_ratio_unperturbed
            );
            println!(
                "path distance {:.4e} m over chord {:.4} m",
                r.path_distance_m, r.chord_length_m
            );
            for (label, reached, err) in [
                ("perturbed", r.target_reached_perturbed, r.final_error_perturbed_m),
                ("unperturbed", r.target_reached_unperturbed, r.final_error_unperturbed_m),
            ] {
                if !reached {
                    eprintln!("warning: {label} run did not reach the target (final error {err:.4e} m)");
                }
            }
            print_written(&out.write(&common.out).map_err(classify)?);
        }
        Command::PlotData { common, select } => {
            let scenario = load(&common)?;
            for key in &select {
                PlotSelection::parse(key, scenario.model.dof()).map_err(classify)?;
            }
            let out = run_single(&scenario).map_err(classify)?;
            print_written(&emit_plot_data(&out.trace, &select, &common.out).map_err(classify)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error}");
            ExitCode::from(code)
        }
    }
}
