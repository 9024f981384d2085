use alloc_layers_cli::commands::{self, BaselineArgs, CurvesArgs, EvalArgs, GradcheckArgs, ProjectArgs, TrainArgs};
use alloc_layers_cli::exit::{exit_code, OK};
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "alloc-layers", version, about = "Feasible resource allocation layers for DDPG")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Map raw inputs onto the feasible set and report per-instance checks.
    Project(ProjectArgs),
    /// Compare analytic Jacobians against finite differences.
    Gradcheck(GradcheckArgs),
    /// Train a DDPG agent.
    Train(TrainArgs),
    /// Evaluate a checkpoint greedily.
    Eval(EvalArgs),
    /// Score the greedy-static or do-nothing baseline.
    Baseline(BaselineArgs),
    /// Collect learning curves from several runs into one long CSV.
    Curves(CurvesArgs),
}

fn run(cli: Cli, argv: Vec<String>) -> anyhow::Result<()> {
    match cli.command {
        Command::Project(a) => commands::project(&a, argv),
        Command::Gradcheck(a) => commands::gradcheck_cmd(&a),
        Command::Train(a) => commands::train_cmd(&a, argv).map(drop),
        Command::Eval(a) => commands::eval_cmd(&a, argv).map(drop),
        Command::Baseline(a) => commands::baseline_cmd(&a, argv).map(drop),
        Command::Curves(a) => commands::curves_cmd(&a, argv),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ALLOC_LAYERS_LOG", "warn")).init();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    let code = match run(cli, argv) {
        Ok(()) => OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    };
    std::process::exit(code);
}
