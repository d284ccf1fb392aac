use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use icon_cli::commands::{self, Ablation, CliError, Overrides};
use icon_core::scenario::ScenarioKind;

#[derive(Parser)]
#[command(
    name = "icon",
    version,
    about = "Class- and domain-incremental learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every configured seed.
    Run(CommonArgs),
    /// Run the CAST/IC ablation grid.
    Ablation(CommonArgs),
    /// Print the resolved config and derived quantities.
    Validate(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Config file, or a preset name (quick, vil_small, cil_small).
    #[arg(long)]
    config: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated: no-cast, no-ic, no-dt.
    #[arg(long)]
    ablate: Option<String>,
    #[arg(long, value_parser = parse_kind)]
    scenario: Option<ScenarioKind>,
}

fn parse_kind(s: &str) -> Result<ScenarioKind, String> {
    s.parse()
        .map_err(|e: icon_core::scenario::ScenarioError| e.to_string())
}

fn overrides(args: &CommonArgs) -> Result<Overrides, CliError> {
    Ok(Overrides {
        seed: args.seed,
        out: args.out.clone(),
        ablate: match &args.ablate {
            Some(list) => Ablation::parse_list(list)?,
            None => Vec::new(),
        },
        scenario: args.scenario,
    })
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let cfg = commands::load_config(&args.config, &overrides(&args)?)?;
            let agg = commands::cmd_run(&cfg)?;
            for s in &agg.seeds {
                println!(
                    "seed {}: avg_acc {:.4} forgetting {:.4}",
                    s.seed, s.avg_acc, s.forgetting
                );
            }
            println!(
                "mean: avg_acc {:.4} ± {:.4}, forgetting {:.4} ± {:.4}",
                agg.avg_acc_mean, agg.avg_acc_std, agg.forgetting_mean, agg.forgetting_std
            );
            println!("outputs in {}", cfg.run.out_dir.display());
        }
        Command::Ablation(args) => {
            let cfg = commands::load_config(&args.config, &overrides(&args)?)?;
            let rows = commands::cmd_ablation(&cfg)?;
            print!("{}", commands::ablation_csv(&rows));
        }
        Command::Validate(args) => {
            let cfg = commands::load_config(&args.config, &overrides(&args)?)?;
            print!("{}", commands::cmd_validate(&cfg));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
