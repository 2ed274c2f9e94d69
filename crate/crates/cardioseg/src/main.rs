use std::path::PathBuf;
use std::process::ExitCode;

use cardioseg::commands::{self, Context};
use cardioseg::config::RunConfig;
use cardioseg::{report, Error};
use clap::{Parser, Subcommand};

const EXIT_CODES: &str = "\
Exit status:
  0  success
  2  invalid command line
  3  configuration or parse error (E_CONFIG, E_PARSE)
  4  unreadable or missing input, unwritable output (E_IO, E_MISSING_FILE, E_IMAGE)
  5  checkpoint unreadable or built for another model (E_CHECKPOINT, E_FINGERPRINT)
  6  training diverged (E_NON_FINITE)
  7  invalid data (E_DATA)

Diagnostics go to stderr as `error[CODE]: message`.";

#[derive(Parser)]
#[command(name = "cardioseg", version, about = "Chest organ segmentation and cardiothoracic ratio", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory. Defaults to `$CARDIOSEG_OUT/<command>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write overlay images (predict, ctr, evaluate).
    #[arg(long, global = true)]
    overlay: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Render synthetic phantoms with a manifest and ground-truth CTR table.
    GeneratePhantoms,
    /// Train a segmentor (and discriminator) and write a checkpoint.
    Train,
    /// Segment images with a checkpoint and measure their CTR.
    Predict,
    /// Measure the CTR of existing masks.
    Ctr,
    /// Score a checkpoint against ground-truth masks.
    Evaluate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::GeneratePhantoms => "generate-phantoms",
            Command::Train => "train",
            Command::Predict => "predict",
            Command::Ctr => "ctr",
            Command::Evaluate => "evaluate",
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let path = cli
        .config
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut config = RunConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
    }
    let out = match (cli.out, &config.out) {
        (Some(o), _) => o,
        (None, Some(o)) => o.clone(),
        (None, None) => std::env::var_os("CARDIOSEG_OUT")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("cardioseg-out"))
            .join(cli.command.name()),
    };
    let ctx = Context {
        config,
        out,
        overlay: cli.overlay,
    };
    match cli.command {
        Command::GeneratePhantoms => {
            let n = commands::generate_phantoms(&ctx)?.len();
            println!("wrote {n} phantoms to {}", ctx.out.display());
        }
        Command::Train => {
            let t = commands::train(&ctx)?;
            println!(
                "trained {} steps on {} labeled, {} unlabeled, {} target images; checkpoint {}",
                t.params.segmentor_updates,
                t.labeled,
                t.unlabeled,
                t.target,
                t.checkpoint.display()
            );
        }
        Command::Predict | Command::Ctr => {
            let records = if matches!(cli.command, Command::Predict) {
                commands::predict(&ctx)?
            } else {
                commands::ctr(&ctx)?
            };
            for r in &records {
                match (r.ratio, &r.error) {
                    (Some(v), _) => println!("{}\t{v:.4}\t{}", r.id, r.cardiomegaly.unwrap_or(false)),
                    (None, Some(e)) => println!("{}\tfailed\t{e}", r.id),
                    (None, None) => unreachable!("records carry a ratio or an error"),
                }
            }
        }
        Command::Evaluate => {
            let ev = commands::evaluate(&ctx)?;
            print!("{}", report::table(&ev.report));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
