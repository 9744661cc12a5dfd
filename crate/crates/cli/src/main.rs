use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mkvcyl::{output_dir, run, CliError, Command, RunConfig};
use mkvcyl_core::Exec;

#[derive(Parser)]
#[command(name = "mkvcyl", version, about = "Mean-field SDEs driven by cylindrical fractional noise")]
struct Args {
    command: Command,
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's output block.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", serde_json::to_string(&e.record()).expect("record serializes"));
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let exec = match args.threads {
        Some(0) => return fail(&CliError::Config("--threads must be positive".into())),
        Some(1) => Exec::Sequential,
        Some(n) => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                return fail(&CliError::Config(format!("cannot start thread pool: {e}")));
            }
            Exec::default()
        }
        None => Exec::default(),
    };
    let cfg = match RunConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let config_dir = args.config.parent().map(PathBuf::from).unwrap_or_default();
    let out = output_dir(&cfg, &config_dir, args.out.as_deref());
    match run(&cfg, args.command, &out, &config_dir, exec) {
        Ok(m) => {
            println!("{}: {} outputs in {}", m.command, m.outputs.len(), out.display());
            ExitCode::SUCCESS
        }
        Err((e, _)) => fail(&e),
    }
}
