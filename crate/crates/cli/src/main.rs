use std::path::PathBuf;
use std::process::ExitCode as ProcessExit;

use adat_cli::{run, Command, RunConfig};
use clap::Parser;

/// Sign-language translation experiments with the ADAT encoder.
///
/// Exit codes: 0 success, 1 internal error, 2 usage or configuration,
/// 3 I/O, 4 data format, 5 training divergence, 6 model/mode mismatch.
#[derive(Parser, Debug)]
#[command(name = "adat", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Parent directory for run directories.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// table3-s2g2t, table3-s2t, table5 or desk-small.
    #[arg(long)]
    preset: Option<String>,
}

fn main() -> ProcessExit {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ProcessExit::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = RunConfig::resolve(cli.preset.as_deref(), cli.config.as_deref(), &cli.overrides, cli.seed)
        .and_then(|cfg| run(cli.command, &cfg, &cli.out));
    match result {
        Ok(dir) => {
            println!("{}", dir.display());
            ProcessExit::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            ProcessExit::from(e.exit_code().code())
        }
    }
}
