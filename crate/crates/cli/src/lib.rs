//! The `seplab` command line.

pub mod args;
pub mod commands;
pub mod dataset;
pub mod error;
pub mod manifest;
pub mod runfile;

use std::ffi::OsString;
use std::time::Instant;

use clap::Parser;

use args::{Cli, Command};
use error::{CliError, CliResult};
use manifest::{digests, manifest_path, RunManifest};

fn execute(cmd: &Command) -> CliResult<commands::Ran> {
    match cmd {
        Command::Separation(a) => commands::separation(a),
        Command::Certify(a) => commands::certify(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Attack(a) => commands::attack(a),
        Command::Lipschitz(a) => commands::lipschitz(a),
        Command::Evaluate(a) => commands::evaluate_cmd(a),
        Command::Spiral(a) => commands::spiral(a),
        Command::Blobs(a) => commands::blobs(a),
    }
}

fn run_parsed(cli: Cli, argv: Vec<String>) -> CliResult<()> {
    let start = Instant::now();
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cli.threads {
            if n == 0 {
                return Err(CliError::usage("--threads must be at least 1"));
            }
            b = b.num_threads(n);
        }
        b.build().map_err(|e| CliError::usage(format!("thread pool: {e}")))?
    };
    let ran = pool.install(|| execute(&cli.command))?;
    let m = RunManifest {
        command: cli.command.name().to_string(),
        argv,
        config: ran.config,
        seeds: ran.seeds,
        version: env!("CARGO_PKG_VERSION").to_string(),
        inputs: digests(&ran.inputs)?,
        outputs: digests(&ran.outputs)?,
        duration_seconds: start.elapsed().as_secs_f64(),
    };
    seplab_core::report::write_json(&m, &manifest_path(&ran.outputs[0]))?;
    Ok(())
}

/// Runs one invocation; `argv[0]` is the program name. Returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let recorded = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match run_parsed(cli, recorded) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("seplab: {e}");
            e.exit_code()
        }
    }
}
