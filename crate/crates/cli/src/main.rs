mod args;
mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use commands::{Fmt, Resolved};
use manifest::{now_unix, RunManifest};

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    ExitCode::from(run(cli, argv))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|e| {
        matches!(
            e.downcast_ref::<goldilocks::Error>(),
            Some(goldilocks::Error::NumericalFailure { .. })
        )
    });
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

fn report(err: &anyhow::Error) -> u8 {
    eprintln!("error: {err:#}");
    exit_code(err)
}

fn env_threads() -> usize {
    std::env::var("GOLDILOCKS_THREADS")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(0)
}

fn run(cli: Cli, argv: Vec<String>) -> u8 {
    let fmt = Fmt(cli.digits);
    let unit = cli.unit;
    match &cli.command {
        Command::Theory(cmd) => match commands::theory_command(cmd, unit, fmt) {
            Ok(text) => {
                print!("{text}");
                0
            }
            Err(e) => report(&e),
        },
        Command::Simulate(a) => recorded(argv, a.out.clone(), fmt, 0, || {
            commands::resolve_simulate(a, unit).map(Resolved::Simulate)
        }),
        Command::Sweep(a) => {
            let threads = a.threads.unwrap_or_else(env_threads);
            recorded(argv, Some(a.out.clone()), fmt, threads, || {
                commands::resolve_sweep(a).map(Resolved::Sweep)
            })
        }
        Command::Localize(a) => recorded(argv, a.out.clone(), fmt, 0, || {
            commands::resolve_localize(a, unit).map(Resolved::Localize)
        }),
        Command::Collapse(a) => recorded(argv, a.out.clone(), fmt, 0, || {
            Ok(Resolved::Collapse(commands::resolve_collapse(a)))
        }),
        Command::Replay(a) => {
            let m = match RunManifest::load(&a.manifest) {
                Ok(m) => m,
                Err(e) => return report(&e),
            };
            let Some(config) = m.config else {
                eprintln!("error: manifest records a run that failed before its inputs were resolved");
                return EXIT_USAGE;
            };
            let out = a.out.clone().unwrap_or(m.out_dir);
            recorded(argv, Some(out), fmt, env_threads(), || Ok(config))
        }
    }
}

/// Resolves and runs a file-producing command; with an output directory the
/// manifest is written whether or not the run succeeds.
fn recorded(
    argv: Vec<String>,
    out: Option<PathBuf>,
    fmt: Fmt,
    threads: usize,
    resolve: impl FnOnce() -> anyhow::Result<Resolved>,
) -> u8 {
    let started = now_unix();
    let resolved = resolve();
    let result = match &resolved {
        Ok(r) => commands::execute(r, out.as_deref(), fmt, threads),
        Err(e) => Err(anyhow::anyhow!("{e:#}")),
    };
    let code = match &result {
        Ok(o) => {
            print!("{}", o.stdout);
            for w in &o.warnings {
                eprintln!("warning: {w}");
            }
            0
        }
        Err(_) => match &resolved {
            Err(e) => report(e),
            Ok(_) => report(result.as_ref().err().expect("error branch")),
        },
    };
    if let Some(dir) = out {
        let config = resolved.ok();
        let mut m = RunManifest {
            command: argv,
            master_seed: config.as_ref().and_then(Resolved::master_seed),
            config,
            code_version: goldilocks::CODE_VERSION.to_string(),
            started_unix: started,
            finished_unix: now_unix(),
            out_dir: dir,
            outputs: result.as_ref().map(|o| o.outputs.clone()).unwrap_or_default(),
            status: match &result {
                Ok(_) => "ok".into(),
                Err(e) => format!("error: {e:#}"),
            },
            exit_code: code as i32,
        };
        if let Err(e) = m.write() {
            eprintln!("error: could not write manifest: {e:#}");
            return if code == 0 { EXIT_USAGE } else { code };
        }
    }
    code
}
