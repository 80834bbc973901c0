//! Batch front-end: runs the example systems and the convergence harness
//! from config files and flags, and validates tableau files.

mod commands;
mod config;

use commands::{cmd_converge, cmd_example, cmd_validate, CliError};
use config::RunConfig;

const USAGE: &str = "\
usage: sderk <command> [options]

commands:
  example <absorber|cascade>   Monte Carlo mean occupation vs the
                               master-equation oracle, as CSV
  converge <gbm>               strong-convergence ladder and fitted order
  validate <tableau-file>      consistency and quadrature report

options:
  --config PATH        key=value configuration file
  --seed U64           ensemble master seed
  --trajectories N     trajectory / path count
  --rtol R             relative tolerance
  --atol A             absolute tolerance
  --horizon T          integration horizon
  --chunks N           base steps per horizon (output grid density)
  --tableau PATH       tableau file (default: builtin 9(8) pair)
  --out PATH           output file (default: stdout)
  --workers N          worker threads (0 = runtime default); outputs are
                       identical for every worker count
";

fn main() {
    match run() {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {}", e.message());
            std::process::exit(e.exit_code());
        }
    }
}

fn run() -> Result<i32, CliError> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() || args[0] == "--help" || args[0] == "-h" {
        print!("{USAGE}");
        return Ok(if args.is_empty() { 2 } else { 0 });
    }
    match args[0].as_str() {
        "example" => {
            let (target, cfg) = parse_run_args(&args)?;
            let csv = cmd_example(&target, &cfg)?;
            write_output(cfg.out.as_deref(), &csv)?;
            Ok(0)
        }
        "converge" => {
            let (target, cfg) = parse_run_args_with(&args, |cfg| {
                // convergence runs default to the benchmark horizon and
                // path count rather than the example settings
                cfg.horizon = 1.0;
                cfg.trajectories = 2000;
            })?;
            let (csv, summary) = cmd_converge(&target, &cfg)?;
            write_output(cfg.out.as_deref(), &csv)?;
            println!("{summary}");
            Ok(0)
        }
        "validate" => {
            if args.len() < 2 {
                return Err(CliError::Config("validate needs a tableau file path".into()));
            }
            let (report, ok) = cmd_validate(&args[1])?;
            print!("{report}");
            Ok(if ok { 0 } else { 4 })
        }
        other => Err(CliError::Config(format!(
            "unknown command '{other}'; run with --help for usage"
        ))),
    }
}

fn parse_run_args(args: &[String]) -> Result<(String, RunConfig), CliError> {
    parse_run_args_with(args, |_| {})
}

fn parse_run_args_with(
    args: &[String],
    preset: impl FnOnce(&mut RunConfig),
) -> Result<(String, RunConfig), CliError> {
    if args.len() < 2 || args[1].starts_with("--") {
        return Err(CliError::Config(format!("'{}' needs a target argument", args[0])));
    }
    let target = args[1].clone();
    let mut cfg = RunConfig::default();
    preset(&mut cfg);

    // first pass: apply --config so that flags override file values
    let mut i = 2;
    while i < args.len() {
        if args[i] == "--config" {
            let path = flag_value(args, i)?;
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("cannot read config file '{path}': {e}")))?;
            cfg.apply_file(&text, path)
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        i += 2;
    }

    let mut i = 2;
    while i < args.len() {
        let flag = &args[i];
        let set = |cfg: &mut RunConfig, key: &str, value: &str| {
            cfg.set(key, value).map_err(|e| CliError::Config(e.to_string()))
        };
        match flag.as_str() {
            "--config" => {
                flag_value(args, i)?;
            }
            "--seed" => set(&mut cfg, "master_seed", flag_value(args, i)?)?,
            "--trajectories" => set(&mut cfg, "trajectories", flag_value(args, i)?)?,
            "--rtol" => set(&mut cfg, "rtol", flag_value(args, i)?)?,
            "--atol" => set(&mut cfg, "atol", flag_value(args, i)?)?,
            "--horizon" => set(&mut cfg, "horizon", flag_value(args, i)?)?,
            "--chunks" => set(&mut cfg, "chunks", flag_value(args, i)?)?,
            "--tableau" => set(&mut cfg, "tableau", flag_value(args, i)?)?,
            "--workers" => set(&mut cfg, "workers", flag_value(args, i)?)?,
            "--out" => cfg.out = Some(flag_value(args, i)?.to_string()),
            other => {
                return Err(CliError::Config(format!("unknown flag '{other}'")));
            }
        }
        i += 2;
    }
    Ok((target, cfg))
}

fn flag_value<'a>(args: &'a [String], i: usize) -> Result<&'a str, CliError> {
    args.get(i + 1)
        .map(|s| s.as_str())
        .ok_or_else(|| CliError::Config(format!("flag '{}' needs a value", args[i])))
}

fn write_output(path: Option<&str>, content: &str) -> Result<(), CliError> {
    match path {
        None | Some("-") => {
            print!("{content}");
            Ok(())
        }
        Some(p) => std::fs::write(p, content)
            .map_err(|e| CliError::Io(format!("cannot write output file '{p}': {e}"))),
    }
}
