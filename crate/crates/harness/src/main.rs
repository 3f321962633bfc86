//! Command-line surface of the adaptation lab.
//!
//! Subcommands:
//!   pretrain --config F --out DIR
//!   adapt    --config F --protocol P --out DIR [--workers N] [--seed LIST]
//!   study    --config F --out DIR [--workers N] [--seed LIST]
//!   rank     --in DIR
//!
//! Exit codes: 0 full success, 1 at least one failed run, 2 configuration
//! error (bad flags, bad config file, bad protocol name).

use std::path::PathBuf;
use std::process::ExitCode;

use adaptlab_core::Error;
use adaptlab_harness::config::{parse_protocol, StudyConfig};
use adaptlab_harness::report::{parse_summary_csv, rank_protocols, ranks_csv};
use adaptlab_harness::runner::{build_generator, pretrain_or_load};
use adaptlab_harness::run_study_to_dir;

const USAGE: &str = "usage: adaptlab <subcommand> [options]

subcommands:
  pretrain --config FILE --out DIR
      Build the domino generator, pretrain the shared extractor, and write
      pretrained.ckpt into DIR (reused by later runs with the same config).
  adapt --config FILE --protocol NAME --out DIR [--workers N] [--seed LIST]
      Run one protocol over the config's rho values, grid and seeds.
  study --config FILE --out DIR [--workers N] [--seed LIST]
      Run every protocol in the config; writes runs.csv, summary.csv,
      ranks.csv and summary.md into DIR.
  rank --in DIR
      Recompute ranks.csv from an existing summary.csv in DIR.

options:
  --config FILE    flat JSON study configuration
  --out DIR        output directory (created if missing)
  --in DIR         directory holding summary.csv (rank)
  --protocol NAME  protocol name, e.g. lp, ft, ft_scratch, lp+ft, lp(vat)+ft
  --workers N      worker threads (default 1); results do not depend on N
  --seed LIST      comma-separated seed list overriding the config's seeds";

struct Args {
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    input: Option<PathBuf>,
    protocol: Option<String>,
    workers: usize,
    seeds: Option<Vec<u64>>,
}

fn parse_args(mut argv: impl Iterator<Item = String>) -> Result<(String, Args), String> {
    let sub = argv.next().ok_or_else(|| USAGE.to_string())?;
    let mut args = Args {
        config: None,
        out: None,
        input: None,
        protocol: None,
        workers: 1,
        seeds: None,
    };
    let mut argv = argv.peekable();
    while let Some(flag) = argv.next() {
        let mut value = |name: &str| {
            argv.next()
                .ok_or_else(|| format!("missing value for {name}"))
        };
        match flag.as_str() {
            "--config" => args.config = Some(PathBuf::from(value("--config")?)),
            "--out" => args.out = Some(PathBuf::from(value("--out")?)),
            "--in" => args.input = Some(PathBuf::from(value("--in")?)),
            "--protocol" => args.protocol = Some(value("--protocol")?),
            "--workers" => {
                args.workers = value("--workers")?
                    .parse()
                    .map_err(|e| format!("--workers: {e}"))?;
                if args.workers == 0 {
                    return Err("--workers must be at least 1".into());
                }
            }
            "--seed" => {
                let list = value("--seed")?;
                let seeds: std::result::Result<Vec<u64>, _> =
                    list.split(',').map(|s| s.trim().parse()).collect();
                args.seeds = Some(seeds.map_err(|e| format!("--seed: {e}"))?);
            }
            "--help" | "-h" => return Err(USAGE.to_string()),
            other => return Err(format!("unknown flag '{other}'\n\n{USAGE}")),
        }
    }
    Ok((sub, args))
}

fn load_config(args: &Args) -> Result<StudyConfig, Error> {
    let path = args
        .config
        .as_ref()
        .ok_or_else(|| Error::config("--config is required"))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = StudyConfig::from_json(&text)?;
    if let Some(seeds) = &args.seeds {
        cfg.seeds = seeds.clone();
        cfg.validate()?;
    }
    Ok(cfg)
}

fn out_dir(args: &Args) -> Result<PathBuf, Error> {
    args.out
        .clone()
        .ok_or_else(|| Error::config("--out is required"))
}

/// 0 = success, 1 = failed runs, 2 = config error.
fn dispatch(sub: &str, args: &Args) -> u8 {
    let outcome: Result<usize, Error> = match sub {
        "pretrain" => (|| {
            let cfg = load_config(args)?;
            let dir = out_dir(args)?;
            std::fs::create_dir_all(&dir).map_err(Error::from)?;
            let gen = build_generator(&cfg)?;
            pretrain_or_load(&cfg, &gen, &dir)?;
            println!("pretrained extractor written to {}", dir.join("pretrained.ckpt").display());
            Ok(0)
        })(),
        "adapt" => (|| {
            let mut cfg = load_config(args)?;
            let protocol = args
                .protocol
                .as_ref()
                .ok_or_else(|| Error::config("--protocol is required"))?;
            parse_protocol(protocol)?;
            cfg.protocols = vec![protocol.clone()];
            cfg.validate()?;
            let dir = out_dir(args)?;
            run_study_to_dir(&cfg, &dir, args.workers)
        })(),
        "study" => (|| {
            let cfg = load_config(args)?;
            let dir = out_dir(args)?;
            run_study_to_dir(&cfg, &dir, args.workers)
        })(),
        "rank" => (|| {
            let dir = args
                .input
                .as_ref()
                .ok_or_else(|| Error::config("--in is required"))?;
            let text = std::fs::read_to_string(dir.join("summary.csv"))
                .map_err(|e| Error::Config(format!("cannot read summary.csv: {e}")))?;
            let rows = parse_summary_csv(&text)?;
            let table = rank_protocols(&rows)?;
            std::fs::write(dir.join("ranks.csv"), ranks_csv(&table)).map_err(Error::from)?;
            print!("{}", ranks_csv(&table));
            Ok(0)
        })(),
        other => {
            eprintln!("unknown subcommand '{other}'\n\n{USAGE}");
            return 2;
        }
    };
    match outcome {
        Ok(0) => 0,
        Ok(failures) => {
            eprintln!("{failures} run(s) failed");
            1
        }
        Err(Error::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            2
        }
        Err(e) => {
            eprintln!("{e}");
            1
        }
    }
}

fn main() -> ExitCode {
    let mut argv = std::env::args().skip(1);
    match parse_args(&mut argv) {
        Ok((sub, args)) => ExitCode::from(dispatch(&sub, &args)),
        Err(msg) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
    }
}
