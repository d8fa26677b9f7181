//! Command-line front end. [`run`] returns the process exit status:
//! 0 on success, 1 on usage errors, 2 on runtime errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};

use crate::config::{self, KEYS};
use crate::dataio::{self, Split};
use crate::error::{Error, Result};
use crate::gradsuite;
use crate::train::{self, ExperimentData, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

fn with_config_args(cmd: Command) -> Command {
    let cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .short('c')
            .value_name("FILE")
            .value_parser(value_parser!(PathBuf))
            .help("key = value config file"),
    );
    KEYS.iter().fold(cmd, |cmd, &key| {
        cmd.arg(
            Arg::new(key)
                .long(key)
                .value_name("VALUE")
                .help_heading("Config overrides"),
        )
    })
}

pub fn command() -> Command {
    Command::new("aae")
        .about("U-Net salient object detection with training-time assisted excitation")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(with_config_args(
            Command::new("train").about("Train a network and write its checkpoint and history CSV"),
        ))
        .subcommand(with_config_args(
            Command::new("eval")
                .about("Evaluate a checkpoint on one split of dataset_root")
                .arg(
                    Arg::new("checkpoint")
                        .long("checkpoint")
                        .required(true)
                        .value_parser(value_parser!(PathBuf)),
                )
                .arg(Arg::new("split").long("split").default_value("test")),
        ))
        .subcommand(
            Command::new("predict")
                .about("Write the saliency map of one image as PGM")
                .arg(
                    Arg::new("checkpoint")
                        .long("checkpoint")
                        .required(true)
                        .value_parser(value_parser!(PathBuf)),
                )
                .arg(
                    Arg::new("image")
                        .long("image")
                        .required(true)
                        .value_parser(value_parser!(PathBuf)),
                )
                .arg(
                    Arg::new("out")
                        .long("out")
                        .required(true)
                        .value_parser(value_parser!(PathBuf)),
                ),
        )
        .subcommand(
            Command::new("gen-data")
                .about("Generate the synthetic shapes dataset")
                .arg(
                    Arg::new("out")
                        .long("out")
                        .required(true)
                        .value_parser(value_parser!(PathBuf)),
                )
                .arg(
                    Arg::new("count")
                        .long("count")
                        .default_value("250")
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("size")
                        .long("size")
                        .default_value("64")
                        .value_parser(value_parser!(usize)),
                )
                .arg(
                    Arg::new("seed")
                        .long("seed")
                        .default_value("0")
                        .value_parser(value_parser!(u64)),
                ),
        )
        .subcommand(
            Command::new("gradcheck")
                .about("Run the finite-difference gradient suite")
                .arg(
                    Arg::new("eps")
                        .long("eps")
                        .default_value("1e-5")
                        .value_parser(value_parser!(f64)),
                ),
        )
        .subcommand(with_config_args(
            Command::new("compare")
                .about("Train baseline and excitation arms over several seeds and report test metrics")
                .arg(
                    Arg::new("seeds")
                        .long("seeds")
                        .default_value("0,1,2,3,4")
                        .help("comma-separated seeds"),
                ),
        ))
        .arg(
            Arg::new("quiet")
                .long("quiet")
                .short('q')
                .global(true)
                .action(ArgAction::SetTrue)
                .help("log warnings and errors only"),
        )
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if matches.get_flag("quiet") {
        log::set_max_level(log::LevelFilter::Warn);
    }
    match dispatch(&matches) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

enum Failure {
    Usage(Error),
    Runtime(Error),
}

fn runtime(e: Error) -> Failure {
    Failure::Runtime(e)
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e)
}

fn config_from(m: &ArgMatches) -> std::result::Result<TrainConfig, Failure> {
    let path = m.get_one::<PathBuf>("config");
    let overrides: Vec<(String, String)> = KEYS
        .iter()
        .filter_map(|&k| m.get_one::<String>(k).map(|v| (k.to_string(), v.clone())))
        .collect();
    config::load_config(path.map(PathBuf::as_path), &overrides).map_err(usage)
}

fn dispatch(m: &ArgMatches) -> std::result::Result<(), Failure> {
    match m.subcommand() {
        Some(("train", sub)) => {
            let config = config_from(sub)?;
            let outcome = train::train(&config).map_err(runtime)?;
            if let Some(last) = outcome.history.rows.last() {
                println!(
                    "trained {} epochs: loss {:.6}, val F {:.6}, val MAE {:.6}",
                    outcome.history.rows.len(),
                    last.train_loss,
                    last.val_f_beta,
                    last.val_mae
                );
            }
            Ok(())
        }
        Some(("eval", sub)) => {
            let config = config_from(sub)?;
            let split: Split = sub
                .get_one::<String>("split")
                .expect("default")
                .parse()
                .map_err(usage)?;
            let ckpt = sub.get_one::<PathBuf>("checkpoint").expect("required");
            let record = train::evaluate_checkpoint(ckpt, &config.dataset_root, split, config.metrics_out.as_deref())
                .map_err(runtime)?;
            println!("{}", crate::metrics::CSV_HEADER);
            println!("{}", record.csv_row(&split.to_string()));
            Ok(())
        }
        Some(("predict", sub)) => {
            let get = |k: &str| sub.get_one::<PathBuf>(k).expect("required");
            train::predict_file(get("checkpoint"), get("image"), get("out")).map_err(runtime)
        }
        Some(("gen-data", sub)) => {
            let out: &Path = sub.get_one::<PathBuf>("out").expect("required");
            let count = *sub.get_one::<usize>("count").expect("default");
            let size = *sub.get_one::<usize>("size").expect("default");
            let seed = *sub.get_one::<u64>("seed").expect("default");
            let manifest = dataio::generate_synthetic(seed, count, size, out).map_err(runtime)?;
            println!(
                "wrote {count} samples to {}: {} train, {} val, {} test",
                out.display(),
                manifest.count(Split::Train),
                manifest.count(Split::Val),
                manifest.count(Split::Test)
            );
            Ok(())
        }
        Some(("gradcheck", sub)) => {
            let eps = *sub.get_one::<f64>("eps").expect("default");
            if !(eps > 0.0 && eps <= 1e-2) {
                return Err(usage(Error::InvalidArgument(format!(
                    "eps must be in (0, 1e-2], got {eps}"
                ))));
            }
            let results = gradsuite::run_suite(eps).map_err(runtime)?;
            let mut failed = 0;
            for r in &results {
                let status = if r.passed() { "ok  " } else { "FAIL" };
                println!(
                    "{status} {:<44} instances {:>3}  probes {:>6}  max rel err {:.3e}{}",
                    r.name,
                    r.instances,
                    r.probes,
                    r.max_rel_error,
                    r.note.as_deref().map(|n| format!("  ({n})")).unwrap_or_default()
                );
                failed += usize::from(!r.passed());
            }
            if failed > 0 {
                return Err(runtime(Error::InvalidArgument(format!(
                    "{failed} of {} gradient checks failed",
                    results.len()
                ))));
            }
            println!("all {} gradient checks passed", results.len());
            Ok(())
        }
        Some(("compare", sub)) => {
            let config = config_from(sub)?;
            let seeds = parse_seeds(sub.get_one::<String>("seeds").expect("default")).map_err(usage)?;
            let data = ExperimentData::load(&config.dataset_root).map_err(runtime)?;
            let cmp = train::compare(&config, &data, &seeds).map_err(runtime)?;
            println!("seed,arm,f_beta,mae");
            for r in &cmp.runs {
                println!("{},baseline,{:.6},{:.6}", r.seed, r.baseline.f_beta, r.baseline.mae);
                println!("{},excited,{:.6},{:.6}", r.seed, r.excited.f_beta, r.excited.mae);
            }
            let (fb, mb) = cmp.mean_baseline();
            let (fe, me) = cmp.mean_excited();
            println!("mean,baseline,{fb:.6},{mb:.6}");
            println!("mean,excited,{fe:.6},{me:.6}");
            Ok(())
        }
        _ => unreachable!("subcommand_required"),
    }
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad seed `{t}`")))
        })
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("no seeds given".into()));
    }
    Ok(seeds)
}
