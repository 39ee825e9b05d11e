use std::path::PathBuf;
use std::process::ExitCode;

use simdnn::error::{ErrorCategory, SimError};
use simdnn_cli::config::{resolve, RawConfig};
use simdnn_cli::runner::{self, SplitChoice, SweepParam};

const USAGE: &str = "\
simdnn - wave-domain metasurface classifier

USAGE:
  simdnn train  --config PATH [--out DIR] [--seed INT] [--override S.K=V]...
  simdnn eval   --config PATH --weights PATH [--out DIR] [--seed INT] [--override S.K=V]...
  simdnn energy --config PATH --weights PATH --index INT [--split train|val|test]
                [--out DIR] [--seed INT] [--override S.K=V]...
  simdnn sweep  --config PATH --param L|N|d_sr|M --values V1,V2,...
                [--out DIR] [--seed INT] [--override S.K=V]...

Config files are sectioned key = value text; missing keys take the reference
defaults. --override replaces any key, e.g. --override training.epochs=10.
SIMDNN_THREADS caps worker parallelism.

EXIT STATUS: 0 ok, 1 usage, 2 config error, 3 data error, 4 numeric error.";

struct CliArgs {
    verb: String,
    config: Option<PathBuf>,
    weights: Option<PathBuf>,
    out: Option<String>,
    seed: Option<String>,
    overrides: Vec<String>,
    index: Option<String>,
    split: SplitChoice,
    param: Option<String>,
    values: Option<String>,
}

fn parse_args(mut args: std::env::Args) -> Result<CliArgs, String> {
    let _bin = args.next();
    let verb = args.next().ok_or_else(|| "missing command".to_string())?;
    let mut parsed = CliArgs {
        verb,
        config: None,
        weights: None,
        out: None,
        seed: None,
        overrides: Vec::new(),
        index: None,
        split: SplitChoice::Test,
        param: None,
        values: None,
    };
    while let Some(flag) = args.next() {
        let mut value = |name: &str| {
            args.next().ok_or_else(|| format!("{name} needs a value"))
        };
        match flag.as_str() {
            "--config" => parsed.config = Some(PathBuf::from(value("--config")?)),
            "--weights" => parsed.weights = Some(PathBuf::from(value("--weights")?)),
            "--out" => parsed.out = Some(value("--out")?),
            "--seed" => parsed.seed = Some(value("--seed")?),
            "--override" => parsed.overrides.push(value("--override")?),
            "--index" => parsed.index = Some(value("--index")?),
            "--split" => {
                parsed.split = value("--split")?
                    .parse()
                    .map_err(|e: SimError| e.to_string())?
            }
            "--param" => parsed.param = Some(value("--param")?),
            "--values" => parsed.values = Some(value("--values")?),
            other => return Err(format!("unknown flag {other}")),
        }
    }
    Ok(parsed)
}

fn run(cli: CliArgs) -> simdnn::Result<()> {
    let mut raw = match &cli.config {
        Some(path) => RawConfig::load(path)?,
        None => RawConfig::default(),
    };
    for spec in &cli.overrides {
        raw.apply_override(spec)?;
    }
    if let Some(out) = &cli.out {
        raw.set("run", "output_dir", out);
    }
    if let Some(seed) = &cli.seed {
        raw.set("run", "seed", seed);
    }

    match cli.verb.as_str() {
        "train" => {
            let cfg = resolve(&raw)?;
            let artifacts = runner::cmd_train(&cfg)?;
            println!(
                "trained {} epochs; test accuracy {:.4}; weights at {}",
                cfg.epochs,
                artifacts.test_report.accuracy,
                artifacts.weights_path.display()
            );
            Ok(())
        }
        "eval" => {
            let cfg = resolve(&raw)?;
            let weights = cli
                .weights
                .ok_or_else(|| SimError::config("--weights", "required for eval"))?;
            let report = runner::cmd_eval(&weights, &cfg)?;
            println!("test accuracy {:.4} over {} samples", report.accuracy, report.count);
            Ok(())
        }
        "energy" => {
            let cfg = resolve(&raw)?;
            let weights = cli
                .weights
                .ok_or_else(|| SimError::config("--weights", "required for energy"))?;
            let index: usize = cli
                .index
                .as_deref()
                .ok_or_else(|| SimError::config("--index", "required for energy"))?
                .parse()
                .map_err(|_| SimError::config("--index", "must be an integer"))?;
            let path = runner::cmd_energy(&weights, &cfg, cli.split, index)?;
            println!("energy record at {}", path.display());
            Ok(())
        }
        "sweep" => {
            let param: SweepParam = cli
                .param
                .as_deref()
                .ok_or_else(|| SimError::config("--param", "required for sweep"))?
                .parse()?;
            let values: Vec<String> = cli
                .values
                .as_deref()
                .ok_or_else(|| SimError::config("--values", "required for sweep"))?
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            let path = runner::cmd_sweep(&raw, param, &values)?;
            println!("sweep summary at {}", path.display());
            Ok(())
        }
        other => Err(SimError::config("command", format!("unknown command {other:?}"))),
    }
}

fn main() -> ExitCode {
    simdnn::init_threads_from_env();
    let cli = match parse_args(std::env::args()) {
        Ok(cli) => cli,
        Err(message) => {
            eprintln!("error: {message}\n\n{USAGE}");
            return ExitCode::from(1);
        }
    };
    if cli.verb == "help" || cli.verb == "--help" || cli.verb == "-h" {
        println!("{USAGE}");
        return ExitCode::SUCCESS;
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e.category() {
                ErrorCategory::Config => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Numeric => 4,
            };
            ExitCode::from(code)
        }
    }
}
