use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use locmoment::harness::{self, ExperimentConfig, KINDS};
use locmoment::Error;

#[derive(Parser)]
#[command(
    name = "locmoment",
    version,
    about = "Fractional-moment localization experiments",
    after_help = "Experiments:\n  locmoment <KIND> --config <PATH> [--seed N] [--out DIR] [--workers K]\n\nKinds: criterion, decay, tails, boole, bs, shift, dos, dynamics, hilbert, largedisorder, msa, holder"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one config once per value of a numeric config leaf.
    Sweep(SweepArgs),
    /// Re-hash the configs embedded in an output directory.
    Verify {
        #[arg(long)]
        out: PathBuf,
    },
    /// `<kind> --config <path>`: run one experiment.
    #[command(external_subcommand)]
    Run(Vec<String>),
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Parser, Debug)]
#[command(name = "locmoment <kind>")]
struct KindCli {
    #[command(flatten)]
    args: RunArgs,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Dotted path of a numeric leaf, e.g. `model.lambda`.
    #[arg(long)]
    axis: String,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    values: Vec<f64>,
}

enum Failure {
    Config(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config_error() || matches!(e, Error::Io(_)) {
            Failure::Config(e.to_string())
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

fn load(args: &RunArgs) -> Result<ExperimentConfig, Failure> {
    let text = fs::read_to_string(&args.config).map_err(|e| Failure::Config(format!("{}: {e}", args.config.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text).map_err(|e| Failure::Config(format!("{}: {e}", args.config.display())))?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.output = o.clone();
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn run_kind(argv: Vec<String>) -> Result<(), Failure> {
    let kind = argv[0].clone();
    if !KINDS.contains(&kind.as_str()) {
        return Err(Failure::Config(format!(
            "unknown experiment kind `{kind}`; expected one of {}, sweep, verify",
            KINDS.join(", ")
        )));
    }
    let cli = KindCli::try_parse_from(&argv).map_err(|e| Failure::Config(e.to_string()))?;
    let cfg = load(&cli.args)?;
    if cfg.kind() != kind {
        return Err(Failure::Config(format!("config describes a `{}` experiment, not `{kind}`", cfg.kind())));
    }
    let (out, files) = harness::run_and_write(&cfg)?;
    for f in files {
        println!("wrote {}", f.display());
    }
    println!("{}", serde_json::to_string_pretty(&out.summary).unwrap_or_default());
    Ok(())
}

fn run_sweep(a: SweepArgs) -> Result<(), Failure> {
    let cfg = load(&a.run)?;
    let tables = harness::sweep(&cfg, &a.axis, &a.values)?;
    fs::create_dir_all(&cfg.output).map_err(|e| Failure::Config(e.to_string()))?;
    for t in tables {
        let path = cfg.output.join(format!("{}-sweep.csv", t.name));
        fs::write(&path, t.to_csv(&cfg)?).map_err(|e| Failure::Numerical(e.to_string()))?;
        println!("wrote {} ({} rows)", path.display(), t.rows.len());
    }
    Ok(())
}

fn run_verify(out: PathBuf) -> Result<(), Failure> {
    let report = harness::verify_dir(&out)?;
    if report.is_empty() {
        return Err(Failure::Config(format!("no output files in {}", out.display())));
    }
    let mut bad = 0;
    for v in &report {
        println!("{} {}: {}", if v.ok { "ok  " } else { "FAIL" }, v.path.display(), v.message);
        bad += usize::from(!v.ok);
    }
    if bad > 0 {
        return Err(Failure::Config(format!("{bad} file(s) failed verification")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Run(argv) => run_kind(argv),
        Command::Sweep(a) => run_sweep(a),
        Command::Verify { out } => run_verify(out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
