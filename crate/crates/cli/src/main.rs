use clap::{Args, Parser, Subcommand};
use parabola_cli::config::{Experiment, ExperimentConfig};
use parabola_cli::memory::peak_rss_bytes;
use parabola_cli::{emit, run, CliError, Format};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "parabola", version, about = "Weighted square-function and Schrodinger experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment named in a config file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// kappa_max of a weight family over R and p.
    KappaScan(Overrides),
    /// Weighted square-function ratios for the built-in field-weight pairs.
    SquareVerify(Overrides),
    /// Wave-envelope ratios for the built-in field-weight pairs.
    EnvelopeVerify(Overrides),
    /// Pointwise iteration bound at random sample points.
    BroadNarrow(Overrides),
    /// Bilinear and local L4 constants of random separated pairs.
    Bilinear(Overrides),
    /// Schrodinger lower-bound exponents.
    SchrodingerFls(Overrides),
    /// Rescaled dimension certificates of unit-scale measures.
    Certificates(Overrides),
    /// Exponent fits for the worked examples.
    ExamplesSuite(Overrides),
    /// Print the default config of an experiment.
    Defaults { experiment: String },
}

#[derive(Args, Default)]
struct Overrides {
    /// Comma-separated model scales.
    #[arg(long = "R")]
    r: Option<String>,
    /// Comma-separated exponents.
    #[arg(long)]
    p: Option<String>,
    /// Comma-separated cap-tree branching factors.
    #[arg(long = "K")]
    k: Option<String>,
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    deterministic: Option<bool>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Further `key=value` settings.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output formats.
    #[arg(long, value_delimiter = ',', default_value = "json,csv,md")]
    format: Vec<String>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
        let pairs = [("R", &self.r), ("p", &self.p), ("K", &self.k), ("family", &self.family)];
        for (k, v) in pairs {
            if let Some(v) = v {
                cfg.set(k, v)?;
            }
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = self.deterministic {
            cfg.deterministic = d;
        }
        if let Some(o) = &self.out {
            cfg.out = o.display().to_string();
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Config(format!("`{kv}` is not KEY=VALUE")))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()
    }
}

fn execute(cli: Cli) -> Result<bool, CliError> {
    let (mut cfg, ov) = match cli.command {
        Command::Defaults { experiment } => {
            print!("{}", ExperimentConfig::defaults(experiment.parse()?).to_text());
            return Ok(true);
        }
        Command::Run { config, overrides } => (ExperimentConfig::parse(&std::fs::read_to_string(config)?)?, overrides),
        Command::KappaScan(o) => (ExperimentConfig::defaults(Experiment::KappaScan), o),
        Command::SquareVerify(o) => (ExperimentConfig::defaults(Experiment::SquareVerify), o),
        Command::EnvelopeVerify(o) => (ExperimentConfig::defaults(Experiment::EnvelopeVerify), o),
        Command::BroadNarrow(o) => (ExperimentConfig::defaults(Experiment::BroadNarrow), o),
        Command::Bilinear(o) => (ExperimentConfig::defaults(Experiment::Bilinear), o),
        Command::SchrodingerFls(o) => (ExperimentConfig::defaults(Experiment::SchrodingerFls), o),
        Command::Certificates(o) => (ExperimentConfig::defaults(Experiment::Certificates), o),
        Command::ExamplesSuite(o) => (ExperimentConfig::defaults(Experiment::ExamplesSuite), o),
    };
    ov.apply(&mut cfg)?;
    let formats = ov.format.iter().map(|f| f.parse()).collect::<Result<Vec<Format>, _>>()?;
    let bundle = run(&cfg)?;
    for path in emit(&bundle, &formats, &PathBuf::from(&cfg.out))? {
        eprintln!("wrote {}", path.display());
    }
    if let Some(peak) = peak_rss_bytes() {
        eprintln!(
            "memory: estimate {} MB, peak {} MB",
            bundle.report.memory_estimate_bytes >> 20,
            peak >> 20
        );
    }
    for c in &bundle.report.criteria {
        println!("{}", c.line());
    }
    Ok(bundle.report.passed())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
