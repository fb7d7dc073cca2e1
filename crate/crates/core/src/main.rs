use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use weakamp::experiments::{self, Experiment, Format, Overrides, ScanConfig};
use weakamp::optimal::ObservableKind;

#[derive(Parser, Debug)]
#[command(
    name = "weakamp",
    version,
    about = "Entangled weak value amplification scans"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Maximal postselection probability, entangled versus repeated single ancillas
    ScanPs(ScanArgs),
    /// Weak value reached by the fixed-probability postselection circuit
    ScanAw(ScanArgs),
    /// Postselected quantum Fisher information against the unpostselected total
    Fisher(ScanArgs),
    /// Circuit simulation against the analytic protocol and the three-qubit schedule
    CircuitCheck(ScanArgs),
}

#[derive(Args, Debug)]
struct ScanArgs {
    /// Smallest number of ancillas
    #[arg(long)]
    n_min: Option<usize>,
    /// Largest number of ancillas
    #[arg(long)]
    n_max: Option<usize>,
    /// Postselection angle
    #[arg(long)]
    epsilon: Option<f64>,
    /// Meter phase
    #[arg(long)]
    phi: Option<f64>,
    /// Target |A_w|
    #[arg(long)]
    aw: Option<f64>,
    /// Single-ancilla observable: sigma_z or projector
    #[arg(long)]
    observable: Option<ObservableKind>,
    /// Seed for sampled columns
    #[arg(long)]
    seed: Option<u64>,
    /// Output format: csv or json
    #[arg(long)]
    format: Option<Format>,
    /// Output file (stdout when absent)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat key=value file with the same keys as the flags; flags win
    #[arg(long)]
    config: Option<PathBuf>,
    /// Record the current Unix time in the report
    #[arg(long)]
    timestamp: bool,
}

impl ScanArgs {
    fn flags(&self) -> Overrides {
        Overrides {
            n_min: self.n_min,
            n_max: self.n_max,
            epsilon: self.epsilon,
            phi: self.phi,
            aw: self.aw,
            observable: self.observable,
            seed: self.seed,
            format: self.format,
            out: self.out.clone(),
        }
    }
}

fn config(experiment: Experiment, args: &ScanArgs) -> weakamp::Result<ScanConfig> {
    let file = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| weakamp::Error::Config(format!("{}: {e}", path.display())))?;
            Overrides::parse(&text)?
        }
        None => Overrides::default(),
    };
    let mut c = file
        .then(args.flags())
        .apply(ScanConfig::defaults(experiment));
    if args.timestamp {
        c.timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .ok()
            .map(|d| d.as_secs());
    }
    Ok(c)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let (experiment, args) = match &cli.command {
        Command::ScanPs(a) => (Experiment::PsScaling, a),
        Command::ScanAw(a) => (Experiment::AwScaling, a),
        Command::Fisher(a) => (Experiment::FisherSaturation, a),
        Command::CircuitCheck(a) => (Experiment::CircuitCheck, a),
    };

    let report = config(experiment, args).and_then(|c| experiments::run(&c));
    let report = match report {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match report.emit() {
        Ok(Some(text)) => print!("{text}"),
        Ok(None) => {}
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    eprintln!(
        "{}: {} rows, {} flagged, {} failed",
        experiment.name(),
        report.rows.len(),
        report.flagged(),
        report.failures()
    );
    if report.all_pass() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}
