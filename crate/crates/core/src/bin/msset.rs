use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use msset::batch::{batch_concordance, render_tables, write_decisions, write_tables};
use msset::experiment::{binary_outcomes, run_experiment, simulate_cell_dataset, ExperimentConfig};
use msset::io::{
    dataset_to_string, funnel_rows, merge_counts, outcomes_with_counts, parse_dataset, parse_dataset_auto, write_funnel,
    DataFormat,
};
use msset::msset::{EvaluationPoint, MConvention, SandwichScope, SigmaAaMethod};
use msset::report::{build_report, render_text, to_json, ReportOptions, TestChoice};
use msset::{MetaDataset, MetaError, MssetOptions};

const EXIT_COMPUTATION: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "msset", version, about = "Small-study effect tests for multivariate meta-analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run MSSET, Egger and/or Begg on one dataset.
    Test(TestArgs),
    /// Export funnel-plot data for one outcome.
    Funnel(FunnelArgs),
    /// Concordance of MSSET and Egger decisions over a manifest of datasets.
    Batch(BatchArgs),
    /// Run a Monte Carlo rejection-rate experiment from a config file.
    Simulate(SimulateArgs),
    /// Write one simulated dataset.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Wide,
    Long,
    Counts,
}

impl From<FormatArg> for DataFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Wide => DataFormat::Wide,
            FormatArg::Long => DataFormat::Long,
            FormatArg::Counts => DataFormat::Counts,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TestArg {
    Msset,
    Egger,
    Begg,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum MConventionArg {
    PerOutcome,
    Total,
}

#[derive(Clone, Copy, ValueEnum)]
enum SigmaArg {
    Sandwich,
    Bootstrap,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvaluationArg {
    Null,
    Unrestricted,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Regression,
    Stacked,
}

#[derive(Args)]
struct InputArgs {
    #[arg(long)]
    input: PathBuf,
    /// Layout of the input; read from the header when omitted.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Counts-format file whose 2×2 tables are attached to matching studies.
    #[arg(long)]
    counts: Option<PathBuf>,
}

#[derive(Args)]
struct MssetArgs {
    /// 1-based indices of binary outcomes, comma separated.
    #[arg(long, value_delimiter = ',')]
    binary_outcomes: Vec<usize>,
    /// Use the smoothed variance for binary outcomes.
    #[arg(long)]
    smooth: bool,
    #[arg(long, value_enum, default_value = "per-outcome")]
    m_convention: MConventionArg,
    #[arg(long, value_enum, default_value = "sandwich")]
    sigma_aa: SigmaArg,
    #[arg(long, default_value_t = 1000)]
    bootstrap_reps: usize,
    #[arg(long, value_enum, default_value = "null")]
    evaluation: EvaluationArg,
    #[arg(long, value_enum, default_value = "regression")]
    sandwich_scope: ScopeArg,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum, default_value = "all")]
    test: TestArg,
    #[arg(long, default_value_t = 0.10)]
    alpha: f64,
    #[command(flatten)]
    msset: MssetArgs,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct FunnelArgs {
    #[command(flatten)]
    input: InputArgs,
    /// 1-based outcome index.
    #[arg(long, default_value_t = 1)]
    outcome: usize,
    /// Write here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BatchArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 0.10)]
    alpha: f64,
    /// Per-dataset decision CSV.
    #[arg(long)]
    decisions: Option<PathBuf>,
    /// Concordance tables as CSV.
    #[arg(long)]
    tables: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's worker count.
    #[arg(long)]
    threads: Option<usize>,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct GenerateArgs {
    /// Experiment config supplying model settings; defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    tau2: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "wide")]
    format: FormatArg,
    #[arg(long)]
    output: Option<PathBuf>,
    /// For mixed binary data: write the binary outcomes' 2×2 counts here.
    #[arg(long)]
    counts_output: Option<PathBuf>,
}

fn load(input: &InputArgs) -> Result<MetaDataset, MetaError> {
    let mut data = match input.format {
        Some(f) => parse_dataset(&input.input, f.into())?,
        None => parse_dataset_auto(&input.input)?,
    };
    if let Some(path) = &input.counts {
        let counts = parse_dataset(path, DataFormat::Counts)?;
        merge_counts(&mut data, &counts)?;
    }
    Ok(data)
}

fn msset_options(args: &MssetArgs, data: &MetaDataset) -> Result<MssetOptions, MetaError> {
    let j = data.n_outcomes();
    let mut binary = Vec::new();
    for &k in &args.binary_outcomes {
        if k == 0 || k > j {
            return Err(MetaError::InvalidInput(format!("binary outcome {k} out of range 1..={j}")));
        }
        binary.push(k - 1);
    }
    if args.smooth && binary.is_empty() {
        binary = outcomes_with_counts(data);
        if binary.is_empty() {
            return Err(MetaError::InvalidInput("--smooth needs 2x2 counts for at least one outcome".into()));
        }
    }
    Ok(MssetOptions {
        m_convention: match args.m_convention {
            MConventionArg::PerOutcome => MConvention::PerOutcome,
            MConventionArg::Total => MConvention::Total,
        },
        sigma_aa: match args.sigma_aa {
            SigmaArg::Sandwich => SigmaAaMethod::Sandwich,
            SigmaArg::Bootstrap => SigmaAaMethod::Bootstrap {
                reps: args.bootstrap_reps,
                seed: args.seed,
            },
        },
        evaluation: match args.evaluation {
            EvaluationArg::Null => EvaluationPoint::NullRestricted,
            EvaluationArg::Unrestricted => EvaluationPoint::Unrestricted,
        },
        scope: match args.sandwich_scope {
            ScopeArg::Regression => SandwichScope::Regression,
            ScopeArg::Stacked => SandwichScope::Stacked,
        },
        smooth_binary: args.smooth,
        binary_outcomes: binary,
        ..MssetOptions::default()
    })
}

fn write_out(path: Option<&Path>, text: &str) -> Result<Option<String>, MetaError> {
    match path {
        Some(p) => {
            std::fs::write(p, text).map_err(|e| MetaError::InvalidInput(format!("cannot write {}: {e}", p.display())))?;
            Ok(None)
        }
        None => Ok(Some(text.to_owned())),
    }
}

fn utf8(buf: Vec<u8>) -> String {
    String::from_utf8(buf).expect("csv output is utf-8")
}

fn run_test(args: &TestArgs) -> Result<String, MetaError> {
    let data = load(&args.input)?;
    let options = ReportOptions {
        tests: match args.test {
            TestArg::Msset => TestChoice::Msset,
            TestArg::Egger => TestChoice::Egger,
            TestArg::Begg => TestChoice::Begg,
            TestArg::All => TestChoice::All,
        },
        alpha: args.alpha,
        msset: msset_options(&args.msset, &data)?,
        ..ReportOptions::default()
    };
    let report = build_report(&data, &options)?;
    if args.json {
        Ok(to_json(&report)? + "\n")
    } else {
        Ok(render_text(&report))
    }
}

fn run_funnel(args: &FunnelArgs) -> Result<String, MetaError> {
    let data = load(&args.input)?;
    if args.outcome == 0 {
        return Err(MetaError::InvalidInput("outcome index is 1-based".into()));
    }
    let rows = funnel_rows(&data, args.outcome - 1)?;
    let mut buf = Vec::new();
    write_funnel(&rows, &mut buf)?;
    Ok(write_out(args.output.as_deref(), &utf8(buf))?.unwrap_or_default())
}

fn run_batch(args: &BatchArgs) -> Result<String, MetaError> {
    let result = batch_concordance(&args.manifest, args.alpha, &MssetOptions::default())?;
    let mut decisions = Vec::new();
    write_decisions(&result, &mut decisions)?;
    let mut tables = Vec::new();
    write_tables(&result, &mut tables)?;
    write_out(args.decisions.as_deref(), &utf8(decisions))?;
    write_out(args.tables.as_deref(), &utf8(tables))?;
    if args.json {
        serde_json::to_string_pretty(&result)
            .map(|s| s + "\n")
            .map_err(|e| MetaError::InvalidInput(format!("json: {e}")))
    } else {
        Ok(render_tables(&result))
    }
}

fn run_simulate(args: &SimulateArgs) -> Result<String, MetaError> {
    let mut cfg = ExperimentConfig::from_path(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.threads.is_some() {
        cfg.threads = args.threads;
    }
    let result = run_experiment(&cfg)?;
    let text = if args.json {
        serde_json::to_string_pretty(&result).map_err(|e| MetaError::InvalidInput(format!("json: {e}")))? + "\n"
    } else {
        let mut buf = Vec::new();
        result.write_csv(&mut buf)?;
        utf8(buf)
    };
    Ok(write_out(args.output.as_deref(), &text)?.unwrap_or_default())
}

fn run_generate(args: &GenerateArgs) -> Result<String, MetaError> {
    let cfg = match &args.config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => ExperimentConfig::default(),
    };
    let data = simulate_cell_dataset(&cfg, args.n, args.tau2, args.seed)?;
    let text = dataset_to_string(&data, args.format.into())?;
    if let Some(p) = &args.counts_output {
        let binary = binary_outcomes(&data);
        if binary.is_empty() {
            return Err(MetaError::InvalidInput("generated data has no binary outcomes".into()));
        }
        write_out(Some(p), &dataset_to_string(&data.select_outcomes(&binary), DataFormat::Counts)?)?;
    }
    Ok(write_out(args.output.as_deref(), &text)?.unwrap_or_default())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Test(a) => run_test(a),
        Command::Funnel(a) => run_funnel(a),
        Command::Batch(a) => run_batch(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Generate(a) => run_generate(a),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { EXIT_VALIDATION } else { EXIT_COMPUTATION })
        }
    }
}
