use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use misspattern::indicators::{build_indicators, tabulate_patterns};
use misspattern::retention::guidance;
use misspattern::{CorrelationKind, ExtractionMethod};
use misspattern_cli::simulate::parse_cell;
use misspattern_cli::{ingest, simulate, CriterionChoice, GridSpec, IngestOptions, OutputFormat, RunConfig};

#[derive(Parser)]
#[command(name = "misspattern", version, about = "Reduce missing-data patterns to a few components and probe the mechanism")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: patterns, components, retention, screens, logistic fits.
    Analyze(AnalyzeArgs),
    /// Missingness indicators and the pattern table only.
    Patterns(PatternsArgs),
    /// Monte Carlo recovery study over design cells.
    Simulate(SimulateArgs),
    /// Recommended retention criterion for a design.
    Guidance(GuidanceArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Delimited text file with a header row.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Missing-value marker; repeat to give several. Replaces the defaults ("", NA, .).
    #[arg(long = "sentinel")]
    sentinels: Vec<String>,
    /// Tab-delimited input.
    #[arg(long)]
    tab: bool,
    /// Comma-separated columns to turn into indicators (default: all).
    #[arg(long, value_delimiter = ',')]
    columns: Option<Vec<String>>,
    /// Leave rows missing on every indicator out of the pattern table.
    #[arg(long)]
    drop_fully_missing: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    input: InputArgs,
    /// JSON config or a previous run's manifest; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_corr)]
    corr: Option<CorrelationKind>,
    #[arg(long, value_parser = parse_method)]
    method: Option<ExtractionMethod>,
    /// parallel, ekc, kaiser, profile_likelihood or auto.
    #[arg(long)]
    criterion: Option<CriterionChoice>,
    /// Items per component (hint for `auto`).
    #[arg(long)]
    ipc: Option<usize>,
    /// Expected components (hint for `auto`).
    #[arg(long)]
    comps: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    cutoff: Option<f64>,
    #[arg(long)]
    pa_reps: Option<usize>,
    #[arg(long)]
    percentile: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    strata: Option<String>,
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// Variables compared across component groups (default: all columns).
    #[arg(long, value_delimiter = ',')]
    screen: Option<Vec<String>>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Subset of json,csv,md.
    #[arg(long, value_delimiter = ',', value_parser = parse_format)]
    format: Option<Vec<OutputFormat>>,
}

#[derive(Args)]
struct PatternsArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Write patterns.csv and patterns.md here instead of printing.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Design cell as <components>x<items>; repeatable.
    #[arg(long = "cell", value_parser = parse_cell)]
    cells: Vec<(usize, usize)>,
    /// Sample sizes, comma separated (default: 100,250,1000).
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    /// Missingness probabilities, comma separated (default: 0.1,0.25,0.5).
    #[arg(long, value_delimiter = ',')]
    pmiss: Vec<f64>,
    #[arg(long, value_parser = parse_corr, default_value = "pearson")]
    corr: CorrelationKind,
    #[arg(long, value_parser = parse_method, default_value = "pca")]
    method: ExtractionMethod,
    /// All 108 design cells.
    #[arg(long)]
    full: bool,
    /// Every correlation/method combination, not just the selected one.
    #[arg(long)]
    within: bool,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 100)]
    pa_reps: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct GuidanceArgs {
    #[arg(long)]
    n: usize,
    /// Items per component.
    #[arg(long)]
    ipc: usize,
    /// Expected number of components.
    #[arg(long)]
    comps: usize,
}

fn parse_corr(s: &str) -> Result<CorrelationKind, String> {
    match s {
        "pearson" => Ok(CorrelationKind::Pearson),
        "tetrachoric" => Ok(CorrelationKind::Tetrachoric),
        _ => Err(format!("unknown correlation `{s}` (pearson, tetrachoric)")),
    }
}

fn parse_method(s: &str) -> Result<ExtractionMethod, String> {
    match s {
        "pca" => Ok(ExtractionMethod::Pca),
        "paf" => Ok(ExtractionMethod::Paf),
        _ => Err(format!("unknown method `{s}` (pca, paf)")),
    }
}

fn parse_format(s: &str) -> Result<OutputFormat, String> {
    match s {
        "json" => Ok(OutputFormat::Json),
        "csv" => Ok(OutputFormat::Csv),
        "md" => Ok(OutputFormat::Md),
        _ => Err(format!("unknown format `{s}` (json, csv, md)")),
    }
}

fn ingest_options(input: &InputArgs) -> IngestOptions {
    let mut opts = IngestOptions::default();
    if !input.sentinels.is_empty() {
        opts.sentinels = input.sentinels.clone();
    }
    if input.tab {
        opts.delimiter = b'\t';
    }
    opts
}

fn build_config(args: AnalyzeArgs) -> anyhow::Result<RunConfig> {
    let mut c = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let input = args.input;
    if let Some(p) = input.input {
        c.input_path = p;
    }
    if !input.sentinels.is_empty() {
        c.missing_sentinels = input.sentinels;
    }
    if input.tab {
        c.delimiter = '\t';
    }
    if input.columns.is_some() {
        c.columns = input.columns;
    }
    if input.drop_fully_missing {
        c.drop_fully_missing_patterns = true;
    }
    if let Some(v) = args.corr {
        c.correlation_kind = v;
    }
    if let Some(v) = args.method {
        c.extraction_method = v;
    }
    if let Some(v) = args.criterion {
        c.criterion = v;
    }
    c.items_per_component = args.ipc.or(c.items_per_component);
    c.expected_components = args.comps.or(c.expected_components);
    if let Some(v) = args.cutoff {
        c.cutoff = v;
    }
    if let Some(v) = args.pa_reps {
        c.pa_reps = v;
    }
    if let Some(v) = args.percentile {
        c.percentile = v;
    }
    c.seed = args.seed.or(c.seed);
    if args.strata.is_some() {
        c.strata_column = args.strata;
    }
    if let Some(v) = args.covariates {
        c.covariate_columns = v;
    }
    if args.screen.is_some() {
        c.screen_columns = args.screen;
    }
    if let Some(v) = args.out {
        c.output_dir = v;
    }
    if let Some(v) = args.format {
        c.output_formats = v;
    }
    Ok(c)
}

fn run_analyze(args: AnalyzeArgs) -> anyhow::Result<()> {
    let config = build_config(args)?;
    let analysis = misspattern_cli::run(&config)?;
    let r = &analysis.report;
    println!("seed {}", r.seed);
    println!(
        "{} rows, {} indicators, {} patterns",
        r.n_rows,
        r.indicators.len(),
        r.patterns.n_observed_patterns
    );
    for c in &r.criteria {
        let k = c.k_retained.map_or_else(|| "n/a".to_string(), |k| k.to_string());
        let mark = if c.selected { " (selected)" } else { "" };
        println!("{:<20} {k}{mark}", c.criterion.name());
    }
    for s in &r.skipped_steps {
        println!("skipped {}: {}", s.step, s.reason);
    }
    println!("outputs in {}", r.config.output_dir.display());
    Ok(())
}

fn run_patterns(args: PatternsArgs) -> anyhow::Result<()> {
    let Some(path) = &args.input.input else {
        bail!("--input is required");
    };
    let data = ingest(path, &ingest_options(&args.input)).context("ingest")?.dataset;
    let selection = args.input.columns.clone().unwrap_or_else(|| data.column_names());
    let ind = build_indicators(&data, &selection).context("step 1 (missingness indicators)")?;
    let table = tabulate_patterns(&ind, args.input.drop_fully_missing);
    match &args.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
            std::fs::write(dir.join("patterns.csv"), table.to_csv()).context("writing patterns.csv")?;
            std::fs::write(dir.join("patterns.md"), table.to_markdown()).context("writing patterns.md")?;
        }
        None => print!("{}", table.to_markdown()),
    }
    Ok(())
}

fn run_simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let spec = GridSpec {
        cells: args.cells,
        n: args.n,
        p_miss: args.pmiss,
        corr_kind: args.corr,
        method: args.method,
        full: args.full,
        within: args.within,
    };
    let seed = args.seed.unwrap_or_else(rand::random);
    eprintln!("seed {seed}");
    let run = simulate(&spec, args.reps, seed, args.pa_reps, |done, total, c| {
        eprintln!(
            "[{done}/{total}] {}x{} n={} p_miss={:.2} {} {}",
            c.n_components,
            c.items_per_component,
            c.n,
            c.p_miss,
            c.corr_kind.name(),
            c.method.name()
        );
    })?;
    run.write(&args.out)?;
    print!("{}", run.aggregate_csv);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Analyze(a) => run_analyze(a),
        Command::Patterns(a) => run_patterns(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Guidance(a) => {
            println!("{}", guidance(a.n, a.ipc, a.comps));
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
