use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use kpi_rca::eval::run_benchmark;
use kpi_rca::forecast::{forecast_from_history, DEFAULT_WINDOW};
use kpi_rca::localize::{select_exrc_threshold, REPORT_VERSION};
use kpi_rca::simulate::{eliminate_for_exrc, full_grid, generate_cell, write_fault, FaultGenerator, SimMeasure, SimulationParams, SyntheticBase};
use kpi_rca::snapshot::{read_csv_rows, RawSnapshot};
use kpi_rca::{localize, Execution, LocalizeConfig, MeasureSpec, Snapshot};

#[derive(Parser)]
#[command(name = "kpi-rca", version, about = "Root-cause localization for multi-dimensional KPI snapshots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Localize the root cause of one snapshot.
    Localize(LocalizeArgs),
    /// Simulate a fault dataset.
    Simulate(SimulateArgs),
    /// Localize every fault of a dataset and report F1 scores.
    Evaluate(EvaluateArgs),
    /// Pick the external root cause threshold from historical minimum GPS values.
    ExrcThreshold(ExrcArgs),
}

#[derive(Args)]
struct LocalizeArgs {
    /// Snapshot CSV (attribute columns, then real/predict pairs).
    #[arg(long)]
    snapshot: PathBuf,
    /// Directory of earlier snapshot CSVs; forecasts become their moving average.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Moving-average window over the history.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    /// Measure spec such as `value`, `succ/total` or `price*qty`.
    #[arg(long)]
    measure: Option<String>,
    #[arg(long, default_value_t = 0.9)]
    delta: f64,
    #[arg(long, default_value_t = 0.8)]
    delta_exrc: f64,
    /// Write the overall deviation score distribution as CSV.
    #[arg(long)]
    hist_out: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Base snapshot CSV or `synthetic:<A>x<V>[@mean][:rate][#seed]`.
    #[arg(long)]
    base: String,
    #[arg(long)]
    measure: Option<String>,
    /// Comma-separated `<n_element>x<layer>` cells, or `full` for the 3x3 grid.
    #[arg(long, default_value = "full")]
    grid: String,
    #[arg(long, default_value_t = 10)]
    per_cell: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    base_noise: f64,
    #[arg(long, default_value_t = 0.05)]
    leaf_noise: f64,
    /// Remove this many random attributes from every fault afterwards.
    #[arg(long, default_value_t = 0)]
    eliminate: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value_t = 0.9)]
    delta: f64,
    #[arg(long, default_value_t = 0.8)]
    delta_exrc: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExrcArgs {
    /// JSON array of minimum GPS values.
    #[arg(long)]
    history: PathBuf,
}

/// Failure classes mapped onto exit codes 1 and 2.
enum Failure {
    Input(anyhow::Error),
    Internal(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<kpi_rca::Error>() {
            Some(kpi_rca::Error::Simulation(_) | kpi_rca::Error::EmptyCandidate) => Failure::Internal(e),
            Some(_) => Failure::Input(e),
            None if e.downcast_ref::<std::io::Error>().is_some() => Failure::Input(e),
            None => Failure::Internal(e),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Localize(a) => run_localize(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::ExrcThreshold(a) => run_exrc(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn input<T>(r: anyhow::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Input)
}

fn read_text(path: &Path) -> Result<String, Failure> {
    input(fs::read_to_string(path).with_context(|| format!("reading {}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Internal(e.into()))?;
    input(fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display())))
}

/// Measure from `--measure`, or the single value column of the CSV.
fn pick_measure(spec: Option<&str>, columns: &[String]) -> Result<MeasureSpec, Failure> {
    match spec {
        Some(s) => Ok(MeasureSpec::parse(s).map_err(anyhow::Error::from)?),
        None if columns.len() == 1 => Ok(MeasureSpec::fundamental(columns[0].clone())),
        None => Err(Failure::Input(anyhow!("several value columns ({}); pass --measure", columns.join(", ")))),
    }
}

fn run_localize(a: LocalizeArgs) -> Result<(), Failure> {
    let text = read_text(&a.snapshot)?;
    let mut raw = read_csv_rows(&text, a.history.is_none()).map_err(anyhow::Error::from)?;
    if let Some(dir) = &a.history {
        let history = read_history(dir)?;
        forecast_from_history(&mut raw, &history, a.window).map_err(anyhow::Error::from)?;
    }
    let measure = pick_measure(a.measure.as_deref(), &raw.columns)?;
    let snapshot = Snapshot::from_rows(raw.attributes, raw.columns, raw.rows, measure).map_err(anyhow::Error::from)?;
    let cfg = LocalizeConfig {
        delta: a.delta,
        delta_exrc: a.delta_exrc,
        execution: if a.sequential { Execution::Sequential } else { Execution::Parallel },
        ..LocalizeConfig::default()
    };
    let report = localize(&snapshot, &cfg).map_err(anyhow::Error::from)?;
    if let (Some(path), Some(overall)) = (&a.hist_out, &report.overall) {
        input(fs::write(path, overall.to_csv()).with_context(|| format!("writing {}", path.display())))?;
    }
    write_json(&a.out, &report)?;
    for e in &report.root_causes {
        println!("{e}");
    }
    Ok(())
}

/// Every `*.csv` in `dir`, oldest first by file name.
fn read_history(dir: &Path) -> Result<Vec<RawSnapshot>, Failure> {
    let mut paths: Vec<PathBuf> = input(fs::read_dir(dir).with_context(|| format!("reading {}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::Input(anyhow!("no CSV files in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let text = read_text(p)?;
            input(read_csv_rows(&text, false).with_context(|| format!("parsing {}", p.display())))
        })
        .collect()
}

fn parse_grid(spec: &str, template: &SimulationParams) -> anyhow::Result<Vec<SimulationParams>> {
    if spec == "full" {
        return Ok(full_grid(template));
    }
    spec.split(',')
        .map(|cell| {
            let (n, l) = cell.trim().split_once('x').ok_or_else(|| anyhow!("bad grid cell `{cell}`"))?;
            Ok(SimulationParams {
                n_element: n.parse().with_context(|| format!("bad grid cell `{cell}`"))?,
                cuboid_layer: l.parse().with_context(|| format!("bad grid cell `{cell}`"))?,
                ..template.clone()
            })
        })
        .collect()
}

#[derive(Serialize)]
struct DatasetManifest<'a> {
    version: u32,
    base: &'a str,
    per_cell: usize,
    seed: u64,
    eliminate: usize,
    cells: Vec<(usize, usize)>,
    faults: usize,
}

fn run_simulate(a: SimulateArgs) -> Result<(), Failure> {
    let base = if a.base.starts_with("synthetic:") {
        SyntheticBase::parse(&a.base).map_err(anyhow::Error::from)?.build().map_err(anyhow::Error::from)?
    } else {
        let text = read_text(Path::new(&a.base))?;
        let raw = read_csv_rows(&text, true).map_err(anyhow::Error::from)?;
        let measure = pick_measure(a.measure.as_deref(), &raw.columns)?;
        Snapshot::from_rows(raw.attributes, raw.columns, raw.rows, measure).map_err(anyhow::Error::from)?
    };
    let template = SimulationParams {
        base_noise_sigma: a.base_noise,
        leaf_noise_sigma: a.leaf_noise,
        seed: a.seed,
        measure_kind: if base.measure().is_derived() { SimMeasure::SuccessRate } else { SimMeasure::Fundamental },
        ..SimulationParams::default()
    };
    let cells = input(parse_grid(&a.grid, &template))?;
    for c in &cells {
        c.validate().map_err(anyhow::Error::from)?;
    }
    if a.eliminate >= base.schema().len() {
        bail_input(format!("cannot eliminate {} of {} attributes", a.eliminate, base.schema().len()))?;
    }
    let generator = FaultGenerator::new(&base);
    let mut written = 0;
    for (ci, cell) in cells.iter().enumerate() {
        let faults = generate_cell(&generator, cell, ci, a.per_cell, Execution::Parallel).map_err(anyhow::Error::from)?;
        let dir = a.out.join(format!("n{}_l{}", cell.n_element, cell.cuboid_layer));
        for (i, f) in faults.iter().enumerate() {
            let f = if a.eliminate > 0 {
                eliminate_for_exrc(f, a.eliminate).map_err(anyhow::Error::from)?
            } else {
                f.clone()
            };
            input(write_fault(&dir.join(format!("fault-{i:04}")), &f).map_err(anyhow::Error::from))?;
            written += 1;
        }
    }
    let manifest = DatasetManifest {
        version: REPORT_VERSION,
        base: &a.base,
        per_cell: a.per_cell,
        seed: a.seed,
        eliminate: a.eliminate,
        cells: cells.iter().map(SimulationParams::cell).collect(),
        faults: written,
    };
    write_json(&a.out.join("dataset.json"), &manifest)?;
    println!("{written} faults written to {}", a.out.display());
    Ok(())
}

fn bail_input(msg: String) -> Result<(), Failure> {
    Err(Failure::Input(anyhow!(msg)))
}

fn run_evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    let cfg = LocalizeConfig { delta: a.delta, delta_exrc: a.delta_exrc, ..LocalizeConfig::default() };
    cfg.validate().map_err(anyhow::Error::from)?;
    let report = run_benchmark(&a.dataset, &cfg, a.workers).map_err(anyhow::Error::from)?;
    for (dir, why) in &report.skipped {
        eprintln!("warning: skipped {dir}: {why}");
    }
    write_json(&a.out, &report)?;
    match report.overall_f1 {
        Some(f) => println!("{} faults, F1 {f:.4}", report.cases),
        None => println!("no faults scored"),
    }
    Ok(())
}

fn run_exrc(a: ExrcArgs) -> Result<(), Failure> {
    let text = read_text(&a.history)?;
    let values: Vec<f64> = input(serde_json::from_str(&text).context("expected a JSON array of numbers"))?;
    println!("{}", select_exrc_threshold(&values));
    Ok(())
}
