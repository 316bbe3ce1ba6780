//! Report files and the command-line entry point.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;

use crate::canonical;
use crate::scenario::{parse_config, run_scenario, CliError, CsvFile, Outcome, Task};

#[derive(Debug, Parser)]
#[command(name = "bm-lab", version = crate::scenario::VERSION, about = "Run a bmlab scenario")]
pub struct Args {
    pub task: Task,
    #[arg(long)]
    pub config: PathBuf,
    /// Defaults to the config's `output`, else `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; falls back to BM_LAB_WORKERS, the config, then all cores.
    #[arg(long, env = "BM_LAB_WORKERS")]
    pub workers: Option<usize>,
}

fn csv_bytes(c: &CsvFile) -> Result<Vec<u8>, CliError> {
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", c.name));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&c.header).map_err(io)?;
    for r in &c.rows {
        w.write_record(r).map_err(io)?;
    }
    w.into_inner().map_err(|e| CliError::Io(format!("{}: {e}", c.name)))
}

/// Writes `report.json` and one CSV per curve into `dir`.
pub fn emit_report(outcome: &Outcome, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let io = |p: &Path, e: std::io::Error| CliError::Io(format!("{}: {e}", p.display()));
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut written = Vec::new();
    let path = dir.join("report.json");
    fs::write(&path, canonical::to_string(&outcome.report)?).map_err(|e| io(&path, e))?;
    written.push(path);
    for c in &outcome.csvs {
        let path = dir.join(&c.name);
        fs::write(&path, csv_bytes(c)?).map_err(|e| io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

fn run(args: &Args) -> Result<i32, CliError> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    let cfg = parse_config(&text)?;
    let workers = args.workers.or(cfg.workers).unwrap_or(0);
    let out = args.out.clone().or_else(|| cfg.output.clone().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    let outcome = pool.install(|| run_scenario(args.task, cfg, args.seed))?;
    emit_report(&outcome, &out)?;
    if let Some(e) = &outcome.report.error {
        eprintln!("bm-lab: numeric failure: {e}");
    }
    Ok(outcome.exit_code)
}

/// Parses arguments, runs, writes the report and returns the exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("bm-lab: {}", e.message());
            e.exit_code()
        }
    }
}
