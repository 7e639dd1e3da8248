//! `colorsched`: WCET tables, color allocation, sweeps and plots.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use colorsched::cache::classify;
use colorsched::experiment::{run_sweep, SweepConfig};
use colorsched::plot::{plot_csv, Metric};
use colorsched::tables::{
    colorings_to_csv, select_tables, tables_from_csv, tables_to_csv, taskset_from_json, NamedTable,
};
use colorsched::{export_lp, load_program, solve, wcet_table, AllocationProblem, CacheConfig, Heuristic};

const SEED_VAR: &str = "COLORSCHED_SEED";

#[derive(Parser)]
#[command(
    name = "colorsched",
    version,
    about = "Cache coloring and color allocation for EDF task sets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute C(j) for j = 1..s_max under one or more coloring heuristics.
    WcetTable {
        #[arg(long)]
        program: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        /// fair, federated, random or random:<seed>; repeat or separate with commas.
        #[arg(long, required = true, value_delimiter = ',')]
        heuristic: Vec<String>,
        #[arg(long)]
        n_tasks: u32,
        #[arg(long)]
        out: PathBuf,
        /// Write the access classification (block,line,class,scope) here.
        #[arg(long)]
        dump_classes: Option<PathBuf>,
        /// Color budget whose coloring is classified for --dump-classes.
        #[arg(long, default_value_t = 1)]
        dump_colors: u32,
        /// Write every table coloring (task,heuristic,colors,page,color) here.
        #[arg(long)]
        dump_colorings: Option<PathBuf>,
    },
    /// Choose the color count of every task; exit 1 when no allocation exists.
    Allocate {
        #[arg(long)]
        taskset: PathBuf,
        /// Directory of table CSVs, or a single table CSV.
        #[arg(long)]
        tables: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        /// Heuristic to use when the tables hold several per task.
        #[arg(long)]
        heuristic: Option<String>,
        /// Also write the 0-1 program in LP format.
        #[arg(long)]
        export_lp: Option<PathBuf>,
    },
    /// Run the utilization sweep and write its CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Draw a sweep CSV as an SVG line chart.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// schedulable or colors.
        #[arg(long, default_value = "schedulable")]
        metric: String,
        /// Cache whose color count caps the colors axis (default geometry otherwise).
        #[arg(long)]
        cache: Option<PathBuf>,
    },
}

/// Failure carrying the process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<colorsched::Error> for Failure {
    fn from(e: colorsched::Error) -> Self {
        Failure {
            code: 2,
            message: e.to_string(),
        }
    }
}

fn input_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| input_error(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| input_error(format!("cannot write {}: {e}", path.display())))
}

fn load_cache(path: &Path) -> Result<CacheConfig, Failure> {
    Ok(CacheConfig::from_json(&read(path)?)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::WcetTable {
            program,
            cache,
            heuristic,
            n_tasks,
            out,
            dump_classes,
            dump_colors,
            dump_colorings,
        } => cmd_wcet_table(
            &program,
            &cache,
            &heuristic,
            n_tasks,
            &out,
            dump_classes.as_deref().map(|p| (p, dump_colors)),
            dump_colorings.as_deref(),
        ),
        Command::Allocate {
            taskset,
            tables,
            cache,
            heuristic,
            export_lp,
        } => cmd_allocate(&taskset, &tables, &cache, heuristic.as_deref(), export_lp.as_deref()),
        Command::Sweep { config, out, jobs } => cmd_sweep(&config, &out, jobs),
        Command::Plot {
            csv,
            out,
            metric,
            cache,
        } => cmd_plot(&csv, &out, &metric, cache.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("colorsched: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_wcet_table(
    program: &Path,
    cache: &Path,
    heuristics: &[String],
    n_tasks: u32,
    out: &Path,
    dump_classes: Option<(&Path, u32)>,
    dump_colorings: Option<&Path>,
) -> Result<u8, Failure> {
    let heuristics: Vec<Heuristic> = heuristics.iter().map(|h| h.parse()).collect::<Result<_, _>>()?;
    if dump_classes.is_some() && heuristics.len() != 1 {
        return Err(input_error("--dump-classes needs exactly one --heuristic"));
    }
    let program = load_program(&read(program)?)?;
    let cache = load_cache(cache)?;
    let tables: Vec<NamedTable> = heuristics
        .iter()
        .map(|&h| {
            Ok(NamedTable {
                heuristic: h.name().to_string(),
                table: wcet_table(&program, h, &cache, n_tasks)?,
            })
        })
        .collect::<Result<_, colorsched::Error>>()?;
    write(out, &tables_to_csv(&tables))?;
    if let Some((path, j)) = dump_classes {
        let coloring = heuristics[0].coloring(&program, j)?;
        write(path, &classify(&program, &coloring, &cache)?.to_csv(&program))?;
    }
    if let Some(path) = dump_colorings {
        write(path, &colorings_to_csv(&tables))?;
    }
    Ok(0)
}

fn table_files(path: &Path) -> Result<Vec<PathBuf>, Failure> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = fs::read_dir(path).map_err(|e| input_error(format!("cannot read {}: {e}", path.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(input_error(format!("no .csv tables in {}", path.display())));
    }
    Ok(files)
}

fn cmd_allocate(
    taskset: &Path,
    tables: &Path,
    cache: &Path,
    heuristic: Option<&str>,
    lp_out: Option<&Path>,
) -> Result<u8, Failure> {
    let tasks = taskset_from_json(&read(taskset)?)?;
    let mut available = Vec::new();
    for file in table_files(tables)? {
        let text = read(&file)?;
        let parsed = tables_from_csv(&text).map_err(|e| input_error(format!("{}: {e}", file.display())))?;
        available.extend(parsed);
    }
    let selected = select_tables(&available, &tasks, heuristic)?;
    let problem = AllocationProblem::new(selected, tasks, load_cache(cache)?)?;
    if let Some(path) = lp_out {
        write(path, &export_lp(&problem)?)?;
    }
    let outcome = solve(&problem)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&outcome.to_json()).expect("json value serializes")
    );
    Ok(if outcome.is_feasible() { 0 } else { 1 })
}

fn cmd_sweep(config: &Path, out: &Path, jobs: Option<usize>) -> Result<u8, Failure> {
    let base = config.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut config = SweepConfig::from_json_with(&read(config)?, |rel| {
        let path = base.join(rel);
        fs::read_to_string(&path).map_err(|e| {
            colorsched::Error::new(
                colorsched::Code::Malformed,
                format!("cannot read {}: {e}", path.display()),
            )
        })
    })?;
    if let Ok(seed) = std::env::var(SEED_VAR) {
        config.master_seed = seed
            .trim()
            .parse()
            .map_err(|_| input_error(format!("{SEED_VAR}={seed:?} is not an unsigned integer")))?;
    }
    let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from));
    if jobs == 0 {
        return Err(input_error("--jobs must be at least 1"));
    }
    let result = run_sweep(&config, jobs)?;
    for d in &result.diagnostics {
        eprintln!("colorsched: {d}");
    }
    write(out, &result.to_csv())?;
    Ok(0)
}

fn cmd_plot(csv: &Path, out: &Path, metric: &str, cache: Option<&Path>) -> Result<u8, Failure> {
    let metric: Metric = metric.parse()?;
    let colors = match cache {
        Some(path) => load_cache(path)?.colors(),
        None => CacheConfig::default().colors(),
    };
    let svg = plot_csv(&read(csv)?, metric, colors).map_err(|e| input_error(format!("{}: {e}", csv.display())))?;
    write(out, &svg)?;
    Ok(0)
}
