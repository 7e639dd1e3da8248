//! Utilization sweep: random task sets over a utilization grid, scored by
//! how often each allocation method finds a schedulable configuration.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::allocator::{random_allocation, solve, AllocationProblem, TaskSkeleton};
use crate::error::{bail, Code, Error, Result};
use crate::heuristics::Heuristic;
use crate::model::{CacheConfig, SporadicTask, WcetTable, SCHEMA_VERSION};
use crate::program::{load_program, TaskProgram};
use crate::schedulability::edf_schedulable;
use crate::synthetic::{synthetic_program, Shape, ShapeParams};
use crate::wcet::{infinite_cache_wcet, wcet_table};

pub const METHODS: [&str; 5] = [
    "ilp_fair",
    "ilp_federated",
    "ilp_random",
    "random_alloc",
    "infinite_cache",
];

pub const CSV_HEADER: &str = "utilization,method,schedulable_pct,avg_colors_used";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeadlineMode {
    Implicit,
    Constrained,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UGrid {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl UGrid {
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as usize + 1;
        (0..n)
            .map(|i| ((self.min + i as f64 * self.step) * 1e9).round() / 1e9)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub programs: Vec<TaskProgram>,
    pub cache: CacheConfig,
    pub u_grid: UGrid,
    pub samples: u32,
    pub deadline_mode: DeadlineMode,
    pub master_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            programs: default_programs(),
            cache: CacheConfig::default(),
            u_grid: UGrid {
                min: 0.30,
                max: 1.70,
                step: 0.01,
            },
            samples: 1000,
            deadline_mode: DeadlineMode::Implicit,
            master_seed: 0,
        }
    }
}

/// One generated program in a config file.
#[derive(Debug, Clone, Deserialize)]
struct SyntheticSpec {
    task_id: String,
    pages: u32,
    shape: Shape,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepDoc {
    v: u32,
    #[serde(default)]
    programs: Option<Vec<Value>>,
    #[serde(default)]
    cache: Option<CacheConfig>,
    #[serde(default)]
    u_grid: Option<UGrid>,
    #[serde(default)]
    samples: Option<u32>,
    #[serde(default)]
    deadline_mode: Option<DeadlineMode>,
    #[serde(default)]
    master_seed: Option<u64>,
}

impl SweepConfig {
    /// Parses a config document. Each `programs` entry is an inline program
    /// document, `{"synthetic": {"task_id", "pages", "shape", "seed"}}`, or
    /// a string handed to `load` (typically a file path). Omitted fields
    /// take their defaults.
    pub fn from_json_with(text: &str, mut load: impl FnMut(&str) -> Result<String>) -> Result<Self> {
        let doc: SweepDoc =
            serde_json::from_str(text).map_err(|e| Error::new(Code::Malformed, format!("sweep config: {e}")))?;
        if doc.v != SCHEMA_VERSION {
            bail!(
                Code::UnsupportedVersion,
                "sweep config version {} (expected {SCHEMA_VERSION})",
                doc.v
            );
        }
        let mut config = SweepConfig::default();
        if let Some(entries) = doc.programs {
            config.programs = entries
                .into_iter()
                .map(|entry| match entry {
                    Value::String(path) => load_program(&load(&path)?),
                    Value::Object(ref map) if map.contains_key("synthetic") => {
                        let spec: SyntheticSpec = serde_json::from_value(map["synthetic"].clone())
                            .map_err(|e| Error::new(Code::Malformed, format!("synthetic program: {e}")))?;
                        if spec.pages == 0 {
                            bail!(Code::Malformed, "synthetic program '{}' needs pages >= 1", spec.task_id);
                        }
                        Ok(synthetic_program(
                            &spec.task_id,
                            spec.pages,
                            &ShapeParams::new(spec.shape),
                            spec.seed,
                        ))
                    }
                    other => load_program(&other.to_string()),
                })
                .collect::<Result<_>>()?;
        }
        if let Some(cache) = doc.cache {
            config.cache = cache;
        }
        if let Some(grid) = doc.u_grid {
            config.u_grid = grid;
        }
        if let Some(samples) = doc.samples {
            config.samples = samples;
        }
        if let Some(mode) = doc.deadline_mode {
            config.deadline_mode = mode;
        }
        if let Some(seed) = doc.master_seed {
            config.master_seed = seed;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_json_with(text, |path| {
            bail!(Code::Malformed, "program path '{path}' cannot be resolved here")
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.cache.validate()?;
        let g = &self.u_grid;
        if !(g.min.is_finite() && g.max.is_finite() && g.step.is_finite())
            || g.min <= 0.0
            || g.min > g.max
            || g.step <= 0.0
        {
            bail!(Code::Malformed, "u_grid needs 0 < min <= max and step > 0");
        }
        if self.samples == 0 {
            bail!(Code::Malformed, "samples must be at least 1");
        }
        if self.programs.is_empty() {
            bail!(Code::Malformed, "sweep needs at least one program");
        }
        for p in &self.programs {
            p.check_geometry(&self.cache)?;
        }
        Ok(())
    }
}

/// Benchmark stand-ins with the page counts of the reference task table.
pub fn default_programs() -> Vec<TaskProgram> {
    let specs: [(&str, u32, Shape); 8] = [
        ("compress", 4, Shape::NestedLoops),
        ("fir", 2, Shape::SingleLoop),
        ("ndes", 4, Shape::SingleLoop),
        ("jfdctint", 3, Shape::NestedLoops),
        ("edn", 4, Shape::NestedLoops),
        ("crc", 2, Shape::SingleLoop),
        ("g723_enc", 8, Shape::NestedLoops),
        ("petrinet", 8, Shape::SingleLoop),
    ];
    specs
        .iter()
        .enumerate()
        .map(|(i, &(name, pages, shape))| synthetic_program(name, pages, &ShapeParams::new(shape), 1000 + i as u64))
        .collect()
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one sample, a function of its grid and sample index only.
pub fn sample_seed(master_seed: u64, u_index: usize, sample: u32) -> u64 {
    mix(mix(mix(master_seed) ^ u_index as u64) ^ u64::from(sample))
}

/// Utilizations summing to `total`, uniform over the simplex.
pub fn uunifast(n: usize, total: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut sum = total;
    for i in 1..n {
        let next = sum * rng.gen::<f64>().powf(1.0 / (n - i) as f64);
        out.push(sum - next);
        sum = next;
    }
    if n > 0 {
        out.push(sum);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthesizedSet {
    pub tasks: Vec<SporadicTask>,
    /// Some share exceeded 1, so the set cannot be scheduled whatever the
    /// allocation.
    pub degenerate: bool,
}

/// Periods `ceil(C / U)` (at least `C`) and deadlines per `mode`, with `C`
/// the worst WCET of each task.
pub fn synthesize_taskset(
    ids: &[&str],
    worst: &[u64],
    utilizations: &[f64],
    mode: DeadlineMode,
    seed: u64,
) -> SynthesizedSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut degenerate = false;
    let tasks = ids
        .iter()
        .zip(worst)
        .zip(utilizations)
        .map(|((&id, &c), &u)| {
            degenerate |= u > 1.0;
            let period = ((c as f64 / u).ceil() as u64).max(c);
            let deadline = match mode {
                DeadlineMode::Implicit => period,
                DeadlineMode::Constrained => {
                    let lo = c + (3 * (period - c)).div_ceil(4);
                    rng.gen_range(lo..=period)
                }
            };
            SporadicTask::new(id, c, deadline, period, 0)
        })
        .collect();
    SynthesizedSet { tasks, degenerate }
}

/// Per-program inputs of a sweep, computed once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepTables {
    pub fair: Vec<WcetTable>,
    pub federated: Vec<WcetTable>,
    pub random: Vec<WcetTable>,
    pub infinite: Vec<u64>,
}

impl SweepTables {
    pub fn all(&self) -> impl Iterator<Item = &WcetTable> {
        self.fair.iter().chain(&self.federated).chain(&self.random)
    }
}

pub fn random_heuristic_seed(master_seed: u64, program: usize) -> u64 {
    mix(master_seed ^ 0x5EED_0000 ^ program as u64)
}

pub fn prepare_tables(config: &SweepConfig) -> Result<SweepTables> {
    let n = config.programs.len() as u32;
    let tables = |h: &(dyn Fn(usize) -> Heuristic + Sync)| -> Result<Vec<WcetTable>> {
        config
            .programs
            .par_iter()
            .enumerate()
            .map(|(i, p)| wcet_table(p, h(i), &config.cache, n))
            .collect()
    };
    Ok(SweepTables {
        fair: tables(&|_| Heuristic::Fair)?,
        federated: tables(&|_| Heuristic::Federated)?,
        random: tables(&|i| Heuristic::Random(random_heuristic_seed(config.master_seed, i)))?,
        infinite: config
            .programs
            .iter()
            .map(|p| infinite_cache_wcet(p, &config.cache))
            .collect::<Result<_>>()?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct MethodResult {
    schedulable: bool,
    colors: u32,
}

fn evaluate_sample(
    config: &SweepConfig,
    tables: &SweepTables,
    u_index: usize,
    u: f64,
    sample: u32,
) -> ([MethodResult; 5], Option<String>) {
    let seed = sample_seed(config.master_seed, u_index, sample);
    let n = config.programs.len();
    let shares = uunifast(n, u, seed);
    let ids: Vec<&str> = config.programs.iter().map(|p| p.task_id.as_str()).collect();
    let worst: Vec<u64> = tables.fair.iter().map(WcetTable::worst).collect();
    let set = synthesize_taskset(&ids, &worst, &shares, config.deadline_mode, mix(seed ^ 1));
    let mut out = [MethodResult::default(); 5];
    if set.degenerate {
        return (out, None);
    }
    let skeletons: Vec<TaskSkeleton> = set
        .tasks
        .iter()
        .map(|t| TaskSkeleton::new(t.id.clone(), t.deadline, t.period))
        .collect();
    let mut diagnostic = None;
    let mut run = |tbl: &[WcetTable], random: bool| -> MethodResult {
        let outcome = AllocationProblem::new(tbl.to_vec(), skeletons.clone(), config.cache).and_then(|p| {
            if random {
                Ok(random_allocation(&p, mix(seed ^ 2)))
            } else {
                solve(&p)
            }
        });
        match outcome {
            Ok(o) if o.is_feasible() => MethodResult {
                schedulable: true,
                colors: o.total_colors().unwrap_or(0),
            },
            Ok(_) => MethodResult::default(),
            Err(e) => {
                diagnostic = Some(format!("u={u} sample={sample}: {e}"));
                MethodResult::default()
            }
        }
    };
    out[0] = run(&tables.fair, false);
    out[1] = run(&tables.federated, false);
    out[2] = run(&tables.random, false);
    out[3] = run(&tables.random, true);
    let relaxed: Vec<SporadicTask> = set
        .tasks
        .iter()
        .zip(&tables.infinite)
        .map(|(t, &c)| SporadicTask::new(t.id.clone(), c, t.deadline, t.period, 0))
        .collect();
    out[4] = MethodResult {
        schedulable: edf_schedulable(&relaxed),
        colors: 0,
    };
    (out, diagnostic)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub utilization: f64,
    pub method: String,
    pub schedulable_pct: f64,
    pub avg_colors_used: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub tables: SweepTables,
    pub diagnostics: Vec<String>,
}

impl SweepResult {
    pub fn row(&self, utilization: f64, method: &str) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && (r.utilization - utilization).abs() < 1e-9)
    }

    pub fn to_csv(&self) -> String {
        rows_to_csv(&self.rows)
    }
}

pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let avg = r.avg_colors_used.map(|a| format!("{a:.3}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{:.2},{avg}",
            format_u(r.utilization),
            r.method,
            r.schedulable_pct
        )
        .unwrap();
    }
    out
}

/// At least two decimals, trailing zeros beyond that trimmed.
fn format_u(u: f64) -> String {
    let s = format!("{u:.6}");
    let trimmed = s.trim_end_matches('0');
    let decimals = trimmed.split('.').nth(1).map_or(0, str::len);
    if decimals < 2 {
        format!("{u:.2}")
    } else {
        trimmed.to_string()
    }
}

/// Runs the sweep on `jobs` worker threads; the output does not depend
/// on `jobs`.
pub fn run_sweep(config: &SweepConfig, jobs: usize) -> Result<SweepResult> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::new(Code::Malformed, format!("thread pool: {e}")))?;
    pool.install(|| run_in_pool(config))
}

fn run_in_pool(config: &SweepConfig) -> Result<SweepResult> {
    let tables = prepare_tables(config)?;
    let grid = config.u_grid.points();
    let samples = config.samples as usize;
    let results: Vec<([MethodResult; 5], Option<String>)> = (0..grid.len() * samples)
        .into_par_iter()
        .map(|w| evaluate_sample(config, &tables, w / samples, grid[w / samples], (w % samples) as u32))
        .collect();
    let mut rows = Vec::with_capacity(grid.len() * METHODS.len());
    let mut diagnostics = Vec::new();
    for (ui, &u) in grid.iter().enumerate() {
        let chunk = &results[ui * samples..(ui + 1) * samples];
        diagnostics.extend(chunk.iter().filter_map(|(_, d)| d.clone()));
        for (m, &method) in METHODS.iter().enumerate() {
            let ok: Vec<&MethodResult> = chunk.iter().map(|(r, _)| &r[m]).filter(|r| r.schedulable).collect();
            let avg = (method != "infinite_cache" && !ok.is_empty())
                .then(|| ok.iter().map(|r| f64::from(r.colors)).sum::<f64>() / ok.len() as f64);
            rows.push(SweepRow {
                utilization: u,
                method: method.to_string(),
                schedulable_pct: 100.0 * ok.len() as f64 / samples as f64,
                avg_colors_used: avg,
            });
        }
    }
    Ok(SweepResult {
        rows,
        tables,
        diagnostics,
    })
}
