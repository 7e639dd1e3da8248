//! Python bindings: programs, caches, WCET tables, colorings, allocation,
//! EDF checks, sweeps and plots.

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use colorsched_core as core;
use core::experiment::SweepConfig;
use core::heuristics::{fair_coloring, federated_coloring, page_scores, random_coloring};
use core::plot::{plot_csv, Metric};
use core::synthetic::{synthetic_program, Shape, ShapeParams};
use core::{AllocationProblem, Heuristic, SporadicTask, TaskSkeleton};

create_exception!(
    colorsched,
    ColorschedError,
    PyValueError,
    "Invalid input or failed analysis."
);

fn err(e: core::Error) -> PyErr {
    ColorschedError::new_err(e.to_string())
}

/// Cache geometry: ways, cache pages, lines per page and miss penalty.
#[pyclass(module = "colorsched", frozen, skip_from_py_object)]
#[derive(Clone)]
struct CacheConfig {
    inner: core::CacheConfig,
}

#[pymethods]
impl CacheConfig {
    #[new]
    #[pyo3(signature = (ways=2, cache_pages=32, lines_per_page=16, miss_penalty=10))]
    fn new(ways: u32, cache_pages: u32, lines_per_page: u32, miss_penalty: u64) -> PyResult<Self> {
        let inner = core::CacheConfig::new(ways, cache_pages, lines_per_page, miss_penalty).map_err(err)?;
        Ok(CacheConfig { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = core::CacheConfig::from_json(text).map_err(err)?;
        Ok(CacheConfig { inner })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn ways(&self) -> u32 {
        self.inner.ways
    }

    #[getter]
    fn cache_pages(&self) -> u32 {
        self.inner.cache_pages
    }

    #[getter]
    fn lines_per_page(&self) -> u32 {
        self.inner.lines_per_page
    }

    #[getter]
    fn miss_penalty(&self) -> u64 {
        self.inner.miss_penalty
    }

    /// Number of colors, `cache_pages / ways`.
    #[getter]
    fn colors(&self) -> u32 {
        self.inner.colors()
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "CacheConfig(ways={}, cache_pages={}, lines_per_page={}, miss_penalty={})",
            c.ways, c.cache_pages, c.lines_per_page, c.miss_penalty
        )
    }
}

/// A validated task program: CFG, loop bounds and page layout.
#[pyclass(module = "colorsched", frozen, skip_from_py_object)]
#[derive(Clone)]
struct TaskProgram {
    inner: core::TaskProgram,
}

#[pymethods]
impl TaskProgram {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = core::load_program(text).map_err(err)?;
        Ok(TaskProgram { inner })
    }

    /// Deterministic generated program; `shape` is `straight_line`,
    /// `single_loop` or `nested_loops`.
    #[staticmethod]
    #[pyo3(signature = (task_id, pages, shape="single_loop", seed=0))]
    fn synthetic(task_id: &str, pages: u32, shape: &str, seed: u64) -> PyResult<Self> {
        let shape = match shape {
            "straight_line" => Shape::StraightLine,
            "single_loop" => Shape::SingleLoop,
            "nested_loops" => Shape::NestedLoops,
            other => {
                return Err(ColorschedError::new_err(format!(
                    "unknown shape '{other}' (expected straight_line, single_loop or nested_loops)"
                )))
            }
        };
        if pages == 0 {
            return Err(ColorschedError::new_err("pages must be at least 1"));
        }
        let inner = synthetic_program(task_id, pages, &ShapeParams::new(shape), seed);
        Ok(TaskProgram { inner })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn task_id(&self) -> String {
        self.inner.task_id.clone()
    }

    #[getter]
    fn page_count(&self) -> u32 {
        self.inner.page_count
    }

    #[getter]
    fn block_count(&self) -> usize {
        self.inner.blocks().len()
    }

    #[getter]
    fn loop_count(&self) -> usize {
        self.inner.loops().len()
    }

    #[getter]
    fn max_depth(&self) -> u32 {
        self.inner.max_depth()
    }

    fn __repr__(&self) -> String {
        format!(
            "TaskProgram(task_id={:?}, page_count={}, blocks={})",
            self.inner.task_id,
            self.inner.page_count,
            self.inner.blocks().len()
        )
    }
}

/// `C(j)` for `j = 1..s_max` with the coloring realizing each entry.
#[pyclass(module = "colorsched", frozen, skip_from_py_object)]
#[derive(Clone)]
struct WcetTable {
    inner: core::WcetTable,
}

#[pymethods]
impl WcetTable {
    #[new]
    fn new(task_id: &str, wcets: Vec<u64>) -> PyResult<Self> {
        let inner = core::WcetTable::from_wcets(task_id, &wcets).map_err(err)?;
        Ok(WcetTable { inner })
    }

    #[getter]
    fn task_id(&self) -> String {
        self.inner.task_id.clone()
    }

    #[getter]
    fn wcets(&self) -> Vec<u64> {
        self.inner.wcets()
    }

    #[getter]
    fn colorings(&self) -> Vec<Vec<u32>> {
        self.inner.entries().iter().map(|e| e.coloring.0.clone()).collect()
    }

    #[getter]
    fn s_max(&self) -> u32 {
        self.inner.s_max()
    }

    /// `C(j)` for `1 <= j <= s_max`.
    fn wcet(&self, colors: u32) -> PyResult<u64> {
        if colors == 0 || colors > self.inner.s_max() {
            return Err(ColorschedError::new_err(format!(
                "colors must be in 1..={}",
                self.inner.s_max()
            )));
        }
        Ok(self.inner.wcet(colors))
    }

    fn __len__(&self) -> usize {
        self.inner.entries().len()
    }

    fn __repr__(&self) -> String {
        format!(
            "WcetTable(task_id={:?}, wcets={:?})",
            self.inner.task_id,
            self.inner.wcets()
        )
    }
}

/// WCET in cycles of `program` under `coloring` (one color per page).
#[pyfunction]
fn wcet(program: &TaskProgram, coloring: Vec<u32>, cache: &CacheConfig) -> PyResult<u64> {
    core::wcet(&program.inner, &core::Coloring(coloring), &cache.inner).map_err(err)
}

/// WCET with every page in its own color.
#[pyfunction]
fn infinite_cache_wcet(program: &TaskProgram, cache: &CacheConfig) -> PyResult<u64> {
    core::infinite_cache_wcet(&program.inner, &cache.inner).map_err(err)
}

/// Table for `heuristic` (`fair`, `federated`, `random` or `random:<seed>`).
#[pyfunction]
fn wcet_table(program: &TaskProgram, heuristic: &str, cache: &CacheConfig, n_tasks: u32) -> PyResult<WcetTable> {
    let h: Heuristic = heuristic.parse().map_err(err)?;
    let inner = core::wcet_table(&program.inner, h, &cache.inner, n_tasks).map_err(err)?;
    Ok(WcetTable { inner })
}

#[pyfunction(name = "fair_coloring")]
fn py_fair_coloring(pages: u32, budget: u32) -> PyResult<Vec<u32>> {
    Ok(fair_coloring(pages, budget).map_err(err)?.0)
}

#[pyfunction(name = "federated_coloring")]
fn py_federated_coloring(program: &TaskProgram, budget: u32) -> PyResult<Vec<u32>> {
    Ok(federated_coloring(&page_scores(&program.inner), budget).map_err(err)?.0)
}

#[pyfunction(name = "random_coloring")]
fn py_random_coloring(pages: u32, budget: u32, seed: u64) -> PyResult<Vec<u32>> {
    Ok(random_coloring(pages, budget, seed).map_err(err)?.0)
}

/// Per-page score: instructions weighted by `10^depth`.
#[pyfunction(name = "page_scores")]
fn py_page_scores(program: &TaskProgram) -> Vec<u64> {
    page_scores(&program.inner).iter().map(|s| s.score).collect()
}

fn problem(
    tables: Vec<PyRef<'_, WcetTable>>,
    tasks: Vec<(String, u64, u64)>,
    cache: &CacheConfig,
) -> PyResult<AllocationProblem> {
    let tables = tables.iter().map(|t| t.inner.clone()).collect();
    let tasks = tasks
        .into_iter()
        .map(|(id, d, t)| TaskSkeleton::new(id, d, t))
        .collect();
    AllocationProblem::new(tables, tasks, cache.inner).map_err(err)
}

fn json_value<'py>(py: Python<'py>, value: &impl ToString) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (value.to_string(),))
}

/// Minimum total colors keeping the task set EDF-feasible. `tasks` holds
/// `(id, deadline, period)` aligned with `tables`. Returns the allocation
/// as a dict with `feasible`, `colors` and `total_colors`.
#[pyfunction]
fn allocate<'py>(
    py: Python<'py>,
    tables: Vec<PyRef<'py, WcetTable>>,
    tasks: Vec<(String, u64, u64)>,
    cache: &CacheConfig,
) -> PyResult<Bound<'py, PyAny>> {
    let problem = problem(tables, tasks, cache)?;
    let outcome = py.detach(|| core::solve(&problem)).map_err(err)?;
    json_value(py, &outcome.to_json())
}

/// Seeded random split of the colors, checked for feasibility.
#[pyfunction]
fn random_allocation<'py>(
    py: Python<'py>,
    tables: Vec<PyRef<'py, WcetTable>>,
    tasks: Vec<(String, u64, u64)>,
    cache: &CacheConfig,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let problem = problem(tables, tasks, cache)?;
    json_value(py, &core::random_allocation(&problem, seed).to_json())
}

/// The allocation problem as a 0-1 program in LP format.
#[pyfunction]
fn export_lp(
    tables: Vec<PyRef<'_, WcetTable>>,
    tasks: Vec<(String, u64, u64)>,
    cache: &CacheConfig,
) -> PyResult<String> {
    core::export_lp(&problem(tables, tasks, cache)?).map_err(err)
}

/// Exact EDF feasibility of `(wcet, deadline, period)` tasks.
#[pyfunction]
fn edf_schedulable(tasks: Vec<(u64, u64, u64)>) -> bool {
    let tasks: Vec<SporadicTask> = tasks
        .into_iter()
        .enumerate()
        .map(|(i, (c, d, t))| SporadicTask::new(format!("t{i}"), c, d, t, 0))
        .collect();
    core::schedulability::edf_schedulable(&tasks)
}

/// Runs a sweep described by a JSON config and returns its CSV.
#[pyfunction]
#[pyo3(signature = (config_json, jobs=1, master_seed=None))]
fn run_sweep(py: Python<'_>, config_json: &str, jobs: usize, master_seed: Option<u64>) -> PyResult<String> {
    let mut config = SweepConfig::from_json(config_json).map_err(err)?;
    if let Some(seed) = master_seed {
        config.master_seed = seed;
    }
    let result = py.detach(|| core::experiment::run_sweep(&config, jobs)).map_err(err)?;
    Ok(result.to_csv())
}

/// SVG chart of a sweep CSV; `metric` is `schedulable` or `colors`.
#[pyfunction]
#[pyo3(signature = (csv, metric="schedulable", colors=16))]
fn plot_svg(csv: &str, metric: &str, colors: u32) -> PyResult<String> {
    let metric: Metric = metric.parse().map_err(err)?;
    plot_csv(csv, metric, colors).map_err(err)
}

#[pymodule]
fn colorsched(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("ColorschedError", m.py().get_type::<ColorschedError>())?;
    m.add_class::<CacheConfig>()?;
    m.add_class::<TaskProgram>()?;
    m.add_class::<WcetTable>()?;
    m.add_function(wrap_pyfunction!(wcet, m)?)?;
    m.add_function(wrap_pyfunction!(infinite_cache_wcet, m)?)?;
    m.add_function(wrap_pyfunction!(wcet_table, m)?)?;
    m.add_function(wrap_pyfunction!(py_fair_coloring, m)?)?;
    m.add_function(wrap_pyfunction!(py_federated_coloring, m)?)?;
    m.add_function(wrap_pyfunction!(py_random_coloring, m)?)?;
    m.add_function(wrap_pyfunction!(py_page_scores, m)?)?;
    m.add_function(wrap_pyfunction!(allocate, m)?)?;
    m.add_function(wrap_pyfunction!(random_allocation, m)?)?;
    m.add_function(wrap_pyfunction!(export_lp, m)?)?;
    m.add_function(wrap_pyfunction!(edf_schedulable, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(plot_svg, m)?)?;
    Ok(())
}
