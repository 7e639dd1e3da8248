//! Shared vocabulary: cache geometry, sporadic tasks, page colorings and
//! per-task WCET tables.
//!
//! All times are integer processor cycles. Periods and deadlines share the
//! same unit so that demand-bound arithmetic stays exact.

use serde::{Deserialize, Serialize};

use crate::error::{bail, Code, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Geometry of a set-associative instruction cache partitioned by page
/// colors.
///
/// `cache_pages` is the number of distinct pages that fit in the cache; a
/// color is one page-sized slice of every way, so there are
/// `cache_pages / ways` colors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheConfig {
    pub ways: u32,
    pub cache_pages: u32,
    pub lines_per_page: u32,
    pub miss_penalty: u64,
}

impl Default for CacheConfig {
    /// 32 KB, 2-way, 1 KB pages: 16 colors.
    fn default() -> Self {
        CacheConfig {
            ways: 2,
            cache_pages: 32,
            lines_per_page: 16,
            miss_penalty: 10,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CacheConfigDoc {
    v: u32,
    #[serde(flatten)]
    cache: CacheConfig,
}

impl CacheConfig {
    pub fn new(ways: u32, cache_pages: u32, lines_per_page: u32, miss_penalty: u64) -> Result<Self> {
        let cache = CacheConfig {
            ways,
            cache_pages,
            lines_per_page,
            miss_penalty,
        };
        cache.validate()?;
        Ok(cache)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ways == 0 || self.cache_pages == 0 || self.lines_per_page == 0 {
            bail!(
                Code::InvalidCache,
                "ways, cache_pages and lines_per_page must be positive (got {}, {}, {})",
                self.ways,
                self.cache_pages,
                self.lines_per_page
            );
        }
        if !self.cache_pages.is_multiple_of(self.ways) {
            bail!(
                Code::InvalidCache,
                "cache_pages ({}) is not divisible by ways ({})",
                self.cache_pages,
                self.ways
            );
        }
        Ok(())
    }

    /// Number of colors `K`. Only meaningful on a validated config.
    pub fn colors(&self) -> u32 {
        self.cache_pages / self.ways
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CacheConfigDoc =
            serde_json::from_str(text).map_err(|e| crate::Error::new(Code::Malformed, format!("cache config: {e}")))?;
        if doc.v != SCHEMA_VERSION {
            bail!(
                Code::UnsupportedVersion,
                "cache config version {} (expected {SCHEMA_VERSION})",
                doc.v
            );
        }
        doc.cache.validate()?;
        Ok(doc.cache)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&CacheConfigDoc {
            v: SCHEMA_VERSION,
            cache: *self,
        })
        .expect("cache config serializes")
    }
}

/// Number of cache colors available: `cache_pages / ways`.
pub fn num_colors(cache: &CacheConfig) -> Result<u32> {
    cache.validate()?;
    Ok(cache.colors())
}

/// Color of a physical page: its index modulo the number of colors.
pub fn page_color(page_index: u64, cache: &CacheConfig) -> u32 {
    (page_index % u64::from(cache.colors())) as u32
}

/// Largest useful color budget for a task with `pages` pages when `n_tasks`
/// tasks share the cache: `min(P, cache_pages - (N - 1))`.
pub fn s_max(pages: u32, cache: &CacheConfig, n_tasks: u32) -> Result<u32> {
    if pages == 0 || n_tasks == 0 {
        bail!(Code::InvalidTask, "page count and task count must be positive");
    }
    let spare = i64::from(cache.cache_pages) - (i64::from(n_tasks) - 1);
    if spare < 1 {
        bail!(
            Code::TooManyTasks,
            "{n_tasks} tasks cannot share a cache of {} pages",
            cache.cache_pages
        );
    }
    Ok(pages.min(spare as u32).max(1))
}

/// A sporadic task `(C, D, T, P)`.
///
/// Analyses accept any positive parameters; use [`SporadicTask::checked`]
/// when the constrained-deadline shape `C <= D <= T` must hold.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SporadicTask {
    pub id: String,
    pub wcet: u64,
    pub deadline: u64,
    pub period: u64,
    pub pages: u32,
}

impl SporadicTask {
    pub fn new(id: impl Into<String>, wcet: u64, deadline: u64, period: u64, pages: u32) -> Self {
        SporadicTask {
            id: id.into(),
            wcet,
            deadline,
            period,
            pages,
        }
    }

    pub fn checked(id: impl Into<String>, wcet: u64, deadline: u64, period: u64, pages: u32) -> Result<Self> {
        let task = Self::new(id, wcet, deadline, period, pages);
        if task.wcet == 0 || task.pages == 0 {
            bail!(Code::InvalidTask, "task {}: wcet and pages must be positive", task.id);
        }
        if !(task.wcet <= task.deadline && task.deadline <= task.period) {
            bail!(
                Code::InvalidTask,
                "task {}: expected wcet <= deadline <= period, got {} / {} / {}",
                task.id,
                task.wcet,
                task.deadline,
                task.period
            );
        }
        Ok(task)
    }

    pub fn is_constrained(&self) -> bool {
        self.deadline <= self.period
    }
}

pub type TaskSet = Vec<SporadicTask>;

/// Page to color map for a single task.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Coloring(pub Vec<u32>);

impl Coloring {
    pub fn uniform(pages: usize, color: u32) -> Self {
        Coloring(vec![color; pages])
    }

    /// Every page gets its own color.
    pub fn distinct(pages: usize) -> Self {
        Coloring((0..pages as u32).collect())
    }

    pub fn pages(&self) -> usize {
        self.0.len()
    }

    pub fn color(&self, page: u32) -> Option<u32> {
        self.0.get(page as usize).copied()
    }

    pub fn colors_used(&self) -> usize {
        let mut seen = self.0.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    /// Checks that the map covers `pages` pages with colors below `budget`.
    pub fn check(&self, pages: usize, budget: u32) -> Result<()> {
        if self.0.len() != pages {
            bail!(
                Code::IncompleteColoring,
                "coloring covers {} pages, program has {pages}",
                self.0.len()
            );
        }
        if let Some(c) = self.0.iter().find(|&&c| c >= budget) {
            bail!(Code::BudgetOutOfRange, "color {c} outside budget {budget}");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WcetEntry {
    pub wcet: u64,
    pub coloring: Coloring,
}

/// `C_i(j)` for `j = 1..=s_max`, monotone non-increasing in `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WcetTable {
    pub task_id: String,
    entries: Vec<WcetEntry>,
}

impl WcetTable {
    pub fn new(task_id: impl Into<String>, entries: Vec<WcetEntry>) -> Result<Self> {
        let task_id = task_id.into();
        if entries.is_empty() {
            bail!(Code::EmptyTable, "table for {task_id} has no entries");
        }
        if entries.iter().any(|e| e.wcet == 0) {
            bail!(Code::InvalidTask, "table for {task_id} has a zero wcet");
        }
        if let Some(w) = entries.windows(2).position(|w| w[1].wcet > w[0].wcet) {
            bail!(
                Code::InvalidTask,
                "table for {task_id} increases between j={} and j={}",
                w + 1,
                w + 2
            );
        }
        Ok(WcetTable { task_id, entries })
    }

    /// Table from raw WCET values with no stored colorings.
    pub fn from_wcets(task_id: impl Into<String>, wcets: &[u64]) -> Result<Self> {
        Self::new(
            task_id,
            wcets
                .iter()
                .map(|&wcet| WcetEntry {
                    wcet,
                    coloring: Coloring::default(),
                })
                .collect(),
        )
    }

    pub fn s_max(&self) -> u32 {
        self.entries.len() as u32
    }

    pub fn entries(&self) -> &[WcetEntry] {
        &self.entries
    }

    /// `C(j)` for `1 <= j <= s_max`.
    pub fn wcet(&self, colors: u32) -> u64 {
        self.entries[colors as usize - 1].wcet
    }

    /// Worst WCET, i.e. with a single color.
    pub fn worst(&self) -> u64 {
        self.entries[0].wcet
    }

    pub fn best(&self) -> u64 {
        self.entries[self.entries.len() - 1].wcet
    }

    pub fn wcets(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.wcet).collect()
    }
}
