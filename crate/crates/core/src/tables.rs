//! Text formats for WCET tables, coloring dumps and task set skeletons.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::allocator::TaskSkeleton;
use crate::error::{bail, Code, Error, Result};
use crate::model::WcetTable;

pub const TABLE_HEADER: &str = "task,heuristic,colors,wcet_cycles";
pub const COLORING_HEADER: &str = "task,heuristic,colors,page,color";
const SCHEMA_VERSION: u32 = 1;

/// A table together with the heuristic that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamedTable {
    pub heuristic: String,
    pub table: WcetTable,
}

/// One row per `(heuristic, j)`.
pub fn tables_to_csv(tables: &[NamedTable]) -> String {
    let mut out = format!("{TABLE_HEADER}\n");
    for t in tables {
        for (j, e) in t.table.entries().iter().enumerate() {
            writeln!(out, "{},{},{},{}", t.table.task_id, t.heuristic, j + 1, e.wcet).unwrap();
        }
    }
    out
}

/// One row per `(heuristic, j, page)`.
pub fn colorings_to_csv(tables: &[NamedTable]) -> String {
    let mut out = format!("{COLORING_HEADER}\n");
    for t in tables {
        for (j, e) in t.table.entries().iter().enumerate() {
            for (page, color) in e.coloring.0.iter().enumerate() {
                writeln!(out, "{},{},{},{page},{color}", t.table.task_id, t.heuristic, j + 1).unwrap();
            }
        }
    }
    out
}

/// Parses table rows, grouped by `(task, heuristic)` in order of first
/// appearance. Each group must list `colors = 1..=s_max` exactly once.
pub fn tables_from_csv(text: &str) -> Result<Vec<NamedTable>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == TABLE_HEADER => {}
        Some(h) => bail!(
            Code::Malformed,
            "expected header {TABLE_HEADER:?}, found {:?}",
            h.trim()
        ),
        None => bail!(Code::Malformed, "empty table CSV"),
    }
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), BTreeMap<u32, u64>> = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 4 || f[0].is_empty() || f[1].is_empty() {
            bail!(
                Code::Malformed,
                "line {lineno}: expected task,heuristic,colors,wcet_cycles"
            );
        }
        let colors: u32 = f[2]
            .parse()
            .map_err(|_| Error::new(Code::Malformed, format!("line {lineno}: bad colors {:?}", f[2])))?;
        let wcet: u64 = f[3]
            .parse()
            .map_err(|_| Error::new(Code::Malformed, format!("line {lineno}: bad wcet_cycles {:?}", f[3])))?;
        let key = (f[0].to_string(), f[1].to_string());
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        if groups.entry(key).or_default().insert(colors, wcet).is_some() {
            bail!(
                Code::Malformed,
                "line {lineno}: duplicate row for {} {} j={colors}",
                f[0],
                f[1]
            );
        }
    }
    let mut out = Vec::with_capacity(order.len());
    for key in order {
        let rows = &groups[&key];
        let wcets: Vec<u64> = rows.values().copied().collect();
        if rows.keys().copied().ne(1..=rows.len() as u32) {
            bail!(
                Code::Malformed,
                "table {} {} must list colors 1..={}",
                key.0,
                key.1,
                rows.len()
            );
        }
        out.push(NamedTable {
            table: WcetTable::from_wcets(key.0, &wcets)?,
            heuristic: key.1,
        });
    }
    if out.is_empty() {
        bail!(Code::EmptyTable, "table CSV has no rows");
    }
    Ok(out)
}

/// Picks one table per skeleton, in skeleton order. With several
/// heuristics available for a task, `heuristic` must choose.
pub fn select_tables(
    available: &[NamedTable],
    tasks: &[TaskSkeleton],
    heuristic: Option<&str>,
) -> Result<Vec<WcetTable>> {
    tasks
        .iter()
        .map(|task| {
            let found: Vec<&NamedTable> = available
                .iter()
                .filter(|t| t.table.task_id == task.id && heuristic.is_none_or(|h| t.heuristic == h))
                .collect();
            match found.as_slice() {
                [one] => Ok(one.table.clone()),
                [] => bail!(
                    Code::InconsistentIds,
                    "no table for task {}{}",
                    task.id,
                    heuristic.map(|h| format!(" with heuristic {h}")).unwrap_or_default()
                ),
                many => bail!(
                    Code::InconsistentIds,
                    "task {} has tables for {}; pick one with --heuristic",
                    task.id,
                    many.iter().map(|t| t.heuristic.as_str()).collect::<Vec<_>>().join(", ")
                ),
            }
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TasksetDoc {
    v: u32,
    tasks: Vec<TaskSkeleton>,
}

/// `{"v":1,"tasks":[{"id","deadline","period"}]}`
pub fn taskset_from_json(text: &str) -> Result<Vec<TaskSkeleton>> {
    let doc: TasksetDoc =
        serde_json::from_str(text).map_err(|e| Error::new(Code::Malformed, format!("task set: {e}")))?;
    if doc.v != SCHEMA_VERSION {
        bail!(
            Code::UnsupportedVersion,
            "task set version {} (expected {SCHEMA_VERSION})",
            doc.v
        );
    }
    Ok(doc.tasks)
}

pub fn taskset_to_json(tasks: &[TaskSkeleton]) -> String {
    serde_json::to_string_pretty(&TasksetDoc {
        v: SCHEMA_VERSION,
        tasks: tasks.to_vec(),
    })
    .expect("task set serializes")
}
