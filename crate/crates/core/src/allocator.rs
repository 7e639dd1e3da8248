//! Choosing a color count per task: minimum total colors subject to EDF
//! feasibility and the cache's color capacity.

use std::collections::HashSet;
use std::fmt::Write as _;

use num_integer::Integer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{bail, Code, Result};
use crate::model::{CacheConfig, SporadicTask, WcetTable};
use crate::schedulability::{
    dbf_feasible, definitive_idle_time, dset, edf_violation, hyperperiod, utilization_fits, CheckPointSet, IdleTime,
    Violation,
};

/// Timing parameters of a task whose WCET is still open.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSkeleton {
    pub id: String,
    pub deadline: u64,
    pub period: u64,
}

impl TaskSkeleton {
    pub fn new(id: impl Into<String>, deadline: u64, period: u64) -> Self {
        TaskSkeleton {
            id: id.into(),
            deadline,
            period,
        }
    }

    pub fn with_wcet(&self, wcet: u64) -> SporadicTask {
        SporadicTask::new(self.id.clone(), wcet, self.deadline, self.period, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocationProblem {
    pub tables: Vec<WcetTable>,
    pub tasks: Vec<TaskSkeleton>,
    pub cache: CacheConfig,
    /// Fixed check points. Without them every candidate selection is
    /// verified over its own sufficient horizon.
    pub check_points: Option<CheckPointSet>,
}

impl AllocationProblem {
    pub fn new(tables: Vec<WcetTable>, tasks: Vec<TaskSkeleton>, cache: CacheConfig) -> Result<Self> {
        cache.validate()?;
        if tables.len() != tasks.len() {
            bail!(
                Code::InconsistentIds,
                "{} tables for {} tasks",
                tables.len(),
                tasks.len()
            );
        }
        let mut seen = HashSet::new();
        for (table, task) in tables.iter().zip(&tasks) {
            if table.task_id != task.id {
                bail!(
                    Code::InconsistentIds,
                    "table '{}' aligned with task '{}'",
                    table.task_id,
                    task.id
                );
            }
            if !seen.insert(task.id.as_str()) {
                bail!(Code::InconsistentIds, "task '{}' appears twice", task.id);
            }
            if table.entries().is_empty() {
                bail!(Code::EmptyTable, "table for '{}' is empty", task.id);
            }
            if task.period == 0 || task.deadline == 0 || task.deadline > task.period {
                bail!(
                    Code::InvalidTask,
                    "task '{}' needs 0 < D <= T (D={}, T={})",
                    task.id,
                    task.deadline,
                    task.period
                );
            }
        }
        Ok(AllocationProblem {
            tables,
            tasks,
            cache,
            check_points: None,
        })
    }

    pub fn with_check_points(mut self, points: CheckPointSet) -> Self {
        self.check_points = Some(points);
        self
    }

    pub fn capacity(&self) -> u32 {
        self.cache.colors()
    }

    /// Task set for a selection `j` (1-based per task).
    pub fn taskset(&self, selection: &[u32]) -> Vec<SporadicTask> {
        self.tasks
            .iter()
            .zip(&self.tables)
            .zip(selection)
            .map(|((task, table), &j)| task.with_wcet(table.wcet(j)))
            .collect()
    }

    /// Check points with every task at its worst WCET `C(1)`: up to the
    /// definitive idle time when it exists, capped by the hyperperiod.
    pub fn default_check_points(&self) -> Result<CheckPointSet> {
        let worst = self.taskset(&vec![1; self.tasks.len()]);
        let h = hyperperiod(&worst);
        let horizon = match (definitive_idle_time(&worst), h) {
            (IdleTime::At(l), Some(h)) => l.min(h),
            (IdleTime::At(l), None) => l,
            (IdleTime::Diverges, Some(h)) => h,
            (IdleTime::Diverges, None) => bail!(
                Code::CheckPointCap,
                "hyperperiod overflows and the worst-case busy period diverges; use commensurate periods"
            ),
        };
        dset(&worst, horizon)
    }

    /// Schedulability of a selection, ignoring the color capacity.
    pub fn violation(&self, selection: &[u32]) -> Option<Violation> {
        let tasks = self.taskset(selection);
        match &self.check_points {
            Some(points) => {
                if !utilization_fits(&tasks) {
                    let t = points.horizon;
                    return Some(
                        dbf_feasible(&tasks, points)
                            .violation
                            .unwrap_or(Violation { t, demand: 0 }),
                    );
                }
                dbf_feasible(&tasks, points).violation
            }
            None => edf_violation(&tasks),
        }
    }

    pub fn schedulable(&self, selection: &[u32]) -> bool {
        self.violation(selection).is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    pub task_ids: Vec<String>,
    /// Colors granted per task, aligned with the problem's tasks.
    pub colors: Vec<u32>,
    pub wcets: Vec<u64>,
    pub total_colors: u32,
    pub feasible: bool,
    pub witness: Option<Violation>,
}

impl Allocation {
    fn from_selection(problem: &AllocationProblem, selection: Vec<u32>) -> Self {
        let witness = problem.violation(&selection);
        Allocation {
            task_ids: problem.tasks.iter().map(|t| t.id.clone()).collect(),
            wcets: selection
                .iter()
                .zip(&problem.tables)
                .map(|(&j, table)| table.wcet(j))
                .collect(),
            total_colors: selection.iter().sum(),
            colors: selection,
            feasible: witness.is_none(),
            witness,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Allocated(Allocation),
    Infeasible { reason: String, witness: Option<Violation> },
}

impl Outcome {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Outcome::Allocated(a) if a.feasible)
    }

    pub fn total_colors(&self) -> Option<u32> {
        match self {
            Outcome::Allocated(a) => Some(a.total_colors),
            Outcome::Infeasible { .. } => None,
        }
    }

    pub fn allocation(&self) -> Option<&Allocation> {
        match self {
            Outcome::Allocated(a) => Some(a),
            Outcome::Infeasible { .. } => None,
        }
    }

    /// `{"feasible", "colors": {task: j}, "total_colors"}`; infeasible
    /// outcomes add a `reason` and leave `total_colors` null.
    pub fn to_json(&self) -> Value {
        match self {
            Outcome::Allocated(a) => {
                let colors: Map<String, Value> = a
                    .task_ids
                    .iter()
                    .zip(&a.colors)
                    .map(|(id, &j)| (id.clone(), json!(j)))
                    .collect();
                let mut v = json!({
                    "feasible": a.feasible,
                    "colors": colors,
                    "total_colors": a.total_colors,
                });
                if let Some(w) = a.witness {
                    v["witness"] = json!({"t": w.t, "demand": w.demand.to_string()});
                }
                v
            }
            Outcome::Infeasible { reason, witness } => {
                let mut v = json!({
                    "feasible": false,
                    "colors": {},
                    "total_colors": null,
                    "reason": reason,
                });
                if let Some(w) = witness {
                    v["witness"] = json!({"t": w.t, "demand": w.demand.to_string()});
                }
                v
            }
        }
    }
}

struct Search<'a> {
    problem: &'a AllocationProblem,
    order: Vec<usize>,
    selection: Vec<u32>,
    /// Per task (in search order), sum of `s_max` over later tasks.
    suffix_max: Vec<u32>,
}

impl Search<'_> {
    /// Finds the lexicographically smallest selection with exactly `total`
    /// colors. Undecided tasks are relaxed to the largest count they could
    /// still receive; demand only shrinks with more colors, so a failing
    /// relaxation rules out the whole subtree.
    fn exact_total(&mut self, depth: usize, remaining: u32) -> bool {
        let n = self.order.len();
        if depth == n {
            return remaining == 0 && self.problem.schedulable(&self.selection);
        }
        let task = self.order[depth];
        let later = (n - depth - 1) as u32;
        let s_max = self.problem.tables[task].s_max();
        let lo = remaining.saturating_sub(self.suffix_max[depth]).max(1);
        let hi = s_max.min(remaining.saturating_sub(later));
        for j in lo..=hi {
            self.selection[task] = j;
            let left = remaining - j;
            for (k, &other) in self.order.iter().enumerate().skip(depth + 1) {
                let others_min = (n - k - 1) as u32;
                let cap = left.saturating_sub(others_min).max(1);
                self.selection[other] = self.problem.tables[other].s_max().min(cap);
            }
            if self.problem.schedulable(&self.selection) && self.exact_total(depth + 1, left) {
                return true;
            }
        }
        false
    }
}

/// Minimum-color schedulable selection, ties broken by the
/// lexicographically smallest color vector in task order.
pub fn solve(problem: &AllocationProblem) -> Result<Outcome> {
    let n = problem.tasks.len();
    let k = problem.capacity();
    if n == 0 {
        return Ok(Outcome::Allocated(Allocation::from_selection(problem, Vec::new())));
    }
    if n as u32 > k {
        return Ok(Outcome::Infeasible {
            reason: format!("{n} tasks need at least {n} colors, cache has {k}"),
            witness: None,
        });
    }
    let best: Vec<u32> = problem.tables.iter().map(WcetTable::s_max).collect();
    if let Some(w) = problem.violation(&best) {
        return Ok(Outcome::Infeasible {
            reason: "unschedulable even with every task at its best WCET".to_string(),
            witness: Some(w),
        });
    }
    let order: Vec<usize> = (0..n).collect();
    let mut suffix_max = vec![0u32; n];
    for d in (0..n.saturating_sub(1)).rev() {
        suffix_max[d] = suffix_max[d + 1] + problem.tables[order[d + 1]].s_max();
    }
    let max_total = best.iter().sum::<u32>().min(k);
    let mut search = Search {
        problem,
        order,
        selection: vec![1; n],
        suffix_max,
    };
    for total in n as u32..=max_total {
        if search.exact_total(0, total) {
            return Ok(Outcome::Allocated(Allocation::from_selection(
                problem,
                search.selection.clone(),
            )));
        }
    }
    Ok(Outcome::Infeasible {
        reason: format!("every schedulable selection needs more than {k} colors"),
        witness: None,
    })
}

/// One color each, then the spare colors one at a time to a uniformly
/// chosen task that can still use more.
pub fn random_allocation(problem: &AllocationProblem, seed: u64) -> Outcome {
    let n = problem.tasks.len();
    let k = problem.capacity();
    if n as u32 > k {
        return Outcome::Infeasible {
            reason: format!("{n} tasks need at least {n} colors, cache has {k}"),
            witness: None,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut selection = vec![1u32; n];
    for _ in n as u32..k {
        let open: Vec<usize> = (0..n).filter(|&i| selection[i] < problem.tables[i].s_max()).collect();
        if open.is_empty() {
            break;
        }
        selection[open[rng.gen_range(0..open.len())]] += 1;
    }
    Outcome::Allocated(Allocation::from_selection(problem, selection))
}

fn lcm_of_periods(tasks: &[TaskSkeleton]) -> Option<u64> {
    tasks.iter().try_fold(1u64, |acc, t| {
        let g = acc.gcd(&t.period);
        (acc / g).checked_mul(t.period)
    })
}

const EXACT_FLOAT: u128 = 1 << 53;

fn coefficient(value: u128, what: &str) -> Result<u128> {
    if value > EXACT_FLOAT {
        bail!(
            Code::CoefficientOverflow,
            "{what} coefficient {value} exceeds 2^53; scale periods and WCETs down (e.g. use coarser time units)"
        );
    }
    Ok(value)
}

/// The selection problem as an integer program in LP file format.
pub fn export_lp(problem: &AllocationProblem) -> Result<String> {
    let points = match &problem.check_points {
        Some(p) => p.clone(),
        None => problem.default_check_points()?,
    };
    let h = lcm_of_periods(&problem.tasks).map(u128::from);
    let Some(h) = h.filter(|&h| h <= EXACT_FLOAT) else {
        bail!(
            Code::CoefficientOverflow,
            "period lcm exceeds 2^53; the scaled utilization row cannot be written exactly"
        );
    };
    let var = |i: usize, j: u32| format!("x_{i}_{j}");
    let mut out = String::new();
    out.push_str("\\Problem name: color_allocation\n\nMinimize\n obj:");
    for (i, table) in problem.tables.iter().enumerate() {
        for j in 1..=table.s_max() {
            write!(out, " + {j} {}", var(i, j)).unwrap();
        }
    }
    out.push_str("\nSubject To\n");
    for (i, table) in problem.tables.iter().enumerate() {
        write!(out, " select_{i}:").unwrap();
        for j in 1..=table.s_max() {
            write!(out, " + {}", var(i, j)).unwrap();
        }
        out.push_str(" = 1\n");
    }
    out.push_str(" utilization:");
    for (i, (table, task)) in problem.tables.iter().zip(&problem.tasks).enumerate() {
        for j in 1..=table.s_max() {
            let c = coefficient(u128::from(table.wcet(j)) * (h / u128::from(task.period)), "utilization")?;
            write!(out, " + {c} {}", var(i, j)).unwrap();
        }
    }
    writeln!(out, " <= {h}").unwrap();
    out.push_str(" capacity:");
    for (i, table) in problem.tables.iter().enumerate() {
        for j in 1..=table.s_max() {
            write!(out, " + {j} {}", var(i, j)).unwrap();
        }
    }
    writeln!(out, " <= {}", problem.capacity()).unwrap();
    for &t in &points.points {
        write!(out, " demand_{t}:").unwrap();
        let mut any = false;
        for (i, (table, task)) in problem.tables.iter().zip(&problem.tasks).enumerate() {
            if task.deadline > t {
                continue;
            }
            let jobs = u128::from((t - task.deadline) / task.period + 1);
            for j in 1..=table.s_max() {
                let c = coefficient(jobs * u128::from(table.wcet(j)), "demand")?;
                write!(out, " + {c} {}", var(i, j)).unwrap();
                any = true;
            }
        }
        if !any {
            out.push_str(" 0 x_0_1");
        }
        writeln!(out, " <= {t}").unwrap();
    }
    out.push_str("Binary\n");
    for (i, table) in problem.tables.iter().enumerate() {
        for j in 1..=table.s_max() {
            writeln!(out, " {}", var(i, j)).unwrap();
        }
    }
    out.push_str("End\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::brute_force_allocation;
    use proptest::prelude::*;

    fn cache_with_colors(k: u32) -> CacheConfig {
        CacheConfig::new(1, k, 4, 10).unwrap()
    }

    fn problem(tables: &[&[u64]], dt: &[(u64, u64)], k: u32) -> AllocationProblem {
        let tables = tables
            .iter()
            .enumerate()
            .map(|(i, w)| WcetTable::from_wcets(format!("t{i}"), w).unwrap())
            .collect();
        let tasks = dt
            .iter()
            .enumerate()
            .map(|(i, &(d, t))| TaskSkeleton::new(format!("t{i}"), d, t))
            .collect();
        AllocationProblem::new(tables, tasks, cache_with_colors(k)).unwrap()
    }

    #[test]
    fn two_task_example() {
        let p = problem(&[&[10, 6], &[8, 5]], &[(20, 20), (20, 20)], 3);
        let out = solve(&p).unwrap();
        let a = out.allocation().unwrap();
        assert_eq!(a.colors, vec![1, 1]);
        assert_eq!(a.total_colors, 2);
        assert_eq!(out.to_json()["colors"]["t0"], 1);
    }

    #[test]
    fn hopeless_task_is_infeasible() {
        let p = problem(&[&[30, 30, 30]], &[(20, 20)], 4);
        assert!(!solve(&p).unwrap().is_feasible());
    }

    #[test]
    fn optimum_above_capacity_is_infeasible() {
        // Each task needs its second entry: 12 + 12 > 20 but 9 + 9 <= 20.
        let p = problem(&[&[12, 9], &[12, 9]], &[(20, 20), (20, 20)], 3);
        let out = solve(&p).unwrap();
        assert!(matches!(out, Outcome::Infeasible { .. }));
        let wide = problem(&[&[12, 9], &[12, 9]], &[(20, 20), (20, 20)], 4);
        assert_eq!(solve(&wide).unwrap().total_colors(), Some(4));
    }

    #[test]
    fn ties_prefer_small_leading_counts() {
        let p = problem(&[&[12, 9], &[12, 9]], &[(20, 20), (40, 40)], 4);
        // (1,1): 12/20 + 12/40 = 0.9 fits.
        assert_eq!(solve(&p).unwrap().allocation().unwrap().colors, vec![1, 1]);
        let q = problem(&[&[14, 9], &[14, 9]], &[(20, 20), (30, 30)], 4);
        // (2,1): 9/20 + 14/30 < 1, (1,2): 14/20 + 9/30 = 1, both fit; lexicographic picks (1,2).
        assert_eq!(solve(&q).unwrap().allocation().unwrap().colors, vec![1, 2]);
    }

    #[test]
    fn random_allocation_conserves_colors() {
        let tables: Vec<&[u64]> = vec![&[9, 8, 7, 6]; 8];
        let dt = vec![(1000, 1000); 8];
        let p = problem(&tables, &dt, 16);
        for seed in 0..20 {
            let out = random_allocation(&p, seed);
            let a = out.allocation().unwrap();
            assert_eq!(a.total_colors, 16);
            assert_eq!(out, random_allocation(&p, seed));
        }
        let tight = problem(&[&[1, 1], &[1, 1]], &[(5, 5), (5, 5)], 2);
        assert_eq!(random_allocation(&tight, 3).allocation().unwrap().colors, vec![1, 1]);
        let over = problem(&[&[1], &[1], &[1]], &[(5, 5); 3], 2);
        assert!(!random_allocation(&over, 0).is_feasible());
    }

    #[test]
    fn lp_structure() {
        let p = problem(&[&[10, 6], &[8, 5]], &[(20, 20), (20, 20)], 3);
        let lp = export_lp(&p).unwrap();
        assert!(lp.starts_with("\\Problem"));
        let binaries: Vec<&str> = lp
            .split("Binary\n")
            .nth(1)
            .unwrap()
            .lines()
            .take_while(|l| *l != "End")
            .collect();
        assert_eq!(binaries.len(), 4);
        assert_eq!(lp.matches("select_").count(), 2);
        assert_eq!(lp.matches("capacity:").count(), 1);
        let points = p.default_check_points().unwrap();
        assert_eq!(lp.matches(" demand_").count(), points.len());
        assert!(lp.contains("utilization: + 10 x_0_1 + 6 x_0_2 + 8 x_1_1 + 5 x_1_2 <= 20"));

        let single = problem(&[&[5]], &[(10, 10)], 2);
        let lp = export_lp(&single).unwrap();
        assert!(lp.contains("obj: + 1 x_0_1\n"));
    }

    #[test]
    fn lp_overflow_has_remedy() {
        let p = problem(
            &[&[1], &[1], &[1]],
            &[
                (1 << 20, (1 << 20) + 7),
                (1 << 20, (1 << 20) + 9),
                (1 << 20, (1 << 20) + 11),
            ],
            4,
        );
        let err = export_lp(&p).unwrap_err();
        assert_eq!(err.code, Code::CoefficientOverflow);
        assert!(err.message.contains("2^53"));
    }

    #[test]
    fn mismatched_ids_rejected() {
        let tables = vec![WcetTable::from_wcets("a", &[1]).unwrap()];
        let tasks = vec![TaskSkeleton::new("b", 5, 5)];
        let err = AllocationProblem::new(tables, tasks, cache_with_colors(2)).unwrap_err();
        assert_eq!(err.code, Code::InconsistentIds);
    }

    fn instance() -> impl Strategy<Value = (Vec<Vec<u64>>, Vec<(u64, u64)>, u32)> {
        let task =
            (proptest::collection::vec(1u64..=6, 1..=4), 2u64..=10, 0u64..=3).prop_map(|(mut drops, t, slack)| {
                let mut w = 1 + drops.iter().sum::<u64>();
                let table = drops
                    .iter_mut()
                    .map(|d| {
                        let cur = w;
                        w -= *d;
                        cur
                    })
                    .collect::<Vec<_>>();
                (table, (t.saturating_sub(slack).max(1), t))
            });
        (proptest::collection::vec(task, 1..=4), 1u32..=8).prop_map(|(tasks, k)| {
            let (tables, dt) = tasks.into_iter().unzip();
            (tables, dt, k)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn solve_matches_brute_force((tables, dt, k) in instance()) {
            let refs: Vec<&[u64]> = tables.iter().map(Vec::as_slice).collect();
            let p = problem(&refs, &dt, k);
            let fast = solve(&p).unwrap();
            let slow = brute_force_allocation(&p.tables, &p.tasks, k, None).unwrap();
            prop_assert_eq!(fast.allocation().map(|a| a.colors.clone()), slow);
            if let Some(a) = fast.allocation() {
                prop_assert!(a.feasible);
                prop_assert!(a.total_colors <= k);
                prop_assert!(utilization_fits(&p.taskset(&a.colors)));
            }
        }

        #[test]
        fn more_colors_never_hurt((tables, dt, k) in instance(), bump in 0usize..4) {
            let refs: Vec<&[u64]> = tables.iter().map(Vec::as_slice).collect();
            let p = problem(&refs, &dt, k);
            if let Some(a) = solve(&p).unwrap().allocation() {
                let mut more = a.colors.clone();
                let i = bump % more.len();
                if more[i] < p.tables[i].s_max() {
                    more[i] += 1;
                    prop_assert!(p.schedulable(&more));
                }
            }
        }
    }
}
