//! Slow reference implementations: bounded path enumeration with a
//! concrete LRU cache, exhaustive allocation, and a discrete EDF simulator.

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;

use crate::allocator::TaskSkeleton;
use crate::cache::{classify, AccessClass, CacheSetRef, MemLine};
use crate::error::{bail, Code, Result};
use crate::model::{CacheConfig, Coloring, SporadicTask, WcetTable};
use crate::program::{BlockIdx, LoopIdx, TaskProgram};
use crate::schedulability::CheckPointSet;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathTrace {
    pub blocks: Vec<String>,
    pub cycles: u64,
    pub misses: BTreeMap<MemLine, u64>,
}

/// A classified access that the concrete run contradicted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassViolation {
    pub block: String,
    pub line: u32,
    pub class: AccessClass,
    pub path: Vec<String>,
}

/// Concrete fully associative LRU per cache set, most recent first.
#[derive(Clone, Default)]
struct LruCache {
    sets: HashMap<CacheSetRef, Vec<MemLine>>,
}

impl LruCache {
    /// True on a hit.
    fn access(&mut self, set: CacheSetRef, line: MemLine, ways: usize) -> bool {
        let slot = self.sets.entry(set).or_default();
        match slot.iter().position(|&m| m == line) {
            Some(pos) => {
                slot.remove(pos);
                slot.insert(0, line);
                true
            }
            None => {
                slot.insert(0, line);
                slot.truncate(ways);
                false
            }
        }
    }
}

#[derive(Clone)]
struct Walk {
    cache: LruCache,
    /// Iteration count of the current entry, per loop.
    iteration: Vec<u32>,
    /// Entry counter per loop, bumped on each entry from outside.
    entries: Vec<u64>,
    path: Vec<BlockIdx>,
    cycles: u64,
    misses: BTreeMap<MemLine, u64>,
    /// `(loop, line) -> entry number` of the last first-miss charged.
    fm_seen: HashMap<(LoopIdx, MemLine), u64>,
}

struct Explorer<'a> {
    program: &'a TaskProgram,
    coloring: &'a Coloring,
    cache: &'a CacheConfig,
    classes: Option<Vec<Vec<AccessClass>>>,
    limit: usize,
    paths: usize,
    steps: usize,
    /// `can_leave[l][b]`: block `b` of loop `l` reaches an exit of `l`
    /// without taking one of its back edges.
    can_leave: Vec<Vec<bool>>,
}

impl Explorer<'_> {
    fn execute(&self, walk: &mut Walk, b: BlockIdx, violations: &mut Vec<ClassViolation>) {
        let blk = self.program.block(b);
        walk.path.push(b);
        walk.cycles += u64::from(blk.instr_count);
        for (k, line) in blk.line_range().enumerate() {
            let set = CacheSetRef {
                color: self.coloring.0[blk.page as usize],
                line,
            };
            let mem = MemLine { page: blk.page, line };
            let hit = walk.cache.access(set, mem, self.cache.ways as usize);
            if hit {
                continue;
            }
            walk.cycles += self.cache.miss_penalty;
            *walk.misses.entry(mem).or_default() += 1;
            let Some(classes) = &self.classes else { continue };
            let class = classes[b][k];
            let bad = match class {
                AccessClass::AlwaysHit => true,
                AccessClass::FirstMiss(l) => {
                    let entry = walk.entries[l];
                    walk.fm_seen.insert((l, mem), entry) == Some(entry)
                }
                AccessClass::NotClassified => false,
            };
            if bad {
                violations.push(ClassViolation {
                    block: blk.id.clone(),
                    line,
                    class,
                    path: walk.path.iter().map(|&p| self.program.block(p).id.clone()).collect(),
                });
            }
        }
    }

    /// Moves along `from -> to`, updating loop counters. `None` when the
    /// edge would exceed a loop bound.
    fn step(&self, walk: &mut Walk, from: BlockIdx, to: BlockIdx) -> Option<()> {
        if let Some(l) = self.program.is_back_edge(from, to) {
            if walk.iteration[l] >= self.program.loops()[l].bound {
                return None;
            }
            walk.iteration[l] += 1;
            return Some(());
        }
        for (l, lp) in self.program.loops().iter().enumerate() {
            if lp.header == to && !lp.contains(from) {
                walk.iteration[l] = 1;
                walk.entries[l] += 1;
            }
        }
        // In its last iteration a loop must still be able to leave.
        for (l, lp) in self.program.loops().iter().enumerate() {
            if lp.contains(to) && walk.iteration[l] >= lp.bound && !self.can_leave[l][to] {
                return None;
            }
        }
        Some(())
    }

    fn explore(
        &mut self,
        walk: Walk,
        visit: &mut dyn FnMut(&Walk),
        violations: &mut Vec<ClassViolation>,
    ) -> Result<()> {
        let b = *walk.path.last().expect("walk starts at entry");
        self.steps += 1;
        if self.steps > self.limit.saturating_mul(64) {
            bail!(Code::OracleScope, "path search exceeded its step budget");
        }
        if b == self.program.exit() {
            self.paths += 1;
            if self.paths > self.limit {
                bail!(Code::OracleScope, "more than {} bounded paths", self.limit);
            }
            visit(&walk);
            return Ok(());
        }
        for &s in self.program.succs(b) {
            let mut next = walk.clone();
            if self.step(&mut next, b, s).is_none() {
                continue;
            }
            self.execute(&mut next, s, violations);
            self.explore(next, visit, violations)?;
        }
        Ok(())
    }

    fn run(&mut self, visit: &mut dyn FnMut(&Walk)) -> Result<Vec<ClassViolation>> {
        self.cache.validate()?;
        self.program.check_geometry(self.cache)?;
        if self.coloring.pages() != self.program.page_count as usize {
            bail!(
                Code::IncompleteColoring,
                "coloring covers {} pages, program has {}",
                self.coloring.pages(),
                self.program.page_count
            );
        }
        let n_loops = self.program.loops().len();
        let mut walk = Walk {
            cache: LruCache::default(),
            iteration: vec![0; n_loops],
            entries: vec![0; n_loops],
            path: Vec::new(),
            cycles: 0,
            misses: BTreeMap::new(),
            fm_seen: HashMap::new(),
        };
        let mut violations = Vec::new();
        self.execute(&mut walk, self.program.entry(), &mut violations);
        self.explore(walk, visit, &mut violations)?;
        Ok(violations)
    }
}

fn explorer<'a>(
    program: &'a TaskProgram,
    coloring: &'a Coloring,
    cache: &'a CacheConfig,
    limit: usize,
) -> Explorer<'a> {
    let can_leave = program
        .loops()
        .iter()
        .enumerate()
        .map(|(l, lp)| {
            let mut ok = vec![false; program.blocks().len()];
            let mut stack: Vec<BlockIdx> = program
                .edges()
                .iter()
                .filter(|&&(a, b)| lp.contains(a) && !lp.contains(b))
                .map(|&(a, _)| a)
                .collect();
            while let Some(b) = stack.pop() {
                if std::mem::replace(&mut ok[b], true) {
                    continue;
                }
                for &p in program.preds(b) {
                    if lp.contains(p) && program.is_back_edge(p, b) != Some(l) && !ok[p] {
                        stack.push(p);
                    }
                }
            }
            ok
        })
        .collect();
    Explorer {
        program,
        coloring,
        cache,
        classes: None,
        limit,
        paths: 0,
        steps: 0,
        can_leave,
    }
}

/// Every bounded entry-to-exit path with its simulated cost. A loop's
/// back edge may be taken while its iteration count is below the bound.
pub fn enumerate_paths(
    program: &TaskProgram,
    coloring: &Coloring,
    cache: &CacheConfig,
    limit: usize,
) -> Result<Vec<PathTrace>> {
    let mut out = Vec::new();
    explorer(program, coloring, cache, limit).run(&mut |w| {
        out.push(PathTrace {
            blocks: w.path.iter().map(|&b| program.block(b).id.clone()).collect(),
            cycles: w.cycles,
            misses: w.misses.clone(),
        })
    })?;
    Ok(out)
}

/// Largest simulated cost over all bounded paths, without storing them.
pub fn max_path_cycles(program: &TaskProgram, coloring: &Coloring, cache: &CacheConfig, limit: usize) -> Result<u64> {
    let mut best = 0;
    explorer(program, coloring, cache, limit).run(&mut |w| best = best.max(w.cycles))?;
    Ok(best)
}

/// Runs every bounded path and reports accesses whose class the concrete
/// cache contradicts: an always-hit that missed, or a first-miss line that
/// missed twice within one entry of its loop.
pub fn check_classification(
    program: &TaskProgram,
    coloring: &Coloring,
    cache: &CacheConfig,
    limit: usize,
) -> Result<Vec<ClassViolation>> {
    let cls = classify(program, coloring, cache)?;
    let mut ex = explorer(program, coloring, cache, limit);
    ex.classes = Some((0..program.blocks().len()).map(|b| cls.block(b).to_vec()).collect());
    ex.run(&mut |_| {})
}

/// Exhaustive minimum-color selection, lexicographically smallest among
/// optima. Without explicit check points every deadline up to the
/// hyperperiod is checked. `None` means no schedulable selection fits `k`.
pub fn brute_force_allocation(
    tables: &[WcetTable],
    tasks: &[TaskSkeleton],
    k: u32,
    check_points: Option<&CheckPointSet>,
) -> Result<Option<Vec<u32>>> {
    let space: u128 = tables.iter().map(|t| u128::from(t.s_max())).product();
    if space > 1_000_000 {
        bail!(Code::OracleScope, "{space} selections exceed the enumeration limit");
    }
    let points: Vec<u64> = match check_points {
        Some(p) => p.points.clone(),
        None => {
            let h = tasks.iter().try_fold(1u64, |acc, t| {
                let g = num_integer::gcd(acc, t.period);
                (acc / g).checked_mul(t.period)
            });
            let Some(h) = h.filter(|&h| h <= 10_000_000) else {
                bail!(Code::OracleScope, "hyperperiod too large to enumerate");
            };
            let mut pts: Vec<u64> = tasks
                .iter()
                .flat_map(|t| {
                    (0..)
                        .map(move |k| k * t.period + t.deadline)
                        .take_while(move |&d| d <= h)
                })
                .collect();
            pts.sort_unstable();
            pts.dedup();
            pts
        }
    };
    let schedulable = |sel: &[u32]| {
        let u = tables
            .iter()
            .zip(tasks)
            .zip(sel)
            .fold(BigRational::from_integer(BigInt::from(0)), |acc, ((tb, tk), &j)| {
                acc + BigRational::new(BigInt::from(tb.wcet(j)), BigInt::from(tk.period))
            });
        if u > BigRational::one() {
            return false;
        }
        points.iter().all(|&t| {
            let demand: u128 = tables
                .iter()
                .zip(tasks)
                .zip(sel)
                .filter(|((_, tk), _)| tk.deadline <= t)
                .map(|((tb, tk), &j)| u128::from((t - tk.deadline) / tk.period + 1) * u128::from(tb.wcet(j)))
                .sum();
            demand <= u128::from(t)
        })
    };
    let mut best: Option<(u32, Vec<u32>)> = None;
    let mut sel = vec![1u32; tables.len()];
    loop {
        let total: u32 = sel.iter().sum();
        let better = match &best {
            None => true,
            Some((bt, bs)) => total < *bt || (total == *bt && sel < *bs),
        };
        if total <= k && better && schedulable(&sel) {
            best = Some((total, sel.clone()));
        }
        // Odometer increment, last position fastest.
        let mut i = sel.len();
        loop {
            if i == 0 {
                return Ok(best.map(|(_, s)| s));
            }
            i -= 1;
            if sel[i] < tables[i].s_max() {
                sel[i] += 1;
                break;
            }
            sel[i] = 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeadlineMiss {
    pub task: usize,
    pub deadline: u64,
}

/// Unit-step preemptive EDF from a synchronous release at 0, strictly
/// periodic, ties broken by task index. Reports the first deadline at or
/// before `horizon` that a job misses.
pub fn edf_simulate(tasks: &[SporadicTask], horizon: u64) -> Option<DeadlineMiss> {
    // (deadline, task, remaining)
    let mut jobs: Vec<(u64, usize, u64)> = Vec::new();
    for now in 0..=horizon {
        if let Some(&(d, task, _)) = jobs.iter().filter(|j| j.0 <= now).min() {
            return Some(DeadlineMiss { task, deadline: d });
        }
        if now == horizon {
            break;
        }
        for (i, t) in tasks.iter().enumerate() {
            if now % t.period == 0 {
                jobs.push((now + t.deadline, i, t.wcet));
            }
        }
        if let Some(pos) = (0..jobs.len()).min_by_key(|&p| (jobs[p].0, jobs[p].1)) {
            jobs[pos].2 -= 1;
            if jobs[pos].2 == 0 {
                jobs.swap_remove(pos);
            }
        }
    }
    None
}
