//! Loop-nest longest-path WCET over classified accesses.
//!
//! Cost model: one cycle per instruction, `miss_penalty` cycles per line
//! miss, hits free. Each loop collapses, innermost first, into a super-node
//! costing `bound * longest_iteration + first_miss_charge`; the top level is
//! a DAG whose longest entry-to-exit path is the WCET.
//!
//! A first-miss line of a loop may either be charged once per loop entry or
//! as a miss on every execution; both are safe. The engine starts from the
//! once-per-entry charge and greedily moves lines to per-execution charging
//! when that shortens the bound (lines off the worst path are cheaper to
//! charge per execution).

use std::collections::{BTreeMap, BTreeSet};

use crate::cache::{classify, AccessClass, Classification, MemLine};
use crate::error::Result;
use crate::heuristics::Heuristic;
use crate::model::{s_max, CacheConfig, Coloring, WcetEntry, WcetTable};
use crate::program::{BlockIdx, LoopIdx, TaskProgram};

/// Node of a collapsed loop level: a plain block or a whole inner loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Node {
    Block(BlockIdx),
    Loop(LoopIdx),
}

/// Per-loop result of the collapse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopSummary {
    pub header: BlockIdx,
    pub bound: u32,
    /// Longest single iteration with first-miss lines of this loop as hits.
    pub body_longest_cycles: u64,
    /// Penalty for lines charged once per entry.
    pub fm_charge: u64,
    pub total_cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WcetReport {
    pub wcet: u64,
    pub loops: Vec<LoopSummary>,
}

struct Engine<'a> {
    program: &'a TaskProgram,
    cls: &'a Classification,
    penalty: u64,
    /// Which level each block belongs to, as a node of that level.
    level_node: Vec<Vec<(Option<LoopIdx>, Node)>>,
    loop_cost: Vec<u64>,
    summaries: Vec<Option<LoopSummary>>,
}

impl<'a> Engine<'a> {
    fn new(program: &'a TaskProgram, cls: &'a Classification, penalty: u64) -> Self {
        let level_node = (0..program.blocks().len())
            .map(|b| {
                // (level, node representing b at that level), innermost first
                let chain = program.enclosing_loops(b);
                let mut out = Vec::with_capacity(chain.len() + 1);
                let mut node = Node::Block(b);
                for &l in &chain {
                    out.push((Some(l), node));
                    node = Node::Loop(l);
                }
                out.push((None, node));
                out
            })
            .collect();
        Engine {
            program,
            cls,
            penalty,
            level_node,
            loop_cost: vec![0; program.loops().len()],
            summaries: vec![None; program.loops().len()],
        }
    }

    fn node_at(&self, level: Option<LoopIdx>, b: BlockIdx) -> Option<Node> {
        self.level_node[b].iter().find(|(l, _)| *l == level).map(|&(_, n)| n)
    }

    /// Nodes and forward edges of one level (back edges of `level` removed).
    fn level_graph(&self, level: Option<LoopIdx>) -> (Vec<Node>, Vec<(Node, Node)>) {
        let mut nodes = BTreeSet::new();
        let mut edges = BTreeSet::new();
        for b in 0..self.program.blocks().len() {
            if let Some(n) = self.node_at(level, b) {
                nodes.insert(n);
            }
        }
        for &(a, b) in self.program.edges() {
            if let Some(l) = level {
                if self.program.loops()[l].header == b && self.program.is_back_edge(a, b) == Some(l) {
                    continue;
                }
            }
            if let (Some(na), Some(nb)) = (self.node_at(level, a), self.node_at(level, b)) {
                if na != nb {
                    edges.insert((na, nb));
                }
            }
        }
        (nodes.into_iter().collect(), edges.into_iter().collect())
    }

    /// Cost of one execution of a block, with `per_exec` lines of this level
    /// charged as misses instead of once per entry.
    fn block_cost(&self, b: BlockIdx, level: Option<LoopIdx>, per_exec: &BTreeSet<MemLine>) -> u64 {
        let blk = self.program.block(b);
        let misses = blk
            .line_range()
            .zip(self.cls.block(b))
            .filter(|(line, class)| match class {
                AccessClass::AlwaysHit => false,
                AccessClass::NotClassified => true,
                AccessClass::FirstMiss(l) => {
                    Some(*l) == level
                        && per_exec.contains(&MemLine {
                            page: blk.page,
                            line: *line,
                        })
                }
            })
            .count() as u64;
        u64::from(blk.instr_count) + misses * self.penalty
    }

    fn longest_path(
        &self,
        level: Option<LoopIdx>,
        nodes: &[Node],
        edges: &[(Node, Node)],
        start: Node,
        per_exec: &BTreeSet<MemLine>,
    ) -> BTreeMap<Node, u64> {
        let cost = |n: Node| match n {
            Node::Block(b) => self.block_cost(b, level, per_exec),
            Node::Loop(l) => self.loop_cost[l],
        };
        // Kahn order over the level DAG.
        let mut indeg: BTreeMap<Node, usize> = nodes.iter().map(|&n| (n, 0)).collect();
        for (_, b) in edges {
            *indeg.get_mut(b).unwrap() += 1;
        }
        let mut ready: Vec<Node> = indeg.iter().filter(|(_, &d)| d == 0).map(|(&n, _)| n).collect();
        let mut dist: BTreeMap<Node, u64> = BTreeMap::new();
        dist.insert(start, cost(start));
        while let Some(n) = ready.pop() {
            let here = dist.get(&n).copied();
            for &(_, b) in edges.iter().filter(|(a, _)| *a == n) {
                if let Some(d) = here {
                    let cand = d + cost(b);
                    let slot = dist.entry(b).or_insert(0);
                    *slot = (*slot).max(cand);
                }
                let e = indeg.get_mut(&b).unwrap();
                *e -= 1;
                if *e == 0 {
                    ready.push(b);
                }
            }
        }
        dist
    }

    fn summarize(&mut self, l: LoopIdx) {
        let lp = &self.program.loops()[l];
        let (nodes, edges) = self.level_graph(Some(l));
        let header = Node::Block(lp.header);

        // First-miss lines attributed to this loop, and whether every such
        // access sits in a block directly at this level.
        let mut fm: BTreeMap<MemLine, bool> = BTreeMap::new();
        for &b in &lp.body {
            let blk = self.program.block(b);
            let direct = self.program.innermost_loop(b) == Some(l);
            for (line, class) in blk.line_range().zip(self.cls.block(b)) {
                if *class == AccessClass::FirstMiss(l) {
                    let ml = MemLine { page: blk.page, line };
                    let e = fm.entry(ml).or_insert(true);
                    *e &= direct;
                }
            }
        }
        let bound = u64::from(lp.bound);
        let eval = |per_exec: &BTreeSet<MemLine>| -> (u64, u64, u64) {
            let dist = self.longest_path(Some(l), &nodes, &edges, header, per_exec);
            let longest = dist.values().copied().max().unwrap_or(0);
            let once = (fm.len() - per_exec.len()) as u64 * self.penalty;
            (bound * longest + once, longest, once)
        };

        let movable: Vec<MemLine> = fm.iter().filter(|(_, &d)| d).map(|(&m, _)| m).collect();
        let mut best_set = BTreeSet::new();
        let mut best = eval(&best_set);
        let all: BTreeSet<MemLine> = movable.iter().copied().collect();
        let from_all = eval(&all);
        let mut candidates = vec![(best, best_set.clone())];
        if from_all.0 < best.0 {
            candidates.push((from_all, all.clone()));
        }
        for (start_cost, start_set) in candidates {
            let (mut cur, mut set) = (start_cost, start_set);
            loop {
                let mut improved = false;
                for &m in &movable {
                    let mut trial = set.clone();
                    if !trial.remove(&m) {
                        trial.insert(m);
                    }
                    let c = eval(&trial);
                    if c.0 < cur.0 {
                        cur = c;
                        set = trial;
                        improved = true;
                    }
                }
                if !improved {
                    break;
                }
            }
            if cur.0 < best.0 || (cur.0 == best.0 && set.len() < best_set.len()) {
                best = cur;
                best_set = set;
            }
        }
        let (total, longest, once) = best;
        self.loop_cost[l] = total;
        self.summaries[l] = Some(LoopSummary {
            header: lp.header,
            bound: lp.bound,
            body_longest_cycles: longest,
            fm_charge: once,
            total_cycles: total,
        });
    }

    fn run(mut self) -> WcetReport {
        let mut order: Vec<LoopIdx> = (0..self.program.loops().len()).collect();
        order.sort_by_key(|&l| std::cmp::Reverse(self.program.loops()[l].depth));
        for l in order {
            self.summarize(l);
        }
        let (nodes, edges) = self.level_graph(None);
        let start = self.node_at(None, self.program.entry()).unwrap();
        let end = self.node_at(None, self.program.exit()).unwrap();
        let dist = self.longest_path(None, &nodes, &edges, start, &BTreeSet::new());
        WcetReport {
            wcet: dist[&end],
            loops: self.summaries.into_iter().map(|s| s.unwrap()).collect(),
        }
    }
}

/// WCET of `program` with loop summaries, from an existing classification.
pub fn wcet_from_classes(program: &TaskProgram, cls: &Classification, cache: &CacheConfig) -> WcetReport {
    Engine::new(program, cls, cache.miss_penalty).run()
}

pub fn wcet_report(program: &TaskProgram, coloring: &Coloring, cache: &CacheConfig) -> Result<WcetReport> {
    let cls = classify(program, coloring, cache)?;
    Ok(wcet_from_classes(program, &cls, cache))
}

/// Safe WCET bound in cycles for `program` under `coloring`.
pub fn wcet(program: &TaskProgram, coloring: &Coloring, cache: &CacheConfig) -> Result<u64> {
    Ok(wcet_report(program, coloring, cache)?.wcet)
}

/// WCET with every page on a private color.
pub fn infinite_cache_wcet(program: &TaskProgram, cache: &CacheConfig) -> Result<u64> {
    wcet(program, &Coloring::distinct(program.page_count as usize), cache)
}

/// `C(j)` for `j = 1..=s_max`, prefix-minimized so that a larger budget never
/// reports a larger WCET. Each entry keeps the coloring that realizes it.
pub fn wcet_table(program: &TaskProgram, heuristic: Heuristic, cache: &CacheConfig, n_tasks: u32) -> Result<WcetTable> {
    let len = s_max(program.page_count, cache, n_tasks)?;
    let mut entries: Vec<WcetEntry> = Vec::with_capacity(len as usize);
    for j in 1..=len {
        let coloring = heuristic.coloring(program, j)?;
        let value = wcet(program, &coloring, cache)?;
        match entries.last() {
            Some(prev) if prev.wcet <= value => entries.push(prev.clone()),
            _ => entries.push(WcetEntry { wcet: value, coloring }),
        }
    }
    WcetTable::new(program.task_id.clone(), entries)
}
