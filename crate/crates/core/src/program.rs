//! Task programs: single-procedure CFGs whose basic blocks live on virtual
//! pages and touch a contiguous range of cache lines within their page.
//!
//! Loading validates the whole structure up front (reachability,
//! reducibility, declared loop bounds for every cycle) so the analyses can
//! assume a well-formed loop nest.

use std::collections::{BTreeSet, HashMap};

use petgraph::algo::dominators::simple_fast;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Code, Error, Result};
use crate::model::{CacheConfig, SCHEMA_VERSION};

pub type BlockIdx = usize;
pub type LoopIdx = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasicBlock {
    pub id: String,
    pub page: u32,
    /// Inclusive `[first, last]` line range within the page.
    pub lines: [u32; 2],
    #[serde(rename = "instr")]
    pub instr_count: u32,
}

impl BasicBlock {
    pub fn line_range(&self) -> std::ops::RangeInclusive<u32> {
        self.lines[0]..=self.lines[1]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Loop {
    pub header: BlockIdx,
    /// Maximum number of iterations (header executions) per loop entry.
    pub bound: u32,
    pub back_edges: Vec<(BlockIdx, BlockIdx)>,
    /// Natural-loop body including the header, ascending.
    pub body: Vec<BlockIdx>,
    pub parent: Option<LoopIdx>,
    /// 1 for outermost loops.
    pub depth: u32,
}

impl Loop {
    pub fn contains(&self, block: BlockIdx) -> bool {
        self.body.binary_search(&block).is_ok()
    }
}

/// A validated task program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskProgram {
    pub task_id: String,
    pub page_count: u32,
    blocks: Vec<BasicBlock>,
    edges: Vec<(BlockIdx, BlockIdx)>,
    entry: BlockIdx,
    exit: BlockIdx,
    loops: Vec<Loop>,
    succs: Vec<Vec<BlockIdx>>,
    preds: Vec<Vec<BlockIdx>>,
    innermost: Vec<Option<LoopIdx>>,
}

// ---------------------------------------------------------------------------
// document schema

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LoopDoc {
    header: String,
    bound: u32,
    back_edges: Vec<[String; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProgramDoc {
    v: u32,
    task_id: String,
    page_count: u32,
    blocks: Vec<BasicBlock>,
    edges: Vec<[String; 2]>,
    entry: String,
    exit: String,
    #[serde(default)]
    loops: Vec<LoopDoc>,
}

/// Parses and validates a program document.
pub fn load_program(document: &str) -> Result<TaskProgram> {
    let doc: ProgramDoc =
        serde_json::from_str(document).map_err(|e| Error::new(Code::Malformed, format!("program: {e}")))?;
    if doc.v != SCHEMA_VERSION {
        bail!(
            Code::UnsupportedVersion,
            "program version {} (expected {SCHEMA_VERSION})",
            doc.v
        );
    }
    let ids: HashMap<&str, BlockIdx> = doc.blocks.iter().enumerate().map(|(i, b)| (b.id.as_str(), i)).collect();
    let lookup = |id: &str| -> Result<BlockIdx> {
        ids.get(id)
            .copied()
            .ok_or_else(|| Error::new(Code::UnknownBlock, format!("unknown block '{id}'")))
    };
    if ids.len() != doc.blocks.len() {
        let mut seen = BTreeSet::new();
        let dup = doc.blocks.iter().find(|b| !seen.insert(b.id.as_str())).unwrap();
        bail!(Code::DuplicateBlock, "block '{}' declared twice", dup.id);
    }
    let edges = doc
        .edges
        .iter()
        .map(|[a, b]| Ok((lookup(a)?, lookup(b)?)))
        .collect::<Result<Vec<_>>>()?;
    let loops = doc
        .loops
        .iter()
        .map(|l| {
            let back_edges = l
                .back_edges
                .iter()
                .map(|[a, b]| Ok((lookup(a)?, lookup(b)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(LoopSpec {
                header: lookup(&l.header)?,
                bound: l.bound,
                back_edges,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let entry = lookup(&doc.entry)?;
    let exit = lookup(&doc.exit)?;
    TaskProgram::build(doc.task_id, doc.page_count, doc.blocks, edges, entry, exit, loops)
}

/// Loop declaration in index form, used by builders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoopSpec {
    pub header: BlockIdx,
    pub bound: u32,
    pub back_edges: Vec<(BlockIdx, BlockIdx)>,
}

impl TaskProgram {
    /// Validates and assembles a program from index-based parts.
    pub fn build(
        task_id: String,
        page_count: u32,
        blocks: Vec<BasicBlock>,
        edges: Vec<(BlockIdx, BlockIdx)>,
        entry: BlockIdx,
        exit: BlockIdx,
        loop_specs: Vec<LoopSpec>,
    ) -> Result<TaskProgram> {
        let n = blocks.len();
        if n == 0 {
            bail!(Code::Malformed, "program has no blocks");
        }
        let mut seen = BTreeSet::new();
        for b in &blocks {
            if !seen.insert(b.id.as_str()) {
                bail!(Code::DuplicateBlock, "block '{}' declared twice", b.id);
            }
            if b.instr_count == 0 {
                bail!(Code::EmptyBlock, "block '{}' has no instructions", b.id);
            }
            if b.lines[0] > b.lines[1] {
                bail!(
                    Code::LineOutOfRange,
                    "block '{}' has inverted line range {:?}",
                    b.id,
                    b.lines
                );
            }
            if b.page >= page_count {
                bail!(
                    Code::PageOutOfRange,
                    "block '{}' on page {} but page_count is {page_count}",
                    b.id,
                    b.page
                );
            }
        }
        let max_page = blocks.iter().map(|b| b.page).max().unwrap();
        if max_page + 1 != page_count {
            bail!(
                Code::PageCountMismatch,
                "page_count {page_count} but highest page referenced is {max_page}"
            );
        }
        if entry >= n || exit >= n {
            bail!(Code::UnknownBlock, "entry or exit out of range");
        }
        let mut succs = vec![Vec::new(); n];
        let mut preds = vec![Vec::new(); n];
        let mut edge_set = BTreeSet::new();
        for &(a, b) in &edges {
            if a >= n || b >= n {
                bail!(Code::UnknownBlock, "edge ({a}, {b}) out of range");
            }
            if !edge_set.insert((a, b)) {
                bail!(Code::Malformed, "duplicate edge {} -> {}", blocks[a].id, blocks[b].id);
            }
            succs[a].push(b);
            preds[b].push(a);
        }
        if !preds[entry].is_empty() {
            bail!(
                Code::EntryHasPredecessors,
                "entry '{}' has incoming edges",
                blocks[entry].id
            );
        }
        if !succs[exit].is_empty() {
            bail!(Code::ExitHasSuccessors, "exit '{}' has outgoing edges", blocks[exit].id);
        }
        let fwd = reach(entry, &succs);
        if let Some(b) = (0..n).find(|&b| !fwd[b]) {
            bail!(
                Code::UnreachableBlock,
                "block '{}' is unreachable from entry",
                blocks[b].id
            );
        }
        let bwd = reach(exit, &preds);
        if let Some(b) = (0..n).find(|&b| !bwd[b]) {
            bail!(
                Code::ExitUnreachable,
                "exit is unreachable from block '{}'",
                blocks[b].id
            );
        }

        let mut graph = DiGraph::<(), ()>::with_capacity(n, edges.len());
        let nodes: Vec<NodeIndex> = (0..n).map(|_| graph.add_node(())).collect();
        for &(a, b) in &edges {
            graph.add_edge(nodes[a], nodes[b], ());
        }
        let doms = simple_fast(&graph, nodes[entry]);
        let dominates = |d: BlockIdx, b: BlockIdx| -> bool {
            doms.dominators(nodes[b])
                .map(|mut it| it.any(|x| x == nodes[d]))
                .unwrap_or(false)
        };
        let back_edges: BTreeSet<(BlockIdx, BlockIdx)> =
            edges.iter().copied().filter(|&(a, b)| dominates(b, a)).collect();

        // Reducible iff the graph without dominator back edges is acyclic.
        let mut forward = graph.clone();
        forward.retain_edges(|g, e| {
            let (a, b) = g.edge_endpoints(e).unwrap();
            !back_edges.contains(&(a.index(), b.index()))
        });
        if petgraph::algo::is_cyclic_directed(&forward) {
            bail!(Code::IrreducibleCfg, "control flow graph is irreducible");
        }

        let mut declared: HashMap<(BlockIdx, BlockIdx), LoopIdx> = HashMap::new();
        let mut headers = BTreeSet::new();
        for (li, spec) in loop_specs.iter().enumerate() {
            let hid = &blocks[spec.header].id;
            if spec.bound == 0 {
                bail!(Code::InvalidLoop, "loop at '{hid}' has zero bound");
            }
            if spec.back_edges.is_empty() {
                bail!(Code::InvalidLoop, "loop at '{hid}' declares no back edges");
            }
            if !headers.insert(spec.header) {
                bail!(Code::InvalidLoop, "two loops declared with header '{hid}'");
            }
            for &(a, b) in &spec.back_edges {
                if b != spec.header || !back_edges.contains(&(a, b)) {
                    bail!(
                        Code::InvalidLoop,
                        "({} -> {}) is not a back edge to header '{hid}'",
                        blocks[a].id,
                        blocks[b].id
                    );
                }
                if declared.insert((a, b), li).is_some() {
                    bail!(
                        Code::InvalidLoop,
                        "back edge ({} -> {}) declared twice",
                        blocks[a].id,
                        blocks[b].id
                    );
                }
            }
        }
        if let Some(&(a, b)) = back_edges.iter().find(|e| !declared.contains_key(e)) {
            bail!(
                Code::UnboundedCycle,
                "cycle through ({} -> {}) has no declared loop bound",
                blocks[a].id,
                blocks[b].id
            );
        }

        let mut loops: Vec<Loop> = loop_specs
            .into_iter()
            .map(|spec| {
                let body = natural_loop(spec.header, &spec.back_edges, &preds);
                Loop {
                    header: spec.header,
                    bound: spec.bound,
                    back_edges: spec.back_edges,
                    body,
                    parent: None,
                    depth: 0,
                }
            })
            .collect();

        // Parent = smallest strictly enclosing body; bodies must be laminar.
        for i in 0..loops.len() {
            let mut parent: Option<LoopIdx> = None;
            for j in 0..loops.len() {
                if i == j {
                    continue;
                }
                let (a, b) = (&loops[i].body, &loops[j].body);
                let shared = a.iter().filter(|x| b.binary_search(x).is_ok()).count();
                if shared == 0 {
                    continue;
                }
                if shared == a.len() && a.len() < b.len() {
                    if parent.is_none_or(|p| loops[p].body.len() > b.len()) {
                        parent = Some(j);
                    }
                } else if shared != b.len() {
                    bail!(
                        Code::InvalidLoop,
                        "loops at '{}' and '{}' overlap without nesting",
                        blocks[loops[i].header].id,
                        blocks[loops[j].header].id
                    );
                }
            }
            loops[i].parent = parent;
        }
        for i in 0..loops.len() {
            let mut depth = 1;
            let mut p = loops[i].parent;
            while let Some(q) = p {
                depth += 1;
                p = loops[q].parent;
            }
            loops[i].depth = depth;
        }
        let mut innermost: Vec<Option<LoopIdx>> = vec![None; n];
        for (li, l) in loops.iter().enumerate() {
            for &b in &l.body {
                if innermost[b].is_none_or(|cur| loops[cur].depth < l.depth) {
                    innermost[b] = Some(li);
                }
            }
        }

        Ok(TaskProgram {
            task_id,
            page_count,
            blocks,
            edges,
            entry,
            exit,
            loops,
            succs,
            preds,
            innermost,
        })
    }

    /// Canonical JSON document; `load_program(p.to_json()) == p`.
    pub fn to_json(&self) -> String {
        let id = |b: BlockIdx| self.blocks[b].id.clone();
        let doc = ProgramDoc {
            v: SCHEMA_VERSION,
            task_id: self.task_id.clone(),
            page_count: self.page_count,
            blocks: self.blocks.clone(),
            edges: self.edges.iter().map(|&(a, b)| [id(a), id(b)]).collect(),
            entry: id(self.entry),
            exit: id(self.exit),
            loops: self
                .loops
                .iter()
                .map(|l| LoopDoc {
                    header: id(l.header),
                    bound: l.bound,
                    back_edges: l.back_edges.iter().map(|&(a, b)| [id(a), id(b)]).collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("program serializes")
    }

    /// Checks line ranges against the cache geometry.
    pub fn check_geometry(&self, cache: &CacheConfig) -> Result<()> {
        for b in &self.blocks {
            if b.lines[1] >= cache.lines_per_page {
                bail!(
                    Code::LineOutOfRange,
                    "block '{}' touches line {} but pages have {} lines",
                    b.id,
                    b.lines[1],
                    cache.lines_per_page
                );
            }
        }
        Ok(())
    }

    pub fn blocks(&self) -> &[BasicBlock] {
        &self.blocks
    }

    pub fn block(&self, b: BlockIdx) -> &BasicBlock {
        &self.blocks[b]
    }

    pub fn edges(&self) -> &[(BlockIdx, BlockIdx)] {
        &self.edges
    }

    pub fn entry(&self) -> BlockIdx {
        self.entry
    }

    pub fn exit(&self) -> BlockIdx {
        self.exit
    }

    pub fn loops(&self) -> &[Loop] {
        &self.loops
    }

    pub fn succs(&self, b: BlockIdx) -> &[BlockIdx] {
        &self.succs[b]
    }

    pub fn preds(&self, b: BlockIdx) -> &[BlockIdx] {
        &self.preds[b]
    }

    pub fn block_index(&self, id: &str) -> Option<BlockIdx> {
        self.blocks.iter().position(|b| b.id == id)
    }

    /// Innermost loop containing `b`.
    pub fn innermost_loop(&self, b: BlockIdx) -> Option<LoopIdx> {
        self.innermost[b]
    }

    /// Loops containing `b`, innermost first.
    pub fn enclosing_loops(&self, b: BlockIdx) -> Vec<LoopIdx> {
        let mut out = Vec::new();
        let mut cur = self.innermost[b];
        while let Some(l) = cur {
            out.push(l);
            cur = self.loops[l].parent;
        }
        out
    }

    /// Loop nesting depth of a block index (0 outside all loops).
    pub fn depth_of(&self, b: BlockIdx) -> u32 {
        self.innermost[b].map_or(0, |l| self.loops[l].depth)
    }

    /// Whether the edge `a -> b` is a declared back edge.
    pub fn is_back_edge(&self, a: BlockIdx, b: BlockIdx) -> Option<LoopIdx> {
        self.loops
            .iter()
            .position(|l| l.header == b && l.back_edges.contains(&(a, b)))
    }

    pub fn max_depth(&self) -> u32 {
        self.loops.iter().map(|l| l.depth).max().unwrap_or(0)
    }

    /// Total number of line accesses per execution of every block.
    pub fn line_count(&self) -> usize {
        self.blocks.iter().map(|b| (b.lines[1] - b.lines[0] + 1) as usize).sum()
    }
}

/// Number of declared loops containing the block with the given id.
pub fn nesting_level(program: &TaskProgram, block: &str) -> Result<u32> {
    let b = program
        .block_index(block)
        .ok_or_else(|| Error::new(Code::UnknownBlock, format!("unknown block '{block}'")))?;
    Ok(program.depth_of(b))
}

fn reach(start: BlockIdx, adj: &[Vec<BlockIdx>]) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(b) = stack.pop() {
        for &s in &adj[b] {
            if !seen[s] {
                seen[s] = true;
                stack.push(s);
            }
        }
    }
    seen
}

fn natural_loop(header: BlockIdx, back_edges: &[(BlockIdx, BlockIdx)], preds: &[Vec<BlockIdx>]) -> Vec<BlockIdx> {
    let mut body = BTreeSet::from([header]);
    let mut stack: Vec<BlockIdx> = back_edges.iter().map(|&(a, _)| a).collect();
    while let Some(b) = stack.pop() {
        if body.insert(b) {
            stack.extend(preds[b].iter().copied());
        }
    }
    body.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn doc(blocks: &str, edges: &str, loops: &str, pages: u32, exit: &str) -> String {
        format!(
            r#"{{"v":1,"task_id":"t","page_count":{pages},"blocks":[{blocks}],"edges":[{edges}],"entry":"A","exit":"{exit}","loops":[{loops}]}}"#
        )
    }

    fn blk(id: &str, page: u32) -> String {
        format!(r#"{{"id":"{id}","page":{page},"lines":[0,0],"instr":1}}"#)
    }

    fn four_block_loop() -> String {
        let blocks = [blk("A", 0), blk("B", 1), blk("C", 2), blk("D", 3)].join(",");
        doc(
            &blocks,
            r#"["A","B"],["B","C"],["C","B"],["C","D"]"#,
            r#"{"header":"B","bound":3,"back_edges":[["C","B"]]}"#,
            4,
            "D",
        )
    }

    #[test]
    fn minimal_program() {
        let text = r#"{"v":1,"task_id":"t","page_count":1,"blocks":[{"id":"A","page":0,"lines":[0,0],"instr":3}],"edges":[],"entry":"A","exit":"A"}"#;
        let p = load_program(text).unwrap();
        assert_eq!(p.page_count, 1);
        assert_eq!(p.blocks().len(), 1);
    }

    #[test]
    fn undeclared_back_edge_is_unbounded() {
        let blocks = [blk("A", 0), blk("B", 0), blk("C", 0)].join(",");
        let text = doc(&blocks, r#"["A","B"],["B","B"],["B","C"]"#, "", 1, "C");
        assert_eq!(load_program(&text).unwrap_err().code, Code::UnboundedCycle);
    }

    #[test]
    fn four_block_loop_round_trips() {
        let p = load_program(&four_block_loop()).unwrap();
        assert_eq!(p.page_count, 4);
        assert_eq!(p.loops().len(), 1);
        assert_eq!(p.loops()[0].body, vec![1, 2]);
        assert_eq!(load_program(&p.to_json()).unwrap(), p);
    }

    #[test]
    fn irreducible_rejected() {
        // A -> B, A -> C, B <-> C: two-entry cycle.
        let blocks = [blk("A", 0), blk("B", 0), blk("C", 0), blk("D", 0)].join(",");
        let text = doc(
            &blocks,
            r#"["A","B"],["A","C"],["B","C"],["C","B"],["C","D"]"#,
            "",
            1,
            "D",
        );
        assert_eq!(load_program(&text).unwrap_err().code, Code::IrreducibleCfg);
    }

    #[test]
    fn distinct_diagnostics() {
        let bad_page = doc(&blk("A", 1), "", "", 3, "A");
        assert_eq!(load_program(&bad_page).unwrap_err().code, Code::PageCountMismatch);
        let over = doc(&blk("A", 3), "", "", 2, "A");
        assert_eq!(load_program(&over).unwrap_err().code, Code::PageOutOfRange);
        let inverted = doc(r#"{"id":"A","page":0,"lines":[3,1],"instr":1}"#, "", "", 1, "A");
        assert_eq!(load_program(&inverted).unwrap_err().code, Code::LineOutOfRange);
        assert_eq!(load_program("{").unwrap_err().code, Code::Malformed);
        let unknown = doc(&blk("A", 0), r#"["A","Z"]"#, "", 1, "A");
        assert_eq!(load_program(&unknown).unwrap_err().code, Code::UnknownBlock);
        let zero_bound = four_block_loop().replace(r#""bound":3"#, r#""bound":0"#);
        assert_eq!(load_program(&zero_bound).unwrap_err().code, Code::InvalidLoop);
        let fake = four_block_loop().replace(r#""back_edges":[["C","B"]]"#, r#""back_edges":[["A","B"]]"#);
        assert_eq!(load_program(&fake).unwrap_err().code, Code::InvalidLoop);
    }

    #[test]
    fn line_geometry_checked() {
        let text = doc(r#"{"id":"A","page":0,"lines":[0,20],"instr":1}"#, "", "", 1, "A");
        let p = load_program(&text).unwrap();
        let err = p.check_geometry(&CacheConfig::default()).unwrap_err();
        assert_eq!(err.code, Code::LineOutOfRange);
    }

    #[test]
    fn nesting_levels() {
        // A -> H1 -> H2 -> X -> H2 ; X -> L1 -> H1 ; L1 -> E
        let blocks = [
            blk("A", 0),
            blk("H1", 0),
            blk("H2", 0),
            blk("X", 0),
            blk("L1", 0),
            blk("E", 0),
        ]
        .join(",");
        let text = doc(
            &blocks,
            r#"["A","H1"],["H1","H2"],["H2","X"],["X","H2"],["X","L1"],["L1","H1"],["L1","E"]"#,
            r#"{"header":"H1","bound":2,"back_edges":[["L1","H1"]]},{"header":"H2","bound":3,"back_edges":[["X","H2"]]}"#,
            1,
            "E",
        );
        let p = load_program(&text).unwrap();
        assert_eq!(nesting_level(&p, "A").unwrap(), 0);
        assert_eq!(nesting_level(&p, "H1").unwrap(), 1);
        assert_eq!(nesting_level(&p, "L1").unwrap(), 1);
        assert_eq!(nesting_level(&p, "X").unwrap(), 2);
        assert_eq!(nesting_level(&p, "E").unwrap(), 0);
        assert_eq!(nesting_level(&p, "nope").unwrap_err().code, Code::UnknownBlock);

        // Edge order must not matter.
        let shuffled = text.replace(
            r#"["A","H1"],["H1","H2"],["H2","X"],["X","H2"],["X","L1"],["L1","H1"],["L1","E"]"#,
            r#"["L1","E"],["X","L1"],["H2","X"],["L1","H1"],["A","H1"],["X","H2"],["H1","H2"]"#,
        );
        let q = load_program(&shuffled).unwrap();
        for id in ["A", "H1", "H2", "X", "L1", "E"] {
            assert_eq!(nesting_level(&p, id).unwrap(), nesting_level(&q, id).unwrap());
        }
    }
}
