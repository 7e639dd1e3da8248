//! Deterministic program generators.
//!
//! [`synthetic_program`] builds benchmark stand-ins with a requested page
//! count. Loop bodies visit every page they own with blocks covering
//! overlapping line ranges, so pages sharing a color compete for the same
//! cache sets. [`random_small_program`] draws small structured programs for
//! exhaustive oracle checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::program::{BasicBlock, BlockIdx, LoopSpec, TaskProgram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// A chain of blocks, no loops.
    StraightLine,
    /// One loop whose body walks every page, with occasional if/else.
    SingleLoop,
    /// An outer loop over the first half of the pages wrapping an inner loop
    /// over the rest.
    NestedLoops,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub shape: Shape,
    pub lines_per_page: u32,
    pub outer_bound: u32,
    pub inner_bound: u32,
    pub instr_per_line: u32,
}

impl ShapeParams {
    pub fn new(shape: Shape) -> Self {
        ShapeParams {
            shape,
            lines_per_page: 16,
            outer_bound: 10,
            inner_bound: 6,
            instr_per_line: 3,
        }
    }
}

#[derive(Default)]
struct Builder {
    blocks: Vec<BasicBlock>,
    edges: Vec<(BlockIdx, BlockIdx)>,
    loops: Vec<LoopSpec>,
}

impl Builder {
    fn block(&mut self, page: u32, lines: [u32; 2], instr: u32) -> BlockIdx {
        let id = format!("b{}", self.blocks.len());
        self.blocks.push(BasicBlock {
            id,
            page,
            lines,
            instr_count: instr,
        });
        self.blocks.len() - 1
    }

    fn edge(&mut self, a: BlockIdx, b: BlockIdx) {
        if !self.edges.contains(&(a, b)) {
            self.edges.push((a, b));
        }
    }

    fn finish(self, task_id: String, entry: BlockIdx, exit: BlockIdx) -> TaskProgram {
        let pages = self.blocks.iter().map(|b| b.page).max().unwrap_or(0) + 1;
        TaskProgram::build(task_id, pages, self.blocks, self.edges, entry, exit, self.loops)
            .expect("generated programs are structured and valid")
    }
}

/// Line range covering at least half the page, starting near line 0 so that
/// blocks on different pages overlap.
fn wide_range(rng: &mut ChaCha8Rng, lines: u32) -> [u32; 2] {
    let start = rng.gen_range(0..=(lines / 4));
    let min_len = (lines / 2).max(1);
    let len = rng.gen_range(min_len..=(lines - start));
    [start, start + len - 1]
}

/// Emits the blocks for one page inside a loop body: usually a single
/// block, sometimes an if/else whose arms split the page's lines.
fn page_segment(
    b: &mut Builder,
    rng: &mut ChaCha8Rng,
    page: u32,
    params: &ShapeParams,
    branchy: bool,
) -> (BlockIdx, BlockIdx) {
    let range = wide_range(rng, params.lines_per_page);
    let span = range[1] - range[0] + 1;
    if branchy && span >= 4 && rng.gen_bool(0.35) {
        let mid = range[0] + span / 2;
        let cond = b.block(page, [range[0], range[0]], params.instr_per_line);
        let left = b.block(page, [range[0] + 1, mid], params.instr_per_line * (mid - range[0]));
        let right = b.block(page, [mid + 1, range[1]], params.instr_per_line * (range[1] - mid));
        let join = b.block(page, [range[1], range[1]], 1);
        b.edge(cond, left);
        b.edge(cond, right);
        b.edge(left, join);
        b.edge(right, join);
        (cond, join)
    } else {
        let blk = b.block(page, range, params.instr_per_line * span);
        (blk, blk)
    }
}

fn chain_pages(
    b: &mut Builder,
    rng: &mut ChaCha8Rng,
    pages: impl Iterator<Item = u32>,
    params: &ShapeParams,
    branchy: bool,
    mut tail: BlockIdx,
) -> BlockIdx {
    for page in pages {
        let (head, t) = page_segment(b, rng, page, params, branchy);
        b.edge(tail, head);
        tail = t;
    }
    tail
}

/// Generates a reducible program with exactly `pages` pages.
///
/// Block and line distribution:
/// - entry: page 0, line 0; exit: last page, last line.
/// - `StraightLine`: one block per page, each spanning at least half the
///   page's lines.
/// - `SingleLoop`: a do-while loop (bound `outer_bound`) whose body has one
///   segment per page; each segment is a block or, with probability 0.35,
///   an if/else diamond.
/// - `NestedLoops`: the outer loop (bound `outer_bound`) covers pages
///   `0..ceil(P/2)`, then an inner loop (bound `inner_bound`) covers the
///   remaining pages. With `P = 1` both loops live on page 0.
pub fn synthetic_program(task_id: &str, pages: u32, params: &ShapeParams, seed: u64) -> TaskProgram {
    assert!(pages >= 1, "a program needs at least one page");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder::default();
    let last_line = params.lines_per_page - 1;
    let entry = b.block(0, [0, 0], params.instr_per_line);

    let tail = match params.shape {
        Shape::StraightLine => chain_pages(&mut b, &mut rng, 0..pages, params, false, entry),
        Shape::SingleLoop => {
            let header = b.block(0, [0, 1], params.instr_per_line);
            b.edge(entry, header);
            let latch = chain_pages(&mut b, &mut rng, 0..pages, params, true, header);
            b.edge(latch, header);
            b.loops.push(LoopSpec {
                header,
                bound: params.outer_bound,
                back_edges: vec![(latch, header)],
            });
            latch
        }
        Shape::NestedLoops => {
            let split = pages.div_ceil(2);
            let outer = b.block(0, [0, 1], params.instr_per_line);
            b.edge(entry, outer);
            let pre = chain_pages(&mut b, &mut rng, 0..split, params, true, outer);
            let inner_page = if pages > 1 { split.min(pages - 1) } else { 0 };
            let inner = b.block(inner_page, [0, 0], params.instr_per_line);
            b.edge(pre, inner);
            let inner_pages = if pages > 1 { split..pages } else { 0..1 };
            let inner_latch = chain_pages(&mut b, &mut rng, inner_pages, params, false, inner);
            b.edge(inner_latch, inner);
            b.loops.push(LoopSpec {
                header: inner,
                bound: params.inner_bound,
                back_edges: vec![(inner_latch, inner)],
            });
            let outer_latch = b.block(0, [1, 1], 1);
            b.edge(inner_latch, outer_latch);
            b.edge(outer_latch, outer);
            b.loops.push(LoopSpec {
                header: outer,
                bound: params.outer_bound,
                back_edges: vec![(outer_latch, outer)],
            });
            outer_latch
        }
    };
    let exit = b.block(pages - 1, [last_line, last_line], 1);
    b.edge(tail, exit);
    b.finish(task_id.to_string(), entry, exit)
}

/// Size limits for [`random_small_program`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmallProgramLimits {
    pub max_blocks: usize,
    pub max_bound: u32,
    pub max_pages: u32,
    pub lines_per_page: u32,
}

impl Default for SmallProgramLimits {
    fn default() -> Self {
        SmallProgramLimits {
            max_blocks: 12,
            max_bound: 4,
            max_pages: 4,
            lines_per_page: 4,
        }
    }
}

struct SmallGen<'a> {
    rng: ChaCha8Rng,
    limits: &'a SmallProgramLimits,
    b: Builder,
}

impl SmallGen<'_> {
    fn leaf(&mut self) -> BlockIdx {
        let lines = self.limits.lines_per_page;
        let page = self.rng.gen_range(0..self.limits.max_pages);
        let first = self.rng.gen_range(0..lines);
        let last = self.rng.gen_range(first..lines.min(first + 2));
        let instr = self.rng.gen_range(1..=4);
        self.b.block(page, [first, last], instr)
    }

    fn room(&self, cap: usize, need: usize) -> bool {
        self.b.blocks.len() + need <= cap
    }

    /// Single-entry single-exit region; the builder holds at most `cap`
    /// blocks afterwards. Callers guarantee room for at least one block.
    fn region(&mut self, depth: u32, cap: usize) -> (BlockIdx, BlockIdx) {
        let roll = self.rng.gen_range(0..10);
        if self.room(cap, 3) && depth < 3 && roll < 3 {
            // loop: while (exit from header) or do-while (exit from latch)
            let header = self.leaf();
            let (head, tail) = self.region(depth + 1, cap - 1);
            let bound = self.rng.gen_range(1..=self.limits.max_bound);
            self.b.edge(header, head);
            self.b.edge(tail, header);
            let after = self.leaf();
            if self.rng.gen_bool(0.5) {
                self.b.edge(header, after);
            } else {
                self.b.edge(tail, after);
            }
            if head != tail && self.rng.gen_bool(0.3) {
                self.b.edge(head, after);
            }
            self.b.loops.push(LoopSpec {
                header,
                bound,
                back_edges: vec![(tail, header)],
            });
            (header, after)
        } else if self.room(cap, 3) && roll < 6 {
            let cond = self.leaf();
            let (h1, t1) = self.region(depth, cap - 1);
            let second = self.room(cap, 2) && self.rng.gen_bool(0.7);
            let arm2 = second.then(|| self.region(depth, cap - 1));
            let join = self.leaf();
            self.b.edge(cond, h1);
            self.b.edge(t1, join);
            match arm2 {
                Some((h2, t2)) => {
                    self.b.edge(cond, h2);
                    self.b.edge(t2, join);
                }
                None => self.b.edge(cond, join),
            }
            (cond, join)
        } else if self.room(cap, 2) && roll < 8 {
            let (h1, t1) = self.region(depth, cap - 1);
            let (h2, t2) = self.region(depth, cap);
            self.b.edge(t1, h2);
            (h1, t2)
        } else {
            let b = self.leaf();
            (b, b)
        }
    }
}

/// Random structured program within `limits`: sequences, if/else with an
/// optional empty arm, and loops (while or do-while, sometimes with an early
/// exit from the first body block). Deterministic per seed.
pub fn random_small_program(task_id: &str, seed: u64, limits: &SmallProgramLimits) -> TaskProgram {
    let mut g = SmallGen {
        rng: ChaCha8Rng::seed_from_u64(seed),
        limits,
        b: Builder::default(),
    };
    let entry = g.leaf();
    let (head, tail) = g.region(0, limits.max_blocks.max(3) - 1);
    g.b.edge(entry, head);
    let exit = g.leaf();
    g.b.edge(tail, exit);
    // Compact page numbering so that page_count = 1 + max page.
    let mut used: Vec<u32> = g.b.blocks.iter().map(|b| b.page).collect();
    used.sort_unstable();
    used.dedup();
    for blk in &mut g.b.blocks {
        blk.page = used.binary_search(&blk.page).unwrap() as u32;
    }
    g.b.finish(task_id.to_string(), entry, exit)
}
