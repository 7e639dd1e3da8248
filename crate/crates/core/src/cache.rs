//! Instruction-cache access classification under a page coloring.
//!
//! Two analyses run per (program, coloring):
//!
//! * a must analysis over the LRU abstract state (ages are upper bounds,
//!   join is intersection with maximal age) proves always-hit accesses;
//! * a scoped persistence analysis marks a memory line as possibly evicted
//!   inside a loop as soon as more than `ways` distinct lines of that loop
//!   map to its cache set. A line that is never flagged in a loop misses at
//!   most once per entry of that loop.
//!
//! The initial cache state is empty: nothing is assumed resident at task
//! start.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use crate::error::{bail, Code, Result};
use crate::model::{CacheConfig, Coloring};
use crate::program::{BlockIdx, LoopIdx, TaskProgram};

/// A cache set: the page color selects the cache page, the line index the
/// set within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheSetRef {
    pub color: u32,
    pub line: u32,
}

/// A memory line of the task: `(page, line)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MemLine {
    pub page: u32,
    pub line: u32,
}

pub fn set_of(page: u32, line: u32, coloring: &Coloring, _cache: &CacheConfig) -> CacheSetRef {
    CacheSetRef {
        color: coloring.0[page as usize],
        line,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessClass {
    AlwaysHit,
    /// At most one miss per entry of the loop.
    FirstMiss(LoopIdx),
    NotClassified,
}

impl AccessClass {
    pub fn label(self) -> &'static str {
        match self {
            AccessClass::AlwaysHit => "AH",
            AccessClass::FirstMiss(_) => "FM",
            AccessClass::NotClassified => "NC",
        }
    }
}

impl fmt::Display for AccessClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AccessClass::FirstMiss(l) => write!(f, "FM({l})"),
            other => f.write_str(other.label()),
        }
    }
}

/// Per-block access classes, one per line in the block's range order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classification {
    classes: Vec<Vec<AccessClass>>,
}

impl Classification {
    pub fn get(&self, block: BlockIdx, line: u32, program: &TaskProgram) -> Option<AccessClass> {
        let first = program.block(block).lines[0];
        line.checked_sub(first)
            .and_then(|off| self.classes.get(block)?.get(off as usize).copied())
    }

    pub fn block(&self, block: BlockIdx) -> &[AccessClass] {
        &self.classes[block]
    }

    /// `(block id, line) -> class` in block order.
    pub fn to_map(&self, program: &TaskProgram) -> BTreeMap<(String, u32), AccessClass> {
        let mut out = BTreeMap::new();
        for (b, classes) in self.classes.iter().enumerate() {
            let blk = program.block(b);
            for (line, class) in blk.line_range().zip(classes) {
                out.insert((blk.id.clone(), line), *class);
            }
        }
        out
    }

    pub fn count(&self, pred: impl Fn(AccessClass) -> bool) -> usize {
        self.classes.iter().flatten().filter(|c| pred(**c)).count()
    }

    /// `block,line,class,scope` rows; scope is the loop header id for FM.
    pub fn to_csv(&self, program: &TaskProgram) -> String {
        let mut out = String::from("block,line,class,scope\n");
        for (b, classes) in self.classes.iter().enumerate() {
            let blk = program.block(b);
            for (line, class) in blk.line_range().zip(classes) {
                let scope = match class {
                    AccessClass::FirstMiss(l) => program.block(program.loops()[*l].header).id.as_str(),
                    _ => "",
                };
                out.push_str(&format!("{},{},{},{}\n", blk.id, line, class.label(), scope));
            }
        }
        out
    }
}

/// Dense numbering of the sets and memory lines a program touches.
struct AccessMap {
    /// Per block, per line: (set slot, memory-line slot).
    slots: Vec<Vec<(usize, usize)>>,
    sets: usize,
}

impl AccessMap {
    fn new(program: &TaskProgram, coloring: &Coloring, cache: &CacheConfig) -> Self {
        let mut set_ids: HashMap<CacheSetRef, usize> = HashMap::new();
        let mut line_ids: HashMap<MemLine, usize> = HashMap::new();
        let slots = program
            .blocks()
            .iter()
            .map(|blk| {
                blk.line_range()
                    .map(|line| {
                        let set = set_of(blk.page, line, coloring, cache);
                        let n = set_ids.len();
                        let s = *set_ids.entry(set).or_insert(n);
                        let n = line_ids.len();
                        let m = *line_ids.entry(MemLine { page: blk.page, line }).or_insert(n);
                        (s, m)
                    })
                    .collect()
            })
            .collect();
        AccessMap {
            slots,
            sets: set_ids.len(),
        }
    }
}

/// Abstract must-cache: per set, resident lines with an upper bound on
/// their LRU age. Entries are kept sorted by line slot.
#[derive(Debug, Clone, PartialEq, Eq)]
struct MustState {
    sets: Vec<Vec<(usize, u32)>>,
}

impl MustState {
    fn empty(sets: usize) -> Self {
        MustState {
            sets: vec![Vec::new(); sets],
        }
    }

    fn contains(&self, set: usize, line: usize) -> bool {
        self.sets[set].iter().any(|&(m, _)| m == line)
    }

    fn access(&mut self, set: usize, line: usize, ways: u32) {
        let entries = &mut self.sets[set];
        let old_age = entries.iter().find(|&&(m, _)| m == line).map(|&(_, a)| a);
        let limit = old_age.unwrap_or(ways);
        for e in entries.iter_mut() {
            if e.0 != line && e.1 < limit {
                e.1 += 1;
            }
        }
        entries.retain(|&(m, a)| m != line && a < ways);
        let pos = entries.partition_point(|&(m, _)| m < line);
        entries.insert(pos, (line, 0));
    }

    fn join(&mut self, other: &MustState) -> bool {
        let mut changed = false;
        for (mine, theirs) in self.sets.iter_mut().zip(&other.sets) {
            let before = mine.len();
            mine.retain_mut(|(m, a)| match theirs.iter().find(|(o, _)| o == m) {
                Some(&(_, b)) => {
                    if b > *a {
                        *a = b;
                        changed = true;
                    }
                    true
                }
                None => false,
            });
            changed |= mine.len() != before;
        }
        changed
    }
}

fn reverse_postorder(program: &TaskProgram) -> Vec<BlockIdx> {
    let n = program.blocks().len();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![(program.entry(), 0usize)];
    seen[program.entry()] = true;
    while let Some(&mut (b, ref mut i)) = stack.last_mut() {
        if let Some(&s) = program.succs(b).get(*i) {
            *i += 1;
            if !seen[s] {
                seen[s] = true;
                stack.push((s, 0));
            }
        } else {
            order.push(b);
            stack.pop();
        }
    }
    order.reverse();
    order
}

fn must_fixpoint(program: &TaskProgram, map: &AccessMap, ways: u32) -> Vec<Option<MustState>> {
    let n = program.blocks().len();
    let order = reverse_postorder(program);
    let mut input: Vec<Option<MustState>> = vec![None; n];
    input[program.entry()] = Some(MustState::empty(map.sets));
    let mut dirty = vec![false; n];
    dirty[program.entry()] = true;
    loop {
        let mut progress = false;
        for &b in &order {
            if !dirty[b] {
                continue;
            }
            dirty[b] = false;
            let Some(mut state) = input[b].clone() else { continue };
            for &(s, m) in &map.slots[b] {
                state.access(s, m, ways);
            }
            for &succ in program.succs(b) {
                let changed = match &mut input[succ] {
                    Some(existing) => existing.join(&state),
                    slot @ None => {
                        *slot = Some(state.clone());
                        true
                    }
                };
                if changed {
                    dirty[succ] = true;
                    progress = true;
                }
            }
        }
        if !progress {
            break;
        }
    }
    input
}

/// Classifies every (block, line) access of `program` under `coloring`.
pub fn classify(program: &TaskProgram, coloring: &Coloring, cache: &CacheConfig) -> Result<Classification> {
    cache.validate()?;
    program.check_geometry(cache)?;
    if coloring.pages() != program.page_count as usize {
        bail!(
            Code::IncompleteColoring,
            "coloring covers {} pages, program has {}",
            coloring.pages(),
            program.page_count
        );
    }
    let map = AccessMap::new(program, coloring, cache);
    let must_in = must_fixpoint(program, &map, cache.ways);

    // Distinct memory lines per (loop, set); a line stays persistent in a
    // loop iff its set holds at most `ways` lines of that loop.
    let mut footprint: Vec<HashMap<usize, Vec<usize>>> = vec![HashMap::new(); program.loops().len()];
    for (li, lp) in program.loops().iter().enumerate() {
        for &b in &lp.body {
            for &(s, m) in &map.slots[b] {
                let lines = footprint[li].entry(s).or_default();
                if !lines.contains(&m) {
                    lines.push(m);
                }
            }
        }
    }
    let persistent = |li: LoopIdx, set: usize| footprint[li][&set].len() <= cache.ways as usize;

    let classes = (0..program.blocks().len())
        .map(|b| {
            let mut state = must_in[b].clone().expect("every block is reachable");
            let enclosing = program.enclosing_loops(b);
            map.slots[b]
                .iter()
                .map(|&(s, m)| {
                    let class = if state.contains(s, m) {
                        AccessClass::AlwaysHit
                    } else {
                        // outermost loop in which the line survives
                        enclosing
                            .iter()
                            .rev()
                            .find(|&&l| persistent(l, s))
                            .map_or(AccessClass::NotClassified, |&l| AccessClass::FirstMiss(l))
                    };
                    state.access(s, m, cache.ways);
                    class
                })
                .collect()
        })
        .collect();
    Ok(Classification { classes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::load_program;

    fn cache(ways: u32) -> CacheConfig {
        CacheConfig {
            ways,
            cache_pages: 32,
            lines_per_page: 16,
            miss_penalty: 10,
        }
    }

    #[test]
    fn set_identity() {
        let same = Coloring(vec![4, 4]);
        let c = cache(2);
        assert_eq!(set_of(0, 3, &same, &c), set_of(1, 3, &same, &c));
        let split = Coloring(vec![4, 5]);
        assert_ne!(set_of(0, 3, &split, &c), set_of(1, 3, &split, &c));
        let six = Coloring(vec![0, 0, 0, 0, 0, 2]);
        assert_eq!(set_of(5, 0, &six, &c), CacheSetRef { color: 2, line: 0 });
    }

    #[test]
    fn straight_line_reuse_hits() {
        let p = load_program(
            r#"{"v":1,"task_id":"t","page_count":1,"blocks":[
                {"id":"A","page":0,"lines":[2,2],"instr":1},
                {"id":"B","page":0,"lines":[2,2],"instr":1}],
                "edges":[["A","B"]],"entry":"A","exit":"B"}"#,
        )
        .unwrap();
        let cls = classify(&p, &Coloring(vec![0]), &cache(2)).unwrap();
        assert_eq!(cls.get(0, 2, &p), Some(AccessClass::NotClassified));
        assert_eq!(cls.get(1, 2, &p), Some(AccessClass::AlwaysHit));
    }

    fn loop_program(pages: u32) -> crate::program::TaskProgram {
        // A (page P) -> B.. body blocks each on their own page, line 0,
        // chained, last one loops back to the first; bound 3.
        let mut blocks = vec![format!(r#"{{"id":"A","page":{pages},"lines":[1,1],"instr":1}}"#)];
        let mut edges = vec![r#"["A","L0"]"#.to_string()];
        for p in 0..pages {
            blocks.push(format!(r#"{{"id":"L{p}","page":{p},"lines":[0,0],"instr":1}}"#));
            if p > 0 {
                edges.push(format!(r#"["L{}","L{p}"]"#, p - 1));
            }
        }
        let last = pages - 1;
        edges.push(format!(r#"["L{last}","L0"]"#));
        edges.push(format!(r#"["L{last}","D"]"#));
        blocks.push(format!(r#"{{"id":"D","page":{pages},"lines":[2,2],"instr":1}}"#));
        let text = format!(
            r#"{{"v":1,"task_id":"t","page_count":{},"blocks":[{}],"edges":[{}],"entry":"A","exit":"D",
               "loops":[{{"header":"L0","bound":3,"back_edges":[["L{last}","L0"]]}}]}}"#,
            pages + 1,
            blocks.join(","),
            edges.join(",")
        );
        load_program(&text).unwrap()
    }

    #[test]
    fn two_lines_in_two_way_set_are_first_miss() {
        let p = loop_program(2);
        let cls = classify(&p, &Coloring(vec![0, 0, 1]), &cache(2)).unwrap();
        assert_eq!(cls.get(1, 0, &p), Some(AccessClass::FirstMiss(0)));
        assert_eq!(cls.get(2, 0, &p), Some(AccessClass::FirstMiss(0)));
    }

    #[test]
    fn three_lines_in_two_way_set_are_not_classified() {
        let p = loop_program(3);
        let cls = classify(&p, &Coloring(vec![0, 0, 0, 1]), &cache(2)).unwrap();
        for b in 1..=3 {
            assert_eq!(cls.get(b, 0, &p), Some(AccessClass::NotClassified));
        }
        // Separate colors make all of them persistent.
        let iso = classify(&p, &Coloring(vec![0, 1, 2, 3]), &cache(2)).unwrap();
        for b in 1..=3 {
            assert_eq!(iso.get(b, 0, &p), Some(AccessClass::FirstMiss(0)));
        }
    }

    #[test]
    fn incomplete_coloring_rejected() {
        let p = loop_program(2);
        let err = classify(&p, &Coloring(vec![0]), &cache(2)).unwrap_err();
        assert_eq!(err.code, Code::IncompleteColoring);
    }

    #[test]
    fn must_join_keeps_max_age() {
        let mut a = MustState::empty(1);
        a.access(0, 1, 2);
        a.access(0, 2, 2);
        let mut b = MustState::empty(1);
        b.access(0, 2, 2);
        b.access(0, 1, 2);
        assert!(a.join(&b));
        assert_eq!(a.sets[0], vec![(1, 1), (2, 1)]);
        let mut c = MustState::empty(1);
        c.access(0, 3, 2);
        assert!(a.join(&c));
        assert!(a.sets[0].is_empty());
    }

    #[test]
    fn csv_dump_lists_every_access() {
        let p = loop_program(2);
        let cls = classify(&p, &Coloring(vec![0, 0, 1]), &cache(2)).unwrap();
        let csv = cls.to_csv(&p);
        assert_eq!(csv.lines().count(), 1 + p.line_count());
        assert!(csv.contains("L1,0,FM,L0"));
    }
}
