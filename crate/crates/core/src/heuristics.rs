//! Page coloring strategies for a task granted `j` colors.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{bail, Code, Error, Result};
use crate::model::Coloring;
use crate::program::TaskProgram;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PageScore {
    pub page: u32,
    pub score: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Heuristic {
    Fair,
    Federated,
    Random(u64),
}

impl Heuristic {
    pub const NAMES: [&'static str; 3] = ["fair", "federated", "random"];

    pub fn name(&self) -> &'static str {
        match self {
            Heuristic::Fair => "fair",
            Heuristic::Federated => "federated",
            Heuristic::Random(_) => "random",
        }
    }

    /// Coloring of `program` restricted to `budget` colors.
    pub fn coloring(&self, program: &TaskProgram, budget: u32) -> Result<Coloring> {
        let pages = program.page_count;
        match *self {
            Heuristic::Fair => fair_coloring(pages, budget),
            Heuristic::Federated => federated_coloring(&page_scores(program), budget),
            Heuristic::Random(seed) => random_coloring(pages, budget, budget_seed(seed, budget)),
        }
    }
}

impl fmt::Display for Heuristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Heuristic {
    type Err = Error;

    /// `fair`, `federated`, `random` or `random:<seed>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fair" => Ok(Heuristic::Fair),
            "federated" => Ok(Heuristic::Federated),
            "random" => Ok(Heuristic::Random(0)),
            other => match other.strip_prefix("random:").map(str::parse::<u64>) {
                Some(Ok(seed)) => Ok(Heuristic::Random(seed)),
                _ => bail!(
                    Code::Malformed,
                    "unknown heuristic '{other}' (expected one of: {})",
                    Heuristic::NAMES.join(", ")
                ),
            },
        }
    }
}

fn budget_seed(seed: u64, budget: u32) -> u64 {
    seed ^ (u64::from(budget)).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn check_budget(pages: u32, budget: u32) -> Result<()> {
    if budget == 0 || budget > pages {
        bail!(Code::BudgetOutOfRange, "budget {budget} outside 1..={pages}");
    }
    Ok(())
}

/// Consecutive groups of `floor(P / j)` pages share a color; group indices
/// wrap modulo `j`.
pub fn fair_coloring(pages: u32, budget: u32) -> Result<Coloring> {
    check_budget(pages, budget)?;
    let group = pages / budget;
    Ok(Coloring((0..pages).map(|p| (p / group) % budget).collect()))
}

/// Per page, the sum over its blocks of `instr * 10^depth`.
pub fn page_scores(program: &TaskProgram) -> Vec<PageScore> {
    let mut scores: Vec<PageScore> = (0..program.page_count)
        .map(|page| PageScore { page, score: 0 })
        .collect();
    for (b, blk) in program.blocks().iter().enumerate() {
        let weight = 10u64.saturating_pow(program.depth_of(b));
        let s = &mut scores[blk.page as usize].score;
        *s = s.saturating_add(u64::from(blk.instr_count).saturating_mul(weight));
    }
    scores
}

/// The `j - 1` best-scored pages get private colors `0..j-1`, the rest
/// share color `j - 1`. Ties go to the lower page index.
pub fn federated_coloring(scores: &[PageScore], budget: u32) -> Result<Coloring> {
    check_budget(scores.len() as u32, budget)?;
    let mut ranked: Vec<&PageScore> = scores.iter().collect();
    ranked.sort_by(|a, b| b.score.cmp(&a.score).then(a.page.cmp(&b.page)));
    let shared = budget - 1;
    let mut colors = vec![shared; scores.len()];
    for (color, ps) in ranked.iter().take(shared as usize).enumerate() {
        colors[ps.page as usize] = color as u32;
    }
    Ok(Coloring(colors))
}

/// Each page independently uniform over `budget` colors.
pub fn random_coloring(pages: u32, budget: u32, seed: u64) -> Result<Coloring> {
    check_budget(pages, budget)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(Coloring((0..pages).map(|_| rng.gen_range(0..budget)).collect()))
}
