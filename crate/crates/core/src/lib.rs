//! Cache-color aware WCET analysis and EDF color allocation.

pub mod allocator;
pub mod cache;
pub mod error;
pub mod experiment;
pub mod heuristics;
pub mod model;
pub mod oracles;
pub mod plot;
pub mod program;
pub mod schedulability;
pub mod synthetic;
pub mod tables;
pub mod wcet;

pub use allocator::{export_lp, random_allocation, solve, Allocation, AllocationProblem, Outcome, TaskSkeleton};
pub use error::{Code, Error, Result};
pub use heuristics::Heuristic;
pub use model::{CacheConfig, Coloring, SporadicTask, TaskSet, WcetEntry, WcetTable};
pub use program::{load_program, TaskProgram};
pub use wcet::{infinite_cache_wcet, wcet, wcet_table};
