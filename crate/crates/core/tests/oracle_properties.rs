//! Properties checked against the brute-force oracles.

use colorsched::allocator::{solve, AllocationProblem, TaskSkeleton};
use colorsched::heuristics::random_coloring;
use colorsched::oracles::{brute_force_allocation, check_classification, edf_simulate, max_path_cycles};
use colorsched::program::load_program;
use colorsched::schedulability::{dbf_feasible, dset, edf_schedulable, hyperperiod};
use colorsched::synthetic::{random_small_program, synthetic_program, Shape, ShapeParams, SmallProgramLimits};
use colorsched::{infinite_cache_wcet, wcet, wcet_table, CacheConfig, Code, Heuristic, SporadicTask, WcetTable};
use proptest::prelude::*;

const PATH_LIMIT: usize = 20_000;

fn small_cache() -> CacheConfig {
    CacheConfig::new(2, 4, 4, 10).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wcet_bounds_every_simulated_path(seed in any::<u64>(), color_seed in any::<u64>(), budget in 1u32..=4) {
        let cache = small_cache();
        let program = random_small_program("p", seed, &SmallProgramLimits::default());
        let budget = budget.min(program.page_count);
        let coloring = random_coloring(program.page_count, budget, color_seed).unwrap();
        let observed = match max_path_cycles(&program, &coloring, &cache, PATH_LIMIT) {
            Err(e) if e.code == Code::OracleScope => return Ok(()),
            other => other.unwrap(),
        };
        prop_assert!(wcet(&program, &coloring, &cache).unwrap() >= observed);
        prop_assert!(check_classification(&program, &coloring, &cache, PATH_LIMIT).unwrap().is_empty());
    }

    #[test]
    fn infinite_cache_is_a_floor(seed in any::<u64>(), pages in 1u32..=8, nested in any::<bool>()) {
        let cache = CacheConfig::default();
        let shape = if nested && pages >= 2 { Shape::NestedLoops } else { Shape::SingleLoop };
        let program = synthetic_program("p", pages, &ShapeParams::new(shape), seed);
        let floor = infinite_cache_wcet(&program, &cache).unwrap();
        for h in [Heuristic::Fair, Heuristic::Federated, Heuristic::Random(seed)] {
            let table = wcet_table(&program, h, &cache, 2).unwrap();
            prop_assert!(table.wcets().iter().all(|&c| c >= floor), "{h}: {:?} vs {floor}", table.wcets());
        }
    }

    #[test]
    fn program_documents_round_trip(seed in any::<u64>()) {
        let program = random_small_program("p", seed, &SmallProgramLimits::default());
        let again = load_program(&program.to_json()).unwrap();
        prop_assert_eq!(again.to_json(), program.to_json());
    }

    #[test]
    fn solver_matches_brute_force(
        rows in prop::collection::vec((prop::sample::select(vec![4u64, 6, 8, 12]), 0u64..=100, prop::collection::vec(1u64..=6, 1..=3)), 1..=4),
        k in 1u32..=8,
    ) {
        let mut tables = Vec::new();
        let mut tasks = Vec::new();
        for (i, (period, dpct, cuts)) in rows.iter().enumerate() {
            let id = format!("t{i}");
            let deadline = (period / 2 + (period - period / 2) * dpct / 100).max(1);
            let mut c = *period;
            let wcets: Vec<u64> = cuts.iter().map(|cut| { c = c.saturating_sub(*cut).max(1); c }).collect();
            tables.push(WcetTable::from_wcets(&id, &wcets).unwrap());
            tasks.push(TaskSkeleton::new(id, deadline, *period));
        }
        let cache = CacheConfig::new(1, k, 4, 10).unwrap();
        let problem = AllocationProblem::new(tables.clone(), tasks.clone(), cache).unwrap();
        let expected = brute_force_allocation(&tables, &tasks, k, None).unwrap();
        let got = solve(&problem).unwrap();
        prop_assert_eq!(got.allocation().map(|a| a.colors.clone()), expected);
    }

    #[test]
    fn demand_test_agrees_with_simulation(
        rows in prop::collection::vec((1u64..=12, 0u64..=100, 0u64..=100), 1..=4),
    ) {
        let tasks: Vec<SporadicTask> = rows
            .iter()
            .enumerate()
            .map(|(i, &(t, dpct, cpct))| {
                let d = (t * dpct / 100).max(1);
                let c = (d * cpct / 100).max(1);
                SporadicTask::new(format!("t{i}"), c, d, t, 0)
            })
            .collect();
        let h = hyperperiod(&tasks).unwrap();
        let by_sim = edf_simulate(&tasks, h).is_none();
        prop_assert_eq!(dbf_feasible(&tasks, &dset(&tasks, h).unwrap()).feasible(), by_sim);
        prop_assert_eq!(edf_schedulable(&tasks), by_sim);
    }
}
