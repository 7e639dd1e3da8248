use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use colorsched::synthetic::{synthetic_program, Shape, ShapeParams};
use colorsched::CacheConfig;
use tempfile::TempDir;

fn colorsched(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_colorsched"))
        .args(args)
        .env_remove("COLORSCHED_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Fixture {
            dir: tempfile::tempdir().unwrap(),
        };
        f.put("cache.json", &CacheConfig::default().to_json());
        let prog = synthetic_program("loop8", 8, &ShapeParams::new(Shape::NestedLoops), 3);
        f.put("loop8.json", &prog.to_json());
        let small = synthetic_program("tiny", 2, &ShapeParams::new(Shape::SingleLoop), 4);
        f.put("tiny.json", &small.to_json());
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn put(&self, name: &str, text: &str) -> PathBuf {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).unwrap();
        }
        fs::write(&path, text).unwrap();
        path
    }

    fn read(&self, name: &str) -> String {
        fs::read_to_string(self.path(name)).unwrap()
    }
}

#[test]
fn wcet_table_writes_one_row_per_budget() {
    let f = Fixture::new();
    let out = f.path("t.csv");
    let o = colorsched(&[
        "wcet-table",
        "--program",
        p(&f.path("loop8.json")),
        "--cache",
        p(&f.path("cache.json")),
        "--heuristic",
        "fair",
        "--n-tasks",
        "2",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = f.read("t.csv");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "task,heuristic,colors,wcet_cycles");
    // 8 pages, 16 colors shared by 2 tasks: s_max = 8.
    assert_eq!(lines.len(), 1 + 8);
    assert!(lines[1].starts_with("loop8,fair,1,"));
    let wcets: Vec<u64> = lines[1..]
        .iter()
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(wcets.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn wcet_table_several_heuristics_and_dumps() {
    let f = Fixture::new();
    let o = colorsched(&[
        "wcet-table",
        "--program",
        p(&f.path("loop8.json")),
        "--cache",
        p(&f.path("cache.json")),
        "--heuristic",
        "fair,federated",
        "--heuristic",
        "random:9",
        "--n-tasks",
        "4",
        "--out",
        p(&f.path("t.csv")),
        "--dump-colorings",
        p(&f.path("colorings.csv")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = f.read("t.csv");
    for h in ["fair", "federated", "random"] {
        // s_max = min(8 pages, 32 cache pages - 3) = 8.
        assert_eq!(csv.lines().filter(|l| l.split(',').nth(1) == Some(h)).count(), 8, "{h}");
    }
    let colorings = f.read("colorings.csv");
    assert!(colorings.starts_with("task,heuristic,colors,page,color\n"));
    assert_eq!(colorings.lines().count(), 1 + 3 * 8 * 8);

    let o = colorsched(&[
        "wcet-table",
        "--program",
        p(&f.path("loop8.json")),
        "--cache",
        p(&f.path("cache.json")),
        "--heuristic",
        "fair",
        "--n-tasks",
        "4",
        "--out",
        p(&f.path("t.csv")),
        "--dump-classes",
        p(&f.path("classes.csv")),
        "--dump-colors",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let classes = f.read("classes.csv");
    assert!(classes.starts_with("block,line,class,scope\n"));
    assert!(classes.lines().count() > 8);
}

#[test]
fn wcet_table_input_errors_exit_2() {
    let f = Fixture::new();
    let base = |heuristic: &str, program: &Path| {
        colorsched(&[
            "wcet-table",
            "--program",
            p(program),
            "--cache",
            p(&f.path("cache.json")),
            "--heuristic",
            heuristic,
            "--n-tasks",
            "1",
            "--out",
            p(&f.path("t.csv")),
        ])
    };
    let o = base("greedy", &f.path("loop8.json"));
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for name in ["fair", "federated", "random"] {
        assert!(err.contains(name), "{err}");
    }
    let o = base("fair", &f.path("missing.json"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.json"));
    let bad = f.put("bad.json", "{\"v\":1}");
    assert_eq!(base("fair", &bad).status.code(), Some(2));
    assert!(!f.path("t.csv").exists());
}

fn write_allocation_inputs(f: &Fixture, deadline: u64) {
    f.put(
        "tables/a.csv",
        "task,heuristic,colors,wcet_cycles\na,fair,1,5\na,fair,2,3\n",
    );
    f.put(
        "tables/b.csv",
        "task,heuristic,colors,wcet_cycles\nb,fair,1,4\nb,fair,2,2\n",
    );
    f.put("tables/notes.txt", "ignored");
    f.put(
        "taskset.json",
        &format!(
            r#"{{"v":1,"tasks":[{{"id":"a","deadline":{deadline},"period":10}},{{"id":"b","deadline":{deadline},"period":10}}]}}"#
        ),
    );
}

fn allocate(f: &Fixture, extra: &[&str]) -> Output {
    let mut args = vec![
        "allocate".to_string(),
        "--taskset".into(),
        p(&f.path("taskset.json")).into(),
        "--tables".into(),
        p(&f.path("tables")).into(),
        "--cache".into(),
        p(&f.path("cache.json")).into(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    colorsched(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn allocate_feasible_prints_json() {
    let f = Fixture::new();
    write_allocation_inputs(&f, 10);
    let o = allocate(&f, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["feasible"], true);
    assert_eq!(v["total_colors"], 2);
    assert_eq!(v["colors"]["a"], 1);
    assert_eq!(v["colors"]["b"], 1);
}

#[test]
fn allocate_needs_more_colors_when_deadline_tightens() {
    let f = Fixture::new();
    // Demand at t = 7 is C_a(1) + C_b(1) = 9 with one color each; one
    // extra color for either task brings it to 7.
    write_allocation_inputs(&f, 7);
    let o = allocate(&f, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["total_colors"], 3);
}

#[test]
fn allocate_infeasible_exits_1_and_still_exports_lp() {
    let f = Fixture::new();
    write_allocation_inputs(&f, 2);
    let lp = f.path("model.lp");
    let o = allocate(&f, &["--export-lp", p(&lp)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["feasible"], false);
    assert!(v["total_colors"].is_null());
    let text = f.read("model.lp");
    assert!(text.contains("Minimize"));
    assert!(text.contains("Binary"));
    assert!(text.trim_end().ends_with("End"));
}

#[test]
fn allocate_input_errors_exit_2() {
    let f = Fixture::new();
    write_allocation_inputs(&f, 10);
    f.put(
        "taskset.json",
        r#"{"v":1,"tasks":[{"id":"zzz","deadline":10,"period":10}]}"#,
    );
    assert_eq!(allocate(&f, &[]).status.code(), Some(2));
    write_allocation_inputs(&f, 10);
    f.put(
        "tables/a.csv",
        "task,heuristic,colors,wcet_cycles\na,fair,1,5\na,fair,2,9\n",
    );
    assert_eq!(allocate(&f, &[]).status.code(), Some(2));
    write_allocation_inputs(&f, 10);
    f.put("tables/c.csv", "task,heuristic,colors,wcet_cycles\na,random,1,5\n");
    let o = allocate(&f, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--heuristic"));
    assert_eq!(allocate(&f, &["--heuristic", "fair"]).status.code(), Some(0));
}

fn sweep_config(f: &Fixture) -> PathBuf {
    f.put(
        "sweep.json",
        r#"{"v":1,
            "programs":["loop8.json","tiny.json",{"synthetic":{"task_id":"s","pages":3,"shape":"single_loop","seed":5}}],
            "u_grid":{"min":0.3,"max":1.2,"step":0.3},
            "samples":12,
            "deadline_mode":"constrained",
            "master_seed":7}"#,
    )
}

fn sweep(config: &Path, out: &Path, jobs: &str, seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_colorsched"));
    cmd.args(["sweep", "--config", p(config), "--out", p(out), "--jobs", jobs]);
    match seed {
        Some(s) => cmd.env("COLORSCHED_SEED", s),
        None => cmd.env_remove("COLORSCHED_SEED"),
    };
    cmd.output().unwrap()
}

#[test]
fn sweep_is_deterministic_across_jobs() {
    let f = Fixture::new();
    let config = sweep_config(&f);
    let runs: Vec<String> = ["1", "4", "1"]
        .iter()
        .enumerate()
        .map(|(i, jobs)| {
            let out = f.path(&format!("s{i}.csv"));
            let o = sweep(&config, &out, jobs, None);
            assert!(o.status.success(), "{}", stderr(&o));
            fs::read_to_string(out).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
    assert!(runs[0].starts_with("utilization,method,schedulable_pct,avg_colors_used\n"));
    assert_eq!(runs[0].lines().count(), 1 + 4 * 5);
}

#[test]
fn sweep_seed_from_environment() {
    let f = Fixture::new();
    let config = sweep_config(&f);
    let read = |name: &str, seed: Option<&str>| {
        let out = f.path(name);
        let o = sweep(&config, &out, "2", seed);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read_to_string(out).unwrap()
    };
    let base = read("a.csv", None);
    let same = read("b.csv", Some("7"));
    let other = read("c.csv", Some("8"));
    assert_eq!(base, same);
    assert_ne!(base, other);
    let o = sweep(&config, &f.path("d.csv"), "2", Some("seven"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_config_errors_exit_2() {
    let f = Fixture::new();
    let bad = f.put("bad.json", r#"{"v":1,"samples":3,"colour":1}"#);
    assert_eq!(sweep(&bad, &f.path("o.csv"), "1", None).status.code(), Some(2));
    let missing = f.put("missing.json", r#"{"v":1,"programs":["nope.json"]}"#);
    let o = sweep(&missing, &f.path("o.csv"), "1", None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.json"));
}

const SWEEP_CSV: &str = "utilization,method,schedulable_pct,avg_colors_used
0.90,ilp_fair,100.00,6.000
0.90,ilp_federated,100.00,7.500
0.90,ilp_random,100.00,7.000
0.90,random_alloc,80.00,
0.90,infinite_cache,100.00,
1.20,ilp_fair,60.00,11.250
1.20,ilp_federated,50.00,20.000
1.20,ilp_random,40.00,12.000
1.20,random_alloc,10.00,
1.20,infinite_cache,90.00,
";

#[test]
fn plot_draws_one_polyline_per_method() {
    let f = Fixture::new();
    let csv = f.put("s.csv", SWEEP_CSV);
    let out = f.path("s.svg");
    let o = colorsched(&["plot", "--csv", p(&csv), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = f.read("s.svg");
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("<polyline").count(), 5);
    for m in [
        "ilp_fair",
        "ilp_federated",
        "ilp_random",
        "random_alloc",
        "infinite_cache",
    ] {
        assert!(svg.contains(&format!(">{m}</text>")), "{m}");
    }
}

#[test]
fn plot_colors_axis_tops_out_at_k() {
    let f = Fixture::new();
    let csv = f.put("s.csv", SWEEP_CSV);
    let small = CacheConfig {
        cache_pages: 16,
        ..CacheConfig::default()
    };
    let cache = f.put("small.json", &small.to_json());
    let o = colorsched(&[
        "plot",
        "--csv",
        p(&csv),
        "--out",
        p(&f.path("c.svg")),
        "--metric",
        "colors",
        "--cache",
        p(&cache),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = f.read("c.svg");
    assert!(svg.contains(">8</text>"), "K = 8 labels the top tick");
    assert!(!svg.contains(">20</text>"));
}

#[test]
fn plot_matches_golden_file() {
    let f = Fixture::new();
    let csv = f.put("s.csv", SWEEP_CSV);
    let o = colorsched(&["plot", "--csv", p(&csv), "--out", p(&f.path("g.svg"))]);
    assert!(o.status.success());
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/plot.svg");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(golden.parent().unwrap()).unwrap();
        fs::write(&golden, f.read("g.svg")).unwrap();
    }
    assert_eq!(f.read("g.svg"), fs::read_to_string(golden).unwrap());
}

#[test]
fn plot_rejects_empty_and_malformed_csv() {
    let f = Fixture::new();
    for (name, body) in [
        ("empty.csv", "utilization,method,schedulable_pct,avg_colors_used\n"),
        ("blank.csv", ""),
        (
            "bad.csv",
            "utilization,method,schedulable_pct,avg_colors_used\n0.9,ilp_fair,x,\n",
        ),
    ] {
        let csv = f.put(name, body);
        let o = colorsched(&["plot", "--csv", p(&csv), "--out", p(&f.path("x.svg"))]);
        assert_eq!(o.status.code(), Some(2), "{name}");
    }
    assert!(!f.path("x.svg").exists());
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(colorsched(&[]).status.code(), Some(2));
    assert_eq!(colorsched(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(colorsched(&["sweep", "--out", "x.csv"]).status.code(), Some(2));
}
