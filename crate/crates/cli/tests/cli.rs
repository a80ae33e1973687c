use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use freshcast::pipeline::{list_runs, RunMeta};
use freshcast::pricing::Plan;

const SMALL: &str = r#"{
  "forecast": {"train": {"hidden_dim": 4, "epochs": 20}},
  "pso": {"max_iters": 40}
}"#;

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("cfg.json"), SMALL).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_freshcast"))
            .current_dir(self.dir.path())
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn runs(&self) -> Vec<RunMeta> {
        list_runs(self.path("runs")).unwrap()
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.clone(), std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn synth_writes_a_deterministic_panel() {
    let sb = Sandbox::new();
    let args = [
        "--seed",
        "7",
        "synth",
        "--categories",
        "2",
        "--days",
        "28",
        "--out",
    ];
    let stdout = sb.ok(&[&args[..], &["a.csv"]].concat());
    assert!(stdout.contains("56 records"));
    sb.ok(&[&args[..], &["b.csv"]].concat());
    let a = std::fs::read_to_string(sb.path("a.csv")).unwrap();
    assert_eq!(a.lines().count(), 57);
    assert_eq!(a.as_bytes(), std::fs::read(sb.path("b.csv")).unwrap());
}

#[test]
fn usage_errors_exit_1_and_data_errors_exit_2() {
    let sb = Sandbox::new();
    let short = sb.run(&["synth", "--days", "3", "--out", "d.csv"]);
    assert_eq!(code(&short), 1);
    assert!(!sb.path("d.csv").exists());
    assert_eq!(code(&sb.run(&["frobnicate"])), 1);
    assert_eq!(code(&sb.run(&["report", "--format", "yaml"])), 1);

    let unwritable = sb.run(&["synth", "--out", "missing/dir/d.csv"]);
    assert_eq!(code(&unwritable), 2);
    assert!(stderr(&unwritable).contains("missing/dir/d.csv"));

    let help = sb.run(&["--help"]);
    assert_eq!(code(&help), 0);
    assert!(String::from_utf8_lossy(&help.stdout).contains("flag > config file > built-in default"));
}

#[test]
fn run_writes_a_plan_and_reports_it() {
    let sb = Sandbox::new();
    let stdout = sb.ok(&["--config", "cfg.json", "run"]);
    assert!(stdout.contains("projected profit"));
    let runs = sb.runs();
    assert_eq!(runs.len(), 1);
    let run_dir = sb.path("runs").join(&runs[0].run_id);
    let plan: Plan =
        serde_json::from_slice(&std::fs::read(run_dir.join("plan.json")).unwrap()).unwrap();
    assert!(plan.feasible);

    let before = snapshot(&sb.path("runs"));

    let table = sb.ok(&["report"]);
    let lines: Vec<&str> = table.lines().collect();
    let header: Vec<&str> = lines[0].split_whitespace().collect();
    assert_eq!(header.len(), 1 + 2 * 7, "category plus `day N` x 7");
    let rows: Vec<Vec<&str>> = lines[1..4]
        .iter()
        .map(|l| l.split_whitespace().collect())
        .collect();
    assert_eq!(rows[0][0], plan.layout.categories[0]);
    assert_eq!(rows[1][0], plan.layout.categories[1]);
    assert_eq!(rows[2][0], "total");
    assert!(rows.iter().all(|r| r.len() == 8));
    let total: f64 = rows[2][1..].iter().map(|v| v.parse::<f64>().unwrap()).sum();
    assert!((total - plan.projected_profit).abs() < 0.05);

    let json = sb.ok(&["report", "--run", &runs[0].run_id, "--format", "json"]);
    let round: Plan = serde_json::from_str(&json).unwrap();
    assert_eq!(round, plan);

    let csv = sb.ok(&["report", "--format", "csv"]);
    assert_eq!(csv.lines().next(), Some("category,day,price,qty,profit"));
    assert_eq!(csv.lines().count(), 1 + 14);

    let history = sb.ok(&["report", "--history", "--format", "csv"]);
    assert_eq!(history.lines().next(), Some("iteration,gbest_fit"));
    assert_eq!(history.lines().count(), 1 + 40, "one row per iteration");
    let hj: serde_json::Value =
        serde_json::from_str(&sb.ok(&["report", "--history", "--format", "json"])).unwrap();
    assert_eq!(hj["schema_version"], 1);
    assert_eq!(hj["history"].as_array().unwrap().len(), 40);

    let corr = sb.ok(&["report", "--correlation"]);
    assert_eq!(corr.lines().count(), 1 + 6);

    assert_eq!(
        snapshot(&sb.path("runs")),
        before,
        "report mutated the run directory"
    );
}

#[test]
fn stages_run_one_at_a_time() {
    let sb = Sandbox::new();
    let stdout = sb.ok(&["--config", "cfg.json", "train"]);
    let id = stdout.split(':').next().unwrap().to_string();

    let early = sb.run(&["optimize", "--run", &id]);
    assert_eq!(code(&early), 2);
    let msg = stderr(&early);
    assert!(
        msg.contains("optimize") && msg.contains("forecast/"),
        "{msg}"
    );

    sb.ok(&["forecast", "--run", &id]);
    let stdout = sb.ok(&["optimize"]);
    assert!(stdout.starts_with(&id));
    assert!(sb.path("runs").join(&id).join("plan.json").exists());
}

#[test]
fn feedback_creates_a_linked_run() {
    let sb = Sandbox::new();
    sb.ok(&["--config", "cfg.json", "run"]);
    let base = sb.runs()[0].clone();
    // a longer synthetic panel supplies the week after the history ends
    sb.ok(&["synth", "--days", "35", "--out", "long.csv"]);
    let long = std::fs::read_to_string(sb.path("long.csv")).unwrap();
    let last = base.data_span.1.to_string();
    let mut new = String::from(long.lines().next().unwrap());
    new.push('\n');
    for line in long.lines().skip(1).filter(|l| l[..10] > *last) {
        new.push_str(line);
        new.push('\n');
    }
    std::fs::write(sb.path("new.csv"), new).unwrap();

    let stdout = sb.ok(&["feedback", "--new", "new.csv"]);
    assert!(stdout.contains(&format!("parent {}", base.run_id)));
    let runs = sb.runs();
    assert_eq!(runs.len(), 2);
    let child = runs.iter().find(|m| m.run_id != base.run_id).unwrap();
    assert_eq!(child.parent.as_deref(), Some(base.run_id.as_str()));
    assert_eq!(
        child.data_span.1,
        base.data_span.1 + chrono::Duration::days(7)
    );
}

#[test]
fn unknown_runs_exit_2() {
    let sb = Sandbox::new();
    let out = sb.run(&["report", "--run", "run-000000000000"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("run-000000000000"));
    // no runs at all
    assert_eq!(code(&sb.run(&["report"])), 2);
}

#[test]
fn seed_flag_overrides_the_config() {
    let sb = Sandbox::new();
    sb.ok(&["--config", "cfg.json", "train"]);
    sb.ok(&["--config", "cfg.json", "--seed", "5", "train"]);
    let runs = sb.runs();
    assert_eq!(runs.len(), 2);
    let configs: Vec<serde_json::Value> = runs
        .iter()
        .map(|m| {
            let p = sb.path("runs").join(&m.run_id).join("config.json");
            serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
        })
        .collect();
    let seeds: Vec<_> = configs
        .iter()
        .map(|c| c["pso"]["seed"].as_u64().unwrap())
        .collect();
    assert!(seeds.contains(&0) && seeds.contains(&5));
    // max_iters comes from the config file, not the default
    assert!(configs.iter().all(|c| c["pso"]["max_iters"] == 40));
}
