use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ebsp_core::read_trace;
use ebsp_core::report::{
    read_csv, BenchRow, LossRow, SearchRow, SummaryRow, SuperstepRow, TOTAL_ROW,
};

fn ebsp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ebsp"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> &str {
    std::str::from_utf8(&out.stdout).unwrap()
}

fn stderr(out: &Output) -> &str {
    std::str::from_utf8(&out.stderr).unwrap()
}

fn write_trace(dir: &Path, name: &str, rows: &[&[u64]]) -> String {
    let mut text = String::from("worker,iter,end_ms\n");
    for (p, row) in rows.iter().enumerate() {
        for (i, t) in row.iter().enumerate() {
            text += &format!("{},{},{}\n", p + 1, i + 1, t);
        }
    }
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn search_rows(out: &Output) -> Vec<SearchRow> {
    read_csv(out.stdout.as_slice()).unwrap()
}

fn spread(rows: &[SearchRow], algorithm: &str) -> u64 {
    rows.iter()
        .find(|r| r.algorithm == algorithm)
        .unwrap()
        .spread_ms
}

#[test]
fn gen_writes_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let out = ebsp(&[
        "gen",
        "--workers",
        "10",
        "--horizon",
        "15",
        "--seed",
        "1",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 151);
    assert!(text.starts_with("worker,iter,end_ms\n"));
    let m = read_trace(&path).unwrap();
    assert_eq!((m.n(), m.horizon()), (10, 15));
}

#[test]
fn gen_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let out = ebsp(&[
            "--seed",
            "9",
            "gen",
            "--workers",
            "4",
            "--horizon",
            "20",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let stdout_run = ebsp(&["--seed", "9", "gen", "--workers", "4", "--horizon", "20"]);
    assert_eq!(stdout_run.stdout, fs::read(&a).unwrap());
}

#[test]
fn gen_rejects_zero_workers() {
    let out = ebsp(&["gen", "--workers", "0", "--horizon", "15"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--workers"));
    assert!(out.stdout.is_empty());
}

#[test]
fn search_hand_built_traces() {
    let dir = tempfile::tempdir().unwrap();
    let abc = write_trace(
        dir.path(),
        "abc.csv",
        &[&[10, 20, 30], &[12, 24, 36], &[15, 28, 41]],
    );
    let out = ebsp(&["search", "--trace", &abc, "--all"]);
    assert_eq!(out.status.code(), Some(0));
    let rows = search_rows(&out);
    assert_eq!(rows.len(), 3);
    for alg in ["zipline", "gridscan", "full_gridscan"] {
        assert_eq!(spread(&rows, alg), 5);
    }

    let gap = write_trace(dir.path(), "gap.csv", &[&[0, 20], &[10, 29], &[11, 30]]);
    let out = ebsp(&["search", "--trace", &gap, "--oracle"]);
    assert_eq!(out.status.code(), Some(0));
    let rows = search_rows(&out);
    assert_eq!(spread(&rows, "zipline"), 10);
    assert_eq!(spread(&rows, "gridscan"), 11);
    assert_eq!(spread(&rows, "naive"), 10);
    let zip = rows.iter().find(|r| r.algorithm == "zipline").unwrap();
    assert_eq!(zip.anchor_ms, 20);
}

#[test]
fn search_oracle_budget_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("six.csv");
    assert!(ebsp(&[
        "gen",
        "--workers",
        "6",
        "--horizon",
        "15",
        "--out",
        path.to_str().unwrap()
    ])
    .status
    .success());
    let out = ebsp(&["search", "--trace", path.to_str().unwrap(), "--oracle"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("15^6"), "{}", stderr(&out));
    assert!(stderr(&out).contains("budget"));
}

#[test]
fn search_reports_missing_worker() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hole.csv");
    fs::write(&path, "worker,iter,end_ms\n1,1,5\n3,1,7\n").unwrap();
    let out = ebsp(&["search", "--trace", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("worker 2"), "{}", stderr(&out));
}

#[test]
fn bench_small_grid() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bench.csv");
    let out = ebsp(&[
        "bench",
        "--workers",
        "3,6",
        "--horizons",
        "4,8",
        "--trials",
        "2",
        "--algorithms",
        "zipline,full_gridscan",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("algorithm,n,R,mean_us,stddev_us,spread_ms,r_ratio,n_ratio\n"));
    let rows: Vec<BenchRow> = read_csv(text.as_bytes()).unwrap();
    assert_eq!(rows.len(), 8);
    assert!(rows
        .iter()
        .all(|r| r.mean_us > 0.0 && r.r_ratio.is_some() && r.n_ratio.is_some()));
}

#[test]
fn bench_spreads_are_deterministic() {
    let args = [
        "--seed",
        "4",
        "bench",
        "--workers",
        "5",
        "--horizons",
        "6,12",
        "--trials",
        "1",
    ];
    let spreads = |out: Output| {
        let rows: Vec<BenchRow> = read_csv(out.stdout.as_slice()).unwrap();
        rows.into_iter()
            .map(|r| (r.algorithm, r.n, r.horizon, r.spread_ms))
            .collect::<Vec<_>>()
    };
    assert_eq!(spreads(ebsp(&args)), spreads(ebsp(&args)));
}

#[test]
fn simulate_writes_one_file_per_model() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sim");
    let out = ebsp(&[
        "simulate",
        "--model",
        "bsp,elastic",
        "--R",
        "15",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary: Vec<SummaryRow> =
        read_csv(fs::File::open(out_dir.join("summary.csv")).unwrap()).unwrap();
    assert_eq!(summary.len(), 2);
    let (bsp, elastic) = (&summary[0], &summary[1]);
    assert_eq!(
        (bsp.model.as_str(), elastic.model.as_str()),
        ("bsp_k1", "elastic_R15")
    );
    assert!(elastic.total_wait_ms <= bsp.total_wait_ms);
    assert_eq!(bsp.workers, 4);

    let steps: Vec<SuperstepRow> =
        read_csv(fs::File::open(out_dir.join("elastic_R15.csv")).unwrap()).unwrap();
    let total = steps.last().unwrap();
    assert_eq!(total.superstep, TOTAL_ROW);
    assert_eq!(total.total_wait_ms, elastic.total_wait_ms);
    assert!(steps[..2].iter().all(|s| s.planned_wait_ms.is_none()));
    assert!(steps[2..steps.len() - 1]
        .iter()
        .all(|s| s.planned_wait_ms.is_some()));
}

#[test]
fn simulate_ssp_reports_its_bound() {
    let out = ebsp(&[
        "simulate", "--model", "ssp", "--s", "3", "--jitter", "0.2", "--trans", "10",
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(
        stderr(&out).contains("ssp_s3: max_observed_staleness"),
        "{}",
        stderr(&out)
    );
    let rows: Vec<SummaryRow> = read_csv(out.stdout.as_slice()).unwrap();
    assert!(rows[0].max_observed_staleness <= 3);
}

#[test]
fn simulate_is_deterministic() {
    let args = [
        "--seed",
        "3",
        "simulate",
        "--workers",
        "6",
        "--jitter",
        "0.15",
        "--duration-ms",
        "20000",
    ];
    let strip = |out: Output| {
        let mut rows: Vec<SummaryRow> = read_csv(out.stdout.as_slice()).unwrap();
        for r in &mut rows {
            r.planning_us = 0;
        }
        rows
    };
    assert_eq!(strip(ebsp(&args)), strip(ebsp(&args)));
}

#[test]
fn larger_lookahead_costs_more_planning() {
    let out = ebsp(&[
        "simulate", "--model", "elastic", "--R", "15,240", "--jitter", "0.1", "--trans", "10",
    ]);
    assert!(out.status.success());
    let rows: Vec<SummaryRow> = read_csv(out.stdout.as_slice()).unwrap();
    assert!(rows[1].planning_us > rows[0].planning_us, "{rows:?}");
}

#[test]
fn train_outputs_loss_curves() {
    let out = ebsp(&[
        "train",
        "--model",
        "bsp,asp",
        "--compute",
        "100,400",
        "--iterations",
        "30",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.starts_with("wall_ms,epoch,loss_gap,model\n"));
    let rows: Vec<LossRow> = read_csv(text.as_bytes()).unwrap();
    let bsp: Vec<_> = rows.iter().filter(|r| r.model == "bsp_k1").collect();
    assert_eq!(bsp.len(), 31);
    assert!(bsp.windows(2).all(|w| w[0].loss_gap > w[1].loss_gap));

    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("train");
    let out = ebsp(&[
        "train",
        "--model",
        "ssp",
        "--iterations",
        "20",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(out_dir.join("ssp_s3_loss.csv").exists());
    let summary: Vec<SummaryRow> =
        read_csv(fs::File::open(out_dir.join("summary.csv")).unwrap()).unwrap();
    assert!(summary[0].final_loss_gap.is_some());
}

#[test]
fn train_rejects_unstable_learning_rate() {
    let out = ebsp(&[
        "train",
        "--model",
        "bsp",
        "--iterations",
        "5",
        "--lr",
        "1000",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("learning rate"), "{}", stderr(&out));
}
