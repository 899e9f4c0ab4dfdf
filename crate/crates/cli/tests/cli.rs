use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ragmark(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ragmark"))
        .current_dir(dir)
        .env_remove("RAGMARK_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Rows of a CSV file as maps from column to value.
fn rows(path: &Path) -> Vec<std::collections::HashMap<String, String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header[0], "schema_version");
    lines
        .map(|l| {
            header
                .iter()
                .map(|h| h.to_string())
                .zip(l.split(',').map(str::to_string))
                .collect()
        })
        .collect()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn gen_sizes_determinism_and_refusal() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = ragmark(d, &["gen", "--setting", "easy", "--scale", "10", "--out", "easy"]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert_eq!(manifest(&d.join("easy"))["corpus"].as_array().unwrap().len(), 80);

    let first: Vec<(String, Vec<u8>)> = {
        let mut v: Vec<_> = fs::read_dir(d.join("easy"))
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    fs::read(&p).unwrap(),
                )
            })
            .collect();
        v.sort();
        v
    };
    assert_eq!(
        code(&ragmark(
            d,
            &["gen", "--setting", "easy", "--scale", "10", "--out", "easy"]
        )),
        1
    );
    let o = ragmark(
        d,
        &["gen", "--setting", "easy", "--scale", "10", "--out", "easy", "--force"],
    );
    assert_eq!(code(&o), 0);
    for (name, bytes) in &first {
        assert_eq!(
            &fs::read(d.join("easy").join(name)).unwrap(),
            bytes,
            "{name} changed on rerun"
        );
    }
    // No staging directories survive.
    assert_eq!(fs::read_dir(d).unwrap().count(), 1);
}

#[test]
fn hard_gen_at_scale_100() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ragmark(
        tmp.path(),
        &["gen", "--setting", "hard", "--scale", "100", "--out", "hard"],
    );
    assert_eq!(code(&o), 0, "{o:?}");
    assert_eq!(
        manifest(&tmp.path().join("hard"))["corpus"].as_array().unwrap().len(),
        3000
    );
}

#[test]
fn watermark_audit_and_report_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&ragmark(d, &["gen", "--setting", "hard", "--out", "g"])), 0);
    assert_eq!(
        code(&ragmark(d, &["watermark", "--corpus", "g", "--out", "w"])),
        1,
        "salt is mandatory"
    );

    let o = ragmark(d, &["watermark", "--corpus", "g", "--out", "w", "--salt", "0x1234"]);
    assert_eq!(code(&o), 0, "{o:?}");
    let stats = rows(&d.join("w/watermark.csv"));
    let mean: f64 = stats
        .iter()
        .map(|r| r["green_ratio"].parse::<f64>().unwrap())
        .sum::<f64>()
        / stats.len() as f64;
    assert!(mean > 0.35, "mean green ratio {mean}");
    assert!(fs::read_to_string(d.join("w/config.toml"))
        .unwrap()
        .contains("salt = \"0x0000000000001234\""));

    assert_eq!(
        code(&ragmark(
            d,
            &["audit", "--corpus", "g", "--salt", "0x1234", "--out", "a"]
        )),
        2,
        "unwatermarked"
    );
    assert_eq!(
        code(&ragmark(
            d,
            &["audit", "--corpus", "w", "--salt", "0x1235", "--out", "a"]
        )),
        2,
        "wrong salt"
    );
    assert_eq!(
        code(&ragmark(
            d,
            &[
                "audit",
                "--corpus",
                "w",
                "--salt",
                "0x1234",
                "--vocab-size",
                "4096",
                "--out",
                "a"
            ]
        )),
        2
    );

    let o = ragmark(d, &["audit", "--corpus", "w", "--salt", "0x1234", "--out", "a"]);
    assert_eq!(code(&o), 0, "{o:?}");
    let summary = rows(&d.join("a/summary.csv"));
    assert_eq!(summary.len(), 2);
    assert!(summary.iter().all(|r| r["runs"] == "1" && r["correct"] == "1"));
    assert!(d.join("a/report-seed1-in.json").exists() && d.join("a/trace-seed1-out.csv").exists());

    let o = ragmark(d, &["report", "a", "--out", "r"]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert_eq!(
        fs::read(d.join("a/summary.csv")).unwrap(),
        fs::read(d.join("r/summary.csv")).unwrap()
    );
    assert!(rows(&d.join("r/traces.csv")).len() >= 2);
    assert_eq!(
        code(&ragmark(d, &["report", "g", "--out", "r2"])),
        2,
        "no reports in a split directory"
    );
}

#[test]
fn hard_def_battery_is_fully_correct() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ragmark(
        tmp.path(),
        &[
            "audit",
            "--setting",
            "hard",
            "--profile",
            "def",
            "--out",
            "a",
            "--jobs",
            "2",
        ],
    );
    assert_eq!(code(&o), 0, "{o:?}");
    let runs = rows(&tmp.path().join("a/runs.csv"));
    assert_eq!(runs.len(), 10);
    assert!(runs.iter().all(|r| r["correct"] == "true"));
    let out = rows(&tmp.path().join("a/summary.csv"))
        .into_iter()
        .find(|r| r["case"] == "OUT")
        .unwrap();
    assert!(out["min_log10_p"].parse::<f64>().unwrap() > 3e-5f64.log10());
}

#[test]
fn zero_budget_decides_out() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ragmark(
        tmp.path(),
        &["audit", "--max-queries", "0", "--seeds", "1,2", "--out", "a"],
    );
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(rows(&tmp.path().join("a/runs.csv"))
        .iter()
        .all(|r| r["decision"] == "OUT"));
}

#[test]
fn config_file_and_env_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(
        d.join("c.toml"),
        "[experiment]\nsetting = \"hard\"\nscale = 5\n[audit]\nmax_queries = 5\n",
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ragmark"))
        .current_dir(d)
        .env("RAGMARK_SEED", "77")
        .args(["audit", "--config", "c.toml", "--max-queries", "3", "--out", "a"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{o:?}");
    let echo = fs::read_to_string(d.join("a/config.toml")).unwrap();
    assert!(echo.contains("seeds = [77]") && echo.contains("max_queries = 3") && echo.contains("setting = \"hard\""));
    assert!(d.join("a/report-seed77-in.json").exists());

    fs::write(d.join("bad.toml"), "[audit]\nunknown = 1\n").unwrap();
    assert_eq!(code(&ragmark(d, &["audit", "--config", "bad.toml", "--out", "b"])), 1);
    assert_eq!(
        code(&ragmark(d, &["audit", "--config", "missing.toml", "--out", "b"])),
        1
    );
}

#[test]
fn unknown_method_axis_and_flags_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&ragmark(tmp.path(), &["baseline", "--method", "magic"])), 1);
    assert_eq!(code(&ragmark(tmp.path(), &["sweep", "--axis", "temperature"])), 1);
    assert_eq!(code(&ragmark(tmp.path(), &["audit", "--no-such-flag"])), 1);
    assert_eq!(code(&ragmark(tmp.path(), &["audit", "--omega", "2"])), 1);
    assert_eq!(code(&ragmark(tmp.path(), &["--help"])), 0);
}

#[test]
fn baseline_emits_decisions_and_curve() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = ragmark(
        d,
        &["baseline", "--method", "accfacts", "--seeds", "1,2", "--out", "acc"],
    );
    assert_eq!(code(&o), 0, "{o:?}");
    let decisions = rows(&d.join("acc/decisions.csv"));
    assert_eq!(decisions.len(), 4);
    assert!(decisions.iter().all(|r| r["correct"] == "true"));
    assert!(!d.join("acc/sib_curve.csv").exists());

    let o = ragmark(
        d,
        &[
            "baseline",
            "--method",
            "sib",
            "--setting",
            "hard",
            "--seeds",
            "1,2",
            "--out",
            "sib",
        ],
    );
    assert_eq!(code(&o), 0, "{o:?}");
    let curve = rows(&d.join("sib/sib_curve.csv"));
    assert_eq!(curve.len(), 2 * 21 * 21);
    assert!(stdout(&o).contains("perfect under every profile"));
}

#[test]
fn sweep_writes_one_row_per_point_seed_and_case() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ragmark(
        tmp.path(),
        &[
            "sweep", "--axis", "delta", "--values", "0.5,3.5", "--seeds", "1,2", "--out", "s",
        ],
    );
    assert_eq!(code(&o), 0, "{o:?}");
    let rows = rows(&tmp.path().join("s/sweep-delta.csv"));
    assert_eq!(rows.len(), 2 * 2 * 2);
    let correct_at = |v: &str| {
        rows.iter()
            .filter(|r| r["value"] == v && r["correct"] == "true")
            .count()
    };
    assert!(correct_at("3.5") > correct_at("0.5"));
}
