use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const COVARIATES: &str = "X1,X2,X3,X4,X5,X6";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_balancekit"))
        .args(args)
        .current_dir(dir)
        .env("BALANCEKIT_LOG", "error")
        .output()
        .unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn generated(dir: &Path) -> PathBuf {
    let out = run(
        dir,
        &["generate", "--seed", "11", "--n", "900", "--out", "gen"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    dir.join("gen/sample.csv")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn missing_input_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["fit", "--input", "absent.csv", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("absent.csv"));
}

#[test]
fn rank_deficient_design_exits_3_with_columns() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("treatment,a,b,c\n");
    for i in 0..60 {
        let a = (i * 7 % 13) as f64;
        csv.push_str(&format!(
            "{},{a},{},{}\n",
            i % 3,
            2.0 * a + 1.0,
            (i * 5 % 11) as f64
        ));
    }
    fs::write(dir.path().join("d.csv"), csv).unwrap();
    let out = run(dir.path(), &["fit", "--input", "d.csv", "--out", "o"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let msg = stderr(&out);
    assert!(msg.contains("rank deficient") && msg.contains('b'), "{msg}");
}

#[test]
fn fit_on_generated_data_converges() {
    let dir = tempfile::tempdir().unwrap();
    generated(dir.path());
    let out = run(
        dir.path(),
        &[
            "fit",
            "--input",
            "gen/sample.csv",
            "--covariates",
            COVARIATES,
            "--out",
            "fit",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let report = json(&dir.path().join("fit/convergence.json"));
    assert_eq!(report["converged"], true);
    let scores = fs::read_to_string(dir.path().join("fit/scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 901);
    assert!(dir.path().join("fit/model.json").exists());
}

#[test]
fn overlap_estimate_gives_three_contrasts_with_intervals() {
    let dir = tempfile::tempdir().unwrap();
    generated(dir.path());
    let out = run(
        dir.path(),
        &[
            "estimate",
            "--input",
            "gen/sample.csv",
            "--covariates",
            COVARIATES,
            "--scheme",
            "overlap",
            "--out",
            "est",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let est = json(&dir.path().join("est/estimates.json"));
    let rows = est["estimates"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for r in rows {
        let (lo, hi, tau) = (
            r["ci_low"].as_f64().unwrap(),
            r["ci_high"].as_f64().unwrap(),
            r["tau_hat"].as_f64().unwrap(),
        );
        assert!(lo < tau && tau < hi);
        assert_eq!(r["method"], "sandwich");
    }
    for f in [
        "estimates.csv",
        "balance.csv",
        "balance_plot.csv",
        "ess.json",
        "weights.csv",
    ] {
        assert!(dir.path().join("est").join(f).exists(), "{f}");
    }
}

#[test]
fn matching_with_sandwich_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    generated(dir.path());
    let out = run(
        dir.path(),
        &[
            "estimate",
            "--input",
            "gen/sample.csv",
            "--scheme",
            "matching",
            "--variance",
            "sandwich",
            "--out",
            "o",
        ],
    );
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("differentiable"));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn bootstrap_without_seed_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    generated(dir.path());
    let out = run(
        dir.path(),
        &[
            "estimate",
            "--input",
            "gen/sample.csv",
            "--variance",
            "bootstrap:200",
            "--out",
            "o",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--seed"));
}

fn estimate_twice(workers: [&str; 2]) -> [Vec<(String, Vec<u8>)>; 2] {
    workers.map(|w| {
        let dir = tempfile::tempdir().unwrap();
        generated(dir.path());
        let out = run(
            dir.path(),
            &[
                "estimate",
                "--input",
                "gen/sample.csv",
                "--covariates",
                COVARIATES,
                "--scheme",
                "matching",
                "--variance",
                "bootstrap:200",
                "--seed",
                "5",
                "--workers",
                w,
                "--out",
                "est",
            ],
        );
        assert!(out.status.success(), "{}", stderr(&out));
        let mut files: Vec<_> = fs::read_dir(dir.path().join("est"))
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (
                    e.file_name().into_string().unwrap(),
                    fs::read(e.path()).unwrap(),
                )
            })
            .collect();
        files.sort();
        files
    })
}

#[test]
fn identical_commands_give_identical_bytes() {
    let [a, b] = estimate_twice(["1", "1"]);
    assert_eq!(a.len(), b.len());
    for ((na, ba), (nb, bb)) in a.iter().zip(&b) {
        assert_eq!(na, nb);
        assert!(ba == bb, "{na} differs");
    }
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let [a, b] = estimate_twice(["1", "3"]);
    for ((name, ba), (_, bb)) in a.iter().zip(&b) {
        if name != "manifest.json" {
            assert!(ba == bb, "{name} differs");
        }
    }
}

#[test]
fn single_replicate_simulation_writes_table_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &[
            "simulate",
            "--preset",
            "lack_of_overlap",
            "--n",
            "400",
            "--reps",
            "1",
            "--seed",
            "2",
            "--gmw-interval",
            "none",
            "--truth-draws",
            "50000",
            "--out",
            "sim",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let table = fs::read_to_string(dir.path().join("sim/table.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 3 * 5);
    let manifest = json(&dir.path().join("sim/manifest.json"));
    assert_eq!(manifest["failed"], 0);
    assert!(manifest["runtime_seconds"].as_f64().unwrap() > 0.0);
    assert_eq!(manifest["seeds"]["monte_carlo"], 2);
}

#[test]
fn unknown_preset_exits_2_listing_presets() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["simulate", "--preset", "nope", "--seed", "1", "--out", "o"],
    );
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(
        msg.contains("adequate_overlap") && msg.contains("lack_of_overlap"),
        "{msg}"
    );
}

#[test]
fn every_output_directory_has_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    generated(dir.path());
    let cmds: [&[&str]; 4] = [
        &[
            "fit",
            "--input",
            "gen/sample.csv",
            "--covariates",
            COVARIATES,
            "--out",
            "a",
        ],
        &[
            "balance",
            "--input",
            "gen/sample.csv",
            "--covariates",
            COVARIATES,
            "--scheme",
            "trim",
            "--out",
            "b",
        ],
        &[
            "trim",
            "--input",
            "gen/sample.csv",
            "--covariates",
            COVARIATES,
            "--outcome-col",
            "y",
            "--out",
            "c",
        ],
        &["ternary", "--resolution", "10", "--out", "d"],
    ];
    for args in cmds {
        let out = run(dir.path(), args);
        assert!(out.status.success(), "{args:?}: {}", stderr(&out));
    }
    for d in ["gen", "a", "b", "c", "d"] {
        let m = json(&dir.path().join(d).join("manifest.json"));
        assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
        assert!(m["config"].is_object());
        for f in m["outputs"].as_array().unwrap() {
            assert!(
                dir.path().join(d).join(f.as_str().unwrap()).exists(),
                "{d}/{f}"
            );
        }
    }
    assert_eq!(
        json(&dir.path().join("gen/manifest.json"))["seeds"]["data"],
        11
    );
}

#[test]
fn inputs_are_never_overwritten() {
    let dir = tempfile::tempdir().unwrap();
    let sample = generated(dir.path());
    let input = dir.path().join("gen/scores.csv");
    fs::copy(&sample, &input).unwrap();
    let before = fs::read(&input).unwrap();
    let out = run(
        dir.path(),
        &[
            "fit",
            "--input",
            "gen/scores.csv",
            "--covariates",
            COVARIATES,
            "--out",
            "gen",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("overwrite"));
    assert_eq!(fs::read(&input).unwrap(), before);
}

#[test]
fn trimmed_sample_reloads_with_its_outcome() {
    let dir = tempfile::tempdir().unwrap();
    generated(dir.path());
    let out = run(
        dir.path(),
        &[
            "trim",
            "--input",
            "gen/sample.csv",
            "--covariates",
            COVARIATES,
            "--outcome-col",
            "y",
            "--out",
            "t",
        ],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let report = json(&dir.path().join("t/trim.json"));
    let kept = report["n_kept"].as_u64().unwrap() as usize;
    assert!(kept > 0 && kept <= 900);
    let trimmed = fs::read_to_string(dir.path().join("t/trimmed.csv")).unwrap();
    assert_eq!(
        trimmed.lines().next().unwrap(),
        "treatment,y,X1,X2,X3,X4,X5,X6"
    );
    assert_eq!(trimmed.lines().count(), kept + 1);
}
