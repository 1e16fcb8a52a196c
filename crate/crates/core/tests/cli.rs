use std::fs;
use std::path::Path;
use std::process::Command;

use evolving_ac::actor_critic::{load_rows, read_rows, write_rows, TraceRow};
use evolving_ac::experiment::{load_config, run_experiment_with_threads};
use evolving_ac::mdp::FiniteMdp;
use proptest::prelude::*;
use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_evolving-ac"))
}

fn write_config(dir: &Path, config: &Value) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path
}

fn small_config(out: &Path) -> Value {
    json!({
        "mdp": { "n_states": 4, "n_actions": 2, "seed": 3, "min_transition_mass": 0.05, "gamma": 0.8 },
        "schedule": { "c_theta": 0.05, "c_omega": 3.0, "t_offset": 9 },
        "T_sweep": [256, 512],
        "seeds": [1, 2, 3],
        "output_dir": out,
    })
}

fn count(dir: &Path) -> usize {
    fs::read_dir(dir).map_or(0, |d| d.count())
}

#[test]
fn run_writes_one_artifact_set_per_run() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let config = write_config(tmp.path(), &small_config(&out));
    let status = bin().arg("run").arg(&config).output().unwrap();
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    assert_eq!(count(&out.join("traces")), 6);
    assert_eq!(count(&out.join("summaries")), 6);
    assert_eq!(count(&out.join("checkpoints")), 6);
    assert!(!out.join("aborts.json").exists());

    let report: Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let groups = report["groups"].as_array().unwrap();
    assert_eq!(groups.len(), 1);
    assert_eq!(groups[0]["key"], "Static");
    assert_eq!(groups[0]["n_runs"], 6);
    assert_eq!(groups[0]["F_T"]["mean"], 0.0);
    for g in ["G_T", "W_T"] {
        assert!(groups[0][g]["std"].is_number(), "{g}");
    }
    let plot = fs::read_to_string(out.join("plot_Static.csv")).unwrap();
    assert!(plot.starts_with("T,G_T,W_T,F_T,G_T_std,W_T_std,F_T_std\n"));
    assert_eq!(plot.lines().count(), 3);

    let summary: Value =
        serde_json::from_str(&fs::read_to_string(out.join("summaries/T512_seed2.json")).unwrap())
            .unwrap();
    for key in [
        "G_T",
        "W_T",
        "F_T",
        "final_theta",
        "final_omega",
        "final_phi",
        "assumption_flags",
    ] {
        assert!(summary.get(key).is_some(), "summary lacks {key}");
    }
}

#[test]
fn artifacts_do_not_depend_on_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for threads in ["1", "3"] {
        let out = tmp.path().join(format!("out{threads}"));
        let config = write_config(tmp.path(), &small_config(&out));
        let status = bin()
            .arg("run")
            .arg(&config)
            .env("EVOLVING_AC_THREADS", threads)
            .output()
            .unwrap();
        assert!(status.status.success());
        dirs.push(out);
    }
    for sub in ["traces", "summaries", "checkpoints"] {
        for entry in fs::read_dir(dirs[0].join(sub)).unwrap() {
            let name = entry.unwrap().file_name();
            let a = fs::read(dirs[0].join(sub).join(&name)).unwrap();
            let b = fs::read(dirs[1].join(sub).join(&name)).unwrap();
            assert_eq!(a, b, "{sub}/{name:?} differs");
        }
    }
    assert_eq!(
        fs::read(dirs[0].join("report.json")).unwrap(),
        fs::read(dirs[1].join("report.json")).unwrap()
    );
}

#[test]
fn rerun_gives_identical_summaries_and_round_trips_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let path = write_config(tmp.path(), &small_config(&out));
    let config = load_config(&path, &[]).unwrap();
    let first = run_experiment_with_threads(&config, 2).unwrap();
    let summary = fs::read(out.join("summaries/T256_seed1.json")).unwrap();
    let second = run_experiment_with_threads(&config, 1).unwrap();
    assert_eq!(
        fs::read(out.join("summaries/T256_seed1.json")).unwrap(),
        summary
    );
    assert_eq!(first.summaries, second.summaries);
    assert_eq!(first.exit_code(), 0);

    let prepared = config.prepare().unwrap();
    let trace = config.run_one(&prepared, 512, 3).unwrap();
    assert_eq!(
        load_rows(out.join("traces/T512_seed3.csv")).unwrap(),
        trace.rows()
    );
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &small_config(&tmp.path().join("out")));

    let output = bin()
        .arg("run")
        .arg(&config)
        .arg("--schedule.c_theta=1")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("schedule.ratio"));

    let mut doc = small_config(&tmp.path().join("out"));
    doc["mdp"] = json!({
        "n_states": 1, "n_actions": 1, "gamma": 1.0, "rho": [1.0],
        "transition": [[[1.0]]], "base_reward": [[0.0]]
    });
    let output = bin()
        .arg("run")
        .arg(write_config(tmp.path(), &doc))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));

    let output = bin()
        .arg("run")
        .arg(tmp.path().join("missing.json"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));

    let output = bin()
        .arg("run")
        .arg(&config)
        .env("EVOLVING_AC_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn aborted_runs_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let doc = json!({
        "mdp": {
            "n_states": 1, "n_actions": 1, "gamma": 0.9, "rho": [1.0],
            "transition": [[[1.0]]], "base_reward": [[1e308]]
        },
        "schedule": { "c_theta": 0.1, "c_omega": 1.0 },
        "critic": { "C_omega": 1.7e308 },
        "alpha0": 0.0,
        "T": 64,
        "seeds": [2],
        "output_dir": out,
    });
    let output = bin()
        .arg("run")
        .arg(write_config(tmp.path(), &doc))
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let aborts: Value =
        serde_json::from_str(&fs::read_to_string(out.join("aborts.json")).unwrap()).unwrap();
    assert_eq!(aborts[0]["seed"], 2);
    assert!(aborts[0]["error"].as_str().unwrap().contains("step 0"));
}

#[test]
fn probe_and_gen_mdp() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"n_states": 6, "n_actions": 2, "seed": 4, "min_transition_mass": 0.02}"#,
    )
    .unwrap();
    let output = bin().arg("gen-mdp").arg(&spec).output().unwrap();
    assert!(output.status.success());
    let mdp: FiniteMdp = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!((mdp.n_states(), mdp.n_actions(), mdp.gamma()), (6, 2, 0.95));

    let checkpoint = json!({
        "mdp": serde_json::to_value(&mdp).unwrap(),
        "features": evolving_ac::mdp::FeatureMap::tabular(6).to_rows(),
        "theta": vec![vec![0.0; 2]; 6],
        "phi": { "base_weights": vec![vec![0.0; 2]; 6], "alpha": 0.1 },
    });
    let path = tmp.path().join("checkpoint.json");
    fs::write(&path, checkpoint.to_string()).unwrap();
    let first = bin().arg("probe").arg(&path).output().unwrap();
    assert!(
        first.status.success(),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    let report: Value = serde_json::from_slice(&first.stdout).unwrap();
    assert!(report["lambda"].as_f64().unwrap() > 0.0);
    assert!(report["epsilon"].as_f64().unwrap() <= 1e-8);
    let second = bin().arg("probe").arg(&path).output().unwrap();
    assert_eq!(first.stdout, second.stdout);

    fs::write(&path, "{\"mdp\": 3}").unwrap();
    assert_eq!(
        bin()
            .arg("probe")
            .arg(&path)
            .output()
            .unwrap()
            .status
            .code(),
        Some(2)
    );
    fs::write(&spec, r#"{"n_states": 600, "n_actions": 2}"#).unwrap();
    assert_eq!(
        bin()
            .arg("gen-mdp")
            .arg(&spec)
            .output()
            .unwrap()
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn verify_fast_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("verify.json");
    let output = bin()
        .args(["verify", "--level", "fast", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(output.status.success(), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS")).count(), 6);
    let report: Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(report["level"], "fast");
    assert_eq!(report["passed"], true);
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |x| x.is_finite()),
        (-1e3f64..1e3),
        Just(0.0),
        Just(f64::MIN_POSITIVE / 3.0),
    ]
}

fn row() -> impl Strategy<Value = TraceRow> {
    (
        0usize..1 << 20,
        finite(),
        proptest::option::of(finite()),
        proptest::option::of(finite()),
        finite(),
        proptest::option::of(finite()),
        (
            proptest::option::of(finite()),
            proptest::option::of(finite()),
            proptest::option::of(finite()),
        ),
    )
        .prop_map(|(t, td, g, w, dphi, m, (l, e, j))| TraceRow {
            t,
            td_error: td,
            grad_norm_sq: g,
            critic_err_sq: w,
            delta_phi_sq: dphi,
            mismatch_l1: m,
            lambda: l,
            epsilon: e,
            objective: j,
        })
}

proptest! {
    #[test]
    fn trace_csv_round_trips(rows in proptest::collection::vec(row(), 1..40)) {
        let mut buf = Vec::new();
        write_rows(&mut buf, &rows).unwrap();
        prop_assert_eq!(read_rows(buf.as_slice()).unwrap(), rows);
    }
}
