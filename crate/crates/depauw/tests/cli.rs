use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use depauw::io::{read_csv, read_ensemble};
use depauw_core::exact_flow::{flow, FlowQuery};
use depauw_core::{DepauwField, Dyadic, TorusPoint};
use serde_json::Value;

fn depauw(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depauw")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Every regular file under `dir` except the table cache, by relative name.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_file() {
            out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
        }
    }
    out
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

#[test]
fn density_check_passes_and_stamps_every_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("d");
    let o = depauw(&["--out", &out_arg(&out), "--seed", "5", "density", "--depth", "10", "--check"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc = json(&out.join("density.json"));
    let hash = doc["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    assert_eq!(doc["seed"], 5);
    assert_eq!(doc["config"]["params"]["depth"], 10);
    assert_eq!(doc["config"]["params"]["export_level"], 6);
    let checks = doc["report"]["checks"].as_array().unwrap();
    let names: Vec<&str> = checks.iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["refining", "complement", "cover", "disjoint", "unit_cells_half_black"]);
    assert!(checks.iter().all(|c| c["passed"] == true));
    assert!(!out.join("failure.json").exists());
    for (name, bytes) in snapshot(&out) {
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.contains(&hash), "{name} lacks the config hash");
        if name.ends_with(".csv") {
            let (stamp, header, rows) = read_csv(&out.join(&name)).unwrap();
            assert_eq!((stamp.config_hash.as_str(), stamp.seed), (hash.as_str(), 5));
            assert_eq!(header, ["time", "level", "ix", "iy", "rho_b", "rho_w"]);
            assert!(!rows.is_empty());
        }
    }
    // rho^B(1/2) is the complemented level-1 checkerboard
    let (_, _, rows) = read_csv(&out.join("density_t01.csv")).unwrap();
    assert_eq!(rows.len(), 16);
    for r in rows {
        let (ix, iy): (u32, u32) = (r[2].parse().unwrap(), r[3].parse().unwrap());
        let want = if (ix + iy) % 2 == 1 { "0.0" } else { "1.0" };
        assert_eq!(r[4], want, "cell ({ix}, {iy})");
    }
}

#[test]
fn reruns_are_byte_identical_for_any_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = [("a", "1"), ("b", "1"), ("c", "3")];
    for (dir, workers) in runs {
        let t = out_arg(&tmp.path().join(format!("t{dir}")));
        let o = depauw(&["--out", &t, "--workers", workers, "--seed", "11", "trace", "--n", "1500", "--depth", "6"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let s = out_arg(&tmp.path().join(format!("s{dir}")));
        let o = depauw(&["--out", &s, "--workers", workers, "stochasticity", "--depth", "6", "--n", "16384", "--levels", "3,0"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let r = out_arg(&tmp.path().join(format!("r{dir}")));
        let o = depauw(&["--out", &r, "--workers", workers, "density", "--depth", "3", "--residual-samples", "40000"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for prefix in ["t", "s", "r"] {
        let a = snapshot(&tmp.path().join(format!("{prefix}a")));
        assert!(!a.is_empty());
        assert_eq!(a, snapshot(&tmp.path().join(format!("{prefix}b"))), "{prefix}: rerun differs");
        assert_eq!(a, snapshot(&tmp.path().join(format!("{prefix}c"))), "{prefix}: worker count changes output");
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = |name: &str, text: &str| {
        let p = tmp.path().join(name);
        std::fs::write(&p, text).unwrap();
        p.to_str().unwrap().to_string()
    };
    let empty = cfg("empty.json", "");
    let o = depauw(&["--config", &empty, "run"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("empty"), "{}", stderr(&o));

    let o = depauw(&["--config", &cfg("obj.json", "{}"), "run"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("`experiment`"));

    let o = depauw(&["--config", &cfg("unknown.json", r#"{"experiment": "trace", "nn": 3}"#), "run"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("config field `nn`"), "{}", stderr(&o));

    let o = depauw(&["--config", &cfg("eps.json", r#"{"experiment": "converge", "eps": [0.0625, 0.5]}"#), "run"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("`eps[1]`"), "{}", stderr(&o));

    let o = depauw(&["--config", &cfg("mismatch.json", r#"{"experiment": "trace"}"#), "density"]);
    assert_eq!(code(&o), 2);

    assert_eq!(code(&depauw(&["run"])), 2);
    assert_eq!(code(&depauw(&[])), 2);
    assert_eq!(code(&depauw(&["density", "--depth", "x"])), 2);
}

#[test]
fn config_file_with_flag_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"experiment": "density", "depth": 3, "seed": 4, "out": "ignored"}"#).unwrap();
    let o = depauw(&["--config", cfg.to_str().unwrap(), "--out", &out_arg(&out), "density", "--depth", "5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc = json(&out.join("density.json"));
    assert_eq!(doc["config"]["params"]["depth"], 5);
    assert_eq!(doc["seed"], 4);
    assert_eq!(doc["config"]["params"]["check"], false);
    // the resolved config is echoed on stderr
    assert!(stderr(&o).contains(r#""depth":5"#));
}

#[test]
fn trace_oracle_and_ensemble_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("t");
    let o = depauw(&["--out", &out_arg(&out), "--seed", "2", "trace", "--n", "3000", "--oracle", "--oracle-points", "100"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc = json(&out.join("trace.json"));
    let oracle = doc["report"]["oracle"].as_array().unwrap();
    assert_eq!(oracle.len(), 5);
    assert!(oracle.iter().all(|r| r["max_error"].as_f64().unwrap() <= 1e-6));
    let (h, e) = read_ensemble(&out.join("ensemble.dpen")).unwrap();
    assert_eq!(h.config_hash, doc["config_hash"].as_str().unwrap());
    assert_eq!(h.seed, 2);
    assert_eq!(e.paths.len(), 3000);
    assert!(e.paths.iter().all(|p| p.times.len() == 11 && p.t_max() == 1.0));
    let (_, header, rows) = read_csv(&out.join("ensemble.csv")).unwrap();
    assert_eq!(header, ["path", "t", "x1", "x2"]);
    assert_eq!(rows.len(), 3000 * 11);
}

#[test]
fn mollified_trace_and_field() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("m");
    let o = depauw(&["--out", &out_arg(&out), "trace", "--n", "2000", "--eps", "0.0625", "--step", "0.0078125"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("cache").read_dir().unwrap().count() >= 3);
    let (_, e) = read_ensemble(&out.join("ensemble.dpen")).unwrap();
    assert!(e.paths.iter().all(|p| p.t_min() == 0.125));

    let f = tmp.path().join("f");
    let o = depauw(&["--out", &out_arg(&f), "field", "--depth", "1", "--resolution", "16", "--check-points", "500"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, _, rows) = read_csv(&f.join("field.csv")).unwrap();
    assert_eq!(rows.len(), 2 * 256);

    let o = depauw(&["--out", &out_arg(&f), "trace", "--eps", "0.0625", "--t-end", "1/16"]);
    assert_eq!(code(&o), 2, "stage 3 is not admissible for eps = 1/16");
}

#[test]
fn flow_csv_matches_the_library() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("f");
    let o = depauw(&["--out", &out_arg(&out), "flow", "--point", "1/4,1/8", "--point", "3/2,0.75", "--depth", "3", "--substeps", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (_, header, rows) = read_csv(&out.join("flow.csv")).unwrap();
    assert_eq!(header[..5], ["point", "sample", "t", "x1", "x2"]);
    let field = DepauwField::new(3);
    let q = FlowQuery::new(Dyadic::ONE, Dyadic::pow2(-3));
    for (i, start) in [(Dyadic::new(1, 2), Dyadic::new(1, 3)), (Dyadic::new(3, 1), Dyadic::new(3, 2))].into_iter().enumerate() {
        let (end, path) = flow(&field, &TorusPoint::try_from(start).unwrap(), &q).unwrap();
        let mine: Vec<&Vec<String>> = rows.iter().filter(|r| r[0] == i.to_string()).collect();
        assert_eq!(mine.len(), 7, "3 stages x 2 substeps + start");
        let last = mine.last().unwrap();
        assert_eq!(last[2], "1/2^3");
        assert_eq!((last[3].parse::<Dyadic>().unwrap(), last[4].parse::<Dyadic>().unwrap()), (end.x1().clone(), end.x2().clone()));
        // stage-boundary samples agree with the library path
        for (t, x) in path.times.iter().zip(&path.points) {
            let r = mine.iter().find(|r| r[2].parse::<Dyadic>().unwrap() == *t).unwrap();
            assert_eq!(r[3].parse::<Dyadic>().unwrap(), *x.x1());
        }
    }
}

#[test]
fn failing_checks_exit_with_one_and_write_a_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("c");
    let o = depauw(&["--out", &out_arg(&out), "converge", "--eps", "0.0625,0.03125,0.015625", "--n", "200", "--sup-paths", "100", "--step", "0.00390625"]);
    let doc = json(&out.join("converge.json"));
    let checks = doc["report"]["checks"].as_array().unwrap();
    let all = checks.iter().all(|c| c["passed"] == true);
    assert_eq!(code(&o), if all { 0 } else { 1 }, "{}", stderr(&o));
    assert_eq!(out.join("failure.json").exists(), !all);
    let (_, header, rows) = read_csv(&out.join("converge_paths.csv")).unwrap();
    assert_eq!(header.len(), 1 + 2 + 3 + 1);
    assert_eq!(rows.len(), 100);
    assert_eq!(doc["report"]["bank_id"], "bl-bank-v1");
}
