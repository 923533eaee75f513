use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn lq_model() -> Value {
    json!({
        "b1": 0.2, "b2": 0.1, "b3": 1.0, "sigma": 0.5, "gamma": 1.0, "p": [0.2, 0.3, 0.5],
        "L1": 0.4, "L2": 0.3, "L3": 0.2, "L4": 1.0, "g1": 1.0, "g2": 0.5, "g3": 0.5, "T": 1.0
    })
}

fn lq_config() -> Value {
    json!({
        "model": {"lq": lq_model()},
        "initial": {"kind": "gaussian", "mass": 1.0, "mean": 0.3, "sd": 0.5},
        "grid": {"dt": 0.01},
        "riccati": {"dt": 0.001}
    })
}

fn generic_config(model: Value, initial: Value, grid: Value) -> Value {
    json!({"model": {"generic": model}, "initial": initial, "grid": grid, "budget": {"flow": "frozen", "n_trees": 200}})
}

struct Run {
    dir: TempDir,
    output: Output,
}

impl Run {
    fn code(&self) -> i32 {
        self.output.status.code().expect("exit code")
    }

    fn stderr(&self) -> String {
        String::from_utf8_lossy(&self.output.stderr).into_owned()
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn read(&self, name: &str) -> String {
        fs::read_to_string(self.out().join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
    }

    /// Header and rows of a CSV artifact (hash line stripped).
    fn csv(&self, name: &str) -> (Vec<String>, Vec<Vec<f64>>) {
        let text = self.read(name);
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# config_hash: "));
        let header = lines.next().unwrap().split(',').map(str::to_string).collect();
        let rows = lines.map(|l| l.split(',').map(|v| v.parse().unwrap_or(f64::NAN)).collect()).collect();
        (header, rows)
    }

    fn json(&self, name: &str) -> Value {
        serde_json::from_str(&self.read(name)).unwrap()
    }
}

fn run_with(cmd: &str, config: &Value, extra: &[&str], env: Option<(&str, &Path)>) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    fs::write(&cfg, serde_json::to_string_pretty(config).unwrap()).unwrap();
    let mut c = Command::new(env!("CARGO_BIN_EXE_branchflow"));
    c.arg(cmd).arg("--config").arg(&cfg).args(extra).current_dir(dir.path());
    if !extra.contains(&"--out") && env.is_none() {
        c.arg("--out").arg(dir.path().join("out"));
    }
    c.env_remove("BRANCHFLOW_OUT");
    if let Some((k, v)) = env {
        c.env(k, v);
    }
    let output = c.output().unwrap();
    Run { dir, output }
}

fn run(cmd: &str, config: &Value) -> Run {
    run_with(cmd, config, &[], None)
}

#[test]
fn zero_cost_gives_zero_riccati() {
    let mut cfg = lq_config();
    for k in ["L1", "L2", "L3", "g1", "g2", "g3"] {
        cfg["model"]["lq"][k] = json!(0.0);
    }
    let r = run("lq-solve", &cfg);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let (header, rows) = r.csv("riccati.csv");
    assert_eq!(header, ["t", "Lambda", "Gamma1", "Gamma2", "Gamma3", "Gamma4"]);
    assert_eq!(rows.len(), 1001);
    assert!(rows.iter().all(|row| row[1..].iter().all(|v| *v == 0.0)));
}

#[test]
fn uncontrolled_riccati_matches_closed_form() {
    // With b3 = 0: Λ' = -L1 - cΛ, c = 2 b1 + θ, and Γ3' = -L2 - 2θ Γ3.
    let mut cfg = lq_config();
    cfg["model"]["lq"]["b3"] = json!(0.0);
    let r = run("lq-solve", &cfg);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let (b1, l1, l2, g1, g2) = (0.2, 0.4, 0.3, 1.0, 0.5);
    let theta: f64 = 1.0 * (-0.2 + 0.5);
    let c = 2.0 * b1 + theta;
    let (_, rows) = r.csv("riccati.csv");
    for row in rows {
        let s = 1.0 - row[0];
        let lam = (g1 + l1 / c) * (c * s).exp() - l1 / c;
        let g3 = (g2 + l2 / (2.0 * theta)) * (2.0 * theta * s).exp() - l2 / (2.0 * theta);
        assert!((row[1] - lam).abs() < 1e-8, "Λ({}) = {} vs {lam}", row[0], row[1]);
        assert!((row[4] - g3).abs() < 1e-8, "Γ3({}) = {} vs {g3}", row[0], row[4]);
    }
    let (header, rows) = r.csv("optimal_control.csv");
    assert_eq!(header, ["t", "mass", "k0", "k1"]);
    assert!(rows.iter().all(|row| row[2] == 0.0 && row[3] == 0.0));
    assert_eq!(r.csv("value_surface.csv").1.len(), 220);
}

#[test]
fn missing_l4_is_a_config_error() {
    let mut cfg = lq_config();
    cfg["model"]["lq"].as_object_mut().unwrap().remove("L4");
    let r = run("lq-solve", &cfg);
    assert_eq!(r.code(), 1);
    assert!(r.stderr().contains("L4"), "{}", r.stderr());
}

#[test]
fn unknown_key_is_a_config_error() {
    let mut cfg = lq_config();
    cfg["grid"]["dy"] = json!(0.1);
    let r = run("lq-solve", &cfg);
    assert_eq!(r.code(), 1);
    assert!(r.stderr().contains("dy"), "{}", r.stderr());
}

#[test]
fn riccati_blow_up_exits_2() {
    // dΛ/d(T - t) = -Λ² from Λ(T) = -10 explodes at T - t = 0.1.
    let mut cfg = lq_config();
    cfg["model"]["lq"]["g1"] = json!(-10.0);
    let r = run("lq-solve", &cfg);
    assert_eq!(r.code(), 2, "{}", r.stderr());
}

#[test]
fn static_model_keeps_moments() {
    let cfg = generic_config(
        json!({"sigma": 0.0, "gamma": 1.0, "p": [0.0, 1.0], "T": 1.0}),
        json!({"kind": "atoms", "atoms": [[0.5, 2.0]]}),
        json!({"dt": 0.1}),
    );
    let r = run("simulate", &cfg);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let (header, rows) = r.csv("flow_moments.csv");
    assert_eq!(header, ["t", "mass", "m1", "m2", "mass_se", "m1_se", "m2_se"]);
    assert_eq!(rows.len(), 11);
    for row in rows {
        assert_eq!(&row[1..], &[2.0, 1.0, 0.5, 0.0, 0.0, 0.0]);
    }
    let cost = r.json("cost.json");
    assert_eq!(cost["N"], 200);
    assert_eq!(cost["mean"], 0.0);
}

#[test]
fn non_positive_dt_is_a_config_error() {
    let cfg = generic_config(
        json!({"sigma": 0.0, "gamma": 1.0, "p": [0.0, 1.0], "T": 1.0}),
        json!({"kind": "atoms", "atoms": [[0.5, 2.0]]}),
        json!({"dt": 0.0}),
    );
    assert_eq!(run("simulate", &cfg).code(), 1);
}

#[test]
fn strict_mode_reports_unconverged_picard() {
    let mut cfg = lq_config();
    cfg["budget"] = json!({"n_trees": 200, "picard_tol": 1e-12, "picard_max_iter": 2});
    let lenient = run("simulate", &cfg);
    assert_eq!(lenient.code(), 0, "{}", lenient.stderr());
    assert_eq!(lenient.json("cost.json")["flow_converged"], false);
    let strict = run_with("simulate", &cfg, &["--strict"], None);
    assert_eq!(strict.code(), 3, "{}", strict.stderr());
    assert!(strict.out().join("cost.json").exists());
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let mut cfg = lq_config();
    cfg["budget"] = json!({"n_trees": 300, "seed": 4, "picard_tol": 0.5});
    cfg["outputs"] = json!({"tree_samples": 2});
    let a = run_with("simulate", &cfg, &["--workers", "1"], None);
    let b = run_with("simulate", &cfg, &["--workers", "3"], None);
    assert_eq!(a.code(), 0, "{}", a.stderr());
    assert_eq!(b.code(), 0, "{}", b.stderr());
    for name in ["flow_moments.csv", "trees.csv", "ode_moments.csv", "cost.json"] {
        assert_eq!(a.read(name), b.read(name), "{name} differs");
    }
    let c = run_with("simulate", &cfg, &["--seed", "5"], None);
    assert_ne!(a.read("flow_moments.csv"), c.read("flow_moments.csv"));
    assert_ne!(a.json("cost.json")["config_hash"], c.json("cost.json")["config_hash"]);
}

#[test]
fn empty_check_list_passes() {
    let r = run("verify", &lq_config());
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let s = r.json("summary.json");
    assert_eq!(s["passed"], 0);
    assert_eq!(s["all_pass"], true);
    assert_eq!(s["reports"], json!([]));
}

#[test]
fn wrong_convention_fails_hjb_check() {
    let mut cfg = lq_config();
    cfg["checks"] = json!([{"kind": "hjb_residual"}, {"kind": "riccati_order"}]);
    let good = run("verify", &cfg);
    assert_eq!(good.code(), 0, "{}", good.stderr());
    cfg["riccati"]["convention"] = json!("paper_printed");
    let bad = run("verify", &cfg);
    assert_eq!(bad.code(), 4);
    let s = bad.json("summary.json");
    let hjb = s["reports"].as_array().unwrap().iter().find(|r| r["name"] == "hjb_residual").unwrap();
    assert_eq!(hjb["pass"], false);
    let (header, rows) = bad.csv("checks.csv");
    assert_eq!(header, ["name", "statistic", "threshold", "pass", "samples"]);
    assert_eq!(rows.len(), 2);
}

#[test]
fn failing_check_does_not_stop_the_suite() {
    let mut cfg = generic_config(
        json!({"sigma": 0.3, "gamma": 1.0, "p": [0.5, 0.0, 0.5], "T": 1.0}),
        json!({"kind": "gaussian", "mass": 1.0, "mean": 0.0, "sd": 0.5}),
        json!({"dt": 0.05}),
    );
    // The DPP check needs an LQ model and errors; the mass law still runs.
    cfg["checks"] = json!([{"kind": "dpp"}, {"kind": "mass_law", "n_trees": 2000}]);
    let r = run("verify", &cfg);
    assert_eq!(r.code(), 4);
    let s = r.json("summary.json");
    assert_eq!(s["passed"], 1);
    assert!(s["reports"][0]["error"].as_str().unwrap().contains("LQ"));
}

#[test]
fn dpp_check_runs_a_default_panel() {
    let r = run("dpp-check", &lq_config());
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let s = r.json("summary.json");
    assert_eq!(s["reports"][0]["name"], "dpp");
    assert_eq!(s["reports"][0]["samples"], 21);
}

fn fp_config(p: Value, x_span: f64) -> Value {
    json!({
        "model": {"generic": {"sigma": 0.5, "gamma": 1.0, "p": p, "T": 1.0}},
        "initial": {"kind": "gaussian", "mass": 1.0, "mean": 0.0, "sd": 0.5},
        "grid": {"dt": 0.01, "x_lo": -x_span, "x_hi": x_span, "dx": 0.02},
        "budget": {"flow": "frozen"}
    })
}

#[test]
fn heat_equation_conserves_mass() {
    let r = run("fp", &fp_config(json!([0.0, 1.0]), 6.0));
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let (header, rows) = r.csv("mass_trace.csv");
    assert_eq!(header, ["t", "mass", "source"]);
    assert!(rows.iter().all(|row| (row[1] - 1.0).abs() < 1e-8));
    assert_eq!(r.csv("density.csv").0, ["t", "x", "rho"]);
}

#[test]
fn supercritical_mass_grows_exponentially() {
    let r = run("fp", &fp_config(json!([0.1, 0.1, 0.8]), 6.0));
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let theta: f64 = 0.7;
    for row in r.csv("mass_trace.csv").1 {
        let exact = (theta * row[0]).exp();
        assert!((row[1] - exact).abs() < 5e-3 * exact, "mass({}) = {} vs {exact}", row[0], row[1]);
    }
}

#[test]
fn narrow_span_reports_mass_leak() {
    let r = run("fp", &fp_config(json!([0.0, 1.0]), 1.0));
    assert_eq!(r.code(), 1);
    assert!(r.stderr().contains("mass leak"), "{}", r.stderr());
}

#[test]
fn explicit_instability_exits_2() {
    let mut cfg = fp_config(json!([0.0, 1.0]), 6.0);
    cfg["fp"] = json!({"scheme": "explicit"});
    let r = run("fp", &cfg);
    assert_eq!(r.code(), 2, "{}", r.stderr());
}

#[test]
fn particle_cross_check_is_close() {
    let mut cfg = fp_config(json!([0.2, 0.3, 0.5]), 6.0);
    cfg["fp"] = json!({"cross_check": {"n_trees": 4000}});
    let r = run("fp", &cfg);
    assert_eq!(r.code(), 0, "{}", r.stderr());
    let cc = r.json("cross_check.json");
    assert!(cc["wbar1"].as_f64().unwrap() < 0.05, "{cc}");
}

#[test]
fn env_var_sets_default_output_dir() {
    let target = tempfile::tempdir().unwrap();
    let r = run_with("lq-solve", &lq_config(), &[], Some(("BRANCHFLOW_OUT", target.path())));
    assert_eq!(r.code(), 0, "{}", r.stderr());
    assert!(target.path().join("riccati.csv").exists());
}

#[test]
fn artifacts_follow_the_shipped_schema() {
    let schema: Value =
        serde_json::from_str(include_str!("../schema/csv_schema.json")).expect("schema parses");
    let mut cfg = lq_config();
    cfg["grid"] = json!({"dt": 0.01, "x_lo": -5.0, "x_hi": 5.0, "dx": 0.05});
    cfg["budget"] = json!({"n_trees": 200, "flow": "moment_ode"});
    cfg["fp"] = json!({"cross_check": {"n_trees": 200}});
    cfg["checks"] = json!([{"kind": "dpp"}]);
    let mut seen = 0;
    for cmd in ["lq-solve", "simulate", "verify", "fp"] {
        let r = run(cmd, &cfg);
        assert_eq!(r.code(), 0, "{cmd}: {}", r.stderr());
        let info = r.json("run_info.json");
        let hash = info["config_hash"].as_str().unwrap().to_string();
        for file in info["files"].as_array().unwrap() {
            let name = file.as_str().unwrap();
            if let Some(spec) = schema["csv"].get(name) {
                let text = r.read(name);
                assert_eq!(text.lines().next().unwrap(), format!("# config_hash: {hash}"));
                let (header, _) = r.csv(name);
                let expected: Vec<String> =
                    spec["columns"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
                assert_eq!(header, expected, "{name}");
            } else {
                let spec = &schema["json"][name];
                assert!(spec.is_object(), "{name} missing from schema");
                let v = r.json(name);
                assert_eq!(v["config_hash"], json!(hash), "{name}");
                for key in spec["keys"].as_array().unwrap() {
                    assert!(v.get(key.as_str().unwrap()).is_some(), "{name} lacks {key}");
                }
            }
            seen += 1;
        }
    }
    assert!(seen >= 11);
}
