//! CLI contract: exit codes, per-stage subcommand behavior, determinism, and
//! equality between the chained subcommands and the one-shot pipeline.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn flexbid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flexbid"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(path: &Path, out_dir: &Path) {
    fs::write(
        path,
        format!(
            "n_vehicles = 100\n\
             seed = 9\n\
             n_scenarios = 15\n\
             beta = 0.4\n\
             alpha = 0.95\n\
             fee_eur_mwh = 1.0\n\
             mode = both\n\
             price_day = duck_curve\n\
             max_nodes = 2\n\
             out_dir = {}\n",
            out_dir.display()
        ),
    )
    .unwrap();
}

#[test]
fn usage_errors_exit_2_domain_errors_exit_1() {
    let out = flexbid(&["no-such-subcommand"]);
    assert_eq!(out.status.code(), Some(2));
    let out = flexbid(&["envelopes"]); // missing required args
    assert_eq!(out.status.code(), Some(2));
    let out = flexbid(&["run", "--config", "/no/such/config.conf"]);
    assert_eq!(out.status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let out = flexbid(&[
        "envelopes",
        "--sessions",
        "/no/such/sessions.csv",
        "--out",
        dir.path().join("e.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn scenario_sampling_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        assert_ok(&flexbid(&[
            "scenarios-sample",
            "--n",
            "40",
            "--seed",
            "7",
            "--price-day",
            "duck_curve",
            "--out",
            path.to_str().unwrap(),
        ]));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let c = dir.path().join("c.csv");
    assert_ok(&flexbid(&[
        "scenarios-sample",
        "--n",
        "40",
        "--seed",
        "8",
        "--price-day",
        "duck_curve",
        "--out",
        c.to_str().unwrap(),
    ]));
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
}

#[test]
fn chained_subcommands_match_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let pipe_dir = dir.path().join("pipeline");
    let hand_dir = dir.path().join("chained");
    fs::create_dir_all(&hand_dir).unwrap();
    let config = dir.path().join("run.conf");
    write_config(&config, &pipe_dir);

    assert_ok(&flexbid(&["run", "--config", config.to_str().unwrap()]));

    let p = |name: &str| hand_dir.join(name).to_str().unwrap().to_string();
    assert_ok(&flexbid(&[
        "fleet-sample",
        "--config",
        config.to_str().unwrap(),
        "--out",
        &p("sessions.csv"),
    ]));
    assert_ok(&flexbid(&[
        "envelopes",
        "--sessions",
        &p("sessions.csv"),
        "--out",
        &p("envelopes.csv"),
    ]));
    assert_ok(&flexbid(&[
        "scenarios-sample",
        "--n",
        "15",
        "--seed",
        "9",
        "--price-day",
        "duck_curve",
        "--out",
        &p("scenarios.csv"),
    ]));
    let common = [
        "--envelopes".to_string(),
        p("envelopes.csv"),
        "--scenarios".to_string(),
        p("scenarios.csv"),
        "--price-day".to_string(),
        "duck_curve".to_string(),
        "--beta".to_string(),
        "0.4".to_string(),
        "--alpha".to_string(),
        "0.95".to_string(),
        "--fee".to_string(),
        "1.0".to_string(),
        "--max-nodes".to_string(),
        "2".to_string(),
    ];
    let mut args: Vec<String> = vec!["solve".into()];
    args.extend(common.iter().cloned());
    args.extend([
        "--mode".into(),
        "independent".into(),
        "--out".into(),
        p("solution_independent.json"),
    ]);
    assert_ok(&flexbid(&args.iter().map(String::as_str).collect::<Vec<_>>()));
    let mut args: Vec<String> = vec!["solve".into()];
    args.extend(common.iter().cloned());
    args.extend([
        "--mode".into(),
        "cooptimized".into(),
        "--warm-start".into(),
        p("solution_independent.json"),
        "--out".into(),
        p("solution_cooptimized.json"),
    ]);
    assert_ok(&flexbid(&args.iter().map(String::as_str).collect::<Vec<_>>()));
    for mode in ["independent", "cooptimized"] {
        assert_ok(&flexbid(&[
            "evaluate",
            "--solution",
            &p(&format!("solution_{mode}.json")),
            "--scenarios",
            &p("scenarios.csv"),
            "--price-day",
            "duck_curve",
            "--out",
            &p(&format!("kpi_{mode}.json")),
        ]));
    }
    assert_ok(&flexbid(&[
        "compare",
        "--baseline",
        &p("kpi_independent.json"),
        "--candidate",
        &p("kpi_cooptimized.json"),
        "--out",
        &p("compare.json"),
    ]));

    for name in [
        "sessions.csv",
        "envelopes.csv",
        "scenarios.csv",
        "solution_independent.json",
        "solution_cooptimized.json",
        "kpi_independent.json",
        "kpi_cooptimized.json",
        "compare.json",
    ] {
        let a = fs::read(pipe_dir.join(name)).unwrap();
        let b = fs::read(hand_dir.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between pipeline and chained runs");
    }
}

#[test]
fn out_dir_env_var_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.conf");
    let ignored = dir.path().join("ignored");
    let wanted = dir.path().join("wanted");
    fs::write(
        &config,
        format!(
            "n_vehicles = 40\nseed = 2\nn_scenarios = 1\nmode = cooptimized\n\
             chain_override = all_none\nprice_day = duck_curve\nmax_nodes = 1\n\
             out_dir = {}\n",
            ignored.display()
        ),
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_flexbid"))
        .args(["run", "--config", config.to_str().unwrap()])
        .env("FLEXBID_OUT_DIR", wanted.to_str().unwrap())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(wanted.join("MANIFEST.json").exists());
    assert!(!ignored.exists());
}
