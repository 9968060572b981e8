use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const TWO_WELL: &str = "seed = 1
[model]
family = \"mechanical\"
potential = [{ wave = [0], cos = 0.5 }, { wave = [2], cos = 0.5 }]
[lattice]
n = 32
t = 8
[outputs]
directory = \"out\"
";

fn kamlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kamlab"))
        .current_dir(dir)
        .env_remove("KAMLAB_OUTPUT_DIR")
        .args(args)
        .output()
        .expect("kamlab runs")
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn short_horizon_barrier_exits_with_two() {
    let dir = setup(&format!("{TWO_WELL}[limits]\nm_max = 16\n"));
    let o = kamlab(
        dir.path(),
        &["--config", "run.toml", "barrier", "--source", "3,1"],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let manifest = json(&dir.path().join("out/barrier.manifest.json"));
    let stage = manifest["stages"]
        .as_array()
        .unwrap()
        .iter()
        .find(|s| s["name"] == "barrier_from")
        .unwrap();
    assert_eq!(stage["converged"], false);
    assert!(dir.path().join("out/barrier.csv").exists());
}

#[test]
fn kernel_cache_is_reused_and_rebuilt_after_corruption() {
    let dir = setup(TWO_WELL);
    let status = |d: &Path| {
        json(&d.join("out/critical.manifest.json"))["kernel_cache"]
            .as_str()
            .unwrap()
            .to_string()
    };
    assert!(kamlab(dir.path(), &["--config", "run.toml", "critical"])
        .status
        .success());
    assert_eq!(status(dir.path()), "miss");
    let first = std::fs::read(dir.path().join("out/critical.json")).unwrap();
    assert!(kamlab(dir.path(), &["--config", "run.toml", "critical"])
        .status
        .success());
    assert_eq!(status(dir.path()), "hit");
    assert_eq!(
        std::fs::read(dir.path().join("out/critical.json")).unwrap(),
        first
    );

    let cache = std::fs::read_dir(dir.path().join("out/cache"))
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    std::fs::write(&cache, b"not a kernel").unwrap();
    assert!(kamlab(dir.path(), &["--config", "run.toml", "critical"])
        .status
        .success());
    assert_eq!(status(dir.path()), "rebuilt");
}

#[test]
fn boundary_data_must_sit_on_representatives_and_be_dominated() {
    let dir = setup(TWO_WELL);
    assert!(kamlab(dir.path(), &["--config", "run.toml", "aubry"])
        .status
        .success());
    let aubry = json(&dir.path().join("out/aubry.json"));
    let reps: Vec<u64> = aubry["representatives"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(reps.len(), 2);

    std::fs::write(
        dir.path().join("ok.csv"),
        format!("node,value\n{},0\n{},0\n", reps[0], reps[1]),
    )
    .unwrap();
    let o = kamlab(
        dir.path(),
        &["--config", "run.toml", "solve", "--boundary", "ok.csv"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = json(&dir.path().join("out/verification.json"));
    assert!(report["report"]["fixed_point_residual"].as_f64().unwrap() <= 1e-9);

    std::fs::write(
        dir.path().join("steep.csv"),
        format!("{},0\n{},100\n", reps[0], reps[1]),
    )
    .unwrap();
    let o = kamlab(
        dir.path(),
        &["--config", "run.toml", "solve", "--boundary", "steep.csv"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("dominat"), "{}", stderr(&o));

    let off = (0..256u64).find(|n| !reps.contains(n)).unwrap();
    std::fs::write(dir.path().join("off.csv"), format!("{off},0\n")).unwrap();
    let o = kamlab(
        dir.path(),
        &["--config", "run.toml", "solve", "--boundary", "off.csv"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("representative"), "{}", stderr(&o));
}

#[test]
fn solution_round_trips_through_verify() {
    let dir = setup(TWO_WELL);
    assert!(kamlab(dir.path(), &["--config", "run.toml", "aubry"])
        .status
        .success());
    let rep = json(&dir.path().join("out/aubry.json"))["representatives"][0]
        .as_u64()
        .unwrap();
    std::fs::write(dir.path().join("f.csv"), format!("{rep},0\n")).unwrap();
    assert!(kamlab(
        dir.path(),
        &["--config", "run.toml", "solve", "--boundary", "f.csv"]
    )
    .status
    .success());
    let solved = json(&dir.path().join("out/verification.json"));
    assert!(kamlab(
        dir.path(),
        &[
            "--config",
            "run.toml",
            "verify",
            "--solution",
            "out/solution.csv"
        ]
    )
    .status
    .success());
    let verified = json(&dir.path().join("out/verification.json"));
    let residual = |v: &Value| v["report"]["fixed_point_residual"].as_f64().unwrap();
    // the CSV keeps 12 significant digits
    assert!((residual(&solved) - residual(&verified)).abs() <= 1e-9);
}

#[test]
fn invalid_configuration_names_the_field() {
    let dir = setup(&TWO_WELL.replace("n = 32", "n = -4"));
    let o = kamlab(dir.path(), &["--config", "run.toml", "critical"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("lattice.n"), "{}", stderr(&o));
}

#[test]
fn output_directory_override_does_not_change_the_hash() {
    let dir = setup(TWO_WELL);
    assert!(kamlab(dir.path(), &["--config", "run.toml", "selftest"])
        .status
        .success());
    let o = Command::new(env!("CARGO_BIN_EXE_kamlab"))
        .current_dir(dir.path())
        .env("KAMLAB_OUTPUT_DIR", dir.path().join("elsewhere"))
        .args(["--config", "run.toml", "selftest"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let a = json(&dir.path().join("out/selftest.manifest.json"));
    let b = json(&dir.path().join("elsewhere/selftest.manifest.json"));
    assert_eq!(a["config_hash"], b["config_hash"]);
    assert_eq!(a["outputs"], b["outputs"]);
}
