use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_stoch-csf");

const LINEAR: &str = r#"
name = "lin"
n_modes = 32
horizon = 0.02
epsilon = 0.0
record_every = 5
init = "single_mode"
init_amplitude = 1e-3
"#;

const NOISY: &str = r#"
name = "ens"
n_modes = 8
horizon = 0.3
epsilon = 1.0
delta = 0.1
seed = 40
atoms = [[0.3, 3.0], [-0.3, 3.0]]
density_alpha = 1.5
density_c = 0.2
init = "random_smooth"
init_decay = 2.0
init_amplitude = 0.1
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("cfg.toml");
    fs::write(&p, text).unwrap();
    p
}

fn run_cli(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn manifest(path: &Path) -> BTreeMap<String, String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[test]
fn linear_demo_decays_at_heat_rate() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), LINEAR);
    let out = dir.path().join("out");
    let o = run_cli(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("lin.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,H2,V2,cum_diss,cum_trunc,n_jumps"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    let (first, last) = (&rows[0], rows.last().unwrap());
    assert_eq!(last[0], 0.02);
    let ratio = last[2] / first[2];
    let expect = (-8.0 * PI * PI * 0.02f64).exp();
    assert!((ratio / expect - 1.0).abs() < 0.01, "{ratio} vs {expect}");
    assert_eq!(fs::read_to_string(out.join("lin.jumps")).unwrap(), "");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), NOISY);
    let mut csvs = Vec::new();
    for sub in ["a", "b"] {
        let out = dir.path().join(sub);
        let o = run_cli(&[
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--check",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        csvs.push((
            fs::read(out.join("ens.csv")).unwrap(),
            fs::read(out.join("ens.jumps")).unwrap(),
        ));
    }
    assert_eq!(csvs[0], csvs[1]);
    assert!(!csvs[0].1.is_empty());
}

#[test]
fn seed_flag_overrides_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), NOISY);
    let jumps = |seed: &str, sub: &str| {
        let out = dir.path().join(sub);
        let o = run_cli(&[
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            seed,
        ]);
        assert!(o.status.success());
        assert_eq!(manifest(&out.join("ens.manifest"))["seed"], seed);
        fs::read_to_string(out.join("ens.jumps")).unwrap()
    };
    assert_ne!(jumps("1", "a"), jumps("2", "b"));
}

#[test]
fn manifest_checksums_match_files() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), &format!("{NOISY}snapshot_every = 200\n"));
    let out = dir.path().join("out");
    let o = run_cli(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--check",
        "--emit-svg",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out.join("ens.manifest"));
    let sums: Vec<_> = m.iter().filter(|(k, _)| k.starts_with("sha256.")).collect();
    let names: Vec<_> = sums
        .iter()
        .map(|(k, _)| k.trim_start_matches("sha256."))
        .collect();
    for ext in ["csv", "jumps", "snap", "svg", "report"] {
        assert!(
            names.contains(&format!("ens.{ext}").as_str()),
            "{ext} missing from manifest"
        );
    }
    for (k, v) in sums {
        let bytes = fs::read(out.join(k.trim_start_matches("sha256."))).unwrap();
        assert_eq!(&hex::encode(Sha256::digest(&bytes)), v);
    }
    assert_eq!(
        m["code_version"],
        format!("stoch-csf {}", env!("CARGO_PKG_VERSION"))
    );
    assert_eq!(m["config.n_modes"], "8");
    assert!(m.contains_key("s2_delta"));
    assert_eq!(m["verdict.h_decay_bound"], "pass");
    let csv = fs::read_to_string(out.join("ens.csv")).unwrap();
    assert!(csv.starts_with("t,H2,V2,cum_diss,cum_trunc,n_jumps,L1dx,L1dxx\n"));
    assert!(fs::read_to_string(out.join("ens.snap"))
        .unwrap()
        .starts_with("# t=0\n"));
}

#[test]
fn ensemble_reports_pass_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), NOISY);
    let out = dir.path().join("out");
    let o = run_cli(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--paths",
        "10",
        "--workers",
        "2",
        "--check",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out.join("ens.manifest"));
    assert_eq!(m["verdict.h_decay_bound"], "h_decay_bound passes 10/10");
    assert_eq!(m["paths"], "10");
    assert_eq!(m["seeds"], "40,41,42,43,44,45,46,47,48,49");
    for i in 0..10 {
        assert!(out.join(format!("ens_p{i:04}.csv")).exists());
        assert!(m.contains_key(&format!("sha256.ens_p{i:04}.csv")));
    }
    let report = manifest(&out.join("ens.report"));
    assert_eq!(report["verdict.h_decay_bound"], "passes 10/10");

    // a path of the ensemble equals the single run with its seed
    let single = dir.path().join("single");
    let o = run_cli(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        single.to_str().unwrap(),
        "--seed",
        "43",
        "--check",
    ]);
    assert!(o.status.success());
    assert_eq!(
        fs::read(single.join("ens.csv")).unwrap(),
        fs::read(out.join("ens_p0003.csv")).unwrap()
    );
}

fn expect_config_error(text: &str, needles: &[&str]) {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), text);
    let o = run_cli(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    for n in needles {
        assert!(err.contains(n), "{err} lacks {n}");
    }
}

#[test]
fn config_errors_exit_2() {
    expect_config_error(
        &format!("{LINEAR}epsilon = -1.0\n").replace("epsilon = 0.0\n", ""),
        &["epsilon must be positive"],
    );
    expect_config_error(
        &NOISY.replace("density_alpha = 1.5", "density_alpha = 2.5"),
        &["density_alpha", "second-moment condition"],
    );
    expect_config_error(&format!("{LINEAR}dt = 0.1\n"), &["dt: unknown key"]);
    expect_config_error(&LINEAR.replace("n_modes = 32", "n_modes = 0"), &["n_modes"]);
    expect_config_error(
        &LINEAR.replace(
            "init_amplitude = 1e-3",
            "init_k = 40\ninit_amplitude = 1e-3",
        ),
        &["init_k"],
    );
    expect_config_error(
        "init = \"single_mode\"\ninit_amplitude = 1e-3\natoms = [[0.0, 1.0]]\n",
        &["atoms"],
    );
    expect_config_error("this is = not toml [", &["config error"]);
}

#[test]
fn io_errors_exit_4() {
    let dir = TempDir::new().unwrap();
    let o = run_cli(&[
        "--config",
        dir.path().join("missing.toml").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4));
    let cfg = write_config(dir.path(), LINEAR);
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = run_cli(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        blocker.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn blow_up_exits_3() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        &LINEAR.replace("init_amplitude = 1e-3", "init_amplitude = 1e307"),
    );
    let o = run_cli(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}
