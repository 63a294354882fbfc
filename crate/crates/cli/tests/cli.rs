use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cdssm_cli::RunConfig;
use tempfile::TempDir;

const OU: &str = r#"
seed = 3
[model]
kind = "ou"
theta = 1.0
sigma = 0.5
[observation]
var = 0.1
[schedule]
delta = 0.5
len = 50
[method]
kind = "bm"
particles = 200
n_steps = 10
[smooth]
draws = 3
"#;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cdssm"));
    cmd.env_remove("CDSSM_SEED");
    cmd
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(sub)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn data_rows(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(String::from)
        .collect()
}

fn simulated(dir: &TempDir, text: &str) -> (PathBuf, PathBuf) {
    let cfg = write_config(dir.path(), "run.toml", text);
    let out = dir.path().join("out");
    assert_eq!(code(&run("simulate", &cfg, &out, &[])), 0);
    (cfg, out)
}

#[test]
fn simulate_writes_header_and_one_record_per_time() {
    let dir = TempDir::new().unwrap();
    let (cfg, out) = simulated(&dir, OU);
    let text = std::fs::read_to_string(out.join("data.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 51);
    let header: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(header["seed"], 3);
    assert_eq!(header["model"], "ou");
    let last: serde_json::Value = serde_json::from_str(lines[50]).unwrap();
    assert_eq!(last["t"], 50);
    assert_eq!(last["s"], 25.0);

    let again = dir.path().join("again");
    assert_eq!(code(&run("simulate", &cfg, &again, &[])), 0);
    assert_eq!(text, std::fs::read_to_string(again.join("data.jsonl")).unwrap());

    let other = dir.path().join("other");
    assert_eq!(code(&run("simulate", &cfg, &other, &["--seed", "4"])), 0);
    assert_ne!(text, std::fs::read_to_string(other.join("data.jsonl")).unwrap());

    let env = dir.path().join("env");
    let o = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&env)
        .env("CDSSM_SEED", "4")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(
        std::fs::read_to_string(other.join("data.jsonl")).unwrap(),
        std::fs::read_to_string(env.join("data.jsonl")).unwrap()
    );
}

#[test]
fn invalid_configurations_exit_with_code_2() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let cases = [
        (
            "ibm_fm",
            "[model]\nkind = \"ibm\"\n[schedule]\ndelta = 1.0\nlen = 5\n[method]\nkind = \"fm\"\n",
        ),
        (
            "fhn_fm",
            "[model]\nkind = \"fhn\"\n[schedule]\ndelta = 1.0\nlen = 5\n[method]\nkind = \"fm\"\n",
        ),
        (
            "fhn_dh",
            "[model]\nkind = \"fhn\"\n[schedule]\ndelta = 1.0\nlen = 5\n[method]\nbridge = \"delyon_hu\"\n",
        ),
        (
            "unknown_key",
            "[model]\nkind = \"ou\"\nspeed = 2.0\n[schedule]\ndelta = 1.0\nlen = 5\n",
        ),
        (
            "unknown_top",
            "colour = 1\n[model]\nkind = \"ou\"\n[schedule]\ndelta = 1.0\nlen = 5\n",
        ),
        (
            "bad_coord",
            "[model]\nkind = \"ou\"\n[observation]\ncoordinates = [1]\n[schedule]\ndelta = 1.0\nlen = 5\n",
        ),
    ];
    for (name, text) in cases {
        let cfg = write_config(dir.path(), &format!("{name}.toml"), text);
        let o = run("simulate", &cfg, &out, &[]);
        assert_eq!(code(&o), 2, "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = run("simulate", &dir.path().join("missing.toml"), &out, &[]);
    assert_eq!(code(&o), 2);
}

#[test]
fn filter_rows_hash_and_thread_invariance() {
    let dir = TempDir::new().unwrap();
    let (cfg, out) = simulated(&dir, OU);
    let data = out.join("data.jsonl");
    let one = dir.path().join("one");
    let three = dir.path().join("three");
    let d = data.to_str().unwrap();
    assert_eq!(code(&run("filter", &cfg, &one, &["--data", d, "--threads", "1"])), 0);
    assert_eq!(code(&run("filter", &cfg, &three, &["--data", d, "--threads", "3"])), 0);
    let a = std::fs::read_to_string(one.join("filter.csv")).unwrap();
    assert_eq!(a, std::fs::read_to_string(three.join("filter.csv")).unwrap());

    let hash = RunConfig::from_toml(OU).unwrap().hash();
    assert_eq!(a.lines().next().unwrap(), format!("# config_hash={hash} seed=3"));
    let rows = data_rows(&one.join("filter.csv"));
    assert_eq!(rows.len(), 50);
    assert!(rows[49].starts_with("50,25.0,"));

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(one.join("filter_summary.json")).unwrap()).unwrap();
    let ll = summary["log_likelihood"].as_f64().unwrap();
    let kalman = summary["kalman_log_likelihood"].as_f64().unwrap();
    assert!((ll - kalman).abs() < 5.0, "{ll} vs {kalman}");
}

#[test]
fn data_not_matching_the_schedule_is_rejected() {
    let dir = TempDir::new().unwrap();
    let (_, out) = simulated(&dir, OU);
    let short = write_config(dir.path(), "short.toml", &OU.replace("len = 50", "len = 40"));
    let o = run("filter", &short, &out, &[]);
    assert_eq!(code(&o), 2);
}

#[test]
fn smooth_draws_and_empty_request() {
    let dir = TempDir::new().unwrap();
    let (cfg, out) = simulated(&dir, OU);
    assert_eq!(code(&run("smooth", &cfg, &out, &[])), 0);
    let rows = data_rows(&out.join("smooth.csv"));
    assert_eq!(rows.len(), 3 * 50);
    let text = std::fs::read_to_string(out.join("smooth.csv")).unwrap();
    assert_eq!(text.lines().last().unwrap(), "# max_continuity_gap=0");

    let none = write_config(dir.path(), "none.toml", &OU.replace("draws = 3", "draws = 0"));
    assert_eq!(code(&run("smooth", &none, &out, &[])), 0);
    let text = std::fs::read_to_string(out.join("smooth.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert_eq!(text.lines().nth(1).unwrap(), "draw,t,s,x_0");

    let boot = write_config(
        dir.path(),
        "boot.toml",
        &OU.replace("kind = \"bm\"", "kind = \"bootstrap\""),
    );
    assert_eq!(code(&run("smooth", &boot, &out, &[])), 2);
}

fn infer_config(algorithm: &str) -> String {
    OU.replace("len = 50", "len = 10")
        .replace("particles = 200", "particles = 30")
        + &format!(
            r#"
[infer]
algorithm = "{algorithm}"
n_iter = 15
params = [
  {{ name = "theta", init = 1.0, prior = {{ kind = "log_normal", mean = 0.0, sd = 1.0 }}, step = 0.2 }},
  {{ name = "mu", init = 0.0, prior = {{ kind = "normal", mean = 0.0, sd = 1.0 }}, step = 0.2 }},
]
"#
        )
}

#[test]
fn infer_chain_has_one_row_per_iteration() {
    for algorithm in ["pmmh", "gibbs"] {
        let dir = TempDir::new().unwrap();
        let (cfg, out) = simulated(&dir, &infer_config(algorithm));
        let o = run("infer", &cfg, &out, &[]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let text = std::fs::read_to_string(out.join("chain.csv")).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "iter,theta,mu,log_post,accepted");
        let rows = data_rows(&out.join("chain.csv"));
        assert_eq!(rows.len(), 15, "{algorithm}");
        for row in &rows {
            let theta: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
            assert!(theta > 0.0);
        }
    }
}

#[test]
fn infer_rejects_unknown_parameter() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.toml",
        &infer_config("pmmh").replace("name = \"mu\"", "name = \"nu\""),
    );
    assert_eq!(code(&run("simulate", &cfg, &dir.path().join("out"), &[])), 2);
}

#[test]
fn degenerate_weights_exit_3_with_partial_rows() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "dw.toml",
        "[model]\nkind = \"double_well\"\nsigma = 100.0\n[schedule]\ndelta = 5.0\nlen = 6\n\
         [method]\nkind = \"bootstrap\"\nparticles = 50\nn_steps = 1\n",
    );
    let data = dir.path().join("dw.jsonl");
    let lines: Vec<String> = (1..=6)
        .map(|t| format!("{{\"t\":{t},\"s\":{},\"y\":[0.0]}}", 5.0 * t as f64))
        .collect();
    std::fs::write(&data, lines.join("\n")).unwrap();
    let out = dir.path().join("out");
    let o = run("filter", &cfg, &out, &["--data", data.to_str().unwrap()]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("filter.csv")).unwrap();
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("# error: "), "{last}");
    let rows = data_rows(&out.join("filter.csv"));
    assert!(!rows.is_empty() && rows.len() < 6);
    for (k, row) in rows.iter().enumerate() {
        assert!(row.starts_with(&format!("{},", k + 1)));
    }
}
