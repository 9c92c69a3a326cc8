use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use flce_cli::{config_to_toml, parse_config};

const MINIMAL: &str = r#"
seed = 3

[federation]
clients = 5
per_round = 3
rounds = 4

[data]
classes = 3
input_dim = 4
per_class = 20
test_per_class = 10

[model]
hidden_dims = [8]
repr_dim = 4

[train]
batch_size = 8
"#;

fn flce(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flce")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn simulate(dir: &Path, config: &str, out: &str, extra: &[&str]) -> String {
    let out = dir.join(out).display().to_string();
    let mut args = vec!["simulate", "--config", config, "--out", &out];
    args.extend_from_slice(extra);
    let o = flce(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|row| row.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn minimal_simulation_writes_five_contributions() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", MINIMAL);
    let out = simulate(tmp.path(), &cfg, "run", &[]);
    let rows = csv_rows(&Path::new(&out).join("contributions.csv"));
    assert_eq!(rows.len(), 5);
    let total: f64 = rows.iter().map(|r| r[1].parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    for f in ["config.json", "record.json", "rounds.csv", "tensor.bin", "tensor.csv", "metrics.csv"] {
        assert!(Path::new(&out).join(f).exists(), "{f} missing");
    }
    let raw = fs::read(Path::new(&out).join("rounds.csv")).unwrap();
    assert!(raw.starts_with(b"round,client,alpha,selected\r\n"));
}

#[test]
fn unknown_key_exits_one_naming_it() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &format!("foo = 1\n{MINIMAL}"));
    let o = flce(&["simulate", "--config", &cfg, "--out", &tmp.path().join("r").display().to_string()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("foo"));
}

#[test]
fn invalid_value_exits_one_naming_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &MINIMAL.replace("per_round = 3", "per_round = 9"));
    let o = flce(&["simulate", "--config", &cfg, "--out", &tmp.path().join("r").display().to_string()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("federation.per_round"));
}

#[test]
fn diverging_training_exits_two_naming_round() {
    let tmp = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace("batch_size = 8", "batch_size = 8\nlearning_rate = 1e300");
    let cfg = write_config(tmp.path(), "c.toml", &text);
    let o = flce(&["simulate", "--config", &cfg, "--out", &tmp.path().join("r").display().to_string()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("round 0"));
}

#[test]
fn repeated_invocation_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", MINIMAL);
    let a = simulate(tmp.path(), &cfg, "a", &[]);
    let b = simulate(tmp.path(), &cfg, "b", &[]);
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(Path::new(&a).join(&name)).unwrap(), fs::read(Path::new(&b).join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn print_config_round_trips() {
    let cfg = parse_config(MINIMAL).unwrap();
    let echoed = config_to_toml(&cfg).unwrap();
    assert_eq!(parse_config(&echoed).unwrap(), cfg);
    let o = flce(&["print-config"]);
    assert!(o.status.success());
    let default = parse_config(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(default, flce::RunConfig::default());
}

#[test]
fn compare_against_self_and_volume() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", MINIMAL);
    let a = simulate(tmp.path(), &cfg, "a", &[]);
    let b = simulate(tmp.path(), &cfg, "b", &["--method", "fedavg"]);

    let out = tmp.path().join("self.csv").display().to_string();
    let o = flce(&["compare", "--runs", &a, "--reference", &format!("shapley:{a}/contributions.csv"), "--out", &out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(Path::new(&out));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][1].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rows[0][2].parse::<f64>().unwrap(), 0.0);

    let out = tmp.path().join("vol.csv").display().to_string();
    let o = flce(&["compare", "--runs", &a, &b, "--reference", "volume", "--out", &out]);
    assert!(o.status.success());
    let rows = csv_rows(Path::new(&out));
    assert_eq!(rows.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["flce", "fedavg"]);
    // Data-volume contributions equal the volume reference exactly.
    assert!(rows[1][1].parse::<f64>().unwrap().abs() < 1e-12);
    assert!(fs::read(&out).unwrap().starts_with(b"method,kl,euclidean,run\r\n"));

    let o = flce(&["compare", "--runs", &a, "--reference", "shapley:/nonexistent/phi.csv", "--out", &out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/phi.csv"));
}

#[test]
fn gradcheck_passes_and_corruption_exits_three() {
    let o = flce(&["gradcheck", "--seed", "0"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("instance ")).count(), 10);

    let o = flce(&["gradcheck", "--seed", "5", "--corrupt"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed 5"));
}

#[test]
fn report_writes_four_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &MINIMAL.replace("rounds = 4", "rounds = 1"));
    let run = simulate(tmp.path(), &cfg, "run", &[]);
    let o = flce(&["report", "--run", &run]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = Path::new(&run).join("report");
    let headers = [
        ("kl_per_method.csv", "method,reference,kl,euclidean"),
        ("accuracy_per_round.csv", "round,accuracy,macro_f1"),
        ("class_contributions.csv", "client,class,contribution"),
        ("communication.csv", "prototype_floats,model_params,ratio"),
    ];
    for (file, header) in headers {
        let raw = fs::read_to_string(dir.join(file)).unwrap();
        assert_eq!(raw.split("\r\n").next().unwrap(), header, "{file}");
    }
    assert_eq!(csv_rows(&dir.join("accuracy_per_round.csv")).len(), 1);
    assert_eq!(csv_rows(&dir.join("class_contributions.csv")).len(), 5 * 3);

    let o = flce(&["report", "--run", &tmp.path().join("missing").display().to_string()]);
    assert_eq!(o.status.code(), Some(2));
}
