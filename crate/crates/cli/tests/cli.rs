use std::path::Path;
use std::process::{Command, Output};

fn hypercut(args: &[&str], workers: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hypercut"));
    cmd.args(args);
    match workers {
        Some(w) => cmd.env("HYPERCUT_WORKERS", w),
        None => cmd.env_remove("HYPERCUT_WORKERS"),
    };
    cmd.output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL_CUTOFF: &str = "kind = geodesic-cutoff
delta = e^-3
t_grid = 0.5:1.5:3
t_scale = cutoff
n_samples = 20000
m = 16
seed = 11
";

#[test]
fn geodesic_cutoff_outputs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut csvs = Vec::new();
    for (i, workers) in [Some("1"), Some("1"), Some("3"), None].into_iter().enumerate() {
        let cfg = write(dir.path(), &format!("run{i}.cfg"), &format!("{SMALL_CUTOFF}output = out{i}/cutoff\n"));
        let out = hypercut(&["geodesic-cutoff", "--config", &cfg], workers);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        csvs.push(std::fs::read(dir.path().join(format!("out{i}/cutoff.csv"))).unwrap());
        let json = std::fs::read_to_string(dir.path().join(format!("out{i}/cutoff.json"))).unwrap();
        assert!(json.contains("\"per_delta\""));
    }
    assert!(csvs.windows(2).all(|w| w[0] == w[1]));
    let text = String::from_utf8(csvs[0].clone()).unwrap();
    assert_eq!(text.lines().next().unwrap(), "label,delta,t,tv_raw,tv_regularized,bias_note,support_lower_bound");
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn input_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.cfg", "kind = geodesic-cutoff\ndelta = 0.1\nt_grid = 2, 1\n");
    assert_eq!(hypercut(&["geodesic-cutoff", "--config", &bad], None).status.code(), Some(3));
    let wrong_kind = write(dir.path(), "nu.cfg", "kind = nu-table\nlambda_grid = 0\nt_grid = 1\n");
    assert_eq!(hypercut(&["geodesic-cutoff", "--config", &wrong_kind], None).status.code(), Some(3));
    assert_eq!(hypercut(&["geodesic-cutoff", "--config", "/nonexistent.cfg"], None).status.code(), Some(3));
    assert_eq!(hypercut(&["nu", "--d", "2"], None).status.code(), Some(3));
    assert_eq!(hypercut(&["frobnicate"], None).status.code(), Some(3));
    let ok = write(dir.path(), "ok.cfg", SMALL_CUTOFF);
    assert_eq!(hypercut(&["geodesic-cutoff", "--config", &ok], Some("0")).status.code(), Some(3));
    // δ above the injectivity radius at the centre
    let big = write(dir.path(), "big.cfg", "kind = geodesic-cutoff\ndelta = 2\nt_grid = 1\nn_samples = 10000\n");
    assert_eq!(hypercut(&["geodesic-cutoff", "--config", &big], None).status.code(), Some(3));
    assert_eq!(hypercut(&["--help"], None).status.code(), Some(0));
}

#[test]
fn nu_table_csv() {
    let out = hypercut(&["nu", "--d", "3", "--lambda-grid", "0,1,5", "--t-grid", "0.1:1:2"], None);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 7);
    assert!(lines[0].starts_with("d,lambda,t,value"));
    assert!(lines[1..].iter().all(|l| l.ends_with(",ok")));
    let first: Vec<&str> = lines[1].split(',').collect();
    assert!((first[3].parse::<f64>().unwrap() - 1.0).abs() < 1e-10);
}

#[test]
fn spectrum_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let mut table = String::from("# d=2 V=10000\n0\n");
    table.push_str("0.1875,100\n2.5,4\n");
    let path = write(dir.path(), "fixture.txt", &table);
    let out = hypercut(&["spectrum", "check", "--table", &path], None);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("complementary 100"));

    let out = hypercut(&["spectrum", "profile", "--table", &path, "--s-grid", "0.25,0.5,0.75"], None);
    let text = String::from_utf8(out.stdout).unwrap();
    let flagged: Vec<&str> = text.lines().skip(1).filter(|l| l.ends_with(",true")).collect();
    assert_eq!(flagged.len(), 1);
    assert!(flagged[0].starts_with("0.5,"));

    let coeffs = write(dir.path(), "coeffs.txt", "1\n0.01\n0.02\n");
    let prefix = dir.path().join("bound");
    let out = hypercut(
        &["spectrum", "tvbound", "--table", &path, "--delta", "e^-4", "--t-grid", "0.5:80:160", "--coeffs", &coeffs, "--output", prefix.to_str().unwrap()],
        None,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(prefix.with_extension("csv")).unwrap();
    assert_eq!(csv.lines().count(), 161);
    assert!(String::from_utf8_lossy(&out.stdout).contains("coarse crossing"));

    let broken = write(dir.path(), "broken.txt", "# d=2 V=1\n0.3\n");
    assert_eq!(hypercut(&["spectrum", "check", "--table", &broken], None).status.code(), Some(2));
}
