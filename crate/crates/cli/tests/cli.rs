use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fxpremium::{synthetic_market, write_market_csv, DiffusionParams, OUParams, SyntheticMarket};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fxpremium"));
    c.env_remove("FXPREMIUM_CONFIG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn market_csv(dir: &Path, name: &str, n: usize) -> PathBuf {
    let spec = SyntheticMarket::new(
        n,
        OUParams::new(5.0, 0.0, 0.05).unwrap(),
        DiffusionParams::new(0.10).unwrap(),
        3,
    );
    let path = dir.join(name);
    let mut buf = Vec::new();
    write_market_csv(&synthetic_market(&spec), &mut buf).unwrap();
    fs::write(&path, buf).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fit_writes_parameter_file() {
    let dir = TempDir::new().unwrap();
    let data = market_csv(dir.path(), "m.csv", 1500);
    let out = dir.path().join("out");
    let before = fs::read(&data).unwrap();
    let o = run(&[
        "fit",
        "--data",
        s(&data),
        "--horizon",
        "21",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let params = fs::read_to_string(out.join("params_21d.txt")).unwrap();
    for key in [
        "theta",
        "mu",
        "sigma_k",
        "sigma_s",
        "delta_t",
        "n_obs",
        "log_likelihood",
        "fit_date",
    ] {
        assert!(
            params.lines().any(|l| l.starts_with(&format!("{key} = "))),
            "{key}"
        );
    }
    assert!(text(&o.stdout).contains("theta ="));
    assert_eq!(fs::read(&data).unwrap(), before);
}

#[test]
fn constant_spot_is_a_fit_error() {
    let dir = TempDir::new().unwrap();
    let dates = market_csv(dir.path(), "m.csv", 300);
    let mut csv = String::from("date,spot,us_yield,kr_yield\n");
    for line in fs::read_to_string(dates).unwrap().lines().skip(1) {
        let d = line.split(',').next().unwrap();
        csv.push_str(&format!("{d},1200,0.02,0.02\n"));
    }
    let data = dir.path().join("flat.csv");
    fs::write(&data, csv).unwrap();
    let o = run(&[
        "fit",
        "--data",
        s(&data),
        "--horizon",
        "21",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 3);
    let err = text(&o.stderr);
    assert!(err.contains("\"error\":\"NonStationaryFit\""), "{err}");
}

#[test]
fn missing_file_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let o = run(&[
        "fit",
        "--data",
        s(&dir.path().join("absent.csv")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 2);
    let err = text(&o.stderr);
    let json = err.lines().last().unwrap();
    let v: serde_json::Value = serde_json::from_str(json).unwrap();
    assert_eq!(v["exit_code"], 2);
}

fn fit_21(dir: &Path, data: &Path) -> PathBuf {
    let o = run(&["fit", "--data", s(data), "--horizon", "21", "--out", s(dir)]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    dir.join("params_21d.txt")
}

fn parse_record(csv: &str) -> (Vec<String>, Vec<String>) {
    let mut lines = csv.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let row = lines.next().unwrap().split(',').map(String::from).collect();
    (header, row)
}

#[test]
fn forecast_emits_seven_nested_bands() {
    let dir = TempDir::new().unwrap();
    let data = market_csv(dir.path(), "m.csv", 1500);
    let params = fit_21(dir.path(), &data);
    let o = run(&[
        "forecast",
        "--data",
        s(&data),
        "--params",
        s(&params),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let (header, row) = parse_record(&text(&o.stdout));
    assert_eq!(header.len(), 4 + 14);
    assert_eq!(header[4], "lower_50");
    assert_eq!(header[17], "upper_99");
    assert_eq!(row[1], "21");
    let bounds: Vec<f64> = row[4..].iter().map(|x| x.parse().unwrap()).collect();
    for w in bounds.chunks(2).collect::<Vec<_>>().windows(2) {
        assert!(w[1][0] <= w[0][0] && w[0][1] <= w[1][1]);
    }
    assert!(dir.path().join("forecast_21d.csv").exists());
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("forecast_21d.json")).unwrap())
            .unwrap();
    assert_eq!(json["bands"].as_array().unwrap().len(), 7);
}

#[test]
fn zero_horizon_collapses_onto_spot() {
    let dir = TempDir::new().unwrap();
    let data = market_csv(dir.path(), "m.csv", 600);
    let params = fit_21(dir.path(), &data);
    let o = run(&[
        "forecast",
        "--data",
        s(&data),
        "--params",
        s(&params),
        "--horizon",
        "0",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let (_, row) = parse_record(&text(&o.stdout));
    let last_line = fs::read_to_string(&data)
        .unwrap()
        .lines()
        .last()
        .unwrap()
        .to_string();
    let spot: f64 = last_line.split(',').nth(1).unwrap().parse().unwrap();
    for b in &row[4..] {
        assert_eq!(b.parse::<f64>().unwrap(), spot);
    }
}

#[test]
fn premium_off_leaves_only_diffusion_width() {
    let dir = TempDir::new().unwrap();
    let data = market_csv(dir.path(), "m.csv", 300);
    let params = dir.path().join("p.txt");
    fs::write(
        &params,
        "theta = 3\nmu = 0\nsigma_k = 0\nsigma_s = 0.1\ndelta_t = 0.003968253968253968\n\
         n_obs = 100\nlog_likelihood = 0\nfit_date = 2011-01-03\n",
    )
    .unwrap();
    let o = run(&[
        "forecast",
        "--data",
        s(&data),
        "--params",
        s(&params),
        "--horizon",
        "63",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    let (_, row) = parse_record(&text(&o.stdout));
    let var: f64 = row[3].parse().unwrap();
    assert!((var - 0.01 * 0.25).abs() < 1e-15, "{var}");
}

#[test]
fn short_backtest_keeps_partial_results() {
    let dir = TempDir::new().unwrap();
    let data = market_csv(dir.path(), "m.csv", 100);
    let out = dir.path().join("bt");
    let o = run(&["backtest", "--data", s(&data), "--out", s(&out)]);
    assert_ne!(code(&o), 0);
    let table = fs::read_to_string(out.join("coverage_table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(
        lines[0],
        "Confidence Level,2-Week,1-Month,3-Month,6-Month,1-Year"
    );
    assert_eq!(lines.len(), 8);
    let cells: Vec<&str> = lines[1].split(',').collect();
    assert!(cells[1].ends_with('%'));
    assert!(cells[3..].iter().all(|c| *c == "n/a"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("backtest_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["horizons"][0]["status"], "ok");
    assert_eq!(report["horizons"][4]["status"], "error");
    assert!(text(&o.stderr).contains("has no origin with a realized outcome"));
}

#[test]
fn reruns_rewrite_identical_outputs() {
    let dir = TempDir::new().unwrap();
    let data = market_csv(dir.path(), "m.csv", 800);
    let read = |p: &Path| fs::read(p).unwrap();
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let out = dir.path().join("o");
        assert_eq!(
            code(&run(&[
                "fit",
                "--data",
                s(&data),
                "--horizon",
                "10,21",
                "--out",
                s(&out)
            ])),
            0
        );
        let bt = run(&[
            "backtest",
            "--data",
            s(&data),
            "--horizon",
            "10,21",
            "--out",
            s(&out),
        ]);
        assert_eq!(code(&bt), 0, "{}", text(&bt.stderr));
        let sim = run(&[
            "simulate",
            "--paths",
            "3000",
            "--out",
            s(&out),
            "--threads",
            "2",
        ]);
        assert_eq!(code(&sim), 0, "{}", text(&sim.stderr));
        snapshots.push(
            [
                "params_10d.txt",
                "params_21d.txt",
                "coverage_table.csv",
                "backtest_report.json",
                "mc_gaps.csv",
            ]
            .map(|f| read(&out.join(f))),
        );
    }
    assert_eq!(snapshots[0], snapshots[1]);
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let dir = TempDir::new().unwrap();
    let data = market_csv(dir.path(), "m.csv", 800);
    let out = dir.path().join("cfg");
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        format!(
            "# run settings\ndata = {}\nout = {}\nhorizon = 10\n",
            s(&data),
            s(&out)
        ),
    )
    .unwrap();

    let o = bin()
        .args(["fit"])
        .env("FXPREMIUM_CONFIG", &cfg)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    assert!(out.join("params_10d.txt").exists());
    assert!(!out.join("params_21d.txt").exists());

    let o = run(&["fit", "--config", s(&cfg), "--horizon", "21"]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    assert!(out.join("params_21d.txt").exists());

    fs::write(&cfg, "colour = red\n").unwrap();
    assert_eq!(code(&run(&["fit", "--config", s(&cfg)])), 2);
}

#[test]
fn simulate_reports_gaps() {
    let dir = TempDir::new().unwrap();
    let o = run(&["simulate", "--paths", "20000", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", text(&o.stderr));
    assert!(text(&o.stdout).contains("PASS: 5 of 5"));
    let gaps = fs::read_to_string(dir.path().join("mc_gaps.csv")).unwrap();
    assert_eq!(gaps.lines().count(), 6);

    let o = run(&["simulate", "--paths", "1", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0);
    assert!(text(&o.stderr).contains("no usable standard error"));

    let o = run(&[
        "simulate",
        "--paths",
        "20000",
        "--scheme",
        "euler",
        "--dt",
        "1/12",
        "--sigma-k",
        "0.6",
        "--k0",
        "0.3",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 0);
    assert!(text(&o.stderr).contains("Euler"));
}

#[test]
fn help_documents_protocol_defaults() {
    for sub in ["fit", "backtest", "simulate"] {
        let h = text(&run(&[sub, "--help"]).stdout);
        assert!(h.contains("10,21,63,126,252"), "{sub}");
    }
    for sub in ["forecast", "backtest"] {
        let h = text(&run(&[sub, "--help"]).stdout);
        assert!(h.contains("0.5,0.6,0.7,0.8,0.9,0.95,0.99"), "{sub}");
    }
    assert!(text(&run(&["backtest", "--help"]).stdout).contains("[default: 0.8]"));
}
