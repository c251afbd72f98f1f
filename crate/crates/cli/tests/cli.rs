use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cclab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cclab")).args(args).output().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("cclab-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_lists_every_subcommand() {
    let o = cclab(&["--help"]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in [
        "dist", "volume", "doubling", "poincare", "heat", "gaussfit", "lift-check", "harnack", "flow", "schauder", "acceptance",
        "plot-data",
    ] {
        assert!(text.contains(sub), "missing {sub}");
    }
}

#[test]
fn volume_run_then_plot_data() {
    let out = scratch("vol");
    let o = cclab(&["volume", "--eps-list", "0,0.5", "--r-list", "0.1", "--samples", "10000", "--seed", "3", "--no-cache", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("volume.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    // ε runs largest first whatever order was given
    assert!(rows[0].starts_with("heisenberg1,0.5,"));
    assert!(rows.last().unwrap().starts_with("heisenberg1,0,"));
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 3"));

    let o = cclab(&["plot-data", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("plot_data.csv").exists());
    assert!(out.join("plot_volume.csv").exists());
}

#[test]
fn config_file_with_overrides() {
    let dir = scratch("cfg");
    std::fs::create_dir_all(&dir).unwrap();
    let out = dir.join("out");
    let cfg = dir.join("run.toml");
    std::fs::write(
        &cfg,
        format!("experiment = \"volume\"\nseed = 5\neps_list = [0.5]\noutput = \"{}\"\ncache = false\n\n[volume]\nr_list = [0.1]\n", s(&out)),
    )
    .unwrap();
    let o = cclab(&["--config", s(&cfg), "doubling", "--samples", "10000"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 5"));
    assert!(manifest.contains("\"experiment\": \"doubling\""));
}

#[test]
fn bad_input_exits_with_code_2() {
    let out = scratch("bad");
    let o = cclab(&["volume", "--eps", "-1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("eps_list"));

    let o = cclab(&["plot-data", "--manifest", s(&out.join("nowhere.json"))]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = scratch("bad-cfg");
    std::fs::create_dir_all(&cfg).unwrap();
    std::fs::write(cfg.join("x.toml"), "experiment = \"volume\"\nseed = = 1\n").unwrap();
    let o = cclab(&["--config", s(&cfg.join("x.toml")), "volume"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn dist_both_methods() {
    let out = scratch("dist");
    let o = cclab(&["dist", "--frame", "heisenberg1", "--eps", "0.1", "--from", "0,0,0", "--to", "0.3,0,0", "--method", "both", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("dist.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "eps,x,y,value_lattice,value_control,gauge_value");
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let lattice: f64 = row[3].parse().unwrap();
    let control: f64 = row[4].parse().unwrap();
    // a horizontal segment: both methods give its length
    assert!((lattice - 0.3).abs() < 0.03, "{lattice}");
    assert!((control - 0.3).abs() < 0.01, "{control}");
}
