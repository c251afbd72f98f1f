use std::path::PathBuf;

use cclab_core::lab::manifest::{emit_plot_data, ResultManifest};
use cclab_core::lab::{self, Experiment, ExperimentConfig};
use cclab_core::LabError;

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("cclab-lab-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn small_volume(out: PathBuf) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(Experiment::Volume, 7);
    c.eps_list = vec![0.5, 0.0];
    c.volume.r_list = vec![0.1];
    c.volume.samples = 10_000;
    c.volume.half_nodes = 8;
    c.output = out;
    c
}

#[test]
fn same_config_same_scalars() {
    let mut a = small_volume(scratch("rep-a"));
    a.cache = false;
    let mut b = a.clone();
    b.output = scratch("rep-b");
    let ma = lab::run(&a).unwrap();
    let mb = lab::run(&b).unwrap();
    assert!(!ma.scalar_digest().is_empty());
    assert_eq!(ma.scalar_digest(), mb.scalar_digest());
    assert_eq!(ma.config_hash, lab::config_hash(&a));
}

#[test]
fn thread_count_does_not_change_scalars() {
    let mut a = small_volume(scratch("thr-a"));
    a.cache = false;
    a.threads = 1;
    let mut b = a.clone();
    b.output = scratch("thr-b");
    b.threads = 3;
    assert_eq!(lab::run(&a).unwrap().scalar_digest(), lab::run(&b).unwrap().scalar_digest());
}

#[test]
fn cache_hits_match_fresh_runs() {
    let dir = scratch("cache");
    let cached = small_volume(dir.clone());
    let first = lab::run(&cached).unwrap();
    let tables = std::fs::read_dir(dir.join("cache")).unwrap().count();
    assert!(tables > 0);
    let second = lab::run(&cached).unwrap();
    let mut fresh = small_volume(scratch("nocache"));
    fresh.cache = false;
    let third = lab::run(&fresh).unwrap();
    assert_eq!(first.scalar_digest(), second.scalar_digest());
    assert_eq!(first.scalar_digest(), third.scalar_digest());
}

#[test]
fn negative_eps_is_rejected() {
    let mut c = small_volume(scratch("neg"));
    c.eps_list = vec![0.5, -0.1];
    assert!(matches!(lab::run(&c), Err(LabError::InvalidParameter(_))));
    let text = "experiment = \"volume\"\nseed = 1\neps_list = [0.1, 0.5]\n";
    assert!(ExperimentConfig::parse(text).is_err());
}

#[test]
fn config_round_trips_through_toml() {
    let c = small_volume(PathBuf::from("somewhere"));
    assert_eq!(ExperimentConfig::parse(&c.to_toml()).unwrap(), c);
}

#[test]
fn empty_manifest_cannot_be_plotted() {
    let m = ResultManifest { experiment: "volume".into(), ..Default::default() };
    let r = emit_plot_data(&m, &scratch("empty"));
    assert!(matches!(r, Err(LabError::ManifestIncomplete(_))));
}

#[test]
fn failed_run_still_writes_manifest() {
    let dir = scratch("fail");
    let mut c = ExperimentConfig::new(Experiment::Dist, 3);
    c.dist.from = vec![0.0, 0.0];
    c.output = dir.clone();
    assert!(lab::run(&c).is_err());
    let m = ResultManifest::read(&dir.join("manifest.json")).unwrap();
    assert!(!m.complete);
    assert!(m.error.is_some());
    assert!(!m.passed());
}

#[test]
fn plot_data_columns() {
    let dir = scratch("plot");
    let mut c = small_volume(dir.clone());
    c.cache = false;
    lab::run(&c).unwrap();
    let files = lab::plot_data_from(&dir.join("manifest.json"), None).unwrap();
    let long = std::fs::read_to_string(&files[0]).unwrap();
    let mut lines = long.lines();
    assert_eq!(lines.next().unwrap(), "experiment,frame,eps,var,at,quantity,value");
    assert_eq!(lines.count(), 4);
    let wide = std::fs::read_to_string(dir.join("plot_volume.csv")).unwrap();
    assert_eq!(wide.lines().next().unwrap(), "frame,eps,r,nsw,volume");
    assert_eq!(wide.lines().count(), 3);
    let vol = std::fs::read_to_string(dir.join("volume.csv")).unwrap();
    assert_eq!(vol.lines().next().unwrap(), "frame,eps,r,estimate,stderr,method");
}
