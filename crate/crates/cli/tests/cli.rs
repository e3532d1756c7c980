use std::process::Command;

fn lab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sasaki-lab"))
}

const SMALL: &[&str] = &["--grid.n", "32", "--flow.t_end", "0.5", "--flow.dt_out", "0.05", "--mu.restarts", "2"];

#[test]
fn unknown_key_in_config_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "grid.n = 32\nflow.nonsense = 1\n").unwrap();
    let out = lab().args(["simulate", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("flow.nonsense"));
}

#[test]
fn out_of_range_flag_exits_with_2() {
    let out = lab().args(["mu", "--grid.n", "4"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid.n"));
}

#[test]
fn simulate_is_byte_deterministic() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let out = lab()
            .arg("simulate")
            .args(SMALL)
            .args(["--output.svg", "true", "--seed", "11", "--output.dir", "out"])
            .current_dir(d.path())
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["timeseries.csv", "summary.json", "timeseries.svg", "trajectory.txt"] {
        let a = std::fs::read(dirs[0].path().join("out").join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join("out").join(name)).unwrap();
        assert!(!a.is_empty());
        assert!(a == b, "{name} differs between identical runs");
    }
    let csv = std::fs::read_to_string(dirs[0].path().join("out/timeseries.csv")).unwrap();
    let header = csv.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "t,vol,F_T,W_T,mu,a,RT_min,RT_max,u_min,u_max,grad_u_sup,diam_T,noncollapse_ratio,ratio_prop61");
    for column in header.split(',') {
        assert!(csv.contains(&format!("# {column}: ")), "{column} undocumented");
    }
    let traj = sasaki_flow::io::load_trajectory(dirs[0].path().join("out/trajectory.txt")).unwrap();
    assert_eq!(traj.len(), 11);
}

#[test]
fn config_file_merges_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "grid.n = 24\nflow.t_end = 0.3\nmu.restarts = 1\n").unwrap();
    let out = lab()
        .args(["mu", "--config"])
        .arg(&cfg)
        .args(["--flow.t_end", "0.2", "--output.dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("mu.csv")).unwrap();
    let last = csv.lines().last().unwrap();
    assert!(last.starts_with("0.2"), "{last}");
}

#[test]
fn every_subcommand_writes_its_report() {
    let dir = tempfile::tempdir().unwrap();
    for (cmd, file) in [
        ("entropy", "entropy.csv"),
        ("tubes", "tubes.json"),
        ("gauge-check", "gauge.json"),
        ("perelman-bounds", "bounds.json"),
    ] {
        let out = lab().arg(cmd).args(SMALL).arg("--output.dir").arg(dir.path()).output().unwrap();
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(dir.path().join(file).exists(), "{cmd} did not write {file}");
    }
    let gauge: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("gauge.json")).unwrap()).unwrap();
    assert!(gauge["scalar_transport"].as_f64().unwrap() < 1e-5);
}
