use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ris-slam"))
}

#[test]
fn gain_curve_writes_a_table() {
    let dir = std::env::temp_dir().join(format!("ris-slam-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let out = dir.join("gain.csv");
    let status = bin()
        .args(["gain-curve", "--distances", "1,3", "--output"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "scheme,distance,trial,rmse_m,mean_crlb_m2,mean_gain"
    );
    // one optimized, one scatterer and a hundred random draws per distance
    assert_eq!(lines.len(), 1 + 2 * 102);
    assert!(lines[1].starts_with("optimized,1,"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn short_simulation_reports_an_rmse() {
    let out = bin()
        .args(["simulate", "--scheme", "no_ris", "--seed", "3"])
        .args(["--ga-iterations", "2"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let row = text.lines().nth(1).unwrap();
    let rmse: f64 = row.split(',').nth(3).unwrap().parse().unwrap();
    assert!(rmse.is_finite() && rmse > 0.0);
}

#[test]
fn missing_scenario_fails() {
    let out = bin()
        .args(["simulate", "--scenario", "/nonexistent/scene.toml"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn bad_arguments_fail() {
    let out = bin()
        .args(["gain-curve", "--distances", "-1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = bin()
        .args(["simulate", "--profile", "huge"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
