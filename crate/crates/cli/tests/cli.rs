use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn exoctl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exoctl")).current_dir(dir).args(args).output().expect("spawn exoctl")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const TRAJ: &str = "t,q_o1_deg,q_o2_deg\n0,10,10\n0.1,30,35\n0.2,45,50\n0.3,60,70\n";

#[test]
fn missing_geometry_file_is_a_config_error() {
    let d = tempfile::tempdir().unwrap();
    let o = exoctl(d.path(), &["--geometry", "absent.toml", "jacobian"]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.starts_with("error ConfigError: "), "{err}");
    assert_eq!(err.trim_end().lines().count(), 1);
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("s.toml"), "[simulate]\nbogus = 1\n").unwrap();
    let o = exoctl(d.path(), &["--config", "s.toml", "simulate"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn out_of_range_stroke_is_a_precondition_error() {
    let d = tempfile::tempdir().unwrap();
    let o = exoctl(d.path(), &["solve-fk", "--meas", "60,60"]);
    assert_eq!(o.status.code(), Some(6));
    assert!(stderr(&o).starts_with("error PreconditionError: "));
}

#[test]
fn outputs_carry_header_and_replay_bit_identically() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("traj.csv"), TRAJ).unwrap();
    let a = exoctl(d.path(), &["--seed", "7", "--out", "a", "solve-ik", "--input", "traj.csv"]);
    let b = exoctl(d.path(), &["--seed", "7", "--out", "b", "solve-ik", "--input", "traj.csv"]);
    assert!(a.status.success() && b.status.success(), "{}", stderr(&a));
    let ta = fs::read_to_string(d.path().join("a/ik.csv")).unwrap();
    let tb = fs::read_to_string(d.path().join("b/ik.csv")).unwrap();
    assert_eq!(ta, tb);
    let lines: Vec<&str> = ta.lines().collect();
    assert!(lines[0].starts_with("# exoctl "));
    assert!(lines[1].starts_with("# geometry_sha256 ") && lines[1].len() == "# geometry_sha256 ".len() + 64);
    assert_eq!(lines[2], "# seed 7");
    assert!(lines[3].starts_with("# params "));
    assert!(lines[4].starts_with("t,q_o1_deg,q_o2_deg,l_x_mm,q_B_deg,q_K_deg,q_D_deg,q_G_deg,q_N_deg,c1_mm,c2_mm"));
    assert_eq!(lines.len(), 5 + 4);
    assert!(lines[5..].iter().all(|l| l.ends_with(",ok")));
}

#[test]
fn ik_then_fk_round_trips_through_files() {
    let d = tempfile::tempdir().unwrap();
    assert!(exoctl(d.path(), &["solve-ik", "--pose", "45,50"]).status.success());
    let ik = fs::read_to_string(d.path().join("out/ik.csv")).unwrap();
    let row: Vec<f64> = ik.lines().last().unwrap().split(',').take(11).map(|c| c.parse().unwrap()).collect();
    let meas = format!("{},{}", row[3], row[4]);
    for extra in [&[][..], &["--analytic"][..]] {
        let mut args = vec!["solve-fk", "--meas", meas.as_str()];
        args.extend_from_slice(extra);
        let o = exoctl(d.path(), &args);
        assert!(o.status.success(), "{}", stderr(&o));
        let fk = fs::read_to_string(d.path().join("out/fk.csv")).unwrap();
        let back: Vec<f64> = fk.lines().last().unwrap().split(',').take(3).map(|c| c.parse().unwrap()).collect();
        assert!((back[1] - 45.0).abs() < 1e-6 && (back[2] - 50.0).abs() < 1e-6, "{back:?}");
    }
}

#[test]
fn writes_stay_inside_the_output_directory() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("traj.csv"), TRAJ).unwrap();
    fs::write(d.path().join("s.toml"), "[render]\ninput = \"traj.csv\"\nq_lim_deg = [30, 40]\n").unwrap();
    for cmd in [&["render"][..], &["audit"][..], &["jacobian"][..], &["grasp-report", "--step", "10"][..]] {
        let mut args = vec!["--config", "s.toml", "--out", "res"];
        args.extend_from_slice(cmd);
        let o = exoctl(d.path(), &args);
        assert!(o.status.success(), "{cmd:?}: {}", stderr(&o));
    }
    let mut top: Vec<String> = fs::read_dir(d.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    top.sort();
    assert_eq!(top, ["res", "s.toml", "traj.csv"]);
    let summary = json(&d.path().join("res/audit.json"));
    assert_eq!(summary["methods"][2]["method"], "subspace");
    assert_eq!(summary["methods"][2]["passive_fraction"], 1.0);
    assert_eq!(json(&d.path().join("res/grasp_report.json"))["stable_fraction"], 1.0);
}

#[test]
fn calibrate_recovers_a_synthetic_length() {
    let d = tempfile::tempdir().unwrap();
    let o = exoctl(d.path(), &["calibrate", "--synthetic", "45"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let j = json(&d.path().join("out/calibrate.json"));
    assert!(j["l_LM_error_mm"].as_f64().unwrap().abs() < 0.1);
    assert_eq!(j["header"]["params"]["c2_mm"], 35.0);
}

#[test]
fn default_step_simulation_settles() {
    let d = tempfile::tempdir().unwrap();
    let o = exoctl(d.path(), &["simulate"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let j = json(&d.path().join("out/simulate.json"));
    assert!(j["settling_time_2mm_s"].as_f64().unwrap() <= 3.0);
    let log = fs::read_to_string(d.path().join("out/simulate.csv")).unwrap();
    assert!(log.lines().nth(4).unwrap() == "t,ref,meas,e,F_thr,F_cont,F_PWM,limit,pos");
}

#[test]
fn optimize_links_keeps_the_reported_optimum_feasible() {
    let d = tempfile::tempdir().unwrap();
    let o = exoctl(d.path(), &["--workers", "2", "optimize-links", "--finger", "index", "--half", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(d.path().join("out/optimize_links.csv")).unwrap();
    assert!(csv.lines().any(|l| l == "l_EJ,l_CI,l_CD,l_ED,l_EF,l_BC,feasible,violation,p"));
    assert!(csv.lines().any(|l| l.starts_with("39,16,9,40,27,43,true,,")));
    let j = json(&d.path().join("out/optimize_links.json"));
    assert_eq!(j["candidates"], 729);
    assert_eq!(j["anchor_feasible"], true);
}

#[test]
fn accept_reports_every_criterion() {
    let d = tempfile::tempdir().unwrap();
    let o = exoctl(d.path(), &["accept"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("criterion ")).count(), 9);
    assert!(o.status.success(), "{stdout}");
    let j = json(&d.path().join("out/accept.json"));
    assert_eq!(j["passed"], true);
    assert_eq!(j["criteria"].as_array().unwrap().len(), 9);
}
