use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_inflap"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("inflap-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn config(dir: &Path, lambda: f64, delta: f64, extra: &str) -> PathBuf {
    let p = dir.join(format!("run-{lambda}-{delta}.toml"));
    let text = format!(
        "[domain]\nkind = \"disk\"\nradius = 1.0\nh = 0.0625\nstencil = 2\n\
         [problem]\nlambda = {lambda}\ndelta = {delta}\n{extra}"
    );
    std::fs::write(&p, text).unwrap();
    p
}

fn run(cmd: &mut Command) -> (i32, String) {
    let out = cmd.output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout).into_owned() + &String::from_utf8_lossy(&out.stderr);
    (out.status.code().unwrap_or(-1), text)
}

fn solve(dir: &Path, lambda: f64, delta: f64) -> PathBuf {
    let out = dir.join(format!("solve-{lambda}-{delta}"));
    let cfg = config(dir, lambda, delta, "");
    let (code, text) = run(bin().args(["solve", "--config"]).arg(&cfg).arg("--out").arg(&out));
    assert_eq!(code, 0, "{text}");
    out.join("report.json")
}

#[test]
fn solve_writes_report_and_images() {
    let dir = scratch("solve");
    let report = solve(&dir, 0.5, 1.0);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["report"]["classification"], "converged");
    assert_eq!(json["domain"]["spacing"], 0.0625);
    let base = report.parent().unwrap();
    assert!(std::fs::read(base.join("field.pgm")).unwrap().starts_with(b"P5\n"));
    assert!(std::fs::read_to_string(base.join("field.csv")).unwrap().starts_with("x,y,u\n"));
}

#[test]
fn output_is_deterministic() {
    let dir = scratch("det");
    let a = std::fs::read(solve(&dir, 0.5, 1.0)).unwrap();
    let b = std::fs::read(solve(&dir, 0.5, 1.0)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn verify_suites_and_exit_codes() {
    let dir = scratch("verify");
    let low = solve(&dir, 0.3, 1.0);
    let high = solve(&dir, 0.6, 1.0);
    let cfg = config(&dir, 0.0, 1.0, "");
    let verify = |suite: &str, inputs: &[&Path]| {
        let mut c = bin();
        c.args(["verify", suite]).args(inputs).arg("--config").arg(&cfg).arg("--out").arg(dir.join(suite));
        run(&mut c)
    };
    assert_eq!(verify("comparison", &[&low, &high]).0, 0);
    assert_eq!(verify("ratio", &[&low, &high]).0, 0);
    assert_eq!(verify("distance", &[&high]).0, 0);
    assert_eq!(verify("apriori", &[&high]).0, 0);
    // The λ = 0.6 field relabelled as λ = 0.05 is not a sub-solution there.
    let text = std::fs::read_to_string(&high).unwrap().replacen("\"lambda\": 0.6", "\"lambda\": 0.05", 1);
    let tampered = dir.join("tampered.json");
    std::fs::write(&tampered, text).unwrap();
    let (code, text) = verify("comparison", &[&tampered, &low]);
    assert_eq!(code, 1, "{text}");
    let xml = std::fs::read_to_string(dir.join("comparison/verify.xml")).unwrap();
    assert!(xml.contains("<failure"), "{xml}");
    assert_eq!(verify("nonsense", &[&high]).0, 2);
    assert_eq!(verify("comparison", &[&high]).0, 2);
}

#[test]
fn eigen_and_radial_commands() {
    let dir = scratch("eigen");
    let cfg = config(&dir, 0.0, 1.0, "[eigen]\ntol_lambda = 0.05\nthresholds = [0.5]\n[radial]\nperiods = 1\n");
    let out = dir.join("out");
    let (code, text) = run(bin().args(["eigen", "--config"]).arg(&cfg).arg("--out").arg(&out));
    assert_eq!(code, 0, "{text}");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("eigen.json")).unwrap()).unwrap();
    let lambda = json["lambda"].as_f64().unwrap();
    assert!(lambda > json["lambda0"].as_f64().unwrap() && lambda < json["upper"].as_f64().unwrap());
    assert!(std::fs::read_to_string(out.join("levelsets.csv")).unwrap().starts_with("t,lambda_t,lower_bound"));

    let (code, text) = run(bin().args(["radial", "--config"]).arg(&cfg).arg("--out").arg(&out).args(["--tol-lambda", "1e-6"]));
    assert_eq!(code, 0, "{text}");
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    let (l, b) = (json["lambda"].as_f64().unwrap(), json["beta"].as_f64().unwrap());
    assert!((l - b).abs() < 1e-6, "{l} vs {b}");
    assert!(out.join("extended.csv").exists());
}

#[test]
fn ladder_and_consistency_print_json() {
    let (code, text) = run(bin().args(["ladder", "--radius", "2", "--levels", "3"]));
    assert_eq!(code, 0);
    let json: serde_json::Value = serde_json::from_str(&text).unwrap();
    let b = json["beta"].as_f64().unwrap();
    let l = json["lambdas"].as_array().unwrap();
    assert!((l[2].as_f64().unwrap() - b * 625.0 / 16.0).abs() < 1e-9);
    assert_eq!(run(bin().args(["ladder", "--radius", "-1"])).0, 2);

    let (code, text) = run(bin().args(["consistency", "--h", "0.0625"]));
    assert_eq!(code, 0);
    let rows: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 4);
}

#[test]
fn bad_config_exits_with_two() {
    let dir = scratch("bad");
    let p = dir.join("bad.toml");
    std::fs::write(&p, "[domain]\nkind = \"disk\"\nradius = 1.0\nh = 0.1\nbogus = 3\n").unwrap();
    let (code, text) = run(bin().args(["solve", "--config"]).arg(&p));
    assert_eq!(code, 2, "{text}");
}
