use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tmp(name: &str) -> PathBuf {
    let d = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

const SMALL: &str = r#"
[sweep]
deltas = [0.01]
oracle_points = 4

[sweep.p_grid]
n_uniform = 5
n_refined = 3
width = 0.1
"#;

fn config(dir: &Path, extra: &str) -> PathBuf {
    let cache = Path::new(env!("CARGO_TARGET_TMPDIR")).join("bloch_tables");
    let mut text = format!("{SMALL}\n{extra}\n");
    if !extra.contains("[numerics]") {
        text += &format!("\n[numerics]\ntable_cache = {:?}\n", cache.to_str().unwrap());
    }
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], cfg: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wgdirac"))
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn bands_csv_is_deterministic() {
    let d = tmp("bands");
    let cfg = config(&d, "");
    let a = run(&["bands", "--verify"], &cfg, &d.join("a"));
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    let b = run(&["bands", "--jobs", "1"], &cfg, &d.join("b"));
    assert_eq!(b.status.code(), Some(0));
    let ta = std::fs::read(d.join("a/bands.csv")).unwrap();
    assert_eq!(ta, std::fs::read(d.join("b/bands.csv")).unwrap());
    let text = String::from_utf8(ta).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("band,delta,p,lambda,sigma_min"));
    // three structures, two bands, seven momenta
    assert_eq!(lines.count(), 3 * 2 * 7);
    assert!(d.join("a/bands.gp").exists());
}

#[test]
fn configuration_errors_exit_two() {
    let d = tmp("config");
    for (name, extra) in [
        ("radius", "[geometry]\nradius = 0.3\n"),
        ("unknown", "[geometry]\nradius = 0.1\ncolour = 1\n"),
        ("step", "[numerics.fd_steps]\ndp = -1.0\n"),
    ] {
        let cfg = config(&d, extra);
        let o = run(&["bands"], &cfg, &d.join(name));
        assert_eq!(o.status.code(), Some(2), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!d.join(name).join("bands.csv").exists());
    }
    let cfg = config(&d, "[geometry]\nradius = 0.3\n");
    let o = run(&["dirac"], &cfg, &d.join("r"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("geometry"));
    let bad_delta = d.join("delta.toml");
    std::fs::write(&bad_delta, "[sweep]\ndeltas = [0.07]\n").unwrap();
    assert_eq!(run(&["gap"], &bad_delta, &d.join("x")).status.code(), Some(2));
    let o = run(&["bands", "--jobs", "0"], &config(&d, ""), &d.join("j"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn dirac_report() {
    let d = tmp("dirac");
    let o = run(&["dirac", "--verify"], &config(&d, ""), &d);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(d.join("dirac.json"));
    assert!(v["alpha_star"].as_f64().unwrap() > 0.0);
    assert!(v["t_star"].as_f64().unwrap().abs() > 0.0);
    assert_eq!(v["p_star"].as_f64().unwrap(), std::f64::consts::PI);
    for (_, r) in v["pattern_residuals"].as_object().unwrap() {
        assert!(r.as_f64().unwrap() < 0.05);
    }
    let table = std::fs::read_to_string(d.join("pattern_residuals.csv")).unwrap();
    assert_eq!(table.lines().count(), 8);
}

#[test]
fn oracle_exit_codes() {
    let d = tmp("oracle");
    let o = run(&["oracle"], &config(&d, ""), &d.join("ok"));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(d.join("ok/oracle.json"));
    assert_eq!(v["points"].as_array().unwrap().len(), 4);
    assert!(v["max_relative"].as_f64().unwrap() < 5e-3);
    let strict = config(&d, "[numerics.tolerances]\noracle_rtol = 1e-9\n");
    assert_eq!(run(&["oracle"], &strict, &d.join("strict")).status.code(), Some(4));
}

#[test]
fn interface_mode_outputs() {
    let d = tmp("interface");
    let o = run(&["interface"], &config(&d, ""), &d);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(d.join("interface_d0.0100.json"));
    let gap: Vec<f64> = v["gap"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let l = v["lambda_star_mode"].as_f64().unwrap();
    assert!(gap[0] < l && l < gap[1]);
    assert!(v["kappa"].as_f64().unwrap() > 0.0 && v["r_squared"].as_f64().unwrap() > 0.95);
    let r = &v["residuals"];
    assert!(r["continuity"].as_f64().unwrap() < 5e-2 && r["dirichlet"].as_f64().unwrap() < 1e-2);
    let scan: Vec<f64> = v["sigma_scan"].as_array().unwrap().iter().map(|x| x[1].as_f64().unwrap()).collect();
    assert!(scan.len() >= 20);
    let half = 0.5 * v["sigma_median"].as_f64().unwrap();
    let dips = (1..scan.len() - 1)
        .filter(|&i| scan[i] < half && scan[i] <= scan[i - 1] && scan[i] <= scan[i + 1])
        .count();
    assert_eq!(dips, 1);
    let field = std::fs::read_to_string(d.join("field_d0.0100.csv")).unwrap();
    assert!(field.starts_with("x1,x2,re_u,im_u\n"));
    assert!(d.join("sigma_scan_d0.0100.csv").exists() && d.join("interface_d0.0100.gp").exists());
}
