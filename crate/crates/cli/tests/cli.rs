use std::path::Path;
use std::process::{Command, Output};

fn phonontrap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phonontrap")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn dc_sweep_writes_reproducible_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = |sub: &str| dir.path().join(sub).display().to_string();
    for sub in ["a", "b"] {
        let o = phonontrap(&["simulate", "dc-sweep", "--packets", "2000", "--seed", "3", "--out", &out(sub), "--svg"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read_to_string(dir.path().join("a/dc_sweep.csv")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("b/dc_sweep.csv")).unwrap();
    assert_eq!(a, b);
    assert!(a.contains("# seed: 3\n"));
    assert!(a.contains("added_gamma1_Near_NbTiN"));
    assert!(std::fs::read_to_string(dir.path().join("a/dc_sweep.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn ratio_report_from_saved_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().display().to_string();
    assert_eq!(code(&phonontrap(&["simulate", "dc-sweep", "--packets", "2000", "--out", &d])), 0);
    let input = dir.path().join("dc_sweep.csv").display().to_string();
    let o = phonontrap(&["report", "ratios", "--input", &input, "--out", &d]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("ratios.csv")).unwrap();
    assert!(csv.contains("ratio_Near_NbTiN/Near_Al"));
}

#[test]
fn t1_fit_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("t_us,p_e\n");
    for i in 0..40 {
        let t = 0.5 * i as f64;
        text += &format!("{t},{}\n", 0.9 * (-t / 3.8f64).exp() + 0.05);
    }
    let input = write(dir.path(), "t1.csv", &text);
    let out = dir.path().display().to_string();
    let o = phonontrap(&["fit", "t1", "--input", &input, "--out", &out]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let fit = std::fs::read_to_string(dir.path().join("fit.csv")).unwrap();
    let tau: f64 = fit.lines().find(|l| l.starts_with("tau,")).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((tau - 3.8).abs() < 1e-6, "{tau}");
}

#[test]
fn layout_and_iv_tools() {
    let o = phonontrap(&["layout", "validate"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("layout ok"));
    let o = phonontrap(&["iv", "dump", "--v-min", "0", "--v-max", "1", "--points", "11"]);
    assert_eq!(code(&o), 0);
    let s = stdout(&o);
    assert_eq!(s.lines().count(), 12);
    assert!(s.lines().nth(1).unwrap().starts_with("0,0"));
}

#[test]
fn validation_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad_layout = write(dir.path(), "layout.toml", "width_mm = -1\n");
    assert_eq!(code(&phonontrap(&["layout", "validate", &bad_layout])), 1);
    let bad_cfg = write(dir.path(), "scn.toml", "[injector]\ngap_ueV = -5.0\n");
    assert_eq!(code(&phonontrap(&["simulate", "dc-sweep", "--config", &bad_cfg])), 1);
    assert_eq!(code(&phonontrap(&["fit", "t1", "--input", "/nonexistent/t1.csv"])), 1);
    let junk = write(dir.path(), "junk.csv", "t,y\n0,1\nx,2\n");
    assert_eq!(code(&phonontrap(&["fit", "t1", "--input", &junk])), 1);
    assert_eq!(code(&phonontrap(&["iv", "dump", "--points", "1"])), 1);
    assert_eq!(code(&phonontrap(&["simulate", "nonsense"])), 1);
}

#[test]
fn degenerate_fits_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    // no decay to identify
    let saw: String = (0..10).map(|i| format!("{i},{}\n", (i % 3) as f64 - 1.0)).collect();
    let o = phonontrap(&["fit", "t1", "--input", &write(dir.path(), "saw.csv", &saw)]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    // no charge dispersion to fit
    let flat: String = (0..21).map(|i| format!("{},5.0,4.8\n", i as f64 / 20.0)).collect();
    let o = phonontrap(&["fit", "dispersion", "--input", &write(dir.path(), "flat.csv", &flat)]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    // constant trace is rejected as input, not as a numerical failure
    let constant: String = (0..20).map(|i| format!("{i},0.5\n")).collect();
    assert_eq!(code(&phonontrap(&["fit", "t1", "--input", &write(dir.path(), "c.csv", &constant)])), 1);
}
