mod common;

use common::{c, code, json, kobalab, margins, real};
use kobalab::Real;
use kobalab_cli::output::{Frame, SVG_HEIGHT, SVG_WIDTH};

#[test]
fn params_default_and_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let out = kobalab(dir.path(), &["params"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let first = std::fs::read(dir.path().join("params.json")).unwrap();
    let doc = json(dir.path(), "params.json");
    assert_eq!(doc["r"].as_array().unwrap().len(), 4);
    let r1 = real(&doc["r"][0]);
    assert!(r1.rel_diff(&(c(-11.0).exp() / c(16.0))) < 1e-140);
    assert_eq!(code(&kobalab(dir.path(), &["params"])), 0);
    assert_eq!(std::fs::read(dir.path().join("params.json")).unwrap(), first);
}

#[test]
fn construction_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = kobalab(dir.path(), &["--a-rule", "const:e9", "params"]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("n=1"), "{err}");
    assert!(!dir.path().join("params.json").exists());
    let out = kobalab(dir.path(), &["--quad", "16", "verify", "c2"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn unwritable_output_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let out = kobalab(&blocker.join("sub"), &["params"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn sign_perturbation_fails_certification() {
    let dir = tempfile::tempdir().unwrap();
    let out = kobalab(dir.path(), &["--perturb", "rho-sign", "verify", "c2"]);
    assert_eq!(code(&out), 1);
    let report = json(dir.path(), "report.json");
    assert_eq!(report["rollup"]["pass"], false);
    for r in report["radial"].as_array().unwrap() {
        assert!(real(&r["target"]["min_margin"]).is_negative(), "n={}", r["n"]);
    }
    assert!(dir.path().join("blowup.csv").exists());
}

#[test]
fn doubling_quadrature_keeps_margins() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&kobalab(a.path(), &["--n-max", "2", "verify"])), 0);
    assert_eq!(code(&kobalab(b.path(), &["--n-max", "2", "--quad", "128", "verify"])), 0);
    let (ma, mb) = (margins(&json(a.path(), "report.json")), margins(&json(b.path(), "report.json")));
    assert_eq!(ma.len(), mb.len());
    // Nine margins per index, flatness only below n_max.
    assert_eq!(ma.len(), 2 * 9 + 1);
    for ((name, x), (_, y)) in ma.iter().zip(&mb) {
        assert!(x.is_positive(), "{name}: {x}");
        let change = (x.clone() - y.clone()).abs() / x.abs();
        assert!(change.to_f64() < 0.5, "{name}: {x} vs {y}");
    }
}

fn read_csv(path: &std::path::Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn log10_of(s: &str) -> f64 {
    let (m, e) = s.split_once('e').unwrap();
    m.parse::<f64>().unwrap().log10() + e.parse::<f64>().unwrap()
}

#[test]
fn sweep_rows_and_chart() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&kobalab(dir.path(), &["sweep"])), 0);
    let rows = read_csv(&dir.path().join("decay.csv"));
    assert_eq!(rows.len(), 4);
    for r in &rows {
        let (bound, base) = (real_sci(&r[2]), real_sci(&r[3]));
        assert!(bound.is_positive() && bound < base, "{r:?}");
    }

    let svg = std::fs::read_to_string(dir.path().join("decay.svg")).unwrap();
    let pts: Vec<(f64, f64, f64)> = rows
        .iter()
        .map(|r| (log10_of(&r[1]), log10_of(&r[2]), log10_of(&r[3])))
        .collect();
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().flat_map(|p| [p.1, p.2]).collect();
    let frame = Frame::fit(&xs, &ys);
    assert!(svg.contains(&format!("width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\"")));
    for (series, pick) in [("upper_bound", 1), ("baseline_bound", 2)] {
        for p in &pts {
            let ly = if pick == 1 { p.1 } else { p.2 };
            let (x, y) = frame.map(p.0, ly);
            let marker = format!("data-series=\"{series}\" data-log-x=\"{:.6}\" data-log-y=\"{ly:.6}\" cx=\"{x:.3}\" cy=\"{y:.3}\"", p.0);
            assert!(svg.contains(&marker), "missing {marker}");
        }
    }

    let one = tempfile::tempdir().unwrap();
    assert_eq!(code(&kobalab(one.path(), &["sweep", "--n", "1"])), 0);
    let rows = read_csv(&one.path().join("decay.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "1");
}

fn real_sci(s: &str) -> kobalab::ScaledReal {
    let (m, e) = s.split_once('e').unwrap();
    let d = kobalab::Decimal {
        m: m.to_string(),
        e: e.parse().unwrap(),
    };
    <kobalab::ScaledReal as Real>::from_decimal(&d, 512).unwrap()
}
