#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use kobalab::{Decimal, Real, ScaledReal};
use serde_json::Value;

pub fn kobalab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kobalab"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn json(dir: &Path, name: &str) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join(name)).unwrap()).unwrap()
}

pub fn real(v: &Value) -> ScaledReal {
    let d: Decimal = serde_json::from_value(v.clone()).unwrap();
    ScaledReal::from_decimal(&d, 512).unwrap()
}

pub fn c(x: f64) -> ScaledReal {
    ScaledReal::new(x, 512)
}

/// Every margin a pass/fail decision in the report rests on, by name.
pub fn margins(report: &Value) -> Vec<(String, ScaledReal)> {
    let mut out = Vec::new();
    let f = |v: &Value| v.as_f64().unwrap();
    for r in report["radial"].as_array().into_iter().flatten() {
        let n = &r["n"];
        let s = &r["sandwich"];
        let tol = f(&s["tol"]);
        out.push((format!("sandwich lower n={n}"), c(f(&s["min_diff"]) + tol)));
        out.push((format!("sandwich upper n={n}"), c(0.125 + tol - f(&s["max_diff"]))));
        for (k, w) in r["subharmonic"]["worst_ratio"].as_array().unwrap().iter().enumerate() {
            out.push((format!("subharmonic n={n} pass {k}"), c(1.0 + f(w))));
        }
        out.push((format!("target C2 n={n}"), real(&r["target"]["min_margin"])));
        if !r["flatness"].is_null() {
            let fl = &r["flatness"];
            out.push((format!("flatness n={n}"), real(&fl["bound"]) - real(&fl["sup_upper"])));
        }
    }
    for cu in report["cusp"].as_array().into_iter().flatten() {
        let n = &cu["n"];
        out.push((format!("psh n={n}"), real(&cu["psh"]["report"]["min_value"])));
        out.push((format!("target C3 n={n}"), real(&cu["target_on_curve"]["min_margin"])));
    }
    for fam in ["c2", "c3"] {
        for d in report["discs"][fam].as_array().into_iter().flatten() {
            out.push((format!("disc {fam} n={}", d["n"]), real(&d["margin"])));
        }
    }
    out
}
