//! One PASS/FAIL line per acceptance criterion on the default instance
//! (a_n = e^{10+n}, n_max = 4, 512 bits, 64x64 quadrature).

mod common;

use std::time::{Duration, Instant};

use common::{c, code, json, kobalab, real};
use kobalab::cusp::{CuspGrid, PshSummand};
use kobalab::diff::Tolerance;
use kobalab::params::{build_table, GrowthRule};
use kobalab::profile::ProfileStack;
use kobalab::{Cusp, Real, ScaledReal};
use num_traits::Zero;
use kobalab_cli::pipeline::{quadrature_gate, Plan};
use kobalab_cli::RunConfig;

const N_MAX: usize = 4;
const BITS: usize = 512;
const QUAD: usize = 64;
const ROOT_AGREEMENT: f64 = 1e-12;
const SANDWICH_TOL: f64 = 1e-6;
const SANDWICH_POINTS: usize = 1000;
const SUBHARMONIC_REL: f64 = 1e-4;
const TARGET_POINTS: usize = 1000;
const PSH_PER_FAMILY: usize = 200;
const PSH_DIRECTIONS: usize = 16;
const PSH_REL: f64 = 1e-4;
const STABILITY: f64 = 0.25;
const DISC_SAMPLES: usize = 10_000;
const ALGEBRA: f64 = 1e-140;
const HARMONIC_TOL: f64 = 1e-8;

struct Line {
    results: Vec<bool>,
}

impl Line {
    fn report(&mut self, k: usize, pass: bool, what: &str) {
        println!("criterion {k:>2}: {} {what}", if pass { "PASS" } else { "FAIL" });
        self.results.push(pass);
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn main() {
    let mut out = Line { results: Vec::new() };

    // 1. Construction integrity.
    let t0 = Instant::now();
    let mut table = build_table::<ScaledReal>(&GrowthRule::default(), N_MAX, BITS).expect("default table builds");
    let built = t0.elapsed();
    let roots_ok = table.roots.iter().all(|r| {
        r.f_lo.is_negative() && r.f_hi.is_positive() && r.newton_rel_diff <= ROOT_AGREEMENT && r.lo <= r.root && r.root <= r.hi
    });
    let worst_newton = table.roots.iter().map(|r| r.newton_rel_diff).fold(0.0, f64::max);
    out.report(
        1,
        roots_ok && table.check_invariants().is_empty() && built < Duration::from_secs(10),
        &format!(
            "table n=1..{N_MAX}: sign brackets certified, bisection/Newton rel diff {worst_newton:.1e} <= {ROOT_AGREEMENT:.0e}, {} < 10s",
            secs(built)
        ),
    );

    let stack = ProfileStack::new(&table, QUAD).expect("profile stack");

    // 2. Mollification sandwich.
    let t0 = Instant::now();
    let sandwich: Vec<_> = (1..=N_MAX).map(|n| stack.sandwich_check(n, SANDWICH_POINTS, SANDWICH_TOL)).collect();
    let took = t0.elapsed();
    let lo = sandwich.iter().map(|s| s.min_diff).fold(f64::INFINITY, f64::min);
    let hi = sandwich.iter().map(|s| s.max_diff).fold(f64::NEG_INFINITY, f64::max);
    out.report(
        2,
        sandwich.iter().all(|s| s.pass && s.samples >= SANDWICH_POINTS)
            && lo >= -SANDWICH_TOL
            && hi <= 0.125 + SANDWICH_TOL
            && took < Duration::from_secs(60),
        &format!(
            "R~ - R in [{lo:.2e}, {hi:.2e}] within [-{SANDWICH_TOL:.0e}, 1/8 + {SANDWICH_TOL:.0e}] over {SANDWICH_POINTS} points per n, {} < 60s",
            secs(took)
        ),
    );

    // 3. Subharmonicity, h and h/2.
    let tol = Tolerance {
        rel: SUBHARMONIC_REL,
        ..Tolerance::default()
    };
    let t0 = Instant::now();
    let sub: Vec<_> = (1..=N_MAX)
        .map(|n| stack.subharmonic_check(n, 64, 64, 4.0, 1.0 / 16.0, tol).expect("stencil"))
        .collect();
    let took = t0.elapsed();
    let worst = sub.iter().flat_map(|s| s.worst_ratio).fold(f64::INFINITY, f64::min);
    out.report(
        3,
        sub.iter().all(|s| s.pass && s.radial == 64 && s.angular == 64) && took < Duration::from_secs(60),
        &format!(
            "64x64 grid, h = eps/16 and eps/32: worst Laplacian/({SUBHARMONIC_REL:.0e}-scaled tolerance) = {worst:.3} >= -1, {} < 60s",
            secs(took)
        ),
    );

    // 4. Flatness ladder.
    let flat: Vec<_> = (1..N_MAX).map(|n| stack.flatness_check(n, 1000).expect("flatness")).collect();
    let detail: Vec<String> = flat
        .iter()
        .map(|f| format!("n={}: sup {} <= r_n^n {}", f.n, f.sup_upper.to_decimal().to_sci_digits(3), f.bound.to_decimal().to_sci_digits(3)))
        .collect();
    let mut inner_zero = true;
    for n in 1..N_MAX {
        let r = stack.radius(n + 1).clone();
        for (frac, th) in [(0.999, 0.3), (0.5, 2.0), (1e-3, 4.0), (0.0, 0.0)] {
            let z = num_complex::Complex::new(r.clone() * c(frac * f64::cos(th)), r.clone() * c(frac * f64::sin(th)));
            inner_zero &= (1..=n).all(|k| stack.rho_k(k, &z).is_zero());
        }
    }
    out.report(
        4,
        inner_zero && flat.iter().all(|f| f.pass && f.exact_zeros && f.sup_upper <= f.bound),
        &format!("rho_k = 0 exactly inside r_(k+1); {}", detail.join("; ")),
    );

    // 5. Target inequality in C².
    let target: Vec<_> = (1..=N_MAX).map(|n| stack.target_check(n, TARGET_POINTS)).collect();
    let rel = target.iter().map(|t| t.relative_margin).fold(f64::INFINITY, f64::min);
    out.report(
        5,
        target.iter().all(|t| t.pass && t.samples >= TARGET_POINTS && t.min_margin.is_positive()),
        &format!("{TARGET_POINTS} samples of |z| < r_n per n, every margin positive, smallest relative margin {rel:.3}"),
    );

    // 6. Plurisubharmonicity in C³.
    let mut profile = Cusp::new(&table, stack);
    let t0 = Instant::now();
    let mut ok6 = true;
    let mut worst_change: f64 = 0.0;
    for n in 1..=N_MAX {
        let est = profile.estimate_levi_constants(n, &CuspGrid { per_axis: 8 }).expect("Levi constants");
        worst_change = worst_change.max(est.change_big_c).max(est.change_small_c);
        ok6 &= est.stable && est.consts.small_c.is_positive() && est.change_small_c < STABILITY && est.change_big_c < STABILITY;
        profile.set_constants(n, est.consts.clone());
        table.set_levi_constants(n, est.consts);
    }
    let tol = Tolerance {
        rel: PSH_REL,
        ..Tolerance::default()
    };
    let mut samples = usize::MAX;
    for n in 1..=N_MAX {
        let check = PshSummand::new(&profile, n, profile.constants(n).unwrap().clone())
            .check(PSH_PER_FAMILY, PSH_DIRECTIONS, 0, tol)
            .expect("psh check");
        samples = samples.min(check.report.samples);
        ok6 &= check.report.pass && check.report.samples >= 1000 * PSH_DIRECTIONS;
    }
    let took = t0.elapsed();
    out.report(
        6,
        ok6 && took < Duration::from_secs(300),
        &format!(
            "{samples} Levi samples per n (1000 points x {PSH_DIRECTIONS} directions), min >= -{PSH_REL:.0e} scale-relative; c_n > 0, grid-doubling change {worst_change:.3} < {STABILITY}; {} < 300s",
            secs(took)
        ),
    );
    drop(profile);

    // 7-10 from two runs of the binary.
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let run_a = kobalab(a.path(), &["verify", "all"]);
    let run_b = kobalab(b.path(), &["verify", "all"]);
    let report = json(a.path(), "report.json");

    let certs = |fam: &str| report["discs"][fam].as_array().cloned().unwrap_or_default();
    let good = |d: &serde_json::Value| {
        d["pass"] == true && real(&d["margin"]).is_positive() && d["samples"].as_u64().unwrap() as usize >= DISC_SAMPLES
    };
    let (c2, c3, rogue) = (certs("c2"), certs("c3"), certs("rogue"));
    out.report(
        7,
        c2.len() == N_MAX && c3.len() == N_MAX && c2.iter().all(good) && c3.iter().all(good) && rogue.len() == N_MAX && rogue.iter().all(|d| d["pass"] == false),
        &format!(
            "c2 and c3 discs n=1..{N_MAX} certified with positive margin at {} samples each; rogue discs rejected",
            c2.first().map(|d| d["samples"].clone()).unwrap_or_default()
        ),
    );

    let rows = report["blowup"]["rows"].as_array().cloned().unwrap_or_default();
    let mut ok8 = rows.len() == N_MAX;
    let mut prev: Option<ScaledReal> = None;
    for r in &rows {
        let (delta, a_n) = (real(&r["delta_n"]), real(&r["a_n"]));
        let prod = real(&r["bound_times_delta"]);
        ok8 &= prod.rel_diff(&(c(1.0) / a_n)) < ALGEBRA;
        ok8 &= (real(&r["baseline_bound"]) * delta).rel_diff(&c(1.0)) < ALGEBRA;
        if let Some(p) = &prev {
            ok8 &= prod < *p;
        }
        prev = Some(prod);
    }
    let first = rows.first().map(|r| real(&r["a_n"])).unwrap_or_else(|| c(1.0));
    ok8 &= c(1.0) / first <= c(-11.0).exp() * (c(1.0) + c(ALGEBRA));
    let last = rows.last().map(|r| r["bound_times_delta"]["e"].clone()).unwrap_or_default();
    out.report(
        8,
        ok8,
        &format!("bound * delta_n = 1/a_n (rel {ALGEBRA:.0e}), strictly decreasing to ~1e{last}, 1/a_1 <= e^-11, baseline * delta_n = 1"),
    );

    let plan = Plan::default();
    let cfg = RunConfig::default();
    let gate = quadrature_gate(&cfg, &plan);
    let strict = quadrature_gate(&cfg, &Plan { harmonic_tol: 1e-30, ..Plan::default() });
    let q = &report["quadrature"];
    out.report(
        9,
        gate.is_ok()
            && q["pass"] == true
            && q["tolerance"].as_f64() == Some(HARMONIC_TOL)
            && strict.as_ref().err().map(|e| e.exit_code()) == Some(2),
        &format!(
            "Re z, Im z, Re z^2, Im z^2 reproduced to {:.1e} <= {HARMONIC_TOL:.0e}; a failing self-check aborts with exit 2",
            q["max_error"].as_f64().unwrap_or(f64::NAN)
        ),
    );

    let same = ["params.json", "report.json", "blowup.csv"]
        .iter()
        .all(|f| std::fs::read(a.path().join(f)).ok().is_some_and(|x| Some(x) == std::fs::read(b.path().join(f)).ok()));
    out.report(
        10,
        same && code(&run_a) == 0 && code(&run_b) == 0,
        &format!(
            "two default runs (exit {} and {}) give byte-identical params.json, report.json, blowup.csv",
            code(&run_a),
            code(&run_b)
        ),
    );

    let failed = out.results.iter().filter(|p| !**p).count();
    println!("acceptance: {} of {} criteria pass", out.results.len() - failed, out.results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
