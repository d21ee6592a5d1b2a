//! The certification suites and the run report.

use kobalab::cusp::{CuspGrid, CuspProfile, LeviEstimate, PshCheck, SheetCheck};
use kobalab::diff::Tolerance;
use kobalab::discs::{
    blowup_csv, blowup_table, certify_disc, BlowupRow, DiscCert, DiscMap, DiscSampling, Dimension, DomainSpec,
};
use kobalab::kernel::{self_check, SelfCheck};
use kobalab::params::{build_table, LeviConstants, ParamDoc, ParamTable};
use kobalab::profile::{FlatnessCheck, ProfileStack, SandwichCheck, SubharmonicCheck, TargetCheck};
use kobalab::{Decimal, Real, ScaledReal};
use log::info;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Perturb, RunConfig};
use crate::CliError;

type S = ScaledReal;

/// Which certification families to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    C2,
    C3,
    All,
}

impl Which {
    fn c2(self) -> bool {
        matches!(self, Which::C2 | Which::All)
    }

    fn c3(self) -> bool {
        matches!(self, Which::C3 | Which::All)
    }
}

/// Sample counts and tolerances of the suites, echoed into the report.
#[derive(Clone, Debug, Serialize)]
pub struct Plan {
    pub harmonic_points: usize,
    pub harmonic_tol: f64,
    pub sandwich_points: usize,
    pub sandwich_tol: f64,
    pub subharmonic_grid: [usize; 2],
    pub subharmonic_half_width: f64,
    pub subharmonic_step_over_eps: f64,
    pub target_points: usize,
    pub flatness_points: usize,
    pub sheet_points: usize,
    pub psh_per_family: usize,
    pub disc_sampling: DiscSampling,
    pub tolerance: Tolerance,
}

impl Default for Plan {
    fn default() -> Self {
        Plan {
            harmonic_points: 100,
            harmonic_tol: 1e-8,
            sandwich_points: 1000,
            sandwich_tol: 1e-6,
            subharmonic_grid: [64, 64],
            subharmonic_half_width: 4.0,
            subharmonic_step_over_eps: 1.0 / 16.0,
            target_points: 1000,
            flatness_points: 1000,
            sheet_points: 500,
            psh_per_family: 200,
            disc_sampling: DiscSampling::default(),
            tolerance: Tolerance::default(),
        }
    }
}

#[derive(Serialize)]
pub struct RadialSection {
    pub n: usize,
    pub sandwich: SandwichCheck,
    pub subharmonic: SubharmonicCheck,
    pub target: TargetCheck<S>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flatness: Option<FlatnessCheck<S>>,
}

#[derive(Serialize)]
pub struct CuspSection {
    pub n: usize,
    pub d: Decimal,
    pub r_tilde: Decimal,
    pub sheets: SheetCheck,
    pub levi: LeviEstimate<S>,
    pub psh: PshCheck<S>,
    /// `p_n` alone (`K = 0`) over the same samples; expected to fail.
    pub without_corrector: PshCheck<S>,
    pub target_on_curve: TargetCheck<S>,
}

#[derive(Serialize)]
pub struct DiscSection {
    pub c2: Vec<DiscCert<S>>,
    pub c3: Vec<DiscCert<S>>,
    /// `3 r_n` in place of `r_n`; expected to fail.
    pub rogue: Vec<DiscCert<S>>,
}

#[derive(Serialize)]
pub struct BlowupDoc {
    pub dimension: Dimension,
    pub rows: Vec<BlowupRowDoc>,
}

#[derive(Serialize)]
pub struct BlowupRowDoc {
    pub n: usize,
    pub delta_n: Decimal,
    pub a_n: Decimal,
    pub upper_bound: Decimal,
    pub bound_times_delta: Decimal,
    pub baseline_bound: Decimal,
    pub margin: Decimal,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub pass: bool,
}

#[derive(Serialize)]
pub struct Rollup {
    pub checks: Vec<CheckLine>,
    pub pass: bool,
}

#[derive(Serialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub which: Which,
    pub plan: Plan,
    pub params: ParamDoc,
    pub quadrature: SelfCheck,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub radial: Vec<RadialSection>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub cusp: Vec<CuspSection>,
    pub discs: DiscSection,
    pub blowup: BlowupDoc,
    pub rollup: Rollup,
}

/// Everything a run writes.
pub struct Artifacts {
    pub params_json: String,
    pub report: RunReport,
    pub report_json: String,
    pub blowup_csv: String,
}

/// Harmonic reproduction of the quadrature rule; a failure is a
/// construction failure.
pub fn quadrature_gate(cfg: &RunConfig, plan: &Plan) -> Result<SelfCheck, CliError> {
    let kernel = kobalab::kernel::MollifierKernel::<f64>::new(cfg.quad, cfg.quad)?;
    let check = self_check(&kernel, plan.harmonic_points, plan.harmonic_tol);
    if !check.pass {
        return Err(CliError::Construction(format!(
            "quadrature self-check failed: max error {:e} > {:e}",
            check.max_error, check.tolerance
        )));
    }
    Ok(check)
}

pub fn build(cfg: &RunConfig) -> Result<ParamTable<S>, CliError> {
    Ok(build_table::<S>(&cfg.rule()?, cfg.n_max, cfg.precision_bits)?)
}

fn stack(cfg: &RunConfig, table: &ParamTable<S>) -> Result<ProfileStack<S>, CliError> {
    let s = ProfileStack::new(table, cfg.quad)?;
    Ok(match cfg.perturb {
        Some(Perturb::RhoSign) => s.negated(),
        None => s,
    })
}

fn radial_section(stack: &ProfileStack<S>, plan: &Plan, n: usize) -> Result<RadialSection, CliError> {
    info!("radial checks n={n}");
    let flatness = if n < stack.n_max() {
        Some(stack.flatness_check(n, plan.flatness_points)?)
    } else {
        None
    };
    Ok(RadialSection {
        n,
        sandwich: stack.sandwich_check(n, plan.sandwich_points, plan.sandwich_tol),
        subharmonic: stack.subharmonic_check(
            n,
            plan.subharmonic_grid[0],
            plan.subharmonic_grid[1],
            plan.subharmonic_half_width,
            plan.subharmonic_step_over_eps,
            plan.tolerance,
        )?,
        target: stack.target_check(n, plan.target_points),
        flatness,
    })
}

/// Levi constants for every index, installed in the profile.
pub fn install_levi_constants(
    profile: &mut CuspProfile<S>,
    table: &mut ParamTable<S>,
    grid: usize,
) -> Result<Vec<LeviEstimate<S>>, CliError> {
    let n_max = profile.n_max();
    let estimates: Vec<kobalab::Result<LeviEstimate<S>>> = (1..=n_max)
        .into_par_iter()
        .map(|n| {
            info!("Levi constants n={n}");
            profile.estimate_levi_constants(n, &CuspGrid { per_axis: grid })
        })
        .collect();
    let estimates = estimates.into_iter().collect::<kobalab::Result<Vec<_>>>()?;
    for e in &estimates {
        profile.set_constants(e.n, e.consts.clone());
        table.set_levi_constants(e.n, e.consts.clone());
    }
    Ok(estimates)
}

fn cusp_section(
    profile: &CuspProfile<S>,
    cfg: &RunConfig,
    plan: &Plan,
    levi: LeviEstimate<S>,
) -> Result<CuspSection, CliError> {
    let n = levi.n;
    info!("plurisubharmonicity n={n}");
    let geo = profile.geometry(n);
    let psh = profile.summand(n)?.check(plan.psh_per_family, cfg.directions, cfg.seed, plan.tolerance)?;
    let zero = geo.d.cst(0.0);
    let bare = LeviConstants {
        big_c: zero.clone(),
        small_c: zero.cst(1.0),
        k_gain: zero,
    };
    let without_corrector = kobalab::cusp::PshSummand::new(profile, n, bare).check(
        plan.psh_per_family,
        cfg.directions,
        cfg.seed,
        plan.tolerance,
    )?;
    Ok(CuspSection {
        n,
        d: geo.d.to_decimal(),
        r_tilde: geo.r_tilde.to_decimal(),
        sheets: geo.sheet_separation(plan.sheet_points),
        levi,
        psh,
        without_corrector,
        target_on_curve: profile.target_check_on_curve(n, plan.target_points)?,
    })
}

fn blowup_doc(dim: Dimension, rows: &[BlowupRow<S>]) -> BlowupDoc {
    BlowupDoc {
        dimension: dim,
        rows: rows
            .iter()
            .map(|r| BlowupRowDoc {
                n: r.n,
                delta_n: r.delta.to_decimal(),
                a_n: r.a.to_decimal(),
                upper_bound: r.upper_bound.to_decimal(),
                bound_times_delta: r.bound_times_delta.to_decimal(),
                baseline_bound: r.baseline_bound.to_decimal(),
                margin: r.margin.to_decimal(),
            })
            .collect(),
    }
}

/// Relative agreement of `bound·δ_n` with `1/a_n`.
pub const ALGEBRA_TOL: f64 = 1e-100;

pub fn blowup_checks(rows: &[BlowupRow<S>]) -> Vec<CheckLine> {
    let mut out = Vec::new();
    for r in rows {
        let inv_a = r.a.cst(1.0) / r.a.clone();
        out.push(CheckLine {
            name: format!("blowup n={}: bound*delta = 1/a_n", r.n),
            pass: r.bound_times_delta.rel_diff(&inv_a) <= ALGEBRA_TOL,
        });
        out.push(CheckLine {
            name: format!("blowup n={}: bound < baseline", r.n),
            pass: r.upper_bound < r.baseline_bound,
        });
    }
    let decreasing = rows.windows(2).all(|w| w[1].bound_times_delta < w[0].bound_times_delta);
    out.push(CheckLine {
        name: "blowup: bound*delta strictly decreasing".into(),
        pass: decreasing,
    });
    out
}

pub fn verify(cfg: &RunConfig, which: Which, plan: Plan) -> Result<Artifacts, CliError> {
    let quadrature = quadrature_gate(cfg, &plan)?;
    let mut table = build(cfg)?;
    let stack = stack(cfg, &table)?;
    let mut checks = vec![CheckLine {
        name: "quadrature harmonic reproduction".into(),
        pass: quadrature.pass,
    }];
    let invariants = table.check_invariants();
    checks.push(CheckLine {
        name: "parameter invariants".into(),
        pass: invariants.is_empty(),
    });
    for v in invariants {
        log::warn!("invariant violated: {v}");
    }

    let radial = if which.c2() {
        let rows: Vec<Result<RadialSection, CliError>> =
            (1..=cfg.n_max).into_par_iter().map(|n| radial_section(&stack, &plan, n)).collect();
        rows.into_iter().collect::<Result<Vec<_>, _>>()?
    } else {
        Vec::new()
    };
    for r in &radial {
        let n = r.n;
        checks.push(CheckLine { name: format!("sandwich n={n}"), pass: r.sandwich.pass });
        checks.push(CheckLine { name: format!("subharmonic n={n}"), pass: r.subharmonic.pass });
        checks.push(CheckLine { name: format!("target C2 n={n}"), pass: r.target.pass });
        if let Some(f) = &r.flatness {
            checks.push(CheckLine { name: format!("flatness n={n}"), pass: f.pass });
        }
    }

    let mut profile = CuspProfile::new(&table, stack);
    let cusp = if which.c3() {
        let estimates = install_levi_constants(&mut profile, &mut table, cfg.grid)?;
        let rows: Vec<Result<CuspSection, CliError>> = estimates
            .into_par_iter()
            .map(|e| cusp_section(&profile, cfg, &plan, e))
            .collect();
        rows.into_iter().collect::<Result<Vec<_>, _>>()?
    } else {
        Vec::new()
    };
    for c in &cusp {
        let n = c.n;
        checks.push(CheckLine { name: format!("sheets n={n}"), pass: c.sheets.pass });
        checks.push(CheckLine {
            name: format!("Levi constants n={n}: c_n > 0, doubling stable"),
            pass: c.levi.stable && c.levi.consts.small_c.is_positive(),
        });
        checks.push(CheckLine { name: format!("psh summand n={n}"), pass: c.psh.report.pass });
        checks.push(CheckLine {
            name: format!("p_n without corrector rejected n={n}"),
            pass: !c.without_corrector.report.pass,
        });
        checks.push(CheckLine { name: format!("target C3 n={n}"), pass: c.target_on_curve.pass });
    }

    info!("disc certificates");
    let sampling = plan.disc_sampling;
    let dom2 = DomainSpec::new(Dimension::C2, &profile);
    let dom3 = DomainSpec::new(Dimension::C3, &profile);
    let certs = |make: &dyn Fn(usize) -> DiscMap<S>, dom: &DomainSpec<'_, S>| -> Result<Vec<DiscCert<S>>, CliError> {
        (1..=cfg.n_max)
            .map(|n| certify_disc(&make(n), dom, sampling).map_err(CliError::from))
            .collect()
    };
    let c2 = if which.c2() { certs(&|n| DiscMap::c2(&table, n), &dom2)? } else { Vec::new() };
    let rogue = if which.c2() { certs(&|n| DiscMap::rogue(&table, n), &dom2)? } else { Vec::new() };
    let c3 = if which.c3() { certs(&|n| DiscMap::c3(&table, n), &dom3)? } else { Vec::new() };
    for c in &c2 {
        checks.push(CheckLine { name: format!("disc c2 n={}", c.disc.n.unwrap_or(0)), pass: c.pass });
    }
    for c in &c3 {
        checks.push(CheckLine { name: format!("disc c3 n={}", c.disc.n.unwrap_or(0)), pass: c.pass });
    }
    for c in &rogue {
        checks.push(CheckLine {
            name: format!("rogue disc rejected n={}", c.disc.n.unwrap_or(0)),
            pass: !c.pass,
        });
    }

    let (dim, dom) = if which.c3() { (Dimension::C3, &dom3) } else { (Dimension::C2, &dom2) };
    let (rows, csv) = match blowup_table(&table, dom, sampling) {
        Ok(rows) => {
            let csv = blowup_csv(&rows, cfg.precision_bits);
            (rows, csv)
        }
        Err(kobalab::Error::CertRequired) => {
            checks.push(CheckLine {
                name: "blowup table (every disc certified)".into(),
                pass: false,
            });
            (Vec::new(), format!("{}\n", kobalab::discs::BLOWUP_HEADER))
        }
        Err(e) => return Err(e.into()),
    };
    checks.extend(blowup_checks(&rows));

    let pass = checks.iter().all(|c| c.pass);
    let report = RunReport {
        config: cfg.clone(),
        which,
        plan,
        params: table.to_doc(),
        quadrature,
        radial,
        cusp,
        discs: DiscSection { c2, c3, rogue },
        blowup: blowup_doc(dim, &rows),
        rollup: Rollup { checks, pass },
    };
    let report_json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    Ok(Artifacts {
        params_json: table.to_json() + "\n",
        report,
        report_json,
        blowup_csv: csv,
    })
}

/// One sweep row: `(n, δ_n, bound, baseline)` with the certifying margin.
pub struct SweepRow {
    pub n: usize,
    pub delta: S,
    pub bound: S,
    pub baseline: S,
    pub pass: bool,
}

/// Certified bounds for the C³ discs at the listed indices.
pub fn sweep(cfg: &RunConfig, n_list: &[usize], sampling: DiscSampling) -> Result<Vec<SweepRow>, CliError> {
    let table = build(cfg)?;
    let stack = stack(cfg, &table)?;
    let profile = CuspProfile::new(&table, stack);
    let dom = DomainSpec::new(Dimension::C3, &profile);
    n_list
        .iter()
        .map(|&n| {
            if n == 0 || n > cfg.n_max {
                return Err(CliError::Construction(format!("index {n} outside 1..={}", cfg.n_max)));
            }
            let disc = DiscMap::c3(&table, n);
            let cert = certify_disc(&disc, &dom, sampling)?;
            let delta = table.delta(n).clone();
            let baseline = delta.cst(1.0) / delta.clone();
            let bound = if cert.pass {
                let q = dom.inner_point(&delta).coords();
                let x: Vec<_> = dom
                    .normal()
                    .iter()
                    .map(|c| num_complex::Complex::new(delta.cst(c.re), delta.cst(c.im)))
                    .collect();
                kobalab::discs::kobayashi_upper(&cert, &q, &x)?.alpha
            } else {
                delta.cst(1.0) / disc.gain.clone()
            };
            Ok(SweepRow {
                n,
                delta,
                bound,
                baseline,
                pass: cert.pass,
            })
        })
        .collect()
}

pub const SWEEP_HEADER: &str = "n,delta_n,upper_bound,baseline_bound";

pub fn sweep_csv(rows: &[SweepRow], bits: usize) -> String {
    let digits = kobalab::scalar::decimal_digits_for_bits(bits);
    let f = |x: &S| x.to_decimal().to_sci_digits(digits);
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.n, f(&r.delta), f(&r.bound), f(&r.baseline)));
    }
    out
}
