//! The cusp `V = {s² = t³}`, the extension of `ρ_n` from `V` to `C²`, the
//! corrector `q`, and the summands `p_n + K_n q`.
//!
//! Points near `V` are carried in tube coordinates `(ζ, ν)` with
//! `(s, t) = (ζ³, ζ² + ν)`, so that `π(z) = (ζ³, ζ²)` and `z - π(z) = (0, ν)`.
//! The tube half-widths sit hundreds of orders of magnitude below `|t|`, so
//! `ν` is stored directly instead of being recovered as a difference, and
//! displacements are applied to `(ζ, ν)` without cancellation.

use std::f64::consts::{FRAC_1_SQRT_2, TAU};

use num_complex::Complex;
use rayon::prelude::*;
use serde::Serialize;

use crate::diff::{
    halton, hermitian_min_eig, levi_matrix_2d, restricted_laplacian, sphere_directions, LeviEval,
    LeviReport, StencilSample, Tolerance,
};
use crate::error::{Error, Result};
use crate::params::{LeviConstants, ParamTable};
use crate::profile::{BandMemo, ProfileStack, TailInterval, TargetCheck};
use crate::scalar::{Decimal, Real};

/// `|ζ|` at which `|(ζ³, ζ²)| = 2`.
pub const BALL_ZETA: f64 = 1.1466;

/// FD step across the tube, as a fraction of `d_n`.
const SHELL_STEP: f64 = 1e-4;

/// FD step inside the tube core, as a fraction of `ε_n` in the w-plane.
const CORE_STEP: f64 = 1.0 / 16.0;

#[derive(Clone, Debug, PartialEq)]
pub struct C2Point<T> {
    pub s: Complex<T>,
    pub t: Complex<T>,
}

impl<T: Real> C2Point<T> {
    pub fn new(s: Complex<T>, t: Complex<T>) -> Self {
        C2Point { s, t }
    }

    /// `(ζ³, ζ²)`.
    pub fn on_curve(zeta: &Complex<T>) -> Self {
        let z2 = zeta.clone() * zeta.clone();
        C2Point {
            s: z2.clone() * zeta.clone(),
            t: z2,
        }
    }

    pub fn norm_sqr(&self) -> T {
        self.s.norm_sqr() + self.t.norm_sqr()
    }

    pub fn is_finite(&self) -> bool {
        [&self.s.re, &self.s.im, &self.t.re, &self.t.im]
            .iter()
            .all(|x| x.is_finite())
    }

    pub fn add(&self, ds: &Complex<T>, dt: &Complex<T>) -> Self {
        C2Point {
            s: self.s.clone() + ds.clone(),
            t: self.t.clone() + dt.clone(),
        }
    }
}

trait Modulus<T> {
    fn modulus(&self) -> T;
}

impl<T: Real> Modulus<T> for Complex<T> {
    fn modulus(&self) -> T {
        self.norm_sqr().sqrt()
    }
}

fn zero_c<T: Real>(like: &T) -> Complex<T> {
    Complex::new(like.cst(0.0), like.cst(0.0))
}

fn is_zero_c<T: Real>(z: &Complex<T>) -> bool {
    z.re.is_zero() && z.im.is_zero()
}

fn lift<T: Real>(c: Complex<f64>, like: &T) -> Complex<T> {
    Complex::new(like.cst(c.re), like.cst(c.im))
}

fn sci<T: Real>(x: &T) -> String {
    x.to_decimal().to_sci_digits(8)
}

fn c_label<T: Real>(z: &Complex<T>) -> String {
    format!("{}{}{}i", sci(&z.re), if z.im.is_negative() { "" } else { "+" }, sci(&z.im))
}

/// The three cube roots of `s`: the principal one, then its products with
/// `ω = e^{2πi/3}` and `ω²`. Seeded in doubles after an exact power-of-two
/// rescaling, then polished by Newton's method in the wide type.
pub fn cube_roots<T: Real>(s: &Complex<T>) -> [Complex<T>; 3] {
    let zero = zero_c(&s.re);
    if is_zero_c(s) {
        return [zero.clone(), zero.clone(), zero];
    }
    let e = [&s.re, &s.im]
        .iter()
        .filter(|x| !x.is_zero())
        .map(|x| x.frexp().1)
        .max()
        .unwrap_or(0);
    let k = e.div_euclid(3);
    let m = Complex::new(s.re.ldexp(-3 * k).to_f64(), s.im.ldexp(-3 * k).to_f64());
    let z0 = m.powf(1.0 / 3.0);
    let mut z = Complex::new(s.re.cst(z0.re).ldexp(k), s.re.cst(z0.im).ldexp(k));
    let bits = s.re.precision().max(53);
    let mut good = 50usize;
    let three = s.re.cst(3.0);
    while good < 2 * bits {
        let z2 = z.clone() * z.clone();
        let f = z2.clone() * z.clone() - s.clone();
        z = z - f / (z2 * three.clone());
        good *= 2;
    }
    let half = s.re.cst(0.5);
    let root3_2 = s.re.cst(3.0).sqrt() * half.clone();
    let omega = Complex::new(-half.clone(), root3_2.clone());
    let omega2 = Complex::new(-half, -root3_2);
    let a = z.clone() * omega;
    let b = z.clone() * omega2;
    [z, a, b]
}

/// Tube coordinates of a point: `ζ` is the cube root of `s` whose square is
/// nearest to `t` (ties go to the earlier root in [`cube_roots`] order) and
/// `ν = t - ζ²`.
#[derive(Clone, Debug, PartialEq)]
pub struct TubePoint<T> {
    pub zeta: Complex<T>,
    pub nu: Complex<T>,
}

impl<T: Real> TubePoint<T> {
    pub fn on_curve(zeta: Complex<T>) -> Self {
        let nu = zero_c(&zeta.re);
        TubePoint { zeta, nu }
    }

    pub fn from_c2(z: &C2Point<T>) -> Self {
        let roots = cube_roots(&z.s);
        let mut best: Option<(T, usize)> = None;
        for (i, r) in roots.iter().enumerate() {
            let dist = (z.t.clone() - r.clone() * r.clone()).norm_sqr();
            if best.as_ref().is_none_or(|(d, _)| dist < *d) {
                best = Some((dist, i));
            }
        }
        let zeta = roots[best.expect("three roots").1].clone();
        let nu = z.t.clone() - zeta.clone() * zeta.clone();
        TubePoint { zeta, nu }
    }

    pub fn to_c2(&self) -> C2Point<T> {
        let z2 = self.zeta.clone() * self.zeta.clone();
        C2Point {
            s: z2.clone() * self.zeta.clone(),
            t: z2 + self.nu.clone(),
        }
    }

    /// `π(z) = (ζ³, ζ²)`.
    pub fn base(&self) -> C2Point<T> {
        C2Point::on_curve(&self.zeta)
    }

    pub fn norm_sqr(&self) -> T {
        self.to_c2().norm_sqr()
    }

    /// `s² - t³ = -ν (3ζ⁴ + 3ζ²ν + ν²)`, exactly zero on `V`.
    pub fn cusp_defect(&self) -> Complex<T> {
        let three = self.zeta.re.cst(3.0);
        let z2 = self.zeta.clone() * self.zeta.clone();
        let inner = (z2.clone() * z2.clone() + z2 * self.nu.clone()) * three + self.nu.clone() * self.nu.clone();
        -(self.nu.clone() * inner)
    }

    /// `|∇ν|² = |∂ν/∂s|² + |∂ν/∂t|² = 4 / (9|ζ|²) + 1`.
    pub fn grad_nu_sqr(&self) -> T {
        let one = self.zeta.re.cst(1.0);
        one + self.zeta.re.cst(4.0 / 9.0) / self.zeta.norm_sqr()
    }

    /// Tube coordinates of `z + (ds, dt)` on the same branch. Solves
    /// `(1 + e)³ = 1 + ds/ζ³` by Newton's method and sets
    /// `ζ' = ζ(1 + e)`, `ν' = ν + dt - ζ²(2e + e²)`. Large steps fall back to
    /// a fresh projection.
    pub fn displaced(&self, ds: &Complex<T>, dt: &Complex<T>) -> TubePoint<T> {
        let like = &self.zeta.re;
        if is_zero_c(&self.zeta) {
            return TubePoint::from_c2(&self.to_c2().add(ds, dt));
        }
        let z2 = self.zeta.clone() * self.zeta.clone();
        let x = ds.clone() / (z2.clone() * self.zeta.clone());
        if x.norm_sqr() >= like.cst(1.0 / 16.0) {
            return TubePoint::from_c2(&self.to_c2().add(ds, dt));
        }
        let (three, nine) = (like.cst(3.0), like.cst(9.0));
        let mut e = x.clone() / three.clone() - x.clone() * x.clone() / nine;
        let tol = like.cst(1.0).ldexp(-(like.precision() as i64));
        for _ in 0..8 {
            // 3e + 3e² + e³ - x, derivative 3(1 + e)².
            let f = e.clone() * (e.clone() * (e.clone() + three.clone()) + three.clone()) - x.clone();
            let one_e = e.clone() + like.cst(1.0);
            let step = f / (one_e.clone() * one_e * three.clone());
            e = e - step.clone();
            if step.norm_sqr() <= e.norm_sqr() * tol.clone() * tol.clone() {
                break;
            }
        }
        let two = like.cst(2.0);
        let zeta = self.zeta.clone() * (e.clone() + like.cst(1.0));
        let nu = self.nu.clone() + dt.clone() - z2 * (e.clone() * (e + two));
        TubePoint { zeta, nu }
    }

    pub fn label(&self) -> Vec<String> {
        vec![format!("zeta={}", c_label(&self.zeta)), format!("nu={}", c_label(&self.nu))]
    }
}

/// `ζ = s/t` for a point of `V` (0 at the origin).
pub fn zeta_of_cusp_point<T: Real>(p: &C2Point<T>) -> Result<Complex<T>> {
    let defect = (p.s.clone() * p.s.clone() - p.t.clone() * p.t.clone() * p.t.clone()).modulus();
    let scale = p.s.norm_sqr().max_of(p.t.norm_sqr() * p.t.modulus()).max_of(p.s.re.cst(1.0));
    if defect > scale * p.s.re.cst(1e-12) {
        return Err(Error::NotOnVariety(defect.to_f64()));
    }
    if is_zero_c(&p.t) {
        return Ok(zero_c(&p.s.re));
    }
    Ok(p.s.clone() / p.t.clone())
}

/// `e^{-1/x} / (e^{-1/x} + e^{-1/(1-x)})`: 0 for `x <= 0`, 1 for `x >= 1`,
/// smooth and increasing in between.
pub fn smooth_step(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / x).exp();
    let b = (-1.0 / (1.0 - x)).exp();
    a / (a + b)
}

/// 0 on `[0, (3/4)²]`, 1 on `[1, ∞)`.
pub fn h_profile(x: f64) -> f64 {
    smooth_step((x - 9.0 / 16.0) / (7.0 / 16.0))
}

/// 1 on `[0, 1/2]`, 0 on `[1, ∞)`.
pub fn chi_profile(x: f64) -> f64 {
    1.0 - smooth_step(2.0 * x - 1.0)
}

/// Per-index geometry: `B_n = B(0, r̃_n)`, `B_n' = B(0, 3r̃_n/4)` and the
/// tube `{|ν| < d_n}`.
#[derive(Clone, Debug)]
pub struct CuspGeometry<T> {
    pub n: usize,
    pub r_tilde: T,
    pub d: T,
}

#[derive(Clone, Debug, Serialize)]
pub struct SheetCheck {
    pub samples: usize,
    /// Smallest sheet separation over `2 d_n`.
    pub min_ratio: f64,
    pub pass: bool,
}

impl<T: Real> CuspGeometry<T> {
    pub fn from_table(table: &ParamTable<T>, n: usize) -> Self {
        CuspGeometry {
            n,
            r_tilde: table.r_tilde(n).clone(),
            d: table.d(n).clone(),
        }
    }

    pub fn core_radius(&self) -> T {
        self.r_tilde.clone() * self.r_tilde.cst(0.75)
    }

    pub fn in_core(&self, z: &C2Point<T>) -> bool {
        let c = self.core_radius();
        z.norm_sqr() < c.clone() * c
    }

    pub fn in_ball(&self, norm_sqr: &T) -> bool {
        *norm_sqr < self.r_tilde.clone() * self.r_tilde.clone()
    }

    /// `|ν|² / d_n²`.
    pub fn tube_ratio(&self, tp: &TubePoint<T>) -> T {
        tp.nu.norm_sqr() / (self.d.clone() * self.d.clone())
    }

    /// `π(z)` on `U_n \ B_n'`.
    pub fn project(&self, z: &C2Point<T>) -> Result<C2Point<T>> {
        if self.in_core(z) {
            return Err(Error::InsideCore);
        }
        let tp = TubePoint::from_c2(z);
        if tp.nu.modulus() > self.d {
            return Err(Error::OutsideTube(format!(
                "|t - s^(2/3)| = {} exceeds d_{} = {}",
                sci(&tp.nu.modulus()),
                self.n,
                sci(&self.d)
            )));
        }
        Ok(tp.base())
    }

    /// `χ_n(z) = χ(h(|z|²/r̃_n²) |z - π(z)|² / d_n²)`, 1 on `B_n'`.
    pub fn chi_n(&self, z: &C2Point<T>) -> T {
        let one = z.s.re.cst(1.0);
        if self.in_core(z) {
            return one;
        }
        let hx = h_profile((z.norm_sqr() / (self.r_tilde.clone() * self.r_tilde.clone())).to_f64());
        if hx == 0.0 {
            return one;
        }
        let x = self.tube_ratio(&TubePoint::from_c2(z)).to_f64();
        one.cst(chi_profile(hx * x))
    }

    /// Separation of the other sheets from `V` at `samples` points of
    /// `V ∩ ∂B_n'`: `√3|ζ|²` between points of `V` over the same `s` (the
    /// fibers the tube is built on) and `2|ζ|³` over the same `t`.
    pub fn sheet_separation(&self, samples: usize) -> SheetCheck {
        let c = self.core_radius();
        let target = c.clone() * c;
        // |ζ|² = x solves x² + x³ = (3r̃/4)².
        let mut x = target.clone().sqrt();
        for _ in 0..8 {
            x = (target.clone() / (x.cst(1.0) + x.clone())).sqrt();
        }
        let two_d = self.d.clone() * self.d.cst(2.0);
        let mut min_ratio = f64::INFINITY;
        for k in 0..samples {
            let theta = TAU * k as f64 / samples as f64;
            let dir = Complex::new(x.cst(theta.cos()), x.cst(theta.sin()));
            let zeta = dir.clone() * (x.clone().sqrt() / dir.modulus());
            let roots = cube_roots(&(zeta.clone() * zeta.clone() * zeta.clone()));
            let z2 = zeta.clone() * zeta.clone();
            let mut sep = (z2.clone() + z2.clone()).modulus() * zeta.modulus();
            for r in &roots {
                let d = (r.clone() * r.clone() - z2.clone()).modulus();
                if d > z2.modulus() * x.cst(1e-6) {
                    sep = sep.min_of(d);
                }
            }
            min_ratio = min_ratio.min((sep / two_d.clone()).to_f64());
        }
        SheetCheck {
            samples,
            min_ratio,
            pass: min_ratio > 1.0,
        }
    }
}

/// `q(z) = e^{|z|²} |s² - t³|²`.
pub fn q_corrector<T: Real>(z: &C2Point<T>) -> T {
    let f = z.s.clone() * z.s.clone() - z.t.clone() * z.t.clone() * z.t.clone();
    z.norm_sqr().exp() * f.norm_sqr()
}

/// `q` from tube coordinates, exactly zero on `V`.
pub fn q_tube<T: Real>(tp: &TubePoint<T>) -> T {
    tp.norm_sqr().exp() * tp.cusp_defect().norm_sqr()
}

/// Closed-form complex Hessian of `q = e^{|z|²}|F|²`, `F = s² - t³`:
/// `H = e^{|z|²} (|F|² I + W W*)` with `W_i = z̄_i F + ∂_i F`.
#[derive(Clone, Debug)]
pub struct QHessian<T> {
    pub weight: T,
    pub f_sqr: T,
    pub w: [Complex<T>; 2],
}

impl<T: Real> QHessian<T> {
    /// `exact_exp = false` takes `e^{|z|²}` in doubles (|z| <= 2 keeps it
    /// in range); used for grid estimates behind a safety factor.
    pub fn at(tp: &TubePoint<T>, exact_exp: bool) -> Self {
        let z = tp.to_c2();
        let n2 = z.norm_sqr();
        let weight = if exact_exp { n2.exp() } else { n2.cst(n2.to_f64().exp()) };
        let f = tp.cusp_defect();
        let two = n2.cst(2.0);
        let three = n2.cst(3.0);
        let ws = z.s.conj() * f.clone() + z.s.clone() * two;
        let wt = z.t.conj() * f.clone() - z.t.clone() * z.t.clone() * three;
        QHessian {
            weight,
            f_sqr: f.norm_sqr(),
            w: [ws, wt],
        }
    }

    /// `∂∂̄q(L, L̄)`.
    pub fn along(&self, l: &[Complex<T>]) -> T {
        let wl = self.w[0].clone() * l[0].clone() + self.w[1].clone() * l[1].clone();
        let ll = l[0].norm_sqr() + l[1].norm_sqr();
        self.weight.clone() * (self.f_sqr.clone() * ll + wl.norm_sqr())
    }

    /// Smallest eigenvalue, `e^{|z|²}|F|²` (the complement of `W` is an
    /// eigenvector).
    pub fn min_eig(&self) -> T {
        self.weight.clone() * self.f_sqr.clone()
    }
}

/// `K_n = 2 C_n / c_n`, so that `-C_n + K_n c_n = C_n >= 0`.
pub fn k_gain<T: Real>(big_c: &T, small_c: &T) -> T {
    big_c.clone() * big_c.cst(2.0) / small_c.clone()
}

/// How a Levi form of `p_n` is sampled at a tube point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum LeviRoute {
    /// `p_n` vanishes on a neighborhood (inside `B_n` or beyond the tube).
    Zero,
    /// `|ν|² < d_n²/2`: `p_n = ρ_n(s^{1/3})` on a neighborhood; sampled with
    /// a step on the scale of ε_n.
    Core,
    /// The cutoff shell and its edge; sampled with a step on the scale of `d_n`.
    Shell,
}

/// The axes of the Levi-constant grid over `A_n ∩ B(0, 2)`.
#[derive(Clone, Debug, Serialize)]
pub struct CuspGrid {
    pub per_axis: usize,
}

/// Grid estimates of `C_n` and `c_n` with their doubled-grid counterparts.
#[derive(Clone, Debug)]
pub struct LeviEstimate<T> {
    pub n: usize,
    pub consts: LeviConstants<T>,
    pub min_p: T,
    pub min_q: T,
    pub min_p_doubled: T,
    pub min_q_doubled: T,
    pub change_big_c: f64,
    pub change_small_c: f64,
    pub per_axis: usize,
    pub stable: bool,
}

#[derive(Serialize)]
struct LeviEstimateDoc {
    n: usize,
    #[serde(rename = "C")]
    big_c: Decimal,
    c: Decimal,
    #[serde(rename = "K")]
    k: Decimal,
    min_levi_p: Decimal,
    min_levi_q: Decimal,
    min_levi_p_doubled: Decimal,
    min_levi_q_doubled: Decimal,
    change_big_c: f64,
    change_small_c: f64,
    grid_per_axis: usize,
    stability_limit: f64,
    stable: bool,
}

impl<T: Real> Serialize for LeviEstimate<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        LeviEstimateDoc {
            n: self.n,
            big_c: self.consts.big_c.to_decimal(),
            c: self.consts.small_c.to_decimal(),
            k: self.consts.k_gain.to_decimal(),
            min_levi_p: self.min_p.to_decimal(),
            min_levi_q: self.min_q.to_decimal(),
            min_levi_p_doubled: self.min_p_doubled.to_decimal(),
            min_levi_q_doubled: self.min_q_doubled.to_decimal(),
            change_big_c: self.change_big_c,
            change_small_c: self.change_small_c,
            grid_per_axis: self.per_axis,
            stability_limit: STABILITY_LIMIT,
            stable: self.stable,
        }
        .serialize(s)
    }
}

/// Largest relative change of a constant under grid doubling.
pub const STABILITY_LIMIT: f64 = 0.25;

/// The extension of the profile stack to `C²`.
#[derive(Clone, Debug)]
pub struct CuspProfile<T> {
    stack: ProfileStack<T>,
    geo: Vec<CuspGeometry<T>>,
    delta: Vec<T>,
    /// `a_n / r_n`.
    w_scale: Vec<T>,
    levi: Vec<Option<LeviConstants<T>>>,
}

impl<T: Real> CuspProfile<T> {
    pub fn new(table: &ParamTable<T>, stack: ProfileStack<T>) -> Self {
        let n_max = stack.n_max();
        CuspProfile {
            geo: (1..=n_max).map(|n| CuspGeometry::from_table(table, n)).collect(),
            delta: (1..=n_max).map(|n| table.delta(n).clone()).collect(),
            w_scale: (1..=n_max).map(|n| table.a(n).clone() / table.r(n).clone()).collect(),
            levi: table.levi.clone(),
            stack,
        }
    }

    pub fn n_max(&self) -> usize {
        self.geo.len()
    }

    pub fn stack(&self) -> &ProfileStack<T> {
        &self.stack
    }

    pub fn geometry(&self, n: usize) -> &CuspGeometry<T> {
        &self.geo[n - 1]
    }

    pub fn constants(&self, n: usize) -> Option<&LeviConstants<T>> {
        self.levi[n - 1].as_ref()
    }

    pub fn set_constants(&mut self, n: usize, consts: LeviConstants<T>) {
        self.levi[n - 1] = Some(consts);
    }

    /// `|ζ|` where `ρ_n` starts to be nonzero.
    pub fn support_start(&self, n: usize) -> T {
        self.w_scale[n - 1].cst(self.stack.level(n).zero_radius) / self.w_scale[n - 1].clone()
    }

    /// `p_n` at a tube point.
    pub fn p_tube(&self, n: usize, tp: &TubePoint<T>, memo: &BandMemo<T>) -> T {
        let geo = self.geometry(n);
        let zero = geo.d.cst(0.0);
        if geo.in_ball(&tp.norm_sqr()) {
            return zero;
        }
        let x = geo.tube_ratio(tp);
        if x >= x.cst(1.0) {
            return zero;
        }
        let rho = self.stack.rho_k_memo(n, &tp.zeta, memo);
        if rho.is_zero() {
            return zero;
        }
        rho * zero.cst(chi_profile(x.to_f64()))
    }

    /// `p_n(z)`: 0 on `B_n`, `ρ_n(ζ(π(z))) χ_n(z)` in the tube, 0 elsewhere.
    pub fn p_n(&self, n: usize, z: &C2Point<T>) -> T {
        let geo = self.geometry(n);
        if geo.in_ball(&z.norm_sqr()) {
            return geo.d.cst(0.0);
        }
        self.p_tube(n, &TubePoint::from_c2(z), &BandMemo::default())
    }

    pub fn route(&self, n: usize, tp: &TubePoint<T>) -> LeviRoute {
        let geo = self.geometry(n);
        if geo.in_ball(&tp.norm_sqr()) {
            return LeviRoute::Zero;
        }
        let x = geo.tube_ratio(tp);
        if x < x.cst(0.5) {
            LeviRoute::Core
        } else if x <= x.cst(1.5) {
            LeviRoute::Shell
        } else {
            LeviRoute::Zero
        }
    }

    /// Step across the tube: `ν` moves by about `10⁻⁴ d_n`.
    pub fn shell_step(&self, n: usize, tp: &TubePoint<T>) -> T {
        let d = &self.geometry(n).d;
        d.clone() * d.cst(SHELL_STEP) / tp.grad_nu_sqr().sqrt()
    }

    /// Levi form of `p_n` along `l` (unit) with the route's step.
    pub fn p_levi(
        &self,
        n: usize,
        tp: &TubePoint<T>,
        l: &[Complex<f64>],
        memo: &BandMemo<T>,
    ) -> Result<(LeviRoute, StencilSample<T>, T)> {
        let like = &tp.zeta.re;
        let (ls, lt) = (lift(l[0], like), lift(l[1], like));
        let route = self.route(n, tp);
        let zero = like.cst(0.0);
        let zero_sample = || StencilSample {
            value: zero.clone(),
            curvature: zero.clone(),
            magnitude: zero.clone(),
        };
        match route {
            LeviRoute::Zero => Ok((route, zero_sample(), zero.clone())),
            LeviRoute::Shell => {
                let h = self.shell_step(n, tp);
                let s = self.shell_sample(n, tp, &ls, &lt, &h, memo)?;
                Ok((route, s, h))
            }
            LeviRoute::Core => {
                if l[0].norm_sqr() == 0.0 {
                    return Ok((route, zero_sample(), zero.clone()));
                }
                // p_n = ρ_n(ζ(s)) near tp; the w-plane step is ε_n / 16.
                let eps = self.stack.level(n).eps;
                let h = tp.zeta.norm_sqr() * like.cst(3.0 * CORE_STEP * eps / l[0].modulus())
                    / self.w_scale[n - 1].clone();
                let zero_c = zero_c(like);
                let s = restricted_laplacian(
                    |tau| Ok(self.stack.rho_k_memo(n, &tp.displaced(&(ls.clone() * tau.clone()), &zero_c).zeta, memo)),
                    &h,
                )?;
                Ok((route, s.scaled(0.25), h))
            }
        }
    }

    /// Shell stencil in doubles. Over a step `h ~ 10⁻⁴ d_n` the point `ζ`
    /// moves far below the band memo's reuse radius, so `ρ_n(ζ)` is one
    /// constant and the stencil only sees `τ ↦ χ(|ν(τ)|²/d_n²)`. `ν(τ)` is
    /// taken to first order, `ν + τ(L_t - 2L_s/(3ζ))`; its second-order
    /// term is holomorphic and drops out of the Laplacian.
    fn shell_sample(
        &self,
        n: usize,
        tp: &TubePoint<T>,
        ls: &Complex<T>,
        lt: &Complex<T>,
        h: &T,
        memo: &BandMemo<T>,
    ) -> Result<StencilSample<T>> {
        let like = &tp.zeta.re;
        let rho = self.stack.rho_k_memo(n, &tp.zeta, memo);
        let zero = like.cst(0.0);
        if rho.is_zero() || is_zero_c(&tp.zeta) {
            return Ok(StencilSample {
                value: zero.clone(),
                curvature: zero.clone(),
                magnitude: zero,
            });
        }
        let inv_d = like.cst(1.0) / self.geometry(n).d.clone();
        let to64 = |z: Complex<T>| Complex::new(z.re.to_f64(), z.im.to_f64());
        let nu0 = to64(tp.nu.clone() * inv_d.clone());
        let dnu = lt.clone() - ls.clone() * like.cst(2.0 / 3.0) / tp.zeta.clone();
        let g = to64(dnu * (h.clone() * inv_d));
        let s = restricted_laplacian(|sig: &Complex<f64>| Ok(chi_profile((nu0 + g * sig).norm_sqr())), &1.0)?;
        let scale = rho / (h.clone() * h.clone()) * like.cst(0.25);
        let abs = scale.abs();
        Ok(StencilSample {
            value: scale * like.cst(s.value),
            curvature: abs.clone() * like.cst(s.curvature),
            magnitude: abs * like.cst(s.magnitude),
        })
    }

    /// The shell stencil on `p_n` itself, every stencil point displaced in
    /// the wide type. Slower; cross-checks [`shell_sample`](Self::shell_sample).
    pub fn shell_sample_wide(
        &self,
        n: usize,
        tp: &TubePoint<T>,
        l: &[Complex<f64>],
        memo: &BandMemo<T>,
    ) -> Result<StencilSample<T>> {
        let like = &tp.zeta.re;
        let (ls, lt) = (lift(l[0], like), lift(l[1], like));
        let h = self.shell_step(n, tp);
        let s = restricted_laplacian(
            |tau| Ok(self.p_tube(n, &tp.displaced(&(ls.clone() * tau.clone()), &(lt.clone() * tau.clone())), memo)),
            &h,
        )?;
        Ok(s.scaled(0.25))
    }

    /// Minimum eigenvalue of the Levi matrix of `p_n` at a shell point.
    pub fn p_min_eig(&self, n: usize, tp: &TubePoint<T>, memo: &BandMemo<T>) -> Result<T> {
        let (h11, h22, h12) = levi_matrix_2d(|l| Ok(self.p_levi(n, tp, l, memo)?.1.value))?;
        Ok(hermitian_min_eig(&h11, &h22, &h12))
    }

    /// Tube points of a grid over `A_n`: `|ζ|` from `zeta_lo` to
    /// [`BALL_ZETA`], `arg ζ` and `arg ν` uniform, `|ν|` in `[d/√2, d]`.
    fn shell_grid(&self, n: usize, m: usize, zeta_axis: &[T]) -> Vec<(usize, TubePoint<T>)> {
        let d = &self.geometry(n).d;
        let mut out = Vec::with_capacity(zeta_axis.len() * m * m * m);
        for (iz, rz) in zeta_axis.iter().enumerate() {
            for ia in 0..m {
                let ta = TAU * ia as f64 / m as f64;
                let zeta = Complex::new(rz.clone() * rz.cst(ta.cos()), rz.clone() * rz.cst(ta.sin()));
                for iv in 0..m {
                    let frac = FRAC_1_SQRT_2 + (1.0 - FRAC_1_SQRT_2) * iv as f64 / (m - 1) as f64;
                    let rv = d.clone() * d.cst(frac);
                    for ib in 0..m {
                        let tb = TAU * ib as f64 / m as f64;
                        let nu = Complex::new(rv.clone() * rv.cst(tb.cos()), rv.clone() * rv.cst(tb.sin()));
                        out.push((iz, TubePoint { zeta: zeta.clone(), nu }));
                    }
                }
            }
        }
        out
    }

    /// `|ζ|` axis for `C_n`: half the nodes on `|w| ∈ [w₀, 4w₀]` (where
    /// `ρ_n / |ζ|²` peaks, `w₀` the start of the support), the rest
    /// log-spaced up to [`BALL_ZETA`].
    fn p_axis(&self, n: usize, m: usize) -> Vec<T> {
        let w0 = self.stack.level(n).zero_radius;
        let scale = &self.w_scale[n - 1];
        let near = m / 2;
        let mut axis: Vec<T> = (0..near)
            .map(|i| scale.cst(w0 * (1.0 + 3.0 * i as f64 / (near - 1) as f64)) / scale.clone())
            .collect();
        let lo = (scale.cst(4.0 * w0) / scale.clone()).ln_abs_f64();
        let hi = BALL_ZETA.ln();
        let far = m - near;
        for i in 1..=far {
            let l = lo + (hi - lo) * i as f64 / far as f64;
            axis.push(T::from_ln_f64(l, scale.precision()));
        }
        axis
    }

    /// `|ζ|` axis for `c_n`: log-spaced from the edge of `B_n` to [`BALL_ZETA`].
    fn q_axis(&self, n: usize, m: usize) -> Vec<T> {
        let rt = &self.geometry(n).r_tilde;
        let lo = rt.ln_abs_f64() * 0.5 + 1e-9;
        let hi = BALL_ZETA.ln();
        (0..m)
            .map(|i| T::from_ln_f64(lo + (hi - lo) * i as f64 / (m - 1) as f64, rt.precision()))
            .collect()
    }

    /// `(min λ(p_n), min λ(q))` over the grids with `m` nodes per axis.
    fn grid_minima(&self, n: usize, m: usize) -> Result<(T, T)> {
        let geo = self.geometry(n);
        let p_axis = self.p_axis(n, m);
        let p_points = self.shell_grid(n, m, &p_axis);
        // One task per |ζ| node keeps band memo hits within a task.
        let per_node: Vec<Result<Option<T>>> = (0..p_axis.len())
            .into_par_iter()
            .map(|iz| {
                let memo = BandMemo::default();
                let mut best: Option<T> = None;
                for (_, tp) in p_points.iter().filter(|(i, _)| *i == iz) {
                    if geo.in_ball(&tp.norm_sqr()) {
                        continue;
                    }
                    let v = self.p_min_eig(n, tp, &memo)?;
                    if best.as_ref().is_none_or(|b| v < *b) {
                        best = Some(v);
                    }
                }
                Ok(best)
            })
            .collect();
        let mut min_p: Option<T> = None;
        for r in per_node {
            if let Some(v) = r? {
                if min_p.as_ref().is_none_or(|b| v < *b) {
                    min_p = Some(v);
                }
            }
        }
        let q_points = self.shell_grid(n, m, &self.q_axis(n, m));
        let min_q = q_points
            .par_iter()
            .filter(|(_, tp)| !geo.in_ball(&tp.norm_sqr()))
            .map(|(_, tp)| QHessian::at(tp, false).min_eig())
            .collect::<Vec<T>>()
            .into_iter()
            .reduce(|a, b| a.min_of(b));
        match (min_p, min_q) {
            (Some(p), Some(q)) => Ok((p, q)),
            _ => Err(Error::EmptyRegion),
        }
    }

    /// `C_n = 2 max(0, -min λ(p_n))`, `c_n = min λ(q) / 2` over `A_n`, with
    /// the same estimate on a grid of twice the resolution for stability.
    pub fn estimate_levi_constants(&self, n: usize, grid: &CuspGrid) -> Result<LeviEstimate<T>> {
        let m = grid.per_axis;
        if m < 8 {
            return Err(Error::Domain(format!("grid needs at least 8 nodes per axis, got {m}")));
        }
        let (min_p, min_q) = self.grid_minima(n, m)?;
        let (min_p2, min_q2) = self.grid_minima(n, 2 * m)?;
        let zero = min_p.cst(0.0);
        let two = min_p.cst(2.0);
        if !min_q.is_positive() {
            return Err(Error::NonPositiveCorrector(format!(
                "min Levi form of q on A_{n} is {}",
                sci(&min_q)
            )));
        }
        let big = |p: &T| (-p.clone()).max_of(zero.clone()) * two.clone();
        let small = |q: &T| q.clone() / two.clone();
        let big_c = big(&min_p);
        let small_c = small(&min_q);
        let change = |a: &T, b: &T| {
            if a.is_zero() && b.is_zero() {
                0.0
            } else {
                a.rel_diff(b)
            }
        };
        let change_big_c = change(&big_c, &big(&min_p2));
        let change_small_c = change(&small_c, &small(&min_q2));
        let k = k_gain(&big_c, &small_c);
        Ok(LeviEstimate {
            n,
            consts: LeviConstants {
                big_c,
                small_c,
                k_gain: k,
            },
            min_p,
            min_q,
            min_p_doubled: min_p2,
            min_q_doubled: min_q2,
            change_big_c,
            change_small_c,
            per_axis: m,
            stable: change_big_c < STABILITY_LIMIT && change_small_c < STABILITY_LIMIT,
        })
    }

    /// The summand `p_n + K_n q`; needs the Levi constants.
    pub fn summand(&self, n: usize) -> Result<PshSummand<'_, T>> {
        let consts = self
            .constants(n)
            .ok_or_else(|| Error::Domain(format!("Levi constants for n = {n} not set")))?;
        Ok(PshSummand::new(self, n, consts.clone()))
    }

    /// `ρ̃(ζ³, ζ²) + tail < δ_n - (a_n δ_n / r_n) Re ζ` over `|ζ| < r_n`, on
    /// the same samples as the planar check. The single-term margin uses
    /// `p_n(ζ³, ζ²) <= 1/2 - (a_n/r_n) Re ζ`.
    pub fn target_check_on_curve(&self, n: usize, count: usize) -> Result<TargetCheck<T>> {
        let points = self.stack.disc_samples(n, count);
        let delta = self.delta[n - 1].clone();
        let scale = self.w_scale[n - 1].clone();
        let half = delta.cst(0.5);
        let rows: Vec<Result<(T, T)>> = points
            .par_iter()
            .map(|z| {
                let tp = TubePoint::on_curve(z.clone());
                let upper = self.rho_tilde(&tp)?.upper();
                let slope = scale.clone() * z.re.clone();
                let p = self.p_tube(n, &tp, &BandMemo::default());
                Ok((delta.clone() - delta.clone() * slope.clone() - upper, half.clone() - slope - p))
            })
            .collect();
        let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
        let rescaled_margin = rows.iter().map(|r| r.1.clone()).reduce(|a, b| a.min_of(b)).ok_or(Error::EmptyRegion)?;
        let (i, min_margin) = rows
            .into_iter()
            .map(|r| r.0)
            .enumerate()
            .reduce(|a, b| if b.1 < a.1 { b } else { a })
            .ok_or(Error::EmptyRegion)?;
        Ok(TargetCheck {
            n,
            samples: points.len(),
            relative_margin: (min_margin.clone() / delta).to_f64(),
            pass: min_margin.is_positive() && !rescaled_margin.is_negative(),
            min_margin,
            argmin: points[i].clone(),
            rescaled_margin,
        })
    }

    /// `ρ̃ = Σ δ_j (p_j + K_j q)` at a tube point. On `V` (`ν = 0`) the
    /// summands restrict to `ρ_j(ζ)` and the tail is that of the planar
    /// series; off `V` the tail is unbounded (`K_j q` grows without bound in
    /// `j`), reported as infinite.
    pub fn rho_tilde(&self, tp: &TubePoint<T>) -> Result<TailInterval<T>> {
        let memo = BandMemo::default();
        let like = &tp.zeta.re;
        let on_v = is_zero_c(&tp.nu);
        let q = if on_v { like.cst(0.0) } else { q_tube(tp) };
        let mut value = like.cst(0.0);
        for j in 1..=self.n_max() {
            let k = match (on_v, self.constants(j)) {
                (true, _) => like.cst(0.0),
                (false, Some(c)) => c.k_gain.clone(),
                (false, None) => return Err(Error::Domain(format!("Levi constants for n = {j} not set"))),
            };
            let r = self.p_tube(j, tp, &memo) + k * q.clone();
            value = value + self.delta[j - 1].clone() * r;
        }
        let planar = self.stack.rho(&tp.zeta);
        let (tail_lo, tail_hi) = if on_v {
            (planar.tail_lo, planar.tail_hi)
        } else {
            (-T::infinity(), T::infinity())
        };
        Ok(TailInterval {
            value,
            tail_lo,
            tail_hi,
        })
    }
}

/// `p_n + K_n q` with its constants.
#[derive(Clone, Debug)]
pub struct PshSummand<'a, T> {
    profile: &'a CuspProfile<T>,
    pub n: usize,
    pub consts: LeviConstants<T>,
}

/// Sample families of the plurisubharmonicity check.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SampleFamily {
    /// `A_n` over the whole `|ζ|` range.
    Shell,
    /// `A_n` over the support of `ρ_n`.
    ShellSupport,
    /// `|ν| < d_n/2` over the support of `ρ_n`.
    Core,
    /// Inside `B_n`.
    Ball,
    /// Uniform in `B(0, 2)`.
    Uniform,
}

pub const SAMPLE_FAMILIES: [SampleFamily; 5] = [
    SampleFamily::Shell,
    SampleFamily::ShellSupport,
    SampleFamily::Core,
    SampleFamily::Ball,
    SampleFamily::Uniform,
];

#[derive(Clone, Debug)]
pub struct PshCheck<T> {
    pub n: usize,
    pub report: LeviReport<T>,
    /// Samples per family, in [`SAMPLE_FAMILIES`] order.
    pub per_family: Vec<(SampleFamily, usize)>,
    /// Samples by route: zero, core, shell.
    pub routes: [usize; 3],
}

#[derive(Serialize)]
#[serde(bound = "")]
struct PshCheckDoc<'a, T: Real> {
    n: usize,
    report: &'a LeviReport<T>,
    per_family: &'a [(SampleFamily, usize)],
    routes_zero_core_shell: [usize; 3],
}

impl<T: Real> Serialize for PshCheck<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PshCheckDoc {
            n: self.n,
            report: &self.report,
            per_family: &self.per_family,
            routes_zero_core_shell: self.routes,
        }
        .serialize(s)
    }
}

impl<'a, T: Real> PshSummand<'a, T> {
    /// Any constants, including `K = 0` (`p_n` alone) as a negative control.
    pub fn new(profile: &'a CuspProfile<T>, n: usize, consts: LeviConstants<T>) -> Self {
        PshSummand { profile, n, consts }
    }

    pub fn eval(&self, z: &C2Point<T>) -> T {
        let tp = TubePoint::from_c2(z);
        self.eval_tube(&tp)
    }

    pub fn eval_tube(&self, tp: &TubePoint<T>) -> T {
        let p = self.profile.p_tube(self.n, tp, &BandMemo::default());
        if is_zero_c(&tp.nu) {
            return p;
        }
        p + self.consts.k_gain.clone() * q_tube(tp)
    }

    /// Levi form of the summand along unit `l`: the sampled Levi form of
    /// `p_n` plus `K_n` times the closed form for `q`.
    pub fn levi(&self, tp: &TubePoint<T>, l: &[Complex<f64>], tol: &Tolerance, memo: &BandMemo<T>) -> Result<(LeviRoute, LeviEval<T>)> {
        let (route, p, h) = self.profile.p_levi(self.n, tp, l, memo)?;
        let like = &tp.zeta.re;
        let lt = [lift(l[0], like), lift(l[1], like)];
        let q = self.consts.k_gain.clone() * QHessian::at(tp, true).along(&lt);
        let value = p.value.clone() + q.clone();
        let tol = (p.curvature + q) * like.cst(tol.rel) + p.magnitude * like.cst(tol.noise);
        Ok((
            route,
            LeviEval {
                value,
                tol,
                point: tp.label(),
                direction: l.to_vec(),
                step: h,
            },
        ))
    }

    /// Deterministic samples, `per_family` of each [`SampleFamily`].
    pub fn samples(&self, per_family: usize, seed: u64) -> Vec<(SampleFamily, TubePoint<T>)> {
        let n = self.n;
        let prof = self.profile;
        let geo = prof.geometry(n);
        let like = geo.d.clone();
        let bits = like.precision();
        let offset = (seed as usize % 9973) * 101;
        let hal = |i: usize, j: usize| halton(offset + i + 1, [2, 3, 5, 7, 11, 13][j]);
        let ln_lo_full = geo.r_tilde.ln_abs_f64() * 0.5 + 1e-6;
        let support = prof.support_start(n);
        let ln_lo_sup = support.ln_abs_f64();
        let ln_hi = BALL_ZETA.ln();
        let polar = |r: T, theta: f64| Complex::new(r.clone() * r.cst(theta.cos()), r.clone() * r.cst(theta.sin()));
        let tube = |i: usize, ln_lo: f64, nu_lo: f64, nu_hi: f64| {
            let rz = T::from_ln_f64(ln_lo + (ln_hi - ln_lo) * hal(i, 0), bits);
            let zeta = polar(rz, TAU * hal(i, 1));
            let rv = like.clone() * like.cst(nu_lo + (nu_hi - nu_lo) * hal(i, 2));
            TubePoint {
                zeta,
                nu: polar(rv, TAU * hal(i, 3)),
            }
        };
        let mut out = Vec::with_capacity(5 * per_family);
        for i in 0..per_family {
            out.push((SampleFamily::Shell, tube(i, ln_lo_full, FRAC_1_SQRT_2, 1.0)));
        }
        for i in 0..per_family {
            out.push((SampleFamily::ShellSupport, tube(i, ln_lo_sup, FRAC_1_SQRT_2, 1.0)));
        }
        for i in 0..per_family {
            out.push((SampleFamily::Core, tube(i, ln_lo_sup, 0.0, 0.5)));
        }
        let gauss4 = |i: usize| -> [f64; 5] {
            let mut g = [0.0; 4];
            for k in 0..2 {
                let u1 = hal(i, 2 * k).max(f64::MIN_POSITIVE);
                let r = (-2.0 * u1.ln()).sqrt();
                let a = TAU * hal(i, 2 * k + 1);
                g[2 * k] = r * a.cos();
                g[2 * k + 1] = r * a.sin();
            }
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            [g[0] / norm, g[1] / norm, g[2] / norm, g[3] / norm, hal(i, 4)]
        };
        let ball_point = |i: usize, radius: &T| {
            let g = gauss4(i);
            let r = radius.clone() * radius.cst(g[4].powf(0.25));
            let s = Complex::new(r.clone() * r.cst(g[0]), r.clone() * r.cst(g[1]));
            let t = Complex::new(r.clone() * r.cst(g[2]), r.clone() * r.cst(g[3]));
            TubePoint::from_c2(&C2Point::new(s, t))
        };
        for i in 0..per_family {
            out.push((SampleFamily::Ball, ball_point(i, &geo.r_tilde)));
        }
        let two = like.cst(2.0);
        for i in 0..per_family {
            out.push((SampleFamily::Uniform, ball_point(i + per_family, &two)));
        }
        out
    }

    /// Sampled plurisubharmonicity over [`samples`](Self::samples),
    /// `directions` unit directions per point.
    pub fn check(&self, per_family: usize, directions: usize, seed: u64, tol: Tolerance) -> Result<PshCheck<T>> {
        if directions < 16 {
            return Err(Error::Domain(format!("{directions} directions, need at least 16")));
        }
        let samples = self.samples(per_family, seed);
        let dirs = sphere_directions(2, directions, seed);
        let evals: Vec<Result<Vec<(LeviRoute, LeviEval<T>)>>> = samples
            .par_iter()
            .map(|(_, tp)| {
                let memo = BandMemo::default();
                dirs.iter().map(|l| self.levi(tp, l, &tol, &memo)).collect()
            })
            .collect();
        let mut flat = Vec::with_capacity(samples.len() * directions);
        let mut routes = [0usize; 3];
        for r in evals {
            let r = r?;
            if let Some((route, _)) = r.first() {
                routes[match route {
                    LeviRoute::Zero => 0,
                    LeviRoute::Core => 1,
                    LeviRoute::Shell => 2,
                }] += 1;
            }
            flat.extend(r.into_iter().map(|(_, e)| e));
        }
        let report = LeviReport::from_evals(&flat, seed, tol)?;
        Ok(PshCheck {
            n: self.n,
            report,
            per_family: SAMPLE_FAMILIES.iter().map(|&f| (f, per_family)).collect(),
            routes,
        })
    }
}
