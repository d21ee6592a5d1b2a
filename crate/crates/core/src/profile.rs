//! The one-variable profile stack: `u_n`, the kinked `R_n`, its mollification
//! `R̃_n`, the rescaled `ρ_n(z) = R̃_n(a_n z / r_n)` and the weighted series
//! `ρ = Σ δ_n ρ_n` with a certified truncation tail.
//!
//! `u_n`, `R_n` and `R̃_n` live on the O(1) "w-plane" and are evaluated in
//! ordinary floats. Only the rescaling and the weighted sum need the wide
//! range of [`Real`].

use std::cell::RefCell;

use num_complex::Complex;
use num_traits::Float;
use rayon::prelude::*;
use serde::Serialize;

use crate::diff::{halton, Tolerance};
use crate::error::{Error, Result};
use crate::kernel::MollifierKernel;
use crate::params::ParamTable;
use crate::scalar::{Decimal, Real, ScaledReal};

/// `u(w) = 1/8 - Re w + ln|w| / (4 ln a)`; `-inf` at the origin.
pub fn u<F: Float>(w: Complex<F>, ln_a: F) -> F {
    let eighth = F::from(0.125).unwrap();
    let four = F::from(4.0).unwrap();
    eighth - w.re + w.norm().ln() / (four * ln_a)
}

/// `R(w) = max(u(w), 0)` left of the line `Re w = b`, `u(w)` right of it.
pub fn r_piecewise<F: Float>(w: Complex<F>, ln_a: F, b: F) -> F {
    let v = u(w, ln_a);
    if w.re <= b {
        v.max(F::zero())
    } else {
        v
    }
}

/// Smallest root `t*` of `1/8 + t + ln t / (4 ln a)`; `u < 0` on `|w| < t*`.
pub fn kink_inner_radius(ln_a: f64, b: f64) -> f64 {
    let h = |t: f64| 0.125 + t + t.ln() / (4.0 * ln_a);
    // h(b) = 2b > 0 by the defining equation of b, and h -> -inf at 0.
    let mut hi = b;
    let mut lo = b;
    while h(lo) >= 0.0 {
        lo *= 0.5;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= hi * 1e-15 {
            break;
        }
    }
    lo
}

/// One index of the stack, in w-plane coordinates.
#[derive(Clone, Debug, Serialize)]
pub struct ProfileLevel {
    pub n: usize,
    pub ln_a: f64,
    pub b: f64,
    pub eps: f64,
    pub t_star: f64,
    /// `R̃_n ≡ 0` on `|w| < zero_radius`.
    pub zero_radius: f64,
    /// `R̃_n = u_n` on `|w| > harmonic_radius` (mean-value property).
    pub harmonic_radius: f64,
    /// Working precision for `u` at band centers.
    pub bits: usize,
}

/// Relative slack on the double-rounded radii `t*` and `b` when choosing a
/// short-circuit, so rounding never assigns a band point to one.
const RADIUS_SLACK: f64 = 1e-12;

impl ProfileLevel {
    fn new(n: usize, ln_a: f64, b: f64, eps: f64, r: f64, bits: usize) -> Self {
        let t_star = kink_inner_radius(ln_a, b);
        ProfileLevel {
            n,
            ln_a,
            b,
            eps,
            t_star,
            zero_radius: r.max(t_star * (1.0 - RADIUS_SLACK) - eps),
            harmonic_radius: b * (1.0 + RADIUS_SLACK) + eps,
            bits,
        }
    }

    pub fn u(&self, w: Complex<f64>) -> f64 {
        u(w, self.ln_a)
    }

    /// `u(w)` computed at the level's working precision and rounded once.
    /// Near the kink `u` is a small difference of O(1) terms, and ε_n may be
    /// far below the double rounding of that difference.
    pub fn u_precise(&self, w: Complex<f64>) -> f64 {
        let c = |x: f64| ScaledReal::new(x, self.bits);
        let m2 = c(w.re) * c(w.re) + c(w.im) * c(w.im);
        (c(0.125) - c(w.re) + m2.ln() / c(8.0 * self.ln_a)).to_f64()
    }

    pub fn r(&self, w: Complex<f64>) -> f64 {
        r_piecewise(w, self.ln_a, self.b)
    }

    /// `R̃_n(w)`, with exact short-circuits on the zero and harmonic regions.
    pub fn r_smooth(&self, w: Complex<f64>, kernel: &MollifierKernel<f64>) -> f64 {
        match self.region(w) {
            Region::Zero => 0.0,
            Region::Harmonic => self.u(w),
            Region::Band => self.r_smooth_quadrature(w, self.u_precise(w), kernel),
        }
    }

    fn region(&self, w: Complex<f64>) -> Region {
        let m = w.norm();
        if m < self.zero_radius {
            Region::Zero
        } else if m > self.harmonic_radius {
            Region::Harmonic
        } else {
            Region::Band
        }
    }

    /// `R̃_n(w)` by positive-part quadrature, given `uw = u(w)` accurate to
    /// well below ε_n; `w` itself only needs double accuracy. Valid for
    /// `2 ε_n < |w| <= b + ε_n` (up to the radius slack). There `R = max(u, 0)`
    /// on the whole ε-disc: points right of `Re w = b` within `|w| <= b + 2ε_n`
    /// have `u > 0` because `1/8 - t + ln t / (4 ln a) > 0` just above its
    /// root `b`.
    ///
    /// The integrand `u(w - εv)` is evaluated as
    /// `u(w) + ε Re v + ln|1 - εv/w| / (4 ln a)` so that offsets of size ε_n
    /// survive rounding even when ε_n is far below the resolution of `w`.
    pub fn r_smooth_quadrature(&self, w: Complex<f64>, uw: f64, kernel: &MollifierKernel<f64>) -> f64 {
        let four_l = 4.0 * self.ln_a;
        let eps = self.eps;
        if w.norm() <= 2.0 * eps {
            return 0.0;
        }
        let inv_w = w.inv();
        kernel.convolve_positive_part(|v| {
            let x = v * eps;
            let y = x * inv_w;
            uw + x.re + 0.5 * (-2.0 * y.re + y.norm_sqr()).ln_1p() / four_l
        })
    }
}

/// Truncated series value with a certified enclosure of the omitted tail:
/// the full series lies in `[value + tail_lo, value + tail_hi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TailInterval<T> {
    pub value: T,
    pub tail_lo: T,
    pub tail_hi: T,
}

impl<T: Real> TailInterval<T> {
    pub fn upper(&self) -> T {
        self.value.clone() + self.tail_hi.clone()
    }

    pub fn lower(&self) -> T {
        self.value.clone() + self.tail_lo.clone()
    }
}

enum Region {
    Zero,
    Harmonic,
    Band,
}

#[derive(Serialize)]
struct TailDoc {
    value: Decimal,
    tail_lo: Decimal,
    tail_hi: Decimal,
}

impl<T: Real> Serialize for TailInterval<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TailDoc {
            value: self.value.to_decimal(),
            tail_lo: self.tail_lo.to_decimal(),
            tail_hi: self.tail_hi.to_decimal(),
        }
        .serialize(s)
    }
}

/// `ln |z|` as a double without forming `|z|²` (which may leave the range of `T`).
pub fn ln_norm<T: Real>(z: &Complex<T>) -> f64 {
    let (a, b) = (z.re.abs(), z.im.abs());
    let (big, small) = if a >= b { (a, b) } else { (b, a) };
    if big.is_zero() {
        return f64::NEG_INFINITY;
    }
    let ratio = (small / big.clone()).to_f64();
    big.ln_abs_f64() + 0.5 * (ratio * ratio).ln_1p()
}

/// Relative w-plane distance, in units of ε_k, below which a band value is
/// reused. `R̃_k` is Lipschitz with constant below `1 + 1/(4 ln a |w|) < 10`
/// on the band, so a reused value is off by less than `10 · 2^-50 · ε_k`.
const MEMO_REUSE: f64 = 1.0 / (1u64 << 50) as f64;

#[derive(Debug)]
struct Memo<T> {
    k: usize,
    w: Complex<T>,
    value: f64,
}

/// Last band quadrature of a [`ProfileStack`]; one per thread of work.
#[derive(Debug)]
pub struct BandMemo<T>(RefCell<Option<Memo<T>>>);

impl<T> Default for BandMemo<T> {
    fn default() -> Self {
        BandMemo(RefCell::new(None))
    }
}

/// Evaluators for `ρ_k` and `ρ` built from a parameter table.
#[derive(Clone, Debug)]
pub struct ProfileStack<T> {
    levels: Vec<ProfileLevel>,
    /// `a_k / r_k`.
    scale: Vec<T>,
    /// `r_k`.
    radius: Vec<T>,
    delta: Vec<T>,
    /// Bound on `|Σ_{k>N} δ_k ρ_k(z)|` for `|z| <= 2`, `z != 0`.
    tail: T,
    kernel: MollifierKernel<f64>,
    negate: bool,
}

impl<T: Real> ProfileStack<T> {
    /// `quad` nodes per axis for the mollifier rule.
    pub fn new(table: &ParamTable<T>, quad: usize) -> Result<Self> {
        let kernel = MollifierKernel::new(quad, quad)?;
        let mut levels = Vec::with_capacity(table.n_max);
        let mut scale = Vec::with_capacity(table.n_max);
        for n in 1..=table.n_max {
            let ln_a = table.ln_a(n).to_f64();
            let b = table.b(n).to_f64();
            let eps = table.eps(n).to_f64();
            let r = table.r(n).to_f64();
            if eps == 0.0 || !eps.is_normal() {
                return Err(Error::Underflow {
                    index: n,
                    what: "eps in double precision",
                    bits: 53,
                });
            }
            levels.push(ProfileLevel::new(n, ln_a, b, eps, r, table.precision_bits));
            scale.push(table.a(n).clone() / table.r(n).clone());
        }
        let n_max = table.n_max;
        let d_n = table.delta(n_max).clone();
        // Σ_{k>N} |δ_k ρ_k| <= 2 Σ_{k>N} δ_k A_k <= 2 δ_N Σ_{k>N} 2^-k = 2^(1-N) δ_N,
        // reported as max(2^(1-N), 1/2) δ_N.
        let tail = d_n.clone().ldexp(1 - n_max as i64).max_of(d_n.ldexp(-1));
        Ok(ProfileStack {
            levels,
            scale,
            radius: table.r.clone(),
            delta: table.delta.clone(),
            tail,
            kernel,
            negate: false,
        })
    }

    /// The same stack with every `ρ_k` negated (sabotage hook for failure paths).
    pub fn negated(mut self) -> Self {
        self.negate = !self.negate;
        self
    }

    pub fn n_max(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, n: usize) -> &ProfileLevel {
        &self.levels[n - 1]
    }

    pub fn kernel(&self) -> &MollifierKernel<f64> {
        &self.kernel
    }

    pub fn tail_bound(&self) -> &T {
        &self.tail
    }

    /// `R̃_n(w)` on the w-plane.
    pub fn r_smooth(&self, n: usize, w: Complex<f64>) -> f64 {
        self.level(n).r_smooth(w, &self.kernel)
    }

    /// `a_k z / r_k`.
    pub fn to_w(&self, k: usize, z: &Complex<T>) -> Complex<T> {
        z.clone() * self.scale[k - 1].clone()
    }

    /// `ρ_k(z) = R̃_k(a_k z / r_k)`.
    pub fn rho_k(&self, k: usize, z: &Complex<T>) -> T {
        self.rho_k_memo(k, z, &BandMemo::default())
    }

    /// [`rho_k`](Self::rho_k) reusing the last band quadrature when the
    /// rounded w-plane point repeats (stencils far below the band scale).
    pub fn rho_k_memo(&self, k: usize, z: &Complex<T>, memo: &BandMemo<T>) -> T {
        let w = self.to_w(k, z);
        let v = self.r_smooth_w(k, &w, memo);
        if self.negate {
            -v
        } else {
            v
        }
    }

    /// Zero of `u_k` on the ray `arg w = θ` inside the band (a point of the
    /// kink of `R_k`), to the working precision.
    pub fn kink_point(&self, k: usize, theta: f64) -> Complex<T> {
        let level = self.level(k);
        let c = |x: f64| self.tail.cst(x);
        let g64 = |t: f64| 0.125 - t * theta.cos() + t.ln() / (4.0 * level.ln_a);
        // u(t e^{iθ}) increases in t on (0, b].
        let (mut lo, mut hi) = (level.t_star * 0.5, level.b);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g64(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // Unit vector normalized in the wide type so that |w| = t exactly.
        let (c0, s0) = (c(theta.cos()), c(theta.sin()));
        let norm = (c0.clone() * c0.clone() + s0.clone() * s0.clone()).sqrt();
        let (cos, sin) = (c0 / norm.clone(), s0 / norm);
        let l4 = c(4.0 * level.ln_a);
        let mut t = c(0.5 * (lo + hi));
        for _ in 0..6 {
            let g = c(0.125) - t.clone() * cos.clone() + t.ln() / l4.clone();
            let dg = c(1.0) / (l4.clone() * t.clone()) - cos.clone();
            t = t - g / dg;
        }
        Complex::new(t.clone() * cos, t * sin)
    }

    /// Five-point Laplacian of `R̃_k` at the w-plane point `w`, step `h`.
    pub fn laplacian_w(&self, k: usize, w: &Complex<T>, h: &T) -> Result<crate::diff::StencilSample<T>> {
        let memo = BandMemo::default();
        crate::diff::restricted_laplacian(|tau| Ok(self.r_smooth_w(k, &(w.clone() + tau.clone()), &memo)), h)
    }

    /// `u_k(w)` in the wide type, rounded to a double.
    fn u_at(&self, k: usize, w: &Complex<T>) -> f64 {
        let c = |x: f64| w.re.cst(x);
        let m2 = w.re.clone() * w.re.clone() + w.im.clone() * w.im.clone();
        (c(0.125) - w.re.clone() + m2.ln() / c(8.0 * self.level(k).ln_a)).to_f64()
    }

    /// `R̃_k(w)` at a w-plane point given in the wide type.
    pub fn r_smooth_w(&self, k: usize, w: &Complex<T>, memo: &BandMemo<T>) -> T {
        let level = self.level(k);
        let lm = ln_norm(w);
        if lm < level.zero_radius.ln() {
            return T::zero();
        }
        if lm > level.harmonic_radius.ln() {
            // Far field: u in the wide type; only the logarithm is a double.
            let c = |x: f64| w.re.cst(x);
            return c(0.125) - w.re.clone() + c(lm / (4.0 * level.ln_a));
        }
        let mut last = memo.0.borrow_mut();
        let reuse = w.re.cst(MEMO_REUSE * level.eps);
        let v = match *last {
            Some(ref m)
                if m.k == k
                    && (m.w.re.clone() - w.re.clone()).abs() + (m.w.im.clone() - w.im.clone()).abs() <= reuse =>
            {
                m.value
            }
            _ => {
                let w64 = Complex::new(w.re.to_f64(), w.im.to_f64());
                let value = level.r_smooth_quadrature(w64, self.u_at(k, w), &self.kernel);
                *last = Some(Memo { k, w: w.clone(), value });
                value
            }
        };
        w.re.cst(v)
    }

    /// `Σ_{k <= N} δ_k ρ_k(z)` with the tail enclosure. At the origin every
    /// `ρ_k` vanishes, so the tail there is exactly zero.
    pub fn rho(&self, z: &Complex<T>) -> TailInterval<T> {
        let zero = self.tail.cst(0.0);
        let mut value = zero.clone();
        for k in 1..=self.n_max() {
            let v = self.rho_k(k, z);
            if !v.is_zero() {
                value = value + self.delta[k - 1].clone() * v;
            }
        }
        let at_origin = z.re.is_zero() && z.im.is_zero();
        let tail = if at_origin { zero } else { self.tail.clone() };
        TailInterval {
            value,
            tail_lo: -tail.clone(),
            tail_hi: tail,
        }
    }
}

/// Margin of `ρ(z) + tail < δ_n - (a_n δ_n / r_n) Re z` over `|z| < r_n`.
#[derive(Clone, Debug)]
pub struct TargetCheck<T> {
    pub n: usize,
    pub samples: usize,
    /// Smallest `δ_n - (a_n δ_n/r_n) Re z - (ρ(z) + tail)`.
    pub min_margin: T,
    /// `min_margin / δ_n`.
    pub relative_margin: f64,
    pub argmin: Complex<T>,
    /// Smallest `1/2 - (a_n/r_n) Re z - ρ_n(z)` (the single-term bound).
    pub rescaled_margin: T,
    pub pass: bool,
}

/// `sup (ρ(z) + tail)` on `|z| = r_{n+1}` against `r_n^n`.
#[derive(Clone, Debug)]
pub struct FlatnessCheck<T> {
    pub n: usize,
    pub samples: usize,
    pub sup_upper: T,
    pub bound: T,
    /// `ρ_k` vanished exactly at every sample for `k <= n`.
    pub exact_zeros: bool,
    pub pass: bool,
}

#[derive(Serialize)]
struct TargetDoc {
    n: usize,
    samples: usize,
    min_margin: Decimal,
    relative_margin: f64,
    argmin: [Decimal; 2],
    rescaled_margin: Decimal,
    pass: bool,
}

impl<T: Real> Serialize for TargetCheck<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TargetDoc {
            n: self.n,
            samples: self.samples,
            min_margin: self.min_margin.to_decimal(),
            relative_margin: self.relative_margin,
            argmin: [self.argmin.re.to_decimal(), self.argmin.im.to_decimal()],
            rescaled_margin: self.rescaled_margin.to_decimal(),
            pass: self.pass,
        }
        .serialize(s)
    }
}

#[derive(Serialize)]
struct FlatnessDoc {
    n: usize,
    samples: usize,
    sup_upper: Decimal,
    bound: Decimal,
    exact_zeros: bool,
    pass: bool,
}

impl<T: Real> Serialize for FlatnessCheck<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FlatnessDoc {
            n: self.n,
            samples: self.samples,
            sup_upper: self.sup_upper.to_decimal(),
            bound: self.bound.to_decimal(),
            exact_zeros: self.exact_zeros,
            pass: self.pass,
        }
        .serialize(s)
    }
}

/// `0 - tol <= R̃_n - R_n <= 1/8 + tol` on sampled w-plane points.
#[derive(Clone, Debug, Serialize)]
pub struct SandwichCheck {
    pub n: usize,
    pub samples: usize,
    pub min_diff: f64,
    pub max_diff: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Five-point Laplacian of `R̃_n` on an annular grid straddling the kink,
/// at step `h` and `h/2`.
#[derive(Clone, Debug, Serialize)]
pub struct SubharmonicCheck {
    pub n: usize,
    pub radial: usize,
    pub angular: usize,
    /// Grid half-width across the kink, in units of `ε_n`.
    pub half_width: f64,
    /// `h / ε_n` of the coarse pass.
    pub step_over_eps: f64,
    /// `min value / tolerance` at `h` and at `h/2` (below -1 fails).
    pub worst_ratio: [f64; 2],
    /// `min value · ε_n` at `h` and at `h/2`.
    pub min_scaled: [f64; 2],
    pub tolerance: Tolerance,
    pub pass: bool,
}

impl<T: Real> ProfileStack<T> {
    /// `count` points: a third within `3ε_n` of the kink (placed in the
    /// wide type), a third over the band, a third log-spaced over
    /// `r_n <= |w| <= 4`.
    pub fn sandwich_check(&self, n: usize, count: usize, tol: f64) -> SandwichCheck {
        let level = self.level(n);
        let third = count / 3;
        let (lo, hi) = (level.zero_radius.ln(), 4f64.ln());
        let diffs: Vec<f64> = (0..count)
            .into_par_iter()
            .map(|i| {
                let th = std::f64::consts::TAU * halton(i + 1, 3);
                if i < third {
                    let c = |x: f64| self.tail.cst(x);
                    let k = self.kink_point(n, th);
                    let t = ln_norm(&k).exp();
                    let s = 6.0 * halton(i + 1, 2) - 3.0;
                    let w = k.clone() * (c(1.0) + c(s * level.eps / t));
                    let u = self.u_at(n, &w);
                    let r = if w.re.to_f64() <= level.b { u.max(0.0) } else { u };
                    return self.r_smooth_w(n, &w, &BandMemo::default()).to_f64() - r;
                }
                let m = if i < 2 * third {
                    level.zero_radius + (level.harmonic_radius - level.zero_radius) * halton(i + 1, 2)
                } else {
                    (lo + (hi - lo) * halton(i + 1, 2)).exp()
                };
                let w = Complex::from_polar(m, th);
                self.r_smooth(n, w) - level.r(w)
            })
            .collect();
        let min_diff = diffs.iter().copied().fold(f64::INFINITY, f64::min);
        let max_diff = diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        SandwichCheck {
            n,
            samples: count,
            min_diff,
            max_diff,
            tol,
            pass: min_diff >= -tol && max_diff <= 0.125 + tol,
        }
    }

    /// Laplacian of `R̃_n` on `radial × angular` points within
    /// `half_width·ε_n` of the kink, step `step_over_eps·ε_n` and half that.
    pub fn subharmonic_check(
        &self,
        n: usize,
        radial: usize,
        angular: usize,
        half_width: f64,
        step_over_eps: f64,
        tol: Tolerance,
    ) -> Result<SubharmonicCheck> {
        let eps = self.level(n).eps;
        let c = |x: f64| self.tail.cst(x);
        let kinks: Vec<Complex<T>> = (0..angular)
            .map(|j| self.kink_point(n, std::f64::consts::TAU * (j as f64 + 0.5) / angular as f64))
            .collect();
        let mut worst_ratio = [f64::INFINITY; 2];
        let mut min_scaled = [f64::INFINITY; 2];
        for (pass, step) in [step_over_eps, 0.5 * step_over_eps].into_iter().enumerate() {
            let h = c(step * eps);
            let rows: Vec<Result<(f64, f64)>> = (0..radial * angular)
                .into_par_iter()
                .map(|idx| {
                    let (i, j) = (idx / angular, idx % angular);
                    let s = -half_width + 2.0 * half_width * (i as f64 + 0.5) / radial as f64;
                    let k = &kinks[j];
                    let t = ln_norm(k).exp();
                    let w = k.clone() * (c(1.0) + c(s * eps / t));
                    let st = self.laplacian_w(n, &w, &h)?;
                    let tolv = st.tolerance(&tol);
                    let ratio = if tolv.is_positive() {
                        (st.value.clone() / tolv).to_f64()
                    } else if st.value.is_negative() {
                        f64::NEG_INFINITY
                    } else {
                        f64::INFINITY
                    };
                    Ok((ratio, st.value.to_f64() * eps))
                })
                .collect();
            for r in rows {
                let (ratio, scaled) = r?;
                worst_ratio[pass] = worst_ratio[pass].min(ratio);
                min_scaled[pass] = min_scaled[pass].min(scaled);
            }
        }
        Ok(SubharmonicCheck {
            n,
            radial,
            angular,
            half_width,
            step_over_eps,
            worst_ratio,
            min_scaled,
            tolerance: tol,
            pass: worst_ratio.iter().all(|r| *r >= -1.0),
        })
    }

    pub fn radius(&self, k: usize) -> &T {
        &self.radius[k - 1]
    }

    pub fn delta(&self, k: usize) -> &T {
        &self.delta[k - 1]
    }

    /// Deterministic points of `|z| < r_n`: a Halton cloud filling the disc
    /// plus a ring at `0.999 r_n` where `Re z` is largest.
    pub fn disc_samples(&self, n: usize, count: usize) -> Vec<Complex<T>> {
        let r = self.radius(n);
        let ring = count / 8;
        let mut out = Vec::with_capacity(count);
        for i in 0..count - ring {
            let rad = halton(i + 1, 2).sqrt() * 0.999_999;
            let th = std::f64::consts::TAU * halton(i + 1, 3);
            out.push(Complex::new(r.clone() * r.cst(rad * th.cos()), r.clone() * r.cst(rad * th.sin())));
        }
        for i in 0..ring {
            let th = std::f64::consts::TAU * i as f64 / ring as f64;
            out.push(Complex::new(r.clone() * r.cst(0.999 * th.cos()), r.clone() * r.cst(0.999 * th.sin())));
        }
        out
    }

    /// The series target inequality over [`disc_samples`](Self::disc_samples).
    pub fn target_check(&self, n: usize, count: usize) -> TargetCheck<T> {
        let points = self.disc_samples(n, count);
        let delta = self.delta(n).clone();
        let slope = delta.clone() * self.scale[n - 1].clone();
        let half = delta.cst(0.5);
        let rows: Vec<(T, T)> = points
            .par_iter()
            .map(|z| {
                let upper = self.rho(z).upper();
                let single = half.clone() - self.scale[n - 1].clone() * z.re.clone() - self.rho_k(n, z);
                (delta.clone() - slope.clone() * z.re.clone() - upper, single)
            })
            .collect();
        let rescaled_margin = rows
            .iter()
            .map(|r| r.1.clone())
            .reduce(|a, b| a.min_of(b))
            .expect("samples");
        let (i, min_margin) = rows
            .into_iter()
            .map(|r| r.0)
            .enumerate()
            .reduce(|a, b| if b.1 < a.1 { b } else { a })
            .expect("samples");
        TargetCheck {
            n,
            samples: points.len(),
            relative_margin: (min_margin.clone() / delta).to_f64(),
            pass: min_margin.is_positive() && !rescaled_margin.is_negative(),
            rescaled_margin,
            min_margin,
            argmin: points[i].clone(),
        }
    }

    /// Flatness of the series at `|z| = r_{n+1}` (`n < n_max`).
    pub fn flatness_check(&self, n: usize, count: usize) -> Result<FlatnessCheck<T>> {
        if n >= self.n_max() {
            return Err(Error::Domain(format!("flatness needs r_{} (n_max = {})", n + 1, self.n_max())));
        }
        let r = self.radius(n + 1);
        let rows: Vec<(T, bool)> = (0..count)
            .into_par_iter()
            .map(|i| {
                let th = std::f64::consts::TAU * i as f64 / count as f64;
                let z = Complex::new(r.clone() * r.cst(th.cos()), r.clone() * r.cst(th.sin()));
                let zeros = (1..=n).all(|k| self.rho_k(k, &z).is_zero());
                (self.rho(&z).upper(), zeros)
            })
            .collect();
        let exact_zeros = rows.iter().all(|(_, z)| *z);
        let sup_upper = rows
            .into_iter()
            .map(|(v, _)| v)
            .reduce(|a, b| a.max_of(b))
            .expect("samples");
        let bound = self.radius(n).powi(n as u32);
        Ok(FlatnessCheck {
            n,
            samples: count,
            pass: exact_zeros && sup_upper <= bound,
            sup_upper,
            bound,
            exact_zeros,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{build_table, GrowthRule};
    use crate::scalar::ScaledReal;
    use num_traits::Zero;

    fn stack() -> (ParamTable<ScaledReal>, ProfileStack<ScaledReal>) {
        let t = build_table::<ScaledReal>(&GrowthRule::default(), 4, 512).unwrap();
        let p = ProfileStack::new(&t, 64).unwrap();
        (t, p)
    }

    #[test]
    fn u_examples() {
        let ln_a = 11.0;
        assert_eq!(u(Complex::new(1.0, 0.0), ln_a), -0.875);
        assert_eq!(u(Complex::new(0.0, 0.0), ln_a), f64::NEG_INFINITY);
        let (t, _) = stack();
        let b = t.b(1).to_f64();
        assert!(u(Complex::new(b, 0.0), ln_a).abs() < 1e-15);
    }

    #[test]
    fn r_continuous_across_kink_line() {
        let (t, _) = stack();
        let b = t.b(1).to_f64();
        for y in [-1.0, -0.01, 0.0, 0.003, 2.0] {
            let left = r_piecewise(Complex::new(b - 1e-13, y), 11.0, b);
            let right = r_piecewise(Complex::new(b + 1e-13, y), 11.0, b);
            assert!((left - right).abs() <= 1e-10 * (1.0 + y.abs()), "{y}");
        }
    }

    #[test]
    fn zero_radius_covers_twice_r() {
        let (t, p) = stack();
        for n in 1..=4 {
            let lvl = p.level(n);
            assert!(lvl.zero_radius > 2.0 * t.r(n).to_f64());
            assert!(lvl.t_star < lvl.b);
            // R vanishes just inside t*.
            let w = Complex::new(-lvl.t_star * 0.999, 0.0);
            assert_eq!(lvl.r(w), 0.0);
        }
    }

    #[test]
    fn short_circuits_agree_with_quadrature() {
        let (_, p) = stack();
        let lvl = p.level(1);
        let k = p.kernel();
        // Oracle: the plain polar rule applied to the piecewise R itself. It is
        // exact off the kink band; on the band it is refined and only good to
        // a small fraction of ε.
        let fine = MollifierKernel::<f64>::new(512, 4096).unwrap();
        for &m in &[1.5 * lvl.harmonic_radius, lvl.b, 0.5 * (lvl.b + lvl.t_star), 0.1, 1.5] {
            for th in [0.0, 1.0, 2.5, 4.0] {
                let w = Complex::from_polar(m, th);
                let fast = lvl.r_smooth(w, k);
                let banded = (lvl.zero_radius..=lvl.harmonic_radius).contains(&m);
                let (direct, tol) = if banded {
                    (fine.convolve(|x| lvl.r(x), w, lvl.eps), 1e-5 * lvl.eps)
                } else {
                    (k.convolve(|x| lvl.r(x), w, lvl.eps), 1e-12)
                };
                assert!((fast - direct).abs() < tol, "{m} {th}: {fast} {direct}");
            }
        }
        let w = Complex::new(0.0, 0.5 * lvl.t_star);
        assert_eq!(lvl.r_smooth_quadrature(w, lvl.u(w), k), 0.0);
        assert_eq!(lvl.r_smooth(w, k), 0.0);
    }

    #[test]
    fn sandwich_in_band() {
        let (_, p) = stack();
        let lvl = p.level(1);
        let k = p.kernel();
        for i in 0..50 {
            let m = lvl.t_star + (lvl.harmonic_radius - lvl.t_star) * i as f64 / 49.0;
            let w = Complex::from_polar(m, 0.37 * i as f64);
            let diff = lvl.r_smooth(w, k) - lvl.r(w);
            assert!((-1e-12..=0.125).contains(&diff), "{diff}");
        }
    }

    #[test]
    fn laplacian_below_double_resolution() {
        // ε_4 is far below ulp(w); the kink is still resolved in the wide type.
        let (_, p) = stack();
        let tol = Default::default();
        for k in [1, 4] {
            let eps = p.level(k).eps;
            let kink = p.kink_point(k, std::f64::consts::PI);
            let c = |x: f64| ScaledReal::new(x, 512);
            let h = c(eps / 16.0);
            let mut peak: f64 = 0.0;
            for j in -8..=8 {
                let w = kink.clone() + Complex::new(c(j as f64 * eps / 4.0), c(0.0));
                let s = p.laplacian_w(k, &w, &h).unwrap();
                assert!(s.value >= -s.tolerance(&tol), "{k} {j}: {s:?}");
                peak = peak.max(s.value.to_f64() * eps);
            }
            assert!(peak > 0.1, "{k}: {peak}");
            let far = p.laplacian_w(k, &Complex::new(c(0.5), c(0.5)), &h).unwrap();
            assert!(far.value.abs() <= far.tolerance(&tol), "{far:?}");
        }
    }

    #[test]
    fn rho_at_origin_has_zero_tail() {
        let (_, p) = stack();
        let z = Complex::new(ScaledReal::zero(), ScaledReal::zero());
        let r = p.rho(&z);
        assert!(r.value.is_zero() && r.tail_hi.is_zero() && r.tail_lo.is_zero());
        let z = Complex::new(ScaledReal::new(1e-300, 512), ScaledReal::zero());
        assert!(p.rho(&z).tail_hi.is_positive());
    }

    #[test]
    fn rho_k_matches_rescaled_profile() {
        let (t, p) = stack();
        let z = Complex::new(t.r(1).clone() / ScaledReal::new(2.0, 512), ScaledReal::zero());
        let direct = p.rho_k(1, &z);
        let w = p.to_w(1, &z);
        let via_w = p.r_smooth(1, Complex::new(w.re.to_f64(), w.im.to_f64()));
        assert!((direct.to_f64() - via_w).abs() <= 1e-15 * via_w.abs().max(1.0));
    }
}
