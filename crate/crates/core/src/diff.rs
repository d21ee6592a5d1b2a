//! Finite-difference Laplacians and Levi forms, sampled minima over regions,
//! and the deterministic direction sequences they use.
//!
//! Every pass/fail carries its tolerance. A sample passes when
//! `value >= -(rel * curvature + noise * magnitude)`, where `curvature` is the
//! sum of the absolute second differences along the two real axes of the
//! stencil (the size of the quantities being added) and `magnitude` is the
//! sum of the absolute stencil values (the rounding floor), both divided by
//! the same `h²` as the value.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::{Decimal, Real};

/// Radical inverse of `i` in `base` (the Halton sequence).
pub fn halton(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

const PRIMES: [usize; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// `count` unit vectors in `C^dim`, spread over the sphere by a Halton
/// sequence pushed through Box-Muller. The seed shifts the sequence.
pub fn sphere_directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<Complex<f64>>> {
    assert!(dim >= 1 && dim <= PRIMES.len() / 2, "direction dimension {dim}");
    let offset = (seed as usize).wrapping_mul(7919) % 1_000_003;
    (0..count)
        .map(|k| {
            let idx = offset + k + 1;
            let mut v: Vec<Complex<f64>> = (0..dim)
                .map(|j| {
                    let u1 = halton(idx, PRIMES[2 * j]).max(f64::MIN_POSITIVE);
                    let u2 = halton(idx, PRIMES[2 * j + 1]);
                    Complex::from_polar((-2.0 * u1.ln()).sqrt(), std::f64::consts::TAU * u2)
                })
                .collect();
            let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            v.iter_mut().for_each(|c| *c /= norm);
            v
        })
        .collect()
}

/// Tolerance policy; see the module docs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Tolerance {
    pub rel: f64,
    pub noise: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            rel: 1e-4,
            noise: 64.0 * f64::EPSILON,
        }
    }
}

/// A second-order quantity from one five-point stencil.
#[derive(Clone, Debug, PartialEq)]
pub struct StencilSample<T> {
    pub value: T,
    pub curvature: T,
    pub magnitude: T,
}

impl<T: Real> StencilSample<T> {
    pub fn tolerance(&self, tol: &Tolerance) -> T {
        self.curvature.clone() * self.value.cst(tol.rel)
            + self.magnitude.clone() * self.value.cst(tol.noise)
    }

    pub fn scaled(self, k: f64) -> Self {
        let c = self.value.cst(k);
        StencilSample {
            value: self.value * c.clone(),
            curvature: self.curvature * c.clone(),
            magnitude: self.magnitude * c,
        }
    }
}

fn check_finite<T: Real>(v: T, at: &str) -> Result<T> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Stencil(at.to_string()))
    }
}

/// Five-point Laplacian at `τ = 0` of `g`, with steps `±h`, `±ih`.
pub fn restricted_laplacian<T: Real>(
    g: impl Fn(&Complex<T>) -> Result<T>,
    h: &T,
) -> Result<StencilSample<T>> {
    if !h.is_positive() {
        return Err(Error::Domain(format!("step {h} is not positive")));
    }
    let zero = h.cst(0.0);
    let at = |re: T, im: T, label: &str| -> Result<T> {
        check_finite(g(&Complex::new(re, im))?, label)
    };
    let c = at(zero.clone(), zero.clone(), "center")?;
    let xp = at(h.clone(), zero.clone(), "+h")?;
    let xm = at(-h.clone(), zero.clone(), "-h")?;
    let yp = at(zero.clone(), h.clone(), "+ih")?;
    let ym = at(zero, -h.clone(), "-ih")?;
    let two_c = c.clone() + c.clone();
    let dxx = xp.clone() + xm.clone() - two_c.clone();
    let dyy = yp.clone() + ym.clone() - two_c;
    let h2 = h.clone() * h.clone();
    let magnitude = xp.abs() + xm.abs() + yp.abs() + ym.abs() + c.abs() * c.cst(4.0);
    Ok(StencilSample {
        value: (dxx.clone() + dyy.clone()) / h2.clone(),
        curvature: (dxx.abs() + dyy.abs()) / h2.clone(),
        magnitude: magnitude / h2,
    })
}

/// `(f(z+h) + f(z-h) + f(z+ih) + f(z-ih) - 4 f(z)) / h²`.
pub fn laplacian_fd<T: Real>(f: impl Fn(&Complex<T>) -> T, z: &Complex<T>, h: &T) -> Result<T> {
    restricted_laplacian(|tau| Ok(f(&(z.clone() + tau.clone()))), h).map(|s| s.value)
}

fn lift<T: Real>(l: &[Complex<f64>], like: &T) -> Vec<Complex<T>> {
    l.iter()
        .map(|c| Complex::new(like.cst(c.re), like.cst(c.im)))
        .collect()
}

/// Levi form `Σ ∂²f/∂z_i∂z̄_j L_i L̄_j` as one quarter of the Laplacian of
/// `τ ↦ f(z + τL)` at 0.
pub fn levi_sample<T: Real>(
    f: impl Fn(&[Complex<T>]) -> T,
    z: &[Complex<T>],
    l: &[Complex<f64>],
    h: &T,
) -> Result<StencilSample<T>> {
    let lt = lift(l, h);
    restricted_laplacian(
        |tau| {
            let p: Vec<Complex<T>> = z
                .iter()
                .zip(&lt)
                .map(|(zi, li)| zi.clone() + li.clone() * tau.clone())
                .collect();
            Ok(f(&p))
        },
        h,
    )
    .map(|s| s.scaled(0.25))
}

pub fn levi_form_fd<T: Real>(
    f: impl Fn(&[Complex<T>]) -> T,
    z: &[Complex<T>],
    l: &[Complex<f64>],
    h: &T,
) -> Result<T> {
    levi_sample(f, z, l, h).map(|s| s.value)
}

/// Smallest eigenvalue of the Hermitian 2×2 matrix `[[a, c], [c̄, b]]`.
pub fn hermitian_min_eig<T: Real>(a: &T, b: &T, c: &Complex<T>) -> T {
    let half = a.cst(0.5);
    let mean = (a.clone() + b.clone()) * half.clone();
    let gap = (a.clone() - b.clone()) * half;
    mean - (gap.clone() * gap + c.norm_sqr()).sqrt()
}

/// Entries of a 2×2 Levi matrix recovered from the quadratic form along
/// `e1`, `e2`, `(e1+e2)/√2` and `(e1+ie2)/√2`.
pub fn levi_matrix_2d<T: Real>(
    along: impl Fn(&[Complex<f64>]) -> Result<T>,
) -> Result<(T, T, Complex<T>)> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let one = Complex::new(1.0, 0.0);
    let zero = Complex::new(0.0, 0.0);
    let h11 = along(&[one, zero])?;
    let h22 = along(&[zero, one])?;
    let hr = along(&[Complex::new(s, 0.0), Complex::new(s, 0.0)])?;
    let hi = along(&[Complex::new(s, 0.0), Complex::new(0.0, s)])?;
    let mean = (h11.clone() + h22.clone()) * h11.cst(0.5);
    let h12 = Complex::new(hr - mean.clone(), hi - mean);
    Ok((h11, h22, h12))
}

/// One evaluated (point, direction) pair.
#[derive(Clone, Debug)]
pub struct LeviEval<T> {
    pub value: T,
    pub tol: T,
    pub point: Vec<String>,
    pub direction: Vec<Complex<f64>>,
    pub step: T,
}

/// Minimum of a sampled Levi form or Laplacian with its location.
#[derive(Clone, Debug)]
pub struct LeviReport<T> {
    pub min_value: T,
    pub argmin_point: Vec<String>,
    pub argmin_direction: Vec<Complex<f64>>,
    pub step: T,
    pub samples: usize,
    pub seed: u64,
    /// Smallest `value / tol` (`-1` is the failure threshold).
    pub worst_ratio: f64,
    pub tolerance: Tolerance,
    pub pass: bool,
}

impl<T: Real> LeviReport<T> {
    /// Merges in sample order; the first of equal minima wins.
    pub fn from_evals(evals: &[LeviEval<T>], seed: u64, tolerance: Tolerance) -> Result<Self> {
        let first = evals.first().ok_or(Error::EmptyRegion)?;
        let mut best = first;
        let mut worst_ratio = f64::INFINITY;
        let mut pass = true;
        for e in evals {
            if e.value < best.value {
                best = e;
            }
            let ok = e.value >= -e.tol.clone();
            pass &= ok;
            let ratio = if e.tol.is_positive() {
                (e.value.clone() / e.tol.clone()).to_f64()
            } else if e.value.is_negative() {
                f64::NEG_INFINITY
            } else {
                f64::INFINITY
            };
            worst_ratio = worst_ratio.min(ratio);
        }
        Ok(LeviReport {
            min_value: best.value.clone(),
            argmin_point: best.point.clone(),
            argmin_direction: best.direction.clone(),
            step: best.step.clone(),
            samples: evals.len(),
            seed,
            worst_ratio,
            tolerance,
            pass,
        })
    }
}

#[derive(Serialize)]
struct LeviReportDoc<'a> {
    min_value: Decimal,
    argmin_point: &'a [String],
    argmin_direction: Vec<[f64; 2]>,
    step: Decimal,
    samples: usize,
    seed: u64,
    worst_ratio: f64,
    tolerance: Tolerance,
    pass: bool,
}

impl<T: Real> Serialize for LeviReport<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        LeviReportDoc {
            min_value: self.min_value.to_decimal(),
            argmin_point: &self.argmin_point,
            argmin_direction: self.argmin_direction.iter().map(|c| [c.re, c.im]).collect(),
            step: self.step.to_decimal(),
            samples: self.samples,
            seed: self.seed,
            worst_ratio: if self.worst_ratio.is_finite() {
                self.worst_ratio
            } else {
                f64::MAX.copysign(self.worst_ratio)
            },
            tolerance: self.tolerance,
            pass: self.pass,
        }
        .serialize(s)
    }
}

pub type Exclusion = Arc<dyn Fn(&[Complex<f64>]) -> bool + Send + Sync>;

/// Tensor grid over a ball in `C^d`, one count per real axis.
#[derive(Clone)]
pub struct GridSpec {
    pub center: Vec<Complex<f64>>,
    pub radius: f64,
    pub counts: Vec<usize>,
    pub exclude: Option<Exclusion>,
}

impl fmt::Debug for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GridSpec")
            .field("center", &self.center)
            .field("radius", &self.radius)
            .field("counts", &self.counts)
            .field("exclude", &self.exclude.is_some())
            .finish()
    }
}

impl GridSpec {
    pub fn ball(center: Vec<Complex<f64>>, radius: f64, per_axis: usize) -> Self {
        let counts = vec![per_axis; 2 * center.len()];
        GridSpec {
            center,
            radius,
            counts,
            exclude: None,
        }
    }

    pub fn excluding(mut self, pred: Exclusion) -> Self {
        self.exclude = Some(pred);
        self
    }

    /// Cell centers of the tensor grid that fall inside the ball and
    /// survive the exclusion predicate.
    pub fn points(&self) -> Result<Vec<Vec<Complex<f64>>>> {
        let d = self.center.len();
        if self.counts.len() != 2 * d || self.counts.iter().any(|&c| c < 8) {
            return Err(Error::Domain(format!(
                "grid needs 2*{d} axes with at least 8 samples, got {:?}",
                self.counts
            )));
        }
        let total: usize = self.counts.iter().product();
        let mut out = Vec::new();
        for mut idx in 0..total {
            let mut offs = Vec::with_capacity(2 * d);
            for &c in &self.counts {
                let i = idx % c;
                idx /= c;
                offs.push(self.radius * (2.0 * (i as f64 + 0.5) / c as f64 - 1.0));
            }
            if offs.iter().map(|x| x * x).sum::<f64>() >= self.radius * self.radius {
                continue;
            }
            let p: Vec<Complex<f64>> = (0..d)
                .map(|j| self.center[j] + Complex::new(offs[2 * j], offs[2 * j + 1]))
                .collect();
            if self.exclude.as_ref().is_some_and(|e| e(&p)) {
                continue;
            }
            out.push(p);
        }
        if out.is_empty() {
            return Err(Error::EmptyRegion);
        }
        Ok(out)
    }
}

fn label(p: &[Complex<f64>]) -> Vec<String> {
    p.iter().map(|c| format!("{:e}{:+e}i", c.re, c.im)).collect()
}

/// Minimum sampled Levi form of `f` over the grid, `directions` per point.
pub fn min_levi_on_region<T: Real>(
    f: impl Fn(&[Complex<T>]) -> T + Sync,
    grid: &GridSpec,
    directions: usize,
    seed: u64,
    h: &T,
    tol: Tolerance,
) -> Result<LeviReport<T>> {
    if directions < 16 {
        return Err(Error::Domain(format!("{directions} directions, need at least 16")));
    }
    let points = grid.points()?;
    let dirs = sphere_directions(grid.center.len(), directions, seed);
    let per_point: Vec<Result<Vec<LeviEval<T>>>> = points
        .par_iter()
        .map(|p| {
            let pt = lift(p, h);
            dirs.iter()
                .map(|l| {
                    let s = levi_sample(&f, &pt, l, h)?;
                    Ok(LeviEval {
                        tol: s.tolerance(&tol),
                        value: s.value,
                        point: label(p),
                        direction: l.clone(),
                        step: h.clone(),
                    })
                })
                .collect()
        })
        .collect();
    let mut evals = Vec::with_capacity(points.len() * directions);
    for r in per_point {
        evals.extend(r?);
    }
    LeviReport::from_evals(&evals, seed, tol)
}

/// Certifies `Δf >= -tol` at each point with a point-dependent step.
pub fn certify_subharmonic<T: Real>(
    f: impl Fn(&Complex<T>) -> T + Sync,
    points: &[Complex<T>],
    step: impl Fn(&Complex<T>) -> T + Sync,
    tol: Tolerance,
) -> Result<LeviReport<T>> {
    let evals: Vec<Result<LeviEval<T>>> = points
        .par_iter()
        .map(|z| {
            let h = step(z);
            let s = restricted_laplacian(|tau| Ok(f(&(z.clone() + tau.clone()))), &h)?;
            Ok(LeviEval {
                tol: s.tolerance(&tol),
                value: s.value,
                point: vec![format!("{}{:+}i", z.re, z.im)],
                direction: vec![Complex::new(1.0, 0.0)],
                step: h,
            })
        })
        .collect();
    let evals = evals.into_iter().collect::<Result<Vec<_>>>()?;
    LeviReport::from_evals(&evals, 0, tol)
}

/// Sub-mean-value test on a circle: mean over `count` points minus the
/// center value.
pub fn circle_mean_excess(f: impl Fn(Complex<f64>) -> f64, z: Complex<f64>, radius: f64, count: usize) -> f64 {
    let mean = (0..count)
        .map(|k| f(z + Complex::from_polar(radius, std::f64::consts::TAU * k as f64 / count as f64)))
        .sum::<f64>()
        / count as f64;
    mean - f(z)
}
