//! Radial mollifier on the unit disc and the polar quadrature that applies it.

use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use num_complex::Complex;
use num_traits::Float;

use crate::error::{Error, Result};

/// Fewest nodes per axis accepted by [`MollifierKernel::new`].
pub const MIN_NODES: usize = 64;

/// Bisection steps used to split a ray at a sign change of the integrand.
const SPLIT_STEPS: usize = 60;

/// The bump `exp(-1/(1 - ρ²))` for `ρ < 1`, zero outside.
pub fn bump<F: Float>(rho: F) -> F {
    let one = F::one();
    if rho >= one {
        return F::zero();
    }
    (-(one / (one - rho * rho))).exp()
}

fn unit_rule<F: Float>(n: usize) -> Vec<(F, F)> {
    let half = F::from(0.5).unwrap();
    GaussLegendre::new(NonZeroUsize::new(n).expect("node count > 0"))
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| ((F::from(x).unwrap() + F::one()) * half, F::from(w).unwrap() * half))
        .collect()
}

/// Normalized radial kernel with a tensor polar rule: Gauss-Legendre in the
/// radius, trapezoid in the angle.
#[derive(Clone, Debug)]
pub struct MollifierKernel<F> {
    /// Gauss-Legendre nodes and weights mapped to [0, 1].
    gl: Vec<(F, F)>,
    /// Radial weights `w_i ρ_i χ(ρ_i)` divided by their sum.
    radial: Vec<F>,
    angles: Vec<Complex<F>>,
    /// Gauss-Legendre rule on [0, 1] with as many nodes as `angles`.
    arc: Vec<(F, F)>,
    /// `Σ w_i ρ_i χ(ρ_i)`, i.e. `∫_0^1 χ(ρ) ρ dρ`.
    radial_mass: F,
}

impl<F: Float> MollifierKernel<F> {
    pub fn new(radial: usize, angular: usize) -> Result<Self> {
        if radial < MIN_NODES || angular < MIN_NODES {
            return Err(Error::Quadrature {
                min: MIN_NODES,
                radial,
                angular,
            });
        }
        let gl = unit_rule(radial);
        let arc = unit_rule(angular);
        let raw: Vec<F> = gl.iter().map(|&(x, w)| w * x * bump(x)).collect();
        let radial_mass = raw.iter().fold(F::zero(), |acc, &w| acc + w);
        let radial = raw.iter().map(|&w| w / radial_mass).collect();
        let two_pi = F::from(std::f64::consts::TAU).unwrap();
        let angles = (0..angular)
            .map(|j| {
                let theta = two_pi * F::from(j).unwrap() / F::from(angular).unwrap();
                Complex::new(theta.cos(), theta.sin())
            })
            .collect();
        Ok(MollifierKernel {
            gl,
            radial,
            angles,
            arc,
            radial_mass,
        })
    }

    pub fn radial_nodes(&self) -> usize {
        self.gl.len()
    }

    pub fn angular_nodes(&self) -> usize {
        self.angles.len()
    }

    /// Kernel value at `v`; depends on `|v|` only.
    pub fn value(&self, v: Complex<F>) -> F {
        bump(v.norm())
    }

    /// Plane integral `m` of the unnormalized kernel.
    pub fn mass(&self) -> F {
        F::from(std::f64::consts::TAU).unwrap() * self.radial_mass
    }

    /// Total discrete weight of the normalized rule (1 up to rounding).
    pub fn total_weight(&self) -> F {
        self.radial.iter().fold(F::zero(), |acc, &w| acc + w)
    }

    /// `∫ f(z - εv) dμ(v)` with the normalized kernel measure.
    pub fn convolve(&self, f: impl Fn(Complex<F>) -> F, z: Complex<F>, eps: F) -> F {
        let m = F::from(self.angles.len()).unwrap();
        let mut acc = F::zero();
        for (&(rho, _), &w) in self.gl.iter().zip(&self.radial) {
            let mut ring = F::zero();
            for &e in &self.angles {
                ring = ring + f(z - e * (eps * rho));
            }
            acc = acc + w * ring;
        }
        acc / m
    }

    /// `∫ max(g(v), 0) dμ(v)` for `g` given on the unit disc.
    ///
    /// Each ray is split at the sign change of `g` (found by bisection) and
    /// only the positive piece is integrated, so a kink of `max(g, 0)` does
    /// not degrade the radial rule. Where the zero line of `g` leaves the
    /// disc, the angular integrand switches form; the circle is cut at those
    /// angles and each arc gets its own Gauss-Legendre rule. Assumes at most
    /// one sign change per ray, which holds when `g` is close to affine.
    pub fn convolve_positive_part(&self, g: impl Fn(Complex<F>) -> F) -> F {
        let zero = F::zero();
        let g_in = g(Complex::new(zero, zero));
        let m = self.angles.len();
        let two_pi = F::from(std::f64::consts::TAU).unwrap();
        let step = two_pi / F::from(m).unwrap();
        let positive: Vec<bool> = self.angles.iter().map(|&e| g(e) > zero).collect();
        let mut cuts = Vec::new();
        for j in 0..m {
            if positive[j] != positive[(j + 1) % m] {
                let lo = step * F::from(j).unwrap();
                cuts.push(self.bisect(|t| g(Complex::new(t.cos(), t.sin())) > zero, lo, lo + step, positive[j]));
            }
        }
        let total = if cuts.is_empty() {
            let sum = self.angles.iter().fold(zero, |acc, &e| acc + self.ray(&g, g_in, e));
            sum * step
        } else {
            let mut total = zero;
            for (i, &a) in cuts.iter().enumerate() {
                let b = if i + 1 < cuts.len() { cuts[i + 1] } else { cuts[0] + two_pi };
                let len = b - a;
                for &(x, w) in &self.arc {
                    let t = a + len * x;
                    total = total + w * len * self.ray(&g, g_in, Complex::new(t.cos(), t.sin()));
                }
            }
            total
        };
        total / (self.radial_mass * two_pi)
    }

    /// `∫_0^1 ρ χ(ρ) max(g(ρe), 0) dρ`.
    fn ray(&self, g: &impl Fn(Complex<F>) -> F, g_in: F, e: Complex<F>) -> F {
        let zero = F::zero();
        let one = F::one();
        let inside = g_in > zero;
        let (lo, hi) = match (inside, g(e) > zero) {
            (true, true) => (zero, one),
            (false, false) => return zero,
            _ => {
                let root = self.bisect(|t| g(e * t) > zero, zero, one, inside);
                if inside {
                    (zero, root)
                } else {
                    (root, one)
                }
            }
        };
        let len = hi - lo;
        let mut ray = zero;
        for &(x, w) in &self.gl {
            let rho = lo + len * x;
            let val = g(e * rho);
            if val > zero {
                ray = ray + w * rho * bump(rho) * val;
            }
        }
        ray * len
    }

    /// Midpoint of `[a, b]` after bisecting on a predicate that is `at_a` at `a`.
    fn bisect(&self, pred: impl Fn(F) -> bool, mut a: F, mut b: F, at_a: bool) -> F {
        let half = F::from(0.5).unwrap();
        for _ in 0..SPLIT_STEPS {
            let mid = (a + b) * half;
            if pred(mid) == at_a {
                a = mid;
            } else {
                b = mid;
            }
        }
        (a + b) * half
    }

    /// Reproduction of the harmonic functions `Re z`, `Im z`, `Re z²`, `Im z²`
    /// at the given centers; returns the largest absolute error.
    pub fn harmonic_error(&self, centers: &[Complex<F>], eps: F) -> F {
        let tests: [fn(Complex<F>) -> F; 4] = [|z| z.re, |z| z.im, |z| (z * z).re, |z| (z * z).im];
        let mut worst = F::zero();
        for &z in centers {
            for f in tests {
                let err = (self.convolve(f, z, eps) - f(z)).abs();
                if err > worst {
                    worst = err;
                }
            }
        }
        worst
    }
}

/// Outcome of the harmonic-reproduction self-check.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct SelfCheck {
    pub points: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Runs the harmonic-reproduction check at `points` deterministic centers in
/// `|z| < 2` with kernel radius 1/2.
pub fn self_check(kernel: &MollifierKernel<f64>, points: usize, tol: f64) -> SelfCheck {
    let centers: Vec<Complex<f64>> = (0..points)
        .map(|i| {
            let (u, v) = (crate::diff::halton(i + 1, 2), crate::diff::halton(i + 1, 3));
            Complex::from_polar(2.0 * u.sqrt(), std::f64::consts::TAU * v)
        })
        .collect();
    let max_error = kernel.harmonic_error(&centers, 0.5);
    SelfCheck {
        points,
        max_error,
        tolerance: tol,
        pass: max_error <= tol,
    }
}
