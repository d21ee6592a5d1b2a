//! The domains `{Re w + ρ < 0}` in C² and `{Re w + ρ̃ < 0}` in C³ (clipped to
//! `B(0, 2)`), the analytic discs that probe them, containment certificates
//! and the Kobayashi upper bounds the discs witness.

use std::f64::consts::TAU;

use num_complex::Complex;
use rayon::prelude::*;
use serde::Serialize;

use crate::cusp::{CuspProfile, TubePoint};
use crate::error::{Error, Result};
use crate::params::ParamTable;
use crate::scalar::{decimal_digits_for_bits, Decimal, Real};

/// Radius of the ball the domains are clipped to.
pub const CLIP_RADIUS: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    C2,
    C3,
}

impl Dimension {
    pub fn complex_dim(self) -> usize {
        match self {
            Dimension::C2 => 2,
            Dimension::C3 => 3,
        }
    }
}

/// A point of the domain's ambient space. C³ points keep the first two
/// coordinates in tube form so that points of `V` stay exactly on `V`.
#[derive(Clone, Debug, PartialEq)]
pub enum Point<T> {
    C2 { z: Complex<T>, w: Complex<T> },
    C3 { tube: TubePoint<T>, w: Complex<T> },
}

impl<T: Real> Point<T> {
    pub fn coords(&self) -> Vec<Complex<T>> {
        match self {
            Point::C2 { z, w } => vec![z.clone(), w.clone()],
            Point::C3 { tube, w } => {
                let st = tube.to_c2();
                vec![st.s, st.t, w.clone()]
            }
        }
    }

    pub fn w(&self) -> &Complex<T> {
        match self {
            Point::C2 { w, .. } | Point::C3 { w, .. } => w,
        }
    }

    pub fn norm_sqr(&self) -> T {
        self.coords()
            .iter()
            .map(|c| c.norm_sqr())
            .reduce(|a, b| a + b)
            .expect("nonempty")
    }
}

/// `Ω = {r < 0} ∩ B(0, 2)` with `r = Re w + ρ` (C²) or `Re w + ρ̃` (C³),
/// base point `P = 0` and outward normal `ν = ∂/∂w`.
#[derive(Clone, Debug)]
pub struct DomainSpec<'a, T> {
    pub dim: Dimension,
    profile: &'a CuspProfile<T>,
}

impl<'a, T: Real> DomainSpec<'a, T> {
    pub fn new(dim: Dimension, profile: &'a CuspProfile<T>) -> Self {
        DomainSpec { dim, profile }
    }

    pub fn profile(&self) -> &CuspProfile<T> {
        self.profile
    }

    /// `r` with the series replaced by its certified upper value.
    pub fn defining_upper(&self, p: &Point<T>) -> Result<T> {
        let upper = match (self.dim, p) {
            (Dimension::C2, Point::C2 { z, .. }) => self.profile.stack().rho(z).upper(),
            (Dimension::C3, Point::C3 { tube, .. }) => self.profile.rho_tilde(tube)?.upper(),
            _ => return Err(Error::Domain("point dimension does not match the domain".into())),
        };
        Ok(p.w().re.clone() + upper)
    }

    /// `P - δν`.
    pub fn inner_point(&self, delta: &T) -> Point<T> {
        let zero = Complex::new(delta.cst(0.0), delta.cst(0.0));
        let w = Complex::new(-delta.clone(), delta.cst(0.0));
        match self.dim {
            Dimension::C2 => Point::C2 { z: zero, w },
            Dimension::C3 => Point::C3 {
                tube: TubePoint::on_curve(zero),
                w,
            },
        }
    }

    pub fn normal(&self) -> Vec<Complex<f64>> {
        let mut v = vec![Complex::new(0.0, 0.0); self.dim.complex_dim()];
        *v.last_mut().expect("nonempty") = Complex::new(1.0, 0.0);
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscFamily {
    /// `ζ ↦ (r_n ζ, -δ_n + a_n δ_n ζ)`.
    C2,
    /// `ζ ↦ (r_n³ζ³, r_n²ζ², -δ_n + a_n δ_n ζ)`.
    C3,
    /// `ζ ↦ P_δ + ζ δ ν`.
    LinearNormal,
    /// The C² disc with `r_n` replaced by `3 r_n` (leaves the domain).
    Rogue,
}

/// `ζ ↦ (radius·ζ [on V in C³], -depth + gain·ζ)`.
#[derive(Clone, Debug)]
pub struct DiscMap<T> {
    pub family: DiscFamily,
    pub dim: Dimension,
    pub n: Option<usize>,
    pub radius: T,
    pub depth: T,
    pub gain: T,
}

impl<T: Real> DiscMap<T> {
    pub fn c2(table: &ParamTable<T>, n: usize) -> Self {
        let delta = table.delta(n).clone();
        DiscMap {
            family: DiscFamily::C2,
            dim: Dimension::C2,
            n: Some(n),
            radius: table.r(n).clone(),
            gain: table.a(n).clone() * delta.clone(),
            depth: delta,
        }
    }

    pub fn c3(table: &ParamTable<T>, n: usize) -> Self {
        DiscMap {
            family: DiscFamily::C3,
            dim: Dimension::C3,
            ..Self::c2(table, n)
        }
    }

    pub fn rogue(table: &ParamTable<T>, n: usize) -> Self {
        let d = Self::c2(table, n);
        DiscMap {
            family: DiscFamily::Rogue,
            radius: d.radius.clone() * d.radius.cst(3.0),
            ..d
        }
    }

    pub fn linear_normal(dim: Dimension, delta: &T) -> Self {
        DiscMap {
            family: DiscFamily::LinearNormal,
            dim,
            n: None,
            radius: delta.cst(0.0),
            depth: delta.clone(),
            gain: delta.clone(),
        }
    }

    pub fn eval(&self, zeta: &Complex<T>) -> Point<T> {
        let w = Complex::new(-self.depth.clone(), self.depth.cst(0.0)) + zeta.clone() * self.gain.clone();
        let x = zeta.clone() * self.radius.clone();
        match self.dim {
            Dimension::C2 => Point::C2 { z: x, w },
            Dimension::C3 => Point::C3 {
                tube: TubePoint::on_curve(x),
                w,
            },
        }
    }

    pub fn eval_f64(&self, zeta: Complex<f64>) -> Point<T> {
        let like = &self.depth;
        self.eval(&Complex::new(like.cst(zeta.re), like.cst(zeta.im)))
    }

    /// `φ'(0)`.
    pub fn derivative(&self) -> Vec<Complex<T>> {
        let zero = Complex::new(self.depth.cst(0.0), self.depth.cst(0.0));
        let w = Complex::new(self.gain.clone(), self.depth.cst(0.0));
        match self.dim {
            Dimension::C2 => vec![Complex::new(self.radius.clone(), self.depth.cst(0.0)), w],
            Dimension::C3 => vec![zero.clone(), zero, w],
        }
    }

    /// `φ'(0)` from `(φ(h) - φ(-h) - i φ(ih) + i φ(-ih)) / 4h`, which is
    /// exact through degree 4.
    pub fn derivative_fd(&self, h: f64) -> Vec<Complex<T>> {
        let like = &self.depth;
        let i = Complex::new(like.cst(0.0), like.cst(1.0));
        let at = |re: f64, im: f64| self.eval_f64(Complex::new(re, im)).coords();
        let (p, m, pi, mi) = (at(h, 0.0), at(-h, 0.0), at(0.0, h), at(0.0, -h));
        let inv = like.cst(1.0) / like.cst(4.0 * h);
        (0..p.len())
            .map(|k| {
                (p[k].clone() - m[k].clone() - i.clone() * pi[k].clone() + i.clone() * mi[k].clone()) * inv.clone()
            })
            .collect()
    }
}

/// Sampling plan for [`certify_disc`].
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DiscSampling {
    /// Rings at `k/rings`, `k = 1..rings-1`, and the origin.
    pub rings: usize,
    /// Near-boundary rings at `1 - 10^-k`, `k = 1..=boundary_rings`.
    pub boundary_rings: usize,
    pub angles: usize,
    /// Points on `|ζ| = 1` checked for `r <= 0` (the closed disc).
    pub boundary_samples: usize,
}

impl Default for DiscSampling {
    fn default() -> Self {
        DiscSampling {
            rings: 40,
            boundary_rings: 6,
            angles: 256,
            boundary_samples: 256,
        }
    }
}

impl DiscSampling {
    pub fn doubled(self) -> Self {
        DiscSampling {
            rings: 2 * self.rings,
            angles: 2 * self.angles,
            ..self
        }
    }

    pub fn interior(&self) -> Vec<Complex<f64>> {
        let mut radii: Vec<f64> = (1..self.rings).map(|k| k as f64 / self.rings as f64).collect();
        radii.extend((1..=self.boundary_rings).map(|k| 1.0 - 10f64.powi(-(k as i32))));
        let mut out = vec![Complex::new(0.0, 0.0)];
        for r in radii {
            for j in 0..self.angles {
                out.push(Complex::from_polar(r, TAU * j as f64 / self.angles as f64));
            }
        }
        out
    }
}

/// Containment certificate: `r∘φ < 0` at every sample.
#[derive(Clone, Debug)]
pub struct DiscCert<T> {
    pub disc: DiscMap<T>,
    pub sampling: DiscSampling,
    pub samples: usize,
    pub max_r: T,
    pub argmax: Complex<f64>,
    /// `-max_r`.
    pub margin: T,
    /// `max r∘φ` on `|ζ| = 1`.
    pub boundary_max_r: T,
    /// `max ‖φ(ζ)‖` over all samples.
    pub max_norm: f64,
    pub pass: bool,
}

#[derive(Serialize)]
struct DiscCertDoc {
    family: DiscFamily,
    dim: Dimension,
    n: Option<usize>,
    radius: Decimal,
    depth: Decimal,
    gain: Decimal,
    sampling: DiscSampling,
    samples: usize,
    max_r: Decimal,
    argmax: [f64; 2],
    margin: Decimal,
    boundary_max_r: Decimal,
    max_norm: f64,
    clip_radius: f64,
    pass: bool,
}

impl<T: Real> Serialize for DiscCert<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        DiscCertDoc {
            family: self.disc.family,
            dim: self.disc.dim,
            n: self.disc.n,
            radius: self.disc.radius.to_decimal(),
            depth: self.disc.depth.to_decimal(),
            gain: self.disc.gain.to_decimal(),
            sampling: self.sampling,
            samples: self.samples,
            max_r: self.max_r.to_decimal(),
            argmax: [self.argmax.re, self.argmax.im],
            margin: self.margin.to_decimal(),
            boundary_max_r: self.boundary_max_r.to_decimal(),
            max_norm: self.max_norm,
            clip_radius: CLIP_RADIUS,
            pass: self.pass,
        }
        .serialize(s)
    }
}

fn max_defining<T: Real>(
    disc: &DiscMap<T>,
    domain: &DomainSpec<'_, T>,
    points: &[Complex<f64>],
) -> Result<(T, Complex<f64>, f64)> {
    let rows: Vec<Result<(T, f64)>> = points
        .par_iter()
        .map(|z| {
            let p = disc.eval_f64(*z);
            Ok((domain.defining_upper(&p)?, p.norm_sqr().sqrt().to_f64()))
        })
        .collect();
    let mut best: Option<(T, Complex<f64>)> = None;
    let mut max_norm = 0.0f64;
    for (row, z) in rows.into_iter().zip(points) {
        let (v, norm) = row?;
        max_norm = max_norm.max(norm);
        if best.as_ref().is_none_or(|(b, _)| v > *b) {
            best = Some((v, *z));
        }
    }
    let (v, z) = best.ok_or(Error::EmptyRegion)?;
    Ok((v, z, max_norm))
}

/// Evaluates the certified upper value of `r∘φ` over the sampling plan.
/// Passes iff it is strictly negative at every interior sample, at most 0 on
/// the boundary circle, and `φ` stays inside `B(0, 2)`.
pub fn certify_disc<T: Real>(disc: &DiscMap<T>, domain: &DomainSpec<'_, T>, sampling: DiscSampling) -> Result<DiscCert<T>> {
    if disc.dim != domain.dim {
        return Err(Error::Domain("disc and domain dimensions differ".into()));
    }
    let interior = sampling.interior();
    let (max_r, argmax, norm_in) = max_defining(disc, domain, &interior)?;
    let circle: Vec<Complex<f64>> = (0..sampling.boundary_samples)
        .map(|j| Complex::from_polar(1.0, TAU * j as f64 / sampling.boundary_samples as f64))
        .collect();
    let (boundary_max_r, _, norm_b) = max_defining(disc, domain, &circle)?;
    let max_norm = norm_in.max(norm_b);
    let pass = max_r.is_negative() && !boundary_max_r.is_positive() && max_norm < CLIP_RADIUS;
    Ok(DiscCert {
        disc: disc.clone(),
        sampling,
        samples: interior.len(),
        margin: -max_r.clone(),
        max_r,
        argmax,
        boundary_max_r,
        max_norm,
        pass,
    })
}

/// `F_K(Q, X) <= α`, witnessed by a contained disc with `φ(0) = Q` and
/// `φ'(0) = X/α`.
#[derive(Clone, Debug)]
pub struct KobayashiBound<T> {
    pub point: Vec<Complex<T>>,
    pub direction: Vec<Complex<T>>,
    pub alpha: T,
    pub cert: DiscCert<T>,
}

#[derive(Serialize)]
struct KobayashiDoc<'a, T: Real> {
    point: Vec<[Decimal; 2]>,
    direction: Vec<[Decimal; 2]>,
    upper_bound: Decimal,
    #[serde(serialize_with = "ser_cert")]
    cert: &'a DiscCert<T>,
}

fn ser_cert<T: Real, S: serde::Serializer>(c: &&DiscCert<T>, s: S) -> std::result::Result<S::Ok, S::Error> {
    c.serialize(s)
}

fn dec_vec<T: Real>(v: &[Complex<T>]) -> Vec<[Decimal; 2]> {
    v.iter().map(|c| [c.re.to_decimal(), c.im.to_decimal()]).collect()
}

impl<T: Real> Serialize for KobayashiBound<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        KobayashiDoc {
            point: dec_vec(&self.point),
            direction: dec_vec(&self.direction),
            upper_bound: self.alpha.to_decimal(),
            cert: &self.cert,
        }
        .serialize(s)
    }
}

fn vec_norm<T: Real>(v: &[Complex<T>]) -> T {
    v.iter()
        .map(|c| c.norm_sqr())
        .reduce(|a, b| a + b)
        .expect("nonempty")
        .sqrt()
}

/// Relative agreement required of `φ(0)` with `Q` and of `α φ'(0)` with `X`.
pub const PARALLEL_TOL: f64 = 1e-12;

pub fn kobayashi_upper<T: Real>(
    cert: &DiscCert<T>,
    point: &[Complex<T>],
    direction: &[Complex<T>],
) -> Result<KobayashiBound<T>> {
    if !cert.pass {
        return Err(Error::CertRequired);
    }
    let disc = &cert.disc;
    let like = &disc.depth;
    let origin = disc.eval_f64(Complex::new(0.0, 0.0)).coords();
    if origin.len() != point.len() || direction.len() != point.len() {
        return Err(Error::Domain("point, direction and disc dimensions differ".into()));
    }
    let diff: Vec<Complex<T>> = origin.iter().zip(point).map(|(a, b)| a.clone() - b.clone()).collect();
    let scale = vec_norm(point).max_of(like.cst(f64::MIN_POSITIVE));
    if vec_norm(&diff) > scale * like.cst(PARALLEL_TOL) {
        return Err(Error::Domain("disc center differs from the base point".into()));
    }
    let deriv = disc.derivative();
    let alpha = vec_norm(direction) / vec_norm(&deriv);
    let resid: Vec<Complex<T>> = direction
        .iter()
        .zip(&deriv)
        .map(|(x, d)| x.clone() - d.clone() * alpha.clone())
        .collect();
    if !alpha.is_positive() || vec_norm(&resid) > vec_norm(direction) * like.cst(PARALLEL_TOL) {
        return Err(Error::NotParallel);
    }
    Ok(KobayashiBound {
        point: point.to_vec(),
        direction: direction.to_vec(),
        alpha,
        cert: cert.clone(),
    })
}

/// One row of the blow-up table.
#[derive(Clone, Debug)]
pub struct BlowupRow<T> {
    pub n: usize,
    pub delta: T,
    pub a: T,
    pub upper_bound: T,
    pub bound_times_delta: T,
    pub baseline_bound: T,
    pub margin: T,
}

/// Certified `F_K(P_{δ_n}, ν) <= 1/(a_n δ_n)` for `n = 1..=n_max` from the
/// discs of `domain`'s dimension, next to the linear baseline `1/δ_n`.
pub fn blowup_table<T: Real>(
    table: &ParamTable<T>,
    domain: &DomainSpec<'_, T>,
    sampling: DiscSampling,
) -> Result<Vec<BlowupRow<T>>> {
    (1..=table.n_max)
        .map(|n| {
            let disc = match domain.dim {
                Dimension::C2 => DiscMap::c2(table, n),
                Dimension::C3 => DiscMap::c3(table, n),
            };
            let cert = certify_disc(&disc, domain, sampling)?;
            let delta = table.delta(n).clone();
            let q = domain.inner_point(&delta).coords();
            let dir: Vec<Complex<T>> = match domain.dim {
                // X_n = (r_n / (a_n δ_n), 1).
                Dimension::C2 => vec![
                    Complex::new(table.r(n).clone() / disc.gain.clone(), delta.cst(0.0)),
                    Complex::new(delta.cst(1.0), delta.cst(0.0)),
                ],
                Dimension::C3 => domain
                    .normal()
                    .iter()
                    .map(|c| Complex::new(delta.cst(c.re), delta.cst(c.im)))
                    .collect(),
            };
            let bound = kobayashi_upper(&cert, &q, &dir)?;
            Ok(BlowupRow {
                n,
                bound_times_delta: bound.alpha.clone() * delta.clone(),
                baseline_bound: delta.cst(1.0) / delta.clone(),
                a: table.a(n).clone(),
                upper_bound: bound.alpha,
                margin: cert.margin,
                delta,
            })
        })
        .collect()
}

pub const BLOWUP_HEADER: &str = "n,delta_n,a_n,upper_bound,bound_times_delta,baseline_bound,margin";

/// CSV with decimal scientific notation at the digits `bits` carries.
pub fn blowup_csv<T: Real>(rows: &[BlowupRow<T>], bits: usize) -> String {
    let digits = decimal_digits_for_bits(bits);
    let f = |x: &T| x.to_decimal().to_sci_digits(digits);
    let mut out = String::from(BLOWUP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.n,
            f(&r.delta),
            f(&r.a),
            f(&r.upper_bound),
            f(&r.bound_times_delta),
            f(&r.baseline_bound),
            f(&r.margin)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{build_table, GrowthRule};
    use crate::profile::ProfileStack;
    use crate::scalar::ScaledReal;
    use num_traits::Zero;

    type S = ScaledReal;

    fn setup() -> (ParamTable<S>, CuspProfile<S>) {
        let t = build_table::<S>(&GrowthRule::default(), 4, 512).unwrap();
        let stack = ProfileStack::new(&t, 64).unwrap();
        let p = CuspProfile::new(&t, stack);
        (t, p)
    }

    fn small() -> DiscSampling {
        DiscSampling {
            rings: 8,
            boundary_rings: 6,
            angles: 32,
            boundary_samples: 32,
        }
    }

    #[test]
    fn disc_centers_and_derivatives() {
        let (t, _) = setup();
        for n in 1..=4 {
            let d2 = DiscMap::c2(&t, n);
            let p = d2.eval_f64(Complex::new(0.0, 0.0)).coords();
            assert!(p[0].re.is_zero() && p[1].re == -t.delta(n).clone());
            let x = d2.derivative();
            assert_eq!(x[0].re, t.r(n).clone());
            assert_eq!(x[1].re, t.a(n).clone() * t.delta(n).clone());
            let at1 = d2.eval_f64(Complex::new(1.0, 0.0)).coords();
            assert!(at1[1].im.is_zero());
            assert!(at1[1].re.rel_diff(&(t.a(n).clone() * t.delta(n).clone() - t.delta(n).clone())) < 1e-150);

            let d3 = DiscMap::c3(&t, n);
            let y = d3.derivative();
            assert!(y[0].norm_sqr().is_zero() && y[1].norm_sqr().is_zero());
            for disc in [&d2, &d3] {
                let fd = disc.derivative_fd(1e-6);
                let exact = disc.derivative();
                let err = vec_norm(&fd.iter().zip(&exact).map(|(a, b)| a.clone() - b.clone()).collect::<Vec<_>>());
                assert!((err / vec_norm(&exact)).to_f64() < 1e-8);
            }
            for z in [Complex::new(0.3, -0.4), Complex::new(-0.9, 0.1)] {
                let c = d3.eval_f64(z).coords();
                let defect = c[0].clone() * c[0].clone() - c[1].clone() * c[1].clone() * c[1].clone();
                let scale = c[1].norm_sqr() * c[1].norm_sqr() * c[1].norm_sqr();
                assert!((defect.norm_sqr() / scale).to_f64() < 1e-290);
            }
        }
    }

    #[test]
    fn normal_depth_identity() {
        let (_, p) = setup();
        for dim in [Dimension::C2, Dimension::C3] {
            let dom = DomainSpec::new(dim, &p);
            for delta in [0.5, 1e-3, 1.9] {
                let d = S::new(delta, 512);
                let r = dom.defining_upper(&dom.inner_point(&d)).unwrap();
                assert_eq!(r, -d);
            }
        }
    }

    #[test]
    fn linear_normal_bound_is_inverse_depth() {
        let (_, p) = setup();
        let dom = DomainSpec::new(Dimension::C3, &p);
        let delta = S::new(0.25, 512);
        let disc = DiscMap::linear_normal(Dimension::C3, &delta);
        assert_eq!(disc.eval_f64(Complex::new(0.0, 0.0)), dom.inner_point(&delta));
        let cert = certify_disc(&disc, &dom, small()).unwrap();
        assert!(cert.pass, "{cert:?}");
        let nu: Vec<Complex<S>> = dom.normal().iter().map(|c| Complex::new(delta.cst(c.re), delta.cst(c.im))).collect();
        let b = kobayashi_upper(&cert, &dom.inner_point(&delta).coords(), &nu).unwrap();
        assert!(b.alpha.rel_diff(&S::new(4.0, 512)) < 1e-150);
    }

    #[test]
    fn bound_errors() {
        let (t, p) = setup();
        let dom = DomainSpec::new(Dimension::C2, &p);
        let disc = DiscMap::c2(&t, 1);
        let cert = certify_disc(&disc, &dom, small()).unwrap();
        assert!(cert.pass);
        let q = dom.inner_point(t.delta(1)).coords();
        let skew = vec![Complex::new(S::new(1.0, 512), S::new(0.0, 512)), Complex::new(S::new(1.0, 512), S::new(0.0, 512))];
        assert!(matches!(kobayashi_upper(&cert, &q, &skew), Err(Error::NotParallel)));
        let rogue = certify_disc(&DiscMap::rogue(&t, 1), &dom, small()).unwrap();
        assert!(!rogue.pass && rogue.max_r.is_positive());
        assert!(matches!(kobayashi_upper(&rogue, &q, &skew), Err(Error::CertRequired)));
    }

    #[test]
    fn csv_layout() {
        let (t, p) = setup();
        // The C³ discs lie on V, where ρ̃ needs no Levi constants.
        let dom = DomainSpec::new(Dimension::C3, &p);
        let rows = blowup_table(&t, &dom, small()).unwrap();
        let csv = blowup_csv(&rows, 512);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], BLOWUP_HEADER);
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("1,"));
    }
}
