use std::sync::OnceLock;

use kobalab::cusp::{cube_roots, k_gain, C2Point, LeviRoute, TubePoint};
use kobalab::params::{build_table, GrowthRule};
use kobalab::profile::{BandMemo, ProfileStack};
use kobalab::{Cusp, Real, ScaledReal};
use num_complex::Complex;
use proptest::prelude::*;

type S = ScaledReal;

fn c(x: f64) -> S {
    ScaledReal::new(x, 512)
}

fn cc(z: Complex<f64>) -> Complex<S> {
    Complex::new(c(z.re), c(z.im))
}

fn profile() -> &'static Cusp {
    static P: OnceLock<Cusp> = OnceLock::new();
    P.get_or_init(|| {
        let t = build_table::<S>(&GrowthRule::default(), 4, 512).unwrap();
        let stack = ProfileStack::new(&t, 64).unwrap();
        Cusp::new(&t, stack)
    })
}

/// First and second derivatives of x ↦ 1 - σ(2x - 1), σ the exp-quotient
/// step, from the logistic form σ(y) = 1/(1 + e^φ), φ = 1/y - 1/(1-y).
fn chi_derivs(x: f64) -> (f64, f64) {
    let y = 2.0 * x - 1.0;
    let phi = 1.0 / y - 1.0 / (1.0 - y);
    let d1 = -1.0 / (y * y) - 1.0 / ((1.0 - y) * (1.0 - y));
    let d2 = 2.0 / (y * y * y) - 2.0 / ((1.0 - y) * (1.0 - y) * (1.0 - y));
    let sig = 1.0 / (1.0 + phi.exp());
    let w = sig * (1.0 - sig);
    let s1 = -w * d1;
    let s2 = w * (1.0 - 2.0 * sig) * d1 * d1 - w * d2;
    (-2.0 * s1, -4.0 * s2)
}

fn unit(l: [Complex<f64>; 2]) -> [Complex<f64>; 2] {
    let n = (l[0].norm_sqr() + l[1].norm_sqr()).sqrt();
    [l[0] / n, l[1] / n]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// In the shell `p_n = ρ_n(ζ) χ(|ν|²/d²)` with `ν` holomorphic, so the
    /// Levi form along `L` is `ρ |∂ν·L|² (χ' + xχ'') / d²`.
    #[test]
    fn shell_levi_matches_closed_form(
        n in 1usize..=4,
        log_w in 0.2f64..4.0,
        arg in 0.0f64..std::f64::consts::TAU,
        x in 0.55f64..0.95,
        nu_arg in 0.0f64..std::f64::consts::TAU,
        l0 in (-1.0f64..1.0, -1.0f64..1.0),
        l1 in (-1.0f64..1.0, -1.0f64..1.0),
    ) {
        let p = profile();
        let t_start = p.support_start(n);
        let zeta = Complex::from_polar(1.0, arg);
        let rz = t_start * c(log_w.exp());
        let zeta = Complex::new(rz.clone() * c(zeta.re), rz * c(zeta.im));
        let d = p.geometry(n).d.clone();
        let rv = d.clone() * c(x.sqrt());
        let tp = TubePoint { zeta: zeta.clone(), nu: Complex::new(rv.clone() * c(nu_arg.cos()), rv * c(nu_arg.sin())) };
        prop_assume!(p.route(n, &tp) == LeviRoute::Shell);
        let l = unit([Complex::new(l0.0, l0.1), Complex::new(l1.0, l1.1)]);
        prop_assume!(l[0].norm() > 1e-3);
        let memo = BandMemo::default();
        let (route, sample, _) = p.p_levi(n, &tp, &l, &memo).unwrap();
        prop_assert_eq!(route, LeviRoute::Shell);

        let rho = p.stack().rho_k(n, &zeta);
        let dnu = cc(l[1]) - cc(l[0]) * c(2.0 / 3.0) / zeta;
        let (d1, d2) = chi_derivs(x);
        let m = d1 + x * d2;
        let want = rho.clone() * dnu.norm_sqr() / (d.clone() * d) * c(m);
        let tol = rho.abs() * dnu.norm_sqr() / p.geometry(n).d.clone().powi(2) * c(1e-4 * (m.abs() + 1.0));
        prop_assert!((sample.value.clone() - want.clone()).abs() <= tol, "{} vs {}", sample.value, want);
    }

    /// Only where 512 bits resolve the tube in C² coordinates,
    /// `|ζ|² <= 10¹⁴⁰ d_n`; the checks themselves run in tube coordinates.
    #[test]
    fn projection_is_idempotent(
        n in 1usize..=2,
        u in 0.0f64..1.0,
        arg in 0.0f64..std::f64::consts::TAU,
        off_r in 0.0f64..0.9,
        off_arg in 0.0f64..std::f64::consts::TAU,
    ) {
        let p = profile();
        let geo = p.geometry(n);
        let lo = geo.r_tilde.ln_abs_f64();
        let hi = (geo.d.ln_abs_f64() + 140.0 * std::f64::consts::LN_10).min(0.0);
        let ln_mod2 = lo + u * (hi - lo);
        let rz = S::from_ln_f64(0.5 * ln_mod2, 512);
        let zeta = Complex::new(rz.clone() * c(arg.cos()), rz * c(arg.sin()));
        let base = C2Point::on_curve(&zeta);
        prop_assume!(!geo.in_core(&base));
        let dv = geo.d.clone() * c(off_r);
        let z = base.add(&Complex::new(c(0.0), c(0.0)), &Complex::new(dv.clone() * c(off_arg.cos()), dv * c(off_arg.sin())));
        let once = geo.project(&z).unwrap();
        let twice = geo.project(&once).unwrap();
        let scale = once.norm_sqr().sqrt();
        let err = ((twice.s - once.s.clone()).norm_sqr() + (twice.t - once.t.clone()).norm_sqr()).sqrt() / scale.clone();
        prop_assert!(err.to_f64() < 1e-140);
        let back = (once.t.clone() - base.t.clone()).norm_sqr().sqrt() / geo.d.clone();
        prop_assert!(back.to_f64() < 1.0 + 1e-9);
    }

    #[test]
    fn cube_roots_cube_back(re in -1.0f64..1.0, im in -1.0f64..1.0, k in -900i64..900) {
        prop_assume!(re.abs() + im.abs() > 1e-6);
        let s = Complex::new(c(re).ldexp(k), c(im).ldexp(k));
        let scale = s.norm_sqr().sqrt();
        for r in cube_roots(&s) {
            let back = r.clone() * r.clone() * r;
            let err = (back - s.clone()).norm_sqr().sqrt() / scale.clone();
            prop_assert!(err.to_f64() < 1e-140);
        }
    }

    #[test]
    fn gain_is_twice_ratio(big in -300.0f64..300.0, small in -300.0f64..300.0) {
        let (bc, sc) = (c(big).exp(), c(small).exp());
        let k = k_gain(&bc, &sc);
        prop_assert!(k.rel_diff(&(c(2.0) * (c(big) - c(small)).exp())) < 1e-140);
    }

    /// `ρ̃` restricted to the cusp curve is `ρ` of the base coordinate `ζ`.
    #[test]
    fn restriction_to_curve(n in 1usize..=4, log_w in 0.2f64..4.0, arg in 0.0f64..std::f64::consts::TAU) {
        let p = profile();
        let rz = p.support_start(n) * c(log_w.exp());
        let zeta = Complex::new(rz.clone() * c(arg.cos()), rz * c(arg.sin()));
        let tp = TubePoint::on_curve(zeta.clone());
        let tilde = p.rho_tilde(&tp).unwrap();
        let planar = p.stack().rho(&zeta);
        prop_assert!(tilde.value == planar.value);
    }
}
