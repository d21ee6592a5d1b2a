use std::sync::OnceLock;

use kobalab::discs::{blowup_table, certify_disc, kobayashi_upper, Dimension, DiscMap, DiscSampling, DomainSpec};
use kobalab::params::{build_table, GrowthRule};
use kobalab::profile::ProfileStack;
use kobalab::{Cusp, Disc, Real, ScaledReal, Table};
use num_complex::Complex;
use proptest::prelude::*;

type S = ScaledReal;

fn fixture() -> &'static (Table, Cusp) {
    static F: OnceLock<(Table, Cusp)> = OnceLock::new();
    F.get_or_init(|| {
        let t = build_table::<S>(&GrowthRule::default(), 4, 512).unwrap();
        let stack = ProfileStack::new(&t, 64).unwrap();
        let p = Cusp::new(&t, stack);
        (t, p)
    })
}

fn small() -> DiscSampling {
    DiscSampling {
        rings: 12,
        boundary_rings: 3,
        angles: 64,
        boundary_samples: 64,
    }
}

#[test]
fn bounds_times_depth_are_inverse_growth() {
    let (t, p) = fixture();
    for dim in [Dimension::C2, Dimension::C3] {
        let dom = DomainSpec::new(dim, p);
        let rows = blowup_table(t, &dom, small()).unwrap();
        assert_eq!(rows.len(), 4);
        for r in &rows {
            let inv = t.a(r.n).cst(1.0) / t.a(r.n).clone();
            assert!(r.bound_times_delta.rel_diff(&inv) < 1e-140, "{dim:?} {}", r.n);
            assert!(r.upper_bound < r.baseline_bound);
            assert!(r.margin.is_positive());
        }
        assert!(rows[0].bound_times_delta <= S::new(-11.0, 512).exp().with_bits(512) * S::new(1.0 + 1e-12, 512));
        assert!(rows.windows(2).all(|w| w[1].bound_times_delta < w[0].bound_times_delta));
    }
}

#[test]
fn linear_disc_gives_the_baseline() {
    let (t, p) = fixture();
    let dom = DomainSpec::new(Dimension::C3, p);
    for n in 1..=4 {
        let delta = t.delta(n).clone();
        let disc = DiscMap::linear_normal(Dimension::C3, &delta);
        let cert = certify_disc(&disc, &dom, small()).unwrap();
        assert!(cert.pass, "{n}");
        let q = dom.inner_point(&delta).coords();
        let x: Vec<_> = dom.normal().iter().map(|c| Complex::new(delta.cst(c.re), delta.cst(c.im))).collect();
        let b = kobayashi_upper(&cert, &q, &x).unwrap();
        assert!((b.alpha.clone() * delta).rel_diff(&S::new(1.0, 512)) < 1e-140);
    }
}

#[test]
fn oversized_discs_leave_the_domain() {
    let (t, p) = fixture();
    let dom = DomainSpec::new(Dimension::C2, p);
    for n in 1..=4 {
        let cert = certify_disc(&Disc::rogue(t, n), &dom, small()).unwrap();
        assert!(!cert.pass, "{n}");
        assert!(kobayashi_upper(&cert, &dom.inner_point(t.delta(n)).coords(), &[]).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn derivative_matches_stencil(n in 1usize..=4, c3 in any::<bool>(), h in 1e-3f64..0.2) {
        let (t, _) = fixture();
        let disc = if c3 { DiscMap::c3(t, n) } else { DiscMap::c2(t, n) };
        let exact = disc.derivative();
        let fd = disc.derivative_fd(h);
        prop_assert_eq!(exact.len(), fd.len());
        let scale = disc.gain.clone().max_of(disc.radius.clone());
        for (a, b) in exact.iter().zip(&fd) {
            let err = (a.clone() - b.clone()).norm_sqr().sqrt() / scale.clone();
            prop_assert!(err.to_f64() < 1e-100, "{}", err);
        }
    }

    #[test]
    fn disc_stays_on_the_curve(n in 1usize..=4, re in -1.0f64..1.0, im in -1.0f64..1.0) {
        prop_assume!(re * re + im * im < 1.0);
        let (t, _) = fixture();
        let disc = DiscMap::c3(t, n);
        let p = disc.eval_f64(Complex::new(re, im));
        let c = p.coords();
        let (sv, tv) = (c[0].clone(), c[1].clone());
        let defect = (sv.clone() * sv - tv.clone() * tv.clone() * tv).norm_sqr().sqrt();
        let scale = t.r(n).powi(6);
        prop_assert!((defect / scale).to_f64() < 1e-140);
    }
}
