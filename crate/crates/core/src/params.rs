//! The coupled parameter sequences: growth rates a_n, radii r_n, kink
//! positions b_n, mollifier radii ε_n, term bounds A_n, weights δ_n and the
//! cusp-tube data r̃_n, d_n, plus the Levi constants filled in later.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Decimal, Real};

/// Ratio of the geometric sign scan used to bracket b_n.
pub const SCAN_RATIO: f64 = 1.2;

/// Points of the geometric grid below the bracket that must show no sign change.
pub const SMALLEST_ROOT_GRID: usize = 200;

/// Rule producing ln a_n.
#[derive(Clone, Debug, PartialEq)]
pub enum GrowthRule {
    /// a_n = e^(offset + n)
    Exp { offset: f64 },
    /// a_n = e^ln_a for every n
    Const { ln_a: f64 },
    /// user-supplied ln a_1, ln a_2, ... (the last value is extended by +1 steps)
    Table(Vec<f64>),
}

impl Default for GrowthRule {
    fn default() -> Self {
        GrowthRule::Exp { offset: 10.0 }
    }
}

impl GrowthRule {
    pub fn ln_a(&self, n: usize) -> f64 {
        match self {
            GrowthRule::Exp { offset } => offset + n as f64,
            GrowthRule::Const { ln_a } => *ln_a,
            GrowthRule::Table(v) => match v.get(n - 1) {
                Some(x) => *x,
                None => v.last().copied().unwrap_or(0.0) + (n - v.len()) as f64,
            },
        }
    }

    /// Parses `exp:10`, `const:e9` (or `const:9`), `table:11,12.5,14`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("growth rule `{s}`"));
        let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
        let num = |t: &str| -> Result<f64> {
            t.trim()
                .trim_start_matches('e')
                .parse::<f64>()
                .map_err(|_| bad())
        };
        match kind {
            "exp" => Ok(GrowthRule::Exp { offset: num(arg)? }),
            "const" => Ok(GrowthRule::Const { ln_a: num(arg)? }),
            "table" => Ok(GrowthRule::Table(
                arg.split(',').map(num).collect::<Result<Vec<_>>>()?,
            )),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for GrowthRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GrowthRule::Exp { offset } => write!(f, "exp:{offset}"),
            GrowthRule::Const { ln_a } => write!(f, "const:e{ln_a}"),
            GrowthRule::Table(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                write!(f, "table:{}", parts.join(","))
            }
        }
    }
}

/// Sign-bracket certificate for the smallest positive root b_n of
/// f(b) = 1/8 - b + ln b / (4 ln a_n).
#[derive(Clone, Debug)]
pub struct RootCert<T> {
    pub lo: T,
    pub hi: T,
    pub f_lo: T,
    pub f_hi: T,
    pub root: T,
    /// Critical point 1/(4 ln a) where f peaks.
    pub critical: T,
    /// Newton iterate started from `lo`, the independent cross-check.
    pub newton: T,
    pub newton_rel_diff: f64,
    /// Geometric grid points below `lo` checked for f < 0.
    pub grid_below: usize,
    pub grid_sign_change: bool,
    pub bisection_steps: usize,
}

/// f(b) = 1/8 - b + ln b / (4 ln a).
pub fn kink_function<T: Real>(b: &T, ln_a: &T) -> T {
    b.cst(0.125) - b.clone() + b.ln() / (ln_a.cst(4.0) * ln_a.clone())
}

fn rel_tol<T: Real>(x: &T) -> T {
    // 2^-(bits - 8); 2^-45 for doubles.
    let bits = x.precision().saturating_sub(8).max(8) as i64;
    x.cst(1.0).ldexp(-bits)
}

/// r_n = r_{n-1}^2 / a_n.
pub fn next_radius<T: Real>(a_n: &T, r_prev: &T) -> Result<T> {
    if *a_n < a_n.cst(4.0) {
        return Err(Error::Domain(format!("a_n = {a_n} is below 4")));
    }
    if !r_prev.is_positive() || *r_prev > r_prev.cst(0.25) {
        return Err(Error::Domain(format!("r_prev = {r_prev} outside (0, 1/4]")));
    }
    Ok(r_prev.clone() * r_prev.clone() / a_n.clone())
}

/// Smallest positive root of the kink condition, with its certificate.
pub fn certify_b<T: Real>(a_n: &T, index: usize) -> Result<RootCert<T>> {
    let ln_a = a_n.ln();
    let four_l = ln_a.cst(4.0) * ln_a.clone();
    // f peaks at b* = 1/(4 ln a); f(b*) > 0 iff (1 + ln(4 ln a)) / (4 ln a) < 1/8.
    let lhs = (four_l.cst(1.0) + four_l.ln()) / four_l.clone();
    if !(lhs < four_l.cst(0.125)) {
        return Err(Error::NoRoot {
            index,
            detail: format!("(1 + ln(4 ln a))/(4 ln a) = {lhs:.6} >= 1/8"),
        });
    }
    let critical = four_l.cst(1.0) / four_l.clone();
    let f = |b: &T| kink_function(b, &ln_a);
    let ratio = critical.cst(SCAN_RATIO);

    let mut hi = critical.clone();
    let mut lo = critical.clone() / ratio.clone();
    let mut steps = 0;
    while !f(&lo).is_negative() {
        hi = lo.clone();
        lo = lo / ratio.clone();
        steps += 1;
        if steps > 100_000 {
            return Err(Error::NoRoot {
                index,
                detail: "geometric scan found no sign change".into(),
            });
        }
    }

    let tol = rel_tol(&critical);
    let two = critical.cst(2.0);
    let mut bisection_steps = 0;
    while (hi.clone() - lo.clone()) > hi.clone() * tol.clone() {
        let mid = (lo.clone() + hi.clone()) / two.clone();
        if f(&mid).is_negative() {
            lo = mid;
        } else {
            hi = mid;
        }
        bisection_steps += 1;
    }
    let root = (lo.clone() + hi.clone()) / two;

    let newton = newton_b(&lo, &ln_a, &tol);
    let newton_rel_diff = newton.rel_diff(&root);

    let mut grid_sign_change = false;
    let mut g = lo.clone();
    for _ in 0..SMALLEST_ROOT_GRID {
        g = g / ratio.clone();
        if !f(&g).is_negative() {
            grid_sign_change = true;
        }
    }

    Ok(RootCert {
        f_lo: f(&lo),
        f_hi: f(&hi),
        lo,
        hi,
        root,
        critical,
        newton,
        newton_rel_diff,
        grid_below: SMALLEST_ROOT_GRID,
        grid_sign_change,
        bisection_steps,
    })
}

/// Newton iteration for the kink root from a point left of it. f is concave
/// and increasing below the critical point, so the iterates increase
/// monotonically to the root.
fn newton_b<T: Real>(start: &T, ln_a: &T, tol: &T) -> T {
    let four_l = ln_a.cst(4.0) * ln_a.clone();
    let mut b = start.clone();
    for _ in 0..500 {
        let fb = kink_function(&b, ln_a);
        let dfb = b.cst(1.0) / (four_l.clone() * b.clone()) - b.cst(1.0);
        let step = fb / dfb;
        b = b - step.clone();
        if step.abs() <= b.abs() * tol.clone() {
            break;
        }
    }
    b
}

/// Smallest positive root b_n.
pub fn solve_b<T: Real>(a_n: &T) -> Result<T> {
    certify_b(a_n, 0).map(|c| c.root)
}

/// A_k = 1/2 + a_k/r_k + ln(1/r_k) / (4 ln a_k).
pub fn term_bound<T: Real>(a_k: &T, r_k: &T) -> T {
    a_k.cst(0.5)
        + a_k.clone() / r_k.clone()
        + (r_k.cst(1.0) / r_k.clone()).ln() / (a_k.cst(4.0) * a_k.ln())
}

/// δ_k = min(δ_{k-1} / (A_k 2^k), r_k^k / (1 + a_k)).
pub fn next_delta<T: Real>(
    delta_prev: &T,
    big_a: &T,
    k: usize,
    a_k: &T,
    r_k: &T,
) -> Result<T> {
    if !delta_prev.is_positive() || *delta_prev >= delta_prev.cst(1.0) {
        return Err(Error::Domain(format!("delta_prev = {delta_prev} outside (0, 1)")));
    }
    if !big_a.is_positive() {
        return Err(Error::Domain(format!("A_k = {big_a} is not positive")));
    }
    let recursion = delta_prev.clone() / big_a.clone().ldexp(k as i64);
    let rk = r_k.powi(k as u32);
    let one_a = a_k.cst(1.0) + a_k.clone();
    let mut flatness = rk.clone() / one_a.clone();
    // A quotient rounded up breaks δ(1 + a) <= r^k; shave a few ulps.
    if flatness.clone() * one_a > rk {
        flatness = flatness.clone() - flatness.clone() * rel_tol(&flatness).ldexp(-4);
    }
    let delta = recursion.min_of(flatness);
    if delta.is_degenerate() {
        return Err(Error::Underflow {
            index: k,
            what: "delta",
            bits: delta_prev.precision(),
        });
    }
    Ok(delta)
}

/// g(ε) = ε + ln(1 + ε/r_n) / (4 ln a_n), the oscillation bound of u_n over an ε-disc.
pub fn oscillation_bound<T: Real>(eps: &T, a_n: &T, r_n: &T) -> T {
    eps.clone() + (eps.cst(1.0) + eps.clone() / r_n.clone()).ln() / (a_n.cst(4.0) * a_n.ln())
}

/// ε_n = min(r_n/4, largest ε with g(ε) <= 1/8).
pub fn mollifier_radius<T: Real>(a_n: &T, r_n: &T) -> T {
    let eighth = r_n.cst(0.125);
    let cap = r_n.clone() / r_n.cst(4.0);
    if oscillation_bound(&cap, a_n, r_n) <= eighth {
        return cap;
    }
    // g is increasing; bisect on (0, cap) keeping g(lo) <= 1/8.
    let mut lo = r_n.cst(0.0);
    let mut hi = cap;
    let tol = rel_tol(r_n);
    let two = r_n.cst(2.0);
    while (hi.clone() - lo.clone()) > hi.clone() * tol.clone() {
        let mid = (lo.clone() + hi.clone()) / two.clone();
        if oscillation_bound(&mid, a_n, r_n) <= eighth {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Levi constants of the n-th cusp summand.
#[derive(Clone, Debug)]
pub struct LeviConstants<T> {
    pub big_c: T,
    pub small_c: T,
    pub k_gain: T,
}

/// All sequences of the construction for indices 1..=n_max.
///
/// Vectors are stored 0-based (`a[0]` is a_1); use the 1-based accessors.
/// `a_next`/`r_next` are a_{n_max+1} and r_{n_max+1}, needed for r̃_{n_max}.
#[derive(Clone, Debug)]
pub struct ParamTable<T> {
    pub n_max: usize,
    pub precision_bits: usize,
    pub rule: GrowthRule,
    pub r0: T,
    pub delta0: T,
    pub a: Vec<T>,
    pub r: Vec<T>,
    pub b: Vec<T>,
    pub eps: Vec<T>,
    pub big_a: Vec<T>,
    pub delta: Vec<T>,
    pub d: Vec<T>,
    pub r_tilde: Vec<T>,
    pub a_next: T,
    pub r_next: T,
    pub ln_a: Vec<T>,
    pub roots: Vec<RootCert<T>>,
    pub levi: Vec<Option<LeviConstants<T>>>,
}

impl<T: Real> ParamTable<T> {
    pub fn a(&self, n: usize) -> &T {
        if n == self.n_max + 1 {
            &self.a_next
        } else {
            &self.a[n - 1]
        }
    }

    /// r_n for 0 <= n <= n_max + 1.
    pub fn r(&self, n: usize) -> &T {
        match n {
            0 => &self.r0,
            n if n == self.n_max + 1 => &self.r_next,
            n => &self.r[n - 1],
        }
    }

    pub fn b(&self, n: usize) -> &T {
        &self.b[n - 1]
    }

    pub fn eps(&self, n: usize) -> &T {
        &self.eps[n - 1]
    }

    pub fn big_a(&self, n: usize) -> &T {
        &self.big_a[n - 1]
    }

    /// δ_n for 0 <= n <= n_max.
    pub fn delta(&self, n: usize) -> &T {
        if n == 0 {
            &self.delta0
        } else {
            &self.delta[n - 1]
        }
    }

    pub fn d(&self, n: usize) -> &T {
        &self.d[n - 1]
    }

    pub fn r_tilde(&self, n: usize) -> &T {
        &self.r_tilde[n - 1]
    }

    pub fn ln_a(&self, n: usize) -> &T {
        &self.ln_a[n - 1]
    }

    pub fn set_levi_constants(&mut self, n: usize, consts: LeviConstants<T>) {
        self.levi[n - 1] = Some(consts);
    }

    /// Σ_{k>n} δ_k A_k over the stored terms.
    pub fn tail_sum(&self, n: usize) -> T {
        let mut s = self.r0.cst(0.0);
        for k in n + 1..=self.n_max {
            s = s + self.delta(k).clone() * self.big_a(k).clone();
        }
        s
    }

    /// Re-evaluates every invariant from the stored values.
    pub fn check_invariants(&self) -> Vec<String> {
        let mut bad = Vec::new();
        let quarter = self.r0.cst(0.25);
        if self.r0 != quarter {
            bad.push("r_0 != 1/4".into());
        }
        for n in 1..=self.n_max {
            let a = self.a(n);
            if *a < a.cst(4.0) {
                bad.push(format!("a_{n} < 4"));
            }
            if n > 1 && !(a > self.a(n - 1)) {
                bad.push(format!("a_{n} not increasing"));
            }
            match next_radius(a, self.r(n - 1)) {
                Ok(r) if r == *self.r(n) => {}
                _ => bad.push(format!("r_{n} != r_{{n-1}}^2 / a_{n}")),
            }
            if !(self.r(n) < self.r(n - 1)) {
                bad.push(format!("r_{n} not decreasing"));
            }
            let b = self.b(n);
            if !b.is_positive() || *b > b.cst(0.125) {
                bad.push(format!("b_{n} outside (0, 1/8]"));
            }
            if n > 1 && !(b < self.b(n - 1)) {
                bad.push(format!("b_{n} not decreasing"));
            }
            let eps = self.eps(n);
            if !(eps.clone() < self.r(n).clone() / eps.cst(2.0)) {
                bad.push(format!("eps_{n} >= r_{n}/2"));
            }
            if oscillation_bound(eps, a, self.r(n)) > eps.cst(0.125) {
                bad.push(format!("eps_{n} oscillation bound > 1/8"));
            }
            let delta = self.delta(n);
            let rec = self.delta(n - 1).clone() / self.big_a(n).clone().ldexp(n as i64);
            if *delta > rec || *delta >= delta.cst(1.0) || !delta.is_positive() {
                bad.push(format!("delta_{n} violates the recursion"));
            }
            let flat = self.r(n).powi(n as u32);
            if delta.clone() * (a.cst(1.0) + a.clone()) > flat {
                bad.push(format!("delta_{n} violates the flatness constraint"));
            }
            let rt = self.r(n + 1).powi(3);
            if *self.r_tilde(n) != rt {
                bad.push(format!("r_tilde_{n} != r_{}^3", n + 1));
            }
            let x = rt.cst(0.75) * rt.clone();
            let sheet = x.clone() * x.sqrt() / rt.cst(4.0);
            if *self.d(n) > sheet {
                bad.push(format!("d_{n} exceeds (3 r_tilde/4)^(3/2)/4"));
            }
            if self.tail_sum(n) > self.delta(n).clone() / delta.cst(2.0) {
                bad.push(format!("tail sum after {n} exceeds delta_{n}/2"));
            }
        }
        bad
    }
}

/// Builds the table for `rule` at `bits` of precision. C, c, K stay unset.
pub fn build_table<T: Real>(rule: &GrowthRule, n_max: usize, bits: usize) -> Result<ParamTable<T>> {
    if n_max == 0 {
        return Err(Error::Domain("n_max must be positive".into()));
    }
    let c = |x: f64| T::from_f64_prec(x, bits);
    let r0 = c(0.25);
    let delta0 = c(0.5);
    let e10 = c(10.0).exp();

    let mut a = Vec::with_capacity(n_max + 1);
    let mut ln_a = Vec::with_capacity(n_max + 1);
    let mut r = Vec::with_capacity(n_max + 1);
    let mut b = Vec::new();
    let mut eps = Vec::new();
    let mut big_a = Vec::new();
    let mut delta = Vec::new();
    let mut roots = Vec::new();

    let mut r_prev = r0.clone();
    let mut delta_prev = delta0.clone();
    for n in 1..=n_max + 1 {
        let la = c(rule.ln_a(n));
        let a_n = la.exp();
        if a_n < c(4.0) {
            return Err(Error::Domain(format!("a_{n} = {a_n} is below 4")));
        }
        if n <= n_max {
            let cert = certify_b(&a_n, n)?;
            if n == 1 && a_n < e10 {
                return Err(Error::Domain(format!("a_1 = {a_n} is below e^10")));
            }
            if let Some(prev) = a.last() {
                if !(a_n > *prev) {
                    return Err(Error::Domain(format!("a_{n} is not larger than a_{}", n - 1)));
                }
            }
            b.push(cert.root.clone());
            roots.push(cert);
        }
        let r_n = next_radius(&a_n, &r_prev)?;
        if r_n.is_degenerate() {
            return Err(Error::Underflow {
                index: n,
                what: "r",
                bits,
            });
        }
        if n <= n_max {
            eps.push(mollifier_radius(&a_n, &r_n));
            let bound = term_bound(&a_n, &r_n);
            let d_n = next_delta(&delta_prev, &bound, n, &a_n, &r_n)?;
            delta_prev = d_n.clone();
            big_a.push(bound);
            delta.push(d_n);
        }
        a.push(a_n);
        ln_a.push(la);
        r.push(r_n.clone());
        r_prev = r_n;
    }
    let a_next = a.pop().expect("n_max + 1 entries");
    let r_next = r.pop().expect("n_max + 1 entries");
    ln_a.pop();

    let mut r_tilde = Vec::with_capacity(n_max);
    let mut d = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let r_up = if n == n_max { &r_next } else { &r[n] };
        let rt = r_up.powi(3);
        let d_n = rt.clone() * rt.clone();
        if rt.is_degenerate() || d_n.is_degenerate() {
            return Err(Error::Underflow {
                index: n,
                what: "d",
                bits,
            });
        }
        r_tilde.push(rt);
        d.push(d_n);
    }

    Ok(ParamTable {
        n_max,
        precision_bits: bits,
        rule: rule.clone(),
        r0,
        delta0,
        a,
        r,
        b,
        eps,
        big_a,
        delta,
        d,
        r_tilde,
        a_next,
        r_next,
        ln_a,
        roots,
        levi: vec![None; n_max],
    })
}

/// On-disk form of a [`ParamTable`]; every real is a decimal pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamDoc {
    pub n_max: usize,
    pub precision_bits: usize,
    pub rule: String,
    pub r0: Decimal,
    pub delta0: Decimal,
    pub a: Vec<Decimal>,
    pub r: Vec<Decimal>,
    pub b: Vec<Decimal>,
    pub eps: Vec<Decimal>,
    #[serde(rename = "A")]
    pub big_a: Vec<Decimal>,
    pub delta: Vec<Decimal>,
    pub d: Vec<Decimal>,
    pub r_tilde: Vec<Decimal>,
    pub a_next: Decimal,
    pub r_next: Decimal,
    #[serde(rename = "C")]
    pub big_c: Vec<Option<Decimal>>,
    pub c: Vec<Option<Decimal>>,
    #[serde(rename = "K")]
    pub k: Vec<Option<Decimal>>,
}

fn decs<T: Real>(v: &[T]) -> Vec<Decimal> {
    v.iter().map(Real::to_decimal).collect()
}

impl<T: Real> ParamTable<T> {
    pub fn to_doc(&self) -> ParamDoc {
        let levi = |f: fn(&LeviConstants<T>) -> &T| -> Vec<Option<Decimal>> {
            self.levi
                .iter()
                .map(|l| l.as_ref().map(|l| f(l).to_decimal()))
                .collect()
        };
        ParamDoc {
            n_max: self.n_max,
            precision_bits: self.precision_bits,
            rule: self.rule.to_string(),
            r0: self.r0.to_decimal(),
            delta0: self.delta0.to_decimal(),
            a: decs(&self.a),
            r: decs(&self.r),
            b: decs(&self.b),
            eps: decs(&self.eps),
            big_a: decs(&self.big_a),
            delta: decs(&self.delta),
            d: decs(&self.d),
            r_tilde: decs(&self.r_tilde),
            a_next: self.a_next.to_decimal(),
            r_next: self.r_next.to_decimal(),
            big_c: levi(|l| &l.big_c),
            c: levi(|l| &l.small_c),
            k: levi(|l| &l.k_gain),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("param document serializes")
    }
}
