//! Potential pair: a 1-periodic part `p` and a compactly supported part `q` on `[0, t]`.

use crate::error::{HillError, Result};
use crate::quad::{find_root, integrate_adaptive};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::f64::consts::PI;
use std::path::Path;

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Clone, PartialEq)]
enum PeriodicRepr {
    /// `c0 + Σ cos[k-1]·cos 2πkx + sin[k-1]·sin 2πkx`.
    Fourier { c0: f64, cos: Vec<f64>, sin: Vec<f64> },
    /// Periodic piecewise-linear interpolant; `knots` runs from 0 to 1 inclusive.
    Linear { knots: Vec<f64>, values: Vec<f64> },
}

/// Real 1-periodic potential.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicPotential {
    repr: PeriodicRepr,
    shift: f64,
}

impl PeriodicPotential {
    pub fn zero() -> Self {
        Self::fourier(0.0, vec![], vec![])
    }

    pub fn fourier(c0: f64, cos: Vec<f64>, sin: Vec<f64>) -> Self {
        Self { repr: PeriodicRepr::Fourier { c0, cos, sin }, shift: 0.0 }
    }

    /// `values[j]` is the value at `x = j/N`; the interpolant is periodic and piecewise linear.
    pub fn samples(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(HillError::Validation("periodic samples are empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(HillError::Validation("periodic samples must be finite".into()));
        }
        let n = values.len();
        let mut knots: Vec<f64> = (0..=n).map(|j| j as f64 / n as f64).collect();
        let mut vals: Vec<f64> = values.to_vec();
        vals.push(values[0]);
        // Drop interior knots where the slope does not change.
        let mut i = 1;
        while i + 1 < knots.len() {
            let s0 = (vals[i] - vals[i - 1]) / (knots[i] - knots[i - 1]);
            let s1 = (vals[i + 1] - vals[i]) / (knots[i + 1] - knots[i]);
            let scale = 1.0 + s0.abs().max(s1.abs());
            if (s0 - s1).abs() <= 1e-13 * scale {
                knots.remove(i);
                vals.remove(i);
            } else {
                i += 1;
            }
        }
        Ok(Self { repr: PeriodicRepr::Linear { knots, values: vals }, shift: 0.0 })
    }

    /// Same potential plus a constant.
    pub fn shifted(&self, c: f64) -> Self {
        Self { repr: self.repr.clone(), shift: self.shift + c }
    }

    /// Constant added on top of the stored representation.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn is_zero(&self) -> bool {
        self.shift == 0.0
            && match &self.repr {
                PeriodicRepr::Fourier { c0, cos, sin } => {
                    *c0 == 0.0 && cos.iter().chain(sin).all(|v| *v == 0.0)
                }
                PeriodicRepr::Linear { values, .. } => values.iter().all(|v| *v == 0.0),
            }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let u = x - x.floor();
        match &self.repr {
            PeriodicRepr::Fourier { .. } => self.eval_fourier(x),
            PeriodicRepr::Linear { knots, .. } => {
                let k = knots.partition_point(|&s| s <= u).clamp(1, knots.len() - 1) - 1;
                self.eval_linear(k, u)
            }
        }
    }

    fn eval_fourier(&self, x: f64) -> f64 {
        let PeriodicRepr::Fourier { c0, cos, sin } = &self.repr else { unreachable!() };
        let m = cos.len().max(sin.len());
        let mut s = c0 + self.shift;
        if m == 0 {
            return s;
        }
        let (s1, c1) = (TWO_PI * x).sin_cos();
        let (mut ck, mut sk) = (c1, s1);
        for k in 0..m {
            if k > 0 {
                if k % 16 == 0 {
                    let a = TWO_PI * (k + 1) as f64 * x;
                    (sk, ck) = a.sin_cos();
                } else {
                    (ck, sk) = (ck * c1 - sk * s1, sk * c1 + ck * s1);
                }
            }
            s += cos.get(k).copied().unwrap_or(0.0) * ck + sin.get(k).copied().unwrap_or(0.0) * sk;
        }
        s
    }

    fn eval_linear(&self, k: usize, u: f64) -> f64 {
        let PeriodicRepr::Linear { knots, values } = &self.repr else { unreachable!() };
        let (x0, x1) = (knots[k], knots[k + 1]);
        values[k] + (values[k + 1] - values[k]) * (u - x0) / (x1 - x0) + self.shift
    }

    /// Kinks of the potential strictly inside (a, b).
    pub fn breakpoints(&self, a: f64, b: f64) -> Vec<f64> {
        let mut out = Vec::new();
        if let PeriodicRepr::Linear { knots, .. } = &self.repr {
            let (lo, hi) = (a.min(b), a.max(b));
            let mut cell = lo.floor() as i64;
            while (cell as f64) < hi {
                for &k in &knots[..knots.len() - 1] {
                    let x = cell as f64 + k;
                    if x > lo && x < hi {
                        out.push(x);
                    }
                }
                cell += 1;
            }
        }
        out
    }

    /// Evaluator valid on a segment that contains no breakpoint in its interior.
    pub fn local(&self, a: f64, b: f64) -> LocalPeriodic<'_> {
        match &self.repr {
            PeriodicRepr::Fourier { .. } => LocalPeriodic::Smooth(self),
            PeriodicRepr::Linear { knots, values } => {
                let mid = 0.5 * (a + b);
                let cell = mid.floor();
                let u = mid - cell;
                let k = knots.partition_point(|&s| s <= u).clamp(1, knots.len() - 1) - 1;
                let x0 = cell + knots[k];
                let slope = (values[k + 1] - values[k]) / (knots[k + 1] - knots[k]);
                LocalPeriodic::Line { x0, v0: values[k] + self.shift, slope }
            }
        }
    }

    /// Mean value `p₀`.
    pub fn mean(&self) -> f64 {
        self.fourier_cs(0).0
    }

    /// `(∫₀¹ p cos 2πnx, ∫₀¹ p sin 2πnx)`; for n = 0 the mean and 0.
    pub fn fourier_cs(&self, n: usize) -> (f64, f64) {
        match &self.repr {
            PeriodicRepr::Fourier { c0, cos, sin } => {
                if n == 0 {
                    (c0 + self.shift, 0.0)
                } else {
                    (
                        0.5 * cos.get(n - 1).copied().unwrap_or(0.0),
                        0.5 * sin.get(n - 1).copied().unwrap_or(0.0),
                    )
                }
            }
            PeriodicRepr::Linear { knots, values } => {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..knots.len() - 1 {
                    let slope = (values[k + 1] - values[k]) / (knots[k + 1] - knots[k]);
                    acc += poly_exp_integral(&[values[k], slope], knots[k], knots[k + 1], TWO_PI * n as f64);
                }
                if n == 0 {
                    (acc.re + self.shift, 0.0)
                } else {
                    (acc.re, acc.im)
                }
            }
        }
    }

    /// Cosine coefficients `cos[k-1]` of a Fourier representation, if any.
    pub fn fourier_terms(&self) -> Option<(f64, &[f64], &[f64])> {
        match &self.repr {
            PeriodicRepr::Fourier { c0, cos, sin } => Some((c0 + self.shift, cos, sin)),
            _ => None,
        }
    }

    /// Largest harmonic present in a Fourier representation.
    pub fn max_harmonic(&self) -> Option<usize> {
        self.fourier_terms().map(|(_, c, s)| c.len().max(s.len()))
    }

    pub fn min_value(&self) -> f64 {
        match &self.repr {
            PeriodicRepr::Linear { values, .. } => {
                values.iter().cloned().fold(f64::INFINITY, f64::min) + self.shift
            }
            PeriodicRepr::Fourier { .. } => {
                (0..4096).map(|j| self.eval(j as f64 / 4096.0)).fold(f64::INFINITY, f64::min)
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        match &self.repr {
            PeriodicRepr::Linear { values, .. } => {
                values.iter().map(|v| (v + self.shift).abs()).fold(0.0, f64::max)
            }
            PeriodicRepr::Fourier { .. } => {
                (0..4096).map(|j| self.eval(j as f64 / 4096.0).abs()).fold(0.0, f64::max)
            }
        }
    }

    /// `∫₀ˣ |p|` for any x ≥ 0.
    pub fn abs_integral(&self, x: f64) -> f64 {
        let full = x.floor();
        let one = self.abs_integral_cell(1.0);
        full * one + self.abs_integral_cell(x - full)
    }

    fn abs_integral_cell(&self, b: f64) -> f64 {
        if b <= 0.0 {
            return 0.0;
        }
        let mut pts = vec![0.0];
        pts.extend(self.breakpoints(0.0, b));
        pts.push(b);
        let mut total = 0.0;
        for w in pts.windows(2) {
            total += abs_integral_smooth(|x| self.eval(x), w[0], w[1]);
        }
        total
    }
}

/// Potential value restricted to one smooth segment.
#[derive(Clone, Copy)]
pub enum LocalPeriodic<'a> {
    Smooth(&'a PeriodicPotential),
    Line { x0: f64, v0: f64, slope: f64 },
}

impl LocalPeriodic<'_> {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            LocalPeriodic::Smooth(p) => p.eval_fourier(x),
            LocalPeriodic::Line { x0, v0, slope } => v0 + slope * (x - x0),
        }
    }
}

/// One polynomial piece of `q`, with coefficients in the local variable `x − a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub a: f64,
    pub b: f64,
    pub coeffs: Vec<f64>,
}

impl Piece {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let u = x - self.a;
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * u + c)
    }

    fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| *c == 0.0)
    }
}

/// Real potential supported in `[0, t]`, piecewise polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactPotential {
    t: f64,
    pieces: Vec<Piece>,
    /// Grid spacing when built from samples; 0 for exact pieces.
    resolution: f64,
}

impl CompactPotential {
    pub fn zero(t: f64) -> Result<Self> {
        Self::pieces(t, vec![])
    }

    pub fn pieces(t: f64, mut pieces: Vec<Piece>) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(HillError::Validation(format!("support endpoint t must be positive, got {t}")));
        }
        pieces.sort_by(|x, y| x.a.total_cmp(&y.a));
        let tol = 1e-12 * t;
        for (i, pc) in pieces.iter().enumerate() {
            if !(pc.a < pc.b) || pc.a < -tol || pc.b > t + tol {
                return Err(HillError::Validation(format!(
                    "piece [{}, {}] is empty or outside [0, {t}]",
                    pc.a, pc.b
                )));
            }
            if pc.coeffs.iter().any(|c| !c.is_finite()) {
                return Err(HillError::Validation("piece coefficients must be finite".into()));
            }
            if i > 0 && pc.a < pieces[i - 1].b - tol {
                return Err(HillError::Validation("pieces overlap".into()));
            }
        }
        let q = Self { t, pieces: pieces.into_iter().filter(|p| !p.is_zero()).collect(), resolution: 0.0 };
        q.check_hull(tol)?;
        Ok(q)
    }

    /// `values[j]` at `x = j·t/(N−1)`, linear in between.
    pub fn samples(t: f64, values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(HillError::Validation("compact samples need at least two values".into()));
        }
        if !(t > 0.0) || !t.is_finite() {
            return Err(HillError::Validation(format!("support endpoint t must be positive, got {t}")));
        }
        let h = t / (values.len() - 1) as f64;
        let pieces = values
            .windows(2)
            .enumerate()
            .map(|(j, w)| Piece { a: j as f64 * h, b: (j + 1) as f64 * h, coeffs: vec![w[0], (w[1] - w[0]) / h] })
            .collect();
        let mut q = Self::pieces(t, pieces)?;
        q.resolution = h;
        Ok(q)
    }

    fn check_hull(&self, tol: f64) -> Result<()> {
        if self.pieces.is_empty() {
            return Ok(());
        }
        let lo = self.pieces.first().unwrap().a;
        let hi = self.pieces.last().unwrap().b;
        if lo > tol || hi < self.t - tol {
            return Err(HillError::Validation(format!(
                "support hull [{lo}, {hi}] differs from [0, {}]",
                self.t
            )));
        }
        Ok(())
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn pieces_ref(&self) -> &[Piece] {
        &self.pieces
    }

    /// Grid spacing to which the support hull is known (0 for exact pieces).
    pub fn hull_resolution(&self) -> f64 {
        self.resolution
    }

    /// Lower bound of `q` on `[0, t]` from dense sampling of each piece.
    pub fn min_value(&self) -> f64 {
        self.pieces
            .iter()
            .flat_map(|pc| (0..=64).map(move |k| pc.eval(pc.a + (pc.b - pc.a) * k as f64 / 64.0)))
            .fold(0.0, f64::min)
    }

    pub fn is_zero(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn eval(&self, x: f64) -> f64 {
        let i = self.pieces.partition_point(|p| p.b <= x);
        match self.pieces.get(i) {
            Some(p) if p.a <= x => p.eval(x),
            _ => 0.0,
        }
    }

    /// Piece boundaries strictly inside (a, b).
    pub fn breakpoints(&self, a: f64, b: f64) -> Vec<f64> {
        let (lo, hi) = (a.min(b), a.max(b));
        let mut v: Vec<f64> = self
            .pieces
            .iter()
            .flat_map(|p| [p.a, p.b])
            .chain([0.0, self.t])
            .filter(|x| *x > lo && *x < hi)
            .collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// The piece active on a breakpoint-free segment, if any.
    pub fn local(&self, a: f64, b: f64) -> Option<&Piece> {
        let mid = 0.5 * (a + b);
        self.pieces.iter().find(|p| p.a <= mid && mid <= p.b)
    }

    /// `∫ q`.
    pub fn mean(&self) -> f64 {
        self.fourier_cs(0).0
    }

    /// `(∫ q cos 2πnx, ∫ q sin 2πnx)`, integrated in closed form.
    pub fn fourier_cs(&self, n: usize) -> (f64, f64) {
        let w = TWO_PI * n as f64;
        let s: Complex64 = self.pieces.iter().map(|p| poly_exp_integral(&p.coeffs, p.a, p.b, w)).sum();
        if n == 0 {
            (s.re, 0.0)
        } else {
            (s.re, s.im)
        }
    }

    /// `∫₀ᵗ |q|`.
    pub fn norm(&self) -> f64 {
        self.pieces.iter().map(|p| abs_integral_smooth(|x| p.eval(x), p.a, p.b)).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        let pieces = self
            .pieces
            .iter()
            .map(|p| Piece { a: p.a, b: p.b, coeffs: p.coeffs.iter().map(|v| v * c).collect() })
            .filter(|p| !p.is_zero())
            .collect();
        Self { t: self.t, pieces, resolution: self.resolution }
    }

    /// `x ↦ q(t − x)`.
    pub fn reflected(&self) -> Self {
        let pieces = self
            .pieces
            .iter()
            .rev()
            .map(|p| {
                // Re-expand around the new left end t − b: q(t − x) with u = x − (t − b).
                let l = p.b - p.a;
                let mut c = vec![0.0; p.coeffs.len()];
                // P(l − u) = Σ c_k (l − u)^k
                for (k, ck) in p.coeffs.iter().enumerate() {
                    let mut binom = 1.0;
                    for j in 0..=k {
                        let term = binom * l.powi((k - j) as i32) * if j % 2 == 0 { 1.0 } else { -1.0 };
                        c[j] += ck * term;
                        binom = binom * (k - j) as f64 / (j + 1) as f64;
                    }
                }
                Piece { a: self.t - p.b, b: self.t - p.a, coeffs: c }
            })
            .collect();
        Self { t: self.t, pieces, resolution: self.resolution }
    }
}

/// `∫_a^b P(x − a) e^{iωx} dx` for a polynomial with coefficients `c`.
pub fn poly_exp_integral(c: &[f64], a: f64, b: f64, w: f64) -> Complex64 {
    let l = b - a;
    if w == 0.0 {
        let v: f64 = c.iter().enumerate().map(|(k, ck)| ck * l.powi(k as i32 + 1) / (k + 1) as f64).sum();
        return Complex64::new(v, 0.0);
    }
    if w * l < 0.5 && c.len() > 1 {
        // Small phase: integrate each monomial by series to avoid cancellation.
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, ck) in c.iter().enumerate() {
            let mut term = Complex64::new(0.0, 0.0);
            let mut coef = Complex64::new(1.0, 0.0);
            for m in 0..60 {
                let e = (k + m + 1) as i32;
                term += coef * l.powi(e) / e as f64;
                coef *= Complex64::new(0.0, w) / (m + 1) as f64;
                if coef.norm() * l.powi(e + 1) < 1e-18 * (1.0 + term.norm()) {
                    break;
                }
            }
            acc += ck * term;
        }
        return acc * Complex64::from_polar(1.0, w * a);
    }
    // I_k = ∫₀ˡ u^k e^{iωu} du by the integration-by-parts recurrence.
    let iw = Complex64::new(0.0, w);
    let el = Complex64::from_polar(1.0, w * l);
    let mut ik = (el - 1.0) / iw;
    let mut acc = c.first().copied().unwrap_or(0.0) * ik;
    for (k, ck) in c.iter().enumerate().skip(1) {
        ik = (l.powi(k as i32) * el - k as f64 * ik) / iw;
        acc += ck * ik;
    }
    acc * Complex64::from_polar(1.0, w * a)
}

/// `∫_a^b |f|` for smooth `f`, splitting at sign changes.
fn abs_integral_smooth<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let m = 256;
    let mut cuts = vec![a];
    let mut prev = f(a);
    for j in 1..=m {
        let x = a + (b - a) * j as f64 / m as f64;
        let v = f(x);
        if prev != 0.0 && v != 0.0 && prev.signum() != v.signum() {
            let x0 = a + (b - a) * (j - 1) as f64 / m as f64;
            cuts.push(find_root(&f, x0, x, 1e-15 * (1.0 + x.abs())));
        }
        prev = v;
    }
    cuts.push(b);
    let scale = (b - a) * (1.0 + f(0.5 * (a + b)).abs());
    cuts.windows(2).map(|w| integrate_adaptive(&mut |x| f(x).abs(), w[0], w[1], 1e-14 * scale).abs()).sum()
}

/// Norms and explicit constants of the pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedConstants {
    /// `∫₀¹|p|`
    pub p_norm1: f64,
    /// `∫₀ᵗ|p|`
    pub p_norm_t: f64,
    /// `∫₀ᵗ|q|`
    pub q_norm_t: f64,
    pub c_f: f64,
    pub c_star: f64,
    pub r_p: f64,
    pub r_1: f64,
    /// `exp(2‖p‖_t + ‖q‖_t)`
    pub c_pq: f64,
}

impl DerivedConstants {
    pub fn new(p: &PeriodicPotential, q: &CompactPotential) -> Self {
        let p_norm1 = p.abs_integral(1.0);
        let p_norm_t = p.abs_integral(q.t());
        let q_norm_t = q.norm();
        let expo = (p_norm1 + q_norm_t + 2.0 * p_norm_t).exp();
        let c_star = q_norm_t * expo;
        Self {
            p_norm1,
            p_norm_t,
            q_norm_t,
            c_f: 12.0 * c_star,
            c_star,
            r_p: 8.0 * p_norm1.exp(),
            r_1: 11.0 * c_star,
            c_pq: (2.0 * p_norm_t + q_norm_t).exp(),
        }
    }

    /// Gap index beyond which exactly two simple states per gap are guaranteed.
    pub fn far_gap_threshold(&self, t: f64) -> f64 {
        1.0 + (t * PI / 2.0).exp() * self.c_f / PI
    }
}

/// The pair (p, q) together with its constants.
#[derive(Debug, Clone)]
pub struct PotentialPair {
    pub p: PeriodicPotential,
    pub q: CompactPotential,
    pub constants: DerivedConstants,
}

impl PotentialPair {
    pub fn new(p: PeriodicPotential, q: CompactPotential) -> Self {
        let constants = DerivedConstants::new(&p, &q);
        Self { p, q, constants }
    }

    pub fn t(&self) -> f64 {
        self.q.t()
    }

    /// `q₀` with the sub-tolerance value snapped to zero.
    pub fn q0(&self) -> f64 {
        let q0 = self.q.mean();
        if q0.abs() < 1e-12 * self.constants.q_norm_t {
            0.0
        } else {
            q0
        }
    }

    pub fn with_q(&self, q: CompactPotential) -> Self {
        Self::new(self.p.clone(), q)
    }

    pub fn with_p(&self, p: PeriodicPotential) -> Self {
        Self::new(p, self.q.clone())
    }

    /// Total potential `p + q` at x.
    pub fn eval(&self, x: f64) -> f64 {
        self.p.eval(x) + self.q.eval(x)
    }
}

/// `(q̂_cn, q̂_sn)`; for n = 0 returns `(q₀, 0)`.
pub fn fourier_q(q: &CompactPotential, n: usize) -> (f64, f64) {
    q.fourier_cs(n)
}

/// `pₙ = p_cn − i p_sn`.
pub fn fourier_p(p: &PeriodicPotential, n: usize) -> Complex64 {
    let (c, s) = p.fourier_cs(n);
    Complex64::new(c, -s)
}

/// Modulus and phase `τₙ` of `q̂ₙ = q̂_cn + i q̂_sn`.
pub fn qhat_polar(q: &CompactPotential, n: usize) -> (f64, f64) {
    let (c, s) = q.fourier_cs(n);
    (c.hypot(s), s.atan2(c))
}

#[derive(Deserialize)]
struct SpecFile {
    periodic: Value,
    compact: Value,
}

fn num(v: &Value, what: &str) -> Result<f64> {
    match v {
        Value::Number(n) => n.as_f64().ok_or_else(|| HillError::Parse(format!("{what}: bad number"))),
        Value::Object(_) | Value::Array(_) => {
            Err(HillError::Validation(format!("{what}: complex or structured values are not allowed")))
        }
        Value::String(s) if s.contains('i') || s.contains('j') => {
            Err(HillError::Validation(format!("{what}: complex values are not allowed")))
        }
        _ => Err(HillError::Parse(format!("{what}: expected a number"))),
    }
}

fn num_array(v: Option<&Value>, what: &str) -> Result<Vec<f64>> {
    match v {
        None => Ok(vec![]),
        Some(Value::Array(a)) => a.iter().map(|x| num(x, what)).collect(),
        Some(_) => Err(HillError::Parse(format!("{what}: expected an array"))),
    }
}

fn field<'a>(v: &'a Value, key: &str, ctx: &str) -> Result<&'a Value> {
    v.get(key).ok_or_else(|| HillError::Parse(format!("{ctx}: missing field '{key}'")))
}

/// Parses a potential description from JSON text.
pub fn parse_potential_spec(text: &str) -> Result<PotentialPair> {
    let spec: SpecFile = serde_json::from_str(text).map_err(|e| HillError::Parse(e.to_string()))?;
    let p = match field(&spec.periodic, "type", "periodic")?.as_str() {
        Some("fourier") => {
            let c0 = spec.periodic.get("c0").map(|v| num(v, "c0")).transpose()?.unwrap_or(0.0);
            PeriodicPotential::fourier(
                c0,
                num_array(spec.periodic.get("cos"), "cos")?,
                num_array(spec.periodic.get("sin"), "sin")?,
            )
        }
        Some("samples") => {
            PeriodicPotential::samples(&num_array(Some(field(&spec.periodic, "values", "periodic")?), "values")?)?
        }
        _ => return Err(HillError::Parse("periodic.type must be 'fourier' or 'samples'".into())),
    };
    let t = num(field(&spec.compact, "t", "compact")?, "t")?;
    let q = match field(&spec.compact, "type", "compact")?.as_str() {
        Some("pieces") => {
            let arr = field(&spec.compact, "pieces", "compact")?
                .as_array()
                .ok_or_else(|| HillError::Parse("compact.pieces must be an array".into()))?;
            if arr.is_empty() {
                return Err(HillError::Validation("compact support is empty".into()));
            }
            let pieces = arr
                .iter()
                .map(|pc| {
                    Ok(Piece {
                        a: num(field(pc, "a", "piece")?, "a")?,
                        b: num(field(pc, "b", "piece")?, "b")?,
                        coeffs: num_array(Some(field(pc, "coeffs", "piece")?), "coeffs")?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            CompactPotential::pieces(t, pieces)?
        }
        Some("samples") => CompactPotential::samples(t, &num_array(Some(field(&spec.compact, "values", "compact")?), "values")?)?,
        _ => return Err(HillError::Parse("compact.type must be 'pieces' or 'samples'".into())),
    };
    Ok(PotentialPair::new(p, q))
}

/// Reads and validates a potential spec file.
pub fn load_potential_spec(path: &Path) -> Result<PotentialPair> {
    let text = std::fs::read_to_string(path).map_err(|e| HillError::Parse(format!("{}: {e}", path.display())))?;
    parse_potential_spec(&text)
}

/// Box of height `h` on `[a, b]` with support hull `[0, t]`.
pub fn box_potential(h: f64, a: f64, b: f64, t: f64) -> Result<CompactPotential> {
    CompactPotential::pieces(t, vec![Piece { a, b, coeffs: vec![h] }])
}

/// Step potential: `h1` on `[0, s)`, `h2` on `[s, t]`.
pub fn step_potential(h1: f64, h2: f64, s: f64, t: f64) -> Result<CompactPotential> {
    CompactPotential::pieces(t, vec![Piece { a: 0.0, b: s, coeffs: vec![h1] }, Piece { a: s, b: t, coeffs: vec![h2] }])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::integrate_adaptive;

    fn cos_p() -> PeriodicPotential {
        PeriodicPotential::fourier(0.0, vec![2.0], vec![])
    }

    #[test]
    fn zero_pair_has_zero_norms() {
        let pair = parse_potential_spec(
            r#"{"periodic":{"type":"fourier","c0":0,"cos":[],"sin":[]},
                "compact":{"type":"pieces","t":1,"pieces":[{"a":0,"b":1,"coeffs":[0]}]}}"#,
        )
        .unwrap();
        let c = pair.constants;
        assert_eq!((c.p_norm1, c.p_norm_t, c.q_norm_t, c.c_f, c.c_star), (0.0, 0.0, 0.0, 0.0, 0.0));
        assert_eq!(pair.t(), 1.0);
    }

    #[test]
    fn cos_norm_matches_independent_quadrature() {
        // Oracle: fine composite midpoint rule on |2cos 2πx|.
        let n = 200_000;
        let oracle: f64 = (0..n)
            .map(|j| (2.0 * (TWO_PI * (j as f64 + 0.5) / n as f64).cos()).abs() / n as f64)
            .sum();
        let pair = PotentialPair::new(cos_p(), box_potential(1.0, 0.0, 1.0, 1.0).unwrap());
        assert!((pair.constants.p_norm1 - oracle).abs() < 1e-9);
        assert!((pair.constants.p_norm1 - 4.0 / PI).abs() < 1e-12);
        assert!((pair.constants.q_norm_t - 1.0).abs() < 1e-14);
    }

    #[test]
    fn negative_t_is_rejected() {
        let e = parse_potential_spec(
            r#"{"periodic":{"type":"fourier","c0":0},"compact":{"type":"pieces","t":-1,"pieces":[{"a":0,"b":1,"coeffs":[1]}]}}"#,
        )
        .unwrap_err();
        assert!(matches!(e, HillError::Validation(_)));
    }

    #[test]
    fn malformed_and_complex_inputs() {
        assert!(matches!(parse_potential_spec("{not json").unwrap_err(), HillError::Parse(_)));
        let e = parse_potential_spec(
            r#"{"periodic":{"type":"fourier","c0":0,"cos":[[1,2]]},"compact":{"type":"pieces","t":1,"pieces":[{"a":0,"b":1,"coeffs":[1]}]}}"#,
        )
        .unwrap_err();
        assert!(matches!(e, HillError::Validation(_)));
        let e = parse_potential_spec(
            r#"{"periodic":{"type":"fourier"},"compact":{"type":"pieces","t":1,"pieces":[]}}"#,
        )
        .unwrap_err();
        assert!(matches!(e, HillError::Validation(_)));
        // Hull strictly inside [0, t].
        let e = box_potential(1.0, 0.2, 1.0, 1.0).unwrap_err();
        assert!(matches!(e, HillError::Validation(_)));
    }

    #[test]
    fn box_fourier_coefficients() {
        let q = box_potential(1.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(fourier_q(&q, 0), (1.0, 0.0));
        for n in 1..6 {
            let (c, s) = fourier_q(&q, n);
            assert!(c.abs() < 1e-14 && s.abs() < 1e-14);
        }
        let half = box_potential(1.0, 0.0, 0.5, 0.5).unwrap();
        let (c, s) = fourier_q(&half, 1);
        // Oracle: adaptive Gauss–Legendre on the sine integrand.
        let s_quad = integrate_adaptive(&mut |x: f64| (TWO_PI * x).sin(), 0.0, 0.5, 1e-15);
        assert!(c.abs() < 1e-15);
        assert!((s - 1.0 / PI).abs() < 1e-15 && (s - s_quad).abs() < 1e-14);
    }

    #[test]
    fn polynomial_fourier_matches_quadrature() {
        let q = CompactPotential::pieces(
            2.0,
            vec![
                Piece { a: 0.0, b: 0.7, coeffs: vec![1.0, -2.0, 3.0, 0.5] },
                Piece { a: 0.7, b: 2.0, coeffs: vec![-1.5, 0.25] },
            ],
        )
        .unwrap();
        for n in [0usize, 1, 2, 5, 17] {
            let w = TWO_PI * n as f64;
            let (c, s) = q.fourier_cs(n);
            let mut oc = 0.0;
            let mut os = 0.0;
            for p in q.pieces_ref() {
                oc += integrate_adaptive(&mut |x: f64| p.eval(x) * (w * x).cos(), p.a, p.b, 1e-15);
                os += integrate_adaptive(&mut |x: f64| p.eval(x) * (w * x).sin(), p.a, p.b, 1e-15);
            }
            assert!((c - oc).abs() < 1e-12, "n={n}: {c} vs {oc}");
            assert!((s - os).abs() < 1e-12, "n={n}: {s} vs {os}");
        }
    }

    #[test]
    fn fourier_p_examples() {
        assert_eq!(fourier_p(&PeriodicPotential::zero(), 3), Complex64::new(0.0, 0.0));
        assert_eq!(fourier_p(&cos_p(), 1), Complex64::new(1.0, 0.0));
        assert_eq!(fourier_p(&cos_p(), 2), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn sampled_periodic_is_periodic_and_consistent() {
        let vals: Vec<f64> = (0..64).map(|j| (TWO_PI * j as f64 / 64.0).cos() * 2.0 + 0.3).collect();
        let p = PeriodicPotential::samples(&vals).unwrap();
        for x in [0.0, 0.13, 0.5, 0.999] {
            assert!((p.eval(x) - p.eval(x + 1.0)).abs() < 1e-13);
        }
        assert!((p.mean() - 0.3).abs() < 1e-12);
        // Parseval-type bound.
        let l2 = integrate_adaptive(&mut |x: f64| p.eval(x).powi(2), 0.0, 1.0, 1e-13);
        let mut s = p.mean().powi(2);
        for n in 1..32 {
            s += 2.0 * fourier_p(&p, n).norm_sqr();
        }
        assert!(s <= l2 + 1e-10);
    }

    #[test]
    fn collinear_samples_are_merged() {
        let vals = [1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0];
        let p = PeriodicPotential::samples(&vals).unwrap();
        assert_eq!(p.breakpoints(0.0, 1.0).len(), 3);
        assert!((p.eval(0.2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn reflection_preserves_mean_and_values() {
        let q = CompactPotential::pieces(1.0, vec![Piece { a: 0.0, b: 1.0, coeffs: vec![1.0, 2.0, -3.0] }]).unwrap();
        let r = q.reflected();
        for x in [0.1, 0.4, 0.77] {
            assert!((r.eval(x) - q.eval(1.0 - x)).abs() < 1e-13);
        }
        assert!((r.mean() - q.mean()).abs() < 1e-14);
    }

    #[test]
    fn constants_follow_definitions() {
        let pair = PotentialPair::new(cos_p(), box_potential(2.0, 0.0, 1.5, 1.5).unwrap());
        let c = pair.constants;
        let e = (c.p_norm1 + c.q_norm_t + 2.0 * c.p_norm_t).exp();
        assert!((c.c_f - 12.0 * c.q_norm_t * e).abs() < 1e-9 * c.c_f);
        assert!((c.r_1 - 11.0 * c.c_star).abs() < 1e-9 * c.r_1);
        assert!((c.r_p - 8.0 * c.p_norm1.exp()).abs() < 1e-12);
        assert!((c.p_norm_t - 1.5 * 4.0 / PI).abs() < 1e-11);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn phase_reconstructs_coefficients(h in -5.0f64..5.0, s in 0.05f64..0.95, n in 1usize..40) {
                let q = step_potential(h, -h * 0.5, s, 1.0).unwrap();
                let (c, sn) = q.fourier_cs(n);
                let (m, tau) = qhat_polar(&q, n);
                prop_assert!((m * tau.cos() - c).abs() < 1e-12);
                prop_assert!((m * tau.sin() - sn).abs() < 1e-12);
            }

            #[test]
            fn c_f_grows_with_q(h in 0.1f64..3.0, k in 1.01f64..3.0) {
                let p = cos_p();
                let a = DerivedConstants::new(&p, &box_potential(h, 0.0, 1.0, 1.0).unwrap());
                let b = DerivedConstants::new(&p, &box_potential(h * k, 0.0, 1.0, 1.0).unwrap());
                prop_assert!(b.c_f > a.c_f);
                prop_assert!(b.c_star >= a.c_star && b.r_1 >= a.r_1);
            }

            #[test]
            fn fourier_eval_is_periodic(c0 in -2.0f64..2.0, a in -3.0f64..3.0, b in -3.0f64..3.0, x in -3.0f64..3.0) {
                let p = PeriodicPotential::fourier(c0, vec![a, 0.5], vec![b]);
                prop_assert!((p.eval(x) - p.eval(x + 1.0)).abs() < 1e-12);
            }
        }
    }
}
