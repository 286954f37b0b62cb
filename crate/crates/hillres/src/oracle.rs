//! Brute-force references built on different numerics than the ODE pipeline:
//! finite-difference eigenvalues, closed-form square-well scattering and a
//! trigonometric-basis band solver.

use crate::error::{HillError, Result};
use crate::potential::{CompactPotential, PeriodicPotential, PotentialPair};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

/// Truncated problem on `[−L, t + L]` with Dirichlet ends.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TruncatedProblem {
    /// Whole periods added on each side (≥ 10).
    pub periods: usize,
    /// Grid points per unit length at the coarsest level (≥ 200).
    pub points_per_unit: usize,
}

impl Default for TruncatedProblem {
    fn default() -> Self {
        Self { periods: 10, points_per_unit: 200 }
    }
}

/// Extrapolated eigenvalue with its error estimate.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OracleEigen {
    pub lambda: f64,
    pub error: f64,
}

struct Tridiag {
    diag: Vec<f64>,
    off: f64,
}

impl Tridiag {
    /// Number of eigenvalues below `lam` (Sturm count on the LDLᵀ pivots).
    fn count_below(&self, lam: f64) -> usize {
        let b2 = self.off * self.off;
        let mut d = 1.0;
        let mut neg = 0;
        for (i, a) in self.diag.iter().enumerate() {
            d = if i == 0 { a - lam } else { a - lam - b2 / d };
            if d == 0.0 {
                d = -1e-300;
            }
            if d < 0.0 {
                neg += 1;
            }
        }
        neg
    }

    fn eigenvalues_in(&self, lo: f64, hi: f64) -> Vec<f64> {
        let (k0, k1) = (self.count_below(lo), self.count_below(hi));
        (k0..k1)
            .map(|k| {
                let (mut a, mut b) = (lo, hi);
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    if m == a || m == b || b - a <= 1e-15 * (1.0 + m.abs()) {
                        break;
                    }
                    if self.count_below(m) > k {
                        b = m;
                    } else {
                        a = m;
                    }
                }
                0.5 * (a + b)
            })
            .collect()
    }
}

fn cell_average(p: &PeriodicPotential, q: Option<&CompactPotential>, a: f64, b: f64) -> f64 {
    let mut pts = vec![a];
    pts.extend(p.breakpoints(a, b));
    if let Some(q) = q {
        pts.extend(q.breakpoints(a, b));
        for e in [0.0, q.t()] {
            if e > a && e < b {
                pts.push(e);
            }
        }
    }
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    let g = 0.5 / 3f64.sqrt();
    let mut s = 0.0;
    for w in pts.windows(2) {
        let (u, v) = (w[0], w[1]);
        if v <= u {
            continue;
        }
        let (c, h) = (0.5 * (u + v), v - u);
        let f = |x: f64| p.eval(x) + q.map_or(0.0, |q| q.eval(x));
        s += 0.5 * h * (f(c - g * h) + f(c + g * h));
    }
    s / (b - a)
}

/// Grid spacing `h` divides `t`; nodes at `i·h`, Dirichlet at `−Mh` and `t + Mh`.
fn fd_matrix(pair: &PotentialPair, with_q: bool, periods: usize, per_unit: usize) -> Tridiag {
    let t = pair.t();
    let nt = (t * per_unit as f64).round().max(1.0) as i64;
    let h = t / nt as f64;
    let m = (periods as f64 / h).round() as i64;
    let q = if with_q { Some(&pair.q) } else { None };
    let diag: Vec<f64> = (-m + 1..nt + m)
        .into_par_iter()
        .map(|i| {
            let x = i as f64 * h;
            2.0 / (h * h) + cell_average(&pair.p, q, x - 0.5 * h, x + 0.5 * h)
        })
        .collect();
    Tridiag { diag, off: -1.0 / (h * h) }
}

fn fd_eigs(pair: &PotentialPair, periods: usize, per_unit: usize, lo: f64, hi: f64) -> Vec<f64> {
    let main = fd_matrix(pair, true, periods, per_unit).eigenvalues_in(lo, hi);
    let reference = fd_matrix(pair, false, periods, per_unit).eigenvalues_in(lo, hi);
    // Boundary states of the truncation show up in both runs.
    main.into_iter().filter(|l| !reference.iter().any(|r| (l - r).abs() < 1e-7 * (1.0 + l.abs()))).collect()
}

fn richardson(levels: &[Vec<f64>]) -> Option<Vec<OracleEigen>> {
    let n = levels[0].len();
    if levels.iter().any(|l| l.len() != n) {
        return None;
    }
    Some(
        (0..n)
            .map(|k| {
                let (a, b, c) = (levels[0][k], levels[1][k], levels[2][k]);
                let r1 = (4.0 * b - a) / 3.0;
                let r2 = (4.0 * c - b) / 3.0;
                let r = (16.0 * r2 - r1) / 15.0;
                OracleEigen { lambda: r, error: (r - r2).abs().max(1e-14 * (1.0 + r.abs())) }
            })
            .collect(),
    )
}

fn extrapolated(pair: &PotentialPair, periods: usize, per_unit: usize, lo: f64, hi: f64) -> Result<Vec<OracleEigen>> {
    // Narrow pad: gap windows must not reach into the band continuum.
    let pad = 1e-3 * (hi - lo);
    let levels: Vec<Vec<f64>> =
        [1, 2, 4].iter().map(|k| fd_eigs(pair, periods, per_unit * k, lo - pad, hi + pad)).collect();
    let ex = richardson(&levels).ok_or_else(|| {
        HillError::ConvergenceFailure(format!(
            "eigenvalue count changes with the grid: {:?}",
            levels.iter().map(|l| l.len()).collect::<Vec<_>>()
        ))
    })?;
    Ok(ex.into_iter().filter(|e| e.lambda > lo && e.lambda < hi).collect())
}

/// Eigenvalues of `−d² + p + q` in `(lo, hi)` from a Dirichlet-truncated finite-difference
/// model, extrapolated in the grid and certified by doubling the truncation length.
pub fn truncated_eigensolver(
    pair: &PotentialPair,
    window: (f64, f64),
    problem: TruncatedProblem,
    tol: f64,
) -> Result<Vec<OracleEigen>> {
    if problem.periods < 10 || problem.points_per_unit < 200 {
        return Err(HillError::Validation("truncated problem needs L ≥ 10 periods and N ≥ 200 points per period".into()));
    }
    let (lo, hi) = window;
    let a = extrapolated(pair, problem.periods, problem.points_per_unit, lo, hi)?;
    let b = extrapolated(pair, 2 * problem.periods, problem.points_per_unit, lo, hi)?;
    if a.len() != b.len() {
        return Err(HillError::ConvergenceFailure(format!(
            "eigenvalue count changes with the truncation length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let mut out = Vec::with_capacity(b.len());
    for (x, y) in a.iter().zip(&b) {
        let moved = (x.lambda - y.lambda).abs();
        if moved > tol * (1.0 + y.lambda.abs()) {
            return Err(HillError::ConvergenceFailure(format!(
                "eigenvalue {} moved by {moved:e} under truncation doubling",
                y.lambda
            )));
        }
        out.push(OracleEigen { lambda: y.lambda, error: y.error.max(moved) });
    }
    Ok(out)
}

fn sinc_over(kap: C, l: f64) -> C {
    // sin(κl)/κ
    let u = kap * l;
    if u.norm() < 1e-4 {
        let u2 = u * u;
        l * (1.0 - u2 / 6.0 + u2 * u2 / 120.0)
    } else {
        u.sin() / kap
    }
}

fn cell_potentials(pair: &PotentialPair, with_q: bool, i0: i64, i1: i64, h: f64) -> Vec<f64> {
    let q = if with_q { Some(&pair.q) } else { None };
    (i0..i1).map(|i| cell_average(&pair.p, q, (i as f64 - 0.5) * h, (i as f64 + 0.5) * h)).collect()
}

/// FD recurrence `ψᵢ₊₁ − 2ψᵢ + ψᵢ₋₁ = h²(Vᵢ − λ)ψᵢ` on `(ψᵢ, ψᵢ − ψᵢ₋₁)`, in increment
/// form with compensated sums so narrow gaps keep their `|D| − 1` digits.
fn chain_march(v: &[f64], h2: f64, lam: f64, s: [f64; 2]) -> [f64; 2] {
    let (mut psi, mut d) = (s[0], s[1]);
    let (mut cpsi, mut cd) = (0.0, 0.0);
    for vi in v {
        let inc = h2 * (vi - lam) * psi - cd;
        let nd = d + inc;
        cd = (nd - d) - inc;
        d = nd;
        let inc = d - cpsi;
        let np = psi + inc;
        cpsi = (np - psi) - inc;
        psi = np;
        let n = psi.abs().max(d.abs());
        if n > 1e100 {
            psi /= n;
            d /= n;
            cpsi /= n;
            cd /= n;
        }
    }
    [psi, d]
}

/// One-period transfer matrix of the unperturbed chain on `(ψᵢ, ψᵢ − ψᵢ₋₁)`.
fn chain_transfer(cell: &[f64], h2: f64, lam: f64) -> [[f64; 2]; 2] {
    let c1 = chain_march(cell, h2, lam, [1.0, 0.0]);
    let c2 = chain_march(cell, h2, lam, [0.0, 1.0]);
    [[c1[0], c2[0]], [c1[1], c2[1]]]
}

/// Eigenvector of a unimodular 2×2 matrix for the multiplier of modulus > 1 (`grow`) or < 1.
fn floquet_vector(m: [[f64; 2]; 2], grow: bool) -> Option<[f64; 2]> {
    let d = 0.5 * (m[0][0] + m[1][1]);
    if d.abs() <= 1.0 {
        return None;
    }
    let big = d + d.signum() * (d * d - 1.0).sqrt();
    let rho = if grow { big } else { 1.0 / big };
    let u = [m[0][1], rho - m[0][0]];
    let w = [rho - m[1][1], m[1][0]];
    let v = if u[0].hypot(u[1]) >= w[0].hypot(w[1]) { u } else { w };
    let n = v[0].hypot(v[1]);
    Some([v[0] / n, v[1] / n])
}

struct Chain {
    h2: f64,
    cell: Vec<f64>,
    body: Vec<f64>,
}

impl Chain {
    fn new(pair: &PotentialPair, per_unit: usize) -> Self {
        let h = 1.0 / per_unit as f64;
        let m = per_unit as i64;
        let end = m * (pair.t().ceil() as i64 + 1);
        Self { h2: h * h, cell: cell_potentials(pair, false, 0, m, h), body: cell_potentials(pair, true, 0, end, h) }
    }

    fn discriminant(&self, lam: f64) -> f64 {
        let t = chain_transfer(&self.cell, self.h2, lam);
        0.5 * (t[0][0] + t[1][1])
    }

    /// Wronskian-type mismatch between the solution decaying on the left, marched
    /// through the perturbation, and the solution decaying on the right.
    fn mismatch(&self, lam: f64) -> Option<f64> {
        let t = chain_transfer(&self.cell, self.h2, lam);
        let left = floquet_vector(t, true)?;
        let right = floquet_vector(t, false)?;
        let s = chain_march(&self.body, self.h2, lam, left);
        Some((s[0] * right[1] - s[1] * right[0]) / s[0].hypot(s[1]))
    }

    /// Gap of the chain nearest `(lo, hi)`; an unbounded-below gap keeps `lo`.
    fn gap_near(&self, lo: f64, hi: f64) -> Option<(f64, f64)> {
        let len = hi - lo;
        let shift = 0.25 * self.h2 * (1.0 + lo.abs().max(hi.abs())).powi(2);
        let (a, b) = (lo - 0.5 * len - shift, hi + 0.5 * len + shift);
        let n = ((16.0 * (b - a) / len).ceil() as usize).max(400);
        let xs: Vec<f64> = (0..=n).map(|k| a + (b - a) * k as f64 / n as f64).collect();
        let inside: Vec<bool> = xs.par_iter().map(|x| self.discriminant(*x).abs() > 1.0).collect();
        let below = self.discriminant(a - 1.0) > 1.0 && inside[0] && lo < 0.0;
        let centre = 0.5 * (lo + hi);
        let mut best: Option<(usize, usize)> = None;
        let mut k = 0;
        while k <= n {
            if inside[k] {
                let s0 = k;
                while k < n && inside[k + 1] {
                    k += 1;
                }
                let dist = |u: usize, v: usize| (0.5 * (xs[u] + xs[v]) - centre).abs();
                let score = if s0 == 0 && below { 0.0 } else { dist(s0, k) };
                if k > s0 && best.is_none_or(|(u, v)| score < if u == 0 && below { 0.0 } else { dist(u, v) }) {
                    best = Some((s0, k));
                }
            }
            k += 1;
        }
        let (s0, s1) = best?;
        if s1 == n || (s0 == 0 && !below) {
            return None;
        }
        let edge = |u: f64, v: f64| {
            let (mut u, mut v) = (u, v);
            for _ in 0..200 {
                let m = 0.5 * (u + v);
                if m == u || m == v {
                    break;
                }
                if self.discriminant(m).abs() > 1.0 {
                    u = m;
                } else {
                    v = m;
                }
            }
            0.5 * (u + v)
        };
        let left = if s0 == 0 { lo } else { edge(xs[s0], xs[s0 - 1]) };
        Some((left, edge(xs[s1], xs[s1 + 1])))
    }

    fn eigenvalues_in_gap(&self, lo: f64, hi: f64, nodes: usize) -> Vec<f64> {
        let (a, b) = (lo, hi);
        let margin = 1e-10 * (b - a);
        let xs: Vec<f64> = (0..=nodes).map(|k| a + margin + (b - a - 2.0 * margin) * k as f64 / nodes as f64).collect();
        let gs: Vec<Option<f64>> = xs.par_iter().map(|x| self.mismatch(*x)).collect();
        let mut out = Vec::new();
        for k in 0..nodes {
            let (Some(g0), Some(g1)) = (gs[k], gs[k + 1]) else { continue };
            if g0 * g1 > 0.0 {
                continue;
            }
            let (mut u, mut v, mut gu) = (xs[k], xs[k + 1], g0);
            for _ in 0..200 {
                let m = 0.5 * (u + v);
                if m == u || m == v {
                    break;
                }
                let gm = self.mismatch(m).unwrap_or(f64::NAN);
                if gm * gu > 0.0 {
                    u = m;
                    gu = gm;
                } else {
                    v = m;
                }
            }
            let r = 0.5 * (u + v);
            // Representation flips of the Floquet vectors jump without vanishing.
            if self.mismatch(r).is_some_and(|g| g.abs() < 1e-6) {
                out.push(r);
            }
        }
        out
    }
}

/// Eigenvalues of `−d² + p + q` inside one spectral gap of `H₀` guessed as `(lo, hi)`
/// (use `lo < 0 = hi` for the region below the spectrum).
///
/// The FD chain is truncated to `[0, t]` plus whole periods and closed with the exact
/// decaying Floquet vectors of the discrete periodic chain, so weakly localised states
/// carry no truncation error. Each grid level counts inside its own discrete gap, and
/// the levels are Richardson-extrapolated.
pub fn chain_gap_eigensolver(pair: &PotentialPair, guess: (f64, f64), points_per_unit: usize, nodes: usize) -> Result<Vec<OracleEigen>> {
    if points_per_unit < 200 {
        return Err(HillError::Validation("chain solver needs N ≥ 200 points per period".into()));
    }
    let levels: Vec<Vec<f64>> = [1usize, 2, 4]
        .par_iter()
        .map(|k| {
            let chain = Chain::new(pair, points_per_unit * k);
            let (a, b) = chain
                .gap_near(guess.0, guess.1)
                .ok_or_else(|| HillError::ConvergenceFailure("no discrete gap near the guess".into()))?;
            Ok(chain.eigenvalues_in_gap(a, b, nodes))
        })
        .collect::<Result<_>>()?;
    richardson(&levels).ok_or_else(|| {
        HillError::ConvergenceFailure(format!(
            "eigenvalue count changes with the grid: {:?}",
            levels.iter().map(|l| l.len()).collect::<Vec<_>>()
        ))
    })
}

/// Closed-form `(a, b)` for `p = 0` and `q = height` on `[0, width]`.
pub fn squarewell_reference(z: C, height: f64, width: f64) -> (C, C) {
    let kap2 = z * z - height;
    let kap = kap2.sqrt();
    let e = (C::i() * z * width).exp();
    let s = sinc_over(kap, width);
    let a = e * ((kap * width).cos() - C::i() * (kap2 + z * z) * s / (2.0 * z));
    let b = e * height * s / (2.0 * C::i() * z);
    (a, b)
}

/// `a(z)·e^{−izL}`, entire in `z` away from 0.
fn well_g(z: C, height: f64, width: f64) -> C {
    let kap2 = z * z - height;
    let kap = kap2.sqrt();
    (kap * width).cos() - C::i() * (kap2 + z * z) * sinc_over(kap, width) / (2.0 * z)
}

fn newton_well(mut z: C, height: f64, width: f64) -> Option<C> {
    for _ in 0..100 {
        let g = well_g(z, height, width);
        let h = 1e-6 * (1.0 + z.norm());
        let dg = (well_g(z + h, height, width) - well_g(z - h, height, width)) / (2.0 * h);
        let dz = g / dg;
        z -= dz;
        if !z.is_finite() {
            return None;
        }
        if dz.norm() < 1e-15 * (1.0 + z.norm()) {
            return Some(z);
        }
    }
    Some(z).filter(|z| well_g(*z, height, width).norm() < 1e-10)
}

/// The first `count` zeros of `a` in `Re z > 0, Im z < 0` off the imaginary axis,
/// from the large-momentum condition `e^{iκL} = ±(z + κ)²/h` continued by Newton.
pub fn squarewell_resonances(height: f64, width: f64, count: usize) -> Vec<C> {
    let mut out: Vec<C> = Vec::new();
    for m in 1..=count + 8 {
        if out.len() >= count {
            break;
        }
        let mut kap = C::new(PI * m as f64 / width, 0.0);
        let mut z = (kap * kap + height).sqrt();
        for _ in 0..60 {
            let w = (z + kap) * (z + kap) / height;
            kap = (C::new(PI * m as f64, 0.0) - C::i() * w.ln()) / width;
            z = (kap * kap + height).sqrt();
            if z.im > 0.0 {
                z = z.conj();
            }
        }
        if let Some(r) = newton_well(z, height, width) {
            if r.im < -1e-9 && r.re > 1e-9 && !out.iter().any(|o| (o - r).norm() < 1e-8) {
                out.push(r);
            }
        }
    }
    out.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    out
}

/// Number of zeros of the closed-form `a` inside a rectangle, by the argument principle.
pub fn squarewell_zero_count(height: f64, width: f64, bbox: [f64; 4], nodes: usize) -> f64 {
    let [x0, x1, y0, y1] = bbox;
    let corners = [C::new(x0, y0), C::new(x1, y0), C::new(x1, y1), C::new(x0, y1), C::new(x0, y0)];
    let mut total = 0.0;
    for w in corners.windows(2) {
        let mut prev = well_g(w[0], height, width);
        for j in 1..=nodes {
            let z = w[0] + (w[1] - w[0]) * (j as f64 / nodes as f64);
            let g = well_g(z, height, width);
            total += (g / prev).arg();
            prev = g;
        }
    }
    total / (2.0 * PI)
}

/// Band data from the trigonometric-basis solver, energies and momenta.
#[derive(Debug, Clone, Serialize)]
pub struct FourierBands {
    /// `(Eₙ⁻, Eₙ⁺)` for `n = 1..=n_max`.
    pub edges: Vec<(f64, f64)>,
    pub e0_plus: f64,
    /// `μₙ²`.
    pub dirichlet: Vec<f64>,
    /// `νₙ²`, `n = 0..=n_max`.
    pub neumann: Vec<f64>,
    /// Largest change under doubling of the basis.
    pub certificate: f64,
}

#[derive(Clone, Copy)]
struct Trig {
    sin: bool,
    n: i64,
    c: f64,
}

fn trig_integral(t: Trig) -> f64 {
    if t.sin {
        if t.n % 2 != 0 {
            t.c * 2.0 / (PI * t.n as f64)
        } else {
            0.0
        }
    } else if t.n == 0 {
        t.c
    } else {
        0.0
    }
}

fn trig_mul(a: Trig, b: Trig) -> [Trig; 2] {
    let c = 0.5 * a.c * b.c;
    match (a.sin, b.sin) {
        (false, false) => [Trig { sin: false, n: a.n - b.n, c }, Trig { sin: false, n: a.n + b.n, c }],
        (true, true) => [Trig { sin: false, n: a.n - b.n, c }, Trig { sin: false, n: a.n + b.n, c: -c }],
        (true, false) => [Trig { sin: true, n: a.n + b.n, c }, Trig { sin: true, n: a.n - b.n, c }],
        (false, true) => [Trig { sin: true, n: a.n + b.n, c }, Trig { sin: true, n: b.n - a.n, c }],
    }
}

fn trig_triple(a: Trig, b: Trig, c: Trig) -> f64 {
    trig_mul(a, b).iter().flat_map(|ab| trig_mul(*ab, c)).map(trig_integral).sum()
}

fn basis_eigs(p_terms: &[Trig], basis: &[Trig]) -> Vec<f64> {
    let n = basis.len();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for k in i..n {
            let v: f64 = p_terms.iter().map(|pt| trig_triple(*pt, basis[i], basis[k])).sum();
            m[(i, k)] = v;
            m[(k, i)] = v;
        }
        m[(i, i)] += (PI * basis[i].n as f64).powi(2);
    }
    let mut e: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}

fn fourier_bands_at(p_terms: &[Trig], n_max: usize, size: usize) -> FourierBands {
    let r2 = 2f64.sqrt();
    let mut per = vec![Trig { sin: false, n: 0, c: 1.0 }];
    let mut anti = Vec::new();
    let mut dir = Vec::new();
    let mut neu = vec![Trig { sin: false, n: 0, c: 1.0 }];
    for j in 1..=size as i64 {
        per.push(Trig { sin: false, n: 2 * j, c: r2 });
        per.push(Trig { sin: true, n: 2 * j, c: r2 });
        anti.push(Trig { sin: false, n: 2 * j - 1, c: r2 });
        anti.push(Trig { sin: true, n: 2 * j - 1, c: r2 });
    }
    for j in 1..=(2 * size) as i64 {
        dir.push(Trig { sin: true, n: j, c: r2 });
        neu.push(Trig { sin: false, n: j, c: r2 });
    }
    let (ep, ea, ed, en) =
        (basis_eigs(p_terms, &per), basis_eigs(p_terms, &anti), basis_eigs(p_terms, &dir), basis_eigs(p_terms, &neu));
    let edges = (1..=n_max).map(|n| if n % 2 == 0 { (ep[n - 1], ep[n]) } else { (ea[n - 1], ea[n]) }).collect();
    FourierBands {
        edges,
        e0_plus: ep[0],
        dirichlet: ed[..n_max].to_vec(),
        neumann: en[..=n_max].to_vec(),
        certificate: 0.0,
    }
}

/// Periodic, antiperiodic, Dirichlet and Neumann eigenvalues from truncated
/// trigonometric bases of size `≥ 4·n_max`, certified against a doubled basis.
pub fn fourier_band_solver(p: &PeriodicPotential, n_max: usize, tol: f64) -> Result<FourierBands> {
    let (c0, cos, sin) = p
        .fourier_terms()
        .ok_or_else(|| HillError::Validation("the Fourier band solver needs a Fourier-series potential".into()))?;
    if n_max == 0 {
        return Err(HillError::Validation("n_max must be at least 1".into()));
    }
    let mut terms = vec![Trig { sin: false, n: 0, c: c0 }];
    for (k, a) in cos.iter().enumerate() {
        terms.push(Trig { sin: false, n: 2 * (k as i64 + 1), c: *a });
    }
    for (k, b) in sin.iter().enumerate() {
        terms.push(Trig { sin: true, n: 2 * (k as i64 + 1), c: *b });
    }
    terms.retain(|t| t.c != 0.0);
    let size = (4 * n_max).max(8) + 2 * cos.len().max(sin.len());
    let a = fourier_bands_at(&terms, n_max, size);
    let mut b = fourier_bands_at(&terms, n_max, 2 * size);
    let diff = |x: f64, y: f64| (x - y).abs() / (1.0 + y.abs());
    let mut cert = diff(a.e0_plus, b.e0_plus);
    for (x, y) in a.edges.iter().zip(&b.edges) {
        cert = cert.max(diff(x.0, y.0)).max(diff(x.1, y.1));
    }
    for (x, y) in a.dirichlet.iter().zip(&b.dirichlet).chain(a.neumann.iter().zip(&b.neumann)) {
        cert = cert.max(diff(*x, *y));
    }
    if cert > tol {
        return Err(HillError::ConvergenceFailure(format!("basis doubling moved eigenvalues by {cert:e}")));
    }
    b.certificate = cert;
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::box_potential;

    #[test]
    fn free_fourier_bands() {
        let b = fourier_band_solver(&PeriodicPotential::zero(), 5, 1e-10).unwrap();
        for (n, (lo, hi)) in b.edges.iter().enumerate() {
            let e = (PI * (n + 1) as f64).powi(2);
            assert!((lo - e).abs() < 1e-9 && (hi - e).abs() < 1e-9);
        }
        assert!(b.e0_plus.abs() < 1e-12);
    }

    #[test]
    fn mathieu_first_gap_is_certified() {
        let p = PeriodicPotential::fourier(0.0, vec![2.0], vec![]);
        let b = fourier_band_solver(&p, 4, 1e-8).unwrap();
        let (lo, hi) = b.edges[0];
        assert!(hi - lo > 0.5);
        assert!(b.dirichlet[0] >= lo - 1e-9 && b.dirichlet[0] <= hi + 1e-9);
    }

    #[test]
    fn squarewell_flux_and_trivial_limit() {
        let (a, b) = squarewell_reference(C::new(2.3, 0.0), 0.0, 1.0);
        assert!((a - 1.0).norm() < 1e-14 && b.norm() < 1e-14);
        for z in [0.3, 1.7, 5.2, 11.0] {
            let (a, b) = squarewell_reference(C::new(z, 0.0), 1.0, 1.0);
            assert!((a.norm_sqr() - b.norm_sqr() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn squarewell_resonances_are_roots() {
        let r = squarewell_resonances(1.0, 1.0, 12);
        assert_eq!(r.len(), 12);
        for z in &r {
            assert!(squarewell_reference(*z, 1.0, 1.0).0.norm() < 1e-9);
        }
    }

    #[test]
    fn finite_well_bound_states() {
        // Depth 25 on a unit interval: z₀ = 5/2·... the even/odd transcendental equations.
        let pair = PotentialPair::new(PeriodicPotential::zero(), box_potential(-25.0, 0.0, 1.0, 1.0).unwrap());
        let ev = truncated_eigensolver(&pair, (-25.0, -1e-3), TruncatedProblem::default(), 1e-8).unwrap();
        assert_eq!(ev.len(), 2);
        for e in &ev {
            let kap = (-e.lambda).sqrt();
            let k = (25.0 + e.lambda).sqrt();
            // Matching at the well edges: tan(k) = 2kκ/(k² − κ²).
            let res = (k).tan() * (k * k - kap * kap) - 2.0 * k * kap;
            assert!(res.abs() < 1e-5, "λ={} res={res}", e.lambda);
        }
    }

    #[test]
    fn no_eigenvalues_without_q() {
        let p = PeriodicPotential::fourier(0.0, vec![2.0], vec![]);
        let pair = PotentialPair::new(p, CompactPotential::zero(1.0).unwrap());
        let b = fourier_band_solver(&pair.p, 2, 1e-9).unwrap();
        let (lo, hi) = b.edges[0];
        let ev = truncated_eigensolver(&pair, (lo + 1e-3, hi - 1e-3), TruncatedProblem::default(), 1e-7).unwrap();
        assert!(ev.is_empty());
    }

    #[test]
    fn chain_solver_matches_finite_well() {
        let pair = PotentialPair::new(PeriodicPotential::zero(), box_potential(-25.0, 0.0, 1.0, 1.0).unwrap());
        let ev = chain_gap_eigensolver(&pair, (-30.0, 0.0), 200, 1000).unwrap();
        assert_eq!(ev.len(), 2);
        for e in &ev {
            let kap = (-e.lambda).sqrt();
            let k = (25.0 + e.lambda).sqrt();
            assert!((k.tan() * (k * k - kap * kap) - 2.0 * k * kap).abs() < 1e-7, "λ={}", e.lambda);
        }
    }

    #[test]
    fn chain_solver_agrees_with_dirichlet_truncation() {
        let p = PeriodicPotential::fourier(0.0, vec![2.0], vec![]);
        let pair = PotentialPair::new(p, box_potential(-25.0, 0.0, 1.0, 1.0).unwrap());
        let b = fourier_band_solver(&pair.p, 2, 1e-9).unwrap();
        let chain = chain_gap_eigensolver(&pair, (-40.0, b.e0_plus), 200, 1000).unwrap();
        let trunc = truncated_eigensolver(&pair, (-40.0, b.e0_plus - 1e-2), TruncatedProblem::default(), 1e-8).unwrap();
        assert_eq!(chain.len(), trunc.len());
        for (c, t) in chain.iter().zip(&trunc) {
            assert!((c.lambda - t.lambda).abs() < 1e-8 * (1.0 + t.lambda.abs()));
        }
        let (lo, hi) = b.edges[0];
        assert!(chain_gap_eigensolver(&pair.with_q(CompactPotential::zero(1.0).unwrap()), (lo, hi), 200, 1000).unwrap().is_empty());
    }
}
