//! Periodic problem: fundamental solutions, discriminant, band structure,
//! quasimomentum and Floquet solutions.

use crate::error::{HillError, Result};
use crate::ode::{propagate, LocalMedium, Mesh, StepControl};
use crate::potential::{PeriodicPotential, PotentialPair};
use crate::quad::find_root;
use num_complex::Complex64 as C;
use serde::Serialize;
use std::f64::consts::PI;

pub const ZERO: C = C::new(0.0, 0.0);
pub const ONE: C = C::new(1.0, 0.0);
pub const I: C = C::new(0.0, 1.0);

/// Exponential rescaling is switched on above this `|Im z|`.
pub const RESCALE_ABOVE: f64 = 5.0;

pub fn rescale_sigma(z: C) -> f64 {
    if z.im.abs() > RESCALE_ABOVE {
        z.im.abs()
    } else {
        0.0
    }
}

/// `θ, θ′, φ, φ′` at one point.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FundamentalValues {
    pub x: f64,
    pub theta: C,
    pub dtheta: C,
    pub phi: C,
    pub dphi: C,
}

impl FundamentalValues {
    pub fn wronskian(&self) -> C {
        self.theta * self.dphi - self.dtheta * self.phi
    }
}

#[inline]
pub(crate) fn rhs_fund(z2: C) -> impl Fn(f64, &LocalMedium<'_>, &[C; 4]) -> [C; 4] {
    move |x, m, y| {
        let v = C::new(m.p(x), 0.0) - z2;
        [y[1], v * y[0], y[3], v * y[2]]
    }
}

#[inline]
fn rhs_fund_dz(z: C) -> impl Fn(f64, &LocalMedium<'_>, &[C; 8]) -> [C; 8] {
    let z2 = z * z;
    let mz2 = -2.0 * z;
    move |x, m, y| {
        let v = C::new(m.p(x), 0.0) - z2;
        [y[1], v * y[0], y[3], v * y[2], y[5], v * y[4] + mz2 * y[0], y[7], v * y[6] + mz2 * y[2]]
    }
}

/// Fundamental values at `x` (any real x), integrating from 0.
pub fn fundamental_at(p: &PeriodicPotential, z: C, x: f64, ctl: &StepControl) -> Result<FundamentalValues> {
    let y = propagate(p, None, 0.0, x, [ONE, ZERO, ZERO, ONE], rescale_sigma(z), ctl, &rhs_fund(z * z), Mesh::Adaptive)?;
    Ok(FundamentalValues { x, theta: y[0], dtheta: y[1], phi: y[2], dphi: y[3] })
}

/// Fundamental values on a sorted grid in `[0, 1]` (any ordering of the grid is accepted).
pub fn fundamental_solutions(p: &PeriodicPotential, z: C, grid: &[f64], ctl: &StepControl) -> Result<Vec<FundamentalValues>> {
    let mut idx: Vec<usize> = (0..grid.len()).collect();
    idx.sort_by(|a, b| grid[*a].total_cmp(&grid[*b]));
    let mut out = vec![FundamentalValues { x: 0.0, theta: ONE, dtheta: ZERO, phi: ZERO, dphi: ONE }; grid.len()];
    let mut y = [ONE, ZERO, ZERO, ONE];
    let mut x = 0.0;
    let sigma = rescale_sigma(z);
    let rhs = rhs_fund(z * z);
    for i in idx {
        let xi = grid[i];
        y = propagate(p, None, x, xi, y, sigma, ctl, &rhs, Mesh::Adaptive)?;
        x = xi;
        out[i] = FundamentalValues { x: xi, theta: y[0], dtheta: y[1], phi: y[2], dphi: y[3] };
    }
    Ok(out)
}

/// Period-one monodromy data.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Monodromy {
    pub z: C,
    pub theta1: C,
    pub dtheta1: C,
    pub phi1: C,
    pub dphi1: C,
    pub delta: C,
    pub beta: C,
    /// `|β² + 1 − Δ² + φ(1)θ′(1)|` relative to the largest term.
    pub ld0_residual: f64,
    pub wronskian_drift: f64,
    /// z-derivatives `(Δ′, φ(1)′, θ′(1)′, β′)` when requested.
    pub dz: Option<[C; 4]>,
}

impl Monodromy {
    pub(crate) fn from_state(z: C, y: &[C]) -> Self {
        let (theta1, dtheta1, phi1, dphi1) = (y[0], y[1], y[2], y[3]);
        let delta = 0.5 * (dphi1 + theta1);
        let beta = 0.5 * (dphi1 - theta1);
        let lhs = beta * beta + 1.0 - delta * delta;
        let rhs = -phi1 * dtheta1;
        let scale = 1.0 + beta.norm_sqr() + delta.norm_sqr() + rhs.norm();
        let w = theta1 * dphi1 - dtheta1 * phi1;
        let wscale = 1.0 + (theta1 * dphi1).norm() + (dtheta1 * phi1).norm();
        Self {
            z,
            theta1,
            dtheta1,
            phi1,
            dphi1,
            delta,
            beta,
            ld0_residual: (lhs - rhs).norm() / scale,
            wronskian_drift: (w - 1.0).norm() / wscale,
            dz: None,
        }
    }

    /// `1 − Δ²` from the factorised form, accurate near band edges.
    pub fn one_minus_delta_sq(&self) -> C {
        (1.0 - self.delta) * (1.0 + self.delta)
    }
}

/// Monodromy at `z`.
pub fn discriminant(p: &PeriodicPotential, z: C, ctl: &StepControl) -> Result<Monodromy> {
    let y = propagate(p, None, 0.0, 1.0, [ONE, ZERO, ZERO, ONE], rescale_sigma(z), ctl, &rhs_fund(z * z), Mesh::Adaptive)?;
    Ok(Monodromy::from_state(z, &y))
}

/// Monodromy at `z` together with z-derivatives of its entries.
pub fn discriminant_dz(p: &PeriodicPotential, z: C, ctl: &StepControl) -> Result<Monodromy> {
    discriminant_dz_mesh(p, z, ctl, Mesh::Adaptive)
}

pub fn discriminant_dz_mesh(p: &PeriodicPotential, z: C, ctl: &StepControl, mesh: Mesh<'_>) -> Result<Monodromy> {
    let y0 = [ONE, ZERO, ZERO, ONE, ZERO, ZERO, ZERO, ZERO];
    let y = propagate(p, None, 0.0, 1.0, y0, rescale_sigma(z), ctl, &rhs_fund_dz(z), mesh)?;
    let mut m = Monodromy::from_state(z, &y);
    let (t1z, dt1z, p1z, dp1z) = (y[4], y[5], y[6], y[7]);
    m.dz = Some([0.5 * (dp1z + t1z), p1z, dt1z, 0.5 * (dp1z - t1z)]);
    Ok(m)
}

/// Lowest periodic eigenvalue `E₀⁺` of `−y″ + p y`.
pub fn bottom_of_spectrum(p: &PeriodicPotential, ctl: &StepControl) -> Result<f64> {
    let f = |lam: f64| -> f64 {
        let z = C::new(lam, 0.0).sqrt();
        discriminant(p, z, ctl).map(|m| m.delta.re - 1.0).unwrap_or(f64::NAN)
    };
    let lo = p.min_value() - 1.0;
    let hi = p.mean() + 1.0;
    let n = 400;
    let mut prev = (lo, f(lo));
    for j in 1..=n {
        let lam = lo + (hi - lo) * j as f64 / n as f64;
        let v = f(lam);
        if !v.is_finite() {
            return Err(HillError::StepFailure { x: 0.0, reason: format!("discriminant failed at λ={lam}") });
        }
        if v <= 0.0 {
            if v == 0.0 {
                return Ok(lam);
            }
            return Ok(find_root(f, prev.0, lam, 1e-15 * (1.0 + lam.abs())));
        }
        prev = (lam, v);
    }
    Err(HillError::EdgeResolution { n: 0, reason: "bottom of the spectrum not bracketed".into() })
}

/// Shifts `p` by a constant so that the spectrum of `−d² + p` starts at 0. Returns the new pair and the shift.
pub fn normalize_pair(pair: &PotentialPair, ctl: &StepControl) -> Result<(PotentialPair, f64)> {
    let e0 = bottom_of_spectrum(&pair.p, ctl)?;
    if e0 == 0.0 {
        return Ok((pair.clone(), 0.0));
    }
    let p = pair.p.shifted(-e0);
    Ok((pair.with_p(p), -e0))
}

/// Data for one gap `n ≥ 1` (momentum variable, `z > 0`).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Gap {
    pub n: usize,
    pub e_minus: f64,
    pub e_plus: f64,
    /// Dirichlet point `μₙ`.
    pub mu: f64,
    /// Neumann point `νₙ`.
    pub nu: f64,
    /// Maximiser of `(−1)ⁿΔ` on the gap closure.
    pub e_ext: f64,
    /// `cosh hₙ = (−1)ⁿΔ(eₙ)`.
    pub h: f64,
    pub closed: bool,
    /// `φ′(1, μₙ)`.
    pub dphi1_mu: f64,
    /// `∂zφ(1, μₙ)`.
    pub phi1_dz_mu: f64,
}

impl Gap {
    pub fn len(&self) -> f64 {
        self.e_plus - self.e_minus
    }
    pub fn is_empty(&self) -> bool {
        self.closed
    }
    /// Energy edges `(Eₙ⁻, Eₙ⁺)`.
    pub fn energies(&self) -> (f64, f64) {
        (self.e_minus * self.e_minus, self.e_plus * self.e_plus)
    }
    /// `|γₙ| = Eₙ⁺ − Eₙ⁻`.
    pub fn gamma_len(&self) -> f64 {
        let (a, b) = self.energies();
        b - a
    }
    pub fn sign(&self) -> f64 {
        if self.n.is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }
    pub fn contains(&self, x: f64) -> bool {
        x >= self.e_minus && x <= self.e_plus
    }
}

/// Band/gap data for gaps `1..=n_max` of a potential normalised to `E₀⁺ = 0`.
#[derive(Debug, Clone, Serialize)]
pub struct BandStructure {
    pub gaps: Vec<Gap>,
    pub n_max: usize,
    pub closed_tol_factor: f64,
}

/// Closed-gap tolerance `1e−8·max(1, πn)`.
pub fn closed_gap_tol(n: usize) -> f64 {
    1e-8 * (PI * n as f64).max(1.0)
}

impl BandStructure {
    pub fn gap(&self, n: usize) -> Option<&Gap> {
        if n == 0 {
            None
        } else {
            self.gaps.get(n - 1)
        }
    }

    pub fn open_gaps(&self) -> impl Iterator<Item = &Gap> {
        self.gaps.iter().filter(|g| !g.closed)
    }

    /// Largest momentum covered.
    pub fn z_max(&self) -> f64 {
        self.gaps.last().map_or(0.0, |g| g.e_plus)
    }

    /// Locates `x ≥ 0`: `Ok(n)` inside the closure of open gap n, `Err(n)` inside band n.
    pub fn locate(&self, x: f64) -> std::result::Result<usize, usize> {
        let x = x.abs();
        for g in &self.gaps {
            if x < g.e_minus {
                return Err(g.n);
            }
            if x <= g.e_plus {
                return if g.closed { Err(g.n + usize::from(x > g.e_ext)) } else { Ok(g.n) };
            }
        }
        Err(self.gaps.len() + 1)
    }

    /// True if `x` is within `tol` of a band edge.
    pub fn near_edge(&self, x: f64, tol: f64) -> bool {
        let x = x.abs();
        x < tol || self.gaps.iter().any(|g| (x - g.e_minus).abs() < tol || (x - g.e_plus).abs() < tol)
    }

    /// Edges of closed gaps (the excluded set).
    pub fn is_excluded(&self, x: f64) -> bool {
        self.gaps.iter().any(|g| g.closed && (x.abs() - g.e_ext).abs() <= closed_gap_tol(g.n))
    }
}

/// Computes gap data for gaps `1..=n_max`.
pub fn band_edges(p: &PeriodicPotential, n_max: usize, ctl: &StepControl) -> Result<BandStructure> {
    if n_max == 0 {
        return Err(HillError::Validation("n_max must be at least 1".into()));
    }
    let m0 = discriminant(p, ZERO, ctl)?;
    if (m0.delta.re - 1.0).abs() > 1e-8 {
        return Err(HillError::Validation(format!(
            "potential is not normalised: Δ(0) = {} (expected 1)",
            m0.delta.re
        )));
    }
    let zmax = PI * n_max as f64 + PI / 2.0;
    let eval = |z: f64| -> Result<(f64, f64)> {
        let m = discriminant_dz(p, C::new(z, 0.0), ctl)?;
        Ok((m.delta.re, m.dz.unwrap()[0].re))
    };
    let mut per_unit = 8usize;
    let extrema = loop {
        let npts = (zmax * per_unit as f64).ceil() as usize;
        let grid: Vec<f64> = (0..=npts).map(|j| zmax * j as f64 / npts as f64).collect();
        let vals: Vec<(f64, f64)> = {
            use rayon::prelude::*;
            grid[1..].par_iter().map(|&z| eval(z)).collect::<Result<Vec<_>>>()?
        };
        // Δ′ vanishes at z = 0; brackets start at the first grid point.
        let mut ex = Vec::new();
        for j in 1..vals.len() {
            let (a, b) = (vals[j - 1].1, vals[j].1);
            if a == 0.0 || a.signum() != b.signum() {
                ex.push((grid[j], grid[j + 1]));
            }
        }
        let ordered = ex.len() >= n_max
            && ex.iter().take(n_max).enumerate().all(|(i, (a, b))| {
                let c = PI * (i + 1) as f64;
                *a <= c + PI / 2.0 && *b >= c - PI / 2.0
            });
        if ordered || per_unit >= 512 {
            if !ordered {
                return Err(HillError::EdgeResolution { n: ex.len() + 1, reason: "extrema of Δ not separated".into() });
            }
            break ex;
        }
        per_unit *= 2;
    };
    let dd = |z: f64| eval(z).map(|v| v.1).unwrap_or(f64::NAN);
    let dval = |z: f64| eval(z).map(|v| v.0).unwrap_or(f64::NAN);
    let mut gaps = Vec::with_capacity(n_max);
    let mut ext_pts = vec![0.0];
    for (i, (a, b)) in extrema.iter().take(n_max).enumerate() {
        let e = find_root(dd, *a, *b, 1e-15 * b);
        ext_pts.push(e);
        let _ = i;
    }
    let next_ext = |n: usize| -> f64 {
        if n < ext_pts.len() - 1 {
            ext_pts[n + 1]
        } else {
            ext_pts[n] + PI
        }
    };
    for n in 1..=n_max {
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        let e = ext_pts[n];
        let de = dval(e);
        if !de.is_finite() {
            return Err(HillError::GapUnresolved(n));
        }
        let ch = sign * de;
        let h = if ch > 1.0 { ch.acosh() } else { 0.0 };
        let g = |z: f64| dval(z) - sign;
        let (mut em, mut ep) = (e, e);
        if ch > 1.0 {
            let lo = 0.5 * (ext_pts[n - 1] + e);
            let hi = 0.5 * (e + next_ext(n));
            if g(lo) * g(e) < 0.0 {
                em = find_root(g, lo, e, 1e-15 * e);
            }
            if g(hi) * g(e) < 0.0 {
                ep = find_root(g, e, hi, 1e-15 * e);
            }
        }
        let closed = (ep - em) < closed_gap_tol(n);
        if closed {
            em = e;
            ep = e;
        }
        let phi1 = |z: f64| discriminant(p, C::new(z, 0.0), ctl).map(|m| m.phi1.re).unwrap_or(f64::NAN);
        let dth1 = |z: f64| discriminant(p, C::new(z, 0.0), ctl).map(|m| m.dtheta1.re).unwrap_or(f64::NAN);
        let mu = root_in_closure(phi1, em, ep, n)?;
        let nu = root_in_closure(dth1, em, ep, n)?;
        let mmu = discriminant_dz(p, C::new(mu, 0.0), ctl)?;
        gaps.push(Gap {
            n,
            e_minus: em,
            e_plus: ep,
            mu,
            nu,
            e_ext: e,
            h,
            closed,
            dphi1_mu: mmu.dphi1.re,
            phi1_dz_mu: mmu.dz.unwrap()[1].re,
        });
    }
    Ok(BandStructure { gaps, n_max, closed_tol_factor: 1e-8 })
}

/// The root of `f` on the closure `[a, b]` of gap n, widened slightly for round-off.
fn root_in_closure<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> Result<f64> {
    let w = (b - a).max(1e-6 * (1.0 + b));
    let (lo, hi) = (a - 1e-3 * w, b + 1e-3 * w);
    let (fl, fh) = (f(lo), f(hi));
    if !fl.is_finite() || !fh.is_finite() {
        return Err(HillError::GapUnresolved(n));
    }
    if fl * fh <= 0.0 {
        let r = find_root(&f, lo, hi, 1e-15 * hi);
        return Ok(r.clamp(a, b));
    }
    // Root pinned to an edge of a (nearly) closed gap.
    let (fa, fb) = (f(a).abs(), f(b).abs());
    if a == b || fa.min(fb) < 1e-9 {
        return Ok(if fa <= fb { a } else { b });
    }
    Err(HillError::EdgeResolution { n, reason: "auxiliary spectrum point not bracketed".into() })
}

/// One row of the band report CSV.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct BandRow {
    pub n: usize,
    pub e_minus: f64,
    pub e_plus: f64,
    #[serde(rename = "E_minus")]
    pub big_e_minus: f64,
    #[serde(rename = "E_plus")]
    pub big_e_plus: f64,
    pub gap_len: f64,
    pub mu_n: f64,
    pub nu_n: f64,
    pub e_n: f64,
    pub h_n: f64,
    pub closed: u8,
}

impl From<&Gap> for BandRow {
    fn from(g: &Gap) -> Self {
        let (a, b) = g.energies();
        Self {
            n: g.n,
            e_minus: g.e_minus,
            e_plus: g.e_plus,
            big_e_minus: a,
            big_e_plus: b,
            gap_len: g.len(),
            mu_n: g.mu,
            nu_n: g.nu,
            e_n: g.e_ext,
            h_n: g.h,
            closed: g.closed as u8,
        }
    }
}

/// Dirichlet points `μₙ`.
pub fn dirichlet_spectrum(bands: &BandStructure) -> Vec<f64> {
    bands.gaps.iter().map(|g| g.mu).collect()
}

/// Neumann points `νₙ`.
pub fn neumann_spectrum(bands: &BandStructure) -> Vec<f64> {
    bands.gaps.iter().map(|g| g.nu).collect()
}

/// `(eₙ, hₙ)` for gap n.
pub fn gap_extremum(bands: &BandStructure, n: usize) -> Result<(f64, f64)> {
    bands.gap(n).map(|g| (g.e_ext, g.h)).ok_or(HillError::GapUnresolved(n))
}

/// Which copy of the cut plane a momentum lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sheet {
    Physical,
    NonPhysical,
}

impl Sheet {
    pub fn label(&self) -> &'static str {
        match self {
            Sheet::Physical => "physical",
            Sheet::NonPhysical => "nonphysical",
        }
    }
}

/// Gap index and rim side for points on a gap closure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Rim {
    pub n: usize,
    pub upper: bool,
}

/// A momentum tagged with its sheet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentumPoint {
    pub z: C,
    pub sheet: Sheet,
    pub rim: Option<Rim>,
}

impl MomentumPoint {
    /// Sheet from the sign of `Im z`; real points default to the physical side.
    pub fn new(z: C) -> Self {
        let sheet = if z.im < 0.0 { Sheet::NonPhysical } else { Sheet::Physical };
        Self { z, sheet, rim: None }
    }

    pub fn real(x: f64, sheet: Sheet) -> Self {
        Self { z: C::new(x, 0.0), sheet, rim: None }
    }

    pub fn on_rim(x: f64, n: usize, upper: bool) -> Self {
        let sheet = if upper { Sheet::Physical } else { Sheet::NonPhysical };
        Self { z: C::new(x, 0.0), sheet, rim: Some(Rim { n, upper }) }
    }

    /// The point `−z`; on the real axis the rim side flips with it.
    pub fn mirrored(&self) -> Self {
        if self.is_real() {
            let sheet = match self.sheet {
                Sheet::Physical => Sheet::NonPhysical,
                Sheet::NonPhysical => Sheet::Physical,
            };
            let rim = self.rim.map(|r| Rim { n: r.n, upper: !r.upper });
            Self { z: -self.z, sheet, rim }
        } else {
            Self::new(-self.z)
        }
    }

    pub fn is_real(&self) -> bool {
        self.z.im.abs() <= 1e-13 * (1.0 + self.z.re.abs())
    }
}

/// Floquet multiplier `e^{ik}` and `i sin k`, resolved by sheet; needs `mono.dz` on band points of the real axis.
fn multiplier_and_isin(mono: &Monodromy, point: &MomentumPoint) -> Result<(C, C)> {
    let d = mono.delta;
    if point.is_real() && d.re.abs() <= 1.0 {
        // Band: sin k = −sign(Δ′)·√(1 − Δ²).
        let dd = mono.dz.map(|v| v[0].re).ok_or(HillError::BranchTracking { re: point.z.re, im: point.z.im })?;
        let s = if dd > 0.0 {
            -1.0
        } else if dd < 0.0 {
            1.0
        } else {
            0.0
        };
        let om = (1.0 - d.re) * (1.0 + d.re);
        let is = I * s * om.max(0.0).sqrt();
        return Ok((d + is, is));
    }
    let disc = ((d - 1.0) * (d + 1.0)).sqrt();
    // Pick the root of largest modulus without cancellation; the other is its inverse.
    let (big, sdisc) = if (d + disc).norm() >= (d - disc).norm() { (d + disc, disc) } else { (d - disc, -disc) };
    Ok(match point.sheet {
        Sheet::Physical => (1.0 / big, -sdisc),
        Sheet::NonPhysical => (big, sdisc),
    })
}

/// `i sin k(z)` resolved by sheet; needs `mono.dz` on band points of the real axis.
pub fn isin_k(mono: &Monodromy, point: &MomentumPoint) -> Result<C> {
    Ok(multiplier_and_isin(mono, point)?.1)
}

/// Floquet multiplier `e^{ik}` for the point.
pub fn floquet_multiplier(mono: &Monodromy, point: &MomentumPoint) -> Result<C> {
    Ok(multiplier_and_isin(mono, point)?.0)
}

/// Quasimomentum value at a point.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct QuasimomentumValue {
    pub k: C,
    /// `Im k` on gap rims.
    pub v: Option<f64>,
    pub gap: Option<usize>,
}

/// `k(x ± i0)` on the real axis; `x ≥ 0`.
fn k_real(bands: &BandStructure, mono: &Monodromy, x: f64, sheet: Sheet) -> Result<QuasimomentumValue> {
    if x > bands.z_max() + 1e-9 {
        return Err(HillError::Validation(format!("x={x} beyond computed band structure")));
    }
    let d = mono.delta.re;
    match bands.locate(x) {
        Ok(n) => {
            let ch = (if n % 2 == 0 { d } else { -d }).max(1.0);
            let v = ch.acosh() * if sheet == Sheet::Physical { 1.0 } else { -1.0 };
            Ok(QuasimomentumValue { k: C::new(PI * n as f64, v), v: Some(v), gap: Some(n) })
        }
        Err(n) => {
            // Band n: k = π(n−1) + arccos((−1)^{n−1} Δ).
            let s = if (n - 1) % 2 == 0 { d } else { -d };
            Ok(QuasimomentumValue { k: C::new(PI * (n - 1) as f64 + s.clamp(-1.0, 1.0).acos(), 0.0), v: None, gap: None })
        }
    }
}

/// Quasimomentum `k(z)`: real anchor at `Re z`, then vertical continuation.
pub fn quasimomentum(p: &PeriodicPotential, bands: &BandStructure, point: &MomentumPoint, ctl: &StepControl) -> Result<QuasimomentumValue> {
    let z = point.z;
    if z.re < 0.0 {
        let mirrored = MomentumPoint { z: -z.conj(), sheet: point.sheet, rim: point.rim };
        let k = quasimomentum(p, bands, &mirrored, ctl)?;
        return Ok(QuasimomentumValue { k: -k.k.conj(), v: k.v, gap: k.gap });
    }
    let x = z.re;
    let m0 = discriminant(p, C::new(x, 0.0), ctl)?;
    if point.is_real() {
        return k_real(bands, &m0, x, point.sheet);
    }
    let lower = z.im < 0.0;
    let ytarget = z.im.abs();
    let mut k = k_real(bands, &m0, x, Sheet::Physical)?.k;
    let mut y = 0.0;
    let mut h = ytarget.min(0.25);
    let mut halvings = 0;
    while y < ytarget {
        let ynext = (y + h).min(ytarget);
        let zz = C::new(x, ynext);
        let m = discriminant(p, zz, ctl)?;
        let rho = floquet_multiplier(&m, &MomentumPoint::new(zz))?;
        let base = -I * rho.ln();
        let shift = ((k.re - base.re) / (2.0 * PI)).round();
        let cand = base + 2.0 * PI * shift;
        if (cand - k).norm() > PI / 2.0 {
            h *= 0.5;
            halvings += 1;
            if halvings > 40 {
                return Err(HillError::BranchTracking { re: z.re, im: z.im });
            }
            continue;
        }
        k = cand;
        y = ynext;
        h = (h * 2.0).min(0.5);
    }
    Ok(QuasimomentumValue { k: if lower { k.conj() } else { k }, v: None, gap: None })
}

/// Floquet coefficients `m±` and `φ(1)`-scaled numerators `β ± i sin k`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FloquetM {
    pub m_plus: C,
    pub m_minus: C,
    pub num_plus: C,
    pub num_minus: C,
    pub isin_k: C,
}

/// `m± = (β ± i sin k)/φ(1)`; near a Dirichlet point a first-order Taylor model is used.
pub fn floquet_m(p: &PeriodicPotential, point: &MomentumPoint, bands: Option<&BandStructure>, ctl: &StepControl) -> Result<FloquetM> {
    let mono = if point.is_real() { discriminant_dz(p, point.z, ctl)? } else { discriminant(p, point.z, ctl)? };
    floquet_m_from(p, &mono, point, bands, ctl)
}

pub fn floquet_m_from(
    p: &PeriodicPotential,
    mono: &Monodromy,
    point: &MomentumPoint,
    bands: Option<&BandStructure>,
    ctl: &StepControl,
) -> Result<FloquetM> {
    let is = isin_k(mono, point)?;
    let (np, nm) = (mono.beta + is, mono.beta - is);
    let near_mu = bands.and_then(|b| {
        if !point.is_real() {
            return None;
        }
        b.gaps.iter().find(|g| (point.z.re.abs() - g.mu).abs() < 1e-6)
    });
    if let Some(g) = near_mu {
        let mu = g.mu * point.z.re.signum();
        let dz = point.z.re - mu;
        let h = 1e-5;
        let num_at = |x: f64| -> Result<(C, C)> {
            let m = discriminant_dz(p, C::new(x, 0.0), ctl)?;
            let pt = MomentumPoint { z: C::new(x, 0.0), ..*point };
            let s = isin_k(&m, &pt)?;
            Ok((m.beta + s, m.beta - s))
        };
        let (a0, b0) = num_at(mu)?;
        let (a1, b1) = num_at(mu + h)?;
        let (a2, b2) = num_at(mu - h)?;
        let mmu = discriminant_dz(p, C::new(mu, 0.0), ctl)?;
        let dphi = mmu.dz.unwrap()[1];
        let model = |n0: C, d: C| -> Result<C> {
            let scale = 1.0 + mono.beta.norm() + is.norm();
            if n0.norm() < 1e-8 * scale {
                Ok(d / dphi)
            } else if dz == 0.0 {
                Err(HillError::DirichletSingularity { re: point.z.re, im: point.z.im })
            } else {
                Ok((n0 + d * dz) / (dphi * dz))
            }
        };
        let mp = model(a0, (a1 - a2) / (2.0 * h))?;
        let mm = model(b0, (b1 - b2) / (2.0 * h))?;
        return Ok(FloquetM { m_plus: mp, m_minus: mm, num_plus: np, num_minus: nm, isin_k: is });
    }
    if mono.phi1.norm() < 1e-14 * (1.0 + np.norm() + nm.norm()) {
        return Err(HillError::DirichletSingularity { re: point.z.re, im: point.z.im });
    }
    Ok(FloquetM { m_plus: np / mono.phi1, m_minus: nm / mono.phi1, num_plus: np, num_minus: nm, isin_k: is })
}

/// `ψ±(x) = θ(x) + m± φ(x)` and derivative.
pub fn floquet_solution(p: &PeriodicPotential, x: f64, point: &MomentumPoint, plus: bool, bands: Option<&BandStructure>, ctl: &StepControl) -> Result<(C, C)> {
    let m = floquet_m(p, point, bands, ctl)?;
    let f = fundamental_at(p, point.z, x, ctl)?;
    let mm = if plus { m.m_plus } else { m.m_minus };
    Ok((f.theta + mm * f.phi, f.dtheta + mm * f.dphi))
}

/// `φ(1, z, x)`: Dirichlet solution of the shifted problem `p(· + x)` evaluated at 1.
pub fn shifted_phi1(p: &PeriodicPotential, z: C, x: f64, ctl: &StepControl) -> Result<C> {
    let a = fundamental_at(p, z, x, ctl)?;
    let b = fundamental_at(p, z, x + 1.0, ctl)?;
    Ok(a.theta * b.phi - a.phi * b.theta)
}
