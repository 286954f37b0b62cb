//! Jost solutions of the perturbed operator and the scattering data built from them.

use crate::error::{HillError, Result};
use crate::floquet::{
    discriminant_dz, floquet_m_from, floquet_multiplier, fundamental_at, fundamental_solutions, isin_k, rescale_sigma,
    BandStructure, FloquetM, FundamentalValues, Monodromy, MomentumPoint, ONE, ZERO,
};
use crate::ode::{propagate, segments, LocalMedium, Mesh, StepControl};
use crate::potential::PotentialPair;
use crate::quad::gl16;
use num_complex::Complex64 as C;
use serde::Serialize;

fn rhs_pert<const N: usize>(z2: C) -> impl Fn(f64, &LocalMedium<'_>, &[C; N]) -> [C; N] {
    move |x, m, y| {
        let v = C::new(m.p(x) + m.q(x), 0.0) - z2;
        let mut d = [ZERO; N];
        for k in 0..N / 2 {
            d[2 * k] = y[2 * k + 1];
            d[2 * k + 1] = v * y[2 * k];
        }
        d
    }
}

/// Monodromy of `H₀` at a point, with z-derivatives on the real axis (needed for band signs).
pub fn monodromy_at(pair: &PotentialPair, point: &MomentumPoint, ctl: &StepControl) -> Result<Monodromy> {
    if point.is_real() {
        discriminant_dz(&pair.p, point.z, ctl)
    } else {
        crate::floquet::discriminant(&pair.p, point.z, ctl)
    }
}

/// Values of `θ̃, θ̃′, φ̃, φ̃′` at 0, where `θ̃ = θ`, `φ̃ = φ` on `x ≥ t`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PerturbedFundamental {
    pub theta: C,
    pub dtheta: C,
    pub phi: C,
    pub dphi: C,
}

/// `A(z²)`, `J(z²)` together with the monodromy they were built from.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AjValues {
    pub a: C,
    pub j: C,
    pub mono: Monodromy,
    pub tilde: PerturbedFundamental,
}

impl AjValues {
    /// `F = 4(1 − Δ²)(1 + A)² + J²`.
    pub fn f(&self) -> C {
        let one_a = 1.0 + self.a;
        4.0 * self.mono.one_minus_delta_sq() * one_a * one_a + self.j * self.j
    }

    /// `ξ = 2i sin k (1 + A) − J` for a given `i sin k`.
    pub fn xi(&self, isin: C) -> C {
        2.0 * isin * (1.0 + self.a) - self.j
    }
}

/// Monodromy and `θ, φ` data at `x = t` from one forward pass.
fn monodromy_and_t(pair: &PotentialPair, z: C, ctl: &StepControl) -> Result<(Monodromy, FundamentalValues)> {
    let fv = fundamental_solutions(&pair.p, z, &[1.0, pair.t()], ctl)?;
    let f1 = fv[0];
    Ok((Monodromy::from_state(z, &[f1.theta, f1.dtheta, f1.phi, f1.dphi]), fv[1]))
}

fn perturbed_fundamental(pair: &PotentialPair, z: C, ctl: &StepControl) -> Result<(Monodromy, PerturbedFundamental)> {
    let t = pair.t();
    let sigma = rescale_sigma(z);
    let (mono, ft) = monodromy_and_t(pair, z, ctl)?;
    let y0 = [ft.theta, ft.dtheta, ft.phi, ft.dphi];
    let y = propagate(&pair.p, Some(&pair.q), t, 0.0, y0, sigma, ctl, &rhs_pert::<4>(z * z), Mesh::Adaptive)?;
    Ok((mono, PerturbedFundamental { theta: y[0], dtheta: y[1], phi: y[2], dphi: y[3] }))
}

fn aj_from(mono: Monodromy, tilde: PerturbedFundamental) -> AjValues {
    let a = 0.5 * (tilde.theta + tilde.dphi) - 1.0;
    let j = -mono.phi1 * tilde.dtheta - mono.dtheta1 * tilde.phi + mono.beta * (tilde.theta - tilde.dphi);
    AjValues { a, j, mono, tilde }
}

/// `A(z²)` and `J(z²)` from the boundary values of the perturbed fundamental system.
pub fn aj(pair: &PotentialPair, z: C, ctl: &StepControl) -> Result<AjValues> {
    let (mono, tilde) = perturbed_fundamental(pair, z, ctl)?;
    Ok(aj_from(mono, tilde))
}

/// `F(z)` by the A/J route.
pub fn f_value(pair: &PotentialPair, z: C, ctl: &StepControl) -> Result<C> {
    Ok(aj(pair, z, ctl)?.f())
}

/// `ξ` at a sheet-resolved point: the A/J route on and below the real axis,
/// the Jost route `φ(1)w` above it, where `1 + A` and `J` cancel.
pub fn xi(pair: &PotentialPair, point: &MomentumPoint, ctl: &StepControl) -> Result<C> {
    Ok(xi_with_aj(pair, point, ctl)?.0)
}

/// `ξ` together with the A/J data at the same point.
pub fn xi_with_aj(pair: &PotentialPair, point: &MomentumPoint, ctl: &StepControl) -> Result<(C, AjValues)> {
    if point.z.im > 0.0 && !point.is_real() {
        let b = jost_build(pair, point, None, ctl)?;
        return Ok((b.phi1_w(), b.aj()));
    }
    let (mut mono, tilde) = perturbed_fundamental(pair, point.z, ctl)?;
    if point.is_real() && mono.delta.re.abs() <= 1.0 {
        mono.dz = discriminant_dz(&pair.p, point.z, ctl)?.dz;
    }
    let v = aj_from(mono, tilde);
    Ok((v.xi(isin_k(&v.mono, point)?), v))
}

/// A/J evaluator on a step sequence frozen at a reference momentum, so that
/// values at nearby real momenta differ smoothly.
#[derive(Debug, Clone)]
pub struct FrozenAj {
    meshes: [Vec<Vec<f64>>; 3],
}

impl FrozenAj {
    pub fn record(pair: &PotentialPair, z_ref: f64, ctl: &StepControl) -> Result<Self> {
        let mut meshes: [Vec<Vec<f64>>; 3] = Default::default();
        let [m0, m1, m2] = &mut meshes;
        Self::run(pair, C::new(z_ref, 0.0), ctl, [Mesh::Record(m0), Mesh::Record(m1), Mesh::Record(m2)])?;
        Ok(Self { meshes })
    }

    /// A/J values at real `z` on the frozen mesh.
    pub fn eval(&self, pair: &PotentialPair, z: f64, ctl: &StepControl) -> Result<AjValues> {
        let [m0, m1, m2] = &self.meshes;
        Self::run(pair, C::new(z, 0.0), ctl, [Mesh::Replay(m0), Mesh::Replay(m1), Mesh::Replay(m2)])
    }

    fn run(pair: &PotentialPair, z: C, ctl: &StepControl, meshes: [Mesh<'_>; 3]) -> Result<AjValues> {
        let t = pair.t();
        let rhs = crate::floquet::rhs_fund(z * z);
        let [ma, mb, mc] = meshes;
        let y0 = [ONE, ZERO, ZERO, ONE];
        let (first, second) = if t >= 1.0 { (1.0, t) } else { (t, 1.0) };
        let ya = propagate(&pair.p, None, 0.0, first, y0, 0.0, ctl, &rhs, ma)?;
        let yb = propagate(&pair.p, None, first, second, ya, 0.0, ctl, &rhs, mb)?;
        let (y1, yt) = if t >= 1.0 { (ya, yb) } else { (yb, ya) };
        let mono = Monodromy::from_state(z, &y1);
        let y = propagate(&pair.p, Some(&pair.q), t, 0.0, yt, 0.0, ctl, &rhs_pert::<4>(z * z), mc)?;
        Ok(aj_from(mono, PerturbedFundamental { theta: y[0], dtheta: y[1], phi: y[2], dphi: y[3] }))
    }
}

/// Jost solution `f₊` at one point.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct JostValues {
    pub x: f64,
    pub f: C,
    pub df: C,
}

/// Everything the Jost route needs at one momentum point.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct JostBuild {
    pub point: MomentumPoint,
    pub mono: Monodromy,
    pub m: FloquetM,
    pub rho: C,
    /// `ψ₊(t), ψ₊′(t)`.
    pub psi_t: [C; 2],
    /// `f₊(0), f₊′(0)`.
    pub f0: [C; 2],
    pub tilde: PerturbedFundamental,
}

impl JostBuild {
    pub fn aj(&self) -> AjValues {
        aj_from(self.mono, self.tilde)
    }

    /// `w = f₊′(0) − m₋ f₊(0)`.
    pub fn w(&self) -> C {
        self.f0[1] - self.m.m_minus * self.f0[0]
    }

    /// `s = f₊(0) m₊ − f₊′(0)`.
    pub fn s(&self) -> C {
        self.f0[0] * self.m.m_plus - self.f0[1]
    }

    /// `w₀ = 2i sin k / φ(1)`.
    pub fn w0(&self) -> C {
        self.m.m_plus - self.m.m_minus
    }

    /// `φ(1) w`, finite at Dirichlet points.
    pub fn phi1_w(&self) -> C {
        self.mono.phi1 * self.f0[1] - self.m.num_minus * self.f0[0]
    }

    /// `φ(1) s`.
    pub fn phi1_s(&self) -> C {
        self.m.num_plus * self.f0[0] - self.mono.phi1 * self.f0[1]
    }
}

/// `ψ₊(x)` for `x ≥ 0` through the Floquet shift.
fn psi_plus_at(pair: &PotentialPair, z: C, m_plus: C, rho: C, x: f64, ctl: &StepControl) -> Result<[C; 2]> {
    let n = x.floor();
    let r = x - n;
    let g = rho.powi(n as i32);
    if rho.norm() < 1.0 && r > 0.0 {
        // θ + m₊φ cancels for a decaying solution; march back from x = 1 instead.
        let y0 = [rho, rho * m_plus];
        let y = propagate(&pair.p, None, 1.0, r, y0, rescale_sigma(z), ctl, &rhs_pert::<2>(z * z), Mesh::Adaptive)?;
        return Ok([g * y[0], g * y[1]]);
    }
    let fv = fundamental_at(&pair.p, z, r, ctl)?;
    Ok([g * (fv.theta + m_plus * fv.phi), g * (fv.dtheta + m_plus * fv.dphi)])
}

/// Builds `f₊` at `x = 0` by backward integration from `x = t` with Floquet data.
pub fn jost_build(pair: &PotentialPair, point: &MomentumPoint, bands: Option<&BandStructure>, ctl: &StepControl) -> Result<JostBuild> {
    let z = point.z;
    let (mut mono, ft) = monodromy_and_t(pair, z, ctl)?;
    if point.is_real() {
        mono.dz = discriminant_dz(&pair.p, z, ctl)?.dz;
    }
    let m = floquet_m_from(&pair.p, &mono, point, bands, ctl)?;
    let rho = floquet_multiplier(&mono, point)?;
    let t = pair.t();
    let psi_t = psi_plus_at(pair, z, m.m_plus, rho, t, ctl)?;
    let y0 = [psi_t[0], psi_t[1], ft.theta, ft.dtheta, ft.phi, ft.dphi];
    let y = propagate(&pair.p, Some(&pair.q), t, 0.0, y0, rescale_sigma(z), ctl, &rhs_pert::<6>(z * z), Mesh::Adaptive)?;
    let tilde = PerturbedFundamental { theta: y[2], dtheta: y[3], phi: y[4], dphi: y[5] };
    Ok(JostBuild { point: *point, mono, m, rho, psi_t, f0: [y[0], y[1]], tilde })
}

/// `f₊(x), f₊′(x)` on a list of points (`x ≥ t` uses `ψ₊` directly).
pub fn jost_plus(
    pair: &PotentialPair,
    point: &MomentumPoint,
    xs: &[f64],
    bands: Option<&BandStructure>,
    ctl: &StepControl,
) -> Result<Vec<JostValues>> {
    let b = jost_build(pair, point, bands, ctl)?;
    let t = pair.t();
    let z = point.z;
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|i, j| xs[*j].total_cmp(&xs[*i]));
    let mut out = vec![JostValues { x: 0.0, f: ZERO, df: ZERO }; xs.len()];
    let mut y = b.psi_t;
    let mut x = t;
    let rhs = rhs_pert::<2>(z * z);
    for i in idx {
        let xi = xs[i];
        if xi < 0.0 {
            return Err(HillError::Validation(format!("jost_plus: x = {xi} < 0")));
        }
        if xi >= t {
            let v = psi_plus_at(pair, z, b.m.m_plus, b.rho, xi, ctl)?;
            out[i] = JostValues { x: xi, f: v[0], df: v[1] };
            continue;
        }
        y = propagate(&pair.p, Some(&pair.q), x, xi, y, rescale_sigma(z), ctl, &rhs, Mesh::Adaptive)?;
        x = xi;
        out[i] = JostValues { x: xi, f: y[0], df: y[1] };
    }
    Ok(out)
}

/// Integrals `∫q θθ̃, ∫q φφ̃, ∫q φθ̃, ∫q θφ̃` over `[0, t]`; `None` when rescaling would be needed.
pub fn bilinear_integrals(pair: &PotentialPair, z: C, ctl: &StepControl) -> Result<Option<[C; 4]>> {
    if rescale_sigma(z) > 0.0 {
        return Ok(None);
    }
    let t = pair.t();
    let ft = fundamental_at(&pair.p, z, t, ctl)?;
    let z2 = z * z;
    let rhs = move |x: f64, m: &LocalMedium<'_>, y: &[C; 12]| {
        let vp = C::new(m.p(x), 0.0) - z2;
        let qx = m.q(x);
        let vq = vp + qx;
        [
            y[1],
            vq * y[0],
            y[3],
            vq * y[2],
            y[5],
            vp * y[4],
            y[7],
            vp * y[6],
            qx * y[4] * y[0],
            qx * y[6] * y[2],
            qx * y[6] * y[0],
            qx * y[4] * y[2],
        ]
    };
    let y0 = [ft.theta, ft.dtheta, ft.phi, ft.dphi, ft.theta, ft.dtheta, ft.phi, ft.dphi, ZERO, ZERO, ZERO, ZERO];
    let y = propagate(&pair.p, Some(&pair.q), t, 0.0, y0, 0.0, ctl, &rhs, Mesh::Adaptive)?;
    Ok(Some([-y[8], -y[9], -y[10], -y[11]]))
}

/// `A` and `J` as integrals of `q·Y₂` and `q·Y₁`.
pub fn aj_quadrature(pair: &PotentialPair, z: C, ctl: &StepControl) -> Result<Option<(C, C)>> {
    let Some([tt, pp, pt, tp]) = bilinear_integrals(pair, z, ctl)? else {
        return Ok(None);
    };
    let mono = crate::floquet::discriminant(&pair.p, z, ctl)?;
    let a = 0.5 * (pt - tp);
    let j = mono.phi1 * tt - mono.dtheta1 * pp + mono.beta * (pt + tp);
    Ok(Some((a, j)))
}

/// `(w, s, w₀)` with the integral forms of `w` and `s` as checks.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Wronskians {
    pub w: C,
    pub s: C,
    pub w0: C,
    pub s_integral: Option<C>,
    pub w_integral: Option<C>,
}

pub fn wronskians(pair: &PotentialPair, point: &MomentumPoint, bands: Option<&BandStructure>, ctl: &StepControl) -> Result<Wronskians> {
    let b = jost_build(pair, point, bands, ctl)?;
    let ints = bilinear_integrals(pair, point.z, ctl)?;
    let (mp, mm) = (b.m.m_plus, b.m.m_minus);
    let s_integral = ints.map(|[tt, pp, pt, tp]| tt + mp * (tp + pt) + mp * mp * pp);
    let w_integral = ints.map(|[tt, pp, pt, tp]| b.w0() - (tt + mp * tp + mm * pt + mp * mm * pp));
    Ok(Wronskians { w: b.w(), s: b.s(), w0: b.w0(), s_integral, w_integral })
}

/// Transmission and reflection data at a real band point.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScatteringCoeffs {
    pub a: C,
    pub b: C,
    pub r_plus: C,
    pub r_minus: C,
    /// `|a|² − |b|² − 1`.
    pub unitarity: f64,
}

/// `a, b, r±` for real `z` with `z²` inside a band.
pub fn scattering_coeffs(pair: &PotentialPair, z: f64, bands: Option<&BandStructure>, ctl: &StepControl) -> Result<ScatteringCoeffs> {
    let pt = MomentumPoint::new(C::new(z, 0.0));
    let b = jost_build(pair, &pt, bands, ctl)?;
    if b.mono.delta.re.abs() >= 1.0 || z == 0.0 {
        return Err(HillError::BandOnly(z));
    }
    let bm = jost_build(pair, &pt.mirrored(), bands, ctl)?;
    let w0 = b.w0();
    let a = b.w() / w0;
    let bb = b.s() / w0;
    let r_plus = bm.s() / b.w();
    let r_minus = b.s() / b.w();
    Ok(ScatteringCoeffs { a, b: bb, r_plus, r_minus, unitarity: a.norm_sqr() - bb.norm_sqr() - 1.0 })
}

/// All scattering quantities at one point with two-route residuals.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScatteringBundle {
    pub point: MomentumPoint,
    pub w: C,
    pub s: C,
    pub w0: C,
    pub a: C,
    pub b: C,
    pub r_plus: C,
    pub r_minus: C,
    pub xi: C,
    pub xi_wronskian: C,
    pub big_a: C,
    pub big_j: C,
    pub f: C,
    pub s_fn: C,
    /// `|ξ_AJ − φ(1)w| / (1 + |ξ|)`.
    pub resid_xi: f64,
    /// `|a_direct − ξ/(2i sin k)| / (1 + |a|)`; zero near edges where only the A/J value is used.
    pub resid_a: f64,
    /// `|F − 4(1−Δ²) − S| / (1 + |F|)`.
    pub resid_f: f64,
    pub near_edge: bool,
}

/// Edge neighbourhood where quotients by `sin k` are replaced by the A/J route.
pub const EDGE_GUARD: f64 = 1e-4;

fn is_near_edge(point: &MomentumPoint, mono: &Monodromy, bands: Option<&BandStructure>) -> bool {
    if !point.is_real() {
        return false;
    }
    match bands {
        Some(b) if point.z.re.abs() <= b.z_max() => b.near_edge(point.z.re, EDGE_GUARD),
        _ => mono.one_minus_delta_sq().norm() < 1e-7,
    }
}

pub fn scattering_bundle(pair: &PotentialPair, point: &MomentumPoint, bands: Option<&BandStructure>, ctl: &StepControl) -> Result<ScatteringBundle> {
    let b = jost_build(pair, point, bands, ctl)?;
    let bm = jost_build(pair, &point.mirrored(), bands, ctl)?;
    let aj = b.aj();
    let is = isin_k(&b.mono, point)?;
    let xi = aj.xi(is);
    let xi_w = b.phi1_w();
    let near = is_near_edge(point, &b.mono, bands);
    let (w, s, w0) = (b.w(), b.s(), b.w0());
    let a_aj = xi / (2.0 * is);
    let (a, resid_a) = if near {
        (a_aj, 0.0)
    } else {
        let a = w / w0;
        (a, (a - a_aj).norm() / (1.0 + a.norm()))
    };
    let bb = s / w0;
    let f = aj.f();
    let s_fn = b.phi1_s() * bm.phi1_s();
    let resid_f = (f - 4.0 * b.mono.one_minus_delta_sq() - s_fn).norm() / (1.0 + f.norm());
    Ok(ScatteringBundle {
        point: *point,
        w,
        s,
        w0,
        a,
        b: bb,
        r_plus: bm.s() / w,
        r_minus: s / w,
        xi,
        xi_wronskian: xi_w,
        big_a: aj.a,
        big_j: aj.j,
        f,
        s_fn,
        resid_xi: (xi - xi_w).norm() / (1.0 + xi.norm()),
        resid_a,
        resid_f,
        near_edge: near,
    })
}

/// `F` by the A/J route and `S` by Jost builds at `±z`.
pub fn f_and_s(pair: &PotentialPair, z: C, ctl: &StepControl) -> Result<(C, Option<C>)> {
    let pt = MomentumPoint::new(z);
    let aj = aj(pair, z, ctl)?;
    let s = match (jost_build(pair, &pt, None, ctl), jost_build(pair, &pt.mirrored(), None, ctl)) {
        (Ok(a), Ok(b)) => Some(a.phi1_s() * b.phi1_s()),
        (Err(HillError::DirichletSingularity { .. }), _) | (_, Err(HillError::DirichletSingularity { .. })) => None,
        (Err(e), _) | (_, Err(e)) => return Err(e),
    };
    Ok((aj.f(), s))
}

/// One row of the scattering trace CSV.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TraceRow {
    pub z_re: f64,
    pub z_im: f64,
    pub sheet: &'static str,
    pub a_re: f64,
    pub a_im: f64,
    pub b_re: f64,
    pub b_im: f64,
    pub xi_re: f64,
    pub xi_im: f64,
    #[serde(rename = "F_re")]
    pub f_re: f64,
    #[serde(rename = "F_im")]
    pub f_im: f64,
    pub resid_two_route: f64,
}

impl From<&ScatteringBundle> for TraceRow {
    fn from(b: &ScatteringBundle) -> Self {
        Self {
            z_re: b.point.z.re,
            z_im: b.point.z.im,
            sheet: b.point.sheet.label(),
            a_re: b.a.re,
            a_im: b.a.im,
            b_re: b.b.re,
            b_im: b.b.im,
            xi_re: b.xi.re,
            xi_im: b.xi.im,
            f_re: b.f.re,
            f_im: b.f.im,
            resid_two_route: b.resid_xi.max(b.resid_f),
        }
    }
}

fn solve_dense(mut a: Vec<Vec<C>>, mut b: Vec<C>) -> Result<Vec<C>> {
    let n = b.len();
    for k in 0..n {
        let piv = (k..n).max_by(|i, j| a[*i][k].norm().total_cmp(&a[*j][k].norm())).unwrap();
        if a[piv][k].norm() == 0.0 {
            return Err(HillError::ConvergenceFailure("singular Nyström block".into()));
        }
        a.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                let v = a[k][j];
                a[i][j] -= f * v;
            }
            let v = b[k];
            b[i] -= f * v;
        }
    }
    let mut x = vec![ZERO; n];
    for k in (0..n).rev() {
        let mut s = b[k];
        for j in k + 1..n {
            s -= a[k][j] * x[j];
        }
        x[k] = s / a[k][k];
    }
    Ok(x)
}

fn lagrange(nodes: &[f64], m: usize, x: f64) -> f64 {
    nodes.iter().enumerate().filter(|(j, _)| *j != m).map(|(_, xj)| (x - xj) / (nodes[m] - xj)).product()
}

/// Solves `f₊(x) = ψ₊(x) − ∫ₓᵗ K(x,τ) q(τ) f₊(τ) dτ`, `K = θ(τ)φ(x) − φ(τ)θ(x)`,
/// by panel-wise Nyström with Lagrange product integration, and returns
/// `max |f_Nyström − f_ODE| / max |f|` over up to `samples` nodes.
pub fn volterra_check(pair: &PotentialPair, point: &MomentumPoint, samples: usize, ctl: &StepControl) -> Result<f64> {
    let z = point.z;
    let t = pair.t();
    let b = jost_build(pair, point, None, ctl)?;
    let mp = b.m.m_plus;
    let hmax = (0.125f64).min(2.0 / (1.0 + z.norm()));
    let mut panels = Vec::new();
    for w in segments(&pair.p, Some(&pair.q), 0.0, t).windows(2) {
        let (a, c) = (w[0], w[1]);
        if c - a < 1e-14 {
            continue;
        }
        let k = ((c - a) / hmax).ceil().max(1.0) as usize;
        for i in 0..k {
            panels.push((a + (c - a) * i as f64 / k as f64, a + (c - a) * (i + 1) as f64 / k as f64));
        }
    }
    let (gx, gw) = gl16();
    let map = |a: f64, c: f64| -> Vec<(f64, f64)> {
        gx.iter().zip(gw).map(|(x, w)| (0.5 * (a + c) + 0.5 * (c - a) * x, 0.5 * (c - a) * w)).collect()
    };
    // Collect all evaluation points: panel nodes and product-integration sub-nodes.
    let mut grid = Vec::new();
    let mut layout = Vec::new();
    for &(a, c) in &panels {
        let nodes = map(a, c);
        let mut subs = Vec::new();
        for &(xi, _) in &nodes {
            subs.push(map(xi, c));
        }
        for (x, _) in &nodes {
            grid.push(*x);
        }
        for s in &subs {
            for (x, _) in s {
                grid.push(*x);
            }
        }
        layout.push((nodes, subs));
    }
    let fv = fundamental_solutions(&pair.p, z, &grid, ctl)?;
    let qv: Vec<f64> = grid.iter().map(|x| pair.q.eval(*x)).collect();
    let mut cursor = 0usize;
    let mut node_data = Vec::new();
    for (nodes, subs) in &layout {
        let nd: Vec<usize> = (cursor..cursor + nodes.len()).collect();
        cursor += nodes.len();
        let mut sd = Vec::new();
        for s in subs {
            sd.push((cursor..cursor + s.len()).collect::<Vec<_>>());
            cursor += s.len();
        }
        node_data.push((nd, sd));
    }
    // Panels right to left.
    let np = panels.len();
    let mut f_nodes: Vec<Vec<C>> = vec![Vec::new(); np];
    let kern = |xi: usize, tau: usize| fv[tau].theta * fv[xi].phi - fv[tau].phi * fv[xi].theta;
    for pi in (0..np).rev() {
        let (nodes, subs) = &layout[pi];
        let (nd, sd) = &node_data[pi];
        let xs: Vec<f64> = nodes.iter().map(|(x, _)| *x).collect();
        let n = xs.len();
        let mut mat = vec![vec![ZERO; n]; n];
        let mut rhs = vec![ZERO; n];
        for i in 0..n {
            let gi = nd[i];
            let psi = fv[gi].theta + mp * fv[gi].phi;
            let mut tail = ZERO;
            for qj in pi + 1..np {
                let (qn, _) = &layout[qj];
                for (j, (_, wj)) in qn.iter().enumerate() {
                    let g = node_data[qj].0[j];
                    tail += *wj * kern(gi, g) * qv[g] * f_nodes[qj][j];
                }
            }
            rhs[i] = psi - tail;
            mat[i][i] = ONE;
            for (l, (sx, sw)) in subs[i].iter().enumerate() {
                let g = sd[i][l];
                let kq = *sw * kern(gi, g) * qv[g];
                for (m, row) in mat[i].iter_mut().enumerate() {
                    *row += kq * lagrange(&xs, m, *sx);
                }
            }
        }
        f_nodes[pi] = solve_dense(mat, rhs)?;
    }
    let all_x: Vec<f64> = layout.iter().flat_map(|(n, _)| n.iter().map(|(x, _)| *x)).collect();
    let all_f: Vec<C> = f_nodes.into_iter().flatten().collect();
    let stride = (all_x.len() / samples.max(1)).max(1);
    let pick: Vec<usize> = (0..all_x.len()).step_by(stride).take(samples).collect();
    let xs: Vec<f64> = pick.iter().map(|i| all_x[*i]).collect();
    let ode = jost_plus(pair, point, &xs, None, ctl)?;
    let scale = ode.iter().map(|v| v.f.norm()).fold(0.0, f64::max).max(1e-300);
    Ok(pick.iter().zip(&ode).map(|(i, v)| (all_f[*i] - v.f).norm()).fold(0.0, f64::max) / scale)
}

/// `f₊(0) − 1 − ∫φ q f₊` and `f₊′(0) − m₊ + ∫θ q f₊`, relative to `1 + |f₊(0)|`.
pub fn boundary_identities(pair: &PotentialPair, point: &MomentumPoint, ctl: &StepControl) -> Result<(f64, f64)> {
    let z = point.z;
    let b = jost_build(pair, point, None, ctl)?;
    let t = pair.t();
    let z2 = z * z;
    let rhs = move |x: f64, m: &LocalMedium<'_>, y: &[C; 8]| {
        let vp = C::new(m.p(x), 0.0) - z2;
        let qx = m.q(x);
        [y[1], (vp + qx) * y[0], y[3], vp * y[2], y[5], vp * y[4], qx * y[4] * y[0], qx * y[2] * y[0]]
    };
    let ft = fundamental_at(&pair.p, z, t, ctl)?;
    let y0 = [b.psi_t[0], b.psi_t[1], ft.theta, ft.dtheta, ft.phi, ft.dphi, ZERO, ZERO];
    let y = propagate(&pair.p, Some(&pair.q), t, 0.0, y0, 0.0, ctl, &rhs, Mesh::Adaptive)?;
    let (int_phi, int_theta) = (-y[6], -y[7]);
    let scale = 1.0 + b.f0[0].norm() + b.f0[1].norm();
    Ok(((b.f0[0] - 1.0 - int_phi).norm() / scale, (b.f0[1] - b.m.m_plus + int_theta).norm() / scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::floquet::{band_edges, bottom_of_spectrum, I};
    use crate::potential::{box_potential, step_potential, CompactPotential, PeriodicPotential};

    fn ctl() -> StepControl {
        StepControl::default()
    }

    fn mathieu() -> PeriodicPotential {
        let p = PeriodicPotential::fourier(0.0, vec![2.0], vec![]);
        let e0 = bottom_of_spectrum(&p, &ctl()).unwrap();
        p.shifted(-e0)
    }

    fn free_box(h: f64) -> PotentialPair {
        PotentialPair::new(PeriodicPotential::zero(), box_potential(h, 0.0, 1.0, 1.0).unwrap())
    }

    /// Interface-matching square-well data `(f₊(0), f₊′(0))` for `p = 0`, `q = h` on `[0, l]`.
    fn well_jost(z: C, h: f64, l: f64) -> (C, C) {
        let kap = (z * z - h).sqrt();
        let e = (I * z * l).exp();
        let (c, s) = ((kap * l).cos(), (kap * l).sin());
        (e * (c - I * z / kap * s), e * (kap * s + I * z * c))
    }

    #[test]
    fn free_reduction() {
        let pair = PotentialPair::new(PeriodicPotential::zero(), CompactPotential::zero(1.0).unwrap());
        for z in [C::new(2.3, 0.0), C::new(5.0, 1.0), C::new(-3.0, -2.0)] {
            let pt = MomentumPoint::new(z);
            let b = jost_build(&pair, &pt, None, &ctl()).unwrap();
            assert!((b.f0[0] - 1.0).norm() < 1e-11 && (b.f0[1] - I * z).norm() < 1e-10);
            let x = xi(&pair, &pt, &ctl()).unwrap();
            assert!((x - 2.0 * I * z.sin()).norm() < 1e-10 * (1.0 + x.norm()), "{z}: {x}");
            let aj = aj(&pair, z, &ctl()).unwrap();
            assert!(aj.a.norm() < 1e-12 && aj.j.norm() < 1e-11);
        }
    }

    #[test]
    fn square_well_jost_matches_closed_form() {
        let pair = free_box(3.0);
        for z in [C::new(1.7, 0.0), C::new(4.2, 0.3), C::new(2.5, -0.8), C::new(0.4, 1.5)] {
            let b = jost_build(&pair, &MomentumPoint::new(z), None, &ctl()).unwrap();
            let (f, df) = well_jost(z, 3.0, 1.0);
            assert!((b.f0[0] - f).norm() < 1e-9 * (1.0 + f.norm()), "{z}");
            assert!((b.f0[1] - df).norm() < 1e-9 * (1.0 + df.norm()));
            assert!((b.w() - (df + I * z * f)).norm() < 1e-9 * (1.0 + b.w().norm()));
        }
    }

    #[test]
    fn wronskian_integral_forms_agree() {
        let q = step_potential(1.0, -0.6, 0.37, 1.0).unwrap();
        let pair = PotentialPair::new(mathieu(), q);
        for z in [C::new(2.1, 0.0), C::new(3.3, 0.7), C::new(6.0, -1.0)] {
            let w = wronskians(&pair, &MomentumPoint::new(z), None, &ctl()).unwrap();
            let scale = 1.0 + w.s.norm() + w.w.norm();
            assert!((w.s - w.s_integral.unwrap()).norm() < 1e-9 * scale, "{z}");
            assert!((w.w - w.w_integral.unwrap()).norm() < 1e-9 * scale, "{z}");
        }
    }

    #[test]
    fn aj_closed_form_matches_quadrature() {
        let q = step_potential(2.0, -1.0, 0.3, 1.5).unwrap();
        let pair = PotentialPair::new(mathieu(), q);
        for z in [C::new(1.4, 0.0), C::new(3.9, 0.5), C::new(7.2, -2.0), C::new(0.0, 2.5)] {
            let v = aj(&pair, z, &ctl()).unwrap();
            let (a, j) = aj_quadrature(&pair, z, &ctl()).unwrap().unwrap();
            assert!((v.a - a).norm() < 1e-10 * (1.0 + a.norm()), "{z}: {} {}", v.a, a);
            assert!((v.j - j).norm() < 1e-10 * (1.0 + j.norm()), "{z}: {} {}", v.j, j);
        }
    }

    #[test]
    fn aj_real_on_real_axis_and_xi_two_routes() {
        let q = step_potential(1.0, -0.5, 0.4, 1.0).unwrap();
        let pair = PotentialPair::new(mathieu(), q);
        let bands = band_edges(&pair.p, 4, &ctl()).unwrap();
        for x in [0.7, 2.9, 3.1, 5.5, 6.3, 9.0] {
            let v = aj(&pair, C::new(x, 0.0), &ctl()).unwrap();
            assert!(v.a.im.abs() < 1e-9 && v.j.im.abs() < 1e-9);
            let bnd = scattering_bundle(&pair, &MomentumPoint::new(C::new(x, 0.0)), Some(&bands), &ctl()).unwrap();
            if !bnd.near_edge {
                assert!(bnd.resid_xi < 1e-7, "x={x}: {}", bnd.resid_xi);
            }
            assert!(bnd.resid_f < 1e-7);
        }
    }

    #[test]
    fn xi_is_real_on_gap_rims() {
        let q = box_potential(1.5, 0.0, 1.0, 1.0).unwrap();
        let pair = PotentialPair::new(mathieu(), q);
        let bands = band_edges(&pair.p, 2, &ctl()).unwrap();
        let g = bands.gaps[0];
        for j in 1..8 {
            let x = g.e_minus + g.len() * j as f64 / 8.0;
            for upper in [true, false] {
                let v = xi(&pair, &MomentumPoint::on_rim(x, 1, upper), &ctl()).unwrap();
                assert!(v.im.abs() < 1e-9, "{v}");
            }
        }
    }

    #[test]
    fn unitarity_on_bands() {
        let q = step_potential(2.0, -1.0, 0.5, 2.0).unwrap();
        let pair = PotentialPair::new(mathieu(), q);
        let bands = band_edges(&pair.p, 4, &ctl()).unwrap();
        for x in [1.0, 2.0, 4.5, 7.0, 10.5] {
            if bands.locate(x).is_err() && !bands.near_edge(x, 1e-3) {
                let s = scattering_coeffs(&pair, x, Some(&bands), &ctl()).unwrap();
                assert!(s.unitarity.abs() < 1e-8, "x={x}: {}", s.unitarity);
                assert!(s.a.norm() >= 1.0 - 1e-10);
            }
        }
        let g = bands.gaps[0];
        assert!(matches!(scattering_coeffs(&pair, 0.5 * (g.e_minus + g.e_plus), Some(&bands), &ctl()), Err(HillError::BandOnly(_))));
    }

    #[test]
    fn volterra_and_boundary_identities() {
        let q = step_potential(1.0, -2.0, 0.45, 1.0).unwrap();
        let pair = PotentialPair::new(mathieu(), q);
        for z in [C::new(2.0, 0.4), C::new(5.5, 0.0), C::new(3.0, -0.5)] {
            let pt = MomentumPoint::new(z);
            let r = volterra_check(&pair, &pt, 32, &ctl()).unwrap();
            assert!(r < 1e-8, "{z}: {r}");
            let (b1, b2) = boundary_identities(&pair, &pt, &ctl()).unwrap();
            assert!(b1 < 1e-8 && b2 < 1e-8);
        }
    }

    #[test]
    fn unperturbed_edges_are_zeros_of_xi() {
        let pair = PotentialPair::new(mathieu(), CompactPotential::zero(1.0).unwrap());
        let bands = band_edges(&pair.p, 2, &ctl()).unwrap();
        let g = bands.gaps[0];
        for e in [g.e_minus, g.e_plus] {
            let v = xi(&pair, &MomentumPoint::new(C::new(e, 0.0)), &ctl()).unwrap();
            assert!(v.norm() < 1e-6, "{v}");
        }
    }

    #[test]
    fn f_parity_and_reality() {
        let q = step_potential(1.0, -0.5, 0.4, 1.3).unwrap();
        let pair = PotentialPair::new(mathieu(), q);
        for z in [C::new(2.0, 0.5), C::new(0.0, 1.2), C::new(3.3, 0.0)] {
            let (f1, s1) = f_and_s(&pair, z, &ctl()).unwrap();
            let (f2, _) = f_and_s(&pair, -z, &ctl()).unwrap();
            assert!((f1 - f2).norm() < 1e-9 * (1.0 + f1.norm()));
            if z.re == 0.0 || z.im == 0.0 {
                assert!(f1.im.abs() < 1e-9 * (1.0 + f1.norm()));
            }
            let mono = crate::floquet::discriminant(&pair.p, z, &ctl()).unwrap();
            assert!((f1 - 4.0 * mono.one_minus_delta_sq() - s1.unwrap()).norm() < 1e-7 * (1.0 + f1.norm()));
        }
    }

    #[test]
    fn jost_large_z_tends_to_one() {
        let pair = free_box(2.0);
        for r in [20.0, 40.0, 80.0] {
            let z = C::new(r, 0.5);
            let b = jost_build(&pair, &MomentumPoint::new(z), None, &ctl()).unwrap();
            assert!((b.f0[0] - 1.0).norm() * r < 5.0);
        }
    }
}
