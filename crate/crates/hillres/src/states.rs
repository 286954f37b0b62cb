//! Zeros of `ξ` on the momentum surface: gap states, states on the imaginary axis
//! and complex resonances, with classification, counting and the forbidden-domain audit.

use crate::error::{HillError, Result};
use crate::floquet::{discriminant_dz, isin_k, BandStructure, MomentumPoint, Sheet};
use crate::ode::StepControl;
use crate::potential::PotentialPair;
use crate::quad::{find_root, golden_max};
use crate::scattering::{xi, xi_with_aj, FrozenAj};
use num_complex::Complex64 as C;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StateClass {
    Bound,
    Antibound,
    Virtual,
    Resonance,
}

impl StateClass {
    pub fn label(&self) -> &'static str {
        match self {
            StateClass::Bound => "bound",
            StateClass::Antibound => "antibound",
            StateClass::Virtual => "virtual",
            StateClass::Resonance => "resonance",
        }
    }
}

/// A located zero of `ξ`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct State {
    pub point: MomentumPoint,
    pub lambda: C,
    pub class: StateClass,
    /// Gap index; 0 for the imaginary axis.
    pub gap: Option<usize>,
    pub multiplicity: u32,
    /// `|ξ|` at the refined root.
    pub residual: f64,
    /// Sign of `(−1)^{n+1} J(λ)`.
    pub j_sign: Option<f64>,
    /// Signed displacement from the nearest gap edge for states resolved in an edge window.
    pub edge_offset: Option<f64>,
    /// The J-sign rule agrees with the rim carrying the zero.
    pub rim_check: Option<bool>,
}

impl State {
    pub fn z(&self) -> C {
        self.point.z
    }
}

/// Search tolerances and budgets.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SearchConfig {
    pub ctl: StepControl,
    /// Tighter control used for the frozen meshes inside gaps.
    pub frozen_ctl: StepControl,
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Width of the edge windows as a fraction of the gap length.
    pub edge_window: f64,
    pub virtual_tol: f64,
    pub contour_nodes: usize,
    /// Distance kept from the real axis by resonance boxes.
    pub rim_margin: f64,
    pub v_max: Option<f64>,
    pub axis_step: f64,
    pub max_depth: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            ctl: StepControl::default(),
            frozen_ctl: StepControl { rtol: 1e-13, atol: 1e-13, ..StepControl::default() },
            min_nodes: 32,
            max_nodes: 1024,
            edge_window: 1e-6,
            virtual_tol: 1e-9,
            contour_nodes: 64,
            rim_margin: 1e-3,
            v_max: None,
            axis_step: 0.01,
            max_depth: 14,
        }
    }
}

/// Sign rule: `(−1)^{n+1}J > 0` bound, `< 0` antibound, negligible `J` virtual.
pub fn classify_state(signed_j: f64, a: f64, sinh_scale: f64, tol: f64) -> StateClass {
    if signed_j.abs() < tol * (1.0 + a.abs()) * (1.0 + sinh_scale.abs()) {
        StateClass::Virtual
    } else if signed_j > 0.0 {
        StateClass::Bound
    } else {
        StateClass::Antibound
    }
}

fn chebyshev_lobatto(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|j| 0.5 * (a + b) - 0.5 * (b - a) * (PI * j as f64 / n as f64).cos()).collect()
}

/// `i sin k` on the upper and lower rims of a gap, where `|Δ| ≥ 1`.
fn gap_isin(d: f64) -> (f64, f64) {
    let disc = ((d.abs() - 1.0) * (d.abs() + 1.0)).max(0.0).sqrt();
    let big = d + d.signum() * disc;
    (1.0 / big - d, big - d)
}

#[allow(clippy::too_many_arguments)]
fn rim_state(
    pair: &PotentialPair,
    frozen: &FrozenAj,
    n: usize,
    x: f64,
    j_ref: f64,
    a_ref: f64,
    h: f64,
    multiplicity: u32,
    edge_offset: Option<f64>,
    cfg: &SearchConfig,
) -> Result<State> {
    let sgn = if n.is_multiple_of(2) { -1.0 } else { 1.0 };
    let rule = classify_state(sgn * j_ref, a_ref, h.sinh(), cfg.virtual_tol);
    let v = frozen.eval(pair, x, &cfg.frozen_ctl)?;
    let up = MomentumPoint::on_rim(x, n, true);
    let lo = MomentumPoint::on_rim(x, n, false);
    let (is_up, is_lo) = gap_isin(v.mono.delta.re);
    let xi_up = v.xi(C::new(is_up, 0.0));
    let xi_lo = v.xi(C::new(is_lo, 0.0));
    // The J-sign rule presumes 1 + A > 0; the rim carrying the zero decides.
    let (class, point, mine) = if xi_up.norm() <= xi_lo.norm() {
        (StateClass::Bound, up, xi_up)
    } else {
        (StateClass::Antibound, lo, xi_lo)
    };
    Ok(State {
        point,
        lambda: C::new(x * x, 0.0),
        class,
        gap: Some(n),
        multiplicity,
        residual: mine.norm(),
        j_sign: Some((sgn * j_ref).signum()),
        edge_offset,
        rim_check: Some(rule == class),
    })
}

/// All states on the closure of open gap `n`.
pub fn locate_gap_states(pair: &PotentialPair, bands: &BandStructure, n: usize, cfg: &SearchConfig) -> Result<Vec<State>> {
    let g = *bands.gap(n).ok_or(HillError::GapUnresolved(n))?;
    if g.closed {
        return Err(HillError::ClosedGap(n));
    }
    let fctl = &cfg.frozen_ctl;
    let frozen = FrozenAj::record(pair, 0.5 * (g.e_minus + g.e_plus), fctl)?;
    let len = g.len();
    let w = (cfg.edge_window * len).max(64.0 * f64::EPSILON * g.e_plus);
    let fval = |x: f64| frozen.eval(pair, x, fctl).map(|v| v.f().re);
    let mut states = Vec::new();

    // Edge windows: F(e) = J(e)², root offset from the linear model δ = −J²/F′(e).
    for (e, inward) in [(g.e_minus, 1.0), (g.e_plus, -1.0)] {
        let v = frozen.eval(pair, e, fctl)?;
        let (a, j) = (v.a.re, v.j.re);
        if classify_state(j, a, g.h.sinh(), cfg.virtual_tol) == StateClass::Virtual {
            states.push(State {
                point: MomentumPoint::on_rim(e, n, true),
                lambda: C::new(e * e, 0.0),
                class: StateClass::Virtual,
                gap: Some(n),
                multiplicity: 1,
                residual: v.j.norm(),
                j_sign: Some(0.0),
                edge_offset: Some(0.0),
                rim_check: None,
            });
            continue;
        }
        let f_in = fval(e + inward * w)?;
        if f_in >= 0.0 {
            continue;
        }
        let m = discriminant_dz(&pair.p, C::new(e, 0.0), &cfg.ctl)?;
        let (d, dd) = (m.delta.re, m.dz.unwrap()[0].re);
        let hj = 1e-4 * len;
        let dj = (frozen.eval(pair, e + hj, fctl)?.j.re - frozen.eval(pair, e - hj, fctl)?.j.re) / (2.0 * hj);
        let fprime = -8.0 * d * dd * (1.0 + a) * (1.0 + a) + 2.0 * j * dj;
        let delta = -j * j / fprime;
        let (x, off) = if delta * inward > 0.0 && delta.abs() < w {
            (e + delta, delta)
        } else {
            let r = find_root(|x| fval(x).unwrap_or(f64::NAN), e, e + inward * w, 4.0 * f64::EPSILON * e);
            (r, r - e)
        };
        states.push(rim_state(pair, &frozen, n, x, j, a, g.h, 1, Some(off), cfg)?);
    }

    // Interior: Chebyshev nodes plus geometric nodes towards the windows.
    let (a, b) = (g.e_minus + w, g.e_plus - w);
    let mut nodes_n = cfg.min_nodes;
    loop {
        let mut xs = chebyshev_lobatto(a, b, nodes_n);
        let mut off = 4.0 * w;
        while off < 0.25 * len {
            xs.push(a + off);
            xs.push(b - off);
            off *= 4.0;
        }
        xs.sort_by(f64::total_cmp);
        xs.dedup_by(|u, v| (*u - *v).abs() <= 4.0 * f64::EPSILON * u.abs());
        let fs: Vec<f64> = xs.par_iter().map(|x| fval(*x)).collect::<Result<_>>()?;
        let mut interior = Vec::new();
        for i in 0..xs.len() - 1 {
            let (fl, fr) = (fs[i], fs[i + 1]);
            if fl == 0.0 {
                interior.push((xs[i], 1u32));
            } else if fl * fr < 0.0 {
                let r = find_root(|x| fval(x).unwrap_or(f64::NAN), xs[i], xs[i + 1], 4.0 * f64::EPSILON * xs[i]);
                interior.push((r, 1));
            } else if i > 0 && fs[i - 1] * fl > 0.0 && fl.abs() < fs[i - 1].abs() && fl.abs() < fr.abs() {
                // Possible tangency between samples.
                let s = fl.signum();
                let xm = golden_max(|x| -s * fval(x).unwrap_or(f64::NAN), xs[i - 1], xs[i + 1], 1e-14 * xs[i]);
                let fm = fval(xm)?;
                let scale = fs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if fm * s <= 1e-10 * scale {
                    interior.push((xm, 2));
                }
            }
        }
        let count: u32 = states.iter().map(|s: &State| s.multiplicity).sum::<u32>() + interior.iter().map(|r| r.1).sum::<u32>();
        if count % 2 == 1 {
            if nodes_n >= cfg.max_nodes {
                return Err(HillError::ParityViolation { n, count: count as usize });
            }
            nodes_n *= 2;
            continue;
        }
        for (x, mult) in interior {
            let v = frozen.eval(pair, x, fctl)?;
            states.push(rim_state(pair, &frozen, n, x, v.j.re, v.a.re, g.h, mult, None, cfg)?);
        }
        break;
    }
    states.sort_by(|a, b| a.point.z.re.total_cmp(&b.point.z.re));

    if !pair.q.is_zero() && n as f64 >= pair.constants.far_gap_threshold(pair.t()) {
        let ok = states.len() == 2
            && states.iter().all(|s| s.multiplicity == 1 && s.class != StateClass::Virtual)
            && states[0].point.z.re >= g.e_minus
            && states[0].point.z.re < g.e_ext
            && states[1].point.z.re > g.e_ext
            && states[1].point.z.re <= g.e_plus;
        if !ok {
            return Err(HillError::DichotomyViolation { n, count: states.len() });
        }
    }
    Ok(states)
}

/// Gap states for every open gap `1..=n_max` of `bands`.
pub fn locate_all_gap_states(pair: &PotentialPair, bands: &BandStructure, cfg: &SearchConfig) -> Result<Vec<State>> {
    let per: Vec<Vec<State>> =
        bands.open_gaps().collect::<Vec<_>>().par_iter().map(|g| locate_gap_states(pair, bands, g.n, cfg)).collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

/// Real `ξ` and `J` at `iy`. Above the axis the Jost route avoids the cancellation
/// between the exponentially large terms of `2i sin k (1+A) − J`.
fn axis_xi(pair: &PotentialPair, y: f64, ctl: &StepControl) -> Result<(f64, f64)> {
    let pt = MomentumPoint::new(C::new(0.0, y));
    let (v, aj) = xi_with_aj(pair, &pt, ctl)?;
    Ok((v.re, aj.j.re))
}

/// Zeros of `ξ` on `i(0, v_max]` (bound) and `i[−v_max, 0)` (antibound).
pub fn locate_imaginary_states(pair: &PotentialPair, cfg: &SearchConfig) -> Result<Vec<State>> {
    let v_max = cfg.v_max.unwrap_or(pair.constants.q_norm_t + pair.constants.p_norm1 + 1.0);
    // Bound states sit above inf(p + q).
    let floor = pair.p.min_value() + pair.q.min_value().min(0.0);
    let v_bound = v_max.min((-floor).max(0.0).sqrt() + 0.5);
    let mut ys: Vec<f64> = Vec::new();
    let mut y = 1e-8;
    while y < 0.5f64.min(v_max) {
        ys.push(y);
        y *= 2.0;
    }
    let mut y = 0.5f64.min(v_max);
    while y < v_max {
        ys.push(y);
        y += cfg.axis_step;
    }
    ys.push(v_max);
    let mut out = Vec::new();
    for s in [1.0, -1.0] {
        let ys: Vec<f64> = if s > 0.0 { ys.iter().copied().filter(|y| *y <= v_bound).chain([v_bound]).collect() } else { ys.clone() };
        let vals: Vec<(f64, f64)> = ys.par_iter().map(|y| axis_xi(pair, s * y, &cfg.ctl)).collect::<Result<_>>()?;
        for i in 0..ys.len() - 1 {
            if vals[i].0 * vals[i + 1].0 < 0.0 || vals[i].0 == 0.0 {
                let r = if vals[i].0 == 0.0 {
                    ys[i]
                } else {
                    find_root(
                        |y| axis_xi(pair, s * y, &cfg.ctl).map(|v| v.0).unwrap_or(f64::NAN),
                        ys[i],
                        ys[i + 1],
                        4.0 * f64::EPSILON * ys[i + 1],
                    )
                };
                let z = C::new(0.0, s * r);
                let (x0, j) = axis_xi(pair, s * r, &cfg.ctl)?;
                let class = if s > 0.0 { StateClass::Bound } else { StateClass::Antibound };
                out.push(State {
                    point: MomentumPoint::new(z),
                    lambda: z * z,
                    class,
                    gap: Some(0),
                    multiplicity: 1,
                    residual: x0.abs(),
                    j_sign: Some((-j).signum()),
                    edge_offset: None,
                    rim_check: Some(((-j).signum() > 0.0) == (s > 0.0)),
                });
            }
        }
    }
    // A bound state on iℝ₊ never has its mirror as a zero.
    for st in out.iter().filter(|s| s.class == StateClass::Bound) {
        let mirror = xi(pair, &MomentumPoint::new(-st.point.z), &cfg.ctl)?;
        let (_, j) = axis_xi(pair, st.point.z.im, &cfg.ctl)?;
        if mirror.norm() < 1e-8 * (1.0 + j.abs()) {
            return Err(HillError::ExclusionViolation { re: 0.0, im: st.point.z.im });
        }
    }
    Ok(out)
}

/// Bound/antibound mutual exclusion at mirrored points over a list of states.
pub fn check_exclusion(states: &[State]) -> Result<()> {
    for b in states.iter().filter(|s| s.class == StateClass::Bound) {
        for a in states.iter().filter(|s| s.class == StateClass::Antibound) {
            let same_rim_point = b.point.is_real() && a.point.is_real() && (a.point.z - b.point.z).norm() <= 1e-12 * (1.0 + b.point.z.norm());
            let mirrored_axis = !b.point.is_real() && (a.point.z + b.point.z).norm() <= 1e-12 * (1.0 + b.point.z.norm());
            if same_rim_point || mirrored_axis {
                return Err(HillError::ExclusionViolation { re: b.point.z.re, im: b.point.z.im });
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Argument principle in the lower half plane.

fn xi_lower(pair: &PotentialPair, z: C, ctl: &StepControl) -> Result<C> {
    xi(pair, &MomentumPoint { z, sheet: Sheet::NonPhysical, rim: None }, ctl)
}

/// Total change of `arg ξ / 2π` along a polyline, refining any step whose argument
/// increment exceeds π/4.
fn polyline_winding(pair: &PotentialPair, pts: &[C], ctl: &StepControl, min_step: f64) -> Result<f64> {
    let vals: Vec<C> = pts.par_iter().map(|z| xi_lower(pair, *z, ctl)).collect::<Result<_>>()?;
    let mut total = 0.0;
    for i in 0..pts.len() - 1 {
        total += segment_arg(pair, pts[i], pts[i + 1], vals[i], vals[i + 1], ctl, min_step, 0)?;
    }
    Ok(total / (2.0 * PI))
}

#[allow(clippy::too_many_arguments)]
fn segment_arg(pair: &PotentialPair, za: C, zb: C, fa: C, fb: C, ctl: &StepControl, min_step: f64, depth: u32) -> Result<f64> {
    if fa.norm() == 0.0 || fb.norm() == 0.0 {
        return Err(HillError::WindingNonInteger { winding: f64::NAN, bbox: [za.re, zb.re, za.im, zb.im] });
    }
    let d = (fb / fa).arg();
    if d.abs() <= PI / 4.0 {
        return Ok(d);
    }
    if (zb - za).norm() < min_step || depth > 60 {
        return Err(HillError::WindingNonInteger { winding: d / (2.0 * PI), bbox: [za.re, zb.re, za.im, zb.im] });
    }
    let zm = 0.5 * (za + zb);
    let fm = xi_lower(pair, zm, ctl)?;
    Ok(segment_arg(pair, za, zm, fa, fm, ctl, min_step, depth + 1)? + segment_arg(pair, zm, zb, fm, fb, ctl, min_step, depth + 1)?)
}

fn box_contour(bbox: [f64; 4], per_side: usize) -> Vec<C> {
    let [x0, x1, y0, y1] = bbox;
    let corners = [C::new(x0, y0), C::new(x1, y0), C::new(x1, y1), C::new(x0, y1), C::new(x0, y0)];
    let mut pts = Vec::new();
    for w in corners.windows(2) {
        for j in 0..per_side {
            pts.push(w[0] + (w[1] - w[0]) * (j as f64 / per_side as f64));
        }
    }
    pts.push(corners[4]);
    pts
}

/// Number of zeros of `ξ` inside a box in the lower half plane.
pub fn box_winding(pair: &PotentialPair, bbox: [f64; 4], cfg: &SearchConfig) -> Result<i64> {
    let size = (bbox[1] - bbox[0]).max(bbox[3] - bbox[2]);
    let pts = box_contour(bbox, cfg.contour_nodes);
    let w = polyline_winding(pair, &pts, &cfg.ctl, 1e-12 * size)?;
    let r = w.round();
    if (w - r).abs() > 1e-3 {
        return Err(HillError::WindingNonInteger { winding: w, bbox });
    }
    Ok(r as i64)
}

fn newton_xi(pair: &PotentialPair, z0: C, scale: f64, ctl: &StepControl) -> Option<(C, f64)> {
    let mut z = z0;
    let h = 1e-6 * scale.max(1e-3);
    for _ in 0..60 {
        let f = xi_lower(pair, z, ctl).ok()?;
        let fp = (xi_lower(pair, z + h, ctl).ok()? - xi_lower(pair, z - h, ctl).ok()?) / (2.0 * h);
        let dz = f / fp;
        if !dz.re.is_finite() || !dz.im.is_finite() {
            return None;
        }
        z -= dz;
        if dz.norm() <= 1e-13 * (1.0 + z.norm()) {
            let r = xi_lower(pair, z, ctl).ok()?;
            return Some((z, r.norm()));
        }
    }
    None
}

fn inside(bbox: [f64; 4], z: C, slack: f64) -> bool {
    z.re >= bbox[0] - slack && z.re <= bbox[1] + slack && z.im >= bbox[2] - slack && z.im <= bbox[3] + slack
}

fn resonance_state(z: C, residual: f64, multiplicity: u32) -> State {
    State {
        point: MomentumPoint { z, sheet: Sheet::NonPhysical, rim: None },
        lambda: z * z,
        class: StateClass::Resonance,
        gap: None,
        multiplicity,
        residual,
        j_sign: None,
        edge_offset: None,
        rim_check: None,
    }
}

fn search_box(pair: &PotentialPair, bbox: [f64; 4], count: i64, depth: usize, cfg: &SearchConfig) -> Result<Vec<State>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let size = (bbox[1] - bbox[0]).max(bbox[3] - bbox[2]);
    let center = C::new(0.5 * (bbox[0] + bbox[1]), 0.5 * (bbox[2] + bbox[3]));
    if count == 1 {
        if let Some((z, r)) = newton_xi(pair, center, size, &cfg.ctl) {
            if inside(bbox, z, 1e-9 * size) {
                return Ok(vec![resonance_state(z, r, 1)]);
            }
        }
    }
    if depth >= cfg.max_depth {
        let (z, r) = newton_xi(pair, center, size, &cfg.ctl).unwrap_or((center, f64::NAN));
        return Ok(vec![resonance_state(z, r, count as u32)]);
    }
    // Off-centre split keeps the cut lines away from symmetric zero positions.
    let xm = bbox[0] + 0.5123 * (bbox[1] - bbox[0]);
    let ym = bbox[2] + 0.4877 * (bbox[3] - bbox[2]);
    let kids = [[bbox[0], xm, bbox[2], ym], [xm, bbox[1], bbox[2], ym], [bbox[0], xm, ym, bbox[3]], [xm, bbox[1], ym, bbox[3]]];
    let counts: Vec<i64> = kids.par_iter().map(|k| box_winding(pair, *k, cfg)).collect::<Result<_>>()?;
    if counts.iter().sum::<i64>() != count {
        return Err(HillError::WindingNonInteger { winding: counts.iter().sum::<i64>() as f64, bbox });
    }
    let found: Vec<Vec<State>> = kids
        .par_iter()
        .zip(counts.par_iter())
        .map(|(k, c)| search_box(pair, *k, *c, depth + 1, cfg))
        .collect::<Result<_>>()?;
    Ok(found.into_iter().flatten().collect())
}

/// Zeros of `ξ` inside a box strictly in the lower half plane.
pub fn locate_resonances(pair: &PotentialPair, bbox: [f64; 4], cfg: &SearchConfig) -> Result<Vec<State>> {
    if bbox[3] > -cfg.rim_margin || bbox[0] >= bbox[1] || bbox[2] >= bbox[3] {
        return Err(HillError::Validation(format!("resonance box {bbox:?} must lie in Im z ≤ −{}", cfg.rim_margin)));
    }
    let mut last = None;
    for attempt in 0..4 {
        let jig = 1e-4 * attempt as f64 * (bbox[1] - bbox[0]).min(bbox[3] - bbox[2]);
        let b = [bbox[0] - jig, bbox[1] + 0.7 * jig, bbox[2] - 0.3 * jig, bbox[3] - jig];
        match box_winding(pair, b, cfg).and_then(|c| search_box(pair, b, c, 0, cfg)) {
            Ok(mut v) => {
                v.retain(|s| inside(bbox, s.point.z, 0.0));
                v.sort_by(|a, b| a.point.z.re.total_cmp(&b.point.z.re).then(a.point.z.im.total_cmp(&b.point.z.im)));
                return Ok(v);
            }
            Err(e @ HillError::WindingNonInteger { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap())
}

/// Checks that off-axis zeros come in pairs `z, −z̄`.
pub fn check_symmetry(states: &[State], tol: f64) -> Result<()> {
    for s in states.iter().filter(|s| s.class == StateClass::Resonance) {
        let z = s.point.z;
        if z.re.abs() <= tol {
            continue;
        }
        let m = -z.conj();
        if !states.iter().any(|o| o.class == StateClass::Resonance && (o.point.z - m).norm() <= tol * (1.0 + z.norm())) {
            return Err(HillError::SymmetryViolation { re: z.re, im: z.im });
        }
    }
    Ok(())
}

/// Number of zeros in `{|z| < r, Im z < −δ}` from the winding along its boundary.
pub fn half_disk_winding(pair: &PotentialPair, r: f64, cfg: &SearchConfig) -> Result<f64> {
    let d = cfg.rim_margin;
    let x = (r * r - d * d).sqrt();
    let n_line = ((2.0 * x) / 0.05).ceil() as usize;
    let mut pts: Vec<C> = (0..=n_line).map(|j| C::new(-x + 2.0 * x * j as f64 / n_line as f64, -d)).collect();
    let a0 = (d / r).asin();
    let n_arc = ((PI * r) / 0.05).ceil() as usize;
    for j in 1..=n_arc {
        let th = -a0 - (PI - 2.0 * a0) * j as f64 / n_arc as f64;
        pts.push(C::from_polar(r, th));
    }
    pts.push(pts[0]);
    // The path above runs clockwise around the half disk.
    Ok(-polyline_winding(pair, &pts, &cfg.ctl, 1e-12 * r)?)
}

/// Counting report for one radius.
#[derive(Debug, Clone, Serialize)]
pub struct CountingReport {
    pub r: f64,
    pub resonances: usize,
    pub antibound_axis: usize,
    /// Zeros with `Im z < 0` and `|z| ≤ r`.
    pub n_minus: usize,
    /// Same count from the winding along the half-disk boundary.
    pub n_winding: f64,
    pub predicted_slope: f64,
    /// `N₋ π / (2 t r)`.
    pub slope_ratio: f64,
    pub deviation: f64,
    /// Zeros per annulus of width `r/10`.
    pub annuli: Vec<usize>,
    pub n_boxes: usize,
    pub depth: f64,
    pub max_residual: f64,
    pub states: Vec<State>,
}

/// Counts zeros of `ξ` in the lower half disk of radius `r`.
pub fn count_states(pair: &PotentialPair, r: f64, cfg: &SearchConfig) -> Result<CountingReport> {
    let t = pair.t();
    let d = cfg.rim_margin;
    let n_winding = half_disk_winding(pair, r, cfg)?;
    let axis_cfg = SearchConfig { v_max: Some(r), axis_step: cfg.axis_step.max(r / 4000.0), ..*cfg };
    let axis: Vec<State> = locate_imaginary_states(pair, &axis_cfg)?
        .into_iter()
        .filter(|s| s.class == StateClass::Antibound && s.point.z.im < -d)
        .collect();
    let width = (r / 12.0).clamp(2.0, 8.0);
    let mut depth = (2.0 + 1.5 * (1.0 + 4.0 * r * r).ln() / t).min(r);
    loop {
        let mut boxes = Vec::new();
        let mut x = d;
        while x < r {
            let x1 = (x + width).min(r);
            boxes.push([x, x1, -depth, -d]);
            boxes.push([-x1, -x, -depth, -d]);
            x = x1;
        }
        let found: Vec<Vec<State>> = boxes.iter().map(|b| locate_resonances(pair, *b, cfg)).collect::<Result<_>>()?;
        let mut states: Vec<State> = found.into_iter().flatten().filter(|s| s.point.z.norm() <= r).collect();
        check_symmetry(&states, 1e-7)?;
        let resonances: usize = states.iter().map(|s| s.multiplicity as usize).sum();
        let n_minus = resonances + axis.len();
        if (n_minus as f64 - n_winding).abs() > 0.5 && depth < r {
            depth = (2.0 * depth).min(r);
            continue;
        }
        states.extend(axis.iter().copied());
        states.sort_by(|a, b| a.point.z.norm().total_cmp(&b.point.z.norm()));
        let mut annuli = vec![0usize; 10];
        for s in &states {
            let k = ((s.point.z.norm() / r) * 10.0).floor().min(9.0) as usize;
            annuli[k] += s.multiplicity as usize;
        }
        let slope_ratio = n_minus as f64 * PI / (2.0 * t * r);
        let max_residual = states.iter().map(|s| s.residual).fold(0.0, f64::max);
        return Ok(CountingReport {
            r,
            resonances,
            antibound_axis: axis.len(),
            n_minus,
            n_winding,
            predicted_slope: 2.0 * t / PI,
            slope_ratio,
            deviation: slope_ratio - 1.0,
            annuli,
            n_boxes: boxes.len(),
            depth,
            max_residual,
            states,
        });
    }
}

/// Result of sampling the forbidden domain.
#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub r_max: f64,
    /// `180 e^{2‖p‖₁}`.
    pub r_floor: f64,
    pub c_f: f64,
    pub samples: usize,
    pub min_abs_xi: f64,
    /// `min |ξ| / |2 sin k|` over the samples.
    pub min_ratio: f64,
    pub located_checked: usize,
    pub offending: Vec<[f64; 2]>,
}

/// Membership in `D_F = {|z| > max(180e^{2‖p‖₁}, C_F e^{2t|Im z|})} ∩ {Im z < 0}`.
pub fn in_forbidden_domain(pair: &PotentialPair, z: C) -> bool {
    let c = &pair.constants;
    z.im < 0.0 && z.norm() > (180.0 * (2.0 * c.p_norm1).exp()).max(c.c_f * (2.0 * pair.t() * z.im.abs()).exp())
}

/// Samples `|ξ|` inside the forbidden domain up to `|z| ≤ r_max` and checks located states.
pub fn forbidden_domain_audit(pair: &PotentialPair, r_max: f64, located: &[State], cfg: &SearchConfig) -> Result<AuditReport> {
    let c = pair.constants;
    let t = pair.t();
    let r_floor = 180.0 * (2.0 * c.p_norm1).exp();
    let mut pts = Vec::new();
    if r_max > r_floor {
        let nr = 24;
        for i in 0..nr {
            let rho = r_floor * (1.0 + 1e-9) + (r_max - r_floor * (1.0 + 1e-9)) * (i as f64 + 0.5) / nr as f64;
            if rho <= c.c_f {
                continue;
            }
            let yb = ((rho / c.c_f).ln() / (2.0 * t)).min(rho);
            if yb <= cfg.rim_margin {
                continue;
            }
            for k in 0..8 {
                let y = cfg.rim_margin + (yb - cfg.rim_margin) * (k as f64 + 0.5) / 8.0;
                let x = (rho * rho - y * y).sqrt();
                pts.push(C::new(x, -y));
                pts.push(C::new(-x, -y));
            }
        }
    }
    let vals: Vec<(f64, f64)> = pts
        .par_iter()
        .map(|z| {
            let pt = MomentumPoint::new(*z);
            let (v, aj) = xi_with_aj(pair, &pt, &cfg.ctl)?;
            let s = isin_k(&aj.mono, &pt)?;
            Ok((v.norm(), v.norm() / (2.0 * s.norm())))
        })
        .collect::<Result<_>>()?;
    let min_abs_xi = vals.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
    let min_ratio = vals.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    let offending: Vec<[f64; 2]> = located
        .iter()
        .filter(|s| in_forbidden_domain(pair, s.point.z))
        .map(|s| [s.point.z.re, s.point.z.im])
        .collect();
    let report = AuditReport {
        r_max,
        r_floor,
        c_f: c.c_f,
        samples: pts.len(),
        min_abs_xi,
        min_ratio,
        located_checked: located.len(),
        offending,
    };
    if !report.offending.is_empty() || (report.samples > 0 && !(report.min_abs_xi > 0.0)) {
        return Err(HillError::AuditFailure(report.offending.len().max(1)));
    }
    Ok(report)
}

/// One row of the counting report CSV.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct CountRow {
    pub r: f64,
    #[serde(rename = "N_minus")]
    pub n_minus: usize,
    pub slope_ratio: f64,
    pub n_boxes: usize,
    pub max_residual: f64,
}

impl From<&CountingReport> for CountRow {
    fn from(c: &CountingReport) -> Self {
        Self { r: c.r, n_minus: c.n_minus, slope_ratio: c.slope_ratio, n_boxes: c.n_boxes, max_residual: c.max_residual }
    }
}

/// One row of the states CSV.
#[derive(Debug, Clone, Default, Serialize)]
pub struct StateRow {
    pub class: &'static str,
    pub n: i64,
    pub z_re: f64,
    pub z_im: f64,
    pub lambda: f64,
    pub lambda_im: f64,
    pub sheet: &'static str,
    #[serde(rename = "J_sign")]
    pub j_sign: f64,
    pub residual: f64,
    pub multiplicity: u32,
}

impl From<&State> for StateRow {
    fn from(s: &State) -> Self {
        Self {
            class: s.class.label(),
            n: s.gap.map_or(-1, |n| n as i64),
            z_re: s.point.z.re,
            z_im: s.point.z.im,
            lambda: s.lambda.re,
            lambda_im: s.lambda.im,
            sheet: s.point.sheet.label(),
            j_sign: s.j_sign.unwrap_or(0.0),
            residual: s.residual,
            multiplicity: s.multiplicity,
        }
    }
}
