//! High-gap asymptotics: gap angles, predicted gap states, edge asymptotics and the
//! bound-state count rule for `q₀ = 0`.

use crate::error::{HillError, Result};
use crate::floquet::{BandStructure, Gap};
use crate::potential::{fourier_p, qhat_polar, PotentialPair};
use crate::states::{State, StateClass};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

/// Sign convention for `sₙ = sin φₙ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum SnConvention {
    /// `sign sₙ = −sign ln|φ′(1, μₙ)|`, which matches `dμₙ²(τ)/dτ` under translation.
    #[default]
    Translation,
    /// The opposite reading.
    Opposite,
}

/// Angle data for one gap.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GapAngles {
    pub n: usize,
    pub gamma_len: f64,
    pub c: f64,
    pub s: f64,
    /// `φₙ ∈ [0, 2π)`.
    pub phi: f64,
    /// `εₙ = 1/(2πn)`.
    pub eps: f64,
}

pub fn gap_angles(g: &Gap, conv: SnConvention) -> Result<GapAngles> {
    let (a, b) = g.energies();
    let half = 0.5 * (b - a);
    if !(half > 0.0) {
        return Err(HillError::ClosedGap(g.n));
    }
    let raw = (0.5 * (a + b) - g.mu * g.mu) / half;
    if raw.abs() > 1.0 + 1e-10 {
        return Err(HillError::EdgeResolution { n: g.n, reason: format!("cₙ = {raw} outside [−1, 1]") });
    }
    let c = raw.clamp(-1.0, 1.0);
    let l = g.dphi1_mu.abs().ln();
    let mut sign = if l > 0.0 { -1.0 } else { 1.0 };
    if conv == SnConvention::Opposite {
        sign = -sign;
    }
    let s = sign * (1.0 - c * c).max(0.0).sqrt();
    Ok(GapAngles { n: g.n, gamma_len: b - a, c, s, phi: s.atan2(c).rem_euclid(2.0 * PI), eps: 1.0 / (2.0 * PI * g.n as f64) })
}

/// Angles for every open gap of `bands`.
#[derive(Debug, Clone, Serialize)]
pub struct GapAnglePack {
    pub convention: SnConvention,
    pub gaps: Vec<GapAngles>,
}

pub fn gap_angle_pack(bands: &BandStructure, conv: SnConvention) -> Result<GapAnglePack> {
    let gaps = bands.open_gaps().map(|g| gap_angles(g, conv)).collect::<Result<_>>()?;
    Ok(GapAnglePack { convention: conv, gaps })
}

/// Predicted far-gap states.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct GapPrediction {
    pub angles: GapAngles,
    pub qhat_c: f64,
    pub qhat_s: f64,
    /// Phase `τₙ` of `q̂ₙ`.
    pub tau: f64,
    pub i_minus: f64,
    pub i_plus: f64,
    pub sqrt_lam_minus: f64,
    pub sqrt_lam_plus: f64,
    /// Predicted displacements `κₙ⁻ − eₙ⁻` and `eₙ⁺ − κₙ⁺`.
    pub delta_minus: f64,
    pub delta_plus: f64,
    pub class_minus: StateClass,
    pub class_plus: StateClass,
    /// Predicted `(−1)^{n+1} J` at the two states.
    pub j_minus: f64,
    pub j_plus: f64,
    /// Bound states predicted in the physical gap when `q₀ = 0`.
    pub sigma: Option<u8>,
    pub cos_phi_tau: f64,
    /// Size of the neglected `O(εₙ)` term in `Iₙ±`: `εₙ‖q‖₁(1 + ‖p‖₁ + ‖q‖₁)`.
    pub envelope: f64,
}

impl GapPrediction {
    /// Both `|Iₙ±|` exceed `factor` times the envelope.
    pub fn resolved(&self, factor: f64) -> bool {
        self.i_minus.abs().min(self.i_plus.abs()) > factor * self.envelope
    }
}

fn class_of(i: f64) -> StateClass {
    if i > 0.0 {
        StateClass::Bound
    } else if i < 0.0 {
        StateClass::Antibound
    } else {
        StateClass::Virtual
    }
}

pub fn predict_gap_states(pair: &PotentialPair, bands: &BandStructure, n: usize, conv: SnConvention) -> Result<GapPrediction> {
    let g = bands.gap(n).ok_or(HillError::GapUnresolved(n))?;
    if g.closed {
        return Err(HillError::ClosedGap(n));
    }
    let angles = gap_angles(g, conv)?;
    let (qc, qs) = pair.q.fourier_cs(n);
    let (_, tau) = qhat_polar(&pair.q, n);
    let q0 = pair.q0();
    let r = -angles.c * qc + angles.s * qs;
    let (i_minus, i_plus) = (q0 + r, -q0 + r);
    let scale = 2.0 * angles.gamma_len / (4.0 * PI * n as f64).powi(3);
    let (dm, dp) = (scale * i_minus * i_minus, scale * i_plus * i_plus);
    let jscale = angles.gamma_len / (2.0 * PI * n as f64).powi(2);
    let cos_phi_tau = (angles.phi + tau).cos();
    let sigma = (q0 == 0.0).then_some(if cos_phi_tau < 0.0 { 2 } else if cos_phi_tau > 0.0 { 0 } else { 1 });
    Ok(GapPrediction {
        angles,
        qhat_c: qc,
        qhat_s: qs,
        tau,
        i_minus,
        i_plus,
        sqrt_lam_minus: g.e_minus + dm,
        sqrt_lam_plus: g.e_plus - dp,
        delta_minus: dm,
        delta_plus: dp,
        class_minus: class_of(i_minus),
        class_plus: class_of(i_plus),
        j_minus: jscale * i_minus,
        j_plus: jscale * i_plus,
        sigma,
        cos_phi_tau,
        envelope: angles.eps * pair.constants.q_norm_t * (1.0 + pair.constants.p_norm1 + pair.constants.q_norm_t),
    })
}

/// One row of the edge-asymptotics table.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EdgeRow {
    pub n: usize,
    pub e_minus: f64,
    pub e_plus: f64,
    pub mu: f64,
    pub pred_e_minus: f64,
    pub pred_e_plus: f64,
    pub pred_mu: f64,
    /// `n·|computed − predicted|`.
    pub res_minus: f64,
    pub res_plus: f64,
    pub res_mu: f64,
    /// `|γₙ| / (2πn|gₙ|) − 1`.
    pub gap_bridge: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgeAsymptoticsReport {
    pub rows: Vec<EdgeRow>,
    /// Largest scaled residual over the range.
    pub constant: f64,
    /// Largest scaled residual in the upper half of the range stays within 3× the lower half.
    pub bounded: bool,
}

/// `eₙ± ≈ πn + εₙ(p₀ ± |pₙ|)` and `μₙ ≈ πn + εₙ(p_c0 − p_cn)`, tabulated over `range`.
pub fn verify_edge_asymptotics(pair: &PotentialPair, bands: &BandStructure, range: std::ops::RangeInclusive<usize>) -> EdgeAsymptoticsReport {
    let p = &pair.p;
    let p0 = p.mean();
    let rows: Vec<EdgeRow> = range
        .filter_map(|n| bands.gap(n).copied())
        .map(|g| {
            let n = g.n;
            let nf = n as f64;
            let eps = 1.0 / (2.0 * PI * nf);
            let pn = fourier_p(p, n);
            let pred_m = PI * nf + eps * (p0 - pn.norm());
            let pred_p = PI * nf + eps * (p0 + pn.norm());
            let pred_mu = PI * nf + eps * (p0 - pn.re);
            let glen = g.len();
            EdgeRow {
                n,
                e_minus: g.e_minus,
                e_plus: g.e_plus,
                mu: g.mu,
                pred_e_minus: pred_m,
                pred_e_plus: pred_p,
                pred_mu,
                res_minus: nf * (g.e_minus - pred_m).abs(),
                res_plus: nf * (g.e_plus - pred_p).abs(),
                res_mu: nf * (g.mu - pred_mu).abs(),
                gap_bridge: if glen > 0.0 { g.gamma_len() / (2.0 * PI * nf * glen) - 1.0 } else { 0.0 },
            }
        })
        .collect();
    let worst = |r: &EdgeRow| r.res_minus.max(r.res_plus).max(r.res_mu);
    let constant = rows.iter().map(worst).fold(0.0, f64::max);
    let half = rows.len() / 2;
    let lo = rows[..half].iter().map(worst).fold(0.0, f64::max);
    let hi = rows[half..].iter().map(worst).fold(0.0, f64::max);
    EdgeAsymptoticsReport { rows, constant, bounded: hi <= 3.0 * lo.max(1e-12) }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub enum RuleStatus {
    Match,
    Mismatch,
    #[default]
    Inconclusive,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct SignRuleRow {
    pub n: usize,
    pub sigma_pred: u8,
    pub sigma_obs: u8,
    /// `|cos(φₙ + τₙ)|`.
    pub margin: f64,
    pub qhat_abs: f64,
    pub status: RuleStatus,
}

#[derive(Debug, Clone, Serialize)]
pub struct SignRuleReport {
    pub rows: Vec<SignRuleRow>,
    /// Least-squares decay exponent of `|q̂ₙ|`, reported only.
    pub alpha: f64,
    pub mismatches: usize,
}

/// Least-squares slope `α` in `|q̂ₙ| ≈ C n^{−α}`.
pub fn qhat_decay_exponent(pair: &PotentialPair, ns: &[usize]) -> f64 {
    let pts: Vec<(f64, f64)> = ns
        .iter()
        .map(|&n| ((n as f64).ln(), qhat_polar(&pair.q, n).0))
        .filter(|(_, a)| *a > 0.0)
        .map(|(x, a)| (x, a.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / m, sy / m);
    let (num, den) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + (x - mx) * (y - my), b + (x - mx) * (x - mx)));
    -num / den
}

/// Predicted vs observed bound-state counts per gap when `q₀ = 0`.
pub fn sign_rule_report(
    pair: &PotentialPair,
    bands: &BandStructure,
    states: &[State],
    range: std::ops::RangeInclusive<usize>,
    eps_margin: f64,
    conv: SnConvention,
) -> Result<SignRuleReport> {
    if pair.q0() != 0.0 {
        return Err(HillError::Validation("the count rule needs q₀ = 0".into()));
    }
    let ns: Vec<usize> = range.filter(|n| bands.gap(*n).is_some_and(|g| !g.closed)).collect();
    let rows: Vec<SignRuleRow> = ns
        .par_iter()
        .map(|&n| {
            let pr = predict_gap_states(pair, bands, n, conv)?;
            let sigma_pred = pr.sigma.unwrap_or(1);
            let sigma_obs = states.iter().filter(|s| s.gap == Some(n) && s.class == StateClass::Bound).count() as u8;
            let margin = pr.cos_phi_tau.abs();
            let status = if margin <= eps_margin {
                RuleStatus::Inconclusive
            } else if sigma_pred == sigma_obs {
                RuleStatus::Match
            } else {
                RuleStatus::Mismatch
            };
            Ok(SignRuleRow { n, sigma_pred, sigma_obs, margin, qhat_abs: qhat_polar(&pair.q, n).0, status })
        })
        .collect::<Result<_>>()?;
    let mismatches = rows.iter().filter(|r| r.status == RuleStatus::Mismatch).count();
    Ok(SignRuleReport { alpha: qhat_decay_exponent(pair, &ns), rows, mismatches })
}

/// One row of the asymptotics CSV.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct AsymptoticsRow {
    pub n: usize,
    pub gap_len: f64,
    pub c_n: f64,
    pub s_n: f64,
    pub phi_n: f64,
    pub qhat_c: f64,
    pub qhat_s: f64,
    #[serde(rename = "I_minus")]
    pub i_minus: f64,
    #[serde(rename = "I_plus")]
    pub i_plus: f64,
    pub pred_sqrt_lam_m: f64,
    pub obs_sqrt_lam_m: f64,
    pub pred_sqrt_lam_p: f64,
    pub obs_sqrt_lam_p: f64,
    pub sigma_pred: i32,
    pub sigma_obs: i32,
}

/// Observed states nearest to each edge of gap `n`: `(κₙ⁻, κₙ⁺)`.
pub fn observed_pair(states: &[State], g: &Gap) -> (Option<State>, Option<State>) {
    let mid = 0.5 * (g.e_minus + g.e_plus);
    let mut lower: Vec<&State> = states.iter().filter(|s| s.gap == Some(g.n) && s.point.z.re <= mid).collect();
    let mut upper: Vec<&State> = states.iter().filter(|s| s.gap == Some(g.n) && s.point.z.re > mid).collect();
    lower.sort_by(|a, b| a.point.z.re.total_cmp(&b.point.z.re));
    upper.sort_by(|a, b| b.point.z.re.total_cmp(&a.point.z.re));
    (lower.first().copied().copied(), upper.first().copied().copied())
}

/// Observed displacement from the edge, preferring the linearised edge offset.
pub fn observed_displacement(s: &State, g: &Gap, lower: bool) -> f64 {
    match (s.edge_offset, lower) {
        (Some(o), true) => o,
        (Some(o), false) => -o,
        (None, true) => s.point.z.re - g.e_minus,
        (None, false) => g.e_plus - s.point.z.re,
    }
}

pub fn asymptotics_rows(pair: &PotentialPair, bands: &BandStructure, states: &[State], conv: SnConvention) -> Result<Vec<AsymptoticsRow>> {
    bands
        .open_gaps()
        .map(|g| {
            let pr = predict_gap_states(pair, bands, g.n, conv)?;
            let (lo, hi) = observed_pair(states, g);
            let obs = |s: Option<State>, lower: bool| {
                s.map_or(f64::NAN, |s| if lower { g.e_minus + observed_displacement(&s, g, true) } else { g.e_plus - observed_displacement(&s, g, false) })
            };
            let bound = states.iter().filter(|s| s.gap == Some(g.n) && s.class == StateClass::Bound).count() as i32;
            Ok(AsymptoticsRow {
                n: g.n,
                gap_len: g.len(),
                c_n: pr.angles.c,
                s_n: pr.angles.s,
                phi_n: pr.angles.phi,
                qhat_c: pr.qhat_c,
                qhat_s: pr.qhat_s,
                i_minus: pr.i_minus,
                i_plus: pr.i_plus,
                pred_sqrt_lam_m: pr.sqrt_lam_minus,
                obs_sqrt_lam_m: obs(lo, true),
                pred_sqrt_lam_p: pr.sqrt_lam_plus,
                obs_sqrt_lam_p: obs(hi, false),
                sigma_pred: pr.sigma.map_or(-1, i32::from),
                sigma_obs: bound,
            })
        })
        .collect()
}
