//! Dormand–Prince 8(5,3) integrator for complex linear systems, plus a
//! segment-aware driver for `u″ = (V(x) − z²)u` type right-hand sides.

use crate::error::{HillError, Result};
use crate::potential::{CompactPotential, LocalPeriodic, PeriodicPotential, Piece};
use num_complex::Complex64 as C;

const A: [[f64; 12]; 12] = [
    [0.0; 12],
    [5.260_015_195_876_773E-2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.972_505_698_453_79E-2, 5.917_517_095_361_37E-2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [2.958_758_547_680_685E-2, 0.0, 8.876_275_643_042_054E-2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [2.413_651_341_592_667E-1, 0.0, -8.845_494_793_282_861E-1, 9.248_340_032_617_92E-1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.703_703_703_703_703_5E-2, 0.0, 0.0, 1.708_286_087_294_738_6E-1, 1.254_676_875_668_224_2E-1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.7109375E-2, 0.0, 0.0, 1.702_522_110_195_440_5E-1, 6.021_653_898_045_596E-2, -1.7578125E-2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [
        3.709_200_011_850_479E-2, 0.0, 0.0, 1.703_839_257_122_399_8E-1, 1.072_620_304_463_732_8E-1,
        -1.531_943_774_862_440_2E-2, 8.273_789_163_814_023E-3, 0.0, 0.0, 0.0, 0.0, 0.0,
    ],
    [
        6.241_109_587_160_757E-1, 0.0, 0.0, -3.360_892_629_446_941_4, -8.682_193_468_417_26E-1,
        2.759_209_969_944_671E1, 2.015_406_755_047_789_4E1, -4.348_988_418_106_996E1, 0.0, 0.0, 0.0, 0.0,
    ],
    [
        4.776_625_364_382_643_4E-1, 0.0, 0.0, -2.488_114_619_971_667_7, -5.902_908_268_368_43E-1,
        2.123_005_144_818_119_3E1, 1.527_923_363_288_242_3E1, -3.328_821_096_898_486E1,
        -2.033_120_170_850_862_7E-2, 0.0, 0.0, 0.0,
    ],
    [
        -9.371_424_300_859_873E-1, 0.0, 0.0, 5.186_372_428_844_064, 1.091_437_348_996_729_5,
        -8.149_787_010_746_927, -1.852_006_565_999_696E1, 2.273_948_709_935_050_5E1,
        2.493_605_552_679_652_3, -3.046_764_471_898_219_6, 0.0, 0.0,
    ],
    [
        2.273_310_147_516_538, 0.0, 0.0, -1.053_449_546_673_725E1, -2.000_872_058_224_862_5,
        -1.795_893_186_311_88E1, 2.794_888_452_941_996E1, -2.858_998_277_135_023_5,
        -8.872_856_933_530_63, 1.236_056_717_579_430_3E1, 6.433_927_460_157_636E-1, 0.0,
    ],
];

const CN: [f64; 12] = [
    0.0,
    5.260_015_195_876_773E-2,
    7.890_022_793_815_16E-2,
    1.183_503_419_072_274E-1,
    2.816_496_580_927_726E-1,
    3.333_333_333_333_333E-1,
    0.25,
    3.076_923_076_923_077E-1,
    6.512_820_512_820_513E-1,
    0.6,
    8.571_428_571_428_571E-1,
    1.0,
];

const B: [f64; 12] = [
    5.429_373_411_656_876_5E-2,
    0.0,
    0.0,
    0.0,
    0.0,
    4.450_312_892_752_409,
    1.891_517_899_314_500_3,
    -5.801_203_960_010_585,
    3.111_643_669_578_199E-1,
    -1.521_609_496_625_161E-1,
    2.013_654_008_040_303_4E-1,
    4.471_061_572_777_259E-2,
];

const ER: [f64; 12] = [
    1.312_004_499_419_488E-2,
    0.0,
    0.0,
    0.0,
    0.0,
    -1.225_156_446_376_204_4,
    -4.957_589_496_572_502E-1,
    1.664_377_182_454_986_4,
    -3.503_288_487_499_736_6E-1,
    3.341_791_187_130_175E-1,
    8.192_320_648_511_571E-2,
    -2.235_530_786_388_629_4E-2,
];

const BHH: [f64; 3] = [2.440_944_881_889_764E-1, 7.338_466_882_816_118E-1, 2.205_882_352_941_176_6E-2];

/// Error-control settings. Steps taken can be recorded and replayed.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        Self { rtol: 1e-12, atol: 1e-12, max_steps: 200_000 }
    }
}

#[inline]
fn axpy<const N: usize>(y: &[C; N], h: f64, terms: &[(f64, &[C; N])]) -> [C; N] {
    let mut out = *y;
    for (c, k) in terms {
        if *c != 0.0 {
            let s = h * c;
            for i in 0..N {
                out[i] += k[i] * s;
            }
        }
    }
    out
}

/// One DOP853 step; returns the 8th-order update and the two embedded error vectors.
#[inline]
fn step<const N: usize, F: FnMut(f64, &[C; N]) -> [C; N]>(
    f: &mut F,
    x: f64,
    y: &[C; N],
    k1: &[C; N],
    h: f64,
) -> ([C; N], [C; N], [C; N]) {
    let mut k: [[C; N]; 12] = [[C::new(0.0, 0.0); N]; 12];
    k[0] = *k1;
    for s in 1..12 {
        let mut yi = *y;
        for (j, kj) in k.iter().enumerate().take(s) {
            let a = A[s][j];
            if a != 0.0 {
                let c = h * a;
                for i in 0..N {
                    yi[i] += kj[i] * c;
                }
            }
        }
        k[s] = f(x + CN[s] * h, &yi);
    }
    let mut inc = [C::new(0.0, 0.0); N];
    let mut e5 = [C::new(0.0, 0.0); N];
    for (s, ks) in k.iter().enumerate() {
        for i in 0..N {
            inc[i] += ks[i] * B[s];
            e5[i] += ks[i] * ER[s];
        }
    }
    let mut e3 = [C::new(0.0, 0.0); N];
    for i in 0..N {
        e3[i] = inc[i] - k[0][i] * BHH[0] - k[8][i] * BHH[1] - k[11][i] * BHH[2];
    }
    (axpy(y, h, &[(1.0, &inc)]), e5, e3)
}

/// Adaptive integration from `x0` to `x1`. `h_hint` carries the step size between calls;
/// accepted steps are appended to `record` when given.
pub fn dop853<const N: usize, F: FnMut(f64, &[C; N]) -> [C; N]>(
    mut f: F,
    x0: f64,
    y0: [C; N],
    x1: f64,
    ctl: &StepControl,
    h_hint: &mut f64,
    mut record: Option<&mut Vec<f64>>,
) -> Result<[C; N]> {
    let span = x1 - x0;
    if span == 0.0 {
        return Ok(y0);
    }
    let dir = span.signum();
    let mut x = x0;
    let mut y = y0;
    let mut k1 = f(x, &y);
    let mut h = if *h_hint > 0.0 { h_hint.min(span.abs()) } else { initial_step(&mut f, x, &y, &k1, span.abs(), ctl) };
    let n_real = (2 * N) as f64;
    let mut steps = 0usize;
    let mut reject = false;
    loop {
        if steps >= ctl.max_steps {
            return Err(HillError::StepFailure { x, reason: "step budget exhausted".into() });
        }
        let remaining = (x1 - x) * dir;
        let last = h >= remaining * (1.0 - 1e-12);
        if last {
            h = remaining;
        }
        if h < 1e-14 * (1.0 + x.abs()) && !last {
            return Err(HillError::StepFailure { x, reason: format!("step size underflow h={h:e}") });
        }
        let (ynew, e5, e3) = step(&mut f, x, &y, &k1, dir * h);
        let (mut s5, mut s3) = (0.0, 0.0);
        for i in 0..N {
            let sk = ctl.atol + ctl.rtol * y[i].norm().max(ynew[i].norm());
            s5 += (e5[i].re / sk).powi(2) + (e5[i].im / sk).powi(2);
            s3 += (e3[i].re / sk).powi(2) + (e3[i].im / sk).powi(2);
        }
        let mut deno = s5 + 0.01 * s3;
        if deno <= 0.0 {
            deno = 1.0;
        }
        let err = h * s5 * (1.0 / (n_real * deno)).sqrt();
        if !err.is_finite() || ynew.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            h *= 0.25;
            reject = true;
            steps += 1;
            continue;
        }
        let fac11 = err.powf(0.125);
        // Divisor of h, clamped so the step changes by at most a factor 6 up or 3 down.
        let fac = (fac11 / 0.9).clamp(1.0 / 6.0, 1.0 / 0.333);
        if err <= 1.0 {
            x = if last { x1 } else { x + dir * h };
            y = ynew;
            if let Some(r) = record.as_deref_mut() {
                r.push(h);
            }
            steps += 1;
            let mut hnew = h / fac;
            if reject {
                hnew = hnew.min(h);
            }
            if last {
                *h_hint = hnew;
                return Ok(y);
            }
            k1 = f(x, &y);
            reject = false;
            h = hnew;
        } else {
            h /= (fac11 / 0.9).min(1.0 / 0.333);
            reject = true;
            steps += 1;
        }
    }
}

fn initial_step<const N: usize, F: FnMut(f64, &[C; N]) -> [C; N]>(
    f: &mut F,
    x: f64,
    y: &[C; N],
    k1: &[C; N],
    span: f64,
    ctl: &StepControl,
) -> f64 {
    let (mut dnf, mut dny) = (0.0, 0.0);
    for i in 0..N {
        let sk = ctl.atol + ctl.rtol * y[i].norm();
        dnf += (k1[i].norm() / sk).powi(2);
        dny += (y[i].norm() / sk).powi(2);
    }
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { 0.01 * (dny / dnf).sqrt() };
    h = h.min(span);
    let y1 = axpy(y, h, &[(1.0, k1)]);
    let k2 = f(x + h, &y1);
    let mut der2 = 0.0;
    for i in 0..N {
        let sk = ctl.atol + ctl.rtol * y[i].norm();
        der2 += ((k2[i] - k1[i]).norm() / sk).powi(2);
    }
    let der2 = der2.sqrt() / h;
    let der12 = der2.max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 { (h * 1e-3).max(1e-6) } else { (0.01 / der12).powf(1.0 / 8.0) };
    (100.0 * h).min(h1).min(span)
}

/// Replays a recorded step sequence without error control.
pub fn dop853_fixed<const N: usize, F: FnMut(f64, &[C; N]) -> [C; N]>(
    mut f: F,
    x0: f64,
    y0: [C; N],
    steps: &[f64],
    dir: f64,
) -> [C; N] {
    let mut x = x0;
    let mut y = y0;
    for &h in steps {
        let k1 = f(x, &y);
        y = step(&mut f, x, &y, &k1, dir * h).0;
        x += dir * h;
    }
    y
}

/// Potential pieces active on one breakpoint-free segment.
#[derive(Clone, Copy)]
pub struct LocalMedium<'a> {
    pub p: LocalPeriodic<'a>,
    pub q: Option<&'a Piece>,
}

impl LocalMedium<'_> {
    #[inline]
    pub fn p(&self, x: f64) -> f64 {
        self.p.eval(x)
    }
    #[inline]
    pub fn q(&self, x: f64) -> f64 {
        self.q.map_or(0.0, |pc| pc.eval(x))
    }
}

/// Breakpoints of `p` and `q` between `x0` and `x1`, ordered from `x0` to `x1`, endpoints included.
pub fn segments(p: &PeriodicPotential, q: Option<&CompactPotential>, x0: f64, x1: f64) -> Vec<f64> {
    let mut pts = p.breakpoints(x0, x1);
    if let Some(q) = q {
        pts.extend(q.breakpoints(x0, x1));
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    let mut out = vec![x0];
    if x1 >= x0 {
        out.extend(pts);
    } else {
        out.extend(pts.into_iter().rev());
    }
    out.push(x1);
    out
}

/// Right-hand side given the local medium: `rhs(x, medium, y)`.
pub trait Rhs<const N: usize> {
    fn eval(&self, x: f64, m: &LocalMedium<'_>, y: &[C; N]) -> [C; N];
}

impl<const N: usize, T: Fn(f64, &LocalMedium<'_>, &[C; N]) -> [C; N]> Rhs<N> for T {
    #[inline]
    fn eval(&self, x: f64, m: &LocalMedium<'_>, y: &[C; N]) -> [C; N] {
        self(x, m, y)
    }
}

/// How the step sequence is chosen.
pub enum Mesh<'a> {
    Adaptive,
    Record(&'a mut Vec<Vec<f64>>),
    Replay(&'a [Vec<f64>]),
}

/// Integrates across all breakpoints of `p` and `q` from `x0` to `x1`.
///
/// With `sigma > 0` the system is solved for `e^{−σ|x−x0|} y`; the returned state
/// is scaled back.
#[allow(clippy::too_many_arguments)]
pub fn propagate<const N: usize, R: Rhs<N>>(
    p: &PeriodicPotential,
    q: Option<&CompactPotential>,
    x0: f64,
    x1: f64,
    y0: [C; N],
    sigma: f64,
    ctl: &StepControl,
    rhs: &R,
    mut mesh: Mesh<'_>,
) -> Result<[C; N]> {
    let pts = segments(p, q, x0, x1);
    let mut y = y0;
    let mut h_hint = 0.0;
    let mut log_scale = 0.0;
    for (seg, w) in pts.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        if a == b {
            continue;
        }
        let medium = LocalMedium { p: p.local(a, b), q: q.and_then(|q| q.local(a, b)) };
        let s = sigma * (b - a).signum();
        let f = |x: f64, u: &[C; N]| {
            let mut d = rhs.eval(x, &medium, u);
            if s != 0.0 {
                for i in 0..N {
                    d[i] -= u[i] * s;
                }
            }
            d
        };
        y = match &mut mesh {
            Mesh::Adaptive => dop853(f, a, y, b, ctl, &mut h_hint, None)?,
            Mesh::Record(rec) => {
                let mut r = Vec::new();
                let out = dop853(f, a, y, b, ctl, &mut h_hint, Some(&mut r))?;
                rec.push(r);
                out
            }
            Mesh::Replay(steps) => {
                let st = steps.get(seg).ok_or_else(|| HillError::StepFailure {
                    x: a,
                    reason: "replayed mesh does not match segments".into(),
                })?;
                dop853_fixed(f, a, y, st, (b - a).signum())
            }
        };
        log_scale += sigma * (b - a).abs();
    }
    if sigma != 0.0 {
        let g = log_scale.exp();
        for v in y.iter_mut() {
            *v *= g;
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_high_accuracy() {
        let w = 7.3;
        let f = |_x: f64, y: &[C; 2]| [y[1], -y[0] * (w * w)];
        let mut h = 0.0;
        let y = dop853(f, 0.0, [C::new(1.0, 0.0), C::new(0.0, 0.0)], 3.0, &StepControl::default(), &mut h, None)
            .unwrap();
        assert!((y[0].re - (w * 3.0).cos()).abs() < 1e-11);
        assert!((y[1].re + w * (w * 3.0).sin()).abs() < 1e-10);
    }

    #[test]
    fn eighth_order_convergence_on_fixed_steps() {
        // Error ratio for halved steps should be close to 2^8.
        let f = |x: f64, y: &[C; 1]| [y[0] * C::new(x.cos(), 1.0)];
        let exact = |x: f64| (C::new(x.sin(), x)).exp();
        let run = |n: usize| {
            let hs = vec![2.0 / n as f64; n];
            (dop853_fixed(f, 0.0, [C::new(1.0, 0.0)], &hs, 1.0)[0] - exact(2.0)).norm()
        };
        let (e1, e2) = (run(8), run(16));
        let order = (e1 / e2).log2();
        assert!(order > 7.0, "observed order {order}");
    }

    #[test]
    fn backward_and_rescaled_integration() {
        // y″ = −z² y with z = 6i: y = cosh(6x).
        let z2 = C::new(-36.0, 0.0);
        let p = PeriodicPotential::zero();
        let rhs = |_x: f64, _m: &LocalMedium<'_>, y: &[C; 2]| [y[1], -y[0] * z2];
        let y0 = [C::new(1.0, 0.0), C::new(0.0, 0.0)];
        let ctl = StepControl::default();
        for sigma in [0.0, 6.0] {
            let y = propagate(&p, None, 0.0, 1.0, y0, sigma, &ctl, &rhs, Mesh::Adaptive).unwrap();
            assert!((y[0].re / 6f64.cosh() - 1.0).abs() < 1e-11);
            let back = propagate(&p, None, 1.0, 0.0, y, sigma, &ctl, &rhs, Mesh::Adaptive).unwrap();
            assert!((back[0] - y0[0]).norm() < 1e-8);
        }
    }

    #[test]
    fn replayed_mesh_reproduces_adaptive_result() {
        let z2 = C::new(40.0, 0.0);
        let p = PeriodicPotential::fourier(0.0, vec![2.0], vec![]);
        let rhs = |x: f64, m: &LocalMedium<'_>, y: &[C; 2]| [y[1], y[0] * (C::new(m.p(x), 0.0) - z2)];
        let y0 = [C::new(0.0, 0.0), C::new(1.0, 0.0)];
        let ctl = StepControl::default();
        let mut rec = Vec::new();
        let a = propagate(&p, None, 0.0, 1.0, y0, 0.0, &ctl, &rhs, Mesh::Record(&mut rec)).unwrap();
        let b = propagate(&p, None, 0.0, 1.0, y0, 0.0, &ctl, &rhs, Mesh::Replay(&rec)).unwrap();
        assert!((a[0] - b[0]).norm() < 1e-15);
    }
}
