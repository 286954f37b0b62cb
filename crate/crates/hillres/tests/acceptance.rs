//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p hillres --test acceptance`. Exits non-zero if any criterion fails.

use hillres::asymptotics::{observed_displacement, observed_pair, predict_gap_states, SnConvention};
use hillres::floquet::{band_edges, bottom_of_spectrum, discriminant, quasimomentum, BandStructure, MomentumPoint};
use hillres::ode::StepControl;
use hillres::oracle::{chain_gap_eigensolver, squarewell_reference, squarewell_resonances};
use hillres::potential::{box_potential, step_potential, CompactPotential, PeriodicPotential, PotentialPair};
use hillres::scattering::{f_and_s, scattering_coeffs, xi};
use hillres::states::{
    check_exclusion, count_states, forbidden_domain_audit, in_forbidden_domain, locate_all_gap_states, locate_imaginary_states,
    locate_resonances, SearchConfig, State, StateClass,
};
use num_complex::Complex64 as C;
use rayon::prelude::*;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Mutex;
use std::time::{Duration, Instant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// States located anywhere in the suite, by pair, for the exclusion and forbidden-domain checks.
static LOCATED: Mutex<Vec<(&'static str, PotentialPair, Vec<State>)>> = Mutex::new(Vec::new());

fn record(name: &'static str, pair: &PotentialPair, states: &[State]) {
    LOCATED.lock().unwrap().push((name, pair.clone(), states.to_vec()));
}

fn ctl() -> StepControl {
    StepControl::default()
}

fn cfg() -> SearchConfig {
    SearchConfig::default()
}

fn normalized(p: PeriodicPotential) -> PeriodicPotential {
    let e0 = bottom_of_spectrum(&p, &ctl()).unwrap();
    p.shifted(-e0)
}

fn mathieu() -> PeriodicPotential {
    normalized(PeriodicPotential::fourier(0.0, vec![2.0], vec![]))
}

/// Sampled step of height 5 on 98/256 of the period: many open gaps of slowly decaying length.
fn sampled_step() -> PeriodicPotential {
    let vals: Vec<f64> = (0..256).map(|j| if j < 98 { 5.0 } else { 0.0 }).collect();
    normalized(PeriodicPotential::samples(&vals).unwrap())
}

/// Deterministic low-discrepancy point in `[0, 1)`.
fn weyl(i: usize, a: f64) -> f64 {
    (0.5 + i as f64 * a).fract()
}

const A1: f64 = 0.618_033_988_749_894_9;
const A2: f64 = 0.754_877_666_246_692_7;

fn within(limit: Duration, start: Instant) -> (bool, String) {
    let e = start.elapsed();
    (e <= limit, format!("{:.1}s/{}s", e.as_secs_f64(), limit.as_secs()))
}

fn c1_free_reduction() -> Outcome {
    let start = Instant::now();
    let pair = PotentialPair::new(PeriodicPotential::zero(), CompactPotential::zero(1.0).unwrap());
    let bands = band_edges(&pair.p, 17, &ctl()).unwrap();
    let grid: Vec<C> = (0..40)
        .flat_map(|i| (0..25).map(move |j| C::new(-50.0 + 100.0 * (i as f64 + 0.5) / 40.0, -2.0 + j as f64 / 6.0)))
        .collect();
    let errs: Vec<[f64; 3]> = grid
        .par_iter()
        .map(|&z| {
            let pt = MomentumPoint::new(z);
            let d = (discriminant(&pair.p, z, &ctl()).unwrap().delta - z.cos()).norm();
            let x = (xi(&pair, &pt, &ctl()).unwrap() - 2.0 * C::i() * z.sin()).norm();
            let k = (quasimomentum(&pair.p, &bands, &pt, &ctl()).unwrap().k - z).norm();
            [d, x, k]
        })
        .collect();
    let m = |i: usize| errs.iter().map(|e| e[i]).fold(0.0, f64::max);
    let (ok_t, t) = within(Duration::from_secs(10), start);
    let pass = grid.len() == 1000 && m(0) < 1e-10 && m(1) < 1e-10 && m(2) < 1e-10 && ok_t;
    outcome(pass, format!("{} pts, max |Δ−cos z| {:.1e}, |ξ−2i sin z| {:.1e}, |k−z| {:.1e}, {t}", grid.len(), m(0), m(1), m(2)))
}

fn c2_identities() -> Outcome {
    let start = Instant::now();
    let p = mathieu();
    let zs: Vec<C> = (0..1000).map(|i| C::new(-30.0 + 60.0 * weyl(i, A1), -4.0 + 8.0 * weyl(i, A2))).collect();
    let (drift, ld0) = zs
        .par_iter()
        .map(|z| {
            let m = discriminant(&p, *z, &ctl()).unwrap();
            (m.wronskian_drift, m.ld0_residual)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    let pair = PotentialPair::new(p, step_potential(2.0, -1.0, 0.4, 1.0).unwrap());
    let bands = band_edges(&pair.p, 10, &ctl()).unwrap();
    let top = bands.z_max();
    let band_pts: Vec<f64> = (0..200_000)
        .map(|i| 0.05 + (top - 0.05) * weyl(i, A1))
        .filter(|x| bands.locate(*x).is_err() && !bands.near_edge(*x, 1e-3))
        .take(1000)
        .collect();
    let unit = band_pts
        .par_iter()
        .map(|x| scattering_coeffs(&pair, *x, Some(&bands), &ctl()).unwrap().unitarity.abs())
        .reduce(|| 0.0, f64::max);
    let (ok_t, t) = within(Duration::from_secs(60), start);
    let pass = drift < 1e-10 && ld0 < 1e-9 && band_pts.len() == 1000 && unit < 1e-8 && ok_t;
    outcome(pass, format!("Wronskian drift {drift:.1e}, LD0 {ld0:.1e}, ||a|²−|b|²−1| {unit:.1e} on {} band pts, {t}", band_pts.len()))
}

fn c3_two_route_f() -> Outcome {
    let start = Instant::now();
    let pair = PotentialPair::new(mathieu(), step_potential(2.0, -1.0, 0.4, 1.0).unwrap());
    let zs: Vec<C> = (0..1400)
        .map(|i| {
            let im = if i % 10 == 0 { 0.0 } else { -3.0 + 6.0 * weyl(i, A2) };
            C::new(-20.0 + 40.0 * weyl(i, A1), im)
        })
        .collect();
    let res: Vec<Option<f64>> = zs
        .par_iter()
        .map(|z| {
            let (f, s) = f_and_s(&pair, *z, &ctl()).unwrap();
            let m = discriminant(&pair.p, *z, &ctl()).unwrap();
            s.map(|s| (f - 4.0 * m.one_minus_delta_sq() - s).norm() / (1.0 + f.norm()))
        })
        .collect();
    let used: Vec<f64> = res.into_iter().flatten().take(1000).collect();
    let worst = used.iter().cloned().fold(0.0, f64::max);
    let (ok_t, t) = within(Duration::from_secs(120), start);
    outcome(used.len() == 1000 && worst < 1e-7 && ok_t, format!("{} samples, max |F−4(1−Δ²)−S|/(1+|F|) {worst:.1e}, {t}", used.len()))
}

fn c4_square_well() -> Outcome {
    let start = Instant::now();
    let pair = PotentialPair::new(PeriodicPotential::zero(), box_potential(1.0, 0.0, 1.0, 1.0).unwrap());
    let xs: Vec<f64> = (0..1000)
        .map(|i| 0.05 + 39.95 * weyl(i, A1))
        .filter(|x| {
            let m = (x / std::f64::consts::PI).round() * std::f64::consts::PI;
            (x - m).abs() > 1e-6
        })
        .collect();
    let a_err = xs
        .par_iter()
        .map(|x| {
            let a = scattering_coeffs(&pair, *x, None, &ctl()).unwrap().a;
            (a - squarewell_reference(C::new(*x, 0.0), 1.0, 1.0).0).norm()
        })
        .reduce(|| 0.0, f64::max);
    let reference = squarewell_resonances(1.0, 1.0, 20);
    let c = cfg();
    let x1 = reference.iter().map(|z| z.re).fold(0.0, f64::max) + 1.0;
    let y0 = reference.iter().map(|z| z.im).fold(0.0, f64::min) - 1.0;
    let mut found = locate_resonances(&pair, [0.01, x1, y0, -c.rim_margin], &c).unwrap();
    record("square well", &pair, &found);
    found.sort_by(|a, b| a.point.z.norm().total_cmp(&b.point.z.norm()));
    let res_err = if reference.len() == 20 && found.len() >= 20 {
        reference.iter().zip(&found).map(|(r, s)| (r - s.point.z).norm()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    let (ok_t, t) = within(Duration::from_secs(120), start);
    let pass = a_err < 1e-8 && res_err < 1e-6 && ok_t;
    outcome(pass, format!("max |a−a_ref| {a_err:.1e} on {} band pts; 20 lowest resonances max err {res_err:.1e} ({} located); {t}", xs.len(), found.len()))
}

fn gap_open_enough(g: &hillres::floquet::Gap) -> bool {
    !g.closed && g.len() > 0.0
}

fn c5_bound_state_oracle() -> Outcome {
    let start = Instant::now();
    let pair = PotentialPair::new(mathieu(), box_potential(-25.0, 0.0, 1.0, 1.0).unwrap());
    let bands = band_edges(&pair.p, 8, &ctl()).unwrap();
    let gap_states = locate_all_gap_states(&pair, &bands, &cfg()).unwrap();
    let axis = locate_imaginary_states(&pair, &cfg()).unwrap();
    let mut all = gap_states.clone();
    all.extend(axis.iter().copied());
    record("mathieu + deep well", &pair, &all);
    let mut windows: Vec<(String, (f64, f64), Vec<f64>)> = Vec::new();
    let axis_bound: Vec<f64> = axis.iter().filter(|s| s.class == StateClass::Bound).map(|s| s.lambda.re).collect();
    windows.push(("iR+".into(), (-40.0, 0.0), axis_bound));
    for g in bands.open_gaps().filter(|g| gap_open_enough(g)) {
        let located: Vec<f64> = gap_states
            .iter()
            .filter(|s| s.gap == Some(g.n) && s.class == StateClass::Bound)
            .map(|s| s.lambda.re)
            .collect();
        windows.push((format!("g{}", g.n), g.energies(), located));
    }
    let mut worst = 0.0f64;
    let mut total = 0;
    let mut notes = Vec::new();
    let mut pass = true;
    for (name, w, mut located) in windows {
        located.sort_by(f64::total_cmp);
        match chain_gap_eigensolver(&pair, w, 200, 2000) {
            Ok(oracle) => {
                if oracle.len() != located.len() {
                    pass = false;
                    notes.push(format!("{name}: count {} vs oracle {}", located.len(), oracle.len()));
                    continue;
                }
                for (l, o) in located.iter().zip(&oracle) {
                    worst = worst.max((l - o.lambda).abs() / o.lambda.abs().max(1e-300));
                }
                total += located.len();
            }
            Err(e) => {
                // A gap too narrow for the discrete chain to resolve can only be skipped when nothing was located in it.
                if !located.is_empty() {
                    pass = false;
                }
                notes.push(format!("{name}: oracle unavailable ({e})"));
            }
        }
    }
    let (ok_t, t) = within(Duration::from_secs(300), start);
    pass &= worst < 1e-6 && total > 0 && ok_t;
    outcome(pass, format!("{total} bound states, max rel err {worst:.1e}{}, {t}", if notes.is_empty() { String::new() } else { format!(" [{}]", notes.join("; ")) }))
}

fn c6_two_states_per_gap() -> Outcome {
    let start = Instant::now();
    let pair = PotentialPair::new(mathieu(), step_potential(2.0, -1.0, 0.4, 1.0).unwrap());
    let bands = band_edges(&pair.p, 30, &ctl()).unwrap();
    let states = locate_all_gap_states(&pair, &bands, &cfg()).unwrap();
    record("mathieu + step", &pair, &states);
    let threshold = pair.constants.far_gap_threshold(pair.t());
    let mut parity_ok = true;
    let mut far_ok = true;
    let mut far_checked = 0;
    let mut two = 0;
    let mut open = 0;
    for g in bands.open_gaps() {
        open += 1;
        let in_gap: Vec<&State> = states.iter().filter(|s| s.gap == Some(g.n)).collect();
        let count: u32 = in_gap.iter().map(|s| s.multiplicity).sum();
        parity_ok &= count.is_multiple_of(2);
        let simple_two = in_gap.len() == 2 && in_gap.iter().all(|s| s.multiplicity == 1);
        two += simple_two as usize;
        if g.n as f64 >= threshold {
            far_checked += 1;
            let mid = 0.5 * (g.e_minus + g.e_plus);
            far_ok &= simple_two && in_gap.iter().filter(|s| s.point.z.re <= mid).count() == 1;
        }
    }
    let (ok_t, t) = within(Duration::from_secs(600), start);
    outcome(
        parity_ok && far_ok && ok_t,
        format!(
            "{open} resolved open gaps, parity {}, n_threshold {threshold:.3e} ({far_checked} gaps at or above it in [1,30]), exactly two simple states in {two}/{open}, {t}",
            if parity_ok { "even" } else { "VIOLATED" }
        ),
    )
}

/// Gaps from 1 to 30 where both `|Iₙ±|` clear three envelopes, with predicted and observed edge classes.
fn class_table(pair: &PotentialPair, bands: &BandStructure, states: &[State]) -> Vec<(usize, [StateClass; 2], [StateClass; 2])> {
    bands
        .open_gaps()
        .filter_map(|g| {
            let pr = predict_gap_states(pair, bands, g.n, SnConvention::default()).ok()?;
            if !pr.resolved(3.0) {
                return None;
            }
            let (lo, hi) = observed_pair(states, g);
            let cls = |s: Option<State>| s.map_or(StateClass::Virtual, |s| s.class);
            Some((g.n, [pr.class_minus, pr.class_plus], [cls(lo), cls(hi)]))
        })
        .collect()
}

fn c7_sign_rule() -> Outcome {
    let start = Instant::now();
    let p = sampled_step();
    let bands = band_edges(&p, 30, &ctl()).unwrap();
    let q = box_potential(1.0, 0.0, 0.6, 0.6).unwrap();
    let variants: [(&'static str, CompactPotential); 4] =
        [("box", q.clone()), ("reflected", q.reflected()), ("negated", q.scaled(-1.0)), ("negated reflected", q.reflected().scaled(-1.0))];
    let mut pass = true;
    let mut parts = Vec::new();
    let mut rows_by_variant = Vec::new();
    for (name, q) in variants {
        let pair = PotentialPair::new(p.clone(), q);
        let states = locate_all_gap_states(&pair, &bands, &cfg()).unwrap();
        record(name, &pair, &states);
        let rows = class_table(&pair, &bands, &states);
        let agree = rows.iter().filter(|(_, pr, ob)| pr == ob).count();
        // Expected pattern for this sign of q₀.
        let want = if pair.q0() > 0.0 { [StateClass::Bound, StateClass::Antibound] } else { [StateClass::Antibound, StateClass::Bound] };
        let far = rows.iter().filter(|(n, _, _)| *n >= 8).all(|(_, pr, _)| *pr == want);
        pass &= agree == rows.len() && !rows.is_empty() && far;
        parts.push(format!("{name}: {agree}/{}", rows.len()));
        rows_by_variant.push(rows);
    }
    // Negation flips the observed pattern in every gap resolved for both signs.
    let flipped = rows_by_variant[0].iter().all(|(n, _, ob)| {
        rows_by_variant[2].iter().find(|r| r.0 == *n).is_none_or(|(_, _, ob2)| ob2[0] == ob[1] && ob2[1] == ob[0])
    });
    pass &= flipped;
    let (_, t) = within(Duration::from_secs(600), start);
    outcome(pass, format!("classes per predicted block in gaps with |I| > 3×envelope: {}; negation flips: {flipped}; {t}", parts.join(", ")))
}

fn c8_displacement() -> Outcome {
    let start = Instant::now();
    let pair = PotentialPair::new(sampled_step(), step_potential(1.0, -0.37 / 0.63, 0.37, 1.0).unwrap());
    let bands = band_edges(&pair.p, 30, &ctl()).unwrap();
    let states = locate_all_gap_states(&pair, &bands, &cfg()).unwrap();
    record("step p + zero-mean step", &pair, &states);
    let mut ratios = Vec::new();
    let mut scaled: Vec<(usize, f64)> = Vec::new();
    for g in bands.open_gaps().filter(|g| (15..=30).contains(&g.n)) {
        let pr = predict_gap_states(&pair, &bands, g.n, SnConvention::default()).unwrap();
        let (lo, hi) = observed_pair(&states, g);
        let (Some(lo), Some(hi)) = (lo, hi) else { continue };
        let (dm, dp) = (observed_displacement(&lo, g, true), observed_displacement(&hi, g, false));
        ratios.push(dm / pr.delta_minus);
        ratios.push(dp / pr.delta_plus);
        let n3 = (g.n as f64).powi(3);
        scaled.push((g.n, n3 * (dm - pr.delta_minus).abs().max((dp - pr.delta_plus).abs())));
    }
    ratios.sort_by(f64::total_cmp);
    let median = if ratios.is_empty() { f64::NAN } else { ratios[ratios.len() / 2] };
    let first: f64 = scaled.iter().filter(|(n, _)| *n <= 22).map(|s| s.1).fold(0.0, f64::max);
    let second: f64 = scaled.iter().filter(|(n, _)| *n > 22).map(|s| s.1).fold(0.0, f64::max);
    let bounded = second <= 3.0 * first.max(1e-300);
    let (_, t) = within(Duration::from_secs(600), start);
    outcome(
        (median - 1.0).abs() <= 0.3 && bounded && ratios.len() >= 16,
        format!("{} ratios, median obs/pred {median:.3}; max n³|obs−pred| {first:.2e} (n≤22) vs {second:.2e} (n>22); {t}", ratios.len()),
    )
}

fn c9_counting() -> Outcome {
    let start = Instant::now();
    let q = box_potential(1.0, 0.0, 1.0, 1.0).unwrap();
    let pairs = [PotentialPair::new(PeriodicPotential::zero(), q.clone()), PotentialPair::new(mathieu(), q)];
    let (a, b) = rayon::join(|| count_states(&pairs[0], 100.0, &cfg()).unwrap(), || count_states(&pairs[1], 100.0, &cfg()).unwrap());
    record("free + box", &pairs[0], &a.states);
    record("mathieu + box", &pairs[1], &b.states);
    let in_range = |r: f64| (0.9..=1.1).contains(&r);
    let agree = (a.slope_ratio / b.slope_ratio - 1.0).abs() <= 0.1;
    let winding = (a.n_minus as f64 - a.n_winding).abs() < 0.5 && (b.n_minus as f64 - b.n_winding).abs() < 0.5;
    let (ok_t, t) = within(Duration::from_secs(1800), start);
    outcome(
        in_range(a.slope_ratio) && in_range(b.slope_ratio) && agree && winding && ok_t,
        format!(
            "r=100: p=0 N₋={} (winding {:.2}) ratio {:.4}; Mathieu N₋={} (winding {:.2}) ratio {:.4}; {t}",
            a.n_minus, a.n_winding, a.slope_ratio, b.n_minus, b.n_winding, b.slope_ratio
        ),
    )
}

fn c10_forbidden_domain() -> Outcome {
    let start = Instant::now();
    let located = LOCATED.lock().unwrap().clone();
    let mut pass = true;
    let mut parts = Vec::new();
    let mut offending = 0;
    for (name, pair, states) in &located {
        offending += states.iter().filter(|s| in_forbidden_domain(pair, s.point.z)).count();
        // Sample |ξ| for the two pairs of the counting law; the others only have their states checked.
        let sample = *name == "free + box" || *name == "mathieu + box";
        let r_floor = 180.0 * (2.0 * pair.constants.p_norm1).exp();
        let r_max = if sample { 1.5 * r_floor } else { r_floor };
        match forbidden_domain_audit(pair, r_max, states, &cfg()) {
            Ok(rep) if sample => parts.push(format!("{name}: {} samples to |z|={:.0}, min|ξ| {:.2e}, min|ξ|/|2 sin k| {:.3}", rep.samples, r_max, rep.min_abs_xi, rep.min_ratio)),
            Ok(_) => {}
            Err(e) => {
                pass = false;
                parts.push(format!("{name}: {e}"));
            }
        }
    }
    pass &= offending == 0 && !located.is_empty();
    let (_, t) = within(Duration::from_secs(1800), start);
    outcome(pass, format!("{offending} located states in D_F over {} pairs; {}; {t}", located.len(), parts.join("; ")))
}

fn c11_exclusion() -> Outcome {
    let located = LOCATED.lock().unwrap().clone();
    let mut bad = Vec::new();
    let mut n = 0;
    for (name, _, states) in &located {
        n += states.len();
        if let Err(e) = check_exclusion(states) {
            bad.push(format!("{name}: {e}"));
        }
    }
    outcome(bad.is_empty() && n > 0, format!("{n} states over {} pairs, {} violations{}", located.len(), bad.len(), if bad.is_empty() { String::new() } else { format!(": {}", bad.join("; ")) }))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("C1 free reduction", c1_free_reduction),
        ("C2 Wronskian/identity suite", c2_identities),
        ("C3 two-route F", c3_two_route_f),
        ("C4 square-well oracle", c4_square_well),
        ("C5 bound-state oracle", c5_bound_state_oracle),
        ("C6 two states per gap", c6_two_states_per_gap),
        ("C7 sign rule", c7_sign_rule),
        ("C8 asymptotic displacement", c8_displacement),
        ("C9 counting law", c9_counting),
        ("C10 forbidden domain", c10_forbidden_domain),
        ("C11 exclusion principles", c11_exclusion),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, f) in criteria {
        if filter.as_ref().is_some_and(|s| !name.contains(s.as_str())) {
            continue;
        }
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        failed += (!res.pass) as usize;
        println!("{} {name}: {}", if res.pass { "PASS" } else { "FAIL" }, res.detail);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
