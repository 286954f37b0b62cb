//! Randomised invariants over small families of potentials.

use hillres::floquet::{band_edges, discriminant, normalize_pair, MomentumPoint};
use hillres::ode::StepControl;
use hillres::potential::{step_potential, PeriodicPotential, PotentialPair};
use hillres::scattering::{f_and_s, scattering_coeffs, xi};
use hillres::states::{check_exclusion, locate_all_gap_states, SearchConfig};
use num_complex::Complex64 as C;
use proptest::prelude::*;

fn ctl() -> StepControl {
    StepControl::default()
}

fn pair(a1: f64, b1: f64, h1: f64, h2: f64, s: f64) -> PotentialPair {
    let p = PeriodicPotential::fourier(0.0, vec![a1], vec![b1]);
    normalize_pair(&PotentialPair::new(p, step_potential(h1, h2, s, 1.0).unwrap()), &ctl()).unwrap().0
}

prop_compose! {
    fn any_pair()(a1 in -3.0..3.0f64, b1 in -1.0..1.0f64, h1 in -4.0..4.0f64, h2 in -4.0..4.0f64, s in 0.1..0.9f64) -> PotentialPair {
        pair(a1, b1, h1, h2, s)
    }
}

prop_compose! {
    fn any_z()(re in -25.0..25.0f64, im in -3.0..3.0f64) -> C {
        C::new(re, im)
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn discriminant_is_even_and_real_symmetric(a1 in -4.0..4.0f64, z in any_z()) {
        let p = PeriodicPotential::fourier(0.0, vec![a1], vec![]);
        let d = |w: C| discriminant(&p, w, &ctl()).unwrap().delta;
        let (d0, dn, dc) = (d(z), d(-z), d(z.conj()));
        let scale = 1.0 + d0.norm();
        prop_assert!((d0 - dn).norm() < 1e-9 * scale);
        prop_assert!((d0.conj() - dc).norm() < 1e-9 * scale);
    }

    #[test]
    fn wronskian_is_conserved(a1 in -4.0..4.0f64, b1 in -2.0..2.0f64, z in any_z()) {
        let p = PeriodicPotential::fourier(0.0, vec![a1], vec![b1]);
        let m = discriminant(&p, z, &ctl()).unwrap();
        prop_assert!(m.wronskian_drift < 1e-10);
    }

    #[test]
    fn xi_reflects_across_imaginary_axis(pr in any_pair(), z in any_z()) {
        // Real potentials: ξ(−z̄) = conj ξ(z) on the same sheet.
        prop_assume!(z.im.abs() > 1e-3);
        let a = xi(&pr, &MomentumPoint::new(z), &ctl()).unwrap();
        let b = xi(&pr, &MomentumPoint::new(-z.conj()), &ctl()).unwrap();
        prop_assert!((a.conj() - b).norm() < 1e-8 * (1.0 + a.norm()));
    }

    #[test]
    fn two_routes_agree(pr in any_pair(), z in any_z()) {
        let (f, s) = f_and_s(&pr, z, &ctl()).unwrap();
        if let Some(s) = s {
            let m = discriminant(&pr.p, z, &ctl()).unwrap();
            prop_assert!((f - 4.0 * m.one_minus_delta_sq() - s).norm() < 1e-7 * (1.0 + f.norm()));
        }
    }

    #[test]
    fn free_background_scattering_is_unitary(h1 in -4.0..4.0f64, h2 in -4.0..4.0f64, s in 0.1..0.9f64, x in 0.2..30.0f64) {
        let pr = PotentialPair::new(PeriodicPotential::zero(), step_potential(h1, h2, s, 1.0).unwrap());
        let m = (x / std::f64::consts::PI).round() * std::f64::consts::PI;
        prop_assume!((x - m).abs() > 1e-3);
        let sc = scattering_coeffs(&pr, x, None, &ctl()).unwrap();
        prop_assert!(sc.unitarity.abs() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn gap_state_counts_are_even_and_exclusive(pr in any_pair()) {
        let bands = band_edges(&pr.p, 6, &ctl()).unwrap();
        let states = locate_all_gap_states(&pr, &bands, &SearchConfig::default()).unwrap();
        for g in bands.open_gaps() {
            let k: u32 = states.iter().filter(|s| s.gap == Some(g.n)).map(|s| s.multiplicity).sum();
            prop_assert_eq!(k % 2, 0, "gap {} holds {} states", g.n, k);
        }
        prop_assert!(check_exclusion(&states).is_ok());
    }
}
