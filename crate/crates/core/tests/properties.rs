use std::sync::Arc;

use bathysize_core::dtn::assemble_dtn;
use bathysize_core::functionals::{caseI_upper, measurements, window_discrepancies, CaseLabel, SizeEstimateReport, Window};
use bathysize_core::geometry::{fatness_ratio, Lobe};
use bathysize_core::harness::fit_split;
use bathysize_core::mesh::build_mesh;
use bathysize_core::solver::{boundary_flux, energy, solve_potential, surface_pairing, total_boundary_flux};
use bathysize_core::{BoundaryTag, CavityDescription, FluidDomain, Profile, SolverOptions, SurfaceTrace};
use proptest::prelude::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

/// Raised-cosine bump kept clear of the walls.
fn bump() -> impl Strategy<Value = Profile> {
    (0.0f64..0.3, 0.1f64..0.3, 0.0f64..1.0).prop_map(|(a, w, t)| {
        let center = w + t * (1.0 - 2.0 * w);
        Profile::bump(a, center, w)
    })
}

/// Two lobes of independent sign, so both parts of the cavity can appear.
fn crossing() -> impl Strategy<Value = Profile> {
    (0.01f64..0.2, 0.01f64..0.2, prop::bool::ANY, prop::bool::ANY).prop_map(|(a1, a2, s1, s2)| Profile::MultiBump {
        base: 0.0,
        lobes: vec![
            Lobe { amplitude: a1, center: 0.3, halfwidth: 0.2, sign: if s1 { 1.0 } else { -1.0 } },
            Lobe { amplitude: a2, center: 0.7, halfwidth: 0.2, sign: if s2 { 1.0 } else { -1.0 } },
        ],
    })
}

fn mesh_over(bottom: Profile, nx: usize, ny: usize) -> Arc<bathysize_core::Mesh> {
    let d = FluidDomain::new(1.0, bottom, Profile::flat(1.0)).unwrap();
    Arc::new(build_mesh(&d, nx, ny).unwrap())
}

proptest! {
    #![proptest_config(config(32))]

    #[test]
    fn region_measure_is_additive(upper in crossing(), split in 0.05f64..0.95) {
        let c = CavityDescription::new(1.0, Profile::flat(0.0), upper).unwrap();
        let whole = c.region_measure(8).unwrap();
        let left = c.region_measure_on(0.0, split, 8).unwrap();
        let right = c.region_measure_on(split, 1.0, 8).unwrap();
        let tol = 1e-12 * whole.total().max(1e-300);
        prop_assert!((left.area_plus + right.area_plus - whole.area_plus).abs() <= tol);
        prop_assert!((left.area_minus + right.area_minus - whole.area_minus).abs() <= tol);
    }

    #[test]
    fn swapping_profiles_swaps_parts(upper in crossing()) {
        let c = CavityDescription::new(1.0, Profile::flat(0.0), upper).unwrap();
        let m = c.region_measure(8).unwrap();
        let s = c.swapped().region_measure(8).unwrap();
        prop_assert_eq!(m.area_plus, s.area_minus);
        prop_assert_eq!(m.area_minus, s.area_plus);
    }

    #[test]
    fn ordered_bottoms_have_no_negative_part(upper in bump()) {
        let c = CavityDescription::new(1.0, Profile::flat(0.0), upper).unwrap();
        prop_assert_eq!(c.region_measure(8).unwrap().area_minus, 0.0);
    }

    #[test]
    fn surface_pairing_is_symmetric(a in prop::collection::vec(-2.0f64..2.0, 17), b in prop::collection::vec(-2.0f64..2.0, 17)) {
        let m = mesh_over(Profile::flat(0.0), 16, 4);
        let ta = SurfaceTrace::top(&m, a).unwrap();
        let tb = SurfaceTrace::top(&m, b).unwrap();
        prop_assert_eq!(surface_pairing(&ta, &tb).unwrap(), surface_pairing(&tb, &ta).unwrap());
    }
}

proptest! {
    #![proptest_config(config(12))]

    #[test]
    fn fatness_is_nonincreasing(a in 0.05f64..0.3, w in 0.1f64..0.3) {
        let c = CavityDescription::new(1.0, Profile::flat(0.0), Profile::bump(a, 0.5, w)).unwrap();
        let mut last = f64::INFINITY;
        for k in 1..=6 {
            let h = a * k as f64 / 16.0;
            let f = fatness_ratio(&c, h, 256).unwrap();
            prop_assert!(f.ratio <= last + 1e-12, "ratio {} at h = {h} after {last}", f.ratio);
            last = f.ratio;
        }
    }

    #[test]
    fn solves_obey_energy_identity_and_maximum_principle(
        bottom in bump(),
        psi in prop::collection::vec(-1.0f64..1.0, 13),
        ny in 3usize..9,
    ) {
        let m = mesh_over(bottom, 12, ny);
        let t = SurfaceTrace::top(&m, psi.clone()).unwrap();
        let f = solve_potential(&m, &[t.clone()], SolverOptions::default()).unwrap();
        let lo = psi.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = psi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for &v in f.values() {
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9, "{v} outside [{lo}, {hi}]");
        }
        let e = energy(&f);
        let q = boundary_flux(&f, BoundaryTag::Top).unwrap();
        let pairing = surface_pairing(&t, &q).unwrap();
        prop_assert!((e - pairing).abs() <= 1e-8 * e.max(1e-300), "energy {e} pairing {pairing}");
        prop_assert!(total_boundary_flux(&f).unwrap().abs() <= 1e-10 * e.max(1.0));
    }

    #[test]
    fn dtn_quadratic_form_is_the_energy(
        bottom in bump(),
        psi in prop::collection::vec(-1.0f64..1.0, 11),
    ) {
        let m = mesh_over(bottom, 10, 6);
        let g = assemble_dtn(&m, SolverOptions::default()).unwrap();
        let t = SurfaceTrace::top(&m, psi).unwrap();
        let f = solve_potential(&m, &[t.clone()], SolverOptions::default()).unwrap();
        let e = energy(&f);
        let qf = g.quadratic_form(&t).unwrap();
        prop_assert!((qf - e).abs() <= 1e-8 * e, "{qf} vs {e}");
        let s = g.energy_matrix();
        prop_assert!((s - s.transpose()).norm() <= 1e-10 * s.norm());
        let ones = g.apply(&t.with_values(vec![1.0; t.len()]).unwrap()).unwrap();
        let n: f64 = ones.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(n <= 1e-9 * g.density_matrix().norm() * (t.len() as f64).sqrt());
    }

    #[test]
    fn upper_numerator_is_nonnegative(bottom in bump(), k in 1u32..4) {
        let m0 = mesh_over(Profile::flat(0.0), 16, 8);
        let m1 = mesh_over(bottom, 16, 8);
        let psi: Vec<f64> = m0.column_xs().iter().map(|&x| (k as f64 * std::f64::consts::PI * x).cos()).collect();
        let m = measurements(&m0, &m1, &psi, &psi, Window::full(1.0), SolverOptions::default()).unwrap();
        let up = caseI_upper(&m.set).unwrap();
        prop_assert!(up.numerator >= -1e-8 * m.set.w(0, 0), "{}", up.numerator);
    }

    #[test]
    fn window_discrepancies_shrink_with_the_window(
        bottom in bump(),
        eps in 0.01f64..0.2,
        cuts in (0.0f64..0.3, 0.0f64..0.3, 0.0f64..0.3, 0.0f64..0.3),
    ) {
        let m0 = mesh_over(Profile::flat(0.0), 24, 8);
        let m1 = mesh_over(bottom, 24, 8);
        let xs = m0.column_xs();
        let psi0: Vec<f64> = xs.iter().map(|&x| (std::f64::consts::PI * x).cos()).collect();
        let psi1: Vec<f64> = xs.iter().map(|&x| (std::f64::consts::PI * x).cos() + eps * x * x).collect();
        let m = measurements(&m0, &m1, &psi0, &psi1, Window::full(1.0), SolverOptions::default()).unwrap();
        let outer = Window::new(cuts.0, 1.0 - cuts.1).unwrap();
        let inner = Window::new(cuts.0 + cuts.2 * 0.5, 1.0 - cuts.1 - cuts.3 * 0.5).unwrap();
        let (h_out, f_out) = window_discrepancies(&m.set, outer).unwrap();
        let (h_in, f_in) = window_discrepancies(&m.set, inner).unwrap();
        prop_assert!(h_in <= h_out * (1.0 + 1e-12) + 1e-15, "{h_in} > {h_out}");
        prop_assert!(f_in <= f_out * (1.0 + 1e-12) + 1e-15, "{f_in} > {f_out}");
    }
}

fn synthetic_row(parameter: f64, area: f64, lo: f64, up: f64) -> SizeEstimateReport {
    let mut r = SizeEstimateReport::empty(CaseLabel::CaseI, parameter, "mode1", 8, 8);
    r.area = area;
    r.area_plus = area;
    r.eta_lower = Some(lo);
    r.eta_upper = Some(up);
    r
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn sandwich_holds_on_training_rows(rows in prop::collection::vec((1e-3f64..1.0, 1e-4f64..1.0, 1e-4f64..1.0), 1..12)) {
        let table: Vec<SizeEstimateReport> = rows
            .iter()
            .enumerate()
            .map(|(k, &(a, lo, up))| synthetic_row(k as f64, a, lo, up))
            .collect();
        let train: Vec<&SizeEstimateReport> = table.iter().collect();
        let fit = fit_split(&train, &train).unwrap();
        prop_assert!(fit.violations.is_empty(), "{:?}", fit.violations);
        for r in &table {
            let (lo, up) = (r.eta_lower.unwrap(), r.eta_upper.unwrap());
            prop_assert!(fit.c_lower * lo <= r.area * (1.0 + 1e-12));
            prop_assert!(r.area <= fit.c_upper * up * (1.0 + 1e-12));
            prop_assert!(lo <= fit.c_upper / fit.c_lower * up * (1.0 + 1e-12));
        }
        let tight_lower = table.iter().any(|r| (fit.c_lower * r.eta_lower.unwrap() - r.area).abs() <= 1e-12 * r.area);
        let tight_upper = table.iter().any(|r| (fit.c_upper * r.eta_upper.unwrap() - r.area).abs() <= 1e-12 * r.area);
        prop_assert!(tight_lower && tight_upper);
    }
}
