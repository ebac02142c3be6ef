use micro_reynolds::cell::{self, FlowFactors, QuadratureField};
use micro_reynolds::coefficients::{self, CoefficientRoute, Phi2Variant};
use micro_reynolds::oracle::{self, BvpLoad};
use micro_reynolds::params::{self, FluidParams};
use micro_reynolds::reynolds::{self, MacroDomain};
use micro_reynolds::roughness::RoughnessProfile;
use micro_reynolds::sparse::LinearSolver;
use proptest::prelude::*;

/// Admissible fluid and thickness on the closed-form route.
fn admissible() -> impl Strategy<Value = (FluidParams, f64)> {
    (
        0.05..0.9f64,
        0.3..3.0f64,
        0.2..3.0f64,
        0.5..2.0f64,
        0.3..2.0f64,
    )
        .prop_filter_map(
            "outside the existence region",
            |(n2, alpha, beta, rc, h)| {
                let p = FluidParams::new(n2, rc, alpha, beta, [0.0, 0.0]);
                let ok = params::validate(&p, h).is_ok()
                    && coefficients::route(h, &p) == CoefficientRoute::ClosedForm;
                ok.then_some((p, h))
            },
        )
}

fn vec2() -> impl Strategy<Value = [f64; 2]> {
    [-2.0..2.0f64, -2.0..2.0f64]
}

fn add(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] + b[0], a[1] + b[1]]
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 24,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn bvp_is_linear((fluid, h) in admissible(), g in vec2(), s in vec2(), g2 in vec2(), s2 in vec2()) {
        let m = 128;
        let a = oracle::solve_bvp(h, &fluid, BvpLoad { g, s }, m).unwrap();
        let b = oracle::solve_bvp(h, &fluid, BvpLoad { g: g2, s: s2 }, m).unwrap();
        let sum = oracle::solve_bvp(h, &fluid, BvpLoad { g: add(g, g2), s: add(s, s2) }, m).unwrap();
        let scale = 1.0 + sum.u.iter().chain(&sum.w).flatten().fold(0.0f64, |acc, v| acc.max(v.abs()));
        for k in 0..sum.z.len() {
            for i in 0..2 {
                prop_assert!((a.u[k][i] + b.u[k][i] - sum.u[k][i]).abs() <= 1e-12 * scale);
                prop_assert!((a.w[k][i] + b.w[k][i] - sum.w[k][i]).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn bvp_components_pair_up((fluid, h) in admissible()) {
        let m = 128;
        let first = oracle::solve_bvp(h, &fluid, BvpLoad::pressure([1.0, 0.0]), m).unwrap();
        let second = oracle::solve_bvp(h, &fluid, BvpLoad::pressure([0.0, 1.0]), m).unwrap();
        for k in 0..first.z.len() {
            prop_assert!((first.u[k][0] - second.u[k][1]).abs() <= 1e-12);
            prop_assert!((first.w[k][1] + second.w[k][0]).abs() <= 1e-12);
        }
    }

    #[test]
    fn closed_forms_track_the_oracle((fluid, h) in admissible()) {
        let closed = coefficients::closed_form_theta_phi(h, &fluid, Phi2Variant::A2).unwrap();
        let reference = oracle::oracle_coefficients(h, &fluid, 512).unwrap();
        prop_assert!(closed.theta1 > 0.0);
        for (c, o) in closed.as_array().into_iter().zip(reference.as_array()) {
            prop_assert!((c - o).abs() <= 1e-6 * (1.0 + o.abs()), "{c} vs {o}");
        }
    }

    #[test]
    fn profile_superposes((fluid, h) in admissible(), z in 0.0..1.0f64, g in vec2(), s in vec2()) {
        let z3 = z * h;
        let both = coefficients::profile(z3, h, &fluid, g, s).unwrap();
        let pg = coefficients::profile(z3, h, &fluid, g, [0.0, 0.0]).unwrap();
        let ps = coefficients::profile(z3, h, &fluid, [0.0, 0.0], s).unwrap();
        for i in 0..2 {
            prop_assert!((pg.u[i] + ps.u[i] - both.u[i]).abs() <= 1e-12 * (1.0 + both.u[i].abs()));
            prop_assert!((pg.w[i] + ps.w[i] - both.w[i]).abs() <= 1e-12 * (1.0 + both.w[i].abs()));
        }
    }

    #[test]
    fn constant_field_has_no_correction(theta1 in 0.05..2.0f64, theta2 in -1.0..1.0f64, s in vec2()) {
        let sample = coefficients::CoefficientSample { theta1, theta2, phi1: 0.1, phi2: -0.2 };
        let field = QuadratureField::constant(8, sample);
        let sol = cell::solve_correctors(&field, s, LinearSolver::default()).unwrap();
        prop_assert!(sol.max_gradient() <= 1e-12);
        let factors = cell::flow_factors(&sol, &field);
        prop_assert!(factors.k1[0][1].abs() <= 1e-12);
        prop_assert!((factors.k1[0][0] - theta1).abs() <= 1e-12);
    }

    #[test]
    fn k1_symmetric_and_bounded(a1 in 0.0..0.3f64, a2 in 0.0..0.3f64, phase in 0.0..1.0f64) {
        let fluid = FluidParams::new(0.25, 1.0, 1.0, 1.0, [0.0, 0.0]);
        let profile = RoughnessProfile::cosine(1.0, [a1, a2], [phase, 0.0]).unwrap();
        let field = QuadratureField::from_profile(&profile, &fluid, 16, Phi2Variant::A2).unwrap();
        let sol = cell::solve_correctors(&field, [0.0, 0.0], LinearSolver::default()).unwrap();
        let factors = cell::flow_factors(&sol, &field);
        let (harmonic, arithmetic) = field.theta1_bounds();
        let [low, high] = factors.k1_sym_eigenvalues();
        prop_assert!(factors.symmetry_defect() <= 1e-12);
        prop_assert!(harmonic - 1e-12 <= low && high <= arithmetic + 1e-12);
    }

    #[test]
    fn pressure_scales_with_wall_velocity(scale in -3.0..3.0f64, s in vec2(), k12 in -0.05..0.05f64) {
        let factors = FlowFactors {
            k1: [[0.3, k12], [k12, 0.25]],
            l1: 0.4,
            k2: [[0.1, 0.0], [0.0, 0.1]],
            l2: -0.05,
        };
        let domain = MacroDomain::new(1.0, 2.0, 8, 12).unwrap();
        let base = reynolds::solve_pressure(&factors, &domain, s, LinearSolver::default()).unwrap();
        let scaled_s = [scale * s[0], scale * s[1]];
        let scaled = reynolds::solve_pressure(&factors, &domain, scaled_s, LinearSolver::default()).unwrap();
        let tol = 1e-11 * (1.0 + scale.abs());
        for k in 0..base.p.len() {
            prop_assert!((scale * base.p[k] - scaled.p[k]).abs() <= tol);
            for i in 0..2 {
                prop_assert!((scale * base.u[k][i] - scaled.u[k][i]).abs() <= tol);
                prop_assert!((scale * base.w[k][i] - scaled.w[k][i]).abs() <= tol);
            }
        }
    }

    #[test]
    fn fields_ignore_the_pressure_constant(shift in -10.0..10.0f64, s in vec2()) {
        let factors = FlowFactors {
            k1: [[0.3, 0.01], [0.01, 0.25]],
            l1: 0.4,
            k2: [[0.1, 0.02], [-0.02, 0.1]],
            l2: -0.05,
        };
        let domain = MacroDomain::new(1.0, 1.0, 10, 10).unwrap();
        let sol = reynolds::solve_pressure(&factors, &domain, s, LinearSolver::default()).unwrap();
        let shifted: Vec<f64> = sol.p.iter().map(|p| p + shift).collect();
        let (u, w) = reynolds::averaged_fields(&domain, &factors, s, &shifted);
        for k in 0..u.len() {
            for i in 0..2 {
                prop_assert!((u[k][i] - sol.u[k][i]).abs() <= 1e-11);
                prop_assert!((w[k][i] - sol.w[k][i]).abs() <= 1e-11);
            }
        }
        let mut gauged = shifted;
        reynolds::normalize_gauge(&domain, &mut gauged);
        for (a, b) in gauged.iter().zip(&sol.p) {
            prop_assert!((a - b).abs() <= 1e-11);
        }
    }

    #[test]
    fn roughness_is_periodic(h0 in 1.0..2.0f64, a in [0.0..0.4f64, 0.0..0.4f64], z in [0.0..1.0f64, 0.0..1.0f64]) {
        let profile = RoughnessProfile::cosine(h0, a, [0.1, 0.3]).unwrap();
        let base = profile.eval(z);
        prop_assert!((profile.eval([z[0] + 1.0, z[1]]) - base).abs() <= 1e-12);
        prop_assert!((profile.eval([z[0], z[1] - 1.0]) - base).abs() <= 1e-12);
        prop_assert!(profile.h_min() - 1e-12 <= base && base <= profile.h_max() + 1e-12);
    }
}
