use riemann_cg::checks::solve_preset;
use riemann_cg::diagnostics::{audit_lemma, cos_theta};
use riemann_cg::experiment::{build_preset, seeded_gaussian, X0Spec, PRESETS, PRESET_SEED};
use riemann_cg::manifolds::{SphereRetraction, SphereStandard};
use riemann_cg::problems::BrockettProblem;
use riemann_cg::problems::{diag_ramp, RayleighProblem};
use riemann_cg::{cg_solve, CgConfig, Point, Problem, Status, Tangent, Variant};

#[test]
fn variants_coincide_until_the_first_scaled_step() {
    for preset in ["peculiar-sphere-20", "ortho-sphere-100"] {
        let (scaled, _) = solve_preset(preset, Variant::Scaled).unwrap();
        let (standard, _) = solve_preset(preset, Variant::Standard).unwrap();
        let first = scaled
            .trace
            .iter()
            .position(|s| s.step.as_ref().is_some_and(|r| r.scaled))
            .expect("some step is scaled");
        for (a, b) in scaled.trace.iter().zip(&standard.trace).take(first + 1) {
            assert_eq!(a.x, b.x, "{preset} k={}", a.k);
            assert_eq!(a.eta, b.eta, "{preset} k={}", a.k);
            assert_eq!(a.f.to_bits(), b.f.to_bits());
            let (ra, rb) = (a.step.as_ref().unwrap(), b.step.as_ref().unwrap());
            assert_eq!(ra.alpha.to_bits(), rb.alpha.to_bits());
            assert_eq!(ra.ratio.to_bits(), rb.ratio.to_bits());
            if a.k < first {
                assert_eq!(ra, rb);
            }
        }
        let next = first + 1;
        assert_ne!(scaled.trace[next].eta, standard.trace[next].eta, "{preset}");
        assert!(scaled.trace[first].step.as_ref().unwrap().ratio > 1.0);
    }
}

#[test]
fn restart_every_step_is_steepest_descent() {
    let setup = build_preset("peculiar-sphere-20").unwrap();
    let config = CgConfig {
        restart_period: Some(1),
        max_iter: 200,
        ..CgConfig::default()
    };
    let m = &*setup.manifold;
    let out = cg_solve(&*setup.problem, m, setup.reference_x0, &config).unwrap();
    for state in out.trace.iter().filter(|s| s.grad_norm > 0.0) {
        assert_eq!(state.beta, 0.0);
        let c = cos_theta(m, &state.x, &state.grad, &state.eta).unwrap();
        assert!((c - 1.0).abs() <= 1e-12, "k={} cos={c}", state.k);
    }
}

#[test]
fn descent_ratio_bounds_hold_for_the_standard_variant_too() {
    let c2 = CgConfig::default().wolfe.c2;
    for preset in PRESETS {
        let (out, m) = solve_preset(preset, Variant::Standard).unwrap();
        let audit = audit_lemma(&*m, &out.trace, c2);
        assert!(audit.passed(), "{preset}: {audit:?}");
    }
}

#[test]
fn brockett_reaches_its_minimum() {
    let setup = build_preset("brockett-stiefel-4x2").unwrap();
    let (out, _) = solve_preset("brockett-stiefel-4x2", Variant::Scaled).unwrap();
    assert_eq!(out.status, Status::Converged);
    let b = BrockettProblem::new(
        {
            let b = seeded_gaussian(4, 4, PRESET_SEED);
            (&b + b.transpose()) * 0.5
        },
        vec![1.0, 2.0],
    )
    .unwrap();
    assert!((setup.problem.value(&out.final_state.x) - b.minimum()).abs() < 1e-10);
}

#[test]
fn random_starts_converge_on_every_preset() {
    for preset in PRESETS {
        let setup = build_preset(preset).unwrap();
        for seed in 0..3 {
            let x0 = X0Spec::Random(seed).resolve(&setup);
            let out =
                cg_solve(&*setup.problem, &*setup.manifold, x0, &CgConfig::default()).unwrap();
            assert_eq!(out.status, Status::Converged, "{preset} seed {seed}");
            assert_eq!(out.fallback_steps, 0, "{preset} seed {seed}");
        }
    }
}

#[test]
fn no_trace_when_disabled() {
    let setup = build_preset("svd-6x4").unwrap();
    let config = CgConfig {
        record_trace: false,
        ..CgConfig::default()
    };
    let out = cg_solve(
        &*setup.problem,
        &*setup.manifold,
        setup.reference_x0,
        &config,
    )
    .unwrap();
    assert!(out.trace.is_empty());
    assert_eq!(out.status, Status::Converged);
}

/// Rayleigh quotient whose gradient is undefined below a value threshold.
#[derive(Debug)]
struct Cliff(RayleighProblem);

impl Problem for Cliff {
    fn name(&self) -> String {
        "cliff".into()
    }
    fn shapes(&self) -> Vec<(usize, usize)> {
        self.0.shapes()
    }
    fn value(&self, x: &Point) -> f64 {
        self.0.value(x)
    }
    fn euclidean_gradient(&self, x: &Point) -> Tangent {
        let g = self.0.euclidean_gradient(x);
        if self.0.value(x) < 2.5 {
            g.scale(f64::NAN)
        } else {
            g
        }
    }
}

#[test]
fn failure_keeps_the_partial_trace() {
    let problem = Cliff(RayleighProblem::new(diag_ramp(3, 1.0)).unwrap());
    let m = SphereStandard::new(3, SphereRetraction::QrNormalize).unwrap();
    let x0 = Point::from_slice(&[0.1, 0.2, (1.0f64 - 0.05).sqrt()]);
    let out = cg_solve(&problem, &m, x0, &CgConfig::default()).unwrap();
    assert!(matches!(out.status, Status::Failed(_)), "{:?}", out.status);
    assert!(!out.trace.is_empty());
    assert_eq!(out.trace.last().unwrap().k, out.iterations);
}

#[test]
fn non_finite_start_is_an_error() {
    let problem = Cliff(RayleighProblem::new(diag_ramp(3, 1.0)).unwrap());
    let m = SphereStandard::new(3, SphereRetraction::QrNormalize).unwrap();
    let x0 = Point::from_slice(&[1.0, 0.0, 0.0]);
    let err = cg_solve(&problem, &m, x0, &CgConfig::default()).unwrap_err();
    assert!(matches!(err, riemann_cg::Error::NonFinite(_)), "{err}");
}
