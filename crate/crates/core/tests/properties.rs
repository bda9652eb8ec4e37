use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use riemann_cg::checks::geometry_manifolds;
use riemann_cg::manifold::gaussian_blocks;
use riemann_cg::transports::{transport_scaled, transport_switch};
use riemann_cg::{Manifold, Point, Tangent};

fn max_abs_diff(a: &[nalgebra::DMatrix<f64>], b: &[nalgebra::DMatrix<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs().max())
        .fold(0.0, f64::max)
}

fn instance(index: usize, seed: u64) -> (Box<dyn Manifold>, Point, ChaCha8Rng) {
    let m = geometry_manifolds().swap_remove(index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = m.random_point(&mut rng);
    (m, x, rng)
}

fn in_domain(m: &dyn Manifold, x: &Point, eta: Tangent) -> Tangent {
    match m.step_cap(x, &eta) {
        Some(cap) if cap < 1.0 => eta.scale(0.9 * cap),
        _ => eta,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metric_is_symmetric_and_positive(index in 0usize..6, seed: u64) {
        let (m, x, mut rng) = instance(index, seed);
        let xi = m.random_tangent(&x, 1.0, &mut rng);
        let zeta = m.random_tangent(&x, 1.0, &mut rng);
        prop_assert!((m.metric(&x, &xi, &zeta) - m.metric(&x, &zeta, &xi)).abs() <= 1e-12);
        prop_assert!(m.metric(&x, &xi, &xi) > 0.0);
    }

    #[test]
    fn projection_is_idempotent(index in 0usize..6, seed: u64) {
        let (m, x, mut rng) = instance(index, seed);
        let raw = gaussian_blocks(&m.shapes(), &mut rng);
        let p = m.project(&x, &raw);
        let pp = m.project(&x, &p);
        prop_assert!(max_abs_diff(p.blocks(), pp.blocks()) <= 1e-12 * (1.0 + raw.ambient_norm()));
        prop_assert!(m.tangency_residual(&x, &p) <= 1e-12 * (1.0 + raw.ambient_norm()));
    }

    #[test]
    fn retraction_fixes_base_point(index in 0usize..6, seed: u64) {
        let (m, x, _) = instance(index, seed);
        let zero = Tangent::zeros(&m.shapes());
        let y = m.retract(&x, &zero).unwrap();
        prop_assert!(max_abs_diff(x.blocks(), y.blocks()) <= 1e-14);
    }

    #[test]
    fn retraction_is_first_order_rigid(index in 0usize..6, seed: u64) {
        let (m, x, mut rng) = instance(index, seed);
        let xi = m.random_tangent(&x, 1.0, &mut rng);
        let zero = Tangent::zeros(&m.shapes());
        let t = m.transport_diff(&x, &zero, &xi).unwrap();
        prop_assert!(max_abs_diff(t.blocks(), xi.blocks()) <= 1e-12);
    }

    #[test]
    fn retraction_lands_on_manifold(index in 0usize..6, seed: u64, scale in 0.01f64..3.0) {
        let (m, x, mut rng) = instance(index, seed);
        let eta = in_domain(&*m, &x, m.random_tangent(&x, scale, &mut rng));
        let y = m.retract(&x, &eta).unwrap();
        prop_assert!(m.feasibility_residual(&y) <= 1e-10);
        let t = m.transport_diff(&x, &eta, &m.random_tangent(&x, 1.0, &mut rng)).unwrap();
        prop_assert!(m.tangency_residual(&y, &t) <= 1e-10);
    }

    #[test]
    fn scaled_transport_preserves_norm(index in 0usize..6, seed: u64, scale in 0.01f64..3.0) {
        let (m, x, mut rng) = instance(index, seed);
        let eta = in_domain(&*m, &x, m.random_tangent(&x, scale, &mut rng));
        let xi = m.random_tangent(&x, 1.0, &mut rng);
        let y = m.retract(&x, &eta).unwrap();
        let t = transport_scaled(&*m, &x, &eta, &xi).unwrap();
        prop_assert!((m.norm(&y, &t) - m.norm(&x, &xi)).abs() <= 1e-12);
    }

    #[test]
    fn switching_transport_never_increases_norm(index in 0usize..6, seed: u64, scale in 0.01f64..3.0) {
        let (m, x, mut rng) = instance(index, seed);
        let eta = in_domain(&*m, &x, m.random_tangent(&x, scale, &mut rng));
        let xi = m.random_tangent(&x, 1.0, &mut rng);
        let out = transport_switch(&*m, &x, &eta, &xi).unwrap();
        prop_assert!(out.norm <= m.norm(&x, &xi) * (1.0 + 1e-12));
        let expected = match m.transport_norm_gain(&x, &eta, &xi) {
            Some(gain) => gain > 0.0,
            None => out.ratio > 1.0,
        };
        prop_assert_eq!(out.scaled, expected);
    }
}
