//! Vector transports: differentiated retractions, the norm-preserving scaled
//! transport and the switching rule that applies scaling only when the
//! differentiated retraction would increase the norm.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::manifold::{Manifold, Point, Tangent};
use crate::manifolds::{qf, qr_positive};

/// Norms at or below this are treated as a vanished transport.
pub const DEGENERATE_NORM: f64 = 1e-300;

/// `(1/‖x+η‖) (I - (x+η)(x+η)ᵀ/‖x+η‖²) ξ`
pub fn transport_diff_qr_sphere(x: &Point, eta: &Tangent, xi: &Tangent) -> Result<Tangent> {
    let y = &x.offset(eta, 1.0)[0];
    let sq = y.dot(y);
    if sq == 0.0 {
        return Err(Error::SingularRetraction);
    }
    let xi = xi.block(0);
    let out = (xi - y * (y.dot(xi) / sq)) / sq.sqrt();
    Ok(Tangent::from_matrix(out))
}

/// `ξ - (ηᵀξ / sqrt(1 - ηᵀη)) x`, defined for `‖η‖ < 1`.
///
/// The formula is linear in `ξ`, so only `η` is restricted.
pub fn transport_diff_orthographic(x: &Point, eta: &Tangent, xi: &Tangent) -> Result<Tangent> {
    let s = eta.dot(eta);
    if !(s < 1.0) {
        return Err(Error::RetractionDomain { norm: s.sqrt() });
    }
    let coef = eta.dot(xi) / (1.0 - s).sqrt();
    Ok(Tangent::from_matrix(xi.block(0) - x.block(0) * coef))
}

/// Directional derivative of `qf` at `Y` along `Z`:
/// `Q ρ(QᵀZR⁻¹) + (I - QQᵀ) Z R⁻¹`, with `ρ(A)` the skew-symmetric matrix
/// whose strictly lower triangle is that of `A`.
pub fn qf_derivative(y: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (q, r) = qr_positive(y)?;
    let w = r
        .transpose()
        .solve_lower_triangular(&z.transpose())
        .ok_or(Error::RankDeficient { column: 0 })?
        .transpose();
    let a = q.transpose() * &w;
    let mut lower = a.lower_triangle();
    lower.fill_diagonal(0.0);
    let rho = &lower - lower.transpose();
    Ok(&w + &q * (rho - a))
}

/// Differentiated QR retraction on St(p, n), closed form.
pub fn transport_diff_qr_stiefel(x: &Point, eta: &Tangent, xi: &Tangent) -> Result<Tangent> {
    let y = &x.offset(eta, 1.0)[0];
    Ok(Tangent::from_matrix(qf_derivative(y, xi.block(0))?))
}

/// Differentiated QR retraction on St(p, n) by central differences of `qf`.
pub fn transport_diff_qr_stiefel_fd(x: &Point, eta: &Tangent, xi: &Tangent) -> Result<Tangent> {
    let y = &x.offset(eta, 1.0)[0];
    let z = xi.block(0);
    let zn = z.norm();
    if zn == 0.0 {
        return Ok(xi.zeros_like());
    }
    let h = 1e-6 / zn.max(1.0);
    let plus = qf(&(y + z * h))?;
    let minus = qf(&(y - z * h))?;
    Ok(Tangent::from_matrix((plus - minus) / (2.0 * h)))
}

/// Rescale `transported` (tangent at `target`) to have norm `source_norm`.
/// A zero source maps to zero.
pub fn rescale(
    m: &dyn Manifold,
    target: &Point,
    transported: &Tangent,
    source_norm: f64,
) -> Result<Tangent> {
    if source_norm == 0.0 {
        return Ok(transported.zeros_like());
    }
    let tn = m.norm(target, transported);
    if !(tn > DEGENERATE_NORM) {
        return Err(Error::DegenerateTransport);
    }
    Ok(transported.scale(source_norm / tn))
}

/// Scaled transport: `(‖ξ‖_x / ‖T^R_η(ξ)‖) T^R_η(ξ)`.
pub fn transport_scaled(
    m: &dyn Manifold,
    x: &Point,
    eta: &Tangent,
    xi: &Tangent,
) -> Result<Tangent> {
    let target = m.retract(x, eta)?;
    let t = m.transport_diff(x, eta, xi)?;
    rescale(m, &target, &t, m.norm(x, xi))
}

/// Outcome of the switching transport.
#[derive(Clone, Debug)]
pub struct TransportOutcome {
    /// Transported vector, tangent at `R_x(η)`.
    pub vector: Tangent,
    /// `‖T^R_η(ξ)‖_{R_x(η)} / ‖ξ‖_x` (NaN when `ξ = 0`).
    pub ratio: f64,
    /// Whether the scaled transport was applied.
    pub scaled: bool,
    /// Norm of `vector` at the target point.
    pub norm: f64,
}

/// Switching rule from an already computed differentiated transport.
///
/// `transported` is `T^R_η(ξ)` at `target = R_x(η)` and `source_norm` is
/// `‖ξ‖_x`. `gain` is [`Manifold::transport_norm_gain`], which decides the
/// switch when present. Ties go to the unscaled transport.
pub fn switch_from_parts(
    m: &dyn Manifold,
    target: &Point,
    transported: Tangent,
    source_norm: f64,
    gain: Option<f64>,
) -> Result<TransportOutcome> {
    let tn = m.norm(target, &transported);
    let ratio = tn / source_norm;
    let increases = match gain {
        Some(g) => g > 0.0,
        None => tn > source_norm,
    };
    if !increases {
        return Ok(TransportOutcome {
            vector: transported,
            ratio,
            scaled: false,
            norm: tn,
        });
    }
    let vector = rescale(m, target, &transported, source_norm)?;
    let norm = m.norm(target, &vector);
    Ok(TransportOutcome {
        vector,
        ratio,
        scaled: true,
        norm,
    })
}

/// `T^R` if it does not increase the norm of `ξ`, the scaled transport otherwise.
pub fn transport_switch(
    m: &dyn Manifold,
    x: &Point,
    eta: &Tangent,
    xi: &Tangent,
) -> Result<TransportOutcome> {
    let target = m.retract(x, eta)?;
    let t = m.transport_diff(x, eta, xi)?;
    let gain = m.transport_norm_gain(x, eta, xi);
    switch_from_parts(m, &target, t, m.norm(x, xi), gain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifolds::{
        retract_qr_stiefel, SpherePeculiar, SphereRetraction, SphereStandard, Stiefel,
    };
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fd_retraction(m: &dyn Manifold, x: &Point, eta: &Tangent, xi: &Tangent, t: f64) -> Tangent {
        let plus = m.retract_raw(x, &eta.axpy(t, xi)).unwrap();
        let minus = m.retract_raw(x, &eta.axpy(-t, xi)).unwrap();
        let d: Vec<_> = plus
            .blocks()
            .iter()
            .zip(minus.blocks())
            .map(|(a, b)| (a - b) / (2.0 * t))
            .collect();
        Tangent::from_blocks(d)
    }

    #[test]
    fn qr_sphere_zero_step_is_identity() {
        let x = Point::from_slice(&[0.6, 0.8, 0.0]);
        let xi = Tangent::from_slice(&[0.8, -0.6, 0.5]);
        let out = transport_diff_qr_sphere(&x, &xi.zeros_like(), &xi).unwrap();
        assert!((&out - &xi).ambient_norm() < 1e-15);
    }

    #[test]
    fn qr_sphere_closed_form_value() {
        let x = Point::from_slice(&[1.0, 0.0]);
        let eta = Tangent::from_slice(&[0.0, 1.0]);
        let out = transport_diff_qr_sphere(&x, &eta, &eta).unwrap();
        let v = 0.5 / 2f64.sqrt();
        assert!((out.as_slice()[0] + v).abs() < 1e-15);
        assert!((out.as_slice()[1] - v).abs() < 1e-15);
        let s = SphereStandard::new(2, SphereRetraction::QrNormalize).unwrap();
        let fd = fd_retraction(&s, &x, &eta, &eta, 1e-6);
        assert!((&out - &fd).ambient_norm() < 1e-9);
    }

    #[test]
    fn qr_sphere_matches_fd_on_s19() {
        let s = SpherePeculiar::with_default_coefficient(20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let x = s.random_point(&mut rng);
            let eta = SphereStandard::new(20, SphereRetraction::QrNormalize)
                .unwrap()
                .random_tangent(&x, 1.5, &mut rng);
            let xi = SphereStandard::new(20, SphereRetraction::QrNormalize)
                .unwrap()
                .random_tangent(&x, 1.0, &mut rng);
            let out = s.transport_diff(&x, &eta, &xi).unwrap();
            let fd = fd_retraction(&s, &x, &eta, &xi, 1e-6);
            assert!((&out - &fd).ambient_norm() < 1e-6);
        }
    }

    #[test]
    fn orthographic_examples() {
        let x = Point::from_slice(&[1.0, 0.0, 0.0]);
        let eta = Tangent::from_slice(&[0.0, 0.6, 0.0]);
        let out = transport_diff_orthographic(&x, &eta, &eta).unwrap();
        assert!((out.as_slice()[0] + 0.45).abs() < 1e-15);
        assert_eq!(out.as_slice()[1], 0.6);
        let sq = out.dot(&out);
        assert!((sq - 0.5625).abs() < 1e-15);
        assert!((sq - (0.36 + 0.1296 / 0.64)).abs() < 1e-15);

        let orth = Tangent::from_slice(&[0.0, 0.0, 0.3]);
        assert_eq!(transport_diff_orthographic(&x, &eta, &orth).unwrap(), orth);

        let big = Tangent::from_slice(&[0.0, 1.0, 0.0]);
        assert!(matches!(
            transport_diff_orthographic(&x, &big, &orth),
            Err(Error::RetractionDomain { .. })
        ));
    }

    #[test]
    fn orthographic_increases_norm_when_coupled() {
        let s = SphereStandard::new(5, SphereRetraction::Orthographic).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let x = s.random_point(&mut rng);
            let eta = s.random_tangent(&x, 0.5, &mut rng);
            let xi = s.random_tangent(&x, 0.7, &mut rng);
            let out = transport_diff_orthographic(&x, &eta, &xi).unwrap();
            assert!(out.ambient_norm() > xi.ambient_norm());
        }
    }

    #[test]
    fn stiefel_zero_step_and_sphere_reduction() {
        let st = Stiefel::new(6, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let x = st.random_point(&mut rng);
        let xi = st.random_tangent(&x, 1.0, &mut rng);
        let out = transport_diff_qr_stiefel(&x, &xi.zeros_like(), &xi).unwrap();
        assert!((&out - &xi).ambient_norm() < 1e-13);

        let sp = SphereStandard::new(6, SphereRetraction::QrNormalize).unwrap();
        let x = sp.random_point(&mut rng);
        let eta = sp.random_tangent(&x, 2.0, &mut rng);
        let xi = sp.random_tangent(&x, 1.0, &mut rng);
        let a = transport_diff_qr_stiefel(&x, &eta, &xi).unwrap();
        let b = transport_diff_qr_sphere(&x, &eta, &xi).unwrap();
        assert!((&a - &b).ambient_norm() < 1e-14);
    }

    #[test]
    fn stiefel_matches_fd_and_is_tangent() {
        let st = Stiefel::new(6, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..20 {
            let x = st.random_point(&mut rng);
            let eta = st.random_tangent(&x, 1.2, &mut rng);
            let xi = st.random_tangent(&x, 1.0, &mut rng);
            let out = transport_diff_qr_stiefel(&x, &eta, &xi).unwrap();
            let fd = fd_retraction(&st, &x, &eta, &xi, 1e-6);
            assert!((&out - &fd).ambient_norm() < 1e-6);
            let y = retract_qr_stiefel(&x, &eta).unwrap();
            assert!(st.tangency_residual(&y, &out) < 1e-12);
            let fd_mode = transport_diff_qr_stiefel_fd(&x, &eta, &xi).unwrap();
            assert!((&out - &fd_mode).ambient_norm() < 1e-6);
        }
    }

    #[test]
    fn scaled_examples() {
        let s = SphereStandard::new(3, SphereRetraction::Orthographic).unwrap();
        let x = Point::from_slice(&[1.0, 0.0, 0.0]);
        let eta = Tangent::from_slice(&[0.0, 0.6, 0.0]);
        let out = transport_scaled(&s, &x, &eta, &eta).unwrap();
        assert!((out.as_slice()[0] + 0.36).abs() < 1e-15);
        assert!((out.as_slice()[1] - 0.48).abs() < 1e-15);
        assert_eq!(out.as_slice()[2], 0.0);

        let zero = eta.zeros_like();
        assert!(transport_scaled(&s, &x, &eta, &zero).unwrap().is_zero());
    }

    #[test]
    fn switch_tie_goes_to_unscaled() {
        let s = SphereStandard::new(3, SphereRetraction::QrNormalize).unwrap();
        let x = Point::from_slice(&[1.0, 0.0, 0.0]);
        let xi = Tangent::from_slice(&[0.0, 0.6, 0.8]);
        let out = transport_switch(&s, &x, &xi.zeros_like(), &xi).unwrap();
        assert_eq!(out.ratio, 1.0);
        assert!(!out.scaled);
    }

    #[test]
    fn switch_on_orthographic_always_scales() {
        let s = SphereStandard::new(4, SphereRetraction::Orthographic).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for _ in 0..20 {
            let x = s.random_point(&mut rng);
            let eta = s.random_tangent(&x, 0.4, &mut rng);
            let out = transport_switch(&s, &x, &eta, &eta).unwrap();
            assert!(out.scaled);
            assert!(out.ratio > 1.0);
            assert!((out.norm - 0.4).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_transport_is_reported() {
        let s = SphereStandard::new(2, SphereRetraction::QrNormalize).unwrap();
        let y = Point::from_slice(&[0.0, 1.0]);
        let err = rescale(&s, &y, &Tangent::from_slice(&[0.0, 0.0]), 1.0);
        assert!(matches!(err, Err(Error::DegenerateTransport)));
    }
}
