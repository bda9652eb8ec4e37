//! Concrete manifolds: the unit sphere with the induced metric, the sphere
//! with a position-dependent diagonal metric, the Stiefel manifold and a
//! product of two Stiefel manifolds.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::manifold::{gaussian_blocks, Manifold, Point, Tangent};
use crate::transports;

/// Relative pivot threshold below which [`qf`] reports rank deficiency.
pub const RANK_TOL: f64 = 1e-12;

/// Thin QR factorization `B = QR` by modified Gram-Schmidt with one
/// reorthogonalization pass. `R` has a strictly positive diagonal.
pub fn qr_positive(b: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, p) = b.shape();
    if p > n {
        return Err(Error::RankDeficient { column: n });
    }
    let mut q = DMatrix::<f64>::zeros(n, p);
    let mut r = DMatrix::<f64>::zeros(p, p);
    for k in 0..p {
        let col = b.column(k);
        let col_norm = col.norm();
        let mut v = col.clone_owned();
        for _pass in 0..2 {
            for i in 0..k {
                let qi = q.column(i);
                let c = qi.dot(&v);
                v.axpy(-c, &qi, 1.0);
                r[(i, k)] += c;
            }
        }
        let d = v.norm();
        if !(d > RANK_TOL * col_norm) || d == 0.0 {
            return Err(Error::RankDeficient { column: k });
        }
        r[(k, k)] = d;
        q.column_mut(k).copy_from(&(v / d));
    }
    Ok((q, r))
}

/// Q-factor of the QR decomposition with positive-diagonal R.
pub fn qf(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    qr_positive(b).map(|(q, _)| q)
}

/// `(x + xi) / ||x + xi||`
pub fn retract_qr_sphere(x: &Point, xi: &Tangent) -> Result<Point> {
    let y = &x.offset(xi, 1.0)[0];
    let nrm = y.norm();
    if nrm == 0.0 || !nrm.is_finite() {
        return Err(Error::SingularRetraction);
    }
    Ok(Point::from_matrix(y / nrm))
}

/// `sqrt(1 - xiᵀxi) x + xi`, defined for `||xi|| < 1`.
pub fn retract_orthographic(x: &Point, xi: &Tangent) -> Result<Point> {
    let s = xi.dot(xi);
    if !(s < 1.0) {
        return Err(Error::RetractionDomain { norm: s.sqrt() });
    }
    let y = x.block(0) * (1.0 - s).sqrt() + xi.block(0);
    Ok(Point::from_matrix(y))
}

/// `qf(X + Xi)`
pub fn retract_qr_stiefel(x: &Point, xi: &Tangent) -> Result<Point> {
    let y = &x.offset(xi, 1.0)[0];
    Ok(Point::from_matrix(qf(y)?))
}

/// `(qf(U + xi), qf(V + eta))`
pub fn retract_product(uv: &Point, xi_eta: &Tangent) -> Result<Point> {
    let shifted = uv.offset(xi_eta, 1.0);
    Ok(Point::from_pair(qf(&shifted[0])?, qf(&shifted[1])?))
}

fn sphere_feasibility(x: &Point) -> f64 {
    let b = x.block(0);
    (b.dot(b) - 1.0).abs()
}

fn sphere_tangency(x: &Point, v: &Tangent) -> f64 {
    x.block(0).dot(v.block(0)).abs()
}

fn sphere_reproject(x: Point) -> Result<Point> {
    let b = x.block(0);
    let nrm = b.norm();
    if nrm == 0.0 {
        return Err(Error::SingularRetraction);
    }
    Ok(Point::from_matrix(b / nrm))
}

fn random_sphere_point(n: usize, rng: &mut dyn rand::RngCore) -> Point {
    loop {
        let g = gaussian_blocks(&[(n, 1)], rng);
        let nrm = g.ambient_norm();
        if nrm > 1e-8 {
            return Point::from_matrix(g.block(0) / nrm);
        }
    }
}

/// Retraction used on the unit sphere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SphereRetraction {
    /// Normalization, the `p = 1` case of the QR retraction.
    QrNormalize,
    /// `sqrt(1 - xiᵀxi) x + xi`
    Orthographic,
}

/// Fraction of the orthographic domain radius a line search may use.
pub const ORTHOGRAPHIC_CAP_FRACTION: f64 = 0.99;

/// `S^{n-1}` with the metric induced from `R^n`.
#[derive(Clone, Debug)]
pub struct SphereStandard {
    n: usize,
    retraction: SphereRetraction,
}

impl SphereStandard {
    pub fn new(n: usize, retraction: SphereRetraction) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("sphere needs n >= 2, got {n}")));
        }
        Ok(SphereStandard { n, retraction })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn retraction(&self) -> SphereRetraction {
        self.retraction
    }
}

impl Manifold for SphereStandard {
    fn name(&self) -> String {
        let r = match self.retraction {
            SphereRetraction::QrNormalize => "qr",
            SphereRetraction::Orthographic => "orthographic",
        };
        format!("sphere({}, {r})", self.n)
    }

    fn dimension(&self) -> usize {
        self.n - 1
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        vec![(self.n, 1)]
    }

    fn metric(&self, _x: &Point, xi: &Tangent, zeta: &Tangent) -> f64 {
        xi.dot(zeta)
    }

    fn project(&self, x: &Point, v: &Tangent) -> Tangent {
        let xb = x.block(0);
        Tangent::from_matrix(v.block(0) - xb * xb.dot(v.block(0)))
    }

    fn feasibility_residual(&self, x: &Point) -> f64 {
        sphere_feasibility(x)
    }

    fn tangency_residual(&self, x: &Point, v: &Tangent) -> f64 {
        sphere_tangency(x, v)
    }

    fn reproject(&self, x: Point) -> Result<Point> {
        sphere_reproject(x)
    }

    fn retract_raw(&self, x: &Point, xi: &Tangent) -> Result<Point> {
        match self.retraction {
            SphereRetraction::QrNormalize => retract_qr_sphere(x, xi),
            SphereRetraction::Orthographic => retract_orthographic(x, xi),
        }
    }

    fn transport_diff(&self, x: &Point, eta: &Tangent, xi: &Tangent) -> Result<Tangent> {
        match self.retraction {
            SphereRetraction::QrNormalize => transports::transport_diff_qr_sphere(x, eta, xi),
            SphereRetraction::Orthographic => transports::transport_diff_orthographic(x, eta, xi),
        }
    }

    fn riemannian_gradient(&self, x: &Point, euclid_grad: &Tangent) -> Result<Tangent> {
        Ok(self.project(x, euclid_grad))
    }

    fn step_cap(&self, x: &Point, eta: &Tangent) -> Option<f64> {
        match self.retraction {
            SphereRetraction::QrNormalize => None,
            SphereRetraction::Orthographic => {
                let nrm = self.norm(x, eta);
                (nrm > 0.0).then(|| ORTHOGRAPHIC_CAP_FRACTION / nrm)
            }
        }
    }

    fn transport_norm_gain(&self, _x: &Point, eta: &Tangent, xi: &Tangent) -> Option<f64> {
        let ee = eta.dot(eta);
        let ex = eta.dot(xi);
        Some(match self.retraction {
            // ‖ξ - (ηᵀξ / √(1 - ηᵀη)) x‖² - ‖ξ‖²
            SphereRetraction::Orthographic => ex * ex / (1.0 - ee),
            // ‖y‖⁻² (‖ξ‖² - (ηᵀξ)² / ‖y‖²) - ‖ξ‖² with ‖y‖² = 1 + ηᵀη
            SphereRetraction::QrNormalize => {
                let yy = 1.0 + ee;
                -(xi.dot(xi) * ee + ex * ex / yy) / yy
            }
        })
    }

    fn random_point(&self, rng: &mut dyn rand::RngCore) -> Point {
        random_sphere_point(self.n, rng)
    }
}

/// `S^{n-1}` with the metric `g_x(ξ, ζ) = ξᵀ G_x ζ`,
/// `G_x = diag(c (x⁽¹⁾)² + 1, 1, ..., 1)`, and the QR (normalization)
/// retraction.
#[derive(Clone, Debug)]
pub struct SpherePeculiar {
    n: usize,
    coefficient: f64,
}

impl SpherePeculiar {
    pub const DEFAULT_COEFFICIENT: f64 = 10000.0;

    pub fn new(n: usize, coefficient: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("sphere needs n >= 2, got {n}")));
        }
        if !(coefficient >= 0.0) || !coefficient.is_finite() {
            return Err(Error::Config(format!(
                "metric coefficient must be finite and >= 0, got {coefficient}"
            )));
        }
        Ok(SpherePeculiar { n, coefficient })
    }

    pub fn with_default_coefficient(n: usize) -> Result<Self> {
        Self::new(n, Self::DEFAULT_COEFFICIENT)
    }

    pub fn coefficient(&self) -> f64 {
        self.coefficient
    }

    /// First diagonal entry of `G_x`; the rest are 1.
    pub fn leading_weight(&self, x: &Point) -> f64 {
        let x1 = x.as_slice()[0];
        self.coefficient * x1 * x1 + 1.0
    }

    /// `G_x⁻¹ v`, applied entrywise.
    pub fn apply_inverse_metric(&self, x: &Point, v: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = v.clone();
        out[(0, 0)] /= self.leading_weight(x);
        out
    }
}

impl Manifold for SpherePeculiar {
    fn name(&self) -> String {
        format!("peculiar-sphere({}, c={})", self.n, self.coefficient)
    }

    fn dimension(&self) -> usize {
        self.n - 1
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        vec![(self.n, 1)]
    }

    fn metric(&self, x: &Point, xi: &Tangent, zeta: &Tangent) -> f64 {
        let (a, b) = (xi.as_slice(), zeta.as_slice());
        xi.dot(zeta) + (self.leading_weight(x) - 1.0) * a[0] * b[0]
    }

    fn project(&self, x: &Point, v: &Tangent) -> Tangent {
        // v - G⁻¹x (xᵀv) / (xᵀG⁻¹x)
        let xb = x.block(0);
        let ginv_x = self.apply_inverse_metric(x, xb);
        let denom = xb.dot(&ginv_x);
        let coef = xb.dot(v.block(0)) / denom;
        Tangent::from_matrix(v.block(0) - ginv_x * coef)
    }

    fn feasibility_residual(&self, x: &Point) -> f64 {
        sphere_feasibility(x)
    }

    fn tangency_residual(&self, x: &Point, v: &Tangent) -> f64 {
        sphere_tangency(x, v)
    }

    fn reproject(&self, x: Point) -> Result<Point> {
        sphere_reproject(x)
    }

    fn retract_raw(&self, x: &Point, xi: &Tangent) -> Result<Point> {
        retract_qr_sphere(x, xi)
    }

    fn transport_diff(&self, x: &Point, eta: &Tangent, xi: &Tangent) -> Result<Tangent> {
        transports::transport_diff_qr_sphere(x, eta, xi)
    }

    fn riemannian_gradient(&self, x: &Point, euclid_grad: &Tangent) -> Result<Tangent> {
        let scaled = Tangent::from_matrix(self.apply_inverse_metric(x, euclid_grad.block(0)));
        Ok(self.project(x, &scaled))
    }

    fn random_point(&self, rng: &mut dyn rand::RngCore) -> Point {
        random_sphere_point(self.n, rng)
    }
}

/// How the Stiefel differentiated retraction is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum StiefelTransportMode {
    /// Closed-form derivative of the Q-factor.
    #[default]
    Analytic,
    /// Central difference of `qf` with the given relative step.
    FiniteDifference,
}

fn sym(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

fn stiefel_feasibility(x: &DMatrix<f64>) -> f64 {
    let p = x.ncols();
    (x.transpose() * x - DMatrix::<f64>::identity(p, p)).norm()
}

fn stiefel_tangency(x: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    let a = x.transpose() * v;
    (&a + a.transpose()).norm()
}

fn stiefel_project(x: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    v - x * sym(&(x.transpose() * v))
}

fn random_stiefel(n: usize, p: usize, rng: &mut dyn rand::RngCore) -> DMatrix<f64> {
    loop {
        let g = gaussian_blocks(&[(n, p)], rng);
        if let Ok(q) = qf(g.block(0)) {
            return q;
        }
    }
}

/// `St(p, n) = { X ∈ R^{n×p} | XᵀX = I_p }` with `⟨ξ, ζ⟩ = tr(ξᵀζ)` and
/// the QR retraction.
#[derive(Clone, Debug)]
pub struct Stiefel {
    n: usize,
    p: usize,
    mode: StiefelTransportMode,
}

impl Stiefel {
    pub fn new(n: usize, p: usize) -> Result<Self> {
        if p < 1 || n < p {
            return Err(Error::Config(format!(
                "Stiefel needs n >= p >= 1, got n={n}, p={p}"
            )));
        }
        Ok(Stiefel {
            n,
            p,
            mode: StiefelTransportMode::Analytic,
        })
    }

    pub fn with_transport_mode(mut self, mode: StiefelTransportMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }
}

impl Manifold for Stiefel {
    fn name(&self) -> String {
        format!("stiefel({}, {})", self.p, self.n)
    }

    fn dimension(&self) -> usize {
        self.n * self.p - self.p * (self.p + 1) / 2
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        vec![(self.n, self.p)]
    }

    fn metric(&self, _x: &Point, xi: &Tangent, zeta: &Tangent) -> f64 {
        xi.dot(zeta)
    }

    fn project(&self, x: &Point, v: &Tangent) -> Tangent {
        Tangent::from_matrix(stiefel_project(x.block(0), v.block(0)))
    }

    fn feasibility_residual(&self, x: &Point) -> f64 {
        stiefel_feasibility(x.block(0))
    }

    fn tangency_residual(&self, x: &Point, v: &Tangent) -> f64 {
        stiefel_tangency(x.block(0), v.block(0))
    }

    fn reproject(&self, x: Point) -> Result<Point> {
        Ok(Point::from_matrix(qf(x.block(0))?))
    }

    fn retract_raw(&self, x: &Point, xi: &Tangent) -> Result<Point> {
        retract_qr_stiefel(x, xi)
    }

    fn transport_diff(&self, x: &Point, eta: &Tangent, xi: &Tangent) -> Result<Tangent> {
        match self.mode {
            StiefelTransportMode::Analytic => transports::transport_diff_qr_stiefel(x, eta, xi),
            StiefelTransportMode::FiniteDifference => {
                transports::transport_diff_qr_stiefel_fd(x, eta, xi)
            }
        }
    }

    fn riemannian_gradient(&self, x: &Point, euclid_grad: &Tangent) -> Result<Tangent> {
        Ok(self.project(x, euclid_grad))
    }

    fn random_point(&self, rng: &mut dyn rand::RngCore) -> Point {
        Point::from_matrix(random_stiefel(self.n, self.p, rng))
    }
}

/// `St(p, m) × St(p, n)` with the sum metric and factorwise QR retraction.
#[derive(Clone, Debug)]
pub struct ProductStiefel {
    left: Stiefel,
    right: Stiefel,
}

impl ProductStiefel {
    pub fn new(m: usize, n: usize, p: usize) -> Result<Self> {
        if !(m >= n && n >= p && p >= 1) {
            return Err(Error::Config(format!(
                "product Stiefel needs m >= n >= p >= 1, got m={m}, n={n}, p={p}"
            )));
        }
        Ok(ProductStiefel {
            left: Stiefel::new(m, p)?,
            right: Stiefel::new(n, p)?,
        })
    }

    pub fn factors(&self) -> (&Stiefel, &Stiefel) {
        (&self.left, &self.right)
    }
}

fn split(t: &Tangent) -> (Tangent, Tangent) {
    (
        Tangent::from_matrix(t.block(0).clone()),
        Tangent::from_matrix(t.block(1).clone()),
    )
}

fn split_point(x: &Point) -> (Point, Point) {
    (
        Point::from_matrix(x.block(0).clone()),
        Point::from_matrix(x.block(1).clone()),
    )
}

fn join(a: Tangent, b: Tangent) -> Tangent {
    let mut blocks = a.into_blocks();
    blocks.extend(b.into_blocks());
    Tangent::from_blocks(blocks)
}

impl Manifold for ProductStiefel {
    fn name(&self) -> String {
        format!("product({} x {})", self.left.name(), self.right.name())
    }

    fn dimension(&self) -> usize {
        self.left.dimension() + self.right.dimension()
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        vec![(self.left.n, self.left.p), (self.right.n, self.right.p)]
    }

    fn metric(&self, _x: &Point, xi: &Tangent, zeta: &Tangent) -> f64 {
        xi.dot(zeta)
    }

    fn project(&self, x: &Point, v: &Tangent) -> Tangent {
        Tangent::from_pair(
            stiefel_project(x.block(0), v.block(0)),
            stiefel_project(x.block(1), v.block(1)),
        )
    }

    fn feasibility_residual(&self, x: &Point) -> f64 {
        stiefel_feasibility(x.block(0)).hypot(stiefel_feasibility(x.block(1)))
    }

    fn tangency_residual(&self, x: &Point, v: &Tangent) -> f64 {
        stiefel_tangency(x.block(0), v.block(0)).hypot(stiefel_tangency(x.block(1), v.block(1)))
    }

    fn reproject(&self, x: Point) -> Result<Point> {
        Ok(Point::from_pair(qf(x.block(0))?, qf(x.block(1))?))
    }

    fn retract_raw(&self, x: &Point, xi: &Tangent) -> Result<Point> {
        retract_product(x, xi)
    }

    fn transport_diff(&self, x: &Point, eta: &Tangent, xi: &Tangent) -> Result<Tangent> {
        let (u, v) = split_point(x);
        let (eu, ev) = split(eta);
        let (xu, xv) = split(xi);
        Ok(join(
            self.left.transport_diff(&u, &eu, &xu)?,
            self.right.transport_diff(&v, &ev, &xv)?,
        ))
    }

    fn riemannian_gradient(&self, x: &Point, euclid_grad: &Tangent) -> Result<Tangent> {
        Ok(self.project(x, euclid_grad))
    }

    fn random_point(&self, rng: &mut dyn rand::RngCore) -> Point {
        let u = random_stiefel(self.left.n, self.left.p, rng);
        let v = random_stiefel(self.right.n, self.right.p, rng);
        Point::from_pair(u, v)
    }
}

/// Riemannian gradient from a Euclidean gradient (see
/// [`Manifold::riemannian_gradient`]).
pub fn riemannian_gradient_conversion(
    m: &dyn Manifold,
    x: &Point,
    euclid_grad: &Tangent,
) -> Result<Tangent> {
    m.riemannian_gradient(x, euclid_grad)
}
