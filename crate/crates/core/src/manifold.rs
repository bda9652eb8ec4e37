//! Points, tangent vectors and the contract every manifold implements.
//!
//! Everything is stored in ambient coordinates. A point on the sphere is an
//! `n x 1` matrix, a point on St(p, n) is an `n x p` matrix and a point on a
//! product of Stiefel manifolds is a list of two such blocks.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// Feasibility and tangency tolerance.
pub const FEASIBILITY_TOL: f64 = 1e-10;

/// Dense ambient blocks shared by [`Point`] and [`Tangent`].
#[derive(Clone, Debug, PartialEq)]
pub struct Blocks(Vec<DMatrix<f64>>);

impl Blocks {
    pub fn new(blocks: Vec<DMatrix<f64>>) -> Self {
        Blocks(blocks)
    }

    pub fn as_slice(&self) -> &[DMatrix<f64>] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<DMatrix<f64>> {
        self.0
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.0.iter().map(|b| b.shape()).collect()
    }

    /// Frobenius inner product summed over blocks.
    pub fn dot(&self, other: &Blocks) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a.dot(b)).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    fn zip_with(
        &self,
        other: &Blocks,
        f: impl Fn(&DMatrix<f64>, &DMatrix<f64>) -> DMatrix<f64>,
    ) -> Blocks {
        Blocks(self.0.iter().zip(&other.0).map(|(a, b)| f(a, b)).collect())
    }

    fn map(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Blocks {
        Blocks(self.0.iter().map(f).collect())
    }
}

/// A point on a manifold, in ambient coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Point(Blocks);

/// A tangent vector (or an ambient direction awaiting projection).
#[derive(Clone, Debug, PartialEq)]
pub struct Tangent(Blocks);

macro_rules! ambient_constructors {
    ($ty:ident) => {
        impl $ty {
            pub fn from_blocks(blocks: Vec<DMatrix<f64>>) -> Self {
                $ty(Blocks(blocks))
            }

            pub fn from_vector(v: DVector<f64>) -> Self {
                let n = v.len();
                $ty(Blocks(vec![DMatrix::from_column_slice(n, 1, v.as_slice())]))
            }

            pub fn from_slice(v: &[f64]) -> Self {
                $ty(Blocks(vec![DMatrix::from_column_slice(v.len(), 1, v)]))
            }

            pub fn from_matrix(m: DMatrix<f64>) -> Self {
                $ty(Blocks(vec![m]))
            }

            pub fn from_pair(a: DMatrix<f64>, b: DMatrix<f64>) -> Self {
                $ty(Blocks(vec![a, b]))
            }

            pub fn blocks(&self) -> &[DMatrix<f64>] {
                self.0.as_slice()
            }

            pub fn block(&self, i: usize) -> &DMatrix<f64> {
                &self.0.as_slice()[i]
            }

            pub fn ambient(&self) -> &Blocks {
                &self.0
            }

            pub fn into_blocks(self) -> Vec<DMatrix<f64>> {
                self.0.into_inner()
            }

            pub fn shapes(&self) -> Vec<(usize, usize)> {
                self.0.shapes()
            }

            /// First block viewed as a flat column-major slice.
            pub fn as_slice(&self) -> &[f64] {
                self.0.as_slice()[0].as_slice()
            }

            /// Ambient (Frobenius) norm, independent of any metric.
            pub fn ambient_norm(&self) -> f64 {
                self.0.norm()
            }
        }
    };
}

ambient_constructors!(Point);
ambient_constructors!(Tangent);

impl Point {
    /// `self + scale * v`, computed blockwise in the ambient space.
    pub fn offset(&self, v: &Tangent, scale: f64) -> Vec<DMatrix<f64>> {
        self.0.zip_with(&v.0, |x, d| x + d * scale).into_inner()
    }

    /// Ambient distance to another point.
    pub fn distance(&self, other: &Point) -> f64 {
        self.0.zip_with(&other.0, |a, b| a - b).norm()
    }
}

impl Tangent {
    pub fn zeros(shapes: &[(usize, usize)]) -> Self {
        Tangent(Blocks(
            shapes.iter().map(|&(r, c)| DMatrix::zeros(r, c)).collect(),
        ))
    }

    pub fn zeros_like(&self) -> Self {
        Tangent::zeros(&self.shapes())
    }

    /// Ambient Frobenius inner product (the Euclidean pairing `gᵀξ`).
    pub fn dot(&self, other: &Tangent) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn scale(&self, s: f64) -> Tangent {
        Tangent(self.0.map(|b| b * s))
    }

    /// `self + a * other`
    pub fn axpy(&self, a: f64, other: &Tangent) -> Tangent {
        Tangent(self.0.zip_with(&other.0, |x, y| x + y * a))
    }

    pub fn is_zero(&self) -> bool {
        self.0
            .as_slice()
            .iter()
            .all(|b| b.iter().all(|&v| v == 0.0))
    }
}

impl Add for &Tangent {
    type Output = Tangent;
    fn add(self, rhs: &Tangent) -> Tangent {
        Tangent(self.0.zip_with(&rhs.0, |a, b| a + b))
    }
}

impl Sub for &Tangent {
    type Output = Tangent;
    fn sub(self, rhs: &Tangent) -> Tangent {
        Tangent(self.0.zip_with(&rhs.0, |a, b| a - b))
    }
}

impl Mul<f64> for &Tangent {
    type Output = Tangent;
    fn mul(self, rhs: f64) -> Tangent {
        self.scale(rhs)
    }
}

impl Neg for &Tangent {
    type Output = Tangent;
    fn neg(self) -> Tangent {
        self.scale(-1.0)
    }
}

/// Result of a feasibility test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Feasibility {
    pub feasible: bool,
    pub residual: f64,
}

/// Metric, tangent projection, retraction and differentiated-retraction
/// transport for one manifold instance.
///
/// Implementations are immutable values; every method is a pure function.
pub trait Manifold: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    /// Intrinsic dimension.
    fn dimension(&self) -> usize;

    /// Shapes of the ambient blocks.
    fn shapes(&self) -> Vec<(usize, usize)>;

    /// Riemannian metric at `x`. No tangency checks; see [`inner`].
    fn metric(&self, x: &Point, xi: &Tangent, zeta: &Tangent) -> f64;

    fn norm(&self, x: &Point, xi: &Tangent) -> f64 {
        let sq = self.metric(x, xi, xi);
        if sq < 0.0 {
            0.0
        } else {
            sq.sqrt()
        }
    }

    /// Metric-orthogonal projection of an ambient vector onto `T_x M`.
    fn project(&self, x: &Point, v: &Tangent) -> Tangent;

    /// Norm of the constraint violation of `x`.
    fn feasibility_residual(&self, x: &Point) -> f64;

    /// Norm of the tangency-constraint violation of `v` at `x`.
    fn tangency_residual(&self, x: &Point, v: &Tangent) -> f64;

    /// Map an (approximately) infeasible ambient point back onto the manifold.
    fn reproject(&self, x: Point) -> Result<Point>;

    /// Raw retraction, without the drift-correction policy.
    fn retract_raw(&self, x: &Point, xi: &Tangent) -> Result<Point>;

    /// Differentiated retraction `D R_x(eta)[xi]`, tangent at `R_x(eta)`.
    fn transport_diff(&self, x: &Point, eta: &Tangent, xi: &Tangent) -> Result<Tangent>;

    /// Convert a Euclidean gradient into the Riemannian gradient of the metric.
    fn riemannian_gradient(&self, x: &Point, euclid_grad: &Tangent) -> Result<Tangent>;

    /// Largest admissible step `alpha` along `eta` (exclusive), if the
    /// retraction has a bounded domain.
    fn step_cap(&self, _x: &Point, _eta: &Tangent) -> Option<f64> {
        None
    }

    /// `‖T^R_η(ξ)‖²_{R_x(η)} - ‖ξ‖²_x` from a closed form that avoids the
    /// cancellation of subtracting the two norms, when one is available.
    /// The switching transport uses its sign to decide whether to rescale.
    fn transport_norm_gain(&self, _x: &Point, _eta: &Tangent, _xi: &Tangent) -> Option<f64> {
        None
    }

    /// Draw a feasible point from projected ambient Gaussian noise.
    fn random_point(&self, rng: &mut dyn rand::RngCore) -> Point;

    /// Retraction followed by re-projection when the drift exceeds
    /// [`FEASIBILITY_TOL`].
    fn retract(&self, x: &Point, xi: &Tangent) -> Result<Point> {
        let y = self.retract_raw(x, xi)?;
        if self.feasibility_residual(&y) > FEASIBILITY_TOL {
            self.reproject(y)
        } else {
            Ok(y)
        }
    }

    /// Random tangent vector at `x` (projected Gaussian) with metric norm `scale`.
    fn random_tangent(&self, x: &Point, scale: f64, rng: &mut dyn rand::RngCore) -> Tangent {
        let raw = gaussian_blocks(&self.shapes(), rng);
        let t = self.project(x, &raw);
        let n = self.norm(x, &t);
        if n == 0.0 {
            t
        } else {
            t.scale(scale / n)
        }
    }
}

/// Ambient standard-normal blocks.
pub fn gaussian_blocks(shapes: &[(usize, usize)], rng: &mut dyn rand::RngCore) -> Tangent {
    let blocks = shapes
        .iter()
        .map(|&(r, c)| {
            DMatrix::from_fn(r, c, |_, _| {
                rng.sample::<f64, _>(rand_distr::StandardNormal)
            })
        })
        .collect();
    Tangent::from_blocks(blocks)
}

fn check_shapes(m: &dyn Manifold, found: &[(usize, usize)]) -> Result<()> {
    let expected = m.shapes();
    if expected.as_slice() != found {
        return Err(Error::Shape {
            expected: format!("{expected:?}"),
            found: format!("{found:?}"),
        });
    }
    Ok(())
}

fn check_tangent(m: &dyn Manifold, x: &Point, v: &Tangent) -> Result<()> {
    check_shapes(m, &v.shapes())?;
    let residual = m.tangency_residual(x, v);
    if residual > FEASIBILITY_TOL * (1.0 + v.ambient_norm()) {
        return Err(Error::NotTangent {
            residual,
            tolerance: FEASIBILITY_TOL,
        });
    }
    Ok(())
}

/// Checked metric evaluation: validates shapes and tangency before calling
/// [`Manifold::metric`].
pub fn inner(m: &dyn Manifold, x: &Point, xi: &Tangent, zeta: &Tangent) -> Result<f64> {
    check_shapes(m, &x.shapes())?;
    check_tangent(m, x, xi)?;
    check_tangent(m, x, zeta)?;
    Ok(m.metric(x, xi, zeta))
}

pub fn check_feasibility(m: &dyn Manifold, x: &Point) -> Feasibility {
    if m.shapes() != x.shapes() {
        return Feasibility {
            feasible: false,
            residual: f64::INFINITY,
        };
    }
    let residual = m.feasibility_residual(x);
    Feasibility {
        feasible: residual <= FEASIBILITY_TOL,
        residual,
    }
}

/// Error unless `x` has the right shape and is feasible.
pub fn ensure_feasible(m: &dyn Manifold, x: &Point) -> Result<()> {
    check_shapes(m, &x.shapes())?;
    let residual = m.feasibility_residual(x);
    if residual > FEASIBILITY_TOL {
        return Err(Error::Infeasible {
            residual,
            tolerance: FEASIBILITY_TOL,
        });
    }
    Ok(())
}
