//! Objective functions with Euclidean gradients.
//!
//! Every problem is a minimization; maximization is expressed by negating
//! the objective (see [`Sense`]).

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::manifold::{Point, Tangent};

/// Symmetry tolerance for Rayleigh and Brockett data.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// An objective `f` on a manifold embedded in ambient matrix space.
pub trait Problem: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    fn shapes(&self) -> Vec<(usize, usize)>;

    fn value(&self, x: &Point) -> f64;

    /// Gradient of a smooth extension of `f` to the ambient space.
    fn euclidean_gradient(&self, x: &Point) -> Tangent;

    /// A minimizer, with signs chosen to be closest to `near`, when the
    /// problem knows one in closed form.
    fn optimum_near(&self, _near: &Point) -> Option<Point> {
        None
    }
}

fn asymmetry(a: &DMatrix<f64>) -> f64 {
    (a - a.transpose()).abs().max()
}

fn require_square_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Shape {
            expected: "square matrix".into(),
            found: format!("{:?}", a.shape()),
        });
    }
    let asym = asymmetry(a);
    if asym > SYMMETRY_TOL {
        return Err(Error::Config(format!(
            "matrix is not symmetric (max |A - Aᵀ| = {asym:e})"
        )));
    }
    Ok(())
}

/// `(A + Aᵀ)/2` together with the asymmetry that was removed.
pub fn symmetrize(a: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    ((a + a.transpose()) * 0.5, asymmetry(a))
}

/// `diag(1, 2, ..., n) / scale`
pub fn diag_ramp(n: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| (i + 1) as f64 / scale))
}

fn is_diagonal(a: &DMatrix<f64>) -> bool {
    a.iter()
        .enumerate()
        .all(|(k, &v)| k % a.nrows() == k / a.nrows() || v == 0.0)
}

/// Eigenpairs of a symmetric matrix, ascending.
fn sorted_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    if is_diagonal(a) {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
        let vals = idx.iter().map(|&i| a[(i, i)]).collect();
        let mut vecs = DMatrix::zeros(n, n);
        for (c, &i) in idx.iter().enumerate() {
            vecs[(i, c)] = 1.0;
        }
        return (vals, vecs);
    }
    let eig = SymmetricEigen::new(a.clone());
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, idx[c])]);
    (vals, vecs)
}

fn sign_toward(v: &DMatrix<f64>, col: usize, reference: &DMatrix<f64>, ref_col: usize) -> f64 {
    if v.column(col).dot(&reference.column(ref_col)) < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// `f(x) = xᵀAx` on the unit sphere.
#[derive(Clone, Debug)]
pub struct RayleighProblem {
    a: DMatrix<f64>,
}

impl RayleighProblem {
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        require_square_symmetric(&a)?;
        Ok(RayleighProblem { a })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Ascending eigenvalues of `A`.
    pub fn eigenvalues(&self) -> Vec<f64> {
        sorted_eigen(&self.a).0
    }
}

pub fn rayleigh_value(a: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    x.dot(&(a * x))
}

pub fn rayleigh_euclid_grad(a: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    a * x * 2.0
}

impl Problem for RayleighProblem {
    fn name(&self) -> String {
        format!("rayleigh({})", self.a.nrows())
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        vec![(self.a.nrows(), 1)]
    }

    fn value(&self, x: &Point) -> f64 {
        rayleigh_value(&self.a, x.block(0))
    }

    fn euclidean_gradient(&self, x: &Point) -> Tangent {
        Tangent::from_matrix(rayleigh_euclid_grad(&self.a, x.block(0)))
    }

    fn optimum_near(&self, near: &Point) -> Option<Point> {
        let (_, vecs) = sorted_eigen(&self.a);
        let v = vecs.columns(0, 1).clone_owned();
        let s = sign_toward(&v, 0, near.block(0), 0);
        Some(Point::from_matrix(v * s))
    }
}

/// Brockett cost `f(X) = tr(XᵀAXN)` on St(p, n), `N = diag(μ)` with
/// `0 < μ₁ < ... < μ_p`.
#[derive(Clone, Debug)]
pub struct BrockettProblem {
    a: DMatrix<f64>,
    mu: Vec<f64>,
}

impl BrockettProblem {
    pub fn new(a: DMatrix<f64>, mu: Vec<f64>) -> Result<Self> {
        require_square_symmetric(&a)?;
        if mu.is_empty() || mu.len() > a.nrows() {
            return Err(Error::Config(format!(
                "need 1 <= p <= n, got p={} n={}",
                mu.len(),
                a.nrows()
            )));
        }
        if mu[0] <= 0.0 || mu.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "N must have strictly increasing positive diagonal".into(),
            ));
        }
        Ok(BrockettProblem { a, mu })
    }

    pub fn p(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Minimal value `Σ λ_{p+1-i} μ_i` over ascending eigenvalues λ.
    pub fn minimum(&self) -> f64 {
        let (vals, _) = sorted_eigen(&self.a);
        let p = self.p();
        (0..p).map(|j| vals[p - 1 - j] * self.mu[j]).sum()
    }
}

pub fn brockett_value(a: &DMatrix<f64>, mu: &[f64], x: &DMatrix<f64>) -> f64 {
    let ax = a * x;
    (0..x.ncols())
        .map(|j| mu[j] * x.column(j).dot(&ax.column(j)))
        .sum()
}

pub fn brockett_euclid_grad(a: &DMatrix<f64>, mu: &[f64], x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut g = a * x * 2.0;
    for (j, &m) in mu.iter().enumerate() {
        g.column_mut(j).scale_mut(m);
    }
    g
}

impl Problem for BrockettProblem {
    fn name(&self) -> String {
        format!("brockett({}, {})", self.a.nrows(), self.p())
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        vec![(self.a.nrows(), self.p())]
    }

    fn value(&self, x: &Point) -> f64 {
        brockett_value(&self.a, &self.mu, x.block(0))
    }

    fn euclidean_gradient(&self, x: &Point) -> Tangent {
        Tangent::from_matrix(brockett_euclid_grad(&self.a, &self.mu, x.block(0)))
    }

    fn optimum_near(&self, near: &Point) -> Option<Point> {
        let (_, vecs) = sorted_eigen(&self.a);
        let p = self.p();
        let n = self.a.nrows();
        let mut x = DMatrix::zeros(n, p);
        for j in 0..p {
            // largest weight pairs with the smallest eigenvalue
            let src = p - 1 - j;
            let s = sign_toward(&vecs, src, near.block(0), j);
            x.column_mut(j).copy_from(&(vecs.column(src) * s));
        }
        Some(Point::from_matrix(x))
    }
}

/// Optimization sense for [`SvdProblem`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sense {
    Minimize,
    Maximize,
}

/// `F(U, V) = tr(UᵀAVN)` on St(p, m) × St(p, n) with `μ₁ > ... > μ_p > 0`.
#[derive(Clone, Debug)]
pub struct SvdProblem {
    a: DMatrix<f64>,
    mu: Vec<f64>,
    sense: Sense,
}

impl SvdProblem {
    pub fn new(a: DMatrix<f64>, mu: Vec<f64>, sense: Sense) -> Result<Self> {
        let (m, n) = a.shape();
        let p = mu.len();
        if !(m >= n && n >= p && p >= 1) {
            return Err(Error::Config(format!(
                "need m >= n >= p >= 1, got m={m} n={n} p={p}"
            )));
        }
        if mu[p - 1] <= 0.0 || mu.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::Config(
                "N must have strictly decreasing positive diagonal".into(),
            ));
        }
        Ok(SvdProblem { a, mu, sense })
    }

    pub fn p(&self) -> usize {
        self.mu.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    fn sign(&self) -> f64 {
        match self.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        }
    }

    /// `uᵢᵀ A vᵢ` for each column pair, the singular value estimates at `(U, V)`.
    pub fn singular_value_estimates(&self, x: &Point) -> Vec<f64> {
        let av = &self.a * x.block(1);
        (0..self.p())
            .map(|j| x.block(0).column(j).dot(&av.column(j)).abs())
            .collect()
    }

    /// Singular triplets of `A`, descending.
    fn sorted_svd(&self) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
        let svd = self.a.clone().svd(true, true);
        let u = svd.u.expect("u requested");
        let vt = svd.v_t.expect("v_t requested");
        let k = svd.singular_values.len();
        let mut idx: Vec<usize> = (0..k).collect();
        idx.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
        let vals = idx.iter().map(|&i| svd.singular_values[i]).collect();
        let us = DMatrix::from_fn(u.nrows(), k, |r, c| u[(r, idx[c])]);
        let vs = DMatrix::from_fn(vt.ncols(), k, |r, c| vt[(idx[c], r)]);
        (vals, us, vs)
    }
}

pub fn svd_value(a: &DMatrix<f64>, mu: &[f64], u: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    let av = a * v;
    (0..u.ncols())
        .map(|j| mu[j] * u.column(j).dot(&av.column(j)))
        .sum()
}

/// `(AVN, AᵀUN)`
pub fn svd_euclid_grads(
    a: &DMatrix<f64>,
    mu: &[f64],
    u: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut gu = a * v;
    let mut gv = a.transpose() * u;
    for (j, &m) in mu.iter().enumerate() {
        gu.column_mut(j).scale_mut(m);
        gv.column_mut(j).scale_mut(m);
    }
    (gu, gv)
}

impl Problem for SvdProblem {
    fn name(&self) -> String {
        let s = match self.sense {
            Sense::Minimize => "min",
            Sense::Maximize => "max",
        };
        format!(
            "svd({}x{}, {}, {s})",
            self.a.nrows(),
            self.a.ncols(),
            self.p()
        )
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        vec![(self.a.nrows(), self.p()), (self.a.ncols(), self.p())]
    }

    fn value(&self, x: &Point) -> f64 {
        self.sign() * svd_value(&self.a, &self.mu, x.block(0), x.block(1))
    }

    fn euclidean_gradient(&self, x: &Point) -> Tangent {
        let (gu, gv) = svd_euclid_grads(&self.a, &self.mu, x.block(0), x.block(1));
        let s = self.sign();
        Tangent::from_pair(gu * s, gv * s)
    }

    fn optimum_near(&self, near: &Point) -> Option<Point> {
        let (_, us, vs) = self.sorted_svd();
        let p = self.p();
        // maximizing pairs u_j with v_j; minimizing flips one factor
        let flip = match self.sense {
            Sense::Maximize => 1.0,
            Sense::Minimize => -1.0,
        };
        let mut u = DMatrix::zeros(us.nrows(), p);
        let mut v = DMatrix::zeros(vs.nrows(), p);
        for j in 0..p {
            let uj = us.column(j) * flip;
            let vj = vs.column(j).clone_owned();
            let score = uj.dot(&near.block(0).column(j)) + vj.dot(&near.block(1).column(j));
            let s = if score < 0.0 { -1.0 } else { 1.0 };
            u.column_mut(j).copy_from(&(uj * s));
            v.column_mut(j).copy_from(&(vj * s));
        }
        Some(Point::from_pair(u, v))
    }
}

/// Top singular values of `A`, descending.
pub fn singular_values_desc(a: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = a.singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

/// Parse a dense matrix: one row per line, whitespace-separated decimals.
/// Blank lines and lines starting with `#` are ignored.
pub fn parse_matrix(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|_| {
                    Error::Parse(format!("line {}: `{tok}` is not a number", lineno + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse(format!(
                    "line {}: expected {} columns, found {}",
                    lineno + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("empty matrix".into()));
    }
    let ncols = rows[0].len();
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.into_iter().flatten(),
    ))
}

pub fn load_matrix(path: &Path) -> Result<DMatrix<f64>> {
    parse_matrix(&std::fs::read_to_string(path)?)
}

/// Named matrices used by the experiment presets.
pub fn matrix_preset(name: &str) -> Result<DMatrix<f64>> {
    match name {
        "diag-1-20" => Ok(diag_ramp(20, 1.0)),
        "diag-1-100-scaled" => Ok(diag_ramp(100, 100.0)),
        _ => Err(Error::UnknownPreset(name.to_string())),
    }
}

pub const MATRIX_PRESETS: &[&str] = &["diag-1-20", "diag-1-100-scaled"];
