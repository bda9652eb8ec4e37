//! Strong Wolfe step sizes along the retraction curve `φ(α) = f(R_x(αη))`.
//!
//! The slope is `φ'(α) = ⟨grad f(R_x(αη)), T^R_{αη}(η)⟩`, using the
//! differentiated retraction, so both conditions are checked on exactly the
//! curve the iterate moves along.

use crate::error::{Error, Result};
use crate::manifold::{Manifold, Point, Tangent};
use crate::problems::Problem;

/// Slack used by post-hoc audits of accepted steps.
pub const AUDIT_SLACK: f64 = 1e-12;

/// Value comparisons inside the search tolerate this many ulps of `|φ(0)|`,
/// so that near a minimizer, where `φ` is flat to machine precision, the
/// search is steered by the slope instead of by rounding noise.
pub const VALUE_NOISE_ULPS: f64 = 8.0;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WolfeConfig {
    pub c1: f64,
    pub c2: f64,
    pub alpha_init: f64,
    pub growth: f64,
    pub max_bracket: usize,
    pub max_zoom: usize,
    /// Exclusive upper bound on trial steps, on top of any cap the
    /// manifold imposes.
    pub alpha_cap: Option<f64>,
}

impl Default for WolfeConfig {
    fn default() -> Self {
        WolfeConfig {
            c1: 1e-4,
            c2: 0.1,
            alpha_init: 1.0,
            growth: 2.0,
            max_bracket: 60,
            max_zoom: 60,
            alpha_cap: None,
        }
    }
}

impl WolfeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 0.5) {
            return Err(Error::Config(format!(
                "Wolfe constants must satisfy 0 < c1 < c2 < 1/2, got c1={}, c2={}",
                self.c1, self.c2
            )));
        }
        if !(self.alpha_init > 0.0) || !(self.growth > 1.0) {
            return Err(Error::Config(
                "alpha_init must be > 0 and growth > 1".into(),
            ));
        }
        if self.max_bracket == 0 || self.max_zoom == 0 {
            return Err(Error::Config(
                "bracket and zoom budgets must be positive".into(),
            ));
        }
        if let Some(cap) = self.alpha_cap {
            if !(cap > 0.0) {
                return Err(Error::Config("alpha_cap must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One evaluation of the curve at step `alpha`.
#[derive(Clone, Debug)]
pub struct CurveSample {
    pub alpha: f64,
    pub phi: f64,
    pub dphi: f64,
    /// `R_x(αη)`
    pub point: Point,
    /// Riemannian gradient at `point`.
    pub gradient: Tangent,
    /// `T^R_{αη}(η)`
    pub transported: Tangent,
}

/// The retraction curve through `x` in direction `eta`.
pub struct Curve<'a> {
    problem: &'a dyn Problem,
    manifold: &'a dyn Manifold,
    x: &'a Point,
    eta: &'a Tangent,
}

impl<'a> Curve<'a> {
    pub fn new(
        problem: &'a dyn Problem,
        manifold: &'a dyn Manifold,
        x: &'a Point,
        eta: &'a Tangent,
    ) -> Self {
        Curve {
            problem,
            manifold,
            x,
            eta,
        }
    }

    pub fn point(&self, alpha: f64) -> Result<Point> {
        self.manifold.retract(self.x, &self.eta.scale(alpha))
    }

    pub fn phi(&self, alpha: f64) -> Result<f64> {
        Ok(self.problem.value(&self.point(alpha)?))
    }

    pub fn sample(&self, alpha: f64) -> Result<CurveSample> {
        let step = self.eta.scale(alpha);
        let point = self.manifold.retract(self.x, &step)?;
        let phi = self.problem.value(&point);
        let egrad = self.problem.euclidean_gradient(&point);
        let gradient = self.manifold.riemannian_gradient(&point, &egrad)?;
        let transported = self.manifold.transport_diff(self.x, &step, self.eta)?;
        let dphi = self.manifold.metric(&point, &gradient, &transported);
        Ok(CurveSample {
            alpha,
            phi,
            dphi,
            point,
            gradient,
            transported,
        })
    }
}

/// `f(R_x(αη))`
pub fn phi(
    problem: &dyn Problem,
    manifold: &dyn Manifold,
    x: &Point,
    eta: &Tangent,
    alpha: f64,
) -> Result<f64> {
    Curve::new(problem, manifold, x, eta).phi(alpha)
}

/// `⟨grad f(R_x(αη)), T^R_{αη}(η)⟩_{R_x(αη)}`
pub fn phi_prime(
    problem: &dyn Problem,
    manifold: &dyn Manifold,
    x: &Point,
    eta: &Tangent,
    alpha: f64,
) -> Result<f64> {
    Ok(Curve::new(problem, manifold, x, eta).sample(alpha)?.dphi)
}

/// An accepted strong Wolfe step.
#[derive(Clone, Debug)]
pub struct WolfeResult {
    pub alpha: f64,
    pub phi: f64,
    pub dphi: f64,
    pub evaluations: usize,
    pub sample: CurveSample,
}

/// Both strong Wolfe inequalities, with `slack` added to the right-hand sides.
#[allow(clippy::too_many_arguments)]
pub fn wolfe_holds(
    phi0: f64,
    dphi0: f64,
    alpha: f64,
    phi: f64,
    dphi: f64,
    c1: f64,
    c2: f64,
    slack: f64,
) -> (bool, bool) {
    let armijo = phi <= phi0 + c1 * alpha * dphi0 + slack;
    let curvature = dphi.abs() <= c2 * dphi0.abs() + slack;
    (armijo, curvature)
}

struct Search<'c, 'a> {
    curve: &'c Curve<'a>,
    phi0: f64,
    dphi0: f64,
    c1: f64,
    c2: f64,
    noise: f64,
    evaluations: usize,
    best: Option<(f64, f64)>,
}

impl Search<'_, '_> {
    fn eval(&mut self, alpha: f64) -> Result<CurveSample> {
        let s = self.curve.sample(alpha)?;
        self.evaluations += 1;
        if self.armijo(&s) && self.best.is_none_or(|(_, p)| s.phi < p) {
            self.best = Some((alpha, s.phi));
        }
        Ok(s)
    }

    fn armijo(&self, s: &CurveSample) -> bool {
        s.phi <= self.phi0 + self.c1 * s.alpha * self.dphi0 + self.noise
    }

    fn no_lower(&self, s: &CurveSample, reference: f64) -> bool {
        s.phi > reference + self.noise
    }

    fn curvature(&self, s: &CurveSample) -> bool {
        s.dphi.abs() <= -self.c2 * self.dphi0
    }

    fn accept(&self, s: CurveSample) -> WolfeResult {
        WolfeResult {
            alpha: s.alpha,
            phi: s.phi,
            dphi: s.dphi,
            evaluations: self.evaluations,
            sample: s,
        }
    }

    fn failure(&self) -> Error {
        Error::LineSearch {
            best_alpha: self.best.map(|(a, _)| a),
            evaluations: self.evaluations,
        }
    }

    fn zoom(
        &mut self,
        mut lo: CurveSample,
        mut hi: CurveSample,
        max_zoom: usize,
    ) -> Result<WolfeResult> {
        for _ in 0..max_zoom {
            let width = (hi.alpha - lo.alpha).abs();
            if width <= f64::EPSILON * lo.alpha.abs().max(hi.alpha.abs()) {
                break;
            }
            let alpha = interpolate(&lo, &hi);
            let s = self.eval(alpha)?;
            if !self.armijo(&s) || self.no_lower(&s, lo.phi) {
                hi = s;
            } else {
                if self.curvature(&s) {
                    return Ok(self.accept(s));
                }
                if s.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = s;
            }
        }
        Err(self.failure())
    }
}

/// Safeguarded cubic interpolation inside `(lo, hi)`; bisection when the
/// cubic minimizer is unusable or too close to an endpoint.
fn interpolate(lo: &CurveSample, hi: &CurveSample) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let d1 = lo.dphi + hi.dphi - 3.0 * (lo.phi - hi.phi) / (a - b);
    let disc = d1 * d1 - lo.dphi * hi.dphi;
    let mid = 0.5 * (a + b);
    if !(disc >= 0.0) {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let cand = b - (b - a) * (hi.dphi + d2 - d1) / (hi.dphi - lo.dphi + 2.0 * d2);
    let (left, right) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (right - left);
    if cand.is_finite() && cand > left + margin && cand < right - margin {
        cand
    } else {
        mid
    }
}

/// Upper bound for trial steps: the tighter of the configured cap and the
/// manifold's retraction domain.
pub fn effective_cap(
    manifold: &dyn Manifold,
    x: &Point,
    eta: &Tangent,
    config: &WolfeConfig,
) -> Option<f64> {
    match (config.alpha_cap, manifold.step_cap(x, eta)) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

/// Bracket-then-zoom search for a step satisfying the strong Wolfe
/// conditions. `f0` and `grad0` are the value and Riemannian gradient at `x`.
pub fn strong_wolfe_search_from(
    problem: &dyn Problem,
    manifold: &dyn Manifold,
    x: &Point,
    eta: &Tangent,
    f0: f64,
    grad0: &Tangent,
    config: &WolfeConfig,
) -> Result<WolfeResult> {
    config.validate()?;
    let dphi0 = manifold.metric(x, grad0, eta);
    if !(dphi0 < 0.0) {
        return Err(Error::NotDescent { slope: dphi0 });
    }
    let curve = Curve::new(problem, manifold, x, eta);
    let cap = effective_cap(manifold, x, eta, config);
    let mut search = Search {
        curve: &curve,
        phi0: f0,
        dphi0,
        c1: config.c1,
        c2: config.c2,
        noise: VALUE_NOISE_ULPS * f64::EPSILON * f0.abs(),
        evaluations: 0,
        best: None,
    };

    let mut alpha = match cap {
        Some(c) if config.alpha_init >= c => 0.5 * c,
        _ => config.alpha_init,
    };
    let mut prev: Option<CurveSample> = None;
    for _ in 0..config.max_bracket {
        let s = search.eval(alpha)?;
        let prev_phi = prev.as_ref().map_or(f0, |p| p.phi);
        if !search.armijo(&s) || (prev.is_some() && search.no_lower(&s, prev_phi)) {
            let lo = prev.unwrap_or_else(|| origin_sample(x, eta, f0, dphi0, grad0));
            return search.zoom(lo, s, config.max_zoom);
        }
        if search.curvature(&s) {
            return Ok(search.accept(s));
        }
        if s.dphi >= 0.0 {
            let lo = s.clone();
            let hi = prev.unwrap_or_else(|| origin_sample(x, eta, f0, dphi0, grad0));
            return search.zoom(lo, hi, config.max_zoom);
        }
        let next = alpha * config.growth;
        let next = match cap {
            Some(c) if next >= c => 0.5 * (alpha + c),
            _ => next,
        };
        prev = Some(s);
        if next <= alpha {
            break;
        }
        alpha = next;
    }
    Err(search.failure())
}

fn origin_sample(x: &Point, eta: &Tangent, f0: f64, dphi0: f64, grad0: &Tangent) -> CurveSample {
    CurveSample {
        alpha: 0.0,
        phi: f0,
        dphi: dphi0,
        point: x.clone(),
        gradient: grad0.clone(),
        transported: eta.clone(),
    }
}

/// [`strong_wolfe_search_from`] with the value and gradient at `x` computed here.
pub fn strong_wolfe_search(
    problem: &dyn Problem,
    manifold: &dyn Manifold,
    x: &Point,
    eta: &Tangent,
    config: &WolfeConfig,
) -> Result<WolfeResult> {
    let f0 = problem.value(x);
    let grad0 = manifold.riemannian_gradient(x, &problem.euclidean_gradient(x))?;
    strong_wolfe_search_from(problem, manifold, x, eta, f0, &grad0, config)
}
