//! Finite-difference oracles, Zoutendijk accumulation, descent-ratio and
//! transport audits over solver traces, and a probe of second derivatives
//! along retraction curves.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cg::CgState;
use crate::error::{Error, Result};
use crate::linesearch::{wolfe_holds, AUDIT_SLACK};
use crate::manifold::{Manifold, Point, Tangent};
use crate::problems::Problem;

/// Slack for the descent-ratio bounds.
pub const LEMMA_SLACK: f64 = 1e-10;

/// Relative slack for norm comparisons that hold exactly in real arithmetic.
pub const NORM_SLACK: f64 = 1e-12;

/// `-⟨grad, η⟩ / (‖grad‖ ‖η‖)`
pub fn cos_theta(manifold: &dyn Manifold, x: &Point, grad: &Tangent, eta: &Tangent) -> Result<f64> {
    let gn = manifold.norm(x, grad);
    let en = manifold.norm(x, eta);
    if gn == 0.0 || en == 0.0 {
        return Err(Error::UndefinedAngle);
    }
    Ok((-manifold.metric(x, grad, eta) / (gn * en)).clamp(-1.0, 1.0))
}

/// Running sums of `cos²θ_k ‖grad f(x_k)‖²`.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ZoutendijkLedger {
    pub terms: Vec<f64>,
    pub partial_sums: Vec<f64>,
}

impl ZoutendijkLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append the term for `state` and return it. A zero gradient or
    /// direction contributes 0.
    pub fn accumulate(&mut self, manifold: &dyn Manifold, state: &CgState) -> f64 {
        // cos²θ ‖g‖² = ⟨g, η⟩² / ‖η‖²
        let term = if state.grad_norm == 0.0 || state.eta_norm == 0.0 {
            0.0
        } else {
            let s = manifold.metric(&state.x, &state.grad, &state.eta);
            (s / state.eta_norm).powi(2)
        };
        self.push(term);
        term
    }

    pub fn push(&mut self, term: f64) {
        let last = self.total();
        self.terms.push(term);
        self.partial_sums.push(last + term);
    }

    pub fn from_trace(manifold: &dyn Manifold, trace: &[CgState]) -> Self {
        let mut ledger = Self::new();
        for state in trace {
            ledger.accumulate(manifold, state);
        }
        ledger
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.partial_sums.last().copied().unwrap_or(0.0)
    }

    /// Growth of the partial sums over the final `fraction` of the terms,
    /// relative to the total.
    pub fn tail_growth(&self, fraction: f64) -> f64 {
        let n = self.len();
        let total = self.total();
        if n < 2 || total == 0.0 {
            return 0.0;
        }
        let tail = ((n as f64 * fraction).ceil() as usize).clamp(1, n - 1);
        let start = self.partial_sums[n - 1 - tail];
        (total - start) / total
    }
}

/// `[-1/(1-c2), (2c2-1)/(1-c2)]`
pub fn lemma_bounds(c2: f64) -> (f64, f64) {
    (-1.0 / (1.0 - c2), (2.0 * c2 - 1.0) / (1.0 - c2))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LemmaAudit {
    /// `⟨grad f(x_k), η_k⟩ / ‖grad f(x_k)‖²`
    pub ratio: f64,
    pub within: bool,
}

/// Check the descent ratio of `state` against [`lemma_bounds`] with
/// [`LEMMA_SLACK`].
pub fn lemma_ratio_audit(manifold: &dyn Manifold, state: &CgState, c2: f64) -> LemmaAudit {
    let ratio = state.descent_ratio(manifold);
    let (lo, hi) = lemma_bounds(c2);
    LemmaAudit {
        ratio,
        within: ratio >= lo - LEMMA_SLACK && ratio <= hi + LEMMA_SLACK,
    }
}

/// Default central-difference step: `1e-6 (1 + |α|)` for first
/// derivatives, `1e-4` for second derivatives.
pub fn fd_step(order: u8, alpha: f64) -> f64 {
    if order == 1 {
        1e-6 * (1.0 + alpha.abs())
    } else {
        1e-4
    }
}

/// Central-difference estimate of the first or second derivative of
/// `curve` at `alpha`. `h = None` uses [`fd_step`].
pub fn fd_directional(
    curve: impl Fn(f64) -> Result<f64>,
    alpha: f64,
    order: u8,
    h: Option<f64>,
) -> Result<f64> {
    let h = h.unwrap_or_else(|| fd_step(order, alpha));
    match order {
        1 => Ok((curve(alpha + h)? - curve(alpha - h)?) / (2.0 * h)),
        2 => Ok((curve(alpha + h)? - 2.0 * curve(alpha)? + curve(alpha - h)?) / (h * h)),
        _ => Err(Error::Config(format!(
            "finite-difference order must be 1 or 2, got {order}"
        ))),
    }
}

/// Sampling plan for [`lipschitz_probe`].
#[derive(Clone, Debug)]
pub struct ProbeGrid {
    pub ts: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
}

impl Default for ProbeGrid {
    fn default() -> Self {
        ProbeGrid {
            ts: vec![0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0],
            samples: 100,
            seed: 0,
        }
    }
}

/// Second-derivative estimates of `t ↦ f(R_x(tη))` for one `(x, η)` pair.
#[derive(Clone, Debug, Serialize)]
pub struct ProbeSample {
    pub index: usize,
    /// `|d²/dt² f(R_x(tη))|` at each grid point.
    pub estimates: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LipschitzProbeReport {
    pub ts: Vec<f64>,
    pub samples: Vec<ProbeSample>,
    pub max_observed: f64,
}

impl LipschitzProbeReport {
    pub fn all_finite(&self) -> bool {
        self.samples
            .iter()
            .all(|s| s.estimates.iter().all(|e| e.is_finite()))
    }

    /// Fraction of samples whose estimate at the last grid point is at most
    /// `factor` times the estimate at the first.
    pub fn decay_fraction(&self, factor: f64) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let decayed = self
            .samples
            .iter()
            .filter(|s| match (s.estimates.first(), s.estimates.last()) {
                (Some(&first), Some(&last)) => last <= factor * first,
                _ => false,
            })
            .count();
        decayed as f64 / self.samples.len() as f64
    }
}

/// Estimate `|d²/dt² f(R_x(tη))|` over random feasible `x`, unit-norm
/// tangent `η` and the grid's `t` values. Sample `i` draws from a
/// generator seeded with `seed + i`, so results do not depend on the
/// thread schedule.
pub fn lipschitz_probe(
    problem: &dyn Problem,
    manifold: &dyn Manifold,
    grid: &ProbeGrid,
) -> LipschitzProbeReport {
    let samples: Vec<ProbeSample> = (0..grid.samples)
        .into_par_iter()
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(grid.seed.wrapping_add(index as u64));
            let x = manifold.random_point(&mut rng);
            let eta = manifold.random_tangent(&x, 1.0, &mut rng);
            let curve = |t: f64| -> Result<f64> {
                let y = manifold.retract(&x, &eta.scale(t))?;
                Ok(problem.value(&y))
            };
            let estimates = grid
                .ts
                .iter()
                .map(|&t| fd_directional(curve, t, 2, None).map_or(f64::NAN, f64::abs))
                .collect();
            ProbeSample { index, estimates }
        })
        .collect();
    let max_observed = samples
        .iter()
        .flat_map(|s| s.estimates.iter().copied())
        .fold(0.0, f64::max);
    LipschitzProbeReport {
        ts: grid.ts.clone(),
        samples,
        max_observed,
    }
}

/// Outcome of one audit over a trace.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceAudit {
    pub name: &'static str,
    pub checked: usize,
    /// Iteration indices that failed.
    pub violations: Vec<usize>,
    /// Largest amount by which a bound was exceeded (0 when none was).
    pub worst_excess: f64,
}

impl TraceAudit {
    fn new(name: &'static str) -> Self {
        TraceAudit {
            name,
            checked: 0,
            violations: Vec::new(),
            worst_excess: 0.0,
        }
    }

    fn record(&mut self, k: usize, excess: f64) {
        self.checked += 1;
        if excess > 0.0 || excess.is_nan() {
            self.violations.push(k);
            self.worst_excess = self.worst_excess.max(if excess.is_nan() {
                f64::INFINITY
            } else {
                excess
            });
        }
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Both strong Wolfe conditions on every step, with `slack`. Steps taken
/// through the line-search fallback count as violations.
pub fn audit_wolfe(trace: &[CgState], c1: f64, c2: f64, slack: f64) -> TraceAudit {
    let mut audit = TraceAudit::new("wolfe");
    for state in trace {
        let Some(step) = &state.step else { continue };
        let (armijo, curvature) = wolfe_holds(
            state.f,
            step.slope,
            step.alpha,
            step.phi_alpha,
            step.dphi_alpha,
            c1,
            c2,
            slack,
        );
        let excess = if step.fallback {
            f64::INFINITY
        } else {
            let a = step.phi_alpha - (state.f + c1 * step.alpha * step.slope + slack);
            let b = step.dphi_alpha.abs() - (c2 * step.slope.abs() + slack);
            debug_assert_eq!(armijo && curvature, a <= 0.0 && b <= 0.0);
            a.max(b)
        };
        audit.record(state.k, excess);
    }
    audit
}

/// Descent ratio within [`lemma_bounds`] at every state with a nonzero gradient.
pub fn audit_lemma(manifold: &dyn Manifold, trace: &[CgState], c2: f64) -> TraceAudit {
    let mut audit = TraceAudit::new("lemma");
    let (lo, hi) = lemma_bounds(c2);
    for state in trace.iter().filter(|s| s.grad_norm > 0.0) {
        let r = lemma_ratio_audit(manifold, state, c2).ratio;
        audit.record(state.k, (lo - LEMMA_SLACK - r).max(r - hi - LEMMA_SLACK));
    }
    audit
}

/// `cos θ_k ≥ (1-2c2)/(1-c2) ‖grad‖/‖η‖` at every state.
pub fn audit_cosine(manifold: &dyn Manifold, trace: &[CgState], c2: f64) -> TraceAudit {
    let mut audit = TraceAudit::new("cosine");
    let factor = (1.0 - 2.0 * c2) / (1.0 - c2);
    for state in trace
        .iter()
        .filter(|s| s.grad_norm > 0.0 && s.eta_norm > 0.0)
    {
        let Ok(cos) = cos_theta(manifold, &state.x, &state.grad, &state.eta) else {
            continue;
        };
        let bound = factor * state.grad_norm / state.eta_norm;
        audit.record(state.k, bound - cos - LEMMA_SLACK);
    }
    audit
}

/// The direction carried into `η_{k+1}` is no longer than `η_k`.
pub fn audit_norm_non_increase(trace: &[CgState]) -> TraceAudit {
    let mut audit = TraceAudit::new("norm-non-increase");
    for state in trace {
        let Some(step) = &state.step else { continue };
        audit.record(
            state.k,
            step.transported_norm - state.eta_norm * (1.0 + NORM_SLACK),
        );
    }
    audit
}

/// `‖η_k‖² ≤ c ‖grad f(x_k)‖² + β_k² ‖η_{k-1}‖²` with `c = (1+c2)/(1-c2)`,
/// over consecutive states of the trace.
pub fn audit_recurrence(trace: &[CgState], c2: f64) -> TraceAudit {
    let mut audit = TraceAudit::new("recurrence");
    let c = (1.0 + c2) / (1.0 - c2);
    for pair in trace.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        if cur.k != prev.k + 1 {
            continue;
        }
        let lhs = cur.eta_norm.powi(2);
        let rhs = c * cur.grad_norm.powi(2) + cur.beta.powi(2) * prev.eta_norm.powi(2);
        audit.record(cur.k, lhs - rhs * (1.0 + LEMMA_SLACK));
    }
    audit
}

/// `f(x_{k+1}) ≤ f(x_k) + slack`.
pub fn audit_monotone(trace: &[CgState], slack: f64) -> TraceAudit {
    let mut audit = TraceAudit::new("monotone");
    for pair in trace.windows(2) {
        if pair[1].k == pair[0].k + 1 {
            audit.record(pair[1].k, pair[1].f - pair[0].f - slack);
        }
    }
    audit
}

/// Growth of the Zoutendijk partial sums over the final 10% of the run is
/// at most `1e-6` of the total.
pub fn audit_zoutendijk_plateau(ledger: &ZoutendijkLedger) -> TraceAudit {
    let mut audit = TraceAudit::new("zoutendijk-plateau");
    audit.record(
        ledger.len().saturating_sub(1),
        ledger.tail_growth(0.1) - 1e-6,
    );
    audit
}

/// All trace audits that hold for the scaled variant.
pub fn audit_scaled_trace(
    manifold: &dyn Manifold,
    trace: &[CgState],
    c1: f64,
    c2: f64,
) -> Vec<TraceAudit> {
    vec![
        audit_wolfe(trace, c1, c2, AUDIT_SLACK),
        audit_lemma(manifold, trace, c2),
        audit_cosine(manifold, trace, c2),
        audit_norm_non_increase(trace),
        audit_recurrence(trace, c2),
        audit_monotone(trace, AUDIT_SLACK),
    ]
}
