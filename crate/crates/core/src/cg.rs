//! Fletcher-Reeves conjugate gradient on a Riemannian manifold.
//!
//! Two variants share one loop. [`Variant::Standard`] carries the previous
//! direction over with the differentiated retraction. [`Variant::Scaled`]
//! does the same, except that when the transport would lengthen the
//! direction it is rescaled back to its original norm.
//!
//! Each iteration:
//!
//! 1. strong Wolfe step `α_k` along `R_{x_k}(α η_k)`, `x_{k+1} = R_{x_k}(α_k η_k)`;
//! 2. `β_{k+1} = ‖grad f(x_{k+1})‖² / ‖grad f(x_k)‖²` (zero on restart iterations);
//! 3. `η_{k+1} = -grad f(x_{k+1}) + β_{k+1} T(η_k)`.

use crate::error::{Error, Result};
use crate::linesearch::{strong_wolfe_search_from, Curve, WolfeConfig};
use crate::manifold::{ensure_feasible, Manifold, Point, Tangent};
use crate::problems::Problem;
use crate::transports::switch_from_parts;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Variant {
    /// Differentiated retraction transport throughout.
    #[serde(rename = "fr")]
    Standard,
    /// Switch to the scaled transport whenever the differentiated
    /// retraction increases the norm.
    #[serde(rename = "scaled-fr")]
    Scaled,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Standard => "fr",
            Variant::Scaled => "scaled-fr",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fr" | "standard" => Ok(Variant::Standard),
            "scaled-fr" | "scaled" => Ok(Variant::Scaled),
            _ => Err(Error::Config(format!(
                "unknown variant `{s}` (expected fr or scaled-fr)"
            ))),
        }
    }
}

/// First trial step of each line search.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialStep {
    /// Always start from `wolfe.alpha_init`.
    Constant,
    /// `α_{k-1} ⟨grad f_{k-1}, η_{k-1}⟩ / ⟨grad f_k, η_k⟩`, assuming the
    /// first-order change along the new direction matches the last one.
    /// The first iteration uses `wolfe.alpha_init`.
    #[default]
    SlopeRatio,
}

/// What to do when the line search exhausts its budget.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LineSearchFailurePolicy {
    /// Take the best sufficient-decrease step found and flag the iteration.
    #[default]
    Fallback,
    /// Stop the run.
    Abort,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct CgConfig {
    pub variant: Variant,
    pub wolfe: WolfeConfig,
    pub initial_step: InitialStep,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Force `β = 0` every `N` iterations.
    pub restart_period: Option<usize>,
    pub record_trace: bool,
    /// Keep every `trace_every`-th state (the last one is always kept).
    pub trace_every: usize,
    pub on_linesearch_failure: LineSearchFailurePolicy,
}

impl Default for CgConfig {
    fn default() -> Self {
        CgConfig {
            variant: Variant::Scaled,
            wolfe: WolfeConfig::default(),
            initial_step: InitialStep::default(),
            max_iter: 10_000,
            grad_tol: 1e-8,
            restart_period: None,
            record_trace: true,
            trace_every: 1,
            on_linesearch_failure: LineSearchFailurePolicy::Fallback,
        }
    }
}

impl CgConfig {
    pub fn validate(&self) -> Result<()> {
        self.wolfe.validate()?;
        if self.max_iter < 1 {
            return Err(Error::Config("max_iter must be >= 1".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::Config("grad_tol must be > 0".into()));
        }
        if self.restart_period == Some(0) {
            return Err(Error::Config("restart period must be >= 1".into()));
        }
        if self.trace_every == 0 {
            return Err(Error::Config("trace_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// What happened on the step taken from `x_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub alpha: f64,
    /// `⟨grad f(x_k), η_k⟩`
    pub slope: f64,
    /// `f(x_{k+1})`
    pub phi_alpha: f64,
    /// `⟨grad f(x_{k+1}), T^R_{α_k η_k}(η_k)⟩`
    pub dphi_alpha: f64,
    /// `‖T^R_{α_k η_k}(η_k)‖_{x_{k+1}} / ‖η_k‖_{x_k}`
    pub ratio: f64,
    /// Whether the direction carried into `η_{k+1}` was rescaled.
    pub scaled: bool,
    /// Norm of the transported direction actually used for `η_{k+1}`.
    pub transported_norm: f64,
    pub evaluations: usize,
    /// The line search failed and the best sufficient-decrease step was used.
    pub fallback: bool,
}

/// Iterate `k` of a run.
#[derive(Clone, Debug)]
pub struct CgState {
    pub k: usize,
    pub x: Point,
    pub eta: Tangent,
    pub grad: Tangent,
    pub f: f64,
    pub grad_norm: f64,
    pub eta_norm: f64,
    /// `β_k`, the coefficient used to form `η_k` (0 for `k = 0`).
    pub beta: f64,
    /// `None` for the final state of a run.
    pub step: Option<StepRecord>,
    /// `(α_{k-1}, ⟨grad f(x_{k-1}), η_{k-1}⟩)`, used to choose the first trial step.
    pub previous: Option<(f64, f64)>,
}

impl CgState {
    /// State at `x0` with `η_0 = -grad f(x_0)`.
    pub fn initial(problem: &dyn Problem, manifold: &dyn Manifold, x0: Point) -> Result<Self> {
        ensure_feasible(manifold, &x0)?;
        let f = problem.value(&x0);
        let grad = manifold.riemannian_gradient(&x0, &problem.euclidean_gradient(&x0))?;
        let grad_norm = manifold.norm(&x0, &grad);
        if !(f.is_finite() && grad_norm.is_finite()) {
            return Err(Error::NonFinite(
                "objective or gradient at the starting point",
            ));
        }
        let eta = -&grad;
        Ok(CgState {
            k: 0,
            x: x0,
            eta,
            grad,
            f,
            grad_norm,
            eta_norm: grad_norm,
            beta: 0.0,
            step: None,
            previous: None,
        })
    }

    /// `⟨grad f(x_k), η_k⟩ / ‖grad f(x_k)‖²`
    pub fn descent_ratio(&self, manifold: &dyn Manifold) -> f64 {
        manifold.metric(&self.x, &self.grad, &self.eta) / (self.grad_norm * self.grad_norm)
    }
}

/// `‖g_next‖² / ‖g_curr‖²` from the two norms.
pub fn beta_fr(grad_next_norm: f64, grad_curr_norm: f64) -> f64 {
    (grad_next_norm * grad_next_norm) / (grad_curr_norm * grad_curr_norm)
}

/// Result of one [`cg_step`].
#[derive(Clone, Debug)]
pub struct StepOutcome {
    /// The input state with its step record filled in.
    pub current: CgState,
    pub next: CgState,
}

fn initial_trial(config: &CgConfig, state: &CgState, slope: f64) -> f64 {
    match (config.initial_step, state.previous) {
        (InitialStep::SlopeRatio, Some((alpha, prev_slope))) => {
            let a = alpha * prev_slope / slope;
            if a.is_finite() && a > 0.0 {
                a
            } else {
                config.wolfe.alpha_init
            }
        }
        _ => config.wolfe.alpha_init,
    }
}

/// Take one iteration from `state`.
pub fn cg_step(
    problem: &dyn Problem,
    manifold: &dyn Manifold,
    state: &CgState,
    config: &CgConfig,
) -> Result<StepOutcome> {
    let x = &state.x;
    let eta = &state.eta;
    let slope = manifold.metric(x, &state.grad, eta);
    let wolfe = WolfeConfig {
        alpha_init: initial_trial(config, state, slope),
        ..config.wolfe.clone()
    };
    let (sample, evaluations, fallback) =
        match strong_wolfe_search_from(problem, manifold, x, eta, state.f, &state.grad, &wolfe) {
            Ok(r) => (r.sample, r.evaluations, false),
            Err(Error::LineSearch {
                best_alpha: Some(alpha),
                evaluations,
            }) if config.on_linesearch_failure == LineSearchFailurePolicy::Fallback => {
                let s = Curve::new(problem, manifold, x, eta).sample(alpha)?;
                (s, evaluations + 1, true)
            }
            Err(e) => return Err(e),
        };

    let y = sample.point;
    let grad_next = sample.gradient;
    let grad_next_norm = manifold.norm(&y, &grad_next);
    if !(sample.phi.is_finite() && grad_next_norm.is_finite()) {
        return Err(Error::NonFinite(
            "objective or gradient at the accepted step",
        ));
    }
    let k_next = state.k + 1;
    let restart = config
        .restart_period
        .is_some_and(|n| k_next.is_multiple_of(n));
    let beta = if restart {
        0.0
    } else {
        beta_fr(grad_next_norm, state.grad_norm)
    };

    let (carried, ratio, scaled, transported_norm) = match config.variant {
        Variant::Scaled => {
            let gain = manifold.transport_norm_gain(x, &eta.scale(sample.alpha), eta);
            let o = switch_from_parts(manifold, &y, sample.transported, state.eta_norm, gain)?;
            (o.vector, o.ratio, o.scaled, o.norm)
        }
        Variant::Standard => {
            let tn = manifold.norm(&y, &sample.transported);
            (sample.transported, tn / state.eta_norm, false, tn)
        }
    };
    // rounding in the transport leaves a small normal component; with β near
    // one it accumulates and drags later iterates off the manifold
    let eta_next = if beta == 0.0 {
        -&grad_next
    } else {
        manifold.project(&y, &(-&grad_next).axpy(beta, &carried))
    };
    let eta_next_norm = manifold.norm(&y, &eta_next);

    let record = StepRecord {
        alpha: sample.alpha,
        slope,
        phi_alpha: sample.phi,
        dphi_alpha: sample.dphi,
        ratio,
        scaled,
        transported_norm,
        evaluations,
        fallback,
    };
    let mut current = state.clone();
    current.step = Some(record);
    let next = CgState {
        k: k_next,
        x: y,
        eta: eta_next,
        grad: grad_next,
        f: sample.phi,
        grad_norm: grad_next_norm,
        eta_norm: eta_next_norm,
        beta,
        step: None,
        previous: Some((sample.alpha, slope)),
    };
    Ok(StepOutcome { current, next })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Status {
    Converged,
    MaxIter,
    LineSearchFailed(String),
    /// A numerical error (for example a singular retraction) ended the run.
    Failed(String),
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::MaxIter => "max_iter",
            Status::LineSearchFailed(_) => "linesearch_failed",
            Status::Failed(_) => "failed",
        }
    }

    /// Detail message for the failure statuses.
    pub fn message(&self) -> Option<&str> {
        match self {
            Status::LineSearchFailed(m) | Status::Failed(m) => Some(m),
            _ => None,
        }
    }

    pub fn is_failure(&self) -> bool {
        self.message().is_some()
    }
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub final_state: CgState,
    pub trace: Vec<CgState>,
    pub status: Status,
    /// Number of steps taken.
    pub iterations: usize,
    pub scaling_events: usize,
    pub fallback_steps: usize,
}

/// Run the solver from `x0` until the gradient norm drops to `grad_tol`,
/// `max_iter` steps have been taken, or the run fails.
///
/// Invalid configuration and an infeasible `x0` are errors. Failures after
/// the first iteration end the run with a failure [`Status`] and keep the
/// trace recorded so far.
pub fn cg_solve(
    problem: &dyn Problem,
    manifold: &dyn Manifold,
    x0: Point,
    config: &CgConfig,
) -> Result<CgOutcome> {
    config.validate()?;
    let mut state = CgState::initial(problem, manifold, x0)?;
    let mut trace = Vec::new();
    let mut scaling_events = 0;
    let mut fallback_steps = 0;
    let keep = |k: usize| config.record_trace && k.is_multiple_of(config.trace_every);

    let status = loop {
        if state.grad_norm <= config.grad_tol {
            break Status::Converged;
        }
        if state.k >= config.max_iter {
            break Status::MaxIter;
        }
        match cg_step(problem, manifold, &state, config) {
            Ok(StepOutcome { current, next }) => {
                let rec = current.step.as_ref().expect("step record");
                scaling_events += usize::from(rec.scaled);
                fallback_steps += usize::from(rec.fallback);
                if keep(current.k) {
                    trace.push(current);
                }
                state = next;
            }
            Err(e @ (Error::LineSearch { .. } | Error::NotDescent { .. })) => {
                break Status::LineSearchFailed(e.to_string());
            }
            Err(e) => break Status::Failed(e.to_string()),
        }
    };
    if config.record_trace {
        trace.push(state.clone());
    }
    Ok(CgOutcome {
        iterations: state.k,
        final_state: state,
        trace,
        status,
        scaling_events,
        fallback_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifolds::{SphereRetraction, SphereStandard};
    use crate::problems::{diag_ramp, RayleighProblem};

    #[test]
    fn beta_examples() {
        assert_eq!(beta_fr(0.0, 1.0), 0.0);
        assert_eq!(beta_fr(3.0, 3.0), 1.0);
        assert_eq!(beta_fr(2.0, 1.0), 4.0);
    }

    #[test]
    fn converged_at_start() {
        let p = RayleighProblem::new(diag_ramp(5, 1.0)).unwrap();
        let s = SphereStandard::new(5, SphereRetraction::QrNormalize).unwrap();
        let x0 = Point::from_slice(&[1.0, 0.0, 0.0, 0.0, 0.0]);
        let out = cg_solve(&p, &s, x0, &CgConfig::default()).unwrap();
        assert_eq!(out.status, Status::Converged);
        assert_eq!(out.iterations, 0);
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn rejects_infeasible_start() {
        let p = RayleighProblem::new(diag_ramp(3, 1.0)).unwrap();
        let s = SphereStandard::new(3, SphereRetraction::QrNormalize).unwrap();
        let err = cg_solve(
            &p,
            &s,
            Point::from_slice(&[2.0, 0.0, 0.0]),
            &CgConfig::default(),
        );
        assert!(matches!(err, Err(Error::Infeasible { .. })));
    }

    #[test]
    fn restart_every_step_is_steepest_descent() {
        let n = 8;
        let p = RayleighProblem::new(diag_ramp(n, 1.0)).unwrap();
        let s = SphereStandard::new(n, SphereRetraction::QrNormalize).unwrap();
        let x0 = Point::from_vector(nalgebra::DVector::from_element(n, 1.0 / (n as f64).sqrt()));
        let cfg = CgConfig {
            restart_period: Some(1),
            max_iter: 50,
            ..CgConfig::default()
        };
        let out = cg_solve(&p, &s, x0, &cfg).unwrap();
        for st in &out.trace {
            assert_eq!(st.eta, -&st.grad);
            assert_eq!(st.beta, 0.0);
        }
    }

    #[test]
    fn solves_small_rayleigh() {
        let n = 10;
        let p = RayleighProblem::new(diag_ramp(n, 1.0)).unwrap();
        for variant in [Variant::Standard, Variant::Scaled] {
            let s = SphereStandard::new(n, SphereRetraction::QrNormalize).unwrap();
            let x0 =
                Point::from_vector(nalgebra::DVector::from_element(n, 1.0 / (n as f64).sqrt()));
            let cfg = CgConfig {
                variant,
                ..CgConfig::default()
            };
            let out = cg_solve(&p, &s, x0, &cfg).unwrap();
            assert_eq!(out.status, Status::Converged);
            assert!((out.final_state.f - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        assert!(CgConfig {
            max_iter: 0,
            ..CgConfig::default()
        }
        .validate()
        .is_err());
        assert!(CgConfig {
            grad_tol: 0.0,
            ..CgConfig::default()
        }
        .validate()
        .is_err());
        assert!(CgConfig {
            restart_period: Some(0),
            ..CgConfig::default()
        }
        .validate()
        .is_err());
        assert!("bogus".parse::<Variant>().is_err());
        assert_eq!("scaled-fr".parse::<Variant>().unwrap(), Variant::Scaled);
    }
}
