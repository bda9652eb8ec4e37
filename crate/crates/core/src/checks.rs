//! Invariant suites behind the `check` subcommand.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cg::{cg_solve, CgConfig, CgOutcome, Variant};
use crate::diagnostics::{
    audit_scaled_trace, audit_wolfe, audit_zoutendijk_plateau, lipschitz_probe, ProbeGrid,
    ZoutendijkLedger,
};
use crate::error::{Error, Result};
use crate::experiment::{build_preset, seeded_gaussian, PRESETS, PRESET_SEED};
use crate::linesearch::AUDIT_SLACK;
use crate::manifold::{Manifold, Point, Tangent};
use crate::manifolds::{ProductStiefel, SpherePeculiar, SphereRetraction, SphereStandard, Stiefel};
use crate::problems::{
    matrix_preset, singular_values_desc, BrockettProblem, Problem, RayleighProblem, Sense,
    SvdProblem,
};
use crate::transports::transport_scaled;

pub type ProblemOnManifold = (Box<dyn Problem>, Box<dyn Manifold>);

/// Which invariant groups to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckScope {
    All,
    Geometry,
    Solver,
    Probe,
}

impl CheckScope {
    fn includes(self, group: CheckScope) -> bool {
        self == CheckScope::All || self == group
    }
}

impl FromStr for CheckScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(CheckScope::All),
            "geometry" => Ok(CheckScope::Geometry),
            "solver" => Ok(CheckScope::Solver),
            "probe" => Ok(CheckScope::Probe),
            _ => Err(Error::Parse(format!(
                "scope must be all, geometry, solver or probe, got `{s}`"
            ))),
        }
    }
}

/// Result of one invariant check.
#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub group: &'static str,
    pub name: String,
    pub passed: bool,
    pub checked: usize,
    /// Largest observed error (or excess) for the checked quantity.
    pub worst: f64,
    pub tolerance: f64,
    pub detail: Option<String>,
}

impl CheckResult {
    fn from_errors(group: &'static str, name: String, errors: &[f64], tolerance: f64) -> Self {
        let worst = errors.iter().copied().fold(0.0, f64::max);
        let passed = errors.iter().all(|e| *e <= tolerance);
        CheckResult {
            group,
            name,
            passed,
            checked: errors.len(),
            worst,
            tolerance,
            detail: None,
        }
    }

    fn failed(group: &'static str, name: String, error: &Error) -> Self {
        CheckResult {
            group,
            name,
            passed: false,
            checked: 0,
            worst: f64::INFINITY,
            tolerance: 0.0,
            detail: Some(error.to_string()),
        }
    }

    fn with_detail(mut self, detail: String) -> Self {
        self.detail = Some(detail);
        self
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}/{} (checked {}, worst {:.3e}, tolerance {:.1e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.group,
            self.name,
            self.checked,
            self.worst,
            self.tolerance
        )?;
        if let Some(d) = &self.detail {
            write!(f, ": {d}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct CheckReport {
    pub results: Vec<CheckResult>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.results.iter().filter(|r| !r.passed)
    }
}

/// Manifolds covered by the geometry checks.
pub fn geometry_manifolds() -> Vec<Box<dyn Manifold>> {
    let build = || -> Result<Vec<Box<dyn Manifold>>> {
        Ok(vec![
            Box::new(SphereStandard::new(20, SphereRetraction::QrNormalize)?),
            Box::new(SphereStandard::new(100, SphereRetraction::Orthographic)?),
            Box::new(SpherePeculiar::with_default_coefficient(20)?),
            Box::new(Stiefel::new(4, 2)?),
            Box::new(Stiefel::new(6, 3)?),
            Box::new(ProductStiefel::new(6, 4, 2)?),
        ])
    };
    build().expect("fixed manifold dimensions are valid")
}

/// Problem and manifold pairs covered by the gradient checks.
pub fn gradient_pairs() -> Vec<ProblemOnManifold> {
    let build = || -> Result<Vec<ProblemOnManifold>> {
        let diag20 = matrix_preset("diag-1-20")?;
        let b = seeded_gaussian(4, 4, PRESET_SEED);
        Ok(vec![
            (
                Box::new(RayleighProblem::new(diag20.clone())?),
                Box::new(SphereStandard::new(20, SphereRetraction::QrNormalize)?),
            ),
            (
                Box::new(RayleighProblem::new(diag20)?),
                Box::new(SpherePeculiar::with_default_coefficient(20)?),
            ),
            (
                Box::new(BrockettProblem::new(
                    (&b + b.transpose()) * 0.5,
                    vec![1.0, 2.0],
                )?),
                Box::new(Stiefel::new(4, 2)?),
            ),
            (
                Box::new(SvdProblem::new(
                    seeded_gaussian(6, 4, PRESET_SEED),
                    vec![2.0, 1.0],
                    Sense::Maximize,
                )?),
                Box::new(ProductStiefel::new(6, 4, 2)?),
            ),
        ])
    };
    build().expect("fixed problem data is valid")
}

fn max_abs_diff(a: &Tangent, b: &Tangent) -> f64 {
    a.blocks()
        .iter()
        .zip(b.blocks())
        .map(|(x, y)| (x - y).abs().max())
        .fold(0.0, f64::max)
}

/// Tangent step of metric norm below `max_norm`, inside the retraction domain.
fn random_step(m: &dyn Manifold, x: &Point, max_norm: f64, rng: &mut ChaCha8Rng) -> Tangent {
    let scale = max_norm * rng.random_range(0.05..1.0);
    let eta = m.random_tangent(x, scale, rng);
    match m.step_cap(x, &eta) {
        Some(cap) if cap < 1.0 => eta.scale(0.9 * cap),
        _ => eta,
    }
}

/// Metric symmetry and positivity on unit tangent pairs.
pub fn check_metric(m: &dyn Manifold, samples: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(samples);
    for _ in 0..samples {
        let x = m.random_point(&mut rng);
        let xi = m.random_tangent(&x, 1.0, &mut rng);
        let zeta = m.random_tangent(&x, 1.0, &mut rng);
        let asym = (m.metric(&x, &xi, &zeta) - m.metric(&x, &zeta, &xi)).abs();
        errors.push(if m.metric(&x, &xi, &xi) > 0.0 {
            asym
        } else {
            f64::INFINITY
        });
    }
    CheckResult::from_errors(
        "geometry",
        format!("metric-symmetry/{}", m.name()),
        &errors,
        1e-12,
    )
}

/// Projection idempotence and tangency of projected ambient vectors.
pub fn check_projection(m: &dyn Manifold, samples: usize, seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(samples);
    for _ in 0..samples {
        let x = m.random_point(&mut rng);
        let raw = crate::manifold::gaussian_blocks(&m.shapes(), &mut rng);
        let p = m.project(&x, &raw);
        let pp = m.project(&x, &p);
        let scale = 1.0 + raw.ambient_norm();
        errors.push((max_abs_diff(&p, &pp) + m.tangency_residual(&x, &p)) / scale);
    }
    CheckResult::from_errors(
        "geometry",
        format!("projection/{}", m.name()),
        &errors,
        1e-12,
    )
}

/// `DR_x(η)[ξ]` against a central difference of `t ↦ R_x(η + tξ)` with step `h`.
pub fn check_transport_fd(m: &dyn Manifold, samples: usize, seed: u64, h: f64) -> CheckResult {
    let name = format!("transport-fd/{}", m.name());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(samples);
    for _ in 0..samples {
        let x = m.random_point(&mut rng);
        let eta = random_step(m, &x, 1.0, &mut rng);
        let xi = m.random_tangent(&x, 1.0, &mut rng);
        let run = || -> Result<f64> {
            let exact = m.transport_diff(&x, &eta, &xi)?;
            let plus = m.retract_raw(&x, &eta.axpy(h, &xi))?;
            let minus = m.retract_raw(&x, &eta.axpy(-h, &xi))?;
            let fd = Tangent::from_blocks(
                plus.blocks()
                    .iter()
                    .zip(minus.blocks())
                    .map(|(p, q)| (p - q) / (2.0 * h))
                    .collect(),
            );
            Ok(max_abs_diff(&exact, &fd))
        };
        match run() {
            Ok(e) => errors.push(e),
            Err(e) => return CheckResult::failed("geometry", name, &e),
        }
    }
    CheckResult::from_errors("geometry", name, &errors, 1e-6)
}

/// `|‖T⁰_η(ξ)‖ − ‖ξ‖|` over random instances.
pub fn check_scaled_norm(m: &dyn Manifold, samples: usize, seed: u64) -> CheckResult {
    let name = format!("scaled-norm/{}", m.name());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(samples);
    for _ in 0..samples {
        let x = m.random_point(&mut rng);
        let eta = random_step(m, &x, 2.0, &mut rng);
        let xi = m.random_tangent(&x, 1.0, &mut rng);
        let run = || -> Result<f64> {
            let y = m.retract(&x, &eta)?;
            let t = transport_scaled(m, &x, &eta, &xi)?;
            Ok((m.norm(&y, &t) - m.norm(&x, &xi)).abs())
        };
        match run() {
            Ok(e) => errors.push(e),
            Err(e) => return CheckResult::failed("geometry", name, &e),
        }
    }
    CheckResult::from_errors("geometry", name, &errors, 1e-12)
}

/// `‖T^R_η(ξ)‖² − ‖ξ‖² − (ηᵀξ)²/(1 − ‖η‖²)` for the orthographic
/// retraction on `S^{n-1}`, with `‖η‖ < 0.9` and unit `ξ`.
pub fn check_orthographic_identity(n: usize, samples: usize, seed: u64) -> CheckResult {
    let name = format!("orthographic-identity/S^{}", n - 1);
    let m = match SphereStandard::new(n, SphereRetraction::Orthographic) {
        Ok(m) => m,
        Err(e) => return CheckResult::failed("geometry", name, &e),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(samples);
    for _ in 0..samples {
        let x = m.random_point(&mut rng);
        let eta = m.random_tangent(&x, rng.random_range(0.0..0.9), &mut rng);
        let xi = m.random_tangent(&x, 1.0, &mut rng);
        match m.transport_diff(&x, &eta, &xi) {
            Ok(t) => {
                let ee = eta.dot(&eta);
                let ex = eta.dot(&xi);
                errors.push((t.dot(&t) - xi.dot(&xi) - ex * ex / (1.0 - ee)).abs());
            }
            Err(e) => return CheckResult::failed("geometry", name, &e),
        }
    }
    CheckResult::from_errors("geometry", name, &errors, 1e-12)
}

/// `|g_x(grad f, ζ) − ∇f(x)ᵀζ| ≤ 1e-10 (1 + ‖∇f(x)‖)` over random `x` and
/// 50 random tangent `ζ` per point. Errors are reported relative to the
/// right-hand side's scale.
pub fn check_gradient_duality(
    problem: &dyn Problem,
    m: &dyn Manifold,
    samples: usize,
    seed: u64,
) -> CheckResult {
    let name = format!("gradient-duality/{}/{}", problem.name(), m.name());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(samples * 50);
    for _ in 0..samples {
        let x = m.random_point(&mut rng);
        let egrad = problem.euclidean_gradient(&x);
        let grad = match m.riemannian_gradient(&x, &egrad) {
            Ok(g) => g,
            Err(e) => return CheckResult::failed("geometry", name, &e),
        };
        let scale = 1.0 + egrad.ambient_norm();
        for _ in 0..50 {
            let zeta = m.random_tangent(&x, 1.0, &mut rng);
            errors.push((m.metric(&x, &grad, &zeta) - egrad.dot(&zeta)).abs() / scale);
        }
    }
    CheckResult::from_errors("geometry", name, &errors, 1e-10)
}

fn geometry_checks(samples: usize, seed: u64) -> Vec<CheckResult> {
    let mut results = Vec::new();
    for m in geometry_manifolds() {
        let m = &*m;
        results.push(check_metric(m, samples, seed));
        results.push(check_projection(m, samples, seed));
        results.push(check_transport_fd(m, samples, seed, 1e-6));
        results.push(check_scaled_norm(m, samples, seed));
    }
    results.push(check_orthographic_identity(100, samples, seed));
    for (p, m) in gradient_pairs() {
        results.push(check_gradient_duality(&*p, &*m, samples, seed));
    }
    results
}

/// One solver run of a preset from its reference point, with the
/// experiment defaults.
pub fn solve_preset(preset: &str, variant: Variant) -> Result<(CgOutcome, Box<dyn Manifold>)> {
    let setup = build_preset(preset)?;
    let config = CgConfig {
        variant,
        ..CgConfig::default()
    };
    let outcome = cg_solve(
        &*setup.problem,
        &*setup.manifold,
        setup.reference_x0,
        &config,
    )?;
    Ok((outcome, setup.manifold))
}

fn audit_result(
    name: String,
    audit: &crate::diagnostics::TraceAudit,
    tolerance: f64,
) -> CheckResult {
    let result = CheckResult {
        group: "solver",
        name,
        passed: audit.passed(),
        checked: audit.checked,
        worst: audit.worst_excess,
        tolerance,
        detail: None,
    };
    match audit.violations.first() {
        Some(k) => result.with_detail(format!(
            "{} violations, first at k={k}",
            audit.violations.len()
        )),
        None => result,
    }
}

fn solver_checks() -> Vec<CheckResult> {
    let config = CgConfig::default();
    let (c1, c2) = (config.wolfe.c1, config.wolfe.c2);
    let mut results = Vec::new();
    for preset in PRESETS {
        for variant in [Variant::Scaled, Variant::Standard] {
            let label = format!("{preset}/{}", variant.as_str());
            let (outcome, m) = match solve_preset(preset, variant) {
                Ok(r) => r,
                Err(e) => {
                    results.push(CheckResult::failed("solver", label, &e));
                    continue;
                }
            };
            let status = CheckResult {
                group: "solver",
                name: format!("status/{label}"),
                passed: !outcome.status.is_failure(),
                checked: outcome.iterations,
                worst: 0.0,
                tolerance: 0.0,
                detail: outcome.status.message().map(str::to_string),
            };
            results.push(status);
            let audits = match variant {
                Variant::Scaled => audit_scaled_trace(&*m, &outcome.trace, c1, c2),
                Variant::Standard => vec![audit_wolfe(&outcome.trace, c1, c2, AUDIT_SLACK)],
            };
            for audit in &audits {
                results.push(audit_result(format!("{}/{label}", audit.name), audit, 0.0));
            }
            if outcome.status.as_str() == "converged" {
                let ledger = ZoutendijkLedger::from_trace(&*m, &outcome.trace);
                let audit = audit_zoutendijk_plateau(&ledger);
                results.push(audit_result(
                    format!("{}/{label}", audit.name),
                    &audit,
                    1e-6,
                ));
            }
        }
    }
    results.push(check_svd_recovery());
    results
}

/// Scaled FR-CG on the `svd-6x4` preset recovers the top two singular
/// values to `1e-6`.
pub fn check_svd_recovery() -> CheckResult {
    let name = "svd-recovery/svd-6x4".to_string();
    let a = seeded_gaussian(6, 4, PRESET_SEED);
    let run = || -> Result<(Vec<f64>, Vec<f64>)> {
        let problem = SvdProblem::new(a.clone(), vec![2.0, 1.0], Sense::Maximize)?;
        let m = ProductStiefel::new(6, 4, 2)?;
        let x0 = build_preset("svd-6x4")?.reference_x0;
        let outcome = cg_solve(&problem, &m, x0, &CgConfig::default())?;
        Ok((
            problem.singular_value_estimates(&outcome.final_state.x),
            singular_values_desc(&a),
        ))
    };
    match run() {
        Ok((est, oracle)) => {
            let errors: Vec<f64> = est
                .iter()
                .zip(&oracle)
                .map(|(e, o)| (e - o).abs())
                .collect();
            CheckResult::from_errors("solver", name, &errors, 1e-6)
        }
        Err(e) => CheckResult::failed("solver", name, &e),
    }
}

/// Probe pairs: Brockett on St(2, 4) and the SVD objective on St(2, 5) × St(2, 4).
pub fn probe_pairs() -> Vec<ProblemOnManifold> {
    let build = || -> Result<Vec<ProblemOnManifold>> {
        let b = seeded_gaussian(4, 4, PRESET_SEED);
        Ok(vec![
            (
                Box::new(BrockettProblem::new(
                    (&b + b.transpose()) * 0.5,
                    vec![1.0, 2.0],
                )?),
                Box::new(Stiefel::new(4, 2)?),
            ),
            (
                Box::new(SvdProblem::new(
                    seeded_gaussian(5, 4, PRESET_SEED),
                    vec![2.0, 1.0],
                    Sense::Maximize,
                )?),
                Box::new(ProductStiefel::new(5, 4, 2)?),
            ),
        ])
    };
    build().expect("fixed problem data is valid")
}

/// Second-derivative probe: all estimates finite, and the estimate at the
/// last grid point is at most a tenth of the first on at least 90% of samples.
pub fn check_probe(problem: &dyn Problem, m: &dyn Manifold, grid: &ProbeGrid) -> CheckResult {
    let report = lipschitz_probe(problem, m, grid);
    let fraction = report.decay_fraction(0.1);
    CheckResult {
        group: "probe",
        name: format!("second-derivative-decay/{}/{}", problem.name(), m.name()),
        passed: report.all_finite() && fraction >= 0.9,
        checked: report.samples.len(),
        worst: 1.0 - fraction,
        tolerance: 0.1,
        detail: Some(format!(
            "decay fraction {fraction:.2}, max estimate {:.3e}",
            report.max_observed
        )),
    }
}

/// Run the selected groups. `samples` sets the number of random instances
/// per geometry check.
pub fn run_checks(scope: CheckScope, samples: usize, seed: u64) -> CheckReport {
    let mut results = Vec::new();
    if scope.includes(CheckScope::Geometry) {
        results.extend(geometry_checks(samples, seed));
    }
    if scope.includes(CheckScope::Solver) {
        results.extend(solver_checks());
    }
    if scope.includes(CheckScope::Probe) {
        let grid = ProbeGrid {
            seed,
            ..ProbeGrid::default()
        };
        for (p, m) in probe_pairs() {
            results.push(check_probe(&*p, &*m, &grid));
        }
    }
    CheckReport { results }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scope_parsing() {
        assert_eq!("all".parse::<CheckScope>().unwrap(), CheckScope::All);
        assert_eq!("probe".parse::<CheckScope>().unwrap(), CheckScope::Probe);
        assert!("everything".parse::<CheckScope>().is_err());
    }

    #[test]
    fn geometry_scope_passes() {
        let report = run_checks(CheckScope::Geometry, 20, 7);
        let failures: Vec<_> = report.failures().map(ToString::to_string).collect();
        assert!(failures.is_empty(), "{failures:#?}");
        assert!(!report.results.is_empty());
    }

    #[test]
    fn probe_scope_passes() {
        let report = run_checks(CheckScope::Probe, 0, 1);
        let failures: Vec<_> = report.failures().map(ToString::to_string).collect();
        assert!(failures.is_empty(), "{failures:#?}");
    }
}
