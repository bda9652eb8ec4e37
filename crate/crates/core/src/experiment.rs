//! Named experiment presets, trace files and restart sweeps.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::cg::{cg_solve, CgConfig, CgOutcome, Status, Variant};
use crate::diagnostics::ZoutendijkLedger;
use crate::error::{Error, Result};
use crate::manifold::{Manifold, Point};
use crate::manifolds::{ProductStiefel, SpherePeculiar, SphereRetraction, SphereStandard, Stiefel};
use crate::problems::{
    matrix_preset, BrockettProblem, Problem, RayleighProblem, Sense, SvdProblem,
};

/// Environment variable overriding the default output directory.
pub const OUTPUT_DIR_ENV: &str = "RCG_OUTPUT_DIR";

pub const DEFAULT_OUTPUT_DIR: &str = "results";

/// Restart periods swept by default; `None` is the run without restarts.
pub const DEFAULT_SWEEP_PERIODS: [Option<usize>; 4] = [Some(19), Some(50), Some(100), None];

/// Seed of the random matrices in the Stiefel presets.
pub const PRESET_SEED: u64 = 42;

pub const PRESETS: &[&str] = &[
    "peculiar-sphere-20",
    "ortho-sphere-100",
    "brockett-stiefel-4x2",
    "svd-6x4",
];

/// A problem, its manifold and the preset's reference starting point.
#[derive(Debug)]
pub struct Setup {
    pub problem: Box<dyn Problem>,
    pub manifold: Box<dyn Manifold>,
    pub reference_x0: Point,
}

/// Standard normal `rows × cols` matrix from a ChaCha8 stream seeded with `seed`.
pub fn seeded_gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

fn leading_columns(n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::identity(n, p)
}

/// Build a preset by name.
///
/// - `peculiar-sphere-20`: `xᵀAx`, `A = diag(1, ..., 20)`, on `S¹⁹` with the
///   metric `diag(10000 x₁² + 1, 1, ..., 1)` and the normalizing retraction,
///   from `(1, ..., 1)/(2√5)`.
/// - `ortho-sphere-100`: `xᵀAx`, `A = diag(1, ..., 100)/100`, on `S⁹⁹` with
///   the standard metric and the orthographic retraction, from `(1, ..., 1)/10`.
/// - `brockett-stiefel-4x2`: `tr(XᵀAXN)` on St(2, 4) with a seeded random
///   symmetric `A` and `N = diag(1, 2)`.
/// - `svd-6x4`: `-tr(UᵀAVN)` on St(2, 6) × St(2, 4) with a seeded random
///   `A` and `N = diag(2, 1)`; the minimizers carry the top two singular pairs.
pub fn build_preset(name: &str) -> Result<Setup> {
    match name {
        "peculiar-sphere-20" => {
            let n = 20;
            Ok(Setup {
                problem: Box::new(RayleighProblem::new(matrix_preset("diag-1-20")?)?),
                manifold: Box::new(SpherePeculiar::with_default_coefficient(n)?),
                reference_x0: Point::from_vector(DVector::from_element(
                    n,
                    1.0 / (2.0 * 5f64.sqrt()),
                )),
            })
        }
        "ortho-sphere-100" => {
            let n = 100;
            Ok(Setup {
                problem: Box::new(RayleighProblem::new(matrix_preset("diag-1-100-scaled")?)?),
                manifold: Box::new(SphereStandard::new(n, SphereRetraction::Orthographic)?),
                reference_x0: Point::from_vector(DVector::from_element(n, 1.0 / (n as f64).sqrt())),
            })
        }
        "brockett-stiefel-4x2" => {
            let b = seeded_gaussian(4, 4, PRESET_SEED);
            let a = (&b + b.transpose()) * 0.5;
            Ok(Setup {
                problem: Box::new(BrockettProblem::new(a, vec![1.0, 2.0])?),
                manifold: Box::new(Stiefel::new(4, 2)?),
                reference_x0: Point::from_matrix(leading_columns(4, 2)),
            })
        }
        "svd-6x4" => {
            let a = seeded_gaussian(6, 4, PRESET_SEED);
            Ok(Setup {
                problem: Box::new(SvdProblem::new(a, vec![2.0, 1.0], Sense::Maximize)?),
                manifold: Box::new(ProductStiefel::new(6, 4, 2)?),
                reference_x0: Point::from_pair(leading_columns(6, 2), leading_columns(4, 2)),
            })
        }
        other => Err(Error::UnknownPreset(other.to_string())),
    }
}

/// Starting point selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum X0Spec {
    /// The preset's reference point.
    Paper,
    /// Ambient Gaussian sample projected onto the manifold.
    Random(u64),
}

impl X0Spec {
    pub fn resolve(&self, setup: &Setup) -> Point {
        match *self {
            X0Spec::Paper => setup.reference_x0.clone(),
            X0Spec::Random(seed) => setup
                .manifold
                .random_point(&mut ChaCha8Rng::seed_from_u64(seed)),
        }
    }
}

impl fmt::Display for X0Spec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            X0Spec::Paper => write!(f, "paper"),
            X0Spec::Random(seed) => write!(f, "random:{seed}"),
        }
    }
}

impl FromStr for X0Spec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "paper" {
            return Ok(X0Spec::Paper);
        }
        s.strip_prefix("random:")
            .and_then(|seed| seed.parse().ok())
            .map(X0Spec::Random)
            .ok_or_else(|| {
                Error::Parse(format!("x0 must be `paper` or `random:<seed>`, got `{s}`"))
            })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Format {
    #[default]
    Csv,
    Jsonl,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            _ => Err(Error::Parse(format!(
                "format must be csv or jsonl, got `{s}`"
            ))),
        }
    }
}

/// Everything needed to reproduce one run.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub preset: String,
    pub variant: Variant,
    pub restart_period: Option<usize>,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub c1: f64,
    pub c2: f64,
    pub x0: X0Spec,
    /// Trace file; `None` keeps the trace in memory only.
    pub out: Option<PathBuf>,
    pub format: Format,
}

impl ExperimentSpec {
    pub fn new(preset: &str, variant: Variant) -> Self {
        let defaults = CgConfig::default();
        ExperimentSpec {
            preset: preset.to_string(),
            variant,
            restart_period: None,
            max_iter: defaults.max_iter,
            grad_tol: defaults.grad_tol,
            c1: defaults.wolfe.c1,
            c2: defaults.wolfe.c2,
            x0: X0Spec::Paper,
            out: None,
            format: Format::Csv,
        }
    }

    /// Run name used for default file names: `preset-variant[-N<n>]`.
    pub fn name(&self) -> String {
        let mut name = format!("{}-{}", self.preset, self.variant.as_str());
        if let Some(n) = self.restart_period {
            name.push_str(&format!("-N{n}"));
        }
        name
    }

    pub fn cg_config(&self) -> CgConfig {
        let mut config = CgConfig {
            variant: self.variant,
            max_iter: self.max_iter,
            grad_tol: self.grad_tol,
            restart_period: self.restart_period,
            record_trace: true,
            trace_every: 1,
            ..CgConfig::default()
        };
        config.wolfe.c1 = self.c1;
        config.wolfe.c2 = self.c2;
        config
    }
}

/// Directory for trace files when no explicit path is given.
pub fn default_output_dir() -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

/// One line of a trace file. Step quantities are absent on the final row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub k: usize,
    pub f_k: f64,
    pub grad_norm: f64,
    pub alpha_k: Option<f64>,
    pub beta_k: f64,
    /// `‖T^R_{α_k η_k}(η_k)‖ / ‖η_k‖`
    pub ratio_k: Option<f64>,
    pub scaled_k: Option<bool>,
    /// First coordinate of the iterate.
    pub x1_k: f64,
    /// Distance to the sign-matched optimum, when the problem knows one.
    pub dist_k: Option<f64>,
    pub zoutendijk_partial: f64,
}

pub const TRACE_COLUMNS: [&str; 10] = [
    "k",
    "f_k",
    "grad_norm",
    "alpha_k",
    "beta_k",
    "ratio_k",
    "scaled_k",
    "x1_k",
    "dist_k",
    "zoutendijk_partial",
];

fn float_field(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt_float_field(v: Option<f64>) -> String {
    v.map(float_field).unwrap_or_default()
}

impl TraceRow {
    pub fn csv_fields(&self) -> [String; 10] {
        [
            self.k.to_string(),
            float_field(self.f_k),
            float_field(self.grad_norm),
            opt_float_field(self.alpha_k),
            float_field(self.beta_k),
            opt_float_field(self.ratio_k),
            self.scaled_k.map(|b| b.to_string()).unwrap_or_default(),
            float_field(self.x1_k),
            opt_float_field(self.dist_k),
            float_field(self.zoutendijk_partial),
        ]
    }
}

/// Trace rows from a full solver trace.
pub fn trace_rows(
    manifold: &dyn Manifold,
    outcome: &CgOutcome,
    optimum: Option<&Point>,
) -> Vec<TraceRow> {
    let mut ledger = ZoutendijkLedger::new();
    outcome
        .trace
        .iter()
        .map(|state| {
            ledger.accumulate(manifold, state);
            TraceRow {
                k: state.k,
                f_k: state.f,
                grad_norm: state.grad_norm,
                alpha_k: state.step.as_ref().map(|s| s.alpha),
                beta_k: state.beta,
                ratio_k: state.step.as_ref().map(|s| s.ratio),
                scaled_k: state.step.as_ref().map(|s| s.scaled),
                x1_k: state.x.block(0)[0],
                dist_k: optimum.map(|o| state.x.distance(o)),
                zoutendijk_partial: ledger.total(),
            }
        })
        .collect()
}

/// Summary of a finished run.
#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub preset: String,
    pub variant: &'static str,
    pub restart_period: Option<usize>,
    pub x0: String,
    pub status: &'static str,
    pub message: Option<String>,
    pub iterations: usize,
    pub final_f: f64,
    pub final_grad_norm: f64,
    pub final_dist: Option<f64>,
    pub scaling_events: usize,
    pub fallback_steps: usize,
    pub out: Option<PathBuf>,
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: status={} iterations={} final_f={:.16e} final_grad_norm={:.3e}",
            self.name, self.status, self.iterations, self.final_f, self.final_grad_norm
        )?;
        if let Some(d) = self.final_dist {
            write!(f, " final_dist={d:.3e}")?;
        }
        write!(f, " scaling_events={}", self.scaling_events)?;
        if self.fallback_steps > 0 {
            write!(f, " fallback_steps={}", self.fallback_steps)?;
        }
        if let Some(m) = &self.message {
            write!(f, " ({m})")?;
        }
        Ok(())
    }
}

/// A finished run with its trace.
#[derive(Debug)]
pub struct RunReport {
    pub summary: RunSummary,
    pub rows: Vec<TraceRow>,
    pub outcome: CgOutcome,
}

impl RunReport {
    /// First iteration with `dist_k ≤ threshold`.
    pub fn first_within(&self, threshold: f64) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.dist_k.is_some_and(|d| d <= threshold))
            .map(|r| r.k)
    }

    pub fn succeeded(&self) -> bool {
        !self.outcome.status.is_failure()
    }
}

fn metadata(spec: &ExperimentSpec, summary: &RunSummary) -> Vec<(&'static str, String)> {
    vec![
        ("name", summary.name.clone()),
        ("preset", spec.preset.clone()),
        ("variant", spec.variant.as_str().to_string()),
        (
            "restart",
            spec.restart_period.map_or("none".into(), |n| n.to_string()),
        ),
        ("max_iter", spec.max_iter.to_string()),
        ("grad_tol", format!("{:e}", spec.grad_tol)),
        ("c1", format!("{:e}", spec.c1)),
        ("c2", format!("{:e}", spec.c2)),
        ("x0", spec.x0.to_string()),
        ("status", summary.status.to_string()),
        ("iterations", summary.iterations.to_string()),
        ("scaling_events", summary.scaling_events.to_string()),
    ]
}

/// Write `rows` as CSV: `# key: value` metadata lines, a header, then one
/// record per row with 17 significant digits.
pub fn write_csv(writer: impl Write, meta: &[(&str, String)], rows: &[TraceRow]) -> Result<()> {
    let mut writer = BufWriter::new(writer);
    for (key, value) in meta {
        writeln!(writer, "# {key}: {value}")?;
    }
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(TRACE_COLUMNS)?;
    for row in rows {
        csv.write_record(row.csv_fields())?;
    }
    csv.flush()?;
    Ok(())
}

/// Write `rows` as JSON lines, preceded by one `{"meta": {...}}` line.
pub fn write_jsonl(writer: impl Write, meta: &[(&str, String)], rows: &[TraceRow]) -> Result<()> {
    let mut writer = BufWriter::new(writer);
    let meta: serde_json::Map<String, serde_json::Value> = meta
        .iter()
        .map(|(k, v)| (k.to_string(), serde_json::Value::String(v.clone())))
        .collect();
    serde_json::to_writer(&mut writer, &serde_json::json!({ "meta": meta }))?;
    writeln!(writer)?;
    for row in rows {
        serde_json::to_writer(&mut writer, row)?;
        writeln!(writer)?;
    }
    writer.flush()?;
    Ok(())
}

fn write_trace(
    path: &Path,
    format: Format,
    meta: &[(&str, String)],
    rows: &[TraceRow],
) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let file = fs::File::create(path)?;
    match format {
        Format::Csv => write_csv(file, meta, rows),
        Format::Jsonl => write_jsonl(file, meta, rows),
    }
}

/// Run one experiment and write its trace file if `spec.out` is set.
///
/// Failure statuses are reported in the summary, not as errors; the trace
/// up to the failure is still written.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunReport> {
    let setup = build_preset(&spec.preset)?;
    let x0 = spec.x0.resolve(&setup);
    let optimum = setup.problem.optimum_near(&x0);
    let outcome = cg_solve(&*setup.problem, &*setup.manifold, x0, &spec.cg_config())?;
    let rows = trace_rows(&*setup.manifold, &outcome, optimum.as_ref());
    let summary = RunSummary {
        name: spec.name(),
        preset: spec.preset.clone(),
        variant: spec.variant.as_str(),
        restart_period: spec.restart_period,
        x0: spec.x0.to_string(),
        status: outcome.status.as_str(),
        message: outcome.status.message().map(str::to_string),
        iterations: outcome.iterations,
        final_f: outcome.final_state.f,
        final_grad_norm: outcome.final_state.grad_norm,
        final_dist: optimum.as_ref().map(|o| outcome.final_state.x.distance(o)),
        scaling_events: outcome.scaling_events,
        fallback_steps: outcome.fallback_steps,
        out: spec.out.clone(),
    };
    if let Some(path) = &spec.out {
        write_trace(path, spec.format, &metadata(spec, &summary), &rows)?;
    }
    Ok(RunReport {
        summary,
        rows,
        outcome,
    })
}

/// Run `base` once per restart period, in parallel. When `out_dir` is set,
/// each trace goes to `out_dir/<run name>.<ext>`.
pub fn run_restart_sweep(
    base: &ExperimentSpec,
    periods: &[Option<usize>],
    out_dir: Option<&Path>,
) -> Result<Vec<RunReport>> {
    build_preset(&base.preset)?;
    periods
        .par_iter()
        .map(|&period| {
            let mut spec = base.clone();
            spec.restart_period = period;
            spec.out =
                out_dir.map(|d| d.join(format!("{}.{}", spec.name(), spec.format.extension())));
            run_experiment(&spec)
        })
        .collect()
}

/// Status-to-exit-code mapping for a finished run.
pub fn exit_code_for(status: &Status) -> i32 {
    if status.is_failure() {
        3
    } else {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn x0_spec_round_trip() {
        for s in ["paper", "random:0", "random:18446744073709551615"] {
            assert_eq!(s.parse::<X0Spec>().unwrap().to_string(), s);
        }
        for bad in ["", "random", "random:x", "Paper"] {
            assert!(bad.parse::<X0Spec>().is_err());
        }
    }

    #[test]
    fn presets_build_and_start_feasible() {
        for name in PRESETS {
            let setup = build_preset(name).unwrap();
            crate::manifold::ensure_feasible(&*setup.manifold, &setup.reference_x0).unwrap();
            let x = X0Spec::Random(3).resolve(&setup);
            crate::manifold::ensure_feasible(&*setup.manifold, &x).unwrap();
        }
        assert!(matches!(build_preset("nope"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn peculiar_reference_value() {
        let setup = build_preset("peculiar-sphere-20").unwrap();
        assert!((setup.problem.value(&setup.reference_x0) - 10.5).abs() < 1e-13);
    }

    #[test]
    fn csv_fields_have_17_significant_digits() {
        let row = TraceRow {
            k: 3,
            f_k: 0.1,
            grad_norm: 1.0,
            alpha_k: None,
            beta_k: 0.0,
            ratio_k: Some(1.0 / 3.0),
            scaled_k: Some(true),
            x1_k: -0.5,
            dist_k: None,
            zoutendijk_partial: 2.0,
        };
        let f = row.csv_fields();
        assert_eq!(f[1], "1.0000000000000001e-1");
        assert_eq!(f[3], "");
        assert_eq!(f[5].parse::<f64>().unwrap(), 1.0 / 3.0);
        assert_eq!(f[6], "true");
    }

    #[test]
    fn spec_names() {
        let mut spec = ExperimentSpec::new("ortho-sphere-100", Variant::Scaled);
        assert_eq!(spec.name(), "ortho-sphere-100-scaled-fr");
        spec.restart_period = Some(19);
        assert_eq!(spec.name(), "ortho-sphere-100-scaled-fr-N19");
    }
}
