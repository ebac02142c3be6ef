//! Stage orchestration, oracle cross-checks and file output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::cell::{self, CellError, CellSolution, FlowFactors, QuadratureField};
use crate::coefficients::{self, CoefficientError, CoefficientGrid, CoefficientRoute, Phi2Variant};
use crate::config::{OutputFormat, Phi2Choice, RunConfig};
use crate::oracle::{self, BvpLoad};
use crate::params::{self, DerivedParams, FluidParams, ParamError};
use crate::reynolds::{self, MacroSolution, ReynoldsError};
use crate::roughness::RoughnessProfile;
use crate::sparse::LinearSolver;

/// Relative residual required of the cell solve.
pub const CELL_RESIDUAL_TOL: f64 = 1e-12;
/// Relative residual required of the Reynolds solve and the mass balance.
pub const REYNOLDS_RESIDUAL_TOL: f64 = 1e-10;
/// Largest admissible closed-form versus oracle discrepancy.
pub const ORACLE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Coeffs,
    Cell,
    Solve,
    OracleCheck,
    Full,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Self::Coeffs => "coeffs",
            Self::Cell => "cell",
            Self::Solve => "solve",
            Self::OracleCheck => "oracle-check",
            Self::Full => "full",
        }
    }

    fn depth(self) -> u8 {
        match self {
            Self::OracleCheck => 0,
            Self::Coeffs => 1,
            Self::Cell => 2,
            Self::Solve | Self::Full => 3,
        }
    }

    fn runs_oracle_check(self) -> bool {
        matches!(self, Self::OracleCheck | Self::Full)
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Coefficients(#[from] CoefficientError),
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error(transparent)]
    Reynolds(#[from] ReynoldsError),
    #[error("neither phi2 variant reproduces the oracle (A1 worst {a1:e}, A2 worst {a2:e})")]
    NoPhi2Variant { a1: f64, a2: f64 },
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Existence(ParamError),
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        source: StageError,
    },
    #[error("writing {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl RunError {
    /// 1 for I/O, 2 for invalid input, 3 for the existence gate, 4 for solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Io { .. } => 1,
            Self::Existence(ParamError::Existence { .. }) => 3,
            Self::Existence(_) => 2,
            Self::Stage { source, .. } => match source {
                StageError::Coefficients(CoefficientError::Param(ParamError::Existence {
                    ..
                })) => 3,
                StageError::Coefficients(CoefficientError::Param(_))
                | StageError::Coefficients(CoefficientError::InvalidHeight(_))
                | StageError::Reynolds(ReynoldsError::Domain(_))
                | StageError::Cell(CellError::GridTooSmall(_)) => 2,
                StageError::NoPhi2Variant { .. } => 5,
                _ => 4,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub stage: Stage,
    pub out_dir: PathBuf,
    pub phi2: Phi2Choice,
    pub solver: LinearSolver,
}

impl RunOptions {
    pub fn new(stage: Stage, config: &RunConfig) -> Self {
        Self {
            stage,
            out_dir: config
                .output_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("output")),
            phi2: config.phi2,
            solver: LinearSolver::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    #[serde(rename = "N2")]
    pub n2: f64,
    #[serde(rename = "Rc")]
    pub rc: f64,
    pub alpha: f64,
    pub beta: f64,
    pub h: f64,
}

impl SweepPoint {
    pub fn params(&self) -> FluidParams {
        FluidParams::new(self.n2, self.rc, self.alpha, self.beta, [0.0, 0.0])
    }

    fn admissible(&self) -> bool {
        let p = self.params();
        params::validate(&p, self.h).is_ok()
            && coefficients::route(self.h, &p) == CoefficientRoute::ClosedForm
    }
}

/// The grid `N2 x alpha x beta x h` at `Rc = 1` restricted to points that
/// pass the range and existence checks.
pub fn default_sweep() -> Vec<SweepPoint> {
    let mut out = Vec::new();
    for n2 in [0.1, 0.25, 0.5, 0.8] {
        for alpha in [0.5, 1.0, 2.0] {
            for beta in [0.5, 1.0, 2.0] {
                for h in [0.5, 1.0, 2.0] {
                    let p = SweepPoint {
                        n2,
                        rc: 1.0,
                        alpha,
                        beta,
                        h,
                    };
                    if p.admissible() {
                        out.push(p);
                    }
                }
            }
        }
    }
    out
}

/// Extra `alpha != 1` points used when the sweep cannot separate the two
/// `phi2` variants.
fn separating_sweep() -> Vec<SweepPoint> {
    [0.7, 1.5, 3.0]
        .into_iter()
        .map(|alpha| SweepPoint {
            n2: 0.25,
            rc: 1.0,
            alpha,
            beta: 1.0,
            h: 1.0,
        })
        .filter(SweepPoint::admissible)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointCheck {
    #[serde(flatten)]
    pub point: SweepPoint,
    pub oracle: [f64; 4],
    /// Max relative coefficient error of each `phi2` variant.
    pub coefficient_error_a1: f64,
    pub coefficient_error_a2: f64,
    /// Max nodal profile discrepancy under unit pressure and wall loads.
    pub profile_discrepancy: f64,
}

impl PointCheck {
    pub fn coefficient_error(&self, v: Phi2Variant) -> f64 {
        match v {
            Phi2Variant::A1 => self.coefficient_error_a1,
            Phi2Variant::A2 => self.coefficient_error_a2,
        }
    }
}

fn relative_error(closed: [f64; 4], oracle: [f64; 4]) -> f64 {
    closed
        .iter()
        .zip(oracle)
        .map(|(c, o)| {
            let d = (c - o).abs();
            if o != 0.0 {
                d / o.abs()
            } else {
                d
            }
        })
        .fold(0.0, f64::max)
}

/// Compares closed forms and the oracle at one point.
pub fn check_point(p: SweepPoint, m: usize) -> Result<PointCheck, CoefficientError> {
    let params = p.params();
    let oracle = oracle::oracle_coefficients(p.h, &params, m)?.as_array();
    let a1 = coefficients::closed_form_theta_phi(p.h, &params, Phi2Variant::A1)?;
    let a2 = coefficients::closed_form_theta_phi(p.h, &params, Phi2Variant::A2)?;
    let profile_discrepancy = [BvpLoad::pressure([1.0, 0.0]), BvpLoad::wall([1.0, 0.0])]
        .into_iter()
        .map(|load| oracle::oracle_profile_check(p.h, &params, load, m))
        .collect::<Result<Vec<f64>, _>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(PointCheck {
        point: p,
        oracle,
        coefficient_error_a1: relative_error(a1.as_array(), oracle),
        coefficient_error_a2: relative_error(a2.as_array(), oracle),
        profile_discrepancy,
    })
}

pub fn check_sweep(points: &[SweepPoint], m: usize) -> Result<Vec<PointCheck>, CoefficientError> {
    let results: Vec<_> = points.par_iter().map(|&p| check_point(p, m)).collect();
    results.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantVerdict {
    pub worst_error: f64,
    pub matches: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Adjudication {
    #[serde(rename = "A1")]
    pub a1: VariantVerdict,
    #[serde(rename = "A2")]
    pub a2: VariantVerdict,
    /// Points where the two variants give different `phi2`.
    pub separating_points: usize,
    pub selected: Option<Phi2Variant>,
    pub note: String,
}

/// Picks the `phi2` variant that reproduces the oracle on `checks`.
pub fn adjudicate(checks: &[PointCheck]) -> Adjudication {
    let verdict = |v: Phi2Variant| {
        let worst = checks
            .iter()
            .map(|c| c.coefficient_error(v))
            .fold(0.0, f64::max);
        VariantVerdict {
            worst_error: worst,
            matches: worst <= ORACLE_TOL,
        }
    };
    let (a1, a2) = (verdict(Phi2Variant::A1), verdict(Phi2Variant::A2));
    let separating_points = checks
        .iter()
        .filter(|c| c.coefficient_error_a1 != c.coefficient_error_a2)
        .count();
    let (selected, note) = match (a1.matches, a2.matches) {
        (true, false) => (
            Some(Phi2Variant::A1),
            "A1 matches the oracle, A2 does not".into(),
        ),
        (false, true) => (
            Some(Phi2Variant::A2),
            "A2 matches the oracle, A1 does not".into(),
        ),
        (true, true) => (
            Some(Phi2Variant::A2),
            "both variants match on every point; they are indistinguishable here".into(),
        ),
        (false, false) => (None, "neither variant matches the oracle".into()),
    };
    Adjudication {
        a1,
        a2,
        separating_points,
        selected,
        note,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    #[serde(rename = "M")]
    pub m: usize,
    pub tolerance: f64,
    pub variant: Phi2Variant,
    pub max_coefficient_error: f64,
    pub max_profile_discrepancy: f64,
    pub passed: bool,
    pub adjudication: Adjudication,
    pub points: Vec<PointCheck>,
}

/// Runs the sweep, extending it once when the variants cannot be told apart.
pub fn oracle_report(
    extra: &[SweepPoint],
    m: usize,
    fixed: Option<Phi2Variant>,
) -> Result<OracleReport, CoefficientError> {
    let mut points = default_sweep();
    points.extend_from_slice(extra);
    let mut checks = check_sweep(&points, m)?;
    let mut adjudication = adjudicate(&checks);
    if adjudication.separating_points == 0 {
        checks.extend(check_sweep(&separating_sweep(), m)?);
        adjudication = adjudicate(&checks);
    }
    let variant = fixed.or(adjudication.selected).unwrap_or_default();
    let max_coefficient_error = checks
        .iter()
        .map(|c| c.coefficient_error(variant))
        .fold(0.0, f64::max);
    let max_profile_discrepancy = checks
        .iter()
        .map(|c| c.profile_discrepancy)
        .fold(0.0, f64::max);
    Ok(OracleReport {
        m,
        tolerance: ORACLE_TOL,
        variant,
        max_coefficient_error,
        max_profile_discrepancy,
        passed: max_coefficient_error <= ORACLE_TOL && max_profile_discrepancy <= ORACLE_TOL,
        adjudication,
        points: checks,
    })
}

/// The configured fluid at the extreme thicknesses of the roughness.
fn config_points(fluid: &FluidParams, roughness: &RoughnessProfile) -> Vec<SweepPoint> {
    let mut hs = vec![roughness.h_min(), roughness.h_max()];
    hs.dedup();
    hs.into_iter()
        .map(|h| SweepPoint {
            n2: fluid.n2,
            rc: fluid.rc,
            alpha: fluid.alpha,
            beta: fluid.beta,
            h,
        })
        .filter(SweepPoint::admissible)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivedReport {
    pub k: f64,
    pub gamma_alpha: Option<f64>,
    pub gamma2: f64,
    pub bound: f64,
    pub existence_margin: f64,
    pub h_min: f64,
    pub h_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Phi2Report {
    pub variant: Phi2Variant,
    /// `flag` when fixed by the user, `oracle` when adjudicated.
    pub source: &'static str,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Residuals {
    pub cell: Option<f64>,
    pub cell_mean: Option<f64>,
    pub reynolds: Option<f64>,
    pub mass: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSummary {
    pub points: usize,
    pub max_coefficient_error: f64,
    pub max_profile_discrepancy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub stage: Stage,
    pub derived: DerivedReport,
    pub phi2: Option<Phi2Report>,
    pub flow_factors: Option<FlowFactorsOut>,
    pub residuals: Residuals,
    pub oracle: Option<OracleSummary>,
    pub breaches: Vec<String>,
    pub passed: bool,
    /// Wall-clock seconds per stage; kept out of the JSON file so outputs
    /// stay byte-identical across runs.
    #[serde(skip)]
    pub timings: Vec<(&'static str, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowFactorsOut {
    #[serde(rename = "K1")]
    pub k1: [f64; 4],
    #[serde(rename = "L1")]
    pub l1: f64,
    #[serde(rename = "K2")]
    pub k2: [f64; 4],
    #[serde(rename = "L2")]
    pub l2: f64,
    pub symmetry_defect: f64,
}

impl From<&FlowFactors> for FlowFactorsOut {
    fn from(f: &FlowFactors) -> Self {
        Self {
            k1: [f.k1[0][0], f.k1[0][1], f.k1[1][0], f.k1[1][1]],
            l1: f.l1,
            k2: [f.k2[0][0], f.k2[0][1], f.k2[1][0], f.k2[1][1]],
            l2: f.l2,
            symmetry_defect: f.symmetry_defect(),
        }
    }
}

/// Everything computed by a run, for library callers.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: RunReport,
    pub coefficients: Option<CoefficientGrid>,
    pub cell: Option<CellSolution>,
    pub factors: Option<FlowFactors>,
    pub macro_solution: Option<MacroSolution>,
    pub oracle: Option<OracleReport>,
}

struct Writer<'a> {
    dir: &'a Path,
    config: &'a RunConfig,
}

impl Writer<'_> {
    fn write(&self, name: &str, format: OutputFormat, body: &str) -> Result<(), RunError> {
        if !self.config.writes(format) {
            return Ok(());
        }
        self.write_always(name, body)
    }

    fn write_always(&self, name: &str, body: &str) -> Result<(), RunError> {
        let path = self.dir.join(name);
        fs::write(&path, body).map_err(|source| RunError::Io { path, source })
    }

    fn json(&self, name: &str, value: &impl Serialize) -> Result<(), RunError> {
        self.write(name, OutputFormat::Json, &to_json(value))
    }
}

fn to_json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

fn stage_err(stage: Stage) -> impl Fn(StageError) -> RunError {
    move |source| RunError::Stage {
        stage: stage.name(),
        source,
    }
}

pub fn coefficients_csv(grid: &CoefficientGrid) -> String {
    let mut s = format!(
        "# node-centred samples on the periodic cell, z = -1/2 + (i, j) / {}; row-major, z2 slow\n\
         z1,z2,h,theta1,theta2,phi1,phi2\n",
        grid.n
    );
    for ((z, h), c) in grid.nodes.iter().zip(&grid.h).zip(&grid.samples) {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            z[0], z[1], h, c.theta1, c.theta2, c.phi1, c.phi2
        );
    }
    s
}

pub fn correctors_csv(cell: &CellSolution) -> String {
    let n = cell.n;
    let mut s = format!(
        "# nodal correctors on the periodic cell, z = -1/2 + (i, j) / {n}; row-major, z2 slow; zero mean\n\
         z1,z2,q1,q2\n"
    );
    for k in 0..n * n {
        let z1 = crate::roughness::cell_node(k % n, n);
        let z2 = crate::roughness::cell_node(k / n, n);
        let _ = writeln!(s, "{},{},{},{}", z1, z2, cell.q1[k], cell.q2[k]);
    }
    s
}

pub fn pressure_csv(sol: &MacroSolution) -> String {
    let d = &sol.domain;
    let mut s = format!(
        "# nodes x = (i Lx / {}, j Ly / {}); row-major, x2 slow; zero-mean p; \
         U = -K1 grad p + L1 s, W = K2 (grad p)^perp + L2 s^perp\n\
         x1,x2,p,U1,U2,W1,W2\n",
        d.mx, d.my
    );
    for k in 0..d.node_count() {
        let x = d.node(k);
        let (u, w) = (sol.u[k], sol.w[k]);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            x[0], x[1], sol.p[k], u[0], u[1], w[0], w[1]
        );
    }
    s
}

fn timed<T>(
    timings: &mut Vec<(&'static str, f64)>,
    name: &'static str,
    f: impl FnOnce() -> T,
) -> T {
    let start = Instant::now();
    let out = f();
    let secs = start.elapsed().as_secs_f64();
    log::info!("{name}: {secs:.3} s");
    timings.push((name, secs));
    out
}

/// Gates on the existence condition, then runs the requested stages and
/// writes their outputs. Files of completed stages are kept when a later
/// stage fails.
pub fn run(config: &RunConfig, options: &RunOptions) -> Result<RunArtifacts, RunError> {
    let fluid = config.fluid;
    let derived: DerivedParams =
        params::validate(&fluid, config.roughness.h_max()).map_err(RunError::Existence)?;
    let out = &options.out_dir;
    fs::create_dir_all(out).map_err(|source| RunError::Io {
        path: out.clone(),
        source,
    })?;
    let writer = Writer { dir: out, config };
    let stage = options.stage;
    let mut timings = Vec::new();
    let mut breaches = Vec::new();
    let mut residuals = Residuals::default();

    let need_adjudication = options.phi2 == Phi2Choice::Auto && stage.depth() > 0;
    let mut oracle = None;
    if stage.runs_oracle_check() || need_adjudication {
        let fail = stage_err(if stage.runs_oracle_check() {
            Stage::OracleCheck
        } else {
            stage
        });
        let extra = config_points(&fluid, &config.roughness);
        let report = timed(&mut timings, "oracle-check", || {
            oracle_report(&extra, config.oracle_m, options.phi2.fixed())
        })
        .map_err(|e| fail(e.into()))?;
        if stage.runs_oracle_check() {
            writer.json("oracle_report.json", &report)?;
            if !report.passed {
                breaches.push(format!(
                    "oracle discrepancy {:e} / profile {:e} exceeds {ORACLE_TOL:e}",
                    report.max_coefficient_error, report.max_profile_discrepancy
                ));
            }
        }
        if options.phi2 == Phi2Choice::Auto && report.adjudication.selected.is_none() {
            return Err(fail(StageError::NoPhi2Variant {
                a1: report.adjudication.a1.worst_error,
                a2: report.adjudication.a2.worst_error,
            }));
        }
        oracle = Some(report);
    }

    let phi2 = if stage.depth() > 0 || oracle.is_some() {
        Some(match options.phi2.fixed() {
            Some(v) => Phi2Report {
                variant: v,
                source: "flag",
                note: None,
            },
            None => {
                let adj = &oracle.as_ref().expect("adjudicated above").adjudication;
                Phi2Report {
                    variant: adj.selected.expect("checked above"),
                    source: "oracle",
                    note: Some(adj.note.clone()),
                }
            }
        })
    } else {
        None
    };
    let variant = phi2.as_ref().map_or(Phi2Variant::default(), |p| p.variant);

    let mut grid = None;
    let mut cell_solution = None;
    let mut factors = None;
    let mut macro_solution = None;

    if stage.depth() >= 1 {
        let fail = stage_err(Stage::Coeffs);
        let g = timed(&mut timings, "coeffs", || {
            coefficients::sample_field(&config.roughness, &fluid, config.cell_n, variant)
        })
        .map_err(|e| fail(e.into()))?;
        writer.write("coefficients.csv", OutputFormat::Csv, &coefficients_csv(&g))?;
        grid = Some(g);
    }

    if stage.depth() >= 2 {
        let fail = stage_err(Stage::Cell);
        let (field, sol) = timed(&mut timings, "cell", || {
            let field =
                QuadratureField::from_profile(&config.roughness, &fluid, config.cell_n, variant)?;
            let sol = cell::solve_correctors(&field, fluid.s, options.solver)?;
            Ok::<_, CellError>((field, sol))
        })
        .map_err(|e| fail(e.into()))?;
        let f = cell::flow_factors(&sol, &field);
        let [m1, m2] = sol.means();
        residuals.cell = Some(sol.residual);
        residuals.cell_mean = Some(m1.abs().max(m2.abs()));
        if sol.residual > CELL_RESIDUAL_TOL {
            breaches.push(format!(
                "cell residual {:e} exceeds {CELL_RESIDUAL_TOL:e}",
                sol.residual
            ));
        }
        if f.symmetry_defect() > 0.0 && fluid.s != [0.0, 0.0] {
            log::info!(
                "K1 symmetry defect {:e} (wall velocity enters the cell problem)",
                f.symmetry_defect()
            );
        }
        writer.write("correctors.csv", OutputFormat::Csv, &correctors_csv(&sol))?;
        writer.json("flow_factors.json", &FlowFactorsOut::from(&f))?;
        cell_solution = Some(sol);
        factors = Some(f);
    }

    if stage.depth() >= 3 {
        let fail = stage_err(Stage::Solve);
        let f = factors.as_ref().expect("cell stage ran");
        let sol = timed(&mut timings, "solve", || {
            reynolds::solve_pressure(f, &config.domain, fluid.s, options.solver)
        })
        .map_err(|e| fail(e.into()))?;
        let mass = reynolds::mass_residual(&sol);
        residuals.reynolds = Some(sol.residual);
        residuals.mass = Some(mass);
        for (what, v) in [("Reynolds residual", sol.residual), ("mass residual", mass)] {
            if v > REYNOLDS_RESIDUAL_TOL {
                breaches.push(format!("{what} {v:e} exceeds {REYNOLDS_RESIDUAL_TOL:e}"));
            }
        }
        writer.write("pressure.csv", OutputFormat::Csv, &pressure_csv(&sol))?;
        macro_solution = Some(sol);
    }

    let report = RunReport {
        stage,
        derived: DerivedReport {
            k: derived.k,
            gamma_alpha: derived.gamma_alpha,
            gamma2: derived.gamma2,
            bound: derived.bound,
            existence_margin: derived.existence_margin,
            h_min: config.roughness.h_min(),
            h_max: derived.h_max,
        },
        phi2,
        flow_factors: factors.as_ref().map(FlowFactorsOut::from),
        residuals,
        oracle: oracle
            .as_ref()
            .filter(|_| stage.runs_oracle_check())
            .map(|o| OracleSummary {
                points: o.points.len(),
                max_coefficient_error: o.max_coefficient_error,
                max_profile_discrepancy: o.max_profile_discrepancy,
            }),
        passed: breaches.is_empty(),
        breaches,
        timings,
    };
    writer.write_always("run_report.json", &to_json(&report))?;
    Ok(RunArtifacts {
        report,
        coefficients: grid,
        cell: cell_solution,
        factors,
        macro_solution,
        oracle,
    })
}

/// JSON summary of an error, written next to partial outputs.
pub fn error_report(stage: Stage, err: &RunError) -> String {
    to_json(&json!({
        "stage": stage.name(),
        "error": err.to_string(),
        "exit_code": err.exit_code(),
    }))
}
