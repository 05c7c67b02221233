//! The `solve`, `verify` and `simulate` pipelines and their output files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use qsd_core::coefficients::CoefficientModel;
use qsd_core::eigen::QsdSolution;
use qsd_core::estimate::{
    default_burn_in, ergodic_run, exit_rate_fit, quadrature_cost_y, quadrature_cost_z,
    reference_measure, stationarity_distance, survival_curve, SurvivalCurve,
};
use qsd_core::hjb::{
    drift_field_y, drift_field_z_weighted, hjb_residual_adjoint, hjb_residual_generator,
    log_transform, ControlledDynamics,
};
use qsd_core::simulate::{
    path_seed, run_ensemble, CellMeasure, CellSampler, SimConfig, StartDistribution, Uncontrolled,
};
use qsd_core::Grid;
use serde::Serialize;

use crate::config::{ConfigError, ProblemConfig};
use crate::suite::{assembly_warnings, CheckResult, LambdaRoute, Suite};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Failures of a command, mapped to the process exit code.
#[derive(Debug)]
pub enum CommandError {
    Config(ConfigError),
    Run(String),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Run(_) => 1,
        }
    }
}

impl std::fmt::Display for CommandError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(e) => write!(f, "config error: {e}"),
            Self::Run(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<ConfigError> for CommandError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e)
    }
}

impl From<qsd_core::Error> for CommandError {
    fn from(e: qsd_core::Error) -> Self {
        Self::Run(e.to_string())
    }
}

impl From<std::io::Error> for CommandError {
    fn from(e: std::io::Error) -> Self {
        Self::Run(e.to_string())
    }
}

type CmdResult<T> = std::result::Result<T, CommandError>;

/// Which process `simulate` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimKind {
    Killed,
    Y,
    Z,
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub version: &'static str,
    pub config_hash: String,
    pub seed: u64,
    pub model: String,
    pub weight: String,
    pub grid: Vec<usize>,
}

impl Provenance {
    fn new(config: &ProblemConfig) -> Self {
        Self {
            version: VERSION,
            config_hash: config.hash(),
            seed: config.sim.seed,
            model: config.model.clone(),
            weight: config.weight.clone(),
            grid: config.grid.clone(),
        }
    }

    fn csv_comment(&self) -> String {
        format!("# config_hash={} seed={}\n", self.config_hash, self.seed)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Normalizations {
    pub phi_mass: f64,
    pub psi_phi_mass: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Residuals {
    pub eigen_generator: f64,
    pub eigen_adjoint: f64,
    /// Maximal HJB residuals over nodes at distance at least `3h` from the
    /// boundary.
    pub hjb_generator: f64,
    pub hjb_adjoint: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub provenance: Provenance,
    pub lambda: f64,
    pub lambda_adjoint: f64,
    pub lambda_allowance: f64,
    pub iterations: [usize; 2],
    pub residuals: Residuals,
    pub normalizations: Normalizations,
    pub peclet: f64,
    pub coefficient_scale: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub provenance: Provenance,
    pub lambda_routes: Vec<LambdaRoute>,
    pub normalizations: Option<Normalizations>,
    pub residuals: Option<Residuals>,
    pub peclet: f64,
    pub warnings: Vec<String>,
    pub checks: Vec<CheckResult>,
    pub all_passed: bool,
}

fn output_dir(config: &ProblemConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CommandError::Run(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

fn coord_header(dim: usize) -> Vec<String> {
    (0..dim).map(|i| format!("x{i}")).collect()
}

fn residuals(config: &ProblemConfig, sol: &QsdSolution) -> CmdResult<Residuals> {
    let model = config.gallery_model();
    let weight = config.gallery_weight();
    let grid = &sol.grid;
    let delta = 3.0 * grid.max_spacing() * (1.0 - 1e-9);
    let psi = log_transform(grid, &sol.psi)?;
    let phi_tilde = log_transform(grid, &sol.phi_tilde)?;
    Ok(Residuals {
        eigen_generator: sol.generator_residual,
        eigen_adjoint: sol.adjoint_residual,
        hjb_generator: hjb_residual_generator(&psi, sol.lambda, &model).max_at_distance(delta),
        hjb_adjoint: hjb_residual_adjoint(&phi_tilde, sol.lambda, &model, &weight)
            .max_at_distance(delta),
    })
}

fn solve_base(config: &ProblemConfig) -> CmdResult<QsdSolution> {
    let weight = config.gallery_weight();
    Ok(qsd_core::eigen::solve_qsd(
        &config.gallery_model(),
        &weight,
        weight.name(),
        &config.build_grid(),
        config.tol,
        config.max_iter,
    )?)
}

/// Solves the eigen problem and writes `fields.csv` and `summary.json`.
pub fn cmd_solve(config: &ProblemConfig, out: Option<&Path>) -> CmdResult<SolveSummary> {
    let dir = output_dir(config, out);
    fs::create_dir_all(&dir)?;
    let prov = Provenance::new(config);
    let model = config.gallery_model();
    let weight = config.gallery_weight();
    let sol = solve_base(config)?;
    let grid = &sol.grid;
    let dim = grid.dim();
    let psi = log_transform(grid, &sol.psi)?;
    let phi_tilde = log_transform(grid, &sol.phi_tilde)?;
    let y = drift_field_y(&psi, &model);
    let z = drift_field_z_weighted(&phi_tilde, &model, &weight);

    let mut csv = prov.csv_comment();
    let mut header = coord_header(dim);
    header.extend(["psi", "phi", "phi_tilde", "Psi", "Phi_tilde", "mu"].map(String::from));
    header.extend((0..dim).map(|i| format!("y_drift{i}")));
    header.extend((0..dim).map(|i| format!("z_drift{i}")));
    csv.push_str(&header.join(","));
    csv.push('\n');
    for n in 0..grid.node_count() {
        let x = grid.node_coords(n);
        let mut row: Vec<String> = x[..dim].iter().map(|v| float(*v)).collect();
        for v in [
            sol.psi[n],
            sol.phi[n],
            sol.phi_tilde[n],
            psi.values()[n],
            phi_tilde.values()[n],
            sol.mu[n],
        ] {
            row.push(float(v));
        }
        row.extend(y[n][..dim].iter().map(|v| float(*v)));
        row.extend(z[n][..dim].iter().map(|v| float(*v)));
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    fs::write(dir.join("fields.csv"), csv)?;

    let summary = SolveSummary {
        provenance: prov,
        lambda: sol.lambda,
        lambda_adjoint: sol.lambda_adjoint,
        lambda_allowance: sol.allowance,
        iterations: [sol.generator_iterations, sol.adjoint_iterations],
        residuals: residuals(config, &sol)?,
        normalizations: Normalizations {
            phi_mass: sol.phi_mass(),
            psi_phi_mass: sol.psi_phi_mass(),
        },
        peclet: sol.peclet,
        coefficient_scale: sol.coefficient_scale,
        warnings: sol.warnings.clone(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Runs the full check suite and writes `report.json`. Check failures are
/// reported in the returned report, not as an error.
pub fn cmd_verify(config: &ProblemConfig, out: Option<&Path>) -> CmdResult<RunReport> {
    cmd_verify_with(config, out, |_| {})
}

/// [`cmd_verify`] with a callback invoked after each check.
pub fn cmd_verify_with<F: FnMut(&CheckResult)>(
    config: &ProblemConfig,
    out: Option<&Path>,
    mut progress: F,
) -> CmdResult<RunReport> {
    let dir = output_dir(config, out);
    fs::create_dir_all(&dir)?;
    let (peclet, mut warnings) = assembly_warnings(config);
    let suite = Suite::new(config);
    let mut checks = Vec::with_capacity(13);
    for id in 1..=13 {
        let r = suite.check(id);
        progress(&r);
        checks.push(r);
    }
    let (normalizations, residuals) = match suite.solution() {
        Ok(sol) => (
            Some(Normalizations {
                phi_mass: sol.phi_mass(),
                psi_phi_mass: sol.psi_phi_mass(),
            }),
            residuals(config, sol).ok(),
        ),
        Err(e) => {
            warnings.push(e);
            (None, None)
        }
    };
    let report = RunReport {
        provenance: Provenance::new(config),
        lambda_routes: suite.lambda_routes_seen(),
        normalizations,
        residuals,
        peclet,
        warnings,
        all_passed: checks.iter().all(CheckResult::passed),
        checks,
    };
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

/// What `simulate` wrote, for printing.
#[derive(Debug, Clone)]
pub struct SimulateSummary {
    pub files: Vec<PathBuf>,
    pub lines: Vec<String>,
}

fn histogram_csv(
    prov: &Provenance,
    hist: &CellMeasure,
    reference: &CellMeasure,
    label: &str,
) -> String {
    let bins = &hist.bins;
    let dim = bins.dim();
    let mut csv = prov.csv_comment();
    let mut header = coord_header(dim);
    header.push("density".into());
    header.push(format!("{label}_density"));
    csv.push_str(&header.join(","));
    csv.push('\n');
    for c in 0..bins.cell_count() {
        let x = bins.cell_center(c);
        let mut row: Vec<String> = x[..dim].iter().map(|v| float(*v)).collect();
        row.push(float(hist.density[c]));
        row.push(float(reference.density[c]));
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    csv
}

fn survival_csv(prov: &Provenance, curve: &SurvivalCurve, lambda: f64) -> String {
    let mut csv = prov.csv_comment();
    csv.push_str("t,survival,std_error,exp_minus_lambda_t\n");
    for ((t, p), se) in curve
        .times
        .iter()
        .zip(&curve.survival)
        .zip(&curve.std_error)
    {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            float(*t),
            float(*p),
            float(*se),
            float((-lambda * t).exp())
        );
    }
    csv
}

fn sim_config(config: &ProblemConfig, tag: u64, t_max: f64, kill: bool) -> SimConfig {
    SimConfig {
        dt_base: config.sim.dt,
        t_max,
        master_seed: path_seed(config.sim.seed, tag),
        boundary_safety: config.sim.boundary_safety,
        kill_on_exit: kill,
        exit_bridge: config.sim.exit_bridge,
        ..SimConfig::default()
    }
}

/// Runs an ensemble and writes its statistics. The killed process starts
/// from the quasistationary distribution and yields `survival.csv` and the
/// survivor `histogram.csv`; `Y` and `Z` run `n_paths` independent long
/// paths and yield the occupation `histogram.csv` and `costs.csv`.
pub fn cmd_simulate(
    config: &ProblemConfig,
    kind: SimKind,
    n_paths: Option<usize>,
    out: Option<&Path>,
) -> CmdResult<SimulateSummary> {
    let dir = output_dir(config, out);
    fs::create_dir_all(&dir)?;
    let prov = Provenance::new(config);
    let model = config.gallery_model();
    let weight = config.gallery_weight();
    let sol = solve_base(config)?;
    let grid: &Grid = &sol.grid;
    let domain = config.domain();
    let bins = config.grid_with(config.sim.bins)?;
    let mut files = Vec::new();
    let mut lines = Vec::new();
    let dyn_model: &dyn CoefficientModel = &model;

    match kind {
        SimKind::Killed => {
            let n = n_paths.unwrap_or(config.sim.paths);
            let t_end = config.estimate.fit_t1.unwrap_or_else(|| {
                ((n as f64 / 100.0).ln() / sol.lambda).max(10.0 * config.sim.dt)
            });
            let mut cfg = sim_config(config, 4, t_end, true);
            cfg.snapshot_times = vec![t_end];
            let density = sol.cell_density(&sol.phi, grid)?;
            let masses: Vec<f64> = density
                .iter()
                .map(|d| d.max(0.0) * grid.cell_volume())
                .collect();
            let start = StartDistribution::Cells(CellSampler::new(grid, &masses)?);
            let ens = run_ensemble(&Uncontrolled(dyn_model), &domain, &start, n, &cfg)?;
            let times: Vec<f64> = (0..=200).map(|k| t_end * k as f64 / 200.0).collect();
            let curve = survival_curve(&ens, &times);
            fs::write(
                dir.join("survival.csv"),
                survival_csv(&prov, &curve, sol.lambda),
            )?;
            files.push(dir.join("survival.csv"));
            match exit_rate_fit(&curve, config.estimate.fit_t0, Some(t_end)) {
                Ok(fit) => lines.push(format!(
                    "exit rate fit: lambda = {:.6} +/- {:.6} (eigen {:.6}), R^2 = {:.6}",
                    fit.lambda, fit.std_error, sol.lambda, fit.r_squared
                )),
                Err(e) => lines.push(format!("exit rate fit unavailable: {e}")),
            }
            let points = ens.snapshot_positions(0);
            if points.is_empty() {
                lines.push(format!(
                    "no survivors at t = {t_end}; histogram.csv not written"
                ));
            } else {
                let hist = CellMeasure::from_points(&bins, &points)?;
                let reference = reference_measure(&sol, &sol.phi, &bins)?;
                let l1 = stationarity_distance(&hist, &reference)?;
                fs::write(
                    dir.join("histogram.csv"),
                    histogram_csv(&prov, &hist, &reference, "phi"),
                )?;
                files.push(dir.join("histogram.csv"));
                lines.push(format!(
                    "survivors at t = {t_end:.4}: {}, L1 distance to phi = {l1:.5}",
                    points.len()
                ));
            }
        }
        SimKind::Y | SimKind::Z => {
            let n = n_paths.unwrap_or(1);
            let horizon = config.sim.horizon;
            let burn_in = config.estimate.burn_in.unwrap_or(default_burn_in(horizon));
            let (dynamics, quadrature) = if kind == SimKind::Y {
                let psi = log_transform(grid, &sol.psi)?;
                let q = quadrature_cost_y(&sol, &psi, &model);
                (ControlledDynamics::y(dyn_model, &weight, psi), q)
            } else {
                let phi_tilde = log_transform(grid, &sol.phi_tilde)?;
                let q = quadrature_cost_z(&sol, &phi_tilde, &model, &weight);
                (ControlledDynamics::z(dyn_model, &weight, phi_tilde), q)
            };
            let mut density = vec![0.0; bins.cell_count()];
            let mut means = Vec::with_capacity(n);
            let mut var_sum = 0.0;
            let mut violations = 0;
            for k in 0..n {
                let cfg = sim_config(config, 700 + k as u64, horizon, false);
                let run = ergodic_run(&dynamics, &domain, &domain.center(), &cfg, &bins, burn_in)?;
                density
                    .iter_mut()
                    .zip(&run.occupation.density)
                    .for_each(|(d, v)| *d += v / n as f64);
                means.push(run.cost.mean);
                var_sum += run.cost.std_error.powi(2);
                violations += run.violations;
            }
            let hist = CellMeasure {
                bins: bins.clone(),
                density,
            };
            let reference = reference_measure(&sol, &sol.mu, &bins)?;
            let l1 = stationarity_distance(&hist, &reference)?;
            fs::write(
                dir.join("histogram.csv"),
                histogram_csv(&prov, &hist, &reference, "mu"),
            )?;
            files.push(dir.join("histogram.csv"));
            let mean = means.iter().sum::<f64>() / n as f64;
            let se = var_sum.sqrt() / n as f64;
            let mut csv = prov.csv_comment();
            csv.push_str("route,value,std_error\n");
            let label = if kind == SimKind::Y { "y" } else { "z" };
            let _ = writeln!(csv, "eigen,{},{}", float(sol.lambda), float(0.0));
            let _ = writeln!(
                csv,
                "quadrature_{label},{},{}",
                float(quadrature),
                float(0.0)
            );
            let _ = writeln!(csv, "ergodic_{label},{},{}", float(mean), float(se));
            fs::write(dir.join("costs.csv"), csv)?;
            files.push(dir.join("costs.csv"));
            lines.push(format!("occupation L1 distance to mu = {l1:.5}"));
            lines.push(format!(
                "ergodic cost = {mean:.6} +/- {se:.6}, quadrature = {quadrature:.6}, eigen lambda = {:.6}",
                sol.lambda
            ));
            lines.push(format!("boundary violations: {violations}"));
        }
    }
    Ok(SimulateSummary { files, lines })
}
