//! The invariant suite run by `verify`: thirteen checks confronting the eigen
//! solution, the HJB objects and Monte Carlo simulation.

use std::cell::OnceCell;
use std::collections::BTreeMap;
use std::f64::consts::PI;

use qsd_core::coefficients::{CoefficientModel, DensityWeight, GalleryModel, GalleryWeight};
use qsd_core::discretize::{assemble_adjoint, assemble_generator};
use qsd_core::eigen::{
    principal_eigenpair, second_eigenvalue_estimate, solve_qsd, unit_mass, QsdSolution,
};
use qsd_core::estimate::{
    default_burn_in, default_test_functions, duality_check, ergodic_run, exit_rate_fit,
    psi_from_survival, qsd_histogram, quadrature_cost_y, quadrature_cost_z, reference_measure,
    shape_correlation, stationarity_distance, survival_curve, transient_time, ErgodicRun, RateFit,
};
use qsd_core::hjb::{
    drift_field_y, drift_field_z, drift_field_z_weighted, hjb_residual_adjoint,
    hjb_residual_generator, log_transform, max_scaled_deviation, ControlledDynamics,
};
use qsd_core::simulate::{
    path_seed, run_ensemble, CellSampler, SimConfig, StartDistribution, Uncontrolled,
};
use qsd_core::{BoxDomain, Grid, Point, MAX_DIM};
use serde::Serialize;

use crate::config::ProblemConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    /// Not applicable to the configured model (no closed form).
    Skip,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub id: u32,
    pub name: &'static str,
    pub verdict: Verdict,
    pub values: BTreeMap<String, f64>,
    pub detail: String,
}

impl CheckResult {
    fn new(id: u32, name: &'static str) -> Self {
        Self {
            id,
            name,
            verdict: Verdict::Pass,
            values: BTreeMap::new(),
            detail: String::new(),
        }
    }

    fn value(&mut self, key: &str, v: f64) -> &mut Self {
        self.values.insert(key.to_string(), v);
        self
    }

    fn require(&mut self, ok: bool, what: impl Into<String>) -> &mut Self {
        if !ok {
            self.verdict = Verdict::Fail;
            if !self.detail.is_empty() {
                self.detail.push_str("; ");
            }
            self.detail.push_str(&what.into());
        }
        self
    }

    fn failed(id: u32, name: &'static str, why: impl Into<String>) -> Self {
        let mut r = Self::new(id, name);
        r.verdict = Verdict::Fail;
        r.detail = why.into();
        r
    }

    fn skipped(id: u32, name: &'static str, why: impl Into<String>) -> Self {
        let mut r = Self::new(id, name);
        r.verdict = Verdict::Skip;
        r.detail = why.into();
        r
    }

    pub fn passed(&self) -> bool {
        self.verdict != Verdict::Fail
    }
}

/// An estimate of the eigenvalue by one route.
#[derive(Debug, Clone, Serialize)]
pub struct LambdaRoute {
    pub route: String,
    pub value: f64,
    pub std_error: f64,
}

pub const CHECK_NAMES: [&str; 13] = [
    "eigenvalue_closed_form",
    "y_drift_closed_form",
    "hjb_residual_order",
    "survival_from_qsd",
    "psi_from_survival",
    "qsd_by_conditioning",
    "invariant_measure",
    "lambda_routes_agree",
    "z_drift_weight_invariance",
    "generator_duality",
    "controlled_non_exit",
    "two_dimensional_sanity",
    "determinism",
];

type Outcome = std::result::Result<CheckResult, String>;

/// Solution objects shared between checks.
struct Base {
    sol: QsdSolution,
    gap: f64,
}

/// Runs the checks for one configuration, caching the eigen solutions and
/// the long controlled runs that several checks share.
pub struct Suite<'a> {
    config: &'a ProblemConfig,
    model: GalleryModel,
    domain: BoxDomain,
    grid: Grid,
    base: OnceCell<std::result::Result<Base, String>>,
    exp_solution: OnceCell<std::result::Result<QsdSolution, String>>,
    runs: OnceCell<std::result::Result<[ErgodicRun; 3], String>>,
    routes: std::cell::RefCell<BTreeMap<String, LambdaRoute>>,
    rate_fit: OnceCell<std::result::Result<RateFit, String>>,
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

impl<'a> Suite<'a> {
    pub fn new(config: &'a ProblemConfig) -> Self {
        Self {
            config,
            model: config.gallery_model(),
            domain: config.domain(),
            grid: config.build_grid(),
            base: OnceCell::new(),
            exp_solution: OnceCell::new(),
            runs: OnceCell::new(),
            routes: Default::default(),
            rate_fit: OnceCell::new(),
        }
    }

    /// Runs check `id` (1 to 13).
    pub fn check(&self, id: u32) -> CheckResult {
        let name = CHECK_NAMES[(id - 1) as usize];
        let outcome = match id {
            1 => self.eigenvalue(),
            2 => self.y_drift(),
            3 => self.hjb_order(),
            4 => self.survival(),
            5 => self.psi_reconstruction(),
            6 => self.conditioning(),
            7 => self.invariant_measure(),
            8 => self.lambda_routes(),
            9 => self.weight_invariance(),
            10 => self.duality(),
            11 => self.non_exit(),
            12 => self.two_dimensional(),
            13 => self.determinism(),
            _ => Err(format!("no check {id}")),
        };
        outcome.unwrap_or_else(|why| CheckResult::failed(id, name, why))
    }

    pub fn run_all(&self) -> Vec<CheckResult> {
        (1..=13).map(|id| self.check(id)).collect()
    }

    /// Eigenvalue estimates gathered so far, by route name.
    pub fn lambda_routes_seen(&self) -> Vec<LambdaRoute> {
        self.routes.borrow().values().cloned().collect()
    }

    /// The base solution with the configured weight, if it could be computed.
    pub fn solution(&self) -> std::result::Result<&QsdSolution, String> {
        self.base().map(|b| &b.sol)
    }

    fn record(&self, route: &str, value: f64, std_error: f64) {
        self.routes.borrow_mut().insert(
            route.to_string(),
            LambdaRoute {
                route: route.to_string(),
                value,
                std_error,
            },
        );
    }

    fn h(&self) -> f64 {
        self.grid.max_spacing()
    }

    fn base(&self) -> std::result::Result<&Base, String> {
        self.base
            .get_or_init(|| {
                let weight = self.config.gallery_weight();
                let sol = solve_qsd(
                    &self.model,
                    &weight,
                    weight.name(),
                    &self.grid,
                    self.config.tol,
                    self.config.max_iter,
                )
                .map_err(|e| format!("eigen solve failed: {e}"))?;
                let op = assemble_generator(&self.model, &self.grid).map_err(err)?;
                let pair =
                    principal_eigenpair(&op, self.config.tol, self.config.max_iter).map_err(err)?;
                let second = second_eigenvalue_estimate(&op, &pair, 50).map_err(err)?;
                self.record("eigen_generator", sol.lambda, 0.0);
                self.record("eigen_adjoint", sol.lambda_adjoint, 0.0);
                Ok(Base {
                    gap: second - pair.lambda,
                    sol,
                })
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    /// Solution with `rho = exp(x_0)`, the second weight used by the
    /// checks.
    fn exp_solution(&self) -> std::result::Result<&QsdSolution, String> {
        self.exp_solution
            .get_or_init(|| {
                let w = GalleryWeight::exp_first_axis(1.0);
                solve_qsd(
                    &self.model,
                    &w,
                    w.name(),
                    &self.grid,
                    self.config.tol,
                    self.config.max_iter,
                )
                .map_err(err)
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    fn sim_config(&self, tag: u64, t_max: f64, kill: bool) -> SimConfig {
        SimConfig {
            dt_base: self.config.sim.dt,
            t_max,
            master_seed: path_seed(self.config.sim.seed, tag),
            boundary_safety: self.config.sim.boundary_safety,
            kill_on_exit: kill,
            exit_bridge: self.config.sim.exit_bridge,
            ..SimConfig::default()
        }
    }

    fn bins(&self) -> std::result::Result<Grid, String> {
        self.config.grid_with(self.config.sim.bins).map_err(err)
    }

    /// Sampler of the discrete quasistationary distribution.
    fn nu_start(&self, sol: &QsdSolution) -> std::result::Result<StartDistribution, String> {
        let density = sol.cell_density(&sol.phi, &sol.grid).map_err(err)?;
        let masses: Vec<f64> = density
            .iter()
            .map(|d| d.max(0.0) * sol.grid.cell_volume())
            .collect();
        Ok(StartDistribution::Cells(
            CellSampler::new(&sol.grid, &masses).map_err(err)?,
        ))
    }

    fn eigenvalue(&self) -> Outcome {
        let (id, name) = (1, CHECK_NAMES[0]);
        let Some(exact) = self.model.closed_form_eigenvalue(&self.domain) else {
            return Ok(CheckResult::skipped(
                id,
                name,
                "model has no closed-form eigenvalue",
            ));
        };
        let fine = self.base()?.sol.lambda;
        let n = self.config.grid[0];
        let coarse_grid = self.config.grid_with(n / 2).map_err(err)?;
        let coarse = principal_eigenpair(
            &assemble_generator(&self.model, &coarse_grid).map_err(err)?,
            self.config.tol,
            self.config.max_iter,
        )
        .map_err(err)?
        .lambda;
        let rel = (fine - exact).abs() / exact;
        let ratio = (coarse - exact).abs() / (fine - exact).abs();
        let mut r = CheckResult::new(id, name);
        r.value("lambda", fine)
            .value("exact", exact)
            .value("relative_error", rel)
            .value("error_ratio_halving_h", ratio)
            .require(rel <= 1e-3, format!("relative error {rel:.3e} > 1e-3"))
            .require(
                (3.0..=5.0).contains(&ratio),
                format!("error ratio {ratio:.3} outside [3, 5]"),
            );
        Ok(r)
    }

    fn y_drift(&self) -> Outcome {
        let (id, name) = (2, CHECK_NAMES[1]);
        let GalleryModel::DriftedBrownian { sigma, .. } = self.model else {
            return Ok(CheckResult::skipped(
                id,
                name,
                "closed-form drift only known for bm1d_drift",
            ));
        };
        let sol = &self.base()?.sol;
        let psi = log_transform(&self.grid, &sol.psi).map_err(err)?;
        let drift = drift_field_y(&psi, &self.model);
        let lo = self.domain.lower()[0];
        let k = PI / self.domain.width(0);
        let s2 = sigma * sigma;
        let floor = s2 * k;
        let delta = 5.0 * self.h() * (1.0 - 1e-9);
        let mut worst: f64 = 0.0;
        let mut count = 0;
        for &node in self.grid.interior_nodes() {
            if self.grid.node_distance(node) < delta {
                continue;
            }
            count += 1;
            let x = self.grid.node_coords(node)[0];
            let exact = s2 * k / (k * (x - lo)).tan();
            worst = worst.max((drift[node][0] - exact).abs() / exact.abs().max(floor));
        }
        let mut r = CheckResult::new(id, name);
        r.value("max_relative_error", worst)
            .value("nodes", count as f64)
            .require(count > 0, "no nodes at distance 5h from the boundary")
            .require(
                worst <= 1e-2,
                format!("max relative error {worst:.3e} > 1e-2"),
            );
        Ok(r)
    }

    /// Observed orders of the maximal HJB residuals over nodes at distance
    /// at least `3 h` of the coarsest of four grids `n/8 .. n`.
    fn hjb_order(&self) -> Outcome {
        let (id, name) = (3, CHECK_NAMES[2]);
        let n = self.config.grid[0];
        let levels: Vec<usize> = [8, 4, 2, 1].iter().map(|d| n / d).collect();
        let grids: Vec<Grid> = levels
            .iter()
            .map(|&m| self.config.grid_with(m))
            .collect::<qsd_core::Result<_>>()
            .map_err(|e| format!("grid {n} too coarse for a four-level refinement study: {e}"))?;
        let delta = 3.0 * grids[0].max_spacing() * (1.0 - 1e-9);
        let weights = [GalleryWeight::One, GalleryWeight::exp_first_axis(1.0)];
        let mut series: Vec<(String, Vec<f64>)> = vec![
            ("generator".into(), vec![]),
            ("adjoint_one".into(), vec![]),
            ("adjoint_exp".into(), vec![]),
        ];
        for grid in &grids {
            for (w, weight) in weights.iter().enumerate() {
                let sol = solve_qsd(
                    &self.model,
                    weight,
                    weight.name(),
                    grid,
                    self.config.tol,
                    self.config.max_iter,
                )
                .map_err(err)?;
                if w == 0 {
                    let psi = log_transform(grid, &sol.psi).map_err(err)?;
                    series[0].1.push(
                        hjb_residual_generator(&psi, sol.lambda, &self.model)
                            .max_at_distance(delta),
                    );
                }
                let phi_tilde = log_transform(grid, &sol.phi_tilde).map_err(err)?;
                series[1 + w].1.push(
                    hjb_residual_adjoint(&phi_tilde, sol.lambda, &self.model, weight)
                        .max_at_distance(delta),
                );
            }
        }
        let hs: Vec<f64> = grids.iter().map(|g| g.max_spacing().ln()).collect();
        let mut r = CheckResult::new(id, name);
        for (label, values) in &series {
            r.value(
                &format!("{label}_finest"),
                *values.last().expect("four levels"),
            );
            let order = slope(&hs, &values.iter().map(|v| v.ln()).collect::<Vec<_>>());
            r.value(&format!("{label}_order"), order).require(
                (1.7..=2.3).contains(&order),
                format!("{label} residual order {order:.3} outside [1.7, 2.3]"),
            );
        }
        Ok(r)
    }

    fn rate_fit(&self) -> std::result::Result<&RateFit, String> {
        self.rate_fit
            .get_or_init(|| {
                let base = self.base()?;
                let sol = &base.sol;
                let n = self.config.sim.paths;
                let t_end = self
                    .config
                    .estimate
                    .fit_t1
                    .unwrap_or_else(|| (n as f64 / 100.0).ln() / sol.lambda);
                let cfg = self.sim_config(4, t_end, true);
                let model: &dyn CoefficientModel = &self.model;
                let ens = run_ensemble(
                    &Uncontrolled(model),
                    &self.domain,
                    &self.nu_start(sol)?,
                    n,
                    &cfg,
                )
                .map_err(err)?;
                let times: Vec<f64> = (0..=200).map(|k| t_end * k as f64 / 200.0).collect();
                let curve = survival_curve(&ens, &times);
                let fit =
                    exit_rate_fit(&curve, self.config.estimate.fit_t0, Some(t_end)).map_err(err)?;
                self.record("exit_rate_fit", fit.lambda, fit.std_error);
                Ok(fit)
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    fn survival(&self) -> Outcome {
        let (id, name) = (4, CHECK_NAMES[3]);
        let lambda = self.base()?.sol.lambda;
        let fit = self.rate_fit()?;
        let z = (fit.lambda - lambda).abs() / fit.std_error;
        let mut r = CheckResult::new(id, name);
        r.value("lambda_hat", fit.lambda)
            .value("std_error", fit.std_error)
            .value("lambda", lambda)
            .value("r_squared", fit.r_squared)
            .value("z_score", z)
            .value("fit_end", fit.t1)
            .require(
                fit.r_squared >= 0.999,
                format!("R^2 {:.5} < 0.999", fit.r_squared),
            )
            .require(
                z <= 2.0,
                format!("|lambda_hat - lambda| = {z:.2} SE > 2 SE"),
            );
        Ok(r)
    }

    /// Probe points spread along the diagonal of the box.
    fn probes(&self) -> Vec<Point> {
        let p = self.config.estimate.probes;
        (1..=p)
            .map(|k| {
                let s = k as f64 / (p + 1) as f64;
                let mut x = [0.0; MAX_DIM];
                for (axis, xi) in x.iter_mut().enumerate().take(self.domain.dim()) {
                    *xi = self.domain.lower()[axis] + s * self.domain.width(axis);
                }
                x
            })
            .collect()
    }

    fn psi_reconstruction(&self) -> Outcome {
        let (id, name) = (5, CHECK_NAMES[4]);
        let base = self.base()?;
        let sol = &base.sol;
        let t_eval = self.config.estimate.t_eval.unwrap_or(4.0 / base.gap);
        let model: &dyn CoefficientModel = &self.model;
        let probes = self.probes();
        let mut curves = Vec::with_capacity(probes.len());
        for (k, x) in probes.iter().enumerate() {
            let cfg = self.sim_config(500 + k as u64, t_eval, true);
            let ens = run_ensemble(
                &Uncontrolled(model),
                &self.domain,
                &StartDistribution::Point(*x),
                self.config.sim.probe_paths,
                &cfg,
            )
            .map_err(err)?;
            curves.push(survival_curve(&ens, &[t_eval]));
        }
        let estimate = psi_from_survival(&curves, sol.lambda, t_eval).map_err(err)?;
        let exact: Vec<f64> = probes
            .iter()
            .map(|x| self.grid.interpolate(&sol.psi, x))
            .collect();
        let corr = shape_correlation(&estimate, &exact);
        let mut r = CheckResult::new(id, name);
        r.value("t_eval", t_eval)
            .value("correlation", corr)
            .require(corr >= 0.99, format!("shape correlation {corr:.4} < 0.99"));
        Ok(r)
    }

    fn conditioning(&self) -> Outcome {
        let (id, name) = (6, CHECK_NAMES[5]);
        let base = self.base()?;
        let t = self
            .config
            .estimate
            .snapshot_time
            .unwrap_or_else(|| (8.0 / base.gap).max(2.0 * transient_time(base.gap)));
        let mut cfg = self.sim_config(6, t, true);
        cfg.snapshot_times = vec![t];
        let model: &dyn CoefficientModel = &self.model;
        let ens = run_ensemble(
            &Uncontrolled(model),
            &self.domain,
            &StartDistribution::Uniform,
            self.config.sim.histogram_paths,
            &cfg,
        )
        .map_err(err)?;
        let bins = self.bins()?;
        let hist = qsd_histogram(&ens, 0, &bins).map_err(err)?;
        let reference = reference_measure(&base.sol, &base.sol.phi, &bins).map_err(err)?;
        let l1 = stationarity_distance(&hist, &reference).map_err(err)?;
        let mut r = CheckResult::new(id, name);
        r.value("snapshot_time", t)
            .value("survivors", ens.snapshot_positions(0).len() as f64)
            .value("l1_distance", l1)
            .require(l1 <= 0.08, format!("L1 distance {l1:.4} > 0.08"));
        Ok(r)
    }

    /// Long `Y`, `Z` (`rho = 1`) and `Z` (`rho = exp(x_0)`) runs.
    fn runs(&self) -> std::result::Result<&[ErgodicRun; 3], String> {
        self.runs
            .get_or_init(|| {
                let base = self.base()?;
                let exp = self.exp_solution()?;
                let horizon = self.config.sim.horizon;
                let burn_in = self
                    .config
                    .estimate
                    .burn_in
                    .unwrap_or(default_burn_in(horizon));
                let bins = self.bins()?;
                let model: &dyn CoefficientModel = &self.model;
                let one = GalleryWeight::One;
                let exp_w = GalleryWeight::exp_first_axis(1.0);
                let x0 = self.domain.center();
                let mut out = Vec::with_capacity(3);
                let specs: [(u64, &QsdSolution, &dyn DensityWeight, bool); 3] = [
                    (71, &base.sol, &one, true),
                    (72, &base.sol, &one, false),
                    (73, exp, &exp_w, false),
                ];
                for (tag, sol, rho, is_y) in specs {
                    let dynamics = if is_y {
                        ControlledDynamics::y(
                            model,
                            rho,
                            log_transform(&self.grid, &sol.psi).map_err(err)?,
                        )
                    } else {
                        ControlledDynamics::z(
                            model,
                            rho,
                            log_transform(&self.grid, &sol.phi_tilde).map_err(err)?,
                        )
                    };
                    let cfg = self.sim_config(tag, horizon, false);
                    out.push(
                        ergodic_run(&dynamics, &self.domain, &x0, &cfg, &bins, burn_in)
                            .map_err(err)?,
                    );
                }
                let [y, z, z_exp]: [ErgodicRun; 3] =
                    out.try_into().map_err(|_| "missing run".to_string())?;
                self.record("ergodic_y", y.cost.mean, y.cost.std_error);
                self.record("ergodic_z_one", z.cost.mean, z.cost.std_error);
                self.record("ergodic_z_exp", z_exp.cost.mean, z_exp.cost.std_error);
                Ok([y, z, z_exp])
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    fn invariant_measure(&self) -> Outcome {
        let (id, name) = (7, CHECK_NAMES[6]);
        let sol = &self.base()?.sol;
        let runs = self.runs()?;
        let reference = reference_measure(sol, &sol.mu, &self.bins()?).map_err(err)?;
        let mut r = CheckResult::new(id, name);
        for (label, run) in [("y", &runs[0]), ("z", &runs[1])] {
            let l1 = stationarity_distance(&run.occupation, &reference).map_err(err)?;
            r.value(&format!("{label}_l1_distance"), l1).require(
                l1 <= 0.05,
                format!("{label} occupation L1 distance {l1:.4} > 0.05"),
            );
        }
        Ok(r)
    }

    fn lambda_routes(&self) -> Outcome {
        let (id, name) = (8, CHECK_NAMES[7]);
        let sol = &self.base()?.sol;
        let exp = self.exp_solution()?;
        let exp_w = GalleryWeight::exp_first_axis(1.0);
        let qy = quadrature_cost_y(
            sol,
            &log_transform(&self.grid, &sol.psi).map_err(err)?,
            &self.model,
        );
        let qz = quadrature_cost_z(
            sol,
            &log_transform(&self.grid, &sol.phi_tilde).map_err(err)?,
            &self.model,
            &GalleryWeight::One,
        );
        let qz_exp = quadrature_cost_z(
            exp,
            &log_transform(&self.grid, &exp.phi_tilde).map_err(err)?,
            &self.model,
            &exp_w,
        );
        self.record("quadrature_y", qy, 0.0);
        self.record("quadrature_z_one", qz, 0.0);
        self.record("quadrature_z_exp", qz_exp, 0.0);
        let runs = self.runs()?;
        let mut r = CheckResult::new(id, name);
        let lambda = sol.lambda;
        for (label, q) in [
            ("quadrature_y", qy),
            ("quadrature_z_one", qz),
            ("quadrature_z_exp", qz_exp),
        ] {
            let rel = (q - lambda).abs() / lambda;
            r.value(&format!("{label}_relative_error"), rel).require(
                rel <= 1e-3,
                format!("{label} relative error {rel:.3e} > 1e-3"),
            );
        }
        let estimates = [
            ("eigen", lambda, 0.0),
            ("quadrature_y", qy, 0.0),
            ("ergodic_y", runs[0].cost.mean, runs[0].cost.std_error),
            ("ergodic_z_one", runs[1].cost.mean, runs[1].cost.std_error),
            ("ergodic_z_exp", runs[2].cost.mean, runs[2].cost.std_error),
        ];
        let mut worst: f64 = 0.0;
        for (i, a) in estimates.iter().enumerate() {
            for b in &estimates[i + 1..] {
                let diff = (a.1 - b.1).abs();
                let se = (a.2 * a.2 + b.2 * b.2).sqrt();
                let allowed = (0.03 * lambda).max(2.0 * se);
                worst = worst.max(diff / allowed);
                r.require(
                    diff <= allowed,
                    format!(
                        "{} vs {}: |{:.5} - {:.5}| > {allowed:.3e}",
                        a.0, b.0, a.1, b.1
                    ),
                );
            }
        }
        for (label, v, se) in &estimates[2..] {
            r.value(label, *v).value(&format!("{label}_std_error"), *se);
        }
        r.value("worst_pair_fraction_of_allowance", worst);
        Ok(r)
    }

    fn weight_invariance(&self) -> Outcome {
        let (id, name) = (9, CHECK_NAMES[8]);
        let one = GalleryWeight::One;
        let base = solve_qsd(
            &self.model,
            &one,
            one.name(),
            &self.grid,
            self.config.tol,
            self.config.max_iter,
        )
        .map_err(err)?;
        let reference = drift_field_z(
            &log_transform(&self.grid, &base.phi).map_err(err)?,
            &self.model,
        );
        let h2 = self.h() * self.h();
        let mut r = CheckResult::new(id, name);
        for weight in [
            GalleryWeight::exp_first_axis(1.0),
            GalleryWeight::OnePlusSquare,
        ] {
            let sol = solve_qsd(
                &self.model,
                &weight,
                weight.name(),
                &self.grid,
                self.config.tol,
                self.config.max_iter,
            )
            .map_err(err)?;
            let field = drift_field_z_weighted(
                &log_transform(&self.grid, &sol.phi_tilde).map_err(err)?,
                &self.model,
                &weight,
            );
            let dev = max_scaled_deviation(&field, &reference, &self.grid);
            let allowed = 1e-8 + 5.0 * h2 * sol.coefficient_scale;
            r.value(&format!("{}_deviation", weight.name()), dev)
                .value(&format!("{}_allowance", weight.name()), allowed)
                .require(
                    dev <= allowed,
                    format!("{} deviation {dev:.3e} > {allowed:.3e}", weight.name()),
                );
        }
        Ok(r)
    }

    /// Duality defect at `n_d` and `2 n_d` cells per axis, with `n_d = 200`
    /// in one dimension and `32` in two.
    fn duality(&self) -> Outcome {
        let (id, name) = (10, CHECK_NAMES[9]);
        let n = if self.domain.dim() == 1 { 200 } else { 32 };
        let mut defects = Vec::new();
        for m in [n, 2 * n] {
            let grid = self.config.grid_with(m).map_err(err)?;
            let one = GalleryWeight::One;
            let sol = solve_qsd(
                &self.model,
                &one,
                one.name(),
                &grid,
                self.config.tol,
                self.config.max_iter,
            )
            .map_err(err)?;
            defects.push(
                duality_check(&self.model, &sol, &default_test_functions(&grid))
                    .map_err(err)?
                    .max_defect,
            );
        }
        let order = (defects[0] / defects[1]).log2();
        let mut r = CheckResult::new(id, name);
        r.value("defect", defects[0])
            .value("defect_refined", defects[1])
            .value("order", order)
            .require(
                defects[0] <= 5e-3,
                format!("defect {:.3e} > 5e-3", defects[0]),
            )
            .require(
                (1.5..=2.5).contains(&order),
                format!("order {order:.3} outside [1.5, 2.5]"),
            );
        Ok(r)
    }

    fn non_exit(&self) -> Outcome {
        let (id, name) = (11, CHECK_NAMES[10]);
        let sol = &self.base()?.sol;
        let model: &dyn CoefficientModel = &self.model;
        let one = GalleryWeight::One;
        let dynamics = ControlledDynamics::y(
            model,
            &one,
            log_transform(&self.grid, &sol.psi).map_err(err)?,
        );
        let cfg = self.sim_config(11, self.config.sim.nonexit_horizon, false);
        let n = self.config.sim.nonexit_paths;
        let ens = run_ensemble(
            &dynamics,
            &self.domain,
            &StartDistribution::Uniform,
            n,
            &cfg,
        )
        .map_err(err)?;
        let violating = ens.paths.iter().filter(|p| p.violations > 0).count();
        let fraction = violating as f64 / n as f64;
        let mut r = CheckResult::new(id, name);
        r.value("violating_paths", violating as f64)
            .value("violation_fraction", fraction)
            .value("total_violations", ens.total_violations() as f64)
            .require(
                fraction <= 1e-3,
                format!("violation fraction {fraction:.2e} > 1e-3"),
            );
        Ok(r)
    }

    /// Standard Brownian motion on the unit square, independent of the
    /// configured model.
    fn two_dimensional(&self) -> Outcome {
        let (id, name) = (12, CHECK_NAMES[11]);
        let model = GalleryModel::ConstantDrift2d {
            drift: [0.0, 0.0],
            sigma: 1.0,
        };
        let grid = Grid::new(BoxDomain::unit_square(), &[64, 64]).map_err(err)?;
        let one = GalleryWeight::One;
        let sol = solve_qsd(
            &model,
            &one,
            one.name(),
            &grid,
            self.config.tol,
            self.config.max_iter,
        )
        .map_err(err)?;
        let exact = PI * PI;
        let rel = (sol.lambda - exact).abs() / exact;
        let psi = unit_mass(&grid, &sol.psi);
        let gap = psi
            .iter()
            .zip(&sol.phi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let mut r = CheckResult::new(id, name);
        r.value("lambda", sol.lambda)
            .value("relative_error", rel)
            .value("psi_phi_max_difference", gap)
            .require(rel <= 0.01, format!("relative error {rel:.3e} > 1e-2"))
            .require(
                gap <= 1e-8,
                format!("unit-mass psi and phi differ by {gap:.3e} > 1e-8"),
            );
        Ok(r)
    }

    /// Reruns a slice of the quasistationary-start ensemble and compares the
    /// path summaries bitwise.
    fn determinism(&self) -> Outcome {
        let (id, name) = (13, CHECK_NAMES[12]);
        let sol = &self.base()?.sol;
        let n = self.config.sim.paths.min(2000);
        let cfg = self.sim_config(4, 1.0 / sol.lambda, true);
        let model: &dyn CoefficientModel = &self.model;
        let start = self.nu_start(sol)?;
        let a = run_ensemble(&Uncontrolled(model), &self.domain, &start, n, &cfg).map_err(err)?;
        let b = run_ensemble(&Uncontrolled(model), &self.domain, &start, n, &cfg).map_err(err)?;
        let mut r = CheckResult::new(id, name);
        r.value("paths", n as f64)
            .require(a == b, "repeated ensemble differs");
        Ok(r)
    }
}

/// Least-squares slope of `y` against `x`.
fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Warnings raised while assembling the operators of a configuration, which
/// are reported even when the eigen solve fails.
pub fn assembly_warnings(config: &ProblemConfig) -> (f64, Vec<String>) {
    let model = config.gallery_model();
    let weight = config.gallery_weight();
    let grid = config.build_grid();
    let mut peclet: f64 = 0.0;
    let mut warnings = Vec::new();
    if let Ok(op) = assemble_generator(&model, &grid) {
        peclet = peclet.max(op.peclet());
        warnings.extend(op.warnings().iter().map(|w| format!("generator: {w}")));
    }
    if let Ok(op) = assemble_adjoint(&model, &weight, weight.name(), &grid) {
        peclet = peclet.max(op.peclet());
        warnings.extend(op.warnings().iter().map(|w| format!("adjoint: {w}")));
    }
    (peclet, warnings)
}
