//! Monte Carlo estimators and deterministic cross-checks confronting the
//! simulations with the eigenpair and HJB predictions.

use std::f64::consts::PI;

use crate::coefficients::{potential_c_tilde, CoefficientModel, DensityWeight};
use crate::discretize::assemble_with_drift;
use crate::eigen::{cell_average, QsdSolution};
use crate::error::{Error, Result};
use crate::geometry::{dot, quadratic_form, BoxDomain, Grid, Point};
use crate::hjb::{
    drift_field_y, drift_field_z, log_transform, nodal_gradient, ControlledDynamics,
    ControlledKind, PotentialField,
};
use crate::simulate::{
    simulate_path, CellMeasure, OccupationHistogram, SimConfig, TrajectoryEnsemble,
};

/// Survivors needed at the end of the default fit window.
pub const FIT_MIN_SURVIVORS: f64 = 100.0;
/// Survivors needed for a conditioned histogram.
pub const HISTOGRAM_MIN_SURVIVORS: usize = 500;
/// Number of batches for batch-means standard errors.
pub const BATCHES: usize = 20;

/// Empirical survival probabilities `P(tau > t)` with binomial standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub std_error: Vec<f64>,
    pub n_paths: usize,
}

impl SurvivalCurve {
    /// Builds a curve from exact survival values, as if from `n_paths` paths.
    pub fn from_values(times: Vec<f64>, survival: Vec<f64>, n_paths: usize) -> Self {
        let n = n_paths as f64;
        let std_error = survival
            .iter()
            .map(|p| (p * (1.0 - p) / n).sqrt())
            .collect();
        Self {
            times,
            survival,
            std_error,
            n_paths,
        }
    }

    /// Survival at the last curve time not after `t`.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        let k = self
            .times
            .partition_point(|&s| s <= t + 1e-12 * t.abs().max(1.0));
        (k > 0).then(|| self.survival[k - 1])
    }
}

/// Survival curve of a killed ensemble at the given times.
pub fn survival_curve(ensemble: &TrajectoryEnsemble, times: &[f64]) -> SurvivalCurve {
    let n = ensemble.n_paths();
    let survivors = ensemble.survivors(times);
    SurvivalCurve::from_values(
        times.to_vec(),
        survivors.iter().map(|&s| s as f64 / n as f64).collect(),
        n,
    )
}

/// Weighted least-squares fit of `log P(tau > t)` against `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    /// Minus the fitted slope.
    pub lambda: f64,
    pub t0: f64,
    pub t1: f64,
    /// Weighted coefficient of determination.
    pub r_squared: f64,
    /// Standard error of the slope, accounting for the correlation of the
    /// survival estimates at different times.
    pub std_error: f64,
    pub points: usize,
}

/// End of the default fit window: the last time with at least
/// [`FIT_MIN_SURVIVORS`] expected survivors.
pub fn default_fit_end(curve: &SurvivalCurve) -> Option<f64> {
    let n = curve.n_paths as f64;
    curve
        .times
        .iter()
        .zip(&curve.survival)
        .filter(|(_, &p)| p * n >= FIT_MIN_SURVIVORS)
        .map(|(&t, _)| t)
        .next_back()
}

/// Start of the default fit window from a spectral gap estimate.
pub fn transient_time(gap: f64) -> f64 {
    if gap > 0.0 && gap.is_finite() {
        2.0 / gap
    } else {
        0.0
    }
}

/// Fits `log P = c - lambda t` on `[t0, t1]` (default `t1` from
/// [`default_fit_end`]) with weights `n P / (1 - P)`, the inverse variance
/// of `log P`.
pub fn exit_rate_fit(curve: &SurvivalCurve, t0: f64, t1: Option<f64>) -> Result<RateFit> {
    let t1 = match t1.or_else(|| default_fit_end(curve)) {
        Some(t) => t,
        None => {
            return Err(Error::InsufficientData(
                "no time with enough survivors for a rate fit".into(),
            ))
        }
    };
    if !(t1 > t0) {
        return Err(Error::InsufficientData(format!(
            "empty fit window [{t0}, {t1}]"
        )));
    }
    let n = curve.n_paths as f64;
    let floor = 1.0 / n;
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    let mut ps = Vec::new();
    for ((&t, &p), _) in curve
        .times
        .iter()
        .zip(&curve.survival)
        .zip(&curve.std_error)
    {
        // P = 1 has zero variance and would pin the intercept to 0, turning
        // the exit-time offset of up to one step into a slope bias.
        if t >= t0 - 1e-12 && t <= t1 + 1e-12 && p > 0.0 && p < 1.0 {
            ts.push(t);
            ys.push(p.ln());
            ps.push(p);
        }
    }
    let k = ts.len();
    if k < 5 {
        return Err(Error::InsufficientData(format!(
            "rate fit needs at least 5 points with positive survival in [{t0}, {t1}], found {k}"
        )));
    }
    let w: Vec<f64> = ps.iter().map(|p| n * p / (1.0 - p).max(floor)).collect();
    let sw: f64 = w.iter().sum();
    let tbar = w.iter().zip(&ts).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ybar = w.iter().zip(&ys).map(|(a, b)| a * b).sum::<f64>() / sw;
    let stt: f64 = (0..k).map(|i| w[i] * (ts[i] - tbar).powi(2)).sum();
    let sty: f64 = (0..k).map(|i| w[i] * (ts[i] - tbar) * (ys[i] - ybar)).sum();
    let slope = sty / stt;
    let intercept = ybar - slope * tbar;
    let ss_res: f64 = (0..k)
        .map(|i| w[i] * (ys[i] - intercept - slope * ts[i]).powi(2))
        .sum();
    let ss_tot: f64 = (0..k).map(|i| w[i] * (ys[i] - ybar).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };

    // slope = sum c_i y_i; Cov(log P(s), log P(t)) = (1 - P(s)) / (n P(s))
    // for s <= t. Times are increasing, so the earlier index is the smaller.
    let c: Vec<f64> = (0..k).map(|i| w[i] * (ts[i] - tbar) / stt).collect();
    let cov_at = |i: usize| (1.0 - ps[i]).max(0.0) / (n * ps[i]);
    let mut var = 0.0;
    let mut tail: f64 = c.iter().sum();
    for i in 0..k {
        // sum_{j >= i} c_i c_j cov(i) counted twice off-diagonal.
        tail -= c[i];
        var += cov_at(i) * c[i] * (c[i] + 2.0 * tail);
    }
    Ok(RateFit {
        lambda: -slope,
        t0,
        t1,
        r_squared,
        std_error: var.max(0.0).sqrt(),
        points: k,
    })
}

/// `psi(x) ~ exp(lambda t) P_x(tau > t)` for each curve.
pub fn psi_from_survival(curves: &[SurvivalCurve], lambda: f64, t_eval: f64) -> Result<Vec<f64>> {
    curves
        .iter()
        .enumerate()
        .map(|(i, c)| match c.value_at(t_eval) {
            Some(p) if p > 0.0 => Ok((lambda * t_eval).exp() * p),
            _ => Err(Error::InsufficientData(format!(
                "probe {i} has no survivors at t = {t_eval}"
            ))),
        })
        .collect()
}

/// Pearson correlation of two equally long samples.
pub fn shape_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Least-squares scalar `k` minimizing `|k a - b|`.
pub fn best_scale(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / a.iter().map(|x| x * x).sum::<f64>()
}

/// Histogram of the survivors of a killed ensemble at snapshot `k`.
pub fn qsd_histogram(
    ensemble: &TrajectoryEnsemble,
    snapshot: usize,
    bins: &Grid,
) -> Result<CellMeasure> {
    let points = ensemble.snapshot_positions(snapshot);
    if points.len() < HISTOGRAM_MIN_SURVIVORS {
        let factor = (HISTOGRAM_MIN_SURVIVORS as f64 / points.len().max(1) as f64).ceil();
        return Err(Error::InsufficientData(format!(
            "{} survivors at the snapshot time, {} required; increase n_paths about {}-fold",
            points.len(),
            HISTOGRAM_MIN_SURVIVORS,
            factor
        )));
    }
    CellMeasure::from_points(bins, &points)
}

/// Normalized cell density of a nodal density field of a solution.
pub fn reference_measure(sol: &QsdSolution, field: &[f64], bins: &Grid) -> Result<CellMeasure> {
    let mut density = cell_average(&sol.grid, field, bins)?;
    let mass: f64 = density.iter().sum::<f64>() * bins.cell_volume();
    density.iter_mut().for_each(|d| *d /= mass);
    Ok(CellMeasure {
        bins: bins.clone(),
        density,
    })
}

/// L1 distance between two cell densities on the same bins, in `[0, 2]`.
pub fn stationarity_distance(hist: &CellMeasure, reference: &CellMeasure) -> Result<f64> {
    if !hist.bins.same_layout(&reference.bins) {
        return Err(Error::GridMismatch(
            "histogram and reference use different bins".into(),
        ));
    }
    let vol = hist.bins.cell_volume();
    Ok(hist
        .density
        .iter()
        .zip(&reference.density)
        .map(|(a, b)| (a - b).abs() * vol)
        .sum())
}

/// Time average after burn-in with a batch-means standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub retained_time: f64,
    pub batches: usize,
}

/// Accumulates `(1/T) int f dt` over `[burn_in, horizon]` in equal-time
/// batches.
#[derive(Debug, Clone)]
pub struct ErgodicAverage {
    burn_in: f64,
    batch_len: f64,
    integral: Vec<f64>,
    time: Vec<f64>,
}

/// Default burn-in: 5% of the horizon, at least 10 time units.
pub fn default_burn_in(horizon: f64) -> f64 {
    (0.05 * horizon).max(10.0).min(0.5 * horizon)
}

impl ErgodicAverage {
    pub fn new(burn_in: f64, horizon: f64) -> Self {
        Self {
            burn_in,
            batch_len: (horizon - burn_in) / BATCHES as f64,
            integral: vec![0.0; BATCHES],
            time: vec![0.0; BATCHES],
        }
    }

    pub fn observe(&mut self, t: f64, dt: f64, value: f64) {
        if t < self.burn_in || !value.is_finite() {
            return;
        }
        let b = (((t - self.burn_in) / self.batch_len) as usize).min(BATCHES - 1);
        self.integral[b] += value * dt;
        self.time[b] += dt;
    }

    pub fn finish(&self) -> Result<ErgodicEstimate> {
        let total: f64 = self.time.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InsufficientData(
                "no time retained after burn-in".into(),
            ));
        }
        let mean = self.integral.iter().sum::<f64>() / total;
        let means: Vec<f64> = self
            .integral
            .iter()
            .zip(&self.time)
            .filter(|(_, t)| **t > 0.0)
            .map(|(i, t)| i / t)
            .collect();
        let b = means.len() as f64;
        let std_error = if means.len() > 1 {
            let m = means.iter().sum::<f64>() / b;
            (means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b - 1.0) / b).sqrt()
        } else {
            f64::INFINITY
        };
        Ok(ErgodicEstimate {
            mean,
            std_error,
            retained_time: total,
            batches: means.len(),
        })
    }
}

/// Output of a single long controlled run.
#[derive(Debug, Clone)]
pub struct ErgodicRun {
    pub kind: ControlledKind,
    /// Path average of the running cost: `1/2 DPsi . a DPsi` for `Y`,
    /// `1/2 DPhi~ . a DPhi~ + c~` for `Z`.
    pub cost: ErgodicEstimate,
    pub occupation: CellMeasure,
    pub violations: usize,
    pub steps: usize,
}

/// Simulates one controlled path up to `cfg.t_max` and collects its ergodic
/// cost average and occupation histogram after `burn_in`.
pub fn ergodic_run(
    dynamics: &ControlledDynamics<'_>,
    domain: &BoxDomain,
    x0: &Point,
    cfg: &SimConfig,
    bins: &Grid,
    burn_in: f64,
) -> Result<ErgodicRun> {
    if cfg.kill_on_exit {
        return Err(Error::InvalidConfig(
            "controlled runs need kill_on_exit = false".into(),
        ));
    }
    let mut hist = OccupationHistogram::new(bins, burn_in);
    let mut avg = ErgodicAverage::new(burn_in, cfg.t_max);
    let kind = dynamics.kind();
    let traj = simulate_path(dynamics, domain, x0, cfg, 0, |s| {
        hist.observe(s);
        avg.observe(s.t, s.dt, s.cost_rate[0] + s.cost_rate[1]);
    })?;
    Ok(ErgodicRun {
        kind,
        cost: avg.finish()?,
        occupation: hist.finish()?,
        violations: traj.violations,
        steps: traj.steps,
    })
}

/// Path average of `1/2 DPsi . a DPsi` along a `Y` path.
pub fn ergodic_cost_y(
    dynamics: &ControlledDynamics<'_>,
    domain: &BoxDomain,
    x0: &Point,
    cfg: &SimConfig,
    burn_in: f64,
) -> Result<ErgodicEstimate> {
    ergodic_cost(dynamics, ControlledKind::Y, domain, x0, cfg, burn_in)
}

/// Path average of `1/2 DPhi~ . a DPhi~ + c~` along a `Z` path.
pub fn ergodic_cost_z(
    dynamics: &ControlledDynamics<'_>,
    domain: &BoxDomain,
    x0: &Point,
    cfg: &SimConfig,
    burn_in: f64,
) -> Result<ErgodicEstimate> {
    ergodic_cost(dynamics, ControlledKind::Z, domain, x0, cfg, burn_in)
}

fn ergodic_cost(
    dynamics: &ControlledDynamics<'_>,
    kind: ControlledKind,
    domain: &BoxDomain,
    x0: &Point,
    cfg: &SimConfig,
    burn_in: f64,
) -> Result<ErgodicEstimate> {
    if dynamics.kind() != kind {
        return Err(Error::InvalidConfig(format!("expected {kind:?} dynamics")));
    }
    let mut avg = ErgodicAverage::new(burn_in, cfg.t_max);
    let mut run = cfg.clone();
    run.kill_on_exit = false;
    simulate_path(dynamics, domain, x0, &run, 0, |s| {
        avg.observe(s.t, s.dt, s.cost_rate[0] + s.cost_rate[1])
    })?;
    avg.finish()
}

/// Limit of `f / g` at a boundary node where both vanish, from their
/// gradients; zero where the gradient of `g` vanishes too (box corners).
fn boundary_ratio(df: &Point, dg: &Point, dim: usize) -> f64 {
    let gg = dot(dg, dg, dim);
    if gg > 0.0 {
        dot(df, dg, dim) / gg
    } else {
        0.0
    }
}

/// Trapezoid quadrature of `(1/2 DG . a DG + source) psi phi` for the
/// potential `G = -log g`. On the boundary `DG` is infinite and `psi phi`
/// vanishes; there the integrand is replaced by its limit
/// `1/2 Dg . a Dg (psi / g) (phi / g)`, with each ratio taken from normal
/// derivatives. The limit is invariant under rescaling `g`.
fn quadrature_cost<M, S>(sol: &QsdSolution, potential: &PotentialField, model: &M, source: S) -> f64
where
    M: CoefficientModel + ?Sized,
    S: Fn(&Point) -> f64,
{
    let grid = &sol.grid;
    let d = grid.dim();
    let dpsi = nodal_gradient(grid, &sol.psi);
    let dphi = nodal_gradient(grid, &sol.phi);
    (0..grid.node_count())
        .map(|n| {
            let x = grid.node_coords(n);
            let a = model.diffusion(&x);
            let value = if grid.is_boundary(n) {
                let g = potential.source_gradient()[n];
                0.5 * quadratic_form(&a, &g, d)
                    * boundary_ratio(&dpsi[n], &g, d)
                    * boundary_ratio(&dphi[n], &g, d)
            } else {
                (0.5 * quadratic_form(&a, &potential.gradient()[n], d) + source(&x)) * sol.mu[n]
            };
            grid.weight(n) * value
        })
        .sum()
}

/// `1/2 sum W DPsi . a DPsi psi phi`, the quadrature form of the average
/// control cost of `Y`.
pub fn quadrature_cost_y<M: CoefficientModel + ?Sized>(
    sol: &QsdSolution,
    psi: &PotentialField,
    model: &M,
) -> f64 {
    quadrature_cost(sol, psi, model, |_| 0.0)
}

/// `sum W [1/2 DPhi~ . a DPhi~ + c~] psi phi`, the quadrature form of the
/// average cost of `Z`.
pub fn quadrature_cost_z<M, W>(
    sol: &QsdSolution,
    phi_tilde: &PotentialField,
    model: &M,
    rho: &W,
) -> f64
where
    M: CoefficientModel + ?Sized,
    W: DensityWeight + ?Sized,
{
    quadrature_cost(sol, phi_tilde, model, |x| potential_c_tilde(model, rho, x))
}

/// Smooth test function supported on the middle of the box:
/// `prod_i sin^4(pi s_i) sin(k pi s_i)` with `s_i` the coordinate rescaled so
/// the support is the box shrunk by `margin` of its width on every side.
pub fn compact_test_function(domain: &BoxDomain, k: u32, margin: f64, x: &Point) -> f64 {
    (0..domain.dim())
        .map(|i| {
            let lo = domain.lower()[i] + margin * domain.width(i);
            let hi = domain.upper()[i] - margin * domain.width(i);
            let s = (x[i] - lo) / (hi - lo);
            if s <= 0.0 || s >= 1.0 {
                0.0
            } else {
                (PI * s).sin().powi(4) * (k as f64 * PI * s).sin()
            }
        })
        .product()
}

/// The test functions used by [`duality_check`]: `k = 1, 2, 3` with margins
/// of one eighth and one quarter of the width.
pub fn default_test_functions(grid: &Grid) -> Vec<Vec<f64>> {
    let domain = grid.domain();
    let mut out = Vec::new();
    for margin in [0.125, 0.25] {
        for k in 1..=3 {
            out.push(grid.sample(|x| compact_test_function(domain, k, margin, x)));
        }
    }
    out
}

/// Outcome of the generator duality check.
#[derive(Debug, Clone, PartialEq)]
pub struct DualityReport {
    pub max_defect: f64,
    pub per_function: Vec<f64>,
    /// Nodes skipped because `eta = psi phi` fell below `1e-12`.
    pub excluded_nodes: usize,
}

/// Checks `L_Z f = (1/eta) L_Y*(eta f)` with `eta = psi phi`.
///
/// `L_Y` is assembled with drift `b - a DPsi`, `L_Z` with `beta - a DPhi`, and
/// the adjoint of `L_Y` is `W^-1 A_Y^T W`. The defect is the max-norm
/// difference over interior nodes at distance at least `3h` from the
/// boundary, for each test function (full nodal arrays on the solution grid).
pub fn duality_check<M: CoefficientModel + ?Sized>(
    model: &M,
    sol: &QsdSolution,
    test_functions: &[Vec<f64>],
) -> Result<DualityReport> {
    let grid = &sol.grid;
    let psi = log_transform(grid, &sol.psi)?;
    let phi = log_transform(grid, &sol.phi)?;
    let mut y_drift = drift_field_y(&psi, model);
    let mut z_drift = drift_field_z(&phi, model);
    for n in 0..grid.node_count() {
        if grid.is_boundary(n) {
            y_drift[n] = [0.0; 2];
            z_drift[n] = [0.0; 2];
        }
    }
    let ly = assemble_with_drift(model, grid, &y_drift, "Y")?;
    let lz = assemble_with_drift(model, grid, &z_drift, "Z")?;
    let ly_adj = ly.quadrature_adjoint();
    let eta = grid.restrict(&sol.mu);
    let interior = grid.interior_nodes();
    let delta = 3.0 * grid.max_spacing() * (1.0 - 1e-9);
    let floor = 1e-12;
    let mut excluded = 0;
    for (k, &node) in interior.iter().enumerate() {
        if eta[k] < floor && grid.node_distance(node) >= delta {
            excluded += 1;
        }
    }
    let mut per_function = Vec::with_capacity(test_functions.len());
    for f in test_functions {
        if f.len() != grid.node_count() {
            return Err(Error::LengthMismatch {
                expected: grid.node_count(),
                got: f.len(),
            });
        }
        let fi = grid.restrict(f);
        let lzf = lz.apply(&fi)?;
        let ef: Vec<f64> = fi.iter().zip(&eta).map(|(a, b)| a * b).collect();
        let adj = ly_adj.apply(&ef)?;
        let mut defect: f64 = 0.0;
        for (k, &node) in interior.iter().enumerate() {
            if eta[k] < floor || grid.node_distance(node) < delta {
                continue;
            }
            defect = defect.max((lzf[k] - adj[k] / eta[k]).abs());
        }
        per_function.push(defect);
    }
    Ok(DualityReport {
        max_defect: per_function.iter().copied().fold(0.0, f64::max),
        per_function,
        excluded_nodes: excluded,
    })
}
