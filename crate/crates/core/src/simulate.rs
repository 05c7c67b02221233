//! Euler-Maruyama simulation of the killed process and of the optimally
//! controlled processes, with deterministic per-path seeding.
//!
//! Killed paths use a fixed step and stop at the first step leaving the open
//! box. Controlled paths use the boundary-adaptive step
//! `min(dt_base, eps_b d^2 / (|a| + d |drift|))`, with `d` the distance to the
//! boundary, and reject steps that would leave the box.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::coefficients::CoefficientModel;
use crate::error::{Error, Result};
use crate::geometry::{BoxDomain, Grid, Matrix, Point, MAX_DIM};
use crate::hjb::ControlledDynamics;

/// Coefficients of an SDE `dX = drift dt + sigma dB` as seen by the stepper.
pub trait Dynamics: Sync {
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn drift(&self, x: &Point) -> Point;
    fn sigma(&self, x: &Point) -> Matrix;
    fn diffusion(&self, x: &Point) -> Matrix;
    /// Running cost rates accumulated along the path, if any.
    fn running_cost(&self, _x: &Point) -> [f64; 2] {
        [0.0; 2]
    }
}

/// The uncontrolled diffusion of a coefficient model.
pub struct Uncontrolled<'a>(pub &'a dyn CoefficientModel);

impl Dynamics for Uncontrolled<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn noise_dim(&self) -> usize {
        self.0.noise_dim()
    }
    fn drift(&self, x: &Point) -> Point {
        self.0.drift(x)
    }
    fn sigma(&self, x: &Point) -> Matrix {
        self.0.sigma(x)
    }
    fn diffusion(&self, x: &Point) -> Matrix {
        self.0.diffusion(x)
    }
}

impl Dynamics for ControlledDynamics<'_> {
    fn dim(&self) -> usize {
        self.model().dim()
    }
    fn noise_dim(&self) -> usize {
        self.model().noise_dim()
    }
    fn drift(&self, x: &Point) -> Point {
        self.drift_at(x)
    }
    fn sigma(&self, x: &Point) -> Matrix {
        self.model().sigma(x)
    }
    fn diffusion(&self, x: &Point) -> Matrix {
        self.model().diffusion(x)
    }
    fn running_cost(&self, x: &Point) -> [f64; 2] {
        ControlledDynamics::running_cost(self, x)
    }
}

/// Simulation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt_base: f64,
    pub t_max: f64,
    pub master_seed: u64,
    /// `eps_b` of the adaptive step rule, in `(0, 1)`.
    pub boundary_safety: f64,
    /// Killed process when true, controlled (exit forbidden) when false.
    pub kill_on_exit: bool,
    /// Time between stored states of single trajectories; `0` stores none.
    pub output_stride: f64,
    /// Kill inside a step with the Brownian-bridge crossing probability
    /// `exp(-2 d0 d1 / (a_kk dt))` per face, removing the O(sqrt dt) bias of
    /// detecting exits only at step ends.
    pub exit_bridge: bool,
    /// Step halvings tried before a boundary-crossing controlled step is
    /// recorded as a violation.
    pub max_halvings: u32,
    /// Times at which ensemble paths record their position.
    pub snapshot_times: Vec<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt_base: 1e-3,
            t_max: 10.0,
            master_seed: 0,
            boundary_safety: 0.02,
            kill_on_exit: true,
            output_stride: 0.0,
            exit_bridge: true,
            max_halvings: 30,
            snapshot_times: Vec::new(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_base > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "dt_base must be positive, got {}",
                self.dt_base
            )));
        }
        if !(self.t_max >= self.dt_base) {
            return Err(Error::InvalidConfig(format!(
                "t_max ({}) must be at least dt_base ({})",
                self.t_max, self.dt_base
            )));
        }
        if !(self.boundary_safety > 0.0 && self.boundary_safety < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "boundary_safety must lie in (0, 1), got {}",
                self.boundary_safety
            )));
        }
        if self.output_stride < 0.0 || !self.output_stride.is_finite() {
            return Err(Error::InvalidConfig(
                "output_stride must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// One Euler-Maruyama step as reported to observers: the state at the start
/// of the step, its length, and the running cost rates there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub t: f64,
    pub x: Point,
    pub dt: f64,
    pub cost_rate: [f64; 2],
}

/// A single simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Output times and states, every `output_stride` while alive.
    pub times: Vec<f64>,
    pub states: Vec<Point>,
    /// First step time outside the box; `None` if the path survived `t_max`.
    pub exit_time: Option<f64>,
    pub exited: bool,
    /// Controlled steps that still crossed the boundary after all halvings.
    pub violations: usize,
    /// Left-point integrals of the running cost rates.
    pub cost: [f64; 2],
    pub final_state: Point,
    /// Time reached (exit time or `t_max`).
    pub final_time: f64,
    pub steps: usize,
}

/// Per-path seed derived from the master seed and path index.
pub fn path_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(index.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_start<D: Dynamics + ?Sized>(dynamics: &D, domain: &BoxDomain, x0: &Point) -> Result<()> {
    if dynamics.dim() != domain.dim() {
        return Err(Error::DimensionMismatch {
            expected: domain.dim(),
            got: dynamics.dim(),
        });
    }
    if !domain.contains(x0) {
        return Err(Error::OutsideDomain {
            point: x0[..domain.dim()].to_vec(),
        });
    }
    Ok(())
}

fn noise<R: Rng>(rng: &mut R, m: usize) -> Point {
    let mut z = [0.0; MAX_DIM];
    for zi in z.iter_mut().take(m) {
        *zi = rng.sample(StandardNormal);
    }
    z
}

fn em_step(
    x: &Point,
    drift: &Point,
    sigma: &Matrix,
    z: &Point,
    dt: f64,
    d: usize,
    m: usize,
) -> Point {
    let sq = dt.sqrt();
    let mut y = *x;
    for i in 0..d {
        let s: f64 = (0..m).map(|k| sigma[i][k] * z[k]).sum();
        y[i] += drift[i] * dt + s * sq;
    }
    y
}

/// Probability that a Brownian bridge between two interior points crosses a
/// face of the box during a step, treating axes independently with the local
/// diffusion coefficient.
fn bridge_crossing_probability(
    domain: &BoxDomain,
    x0: &Point,
    x1: &Point,
    a: &Matrix,
    dt: f64,
) -> f64 {
    let mut survive = 1.0;
    for k in 0..domain.dim() {
        let var = a[k][k] * dt;
        if var <= 0.0 {
            continue;
        }
        let lo = (x0[k] - domain.lower()[k]) * (x1[k] - domain.lower()[k]);
        let hi = (domain.upper()[k] - x0[k]) * (domain.upper()[k] - x1[k]);
        survive *= (1.0 - (-2.0 * lo / var).exp()) * (1.0 - (-2.0 * hi / var).exp());
    }
    1.0 - survive
}

fn matrix_norm(a: &Matrix, d: usize) -> f64 {
    // Frobenius norm bounds the spectral norm from above.
    (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| a[i][j] * a[i][j])
        .sum::<f64>()
        .sqrt()
}

/// Where a stored state is recorded.
struct Recorder {
    stride: f64,
    next: f64,
    times: Vec<f64>,
    states: Vec<Point>,
}

impl Recorder {
    fn new(stride: f64) -> Self {
        Self {
            stride,
            next: 0.0,
            times: Vec::new(),
            states: Vec::new(),
        }
    }

    fn record(&mut self, t: f64, x: &Point) {
        if self.stride > 0.0 && t >= self.next - 1e-9 * self.stride {
            self.times.push(t);
            self.states.push(*x);
            while self.next <= t + 1e-9 * self.stride {
                self.next += self.stride;
            }
        }
    }
}

/// Simulates the killed process from `x0` with the path's own RNG.
pub fn simulate_killed<D, O>(
    dynamics: &D,
    domain: &BoxDomain,
    x0: &Point,
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
    mut observer: O,
) -> Result<Trajectory>
where
    D: Dynamics + ?Sized,
    O: FnMut(&Step),
{
    cfg.validate()?;
    check_start(dynamics, domain, x0)?;
    let (d, m) = (dynamics.dim(), dynamics.noise_dim());
    let dt = cfg.dt_base;
    let n_steps = (cfg.t_max / dt).round() as usize;
    let mut rec = Recorder::new(cfg.output_stride);
    let mut x = *x0;
    let mut cost = [0.0; 2];
    rec.record(0.0, &x);
    let mut exit_time = None;
    let mut steps = 0;
    for k in 0..n_steps {
        let t = k as f64 * dt;
        let rate = dynamics.running_cost(&x);
        observer(&Step {
            t,
            x,
            dt,
            cost_rate: rate,
        });
        cost[0] += rate[0] * dt;
        cost[1] += rate[1] * dt;
        let z = noise(rng, m);
        let y = em_step(&x, &dynamics.drift(&x), &dynamics.sigma(&x), &z, dt, d, m);
        steps += 1;
        let t1 = (k + 1) as f64 * dt;
        let mut killed = !domain.contains(&y);
        if !killed && cfg.exit_bridge {
            let p = bridge_crossing_probability(domain, &x, &y, &dynamics.diffusion(&x), dt);
            killed = rng.random::<f64>() < p;
        } else if cfg.exit_bridge {
            // Keep the stream aligned whether or not the step left the box.
            let _: f64 = rng.random();
        }
        if killed {
            exit_time = Some(t1);
            break;
        }
        x = y;
        rec.record(t1, &x);
    }
    let final_time = exit_time.unwrap_or(n_steps as f64 * dt);
    Ok(Trajectory {
        times: rec.times,
        states: rec.states,
        exit_time,
        exited: exit_time.is_some(),
        violations: 0,
        cost,
        final_state: x,
        final_time,
        steps,
    })
}

/// Simulates a controlled process from `x0` with boundary-adaptive steps and
/// rejection of boundary-crossing steps.
pub fn simulate_controlled<D, O>(
    dynamics: &D,
    domain: &BoxDomain,
    x0: &Point,
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
    mut observer: O,
) -> Result<Trajectory>
where
    D: Dynamics + ?Sized,
    O: FnMut(&Step),
{
    cfg.validate()?;
    check_start(dynamics, domain, x0)?;
    let (d, m) = (dynamics.dim(), dynamics.noise_dim());
    let mut rec = Recorder::new(cfg.output_stride);
    let mut x = *x0;
    let mut t = 0.0;
    let mut cost = [0.0; 2];
    let mut violations = 0;
    let mut steps = 0;
    rec.record(0.0, &x);
    while t < cfg.t_max * (1.0 - 1e-12) {
        let dist = domain.signed_distance(&x);
        let drift = dynamics.drift(&x);
        let sigma = dynamics.sigma(&x);
        let a = dynamics.diffusion(&x);
        let drift_norm = (0..d).map(|i| drift[i] * drift[i]).sum::<f64>().sqrt();
        let adaptive = cfg.boundary_safety * dist * dist / (matrix_norm(&a, d) + dist * drift_norm);
        let mut dt = cfg.dt_base.min(adaptive).min(cfg.t_max - t);
        if !(dt > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "adaptive step collapsed to {dt} at t = {t}, x = {:?}",
                &x[..d]
            )));
        }
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let z = noise(rng, m);
            let y = em_step(&x, &drift, &sigma, &z, dt, d, m);
            if domain.contains(&y) {
                accepted = Some(y);
                break;
            }
            dt *= 0.5;
        }
        let rate = dynamics.running_cost(&x);
        observer(&Step {
            t,
            x,
            dt,
            cost_rate: rate,
        });
        cost[0] += rate[0] * dt;
        cost[1] += rate[1] * dt;
        match accepted {
            Some(y) => x = y,
            None => violations += 1,
        }
        t += dt;
        steps += 1;
        rec.record(t, &x);
    }
    Ok(Trajectory {
        times: rec.times,
        states: rec.states,
        exit_time: None,
        exited: false,
        violations,
        cost,
        final_state: x,
        final_time: t,
        steps,
    })
}

/// Simulates one path with the seed of path `index`, killed or controlled
/// according to `cfg.kill_on_exit`.
pub fn simulate_path<D, O>(
    dynamics: &D,
    domain: &BoxDomain,
    x0: &Point,
    cfg: &SimConfig,
    index: u64,
    observer: O,
) -> Result<Trajectory>
where
    D: Dynamics + ?Sized,
    O: FnMut(&Step),
{
    let mut rng = ChaCha8Rng::seed_from_u64(path_seed(cfg.master_seed, index));
    if cfg.kill_on_exit {
        simulate_killed(dynamics, domain, x0, cfg, &mut rng, observer)
    } else {
        simulate_controlled(dynamics, domain, x0, cfg, &mut rng, observer)
    }
}

/// Samples points from a piecewise-constant density on the cells of a grid:
/// a cell by inverse CDF, then a uniform point inside it.
#[derive(Debug, Clone)]
pub struct CellSampler {
    grid: Grid,
    cdf: Vec<f64>,
}

impl CellSampler {
    pub fn new(grid: &Grid, cell_masses: &[f64]) -> Result<Self> {
        if cell_masses.len() != grid.cell_count() {
            return Err(Error::LengthMismatch {
                expected: grid.cell_count(),
                got: cell_masses.len(),
            });
        }
        let mut cdf = Vec::with_capacity(cell_masses.len());
        let mut acc = 0.0;
        for &m in cell_masses {
            if !(m >= 0.0) {
                return Err(Error::InvalidConfig(
                    "cell masses must be nonnegative".into(),
                ));
            }
            acc += m;
            cdf.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::InvalidConfig("cell masses sum to zero".into()));
        }
        cdf.iter_mut().for_each(|c| *c /= acc);
        Ok(Self {
            grid: grid.clone(),
            cdf,
        })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Point {
        let u: f64 = rng.random();
        let cell = self
            .cdf
            .partition_point(|&c| c <= u)
            .min(self.cdf.len() - 1);
        let mut x = self.grid.cell_origin(cell);
        for axis in 0..self.grid.dim() {
            // Open interval so the point is never on a face of the box.
            let s: f64 = rng.random();
            let s = s.clamp(1e-12, 1.0 - 1e-12);
            x[axis] += s * self.grid.spacing(axis);
        }
        x
    }
}

/// Initial law of ensemble paths.
#[derive(Debug, Clone)]
pub enum StartDistribution {
    Point(Point),
    Uniform,
    Cells(CellSampler),
}

impl StartDistribution {
    fn draw<R: Rng>(&self, domain: &BoxDomain, rng: &mut R) -> Point {
        match self {
            Self::Point(p) => *p,
            Self::Uniform => {
                let mut x = [0.0; MAX_DIM];
                for axis in 0..domain.dim() {
                    let s: f64 = rng.random();
                    x[axis] =
                        domain.lower()[axis] + s.clamp(1e-12, 1.0 - 1e-12) * domain.width(axis);
                }
                x
            }
            Self::Cells(sampler) => sampler.sample(rng),
        }
    }
}

/// Per-path outcome of an ensemble run.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSummary {
    pub start: Point,
    pub exit_time: Option<f64>,
    pub violations: usize,
    pub cost: [f64; 2],
    pub final_time: f64,
    /// Positions at the configured snapshot times; `None` once exited.
    pub snapshots: Vec<Option<Point>>,
}

/// Results of [`run_ensemble`], ordered by path index.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnsemble {
    pub master_seed: u64,
    pub kill_on_exit: bool,
    pub snapshot_times: Vec<f64>,
    pub paths: Vec<PathSummary>,
}

impl TrajectoryEnsemble {
    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    /// Number of paths still alive at each time (alive means no exit at or
    /// before `t`).
    pub fn survivors(&self, times: &[f64]) -> Vec<usize> {
        let mut exits: Vec<f64> = self.paths.iter().filter_map(|p| p.exit_time).collect();
        exits.sort_by(f64::total_cmp);
        times
            .iter()
            .map(|&t| self.n_paths() - exits.partition_point(|&e| e <= t))
            .collect()
    }

    pub fn total_violations(&self) -> usize {
        self.paths.iter().map(|p| p.violations).sum()
    }

    /// Positions of paths alive at snapshot `k`.
    pub fn snapshot_positions(&self, k: usize) -> Vec<Point> {
        self.paths
            .iter()
            .filter_map(|p| p.snapshots.get(k).copied().flatten())
            .collect()
    }
}

/// Runs `n_paths` independent paths in parallel. Path `i` uses the seed
/// [`path_seed`]`(master_seed, i)` for both its start state and its noise, so
/// results do not depend on the number of worker threads.
pub fn run_ensemble<D: Dynamics + ?Sized>(
    dynamics: &D,
    domain: &BoxDomain,
    start: &StartDistribution,
    n_paths: usize,
    cfg: &SimConfig,
) -> Result<TrajectoryEnsemble> {
    if n_paths == 0 {
        return Err(Error::InvalidConfig("n_paths must be at least 1".into()));
    }
    cfg.validate()?;
    let mut single = cfg.clone();
    single.output_stride = 0.0;
    let snaps = &cfg.snapshot_times;
    let paths: Result<Vec<PathSummary>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(path_seed(cfg.master_seed, i));
            let x0 = start.draw(domain, &mut rng);
            let mut snapshots = vec![None; snaps.len()];
            let mut next = 0;
            let observer = |s: &Step| {
                while next < snaps.len() && snaps[next] <= s.t + 1e-9 * s.dt {
                    snapshots[next] = Some(s.x);
                    next += 1;
                }
            };
            let traj = if cfg.kill_on_exit {
                simulate_killed(dynamics, domain, &x0, &single, &mut rng, observer)?
            } else {
                simulate_controlled(dynamics, domain, &x0, &single, &mut rng, observer)?
            };
            // Surviving paths fill the remaining snapshots with their final
            // state; the step grid may stop up to half a step short of t_max.
            if !traj.exited {
                for s in snapshots
                    .iter_mut()
                    .zip(snaps)
                    .filter(|(s, &t)| s.is_none() && t <= cfg.t_max + 1e-9)
                {
                    *s.0 = Some(traj.final_state);
                }
            }
            Ok(PathSummary {
                start: x0,
                exit_time: traj.exit_time,
                violations: traj.violations,
                cost: traj.cost,
                final_time: traj.final_time,
                snapshots,
            })
        })
        .collect();
    Ok(TrajectoryEnsemble {
        master_seed: cfg.master_seed,
        kill_on_exit: cfg.kill_on_exit,
        snapshot_times: snaps.clone(),
        paths: paths?,
    })
}

/// A probability density that is constant on the cells of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMeasure {
    pub bins: Grid,
    /// Density per cell: mass divided by cell volume.
    pub density: Vec<f64>,
}

impl CellMeasure {
    pub fn mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.bins.cell_volume()
    }

    /// Normalized histogram of a set of points.
    pub fn from_points(bins: &Grid, points: &[Point]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InsufficientData("no points to histogram".into()));
        }
        let mut counts = vec![0.0; bins.cell_count()];
        for p in points {
            if let Some(c) = bins.cell_of(p) {
                counts[c] += 1.0;
            }
        }
        let total: f64 = counts.iter().sum();
        if total == 0.0 {
            return Err(Error::InsufficientData(
                "no points inside the histogram box".into(),
            ));
        }
        let vol = bins.cell_volume();
        Ok(Self {
            bins: bins.clone(),
            density: counts.iter().map(|c| c / (total * vol)).collect(),
        })
    }
}

/// Time spent in each cell by a path after a burn-in time.
#[derive(Debug, Clone)]
pub struct OccupationHistogram {
    bins: Grid,
    burn_in: f64,
    time: Vec<f64>,
    total: f64,
}

impl OccupationHistogram {
    pub fn new(bins: &Grid, burn_in: f64) -> Self {
        Self {
            bins: bins.clone(),
            burn_in,
            time: vec![0.0; bins.cell_count()],
            total: 0.0,
        }
    }

    /// Adds the part of a step after the burn-in to the cell of its start.
    pub fn observe(&mut self, step: &Step) {
        let end = step.t + step.dt;
        if end <= self.burn_in {
            return;
        }
        let dt = end - step.t.max(self.burn_in);
        if let Some(c) = self.bins.cell_of(&step.x) {
            self.time[c] += dt;
            self.total += dt;
        }
    }

    pub fn retained_time(&self) -> f64 {
        self.total
    }

    /// Normalized time-weighted density.
    pub fn finish(&self) -> Result<CellMeasure> {
        if !(self.total > 0.0) {
            return Err(Error::InsufficientData(format!(
                "no time retained after burn-in {}",
                self.burn_in
            )));
        }
        let vol = self.bins.cell_volume();
        Ok(CellMeasure {
            bins: self.bins.clone(),
            density: self.time.iter().map(|t| t / (self.total * vol)).collect(),
        })
    }
}

/// Occupation density of a single long path after `burn_in`.
pub fn occupation_histogram<D: Dynamics + ?Sized>(
    dynamics: &D,
    domain: &BoxDomain,
    x0: &Point,
    cfg: &SimConfig,
    bins: &Grid,
    burn_in: f64,
) -> Result<(CellMeasure, Trajectory)> {
    let mut hist = OccupationHistogram::new(bins, burn_in);
    let traj = simulate_path(dynamics, domain, x0, cfg, 0, |s| hist.observe(s))?;
    Ok((hist.finish()?, traj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::GalleryModel;
    use approx::assert_relative_eq;

    fn unit() -> BoxDomain {
        BoxDomain::interval(1.0).unwrap()
    }

    fn quiet() -> GalleryModel {
        GalleryModel::DriftedBrownian {
            m: 0.0,
            sigma: 0.01,
        }
    }

    #[test]
    fn nearly_deterministic_path_stays_put() {
        let model = quiet();
        let cfg = SimConfig {
            t_max: 0.1,
            ..SimConfig::default()
        };
        let t =
            simulate_path(&Uncontrolled(&model), &unit(), &[0.5, 0.0], &cfg, 3, |_| {}).unwrap();
        assert!(!t.exited);
        assert!((t.final_state[0] - 0.5).abs() < 0.01);
        let mut ctl = cfg.clone();
        ctl.kill_on_exit = false;
        let t =
            simulate_path(&Uncontrolled(&model), &unit(), &[0.5, 0.0], &ctl, 3, |_| {}).unwrap();
        assert!((t.final_state[0] - 0.5).abs() < 0.01);
        assert_eq!(t.violations, 0);
    }

    #[test]
    fn start_outside_is_rejected() {
        let model = quiet();
        let r = simulate_path(
            &Uncontrolled(&model),
            &unit(),
            &[1.0, 0.0],
            &SimConfig::default(),
            0,
            |_| {},
        );
        assert!(matches!(r, Err(Error::OutsideDomain { .. })));
    }

    #[test]
    fn same_seed_same_path() {
        let model = GalleryModel::DriftedBrownian { m: 1.0, sigma: 1.0 };
        let cfg = SimConfig {
            output_stride: 0.01,
            t_max: 1.0,
            ..SimConfig::default()
        };
        let a =
            simulate_path(&Uncontrolled(&model), &unit(), &[0.5, 0.0], &cfg, 7, |_| {}).unwrap();
        let b =
            simulate_path(&Uncontrolled(&model), &unit(), &[0.5, 0.0], &cfg, 7, |_| {}).unwrap();
        assert_eq!(a, b);
        let c =
            simulate_path(&Uncontrolled(&model), &unit(), &[0.5, 0.0], &cfg, 8, |_| {}).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn ensemble_is_independent_of_worker_count() {
        let model = GalleryModel::DriftedBrownian { m: 1.0, sigma: 1.0 };
        let cfg = SimConfig {
            t_max: 1.0,
            master_seed: 42,
            snapshot_times: vec![0.0, 0.1],
            ..SimConfig::default()
        };
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    run_ensemble(
                        &Uncontrolled(&model),
                        &unit(),
                        &StartDistribution::Uniform,
                        100,
                        &cfg,
                    )
                    .unwrap()
                })
        };
        assert_eq!(run(1), run(8));
    }

    #[test]
    fn single_path_ensemble_matches_single_path() {
        let model = GalleryModel::DriftedBrownian { m: 1.0, sigma: 1.0 };
        let cfg = SimConfig {
            t_max: 2.0,
            master_seed: 5,
            ..SimConfig::default()
        };
        let ens = run_ensemble(
            &Uncontrolled(&model),
            &unit(),
            &StartDistribution::Point([0.3, 0.0]),
            1,
            &cfg,
        )
        .unwrap();
        let single =
            simulate_path(&Uncontrolled(&model), &unit(), &[0.3, 0.0], &cfg, 0, |_| {}).unwrap();
        assert_eq!(ens.paths[0].exit_time, single.exit_time);
    }

    #[test]
    fn survivors_are_nonincreasing() {
        let model = GalleryModel::DriftedBrownian { m: 1.0, sigma: 1.0 };
        let cfg = SimConfig {
            t_max: 1.0,
            ..SimConfig::default()
        };
        let ens = run_ensemble(
            &Uncontrolled(&model),
            &unit(),
            &StartDistribution::Uniform,
            500,
            &cfg,
        )
        .unwrap();
        let times: Vec<f64> = (0..=20).map(|k| k as f64 * 0.05).collect();
        let s = ens.survivors(&times);
        assert_eq!(s[0], 500);
        assert!(s.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn mean_exit_time_of_brownian_motion() {
        // E tau = x (1 - x) for standard Brownian motion on (0, 1).
        let model = GalleryModel::DriftedBrownian { m: 0.0, sigma: 1.0 };
        let cfg = SimConfig {
            t_max: 20.0,
            master_seed: 11,
            ..SimConfig::default()
        };
        let ens = run_ensemble(
            &Uncontrolled(&model),
            &unit(),
            &StartDistribution::Point([0.5, 0.0]),
            20_000,
            &cfg,
        )
        .unwrap();
        let times: Vec<f64> = ens.paths.iter().map(|p| p.exit_time.unwrap()).collect();
        let n = times.len() as f64;
        let mean = times.iter().sum::<f64>() / n;
        let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!((mean - 0.25).abs() < 3.0 * se + 1e-3, "mean {mean} se {se}");
    }

    #[test]
    fn different_master_seeds_agree_statistically() {
        let model = GalleryModel::DriftedBrownian { m: 1.0, sigma: 1.0 };
        let mean = |seed: u64| {
            let cfg = SimConfig {
                t_max: 20.0,
                master_seed: seed,
                ..SimConfig::default()
            };
            let ens = run_ensemble(
                &Uncontrolled(&model),
                &unit(),
                &StartDistribution::Point([0.5, 0.0]),
                5000,
                &cfg,
            )
            .unwrap();
            let t: Vec<f64> = ens.paths.iter().map(|p| p.exit_time.unwrap()).collect();
            let m = t.iter().sum::<f64>() / t.len() as f64;
            let v = t.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (t.len() as f64 - 1.0);
            (m, v / t.len() as f64)
        };
        let (a, va) = mean(1);
        let (b, vb) = mean(2);
        assert_ne!(a, b);
        assert!((a - b).abs() < 4.0 * (va + vb).sqrt());
    }

    #[test]
    fn frozen_path_gives_point_mass_histogram() {
        let model = GalleryModel::DriftedBrownian {
            m: 0.0,
            sigma: 1e-6,
        };
        let bins = Grid::new(unit(), &[10]).unwrap();
        let cfg = SimConfig {
            t_max: 0.5,
            kill_on_exit: false,
            ..SimConfig::default()
        };
        let (hist, _) = occupation_histogram(
            &Uncontrolled(&model),
            &unit(),
            &[0.55, 0.0],
            &cfg,
            &bins,
            0.0,
        )
        .unwrap();
        assert_relative_eq!(hist.mass(), 1.0, max_relative = 1e-12);
        assert_relative_eq!(
            hist.density[5] * bins.cell_volume(),
            1.0,
            max_relative = 1e-12
        );
        let late = OccupationHistogram::new(&bins, 1.0);
        assert!(late.finish().is_err());
    }

    #[test]
    fn cell_sampler_respects_masses() {
        let bins = Grid::new(unit(), &[4]).unwrap();
        let sampler = CellSampler::new(&bins, &[0.0, 1.0, 3.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Point> = (0..20_000).map(|_| sampler.sample(&mut rng)).collect();
        let h = CellMeasure::from_points(&bins, &pts).unwrap();
        assert_eq!(h.density[0], 0.0);
        assert_eq!(h.density[3], 0.0);
        assert!((h.density[2] * 0.25 - 0.75).abs() < 0.02);
    }

    #[test]
    fn bridge_probability_limits() {
        let d = unit();
        let a = [[1.0, 0.0], [0.0, 0.0]];
        assert!(bridge_crossing_probability(&d, &[0.5, 0.0], &[0.5, 0.0], &a, 1e-3) < 1e-50);
        let p = bridge_crossing_probability(&d, &[1e-4, 0.0], &[1e-4, 0.0], &a, 1e-3);
        assert_relative_eq!(
            p,
            1.0 - (1.0 - (-2e-8f64 / 1e-3).exp()),
            max_relative = 1e-6
        );
    }

    #[test]
    fn invalid_configs() {
        let bad = SimConfig {
            dt_base: 0.0,
            ..SimConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SimConfig {
            boundary_safety: 1.0,
            ..SimConfig::default()
        };
        assert!(bad.validate().is_err());
        let model = quiet();
        assert!(run_ensemble(
            &Uncontrolled(&model),
            &unit(),
            &StartDistribution::Uniform,
            0,
            &SimConfig::default()
        )
        .is_err());
    }
}
