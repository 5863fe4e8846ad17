//! Monte-Carlo pipeline runs, comparison against reference dynamics,
//! ε-sweeps with log-log slope fits, and noise diagnostics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coarse::{density_series, window_average, CovarianceEstimate, DensityPoint, WindowConfig};
use crate::error::{DcmError, Result};
use crate::gksl::{integrate_master, IntegrateOptions, MasterEquationSpec, ReferenceSeries, ReferenceVariant};
use crate::hilbert::{normalize_to_density, tensor_product_vec, ComplexMatrix, ComplexVector, ZERO};
use crate::micro::{evolve_trajectory, random_haar_state, MicroState, Mode, SystemSpec};
use crate::noise::{NoiseModel, RngStream};

/// Trajectories per work unit. Fixed so merge order, and therefore every
/// floating-point result, is independent of the worker count.
/// Per-trajectory window averages, indexed `[trajectory][tau]`.
pub type Windows = Vec<Vec<ComplexVector>>;

pub const BLOCK_SIZE: usize = 64;
/// Minimum ensemble for a pipeline point.
pub const MIN_ENSEMBLE: usize = 100;
/// A sweep point enters the slope fit only if `error > RESOLVE_SIGMAS · SE`.
pub const RESOLVE_SIGMAS: f64 = 5.0;
/// Errors at or below this are treated as roundoff, never as resolved.
pub const ROUNDOFF_FLOOR: f64 = 1e-10;
pub const BOOTSTRAP_RESAMPLES: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialState {
    /// Every trajectory starts from `x ⊗ y`.
    Fixed { x: ComplexVector, y: ComplexVector },
    /// Independent Haar-random `x`, `y` per trajectory.
    RandomHaar,
}

impl InitialState {
    /// Initial reference density operator: the normalized product state,
    /// or the maximally mixed state for a Haar ensemble.
    pub fn reference_rho(&self, dim: usize) -> Result<ComplexMatrix> {
        match self {
            InitialState::Fixed { x, y } => {
                let z = tensor_product_vec(x, y);
                if z.dim() != dim {
                    return Err(DcmError::dim("initial state against composite dimension"));
                }
                normalize_to_density(&ComplexMatrix::outer(&z, &z))
            }
            InitialState::RandomHaar => Ok(ComplexMatrix::identity(dim).scale_real(1.0 / dim as f64)),
        }
    }

    fn draw(&self, spec: &SystemSpec, stream: &mut RngStream) -> (ComplexVector, ComplexVector) {
        match self {
            InitialState::Fixed { x, y } => (x.clone(), y.clone()),
            InitialState::RandomHaar => {
                let dims = spec.dims();
                let x = random_haar_state(dims.dim_a, stream);
                let y = random_haar_state(dims.dim_b, stream);
                (x, y)
            }
        }
    }
}

/// Everything about a pipeline run besides the system and the scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub mode: Mode,
    pub initial: InitialState,
    pub seed: u64,
    /// `None` uses the available parallelism.
    pub workers: Option<usize>,
    pub reference_variant: ReferenceVariant,
    /// Keep per-trajectory window vectors for resampling.
    pub keep_windows: bool,
}

impl RunSettings {
    pub fn new(mode: Mode, initial: InitialState, seed: u64, variant: ReferenceVariant) -> Self {
        Self {
            mode,
            initial,
            seed,
            workers: None,
            reference_variant: variant,
            keep_windows: true,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = Some(workers);
        self
    }
}

/// Ensemble output of one `(ε, N)` pipeline point.
#[derive(Debug, Clone)]
pub struct PointResult {
    pub window: WindowConfig,
    pub ensemble_size: usize,
    pub estimates: Vec<CovarianceEstimate>,
    pub density: Vec<DensityPoint>,
    /// Reference evaluated at each window center `τ + Δ/2`.
    pub reference: ReferenceSeries,
    /// `‖ρ_MC(τ) − ρ_ref(τ + Δ/2)‖_F` per grid point.
    pub errors: Vec<f64>,
    /// Sup over the grid of `errors`.
    pub error: f64,
    /// Largest Frobenius-norm standard error of `ρ_MC` over the grid.
    pub max_se: f64,
    /// `windows[trajectory][tau]`, present when requested.
    pub windows: Option<Windows>,
}

impl PointResult {
    /// `ρ_MC(τ)` for every grid point recomputed from the given trajectory
    /// multiset.
    pub fn resampled_density(&self, indices: &[usize]) -> Result<Vec<ComplexMatrix>> {
        let windows = self
            .windows
            .as_ref()
            .ok_or_else(|| DcmError::config("per-trajectory windows were not kept"))?;
        let n_tau = self.window.tau_grid.len();
        let dim = self.estimates[0].dim();
        let mut sums = vec![ComplexMatrix::zeros(dim, dim); n_tau];
        for &i in indices {
            for (sum, v) in sums.iter_mut().zip(&windows[i]) {
                add_outer(sum, v);
            }
        }
        sums.iter().map(normalize_to_density).collect()
    }

    fn reference_rhos(&self) -> Vec<&ComplexMatrix> {
        self.reference.points.iter().map(|p| &p.rho).collect()
    }

    fn error_for(&self, rhos: &[ComplexMatrix]) -> f64 {
        rhos.iter()
            .zip(self.reference_rhos())
            .map(|(a, b)| a.distance(b))
            .fold(0.0, f64::max)
    }
}

fn add_outer(sum: &mut ComplexMatrix, v: &ComplexVector) {
    let d = v.dim();
    let s = v.as_slice();
    let data = sum.as_mut_slice();
    for i in 0..d {
        for j in 0..d {
            data[i * d + j] += s[i] * s[j].conj();
        }
    }
}

struct BlockOutput {
    estimates: Vec<CovarianceEstimate>,
    windows: Windows,
}

fn run_block(
    spec: &SystemSpec,
    window: &WindowConfig,
    settings: &RunSettings,
    range: std::ops::Range<usize>,
) -> Result<BlockOutput> {
    let dim = spec.dims().composite();
    let mut estimates: Vec<_> = window
        .tau_grid
        .iter()
        .map(|&tau| CovarianceEstimate::new(tau, dim))
        .collect();
    let mut windows = Vec::new();
    let n_steps = window.n_steps();
    for traj in range {
        let mut stream = RngStream::new(settings.seed, traj as u64);
        let (x, y) = settings.initial.draw(spec, &mut stream);
        let state = MicroState::new(x, y, stream);
        let series = evolve_trajectory(spec, state, window.dt_micro, n_steps, settings.mode, 1)?;
        let mut row = Vec::with_capacity(window.tau_grid.len());
        for (est, &tau) in estimates.iter_mut().zip(&window.tau_grid) {
            let c = window_average(&series, tau, window.delta)?;
            est.accumulate(&c)?;
            if settings.keep_windows {
                row.push(c);
            }
        }
        if settings.keep_windows {
            windows.push(row);
        }
    }
    Ok(BlockOutput { estimates, windows })
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| DcmError::config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Run the ensemble and return the merged per-τ estimates plus the
/// optional per-trajectory windows.
pub fn run_ensemble(
    spec: &SystemSpec,
    window: &WindowConfig,
    ensemble_size: usize,
    settings: &RunSettings,
) -> Result<(Vec<CovarianceEstimate>, Option<Windows>)> {
    if settings.mode == Mode::Free && !spec.interaction().is_empty() {
        return Err(DcmError::config(
            "free mode ignores the interaction; use interacting mode or drop the terms",
        ));
    }
    spec.check_dt(window.dt_micro)?;
    let blocks: Vec<_> = (0..ensemble_size)
        .step_by(BLOCK_SIZE)
        .map(|start| start..(start + BLOCK_SIZE).min(ensemble_size))
        .collect();
    let outputs: Vec<Result<BlockOutput>> = with_pool(settings.workers, || {
        blocks
            .into_par_iter()
            .map(|r| run_block(spec, window, settings, r))
            .collect()
    })?;
    let dim = spec.dims().composite();
    let mut merged: Vec<_> = window
        .tau_grid
        .iter()
        .map(|&tau| CovarianceEstimate::new(tau, dim))
        .collect();
    let mut windows = settings.keep_windows.then(Vec::new);
    for out in outputs {
        let out = out?;
        for (m, e) in merged.iter_mut().zip(&out.estimates) {
            *m = m.merge(e)?;
        }
        if let Some(w) = windows.as_mut() {
            w.extend(out.windows);
        }
    }
    Ok((merged, windows))
}

/// Reference density operators at the window centers `τ + Δ/2`.
pub fn reference_at_centers(
    spec: &SystemSpec,
    window: &WindowConfig,
    initial: &InitialState,
    variant: ReferenceVariant,
) -> Result<ReferenceSeries> {
    let master = MasterEquationSpec::from_system(spec, variant)?;
    let rho0 = initial.reference_rho(spec.dims().composite())?;
    let grid: Vec<f64> = window.tau_grid.iter().map(|t| t + 0.5 * window.delta).collect();
    integrate_master(&rho0, &master, &grid, &IntegrateOptions::default())
}

/// Full pipeline micro → coarse grain → `ρ_MC`, compared with the reference.
pub fn run_point(
    spec: &SystemSpec,
    window: &WindowConfig,
    ensemble_size: usize,
    settings: &RunSettings,
) -> Result<PointResult> {
    if ensemble_size < MIN_ENSEMBLE {
        return Err(DcmError::config(format!(
            "ensemble size {ensemble_size} is below the minimum {MIN_ENSEMBLE}"
        )));
    }
    let (estimates, windows) = run_ensemble(spec, window, ensemble_size, settings)?;
    let reference = reference_at_centers(spec, window, &settings.initial, settings.reference_variant)?;
    let density = density_series(&estimates)?;
    let errors: Vec<f64> = density
        .iter()
        .zip(&reference.points)
        .map(|(p, r)| p.rho.distance(&r.rho))
        .collect();
    let error = errors.iter().copied().fold(0.0, f64::max);
    let max_se = density.iter().map(|p| p.rho_se).fold(0.0, f64::max);
    Ok(PointResult {
        window: window.clone(),
        ensemble_size,
        estimates,
        density,
        reference,
        errors,
        error,
        max_se,
        windows,
    })
}

/// Resample trajectory indices with replacement.
fn resample(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Ordinary least squares `y = a + b x`; returns `(a, b)`.
pub fn ols(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((my - slope * mx, slope))
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub epsilons: Vec<f64>,
    pub c_delta: f64,
    pub c_dt: f64,
    pub ensemble_size: usize,
    pub tau_grid: Vec<f64>,
    pub reference_variant: ReferenceVariant,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<Vec<WindowConfig>> {
        if self.epsilons.len() < 3 {
            return Err(DcmError::config("a sweep needs at least 3 epsilon points"));
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(DcmError::config("sweep epsilons must be strictly decreasing"));
        }
        if self.ensemble_size < MIN_ENSEMBLE {
            return Err(DcmError::config(format!(
                "ensemble size {} is below the minimum {MIN_ENSEMBLE}",
                self.ensemble_size
            )));
        }
        self.epsilons
            .iter()
            .map(|&e| WindowConfig::new(e, self.c_delta, self.c_dt, self.tau_grid.clone()))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub delta: f64,
    pub dt_micro: f64,
    pub error: f64,
    pub max_se: f64,
    pub resolved: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingReport {
    pub per_epsilon: Vec<SweepPoint>,
    pub fitted_slope: f64,
    /// `ln K` in `error ≈ K ε^slope`.
    pub fitted_intercept: f64,
    pub slope_ci: (f64, f64),
    pub n_resolved: usize,
    pub bootstrap_resamples: usize,
}

pub fn is_resolved(error: f64, max_se: f64) -> bool {
    error > RESOLVE_SIGMAS * max_se && error > ROUNDOFF_FLOOR
}

/// Fit `ln error = ln K + slope · ln ε` over the resolved points of
/// already-computed pipeline runs, with a percentile bootstrap CI that
/// resamples trajectories within each point.
pub fn fit_scaling(points: &[PointResult], seed: u64) -> Result<ScalingReport> {
    let per_epsilon: Vec<SweepPoint> = points
        .iter()
        .map(|p| SweepPoint {
            epsilon: p.window.epsilon,
            delta: p.window.delta,
            dt_micro: p.window.dt_micro,
            error: p.error,
            max_se: p.max_se,
            resolved: is_resolved(p.error, p.max_se),
        })
        .collect();
    let used: Vec<usize> = (0..points.len()).filter(|&i| per_epsilon[i].resolved).collect();
    if used.len() < 2 {
        return Err(DcmError::InconclusiveSweep {
            resolved: used.len(),
            total: points.len(),
        });
    }
    let fit = |errors: &[f64]| -> Option<(f64, f64)> {
        let x: Vec<f64> = used.iter().map(|&i| points[i].window.epsilon.ln()).collect();
        let y: Vec<f64> = used.iter().map(|&i| errors[i].max(f64::MIN_POSITIVE).ln()).collect();
        ols(&x, &y)
    };
    let errors: Vec<f64> = points.iter().map(|p| p.error).collect();
    let (intercept, slope) = fit(&errors).ok_or_else(|| DcmError::config("degenerate epsilon grid"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slopes = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let can_resample = points.iter().all(|p| p.windows.is_some());
    if can_resample {
        for _ in 0..BOOTSTRAP_RESAMPLES {
            let mut errs = errors.clone();
            for &i in &used {
                let p = &points[i];
                let idx = resample(&mut rng, p.ensemble_size);
                errs[i] = p.error_for(&p.resampled_density(&idx)?);
            }
            if let Some((_, s)) = fit(&errs) {
                slopes.push(s);
            }
        }
    }
    slopes.sort_by(f64::total_cmp);
    let slope_ci = if slopes.is_empty() {
        (slope, slope)
    } else {
        (percentile(&slopes, 0.025), percentile(&slopes, 0.975))
    };
    Ok(ScalingReport {
        per_epsilon,
        fitted_slope: slope,
        fitted_intercept: intercept,
        slope_ci,
        n_resolved: used.len(),
        bootstrap_resamples: slopes.len(),
    })
}

/// Run every sweep point and fit the error-vs-ε scaling law.
pub fn run_sweep(
    sweep: &SweepConfig,
    spec: &SystemSpec,
    settings: &RunSettings,
) -> Result<(ScalingReport, Vec<PointResult>)> {
    let windows = sweep.validate()?;
    let mut settings = settings.clone();
    settings.reference_variant = sweep.reference_variant;
    settings.keep_windows = true;
    let points = windows
        .iter()
        .map(|w| run_point(spec, w, sweep.ensemble_size, &settings))
        .collect::<Result<Vec<_>>>()?;
    let report = fit_scaling(&points, settings.seed)?;
    Ok((report, points))
}

/// Least-squares bias model `error ≈ a Δ² + b δt` (no intercept).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasEnvelope {
    pub a: f64,
    pub b: f64,
    /// Covariance of `(a, b)` from the fit residuals.
    pub cov: [[f64; 2]; 2],
    pub n_points: usize,
}

impl BiasEnvelope {
    pub fn fit(points: &[(f64, f64, f64)]) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Err(DcmError::config("bias envelope needs at least 2 points"));
        }
        let (mut s11, mut s12, mut s22, mut t1, mut t2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(delta, dt, err) in points {
            let u = delta * delta;
            s11 += u * u;
            s12 += u * dt;
            s22 += dt * dt;
            t1 += u * err;
            t2 += dt * err;
        }
        let det = s11 * s22 - s12 * s12;
        if det.abs() <= 1e-14 * s11 * s22 {
            return Err(DcmError::config("bias envelope design is singular"));
        }
        let a = (s22 * t1 - s12 * t2) / det;
        let b = (s11 * t2 - s12 * t1) / det;
        let rss: f64 = points
            .iter()
            .map(|&(delta, dt, err)| (err - a * delta * delta - b * dt).powi(2))
            .sum();
        let s2 = if n > 2 { rss / (n - 2) as f64 } else { 0.0 };
        let cov = [
            [s2 * s22 / det, -s2 * s12 / det],
            [-s2 * s12 / det, s2 * s11 / det],
        ];
        Ok(Self { a, b, cov, n_points: n })
    }

    /// Predicted bias and its standard error at `(Δ, δt)`.
    pub fn predict(&self, delta: f64, dt: f64) -> (f64, f64) {
        let u = delta * delta;
        let value = self.a * u + self.b * dt;
        let var = u * u * self.cov[0][0] + 2.0 * u * dt * self.cov[0][1] + dt * dt * self.cov[1][1];
        (value, var.max(0.0).sqrt())
    }
}

/// Decay rate estimate from a log-linear fit with its bootstrap SE.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateEstimate {
    pub rate: f64,
    pub std_error: f64,
}

/// `−slope` of `ln f(ρ(τ))` against `τ`.
pub fn decay_rate(taus: &[f64], rhos: &[ComplexMatrix], f: &dyn Fn(&ComplexMatrix) -> f64) -> Option<f64> {
    let y: Vec<f64> = rhos.iter().map(|r| f(r).ln()).collect();
    ols(taus, &y).map(|(_, s)| -s)
}

/// Decay rate of an observable of `ρ_MC` with a trajectory bootstrap SE.
pub fn bootstrap_rate(
    point: &PointResult,
    f: &dyn Fn(&ComplexMatrix) -> f64,
    resamples: usize,
    seed: u64,
) -> Result<RateEstimate> {
    let taus = &point.window.tau_grid;
    let rhos: Vec<ComplexMatrix> = point.density.iter().map(|p| p.rho.clone()).collect();
    let rate = decay_rate(taus, &rhos, f).ok_or_else(|| DcmError::config("need at least 2 tau points"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rates = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        let idx = resample(&mut rng, point.ensemble_size);
        if let Some(r) = decay_rate(taus, &point.resampled_density(&idx)?, f) {
            if r.is_finite() {
                rates.push(r);
            }
        }
    }
    let n = rates.len() as f64;
    let std_error = if rates.len() > 1 {
        let m = rates.iter().sum::<f64>() / n;
        (rates.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(RateEstimate { rate, std_error })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmergenceReport {
    pub epsilon: f64,
    pub error: f64,
    pub max_se: f64,
    pub errors: Vec<f64>,
}

/// ξ-feedback micro-dynamics against the von Neumann evolution with the
/// explicit interaction Hamiltonian.
pub fn interaction_emergence_test(
    spec: &SystemSpec,
    window: &WindowConfig,
    ensemble_size: usize,
    initial: InitialState,
    seed: u64,
) -> Result<(EmergenceReport, PointResult)> {
    if spec.interaction().is_empty() {
        return Err(DcmError::config("interaction emergence needs at least one interaction term"));
    }
    if !spec.noise().is_zero() {
        return Err(DcmError::config("interaction emergence requires zero noise covariance"));
    }
    let settings = RunSettings::new(Mode::Interacting, initial, seed, ReferenceVariant::VonNeumann);
    let point = run_point(spec, window, ensemble_size, &settings)?;
    let report = EmergenceReport {
        epsilon: window.epsilon,
        error: point.error,
        max_se: point.max_se,
        errors: point.errors.clone(),
    };
    Ok((report, point))
}

/// One lag of the increment autocorrelation table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarkovRow {
    pub lag: usize,
    /// `E[dW(t) dW(t + k δt)†]` over the joint channels.
    pub estimate: ComplexMatrix,
    pub expected: ComplexMatrix,
    pub std_error: Vec<f64>,
}

impl MarkovRow {
    /// Largest `|estimate − expected| / SE` over entries; entries with zero
    /// SE count only if they deviate.
    pub fn max_z(&self) -> f64 {
        let n = self.estimate.cols();
        let mut worst: f64 = 0.0;
        for (idx, se) in self.std_error.iter().enumerate() {
            let dev = (self.estimate[(idx / n, idx % n)] - self.expected[(idx / n, idx % n)]).norm();
            let z = if *se > 0.0 {
                dev / se
            } else if dev > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            worst = worst.max(z);
        }
        worst
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarkovTable {
    pub dt: f64,
    pub n_samples: usize,
    pub rows: Vec<MarkovRow>,
}

impl MarkovTable {
    pub fn within(&self, sigmas: f64) -> bool {
        self.rows.iter().all(|r| r.max_z() <= sigmas)
    }
}

/// Empirical lagged second moments of the joint increments for lags
/// `0..=lags`, each averaged over `n_samples` start times.
pub fn markov_diagnostics(
    model: &NoiseModel,
    dt: f64,
    lags: usize,
    n_samples: usize,
    stream: &mut RngStream,
) -> MarkovTable {
    let n = model.n_channels();
    let hist_len = lags + 1;
    let mut history = vec![vec![ZERO; n]; hist_len];
    for slot in history.iter_mut().take(lags) {
        model.sample_into(dt, stream, slot);
    }
    let mut mean = vec![vec![ZERO; n * n]; hist_len];
    let mut m2 = vec![vec![0.0; n * n]; hist_len];
    let mut buf = vec![ZERO; n];
    for s in 0..n_samples {
        model.sample_into(dt, stream, &mut buf);
        history[(s + lags) % hist_len].clone_from(&buf);
        let head = &history[s % hist_len];
        let count = (s + 1) as f64;
        for k in 0..hist_len {
            let later = &history[(s + k) % hist_len];
            for (i, hi) in head.iter().enumerate() {
                for (j, lj) in later.iter().enumerate() {
                    let idx = i * n + j;
                    let x = hi * lj.conj();
                    let delta = x - mean[k][idx];
                    mean[k][idx] += delta / count;
                    let after = x - mean[k][idx];
                    m2[k][idx] += delta.re * after.re + delta.im * after.im;
                }
            }
        }
    }
    let ns = n_samples as f64;
    let rows = (0..hist_len)
        .map(|k| {
            let expected = if k == 0 {
                model.joint().scale_real(dt)
            } else {
                ComplexMatrix::zeros(n, n)
            };
            MarkovRow {
                lag: k,
                estimate: ComplexMatrix::from_row_major(n, n, mean[k].clone()).expect("square"),
                expected,
                std_error: m2[k]
                    .iter()
                    .map(|&v| if n_samples > 1 { (v / (ns - 1.0) / ns).sqrt() } else { f64::INFINITY })
                    .collect(),
            }
        })
        .collect();
    MarkovTable {
        dt,
        n_samples,
        rows,
    }
}

/// Frobenius-norm distance between matching series entries, sup over τ.
pub fn sup_frobenius(a: &[ComplexMatrix], b: &[ComplexMatrix]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.distance(y)).fold(0.0, f64::max)
}
