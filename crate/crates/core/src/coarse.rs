//! Sliding-window coarse graining and the ensemble double covariance.
//!
//! For one trajectory the window average is `C_Δ(τ) = (1/Δ) ∫_τ^{τ+Δ} Z_t dt`.
//! The double covariance `C(τ) = E[C_Δ C_Δ†]` is an uncentered second moment
//! estimated with Welford running sums, so estimates from disjoint batches
//! merge exactly.

use serde::{Deserialize, Serialize};

use crate::error::{DcmError, Result};
use crate::hilbert::{normalize_to_density, ComplexMatrix, ComplexVector, C64, ZERO};
use crate::micro::TimeSeries;

/// Minimum recorded samples inside a window.
pub const MIN_WINDOW_SAMPLES: usize = 10;
/// Minimum `Δ / δt`.
pub const MIN_SCALE_RATIO: f64 = 10.0;

/// Scale hierarchy `Δ = c_Δ ε`, `δt = c_δ ε²` and the macro time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub epsilon: f64,
    pub c_delta: f64,
    pub c_dt: f64,
    pub delta: f64,
    pub dt_micro: f64,
    pub tau_grid: Vec<f64>,
}

impl WindowConfig {
    pub fn new(epsilon: f64, c_delta: f64, c_dt: f64, tau_grid: Vec<f64>) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(DcmError::config(format!("epsilon must lie in (0, 1), got {epsilon}")));
        }
        if !(c_delta > 0.0 && c_dt > 0.0) {
            return Err(DcmError::config("scale constants must be positive"));
        }
        let cfg = Self {
            epsilon,
            c_delta,
            c_dt,
            delta: c_delta * epsilon,
            dt_micro: c_dt * epsilon * epsilon,
            tau_grid,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replace the derived micro step with an explicit one.
    pub fn with_dt(mut self, dt: f64) -> Result<Self> {
        self.dt_micro = dt;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.dt_micro.is_nan() || self.dt_micro <= 0.0 || self.dt_micro >= self.delta {
            return Err(DcmError::config(format!(
                "micro step {} must be positive and below the window {}",
                self.dt_micro, self.delta
            )));
        }
        let ratio = self.delta / self.dt_micro;
        if ratio < MIN_SCALE_RATIO * (1.0 - 1e-12) {
            return Err(DcmError::config(format!(
                "scale separation Δ/δt = {ratio:.3} at ε = {} is below {MIN_SCALE_RATIO}",
                self.epsilon
            )));
        }
        if self.tau_grid.is_empty() {
            return Err(DcmError::config("tau grid is empty"));
        }
        if self.tau_grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(DcmError::config("tau grid entries must be finite and non-negative"));
        }
        if self.tau_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DcmError::config("tau grid must be strictly increasing"));
        }
        Ok(())
    }

    pub fn scale_ratio(&self) -> f64 {
        self.delta / self.dt_micro
    }

    /// Micro steps needed so every window on the grid is covered.
    pub fn n_steps(&self) -> usize {
        let horizon = self.tau_grid.last().copied().unwrap_or(0.0) + self.delta;
        (horizon / self.dt_micro * (1.0 + 1e-12)).ceil() as usize + 1
    }
}

/// `(1/Δ) ∫_τ^{τ+Δ} Z_t dt` by the trapezoidal rule on the recorded samples,
/// with linear interpolation at window edges that fall between samples.
pub fn window_average(series: &TimeSeries, tau: f64, delta: f64) -> Result<ComplexVector> {
    let h = series.spacing;
    let n = series.len();
    let slack = 1e-9 * h;
    let (a, b) = (tau, tau + delta);
    let inside = (0..n)
        .filter(|&k| {
            let t = series.time(k);
            t >= a - slack && t <= b + slack
        })
        .count();
    let covered = n >= 2 && a >= series.t0 - slack && b <= series.t_end() + slack;
    if delta.is_nan() || delta <= 0.0 || !covered || inside < MIN_WINDOW_SAMPLES {
        return Err(DcmError::WindowUnderflow {
            tau,
            delta,
            samples: inside,
        });
    }

    let dim = series.values[0].dim();
    let mut acc = vec![ZERO; dim];
    let value_at = |t: f64| -> Vec<C64> {
        let s = ((t - series.t0) / h).clamp(0.0, (n - 1) as f64);
        let k = (s.floor() as usize).min(n - 2);
        let w = s - k as f64;
        let (lo, hi) = (&series.values[k], &series.values[k + 1]);
        lo.iter()
            .zip(hi.iter())
            .map(|(p, q)| p * (1.0 - w) + q * w)
            .collect()
    };

    let first = (((a - series.t0) / h) + 1e-9).floor().max(0.0) as usize;
    let mut k = first;
    while k + 1 < n {
        let (t0, t1) = (series.time(k), series.time(k + 1));
        if t0 >= b - slack {
            break;
        }
        let (u, v) = (t0.max(a), t1.min(b));
        if v > u {
            let weight = 0.5 * (v - u);
            let (fu, fv) = if (u - t0).abs() <= slack && (v - t1).abs() <= slack {
                (
                    series.values[k].as_slice().to_vec(),
                    series.values[k + 1].as_slice().to_vec(),
                )
            } else {
                (value_at(u), value_at(v))
            };
            for ((s, p), q) in acc.iter_mut().zip(&fu).zip(&fv) {
                *s += (p + q) * weight;
            }
        }
        k += 1;
    }
    for s in acc.iter_mut() {
        *s /= delta;
    }
    Ok(ComplexVector::from_vec(acc))
}

/// Running estimate of `C(τ) = E[C_Δ C_Δ†]` with per-entry Welford moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub tau: f64,
    dim: usize,
    n_samples: u64,
    mean: Vec<C64>,
    m2: Vec<f64>,
    trace_mean: f64,
    m2_trace: f64,
    /// Co-moment of each entry with the trace, for the ratio `ρ = C / Tr C`.
    m_ct: Vec<C64>,
}

impl CovarianceEstimate {
    pub fn new(tau: f64, dim: usize) -> Self {
        Self {
            tau,
            dim,
            n_samples: 0,
            mean: vec![ZERO; dim * dim],
            m2: vec![0.0; dim * dim],
            trace_mean: 0.0,
            m2_trace: 0.0,
            m_ct: vec![ZERO; dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_samples(&self) -> u64 {
        self.n_samples
    }

    pub fn mean(&self) -> ComplexMatrix {
        ComplexMatrix::from_row_major(self.dim, self.dim, self.mean.clone()).expect("square")
    }

    /// Standard error of each entry of the mean (row-major), using the
    /// complex variance `E|x − μ|²`.
    pub fn std_errors(&self) -> Vec<f64> {
        let n = self.n_samples as f64;
        self.m2
            .iter()
            .map(|&m| {
                if self.n_samples > 1 {
                    (m / (n - 1.0) / n).sqrt()
                } else {
                    f64::INFINITY
                }
            })
            .collect()
    }

    pub fn max_std_error(&self) -> f64 {
        self.std_errors().into_iter().fold(0.0, f64::max)
    }

    /// Delta-method standard errors of `ρ = C / Tr C` (row-major), which
    /// account for the fluctuation of the normalizing trace.
    pub fn rho_std_errors(&self) -> Vec<f64> {
        let n = self.n_samples as f64;
        if self.n_samples < 2 {
            return vec![f64::INFINITY; self.mean.len()];
        }
        let t = self.trace_mean;
        (0..self.mean.len())
            .map(|idx| {
                let rho = self.mean[idx] / t;
                let m = self.m2[idx] - 2.0 * (rho.conj() * self.m_ct[idx]).re
                    + rho.norm_sqr() * self.m2_trace;
                (m.max(0.0) / (n - 1.0) / n).sqrt() / t.abs()
            })
            .collect()
    }

    /// Frobenius-norm standard error of `ρ`.
    pub fn rho_frobenius_se(&self) -> f64 {
        self.rho_std_errors().iter().map(|s| s * s).sum::<f64>().sqrt()
    }

    /// Rank-1 update with the outer product `c c†`.
    pub fn accumulate(&mut self, c_delta: &ComplexVector) -> Result<()> {
        if c_delta.dim() != self.dim {
            return Err(DcmError::dim(format!(
                "window vector of dim {} into estimate of dim {}",
                c_delta.dim(),
                self.dim
            )));
        }
        self.n_samples += 1;
        let inv_n = 1.0 / self.n_samples as f64;
        let v = c_delta.as_slice();
        let t = c_delta.norm_sqr();
        let dt = t - self.trace_mean;
        self.trace_mean += dt * inv_n;
        let t_after = t - self.trace_mean;
        self.m2_trace += dt * t_after;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let idx = i * self.dim + j;
                let x = v[i] * v[j].conj();
                let delta = x - self.mean[idx];
                self.mean[idx] += delta * inv_n;
                let after = x - self.mean[idx];
                self.m2[idx] += delta.re * after.re + delta.im * after.im;
                self.m_ct[idx] += delta * t_after;
            }
        }
        Ok(())
    }

    /// Pooled estimate of two disjoint sample sets.
    pub fn merge(&self, other: &CovarianceEstimate) -> Result<CovarianceEstimate> {
        if self.tau != other.tau {
            return Err(DcmError::TauMismatch {
                left: self.tau,
                right: other.tau,
            });
        }
        if self.dim != other.dim {
            return Err(DcmError::dim("merging estimates of different dimension"));
        }
        if other.n_samples == 0 {
            return Ok(self.clone());
        }
        if self.n_samples == 0 {
            return Ok(other.clone());
        }
        let (na, nb) = (self.n_samples as f64, other.n_samples as f64);
        let n = na + nb;
        let mut out = self.clone();
        out.n_samples = self.n_samples + other.n_samples;
        let dt = other.trace_mean - self.trace_mean;
        out.trace_mean = self.trace_mean + dt * (nb / n);
        out.m2_trace = self.m2_trace + other.m2_trace + dt * dt * na * nb / n;
        for idx in 0..self.mean.len() {
            let delta = other.mean[idx] - self.mean[idx];
            out.mean[idx] = self.mean[idx] + delta * (nb / n);
            out.m2[idx] = self.m2[idx] + other.m2[idx] + delta.norm_sqr() * na * nb / n;
            out.m_ct[idx] = self.m_ct[idx] + other.m_ct[idx] + delta * dt * (na * nb / n);
        }
        Ok(out)
    }
}

/// One exported point of the coarse-grained density series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityPoint {
    pub tau: f64,
    /// `C(τ)` after Hermitian symmetrization.
    pub c: ComplexMatrix,
    pub rho: ComplexMatrix,
    pub trace: f64,
    pub min_eigenvalue: f64,
    /// Largest entrywise standard error of `C(τ)`.
    pub max_se: f64,
    /// `max |C − C†|` before symmetrization.
    pub symmetrization_residual: f64,
    /// Frobenius-norm standard error of `ρ`.
    pub rho_se: f64,
    pub n_samples: u64,
}

/// Normalize each estimate to a unit-trace Hermitian density operator.
pub fn density_series(estimates: &[CovarianceEstimate]) -> Result<Vec<DensityPoint>> {
    estimates
        .iter()
        .map(|est| {
            let raw = est.mean();
            let residual = raw.hermitian_residual();
            let c = raw.hermitian_part();
            let rho = normalize_to_density(&c)?.hermitian_part();
            Ok(DensityPoint {
                tau: est.tau,
                trace: c.trace().re,
                min_eigenvalue: c.min_eigenvalue(),
                max_se: est.max_std_error(),
                symmetrization_residual: residual,
                rho_se: est.rho_frobenius_se(),
                n_samples: est.n_samples,
                c,
                rho,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{ONE, I};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn series_from(f: impl Fn(f64) -> ComplexVector, h: f64, n: usize) -> TimeSeries {
        TimeSeries {
            t0: 0.0,
            spacing: h,
            values: (0..n).map(|k| f(k as f64 * h)).collect(),
        }
    }

    #[test]
    fn window_config_enforces_separation() {
        assert!(WindowConfig::new(0.1, 1.0, 0.1, vec![0.0, 0.5]).is_ok());
        // Δ/δt = c_Δ / (c_δ ε) = 1/(1·0.5) = 2
        assert!(WindowConfig::new(0.5, 1.0, 1.0, vec![0.0]).is_err());
        assert!(WindowConfig::new(1.5, 1.0, 0.1, vec![0.0]).is_err());
        assert!(WindowConfig::new(0.1, 1.0, 0.1, vec![0.5, 0.2]).is_err());
        let w = WindowConfig::new(0.1, 1.0, 0.1, vec![0.0, 1.0]).unwrap();
        assert!((w.delta - 0.1).abs() < 1e-15);
        assert!((w.dt_micro - 1e-3).abs() < 1e-15);
        assert!(w.n_steps() as f64 * w.dt_micro >= 1.1);
    }

    #[test]
    fn constant_series_averages_exactly() {
        let z0 = ComplexVector::from_vec(vec![c(0.3, -0.2), c(1.0, 0.5)]);
        let s = series_from(|_| z0.clone(), 0.01, 200);
        let avg = window_average(&s, 0.333, 0.5).unwrap();
        assert!(avg.distance(&z0) < 1e-14);
    }

    #[test]
    fn oscillating_series_matches_sinc() {
        let omega = 7.0;
        let delta = 0.4;
        let s = series_from(
            |t| ComplexVector::from_vec(vec![(I * omega * t).exp(), ZERO, ZERO, ZERO]),
            1e-4,
            10_001,
        );
        let x = omega * delta / 2.0;
        let expected = (x.sin() / x).abs();
        for tau in [0.0, 0.1234, 0.5] {
            let avg = window_average(&s, tau, delta).unwrap();
            assert!((avg[0].norm() - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn window_underflow() {
        let s = series_from(|_| ComplexVector::from_vec(vec![ONE]), 0.1, 100);
        assert!(matches!(
            window_average(&s, 1.0, 0.05),
            Err(DcmError::WindowUnderflow { .. })
        ));
        // Past the end of the record.
        assert!(window_average(&s, 9.5, 1.0).is_err());
        let single = series_from(|_| ComplexVector::from_vec(vec![ONE]), 0.1, 1);
        assert!(window_average(&single, 0.0, 0.1).is_err());
    }

    #[test]
    fn accumulate_examples() {
        let v = ComplexVector::from_vec(vec![c(0.5, 0.5), c(-1.0, 0.25)]);
        let mut est = CovarianceEstimate::new(0.0, 2);
        est.accumulate(&v).unwrap();
        assert!(est.mean().distance(&ComplexMatrix::outer(&v, &v)) < 1e-15);
        est.accumulate(&v.scale(c(-1.0, 0.0))).unwrap();
        assert!(est.mean().distance(&ComplexMatrix::outer(&v, &v)) < 1e-15);
        assert!(est.accumulate(&ComplexVector::zeros(3)).is_err());
    }

    #[test]
    fn unit_modulus_scalar_mean_is_one() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut est = CovarianceEstimate::new(0.0, 1);
        for _ in 0..10_000 {
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            est.accumulate(&ComplexVector::from_vec(vec![(I * phase).exp()])).unwrap();
        }
        // |v|² = 1 exactly, so the mean is 1 up to roundoff and SE vanishes.
        assert!((est.mean()[(0, 0)] - ONE).norm() <= 3.0 * est.max_std_error() + 1e-12);
    }

    fn random_samples(seed: u64, n: usize, dim: usize) -> Vec<ComplexVector> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                ComplexVector::from_vec(
                    (0..dim)
                        .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                        .collect(),
                )
            })
            .collect()
    }

    fn estimate_of(samples: &[ComplexVector], tau: f64) -> CovarianceEstimate {
        let mut est = CovarianceEstimate::new(tau, samples[0].dim());
        for s in samples {
            est.accumulate(s).unwrap();
        }
        est
    }

    fn max_diff(a: &CovarianceEstimate, b: &CovarianceEstimate) -> f64 {
        let m = a.mean().distance(&b.mean()).max(
            a.rho_std_errors()
                .iter()
                .zip(b.rho_std_errors())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max),
        );
        let s = a
            .std_errors()
            .iter()
            .zip(b.std_errors())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        m.max(s)
    }

    #[test]
    fn merge_examples() {
        let samples = random_samples(1, 1000, 3);
        let seq = estimate_of(&samples, 0.5);
        let a = estimate_of(&samples[..500], 0.5);
        let b = estimate_of(&samples[500..], 0.5);
        let ab = a.merge(&b).unwrap();
        let ba = b.merge(&a).unwrap();
        assert!(max_diff(&ab, &seq) < 1e-10);
        assert!(max_diff(&ab, &ba) < 1e-10);
        assert_eq!(a.merge(&CovarianceEstimate::new(0.5, 3)).unwrap(), a);
        assert!(matches!(
            a.merge(&CovarianceEstimate::new(0.6, 3)),
            Err(DcmError::TauMismatch { .. })
        ));
    }

    #[test]
    fn density_series_examples() {
        let mut est = CovarianceEstimate::new(0.0, 4);
        for k in 0..4 {
            est.accumulate(&ComplexVector::basis(4, k).scale(c(2.0, 0.0))).unwrap();
        }
        let p = &density_series(&[est]).unwrap()[0];
        assert!(p.rho.distance(&ComplexMatrix::identity(4).scale_real(0.25)) < 1e-15);

        let v = ComplexVector::from_vec(vec![c(1.0, 1.0), c(0.0, 2.0)]);
        let est = estimate_of(std::slice::from_ref(&v), 0.0);
        let p = &density_series(&[est]).unwrap()[0];
        let pure = ComplexMatrix::outer(&v, &v).scale_real(1.0 / v.norm_sqr());
        assert!(p.rho.distance(&pure) < 1e-15);

        let zero = estimate_of(&[ComplexVector::zeros(2)], 0.0);
        assert!(matches!(
            density_series(&[zero]),
            Err(DcmError::DegenerateTrace { .. })
        ));
    }

    #[test]
    fn ratio_se_matches_resampling_spread() {
        use rand::{Rng, SeedableRng};
        // Heavy trace fluctuations: scale each sample by a random amplitude.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
            let amp: f64 = rng.random_range(0.1..3.0);
            let th: f64 = rng.random_range(0.0..1.0);
            ComplexVector::from_vec(vec![c(amp * th.cos(), 0.0), c(0.0, amp * th.sin())])
        };
        let n = 400;
        let reps = 400;
        let mut rho01 = Vec::new();
        let mut se = 0.0;
        for r in 0..reps {
            let samples: Vec<_> = (0..n).map(|_| draw(&mut rng)).collect();
            let est = estimate_of(&samples, 0.0);
            let m = est.mean();
            rho01.push((m[(0, 1)] / m.trace()).im);
            if r == 0 {
                se = est.rho_std_errors()[1];
            }
        }
        let mean = rho01.iter().sum::<f64>() / reps as f64;
        let sd = (rho01.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
        assert!((se / sd - 1.0).abs() < 0.2, "se {se} sd {sd}");
    }

    #[test]
    fn deterministic_samples_have_zero_ratio_se() {
        let v = ComplexVector::from_vec(vec![c(0.3, 0.1), c(0.7, -0.2)]);
        let est = estimate_of(&vec![v; 10], 0.0);
        assert_eq!(est.rho_frobenius_se(), 0.0);
    }

    proptest! {
        #[test]
        fn merge_tree_shape_invariant(seed in 0u64..1000, split1 in 1usize..60, split2 in 1usize..60) {
            let samples = random_samples(seed, 120, 2);
            let (s1, s2) = (split1.min(split2), split1.max(split2) + 1);
            let parts = [&samples[..s1], &samples[s1..s2], &samples[s2..]];
            let e: Vec<_> = parts.iter().map(|p| estimate_of(p, 0.0)).collect();
            let left = e[0].merge(&e[1]).unwrap().merge(&e[2]).unwrap();
            let right = e[0].merge(&e[1].merge(&e[2]).unwrap()).unwrap();
            let seq = estimate_of(&samples, 0.0);
            prop_assert!(max_diff(&left, &right) < 1e-10);
            prop_assert!(max_diff(&left, &seq) < 1e-10);
        }

        #[test]
        fn accumulated_mean_is_hermitian_psd(seed in 0u64..1000) {
            let est = estimate_of(&random_samples(seed, 50, 3), 0.0);
            let m = est.mean();
            prop_assert!(m.hermitian_residual() < 1e-10 * m.frobenius_norm());
            prop_assert!(m.min_eigenvalue() > -1e-12);
        }
    }
}
