//! Correlated Wiener channels driving the two subsystems.
//!
//! The joint covariance of the channel vector `(dW_A,1..nA, dW_B,1..nB)` is
//! the block matrix `[[Σ_AA, Σ_AB], [Σ_AB†, Σ_BB]]` (rates, units 1/time).
//! Increments are `dW = F ζ √dt` with `F F† = Σ_joint` and `ζ` standard
//! normal: real for [`NoiseKind::Real`], circular complex for
//! [`NoiseKind::Circular`].

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DcmError, Result};
use crate::hilbert::{ComplexMatrix, C64, ZERO};

/// Eigenvalues of the joint covariance above `-CLIP_TOL` are clipped to zero.
pub const CLIP_TOL: f64 = 1e-12;
/// Relative indefiniteness tolerance: `λ_min < -1e-10 ‖Σ‖_F` is rejected.
pub const INDEFINITE_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    /// Real Wiener increments embedded as complex numbers. Requires a real
    /// covariance; `dW_a dW_b = Σ_ab dt`.
    #[default]
    Real,
    /// Circularly-symmetric complex increments: `E[dW dW†] = Σ dt`,
    /// `E[dW dWᵀ] = 0`.
    Circular,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseModel {
    n_a: usize,
    n_b: usize,
    kind: NoiseKind,
    sigma_aa: ComplexMatrix,
    sigma_bb: ComplexMatrix,
    sigma_ab: ComplexMatrix,
    joint: ComplexMatrix,
    factor: ComplexMatrix,
    cholesky: bool,
}

impl NoiseModel {
    pub fn n_a(&self) -> usize {
        self.n_a
    }

    pub fn n_b(&self) -> usize {
        self.n_b
    }

    pub fn n_channels(&self) -> usize {
        self.n_a + self.n_b
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn sigma_aa(&self) -> &ComplexMatrix {
        &self.sigma_aa
    }

    pub fn sigma_bb(&self) -> &ComplexMatrix {
        &self.sigma_bb
    }

    pub fn sigma_ab(&self) -> &ComplexMatrix {
        &self.sigma_ab
    }

    /// `[[Σ_AA, Σ_AB], [Σ_AB†, Σ_BB]]`
    pub fn joint(&self) -> &ComplexMatrix {
        &self.joint
    }

    pub fn factor(&self) -> &ComplexMatrix {
        &self.factor
    }

    /// Whether the factor came from a plain Cholesky decomposition (as
    /// opposed to the clipped eigen-decomposition fallback).
    pub fn is_cholesky(&self) -> bool {
        self.cholesky
    }

    pub fn is_zero(&self) -> bool {
        self.joint.max_abs() == 0.0
    }

    /// Cross-channel Itô coefficient `Γ_jk` of `dW_A,j dW_B,k = Γ_jk dt`.
    /// Zero for circular noise, whose pseudo-covariance vanishes.
    pub fn ito_cross(&self) -> ComplexMatrix {
        match self.kind {
            NoiseKind::Real => self.sigma_ab.clone(),
            NoiseKind::Circular => ComplexMatrix::zeros(self.n_a, self.n_b),
        }
    }

    /// The all-zero model with the given channel counts.
    pub fn zero(n_a: usize, n_b: usize) -> Self {
        build_noise_model(
            &ComplexMatrix::zeros(n_a, n_a),
            &ComplexMatrix::zeros(n_b, n_b),
            &ComplexMatrix::zeros(n_a, n_b),
            NoiseKind::Real,
        )
        .expect("zero covariance is valid")
    }

    /// Draw the joint increment vector into `out` (length `nA + nB`).
    pub fn sample_into(&self, dt: f64, stream: &mut RngStream, out: &mut [C64]) {
        let n = self.n_channels();
        debug_assert_eq!(out.len(), n);
        if n == 0 {
            return;
        }
        let sqrt_dt = dt.sqrt();
        let mut zeta = [ZERO; 16];
        let mut heap;
        let zeta: &mut [C64] = if n <= zeta.len() {
            &mut zeta[..n]
        } else {
            heap = vec![ZERO; n];
            &mut heap
        };
        match self.kind {
            NoiseKind::Real => {
                for z in zeta.iter_mut() {
                    *z = C64::new(stream.standard_normal(), 0.0);
                }
            }
            NoiseKind::Circular => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                for z in zeta.iter_mut() {
                    let re = stream.standard_normal();
                    let im = stream.standard_normal();
                    *z = C64::new(re * s, im * s);
                }
            }
        }
        let f = self.factor.as_slice();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &f[i * n..(i + 1) * n];
            let acc: C64 = row.iter().zip(zeta.iter()).map(|(a, b)| a * b).sum();
            *o = acc * sqrt_dt;
        }
    }
}

/// Validate the block covariance and factor it.
pub fn build_noise_model(
    sigma_aa: &ComplexMatrix,
    sigma_bb: &ComplexMatrix,
    sigma_ab: &ComplexMatrix,
    kind: NoiseKind,
) -> Result<NoiseModel> {
    let n_a = sigma_aa.rows();
    let n_b = sigma_bb.rows();
    if !sigma_aa.is_square() {
        return Err(DcmError::dim("sigmaAA must be square"));
    }
    if !sigma_bb.is_square() {
        return Err(DcmError::dim("sigmaBB must be square"));
    }
    if sigma_ab.rows() != n_a || sigma_ab.cols() != n_b {
        return Err(DcmError::dim(format!(
            "sigmaAB is {}x{}, expected {n_a}x{n_b}",
            sigma_ab.rows(),
            sigma_ab.cols()
        )));
    }
    let n = n_a + n_b;
    let joint = ComplexMatrix::from_fn(n, n, |i, j| match (i < n_a, j < n_a) {
        (true, true) => sigma_aa[(i, j)],
        (true, false) => sigma_ab[(i, j - n_a)],
        (false, true) => sigma_ab[(j, i - n_a)].conj(),
        (false, false) => sigma_bb[(i - n_a, j - n_a)],
    });
    let scale = joint.frobenius_norm();
    let herm_tol = INDEFINITE_REL_TOL * (1.0 + scale);
    for (block, m) in [("sigmaAA", sigma_aa), ("sigmaBB", sigma_bb)] {
        if m.hermitian_residual() > herm_tol {
            return Err(DcmError::config(format!("{block} is not Hermitian")));
        }
    }
    if kind == NoiseKind::Real && joint.as_slice().iter().any(|z| z.im.abs() > herm_tol) {
        return Err(DcmError::config(
            "noise.kind = real requires a real covariance; use noise.kind = circular for complex Σ",
        ));
    }
    let joint = if kind == NoiseKind::Real {
        ComplexMatrix::from_fn(n, n, |i, j| C64::new(joint[(i, j)].re, 0.0))
    } else {
        joint.hermitian_part()
    };

    let eigen = real_or_complex_eigh(&joint, kind);
    if let Some(&min) = eigen.0.first() {
        let tolerance = INDEFINITE_REL_TOL * scale;
        if min < -tolerance {
            return Err(DcmError::IndefiniteCovariance {
                block: offending_block(sigma_aa, sigma_bb, tolerance),
                min_eigenvalue: min,
                tolerance,
            });
        }
    }

    let (factor, cholesky) = match cholesky(&joint, 1e-14 * (1.0 + scale)) {
        Some(l) => (l, true),
        None => (eigen_factor(&eigen), false),
    };

    Ok(NoiseModel {
        n_a,
        n_b,
        kind,
        sigma_aa: sigma_aa.clone(),
        sigma_bb: sigma_bb.clone(),
        sigma_ab: sigma_ab.clone(),
        joint,
        factor,
        cholesky,
    })
}

fn offending_block(aa: &ComplexMatrix, bb: &ComplexMatrix, tol: f64) -> String {
    if aa.rows() > 0 && aa.min_eigenvalue() < -tol {
        "sigmaAA".into()
    } else if bb.rows() > 0 && bb.min_eigenvalue() < -tol {
        "sigmaBB".into()
    } else {
        "sigmaAB (joint block covariance)".into()
    }
}

/// Eigen-decomposition that keeps eigenvectors real for a real covariance,
/// so that the factor maps real normals to real increments.
fn real_or_complex_eigh(joint: &ComplexMatrix, kind: NoiseKind) -> (Vec<f64>, ComplexMatrix) {
    let n = joint.rows();
    match kind {
        NoiseKind::Circular => joint.eigh(),
        NoiseKind::Real if n == 0 => (Vec::new(), ComplexMatrix::zeros(0, 0)),
        NoiseKind::Real => {
            let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (joint[(i, j)].re + joint[(j, i)].re));
            let eig = m.symmetric_eigen();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
            let vecs =
                ComplexMatrix::from_fn(n, n, |i, c| C64::new(eig.eigenvectors[(i, order[c])], 0.0));
            (vals, vecs)
        }
    }
}

fn eigen_factor((vals, vecs): &(Vec<f64>, ComplexMatrix)) -> ComplexMatrix {
    let n = vals.len();
    ComplexMatrix::from_fn(n, n, |i, j| {
        let lam = if vals[j] < CLIP_TOL { 0.0 } else { vals[j] };
        vecs[(i, j)] * lam.sqrt()
    })
}

/// Lower-triangular `L` with `L L† = A`; `None` when a pivot is not safely
/// positive.
fn cholesky(a: &ComplexMatrix, pivot_floor: f64) -> Option<ComplexMatrix> {
    let n = a.rows();
    let mut l = ComplexMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if d <= pivot_floor {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = C64::new(djj, 0.0);
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Counter-based per-trajectory random stream: ChaCha8 keyed by `seed`, with
/// the trajectory index selecting the ChaCha stream. Identical
/// `(seed, stream_index)` pairs replay bit-identical sequences regardless of
/// which worker runs them.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_index: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_index);
        Self {
            seed,
            stream_index,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Joint increments split into the A and B channel groups.
pub fn sample_increments(
    model: &NoiseModel,
    dt: f64,
    stream: &mut RngStream,
) -> (Vec<C64>, Vec<C64>) {
    let mut joint = vec![ZERO; model.n_channels()];
    model.sample_into(dt, stream, &mut joint);
    let dw_b = joint.split_off(model.n_a);
    (joint, dw_b)
}

/// Monte-Carlo estimate of `(1 / (n dt)) Σ dW_A dW_B†` with per-entry
/// standard errors.
#[derive(Debug, Clone)]
pub struct CrossVariation {
    pub estimate: ComplexMatrix,
    std_error: Vec<f64>,
    pub n_samples: usize,
}

impl CrossVariation {
    pub fn std_error(&self, j: usize, k: usize) -> f64 {
        self.std_error[j * self.estimate.cols() + k]
    }

    pub fn max_std_error(&self) -> f64 {
        self.std_error.iter().copied().fold(0.0, f64::max)
    }
}

pub fn empirical_cross_variation(
    model: &NoiseModel,
    dt: f64,
    n_samples: usize,
    stream: &mut RngStream,
) -> CrossVariation {
    let (n_a, n_b) = (model.n_a, model.n_b);
    let mut mean = vec![ZERO; n_a * n_b];
    let mut m2 = vec![0.0; n_a * n_b];
    let mut buf = vec![ZERO; model.n_channels()];
    for s in 0..n_samples {
        model.sample_into(dt, stream, &mut buf);
        let count = (s + 1) as f64;
        for j in 0..n_a {
            for k in 0..n_b {
                let x = buf[j] * buf[n_a + k].conj() / dt;
                let idx = j * n_b + k;
                let delta = x - mean[idx];
                mean[idx] += delta / count;
                m2[idx] += delta.re * (x - mean[idx]).re + delta.im * (x - mean[idx]).im;
            }
        }
    }
    let n = n_samples as f64;
    let std_error = m2
        .iter()
        .map(|&v| {
            if n_samples > 1 {
                (v / (n - 1.0) / n).sqrt()
            } else {
                f64::INFINITY
            }
        })
        .collect();
    CrossVariation {
        estimate: ComplexMatrix::from_row_major(n_a, n_b, mean).expect("shape"),
        std_error,
        n_samples,
    }
}
