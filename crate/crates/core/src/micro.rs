//! Euler–Maruyama integration of the microscopic subsystem SDEs
//!
//! ```text
//! dX = −i Ĥ_A X dt − i Σ_m ξ_A,m Â_m X dt + Σ_j L̂_j X dW_A,j
//! dY = −i Ĥ_B Y dt − i Σ_m ξ_B,m B̂_m Y dt + Σ_k M̂_k Y dW_B,k
//! ```
//!
//! with the state-dependent feedback fields `ξ_A,m = ½ ⟨B̂_m⟩_Y` and
//! `ξ_B,m = ½ ⟨Â_m⟩_X` evaluated at the start of each step. The free scheme
//! drops the ξ terms. Trajectories are not norm-preserving.

use serde::{Deserialize, Serialize};

use crate::error::{DcmError, Result};
use crate::hilbert::{
    embed_a, embed_b, kron, tensor_product_vec, ComplexMatrix, ComplexVector, HilbertDims, C64,
    I, ZERO,
};
use crate::noise::{NoiseModel, RngStream};

/// Hermiticity tolerance for Hamiltonians and interaction factors.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// `‖x‖² < NORM_FLOOR_REL · dim` aborts an interacting step.
pub const NORM_FLOOR_REL: f64 = 1e-12;
/// `dt ≤ STABILITY_FACTOR / ‖Ĥ‖_max`.
pub const STABILITY_FACTOR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Free,
    Interacting,
}

/// One Schmidt term `Â_m ⊗ B̂_m` of the interaction Hamiltonian.
#[derive(Debug, Clone)]
pub struct InteractionTerm {
    pub a: ComplexMatrix,
    pub b: ComplexMatrix,
}

#[derive(Debug, Clone)]
pub struct SystemSpec {
    dims: HilbertDims,
    h_a: ComplexMatrix,
    h_b: ComplexMatrix,
    l_ops: Vec<ComplexMatrix>,
    m_ops: Vec<ComplexMatrix>,
    interaction: Vec<InteractionTerm>,
    noise: NoiseModel,
}

impl SystemSpec {
    pub fn new(
        dims: HilbertDims,
        h_a: ComplexMatrix,
        h_b: ComplexMatrix,
        l_ops: Vec<ComplexMatrix>,
        m_ops: Vec<ComplexMatrix>,
        interaction: Vec<InteractionTerm>,
        noise: NoiseModel,
    ) -> Result<Self> {
        let (da, db) = (dims.dim_a, dims.dim_b);
        let check_shape = |m: &ComplexMatrix, d: usize, what: &str| {
            if m.rows() != d || m.cols() != d {
                Err(DcmError::dim(format!(
                    "{what} is {}x{}, expected {d}x{d}",
                    m.rows(),
                    m.cols()
                )))
            } else {
                Ok(())
            }
        };
        let check_herm = |m: &ComplexMatrix, what: &str| {
            if m.hermitian_residual() > HERMITIAN_TOL {
                Err(DcmError::config(format!(
                    "{what} is not Hermitian (residual {:e})",
                    m.hermitian_residual()
                )))
            } else {
                Ok(())
            }
        };
        check_shape(&h_a, da, "h_a")?;
        check_shape(&h_b, db, "h_b")?;
        check_herm(&h_a, "h_a")?;
        check_herm(&h_b, "h_b")?;
        for (j, l) in l_ops.iter().enumerate() {
            check_shape(l, da, &format!("l_ops[{j}]"))?;
        }
        for (k, m) in m_ops.iter().enumerate() {
            check_shape(m, db, &format!("m_ops[{k}]"))?;
        }
        for (m, term) in interaction.iter().enumerate() {
            check_shape(&term.a, da, &format!("interaction[{m}].a"))?;
            check_shape(&term.b, db, &format!("interaction[{m}].b"))?;
            check_herm(&term.a, &format!("interaction[{m}].a"))?;
            check_herm(&term.b, &format!("interaction[{m}].b"))?;
        }
        if l_ops.len() != noise.n_a() {
            return Err(DcmError::config(format!(
                "{} L operators but sigmaAA has {} channels",
                l_ops.len(),
                noise.n_a()
            )));
        }
        if m_ops.len() != noise.n_b() {
            return Err(DcmError::config(format!(
                "{} M operators but sigmaBB has {} channels",
                m_ops.len(),
                noise.n_b()
            )));
        }
        Ok(Self {
            dims,
            h_a,
            h_b,
            l_ops,
            m_ops,
            interaction,
            noise,
        })
    }

    pub fn dims(&self) -> HilbertDims {
        self.dims
    }

    pub fn h_a(&self) -> &ComplexMatrix {
        &self.h_a
    }

    pub fn h_b(&self) -> &ComplexMatrix {
        &self.h_b
    }

    pub fn l_ops(&self) -> &[ComplexMatrix] {
        &self.l_ops
    }

    pub fn m_ops(&self) -> &[ComplexMatrix] {
        &self.m_ops
    }

    pub fn interaction(&self) -> &[InteractionTerm] {
        &self.interaction
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    /// Copy of this spec with a different noise model (channel counts must
    /// match).
    pub fn with_noise(&self, noise: NoiseModel) -> Result<Self> {
        Self::new(
            self.dims,
            self.h_a.clone(),
            self.h_b.clone(),
            self.l_ops.clone(),
            self.m_ops.clone(),
            self.interaction.clone(),
            noise,
        )
    }

    pub fn with_interaction(&self, interaction: Vec<InteractionTerm>) -> Result<Self> {
        Self::new(
            self.dims,
            self.h_a.clone(),
            self.h_b.clone(),
            self.l_ops.clone(),
            self.m_ops.clone(),
            interaction,
            self.noise.clone(),
        )
    }

    /// `Ĥ_A ⊗ I + I ⊗ Ĥ_B`
    pub fn local_hamiltonian(&self) -> ComplexMatrix {
        &embed_a(&self.h_a, self.dims.dim_b) + &embed_b(self.dims.dim_a, &self.h_b)
    }

    /// `Σ_m Â_m ⊗ B̂_m`
    pub fn interaction_hamiltonian(&self) -> ComplexMatrix {
        let d = self.dims.composite();
        let mut h = ComplexMatrix::zeros(d, d);
        for term in &self.interaction {
            h += &kron(&term.a, &term.b);
        }
        h
    }

    /// `Ĥ_A ⊗ I + I ⊗ Ĥ_B + Σ_m Â_m ⊗ B̂_m`
    pub fn total_hamiltonian(&self) -> ComplexMatrix {
        &self.local_hamiltonian() + &self.interaction_hamiltonian()
    }

    /// Largest coherent rate entering a single micro step.
    pub fn max_hamiltonian_norm(&self) -> f64 {
        let coupling: f64 = self
            .interaction
            .iter()
            .map(|t| 0.5 * t.a.spectral_norm() * t.b.spectral_norm())
            .sum();
        self.h_a
            .spectral_norm()
            .max(self.h_b.spectral_norm())
            .max(coupling)
    }

    /// Largest micro step admitted by the explicit-scheme stability guard.
    pub fn max_stable_dt(&self) -> f64 {
        let norm = self.max_hamiltonian_norm();
        if norm == 0.0 {
            f64::INFINITY
        } else {
            STABILITY_FACTOR / norm
        }
    }

    pub fn check_dt(&self, dt: f64) -> Result<()> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(DcmError::config(format!("micro step must be positive, got {dt}")));
        }
        let limit = self.max_stable_dt();
        if dt > limit {
            return Err(DcmError::StepGuard {
                requested: dt,
                limit,
            });
        }
        Ok(())
    }
}

/// Trajectory state `(X_t, Y_t)` with its private random stream.
#[derive(Debug, Clone)]
pub struct MicroState {
    pub x: ComplexVector,
    pub y: ComplexVector,
    pub t: f64,
    pub steps: usize,
    pub stream: RngStream,
}

impl MicroState {
    pub fn new(x: ComplexVector, y: ComplexVector, stream: RngStream) -> Self {
        Self {
            x,
            y,
            t: 0.0,
            steps: 0,
            stream,
        }
    }

    pub fn trajectory(&self) -> u64 {
        self.stream.stream_index()
    }
}

/// `Z = X ⊗ Y`
pub fn tensor_state(state: &MicroState) -> ComplexVector {
    tensor_product_vec(&state.x, &state.y)
}

/// Haar-random unit vector (normalized complex Gaussian).
pub fn random_haar_state(dim: usize, stream: &mut RngStream) -> ComplexVector {
    let v: Vec<C64> = (0..dim)
        .map(|_| C64::new(stream.standard_normal(), stream.standard_normal()))
        .collect();
    ComplexVector::from_vec(v).normalized()
}

/// Rayleigh quotient `⟨v|Op|v⟩ / ‖v‖²`; real for Hermitian `op`.
fn rayleigh(op: &ComplexMatrix, v: &ComplexVector, norm_sq: f64) -> f64 {
    v.inner(&op.apply(v)).re / norm_sq
}

/// Feedback fields `(ξ_A,m, ξ_B,m)` for every interaction term.
pub fn xi_fields(spec: &SystemSpec, x: &ComplexVector, y: &ComplexVector) -> (Vec<f64>, Vec<f64>) {
    let (nx, ny) = (x.norm_sqr(), y.norm_sqr());
    spec.interaction
        .iter()
        .map(|t| (0.5 * rayleigh(&t.b, y, ny), 0.5 * rayleigh(&t.a, x, nx)))
        .unzip()
}

/// `out += coeff · M v`
fn apply_add(m: &ComplexMatrix, v: &ComplexVector, coeff: C64, out: &mut ComplexVector) {
    let n = v.dim();
    let data = m.as_slice();
    for (i, o) in out.as_mut_slice().iter_mut().enumerate() {
        let row = &data[i * n..(i + 1) * n];
        let s: C64 = row.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
        *o += coeff * s;
    }
}

fn advance(
    v: &ComplexVector,
    h: &ComplexMatrix,
    feedback: &[(f64, &ComplexMatrix)],
    ops: &[ComplexMatrix],
    dw: &[C64],
    dt: f64,
) -> ComplexVector {
    let mut out = v.clone();
    let drift = -I * dt;
    apply_add(h, v, drift, &mut out);
    for &(xi, op) in feedback {
        if xi != 0.0 {
            apply_add(op, v, drift * xi, &mut out);
        }
    }
    for (op, &w) in ops.iter().zip(dw) {
        if w != ZERO {
            apply_add(op, v, w, &mut out);
        }
    }
    out
}

fn step(state: &mut MicroState, spec: &SystemSpec, dt: f64, mode: Mode) -> Result<()> {
    let n = spec.noise.n_channels();
    let mut dw = [ZERO; 32];
    let mut heap;
    let dw: &mut [C64] = if n <= dw.len() {
        &mut dw[..n]
    } else {
        heap = vec![ZERO; n];
        &mut heap
    };
    spec.noise.sample_into(dt, &mut state.stream, dw);
    let (dw_a, dw_b) = dw.split_at(spec.noise.n_a());

    let (fb_a, fb_b): (Vec<_>, Vec<_>) = match mode {
        Mode::Interacting if !spec.interaction.is_empty() => {
            let (nx, ny) = (state.x.norm_sqr(), state.y.norm_sqr());
            for (sub, norm_sq, dim) in [
                ('A', nx, spec.dims.dim_a),
                ('B', ny, spec.dims.dim_b),
            ] {
                let floor = NORM_FLOOR_REL * dim as f64;
                if norm_sq.is_nan() || norm_sq < floor {
                    return Err(DcmError::NormCollapse {
                        subsystem: sub,
                        norm_sq,
                        floor,
                        t: state.t,
                        trajectory: state.trajectory(),
                    });
                }
            }
            let (xi_a, xi_b) = xi_fields(spec, &state.x, &state.y);
            spec.interaction
                .iter()
                .zip(xi_a.into_iter().zip(xi_b))
                .map(|(t, (xa, xb))| ((xa, &t.a), (xb, &t.b)))
                .unzip()
        }
        _ => (Vec::new(), Vec::new()),
    };

    let x = advance(&state.x, &spec.h_a, &fb_a, &spec.l_ops, dw_a, dt);
    let y = advance(&state.y, &spec.h_b, &fb_b, &spec.m_ops, dw_b, dt);
    if !(x.is_finite() && y.is_finite()) {
        return Err(DcmError::NumericalBlowup {
            t: state.t,
            trajectory: state.trajectory(),
            step: state.steps,
        });
    }
    state.x = x;
    state.y = y;
    state.steps += 1;
    state.t += dt;
    Ok(())
}

/// One Euler–Maruyama step of the non-interacting SDEs.
pub fn step_free(state: &mut MicroState, spec: &SystemSpec, dt: f64) -> Result<()> {
    step(state, spec, dt, Mode::Free)
}

/// One step with the explicit ξ-feedback drift added.
pub fn step_interacting(state: &mut MicroState, spec: &SystemSpec, dt: f64) -> Result<()> {
    step(state, spec, dt, Mode::Interacting)
}

/// Uniformly sampled record of `Z_t`.
#[derive(Debug, Clone)]
pub struct TimeSeries {
    pub t0: f64,
    pub spacing: f64,
    pub values: Vec<ComplexVector>,
}

impl TimeSeries {
    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.spacing
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.values.len().saturating_sub(1))
    }
}

/// Integrate `n_steps` micro steps, recording `Z` at the start and after
/// every `stride`-th step.
pub fn evolve_trajectory(
    spec: &SystemSpec,
    initial: MicroState,
    dt: f64,
    n_steps: usize,
    mode: Mode,
    stride: usize,
) -> Result<TimeSeries> {
    if n_steps == 0 {
        return Err(DcmError::config("evolve_trajectory needs at least one step"));
    }
    if stride == 0 {
        return Err(DcmError::config("record stride must be positive"));
    }
    spec.check_dt(dt)?;
    let mut state = initial;
    let mut values = Vec::with_capacity(n_steps / stride + 1);
    let t0 = state.t;
    values.push(tensor_state(&state));
    for n in 1..=n_steps {
        step(&mut state, spec, dt, mode)?;
        if n % stride == 0 {
            values.push(tensor_state(&state));
        }
    }
    Ok(TimeSeries {
        t0,
        spacing: dt * stride as f64,
        values,
    })
}

/// Drift generator `L̂` of `E[Z]`: `dZ = L̂ Z dt + dξ`.
#[derive(Debug, Clone)]
pub struct DriftOperator {
    pub matrix: ComplexMatrix,
}

/// `L̂ = −i(Ĥ_A ⊗ I + I ⊗ Ĥ_B) + Σ_jk Γ_jk (L̂_j ⊗ M̂_k)` with `Γ` the Itô
/// cross coefficient of the noise model (`Σ_AB` for real noise).
pub fn build_drift_operator(spec: &SystemSpec) -> DriftOperator {
    let mut matrix = spec.local_hamiltonian().scale(-I);
    let gamma = spec.noise.ito_cross();
    for (j, l) in spec.l_ops.iter().enumerate() {
        for (k, m) in spec.m_ops.iter().enumerate() {
            let g = gamma[(j, k)];
            if g != ZERO {
                matrix.axpy(g, &kron(l, m));
            }
        }
    }
    DriftOperator { matrix }
}

impl DriftOperator {
    /// Rebuild `L̂` column by column from its action on product basis
    /// states and return the largest entry deviation.
    pub fn rebuild_residual(&self, spec: &SystemSpec) -> f64 {
        let (da, db) = (spec.dims.dim_a, spec.dims.dim_b);
        let gamma = spec.noise.ito_cross();
        let mut worst: f64 = 0.0;
        for a in 0..da {
            for b in 0..db {
                let ea = ComplexVector::basis(da, a);
                let eb = ComplexVector::basis(db, b);
                let mut col = tensor_product_vec(&spec.h_a.apply(&ea), &eb).scale(-I);
                col.axpy(-I, &tensor_product_vec(&ea, &spec.h_b.apply(&eb)));
                for (j, l) in spec.l_ops.iter().enumerate() {
                    for (k, m) in spec.m_ops.iter().enumerate() {
                        col.axpy(gamma[(j, k)], &tensor_product_vec(&l.apply(&ea), &m.apply(&eb)));
                    }
                }
                let c = a * db + b;
                for r in 0..da * db {
                    worst = worst.max((col[r] - self.matrix[(r, c)]).norm());
                }
            }
        }
        worst
    }
}

/// `‖(I − P_y) B y‖ / ‖B y‖` with `P_y = y y† / ‖y‖²`: the fraction of
/// `B y` transverse to the ray of `y`. Zero when `B y = 0`.
pub fn projector_collapse_residual(y: &ComplexVector, b: &ComplexMatrix) -> f64 {
    let by = b.apply(y);
    let by_norm = by.norm();
    if by_norm == 0.0 {
        return 0.0;
    }
    let coeff = y.inner(&by) / y.norm_sqr();
    let mut transverse = by;
    transverse.axpy(-coeff, y);
    transverse.norm() / by_norm
}

/// Relative deviation of `[ξ_A (Â ⊗ I) + ξ_B (I ⊗ B̂)] Z` from `(Â ⊗ B̂) Z`
/// for the term `m` at the product state `x ⊗ y`.
pub fn xi_reduction_residual(
    spec: &SystemSpec,
    m: usize,
    x: &ComplexVector,
    y: &ComplexVector,
) -> f64 {
    let term = &spec.interaction[m];
    let (xi_a, xi_b) = xi_fields(spec, x, y);
    let z = tensor_product_vec(x, y);
    let (da, db) = (spec.dims.dim_a, spec.dims.dim_b);
    let mut synth = embed_a(&term.a, db).apply(&z).scale(C64::new(xi_a[m], 0.0));
    synth.axpy(C64::new(xi_b[m], 0.0), &embed_b(da, &term.b).apply(&z));
    let exact = kron(&term.a, &term.b).apply(&z);
    let scale = exact.norm().max(f64::MIN_POSITIVE);
    synth.distance(&exact) / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::presets::*;
    use crate::hilbert::ONE;
    use crate::noise::{build_noise_model, NoiseKind};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn dims22() -> HilbertDims {
        HilbertDims::new(2, 2).unwrap()
    }

    fn closed_spec(h_a: ComplexMatrix, h_b: ComplexMatrix) -> SystemSpec {
        SystemSpec::new(dims22(), h_a, h_b, vec![], vec![], vec![], NoiseModel::zero(0, 0))
            .unwrap()
    }

    fn state(x: &[C64], y: &[C64], seed: u64, idx: u64) -> MicroState {
        MicroState::new(
            ComplexVector::from_vec(x.to_vec()),
            ComplexVector::from_vec(y.to_vec()),
            RngStream::new(seed, idx),
        )
    }

    /// `e^{-iHt}` for Hermitian `H` via its eigen-decomposition.
    fn unitary(h: &ComplexMatrix, t: f64) -> ComplexMatrix {
        let (vals, vecs) = h.eigh();
        let phases: Vec<C64> = vals.iter().map(|l| (-I * l * t).exp()).collect();
        &(&vecs * &ComplexMatrix::diag(&phases)) * &vecs.adjoint()
    }

    #[test]
    fn free_step_matches_unitary_to_second_order() {
        let spec = closed_spec(pauli_z().scale_real(0.5), ComplexMatrix::zeros(2, 2));
        let dt = 1e-3;
        let mut s = state(&[ONE, ZERO], &[ONE, ZERO], 1, 0);
        step_free(&mut s, &spec, dt).unwrap();
        let exact = (-I * 5e-4).exp();
        assert!((s.x[0] - exact).norm() < dt * dt);
        assert_eq!(s.x[1], ZERO);
    }

    #[test]
    fn zero_generator_leaves_state() {
        let spec = closed_spec(ComplexMatrix::zeros(2, 2), ComplexMatrix::zeros(2, 2));
        let x = [c(0.6, 0.1), c(0.3, -0.2)];
        let mut s = state(&x, &[ONE, ZERO], 1, 0);
        step_free(&mut s, &spec, 1e-2).unwrap();
        assert_eq!(s.x.as_slice(), &x);
    }

    #[test]
    fn ito_norm_growth_single_step() {
        // L = I, one channel of rate γ: E‖x₁‖² = ‖x₀‖² (1 + γ dt).
        let gamma = 0.8;
        let noise = build_noise_model(
            &ComplexMatrix::diag_real(&[gamma]),
            &ComplexMatrix::zeros(0, 0),
            &ComplexMatrix::zeros(1, 0),
            NoiseKind::Real,
        )
        .unwrap();
        let spec = SystemSpec::new(
            dims22(),
            ComplexMatrix::zeros(2, 2),
            ComplexMatrix::zeros(2, 2),
            vec![ComplexMatrix::identity(2)],
            vec![],
            vec![],
            noise,
        )
        .unwrap();
        let dt = 0.01;
        let n = 100_000;
        let x0 = [c(0.6, 0.0), c(0.0, 0.8)];
        let samples: Vec<f64> = (0..n)
            .map(|i| {
                let mut s = state(&x0, &[ONE, ZERO], 3, i);
                step_free(&mut s, &spec, dt).unwrap();
                s.x.norm_sqr()
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - (1.0 + gamma * dt)).abs() < 3.0 * se, "{mean} ± {se}");
    }

    #[test]
    fn xi_at_eigenvector_is_half_eigenvalue() {
        let b = ComplexMatrix::diag_real(&[2.5, -1.0]);
        let spec = closed_spec(ComplexMatrix::zeros(2, 2), ComplexMatrix::zeros(2, 2))
            .with_interaction(vec![InteractionTerm {
                a: pauli_x(),
                b,
            }])
            .unwrap();
        let x = ComplexVector::from_vec(vec![c(0.3, 0.1), c(0.2, 0.9)]);
        let y = ComplexVector::from_vec(vec![c(0.0, 3.0), ZERO]);
        let (xi_a, _) = xi_fields(&spec, &x, &y);
        assert_eq!(xi_a[0], 1.25);
    }

    #[test]
    fn interacting_step_adds_half_sigma_z_drift() {
        // Â = B̂ = σ_z, x = y = |0⟩: ξ_A = ½, so dx = −i (½ σ_z) x dt.
        let spec = closed_spec(ComplexMatrix::zeros(2, 2), ComplexMatrix::zeros(2, 2))
            .with_interaction(vec![InteractionTerm {
                a: pauli_z(),
                b: pauli_z(),
            }])
            .unwrap();
        let dt = 1e-3;
        let mut s = state(&[ONE, ZERO], &[ONE, ZERO], 1, 0);
        step_interacting(&mut s, &spec, dt).unwrap();
        assert_eq!(s.x[0], ONE - I * 0.5 * dt);
        assert_eq!(s.y[0], ONE - I * 0.5 * dt);
    }

    #[test]
    fn interacting_with_empty_list_is_free() {
        let noise = build_noise_model(
            &ComplexMatrix::diag_real(&[0.3]),
            &ComplexMatrix::diag_real(&[0.2]),
            &ComplexMatrix::diag_real(&[0.1]),
            NoiseKind::Real,
        )
        .unwrap();
        let spec = SystemSpec::new(
            dims22(),
            pauli_x().scale_real(0.4),
            pauli_z(),
            vec![pauli_z()],
            vec![pauli_x()],
            vec![],
            noise,
        )
        .unwrap();
        let x0 = [c(0.6, 0.0), c(0.0, 0.8)];
        let a = evolve_trajectory(&spec, state(&x0, &x0, 9, 4), 1e-3, 200, Mode::Free, 1).unwrap();
        let b = evolve_trajectory(&spec, state(&x0, &x0, 9, 4), 1e-3, 200, Mode::Interacting, 1)
            .unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn norm_collapse_is_reported() {
        let spec = closed_spec(ComplexMatrix::zeros(2, 2), ComplexMatrix::zeros(2, 2))
            .with_interaction(vec![InteractionTerm {
                a: pauli_z(),
                b: pauli_z(),
            }])
            .unwrap();
        let mut s = state(&[ZERO, ZERO], &[ONE, ZERO], 1, 7);
        match step_interacting(&mut s, &spec, 1e-3) {
            Err(DcmError::NormCollapse {
                subsystem,
                trajectory,
                ..
            }) => {
                assert_eq!(subsystem, 'A');
                assert_eq!(trajectory, 7);
            }
            other => panic!("expected norm collapse, got {other:?}"),
        }
    }

    #[test]
    fn blowup_is_reported() {
        let noise = build_noise_model(
            &ComplexMatrix::diag_real(&[1.0]),
            &ComplexMatrix::zeros(0, 0),
            &ComplexMatrix::zeros(1, 0),
            NoiseKind::Real,
        )
        .unwrap();
        let spec = SystemSpec::new(
            dims22(),
            ComplexMatrix::zeros(2, 2),
            ComplexMatrix::zeros(2, 2),
            vec![ComplexMatrix::identity(2).scale_real(1e300)],
            vec![],
            vec![],
            noise,
        )
        .unwrap();
        let err = evolve_trajectory(
            &spec,
            state(&[c(1e10, 0.0), ZERO], &[ONE, ZERO], 1, 2),
            1e-2,
            50,
            Mode::Free,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, DcmError::NumericalBlowup { trajectory: 2, .. }));
    }

    #[test]
    fn tensor_state_examples() {
        let s = state(&[ONE, ZERO], &[ZERO, ONE], 1, 0);
        assert_eq!(tensor_state(&s), ComplexVector::basis(4, 1));
        let s = state(&[c(0.3, 0.4), c(-1.0, 0.2)], &[c(0.5, 0.0), c(0.1, 0.7)], 1, 0);
        assert!((tensor_state(&s).norm() - s.x.norm() * s.y.norm()).abs() < 1e-14);
    }

    #[test]
    fn noiseless_tensor_step_matches_exponential() {
        let spec = closed_spec(pauli_x().scale_real(0.7), pauli_z().scale_real(0.3));
        let dt = 1e-3;
        let mut s = state(&[c(0.6, 0.0), c(0.0, 0.8)], &[c(0.8, 0.0), c(0.6, 0.0)], 1, 0);
        let z0 = tensor_state(&s);
        step_free(&mut s, &spec, dt).unwrap();
        let exact = unitary(&spec.local_hamiltonian(), dt).apply(&z0);
        assert!(tensor_state(&s).distance(&exact) < 2.0 * dt * dt);
    }

    #[test]
    fn free_integrator_is_first_order() {
        let spec = closed_spec(pauli_x().scale_real(0.7), pauli_z().scale_real(0.3));
        let horizon = 1.0;
        let x0 = [c(0.6, 0.0), c(0.0, 0.8)];
        let y0 = [c(0.8, 0.0), c(0.6, 0.0)];
        let z0 = tensor_state(&state(&x0, &y0, 0, 0));
        let exact = unitary(&spec.local_hamiltonian(), horizon).apply(&z0);
        let err = |n: usize| {
            let series = evolve_trajectory(
                &spec,
                state(&x0, &y0, 0, 0),
                horizon / n as f64,
                n,
                Mode::Free,
                n,
            )
            .unwrap();
            series.values.last().unwrap().distance(&exact)
        };
        let (e1, e2) = (err(1000), err(2000));
        let ratio = e1 / e2;
        assert!((ratio - 2.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn closed_free_norm_nearly_constant() {
        let spec = closed_spec(pauli_x(), pauli_y());
        let dt = 1e-3;
        let series = evolve_trajectory(
            &spec,
            state(&[ONE, ZERO], &[ONE, ZERO], 0, 0),
            dt,
            100,
            Mode::Free,
            1,
        )
        .unwrap();
        for w in series.values.windows(2) {
            assert!((w[1].norm() - w[0].norm()).abs() < 2.0 * dt * dt);
        }
    }

    #[test]
    fn evolve_contract() {
        let spec = closed_spec(pauli_x(), pauli_y());
        let s = state(&[ONE, ZERO], &[ONE, ZERO], 0, 0);
        assert!(evolve_trajectory(&spec, s.clone(), 1e-3, 0, Mode::Free, 1).is_err());
        let one = evolve_trajectory(&spec, s.clone(), 1e-3, 1, Mode::Free, 1).unwrap();
        let mut manual = s.clone();
        step_free(&mut manual, &spec, 1e-3).unwrap();
        assert_eq!(one.values.len(), 2);
        assert_eq!(one.values[1], tensor_state(&manual));
        let strided = evolve_trajectory(&spec, s, 1e-3, 10, Mode::Free, 5).unwrap();
        assert_eq!(strided.values.len(), 3);
        assert!((strided.spacing - 5e-3).abs() < 1e-18);
    }

    #[test]
    fn dt_guard() {
        let spec = closed_spec(pauli_x().scale_real(10.0), ComplexMatrix::zeros(2, 2));
        assert!((spec.max_stable_dt() - 0.01).abs() < 1e-12);
        let s = state(&[ONE, ZERO], &[ONE, ZERO], 0, 0);
        assert!(matches!(
            evolve_trajectory(&spec, s, 0.02, 10, Mode::Free, 1),
            Err(DcmError::StepGuard { .. })
        ));
    }

    #[test]
    fn replay_is_bit_identical() {
        let noise = build_noise_model(
            &ComplexMatrix::diag_real(&[0.5]),
            &ComplexMatrix::diag_real(&[0.5]),
            &ComplexMatrix::diag_real(&[0.4]),
            NoiseKind::Real,
        )
        .unwrap();
        let spec = SystemSpec::new(
            dims22(),
            pauli_x(),
            pauli_z(),
            vec![pauli_z()],
            vec![pauli_x()],
            vec![],
            noise,
        )
        .unwrap();
        let s = state(&[ONE, ZERO], &[ONE, ZERO], 42, 17);
        let a = evolve_trajectory(&spec, s.clone(), 1e-3, 300, Mode::Free, 1).unwrap();
        let b = evolve_trajectory(&spec, s, 1e-3, 300, Mode::Free, 1).unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn drift_operator_examples() {
        let spec = closed_spec(pauli_x(), pauli_z().scale_real(0.5));
        let drift = build_drift_operator(&spec);
        // Γ = 0: anti-Hermitian.
        assert!((&drift.matrix + &drift.matrix.adjoint()).max_abs() < 1e-15);
        assert!(drift.rebuild_residual(&spec) < 1e-15);

        let g = 0.35;
        let noise = build_noise_model(
            &ComplexMatrix::diag_real(&[1.0]),
            &ComplexMatrix::diag_real(&[1.0]),
            &ComplexMatrix::diag_real(&[g]),
            NoiseKind::Real,
        )
        .unwrap();
        let spec = SystemSpec::new(
            dims22(),
            ComplexMatrix::zeros(2, 2),
            ComplexMatrix::zeros(2, 2),
            vec![pauli_z()],
            vec![pauli_z()],
            vec![],
            noise,
        )
        .unwrap();
        let drift = build_drift_operator(&spec);
        let expected = ComplexMatrix::diag_real(&[g, -g, -g, g]);
        assert!(drift.matrix.distance(&expected) < 1e-15);
        assert!(drift.rebuild_residual(&spec) < 1e-15);
    }

    #[test]
    fn projector_collapse_examples() {
        let e0 = ComplexVector::basis(2, 0);
        assert_eq!(projector_collapse_residual(&e0, &pauli_z()), 0.0);
        assert!((projector_collapse_residual(&e0, &pauli_x()) - 1.0).abs() < 1e-15);
        let y = ComplexVector::from_vec(vec![c(0.3, 0.4), c(-0.2, 0.9)]);
        assert!(projector_collapse_residual(&y, &ComplexMatrix::identity(2)) < 1e-15);
        assert_eq!(projector_collapse_residual(&y, &ComplexMatrix::zeros(2, 2)), 0.0);
    }

    #[test]
    fn xi_reduction_exact_at_eigenvectors() {
        let a = ComplexMatrix::diag_real(&[1.0, -2.0]);
        let b = ComplexMatrix::diag_real(&[0.5, 3.0]);
        let spec = closed_spec(ComplexMatrix::zeros(2, 2), ComplexMatrix::zeros(2, 2))
            .with_interaction(vec![InteractionTerm { a, b }])
            .unwrap();
        let x = ComplexVector::basis(2, 1).scale(c(0.0, 2.0));
        let y = ComplexVector::basis(2, 0).scale(c(0.7, 0.0));
        assert!(xi_reduction_residual(&spec, 0, &x, &y) < 1e-15);

        // Generic states: the synthesized action misses (Â⊗B̂)Z.
        let x = ComplexVector::from_vec(vec![c(0.6, 0.0), c(0.8, 0.0)]);
        let y = ComplexVector::from_vec(vec![c(0.8, 0.0), c(0.0, 0.6)]);
        let r = xi_reduction_residual(&spec, 0, &x, &y);
        assert!(r > 0.1);
        assert!(projector_collapse_residual(&y, &spec.interaction()[0].b) > 0.1);
    }

    #[test]
    fn spec_validation() {
        let bad_h = ComplexMatrix::from_real_rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
        assert!(SystemSpec::new(
            dims22(),
            bad_h,
            ComplexMatrix::zeros(2, 2),
            vec![],
            vec![],
            vec![],
            NoiseModel::zero(0, 0)
        )
        .is_err());
        // Channel count mismatch.
        assert!(SystemSpec::new(
            dims22(),
            ComplexMatrix::zeros(2, 2),
            ComplexMatrix::zeros(2, 2),
            vec![pauli_z()],
            vec![],
            vec![],
            NoiseModel::zero(0, 0)
        )
        .is_err());
    }
}
