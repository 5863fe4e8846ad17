//! Deterministic reference dynamics on `H_A ⊗ H_B`.
//!
//! Three generators are available:
//!
//! * `generic_gksl`: `−i[Ĥ, ρ] + Σ_n γ_n (V̂_n ρ V̂_n† − ½{V̂_n† V̂_n, ρ})` with
//!   channels extracted from the joint noise covariance,
//! * `interacting_eq60`: commutator, the `Σ_AB`-weighted cross sandwich
//!   `(L̂_j ⊗ M̂_k) ρ (L̂_j ⊗ M̂_k)†` and the local drains, taken literally,
//! * `von_neumann`: the commutator alone.

use serde::{Deserialize, Serialize};

use crate::error::{DcmError, Result};
use crate::hilbert::{
    anticommutator, embed_a, embed_b, kron, ComplexMatrix, C64, I, ONE, ZERO,
};
use crate::micro::SystemSpec;
use crate::noise::CLIP_TOL;

/// Tolerance on `ρ₀` being a density operator.
pub const DENSITY_TOL: f64 = 1e-10;
/// `h ≤ STEP_FACTOR / ‖generator‖`.
pub const STEP_FACTOR: f64 = 0.01;
/// Hermiticity residual above which `ρ` is re-symmetrized after a step.
pub const SYMMETRIZE_TOL: f64 = 1e-12;
/// Refuse reference runs that would need more RK4 steps than this.
pub const MAX_RK4_STEPS: f64 = 1e8;
/// Monitor threshold on the smallest eigenvalue.
pub const NEGATIVITY_FLAG: f64 = -1e-8;
/// Monitor threshold on `|Tr ρ − 1|`.
pub const TRACE_FLAG: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceVariant {
    #[default]
    GenericGksl,
    InteractingEq60,
    VonNeumann,
}

impl ReferenceVariant {
    pub fn name(self) -> &'static str {
        match self {
            ReferenceVariant::GenericGksl => "generic_gksl",
            ReferenceVariant::InteractingEq60 => "interacting_eq60",
            ReferenceVariant::VonNeumann => "von_neumann",
        }
    }

    pub fn is_trace_preserving(self) -> bool {
        !matches!(self, ReferenceVariant::InteractingEq60)
    }
}

impl std::str::FromStr for ReferenceVariant {
    type Err = DcmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generic_gksl" => Ok(ReferenceVariant::GenericGksl),
            "interacting_eq60" => Ok(ReferenceVariant::InteractingEq60),
            "von_neumann" => Ok(ReferenceVariant::VonNeumann),
            other => Err(DcmError::config(format!("unknown reference variant `{other}`"))),
        }
    }
}

/// Rates `γ_n ≥ 0` and jump operators `V̂_n` on the composite space.
#[derive(Debug, Clone, Default)]
pub struct LindbladChannels {
    pub gammas: Vec<f64>,
    pub v_ops: Vec<ComplexMatrix>,
}

impl LindbladChannels {
    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }
}

/// `{L̂_j ⊗ I} ∪ {I ⊗ M̂_k}` in joint-covariance order.
pub fn embedded_channel_ops(spec: &SystemSpec) -> Vec<ComplexMatrix> {
    let dims = spec.dims();
    spec.l_ops()
        .iter()
        .map(|l| embed_a(l, dims.dim_b))
        .chain(spec.m_ops().iter().map(|m| embed_b(dims.dim_a, m)))
        .collect()
}

/// Diagonalize the joint covariance over the embedded channel operators.
///
/// Each eigenvector is phase-fixed so its largest component is real and
/// positive, and channels are ordered by the index of that component, so a
/// diagonal covariance returns the input operators in input order.
pub fn extract_channels(spec: &SystemSpec) -> LindbladChannels {
    channels_from_joint(spec.noise().joint(), &embedded_channel_ops(spec))
}

pub fn channels_from_joint(joint: &ComplexMatrix, ops: &[ComplexMatrix]) -> LindbladChannels {
    let n = ops.len();
    if n == 0 || joint.max_abs() == 0.0 {
        return LindbladChannels::default();
    }
    let (values, vectors) = joint.eigh();
    let mut found: Vec<(usize, f64, Vec<C64>)> = Vec::new();
    for (col, &gamma) in values.iter().enumerate() {
        if gamma <= CLIP_TOL {
            continue;
        }
        let mut u: Vec<C64> = (0..n).map(|a| vectors[(a, col)]).collect();
        let lead = (0..n)
            .max_by(|&p, &q| {
                u[p].norm()
                    .partial_cmp(&u[q].norm())
                    .unwrap_or(std::cmp::Ordering::Equal)
                    // first index wins ties
                    .then(q.cmp(&p))
            })
            .unwrap_or(0);
        let phase = u[lead].conj() / u[lead].norm();
        for c in u.iter_mut() {
            *c *= phase;
        }
        found.push((lead, gamma, u));
    }
    found.sort_by(|p, q| p.0.cmp(&q.0).then(q.1.total_cmp(&p.1)));

    let dim = ops[0].rows();
    let mut channels = LindbladChannels::default();
    for (_, gamma, u) in found {
        let mut v = ComplexMatrix::zeros(dim, dim);
        for (coeff, op) in u.iter().zip(ops) {
            if *coeff != ZERO {
                v.axpy(*coeff, op);
            }
        }
        channels.gammas.push(gamma);
        channels.v_ops.push(v);
    }
    channels
}

/// `Σ_ab J_ab vec(E_a) vec(E_b)†`
pub fn weighted_gram(joint: &ComplexMatrix, ops: &[ComplexMatrix]) -> ComplexMatrix {
    let d2 = ops.first().map_or(0, |o| o.rows() * o.cols());
    let vecs: Vec<_> = ops.iter().map(|o| o.vectorize()).collect();
    let mut g = ComplexMatrix::zeros(d2, d2);
    for (a, va) in vecs.iter().enumerate() {
        for (b, vb) in vecs.iter().enumerate() {
            let w = joint[(a, b)];
            if w != ZERO {
                g.axpy(w, &ComplexMatrix::outer(va, vb));
            }
        }
    }
    g
}

/// `Σ_n γ_n vec(V̂_n) vec(V̂_n)†`
pub fn channel_gram(channels: &LindbladChannels, dim: usize) -> ComplexMatrix {
    let mut g = ComplexMatrix::zeros(dim * dim, dim * dim);
    for (gamma, v) in channels.gammas.iter().zip(&channels.v_ops) {
        let vv = v.vectorize();
        g.axpy(C64::new(*gamma, 0.0), &ComplexMatrix::outer(&vv, &vv));
    }
    g
}

/// Largest entry deviation between the channel Gram sum and the
/// covariance-weighted Gram matrix of the embedded operators.
pub fn reconstruction_residual(
    channels: &LindbladChannels,
    joint: &ComplexMatrix,
    ops: &[ComplexMatrix],
) -> f64 {
    let Some(first) = ops.first() else {
        return 0.0;
    };
    let lhs = channel_gram(channels, first.rows());
    (&lhs - &weighted_gram(joint, ops)).max_abs()
}

/// Precomputed pieces of the literal interacting layout.
#[derive(Debug, Clone)]
struct CrossLayout {
    /// `(Σ_AB,jk, L̂_j ⊗ M̂_k)`
    cross: Vec<(C64, ComplexMatrix)>,
    /// `Σ_jj' Σ_AA,jj' L̂_j'† L̂_j ⊗ I + Σ_kk' Σ_BB,kk' I ⊗ M̂_k'† M̂_k`
    drain: ComplexMatrix,
}

#[derive(Debug, Clone)]
pub struct MasterEquationSpec {
    h_tot: ComplexMatrix,
    channels: LindbladChannels,
    variant: ReferenceVariant,
    layout: Option<CrossLayout>,
    /// `Σ γ_n V̂_n† V̂_n`
    channel_drain: ComplexMatrix,
}

impl MasterEquationSpec {
    /// Generic or von Neumann generator from explicit parts.
    pub fn new(
        h_tot: ComplexMatrix,
        channels: LindbladChannels,
        variant: ReferenceVariant,
    ) -> Result<Self> {
        if variant == ReferenceVariant::InteractingEq60 {
            return Err(DcmError::config(
                "the interacting layout needs the subsystem operators; use from_system",
            ));
        }
        Self::assemble(h_tot, channels, variant, None)
    }

    pub fn from_system(spec: &SystemSpec, variant: ReferenceVariant) -> Result<Self> {
        let h_tot = spec.total_hamiltonian();
        match variant {
            ReferenceVariant::VonNeumann => {
                Self::assemble(h_tot, LindbladChannels::default(), variant, None)
            }
            ReferenceVariant::GenericGksl => {
                Self::assemble(h_tot, extract_channels(spec), variant, None)
            }
            ReferenceVariant::InteractingEq60 => {
                let layout = cross_layout(spec);
                Self::assemble(h_tot, LindbladChannels::default(), variant, Some(layout))
            }
        }
    }

    fn assemble(
        h_tot: ComplexMatrix,
        channels: LindbladChannels,
        variant: ReferenceVariant,
        layout: Option<CrossLayout>,
    ) -> Result<Self> {
        if !h_tot.is_square() {
            return Err(DcmError::dim("total Hamiltonian is not square"));
        }
        let scale = 1.0 + h_tot.max_abs();
        if h_tot.hermitian_residual() > DENSITY_TOL * scale {
            return Err(DcmError::config("total Hamiltonian is not Hermitian"));
        }
        let d = h_tot.rows();
        let mut channel_drain = ComplexMatrix::zeros(d, d);
        for (gamma, v) in channels.gammas.iter().zip(&channels.v_ops) {
            if v.rows() != d || v.cols() != d {
                return Err(DcmError::dim("jump operator shape"));
            }
            if *gamma < -CLIP_TOL {
                return Err(DcmError::config(format!("negative channel rate {gamma}")));
            }
            channel_drain.axpy(C64::new(*gamma, 0.0), &v.adjoint().try_mul(v)?);
        }
        Ok(Self {
            h_tot,
            channels,
            variant,
            layout,
            channel_drain,
        })
    }

    pub fn dim(&self) -> usize {
        self.h_tot.rows()
    }

    pub fn h_tot(&self) -> &ComplexMatrix {
        &self.h_tot
    }

    pub fn channels(&self) -> &LindbladChannels {
        &self.channels
    }

    pub fn variant(&self) -> ReferenceVariant {
        self.variant
    }

    /// Upper bound on the operator norm of the generator acting on `ρ`.
    pub fn generator_norm(&self) -> f64 {
        let mut norm = 2.0 * self.h_tot.spectral_norm();
        match &self.layout {
            Some(layout) => {
                for (w, op) in &layout.cross {
                    norm += w.norm() * op.spectral_norm().powi(2);
                }
                norm += layout.drain.spectral_norm();
            }
            None => {
                for (gamma, v) in self.channels.gammas.iter().zip(&self.channels.v_ops) {
                    norm += gamma * v.spectral_norm().powi(2);
                }
                norm += self.channel_drain.spectral_norm();
            }
        }
        norm
    }
}

fn cross_layout(spec: &SystemSpec) -> CrossLayout {
    let dims = spec.dims();
    let noise = spec.noise();
    let (l_ops, m_ops) = (spec.l_ops(), spec.m_ops());
    let mut cross = Vec::new();
    for (j, l) in l_ops.iter().enumerate() {
        for (k, m) in m_ops.iter().enumerate() {
            let w = noise.sigma_ab()[(j, k)];
            if w != ZERO {
                cross.push((w, kron(l, m)));
            }
        }
    }
    let d = dims.composite();
    let mut drain = ComplexMatrix::zeros(d, d);
    for (j, lj) in l_ops.iter().enumerate() {
        for (jp, ljp) in l_ops.iter().enumerate() {
            let w = noise.sigma_aa()[(j, jp)];
            if w != ZERO {
                drain.axpy(w, &embed_a(&(&ljp.adjoint() * lj), dims.dim_b));
            }
        }
    }
    for (k, mk) in m_ops.iter().enumerate() {
        for (kp, mkp) in m_ops.iter().enumerate() {
            let w = noise.sigma_bb()[(k, kp)];
            if w != ZERO {
                drain.axpy(w, &embed_b(dims.dim_a, &(&mkp.adjoint() * mk)));
            }
        }
    }
    CrossLayout { cross, drain }
}

/// `A B C`
fn sandwich(a: &ComplexMatrix, b: &ComplexMatrix, c: &ComplexMatrix) -> ComplexMatrix {
    &(a * b) * c
}

pub fn gksl_rhs(rho: &ComplexMatrix, spec: &MasterEquationSpec) -> Result<ComplexMatrix> {
    let d = spec.dim();
    if rho.rows() != d || rho.cols() != d {
        return Err(DcmError::dim(format!(
            "density operator {}x{} against generator of dimension {d}",
            rho.rows(),
            rho.cols()
        )));
    }
    let h = &spec.h_tot;
    let mut out = (&(h * rho) - &(rho * h)).scale(-I);
    match &spec.layout {
        Some(layout) => {
            for (w, op) in &layout.cross {
                out.axpy(*w, &sandwich(op, rho, &op.adjoint()));
            }
            out.axpy(C64::new(-0.5, 0.0), &anticommutator(&layout.drain, rho)?);
        }
        None if !spec.channels.is_empty() => {
            for (gamma, v) in spec.channels.gammas.iter().zip(&spec.channels.v_ops) {
                out.axpy(C64::new(*gamma, 0.0), &sandwich(v, rho, &v.adjoint()));
            }
            out.axpy(C64::new(-0.5, 0.0), &anticommutator(&spec.channel_drain, rho)?);
        }
        None => {}
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IntegrateOptions {
    /// Requested RK4 step; must not exceed the stability guard.
    pub max_step: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub tau: f64,
    pub rho: ComplexMatrix,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceSeries {
    pub variant: ReferenceVariant,
    pub points: Vec<ReferencePoint>,
    pub step: f64,
    pub steps: usize,
    pub symmetrization_events: usize,
}

fn check_density(rho: &ComplexMatrix, d: usize) -> Result<()> {
    if rho.rows() != d || rho.cols() != d {
        return Err(DcmError::dim("initial density operator shape"));
    }
    let tr = rho.trace();
    if (tr - ONE).norm() > DENSITY_TOL {
        return Err(DcmError::config(format!("initial density operator has trace {tr}")));
    }
    if rho.hermitian_residual() > DENSITY_TOL {
        return Err(DcmError::config("initial density operator is not Hermitian"));
    }
    let min = rho.min_eigenvalue();
    if min < -DENSITY_TOL {
        return Err(DcmError::config(format!(
            "initial density operator has eigenvalue {min:e}"
        )));
    }
    Ok(())
}

fn rk4_step(rho: &ComplexMatrix, h: f64, spec: &MasterEquationSpec) -> Result<ComplexMatrix> {
    let half = C64::new(0.5 * h, 0.0);
    let k1 = gksl_rhs(rho, spec)?;
    let mut y = rho.clone();
    y.axpy(half, &k1);
    let k2 = gksl_rhs(&y, spec)?;
    let mut y = rho.clone();
    y.axpy(half, &k2);
    let k3 = gksl_rhs(&y, spec)?;
    let mut y = rho.clone();
    y.axpy(C64::new(h, 0.0), &k3);
    let k4 = gksl_rhs(&y, spec)?;
    let mut next = rho.clone();
    next.axpy(C64::new(h / 6.0, 0.0), &k1);
    next.axpy(C64::new(h / 3.0, 0.0), &k2);
    next.axpy(C64::new(h / 3.0, 0.0), &k3);
    next.axpy(C64::new(h / 6.0, 0.0), &k4);
    Ok(next)
}

/// Classical RK4 from `ρ₀` at `τ = 0`, reporting `ρ` at every grid point.
pub fn integrate_master(
    rho0: &ComplexMatrix,
    spec: &MasterEquationSpec,
    tau_grid: &[f64],
    opts: &IntegrateOptions,
) -> Result<ReferenceSeries> {
    check_density(rho0, spec.dim())?;
    if tau_grid.iter().any(|t| !(t.is_finite() && *t >= 0.0))
        || tau_grid.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(DcmError::config(
            "tau grid must be non-negative and strictly increasing",
        ));
    }
    let norm = spec.generator_norm();
    let guard = if norm > 0.0 { STEP_FACTOR / norm } else { f64::INFINITY };
    if let Some(h) = opts.max_step {
        if h.is_nan() || h <= 0.0 || h > guard {
            return Err(DcmError::StepGuard {
                requested: h,
                limit: guard,
            });
        }
    }
    let h_max = opts.max_step.unwrap_or(guard);
    let horizon = tau_grid.last().copied().unwrap_or(0.0);
    if horizon / h_max > MAX_RK4_STEPS {
        return Err(DcmError::config(format!(
            "reference integration to tau = {horizon} needs about {:.1e} RK4 steps of {h_max:.2e}; \
             the generator norm {norm:.3e} is too stiff for the horizon",
            horizon / h_max
        )));
    }

    let mut rho = rho0.clone();
    let mut t = 0.0;
    let mut steps = 0;
    let mut events = 0;
    let mut step_used: f64 = 0.0;
    let mut points = Vec::with_capacity(tau_grid.len());
    for &target in tau_grid {
        let span = target - t;
        if span > 0.0 {
            let n = if h_max.is_finite() {
                (span / h_max).ceil().max(1.0) as usize
            } else {
                1
            };
            let h = span / n as f64;
            step_used = step_used.max(h);
            for _ in 0..n {
                rho = rk4_step(&rho, h, spec)?;
                if rho.hermitian_residual() > SYMMETRIZE_TOL {
                    rho = rho.hermitian_part();
                    events += 1;
                }
            }
            steps += n;
        }
        t = target;
        points.push(ReferencePoint { tau: target, rho: rho.clone() });
    }
    Ok(ReferenceSeries {
        variant: spec.variant,
        points,
        step: step_used,
        steps,
        symmetrization_events: events,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonitorEntry {
    pub tau: f64,
    pub trace_deviation: f64,
    pub hermitian_residual: f64,
    pub min_eigenvalue: f64,
    pub purity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PositivityReport {
    pub variant: ReferenceVariant,
    pub entries: Vec<MonitorEntry>,
    pub negative_eigenvalue: bool,
    pub trace_drift: bool,
    pub non_hermitian: bool,
}

impl PositivityReport {
    pub fn is_clean(&self) -> bool {
        !(self.negative_eigenvalue || self.trace_drift || self.non_hermitian)
    }

    pub fn max_trace_deviation(&self) -> f64 {
        self.entries.iter().map(|e| e.trace_deviation).fold(0.0, f64::max)
    }
}

pub fn positivity_monitor(series: &ReferenceSeries) -> PositivityReport {
    let entries: Vec<MonitorEntry> = series
        .points
        .iter()
        .map(|p| MonitorEntry {
            tau: p.tau,
            trace_deviation: (p.rho.trace() - ONE).norm(),
            hermitian_residual: p.rho.hermitian_residual(),
            min_eigenvalue: p.rho.min_eigenvalue(),
            purity: (&p.rho * &p.rho).trace().re,
        })
        .collect();
    PositivityReport {
        variant: series.variant,
        negative_eigenvalue: entries.iter().any(|e| e.min_eigenvalue < NEGATIVITY_FLAG),
        trace_drift: series.variant.is_trace_preserving()
            && entries.iter().any(|e| e.trace_deviation > TRACE_FLAG),
        non_hermitian: entries.iter().any(|e| e.hermitian_residual > DENSITY_TOL),
        entries,
    }
}
