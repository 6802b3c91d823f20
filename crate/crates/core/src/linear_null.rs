//! Null control of the linearized equation `u_t + Δ²u + Δu = f 1_ω` on Galerkin
//! truncations.
//!
//! A truncated state is a coordinate vector `a` over the orthonormal real modes of
//! [`crate::modal`]. Its dynamics are `a' = D a + B g + s(t)` where `D` holds the
//! linear rates, `g` holds the modal coefficients of the pre-localization control
//! and `B` is the matrix of `g ↦ P(1_ω g)`. The physical control is `f = 1_ω g`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::phi_functions;
use crate::modal::{self, RealMode};
use crate::schedule::{ControlSchedule, ModalControl, Payload, Segment};
use crate::spectral::{Mask, SpectralError, SpectralField, TorusGrid};

#[derive(Debug, Error)]
pub enum LinearNullError {
    #[error("control region is empty")]
    EmptyMask,
    #[error("lambda_max {lambda_max} exceeds the grid band {band}")]
    BandExceeded { lambda_max: f64, band: f64 },
    #[error("Gramian condition number {condition:.3e} exceeds 1e14")]
    GramianIllConditioned { condition: f64 },
    #[error("weights are only defined before the horizon: t = {t}, T = {horizon}")]
    AtHorizon { t: f64, horizon: f64 },
    #[error("weighted quotient {quantity} reached {value:.3e} (> 1e12); the cost constant M is too small")]
    WeightOverflow { quantity: &'static str, value: f64 },
    #[error("invalid source-term weights: {0}")]
    InvalidWeights(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Condition numbers above this are rejected.
pub const MAX_GRAMIAN_CONDITION: f64 = 1e14;
/// Weighted quotients above this signal a misconfigured cost constant.
pub const MAX_WEIGHTED_QUOTIENT: f64 = 1e12;

/// `∫_0^τ e^{c s} ds`.
fn exp_integral(c: f64, tau: f64) -> f64 {
    tau * phi_functions(c * tau)[1]
}

#[derive(Debug, Clone)]
pub struct GalerkinSystem {
    grid: TorusGrid,
    mask: Mask,
    lambda_max: f64,
    modes: Vec<RealMode>,
    rates: Vec<f64>,
    control: DMatrix<f64>,
    control_sq: DMatrix<f64>,
}

/// Assembles the truncation on modes with `|k|² ≤ lambda_max` controlled through `mask`.
pub fn build_galerkin(grid: TorusGrid, mask: &Mask, lambda_max: f64) -> Result<GalerkinSystem, LinearNullError> {
    if mask.grid() != grid {
        return Err(SpectralError::GridMismatch(grid, mask.grid()).into());
    }
    if mask.is_empty() {
        return Err(LinearNullError::EmptyMask);
    }
    let half = (grid.n() / 2 - 1) as f64;
    let band = half * half;
    if lambda_max > band || lambda_max < 0.0 {
        return Err(LinearNullError::BandExceeded { lambda_max, band });
    }
    let modes = modal::retained_modes(grid, lambda_max);
    let rates: Vec<f64> = modes.iter().map(RealMode::rate).collect();
    let values: Vec<Vec<f64>> = modes.iter().map(|m| modal::basis_field(grid, m).to_physical()).collect();
    let nodes = mask.indices();
    let n = modes.len();
    let weight = 1.0 / grid.len() as f64;
    let control =
        DMatrix::from_fn(n, n, |i, j| nodes.iter().map(|&x| values[i][x] * values[j][x]).sum::<f64>() * weight);
    let control_sq = &control * &control;
    Ok(GalerkinSystem { grid, mask: mask.clone(), lambda_max, modes, rates, control, control_sq })
}

impl GalerkinSystem {
    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn dim(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[RealMode] {
        &self.modes
    }

    /// Diagonal of `D`: `-(|k|⁴ - |k|²)` per mode.
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Matrix `B` of `g ↦ P(1_ω g)` (symmetric).
    pub fn control_matrix(&self) -> &DMatrix<f64> {
        &self.control
    }

    pub fn project(&self, u: &SpectralField) -> DVector<f64> {
        DVector::from_vec(modal::coords_from_field(&self.modes, u))
    }

    pub fn field(&self, a: &DVector<f64>) -> SpectralField {
        modal::field_from_coords(self.grid, &self.modes, a.as_slice())
    }

    /// `e^{Dτ} a`.
    pub fn propagate(&self, a: &DVector<f64>, tau: f64) -> DVector<f64> {
        DVector::from_iterator(a.len(), a.iter().zip(&self.rates).map(|(x, r)| x * (r * tau).exp()))
    }

    /// Controllability Gramian `∫_0^τ e^{Ds} B Bᵀ e^{Ds} ds` in closed form.
    pub fn gramian(&self, tau: f64) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.control_sq[(i, j)] * exp_integral(self.rates[i] + self.rates[j], tau))
    }

    /// The same Gramian by Gauss–Legendre quadrature with `nodes` points.
    pub fn gramian_gauss_legendre(&self, tau: f64, nodes: usize) -> DMatrix<f64> {
        let (x, w) = gauss_legendre(nodes);
        let n = self.dim();
        let mut g = DMatrix::zeros(n, n);
        for (xi, wi) in x.iter().zip(&w) {
            let s = 0.5 * tau * (xi + 1.0);
            let e: Vec<f64> = self.rates.iter().map(|r| (r * s).exp()).collect();
            for i in 0..n {
                for j in 0..n {
                    g[(i, j)] += 0.5 * tau * wi * e[i] * self.control_sq[(i, j)] * e[j];
                }
            }
        }
        g
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` (Golub–Welsch).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            let k = i.max(j) as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> =
        (0..n).map(|i| (eig.eigenvalues[i], 2.0 * eig.eigenvectors[(0, i)].powi(2))).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

fn condition_number(g: &DMatrix<f64>) -> f64 {
    let ev = g.clone().symmetric_eigen().eigenvalues;
    let max = ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = ev.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Minimal-norm control on `[t0, t1]`: `g(t) = -B e^{D(t1-t)} λ` with costate `λ`.
#[derive(Debug, Clone)]
pub struct GramianControl {
    t0: f64,
    t1: f64,
    initial: DVector<f64>,
    costate: DVector<f64>,
    rates: Vec<f64>,
    control: DMatrix<f64>,
    control_sq: DMatrix<f64>,
    condition: f64,
}

/// Steers `a` at `t0` to zero at `t1`.
pub fn gramian_control(
    sys: &GalerkinSystem,
    a: &DVector<f64>,
    t0: f64,
    t1: f64,
) -> Result<GramianControl, LinearNullError> {
    steer_to(sys, a, &DVector::zeros(sys.dim()), t0, t1)
}

/// Steers `a` at `t0` so that the controlled part ends at `-offset` at `t1`.
fn steer_to(
    sys: &GalerkinSystem,
    a: &DVector<f64>,
    offset: &DVector<f64>,
    t0: f64,
    t1: f64,
) -> Result<GramianControl, LinearNullError> {
    if !(t1 > t0) {
        return Err(LinearNullError::InvalidArgument(format!("need t1 > t0, got [{t0}, {t1}]")));
    }
    if a.len() != sys.dim() || a.iter().any(|x| !x.is_finite()) {
        return Err(LinearNullError::InvalidArgument("initial state must be finite with one entry per mode".into()));
    }
    let tau = t1 - t0;
    let g = sys.gramian(tau);
    let condition = condition_number(&g);
    if condition > MAX_GRAMIAN_CONDITION {
        return Err(LinearNullError::GramianIllConditioned { condition });
    }
    let rhs = sys.propagate(a, tau) + offset;
    let costate = if rhs.iter().all(|&x| x == 0.0) {
        DVector::zeros(sys.dim())
    } else {
        match g.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => g.lu().solve(&rhs).ok_or(LinearNullError::GramianIllConditioned { condition })?,
        }
    };
    Ok(GramianControl {
        t0,
        t1,
        initial: a.clone(),
        costate,
        rates: sys.rates.clone(),
        control: sys.control.clone(),
        control_sq: sys.control_sq.clone(),
        condition,
    })
}

impl GramianControl {
    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn costate(&self) -> &DVector<f64> {
        &self.costate
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Adjoint state `ψ(t) = e^{D(t1-t)} λ`.
    pub fn adjoint_at(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.rates.len(),
            self.costate.iter().zip(&self.rates).map(|(l, r)| l * (r * (self.t1 - t)).exp()),
        )
    }

    /// Modal coefficients `g(t)` of the control before localization.
    pub fn coefficients_at(&self, t: f64) -> DVector<f64> {
        -(&self.control * self.adjoint_at(t))
    }

    /// Controlled state (without any source) at `t ∈ [t0, t1]`, in closed form.
    pub fn state_at(&self, t: f64) -> DVector<f64> {
        let s = t - self.t0;
        let n = self.rates.len();
        DVector::from_fn(n, |i, _| {
            let free = self.initial[i] * (self.rates[i] * s).exp();
            let forced: f64 = (0..n)
                .map(|j| {
                    self.control_sq[(i, j)]
                        * self.costate[j]
                        * (self.rates[j] * (self.t1 - t)).exp()
                        * exp_integral(self.rates[i] + self.rates[j], s)
                })
                .sum();
            free - forced
        })
    }

    /// `‖g‖_{L²(t0,t1)}` in modal coordinates, `sqrt(λᵀ G λ)`.
    pub fn cost(&self) -> f64 {
        let n = self.rates.len();
        let tau = self.t1 - self.t0;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += self.costate[i]
                    * self.control_sq[(i, j)]
                    * exp_integral(self.rates[i] + self.rates[j], tau)
                    * self.costate[j];
            }
        }
        acc.max(0.0).sqrt()
    }

    pub fn to_payload(&self, sys: &GalerkinSystem) -> Payload {
        Payload::Modal(ModalControl::new(
            sys.mask.clone(),
            sys.lambda_max,
            self.costate.iter().copied().collect(),
            self.t1,
        ))
    }
}

/// `T_k = T(1 - q^{-k})` for `k = 0..=K`, with `K` the first index where `T - T_K < 1e-3 T`.
pub fn source_term_grid(horizon: f64, q: f64) -> Vec<f64> {
    let mut out = vec![0.0];
    let mut k = 0;
    loop {
        k += 1;
        let t = horizon * (1.0 - q.powi(-k));
        out.push(t);
        if horizon - t < 1e-3 * horizon {
            return out;
        }
    }
}

/// Interval boundaries used by the gluing: the source-term grid with the last sliver
/// `(T_K, T)` absorbed into the last interval.
pub fn interval_bounds(horizon: f64, q: f64) -> Vec<f64> {
    let mut g = source_term_grid(horizon, q);
    *g.last_mut().expect("grid is never empty") = horizon;
    g
}

/// Lebeau–Robbiano times `l_1 = 3T/4`, `l_{n+1} = T/2 + (T/4) 2^{-n}`.
pub fn telescoping_sequence(horizon: f64, count: usize) -> Vec<f64> {
    (0..count).map(|n| 0.5 * horizon + 0.25 * horizon * 0.5f64.powi(n as i32)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SourceTermWeights {
    /// Cost constant `M`.
    pub m: f64,
    pub p: f64,
    pub q: f64,
    pub horizon: f64,
}

impl SourceTermWeights {
    pub fn new(m: f64, p: f64, q: f64, horizon: f64) -> Result<Self, LinearNullError> {
        if !(m > 0.0) || !(horizon > 0.0) {
            return Err(LinearNullError::InvalidWeights(format!("need M > 0 and T > 0, got M = {m}, T = {horizon}")));
        }
        if !(q > 1.0 && q < std::f64::consts::SQRT_2) {
            return Err(LinearNullError::InvalidWeights(format!("q = {q} must lie in (1, sqrt 2)")));
        }
        let bound = q * q / (2.0 - q * q);
        if !(p > bound) {
            return Err(LinearNullError::InvalidWeights(format!("p = {p} must exceed q²/(2 - q²) = {bound}")));
        }
        Ok(Self { m, p, q, horizon })
    }

    /// `M = 0.1, p = 3, q = 1.2`.
    pub fn with_horizon(horizon: f64) -> Result<Self, LinearNullError> {
        Self::new(0.1, 3.0, 1.2, horizon)
    }

    fn remaining(&self, t: f64) -> Result<f64, LinearNullError> {
        if t >= self.horizon {
            return Err(LinearNullError::AtHorizon { t, horizon: self.horizon });
        }
        Ok(self.horizon - t)
    }

    pub fn log_rho0(&self, t: f64) -> Result<f64, LinearNullError> {
        Ok(-self.m * self.p / ((self.q - 1.0) * self.remaining(t)?))
    }

    pub fn log_rho_s(&self, t: f64) -> Result<f64, LinearNullError> {
        Ok(-(1.0 + self.p) * self.q * self.q * self.m / ((self.q - 1.0) * self.remaining(t)?))
    }

    pub fn grid(&self) -> Vec<f64> {
        source_term_grid(self.horizon, self.q)
    }
}

/// `(ρ₀(t), ρ_S(t))`.
pub fn evaluate_weights(w: &SourceTermWeights, t: f64) -> Result<(f64, f64), LinearNullError> {
    Ok((w.log_rho0(t)?.exp(), w.log_rho_s(t)?.exp()))
}

/// Sample times: `per_interval` uniform steps on every gluing interval.
pub fn sample_times(w: &SourceTermWeights, per_interval: usize) -> Vec<f64> {
    let bounds = interval_bounds(w.horizon, w.q);
    let per = per_interval.max(1);
    let mut out = vec![bounds[0]];
    for win in bounds.windows(2) {
        for s in 1..=per {
            out.push(if s == per { win[1] } else { win[0] + (win[1] - win[0]) * s as f64 / per as f64 });
        }
    }
    out
}

/// Modal source `s(t)` known at sample times and linear in between.
#[derive(Debug, Clone)]
pub struct SampledSource {
    pub times: Vec<f64>,
    pub values: Vec<DVector<f64>>,
}

impl SampledSource {
    pub fn zero(times: Vec<f64>, dim: usize) -> Self {
        let values = vec![DVector::zeros(dim); times.len()];
        Self { times, values }
    }

    pub fn from_fn(times: Vec<f64>, f: impl Fn(f64) -> DVector<f64>) -> Self {
        let values = times.iter().map(|&t| f(t)).collect();
        Self { times, values }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|&x| x == 0.0))
    }

    /// `‖S/ρ_S‖_{L²(0,T;H^{-2})}` by the trapezoid rule (samples at `T` count as zero).
    pub fn weighted_norm(&self, sys: &GalerkinSystem, w: &SourceTermWeights) -> f64 {
        let dual: Vec<f64> = sys.modes().iter().map(|m| (1.0 + m.k_squared()).powi(-2)).collect();
        let density: Vec<f64> = self
            .times
            .iter()
            .zip(&self.values)
            .map(|(&t, v)| {
                let n2: f64 = v.iter().zip(&dual).map(|(x, d)| x * x * d).sum();
                match w.log_rho_s(t) {
                    Ok(l) if n2 > 0.0 => (n2.ln() - 2.0 * l).exp(),
                    _ => 0.0,
                }
            })
            .collect();
        let mut acc = 0.0;
        for i in 1..self.times.len() {
            acc += 0.5 * (self.times[i] - self.times[i - 1]) * (density[i] + density[i - 1]);
        }
        acc.sqrt()
    }

    /// `‖S_1 - S_2‖` in the weighted source norm.
    pub fn weighted_distance(&self, other: &Self, sys: &GalerkinSystem, w: &SourceTermWeights) -> f64 {
        let diff = SampledSource {
            times: self.times.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        };
        diff.weighted_norm(sys, w)
    }
}

/// Per-interval Gramian controls glued on the source-term grid.
#[derive(Debug, Clone)]
pub struct GluedControl {
    pub bounds: Vec<f64>,
    pub pieces: Vec<GramianControl>,
}

impl GluedControl {
    fn piece(&self, t: f64) -> &GramianControl {
        let k = self.bounds.windows(2).position(|w| t < w[1]).unwrap_or(self.pieces.len() - 1);
        &self.pieces[k]
    }

    pub fn coefficients_at(&self, t: f64) -> DVector<f64> {
        self.piece(t).coefficients_at(t)
    }

    pub fn to_schedule(&self, sys: &GalerkinSystem) -> ControlSchedule {
        let segments = self.pieces.iter().map(|p| Segment { t0: p.t0, t1: p.t1, payload: p.to_payload(sys) }).collect();
        ControlSchedule::from_segments(segments).expect("pieces are contiguous")
    }

    /// One CSV per interval: header `t,x<node>…` and physical control values at the masked nodes.
    pub fn export_csv(&self, sys: &GalerkinSystem, samples_per_interval: usize) -> Vec<String> {
        let nodes = sys.mask.indices();
        self.pieces
            .iter()
            .map(|p| {
                let mut out = String::from("t");
                for i in &nodes {
                    out.push_str(&format!(",x{i}"));
                }
                out.push('\n');
                let m = samples_per_interval.max(1);
                for s in 0..=m {
                    let t = p.t0 + (p.t1 - p.t0) * s as f64 / m as f64;
                    let values = sys.field(&p.coefficients_at(t)).to_physical();
                    out.push_str(&format!("{t:.17e}"));
                    for &i in &nodes {
                        out.push_str(&format!(",{:.17e}", values[i]));
                    }
                    out.push('\n');
                }
                out
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NullControlReport {
    pub initial_norm: f64,
    pub terminal_norm: f64,
    /// Largest jump of the glued state across an interior interval boundary.
    pub continuity_defect: f64,
    /// `sup_t ‖u(t)‖ / ρ₀(t)` over samples before the horizon.
    pub state_over_rho0: f64,
    /// `sup_t ‖g(t)‖ / ρ₀(t)` over samples before the horizon.
    pub control_over_rho0: f64,
    /// `‖S/ρ_S‖` in the weighted source norm.
    pub source_norm: f64,
    /// Total `‖g‖_{L²(0,T)}`.
    pub control_cost: f64,
    pub intervals: usize,
}

/// Glued state and control produced by [`null_control_with_source`].
#[derive(Debug, Clone)]
pub struct NullControlOutcome {
    pub control: GluedControl,
    /// Glued state at the source sample times.
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub report: NullControlReport,
}

/// Exact update of `û' = D û + s` over a step where `s` is linear from `s0` to `s1`.
fn source_step(rates: &[f64], u: &DVector<f64>, s0: &DVector<f64>, s1: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(u.len(), |i, _| {
        let [e, p1, p2, _] = phi_functions(rates[i] * h);
        e * u[i] + h * (p1 * s0[i] + p2 * (s1[i] - s0[i]))
    })
}

/// Source-term method: per interval, steer the incoming state to zero while the
/// source-only response from zero data is carried into the next interval.
///
/// On the final interval the control also cancels the source response, so the glued
/// state vanishes at `T`.
pub fn null_control_with_source(
    sys: &GalerkinSystem,
    u0: &DVector<f64>,
    source: &SampledSource,
    w: &SourceTermWeights,
) -> Result<NullControlOutcome, LinearNullError> {
    let bounds = interval_bounds(w.horizon, w.q);
    let times = &source.times;
    if times.first() != Some(&0.0) || times.last() != Some(&w.horizon) || source.values.len() != times.len() {
        return Err(LinearNullError::InvalidArgument("source samples must span [0, T]".into()));
    }
    let index_of = |t: f64| times.iter().position(|&s| (s - t).abs() <= 1e-14 * w.horizon);
    let mut marks = Vec::with_capacity(bounds.len());
    for &b in &bounds {
        marks.push(index_of(b).ok_or_else(|| {
            LinearNullError::InvalidArgument(format!("source samples miss the interval boundary {b}"))
        })?);
    }

    let n = sys.dim();
    let mut pieces = Vec::with_capacity(bounds.len() - 1);
    let mut states = vec![DVector::zeros(n); times.len()];
    let mut a = u0.clone();
    let mut continuity: f64 = 0.0;
    let last = bounds.len() - 2;
    for k in 0..=last {
        let (i0, i1) = (marks[k], marks[k + 1]);
        // Source-only response from zero data.
        let mut hat = vec![DVector::zeros(n)];
        for i in i0..i1 {
            let h = times[i + 1] - times[i];
            let next = source_step(&sys.rates, hat.last().unwrap(), &source.values[i], &source.values[i + 1], h);
            hat.push(next);
        }
        let hat_end = hat.last().unwrap().clone();
        let piece = if k == last {
            steer_to(sys, &a, &hat_end, bounds[k], bounds[k + 1])?
        } else {
            gramian_control(sys, &a, bounds[k], bounds[k + 1])?
        };
        for (off, i) in (i0..=i1).enumerate() {
            let value = piece.state_at(times[i]) + &hat[off];
            if i == i1 && k < last {
                continuity = continuity.max((&value - &hat_end).norm());
            } else {
                states[i] = value;
            }
        }
        pieces.push(piece);
        a = hat_end;
    }

    let mut state_q: f64 = 0.0;
    let mut control_q: f64 = 0.0;
    let control = GluedControl { bounds, pieces };
    for (i, &t) in times.iter().enumerate() {
        let Ok(log_rho) = w.log_rho0(t) else { continue };
        for (value, slot) in [(states[i].norm(), &mut state_q), (control.coefficients_at(t).norm(), &mut control_q)] {
            if value > 0.0 {
                *slot = slot.max((value.ln() - log_rho).exp());
            }
        }
    }
    for (quantity, value) in [("state/rho0", state_q), ("control/rho0", control_q)] {
        if !(value <= MAX_WEIGHTED_QUOTIENT) {
            return Err(LinearNullError::WeightOverflow { quantity, value });
        }
    }
    let report = NullControlReport {
        initial_norm: u0.norm(),
        terminal_norm: states.last().map_or(0.0, |s| s.norm()),
        continuity_defect: continuity,
        state_over_rho0: state_q,
        control_over_rho0: control_q,
        source_norm: source.weighted_norm(sys, w),
        control_cost: control.pieces.iter().map(|p| p.cost().powi(2)).sum::<f64>().sqrt(),
        intervals: control.pieces.len(),
    };
    Ok(NullControlOutcome { control, times: times.clone(), states, report })
}

#[derive(Debug, Clone, Serialize)]
pub struct ObservabilityReport {
    pub horizon: f64,
    pub smallest_eigenvalue: f64,
    pub largest_eigenvalue: f64,
    pub eigenvalues: Vec<f64>,
}

/// Spectrum of the observability Gramian `∫_0^T e^{Ds} B Bᵀ e^{Ds} ds` of the adjoint
/// system observed through `1_ω`.
pub fn observability_probe(sys: &GalerkinSystem, horizon: f64) -> ObservabilityReport {
    let mut eigenvalues: Vec<f64> = sys.gramian(horizon).symmetric_eigen().eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    ObservabilityReport {
        horizon,
        smallest_eigenvalue: eigenvalues[0],
        largest_eigenvalue: *eigenvalues.last().unwrap(),
        eigenvalues,
    }
}

/// `‖g‖_{L²(0,T)}` of the minimal-norm control steering `a` to zero in time `T`.
pub fn control_cost(sys: &GalerkinSystem, a: &DVector<f64>, horizon: f64) -> Result<f64, LinearNullError> {
    Ok(gramian_control(sys, a, 0.0, horizon)?.cost())
}

#[derive(Debug, Clone, Serialize)]
pub struct CostTrend {
    pub horizons: Vec<f64>,
    pub costs: Vec<f64>,
    /// Least-squares fit `log cost ≈ intercept + slope / T`.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn cost_trend(sys: &GalerkinSystem, a: &DVector<f64>, horizons: &[f64]) -> Result<CostTrend, LinearNullError> {
    let costs = horizons.iter().map(|&t| control_cost(sys, a, t)).collect::<Result<Vec<_>, _>>()?;
    let x: Vec<f64> = horizons.iter().map(|t| 1.0 / t).collect();
    let y: Vec<f64> = costs.iter().map(|c| c.ln()).collect();
    let (slope, intercept, r_squared) = linear_fit(&x, &y);
    Ok(CostTrend { horizons: horizons.to_vec(), costs, slope, intercept, r_squared })
}

/// Least-squares line `(slope, intercept, R²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralRatio {
    pub lambda: f64,
    pub modes: usize,
    /// Empirical `max ‖φ‖_∞ / ‖φ‖_{L¹(ω)}` with the normalized measure `(2π)^{-d} dx`.
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralProbeReport {
    pub table: Vec<SpectralRatio>,
    /// Fit `log r ≈ intercept + slope √λ` over the entries with `λ > 0` (reported only).
    pub envelope_slope: f64,
    pub envelope_intercept: f64,
}

fn sup_over_l1(basis: &[Vec<f64>], mask: &[bool], c: &[f64]) -> f64 {
    let npts = basis.first().map_or(0, Vec::len);
    let mut sup: f64 = 0.0;
    let mut l1 = 0.0;
    for x in 0..npts {
        let v: f64 = c.iter().zip(basis).map(|(ci, b)| ci * b[x]).sum();
        sup = sup.max(v.abs());
        if mask[x] {
            l1 += v.abs();
        }
    }
    let l1 = l1 / npts as f64;
    if l1 == 0.0 {
        f64::INFINITY
    } else {
        sup / l1
    }
}

/// Maximizes `‖E_λ φ‖_∞ / ‖E_λ φ‖_{L¹(ω)}` per `λ` by Gaussian sampling plus local ascent.
///
/// `lambdas` are visited in increasing order and each search starts from the previous
/// optimum, so the table is non-decreasing.
pub fn spectral_inequality_probe(
    grid: TorusGrid,
    mask: &Mask,
    lambdas: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<SpectralProbeReport, LinearNullError> {
    if mask.is_empty() {
        return Err(LinearNullError::EmptyMask);
    }
    if n_samples < 100 {
        return Err(LinearNullError::InvalidArgument(format!("need at least 100 samples, got {n_samples}")));
    }
    let mut order: Vec<f64> = lambdas.to_vec();
    order.sort_by(f64::total_cmp);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Vec<f64> = Vec::new();
    let mut best_ratio;
    let mut table = Vec::new();
    for &lambda in &order {
        let modes = modal::retained_modes(grid, lambda);
        let basis: Vec<Vec<f64>> = modes.iter().map(|m| modal::basis_field(grid, m).to_physical()).collect();
        let dim = modes.len();
        best.resize(dim, 0.0);
        best_ratio = if best.iter().any(|&x| x != 0.0) { sup_over_l1(&basis, mask.nodes(), &best) } else { 0.0 };
        for _ in 0..n_samples {
            let c: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let r = sup_over_l1(&basis, mask.nodes(), &c);
            if r.is_finite() && r > best_ratio {
                best_ratio = r;
                best = c;
            }
        }
        // Local ascent with shrinking Gaussian steps.
        let mut step = 0.5;
        let mut misses = 0;
        while step > 1e-6 {
            let scale = best.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
            let trial: Vec<f64> =
                best.iter().map(|x| x + step * scale * rng.sample::<f64, _>(StandardNormal)).collect();
            let r = sup_over_l1(&basis, mask.nodes(), &trial);
            if r.is_finite() && r > best_ratio {
                best_ratio = r;
                best = trial;
                misses = 0;
            } else {
                misses += 1;
                if misses >= 40 {
                    step *= 0.5;
                    misses = 0;
                }
            }
        }
        table.push(SpectralRatio { lambda, modes: dim, ratio: best_ratio });
    }
    let fit: Vec<&SpectralRatio> = table.iter().filter(|r| r.lambda > 0.0).collect();
    let (envelope_slope, envelope_intercept) = if fit.len() >= 2 {
        let x: Vec<f64> = fit.iter().map(|r| r.lambda.sqrt()).collect();
        let y: Vec<f64> = fit.iter().map(|r| r.ratio.ln()).collect();
        let (s, i, _) = linear_fit(&x, &y);
        (s, i)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(SpectralProbeReport { table, envelope_slope, envelope_intercept })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TorusGrid {
        TorusGrid::new(1, 32).unwrap()
    }

    fn half() -> Mask {
        Mask::slab(grid(), 0.0, std::f64::consts::PI)
    }

    #[test]
    fn assembly_examples() {
        let sys = build_galerkin(grid(), &half(), 0.0).unwrap();
        assert_eq!(sys.dim(), 1);
        assert!((sys.control_matrix()[(0, 0)] - 0.5).abs() < 1e-15);
        let sys = build_galerkin(grid(), &Mask::full(grid()), 4.0).unwrap();
        assert_eq!(sys.dim(), 5);
        assert!((sys.control_matrix() - DMatrix::identity(5, 5)).norm() < 1e-13);
        let empty = Mask::new(grid(), vec![false; 32]).unwrap();
        assert!(matches!(build_galerkin(grid(), &empty, 4.0), Err(LinearNullError::EmptyMask)));
        assert!(matches!(build_galerkin(grid(), &half(), 400.0), Err(LinearNullError::BandExceeded { .. })));
    }

    #[test]
    fn control_matrix_has_full_rank() {
        let sys = build_galerkin(grid(), &half(), 16.0).unwrap();
        let ev = sys.control_matrix().clone().symmetric_eigen().eigenvalues;
        assert!(ev.iter().all(|&v| v > 1e-6));
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(5);
        let int = |f: &dyn Fn(f64) -> f64| x.iter().zip(&w).map(|(a, b)| b * f(*a)).sum::<f64>();
        assert!((int(&|_| 1.0) - 2.0).abs() < 1e-14);
        assert!((int(&|t| t.powi(8)) - 2.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn scalar_gramian_closed_form() {
        let sys = build_galerkin(grid(), &Mask::full(grid()), 4.0).unwrap();
        let g = sys.gramian(0.7);
        for (i, &s) in sys.rates().iter().enumerate() {
            let expected = if s == 0.0 { 0.7 } else { ((2.0 * s * 0.7).exp() - 1.0) / (2.0 * s) };
            assert!((g[(i, i)] - expected).abs() < 1e-12 * expected.max(1e-3));
        }
        let q = sys.gramian_gauss_legendre(0.7, 64);
        assert!((&g - &q).norm() < 1e-10);
    }

    #[test]
    fn zero_state_needs_no_control() {
        let sys = build_galerkin(grid(), &half(), 4.0).unwrap();
        let c = gramian_control(&sys, &DVector::zeros(5), 0.0, 1.0).unwrap();
        assert_eq!(c.costate().norm(), 0.0);
        assert_eq!(c.coefficients_at(0.3).norm(), 0.0);
    }

    /// Independent RK4 integration of the truncated controlled system.
    fn rk4_terminal(sys: &GalerkinSystem, c: &GramianControl, a: &DVector<f64>, steps: usize) -> DVector<f64> {
        let h = (c.t1() - c.t0()) / steps as f64;
        let d = DMatrix::from_diagonal(&DVector::from_vec(sys.rates().to_vec()));
        let f = |t: f64, x: &DVector<f64>| &d * x + sys.control_matrix() * c.coefficients_at(t);
        let mut x = a.clone();
        let mut t = c.t0();
        for _ in 0..steps {
            let k1 = f(t, &x);
            let k2 = f(t + h / 2.0, &(&x + &k1 * (h / 2.0)));
            let k3 = f(t + h / 2.0, &(&x + &k2 * (h / 2.0)));
            let k4 = f(t + h, &(&x + &k3 * h));
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            t += h;
        }
        x
    }

    #[test]
    fn gramian_control_reaches_zero() {
        let sys = build_galerkin(grid(), &half(), 4.0).unwrap();
        let mut a = DVector::zeros(5);
        a[1] = 1.0;
        let c = gramian_control(&sys, &a, 0.0, 1.0).unwrap();
        assert!(c.state_at(1.0).norm() <= 1e-10);
        let x = rk4_terminal(&sys, &c, &a, 4000);
        assert!(x.norm() <= 1e-8, "terminal {}", x.norm());
    }

    #[test]
    fn control_is_dual_of_adjoint() {
        let sys = build_galerkin(grid(), &half(), 9.0).unwrap();
        let a = DVector::from_fn(sys.dim(), |i, _| 0.1 * (i as f64 + 1.0).sin());
        let c = gramian_control(&sys, &a, 0.2, 0.9).unwrap();
        for &t in &[0.2, 0.5, 0.9] {
            // Adjoint ψ' = -D ψ integrated backward from ψ(t1) = λ.
            let psi = DVector::from_fn(sys.dim(), |i, _| c.costate()[i] * (sys.rates()[i] * (0.9 - t)).exp());
            let g = -(sys.control_matrix() * psi);
            assert!((g - c.coefficients_at(t)).norm() <= 1e-9 * c.costate().norm().max(1.0));
        }
    }

    #[test]
    fn grid_formula() {
        let g = source_term_grid(1.0, 1.2);
        assert_eq!(g[0], 0.0);
        assert!((g[1] - (1.0 - 1.0 / 1.2)).abs() < 1e-15);
        assert!(1.0 - g.last().unwrap() < 1e-3);
        assert!(1.0 - g[g.len() - 2] >= 1e-3);
        for k in 0..g.len() - 1 {
            let gap = (1.2 - 1.0) / 1.2f64.powi(k as i32 + 1);
            assert!((g[k + 1] - g[k] - gap).abs() < 1e-14);
        }
    }

    #[test]
    fn weights_examples() {
        let w = SourceTermWeights::with_horizon(1.0).unwrap();
        let w1 = SourceTermWeights::new(1.0, 3.0, 1.2, 1.0).unwrap();
        let (r0, _) = evaluate_weights(&w1, 0.0).unwrap();
        assert!((r0 - (-15.0f64).exp()).abs() < 1e-20);
        assert!(evaluate_weights(&w, 1.0).is_err());
        assert!(w.log_rho0(0.1).unwrap() > w.log_rho0(0.2).unwrap());
        // ρ₀²/ρ_S → 0 near T.
        let near = |t: f64| 2.0 * w.log_rho0(t).unwrap() - w.log_rho_s(t).unwrap();
        assert!(near(0.999) < near(0.99) && near(0.999) < -10.0);
        assert!(SourceTermWeights::new(0.1, 2.0, 1.2, 1.0).is_err());
        assert!(SourceTermWeights::new(0.1, 3.0, 1.5, 1.0).is_err());
    }

    #[test]
    fn weight_identity_on_grid() {
        let w = SourceTermWeights::with_horizon(1.0).unwrap();
        let g = w.grid();
        for k in 0..g.len() - 2 {
            let lhs = w.log_rho0(g[k + 2]).unwrap();
            let rhs = w.m / (g[k + 2] - g[k + 1]) + w.log_rho_s(g[k]).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs());
        }
    }

    #[test]
    fn telescoping_identity() {
        let l = telescoping_sequence(1.0, 12);
        assert_eq!(l[0], 0.75);
        for n in 0..10 {
            assert_eq!(2.0 / (l[n] - l[n + 1]), 1.0 / (l[n + 1] - l[n + 2]));
        }
    }

    #[test]
    fn source_free_null_control() {
        let sys = build_galerkin(grid(), &half(), 16.0).unwrap();
        let w = SourceTermWeights::with_horizon(1.0).unwrap();
        let times = sample_times(&w, 8);
        let zero = SampledSource::zero(times.clone(), sys.dim());
        let out = null_control_with_source(&sys, &DVector::zeros(sys.dim()), &zero, &w).unwrap();
        assert_eq!(out.report.terminal_norm, 0.0);
        assert_eq!(out.report.control_cost, 0.0);
        let u0 = sys.project(&SpectralField::trig(grid(), &[1], false, 1.0));
        let out = null_control_with_source(&sys, &u0, &zero, &w).unwrap();
        assert!(out.report.terminal_norm <= 1e-8 * u0.norm());
        // Nothing is left after the first interval.
        let k1 = times.iter().position(|&t| t == out.control.bounds[1]).unwrap();
        assert!(out.states[k1].norm() == 0.0);
    }

    #[test]
    fn weighted_source_is_absorbed() {
        let sys = build_galerkin(grid(), &half(), 16.0).unwrap();
        let w = SourceTermWeights::with_horizon(1.0).unwrap();
        let times = sample_times(&w, 8);
        let shape = sys.project(&(SpectralField::trig(grid(), &[2], true, 1.0) + SpectralField::constant(grid(), 0.5)));
        let src = SampledSource::from_fn(times, |t| match w.log_rho_s(t) {
            Ok(l) => &shape * l.exp(),
            Err(_) => shape.scale(0.0),
        });
        let out = null_control_with_source(&sys, &DVector::zeros(sys.dim()), &src, &w).unwrap();
        assert!(out.report.terminal_norm <= 1e-8);
        assert!(out.report.state_over_rho0.is_finite());
        assert!(out.report.continuity_defect <= 1e-9);
    }

    #[test]
    fn observability_full_torus_closed_form() {
        let sys = build_galerkin(grid(), &Mask::full(grid()), 4.0).unwrap();
        let rep = observability_probe(&sys, 0.5);
        let mut expected: Vec<f64> = sys
            .rates()
            .iter()
            .map(|&s| if s == 0.0 { 0.5 } else { ((2.0 * s * 0.5).exp() - 1.0) / (2.0 * s) })
            .collect();
        expected.sort_by(f64::total_cmp);
        for (a, b) in rep.eigenvalues.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-10);
        }
        let sys = build_galerkin(grid(), &half(), 16.0).unwrap();
        assert!(observability_probe(&sys, 1.0).smallest_eigenvalue > 0.0);
    }

    #[test]
    fn spectral_probe_constant_case() {
        let rep = spectral_inequality_probe(grid(), &half(), &[0.0], 100, 1).unwrap();
        assert!((rep.table[0].ratio - 2.0).abs() < 1e-12);
        assert!(spectral_inequality_probe(grid(), &half(), &[0.0], 10, 1).is_err());
    }

    #[test]
    fn spectral_probe_matches_grid_search() {
        let full = Mask::full(grid());
        let rep = spectral_inequality_probe(grid(), &full, &[1.0], 200, 3).unwrap();
        let modes = modal::retained_modes(grid(), 1.0);
        let basis: Vec<Vec<f64>> = modes.iter().map(|m| modal::basis_field(grid(), m).to_physical()).collect();
        // The ratio is scale invariant: search c0 ∈ [-3, 3] and a phase with unit first harmonic.
        let mut best: f64 = 0.0;
        for i in 0..=600 {
            let c0 = -3.0 + 6.0 * i as f64 / 600.0;
            for j in 0..64 {
                let th = std::f64::consts::TAU * j as f64 / 64.0;
                best = best.max(sup_over_l1(&basis, full.nodes(), &[c0, th.cos(), th.sin()]));
            }
        }
        let r = rep.table[0].ratio;
        assert!((r - best).abs() <= 0.05 * best, "probe {r} grid {best}");
    }
}
