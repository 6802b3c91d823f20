//! Local null control of the nonlinear equation by a fixed point on the source term,
//! and the three-stage global pipeline (free smoothing, steering towards zero, local
//! null control).

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{evolve, DynamicsError, EvolutionProblem, Trajectory};
use crate::linear_null::{
    build_galerkin, null_control_with_source, sample_times, GalerkinSystem, GluedControl, LinearNullError,
    NullControlReport, SampledSource, SourceTermWeights,
};
use crate::schedule::{ControlSchedule, H0Vector, Payload};
use crate::spectral::{Mask, SpectralError, SpectralField};
use crate::steering::{steer_at_exact_time, SteeringError, SteeringOptions};

#[derive(Debug, Error)]
pub enum NonlinearNullError {
    #[error("fixed-point iteration does not contract (ratio {ratio:.3e} at iteration {iteration})")]
    NoContraction { iteration: usize, ratio: f64 },
    #[error("steering reached norm {achieved:.3e}, outside the local ball of radius {radius:.3e}")]
    SteeringFailed { achieved: f64, radius: f64 },
    #[error("local null-control radius is zero; the configuration cannot absorb any data")]
    ZeroRadius,
    #[error("invalid stage marks: need 0 < eps < delta < T, got ({eps}, {delta}, {horizon})")]
    InvalidStages { eps: f64, delta: f64, horizon: f64 },
    #[error(transparent)]
    Linear(#[from] LinearNullError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Steering(#[from] SteeringError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

#[derive(Debug, Clone, Serialize)]
pub struct PicardOptions {
    pub max_iter: usize,
    /// Stop once successive sources differ by at most this in the weighted source norm.
    pub tol: f64,
    pub samples_per_interval: usize,
    /// Step size of the nonlinear re-simulation.
    pub dt: f64,
    pub min_steps_per_segment: usize,
    /// Re-simulate the full nonlinear equation under the final control.
    pub resimulate: bool,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            max_iter: 20,
            tol: 1e-14,
            samples_per_interval: 8,
            dt: 1e-4,
            min_steps_per_segment: 16,
            resimulate: true,
        }
    }
}

/// Converged (or last) iterate of the source fixed point.
#[derive(Debug, Clone)]
pub struct PicardState {
    pub source: SampledSource,
    pub times: Vec<f64>,
    /// Truncated state iterate at the sample times.
    pub states: Vec<DVector<f64>>,
    pub control: GluedControl,
    pub weighted_source_norm: f64,
    pub iterations: usize,
    /// `‖S_{j+1} - S_j‖` per iteration.
    pub differences: Vec<f64>,
    /// Ratios of successive differences.
    pub ratios: Vec<f64>,
    pub linear_report: NullControlReport,
    /// `L²` norm at `T` of the full nonlinear solution under the final control.
    pub nonlinear_terminal_norm: Option<f64>,
    /// `sup ‖u(t)‖/ρ₀(t)` of the nonlinear solution over the sample times where
    /// `ρ₀(t) ≥ RHO0_FLOOR·‖u₀‖` (below that the weight is smaller than round-off).
    pub nonlinear_state_over_rho0: Option<f64>,
}

impl PicardState {
    pub fn max_ratio(&self) -> f64 {
        self.ratios.iter().copied().fold(0.0, f64::max)
    }

    /// Control as a schedule of `ω`-localized segments, shifted to start at `t0`.
    pub fn schedule(&self, sys: &GalerkinSystem, t0: f64) -> ControlSchedule {
        self.control.to_schedule(sys).shifted(t0)
    }
}

/// Relative resolution floor for the weighted state quotient.
pub const RHO0_FLOOR: f64 = 1e-10;

/// `S(t) = P Δ(u(t)³)` at every sample.
fn nonlinear_source(
    sys: &GalerkinSystem,
    times: &[f64],
    states: &[DVector<f64>],
) -> Result<SampledSource, SpectralError> {
    let values = states
        .iter()
        .map(|a| Ok(sys.project(&sys.field(a).laplacian_of_cube()?)))
        .collect::<Result<Vec<_>, SpectralError>>()?;
    Ok(SampledSource { times: times.to_vec(), values })
}

/// Fixed point `S ↦ Δ(u³)` where `u` is the null-controlled truncated state with source `S`.
pub fn picard_null(
    sys: &GalerkinSystem,
    u0: &SpectralField,
    w: &SourceTermWeights,
    opts: &PicardOptions,
) -> Result<(PicardState, Option<Trajectory>), NonlinearNullError> {
    let a0 = sys.project(u0);
    let times = sample_times(w, opts.samples_per_interval);
    let mut source = SampledSource::zero(times.clone(), sys.dim());
    let mut differences: Vec<f64> = Vec::new();
    let mut ratios: Vec<f64> = Vec::new();
    let mut growing = 0;
    let mut iterations = 0;
    loop {
        let out = match null_control_with_source(sys, &a0, &source, w) {
            // A source that drives the weighted state past the overflow guard means the
            // iterates are leaving every ball: the map does not contract here.
            Err(LinearNullError::WeightOverflow { value, .. }) if iterations > 0 => {
                return Err(NonlinearNullError::NoContraction { iteration: iterations + 1, ratio: value });
            }
            r => r?,
        };
        let next = nonlinear_source(sys, &out.times, &out.states)?;
        let diff = next.weighted_distance(&source, sys, w);
        iterations += 1;
        if let Some(&prev) = differences.last() {
            let ratio = if prev > 0.0 { diff / prev } else { 0.0 };
            ratios.push(ratio);
            if !ratio.is_finite() {
                return Err(NonlinearNullError::NoContraction { iteration: iterations, ratio });
            }
            growing = if ratio > 1.0 { growing + 1 } else { 0 };
            if growing >= 3 {
                return Err(NonlinearNullError::NoContraction { iteration: iterations, ratio });
            }
        }
        if !diff.is_finite() {
            return Err(NonlinearNullError::NoContraction { iteration: iterations, ratio: f64::INFINITY });
        }
        differences.push(diff);
        source = next;
        if diff <= opts.tol || iterations >= opts.max_iter {
            if diff > opts.tol {
                let ratio = ratios.last().copied().unwrap_or(f64::INFINITY);
                return Err(NonlinearNullError::NoContraction { iteration: iterations, ratio });
            }
            break;
        }
    }
    let out = null_control_with_source(sys, &a0, &source, w)?;
    let mut state = PicardState {
        weighted_source_norm: source.weighted_norm(sys, w),
        source,
        times: out.times,
        states: out.states,
        control: out.control,
        iterations,
        differences,
        ratios,
        linear_report: out.report,
        nonlinear_terminal_norm: None,
        nonlinear_state_over_rho0: None,
    };
    if !opts.resimulate {
        return Ok((state, None));
    }
    let problem = EvolutionProblem::new(u0.clone(), w.horizon)
        .control(state.control.to_schedule(sys))
        .dt(opts.dt)
        .min_steps_per_segment(opts.min_steps_per_segment)
        .samples(state.times.clone());
    let traj = evolve(&problem)?;
    let mut sup: f64 = 0.0;
    let floor = (RHO0_FLOOR * u0.sobolev_norm(0)).ln();
    for (t, u) in traj.times.iter().zip(&traj.states) {
        if let Ok(l) = w.log_rho0(*t) {
            let n = u.sobolev_norm(0);
            if n > 0.0 && l >= floor {
                sup = sup.max((n.ln() - l).exp());
            }
        }
    }
    state.nonlinear_terminal_norm = Some(traj.final_state().sobolev_norm(0));
    state.nonlinear_state_over_rho0 = Some(sup);
    Ok((state, Some(traj)))
}

#[derive(Debug, Clone, Serialize)]
pub struct RadiusProbe {
    pub amplitude: f64,
    pub converged: bool,
    pub max_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RadiusReport {
    /// Largest accepted `L²` amplitude along the probe direction.
    pub radius: f64,
    pub probes: Vec<RadiusProbe>,
}

/// Largest `L²` amplitude along `direction` (normalized internally) for which the fixed
/// point converges with every contraction ratio below 0.9: doubling, then bisection.
pub fn radius_search(
    sys: &GalerkinSystem,
    w: &SourceTermWeights,
    direction: &SpectralField,
    opts: &PicardOptions,
) -> RadiusReport {
    let unit = direction.scale(1.0 / direction.sobolev_norm(0));
    let quick = PicardOptions { resimulate: false, ..opts.clone() };
    let mut probes = Vec::new();
    let mut accept = |amp: f64| {
        let (converged, max_ratio) = match picard_null(sys, &unit.scale(amp), w, &quick) {
            Ok((s, _)) => (true, s.max_ratio()),
            Err(_) => (false, f64::INFINITY),
        };
        probes.push(RadiusProbe { amplitude: amp, converged, max_ratio });
        converged && max_ratio < 0.9
    };
    let mut lo = 1e-3;
    while !accept(lo) {
        lo *= 0.1;
        if lo < 1e-9 {
            return RadiusReport { radius: 0.0, probes };
        }
    }
    let mut hi = 2.0 * lo;
    while accept(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return RadiusReport { radius: lo, probes };
        }
    }
    while hi - lo > 1e-3 * lo {
        let mid = 0.5 * (lo + hi);
        if accept(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    RadiusReport { radius: lo, probes }
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineOptions {
    pub lambda_max: f64,
    /// Cost constant and grid ratio of the source-term weights.
    pub m: f64,
    pub p: f64,
    pub q: f64,
    /// Fraction of the local radius used as the steering target.
    pub safety: f64,
    pub steering: SteeringOptions,
    pub picard: PicardOptions,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            lambda_max: 16.0,
            m: 0.1,
            p: 3.0,
            q: 1.2,
            safety: 0.5,
            steering: SteeringOptions::default(),
            picard: PicardOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GlobalPipelinePlan {
    pub eps_phase_end: f64,
    pub delta_phase_end: f64,
    pub horizon: f64,
    /// Local radius found by [`radius_search`] and the steering target derived from it.
    pub radius: f64,
    pub target_radius: f64,
    /// `L²` norms at the stage marks and at `T`.
    pub norm_after_free: f64,
    pub norm_after_steering: f64,
    pub terminal_norm: f64,
    pub picard_iterations: usize,
    pub contraction_ratios: Vec<f64>,
    pub steering_resteers: usize,
    /// Whether the schedule is zero on `(0, ε)`, `ℋ₀`-valued on `(ε, δ)` and supported in
    /// `ω` on `(δ, T)`.
    pub structure_ok: bool,
    #[serde(skip)]
    pub schedule: ControlSchedule,
}

/// Number of equal sampling intervals of the returned pipeline trajectory.
pub const PIPELINE_SAMPLES: usize = 200;

/// Free evolution on `(0, ε)`, steering into the local ball on `(ε, δ)` and local null
/// control on `(δ, T)`; returns the plan and the full nonlinear trajectory.
pub fn global_null_pipeline(
    u0: &SpectralField,
    eps_t: f64,
    delta_t: f64,
    horizon: f64,
    mask: &Mask,
    opts: &PipelineOptions,
) -> Result<(GlobalPipelinePlan, Trajectory), NonlinearNullError> {
    if !(0.0 < eps_t && eps_t < delta_t && delta_t < horizon) {
        return Err(NonlinearNullError::InvalidStages { eps: eps_t, delta: delta_t, horizon });
    }
    let grid = u0.grid();
    let sys = build_galerkin(grid, mask, opts.lambda_max)?;
    let w = SourceTermWeights::new(opts.m, opts.p, opts.q, horizon - delta_t)?;
    let dt = opts.picard.dt;

    // Stage 1: no control.
    let mut schedule = ControlSchedule::new();
    schedule.push(eps_t, Payload::Zero);
    let stage1 = evolve(&EvolutionProblem::new(u0.clone(), eps_t).dt(dt))?;
    let u_eps = stage1.final_state().clone();

    let zero = SpectralField::zeros(grid);
    let (radius, target, stage2, resteers) = if u_eps.sobolev_norm(0) == 0.0 {
        (0.0, 0.0, None, 0)
    } else {
        let direction = SpectralField::trig(grid, &[1], false, 1.0);
        let radius = radius_search(&sys, &w, &direction, &opts.picard).radius;
        if radius == 0.0 {
            return Err(NonlinearNullError::ZeroRadius);
        }
        let target = opts.safety * radius;
        let (sched, report) = steer_at_exact_time(&u_eps, &zero, target, delta_t - eps_t, &opts.steering)?;
        (radius, target, Some(sched), report.resteers)
    };
    match &stage2 {
        Some(s) => schedule.append(s),
        None => schedule.push(delta_t - eps_t, Payload::H0(H0Vector::zeros(grid.d()))),
    }
    let to_delta = evolve(&EvolutionProblem::new(u0.clone(), delta_t).control(schedule.clone()).dt(dt))?;
    let u_delta = to_delta.final_state().clone();
    let norm_after_steering = u_delta.sobolev_norm(0);
    if norm_after_steering > target && norm_after_steering > 0.0 {
        return Err(NonlinearNullError::SteeringFailed { achieved: norm_after_steering, radius: target });
    }

    // Stage 3: local null control on (δ, T).
    let quick = PicardOptions { resimulate: false, ..opts.picard.clone() };
    let (state, _) = picard_null(&sys, &u_delta, &w, &quick)?;
    schedule.append(&state.schedule(&sys, 0.0));
    let traj = evolve(
        &EvolutionProblem::new(u0.clone(), horizon)
            .control(schedule.clone())
            .dt(dt)
            .min_steps_per_segment(opts.picard.min_steps_per_segment)
            .samples((1..PIPELINE_SAMPLES).map(|i| horizon * i as f64 / PIPELINE_SAMPLES as f64).collect()),
    )?;
    let plan = GlobalPipelinePlan {
        eps_phase_end: eps_t,
        delta_phase_end: delta_t,
        horizon,
        radius,
        target_radius: target,
        norm_after_free: u_eps.sobolev_norm(0),
        norm_after_steering,
        terminal_norm: traj.final_state().sobolev_norm(0),
        picard_iterations: state.iterations,
        contraction_ratios: state.ratios.clone(),
        steering_resteers: resteers,
        structure_ok: check_structure(&schedule, eps_t, delta_t, mask),
        schedule,
    };
    Ok((plan, traj))
}

/// Checks the per-stage control structure: no control, then `ℋ₀`-valued, then localized in `mask`.
pub fn check_structure(schedule: &ControlSchedule, eps_t: f64, delta_t: f64, mask: &Mask) -> bool {
    let tol = 1e-12 * delta_t.max(1.0);
    schedule.segments().iter().all(|s| {
        if s.t1 <= eps_t + tol {
            matches!(s.payload, Payload::Zero)
        } else if s.t0 >= eps_t - tol && s.t1 <= delta_t + tol {
            matches!(s.payload, Payload::Zero | Payload::H0(_))
        } else if s.t0 >= delta_t - tol {
            s.payload.support() == Some(mask)
        } else {
            false
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::TorusGrid;

    fn setup() -> (GalerkinSystem, SourceTermWeights) {
        let g = TorusGrid::new(1, 32).unwrap();
        let sys = build_galerkin(g, &Mask::slab(g, 0.0, std::f64::consts::PI), 16.0).unwrap();
        (sys, SourceTermWeights::with_horizon(1.0).unwrap())
    }

    #[test]
    fn zero_data_is_a_fixed_point() {
        let (sys, w) = setup();
        let u0 = SpectralField::zeros(sys.grid());
        let (s, traj) = picard_null(&sys, &u0, &w, &PicardOptions::default()).unwrap();
        assert_eq!(s.iterations, 1);
        assert_eq!(s.weighted_source_norm, 0.0);
        assert_eq!(s.linear_report.control_cost, 0.0);
        assert_eq!(traj.unwrap().final_state().sobolev_norm(0), 0.0);
    }

    #[test]
    fn large_data_does_not_contract() {
        let (sys, w) = setup();
        let dir = SpectralField::trig(sys.grid(), &[1], false, 1.0);
        let u0 = dir.scale(10.0 / dir.sobolev_norm(0));
        let opts = PicardOptions { resimulate: false, ..Default::default() };
        assert!(matches!(picard_null(&sys, &u0, &w, &opts), Err(NonlinearNullError::NoContraction { .. })));
    }

    #[test]
    fn iteration_is_deterministic() {
        let (sys, w) = setup();
        let u0 = SpectralField::trig(sys.grid(), &[1], false, 0.05);
        let opts = PicardOptions { resimulate: false, ..Default::default() };
        let (a, _) = picard_null(&sys, &u0, &w, &opts).unwrap();
        let (b, _) = picard_null(&sys, &u0, &w, &opts).unwrap();
        assert_eq!(a.differences, b.differences);
    }

    #[test]
    fn ratios_shrink_with_amplitude() {
        let (sys, w) = setup();
        let opts = PicardOptions { resimulate: false, tol: 0.0, max_iter: 3, ..Default::default() };
        let ratio = |amp: f64| {
            let u0 = SpectralField::trig(sys.grid(), &[1], false, amp);
            match picard_null(&sys, &u0, &w, &opts) {
                Err(NonlinearNullError::NoContraction { ratio, .. }) => ratio,
                other => panic!("expected the iteration cap, got {other:?}"),
            }
        };
        let r: Vec<f64> = [0.2, 0.1, 0.05].iter().map(|&a| ratio(a)).collect();
        assert!(r[0] >= r[1] && r[1] >= r[2], "{r:?}");
    }

    #[test]
    fn structure_check_rejects_misplaced_control() {
        let g = TorusGrid::new(1, 16).unwrap();
        let m = Mask::slab(g, 0.0, 1.0);
        let mut s = ControlSchedule::new();
        s.push(0.1, Payload::H0(H0Vector::zeros(1)));
        s.push(0.9, Payload::Zero);
        assert!(!check_structure(&s, 0.1, 0.5, &m));
        let mut s = ControlSchedule::new();
        s.push(0.1, Payload::Zero);
        s.push(0.4, Payload::H0(H0Vector::zeros(1)));
        s.push(0.5, Payload::Localized { field: SpectralField::zeros(g), mask: m.clone() });
        assert!(check_structure(&s, 0.1, 0.5, &m));
    }

    #[test]
    fn rejects_bad_stage_marks() {
        let g = TorusGrid::new(1, 32).unwrap();
        let u0 = SpectralField::zeros(g);
        let m = Mask::slab(g, 0.0, 1.0);
        let r = global_null_pipeline(&u0, 0.5, 0.2, 1.0, &m, &PipelineOptions::default());
        assert!(matches!(r, Err(NonlinearNullError::InvalidStages { .. })));
    }

    #[test]
    fn zero_data_pipeline_uses_no_control() {
        let g = TorusGrid::new(1, 32).unwrap();
        let u0 = SpectralField::zeros(g);
        let m = Mask::slab(g, 0.0, std::f64::consts::PI);
        let (plan, traj) = global_null_pipeline(&u0, 0.05, 0.5, 1.0, &m, &PipelineOptions::default()).unwrap();
        assert_eq!(plan.terminal_norm, 0.0);
        assert!(plan.structure_ok);
        assert_eq!(traj.final_state().sobolev_norm(0), 0.0);
    }
}
