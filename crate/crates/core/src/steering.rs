//! Small-time approximate steering with controls in `span{1, sin x_i, cos x_i}`.
//!
//! A control-space increment `η` is applied by forcing `η/δ` over a window of
//! length `δ`. A cubic direction `Δ(φ³)` is produced by jumping the state by
//! `δ^{-1/3} φ`, evolving freely for `δ`, and jumping back. Jumps that are not
//! themselves in the control space are produced recursively on a faster time
//! scale.

use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{evolve, DynamicsError, EvolutionProblem, Scheme, Trajectory};
use crate::saturation::{generate_mode_plan_with, Injection, Phase, SaturationError, TrigPoly};
use crate::schedule::{ControlSchedule, H0Vector, Payload, Segment};
use crate::spectral::{Mask, SpectralField};

#[derive(Debug, Error)]
pub enum SteeringError {
    #[error("steering budget exhausted; best error {:.3e} with delta {:.3e}", .report.achieved_error, .report.delta_used)]
    BudgetExhausted { report: Box<SteeringReport> },
    #[error("horizon {needed:.3e} exceeds the allowed {allowed:.3e}")]
    HorizonExceeded { needed: f64, allowed: f64 },
    #[error(transparent)]
    Saturation(#[from] SaturationError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, Serialize)]
pub struct SteeringOptions {
    pub k_reg: f64,
    pub dt: f64,
    pub scheme: Scheme,
    pub min_steps_per_segment: usize,
    /// Initial window length of an elementary move.
    pub delta0: f64,
    /// Number of times the window may be halved after a failed verification.
    pub halvings: usize,
    /// Ratio between the length of a jump window and the free window it serves.
    pub jump_ratio: f64,
    pub injection: Injection,
    /// Saturation level `N`: modes with `|p|₁ ≤ N + 1` are steerable.
    pub level: usize,
    /// Length of a free burst in the hold loop, as a fraction of the horizon.
    pub hold_fraction: f64,
    /// Highest saturation level corrected by the hold loop.
    pub hold_level: usize,
}

impl Default for SteeringOptions {
    fn default() -> Self {
        Self {
            k_reg: 1.0,
            dt: 1e-3,
            scheme: Scheme::Etdrk2,
            min_steps_per_segment: 200,
            delta0: 1e-2,
            halvings: 20,
            jump_ratio: 1e-3,
            injection: Injection::Balanced,
            level: 3,
            hold_fraction: 1.0 / 400.0,
            hold_level: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SteeringReport {
    /// `H^k` distance between the re-simulated final state and the target.
    pub achieved_error: f64,
    pub total_time: f64,
    pub segment_count: usize,
    pub delta_used: f64,
    pub cubic_moves: usize,
    /// Steering passes run by the hold loop (0 for a single compilation).
    pub resteers: usize,
    #[serde(skip)]
    pub trajectory: Trajectory,
}

/// Control-space coefficients of a polynomial with `|p|₁ ≤ 1`.
pub fn h0_from_poly(poly: &TrigPoly) -> H0Vector {
    let d = poly.dim();
    let mut c = vec![0.0; 2 * d + 1];
    for m in poly.modes() {
        match m.p.iter().position(|&x| x != 0) {
            None => c[0] += m.amplitude,
            Some(i) => {
                let slot = if m.phase == Phase::Sin { 1 + 2 * i } else { 2 + 2 * i };
                c[slot] += m.amplitude;
            }
        }
    }
    H0Vector::new(d, c).expect("length is 2d + 1")
}

fn payload_for(field: &SpectralField) -> Payload {
    let h0 = H0Vector::project(field);
    let resid = h0.to_field(field.grid()).distance(field, 0);
    if resid <= 1e-13 * field.sobolev_norm(0).max(1.0) {
        Payload::H0(h0)
    } else {
        Payload::Localized { field: field.clone(), mask: Mask::full(field.grid()) }
    }
}

/// Builds a schedule while evolving the state segment by segment.
struct Builder<'a> {
    opts: &'a SteeringOptions,
    u: SpectralField,
    t: f64,
    segments: Vec<Segment>,
    cubic_moves: usize,
}

impl<'a> Builder<'a> {
    fn new(opts: &'a SteeringOptions, u: SpectralField, t: f64) -> Self {
        Self { opts, u, t, segments: Vec::new(), cubic_moves: 0 }
    }

    fn run(&mut self, len: f64, payload: Payload, jump: f64) -> Result<(), DynamicsError> {
        let mut s = ControlSchedule::new();
        s.push(len, payload.clone());
        let s = s.shifted(self.t);
        let base = self.u.sobolev_norm(self.opts.k_reg);
        let threshold = 1e3 * (base + jump).max(1.0);
        let p = EvolutionProblem::new(self.u.clone(), len)
            .starting_at(self.t)
            .control(s)
            .dt(self.opts.dt)
            .k_reg(self.opts.k_reg)
            .scheme(self.opts.scheme)
            .min_steps_per_segment(self.opts.min_steps_per_segment)
            .blowup_threshold(threshold);
        let traj = evolve(&p)?;
        self.u = traj.final_state().clone();
        let t1 = self.t + len;
        self.segments.push(Segment { t0: self.t, t1, payload });
        self.t = t1;
        Ok(())
    }

    /// Forces `eta/window` over `window`.
    fn jump(&mut self, eta: &TrigPoly, window: f64) -> Result<(), DynamicsError> {
        let v = h0_from_poly(eta);
        let size = eta.sobolev_norm(self.opts.k_reg);
        self.run(window, Payload::H0(v.scale(1.0 / window)), size)
    }

    fn free(&mut self, window: f64) -> Result<(), DynamicsError> {
        let d = self.u.grid().d();
        self.run(window, Payload::H0(H0Vector::zeros(d)), 0.0)
    }

    /// Moves the state by approximately `psi` within a window scale `delta`.
    fn realize(&mut self, psi: &TrigPoly, delta: f64) -> Result<(), DynamicsError> {
        if psi.is_zero() {
            return Ok(());
        }
        let (h0, high) = psi.split_l1(1);
        if high.is_zero() {
            return self.jump(&h0, delta);
        }
        let mut plans: Vec<_> = high.modes().iter().map(|m| generate_mode_plan_with(m, self.opts.injection)).collect();
        plans.sort_by_key(|p| p.level);
        let s = delta.powf(-1.0 / 3.0);
        let inner = delta * self.opts.jump_ratio;
        let mut carry = TrigPoly::zero(psi.dim());
        for plan in &plans {
            for phi in plan.cube_ingredients() {
                let shift = phi.scale(s);
                self.realize(&carry.add(&shift), inner)?;
                self.free(delta)?;
                self.cubic_moves += 1;
                carry = shift.scale(-1.0);
            }
        }
        self.realize(&carry.add(&h0), inner)
    }

    fn finish(self) -> (ControlSchedule, SpectralField, usize) {
        let s = ControlSchedule::from_segments(self.segments).expect("segments are contiguous");
        (s, self.u, self.cubic_moves)
    }
}

/// Drops modes while the dropped `H^k` norm stays within `budget`.
///
/// Candidates are tried from the highest saturation level down, smallest first within a
/// level, since deeply nested modes are the most expensive to realize.
pub fn sparsify(poly: &TrigPoly, budget: f64, k_reg: f64) -> (TrigPoly, f64) {
    let weight =
        |m: &crate::saturation::TrigMode| TrigPoly::from_modes(poly.dim(), std::slice::from_ref(m)).sobolev_norm(k_reg);
    let mut modes: Vec<_> = poly.modes().into_iter().map(|m| (weight(&m), m)).collect();
    modes.sort_by(|(wa, a), (wb, b)| b.l1().cmp(&a.l1()).then(wa.total_cmp(wb)));
    let mut dropped2 = 0.0;
    let mut keep = Vec::new();
    for (w, m) in modes {
        if (dropped2 + w * w).sqrt() <= budget {
            dropped2 += w * w;
        } else {
            keep.push(m);
        }
    }
    (TrigPoly::from_modes(poly.dim(), &keep), dropped2.sqrt())
}

/// Forces `eta/delta` over `[0, delta]` from `u0`.
pub fn asymptotic_step(
    u0: &SpectralField,
    eta: &SpectralField,
    delta: f64,
    opts: &SteeringOptions,
) -> Result<(ControlSchedule, SpectralField), SteeringError> {
    let mut s = ControlSchedule::new();
    s.push(delta, payload_for(&eta.scale(1.0 / delta)));
    let p = EvolutionProblem::new(u0.clone(), delta)
        .control(s.clone())
        .dt(opts.dt)
        .k_reg(opts.k_reg)
        .scheme(opts.scheme)
        .min_steps_per_segment(opts.min_steps_per_segment)
        .blowup_threshold(1e3 * (u0.sobolev_norm(opts.k_reg) + eta.sobolev_norm(opts.k_reg)).max(1.0));
    let t = evolve(&p)?;
    Ok((s, t.final_state().clone()))
}

/// Endpoint of the scaled system with shift `δ^{-1/3} φ` and forcing `η/δ` at time `δ`.
pub fn asymptotic_endpoint(
    u0: &SpectralField,
    eta: &SpectralField,
    phi: &SpectralField,
    delta: f64,
    opts: &SteeringOptions,
) -> Result<SpectralField, SteeringError> {
    let shift = phi.scale(delta.powf(-1.0 / 3.0));
    let p = EvolutionProblem::new(u0.clone(), delta)
        .shift(shift.clone())
        .constant_forcing(eta.scale(1.0 / delta))
        .dt(opts.dt)
        .k_reg(opts.k_reg)
        .scheme(opts.scheme)
        .min_steps_per_segment(opts.min_steps_per_segment)
        .blowup_threshold(1e3 * (u0.sobolev_norm(opts.k_reg) + shift.sobolev_norm(opts.k_reg)).max(1.0));
    Ok(evolve(&p)?.final_state().clone())
}

/// Jump by `δ2^{-1/3} φ` over `δ1`, evolve freely for `δ2`, jump back over `δ1`.
pub fn cubic_step(
    u0: &SpectralField,
    phi: &SpectralField,
    delta1: f64,
    delta2: f64,
    opts: &SteeringOptions,
) -> Result<(ControlSchedule, SpectralField), SteeringError> {
    let grid = u0.grid();
    let shift = phi.scale(delta2.powf(-1.0 / 3.0));
    let mut s = ControlSchedule::new();
    s.push(delta1, payload_for(&shift.scale(1.0 / delta1)));
    s.push(delta2, Payload::H0(H0Vector::zeros(grid.d())));
    s.push(delta1, payload_for(&shift.scale(-1.0 / delta1)));
    let size = u0.sobolev_norm(opts.k_reg) + shift.sobolev_norm(opts.k_reg);
    let p = EvolutionProblem::new(u0.clone(), s.duration())
        .control(s.clone())
        .dt(opts.dt)
        .k_reg(opts.k_reg)
        .scheme(opts.scheme)
        .min_steps_per_segment(opts.min_steps_per_segment)
        .blowup_threshold(1e3 * size.max(1.0));
    let t = evolve(&p)?;
    Ok((s, t.final_state().clone()))
}

/// Re-simulates `schedule` from `u0`.
pub fn replay(
    u0: &SpectralField,
    schedule: &ControlSchedule,
    opts: &SteeringOptions,
) -> Result<Trajectory, DynamicsError> {
    if schedule.is_empty() {
        return Ok(Trajectory {
            times: vec![0.0],
            states: vec![u0.clone()],
            terminated_early: false,
            blowup_time: None,
            k_reg: opts.k_reg,
        });
    }
    let p = EvolutionProblem::new(u0.clone(), schedule.duration())
        .starting_at(schedule.start())
        .control(schedule.clone())
        .dt(opts.dt)
        .k_reg(opts.k_reg)
        .scheme(opts.scheme)
        .min_steps_per_segment(opts.min_steps_per_segment)
        .blowup_threshold(f64::MAX);
    evolve(&p)
}

fn report_for(
    u0: &SpectralField,
    u1: &SpectralField,
    schedule: &ControlSchedule,
    delta: f64,
    cubic_moves: usize,
    resteers: usize,
    opts: &SteeringOptions,
) -> Result<SteeringReport, DynamicsError> {
    let trajectory = replay(u0, schedule, opts)?;
    Ok(SteeringReport {
        achieved_error: trajectory.final_state().distance(u1, opts.k_reg),
        total_time: schedule.duration(),
        segment_count: schedule.len(),
        delta_used: delta,
        cubic_moves,
        resteers,
        trajectory,
    })
}

/// One attempt at a fixed window scale, starting at time `t0`.
fn attempt(
    u0: &SpectralField,
    psi: &TrigPoly,
    delta: f64,
    t0: f64,
    opts: &SteeringOptions,
) -> Result<(ControlSchedule, SpectralField, usize), DynamicsError> {
    let mut b = Builder::new(opts, u0.clone(), t0);
    b.realize(psi, delta)?;
    Ok(b.finish())
}

struct Found {
    error: f64,
    schedule: ControlSchedule,
    end: SpectralField,
    delta: f64,
    cubes: usize,
}

/// Realizes `psi` from `u0` with halving windows until the end state is within `eps` of `u1`.
///
/// Returns the best fitting attempt as the error value when none succeeds.
fn search(
    u0: &SpectralField,
    u1: &SpectralField,
    psi: &TrigPoly,
    eps: f64,
    t_max: f64,
    t0: f64,
    opts: &SteeringOptions,
) -> Result<Found, Result<Option<Found>, SteeringError>> {
    let mut delta = opts.delta0;
    let mut best: Option<Found> = None;
    for _ in 0..=opts.halvings {
        match attempt(u0, psi, delta, t0, opts) {
            Ok((schedule, end, cubes)) => {
                let error = end.distance(u1, opts.k_reg);
                let found = Found { error, schedule, end, delta, cubes };
                let fits = found.schedule.duration() <= t_max;
                if error < eps && fits {
                    return Ok(found);
                }
                if fits && best.as_ref().is_none_or(|b| error < b.error) {
                    best = Some(found);
                }
            }
            Err(DynamicsError::InvalidProblem(m)) => {
                return Err(Err(DynamicsError::InvalidProblem(m).into()));
            }
            // Blow-up or an unstable step at this window: try a shorter one.
            Err(_) => {}
        }
        delta /= 2.0;
    }
    Err(Ok(best))
}

fn exhausted(
    u0: &SpectralField,
    u1: &SpectralField,
    best: Option<Found>,
    t0: f64,
    opts: &SteeringOptions,
) -> SteeringError {
    let (sched, delta, cubes) = match best {
        Some(f) => (f.schedule, f.delta, f.cubes),
        None => (ControlSchedule::new(), opts.delta0 * 0.5f64.powi(opts.halvings as i32), 0),
    };
    match report_for(u0, u1, &sched.shifted(-t0), delta, cubes, 0, opts) {
        Ok(report) => SteeringError::BudgetExhausted { report: Box::new(report) },
        Err(e) => e.into(),
    }
}

fn steer_from(
    u0: &SpectralField,
    u1: &SpectralField,
    eps: f64,
    t_max: f64,
    t0: f64,
    opts: &SteeringOptions,
) -> Result<Found, SteeringError> {
    let poly = TrigPoly::from_field(&(u1 - u0), 0.0);
    let (kept, tail) = poly.split_l1(opts.level as i64 + 1);
    let tail_norm = tail.sobolev_norm(opts.k_reg);
    if tail_norm > eps / 2.0 {
        return Err(
            SaturationError::TruncationTooLossy { level: opts.level, discarded: tail_norm, tol: eps / 2.0 }.into()
        );
    }
    let budget = (eps * eps / 4.0 - tail_norm * tail_norm).max(0.0).sqrt();
    let (psi, _) = sparsify(&kept, budget, opts.k_reg);
    match search(u0, u1, &psi, eps, t_max, t0, opts) {
        Ok(found) => Ok(found),
        Err(Ok(best)) => Err(exhausted(u0, u1, best, t0, opts)),
        Err(Err(e)) => Err(e),
    }
}

/// Hold-loop correction: steers back towards `u1` using only modes up to `hold_level`.
///
/// Higher modes in the drift are left to the dissipation, which damps them fastest.
/// Accepts the best attempt when it improves on the current distance.
fn correct(
    u: &SpectralField,
    u1: &SpectralField,
    eps: f64,
    t_max: f64,
    t0: f64,
    opts: &SteeringOptions,
) -> Result<Found, SteeringError> {
    let poly = TrigPoly::from_field(&(u1 - u), 0.0);
    let (kept, _) = poly.split_l1(opts.hold_level as i64 + 1);
    let (psi, _) = sparsify(&kept, eps / 8.0, opts.k_reg);
    let current = u.distance(u1, opts.k_reg);
    match search(u, u1, &psi, eps / 4.0, t_max, t0, opts) {
        Ok(found) => Ok(found),
        Err(Ok(Some(best))) if best.error < current => Ok(best),
        Err(Ok(best)) => Err(exhausted(u, u1, best, t0, opts)),
        Err(Err(e)) => Err(e),
    }
}

/// Steers `u0` to within `eps` of `u1` (in `H^k`) in time at most `t_max`.
pub fn compile_steering(
    u0: &SpectralField,
    u1: &SpectralField,
    eps: f64,
    t_max: f64,
    opts: &SteeringOptions,
) -> Result<(ControlSchedule, SteeringReport), SteeringError> {
    if u0 == u1 {
        let report = report_for(u0, u1, &ControlSchedule::new(), 0.0, 0, 0, opts)?;
        return Ok((ControlSchedule::new(), report));
    }
    let found = steer_from(u0, u1, eps, t_max, 0.0, opts)?;
    let report = report_for(u0, u1, &found.schedule, found.delta, found.cubes, 0, opts)?;
    Ok((found.schedule, report))
}

/// Steers to `u1` and holds the state within `eps` of it until exactly `horizon`.
pub fn steer_at_exact_time(
    u0: &SpectralField,
    u1: &SpectralField,
    eps: f64,
    horizon: f64,
    opts: &SteeringOptions,
) -> Result<(ControlSchedule, SteeringReport), SteeringError> {
    if horizon <= 0.0 {
        return Err(DynamicsError::InvalidProblem(format!("horizon must be positive, got {horizon}")).into());
    }
    let d = u0.grid().d();
    let burst_max = horizon * opts.hold_fraction;
    let end_tol = 1e-12 * horizon;
    let mut segments: Vec<Segment> = Vec::new();
    let mut u = u0.clone();
    let mut t = 0.0;
    let mut resteers = 0;
    let mut delta_used: f64 = 0.0;
    let mut cubes = 0;
    let mut burst = burst_max;

    let mut absorb = |found: Found, u: &mut SpectralField, t: &mut f64, segments: &mut Vec<Segment>| {
        if !found.schedule.is_empty() {
            segments.extend(found.schedule.segments().iter().cloned());
            *t = found.schedule.end();
        }
        *u = found.end;
        resteers += 1;
        delta_used = delta_used.max(found.delta);
        cubes += found.cubes;
    };

    if u.distance(u1, opts.k_reg) > eps / 2.0 {
        let found = match steer_from(&u, u1, eps / 2.0, horizon, 0.0, opts) {
            // Components beyond the saturation level are left to the hold loop and dissipation.
            // The same applies when realizing them would need nested moves that miss.
            Err(SteeringError::Saturation(SaturationError::TruncationTooLossy { .. }))
            | Err(SteeringError::BudgetExhausted { .. }) => correct(&u, u1, eps, horizon, 0.0, opts)?,
            other => other?,
        };
        absorb(found, &mut u, &mut t, &mut segments);
    }
    while horizon - t > end_tol {
        let remaining = horizon - t;
        let len = burst.min(remaining);
        let mut b = Builder::new(opts, u.clone(), t);
        b.free(len)?;
        let drift = b.u.distance(u1, opts.k_reg);
        let last = len >= remaining - end_tol;
        if drift <= eps / 2.0 || (last && drift < eps * 0.9) {
            u = b.u;
            segments.extend(b.segments);
            t += len;
            burst = burst_max;
            continue;
        }
        if len > burst_max / 64.0 {
            burst = len / 2.0;
            continue;
        }
        // The state leaves the ball too fast for free bursts: correct now.
        let found = correct(&u, u1, eps, remaining, t, opts)?;
        if found.schedule.is_empty() {
            return Err(SteeringError::HorizonExceeded { needed: horizon, allowed: horizon });
        }
        absorb(found, &mut u, &mut t, &mut segments);
    }
    if let Some(last) = segments.last_mut() {
        last.t1 = horizon;
    } else {
        segments.push(Segment { t0: 0.0, t1: horizon, payload: Payload::H0(H0Vector::zeros(d)) });
    }
    let sched = ControlSchedule::from_segments(segments).expect("contiguous by construction");
    let report = report_for(u0, u1, &sched, delta_used, cubes, resteers, opts)?;
    Ok((sched, report))
}
