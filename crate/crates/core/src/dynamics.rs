//! Time integration of `u_t = A(u + φ) + Δ((u + φ)³) + η(t)` on the torus.
//!
//! The linear part is integrated exactly by exponential time differencing;
//! the shifted cubic term and the forcing are explicit.

use std::fmt::Write as _;

use thiserror::Error;

use crate::schedule::{ControlSchedule, Payload};
use crate::spectral::{self, linear_symbol, Mask, SpectralField, TorusGrid};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid evolution problem: {0}")]
    InvalidProblem(String),
    #[error("blow-up detected at t = {time}")]
    BlowupDetected { time: f64, trajectory: Box<Trajectory> },
    #[error("step at t = {time} grew the norm by a factor {growth:.3e}; reduce dt")]
    StepSizeTooLarge { time: f64, growth: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Etdrk2,
    Etdrk4,
}

/// Initial data, shift, control and numerical settings for one evolution.
#[derive(Debug, Clone)]
pub struct EvolutionProblem {
    pub u0: SpectralField,
    pub shift: Option<SpectralField>,
    pub control: Option<ControlSchedule>,
    pub t_start: f64,
    pub horizon: f64,
    pub dt: f64,
    pub k_reg: f64,
    pub blowup_threshold: Option<f64>,
    pub scheme: Scheme,
    /// Extra recording instants (absolute times).
    pub samples: Vec<f64>,
    /// Record the state after every step.
    pub record_steps: bool,
    /// Lower bound on the number of steps in each control segment.
    pub min_steps_per_segment: usize,
}

impl EvolutionProblem {
    pub fn new(u0: SpectralField, horizon: f64) -> Self {
        let k_reg = if u0.grid().d() == 1 { 1.0 } else { 2.0 };
        Self {
            u0,
            shift: None,
            control: None,
            t_start: 0.0,
            horizon,
            dt: 1e-3,
            k_reg,
            blowup_threshold: None,
            scheme: Scheme::default(),
            samples: Vec::new(),
            record_steps: false,
            min_steps_per_segment: 1,
        }
    }

    pub fn shift(mut self, phi: SpectralField) -> Self {
        self.shift = Some(phi);
        self
    }

    /// Control schedule; it must cover `[t_start, t_start + horizon]`.
    pub fn control(mut self, schedule: ControlSchedule) -> Self {
        self.control = Some(schedule);
        self
    }

    /// Constant forcing field on the whole horizon.
    pub fn constant_forcing(mut self, eta: SpectralField) -> Self {
        let mut s = ControlSchedule::new();
        let mask = Mask::full(eta.grid());
        s.push(self.horizon, Payload::Localized { field: eta, mask });
        self.control = Some(s.shifted(self.t_start));
        self
    }

    pub fn starting_at(mut self, t: f64) -> Self {
        if let Some(c) = &self.control {
            self.control = Some(c.shifted(t - self.t_start));
        }
        self.t_start = t;
        self
    }

    pub fn dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn k_reg(mut self, k: f64) -> Self {
        self.k_reg = k;
        self
    }

    pub fn blowup_threshold(mut self, b: f64) -> Self {
        self.blowup_threshold = Some(b);
        self
    }

    pub fn scheme(mut self, s: Scheme) -> Self {
        self.scheme = s;
        self
    }

    pub fn samples(mut self, t: Vec<f64>) -> Self {
        self.samples = t;
        self
    }

    pub fn record_steps(mut self, yes: bool) -> Self {
        self.record_steps = yes;
        self
    }

    pub fn min_steps_per_segment(mut self, n: usize) -> Self {
        self.min_steps_per_segment = n;
        self
    }

    pub fn t_end(&self) -> f64 {
        self.t_start + self.horizon
    }

    /// Threshold in force: explicit value or `1e3 · max(‖u0‖_{H^k}, 1)`.
    pub fn effective_threshold(&self) -> f64 {
        self.blowup_threshold.unwrap_or_else(|| 1e3 * self.u0.sobolev_norm(self.k_reg).max(1.0))
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |m: String| Err(DynamicsError::InvalidProblem(m));
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        let n0 = self.u0.sobolev_norm(self.k_reg);
        if !(self.effective_threshold() > n0) {
            return bad(format!("blow-up threshold must exceed the initial norm {n0:.3e}"));
        }
        if let Some(phi) = &self.shift {
            if phi.grid() != self.u0.grid() {
                return bad("shift lives on a different grid".into());
            }
        }
        if let Some(c) = &self.control {
            c.validate().map_err(|e| DynamicsError::InvalidProblem(e.to_string()))?;
            let tol = 1e-9 * self.t_end().abs().max(1.0);
            if c.start() > self.t_start + tol || c.end() < self.t_end() - tol {
                return bad(format!(
                    "control covers [{}, {}] but the horizon is [{}, {}]",
                    c.start(),
                    c.end(),
                    self.t_start,
                    self.t_end()
                ));
            }
        }
        Ok(())
    }
}

/// Recorded states of one evolution.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SpectralField>,
    pub terminated_early: bool,
    pub blowup_time: Option<f64>,
    pub k_reg: f64,
}

impl Trajectory {
    fn push(&mut self, t: f64, u: &SpectralField) {
        if let Some(&last) = self.times.last() {
            if t <= last + 1e-14 * last.abs().max(1.0) {
                *self.states.last_mut().expect("nonempty") = u.clone();
                return;
            }
        }
        self.times.push(t);
        self.states.push(u.clone());
    }

    pub fn final_state(&self) -> &SpectralField {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory is never empty")
    }

    /// State recorded at `t` (within `tol`), if any.
    pub fn state_at(&self, t: f64, tol: f64) -> Option<&SpectralField> {
        self.times.iter().position(|&s| (s - t).abs() <= tol).map(|i| &self.states[i])
    }

    pub fn norms(&self, s: f64) -> Vec<f64> {
        self.states.iter().map(|u| u.sobolev_norm(s)).collect()
    }

    /// Appends `other`, dropping its first sample when it repeats our last.
    pub fn extend(&mut self, other: &Trajectory) {
        for (t, u) in other.times.iter().zip(&other.states) {
            self.push(*t, u);
        }
        self.terminated_early |= other.terminated_early;
        if self.blowup_time.is_none() {
            self.blowup_time = other.blowup_time;
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,H0,H1,Hk,mass,free_energy\n");
        for (t, u) in self.times.iter().zip(&self.states) {
            let _ = writeln!(
                out,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                t,
                u.sobolev_norm(0),
                u.sobolev_norm(1),
                u.sobolev_norm(self.k_reg),
                mass(u),
                free_energy(u)
            );
        }
        out
    }
}

/// Zero Fourier coefficient, the spatial mean.
pub fn mass(u: &SpectralField) -> f64 {
    u.mean()
}

/// `∫ (½|∇u|² + ¼u⁴ − ½u²) dx` over the torus.
pub fn free_energy(u: &SpectralField) -> f64 {
    let g = u.grid();
    let vol = (2.0 * std::f64::consts::PI).powi(g.d() as i32);
    let t = spectral::tables(g);
    let (mut grad, mut l2) = (0.0, 0.0);
    for (c, &k2) in u.coeffs().iter().zip(&t.k2) {
        if !k2.is_nan() {
            grad += k2 * c.norm_sqr();
            l2 += c.norm_sqr();
        }
    }
    let vals = u.padded_physical();
    let quartic = vals.iter().map(|v| v.powi(4)).sum::<f64>() / vals.len() as f64;
    vol * (0.5 * grad + 0.25 * quartic - 0.5 * l2)
}

/// `φ_0 … φ_3` at `z`.
pub(crate) fn phi_functions(z: f64) -> [f64; 4] {
    if z.abs() < 1.0 {
        let mut out = [0.0; 4];
        for (k, o) in out.iter_mut().enumerate() {
            // Σ_j z^j / (j+k)!
            let mut term = 1.0 / factorial(k);
            let mut acc = term;
            for j in 1..25 {
                term *= z / (j + k) as f64;
                acc += term;
            }
            *o = acc;
        }
        out
    } else {
        let p0 = z.exp();
        let p1 = (p0 - 1.0) / z;
        let p2 = (p1 - 1.0) / z;
        let p3 = (p2 - 0.5) / z;
        [p0, p1, p2, p3]
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Per-mode ETD weights for one step size.
struct EtdCoefficients {
    h: f64,
    e: Vec<f64>,
    // ETDRK2: h φ1, h φ2. ETDRK4: half-step exponential and h/2 φ1(h/2), f1, f2, f3.
    w1: Vec<f64>,
    w2: Vec<f64>,
    e_half: Vec<f64>,
    q_half: Vec<f64>,
    w3: Vec<f64>,
}

impl EtdCoefficients {
    fn new(grid: TorusGrid, h: f64, scheme: Scheme) -> Self {
        let t = spectral::tables(grid);
        let n = t.k2.len();
        let mut c = Self {
            h,
            e: vec![0.0; n],
            w1: vec![0.0; n],
            w2: vec![0.0; n],
            e_half: Vec::new(),
            q_half: Vec::new(),
            w3: Vec::new(),
        };
        if scheme == Scheme::Etdrk4 {
            c.e_half = vec![0.0; n];
            c.q_half = vec![0.0; n];
            c.w3 = vec![0.0; n];
        }
        for (i, &k2) in t.k2.iter().enumerate() {
            if k2.is_nan() {
                continue;
            }
            let l = linear_symbol(k2);
            let [p0, p1, p2, p3] = phi_functions(h * l);
            c.e[i] = p0;
            match scheme {
                Scheme::Etdrk2 => {
                    c.w1[i] = h * p1;
                    c.w2[i] = h * p2;
                }
                Scheme::Etdrk4 => {
                    let [hp0, hp1, _, _] = phi_functions(0.5 * h * l);
                    c.e_half[i] = hp0;
                    c.q_half[i] = 0.5 * h * hp1;
                    c.w1[i] = h * (p1 - 3.0 * p2 + 4.0 * p3);
                    c.w2[i] = h * (p2 - 2.0 * p3);
                    c.w3[i] = h * (-p2 + 4.0 * p3);
                }
            }
        }
        c
    }
}

/// Right-hand side apart from the linear part acting on `u`.
struct Rhs<'a> {
    shift: Option<&'a SpectralField>,
    shift_linear: Option<SpectralField>,
    payload: &'a Payload,
    constant_forcing: Option<SpectralField>,
}

impl<'a> Rhs<'a> {
    fn new(grid: TorusGrid, shift: Option<&'a SpectralField>, payload: &'a Payload, t: f64) -> Self {
        let constant_forcing = match payload {
            Payload::Modal(_) => None,
            p => p.forcing_at(grid, t),
        };
        Self { shift, shift_linear: shift.map(|s| s.apply_operator_a()), payload, constant_forcing }
    }

    fn eval(&self, u: &SpectralField, t: f64) -> Result<SpectralField, spectral::SpectralError> {
        let total;
        let arg = match self.shift {
            Some(phi) => {
                total = u + phi;
                &total
            }
            None => u,
        };
        let mut n = arg.laplacian_of_cube()?;
        if let Some(al) = &self.shift_linear {
            n += al;
        }
        match self.payload {
            Payload::Modal(m) => n += &m.field_at(t),
            _ => {
                if let Some(f) = &self.constant_forcing {
                    n += f;
                }
            }
        }
        Ok(n)
    }
}

fn combine(coef: &[f64], x: &SpectralField) -> SpectralField {
    let mut out = x.clone();
    for (c, w) in out.coeffs_mut().iter_mut().zip(coef) {
        *c *= *w;
    }
    out
}

fn add_scaled(acc: &mut SpectralField, coef: &[f64], x: &SpectralField) {
    for ((a, b), w) in acc.coeffs_mut().iter_mut().zip(x.coeffs()).zip(coef) {
        *a += *b * *w;
    }
}

fn etd_step(
    u: &SpectralField,
    t: f64,
    c: &EtdCoefficients,
    rhs: &Rhs,
    scheme: Scheme,
) -> Result<(SpectralField, SpectralField), spectral::SpectralError> {
    let nu = rhs.eval(u, t)?;
    let h = c.h;
    match scheme {
        Scheme::Etdrk2 => {
            let mut a = combine(&c.e, u);
            add_scaled(&mut a, &c.w1, &nu);
            let na = rhs.eval(&a, t + h)?;
            let diff = &na - &nu;
            add_scaled(&mut a, &c.w2, &diff);
            Ok((a, nu))
        }
        Scheme::Etdrk4 => {
            let eu = combine(&c.e_half, u);
            let mut a = eu.clone();
            add_scaled(&mut a, &c.q_half, &nu);
            let na = rhs.eval(&a, t + 0.5 * h)?;
            let mut b = eu;
            add_scaled(&mut b, &c.q_half, &na);
            let nb = rhs.eval(&b, t + 0.5 * h)?;
            let mut cc = combine(&c.e_half, &a);
            let tmp = nb.scale(2.0) - nu.clone();
            add_scaled(&mut cc, &c.q_half, &tmp);
            let nc = rhs.eval(&cc, t + h)?;
            let mut out = combine(&c.e, u);
            add_scaled(&mut out, &c.w1, &nu);
            let ab = &na + &nb;
            add_scaled(&mut out, &c.w2, &ab.scale(2.0));
            add_scaled(&mut out, &c.w3, &nc);
            Ok((out, nu))
        }
    }
}

/// Integrates the problem, recording the initial state, requested samples,
/// segment boundaries and the final state.
pub fn evolve(problem: &EvolutionProblem) -> Result<Trajectory, DynamicsError> {
    problem.validate()?;
    let grid = problem.u0.grid();
    let threshold = problem.effective_threshold();
    let t_end = problem.t_end();
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        terminated_early: false,
        blowup_time: None,
        k_reg: problem.k_reg,
    };
    traj.push(problem.t_start, &problem.u0);

    let zero = Payload::Zero;
    let mut pieces: Vec<(f64, f64, &Payload)> = Vec::new();
    match &problem.control {
        None => pieces.push((problem.t_start, t_end, &zero)),
        Some(c) => {
            for s in c.segments() {
                let a = s.t0.max(problem.t_start);
                let b = s.t1.min(t_end);
                if b > a + 1e-15 * t_end.abs().max(1.0) {
                    pieces.push((a, b, &s.payload));
                }
            }
            if let Some(last) = pieces.last_mut() {
                last.1 = t_end;
            }
            if let Some(first) = pieces.first_mut() {
                first.0 = problem.t_start;
            }
        }
    }

    let mut samples: Vec<f64> = problem.samples.iter().copied().filter(|&s| s > problem.t_start && s < t_end).collect();
    samples.sort_by(f64::total_cmp);
    let mut next_sample = 0;

    let mut u = problem.u0.clone();
    let mut norm = u.sobolev_norm(problem.k_reg);
    for (a, b, payload) in pieces {
        let len = b - a;
        let rhs = Rhs::new(grid, problem.shift.as_ref(), payload, a);
        let mut h = problem.dt;
        if problem.min_steps_per_segment > 0 {
            h = h.min(len / problem.min_steps_per_segment as f64);
        }
        let magnitude = match payload {
            Payload::Zero => 0.0,
            Payload::Modal(m) => m.field_at(a).max_abs().max(m.field_at(b).max_abs()),
            p => p.forcing_at(grid, a).map_or(0.0, |f| f.max_abs()),
        };
        if magnitude > 10.0 / len {
            h = h.min(len / 200.0);
        }
        let steps = ((len / h) - 1e-9).ceil().max(1.0) as usize;
        let h = len / steps as f64;
        let coeffs = EtdCoefficients::new(grid, h, problem.scheme);
        for i in 0..steps {
            let t = a + i as f64 * h;
            let t_next = if i + 1 == steps { b } else { a + (i + 1) as f64 * h };
            while next_sample < samples.len() && samples[next_sample] < t_next - 1e-13 {
                let s = samples[next_sample];
                next_sample += 1;
                if s <= t + 1e-13 {
                    traj.push(t, &u);
                    continue;
                }
                let partial = EtdCoefficients::new(grid, s - t, problem.scheme);
                if let Ok((us, _)) = etd_step(&u, t, &partial, &rhs, problem.scheme) {
                    traj.push(s, &us);
                }
            }
            let stepped = etd_step(&u, t, &coeffs, &rhs, problem.scheme);
            let (un, nu) = match stepped {
                Ok(x) => x,
                Err(_) => {
                    traj.terminated_early = true;
                    traj.blowup_time = Some(t);
                    return Err(DynamicsError::BlowupDetected { time: t, trajectory: Box::new(traj) });
                }
            };
            let new_norm = un.sobolev_norm(problem.k_reg);
            if !un.is_finite() || !new_norm.is_finite() || new_norm > threshold {
                traj.push(t_next, &un);
                traj.terminated_early = true;
                traj.blowup_time = Some(t_next);
                return Err(DynamicsError::BlowupDetected { time: t_next, trajectory: Box::new(traj) });
            }
            let allowed = 10.0 * (norm + h * nu.sobolev_norm(problem.k_reg));
            if new_norm > allowed && new_norm > 1e-8 {
                return Err(DynamicsError::StepSizeTooLarge {
                    time: t,
                    growth: new_norm / norm.max(f64::MIN_POSITIVE),
                });
            }
            u = un;
            norm = new_norm;
            if problem.record_steps {
                traj.push(t_next, &u);
            }
        }
        traj.push(b, &u);
    }
    Ok(traj)
}

/// `‖ℛ_δ(u0, φ, η) − (ℛ_δ(u0 + φ, 0, η) − φ)‖_{H^k}`.
pub fn flow_shift_check(
    u0: &SpectralField,
    phi: &SpectralField,
    eta: &SpectralField,
    delta: f64,
    dt: f64,
    k_reg: f64,
) -> Result<f64, DynamicsError> {
    let shifted =
        EvolutionProblem::new(u0.clone(), delta).shift(phi.clone()).constant_forcing(eta.clone()).dt(dt).k_reg(k_reg);
    let plain = EvolutionProblem::new(u0 + phi, delta).constant_forcing(eta.clone()).dt(dt).k_reg(k_reg);
    let lhs = evolve(&shifted)?;
    let rhs = evolve(&plain)?;
    let r = rhs.final_state() - phi;
    Ok(lhs.final_state().distance(&r, k_reg))
}
