//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Run with `cargo test -p chctl --test acceptance -- --nocapture` to see the lines.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use chctl::dynamics::{evolve, EvolutionProblem};
use chctl::linear_null::{
    build_galerkin, cost_trend, null_control_with_source, sample_times, spectral_inequality_probe, GalerkinSystem,
    SampledSource, SourceTermWeights,
};
use chctl::nonlinear_null::{global_null_pipeline, picard_null, PicardOptions, PipelineOptions};
use chctl::saturation::{
    generate_mode_plan, modes_up_to, q_decompose, q_decompose_values, realize_plan, Phase, TrigPoly,
};
use chctl::schedule::{ControlSchedule, Payload};
use chctl::spectral::{Mask, SpectralField, TorusGrid};
use chctl::steering::{asymptotic_endpoint, compile_steering, steer_at_exact_time, SteeringOptions};
use chctl::verify::{self, random_field};
use nalgebra::DVector;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn report(id: u32, name: &str, passed: bool, detail: String, elapsed: Duration, limit_secs: u64) -> bool {
    let in_time = elapsed.as_secs_f64() < limit_secs as f64;
    let ok = passed && in_time;
    println!(
        "acceptance {id:>2} {name}: {} ({detail}; {:.2} s of {limit_secs} s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    ok
}

fn line(n: usize) -> TorusGrid {
    TorusGrid::new(1, n).unwrap()
}

fn half_circle(g: TorusGrid) -> Mask {
    Mask::slab(g, 0.0, PI)
}

fn steering_target() -> SpectralField {
    let g = line(32);
    SpectralField::trig(g, &[2], false, 0.3) + SpectralField::trig(g, &[1], true, 0.2)
}

fn sci(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

/// Least-squares slope, intercept and coefficient of determination.
fn fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx, sxy * sxy / (sxx * syy))
}

fn only_control_space(s: &ControlSchedule) -> bool {
    s.segments().iter().all(|seg| matches!(seg.payload, Payload::Zero | Payload::H0(_)))
}

#[test]
fn criterion_01_cube_identity() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (g, cases) in [(line(64), 100), (TorusGrid::new(2, 32).unwrap(), 20)] {
        for _ in 0..cases {
            let [p, q, r] = [0, 1, 2].map(|_| random_field(g, &mut rng, 6, 1.0).to_physical());
            let f = q_decompose_values(&p, &q, &r);
            let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let scale = sup(&p) * sup(&q) * sup(&r);
            for i in 0..p.len() {
                let sum: f64 = f.iter().map(|fi| fi[i].powi(3)).sum();
                worst = worst.max((p[i] * q[i] * r[i] - sum).abs() / scale);
            }
        }
    }
    // The same identity on trigonometric polynomials, coefficient by coefficient.
    let poly = |k: i64, a: f64| TrigPoly::from_field(&SpectralField::trig(line(32), &[k], k % 2 == 0, a), 0.0);
    let (p, q, r) = (poly(1, 0.7), poly(2, -1.3), poly(3, 0.4));
    let symbolic = q_decompose(&p, &q, &r).sum_of_cubes().max_coeff_diff(&p.mul(&q).mul(&r));
    worst = worst.max(symbolic);
    let ok = report(
        1,
        "cube identity",
        worst <= 1e-12,
        format!("max relative residual {worst:.2e} ≤ 1e-12"),
        start.elapsed(),
        5,
    );
    assert!(ok);
}

#[test]
fn criterion_02_mode_generation() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut extra_modes = 0;
    let mut count = 0;
    for d in [1, 2] {
        let g = TorusGrid::new(d, 32).unwrap();
        for mode in modes_up_to(d, 4) {
            let field = realize_plan(&generate_mode_plan(&mode), g).unwrap();
            let expected = match mode.phase {
                Phase::Cos => Complex64::new(mode.amplitude / 2.0, 0.0),
                Phase::Sin => Complex64::new(0.0, -mode.amplitude / 2.0),
            };
            let got = field.coeff(&mode.p);
            worst = worst.max((got - expected).norm() / expected.norm());
            let conj: Vec<i64> = mode.p.iter().map(|x| -x).collect();
            let at_pair = |k: Vec<i64>| k == mode.p || k == conj;
            for (i, c) in field.coeffs().iter().enumerate() {
                let k = g.wavevector(i);
                let significant = c.norm() > 1e-10 * expected.norm();
                if significant && !k.is_some_and(at_pair) {
                    extra_modes += 1;
                }
            }
            count += 1;
        }
    }
    let ok = report(
        2,
        "mode generation",
        worst <= 1e-10 && extra_modes == 0,
        format!("{count} modes, max relative amplitude error {worst:.2e} ≤ 1e-10, {extra_modes} stray coefficients"),
        start.elapsed(),
        30,
    );
    assert!(ok);
}

#[test]
fn criterion_03_asymptotic_property() {
    let start = Instant::now();
    let g = line(32);
    let u0 = SpectralField::trig(g, &[1], true, 0.1);
    let eta = SpectralField::trig(g, &[1], false, 0.5);
    let phi = SpectralField::trig(g, &[1], true, 0.5);
    // Δ((a cos x)³) = -(a³/4)(3 cos x + 9 cos 3x).
    let a3 = 0.5f64.powi(3);
    let limit = &(&u0 + &eta)
        + &(SpectralField::trig(g, &[1], true, -0.75 * a3) + SpectralField::trig(g, &[3], true, -2.25 * a3));
    let opts = SteeringOptions::default();
    let deltas = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4];
    let errors: Vec<f64> =
        deltas.iter().map(|&d| asymptotic_endpoint(&u0, &eta, &phi, d, &opts).unwrap().distance(&limit, 1)).collect();
    let decreasing = errors.windows(2).all(|w| w[1] < w[0]);
    let (lx, ly): (Vec<f64>, Vec<f64>) = deltas.iter().zip(&errors).map(|(d, e)| (d.ln(), e.ln())).unzip();
    let (slope, _, _) = fit(&lx, &ly);
    let ok = report(
        3,
        "asymptotic property",
        decreasing && slope >= 0.15,
        format!("errors [{}], strictly decreasing {decreasing}, slope {slope:.3} ≥ 0.15", sci(&errors)),
        start.elapsed(),
        120,
    );
    assert!(ok);
}

#[test]
fn criterion_04_small_time_steering() {
    let start = Instant::now();
    let opts = SteeringOptions::default();
    let u0 = SpectralField::zeros(line(32));
    let (schedule, report_) = compile_steering(&u0, &steering_target(), 0.05, 0.5, &opts).unwrap();
    let replayed = evolve(
        &EvolutionProblem::new(u0, schedule.duration())
            .control(schedule.clone())
            .dt(opts.dt)
            .min_steps_per_segment(opts.min_steps_per_segment),
    )
    .unwrap();
    let err = replayed.final_state().distance(&steering_target(), 1);
    let ok = report(
        4,
        "small-time steering",
        err < 0.05 && only_control_space(&schedule) && schedule.duration() <= 0.5,
        format!(
            "H1 error {err:.4} < 0.05 (reported {:.4}), {} segments in {:.4} time units, control-space only {}",
            report_.achieved_error,
            schedule.len(),
            schedule.duration(),
            only_control_space(&schedule)
        ),
        start.elapsed(),
        300,
    );
    assert!(ok);
}

#[test]
fn criterion_05_exact_time_steering() {
    let start = Instant::now();
    let opts = SteeringOptions::default();
    let u0 = SpectralField::zeros(line(32));
    let (schedule, _) = steer_at_exact_time(&u0, &steering_target(), 0.05, 1.0, &opts).unwrap();
    let traj = evolve(
        &EvolutionProblem::new(u0, 1.0)
            .control(schedule.clone())
            .dt(opts.dt)
            .min_steps_per_segment(opts.min_steps_per_segment),
    )
    .unwrap();
    let err = traj.final_state().distance(&steering_target(), 1);
    let end_gap = (traj.final_time() - 1.0).abs();
    let ok = report(
        5,
        "exact-time steering",
        err < 0.05 && end_gap <= opts.dt && only_control_space(&schedule),
        format!("H1 error {err:.4} < 0.05 at t = {:.6}, {} segments", traj.final_time(), schedule.len()),
        start.elapsed(),
        300,
    );
    assert!(ok);
}

#[test]
fn criterion_06_dynamics_invariants() {
    let start = Instant::now();
    let suite = verify::energy(2024, 10).unwrap();
    let detail = suite
        .checks
        .iter()
        .map(|c| format!("{} {:.3e} vs {:.0e}", c.name, c.value, c.tolerance))
        .collect::<Vec<_>>()
        .join(", ");
    let ok = report(6, "dynamics invariants", suite.passed(), format!("10 seeds: {detail}"), start.elapsed(), 120);
    assert!(ok);
}

fn linear_system() -> GalerkinSystem {
    let g = line(32);
    build_galerkin(g, &half_circle(g), 16.0).unwrap()
}

#[test]
fn criterion_07_linear_null_control() {
    let start = Instant::now();
    let sys = linear_system();
    let g = sys.grid();
    let u0 = SpectralField::trig(g, &[1], false, 1.0) + SpectralField::trig(g, &[2], true, 0.5);
    let a0 = sys.project(&u0);
    let w = SourceTermWeights::with_horizon(1.0).unwrap();
    let source = SampledSource::zero(sample_times(&w, 8), sys.dim());
    let out = null_control_with_source(&sys, &a0, &source, &w).unwrap();
    let r = &out.report;

    // Weight identity in logarithms: |log ρ₀ − log(e^{M/Δ} ρ_S)| bounds the relative error.
    let t = w.grid();
    let weight_err = (0..t.len() - 2)
        .map(|k| {
            let lhs = w.log_rho0(t[k + 2]).unwrap();
            let rhs = w.m / (t[k + 2] - t[k + 1]) + w.log_rho_s(t[k]).unwrap();
            (lhs - rhs).abs().exp_m1()
        })
        .fold(0.0, f64::max);
    let passed = sys.dim() == 9
        && r.terminal_norm <= 1e-8 * r.initial_norm
        && r.continuity_defect <= 1e-9
        && weight_err <= 1e-10;
    let ok = report(
        7,
        "linear null control",
        passed,
        format!(
            "{} modes, terminal {:.2e} ≤ 1e-8 × {:.3}, continuity {:.2e} ≤ 1e-9, weight identity {:.2e} ≤ 1e-10 over {} grid points",
            sys.dim(),
            r.terminal_norm,
            r.initial_norm,
            r.continuity_defect,
            weight_err,
            t.len()
        ),
        start.elapsed(),
        60,
    );
    assert!(ok);
}

#[test]
fn criterion_08_control_cost_trend() {
    let start = Instant::now();
    let sys = linear_system();
    let a0 = sys.project(&SpectralField::trig(sys.grid(), &[1], false, 1.0));
    let horizons = [1.0, 0.5, 0.25];
    // Minimal cost from a quadrature Gramian: sqrt(bᵀ G⁻¹ b) with b = e^{Dτ} a.
    let costs: Vec<f64> = horizons
        .iter()
        .map(|&tau| {
            let b: DVector<f64> = sys.propagate(&a0, tau);
            let x = sys.gramian_gauss_legendre(tau, 400).lu().solve(&b).unwrap();
            b.dot(&x).sqrt()
        })
        .collect();
    let library = cost_trend(&sys, &a0, &horizons).unwrap();
    let agree = costs.iter().zip(&library.costs).all(|(a, b)| (a - b).abs() <= 1e-6 * a);
    let increasing = costs.windows(2).all(|c| c[1] > c[0]);
    let x: Vec<f64> = horizons.iter().map(|t| 1.0 / t).collect();
    let y: Vec<f64> = costs.iter().map(|c| c.ln()).collect();
    let (slope, _, r2) = fit(&x, &y);
    let ok = report(
        8,
        "control-cost trend",
        increasing && slope > 0.0 && r2 >= 0.9 && agree,
        format!(
            "costs {costs:.4?} at T = {horizons:?}, slope {slope:.4} > 0, R² {r2:.4} ≥ 0.9, library agrees {agree}"
        ),
        start.elapsed(),
        60,
    );
    assert!(ok);
}

#[test]
fn criterion_09_nonlinear_local_null_control() {
    let start = Instant::now();
    let sys = linear_system();
    let w = SourceTermWeights::with_horizon(1.0).unwrap();
    let u0 = SpectralField::trig(sys.grid(), &[1], false, 0.01);
    let opts = PicardOptions { resimulate: false, ..PicardOptions::default() };
    let (state, _) = picard_null(&sys, &u0, &w, &opts).unwrap();
    let traj = evolve(
        &EvolutionProblem::new(u0, 1.0)
            .control(state.schedule(&sys, 0.0))
            .dt(1e-4)
            .min_steps_per_segment(opts.min_steps_per_segment),
    )
    .unwrap();
    let terminal = traj.final_state().sobolev_norm(0);
    let contracting = state.ratios.iter().all(|&r| r < 1.0);
    let ok = report(
        9,
        "nonlinear local null control",
        contracting && state.iterations <= 20 && terminal <= 1e-6,
        format!(
            "{} iterations ≤ 20, ratios [{}] < 1, terminal L2 {terminal:.2e} ≤ 1e-6",
            state.iterations,
            sci(&state.ratios)
        ),
        start.elapsed(),
        600,
    );
    assert!(ok);
}

#[test]
fn criterion_10_global_pipeline() {
    let start = Instant::now();
    let g = line(32);
    let mask = half_circle(g);
    let u0 = SpectralField::trig(g, &[1], false, 1.0);
    let (eps_t, delta_t, horizon) = (0.05, 0.5, 1.0);
    let opts = PipelineOptions::default();
    let (plan, _) = global_null_pipeline(&u0, eps_t, delta_t, horizon, &mask, &opts).unwrap();

    let tol = 1e-12;
    let mut stray: f64 = 0.0;
    let structure = plan.schedule.segments().iter().all(|s| {
        if s.t1 <= eps_t + tol {
            matches!(s.payload, Payload::Zero)
        } else if s.t0 >= eps_t - tol && s.t1 <= delta_t + tol {
            matches!(s.payload, Payload::Zero | Payload::H0(_))
        } else if s.t0 >= delta_t - tol {
            let Payload::Modal(m) = &s.payload else { return false };
            // Off ω the nodal forcing is only the alternating pattern of the dropped Nyquist row.
            for t in [s.t0, 0.5 * (s.t0 + s.t1)] {
                let f = m.field_at(t).to_physical();
                let scale = f.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
                let sign = |j: usize| if j.is_multiple_of(2) { 1.0 } else { -1.0 };
                let outside: Vec<usize> = (0..f.len()).filter(|&j| !mask.nodes()[j]).collect();
                let c = outside.iter().map(|&j| f[j] * sign(j)).sum::<f64>() / outside.len() as f64;
                for &j in &outside {
                    stray = stray.max((f[j] - c * sign(j)).abs() / scale);
                }
            }
            m.mask() == &mask
        } else {
            false
        }
    });
    let structure = structure && stray <= 1e-12 && (plan.schedule.end() - horizon).abs() <= tol;
    let traj = evolve(
        &EvolutionProblem::new(u0, horizon)
            .control(plan.schedule.clone())
            .dt(opts.picard.dt)
            .min_steps_per_segment(opts.picard.min_steps_per_segment),
    )
    .unwrap();
    let terminal = traj.final_state().sobolev_norm(0);
    let ok = report(
        10,
        "global pipeline",
        structure && plan.structure_ok && terminal <= 1e-4,
        format!(
            "stage structure {structure} (off-ω residual beyond the Nyquist pattern {stray:.1e}), radius {:.3}, L2 after steering {:.2e}, terminal L2 {terminal:.2e} ≤ 1e-4",
            plan.radius, plan.norm_after_steering
        ),
        start.elapsed(),
        900,
    );
    assert!(ok);
}

#[test]
fn criterion_11_spectral_inequality_probe() {
    let start = Instant::now();
    let mut constant_err: f64 = 0.0;
    let mut monotone = true;
    let mut tables = Vec::new();
    for (g, lambdas) in
        [(line(32), vec![0.0, 1.0, 4.0, 9.0, 16.0]), (TorusGrid::new(2, 16).unwrap(), vec![0.0, 1.0, 2.0, 4.0, 5.0])]
    {
        let mask = half_circle(g);
        let probe = spectral_inequality_probe(g, &mask, &lambdas, 400, 11).unwrap();
        let expected = (2.0 * PI).powi(g.d() as i32) / (mask.count() as f64 * g.cell_volume());
        constant_err = constant_err.max((probe.table[0].ratio - expected).abs() / expected);
        monotone &= probe.table.windows(2).all(|w| w[1].ratio >= w[0].ratio);
        tables.push(probe.table.iter().map(|r| r.ratio).collect::<Vec<_>>());
    }
    let ok = report(
        11,
        "spectral-inequality probe",
        constant_err <= 1e-12 && monotone,
        format!("constant-case error {constant_err:.1e} ≤ 1e-12, non-decreasing {monotone}, ratios {tables:.3?}"),
        start.elapsed(),
        120,
    );
    assert!(ok);
}
