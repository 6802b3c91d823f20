use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use chctl::dynamics::{evolve, free_energy, mass, DynamicsError, EvolutionProblem, Trajectory};
use chctl::io::{encode_field, spectrum_csv};
use chctl::linear_null::{
    build_galerkin, cost_trend, null_control_with_source, observability_probe, sample_times, SampledSource,
    SourceTermWeights,
};
use chctl::nonlinear_null::{global_null_pipeline, PicardOptions, PipelineOptions};
use chctl::saturation::{generate_mode_plan_with, realize_plan};
use chctl::schedule::ControlSchedule;
use chctl::spectral::SpectralField;
use chctl::steering::{compile_steering, steer_at_exact_time, SteeringError, SteeringOptions, SteeringReport};
use chctl::verify::{self, SuiteReport};
use serde_json::json;

use crate::config::{ConfigError, ExperimentConfig};
use crate::manifest::Artifacts;

/// Outcome of a command that ran to completion.
pub struct Finished {
    pub passed: bool,
    pub message: String,
    pub summary: serde_json::Value,
}

impl Finished {
    fn new(passed: bool, message: impl Into<String>, summary: serde_json::Value) -> Self {
        Self { passed, message: message.into(), summary }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Identity,
    Asymptotic,
    Energy,
    Grid,
}

fn field_summary(u: &SpectralField) -> serde_json::Value {
    json!({
        "l2": u.sobolev_norm(0),
        "h1": u.sobolev_norm(1),
        "h2": u.sobolev_norm(2),
        "mass": mass(u),
        "free_energy": free_energy(u),
    })
}

fn write_final_state(art: &mut Artifacts, u: &SpectralField) -> anyhow::Result<()> {
    art.write("final_state.chsf", encode_field(u), "final state, binary field dump")?;
    art.write("final_spectrum.csv", spectrum_csv(u), "Fourier coefficients of the final state")
}

fn write_schedule(art: &mut Artifacts, schedule: &ControlSchedule) -> anyhow::Result<()> {
    schedule.write_jsonl(&art.path("schedule.jsonl"))?;
    art.register("schedule.jsonl", "control schedule, one segment per line")?;
    art.register_matching("schedule_seg", "binary field of a localized schedule segment")
}

fn write_trajectory(art: &mut Artifacts, traj: &Trajectory) -> anyhow::Result<()> {
    art.write("trajectory.csv", traj.to_csv(), "norms, mass and free energy along the trajectory")
}

pub fn simulate(cfg: &ExperimentConfig, base: &Path, art: &mut Artifacts) -> anyhow::Result<Finished> {
    let grid = cfg.torus()?;
    let s = &cfg.simulate;
    let u0 = cfg.initial.to_field(grid, base)?;
    let mut problem = EvolutionProblem::new(u0.clone(), s.horizon).dt(s.dt).scheme(s.scheme);
    if let Some(k) = s.k_reg {
        problem = problem.k_reg(k);
    }
    let shift = s.shift.to_field(grid, base)?;
    if shift.sobolev_norm(0) > 0.0 {
        problem = problem.shift(shift);
    }
    let forcing = s.forcing.to_field(grid, base)?;
    if forcing.sobolev_norm(0) > 0.0 {
        problem = problem.constant_forcing(forcing);
    }
    problem = match s.sample_every {
        Some(every) => {
            let count = (s.horizon / every).floor() as usize;
            problem.samples((1..=count).map(|i| i as f64 * every).filter(|&t| t < s.horizon).collect())
        }
        None => problem.record_steps(true),
    };
    let traj = match evolve(&problem) {
        Ok(t) => t,
        Err(DynamicsError::BlowupDetected { time, trajectory }) => {
            write_trajectory(art, &trajectory)?;
            return Err(DynamicsError::BlowupDetected { time, trajectory }.into());
        }
        Err(e) => return Err(e.into()),
    };
    write_trajectory(art, &traj)?;
    write_final_state(art, traj.final_state())?;
    let summary = json!({
        "final_time": traj.final_time(),
        "initial": field_summary(&u0),
        "final": field_summary(traj.final_state()),
        "recorded_states": traj.times.len(),
    });
    Ok(Finished::new(true, format!("simulated to t = {}", traj.final_time()), summary))
}

fn steering_summary(report: &SteeringReport, eps: f64) -> serde_json::Value {
    json!({ "eps": eps, "report": report })
}

pub fn steer(cfg: &ExperimentConfig, base: &Path, art: &mut Artifacts) -> anyhow::Result<Finished> {
    let grid = cfg.torus()?;
    let st = &cfg.steer;
    let u0 = cfg.initial.to_field(grid, base)?;
    let u1 = cfg.target.to_field(grid, base)?;
    let opts = SteeringOptions {
        k_reg: st.k_reg,
        dt: st.dt,
        delta0: st.delta0,
        halvings: st.halvings,
        level: st.level,
        ..SteeringOptions::default()
    };
    let result = match st.exact_time {
        Some(t) => steer_at_exact_time(&u0, &u1, st.eps, t, &opts),
        None => compile_steering(&u0, &u1, st.eps, st.t_max, &opts),
    };
    let (schedule, report) = match result {
        Ok(r) => r,
        Err(SteeringError::BudgetExhausted { report }) => {
            write_trajectory(art, &report.trajectory)?;
            write_final_state(art, report.trajectory.final_state())?;
            let msg = format!("steering missed the target: error {:.3e} ≥ eps {:.3e}", report.achieved_error, st.eps);
            return Ok(Finished::new(false, msg, steering_summary(&report, st.eps)));
        }
        Err(e) => return Err(e.into()),
    };
    write_schedule(art, &schedule)?;
    write_trajectory(art, &report.trajectory)?;
    write_final_state(art, report.trajectory.final_state())?;
    let passed = report.achieved_error < st.eps;
    let msg = format!("achieved H^{} error {:.3e} (eps {:.3e})", st.k_reg, report.achieved_error, st.eps);
    Ok(Finished::new(passed, msg, steering_summary(&report, st.eps)))
}

pub fn null_linear(cfg: &ExperimentConfig, base: &Path, art: &mut Artifacts) -> anyhow::Result<Finished> {
    let grid = cfg.torus()?;
    let l = &cfg.null_linear;
    let mask = l.mask.to_mask(grid)?;
    let sys = build_galerkin(grid, &mask, l.lambda_max)?;
    let u0 = cfg.initial.to_field(grid, base)?;
    let a0 = sys.project(&u0);
    let w = SourceTermWeights::new(l.m, l.p, l.q, l.horizon)?;
    let source = SampledSource::zero(sample_times(&w, l.samples_per_interval), sys.dim());
    let out = null_control_with_source(&sys, &a0, &source, &w)?;

    art.write(
        "control.csv",
        out.control.export_csv(&sys, l.samples_per_interval).join("\n") + "\n",
        "control field at the nodes of ω",
    )?;
    let mut states = String::from("t,l2,log_rho0\n");
    for (t, a) in out.times.iter().zip(&out.states) {
        let log_rho0 = w.log_rho0(*t).map_or(f64::NEG_INFINITY, |v| v);
        let _ = writeln!(states, "{t:.17e},{:.17e},{log_rho0:.17e}", a.norm());
    }
    art.write("states.csv", states, "truncated state norm and weight at the sample times")?;

    let trend = if l.cost_horizons.is_empty() || a0.norm() == 0.0 {
        None
    } else {
        Some(cost_trend(&sys, &a0, &l.cost_horizons)?)
    };
    let summary = json!({
        "modes": sys.dim(),
        "report": out.report,
        "cost_trend": trend,
        "observability": observability_probe(&sys, l.horizon),
    });
    art.write_json("report.json", &summary, "null-control report, cost trend and observability spectrum")?;
    let r = &out.report;
    let passed = r.terminal_norm <= 1e-8 * r.initial_norm && r.continuity_defect <= 1e-9;
    let msg = format!(
        "terminal {:.3e} (initial {:.3e}), continuity {:.3e}",
        r.terminal_norm, r.initial_norm, r.continuity_defect
    );
    Ok(Finished::new(passed, msg, summary))
}

pub fn null_global(cfg: &ExperimentConfig, base: &Path, art: &mut Artifacts) -> anyhow::Result<Finished> {
    let grid = cfg.torus()?;
    let g = &cfg.null_global;
    let mask = g.mask.to_mask(grid)?;
    let u0 = cfg.initial.to_field(grid, base)?;
    let opts = PipelineOptions {
        lambda_max: g.lambda_max,
        safety: g.safety,
        picard: PicardOptions::default(),
        ..PipelineOptions::default()
    };
    let (plan, traj) = global_null_pipeline(&u0, g.eps_t, g.delta_t, g.horizon, &mask, &opts)?;
    write_schedule(art, &plan.schedule)?;
    write_trajectory(art, &traj)?;
    write_final_state(art, traj.final_state())?;
    art.write_json("plan.json", &plan, "stage marks, radius, contraction ratios and terminal norms")?;
    let passed = plan.terminal_norm <= g.terminal_tol && plan.structure_ok;
    let msg = format!(
        "terminal L2 norm {:.3e} (tolerance {:.1e}), stage structure {}",
        plan.terminal_norm,
        g.terminal_tol,
        if plan.structure_ok { "ok" } else { "violated" }
    );
    Ok(Finished::new(passed, msg, serde_json::to_value(&plan)?))
}

pub fn saturation_plan(cfg: &ExperimentConfig, art: &mut Artifacts) -> anyhow::Result<Finished> {
    let grid = cfg.torus()?;
    let sat = &cfg.saturation;
    let modes = if sat.modes.is_empty() { &cfg.target.modes } else { &sat.modes };
    if modes.is_empty() {
        return Err(ConfigError::Invalid {
            field: "saturation.modes",
            message: "list at least one mode here or in `target.modes`".into(),
        }
        .into());
    }
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for (i, mode) in modes.iter().enumerate() {
        let plan = generate_mode_plan_with(mode, sat.injection);
        let name = format!("plan_{i:03}.jsonl");
        art.write(&name, plan.to_jsonl(), "generation plan, one step per line")?;
        let realized = realize_plan(&plan, grid).with_context(|| format!("realizing mode {:?}", mode.p))?;
        let expected = mode.to_field(grid);
        let scale = expected.sobolev_norm(0).max(f64::MIN_POSITIVE);
        let err = realized.distance(&expected, 0) / scale;
        worst = worst.max(err);
        rows.push(json!({
            "mode": mode,
            "plan": name,
            "level": plan.level,
            "steps": plan.steps.len(),
            "relative_error": err,
        }));
    }
    let summary = json!({ "plans": rows, "max_relative_error": worst, "tol": sat.tol });
    art.write_json("plans.json", &summary, "plan index with realized-spectrum errors")?;
    Ok(Finished::new(worst <= sat.tol, format!("max relative error {worst:.3e} over {} plans", modes.len()), summary))
}

pub fn verify_suite(cfg: &ExperimentConfig, suite: Suite, art: &mut Artifacts) -> anyhow::Result<Finished> {
    let report: SuiteReport = match suite {
        Suite::Identity => verify::identity(cfg.seed),
        Suite::Asymptotic => verify::asymptotic()?,
        Suite::Energy => verify::energy(cfg.seed, cfg.verify.seeds)?,
        Suite::Grid => verify::grid(cfg.seed)?,
    };
    for c in &report.checks {
        println!(
            "{} {}: {:.6e} (tolerance {:.1e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.tolerance
        );
    }
    art.write_json("report.json", &report, "verification checks and measured series")?;
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    let msg =
        if failed.is_empty() { "all checks passed".to_string() } else { format!("failed: {}", failed.join(", ")) };
    Ok(Finished::new(report.passed(), msg, serde_json::to_value(&report)?))
}
