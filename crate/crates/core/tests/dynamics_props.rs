use chctl::dynamics::{evolve, free_energy, mass, DynamicsError, EvolutionProblem};
use chctl::schedule::{ControlSchedule, H0Vector, Payload};
use chctl::spectral::{SpectralField, TorusGrid};
use chctl::verify::random_field;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grid() -> TorusGrid {
    TorusGrid::new(1, 32).unwrap()
}

fn initial(seed: u64, amp: f64) -> SpectralField {
    random_field(grid(), &mut ChaCha8Rng::seed_from_u64(seed), 5, amp)
}

/// Piecewise-constant control-space forcing with zero mean on every segment.
fn zero_mean_schedule(coeffs: &[(f64, f64)], len: f64) -> ControlSchedule {
    let mut s = ControlSchedule::new();
    for &(a, b) in coeffs {
        s.push(len, Payload::H0(H0Vector::new(1, vec![0.0, a, b]).unwrap()));
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn mass_is_conserved_under_zero_mean_control(
        seed in any::<u64>(),
        mean in -0.5..0.5f64,
        coeffs in prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64), 1..4),
    ) {
        let u0 = &initial(seed, 0.5) + &SpectralField::constant(grid(), mean);
        let sched = zero_mean_schedule(&coeffs, 0.05);
        let horizon = sched.duration();
        let traj = evolve(&EvolutionProblem::new(u0.clone(), horizon).control(sched).record_steps(true)).unwrap();
        for u in &traj.states {
            prop_assert!((mass(u) - mass(&u0)).abs() <= 1e-12);
        }
    }

    #[test]
    fn free_energy_never_increases(seed in any::<u64>(), amp in 0.05..1.0f64) {
        let u0 = initial(seed, amp);
        let traj = evolve(&EvolutionProblem::new(u0, 0.2).record_steps(true)).unwrap();
        let e: Vec<f64> = traj.states.iter().map(free_energy).collect();
        for w in e.windows(2) {
            prop_assert!(w[1] - w[0] <= 1e-10, "rise {}", w[1] - w[0]);
        }
    }

    #[test]
    fn concatenation_matches_a_single_run(
        seed in any::<u64>(),
        coeffs in prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 2..5),
        split in 1usize..4,
    ) {
        let u0 = initial(seed, 0.4);
        let len = 0.04;
        let sched = zero_mean_schedule(&coeffs, len);
        let horizon = sched.duration();
        let split = split.min(coeffs.len() - 1);
        let t1 = split as f64 * len;
        let once = evolve(&EvolutionProblem::new(u0.clone(), horizon).control(sched.clone())).unwrap();
        let first = evolve(&EvolutionProblem::new(u0, t1).control(zero_mean_schedule(&coeffs[..split], len))).unwrap();
        let rest = zero_mean_schedule(&coeffs[split..], len).shifted(t1);
        let second = evolve(
            &EvolutionProblem::new(first.final_state().clone(), horizon - t1).starting_at(t1).control(rest),
        )
        .unwrap();
        prop_assert!(second.final_state().distance(once.final_state(), 1) <= 1e-12);
    }

    #[test]
    fn blowup_stops_before_non_finite_values(amp in 40.0..200.0f64) {
        let u0 = SpectralField::trig(grid(), &[1], false, amp);
        match evolve(&EvolutionProblem::new(u0, 1.0).dt(1e-4)) {
            Err(DynamicsError::BlowupDetected { trajectory, .. }) => {
                prop_assert!(trajectory.terminated_early);
                prop_assert!(trajectory.states.iter().all(|u| u.is_finite()));
            }
            Err(DynamicsError::StepSizeTooLarge { .. }) => {}
            other => prop_assert!(false, "expected the blow-up monitor to fire, got {:?}", other.map(|t| t.final_time())),
        }
    }
}

#[test]
fn self_convergence_of_the_default_scheme() {
    let u0 = SpectralField::trig(grid(), &[1], false, 0.1);
    let run = |dt: f64| evolve(&EvolutionProblem::new(u0.clone(), 0.5).dt(dt)).unwrap().final_state().clone();
    let (a, b, c) = (run(1e-3), run(5e-4), run(2.5e-4));
    assert!(a.distance(&b, 1) <= 1e-6, "{}", a.distance(&b, 1));
    let order = (a.distance(&b, 1) / b.distance(&c, 1)).log2();
    assert!(order >= 1.995, "observed order {order}");
}
