use kawastefan::harness::{embed_step, field_pairing};
use kawastefan::hydro::{integrate, HydroParams, HydroState, StepControl};
use kawastefan::library::{Profile, TestFunction};
use kawastefan::rng::replica_rng;
use kawastefan::sim::{empirical_pairing, sample_bernoulli_pair, SimParams, Simulator};
use kawastefan::stefan::{segregated_densities, solve_limit, FluxFunction, LimitControl};
use kawastefan::{DensityField, Species, Torus};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn particle_difference_is_conserved(
        side in 4usize..24,
        k in 0.0f64..50.0,
        seed in any::<u64>(),
        p in 0.1f64..0.9,
    ) {
        let torus = Torus::new(1, side).unwrap();
        let u = DensityField::constant(torus, p);
        let mut rng = replica_rng(seed, 0);
        let c0 = sample_bernoulli_pair(&u, &u, &mut rng).unwrap();
        let diff = c0.count(Species::First) as i64 - c0.count(Species::Second) as i64;
        let mut last = (c0.count(Species::First), c0.count(Species::Second));
        let mut sim = Simulator::new(c0, SimParams::new(1.0, 0.5, k).unwrap()).unwrap();
        let times: Vec<f64> = (0..=20).map(|i| 0.005 * i as f64).collect();
        let mut ok = true;
        sim.run(0.1, &times, |_, c| {
            let n = (c.count(Species::First), c.count(Species::Second));
            ok &= n.0 as i64 - n.1 as i64 == diff && n.0 <= last.0 && n.1 <= last.1;
            last = n;
        }, &mut rng, None).unwrap();
        prop_assert!(ok);
    }

    #[test]
    fn micro_and_meso_pairings_agree_on_configurations(
        side in 2usize..40,
        seed in any::<u64>(),
        phi in 0usize..TestFunction::BUILTIN.len(),
    ) {
        let torus = Torus::new(1, side).unwrap();
        let [u1, u2] = Profile::from_name("sine", side).unwrap().sample(torus);
        let c = sample_bernoulli_pair(&u1, &u2, &mut replica_rng(seed, 1)).unwrap();
        let phi = TestFunction::BUILTIN[phi];
        for s in Species::BOTH {
            let micro = empirical_pairing(&c, |r| phi.eval(r), s);
            let meso = field_pairing(&c.as_field(s), &phi);
            prop_assert!((micro - meso).abs() <= 1e-15);
        }
    }

    #[test]
    fn limit_solutions_contract_and_segregate(
        a in prop::collection::vec(-1.0f64..1.0, 16),
        b in prop::collection::vec(-1.0f64..1.0, 16),
        d2 in 0.2f64..3.0,
    ) {
        let grid = Torus::new(1, 16).unwrap();
        let wa = DensityField::new(grid, a).unwrap();
        let wb = DensityField::new(grid, b).unwrap();
        let flux = FluxFunction::new(1.0, d2).unwrap();
        let control = LimitControl::default();
        let l1 = |x: &DensityField, y: &DensityField| -> f64 {
            x.values().iter().zip(y.values()).map(|(p, q)| (p - q).abs()).sum()
        };
        let ta = solve_limit(&wa, 0.02, &flux, &control, &[0.01, 0.02]).unwrap();
        let tb = solve_limit(&wb, 0.02, &flux, &control, &[0.01, 0.02]).unwrap();
        let d0 = l1(&wa, &wb);
        for (x, y) in ta.states.iter().zip(&tb.states) {
            prop_assert!(l1(x, y) <= d0 * (1.0 + 1e-12) + 1e-12);
        }
        let [u1, u2] = segregated_densities(&ta.states[1]);
        prop_assert!(u1.values().iter().zip(u2.values()).all(|(p, q)| p * q == 0.0));
    }
}

#[test]
fn step_embedding_preserves_means_along_hydro_runs() {
    let torus = Torus::new(1, 48).unwrap();
    let [u1, u2] = Profile::from_name("signed-sine", 48).unwrap().sample(torus);
    let s0 = HydroState::new(u1, u2).unwrap();
    let params = HydroParams::new(1.0, 0.5, 20.0).unwrap();
    let traj = integrate(&s0, 0.02, &params, &StepControl::default(), &[0.0, 0.01, 0.02]).unwrap();
    let signed0 = s0.u[0].mean() - s0.u[1].mean();
    for s in &traj.states {
        for u in &s.u {
            assert!((embed_step(u).integral() - u.mean()).abs() < 1e-14);
        }
        let signed = embed_step(&s.u[0]).integral() - embed_step(&s.u[1]).integral();
        assert!((signed - signed0).abs() < 1e-12);
    }
}
