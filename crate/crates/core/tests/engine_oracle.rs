use memjump_core::oracle::{
    analytic_two_state_p, first_jump_hazards, first_jump_moments, run_chain, sample_mean_and_error,
    two_state_fire_probability, ConstantRateChainSpec,
};
use memjump_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_spec(
    rng: &mut ChaCha8Rng,
    target_stiffness: f64,
    n_steps: usize,
) -> ConstantRateChainSpec {
    let n = rng.random_range(2..=5);
    let mut rates = RateTable::zeros(n).unwrap();
    for i in 1..=n {
        for j in 1..=n {
            if i != j && rng.random_bool(0.7) {
                let r = 10f64.powf(rng.random_range(-1.0..3.0));
                rates
                    .set(
                        StateIndex::new(i, n).unwrap(),
                        StateIndex::new(j, n).unwrap(),
                        r,
                    )
                    .unwrap();
            }
        }
    }
    let eta: Vec<f64> = (0..n)
        .map(|_| 10f64.powf(rng.random_range(-1.0..3.0)))
        .collect();
    let initial_state = StateIndex::new(rng.random_range(1..=n), n).unwrap();
    let mut spec = ConstantRateChainSpec {
        rates,
        eta,
        initial_state,
        dt: 1.0,
        n_steps,
    };
    spec.dt = target_stiffness / spec.stiffness();
    spec
}

fn device_for(spec: &ConstantRateChainSpec) -> ConstantRateDevice {
    let n = spec.rates.n_states();
    let g: Vec<f64> = (1..=n).map(|i| i as f64).collect();
    ConstantRateDevice::new(spec.rates.clone(), spec.eta.clone(), g)
        .unwrap()
        .with_initial_state(spec.initial_state)
        .unwrap()
}

fn zero_drive() -> Waveform {
    Waveform::new(WaveformSpec::constant(0.0)).unwrap()
}

#[test]
fn engine_reproduces_naive_chain_jump_for_jump() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let wf = zero_drive();
    let mut total = 0;
    for case in 0..20 {
        let stiffness = rng.random_range(0.005..0.1);
        let spec = random_spec(&mut rng, stiffness, 3000);
        let device = device_for(&spec);
        let settings =
            SimulationSettings::new(spec.n_steps as f64 * spec.dt, spec.dt).with_substepping(false);
        let seed = derive_seed(99, case);
        let engine = simulate_trajectory(&device, &wf, &settings, seed).unwrap();
        let chain = run_chain(&spec, seed).unwrap();
        let ours: Vec<(usize, usize, usize)> = engine
            .jumps
            .iter()
            .map(|j| (j.step, j.from_state.get(), j.to_state.get()))
            .collect();
        let theirs: Vec<(usize, usize, usize)> =
            chain.jumps.iter().map(|j| (j.step, j.from, j.to)).collect();
        assert_eq!(ours, theirs, "case {case}");
        total += ours.len();
    }
    assert!(total > 100);
}

#[test]
fn substepped_first_jump_mean_matches_exact_hazard() {
    let rates = RateTable::from_entries(2, &[(2, 1, 400.0)]).unwrap();
    let spec = ConstantRateChainSpec {
        rates: rates.clone(),
        eta: vec![3000.0, 3000.0],
        initial_state: StateIndex::new(2, 2).unwrap(),
        dt: 1e-2,
        n_steps: 400,
    };
    let w = assemble_generator(&rates, &spec.eta, spec.initial_state).unwrap();
    let m = (w.max_outflow() * spec.dt / STABILITY_BOUND).ceil() as usize;
    assert!(m > 8);
    let exact = first_jump_moments(&first_jump_hazards(&spec, m).unwrap(), spec.dt);
    assert!(exact.p_jump > 1.0 - 1e-12);

    let device = device_for(&spec);
    let settings = SimulationSettings::new(spec.n_steps as f64 * spec.dt, spec.dt);
    let cfg = EnsembleConfig::new(device, zero_drive(), settings, 3000, 5);
    let result = run_ensemble(&cfg).unwrap();
    let firsts: Vec<f64> = result
        .jumps
        .iter()
        .filter_map(|j| j.first().map(|e| e.time))
        .collect();
    assert_eq!(firsts.len(), 3000);
    let (mean, se) = sample_mean_and_error(&firsts).unwrap();
    assert!(
        (mean - exact.mean).abs() <= 3.0 * se,
        "{mean} vs {} (se {se})",
        exact.mean
    );
}

#[test]
fn two_state_relaxation_follows_closed_form() {
    let params = BinaryDeviceParams::default();
    let device = make_binary_device(params).unwrap();
    let w = 1.0 / binary_switching_time(1.5, &params, BinaryDirection::Set);
    let lambda = w + params.eta_off;
    assert!((w / lambda - 0.9596).abs() < 5e-5);
    let dt = 0.01 / lambda;
    let wf = Waveform::new(WaveformSpec::constant(1.5)).unwrap();
    let settings = SimulationSettings::new(2000.0 * dt, dt);
    let mut checked = 0;
    for seed in 0..50 {
        let tr = simulate_trajectory(&device, &wf, &settings, seed).unwrap();
        let end = tr.jumps.first().map_or(tr.samples.len(), |j| j.step);
        for s in &tr.samples[1..end] {
            let exact = analytic_two_state_p(s.t, w, params.eta_off, 0.0).unwrap();
            let got = s.probabilities.get(StateIndex::new(1, 2).unwrap());
            assert!(
                (got - exact).abs() <= 0.01 * exact,
                "t={} {got} vs {exact}",
                s.t
            );
            checked += 1;
        }
    }
    assert!(checked > 100);
}

#[test]
fn binary_set_probability_per_period_matches_hazard_product() {
    let params = BinaryDeviceParams::default();
    let device = make_binary_device(params).unwrap();
    let wf = Waveform::new(WaveformSpec::sinusoid(1.5, 10.0)).unwrap();
    let settings = SimulationSettings::new(0.1, 1e-2);
    let grid = settings.grid().unwrap();
    let set_rates: Vec<f64> = (0..10)
        .map(|k| {
            device.transition_rate(
                StateIndex::new(2, 2).unwrap(),
                StateIndex::new(1, 2).unwrap(),
                wf.sample(grid.time(k)),
            )
        })
        .filter(|r| *r > 0.0)
        .collect();
    let p = two_state_fire_probability(&set_rates, params.eta_off, 1e-2).unwrap();

    let cfg = EnsembleConfig::new(device, wf, settings, 2000, 3);
    let result = run_ensemble(&cfg).unwrap();
    let metrics = loop_and_period_metrics(&result, 0.1).unwrap();
    let set = Transition {
        from: StateIndex::new(2, 2).unwrap(),
        to: StateIndex::new(1, 2).unwrap(),
    };
    let (fired, armed) = metrics.fire_counts(set);
    assert_eq!(armed, 2000);
    let est = fired as f64 / armed as f64;
    let se = (p * (1.0 - p) / armed as f64).sqrt();
    assert!((est - p).abs() <= 3.0 * se, "{est} vs {p}");
}

#[test]
fn quad_switching_times_follow_gamma_order_under_strong_drive() {
    let device = make_quad_device(QuadDeviceParams::default()).unwrap();
    let wf = Waveform::new(WaveformSpec::sinusoid(150.0, 10.0)).unwrap();
    let settings = SimulationSettings::new(1.0, 1e-4);
    let cfg = EnsembleConfig::new(device, wf, settings, 8, 17);
    let result = run_ensemble(&cfg).unwrap();
    let mean = |a: usize, b: usize| {
        let t = Transition {
            from: StateIndex::new(a, 4).unwrap(),
            to: StateIndex::new(b, 4).unwrap(),
        };
        result.switching_stats[&t].mean.unwrap()
    };
    assert!(mean(1, 2) < mean(2, 3) && mean(2, 3) < mean(3, 4));
    assert!(mean(4, 3) < mean(3, 2) && mean(3, 2) < mean(2, 1));
}
