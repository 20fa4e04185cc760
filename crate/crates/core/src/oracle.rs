//! Independent reference implementations for validating the engine.
//!
//! Nothing here calls into [`crate::engine`]. The chain simulator re-derives
//! the update `P <- P + dt W P`, the interval selector and the jump reset from
//! scratch, one step at a time, with no sub-stepping.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::harness::derive_seed;
use crate::types::{RateTable, StateIndex};

/// Two-state relaxation under constant rates: with `dP_on/dt = w (1 - P_on)
/// - eta P_on`, `P_on(t) = P* + (p0 - P*) exp(-(w + eta) t)` and
/// `P* = w / (w + eta)`. Returns `p0` when both rates are zero.
pub fn analytic_two_state_p(t: f64, w: f64, eta: f64, p0: f64) -> Result<f64> {
    if !(w >= 0.0 && eta >= 0.0 && w.is_finite() && eta.is_finite()) {
        return Err(Error::param(format!(
            "rates must be finite and >= 0, got w={w} eta={eta}"
        )));
    }
    if !(0.0..=1.0).contains(&p0) || !(t >= 0.0) {
        return Err(Error::param(format!(
            "need p0 in [0, 1] and t >= 0, got p0={p0} t={t}"
        )));
    }
    let total = w + eta;
    if total == 0.0 {
        return Ok(p0);
    }
    let target = w / total;
    Ok(target + (p0 - target) * (-total * t).exp())
}

/// A time-invariant chain for the brute-force simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantRateChainSpec {
    pub rates: RateTable,
    pub eta: Vec<f64>,
    pub initial_state: StateIndex,
    pub dt: f64,
    pub n_steps: usize,
}

impl ConstantRateChainSpec {
    /// Largest possible `|W_ii| dt`: total outflow of a state plus the
    /// largest conservation rate.
    pub fn stiffness(&self) -> f64 {
        let n = self.rates.n_states();
        let eta_max = self.eta.iter().copied().fold(0.0, f64::max);
        let out_max = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|j| *j != i)
                    .map(|j| self.rates.get(StateIndex(i + 1), StateIndex(j + 1)))
                    .sum::<f64>()
            })
            .fold(0.0, f64::max);
        (out_max + eta_max) * self.dt
    }

    fn validate(&self) -> Result<()> {
        let n = self.rates.n_states();
        if self.eta.len() != n {
            return Err(Error::param("eta needs one entry per state"));
        }
        if self.eta.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(Error::param("conservation rates must be finite and >= 0"));
        }
        StateIndex::new(self.initial_state.get(), n)?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::param(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.stiffness() > 0.1 {
            return Err(Error::param(format!(
                "oracle requires max rate * dt <= 0.1, got {}",
                self.stiffness()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainJump {
    /// Step on which the new state is first occupied.
    pub step: usize,
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrajectory {
    pub jumps: Vec<ChainJump>,
    /// Samples spent in each state (zero-based), including step 0.
    pub visits: Vec<u64>,
}

/// One naive trajectory.
pub fn run_chain(spec: &ConstantRateChainSpec, seed: u64) -> Result<ChainTrajectory> {
    spec.validate()?;
    let n = spec.rates.n_states();
    let rate = |i: usize, j: usize| spec.rates.get(StateIndex(i + 1), StateIndex(j + 1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut x = spec.initial_state.get() - 1;
    let mut p = vec![0.0; n];
    p[x] = 1.0;
    let mut u: f64 = rng.random();
    let mut visits = vec![0u64; n];
    visits[x] += 1;
    let mut jumps = Vec::new();

    for step in 1..=spec.n_steps {
        // Selector: first state whose cumulative upper bound exceeds u; the
        // last state takes everything left, including u = 1.
        let mut y = n - 1;
        let mut acc = 0.0;
        for (i, pi) in p.iter().enumerate().take(n - 1) {
            acc += pi;
            if u < acc {
                y = i;
                break;
            }
        }

        if y != x {
            jumps.push(ChainJump {
                step,
                from: x + 1,
                to: y + 1,
            });
            x = y;
            p = vec![0.0; n];
            p[x] = 1.0;
        } else {
            let eta = spec.eta[x];
            let mut next = vec![0.0; n];
            for i in 0..n {
                let mut dp = 0.0;
                for j in 0..n {
                    if j != i {
                        dp += rate(j, i) * p[j] - rate(i, j) * p[i];
                    }
                }
                // Conservation toward the occupied state x.
                if i == x {
                    dp += eta * (1.0 - p[i]);
                } else {
                    dp -= eta * p[i];
                }
                next[i] = p[i] + spec.dt * dp;
            }
            let total: f64 = next.iter().sum();
            p = next.into_iter().map(|q| q / total).collect();
        }
        u = rng.random();
        visits[x] += 1;
    }
    Ok(ChainTrajectory { jumps, visits })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainEnsemble {
    /// Time of the first jump of each trajectory, `None` if it never jumped.
    pub first_jump_times: Vec<Option<f64>>,
    pub visit_counts: Vec<u64>,
    pub trajectories: Vec<ChainTrajectory>,
}

impl ChainEnsemble {
    /// Mean and standard error of the observed first-jump times.
    pub fn first_jump_mean(&self) -> Option<(f64, f64)> {
        let xs: Vec<f64> = self.first_jump_times.iter().flatten().copied().collect();
        sample_mean_and_error(&xs)
    }
}

/// `(mean, standard error)` of `xs`, `None` for fewer than two values.
pub fn sample_mean_and_error(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, (var / n).sqrt()))
}

/// Runs `n_traj` naive trajectories; trajectory `k` is seeded with
/// `derive_seed(seed, k)`.
pub fn brute_force_chain(
    spec: &ConstantRateChainSpec,
    n_traj: usize,
    seed: u64,
) -> Result<ChainEnsemble> {
    spec.validate()?;
    let n = spec.rates.n_states();
    let mut visit_counts = vec![0u64; n];
    let mut first_jump_times = Vec::with_capacity(n_traj);
    let mut trajectories = Vec::with_capacity(n_traj);
    for k in 0..n_traj {
        let tr = run_chain(spec, derive_seed(seed, k as u64))?;
        first_jump_times.push(tr.jumps.first().map(|j| j.step as f64 * spec.dt));
        for (a, b) in visit_counts.iter_mut().zip(&tr.visits) {
            *a += b;
        }
        trajectories.push(tr);
    }
    Ok(ChainEnsemble {
        first_jump_times,
        visit_counts,
        trajectories,
    })
}

/// Per-step probability of leaving the initial state, given no jump so far.
/// Entry `m` is the probability that the selection made from the vector
/// after `m` steps lands elsewhere, i.e. that the first jump lands on step
/// `m + 1`. Each step is split into `substeps` plain Euler sub-steps.
pub fn first_jump_hazards(spec: &ConstantRateChainSpec, substeps: usize) -> Result<Vec<f64>> {
    let n = spec.rates.n_states();
    if substeps == 0 || spec.eta.len() != n {
        return Err(Error::param("need substeps >= 1 and one eta per state"));
    }
    let x = spec.initial_state.get() - 1;
    let rate = |i: usize, j: usize| spec.rates.get(StateIndex(i + 1), StateIndex(j + 1));
    let h = spec.dt / substeps as f64;
    let mut p = vec![0.0; n];
    p[x] = 1.0;
    let mut hazards = Vec::with_capacity(spec.n_steps);
    hazards.push(0.0);
    for _ in 1..spec.n_steps {
        for _ in 0..substeps {
            let mut next = vec![0.0; n];
            for i in 0..n {
                let mut dp = 0.0;
                for j in 0..n {
                    if j != i {
                        dp += rate(j, i) * p[j] - rate(i, j) * p[i];
                    }
                }
                dp += if i == x {
                    spec.eta[x] * (1.0 - p[i])
                } else {
                    -spec.eta[x] * p[i]
                };
                next[i] = (p[i] + h * dp).max(0.0);
            }
            let total: f64 = next.iter().sum();
            p = next.into_iter().map(|q| q / total).collect();
        }
        hazards.push(1.0 - p[x]);
    }
    Ok(hazards)
}

/// Exact moments of the first-jump time implied by a hazard sequence, by
/// direct summation: the jump lands on step `m + 1` with probability
/// `h_m prod_{k<m} (1 - h_k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirstJumpMoments {
    /// Probability of a jump within the horizon.
    pub p_jump: f64,
    /// Mean first-jump time conditional on a jump within the horizon.
    pub mean: f64,
    /// Conditional variance.
    pub variance: f64,
}

pub fn first_jump_moments(hazards: &[f64], dt: f64) -> FirstJumpMoments {
    let mut survival = 1.0;
    let (mut mass, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (m, h) in hazards.iter().enumerate() {
        let prob = survival * h;
        let t = (m + 1) as f64 * dt;
        mass += prob;
        m1 += prob * t;
        m2 += prob * t * t;
        survival *= 1.0 - h;
    }
    let mean = m1 / mass;
    FirstJumpMoments {
        p_jump: mass,
        mean,
        variance: m2 / mass - mean * mean,
    }
}

/// Probability that a two-state device starting fully in its source state
/// jumps at least once during a run of steps with the given per-step rates
/// toward the other state. `P_other` is chained through
/// [`analytic_two_state_p`] and each step's selection leaves with
/// probability `P_other`.
pub fn two_state_fire_probability(step_rates: &[f64], eta: f64, dt: f64) -> Result<f64> {
    let mut p_other = 0.0;
    let mut stay = 1.0;
    for &w in step_rates {
        p_other = analytic_two_state_p(dt, w, eta, p_other)?;
        stay *= 1.0 - p_other;
    }
    Ok(1.0 - stay)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_state(w: f64, eta: f64, dt: f64, n_steps: usize) -> ConstantRateChainSpec {
        ConstantRateChainSpec {
            rates: RateTable::from_entries(2, &[(2, 1, w)]).unwrap(),
            eta: vec![eta, eta],
            initial_state: StateIndex(2),
            dt,
            n_steps,
        }
    }

    #[test]
    fn analytic_examples() {
        assert_eq!(analytic_two_state_p(0.0, 5.0, 3.0, 0.25).unwrap(), 0.25);
        let w = 3.563e7;
        let p = analytic_two_state_p(1.0, w, 1.5e6, 0.0).unwrap();
        assert_relative_eq!(p, 0.9596, max_relative = 1e-4);
        let decay = analytic_two_state_p(0.3, 0.0, 2.0, 0.8).unwrap();
        assert_relative_eq!(decay, 0.8 * (-0.6f64).exp(), max_relative = 1e-14);
        assert_eq!(analytic_two_state_p(5.0, 0.0, 0.0, 0.4).unwrap(), 0.4);
        assert!(analytic_two_state_p(1.0, -1.0, 0.0, 0.4).is_err());
    }

    #[test]
    fn analytic_is_monotone_toward_target() {
        let (w, eta) = (4.0, 1.0);
        let mut prev = 0.1;
        for k in 1..50 {
            let p = analytic_two_state_p(k as f64 * 0.05, w, eta, 0.1).unwrap();
            assert!(p >= prev && p <= 0.8);
            prev = p;
        }
    }

    #[test]
    fn frozen_chain_never_jumps() {
        let spec = two_state(0.0, 0.0, 1e-3, 500);
        let ens = brute_force_chain(&spec, 20, 1).unwrap();
        assert!(ens.first_jump_times.iter().all(Option::is_none));
        assert_eq!(ens.visit_counts, vec![0, 20 * 501]);
    }

    #[test]
    fn stability_precondition_enforced() {
        assert!(run_chain(&two_state(2000.0, 0.0, 1e-4, 10), 0).is_err());
        assert!(run_chain(&two_state(1000.0, 0.0, 1e-4, 10), 0).is_ok());
    }

    #[test]
    fn hazards_match_closed_form_euler() {
        // Euler on the two-state chain: P_on(m) = P* (1 - (1 - (w + eta) dt)^m).
        let (w, eta, dt) = (100.0, 20.0, 1e-4);
        let hz = first_jump_hazards(&two_state(w, eta, dt, 200), 1).unwrap();
        for (m, h) in hz.iter().enumerate() {
            let expected = w / (w + eta) * (1.0 - (1.0 - (w + eta) * dt).powi(m as i32));
            assert!((h - expected).abs() < 1e-13, "step {m}: {h} vs {expected}");
        }
    }

    #[test]
    fn chain_mean_matches_discrete_hazard_sum() {
        let spec = two_state(100.0, 0.0, 1e-4, 400);
        let exact = first_jump_moments(&first_jump_hazards(&spec, 1).unwrap(), spec.dt);
        assert!(exact.p_jump > 1.0 - 1e-12);
        let ens = brute_force_chain(&spec, 10_000, 2024).unwrap();
        assert!(ens.first_jump_times.iter().all(Option::is_some));
        let (mean, _) = ens.first_jump_mean().unwrap();
        let se = (exact.variance / 10_000.0).sqrt();
        assert!(
            (mean - exact.mean).abs() <= 3.0 * se,
            "mean {mean} exact {} se {se}",
            exact.mean
        );
    }

    #[test]
    fn fire_probability_limits() {
        assert_eq!(
            two_state_fire_probability(&[0.0; 10], 1e3, 1e-3).unwrap(),
            0.0
        );
        // One fully relaxed step leaves with probability P* = w / (w + eta).
        let p = two_state_fire_probability(&[3.0e6], 1.0e6, 1.0).unwrap();
        assert_relative_eq!(p, 0.75, max_relative = 1e-12);
    }
}
