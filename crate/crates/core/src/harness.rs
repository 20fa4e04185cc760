//! Monte Carlo ensembles and their statistics.
//!
//! Trajectory `k` of an ensemble is seeded with [`derive_seed`]`(base_seed, k)`.
//! Trajectories are processed in fixed-size chunks; each chunk folds its
//! trajectories in index order and chunks are merged in index order, so the
//! result is bit-identical for serial and parallel execution.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::device::DeviceModel;
use crate::engine::{JumpEvent, SimulationSettings, Stepper, TimeGrid, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::types::{RateTable, StateIndex};
use crate::waveform::Waveform;

const CHUNK: usize = 16;

/// Upper bound on `samples * states^2` for one ensemble grid. The harness
/// keeps the voltage, the mean current and the enabled-transition mask for
/// every grid point.
pub const MAX_GRID_CELLS: usize = 200_000_000;

/// Per-trajectory seed: a SplitMix64 finalizer applied to
/// `base + 0x9E3779B97F4A7C15 * (index + 1)` (wrapping arithmetic).
pub fn derive_seed(base_seed: u64, index: u64) -> u64 {
    let mut z =
        base_seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Transition {
    pub from: StateIndex,
    pub to: StateIndex,
}

impl std::fmt::Display for Transition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}->{}", self.from, self.to)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Serial,
    Parallel,
}

#[derive(Debug, Clone)]
pub struct EnsembleConfig<D> {
    pub device: D,
    pub waveform: Waveform,
    pub settings: SimulationSettings,
    pub n_trajectories: usize,
    pub base_seed: u64,
    /// Full records are kept for the first `keep_trajectories` members.
    pub keep_trajectories: usize,
    pub execution: Execution,
}

impl<D: DeviceModel> EnsembleConfig<D> {
    pub fn new(
        device: D,
        waveform: Waveform,
        settings: SimulationSettings,
        n_trajectories: usize,
        base_seed: u64,
    ) -> Self {
        EnsembleConfig {
            device,
            waveform,
            settings,
            n_trajectories,
            base_seed,
            keep_trajectories: 0,
            execution: Execution::Parallel,
        }
    }
}

/// Switching-time summary for one transition. `mean` is `None` when the
/// transition was never observed; `std` needs at least two observations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchingStats {
    pub count: u64,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl SwitchingStats {
    /// Standard error of the mean.
    pub fn std_error(&self) -> Option<f64> {
        self.std.map(|s| s / (self.count as f64).sqrt())
    }
}

/// Mean/variance accumulator with an order-fixed merge.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Running {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Running {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    fn merge(&mut self, other: &Running) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / n;
        self.m2 += other.m2 + d * d * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    fn summary(&self) -> SwitchingStats {
        SwitchingStats {
            count: self.count,
            mean: (self.count > 0).then_some(self.mean),
            std: (self.count > 1).then(|| (self.m2 / (self.count - 1) as f64).sqrt()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PeriodCounts {
    /// Jumps decided within the period, summed over trajectories.
    pub jumps: u64,
    /// Trajectories that occupied the source state while the transition was
    /// enabled at some step of the period.
    pub armed: u64,
    /// Armed trajectories that made the jump within the period.
    pub fired: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodRow {
    pub index: usize,
    /// Area enclosed by (v, mean current) over the period, in V*A.
    pub loop_area: f64,
    pub events: BTreeMap<Transition, PeriodCounts>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodMetrics {
    pub period: f64,
    pub steps_per_period: usize,
    pub rows: Vec<PeriodRow>,
}

impl PeriodMetrics {
    /// `(fired, armed)` for `transition` summed over all periods.
    pub fn fire_counts(&self, transition: Transition) -> (u64, u64) {
        self.rows.iter().fold((0, 0), |(f, a), row| {
            let c = row.events.get(&transition).copied().unwrap_or_default();
            (f + c.fired, a + c.armed)
        })
    }

    /// Fraction of armed trajectory-periods in which the jump happened.
    pub fn fire_probability(&self, transition: Transition) -> Option<f64> {
        let (fired, armed) = self.fire_counts(transition);
        (armed > 0).then(|| fired as f64 / armed as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub n_states: usize,
    pub grid: TimeGrid,
    pub n_trajectories: usize,
    pub initial_state: StateIndex,
    pub seeds: Vec<u64>,
    pub voltages: Vec<f64>,
    pub mean_current: Vec<f64>,
    pub switching_stats: BTreeMap<Transition, SwitchingStats>,
    /// Fraction of recorded samples spent in each state.
    pub occupancy: Vec<f64>,
    /// Jumps of every trajectory, in trajectory order.
    pub jumps: Vec<Vec<JumpEvent>>,
    /// Full records of the first `keep_trajectories` members.
    pub trajectories: Vec<TrajectoryRecord>,
    /// Per-period metrics for the waveform's own period, when it is a whole
    /// number of steps.
    pub per_period: Option<PeriodMetrics>,
    enabled: Vec<bool>,
}

impl EnsembleResult {
    pub fn times(&self) -> Vec<f64> {
        (0..self.grid.len()).map(|k| self.grid.time(k)).collect()
    }

    fn is_enabled(&self, step: usize, from: usize, to: usize) -> bool {
        let n = self.n_states;
        self.enabled[step * n * n + from * n + to]
    }
}

struct Accumulator {
    current_sum: Vec<f64>,
    occupancy: Vec<u64>,
    stats: Vec<Running>,
    jumps: Vec<Vec<JumpEvent>>,
    kept: Vec<TrajectoryRecord>,
}

impl Accumulator {
    fn new(len: usize, n: usize) -> Self {
        Accumulator {
            current_sum: vec![0.0; len],
            occupancy: vec![0; n],
            stats: vec![Running::default(); n * n],
            jumps: Vec::new(),
            kept: Vec::new(),
        }
    }

    fn merge(&mut self, other: Accumulator) {
        for (a, b) in self.current_sum.iter_mut().zip(&other.current_sum) {
            *a += b;
        }
        for (a, b) in self.occupancy.iter_mut().zip(&other.occupancy) {
            *a += b;
        }
        for (a, b) in self.stats.iter_mut().zip(&other.stats) {
            a.merge(b);
        }
        self.jumps.extend(other.jumps);
        self.kept.extend(other.kept);
    }
}

struct Shared<'a, D> {
    config: &'a EnsembleConfig<D>,
    grid: TimeGrid,
    n: usize,
    enabled: &'a [bool],
}

fn run_member<D: DeviceModel>(
    shared: &Shared<'_, D>,
    index: usize,
    acc: &mut Accumulator,
) -> Result<()> {
    let cfg = shared.config;
    let n = shared.n;
    let nn = n * n;
    let seed = derive_seed(cfg.base_seed, index as u64);
    let mut stepper = Stepper::new(&cfg.device, &cfg.waveform, &cfg.settings, seed)?;
    let keep = index < cfg.keep_trajectories;
    let mut samples = Vec::new();
    let mut jumps = Vec::new();
    let mut enabled_since: Vec<Option<f64>> = vec![None; nn];
    let mut arrival = 0.0;

    let mut record =
        |stepper: &Stepper<'_, D>, acc: &mut Accumulator, enabled_since: &mut [Option<f64>]| {
            let st = stepper.state();
            let k = st.step();
            acc.current_sum[k] += st.current();
            acc.occupancy[st.state().index()] += 1;
            let t = shared.grid.time(k);
            for (slot, on) in enabled_since
                .iter_mut()
                .zip(&shared.enabled[k * nn..(k + 1) * nn])
            {
                match (*on, slot.is_some()) {
                    (true, false) => *slot = Some(t),
                    (false, true) => *slot = None,
                    _ => {}
                }
            }
            if keep {
                samples.push(stepper.sample());
            }
        };

    record(&stepper, acc, &mut enabled_since);
    while !stepper.is_done() {
        if let Some(j) = stepper.step()? {
            let slot = j.from_state.index() * n + j.to_state.index();
            let start = enabled_since[slot].unwrap_or(arrival);
            acc.stats[slot].push(j.time - start);
            arrival = j.time;
            jumps.push(j);
        }
        record(&stepper, acc, &mut enabled_since);
    }
    if keep {
        acc.kept.push(TrajectoryRecord {
            dt: shared.grid.dt(),
            samples,
            jumps: jumps.clone(),
            seed,
        });
    }
    acc.jumps.push(jumps);
    Ok(())
}

/// Runs `n_trajectories` independent trajectories and aggregates their
/// statistics.
pub fn run_ensemble<D: DeviceModel + Sync>(config: &EnsembleConfig<D>) -> Result<EnsembleResult> {
    if config.n_trajectories == 0 {
        return Err(Error::param("ensemble needs at least one trajectory"));
    }
    let grid = config.settings.grid()?;
    let n = config.device.n_states();
    if grid.len().saturating_mul(n * n) > MAX_GRID_CELLS {
        return Err(Error::param(format!(
            "grid of {} samples x {} states exceeds the ensemble memory limit",
            grid.len(),
            n
        )));
    }
    let initial = config
        .settings
        .initial_state
        .unwrap_or_else(|| config.device.default_initial_state());
    let initial = StateIndex::new(initial.get(), n)?;

    let voltages: Vec<f64> = (0..grid.len())
        .map(|k| config.waveform.sample(grid.time(k)))
        .collect();
    let mut enabled = Vec::with_capacity(grid.len() * n * n);
    let mut table = RateTable::zeros(n)?;
    for &v in &voltages {
        config.device.fill_rate_table(v, &mut table)?;
        enabled.extend(table.raw().iter().map(|r| *r > 0.0));
    }

    let shared = Shared {
        config,
        grid,
        n,
        enabled: &enabled,
    };
    let n_chunks = config.n_trajectories.div_ceil(CHUNK);
    let run_chunk = |c: usize| -> Result<Accumulator> {
        let mut acc = Accumulator::new(grid.len(), n);
        let end = ((c + 1) * CHUNK).min(config.n_trajectories);
        for index in c * CHUNK..end {
            run_member(&shared, index, &mut acc).map_err(|e| Error::Trajectory {
                index,
                source: Box::new(e),
            })?;
        }
        Ok(acc)
    };
    let chunks: Vec<Result<Accumulator>> = match config.execution {
        Execution::Serial => (0..n_chunks).map(run_chunk).collect(),
        Execution::Parallel => (0..n_chunks).into_par_iter().map(run_chunk).collect(),
    };
    let mut total = Accumulator::new(grid.len(), n);
    for chunk in chunks {
        total.merge(chunk?);
    }

    let n_traj = config.n_trajectories as f64;
    let samples = (config.n_trajectories * grid.len()) as f64;
    let mut switching_stats = BTreeMap::new();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let t = Transition {
                    from: StateIndex(i + 1),
                    to: StateIndex(j + 1),
                };
                switching_stats.insert(t, total.stats[i * n + j].summary());
            }
        }
    }
    let mut result = EnsembleResult {
        n_states: n,
        grid,
        n_trajectories: config.n_trajectories,
        initial_state: initial,
        seeds: (0..config.n_trajectories as u64)
            .map(|k| derive_seed(config.base_seed, k))
            .collect(),
        voltages,
        mean_current: total.current_sum.iter().map(|s| s / n_traj).collect(),
        switching_stats,
        occupancy: total
            .occupancy
            .iter()
            .map(|c| *c as f64 / samples)
            .collect(),
        jumps: total.jumps,
        trajectories: total.kept,
        per_period: None,
        enabled,
    };
    if let Some(period) = config.waveform.period() {
        if steps_per_period(period, grid.dt()).is_ok() {
            result.per_period = Some(loop_and_period_metrics(&result, period)?);
        }
    }
    Ok(result)
}

/// Pointwise mean current over the ensemble, one value per grid sample.
pub fn ensemble_mean_current(result: &EnsembleResult) -> &[f64] {
    &result.mean_current
}

/// Per-transition switching-time statistics. A switching time runs from the
/// first sample of the contiguous run in which the transition is enabled to
/// the sample where the jump lands.
pub fn switching_time_stats(result: &EnsembleResult) -> &BTreeMap<Transition, SwitchingStats> {
    &result.switching_stats
}

fn steps_per_period(period: f64, dt: f64) -> Result<usize> {
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::param(format!("period must be > 0, got {period}")));
    }
    let ratio = period / dt;
    let whole = ratio.round();
    if whole < 1.0 || (ratio - whole).abs() > 1e-9 * ratio {
        return Err(Error::param(format!(
            "period {period} is not a multiple of dt {dt}"
        )));
    }
    Ok(whole as usize)
}

/// Per-period jump/armed counts for every transition and the (v, mean
/// current) loop area of each period. A jump belongs to the period of the
/// step whose selector decided it, i.e. the sample before it lands.
pub fn loop_and_period_metrics(result: &EnsembleResult, period: f64) -> Result<PeriodMetrics> {
    let spp = steps_per_period(period, result.grid.dt())?;
    let n = result.n_states;
    let n_steps = result.grid.n_steps();
    let n_periods = n_steps.div_ceil(spp);

    let mut counts = vec![PeriodCounts::default(); n_periods * n * n];
    let slot = |p: usize, i: usize, j: usize| (p * n + i) * n + j;
    let mut armed_mark = vec![usize::MAX; n * n];
    let mut fired_mark = vec![usize::MAX; n * n];
    for jumps in &result.jumps {
        armed_mark.iter_mut().for_each(|m| *m = usize::MAX);
        fired_mark.iter_mut().for_each(|m| *m = usize::MAX);
        let mut state = result.initial_state.index();
        let mut next_jump = jumps.iter().peekable();
        for k in 0..n_steps {
            while let Some(j) = next_jump.next_if(|j| j.step == k) {
                state = j.to_state.index();
            }
            let p = k / spp;
            for to in 0..n {
                if to != state && result.is_enabled(k, state, to) && armed_mark[state * n + to] != p
                {
                    armed_mark[state * n + to] = p;
                    counts[slot(p, state, to)].armed += 1;
                }
            }
            if let Some(j) = next_jump.peek().filter(|j| j.step == k + 1) {
                let (a, b) = (j.from_state.index(), j.to_state.index());
                counts[slot(p, a, b)].jumps += 1;
                if armed_mark[a * n + b] == p && fired_mark[a * n + b] != p {
                    fired_mark[a * n + b] = p;
                    counts[slot(p, a, b)].fired += 1;
                }
            }
        }
    }

    let rows = (0..n_periods)
        .map(|p| {
            let lo = p * spp;
            let hi = ((p + 1) * spp).min(n_steps);
            let v = &result.voltages[lo..=hi];
            let i = &result.mean_current[lo..=hi];
            let twice: f64 = (0..v.len() - 1)
                .map(|k| (v[k] + v[k + 1]) * (i[k + 1] - i[k]))
                .sum();
            let mut events = BTreeMap::new();
            for a in 0..n {
                for b in 0..n {
                    if a != b {
                        events.insert(
                            Transition {
                                from: StateIndex(a + 1),
                                to: StateIndex(b + 1),
                            },
                            counts[slot(p, a, b)],
                        );
                    }
                }
            }
            PeriodRow {
                index: p,
                loop_area: 0.5 * twice.abs(),
                events,
            }
        })
        .collect();
    Ok(PeriodMetrics {
        period,
        steps_per_period: spp,
        rows,
    })
}
