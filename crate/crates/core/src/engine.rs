//! Finite-state master-equation engine.
//!
//! Each recorded step `k` of a trajectory does, in order:
//!
//! 1. sample `v_k` from the waveform;
//! 2. select `x_k` from `(P_{k-1}, U_{k-1})` with the cumulative-interval
//!    rule of [`select_state`];
//! 3. on a state change, record a [`JumpEvent`] and reset `P_k` to one-hot at
//!    `x_k`; otherwise advance `P_k = P_{k-1} + dt W_k P_{k-1}` with
//!    `W_k = W^v(v_k) + W^x(x_k)`;
//! 4. draw `U_k`;
//! 5. compute `i_k = g(x_k, v_k)`.
//!
//! Step 0 starts one-hot at the initial state. Exactly one uniform draw is
//! consumed per recorded step; sub-steps consume none.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::device::DeviceModel;
use crate::error::{Error, Result};
use crate::types::{ProbabilityVector, RateTable, StateIndex, TransitionMatrix};
use crate::waveform::Waveform;

/// Largest `max_i |W_ii| * dt` a single Euler step may take.
pub const STABILITY_BOUND: f64 = 0.1;

/// Sub-step counts above this are evaluated by repeated squaring of the
/// sub-step matrix rather than one sub-step at a time.
const SQUARING_THRESHOLD: usize = 8;

/// Builds `W^v` from pairwise rates: `W[i][j] = w_{j,i}` for `i != j` and
/// `W[j][j] = -sum_{i != j} w_{j,i}`.
pub fn assemble_voltage_matrix(rates: &RateTable) -> Result<TransitionMatrix> {
    let n = rates.n_states();
    if let Some(bad) = rates.raw().iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
        return Err(Error::param(format!(
            "rates must be finite and >= 0, got {bad}"
        )));
    }
    let mut w = TransitionMatrix::zeros(n);
    fill_voltage_matrix(rates, &mut w);
    Ok(w)
}

fn fill_voltage_matrix(rates: &RateTable, w: &mut TransitionMatrix) {
    let n = rates.n_states();
    let r = rates.raw();
    let m = w.raw_mut();
    for j in 0..n {
        let mut out = 0.0;
        for i in 0..n {
            if i != j {
                let rate = r[j * n + i];
                m[i * n + j] = rate;
                out += rate;
            }
        }
        m[j * n + j] = -out;
    }
    balance_columns(m, n);
}

/// Rounds each column's off-diagonal entries to a common power-of-two grid
/// fine enough to lose at most a few ulps of the column total, then sets the
/// diagonal so the column sums to exactly zero in any summation order.
fn balance_columns(m: &mut [f64], n: usize) {
    for j in 0..n {
        let off: f64 = (0..n).filter(|&i| i != j).map(|i| m[i * n + j]).sum();
        if off == 0.0 || !off.is_finite() {
            m[j * n + j] = -off;
            continue;
        }
        let q = 2f64.powi(off.log2().ceil() as i32 - 50);
        if !q.is_normal() {
            m[j * n + j] = -off;
            continue;
        }
        let mut total = 0.0;
        for i in (0..n).filter(|&i| i != j) {
            let x = (m[i * n + j] / q).round() * q;
            m[i * n + j] = x;
            total += x;
        }
        m[j * n + j] = -total;
    }
}

/// Builds `W^x` for the occupied state `c`: probability flows from every
/// other state into `c` at rate `eta_c`.
pub fn assemble_conservation_matrix(eta: &[f64], current: StateIndex) -> Result<TransitionMatrix> {
    let n = eta.len();
    if n < 2 {
        return Err(Error::param(format!(
            "need at least 2 conservation rates, got {n}"
        )));
    }
    StateIndex::new(current.get(), n)?;
    if let Some(bad) = eta.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::param(format!(
            "conservation rate must be >= 0, got {bad}"
        )));
    }
    let mut w = TransitionMatrix::zeros(n);
    add_conservation(eta[current.index()], current.index(), &mut w);
    Ok(w)
}

/// Builds the full generator `W^v + W^x` for the occupied state.
pub fn assemble_generator(
    rates: &RateTable,
    eta: &[f64],
    current: StateIndex,
) -> Result<TransitionMatrix> {
    if eta.len() != rates.n_states() {
        return Err(Error::param(format!(
            "{} conservation rates for {} states",
            eta.len(),
            rates.n_states()
        )));
    }
    let mut w = assemble_voltage_matrix(rates)?;
    assemble_conservation_matrix(eta, current)?;
    add_conservation(eta[current.index()], current.index(), &mut w);
    Ok(w)
}

fn add_conservation(eta_c: f64, c: usize, w: &mut TransitionMatrix) {
    let n = w.n_states();
    let m = w.raw_mut();
    for j in 0..n {
        if j != c {
            m[j * n + j] -= eta_c;
            m[c * n + j] += eta_c;
        }
    }
    balance_columns(m, n);
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("dt must be finite and > 0, got {dt}")))
    }
}

/// Clamps negatives to zero and rescales to unit sum.
fn clamp_renormalize(p: &mut [f64]) {
    let mut sum = 0.0;
    for x in p.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
        sum += *x;
    }
    for x in p.iter_mut() {
        *x /= sum;
    }
}

fn euler_in_place(p: &mut [f64], w: &TransitionMatrix, dt: f64, scratch: &mut [f64]) {
    let n = p.len();
    let m = w.raw();
    for i in 0..n {
        let row = &m[i * n..(i + 1) * n];
        let flow: f64 = row.iter().zip(p.iter()).map(|(a, b)| a * b).sum();
        scratch[i] = p[i] + dt * flow;
    }
    p.copy_from_slice(&scratch[..n]);
    clamp_renormalize(p);
}

/// One forward-Euler step `P + dt W P`, followed by clamp-and-renormalize.
pub fn euler_step(
    p: &ProbabilityVector,
    w: &TransitionMatrix,
    dt: f64,
) -> Result<ProbabilityVector> {
    check_dt(dt)?;
    if p.len() != w.n_states() {
        return Err(Error::param("probability vector and matrix sizes differ"));
    }
    let mut out = p.as_slice().to_vec();
    let mut scratch = vec![0.0; out.len()];
    euler_in_place(&mut out, w, dt, &mut scratch);
    Ok(ProbabilityVector::from_raw(out))
}

/// Number of Euler sub-steps needed so each satisfies [`STABILITY_BOUND`].
pub fn substep_count(w: &TransitionMatrix, dt: f64) -> usize {
    let stiffness = w.max_outflow() * dt;
    if stiffness <= STABILITY_BOUND {
        1
    } else {
        (stiffness / STABILITY_BOUND).ceil() as usize
    }
}

/// Scratch buffers for [`advance_in_place`].
#[derive(Debug, Clone)]
struct Workspace {
    vec: Vec<f64>,
    base: Vec<f64>,
    acc: Vec<f64>,
    tmp: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Workspace {
            vec: vec![0.0; n],
            base: vec![0.0; n * n],
            acc: vec![0.0; n * n],
            tmp: vec![0.0; n * n],
        }
    }
}

fn mat_mul(a: &[f64], b: &[f64], out: &mut [f64], n: usize) {
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += a[i * n + k] * b[k * n + j];
            }
            out[i * n + j] = s;
        }
    }
}

fn apply_power_dyn(p: &[f64], w: &TransitionMatrix, h: f64, m: usize, ws: &mut Workspace) {
    let n = p.len();
    for (k, x) in ws.base.iter_mut().enumerate() {
        *x = h * w.raw()[k];
    }
    for i in 0..n {
        ws.base[i * n + i] += 1.0;
        for j in 0..n {
            ws.acc[i * n + j] = if i == j { 1.0 } else { 0.0 };
        }
    }
    let mut e = m;
    while e > 0 {
        if e & 1 == 1 {
            mat_mul(&ws.acc, &ws.base, &mut ws.tmp, n);
            std::mem::swap(&mut ws.acc, &mut ws.tmp);
        }
        e >>= 1;
        if e > 0 {
            mat_mul(&ws.base, &ws.base, &mut ws.tmp, n);
            std::mem::swap(&mut ws.base, &mut ws.tmp);
        }
    }
    for i in 0..n {
        ws.vec[i] = (0..n).map(|j| ws.acc[i * n + j] * p[j]).sum();
    }
}

fn mat_mul_fixed<const N: usize>(a: &[[f64; N]; N], b: &[[f64; N]; N]) -> [[f64; N]; N] {
    let mut out = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..N {
            let mut s = 0.0;
            for k in 0..N {
                s += a[i][k] * b[k][j];
            }
            out[i][j] = s;
        }
    }
    out
}

/// Same arithmetic as [`apply_power_dyn`] on stack arrays.
fn apply_power_fixed<const N: usize>(
    p: &[f64],
    w: &TransitionMatrix,
    h: f64,
    m: usize,
    out: &mut [f64],
) {
    let mut base = [[0.0; N]; N];
    let mut acc = [[0.0; N]; N];
    for (i, row) in w.raw().chunks_exact(N).enumerate() {
        for (b, x) in base[i].iter_mut().zip(row) {
            *b = h * x;
        }
        base[i][i] += 1.0;
        acc[i][i] = 1.0;
    }
    let mut e = m;
    while e > 0 {
        if e & 1 == 1 {
            acc = mat_mul_fixed(&acc, &base);
        }
        e >>= 1;
        if e > 0 {
            base = mat_mul_fixed(&base, &base);
        }
    }
    for i in 0..N {
        out[i] = (0..N).map(|j| acc[i][j] * p[j]).sum();
    }
}

/// Advances `p` over `dt`, sub-stepping when `substepping` is set and the
/// step would exceed the stability bound. Returns the sub-step count.
fn advance_in_place(
    p: &mut [f64],
    w: &TransitionMatrix,
    dt: f64,
    substepping: bool,
    ws: &mut Workspace,
) -> usize {
    let m = if substepping { substep_count(w, dt) } else { 1 };
    if m <= SQUARING_THRESHOLD {
        let h = dt / m as f64;
        for _ in 0..m {
            euler_in_place(p, w, h, &mut ws.vec);
        }
        return m;
    }
    // m sub-steps as (I + hW)^m by repeated squaring.
    let h = dt / m as f64;
    match p.len() {
        2 => apply_power_fixed::<2>(p, w, h, m, &mut ws.vec),
        4 => apply_power_fixed::<4>(p, w, h, m, &mut ws.vec),
        _ => apply_power_dyn(p, w, h, m, ws),
    }
    p.copy_from_slice(&ws.vec);
    clamp_renormalize(p);
    m
}

/// Advances `p` over one recorded step, sub-stepping as needed. Returns the
/// new vector and the number of sub-steps taken.
pub fn advance(
    p: &ProbabilityVector,
    w: &TransitionMatrix,
    dt: f64,
    substepping: bool,
) -> Result<(ProbabilityVector, usize)> {
    check_dt(dt)?;
    if p.len() != w.n_states() {
        return Err(Error::param("probability vector and matrix sizes differ"));
    }
    let mut out = p.as_slice().to_vec();
    let mut ws = Workspace::new(out.len());
    let m = advance_in_place(&mut out, w, dt, substepping, &mut ws);
    Ok((ProbabilityVector::from_raw(out), m))
}

fn select_index(p: &[f64], u: f64) -> usize {
    let n = p.len();
    let mut upper = 0.0;
    for (i, x) in p[..n - 1].iter().enumerate() {
        upper += x;
        if u < upper {
            return i;
        }
    }
    n - 1
}

/// Picks `x_i` such that `u` lies in `[sum_{j<i} P_j, sum_{j<=i} P_j)`; the
/// last interval also contains 1.
pub fn select_state(p_prev: &ProbabilityVector, u_prev: f64) -> Result<StateIndex> {
    if !(0.0..=1.0).contains(&u_prev) {
        return Err(Error::param(format!("selector {u_prev} outside [0, 1]")));
    }
    Ok(StateIndex::from_zero_based(select_index(
        p_prev.as_slice(),
        u_prev,
    )))
}

/// One-hot vector at the state just landed in.
pub fn jump_reset(new_state: StateIndex, n: usize) -> Result<ProbabilityVector> {
    ProbabilityVector::one_hot(new_state, n)
}

// ---------------------------------------------------------------------------
// Trajectories

/// Uniform sample grid `t_k = k dt`, `k = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    dt: f64,
    n_steps: usize,
}

impl TimeGrid {
    /// `n_steps = round(t_end / dt)`, at least 1.
    pub fn new(t_end: f64, dt: f64) -> Result<Self> {
        check_dt(dt)?;
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(Error::param(format!(
                "t_end must be finite and > 0, got {t_end}"
            )));
        }
        let steps = (t_end / dt).round();
        if steps > (usize::MAX / 2) as f64 {
            return Err(Error::param("t_end / dt is too large"));
        }
        Ok(TimeGrid {
            dt,
            n_steps: (steps as usize).max(1),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of samples, `n_steps + 1`.
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
}

/// Run settings shared by single trajectories and ensembles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationSettings {
    pub t_end: f64,
    pub dt: f64,
    /// `None` selects the device's highest-resistance state.
    pub initial_state: Option<StateIndex>,
    /// Automatic sub-stepping of stiff steps. Disable only for oracle
    /// comparisons.
    pub substepping: bool,
}

impl SimulationSettings {
    pub fn new(t_end: f64, dt: f64) -> Self {
        SimulationSettings {
            t_end,
            dt,
            initial_state: None,
            substepping: true,
        }
    }

    pub fn with_initial_state(mut self, state: StateIndex) -> Self {
        self.initial_state = Some(state);
        self
    }

    pub fn with_substepping(mut self, on: bool) -> Self {
        self.substepping = on;
        self
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.t_end, self.dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpEvent {
    /// Time of the first sample in the new state.
    pub time: f64,
    /// Index of that sample.
    pub step: usize,
    pub from_state: StateIndex,
    pub to_state: StateIndex,
    /// The selector `U_{k-1}` that produced the jump.
    pub u_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub v: f64,
    pub state: StateIndex,
    pub current: f64,
    pub probabilities: ProbabilityVector,
    pub u: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub dt: f64,
    pub samples: Vec<Sample>,
    pub jumps: Vec<JumpEvent>,
    pub seed: u64,
}

impl TrajectoryRecord {
    pub fn n_states(&self) -> usize {
        self.samples.first().map_or(0, |s| s.probabilities.len())
    }
}

/// Complete engine state after a recorded step. Restarting a [`Stepper`]
/// from a snapshot reproduces the remaining samples exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineState {
    step: usize,
    state: StateIndex,
    p: Vec<f64>,
    u: f64,
    v: f64,
    current: f64,
    rng: ChaCha8Rng,
}

impl EngineState {
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn state(&self) -> StateIndex {
        self.state
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn voltage(&self) -> f64 {
        self.v
    }

    pub fn current(&self) -> f64 {
        self.current
    }
}

/// Step-by-step trajectory driver. Holds sample `k` after `k` calls to
/// [`Stepper::step`].
#[derive(Debug, Clone)]
pub struct Stepper<'a, D: DeviceModel + ?Sized> {
    device: &'a D,
    waveform: &'a Waveform,
    grid: TimeGrid,
    substepping: bool,
    state: EngineState,
    rates: RateTable,
    w: TransitionMatrix,
    ws: Workspace,
}

fn check_current(current: f64, step: usize) -> Result<()> {
    if current.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric {
            step,
            what: format!("current ({current})"),
        })
    }
}

impl<'a, D: DeviceModel + ?Sized> Stepper<'a, D> {
    pub fn new(
        device: &'a D,
        waveform: &'a Waveform,
        settings: &SimulationSettings,
        seed: u64,
    ) -> Result<Self> {
        let grid = settings.grid()?;
        let n = device.n_states();
        let initial = settings
            .initial_state
            .unwrap_or_else(|| device.default_initial_state());
        let initial = StateIndex::new(initial.get(), n)?;
        let eta = device.conservation_rates();
        if eta.len() != n || eta.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::param("device conservation rates invalid"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = waveform.sample(0.0);
        let current = device.current(initial, v);
        check_current(current, 0)?;
        let mut p = vec![0.0; n];
        p[initial.index()] = 1.0;
        let u = rng.random::<f64>();
        Ok(Stepper {
            device,
            waveform,
            grid,
            substepping: settings.substepping,
            state: EngineState {
                step: 0,
                state: initial,
                p,
                u,
                v,
                current,
                rng,
            },
            rates: RateTable::zeros(n)?,
            w: TransitionMatrix::zeros(n),
            ws: Workspace::new(n),
        })
    }

    /// Continues from a snapshot taken with [`Stepper::snapshot`].
    pub fn resume(
        device: &'a D,
        waveform: &'a Waveform,
        settings: &SimulationSettings,
        snapshot: EngineState,
    ) -> Result<Self> {
        let mut stepper = Self::new(device, waveform, settings, 0)?;
        if snapshot.p.len() != device.n_states() {
            return Err(Error::param("snapshot does not match device"));
        }
        stepper.state = snapshot;
        Ok(stepper)
    }

    pub fn snapshot(&self) -> EngineState {
        self.state.clone()
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.grid.n_steps
    }

    pub fn sample(&self) -> Sample {
        let s = &self.state;
        Sample {
            t: self.grid.time(s.step),
            v: s.v,
            state: s.state,
            current: s.current,
            probabilities: ProbabilityVector::from_raw(s.p.clone()),
            u: s.u,
        }
    }

    /// Moves to the next recorded sample. Returns the jump that landed on it,
    /// if any. Calling past the end of the grid is a parameter error.
    pub fn step(&mut self) -> Result<Option<JumpEvent>> {
        if self.is_done() {
            return Err(Error::param("trajectory already complete"));
        }
        let k = self.state.step + 1;
        let t = self.grid.time(k);
        let v = self.waveform.sample(t);
        let prev = self.state.state;
        let next = StateIndex::from_zero_based(select_index(&self.state.p, self.state.u));
        let mut jump = None;
        if next != prev {
            jump = Some(JumpEvent {
                time: t,
                step: k,
                from_state: prev,
                to_state: next,
                u_value: self.state.u,
            });
            self.state.p.iter_mut().for_each(|x| *x = 0.0);
            self.state.p[next.index()] = 1.0;
        } else {
            self.device
                .fill_rate_table(v, &mut self.rates)
                .map_err(|e| match e {
                    Error::Parameter(msg) => Error::Parameter(format!("step {k}: {msg}")),
                    other => other,
                })?;
            fill_voltage_matrix(&self.rates, &mut self.w);
            add_conservation(
                self.device.conservation_rates()[next.index()],
                next.index(),
                &mut self.w,
            );
            advance_in_place(
                &mut self.state.p,
                &self.w,
                self.grid.dt,
                self.substepping,
                &mut self.ws,
            );
            if self.state.p.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric {
                    step: k,
                    what: "probability".into(),
                });
            }
        }
        let current = self.device.current(next, v);
        check_current(current, k)?;
        self.state.u = self.state.rng.random::<f64>();
        self.state.step = k;
        self.state.state = next;
        self.state.v = v;
        self.state.current = current;
        Ok(jump)
    }
}

/// Simulates one trajectory over `[0, t_end]` and records every sample.
pub fn simulate_trajectory<D: DeviceModel + ?Sized>(
    device: &D,
    waveform: &Waveform,
    settings: &SimulationSettings,
    seed: u64,
) -> Result<TrajectoryRecord> {
    let mut stepper = Stepper::new(device, waveform, settings, seed)?;
    let mut samples = Vec::with_capacity(stepper.grid().len());
    let mut jumps = Vec::new();
    samples.push(stepper.sample());
    while !stepper.is_done() {
        if let Some(j) = stepper.step()? {
            jumps.push(j);
        }
        samples.push(stepper.sample());
    }
    Ok(TrajectoryRecord {
        dt: stepper.grid().dt(),
        samples,
        jumps,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{make_binary_device, BinaryDeviceParams, ConstantRateDevice};
    use crate::waveform::WaveformSpec;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn s(i: usize) -> StateIndex {
        StateIndex(i)
    }

    fn pv(p: &[f64]) -> ProbabilityVector {
        ProbabilityVector::new(p.to_vec()).unwrap()
    }

    fn mat(rows: &[&[f64]]) -> TransitionMatrix {
        TransitionMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn voltage_matrix_examples() {
        let zero = assemble_voltage_matrix(&RateTable::zeros(2).unwrap()).unwrap();
        assert_eq!(zero, TransitionMatrix::zeros(2));

        let w = assemble_voltage_matrix(
            &RateTable::from_entries(2, &[(1, 2, 2.0), (2, 1, 1.0)]).unwrap(),
        )
        .unwrap();
        assert_eq!(w, mat(&[&[-2.0, 1.0], &[2.0, -1.0]]));

        let w =
            assemble_voltage_matrix(&RateTable::from_entries(4, &[(1, 2, 5.0)]).unwrap()).unwrap();
        let col0: Vec<f64> = (0..4).map(|i| w.at(i, 0)).collect();
        assert_eq!(col0, vec![-5.0, 5.0, 0.0, 0.0]);
        for j in 1..4 {
            assert!((0..4).all(|i| w.at(i, j) == 0.0));
        }
    }

    #[test]
    fn conservation_matrix_examples() {
        let w = assemble_conservation_matrix(&[1.5e6, 1.5e6], s(1)).unwrap();
        assert_eq!(w, mat(&[&[0.0, 1.5e6], &[0.0, -1.5e6]]));
        for c in [1, 2] {
            assert_eq!(
                assemble_conservation_matrix(&[0.0, 0.0], s(c)).unwrap(),
                TransitionMatrix::zeros(2)
            );
        }
        let w = assemble_conservation_matrix(&[3e8; 4], s(3)).unwrap();
        for j in 0..4 {
            for i in 0..4 {
                let expected = match (i, j) {
                    (_, 2) => 0.0,
                    (i, j) if i == j => -3e8,
                    (2, _) => 3e8,
                    _ => 0.0,
                };
                assert_eq!(w.at(i, j), expected, "({i},{j})");
            }
        }
        assert!(assemble_conservation_matrix(&[1.0, -1.0], s(1)).is_err());
        assert!(assemble_conservation_matrix(&[1.0, 1.0], s(3)).is_err());
    }

    #[test]
    fn euler_step_examples() {
        let p = pv(&[0.3, 0.7]);
        assert_eq!(euler_step(&p, &TransitionMatrix::zeros(2), 0.5).unwrap(), p);

        let w = mat(&[&[-2.0, 1.0], &[2.0, -1.0]]);
        let next = euler_step(&pv(&[1.0, 0.0]), &w, 0.1).unwrap();
        assert_abs_diff_eq!(next.as_slice()[0], 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(next.as_slice()[1], 0.2, epsilon = 1e-15);

        assert!(euler_step(&p, &w, 0.0).is_err());
        assert!(euler_step(&p, &w, -1.0).is_err());
    }

    #[test]
    fn euler_step_clamps_unstable_steps() {
        let w = mat(&[&[-50.0, 0.0], &[50.0, 0.0]]);
        let next = euler_step(&pv(&[1.0, 0.0]), &w, 1.0).unwrap();
        assert_eq!(next.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn select_state_examples() {
        assert_eq!(select_state(&pv(&[1.0, 0.0]), 0.37).unwrap(), s(1));
        assert_eq!(select_state(&pv(&[0.25, 0.75]), 0.25).unwrap(), s(2));
        assert_eq!(select_state(&pv(&[0.5, 0.5]), 1.0).unwrap(), s(2));
        assert_eq!(select_state(&pv(&[0.5, 0.5]), 0.0).unwrap(), s(1));
        assert!(select_state(&pv(&[0.5, 0.5]), 1.01).is_err());
        assert!(select_state(&pv(&[0.5, 0.5]), -0.01).is_err());
    }

    #[test]
    fn jump_reset_examples() {
        assert_eq!(
            jump_reset(s(2), 4).unwrap().as_slice(),
            &[0.0, 1.0, 0.0, 0.0]
        );
        assert_eq!(jump_reset(s(1), 2).unwrap().as_slice(), &[1.0, 0.0]);
        assert_eq!(
            jump_reset(s(4), 4).unwrap().as_slice(),
            &[0.0, 0.0, 0.0, 1.0]
        );
        assert!(jump_reset(s(3), 2).is_err());
    }

    #[test]
    fn substep_count_respects_bound() {
        let w = mat(&[&[-1e6, 0.0], &[1e6, 0.0]]);
        assert_eq!(substep_count(&w, 1e-7), 1);
        assert_eq!(substep_count(&w, 1e-6), 10);
        let (p, m) = advance(&pv(&[1.0, 0.0]), &w, 1e-6, true).unwrap();
        assert_eq!(m, 10);
        assert_abs_diff_eq!(p.as_slice()[0], 0.9f64.powi(10), epsilon = 1e-15);
    }

    #[test]
    fn squaring_matches_sequential_substeps() {
        // Two-state relaxation: P_on after m sub-steps of size h is
        // P* (1 - (1 - (w + eta) h)^m).
        let (rate, eta) = (3.0e4, 1.0e4);
        let w = mat(&[&[-eta, rate], &[eta, -rate]]);
        let dt = 1e-3;
        let (p, m) = advance(&pv(&[0.0, 1.0]), &w, dt, true).unwrap();
        assert_eq!(m, 300);
        let h = dt / m as f64;
        let expected = rate / (rate + eta) * (1.0 - (1.0 - (rate + eta) * h).powi(m as i32));
        assert_abs_diff_eq!(p.as_slice()[0], expected, epsilon = 1e-13);
    }

    #[test]
    fn frozen_device_never_jumps() {
        let d = ConstantRateDevice::new(RateTable::zeros(3).unwrap(), vec![0.0; 3], vec![1.0; 3])
            .unwrap();
        let wf = Waveform::new(WaveformSpec::sinusoid(1.0, 5.0)).unwrap();
        let rec = simulate_trajectory(&d, &wf, &SimulationSettings::new(1.0, 1e-3), 9).unwrap();
        assert!(rec.jumps.is_empty());
        assert!(rec.samples.iter().all(|s| s.state == StateIndex(3)));
        assert_eq!(rec.samples.len(), 1001);
    }

    #[test]
    fn same_seed_same_trajectory() {
        let d = make_binary_device(BinaryDeviceParams::default()).unwrap();
        let wf = Waveform::new(WaveformSpec::sinusoid(1.5, 10.0)).unwrap();
        let settings = SimulationSettings::new(0.3, 1e-2);
        let a = simulate_trajectory(&d, &wf, &settings, 42).unwrap();
        let b = simulate_trajectory(&d, &wf, &settings, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_trajectory(&d, &wf, &settings, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn non_finite_current_reports_step() {
        let d = ConstantRateDevice::new(
            RateTable::zeros(2).unwrap(),
            vec![0.0; 2],
            vec![1e308, 1e308],
        )
        .unwrap();
        let wf = Waveform::new(WaveformSpec::PiecewiseLinear {
            points: vec![(0.0, 0.0), (1.0, 0.0), (2.0, 100.0)],
        })
        .unwrap();
        let err = simulate_trajectory(&d, &wf, &SimulationSettings::new(2.0, 0.5), 1).unwrap_err();
        assert_eq!(
            err,
            Error::Numeric {
                step: 3,
                what: "current (inf)".into()
            }
        );
    }

    #[test]
    fn rejects_bad_settings() {
        let d = make_binary_device(BinaryDeviceParams::default()).unwrap();
        let wf = Waveform::new(WaveformSpec::constant(1.0)).unwrap();
        assert!(simulate_trajectory(&d, &wf, &SimulationSettings::new(0.0, 1e-3), 1).is_err());
        assert!(simulate_trajectory(&d, &wf, &SimulationSettings::new(1.0, 0.0), 1).is_err());
        let bad_start = SimulationSettings::new(1.0, 0.1).with_initial_state(StateIndex(3));
        assert!(simulate_trajectory(&d, &wf, &bad_start, 1).is_err());
    }

    #[test]
    fn jump_samples_are_one_hot() {
        let d = make_binary_device(BinaryDeviceParams::default()).unwrap();
        let wf = Waveform::new(WaveformSpec::sinusoid(1.5, 10.0)).unwrap();
        let rec = simulate_trajectory(&d, &wf, &SimulationSettings::new(2.0, 1e-2), 5).unwrap();
        assert!(!rec.jumps.is_empty());
        for j in &rec.jumps {
            let sample = &rec.samples[j.step];
            assert_eq!(sample.state, j.to_state);
            assert_eq!(rec.samples[j.step - 1].state, j.from_state);
            assert_eq!(sample.probabilities.get(j.to_state), 1.0);
            assert_eq!(sample.t, j.time);
        }
        let changes = rec
            .samples
            .windows(2)
            .filter(|w| w[0].state != w[1].state)
            .count();
        assert_eq!(changes, rec.jumps.len());
    }

    #[test]
    fn resume_from_snapshot_reproduces_tail() {
        let d = make_binary_device(BinaryDeviceParams::default()).unwrap();
        let wf = Waveform::new(WaveformSpec::sinusoid(1.5, 10.0)).unwrap();
        let settings = SimulationSettings::new(1.0, 1e-2);
        let full = simulate_trajectory(&d, &wf, &settings, 77).unwrap();
        for cut in [0, 1, 17, 55, 99] {
            let mut stepper = Stepper::new(&d, &wf, &settings, 77).unwrap();
            for _ in 0..cut {
                stepper.step().unwrap();
            }
            let mut resumed = Stepper::resume(&d, &wf, &settings, stepper.snapshot()).unwrap();
            let mut k = cut;
            assert_eq!(resumed.sample(), full.samples[k]);
            while !resumed.is_done() {
                resumed.step().unwrap();
                k += 1;
                assert_eq!(resumed.sample(), full.samples[k]);
            }
        }
    }

    fn arb_rates(n: usize) -> impl Strategy<Value = RateTable> {
        proptest::collection::vec(prop_oneof![Just(0.0), 1e-3f64..1e9], n * n).prop_map(
            move |raw| {
                let mut t = RateTable::zeros(n).unwrap();
                for i in 0..n {
                    for j in 0..n {
                        if i != j {
                            t.set(StateIndex(i + 1), StateIndex(j + 1), raw[i * n + j])
                                .unwrap();
                        }
                    }
                }
                t
            },
        )
    }

    fn arb_prob(n: usize) -> impl Strategy<Value = ProbabilityVector> {
        proptest::collection::vec(0.0f64..1.0, n).prop_filter_map("zero mass", |raw| {
            let s: f64 = raw.iter().sum();
            (s > 1e-6).then(|| {
                let mut p: Vec<f64> = raw.iter().map(|x| x / s).collect();
                clamp_renormalize(&mut p);
                ProbabilityVector::from_raw(p)
            })
        })
    }

    proptest! {
        #[test]
        fn assembled_matrices_are_generators(
            (rates, eta, c) in (2usize..6).prop_flat_map(|n| (arb_rates(n), proptest::collection::vec(0.0f64..1e9, n), 1..=n))
        ) {
            let wv = assemble_voltage_matrix(&rates).unwrap();
            let wx = assemble_conservation_matrix(&eta, StateIndex(c)).unwrap();
            let w = assemble_generator(&rates, &eta, StateIndex(c)).unwrap();
            for m in [&wv, &wx, &w] {
                m.check_generator(1e-12).unwrap();
                prop_assert!(m.column_sums().iter().all(|s| *s == 0.0));
            }
        }

        #[test]
        fn advance_conserves_probability(
            (p, rates, eta, c) in (2usize..5).prop_flat_map(|n| (arb_prob(n), arb_rates(n), proptest::collection::vec(0.0f64..1e9, n), 1..=n)),
            dt in 1e-9f64..1.0,
            substepping in prop::bool::ANY,
        ) {
            let w = assemble_generator(&rates, &eta, StateIndex(c)).unwrap();
            let (next, _) = advance(&p, &w, dt, substepping).unwrap();
            let sum: f64 = next.as_slice().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            prop_assert!(next.as_slice().iter().all(|x| (0.0..=1.0).contains(x)));
        }

        #[test]
        fn stable_euler_step_needs_no_clamp(
            (p, rates) in (2usize..5).prop_flat_map(|n| (arb_prob(n), arb_rates(n))),
        ) {
            let w = assemble_voltage_matrix(&rates).unwrap();
            let outflow = w.max_outflow();
            prop_assume!(outflow > 0.0);
            let dt = STABILITY_BOUND / outflow;
            let n = p.len();
            let raw: Vec<f64> = (0..n)
                .map(|i| p.as_slice()[i] + dt * (0..n).map(|j| w.at(i, j) * p.as_slice()[j]).sum::<f64>())
                .collect();
            prop_assert!(raw.iter().all(|x| *x >= -1e-15), "{:?}", raw);
        }

        #[test]
        fn selection_matches_interval_rule(p in (2usize..6).prop_flat_map(arb_prob), u in 0.0f64..=1.0) {
            let k = select_state(&p, u).unwrap().index();
            let lower: f64 = p.as_slice()[..k].iter().sum();
            let upper: f64 = p.as_slice()[..=k].iter().sum();
            prop_assert!(u >= lower - 1e-15);
            if k + 1 < p.len() { prop_assert!(u < upper); }
        }
    }
}
