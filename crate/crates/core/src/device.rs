//! Device parameterizations: switching-time laws, conservation rates and
//! conductance laws.
//!
//! Switching-time laws are evaluated at `|v|`. Polarity only decides whether
//! a transition is enabled at all: a disabled transition has an infinite
//! switching time, i.e. rate 0.

use crate::error::{Error, Result};
use crate::types::{RateTable, StateIndex};

/// A finite-state device as seen by the master-equation engine.
pub trait DeviceModel {
    fn n_states(&self) -> usize;

    /// Rate `w[from][to]` in 1/s at voltage `v`. Zero means the transition is
    /// disabled.
    fn transition_rate(&self, from: StateIndex, to: StateIndex, v: f64) -> f64;

    /// Conservation rates `eta_i`, one per state, in 1/s.
    fn conservation_rates(&self) -> &[f64];

    /// Current in amperes through the device in `state` at voltage `v`.
    fn current(&self, state: StateIndex, v: f64) -> f64;

    /// The highest-resistance state.
    fn default_initial_state(&self) -> StateIndex;

    /// Switching time in seconds; infinite when the transition is disabled.
    fn switching_time(&self, from: StateIndex, to: StateIndex, v: f64) -> f64 {
        let rate = self.transition_rate(from, to, v);
        if rate > 0.0 {
            1.0 / rate
        } else {
            f64::INFINITY
        }
    }

    /// Fills `table` with the rates at `v`.
    fn fill_rate_table(&self, v: f64, table: &mut RateTable) -> Result<()> {
        let n = self.n_states();
        if table.n_states() != n {
            return Err(Error::param("rate table size does not match device"));
        }
        let raw = table.raw_mut();
        for i in 0..n {
            for j in 0..n {
                raw[i * n + j] = if i == j {
                    0.0
                } else {
                    self.transition_rate(
                        StateIndex::from_zero_based(i),
                        StateIndex::from_zero_based(j),
                        v,
                    )
                };
            }
        }
        if let Some(bad) = raw.iter().find(|r| !r.is_finite() || **r < 0.0) {
            return Err(Error::param(format!(
                "device produced rate {bad} at v = {v}"
            )));
        }
        Ok(())
    }

    fn rate_table(&self, v: f64) -> Result<RateTable> {
        let mut table = RateTable::zeros(self.n_states())?;
        self.fill_rate_table(v, &mut table)?;
        Ok(table)
    }
}

impl<D: DeviceModel + ?Sized> DeviceModel for &D {
    fn n_states(&self) -> usize {
        (**self).n_states()
    }

    fn transition_rate(&self, from: StateIndex, to: StateIndex, v: f64) -> f64 {
        (**self).transition_rate(from, to, v)
    }

    fn conservation_rates(&self) -> &[f64] {
        (**self).conservation_rates()
    }

    fn current(&self, state: StateIndex, v: f64) -> f64 {
        (**self).current(state, v)
    }

    fn default_initial_state(&self) -> StateIndex {
        (**self).default_initial_state()
    }

    fn switching_time(&self, from: StateIndex, to: StateIndex, v: f64) -> f64 {
        (**self).switching_time(from, to, v)
    }

    fn fill_rate_table(&self, v: f64, table: &mut RateTable) -> Result<()> {
        (**self).fill_rate_table(v, table)
    }
}

/// `1 / t`, with an infinite switching time mapped to rate 0.
pub fn rate_from_switching_time(t: f64) -> f64 {
    if t.is_infinite() {
        0.0
    } else {
        1.0 / t
    }
}

fn require_positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!(
            "{name} must be finite and > 0, got {x}"
        )))
    }
}

// ---------------------------------------------------------------------------
// Binary device

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryDirection {
    /// Off -> on, enabled for `v > 0`.
    Set,
    /// On -> off, enabled for `v < 0`.
    Reset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryState {
    On,
    Off,
}

impl BinaryState {
    /// State ordering is (on, off).
    pub fn index(self) -> StateIndex {
        match self {
            BinaryState::On => StateIndex(1),
            BinaryState::Off => StateIndex(2),
        }
    }
}

/// Two-state device with Poisson-like switching `t = alpha / exp(|v| / beta)`
/// and ohmic conduction in both states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryDeviceParams {
    pub alpha_set: f64,
    pub alpha_rst: f64,
    pub beta_set: f64,
    pub beta_rst: f64,
    pub eta_on: f64,
    pub eta_off: f64,
    pub r_on: f64,
    pub r_off: f64,
}

impl Default for BinaryDeviceParams {
    fn default() -> Self {
        BinaryDeviceParams {
            alpha_set: 3e5,
            alpha_rst: 3e5,
            beta_set: 0.05,
            beta_rst: 0.05,
            eta_on: 1.5e6,
            eta_off: 1.5e6,
            r_on: 1e3,
            r_off: 1e5,
        }
    }
}

impl BinaryDeviceParams {
    pub fn validate(&self) -> Result<()> {
        for (name, x) in [
            ("alpha_set", self.alpha_set),
            ("alpha_rst", self.alpha_rst),
            ("beta_set", self.beta_set),
            ("beta_rst", self.beta_rst),
            ("eta_on", self.eta_on),
            ("eta_off", self.eta_off),
            ("r_on", self.r_on),
            ("r_off", self.r_off),
        ] {
            require_positive(name, x)?;
        }
        if self.r_on >= self.r_off {
            return Err(Error::param(format!(
                "r_on ({}) must be below r_off ({})",
                self.r_on, self.r_off
            )));
        }
        Ok(())
    }
}

/// Switching time of the binary device, infinite when polarity disables the
/// direction (set needs `v > 0`, reset needs `v < 0`).
pub fn binary_switching_time(
    v: f64,
    params: &BinaryDeviceParams,
    direction: BinaryDirection,
) -> f64 {
    let (enabled, alpha, beta) = match direction {
        BinaryDirection::Set => (v > 0.0, params.alpha_set, params.beta_set),
        BinaryDirection::Reset => (v < 0.0, params.alpha_rst, params.beta_rst),
    };
    if enabled {
        alpha / (v.abs() / beta).exp()
    } else {
        f64::INFINITY
    }
}

/// Rate table in (on, off) ordering: `w[off][on]` is the set rate and
/// `w[on][off]` the reset rate.
pub fn binary_rate_table(v: f64, params: &BinaryDeviceParams) -> RateTable {
    let mut table = RateTable::zeros(2).expect("two states");
    let raw = table.raw_mut();
    // Row-major (from, to): off -> on at [2], on -> off at [1].
    raw[2] = rate_from_switching_time(binary_switching_time(v, params, BinaryDirection::Set));
    raw[1] = rate_from_switching_time(binary_switching_time(v, params, BinaryDirection::Reset));
    table
}

/// Ohmic current `v / R_state`.
pub fn binary_current(state: BinaryState, v: f64, params: &BinaryDeviceParams) -> f64 {
    match state {
        BinaryState::On => v / params.r_on,
        BinaryState::Off => v / params.r_off,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDevice {
    params: BinaryDeviceParams,
    eta: [f64; 2],
}

pub fn make_binary_device(params: BinaryDeviceParams) -> Result<BinaryDevice> {
    params.validate()?;
    Ok(BinaryDevice {
        params,
        eta: [params.eta_on, params.eta_off],
    })
}

impl BinaryDevice {
    pub fn params(&self) -> &BinaryDeviceParams {
        &self.params
    }
}

impl DeviceModel for BinaryDevice {
    fn n_states(&self) -> usize {
        2
    }

    fn transition_rate(&self, from: StateIndex, to: StateIndex, v: f64) -> f64 {
        let direction = match (from.get(), to.get()) {
            (2, 1) => BinaryDirection::Set,
            (1, 2) => BinaryDirection::Reset,
            _ => return 0.0,
        };
        rate_from_switching_time(binary_switching_time(v, &self.params, direction))
    }

    fn conservation_rates(&self) -> &[f64] {
        &self.eta
    }

    fn current(&self, state: StateIndex, v: f64) -> f64 {
        let s = if state.get() == 1 {
            BinaryState::On
        } else {
            BinaryState::Off
        };
        binary_current(s, v, &self.params)
    }

    fn default_initial_state(&self) -> StateIndex {
        BinaryState::Off.index()
    }
}

// ---------------------------------------------------------------------------
// Four-state (2-bit) device

/// Switching-time prefactors for the six adjacent transitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadGammas {
    pub g12: f64,
    pub g23: f64,
    pub g34: f64,
    pub g43: f64,
    pub g32: f64,
    pub g21: f64,
}

impl QuadGammas {
    /// Prefactor for `from -> to`, `None` for non-adjacent pairs.
    pub fn get(&self, from: usize, to: usize) -> Option<f64> {
        match (from, to) {
            (1, 2) => Some(self.g12),
            (2, 3) => Some(self.g23),
            (3, 4) => Some(self.g34),
            (4, 3) => Some(self.g43),
            (3, 2) => Some(self.g32),
            (2, 1) => Some(self.g21),
            _ => None,
        }
    }

    pub fn entries(&self) -> [((usize, usize), f64); 6] {
        [
            ((1, 2), self.g12),
            ((2, 3), self.g23),
            ((3, 4), self.g34),
            ((4, 3), self.g43),
            ((3, 2), self.g32),
            ((2, 1), self.g21),
        ]
    }
}

/// Four-state device: Schottky emission in states 1-3, ohmic in state 4.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadDeviceParams {
    pub gamma: QuadGammas,
    pub eta: [f64; 4],
    /// Amperes for states 1-3, siemens for state 4.
    pub zeta: [f64; 4],
}

impl Default for QuadDeviceParams {
    fn default() -> Self {
        QuadDeviceParams {
            gamma: QuadGammas {
                g12: 0.263,
                g23: 1.155,
                g34: 19.11,
                g43: 9.15e-4,
                g32: 3.06e-2,
                g21: 0.578,
            },
            eta: [3e8; 4],
            zeta: [1e-7, 1e-6, 1e-5, 1e-3],
        }
    }
}

impl QuadDeviceParams {
    pub fn validate(&self) -> Result<()> {
        for ((i, j), g) in self.gamma.entries() {
            require_positive(&format!("gamma_{i}{j}"), g)?;
        }
        for (k, x) in self.eta.iter().enumerate() {
            require_positive(&format!("eta_{}", k + 1), *x)?;
        }
        for (k, x) in self.zeta.iter().enumerate() {
            require_positive(&format!("zeta_{}", k + 1), *x)?;
        }
        Ok(())
    }
}

/// Switching time `from -> to`. Finite only for adjacent states with the
/// enabling polarity: upward (toward state 4) needs `v > 0`, downward `v < 0`.
pub fn quad_switching_time(
    from: StateIndex,
    to: StateIndex,
    v: f64,
    params: &QuadDeviceParams,
) -> f64 {
    let (i, j) = (from.get(), to.get());
    let Some(gamma) = params.gamma.get(i, j) else {
        return f64::INFINITY;
    };
    let enabled = if j > i { v > 0.0 } else { v < 0.0 };
    if !enabled {
        return f64::INFINITY;
    }
    let a = v.abs();
    if i == 4 {
        gamma / (a * a)
    } else {
        gamma / (a * a.sqrt().exp())
    }
}

/// State current. States 1-3 use the zero-anchored Schottky form
/// `sign(v) zeta (exp(sqrt|v|) - 1)`; state 4 is ohmic `zeta v`.
pub fn quad_current(state: StateIndex, v: f64, params: &QuadDeviceParams) -> f64 {
    let zeta = params.zeta[state.index()];
    if state.get() == 4 {
        zeta * v
    } else {
        v.signum() * zeta * v.abs().sqrt().exp_m1()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadDevice {
    params: QuadDeviceParams,
}

pub fn make_quad_device(params: QuadDeviceParams) -> Result<QuadDevice> {
    params.validate()?;
    Ok(QuadDevice { params })
}

impl QuadDevice {
    pub fn params(&self) -> &QuadDeviceParams {
        &self.params
    }
}

impl DeviceModel for QuadDevice {
    fn n_states(&self) -> usize {
        4
    }

    fn transition_rate(&self, from: StateIndex, to: StateIndex, v: f64) -> f64 {
        rate_from_switching_time(quad_switching_time(from, to, v, &self.params))
    }

    fn conservation_rates(&self) -> &[f64] {
        &self.params.eta
    }

    fn current(&self, state: StateIndex, v: f64) -> f64 {
        quad_current(state, v, &self.params)
    }

    fn default_initial_state(&self) -> StateIndex {
        StateIndex(1)
    }
}

// ---------------------------------------------------------------------------
// Constant-rate device

/// Voltage-independent rates with a fixed per-state conductance. Used for
/// oracle comparisons and as a building block in tests.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantRateDevice {
    rates: RateTable,
    eta: Vec<f64>,
    conductance: Vec<f64>,
    initial: StateIndex,
}

impl ConstantRateDevice {
    pub fn new(rates: RateTable, eta: Vec<f64>, conductance: Vec<f64>) -> Result<Self> {
        let n = rates.n_states();
        if eta.len() != n || conductance.len() != n {
            return Err(Error::param("eta and conductance need one entry per state"));
        }
        if let Some(bad) = eta.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
            return Err(Error::param(format!(
                "conservation rate must be >= 0, got {bad}"
            )));
        }
        if conductance.iter().any(|g| !g.is_finite()) {
            return Err(Error::param("conductance must be finite"));
        }
        Ok(ConstantRateDevice {
            rates,
            eta,
            conductance,
            initial: StateIndex(n),
        })
    }

    pub fn with_initial_state(mut self, state: StateIndex) -> Result<Self> {
        self.initial = StateIndex::new(state.get(), self.rates.n_states())?;
        Ok(self)
    }

    pub fn rates(&self) -> &RateTable {
        &self.rates
    }
}

impl DeviceModel for ConstantRateDevice {
    fn n_states(&self) -> usize {
        self.rates.n_states()
    }

    fn transition_rate(&self, from: StateIndex, to: StateIndex, _v: f64) -> f64 {
        if from == to {
            0.0
        } else {
            self.rates.get(from, to)
        }
    }

    fn conservation_rates(&self) -> &[f64] {
        &self.eta
    }

    fn current(&self, state: StateIndex, v: f64) -> f64 {
        self.conductance[state.index()] * v
    }

    fn default_initial_state(&self) -> StateIndex {
        self.initial
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{assemble_conservation_matrix, assemble_voltage_matrix};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn s(i: usize) -> StateIndex {
        StateIndex(i)
    }

    #[test]
    fn binary_switching_time_examples() {
        let p = BinaryDeviceParams::default();
        let t = binary_switching_time(1.5, &p, BinaryDirection::Set);
        assert_relative_eq!(t, 3e5 / 30f64.exp(), max_relative = 1e-14);
        assert_relative_eq!(t, 2.807e-8, max_relative = 1e-3);
        assert!(binary_switching_time(0.0, &p, BinaryDirection::Set).is_infinite());
        assert!(binary_switching_time(0.0, &p, BinaryDirection::Reset).is_infinite());
        let t = binary_switching_time(-1.0, &p, BinaryDirection::Reset);
        assert_relative_eq!(t, 6.18e-4, max_relative = 1e-3);
        assert!(binary_switching_time(-1.0, &p, BinaryDirection::Set).is_infinite());
        assert!(binary_switching_time(1.0, &p, BinaryDirection::Reset).is_infinite());
    }

    #[test]
    fn binary_rate_table_examples() {
        let p = BinaryDeviceParams::default();
        let (on, off) = (s(1), s(2));
        let zero = binary_rate_table(0.0, &p);
        assert_eq!((zero.get(off, on), zero.get(on, off)), (0.0, 0.0));
        let pos = binary_rate_table(1.5, &p);
        assert_relative_eq!(pos.get(off, on), 3.563e7, max_relative = 1e-3);
        assert_eq!(pos.get(on, off), 0.0);
        let neg = binary_rate_table(-1.5, &p);
        assert_relative_eq!(neg.get(on, off), 3.563e7, max_relative = 1e-3);
        assert_eq!(neg.get(off, on), 0.0);
    }

    #[test]
    fn binary_current_examples() {
        let p = BinaryDeviceParams::default();
        assert_relative_eq!(binary_current(BinaryState::On, 0.5, &p), 5e-4);
        assert_relative_eq!(binary_current(BinaryState::Off, 0.5, &p), 5e-6);
        assert_eq!(binary_current(BinaryState::On, 0.0, &p), 0.0);
        assert_eq!(binary_current(BinaryState::Off, 0.0, &p), 0.0);
    }

    #[test]
    fn quad_switching_time_examples() {
        let p = QuadDeviceParams::default();
        for v in [-2.0, -0.5, 0.0, 0.5, 2.0] {
            assert!(quad_switching_time(s(1), s(3), v, &p).is_infinite());
            assert!(quad_switching_time(s(4), s(1), v, &p).is_infinite());
        }
        let t = quad_switching_time(s(1), s(2), 1.0, &p);
        assert_relative_eq!(t, 0.263 / 1f64.exp(), max_relative = 1e-14);
        assert_relative_eq!(t, 9.675e-2, max_relative = 1e-3);
        assert_relative_eq!(
            quad_switching_time(s(4), s(3), -1.0, &p),
            9.15e-4,
            max_relative = 1e-14
        );
        assert!(quad_switching_time(s(1), s(2), -1.0, &p).is_infinite());
        assert!(quad_switching_time(s(4), s(3), 1.0, &p).is_infinite());
    }

    #[test]
    fn quad_current_examples() {
        let p = QuadDeviceParams::default();
        for i in 1..=4 {
            assert_eq!(quad_current(s(i), 0.0, &p), 0.0);
        }
        assert_relative_eq!(quad_current(s(4), 0.5, &p), 5e-4);
        assert_relative_eq!(
            quad_current(s(2), 1.0, &p),
            1e-6 * (1f64.exp() - 1.0),
            max_relative = 1e-14
        );
        assert_relative_eq!(quad_current(s(2), 1.0, &p), 1.718e-6, max_relative = 1e-3);
        assert_relative_eq!(quad_current(s(2), -1.0, &p), -1.718e-6, max_relative = 1e-3);
    }

    #[test]
    fn make_device_validates() {
        let base = BinaryDeviceParams::default();
        assert!(make_binary_device(BinaryDeviceParams { r_on: 1e6, ..base }).is_err());
        assert!(make_binary_device(BinaryDeviceParams {
            beta_set: -1.0,
            ..base
        })
        .is_err());
        let mut q = QuadDeviceParams::default();
        q.gamma.g32 = 0.0;
        assert!(make_quad_device(q).is_err());
    }

    #[test]
    fn binary_device_rate_table_at_zero_is_zero() {
        let d = make_binary_device(BinaryDeviceParams::default()).unwrap();
        assert_eq!(d.rate_table(0.0).unwrap(), RateTable::zeros(2).unwrap());
        assert_eq!(d.default_initial_state(), BinaryState::Off.index());
    }

    #[test]
    fn quad_device_upward_matrix_has_three_entries() {
        let d = make_quad_device(QuadDeviceParams::default()).unwrap();
        let w = assemble_voltage_matrix(&d.rate_table(1.0).unwrap()).unwrap();
        let mut nonzero = vec![];
        for i in 0..4 {
            for j in 0..4 {
                if i != j && w.at(i, j) != 0.0 {
                    nonzero.push((j + 1, i + 1));
                }
            }
        }
        nonzero.sort();
        assert_eq!(nonzero, vec![(1, 2), (2, 3), (3, 4)]);
    }

    #[test]
    fn quad_conservation_delegates() {
        let d = make_quad_device(QuadDeviceParams::default()).unwrap();
        let a = assemble_conservation_matrix(d.conservation_rates(), s(2)).unwrap();
        let b = assemble_conservation_matrix(&[3e8; 4], s(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn quad_levels_are_separated_at_one_volt() {
        let p = QuadDeviceParams::default();
        let i3 = quad_current(s(3), 1.0, &p).abs();
        let i4 = quad_current(s(4), 1.0, &p).abs();
        assert!(i4 >= 10.0 * i3);
    }

    fn all_rates(d: &dyn DeviceModel, v: f64) -> Vec<(usize, usize, f64)> {
        let n = d.n_states();
        let mut out = vec![];
        for i in 1..=n {
            for j in 1..=n {
                if i != j {
                    out.push((i, j, d.transition_rate(s(i), s(j), v)));
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn polarity_gating(v in -5.0f64..5.0) {
            let b = make_binary_device(BinaryDeviceParams::default()).unwrap();
            let q = make_quad_device(QuadDeviceParams::default()).unwrap();
            for d in [&b as &dyn DeviceModel, &q] {
                for (i, j, r) in all_rates(d, v) {
                    // Binary: 2 -> 1 is upward (set). Quad: j > i is upward.
                    let upward = if d.n_states() == 2 { i == 2 } else { j > i };
                    if v >= 0.0 && !upward { prop_assert_eq!(r, 0.0); }
                    if v <= 0.0 && upward { prop_assert_eq!(r, 0.0); }
                }
            }
        }

        #[test]
        fn quad_adjacency(v in -50.0f64..50.0) {
            let q = make_quad_device(QuadDeviceParams::default()).unwrap();
            for (i, j, r) in all_rates(&q, v) {
                if i.abs_diff(j) != 1 { prop_assert_eq!(r, 0.0); }
            }
        }

        #[test]
        fn enabled_rates_increase_with_magnitude(a in 0.01f64..3.0, da in 0.001f64..1.0, sign in prop::bool::ANY) {
            let sg = if sign { 1.0 } else { -1.0 };
            let b = make_binary_device(BinaryDeviceParams::default()).unwrap();
            let q = make_quad_device(QuadDeviceParams::default()).unwrap();
            for d in [&b as &dyn DeviceModel, &q] {
                let lo = all_rates(d, sg * a);
                let hi = all_rates(d, sg * (a + da));
                for ((i, j, r0), (_, _, r1)) in lo.into_iter().zip(hi) {
                    if r0 > 0.0 { prop_assert!(r1 > r0, "{}->{} {} {}", i, j, r0, r1); }
                }
            }
        }

        #[test]
        fn quad_level_ordering(v in prop_oneof![-5.0f64..-0.01, 0.01f64..5.0]) {
            let p = QuadDeviceParams::default();
            let mags: Vec<f64> = (1..=4).map(|i| quad_current(s(i), v, &p).abs()).collect();
            prop_assert!(mags.windows(2).all(|w| w[1] > w[0]), "{:?}", mags);
        }
    }
}
