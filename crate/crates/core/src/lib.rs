//! Stochastic multi-state resistive-switching devices modeled as Markov jump
//! processes.
//!
//! A device with `N` states carries a probability vector `P` that evolves
//! under a finite-state master equation `dP/dt = W P`. The generator `W` is
//! the sum of a voltage-driven part built from switching times and a
//! conservation part that pulls probability toward the occupied state. At
//! every step a uniform draw selects the next state from `P`; after a jump
//! `P` is reset to one-hot.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod device;
pub mod engine;
pub mod error;
pub mod harness;
pub mod oracle;
pub mod types;
pub mod waveform;

pub use device::{
    binary_current, binary_rate_table, binary_switching_time, make_binary_device, make_quad_device,
    quad_current, quad_switching_time, BinaryDevice, BinaryDeviceParams, BinaryDirection,
    BinaryState, ConstantRateDevice, DeviceModel, QuadDevice, QuadDeviceParams, QuadGammas,
};
pub use engine::{
    advance, assemble_conservation_matrix, assemble_generator, assemble_voltage_matrix, euler_step,
    jump_reset, select_state, simulate_trajectory, EngineState, JumpEvent, Sample,
    SimulationSettings, Stepper, TimeGrid, TrajectoryRecord, STABILITY_BOUND,
};
pub use error::{Error, Result};
pub use harness::{
    derive_seed, ensemble_mean_current, loop_and_period_metrics, run_ensemble,
    switching_time_stats, EnsembleConfig, EnsembleResult, Execution, PeriodMetrics, SwitchingStats,
    Transition,
};
pub use types::{ProbabilityVector, RateTable, StateIndex, TransitionMatrix};
pub use waveform::{sample_waveform, Waveform, WaveformSpec};
