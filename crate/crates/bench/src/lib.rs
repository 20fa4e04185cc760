//! Shared fixtures for the benchmarks.

pub use memjump_core::*;

/// Binary device with default parameters under a 1.5 V, 10 Hz sinusoid.
pub fn binary_fixture() -> (BinaryDevice, Waveform) {
    let device = make_binary_device(BinaryDeviceParams::default()).expect("default parameters");
    let wf = Waveform::new(WaveformSpec::sinusoid(1.5, 10.0)).expect("valid sinusoid");
    (device, wf)
}

/// Four-state device with default parameters under a 100 V, 10 Hz sinusoid.
pub fn quad_fixture() -> (QuadDevice, Waveform) {
    let device = make_quad_device(QuadDeviceParams::default()).expect("default parameters");
    let wf = Waveform::new(WaveformSpec::sinusoid(100.0, 10.0)).expect("valid sinusoid");
    (device, wf)
}

/// Generator of `device` at `v` with `occupied` as the current state.
pub fn generator_at<D: DeviceModel>(device: &D, v: f64, occupied: usize) -> TransitionMatrix {
    let n = device.n_states();
    let rates = device.rate_table(v).expect("finite rates");
    let state = StateIndex::new(occupied, n).expect("state in range");
    assemble_generator(&rates, device.conservation_rates(), state).expect("valid generator")
}
