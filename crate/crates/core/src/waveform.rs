//! Deterministic input-voltage generators.

use std::f64::consts::TAU;

use crate::error::{Error, Result};

/// Raw description of an input waveform. Validate with [`Waveform::new`].
#[derive(Debug, Clone, PartialEq)]
pub enum WaveformSpec {
    /// `offset + amplitude * sin(2 pi frequency t + phase)`.
    Sinusoid {
        amplitude: f64,
        frequency: f64,
        phase: f64,
        offset: f64,
    },
    /// `high` during `[start + k period, start + k period + width)`, `low`
    /// elsewhere (including before `start`).
    PulseTrain {
        high: f64,
        low: f64,
        width: f64,
        period: f64,
        start: f64,
    },
    /// Linear interpolation through `(t, v)` breakpoints, held at the end
    /// values outside the breakpoint range.
    PiecewiseLinear { points: Vec<(f64, f64)> },
}

impl WaveformSpec {
    /// Convenience for a constant drive.
    pub fn constant(v: f64) -> Self {
        WaveformSpec::PiecewiseLinear {
            points: vec![(0.0, v)],
        }
    }

    pub fn sinusoid(amplitude: f64, frequency: f64) -> Self {
        WaveformSpec::Sinusoid {
            amplitude,
            frequency,
            phase: 0.0,
            offset: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = |name: &str, x: f64| {
            if x.is_finite() {
                Ok(())
            } else {
                Err(Error::param(format!(
                    "waveform {name} must be finite, got {x}"
                )))
            }
        };
        match self {
            WaveformSpec::Sinusoid {
                amplitude,
                frequency,
                phase,
                offset,
            } => {
                finite("amplitude", *amplitude)?;
                finite("phase", *phase)?;
                finite("offset", *offset)?;
                if !(*frequency > 0.0 && frequency.is_finite()) {
                    return Err(Error::param(format!(
                        "sinusoid frequency must be > 0, got {frequency}"
                    )));
                }
            }
            WaveformSpec::PulseTrain {
                high,
                low,
                width,
                period,
                start,
            } => {
                finite("high", *high)?;
                finite("low", *low)?;
                finite("start", *start)?;
                if !(*width > 0.0 && period > width && period.is_finite()) {
                    return Err(Error::param(format!(
                        "pulse train needs period > width > 0, got width={width} period={period}"
                    )));
                }
            }
            WaveformSpec::PiecewiseLinear { points } => {
                if points.is_empty() {
                    return Err(Error::param("piecewise-linear waveform needs breakpoints"));
                }
                for &(t, v) in points {
                    finite("breakpoint time", t)?;
                    finite("breakpoint voltage", v)?;
                }
                if points.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(Error::param(
                        "piecewise-linear breakpoints must be strictly increasing in t",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// A validated waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform(WaveformSpec);

impl Waveform {
    pub fn new(spec: WaveformSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Waveform(spec))
    }

    pub fn spec(&self) -> &WaveformSpec {
        &self.0
    }

    /// Repetition period, if the waveform has one.
    pub fn period(&self) -> Option<f64> {
        match &self.0 {
            WaveformSpec::Sinusoid { frequency, .. } => Some(1.0 / frequency),
            WaveformSpec::PulseTrain { period, .. } => Some(*period),
            WaveformSpec::PiecewiseLinear { .. } => None,
        }
    }

    /// Voltage at time `t`.
    pub fn sample(&self, t: f64) -> f64 {
        match &self.0 {
            WaveformSpec::Sinusoid {
                amplitude,
                frequency,
                phase,
                offset,
            } => offset + amplitude * (TAU * frequency * t + phase).sin(),
            WaveformSpec::PulseTrain {
                high,
                low,
                width,
                period,
                start,
            } => {
                if t < *start {
                    return *low;
                }
                if (t - start).rem_euclid(*period) < *width {
                    *high
                } else {
                    *low
                }
            }
            WaveformSpec::PiecewiseLinear { points } => {
                let (t0, v0) = points[0];
                let (tn, vn) = points[points.len() - 1];
                if t <= t0 {
                    return v0;
                }
                if t >= tn {
                    return vn;
                }
                // First breakpoint strictly after t; exists because t < tn.
                let k = points.partition_point(|&(tb, _)| tb <= t);
                let (ta, va) = points[k - 1];
                let (tb, vb) = points[k];
                if t == ta {
                    return va;
                }
                va + (vb - va) * (t - ta) / (tb - ta)
            }
        }
    }
}

/// Validates `spec` and samples it at `t >= 0`.
pub fn sample_waveform(spec: &WaveformSpec, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::param(format!("sample time must be >= 0, got {t}")));
    }
    Ok(Waveform::new(spec.clone())?.sample(t))
}
