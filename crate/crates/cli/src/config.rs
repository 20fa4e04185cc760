//! Run configuration: a TOML document with `[device]`, `[waveform]`,
//! `[simulation]`, `[sweep]` and `[output]` tables.
//!
//! Every key is optional. Missing keys take the documented defaults and are
//! listed in [`ParsedConfig::defaults`]. Unknown keys are rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use memjump_core::{
    make_binary_device, make_quad_device, BinaryDeviceParams, QuadDeviceParams, QuadGammas,
    StateIndex, Waveform, WaveformSpec,
};
use serde::Deserialize;

use crate::error::ConfigError;

#[derive(Debug, Clone, PartialEq)]
pub enum DeviceConfig {
    Binary(BinaryDeviceParams),
    Quad(QuadDeviceParams),
}

impl DeviceConfig {
    pub fn n_states(&self) -> usize {
        match self {
            DeviceConfig::Binary(_) => 2,
            DeviceConfig::Quad(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            DeviceConfig::Binary(_) => "binary",
            DeviceConfig::Quad(_) => "quad",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub t_end: f64,
    pub dt: f64,
    pub seed: u64,
    /// 1-based; `None` uses the device default.
    pub initial_state: Option<usize>,
    pub n_trajectories: usize,
    pub substepping: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub amplitudes: Vec<f64>,
    pub frequencies: Vec<f64>,
    /// Periods simulated at each grid point.
    pub periods: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    /// Directory for CSV files.
    pub csv: PathBuf,
    /// Directory for SVG plots.
    pub svg: PathBuf,
    /// Keep every `thinning`-th sample in per-sample outputs.
    pub thinning: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub device: DeviceConfig,
    pub waveform: WaveformSpec,
    pub simulation: SimulationConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn initial_state(&self) -> Option<StateIndex> {
        self.simulation
            .initial_state
            .map(|i| StateIndex::new(i, self.device.n_states()).expect("validated at parse time"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedConfig {
    pub config: RunConfig,
    /// Dotted keys that were filled in from defaults, in document order.
    pub defaults: Vec<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    device: Option<RawDevice>,
    waveform: Option<RawWaveform>,
    simulation: Option<RawSimulation>,
    sweep: Option<RawSweep>,
    output: Option<RawOutput>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDevice {
    kind: Option<String>,
    alpha_set: Option<f64>,
    alpha_rst: Option<f64>,
    beta_set: Option<f64>,
    beta_rst: Option<f64>,
    eta_on: Option<f64>,
    eta_off: Option<f64>,
    r_on: Option<f64>,
    r_off: Option<f64>,
    gamma_12: Option<f64>,
    gamma_23: Option<f64>,
    gamma_34: Option<f64>,
    gamma_43: Option<f64>,
    gamma_32: Option<f64>,
    gamma_21: Option<f64>,
    eta: Option<Vec<f64>>,
    zeta: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWaveform {
    kind: Option<String>,
    amplitude: Option<f64>,
    frequency: Option<f64>,
    phase: Option<f64>,
    offset: Option<f64>,
    high: Option<f64>,
    low: Option<f64>,
    width: Option<f64>,
    period: Option<f64>,
    start: Option<f64>,
    points: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulation {
    t_end: Option<f64>,
    dt: Option<f64>,
    seed: Option<u64>,
    initial_state: Option<usize>,
    n_trajectories: Option<usize>,
    substepping: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    amplitudes: Option<Vec<f64>>,
    frequencies: Option<Vec<f64>>,
    periods: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    csv: Option<PathBuf>,
    svg: Option<PathBuf>,
    thinning: Option<usize>,
}

struct Resolver {
    defaults: Vec<String>,
}

impl Resolver {
    fn take<T>(&mut self, key: &str, value: Option<T>, default: T) -> T {
        value.unwrap_or_else(|| {
            self.defaults.push(key.to_string());
            default
        })
    }

    fn positive(
        &mut self,
        key: &str,
        value: Option<f64>,
        default: f64,
    ) -> Result<f64, ConfigError> {
        let x = self.take(key, value, default);
        if x > 0.0 && x.is_finite() {
            Ok(x)
        } else {
            Err(ConfigError::domain(
                key,
                format!("must be finite and > 0, got {x}"),
            ))
        }
    }

    fn finite(&mut self, key: &str, value: Option<f64>, default: f64) -> Result<f64, ConfigError> {
        let x = self.take(key, value, default);
        if x.is_finite() {
            Ok(x)
        } else {
            Err(ConfigError::domain(key, format!("must be finite, got {x}")))
        }
    }
}

fn reject_foreign(kind: &str, keys: &[(&str, bool)]) -> Result<(), ConfigError> {
    match keys.iter().find(|(_, present)| *present) {
        Some((key, _)) => Err(ConfigError::domain(
            key,
            format!("is not a parameter of kind = \"{kind}\""),
        )),
        None => Ok(()),
    }
}

fn resolve_device(r: &mut Resolver, raw: RawDevice) -> Result<DeviceConfig, ConfigError> {
    let kind = r.take("device.kind", raw.kind.clone(), "binary".to_string());
    match kind.as_str() {
        "binary" => {
            reject_foreign(
                "binary",
                &[
                    ("device.gamma_12", raw.gamma_12.is_some()),
                    ("device.gamma_23", raw.gamma_23.is_some()),
                    ("device.gamma_34", raw.gamma_34.is_some()),
                    ("device.gamma_43", raw.gamma_43.is_some()),
                    ("device.gamma_32", raw.gamma_32.is_some()),
                    ("device.gamma_21", raw.gamma_21.is_some()),
                    ("device.eta", raw.eta.is_some()),
                    ("device.zeta", raw.zeta.is_some()),
                ],
            )?;
            let d = BinaryDeviceParams::default();
            let p = BinaryDeviceParams {
                alpha_set: r.positive("device.alpha_set", raw.alpha_set, d.alpha_set)?,
                alpha_rst: r.positive("device.alpha_rst", raw.alpha_rst, d.alpha_rst)?,
                beta_set: r.positive("device.beta_set", raw.beta_set, d.beta_set)?,
                beta_rst: r.positive("device.beta_rst", raw.beta_rst, d.beta_rst)?,
                eta_on: r.positive("device.eta_on", raw.eta_on, d.eta_on)?,
                eta_off: r.positive("device.eta_off", raw.eta_off, d.eta_off)?,
                r_on: r.positive("device.r_on", raw.r_on, d.r_on)?,
                r_off: r.positive("device.r_off", raw.r_off, d.r_off)?,
            };
            if p.r_on >= p.r_off {
                return Err(ConfigError::domain(
                    "device.r_off",
                    format!("must exceed r_on ({}), got {}", p.r_on, p.r_off),
                ));
            }
            make_binary_device(p).map_err(|e| ConfigError::domain("device", e.to_string()))?;
            Ok(DeviceConfig::Binary(p))
        }
        "quad" => {
            reject_foreign(
                "quad",
                &[
                    ("device.alpha_set", raw.alpha_set.is_some()),
                    ("device.alpha_rst", raw.alpha_rst.is_some()),
                    ("device.beta_set", raw.beta_set.is_some()),
                    ("device.beta_rst", raw.beta_rst.is_some()),
                    ("device.eta_on", raw.eta_on.is_some()),
                    ("device.eta_off", raw.eta_off.is_some()),
                    ("device.r_on", raw.r_on.is_some()),
                    ("device.r_off", raw.r_off.is_some()),
                ],
            )?;
            let d = QuadDeviceParams::default();
            let gamma = QuadGammas {
                g12: r.positive("device.gamma_12", raw.gamma_12, d.gamma.g12)?,
                g23: r.positive("device.gamma_23", raw.gamma_23, d.gamma.g23)?,
                g34: r.positive("device.gamma_34", raw.gamma_34, d.gamma.g34)?,
                g43: r.positive("device.gamma_43", raw.gamma_43, d.gamma.g43)?,
                g32: r.positive("device.gamma_32", raw.gamma_32, d.gamma.g32)?,
                g21: r.positive("device.gamma_21", raw.gamma_21, d.gamma.g21)?,
            };
            let eta = quad_vector(r, "device.eta", raw.eta, d.eta)?;
            let zeta = quad_vector(r, "device.zeta", raw.zeta, d.zeta)?;
            let p = QuadDeviceParams { gamma, eta, zeta };
            make_quad_device(p).map_err(|e| ConfigError::domain("device", e.to_string()))?;
            Ok(DeviceConfig::Quad(p))
        }
        other => Err(ConfigError::domain(
            "device.kind",
            format!("must be \"binary\" or \"quad\", got \"{other}\""),
        )),
    }
}

fn quad_vector(
    r: &mut Resolver,
    key: &str,
    value: Option<Vec<f64>>,
    default: [f64; 4],
) -> Result<[f64; 4], ConfigError> {
    let v = r.take(key, value, default.to_vec());
    let arr: [f64; 4] = v.as_slice().try_into().map_err(|_| {
        ConfigError::domain(key, format!("needs exactly 4 entries, got {}", v.len()))
    })?;
    if let Some(bad) = arr.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
        return Err(ConfigError::domain(
            key,
            format!("entries must be finite and > 0, got {bad}"),
        ));
    }
    Ok(arr)
}

fn resolve_waveform(r: &mut Resolver, raw: RawWaveform) -> Result<WaveformSpec, ConfigError> {
    let kind = r.take("waveform.kind", raw.kind.clone(), "sinusoid".to_string());
    let spec = match kind.as_str() {
        "sinusoid" => {
            reject_foreign(
                "sinusoid",
                &[
                    ("waveform.high", raw.high.is_some()),
                    ("waveform.low", raw.low.is_some()),
                    ("waveform.width", raw.width.is_some()),
                    ("waveform.period", raw.period.is_some()),
                    ("waveform.start", raw.start.is_some()),
                    ("waveform.points", raw.points.is_some()),
                ],
            )?;
            WaveformSpec::Sinusoid {
                amplitude: r.finite("waveform.amplitude", raw.amplitude, 1.5)?,
                frequency: r.positive("waveform.frequency", raw.frequency, 10.0)?,
                phase: r.finite("waveform.phase", raw.phase, 0.0)?,
                offset: r.finite("waveform.offset", raw.offset, 0.0)?,
            }
        }
        "pulse" => {
            reject_foreign(
                "pulse",
                &[
                    ("waveform.amplitude", raw.amplitude.is_some()),
                    ("waveform.frequency", raw.frequency.is_some()),
                    ("waveform.phase", raw.phase.is_some()),
                    ("waveform.offset", raw.offset.is_some()),
                    ("waveform.points", raw.points.is_some()),
                ],
            )?;
            let high = r.finite("waveform.high", raw.high, 1.5)?;
            let low = r.finite("waveform.low", raw.low, -1.5)?;
            let width = r.positive("waveform.width", raw.width, 0.05)?;
            let period = r.positive("waveform.period", raw.period, 0.1)?;
            let start = r.finite("waveform.start", raw.start, 0.0)?;
            if width >= period {
                return Err(ConfigError::domain(
                    "waveform.width",
                    format!("must be below period ({period}), got {width}"),
                ));
            }
            if start < 0.0 {
                return Err(ConfigError::domain(
                    "waveform.start",
                    format!("must be >= 0, got {start}"),
                ));
            }
            WaveformSpec::PulseTrain {
                high,
                low,
                width,
                period,
                start,
            }
        }
        "pwl" => {
            reject_foreign(
                "pwl",
                &[
                    ("waveform.amplitude", raw.amplitude.is_some()),
                    ("waveform.frequency", raw.frequency.is_some()),
                    ("waveform.phase", raw.phase.is_some()),
                    ("waveform.offset", raw.offset.is_some()),
                    ("waveform.high", raw.high.is_some()),
                    ("waveform.low", raw.low.is_some()),
                    ("waveform.width", raw.width.is_some()),
                    ("waveform.period", raw.period.is_some()),
                    ("waveform.start", raw.start.is_some()),
                ],
            )?;
            let points = raw.points.ok_or_else(|| {
                ConfigError::domain("waveform.points", "is required for kind = \"pwl\"")
            })?;
            WaveformSpec::PiecewiseLinear {
                points: points.into_iter().map(|[t, v]| (t, v)).collect(),
            }
        }
        other => {
            return Err(ConfigError::domain(
                "waveform.kind",
                format!("must be \"sinusoid\", \"pulse\" or \"pwl\", got \"{other}\""),
            ))
        }
    };
    Waveform::new(spec.clone()).map_err(|e| ConfigError::domain("waveform", e.to_string()))?;
    Ok(spec)
}

fn resolve_simulation(
    r: &mut Resolver,
    raw: RawSimulation,
    n_states: usize,
) -> Result<SimulationConfig, ConfigError> {
    let t_end = r.positive("simulation.t_end", raw.t_end, 0.2)?;
    let dt = r.positive("simulation.dt", raw.dt, 1e-3)?;
    if dt > t_end {
        return Err(ConfigError::domain(
            "simulation.dt",
            format!("must not exceed t_end ({t_end}), got {dt}"),
        ));
    }
    let seed = r.take("simulation.seed", raw.seed, 0);
    if let Some(i) = raw.initial_state {
        if !(1..=n_states).contains(&i) {
            return Err(ConfigError::domain(
                "simulation.initial_state",
                format!("must be in 1..={n_states}, got {i}"),
            ));
        }
    } else {
        r.defaults.push("simulation.initial_state".to_string());
    }
    let n_trajectories = r.take("simulation.n_trajectories", raw.n_trajectories, 1);
    if n_trajectories == 0 {
        return Err(ConfigError::domain(
            "simulation.n_trajectories",
            "must be >= 1",
        ));
    }
    let substepping = r.take("simulation.substepping", raw.substepping, true);
    Ok(SimulationConfig {
        t_end,
        dt,
        seed,
        initial_state: raw.initial_state,
        n_trajectories,
        substepping,
    })
}

fn resolve_sweep(r: &mut Resolver, raw: RawSweep) -> Result<SweepConfig, ConfigError> {
    let amplitudes = r.take(
        "sweep.amplitudes",
        raw.amplitudes,
        vec![1.0, 1.25, 1.5, 1.75],
    );
    if amplitudes.is_empty() || amplitudes.iter().any(|a| !a.is_finite()) {
        return Err(ConfigError::domain(
            "sweep.amplitudes",
            "must be a non-empty list of finite values",
        ));
    }
    let frequencies = r.take("sweep.frequencies", raw.frequencies, vec![1.0, 10.0, 100.0]);
    if frequencies.is_empty() || frequencies.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
        return Err(ConfigError::domain(
            "sweep.frequencies",
            "must be a non-empty list of values > 0",
        ));
    }
    let periods = r.take("sweep.periods", raw.periods, 2);
    if periods == 0 {
        return Err(ConfigError::domain("sweep.periods", "must be >= 1"));
    }
    Ok(SweepConfig {
        amplitudes,
        frequencies,
        periods,
    })
}

fn resolve_output(r: &mut Resolver, raw: RawOutput) -> Result<OutputConfig, ConfigError> {
    let csv = r.take("output.csv", raw.csv, PathBuf::from("out"));
    let svg = r.take("output.svg", raw.svg, PathBuf::from("out"));
    let thinning = r.take("output.thinning", raw.thinning, 1);
    if thinning == 0 {
        return Err(ConfigError::domain("output.thinning", "must be >= 1"));
    }
    Ok(OutputConfig { csv, svg, thinning })
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ParsedConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
        ConfigError::Syntax {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    let mut r = Resolver {
        defaults: Vec::new(),
    };
    let device = resolve_device(&mut r, raw.device.unwrap_or_default())?;
    let waveform = resolve_waveform(&mut r, raw.waveform.unwrap_or_default())?;
    let simulation = resolve_simulation(
        &mut r,
        raw.simulation.unwrap_or_default(),
        device.n_states(),
    )?;
    let sweep = resolve_sweep(&mut r, raw.sweep.unwrap_or_default())?;
    let output = resolve_output(&mut r, raw.output.unwrap_or_default())?;
    Ok(ParsedConfig {
        config: RunConfig {
            device,
            waveform,
            simulation,
            sweep,
            output,
        },
        defaults: r.defaults,
    })
}

/// Reads and parses a configuration file.
pub fn load_config(path: &Path) -> Result<ParsedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_config(&text)
}

fn float(x: f64) -> String {
    format!("{x:?}")
}

fn list(xs: &[f64]) -> String {
    let items: Vec<String> = xs.iter().map(|x| float(*x)).collect();
    format!("[{}]", items.join(", "))
}

fn quote(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c if c.is_control() => {
                let _ = write!(out, "\\u{:04X}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Writes every setting explicitly, so that parsing the result gives back
/// `config` with no defaults applied.
pub fn render_config(config: &RunConfig) -> String {
    let mut s = String::new();
    s.push_str("[device]\n");
    let _ = writeln!(s, "kind = {}", quote(config.device.kind()));
    match &config.device {
        DeviceConfig::Binary(p) => {
            for (k, v) in [
                ("alpha_set", p.alpha_set),
                ("alpha_rst", p.alpha_rst),
                ("beta_set", p.beta_set),
                ("beta_rst", p.beta_rst),
                ("eta_on", p.eta_on),
                ("eta_off", p.eta_off),
                ("r_on", p.r_on),
                ("r_off", p.r_off),
            ] {
                let _ = writeln!(s, "{k} = {}", float(v));
            }
        }
        DeviceConfig::Quad(p) => {
            for ((i, j), g) in p.gamma.entries() {
                let _ = writeln!(s, "gamma_{i}{j} = {}", float(g));
            }
            let _ = writeln!(s, "eta = {}", list(&p.eta));
            let _ = writeln!(s, "zeta = {}", list(&p.zeta));
        }
    }

    s.push_str("\n[waveform]\n");
    match &config.waveform {
        WaveformSpec::Sinusoid {
            amplitude,
            frequency,
            phase,
            offset,
        } => {
            s.push_str("kind = \"sinusoid\"\n");
            let _ = writeln!(s, "amplitude = {}", float(*amplitude));
            let _ = writeln!(s, "frequency = {}", float(*frequency));
            let _ = writeln!(s, "phase = {}", float(*phase));
            let _ = writeln!(s, "offset = {}", float(*offset));
        }
        WaveformSpec::PulseTrain {
            high,
            low,
            width,
            period,
            start,
        } => {
            s.push_str("kind = \"pulse\"\n");
            let _ = writeln!(s, "high = {}", float(*high));
            let _ = writeln!(s, "low = {}", float(*low));
            let _ = writeln!(s, "width = {}", float(*width));
            let _ = writeln!(s, "period = {}", float(*period));
            let _ = writeln!(s, "start = {}", float(*start));
        }
        WaveformSpec::PiecewiseLinear { points } => {
            s.push_str("kind = \"pwl\"\n");
            let items: Vec<String> = points
                .iter()
                .map(|(t, v)| format!("[{}, {}]", float(*t), float(*v)))
                .collect();
            let _ = writeln!(s, "points = [{}]", items.join(", "));
        }
    }

    let sim = &config.simulation;
    s.push_str("\n[simulation]\n");
    let _ = writeln!(s, "t_end = {}", float(sim.t_end));
    let _ = writeln!(s, "dt = {}", float(sim.dt));
    let _ = writeln!(s, "seed = {}", sim.seed);
    if let Some(i) = sim.initial_state {
        let _ = writeln!(s, "initial_state = {i}");
    }
    let _ = writeln!(s, "n_trajectories = {}", sim.n_trajectories);
    let _ = writeln!(s, "substepping = {}", sim.substepping);

    s.push_str("\n[sweep]\n");
    let _ = writeln!(s, "amplitudes = {}", list(&config.sweep.amplitudes));
    let _ = writeln!(s, "frequencies = {}", list(&config.sweep.frequencies));
    let _ = writeln!(s, "periods = {}", config.sweep.periods);

    s.push_str("\n[output]\n");
    let _ = writeln!(s, "csv = {}", quote(&config.output.csv.to_string_lossy()));
    let _ = writeln!(s, "svg = {}", quote(&config.output.svg.to_string_lossy()));
    let _ = writeln!(s, "thinning = {}", config.output.thinning);
    s
}
