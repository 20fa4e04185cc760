//! Command-line entry point.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use memjump_core::oracle::{
    brute_force_chain, first_jump_hazards, first_jump_moments, ConstantRateChainSpec,
};
use memjump_core::{
    make_binary_device, make_quad_device, run_ensemble, DeviceModel, EnsembleConfig,
    EnsembleResult, SimulationSettings, Stepper, Waveform, WaveformSpec,
};

use crate::config::{load_config, DeviceConfig, RunConfig};
use crate::svg::{emit_svg_plot, PlotKind, PlotSpec, Series};
use crate::tables::{fmt_float, write_ensemble_bundle, write_text, TraceWriter};

/// Most points drawn per plotted series.
const MAX_PLOT_POINTS: usize = 20_000;

#[derive(Debug, Parser)]
#[command(
    name = "memjump",
    version,
    about = "Stochastic multi-state memristive device simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one trajectory and write its trace.
    Simulate(CommonArgs),
    /// Run an ensemble and write its statistics.
    Ensemble(CommonArgs),
    /// Run an ensemble at every amplitude and frequency of the sweep grid.
    Sweep(CommonArgs),
    #[command(hide = true)]
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Configuration file.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides `simulation.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for all outputs; overrides `output.csv` and `output.svg`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Also write SVG plots.
    #[arg(long)]
    plot: bool,
    /// Print nothing on success.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Constant drive voltage; defaults to the sinusoid amplitude, or the
    /// waveform's value at t = 0 for other kinds.
    #[arg(long, allow_hyphen_values = true)]
    voltage: Option<f64>,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Failure::Config(e.to_string())
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        Failure::Runtime(e.to_string())
    }
}

struct Context {
    config: RunConfig,
    seed: u64,
    csv_dir: PathBuf,
    svg_dir: PathBuf,
    plot: bool,
    quiet: bool,
}

impl Context {
    fn load(args: &CommonArgs) -> Result<Context, Failure> {
        let parsed = load_config(&args.config).map_err(Failure::config)?;
        if !args.quiet && !parsed.defaults.is_empty() {
            println!("defaults applied: {}", parsed.defaults.join(", "));
        }
        let config = parsed.config;
        let seed = args.seed.unwrap_or(config.simulation.seed);
        let csv_dir = args
            .out
            .clone()
            .unwrap_or_else(|| config.output.csv.clone());
        let svg_dir = args
            .out
            .clone()
            .unwrap_or_else(|| config.output.svg.clone());
        Ok(Context {
            config,
            seed,
            csv_dir,
            svg_dir,
            plot: args.plot,
            quiet: args.quiet,
        })
    }

    fn settings(&self, t_end: f64) -> SimulationSettings {
        let mut s = SimulationSettings::new(t_end, self.config.simulation.dt)
            .with_substepping(self.config.simulation.substepping);
        if let Some(i) = self.config.initial_state() {
            s = s.with_initial_state(i);
        }
        s
    }

    fn say(&self, msg: impl std::fmt::Display) {
        if !self.quiet {
            println!("{msg}");
        }
    }

    fn plot(&self, spec: &PlotSpec, path: &Path) -> Result<(), Failure> {
        let warnings = emit_svg_plot(spec, path).map_err(Failure::runtime)?;
        for w in warnings {
            eprintln!("warning: {}: {w}", path.display());
        }
        self.say(format_args!("wrote {}", path.display()));
        Ok(())
    }
}

/// Every `stride`-th element so that at most [`MAX_PLOT_POINTS`] remain.
fn decimate<T: Copy>(xs: &[T]) -> Vec<T> {
    let stride = xs.len().div_ceil(MAX_PLOT_POINTS).max(1);
    xs.iter().step_by(stride).copied().collect()
}

fn with_device<R>(
    device: &DeviceConfig,
    f: impl FnOnce(&(dyn DeviceModel + Sync)) -> Result<R, Failure>,
) -> Result<R, Failure> {
    match device {
        DeviceConfig::Binary(p) => f(&make_binary_device(*p).map_err(Failure::config)?),
        DeviceConfig::Quad(p) => f(&make_quad_device(*p).map_err(Failure::config)?),
    }
}

fn waveform(spec: &WaveformSpec) -> Result<Waveform, Failure> {
    Waveform::new(spec.clone()).map_err(Failure::config)
}

fn check_period(waveform: &Waveform, dt: f64, key: &str) -> Result<(), Failure> {
    if let Some(period) = waveform.period() {
        let ratio = period / dt;
        if ratio.round() < 1.0 || (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(Failure::Config(format!(
                "invalid config value for {key}: waveform period {period} s is not a multiple of simulation.dt = {dt} s"
            )));
        }
    }
    Ok(())
}

fn simulate(ctx: &Context) -> Result<(), Failure> {
    let wf = waveform(&ctx.config.waveform)?;
    let settings = ctx.settings(ctx.config.simulation.t_end);
    let n = ctx.config.device.n_states();
    let thinning = ctx.config.output.thinning;
    let trace_path = ctx.csv_dir.join("trace.csv");
    let (samples, jumps, rows) = with_device(&ctx.config.device, |device| {
        let mut stepper =
            Stepper::new(device, &wf, &settings, ctx.seed).map_err(Failure::config)?;
        let mut writer = TraceWriter::create(&trace_path, n, thinning).map_err(Failure::runtime)?;
        let mut kept = Vec::new();
        let mut jumps = 0usize;
        let mut k = 0usize;
        loop {
            let s = stepper.sample();
            writer.push(&s).map_err(Failure::runtime)?;
            if ctx.plot && k.is_multiple_of(thinning) {
                kept.push(s);
            }
            k += 1;
            if stepper.is_done() {
                break;
            }
            if stepper.step().map_err(Failure::runtime)?.is_some() {
                jumps += 1;
            }
        }
        writer.finish().map_err(Failure::runtime)?;
        Ok((kept, jumps, k))
    })?;
    ctx.say(format_args!(
        "simulate: {rows} samples, {jumps} jumps, seed {} -> {}",
        ctx.seed,
        trace_path.display()
    ));
    if ctx.plot {
        let samples = decimate(&samples.iter().collect::<Vec<_>>());
        let iv: Vec<(f64, f64)> = samples.iter().map(|s| (s.v, s.current)).collect();
        ctx.plot(
            &PlotSpec {
                kind: PlotKind::IvLoop,
                title: "I-V".into(),
                series: vec![Series::new("trajectory", iv.clone())],
            },
            &ctx.svg_dir.join("iv.svg"),
        )?;
        if n > 2 {
            ctx.plot(
                &PlotSpec {
                    kind: PlotKind::LogIv,
                    title: "log I-V".into(),
                    series: vec![Series::new("trajectory", iv)],
                },
                &ctx.svg_dir.join("log_iv.svg"),
            )?;
        }
        let probs = (0..n)
            .map(|i| {
                let pts = samples
                    .iter()
                    .map(|s| (s.t, s.probabilities.as_slice()[i]))
                    .collect();
                Series::new(format!("P_{}", i + 1), pts)
            })
            .collect();
        ctx.plot(
            &PlotSpec {
                kind: PlotKind::ProbabilityTraces,
                title: "State probabilities".into(),
                series: probs,
            },
            &ctx.svg_dir.join("probabilities.svg"),
        )?;
        let states = samples
            .iter()
            .map(|s| (s.t, s.state.get() as f64))
            .collect();
        ctx.plot(
            &PlotSpec {
                kind: PlotKind::StateTimeline,
                title: "Occupied state".into(),
                series: vec![Series::new("state", states)],
            },
            &ctx.svg_dir.join("states.svg"),
        )?;
    }
    Ok(())
}

fn run(ctx: &Context, wf: Waveform, t_end: f64) -> Result<EnsembleResult, Failure> {
    with_device(&ctx.config.device, |device| {
        let settings = ctx.settings(t_end);
        settings.grid().map_err(Failure::config)?;
        let cfg = EnsembleConfig::new(
            device,
            wf,
            settings,
            ctx.config.simulation.n_trajectories,
            ctx.seed,
        );
        run_ensemble(&cfg).map_err(Failure::runtime)
    })
}

fn ensemble_plots(
    ctx: &Context,
    result: &EnsembleResult,
    dir: &Path,
    title: &str,
) -> Result<(), Failure> {
    let thinned: Vec<(f64, f64)> = result
        .voltages
        .iter()
        .zip(&result.mean_current)
        .step_by(ctx.config.output.thinning)
        .map(|(v, i)| (*v, *i))
        .collect();
    let iv = decimate(&thinned);
    ctx.plot(
        &PlotSpec {
            kind: PlotKind::IvLoop,
            title: format!("{title}: mean current"),
            series: vec![Series::new("mean", iv.clone())],
        },
        &dir.join("mean_iv.svg"),
    )?;
    if result.n_states > 2 {
        ctx.plot(
            &PlotSpec {
                kind: PlotKind::LogIv,
                title: format!("{title}: mean current, log scale"),
                series: vec![Series::new("mean", iv)],
            },
            &dir.join("mean_log_iv.svg"),
        )?;
    }
    Ok(())
}

fn ensemble(ctx: &Context) -> Result<(), Failure> {
    let wf = waveform(&ctx.config.waveform)?;
    check_period(&wf, ctx.config.simulation.dt, "simulation.dt")?;
    let result = run(ctx, wf, ctx.config.simulation.t_end)?;
    let written = write_ensemble_bundle(&result, &ctx.csv_dir, ctx.config.output.thinning)
        .map_err(Failure::runtime)?;
    ctx.say(format_args!(
        "ensemble: {} trajectories x {} samples, seed {}",
        result.n_trajectories,
        result.grid.len(),
        ctx.seed
    ));
    for p in written {
        ctx.say(format_args!("wrote {}", p.display()));
    }
    if ctx.plot {
        ensemble_plots(ctx, &result, &ctx.svg_dir, "ensemble")?;
    }
    Ok(())
}

fn point_name(amplitude: f64, frequency: f64) -> String {
    format!("a{amplitude}_f{frequency}")
}

fn sweep(ctx: &Context) -> Result<(), Failure> {
    let WaveformSpec::Sinusoid { phase, offset, .. } = ctx.config.waveform else {
        return Err(Failure::Config(
            "invalid config value for waveform.kind: sweep needs kind = \"sinusoid\"".into(),
        ));
    };
    let sweep = &ctx.config.sweep;
    let mut points = Vec::new();
    for &amplitude in &sweep.amplitudes {
        for &frequency in &sweep.frequencies {
            let wf = waveform(&WaveformSpec::Sinusoid {
                amplitude,
                frequency,
                phase,
                offset,
            })?;
            check_period(&wf, ctx.config.simulation.dt, "sweep.frequencies")?;
            points.push((amplitude, frequency, wf));
        }
    }
    let mut summary = String::from(
        "amplitude,frequency,from,to,armed,fired,fire_probability,switching_count,switching_mean,mean_loop_area\n",
    );
    for (amplitude, frequency, wf) in points {
        let t_end = sweep.periods as f64 / frequency;
        let result = run(ctx, wf, t_end)?;
        let name = point_name(amplitude, frequency);
        write_ensemble_bundle(
            &result,
            &ctx.csv_dir.join("sweep").join(&name),
            ctx.config.output.thinning,
        )
        .map_err(Failure::runtime)?;
        let metrics = result.per_period.as_ref().expect("period checked above");
        let mean_area =
            metrics.rows.iter().map(|r| r.loop_area).sum::<f64>() / metrics.rows.len() as f64;
        for (t, stats) in &result.switching_stats {
            let (fired, armed) = metrics.fire_counts(*t);
            let _ = writeln!(
                summary,
                "{},{},{},{},{},{},{},{},{},{}",
                fmt_float(amplitude),
                fmt_float(frequency),
                t.from.get(),
                t.to.get(),
                armed,
                fired,
                metrics
                    .fire_probability(*t)
                    .map(fmt_float)
                    .unwrap_or_default(),
                stats.count,
                stats.mean.map(fmt_float).unwrap_or_default(),
                fmt_float(mean_area)
            );
        }
        ctx.say(format_args!("sweep: {name} done"));
        if ctx.plot {
            ensemble_plots(ctx, &result, &ctx.svg_dir.join("sweep").join(&name), &name)?;
        }
    }
    let path = ctx.csv_dir.join("sweep_summary.csv");
    write_text(&path, &summary).map_err(Failure::runtime)?;
    ctx.say(format_args!("wrote {}", path.display()));
    Ok(())
}

fn oracle(ctx: &Context, voltage: Option<f64>) -> Result<(), Failure> {
    let v = match (voltage, &ctx.config.waveform) {
        (Some(v), _) => v,
        (None, WaveformSpec::Sinusoid { amplitude, .. }) => *amplitude,
        (None, spec) => waveform(spec)?.sample(0.0),
    };
    let sim = &ctx.config.simulation;
    let spec = with_device(&ctx.config.device, |device| {
        Ok(ConstantRateChainSpec {
            rates: device.rate_table(v).map_err(Failure::config)?,
            eta: device.conservation_rates().to_vec(),
            initial_state: ctx
                .config
                .initial_state()
                .unwrap_or_else(|| device.default_initial_state()),
            dt: sim.dt,
            n_steps: ((sim.t_end / sim.dt).round() as usize).max(1),
        })
    })?;
    let ens = brute_force_chain(&spec, sim.n_trajectories, ctx.seed).map_err(Failure::config)?;
    let exact = first_jump_moments(
        &first_jump_hazards(&spec, 1).map_err(Failure::config)?,
        spec.dt,
    );

    let mut times = String::from("trajectory,first_jump_time\n");
    for (k, t) in ens.first_jump_times.iter().enumerate() {
        let _ = writeln!(times, "{k},{}", t.map(fmt_float).unwrap_or_default());
    }
    let mut summary = String::from("quantity,value\n");
    let jumped = ens.first_jump_times.iter().flatten().count();
    let _ = writeln!(summary, "voltage,{}", fmt_float(v));
    let _ = writeln!(summary, "n_trajectories,{}", sim.n_trajectories);
    let _ = writeln!(summary, "jumped,{jumped}");
    if let Some((mean, se)) = ens.first_jump_mean() {
        let _ = writeln!(summary, "empirical_mean,{}", fmt_float(mean));
        let _ = writeln!(summary, "empirical_std_error,{}", fmt_float(se));
    }
    let _ = writeln!(summary, "exact_p_jump,{}", fmt_float(exact.p_jump));
    let _ = writeln!(summary, "exact_mean,{}", fmt_float(exact.mean));
    for (i, c) in ens.visit_counts.iter().enumerate() {
        let _ = writeln!(summary, "visits_{},{c}", i + 1);
    }
    for (name, text) in [
        ("oracle_first_jumps.csv", times),
        ("oracle_summary.csv", summary),
    ] {
        let path = ctx.csv_dir.join(name);
        write_text(&path, &text).map_err(Failure::runtime)?;
        ctx.say(format_args!("wrote {}", path.display()));
    }
    Ok(())
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit status: 0 on success, 1 for usage or configuration errors,
/// 2 for failures while simulating or writing output.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let outcome = match &cli.command {
        Command::Simulate(a) => Context::load(a).and_then(|c| simulate(&c)),
        Command::Ensemble(a) => Context::load(a).and_then(|c| ensemble(&c)),
        Command::Sweep(a) => Context::load(a).and_then(|c| sweep(&c)),
        Command::Oracle(a) => Context::load(&a.common).and_then(|c| oracle(&c, a.voltage)),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}
