//! Configuration, CSV and SVG output, and the `memjump` command line for
//! [`memjump_core`].

pub mod cli;
pub mod config;
pub mod error;
pub mod svg;
pub mod tables;

pub use cli::cli_dispatch;
pub use config::{
    load_config, parse_config, render_config, DeviceConfig, OutputConfig, ParsedConfig, RunConfig,
    SimulationConfig, SweepConfig,
};
pub use error::{ConfigError, OutputError};
pub use svg::{emit_svg_plot, render_svg, PlotKind, PlotSpec, Series, SvgDocument};
pub use tables::{fmt_float, write_trace_csv, TraceWriter};
