//! CSV writers. Floats use `{:.16e}` (17 significant digits), lines end in
//! `\n`, and no output depends on locale or on the order threads finish.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use memjump_core::{EnsembleResult, PeriodMetrics, Sample, TrajectoryRecord};

use crate::error::OutputError;

pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

pub(crate) fn create_parent(path: &Path) -> Result<(), OutputError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| OutputError::io(dir, e))
        }
        _ => Ok(()),
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), OutputError> {
    create_parent(path)?;
    std::fs::write(path, text).map_err(|e| OutputError::io(path, e))
}

pub fn trace_header(n_states: usize) -> String {
    let mut h = String::from("t,v,state,current,u");
    for i in 1..=n_states {
        let _ = write!(h, ",P_{i}");
    }
    h
}

/// Streams trace rows to disk, keeping every `thinning`-th sample.
pub struct TraceWriter {
    out: BufWriter<File>,
    path: PathBuf,
    thinning: usize,
    seen: usize,
    line: String,
}

impl TraceWriter {
    pub fn create(path: &Path, n_states: usize, thinning: usize) -> Result<Self, OutputError> {
        create_parent(path)?;
        let file = File::create(path).map_err(|e| OutputError::io(path, e))?;
        let mut w = TraceWriter {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
            thinning: thinning.max(1),
            seen: 0,
            line: String::new(),
        };
        let header = trace_header(n_states);
        w.emit(&header)?;
        Ok(w)
    }

    fn emit(&mut self, line: &str) -> Result<(), OutputError> {
        self.out
            .write_all(line.as_bytes())
            .and_then(|_| self.out.write_all(b"\n"))
            .map_err(|e| OutputError::io(&self.path, e))
    }

    pub fn push(&mut self, s: &Sample) -> Result<(), OutputError> {
        let keep = self.seen.is_multiple_of(self.thinning);
        self.seen += 1;
        if !keep {
            return Ok(());
        }
        let mut line = std::mem::take(&mut self.line);
        line.clear();
        let _ = write!(
            line,
            "{},{},{},{},{}",
            fmt_float(s.t),
            fmt_float(s.v),
            s.state.get(),
            fmt_float(s.current),
            fmt_float(s.u)
        );
        for p in s.probabilities.as_slice() {
            line.push(',');
            line.push_str(&fmt_float(*p));
        }
        let r = self.emit(&line);
        self.line = line;
        r
    }

    pub fn finish(mut self) -> Result<(), OutputError> {
        self.out.flush().map_err(|e| OutputError::io(&self.path, e))
    }
}

/// Writes one row per sample (every `thinning`-th when thinning > 1).
pub fn write_trace_csv(
    trajectory: &TrajectoryRecord,
    path: &Path,
    thinning: usize,
) -> Result<(), OutputError> {
    let n = trajectory.n_states();
    let mut w = TraceWriter::create(path, n, thinning)?;
    for s in &trajectory.samples {
        w.push(s)?;
    }
    w.finish()
}

pub fn mean_current_csv(result: &EnsembleResult, thinning: usize) -> String {
    let mut s = String::from("t,v,mean_current\n");
    for k in (0..result.grid.len()).step_by(thinning.max(1)) {
        let _ = writeln!(
            s,
            "{},{},{}",
            fmt_float(result.grid.time(k)),
            fmt_float(result.voltages[k]),
            fmt_float(result.mean_current[k])
        );
    }
    s
}

pub fn switching_stats_csv(result: &EnsembleResult) -> String {
    let mut s = String::from("from,to,count,mean,std,std_error\n");
    for (t, st) in &result.switching_stats {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            t.from.get(),
            t.to.get(),
            st.count,
            fmt_opt(st.mean),
            fmt_opt(st.std),
            fmt_opt(st.std_error())
        );
    }
    s
}

pub fn period_events_csv(metrics: &PeriodMetrics) -> String {
    let mut s = String::from("period,from,to,jumps,armed,fired,loop_area\n");
    for row in &metrics.rows {
        for (t, c) in &row.events {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                row.index,
                t.from.get(),
                t.to.get(),
                c.jumps,
                c.armed,
                c.fired,
                fmt_float(row.loop_area)
            );
        }
    }
    s
}

pub fn occupancy_csv(result: &EnsembleResult) -> String {
    let mut s = String::from("state,occupancy\n");
    for (i, o) in result.occupancy.iter().enumerate() {
        let _ = writeln!(s, "{},{}", i + 1, fmt_float(*o));
    }
    s
}

/// Writes the ensemble statistics bundle into `dir` and returns the paths
/// written.
pub fn write_ensemble_bundle(
    result: &EnsembleResult,
    dir: &Path,
    thinning: usize,
) -> Result<Vec<PathBuf>, OutputError> {
    let mut files = vec![
        ("mean_current.csv", mean_current_csv(result, thinning)),
        ("switching_stats.csv", switching_stats_csv(result)),
        ("occupancy.csv", occupancy_csv(result)),
    ];
    if let Some(m) = &result.per_period {
        files.push(("period_events.csv", period_events_csv(m)));
    }
    let mut written = Vec::new();
    for (name, text) in files {
        let path = dir.join(name);
        write_text(&path, &text)?;
        written.push(path);
    }
    Ok(written)
}
