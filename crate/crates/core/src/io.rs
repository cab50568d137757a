//! Trace files and CSV tables.
//!
//! A trace file is plain CSV with a `#`-prefixed header:
//!
//! ```text
//! # pulsenoise trace
//! # sample_interval = 1e-8
//! # origin_time = 0
//! # unit = photoelectrons
//! # electrons_per_unit = 1
//! # samples = 3
//! time_s,amplitude
//! 0,0.5
//! 1e-8,0.25
//! 2e-8,-1
//! ```
//!
//! Oscilloscope exports without a header are accepted as two columns
//! (time, amplitude) or as a single amplitude column with an explicit
//! sample interval.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chain::{Trace, TraceUnits};
use crate::error::{Error, Result};

/// Maximum relative deviation of a time step from the nominal interval.
pub const TIME_JITTER_TOLERANCE: f64 = 1e-6;

/// Column layout of a trace file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case")]
pub enum TraceFormat {
    /// `time, amplitude` rows.
    TwoColumn,
    /// One amplitude per row; the interval comes from here or the header.
    AmplitudeOnly { sample_interval: Option<f64> },
}

#[derive(Debug, Default)]
struct Header {
    sample_interval: Option<f64>,
    origin_time: Option<f64>,
    unit: Option<String>,
    electrons_per_unit: Option<f64>,
    samples: Option<usize>,
}

impl Header {
    fn parse_line(&mut self, line_no: usize, body: &str) -> Result<()> {
        let Some((key, value)) = body.split_once('=').or_else(|| body.split_once(':')) else {
            return Ok(());
        };
        let (key, value) = (key.trim(), value.trim());
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::ingest(line_no, format!("header `{key}` is not a number: `{v}`")))
        };
        match key {
            "sample_interval" | "dt" => self.sample_interval = Some(num(value)?),
            "origin_time" => self.origin_time = Some(num(value)?),
            "unit" => self.unit = Some(value.to_string()),
            "electrons_per_unit" | "calibration" => self.electrons_per_unit = Some(num(value)?),
            "samples" => {
                self.samples = Some(
                    value
                        .parse()
                        .map_err(|_| Error::ingest(line_no, format!("header `samples` is not a count: `{value}`")))?,
                )
            }
            _ => {}
        }
        Ok(())
    }

    fn units(&self) -> TraceUnits {
        match (self.unit.as_deref(), self.electrons_per_unit) {
            (Some("photoelectrons"), None | Some(1.0)) => TraceUnits::Photoelectrons,
            (label, Some(e)) => TraceUnits::Calibrated {
                label: label.unwrap_or("V").to_string(),
                electrons_per_unit: e,
            },
            (label, None) => TraceUnits::Uncalibrated {
                label: label.unwrap_or("V").to_string(),
            },
        }
    }
}

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else if line.contains(';') {
        line.split(';').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// Renders a trace in the header + CSV format. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn format_trace(trace: &Trace) -> String {
    let mut out = String::with_capacity(trace.len() * 24 + 200);
    out.push_str("# pulsenoise trace\n");
    let _ = writeln!(out, "# sample_interval = {:e}", trace.sample_interval);
    let _ = writeln!(out, "# origin_time = {:e}", trace.origin_time);
    let _ = writeln!(out, "# unit = {}", trace.units.label());
    if let Some(e) = trace.units.electrons_per_unit() {
        let _ = writeln!(out, "# electrons_per_unit = {e:e}");
    }
    let _ = writeln!(out, "# samples = {}", trace.len());
    out.push_str("time_s,amplitude\n");
    for (i, s) in trace.samples.iter().enumerate() {
        let _ = writeln!(out, "{:e},{:?}", trace.time_at(i), s);
    }
    out
}

pub fn export_trace(trace: &Trace, path: &Path) -> Result<()> {
    fs::write(path, format_trace(trace)).map_err(|e| Error::io(path, e))
}

pub fn ingest_trace(path: &Path, format: TraceFormat) -> Result<Trace> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace(&text, format)
}

/// Parses trace text; see the module docs for the accepted layouts.
pub fn parse_trace(text: &str, format: TraceFormat) -> Result<Trace> {
    let mut header = Header::default();
    let mut times = Vec::new();
    let mut samples = Vec::new();
    let mut lines_of = Vec::new();
    let mut seen_data = false;
    let width = match format {
        TraceFormat::TwoColumn => 2,
        TraceFormat::AmplitudeOnly { .. } => 1,
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(body) = line.strip_prefix('#') {
            header.parse_line(line_no, body.trim())?;
            continue;
        }
        let fields = split_fields(line);
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(v) => v,
            // a single column-title row is allowed before the data
            Err(_) if !seen_data && fields.iter().all(|f| f.parse::<f64>().is_err()) => {
                seen_data = true;
                continue;
            }
            Err(_) => {
                let bad = fields.iter().find(|f| f.parse::<f64>().is_err()).unwrap_or(&"");
                return Err(Error::ingest(line_no, format!("malformed number `{bad}`")));
            }
        };
        seen_data = true;
        if values.len() != width {
            return Err(Error::ingest(
                line_no,
                format!("expected {width} column(s), found {}", values.len()),
            ));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::ingest(line_no, format!("non-finite value {v}")));
        }
        if width == 2 {
            times.push(values[0]);
            samples.push(values[1]);
        } else {
            samples.push(values[0]);
        }
        lines_of.push(line_no);
    }

    let last_line = text.lines().count().max(1);
    if samples.is_empty() {
        return Err(Error::ingest(last_line, "no samples found"));
    }
    if let Some(n) = header.samples {
        if n != samples.len() {
            return Err(Error::ingest(
                last_line,
                format!("header declares {n} samples, file holds {}", samples.len()),
            ));
        }
    }

    let (dt, origin) = match format {
        TraceFormat::TwoColumn => {
            let dt = match header.sample_interval {
                Some(dt) => dt,
                None if times.len() >= 2 => times[1] - times[0],
                None => {
                    return Err(Error::ingest(
                        lines_of[0],
                        "cannot infer the sample interval from a single row; add a `# sample_interval` header",
                    ))
                }
            };
            if dt.is_nan() || dt <= 0.0 {
                return Err(Error::ingest(lines_of.get(1).copied().unwrap_or(lines_of[0]), format!(
                    "time column must increase (step {dt})"
                )));
            }
            for (i, t) in times.iter().enumerate().skip(1) {
                let step = t - times[i - 1];
                if (step - dt).abs() > TIME_JITTER_TOLERANCE * dt {
                    return Err(Error::ingest(
                        lines_of[i],
                        format!("non-uniform sampling: time {t} after {} (expected step {dt})", times[i - 1]),
                    ));
                }
            }
            (dt, header.origin_time.unwrap_or(times[0]))
        }
        TraceFormat::AmplitudeOnly { sample_interval } => {
            let dt = sample_interval.or(header.sample_interval).ok_or_else(|| {
                Error::ingest(lines_of[0], "amplitude-only trace needs a sample interval")
            })?;
            (dt, header.origin_time.unwrap_or(0.0))
        }
    };
    let trace = Trace::new(samples, dt, origin).map_err(|e| Error::ingest(lines_of[0], e.to_string()))?;
    Ok(trace.with_units(header.units()))
}

/// Named numeric columns, written as CSV with a header row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Table from equally long columns.
    pub fn from_columns(names: &[&str], data: &[&[f64]]) -> Self {
        let len = data.first().map_or(0, |c| c.len());
        debug_assert!(data.iter().all(|c| c.len() == len));
        let mut t = Self::new(names);
        t.rows = (0..len).map(|i| data.iter().map(|c| c[i]).collect()).collect();
        t
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column_at(&self, index: usize) -> Result<Vec<f64>> {
        if index >= self.columns.len() {
            return Err(Error::analysis(format!(
                "table has {} columns, asked for column {index}",
                self.columns.len()
            )));
        }
        Ok(self.rows.iter().map(|r| r[index]).collect())
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::analysis(format!("table has no column `{name}`")))?;
        self.column_at(idx)
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let (_, head) = lines.next().ok_or_else(|| Error::ingest(1, "empty table"))?;
        let columns: Vec<String> = head.split(',').map(|c| c.trim().to_string()).collect();
        let mut rows = Vec::new();
        for (idx, line) in lines {
            let row = line
                .split(',')
                .map(|c| {
                    let c = c.trim();
                    c.parse::<f64>()
                        .map_err(|_| Error::ingest(idx + 1, format!("malformed number `{c}`")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != columns.len() {
                return Err(Error::ingest(
                    idx + 1,
                    format!("expected {} columns, found {}", columns.len(), row.len()),
                ));
            }
            rows.push(row);
        }
        Ok(Self { columns, rows })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_column_example() {
        let t = parse_trace("0,0\n1e-8,0\n2e-8,0\n", TraceFormat::TwoColumn).unwrap();
        assert_eq!(t.samples, vec![0.0; 3]);
        assert_eq!(t.sample_interval, 1e-8);
        assert!(matches!(t.units, TraceUnits::Uncalibrated { .. }));
    }

    #[test]
    fn amplitude_only_matches_two_column() {
        let a = parse_trace("0,0\n1e-8,0\n2e-8,0\n", TraceFormat::TwoColumn).unwrap();
        let b = parse_trace(
            "0\n0\n0\n",
            TraceFormat::AmplitudeOnly {
                sample_interval: Some(1e-8),
            },
        )
        .unwrap();
        assert_eq!(a, b);
        assert!(parse_trace("0\n", TraceFormat::AmplitudeOnly { sample_interval: None }).is_err());
    }

    #[test]
    fn jitter_reports_first_bad_row() {
        let text = "time,volts\n0,1\n1e-8,1\n2e-8,1\n3.1e-8,1\n5e-8,1\n";
        match parse_trace(text, TraceFormat::TwoColumn) {
            Err(Error::Ingest { line, message }) => {
                assert_eq!(line, 5);
                assert!(message.contains("non-uniform"));
            }
            other => panic!("{other:?}"),
        }
        // jitter below tolerance passes
        let ok = "0,1\n1e-8,1\n2.000000001e-8,1\n3e-8,1\n";
        assert!(parse_trace(ok, TraceFormat::TwoColumn).is_ok());
    }

    #[test]
    fn malformed_number_names_line() {
        let text = "# unit = V\n0,1\n1e-8,x2\n";
        match parse_trace(text, TraceFormat::TwoColumn) {
            Err(Error::Ingest { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("x2"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_trace("0,1\n1e-8\n", TraceFormat::TwoColumn),
            Err(Error::Ingest { line: 2, .. })
        ));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let samples: Vec<f64> = (0..500).map(|i| ((i as f64) * 0.37).sin() * 1e3 / 7.0).collect();
        let t = Trace::new(samples, 1e-8, 2.5e-7).unwrap().with_units(TraceUnits::Calibrated {
            label: "mV".into(),
            electrons_per_unit: 1234.5,
        });
        let back = parse_trace(&format_trace(&t), TraceFormat::TwoColumn).unwrap();
        assert_eq!(back, t);
        let back = parse_trace(&format_trace(&t), TraceFormat::AmplitudeOnly { sample_interval: None });
        // two columns in the file
        assert!(back.is_err());

        let pe = Trace::new(vec![1.0 / 3.0, -2e-300, 5e300], 1e-9, 0.0).unwrap();
        assert_eq!(parse_trace(&format_trace(&pe), TraceFormat::TwoColumn).unwrap(), pe);
    }

    #[test]
    fn header_sample_count_checked() {
        let text = "# samples = 4\n0,1\n1e-8,1\n";
        assert!(matches!(parse_trace(text, TraceFormat::TwoColumn), Err(Error::Ingest { .. })));
    }

    #[test]
    fn table_round_trip() {
        let mut t = Table::new(&["photon_number", "variance_pe2"]);
        t.push(vec![1e5, 0.1 + 0.2]);
        t.push(vec![3e6, f64::MIN_POSITIVE]);
        let back = Table::parse_csv(&t.to_csv()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.column("variance_pe2").unwrap()[0], 0.1 + 0.2);
        assert!(back.column("nope").is_err());
    }
}
