//! Time-ordered coincidence records and their CSV form.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numfmt::sig9;
use crate::plant::Measurement;

pub const TRACE_HEADER: &str = "t_s,counts,phi_drift_rad,phi_mirror_rad,mu";
pub const TRACE_HEADER_VISIBLE: &str = "t_s,counts";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    /// Window start [s]
    pub t: f64,
    pub counts: u64,
    /// Simulator-only values, absent in recorded or redacted traces
    pub phi_drift: Option<f64>,
    pub phi_mirror: Option<f64>,
    pub mu: Option<f64>,
}

impl From<Measurement> for TraceSample {
    fn from(m: Measurement) -> Self {
        Self {
            t: m.t,
            counts: m.counts,
            phi_drift: Some(m.phi_drift),
            phi_mirror: Some(m.phi_mirror),
            mu: Some(m.mu),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    /// Window length [s]
    pub dwell: f64,
    pub samples: Vec<TraceSample>,
}

impl Trace {
    pub fn new(dwell: f64) -> Self {
        Self {
            dwell,
            samples: Vec::new(),
        }
    }

    pub fn push(&mut self, sample: impl Into<TraceSample>) {
        self.samples.push(sample.into());
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn counts(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.counts as f64).collect()
    }

    /// Samples from index `start` on, same dwell.
    pub fn tail(&self, start: usize) -> Trace {
        Trace {
            dwell: self.dwell,
            samples: self.samples[start.min(self.samples.len())..].to_vec(),
        }
    }

    /// Checks for uniform spacing `dwell` between consecutive samples.
    pub fn check_uniform(&self) -> Result<()> {
        if !(self.dwell.is_finite() && self.dwell > 0.0) {
            return Err(Error::Trace(format!(
                "dwell must be positive, got {}",
                self.dwell
            )));
        }
        let tol = 1e-6 * self.dwell;
        for (k, pair) in self.samples.windows(2).enumerate() {
            let dt = pair[1].t - pair[0].t;
            if (dt - self.dwell).abs() > tol {
                return Err(Error::Trace(format!(
                    "non-uniform sampling between samples {k} and {}: spacing {dt} s, dwell {} s",
                    k + 1,
                    self.dwell
                )));
            }
        }
        Ok(())
    }

    /// Writes the CSV. With `hidden = false` only the observable columns are emitted.
    pub fn write_csv<W: Write>(&self, mut out: W, hidden: bool) -> Result<()> {
        writeln!(
            out,
            "{}",
            if hidden {
                TRACE_HEADER
            } else {
                TRACE_HEADER_VISIBLE
            }
        )?;
        let opt = |v: Option<f64>| v.map(sig9).unwrap_or_default();
        for s in &self.samples {
            if hidden {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    sig9(s.t),
                    s.counts,
                    opt(s.phi_drift),
                    opt(s.phi_mirror),
                    opt(s.mu)
                )?;
            } else {
                writeln!(out, "{},{}", sig9(s.t), s.counts)?;
            }
        }
        Ok(())
    }

    /// Parses a trace CSV. The first two columns must be `t_s,counts`; the
    /// simulator-only columns may follow. `dwell` is taken from the first
    /// spacing unless given.
    pub fn read_csv<R: BufRead>(input: R, path: &str, dwell: Option<f64>) -> Result<Trace> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_string(),
            line,
            message,
        };
        let mut lines = input.lines();
        let header = match lines.next() {
            Some(h) => h?,
            None => return Err(err(1, "empty file, expected a header".into())),
        };
        let columns: Vec<&str> = header.trim().split(',').map(str::trim).collect();
        let known = ["t_s", "counts", "phi_drift_rad", "phi_mirror_rad", "mu"];
        if columns.len() < 2 || columns[0] != "t_s" || columns[1] != "counts" {
            return Err(err(
                1,
                format!("header must start with `t_s,counts`, got `{header}`"),
            ));
        }
        for c in &columns[2..] {
            if !known[2..].contains(c) {
                return Err(err(1, format!("unknown column `{c}`")));
            }
        }
        let position = |name: &str| columns.iter().position(|c| *c == name);
        let (drift_col, mirror_col, mu_col) = (
            position("phi_drift_rad"),
            position("phi_mirror_rad"),
            position("mu"),
        );
        let mut samples = Vec::new();
        for (k, line) in lines.enumerate() {
            let line_no = k + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != columns.len() {
                return Err(err(
                    line_no,
                    format!("expected {} fields, found {}", columns.len(), fields.len()),
                ));
            }
            let t: f64 = fields[0]
                .parse()
                .map_err(|e| err(line_no, format!("t_s `{}`: {e}", fields[0])))?;
            let counts: u64 = fields[1]
                .parse()
                .map_err(|e| err(line_no, format!("counts `{}`: {e}", fields[1])))?;
            let optional = |col: Option<usize>| -> Result<Option<f64>> {
                match col {
                    None => Ok(None),
                    Some(c) if fields[c].is_empty() => Ok(None),
                    Some(c) => fields[c]
                        .parse()
                        .map(Some)
                        .map_err(|e| err(line_no, format!("{} `{}`: {e}", columns[c], fields[c]))),
                }
            };
            if !t.is_finite() {
                return Err(err(line_no, "non-finite time".into()));
            }
            samples.push(TraceSample {
                t,
                counts,
                phi_drift: optional(drift_col)?,
                phi_mirror: optional(mirror_col)?,
                mu: optional(mu_col)?,
            });
        }
        let dwell = match dwell {
            Some(d) => d,
            None if samples.len() >= 2 => samples[1].t - samples[0].t,
            None => {
                return Err(err(
                    samples.len() + 2,
                    "need at least two samples to infer the dwell time".into(),
                ))
            }
        };
        let trace = Trace { dwell, samples };
        trace.check_uniform().map_err(|e| err(0, e.to_string()))?;
        Ok(trace)
    }

    pub fn read_csv_file(path: &Path) -> Result<Trace> {
        let file = std::fs::File::open(path)?;
        Trace::read_csv(
            std::io::BufReader::new(file),
            &path.display().to_string(),
            None,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: f64, counts: u64) -> TraceSample {
        TraceSample {
            t,
            counts,
            phi_drift: Some(0.25),
            phi_mirror: Some(1.5),
            mu: Some(700.125),
        }
    }

    #[test]
    fn csv_roundtrip_full_and_visible() {
        let mut tr = Trace::new(2.0);
        for k in 0..5 {
            tr.push(sample(2.0 * k as f64, 700 + k));
        }
        let mut full = Vec::new();
        tr.write_csv(&mut full, true).unwrap();
        let back = Trace::read_csv(full.as_slice(), "t", None).unwrap();
        assert_eq!(back, tr);

        let mut visible = Vec::new();
        tr.write_csv(&mut visible, false).unwrap();
        let text = String::from_utf8(visible.clone()).unwrap();
        assert!(text.starts_with("t_s,counts\n0,700\n2,701\n"));
        let back = Trace::read_csv(visible.as_slice(), "t", None).unwrap();
        assert_eq!(back.counts(), tr.counts());
        assert!(back.samples[0].mu.is_none());
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let bad = "t_s,counts\n0,5\n2,x\n4,7\n";
        match Trace::read_csv(bad.as_bytes(), "f.csv", None) {
            Err(Error::Parse { line, path, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(path, "f.csv");
            }
            other => panic!("{other:?}"),
        }
        let truncated = "t_s,counts,phi_drift_rad,phi_mirror_rad,mu\n0,5,0,0,5\n2,6,0.1";
        assert!(matches!(
            Trace::read_csv(truncated.as_bytes(), "f", None),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(Trace::read_csv("".as_bytes(), "f", None).is_err());
        assert!(Trace::read_csv("time,n\n".as_bytes(), "f", None).is_err());
        assert!(Trace::read_csv("t_s,counts\n0,-1\n".as_bytes(), "f", None).is_err());
    }

    #[test]
    fn non_uniform_sampling_is_rejected() {
        let text = "t_s,counts\n0,5\n2,6\n5,7\n";
        assert!(Trace::read_csv(text.as_bytes(), "f", None).is_err());
        let mut tr = Trace::new(2.0);
        tr.push(sample(0.0, 1));
        tr.push(sample(3.0, 1));
        assert!(tr.check_uniform().is_err());
    }
}
