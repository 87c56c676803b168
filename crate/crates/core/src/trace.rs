//! Time series inputs.
//!
//! A light trace is sample-and-hold: the lux value of a sample applies from
//! its timestamp until the next sample, and the last value holds forever.
//! An event trace is a list of impulses; each sample is one event whose value
//! is an opaque payload (e.g. 1 = motion, 2 = door).
//!
//! CSV layout is `time_s,value` with a header line.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::TraceError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    #[serde(rename = "time_s")]
    pub time: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    samples: Vec<Sample>,
}

impl Trace {
    /// Builds a trace from `(time, value)` pairs. Times must be finite and
    /// strictly increasing.
    pub fn new<I>(samples: I) -> Result<Self, TraceError>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let samples: Vec<Sample> = samples
            .into_iter()
            .map(|(time, value)| Sample { time, value })
            .collect();
        for (i, s) in samples.iter().enumerate() {
            // Header is line 1, so sample i sits on line i + 2.
            let line = i + 2;
            if !s.time.is_finite() || !s.value.is_finite() {
                return Err(TraceError::Malformed {
                    line,
                    message: "time and value must be finite".into(),
                });
            }
            if i > 0 && s.time <= samples[i - 1].time {
                return Err(TraceError::NonMonotonic {
                    line,
                    time: s.time,
                    previous: samples[i - 1].time,
                });
            }
        }
        Ok(Trace { samples })
    }

    /// Like [`Trace::new`], additionally rejecting negative values.
    pub fn light<I>(samples: I) -> Result<Self, TraceError>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let trace = Trace::new(samples)?;
        trace.check_light()?;
        Ok(trace)
    }

    pub fn constant(value: f64) -> Self {
        Trace {
            samples: vec![Sample { time: 0.0, value }],
        }
    }

    pub fn empty() -> Self {
        Trace::default()
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, TraceError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers().map_err(|e| TraceError::Malformed {
            line: 1,
            message: e.to_string(),
        })?;
        if headers.len() != 2 || &headers[0] != "time_s" || &headers[1] != "value" {
            return Err(TraceError::Malformed {
                line: 1,
                message: format!(
                    "expected header `time_s,value`, found `{}`",
                    headers.iter().collect::<Vec<_>>().join(",")
                ),
            });
        }
        let mut pairs = Vec::new();
        for record in rdr.deserialize::<Sample>() {
            let s = record.map_err(|e| TraceError::Malformed {
                line: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            })?;
            pairs.push((s.time, s.value));
        }
        Trace::new(pairs)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| TraceError::Io {
            path: path.to_owned(),
            source,
        })?;
        Trace::from_csv_reader(std::io::BufReader::new(file))
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for s in &self.samples {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub(crate) fn check_light(&self) -> Result<(), TraceError> {
        match self.samples.iter().position(|s| s.value < 0.0) {
            Some(i) => Err(TraceError::NegativeLux {
                line: i + 2,
                value: self.samples[i].value,
            }),
            None => Ok(()),
        }
    }

    /// Held value at time `t`. Before the first sample the first value
    /// applies; an empty trace reads as zero.
    pub fn value_at(&self, t: f64) -> f64 {
        let i = self.samples.partition_point(|s| s.time <= t);
        match (i, self.samples.first()) {
            (_, None) => 0.0,
            (0, Some(first)) => first.value,
            (i, _) => self.samples[i - 1].value,
        }
    }

    /// Time of the first sample strictly after `t`.
    pub fn next_change_after(&self, t: f64) -> Option<f64> {
        let i = self.samples.partition_point(|s| s.time <= t);
        self.samples.get(i).map(|s| s.time)
    }

    /// Samples with `start <= time < end`.
    pub fn window(&self, start: f64, end: f64) -> &[Sample] {
        let lo = self.samples.partition_point(|s| s.time < start);
        let hi = self.samples.partition_point(|s| s.time < end);
        &self.samples[lo..hi.max(lo)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_and_hold() {
        let t = Trace::new([(0.0, 10.0), (5.0, 20.0), (7.5, 0.0)]).unwrap();
        assert_eq!(t.value_at(-1.0), 10.0);
        assert_eq!(t.value_at(0.0), 10.0);
        assert_eq!(t.value_at(4.999), 10.0);
        assert_eq!(t.value_at(5.0), 20.0);
        assert_eq!(t.value_at(100.0), 0.0);
        assert_eq!(t.next_change_after(0.0), Some(5.0));
        assert_eq!(t.next_change_after(5.0), Some(7.5));
        assert_eq!(t.next_change_after(7.5), None);
        assert_eq!(Trace::empty().value_at(3.0), 0.0);
    }

    #[test]
    fn window_is_half_open() {
        let t = Trace::new([(0.0, 1.0), (5.0, 2.0), (10.0, 3.0)]).unwrap();
        assert_eq!(t.window(0.0, 10.0).len(), 2);
        assert_eq!(t.window(5.0, 5.0).len(), 0);
        assert_eq!(t.window(20.0, 30.0).len(), 0);
    }

    #[test]
    fn rejects_non_monotone_time_with_line() {
        let csv = "time_s,value\n0,100\n10,200\n10,300\n";
        match Trace::from_csv_reader(csv.as_bytes()) {
            Err(TraceError::NonMonotonic { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_header_and_garbage() {
        assert!(Trace::from_csv_reader("t,v\n0,1\n".as_bytes()).is_err());
        match Trace::from_csv_reader("time_s,value\n0,1\n2,abc\n".as_bytes()) {
            Err(TraceError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn light_rejects_negative() {
        match Trace::light([(0.0, 1.0), (1.0, -2.0)]) {
            Err(TraceError::NegativeLux { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip() {
        let t = Trace::new([(0.0, 300.0), (3600.5, 12.25)]).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"time_s,value\n"));
        assert_eq!(Trace::from_csv_reader(buf.as_slice()).unwrap(), t);
    }
}
