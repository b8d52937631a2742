//! Onset annotations and their text format.
//!
//! One event per line, `<seconds>\t<label>`, seconds printed with three
//! decimals and lines sorted by time. The same layout is used for ground
//! truth and for predictions.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::label::Label;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Onset {
    pub time: f64,
    pub label: Label,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OnsetAnnotation {
    pub events: Vec<Onset>,
}

impl OnsetAnnotation {
    pub fn new(mut events: Vec<Onset>) -> Self {
        sort_events(&mut events);
        Self { events }
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    /// Onset times of one class, ascending.
    pub fn times_of(&self, label: Label) -> Vec<f64> {
        self.events
            .iter()
            .filter(|e| e.label == label)
            .map(|e| e.time)
            .collect()
    }

    pub fn count_of(&self, label: Label) -> usize {
        self.events.iter().filter(|e| e.label == label).count()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&format!("{:.3}\t{}\n", e.time, e.label));
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut events = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(t), Some(l)) = (parts.next(), parts.next()) else {
                return Err(Error::Invalid(format!(
                    "line {}: expected `<seconds>\\t<label>`",
                    lineno + 1
                )));
            };
            let time: f64 = t
                .parse()
                .map_err(|_| Error::Invalid(format!("line {}: bad time `{t}`", lineno + 1)))?;
            if !time.is_finite() || time < 0.0 {
                return Err(Error::Invalid(format!(
                    "line {}: onset time must be finite and non-negative",
                    lineno + 1
                )));
            }
            events.push(Onset {
                time,
                label: l.parse()?,
            });
        }
        Ok(Self::new(events))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        Self::parse_text(&text).map_err(|e| Error::file(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(Error::io(path))
    }
}

fn sort_events(events: &mut [Onset]) {
    events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.label.cmp(&b.label)));
}
