//! Dataset manifest and per-track records.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{SchemaName, SwapRule};
use crate::error::{Error, Result};
use crate::label::Label;

pub const MIN_DURATION_S: f64 = 30.0;
pub const MAX_DURATION_S: f64 = 900.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub id: String,
    pub source_midi: String,
    pub duration_s: f64,
    /// Onsets per 18-class instrument.
    pub onset_counts: BTreeMap<Label, usize>,
    pub is_solo: bool,
    /// For a solo, the id of its mix; for a mix, the id of its solo.
    pub pair_id: Option<String>,
    pub soundfont_id: u32,
    pub split_index: Option<usize>,
    /// Paths relative to the dataset directory.
    pub midi_path: String,
    pub audio_path: String,
    pub annotation_path: String,
    pub beats_path: String,
}

impl TrackRecord {
    pub fn total_onsets(&self) -> usize {
        self.onset_counts.values().sum()
    }

    /// The id shared by a mix and its solo.
    pub fn song_id(&self) -> &str {
        if self.is_solo {
            self.pair_id.as_deref().unwrap_or(&self.id)
        } else {
            &self.id
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapLogEntry {
    pub track_id: String,
    pub rule: SwapRule,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub test_split: usize,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub schema: SchemaName,
    pub sample_rate: u32,
    pub renderer: String,
    pub rng_seed: u64,
    pub tracks: Vec<TrackRecord>,
    pub removed: Vec<String>,
    pub soundfont_groups: Vec<Vec<u32>>,
    pub swap_log: Vec<SwapLogEntry>,
    pub val_fraction: f64,
    pub folds: Vec<Fold>,
}

impl DatasetManifest {
    pub const VERSION: u32 = 1;

    pub fn track(&self, id: &str) -> Option<&TrackRecord> {
        self.tracks.iter().find(|t| t.id == id)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serialises");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(Error::io(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::file(path, e.to_string()))?;
        if m.version != Self::VERSION {
            return Err(Error::file(path, format!("unsupported manifest version {}", m.version)));
        }
        Ok(m)
    }

    pub fn swap_log_csv(&self) -> String {
        let mut s = String::from("track_id,instrument_a,instrument_b\n");
        for e in &self.swap_log {
            s.push_str(&format!("{},{},{}\n", e.track_id, e.rule.a, e.rule.b));
        }
        s
    }
}

/// Keeps records with `30 <= duration_s <= 900`; returns the kept records
/// and the ids of the removed ones.
pub fn filter_tracks(records: Vec<TrackRecord>) -> (Vec<TrackRecord>, Vec<String>) {
    let mut removed = Vec::new();
    let kept = records
        .into_iter()
        .filter(|r| {
            let ok = (MIN_DURATION_S..=MAX_DURATION_S).contains(&r.duration_s);
            if !ok {
                log::info!("dropping {} ({:.1} s)", r.id, r.duration_s);
                removed.push(r.id.clone());
            }
            ok
        })
        .collect();
    (kept, removed)
}

#[cfg(test)]
pub(crate) fn record(id: &str, duration_s: f64) -> TrackRecord {
    TrackRecord {
        id: id.into(),
        source_midi: format!("{id}.mid"),
        duration_s,
        onset_counts: BTreeMap::new(),
        is_solo: false,
        pair_id: None,
        soundfont_id: 0,
        split_index: None,
        midi_path: String::new(),
        audio_path: String::new(),
        annotation_path: String::new(),
        beats_path: String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duration_filter_boundaries() {
        let recs = vec![record("a", 29.9), record("b", 30.0), record("c", 900.0), record("d", 901.0)];
        let (kept, removed) = filter_tracks(recs);
        assert_eq!(kept.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), vec!["b", "c"]);
        assert_eq!(removed, vec!["a", "d"]);
    }

    #[test]
    fn json_round_trip() {
        let mut r = record("x", 31.0);
        r.onset_counts.insert(Label::CHH, 12);
        let m = DatasetManifest {
            version: DatasetManifest::VERSION,
            schema: SchemaName::Eight,
            sample_rate: 44100,
            renderer: "toy".into(),
            rng_seed: 7,
            tracks: vec![r],
            removed: vec![],
            soundfont_groups: vec![vec![0], vec![1], vec![2]],
            swap_log: vec![],
            val_fraction: 0.15,
            folds: vec![],
        };
        let back: DatasetManifest = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert!(m.to_json().contains("\"CHH\": 12"));
    }
}
