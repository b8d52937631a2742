//! Drum onset and beat annotations from parsed MIDI.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use super::schema::LabelSchema;
use crate::annotation::{Onset, OnsetAnnotation};
use crate::error::{Error, Result};
use crate::label::Label;
use crate::smf::MidiSong;

/// Note-ons of `drums` mapped through `schema`. Unmapped notes are dropped
/// and same-class onsets within the same millisecond collapse to one.
pub fn extract_annotations(drums: &MidiSong, schema: &LabelSchema) -> OnsetAnnotation {
    let mut seen = BTreeSet::new();
    let mut events = Vec::new();
    for e in drums.merged_events() {
        if !e.on {
            continue;
        }
        let Some(class) = schema.map_note(e.note as i32).ok().flatten() else {
            continue;
        };
        let time = drums.seconds(e.tick);
        if seen.insert(((time * 1000.0).round() as i64, class)) {
            events.push(Onset { time, label: class });
        }
    }
    OnsetAnnotation::new(events)
}

/// `(seconds, position in bar)` for every beat before the song's end; index
/// 1 is a downbeat. Each time-signature change starts a new bar.
pub fn beat_annotations(song: &MidiSong) -> Vec<(f64, u32)> {
    let end = song.end_tick();
    let tpq = song.ticks_per_quarter as u64;
    let mut out = Vec::new();
    for (i, ts) in song.timesig_map.iter().enumerate() {
        let seg_end = song.timesig_map.get(i + 1).map_or(end, |n| n.tick).min(end);
        let beat = (tpq * 4 / ts.denominator.max(1) as u64).max(1);
        let mut tick = ts.tick;
        let mut k = 0u32;
        while tick < seg_end {
            out.push((song.seconds(tick), k % ts.numerator.max(1) as u32 + 1));
            tick += beat;
            k += 1;
        }
    }
    out
}

pub fn beats_to_text(beats: &[(f64, u32)]) -> String {
    let mut s = String::new();
    for (t, b) in beats {
        let _ = writeln!(s, "{t:.3}\t{b}");
    }
    s
}

pub fn write_beats(path: &Path, beats: &[(f64, u32)]) -> Result<()> {
    std::fs::write(path, beats_to_text(beats)).map_err(Error::io(path))
}

/// Onset counts per 18-class instrument.
pub fn instrument_counts(drums: &MidiSong, schema18: &LabelSchema) -> std::collections::BTreeMap<Label, usize> {
    let mut m = std::collections::BTreeMap::new();
    for e in extract_annotations(drums, schema18).events {
        *m.entry(e.label).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datafactory::schema::SchemaName;
    use crate::smf::{NoteEvent, TimeSig, Track};

    fn song_with(notes: &[(u64, u8, bool)]) -> MidiSong {
        let mut s = MidiSong::new(480);
        s.tracks.push(Track {
            events: notes
                .iter()
                .map(|&(tick, note, on)| NoteEvent {
                    tick,
                    channel: 9,
                    note,
                    velocity: if on { 100 } else { 0 },
                    on,
                })
                .collect(),
            end_tick: 3840,
        });
        s
    }

    #[test]
    fn note_on_to_onset() {
        let s = song_with(&[(480, 36, true), (500, 36, false)]);
        let a = extract_annotations(&s, &LabelSchema::new(SchemaName::Eighteen));
        assert_eq!(a.events, vec![Onset { time: 0.5, label: Label::BD }]);
    }

    #[test]
    fn note_offs_only_give_nothing() {
        let s = song_with(&[(480, 36, false), (960, 38, false)]);
        assert!(extract_annotations(&s, &LabelSchema::new(SchemaName::Three)).is_empty());
    }

    #[test]
    fn grouped_duplicates_collapse() {
        let s = song_with(&[(480, 42, true), (480, 46, true), (960, 37, true)]);
        let a3 = extract_annotations(&s, &LabelSchema::new(SchemaName::Three));
        assert_eq!(a3.events, vec![Onset { time: 0.5, label: Label::HH }]);
        let a18 = extract_annotations(&s, &LabelSchema::new(SchemaName::Eighteen));
        assert_eq!(a18.len(), 3);
    }

    #[test]
    fn beats_four_four() {
        let mut s = MidiSong::new(480);
        s.tracks.push(Track { events: vec![], end_tick: 8 * 480 });
        let b = beat_annotations(&s);
        let times: Vec<f64> = b.iter().map(|x| x.0).collect();
        assert_eq!(times, (0..8).map(|i| i as f64 * 0.5).collect::<Vec<_>>());
        let downs: Vec<f64> = b.iter().filter(|x| x.1 == 1).map(|x| x.0).collect();
        assert_eq!(downs, vec![0.0, 2.0]);
        assert!(beat_annotations(&MidiSong::new(480)).is_empty());
    }

    #[test]
    fn beats_meter_change() {
        let mut s = MidiSong::new(480);
        s.timesig_map.push(TimeSig { tick: 4 * 480, numerator: 3, denominator: 4 });
        s.tracks.push(Track { events: vec![], end_tick: 10 * 480 });
        let idx: Vec<u32> = beat_annotations(&s).iter().map(|x| x.1).collect();
        assert_eq!(idx, vec![1, 2, 3, 4, 1, 2, 3, 1, 2, 3]);
    }
}
