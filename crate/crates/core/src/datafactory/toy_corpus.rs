//! Generated MIDI corpus: simple rock/pop patterns with piano and bass.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::smf::{MidiSong, NoteEvent, Track, DRUM_CHANNEL};

const TPQ: u16 = 480;
const BAR: u64 = 4 * TPQ as u64;
const EIGHTH: u64 = TPQ as u64 / 2;
const SIXTEENTH: u64 = TPQ as u64 / 4;

/// Corpus-level knobs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyStyle {
    /// Probability that a 4-bar section keeps time on the ride instead of
    /// the closed hi-hat.
    pub ride_prob: f64,
    /// Minimum song length.
    pub min_duration_s: f64,
}

impl Default for ToyStyle {
    fn default() -> Self {
        Self {
            ride_prob: 0.3,
            min_duration_s: 32.0,
        }
    }
}

struct Writer {
    drums: Vec<NoteEvent>,
    keys: Vec<NoteEvent>,
}

impl Writer {
    fn drum(&mut self, tick: u64, note: u8, velocity: u8) {
        self.drums.push(NoteEvent { tick, channel: DRUM_CHANNEL, note, velocity, on: true });
        self.drums.push(NoteEvent { tick: tick + SIXTEENTH / 2, channel: DRUM_CHANNEL, note, velocity: 0, on: false });
    }

    fn note(&mut self, tick: u64, len: u64, channel: u8, note: u8, velocity: u8) {
        self.keys.push(NoteEvent { tick, channel, note, velocity, on: true });
        self.keys.push(NoteEvent { tick: tick + len, channel, note, velocity: 0, on: false });
    }
}

/// Song number `index` of the corpus generated with `seed`.
pub fn generate_song(index: usize, style: &ToyStyle, seed: u64) -> MidiSong {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0xD134_2543_DE82_EF95).wrapping_add(1));
    let bpm: u32 = rng.gen_range(90..=140);
    let us_per_qn = 60_000_000 / bpm;
    let bar_s = 4.0 * us_per_qn as f64 / 1e6;
    // Whole 4-bar phrases, plus one closing bar.
    let phrases = ((style.min_duration_s / bar_s - 1.0) / 4.0).ceil().max(1.0) as u64;
    let bars = phrases * 4 + 1;
    let vel = |rng: &mut ChaCha8Rng, base: u8| -> u8 { (base as i32 + rng.gen_range(-12..=12)).clamp(30, 127) as u8 };

    let mut w = Writer { drums: Vec::new(), keys: Vec::new() };
    let mut on_ride = false;
    let root_seq = [0u8, 5, 7, 3, 8, 10];
    let key: u8 = rng.gen_range(0..12);
    for bar in 0..bars {
        let t0 = bar * BAR;
        if bar == bars - 1 {
            // Closing hit.
            w.drum(t0, 36, vel(&mut rng, 110));
            w.drum(t0, 49, vel(&mut rng, 110));
            w.note(t0, BAR / 2, 0, 48 + key, 80);
            break;
        }
        if bar % 4 == 0 {
            on_ride = rng.gen_bool(style.ride_prob);
            w.drum(t0, 49, vel(&mut rng, 105));
        }
        let fill = bar % 8 == 7;
        // Kick and snare.
        w.drum(t0, 36, vel(&mut rng, 105));
        w.drum(t0 + 2 * TPQ as u64, 36, vel(&mut rng, 100));
        if rng.gen_bool(0.35) {
            w.drum(t0 + 5 * EIGHTH, 36, vel(&mut rng, 85));
        }
        w.drum(t0 + TPQ as u64, 38, vel(&mut rng, 105));
        if !fill {
            w.drum(t0 + 3 * TPQ as u64, 38, vel(&mut rng, 105));
        }
        // Time keeping.
        let last_hat = if fill { 6 } else { 8 };
        for e in 0..last_hat {
            let t = t0 + e * EIGHTH;
            let accent = if e % 2 == 0 { 90 } else { 70 };
            if on_ride {
                let note = if e % 4 == 0 && rng.gen_bool(0.1) { 53 } else { 51 };
                w.drum(t, note, vel(&mut rng, accent));
            } else if e == 7 && rng.gen_bool(0.4) {
                w.drum(t, 46, vel(&mut rng, 90));
            } else {
                w.drum(t, 42, vel(&mut rng, accent));
            }
        }
        if fill {
            let toms = [50u8, 47, 45, 43];
            for (i, &n) in toms.iter().enumerate() {
                w.drum(t0 + 3 * TPQ as u64 + i as u64 * SIXTEENTH, n, vel(&mut rng, 100));
            }
        }
        // Rare colour.
        if rng.gen_bool(0.08) {
            w.drum(t0 + 3 * EIGHTH, 75, vel(&mut rng, 90));
        }
        if rng.gen_bool(0.05) {
            w.drum(t0 + 2 * TPQ as u64, 56, vel(&mut rng, 85));
        }
        if !on_ride && rng.gen_bool(0.06) {
            w.drum(t0 + 3 * TPQ as u64 + EIGHTH, 44, vel(&mut rng, 70));
        }
        if rng.gen_bool(0.03) {
            w.drum(t0 + TPQ as u64 + EIGHTH, 54, vel(&mut rng, 80));
        }
        if bar % 8 == 4 && rng.gen_bool(0.15) {
            w.drum(t0 + 2 * TPQ as u64, if rng.gen_bool(0.5) { 55 } else { 52 }, vel(&mut rng, 95));
        }
        if rng.gen_bool(0.03) {
            w.drum(t0 + 3 * EIGHTH, 37, vel(&mut rng, 80));
        }
        if rng.gen_bool(0.03) {
            w.drum(t0 + 7 * EIGHTH, 39, vel(&mut rng, 90));
        }
        // Harmony: a triad per bar, bass on beats one and three.
        let root = key + root_seq[(bar as usize / 2) % root_seq.len()];
        let minor = root_seq[(bar as usize / 2) % root_seq.len()] % 2 == 1;
        for (i, iv) in [0u8, if minor { 3 } else { 4 }, 7].into_iter().enumerate() {
            w.note(t0 + i as u64 * 10, BAR - EIGHTH, 0, 60 + (root % 12) + iv, vel(&mut rng, 60));
        }
        for beat in [0u64, 2] {
            w.note(t0 + beat * TPQ as u64, 2 * TPQ as u64 - EIGHTH, 1, 36 + root % 12, vel(&mut rng, 80));
        }
    }

    let end_tick = bars * BAR;
    w.drums.sort_by_key(|e| (e.tick, e.on));
    w.keys.sort_by_key(|e| (e.tick, e.on));
    let mut song = MidiSong::new(TPQ);
    song.tempo_map = vec![(0, us_per_qn)];
    song.tracks = vec![
        Track { events: Vec::new(), end_tick },
        Track { events: w.drums, end_tick },
        Track { events: w.keys, end_tick },
    ];
    song
}

/// Writes `toy_000.mid` .. into `dir` and returns the paths.
pub fn write_toy_corpus(dir: &Path, n: usize, style: &ToyStyle, seed: u64) -> Result<Vec<PathBuf>> {
    if !(0.0..=1.0).contains(&style.ride_prob) {
        return Err(Error::Config(format!("ride_prob {} not in [0, 1]", style.ride_prob)));
    }
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    (0..n)
        .map(|i| {
            let path = dir.join(format!("toy_{i:03}.mid"));
            generate_song(i, style, seed).write(&path)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datafactory::annotate::instrument_counts;
    use crate::datafactory::schema::{LabelSchema, SchemaName};
    use crate::label::Label;
    use crate::smf::{parse_smf, split_drums, write_smf};

    #[test]
    fn songs_are_long_enough_and_deterministic() {
        let style = ToyStyle::default();
        for i in 0..5 {
            let s = generate_song(i, &style, 3);
            assert!(s.duration_s() >= 32.0, "{}", s.duration_s());
            assert!(s.duration_s() < 60.0);
            assert_eq!(s, generate_song(i, &style, 3));
        }
        assert_ne!(generate_song(0, &style, 3), generate_song(0, &style, 4));
    }

    #[test]
    fn round_trips_through_smf() {
        let s = generate_song(1, &ToyStyle::default(), 9);
        let back = parse_smf(&write_smf(&s)).unwrap();
        assert_eq!(back.merged_events(), s.merged_events());
        assert_eq!(back.tempo_map, s.tempo_map);
    }

    #[test]
    fn ride_probability_controls_the_hat_ride_ratio() {
        let schema = LabelSchema::new(SchemaName::Eighteen);
        let count = |p: f64| {
            let style = ToyStyle { ride_prob: p, ..Default::default() };
            let (mut chh, mut rd) = (0, 0);
            for i in 0..12 {
                let (drums, _) = split_drums(&generate_song(i, &style, 1));
                let c = instrument_counts(&drums, &schema);
                chh += c.get(&Label::CHH).copied().unwrap_or(0);
                rd += c.get(&Label::RD).copied().unwrap_or(0);
            }
            (chh, rd)
        };
        let (chh, rd) = count(0.05);
        assert!(chh >= 10 * rd.max(1), "{chh}:{rd}");
        let (chh, rd) = count(0.5);
        assert!(chh < 3 * rd, "{chh}:{rd}");
    }

    #[test]
    fn writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_toy_corpus(dir.path(), 3, &ToyStyle::default(), 0).unwrap();
        assert_eq!(paths.len(), 3);
        assert!(paths[2].ends_with("toy_002.mid"));
        assert_eq!(MidiSong::read(&paths[0]).unwrap().merged_events(), generate_song(0, &ToyStyle::default(), 0).merged_events());
    }
}
