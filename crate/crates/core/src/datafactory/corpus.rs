//! Dataset build, balance and split steps over a directory of MIDI files.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::annotate::{beat_annotations, extract_annotations, instrument_counts, write_beats};
use super::balance::{balance_corpus, remap_song};
use super::manifest::{filter_tracks, DatasetManifest, TrackRecord};
use super::render::{render_toy, ExternalRenderer, SAMPLE_RATE};
use super::schema::{GmMap, LabelSchema, SchemaName, SwapRule};
use super::splits::make_splits;
use crate::audio::{write_wav, AudioBuffer};
use crate::error::{Error, Result};
use crate::smf::{split_drums, MidiSong};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SWAP_LOG_FILE: &str = "swap_log.csv";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RenderMode {
    Toy,
    External(ExternalRenderer),
}

impl RenderMode {
    pub fn describe(&self) -> String {
        match self {
            RenderMode::Toy => "toy".into(),
            RenderMode::External(r) => format!("external:{}", r.template),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.strip_prefix("external:") {
            Some(t) => Ok(RenderMode::External(ExternalRenderer::new(t)?)),
            None if s == "toy" => Ok(RenderMode::Toy),
            None => Err(Error::Config(format!("unknown renderer `{s}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BuildConfig {
    pub schema: SchemaName,
    pub renderer: RenderMode,
    /// Soundfont ids assigned round-robin in file order.
    pub soundfonts: Vec<u32>,
    /// Also render a drums-only twin of every track.
    pub solos: bool,
    pub seed: u64,
    pub gm: GmMap,
}

impl BuildConfig {
    pub fn new(schema: SchemaName) -> Self {
        Self {
            schema,
            renderer: RenderMode::Toy,
            soundfonts: (0..6).collect(),
            solos: false,
            seed: 0,
            gm: GmMap::default(),
        }
    }
}

/// `.mid`/`.midi` files directly inside `dir`, sorted by name.
pub fn list_midi(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(Error::io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi"))
        })
        .collect();
    v.sort();
    Ok(v)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn mix_record(path: &Path, song: &MidiSong, soundfont_id: u32, schema18: &LabelSchema) -> TrackRecord {
    let id = stem(path);
    let (drums, _) = split_drums(song);
    TrackRecord {
        source_midi: path.to_string_lossy().into_owned(),
        duration_s: song.duration_s(),
        onset_counts: instrument_counts(&drums, schema18),
        is_solo: false,
        pair_id: None,
        soundfont_id,
        split_index: None,
        midi_path: format!("midi/{id}.mid"),
        audio_path: format!("audio/{id}.wav"),
        annotation_path: format!("annotations/{id}.txt"),
        beats_path: format!("beats/{id}.beats"),
        id,
    }
}

fn solo_record(mix: &TrackRecord) -> TrackRecord {
    TrackRecord {
        id: format!("{}_solo", mix.id),
        is_solo: true,
        pair_id: Some(mix.id.clone()),
        audio_path: format!("audio/{}_solo.wav", mix.id),
        ..mix.clone()
    }
}

/// Peak-normalises to 0.99 when the signal would clip.
fn limit(mut a: AudioBuffer) -> AudioBuffer {
    let peak = a.samples.iter().fold(0.0f32, |m, &x| m.max(x.abs()));
    if peak > 0.99 {
        let g = 0.99 / peak;
        a.samples.iter_mut().for_each(|x| *x *= g);
    }
    a
}

fn create_dirs(out: &Path) -> Result<()> {
    for d in ["midi", "audio", "annotations", "beats"] {
        let p = out.join(d);
        std::fs::create_dir_all(&p).map_err(Error::io(&p))?;
    }
    Ok(())
}

/// Writes the (remapped) MIDI, annotations, beats and audio of one song.
fn materialize(
    mix: &TrackRecord,
    swaps: &[&SwapRule],
    solo: Option<&TrackRecord>,
    schema: &LabelSchema,
    renderer: &RenderMode,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let ctx = |e: Error| Error::file(&mix.source_midi, e.to_string());
    let source = MidiSong::read(Path::new(&mix.source_midi))?;
    let song = remap_song(&source, swaps, schema.gm_map());
    let midi_path = out.join(&mix.midi_path);
    song.write(&midi_path).map_err(ctx)?;
    let (drums, _) = split_drums(&song);
    extract_annotations(&drums, schema).write(&out.join(&mix.annotation_path))?;
    write_beats(&out.join(&mix.beats_path), &beat_annotations(&song))?;
    match renderer {
        RenderMode::Toy => {
            let (solo_audio, mix_audio) = render_toy(&song, schema.gm_map(), mix.soundfont_id, mix.duration_s, seed);
            write_wav(&out.join(&mix.audio_path), &limit(mix_audio))?;
            if let Some(s) = solo {
                write_wav(&out.join(&s.audio_path), &limit(solo_audio))?;
            }
        }
        RenderMode::External(r) => {
            r.render(&midi_path, &out.join(&mix.audio_path)).map_err(ctx)?;
            if let Some(s) = solo {
                let drums_midi = out.join(format!("midi/{}_drums.mid", mix.id));
                drums.write(&drums_midi)?;
                r.render(&drums_midi, &out.join(&s.audio_path)).map_err(ctx)?;
            }
        }
    }
    Ok(())
}

fn materialize_all(manifest: &DatasetManifest, out: &Path, only: Option<&BTreeSet<String>>, gm: &GmMap) -> Result<()> {
    let schema = LabelSchema::with_gm_map(manifest.schema, gm.clone());
    let renderer = RenderMode::parse(&manifest.renderer)?;
    let mixes: Vec<&TrackRecord> = manifest
        .tracks
        .iter()
        .filter(|t| !t.is_solo && only.map_or(true, |o| o.contains(&t.id)))
        .collect();
    mixes.par_iter().try_for_each(|mix| {
        let swaps: Vec<&SwapRule> = manifest.swap_log.iter().filter(|e| e.track_id == mix.id).map(|e| &e.rule).collect();
        let solo = manifest.tracks.iter().find(|t| t.is_solo && t.pair_id.as_deref() == Some(&mix.id));
        materialize(mix, &swaps, solo, &schema, &renderer, manifest.rng_seed, out)
    })
}

/// Parses, filters and renders every MIDI file; writes `manifest.json`.
pub fn build_dataset(midi_files: &[PathBuf], out: &Path, cfg: &BuildConfig) -> Result<DatasetManifest> {
    if cfg.soundfonts.is_empty() {
        return Err(Error::Config("no soundfonts configured".into()));
    }
    let mut seen = BTreeSet::new();
    for p in midi_files {
        if !seen.insert(stem(p)) {
            return Err(Error::file(p, "duplicate track id"));
        }
    }
    let schema18 = LabelSchema::with_gm_map(SchemaName::Eighteen, cfg.gm.clone());
    let records: Vec<TrackRecord> = midi_files
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let song = MidiSong::read(p)?;
            Ok(mix_record(p, &song, cfg.soundfonts[i % cfg.soundfonts.len()], &schema18))
        })
        .collect::<Result<_>>()?;
    let (kept, removed) = filter_tracks(records);
    let mut tracks = Vec::new();
    for r in kept {
        let solo = cfg.solos.then(|| solo_record(&r));
        tracks.push(r);
        tracks.extend(solo);
    }
    let manifest = DatasetManifest {
        version: DatasetManifest::VERSION,
        schema: cfg.schema,
        sample_rate: SAMPLE_RATE,
        renderer: cfg.renderer.describe(),
        rng_seed: cfg.seed,
        tracks,
        removed,
        soundfont_groups: Vec::new(),
        swap_log: Vec::new(),
        val_fraction: 0.0,
        folds: Vec::new(),
    };
    create_dirs(out)?;
    materialize_all(&manifest, out, None, &cfg.gm)?;
    manifest.write(&out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Balances a built dataset in place: re-renders the swapped tracks and
/// writes the swap log.
pub fn balance_dataset(dir: &Path, rules: &[SwapRule], seed: u64, gm: &GmMap) -> Result<DatasetManifest> {
    let mut manifest = DatasetManifest::read(&dir.join(MANIFEST_FILE))?;
    if !manifest.swap_log.is_empty() {
        return Err(Error::Config(format!("{} is already balanced", dir.display())));
    }
    let (tracks, log) = balance_corpus(&manifest.tracks, manifest.schema, rules, seed);
    manifest.tracks = tracks;
    manifest.swap_log = log;
    let touched: BTreeSet<String> = manifest.swap_log.iter().map(|e| e.track_id.clone()).collect();
    materialize_all(&manifest, dir, Some(&touched), gm)?;
    let log_path = dir.join(SWAP_LOG_FILE);
    std::fs::write(&log_path, manifest.swap_log_csv()).map_err(Error::io(&log_path))?;
    manifest.write(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Assigns splits and folds to a built dataset.
pub fn split_dataset(dir: &Path, groups: &[Vec<u32>], val_fraction: f64, seed: u64) -> Result<DatasetManifest> {
    let manifest = DatasetManifest::read(&dir.join(MANIFEST_FILE))?;
    let manifest = make_splits(manifest, groups, val_fraction, seed)?;
    manifest.write(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::OnsetAnnotation;
    use crate::audio::read_wav;
    use crate::datafactory::schema::default_swap_rules;
    use crate::datafactory::splits::default_soundfont_groups;
    use crate::datafactory::toy_corpus::{write_toy_corpus, ToyStyle};
    use crate::label::Label;

    fn fixture(n: usize, style: ToyStyle) -> (tempfile::TempDir, Vec<PathBuf>) {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_toy_corpus(&dir.path().join("corpus"), n, &style, 5).unwrap();
        (dir, paths)
    }

    #[test]
    fn build_writes_one_record_per_file() {
        let (dir, paths) = fixture(3, ToyStyle::default());
        let out = dir.path().join("ds");
        let m = build_dataset(&paths, &out, &BuildConfig::new(SchemaName::Eight)).unwrap();
        assert_eq!(m.tracks.len(), 3);
        for t in &m.tracks {
            let audio = read_wav(&out.join(&t.audio_path)).unwrap();
            assert_eq!(audio.samples.len(), (t.duration_s * 44100.0).round() as usize);
            let ann = OnsetAnnotation::read(&out.join(&t.annotation_path)).unwrap();
            assert!(ann.count_of(Label::BD) > 10);
            assert!(out.join(&t.beats_path).exists());
        }
        assert_eq!(DatasetManifest::read(&out.join(MANIFEST_FILE)).unwrap(), m);
    }

    #[test]
    fn short_files_are_filtered() {
        let (dir, mut paths) = fixture(2, ToyStyle::default());
        let short = dir.path().join("corpus/short.mid");
        let mut s = MidiSong::new(480);
        s.tracks.push(crate::smf::Track { events: Vec::new(), end_tick: 480 });
        s.write(&short).unwrap();
        paths.push(short);
        let m = build_dataset(&paths, &dir.path().join("ds"), &BuildConfig::new(SchemaName::Three)).unwrap();
        assert_eq!(m.tracks.len(), 2);
        assert_eq!(m.removed, vec!["short".to_string()]);
    }

    #[test]
    fn balance_then_split() {
        let (dir, paths) = fixture(6, ToyStyle { ride_prob: 0.05, ..Default::default() });
        let out = dir.path().join("ds");
        let mut cfg = BuildConfig::new(SchemaName::Eight);
        cfg.solos = true;
        build_dataset(&paths, &out, &cfg).unwrap();
        let before = std::fs::read(out.join("annotations/toy_000.txt")).unwrap();
        let m = balance_dataset(&out, &default_swap_rules(), 1, &GmMap::default()).unwrap();
        assert!(!m.swap_log.is_empty());
        let csv = std::fs::read_to_string(out.join(SWAP_LOG_FILE)).unwrap();
        assert_eq!(csv.lines().count(), m.swap_log.len() + 1);
        // Annotations on disk follow the recorded counts.
        let schema = LabelSchema::new(SchemaName::Eight);
        for t in m.tracks.iter().filter(|t| !t.is_solo) {
            let ann = OnsetAnnotation::read(&out.join(&t.annotation_path)).unwrap();
            let rd: usize = t.onset_counts.iter().filter(|(i, _)| schema.group(**i) == Some(Label::RD)).map(|(_, n)| n).sum();
            assert_eq!(ann.count_of(Label::RD), rd, "{}", t.id);
        }
        let _ = before;
        assert!(balance_dataset(&out, &default_swap_rules(), 1, &GmMap::default()).is_err());
        let m = split_dataset(&out, &default_soundfont_groups(), 0.2, 0).unwrap();
        assert_eq!(m.folds.len(), 3);
        for t in &m.tracks {
            assert!(t.split_index.is_some());
        }
    }

    #[test]
    fn external_failure_names_the_track() {
        let (dir, paths) = fixture(1, ToyStyle::default());
        let mut cfg = BuildConfig::new(SchemaName::Eight);
        cfg.renderer = RenderMode::External(ExternalRenderer::new("false {midi_in} {wav_out}").unwrap());
        let err = build_dataset(&paths, &dir.path().join("ds"), &cfg).unwrap_err().to_string();
        assert!(err.contains("toy_000"), "{err}");
    }
}
