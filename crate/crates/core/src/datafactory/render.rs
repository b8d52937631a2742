//! Audio rendering: a parametric toy drum kit and an external command hook.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::schema::GmMap;
use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::label::Label;
use crate::smf::{MidiSong, DRUM_CHANNEL};

pub const SAMPLE_RATE: u32 = 44_100;

/// RBJ band-pass biquad (constant 0 dB peak gain).
struct BandPass {
    b0: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl BandPass {
    fn new(center: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * center.min(0.45 * SAMPLE_RATE as f64) / SAMPLE_RATE as f64;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: alpha / a0,
            b2: -alpha / a0,
            a1: -2.0 * w0.cos() / a0,
            a2: (1.0 - alpha) / a0,
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.b2 * self.x2 - self.a1 * self.y1 - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Parameters of one synthetic drum voice.
#[derive(Clone, Debug, PartialEq)]
pub struct Voice {
    /// Tonal partials `(frequency Hz, relative amplitude)`.
    pub partials: Vec<(f64, f64)>,
    /// Start frequency multiplier of an exponential pitch drop (1 = none).
    pub sweep: f64,
    pub tone_decay: f64,
    pub tone_gain: f64,
    pub noise_center: f64,
    pub noise_q: f64,
    pub noise_decay: f64,
    pub noise_gain: f64,
    /// Extra noise bursts after the first (hand clap), spaced 11 ms.
    pub bursts: usize,
}

fn base_voice(instrument: Label) -> Voice {
    use Label::*;
    let v = |partials: &[(f64, f64)], sweep, td, tg, nc, nq, nd, ng| Voice {
        partials: partials.to_vec(),
        sweep,
        tone_decay: td,
        tone_gain: tg,
        noise_center: nc,
        noise_q: nq,
        noise_decay: nd,
        noise_gain: ng,
        bursts: 0,
    };
    match instrument {
        BD => v(&[(55.0, 1.0)], 2.5, 0.12, 1.0, 200.0, 0.7, 0.02, 0.25),
        SD => v(&[(185.0, 1.0), (330.0, 0.4)], 1.3, 0.08, 0.45, 2800.0, 0.6, 0.12, 1.0),
        SS => v(&[(420.0, 1.0)], 1.0, 0.025, 0.5, 3500.0, 1.2, 0.03, 0.6),
        CLP => Voice {
            bursts: 2,
            ..v(&[], 1.0, 0.1, 0.0, 1300.0, 1.0, 0.09, 1.0)
        },
        HT => v(&[(230.0, 1.0)], 1.5, 0.25, 0.9, 600.0, 1.0, 0.05, 0.15),
        MT => v(&[(160.0, 1.0)], 1.5, 0.3, 0.9, 450.0, 1.0, 0.05, 0.15),
        LT => v(&[(105.0, 1.0)], 1.5, 0.35, 1.0, 300.0, 1.0, 0.05, 0.15),
        CHH => v(&[], 1.0, 0.1, 0.0, 9000.0, 1.2, 0.035, 1.5),
        PHH => v(&[], 1.0, 0.1, 0.0, 6500.0, 1.5, 0.05, 0.45),
        OHH => v(&[], 1.0, 0.1, 0.0, 8500.0, 1.0, 0.3, 1.0),
        TB => v(&[(5200.0, 0.3)], 1.0, 0.12, 0.3, 7000.0, 3.0, 0.16, 0.7),
        RD => v(&[(3150.0, 0.5), (4620.0, 0.35), (5890.0, 0.25)], 1.0, 0.5, 0.35, 7500.0, 2.0, 0.04, 1.5),
        RB => v(&[(2450.0, 1.0), (3710.0, 0.6)], 1.0, 0.5, 0.6, 5000.0, 3.0, 0.05, 0.15),
        CB => v(&[(545.0, 1.0), (815.0, 0.8)], 1.0, 0.12, 0.7, 2000.0, 2.0, 0.02, 0.1),
        CRC => v(&[(420.0, 0.1)], 1.0, 0.9, 0.1, 5500.0, 0.5, 1.1, 0.8),
        SPC => v(&[], 1.0, 0.1, 0.0, 7500.0, 0.8, 0.45, 0.7),
        CHC => v(&[(980.0, 0.35), (1530.0, 0.25)], 1.0, 0.7, 0.3, 4200.0, 0.7, 0.8, 0.7),
        CL => v(&[(2480.0, 1.0)], 1.0, 0.035, 0.8, 2500.0, 4.0, 0.01, 0.1),
        TT | HH | BE | CY => v(&[], 1.0, 0.1, 0.0, 1000.0, 1.0, 0.05, 0.0),
    }
}

fn hash_u64(parts: &[u64]) -> u64 {
    // SplitMix64 chain.
    let mut h = 0x243F_6A88_85A3_08D3u64;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// The voice of `instrument` in synthetic soundfont `soundfont_id`: pitch,
/// decay, noise colour and level vary deterministically per soundfont.
pub fn voice(instrument: Label, soundfont_id: u32) -> Voice {
    let mut rng = ChaCha8Rng::seed_from_u64(hash_u64(&[soundfont_id as u64, instrument as u64]));
    let mut v = base_voice(instrument);
    let pitch = 1.0 + 0.12 * rng.gen_range(-1.0..1.0);
    let decay = 1.0 + 0.25 * rng.gen_range(-1.0..1.0);
    let colour = 1.0 + 0.15 * rng.gen_range(-1.0..1.0);
    let level = 1.0 + 0.2 * rng.gen_range(-1.0..1.0);
    for p in &mut v.partials {
        p.0 *= pitch;
    }
    v.tone_decay *= decay;
    v.noise_decay *= decay;
    v.noise_center *= colour;
    v.tone_gain *= level;
    v.noise_gain *= level;
    v
}

/// One-shot sample of a voice; the noise is seeded so each soundfont has a
/// fixed sample per instrument.
pub fn one_shot(v: &Voice, noise_seed: u64) -> Vec<f32> {
    let sr = SAMPLE_RATE as f64;
    let longest = v.tone_decay.max(v.noise_decay) * 6.0 + 0.011 * v.bursts as f64;
    let n = ((longest.min(2.5)) * sr) as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut bp = BandPass::new(v.noise_center, v.noise_q);
    let mut phase = vec![0.0f64; v.partials.len()];
    let norm = v.partials.iter().map(|p| p.1).sum::<f64>().max(1.0);
    let sweep_tau = 0.03;
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let mut tone = 0.0;
            let f_mul = 1.0 + (v.sweep - 1.0) * (-t / sweep_tau).exp();
            for ((f, a), ph) in v.partials.iter().zip(&mut phase) {
                *ph += 2.0 * PI * f * f_mul / sr;
                tone += a * ph.sin();
            }
            let tone = v.tone_gain * tone / norm * (-t / v.tone_decay).exp();
            let mut env = (-t / v.noise_decay).exp();
            for b in 1..=v.bursts {
                let tb = t - 0.011 * b as f64;
                if tb >= 0.0 {
                    env += (-tb / v.noise_decay).exp();
                }
            }
            let noise = v.noise_gain * bp.tick(rng.gen_range(-1.0..1.0)) * env * 2.0;
            let attack = (t / 0.001).min(1.0);
            (attack * (tone + noise)) as f32
        })
        .collect()
}

/// A drum hit to render.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub time: f64,
    pub instrument: Label,
    pub velocity: u8,
}

/// Drum hits of a song (drum channel, GM-mapped instruments only).
pub fn drum_hits(song: &MidiSong, gm: &GmMap) -> Vec<Hit> {
    song.merged_events()
        .into_iter()
        .filter(|e| e.on && e.channel == DRUM_CHANNEL)
        .filter_map(|e| {
            gm.instrument(e.note).map(|instrument| Hit {
                time: song.seconds(e.tick),
                instrument,
                velocity: e.velocity,
            })
        })
        .collect()
}

pub fn n_samples(duration_s: f64) -> usize {
    (duration_s * SAMPLE_RATE as f64).round() as usize
}

/// Sums the kit samples of `soundfont_id` at each hit time, scaled by the
/// velocity, into a buffer of `round(duration_s · 44100)` samples.
pub fn render_drums(hits: &[Hit], soundfont_id: u32, duration_s: f64, seed: u64) -> Vec<f32> {
    let mut out = vec![0.0f32; n_samples(duration_s)];
    let mut kit: BTreeMap<Label, Vec<f32>> = BTreeMap::new();
    for h in hits {
        let sample = kit.entry(h.instrument).or_insert_with(|| {
            one_shot(
                &voice(h.instrument, soundfont_id),
                hash_u64(&[seed, soundfont_id as u64, h.instrument as u64]),
            )
        });
        let start = (h.time * SAMPLE_RATE as f64).round() as usize;
        let gain = 0.35 * (h.velocity as f32 / 127.0).sqrt();
        for (o, &s) in out.iter_mut().skip(start).zip(sample.iter()) {
            *o += gain * s;
        }
    }
    out
}

/// Soft pitched accompaniment from all non-drum notes: a few decaying
/// harmonics with a 10 ms attack and a short release.
pub fn render_accompaniment(song: &MidiSong, duration_s: f64) -> Vec<f32> {
    let sr = SAMPLE_RATE as f64;
    let mut out = vec![0.0f32; n_samples(duration_s)];
    for track in &song.tracks {
        let mut open: BTreeMap<(u8, u8), Vec<(u64, u8)>> = BTreeMap::new();
        for e in track.events.iter().filter(|e| e.channel != DRUM_CHANNEL) {
            let key = (e.channel, e.note);
            if e.on {
                open.entry(key).or_default().push((e.tick, e.velocity));
                continue;
            }
            let Some((on_tick, vel)) = open.get_mut(&key).and_then(|v| (!v.is_empty()).then(|| v.remove(0))) else {
                continue;
            };
            let t0 = song.seconds(on_tick);
            let t1 = song.seconds(e.tick).max(t0 + 0.02);
            let f0 = 440.0 * 2f64.powf((e.note as f64 - 69.0) / 12.0);
            let amp = 0.06 * vel as f64 / 127.0;
            let start = (t0 * sr).round() as usize;
            let len = ((t1 - t0 + 0.08) * sr) as usize;
            for i in 0..len {
                let Some(o) = out.get_mut(start + i) else { break };
                let t = i as f64 / sr;
                let attack = (t / 0.010).min(1.0);
                let release = if t > t1 - t0 { (-(t - (t1 - t0)) / 0.02).exp() } else { 1.0 };
                let env = attack * release * (-t / 1.5).exp();
                let w = 2.0 * PI * f0 * t;
                let s = w.sin() + 0.3 * (2.0 * w).sin() + 0.1 * (3.0 * w).sin();
                *o += (amp * env * s) as f32;
            }
        }
    }
    out
}

/// Renders `(solo, mix)` for a song with the toy kit.
pub fn render_toy(song: &MidiSong, gm: &GmMap, soundfont_id: u32, duration_s: f64, seed: u64) -> (AudioBuffer, AudioBuffer) {
    let solo = render_drums(&drum_hits(song, gm), soundfont_id, duration_s, seed);
    let acc = render_accompaniment(song, duration_s);
    let mix: Vec<f32> = solo.iter().zip(&acc).map(|(a, b)| a + b).collect();
    (
        AudioBuffer::new(solo, SAMPLE_RATE).expect("valid rate"),
        AudioBuffer::new(mix, SAMPLE_RATE).expect("valid rate"),
    )
}

/// Renderer invoked as a command; `{midi_in}` and `{wav_out}` in the
/// whitespace-separated template are replaced by the file paths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExternalRenderer {
    pub template: String,
}

impl ExternalRenderer {
    pub fn new(template: impl Into<String>) -> Result<Self> {
        let template = template.into();
        if template.split_whitespace().next().is_none() {
            return Err(Error::Config("empty renderer command".into()));
        }
        if !template.contains("{midi_in}") || !template.contains("{wav_out}") {
            return Err(Error::Config("renderer command needs {midi_in} and {wav_out} placeholders".into()));
        }
        Ok(Self { template })
    }

    pub fn render(&self, midi_in: &Path, wav_out: &Path) -> Result<()> {
        let args: Vec<String> = self
            .template
            .split_whitespace()
            .map(|a| {
                a.replace("{midi_in}", &midi_in.to_string_lossy())
                    .replace("{wav_out}", &wav_out.to_string_lossy())
            })
            .collect();
        let out = Command::new(&args[0])
            .args(&args[1..])
            .output()
            .map_err(|e| Error::Render(format!("cannot run `{}`: {e}", args[0])))?;
        if !out.status.success() {
            return Err(Error::Render(format!(
                "`{}` exited with {}\nstdout: {}\nstderr: {}",
                args.join(" "),
                out.status,
                String::from_utf8_lossy(&out.stdout).trim(),
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        if !wav_out.exists() {
            return Err(Error::Render(format!("`{}` did not write {}", args[0], wav_out.display())));
        }
        Ok(())
    }
}
