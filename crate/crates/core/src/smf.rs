//! Standard MIDI File reading and writing.
//!
//! Files are normalised to note events with absolute ticks plus song-wide
//! tempo and time-signature maps. Everything else (controllers, program
//! changes, sysex, unknown meta events) is skipped.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};

pub const DEFAULT_TEMPO: u32 = 500_000;
pub const DRUM_CHANNEL: u8 = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoteEvent {
    pub tick: u64,
    pub channel: u8,
    pub note: u8,
    pub velocity: u8,
    /// False for note-off and for note-on with velocity 0.
    pub on: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Track {
    pub events: Vec<NoteEvent>,
    /// Tick of the end-of-track marker.
    pub end_tick: u64,
}

impl Track {
    pub fn note_on_count(&self) -> usize {
        self.events.iter().filter(|e| e.on).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimeSig {
    pub tick: u64,
    pub numerator: u8,
    pub denominator: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MidiSong {
    pub format: u16,
    pub ticks_per_quarter: u16,
    pub tracks: Vec<Track>,
    /// Strictly increasing `(tick, µs per quarter)`, always starting at 0.
    pub tempo_map: Vec<(u64, u32)>,
    /// Strictly increasing, always starting at 0.
    pub timesig_map: Vec<TimeSig>,
}

impl MidiSong {
    /// An empty format-1 song at 120 bpm in 4/4.
    pub fn new(ticks_per_quarter: u16) -> Self {
        Self {
            format: 1,
            ticks_per_quarter,
            tracks: Vec::new(),
            tempo_map: vec![(0, DEFAULT_TEMPO)],
            timesig_map: vec![TimeSig {
                tick: 0,
                numerator: 4,
                denominator: 4,
            }],
        }
    }

    pub fn end_tick(&self) -> u64 {
        self.tracks.iter().map(|t| t.end_tick).max().unwrap_or(0)
    }

    pub fn duration_s(&self) -> f64 {
        self.seconds(self.end_tick())
    }

    pub fn seconds(&self, tick: u64) -> f64 {
        ticks_to_seconds(&self.tempo_map, self.ticks_per_quarter, tick)
    }

    pub fn note_on_count(&self) -> usize {
        self.tracks.iter().map(Track::note_on_count).sum()
    }

    /// All note events of all tracks, stably ordered by tick.
    pub fn merged_events(&self) -> Vec<NoteEvent> {
        let mut all: Vec<NoteEvent> = self.tracks.iter().flat_map(|t| t.events.iter().copied()).collect();
        all.sort_by_key(|e| e.tick);
        all
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(Error::io(path))?;
        parse_smf(&bytes).map_err(|e| match e {
            Error::UnsupportedFormat(_) => e,
            other => Error::file(path, other.to_string()),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, write_smf(self)).map_err(Error::io(path))
    }
}

/// Decodes a variable-length quantity, returning the value and its byte count.
pub fn read_vlq(bytes: &[u8]) -> Result<(u32, usize)> {
    let mut v: u32 = 0;
    for (i, &b) in bytes.iter().take(4).enumerate() {
        v = (v << 7) | (b & 0x7f) as u32;
        if b & 0x80 == 0 {
            return Ok((v, i + 1));
        }
    }
    Err(Error::midi(0, "unterminated variable-length quantity"))
}

pub fn write_vlq(mut v: u32, out: &mut Vec<u8>) {
    let mut buf = [0u8; 5];
    let mut n = 0;
    loop {
        buf[n] = (v & 0x7f) as u8;
        n += 1;
        v >>= 7;
        if v == 0 {
            break;
        }
    }
    for i in (0..n).rev() {
        out.push(if i > 0 { buf[i] | 0x80 } else { buf[i] });
    }
}

/// Seconds at `tick`, integrating over tempo segments. The sum of
/// `ticks × µs/qn` is accumulated exactly before the final division.
pub fn ticks_to_seconds(tempo_map: &[(u64, u32)], tpq: u16, tick: u64) -> f64 {
    let mut acc: u128 = 0;
    let mut pos = 0u64;
    let mut tempo = DEFAULT_TEMPO;
    for &(t, us) in tempo_map {
        if t >= tick {
            break;
        }
        acc += (t - pos) as u128 * tempo as u128;
        pos = t;
        tempo = us;
    }
    acc += (tick - pos) as u128 * tempo as u128;
    acc as f64 / (tpq as f64 * 1e6)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::midi(self.pos, format!("truncated {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2, "header")?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32> {
        let start = self.pos;
        let (v, n) = read_vlq(&self.buf[self.pos..]).map_err(|_| {
            if self.buf.len() - start < 4 && self.buf[start..].iter().all(|b| b & 0x80 != 0) {
                Error::midi(start, "truncated variable-length quantity")
            } else {
                Error::midi(start, "variable-length quantity longer than 4 bytes")
            }
        })?;
        self.pos += n;
        Ok(v)
    }

    fn data_byte(&mut self) -> Result<u8> {
        let at = self.pos;
        let b = self.u8("event")?;
        if b & 0x80 != 0 {
            return Err(Error::midi(at, format!("status byte {b:#04x} where data byte expected")));
        }
        Ok(b)
    }
}

struct RawTrack {
    track: Track,
    tempos: Vec<(u64, u32)>,
    timesigs: Vec<TimeSig>,
}

fn parse_track(data: &[u8], base: usize) -> Result<RawTrack> {
    let mut c = Cursor { buf: data, pos: 0 };
    let err_at = |c: &Cursor, m: &str| Error::midi(base + c.pos, m);
    let mut tick = 0u64;
    let mut running: Option<u8> = None;
    let mut out = RawTrack {
        track: Track::default(),
        tempos: Vec::new(),
        timesigs: Vec::new(),
    };
    let mut ended = false;
    while c.pos < data.len() {
        tick += c.vlq().map_err(|e| rebase(e, base))? as u64;
        let at = c.pos;
        let first = c.u8("event").map_err(|e| rebase(e, base))?;
        let status = if first & 0x80 != 0 {
            first
        } else {
            c.pos = at;
            running.ok_or_else(|| Error::midi(base + at, "running status without a preceding status byte"))?
        };
        match status {
            0x80..=0xEF => {
                running = Some(status);
                let kind = status & 0xF0;
                let channel = status & 0x0F;
                let d1 = c.data_byte().map_err(|e| rebase(e, base))?;
                let d2 = if matches!(kind, 0xC0 | 0xD0) {
                    0
                } else {
                    c.data_byte().map_err(|e| rebase(e, base))?
                };
                if kind == 0x80 || kind == 0x90 {
                    out.track.events.push(NoteEvent {
                        tick,
                        channel,
                        note: d1,
                        velocity: d2,
                        on: kind == 0x90 && d2 > 0,
                    });
                }
            }
            0xF0 | 0xF7 => {
                running = None;
                let len = c.vlq().map_err(|e| rebase(e, base))? as usize;
                c.take(len, "sysex").map_err(|e| rebase(e, base))?;
            }
            0xFF => {
                running = None;
                let kind = c.u8("meta event").map_err(|e| rebase(e, base))?;
                let len = c.vlq().map_err(|e| rebase(e, base))? as usize;
                let body = c.take(len, "meta event").map_err(|e| rebase(e, base))?;
                match kind {
                    0x2F => {
                        ended = true;
                        break;
                    }
                    0x51 if len == 3 => {
                        let us = u32::from_be_bytes([0, body[0], body[1], body[2]]);
                        if us == 0 {
                            return Err(err_at(&c, "zero tempo"));
                        }
                        out.tempos.push((tick, us));
                    }
                    0x58 if len >= 2 => out.timesigs.push(TimeSig {
                        tick,
                        numerator: body[0].max(1),
                        denominator: 1u32.checked_shl(body[1] as u32).unwrap_or(4),
                    }),
                    _ => {}
                }
            }
            _ => return Err(Error::midi(base + at, format!("unexpected status byte {status:#04x}"))),
        }
    }
    if !ended {
        warn!("track at byte {base} has no end-of-track marker");
    }
    out.track.end_tick = tick;
    close_orphans(&mut out.track);
    Ok(out)
}

fn rebase(e: Error, base: usize) -> Error {
    match e {
        Error::MidiParse { offset, message } => Error::MidiParse {
            offset: offset + base,
            message,
        },
        other => other,
    }
}

fn close_orphans(track: &mut Track) {
    let mut open = [[0u32; 128]; 16];
    for e in &track.events {
        let slot = &mut open[e.channel as usize][e.note as usize];
        if e.on {
            *slot += 1;
        } else {
            *slot = slot.saturating_sub(1);
        }
    }
    for (ch, notes) in open.iter().enumerate() {
        for (note, &n) in notes.iter().enumerate() {
            if n > 0 {
                warn!("closing {n} unterminated note(s) {note} on channel {ch} at end of track");
            }
            for _ in 0..n {
                track.events.push(NoteEvent {
                    tick: track.end_tick,
                    channel: ch as u8,
                    note: note as u8,
                    velocity: 0,
                    on: false,
                });
            }
        }
    }
}

/// Keeps the last entry per tick and sorts by tick; inserts `default` at
/// tick 0 when nothing is there.
fn normalise_map<T: Copy>(mut items: Vec<(u64, T)>, default: T) -> Vec<(u64, T)> {
    items.sort_by_key(|i| i.0);
    let mut out: Vec<(u64, T)> = Vec::with_capacity(items.len() + 1);
    for it in items {
        match out.last_mut() {
            Some(last) if last.0 == it.0 => *last = it,
            _ => out.push(it),
        }
    }
    if out.first().map_or(true, |f| f.0 != 0) {
        out.insert(0, (0, default));
    }
    out
}

pub fn parse_smf(bytes: &[u8]) -> Result<MidiSong> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if bytes.len() < 4 || &bytes[..4] != b"MThd" {
        return Err(Error::midi(0, "missing MThd header"));
    }
    c.pos = 4;
    let hlen = c.u32("header")? as usize;
    if hlen < 6 {
        return Err(Error::midi(4, format!("header length {hlen} < 6")));
    }
    let format = c.u16()?;
    let ntrks = c.u16()?;
    let division = c.u16()?;
    c.take(hlen - 6, "header")?;
    if format == 2 {
        return Err(Error::UnsupportedFormat(2));
    }
    if format > 2 {
        return Err(Error::midi(8, format!("unknown format {format}")));
    }
    if division & 0x8000 != 0 {
        return Err(Error::midi(12, "SMPTE time division is not supported"));
    }
    if division == 0 {
        return Err(Error::midi(12, "zero ticks per quarter note"));
    }
    let mut raw = Vec::new();
    while c.pos < bytes.len() && raw.len() < ntrks as usize {
        let at = c.pos;
        let id = c.take(4, "chunk header")?;
        let len = c.u32("chunk header")? as usize;
        let body_at = c.pos;
        let body = c.take(len, "chunk")?;
        if id == b"MTrk" {
            raw.push(parse_track(body, body_at)?);
        } else {
            warn!("skipping unknown chunk at byte {at}");
        }
    }
    if raw.len() < ntrks as usize {
        return Err(Error::midi(c.pos, format!("expected {ntrks} tracks, found {}", raw.len())));
    }
    let tempos = raw.iter().flat_map(|r| r.tempos.iter().copied()).collect();
    let sigs = raw
        .iter()
        .flat_map(|r| r.timesigs.iter().map(|s| (s.tick, (s.numerator, s.denominator))))
        .collect();
    Ok(MidiSong {
        format,
        ticks_per_quarter: division,
        tempo_map: normalise_map(tempos, DEFAULT_TEMPO),
        timesig_map: normalise_map(sigs, (4, 4))
            .into_iter()
            .map(|(tick, (numerator, denominator))| TimeSig {
                tick,
                numerator,
                denominator,
            })
            .collect(),
        tracks: raw.into_iter().map(|r| r.track).collect(),
    })
}

/// Partitions the song by channel: channel 9 to the first song, the rest to
/// the second. Both keep the tempo and time-signature maps and the track
/// layout.
pub fn split_drums(song: &MidiSong) -> (MidiSong, MidiSong) {
    let part = |drums: bool| MidiSong {
        tracks: song
            .tracks
            .iter()
            .map(|t| Track {
                events: t
                    .events
                    .iter()
                    .filter(|e| (e.channel == DRUM_CHANNEL) == drums)
                    .copied()
                    .collect(),
                end_tick: t.end_tick,
            })
            .collect(),
        ..song.clone()
    };
    (part(true), part(false))
}

/// Serialises the normalised song. Tempo and time-signature events go into
/// the first track; note-offs are written as 0x80 messages.
pub fn write_smf(song: &MidiSong) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&song.format.to_be_bytes());
    let n_tracks = song.tracks.len().max(1);
    out.extend_from_slice(&(n_tracks as u16).to_be_bytes());
    out.extend_from_slice(&song.ticks_per_quarter.to_be_bytes());
    let empty = Track::default();
    for ti in 0..n_tracks {
        let track = song.tracks.get(ti).unwrap_or(&empty);
        let mut items: Vec<(u64, Vec<u8>)> = Vec::new();
        if ti == 0 {
            for &(tick, us) in &song.tempo_map {
                let b = us.to_be_bytes();
                items.push((tick, vec![0xFF, 0x51, 3, b[1], b[2], b[3]]));
            }
            for s in &song.timesig_map {
                let pow = s.denominator.trailing_zeros() as u8;
                items.push((s.tick, vec![0xFF, 0x58, 4, s.numerator, pow, 24, 8]));
            }
        }
        for e in &track.events {
            let status = if e.on { 0x90 } else { 0x80 } | (e.channel & 0x0F);
            items.push((e.tick, vec![status, e.note & 0x7F, e.velocity & 0x7F]));
        }
        items.sort_by_key(|i| i.0);
        let mut body = Vec::new();
        let mut last = 0u64;
        for (tick, bytes) in items {
            write_vlq((tick - last) as u32, &mut body);
            body.extend_from_slice(&bytes);
            last = tick;
        }
        let end = track.end_tick.max(last);
        write_vlq((end - last) as u32, &mut body);
        body.extend_from_slice(&[0xFF, 0x2F, 0]);
        out.extend_from_slice(b"MTrk");
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
    }
    out
}

/// One line per fact: header, maps, then per-track events.
pub fn dump(song: &MidiSong) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "format {}", song.format);
    let _ = writeln!(s, "tpq {}", song.ticks_per_quarter);
    for &(t, us) in &song.tempo_map {
        let _ = writeln!(s, "tempo {t} {us}");
    }
    for ts in &song.timesig_map {
        let _ = writeln!(s, "timesig {} {} {}", ts.tick, ts.numerator, ts.denominator);
    }
    for (i, tr) in song.tracks.iter().enumerate() {
        let _ = writeln!(s, "track {i} end {}", tr.end_tick);
        for e in &tr.events {
            let kind = if e.on { "on" } else { "off" };
            let _ = writeln!(s, "{kind} {} {} {} {}", e.tick, e.channel, e.note, e.velocity);
        }
    }
    s
}

/// Inverse of [`dump`].
pub fn parse_dump(text: &str) -> Result<MidiSong> {
    let mut song = MidiSong::new(480);
    song.tempo_map.clear();
    song.timesig_map.clear();
    for (ln, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        let bad = || Error::Invalid(format!("dump line {}: `{line}`", ln + 1));
        let num = |i: usize| -> Result<u64> { f.get(i).and_then(|v| v.parse().ok()).ok_or_else(bad) };
        match (f[0], f.len()) {
            ("format", 2) => song.format = num(1)? as u16,
            ("tpq", 2) => song.ticks_per_quarter = num(1)? as u16,
            ("tempo", 3) => song.tempo_map.push((num(1)?, num(2)? as u32)),
            ("timesig", 4) => song.timesig_map.push(TimeSig {
                tick: num(1)?,
                numerator: num(2)? as u8,
                denominator: num(3)? as u32,
            }),
            ("track", 4) if f[2] == "end" => song.tracks.push(Track {
                events: Vec::new(),
                end_tick: num(3)?,
            }),
            ("on" | "off", 5) => {
                let e = NoteEvent {
                    tick: num(1)?,
                    channel: num(2)? as u8,
                    note: num(3)? as u8,
                    velocity: num(4)? as u8,
                    on: f[0] == "on",
                };
                song.tracks.last_mut().ok_or_else(bad)?.events.push(e);
            }
            _ => return Err(bad()),
        }
    }
    Ok(song)
}
