//! Class balancing by exchanging instruments within tracks.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{SwapLogEntry, TrackRecord};
use super::schema::{canonical_note, GmMap, SchemaName, SwapRule};
use crate::label::Label;
use crate::smf::{write_smf, MidiSong, DRUM_CHANNEL};

/// Corpus-level onset counts per class of `schema`, over mix records.
pub fn class_counts(records: &[TrackRecord], schema: SchemaName) -> BTreeMap<Label, usize> {
    let mut out: BTreeMap<Label, usize> = schema.classes().into_iter().map(|c| (c, 0)).collect();
    for r in records.iter().filter(|r| !r.is_solo) {
        for (&i, &n) in &r.onset_counts {
            if let Some(c) = schema.group(i) {
                *out.get_mut(&c).unwrap() += n;
            }
        }
    }
    out
}

/// Sum of squared deviations of the class counts from their mean.
pub fn squared_deviation(counts: &BTreeMap<Label, usize>) -> f64 {
    let n = counts.len().max(1) as f64;
    let mean = counts.values().sum::<usize>() as f64 / n;
    counts.values().map(|&c| (c as f64 - mean).powi(2)).sum()
}

/// Classes touched by at least one rule that applies to `schema`.
pub fn swappable_classes(rules: &[SwapRule], schema: SchemaName) -> Vec<Label> {
    let mut v: Vec<Label> = rules
        .iter()
        .filter(|r| r.applies_to(schema))
        .flat_map(|r| [schema.group(r.a).unwrap(), schema.group(r.b).unwrap()])
        .collect();
    v.sort();
    v.dedup();
    v
}

fn swap_counts(counts: &mut BTreeMap<Label, usize>, rule: &SwapRule) {
    let na = counts.remove(&rule.a).unwrap_or(0);
    let nb = counts.remove(&rule.b).unwrap_or(0);
    if nb > 0 {
        counts.insert(rule.a, nb);
    }
    if na > 0 {
        counts.insert(rule.b, na);
    }
}

/// Greedy balancing. Each step applies the (mix track, rule) pair that most
/// reduces the squared deviation of the class counts from their mean; every
/// pair is used at most once and ties go to the earlier pair of a
/// seed-shuffled order. Solo twins receive the same swaps as their mixes.
pub fn balance_corpus(
    records: &[TrackRecord],
    schema: SchemaName,
    rules: &[SwapRule],
    rng_seed: u64,
) -> (Vec<TrackRecord>, Vec<SwapLogEntry>) {
    let mut out = records.to_vec();
    let rules: Vec<&SwapRule> = rules.iter().filter(|r| r.applies_to(schema)).collect();
    let mut candidates: Vec<(usize, usize)> = out
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.is_solo)
        .flat_map(|(ti, _)| (0..rules.len()).map(move |ri| (ti, ri)))
        .collect();
    candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let mut counts: BTreeMap<Label, i64> = class_counts(&out, schema).into_iter().map(|(k, v)| (k, v as i64)).collect();
    let mut used = vec![false; candidates.len()];
    let mut log = Vec::new();
    loop {
        let mut best: Option<(usize, i64)> = None;
        for (ci, &(ti, ri)) in candidates.iter().enumerate() {
            if used[ci] {
                continue;
            }
            let rule = rules[ri];
            let t = &out[ti].onset_counts;
            let d = *t.get(&rule.a).unwrap_or(&0) as i64 - *t.get(&rule.b).unwrap_or(&0) as i64;
            if d == 0 {
                continue;
            }
            let (ca, cb) = (counts[&schema.group(rule.a).unwrap()], counts[&schema.group(rule.b).unwrap()]);
            let change = 2 * d * (cb - ca + d);
            if change < 0 && best.map_or(true, |(_, b)| change < b) {
                best = Some((ci, change));
            }
        }
        let Some((ci, _)) = best else { break };
        used[ci] = true;
        let (ti, ri) = candidates[ci];
        let rule = rules[ri];
        let t = &out[ti].onset_counts;
        let d = *t.get(&rule.a).unwrap_or(&0) as i64 - *t.get(&rule.b).unwrap_or(&0) as i64;
        *counts.get_mut(&schema.group(rule.a).unwrap()).unwrap() -= d;
        *counts.get_mut(&schema.group(rule.b).unwrap()).unwrap() += d;
        swap_counts(&mut out[ti].onset_counts, rule);
        log.push(SwapLogEntry {
            track_id: out[ti].id.clone(),
            rule: rule.clone(),
        });
    }
    let swaps_of = |id: &str| -> Vec<&SwapRule> { log.iter().filter(|e| e.track_id == id).map(|e| &e.rule).collect() };
    for r in out.iter_mut().filter(|r| r.is_solo) {
        if let Some(mix) = r.pair_id.clone() {
            for rule in swaps_of(&mix) {
                swap_counts(&mut r.onset_counts, rule);
            }
        }
    }
    (out, log)
}

/// Applies instrument swaps to the drum channel. Swapped notes are written
/// with each instrument's canonical GM note; everything else is untouched.
pub fn remap_song(song: &MidiSong, swaps: &[&SwapRule], gm: &GmMap) -> MidiSong {
    let mut out = song.clone();
    for t in &mut out.tracks {
        for e in t.events.iter_mut().filter(|e| e.channel == DRUM_CHANNEL) {
            let Some(mut inst) = gm.instrument(e.note) else { continue };
            let before = inst;
            for r in swaps {
                if inst == r.a {
                    inst = r.b;
                } else if inst == r.b {
                    inst = r.a;
                }
            }
            if inst != before {
                e.note = canonical_note(inst).expect("instrument has a canonical note");
            }
        }
    }
    out
}

pub fn write_remapped_midi(song: &MidiSong, swaps: &[&SwapRule], gm: &GmMap) -> Vec<u8> {
    write_smf(&remap_song(song, swaps, gm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datafactory::annotate::instrument_counts;
    use crate::datafactory::manifest::record;
    use crate::datafactory::schema::{default_swap_rules, LabelSchema};
    use crate::smf::{parse_smf, split_drums, NoteEvent, Track};
    use Label::*;

    fn rec(id: &str, counts: &[(Label, usize)]) -> TrackRecord {
        let mut r = record(id, 60.0);
        r.onset_counts = counts.iter().copied().collect();
        r
    }

    #[test]
    fn empty_rules_identity() {
        let recs = vec![rec("a", &[(CHH, 100), (RD, 1)])];
        let (out, log) = balance_corpus(&recs, SchemaName::Eight, &[], 1);
        assert_eq!(out, recs);
        assert!(log.is_empty());
    }

    #[test]
    fn chh_rd_ratio_drops_and_totals_hold() {
        let recs: Vec<TrackRecord> = (0..10).map(|i| rec(&format!("t{i}"), &[(CHH, 100), (RD, 1), (BD, 50), (SD, 50)])).collect();
        let rules = vec![SwapRule::new(CHH, RD)];
        let schema = SchemaName::Eighteen;
        let before = class_counts(&recs, schema);
        let (out, log) = balance_corpus(&recs, schema, &rules, 3);
        let after = class_counts(&out, schema);
        let ratio = |c: &BTreeMap<Label, usize>| c[&CHH].max(c[&RD]) as f64 / c[&CHH].min(c[&RD]) as f64;
        assert!(ratio(&after) < ratio(&before));
        assert_eq!(before.values().sum::<usize>(), after.values().sum::<usize>());
        assert!(!log.is_empty());
    }

    #[test]
    fn deviation_never_increases_and_seed_is_deterministic() {
        let recs: Vec<TrackRecord> = (0..12)
            .map(|i| rec(&format!("t{i}"), &[(CHH, 80 + i), (RD, i % 3), (PHH, 10), (RB, 1), (OHH, 5), (CRC, 3), (BD, 60)]))
            .collect();
        let rules = default_swap_rules();
        let (a, la) = balance_corpus(&recs, SchemaName::Eight, &rules, 9);
        let (b, lb) = balance_corpus(&recs, SchemaName::Eight, &rules, 9);
        assert_eq!((a.clone(), la.clone()), (b, lb));
        // Replay the log step by step.
        let mut cur = recs.clone();
        let mut dev = squared_deviation(&class_counts(&cur, SchemaName::Eight));
        for e in &la {
            let t = cur.iter_mut().find(|r| r.id == e.track_id).unwrap();
            swap_counts(&mut t.onset_counts, &e.rule);
            let d = squared_deviation(&class_counts(&cur, SchemaName::Eight));
            assert!(d <= dev);
            dev = d;
        }
        assert_eq!(cur, a);
    }

    #[test]
    fn solo_twin_follows_mix() {
        let mut mix = rec("m", &[(CHH, 40), (RD, 0), (BD, 10)]);
        mix.pair_id = Some("m_solo".into());
        let mut solo = rec("m_solo", &[(CHH, 40), (RD, 0), (BD, 10)]);
        solo.is_solo = true;
        solo.pair_id = Some("m".into());
        let other = rec("n", &[(CHH, 20), (BD, 10)]);
        for seed in 0..8 {
            let (out, log) = balance_corpus(&[mix.clone(), solo.clone(), other.clone()], SchemaName::Eighteen, &[SwapRule::new(CHH, RD)], seed);
            assert_eq!(log.len(), 1);
            assert_eq!(out[0].onset_counts, out[1].onset_counts);
            let swapped_m = log[0].track_id == "m";
            assert_eq!(out[1].onset_counts.get(&RD).copied().unwrap_or(0), if swapped_m { 40 } else { 0 });
        }
    }

    fn song() -> MidiSong {
        let mut s = MidiSong::new(96);
        let mut ev = Vec::new();
        for (i, n) in [42u8, 42, 42, 51, 36, 46].iter().enumerate() {
            ev.push(NoteEvent { tick: i as u64 * 48, channel: 9, note: *n, velocity: 90, on: true });
            ev.push(NoteEvent { tick: i as u64 * 48 + 10, channel: 9, note: *n, velocity: 0, on: false });
        }
        ev.push(NoteEvent { tick: 0, channel: 0, note: 42, velocity: 70, on: true });
        ev.push(NoteEvent { tick: 90, channel: 0, note: 42, velocity: 0, on: false });
        ev.sort_by_key(|e| e.tick);
        s.tracks.push(Track { events: ev, end_tick: 400 });
        s
    }

    #[test]
    fn remap_round_trips() {
        let s = song();
        let gm = GmMap::default();
        assert_eq!(parse_smf(&write_remapped_midi(&s, &[], &gm)).unwrap(), s);
        let rule = SwapRule::new(CHH, RD);
        let back = parse_smf(&write_remapped_midi(&s, &[&rule], &gm)).unwrap();
        let s18 = LabelSchema::new(SchemaName::Eighteen);
        let c0 = instrument_counts(&split_drums(&s).0, &s18);
        let c1 = instrument_counts(&split_drums(&back).0, &s18);
        assert_eq!(c1[&CHH], c0[&RD]);
        assert_eq!(c1[&RD], c0[&CHH]);
        assert_eq!(c1[&BD], c0[&BD]);
        assert_eq!(split_drums(&back).1, split_drums(&s).1);
    }
}
