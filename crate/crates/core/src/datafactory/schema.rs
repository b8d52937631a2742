//! Class schemas and the General MIDI note mapping.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;

const GM_MAP_CSV: &str = include_str!("../../data/gm_map.csv");
const SWAP_RULES_CSV: &str = include_str!("../../data/swap_rules.csv");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemaName {
    #[serde(rename = "3")]
    Three,
    #[serde(rename = "8")]
    Eight,
    #[serde(rename = "18")]
    Eighteen,
}

impl SchemaName {
    pub const ALL: [SchemaName; 3] = [SchemaName::Three, SchemaName::Eight, SchemaName::Eighteen];

    pub fn n_classes(self) -> usize {
        match self {
            SchemaName::Three => 3,
            SchemaName::Eight => 8,
            SchemaName::Eighteen => 18,
        }
    }

    pub fn from_n_classes(n: usize) -> Result<Self> {
        match n {
            3 => Ok(SchemaName::Three),
            8 => Ok(SchemaName::Eight),
            18 => Ok(SchemaName::Eighteen),
            _ => Err(Error::Config(format!("no schema with {n} classes (expected 3, 8 or 18)"))),
        }
    }

    pub fn classes(self) -> Vec<Label> {
        use Label::*;
        match self {
            SchemaName::Three => vec![BD, SD, HH],
            SchemaName::Eight => vec![BD, SD, TT, HH, RD, BE, CY, CL],
            SchemaName::Eighteen => Label::INSTRUMENTS.to_vec(),
        }
    }

    /// Class of an instrument under this schema, if it is kept.
    pub fn group(self, instrument: Label) -> Option<Label> {
        use Label::*;
        match self {
            SchemaName::Eighteen => instrument.is_instrument().then_some(instrument),
            SchemaName::Eight => match instrument {
                BD | SD | RD | CL => Some(instrument),
                HT | MT | LT => Some(TT),
                CHH | PHH | OHH => Some(HH),
                RB | CB => Some(BE),
                CRC | SPC | CHC => Some(CY),
                _ => None,
            },
            SchemaName::Three => match instrument {
                BD | SD => Some(instrument),
                CHH | PHH | OHH => Some(HH),
                _ => None,
            },
        }
    }
}

impl fmt::Display for SchemaName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.n_classes())
    }
}

impl FromStr for SchemaName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemaName::from_n_classes(s.trim().parse().map_err(|_| Error::Config(format!("bad schema `{s}`")))?)
    }
}

/// Note number → instrument table.
#[derive(Clone, Debug, PartialEq)]
pub struct GmMap {
    notes: [Option<Label>; 128],
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .skip(1)
}

impl GmMap {
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut notes = [None; 128];
        for (ln, line) in data_lines(text) {
            let mut f = line.split(',');
            let bad = |m: &str| Error::Config(format!("gm map line {ln}: {m}"));
            let note: usize = f
                .next()
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| bad("bad note number"))?;
            if note > 127 {
                return Err(bad("note out of range"));
            }
            let label: Label = f.next().ok_or_else(|| bad("missing instrument"))?.trim().parse()?;
            if !label.is_instrument() {
                return Err(bad("group labels are not instruments"));
            }
            if notes[note].is_some() {
                return Err(bad("duplicate note"));
            }
            notes[note] = Some(label);
        }
        Ok(Self { notes })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::parse_csv(&text).map_err(|e| Error::file(path, e.to_string()))
    }

    pub fn instrument(&self, note: u8) -> Option<Label> {
        self.notes.get(note as usize).copied().flatten()
    }
}

impl Default for GmMap {
    fn default() -> Self {
        Self::parse_csv(GM_MAP_CSV).expect("bundled gm map is valid")
    }
}

/// Note written for an instrument when re-synthesising MIDI.
pub fn canonical_note(instrument: Label) -> Option<u8> {
    use Label::*;
    Some(match instrument {
        BD => 36,
        SD => 38,
        SS => 37,
        CLP => 39,
        HT => 50,
        MT => 47,
        LT => 43,
        CHH => 42,
        PHH => 44,
        OHH => 46,
        TB => 54,
        RD => 51,
        RB => 53,
        CB => 56,
        CRC => 49,
        SPC => 55,
        CHC => 52,
        CL => 75,
        TT | HH | BE | CY => return None,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelSchema {
    pub name: SchemaName,
    pub classes: Vec<Label>,
    gm_map: GmMap,
}

impl LabelSchema {
    pub fn new(name: SchemaName) -> Self {
        Self::with_gm_map(name, GmMap::default())
    }

    pub fn with_gm_map(name: SchemaName, gm_map: GmMap) -> Self {
        Self {
            name,
            classes: name.classes(),
            gm_map,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn index_of(&self, class: Label) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }

    pub fn gm_map(&self) -> &GmMap {
        &self.gm_map
    }

    pub fn instrument_of(&self, note: u8) -> Option<Label> {
        self.gm_map.instrument(note)
    }

    pub fn group(&self, instrument: Label) -> Option<Label> {
        self.name.group(instrument)
    }

    /// Class for a MIDI note number, `None` when unmapped in this schema.
    pub fn map_note(&self, note: i32) -> Result<Option<Label>> {
        let n = u8::try_from(note)
            .ok()
            .filter(|&n| n < 128)
            .ok_or_else(|| Error::Invalid(format!("MIDI note {note} out of range 0..=127")))?;
        Ok(self.gm_map.instrument(n).and_then(|i| self.group(i)))
    }
}

pub fn map_gm_label(note: i32, schema: &LabelSchema) -> Result<Option<Label>> {
    schema.map_note(note)
}

/// An exchangeable instrument pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapRule {
    pub a: Label,
    pub b: Label,
    #[serde(default)]
    pub note: String,
}

impl SwapRule {
    pub fn new(a: Label, b: Label) -> Self {
        Self {
            a,
            b,
            note: String::new(),
        }
    }

    /// Whether swapping changes class counts under `schema`: both
    /// instruments must be kept and land in different classes.
    pub fn applies_to(&self, schema: SchemaName) -> bool {
        matches!((schema.group(self.a), schema.group(self.b)), (Some(x), Some(y)) if x != y)
    }

    pub fn parse_csv(text: &str) -> Result<Vec<SwapRule>> {
        let mut rules: Vec<SwapRule> = Vec::new();
        for (ln, line) in data_lines(text) {
            let f: Vec<&str> = line.splitn(3, ',').map(str::trim).collect();
            if f.len() < 2 {
                return Err(Error::Config(format!("swap rule line {ln}: expected instrument_a,instrument_b[,note]")));
            }
            let (a, b): (Label, Label) = (f[0].parse()?, f[1].parse()?);
            if !a.is_instrument() || !b.is_instrument() || a == b {
                return Err(Error::Config(format!("swap rule line {ln}: need two distinct instruments")));
            }
            if rules.iter().any(|r| (r.a, r.b) == (a, b) || (r.a, r.b) == (b, a)) {
                return Err(Error::Config(format!("swap rule line {ln}: duplicate pair {a}/{b}")));
            }
            rules.push(SwapRule {
                a,
                b,
                note: f.get(2).unwrap_or(&"").to_string(),
            });
        }
        Ok(rules)
    }

    pub fn load(path: &Path) -> Result<Vec<SwapRule>> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        Self::parse_csv(&text).map_err(|e| Error::file(path, e.to_string()))
    }
}

pub fn default_swap_rules() -> Vec<SwapRule> {
    SwapRule::parse_csv(SWAP_RULES_CSV).expect("bundled swap rules are valid")
}
