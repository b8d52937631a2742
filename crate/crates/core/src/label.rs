//! Drum instrument class labels.
//!
//! The 18 fine-grained instruments plus the group labels that only appear in
//! the coarser schemas (`TT`, `HH`, `BE`, `CY`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    BD,
    SD,
    SS,
    CLP,
    HT,
    MT,
    LT,
    CHH,
    PHH,
    OHH,
    TB,
    RD,
    RB,
    CB,
    CRC,
    SPC,
    CHC,
    CL,
    // Group labels (8-class schema).
    TT,
    HH,
    BE,
    CY,
}

impl Label {
    /// The 18 instrument labels in table order.
    pub const INSTRUMENTS: [Label; 18] = [
        Label::BD,
        Label::SD,
        Label::SS,
        Label::CLP,
        Label::HT,
        Label::MT,
        Label::LT,
        Label::CHH,
        Label::PHH,
        Label::OHH,
        Label::TB,
        Label::RD,
        Label::RB,
        Label::CB,
        Label::CRC,
        Label::SPC,
        Label::CHC,
        Label::CL,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::BD => "BD",
            Label::SD => "SD",
            Label::SS => "SS",
            Label::CLP => "CLP",
            Label::HT => "HT",
            Label::MT => "MT",
            Label::LT => "LT",
            Label::CHH => "CHH",
            Label::PHH => "PHH",
            Label::OHH => "OHH",
            Label::TB => "TB",
            Label::RD => "RD",
            Label::RB => "RB",
            Label::CB => "CB",
            Label::CRC => "CRC",
            Label::SPC => "SPC",
            Label::CHC => "CHC",
            Label::CL => "CL",
            Label::TT => "TT",
            Label::HH => "HH",
            Label::BE => "BE",
            Label::CY => "CY",
        }
    }

    pub fn is_instrument(self) -> bool {
        !matches!(self, Label::TT | Label::HH | Label::BE | Label::CY)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let label = match s.trim() {
            "BD" => Label::BD,
            "SD" => Label::SD,
            "SS" => Label::SS,
            "CLP" => Label::CLP,
            "HT" => Label::HT,
            "MT" => Label::MT,
            "LT" => Label::LT,
            "CHH" => Label::CHH,
            "PHH" => Label::PHH,
            "OHH" => Label::OHH,
            "TB" => Label::TB,
            "RD" => Label::RD,
            "RB" => Label::RB,
            "CB" => Label::CB,
            "CRC" => Label::CRC,
            "SPC" => Label::SPC,
            "CHC" => Label::CHC,
            "CL" => Label::CL,
            "TT" => Label::TT,
            "HH" => Label::HH,
            "BE" => Label::BE,
            "CY" => Label::CY,
            other => return Err(Error::UnknownLabel(other.to_string())),
        };
        Ok(label)
    }
}
