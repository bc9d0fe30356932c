use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Object categories produced by the detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Door,
    Bench,
    TrashBin,
    FireExtinguisher,
    WaterFountain,
    Person,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 6] = [
        ClassLabel::Door,
        ClassLabel::Bench,
        ClassLabel::TrashBin,
        ClassLabel::FireExtinguisher,
        ClassLabel::WaterFountain,
        ClassLabel::Person,
    ];

    /// Classes that end up in the map. People are dynamic and never tracked.
    pub const STATIC: [ClassLabel; 5] = [
        ClassLabel::Door,
        ClassLabel::Bench,
        ClassLabel::TrashBin,
        ClassLabel::FireExtinguisher,
        ClassLabel::WaterFountain,
    ];

    pub fn is_static(self) -> bool {
        self != ClassLabel::Person
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Door => "door",
            ClassLabel::Bench => "bench",
            ClassLabel::TrashBin => "trash_bin",
            ClassLabel::FireExtinguisher => "fire_extinguisher",
            ClassLabel::WaterFountain => "water_fountain",
            ClassLabel::Person => "person",
        }
    }

    /// Planar objects are fitted with RANSAC, everything else is clustered.
    pub fn is_planar(self) -> bool {
        self == ClassLabel::Door
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown object class `{0}`")]
pub struct UnknownClass(pub String);

impl FromStr for ClassLabel {
    type Err = UnknownClass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ClassLabel::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| UnknownClass(s.to_string()))
    }
}
