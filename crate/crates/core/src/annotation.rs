use core::fmt;
use core::str::FromStr;

use crate::geom::BoundingBox;

/// The four road-damage classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DamageClass {
    /// Longitudinal crack.
    D00,
    /// Transverse crack.
    D10,
    /// Alligator crack.
    D20,
    /// Pothole.
    D40,
}

impl DamageClass {
    pub const ALL: [DamageClass; 4] = [DamageClass::D00, DamageClass::D10, DamageClass::D20, DamageClass::D40];

    pub fn label(self) -> &'static str {
        match self {
            DamageClass::D00 => "D00",
            DamageClass::D10 => "D10",
            DamageClass::D20 => "D20",
            DamageClass::D40 => "D40",
        }
    }

    /// Dense index in `ALL`.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Category id used in COCO-style documents (1-based).
    pub fn category_id(self) -> u32 {
        self as u32 + 1
    }

    pub fn from_category_id(id: u32) -> Option<Self> {
        Self::ALL.get((id as usize).checked_sub(1)?).copied()
    }
}

impl fmt::Display for DamageClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnknownClass;

impl FromStr for DamageClass {
    type Err = UnknownClass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "D00" => Ok(DamageClass::D00),
            "D10" => Ok(DamageClass::D10),
            "D20" => Ok(DamageClass::D20),
            "D40" => Ok(DamageClass::D40),
            _ => Err(UnknownClass),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Provenance {
    #[default]
    Original,
    Injected,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Original => "original",
            Provenance::Injected => "injected",
        }
    }
}

/// One labelled box. The owning image is tracked by the container.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Annotation {
    pub class: DamageClass,
    pub bbox: BoundingBox,
    pub provenance: Provenance,
}

impl Annotation {
    pub fn original(class: DamageClass, bbox: BoundingBox) -> Self {
        Self { class, bbox, provenance: Provenance::Original }
    }

    pub fn injected(class: DamageClass, bbox: BoundingBox) -> Self {
        Self { class, bbox, provenance: Provenance::Injected }
    }
}
