use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::Dataset;

/// The seven training sets built from originals, DDPM and DDIM samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Combination {
    #[serde(rename = "Original")]
    Original,
    #[serde(rename = "DDPM")]
    Ddpm,
    #[serde(rename = "DDIM")]
    Ddim,
    #[serde(rename = "DDPM+DDIM")]
    DdpmDdim,
    #[serde(rename = "DDPM+Original")]
    DdpmOriginal,
    #[serde(rename = "DDIM+Original")]
    DdimOriginal,
    #[serde(rename = "DDPM+DDIM+Original")]
    All,
}

impl Combination {
    pub const ALL: [Combination; 7] = [
        Combination::Original,
        Combination::Ddpm,
        Combination::Ddim,
        Combination::DdpmDdim,
        Combination::DdpmOriginal,
        Combination::DdimOriginal,
        Combination::All,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Combination::Original => "Original",
            Combination::Ddpm => "DDPM",
            Combination::Ddim => "DDIM",
            Combination::DdpmDdim => "DDPM+DDIM",
            Combination::DdpmOriginal => "DDPM+Original",
            Combination::DdimOriginal => "DDIM+Original",
            Combination::All => "DDPM+DDIM+Original",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    /// `(original, ddpm, ddim)` membership.
    pub fn parts(self) -> (bool, bool, bool) {
        match self {
            Combination::Original => (true, false, false),
            Combination::Ddpm => (false, true, false),
            Combination::Ddim => (false, false, true),
            Combination::DdpmDdim => (false, true, true),
            Combination::DdpmOriginal => (true, true, false),
            Combination::DdimOriginal => (true, false, true),
            Combination::All => (true, true, true),
        }
    }

    pub fn contains_ddim(self) -> bool {
        self.parts().2
    }
}

/// Concatenate sources for each combination: DDPM items first, then DDIM,
/// then originals. Nothing is deduplicated.
pub fn build_combination(c: Combination, original: &Dataset, ddpm: &Dataset, ddim: &Dataset) -> Dataset {
    let (o, p, i) = c.parts();
    let mut items = Vec::new();
    if p {
        items.extend(ddpm.items.iter().cloned());
    }
    if i {
        items.extend(ddim.items.iter().cloned());
    }
    if o {
        items.extend(original.items.iter().cloned());
    }
    Dataset {
        seed: original.seed,
        items,
    }
}

pub fn build_combinations(original: &Dataset, ddpm: &Dataset, ddim: &Dataset) -> Result<Vec<(Combination, Dataset)>> {
    for (name, d) in [("Original", original), ("DDPM", ddpm), ("DDIM", ddim)] {
        if d.is_empty() {
            return Err(Error::config(format!("source dataset {name} is empty")));
        }
    }
    Ok(Combination::ALL
        .into_iter()
        .map(|c| (c, build_combination(c, original, ddpm, ddim)))
        .collect())
}
