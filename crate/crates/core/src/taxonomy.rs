//! Structure registry: label IDs, names, model groups, contralateral pairs
//! and sex-specific structures.
//!
//! The bundled default holds 140 structures in four groups (4 body
//! composition, 62 skeletal, 13 abdominal, 61 general) and 16 bilateral
//! symmetry sets: the 12 rib pairs plus clavicles, scapulae, hip bones and
//! femurs. Arm bones carry no pair so they never enter the symmetry check.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_TAXONOMY: &str = include_str!("../data/default_taxonomy.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Composition,
    Skeletal,
    Abdominal,
    General,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
    Unknown,
}

impl std::str::FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m" | "male" => Ok(Sex::Male),
            "f" | "female" => Ok(Sex::Female),
            "" | "u" | "unknown" => Ok(Sex::Unknown),
            other => Err(Error::InvalidArgument(format!("unknown sex {other:?}"))),
        }
    }
}

impl std::fmt::Display for Sex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Sex::Male => "male",
            Sex::Female => "female",
            Sex::Unknown => "unknown",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureDef {
    pub id: u16,
    pub name: String,
    pub group: Group,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_id: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sex_specific: Option<Sex>,
    /// Counted in zero-volume denominators.
    #[serde(default = "default_true")]
    pub expected: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize, Serialize)]
struct TaxonomyFile {
    structures: Vec<StructureDef>,
    #[serde(default)]
    symmetry_set: Option<Vec<[u16; 2]>>,
    #[serde(default)]
    skull_trio: Option<[u16; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    structures: Vec<StructureDef>,
    index: BTreeMap<u16, usize>,
    symmetry_set: Vec<(u16, u16)>,
    skull_trio: Option<[u16; 3]>,
}

impl Taxonomy {
    /// The bundled 140-structure registry.
    pub fn bundled() -> Taxonomy {
        Taxonomy::from_json(DEFAULT_TAXONOMY).expect("bundled taxonomy is valid")
    }

    pub fn from_json(text: &str) -> Result<Taxonomy> {
        let file: TaxonomyFile =
            serde_json::from_str(text).map_err(|e| Error::Taxonomy(e.to_string()))?;
        Taxonomy::from_parts(file.structures, file.symmetry_set, file.skull_trio)
    }

    /// Builds and validates a taxonomy. When `symmetry_set` is `None` every
    /// `pair_id` relation becomes a symmetry set.
    pub fn from_parts(
        mut structures: Vec<StructureDef>,
        symmetry_set: Option<Vec<[u16; 2]>>,
        skull_trio: Option<[u16; 3]>,
    ) -> Result<Taxonomy> {
        structures.sort_by_key(|s| s.id);
        let mut index = BTreeMap::new();
        let mut names = HashSet::new();
        for (i, s) in structures.iter().enumerate() {
            if s.id == 0 {
                return Err(Error::Taxonomy(format!("structure {:?} has id 0", s.name)));
            }
            if index.insert(s.id, i).is_some() {
                return Err(Error::Taxonomy(format!("duplicate id {}", s.id)));
            }
            if !names.insert(s.name.as_str()) {
                return Err(Error::Taxonomy(format!("duplicate name {:?}", s.name)));
            }
            if s.sex_specific == Some(Sex::Unknown) {
                return Err(Error::Taxonomy(format!(
                    "structure {} has sex_specific \"unknown\"; use male, female or omit",
                    s.id
                )));
            }
        }
        for s in &structures {
            let Some(p) = s.pair_id else { continue };
            if p == s.id {
                return Err(Error::Taxonomy(format!("structure {} is paired with itself", s.id)));
            }
            let partner = index
                .get(&p)
                .map(|&i| &structures[i])
                .ok_or_else(|| Error::Taxonomy(format!("structure {} pairs unknown id {p}", s.id)))?;
            if partner.pair_id != Some(s.id) {
                return Err(Error::Taxonomy(format!(
                    "asymmetric pair: {} -> {p} but {p} -> {:?}",
                    s.id, partner.pair_id
                )));
            }
            if partner.group != s.group {
                return Err(Error::Taxonomy(format!(
                    "paired structures {} and {p} are in different groups",
                    s.id
                )));
            }
        }

        let symmetry_set: Vec<(u16, u16)> = match symmetry_set {
            Some(sets) => {
                let mut seen = HashSet::new();
                for &[a, b] in &sets {
                    let sa = index
                        .get(&a)
                        .map(|&i| &structures[i])
                        .ok_or_else(|| Error::Taxonomy(format!("symmetry set names unknown id {a}")))?;
                    if sa.pair_id != Some(b) {
                        return Err(Error::Taxonomy(format!(
                            "symmetry set [{a}, {b}] is not a declared pair"
                        )));
                    }
                    if !seen.insert(a) || !seen.insert(b) {
                        return Err(Error::Taxonomy(format!(
                            "symmetry set [{a}, {b}] repeats an id"
                        )));
                    }
                }
                sets.into_iter().map(|[a, b]| (a, b)).collect()
            }
            None => structures
                .iter()
                .filter_map(|s| s.pair_id.filter(|&p| s.id < p).map(|p| (s.id, p)))
                .collect(),
        };
        let mut symmetry_set = symmetry_set;
        symmetry_set.sort();

        if let Some(trio) = skull_trio {
            if trio[0] == trio[1] || trio[0] == trio[2] || trio[1] == trio[2] {
                return Err(Error::Taxonomy(format!("skull_trio {trio:?} repeats an id")));
            }
            if let Some(missing) = trio.iter().find(|id| !index.contains_key(id)) {
                return Err(Error::Taxonomy(format!(
                    "skull_trio references unknown id {missing}"
                )));
            }
        }

        Ok(Taxonomy {
            structures,
            index,
            symmetry_set,
            skull_trio,
        })
    }

    pub fn to_json(&self) -> String {
        let file = TaxonomyFile {
            structures: self.structures.clone(),
            symmetry_set: Some(self.symmetry_set.iter().map(|&(a, b)| [a, b]).collect()),
            skull_trio: self.skull_trio,
        };
        serde_json::to_string_pretty(&file).expect("taxonomy serializes")
    }

    pub fn structures(&self) -> &[StructureDef] {
        &self.structures
    }

    pub fn get(&self, id: u16) -> Option<&StructureDef> {
        self.index.get(&id).map(|&i| &self.structures[i])
    }

    pub fn contains(&self, id: u16) -> bool {
        self.index.contains_key(&id)
    }

    pub fn by_name(&self, name: &str) -> Option<&StructureDef> {
        self.structures.iter().find(|s| s.name == name)
    }

    pub fn name(&self, id: u16) -> Option<&str> {
        self.get(id).map(|s| s.name.as_str())
    }

    pub fn ids(&self) -> impl Iterator<Item = u16> + '_ {
        self.structures.iter().map(|s| s.id)
    }

    pub fn len(&self) -> usize {
        self.structures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.structures.is_empty()
    }

    pub fn group_counts(&self) -> BTreeMap<Group, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.structures {
            *counts.entry(s.group).or_insert(0) += 1;
        }
        counts
    }

    pub fn skull_trio(&self) -> Option<[u16; 3]> {
        self.skull_trio
    }

    /// Pairs evaluated by the bilateral check, ascending by left id.
    pub fn symmetric_pairs(&self) -> Vec<(u16, u16)> {
        self.symmetry_set.clone()
    }

    /// Expected structures for a patient of the given sex. Unknown sex
    /// excludes nothing.
    pub fn expected_structures(&self, sex: Sex) -> BTreeSet<u16> {
        self.structures
            .iter()
            .filter(|s| s.expected)
            .filter(|s| match (s.sex_specific, sex) {
                (None, _) | (_, Sex::Unknown) => true,
                (Some(req), sex) => req == sex,
            })
            .map(|s| s.id)
            .collect()
    }
}

/// Loads a taxonomy file, or the bundled default when `path` is `None`.
pub fn load_taxonomy(path: Option<&Path>) -> Result<Taxonomy> {
    match path {
        None => Ok(Taxonomy::bundled()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Taxonomy::from_json(&text)
        }
    }
}
