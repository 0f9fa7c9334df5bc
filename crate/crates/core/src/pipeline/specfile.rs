//! TOML serialization of the template inputs.
//!
//! ```toml
//! task_space = "LockedRoom"
//!
//! [rewards]            # optional, defaults shown by RewardConfig::default
//! condition_true = 1.0
//!
//! [provenance]         # optional
//! generator = "mock"
//! iterations = 2
//! verified = true
//!
//! [[subtask]]
//! name = "open the key-room door"
//! psi = "door_state[room_color] == OPEN || door_state[room_color] == -1"
//! phi = "manhattan(agent_pos, door_pos[room_color]) <= 1 || door_state[room_color] == -1"
//! mask_nav = ["left", "right", "forward"]
//! mask_interact = ["left", "right", "toggle"]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::formula::{Formula, ParseError};
use crate::gridworld::{SpaceName, TaskSpace};
use crate::mbrm::RewardConfig;
use crate::schema::SchemaError;
use crate::template::SubtaskSpec;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(default)]
    pub iterations: usize,
    #[serde(default)]
    pub verified: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskEntry {
    pub name: String,
    pub psi: String,
    pub phi: String,
    pub mask_nav: Vec<String>,
    pub mask_interact: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MrbtSpecFile {
    pub task_space: String,
    #[serde(default)]
    pub rewards: RewardConfig,
    #[serde(default)]
    pub provenance: Provenance,
    #[serde(rename = "subtask", default)]
    pub subtasks: Vec<SubtaskEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum SpecFileError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("malformed spec file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("cannot serialize spec file: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("spec file is for task space `{found}`, expected `{expected}`")]
    WrongSpace { expected: String, found: String },
    #[error("subtask {index} ({field}): {source}")]
    Formula {
        index: usize,
        field: &'static str,
        source: ParseError,
    },
    #[error("subtask {index} ({field}): {source}")]
    Mask {
        index: usize,
        field: &'static str,
        source: SchemaError,
    },
}

impl MrbtSpecFile {
    pub fn new(space: SpaceName, subtasks: Vec<SubtaskEntry>) -> Self {
        Self {
            task_space: space.as_str().to_string(),
            rewards: RewardConfig::default(),
            provenance: Provenance::default(),
            subtasks,
        }
    }

    /// Reference specification shipped for a task space.
    pub fn reference(space: SpaceName) -> Self {
        let text = match space {
            SpaceName::DoorKey => include_str!("../../assets/specs/doorkey.toml"),
            SpaceName::LockedRoom => include_str!("../../assets/specs/lockedroom.toml"),
            SpaceName::DroneSupplier => include_str!("../../assets/specs/dronesupplier.toml"),
        };
        Self::from_toml_str(text).expect("bundled spec files parse")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SpecFileError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml_string(&self) -> Result<String, SpecFileError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn read(path: &Path) -> Result<Self, SpecFileError> {
        let text = fs::read_to_string(path).map_err(|source| SpecFileError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn write(&self, path: &Path) -> Result<(), SpecFileError> {
        fs::write(path, self.to_toml_string()?).map_err(|source| SpecFileError::Write {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn space_name(&self) -> Option<SpaceName> {
        self.task_space.parse().ok()
    }

    /// Parses every formula and mask against `space`.
    pub fn to_subtasks(&self, space: &TaskSpace) -> Result<Vec<SubtaskSpec>, SpecFileError> {
        if self.space_name() != Some(space.name()) {
            return Err(SpecFileError::WrongSpace {
                expected: space.name().to_string(),
                found: self.task_space.clone(),
            });
        }
        let schema = space.schema();
        let vars = space.task_vars();
        self.subtasks
            .iter()
            .enumerate()
            .map(|(index, e)| {
                let formula = |field, text: &str| {
                    Formula::parse(text, schema, &vars).map_err(|source| SpecFileError::Formula { index, field, source })
                };
                let mask = |field, names: &[String]| {
                    schema
                        .mask_from_names(names)
                        .map_err(|source| SpecFileError::Mask { index, field, source })
                };
                Ok(SubtaskSpec {
                    name: e.name.clone(),
                    psi: formula("psi", &e.psi)?,
                    phi: formula("phi", &e.phi)?,
                    mask_nav: mask("mask_nav", &e.mask_nav)?,
                    mask_interact: mask("mask_interact", &e.mask_interact)?,
                })
            })
            .collect()
    }

    pub fn from_subtasks(space: &TaskSpace, subtasks: &[SubtaskSpec]) -> Self {
        let schema = space.schema();
        Self::new(
            space.name(),
            subtasks
                .iter()
                .map(|s| SubtaskEntry {
                    name: s.name.clone(),
                    psi: s.psi.to_string(),
                    phi: s.phi.to_string(),
                    mask_nav: schema.mask_names(s.mask_nav),
                    mask_interact: schema.mask_names(s.mask_interact),
                })
                .collect(),
        )
    }
}
