//! Output directories keyed by an input fingerprint.
//!
//! A stage records the fingerprint of its inputs in `inputs.json`. Running it
//! again with the same inputs reuses the outputs; different inputs in the same
//! directory are refused unless `--force` is given.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

const STAMP: &str = "inputs.json";

#[derive(Debug, Serialize, Deserialize)]
struct Stamp {
    stage: String,
    fingerprint: String,
}

/// 64-bit FNV-1a, hex encoded.
pub fn fingerprint(text: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

pub enum Prepared {
    /// Outputs from identical inputs already exist.
    Reuse(PathBuf),
    Fresh(PathBuf),
}

/// Chooses the output directory of `stage`. Without `--out` the directory is
/// `mrbt-runs/<stage>-<tag>-<fingerprint>`.
pub fn prepare(out: Option<&Path>, stage: &str, tag: &str, inputs: &str, force: bool) -> Result<Prepared, CliError> {
    let fp = fingerprint(inputs);
    let dir = match out {
        Some(p) => p.to_path_buf(),
        None => PathBuf::from("mrbt-runs").join(format!("{stage}-{tag}-{}", &fp[..8])),
    };
    let stamp_path = dir.join(STAMP);
    if !force {
        match fs::read_to_string(&stamp_path) {
            Ok(text) => {
                let stamp: Stamp = serde_json::from_str(&text)
                    .map_err(|e| CliError::Invalid(format!("{}: unreadable stamp: {e}", stamp_path.display())))?;
                if stamp.stage == stage && stamp.fingerprint == fp {
                    return Ok(Prepared::Reuse(dir));
                }
                return Err(CliError::Invalid(format!(
                    "{} holds outputs of a different {} run; pass --force to overwrite",
                    dir.display(),
                    stamp.stage
                )));
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(CliError::io(&stamp_path, e)),
        }
    }
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(Prepared::Fresh(dir))
}

/// Marks `dir` complete; written last so an interrupted run is redone.
pub fn seal(dir: &Path, stage: &str, inputs: &str) -> Result<(), CliError> {
    let stamp = Stamp {
        stage: stage.to_string(),
        fingerprint: fingerprint(inputs),
    };
    write(&dir.join(STAMP), &serde_json::to_string_pretty(&stamp)?)
}

pub fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}
