//! Trial and corpus files.
//!
//! A trial file is JSON with an explicit `schema_version`; all quantities are
//! SI and numbers are written at full round-trip precision. A corpus is a
//! directory holding one trial file per trial plus `manifest.json`.
//!
//! Writes go to a temporary file in the destination directory and are renamed
//! into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::Quaternion;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wxyz, RigidTransform, UnitQuaternion, Vec3, Wrench};
use crate::model::{Label, SpringParams, Trial, TrialSample};
use crate::simulator::SimConfig;

pub const TRIAL_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Quaternion norm deviation above which loading renormalizes with a warning.
pub const QUAT_WARN_TOL: f64 = 1e-6;
/// Quaternion norm deviation above which loading fails.
pub const QUAT_ERROR_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub translation: [f64; 3],
    pub rotation_wxyz: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WrenchRecord {
    pub force: [f64; 3],
    pub torque: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub t: f64,
    pub pose: PoseRecord,
    pub wrench: WrenchRecord,
}

/// On-disk form of a [`Trial`]. Wrenches are always sensor-frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialFile {
    pub schema_version: u32,
    pub id: String,
    pub label: Label,
    pub spring: SpringParams,
    pub grasp_point: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<[f64; 3]>,
    pub samples: Vec<SampleRecord>,
}

impl From<&Trial> for TrialFile {
    fn from(trial: &Trial) -> Self {
        TrialFile {
            schema_version: TRIAL_SCHEMA_VERSION,
            id: trial.id().to_string(),
            label: trial.label(),
            spring: trial.spring(),
            grasp_point: trial.grasp_point().into(),
            ground_truth: trial.ground_truth().map(Into::into),
            samples: trial
                .samples()
                .iter()
                .map(|s| SampleRecord {
                    t: s.t,
                    pose: PoseRecord {
                        translation: s.pose.translation.into(),
                        rotation_wxyz: wxyz(&s.pose.rotation),
                    },
                    wrench: WrenchRecord {
                        force: s.wrench.force.into(),
                        torque: s.wrench.torque.into(),
                    },
                })
                .collect(),
        }
    }
}

fn load_rotation(q: [f64; 4], index: usize) -> Result<UnitQuaternion> {
    let raw = Quaternion::new(q[0], q[1], q[2], q[3]);
    let norm = raw.norm();
    let deviation = (norm - 1.0).abs();
    if !deviation.is_finite() || deviation > QUAT_ERROR_TOL {
        return Err(Error::Validation {
            index,
            message: format!("rotation quaternion norm {norm} is not close to 1"),
        });
    }
    if deviation > QUAT_WARN_TOL {
        log::warn!("sample {index}: renormalizing rotation quaternion with norm {norm}");
    }
    // Leave already-normalized values untouched so round trips are exact.
    Ok(if deviation > 1e-12 {
        UnitQuaternion::from_quaternion(raw)
    } else {
        UnitQuaternion::new_unchecked(raw)
    })
}

impl TrialFile {
    pub fn into_trial(self) -> Result<Trial> {
        if self.schema_version != TRIAL_SCHEMA_VERSION {
            return Err(Error::InvalidTrial(format!(
                "unsupported schema_version {} (expected {TRIAL_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let samples = self
            .samples
            .into_iter()
            .enumerate()
            .map(|(index, s)| {
                Ok(TrialSample {
                    t: s.t,
                    pose: RigidTransform::new(
                        load_rotation(s.pose.rotation_wxyz, index)?,
                        Vec3::from(s.pose.translation),
                    ),
                    wrench: Wrench::sensor(Vec3::from(s.wrench.force), Vec3::from(s.wrench.torque)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Trial::new(
            self.id,
            self.label,
            self.spring,
            Vec3::from(self.grasp_point),
            self.ground_truth.map(Vec3::from),
            samples,
        )
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: format!("at `{}`: {}", e.path(), e.inner()),
    })
}

/// Writes `bytes` to `path` through a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("values serialize");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn load_trial(path: impl AsRef<Path>) -> Result<Trial> {
    read_json::<TrialFile>(path.as_ref())?.into_trial()
}

pub fn save_trial(trial: &Trial, path: impl AsRef<Path>) -> Result<()> {
    write_json(path.as_ref(), &TrialFile::from(trial))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub label: Label,
    /// Relative to the corpus directory.
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub config_digest: Option<String>,
    #[serde(default)]
    pub sim_config: Option<SimConfig>,
    pub trials: Vec<ManifestEntry>,
}

/// One manifest entry with its trial, or the reason it could not be loaded.
#[derive(Debug)]
pub struct CorpusEntry {
    pub entry: ManifestEntry,
    pub trial: std::result::Result<Trial, String>,
}

#[derive(Debug)]
pub struct Corpus {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub entries: Vec<CorpusEntry>,
}

fn trial_file_name(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}.json")
}

/// Writes every trial and a manifest into `dir` (created if missing).
pub fn save_corpus(
    dir: impl AsRef<Path>,
    trials: &[Trial],
    sim_config: Option<&SimConfig>,
) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(trials.len());
    for trial in trials {
        let file = trial_file_name(trial.id());
        save_trial(trial, dir.join(&file))?;
        entries.push(ManifestEntry {
            id: trial.id().to_string(),
            label: trial.label(),
            file,
        });
    }
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        seed: sim_config.map(|c| c.seed),
        config_digest: sim_config.map(SimConfig::digest),
        sim_config: sim_config.cloned(),
        trials: entries,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Loads the manifest and every listed trial. Individual trial failures are
/// kept per entry; a missing or empty manifest is an error.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Corpus> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "corpus directory not found"),
        ));
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(Error::EmptyInput("corpus directory has no manifest.json"));
    }
    let manifest: Manifest = read_json(&manifest_path)?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(Error::Parse {
            path: manifest_path,
            message: format!("unsupported schema_version {}", manifest.schema_version),
        });
    }
    if manifest.trials.is_empty() {
        return Err(Error::EmptyInput("corpus manifest lists no trials"));
    }
    let entries = manifest
        .trials
        .iter()
        .map(|entry| {
            let trial = load_trial(dir.join(&entry.file))
                .and_then(|t| {
                    if t.id() == entry.id {
                        Ok(t)
                    } else {
                        Err(Error::InvalidTrial(format!(
                            "file holds trial `{}`, manifest expects `{}`",
                            t.id(),
                            entry.id
                        )))
                    }
                })
                .map_err(|e| e.to_string());
            CorpusEntry {
                entry: entry.clone(),
                trial,
            }
        })
        .collect();
    Ok(Corpus {
        dir: dir.to_path_buf(),
        manifest,
        entries,
    })
}
