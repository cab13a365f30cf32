//! Dataset manifest (TOML) and the in-memory dataset it resolves to.
//!
//! ```toml
//! [meta]                      # free-form, e.g. encoder = "...", resize = "256x256"
//!
//! [[classes]]
//! name = "real"
//! family = "real"
//! release_date = "2020-01-01"
//! role = "real"               # real | generator | unseen_holdout
//! train = "real.train.ifab"   # paths relative to the manifest
//! test = "real.test.ifab"
//! calib = "real.calib.ifab"   # optional
//! ```
//!
//! Feature records carry the class's manifest index and its family's index
//! (families numbered in order of first appearance).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::features::FeatureFile;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Real,
    Generator,
    UnseenHoldout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub name: String,
    pub family: String,
    pub release_date: NaiveDate,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    pub test: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calib: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "toml::Table::is_empty")]
    pub meta: toml::Table,
    pub classes: Vec<ClassEntry>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let m: Manifest = toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Manifest(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let reals = self.classes.iter().filter(|c| c.role == Role::Real).count();
        if reals != 1 {
            return Err(Error::Manifest(format!("expected exactly one real class, found {reals}")));
        }
        let mut names = BTreeSet::new();
        for c in &self.classes {
            if !names.insert(c.name.as_str()) {
                return Err(Error::Manifest(format!("duplicate class `{}`", c.name)));
            }
            match c.role {
                Role::UnseenHoldout if c.train.is_some() => {
                    return Err(Error::Manifest(format!(
                        "unseen holdout class `{}` must not have a training split",
                        c.name
                    )));
                }
                Role::Real | Role::Generator if c.train.is_none() => {
                    return Err(Error::Manifest(format!("class `{}` has no training split", c.name)));
                }
                _ => {}
            }
        }
        let real = self.classes.iter().find(|c| c.role == Role::Real).unwrap();
        if self.classes.iter().any(|c| c.role != Role::Real && c.family == real.family) {
            return Err(Error::Manifest(format!(
                "real family `{}` must contain only the real class",
                real.family
            )));
        }
        Ok(())
    }

    /// Family names in order of first appearance.
    pub fn families(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in &self.classes {
            if !out.contains(&c.family) {
                out.push(c.family.clone());
            }
        }
        out
    }

    pub fn family_index(&self, family: &str) -> Option<usize> {
        self.families().iter().position(|f| f == family)
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name == name)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Features of one manifest class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassData {
    pub train: Matrix,
    pub test: Matrix,
    pub calib: Option<Matrix>,
}

/// A manifest with all of its feature files loaded.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub dim: usize,
    pub classes: Vec<ClassData>,
}

impl Dataset {
    /// Loads and cross-checks every feature file named by the manifest at `path`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let manifest = Manifest::load(path)?;
        let root = path.parent().unwrap_or(Path::new("."));
        let mut dim = None;
        let mut classes = Vec::with_capacity(manifest.classes.len());
        for (ci, c) in manifest.classes.iter().enumerate() {
            let fam = manifest.family_index(&c.family).unwrap() as u32;
            let mut load = |rel: &Path| -> Result<Matrix> {
                let p = root.join(rel);
                if !p.exists() {
                    return Err(Error::Manifest(format!("{}: feature file not found", p.display())));
                }
                let f = FeatureFile::read(&p)?;
                if *dim.get_or_insert(f.dim) != f.dim {
                    return Err(Error::Manifest(format!(
                        "{}: dim {} differs from {}",
                        p.display(),
                        f.dim,
                        dim.unwrap()
                    )));
                }
                if let Some(r) = f.records.iter().find(|r| r.class_id != ci as u32 || r.family_id != fam) {
                    return Err(Error::Manifest(format!(
                        "{}: record labelled class {} / family {}, expected {ci} / {fam} (`{}`)",
                        p.display(),
                        r.class_id,
                        r.family_id,
                        c.name
                    )));
                }
                Ok(f.to_matrix())
            };
            let train = match &c.train {
                Some(p) => load(p)?,
                None => Matrix::zeros(0, 0),
            };
            let test = load(&c.test)?;
            let calib = c.calib.as_deref().map(&mut load).transpose()?;
            classes.push(ClassData { train, test, calib });
        }
        let dim = dim.unwrap_or(0) as usize;
        for c in &mut classes {
            if c.train.rows() == 0 {
                c.train = Matrix::zeros(0, dim);
            }
        }
        Ok(Self {
            manifest,
            dim,
            classes,
        })
    }

    pub fn class(&self, name: &str) -> Option<&ClassData> {
        self.manifest.class_index(name).map(|i| &self.classes[i])
    }
}
