use std::collections::BTreeSet;
use std::ops::Range;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{ClassId, FamilyId};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    pub family: FamilyId,
    pub release_date: NaiveDate,
}

/// A model to register. `is_real` marks the real-image class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NewModel {
    pub name: String,
    pub family: String,
    pub release_date: NaiveDate,
    pub is_real: bool,
}

impl NewModel {
    pub fn generator(name: &str, family: &str, release_date: NaiveDate) -> Self {
        Self {
            name: name.into(),
            family: family.into(),
            release_date,
            is_real: false,
        }
    }

    pub fn real(name: &str, release_date: NaiveDate) -> Self {
        Self {
            name: name.into(),
            family: name.into(),
            release_date,
            is_real: true,
        }
    }
}

/// Class and family ids created by one registration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Registration {
    pub classes: Range<ClassId>,
    pub families: Range<FamilyId>,
}

/// Families and models in registration order. Class ids are dense `0..C`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    families: Vec<String>,
    models: Vec<ModelEntry>,
    real_class: Option<ClassId>,
}

impl Taxonomy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_classes(&self) -> usize {
        self.models.len()
    }

    pub fn num_families(&self) -> usize {
        self.families.len()
    }

    pub fn real_class(&self) -> Option<ClassId> {
        self.real_class
    }

    pub fn models(&self) -> &[ModelEntry] {
        &self.models
    }

    pub fn families(&self) -> &[String] {
        &self.families
    }

    pub fn family_of(&self, class: ClassId) -> FamilyId {
        self.models[class].family
    }

    pub fn class_name(&self, class: ClassId) -> &str {
        &self.models[class].name
    }

    pub fn class_id(&self, name: &str) -> Option<ClassId> {
        self.models.iter().position(|m| m.name == name)
    }

    pub fn family_id(&self, name: &str) -> Option<FamilyId> {
        self.families.iter().position(|f| f == name)
    }

    pub fn members(&self, family: FamilyId) -> impl Iterator<Item = ClassId> + '_ {
        self.models
            .iter()
            .enumerate()
            .filter(move |(_, m)| m.family == family)
            .map(|(i, _)| i)
    }

    /// Appends models, creating families on first reference. Validation is
    /// done up front so a failed call leaves the taxonomy unchanged.
    pub fn register_classes(&mut self, new_models: &[NewModel]) -> Result<Registration> {
        let mut names: BTreeSet<&str> = self.models.iter().map(|m| m.name.as_str()).collect();
        let mut real_family = self.real_class.map(|c| self.families[self.models[c].family].clone());
        let mut has_real = self.real_class.is_some();
        for m in new_models {
            if !names.insert(&m.name) {
                return Err(Error::Registration(format!("class `{}` is already registered", m.name)));
            }
            if m.is_real {
                if has_real {
                    return Err(Error::Registration("a real class is already registered".into()));
                }
                let family_used = self.models.iter().any(|e| self.families[e.family] == m.family)
                    || new_models.iter().any(|o| !o.is_real && o.family == m.family);
                if family_used {
                    return Err(Error::Registration(format!(
                        "real class `{}` must be alone in family `{}`",
                        m.name, m.family
                    )));
                }
                has_real = true;
                real_family = Some(m.family.clone());
            } else if real_family.as_deref() == Some(m.family.as_str()) {
                return Err(Error::Registration(format!(
                    "generator `{}` cannot join the real family `{}`",
                    m.name, m.family
                )));
            }
        }

        let first_class = self.models.len();
        let first_family = self.families.len();
        for m in new_models {
            let family = match self.family_id(&m.family) {
                Some(f) => f,
                None => {
                    self.families.push(m.family.clone());
                    self.families.len() - 1
                }
            };
            self.models.push(ModelEntry {
                name: m.name.clone(),
                family,
                release_date: m.release_date,
            });
            if m.is_real {
                self.real_class = Some(self.models.len() - 1);
            }
        }
        Ok(Registration {
            classes: first_class..self.models.len(),
            families: first_family..self.families.len(),
        })
    }
}
