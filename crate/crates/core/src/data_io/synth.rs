//! Synthetic features with a family/model hierarchy, for desk-scale runs.
//!
//! Family means are `sigma_family` times mutually orthonormal directions; each
//! model mean adds a random unit offset of length `sigma_model`; samples add
//! isotropic Gaussian noise with per-coordinate deviation `sigma_noise / sqrt(d)`,
//! so `sigma_noise` is the typical noise norm. Features are rounded to f32 so
//! the in-memory dataset equals what is written to disk.

use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::features::FeatureFile;
use super::manifest::{ClassData, ClassEntry, Dataset, Manifest, Role};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, orthonormal_extension, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Families including the real-image family.
    pub families: usize,
    pub models_per_family: usize,
    pub dim: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub calib_samples: usize,
    pub sigma_family: f64,
    pub sigma_model: f64,
    pub sigma_noise: f64,
    /// Extra families whose models are held out as unseen generators.
    pub holdout_families: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            families: 4,
            models_per_family: 3,
            dim: 64,
            train_samples: 500,
            test_samples: 100,
            calib_samples: 100,
            sigma_family: 10.0,
            sigma_model: 2.0,
            sigma_noise: 1.0,
            holdout_families: 1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.families < 2 {
            return Err(Error::Config("need the real family plus at least one generator family".into()));
        }
        if self.models_per_family == 0 || self.dim == 0 || self.train_samples == 0 || self.test_samples == 0 {
            return Err(Error::Config("models, dim and sample counts must be positive".into()));
        }
        if !(self.sigma_family > self.sigma_model && self.sigma_model > self.sigma_noise && self.sigma_noise >= 0.0) {
            return Err(Error::Config(format!(
                "need sigma_family > sigma_model > sigma_noise >= 0, got {} / {} / {}",
                self.sigma_family, self.sigma_model, self.sigma_noise
            )));
        }
        if self.families + self.holdout_families > self.dim {
            return Err(Error::Capacity(format!(
                "{} orthogonal family means do not fit in dimension {}",
                self.families + self.holdout_families,
                self.dim
            )));
        }
        Ok(())
    }
}

/// Generated dataset plus the model means behind it.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// One row per manifest class.
    pub model_means: Matrix,
}

fn base_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2022, 1, 1).unwrap()
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dim;
    let n_fam = spec.families + spec.holdout_families;
    let directions = orthonormal_extension(&Matrix::zeros(0, d), n_fam, &mut rng)?;
    let gen_families = spec.families - 1;

    // (name, family, family index, role, release date)
    let mut classes: Vec<(String, String, usize, Role, NaiveDate)> = vec![(
        "real".into(),
        "real".into(),
        0,
        Role::Real,
        NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
    )];
    for k in 0..gen_families {
        for j in 0..spec.models_per_family {
            // interleave families in release order
            let slot = (j * gen_families + k) as i64;
            classes.push((
                format!("fam{k}-m{j}"),
                format!("fam{k}"),
                k + 1,
                Role::Generator,
                base_date() + Duration::days(30 * slot),
            ));
        }
    }
    let last_slot = (spec.models_per_family * gen_families) as i64;
    for h in 0..spec.holdout_families {
        for j in 0..spec.models_per_family {
            let slot = last_slot + (h * spec.models_per_family + j) as i64;
            classes.push((
                format!("holdout{h}-m{j}"),
                format!("holdout{h}"),
                spec.families + h,
                Role::UnseenHoldout,
                base_date() + Duration::days(30 * slot),
            ));
        }
    }

    let mut model_means = Matrix::zeros(0, d);
    for (_, _, fam, _, _) in &classes {
        let mut offset: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&offset);
        offset.iter_mut().for_each(|x| *x *= spec.sigma_model / n);
        let mean: Vec<f64> = directions
            .row(*fam)
            .iter()
            .zip(&offset)
            .map(|(e, o)| spec.sigma_family * e + o)
            .collect();
        model_means.push_row(&mean)?;
    }
    check_hierarchy(&model_means, &classes.iter().map(|c| c.2).collect::<Vec<_>>())?;

    let noise_scale = spec.sigma_noise / (d as f64).sqrt();
    let sample = |mean: &[f64], n: usize, rng: &mut ChaCha8Rng| -> Matrix {
        let data = (0..n)
            .flat_map(|_| {
                mean.iter()
                    .map(|&m| f64::from((m + noise_scale * rng.sample::<f64, _>(StandardNormal)) as f32))
                    .collect::<Vec<_>>()
            })
            .collect();
        Matrix::from_vec(n, d, data).unwrap()
    };

    let mut entries = Vec::with_capacity(classes.len());
    let mut data = Vec::with_capacity(classes.len());
    for (i, (name, family, _, role, date)) in classes.iter().enumerate() {
        let mean = model_means.row(i).to_vec();
        let train = if *role == Role::UnseenHoldout {
            Matrix::zeros(0, d)
        } else {
            sample(&mean, spec.train_samples, &mut rng)
        };
        let test = sample(&mean, spec.test_samples, &mut rng);
        let calib = (spec.calib_samples > 0).then(|| sample(&mean, spec.calib_samples, &mut rng));
        entries.push(ClassEntry {
            name: name.clone(),
            family: family.clone(),
            release_date: *date,
            role: *role,
            train: (*role != Role::UnseenHoldout).then(|| PathBuf::from(format!("{name}.train.ifab"))),
            test: PathBuf::from(format!("{name}.test.ifab")),
            calib: calib.as_ref().map(|_| PathBuf::from(format!("{name}.calib.ifab"))),
        });
        data.push(ClassData { train, test, calib });
    }
    let mut meta = toml::Table::new();
    meta.insert("generator".into(), toml::Value::String("synthetic".into()));
    meta.insert("seed".into(), toml::Value::Integer(spec.seed as i64));
    let manifest = Manifest {
        meta,
        classes: entries,
    };
    manifest.validate()?;
    Ok(SyntheticData {
        dataset: Dataset {
            manifest,
            dim: d,
            classes: data,
        },
        model_means,
    })
}

/// Mean within-family cosine of model means must exceed the cross-family mean.
fn check_hierarchy(means: &Matrix, family: &[usize]) -> Result<()> {
    let (mut within, mut nw, mut across, mut na) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..means.rows() {
        for j in i + 1..means.rows() {
            let cos = dot(means.row(i), means.row(j)) / (norm(means.row(i)) * norm(means.row(j)));
            if family[i] == family[j] {
                within += cos;
                nw += 1;
            } else {
                across += cos;
                na += 1;
            }
        }
    }
    if nw > 0 && na > 0 && within / nw as f64 <= across / na as f64 {
        return Err(Error::Numeric("synthetic means violate the family hierarchy".into()));
    }
    Ok(())
}

/// Writes every feature file plus `manifest.toml` into `dir`.
pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let m = &dataset.manifest;
    for (ci, (entry, data)) in m.classes.iter().zip(&dataset.classes).enumerate() {
        let fam = m.family_index(&entry.family).unwrap() as u32;
        let write = |rel: &Path, x: &Matrix| -> Result<()> {
            let mut f = FeatureFile::new(dataset.dim as u32);
            for row in x.iter_rows() {
                f.push(ci as u32, fam, row.iter().map(|&v| v as f32).collect())?;
            }
            f.write(dir.join(rel))
        };
        if let Some(p) = &entry.train {
            write(p, &data.train)?;
        }
        write(&entry.test, &data.test)?;
        if let (Some(p), Some(x)) = (&entry.calib, &data.calib) {
            write(p, x)?;
        }
    }
    let path = dir.join("manifest.toml");
    std::fs::write(&path, m.to_toml()?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            families: 3,
            models_per_family: 2,
            dim: 16,
            train_samples: 20,
            test_samples: 10,
            calib_samples: 5,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn layout_matches_spec() {
        let s = generate_synthetic(&small()).unwrap();
        let m = &s.dataset.manifest;
        // real + 2 generator families x 2 + 1 holdout family x 2
        assert_eq!(m.classes.len(), 7);
        assert_eq!(m.classes.iter().filter(|c| c.role == Role::UnseenHoldout).count(), 2);
        assert_eq!(s.dataset.classes[1].train.rows(), 20);
        assert_eq!(s.dataset.classes[6].train.rows(), 0);
        let latest_gen = m.classes.iter().filter(|c| c.role == Role::Generator).map(|c| c.release_date).max();
        let first_holdout = m.classes.iter().filter(|c| c.role == Role::UnseenHoldout).map(|c| c.release_date).min();
        assert!(first_holdout > latest_gen);
    }

    #[test]
    fn too_many_families_for_dim_is_capacity_error() {
        let spec = SyntheticSpec {
            families: 4,
            dim: 4,
            ..small()
        };
        assert!(matches!(generate_synthetic(&spec), Err(Error::Capacity(_))));
    }

    #[test]
    fn ill_posed_scales_are_rejected() {
        let spec = SyntheticSpec {
            sigma_model: 20.0,
            ..small()
        };
        assert!(generate_synthetic(&spec).is_err());
    }

    #[test]
    fn same_seed_writes_identical_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_dataset(&generate_synthetic(&small()).unwrap().dataset, a.path()).unwrap();
        write_dataset(&generate_synthetic(&small()).unwrap().dataset, b.path()).unwrap();
        let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert_eq!(names.len(), 7 * 3 - 2 + 1);
        for n in names {
            assert_eq!(std::fs::read(a.path().join(&n)).unwrap(), std::fs::read(b.path().join(&n)).unwrap());
        }
    }

    #[test]
    fn written_dataset_loads_back_identically() {
        let s = generate_synthetic(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = write_dataset(&s.dataset, dir.path()).unwrap();
        assert_eq!(Dataset::load(path).unwrap(), s.dataset);
    }
}
