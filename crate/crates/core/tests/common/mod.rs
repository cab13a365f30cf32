#![allow(dead_code)]

use lineage_core::data_io::{generate_synthetic, write_dataset, Dataset, SyntheticSpec};
use lineage_core::protocol::TrainConfig;
use tempfile::TempDir;

/// Acceptance fixture: 4 families counting real, 3 models each, one holdout family.
pub fn benchmark_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        families: 4,
        models_per_family: 3,
        dim: 64,
        train_samples: 500,
        test_samples: 100,
        calib_samples: 100,
        holdout_families: 1,
        seed,
        ..SyntheticSpec::default()
    }
}

/// Benchmark hyperparameters: default lr, weights and tau; batch and epochs give
/// roughly 480 optimizer steps per task; small head for single-core runtime.
pub fn benchmark_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 64,
        epochs: 30,
        task_size: 2,
        hidden_dim: 128,
        latent_dim: 64,
        seed,
        ..TrainConfig::default()
    }
}

/// Cheap setting for tests that only need the pipeline to run.
pub fn quick_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        epochs: 2,
        task_size: 2,
        hidden_dim: 16,
        latent_dim: 16,
        bank_budget: 10,
        seed,
        ..TrainConfig::default()
    }
}

pub fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        families: 3,
        models_per_family: 2,
        dim: 8,
        train_samples: 60,
        test_samples: 20,
        calib_samples: 20,
        holdout_families: 1,
        seed,
        ..SyntheticSpec::default()
    }
}

/// Writes the spec to a temp dir and loads it back through the manifest path.
pub fn materialize(spec: &SyntheticSpec) -> (TempDir, Dataset) {
    let dir = tempfile::tempdir().expect("tempdir");
    let data = generate_synthetic(spec).expect("valid spec");
    let manifest = write_dataset(&data.dataset, dir.path()).expect("write dataset");
    let ds = Dataset::load(&manifest).expect("reload dataset");
    (dir, ds)
}

pub mod grads {
    use chrono::NaiveDate;
    use lineage_core::diffcore::{grad_check, Evaluation, GradCheckReport, Parameterized};
    use lineage_core::hierarchy::{NewModel, Taxonomy};
    use lineage_core::linalg::{softmax, Matrix};
    use lineage_core::losses::{LossWeights, MixPair, Objective, StepInputs, TermWeights};
    use lineage_core::model::AttributionModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[derive(Clone, Copy, Debug, PartialEq, Eq)]
    pub enum Term {
        Cls,
        Fine,
        Coarse,
        Replay,
        Unseen,
        Composite,
    }

    pub const ALL_TERMS: [Term; 6] = [Term::Cls, Term::Fine, Term::Coarse, Term::Replay, Term::Unseen, Term::Composite];

    pub struct Instance {
        pub model: AttributionModel,
        pub tax: Taxonomy,
        pub x: Matrix,
        pub y: Vec<usize>,
        pub xr: Matrix,
        pub yr: Vec<usize>,
        pub pairs: Vec<MixPair>,
        pub weights: TermWeights,
        pub tau: f64,
    }

    fn gaussian(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
            .unwrap()
    }

    pub fn instance(term: Term, seed: u64) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9) ^ term as u64);
        let d = rng.gen_range(3..=6);
        let h = rng.gen_range(3..=7);
        let n_fam = rng.gen_range(1..=2);
        let n_cls = 1 + n_fam * rng.gen_range(1..=2);
        let latent = rng.gen_range(n_cls + n_fam..=n_cls + n_fam + 3);
        let day = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap();
        let mut models = vec![NewModel::real("real", day)];
        for c in 1..n_cls {
            models.push(NewModel::generator(&format!("g{c}"), &format!("f{}", c % n_fam), day));
        }
        let mut tax = Taxonomy::new();
        tax.register_classes(&models).unwrap();
        let mut model = AttributionModel::new(d, Some(h), latent, &mut rng).unwrap();
        model.classifier.grow(n_cls, &mut rng);
        model.anchors.grow(n_cls, tax.num_families(), &mut rng).unwrap();
        for p in model.anchors.params_mut() {
            for v in p.values_mut().as_mut_slice() {
                *v += 0.1 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let n = rng.gen_range(n_cls..=n_cls + 5);
        // every class present at least once
        let y: Vec<usize> = (0..n).map(|i| if i < n_cls { i } else { rng.gen_range(0..n_cls) }).collect();
        let x = gaussian(n, d, 1.5, &mut rng);
        let with_replay = matches!(term, Term::Replay | Term::Composite | Term::Unseen);
        let nr = if with_replay { rng.gen_range(2..=5) } else { 0 };
        let yr: Vec<usize> = (0..nr).map(|_| rng.gen_range(0..n_cls)).collect();
        let xr = gaussian(nr, d, 1.5, &mut rng);
        let all: Vec<usize> = y.iter().chain(&yr).copied().collect();
        let mut pairs = Vec::new();
        if matches!(term, Term::Unseen | Term::Composite) {
            let target = rng.gen_range(2..=5);
            while pairs.len() < target {
                let (a, b) = (rng.gen_range(0..all.len()), rng.gen_range(0..all.len()));
                if all[a] != all[b] {
                    pairs.push(MixPair { first: a, second: b, beta: rng.gen() });
                }
            }
        }
        let z = LossWeights::ZERO;
        let weights = match term {
            Term::Cls => TermWeights { cls: 1.0, loss: z },
            Term::Fine => TermWeights { cls: 0.0, loss: LossWeights { alpha1: 1.0, ..z } },
            Term::Coarse => TermWeights { cls: 0.0, loss: LossWeights { alpha2: 1.0, ..z } },
            Term::Replay => TermWeights { cls: 0.0, loss: LossWeights { alpha4: 1.0, ..z } },
            Term::Unseen => TermWeights { cls: 0.0, loss: LossWeights { alpha3: 1.0, ..z } },
            Term::Composite => LossWeights::default().into(),
        };
        let mut inst = Instance { model, tax, x, y, xr, yr, pairs, weights, tau: 0.65 };
        if matches!(term, Term::Unseen | Term::Composite) {
            // put tau below every pseudo-unseen confidence so each hinge is active,
            // with a margin that keeps finite differences off the kink
            let conf = pseudo_confidences(&inst);
            let lo = conf.iter().cloned().fold(f64::INFINITY, f64::min);
            inst.tau = (lo - 0.02).max(1e-3);
        }
        inst
    }

    fn pseudo_confidences(inst: &Instance) -> Vec<f64> {
        let stacked = inst.x.vstack(&inst.xr).unwrap();
        let z = inst.model.head.project(&stacked).unwrap();
        inst.pairs
            .iter()
            .map(|p| {
                let mix: Vec<f64> =
                    z.row(p.first).iter().zip(z.row(p.second)).map(|(a, b)| p.beta * a + (1.0 - p.beta) * b).collect();
                let logits = inst.model.classifier.forward(&Matrix::row_vector(&mix)).unwrap();
                softmax(logits.row(0)).into_iter().fold(0.0, f64::max)
            })
            .collect()
    }

    pub fn check(inst: &mut Instance) -> GradCheckReport {
        let Instance { model, tax, x, y, xr, yr, pairs, weights, tau } = inst;
        grad_check(
            model,
            |m, with_grad| {
                let inputs = StepInputs {
                    features: x,
                    labels: y,
                    replay_features: xr,
                    replay_labels: yr,
                    pairs,
                    taxonomy: tax,
                    weights: *weights,
                    tau: *tau,
                };
                let mut obj = Objective::new();
                let b = obj.forward(m, &inputs)?;
                if with_grad {
                    obj.backward(m)?;
                }
                Ok(Evaluation { value: b.total, branch: obj.branch() })
            },
            1e-4,
            1e-3,
        )
        .expect("finite loss")
    }
}
