use serde::{Deserialize, Serialize};

use super::config::{Components, TrainConfig};
use super::eval::MetricRecord;
use super::experiment::Experiment;
use crate::data_io::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Toggle {
    Replay,
    L1,
    L2,
    Lu,
}

impl Toggle {
    pub fn name(self) -> &'static str {
        match self {
            Toggle::Replay => "replay",
            Toggle::L1 => "l1",
            Toggle::L2 => "l2",
            Toggle::Lu => "lu",
        }
    }

    fn enable(self, c: &mut Components) {
        match self {
            Toggle::Replay => c.replay = true,
            Toggle::L1 => c.l1 = true,
            Toggle::L2 => c.l2 = true,
            Toggle::Lu => c.lu = true,
        }
    }
}

impl std::str::FromStr for Toggle {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "replay" => Ok(Toggle::Replay),
            "l1" => Ok(Toggle::L1),
            "l2" => Ok(Toggle::L2),
            "lu" => Ok(Toggle::Lu),
            other => Err(Error::Config(format!("unknown toggle `{other}`"))),
        }
    }
}

/// Comma-separated toggle list; empty string means no toggles.
pub fn parse_toggles(s: &str) -> Result<Vec<Toggle>> {
    let mut out: Vec<Toggle> = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let t: Toggle = part.parse()?;
        if out.contains(&t) {
            return Err(Error::Config(format!("toggle `{}` listed twice", t.name())));
        }
        out.push(t);
    }
    Ok(out)
}

/// A hyperparameter sweep around the base config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Sweep {
    Tau(Vec<f64>),
    Budget(Vec<usize>),
    TaskSize(Vec<usize>),
    /// Index 1..=4 and values for that weight.
    Alpha(usize, Vec<f64>),
}

/// Labelled configurations to run.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationPlan {
    pub runs: Vec<(String, TrainConfig)>,
}

impl AblationPlan {
    /// Baseline with every component off, then each toggle switched on in turn
    /// on top of the previous row.
    pub fn cumulative(base: &TrainConfig, toggles: &[Toggle]) -> Self {
        let mut c = base.clone();
        c.components = Components::NONE;
        let mut runs = vec![("baseline".to_owned(), c.clone())];
        let mut label = String::new();
        for t in toggles {
            t.enable(&mut c.components);
            label.push('+');
            label.push_str(t.name());
            runs.push((label.clone(), c.clone()));
        }
        Self { runs }
    }

    pub fn sweep(base: &TrainConfig, sweep: &Sweep) -> Result<Self> {
        let mut runs = Vec::new();
        match sweep {
            Sweep::Tau(v) => {
                for &x in v {
                    let mut c = base.clone();
                    c.tau = x;
                    runs.push((format!("tau={x}"), c));
                }
            }
            Sweep::Budget(v) => {
                for &x in v {
                    let mut c = base.clone();
                    c.bank_budget = x;
                    runs.push((format!("budget={x}"), c));
                }
            }
            Sweep::TaskSize(v) => {
                for &x in v {
                    let mut c = base.clone();
                    c.task_size = x;
                    runs.push((format!("L={x}"), c));
                }
            }
            Sweep::Alpha(i, v) => {
                for &x in v {
                    let mut c = base.clone();
                    match i {
                        1 => c.alpha1 = x,
                        2 => c.alpha2 = x,
                        3 => c.alpha3 = x,
                        4 => c.alpha4 = x,
                        _ => return Err(Error::Config(format!("no weight alpha{i}"))),
                    }
                    runs.push((format!("alpha{i}={x}"), c));
                }
            }
        }
        for (_, c) in &runs {
            c.validate()?;
        }
        Ok(Self { runs })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub history: Vec<MetricRecord>,
}

impl AblationRow {
    pub fn final_metrics(&self) -> &MetricRecord {
        self.history.last().expect("nonempty history")
    }
}

/// Runs every configuration through the incremental protocol.
pub fn run_ablation(dataset: &Dataset, plan: &AblationPlan) -> Result<Vec<AblationRow>> {
    plan.runs
        .iter()
        .map(|(label, config)| {
            let mut exp = Experiment::ep1(dataset, config.clone())?;
            exp.run(dataset, None, &mut |_| {})?;
            Ok(AblationRow {
                label: label.clone(),
                history: exp.state.history,
            })
        })
        .collect()
}
