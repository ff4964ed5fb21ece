use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::stay::{StayRecord, N_PHENO};
use crate::error::Error;

/// Decompensation horizon in hours.
pub const DECOMP_HORIZON_H: f64 = 24.0;
/// Hours observed before the in-hospital mortality read-out.
pub const IHM_HOURS: usize = 48;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Decomp,
    Ihm,
    Pheno,
}

impl Task {
    pub fn n_outputs(self) -> usize {
        match self {
            Task::Decomp | Task::Ihm => 1,
            Task::Pheno => N_PHENO,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Decomp => "decomp",
            Task::Ihm => "ihm",
            Task::Pheno => "pheno",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim().to_ascii_lowercase().as_str() {
            "decomp" | "decompensation" => Ok(Task::Decomp),
            "ihm" | "in-hospital-mortality" => Ok(Task::Ihm),
            "pheno" | "phenotyping" => Ok(Task::Pheno),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

/// Task labels with a validity mask of the same length.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskTargets {
    pub targets: Vec<f32>,
    pub mask: Vec<bool>,
}

impl TaskTargets {
    pub fn any_valid(&self) -> bool {
        self.mask.iter().any(|&m| m)
    }
}

/// Decompensation label for hour `t`: death falls in `(t, t + 24]`.
pub fn decomp_label(t: usize, death_hour: Option<f64>) -> bool {
    let t = t as f64;
    death_hour.is_some_and(|d| d > t && d <= t + DECOMP_HORIZON_H)
}

/// Builds the labels for `task`.
///
/// Decompensation has one label per hour, valid while the patient is alive.
/// In-hospital mortality has one label, valid only for stays of at least
/// 48 hours. Phenotyping has 25 labels, always valid.
pub fn make_task_targets(stay: &StayRecord, task: Task) -> TaskTargets {
    let death = stay.outcome.death_hour;
    match task {
        Task::Decomp => {
            let hours = stay.hours();
            let mut targets = Vec::with_capacity(hours);
            let mut mask = Vec::with_capacity(hours);
            for t in 0..hours {
                targets.push(if decomp_label(t, death) { 1.0 } else { 0.0 });
                mask.push(death.map_or(true, |d| (t as f64) < d));
            }
            TaskTargets { targets, mask }
        }
        Task::Ihm => TaskTargets {
            targets: vec![if death.is_some() { 1.0 } else { 0.0 }],
            mask: vec![stay.hours() >= IHM_HOURS],
        },
        Task::Pheno => TaskTargets {
            targets: stay.outcome.pheno.iter().map(|&p| p as f32).collect(),
            mask: vec![true; stay.outcome.pheno.len()],
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use crate::data::stay::{Outcome, D_EHR};

    fn stay(hours: usize, death: Option<f64>) -> StayRecord {
        StayRecord {
            stay_id: "s".into(),
            ehr: Tensor::zeros(&[hours, D_EHR]),
            notes: vec![],
            outcome: Outcome { death_hour: death, pheno: vec![0; N_PHENO] },
            scaled: false,
        }
    }

    #[test]
    fn death_at_thirty() {
        let tt = make_task_targets(&stay(30, Some(30.0)), Task::Decomp);
        let pos: Vec<usize> = (0..30).filter(|&t| tt.targets[t] == 1.0).collect();
        assert_eq!(pos, (6..30).collect::<Vec<_>>());
        assert!(tt.mask.iter().all(|&m| m));
    }

    #[test]
    fn survivor_is_all_negative() {
        let s = stay(72, None);
        let d = make_task_targets(&s, Task::Decomp);
        assert!(d.targets.iter().all(|&v| v == 0.0));
        let i = make_task_targets(&s, Task::Ihm);
        assert_eq!(i.targets, vec![0.0]);
        assert_eq!(i.mask, vec![true]);
    }

    #[test]
    fn short_stay_has_no_ihm() {
        assert_eq!(make_task_targets(&stay(40, None), Task::Ihm).mask, vec![false]);
    }

    #[test]
    fn pheno_width() {
        assert_eq!(make_task_targets(&stay(5, None), Task::Pheno).targets.len(), 25);
    }

    #[test]
    fn task_parse() {
        assert_eq!("IHM".parse::<Task>().unwrap(), Task::Ihm);
        assert!("los".parse::<Task>().is_err());
    }
}
