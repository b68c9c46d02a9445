use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::Panel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DaySet {
    /// Baseline learning days.
    S0,
    /// GWR learning days.
    S1,
    /// Test days.
    S2,
}

impl DaySet {
    pub const ALL: [DaySet; 3] = [DaySet::S0, DaySet::S1, DaySet::S2];

    /// Fractions in percent the day calendar is meant to approximate.
    pub fn target_percent(self) -> f64 {
        match self {
            DaySet::S0 => 12.8,
            DaySet::S1 => 61.1,
            DaySet::S2 => 26.1,
        }
    }
}

impl fmt::Display for DaySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DaySet::S0 => "S0",
            DaySet::S1 => "S1",
            DaySet::S2 => "S2",
        })
    }
}

/// Explicit day calendar replacing the stride rule.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DayLists {
    pub s0: Vec<NaiveDate>,
    pub s1: Vec<NaiveDate>,
    pub s2: Vec<NaiveDate>,
}

/// Assignment of the days of `[start, end]` to the three samples.
///
/// Day index `d` counts from `start`. `d mod s0_stride = 0` goes to S0;
/// the other days go to S1 when `d mod cycle < s1_per_cycle` and to S2
/// otherwise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub start: NaiveDate,
    /// Inclusive.
    pub end: NaiveDate,
    #[serde(default = "default_stride")]
    pub s0_stride: u32,
    #[serde(default = "default_cycle")]
    pub cycle: u32,
    #[serde(default = "default_s1")]
    pub s1_per_cycle: u32,
    #[serde(default)]
    pub days: Option<DayLists>,
}

fn default_stride() -> u32 {
    8
}
fn default_cycle() -> u32 {
    3
}
fn default_s1() -> u32 {
    2
}

impl SplitSpec {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        Self {
            start,
            end,
            s0_stride: default_stride(),
            cycle: default_cycle(),
            s1_per_cycle: default_s1(),
            days: None,
        }
    }

    /// The period spanned by the hours of `panel`.
    pub fn covering(panel: &Panel) -> Result<Self> {
        let (Some(first), Some(last)) = (panel.hours().first(), panel.hours().last()) else {
            return Err(Error::InsufficientData("panel has no hours".into()));
        };
        Ok(Self::new(first.date_naive(), last.date_naive()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.end < self.start {
            return Err(Error::InvalidInput(format!("split ends ({}) before it starts ({})", self.end, self.start)));
        }
        if self.s0_stride == 0 || self.cycle == 0 || self.s1_per_cycle > self.cycle {
            return Err(Error::InvalidInput("split stride and cycle must be positive, s1_per_cycle ≤ cycle".into()));
        }
        Ok(())
    }

    pub fn assign(&self, day_index: u32) -> DaySet {
        if day_index % self.s0_stride == 0 {
            DaySet::S0
        } else if day_index % self.cycle < self.s1_per_cycle {
            DaySet::S1
        } else {
            DaySet::S2
        }
    }
}

/// Days of the period with their sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    days: BTreeMap<NaiveDate, DaySet>,
}

pub fn split_days(spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let mut days = BTreeMap::new();
    if let Some(lists) = &spec.days {
        for (set, list) in [(DaySet::S0, &lists.s0), (DaySet::S1, &lists.s1), (DaySet::S2, &lists.s2)] {
            for d in list {
                if days.insert(*d, set).is_some() {
                    return Err(Error::InvalidInput(format!("day {d} is listed in more than one sample")));
                }
            }
        }
        return Ok(Split { days });
    }
    let mut d = spec.start;
    let mut idx = 0u32;
    while d <= spec.end {
        days.insert(d, spec.assign(idx));
        idx += 1;
        d = d.succ_opt().expect("date in range");
    }
    Ok(Split { days })
}

impl Split {
    pub fn set_of(&self, day: NaiveDate) -> Option<DaySet> {
        self.days.get(&day).copied()
    }

    pub fn days(&self, set: DaySet) -> BTreeSet<NaiveDate> {
        self.days.iter().filter(|(_, s)| **s == set).map(|(d, _)| *d).collect()
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn count(&self, set: DaySet) -> usize {
        self.days.values().filter(|s| **s == set).count()
    }

    /// Achieved share of each sample in percent of all assigned days.
    pub fn percent(&self, set: DaySet) -> f64 {
        if self.days.is_empty() {
            return 0.0;
        }
        100.0 * self.count(set) as f64 / self.days.len() as f64
    }

    /// Whether hour `h` of `panel` falls in `set`.
    pub fn contains_hour(&self, panel: &Panel, set: DaySet, hour: usize) -> bool {
        self.set_of(panel.day_of(hour)) == Some(set)
    }

    /// Hour filter for `set`, usable as the fit or score sample.
    pub fn hours_in<'a>(&'a self, panel: &'a Panel, set: DaySet) -> impl Fn(usize) -> bool + Sync + 'a {
        move |h| self.contains_hour(panel, set, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn period(days: i64) -> SplitSpec {
        let start = NaiveDate::from_ymd_opt(2020, 3, 1).unwrap();
        SplitSpec::new(start, start + chrono::TimeDelta::days(days - 1))
    }

    #[test]
    fn fixed_examples() {
        let s = split_days(&period(8)).unwrap();
        assert_eq!(s.count(DaySet::S0), 1);
        let s = split_days(&period(24)).unwrap();
        assert_eq!([s.count(DaySet::S0), s.count(DaySet::S1), s.count(DaySet::S2)], [3, 14, 7]);
        let s = split_days(&period(1)).unwrap();
        assert_eq!(s.set_of(NaiveDate::from_ymd_opt(2020, 3, 1).unwrap()), Some(DaySet::S0));
    }

    #[test]
    fn overrides_must_be_disjoint() {
        let d = NaiveDate::from_ymd_opt(2020, 3, 1).unwrap();
        let mut spec = period(3);
        spec.days = Some(DayLists {
            s0: vec![d],
            s1: vec![d],
            s2: vec![],
        });
        assert!(split_days(&spec).is_err());
        spec.days = Some(DayLists {
            s0: vec![d],
            s1: vec![],
            s2: vec![d.succ_opt().unwrap()],
        });
        let s = split_days(&spec).unwrap();
        assert_eq!(s.count(DaySet::S2), 1);
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn rejects_reversed_period() {
        let d = NaiveDate::from_ymd_opt(2020, 3, 2).unwrap();
        assert!(split_days(&SplitSpec::new(d, d.pred_opt().unwrap())).is_err());
    }

    proptest! {
        #[test]
        fn partition(days in 1i64..=400) {
            let s = split_days(&period(days)).unwrap();
            let total: usize = DaySet::ALL.iter().map(|set| s.count(*set)).sum();
            prop_assert_eq!(total, days as usize);
            prop_assert_eq!(s.len(), days as usize);
        }
    }
}
