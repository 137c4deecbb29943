//! Visit-aligned subject records, cohort rules, splits and synthetic cohorts.

mod cache;
mod cohort;
mod csv;
mod synth;

pub use self::cache::{load_cohort_cache, save_cohort_cache, COHORT_CACHE_FILE, COHORT_MANIFEST_FILE};
pub use self::cohort::{
    cohort_stats, select_cohort, split_subjects, subsample_fewshot, CohortStats, SplitSpec, MIN_PRIMARY_OBSERVED,
};
pub use self::csv::{parse_adni_csv, write_adni_csv, Schema};
pub use self::synth::{synth_cohort, SynthProfile, VariableProfile};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical visit grid in months: baseline then six follow-ups.
pub const VISIT_MONTHS: [u32; 7] = [0, 6, 12, 18, 24, 36, 48];
pub const N_VISITS: usize = VISIT_MONTHS.len();

/// Default forecast targets, in cohort order.
pub const DEFAULT_VARIABLES: [&str; 4] = ["CDRSB", "TOTAL13", "FAQTOTAL", "AVDEL30MIN"];

/// Variable whose observation count drives cohort selection.
pub const PRIMARY_VARIABLE: &str = "CDRSB";

/// Slot index of a canonical visit month.
pub fn visit_slot(month: u32) -> Option<usize> {
    VISIT_MONTHS.iter().position(|&m| m == month)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Demographics {
    pub age_years: f64,
    pub sex: Sex,
    /// APOE ε4 allele count; `None` when not recorded.
    pub apoe4: Option<u8>,
    pub education_years: f64,
}

impl Demographics {
    pub fn new(age_years: f64, sex: Sex, apoe4: Option<u8>, education_years: f64) -> Result<Self> {
        if !(age_years > 0.0) || !age_years.is_finite() {
            return Err(Error::Argument(format!("age must be positive, got {age_years}")));
        }
        if !(education_years >= 0.0) || !education_years.is_finite() {
            return Err(Error::Argument(format!(
                "education must be non-negative, got {education_years}"
            )));
        }
        if matches!(apoe4, Some(n) if n > 2) {
            return Err(Error::Argument(format!("APOE4 count must be 0..=2, got {apoe4:?}")));
        }
        Ok(Self {
            age_years,
            sex,
            apoe4,
            education_years,
        })
    }
}

/// One subject: demographics plus `d` variable series on the visit grid.
///
/// Unobserved cells hold `NaN`; always consult the mask, never the sentinel.
#[derive(Clone, Debug)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub demographics: Demographics,
    values: Vec<[f64; N_VISITS]>,
    observed: Vec<[bool; N_VISITS]>,
}

impl SubjectRecord {
    pub fn new(
        subject_id: impl Into<String>,
        demographics: Demographics,
        mut values: Vec<[f64; N_VISITS]>,
        observed: Vec<[bool; N_VISITS]>,
    ) -> Result<Self> {
        if values.len() != observed.len() {
            return Err(Error::Dimension {
                op: "subject record",
                lhs: vec![values.len(), N_VISITS],
                rhs: vec![observed.len(), N_VISITS],
            });
        }
        for (row, mask) in values.iter_mut().zip(&observed) {
            for (v, &m) in row.iter_mut().zip(mask) {
                if !m {
                    *v = f64::NAN;
                } else if !v.is_finite() {
                    return Err(Error::Numeric("observed value is not finite".into()));
                }
            }
        }
        Ok(Self {
            subject_id: subject_id.into(),
            demographics,
            values,
            observed,
        })
    }

    pub fn n_variables(&self) -> usize {
        self.values.len()
    }

    /// The value at `(variable, slot)` if observed.
    pub fn value(&self, var: usize, slot: usize) -> Option<f64> {
        self.observed[var][slot].then(|| self.values[var][slot])
    }

    pub fn is_observed(&self, var: usize, slot: usize) -> bool {
        self.observed[var][slot]
    }

    pub fn mask(&self, var: usize) -> &[bool; N_VISITS] {
        &self.observed[var]
    }

    /// Raw row including sentinels. Only pair with [`Self::mask`].
    pub fn raw_values(&self, var: usize) -> &[f64; N_VISITS] {
        &self.values[var]
    }

    pub fn observed_count(&self, var: usize) -> usize {
        self.observed[var].iter().filter(|&&m| m).count()
    }

    /// Visits with at least one observed score.
    pub fn visit_count(&self) -> usize {
        (0..N_VISITS).filter(|&t| self.observed.iter().any(|m| m[t])).count()
    }

    /// Copy with one observed cell overwritten (mask unchanged).
    pub fn with_value(&self, var: usize, slot: usize, v: f64) -> Result<Self> {
        let mut out = self.clone();
        if !out.observed[var][slot] {
            return Err(Error::Argument(format!("cell ({var}, {slot}) is not observed")));
        }
        out.values[var][slot] = v;
        Ok(out)
    }

    /// Copy with every unobserved cell holding `v` instead of `NaN`.
    pub fn with_unobserved_filled(&self, v: f64) -> Self {
        let mut out = self.clone();
        for (row, mask) in out.values.iter_mut().zip(&out.observed) {
            for (x, &m) in row.iter_mut().zip(mask) {
                if !m {
                    *x = v;
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Cohort {
    pub subjects: Vec<SubjectRecord>,
    pub variable_names: Vec<String>,
}

impl Cohort {
    pub fn new(subjects: Vec<SubjectRecord>, variable_names: Vec<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (row, s) in subjects.iter().enumerate() {
            if s.n_variables() != variable_names.len() {
                return Err(Error::Data {
                    row,
                    msg: format!(
                        "subject `{}` has {} variables, cohort has {}",
                        s.subject_id,
                        s.n_variables(),
                        variable_names.len()
                    ),
                });
            }
            if !seen.insert(s.subject_id.as_str()) {
                return Err(Error::Data {
                    row,
                    msg: format!("duplicate subject_id `{}`", s.subject_id),
                });
            }
        }
        Ok(Self {
            subjects,
            variable_names,
        })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn visit_months(&self) -> &'static [u32; N_VISITS] {
        &VISIT_MONTHS
    }

    pub fn ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.subject_id.clone()).collect()
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectRecord> {
        self.subjects.iter().find(|s| s.subject_id == id)
    }

    /// Subjects for the given ids, in id order; unknown ids are an error.
    pub fn select<'a>(&'a self, ids: &[String]) -> Result<Vec<&'a SubjectRecord>> {
        let index: std::collections::HashMap<&str, &SubjectRecord> =
            self.subjects.iter().map(|s| (s.subject_id.as_str(), s)).collect();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Argument(format!("unknown subject `{id}`")))
            })
            .collect()
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variable_names.iter().position(|v| v == name)
    }

    /// Index of the selection variable: `CDRSB` when present, else the first.
    pub fn primary_variable(&self) -> usize {
        self.variable_index(PRIMARY_VARIABLE).unwrap_or(0)
    }

    pub fn n_variables(&self) -> usize {
        self.variable_names.len()
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    pub fn demo() -> Demographics {
        Demographics::new(73.5, Sex::Female, Some(1), 16.0).unwrap()
    }

    /// Subject with `d` variables; `cells[v]` lists `(slot, value)` observations.
    pub fn subject(id: &str, cells: &[&[(usize, f64)]]) -> SubjectRecord {
        let mut values = vec![[0.0; N_VISITS]; cells.len()];
        let mut observed = vec![[false; N_VISITS]; cells.len()];
        for (v, obs) in cells.iter().enumerate() {
            for &(t, x) in obs.iter() {
                values[v][t] = x;
                observed[v][t] = true;
            }
        }
        SubjectRecord::new(id, demo(), values, observed).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;

    #[test]
    fn unobserved_cells_are_nan_and_hidden() {
        let s = subject("a", &[&[(0, 1.0), (2, 3.0)]]);
        assert_eq!(s.value(0, 0), Some(1.0));
        assert_eq!(s.value(0, 1), None);
        assert!(s.raw_values(0)[1].is_nan());
        assert_eq!(s.observed_count(0), 2);
        assert_eq!(s.visit_count(), 2);
    }

    #[test]
    fn demographics_are_validated() {
        assert!(Demographics::new(0.0, Sex::Male, None, 12.0).is_err());
        assert!(Demographics::new(70.0, Sex::Male, None, -1.0).is_err());
        assert!(Demographics::new(70.0, Sex::Male, Some(3), 12.0).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let a = subject("x", &[&[(0, 1.0)]]);
        let err = Cohort::new(vec![a.clone(), a], vec!["CDRSB".into()]).unwrap_err();
        assert!(matches!(err, Error::Data { row: 1, .. }));
    }
}
