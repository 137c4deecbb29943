//! Cohort selection, subject-level splits and summary statistics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Cohort, Sex};
use crate::error::{Error, Result};

/// Subjects need this many observed values of the primary variable.
pub const MIN_PRIMARY_OBSERVED: usize = 2;

/// Keeps subjects with at least two observed primary-variable (CDR-SB) values.
pub fn select_cohort(raw: &Cohort) -> Cohort {
    let primary = raw.primary_variable();
    let subjects = raw
        .subjects
        .iter()
        .filter(|s| s.n_variables() > 0 && s.observed_count(primary) >= MIN_PRIMARY_OBSERVED)
        .cloned()
        .collect();
    Cohort {
        subjects,
        variable_names: raw.variable_names.clone(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
    pub fewshot_fraction: f64,
}

impl SplitSpec {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train_ids.len(), self.val_ids.len(), self.test_ids.len())
    }
}

/// Seeded 70/10/20 split by subject; the test split takes the rounding remainder.
pub fn split_subjects(cohort: &Cohort, seed: u64) -> Result<SplitSpec> {
    if cohort.is_empty() {
        return Err(Error::Degenerate("cannot split an empty cohort".into()));
    }
    let mut ids = cohort.ids();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n = ids.len();
    let n_train = n * 7 / 10;
    let n_val = n / 10;
    let test_ids = ids.split_off(n_train + n_val);
    let val_ids = ids.split_off(n_train);
    Ok(SplitSpec {
        train_ids: ids,
        val_ids,
        test_ids,
        seed,
        fewshot_fraction: 1.0,
    })
}

/// Keeps `floor(fraction·|train|)` (at least one) training subjects.
pub fn subsample_fewshot(split: &SplitSpec, fraction: f64, seed: u64) -> Result<SplitSpec> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Argument(format!(
            "few-shot fraction must be in (0, 1], got {fraction}"
        )));
    }
    if fraction == 1.0 {
        return Ok(split.clone());
    }
    let n = split.train_ids.len();
    // small epsilon guards products like 0.29·100 = 28.999…
    let keep = (((fraction * n as f64) + 1e-9).floor() as usize).max(1).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d_u64);
    order.shuffle(&mut rng);
    let mut chosen: Vec<usize> = order.into_iter().take(keep).collect();
    chosen.sort_unstable();
    Ok(SplitSpec {
        train_ids: chosen.into_iter().map(|i| split.train_ids[i].clone()).collect(),
        val_ids: split.val_ids.clone(),
        test_ids: split.test_ids.clone(),
        seed: split.seed,
        fewshot_fraction: split.fewshot_fraction * fraction,
    })
}

/// Descriptive statistics in the layout of a cohort summary table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CohortStats {
    pub n: usize,
    pub age_mean: f64,
    pub age_sd: f64,
    pub female: usize,
    /// Counts for APOE4 = 0, 1, 2 and missing.
    pub apoe4: [usize; 4],
    pub education_mean: f64,
    pub education_sd: f64,
    pub visits_mean: f64,
    pub visits_sd: f64,
}

fn mean_sd(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

pub fn cohort_stats(cohort: &Cohort) -> CohortStats {
    let s = &cohort.subjects;
    let (age_mean, age_sd) = mean_sd(s.iter().map(|x| x.demographics.age_years));
    let (education_mean, education_sd) = mean_sd(s.iter().map(|x| x.demographics.education_years));
    let (visits_mean, visits_sd) = mean_sd(s.iter().map(|x| x.visit_count() as f64));
    let mut apoe4 = [0usize; 4];
    for x in s {
        apoe4[x.demographics.apoe4.map_or(3, |a| a as usize)] += 1;
    }
    CohortStats {
        n: s.len(),
        age_mean,
        age_sd,
        female: s.iter().filter(|x| x.demographics.sex == Sex::Female).count(),
        apoe4,
        education_mean,
        education_sd,
        visits_mean,
        visits_sd,
    }
}

impl CohortStats {
    pub fn render(&self) -> String {
        let pct = |k: usize| 100.0 * k as f64 / self.n.max(1) as f64;
        let rows = [
            ("Participants (N)".to_string(), format!("{}", self.n)),
            (
                "Age (years)".into(),
                format!("{:.1} ± {:.1}", self.age_mean, self.age_sd),
            ),
            (
                "Sex (female)".into(),
                format!("{} ({:.1}%)", self.female, pct(self.female)),
            ),
            (
                "APOE4 = 0".into(),
                format!("{} ({:.1}%)", self.apoe4[0], pct(self.apoe4[0])),
            ),
            (
                "APOE4 = 1".into(),
                format!("{} ({:.1}%)", self.apoe4[1], pct(self.apoe4[1])),
            ),
            (
                "APOE4 = 2".into(),
                format!("{} ({:.1}%)", self.apoe4[2], pct(self.apoe4[2])),
            ),
            (
                "APOE missing".into(),
                format!("{} ({:.1}%)", self.apoe4[3], pct(self.apoe4[3])),
            ),
            (
                "Years of education".into(),
                format!("{:.1} ± {:.1}", self.education_mean, self.education_sd),
            ),
            (
                "Mean visits per participant".into(),
                format!("{:.1} ± {:.1}", self.visits_mean, self.visits_sd),
            ),
        ];
        let w = rows.iter().map(|(k, _)| k.chars().count()).max().unwrap_or(0);
        let mut out = format!("{:<w$}  Value\n", "Variable");
        for (k, v) in rows {
            out.push_str(&format!("{k:<w$}  {v}\n"));
        }
        out
    }
}
