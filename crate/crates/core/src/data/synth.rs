//! Synthetic cohorts with ADNI-like score ranges, visit schedules and demographics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Cohort, Demographics, Sex, SubjectRecord, N_VISITS, PRIMARY_VARIABLE, VISIT_MONTHS};
use crate::error::{Error, Result};

/// Trajectory `y(t) = b + slope·t/12 + noise` with per-subject `b` and `slope`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableProfile {
    pub name: String,
    pub baseline_mean: f64,
    pub baseline_sd: f64,
    /// Per-year change.
    pub slope_mean: f64,
    pub slope_sd: f64,
    pub noise_sd: f64,
}

impl VariableProfile {
    pub fn new(name: &str, baseline: (f64, f64), slope: (f64, f64), noise_sd: f64) -> Self {
        Self {
            name: name.to_string(),
            baseline_mean: baseline.0,
            baseline_sd: baseline.1,
            slope_mean: slope.0,
            slope_sd: slope.1,
            noise_sd,
        }
    }

    /// Mean and standard deviation of the population marginal at `month`.
    pub fn marginal(&self, month: u32) -> (f64, f64) {
        let years = month as f64 / 12.0;
        let mean = self.baseline_mean + self.slope_mean * years;
        let var = self.baseline_sd.powi(2) + (self.slope_sd * years).powi(2) + self.noise_sd.powi(2);
        (mean, var.sqrt())
    }

    /// Expected `|y - mean|` of the marginal at `month`.
    pub fn mean_abs_deviation(&self, month: u32) -> f64 {
        self.marginal(month).1 * (2.0 / std::f64::consts::PI).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthProfile {
    pub variables: Vec<VariableProfile>,
    pub age_mean: f64,
    pub age_sd: f64,
    pub female_fraction: f64,
    /// Probabilities of APOE4 = 0, 1, 2 and missing.
    pub apoe4_probs: [f64; 4],
    pub education_mean: f64,
    pub education_sd: f64,
    pub visits_mean: f64,
    pub visits_sd: f64,
    /// Chance a scheduled follow-up is missed while the subject stays enrolled.
    pub visit_skip_prob: f64,
    /// Chance a non-primary variable is recorded at a kept visit.
    pub secondary_observed_prob: f64,
}

impl Default for SynthProfile {
    fn default() -> Self {
        Self {
            variables: vec![
                VariableProfile::new("CDRSB", (1.8, 1.6), (0.7, 0.6), 0.1),
                VariableProfile::new("TOTAL13", (17.0, 8.0), (2.5, 2.5), 0.4),
                VariableProfile::new("FAQTOTAL", (4.0, 5.0), (1.8, 2.0), 0.3),
                VariableProfile::new("AVDEL30MIN", (5.0, 4.0), (-0.6, 0.8), 0.15),
            ],
            age_mean: 73.5,
            age_sd: 7.2,
            female_fraction: 0.455,
            apoe4_probs: [0.531, 0.368, 0.100, 0.001],
            education_mean: 16.0,
            education_sd: 2.8,
            visits_mean: 4.8,
            visits_sd: 1.3,
            visit_skip_prob: 0.1,
            secondary_observed_prob: 0.92,
        }
    }
}

impl SynthProfile {
    pub fn variable(&self, name: &str) -> Option<&VariableProfile> {
        self.variables.iter().find(|v| v.name == name)
    }

    fn validate(&self) -> Result<()> {
        if self.variables.is_empty() {
            return Err(Error::Argument("profile needs at least one variable".into()));
        }
        let sds = self
            .variables
            .iter()
            .flat_map(|v| [v.baseline_sd, v.slope_sd, v.noise_sd]);
        if sds
            .chain([self.age_sd, self.education_sd, self.visits_sd])
            .any(|s| !(s >= 0.0))
        {
            return Err(Error::Argument("standard deviations must be non-negative".into()));
        }
        let total: f64 = self.apoe4_probs.iter().sum();
        if self.apoe4_probs.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-6 {
            return Err(Error::Argument("APOE4 probabilities must sum to 1".into()));
        }
        for p in [self.female_fraction, self.visit_skip_prob, self.secondary_observed_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Argument(format!("probability out of range: {p}")));
            }
        }
        Ok(())
    }
}

fn normal(mean: f64, sd: f64) -> Normal<f64> {
    Normal::new(mean, sd).expect("validated standard deviation")
}

/// Draws `n` subjects. Every subject keeps baseline plus at least one follow-up
/// (scheduled visits in order until dropout),
/// with the primary variable observed at each kept visit.
pub fn synth_cohort(n: usize, seed: u64, profile: &SynthProfile) -> Result<Cohort> {
    if n == 0 {
        return Err(Error::Argument("synthetic cohort size must be at least 1".into()));
    }
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let primary = profile
        .variables
        .iter()
        .position(|v| v.name == PRIMARY_VARIABLE)
        .unwrap_or(0);
    let age = normal(profile.age_mean, profile.age_sd);
    let edu = normal(profile.education_mean, profile.education_sd);
    let visits = normal(profile.visits_mean, profile.visits_sd);
    let width = n.to_string().len().max(4);

    let mut subjects = Vec::with_capacity(n);
    for i in 0..n {
        let sex = if rng.random::<f64>() < profile.female_fraction {
            Sex::Female
        } else {
            Sex::Male
        };
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut apoe_class = 3;
        for (k, p) in profile.apoe4_probs.iter().enumerate() {
            acc += p;
            if u < acc {
                apoe_class = k;
                break;
            }
        }
        let apoe4 = (apoe_class < 3).then_some(apoe_class as u8);
        let demographics = Demographics::new(
            age.sample(&mut rng).max(40.0),
            sex,
            apoe4,
            edu.sample(&mut rng).round().max(0.0),
        )?;

        let k = (visits.sample(&mut rng).round() as i64).clamp(2, N_VISITS as i64) as usize;
        // follow the visit schedule until dropout, occasionally missing one
        let mut kept = [false; N_VISITS];
        kept[0] = true;
        let mut count = 1;
        for t in 1..N_VISITS {
            if count == k {
                break;
            }
            if k - count >= N_VISITS - t || rng.random::<f64>() >= profile.visit_skip_prob {
                kept[t] = true;
                count += 1;
            }
        }

        let mut values = Vec::with_capacity(profile.variables.len());
        let mut observed = Vec::with_capacity(profile.variables.len());
        for (v, vp) in profile.variables.iter().enumerate() {
            let b = normal(vp.baseline_mean, vp.baseline_sd).sample(&mut rng);
            let slope = normal(vp.slope_mean, vp.slope_sd).sample(&mut rng);
            let noise = normal(0.0, vp.noise_sd);
            let mut row = [0.0; N_VISITS];
            let mut mask = [false; N_VISITS];
            for t in 0..N_VISITS {
                row[t] = b + slope * VISIT_MONTHS[t] as f64 / 12.0 + noise.sample(&mut rng);
                let recorded = v == primary || rng.random::<f64>() < profile.secondary_observed_prob;
                mask[t] = kept[t] && recorded;
            }
            values.push(row);
            observed.push(mask);
        }
        subjects.push(SubjectRecord::new(
            format!("S{i:0width$}"),
            demographics,
            values,
            observed,
        )?);
    }
    Cohort::new(subjects, profile.variables.iter().map(|v| v.name.clone()).collect())
}
