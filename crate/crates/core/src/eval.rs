//! Masked MAE, baseline forecasters, the seeded split protocol and the ablation grid.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backbone::Backbone;
use crate::container::sha256_hex;
use crate::data::{split_subjects, subsample_fewshot, visit_slot, Cohort, SplitSpec, SubjectRecord, PRIMARY_VARIABLE};
use crate::error::{Error, Result};
use crate::model::{KvCache, ModelBundle, ModelConfig};
use crate::prompt::display_name;
use crate::tensor::Scalar;
use crate::train::{train, TrainConfig};

/// Forecast visit months of the evaluation protocol.
pub const HORIZONS: [u32; 5] = [12, 18, 24, 36, 48];
/// Label of the full training split (70% of the cohort).
pub const BASE_FRACTION: f64 = 0.7;
pub const FRACTIONS: [f64; 3] = [BASE_FRACTION, 0.1, 0.01];
pub const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Per-variable `(Σ|error|, observed count)` over mask-true cells.
pub fn masked_mae(pred: &[Vec<f64>], target: &[Vec<f64>], mask: &[Vec<bool>]) -> Vec<(f64, usize)> {
    pred.iter()
        .zip(target)
        .zip(mask)
        .map(|((p, t), m)| {
            p.iter()
                .zip(t)
                .zip(m)
                .filter(|(_, &m)| m)
                .fold((0.0, 0), |(s, n), ((p, t), _)| (s + (p - t).abs(), n + 1))
        })
        .collect()
}

/// Anything that produces a next-visit forecast per variable.
pub trait Forecaster {
    fn name(&self) -> &str;
    /// Clinical-unit forecast of the visit at `upto` for each variable;
    /// `None` marks a variable it cannot forecast.
    fn forecast(&self, subject: &SubjectRecord, upto: u32) -> Result<Vec<Option<f64>>>;
}

/// Last observation carried forward from any visit before `upto`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Locf;

impl Forecaster for Locf {
    fn name(&self) -> &str {
        "LOCF"
    }

    fn forecast(&self, subject: &SubjectRecord, upto: u32) -> Result<Vec<Option<f64>>> {
        let end = target_slot(upto)?;
        Ok((0..subject.n_variables())
            .map(|v| (0..end).rev().find_map(|t| subject.value(v, t)))
            .collect())
    }
}

/// Per-variable mean of the training subjects' observed target-visit values.
#[derive(Clone, Debug)]
pub struct ConstantMean {
    pub means: Vec<Option<f64>>,
}

impl ConstantMean {
    pub fn fit(cohort: &Cohort, train_ids: &[String], upto: u32) -> Result<Self> {
        let slot = target_slot(upto)?;
        let mut sums = vec![(0.0, 0usize); cohort.n_variables()];
        for s in cohort.select(train_ids)? {
            for (v, acc) in sums.iter_mut().enumerate() {
                if let Some(x) = s.value(v, slot) {
                    acc.0 += x;
                    acc.1 += 1;
                }
            }
        }
        Ok(Self {
            means: sums.iter().map(|&(s, n)| (n > 0).then(|| s / n as f64)).collect(),
        })
    }
}

impl Forecaster for ConstantMean {
    fn name(&self) -> &str {
        "ConstantMean"
    }

    fn forecast(&self, _subject: &SubjectRecord, _upto: u32) -> Result<Vec<Option<f64>>> {
        Ok(self.means.clone())
    }
}

/// A trained bundle with its prototype keys and values precomputed.
pub struct ModelForecaster<'a, F: Scalar> {
    pub bundle: &'a ModelBundle<F>,
    cache: KvCache<F>,
}

impl<'a, F: Scalar> ModelForecaster<'a, F> {
    pub fn new(bundle: &'a ModelBundle<F>) -> Result<Self> {
        Ok(Self {
            bundle,
            cache: bundle.kv_cache()?,
        })
    }
}

impl<F: Scalar> Forecaster for ModelForecaster<'_, F> {
    fn name(&self) -> &str {
        "Model"
    }

    fn forecast(&self, subject: &SubjectRecord, upto: u32) -> Result<Vec<Option<f64>>> {
        let out = match self.bundle.forward_all_cached(&self.cache, subject, upto) {
            Ok(o) => o,
            Err(Error::Degenerate(_)) => return Ok(vec![None; subject.n_variables()]),
            Err(e) => return Err(e),
        };
        Ok(out
            .y_hat
            .iter()
            .map(|y| y.first().copied().filter(|x| !x.is_nan()))
            .collect())
    }
}

fn target_slot(upto: u32) -> Result<usize> {
    visit_slot(upto)
        .filter(|&s| s > 0)
        .ok_or_else(|| Error::Argument(format!("horizon {upto} is not a follow-up visit month")))
}

/// Masked MAE sums for one horizon over one test set.
#[derive(Clone, Debug, PartialEq)]
pub struct HorizonResult {
    pub upto_month: u32,
    pub sums: Vec<f64>,
    pub counts: Vec<usize>,
}

impl HorizonResult {
    /// `None` when the variable had no observed, forecastable target.
    pub fn mae(&self, var: usize) -> Option<f64> {
        (self.counts[var] > 0).then(|| self.sums[var] / self.counts[var] as f64)
    }
}

/// Forecasts every test subject's visit at `upto` and scores observed targets.
pub fn evaluate<Fc: Forecaster + ?Sized>(
    forecaster: &Fc,
    cohort: &Cohort,
    test_ids: &[String],
    upto: u32,
) -> Result<HorizonResult> {
    if test_ids.is_empty() {
        return Err(Error::Degenerate("empty test split".into()));
    }
    let slot = target_slot(upto)?;
    let d = cohort.n_variables();
    let mut result = HorizonResult {
        upto_month: upto,
        sums: vec![0.0; d],
        counts: vec![0; d],
    };
    for s in cohort.select(test_ids)? {
        if (0..d).all(|v| !s.is_observed(v, slot)) {
            continue;
        }
        let fc = forecaster
            .forecast(s, upto)
            .map_err(|e| e.context(format!("{} on subject `{}`", forecaster.name(), s.subject_id)))?;
        let mut pred = vec![vec![0.0]; d];
        let mut target = vec![vec![0.0]; d];
        let mut mask = vec![vec![false]; d];
        for v in 0..d {
            if let (Some(p), Some(t)) = (fc[v], s.value(v, slot)) {
                if !p.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite {} forecast of {} for `{}`",
                        forecaster.name(),
                        cohort.variable_names[v],
                        s.subject_id
                    )));
                }
                pred[v][0] = p;
                target[v][0] = t;
                mask[v][0] = true;
            }
        }
        for (v, (sum, n)) in masked_mae(&pred, &target, &mask).into_iter().enumerate() {
            result.sums[v] += sum;
            result.counts[v] += n;
        }
    }
    Ok(result)
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub variable: String,
    pub horizon_months: u32,
    pub fraction: f64,
    pub mae_mean: f64,
    pub mae_std: f64,
    /// Observed test targets summed over seeds.
    pub n_test_observed: usize,
}

/// One scored (seed, fraction, horizon) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub fraction: f64,
    pub horizon_months: u32,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub config_digest: String,
    pub mae: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variables: Vec<String>,
    pub runs: Vec<RunRecord>,
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    /// Aggregates runs across seeds per (variable, horizon, fraction).
    pub fn from_runs(variables: Vec<String>, runs: Vec<RunRecord>) -> Self {
        let mut keys: Vec<(f64, u32)> = Vec::new();
        for r in &runs {
            if !keys.iter().any(|&(f, h)| f == r.fraction && h == r.horizon_months) {
                keys.push((r.fraction, r.horizon_months));
            }
        }
        let mut rows = Vec::new();
        for &(fraction, horizon) in &keys {
            for (v, name) in variables.iter().enumerate() {
                let cell: Vec<&RunRecord> = runs
                    .iter()
                    .filter(|r| r.fraction == fraction && r.horizon_months == horizon)
                    .collect();
                let maes: Vec<f64> = cell.iter().filter_map(|r| r.mae[v]).collect();
                if maes.is_empty() {
                    continue;
                }
                let (mae_mean, mae_std) = mean_std(&maes);
                rows.push(ReportRow {
                    variable: name.clone(),
                    horizon_months: horizon,
                    fraction,
                    mae_mean,
                    mae_std,
                    n_test_observed: cell.iter().map(|r| r.counts[v]).sum(),
                });
            }
        }
        Self { variables, runs, rows }
    }

    pub fn row(&self, variable: &str, horizon: u32, fraction: f64) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.variable == variable && r.horizon_months == horizon && r.fraction == fraction)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    /// Variables down, horizons across, one block per fraction.
    pub fn render_table(&self) -> String {
        let mut fractions: Vec<f64> = Vec::new();
        let mut horizons: Vec<u32> = Vec::new();
        for r in &self.rows {
            if !fractions.contains(&r.fraction) {
                fractions.push(r.fraction);
            }
            if !horizons.contains(&r.horizon_months) {
                horizons.push(r.horizon_months);
            }
        }
        horizons.sort_unstable();
        let mut out = String::new();
        for f in fractions {
            let _ = writeln!(out, "training fraction {f}");
            let _ = write!(out, "{:<10}", "variable");
            for h in &horizons {
                let _ = write!(out, " {:>17}", format!("{h} months"));
            }
            out.push('\n');
            for v in &self.variables {
                let _ = write!(out, "{:<10}", display_name(v));
                for &h in &horizons {
                    let cell = self
                        .row(v, h, f)
                        .map_or("-".to_string(), |r| format!("{:.4} ± {:.4}", r.mae_mean, r.mae_std));
                    let _ = write!(out, " {cell:>17}");
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }
}

/// The seeded repeated-split experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub horizons: Vec<u32>,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            horizons: HORIZONS.to_vec(),
            fractions: FRACTIONS.to_vec(),
            seeds: SEEDS.to_vec(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Share of the training split kept for a fraction label.
pub fn train_share(fraction: f64) -> f64 {
    if fraction == BASE_FRACTION {
        1.0
    } else {
        fraction
    }
}

/// Split for `seed` reduced to `fraction` of its training subjects.
pub fn protocol_split(cohort: &Cohort, seed: u64, fraction: f64) -> Result<SplitSpec> {
    let split = split_subjects(cohort, seed)?;
    let mut sub = subsample_fewshot(&split, train_share(fraction), seed)?;
    sub.fewshot_fraction = fraction;
    Ok(sub)
}

pub fn config_digest(model: &ModelConfig, train: &TrainConfig) -> Result<String> {
    let json = serde_json::to_string(&(model, train))?;
    Ok(sha256_hex(json.as_bytes()))
}

/// Builds, trains and scores one bundle.
pub fn run_once<F: Scalar>(
    cohort: &Cohort,
    backbone: &Arc<Backbone<F>>,
    split: &SplitSpec,
    model: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(ModelBundle<F>, RunRecord)> {
    let mut bundle = ModelBundle::new(model.clone(), backbone.clone(), cohort.variable_names.clone())?;
    train(&mut bundle, cohort, &split.train_ids, &split.val_ids, train_cfg)?;
    let fc = ModelForecaster::new(&bundle)?;
    let res = evaluate(&fc, cohort, &split.test_ids, model.upto_month)?;
    let (train_n, val_n, test_n) = split.sizes();
    let record = RunRecord {
        seed: split.seed,
        fraction: split.fewshot_fraction,
        horizon_months: model.upto_month,
        train: train_n,
        val: val_n,
        test: test_n,
        config_digest: config_digest(model, train_cfg)?,
        mae: (0..cohort.n_variables()).map(|v| res.mae(v)).collect(),
        counts: res.counts.clone(),
    };
    Ok((bundle, record))
}

/// Full cross of seeds × fractions × horizons; `progress` sees each finished run.
pub fn run_protocol<F: Scalar>(
    cohort: &Cohort,
    backbone: &Arc<Backbone<F>>,
    cfg: &ProtocolConfig,
    mut progress: impl FnMut(&RunRecord),
) -> Result<EvalReport> {
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        for &fraction in &cfg.fractions {
            let split = protocol_split(cohort, seed, fraction)?;
            for &h in &cfg.horizons {
                let model = ModelConfig {
                    upto_month: h,
                    seed,
                    ..cfg.model.clone()
                };
                let train_cfg = TrainConfig {
                    seed,
                    ..cfg.train.clone()
                };
                let (_, record) = run_once(cohort, backbone, &split, &model, &train_cfg)
                    .map_err(|e| e.context(format!("seed {seed}, fraction {fraction}, horizon {h}")))?;
                progress(&record);
                runs.push(record);
            }
        }
    }
    Ok(EvalReport::from_runs(cohort.variable_names.clone(), runs))
}

/// One-axis departures from the default configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationVariant {
    Default,
    HalfLayers,
    NoPrompt,
    NoRevin,
    Prototypes1000,
    Heads4,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 6] = [
        AblationVariant::Default,
        AblationVariant::HalfLayers,
        AblationVariant::NoPrompt,
        AblationVariant::NoRevin,
        AblationVariant::Prototypes1000,
        AblationVariant::Heads4,
    ];

    /// Parses `layers=6`, `prompt=off`, `revin=off`, `prototypes=1000`, `heads=4` or `default`.
    pub fn parse(axis: &str) -> Result<Self> {
        match axis.trim().to_ascii_lowercase().as_str() {
            "default" => Ok(Self::Default),
            "layers=6" | "6l" => Ok(Self::HalfLayers),
            "prompt=off" => Ok(Self::NoPrompt),
            "revin=off" => Ok(Self::NoRevin),
            "prototypes=1000" | "1000p" => Ok(Self::Prototypes1000),
            "heads=4" | "4h" => Ok(Self::Heads4),
            other => Err(Error::Argument(format!(
                "unknown ablation axis `{other}`; expected default, layers=6, prompt=off, revin=off, prototypes=1000 or heads=4"
            ))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Default => "Default",
            Self::HalfLayers => "6L",
            Self::NoPrompt => "No Prompt",
            Self::NoRevin => "No RevIN",
            Self::Prototypes1000 => "1000P",
            Self::Heads4 => "4H",
        }
    }

    /// `base` with this variant's axis changed; the layer axis runs half
    /// the backbone (6 of 12 blocks).
    pub fn apply(self, base: &ModelConfig, backbone_layers: usize) -> ModelConfig {
        let mut cfg = base.clone();
        match self {
            Self::Default => {}
            Self::HalfLayers => cfg.llm_layers = Some((backbone_layers / 2).max(1)),
            Self::NoPrompt => cfg.prompt = crate::model::PromptMode::Off,
            Self::NoRevin => cfg.revin = false,
            Self::Prototypes1000 => cfg.prototypes = 1000,
            Self::Heads4 => cfg.heads = 4,
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub horizon_months: u32,
    pub mae: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub variable: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn mae(&self, variant: AblationVariant, horizon: u32) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.variant == variant.label() && r.horizon_months == horizon)
            .map(|r| r.mae)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn render_table(&self) -> String {
        let mut horizons: Vec<u32> = self.rows.iter().map(|r| r.horizon_months).collect();
        horizons.sort_unstable();
        horizons.dedup();
        let mut variants: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !variants.contains(&r.variant.as_str()) {
                variants.push(&r.variant);
            }
        }
        let mut out = format!("{} MAE\n{:<10}", display_name(&self.variable), "variant");
        for h in &horizons {
            let _ = write!(out, " {:>10}", format!("{h} months"));
        }
        out.push('\n');
        for v in variants {
            let _ = write!(out, "{v:<10}");
            for &h in &horizons {
                let cell = self
                    .rows
                    .iter()
                    .find(|r| r.variant == v && r.horizon_months == h)
                    .map_or("-".to_string(), |r| format!("{:.4}", r.mae));
                let _ = write!(out, " {cell:>10}");
            }
            out.push('\n');
        }
        out
    }
}

/// Trains each variant on the 10% split of `seed` and reports the primary variable's MAE.
pub fn run_ablation<F: Scalar>(
    cohort: &Cohort,
    backbone: &Arc<Backbone<F>>,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    variants: &[AblationVariant],
    horizons: &[u32],
    seed: u64,
) -> Result<AblationTable> {
    let primary = cohort
        .variable_index(PRIMARY_VARIABLE)
        .unwrap_or_else(|| cohort.primary_variable());
    let split = protocol_split(cohort, seed, 0.1)?;
    let mut rows = Vec::new();
    for &variant in variants {
        for &h in horizons {
            let model = ModelConfig {
                upto_month: h,
                seed,
                ..variant.apply(base, backbone.config.layers)
            };
            let tc = TrainConfig {
                seed,
                ..train_cfg.clone()
            };
            let (_, record) = run_once(cohort, backbone, &split, &model, &tc)
                .map_err(|e| e.context(format!("ablation {}, horizon {h}", variant.label())))?;
            rows.push(AblationRow {
                variant: variant.label().to_string(),
                horizon_months: h,
                mae: record.mae[primary].unwrap_or(f64::NAN),
            });
        }
    }
    Ok(AblationTable {
        variable: cohort.variable_names[primary].clone(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::testutil::subject;
    use crate::data::{synth_cohort, SynthProfile};

    #[test]
    fn masked_mae_hand_values() {
        let r = masked_mae(&[vec![1.0, 4.0]], &[vec![2.0, 0.0]], &[vec![true, false]]);
        assert_eq!(r, vec![(1.0, 1)]);
        let r = masked_mae(&[vec![3.0]], &[vec![3.0]], &[vec![true]]);
        assert_eq!(r, vec![(0.0, 1)]);
        let r = masked_mae(&[vec![3.0]], &[vec![9.0]], &[vec![false]]);
        assert_eq!(r, vec![(0.0, 0)]);
    }

    #[test]
    fn locf_carries_last_observation() {
        let s = subject("a", &[&[(0, 1.0), (1, 2.0), (3, 9.0)], &[(0, 5.0)]]);
        assert_eq!(Locf.forecast(&s, 18).unwrap(), vec![Some(2.0), Some(5.0)]);
        assert_eq!(Locf.forecast(&s, 24).unwrap(), vec![Some(9.0), Some(5.0)]);
        assert_eq!(Locf.forecast(&s, 48).unwrap(), vec![Some(9.0), Some(5.0)]);
    }

    #[test]
    fn population_std_over_seeds() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
        assert_eq!(mean_std(&[0.5, 0.5]), (0.5, 0.0));
    }

    #[test]
    fn report_aggregates_injected_maes() {
        let run = |seed, mae: f64, count| RunRecord {
            seed,
            fraction: 0.1,
            horizon_months: 12,
            train: 1,
            val: 1,
            test: 1,
            config_digest: String::new(),
            mae: vec![Some(mae), None],
            counts: vec![count, 0],
        };
        let rep = EvalReport::from_runs(
            vec!["CDRSB".into(), "TOTAL13".into()],
            vec![run(0, 0.5, 10), run(1, 0.9, 12), run(2, 1.3, 11)],
        );
        assert_eq!(rep.rows.len(), 1);
        let r = rep.row("CDRSB", 12, 0.1).unwrap();
        let sd = ((0.16 + 0.0 + 0.16) / 3.0f64).sqrt();
        assert!((r.mae_mean - 0.9).abs() < 1e-12);
        assert!((r.mae_std - sd).abs() < 1e-12);
        assert_eq!(r.n_test_observed, 33);
        let csv = rep.to_csv().unwrap();
        assert!(csv.starts_with("variable,horizon_months,fraction,mae_mean,mae_std,n_test_observed\n"));
        assert!(rep.render_table().contains("CDR-SB"));
    }

    #[test]
    fn constant_mean_matches_generator_deviation() {
        let profile = SynthProfile::default();
        let cohort = synth_cohort(20000, 3, &profile).unwrap();
        let split = split_subjects(&cohort, 3).unwrap();
        let cm = ConstantMean::fit(&cohort, &split.train_ids, 12).unwrap();
        let res = evaluate(&cm, &cohort, &split.test_ids, 12).unwrap();
        for (v, p) in profile.variables.iter().enumerate() {
            let oracle = p.mean_abs_deviation(12);
            let mae = res.mae(v).unwrap();
            assert!((mae - oracle).abs() / oracle < 0.05, "{}: {mae} vs {oracle}", p.name);
        }
    }

    #[test]
    fn evaluation_requires_test_subjects() {
        let cohort = synth_cohort(20, 0, &SynthProfile::default()).unwrap();
        assert!(matches!(evaluate(&Locf, &cohort, &[], 12), Err(Error::Degenerate(_))));
    }

    #[test]
    fn ablation_axes_parse_and_apply() {
        let base = ModelConfig::default();
        for v in AblationVariant::ALL {
            let cfg = v.apply(&base, 12);
            let changed = [
                cfg.llm_layers != base.llm_layers,
                cfg.prompt != base.prompt,
                cfg.revin != base.revin,
                cfg.prototypes != base.prototypes,
                cfg.heads != base.heads,
            ];
            let n = changed.iter().filter(|&&c| c).count();
            assert_eq!(n, usize::from(v != AblationVariant::Default), "{v:?}");
        }
        assert_eq!(AblationVariant::HalfLayers.apply(&base, 12).llm_layers, Some(6));
        assert_eq!(AblationVariant::parse("revin=off").unwrap(), AblationVariant::NoRevin);
        assert!(AblationVariant::parse("revin=maybe").is_err());
    }

    #[test]
    fn fraction_labels_map_to_train_shares() {
        let cohort = synth_cohort(1783, 0, &SynthProfile::default()).unwrap();
        let sizes: Vec<usize> = FRACTIONS
            .iter()
            .map(|&f| protocol_split(&cohort, 0, f).unwrap().train_ids.len())
            .collect();
        assert_eq!(sizes, vec![1248, 124, 12]);
    }
}
