//! Masked MSE, Adam, and the epoch loop over the trainable subset.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Cohort;
use crate::error::{Error, Result};
use crate::model::{ModelBundle, VariableInput};
use crate::tensor::{ParameterSet, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weight_decay: f64,
    /// Global gradient-norm clip.
    pub clip_norm: Option<f64>,
    /// Cosine decay from `lr` to 0 over all steps.
    pub cosine: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            weight_decay: 0.0,
            clip_norm: None,
            cosine: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Argument(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Argument("epochs and batch size must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Argument(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Argument(format!("clip norm must be > 0, got {c}")));
            }
        }
        Ok(())
    }
}

/// Flattened `B×d×h` predictions, targets and observation mask.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskedBatch {
    pub shape: [usize; 3],
    pub predictions: Vec<f64>,
    pub targets: Vec<f64>,
    pub mask: Vec<bool>,
}

impl MaskedBatch {
    pub fn new(shape: [usize; 3], predictions: Vec<f64>, targets: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        let n = shape.iter().product::<usize>();
        if predictions.len() != n || targets.len() != n || mask.len() != n {
            return Err(Error::Dimension {
                op: "masked_batch",
                lhs: shape.to_vec(),
                rhs: vec![predictions.len(), targets.len(), mask.len()],
            });
        }
        Ok(Self {
            shape,
            predictions,
            targets,
            mask,
        })
    }
}

/// Mean squared error over mask-true cells only.
pub fn masked_mse(batch: &MaskedBatch) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((&p, &t), &m) in batch.predictions.iter().zip(&batch.targets).zip(&batch.mask) {
        if m {
            sum += (p - t) * (p - t);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Degenerate(
            "masked_mse over a batch with no observed cells".into(),
        ));
    }
    Ok(sum / n as f64)
}

/// Bias-corrected Adam moments keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

impl AdamState {
    /// One update of every trainable parameter from its stored gradient.
    pub fn step<F: Scalar, P: ParameterSet<F> + ?Sized>(
        &mut self,
        params: &mut P,
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        for p in params.parameters() {
            if let Some(g) = p.grad() {
                if let Some(i) = g.iter().position(|x| !x.is_finite()) {
                    return Err(Error::Numeric(format!("non-finite gradient in `{}`[{i}]", p.name)));
                }
            }
        }
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for p in params.parameters_mut() {
            if !p.is_trainable() {
                continue;
            }
            let Some(grad) = p.grad().map(|g| g.iter().map(|x| x.f64()).collect::<Vec<_>>()) else {
                continue;
            };
            let n = grad.len();
            let m = self.m.entry(p.name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(p.name.clone()).or_insert_with(|| vec![0.0; n]);
            let data = p.data_mut()?;
            for i in 0..n {
                let g = grad[i] + weight_decay * data[i].f64();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mh = m[i] / b1t;
                let vh = v[i] / b2t;
                data[i] = F::of(data[i].f64() - lr * mh / (vh.sqrt() + self.eps));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochLoss>,
    pub best_epoch: usize,
    pub steps: u64,
}

pub fn write_loss_csv(path: impl AsRef<Path>, history: &[EpochLoss]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for row in history {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn prepare<F: Scalar>(bundle: &ModelBundle<F>, cohort: &Cohort, ids: &[String]) -> Result<Vec<Vec<VariableInput>>> {
    let upto = bundle.config.upto_month;
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let s = cohort
            .subject(id)
            .ok_or_else(|| Error::Argument(format!("unknown subject `{id}`")))?;
        let inputs: Vec<VariableInput> = bundle
            .prepare_subject(s, upto)?
            .into_iter()
            .flatten()
            .filter(|i| i.observed_targets() > 0)
            .collect();
        if !inputs.is_empty() {
            out.push(inputs);
        }
    }
    Ok(out)
}

fn clip<F: Scalar>(grads: &mut [(String, Vec<F>)], max_norm: f64) {
    let norm = grads
        .iter()
        .flat_map(|(_, g)| g.iter())
        .map(|x| x.f64() * x.f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.iter_mut().for_each(|x| *x = F::of(x.f64() * s));
        }
    }
}

/// Masked MSE in clinical units over `subjects`, or `NaN` with no targets.
pub fn dataset_loss<F: Scalar>(bundle: &ModelBundle<F>, subjects: &[Vec<VariableInput>]) -> Result<f64> {
    let cache = bundle.kv_cache()?;
    let refs: Vec<&VariableInput> = subjects.iter().flatten().collect();
    let (sse, n) = bundle.sse(&cache, &refs)?;
    Ok(if n == 0 { f64::NAN } else { sse / n as f64 })
}

/// Trains the bundle's trainable subset on `train_ids`; the parameters with
/// the lowest validation loss (training loss when `val_ids` has no targets)
/// are restored at the end.
pub fn train<F: Scalar>(
    bundle: &mut ModelBundle<F>,
    cohort: &Cohort,
    train_ids: &[String],
    val_ids: &[String],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_set = prepare(bundle, cohort, train_ids)?;
    if train_set.is_empty() {
        return Err(Error::Degenerate("training split has no observed targets".into()));
    }
    let val_set = prepare(bundle, cohort, val_ids)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let batches_per_epoch = order.len().div_ceil(cfg.batch_size);
    let total_steps = (batches_per_epoch * cfg.epochs) as f64;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<Vec<F>>)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sse = 0.0;
        let mut count = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let refs: Vec<&VariableInput> = chunk.iter().flat_map(|&i| train_set[i].iter()).collect();
            let n: usize = refs.iter().map(|i| i.observed_targets()).sum();
            let ctx = |e: Error| e.context(format!("epoch {epoch}, batch {}", b + 1));
            let (loss, mut grads) = bundle.loss_and_grads(&refs, n as f64).map_err(ctx)?;
            if let Some(c) = cfg.clip_norm {
                clip(&mut grads, c);
            }
            bundle.zero_grads();
            bundle.accumulate_grads(&grads).map_err(ctx)?;
            let lr = if cfg.cosine {
                let frac = adam.t as f64 / total_steps;
                cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            } else {
                cfg.lr
            };
            adam.step(bundle, lr, cfg.weight_decay).map_err(ctx)?;
            sse += loss * n as f64;
            count += n;
        }
        bundle.zero_grads();
        let train_loss = sse / count as f64;
        let val_loss = dataset_loss(bundle, &val_set)?;
        if !val_loss.is_finite() && !val_set.is_empty() {
            return Err(Error::Numeric(format!("non-finite validation loss at epoch {epoch}")));
        }
        log::info!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");
        history.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });
        let score = if val_loss.is_nan() { train_loss } else { val_loss };
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            let snapshot = bundle.parameters().iter().map(|p| p.data().to_vec()).collect();
            best = Some((score, epoch, snapshot));
        }
    }
    let (_, best_epoch, snapshot) = best.expect("at least one epoch");
    for (p, data) in bundle.parameters_mut().into_iter().zip(snapshot) {
        p.assign(&data)?;
    }
    Ok(TrainOutcome {
        history,
        best_epoch,
        steps: adam.t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Parameter, Tensor};
    use proptest::prelude::*;

    #[test]
    fn masked_mse_hand_values() {
        let b = MaskedBatch::new(
            [1, 1, 3],
            vec![1.0, 2.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![true, false, true],
        )
        .unwrap();
        assert_eq!(masked_mse(&b).unwrap(), 2.5);
        let b = MaskedBatch::new([1, 2, 1], vec![1.0, 2.0], vec![1.0, 2.0], vec![true; 2]).unwrap();
        assert_eq!(masked_mse(&b).unwrap(), 0.0);
        let b = MaskedBatch::new([2, 1, 1], vec![1.0, 2.0], vec![0.0, 1.0], vec![true; 2]).unwrap();
        assert_eq!(masked_mse(&b).unwrap(), 1.0);
        let b = MaskedBatch::new([1, 1, 1], vec![1.0], vec![1.0], vec![false]).unwrap();
        assert!(matches!(masked_mse(&b), Err(Error::Degenerate(_))));
    }

    proptest! {
        #[test]
        fn masked_cells_never_change_the_loss(
            cells in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0, any::<bool>()), 1..40),
            junk in prop::sample::select(vec![-1e6, 0.0, 1e6]),
        ) {
            prop_assume!(cells.iter().any(|c| c.2));
            let n = cells.len();
            let p: Vec<f64> = cells.iter().map(|c| c.0).collect();
            let t: Vec<f64> = cells.iter().map(|c| c.1).collect();
            let m: Vec<bool> = cells.iter().map(|c| c.2).collect();
            let a = masked_mse(&MaskedBatch::new([1, 1, n], p.clone(), t.clone(), m.clone()).unwrap()).unwrap();
            let p2 = p.iter().zip(&m).map(|(&x, &k)| if k { x } else { junk }).collect();
            let t2 = t.iter().zip(&m).map(|(&x, &k)| if k { x } else { junk }).collect();
            let b = masked_mse(&MaskedBatch::new([1, 1, n], p2, t2, m).unwrap()).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    fn two_params() -> Vec<Parameter<f64>> {
        vec![
            Parameter::trainable("w", Tensor::zeros(&[1, 1])),
            Parameter::frozen("f", Tensor::from_fn(&[1, 2], |i| i as f64 + 0.5)),
        ]
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut ps = two_params();
        ps.accumulate_grads(&[("w".into(), vec![1.0])]).unwrap();
        let mut adam = AdamState::default();
        adam.step(&mut ps, 0.005, 0.0).unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g|+eps)
        let expect = -0.005 * 1.0 / (1.0 + 1e-8);
        assert!((ps[0].data()[0] - expect).abs() < 1e-15);
        assert_eq!(ps[1].data(), &[0.5, 1.5]);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut ps = two_params();
        ps[0].assign(&[0.3]).unwrap();
        ps.accumulate_grads(&[("w".into(), vec![0.0])]).unwrap();
        let mut adam = AdamState::default();
        for _ in 0..3 {
            adam.step(&mut ps, 0.005, 0.0).unwrap();
        }
        assert_eq!(ps[0].data(), &[0.3]);
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut ps = two_params();
        ps.accumulate_grads(&[("w".into(), vec![f64::NAN])]).unwrap();
        let err = AdamState::default().step(&mut ps, 0.005, 0.0).unwrap_err();
        assert!(err.to_string().contains("`w`"), "{err}");
        assert_eq!(ps[0].data(), &[0.0]);
    }

    #[test]
    fn config_is_validated() {
        assert!(TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn loss_csv_has_expected_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        write_loss_csv(
            &path,
            &[EpochLoss {
                epoch: 1,
                train_loss: 2.0,
                val_loss: 1.5,
            }],
        )
        .unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text, "epoch,train_loss,val_loss\n1,2.0,1.5\n");
    }
}
