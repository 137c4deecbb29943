//! Masked reversible instance normalisation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Statistics captured by [`normalize`] and consumed by [`denormalize`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevinState {
    pub mean: f64,
    pub var: f64,
    pub eps: f64,
}

impl RevinState {
    /// Pass-through state used when normalisation is disabled.
    pub fn identity() -> Self {
        Self {
            mean: 0.0,
            var: 1.0,
            eps: 0.0,
        }
    }

    pub fn scale(&self) -> f64 {
        (self.var + self.eps).sqrt()
    }

    pub fn forward(&self, x: f64) -> f64 {
        (x - self.mean) / self.scale()
    }

    pub fn inverse(&self, y: f64) -> f64 {
        y * self.scale() + self.mean
    }
}

/// Normalises observed entries with their own mean and population variance.
///
/// Unobserved positions come back as `0.0`; their input values are never read.
pub fn normalize(series: &[f64], mask: &[bool]) -> Result<(Vec<f64>, RevinState)> {
    normalize_with_eps(series, mask, DEFAULT_EPS)
}

pub fn normalize_with_eps(series: &[f64], mask: &[bool], eps: f64) -> Result<(Vec<f64>, RevinState)> {
    if series.len() != mask.len() {
        return Err(Error::Dimension {
            op: "normalize",
            lhs: vec![1, series.len()],
            rhs: vec![1, mask.len()],
        });
    }
    if !(eps > 0.0) {
        return Err(Error::Argument(format!("eps must be positive, got {eps}")));
    }
    let observed = || series.iter().zip(mask).filter(|(_, &m)| m).map(|(&x, _)| x);
    let n = observed().count();
    if n == 0 {
        return Err(Error::Degenerate("cannot normalise an all-masked series".into()));
    }
    if observed().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("observed value is not finite".into()));
    }
    let mean = observed().sum::<f64>() / n as f64;
    let var = observed().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    let state = RevinState { mean, var, eps };
    let out = series
        .iter()
        .zip(mask)
        .map(|(&x, &m)| if m { state.forward(x) } else { 0.0 })
        .collect();
    Ok((out, state))
}

pub fn denormalize(values: &[f64], state: &RevinState) -> Vec<f64> {
    values.iter().map(|&y| state.inverse(y)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn three_point_example() {
        let (y, s) = normalize(&[1.0, 2.0, 3.0], &[true; 3]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.var - 2.0 / 3.0).abs() < 1e-15);
        close(&y, &[-1.2247, 0.0, 1.2247], 1e-4);
        close(&denormalize(&[1.2247], &s), &[3.0], 1e-4);
    }

    #[test]
    fn constant_series_is_zero() {
        let (y, s) = normalize(&[5.0; 3], &[true; 3]).unwrap();
        assert_eq!(y, vec![0.0; 3]);
        close(
            &denormalize(&[0.0, 0.0], &RevinState { var: 0.0, ..s }),
            &[5.0, 5.0],
            1e-12,
        );
    }

    #[test]
    fn masked_entry_ignored_and_filled() {
        let (y, s) = normalize(&[1.0, f64::NAN, 3.0], &[true, false, true]).unwrap();
        assert_eq!((s.mean, s.var), (2.0, 1.0));
        assert_eq!(y[1], 0.0);
        close(&y, &[-1.0, 0.0, 1.0], 1e-5);
    }

    #[test]
    fn all_masked_is_degenerate() {
        assert!(matches!(
            normalize(&[1.0, 2.0], &[false, false]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn identity_state_passes_through() {
        let s = RevinState::identity();
        assert_eq!(s.forward(3.5), 3.5);
        assert_eq!(s.inverse(-2.0), -2.0);
    }

    fn masked_series() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (1usize..12).prop_flat_map(|t| {
            (
                prop::collection::vec(-1e3f64..1e3, t),
                prop::collection::vec(any::<bool>(), t),
                0..t,
            )
                .prop_map(|(x, mut m, k)| {
                    m[k] = true;
                    (x, m)
                })
        })
    }

    proptest! {
        #[test]
        fn round_trip((x, m) in masked_series()) {
            let (y, s) = normalize(&x, &m).unwrap();
            let back = denormalize(&y, &s);
            for i in 0..x.len() {
                if m[i] {
                    prop_assert!((back[i] - x[i]).abs() < 1e-5);
                }
            }
        }

        #[test]
        fn shift_scale_equivariant((x, m) in masked_series(), a in 0.5f64..20.0, b in -50f64..50.0) {
            let (y1, s) = normalize(&x, &m).unwrap();
            prop_assume!(s.var > 1.0);
            let z: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let (y2, _) = normalize(&z, &m).unwrap();
            for i in 0..x.len() {
                prop_assert!((y1[i] - y2[i]).abs() < 1e-4);
            }
        }

        #[test]
        fn unit_moments((x, m) in masked_series()) {
            let (y, s) = normalize(&x, &m).unwrap();
            prop_assume!(s.var > 1.0);
            let obs: Vec<f64> = y.iter().zip(&m).filter(|(_, &k)| k).map(|(&v, _)| v).collect();
            let n = obs.len() as f64;
            let mean = obs.iter().sum::<f64>() / n;
            let var = obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-6);
            prop_assert!((var - 1.0).abs() < 1e-3);
        }
    }
}
