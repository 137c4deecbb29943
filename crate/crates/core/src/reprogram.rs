//! Text-prototype reprogramming: patch embeddings attend over prototypes
//! drawn from the backbone's token embeddings.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::init;
use crate::tensor::{Parameter, Scalar, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrototypeMode {
    /// `E′ = P·E` with a trainable `V′×V` map `P`.
    #[default]
    Linear,
    /// `E′` is a fixed row subset of `E`.
    Subset,
}

#[derive(Clone, Debug)]
pub enum PrototypeBank<F: Scalar> {
    Linear { proto_map: Parameter<F> },
    Subset { indices: Vec<usize> },
}

impl<F: Scalar> PrototypeBank<F> {
    pub fn linear(n_protos: usize, vocab: usize, rng: &mut impl Rng) -> Self {
        PrototypeBank::Linear {
            proto_map: Parameter::trainable("reprogram.proto_map", init::normal(&[n_protos, vocab], 1.0, rng)),
        }
    }

    /// `n_protos` distinct token rows drawn at random.
    pub fn random_subset(n_protos: usize, vocab: usize, rng: &mut impl Rng) -> Result<Self> {
        if n_protos > vocab {
            return Err(Error::Argument(format!(
                "{n_protos} prototypes exceed vocabulary size {vocab}"
            )));
        }
        let mut indices = rand::seq::index::sample(rng, vocab, n_protos).into_vec();
        indices.sort_unstable();
        Self::subset(indices, vocab)
    }

    pub fn subset(indices: Vec<usize>, vocab: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Argument("prototype subset is empty".into()));
        }
        let mut seen = HashSet::new();
        for &i in &indices {
            if i >= vocab {
                return Err(Error::Bounds {
                    what: "prototype index",
                    index: i,
                    len: vocab,
                });
            }
            if !seen.insert(i) {
                return Err(Error::Argument(format!("duplicate prototype index {i}")));
            }
        }
        Ok(PrototypeBank::Subset { indices })
    }

    pub fn mode(&self) -> PrototypeMode {
        match self {
            PrototypeBank::Linear { .. } => PrototypeMode::Linear,
            PrototypeBank::Subset { .. } => PrototypeMode::Subset,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            PrototypeBank::Linear { proto_map } => proto_map.tensor().rows(),
            PrototypeBank::Subset { indices } => indices.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `E′` (`V′×dh`) on the graph; `e` is the frozen embedding matrix.
    pub fn build<'a>(&'a self, g: &mut Graph<'a, F>, e: &'a Tensor<F>) -> Result<Var> {
        match self {
            PrototypeBank::Linear { proto_map } => {
                if proto_map.tensor().cols() != e.rows() {
                    return Err(Error::Dimension {
                        op: "build_prototypes",
                        lhs: proto_map.shape().to_vec(),
                        rhs: e.shape().to_vec(),
                    });
                }
                let p = g.param(proto_map);
                let ev = g.constant_ref(e);
                g.matmul(p, ev)
            }
            PrototypeBank::Subset { indices } => {
                let (v, d) = (e.rows(), e.cols());
                let mut data = Vec::with_capacity(indices.len() * d);
                for &i in indices {
                    if i >= v {
                        return Err(Error::Bounds {
                            what: "prototype index",
                            index: i,
                            len: v,
                        });
                    }
                    data.extend_from_slice(e.row(i));
                }
                Ok(g.constant(Tensor::matrix(indices.len(), d, data)?))
            }
        }
    }

    /// Inference-only `E′`.
    pub fn prototypes(&self, e: &Tensor<F>) -> Result<Tensor<F>> {
        let mut g = Graph::inference();
        let v = self.build(&mut g, e)?;
        Ok(g.tensor(v))
    }

    pub fn parameters(&self) -> Vec<&Parameter<F>> {
        match self {
            PrototypeBank::Linear { proto_map } => vec![proto_map],
            PrototypeBank::Subset { .. } => Vec::new(),
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<F>> {
        match self {
            PrototypeBank::Linear { proto_map } => vec![proto_map],
            PrototypeBank::Subset { .. } => Vec::new(),
        }
    }
}

/// Multi-head cross-attention from patch embeddings (queries) to prototypes
/// (keys and values).
#[derive(Clone, Debug)]
pub struct CrossAttention<F: Scalar> {
    pub w_q: Vec<Parameter<F>>,
    pub w_k: Vec<Parameter<F>>,
    pub w_v: Vec<Parameter<F>>,
    pub w_o: Parameter<F>,
    pub b_o: Parameter<F>,
}

/// Per-head keys (transposed) and values, computed once per prototype set.
#[derive(Clone, Debug)]
pub struct KeyValues {
    pub keys_t: Vec<Var>,
    pub values: Vec<Var>,
}

impl<F: Scalar> CrossAttention<F> {
    /// Head width is `d_model / heads`.
    pub fn new(d_embed: usize, d_model: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::Argument(format!(
                "d_model {d_model} is not divisible by {heads} heads"
            )));
        }
        let dk = d_model / heads;
        let mut w_q = Vec::with_capacity(heads);
        let mut w_k = Vec::with_capacity(heads);
        let mut w_v = Vec::with_capacity(heads);
        for k in 0..heads {
            w_q.push(Parameter::trainable(
                format!("reprogram.head{k}.w_q"),
                init::xavier(d_embed, dk, rng),
            ));
            w_k.push(Parameter::trainable(
                format!("reprogram.head{k}.w_k"),
                init::xavier(d_model, dk, rng),
            ));
            w_v.push(Parameter::trainable(
                format!("reprogram.head{k}.w_v"),
                init::xavier(d_model, dk, rng),
            ));
        }
        Ok(Self {
            w_q,
            w_k,
            w_v,
            w_o: Parameter::trainable("reprogram.w_o", init::xavier(heads * dk, d_model, rng)),
            b_o: Parameter::trainable("reprogram.b_o", Tensor::zeros(&[1, d_model])),
        })
    }

    pub fn heads(&self) -> usize {
        self.w_q.len()
    }

    pub fn head_dim(&self) -> usize {
        self.w_q[0].tensor().cols()
    }

    pub fn key_values<'a>(&'a self, g: &mut Graph<'a, F>, protos: Var) -> Result<KeyValues> {
        let mut keys_t = Vec::with_capacity(self.heads());
        let mut values = Vec::with_capacity(self.heads());
        for (wk, wv) in self.w_k.iter().zip(&self.w_v) {
            let (wk, wv) = (g.param(wk), g.param(wv));
            let k = g.matmul(protos, wk)?;
            keys_t.push(g.transpose(k));
            values.push(g.matmul(protos, wv)?);
        }
        Ok(KeyValues { keys_t, values })
    }

    /// `z = concat_k(softmax(Q_k K_kᵀ/√dk) V_k)·W_O + b_O`; also returns each head's
    /// attention matrix.
    pub fn attend<'a>(&'a self, g: &mut Graph<'a, F>, x_hat: Var, kv: &KeyValues) -> Result<(Var, Vec<Var>)> {
        let scale = F::of(1.0 / (self.head_dim() as f64).sqrt());
        let mut heads = Vec::with_capacity(self.heads());
        let mut attn = Vec::with_capacity(self.heads());
        for (k, wq) in self.w_q.iter().enumerate() {
            let wq = g.param(wq);
            let q = g.matmul(x_hat, wq)?;
            let s = g.matmul(q, kv.keys_t[k])?;
            let s = g.scale(s, scale);
            let a = g.softmax_rows(s)?;
            heads.push(g.matmul(a, kv.values[k])?);
            attn.push(a);
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)?
        };
        let (wo, bo) = (g.param(&self.w_o), g.param(&self.b_o));
        let z = g.matmul(cat, wo)?;
        Ok((g.add_row(z, bo)?, attn))
    }

    /// Inference-only cross attention: `(z, per-head attention)`.
    pub fn cross_attend(&self, x_hat: &Tensor<F>, protos: &Tensor<F>) -> Result<(Tensor<F>, Vec<Tensor<F>>)> {
        let mut g = Graph::inference();
        let x = g.constant(x_hat.clone());
        let p = g.constant(protos.clone());
        let kv = self.key_values(&mut g, p)?;
        let (z, attn) = self.attend(&mut g, x, &kv)?;
        Ok((g.tensor(z), attn.into_iter().map(|a| g.tensor(a)).collect()))
    }

    pub fn parameters(&self) -> Vec<&Parameter<F>> {
        let mut out = Vec::new();
        for k in 0..self.heads() {
            out.extend([&self.w_q[k], &self.w_k[k], &self.w_v[k]]);
        }
        out.extend([&self.w_o, &self.b_o]);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut out: Vec<&mut Parameter<F>> = Vec::new();
        for ((q, k), v) in self.w_q.iter_mut().zip(self.w_k.iter_mut()).zip(self.w_v.iter_mut()) {
            out.extend([q, k, v]);
        }
        out.extend([&mut self.w_o, &mut self.b_o]);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_check, GRADCHECK_EPS};
    use crate::tensor::ParameterSet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Scalar loops, no graph.
    fn brute_force(attn: &CrossAttention<f64>, x: &Tensor<f64>, e: &Tensor<f64>) -> Vec<Vec<f64>> {
        let (m, de) = (x.rows(), x.cols());
        let (vp, dh) = (e.rows(), e.cols());
        let heads = attn.heads();
        let dk = attn.head_dim();
        let mut cat = vec![vec![0.0; heads * dk]; m];
        for h in 0..heads {
            let (wq, wk, wv) = (attn.w_q[h].tensor(), attn.w_k[h].tensor(), attn.w_v[h].tensor());
            for i in 0..m {
                let q: Vec<f64> = (0..dk)
                    .map(|c| (0..de).map(|r| x.get(i, r) * wq.get(r, c)).sum())
                    .collect();
                let mut logits = vec![0.0; vp];
                for (j, l) in logits.iter_mut().enumerate() {
                    let kj: Vec<f64> = (0..dk)
                        .map(|c| (0..dh).map(|r| e.get(j, r) * wk.get(r, c)).sum())
                        .collect();
                    *l = q.iter().zip(&kj).map(|(a, b)| a * b).sum::<f64>() / (dk as f64).sqrt();
                }
                let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
                let ex: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
                let s: f64 = ex.iter().sum();
                for c in 0..dk {
                    cat[i][h * dk + c] = (0..vp)
                        .map(|j| ex[j] / s * (0..dh).map(|r| e.get(j, r) * wv.get(r, c)).sum::<f64>())
                        .sum();
                }
            }
        }
        let (wo, bo) = (attn.w_o.tensor(), attn.b_o.tensor());
        (0..m)
            .map(|i| {
                (0..dh)
                    .map(|c| bo.data()[c] + (0..heads * dk).map(|r| cat[i][r] * wo.get(r, c)).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn matches_brute_force() {
        let mut r = rng(7);
        let attn = CrossAttention::<f64>::new(3, 4, 2, &mut r).unwrap();
        let x: Tensor<f64> = init::normal(&[3, 3], 1.0, &mut r);
        let e: Tensor<f64> = init::normal(&[4, 4], 1.0, &mut r);
        let (z, a) = attn.cross_attend(&x, &e).unwrap();
        let want = brute_force(&attn, &x, &e);
        for i in 0..3 {
            for c in 0..4 {
                assert!((z.get(i, c) - want[i][c]).abs() < 1e-12);
            }
        }
        for head in a {
            for i in 0..3 {
                assert!((head.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_prototype_gives_identical_rows() {
        let mut r = rng(1);
        let attn = CrossAttention::<f64>::new(3, 4, 2, &mut r).unwrap();
        let x: Tensor<f64> = init::normal(&[5, 3], 1.0, &mut r);
        let e: Tensor<f64> = init::normal(&[1, 4], 1.0, &mut r);
        let (z, _) = attn.cross_attend(&x, &e).unwrap();
        for i in 1..5 {
            assert_eq!(z.row(i), z.row(0));
        }
    }

    #[test]
    fn zero_queries_attend_uniformly() {
        let mut r = rng(2);
        let mut attn = CrossAttention::<f64>::new(3, 4, 2, &mut r).unwrap();
        for q in &mut attn.w_q {
            q.assign(&[0.0; 6]).unwrap();
        }
        let x: Tensor<f64> = init::normal(&[3, 3], 1.0, &mut r);
        let e: Tensor<f64> = init::normal(&[5, 4], 1.0, &mut r);
        let (z, a) = attn.cross_attend(&x, &e).unwrap();
        assert!(a[0].data().iter().all(|&p| (p - 0.2).abs() < 1e-15));
        for i in 1..3 {
            assert_eq!(z.row(i), z.row(0));
        }
    }

    #[test]
    fn patch_permutation_is_equivariant() {
        let mut r = rng(3);
        let attn = CrossAttention::<f64>::new(3, 4, 2, &mut r).unwrap();
        let x: Tensor<f64> = init::normal(&[3, 3], 1.0, &mut r);
        let e: Tensor<f64> = init::normal(&[4, 4], 1.0, &mut r);
        let perm = [2, 0, 1];
        let xp = Tensor::matrix(3, 3, perm.iter().flat_map(|&i| x.row(i).to_vec()).collect()).unwrap();
        let (z, _) = attn.cross_attend(&x, &e).unwrap();
        let (zp, _) = attn.cross_attend(&xp, &e).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            for c in 0..4 {
                assert!((zp.get(k, c) - z.get(i, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn subset_gather_and_one_hot_linear_agree() {
        let mut r = rng(4);
        let e: Tensor<f64> = init::normal(&[6, 4], 1.0, &mut r);
        let sub = PrototypeBank::<f64>::subset(vec![0, 5], 6).unwrap();
        let g = sub.prototypes(&e).unwrap();
        assert_eq!(g.row(0), e.row(0));
        assert_eq!(g.row(1), e.row(5));
        let mut onehot = vec![0.0; 12];
        onehot[0] = 1.0;
        onehot[6 + 5] = 1.0;
        let lin = PrototypeBank::Linear {
            proto_map: Parameter::trainable("p", Tensor::matrix(2, 6, onehot).unwrap()),
        };
        assert_eq!(lin.prototypes(&e).unwrap(), g);
        assert!(matches!(
            PrototypeBank::<f64>::subset(vec![6], 6),
            Err(Error::Bounds { .. })
        ));
        assert!(PrototypeBank::<f64>::subset(vec![1, 1], 6).is_err());
    }

    #[test]
    fn prototype_permutation_leaves_output_unchanged() {
        let mut r = rng(5);
        let attn = CrossAttention::<f64>::new(3, 4, 2, &mut r).unwrap();
        let e: Tensor<f64> = init::normal(&[6, 4], 1.0, &mut r);
        let x: Tensor<f64> = init::normal(&[3, 3], 1.0, &mut r);
        let p: Tensor<f64> = init::normal(&[4, 6], 1.0, &mut r);
        // permute vocabulary rows of E and the matching columns of P
        let perm = [3, 1, 5, 0, 2, 4];
        let e2 = Tensor::matrix(6, 4, perm.iter().flat_map(|&i| e.row(i).to_vec()).collect()).unwrap();
        let p2 = Tensor::from_fn(&[4, 6], |k| p.get(k / 6, perm[k % 6]));
        let bank = |t: Tensor<f64>| PrototypeBank::Linear {
            proto_map: Parameter::trainable("p", t),
        };
        let (z1, _) = attn.cross_attend(&x, &bank(p).prototypes(&e).unwrap()).unwrap();
        let (z2, _) = attn.cross_attend(&x, &bank(p2).prototypes(&e2).unwrap()).unwrap();
        for (a, b) in z1.data().iter().zip(z2.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    struct Bundle {
        bank: PrototypeBank<f64>,
        attn: CrossAttention<f64>,
        params: Vec<Parameter<f64>>,
    }

    impl Bundle {
        fn sync(&mut self) {
            let mut it = self.params.iter();
            for p in self.bank.parameters_mut().into_iter().chain(self.attn.parameters_mut()) {
                p.assign(it.next().unwrap().data()).unwrap();
            }
        }
    }

    impl ParameterSet<f64> for Bundle {
        fn parameters(&self) -> Vec<&Parameter<f64>> {
            self.params.iter().collect()
        }
        fn parameters_mut(&mut self) -> Vec<&mut Parameter<f64>> {
            self.params.iter_mut().collect()
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(6);
        let e: Tensor<f64> = init::normal(&[5, 4], 1.0, &mut r);
        let x: Tensor<f64> = init::normal(&[3, 3], 1.0, &mut r);
        let bank = PrototypeBank::linear(4, 5, &mut r);
        let attn = CrossAttention::new(3, 4, 2, &mut r).unwrap();
        let params = bank
            .parameters()
            .into_iter()
            .chain(attn.parameters())
            .cloned()
            .collect();
        let mut b = Bundle { bank, attn, params };
        let loss = |b: &Bundle, grad: bool| -> (f64, Vec<(String, Vec<f64>)>) {
            let mut g = Graph::new();
            let ep = b.bank.build(&mut g, &e).unwrap();
            let kv = b.attn.key_values(&mut g, ep).unwrap();
            let xv = g.constant(x.clone());
            let (z, _) = b.attn.attend(&mut g, xv, &kv).unwrap();
            let sq = g.mul(z, z).unwrap();
            let l = g.sum(sq);
            if grad {
                g.backward(l).unwrap();
            }
            (g.value(l)[0], g.param_grads())
        };
        let (_, grads) = loss(&b, true);
        b.accumulate_grads(&grads).unwrap();
        let report = finite_diff_check(&mut b, GRADCHECK_EPS, |b: &Bundle| {
            let mut c = Bundle {
                bank: b.bank.clone(),
                attn: b.attn.clone(),
                params: b.params.clone(),
            };
            c.sync();
            Ok(loss(&c, false).0)
        })
        .unwrap();
        assert_eq!(report.checked, 4 * 5 + 2 * (3 * 2 + 4 * 2 * 2) + 4 * 4 + 4);
        assert!(report.max_rel_err < 1e-5, "{report:?}");
    }
}
