//! Multi-head scaled dot-product attention and the transformer blocks
//! assembled from it.

use crate::rng::Rng;

use super::graph::{Graph, NodeId};
use super::store::{Init, ParameterStore};
use super::tensor::{NnError, TensorValue};

#[derive(Clone, Copy, Debug)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub n_heads: usize,
}

impl AttentionConfig {
    pub fn new(d_model: usize, n_heads: usize) -> Result<Self, NnError> {
        if n_heads == 0 || d_model % n_heads != 0 {
            return Err(NnError::ShapeMismatch {
                op: "attention_config",
                detail: format!("d_model {d_model} not divisible by n_heads {n_heads}"),
            });
        }
        Ok(Self { d_model, n_heads })
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

fn uniform_for(d_in: usize) -> Init {
    Init::Uniform { scale: (1.0 / d_in as f32).sqrt() }
}

/// Names of one affine map's weight and bias.
#[derive(Clone, Debug)]
pub struct LinearParams {
    pub w: String,
    pub b: String,
}

impl LinearParams {
    pub fn define(
        store: &mut ParameterStore,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut Rng,
    ) -> Result<Self, NnError> {
        let w = format!("{prefix}.w");
        let b = format!("{prefix}.b");
        store.define(&w, vec![d_in, d_out], uniform_for(d_in), rng)?;
        store.define(&b, vec![1, d_out], uniform_for(d_in), rng)?;
        Ok(Self { w, b })
    }

    pub fn apply(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        x: NodeId,
    ) -> Result<NodeId, NnError> {
        let w = g.param(store, &self.w)?;
        let b = g.param(store, &self.b)?;
        g.linear(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNormParams {
    pub gamma: String,
    pub beta: String,
}

impl LayerNormParams {
    pub fn define(
        store: &mut ParameterStore,
        prefix: &str,
        width: usize,
        rng: &mut Rng,
    ) -> Result<Self, NnError> {
        let gamma = format!("{prefix}.gamma");
        let beta = format!("{prefix}.beta");
        store.define(&gamma, vec![1, width], Init::Constant(1.0), rng)?;
        store.define(&beta, vec![1, width], Init::Constant(0.0), rng)?;
        Ok(Self { gamma, beta })
    }

    pub fn apply(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        x: NodeId,
    ) -> Result<NodeId, NnError> {
        let gamma = g.param(store, &self.gamma)?;
        let beta = g.param(store, &self.beta)?;
        g.layer_norm(x, gamma, beta)
    }
}

/// Query/key/value/output projections of one attention block.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub wq: LinearParams,
    pub wk: LinearParams,
    pub wv: LinearParams,
    pub wo: LinearParams,
}

impl AttentionParams {
    pub fn define(
        store: &mut ParameterStore,
        prefix: &str,
        cfg: &AttentionConfig,
        rng: &mut Rng,
    ) -> Result<Self, NnError> {
        let d = cfg.d_model;
        Ok(Self {
            wq: LinearParams::define(store, &format!("{prefix}.q"), d, d, rng)?,
            wk: LinearParams::define(store, &format!("{prefix}.k"), d, d, rng)?,
            wv: LinearParams::define(store, &format!("{prefix}.v"), d, d, rng)?,
            wo: LinearParams::define(store, &format!("{prefix}.o"), d, d, rng)?,
        })
    }
}

/// Scaled dot-product attention over `kv` tokens for each `q` token.
/// `kv_mask[j] = false` hides token j; when every token is hidden the
/// result is defined as all zeros (empty context contributes nothing).
pub fn multi_head_attention(
    g: &mut Graph,
    store: &ParameterStore,
    q: NodeId,
    kv: NodeId,
    kv_mask: Option<&[bool]>,
    cfg: &AttentionConfig,
    params: &AttentionParams,
) -> Result<NodeId, NnError> {
    let (q_rows, q_width) = g.value(q).dims2();
    let (kv_rows, kv_width) = g.value(kv).dims2();
    if q_width != cfg.d_model || kv_width != cfg.d_model {
        return Err(NnError::ShapeMismatch {
            op: "multi_head_attention",
            detail: format!("token width {q_width}/{kv_width} vs d_model {}", cfg.d_model),
        });
    }
    if let Some(mask) = kv_mask {
        if mask.len() != kv_rows {
            return Err(NnError::ShapeMismatch {
                op: "multi_head_attention",
                detail: format!("mask len {} vs {} kv tokens", mask.len(), kv_rows),
            });
        }
        if mask.iter().all(|&m| !m) {
            return Ok(g.constant(TensorValue::zeros(vec![q_rows, cfg.d_model])));
        }
    }

    let proj_q = params.wq.apply(g, store, q)?;
    let proj_k = params.wk.apply(g, store, kv)?;
    let proj_v = params.wv.apply(g, store, kv)?;

    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f32).sqrt();
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let qh = g.slice_cols(proj_q, h * dh, dh)?;
        let kh = g.slice_cols(proj_k, h * dh, dh)?;
        let vh = g.slice_cols(proj_v, h * dh, dh)?;
        let scores = g.matmul_nt(qh, kh)?;
        let scaled = g.mul_scalar(scores, scale);
        let attn = g.softmax_rows(scaled, kv_mask.map(|m| m.to_vec()))?;
        heads.push(g.matmul(attn, vh)?);
    }
    let merged = g.concat_cols(&heads)?;
    params.wo.apply(g, store, merged)
}

/// Two-layer ReLU feed-forward block.
#[derive(Clone, Debug)]
pub struct FeedForwardParams {
    pub lin1: LinearParams,
    pub lin2: LinearParams,
}

impl FeedForwardParams {
    pub fn define(
        store: &mut ParameterStore,
        prefix: &str,
        d_model: usize,
        d_hidden: usize,
        rng: &mut Rng,
    ) -> Result<Self, NnError> {
        Ok(Self {
            lin1: LinearParams::define(store, &format!("{prefix}.ff1"), d_model, d_hidden, rng)?,
            lin2: LinearParams::define(store, &format!("{prefix}.ff2"), d_hidden, d_model, rng)?,
        })
    }

    pub fn apply(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        x: NodeId,
    ) -> Result<NodeId, NnError> {
        let h = self.lin1.apply(g, store, x)?;
        let h = g.relu(h);
        self.lin2.apply(g, store, h)
    }
}

/// Pre-norm self-attention encoder layer.
#[derive(Clone, Debug)]
pub struct EncoderLayerParams {
    pub ln1: LayerNormParams,
    pub attn: AttentionParams,
    pub ln2: LayerNormParams,
    pub ffn: FeedForwardParams,
}

impl EncoderLayerParams {
    pub fn define(
        store: &mut ParameterStore,
        prefix: &str,
        cfg: &AttentionConfig,
        d_hidden: usize,
        rng: &mut Rng,
    ) -> Result<Self, NnError> {
        Ok(Self {
            ln1: LayerNormParams::define(store, &format!("{prefix}.ln1"), cfg.d_model, rng)?,
            attn: AttentionParams::define(store, &format!("{prefix}.attn"), cfg, rng)?,
            ln2: LayerNormParams::define(store, &format!("{prefix}.ln2"), cfg.d_model, rng)?,
            ffn: FeedForwardParams::define(store, &format!("{prefix}.ffn"), cfg.d_model, d_hidden, rng)?,
        })
    }

    pub fn apply(
        &self,
        g: &mut Graph,
        store: &ParameterStore,
        x: NodeId,
        token_mask: Option<&[bool]>,
        cfg: &AttentionConfig,
    ) -> Result<NodeId, NnError> {
        let n1 = self.ln1.apply(g, store, x)?;
        let a = multi_head_attention(g, store, n1, n1, token_mask, cfg, &self.attn)?;
        let x = g.add(x, a)?;
        let n2 = self.ln2.apply(g, store, x)?;
        let f = self.ffn.apply(g, store, n2)?;
        g.add(x, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn t(rows: &[Vec<f32>]) -> TensorValue {
        TensorValue::from_rows(rows)
    }

    fn identity_attention_params(store: &mut ParameterStore, d: usize) -> AttentionParams {
        let mut rng = seeded(0);
        let params =
            AttentionParams::define(store, "attn", &AttentionConfig::new(d, 1).unwrap(), &mut rng)
                .unwrap();
        for name in ["attn.q.w", "attn.k.w", "attn.v.w", "attn.o.w"] {
            let v = store.value_mut(name).unwrap();
            let data = v.data_mut();
            data.iter_mut().for_each(|x| *x = 0.0);
            for i in 0..d {
                data[i * d + i] = 1.0;
            }
        }
        for name in ["attn.q.b", "attn.k.b", "attn.v.b", "attn.o.b"] {
            store.value_mut(name).unwrap().data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        params
    }

    #[test]
    fn single_kv_token_dominates_any_query() {
        let mut rng = seeded(4);
        let cfg = AttentionConfig::new(6, 2).unwrap();
        let mut store = ParameterStore::new();
        let params = AttentionParams::define(&mut store, "attn", &cfg, &mut rng).unwrap();

        let kv_row = vec![0.3, -0.8, 1.2, 0.05, -0.4, 0.9];
        let mut g = Graph::new();
        let q = g.constant(t(&[vec![5.0, -2.0, 0.1, 3.0, -1.0, 0.7], vec![0.0; 6]]));
        let kv = g.constant(t(&[kv_row.clone()]));
        let out = multi_head_attention(&mut g, &store, q, kv, None, &cfg, &params).unwrap();

        // softmax over one key is 1, so output = Wo(Wv kv) + biases for
        // every query row
        let kvn = g.constant(t(&[kv_row]));
        let v = params.wv.apply(&mut g, &store, kvn).unwrap();
        let want = params.wo.apply(&mut g, &store, v).unwrap();
        for row in 0..2 {
            for j in 0..6 {
                let got = g.value(out).data()[row * 6 + j];
                assert!((got - g.value(want).data()[j]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn fully_masked_attention_outputs_zero() {
        let mut rng = seeded(4);
        let cfg = AttentionConfig::new(4, 2).unwrap();
        let mut store = ParameterStore::new();
        let params = AttentionParams::define(&mut store, "attn", &cfg, &mut rng).unwrap();
        let mut g = Graph::new();
        let q = g.constant(t(&[vec![1.0, 2.0, 3.0, 4.0]]));
        let kv = g.constant(t(&[vec![1.0; 4], vec![2.0; 4]]));
        let out =
            multi_head_attention(&mut g, &store, q, kv, Some(&[false, false]), &cfg, &params)
                .unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_head_hand_case_matches_matrix_oracle() {
        // 1 head, 2 queries, 3 keys, d=2, identity projections: the oracle
        // is direct matrix arithmetic in f64
        let mut store = ParameterStore::new();
        let params = identity_attention_params(&mut store, 2);
        let cfg = AttentionConfig::new(2, 1).unwrap();

        let q_rows = [[0.5f64, -0.25], [1.5, 0.75]];
        let kv_rows = [[0.2f64, 0.9], [-0.7, 0.3], [1.1, -0.6]];

        let mut g = Graph::new();
        let q = g.constant(t(&[vec![0.5, -0.25], vec![1.5, 0.75]]));
        let kv = g.constant(t(&[
            vec![0.2, 0.9],
            vec![-0.7, 0.3],
            vec![1.1, -0.6],
        ]));
        let out = multi_head_attention(&mut g, &store, q, kv, None, &cfg, &params).unwrap();

        let scale = 1.0 / 2.0f64.sqrt();
        for (i, qr) in q_rows.iter().enumerate() {
            let logits: Vec<f64> = kv_rows
                .iter()
                .map(|kr| (qr[0] * kr[0] + qr[1] * kr[1]) * scale)
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let z: f64 = exps.iter().sum();
            let mut want = [0.0f64; 2];
            for (w, kr) in exps.iter().zip(&kv_rows) {
                want[0] += w / z * kr[0];
                want[1] += w / z * kr[1];
            }
            for j in 0..2 {
                let got = g.value(out).data()[i * 2 + j] as f64;
                assert!(
                    (got - want[j]).abs() < 1e-5,
                    "query {i} col {j}: got {got}, want {}",
                    want[j]
                );
            }
        }
    }

    #[test]
    fn kv_permutation_leaves_outputs_unchanged() {
        // weighted sums over kv tokens do not depend on kv order
        let mut store = ParameterStore::new();
        let params = identity_attention_params(&mut store, 3);
        let cfg = AttentionConfig::new(3, 1).unwrap();

        let rows = vec![
            vec![0.1, 0.7, -0.2],
            vec![0.9, -0.5, 0.3],
            vec![-0.6, 0.2, 0.8],
            vec![0.4, 0.4, -0.9],
        ];
        let permuted = vec![rows[2].clone(), rows[0].clone(), rows[3].clone(), rows[1].clone()];

        let mut g = Graph::new();
        let q = g.constant(t(&[vec![0.25, -0.75, 0.5]]));
        let kv_a = g.constant(t(&rows));
        let kv_b = g.constant(t(&permuted));
        let out_a = multi_head_attention(&mut g, &store, q, kv_a, None, &cfg, &params).unwrap();
        let out_b = multi_head_attention(&mut g, &store, q, kv_b, None, &cfg, &params).unwrap();
        for (a, b) in g.value(out_a).data().iter().zip(g.value(out_b).data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn attention_gradients_match_finite_differences() {
        let mut rng = seeded(12);
        let cfg = AttentionConfig::new(4, 2).unwrap();
        let mut store = ParameterStore::new();
        let params = AttentionParams::define(&mut store, "attn", &cfg, &mut rng).unwrap();

        let build = move |g: &mut Graph, store: &ParameterStore| {
            let q = g.constant(t(&[vec![0.4, -0.2, 0.7, 0.1], vec![-0.3, 0.6, -0.1, 0.9]]));
            let kv = g.constant(t(&[
                vec![0.2, 0.5, -0.6, 0.3],
                vec![-0.8, 0.1, 0.4, -0.2],
                vec![0.6, -0.4, 0.2, 0.7],
            ]));
            let out = multi_head_attention(
                g,
                store,
                q,
                kv,
                Some(&[true, true, false]),
                &cfg,
                &params,
            )
            .unwrap();
            let mix = g.constant(t(&[
                vec![0.7, -0.3, 0.45, 0.2],
                vec![-0.15, 0.9, 0.05, -0.5],
            ]));
            let weighted = g.mul_elem(out, mix).unwrap();
            g.sum_all(weighted)
        };

        let names: Vec<String> = store.iter().map(|s| s.name.clone()).collect();
        let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        super::super::gradcheck::check_against_finite_differences(
            &mut store,
            &build,
            &name_refs,
            64,
            1e-3,
            1e-3,
            &mut seeded(5),
        )
        .unwrap();
    }
}
