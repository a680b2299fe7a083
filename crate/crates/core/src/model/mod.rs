//! A small pre-norm causal decoder with hand-written reverse-mode gradients.
//!
//! Each layer is `x + Attn(LN(x))` followed by `x + MLP(LN(x))`, where the
//! attention of head `h` uses the composite kernel of that head. Kernel
//! parameters are shared by all layers. There are no absolute position
//! embeddings, so the model can be evaluated at any length.

mod checkpoint;
mod config;
pub mod ops;
mod params;
mod train;

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{s, Array2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    attend, causal_softmax, composite_scores_backward, composite_scores_windowed, softmax_backward, AttentionInput,
    AttentionWeights,
};
use crate::error::{KerpleError, Result};
use crate::kernel::{build_matrices, BiasMatrix, KernelSpec, WeightMatrix};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use ops::{gelu, gelu_and_grad, gelu_grad, layer_norm, layer_norm_backward, LayerNormCache};
pub use params::{LayerParams, Params, TensorInfo};
pub use train::{train, train_with_progress, write_loss_trace_csv, Adam, LossRecord, TrainOutcome};

use ops::softmax_cross_entropy;

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Token sequences of equal length `L + 1`: the first `L` are inputs and
/// the last `L` are next-token targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    tokens: Array2<usize>,
}

impl Batch {
    pub fn new(rows: &[Vec<usize>], vocab_size: usize) -> Result<Self> {
        let width = rows.first().map(Vec::len).unwrap_or(0);
        if rows.is_empty() || width < 2 {
            return Err(KerpleError::InvalidArgument("a batch needs at least one sequence of two tokens".into()));
        }
        if rows.iter().any(|r| r.len() != width) {
            return Err(KerpleError::Dimension("batch rows differ in length".into()));
        }
        if let Some(&id) = rows.iter().flatten().find(|&&id| id >= vocab_size) {
            return Err(KerpleError::TokenOutOfRange { id, vocab_size });
        }
        let flat: Vec<usize> = rows.iter().flatten().copied().collect();
        let tokens = Array2::from_shape_vec((rows.len(), width), flat).expect("shape checked");
        Ok(Self { tokens })
    }

    pub fn single(tokens: &[usize], vocab_size: usize) -> Result<Self> {
        Self::new(&[tokens.to_vec()], vocab_size)
    }

    pub fn batch_size(&self) -> usize {
        self.tokens.nrows()
    }

    /// Number of scored positions per sequence.
    pub fn seq_len(&self) -> usize {
        self.tokens.ncols() - 1
    }

    fn inputs(&self) -> Vec<usize> {
        self.tokens.slice(s![.., ..-1]).iter().copied().collect()
    }

    fn targets(&self) -> Vec<usize> {
        self.tokens.slice(s![.., 1..]).iter().copied().collect()
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    x_in: Array2<f64>,
    ln1: LayerNormCache,
    h1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Indexed `b * heads + h`.
    attn: Vec<AttentionWeights>,
    concat: Array2<f64>,
    ln2: LayerNormCache,
    h2: Array2<f64>,
    /// GELU derivative at the pre-activation, saved so backward skips the tanh.
    act_grad: Array2<f64>,
    act: Array2<f64>,
}

/// Activations saved by [`Model::forward`] for [`Model::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    batch_size: usize,
    seq_len: usize,
    window: Option<usize>,
    inputs: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<Option<WeightMatrix>>,
    specs: Vec<KernelSpec>,
    layers: Vec<LayerCache>,
    lnf: LayerNormCache,
    hf: Array2<f64>,
    probs: Array2<f64>,
}

/// Result of a forward pass: mean loss in nats, the per-position losses
/// (`batch x seq_len`) and the cache needed for gradients.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub loss: f64,
    pub position_losses: Array2<f64>,
    pub cache: ForwardCache,
}

/// Trained or freshly initialized decoder weights plus bookkeeping. This is
/// also the unit that is written to and read from checkpoint files.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: Params,
    step: u64,
    generation: u64,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params && self.step == other.step
    }
}

impl Model {
    /// Initializes weights from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = Params::init(&config, &mut rng)?;
        Ok(Self::from_parts(config, params, 0))
    }

    pub fn from_parts(config: ModelConfig, params: Params, step: u64) -> Self {
        Self {
            config,
            params,
            step,
            generation: next_generation(),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// Mutable access; invalidates any outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut Params {
        self.generation = next_generation();
        &mut self.params
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// Constrained per-head kernels of the current parameters.
    pub fn kernel_specs(&self) -> Result<Vec<KernelSpec>> {
        self.params.kernel_specs(self.config.variant)
    }

    pub fn forward_loss(&self, batch: &Batch) -> Result<ForwardPass> {
        self.forward(batch, None)
    }

    /// Forward pass; `window` restricts every query to its `window` most
    /// recent positions.
    pub fn forward(&self, batch: &Batch, window: Option<usize>) -> Result<ForwardPass> {
        let cfg = &self.config;
        let (bsz, len) = (batch.batch_size(), batch.seq_len());
        let (heads, dh, dm) = (cfg.heads, cfg.head_dim, cfg.model_dim());
        if let Some(&id) = batch.tokens.iter().find(|&&id| id >= cfg.vocab_size) {
            return Err(KerpleError::TokenOutOfRange {
                id,
                vocab_size: cfg.vocab_size,
            });
        }
        if window == Some(0) {
            return Err(KerpleError::InvalidArgument("window must be at least 1".into()));
        }
        let specs = self.kernel_specs()?;
        let (biases, weights): (Vec<BiasMatrix>, Vec<Option<WeightMatrix>>) =
            specs.iter().map(|s| build_matrices(s, len)).unzip();

        let inputs = batch.inputs();
        let targets = batch.targets();
        let p = &self.params;
        let mut x = Array2::zeros((bsz * len, dm));
        for (mut row, &t) in x.rows_mut().into_iter().zip(&inputs) {
            row.assign(&p.embedding.row(t));
        }

        let mut layer_caches = Vec::with_capacity(cfg.layers);
        for (li, lp) in p.layers.iter().enumerate() {
            let (h1, ln1) = layer_norm(x.view(), lp.ln1_gain.view(), lp.ln1_bias.view());
            let q = h1.dot(&lp.wq);
            let k = h1.dot(&lp.wk);
            let v = h1.dot(&lp.wv);
            let mut concat = Array2::zeros((bsz * len, dm));
            let mut attn = Vec::with_capacity(bsz * heads);
            for b in 0..bsz {
                let rows = b * len..(b + 1) * len;
                for h in 0..heads {
                    let cols = h * dh..(h + 1) * dh;
                    let input = AttentionInput::new(
                        q.slice(s![rows.clone(), cols.clone()]),
                        k.slice(s![rows.clone(), cols.clone()]),
                        v.slice(s![rows.clone(), cols.clone()]),
                    )
                    .map_err(|_| KerpleError::NonFiniteActivation { layer: li, what: "q/k/v" })?;
                    let scores = composite_scores_windowed(&input, &biases[h], weights[h].as_ref(), window)?;
                    let a = causal_softmax(&scores)?;
                    let o = attend(&a, input.values)?;
                    concat.slice_mut(s![rows.clone(), cols]).assign(&o);
                    attn.push(a);
                }
            }
            let x_mid = &x + &concat.dot(&lp.wo);
            let (h2, ln2) = layer_norm(x_mid.view(), lp.ln2_gain.view(), lp.ln2_bias.view());
            let pre_act = h2.dot(&lp.w1) + &lp.b1;
            let mut act_grad = Array2::zeros(pre_act.raw_dim());
            let mut act = pre_act;
            Zip::from(&mut act).and(&mut act_grad).for_each(|a, g| {
                let (y, dy) = gelu_and_grad(*a);
                *a = y;
                *g = dy;
            });
            let x_out = &x_mid + &(act.dot(&lp.w2) + &lp.b2);
            if !x_out.iter().all(|v| v.is_finite()) {
                return Err(KerpleError::NonFiniteActivation {
                    layer: li,
                    what: "residual stream",
                });
            }
            layer_caches.push(LayerCache {
                x_in: std::mem::replace(&mut x, x_out),
                ln1,
                h1,
                q,
                k,
                v,
                attn,
                concat,
                ln2,
                h2,
                act_grad,
                act,
            });
        }

        let (hf, lnf) = layer_norm(x.view(), p.lnf_gain.view(), p.lnf_bias.view());
        let mut probs = hf.dot(&p.w_out) + &p.b_out;
        let losses = softmax_cross_entropy(&mut probs, &targets);
        if !losses.iter().all(|l| l.is_finite()) {
            return Err(KerpleError::NonFiniteActivation {
                layer: cfg.layers,
                what: "output logits",
            });
        }
        let loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let position_losses = Array2::from_shape_vec((bsz, len), losses).expect("one loss per position");
        Ok(ForwardPass {
            loss,
            position_losses,
            cache: ForwardCache {
                generation: self.generation,
                batch_size: bsz,
                seq_len: len,
                window,
                inputs,
                targets,
                weights,
                specs,
                layers: layer_caches,
                lnf,
                hf,
                probs,
            },
        })
    }

    /// Gradient of the mean loss with respect to every parameter, including
    /// the unconstrained kernel parameters.
    pub fn backward(&self, cache: &ForwardCache) -> Result<Params> {
        if cache.generation != self.generation {
            return Err(KerpleError::StaleCache(
                "parameters changed after the forward pass".into(),
            ));
        }
        let cfg = &self.config;
        let p = &self.params;
        let (bsz, len, window) = (cache.batch_size, cache.seq_len, cache.window);
        let (heads, dh) = (cfg.heads, cfg.head_dim);
        let n = (bsz * len) as f64;
        let mut g = p.zeros_like();

        let mut dlogits = cache.probs.clone();
        for (mut row, &t) in dlogits.rows_mut().into_iter().zip(&cache.targets) {
            row[t] -= 1.0;
            row.mapv_inplace(|v| v / n);
        }
        g.w_out = cache.hf.t().dot(&dlogits);
        g.b_out = dlogits.sum_axis(Axis(0));
        let dhf = dlogits.dot(&p.w_out.t());
        let mut dx = layer_norm_backward(dhf.view(), p.lnf_gain.view(), &cache.lnf, &mut g.lnf_gain, &mut g.lnf_bias);

        let mut bias_grad = vec![vec![0.0; len]; heads];
        let mut weight_grad = vec![vec![0.0; len]; heads];
        for (li, lc) in cache.layers.iter().enumerate().rev() {
            let lp = &p.layers[li];
            let gl = &mut g.layers[li];

            // MLP branch
            gl.w2 += &lc.act.t().dot(&dx);
            gl.b2 += &dx.sum_axis(Axis(0));
            let mut dpre = dx.dot(&lp.w2.t());
            dpre *= &lc.act_grad;
            gl.w1 += &lc.h2.t().dot(&dpre);
            gl.b1 += &dpre.sum_axis(Axis(0));
            let dh2 = dpre.dot(&lp.w1.t());
            let dx_mid = &dx + &layer_norm_backward(dh2.view(), lp.ln2_gain.view(), &lc.ln2, &mut gl.ln2_gain, &mut gl.ln2_bias);

            // attention branch
            gl.wo += &lc.concat.t().dot(&dx_mid);
            let dconcat = dx_mid.dot(&lp.wo.t());
            let mut dq = Array2::zeros(lc.q.raw_dim());
            let mut dk = Array2::zeros(lc.k.raw_dim());
            let mut dv = Array2::zeros(lc.v.raw_dim());
            for b in 0..bsz {
                let rows = b * len..(b + 1) * len;
                for h in 0..heads {
                    let cols = h * dh..(h + 1) * dh;
                    let a = &lc.attn[b * heads + h];
                    let input = AttentionInput {
                        queries: lc.q.slice(s![rows.clone(), cols.clone()]),
                        keys: lc.k.slice(s![rows.clone(), cols.clone()]),
                        values: lc.v.slice(s![rows.clone(), cols.clone()]),
                    };
                    let d_out = dconcat.slice(s![rows.clone(), cols.clone()]);
                    let da = d_out.dot(&input.values.t());
                    dv.slice_mut(s![rows.clone(), cols.clone()]).assign(&a.0.t().dot(&d_out));
                    let dscores = softmax_backward(a, &da);
                    let sg = composite_scores_backward(&input, cache.weights[h].as_ref(), &dscores, window);
                    dq.slice_mut(s![rows.clone(), cols.clone()]).assign(&sg.queries);
                    dk.slice_mut(s![rows.clone(), cols]).assign(&sg.keys);
                    for d in 0..len {
                        bias_grad[h][d] += sg.bias_by_distance[d];
                        weight_grad[h][d] += sg.weight_by_distance[d];
                    }
                }
            }
            gl.wq += &lc.h1.t().dot(&dq);
            gl.wk += &lc.h1.t().dot(&dk);
            gl.wv += &lc.h1.t().dot(&dv);
            let dh1 = dq.dot(&lp.wq.t()) + dk.dot(&lp.wk.t()) + dv.dot(&lp.wv.t());
            dx = dx_mid + layer_norm_backward(dh1.view(), lp.ln1_gain.view(), &lc.ln1, &mut gl.ln1_gain, &mut gl.ln1_bias);
            debug_assert_eq!(lc.x_in.dim(), dx.dim());
        }

        for (row, &t) in dx.rows().into_iter().zip(&cache.inputs) {
            let mut e = g.embedding.row_mut(t);
            e += &row;
        }

        for (h, spec) in cache.specs.iter().enumerate() {
            let arity = spec.variant().arity();
            if arity == 0 {
                continue;
            }
            let mut constrained = vec![0.0; arity];
            let mut tmp = vec![0.0; arity];
            let has_weight = cache.weights[h].is_some();
            for d in 0..len {
                spec.bias_param_grad(d as i64, &mut tmp);
                for (c, t) in constrained.iter_mut().zip(&tmp) {
                    *c += bias_grad[h][d] * t;
                }
                if has_weight {
                    spec.weight_param_grad(d as i64, &mut tmp);
                    for (c, t) in constrained.iter_mut().zip(&tmp) {
                        *c += weight_grad[h][d] * t;
                    }
                }
            }
            g.kernel[h].raw = p.kernel[h].chain(&constrained);
        }
        Ok(g)
    }

    /// Next-token losses of one sequence of any length (`tokens.len() - 1`
    /// positions are scored).
    pub fn score_sequence(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        self.score_sequence_windowed(tokens, None)
    }

    pub fn score_sequence_windowed(&self, tokens: &[usize], window: Option<usize>) -> Result<Vec<f64>> {
        let batch = Batch::single(tokens, self.config.vocab_size)?;
        Ok(self.forward(&batch, window)?.position_losses.row(0).to_vec())
    }

    /// Per-position losses for every sequence of a batch.
    pub fn score_batch(&self, batch: &Batch, window: Option<usize>) -> Result<Array2<f64>> {
        Ok(self.forward(batch, window)?.position_losses)
    }
}

/// Sum of squares of all entries; handy for gradient-norm logging.
pub fn squared_norm(p: &Params) -> f64 {
    let mut total = 0.0;
    p.for_each(|_, s| total += s.iter().map(|x| x * x).sum::<f64>());
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Variant;

    fn tiny(variant: Variant) -> ModelConfig {
        ModelConfig {
            vocab_size: 7,
            layers: 1,
            heads: 2,
            head_dim: 2,
            mlp_hidden: 5,
            train_len: 4,
            variant,
            init_std: 0.5,
            seed: 3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn zero_output_projection_gives_log_vocab() {
        let mut m = Model::new(tiny(Variant::Log)).unwrap();
        m.params_mut().w_out.fill(0.0);
        let batch = Batch::new(&[vec![0, 1, 2, 3, 4], vec![6, 5, 4, 3, 2]], 7).unwrap();
        let pass = m.forward_loss(&batch).unwrap();
        assert!((pass.loss - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn identical_sequences_have_identical_losses() {
        let m = Model::new(tiny(Variant::Power)).unwrap();
        let seq = vec![1, 4, 2, 2, 6];
        let batch = Batch::new(&[seq.clone(), seq.clone(), seq], 7).unwrap();
        let pass = m.forward_loss(&batch).unwrap();
        let rows: Vec<Vec<f64>> = pass.position_losses.rows().into_iter().map(|r| r.to_vec()).collect();
        assert_eq!(rows[0], rows[1]);
        assert_eq!(rows[1], rows[2]);
    }

    #[test]
    fn rejects_out_of_range_tokens() {
        assert!(matches!(
            Batch::new(&[vec![0, 9]], 7),
            Err(KerpleError::TokenOutOfRange { id: 9, .. })
        ));
        let m = Model::new(tiny(Variant::Log)).unwrap();
        assert!(m.score_sequence(&[1, 70]).is_err());
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut m = Model::new(tiny(Variant::Log)).unwrap();
        let batch = Batch::new(&[vec![0, 1, 2, 3, 4]], 7).unwrap();
        let pass = m.forward_loss(&batch).unwrap();
        m.params_mut().b_out[0] += 1.0;
        assert!(matches!(m.backward(&pass.cache), Err(KerpleError::StaleCache(_))));
    }

    #[test]
    fn score_sequence_matches_forward() {
        let m = Model::new(tiny(Variant::ThreeParaLog)).unwrap();
        let seq = vec![3, 1, 4, 1, 5];
        let pass = m.forward_loss(&Batch::single(&seq, 7).unwrap()).unwrap();
        assert_eq!(m.score_sequence(&seq).unwrap(), pass.position_losses.row(0).to_vec());
        assert_eq!(m.score_sequence(&seq[..2]).unwrap().len(), 1);
        // longer than train_len
        let long: Vec<usize> = (0..40).map(|i| i % 7).collect();
        let losses = m.score_sequence(&long).unwrap();
        assert_eq!(losses.len(), 39);
        assert!(losses.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn prefix_scores_are_causal() {
        let m = Model::new(tiny(Variant::Log)).unwrap();
        let seq: Vec<usize> = (0..12).map(|i| (i * 3) % 7).collect();
        let full = m.score_sequence(&seq).unwrap();
        let prefix = m.score_sequence(&seq[..6]).unwrap();
        for (a, b) in prefix.iter().zip(&full) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn unused_t5_buckets_get_zero_gradient() {
        let m = Model::new(tiny(Variant::T5Bucket)).unwrap();
        let batch = Batch::new(&[vec![0, 1, 2, 3, 4]], 7).unwrap();
        let pass = m.forward_loss(&batch).unwrap();
        let g = m.backward(&pass.cache).unwrap();
        for h in 0..2 {
            // train_len 4 realizes distances 0..=3 only
            assert!(g.kernel[h].raw[..4].iter().any(|&x| x != 0.0));
            assert!(g.kernel[h].raw[4..].iter().all(|&x| x == 0.0));
        }
    }
}
