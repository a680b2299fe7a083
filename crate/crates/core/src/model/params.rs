use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::error::Result;
use crate::kernel::{KernelSpec, ParamVector, Variant};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Every trainable tensor of the decoder. Kernel parameters are stored
/// unconstrained, one [`ParamVector`] per head, shared by all layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub embedding: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub lnf_gain: Array1<f64>,
    pub lnf_bias: Array1<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
    pub kernel: Vec<ParamVector>,
}

impl Params {
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let d = cfg.model_dim();
        let normal = Normal::new(0.0, cfg.init_std).expect("positive std");
        let mut mat = |r: usize, c: usize| Array2::from_shape_simple_fn((r, c), || normal.sample(rng));
        let embedding = mat(cfg.vocab_size, d);
        let layers = (0..cfg.layers)
            .map(|_| LayerParams {
                ln1_gain: Array1::ones(d),
                ln1_bias: Array1::zeros(d),
                wq: mat(d, d),
                wk: mat(d, d),
                wv: mat(d, d),
                wo: mat(d, d),
                ln2_gain: Array1::ones(d),
                ln2_bias: Array1::zeros(d),
                w1: mat(d, cfg.mlp_hidden),
                b1: Array1::zeros(cfg.mlp_hidden),
                w2: mat(cfg.mlp_hidden, d),
                b2: Array1::zeros(d),
            })
            .collect();
        let w_out = mat(d, cfg.vocab_size);
        let kernel = (0..cfg.heads)
            .map(|h| KernelSpec::initial(cfg.variant, h, cfg.heads).map(|s| ParamVector::from_spec(&s)))
            .collect::<Result<_>>()?;
        Ok(Self {
            embedding,
            layers,
            lnf_gain: Array1::ones(d),
            lnf_bias: Array1::zeros(d),
            w_out,
            b_out: Array1::zeros(cfg.vocab_size),
            kernel,
        })
    }

    /// Same shapes, all zeros; used for gradients and optimizer moments.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|_, t| t.iter_mut().for_each(|x| *x = 0.0));
        z
    }

    /// Per-head constrained kernel specs.
    pub fn kernel_specs(&self, variant: Variant) -> Result<Vec<KernelSpec>> {
        let h = self.kernel.len();
        (0..h)
            .map(|i| match variant {
                Variant::Alibi => KernelSpec::alibi(i, h),
                v => self.kernel[i].to_spec(v, i, h),
            })
            .collect()
    }

    /// Visits every tensor as a flat slice in canonical order with its
    /// name and shape. The order defines the checkpoint layout.
    pub fn for_each(&self, mut f: impl FnMut(TensorInfo, &[f64])) {
        fn m2(f: &mut dyn FnMut(TensorInfo, &[f64]), name: String, a: &Array2<f64>) {
            f(TensorInfo::new(name, a.shape().to_vec()), a.as_slice().expect("standard layout"))
        }
        fn m1(f: &mut dyn FnMut(TensorInfo, &[f64]), name: String, a: &Array1<f64>) {
            f(TensorInfo::new(name, vec![a.len()]), a.as_slice().expect("standard layout"))
        }
        let f: &mut dyn FnMut(TensorInfo, &[f64]) = &mut f;
        m2(f, "embedding".into(), &self.embedding);
        for (i, l) in self.layers.iter().enumerate() {
            m1(f, format!("layer{i}.ln1_gain"), &l.ln1_gain);
            m1(f, format!("layer{i}.ln1_bias"), &l.ln1_bias);
            m2(f, format!("layer{i}.wq"), &l.wq);
            m2(f, format!("layer{i}.wk"), &l.wk);
            m2(f, format!("layer{i}.wv"), &l.wv);
            m2(f, format!("layer{i}.wo"), &l.wo);
            m1(f, format!("layer{i}.ln2_gain"), &l.ln2_gain);
            m1(f, format!("layer{i}.ln2_bias"), &l.ln2_bias);
            m2(f, format!("layer{i}.w1"), &l.w1);
            m1(f, format!("layer{i}.b1"), &l.b1);
            m2(f, format!("layer{i}.w2"), &l.w2);
            m1(f, format!("layer{i}.b2"), &l.b2);
        }
        m1(f, "lnf_gain".into(), &self.lnf_gain);
        m1(f, "lnf_bias".into(), &self.lnf_bias);
        m2(f, "w_out".into(), &self.w_out);
        m1(f, "b_out".into(), &self.b_out);
        for (h, k) in self.kernel.iter().enumerate() {
            f(TensorInfo::new(format!("kernel.head{h}"), vec![k.len()]), &k.raw);
        }
    }

    /// Mutable counterpart of [`Params::for_each`], same order.
    pub fn for_each_mut(&mut self, mut f: impl FnMut(TensorInfo, &mut [f64])) {
        fn m2(f: &mut dyn FnMut(TensorInfo, &mut [f64]), name: String, a: &mut Array2<f64>) {
            let shape = a.shape().to_vec();
            f(TensorInfo::new(name, shape), a.as_slice_mut().expect("standard layout"))
        }
        fn m1(f: &mut dyn FnMut(TensorInfo, &mut [f64]), name: String, a: &mut Array1<f64>) {
            let n = a.len();
            f(TensorInfo::new(name, vec![n]), a.as_slice_mut().expect("standard layout"))
        }
        let f: &mut dyn FnMut(TensorInfo, &mut [f64]) = &mut f;
        m2(f, "embedding".into(), &mut self.embedding);
        for (i, l) in self.layers.iter_mut().enumerate() {
            m1(f, format!("layer{i}.ln1_gain"), &mut l.ln1_gain);
            m1(f, format!("layer{i}.ln1_bias"), &mut l.ln1_bias);
            m2(f, format!("layer{i}.wq"), &mut l.wq);
            m2(f, format!("layer{i}.wk"), &mut l.wk);
            m2(f, format!("layer{i}.wv"), &mut l.wv);
            m2(f, format!("layer{i}.wo"), &mut l.wo);
            m1(f, format!("layer{i}.ln2_gain"), &mut l.ln2_gain);
            m1(f, format!("layer{i}.ln2_bias"), &mut l.ln2_bias);
            m2(f, format!("layer{i}.w1"), &mut l.w1);
            m1(f, format!("layer{i}.b1"), &mut l.b1);
            m2(f, format!("layer{i}.w2"), &mut l.w2);
            m1(f, format!("layer{i}.b2"), &mut l.b2);
        }
        m1(f, "lnf_gain".into(), &mut self.lnf_gain);
        m1(f, "lnf_bias".into(), &mut self.lnf_bias);
        m2(f, "w_out".into(), &mut self.w_out);
        m1(f, "b_out".into(), &mut self.b_out);
        for (h, k) in self.kernel.iter_mut().enumerate() {
            let n = k.len();
            f(TensorInfo::new(format!("kernel.head{h}"), vec![n]), &mut k.raw);
        }
    }

    /// Applies `f(param, other)` slot by slot over two identically shaped sets.
    pub fn zip_mut(&mut self, other: &Params, mut f: impl FnMut(&mut f64, f64)) {
        let mut flat = Vec::new();
        other.for_each(|_, s| flat.extend_from_slice(s));
        let mut i = 0;
        self.for_each_mut(|_, s| {
            for x in s.iter_mut() {
                f(x, flat[i]);
                i += 1;
            }
        });
    }

    pub fn num_scalars(&self) -> usize {
        let mut n = 0;
        self.for_each(|_, s| n += s.len());
        n
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorInfo {
    fn new(name: String, shape: Vec<usize>) -> Self {
        Self { name, shape }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_params_are_shared_across_layers() {
        for layers in [1, 2, 5] {
            let cfg = ModelConfig {
                layers,
                variant: Variant::ThreeParaLog,
                ..ModelConfig::default()
            };
            let p = Params::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            let kernel_scalars: usize = p.kernel.iter().map(|k| k.len()).sum();
            assert_eq!(kernel_scalars, 3 * cfg.heads);
        }
    }

    #[test]
    fn visitors_agree() {
        let cfg = ModelConfig {
            layers: 1,
            heads: 2,
            head_dim: 2,
            mlp_hidden: 3,
            vocab_size: 5,
            ..ModelConfig::default()
        };
        let mut p = Params::init(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut names = Vec::new();
        p.for_each(|info, s| {
            assert_eq!(info.shape.iter().product::<usize>(), s.len());
            names.push(info.name);
        });
        let mut names_mut = Vec::new();
        p.for_each_mut(|info, _| names_mut.push(info.name));
        assert_eq!(names, names_mut);
        let z = p.zeros_like();
        assert_eq!(z.num_scalars(), p.num_scalars());
        p.zip_mut(&z, |x, g| *x *= g);
        assert_eq!(p, z);
    }
}
