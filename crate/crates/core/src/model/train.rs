use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Batch, Model, ModelConfig, Params};
use crate::error::{KerpleError, Result};

/// Adam with bias correction and a constant step size.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(config: &ModelConfig, params: &Params) -> Self {
        let n = params.num_scalars();
        Self {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.epsilon,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, model: &mut Model, grads: &Params) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut i = 0;
        model.params_mut().zip_mut(grads, |p, g| {
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            *p -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            i += 1;
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub trace: Vec<LossRecord>,
}

/// Trains a freshly initialized model on random windows of `corpus`.
///
/// Weights come from `config.seed`; batch offsets come from a separate
/// stream of the same seed, so runs are bit-reproducible.
pub fn train(config: &ModelConfig, corpus: &[usize], steps: usize) -> Result<TrainOutcome> {
    train_with_progress(config, corpus, steps, |_| {})
}

/// [`train`] with a callback invoked for every logged loss record.
pub fn train_with_progress(
    config: &ModelConfig,
    corpus: &[usize],
    steps: usize,
    mut progress: impl FnMut(&LossRecord),
) -> Result<TrainOutcome> {
    let window = config.train_len + 1;
    if corpus.len() < window {
        return Err(KerpleError::CorpusTooShort {
            len: corpus.len(),
            needed: window,
        });
    }
    let mut model = Model::new(config.clone())?;
    let mut adam = Adam::new(config, model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut trace = Vec::new();
    for step in 1..=steps as u64 {
        let rows: Vec<Vec<usize>> = (0..config.batch_size)
            .map(|_| {
                let start = rng.gen_range(0..=corpus.len() - window);
                corpus[start..start + window].to_vec()
            })
            .collect();
        let batch = Batch::new(&rows, config.vocab_size)?;
        let pass = model.forward_loss(&batch)?;
        let grads = model.backward(&pass.cache)?;
        adam.step(&mut model, &grads);
        model.set_step(step);
        if step == 1 || step % config.log_every as u64 == 0 || step == steps as u64 {
            let rec = LossRecord { step, loss: pass.loss };
            progress(&rec);
            trace.push(rec);
        }
    }
    Ok(TrainOutcome { model, trace })
}

/// Columns: `step,loss`.
pub fn write_loss_trace_csv<W: Write>(mut w: W, trace: &[LossRecord]) -> Result<()> {
    writeln!(w, "step,loss")?;
    for r in trace {
        writeln!(w, "{},{}", r.step, r.loss)?;
    }
    Ok(())
}
