use kerple::model::{Batch, Model, ModelConfig};
use kerple::Variant;

/// Relative errors are measured against `max(|analytic|, |numeric|, FLOOR)`
/// so that gradients which are zero up to roundoff do not blow up the ratio.
pub const FLOOR: f64 = 1e-6;
const STEP: f64 = 1e-5;

pub fn grad_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        vocab_size: 16,
        layers: 1,
        heads: 2,
        head_dim: 4,
        mlp_hidden: 8,
        train_len: 8,
        variant,
        init_std: 0.5,
        seed: 11,
        ..ModelConfig::default()
    }
}

pub fn grad_batch(vocab: usize) -> Batch {
    let rows: Vec<Vec<usize>> = (0..2)
        .map(|b| (0..9).map(|i| (i * 5 + b * 3 + i * i) % vocab).collect())
        .collect();
    Batch::new(&rows, vocab).unwrap()
}

/// Worst relative error of `backward` against central differences, over
/// every scalar parameter, with the name of the tensor it occurred in.
pub fn worst_gradient_error(model: &Model, batch: &Batch) -> (f64, String, usize) {
    let pass = model.forward_loss(batch).unwrap();
    let grads = model.backward(&pass.cache).unwrap();
    let mut analytic = Vec::new();
    grads.for_each(|info, values| analytic.extend(values.iter().map(|&v| (info.name.clone(), v))));

    let mut flat = Vec::new();
    model.params().for_each(|_, values| flat.extend_from_slice(values));
    let mut probe = model.clone();
    let mut worst = (0.0, String::new());
    for (idx, (name, a)) in analytic.iter().enumerate() {
        let set_and_score = |probe: &mut Model, value: f64| {
            let mut k = 0;
            probe.params_mut().for_each_mut(|_, values| {
                for v in values.iter_mut() {
                    if k == idx {
                        *v = value;
                    }
                    k += 1;
                }
            });
            probe.forward_loss(batch).unwrap().loss
        };
        let x0 = flat[idx];
        let plus = set_and_score(&mut probe, x0 + STEP);
        let minus = set_and_score(&mut probe, x0 - STEP);
        set_and_score(&mut probe, x0);
        let numeric = (plus - minus) / (2.0 * STEP);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
        if rel > worst.0 {
            worst = (rel, name.clone());
        }
    }
    (worst.0, worst.1, analytic.len())
}
