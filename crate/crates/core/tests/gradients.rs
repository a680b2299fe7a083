mod common;

use kerple::model::Model;
use kerple::Variant;

const TOL: f64 = 1e-4;

#[test]
fn backward_matches_central_differences_for_every_variant() {
    for v in Variant::ALL {
        let cfg = common::grad_config(v);
        let model = Model::new(cfg.clone()).unwrap();
        let (err, name, count) = common::worst_gradient_error(&model, &common::grad_batch(cfg.vocab_size));
        assert!(count > 0);
        assert!(err < TOL, "{v}: relative error {err:e} in {name} (floor {})", common::FLOOR);
    }
}

#[test]
fn deeper_model_gradients() {
    let cfg = kerple::model::ModelConfig {
        layers: 2,
        heads: 3,
        ..common::grad_config(Variant::ThreeParaLog)
    };
    let model = Model::new(cfg.clone()).unwrap();
    let (err, name, _) = common::worst_gradient_error(&model, &common::grad_batch(cfg.vocab_size));
    assert!(err < TOL, "relative error {err:e} in {name}");
}
