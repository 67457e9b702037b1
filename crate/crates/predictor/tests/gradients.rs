use capsim_predictor::gradcheck::{check, random_clip, tiny_config};
use capsim_predictor::Model;

#[test]
fn every_tensor_matches_finite_differences() {
    let cfg = tiny_config();
    let mut model: Model<f64> = Model::new(cfg.clone()).unwrap();
    let mut batch = Vec::new();
    for seed in 0..2 {
        let clip = random_clip(&cfg, 3, seed);
        let mut p = model.prepare(&clip).unwrap();
        // keep the label far from the prediction so |p - f| stays smooth
        p.label = model.forward(&p).unwrap().prediction * if seed == 0 { 3.0 } else { 0.25 };
        batch.push(p);
    }
    let report = check(&mut model, &batch, 1e-5).unwrap();
    assert_eq!(report.len(), model.params.names.len());
    for t in &report {
        assert!(t.max_abs_grad > 0.0, "{} has no gradient", t.name);
        assert!(t.rel_error <= 1e-4, "{}: {:.3e}", t.name, t.rel_error);
    }
}

#[test]
fn deeper_head_and_two_layers() {
    let mut cfg = tiny_config();
    cfg.layers = 2;
    cfg.mlp_hidden = Some(vec![6, 4]);
    cfg.seed = 3;
    let mut model: Model<f64> = Model::new(cfg.clone()).unwrap();
    let clip = random_clip(&cfg, 4, 9);
    let mut p = model.prepare(&clip).unwrap();
    p.label = model.forward(&p).unwrap().prediction * 2.0;
    for t in check(&mut model, &[p], 1e-5).unwrap() {
        assert!(t.rel_error <= 1e-4, "{}: {:.3e}", t.name, t.rel_error);
    }
}
