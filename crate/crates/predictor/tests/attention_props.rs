use capsim_predictor::nn::{attention, attention_weights, mha, AttnGroup, Mat, MhaWeights};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat<f64> {
    Mat::from_shape_fn((r, c), |_| rng.gen_range(-2.0..2.0))
}

#[test]
fn identity_case() {
    let i: Mat<f64> = Mat::eye(2);
    let out = attention(&i, &i, &i, None).unwrap();
    let want = [[0.6698, 0.3302], [0.3302, 0.6698]];
    for r in 0..2 {
        for c in 0..2 {
            assert!((out[[r, c]] - want[r][c]).abs() < 1e-3);
        }
    }
}

#[test]
fn zero_scores_give_column_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q = Mat::<f64>::zeros((3, 4));
    let k = random(&mut rng, 5, 4);
    let v = random(&mut rng, 5, 3);
    let out = attention(&q, &k, &v, None).unwrap();
    let mean = v.mean_axis(ndarray::Axis(0)).unwrap();
    for row in out.rows() {
        for (a, b) in row.iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn identical_value_rows_pass_through() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let q = random(&mut rng, 4, 3);
    let k = random(&mut rng, 6, 3);
    let v = Mat::from_shape_fn((6, 2), |(_, c)| [1.5, -0.25][c]);
    let out = attention(&q, &k, &v, None).unwrap();
    for row in out.rows() {
        assert!((row[0] - 1.5).abs() < 1e-12 && (row[1] + 0.25).abs() < 1e-12);
    }
}

#[test]
fn shape_errors() {
    let a = Mat::<f64>::zeros((2, 3));
    let b = Mat::<f64>::zeros((2, 4));
    assert!(attention(&a, &b, &b, None).is_err());
    assert!(attention(&a, &a, &Mat::zeros((3, 1)), None).is_err());
    assert!(attention(&a, &a, &a, Some(&[false, false])).is_err());
}

#[test]
fn single_head_identity_projections_is_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&mut rng, 4, 6);
    let y = random(&mut rng, 5, 6);
    let i = Mat::<f64>::eye(6);
    let w = MhaWeights { wq: &i, wk: &i, wv: &i, wo: &i };
    let (out, _) = mha(&x, &y, &w, 1, &[AttnGroup { q: 0..4, kv: 0..5 }], None).unwrap();
    let want = attention(&x, &y, &y, None).unwrap();
    assert!((&out - &want).iter().all(|d| d.abs() < 1e-12));
}

#[test]
fn two_heads_compose_from_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let e = 6;
    let x = random(&mut rng, 3, e);
    let (wq, wk, wv, wo) = (random(&mut rng, e, e), random(&mut rng, e, e), random(&mut rng, e, e), random(&mut rng, e, e));
    let w = MhaWeights { wq: &wq, wk: &wk, wv: &wv, wo: &wo };
    let (out, _) = mha(&x, &x, &w, 2, &[AttnGroup { q: 0..3, kv: 0..3 }], None).unwrap();
    let mut concat = Mat::zeros((3, e));
    for h in 0..2 {
        let cols = ndarray::s![.., h * 3..(h + 1) * 3];
        let q = x.dot(&wq.slice(cols).to_owned());
        let k = x.dot(&wk.slice(cols).to_owned());
        let v = x.dot(&wv.slice(cols).to_owned());
        concat.slice_mut(cols).assign(&attention(&q, &k, &v, None).unwrap());
    }
    let want = concat.dot(&wo);
    assert!((&out - &want).iter().all(|d| d.abs() < 1e-6));
}

#[test]
fn masked_key_row_is_ignored() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let e = 4;
    let x = random(&mut rng, 2, e);
    let mut y = random(&mut rng, 4, e);
    let (wq, wk, wv, wo) = (random(&mut rng, e, e), random(&mut rng, e, e), random(&mut rng, e, e), random(&mut rng, e, e));
    let w = MhaWeights { wq: &wq, wk: &wk, wv: &wv, wo: &wo };
    let mask = [true, false, true, true];
    let g = [AttnGroup { q: 0..2, kv: 0..4 }];
    let (a, cache) = mha(&x, &y, &w, 2, &g, Some(&mask)).unwrap();
    assert!(cache.weights(0, 0).column(1).iter().all(|&p| p == 0.0));
    y.row_mut(1).fill(1e6);
    let (b, _) = mha(&x, &y, &w, 2, &g, Some(&mask)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn softmax_rows_sum_to_one_across_many_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10_000 {
        let (n, m, d) = (rng.gen_range(1..6), rng.gen_range(1..9), rng.gen_range(1..7));
        let scale = rng.gen_range(0.1..20.0);
        let q = random(&mut rng, n, d) * scale;
        let k = random(&mut rng, m, d);
        let p = attention_weights(q.view(), k.view(), None);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() <= 1e-6);
        }
    }
}

proptest! {
    #[test]
    fn masked_weights_are_exactly_zero(seed in 0u64..1000, m in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random(&mut rng, 3, 4);
        let k = random(&mut rng, m, 4);
        let mut mask: Vec<bool> = (0..m).map(|_| rng.gen_bool(0.5)).collect();
        mask[0] = true;
        let p = attention_weights(q.view(), k.view(), Some(&mask));
        for row in p.rows() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-6);
            for (j, &open) in mask.iter().enumerate() {
                if !open {
                    prop_assert_eq!(row[j], 0.0);
                }
            }
        }
    }
}
