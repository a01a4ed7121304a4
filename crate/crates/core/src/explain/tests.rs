use indexmap::IndexMap;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::SequenceTensor;
use crate::encoders::{EncoderKind, EncoderModel, EncoderSpec};
use crate::tensor::{Graph, Tensor};

fn background(n: usize, p: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect()
}

fn names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("f{j}")).collect()
}

#[test]
fn lime_recovers_an_affine_model() {
    let w = [1.5, -2.0, 0.25, 0.0, 3.0, -0.7];
    let model = |x: &[f64]| 0.3 + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
    let bg = background(200, 6, 1);
    let cfg = LimeConfig {
        ridge_lambda: 1e-6,
        ..LimeConfig::default()
    };
    let e = lime_explain(&model, 3, &bg[0], &names(6), &bg, &cfg).unwrap();
    assert!((e.local_fit_r2 - 1.0).abs() < 1e-8);
    for (got, want) in e.feature_weights.values().zip(&w) {
        assert!((got - want).abs() <= 1e-2 * want.abs().max(1.0), "{got} vs {want}");
    }
    assert!((e.intercept - 0.3).abs() < 1e-3);
}

#[test]
fn lime_on_a_constant_model_is_flat() {
    let model = |_: &[f64]| 4.2;
    let bg = background(50, 4, 2);
    let e = lime_explain(&model, 0, &bg[1], &names(4), &bg, &LimeConfig::default()).unwrap();
    assert!(e.feature_weights.values().all(|&v| v.abs() < 1e-12));
    assert!((e.intercept - 4.2).abs() < 1e-12);
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn lime_is_stable_across_seeds() {
    let w = [1.0, -1.0, 0.5, 2.0];
    let model = |x: &[f64]| x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 0.1 * x[0] * x[1];
    let bg = background(100, 4, 3);
    let run = |seed| {
        let cfg = LimeConfig {
            seed,
            ..LimeConfig::default()
        };
        let e = lime_explain(&model, 0, &bg[0], &names(4), &bg, &cfg).unwrap();
        e.feature_weights.values().copied().collect::<Vec<_>>()
    };
    assert!(pearson(&run(1), &run(2)) > 0.95);
    assert_eq!(run(5), run(5));
}

#[test]
fn lime_rejects_bad_inputs() {
    let model = |_: &[f64]| 0.0;
    let bg = background(5, 2, 4);
    let small = LimeConfig {
        n_samples: 9,
        ..LimeConfig::default()
    };
    assert!(lime_explain(&model, 0, &bg[0], &names(2), &bg, &small).is_err());
    assert!(lime_explain(&model, 0, &bg[0], &names(2), &[], &LimeConfig::default()).is_err());
    assert!(lime_explain(&model, 0, &bg[0], &names(3), &bg, &LimeConfig::default()).is_err());
}

#[test]
fn lime_explains_encoder_outputs() {
    let x = SequenceTensor::from_values(6, 3, 2, background(1, 36, 5).remove(0)).unwrap();
    let model = EncoderModel::new(EncoderSpec::new(EncoderKind::Lstm, 2, 3).with_seed(1)).unwrap();
    let out = lime_batch(
        &model,
        &x,
        &[0, 2],
        &x,
        &LimeConfig {
            n_samples: 200,
            ..LimeConfig::default()
        },
    )
    .unwrap();
    assert_eq!(out.len(), 2);
    assert_eq!(out[1].sample_id, 2);
    assert_eq!(out[0].feature_weights.keys().next().unwrap(), "f0@t1");
    assert!((out[0].prediction - model.predict(&x).unwrap()[0]).abs() < 1e-12);
    let mut buf = Vec::new();
    write_explanations_jsonl(&mut buf, &out).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2);
}

fn expl(weights: &[(&str, f64)]) -> Explanation {
    Explanation {
        sample_id: 0,
        feature_weights: weights.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        intercept: 0.0,
        local_fit_r2: 1.0,
        prediction: 0.0,
    }
}

#[test]
fn frequency_counts_top_features() {
    let one = feature_frequency(&[expl(&[("a", 2.0), ("b", 1.0), ("c", 0.0)])], 1).unwrap();
    assert_eq!(one, IndexMap::from([("a".to_string(), 1)]));
    assert!(feature_frequency(&[expl(&[("a", 1.0)])], 0).is_err());
    assert!(feature_frequency(&[], 1).is_err());
}

#[test]
fn frequency_totals_and_permutation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut list: Vec<Explanation> = (0..20)
        .map(|_| {
            let w: Vec<(String, f64)> = (0..6).map(|j| (format!("f{j}"), rng.random_range(-1.0..1.0))).collect();
            Explanation {
                sample_id: 0,
                feature_weights: w.into_iter().collect(),
                intercept: 0.0,
                local_fit_r2: 1.0,
                prediction: 0.0,
            }
        })
        .collect();
    let counts = feature_frequency(&list, 3).unwrap();
    assert_eq!(counts.values().sum::<usize>(), 60);
    assert!(counts.values().collect::<Vec<_>>().windows(2).all(|w| w[0] >= w[1]));
    list.reverse();
    assert_eq!(feature_frequency(&list, 3).unwrap(), counts);
}

#[test]
fn saliency_of_zero_model_is_zero() {
    let mut model = EncoderModel::new(EncoderSpec::new(EncoderKind::Lstm, 3, 3)).unwrap();
    model.zero_all();
    let x = SequenceTensor::from_values(4, 3, 3, background(1, 36, 7).remove(0)).unwrap();
    let r = gradient_saliency(&model, &x).unwrap();
    assert!(r.avg_gradients.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn identity_ssm_saliency_is_uniform_over_time() {
    let d = 3;
    let mut m = EncoderModel::new(EncoderSpec::new(EncoderKind::Ssm, d, 4).with_hidden(d)).unwrap();
    m.set_param("w_enc", Tensor::eye(d)).unwrap();
    m.set_param("b_enc", Tensor::zeros(&[1, d])).unwrap();
    m.set_param("a", Tensor::eye(d)).unwrap();
    m.set_param("b", Tensor::eye(d)).unwrap();
    let x = SequenceTensor::from_values(5, 4, d, background(1, 60, 8).remove(0)).unwrap();
    let r = gradient_saliency(&m, &x).unwrap();
    for row in &r.avg_gradients {
        for &v in row {
            assert!((v - 1.0).abs() < 1e-10);
        }
    }
}

#[test]
fn saliency_matches_finite_differences() {
    let model = EncoderModel::new(EncoderSpec::new(EncoderKind::Lstm, 3, 3).with_hidden(5).with_seed(2)).unwrap();
    let vals = background(1, 9, 9).remove(0);
    let x = SequenceTensor::from_values(1, 3, 3, vals.clone()).unwrap();
    let r = gradient_saliency(&model, &x).unwrap();
    let h_sum = |v: Vec<f64>| {
        let s = SequenceTensor::from_values(1, 3, 3, v).unwrap();
        let mut g = Graph::new();
        let out = model.forward(&mut g, &s, &[0], None, false).unwrap();
        g.value(out.final_hidden).unwrap().data().iter().sum::<f64>()
    };
    let h = 1e-6;
    for t in 0..3 {
        for j in 0..3 {
            let k = t * 3 + j;
            let mut plus = vals.clone();
            plus[k] += h;
            let mut minus = vals.clone();
            minus[k] -= h;
            let fd = ((h_sum(plus) - h_sum(minus)) / (2.0 * h)).abs();
            let got = r.avg_gradients[t][j];
            assert!((got - fd).abs() / fd.max(1e-3) < 1e-4, "t{t} f{j}: {got} vs {fd}");
        }
    }
}

#[test]
fn saliency_ignores_sample_order() {
    let model = EncoderModel::new(EncoderSpec::new(EncoderKind::Transformer, 3, 3).with_seed(4)).unwrap();
    let x = SequenceTensor::from_values(5, 3, 3, background(1, 45, 10).remove(0)).unwrap();
    let y = x.subset(&[4, 3, 2, 1, 0]).unwrap();
    let (a, b) = (
        gradient_saliency(&model, &x).unwrap(),
        gradient_saliency(&model, &y).unwrap(),
    );
    for (r, s) in a.avg_gradients.iter().flatten().zip(b.avg_gradients.iter().flatten()) {
        assert!((r - s).abs() < 1e-12);
    }
    assert_eq!(a.max_feature_counts, b.max_feature_counts);
    assert_eq!(a.max_feature_counts.values().sum::<usize>(), 5);
    let mut buf = Vec::new();
    a.write_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
}
