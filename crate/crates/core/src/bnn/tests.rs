use rand::{Rng as _, SeedableRng};

use super::*;
use crate::seed::Rng;

pub(crate) fn tiny_arch(hidden: usize, t_hist: usize, t_fut: usize, dropout: f64) -> Architecture {
    Architecture { hidden, t_hist, t_fut, dropout }
}

const NORM: Normalization = Normalization { meal_scale: 2.0, dose_scale: 1.0 };

pub(crate) fn random_sample(arch: &Architecture, rng: &mut Rng) -> WindowSample {
    let mut v = || [rng.gen::<f64>(), rng.gen::<f64>()];
    WindowSample {
        hist_symptoms: (0..arch.t_hist).map(|_| v()).collect(),
        combined_inputs: (0..arch.t_hist + arch.t_fut).map(|_| v()).collect(),
        target: (0..arch.t_fut).map(|_| v()).collect(),
    }
}

fn random_model(arch: Architecture, seed: u64) -> ModelWeights {
    let mut rng = Rng::seed_from_u64(seed);
    let mut m = ModelWeights::init_random(arch, NORM, &mut rng).unwrap();
    // widen the weights so that the gradient check exercises nonlinear regions
    for p in &mut m.params {
        *p *= 2.0;
    }
    m
}

/// Straightforward scalar LSTM written against the documented layout.
fn reference_forward(m: &ModelWeights, s: &WindowSample) -> Vec<[f64; 2]> {
    let hd = m.arch.hidden;
    let l = m.layout();
    let p = &m.params;
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let cell = |w0: usize, b0: usize, n_in: usize, x: &[f64], h: &[f64], c: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let cols = n_in + hd;
        let pre = |gate: usize, j: usize| -> f64 {
            let row = gate * hd + j;
            let mut z = p[b0 + row];
            for k in 0..n_in {
                z += p[w0 + row * cols + k] * x[k];
            }
            for k in 0..hd {
                z += p[w0 + row * cols + n_in + k] * h[k];
            }
            z
        };
        let mut h2 = vec![0.0; hd];
        let mut c2 = vec![0.0; hd];
        for j in 0..hd {
            let i = sig(pre(0, j));
            let f = sig(pre(1, j));
            let g = pre(2, j).tanh();
            let o = sig(pre(3, j));
            c2[j] = f * c[j] + i * g;
            h2[j] = o * c2[j].tanh();
        }
        (h2, c2)
    };
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    for t in 0..m.arch.t_hist {
        let x = [s.hist_symptoms[t][0], s.hist_symptoms[t][1], s.combined_inputs[t][0], s.combined_inputs[t][1]];
        (h, c) = cell(l.enc_w.start, l.enc_b.start, 4, &x, &h, &c);
    }
    let mut out = Vec::new();
    for t in 0..m.arch.t_fut {
        let x = s.combined_inputs[m.arch.t_hist + t];
        (h, c) = cell(l.dec_w.start, l.dec_b.start, 2, &x, &h, &c);
        let y: [f64; 2] = std::array::from_fn(|o| {
            p[l.head_b.start + o] + (0..hd).map(|j| p[l.head_w.start + o * hd + j] * h[j]).sum::<f64>()
        });
        out.push(y);
    }
    out
}

#[test]
fn zero_weights_give_zero_outputs() {
    let arch = tiny_arch(4, 3, 2, 0.1);
    let m = ModelWeights::zeros(arch, NORM).unwrap();
    let s = random_sample(&arch, &mut Rng::seed_from_u64(1));
    assert!(m.forward(&s.inputs(), None).unwrap().iter().all(|y| *y == [0.0, 0.0]));
    let mut rng = Rng::seed_from_u64(2);
    assert!(m.forward(&s.inputs(), Some(&mut rng)).unwrap().iter().all(|y| *y == [0.0, 0.0]));
}

#[test]
fn deterministic_forward_is_repeatable() {
    let arch = tiny_arch(5, 4, 3, 0.2);
    let m = random_model(arch, 3);
    let s = random_sample(&arch, &mut Rng::seed_from_u64(4));
    assert_eq!(m.forward(&s.inputs(), None).unwrap(), m.forward(&s.inputs(), None).unwrap());
}

#[test]
fn forward_matches_scalar_reference() {
    let arch = tiny_arch(3, 2, 2, 0.0);
    for seed in 0..5 {
        let m = random_model(arch, seed);
        let s = random_sample(&arch, &mut Rng::seed_from_u64(100 + seed));
        let got = m.forward(&s.inputs(), None).unwrap();
        let want = reference_forward(&m, &s);
        for (a, b) in got.iter().zip(&want) {
            assert!((a[0] - b[0]).abs() < 1e-10 && (a[1] - b[1]).abs() < 1e-10);
        }
    }
}

#[test]
fn forward_shape_errors() {
    let arch = tiny_arch(3, 4, 2, 0.0);
    let m = random_model(arch, 1);
    let mut s = random_sample(&arch, &mut Rng::seed_from_u64(1));
    s.hist_symptoms.pop();
    match m.forward(&s.inputs(), None) {
        Err(Error::Shape { expected, actual, .. }) => {
            assert_eq!(expected, "[4 x 2]");
            assert_eq!(actual, "[3 x 2]");
        }
        other => panic!("unexpected {other:?}"),
    }
    let mut s = random_sample(&arch, &mut Rng::seed_from_u64(1));
    s.combined_inputs.push([0.0, 0.0]);
    assert!(matches!(m.forward(&s.inputs(), None), Err(Error::Shape { .. })));
}

/// Central-difference check of every gradient component; returns the worst
/// relative error.
pub(crate) fn gradient_check(m: &ModelWeights, batch: &[WindowSample], masks: Option<&[Vec<f64>]>) -> f64 {
    let (_, grad) = m.loss_and_gradients(batch, masks).unwrap();
    let loss_at = |params: &[f64]| -> f64 {
        let mm = ModelWeights { params: params.to_vec(), ..m.clone() };
        mm.loss_with_masks(batch, masks).unwrap()
    };
    let h = 1e-5;
    let mut p = m.params.clone();
    let mut worst: f64 = 0.0;
    for k in 0..p.len() {
        let orig = p[k];
        p[k] = orig + h;
        let up = loss_at(&p);
        p[k] = orig - h;
        let down = loss_at(&p);
        p[k] = orig;
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-7);
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..6 {
        let arch = tiny_arch(2 + (seed as usize % 3), 1 + seed as usize % 3, 1 + (seed as usize + 1) % 3, 0.3);
        let m = random_model(arch, seed);
        let mut rng = Rng::seed_from_u64(seed + 50);
        let batch: Vec<_> = (0..2).map(|_| random_sample(&arch, &mut rng)).collect();
        assert!(gradient_check(&m, &batch, None) < 1e-4);
        let masks: Vec<_> = (0..2).map(|_| m.sample_mask(&mut rng)).collect();
        assert!(gradient_check(&m, &batch, Some(&masks)) < 1e-4);
    }
}

#[test]
fn perfect_predictions_have_zero_loss() {
    let arch = tiny_arch(3, 3, 3, 0.0);
    let m = random_model(arch, 8);
    let mut s = random_sample(&arch, &mut Rng::seed_from_u64(8));
    s.target = m.forward(&s.inputs(), None).unwrap();
    let (loss, grad) = m.loss_and_gradients(&[s], None).unwrap();
    assert_eq!(loss, 0.0);
    let l = m.layout();
    assert!(grad[l.head_b].iter().all(|g| *g == 0.0));
}

#[test]
fn duplicated_batch_has_same_loss() {
    let arch = tiny_arch(3, 3, 3, 0.0);
    let m = random_model(arch, 9);
    let mut rng = Rng::seed_from_u64(9);
    let batch: Vec<_> = (0..3).map(|_| random_sample(&arch, &mut rng)).collect();
    let doubled: Vec<_> = batch.iter().chain(batch.iter()).cloned().collect();
    let (a, _) = m.loss_and_gradients(&batch, None).unwrap();
    let (b, _) = m.loss_and_gradients(&doubled, None).unwrap();
    assert!((a - b).abs() <= 1e-15 * a.abs());
    assert!(m.loss_and_gradients(&[], None).is_err());
}

#[test]
fn mc_without_dropout_is_deterministic() {
    let arch = tiny_arch(4, 3, 4, 0.0);
    let m = random_model(arch, 10);
    let s = random_sample(&arch, &mut Rng::seed_from_u64(10));
    let f = m.predict_mc(&s.inputs(), 30, &mut Rng::seed_from_u64(0)).unwrap();
    let det = m.forward(&s.inputs(), None).unwrap();
    assert!(f.sigma.iter().all(|s| *s == [0.0, 0.0]));
    for (mu, y) in f.mu.iter().zip(&det) {
        assert_eq!(*mu, y.map(|v| NORM.symptom_inv(v)));
    }
}

#[test]
fn single_pass_has_zero_sigma() {
    let arch = tiny_arch(4, 3, 4, 0.3);
    let m = random_model(arch, 11);
    let s = random_sample(&arch, &mut Rng::seed_from_u64(11));
    let f = m.predict_mc(&s.inputs(), 1, &mut Rng::seed_from_u64(0)).unwrap();
    assert!(f.sigma.iter().all(|s| *s == [0.0, 0.0]));
    assert!(m.predict_mc(&s.inputs(), 0, &mut Rng::seed_from_u64(0)).is_err());
}

#[test]
fn mc_equals_explicit_stochastic_passes() {
    let arch = tiny_arch(5, 3, 4, 0.25);
    let m = random_model(arch, 12);
    let s = random_sample(&arch, &mut Rng::seed_from_u64(12));
    let passes = 7;
    let f = m.predict_mc(&s.inputs(), passes, &mut Rng::seed_from_u64(5)).unwrap();
    let mut rng = Rng::seed_from_u64(5);
    let runs: Vec<Vec<[f64; 2]>> = (0..passes)
        .map(|_| m.forward(&s.inputs(), Some(&mut rng)).unwrap())
        .collect();
    for t in 0..arch.t_fut {
        for ch in 0..2 {
            let xs: Vec<f64> = runs.iter().map(|r| NORM.symptom_inv(r[t][ch])).collect();
            let mean = xs.iter().sum::<f64>() / passes as f64;
            let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / passes as f64).sqrt();
            assert!((f.mu[t][ch] - mean).abs() < 1e-12);
            assert!((f.sigma[t][ch] - sd).abs() < 1e-12);
        }
    }
    let again = m.predict_mc(&s.inputs(), passes, &mut Rng::seed_from_u64(5)).unwrap();
    assert_eq!(f, again);
}

#[test]
fn mc_mean_converges_to_large_sample_estimate() {
    let arch = tiny_arch(6, 3, 3, 0.2);
    let m = random_model(arch, 13);
    let s = random_sample(&arch, &mut Rng::seed_from_u64(13));
    let big = m.predict_mc(&s.inputs(), 10_000, &mut Rng::seed_from_u64(1)).unwrap();
    let small = m.predict_mc(&s.inputs(), 30, &mut Rng::seed_from_u64(2)).unwrap();
    for t in 0..arch.t_fut {
        for ch in 0..2 {
            let tol = 3.0 * big.sigma[t][ch] / (30f64).sqrt() + 1e-12;
            assert!((small.mu[t][ch] - big.mu[t][ch]).abs() <= tol);
        }
    }
}

#[test]
fn inverted_dropout_is_unbiased() {
    let arch = tiny_arch(8, 1, 1, 0.1);
    let m = ModelWeights::zeros(arch, NORM).unwrap();
    let h: Vec<f64> = (0..8).map(|j| 0.1 + 0.1 * j as f64).collect();
    let n = 10_000;
    let mut rng = Rng::seed_from_u64(21);
    let mut sum = vec![0.0; 8];
    let mut sumsq = vec![0.0; 8];
    let mut mask = vec![0.0; 8];
    for _ in 0..n {
        m.sample_step_mask(&mut rng, &mut mask);
        for j in 0..8 {
            let v = mask[j] * h[j];
            sum[j] += v;
            sumsq[j] += v * v;
        }
    }
    for j in 0..8 {
        let mean = sum[j] / n as f64;
        let sd = (sumsq[j] / n as f64 - mean * mean).sqrt();
        assert!((mean - h[j]).abs() < 3.0 * sd / (n as f64).sqrt());
    }
}

#[test]
fn weight_file_round_trip() {
    let arch = tiny_arch(4, 3, 2, 0.15);
    let m = random_model(arch, 14);
    let mut buf = Vec::new();
    write_weights(&m, &mut buf).unwrap();
    assert_eq!(&buf[..8], MAGIC);
    let back = read_weights(&mut &buf[..]).unwrap();
    assert_eq!(back, m);
    let s = random_sample(&arch, &mut Rng::seed_from_u64(1));
    let a = m.forward(&s.inputs(), None).unwrap();
    let b = back.forward(&s.inputs(), None).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x[0].to_bits() == y[0].to_bits() && x[1].to_bits() == y[1].to_bits()));

    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(read_weights(&mut &bad[..]), Err(Error::Format(_))));
    assert!(read_weights(&mut &buf[..buf.len() - 3]).is_err());
}

#[test]
fn window_extraction_counts() {
    assert_eq!(window_count(240, 72, 72, 24), 5);
    assert_eq!(window_count(143, 72, 72, 24), 0);
    assert_eq!(window_count(144, 72, 72, 24), 1);
    let n = 240;
    let meals: Vec<f64> = (0..n).map(|h| h as f64).collect();
    let doses = vec![0.5; n];
    let sym: Vec<[f64; 2]> = (0..n).map(|h| [1.0 + (h % 10) as f64, 10.0]).collect();
    let w = extract_windows(&meals, &doses, &sym, &NORM, 72, 72, 24).unwrap();
    assert_eq!(w.len(), 5);
    assert_eq!(w[1].combined_inputs[0][0], 24.0 / NORM.meal_scale);
    assert_eq!(w[1].target[0], [NORM.symptom(sym[24 + 72][0]), 1.0]);
    assert!(extract_windows(&meals, &doses[1..], &sym, &NORM, 72, 72, 24).is_err());
}

fn constant_dataset(arch: &Architecture, n: usize, value: f64) -> Vec<WindowSample> {
    let mut rng = Rng::seed_from_u64(31);
    (0..n)
        .map(|_| {
            let mut s = random_sample(arch, &mut rng);
            s.target = vec![[value, value]; arch.t_fut];
            s
        })
        .collect()
}

#[test]
fn zero_learning_rate_leaves_weights_unchanged() {
    let arch = tiny_arch(4, 3, 3, 0.1);
    let m = random_model(arch, 15);
    let data = constant_dataset(&arch, 10, 0.3);
    let cfg = TrainConfig { lr: 0.0, weight_decay: 0.0, max_epochs: 3, ..TrainConfig::default() };
    let (out, _) = train(&m, &[data], &cfg).unwrap();
    assert_eq!(out.params, m.params);
}

#[test]
fn memorizes_constant_target() {
    let arch = tiny_arch(4, 3, 3, 0.0);
    let m = random_model(arch, 16);
    let data = constant_dataset(&arch, 20, 0.4);
    let cfg = TrainConfig { lr: 0.05, max_epochs: 200, patience: 30, batch_size: 5, ..TrainConfig::default() };
    let (out, hist) = train(&m, &[data.clone()], &cfg).unwrap();
    assert!(out.loss(&data).unwrap() < 1e-3, "{:?}", hist.epochs.last());
    assert!(hist.best_val_loss <= hist.final_val_loss);
}

#[test]
fn finetune_freezes_encoder() {
    let arch = tiny_arch(4, 3, 3, 0.1);
    let m = random_model(arch, 17);
    let data = constant_dataset(&arch, 12, 0.2);
    let cfg = TrainConfig { lr: 0.05, max_epochs: 10, ..TrainConfig::default() };
    let (out, hist) = finetune(&m, &data, &cfg).unwrap();
    let enc = m.layout().encoder();
    assert_eq!(out.params[enc.clone()], m.params[enc.clone()]);
    assert_ne!(out.params, m.params);
    let (_, val) = split_temporal(&[data.clone()], cfg.val_fraction);
    assert!(out.loss(&val).unwrap() <= m.loss(&val).unwrap());
    assert!(hist.best_val_loss <= hist.final_val_loss);

    let all = TrainConfig { val_fraction: 0.0, ..cfg };
    let (out, _) = finetune(&m, &data, &all).unwrap();
    assert!(out.loss(&data).unwrap() <= m.loss(&data).unwrap());

    let (same, h) = finetune(&m, &[], &cfg).unwrap();
    assert_eq!(same, m);
    assert!(h.epochs.is_empty());
}

#[test]
fn temporal_split_takes_trailing_windows() {
    let arch = tiny_arch(2, 1, 1, 0.0);
    let g: Vec<WindowSample> = (0..20)
        .map(|i| {
            let mut s = random_sample(&arch, &mut Rng::seed_from_u64(i));
            s.target = vec![[i as f64, 0.0]];
            s
        })
        .collect();
    let (tr, val) = split_temporal(&[g.clone(), g[..5].to_vec()], 0.1);
    assert_eq!(val.len(), 3);
    assert_eq!(tr.len(), 22);
    assert_eq!(val[0].target[0][0], 18.0);
    assert_eq!(val[2].target[0][0], 4.0);
}
