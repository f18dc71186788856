use std::ops::Range;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::lstm::{CellRef, StepCache};
use super::{ForecastDistribution, Normalization, WindowInputs, WindowSample};
use crate::error::{Error, Result};
use crate::seed::Rng;

/// Encoder features per step: reflux, digestion, meal, dose.
pub const ENC_IN: usize = 4;
/// Decoder features per step: meal, dose.
pub const DEC_IN: usize = 2;
pub const OUTPUTS: usize = 2;
/// Initial forget-gate bias of both cells.
pub const FORGET_BIAS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: usize,
    pub t_hist: usize,
    pub t_fut: usize,
    pub dropout: f64,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.t_hist == 0 || self.t_fut == 0 {
            return Err(Error::Config("hidden, t_hist and t_fut must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        let h = self.hidden;
        let sizes = [
            4 * h * (ENC_IN + h),
            4 * h,
            4 * h * (DEC_IN + h),
            4 * h,
            OUTPUTS * h,
            OUTPUTS,
        ];
        let mut start = 0;
        let mut ranges: [Range<usize>; 6] = Default::default();
        for (r, s) in ranges.iter_mut().zip(sizes) {
            *r = start..start + s;
            start += s;
        }
        let [enc_w, enc_b, dec_w, dec_b, head_w, head_b] = ranges;
        Layout { enc_w, enc_b, dec_w, dec_b, head_w, head_b }
    }

    /// Tensor shapes in layout order, as stored in weight files.
    pub fn tensor_dims(&self) -> [Vec<usize>; 6] {
        let h = self.hidden;
        [
            vec![4 * h, ENC_IN + h],
            vec![4 * h],
            vec![4 * h, DEC_IN + h],
            vec![4 * h],
            vec![OUTPUTS, h],
            vec![OUTPUTS],
        ]
    }
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub enc_w: Range<usize>,
    pub enc_b: Range<usize>,
    pub dec_w: Range<usize>,
    pub dec_b: Range<usize>,
    pub head_w: Range<usize>,
    pub head_b: Range<usize>,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.head_b.end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn encoder(&self) -> Range<usize> {
        self.enc_w.start..self.enc_b.end
    }

    pub fn tensors(&self) -> [Range<usize>; 6] {
        [
            self.enc_w.clone(),
            self.enc_b.clone(),
            self.dec_w.clone(),
            self.dec_b.clone(),
            self.head_w.clone(),
            self.head_b.clone(),
        ]
    }
}

/// Sequence-to-sequence LSTM forecaster with dropout before the output head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub arch: Architecture,
    pub norm: Normalization,
    pub params: Vec<f64>,
}

/// Per-step activations of one full forward pass.
pub(crate) struct Trace {
    enc: Vec<StepCache>,
    dec: Vec<StepCache>,
    enc_x: Vec<[f64; ENC_IN]>,
    dec_x: Vec<[f64; DEC_IN]>,
    dropped: Vec<Vec<f64>>,
    pub outputs: Vec<[f64; OUTPUTS]>,
}

impl ModelWeights {
    pub fn zeros(arch: Architecture, norm: Normalization) -> Result<Self> {
        arch.validate()?;
        norm.validate()?;
        let n = arch.layout().len();
        Ok(ModelWeights { arch, norm, params: vec![0.0; n] })
    }

    /// Uniform `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for every tensor, where
    /// `fan_in` is the number of columns feeding the layer; forget-gate biases
    /// start at [`FORGET_BIAS`].
    pub fn init_random(arch: Architecture, norm: Normalization, rng: &mut Rng) -> Result<Self> {
        let mut w = Self::zeros(arch, norm)?;
        let l = arch.layout();
        let h = arch.hidden;
        let spans = [
            (l.encoder(), ENC_IN + h),
            (l.dec_w.start..l.dec_b.end, DEC_IN + h),
            (l.head_w.start..l.head_b.end, h),
        ];
        for (range, fan_in) in spans {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut w.params[range] {
                *p = rng.gen_range(-bound..bound);
            }
        }
        for b in [l.enc_b.clone(), l.dec_b.clone()] {
            w.params[b.start + h..b.start + 2 * h].fill(FORGET_BIAS);
        }
        Ok(w)
    }

    pub fn layout(&self) -> Layout {
        self.arch.layout()
    }

    fn enc_cell(&self, l: &Layout) -> CellRef<'_> {
        CellRef {
            w: &self.params[l.enc_w.clone()],
            b: &self.params[l.enc_b.clone()],
            n_in: ENC_IN,
            hidden: self.arch.hidden,
        }
    }

    fn dec_cell(&self, l: &Layout) -> CellRef<'_> {
        CellRef {
            w: &self.params[l.dec_w.clone()],
            b: &self.params[l.dec_b.clone()],
            n_in: DEC_IN,
            hidden: self.arch.hidden,
        }
    }

    pub fn check_inputs(&self, inputs: &WindowInputs<'_>) -> Result<()> {
        let a = &self.arch;
        if inputs.hist_symptoms.len() != a.t_hist {
            return Err(Error::shape(
                "history symptoms",
                format!("[{} x 2]", a.t_hist),
                format!("[{} x 2]", inputs.hist_symptoms.len()),
            ));
        }
        if inputs.combined_inputs.len() != a.t_hist + a.t_fut {
            return Err(Error::shape(
                "combined inputs",
                format!("[{} x 2]", a.t_hist + a.t_fut),
                format!("[{} x 2]", inputs.combined_inputs.len()),
            ));
        }
        Ok(())
    }

    /// Final encoder `(h, c)`; the encoder has no dropout.
    pub fn encode(&self, inputs: &WindowInputs<'_>) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_inputs(inputs)?;
        let l = self.layout();
        let cell = self.enc_cell(&l);
        let hd = self.arch.hidden;
        let mut cache = StepCache::new(hd);
        let (mut h, mut c) = (vec![0.0; hd], vec![0.0; hd]);
        for t in 0..self.arch.t_hist {
            let x = enc_features(inputs, t);
            cell.step(&x, &h, &c, &mut cache);
            h.copy_from_slice(&cache.h);
            c.copy_from_slice(&cache.c);
        }
        Ok((h, c))
    }

    /// Decoder hidden states for the future part of `combined_inputs`,
    /// starting from an encoded state.
    pub fn decode_hidden(&self, h0: &[f64], c0: &[f64], future: &[[f64; 2]]) -> Vec<Vec<f64>> {
        let l = self.layout();
        let cell = self.dec_cell(&l);
        let mut cache = StepCache::new(self.arch.hidden);
        let (mut h, mut c) = (h0.to_vec(), c0.to_vec());
        future
            .iter()
            .map(|x| {
                cell.step(x, &h, &c, &mut cache);
                h.copy_from_slice(&cache.h);
                c.copy_from_slice(&cache.c);
                h.clone()
            })
            .collect()
    }

    /// Linear head on a (possibly masked) hidden state.
    pub fn head(&self, h: &[f64], mask: Option<&[f64]>) -> [f64; OUTPUTS] {
        let l = self.layout();
        let w = &self.params[l.head_w.clone()];
        let b = &self.params[l.head_b.clone()];
        let hd = self.arch.hidden;
        std::array::from_fn(|o| {
            let row = &w[o * hd..(o + 1) * hd];
            let s: f64 = match mask {
                Some(m) => row.iter().zip(h).zip(m).map(|((w, h), m)| w * h * m).sum(),
                None => row.iter().zip(h).map(|(w, h)| w * h).sum(),
            };
            b[o] + s
        })
    }

    /// Inverted-dropout mask for one decoder step: each unit kept with
    /// probability `1 - rate` and scaled by `1 / (1 - rate)`.
    pub fn sample_step_mask(&self, rng: &mut Rng, out: &mut [f64]) {
        let rate = self.arch.dropout;
        let scale = 1.0 / (1.0 - rate);
        for m in out.iter_mut() {
            *m = if rng.gen::<f64>() < rate { 0.0 } else { scale };
        }
    }

    /// Full-window mask, `[t_fut x hidden]` row-major.
    pub fn sample_mask(&self, rng: &mut Rng) -> Vec<f64> {
        let hd = self.arch.hidden;
        let mut m = vec![0.0; self.arch.t_fut * hd];
        for row in m.chunks_mut(hd) {
            self.sample_step_mask(rng, row);
        }
        m
    }

    /// Normalized `[t_fut x 2]` predictions. With `rng` the decoder hidden
    /// states are dropped out; without it the pass is deterministic.
    pub fn forward(&self, inputs: &WindowInputs<'_>, rng: Option<&mut Rng>) -> Result<Vec<[f64; 2]>> {
        let (h0, c0) = self.encode(inputs)?;
        let hidden = self.decode_hidden(&h0, &c0, &inputs.combined_inputs[self.arch.t_hist..]);
        let mut mask = vec![0.0; self.arch.hidden];
        Ok(match rng {
            Some(rng) => hidden
                .iter()
                .map(|h| {
                    self.sample_step_mask(rng, &mut mask);
                    self.head(h, Some(&mask))
                })
                .collect(),
            None => hidden.iter().map(|h| self.head(h, None)).collect(),
        })
    }

    /// Monte Carlo dropout forecast in score units.
    ///
    /// Dropout only acts between the decoder and the head, so the decoder
    /// trajectory is shared by all passes; each pass draws fresh masks in the
    /// same order as [`forward`](Self::forward) would.
    pub fn predict_mc(&self, inputs: &WindowInputs<'_>, passes: usize, rng: &mut Rng) -> Result<ForecastDistribution> {
        if passes == 0 {
            return Err(Error::Config("MC pass count must be >= 1".into()));
        }
        let (h0, c0) = self.encode(inputs)?;
        let hidden = self.decode_hidden(&h0, &c0, &inputs.combined_inputs[self.arch.t_hist..]);
        Ok(self.mc_from_hidden(&hidden, passes, rng))
    }

    pub(crate) fn mc_from_hidden(&self, hidden: &[Vec<f64>], passes: usize, rng: &mut Rng) -> ForecastDistribution {
        let t_fut = hidden.len();
        if self.arch.dropout == 0.0 || passes == 1 {
            let mut mask = vec![0.0; self.arch.hidden];
            let mu = hidden
                .iter()
                .map(|h| {
                    let y = if self.arch.dropout == 0.0 {
                        self.head(h, None)
                    } else {
                        self.sample_step_mask(rng, &mut mask);
                        self.head(h, Some(&mask))
                    };
                    y.map(|v| self.norm.symptom_inv(v))
                })
                .collect();
            return ForecastDistribution { mu, sigma: vec![[0.0; 2]; t_fut], passes };
        }
        let mut samples = vec![[0.0; 2]; passes * t_fut];
        let mut mask = vec![0.0; self.arch.hidden];
        for m in 0..passes {
            for (t, h) in hidden.iter().enumerate() {
                self.sample_step_mask(rng, &mut mask);
                samples[m * t_fut + t] = self.head(h, Some(&mask)).map(|v| self.norm.symptom_inv(v));
            }
        }
        let n = passes as f64;
        let mut mu = vec![[0.0; 2]; t_fut];
        let mut sigma = vec![[0.0; 2]; t_fut];
        for t in 0..t_fut {
            for ch in 0..2 {
                let mean = (0..passes).map(|m| samples[m * t_fut + t][ch]).sum::<f64>() / n;
                let var = (0..passes)
                    .map(|m| (samples[m * t_fut + t][ch] - mean).powi(2))
                    .sum::<f64>()
                    / n;
                mu[t][ch] = mean;
                sigma[t][ch] = var.sqrt();
            }
        }
        ForecastDistribution { mu, sigma, passes }
    }

    pub(crate) fn trace(
        &self,
        inputs: &WindowInputs<'_>,
        mask: Option<&[f64]>,
        encoded: Option<(&[f64], &[f64])>,
    ) -> Result<Trace> {
        self.check_inputs(inputs)?;
        let l = self.layout();
        let hd = self.arch.hidden;
        let (t_hist, t_fut) = (self.arch.t_hist, self.arch.t_fut);
        if let Some(m) = mask {
            if m.len() != t_fut * hd {
                return Err(Error::shape("dropout mask", t_fut * hd, m.len()));
            }
        }
        let mut enc = Vec::new();
        let mut enc_x = Vec::new();
        let (mut h, mut c) = (vec![0.0; hd], vec![0.0; hd]);
        match encoded {
            Some((h0, c0)) => {
                h.copy_from_slice(h0);
                c.copy_from_slice(c0);
            }
            None => {
                let cell = self.enc_cell(&l);
                enc.reserve(t_hist);
                for t in 0..t_hist {
                    let x = enc_features(inputs, t);
                    let mut cache = StepCache::new(hd);
                    cell.step(&x, &h, &c, &mut cache);
                    h.copy_from_slice(&cache.h);
                    c.copy_from_slice(&cache.c);
                    enc.push(cache);
                    enc_x.push(x);
                }
            }
        }
        let cell = self.dec_cell(&l);
        let mut dec = Vec::with_capacity(t_fut);
        let mut dec_x = Vec::with_capacity(t_fut);
        let mut dropped = Vec::with_capacity(t_fut);
        let mut outputs = Vec::with_capacity(t_fut);
        for t in 0..t_fut {
            let x = inputs.combined_inputs[t_hist + t];
            let mut cache = StepCache::new(hd);
            cell.step(&x, &h, &c, &mut cache);
            h.copy_from_slice(&cache.h);
            c.copy_from_slice(&cache.c);
            let d: Vec<f64> = match mask {
                Some(m) => cache.h.iter().zip(&m[t * hd..(t + 1) * hd]).map(|(a, b)| a * b).collect(),
                None => cache.h.clone(),
            };
            outputs.push(self.head(&d, None));
            dropped.push(d);
            dec.push(cache);
            dec_x.push(x);
        }
        Ok(Trace { enc, dec, enc_x, dec_x, dropped, outputs })
    }

    /// Squared-error sum of one sample, accumulating `scale * dL/dparams`
    /// into `grad`. When `encoded` is given the encoder is treated as frozen
    /// and its gradients are not computed.
    pub(crate) fn accumulate_sample(
        &self,
        sample: &WindowSample,
        mask: Option<&[f64]>,
        encoded: Option<(&[f64], &[f64])>,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        if sample.target.len() != self.arch.t_fut {
            return Err(Error::shape("target", format!("[{} x 2]", self.arch.t_fut), format!("[{} x 2]", sample.target.len())));
        }
        let inputs = sample.inputs();
        let tr = self.trace(&inputs, mask, encoded)?;
        let l = self.layout();
        let hd = self.arch.hidden;
        let t_fut = self.arch.t_fut;
        let head_w = &self.params[l.head_w.clone()];

        let mut sq = 0.0;
        // Gradient w.r.t. each decoder h coming from the head.
        let mut dh_head = vec![vec![0.0; hd]; t_fut];
        {
            let (g_head_w, g_head_b) = split2(grad, &l.head_w, &l.head_b);
            for t in 0..t_fut {
                for o in 0..OUTPUTS {
                    let err = tr.outputs[t][o] - sample.target[t][o];
                    sq += err * err;
                    let dy = 2.0 * err * scale;
                    g_head_b[o] += dy;
                    let row = &head_w[o * hd..(o + 1) * hd];
                    let grow = &mut g_head_w[o * hd..(o + 1) * hd];
                    for j in 0..hd {
                        grow[j] += dy * tr.dropped[t][j];
                        let m = mask.map_or(1.0, |m| m[t * hd + j]);
                        dh_head[t][j] += dy * row[j] * m;
                    }
                }
            }
        }

        let zeros = vec![0.0; hd];
        let mut dh = vec![0.0; hd];
        let mut dc = vec![0.0; hd];
        let mut dh_prev = vec![0.0; hd];
        let mut dz = vec![0.0; 4 * hd];
        let dec_cell = self.dec_cell(&l);
        let (enc_h_final, enc_c_final): (&[f64], &[f64]) = match (encoded, tr.enc.last()) {
            (Some((h, c)), _) => (h, c),
            (None, Some(last)) => (&last.h, &last.c),
            (None, None) => (&zeros, &zeros),
        };
        {
            let (g_w, g_b) = split2(grad, &l.dec_w, &l.dec_b);
            for t in (0..t_fut).rev() {
                for j in 0..hd {
                    dh[j] += dh_head[t][j];
                }
                let (h_prev, c_prev) = if t == 0 {
                    (enc_h_final, enc_c_final)
                } else {
                    (&tr.dec[t - 1].h[..], &tr.dec[t - 1].c[..])
                };
                dec_cell.backward(&tr.dec_x[t], h_prev, c_prev, &tr.dec[t], &dh, &mut dc, g_w, g_b, &mut dh_prev, &mut dz);
                std::mem::swap(&mut dh, &mut dh_prev);
            }
        }
        if encoded.is_none() {
            let enc_cell = self.enc_cell(&l);
            let (g_w, g_b) = split2(grad, &l.enc_w, &l.enc_b);
            for t in (0..self.arch.t_hist).rev() {
                let (h_prev, c_prev) = if t == 0 {
                    (&zeros[..], &zeros[..])
                } else {
                    (&tr.enc[t - 1].h[..], &tr.enc[t - 1].c[..])
                };
                enc_cell.backward(&tr.enc_x[t], h_prev, c_prev, &tr.enc[t], &dh, &mut dc, g_w, g_b, &mut dh_prev, &mut dz);
                std::mem::swap(&mut dh, &mut dh_prev);
            }
        }
        Ok(sq)
    }

    /// Mean squared error over batch, steps and both channels, and its
    /// gradient by backpropagation through time. `masks`, when given, holds
    /// one `[t_fut x hidden]` dropout mask per sample.
    pub fn loss_and_gradients(&self, batch: &[WindowSample], masks: Option<&[Vec<f64>]>) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Config("loss needs a non-empty batch".into()));
        }
        if let Some(m) = masks {
            if m.len() != batch.len() {
                return Err(Error::shape("mask count", batch.len(), m.len()));
            }
        }
        let denom = (batch.len() * self.arch.t_fut * OUTPUTS) as f64;
        let mut grad = vec![0.0; self.params.len()];
        let mut sq = 0.0;
        for (i, s) in batch.iter().enumerate() {
            sq += self.accumulate_sample(s, masks.map(|m| &m[i][..]), None, 1.0 / denom, &mut grad)?;
        }
        let loss = sq / denom;
        if !loss.is_finite() {
            return Err(Error::TrainingDivergence { epoch: 0, loss });
        }
        Ok((loss, grad))
    }

    /// Deterministic mean squared error (normalized units).
    pub fn loss(&self, batch: &[WindowSample]) -> Result<f64> {
        self.loss_with_masks(batch, None)
    }

    /// Mean squared error under fixed per-sample dropout masks.
    pub fn loss_with_masks(&self, batch: &[WindowSample], masks: Option<&[Vec<f64>]>) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Config("loss needs a non-empty batch".into()));
        }
        let mut sq = 0.0;
        for (i, s) in batch.iter().enumerate() {
            let tr = self.trace(&s.inputs(), masks.map(|m| &m[i][..]), None)?;
            sq += tr
                .outputs
                .iter()
                .zip(&s.target)
                .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
                .sum::<f64>();
        }
        Ok(sq / (batch.len() * self.arch.t_fut * OUTPUTS) as f64)
    }
}

fn enc_features(inputs: &WindowInputs<'_>, t: usize) -> [f64; ENC_IN] {
    let s = inputs.hist_symptoms[t];
    let u = inputs.combined_inputs[t];
    [s[0], s[1], u[0], u[1]]
}

/// Two disjoint mutable tensors of the flat gradient, `a` before `b`.
fn split2<'a>(grad: &'a mut [f64], a: &Range<usize>, b: &Range<usize>) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (left, right) = grad.split_at_mut(b.start);
    (&mut left[a.clone()], &mut right[..b.len()])
}
