//! Single LSTM cell over flat row-major weight slices.
//!
//! Weights are `[4H x (I + H)]` with gate blocks ordered input, forget,
//! candidate, output; each row holds the input columns followed by the
//! recurrent columns.

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Activations of one step, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    /// Activated gates `[i, f, g, o]`, each of length H.
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl StepCache {
    pub fn new(hidden: usize) -> Self {
        StepCache {
            gates: vec![0.0; 4 * hidden],
            c: vec![0.0; hidden],
            tanh_c: vec![0.0; hidden],
            h: vec![0.0; hidden],
        }
    }
}

pub(crate) struct CellRef<'a> {
    pub w: &'a [f64],
    pub b: &'a [f64],
    pub n_in: usize,
    pub hidden: usize,
}

impl CellRef<'_> {
    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64], out: &mut StepCache) {
        let (n_in, hd) = (self.n_in, self.hidden);
        let cols = n_in + hd;
        debug_assert_eq!(x.len(), n_in);
        for r in 0..4 * hd {
            let row = &self.w[r * cols..(r + 1) * cols];
            let z = self.b[r] + dot(&row[..n_in], x) + dot(&row[n_in..], h_prev);
            out.gates[r] = if r / hd == 2 { z.tanh() } else { sigmoid(z) };
        }
        for j in 0..hd {
            let (i, f, g, o) = (
                out.gates[j],
                out.gates[hd + j],
                out.gates[2 * hd + j],
                out.gates[3 * hd + j],
            );
            let c = f * c_prev[j] + i * g;
            let tc = c.tanh();
            out.c[j] = c;
            out.tanh_c[j] = tc;
            out.h[j] = o * tc;
        }
    }

    /// Backward through one step.
    ///
    /// `dh` is the total gradient w.r.t. this step's `h`; `dc` holds the
    /// gradient w.r.t. this step's `c` on entry and w.r.t. `c_prev` on exit.
    /// Weight and bias gradients are accumulated; `dh_prev` is overwritten.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
        cache: &StepCache,
        dh: &[f64],
        dc: &mut [f64],
        dw: &mut [f64],
        db: &mut [f64],
        dh_prev: &mut [f64],
        dz: &mut [f64],
    ) {
        let (n_in, hd) = (self.n_in, self.hidden);
        let cols = n_in + hd;
        for j in 0..hd {
            let (i, f, g, o) = (
                cache.gates[j],
                cache.gates[hd + j],
                cache.gates[2 * hd + j],
                cache.gates[3 * hd + j],
            );
            let tc = cache.tanh_c[j];
            let d_o = dh[j] * tc;
            let dcj = dc[j] + dh[j] * o * (1.0 - tc * tc);
            dz[j] = dcj * g * i * (1.0 - i);
            dz[hd + j] = dcj * c_prev[j] * f * (1.0 - f);
            dz[2 * hd + j] = dcj * i * (1.0 - g * g);
            dz[3 * hd + j] = d_o * o * (1.0 - o);
            dc[j] = dcj * f;
        }
        dh_prev.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..4 * hd {
            let d = dz[r];
            if d == 0.0 {
                continue;
            }
            db[r] += d;
            let row_w = &self.w[r * cols..(r + 1) * cols];
            let row_dw = &mut dw[r * cols..(r + 1) * cols];
            for (k, &xv) in x.iter().enumerate() {
                row_dw[k] += d * xv;
            }
            for k in 0..hd {
                row_dw[n_in + k] += d * h_prev[k];
                dh_prev[k] += d * row_w[n_in + k];
            }
        }
    }
}
