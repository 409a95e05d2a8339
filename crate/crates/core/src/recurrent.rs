//! LSTM cell and bidirectional LSTM layer with explicit backward-through-time.
//!
//! Standard formulation: gates via the logistic function, cell candidate via
//! tanh, `c_t = f . c_{t-1} + i . g`, `h_t = o . tanh(c_t)`. No peepholes.

use crate::error::{Error, Result};
use crate::rng::{glorot_init, RngState};
use crate::tensor::Matrix;

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Parameters of a single-direction LSTM: per gate (input, forget, cell,
/// output) an input weight `W` (hidden x input), a recurrent weight `U`
/// (hidden x hidden) and a bias.
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub wi: Matrix,
    pub wf: Matrix,
    pub wg: Matrix,
    pub wo: Matrix,
    pub ui: Matrix,
    pub uf: Matrix,
    pub ug: Matrix,
    pub uo: Matrix,
    pub bi: Vec<f64>,
    pub bf: Vec<f64>,
    pub bg: Vec<f64>,
    pub bo: Vec<f64>,
}

impl LstmParams {
    /// Glorot weights, zero biases except the forget-gate bias at 1.0.
    pub fn glorot(rng: &mut RngState, input: usize, hidden: usize) -> Result<Self> {
        Ok(LstmParams {
            wi: glorot_init(rng, input, hidden)?,
            wf: glorot_init(rng, input, hidden)?,
            wg: glorot_init(rng, input, hidden)?,
            wo: glorot_init(rng, input, hidden)?,
            ui: glorot_init(rng, hidden, hidden)?,
            uf: glorot_init(rng, hidden, hidden)?,
            ug: glorot_init(rng, hidden, hidden)?,
            uo: glorot_init(rng, hidden, hidden)?,
            bi: vec![0.0; hidden],
            bf: vec![1.0; hidden],
            bg: vec![0.0; hidden],
            bo: vec![0.0; hidden],
        })
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmParams {
            wi: Matrix::zeros(hidden, input),
            wf: Matrix::zeros(hidden, input),
            wg: Matrix::zeros(hidden, input),
            wo: Matrix::zeros(hidden, input),
            ui: Matrix::zeros(hidden, hidden),
            uf: Matrix::zeros(hidden, hidden),
            ug: Matrix::zeros(hidden, hidden),
            uo: Matrix::zeros(hidden, hidden),
            bi: vec![0.0; hidden],
            bf: vec![0.0; hidden],
            bg: vec![0.0; hidden],
            bo: vec![0.0; hidden],
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.wi.rows()
    }

    pub fn input_size(&self) -> usize {
        self.wi.cols()
    }
}

/// Gate activations and cell states retained by the forward pass.
#[derive(Clone, Debug)]
pub struct LstmCache {
    i: Matrix,
    f: Matrix,
    g: Matrix,
    o: Matrix,
    c: Matrix,
    tanh_c: Matrix,
}

/// Gradients for all 12 parameter blocks.
#[derive(Clone, Debug)]
pub struct LstmGradients {
    pub wi: Matrix,
    pub wf: Matrix,
    pub wg: Matrix,
    pub wo: Matrix,
    pub ui: Matrix,
    pub uf: Matrix,
    pub ug: Matrix,
    pub uo: Matrix,
    pub bi: Vec<f64>,
    pub bf: Vec<f64>,
    pub bg: Vec<f64>,
    pub bo: Vec<f64>,
}

impl LstmGradients {
    fn zeros(input: usize, hidden: usize) -> Self {
        LstmGradients {
            wi: Matrix::zeros(hidden, input),
            wf: Matrix::zeros(hidden, input),
            wg: Matrix::zeros(hidden, input),
            wo: Matrix::zeros(hidden, input),
            ui: Matrix::zeros(hidden, hidden),
            uf: Matrix::zeros(hidden, hidden),
            ug: Matrix::zeros(hidden, hidden),
            uo: Matrix::zeros(hidden, hidden),
            bi: vec![0.0; hidden],
            bf: vec![0.0; hidden],
            bg: vec![0.0; hidden],
            bo: vec![0.0; hidden],
        }
    }
}

/// Runs the recurrence over `x` (T x input) with `h0 = c0 = 0`.
/// Returns the hidden states (T x hidden) and the cache for backward.
pub fn lstm_forward(p: &LstmParams, x: &Matrix) -> Result<(Matrix, LstmCache)> {
    if x.cols() != p.input_size() {
        return Err(Error::Shape {
            op: "lstm_forward",
            left: x.shape(),
            right: p.wi.shape(),
        });
    }
    let t_len = x.rows();
    let hidden = p.hidden_size();
    let mut h = Matrix::zeros(t_len, hidden);
    let mut cache = LstmCache {
        i: Matrix::zeros(t_len, hidden),
        f: Matrix::zeros(t_len, hidden),
        g: Matrix::zeros(t_len, hidden),
        o: Matrix::zeros(t_len, hidden),
        c: Matrix::zeros(t_len, hidden),
        tanh_c: Matrix::zeros(t_len, hidden),
    };
    // Input contributions for all frames at once.
    let zi_x = x.matmul_transpose(&p.wi)?;
    let zf_x = x.matmul_transpose(&p.wf)?;
    let zg_x = x.matmul_transpose(&p.wg)?;
    let zo_x = x.matmul_transpose(&p.wo)?;

    let mut h_prev = vec![0.0; hidden];
    let mut c_prev = vec![0.0; hidden];
    for t in 0..t_len {
        for j in 0..hidden {
            let mut zi = zi_x.get(t, j) + p.bi[j];
            let mut zf = zf_x.get(t, j) + p.bf[j];
            let mut zg = zg_x.get(t, j) + p.bg[j];
            let mut zo = zo_x.get(t, j) + p.bo[j];
            let ui_row = p.ui.row(j);
            let uf_row = p.uf.row(j);
            let ug_row = p.ug.row(j);
            let uo_row = p.uo.row(j);
            for (k, &hp) in h_prev.iter().enumerate() {
                zi += ui_row[k] * hp;
                zf += uf_row[k] * hp;
                zg += ug_row[k] * hp;
                zo += uo_row[k] * hp;
            }
            let iv = sigmoid(zi);
            let fv = sigmoid(zf);
            let gv = zg.tanh();
            let ov = sigmoid(zo);
            let cv = fv * c_prev[j] + iv * gv;
            let tc = cv.tanh();
            cache.i.set(t, j, iv);
            cache.f.set(t, j, fv);
            cache.g.set(t, j, gv);
            cache.o.set(t, j, ov);
            cache.c.set(t, j, cv);
            cache.tanh_c.set(t, j, tc);
            h.set(t, j, ov * tc);
        }
        h_prev.copy_from_slice(h.row(t));
        c_prev.copy_from_slice(cache.c.row(t));
    }
    Ok((h, cache))
}

/// Exact backward-through-time. `x` and `h` must come from the matching
/// forward call; `d_h` is the cotangent of the hidden-state sequence.
pub fn lstm_backward(
    p: &LstmParams,
    x: &Matrix,
    h: &Matrix,
    cache: &LstmCache,
    d_h: &Matrix,
) -> Result<(LstmGradients, Matrix)> {
    if d_h.shape() != h.shape() || x.rows() != h.rows() {
        return Err(Error::Shape {
            op: "lstm_backward",
            left: d_h.shape(),
            right: h.shape(),
        });
    }
    let t_len = x.rows();
    let hidden = p.hidden_size();
    let input = p.input_size();
    let mut grads = LstmGradients::zeros(input, hidden);
    let mut dx = Matrix::zeros(t_len, input);

    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    let mut dzi = vec![0.0; hidden];
    let mut dzf = vec![0.0; hidden];
    let mut dzg = vec![0.0; hidden];
    let mut dzo = vec![0.0; hidden];

    for t in (0..t_len).rev() {
        for j in 0..hidden {
            let dh_total = d_h.get(t, j) + dh_next[j];
            let iv = cache.i.get(t, j);
            let fv = cache.f.get(t, j);
            let gv = cache.g.get(t, j);
            let ov = cache.o.get(t, j);
            let tc = cache.tanh_c.get(t, j);
            let c_prev = if t > 0 { cache.c.get(t - 1, j) } else { 0.0 };

            let d_o = dh_total * tc;
            let dc = dh_total * ov * (1.0 - tc * tc) + dc_next[j];
            let d_i = dc * gv;
            let d_g = dc * iv;
            let d_f = dc * c_prev;
            dc_next[j] = dc * fv;
            dzi[j] = d_i * iv * (1.0 - iv);
            dzf[j] = d_f * fv * (1.0 - fv);
            dzg[j] = d_g * (1.0 - gv * gv);
            dzo[j] = d_o * ov * (1.0 - ov);
        }

        // Parameter gradients: dW += dz (x) x_t, dU += dz (x) h_{t-1}, db += dz.
        let x_row = x.row(t);
        for j in 0..hidden {
            let wi_row = grads.wi.row_mut(j);
            for (w, &xv) in wi_row.iter_mut().zip(x_row) {
                *w += dzi[j] * xv;
            }
        }
        for j in 0..hidden {
            let wf_row = grads.wf.row_mut(j);
            for (w, &xv) in wf_row.iter_mut().zip(x_row) {
                *w += dzf[j] * xv;
            }
        }
        for j in 0..hidden {
            let wg_row = grads.wg.row_mut(j);
            for (w, &xv) in wg_row.iter_mut().zip(x_row) {
                *w += dzg[j] * xv;
            }
        }
        for j in 0..hidden {
            let wo_row = grads.wo.row_mut(j);
            for (w, &xv) in wo_row.iter_mut().zip(x_row) {
                *w += dzo[j] * xv;
            }
        }
        if t > 0 {
            let h_prev = h.row(t - 1);
            for j in 0..hidden {
                let ui_row = grads.ui.row_mut(j);
                for (u, &hv) in ui_row.iter_mut().zip(h_prev) {
                    *u += dzi[j] * hv;
                }
            }
            for j in 0..hidden {
                let uf_row = grads.uf.row_mut(j);
                for (u, &hv) in uf_row.iter_mut().zip(h_prev) {
                    *u += dzf[j] * hv;
                }
            }
            for j in 0..hidden {
                let ug_row = grads.ug.row_mut(j);
                for (u, &hv) in ug_row.iter_mut().zip(h_prev) {
                    *u += dzg[j] * hv;
                }
            }
            for j in 0..hidden {
                let uo_row = grads.uo.row_mut(j);
                for (u, &hv) in uo_row.iter_mut().zip(h_prev) {
                    *u += dzo[j] * hv;
                }
            }
        }
        for j in 0..hidden {
            grads.bi[j] += dzi[j];
            grads.bf[j] += dzf[j];
            grads.bg[j] += dzg[j];
            grads.bo[j] += dzo[j];
        }

        // dX_t = W^T dz ; dh_{t-1} = U^T dz.
        let dx_row = dx.row_mut(t);
        for j in 0..hidden {
            let wi_row = p.wi.row(j);
            let wf_row = p.wf.row(j);
            let wg_row = p.wg.row(j);
            let wo_row = p.wo.row(j);
            for k in 0..input {
                dx_row[k] += wi_row[k] * dzi[j]
                    + wf_row[k] * dzf[j]
                    + wg_row[k] * dzg[j]
                    + wo_row[k] * dzo[j];
            }
        }
        for v in dh_next.iter_mut() {
            *v = 0.0;
        }
        for j in 0..hidden {
            let ui_row = p.ui.row(j);
            let uf_row = p.uf.row(j);
            let ug_row = p.ug.row(j);
            let uo_row = p.uo.row(j);
            for k in 0..hidden {
                dh_next[k] += ui_row[k] * dzi[j]
                    + uf_row[k] * dzf[j]
                    + ug_row[k] * dzg[j]
                    + uo_row[k] * dzo[j];
            }
        }
    }
    Ok((grads, dx))
}

/// Bidirectional LSTM: a forward-time and a backward-time cell whose hidden
/// states are concatenated per frame.
#[derive(Clone, Debug)]
pub struct BlstmParams {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl BlstmParams {
    pub fn glorot(rng: &mut RngState, input: usize, hidden: usize) -> Result<Self> {
        Ok(BlstmParams {
            fwd: LstmParams::glorot(rng, input, hidden)?,
            bwd: LstmParams::glorot(rng, input, hidden)?,
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.fwd.hidden_size()
    }

    pub fn input_size(&self) -> usize {
        self.fwd.input_size()
    }

    /// Output dimension: `2 * hidden`.
    pub fn out_dim(&self) -> usize {
        2 * self.hidden_size()
    }
}

#[derive(Clone, Debug)]
pub struct BlstmCache {
    h_fwd: Matrix,
    h_bwd: Matrix, // hidden states over the time-reversed input
    fwd: LstmCache,
    bwd: LstmCache,
    x_rev: Matrix,
}

pub type BlstmGradients = (LstmGradients, LstmGradients);

/// Per-frame `[h_fwd(t) | h_bwd(t)]` where the backward cell runs over the
/// reversed sequence and its outputs are re-reversed. Output is T x 2*hidden.
pub fn blstm_forward(p: &BlstmParams, x: &Matrix) -> Result<(Matrix, BlstmCache)> {
    let (h_fwd, fwd_cache) = lstm_forward(&p.fwd, x)?;
    let x_rev = x.reverse_rows();
    let (h_bwd, bwd_cache) = lstm_forward(&p.bwd, &x_rev)?;
    let out = h_fwd.hcat(&h_bwd.reverse_rows())?;
    Ok((
        out,
        BlstmCache {
            h_fwd,
            h_bwd,
            fwd: fwd_cache,
            bwd: bwd_cache,
            x_rev,
        },
    ))
}

/// Backward pass of [`blstm_forward`].
pub fn blstm_backward(
    p: &BlstmParams,
    x: &Matrix,
    cache: &BlstmCache,
    d_out: &Matrix,
) -> Result<(BlstmGradients, Matrix)> {
    let hidden = p.hidden_size();
    if d_out.cols() != 2 * hidden || d_out.rows() != x.rows() {
        return Err(Error::Shape {
            op: "blstm_backward",
            left: d_out.shape(),
            right: (x.rows(), 2 * hidden),
        });
    }
    let d_fwd = d_out.col_slice(0, hidden)?;
    let d_bwd = d_out.col_slice(hidden, hidden)?.reverse_rows();
    let (g_fwd, dx_fwd) = lstm_backward(&p.fwd, x, &cache.h_fwd, &cache.fwd, &d_fwd)?;
    let (g_bwd, dx_bwd) = lstm_backward(&p.bwd, &cache.x_rev, &cache.h_bwd, &cache.bwd, &d_bwd)?;
    let mut dx = dx_fwd;
    dx.add_scaled(&dx_bwd.reverse_rows(), 1.0)?;
    Ok(((g_fwd, g_bwd), dx))
}
