//! The gated recurrent cell used by both encoder and decoder.
//!
//! Gate pre-activations are stacked as `[input | forget | output | candidate]`:
//! `z = W x + U h + b`, `i = σ(z_i)`, `f = σ(z_f)`, `o = σ(z_o)`,
//! `g = tanh(z_g)`, `c' = f ⊙ c + i ⊙ g`, `h' = o ⊙ tanh(c')`.

use rand::Rng;

use super::tensor::{add_assign, sigmoid, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `4H × input`
    pub w: Matrix,
    /// `4H × H`
    pub u: Matrix,
    /// `4H`
    pub b: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmParams { w: Matrix::zeros(4 * hidden, input), u: Matrix::zeros(4 * hidden, hidden), b: vec![0.0; 4 * hidden] }
    }

    pub fn uniform<R: Rng>(input: usize, hidden: usize, range: f64, rng: &mut R) -> Self {
        LstmParams {
            w: Matrix::uniform(4 * hidden, input, range, rng),
            u: Matrix::uniform(4 * hidden, hidden, range, rng),
            b: (0..4 * hidden).map(|_| rng.gen_range(-range..=range)).collect(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.cols
    }

    pub fn input(&self) -> usize {
        self.w.cols
    }
}

/// Everything one forward step needs to be differentiated.
#[derive(Debug, Clone)]
pub struct CellCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn lstm_step(p: &LstmParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> CellCache {
    let hn = p.hidden();
    let mut z = p.b.clone();
    p.w.mul_vec_add(x, &mut z);
    p.u.mul_vec_add(h_prev, &mut z);
    let i: Vec<f64> = z[..hn].iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<f64> = z[hn..2 * hn].iter().map(|&v| sigmoid(v)).collect();
    let o: Vec<f64> = z[2 * hn..3 * hn].iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<f64> = z[3 * hn..].iter().map(|&v| v.tanh()).collect();
    let c: Vec<f64> = (0..hn).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = (0..hn).map(|k| o[k] * tanh_c[k]).collect();
    CellCache { x: x.to_vec(), h_prev: h_prev.to_vec(), c_prev: c_prev.to_vec(), i, f, o, g, tanh_c, c, h }
}

/// One cell step with dimension checks: returns `(h', c')`.
pub fn recurrent_cell(x: &[f64], h: &[f64], c: &[f64], params: &LstmParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let hn = params.hidden();
    if params.w.rows != 4 * hn || params.u.rows != 4 * hn || params.b.len() != 4 * hn {
        return Err(Error::Shape("cell parameters are not 4H-stacked".into()));
    }
    if x.len() != params.input() || h.len() != hn || c.len() != hn {
        return Err(Error::Shape(format!(
            "cell expects x:{} h:{hn} c:{hn}, got x:{} h:{} c:{}",
            params.input(),
            x.len(),
            h.len(),
            c.len()
        )));
    }
    let cache = lstm_step(params, x, h, c);
    Ok((cache.h, cache.c))
}

/// Backpropagates `dh`, `dc` (gradients w.r.t. this step's outputs) through
/// one step. Parameter gradients are accumulated into `grad`; returns
/// `(dx, dh_prev, dc_prev)`.
pub fn lstm_step_backward(
    p: &LstmParams,
    grad: &mut LstmParams,
    cache: &CellCache,
    dh: &[f64],
    dc: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hn = p.hidden();
    let mut dz = vec![0.0; 4 * hn];
    let mut dc_prev = vec![0.0; hn];
    for k in 0..hn {
        let (i, f, o, g, t) = (cache.i[k], cache.f[k], cache.o[k], cache.g[k], cache.tanh_c[k]);
        let d_o = dh[k] * t;
        let dc_total = dc[k] + dh[k] * o * (1.0 - t * t);
        dz[k] = dc_total * g * i * (1.0 - i);
        dz[hn + k] = dc_total * cache.c_prev[k] * f * (1.0 - f);
        dz[2 * hn + k] = d_o * o * (1.0 - o);
        dz[3 * hn + k] = dc_total * i * (1.0 - g * g);
        dc_prev[k] = dc_total * f;
    }
    grad.w.add_outer(&dz, &cache.x);
    grad.u.add_outer(&dz, &cache.h_prev);
    add_assign(&mut grad.b, &dz);
    let mut dx = vec![0.0; p.input()];
    p.w.tmul_vec_add(&dz, &mut dx);
    let mut dh_prev = vec![0.0; hn];
    p.u.tmul_vec_add(&dz, &mut dh_prev);
    (dx, dh_prev, dc_prev)
}

/// Runs a cell over `xs` from the given initial state.
pub fn lstm_forward_seq(p: &LstmParams, xs: &[Vec<f64>], h0: &[f64], c0: &[f64]) -> Vec<CellCache> {
    let mut caches: Vec<CellCache> = Vec::with_capacity(xs.len());
    for x in xs {
        let cache = match caches.last() {
            Some(prev) => lstm_step(p, x, &prev.h, &prev.c),
            None => lstm_step(p, x, h0, c0),
        };
        caches.push(cache);
    }
    caches
}

/// Backpropagation through time. `ext_dh[t]` is the gradient flowing into
/// step `t`'s output from outside the recurrence; `dh_last`/`dc_last` flow
/// into the final state. Returns per-step input gradients and the gradients
/// of the initial state.
pub fn lstm_backward_seq(
    p: &LstmParams,
    grad: &mut LstmParams,
    caches: &[CellCache],
    ext_dh: &[Vec<f64>],
    dh_last: Vec<f64>,
    dc_last: Vec<f64>,
) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let mut dh = dh_last;
    let mut dc = dc_last;
    let mut dxs = vec![Vec::new(); caches.len()];
    for t in (0..caches.len()).rev() {
        add_assign(&mut dh, &ext_dh[t]);
        let (dx, dh_prev, dc_prev) = lstm_step_backward(p, grad, &caches[t], &dh, &dc);
        dxs[t] = dx;
        dh = dh_prev;
        dc = dc_prev;
    }
    (dxs, dh, dc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_parameters_give_zero_output() {
        let p = LstmParams::zeros(3, 4);
        let (h, c) = recurrent_cell(&[1.0, -2.0, 0.5], &[0.3; 4], &[0.0; 4], &p).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
        assert!(c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_cell_matches_hand_evaluation() {
        // One unit, one input: W = [0.5, -0.5, 1.0, 2.0], U = [0.1, 0.2, 0.3, 0.4], b = 0.
        let p = LstmParams {
            w: Matrix { rows: 4, cols: 1, data: vec![0.5, -0.5, 1.0, 2.0] },
            u: Matrix { rows: 4, cols: 1, data: vec![0.1, 0.2, 0.3, 0.4] },
            b: vec![0.0; 4],
        };
        let (x, h, c) = (1.0f64, 0.5f64, 0.25f64);
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = s(0.5 * x + 0.1 * h);
        let f = s(-0.5 * x + 0.2 * h);
        let o = s(1.0 * x + 0.3 * h);
        let g = (2.0 * x + 0.4 * h).tanh();
        let c_new = f * c + i * g;
        let h_new = o * c_new.tanh();
        let (hh, cc) = recurrent_cell(&[x], &[h], &[c], &p).unwrap();
        assert!((hh[0] - h_new).abs() < 1e-15);
        assert!((cc[0] - c_new).abs() < 1e-15);
    }

    #[test]
    fn shape_errors() {
        let p = LstmParams::zeros(3, 4);
        assert!(matches!(recurrent_cell(&[1.0; 2], &[0.0; 4], &[0.0; 4], &p), Err(Error::Shape(_))));
        assert!(matches!(recurrent_cell(&[1.0; 3], &[0.0; 5], &[0.0; 4], &p), Err(Error::Shape(_))));
    }
}
