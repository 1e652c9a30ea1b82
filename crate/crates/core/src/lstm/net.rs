//! Parameter layout, forward pass and backpropagation through time.
//!
//! Parameters live in one flat vector. Layer `l` with input width `n` and
//! `h` units stores the input kernel `W` (`4h x n`), the recurrent kernel
//! `U` (`4h x h`) and the bias `b` (`4h`), all row-major with gate blocks
//! in the order input, forget, candidate, output. The dense head follows
//! (`h_last` weights, one bias).

use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::math::{axpy, dot, sigmoid, tanh};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub n_in: usize,
    pub hidden: usize,
    pub w: usize,
    pub u: usize,
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub layers: Vec<LayerShape>,
    pub dense_w: usize,
    pub dense_b: usize,
    pub total: usize,
    pub window: usize,
    pub input_dim: usize,
}

impl Layout {
    pub fn new(input_dim: usize, hidden: &[usize], window: usize) -> Self {
        let mut off = 0;
        let mut n_in = input_dim;
        let mut layers = Vec::with_capacity(hidden.len());
        for &h in hidden {
            let w = off;
            let u = w + 4 * h * n_in;
            let b = u + 4 * h * h;
            off = b + 4 * h;
            layers.push(LayerShape { n_in, hidden: h, w, u, b });
            n_in = h;
        }
        let dense_w = off;
        let dense_b = dense_w + n_in;
        Self {
            layers,
            dense_w,
            dense_b,
            total: dense_b + 1,
            window,
            input_dim,
        }
    }

    pub fn last_hidden(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.hidden)
    }

    /// Whether parameter `i` is a kernel weight (penalised by L2) rather
    /// than a bias.
    pub fn is_kernel(&self, i: usize) -> bool {
        if i >= self.dense_w {
            return i < self.dense_b;
        }
        self.layers.iter().any(|l| i >= l.w && i < l.b)
    }

    pub fn kernel_mask(&self) -> Vec<bool> {
        (0..self.total).map(|i| self.is_kernel(i)).collect()
    }
}

fn uniform(rng: &mut impl Rng, limit: f64) -> f64 {
    rng.random_range(-limit..limit)
}

/// Orthonormal `n x n` matrix (row-major) by Gram-Schmidt on a Gaussian
/// draw.
fn orthogonal(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    loop {
        let mut m: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(rng)).collect();
        let mut ok = true;
        for i in 0..n {
            for j in 0..i {
                let (head, tail) = m.split_at_mut(i * n);
                let prev = &head[j * n..(j + 1) * n];
                let row = &mut tail[..n];
                let p = dot(prev, row);
                axpy(-p, prev, row);
            }
            let row = &mut m[i * n..(i + 1) * n];
            let norm = libm::sqrt(dot(row, row));
            if norm < 1e-8 {
                ok = false;
                break;
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        if ok {
            return m;
        }
    }
}

pub fn init_params(layout: &Layout, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, &[rng::INIT]);
    let mut p = vec![0.0; layout.total];
    for l in &layout.layers {
        let h = l.hidden;
        let limit = libm::sqrt(6.0 / (l.n_in + 4 * h) as f64);
        for v in &mut p[l.w..l.u] {
            *v = uniform(&mut r, limit);
        }
        for gate in 0..4 {
            let q = orthogonal(&mut r, h);
            for row in 0..h {
                let dst = l.u + (gate * h + row) * h;
                p[dst..dst + h].copy_from_slice(&q[row * h..(row + 1) * h]);
            }
        }
        for v in &mut p[l.b + h..l.b + 2 * h] {
            *v = 1.0;
        }
    }
    let limit = libm::sqrt(6.0 / (layout.last_hidden() + 1) as f64);
    for v in &mut p[layout.dense_w..layout.dense_b] {
        *v = uniform(&mut r, limit);
    }
    p
}

/// Inverted recurrent dropout masks, one per layer, fixed over the window.
pub fn dropout_masks(layout: &Layout, p: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, &[rng::DROPOUT]);
    let keep = 1.0 - p;
    layout
        .layers
        .iter()
        .map(|l| {
            (0..l.hidden)
                .map(|_| if p == 0.0 || r.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect()
        })
        .collect()
}

/// Activations of one layer over the window.
struct LayerCache {
    /// `[t][4h]` post-activation gates.
    gates: Vec<f64>,
    /// `[t][h]`
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

fn layer_forward(l: &LayerShape, params: &[f64], input: &[f64], window: usize, mask: Option<&[f64]>) -> LayerCache {
    let h = l.hidden;
    let g4 = 4 * h;
    let mut cache = LayerCache {
        gates: vec![0.0; window * g4],
        c: vec![0.0; window * h],
        tanh_c: vec![0.0; window * h],
        h: vec![0.0; window * h],
    };
    let w = &params[l.w..l.u];
    let u = &params[l.u..l.b];
    let b = &params[l.b..l.b + g4];
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    let mut z = vec![0.0; g4];
    for t in 0..window {
        let x = &input[t * l.n_in..(t + 1) * l.n_in];
        if let Some(m) = mask {
            for k in 0..h {
                h_prev[k] *= m[k];
            }
        }
        for r in 0..g4 {
            z[r] = b[r] + dot(&w[r * l.n_in..(r + 1) * l.n_in], x) + dot(&u[r * h..(r + 1) * h], &h_prev);
        }
        let gates = &mut cache.gates[t * g4..(t + 1) * g4];
        for k in 0..h {
            gates[k] = sigmoid(z[k]);
            gates[h + k] = sigmoid(z[h + k]);
            gates[2 * h + k] = tanh(z[2 * h + k]);
            gates[3 * h + k] = sigmoid(z[3 * h + k]);
        }
        for k in 0..h {
            let c = gates[h + k] * c_prev[k] + gates[k] * gates[2 * h + k];
            let tc = tanh(c);
            cache.c[t * h + k] = c;
            cache.tanh_c[t * h + k] = tc;
            cache.h[t * h + k] = gates[3 * h + k] * tc;
        }
        c_prev.copy_from_slice(&cache.c[t * h..(t + 1) * h]);
        h_prev.copy_from_slice(&cache.h[t * h..(t + 1) * h]);
    }
    cache
}

fn forward_cached(layout: &Layout, params: &[f64], x: &[f64], masks: Option<&[Vec<f64>]>) -> (Vec<LayerCache>, f64) {
    let mut caches: Vec<LayerCache> = Vec::with_capacity(layout.layers.len());
    for (li, l) in layout.layers.iter().enumerate() {
        let input = if li == 0 { x } else { &caches[li - 1].h[..] };
        let mask = masks.map(|m| m[li].as_slice());
        let cache = layer_forward(l, params, input, layout.window, mask);
        caches.push(cache);
    }
    let hl = layout.last_hidden();
    let last = &caches.last().expect("at least one layer").h;
    let h_t = &last[(layout.window - 1) * hl..layout.window * hl];
    let y = params[layout.dense_b] + dot(&params[layout.dense_w..layout.dense_b], h_t);
    (caches, y)
}

/// Scalar output for one standardised window.
pub fn forward(layout: &Layout, params: &[f64], x: &[f64], masks: Option<&[Vec<f64>]>) -> f64 {
    forward_cached(layout, params, x, masks).1
}

/// Accumulates `scale * d(output)/d(params)` into `grad` for one window.
fn backward(
    layout: &Layout,
    params: &[f64],
    x: &[f64],
    masks: Option<&[Vec<f64>]>,
    caches: &[LayerCache],
    scale: f64,
    grad: &mut [f64],
) {
    let window = layout.window;
    let hl = layout.last_hidden();
    let last = &caches[caches.len() - 1].h;
    let h_t = &last[(window - 1) * hl..window * hl];
    grad[layout.dense_b] += scale;
    axpy(scale, h_t, &mut grad[layout.dense_w..layout.dense_b]);

    // Gradient flowing into each layer's outputs, [t][h].
    let mut dh_above = vec![0.0; window * hl];
    axpy(scale, &params[layout.dense_w..layout.dense_b], &mut dh_above[(window - 1) * hl..]);

    for li in (0..layout.layers.len()).rev() {
        let l = &layout.layers[li];
        let h = l.hidden;
        let g4 = 4 * h;
        let cache = &caches[li];
        let input: &[f64] = if li == 0 { x } else { &caches[li - 1].h };
        let mask = masks.map(|m| m[li].as_slice());
        let need_dx = li > 0;
        let mut dx = if need_dx { vec![0.0; window * l.n_in] } else { Vec::new() };
        let mut dh_rec = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dz = vec![0.0; g4];
        let mut h_prev_masked = vec![0.0; h];
        for t in (0..window).rev() {
            let gates = &cache.gates[t * g4..(t + 1) * g4];
            for k in 0..h {
                let dh = dh_above[t * h + k] + dh_rec[k];
                let (i, f, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
                let tc = cache.tanh_c[t * h + k];
                let c_prev = if t > 0 { cache.c[(t - 1) * h + k] } else { 0.0 };
                let d_o = dh * tc;
                let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                dz[k] = dc * g * i * (1.0 - i);
                dz[h + k] = dc * c_prev * f * (1.0 - f);
                dz[2 * h + k] = dc * i * (1.0 - g * g);
                dz[3 * h + k] = d_o * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            if t > 0 {
                h_prev_masked.copy_from_slice(&cache.h[(t - 1) * h..t * h]);
                if let Some(m) = mask {
                    for k in 0..h {
                        h_prev_masked[k] *= m[k];
                    }
                }
            } else {
                h_prev_masked.iter_mut().for_each(|v| *v = 0.0);
            }
            let x_t = &input[t * l.n_in..(t + 1) * l.n_in];
            dh_rec.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..g4 {
                let d = dz[r];
                if d == 0.0 {
                    continue;
                }
                grad[l.b + r] += d;
                axpy(d, x_t, &mut grad[l.w + r * l.n_in..l.w + (r + 1) * l.n_in]);
                axpy(d, &h_prev_masked, &mut grad[l.u + r * h..l.u + (r + 1) * h]);
                axpy(d, &params[l.u + r * h..l.u + (r + 1) * h], &mut dh_rec);
                if need_dx {
                    axpy(d, &params[l.w + r * l.n_in..l.w + (r + 1) * l.n_in], &mut dx[t * l.n_in..(t + 1) * l.n_in]);
                }
            }
            if let Some(m) = mask {
                for k in 0..h {
                    dh_rec[k] *= m[k];
                }
            }
        }
        if need_dx {
            dh_above = dx;
        }
    }
}

/// Flat gradient plus the loss it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    pub mse: f64,
    pub grad: Vec<f64>,
}

/// Loss `mean (y - t)^2 + l2 * sum(kernel^2)` over a batch of standardised
/// windows and its gradient. `masks[i]` is the dropout mask set of sample
/// `i` (training mode) or `None`.
pub fn batch_gradients(
    layout: &Layout,
    params: &[f64],
    windows: &[&[f64]],
    targets: &[f64],
    masks: Option<&[Vec<Vec<f64>>]>,
    l2: f64,
) -> Gradients {
    let n = windows.len() as f64;
    let mut grad = vec![0.0; layout.total];
    let mut sse = 0.0;
    for (i, (x, &t)) in windows.iter().zip(targets).enumerate() {
        let m = masks.map(|m| m[i].as_slice());
        let (caches, y) = forward_cached(layout, params, x, m);
        let r = y - t;
        sse += r * r;
        backward(layout, params, x, m, &caches, 2.0 * r / n, &mut grad);
    }
    let mse = sse / n;
    let mut penalty = 0.0;
    if l2 > 0.0 {
        for (i, g) in grad.iter_mut().enumerate() {
            if layout.is_kernel(i) {
                penalty += params[i] * params[i];
                *g += 2.0 * l2 * params[i];
            }
        }
    }
    Gradients {
        loss: mse + l2 * penalty,
        mse,
        grad,
    }
}

/// Loss only, for finite-difference checks.
pub fn batch_loss(
    layout: &Layout,
    params: &[f64],
    windows: &[&[f64]],
    targets: &[f64],
    masks: Option<&[Vec<Vec<f64>>]>,
    l2: f64,
) -> f64 {
    let n = windows.len() as f64;
    let mut sse = 0.0;
    for (i, (x, &t)) in windows.iter().zip(targets).enumerate() {
        let y = forward(layout, params, x, masks.map(|m| m[i].as_slice()));
        sse += (y - t) * (y - t);
    }
    let penalty: f64 = (0..layout.total)
        .filter(|&i| layout.is_kernel(i))
        .map(|i| params[i] * params[i])
        .sum();
    sse / n + l2 * penalty
}
