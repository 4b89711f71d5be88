//! Shared-trunk policy/value network with hand-written reverse-mode gradients.
//!
//! Layout is HWC throughout. Convolutions use no padding and ReLU; the trunk
//! ends in one dense ReLU layer (the penultimate features) feeding a policy
//! head (logits) and a scalar value head. All parameters live in one flat
//! vector so optimizers, finite-difference checks and checkpoints treat the
//! network uniformly.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetArch {
    pub input_size: usize,
    pub input_channels: usize,
    pub convs: Vec<ConvSpec>,
    pub hidden: usize,
    pub num_actions: usize,
}

impl NetArch {
    /// Three-layer convolutional trunk sized for 64×64 frames.
    pub fn desk(input_size: usize, num_actions: usize) -> Self {
        Self {
            input_size,
            input_channels: 3,
            convs: vec![
                ConvSpec { channels: 16, kernel: 8, stride: 4 },
                ConvSpec { channels: 32, kernel: 4, stride: 2 },
                ConvSpec { channels: 32, kernel: 3, stride: 1 },
            ],
            hidden: 256,
            num_actions,
        }
    }

    pub fn num_params(&self) -> Result<usize> {
        Ok(Layout::new(self)?.total)
    }

    pub fn input_len(&self) -> usize {
        self.input_size * self.input_size * self.input_channels
    }
}

#[derive(Clone, Debug)]
struct ConvGeom {
    in_size: usize,
    in_ch: usize,
    out_size: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    /// Patch length `kernel² · in_ch`.
    patch: usize,
    w: usize,
    b: usize,
}

impl ConvGeom {
    fn positions(&self) -> usize {
        self.out_size * self.out_size
    }
}

#[derive(Clone, Debug)]
struct DenseGeom {
    inp: usize,
    out: usize,
    w: usize,
    b: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    convs: Vec<ConvGeom>,
    dense: DenseGeom,
    policy: DenseGeom,
    value: DenseGeom,
    total: usize,
}

impl Layout {
    fn new(arch: &NetArch) -> Result<Self> {
        if arch.input_size == 0 || arch.input_channels == 0 || arch.hidden == 0 || arch.num_actions == 0 {
            bail!(Config, "network dimensions must be positive: {arch:?}");
        }
        let mut offset = 0;
        let mut size = arch.input_size;
        let mut ch = arch.input_channels;
        let mut convs = Vec::with_capacity(arch.convs.len());
        for (i, spec) in arch.convs.iter().enumerate() {
            if spec.kernel == 0 || spec.stride == 0 || spec.channels == 0 || spec.kernel > size {
                bail!(Config, "conv layer {i} ({spec:?}) does not fit a {size}x{size} input");
            }
            let out_size = (size - spec.kernel) / spec.stride + 1;
            let patch = spec.kernel * spec.kernel * ch;
            let w = offset;
            let b = w + spec.channels * patch;
            offset = b + spec.channels;
            convs.push(ConvGeom {
                in_size: size,
                in_ch: ch,
                out_size,
                out_ch: spec.channels,
                kernel: spec.kernel,
                stride: spec.stride,
                patch,
                w,
                b,
            });
            size = out_size;
            ch = spec.channels;
        }
        let mut dense_layer = |inp: usize, out: usize| {
            let w = offset;
            let b = w + inp * out;
            offset = b + out;
            DenseGeom { inp, out, w, b }
        };
        let dense = dense_layer(size * size * ch, arch.hidden);
        let policy = dense_layer(arch.hidden, arch.num_actions);
        let value = dense_layer(arch.hidden, 1);
        Ok(Self { convs, dense, policy, value, total: offset })
    }
}

#[derive(Clone, Debug)]
pub struct PolicyValueNet<S> {
    arch: NetArch,
    layout: Layout,
    params: Vec<S>,
}

/// Outputs of a batched forward pass plus the activations needed for
/// [`PolicyValueNet::backward`].
#[derive(Clone, Debug)]
pub struct ForwardPass<S> {
    pub batch: usize,
    /// `batch × num_actions`
    pub logits: Vec<S>,
    pub values: Vec<S>,
    /// Penultimate-layer features, `batch × hidden`.
    pub features: Vec<S>,
    cols: Vec<Vec<S>>,
    acts: Vec<Vec<S>>,
}

fn relu_in_place<S: Scalar>(v: &mut [S]) {
    for x in v.iter_mut() {
        if !(*x > S::ZERO) {
            *x = S::ZERO;
        }
    }
}

fn relu_mask<S: Scalar>(grad: &mut [S], act: &[S]) {
    for (g, &a) in grad.iter_mut().zip(act) {
        if !(a > S::ZERO) {
            *g = S::ZERO;
        }
    }
}

impl<S: Scalar> PolicyValueNet<S> {
    /// He-initialised trunk, near-uniform policy head, unit-gain value head.
    pub fn new(arch: NetArch, seed: u64) -> Result<Self> {
        let layout = Layout::new(&arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![S::ZERO; layout.total];
        let mut fill = |start: usize, len: usize, fan_in: usize, gain: f64, rng: &mut ChaCha8Rng| {
            let std = gain / libm::sqrt(fan_in as f64);
            for p in &mut params[start..start + len] {
                let z: f64 = StandardNormal.sample(rng);
                *p = S::from_f64(z * std);
            }
        };
        let relu_gain = libm::sqrt(2.0);
        for c in &layout.convs {
            fill(c.w, c.out_ch * c.patch, c.patch, relu_gain, &mut rng);
        }
        let d = &layout.dense;
        fill(d.w, d.inp * d.out, d.inp, relu_gain, &mut rng);
        let p = &layout.policy;
        fill(p.w, p.inp * p.out, p.inp, 0.01, &mut rng);
        let v = &layout.value;
        fill(v.w, v.inp * v.out, v.inp, 1.0, &mut rng);
        Ok(Self { arch, layout, params })
    }

    pub fn from_params(arch: NetArch, params: Vec<S>) -> Result<Self> {
        let layout = Layout::new(&arch)?;
        if params.len() != layout.total {
            bail!(Input, "network expects {} parameters, got {}", layout.total, params.len());
        }
        Ok(Self { arch, layout, params })
    }

    pub fn cast<T: Scalar>(&self) -> PolicyValueNet<T> {
        PolicyValueNet {
            arch: self.arch.clone(),
            layout: self.layout.clone(),
            params: crate::scalar::cast_slice(&self.params),
        }
    }

    pub fn arch(&self) -> &NetArch {
        &self.arch
    }

    pub fn params(&self) -> &[S] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [S] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn num_actions(&self) -> usize {
        self.arch.num_actions
    }

    pub fn input_len(&self) -> usize {
        self.arch.input_len()
    }

    pub fn zero_grads(&self) -> Vec<S> {
        vec![S::ZERO; self.params.len()]
    }

    /// Batched forward pass over `input` (`batch × input_len`, unit interval).
    pub fn forward(&self, input: &[S], batch: usize) -> Result<ForwardPass<S>> {
        if batch == 0 || input.len() != batch * self.input_len() {
            bail!(
                Input,
                "forward expects {batch} inputs of {} values, got {}",
                self.input_len(),
                input.len()
            );
        }
        let p = &self.params;
        let mut cols_all = Vec::with_capacity(self.layout.convs.len());
        let mut acts: Vec<Vec<S>> = Vec::with_capacity(self.layout.convs.len());
        for (li, g) in self.layout.convs.iter().enumerate() {
            let src: &[S] = if li == 0 { input } else { acts[li - 1].as_slice() };
            let positions = g.positions();
            let rows = batch * positions;
            let seg = g.kernel * g.in_ch;
            let in_stride = g.in_size * g.in_size * g.in_ch;
            let mut cols = vec![S::ZERO; rows * g.patch];
            for b in 0..batch {
                let image = &src[b * in_stride..(b + 1) * in_stride];
                for oy in 0..g.out_size {
                    for ox in 0..g.out_size {
                        let row = (b * positions + oy * g.out_size + ox) * g.patch;
                        for ky in 0..g.kernel {
                            let from = ((oy * g.stride + ky) * g.in_size + ox * g.stride) * g.in_ch;
                            cols[row + ky * seg..row + (ky + 1) * seg].copy_from_slice(&image[from..from + seg]);
                        }
                    }
                }
            }
            let mut out = vec![S::ZERO; rows * g.out_ch];
            S::gemm(rows, g.patch, g.out_ch, &cols, (g.patch, 1), &p[g.w..], (1, g.patch), S::ZERO, &mut out, (g.out_ch, 1));
            let bias = &p[g.b..g.b + g.out_ch];
            for row in out.chunks_exact_mut(g.out_ch) {
                for (v, &bv) in row.iter_mut().zip(bias) {
                    *v += bv;
                }
            }
            relu_in_place(&mut out);
            cols_all.push(cols);
            acts.push(out);
        }
        let flat: &[S] = acts.last().map(|a| a.as_slice()).unwrap_or(input);
        let features = self.dense_forward(&self.layout.dense, flat, batch, true);
        let logits = self.dense_forward(&self.layout.policy, &features, batch, false);
        let values = self.dense_forward(&self.layout.value, &features, batch, false);
        if let Some(i) = logits.iter().chain(values.iter()).position(|v| !v.is_finite()) {
            let max_feature = features.iter().fold(0.0f64, |m, v| m.max(libm::fabs(v.to_f64())));
            return Err(Error::Numeric(format!(
                "non-finite network output at flat index {i} (max |feature| = {max_feature:e})"
            )));
        }
        Ok(ForwardPass { batch, logits, values, features, cols: cols_all, acts })
    }

    fn dense_forward(&self, g: &DenseGeom, x: &[S], batch: usize, relu: bool) -> Vec<S> {
        let p = &self.params;
        let mut out = vec![S::ZERO; batch * g.out];
        S::gemm(batch, g.inp, g.out, x, (g.inp, 1), &p[g.w..], (1, g.inp), S::ZERO, &mut out, (g.out, 1));
        let bias = &p[g.b..g.b + g.out];
        for row in out.chunks_exact_mut(g.out) {
            for (v, &bv) in row.iter_mut().zip(bias) {
                *v += bv;
            }
        }
        if relu {
            relu_in_place(&mut out);
        }
        out
    }

    /// Accumulates parameter gradients of a scalar loss into `grads`, given
    /// `∂L/∂logits` and `∂L/∂values` for the pass. When `grad_input` is given
    /// it receives `∂L/∂input` (overwritten).
    pub fn backward(
        &self,
        input: &[S],
        pass: &ForwardPass<S>,
        grad_logits: &[S],
        grad_values: &[S],
        grads: &mut [S],
        grad_input: Option<&mut [S]>,
    ) {
        let batch = pass.batch;
        let p = &self.params;
        let (dl, pl, vl) = (&self.layout.dense, &self.layout.policy, &self.layout.value);
        assert_eq!(grad_logits.len(), batch * pl.out);
        assert_eq!(grad_values.len(), batch);
        assert_eq!(grads.len(), p.len());

        // Heads.
        let mut d_h = vec![S::ZERO; batch * dl.out];
        S::gemm(batch, pl.out, pl.inp, grad_logits, (pl.out, 1), &p[pl.w..], (pl.inp, 1), S::ZERO, &mut d_h, (dl.out, 1));
        let wv = &p[vl.w..vl.w + vl.inp];
        for (row, &gv) in d_h.chunks_exact_mut(dl.out).zip(grad_values) {
            for (d, &w) in row.iter_mut().zip(wv) {
                *d += gv * w;
            }
        }
        S::gemm(pl.out, batch, pl.inp, grad_logits, (1, pl.out), &pass.features, (pl.inp, 1), S::ONE, &mut grads[pl.w..], (pl.inp, 1));
        S::gemm(1, batch, vl.inp, grad_values, (1, 1), &pass.features, (vl.inp, 1), S::ONE, &mut grads[vl.w..], (vl.inp, 1));
        for row in grad_logits.chunks_exact(pl.out) {
            for (g, &d) in grads[pl.b..pl.b + pl.out].iter_mut().zip(row) {
                *g += d;
            }
        }
        for &d in grad_values {
            grads[vl.b] += d;
        }

        // Dense trunk layer.
        relu_mask(&mut d_h, &pass.features);
        let flat: &[S] = pass.acts.last().map(|a| a.as_slice()).unwrap_or(input);
        S::gemm(dl.out, batch, dl.inp, &d_h, (1, dl.out), flat, (dl.inp, 1), S::ONE, &mut grads[dl.w..], (dl.inp, 1));
        for row in d_h.chunks_exact(dl.out) {
            for (g, &d) in grads[dl.b..dl.b + dl.out].iter_mut().zip(row) {
                *g += d;
            }
        }
        let convs = &self.layout.convs;
        let need_flat_grad = !convs.is_empty() || grad_input.is_some();
        if !need_flat_grad {
            return;
        }
        let mut d_next = vec![S::ZERO; batch * dl.inp];
        S::gemm(batch, dl.out, dl.inp, &d_h, (dl.out, 1), &p[dl.w..], (dl.inp, 1), S::ZERO, &mut d_next, (dl.inp, 1));
        if convs.is_empty() {
            if let Some(gi) = grad_input {
                gi.copy_from_slice(&d_next);
            }
            return;
        }

        let mut grad_input = grad_input;
        for li in (0..convs.len()).rev() {
            let g = &convs[li];
            let rows = batch * g.positions();
            let mut d_out = d_next;
            relu_mask(&mut d_out, &pass.acts[li]);
            let cols = &pass.cols[li];
            S::gemm(g.out_ch, rows, g.patch, &d_out, (1, g.out_ch), cols, (g.patch, 1), S::ONE, &mut grads[g.w..], (g.patch, 1));
            for row in d_out.chunks_exact(g.out_ch) {
                for (gb, &d) in grads[g.b..g.b + g.out_ch].iter_mut().zip(row) {
                    *gb += d;
                }
            }
            if li == 0 && grad_input.is_none() {
                break;
            }
            let mut d_cols = vec![S::ZERO; rows * g.patch];
            S::gemm(rows, g.out_ch, g.patch, &d_out, (g.out_ch, 1), &p[g.w..], (g.patch, 1), S::ZERO, &mut d_cols, (g.patch, 1));
            let in_stride = g.in_size * g.in_size * g.in_ch;
            let seg = g.kernel * g.in_ch;
            let mut d_prev = vec![S::ZERO; batch * in_stride];
            for b in 0..batch {
                let image = &mut d_prev[b * in_stride..(b + 1) * in_stride];
                for oy in 0..g.out_size {
                    for ox in 0..g.out_size {
                        let row = (b * g.positions() + oy * g.out_size + ox) * g.patch;
                        for ky in 0..g.kernel {
                            let to = ((oy * g.stride + ky) * g.in_size + ox * g.stride) * g.in_ch;
                            for (dst, &src) in image[to..to + seg].iter_mut().zip(&d_cols[row + ky * seg..row + (ky + 1) * seg]) {
                                *dst += src;
                            }
                        }
                    }
                }
            }
            if li == 0 {
                if let Some(gi) = grad_input.take() {
                    gi.copy_from_slice(&d_prev);
                }
                break;
            }
            d_next = d_prev;
        }
    }
}
