use crate::{NnError, Result, Tensor};

/// One stage of a [`crate::Network`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    /// Fully connected `[in] -> [out]`. Weights are stored `[in][out]`, then `out` biases.
    Dense { inputs: usize, outputs: usize },
    /// Per-channel `k x k` spatial filter followed by a 1x1 channel mix,
    /// same padding. Parameters: depthwise `[k][k][in]`, depthwise bias `[in]`,
    /// pointwise `[in][out]`, pointwise bias `[out]`.
    DepthwiseSeparableConv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    SpaceToDepth { block: usize },
    Relu,
    Tanh,
    Flatten,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "Dense",
            LayerSpec::DepthwiseSeparableConv { .. } => "DepthwiseSeparableConv",
            LayerSpec::SpaceToDepth { .. } => "SpaceToDepth",
            LayerSpec::Relu => "ReLU",
            LayerSpec::Tanh => "Tanh",
            LayerSpec::Flatten => "Flatten",
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, outputs } => inputs * outputs + outputs,
            LayerSpec::DepthwiseSeparableConv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => in_channels * kernel * kernel + in_channels + in_channels * out_channels + out_channels,
            _ => 0,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |reason: String| NnError::InvalidLayer {
            index,
            kind: self.name(),
            reason,
        };
        match *self {
            LayerSpec::Dense { inputs, outputs } => {
                if input != [inputs] {
                    return Err(bad(format!("expects [{inputs}], got {input:?}")));
                }
                if outputs == 0 {
                    return Err(bad("zero outputs".into()));
                }
                Ok(vec![outputs])
            }
            LayerSpec::DepthwiseSeparableConv {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if input.len() != 3 || input[2] != in_channels {
                    return Err(bad(format!("expects [H, W, {in_channels}], got {input:?}")));
                }
                if kernel % 2 == 0 || stride == 0 || out_channels == 0 {
                    return Err(bad("kernel must be odd, stride and outputs positive".into()));
                }
                Ok(vec![
                    input[0].div_ceil(stride),
                    input[1].div_ceil(stride),
                    out_channels,
                ])
            }
            LayerSpec::SpaceToDepth { block } => {
                if input.len() != 3 || block == 0 || !input[0].is_multiple_of(block) || !input[1].is_multiple_of(block) {
                    return Err(bad(format!("block {block} does not divide {input:?}")));
                }
                Ok(vec![input[0] / block, input[1] / block, input[2] * block * block])
            }
            LayerSpec::Relu | LayerSpec::Tanh => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    pub(crate) fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::DepthwiseSeparableConv { kernel, .. } => kernel * kernel,
            _ => 0,
        }
    }
}

/// Rearranges `b x b` pixel blocks into channels:
/// `out[y, x, c*b*b + dy*b + dx] = in[y*b + dy, x*b + dx, c]` for each batch item.
pub fn space_to_depth(input: &Tensor, block: usize) -> Result<Tensor> {
    let s = input.shape();
    if s.len() != 4 || block == 0 || !s[1].is_multiple_of(block) || !s[2].is_multiple_of(block) {
        return Err(NnError::ShapeMismatch {
            expected: vec![0, block, block, 0],
            actual: s.to_vec(),
        });
    }
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    let (ho, wo, co) = (h / block, w / block, c * block * block);
    let mut out = vec![0.0f32; input.len()];
    let src = input.data();
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let (oy, dy, ox, dx) = (y / block, y % block, x / block, x % block);
                let si = ((b * h + y) * w + x) * c;
                let oi = ((b * ho + oy) * wo + ox) * co + dy * block + dx;
                for ch in 0..c {
                    out[oi + ch * block * block] = src[si + ch];
                }
            }
        }
    }
    Tensor::new(vec![n, ho, wo, co], out)
}

/// Inverse of [`space_to_depth`].
pub fn depth_to_space(input: &Tensor, block: usize) -> Result<Tensor> {
    let s = input.shape();
    if s.len() != 4 || block == 0 || !s[3].is_multiple_of(block * block) {
        return Err(NnError::ShapeMismatch {
            expected: vec![0, 0, 0, block * block],
            actual: s.to_vec(),
        });
    }
    let (n, ho, wo, co) = (s[0], s[1], s[2], s[3]);
    let (h, w, c) = (ho * block, wo * block, co / (block * block));
    let mut out = vec![0.0f32; input.len()];
    let src = input.data();
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let (oy, dy, ox, dx) = (y / block, y % block, x / block, x % block);
                let di = ((b * h + y) * w + x) * c;
                let si = ((b * ho + oy) * wo + ox) * co + dy * block + dx;
                for ch in 0..c {
                    out[di + ch] = src[si + ch * block * block];
                }
            }
        }
    }
    Tensor::new(vec![n, h, w, c], out)
}

/// `c[m x n] = a[m x k] * b[k x n] (+ c if accumulate)`, all row-major.
pub(crate) fn matmul(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32], accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths checked above, strides describe contiguous row-major storage.
    unsafe {
        matrixmultiply::sgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c[k x n] += a[m x k]^T * b[m x n]`.
pub(crate) fn matmul_at_b(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    // SAFETY: a is read through transposed strides over its own m*k storage.
    unsafe {
        matrixmultiply::sgemm(
            k, m, n, 1.0,
            a.as_ptr(), 1, k as isize,
            b.as_ptr(), n as isize, 1,
            1.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c[m x k] = a[m x n] * b[k x n]^T`.
pub(crate) fn matmul_a_bt(m: usize, n: usize, k: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * k);
    // SAFETY: b is read through transposed strides over its own k*n storage.
    unsafe {
        matrixmultiply::sgemm(
            m, n, k, 1.0,
            a.as_ptr(), n as isize, 1,
            b.as_ptr(), 1, n as isize,
            0.0,
            c.as_mut_ptr(), k as isize, 1,
        );
    }
}

pub(crate) fn dense_forward(x: &Tensor, params: &[f32], inputs: usize, outputs: usize) -> Tensor {
    let n = x.batch();
    let (w, b) = params.split_at(inputs * outputs);
    let mut out = Vec::with_capacity(n * outputs);
    for _ in 0..n {
        out.extend_from_slice(b);
    }
    matmul(n, inputs, outputs, x.data(), w, &mut out, true);
    Tensor::new(vec![n, outputs], out).expect("dense output shape")
}

pub(crate) fn dense_backward(
    x: &Tensor,
    grad_out: &Tensor,
    params: &[f32],
    inputs: usize,
    outputs: usize,
    param_grad: &mut [f32],
    want_input: bool,
) -> Option<Tensor> {
    let n = x.batch();
    let (gw, gb) = param_grad.split_at_mut(inputs * outputs);
    matmul_at_b(n, inputs, outputs, x.data(), grad_out.data(), gw);
    for row in grad_out.data().chunks_exact(outputs) {
        for (g, r) in gb.iter_mut().zip(row) {
            *g += r;
        }
    }
    if !want_input {
        return None;
    }
    let w = &params[..inputs * outputs];
    let mut dx = vec![0.0f32; n * inputs];
    matmul_a_bt(n, outputs, inputs, grad_out.data(), w, &mut dx);
    Some(Tensor::new(vec![n, inputs], dx).expect("dense input grad shape"))
}

pub(crate) struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub ho: usize,
    pub wo: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvGeom {
    pub fn new(shape: &[usize], k: usize, stride: usize) -> Self {
        Self {
            n: shape[0],
            h: shape[1],
            w: shape[2],
            c: shape[3],
            ho: shape[1].div_ceil(stride),
            wo: shape[2].div_ceil(stride),
            k,
            stride,
        }
    }

    /// Same padding for odd kernels.
    fn pad(&self) -> isize {
        (self.k / 2) as isize
    }
}

/// Depthwise stage only: `[N, H, W, C] -> [N, Ho, Wo, C]`.
pub(crate) fn depthwise_forward(x: &Tensor, g: &ConvGeom, filt: &[f32], bias: &[f32]) -> Tensor {
    let c = g.c;
    let mut out = vec![0.0f32; g.n * g.ho * g.wo * c];
    let src = x.data();
    let pad = g.pad();
    for b in 0..g.n {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let oi = ((b * g.ho + oy) * g.wo + ox) * c;
                let acc = &mut out[oi..oi + c];
                acc.copy_from_slice(bias);
                for ky in 0..g.k {
                    let iy = (oy * g.stride) as isize + ky as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.k {
                        let ix = (ox * g.stride) as isize + kx as isize - pad;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let si = ((b * g.h + iy as usize) * g.w + ix as usize) * c;
                        let fi = (ky * g.k + kx) * c;
                        for ((a, &v), &f) in acc.iter_mut().zip(&src[si..si + c]).zip(&filt[fi..fi + c]) {
                            *a += v * f;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.n, g.ho, g.wo, c], out).expect("depthwise output shape")
}

/// Accumulates filter/bias gradients and optionally returns the input gradient.
pub(crate) fn depthwise_backward(
    x: &Tensor,
    g: &ConvGeom,
    filt: &[f32],
    grad_out: &[f32],
    filt_grad: &mut [f32],
    bias_grad: &mut [f32],
    want_input: bool,
) -> Option<Tensor> {
    let c = g.c;
    let src = x.data();
    let pad = g.pad();
    let mut dx = if want_input {
        vec![0.0f32; src.len()]
    } else {
        Vec::new()
    };
    for b in 0..g.n {
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let oi = ((b * g.ho + oy) * g.wo + ox) * c;
                let go = &grad_out[oi..oi + c];
                for (bg, &v) in bias_grad.iter_mut().zip(go) {
                    *bg += v;
                }
                for ky in 0..g.k {
                    let iy = (oy * g.stride) as isize + ky as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.k {
                        let ix = (ox * g.stride) as isize + kx as isize - pad;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let si = ((b * g.h + iy as usize) * g.w + ix as usize) * c;
                        let fi = (ky * g.k + kx) * c;
                        for ((fg, &v), &gv) in filt_grad[fi..fi + c].iter_mut().zip(&src[si..si + c]).zip(go) {
                            *fg += v * gv;
                        }
                        if want_input {
                            for ((d, &f), &gv) in dx[si..si + c].iter_mut().zip(&filt[fi..fi + c]).zip(go) {
                                *d += f * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    if want_input {
        Some(Tensor::new(x.shape().to_vec(), dx).expect("depthwise input grad shape"))
    } else {
        None
    }
}

/// Splits a depthwise-separable parameter block into
/// (depthwise filter, depthwise bias, pointwise weights, pointwise bias).
pub(crate) fn split_dwsep(
    params: &[f32],
    cin: usize,
    cout: usize,
    k: usize,
) -> (&[f32], &[f32], &[f32], &[f32]) {
    let (dw, rest) = params.split_at(k * k * cin);
    let (db, rest) = rest.split_at(cin);
    let (pw, pb) = rest.split_at(cin * cout);
    (dw, db, pw, pb)
}

pub(crate) fn split_dwsep_mut(
    params: &mut [f32],
    cin: usize,
    cout: usize,
    k: usize,
) -> (&mut [f32], &mut [f32], &mut [f32], &mut [f32]) {
    let (dw, rest) = params.split_at_mut(k * k * cin);
    let (db, rest) = rest.split_at_mut(cin);
    let (pw, pb) = rest.split_at_mut(cin * cout);
    (dw, db, pw, pb)
}
