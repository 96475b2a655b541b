//! Finite-difference gradient oracle.
//!
//! The reference forward pass below is a direct double-precision
//! re-implementation of every layer kind with naive loops. It shares nothing
//! with the optimised `f32` path except the parameter layout, so agreement
//! between central differences of this reference and the analytic backward
//! pass checks both forward and backward code.

use crate::{LayerSpec, Network, Tensor};

/// Result of comparing analytic gradients to central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because the perturbation moved a ReLU input across zero.
    pub skipped_kinks: usize,
}

/// Relative error with an absolute floor so vanishing gradients do not divide by ~0.
pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

struct RefOut {
    out: Vec<f64>,
    relu_signs: Vec<bool>,
}

fn reference_forward(net: &Network, params: &[f64], input: &[f64], shape: &[usize]) -> RefOut {
    let mut cur = input.to_vec();
    let mut s = shape.to_vec();
    let mut relu_signs = Vec::new();
    let mut off = 0;
    for (i, layer) in net.layers().iter().enumerate() {
        let p = &params[off..off + layer.param_count()];
        off += layer.param_count();
        let next_shape = layer.output_shape(i, &s).expect("valid network");
        cur = match *layer {
            LayerSpec::Dense { inputs, outputs } => (0..outputs)
                .map(|o| p[inputs * outputs + o] + (0..inputs).map(|k| cur[k] * p[k * outputs + o]).sum::<f64>())
                .collect(),
            LayerSpec::DepthwiseSeparableConv {
                in_channels: cin,
                out_channels: cout,
                kernel: k,
                stride,
            } => {
                let (h, w) = (s[0] as isize, s[1] as isize);
                let (ho, wo) = (next_shape[0], next_shape[1]);
                let pad = (k / 2) as isize;
                let dw = &p[..k * k * cin];
                let db = &p[k * k * cin..k * k * cin + cin];
                let pw = &p[k * k * cin + cin..k * k * cin + cin + cin * cout];
                let pb = &p[k * k * cin + cin + cin * cout..];
                let mut out = vec![0.0; ho * wo * cout];
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut d = vec![0.0; cin];
                        for c in 0..cin {
                            let mut acc = db[c];
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride) as isize + ky as isize - pad;
                                    let ix = (ox * stride) as isize + kx as isize - pad;
                                    if iy >= 0 && iy < h && ix >= 0 && ix < w {
                                        let v = cur[((iy * w + ix) as usize) * cin + c];
                                        acc += v * dw[(ky * k + kx) * cin + c];
                                    }
                                }
                            }
                            d[c] = acc;
                        }
                        for o in 0..cout {
                            out[(oy * wo + ox) * cout + o] =
                                pb[o] + (0..cin).map(|c| d[c] * pw[c * cout + o]).sum::<f64>();
                        }
                    }
                }
                out
            }
            LayerSpec::SpaceToDepth { block: b } => {
                let (h, w, c) = (s[0], s[1], s[2]);
                let mut out = vec![0.0; cur.len()];
                for y in 0..h / b {
                    for x in 0..w / b {
                        for ch in 0..c {
                            for dy in 0..b {
                                for dx in 0..b {
                                    out[(y * (w / b) + x) * c * b * b + ch * b * b + dy * b + dx] =
                                        cur[((y * b + dy) * w + x * b + dx) * c + ch];
                                }
                            }
                        }
                    }
                }
                out
            }
            LayerSpec::Relu => {
                relu_signs.extend(cur.iter().map(|&v| v > 0.0));
                cur.iter().map(|&v| v.max(0.0)).collect()
            }
            LayerSpec::Tanh => cur.iter().map(|v| v.tanh()).collect(),
            LayerSpec::Flatten => cur,
        };
        s = next_shape;
    }
    RefOut { out: cur, relu_signs }
}

/// Scalar objective `sum_b sum_j out[b, j] * weights[b, j]` evaluated by the reference path.
fn reference_objective(net: &Network, params: &[f64], input: &[f64], batch: usize, weights: &[f64]) -> (f64, Vec<bool>) {
    let per = input.len() / batch;
    let out_per = weights.len() / batch;
    let mut total = 0.0;
    let mut signs = Vec::new();
    for b in 0..batch {
        let r = reference_forward(net, params, &input[b * per..(b + 1) * per], net.input_shape());
        total += r.out.iter().zip(&weights[b * out_per..(b + 1) * out_per]).map(|(o, w)| o * w).sum::<f64>();
        signs.extend(r.relu_signs);
    }
    (total, signs)
}

/// Central-difference check of parameter and input gradients.
///
/// `max_coords` bounds how many parameter coordinates are checked (evenly
/// strided); all input coordinates are checked when `check_input` is set.
pub fn check_network(
    net: &Network,
    input: &Tensor,
    upstream: &Tensor,
    h: f64,
    floor: f64,
    max_coords: usize,
    check_input: bool,
) -> GradCheckReport {
    let (_, acts) = net.forward(input).expect("forward");
    let grads = net.backward(&acts, upstream).expect("backward");
    let params: Vec<f64> = net.params().iter().map(|&v| v as f64).collect();
    let x: Vec<f64> = input.data().iter().map(|&v| v as f64).collect();
    let w: Vec<f64> = upstream.data().iter().map(|&v| v as f64).collect();
    let batch = input.batch();
    let (_, base_signs) = reference_objective(net, &params, &x, batch, &w);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    let probe = |report: &mut GradCheckReport, analytic: f64, eval: &mut dyn FnMut(f64) -> (f64, Vec<bool>)| {
        let (fp, sp) = eval(h);
        let (fm, sm) = eval(-h);
        if sp != base_signs || sm != base_signs {
            report.skipped_kinks += 1;
            return;
        }
        let numeric = (fp - fm) / (2.0 * h);
        report.max_rel_error = report.max_rel_error.max(rel_error(analytic, numeric, floor));
        report.checked += 1;
    };

    let n = params.len();
    let stride = n.div_ceil(max_coords.max(1)).max(1);
    for j in (0..n).step_by(stride) {
        let mut eval = |d: f64| {
            let mut p = params.clone();
            p[j] += d;
            reference_objective(net, &p, &x, batch, &w)
        };
        probe(&mut report, grads.params[j] as f64, &mut eval);
    }
    if check_input {
        let gi = grads.input.as_ref().expect("input gradient");
        for j in 0..x.len() {
            let mut eval = |d: f64| {
                let mut xi = x.clone();
                xi[j] += d;
                reference_objective(net, &params, &xi, batch, &w)
            };
            probe(&mut report, gi.data()[j] as f64, &mut eval);
        }
    }
    report
}
