//! Deterministic reference interpreter. Kernels are naive with a fixed
//! summation order (input-channel major, then kH, kW); no algebraic
//! rearrangement, so identical graph + input give bit-identical outputs.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::graph::{ModelGraph, Op};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorValue<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> TensorValue<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        TensorValue { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        TensorValue {
            shape,
            data: vec![T::zero(); n],
        }
    }
}

/// Seeded random activation in [-1, 1), for verification and latency runs.
pub fn random_input(shape: &[usize], seed: u64) -> TensorValue<f32> {
    let mut rng = SplitMix64::new(seed);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform(1.0)).collect();
    TensorValue::new(shape.to_vec(), data)
}

pub fn run(
    g: &ModelGraph,
    inputs: &BTreeMap<String, TensorValue<f32>>,
) -> Result<BTreeMap<String, TensorValue<f32>>> {
    for spec in &g.inputs {
        let got = inputs.get(&spec.name).ok_or_else(|| Error::ShapeMismatch {
            node: spec.name.clone(),
            expected: "input tensor provided".into(),
            found: "missing".into(),
        })?;
        if got.shape != spec.shape {
            return Err(Error::ShapeMismatch {
                node: spec.name.clone(),
                expected: format!("{:?}", spec.shape),
                found: format!("{:?}", got.shape),
            });
        }
    }

    let mut env: HashMap<&str, TensorValue<f32>> = HashMap::new();
    for node in &g.nodes {
        let out = match node.op {
            Op::Input => inputs[&node.outputs[0]].clone(),
            Op::Conv2d => {
                let x = &env[node.inputs[0].as_str()];
                let w = g.conv_weight(node)?;
                let bias = g.opt_weight(node, "bias")?;
                kernels::conv2d(
                    x,
                    &w.data,
                    &w.shape,
                    bias.map(|b| b.data.as_slice()),
                    node.conv_stride()?,
                    node.conv_padding()?,
                )
            }
            Op::Batchnorm2d => {
                let x = &env[node.inputs[0].as_str()];
                let gamma = g.opt_weight(node, "gamma")?.unwrap();
                let beta = g.opt_weight(node, "beta")?.unwrap();
                let mean = g.opt_weight(node, "running_mean")?.unwrap();
                let var = g.opt_weight(node, "running_var")?.unwrap();
                kernels::batchnorm2d(
                    x,
                    &gamma.data,
                    &beta.data,
                    &mean.data,
                    &var.data,
                    node.bn_epsilon()? as f32,
                )
            }
            Op::Relu => kernels::relu(&env[node.inputs[0].as_str()]),
            Op::Add => {
                let xs: Vec<&TensorValue<f32>> =
                    node.inputs.iter().map(|i| &env[i.as_str()]).collect();
                kernels::add(&xs)
            }
            Op::Concat => {
                let xs: Vec<&TensorValue<f32>> =
                    node.inputs.iter().map(|i| &env[i.as_str()]).collect();
                kernels::concat(&xs)
            }
            Op::Maxpool2d => kernels::maxpool2d(
                &env[node.inputs[0].as_str()],
                node.pool_kernel()?,
                node.pool_stride()?,
                node.pool_padding()?,
            ),
            Op::GlobalAvgPool => kernels::global_avg_pool(&env[node.inputs[0].as_str()]),
            Op::UpsampleNearest => {
                kernels::upsample_nearest(&env[node.inputs[0].as_str()], node.upsample_scale()?)
            }
            Op::Dense => {
                let x = &env[node.inputs[0].as_str()];
                let w = g.opt_weight(node, "weight")?.unwrap();
                let bias = g.opt_weight(node, "bias")?;
                kernels::dense(x, &w.data, &w.shape, bias.map(|b| b.data.as_slice()))
            }
            Op::Softmax => kernels::softmax(&env[node.inputs[0].as_str()]),
        };
        if out.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(node.id.clone()));
        }
        for name in &node.outputs {
            env.insert(name.as_str(), out.clone());
        }
    }

    let mut result = BTreeMap::new();
    for name in &g.outputs {
        result.insert(name.clone(), env[name.as_str()].clone());
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct LatencyStats {
    pub median_ms: f64,
    pub min_ms: f64,
    pub mean_ms: f64,
}

/// Single-threaded latency of the reference path on a fixed seeded input.
/// Warmup iterations run unrecorded first.
pub fn measure_latency(
    g: &ModelGraph,
    input_shape: &[usize],
    reps: usize,
    warmup: usize,
    seed: u64,
) -> Result<LatencyStats> {
    assert!(reps >= 3, "reps must be >= 3");
    assert!(warmup >= 1, "warmup must be >= 1");
    // measure at the requested resolution regardless of the declared one
    let mut g = g.clone();
    if !g.inputs.is_empty() {
        g.inputs[0].shape = input_shape.to_vec();
    }
    let g = &g;
    let mut inputs = BTreeMap::new();
    for (i, spec) in g.inputs.iter().enumerate() {
        inputs.insert(spec.name.clone(), random_input(&spec.shape, seed + i as u64));
    }
    for _ in 0..warmup {
        run(g, &inputs)?;
    }
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        run(g, &inputs)?;
        samples.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let mut sorted = samples.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2]) / 2.0
    };
    Ok(LatencyStats {
        median_ms: median,
        min_ms: sorted[0],
        mean_ms: samples.iter().sum::<f64>() / samples.len() as f64,
    })
}

pub mod kernels {
    use super::TensorValue;
    use crate::scalar::Scalar;

    fn dims4<T>(x: &TensorValue<T>) -> (usize, usize, usize, usize) {
        (x.shape[0], x.shape[1], x.shape[2], x.shape[3])
    }

    pub fn conv2d<T: Scalar>(
        x: &TensorValue<T>,
        w: &[T],
        w_shape: &[usize],
        bias: Option<&[T]>,
        stride: usize,
        pad: usize,
    ) -> TensorValue<T> {
        let (n, c, h, wd) = dims4(x);
        let (o, i, kh, kw) = (w_shape[0], w_shape[1], w_shape[2], w_shape[3]);
        debug_assert_eq!(c, i);
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = TensorValue::zeros(vec![n, o, oh, ow]);
        for b in 0..n {
            for oc in 0..o {
                let w_base = oc * i * kh * kw;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias.map_or(T::zero(), |bv| bv[oc]);
                        for ic in 0..i {
                            let x_base = (b * c + ic) * h * wd;
                            let wk_base = w_base + ic * kh * kw;
                            for ky in 0..kh {
                                let iy = oy * stride + ky;
                                if iy < pad || iy - pad >= h {
                                    continue;
                                }
                                let iy = iy - pad;
                                for kx in 0..kw {
                                    let ix = ox * stride + kx;
                                    if ix < pad || ix - pad >= wd {
                                        continue;
                                    }
                                    let ix = ix - pad;
                                    acc = acc
                                        + x.data[x_base + iy * wd + ix]
                                            * w[wk_base + ky * kw + kx];
                                }
                            }
                        }
                        out.data[((b * o + oc) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    /// Inference form y = gamma*(x-mean)/sqrt(var+eps) + beta.
    pub fn batchnorm2d<T: Scalar>(
        x: &TensorValue<T>,
        gamma: &[T],
        beta: &[T],
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> TensorValue<T> {
        let (n, c, h, w) = dims4(x);
        let mut out = TensorValue::zeros(x.shape.clone());
        for b in 0..n {
            for ch in 0..c {
                let scale = gamma[ch] / (var[ch] + eps).sqrt();
                let base = (b * c + ch) * h * w;
                for p in 0..h * w {
                    out.data[base + p] = (x.data[base + p] - mean[ch]) * scale + beta[ch];
                }
            }
        }
        out
    }

    pub fn relu<T: Scalar>(x: &TensorValue<T>) -> TensorValue<T> {
        TensorValue {
            shape: x.shape.clone(),
            data: x
                .data
                .iter()
                .map(|&v| if v > T::zero() { v } else { T::zero() })
                .collect(),
        }
    }

    pub fn add<T: Scalar>(xs: &[&TensorValue<T>]) -> TensorValue<T> {
        let mut out = xs[0].clone();
        for x in &xs[1..] {
            for (o, v) in out.data.iter_mut().zip(&x.data) {
                *o = *o + *v;
            }
        }
        out
    }

    pub fn concat<T: Scalar>(xs: &[&TensorValue<T>]) -> TensorValue<T> {
        let (n, _, h, w) = dims4(xs[0]);
        let total_c: usize = xs.iter().map(|x| x.shape[1]).sum();
        let mut out = TensorValue::zeros(vec![n, total_c, h, w]);
        for b in 0..n {
            let mut c_off = 0;
            for x in xs {
                let c = x.shape[1];
                let src = (b * c) * h * w;
                let dst = (b * total_c + c_off) * h * w;
                out.data[dst..dst + c * h * w].copy_from_slice(&x.data[src..src + c * h * w]);
                c_off += c;
            }
        }
        out
    }

    pub fn maxpool2d<T: Scalar>(
        x: &TensorValue<T>,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> TensorValue<T> {
        let (n, c, h, w) = dims4(x);
        let oh = (h + 2 * pad - kernel) / stride + 1;
        let ow = (w + 2 * pad - kernel) / stride + 1;
        let mut out = TensorValue::zeros(vec![n, c, oh, ow]);
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = T::neg_infinity();
                        for ky in 0..kernel {
                            let iy = oy * stride + ky;
                            if iy < pad || iy - pad >= h {
                                continue;
                            }
                            for kx in 0..kernel {
                                let ix = ox * stride + kx;
                                if ix < pad || ix - pad >= w {
                                    continue;
                                }
                                let v = x.data[base + (iy - pad) * w + (ix - pad)];
                                if v > best {
                                    best = v;
                                }
                            }
                        }
                        out.data[((b * c + ch) * oh + oy) * ow + ox] = best;
                    }
                }
            }
        }
        out
    }

    pub fn global_avg_pool<T: Scalar>(x: &TensorValue<T>) -> TensorValue<T> {
        let (n, c, h, w) = dims4(x);
        let mut out = TensorValue::zeros(vec![n, c, 1, 1]);
        let denom = T::of_f64((h * w) as f64);
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * h * w;
                let mut acc = T::zero();
                for p in 0..h * w {
                    acc = acc + x.data[base + p];
                }
                out.data[b * c + ch] = acc / denom;
            }
        }
        out
    }

    pub fn upsample_nearest<T: Scalar>(x: &TensorValue<T>, scale: usize) -> TensorValue<T> {
        let (n, c, h, w) = dims4(x);
        let (oh, ow) = (h * scale, w * scale);
        let mut out = TensorValue::zeros(vec![n, c, oh, ow]);
        for b in 0..n {
            for ch in 0..c {
                let src = (b * c + ch) * h * w;
                let dst = (b * c + ch) * oh * ow;
                for oy in 0..oh {
                    for ox in 0..ow {
                        out.data[dst + oy * ow + ox] = x.data[src + (oy / scale) * w + ox / scale];
                    }
                }
            }
        }
        out
    }

    pub fn dense<T: Scalar>(
        x: &TensorValue<T>,
        w: &[T],
        w_shape: &[usize],
        bias: Option<&[T]>,
    ) -> TensorValue<T> {
        let n = x.shape[0];
        let (out_f, in_f) = (w_shape[0], w_shape[1]);
        let mut out = TensorValue::zeros(vec![n, out_f]);
        for b in 0..n {
            for o in 0..out_f {
                let mut acc = bias.map_or(T::zero(), |bv| bv[o]);
                for f in 0..in_f {
                    acc = acc + x.data[b * in_f + f] * w[o * in_f + f];
                }
                out.data[b * out_f + o] = acc;
            }
        }
        out
    }

    /// Softmax over the channel axis (axis 1), with max-subtraction.
    pub fn softmax<T: Scalar>(x: &TensorValue<T>) -> TensorValue<T> {
        let mut out = TensorValue::zeros(x.shape.clone());
        let (n, c, spatial) = match x.shape.len() {
            4 => (x.shape[0], x.shape[1], x.shape[2] * x.shape[3]),
            2 => (x.shape[0], x.shape[1], 1),
            _ => panic!("softmax expects 2D or 4D input"),
        };
        for b in 0..n {
            for p in 0..spatial {
                let at = |ch: usize| x.data[(b * c + ch) * spatial + p];
                let mut m = at(0);
                for ch in 1..c {
                    if at(ch) > m {
                        m = at(ch);
                    }
                }
                let mut sum = T::zero();
                for ch in 0..c {
                    let e = (at(ch) - m).exp();
                    out.data[(b * c + ch) * spatial + p] = e;
                    sum = sum + e;
                }
                for ch in 0..c {
                    out.data[(b * c + ch) * spatial + p] =
                        out.data[(b * c + ch) * spatial + p] / sum;
                }
            }
        }
        out
    }
}
