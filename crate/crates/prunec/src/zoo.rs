//! Seeded builders emitting interchange-format models that exercise every
//! coupling pattern: plain chains (local groups only), residual classifiers
//! (cross-block coupling), pre-activation bottleneck encoders and a
//! HoverNet-style three-branch U-Net (encoder-decoder skip coupling).
//!
//! Weights are He-style scaled uniform values drawn from the documented
//! SplitMix64 generator, so a fixed seed gives byte-identical files.

use std::collections::BTreeMap;

use crate::graph::{AttrValue, Dtype, ModelGraph, Node, Op, Tensor, TensorSpec};
use crate::rng::SplitMix64;

pub struct GraphBuilder {
    name: String,
    seed: u64,
    rng: SplitMix64,
    nodes: Vec<Node>,
    tensors: BTreeMap<String, Tensor>,
    inputs: Vec<TensorSpec>,
}

impl GraphBuilder {
    pub fn new(name: &str, seed: u64) -> Self {
        GraphBuilder {
            name: name.to_string(),
            seed,
            rng: SplitMix64::new(seed),
            nodes: Vec::new(),
            tensors: BTreeMap::new(),
            inputs: Vec::new(),
        }
    }

    fn push(&mut self, node: Node) -> String {
        let out = node.outputs[0].clone();
        self.nodes.push(node);
        out
    }

    fn he_uniform(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor {
        let bound = (6.0 / fan_in as f64).sqrt() as f32;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.uniform(bound)).collect();
        Tensor::new(shape, data)
    }

    pub fn input(&mut self, name: &str, shape: Vec<usize>) -> String {
        self.inputs.push(TensorSpec {
            name: name.to_string(),
            dtype: Dtype::F32,
            shape,
        });
        self.push(Node {
            id: format!("in_{name}"),
            op: Op::Input,
            inputs: vec![],
            outputs: vec![name.to_string()],
            attrs: BTreeMap::new(),
            weights: BTreeMap::new(),
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        id: &str,
        x: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> String {
        let w = self.he_uniform(vec![out_c, in_c, k, k], in_c * k * k);
        let wkey = format!("{id}.weight");
        self.tensors.insert(wkey.clone(), w);
        let mut weights = BTreeMap::from([("weight".to_string(), wkey)]);
        if bias {
            let b = self.he_uniform(vec![out_c], in_c * k * k);
            let bkey = format!("{id}.bias");
            self.tensors.insert(bkey.clone(), b);
            weights.insert("bias".to_string(), bkey);
        }
        self.push(Node {
            id: id.to_string(),
            op: Op::Conv2d,
            inputs: vec![x.to_string()],
            outputs: vec![format!("{id}_out")],
            attrs: BTreeMap::from([
                ("padding".to_string(), AttrValue::Int(pad as i64)),
                ("stride".to_string(), AttrValue::Int(stride as i64)),
            ]),
            weights,
        })
    }

    pub fn bn(&mut self, id: &str, x: &str, c: usize) -> String {
        let mut vec_of = |lo: f32, hi: f32| {
            let span = hi - lo;
            Tensor::new(
                vec![c],
                (0..c).map(|_| lo + self.rng.next_f32() * span).collect(),
            )
        };
        let gamma = vec_of(0.5, 1.5);
        let beta = vec_of(-0.1, 0.1);
        let mean = vec_of(-0.1, 0.1);
        let var = vec_of(0.5, 1.5);
        let mut weights = BTreeMap::new();
        for (role, t) in [
            ("gamma", gamma),
            ("beta", beta),
            ("running_mean", mean),
            ("running_var", var),
        ] {
            let key = format!("{id}.{role}");
            self.tensors.insert(key.clone(), t);
            weights.insert(role.to_string(), key);
        }
        self.push(Node {
            id: id.to_string(),
            op: Op::Batchnorm2d,
            inputs: vec![x.to_string()],
            outputs: vec![format!("{id}_out")],
            attrs: BTreeMap::from([("epsilon".to_string(), AttrValue::Float(1e-5))]),
            weights,
        })
    }

    fn simple(&mut self, id: &str, op: Op, inputs: Vec<String>, attrs: crate::graph::Attrs) -> String {
        self.push(Node {
            id: id.to_string(),
            op,
            inputs,
            outputs: vec![format!("{id}_out")],
            attrs,
            weights: BTreeMap::new(),
        })
    }

    pub fn relu(&mut self, id: &str, x: &str) -> String {
        self.simple(id, Op::Relu, vec![x.to_string()], BTreeMap::new())
    }

    pub fn add(&mut self, id: &str, xs: &[String]) -> String {
        self.simple(id, Op::Add, xs.to_vec(), BTreeMap::new())
    }

    pub fn concat(&mut self, id: &str, xs: &[String]) -> String {
        self.simple(id, Op::Concat, xs.to_vec(), BTreeMap::new())
    }

    pub fn maxpool(&mut self, id: &str, x: &str, kernel: usize, stride: usize, pad: usize) -> String {
        self.simple(
            id,
            Op::Maxpool2d,
            vec![x.to_string()],
            BTreeMap::from([
                ("kernel".to_string(), AttrValue::Int(kernel as i64)),
                ("padding".to_string(), AttrValue::Int(pad as i64)),
                ("stride".to_string(), AttrValue::Int(stride as i64)),
            ]),
        )
    }

    pub fn gap(&mut self, id: &str, x: &str) -> String {
        self.simple(id, Op::GlobalAvgPool, vec![x.to_string()], BTreeMap::new())
    }

    pub fn upsample(&mut self, id: &str, x: &str, scale: usize) -> String {
        self.simple(
            id,
            Op::UpsampleNearest,
            vec![x.to_string()],
            BTreeMap::from([("scale".to_string(), AttrValue::Int(scale as i64))]),
        )
    }

    pub fn dense(&mut self, id: &str, x: &str, in_f: usize, out_f: usize, bias: bool) -> String {
        let w = self.he_uniform(vec![out_f, in_f], in_f);
        let wkey = format!("{id}.weight");
        self.tensors.insert(wkey.clone(), w);
        let mut weights = BTreeMap::from([("weight".to_string(), wkey)]);
        if bias {
            let b = self.he_uniform(vec![out_f], in_f);
            let bkey = format!("{id}.bias");
            self.tensors.insert(bkey.clone(), b);
            weights.insert("bias".to_string(), bkey);
        }
        self.push(Node {
            id: id.to_string(),
            op: Op::Dense,
            inputs: vec![x.to_string()],
            outputs: vec![format!("{id}_out")],
            attrs: BTreeMap::new(),
            weights,
        })
    }

    pub fn softmax(&mut self, id: &str, x: &str) -> String {
        self.simple(id, Op::Softmax, vec![x.to_string()], BTreeMap::new())
    }

    pub fn finish(self, outputs: Vec<String>) -> ModelGraph {
        let g = ModelGraph {
            name: self.name.clone(),
            nodes: self.nodes,
            inputs: self.inputs,
            outputs,
            tensors: self.tensors,
            metadata: BTreeMap::from([
                ("arch".to_string(), self.name),
                ("generator".to_string(), "splitmix64-he-uniform".to_string()),
                ("seed".to_string(), self.seed.to_string()),
            ]),
        };
        g.validate().expect("builder emitted an invalid graph");
        g
    }
}

/// conv-bn-relu chain + GAP + dense classifier. Only local groups plus the
/// frozen classifier head.
pub fn build_plain_cnn(widths: &[usize], classes: usize, seed: u64) -> ModelGraph {
    assert!(!widths.is_empty());
    let mut b = GraphBuilder::new("plain_cnn", seed);
    let mut x = b.input("x", vec![1, 3, 32, 32]);
    let mut in_c = 3;
    for (i, &w) in widths.iter().enumerate() {
        x = b.conv(&format!("conv{i}"), &x, in_c, w, 3, 1, 1, false);
        x = b.bn(&format!("bn{i}"), &x, w);
        x = b.relu(&format!("relu{i}"), &x);
        in_c = w;
    }
    let p = b.gap("gap", &x);
    let logits = b.dense("fc", &p, in_c, classes, true);
    b.finish(vec![logits])
}

/// Bare conv chain with the last conv as graph output (used by kernel
/// linearity checks and frozen-group tests).
pub fn build_plain_cnn_convs_only(widths: &[usize], seed: u64) -> ModelGraph {
    let mut b = GraphBuilder::new("conv_chain", seed);
    let mut x = b.input("x", vec![1, 3, 16, 16]);
    let mut in_c = 3;
    for (i, &w) in widths.iter().enumerate() {
        x = b.conv(&format!("conv{i}"), &x, in_c, w, 3, 1, 1, false);
        in_c = w;
    }
    b.finish(vec![x])
}

fn scaled(w: usize, mult: f64) -> usize {
    ((w as f64 * mult).round() as usize).max(1)
}

/// Standard 4-stage basic-block ResNet18 with 1x1 downsample convs at stage
/// boundaries, GAP and a dense head.
pub fn build_resnet18(classes: usize, width_multiplier: f64, seed: u64) -> ModelGraph {
    assert!(width_multiplier > 0.0);
    let widths: Vec<usize> = [64, 128, 256, 512]
        .iter()
        .map(|&w| scaled(w, width_multiplier))
        .collect();
    let mut b = GraphBuilder::new("resnet18", seed);
    let x = b.input("x", vec![1, 3, 224, 224]);
    let mut cur = b.conv("stem", &x, 3, widths[0], 7, 2, 3, false);
    cur = b.bn("stem_bn", &cur, widths[0]);
    cur = b.relu("stem_relu", &cur);
    cur = b.maxpool("stem_pool", &cur, 3, 2, 1);
    let mut in_c = widths[0];
    for (s, &w) in widths.iter().enumerate() {
        for blk in 0..2 {
            let id = format!("s{s}b{blk}");
            let stride = if s > 0 && blk == 0 { 2 } else { 1 };
            let mut y = b.conv(&format!("{id}_conv1"), &cur, in_c, w, 3, stride, 1, false);
            y = b.bn(&format!("{id}_bn1"), &y, w);
            y = b.relu(&format!("{id}_relu1"), &y);
            y = b.conv(&format!("{id}_conv2"), &y, w, w, 3, 1, 1, false);
            y = b.bn(&format!("{id}_bn2"), &y, w);
            let skip = if stride != 1 || in_c != w {
                let d = b.conv(&format!("{id}_ds"), &cur, in_c, w, 1, stride, 0, false);
                b.bn(&format!("{id}_ds_bn"), &d, w)
            } else {
                cur.clone()
            };
            cur = b.add(&format!("{id}_add"), &[y, skip]);
            cur = b.relu(&format!("{id}_relu2"), &cur);
            in_c = w;
        }
    }
    let p = b.gap("gap", &cur);
    let logits = b.dense("fc", &p, in_c, classes, true);
    b.finish(vec![logits])
}

/// Appends a pre-activation bottleneck encoder (BN-ReLU-Conv ordering,
/// conv1/conv2/conv3 per block) and returns one tap edge per stage.
pub fn preact_encoder(
    b: &mut GraphBuilder,
    input_edge: &str,
    mut in_c: usize,
    stage_widths: &[usize],
    blocks_per_stage: usize,
) -> Vec<String> {
    let mut cur = input_edge.to_string();
    let mut taps = Vec::new();
    for (s, &w) in stage_widths.iter().enumerate() {
        let mid = (w / 4).max(1);
        for blk in 0..blocks_per_stage {
            let id = format!("e{s}b{blk}");
            let stride = if s > 0 && blk == 0 { 2 } else { 1 };
            let mut y = b.bn(&format!("{id}_bn1"), &cur, in_c);
            y = b.relu(&format!("{id}_relu1"), &y);
            let preact = y.clone();
            y = b.conv(&format!("{id}_conv1"), &y, in_c, mid, 1, 1, 0, false);
            y = b.bn(&format!("{id}_bn2"), &y, mid);
            y = b.relu(&format!("{id}_relu2"), &y);
            y = b.conv(&format!("{id}_conv2"), &y, mid, mid, 3, stride, 1, false);
            y = b.bn(&format!("{id}_bn3"), &y, mid);
            y = b.relu(&format!("{id}_relu3"), &y);
            y = b.conv(&format!("{id}_conv3"), &y, mid, w, 1, 1, 0, false);
            let skip = if stride != 1 || in_c != w {
                b.conv(&format!("{id}_proj"), &preact, in_c, w, 1, stride, 0, false)
            } else {
                cur.clone()
            };
            cur = b.add(&format!("{id}_add"), &[y, skip]);
            in_c = w;
        }
        taps.push(cur.clone());
    }
    taps
}

/// Standalone pre-activation encoder whose stage taps are the graph outputs.
pub fn build_preact_resnet_encoder(
    stage_widths: &[usize],
    blocks_per_stage: usize,
    seed: u64,
) -> ModelGraph {
    let mut b = GraphBuilder::new("preact_encoder", seed);
    let x = b.input("x", vec![1, 3, 64, 64]);
    let stem = b.conv("stem", &x, 3, stage_widths[0], 3, 1, 1, false);
    let taps = preact_encoder(&mut b, &stem, stage_widths[0], stage_widths, blocks_per_stage);
    b.finish(taps)
}

/// Pre-activation encoder plus three structurally identical U-Net decoder
/// branches with heads of 2, 2 and `nc_classes` channels.
pub fn build_unet_hovernet(
    stage_widths: &[usize],
    blocks_per_stage: usize,
    decoder_widths: &[usize],
    nc_classes: usize,
    seed: u64,
) -> ModelGraph {
    assert!(stage_widths.len() >= 2);
    assert_eq!(decoder_widths.len(), stage_widths.len() - 1);
    let mut b = GraphBuilder::new("hovernet_toy", seed);
    let x = b.input("x", vec![1, 3, 64, 64]);
    let stem = b.conv("stem", &x, 3, stage_widths[0], 3, 1, 1, false);
    let taps = preact_encoder(&mut b, &stem, stage_widths[0], stage_widths, blocks_per_stage);

    let branches = [("np", 2), ("hv", 2), ("nc", nc_classes)];
    let mut outputs = Vec::new();
    for (branch, head_c) in branches {
        let mut cur = taps.last().unwrap().clone();
        let mut cur_c = *stage_widths.last().unwrap();
        for (lvl, &w) in decoder_widths.iter().enumerate() {
            let tap_idx = stage_widths.len() - 2 - lvl;
            let id = format!("{branch}_d{lvl}");
            let up = b.upsample(&format!("{id}_up"), &cur, 2);
            let cat = b.concat(&format!("{id}_cat"), &[up, taps[tap_idx].clone()]);
            let cat_c = cur_c + stage_widths[tap_idx];
            cur = b.conv(&format!("{id}_conv"), &cat, cat_c, w, 3, 1, 1, false);
            cur = b.bn(&format!("{id}_bn"), &cur, w);
            cur = b.relu(&format!("{id}_relu"), &cur);
            cur_c = w;
        }
        let head = b.conv(&format!("{branch}_head"), &cur, cur_c, head_c, 1, 1, 0, true);
        outputs.push(head);
    }
    b.finish(outputs)
}

/// Toy HoverNet configuration used throughout the test suite.
pub fn build_hovernet_toy(seed: u64) -> ModelGraph {
    build_unet_hovernet(&[16, 32, 64, 128], 2, &[64, 32, 16], 5, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{save_model, shape_check};

    #[test]
    fn builders_shape_check_and_are_deterministic() {
        let models = [
            build_plain_cnn(&[8, 4], 3, 42),
            build_resnet18(10, 0.25, 42),
            build_preact_resnet_encoder(&[16, 32], 2, 42),
            build_hovernet_toy(42),
        ];
        for g in &models {
            shape_check(g).unwrap();
        }
        for g in &models {
            let rebuilt = match g.name.as_str() {
                "plain_cnn" => build_plain_cnn(&[8, 4], 3, 42),
                "resnet18" => build_resnet18(10, 0.25, 42),
                "preact_encoder" => build_preact_resnet_encoder(&[16, 32], 2, 42),
                _ => build_hovernet_toy(42),
            };
            assert_eq!(save_model(g), save_model(&rebuilt));
        }
    }

    #[test]
    fn hovernet_toy_branch_shapes() {
        let g = build_hovernet_toy(1);
        let report = shape_check(&g).unwrap();
        let expected_c = [2usize, 2, 5];
        for (out, c) in g.outputs.iter().zip(expected_c) {
            assert_eq!(report.get(out).unwrap(), &[1, c, 64, 64]);
        }
    }

    #[test]
    fn resnet18_executes() {
        let g = build_resnet18(10, 0.125, 9);
        let mut inputs = std::collections::BTreeMap::new();
        inputs.insert(
            "x".to_string(),
            crate::executor::random_input(&[1, 3, 224, 224], 42),
        );
        // smaller input keeps the smoke test quick
        let mut g2 = g.clone();
        g2.inputs[0].shape = vec![1, 3, 64, 64];
        inputs.insert(
            "x".to_string(),
            crate::executor::random_input(&[1, 3, 64, 64], 42),
        );
        let out = crate::executor::run(&g2, &inputs).unwrap();
        assert_eq!(out["fc_out"].shape, vec![1, 10]);
    }
}
