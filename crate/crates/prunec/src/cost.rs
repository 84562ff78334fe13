//! Parameter and FLOP accounting plus report assembly.
//!
//! FLOPs count multiply and add separately (2 per MAC) for conv/dense; the
//! convention is stated in the report header since published numbers vary.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::executor::LatencyStats;
use crate::graph::{shape_check, ModelGraph, Op};

pub const FLOP_CONVENTION: &str = "conv/dense: 2*MACs; batchnorm: 2 per element (fused scale-shift); relu/add/pool/upsample: 1 per output element; softmax: 5 per element";

#[derive(Debug, Clone, serde::Serialize)]
pub struct CostReport {
    pub total_params: u64,
    /// Excludes batchnorm running mean/var, which are counted in
    /// `total_params` for byte accounting but are not trainable.
    pub trainable_params: u64,
    pub per_node_params: BTreeMap<String, u64>,
    pub model_bytes: u64,
    pub total_flops: Option<u64>,
    pub per_node_flops: Option<BTreeMap<String, u64>>,
    pub latency: Option<LatencyStats>,
    pub flop_convention: &'static str,
}

/// Parameter counts: conv i*o*kH*kW (+o bias), batchnorm 4*C (2*C
/// trainable), dense in*out (+out bias).
pub fn count_params(g: &ModelGraph) -> CostReport {
    let mut per_node = BTreeMap::new();
    let mut total: u64 = 0;
    let mut trainable: u64 = 0;
    for node in &g.nodes {
        let (p, t): (u64, u64) = match node.op {
            Op::Conv2d | Op::Dense => {
                let w = g.tensors[&node.weights["weight"]].numel() as u64;
                let b = node
                    .weights
                    .get("bias")
                    .map_or(0, |k| g.tensors[k].numel() as u64);
                (w + b, w + b)
            }
            Op::Batchnorm2d => {
                let c = g.tensors[&node.weights["gamma"]].numel() as u64;
                (4 * c, 2 * c)
            }
            _ => (0, 0),
        };
        if p > 0 {
            per_node.insert(node.id.clone(), p);
        }
        total += p;
        trainable += t;
    }
    CostReport {
        total_params: total,
        trainable_params: trainable,
        per_node_params: per_node,
        model_bytes: 4 * total,
        total_flops: None,
        per_node_flops: None,
        latency: None,
        flop_convention: FLOP_CONVENTION,
    }
}

/// FLOPs at a given input shape (replaces the first model input's shape).
pub fn count_flops(g: &ModelGraph, input_shape: &[usize]) -> Result<CostReport> {
    let mut g2 = g.clone();
    if !g2.inputs.is_empty() {
        g2.inputs[0].shape = input_shape.to_vec();
    }
    let shapes = shape_check(&g2)?;
    let numel = |edge: &str| -> u64 { shapes.get(edge).unwrap().iter().product::<usize>() as u64 };

    let mut per_node = BTreeMap::new();
    let mut total: u64 = 0;
    for node in &g2.nodes {
        let f: u64 = match node.op {
            Op::Conv2d => {
                let w = &g2.tensors[&node.weights["weight"]].shape;
                let out = shapes.get(&node.outputs[0]).unwrap();
                let (o, i, kh, kw) = (w[0] as u64, w[1] as u64, w[2] as u64, w[3] as u64);
                let spatial = (out[2] * out[3]) as u64;
                let mut f = 2 * i * o * kh * kw * spatial;
                if node.weights.contains_key("bias") {
                    f += o * spatial;
                }
                f
            }
            Op::Dense => {
                let w = &g2.tensors[&node.weights["weight"]].shape;
                let mut f = 2 * (w[0] * w[1]) as u64;
                if node.weights.contains_key("bias") {
                    f += w[0] as u64;
                }
                f
            }
            Op::Batchnorm2d => 2 * numel(&node.outputs[0]),
            Op::Relu | Op::Add | Op::Maxpool2d | Op::GlobalAvgPool | Op::UpsampleNearest => {
                numel(&node.outputs[0])
            }
            Op::Softmax => 5 * numel(&node.outputs[0]),
            Op::Input | Op::Concat => 0,
        };
        if f > 0 {
            per_node.insert(node.id.clone(), f);
        }
        total += f;
    }

    let mut report = count_params(g);
    report.total_flops = Some(total);
    report.per_node_flops = Some(per_node);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depgraph::build_groups;
    use crate::importance::Heuristic;
    use crate::planner::{plan_oneshot, PlanOptions};
    use crate::rewriter::apply_plan;
    use crate::zoo;

    #[test]
    fn conv_param_hand_count() {
        let mut b = zoo::GraphBuilder::new("t", 1);
        let x = b.input("x", vec![1, 3, 8, 8]);
        let y = b.conv("c1", &x, 3, 16, 3, 1, 1, true);
        let g = b.finish(vec![y]);
        let r = count_params(&g);
        assert_eq!(r.total_params, 3 * 16 * 9 + 16);
        assert_eq!(r.model_bytes, 4 * r.total_params);
        assert_eq!(
            r.total_params,
            r.per_node_params.values().sum::<u64>()
        );
    }

    #[test]
    fn conv_flops_hand_count() {
        let mut b = zoo::GraphBuilder::new("t", 1);
        let x = b.input("x", vec![1, 3, 32, 32]);
        let y = b.conv("c1", &x, 3, 16, 3, 1, 1, false);
        let g = b.finish(vec![y]);
        let r = count_flops(&g, &[1, 3, 32, 32]).unwrap();
        assert_eq!(r.total_flops, Some(2 * 3 * 16 * 9 * 32 * 32));
    }

    #[test]
    fn plain_cnn_params_match_closed_form() {
        let widths = [8usize, 4];
        let g = zoo::build_plain_cnn(&widths, 3, 9);
        let r = count_params(&g);
        let mut expect = 0u64;
        let mut in_c = 3u64;
        for &w in &widths {
            expect += in_c * w as u64 * 9; // conv
            expect += 4 * w as u64; // bn
            in_c = w as u64;
        }
        expect += in_c * 3 + 3; // dense head
        assert_eq!(r.total_params, expect);
    }

    #[test]
    fn params_strictly_decrease_under_pruning() {
        let g = zoo::build_resnet18(10, 0.25, 2);
        let base = count_params(&g).total_params;
        let groups = build_groups(&g).unwrap();
        let plan = plan_oneshot(&g, &groups, Heuristic::L1, 0.25, &PlanOptions::default()).unwrap();
        let pruned = apply_plan(&g, &plan).unwrap();
        let after = count_params(&pruned).total_params;
        assert!(after < base);
        // superlinear: parameter reduction is faster than linear
        assert!((after as f64) < 0.75 * base as f64);
    }

    #[test]
    fn counts_invariant_under_roundtrip() {
        let g = zoo::build_hovernet_toy(4);
        let (m, w) = crate::graph::save_model(&g);
        let g2 = crate::graph::load_model(&m, &w).unwrap();
        assert_eq!(count_params(&g).total_params, count_params(&g2).total_params);
        assert_eq!(
            count_flops(&g, &[1, 3, 64, 64]).unwrap().total_flops,
            count_flops(&g2, &[1, 3, 64, 64]).unwrap().total_flops
        );
    }
}
