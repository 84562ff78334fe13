use std::collections::BTreeMap;

use super::{ModelGraph, Node, Op};
use crate::error::{Error, Result};

/// Inferred shape for every edge of the graph, keyed by edge name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeReport {
    pub shapes: BTreeMap<String, Vec<usize>>,
}

impl ShapeReport {
    pub fn get(&self, edge: &str) -> Option<&[usize]> {
        self.shapes.get(edge).map(|s| s.as_slice())
    }
}

fn fmt_shape(s: &[usize]) -> String {
    let dims: Vec<String> = s.iter().map(|d| d.to_string()).collect();
    format!("[{}]", dims.join("x"))
}

fn mismatch(node: &Node, expected: String, found: String) -> Error {
    Error::ShapeMismatch {
        node: node.id.clone(),
        expected,
        found,
    }
}

fn conv_out_dim(in_dim: usize, k: usize, stride: usize, pad: usize, node: &Node) -> Result<usize> {
    let padded = in_dim + 2 * pad;
    if padded < k {
        return Err(mismatch(
            node,
            format!("input dim >= kernel {k} after padding"),
            format!("{in_dim} (+2*{pad})"),
        ));
    }
    Ok((padded - k) / stride + 1)
}

/// Infers every edge shape from the model inputs, verifying channel counts
/// against weight shapes and the add/concat/dense constraints. conv2d uses
/// H' = floor((H + 2*pad - kH)/stride) + 1.
pub fn shape_check(g: &ModelGraph) -> Result<ShapeReport> {
    let mut shapes: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let input_specs: BTreeMap<&str, &[usize]> = g
        .inputs
        .iter()
        .map(|s| (s.name.as_str(), s.shape.as_slice()))
        .collect();

    for node in &g.nodes {
        let ins: Vec<&[usize]> = node
            .inputs
            .iter()
            .map(|name| shapes.get(name).map(|s| s.as_slice()).unwrap())
            .collect();
        let out_shape: Vec<usize> = match node.op {
            Op::Input => {
                let spec = input_specs.get(node.outputs[0].as_str()).ok_or_else(|| {
                    Error::MalformedManifest(format!(
                        "input node `{}` has no TensorSpec",
                        node.id
                    ))
                })?;
                if spec.len() != 4 {
                    return Err(mismatch(node, "NCHW input".into(), fmt_shape(spec)));
                }
                spec.to_vec()
            }
            Op::Conv2d => {
                let x = require_4d(node, ins[0])?;
                let w = &g.conv_weight(node)?.shape;
                let (o, i, kh, kw) = (w[0], w[1], w[2], w[3]);
                if x[1] != i {
                    return Err(mismatch(
                        node,
                        format!("{i} input channels"),
                        format!("{}", x[1]),
                    ));
                }
                let s = node.conv_stride()?;
                let p = node.conv_padding()?;
                let h = conv_out_dim(x[2], kh, s, p, node)?;
                let wd = conv_out_dim(x[3], kw, s, p, node)?;
                vec![x[0], o, h, wd]
            }
            Op::Batchnorm2d => {
                let x = require_4d(node, ins[0])?;
                let c = g.opt_weight(node, "gamma")?.unwrap().shape[0];
                if x[1] != c {
                    return Err(mismatch(node, format!("{c} channels"), format!("{}", x[1])));
                }
                x.to_vec()
            }
            Op::Relu | Op::Softmax => ins[0].to_vec(),
            Op::Add => {
                let first = require_4d(node, ins[0])?;
                for other in &ins[1..] {
                    if *other != first {
                        return Err(mismatch(node, fmt_shape(first), fmt_shape(other)));
                    }
                }
                first.to_vec()
            }
            Op::Concat => {
                let first = require_4d(node, ins[0])?;
                let mut c = first[1];
                for other in &ins[1..] {
                    let o = require_4d(node, other)?;
                    if o[0] != first[0] || o[2] != first[2] || o[3] != first[3] {
                        return Err(mismatch(node, fmt_shape(first), fmt_shape(o)));
                    }
                    c += o[1];
                }
                vec![first[0], c, first[2], first[3]]
            }
            Op::Maxpool2d => {
                let x = require_4d(node, ins[0])?;
                let k = node.pool_kernel()?;
                let s = node.pool_stride()?;
                let p = node.pool_padding()?;
                let h = conv_out_dim(x[2], k, s, p, node)?;
                let w = conv_out_dim(x[3], k, s, p, node)?;
                vec![x[0], x[1], h, w]
            }
            Op::GlobalAvgPool => {
                let x = require_4d(node, ins[0])?;
                vec![x[0], x[1], 1, 1]
            }
            Op::UpsampleNearest => {
                let x = require_4d(node, ins[0])?;
                let s = node.upsample_scale()?;
                vec![x[0], x[1], x[2] * s, x[3] * s]
            }
            Op::Dense => {
                let x = ins[0];
                let features = match x.len() {
                    4 => {
                        if x[2] * x[3] > 1 {
                            return Err(Error::UnsupportedFlatten(node.id.clone()));
                        }
                        x[1]
                    }
                    2 => x[1],
                    _ => return Err(mismatch(node, "[N,C,1,1] or [N,F]".into(), fmt_shape(x))),
                };
                let w = &g.opt_weight(node, "weight")?.unwrap().shape;
                if features != w[1] {
                    return Err(mismatch(
                        node,
                        format!("{} input features", w[1]),
                        format!("{features}"),
                    ));
                }
                vec![x[0], w[0]]
            }
        };
        for out in &node.outputs {
            shapes.insert(out.clone(), out_shape.clone());
        }
    }
    Ok(ShapeReport { shapes })
}

fn require_4d<'a>(node: &Node, s: &'a [usize]) -> Result<&'a [usize]> {
    if s.len() != 4 {
        return Err(mismatch(node, "NCHW tensor".into(), fmt_shape(s)));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::GraphBuilder;

    #[test]
    fn conv_arithmetic_same_padding() {
        let mut b = GraphBuilder::new("t", 1);
        let x = b.input("x", vec![1, 3, 32, 32]);
        let y = b.conv("c1", &x, 3, 16, 3, 1, 1, false);
        let g = b.finish(vec![y.clone()]);
        let report = shape_check(&g).unwrap();
        assert_eq!(report.get(&y).unwrap(), &[1, 16, 32, 32]);
    }

    #[test]
    fn conv_stride_two() {
        // 3x3 conv on 5x5 input, stride 2, pad 1 -> 3x3
        let mut b = GraphBuilder::new("t", 1);
        let x = b.input("x", vec![1, 1, 5, 5]);
        let y = b.conv("c1", &x, 1, 1, 3, 2, 1, false);
        let g = b.finish(vec![y.clone()]);
        let report = shape_check(&g).unwrap();
        assert_eq!(report.get(&y).unwrap(), &[1, 1, 3, 3]);
    }

    #[test]
    fn add_of_unequal_channels_fails() {
        let mut b = GraphBuilder::new("t", 1);
        let x = b.input("x", vec![1, 3, 32, 32]);
        let a = b.conv("a", &x, 3, 16, 3, 1, 1, false);
        let c = b.conv("b", &x, 3, 8, 3, 1, 1, false);
        let s = b.add("sum", &[a, c]);
        let g = b.finish(vec![s]);
        assert!(matches!(shape_check(&g), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn dense_after_spatial_tensor_is_rejected() {
        let mut b = GraphBuilder::new("t", 1);
        let x = b.input("x", vec![1, 3, 8, 8]);
        let y = b.conv("c1", &x, 3, 4, 3, 1, 1, false);
        let d = b.dense("fc", &y, 4, 10, true);
        let g = b.finish(vec![d]);
        assert!(matches!(shape_check(&g), Err(Error::UnsupportedFlatten(_))));
    }
}
