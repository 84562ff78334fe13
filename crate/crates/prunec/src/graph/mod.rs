//! Network-graph data model: typed tensor operations, attached weights,
//! shape inference and deterministic topological ordering.

mod format;
mod shape;

pub use format::{load_model, save_model};
pub use shape::{shape_check, ShapeReport};

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Input,
    Conv2d,
    Batchnorm2d,
    Relu,
    Add,
    Concat,
    Maxpool2d,
    GlobalAvgPool,
    UpsampleNearest,
    Dense,
    Softmax,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Conv2d => "conv2d",
            Op::Batchnorm2d => "batchnorm2d",
            Op::Relu => "relu",
            Op::Add => "add",
            Op::Concat => "concat",
            Op::Maxpool2d => "maxpool2d",
            Op::GlobalAvgPool => "global_avg_pool",
            Op::UpsampleNearest => "upsample_nearest",
            Op::Dense => "dense",
            Op::Softmax => "softmax",
        }
    }

    /// Ops that neither create nor consume channel identity: the channel
    /// list of the input flows through unchanged.
    pub fn is_channel_preserving(&self) -> bool {
        matches!(
            self,
            Op::Batchnorm2d
                | Op::Relu
                | Op::Maxpool2d
                | Op::UpsampleNearest
                | Op::GlobalAvgPool
                | Op::Softmax
        )
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Int(i64),
    Float(f64),
}

impl AttrValue {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            AttrValue::Int(v) => Some(*v),
            AttrValue::Float(_) => None,
        }
    }
    pub fn as_float(&self) -> Option<f64> {
        match self {
            AttrValue::Int(v) => Some(*v as f64),
            AttrValue::Float(v) => Some(*v),
        }
    }
}

pub type Attrs = BTreeMap<String, AttrValue>;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    F32,
}

/// A weight tensor: shape plus materialized f32 data.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub op: Op,
    /// Edge (tensor value) names consumed, in order.
    pub inputs: Vec<String>,
    /// Edge names produced, in order.
    pub outputs: Vec<String>,
    pub attrs: Attrs,
    /// Parameter role -> key into the graph tensor table.
    pub weights: BTreeMap<String, String>,
}

impl Node {
    fn attr_int(&self, key: &str, default: i64) -> Result<i64> {
        match self.attrs.get(key) {
            None => Ok(default),
            Some(v) => v.as_int().ok_or_else(|| {
                Error::MalformedManifest(format!("node `{}`: attr `{key}` must be an integer", self.id))
            }),
        }
    }

    pub fn conv_stride(&self) -> Result<usize> {
        let s = self.attr_int("stride", 1)?;
        if s < 1 {
            return Err(Error::MalformedManifest(format!(
                "node `{}`: stride must be >= 1",
                self.id
            )));
        }
        Ok(s as usize)
    }

    pub fn conv_padding(&self) -> Result<usize> {
        let p = self.attr_int("padding", 0)?;
        if p < 0 {
            return Err(Error::MalformedManifest(format!(
                "node `{}`: padding must be >= 0",
                self.id
            )));
        }
        Ok(p as usize)
    }

    pub fn pool_kernel(&self) -> Result<usize> {
        let k = self.attr_int("kernel", 0)?;
        if k < 1 {
            return Err(Error::MalformedManifest(format!(
                "node `{}`: maxpool2d needs attr `kernel` >= 1",
                self.id
            )));
        }
        Ok(k as usize)
    }

    pub fn pool_stride(&self) -> Result<usize> {
        let k = self.pool_kernel()? as i64;
        let s = self.attr_int("stride", k)?;
        if s < 1 {
            return Err(Error::MalformedManifest(format!(
                "node `{}`: stride must be >= 1",
                self.id
            )));
        }
        Ok(s as usize)
    }

    pub fn pool_padding(&self) -> Result<usize> {
        let p = self.attr_int("padding", 0)?;
        if p < 0 {
            return Err(Error::MalformedManifest(format!(
                "node `{}`: padding must be >= 0",
                self.id
            )));
        }
        Ok(p as usize)
    }

    pub fn upsample_scale(&self) -> Result<usize> {
        let s = self.attr_int("scale", 0)?;
        if s < 2 {
            return Err(Error::MalformedManifest(format!(
                "node `{}`: upsample_nearest needs integer attr `scale` >= 2",
                self.id
            )));
        }
        Ok(s as usize)
    }

    pub fn bn_epsilon(&self) -> Result<f64> {
        match self.attrs.get("epsilon") {
            None => Ok(1e-5),
            Some(v) => {
                let e = v.as_float().ok_or_else(|| {
                    Error::MalformedManifest(format!("node `{}`: epsilon must be numeric", self.id))
                })?;
                if e <= 0.0 {
                    return Err(Error::MalformedManifest(format!(
                        "node `{}`: epsilon must be > 0",
                        self.id
                    )));
                }
                Ok(e)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub name: String,
    /// Nodes in a valid (stored) topological order.
    pub nodes: Vec<Node>,
    pub inputs: Vec<TensorSpec>,
    pub outputs: Vec<String>,
    pub tensors: BTreeMap<String, Tensor>,
    pub metadata: BTreeMap<String, String>,
}

impl ModelGraph {
    /// Structural + per-op validation; does not run shape inference
    /// (see [`shape_check`] for that).
    pub fn validate(&self) -> Result<()> {
        let mut producers: HashMap<&str, &str> = HashMap::new();
        let mut ids = HashSet::new();
        for spec in &self.inputs {
            if spec.shape.is_empty() || spec.shape.contains(&0) {
                return Err(Error::MalformedManifest(format!(
                    "input `{}`: shape must be non-empty with every dimension >= 1",
                    spec.name
                )));
            }
        }
        let input_specs: HashMap<&str, &TensorSpec> =
            self.inputs.iter().map(|s| (s.name.as_str(), s)).collect();
        let mut seen_inputs = BTreeSet::new();
        for node in &self.nodes {
            if !ids.insert(node.id.as_str()) {
                return Err(Error::MalformedManifest(format!(
                    "duplicate node id `{}`",
                    node.id
                )));
            }
            for inp in &node.inputs {
                if !producers.contains_key(inp.as_str()) {
                    // stored order must be topological; a consumer before its
                    // producer (or of an unknown edge) fails here
                    return Err(Error::CyclicGraph(format!(
                        "node `{}` consumes `{inp}` which is not produced earlier",
                        node.id
                    )));
                }
            }
            for out in &node.outputs {
                if producers.insert(out.as_str(), node.id.as_str()).is_some() {
                    return Err(Error::MalformedManifest(format!(
                        "edge `{out}` produced more than once"
                    )));
                }
            }
            if node.op == Op::Input {
                if !node.inputs.is_empty() || node.outputs.len() != 1 {
                    return Err(Error::MalformedManifest(format!(
                        "input node `{}` must have no inputs and one output",
                        node.id
                    )));
                }
                let out = &node.outputs[0];
                if !input_specs.contains_key(out.as_str()) {
                    return Err(Error::MalformedManifest(format!(
                        "input node `{}` output `{out}` has no TensorSpec",
                        node.id
                    )));
                }
                seen_inputs.insert(out.clone());
            }
            self.validate_node(node)?;
        }
        if seen_inputs.len() != self.inputs.len() {
            return Err(Error::MalformedManifest(
                "every model input spec needs a matching input node".into(),
            ));
        }
        for out in &self.outputs {
            if !producers.contains_key(out.as_str()) {
                return Err(Error::MalformedManifest(format!(
                    "graph output `{out}` is not produced by any node"
                )));
            }
        }
        Ok(())
    }

    fn weight(&self, node: &Node, role: &str) -> Result<&Tensor> {
        let key = node.weights.get(role).ok_or_else(|| Error::MalformedManifest(format!(
            "node `{}`: missing weight role `{role}`",
            node.id
        )))?;
        self.tensors.get(key).ok_or_else(|| Error::DanglingTensorRef {
            node: node.id.clone(),
            tensor: key.clone(),
        })
    }

    pub fn opt_weight(&self, node: &Node, role: &str) -> Result<Option<&Tensor>> {
        match node.weights.get(role) {
            None => Ok(None),
            Some(key) => self
                .tensors
                .get(key)
                .map(Some)
                .ok_or_else(|| Error::DanglingTensorRef {
                    node: node.id.clone(),
                    tensor: key.clone(),
                }),
        }
    }

    pub fn conv_weight(&self, node: &Node) -> Result<&Tensor> {
        self.weight(node, "weight")
    }

    fn validate_node(&self, node: &Node) -> Result<()> {
        match node.op {
            Op::Conv2d => {
                node.conv_stride()?;
                node.conv_padding()?;
                if node.attr_int("dilation", 1)? != 1 {
                    return Err(Error::Unsupported(format!(
                        "node `{}`: dilation != 1",
                        node.id
                    )));
                }
                if node.attr_int("groups", 1)? != 1 {
                    return Err(Error::Unsupported(format!("node `{}`: groups != 1", node.id)));
                }
                let w = self.weight(node, "weight")?;
                if w.shape.len() != 4 {
                    return Err(Error::MalformedManifest(format!(
                        "node `{}`: conv weight must be [O,I,kH,kW]",
                        node.id
                    )));
                }
                if let Some(b) = self.opt_weight(node, "bias")? {
                    if b.shape != vec![w.shape[0]] {
                        return Err(Error::MalformedManifest(format!(
                            "node `{}`: conv bias shape must be [O]",
                            node.id
                        )));
                    }
                }
            }
            Op::Batchnorm2d => {
                node.bn_epsilon()?;
                let gamma = self.weight(node, "gamma")?;
                let c = gamma.shape.clone();
                if c.len() != 1 {
                    return Err(Error::MalformedManifest(format!(
                        "node `{}`: batchnorm vectors must be [C]",
                        node.id
                    )));
                }
                for role in ["beta", "running_mean", "running_var"] {
                    let t = self.weight(node, role)?;
                    if t.shape != c {
                        return Err(Error::MalformedManifest(format!(
                            "node `{}`: batchnorm `{role}` shape mismatch",
                            node.id
                        )));
                    }
                }
                let var = self.weight(node, "running_var")?;
                if var.data.iter().any(|&v| v < 0.0) {
                    return Err(Error::MalformedManifest(format!(
                        "node `{}`: running_var entries must be >= 0",
                        node.id
                    )));
                }
            }
            Op::Dense => {
                let w = self.weight(node, "weight")?;
                if w.shape.len() != 2 {
                    return Err(Error::MalformedManifest(format!(
                        "node `{}`: dense weight must be [out,in]",
                        node.id
                    )));
                }
                if let Some(b) = self.opt_weight(node, "bias")? {
                    if b.shape != vec![w.shape[0]] {
                        return Err(Error::MalformedManifest(format!(
                            "node `{}`: dense bias shape must be [out]",
                            node.id
                        )));
                    }
                }
            }
            Op::Maxpool2d => {
                node.pool_kernel()?;
                node.pool_stride()?;
                node.pool_padding()?;
            }
            Op::UpsampleNearest => {
                node.upsample_scale()?;
            }
            _ => {}
        }
        // every referenced tensor key must exist
        for (role, key) in &node.weights {
            if !self.tensors.contains_key(key) {
                return Err(Error::DanglingTensorRef {
                    node: node.id.clone(),
                    tensor: key.clone(),
                });
            }
            let _ = role;
        }
        Ok(())
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Producer node index for each edge name.
    pub fn producers(&self) -> HashMap<&str, usize> {
        let mut map = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            for out in &node.outputs {
                map.insert(out.as_str(), i);
            }
        }
        map
    }
}

/// Deterministic topological order over node ids: Kahn's algorithm with
/// ties broken by id ascending, invariant to the stored node order.
pub fn topo_order(g: &ModelGraph) -> Result<Vec<String>> {
    let producers = g.producers();
    let n = g.nodes.len();
    let mut indeg = vec![0usize; n];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, node) in g.nodes.iter().enumerate() {
        let mut preds = BTreeSet::new();
        for inp in &node.inputs {
            if let Some(&p) = producers.get(inp.as_str()) {
                preds.insert(p);
            }
        }
        indeg[i] = preds.len();
        for p in preds {
            succ[p].push(i);
        }
    }
    let mut ready: BTreeSet<(&str, usize)> = g
        .nodes
        .iter()
        .enumerate()
        .filter(|(i, _)| indeg[*i] == 0)
        .map(|(i, node)| (node.id.as_str(), i))
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(&(id, i)) = ready.iter().next() {
        ready.remove(&(id, i));
        order.push(id.to_string());
        for &s in &succ[i] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.insert((g.nodes[s].id.as_str(), s));
            }
        }
    }
    if order.len() != n {
        return Err(Error::CyclicGraph("graph contains a cycle".into()));
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo;

    fn chain() -> ModelGraph {
        zoo::build_plain_cnn(&[8, 4], 3, 1)
    }

    #[test]
    fn topo_linear_chain_is_chain_order() {
        let g = chain();
        let order = topo_order(&g).unwrap();
        let stored: Vec<String> = g.nodes.iter().map(|n| n.id.clone()).collect();
        assert_eq!(order, stored);
    }

    #[test]
    fn topo_diamond_ties_break_by_id() {
        let g = diamond();
        let order = topo_order(&g).unwrap();
        assert_eq!(order, vec!["in_x", "stem", "a", "b", "join"]);
    }

    fn diamond() -> ModelGraph {
        // in -> stem -> {a, b} -> add
        let mut b = zoo::GraphBuilder::new("diamond", 7);
        let x = b.input("x", vec![1, 3, 8, 8]);
        let s = b.conv("stem", &x, 3, 4, 3, 1, 1, false);
        let a1 = b.conv("a", &s, 4, 4, 3, 1, 1, false);
        let b1 = b.conv("b", &s, 4, 4, 3, 1, 1, false);
        let j = b.add("join", &[a1, b1]);
        b.finish(vec![j])
    }

    #[test]
    fn topo_permutation_invariant() {
        let g = diamond();
        let mut permuted = g.clone();
        // swap the two branch nodes; both orders are valid topological orders
        let ia = permuted.nodes.iter().position(|n| n.id == "a").unwrap();
        let ib = permuted.nodes.iter().position(|n| n.id == "b").unwrap();
        permuted.nodes.swap(ia, ib);
        permuted.validate().unwrap();
        assert_eq!(topo_order(&g).unwrap(), topo_order(&permuted).unwrap());
    }

    #[test]
    fn validate_rejects_consumer_before_producer() {
        let mut g = diamond();
        g.nodes.swap(1, 4); // add before its inputs
        assert!(matches!(g.validate(), Err(Error::CyclicGraph(_))));
    }

    #[test]
    fn validate_rejects_dangling_tensor() {
        let mut g = chain();
        let node = g.nodes.iter_mut().find(|n| n.op == Op::Conv2d).unwrap();
        node.weights.insert("weight".into(), "missing".into());
        assert!(matches!(g.validate(), Err(Error::DanglingTensorRef { .. })));
    }
}
