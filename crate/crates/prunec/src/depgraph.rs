//! Channel dependency analysis: computes which channel positions across the
//! graph must be pruned with identical indices.
//!
//! Every conv output filter gets a fresh channel id; ids propagate forward
//! along edges. Channel-preserving ops copy the list, `add` unifies
//! position-wise via union-find, `concat` concatenates, and conv/dense
//! terminate propagation while recording input-slice loci. The resulting
//! equivalence classes are bucketed into prune groups by producer signature.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::graph::{shape_check, topo_order, ModelGraph, Op};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LocusRole {
    ConvOutFilter,
    ConvInSlice,
    BnChannel,
    DenseInFeature,
    GraphOutputChannel,
}

/// One channel position at one node (or graph output).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, serde::Serialize)]
pub struct ChannelLocus {
    pub node: String,
    pub role: LocusRole,
    pub index: usize,
}

/// An equivalence class of channel positions removed or kept together.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ChannelClass {
    pub class_id: usize,
    pub members: Vec<ChannelLocus>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    Local,
    Interdependent,
    Frozen,
}

/// All channel classes sharing one producer-layer signature; the unit a
/// sparsity ratio applies to.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PruneGroup {
    pub group_id: usize,
    pub classes: Vec<ChannelClass>,
    /// Sorted ids of the conv (or dense) nodes whose output filters feed
    /// this group.
    pub producer_signature: Vec<String>,
    pub kind: GroupKind,
    /// True when any class carries a graph output channel.
    pub touches_output: bool,
    /// True when any class crosses an encoder-to-decoder skip edge (flows
    /// into a concat from an edge with multiple consumers).
    pub spans_skip: bool,
    /// True when a dense layer produces this group's channels; such groups
    /// are never pruned.
    pub dense_producer: bool,
}

impl PruneGroup {
    pub fn len(&self) -> usize {
        self.classes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new() -> Self {
        UnionFind {
            parent: Vec::new(),
            rank: Vec::new(),
        }
    }
    fn fresh(&mut self) -> usize {
        let id = self.parent.len();
        self.parent.push(id);
        self.rank.push(0);
        id
    }
    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Computes the prune groups of a shape-checked graph. Deterministic: group
/// and class ordering follow the canonical topological order, then filter
/// index.
pub fn build_groups(g: &ModelGraph) -> Result<Vec<PruneGroup>> {
    shape_check(g)?;
    let order = topo_order(g)?;
    let topo_pos: HashMap<&str, usize> = order.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    // consumer count per edge, for skip-edge detection
    let mut consumers: HashMap<&str, usize> = HashMap::new();
    for node in &g.nodes {
        for inp in &node.inputs {
            *consumers.entry(inp.as_str()).or_insert(0) += 1;
        }
    }

    let mut uf = UnionFind::new();
    let mut loci: Vec<Vec<ChannelLocus>> = Vec::new(); // per raw channel id
    let mut producer: Vec<Option<(String, usize)>> = Vec::new();
    let mut through_concat: Vec<bool> = Vec::new();
    let mut multi_consumer: Vec<bool> = Vec::new();
    let mut lists: HashMap<&str, Vec<usize>> = HashMap::new();

    let fresh = |uf: &mut UnionFind,
                     loci: &mut Vec<Vec<ChannelLocus>>,
                     producer: &mut Vec<Option<(String, usize)>>,
                     through_concat: &mut Vec<bool>,
                     multi_consumer: &mut Vec<bool>,
                     prod: Option<(String, usize)>| {
        let id = uf.fresh();
        loci.push(Vec::new());
        producer.push(prod);
        through_concat.push(false);
        multi_consumer.push(false);
        id
    };

    for node in &g.nodes {
        match node.op {
            Op::Input => {
                let spec = g
                    .inputs
                    .iter()
                    .find(|s| s.name == node.outputs[0])
                    .expect("validated");
                let list: Vec<usize> = (0..spec.shape[1])
                    .map(|_| {
                        fresh(
                            &mut uf,
                            &mut loci,
                            &mut producer,
                            &mut through_concat,
                            &mut multi_consumer,
                            None,
                        )
                    })
                    .collect();
                lists.insert(node.outputs[0].as_str(), list);
            }
            Op::Conv2d => {
                let in_list = lists[node.inputs[0].as_str()].clone();
                for (pos, &id) in in_list.iter().enumerate() {
                    loci[id].push(ChannelLocus {
                        node: node.id.clone(),
                        role: LocusRole::ConvInSlice,
                        index: pos,
                    });
                }
                let out_c = g.conv_weight(node)?.shape[0];
                let list: Vec<usize> = (0..out_c)
                    .map(|j| {
                        let id = fresh(
                            &mut uf,
                            &mut loci,
                            &mut producer,
                            &mut through_concat,
                            &mut multi_consumer,
                            Some((node.id.clone(), j)),
                        );
                        loci[id].push(ChannelLocus {
                            node: node.id.clone(),
                            role: LocusRole::ConvOutFilter,
                            index: j,
                        });
                        id
                    })
                    .collect();
                lists.insert(node.outputs[0].as_str(), list);
            }
            Op::Dense => {
                let in_list = lists[node.inputs[0].as_str()].clone();
                for (pos, &id) in in_list.iter().enumerate() {
                    loci[id].push(ChannelLocus {
                        node: node.id.clone(),
                        role: LocusRole::DenseInFeature,
                        index: pos,
                    });
                }
                let out_f = g.opt_weight(node, "weight")?.unwrap().shape[0];
                let list: Vec<usize> = (0..out_f)
                    .map(|j| {
                        fresh(
                            &mut uf,
                            &mut loci,
                            &mut producer,
                            &mut through_concat,
                            &mut multi_consumer,
                            Some((node.id.clone(), j)),
                        )
                    })
                    .collect();
                lists.insert(node.outputs[0].as_str(), list);
            }
            Op::Batchnorm2d => {
                let list = lists[node.inputs[0].as_str()].clone();
                for (pos, &id) in list.iter().enumerate() {
                    loci[id].push(ChannelLocus {
                        node: node.id.clone(),
                        role: LocusRole::BnChannel,
                        index: pos,
                    });
                }
                lists.insert(node.outputs[0].as_str(), list);
            }
            Op::Add => {
                let first = lists[node.inputs[0].as_str()].clone();
                for other in &node.inputs[1..] {
                    let l = &lists[other.as_str()];
                    if l.len() != first.len() {
                        return Err(Error::ShapeMismatch {
                            node: node.id.clone(),
                            expected: format!("{} channels", first.len()),
                            found: format!("{} channels", l.len()),
                        });
                    }
                    for (a, b) in first.iter().zip(l.clone()) {
                        uf.union(*a, b);
                    }
                }
                lists.insert(node.outputs[0].as_str(), first);
            }
            Op::Concat => {
                let mut out = Vec::new();
                for inp in &node.inputs {
                    let l = lists[inp.as_str()].clone();
                    let multi = consumers.get(inp.as_str()).copied().unwrap_or(0) > 1;
                    for &id in &l {
                        through_concat[id] = true;
                        if multi {
                            multi_consumer[id] = true;
                        }
                    }
                    out.extend(l);
                }
                lists.insert(node.outputs[0].as_str(), out);
            }
            _ => {
                debug_assert!(node.op.is_channel_preserving());
                let list = lists[node.inputs[0].as_str()].clone();
                lists.insert(node.outputs[0].as_str(), list);
            }
        }
        // skip-edge detection also needs multi-consumer edges away from the
        // concat itself (e.g. a tap feeding several upsample branches)
        for out in &node.outputs {
            if consumers.get(out.as_str()).copied().unwrap_or(0) > 1 {
                if let Some(list) = lists.get(out.as_str()) {
                    for &id in list {
                        multi_consumer[id] = true;
                    }
                }
            }
        }
    }

    // graph outputs
    for out in &g.outputs {
        let list = lists
            .get(out.as_str())
            .ok_or_else(|| Error::MalformedManifest(format!("output `{out}` has no channel list")))?;
        for (pos, &id) in list.iter().enumerate() {
            loci[id].push(ChannelLocus {
                node: out.clone(),
                role: LocusRole::GraphOutputChannel,
                index: pos,
            });
        }
    }

    // resolve raw ids into classes
    let total = uf.parent.len();
    let mut class_members: HashMap<usize, Vec<usize>> = HashMap::new();
    for id in 0..total {
        let root = uf.find(id);
        class_members.entry(root).or_default().push(id);
    }

    struct RawClass {
        loci: Vec<ChannelLocus>,
        producers: Vec<(String, usize)>, // (node id, filter index)
        signature: Vec<String>,
        touches_output: bool,
        spans_skip: bool,
    }

    let mut raw_classes = Vec::new();
    for (_, members) in class_members {
        let mut all_loci = Vec::new();
        let mut producers = Vec::new();
        let mut concat_flag = false;
        let mut multi_flag = false;
        for &id in &members {
            all_loci.extend(loci[id].iter().cloned());
            if let Some(p) = &producer[id] {
                producers.push(p.clone());
            }
            concat_flag |= through_concat[id];
            multi_flag |= multi_consumer[id];
        }
        if producers.is_empty() {
            // model-input channels: not prunable, not conv filters
            continue;
        }
        all_loci.sort_by(|a, b| {
            let pa = topo_pos.get(a.node.as_str()).copied().unwrap_or(usize::MAX);
            let pb = topo_pos.get(b.node.as_str()).copied().unwrap_or(usize::MAX);
            (pa, &a.node, a.role, a.index).cmp(&(pb, &b.node, b.role, b.index))
        });
        all_loci.dedup();
        producers.sort();
        producers.dedup();
        let mut signature: Vec<String> = producers.iter().map(|(n, _)| n.clone()).collect();
        signature.dedup();
        if signature.len() != producers.len() {
            return Err(Error::ShapeMismatch {
                node: signature.join(","),
                expected: "one filter per producer in each channel class".into(),
                found: "a producer contributes two filters to one class".into(),
            });
        }
        let touches_output = all_loci
            .iter()
            .any(|l| l.role == LocusRole::GraphOutputChannel);
        raw_classes.push(RawClass {
            loci: all_loci,
            producers,
            signature,
            touches_output,
            spans_skip: concat_flag && multi_flag,
        });
    }

    // bucket by signature
    let mut buckets: BTreeMap<Vec<String>, Vec<RawClass>> = BTreeMap::new();
    for rc in raw_classes {
        buckets.entry(rc.signature.clone()).or_default().push(rc);
    }

    // order groups by the earliest producer's topological position
    let mut keyed: Vec<(usize, Vec<String>, Vec<RawClass>)> = buckets
        .into_iter()
        .map(|(sig, classes)| {
            let pos = sig
                .iter()
                .map(|n| topo_pos.get(n.as_str()).copied().unwrap_or(usize::MAX))
                .min()
                .unwrap();
            (pos, sig, classes)
        })
        .collect();
    keyed.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));

    let has_dense: BTreeSet<&str> = g
        .nodes
        .iter()
        .filter(|n| n.op == Op::Dense)
        .map(|n| n.id.as_str())
        .collect();

    let mut groups = Vec::new();
    let mut class_counter = 0;
    for (pos, sig, mut classes) in keyed {
        // order classes by their filter index at the earliest producer
        let rep = sig
            .iter()
            .min_by_key(|n| topo_pos.get(n.as_str()).copied().unwrap_or(usize::MAX))
            .unwrap()
            .clone();
        classes.sort_by_key(|c| {
            c.producers
                .iter()
                .find(|(n, _)| *n == rep)
                .map(|(_, j)| *j)
                .unwrap_or(usize::MAX)
        });
        // each producer in a signature must contribute its full, equal
        // filter count
        for c in &classes {
            if c.producers.len() != sig.len() {
                return Err(Error::ShapeMismatch {
                    node: sig.join(","),
                    expected: format!("{} producers per class", sig.len()),
                    found: format!("{}", c.producers.len()),
                });
            }
        }
        let touches_output = classes.iter().any(|c| c.touches_output);
        let spans_skip = classes.iter().any(|c| c.spans_skip);
        let dense_producer = sig.iter().any(|n| has_dense.contains(n.as_str()));
        let group_id = groups.len();
        let classes = classes
            .into_iter()
            .map(|c| {
                let cc = ChannelClass {
                    class_id: class_counter,
                    members: c.loci,
                };
                class_counter += 1;
                cc
            })
            .collect();
        groups.push(PruneGroup {
            group_id,
            classes,
            producer_signature: sig,
            kind: GroupKind::Local, // assigned below
            touches_output,
            spans_skip,
            dense_producer,
        });
        let _ = pos;
    }
    Ok(classify_groups(groups))
}

/// Assigns the kind from the group's recorded structure flags: frozen
/// dominates interdependent dominates local.
pub fn classify_groups(mut groups: Vec<PruneGroup>) -> Vec<PruneGroup> {
    for grp in &mut groups {
        grp.kind = if grp.touches_output || grp.dense_producer {
            GroupKind::Frozen
        } else if grp.producer_signature.len() >= 2 || grp.spans_skip {
            GroupKind::Interdependent
        } else {
            GroupKind::Local
        };
    }
    groups
}

/// Deterministic dot text: one cluster per group, colored by kind.
pub fn groups_to_dot(groups: &[PruneGroup], g: &ModelGraph) -> String {
    let mut out = String::from("digraph prune_groups {\n  rankdir=LR;\n");
    for grp in groups {
        let color = match grp.kind {
            GroupKind::Local => "green",
            GroupKind::Interdependent => "orange",
            GroupKind::Frozen => "gray",
        };
        out.push_str(&format!(
            "  subgraph cluster_{} {{\n    label=\"group {} ({:?}, {} classes)\";\n    color={};\n",
            grp.group_id,
            grp.group_id,
            grp.kind,
            grp.classes.len(),
            color
        ));
        for prod in &grp.producer_signature {
            out.push_str(&format!("    \"g{}_{}\" [label=\"{}\"];\n", grp.group_id, prod, prod));
        }
        out.push_str("  }\n");
    }
    let _ = g;
    out.push_str("}\n");
    out
}
