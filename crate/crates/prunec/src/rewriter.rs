//! Physically applies a prune plan: slices weight tensors along the axes
//! named by each removed class's loci and revalidates the result. Pure
//! functional; the input graph is untouched.

use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};

use crate::depgraph::{build_groups, GroupKind, LocusRole, PruneGroup};
use crate::error::{Error, Result};
use crate::graph::{save_model, shape_check, ModelGraph, Op, Tensor};
use crate::planner::PrunePlan;

/// Stable digest over (graph topology, group partition), used to bind plans
/// to the exact graph they were generated against.
pub fn plan_fingerprint(g: &ModelGraph, groups: &[PruneGroup]) -> String {
    let (manifest, _) = save_model(g);
    let mut hasher = Sha256::new();
    hasher.update(&manifest);
    for grp in groups {
        hasher.update(format!(
            "|{}:{}:{:?}:{}",
            grp.group_id,
            grp.producer_signature.join(","),
            grp.kind,
            grp.classes.len()
        ));
        for class in &grp.classes {
            for m in &class.members {
                hasher.update(format!(";{}:{:?}:{}", m.node, m.role, m.index));
            }
        }
    }
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Removes the given indices along `axis` of a tensor.
fn slice_axis(t: &Tensor, axis: usize, remove: &BTreeSet<usize>) -> Tensor {
    let mut shape = t.shape.clone();
    let old_dim = shape[axis];
    debug_assert!(remove.iter().all(|&i| i < old_dim));
    shape[axis] = old_dim - remove.len();
    let inner: usize = t.shape[axis + 1..].iter().product();
    let outer: usize = t.shape[..axis].iter().product();
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for d in 0..old_dim {
            if remove.contains(&d) {
                continue;
            }
            let base = (o * old_dim + d) * inner;
            data.extend_from_slice(&t.data[base..base + inner]);
        }
    }
    Tensor::new(shape, data)
}

/// Applies `plan` to `g`, returning the pruned graph. Surviving channels
/// keep their relative order (pruning is a restriction map).
pub fn apply_plan(g: &ModelGraph, plan: &PrunePlan) -> Result<ModelGraph> {
    let groups = build_groups(g)?;
    let fp = plan_fingerprint(g, &groups);
    if fp != plan.fingerprint {
        return Err(Error::PlanGraphMismatch {
            plan: plan.fingerprint.clone(),
            graph: fp,
        });
    }

    // (tensor key, axis) -> indices to delete
    let mut cuts: BTreeMap<(String, usize), BTreeSet<usize>> = BTreeMap::new();
    for (group_id, removed) in &plan.removals {
        let group = groups.get(*group_id).ok_or_else(|| Error::PlanGraphMismatch {
            plan: plan.fingerprint.clone(),
            graph: format!("no group {group_id}"),
        })?;
        if removed.is_empty() {
            continue;
        }
        if group.kind == GroupKind::Frozen {
            return Err(Error::FrozenGroup(*group_id));
        }
        if removed.len() >= group.len() {
            return Err(Error::WouldEmptyGroup(*group_id));
        }
        for &class_pos in removed {
            let class = group.classes.get(class_pos).ok_or(Error::WouldEmptyGroup(*group_id))?;
            for locus in &class.members {
                let node = match g.node(&locus.node) {
                    Some(n) => n,
                    None => continue, // graph_output loci name edges, not nodes
                };
                match locus.role {
                    LocusRole::ConvOutFilter => {
                        let wkey = node.weights["weight"].clone();
                        cuts.entry((wkey, 0)).or_default().insert(locus.index);
                        if let Some(bkey) = node.weights.get("bias") {
                            cuts.entry((bkey.clone(), 0)).or_default().insert(locus.index);
                        }
                    }
                    LocusRole::ConvInSlice => {
                        let wkey = node.weights["weight"].clone();
                        cuts.entry((wkey, 1)).or_default().insert(locus.index);
                    }
                    LocusRole::BnChannel => {
                        debug_assert_eq!(node.op, Op::Batchnorm2d);
                        for role in ["gamma", "beta", "running_mean", "running_var"] {
                            let key = node.weights[role].clone();
                            cuts.entry((key, 0)).or_default().insert(locus.index);
                        }
                    }
                    LocusRole::DenseInFeature => {
                        let wkey = node.weights["weight"].clone();
                        cuts.entry((wkey, 1)).or_default().insert(locus.index);
                    }
                    LocusRole::GraphOutputChannel => {
                        return Err(Error::FrozenGroup(*group_id));
                    }
                }
            }
        }
    }

    let mut out = g.clone();
    // group cuts per tensor so multi-axis slices compose
    let mut per_tensor: BTreeMap<&str, Vec<(usize, &BTreeSet<usize>)>> = BTreeMap::new();
    for ((key, axis), remove) in &cuts {
        per_tensor.entry(key.as_str()).or_default().push((*axis, remove));
    }
    for (key, axis_cuts) in per_tensor {
        let mut t = out.tensors[key].clone();
        for (axis, remove) in axis_cuts {
            t = slice_axis(&t, axis, remove);
        }
        out.tensors.insert(key.to_string(), t);
    }

    shape_check(&out)?;
    Ok(out)
}
