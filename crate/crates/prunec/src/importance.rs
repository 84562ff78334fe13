//! Filter importance heuristics: L1/L2 norm of the representative layer's
//! filters, and batch-norm scaling factor magnitude (network slimming).

use std::collections::HashMap;

use crate::depgraph::{GroupKind, LocusRole, PruneGroup};
use crate::error::{Error, Result};
use crate::graph::{topo_order, ModelGraph, Op};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heuristic {
    L1,
    L2,
    BnSlim,
}

impl Heuristic {
    pub fn parse(s: &str) -> Option<Heuristic> {
        match s {
            "l1" => Some(Heuristic::L1),
            "l2" => Some(Heuristic::L2),
            "bn" | "bn_slim" => Some(Heuristic::BnSlim),
            _ => None,
        }
    }
}

/// Per-group importance scores, aligned to class order.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ImportanceTable {
    pub heuristic: Heuristic,
    /// group_id -> (representative node id, scores in class order). Frozen
    /// groups are absent.
    pub groups: Vec<Option<GroupScores>>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct GroupScores {
    pub representative: String,
    pub scores: Vec<f64>,
}

pub fn l1_norm<T: Scalar>(w: &[T]) -> f64 {
    w.iter().map(|v| v.as_f64().abs()).sum()
}

pub fn l2_norm<T: Scalar>(w: &[T]) -> f64 {
    w.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt()
}

fn filter_index(group: &PruneGroup, class_pos: usize, node: &str, role: LocusRole) -> Result<usize> {
    group.classes[class_pos]
        .members
        .iter()
        .find(|m| m.node == node && m.role == role)
        .map(|m| m.index)
        .ok_or_else(|| {
            Error::Unsupported(format!(
                "group {}: class {} lacks a {:?} locus at `{}`",
                group.group_id, class_pos, role, node
            ))
        })
}

/// Scores one group. The representative layer is the producer conv earliest
/// in topological order; with `aggregate` set, l1/l2 sum over every producer
/// instead (experimental mode, off by default).
pub fn score_group(
    g: &ModelGraph,
    group: &PruneGroup,
    heuristic: Heuristic,
    aggregate: bool,
) -> Result<GroupScores> {
    if group.kind == GroupKind::Frozen {
        return Err(Error::FrozenGroup(group.group_id));
    }
    let order = topo_order(g)?;
    let pos: HashMap<&str, usize> = order.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    match heuristic {
        Heuristic::L1 | Heuristic::L2 => {
            let mut producers = group.producer_signature.clone();
            producers.sort_by_key(|n| pos[n.as_str()]);
            let representative = producers[0].clone();
            let scored: Vec<&str> = if aggregate {
                producers.iter().map(|s| s.as_str()).collect()
            } else {
                vec![representative.as_str()]
            };
            let mut scores = vec![0.0f64; group.classes.len()];
            for node_id in scored {
                let node = g.node(node_id).expect("producer exists");
                let w = g.conv_weight(node)?;
                let bias = g.opt_weight(node, "bias")?;
                let filter_len = w.shape[1] * w.shape[2] * w.shape[3];
                for (class_pos, score) in scores.iter_mut().enumerate() {
                    let j = filter_index(group, class_pos, node_id, LocusRole::ConvOutFilter)?;
                    let slice = &w.data[j * filter_len..(j + 1) * filter_len];
                    let s = match heuristic {
                        Heuristic::L1 => {
                            let mut v = l1_norm(slice);
                            if let Some(b) = bias {
                                v += b.data[j].abs() as f64;
                            }
                            v
                        }
                        Heuristic::L2 => {
                            let mut sq: f64 =
                                slice.iter().map(|v| (*v as f64) * (*v as f64)).sum();
                            if let Some(b) = bias {
                                sq += (b.data[j] as f64) * (b.data[j] as f64);
                            }
                            sq.sqrt()
                        }
                        Heuristic::BnSlim => unreachable!(),
                    };
                    *score += s;
                }
            }
            Ok(GroupScores {
                representative,
                scores,
            })
        }
        Heuristic::BnSlim => {
            // earliest batchnorm carrying the group's classes
            let mut bn_nodes: Vec<&str> = group
                .classes
                .iter()
                .flat_map(|c| c.members.iter())
                .filter(|m| m.role == LocusRole::BnChannel)
                .map(|m| m.node.as_str())
                .collect();
            bn_nodes.sort_by_key(|n| pos[n]);
            bn_nodes.dedup();
            let bn_id = *bn_nodes.first().ok_or(Error::NoBatchNorm(group.group_id))?;
            let bn = g.node(bn_id).expect("bn exists");
            debug_assert_eq!(bn.op, Op::Batchnorm2d);
            let gamma = g.opt_weight(bn, "gamma")?.unwrap();
            let mut scores = Vec::with_capacity(group.classes.len());
            for class_pos in 0..group.classes.len() {
                let idx = filter_index(group, class_pos, bn_id, LocusRole::BnChannel)?;
                scores.push(gamma.data[idx].abs() as f64);
            }
            Ok(GroupScores {
                representative: bn_id.to_string(),
                scores,
            })
        }
    }
}

/// Scores every non-frozen group.
pub fn score_all(
    g: &ModelGraph,
    groups: &[PruneGroup],
    heuristic: Heuristic,
    aggregate: bool,
) -> Result<ImportanceTable> {
    let mut out = Vec::with_capacity(groups.len());
    for group in groups {
        if group.kind == GroupKind::Frozen {
            out.push(None);
        } else {
            out.push(Some(score_group(g, group, heuristic, aggregate)?));
        }
    }
    Ok(ImportanceTable {
        heuristic,
        groups: out,
    })
}

/// Keeps the `k_keep` highest-scoring classes; ties keep the lower index.
/// Returns (kept, removed), both sorted ascending.
pub fn rank_classes(scores: &[f64], k_keep: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if k_keep < 1 || k_keep > scores.len() {
        return Err(Error::BadK {
            k: k_keep,
            n: scores.len(),
        });
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = idx[..k_keep].to_vec();
    let mut removed: Vec<usize> = idx[k_keep..].to_vec();
    kept.sort_unstable();
    removed.sort_unstable();
    Ok((kept, removed))
}
