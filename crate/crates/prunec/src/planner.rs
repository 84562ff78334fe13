//! Turns sparsity targets into concrete prune plans: one-shot uniform,
//! non-uniform capped, and iterative (IMP-style) ladders with cumulative
//! targets measured against the original group sizes.

use std::collections::BTreeMap;

use crate::depgraph::{build_groups, GroupKind, PruneGroup};
use crate::error::{Error, Result};
use crate::graph::ModelGraph;
use crate::importance::{rank_classes, score_all, Heuristic};
use crate::rewriter::{apply_plan, plan_fingerprint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Oneshot,
    Iterative,
}

/// For each group, the classes to remove, bound to one specific graph via
/// the fingerprint.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PrunePlan {
    pub fingerprint: String,
    pub heuristic: Heuristic,
    pub strategy: Strategy,
    pub target_sparsity: f64,
    /// 0 for one-shot plans; 1-based round index for iterative rounds.
    pub round: usize,
    pub cap: Option<f64>,
    /// group_id -> removed class indices, sorted ascending. Frozen groups
    /// never appear.
    pub removals: BTreeMap<usize, Vec<usize>>,
}

impl PrunePlan {
    pub fn removed_total(&self) -> usize {
        self.removals.values().map(|v| v.len()).sum()
    }
    pub fn is_empty(&self) -> bool {
        self.removals.values().all(|v| v.is_empty())
    }
}

#[derive(Debug, Clone, Default)]
pub struct PlanOptions {
    pub cap: Option<f64>,
    pub aggregate: bool,
    /// Per-group sparsity overrides (group_id -> sparsity), for non-uniform
    /// experiments.
    pub overrides: BTreeMap<usize, f64>,
}

fn check_sparsity(s: f64) -> Result<()> {
    if !(0.0..1.0).contains(&s) {
        return Err(Error::BadSparsity(s));
    }
    Ok(())
}

/// max(1, ceil((1-s)*n)): the survivor count for a group of n classes at
/// sparsity s.
pub fn kept_count(n: usize, s: f64) -> Result<usize> {
    check_sparsity(s)?;
    assert!(n >= 1);
    Ok((((1.0 - s) * n as f64).ceil() as usize).max(1))
}

fn effective_sparsity(group: &PruneGroup, s: f64, opts: &PlanOptions) -> f64 {
    let s = opts.overrides.get(&group.group_id).copied().unwrap_or(s);
    match (group.kind, opts.cap) {
        (GroupKind::Interdependent, Some(cap)) => s.min(cap),
        _ => s,
    }
}

/// One-shot plan at uniform sparsity `s`, with the optional cap applied to
/// interdependent groups.
pub fn plan_oneshot(
    g: &ModelGraph,
    groups: &[PruneGroup],
    heuristic: Heuristic,
    s: f64,
    opts: &PlanOptions,
) -> Result<PrunePlan> {
    check_sparsity(s)?;
    if let Some(cap) = opts.cap {
        check_sparsity(cap)?;
    }
    for &ov in opts.overrides.values() {
        check_sparsity(ov)?;
    }
    let table = score_all(g, groups, heuristic, opts.aggregate)?;
    let mut removals = BTreeMap::new();
    for group in groups {
        if group.kind == GroupKind::Frozen {
            continue;
        }
        let s_g = effective_sparsity(group, s, opts);
        let n = group.len();
        let keep = kept_count(n, s_g)?;
        let scores = &table.groups[group.group_id].as_ref().unwrap().scores;
        let (_, removed) = rank_classes(scores, keep)?;
        removals.insert(group.group_id, removed);
    }
    Ok(PrunePlan {
        fingerprint: plan_fingerprint(g, groups),
        heuristic,
        strategy: Strategy::Oneshot,
        target_sparsity: s,
        round: 0,
        cap: opts.cap,
        removals,
    })
}

/// An iterative ladder: per-round plans (each bound to the graph produced by
/// the previous rounds) plus the composed cumulative plan bound to the
/// original graph.
#[derive(Debug, Clone)]
pub struct IterativePlan {
    pub rounds: Vec<PrunePlan>,
    pub cumulative: PrunePlan,
}

/// Iterative pruning with cumulative targets s_t = t*step against the
/// ORIGINAL group sizes. With `recompute` (the default), importance is
/// re-scored on the already-pruned weights each round; otherwise round-1
/// scores fix the removal order for all rounds.
#[allow(clippy::too_many_arguments)]
pub fn plan_iterative(
    g: &ModelGraph,
    heuristic: Heuristic,
    step: f64,
    rounds: usize,
    opts: &PlanOptions,
    recompute: bool,
) -> Result<IterativePlan> {
    if step <= 0.0 || rounds == 0 || step * rounds as f64 >= 1.0 {
        return Err(Error::BadSchedule { step, rounds });
    }
    if let Some(cap) = opts.cap {
        check_sparsity(cap)?;
    }

    let groups0 = build_groups(g)?;
    let original_fp = plan_fingerprint(g, &groups0);
    // per group: surviving original class indices, in class order
    let mut surviving: BTreeMap<usize, Vec<usize>> = groups0
        .iter()
        .filter(|grp| grp.kind != GroupKind::Frozen)
        .map(|grp| (grp.group_id, (0..grp.len()).collect()))
        .collect();
    let n_original: BTreeMap<usize, usize> =
        groups0.iter().map(|grp| (grp.group_id, grp.len())).collect();

    // fixed removal priority per group when recompute=false: indices ordered
    // from least to most important
    let fixed_order: Option<BTreeMap<usize, Vec<usize>>> = if recompute {
        None
    } else {
        let table = score_all(g, &groups0, heuristic, opts.aggregate)?;
        let mut map = BTreeMap::new();
        for grp in &groups0 {
            if grp.kind == GroupKind::Frozen {
                continue;
            }
            let scores = &table.groups[grp.group_id].as_ref().unwrap().scores;
            let mut idx: Vec<usize> = (0..scores.len()).collect();
            idx.sort_by(|&a, &b| {
                scores[a]
                    .partial_cmp(&scores[b])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(b.cmp(&a))
            });
            // removal order: ascending score, ties remove the higher index
            map.insert(grp.group_id, idx);
        }
        Some(map)
    };

    let mut cur = g.clone();
    let mut round_plans = Vec::with_capacity(rounds);
    let mut cumulative: BTreeMap<usize, Vec<usize>> = BTreeMap::new();

    for t in 1..=rounds {
        let s_t = step * t as f64;
        let cur_groups = build_groups(&cur)?;
        // node ids survive rewriting, so producer signatures match groups0
        let by_sig: BTreeMap<&[String], &PruneGroup> = cur_groups
            .iter()
            .map(|grp| (grp.producer_signature.as_slice(), grp))
            .collect();
        let table = if recompute {
            Some(score_all(&cur, &cur_groups, heuristic, opts.aggregate)?)
        } else {
            None
        };

        let mut cur_plan_removals: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for grp in &groups0 {
            if grp.kind == GroupKind::Frozen {
                continue;
            }
            let n0 = n_original[&grp.group_id];
            let s_eff = effective_sparsity(grp, s_t, opts);
            let target_keep = kept_count(n0, s_eff)?;
            let alive = surviving.get_mut(&grp.group_id).unwrap();
            if alive.len() <= target_keep {
                continue;
            }
            let delta = alive.len() - target_keep;

            // removal positions in CURRENT class coordinates
            let cur_grp = by_sig[grp.producer_signature.as_slice()];
            let removed_cur: Vec<usize> = if let Some(table) = &table {
                let scores = &table.groups[cur_grp.group_id].as_ref().unwrap().scores;
                debug_assert_eq!(scores.len(), alive.len());
                let (_, removed) = rank_classes(scores, alive.len() - delta)?;
                removed
            } else {
                let order = &fixed_order.as_ref().unwrap()[&grp.group_id];
                // next `delta` not-yet-removed original indices, mapped to
                // their position among the survivors
                let mut picked: Vec<usize> = order
                    .iter()
                    .copied()
                    .filter(|orig| alive.binary_search(orig).is_ok())
                    .take(delta)
                    .map(|orig| alive.binary_search(&orig).unwrap())
                    .collect();
                picked.sort_unstable();
                picked
            };

            let removed_orig: Vec<usize> = removed_cur.iter().map(|&p| alive[p]).collect();
            for p in removed_cur.iter().rev() {
                alive.remove(*p);
            }
            cumulative.entry(grp.group_id).or_default().extend(removed_orig);
            cur_plan_removals.insert(cur_grp.group_id, removed_cur);
        }

        let round_plan = PrunePlan {
            fingerprint: plan_fingerprint(&cur, &cur_groups),
            heuristic,
            strategy: Strategy::Iterative,
            target_sparsity: s_t,
            round: t,
            cap: opts.cap,
            removals: cur_plan_removals,
        };
        cur = apply_plan(&cur, &round_plan)?;
        round_plans.push(round_plan);
    }

    let mut cumulative_sorted = cumulative;
    for v in cumulative_sorted.values_mut() {
        v.sort_unstable();
    }
    Ok(IterativePlan {
        rounds: round_plans,
        cumulative: PrunePlan {
            fingerprint: original_fp,
            heuristic,
            strategy: Strategy::Iterative,
            target_sparsity: step * rounds as f64,
            round: rounds,
            cap: opts.cap,
            removals: cumulative_sorted,
        },
    })
}
