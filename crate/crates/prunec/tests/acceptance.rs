//! End-to-end acceptance suite. Each test prints a single PASS line with the
//! measured values so a reviewer can audit the numbers without re-deriving
//! them.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;

use prunec::cli::{dispatch, EXIT_OK, EXIT_USAGE, EXIT_VERIFY_FAILED};
use prunec::cost::count_params;
use prunec::depgraph::{build_groups, GroupKind, LocusRole, PruneGroup};
use prunec::executor::{measure_latency, random_input, run};
use prunec::graph::ModelGraph;
use prunec::importance::Heuristic;
use prunec::planner::{kept_count, plan_iterative, plan_oneshot, PlanOptions, PrunePlan, Strategy};
use prunec::rewriter::{apply_plan, plan_fingerprint};
use prunec::rng::SplitMix64;
use prunec::segmetrics::{compute_pq, match_instances, InstanceMap, MatchResult};
use prunec::zoo;

fn params(g: &ModelGraph) -> u64 {
    count_params(g).total_params
}

fn prune_uniform(g: &ModelGraph, h: Heuristic, s: f64, cap: Option<f64>) -> ModelGraph {
    let groups = build_groups(g).unwrap();
    let opts = PlanOptions { cap, ..Default::default() };
    let plan = plan_oneshot(g, &groups, h, s, &opts).unwrap();
    apply_plan(g, &plan).unwrap()
}

/// Surviving class count per producer signature, for tracking groups across
/// rewrites (node ids are stable under pruning).
fn sizes_by_signature(g: &ModelGraph) -> BTreeMap<Vec<String>, (GroupKind, usize)> {
    build_groups(g)
        .unwrap()
        .into_iter()
        .map(|grp| (grp.producer_signature.clone(), (grp.kind, grp.len())))
        .collect()
}

#[test]
fn criterion_01_resnet18_baseline_params() {
    let g = zoo::build_resnet18(1000, 1.0, 42);
    let p = params(&g) as f64;
    let target = 11.70e6;
    let rel = (p - target).abs() / target;
    assert!(rel <= 0.002, "params {p} deviate {rel:.4} from {target}");
    println!("criterion 1: PASS — resnet18/1000 has {p} params ({rel:.4} rel from 11.70e6)");
}

#[test]
fn criterion_02_pruned_size_ladder() {
    let g = zoo::build_resnet18(1000, 1.0, 42);
    let targets = [(0.25, 6.67e6), (0.50, 3.05e6), (0.75, 0.83e6)];
    let mut got = Vec::new();
    for (s, target) in targets {
        let pruned = prune_uniform(&g, Heuristic::L2, s, None);
        let p = params(&pruned) as f64;
        let rel = (p - target).abs() / target;
        assert!(rel <= 0.15, "s={s}: params {p} deviate {rel:.3} from {target}");
        got.push((s, p, rel));
    }
    println!("criterion 2: PASS — pruned params {got:?} all within 15% of targets");
}

#[test]
fn criterion_03_superlinear_reduction() {
    for g in [zoo::build_resnet18(10, 1.0, 7), zoo::build_hovernet_toy(7)] {
        let base = params(&g) as f64;
        for t in 1..=19 {
            let s = 0.05 * t as f64;
            let pruned = prune_uniform(&g, Heuristic::L2, s, None);
            let ratio = params(&pruned) as f64 / base;
            assert!(
                ratio <= (1.0 - s) + 0.01,
                "{}: s={s:.2} ratio {ratio:.4} exceeds linear bound",
                g.name
            );
        }
    }
    println!("criterion 3: PASS — parameter reduction superlinear across the full ladder on both architectures");
}

#[test]
fn criterion_04_iterative_ladder_contract() {
    let g = zoo::build_resnet18(10, 0.25, 5);
    let groups0 = build_groups(&g).unwrap();
    let n0: BTreeMap<Vec<String>, usize> = groups0
        .iter()
        .map(|grp| (grp.producer_signature.clone(), grp.len()))
        .collect();

    let ladder =
        plan_iterative(&g, Heuristic::L2, 0.05, 19, &PlanOptions::default(), true).unwrap();
    assert_eq!(ladder.rounds.len(), 19);
    let mut cur = g.clone();
    for (t, round) in ladder.rounds.iter().enumerate() {
        cur = apply_plan(&cur, round).unwrap();
        let s_t = 0.05 * (t + 1) as f64;
        for (sig, (kind, kept)) in sizes_by_signature(&cur) {
            if kind == GroupKind::Frozen {
                continue;
            }
            let expect = kept_count(n0[&sig], s_t).unwrap();
            assert_eq!(kept, expect, "round {} group {:?}", t + 1, sig);
        }
    }

    // fixed ranking: the 19-round union must be exactly the one-shot 95% plan
    let fixed =
        plan_iterative(&g, Heuristic::L2, 0.05, 19, &PlanOptions::default(), false).unwrap();
    let oneshot =
        plan_oneshot(&g, &groups0, Heuristic::L2, 0.95, &PlanOptions::default()).unwrap();
    assert_eq!(fixed.cumulative.removals, oneshot.removals);
    println!("criterion 4: PASS — 19-round ladder keeps kept_count(n, 0.05t) every round; fixed-rank union equals one-shot s=0.95");
}

#[test]
fn criterion_05_interdependent_cap() {
    let g = zoo::build_resnet18(10, 0.5, 9);
    let n0 = sizes_by_signature(&g);
    let capped = prune_uniform(&g, Heuristic::L2, 0.9, Some(0.4));
    let uncapped = prune_uniform(&g, Heuristic::L2, 0.9, None);

    let mut saw_interdependent = false;
    for (sig, (kind, kept)) in sizes_by_signature(&capped) {
        let n = n0[&sig].1;
        match kind {
            GroupKind::Frozen => assert_eq!(kept, n),
            GroupKind::Interdependent => {
                saw_interdependent = true;
                assert_eq!(kept, kept_count(n, 0.4).unwrap(), "group {sig:?}");
            }
            GroupKind::Local => assert_eq!(kept, kept_count(n, 0.9).unwrap(), "group {sig:?}"),
        }
    }
    assert!(saw_interdependent);
    let (pc, pu) = (params(&capped), params(&uncapped));
    assert!(pc > pu, "capped {pc} should exceed uncapped {pu}");
    println!("criterion 5: PASS — cap 0.4 realized on every interdependent group; params capped {pc} > uncapped {pu}");
}

/// Zeroes every weight slice backing one channel class: producer filters
/// (plus bias) and any batchnorm parameters riding the class.
fn zero_class(g: &mut ModelGraph, group: &PruneGroup, class_pos: usize) {
    for locus in &group.classes[class_pos].members {
        let node = match g.node(&locus.node) {
            Some(n) => n.clone(),
            None => continue,
        };
        match locus.role {
            LocusRole::ConvOutFilter => {
                let w = g.tensors.get_mut(&node.weights["weight"]).unwrap();
                let per = w.numel() / w.shape[0];
                w.data[locus.index * per..(locus.index + 1) * per].fill(0.0);
                if let Some(bkey) = node.weights.get("bias") {
                    g.tensors.get_mut(bkey).unwrap().data[locus.index] = 0.0;
                }
            }
            LocusRole::BnChannel => {
                for role in ["gamma", "beta"] {
                    g.tensors.get_mut(&node.weights[role]).unwrap().data[locus.index] = 0.0;
                }
            }
            _ => {}
        }
    }
}

#[test]
fn criterion_06_dead_channel_exactness() {
    let mut rng = SplitMix64::new(2024);
    for case in 0..50u64 {
        let pick = |rng: &mut SplitMix64, lo: usize, hi: usize| {
            lo + rng.next_below((hi - lo) as u64) as usize
        };
        let g = match case % 3 {
            0 => {
                let widths = [pick(&mut rng, 4, 12), pick(&mut rng, 4, 12)];
                zoo::build_plain_cnn(&widths, 3, 1000 + case)
            }
            1 => {
                let w = pick(&mut rng, 8, 16);
                zoo::build_preact_resnet_encoder(&[w, 2 * w], 1, 2000 + case)
            }
            _ => {
                let w = pick(&mut rng, 8, 12);
                zoo::build_unet_hovernet(&[w, 2 * w], 1, &[w], 3, 3000 + case)
            }
        };
        let groups = build_groups(&g).unwrap();
        let candidates: Vec<&PruneGroup> = groups
            .iter()
            .filter(|grp| grp.kind != GroupKind::Frozen && grp.len() >= 2)
            .collect();
        let group = candidates[pick(&mut rng, 0, candidates.len())];
        let class_pos = pick(&mut rng, 0, group.len());

        let mut dead = g.clone();
        zero_class(&mut dead, group, class_pos);
        let dead_groups = build_groups(&dead).unwrap();
        let plan = PrunePlan {
            fingerprint: plan_fingerprint(&dead, &dead_groups),
            heuristic: Heuristic::L1,
            strategy: Strategy::Oneshot,
            target_sparsity: 0.0,
            round: 0,
            cap: None,
            removals: BTreeMap::from([(group.group_id, vec![class_pos])]),
        };
        let pruned = apply_plan(&dead, &plan).unwrap();

        for trial in 0..10u64 {
            let mut inputs = BTreeMap::new();
            for spec in &dead.inputs {
                inputs.insert(spec.name.clone(), random_input(&spec.shape, case * 100 + trial));
            }
            let a = run(&dead, &inputs).unwrap();
            let b = run(&pruned, &inputs).unwrap();
            for (name, va) in &a {
                let vb = &b[name];
                assert_eq!(va.shape, vb.shape);
                for (x, y) in va.data.iter().zip(&vb.data) {
                    assert!(
                        (x - y).abs() <= 1e-6,
                        "case {case} ({}) group {} class {class_pos}: {x} vs {y}",
                        g.name,
                        group.group_id
                    );
                }
            }
        }
    }
    println!("criterion 6: PASS — 50 dead-channel constructions pruned with <= 1e-6 output drift on 10 inputs each");
}

#[test]
fn criterion_07_fuzz_shape_totality() {
    let mut rng = SplitMix64::new(7777);
    for case in 0..500u64 {
        let pick = |rng: &mut SplitMix64, lo: usize, hi: usize| {
            lo + rng.next_below((hi - lo) as u64) as usize
        };
        let (g, has_bn) = match case % 10 {
            0 => (
                zoo::build_unet_hovernet(&[8, 16], 1, &[8], 3, case),
                true,
            ),
            1 | 2 => (
                zoo::build_preact_resnet_encoder(&[pick(&mut rng, 8, 16), 16], 1, case),
                true,
            ),
            3 | 4 => (
                zoo::build_plain_cnn_convs_only(
                    &[pick(&mut rng, 3, 10), pick(&mut rng, 3, 10)],
                    case,
                ),
                false,
            ),
            _ => (
                zoo::build_plain_cnn(&[pick(&mut rng, 4, 16), pick(&mut rng, 4, 16)], 4, case),
                true,
            ),
        };
        let heuristic = match rng.next_below(if has_bn { 3 } else { 2 }) {
            0 => Heuristic::L1,
            1 => Heuristic::L2,
            _ => Heuristic::BnSlim,
        };
        let s = rng.next_f32() as f64 * 0.95;
        let cap = if rng.next_below(2) == 0 { Some(0.2 + rng.next_f32() as f64 * 0.5) } else { None };

        let groups = build_groups(&g).unwrap();
        let opts = PlanOptions { cap, ..Default::default() };
        let plan = match plan_oneshot(&g, &groups, heuristic, s, &opts) {
            Ok(p) => p,
            // bn scoring legitimately refuses groups with no batchnorm
            // (e.g. the deepest encoder tap); rank by weights instead
            Err(prunec::Error::NoBatchNorm(_)) => {
                plan_oneshot(&g, &groups, Heuristic::L2, s, &opts).unwrap()
            }
            Err(e) => panic!("case {case}: planning failed: {e}"),
        };
        // apply_plan shape-checks the rewritten graph internally
        let pruned = apply_plan(&g, &plan).unwrap();
        let mut inputs = BTreeMap::new();
        for spec in &pruned.inputs {
            inputs.insert(spec.name.clone(), random_input(&spec.shape, case));
        }
        run(&pruned, &inputs).unwrap();
    }
    println!("criterion 7: PASS — 500 random plans rewrote into valid, executable graphs");
}

#[test]
fn criterion_08_latency_trend() {
    let g = zoo::build_resnet18(10, 0.5, 11);
    let pruned = prune_uniform(&g, Heuristic::L2, 0.75, None);
    let shape = [1usize, 3, 64, 64];
    let base = measure_latency(&g, &shape, 20, 3, 42).unwrap();
    let fast = measure_latency(&pruned, &shape, 20, 3, 42).unwrap();
    let ratio = fast.median_ms / base.median_ms;
    assert!(
        ratio <= 0.70,
        "pruned median {:.3}ms vs baseline {:.3}ms (ratio {ratio:.3})",
        fast.median_ms,
        base.median_ms
    );
    println!(
        "criterion 8: PASS — median latency {:.3}ms -> {:.3}ms (ratio {ratio:.3} <= 0.70)",
        base.median_ms, fast.median_ms
    );
}

/// Independent matcher: brute-force pixel-count IoU for every (pred, gt)
/// instance pair, then greedy pairing by descending IoU at the 0.5 threshold.
fn brute_force_pairs(pred: &InstanceMap, gt: &InstanceMap) -> Vec<(u32, u32, f64)> {
    let ids = |m: &InstanceMap| -> Vec<u32> {
        let s: BTreeSet<u32> = m.ids.iter().copied().filter(|&v| v != 0).collect();
        s.into_iter().collect()
    };
    let mut candidates = Vec::new();
    for &p in &ids(pred) {
        for &g in &ids(gt) {
            let inter = pred.ids.iter().zip(&gt.ids).filter(|(&a, &b)| a == p && b == g).count();
            let union = pred.ids.iter().zip(&gt.ids).filter(|(&a, &b)| a == p || b == g).count();
            let iou = inter as f64 / union as f64;
            if iou >= 0.5 {
                candidates.push((p, g, iou));
            }
        }
    }
    candidates.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.1.cmp(&b.1)).then(a.0.cmp(&b.0)));
    let mut used_p = BTreeSet::new();
    let mut used_g = BTreeSet::new();
    let mut pairs = Vec::new();
    for (p, g, iou) in candidates {
        if used_p.insert(p) && used_g.insert(g) {
            pairs.push((p, g, iou));
        }
    }
    pairs.sort_by_key(|&(p, g, _)| (g, p));
    pairs
}

fn random_instance_map(rng: &mut SplitMix64, h: usize, w: usize, n: usize) -> InstanceMap {
    let mut ids = vec![0u32; h * w];
    for inst in 1..=n {
        let r0 = rng.next_below(h as u64) as usize;
        let c0 = rng.next_below(w as u64) as usize;
        let rh = 1 + rng.next_below(5) as usize;
        let cw = 1 + rng.next_below(5) as usize;
        for r in r0..(r0 + rh).min(h) {
            for c in c0..(c0 + cw).min(w) {
                ids[r * w + c] = inst as u32;
            }
        }
    }
    InstanceMap::new(h, w, ids)
}

#[test]
fn criterion_09_segmentation_metrics_oracle() {
    let fixture = MatchResult {
        pairs: vec![(1, 1, 0.6), (2, 2, 0.7), (3, 3, 0.8), (4, 4, 0.9)],
        false_positives: vec![9],
        false_negatives: vec![9],
    };
    let s = compute_pq(&fixture);
    assert!((s.dq - 0.8).abs() < 1e-15);
    assert!((s.sq - 0.75).abs() < 1e-15);
    assert!((s.pq - 0.6).abs() < 1e-15);

    let mut rng = SplitMix64::new(909);
    for _ in 0..200 {
        let pred = random_instance_map(&mut rng, 24, 24, 6);
        let gt = random_instance_map(&mut rng, 24, 24, 6);
        let m = match_instances(&pred, &gt).unwrap();
        assert_eq!(m.pairs, brute_force_pairs(&pred, &gt));
        let s = compute_pq(&m);
        assert!((s.pq - s.dq * s.sq).abs() < 1e-12);
    }
    println!("criterion 9: PASS — fixture gives DQ=0.8 SQ=0.75 PQ=0.6; 200 random pairs match the brute-force matcher with PQ=DQ*SQ to 1e-12");
}

fn sha256(path: &std::path::Path) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(fs::read(path).unwrap());
    format!("{:x}", h.finalize())
}

#[test]
fn criterion_10_cli_determinism() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let produced = ["m.json", "m.bin", "p.json", "p.bin", "p.plan.json", "groups.dot"];

    for dir in &dirs {
        let d = dir.path();
        let p = |n: &str| d.join(n).to_str().unwrap().to_string();
        assert_eq!(
            dispatch(["prunec", "zoo", "plain-cnn", "--classes", "4", "--seed", "5", "--out", &p("m")]),
            EXIT_OK
        );
        assert_eq!(
            dispatch([
                "prunec", "prune", &p("m.json"), &p("m.bin"),
                "--heuristic", "l2", "--sparsity", "0.5", "--out", &p("p"),
            ]),
            EXIT_OK
        );
        assert_eq!(
            dispatch(["prunec", "groups", &p("m.json"), &p("m.bin"), "--dot", &p("groups.dot")]),
            EXIT_OK
        );
        // report must not mutate its inputs
        let before = sha256(&d.join("m.json"));
        assert_eq!(
            dispatch(["prunec", "report", &p("m.json"), &p("m.bin"), "--json", "--input", "1x3x32x32"]),
            EXIT_OK
        );
        assert_eq!(sha256(&d.join("m.json")), before);
    }
    for name in produced {
        assert_eq!(
            sha256(&dirs[0].path().join(name)),
            sha256(&dirs[1].path().join(name)),
            "{name} differs between identical invocations"
        );
    }

    // verify: a model against itself is exact; against its pruned form the
    // outputs differ and the exit code reports the verification failure
    let d = dirs[0].path();
    let p = |n: &str| d.join(n).to_str().unwrap().to_string();
    assert_eq!(
        dispatch([
            "prunec", "verify", &p("m.json"), &p("m.bin"), &p("m.json"), &p("m.bin"),
            "--input", "1x3x32x32", "--rtol", "0", "--trials", "3",
        ]),
        EXIT_OK
    );
    assert_eq!(
        dispatch([
            "prunec", "verify", &p("m.json"), &p("m.bin"), &p("p.json"), &p("p.bin"),
            "--input", "1x3x32x32", "--rtol", "1e-6", "--trials", "3",
        ]),
        EXIT_VERIFY_FAILED
    );
    // pq consumes both CSV grids and the compact binary form
    fs::write(d.join("a.csv"), "1,1,0\n1,1,0\n0,0,2\n").unwrap();
    let imap = InstanceMap::from_csv("1,1,0\n1,1,0\n0,0,2\n").unwrap();
    fs::write(d.join("b.imap"), imap.to_bytes()).unwrap();
    assert_eq!(dispatch(["prunec", "pq", &p("a.csv"), &p("b.imap")]), EXIT_OK);

    // forced usage error per the CLI contract
    assert_eq!(
        dispatch([
            "prunec", "prune", &p("m.json"), &p("m.bin"), "--sparsity", "1.0", "--out", &p("q"),
        ]),
        EXIT_USAGE
    );
    println!("criterion 10: PASS — identical CLI pipelines produce byte-identical artifacts; verify/usage exit codes correct");
}
