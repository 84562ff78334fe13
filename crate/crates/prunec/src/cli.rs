//! Command-line entry point. Exit codes: 0 success, 1 verification failure,
//! 2 usage error, 3 data/model error. All diagnostics go to stderr as a
//! single `error_code: message` line so the tool can be scripted.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::cost::{count_flops, count_params};
use crate::depgraph::{build_groups, groups_to_dot, GroupKind, PruneGroup};
use crate::error::{Error, Result};
use crate::executor::{measure_latency, random_input, run};
use crate::graph::{load_model, save_model, shape_check, ModelGraph};
use crate::importance::{score_all, Heuristic};
use crate::planner::{plan_iterative, plan_oneshot, PlanOptions, PrunePlan, Strategy};
use crate::rewriter::apply_plan;
use crate::segmetrics::{compute_pq, match_instances, mean_over_classes, InstanceMap};
use crate::zoo;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "prunec", version, about = "Structural pruning toolkit for convolutional network graphs", disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Model manifest (JSON)
    manifest: PathBuf,
    /// Weight blob (binary)
    weights: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Print a model summary and all edge shapes
    Inspect(ModelArgs),
    /// Print the prune-group table
    Groups {
        #[command(flatten)]
        model: ModelArgs,
        /// Also write a Graphviz rendering of the groups
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Full pipeline: analyze, score, plan, rewrite, save
    Prune {
        #[command(flatten)]
        model: ModelArgs,
        /// Output stem; writes <out>.json, <out>.bin and <out>.plan.json
        #[arg(long)]
        out: PathBuf,
        /// Importance heuristic: l1, l2 or bn
        #[arg(long, default_value = "l2")]
        heuristic: String,
        /// Fraction of each group's channel classes to remove, in [0, 1)
        #[arg(long)]
        sparsity: f64,
        #[arg(long, default_value = "oneshot")]
        strategy: String,
        /// Iterative: per-round sparsity increment
        #[arg(long)]
        step: Option<f64>,
        /// Iterative: number of rounds
        #[arg(long)]
        rounds: Option<usize>,
        /// Sparsity ceiling for interdependent groups
        #[arg(long)]
        cap: Option<f64>,
        /// Iterative: re-score importance after each round
        #[arg(long, default_value = "true")]
        recompute: String,
        /// JSON file with per-group sparsity overrides ({"group_id": s, ...})
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Parameter/FLOP/latency report
    Report {
        #[command(flatten)]
        model: ModelArgs,
        /// Emit the full report as JSON instead of a table
        #[arg(long)]
        json: bool,
        /// Input shape NxCxHxW (required for FLOPs and latency)
        #[arg(long)]
        input: Option<String>,
        /// Also measure reference-interpreter latency
        #[arg(long)]
        latency: bool,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run two models on seeded random inputs and compare outputs
    Verify {
        a_manifest: PathBuf,
        a_weights: PathBuf,
        b_manifest: PathBuf,
        b_weights: PathBuf,
        /// Input shape NxCxHxW
        #[arg(long)]
        input: String,
        /// Maximum allowed relative deviation
        #[arg(long, default_value_t = 1e-5)]
        rtol: f64,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a reference architecture
    Zoo {
        /// resnet18, hovernet-toy or plain-cnn
        arch: String,
        #[arg(long, default_value_t = 1000)]
        classes: usize,
        #[arg(long, default_value_t = 1.0)]
        width_mult: f64,
        #[arg(long)]
        seed: Option<u64>,
        /// Output stem; writes <out>.json and <out>.bin
        #[arg(long)]
        out: PathBuf,
    },
    /// Instance-segmentation quality of a prediction against ground truth
    Pq {
        /// Predicted instance map (.csv or binary .imap)
        pred: PathBuf,
        /// Ground-truth instance map
        gt: PathBuf,
        /// Report class-averaged metrics (maps must carry class tables)
        #[arg(long)]
        classes: bool,
    },
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::BadSparsity(_) | Error::BadSchedule { .. } | Error::BadK { .. } => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn default_seed(flag: Option<u64>) -> u64 {
    flag.or_else(|| std::env::var("PRUNEC_SEED").ok().and_then(|v| v.parse().ok()))
        .unwrap_or(42)
}

fn parse_shape(s: &str) -> Result<Vec<usize>> {
    let dims: Option<Vec<usize>> = s.split('x').map(|d| d.parse().ok()).collect();
    match dims {
        Some(d) if !d.is_empty() && d.iter().all(|&x| x > 0) => Ok(d),
        _ => Err(Error::Unsupported(format!("bad input shape `{s}`; expected NxCxHxW"))),
    }
}

fn load(args: &ModelArgs) -> Result<ModelGraph> {
    let manifest = fs::read(&args.manifest)?;
    let weights = fs::read(&args.weights)?;
    load_model(&manifest, &weights)
}

fn write_model(g: &ModelGraph, stem: &Path) -> Result<()> {
    let (manifest, blob) = save_model(g);
    fs::write(stem.with_extension("json"), manifest)?;
    fs::write(stem.with_extension("bin"), blob)?;
    Ok(())
}

fn load_instance_map(path: &Path) -> Result<InstanceMap> {
    if path.extension().and_then(|e| e.to_str()) == Some("csv") {
        InstanceMap::from_csv(&fs::read_to_string(path)?)
    } else {
        InstanceMap::from_bytes(&fs::read(path)?)
    }
}

fn kind_str(k: GroupKind) -> &'static str {
    match k {
        GroupKind::Local => "local",
        GroupKind::Interdependent => "interdependent",
        GroupKind::Frozen => "frozen",
    }
}

/// Audit record written next to every pruned model: which classes died in
/// which group, with the scores that condemned them.
#[derive(serde::Serialize)]
struct PlanAudit<'a> {
    fingerprint: &'a str,
    heuristic: Heuristic,
    strategy: Strategy,
    target_sparsity: f64,
    cap: Option<f64>,
    rounds: usize,
    groups: Vec<AuditGroup<'a>>,
}

#[derive(serde::Serialize)]
struct AuditGroup<'a> {
    group_id: usize,
    kind: &'static str,
    size: usize,
    producer_signature: &'a [String],
    /// Importance of each class on the original weights; absent for frozen
    /// groups, which are never scored.
    scores: Option<Vec<f64>>,
    /// Original class indices removed by the (cumulative) plan.
    removed: Vec<usize>,
}

fn write_audit(
    g: &ModelGraph,
    groups: &[PruneGroup],
    plan: &PrunePlan,
    rounds: usize,
    out: &Path,
) -> Result<()> {
    let table = score_all(g, groups, plan.heuristic, false)?;
    let audit = PlanAudit {
        fingerprint: &plan.fingerprint,
        heuristic: plan.heuristic,
        strategy: plan.strategy,
        target_sparsity: plan.target_sparsity,
        cap: plan.cap,
        rounds,
        groups: groups
            .iter()
            .map(|grp| AuditGroup {
                group_id: grp.group_id,
                kind: kind_str(grp.kind),
                size: grp.len(),
                producer_signature: &grp.producer_signature,
                scores: table.groups[grp.group_id].as_ref().map(|s| s.scores.clone()),
                removed: plan.removals.get(&grp.group_id).cloned().unwrap_or_default(),
            })
            .collect(),
    };
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".plan.json");
    fs::write(out.with_file_name(name), serde_json::to_string_pretty(&audit).unwrap())?;
    Ok(())
}

fn cmd_inspect(model: &ModelArgs) -> Result<()> {
    let g = load(model)?;
    let shapes = shape_check(&g)?;
    let params = count_params(&g);
    println!("model: {}", g.name);
    println!("nodes: {}", g.nodes.len());
    println!("params: {} ({} bytes)", params.total_params, params.model_bytes);
    for spec in &g.inputs {
        println!("input: {} {:?}", spec.name, spec.shape);
    }
    for out in &g.outputs {
        println!("output: {} {:?}", out, shapes.get(out).unwrap());
    }
    for (k, v) in &g.metadata {
        println!("metadata: {k} = {v}");
    }
    println!("edges:");
    for (edge, shape) in &shapes.shapes {
        println!("  {edge} {shape:?}");
    }
    Ok(())
}

fn cmd_groups(model: &ModelArgs, dot: Option<&Path>) -> Result<()> {
    let g = load(model)?;
    let groups = build_groups(&g)?;
    println!("{:<6} {:<15} {:<7} producers", "group", "kind", "size");
    for grp in &groups {
        println!(
            "{:<6} {:<15} {:<7} {}",
            grp.group_id,
            kind_str(grp.kind),
            grp.len(),
            grp.producer_signature.join(",")
        );
    }
    if let Some(path) = dot {
        fs::write(path, groups_to_dot(&groups, &g))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_prune(
    model: &ModelArgs,
    out: &Path,
    heuristic: &str,
    sparsity: f64,
    strategy: &str,
    step: Option<f64>,
    rounds: Option<usize>,
    cap: Option<f64>,
    recompute: &str,
    config: Option<&Path>,
) -> Result<i32> {
    let heuristic = match Heuristic::parse(heuristic) {
        Some(h) => h,
        None => {
            eprintln!("Usage: unknown heuristic `{heuristic}` (expected l1, l2 or bn)");
            return Ok(EXIT_USAGE);
        }
    };
    let recompute = match recompute {
        "true" => true,
        "false" => false,
        other => {
            eprintln!("Usage: --recompute expects true or false, got `{other}`");
            return Ok(EXIT_USAGE);
        }
    };
    let mut opts = PlanOptions { cap, ..Default::default() };
    if let Some(path) = config {
        let text = fs::read_to_string(path)?;
        let raw: BTreeMap<String, f64> = serde_json::from_str(&text)
            .map_err(|e| Error::MalformedManifest(format!("override config: {e}")))?;
        for (k, v) in raw {
            let id = k
                .parse::<usize>()
                .map_err(|_| Error::MalformedManifest(format!("override key `{k}` is not a group id")))?;
            opts.overrides.insert(id, v);
        }
    }

    let g = load(model)?;
    let groups = build_groups(&g)?;
    let (pruned, cumulative, n_rounds) = match strategy {
        "oneshot" => {
            let plan = plan_oneshot(&g, &groups, heuristic, sparsity, &opts)?;
            (apply_plan(&g, &plan)?, plan, 0)
        }
        "iterative" => {
            let step = step.ok_or(Error::BadSchedule { step: 0.0, rounds: 0 })?;
            let rounds = rounds.ok_or(Error::BadSchedule { step, rounds: 0 })?;
            let ladder = plan_iterative(&g, heuristic, step, rounds, &opts, recompute)?;
            (apply_plan(&g, &ladder.cumulative)?, ladder.cumulative, rounds)
        }
        other => {
            eprintln!("Usage: unknown strategy `{other}` (expected oneshot or iterative)");
            return Ok(EXIT_USAGE);
        }
    };

    write_model(&pruned, out)?;
    write_audit(&g, &groups, &cumulative, n_rounds, out)?;
    let before = count_params(&g).total_params;
    let after = count_params(&pruned).total_params;
    println!(
        "pruned {} -> {} params ({} removed classes)",
        before,
        after,
        cumulative.removed_total()
    );
    Ok(EXIT_OK)
}

#[allow(clippy::too_many_arguments)]
fn cmd_report(
    model: &ModelArgs,
    json: bool,
    input: Option<&str>,
    latency: bool,
    reps: usize,
    warmup: usize,
    seed: u64,
) -> Result<i32> {
    let g = load(model)?;
    let shape = input.map(parse_shape).transpose()?;
    if latency && shape.is_none() {
        eprintln!("Usage: --latency requires --input NxCxHxW");
        return Ok(EXIT_USAGE);
    }
    let mut report = match &shape {
        Some(s) => count_flops(&g, s)?,
        None => count_params(&g),
    };
    if latency {
        report.latency = Some(measure_latency(&g, shape.as_ref().unwrap(), reps, warmup, seed)?);
    }

    if json {
        println!("{}", serde_json::to_string_pretty(&report).unwrap());
        return Ok(EXIT_OK);
    }
    println!("model: {}", g.name);
    println!("params: {}", report.total_params);
    println!("trainable: {}", report.trainable_params);
    println!("bytes: {}", report.model_bytes);
    if let Some(flops) = report.total_flops {
        println!("flops: {flops} ({})", report.flop_convention);
    }
    if let Some(lat) = &report.latency {
        println!(
            "latency_ms: median {:.3} min {:.3} mean {:.3}",
            lat.median_ms, lat.min_ms, lat.mean_ms
        );
    }
    println!("{:<24} {:>12} {:>16}", "node", "params", "flops");
    for (node, p) in &report.per_node_params {
        let f = report
            .per_node_flops
            .as_ref()
            .and_then(|m| m.get(node))
            .map_or_else(|| "-".to_string(), |v| v.to_string());
        println!("{node:<24} {p:>12} {f:>16}");
    }
    Ok(EXIT_OK)
}

fn cmd_verify(
    a: &ModelArgs,
    b: &ModelArgs,
    input: &str,
    rtol: f64,
    trials: usize,
    seed: u64,
) -> Result<i32> {
    let ga = load(a)?;
    let gb = load(b)?;
    let shape = parse_shape(input)?;
    let mut max_dev = 0.0f64;
    for t in 0..trials.max(1) {
        let mut inputs = BTreeMap::new();
        for (i, spec) in ga.inputs.iter().enumerate() {
            let s = if i == 0 { shape.clone() } else { spec.shape.clone() };
            inputs.insert(spec.name.clone(), random_input(&s, seed + (t * 1000 + i) as u64));
        }
        let ra = run(&ga, &inputs)?;
        let rb = run(&gb, &inputs)?;
        for (name, va) in &ra {
            let vb = rb.get(name).ok_or_else(|| Error::ShapeMismatch {
                node: name.clone(),
                expected: "output present in both models".into(),
                found: "missing".into(),
            })?;
            if va.shape != vb.shape {
                return Err(Error::ShapeMismatch {
                    node: name.clone(),
                    expected: format!("{:?}", va.shape),
                    found: format!("{:?}", vb.shape),
                });
            }
            for (x, y) in va.data.iter().zip(&vb.data) {
                let dev = (x - y).abs() as f64 / (x.abs().max(y.abs()) as f64).max(1e-12);
                max_dev = max_dev.max(dev);
            }
        }
    }
    println!("max_relative_deviation: {max_dev:e}");
    if max_dev <= rtol {
        println!("verify: ok (rtol {rtol:e})");
        Ok(EXIT_OK)
    } else {
        eprintln!("VerifyFailed: max relative deviation {max_dev:e} exceeds rtol {rtol:e}");
        Ok(EXIT_VERIFY_FAILED)
    }
}

fn cmd_zoo(arch: &str, classes: usize, width_mult: f64, seed: u64, out: &Path) -> Result<i32> {
    let g = match arch {
        "resnet18" => zoo::build_resnet18(classes, width_mult, seed),
        "hovernet-toy" => zoo::build_hovernet_toy(seed),
        "plain-cnn" => zoo::build_plain_cnn(&[16, 32], classes, seed),
        other => {
            eprintln!("Usage: unknown architecture `{other}` (expected resnet18, hovernet-toy or plain-cnn)");
            return Ok(EXIT_USAGE);
        }
    };
    write_model(&g, out)?;
    println!("wrote {} ({} params)", g.name, count_params(&g).total_params);
    Ok(EXIT_OK)
}

fn cmd_pq(pred: &Path, gt: &Path, classes: bool) -> Result<()> {
    let pred = load_instance_map(pred)?;
    let gt = load_instance_map(gt)?;
    if classes {
        let m = mean_over_classes(&[(&pred, &gt)])?;
        println!("{}", serde_json::to_string_pretty(&m).unwrap());
    } else {
        let scores = compute_pq(&match_instances(&pred, &gt)?);
        println!("{}", serde_json::to_string_pretty(&scores).unwrap());
    }
    Ok(())
}

/// Parses argv and runs the selected subcommand, returning the process exit
/// code. Never panics on bad input.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            // help/version are successful exits
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return EXIT_OK;
            }
            let first = e.to_string();
            let first = first.lines().find(|l| !l.trim().is_empty()).unwrap_or("bad arguments");
            eprintln!("Usage: {}", first.trim_start_matches("error: "));
            return EXIT_USAGE;
        }
    };

    let outcome: Result<i32> = match &cli.cmd {
        Cmd::Inspect(model) => cmd_inspect(model).map(|()| EXIT_OK),
        Cmd::Groups { model, dot } => cmd_groups(model, dot.as_deref()).map(|()| EXIT_OK),
        Cmd::Prune {
            model,
            out,
            heuristic,
            sparsity,
            strategy,
            step,
            rounds,
            cap,
            recompute,
            config,
        } => cmd_prune(
            model,
            out,
            heuristic,
            *sparsity,
            strategy,
            *step,
            *rounds,
            *cap,
            recompute,
            config.as_deref(),
        ),
        Cmd::Report { model, json, input, latency, reps, warmup, seed } => cmd_report(
            model,
            *json,
            input.as_deref(),
            *latency,
            *reps,
            *warmup,
            default_seed(*seed),
        ),
        Cmd::Verify { a_manifest, a_weights, b_manifest, b_weights, input, rtol, trials, seed } => {
            let a = ModelArgs { manifest: a_manifest.clone(), weights: a_weights.clone() };
            let b = ModelArgs { manifest: b_manifest.clone(), weights: b_weights.clone() };
            cmd_verify(&a, &b, input, *rtol, *trials, default_seed(*seed))
        }
        Cmd::Zoo { arch, classes, width_mult, seed, out } => {
            cmd_zoo(arch, *classes, *width_mult, default_seed(*seed), out)
        }
        Cmd::Pq { pred, gt, classes } => cmd_pq(pred, gt, *classes).map(|()| EXIT_OK),
    };

    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("{err}");
            exit_code_for(&err)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_parsing() {
        assert_eq!(parse_shape("1x3x64x64").unwrap(), vec![1, 3, 64, 64]);
        assert!(parse_shape("1x0x4").is_err());
        assert!(parse_shape("abc").is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(dispatch(["prunec", "definitely-not-a-command"]), EXIT_USAGE);
        assert_eq!(dispatch(["prunec", "prune"]), EXIT_USAGE);
    }

    #[test]
    fn help_exits_0() {
        assert_eq!(dispatch(["prunec", "--help"]), EXIT_OK);
    }

    #[test]
    fn missing_model_exits_3() {
        assert_eq!(
            dispatch(["prunec", "inspect", "/nonexistent.json", "/nonexistent.bin"]),
            EXIT_DATA
        );
    }

    #[test]
    fn bad_sparsity_exits_2() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("m");
        let g = zoo::build_plain_cnn(&[8], 3, 1);
        write_model(&g, &stem).unwrap();
        let code = dispatch([
            "prunec",
            "prune",
            stem.with_extension("json").to_str().unwrap(),
            stem.with_extension("bin").to_str().unwrap(),
            "--sparsity",
            "1.0",
            "--out",
            dir.path().join("p").to_str().unwrap(),
        ]);
        assert_eq!(code, EXIT_USAGE);
    }
}
