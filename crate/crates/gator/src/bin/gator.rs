//! Command-line front end: analyze | profile-latency | train | prune | report.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid input.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ndarray::Array4;
use rand::Rng;

use gator::cost::{CostFactors, CostObjective, LatencyTable};
use gator::data::load_dataset;
use gator::gating::{gates_from_store, gates_to_store};
use gator::hypergraph::{DependencyHypergraph, Side, build_hypergraph};
use gator::ir::{
    NetworkGraph, WeightStore, builtin_graph, count_flops, count_params, parse_network,
    serialize_network,
};
use gator::profile::{ProfileConfig, profile_latency};
use gator::prune::{
    apply_pruning, collapse_empty_blocks, extract_plan, forward_gap, report, PruningPlan,
};
use gator::rng::stream;
use gator::train::{
    ObjectiveKind, PruningRunLog, parse_config, resume_iterative_pruning,
    serialize_config,
};
use gator::{GatorError, Result};

#[derive(Parser)]
#[command(name = "gator", about = "Structured channel pruning via stochastic hard gates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct IrArg {
    /// Network IR: a JSON file path or `builtin:NAME`.
    #[arg(long)]
    ir: String,
    /// Spatial input size as `H,W`.
    #[arg(long, default_value = "16,16", value_parser = parse_hw)]
    input_size: (usize, usize),
}

fn parse_hw(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once(',').ok_or("expected H,W")?;
    let h = h.trim().parse().map_err(|_| "bad height")?;
    let w = w.trim().parse().map_err(|_| "bad width")?;
    if h == 0 || w == 0 {
        return Err("input size must be positive".into());
    }
    Ok((h, w))
}

#[derive(Subcommand)]
enum Command {
    /// Print the dependency edge table and per-edge cost factors.
    Analyze {
        #[command(flatten)]
        ir: IrArg,
        /// Latency table file; adds a latency λ column when given.
        #[arg(long)]
        latency_table: Option<PathBuf>,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time the reference executor and derive per-channel latency factors.
    ProfileLatency {
        #[command(flatten)]
        ir: IrArg,
        /// Profiling config (TOML); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Weight container; random weights from --seed when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output latency table file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the iterative gating/fine-tuning schedule.
    Train {
        #[command(flatten)]
        ir: IrArg,
        /// Starting weights; random init from the seed when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Dataset: IDX file prefix or `synthetic:...` spec.
        #[arg(long)]
        data: String,
        /// Training config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Override the config's objective.
        #[arg(long, value_parser = ["memory", "flops", "latency"])]
        objective: Option<String>,
        /// Latency table (required for the latency objective).
        #[arg(long)]
        latency_table: Option<PathBuf>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for checkpoints, logs, and the final plan.
        #[arg(long)]
        out: PathBuf,
        /// Continue from the last completed iteration found in --out.
        #[arg(long)]
        resume: bool,
    },
    /// Materialize a gate checkpoint into a smaller network.
    Prune {
        #[command(flatten)]
        ir: IrArg,
        #[arg(long)]
        weights: PathBuf,
        /// Gate checkpoint (weight container with edge{j}.theta/.pruned).
        #[arg(long)]
        gates: PathBuf,
        /// Output directory for the emitted IR, weights, plan, and report.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the reduction report for a gate checkpoint without emitting.
    Report {
        #[command(flatten)]
        ir: IrArg,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        gates: PathBuf,
        /// Also write the report (JSON) to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_input(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| GatorError::Parse(format!("{}: {e}", path.display())))
}

fn load_ir(spec: &str) -> Result<NetworkGraph> {
    if let Some(name) = spec.strip_prefix("builtin:") {
        builtin_graph(name)
    } else {
        parse_network(&read_input(Path::new(spec))?)
    }
}

fn load_objective(
    kind: ObjectiveKind,
    latency_table: Option<&Path>,
    h: &DependencyHypergraph,
) -> Result<CostObjective> {
    Ok(match kind {
        ObjectiveKind::Memory => CostObjective::Memory,
        ObjectiveKind::Flops => CostObjective::Flops,
        ObjectiveKind::Latency => {
            let path = latency_table.ok_or_else(|| {
                GatorError::Config("latency objective requires --latency-table".into())
            })?;
            let table = LatencyTable::parse(&read_input(path)?)?;
            for j in h.prunable_edges() {
                if table.row(j).is_none() {
                    return Err(GatorError::Config(format!(
                        "latency table misses prunable edge {j}"
                    )));
                }
            }
            CostObjective::Latency(table)
        }
    })
}

fn analyze_table(
    g: &NetworkGraph,
    h: &DependencyHypergraph,
    input_hw: (usize, usize),
    latency: Option<&LatencyTable>,
) -> Result<String> {
    let memory = CostFactors::initial(g, h, &CostObjective::Memory, input_hw)?;
    let flops = CostFactors::initial(g, h, &CostObjective::Flops, input_hw)?;
    let mut out = String::new();
    out.push_str("edge  width  kind      class   lambda_memory  lambda_flops");
    if latency.is_some() {
        out.push_str("  lambda_latency");
    }
    out.push_str("  members\n");
    for e in h.edges() {
        let members: Vec<String> = h
            .member_weighted_layers(g, e.id)
            .into_iter()
            .map(|(i, side)| {
                let tag = if side == Side::Out { "out" } else { "in" };
                format!("{}:{tag}", g.layer(i).id)
            })
            .collect();
        let kind = if e.frozen { "frozen" } else { "prunable" };
        let class = if e.is_trivial() { "trivial" } else { "multi" };
        out.push_str(&format!(
            "{:<5} {:<6} {:<9} {:<7} {:<14.6} {:<12.6}",
            e.id,
            e.channel_count,
            kind,
            class,
            memory.lambda[e.id],
            flops.lambda[e.id],
        ));
        if let Some(table) = latency {
            let l = table.row(e.id).map(|r| r.lambda).unwrap_or(0.0);
            out.push_str(&format!("  {l:<14.6e}"));
        }
        out.push_str(&format!("  {}\n", members.join(" ")));
    }
    let prunable = h.prunable_edges().len();
    out.push_str(&format!(
        "{} edges ({} prunable, {} frozen); total flops {}, params {}\n",
        h.edges().len(),
        prunable,
        h.edges().len() - prunable,
        count_flops(g, input_hw),
        count_params(g),
    ));
    Ok(out)
}

fn load_or_init_weights(
    path: Option<&Path>,
    g: &NetworkGraph,
    seed: u64,
) -> Result<WeightStore> {
    match path {
        Some(p) => {
            let w = WeightStore::load(p)?;
            w.validate_against(g)?;
            Ok(w)
        }
        None => Ok(WeightStore::init_random(g, seed)),
    }
}

/// Find the last iteration whose artifacts are all present in `dir`.
fn last_complete_iteration(dir: &Path, schedule_len: usize) -> Option<usize> {
    (0..schedule_len)
        .rev()
        .find(|it| {
            ["gating.weights", "finetuned.weights", "gates"]
                .iter()
                .all(|suffix| dir.join(format!("iter{it}.{suffix}")).is_file())
        })
}

fn cmd_train(
    ir: &IrArg,
    weights: Option<&Path>,
    data_spec: &str,
    config_path: &Path,
    objective_override: Option<&str>,
    latency_table: Option<&Path>,
    seed_override: Option<u64>,
    out: &Path,
    resume: bool,
) -> Result<()> {
    let g = load_ir(&ir.ir)?;
    let h = build_hypergraph(&g)?;
    let mut config = parse_config(&read_input(config_path)?)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    if let Some(name) = objective_override {
        config.objective = match name {
            "memory" => ObjectiveKind::Memory,
            "flops" => ObjectiveKind::Flops,
            _ => ObjectiveKind::Latency,
        };
    }
    let objective = load_objective(config.objective, latency_table, &h)?;
    let data = load_dataset(data_spec, config.seed)?;
    let base = load_or_init_weights(weights, &g, config.seed)?;

    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), serialize_config(&config))?;

    let (start, start_w, start_gates, start_log) = if resume {
        match last_complete_iteration(out, config.alpha_schedule.len()) {
            Some(it) => {
                let w = WeightStore::load(&out.join(format!("iter{it}.gating.weights")))?;
                w.validate_against(&g)?;
                let store = WeightStore::load(&out.join(format!("iter{it}.gates")))?;
                let gates = gates_from_store(&g, &h, &store)?;
                let log_text = std::fs::read_to_string(out.join("log.jsonl"))?;
                let mut log = PruningRunLog::from_jsonl(&log_text)?;
                log.records.retain(|r| r.iteration <= it);
                eprintln!("resuming after iteration {it}");
                (it + 1, w, gates, log)
            }
            None => (
                0,
                base.clone(),
                gator::gating::init_gates(&g, &h, config.p_gate)?,
                PruningRunLog::default(),
            ),
        }
    } else {
        (
            0,
            base.clone(),
            gator::gating::init_gates(&g, &h, config.p_gate)?,
            PruningRunLog::default(),
        )
    };

    let outcome = resume_iterative_pruning(
        &g,
        &h,
        start_w,
        start_gates,
        start_log,
        start,
        &data,
        &config,
        &objective,
    )?;

    for (offset, art) in outcome.iterations.iter().enumerate() {
        let it = start + offset;
        art.gating_weights
            .save(&out.join(format!("iter{it}.gating.weights")))?;
        art.finetuned_weights
            .save(&out.join(format!("iter{it}.finetuned.weights")))?;
        gates_to_store(&art.gates).save(&out.join(format!("iter{it}.gates")))?;
    }
    outcome.final_weights.save(&out.join("final.weights"))?;
    gates_to_store(&outcome.gates).save(&out.join("final.gates"))?;
    std::fs::write(out.join("log.jsonl"), outcome.log.to_jsonl())?;
    let plan = extract_plan(&outcome.gates, &h);
    std::fs::write(
        out.join("plan.json"),
        serde_json::to_string_pretty(&plan).expect("plan serialization") + "\n",
    )?;
    if let Some(last) = outcome.log.records.last() {
        println!(
            "done: eval accuracy {:.4}, flops estimate {}, {} channels pruned",
            last.eval_accuracy,
            last.flops_estimate,
            outcome.gates.total_pruned()
        );
    } else {
        println!("done: empty schedule, nothing trained");
    }
    Ok(())
}

fn emit(
    g: &NetworkGraph,
    w: &WeightStore,
    h: &DependencyHypergraph,
    plan: &PruningPlan,
    input_hw: (usize, usize),
    seed: u64,
) -> Result<(gator::prune::PrunedNetwork, gator::prune::PruneReport)> {
    let emitted = apply_pruning(g, w, plan, h)?;
    // Equivalence gate: the emitted network must match the gated original.
    let mut rng = stream(seed, "emit-check");
    let batch = Array4::from_shape_fn(
        (100, g.input_channels(), input_hw.0, input_hw.1),
        |_| rng.random::<f64>() - 0.5,
    );
    let gap = forward_gap(g, w, h, plan, &emitted, &batch)?;
    if gap > 1e-5 {
        return Err(GatorError::PlanMismatch(format!(
            "emitted network deviates from the gated network by {gap:e}; emission aborted"
        )));
    }
    let emitted = match collapse_empty_blocks(&emitted) {
        Ok(collapsed) => collapsed,
        Err(GatorError::NonCollapsible(msg)) => {
            eprintln!("warning: empty branches kept: {msg}");
            apply_pruning(g, w, plan, h)?
        }
        Err(e) => return Err(e),
    };
    let rep = report(g, &emitted, input_hw);
    Ok((emitted, rep))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze {
            ir,
            latency_table,
            out,
        } => {
            let g = load_ir(&ir.ir)?;
            let h = build_hypergraph(&g)?;
            let table = match latency_table {
                Some(p) => Some(LatencyTable::parse(&read_input(&p)?)?),
                None => None,
            };
            let text = analyze_table(&g, &h, ir.input_size, table.as_ref())?;
            print!("{text}");
            if let Some(path) = out {
                std::fs::write(path, text)?;
            }
            Ok(())
        }
        Command::ProfileLatency {
            ir,
            config,
            weights,
            seed,
            out,
        } => {
            let g = load_ir(&ir.ir)?;
            let mut cfg: ProfileConfig = match config {
                Some(p) => toml::from_str(&read_input(&p)?)
                    .map_err(|e| GatorError::Config(e.to_string()))?,
                None => ProfileConfig::default(),
            };
            cfg.input_hw = ir.input_size;
            let w = load_or_init_weights(weights.as_deref(), &g, seed)?;
            let table = profile_latency(&g, &w, &cfg)?;
            std::fs::write(&out, table.to_text())?;
            println!(
                "profiled {} edges; T_orig {:.3e} s; table written to {}",
                table.rows().count(),
                table.t_orig,
                out.display()
            );
            Ok(())
        }
        Command::Train {
            ir,
            weights,
            data,
            config,
            objective,
            latency_table,
            seed,
            out,
            resume,
        } => cmd_train(
            &ir,
            weights.as_deref(),
            &data,
            &config,
            objective.as_deref(),
            latency_table.as_deref(),
            seed,
            &out,
            resume,
        ),
        Command::Prune {
            ir,
            weights,
            gates,
            out,
            seed,
        } => {
            let g = load_ir(&ir.ir)?;
            let h = build_hypergraph(&g)?;
            let w = WeightStore::load(&weights)?;
            w.validate_against(&g)?;
            let gates = gates_from_store(&g, &h, &WeightStore::load(&gates)?)?;
            let plan = extract_plan(&gates, &h);
            let (emitted, rep) = emit(&g, &w, &h, &plan, ir.input_size, seed)?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("pruned.json"), serialize_network(&emitted.graph))?;
            emitted.weights.save(&out.join("pruned.weights"))?;
            std::fs::write(
                out.join("plan.json"),
                serde_json::to_string_pretty(&plan).expect("plan serialization") + "\n",
            )?;
            std::fs::write(
                out.join("report.json"),
                serde_json::to_string_pretty(&rep).expect("report serialization") + "\n",
            )?;
            println!(
                "emitted {} layers (was {}); flops -{:.1}%, params -{:.1}%",
                rep.layers_pruned,
                rep.layers_original,
                100.0 * rep.flops_reduction,
                100.0 * rep.memory_reduction
            );
            Ok(())
        }
        Command::Report {
            ir,
            weights,
            gates,
            out,
        } => {
            let g = load_ir(&ir.ir)?;
            let h = build_hypergraph(&g)?;
            let w = WeightStore::load(&weights)?;
            w.validate_against(&g)?;
            let gates = gates_from_store(&g, &h, &WeightStore::load(&gates)?)?;
            let plan = extract_plan(&gates, &h);
            let (_, rep) = emit(&g, &w, &h, &plan, ir.input_size, 0)?;
            let json = serde_json::to_string_pretty(&rep).expect("report serialization");
            println!("{json}");
            if let Some(path) = out {
                std::fs::write(path, json + "\n")?;
            }
            Ok(())
        }
    }
}

/// Invalid inputs (unparsable or inconsistent artifacts) exit 2; runtime
/// failures exit 1.
fn exit_status(e: &GatorError) -> u8 {
    match e {
        GatorError::CycleDetected { .. }
        | GatorError::UnknownLayerKind { .. }
        | GatorError::ChannelMismatch { .. }
        | GatorError::DanglingInput { .. }
        | GatorError::InvalidGraph(_)
        | GatorError::UnknownBuiltin(_)
        | GatorError::WeightStore(_)
        | GatorError::UnknownEdge(_)
        | GatorError::UnknownVertex(_)
        | GatorError::Gating(_)
        | GatorError::PlanMismatch(_)
        | GatorError::Dataset(_)
        | GatorError::Config(_)
        | GatorError::Profile(_)
        | GatorError::Parse(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_status(&e))
        }
    }
}
