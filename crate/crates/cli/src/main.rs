//! `agl`: run each stage of the pipeline from a JSON run configuration.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use agl_core::agents::{load_agent, load_backbone, train_planner, Agent, AgentKind};
use agl_core::agle::AgleFile;
use agl_core::align::{train_align, PlantedTarget};
use agl_core::config::{RunConfig, ALIGN_CHECKPOINT, BC_CHECKPOINT, GASP_CHECKPOINT, RPG_CHECKPOINT};
use agl_core::diagnostics::grad_check_all;
use agl_core::env::{Cell, GridSpec};
use agl_core::eval::{episode_rng, export_trace, run_episode, sweep, task_suite};
use agl_core::gasp::{gasp_accuracy, gasp_holdout, rpg_pretrain, train_bc, train_gasp, write_curve, GaspDatasetSpec};
use agl_core::nn::checkpoint;
use agl_core::oracle::{random_policy_sr_exact, write_trajectories, RandomWalkConvention, WorldEmbeddings};
use agl_core::planner::write_log;
use agl_core::rollout::PolicyMode;
use agl_core::{Error, Result};

#[derive(Parser)]
#[command(name = "agl", version, about = "Active geo-localization toolkit")]
struct Cli {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the run directory from the configuration.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one synthetic world's embeddings as an AGLE file.
    GenWorld {
        #[arg(long, default_value_t = 0)]
        world_seed: u64,
        /// Goal cell as ROW,COL.
        #[arg(long, default_value = "0,0", value_parser = parse_cell)]
        goal: Cell,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write random training walks as JSON lines.
    GaspData {
        #[arg(long, default_value_t = 100)]
        count: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the alignment encoder on the planted task.
    TrainAlign,
    /// Pretrain the sequence model.
    TrainGasp,
    /// Pretrain the sequence model with masked gradient categories.
    TrainRpg,
    /// Train the behaviour-cloning baseline.
    TrainBc,
    /// Train the planner of one agent.
    TrainPpo {
        #[arg(long, default_value = "gomaa")]
        agent: AgentKind,
    },
    /// Success ratios of several agents on the shared suite.
    Eval {
        /// Comma-separated agent names.
        #[arg(long, value_delimiter = ',', default_value = "random,gomaa")]
        agents: Vec<AgentKind>,
    },
    /// Export one episode of one agent.
    Trace {
        #[arg(long, default_value = "gomaa")]
        agent: AgentKind,
        #[arg(long = "C")]
        distance: usize,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        mode: Option<PolicyMode>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient checks.
    GradCheck {
        /// Run every case (the only mode).
        #[arg(long)]
        all: bool,
    },
    /// Exact success probability of the random policy.
    SrOracle {
        /// Grid as ROWSxCOLS.
        #[arg(long, default_value = "5x5", value_parser = parse_grid)]
        grid: GridSpec,
        #[arg(long = "C")]
        distance: usize,
        #[arg(long = "B")]
        budget: usize,
        #[arg(long, default_value = "masked")]
        convention: RandomWalkConvention,
    },
}

fn parse_grid(s: &str) -> std::result::Result<GridSpec, String> {
    let (r, c) = s.split_once(['x', 'X']).ok_or("expected ROWSxCOLS")?;
    let dims = (r.parse::<usize>(), c.parse::<usize>());
    match dims {
        (Ok(r), Ok(c)) => GridSpec::new(r, c).map_err(|e| e.to_string()),
        _ => Err("expected ROWSxCOLS".into()),
    }
}

fn parse_cell(s: &str) -> std::result::Result<Cell, String> {
    let (r, c) = s.split_once(',').ok_or("expected ROW,COL")?;
    match (r.trim().parse(), c.trim().parse()) {
        (Ok(r), Ok(c)) => Ok(Cell::new(r, c)),
        _ => Err("expected ROW,COL".into()),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    if let Some(dir) = &cli.out_dir {
        cfg.paths.out_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Command::SrOracle {
        grid,
        distance,
        budget,
        convention,
    } = cli.command
    {
        println!("{}", random_policy_sr_exact(grid, distance, budget, convention)?);
        return Ok(ExitCode::SUCCESS);
    }
    if let Command::GradCheck { .. } = cli.command {
        let cases = grad_check_all()?;
        for c in &cases {
            let verdict = if c.passed() { "ok" } else { "FAIL" };
            println!("{:<40} {:.3e} (tol {:.0e}) {verdict}", c.name, c.max_rel_error, c.tolerance);
        }
        let passed = cases.iter().all(|c| c.passed());
        return Ok(if passed { ExitCode::SUCCESS } else { ExitCode::FAILURE });
    }

    let cfg = load_config(&cli)?;
    cfg.write_resolved()?;
    let out = &cfg.paths;
    match cli.command {
        Command::GenWorld { world_seed, goal, out } => {
            let world = WorldEmbeddings::new(&cfg.world.spec(world_seed))?;
            create_parent(&out)?;
            AgleFile::from_world(&world, goal)?.write(&out)?;
            println!("{}", out.display());
        }
        Command::GaspData { count, out } => {
            let data = GaspDatasetSpec::new(&cfg.world, cfg.gasp.seq_len, cfg.seed);
            let walks = (0..count).map(|i| data.train_walk(i)).collect::<Result<Vec<_>>>()?;
            create_parent(&out)?;
            let mut w = BufWriter::new(File::create(&out)?);
            write_trajectories(&mut w, &walks)?;
            w.flush()?;
            println!("{} walks to {}", walks.len(), out.display());
        }
        Command::TrainAlign => {
            let target = PlantedTarget::new(cfg.align.dim(), cfg.align.target_noise, cfg.seed);
            let run = train_align(&cfg.align, &target, cfg.seed)?;
            checkpoint::save(&run.encoder.params, &out.artifact(ALIGN_CHECKPOINT))?;
            println!(
                "held-out top-1 {:.4} (from {:.4}); target unchanged: {}",
                run.holdout_top1,
                run.initial_top1,
                run.target_fingerprint_before == run.target_fingerprint_after
            );
        }
        Command::TrainGasp => {
            let run = train_gasp(&cfg.world, &cfg.gasp, cfg.seed)?;
            run.model.save(&out.artifact(GASP_CHECKPOINT))?;
            write_curve(&out.artifact("gasp_curve.csv"), &run.curve)?;
            let acc = gasp_accuracy(&run.model, &gasp_holdout(&cfg.world, &cfg.gasp, cfg.seed)?)?;
            println!("{}", serde_json::to_string(&acc)?);
        }
        Command::TrainRpg => {
            let run = rpg_pretrain(&cfg.world, &cfg.gasp, cfg.seed)?;
            run.model.save(&out.artifact(RPG_CHECKPOINT))?;
            write_curve(&out.artifact("rpg_curve.csv"), &run.curve)?;
        }
        Command::TrainBc => {
            let run = train_bc(&cfg.world, &cfg.gasp, cfg.seed)?;
            run.model.save(&out.artifact(BC_CHECKPOINT))?;
            write_curve(&out.artifact("bc_curve.csv"), &run.curve)?;
        }
        Command::TrainPpo { agent } => {
            let backbone = load_backbone(agent, &cfg)?;
            let before = backbone.as_ref().map(|m| m.fingerprint());
            let run = train_planner(agent, backbone.as_ref(), &cfg)?;
            if backbone.as_ref().map(|m| m.fingerprint()) != before {
                return Err(Error::Config("sequence model changed during planner training".into()));
            }
            run.policy.save(&out.planner(agent.name()))?;
            write_log(&out.artifact(&format!("ppo_{agent}_log.csv")), &run.log)?;
            if let Some(last) = run.log.last() {
                println!(
                    "epoch {} mean reward {:.3} success {:.3}",
                    last.epoch, last.mean_reward, last.success_rate
                );
            }
        }
        Command::Eval { agents } => {
            let loaded = agents.iter().map(|&k| load_agent(k, &cfg)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&dyn Agent> = loaded.iter().map(|a| a.as_ref()).collect();
            let table = sweep(&refs, &cfg.world, &cfg.eval)?;
            table.write_csv(&out.artifact("sr.csv"))?;
            table.write_json(&out.artifact("sr.json"))?;
            for (agent, by_c) in table.aggregates() {
                let cells: Vec<String> = by_c.iter().map(|(c, s)| format!("C={c} {:.4}", s.mean)).collect();
                println!("{agent:<16} {}", cells.join("  "));
            }
        }
        Command::Trace {
            agent,
            distance,
            trial,
            index,
            mode,
            out: path,
        } => {
            let mut ev = cfg.eval.clone();
            ev.distances = vec![distance];
            ev.validate(&cfg.world)?;
            let suite = task_suite(&cfg.world, &ev, distance, trial)?;
            let task = suite
                .get(index)
                .ok_or_else(|| Error::Config(format!("suite has {} tasks, index {index} requested", suite.len())))?;
            let agent = load_agent(agent, &cfg)?;
            let mode = mode.unwrap_or(ev.mode);
            let mut rng = episode_rng(&ev, agent.name(), distance, trial, index);
            let trace = run_episode(agent.as_ref(), task, cfg.world.modality, mode, &mut rng)?;
            export_trace(&trace, &path)?;
            println!("success {} in {} steps", trace.success, trace.actions.len());
        }
        Command::GradCheck { .. } | Command::SrOracle { .. } => unreachable!("handled above"),
    }
    Ok(ExitCode::SUCCESS)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::MissingArtifact(_) => 2,
        Error::Config(_) => 3,
        Error::NonFinite(_) | Error::Diverged(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("agl: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
