//! Command-line driver: demo recording, curriculum training, ablation runs,
//! distillation, and checkpoint evaluation.

use anyhow::{bail, Context};
use autocurl::config::ExperimentConfig;
use autocurl::curriculum::{write_trace, CurriculumMode};
use autocurl::demo::{load_demoset, record_demo, save_demoset, DemoSet};
use autocurl::distill::{
    evaluate, generate_dataset, grad_check, train_bc, BcOptConfig, DrConfig, ObsRenderer,
    SettingsProfile, StudentAgent, TeacherAgent,
};
use autocurl::env::OracleStyle;
use autocurl::learner::TabularPolicy;
use autocurl::runtime::{evaluate_checkpoint, run, write_metrics, RunConfig};
use autocurl::tasks::make_env;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "autocurl", about = "Demo-seeded start-state curriculum RL on toy tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum OracleKind {
    Optimal,
    Suboptimal,
    Partial,
}

#[derive(Subcommand)]
enum Command {
    /// Record scripted-controller demonstrations to a demo file.
    RecordDemos(RecordArgs),
    /// Train a teacher policy with the configured curriculum.
    Train(TrainArgs),
    /// Distill a trained teacher into an observation-based student.
    Distill(DistillArgs),
    /// Evaluate a teacher checkpoint.
    Eval(EvalArgs),
    /// Run a grid of curriculum modes and seeds with identical budgets.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct RecordArgs {
    #[arg(long)]
    env: String,
    #[arg(long, value_enum, default_value = "optimal")]
    oracle: OracleKind,
    /// Detour probability for the suboptimal controller.
    #[arg(long, default_value_t = 0.25)]
    detour_rate: f64,
    #[arg(long)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Demo file; required by every mode except vanilla.
    #[arg(long)]
    demos: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DistillArgs {
    /// Teacher checkpoint produced by `train`.
    #[arg(long)]
    teacher: PathBuf,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
    /// Optional config supplying env parameters; defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Evaluate under randomized settings instead of nominal ones.
    #[arg(long)]
    randomized: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    env: String,
    #[arg(long)]
    demos: PathBuf,
    /// Comma-separated mode list, e.g. demostart,vanilla,mixture.
    #[arg(long, value_delimiter = ',')]
    modes: Vec<String>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2_000_000)]
    budget: u64,
}

/// Errors whose cause is the invocation or config rather than the run.
fn is_usage_error(err: &anyhow::Error) -> bool {
    err.chain().any(|c| {
        c.downcast_ref::<autocurl::config::ConfigError>().is_some()
            || matches!(
                c.downcast_ref::<autocurl::runtime::RunError>(),
                Some(autocurl::runtime::RunError::Config(_))
            )
            || matches!(
                c.downcast_ref::<autocurl::curriculum::CurriculumError>(),
                Some(autocurl::curriculum::CurriculumError::Config(_))
            )
            || c.downcast_ref::<std::io::Error>().is_some()
            || c.downcast_ref::<UsageError>().is_some()
    })
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::RecordDemos(args) => cmd_record_demos(args),
        Command::Train(args) => cmd_train(args),
        Command::Distill(args) => cmd_distill(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
    };
    match result {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(if is_usage_error(&e) { 2 } else { 3 });
        }
    }
}

fn oracle_style(kind: OracleKind, detour_rate: f64) -> OracleStyle {
    match kind {
        OracleKind::Optimal => OracleStyle::Optimal,
        OracleKind::Suboptimal => OracleStyle::Suboptimal { detour_rate },
        OracleKind::Partial => OracleStyle::Partial,
    }
}

fn cmd_record_demos(args: RecordArgs) -> anyhow::Result<()> {
    if args.count == 0 {
        bail!(UsageError("--count must be >= 1".into()));
    }
    let params = autocurl::tasks::EnvParams::default();
    let mut env = make_env(&args.env, &params).map_err(|e| UsageError(e.to_string()))?;
    let mut rng = autocurl::rng::stream(args.seed, "demo-record", 0);
    let style = oracle_style(args.oracle, args.detour_rate);
    let mut demos = Vec::new();
    for i in 0..args.count {
        let demo = record_demo(env.as_mut(), style, &format!("d{i}"), &mut rng)?;
        println!(
            "demo {}: length {} success {}",
            demo.demo_id,
            demo.len(),
            demo.success
        );
        demos.push(demo);
    }
    let set = DemoSet::new(demos)?;
    save_demoset(&args.out, &set)?;
    println!("wrote {} demos to {}", set.len(), args.out.display());
    Ok(())
}

fn load_demos_for(config: &RunConfig, path: Option<&PathBuf>) -> anyhow::Result<DemoSet> {
    match path {
        Some(p) => Ok(load_demoset(p)?),
        None if config.curriculum.mode.needs_demos() => bail!(UsageError(format!(
            "mode {} requires --demos",
            config.curriculum.mode
        ))),
        None => Ok(DemoSet::default()),
    }
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let run_config = RunConfig::from_experiment(&cfg)?;
    let demos = load_demos_for(&run_config, args.demos.as_ref())?;
    std::fs::create_dir_all(&args.out_dir)?;
    cfg.dump(&args.out_dir.join("effective-config.json"))?;
    let out = run(&run_config, &demos).context("training run failed")?;
    out.policy
        .save_checkpoint(&args.out_dir.join("teacher.acpl"), &run_config.env_kind)?;
    write_metrics(&args.out_dir.join("metrics.csv"), &out.metrics)?;
    write_trace(&args.out_dir.join("trace.csv"), &out.trace)?;
    if let Some(rate) = out.final_eval {
        println!("final eval success rate: {rate:.4}");
    }
    println!("artifacts written to {}", args.out_dir.display());
    Ok(())
}

fn cmd_distill(args: DistillArgs) -> anyhow::Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let (teacher, kind) = TabularPolicy::load_checkpoint(&args.teacher)
        .with_context(|| format!("reading teacher checkpoint {}", args.teacher.display()))?;
    if kind != cfg.env.kind {
        bail!(UsageError(format!(
            "teacher checkpoint is for {kind}, config env is {}",
            cfg.env.kind
        )));
    }
    std::fs::create_dir_all(&args.out_dir)?;
    cfg.dump(&args.out_dir.join("effective-config.json"))?;
    let mut env = make_env(&cfg.env.kind, &cfg.env.params).map_err(|e| UsageError(e.to_string()))?;
    let dr = DrConfig {
        permutation_seed: cfg.seed,
        noise_scale: cfg.distill.noise_scale,
        dropout_prob: cfg.distill.dropout_prob,
        decoy_channels: cfg.distill.decoy_channels,
    };
    let snapshot = teacher.publish();
    let mut rng = autocurl::rng::stream(cfg.seed, "distill", 0);
    let dataset = generate_dataset(
        &snapshot,
        env.as_mut(),
        cfg.distill.episodes,
        dr,
        cfg.distill.epsilon,
        &mut rng,
    )?;
    dataset.save(&args.out_dir.join("dataset.acds"))?;
    println!("dataset: {} records", dataset.records.len());

    let opt = BcOptConfig {
        hidden: cfg.distill.hidden.clone(),
        learning_rate: cfg.distill.learning_rate,
        momentum: cfg.distill.momentum,
        batch_size: cfg.distill.batch_size,
        epochs: cfg.distill.epochs,
    };
    let mut student = train_bc(&dataset, &opt, &mut rng)?;

    let check_batch: Vec<_> = dataset.records.iter().take(64).cloned().collect();
    let err = grad_check(&mut student, &check_batch, 1e-5, &mut rng);
    std::fs::write(
        args.out_dir.join("grad-check.txt"),
        format!("max relative error at h=1e-5: {err:.3e}\n"),
    )?;
    println!("gradient check max relative error: {err:.3e}");
    student.save(&args.out_dir.join("student.acpl"), &cfg.env.kind)?;

    let mut teacher_agent = TeacherAgent(&snapshot);
    let teacher_rate = evaluate(
        &mut teacher_agent,
        env.as_mut(),
        cfg.runtime.eval_episodes,
        SettingsProfile::Nominal,
        &mut rng,
    )?
    .success_rate;
    let mut student_agent = StudentAgent {
        renderer: ObsRenderer::new(env.as_ref(), dr),
        net: student,
    };
    let student_rate = evaluate(
        &mut student_agent,
        env.as_mut(),
        cfg.runtime.eval_episodes,
        SettingsProfile::Nominal,
        &mut rng,
    )?
    .success_rate;
    println!("teacher success {teacher_rate:.4}, student success {student_rate:.4}");
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> anyhow::Result<()> {
    let cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let (_, kind) = TabularPolicy::load_checkpoint(&args.checkpoint)
        .with_context(|| format!("reading checkpoint {}", args.checkpoint.display()))?;
    let params = if cfg.env.kind == kind {
        cfg.env.params.clone()
    } else {
        autocurl::tasks::EnvParams::default()
    };
    let mut env = make_env(&kind, &params).map_err(|e| UsageError(e.to_string()))?;
    let mut rng = autocurl::rng::stream(args.seed, "eval", 0);
    let profile = if args.randomized {
        SettingsProfile::Randomized
    } else {
        SettingsProfile::Nominal
    };
    let report = evaluate_checkpoint(&args.checkpoint, env.as_mut(), args.episodes, profile, &mut rng)?;
    println!("success rate: {:.4} over {} episodes", report.success_rate, report.episodes);
    println!("step,success_fraction");
    for (step, frac) in &report.success_by_step {
        println!("{step},{frac:.4}");
    }
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> anyhow::Result<()> {
    if args.modes.is_empty() || args.seeds.is_empty() {
        bail!(UsageError("need at least one mode and one seed".into()));
    }
    let modes: Vec<CurriculumMode> = args
        .modes
        .iter()
        .map(|m| CurriculumMode::parse(m).map_err(|e| UsageError(e.to_string())))
        .collect::<Result<_, _>>()?;
    let demos = load_demoset(&args.demos)?;
    let mut rows = vec!["mode,seed,final_success".to_string()];
    let mut incomplete = false;
    'outer: for mode in &modes {
        for &seed in &args.seeds {
            let mut cfg = ExperimentConfig::default();
            cfg.env.kind = args.env.clone();
            cfg.curriculum.mode = mode.name().into();
            cfg.runtime.budget = args.budget;
            cfg.seed = seed;
            let mut run_config = RunConfig::from_experiment(&cfg)?;
            run_config.env_kind = args.env.clone();
            let demos_for_mode = if mode.needs_demos() {
                demos.clone()
            } else {
                DemoSet::default()
            };
            match run(&run_config, &demos_for_mode) {
                Ok(out) => {
                    let rate = out.final_eval.unwrap_or(0.0);
                    println!("{} seed {seed}: {rate:.4}", mode.name());
                    rows.push(format!("{},{seed},{rate:.4}", mode.name()));
                }
                Err(e) => {
                    eprintln!("{} seed {seed} failed: {e}", mode.name());
                    incomplete = true;
                    break 'outer;
                }
            }
        }
    }
    let mut body = rows.join("\n");
    body.push('\n');
    if incomplete {
        body.push_str("# incomplete\n");
    }
    std::fs::write(&args.out, body)?;
    if incomplete {
        bail!("ablation grid incomplete");
    }
    Ok(())
}
