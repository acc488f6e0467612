//! `nbc`: train, verify, analyze, attack and run experiments.
//!
//! Exit codes: 0 UNSAT (or success), 1 SAT, 2 UNKNOWN, 3 error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use nbc_core::bab::{bab_verify, BabConfig, Budget, RobustnessProperty, VerdictStatus};
use nbc_core::bounds::{property_stability, stable_percent, AffineNet};
use nbc_core::experiment::{make_properties, read_metrics_csv, report_render, run_experiment, ExperimentConfig};
use nbc_core::network::{init_params, load_model, save_model, Network};
use nbc_core::training::{accuracy, pgd_accuracy, train, write_history_csv};

const EXIT_ERROR: u8 = 3;

#[derive(Parser)]
#[command(name = "nbc", version, about = "Verification-friendly training and branch-and-bound verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the training and evaluation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (or file for `verify`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Verification worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Clone, Default)]
struct BudgetArgs {
    #[arg(long)]
    budget_seconds: Option<f64>,
    #[arg(long)]
    budget_branches: Option<usize>,
}

impl BudgetArgs {
    fn apply(&self, mut b: Budget) -> Budget {
        if self.budget_seconds.is_some() {
            b.max_seconds = self.budget_seconds;
        }
        if self.budget_branches.is_some() {
            b.max_branches = self.budget_branches;
        }
        b
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train every method of a config and save the models.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Verify one robustness property.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Property JSON: {"x0":[..],"epsilon":e,"label":c,"domain":[lo,hi]}.
        #[arg(long)]
        property: PathBuf,
        /// Overrides the property's epsilon.
        #[arg(long)]
        radius: Option<f64>,
        #[command(flatten)]
        budget: BudgetArgs,
    },
    /// Neuron stability for a property, or Stable% over a config's test properties.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        property: Option<PathBuf>,
        #[arg(long)]
        radius: Option<f64>,
    },
    /// PGD accuracy of a model on a config's test split.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        radius: f64,
    },
    /// Print the table of a finished experiment.
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// Train, verify and write the metrics.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Replaces the config's radius list.
        #[arg(long)]
        radius: Vec<f64>,
        #[command(flatten)]
        budget: BudgetArgs,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let path = common.config.as_ref().context("--config is required")?;
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    if let Some(j) = common.jobs {
        cfg.jobs = j;
    }
    Ok(cfg)
}

fn cmd_train(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    cfg.validate()?;
    let (train_set, test) = cfg.dataset.load()?;
    let models = cfg.out_dir.join("models");
    std::fs::create_dir_all(&models).with_context(|| format!("creating {}", models.display()))?;
    for m in cfg.methods() {
        let mut tcfg = cfg.train.clone();
        if let Some(p) = &m.phases {
            tcfg.phases = p.clone();
        }
        if let Some(b) = m.beta {
            tcfg.beta = b;
        }
        let net = init_params(&Network::mlp(train_set.features(), &cfg.hidden, train_set.classes())?, tcfg.seed);
        let (net, history) = train(&net, &train_set, Some(&test), &tcfg)?;
        let path = models.join(format!("{}.json", m.name));
        save_model(&net, &path)?;
        write_history_csv(&history, cfg.out_dir.join(format!("history_{}.csv", m.name)))?;
        println!("{}: test accuracy {:.2}% -> {}", m.name, accuracy(&net, &test)?, path.display());
    }
    Ok(())
}

fn load_affine(path: &Path) -> Result<(Network, AffineNet)> {
    let net = load_model(path).with_context(|| format!("loading {}", path.display()))?;
    let affine = AffineNet::from_network(&net)?;
    Ok((net, affine))
}

fn cmd_verify(common: &Common, model: &Path, property: &Path, radius: Option<f64>, budget: &BudgetArgs) -> Result<VerdictStatus> {
    let (_, net) = load_affine(model)?;
    let mut prop = RobustnessProperty::load(property).with_context(|| format!("loading {}", property.display()))?;
    if let Some(r) = radius {
        prop = prop.with_epsilon(r);
    }
    let verdict = bab_verify(&net, &prop, budget.apply(Budget::default()), BabConfig::default())?;
    match &common.out {
        Some(path) => verdict.save(path)?,
        None => println!("{}", verdict.to_json()?),
    }
    eprintln!(
        "{} ({} branches, {} LP calls, {:.3}s)",
        verdict.status, verdict.stats.branches_explored, verdict.stats.lp_calls, verdict.stats.wall_time
    );
    Ok(verdict.status)
}

fn cmd_analyze(common: &Common, model: &Path, property: Option<&Path>, radius: Option<f64>) -> Result<()> {
    let (_, net) = load_affine(model)?;
    if let Some(p) = property {
        let mut prop = RobustnessProperty::load(p)?;
        if let Some(r) = radius {
            prop = prop.with_epsilon(r);
        }
        println!("{}", serde_json::to_string_pretty(&property_stability(&net, &prop)?)?);
        return Ok(());
    }
    let cfg = load_config(common)?;
    let (_, test) = cfg.dataset.load()?;
    let radii = radius.map_or(cfg.radii.clone(), |r| vec![r]);
    for r in radii {
        let props: Vec<_> = make_properties(&test, cfg.k, r, cfg.train.domain)?.into_iter().map(|(_, p)| p).collect();
        println!("radius {r}: Stable% {:.2} over {} properties", stable_percent(&net, &props)?, props.len());
    }
    Ok(())
}

fn cmd_attack(common: &Common, model: &Path, radius: f64) -> Result<()> {
    let (net, _) = load_affine(model)?;
    let cfg = load_config(common)?;
    let (_, test) = cfg.dataset.load()?;
    let acc = pgd_accuracy(&net, &test, radius, cfg.pgd, cfg.train.domain, cfg.train.seed)?;
    println!("PGD{} accuracy at radius {radius}: {acc:.2}%", cfg.pgd.steps);
    Ok(())
}

fn cmd_report(common: &Common) -> Result<()> {
    let dir = match (&common.out, &common.config) {
        (Some(d), _) => d.clone(),
        (None, Some(_)) => load_config(common)?.out_dir,
        (None, None) => bail!("--out or --config is required"),
    };
    let rows = read_metrics_csv(dir.join("metrics.csv"))?;
    if rows.is_empty() {
        bail!("{} has no rows", dir.join("metrics.csv").display());
    }
    print!("{}", report_render(&rows));
    Ok(())
}

fn cmd_experiment(common: &Common, radius: &[f64], budget: &BudgetArgs) -> Result<()> {
    let mut cfg = load_config(common)?;
    if !radius.is_empty() {
        cfg.radii = radius.to_vec();
    }
    cfg.budget = budget.apply(cfg.budget);
    let report = run_experiment(&cfg)?;
    print!("{}", report_render(&report.rows));
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    match &cli.command {
        Command::Train { common } => cmd_train(common)?,
        Command::Verify { common, model, property, radius, budget } => {
            return Ok(cmd_verify(common, model, property, *radius, budget)?.exit_code() as u8);
        }
        Command::Analyze { common, model, property, radius } => cmd_analyze(common, model, property.as_deref(), *radius)?,
        Command::Attack { common, model, radius } => cmd_attack(common, model, *radius)?,
        Command::Report { common } => cmd_report(common)?,
        Command::Experiment { common, radius, budget } => cmd_experiment(common, radius, budget)?,
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(EXIT_ERROR);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
