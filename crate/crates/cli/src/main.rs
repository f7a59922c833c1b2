mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mapa_core::datasets::{GeneratorName, Split};
use mapa_core::inference::Method;
use mapa_core::mapa::MapaTable;

use config::{ExperimentConfig, Overrides};
use stages::{CliError, CliResult, Ctx, Data};

#[derive(Parser)]
#[command(name = "mapa-lab", version, about = "Train and evaluate empiricalized latent-variable models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its train/val/test split.
    GenerateData(Common),
    /// Compute the index-posterior table for the training split.
    ComputeMapa(Common),
    /// Train every configured method and (S, k) setting.
    Train(Common),
    /// Fit the copula that maps trained codes to a standard normal prior.
    RecoverPrior(Common),
    /// Estimate test log-likelihoods and the KL to the ground truth.
    Evaluate(Common),
    /// Count decoder and encoder forward passes per training point.
    CountPasses(Common),
    /// Compare posterior shapes across representations.
    Trends(Common),
    /// Run the non-identifiability study.
    NonIdent(Common),
    /// Run every stage.
    All(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite outputs produced from different inputs.
    #[arg(long)]
    force: bool,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// figure8, circle, abs_value, clusters, spiral_dots, intuition1d_v1 or intuition1d_v2.
    #[arg(long, alias = "name")]
    dataset: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// ae, vae, iwae, mapa, mapa_gt or mapa_naive.
    #[arg(long)]
    method: Option<String>,
    /// Training-time importance samples per point.
    #[arg(long)]
    s: Option<usize>,
    /// Fraction of S summed exactly (`k = round(frac · S)`).
    #[arg(long)]
    k_frac: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Stage {
    Data,
    Table,
    Train,
    Recover,
    Evaluate,
}

fn parse<T: std::str::FromStr>(v: &Option<String>) -> CliResult<Option<T>>
where
    T::Err: std::fmt::Display,
{
    v.as_deref().map(|s| s.parse::<T>().map_err(|e| CliError::Usage(e.to_string()))).transpose()
}

fn context(c: &Common) -> CliResult<Ctx> {
    let mut cfg = ExperimentConfig::load(c.config.as_deref())?;
    cfg.apply(&Overrides {
        out_dir: c.out.clone(),
        dataset: parse::<GeneratorName>(&c.dataset)?,
        n: c.n,
        seed: c.seed,
        method: parse::<Method>(&c.method)?,
        s: c.s,
        k_frac: c.k_frac,
        epochs: c.epochs,
        restarts: c.restarts,
    });
    cfg.validate()?;
    if let Some(j) = c.jobs {
        if j == 0 {
            return Err(CliError::Usage("--jobs must be positive".into()));
        }
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let cache = std::env::var_os("MAPA_LAB_CACHE").map(PathBuf::from).or_else(|| Some(cfg.out_dir.join("cache")));
    Ok(Ctx { cfg, force: c.force, cache })
}

/// Runs the model pipeline up to `last` for every dataset, seed, method and
/// setting.
fn pipeline(ctx: &Ctx, last: Stage) -> CliResult<()> {
    for &name in &ctx.cfg.datasets {
        for &seed in &ctx.cfg.seeds {
            let data = stages::generate_data(ctx, name, seed)?;
            if last == Stage::Data {
                continue;
            }
            let needs_table = ctx.cfg.methods.contains(&Method::Mapa);
            let table = if needs_table || last == Stage::Table { Some(stages::compute_mapa(ctx, &data, seed)?) } else { None };
            if last == Stage::Table {
                continue;
            }
            let ll_gt = if last == Stage::Evaluate { Some(stages::ground_truth_ll(ctx, &data, seed)?) } else { None };
            for &method in &ctx.cfg.methods {
                models(ctx, &data, table.as_ref(), method, seed, last, ll_gt.as_deref())?;
            }
        }
    }
    Ok(())
}

fn models(ctx: &Ctx, data: &Data, table: Option<&MapaTable>, method: Method, seed: u64, last: Stage, ll_gt: Option<&[f64]>) -> CliResult<()> {
    let n_train = data.dataset.split_sizes()[Split::Train as usize];
    for (s, k) in ctx.cfg.settings(method, n_train) {
        let (trained, hash) = stages::train(ctx, data, table, method, s, k, seed)?;
        if last == Stage::Train {
            continue;
        }
        let dir = stages::model_dir(&ctx.cfg.out_dir, data.dataset.name, method, seed, s, k);
        let (model, hash) = stages::recover(ctx, data, &trained, &hash, &dir, seed)?;
        if let Some(ll_gt) = ll_gt {
            stages::evaluate(ctx, data, &trained, &model, &hash, &dir, ll_gt, seed)?;
        }
    }
    Ok(())
}

fn per_dataset(ctx: &Ctx, f: impl Fn(&Ctx, &Data, u64) -> CliResult<()>) -> CliResult<()> {
    for &name in &ctx.cfg.datasets {
        for &seed in &ctx.cfg.seeds {
            let data = stages::generate_data(ctx, name, seed)?;
            f(ctx, &data, seed)?;
        }
    }
    Ok(())
}

fn count(ctx: &Ctx) -> CliResult<()> {
    for &name in &ctx.cfg.datasets {
        for &seed in &ctx.cfg.seeds {
            stages::count_passes(ctx, name, seed)?;
        }
    }
    Ok(())
}

fn non_ident(ctx: &Ctx, data: &Data, seed: u64) -> CliResult<()> {
    if matches!(data.dataset.name, GeneratorName::AbsValue | GeneratorName::Circle) {
        stages::non_ident(ctx, data, seed)
    } else {
        eprintln!("skipping non-identifiability study for {}", data.dataset.name.as_str());
        Ok(())
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenerateData(c) => pipeline(&context(&c)?, Stage::Data),
        Command::ComputeMapa(c) => pipeline(&context(&c)?, Stage::Table),
        Command::Train(c) => pipeline(&context(&c)?, Stage::Train),
        Command::RecoverPrior(c) => pipeline(&context(&c)?, Stage::Recover),
        Command::Evaluate(c) => pipeline(&context(&c)?, Stage::Evaluate),
        Command::CountPasses(c) => count(&context(&c)?),
        Command::Trends(c) => per_dataset(&context(&c)?, stages::trends),
        Command::NonIdent(c) => per_dataset(&context(&c)?, non_ident),
        Command::All(c) => {
            let ctx = context(&c)?;
            pipeline(&ctx, Stage::Evaluate)?;
            count(&ctx)?;
            per_dataset(&ctx, stages::trends)?;
            per_dataset(&ctx, non_ident)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Usage(_) | CliError::Conflict(_) => ExitCode::from(2),
                CliError::Core(_) => ExitCode::from(1),
            }
        }
    }
}
