//! Pipeline stages. Each stage writes into a fixed directory and leaves a
//! provenance stamp; a rerun with the same stamp is a no-op, a rerun with a
//! different one needs `--force`.

use std::path::{Path, PathBuf};

use mapa_core::datasets::{self, Dataset, GenerateOptions, GeneratorName, GroundTruthModel, Split};
use mapa_core::evaluation::{
    self, cost_csv, evaluable_model, fit_eval_proposal, estimate_ll, kl_from_ll, EvalReport, MixtureSampling,
};
use mapa_core::inference::{self, history_csv, load_model, save_model, CostMeter, GenerativeModel, Method, TrainConfig, TrainedModel};
use mapa_core::io::{self, Provenance};
use mapa_core::mapa::{self, MapaTable, NoiseKernel, TableSource};
use mapa_core::math::SeededRng;
use mapa_core::Error;
use serde::Serialize;

use crate::config::ExperimentConfig;

#[derive(Debug)]
pub enum CliError {
    /// Bad names, values or flag combinations.
    Usage(String),
    /// Outputs exist and were produced from different inputs.
    Conflict(PathBuf),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => CliError::Usage(msg),
            other => CliError::Core(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Conflict(p) => write!(f, "{} was produced from different inputs; rerun with --force to overwrite", p.display()),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const GT_LL_HEADER: &str = "point,ll";

pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub force: bool,
    pub cache: Option<PathBuf>,
}

enum Guard {
    Run,
    UpToDate,
}

impl Ctx {
    fn out(&self) -> &Path {
        &self.cfg.out_dir
    }

    fn guard(&self, dir: &Path, prov: &Provenance) -> CliResult<Guard> {
        let stamp = stamp_path(dir, prov);
        if !stamp.exists() {
            return Ok(Guard::Run);
        }
        let old: Provenance = serde_json::from_slice(&std::fs::read(&stamp)?).map_err(Error::from)?;
        if &old == prov {
            eprintln!("up to date: {}", dir.display());
            Ok(Guard::UpToDate)
        } else if self.force {
            Ok(Guard::Run)
        } else {
            Err(CliError::Conflict(dir.to_path_buf()))
        }
    }

    fn stamp(&self, dir: &Path, prov: &Provenance) -> CliResult<()> {
        io::write_json_atomic(&stamp_path(dir, prov), prov)?;
        Ok(())
    }

    fn generate_options(&self) -> GenerateOptions {
        GenerateOptions { surrogate: self.cfg.surrogate.clone(), cache_dir: self.cache.clone() }
    }
}

/// Stage stamps sit next to the outputs: `{command}.provenance.json`.
fn stamp_path(dir: &Path, prov: &Provenance) -> PathBuf {
    dir.join(format!("{}.provenance.json", prov.command))
}

pub fn data_dir(out: &Path, name: GeneratorName, seed: u64) -> PathBuf {
    out.join(name.as_str()).join("data").join(format!("seed{seed}"))
}

pub fn model_dir(out: &Path, name: GeneratorName, method: Method, seed: u64, s: usize, k: usize) -> PathBuf {
    out.join(name.as_str()).join(method.as_str()).join(format!("seed{seed}")).join(format!("s{s}_k{k}"))
}

fn study_dir(out: &Path, name: GeneratorName, study: &str, seed: u64) -> PathBuf {
    out.join(name.as_str()).join(study).join(format!("seed{seed}"))
}

/// Generated data plus the ground-truth model that produced it.
pub struct Data {
    pub dataset: Dataset,
    pub gt: GroundTruthModel,
    pub hash: String,
}

#[derive(Serialize)]
struct DataKey<'a> {
    name: GeneratorName,
    n: usize,
    split: [f64; 3],
    surrogate: &'a datasets::SurrogateFitConfig,
}

pub fn generate_data(ctx: &Ctx, name: GeneratorName, seed: u64) -> CliResult<Data> {
    let key = DataKey { name, n: ctx.cfg.n, split: ctx.cfg.split, surrogate: &ctx.cfg.surrogate };
    let prov = Provenance::new("generate-data", &key, seed);
    let dir = data_dir(ctx.out(), name, seed);
    let opts = ctx.generate_options();
    let dataset = match ctx.guard(&dir, &prov)? {
        Guard::UpToDate => datasets::load_dataset(&dir)?,
        Guard::Run => {
            eprintln!("generating {} (n = {}, seed {seed})", name.as_str(), ctx.cfg.n);
            let (ds, _) = datasets::generate(name, ctx.cfg.n, seed, &opts)?;
            let ds = datasets::split(ds, ctx.cfg.split, seed)?;
            datasets::save_dataset(&ds, &dir, Some(prov.clone()))?;
            ctx.stamp(&dir, &prov)?;
            ds
        }
    };
    let gt = datasets::ground_truth_model(name, seed, &opts)?;
    Ok(Data { dataset, gt, hash: prov.config_hash })
}

pub fn compute_mapa(ctx: &Ctx, data: &Data, seed: u64) -> CliResult<MapaTable> {
    let train = data.dataset.subset(Split::Train);
    let kernel = NoiseKernel::GaussianRbf { noise_var: train.noise_var };
    let prov = Provenance::new("compute-mapa", &(&data.hash, kernel), seed).with_parent(data.hash.clone());
    let dir = study_dir(ctx.out(), data.dataset.name, "table", seed);
    let key = mapa::cache_key(&train.fingerprint(), &TableSource::Mapa { kernel });
    let (header, _, _) = mapa::table_paths(&dir, &key);
    match ctx.guard(&dir, &prov)? {
        Guard::UpToDate => Ok(mapa::load_table(&header)?),
        Guard::Run => {
            eprintln!("computing MAPA table for {} ({} points)", data.dataset.name.as_str(), train.len());
            let table = mapa::compute_table(&train.x, kernel)?;
            mapa::save_table(&table, &dir, Some(prov.clone()))?;
            ctx.stamp(&dir, &prov)?;
            Ok(table)
        }
    }
}

pub fn train_config(cfg: &ExperimentConfig, method: Method, s: usize, k: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        method,
        s,
        k,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        restarts: cfg.restarts,
        hidden: cfg.hidden.clone(),
        latent_dim: 1,
        seed,
        val_every: cfg.val_every,
    }
}

pub fn train(ctx: &Ctx, data: &Data, table: Option<&MapaTable>, method: Method, s: usize, k: usize, seed: u64) -> CliResult<(TrainedModel, String)> {
    let tc = train_config(&ctx.cfg, method, s, k, seed);
    let prov = Provenance::new("train", &(&data.hash, &tc), seed).with_parent(data.hash.clone());
    let dir = model_dir(ctx.out(), data.dataset.name, method, seed, s, k);
    let hash = prov.config_hash.clone();
    match ctx.guard(&dir, &prov)? {
        Guard::UpToDate => Ok((load_model(&dir)?, hash)),
        Guard::Run => {
            eprintln!("training {method} on {} (S = {s}, k = {k}, seed {seed})", data.dataset.name.as_str());
            let tr = data.dataset.subset(Split::Train);
            let va = data.dataset.subset(Split::Val);
            let owned;
            let table = match method {
                Method::Mapa => table,
                m if m.uses_table() => {
                    owned = inference::table_for(m, &tr, Some(&data.gt))?;
                    owned.as_ref()
                }
                _ => None,
            };
            let outcome = inference::train(&tc, &tr.x, &va.x, tr.noise_var, table)?;
            save_model(&outcome.best, &dir, Some(prov.clone()))?;
            io::write_atomic(&dir.join("history.csv"), history_csv(&outcome.history, Some(&prov)).as_bytes())?;
            io::write_json_atomic(&dir.join("restarts.json"), &serde_json::json!({
                "best_restart": outcome.best_restart,
                "restarts": outcome.restarts,
                "provenance": prov,
            }))?;
            ctx.stamp(&dir, &prov)?;
            Ok((outcome.best, hash))
        }
    }
}

/// Copula recovery for empiricalized models; other models pass through.
pub fn recover(ctx: &Ctx, data: &Data, trained: &TrainedModel, parent: &str, dir: &Path, seed: u64) -> CliResult<(GenerativeModel, String)> {
    if !trained.method.is_empirical() {
        return Ok((trained.model.clone(), parent.to_string()));
    }
    let out = dir.join("recovered");
    let prov = Provenance::new("recover-prior", &(parent, &ctx.cfg.recovery), seed).with_parent(parent.to_string());
    let hash = prov.config_hash.clone();
    match ctx.guard(&out, &prov)? {
        Guard::UpToDate => Ok((load_model(&out)?.model, hash)),
        Guard::Run => {
            eprintln!("recovering prior for {}", dir.display());
            let tr = data.dataset.subset(Split::Train);
            let (model, report) = evaluable_model(trained, &tr.x, &ctx.cfg.recovery)?;
            let recovered = TrainedModel { model: model.clone(), proposal: None, ..trained.clone() };
            save_model(&recovered, &out, Some(prov.clone()))?;
            io::write_json_atomic(&out.join("recovery.json"), &serde_json::json!({ "report": report, "provenance": prov }))?;
            ctx.stamp(&out, &prov)?;
            Ok((model, hash))
        }
    }
}

fn read_ll_csv(path: &Path) -> CliResult<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let bad = |reason: &str| CliError::Core(Error::Format { path: path.into(), reason: reason.into() });
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    if lines.next() != Some(GT_LL_HEADER) {
        return Err(bad("unexpected header"));
    }
    lines
        .map(|l| l.split(',').nth(1).and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad row")))
        .collect()
}

/// Test-split log-likelihoods, with a proposal fitted on the train split.
fn eval_ll(ctx: &Ctx, model: &GenerativeModel, data: &Data) -> CliResult<(Vec<f64>, CostMeter)> {
    let tr = data.dataset.subset(Split::Train);
    let te = data.dataset.subset(Split::Test);
    let prop = fit_eval_proposal(model, &tr.x, &ctx.cfg.eval)?.with_sampling(MixtureSampling::Ancestral);
    Ok(estimate_ll(model, &prop, &te.x, &ctx.cfg.eval)?)
}

pub fn ground_truth_ll(ctx: &Ctx, data: &Data, seed: u64) -> CliResult<Vec<f64>> {
    let prov = Provenance::new("evaluate", &(&data.hash, &ctx.cfg.eval), seed).with_parent(data.hash.clone());
    let dir = study_dir(ctx.out(), data.dataset.name, "ground_truth", seed);
    match ctx.guard(&dir, &prov)? {
        Guard::UpToDate => read_ll_csv(&dir.join("ll.csv")),
        Guard::Run => {
            eprintln!("evaluating ground truth for {}", data.dataset.name.as_str());
            let model = GenerativeModel::from_ground_truth(&data.gt)?;
            let (ll, _) = eval_ll(ctx, &model, data)?;
            let mut csv = format!("{}\n{GT_LL_HEADER}\n", prov.csv_comment());
            for (i, v) in ll.iter().enumerate() {
                csv.push_str(&format!("{i},{v}\n"));
            }
            io::write_atomic(&dir.join("ll.csv"), csv.as_bytes())?;
            ctx.stamp(&dir, &prov)?;
            Ok(ll)
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate(ctx: &Ctx, data: &Data, trained: &TrainedModel, model: &GenerativeModel, parent: &str, dir: &Path, ll_gt: &[f64], seed: u64) -> CliResult<()> {
    let out = dir;
    let prov = Provenance::new("evaluate", &(parent, &ctx.cfg.eval), seed).with_parent(parent.to_string());
    if let Guard::UpToDate = ctx.guard(out, &prov)? {
        return Ok(());
    }
    eprintln!("evaluating {}", dir.display());
    let (ll, meter) = eval_ll(ctx, model, data)?;
    let report = EvalReport {
        dataset: data.dataset.name.as_str().to_string(),
        method: trained.method,
        seed,
        s: trained.s,
        k: trained.k,
        kl: kl_from_ll(ll_gt, &ll)?,
        ll_gt: ll_gt.to_vec(),
        ll_model: ll,
        meter,
        gradient_estimator: "reparameterized; MAPA index draws enter as constants".into(),
        s_meaning: "training-time importance samples per point".into(),
        config: ctx.cfg.eval.clone(),
        provenance: Some(prov.clone()),
    };
    io::write_json_atomic(&out.join("eval.json"), &report)?;
    io::write_atomic(&out.join("ll.csv"), report.ll_csv().as_bytes())?;
    ctx.stamp(out, &prov)?;
    eprintln!("  {} {} S = {} k = {}: KL {:.4} ± {:.4}", report.dataset, report.method, report.s, report.k, report.kl.kl, report.kl.stderr);
    Ok(())
}

pub fn count_passes(ctx: &Ctx, name: GeneratorName, seed: u64) -> CliResult<()> {
    let n = ctx.cfg.count.n.unwrap_or(ctx.cfg.n);
    let prov = Provenance::new("count-passes", &(name, n, &ctx.cfg.count, &ctx.cfg.surrogate), seed);
    let dir = study_dir(ctx.out(), name, "cost", seed);
    if let Guard::UpToDate = ctx.guard(&dir, &prov)? {
        return Ok(());
    }
    eprintln!("counting forward passes on {} (n = {n})", name.as_str());
    let (ds, _) = datasets::generate(name, n, seed, &ctx.generate_options())?;
    let table = mapa::compute_table(&ds.x, NoiseKernel::GaussianRbf { noise_var: ds.noise_var })?;
    let rows = evaluation::count_passes(&ds.x, &table, ds.noise_var, &ctx.cfg.count.passes)?;
    io::write_atomic(&dir.join("cost.csv"), cost_csv(&rows, Some(&prov)).as_bytes())?;
    ctx.stamp(&dir, &prov)?;
    Ok(())
}

pub fn trends(ctx: &Ctx, data: &Data, seed: u64) -> CliResult<()> {
    let prov = Provenance::new("trends", &(&data.hash, &ctx.cfg.trends), seed).with_parent(data.hash.clone());
    let dir = study_dir(ctx.out(), data.dataset.name, "trends", seed);
    if let Guard::UpToDate = ctx.guard(&dir, &prov)? {
        return Ok(());
    }
    eprintln!("posterior trends on {}", data.dataset.name.as_str());
    let ds = &data.dataset;
    let table = mapa::compute_table(&ds.x, NoiseKernel::GaussianRbf { noise_var: ds.noise_var })?;
    let points = evaluation::sample_points(ds.len(), ctx.cfg.trends.points, &mut SeededRng::new(seed, 80));
    let report = evaluation::posterior_trends(ds, &data.gt, &table, &points, ctx.cfg.trends.grid)?;
    io::write_atomic(&dir.join("trends.csv"), report.records_csv(Some(&prov)).as_bytes())?;
    io::write_atomic(&dir.join("trends_summary.csv"), report.summary_csv(Some(&prov)).as_bytes())?;
    ctx.stamp(&dir, &prov)?;
    eprintln!("  median Spearman {:.3}", report.median_spearman());
    Ok(())
}

pub fn non_ident(ctx: &Ctx, data: &Data, seed: u64) -> CliResult<()> {
    let vae = train_config(&ctx.cfg, Method::Vae, 1, 0, seed);
    let prov = Provenance::new("non-ident", &(&data.hash, &vae, &ctx.cfg.non_ident), seed).with_parent(data.hash.clone());
    let dir = study_dir(ctx.out(), data.dataset.name, "non_ident", seed);
    if let Guard::UpToDate = ctx.guard(&dir, &prov)? {
        return Ok(());
    }
    eprintln!("non-identifiability study on {}", data.dataset.name.as_str());
    let points = evaluation::sample_points(data.dataset.len(), ctx.cfg.non_ident.points, &mut SeededRng::new(seed, 81));
    let report = evaluation::non_identifiability_study(&data.dataset, &data.gt, &vae, &points)?;
    io::write_atomic(&dir.join("non_ident.csv"), report.csv(Some(&prov)).as_bytes())?;
    io::write_json_atomic(&dir.join("non_ident.json"), &serde_json::json!({ "report": report, "provenance": prov }))?;
    ctx.stamp(&dir, &prov)?;
    eprintln!("  medians {:.3} / {:.3}", report.variant1_median, report.variant2_median);
    Ok(())
}
