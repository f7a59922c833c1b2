//! Common evaluation protocol for frozen generative models.
//!
//! A `K`-component mixture-of-Gaussians proposal is fit by maximising the
//! IWAE bound with the model frozen, then a large-`S` IWAE bound serves as
//! the log-likelihood estimate. The same code path is used for every method
//! and for the ground-truth model.

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{Dataset, GroundTruthModel, PriorSpec, Split};
use crate::error::{Error, Result};
use crate::inference::{self, chain, iwae_batch, iwae_log_bounds, repeat_index, CostMeter, GenerativeModel, LatentPrior, Method, Proposal, TrainConfig, TrainedModel};
use crate::prior_recovery::{recover_prior, RecoveryConfig, RecoveryReport};
use crate::io::Provenance;
use crate::mapa::{self, MapaTable, NoiseKernel, ProposalSampler, TableSource};
use crate::math::special::{log_sum_exp_unchecked, LN_2PI};
use crate::math::stats::{mean_stderr, median, spearman};
use crate::math::{Activation, AdamState, Graph, MlpParams, MlpVars, NodeId, SeededRng};

/// Mixture of `K` Gaussians over a scalar latent; the network emits
/// `[logits (K), means (K), log-variances (K)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureProposal {
    pub net: MlpParams,
    pub components: usize,
    pub sampling: MixtureSampling,
}

/// How component indices are assigned to the `S` draws of a point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtureSampling {
    /// Fixed per-component counts; used while fitting.
    Stratified,
    /// Component drawn from the mixture weights; used for estimation.
    Ancestral,
}

impl MixtureProposal {
    pub fn init(obs_dim: usize, hidden: &[usize], components: usize, rng: &mut SeededRng) -> Result<Self> {
        if components == 0 {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        Ok(Self {
            net: MlpParams::init(&chain(obs_dim, hidden, 3 * components), Activation::Tanh, rng),
            components,
            sampling: MixtureSampling::Stratified,
        })
    }

    pub fn with_sampling(mut self, sampling: MixtureSampling) -> Self {
        self.sampling = sampling;
        self
    }

    /// Softmax mixture weights for each row of `x`.
    pub fn weights(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let out = self.net.forward_batch(x)?;
        let mut w = out.slice(ndarray::s![.., ..self.components]).to_owned();
        for mut row in w.rows_mut() {
            let lse = log_sum_exp_unchecked(&row.to_vec());
            row.mapv_inplace(|l| (l - lse).exp());
        }
        Ok(w)
    }
}

impl Proposal for MixtureProposal {
    fn net(&self) -> &MlpParams {
        &self.net
    }

    fn latent_dim(&self) -> usize {
        1
    }

    /// Stratified draws: slot `j` of each point uses component `j mod K`, so
    /// component `c` gets `S_c` draws. The returned log-density is
    /// `log q(z) + log S_c − log S − log π_c`, which turns the plain IWAE
    /// average into `Σ_c π_c / S_c Σ_j p(x, z_cj) / q(z_cj)`, a lower bound
    /// whose gradient is fully reparameterized. With `S < K` only the first
    /// `S` components are drawn and the bound loosens accordingly.
    ///
    /// Ancestral draws pick the component from the mixture weights as a
    /// constant and return the plain mixture density.
    fn sample_and_log_q(&self, g: &mut Graph, vars: &MlpVars, x: NodeId, s: usize, rng: &mut SeededRng) -> (NodeId, NodeId) {
        let k = self.components;
        let b = g.value(x).nrows();
        let out = g.mlp_forward(vars, x);
        let rep = g.gather_rows(out, repeat_index(b, s));
        let logits = g.slice_cols(rep, 0, k);
        let mu = g.slice_cols(rep, k, 2 * k);
        let logvar = g.slice_cols(rep, 2 * k, 3 * k);

        let p = b * s;
        let per_component = |c: usize| (s / k + usize::from(c < s % k)) as f64;
        let mut onehot = Array2::zeros((p, k));
        let mut count_term = Array2::zeros((p, 1));
        let lv = g.value(logits);
        for r in 0..p {
            let c = match self.sampling {
                MixtureSampling::Stratified => (r % s) % k,
                MixtureSampling::Ancestral => {
                    let row = lv.row(r);
                    let lse = log_sum_exp_unchecked(&row.to_vec());
                    let u = rng.uniform();
                    let mut acc = 0.0;
                    row.iter().position(|&l| {
                        acc += (l - lse).exp();
                        u < acc
                    })
                    .unwrap_or(k - 1)
                }
            };
            onehot[[r, c]] = 1.0;
            count_term[[r, 0]] = per_component(c).ln() - (s as f64).ln();
        }
        let eps = Array2::from_shape_fn((p, 1), |_| rng.normal());
        let oh = g.constant(onehot);
        let eps = g.constant(eps);
        let count_term = g.constant(count_term);

        let mu_sel = g.mul(mu, oh);
        let mu_c = g.row_sum(mu_sel);
        let lv_sel = g.mul(logvar, oh);
        let lv_c = g.row_sum(lv_sel);
        let half = g.scale(lv_c, 0.5);
        let std_c = g.exp(half);
        let noise = g.mul(std_c, eps);
        let z = g.add(mu_c, noise);

        let diff = g.sub_col(mu, z);
        let sq = g.square(diff);
        let neg = g.scale(logvar, -1.0);
        let prec = g.exp(neg);
        let quad = g.mul(sq, prec);
        let t1 = g.scale(logvar, -0.5);
        let t2 = g.scale(quad, -0.5);
        let a = g.add(logits, t1);
        let a = g.add(a, t2);
        let a = g.offset(a, -0.5 * LN_2PI);
        let joint = g.log_sum_exp_rows(a);
        let log_q = match self.sampling {
            MixtureSampling::Stratified => {
                // log q(z) − log π_c: the softmax normaliser cancels
                let logit_sel = g.mul(logits, oh);
                let logit_c = g.row_sum(logit_sel);
                let v = g.sub(joint, logit_c);
                g.add(v, count_term)
            }
            MixtureSampling::Ancestral => {
                let norm = g.log_sum_exp_rows(logits);
                g.sub(joint, norm)
            }
        };
        (z, log_q)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub components: usize,
    pub hidden: Vec<usize>,
    pub fit_s: usize,
    pub fit_lr: f64,
    pub fit_batch: usize,
    pub fit_epochs: usize,
    /// Points per graph when accumulating a batch gradient.
    pub fit_chunk_points: usize,
    /// Caps the number of points the proposal is fit on.
    pub fit_max_points: Option<usize>,
    pub ll_s: usize,
    pub ll_chunk: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            components: 50,
            hidden: vec![50, 50, 50],
            fit_s: 500,
            fit_lr: 1e-3,
            fit_batch: 1000,
            fit_epochs: 100,
            fit_chunk_points: 50,
            fit_max_points: None,
            ll_s: 20_000,
            ll_chunk: 500,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fit_s == 0 || self.fit_batch == 0 || self.fit_epochs == 0 || self.ll_s == 0 || self.ll_chunk == 0 || self.fit_chunk_points == 0 {
            return Err(Error::Config("evaluation budgets must be positive".into()));
        }
        Ok(())
    }
}

fn require_standard_prior(model: &GenerativeModel) -> Result<()> {
    if model.prior != LatentPrior::StandardNormal {
        return Err(Error::Evaluation("evaluation needs a model with a standard normal prior".into()));
    }
    if model.latent_dim() != 1 {
        return Err(Error::UnsupportedDimension(model.latent_dim()));
    }
    Ok(())
}

fn fit_attempt(model: &GenerativeModel, x: &Array2<f64>, cfg: &EvalConfig, lr: f64) -> Result<MixtureProposal> {
    let mut rng = SeededRng::new(cfg.seed, 60);
    let mut prop = MixtureProposal::init(x.ncols(), &cfg.hidden, cfg.components, &mut rng)?;
    let mut adam = AdamState::for_params(&prop.net, lr);
    let n = x.nrows();
    for _ in 0..cfg.fit_epochs {
        for batch in rng.permutation(n).chunks(cfg.fit_batch) {
            let mut acc = vec![0.0; prop.net.num_params()];
            for chunk in batch.chunks(cfg.fit_chunk_points) {
                let xb = x.select(Axis(0), chunk);
                let mut g = Graph::new();
                let dec = g.mlp(&model.decoder, false);
                let pv = g.mlp(&prop.net, true);
                let v = iwae_log_bounds(&mut g, &dec, &prop, &pv, &xb, cfg.fit_s, model.noise_var, &mut rng, &mut CostMeter::default())?;
                let total = g.sum(v);
                let loss = g.scale(total, -1.0 / batch.len() as f64);
                let grads = g.backward(loss)?;
                for (a, v) in acc.iter_mut().zip(grads.mlp(&pv, &prop.net).to_flat()) {
                    *a += v;
                }
            }
            let mut flat = prop.net.to_flat();
            adam.step_flat(&mut flat, &acc)?;
            prop.net.set_flat(&flat)?;
            if !prop.net.is_finite() {
                return Err(Error::Numeric { op: "adam" });
            }
        }
    }
    Ok(prop)
}

/// Fits the evaluation proposal to a frozen model by maximising the IWAE
/// bound; a diverged fit is retried once at half the learning rate.
pub fn fit_eval_proposal(model: &GenerativeModel, x_train: &Array2<f64>, cfg: &EvalConfig) -> Result<MixtureProposal> {
    cfg.validate()?;
    require_standard_prior(model)?;
    let x = match cfg.fit_max_points {
        Some(m) if m < x_train.nrows() => x_train.slice(ndarray::s![..m, ..]).to_owned(),
        _ => x_train.clone(),
    };
    match fit_attempt(model, &x, cfg, cfg.fit_lr) {
        Ok(p) => Ok(p),
        Err(Error::Numeric { .. }) => fit_attempt(model, &x, cfg, cfg.fit_lr / 2.0)
            .map_err(|e| Error::Evaluation(format!("proposal fit diverged twice: {e}"))),
        Err(e) => Err(e),
    }
}

/// Per-point IWAE estimate with `cfg.ll_s` samples drawn in chunks.
pub fn estimate_ll<P: Proposal + Sync>(model: &GenerativeModel, proposal: &P, x: &Array2<f64>, cfg: &EvalConfig) -> Result<(Vec<f64>, CostMeter)> {
    cfg.validate()?;
    require_standard_prior(model)?;
    let group = (25_000 / cfg.ll_chunk).max(1);
    let starts: Vec<usize> = (0..x.nrows()).step_by(group).collect();
    let results: Vec<Result<(Vec<f64>, CostMeter)>> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + group).min(x.nrows());
            let xb = x.slice(ndarray::s![start..end, ..]).to_owned();
            let mut rng = SeededRng::new(cfg.seed, 100_000 + start as u64);
            let mut meter = CostMeter::default();
            let mut parts: Vec<Vec<f64>> = vec![Vec::new(); end - start];
            let mut done = 0;
            while done < cfg.ll_s {
                let s = cfg.ll_chunk.min(cfg.ll_s - done);
                let v = iwae_batch(model, proposal, &xb, s, &mut rng, &mut meter)?;
                for (p, val) in parts.iter_mut().zip(v) {
                    p.push(val + (s as f64).ln());
                }
                done += s;
            }
            let ll = parts.iter().map(|p| log_sum_exp_unchecked(p) - (cfg.ll_s as f64).ln()).collect();
            Ok((ll, meter))
        })
        .collect();
    let mut ll = Vec::with_capacity(x.nrows());
    let mut meter = CostMeter::default();
    for r in results {
        let (v, m) = r?;
        ll.extend(v);
        meter.add(m);
    }
    Ok((ll, meter))
}

/// Fits the proposal on `x_fit` and estimates LL on `x_eval`.
pub fn evaluate_ll(model: &GenerativeModel, x_fit: &Array2<f64>, x_eval: &Array2<f64>, cfg: &EvalConfig) -> Result<(Vec<f64>, CostMeter)> {
    let prop = fit_eval_proposal(model, x_fit, cfg)?.with_sampling(MixtureSampling::Ancestral);
    estimate_ll(model, &prop, x_eval, cfg)
}

/// A model with a standard normal prior: IWAE-family models as trained,
/// empiricalized models after copula recovery on their training codes.
pub fn evaluable_model(trained: &TrainedModel, train_x: &Array2<f64>, recovery: &RecoveryConfig) -> Result<(GenerativeModel, Option<RecoveryReport>)> {
    match trained.model.prior {
        LatentPrior::StandardNormal => Ok((trained.model.clone(), None)),
        LatentPrior::Empirical => {
            let (m, r) = recover_prior(&trained.model, train_x, recovery)?;
            Ok((m, Some(r)))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlEstimate {
    pub kl: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Mean and standard error of `LL_gt − LL_learned` over paired points.
pub fn kl_from_ll(ll_gt: &[f64], ll_learned: &[f64]) -> Result<KlEstimate> {
    if ll_gt.len() != ll_learned.len() || ll_gt.is_empty() {
        return Err(Error::Dimension { expected: ll_gt.len(), got: ll_learned.len() });
    }
    let diff: Vec<f64> = ll_gt.iter().zip(ll_learned).map(|(a, b)| a - b).collect();
    let (kl, stderr) = mean_stderr(&diff);
    Ok(KlEstimate { kl, stderr, n: diff.len() })
}

/// KL from the ground-truth model to a learned model on points drawn from
/// the ground truth, with both LLs from the same protocol.
pub fn kl_to_ground_truth(gt: &GenerativeModel, learned: &GenerativeModel, x_fit: &Array2<f64>, x_eval: &Array2<f64>, cfg: &EvalConfig) -> Result<KlEstimate> {
    let (a, _) = evaluate_ll(gt, x_fit, x_eval, cfg)?;
    let (b, _) = evaluate_ll(learned, x_fit, x_eval, cfg)?;
    kl_from_ll(&a, &b)
}

/// `n` observations from a model with a standard normal prior.
pub fn sample_observations(model: &GenerativeModel, n: usize, rng: &mut SeededRng) -> Result<Array2<f64>> {
    require_standard_prior(model)?;
    let z = Array2::from_shape_fn((n, 1), |_| rng.normal());
    let mean = model.decoder.forward_batch(&z)?;
    let sd = model.noise_var.sqrt();
    Ok(mean.mapv(|m| m + sd * rng.normal()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub method: Method,
    pub seed: u64,
    pub s: usize,
    pub k: usize,
    pub kl: KlEstimate,
    pub ll_gt: Vec<f64>,
    pub ll_model: Vec<f64>,
    pub meter: CostMeter,
    pub gradient_estimator: String,
    pub s_meaning: String,
    pub config: EvalConfig,
    pub provenance: Option<Provenance>,
}

pub const LL_HEADER: &str = "point,ll_gt,ll_model,diff";

impl EvalReport {
    pub fn ll_csv(&self) -> String {
        let mut out = String::new();
        if let Some(p) = &self.provenance {
            out.push_str(&p.csv_comment());
            out.push('\n');
        }
        out.push_str(LL_HEADER);
        out.push('\n');
        for (i, (a, b)) in self.ll_gt.iter().zip(&self.ll_model).enumerate() {
            out.push_str(&format!("{i},{a},{b},{}\n", a - b));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendSeries {
    OriginalPosterior,
    EmpiricalizedPosterior,
    Mapa,
}

impl TrendSeries {
    pub fn as_str(self) -> &'static str {
        match self {
            TrendSeries::OriginalPosterior => "original_posterior",
            TrendSeries::EmpiricalizedPosterior => "empiricalized_posterior",
            TrendSeries::Mapa => "mapa",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendRecord {
    pub point: usize,
    pub series: TrendSeries,
    pub z: f64,
    pub log_density: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendSummary {
    pub point: usize,
    /// Spearman correlation of the empiricalized and MAPA rows.
    pub spearman: f64,
    /// Trapezoid integral of the normalised original posterior on the grid.
    pub grid_mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub records: Vec<TrendRecord>,
    pub summaries: Vec<TrendSummary>,
}

pub const TREND_HEADER: &str = "point,series,z,log_density";
pub const TREND_SUMMARY_HEADER: &str = "point,spearman,grid_mass";

impl TrendReport {
    pub fn median_spearman(&self) -> f64 {
        median(&self.summaries.iter().map(|s| s.spearman).collect::<Vec<_>>())
    }

    pub fn records_csv(&self, provenance: Option<&Provenance>) -> String {
        let mut out = csv_start(provenance, TREND_HEADER);
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}\n", r.point, r.series.as_str(), r.z, r.log_density));
        }
        out
    }

    pub fn summary_csv(&self, provenance: Option<&Provenance>) -> String {
        let mut out = csv_start(provenance, TREND_SUMMARY_HEADER);
        for s in &self.summaries {
            out.push_str(&format!("{},{},{}\n", s.point, s.spearman, s.grid_mass));
        }
        out
    }
}

fn csv_start(provenance: Option<&Provenance>, header: &str) -> String {
    let mut out = String::new();
    if let Some(p) = provenance {
        out.push_str(&p.csv_comment());
        out.push('\n');
    }
    out.push_str(header);
    out.push('\n');
    out
}

fn trapezoid(z: &[f64], f: &[f64]) -> f64 {
    z.windows(2).zip(f.windows(2)).map(|(zw, fw)| 0.5 * (zw[1] - zw[0]) * (fw[0] + fw[1])).sum()
}

/// Grid covering the prior's support.
pub fn latent_grid(prior: PriorSpec, size: usize) -> Vec<f64> {
    let (lo, hi) = match prior {
        PriorSpec::StandardNormal => (-5.0, 5.0),
        PriorSpec::Uniform01 => (0.0, 1.0),
    };
    (0..size).map(|i| lo + (hi - lo) * i as f64 / (size - 1) as f64).collect()
}

fn rbf_kernel(table: &MapaTable) -> Result<NoiseKernel> {
    match table.source() {
        TableSource::Mapa { kernel } => Ok(kernel),
        other => Err(Error::Config(format!("trend comparison needs a MAPA table, got {}", other.tag()))),
    }
}

/// Original posterior on a grid, empiricalized posterior and MAPA rows
/// (both scaled by `N`) for the requested points.
pub fn posterior_trends(dataset: &Dataset, gt: &GroundTruthModel, table: &MapaTable, points: &[usize], grid_size: usize) -> Result<TrendReport> {
    let n = dataset.len();
    if table.len() != n {
        return Err(Error::Dimension { expected: n, got: table.len() });
    }
    if grid_size < 2 {
        return Err(Error::Config("grid needs at least two points".into()));
    }
    let kernel = rbf_kernel(table)?;
    let grid = latent_grid(gt.prior, grid_size);
    let grid_means = gt.decode(&grid);
    let code_means = gt.decode(&dataset.z_gt);
    let ln_n = (n as f64).ln();
    let mut records = Vec::new();
    let mut summaries = Vec::new();
    for &p in points {
        if p >= n {
            return Err(Error::Config(format!("point {p} out of range")));
        }
        let xp = dataset.x.row(p).to_vec();
        let lp: Vec<f64> = grid
            .iter()
            .zip(grid_means.rows())
            .map(|(&z, m)| crate::math::gaussian_logpdf_iso(&xp, &m.to_vec(), gt.noise_var) + gt.prior.log_density(z))
            .collect();
        let peak = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = peak + trapezoid(&grid, &lp.iter().map(|v| (v - peak).exp()).collect::<Vec<_>>()).ln();
        let post: Vec<f64> = lp.iter().map(|v| v - log_norm).collect();
        let grid_mass = trapezoid(&grid, &post.iter().map(|v| v.exp()).collect::<Vec<_>>());
        for (&z, &v) in grid.iter().zip(&post) {
            records.push(TrendRecord { point: p, series: TrendSeries::OriginalPosterior, z, log_density: v });
        }
        let emp = mapa::likelihood_log_row(&dataset.x, &code_means, p, gt.noise_var);
        let q = mapa::log_row(&dataset.x, p, kernel);
        for i in 0..n {
            let z = dataset.z_gt[i];
            records.push(TrendRecord { point: p, series: TrendSeries::EmpiricalizedPosterior, z, log_density: emp[i] + ln_n });
            records.push(TrendRecord { point: p, series: TrendSeries::Mapa, z, log_density: q[i] + ln_n });
        }
        summaries.push(TrendSummary { point: p, spearman: spearman(&emp, &q), grid_mass });
    }
    Ok(TrendReport { records, summaries })
}

/// Spearman correlation between MAPA rows and the empiricalized posterior
/// rows of a model whose code means are `code_means`.
pub fn trend_correlations(x: &Array2<f64>, code_means: &Array2<f64>, noise_var: f64, kernel: NoiseKernel, points: &[usize]) -> Vec<f64> {
    points
        .iter()
        .map(|&p| spearman(&mapa::likelihood_log_row(x, code_means, p, noise_var), &mapa::log_row(x, p, kernel)))
        .collect()
}

/// Random distinct row indices.
pub fn sample_points(n: usize, count: usize, rng: &mut SeededRng) -> Vec<usize> {
    let mut p = rng.permutation(n);
    p.truncate(count.min(n));
    p
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonIdentReport {
    pub dataset: String,
    pub points: Vec<usize>,
    pub variant1: Vec<f64>,
    pub variant2: Vec<f64>,
    pub variant1_median: f64,
    pub variant2_median: f64,
    pub median_gap: f64,
    pub table_identical: bool,
    pub table_fingerprint: String,
    /// Largest decoder disagreement on a latent grid, in units of `σ_ε`.
    pub decoder_gap_sigmas: f64,
    pub vae_restart: usize,
}

pub const NON_IDENT_HEADER: &str = "point,variant,spearman";

impl NonIdentReport {
    pub fn csv(&self, provenance: Option<&Provenance>) -> String {
        let mut out = csv_start(provenance, NON_IDENT_HEADER);
        for (i, &p) in self.points.iter().enumerate() {
            out.push_str(&format!("{p},1,{}\n", self.variant1[i]));
            out.push_str(&format!("{p},2,{}\n", self.variant2[i]));
        }
        out
    }
}

/// Compares MAPA trends against two decoders that induce the same data
/// distribution: the ground truth and a mean-field Gaussian VAE fit to the
/// same data. The VAE's codes are its posterior means.
pub fn non_identifiability_study(dataset: &Dataset, gt: &GroundTruthModel, vae: &TrainConfig, points: &[usize]) -> Result<NonIdentReport> {
    if !matches!(gt.name.as_str(), "abs_value" | "circle") {
        return Err(Error::Config(format!("non-identifiability study supports abs_value and circle, got {}", gt.name)));
    }
    if vae.method != Method::Vae {
        return Err(Error::Config("variant 2 must be trained as a VAE".into()));
    }
    let kernel = NoiseKernel::GaussianRbf { noise_var: dataset.noise_var };
    let table = mapa::compute_table(&dataset.x, kernel)?;
    let table_again = mapa::compute_table(&dataset.x, kernel)?;
    let table_identical = table.probs_bytes() == table_again.probs_bytes();

    let gt_means = gt.decode(&dataset.z_gt);
    let variant1 = trend_correlations(&dataset.x, &gt_means, gt.noise_var, kernel, points);

    let train = dataset.subset(Split::Train);
    let val = dataset.subset(Split::Val);
    let outcome = inference::train(vae, &train.x, &val.x, dataset.noise_var, None)
        .map_err(|e| Error::Evaluation(format!("VAE for variant 2 failed: {e}")))?;
    let model = outcome.best.model;
    let proposal = outcome.best.proposal.ok_or_else(|| Error::Evaluation("VAE has no proposal".into()))?;
    let codes = proposal.means(&dataset.x)?;
    let vae_means = model.decoder.forward_batch(&codes)?;
    let variant2 = trend_correlations(&dataset.x, &vae_means, dataset.noise_var, kernel, points);

    let grid = latent_grid(PriorSpec::StandardNormal, 601);
    let zg = Array2::from_shape_vec((grid.len(), 1), grid.clone()).unwrap();
    let gap = (&gt.decode(&grid) - &model.decoder.forward_batch(&zg)?)
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt())
        .fold(0.0, f64::max);

    let (m1, m2) = (median(&variant1), median(&variant2));
    Ok(NonIdentReport {
        dataset: gt.name.to_string(),
        points: points.to_vec(),
        variant1,
        variant2,
        variant1_median: m1,
        variant2_median: m2,
        median_gap: (m1 - m2).abs(),
        table_identical,
        table_fingerprint: table.fingerprint().to_string(),
        decoder_gap_sigmas: gap / dataset.noise_var.sqrt(),
        vae_restart: outcome.best_restart,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostModel {
    /// Only decoder passes are counted.
    Decoder,
    /// Encoder and decoder passes are equally expensive.
    EncoderDecoder,
}

impl CostModel {
    pub fn as_str(self) -> &'static str {
        match self {
            CostModel::Decoder => "decoder",
            CostModel::EncoderDecoder => "encoder_decoder",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    /// `iwae`, `mapa` or `mapa_max`.
    pub method: String,
    pub s: usize,
    pub k: usize,
    pub cost_model: CostModel,
    pub per_point: f64,
    /// Largest per-batch decoder pass count observed.
    pub max_batch_decoder: u64,
}

pub const COST_HEADER: &str = "method,s,k,cost_model,per_point,max_batch_decoder";

pub fn cost_csv(rows: &[CostRow], provenance: Option<&Provenance>) -> String {
    let mut out = csv_start(provenance, COST_HEADER);
    for r in rows {
        out.push_str(&format!("{},{},{},{},{},{}\n", r.method, r.s, r.k, r.cost_model.as_str(), r.per_point, r.max_batch_decoder));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CountConfig {
    pub s_grid: Vec<usize>,
    pub k_frac: f64,
    pub batch_size: usize,
    /// Random batches measured per setting.
    pub batches: usize,
    pub seed: u64,
}

impl Default for CountConfig {
    fn default() -> Self {
        Self { s_grid: vec![1, 10, 50, 100, 200], k_frac: 0.1, batch_size: 100, batches: 20, seed: 0 }
    }
}

/// Per-point forward passes per gradient step, measured from the meters of
/// real bound evaluations on random batches of `x`.
pub fn count_passes(x: &Array2<f64>, table: &MapaTable, noise_var: f64, cfg: &CountConfig) -> Result<Vec<CostRow>> {
    let n = x.nrows();
    if cfg.batch_size == 0 || cfg.batch_size > n {
        return Err(Error::Config(format!("batch size must lie in 1..={n}")));
    }
    if table.len() != n {
        return Err(Error::Dimension { expected: n, got: table.len() });
    }
    let mut rng = SeededRng::new(cfg.seed, 70);
    let hidden = [50, 50, 50];
    let empirical = GenerativeModel::init_empirical(x.ncols(), 1, &hidden, noise_var, &mut rng);
    let gaussian = GenerativeModel::init_gaussian_prior(x.ncols(), 1, &hidden, noise_var, &mut rng);
    let proposal = inference::GaussianProposal::init(x.ncols(), 1, &hidden, &mut rng);
    let sampler = ProposalSampler::new(table);
    let b = cfg.batch_size as f64;
    let mut rows = Vec::new();
    let push = |rows: &mut Vec<CostRow>, method: &str, s, k, meters: &[CostMeter]| {
        let m = meters.len() as f64;
        let dec: f64 = meters.iter().map(|c| c.decoder_passes as f64).sum::<f64>() / m;
        let enc: f64 = meters.iter().map(|c| c.encoder_passes as f64).sum::<f64>() / m;
        let max_batch_decoder = meters.iter().map(|c| c.decoder_passes).max().unwrap_or(0);
        for (cm, v) in [(CostModel::Decoder, dec), (CostModel::EncoderDecoder, dec + enc)] {
            rows.push(CostRow { method: method.into(), s, k, cost_model: cm, per_point: v / b, max_batch_decoder });
        }
    };
    for &s in &cfg.s_grid {
        let k = inference::k_from_fraction(cfg.k_frac, s, n);
        let mut iwae = Vec::new();
        let mut mapa_m = Vec::new();
        for _ in 0..cfg.batches {
            let batch = sample_points(n, cfg.batch_size, &mut rng);
            let mut meter = CostMeter::default();
            iwae_batch(&gaussian, &proposal, &x.select(Axis(0), &batch), s.max(1), &mut rng, &mut meter)?;
            iwae.push(meter);
            let (k_eff, s_eff) = if k >= n { (n, 0) } else { (k, s) };
            let (_, m) = inference::mapa_bound_batch(&empirical, &sampler, x, &batch, k_eff, s_eff, &mut rng)?;
            mapa_m.push(m);
        }
        push(&mut rows, "iwae", s, 0, &iwae);
        push(&mut rows, "mapa", s, k, &mapa_m);
    }
    let cap = CostMeter { encoder_passes: n as u64, decoder_passes: n as u64 };
    push(&mut rows, "mapa_max", 0, 0, &[cap]);
    Ok(rows)
}
