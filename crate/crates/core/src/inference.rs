//! Training objectives and the training loop.
//!
//! Every objective is built on a [`Graph`] so the same code computes bound
//! values (frozen networks) and training gradients (trainable networks).
//! The empirical objectives (AE loss, exact empiricalized LML, MAPA bound)
//! all reduce to a log-sum-exp over weighted likelihood terms
//! `log w + log p(x_n | f(g(x_i)))`, described by [`IndexTerms`].

use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{Dataset, GroundTruthModel, PriorSpec};
use crate::error::{Error, Result};
use crate::io::{self, MlpHeader, Provenance};
use crate::mapa::{self, MapaTable, NoiseKernel, ProposalSampler};
use crate::math::special::LN_2PI;
use crate::math::{Activation, AdamState, Graph, MlpParams, MlpVars, NodeId, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ae,
    Vae,
    Iwae,
    Mapa,
    MapaGt,
    MapaNaive,
}

impl Method {
    pub const ALL: [Method; 6] =
        [Method::Ae, Method::Vae, Method::Iwae, Method::Mapa, Method::MapaGt, Method::MapaNaive];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ae => "ae",
            Method::Vae => "vae",
            Method::Iwae => "iwae",
            Method::Mapa => "mapa",
            Method::MapaGt => "mapa_gt",
            Method::MapaNaive => "mapa_naive",
        }
    }

    /// Methods that train an amortized empiricalized model.
    pub fn is_empirical(self) -> bool {
        !matches!(self, Method::Vae | Method::Iwae)
    }

    pub fn uses_table(self) -> bool {
        matches!(self, Method::Mapa | Method::MapaGt | Method::MapaNaive)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Encoder and decoder forward passes, counted per evaluated row.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostMeter {
    pub encoder_passes: u64,
    pub decoder_passes: u64,
}

impl CostMeter {
    pub fn add(&mut self, other: CostMeter) {
        self.encoder_passes += other.encoder_passes;
        self.decoder_passes += other.decoder_passes;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentPrior {
    StandardNormal,
    /// Uniform over the amortized codes `g(x_i)` of the training points.
    Empirical,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerativeModel {
    /// `f_θ: L → D`.
    pub decoder: MlpParams,
    /// `g: D → L`, present for amortized empiricalized models.
    pub amortizer: Option<MlpParams>,
    pub noise_var: f64,
    pub prior: LatentPrior,
}

impl GenerativeModel {
    pub fn latent_dim(&self) -> usize {
        self.decoder.input_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.decoder.output_dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.decoder.validate()?;
        if !(self.noise_var > 0.0) {
            return Err(Error::Config(format!("noise variance must be positive, got {}", self.noise_var)));
        }
        if self.latent_dim() >= self.obs_dim() {
            return Err(Error::Config(format!(
                "latent dimension {} must be below observation dimension {}",
                self.latent_dim(),
                self.obs_dim()
            )));
        }
        if let Some(a) = &self.amortizer {
            a.validate()?;
            if a.input_dim() != self.obs_dim() || a.output_dim() != self.latent_dim() {
                return Err(Error::Dimension { expected: self.latent_dim(), got: a.output_dim() });
            }
        }
        Ok(())
    }

    /// Fresh amortized empiricalized model with tanh hidden layers.
    pub fn init_empirical(obs_dim: usize, latent_dim: usize, hidden: &[usize], noise_var: f64, rng: &mut SeededRng) -> Self {
        Self {
            decoder: MlpParams::init(&chain(latent_dim, hidden, obs_dim), Activation::Tanh, rng),
            amortizer: Some(MlpParams::init(&chain(obs_dim, hidden, latent_dim), Activation::Tanh, rng)),
            noise_var,
            prior: LatentPrior::Empirical,
        }
    }

    pub fn init_gaussian_prior(obs_dim: usize, latent_dim: usize, hidden: &[usize], noise_var: f64, rng: &mut SeededRng) -> Self {
        Self {
            decoder: MlpParams::init(&chain(latent_dim, hidden, obs_dim), Activation::Tanh, rng),
            amortizer: None,
            noise_var,
            prior: LatentPrior::StandardNormal,
        }
    }

    /// The surrogate ground-truth decoder with its standard normal prior.
    pub fn from_ground_truth(gt: &GroundTruthModel) -> Result<Self> {
        let decoder = gt
            .surrogate()
            .ok_or_else(|| Error::Config(format!("{} has no network decoder", gt.name)))?
            .clone();
        if gt.prior != PriorSpec::StandardNormal {
            return Err(Error::Config(format!("{} does not have a standard normal prior", gt.name)));
        }
        Ok(Self { decoder, amortizer: None, noise_var: gt.noise_var, prior: LatentPrior::StandardNormal })
    }

    fn amortizer(&self) -> Result<&MlpParams> {
        self.amortizer.as_ref().ok_or_else(|| Error::Config("model has no amortizing encoder".into()))
    }

    /// `f(g(x))` for each row of `x`.
    pub fn reconstruct(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.decoder.forward_batch(&self.amortizer()?.forward_batch(x)?)
    }
}

pub(crate) fn chain(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(output);
    dims
}

/// Reparameterized sampler with a tractable density, placed on a graph.
pub trait Proposal {
    fn net(&self) -> &MlpParams;

    fn latent_dim(&self) -> usize;

    /// Draws `s` latents per row of `x` (rows grouped by point) and returns
    /// `(z, log q(z | x))` of shapes `(B·s) × L` and `(B·s) × 1`.
    fn sample_and_log_q(&self, g: &mut Graph, vars: &MlpVars, x: NodeId, s: usize, rng: &mut SeededRng) -> (NodeId, NodeId);
}

/// Mean-field Gaussian `q(z | x)`; the network emits `[mean, log-variance]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianProposal {
    pub net: MlpParams,
}

impl GaussianProposal {
    pub fn init(obs_dim: usize, latent_dim: usize, hidden: &[usize], rng: &mut SeededRng) -> Self {
        Self { net: MlpParams::init(&chain(obs_dim, hidden, 2 * latent_dim), Activation::Tanh, rng) }
    }

    /// Posterior means for each row of `x`.
    pub fn means(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let out = self.net.forward_batch(x)?;
        Ok(out.slice(ndarray::s![.., ..self.latent_dim()]).to_owned())
    }
}

pub(crate) fn repeat_index(b: usize, s: usize) -> Vec<usize> {
    (0..b).flat_map(|i| std::iter::repeat_n(i, s)).collect()
}

impl Proposal for GaussianProposal {
    fn net(&self) -> &MlpParams {
        &self.net
    }

    fn latent_dim(&self) -> usize {
        self.net.output_dim() / 2
    }

    fn sample_and_log_q(&self, g: &mut Graph, vars: &MlpVars, x: NodeId, s: usize, rng: &mut SeededRng) -> (NodeId, NodeId) {
        let l = self.latent_dim();
        let b = g.value(x).nrows();
        let out = g.mlp_forward(vars, x);
        let rep = g.gather_rows(out, repeat_index(b, s));
        let mean = g.slice_cols(rep, 0, l);
        let logvar = g.slice_cols(rep, l, 2 * l);
        let eps = Array2::from_shape_fn((b * s, l), |_| rng.normal());
        let consts = eps.map_axis(Axis(1), |r| -0.5 * (l as f64) * LN_2PI - 0.5 * r.dot(&r)).insert_axis(Axis(1));
        let eps = g.constant(eps);
        let half = g.scale(logvar, 0.5);
        let std = g.exp(half);
        let noise = g.mul(std, eps);
        let z = g.add(mean, noise);
        let lv = g.row_sum(logvar);
        let lv = g.scale(lv, -0.5);
        let c = g.constant(consts);
        let log_q = g.add(lv, c);
        (z, log_q)
    }
}

/// Per-point value of a bound together with its cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimate {
    pub value: f64,
    pub method: Method,
    pub s: usize,
    pub k: Option<usize>,
    pub meter: CostMeter,
}

/// Weighted likelihood terms for a batch of target points.
///
/// Target `b` owns rows `offsets[b]..offsets[b + 1]` of `(index, log_weight)`;
/// its value is `log Σ exp(log_weight + log p(x_b | f(g(x_index))))`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IndexTerms {
    pub index: Vec<usize>,
    pub log_weight: Vec<f64>,
    pub offsets: Vec<usize>,
}

impl IndexTerms {
    pub fn new() -> Self {
        Self { offsets: vec![0], ..Default::default() }
    }

    pub fn push(&mut self, index: usize, log_weight: f64) {
        self.index.push(index);
        self.log_weight.push(log_weight);
    }

    pub fn close_point(&mut self) {
        self.offsets.push(self.index.len());
    }

    pub fn points(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Sorted distinct referenced indices.
    pub fn union(&self) -> Vec<usize> {
        let mut u = self.index.clone();
        u.sort_unstable();
        u.dedup();
        u
    }

    /// Terms `(i, -log N)` for every `i` in `0..n`, for each of `points` targets.
    pub fn full(points: usize, n: usize) -> Self {
        let mut t = Self::new();
        let lw = -(n as f64).ln();
        for _ in 0..points {
            for i in 0..n {
                t.push(i, lw);
            }
            t.close_point();
        }
        t
    }
}

/// Builds `B × 1` empirical log-sums. `codes_x` holds the observations whose
/// amortized codes form the prior; `targets` holds the points being scored.
/// Encoder and decoder run once per distinct referenced code.
pub fn empirical_log_sums(
    g: &mut Graph,
    dec: &MlpVars,
    enc: &MlpVars,
    codes_x: &Array2<f64>,
    targets: &Array2<f64>,
    terms: &IndexTerms,
    noise_var: f64,
    meter: &mut CostMeter,
) -> Result<NodeId> {
    if terms.points() != targets.nrows() {
        return Err(Error::Dimension { expected: targets.nrows(), got: terms.points() });
    }
    if terms.offsets.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("every target needs at least one term".into()));
    }
    let union = terms.union();
    if let Some(&last) = union.last() {
        if last >= codes_x.nrows() {
            return Err(Error::Dimension { expected: codes_x.nrows(), got: last + 1 });
        }
    }
    let mut pos = vec![usize::MAX; codes_x.nrows()];
    for (p, &i) in union.iter().enumerate() {
        pos[i] = p;
    }
    let xu = g.constant(codes_x.select(Axis(0), &union));
    let z = g.mlp_forward(enc, xu);
    let means = g.mlp_forward(dec, z);
    let gathered = g.gather_rows(means, terms.index.iter().map(|&i| pos[i]).collect());
    let owner: Vec<usize> = (0..terms.points())
        .flat_map(|b| std::iter::repeat_n(b, terms.offsets[b + 1] - terms.offsets[b]))
        .collect();
    let tx = g.constant(targets.select(Axis(0), &owner));
    let lp = g.gaussian_logpdf(gathered, tx, noise_var);
    let lw = g.constant(Array2::from_shape_vec((terms.log_weight.len(), 1), terms.log_weight.clone()).unwrap());
    let weighted = g.add(lp, lw);
    meter.encoder_passes += union.len() as u64;
    meter.decoder_passes += union.len() as u64;
    Ok(g.segment_log_sum_exp(weighted, terms.offsets.clone()))
}

/// `(1/S) Σ_s p(x|z_s) p(z_s) / q(z_s|x)` in log space, `B × 1`.
#[allow(clippy::too_many_arguments)]
pub fn iwae_log_bounds<P: Proposal>(
    g: &mut Graph,
    dec: &MlpVars,
    proposal: &P,
    prop: &MlpVars,
    x: &Array2<f64>,
    s: usize,
    noise_var: f64,
    rng: &mut SeededRng,
    meter: &mut CostMeter,
) -> Result<NodeId> {
    if s == 0 {
        return Err(Error::Config("IWAE needs S >= 1".into()));
    }
    let b = x.nrows();
    let xb = g.constant(x.clone());
    let (z, log_q) = proposal.sample_and_log_q(g, prop, xb, s, rng);
    let zeros = g.constant(Array2::zeros((b * s, proposal.latent_dim())));
    let log_pz = g.gaussian_logpdf(z, zeros, 1.0);
    let means = g.mlp_forward(dec, z);
    let xr = g.constant(x.select(Axis(0), &repeat_index(b, s)));
    let log_px = g.gaussian_logpdf(means, xr, noise_var);
    let joint = g.add(log_px, log_pz);
    let w = g.sub(joint, log_q);
    let offsets: Vec<usize> = (0..=b).map(|i| i * s).collect();
    let lse = g.segment_log_sum_exp(w, offsets);
    meter.encoder_passes += b as u64;
    meter.decoder_passes += (b * s) as u64;
    Ok(g.offset(lse, -(s as f64).ln()))
}

fn column(g: &Graph, id: NodeId) -> Vec<f64> {
    g.value(id).column(0).to_vec()
}

fn finite_column(g: &Graph, id: NodeId) -> Result<Vec<f64>> {
    match g.non_finite_op() {
        Some(op) => Err(Error::Numeric { op }),
        None => Ok(column(g, id)),
    }
}

fn row_matrix(x: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, x.len()), x.to_vec()).unwrap()
}

/// `log p(x | f(g(x))) − log N` for each row of `targets`.
pub fn ae_loss_batch(model: &GenerativeModel, targets: &Array2<f64>, n_total: usize) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let dec = g.mlp(&model.decoder, false);
    let enc = g.mlp(model.amortizer()?, false);
    let mut terms = IndexTerms::new();
    for b in 0..targets.nrows() {
        terms.push(b, -(n_total as f64).ln());
        terms.close_point();
    }
    let out = empirical_log_sums(&mut g, &dec, &enc, targets, targets, &terms, model.noise_var, &mut CostMeter::default())?;
    finite_column(&g, out)
}

pub fn ae_loss(model: &GenerativeModel, x_n: &[f64], n_total: usize) -> Result<f64> {
    Ok(ae_loss_batch(model, &row_matrix(x_n), n_total)?[0])
}

/// `log (1/N) Σ_i p(x_b | f(g(x_i)))` against the codes of `codes_x`,
/// processed in chunks of targets.
pub fn exact_lml_batch(
    model: &GenerativeModel,
    codes_x: &Array2<f64>,
    targets: &Array2<f64>,
    meter: &mut CostMeter,
) -> Result<Vec<f64>> {
    let n = codes_x.nrows();
    let chunk = (200_000 / n.max(1)).max(1);
    let mut out = Vec::with_capacity(targets.nrows());
    for start in (0..targets.nrows()).step_by(chunk) {
        let end = (start + chunk).min(targets.nrows());
        let t = targets.slice(ndarray::s![start..end, ..]).to_owned();
        let mut g = Graph::new();
        let dec = g.mlp(&model.decoder, false);
        let enc = g.mlp(model.amortizer()?, false);
        let terms = IndexTerms::full(end - start, n);
        let v = empirical_log_sums(&mut g, &dec, &enc, codes_x, &t, &terms, model.noise_var, meter)?;
        out.extend(finite_column(&g, v)?);
    }
    Ok(out)
}

pub fn exact_empiricalized_lml(model: &GenerativeModel, x_n: &[f64], x_all: &Array2<f64>, meter: &mut CostMeter) -> Result<f64> {
    Ok(exact_lml_batch(model, x_all, &row_matrix(x_n), meter)?[0])
}

/// Per-row IWAE bounds with frozen networks.
pub fn iwae_batch<P: Proposal>(
    model: &GenerativeModel,
    proposal: &P,
    x: &Array2<f64>,
    s: usize,
    rng: &mut SeededRng,
    meter: &mut CostMeter,
) -> Result<Vec<f64>> {
    if model.prior != LatentPrior::StandardNormal {
        return Err(Error::Config("IWAE needs a standard normal prior".into()));
    }
    let mut g = Graph::new();
    let dec = g.mlp(&model.decoder, false);
    let prop = g.mlp(proposal.net(), false);
    let v = iwae_log_bounds(&mut g, &dec, proposal, &prop, x, s, model.noise_var, rng, meter)?;
    finite_column(&g, v)
}

pub fn iwae_bound<P: Proposal>(model: &GenerativeModel, proposal: &P, x_n: &[f64], s: usize, rng: &mut SeededRng) -> Result<BoundEstimate> {
    let mut meter = CostMeter::default();
    let value = iwae_batch(model, proposal, &row_matrix(x_n), s, rng, &mut meter)?[0];
    Ok(BoundEstimate { value, method: Method::Iwae, s, k: None, meter })
}

/// Single-sample reparameterized ELBO.
pub fn elbo_vae<P: Proposal>(model: &GenerativeModel, proposal: &P, x_n: &[f64], rng: &mut SeededRng) -> Result<BoundEstimate> {
    let b = iwae_bound(model, proposal, x_n, 1, rng)?;
    Ok(BoundEstimate { method: Method::Vae, ..b })
}

/// Checks `(k, S)` against a table of size `n`.
pub fn check_mapa_budget(n: usize, k: usize, s: usize) -> Result<()> {
    if k > n {
        return Err(Error::Config(format!("k = {k} exceeds N = {n}")));
    }
    if k == n && s > 0 {
        return Err(Error::EmptySupport { k, n });
    }
    if k == 0 && s == 0 {
        return Err(Error::Config("MAPA bound needs k + S > 0".into()));
    }
    Ok(())
}

/// Top-k terms plus `S` importance-sampled tail terms for each point of
/// `batch`. Rows whose tail mass underflows keep only their top-k terms.
pub fn mapa_terms(sampler: &ProposalSampler, batch: &[usize], k: usize, s: usize, rng: &mut SeededRng) -> Result<IndexTerms> {
    let n = sampler.table().len();
    check_mapa_budget(n, k, s)?;
    let ln_n = (n as f64).ln();
    let ln_ns = ln_n + (s as f64).ln();
    let mut terms = IndexTerms::new();
    for &row in batch {
        for &i in &sampler.table().order(row)[..k] {
            terms.push(i as usize, -ln_n);
        }
        if s > 0 && sampler.tail_mass(row, k) > 0.0 {
            for _ in 0..s {
                if let Some(i) = sampler.sample(row, k, rng) {
                    terms.push(i, -ln_ns - sampler.log_q_tilde(row, k, i));
                }
            }
        }
        if terms.index.len() == *terms.offsets.last().unwrap() {
            return Err(Error::EmptySupport { k, n });
        }
        terms.close_point();
    }
    Ok(terms)
}

/// MAPA bound value from explicit draws, given `log p(x_n | f(g(x_i)))`
/// for every `i`.
pub fn mapa_bound_from_draws(log_lik: &[f64], top: &[usize], draws: &[usize], log_q_tilde: &[f64]) -> f64 {
    let n = log_lik.len() as f64;
    let s = draws.len() as f64;
    let mut v: Vec<f64> = top.iter().map(|&i| log_lik[i] - n.ln()).collect();
    v.extend(draws.iter().zip(log_q_tilde).map(|(&i, &lq)| log_lik[i] - n.ln() - s.ln() - lq));
    crate::math::special::log_sum_exp_unchecked(&v)
}

/// MAPA bound for every point of `batch` (indices into `x_all`), sharing
/// forward passes across the batch.
pub fn mapa_bound_batch(
    model: &GenerativeModel,
    sampler: &ProposalSampler,
    x_all: &Array2<f64>,
    batch: &[usize],
    k: usize,
    s: usize,
    rng: &mut SeededRng,
) -> Result<(Vec<f64>, CostMeter)> {
    if sampler.table().len() != x_all.nrows() {
        return Err(Error::Dimension { expected: x_all.nrows(), got: sampler.table().len() });
    }
    let terms = mapa_terms(sampler, batch, k, s, rng)?;
    let targets = x_all.select(Axis(0), batch);
    let mut g = Graph::new();
    let dec = g.mlp(&model.decoder, false);
    let enc = g.mlp(model.amortizer()?, false);
    let mut meter = CostMeter::default();
    let v = empirical_log_sums(&mut g, &dec, &enc, x_all, &targets, &terms, model.noise_var, &mut meter)?;
    Ok((finite_column(&g, v)?, meter))
}

#[allow(clippy::too_many_arguments)]
pub fn mapa_bound(
    model: &GenerativeModel,
    sampler: &ProposalSampler,
    x_all: &Array2<f64>,
    n: usize,
    k: usize,
    s: usize,
    rng: &mut SeededRng,
) -> Result<BoundEstimate> {
    let (v, meter) = mapa_bound_batch(model, sampler, x_all, &[n], k, s, rng)?;
    Ok(BoundEstimate { value: v[0], method: Method::Mapa, s, k: Some(k), meter })
}

/// Builds the table a table-based method trains with.
pub fn table_for(method: Method, train: &Dataset, gt: Option<&GroundTruthModel>) -> Result<Option<MapaTable>> {
    Ok(match method {
        Method::Mapa => Some(mapa::compute_table(&train.x, NoiseKernel::GaussianRbf { noise_var: train.noise_var })?),
        Method::MapaGt => {
            let gt = gt.ok_or_else(|| Error::Config("mapa_gt needs the ground-truth model".into()))?;
            Some(mapa::ground_truth_table(train, gt)?)
        }
        Method::MapaNaive => Some(mapa::naive_table(train.len())?),
        _ => None,
    })
}

/// `k = round(frac · S)`, capped at `n`.
pub fn k_from_fraction(frac: f64, s: usize, n: usize) -> usize {
    ((frac * s as f64).round() as usize).min(n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    /// Importance samples per point (IWAE, MAPA family).
    pub s: usize,
    /// Exactly summed top-k set size (MAPA family).
    pub k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub restarts: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub seed: u64,
    /// Epoch interval between validation evaluations; the final epoch is
    /// always validated.
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Mapa,
            s: 10,
            k: 1,
            epochs: 500,
            batch_size: 100,
            lr: 1e-3,
            restarts: 3,
            hidden: vec![50, 50, 50],
            latent_dim: 1,
            seed: 0,
            val_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.restarts == 0 || self.val_every == 0 {
            return Err(Error::Config("epochs, batch size, restarts and val_every must be positive".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        match self.method {
            Method::Iwae if self.s == 0 => Err(Error::Config("IWAE needs S >= 1".into())),
            m if m.uses_table() && self.k == 0 && self.s == 0 => Err(Error::Config("MAPA needs k + S > 0".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_bound: f64,
    /// NaN on epochs without validation.
    pub val_bound: f64,
    pub wall_clock_s: f64,
    pub decoder_passes: u64,
    pub encoder_passes: u64,
}

pub const HISTORY_HEADER: &str = "epoch,train_bound,val_bound,wall_clock_s,decoder_passes,encoder_passes";

pub fn history_csv(rows: &[HistoryRow], provenance: Option<&Provenance>) -> String {
    let mut out = String::new();
    if let Some(p) = provenance {
        out.push_str(&p.csv_comment());
        out.push('\n');
    }
    out.push_str(HISTORY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.3},{},{}\n",
            r.epoch, r.train_bound, r.val_bound, r.wall_clock_s, r.decoder_passes, r.encoder_passes
        ));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub method: Method,
    pub model: GenerativeModel,
    pub proposal: Option<GaussianProposal>,
    pub s: usize,
    pub k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub restart: usize,
    pub final_val: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: TrainedModel,
    pub best_restart: usize,
    pub history: Vec<HistoryRow>,
    pub restarts: Vec<RestartSummary>,
}

struct Run {
    trained: TrainedModel,
    history: Vec<HistoryRow>,
    final_val: f64,
}

const VAL_STREAM: u64 = 7;

/// What one minibatch objective evaluates.
#[derive(Clone, Copy)]
pub struct BatchSpec<'a> {
    pub method: Method,
    pub s: usize,
    pub k: usize,
    pub noise_var: f64,
    pub sampler: Option<&'a ProposalSampler<'a>>,
}

/// Mean bound over a minibatch and the gradients of its negation.
pub struct BatchStep {
    pub value: f64,
    pub grad_decoder: MlpParams,
    /// Gradient for the amortizer (empirical methods) or proposal network.
    pub grad_aux: MlpParams,
    pub meter: CostMeter,
}

/// Evaluates the training objective of `spec.method` on `batch` (indices
/// into `x`). `aux` is the amortizer for empirical methods and the Gaussian
/// proposal network otherwise. Table entries enter only as constants.
pub fn batch_objective(
    spec: &BatchSpec,
    decoder: &MlpParams,
    aux: &MlpParams,
    x: &Array2<f64>,
    batch: &[usize],
    rng: &mut SeededRng,
) -> Result<BatchStep> {
    let n = x.nrows();
    let mut meter = CostMeter::default();
    let mut g = Graph::new();
    let dec = g.mlp(decoder, true);
    let av = g.mlp(aux, true);
    let values = match spec.method {
        Method::Ae => {
            let mut terms = IndexTerms::new();
            for &i in batch {
                terms.push(i, -(n as f64).ln());
                terms.close_point();
            }
            let targets = x.select(Axis(0), batch);
            empirical_log_sums(&mut g, &dec, &av, x, &targets, &terms, spec.noise_var, &mut meter)?
        }
        Method::Vae | Method::Iwae => {
            let xb = x.select(Axis(0), batch);
            let p = GaussianProposal { net: aux.clone() };
            let s = if spec.method == Method::Vae { 1 } else { spec.s };
            iwae_log_bounds(&mut g, &dec, &p, &av, &xb, s, spec.noise_var, rng, &mut meter)?
        }
        _ => {
            let sampler = spec.sampler.ok_or_else(|| Error::Config(format!("{} needs a table", spec.method)))?;
            let terms = mapa_terms(sampler, batch, spec.k, spec.s, rng)?;
            let targets = x.select(Axis(0), batch);
            empirical_log_sums(&mut g, &dec, &av, x, &targets, &terms, spec.noise_var, &mut meter)?
        }
    };
    let mean = g.mean(values);
    let loss = g.scale(mean, -1.0);
    let grads = g.backward(loss)?;
    Ok(BatchStep {
        value: g.scalar(mean),
        grad_decoder: grads.mlp(&dec, decoder),
        grad_aux: grads.mlp(&av, aux),
        meter,
    })
}

/// Trains `config.restarts` independent restarts and keeps the one with the
/// best final validation bound. `table` must be given for the MAPA family.
pub fn train(config: &TrainConfig, train_x: &Array2<f64>, val_x: &Array2<f64>, noise_var: f64, table: Option<&MapaTable>) -> Result<TrainOutcome> {
    config.validate()?;
    if config.method.uses_table() {
        let t = table.ok_or_else(|| Error::Config(format!("{} needs a table", config.method)))?;
        if t.len() != train_x.nrows() {
            return Err(Error::Dimension { expected: train_x.nrows(), got: t.len() });
        }
        check_mapa_budget(t.len(), config.k, config.s)?;
    }
    let sampler = table.map(ProposalSampler::new);
    let results: Vec<Result<Run>> = (0..config.restarts)
        .into_par_iter()
        .map(|r| train_restart(config, r, train_x, val_x, noise_var, sampler.as_ref()))
        .collect();
    let mut restarts = Vec::new();
    let mut best: Option<(usize, Run)> = None;
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(run) => {
                restarts.push(RestartSummary { restart: r, final_val: Some(run.final_val), failure: None });
                if best.as_ref().is_none_or(|(_, b)| run.final_val > b.final_val) {
                    best = Some((r, run));
                }
            }
            Err(e) => restarts.push(RestartSummary { restart: r, final_val: None, failure: Some(e.to_string()) }),
        }
    }
    let (best_restart, run) = best.ok_or_else(|| {
        Error::Training(format!(
            "all {} restarts failed: {}",
            config.restarts,
            restarts.iter().filter_map(|r| r.failure.clone()).collect::<Vec<_>>().join("; ")
        ))
    })?;
    Ok(TrainOutcome { best: run.trained, best_restart, history: run.history, restarts })
}

fn train_restart(
    config: &TrainConfig,
    restart: usize,
    train_x: &Array2<f64>,
    val_x: &Array2<f64>,
    noise_var: f64,
    sampler: Option<&ProposalSampler>,
) -> Result<Run> {
    let (n, d) = train_x.dim();
    let mut rng = SeededRng::new(config.seed, 1000 + restart as u64);
    let method = config.method;
    let (mut model, mut proposal) = if method.is_empirical() {
        (GenerativeModel::init_empirical(d, config.latent_dim, &config.hidden, noise_var, &mut rng), None)
    } else {
        let m = GenerativeModel::init_gaussian_prior(d, config.latent_dim, &config.hidden, noise_var, &mut rng);
        (m, Some(GaussianProposal::init(d, config.latent_dim, &config.hidden, &mut rng)))
    };
    let mut dec_adam = AdamState::for_params(&model.decoder, config.lr);
    let mut aux_adam = match (&model.amortizer, &proposal) {
        (Some(a), _) => AdamState::for_params(a, config.lr),
        (None, Some(p)) => AdamState::for_params(&p.net, config.lr),
        _ => unreachable!(),
    };
    let s_train = match method {
        Method::Vae => 1,
        _ => config.s,
    };
    let start = Instant::now();
    let mut history = Vec::with_capacity(config.epochs);
    let mut final_val = f64::NAN;
    for epoch in 1..=config.epochs {
        let perm = rng.permutation(n);
        let mut meter = CostMeter::default();
        let mut total = 0.0;
        for batch in perm.chunks(config.batch_size) {
            let aux_params = model.amortizer.as_ref().unwrap_or_else(|| &proposal.as_ref().unwrap().net);
            let spec = BatchSpec { method, s: s_train, k: config.k, noise_var, sampler };
            let step = batch_objective(&spec, &model.decoder, aux_params, train_x, batch, &mut rng)?;
            total += step.value * batch.len() as f64;
            meter.add(step.meter);
            dec_adam.step(&mut model.decoder, &step.grad_decoder)?;
            match (&mut model.amortizer, &mut proposal) {
                (Some(a), _) => aux_adam.step(a, &step.grad_aux)?,
                (None, Some(p)) => aux_adam.step(&mut p.net, &step.grad_aux)?,
                _ => unreachable!(),
            }
        }
        let val = if epoch % config.val_every == 0 || epoch == config.epochs {
            let v = validation_bound(method, &model, proposal.as_ref(), train_x, val_x, s_train, config.seed)?;
            final_val = v;
            v
        } else {
            f64::NAN
        };
        history.push(HistoryRow {
            epoch,
            train_bound: total / n as f64,
            val_bound: val,
            wall_clock_s: start.elapsed().as_secs_f64(),
            decoder_passes: meter.decoder_passes,
            encoder_passes: meter.encoder_passes,
        });
    }
    if !final_val.is_finite() {
        return Err(Error::Training(format!("restart {restart} ended with non-finite validation bound")));
    }
    let trained = TrainedModel { method, model, proposal, s: config.s, k: config.k };
    Ok(Run { trained, history, final_val })
}

/// Mean validation bound used for restart selection. Empirical models are
/// scored by the exact empiricalized LML of validation points against the
/// training codes (the AE model by its own loss).
pub fn validation_bound(
    method: Method,
    model: &GenerativeModel,
    proposal: Option<&GaussianProposal>,
    train_x: &Array2<f64>,
    val_x: &Array2<f64>,
    s: usize,
    seed: u64,
) -> Result<f64> {
    if val_x.nrows() == 0 {
        return Err(Error::Config("validation split is empty".into()));
    }
    let v = match method {
        Method::Ae => ae_loss_batch(model, val_x, train_x.nrows())?,
        Method::Vae | Method::Iwae => {
            let mut rng = SeededRng::new(seed, VAL_STREAM);
            let p = proposal.ok_or_else(|| Error::Config("missing proposal".into()))?;
            iwae_batch(model, p, val_x, s, &mut rng, &mut CostMeter::default())?
        }
        _ => exact_lml_batch(model, train_x, val_x, &mut CostMeter::default())?,
    };
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    method: Method,
    s: usize,
    k: usize,
    noise_var: f64,
    prior: LatentPrior,
    decoder: MlpHeader,
    amortizer: Option<MlpHeader>,
    proposal: Option<MlpHeader>,
    params_file: String,
    provenance: Option<Provenance>,
}

pub const MODEL_JSON: &str = "model.json";
pub const MODEL_BIN: &str = "model.f64";

/// Writes `model.json` plus a flat parameter blob `model.f64` into `dir`.
pub fn save_model(trained: &TrainedModel, dir: &Path, provenance: Option<Provenance>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut blob = Vec::new();
    let mut place = |net: &MlpParams| {
        let h = MlpHeader::describe(net, blob.len());
        blob.extend(net.to_flat());
        h
    };
    let decoder = place(&trained.model.decoder);
    let amortizer = trained.model.amortizer.as_ref().map(&mut place);
    let proposal = trained.proposal.as_ref().map(|p| place(&p.net));
    let header = ModelHeader {
        method: trained.method,
        s: trained.s,
        k: trained.k,
        noise_var: trained.model.noise_var,
        prior: trained.model.prior,
        decoder,
        amortizer,
        proposal,
        params_file: MODEL_BIN.into(),
        provenance,
    };
    io::write_atomic(&dir.join(MODEL_BIN), &blob.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<_>>())?;
    io::write_json_atomic(&dir.join(MODEL_JSON), &header)
}

pub fn load_model(dir: &Path) -> Result<TrainedModel> {
    let header: ModelHeader = serde_json::from_slice(&std::fs::read(dir.join(MODEL_JSON))?)?;
    let blob = io::read_f64s(&dir.join(&header.params_file))?;
    let model = GenerativeModel {
        decoder: header.decoder.read_from(&blob)?,
        amortizer: header.amortizer.map(|h| h.read_from(&blob)).transpose()?,
        noise_var: header.noise_var,
        prior: header.prior,
    };
    model.validate()?;
    let proposal = header.proposal.map(|h| h.read_from(&blob).map(|net| GaussianProposal { net })).transpose()?;
    Ok(TrainedModel { method: header.method, model, proposal, s: header.s, k: header.k })
}
