//! Synthetic generators, surrogate ground-truth decoders and dataset splits.
//!
//! Each two-dimensional generator maps a standard-normal latent through a
//! closed-form curve. A 3 × 50 tanh network is fitted to that curve by full
//! supervision and the fitted network, not the closed form, produces the
//! observations, so the ground-truth decoder is exactly representable by the
//! model family being trained.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::math::{std_normal_cdf, Activation, AdamState, Graph, MlpParams, SeededRng};

// Stream ids carved out of a dataset seed.
const STREAM_LATENT: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_SURROGATE: u64 = 3;
const STREAM_SPLIT: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorName {
    Figure8,
    Circle,
    AbsValue,
    Clusters,
    SpiralDots,
    Intuition1dV1,
    Intuition1dV2,
}

impl GeneratorName {
    /// The five two-dimensional benchmark generators.
    pub const BENCHMARKS: [GeneratorName; 5] = [
        GeneratorName::Figure8,
        GeneratorName::Circle,
        GeneratorName::AbsValue,
        GeneratorName::Clusters,
        GeneratorName::SpiralDots,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GeneratorName::Figure8 => "figure8",
            GeneratorName::Circle => "circle",
            GeneratorName::AbsValue => "abs_value",
            GeneratorName::Clusters => "clusters",
            GeneratorName::SpiralDots => "spiral_dots",
            GeneratorName::Intuition1dV1 => "intuition1d_v1",
            GeneratorName::Intuition1dV2 => "intuition1d_v2",
        }
    }

    pub fn noise_var(self) -> f64 {
        match self {
            GeneratorName::Figure8 => 0.02,
            GeneratorName::Circle => 0.01,
            GeneratorName::AbsValue => 0.01,
            GeneratorName::Clusters => 0.2,
            GeneratorName::SpiralDots => 0.01,
            GeneratorName::Intuition1dV1 | GeneratorName::Intuition1dV2 => 0.0025,
        }
    }

    pub fn prior(self) -> PriorSpec {
        match self {
            GeneratorName::Intuition1dV1 | GeneratorName::Intuition1dV2 => PriorSpec::Uniform01,
            _ => PriorSpec::StandardNormal,
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            GeneratorName::Intuition1dV1 | GeneratorName::Intuition1dV2 => 1,
            _ => 2,
        }
    }

    pub fn uses_surrogate(self) -> bool {
        self.obs_dim() == 2
    }

    /// The closed-form noiseless curve `f(z)`.
    pub fn closed_form(self, z: f64) -> Vec<f64> {
        match self {
            GeneratorName::Figure8 => {
                let u = (0.6 + 1.8 * std_normal_cdf(z)) * PI;
                figure8_at(u).to_vec()
            }
            GeneratorName::Circle => {
                let a = 2.0 * PI * std_normal_cdf(z);
                vec![a.cos(), a.sin()]
            }
            GeneratorName::AbsValue => {
                let p = std_normal_cdf(z).abs();
                vec![p, p]
            }
            GeneratorName::Clusters => {
                let u = 2.0 * PI / (1.0 + (-0.5 * PI * z).exp());
                let fl = (u / 2.0).floor();
                let t = 2.0 * (10.0 * u - 20.0 * fl - 10.0).tanh() + 4.0 * fl + 2.0;
                vec![t.cos(), t.sin()]
            }
            GeneratorName::SpiralDots => {
                let u = 4.0 * PI / (1.0 + (-0.5 * PI * z).exp());
                let fl = (u / 2.0).floor();
                let t = (10.0 * u - 20.0 * fl - 10.0).tanh() + 2.0 * fl + 1.0;
                vec![t * t.cos(), t * t.sin()]
            }
            GeneratorName::Intuition1dV1 => vec![(0.5 - z) * (0.5 - z)],
            GeneratorName::Intuition1dV2 => vec![0.25 * z * z],
        }
    }
}

/// Figure-8 curve as a function of its angle parameter.
pub fn figure8_at(u: f64) -> [f64; 2] {
    let s = u.sin();
    let den = s * s + 1.0;
    [SQRT_2 / 2.0 * u.cos() / den, SQRT_2 * u.cos() * s / den]
}

impl fmt::Display for GeneratorName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GeneratorName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            GeneratorName::Figure8,
            GeneratorName::Circle,
            GeneratorName::AbsValue,
            GeneratorName::Clusters,
            GeneratorName::SpiralDots,
            GeneratorName::Intuition1dV1,
            GeneratorName::Intuition1dV2,
        ]
        .into_iter()
        .find(|g| g.as_str() == s)
        .ok_or_else(|| Error::Config(format!("unknown dataset `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSpec {
    StandardNormal,
    Uniform01,
}

impl PriorSpec {
    pub fn sample(self, rng: &mut SeededRng) -> f64 {
        match self {
            PriorSpec::StandardNormal => rng.normal(),
            PriorSpec::Uniform01 => rng.uniform(),
        }
    }

    pub fn log_density(self, z: f64) -> f64 {
        match self {
            PriorSpec::StandardNormal => crate::math::gaussian_logpdf(z, 0.0, 1.0),
            PriorSpec::Uniform01 => {
                if (0.0..=1.0).contains(&z) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }
}

/// Supervised surrogate fit budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateFitConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    /// Learning rate reached at `max_steps` under exponential decay.
    pub final_lr: f64,
    pub max_steps: usize,
    pub batch_size: usize,
    pub train_points: usize,
    pub gate_points: usize,
    pub mse_gate: f64,
    pub check_every: usize,
}

impl Default for SurrogateFitConfig {
    fn default() -> Self {
        Self {
            hidden: vec![50, 50, 50],
            lr: 1e-3,
            final_lr: 1e-4,
            max_steps: 20_000,
            batch_size: 1024,
            train_points: 20_000,
            gate_points: 10_000,
            mse_gate: 1e-4,
            check_every: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GtDecoder {
    Surrogate(MlpParams),
    ClosedForm(GeneratorName),
}

/// The data-generating model: decoder, prior and noise level.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthModel {
    pub name: GeneratorName,
    pub decoder: GtDecoder,
    pub prior: PriorSpec,
    pub noise_var: f64,
    /// Gate MSE achieved by the surrogate fit (0 for closed forms).
    pub fit_mse: f64,
}

impl GroundTruthModel {
    /// Noiseless decoder outputs for a column of latents.
    pub fn decode(&self, z: &[f64]) -> Array2<f64> {
        match &self.decoder {
            GtDecoder::Surrogate(net) => {
                let zc = Array2::from_shape_vec((z.len(), 1), z.to_vec()).unwrap();
                net.forward_batch(&zc).expect("surrogate takes a scalar latent")
            }
            GtDecoder::ClosedForm(g) => {
                let d = g.obs_dim();
                let flat: Vec<f64> = z.iter().flat_map(|&zi| g.closed_form(zi)).collect();
                Array2::from_shape_vec((z.len(), d), flat).unwrap()
            }
        }
    }

    pub fn surrogate(&self) -> Option<&MlpParams> {
        match &self.decoder {
            GtDecoder::Surrogate(net) => Some(net),
            GtDecoder::ClosedForm(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: GeneratorName,
    pub seed: u64,
    pub noise_var: f64,
    /// `N × D` observations.
    pub x: Array2<f64>,
    pub z_gt: Vec<f64>,
    /// `N × D` noise draws, `x = f(z_gt) + eps_gt`.
    pub eps_gt: Array2<f64>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn split_sizes(&self) -> [usize; 3] {
        [Split::Train, Split::Val, Split::Test].map(|s| self.splits.iter().filter(|&&t| t == s).count())
    }

    /// Rows of a split, in ascending original index order.
    pub fn subset(&self, split: Split) -> Dataset {
        self.select(&self.indices(split), split)
    }

    pub fn select(&self, idx: &[usize], tag: Split) -> Dataset {
        Dataset {
            name: self.name,
            seed: self.seed,
            noise_var: self.noise_var,
            x: self.x.select(Axis(0), idx),
            z_gt: idx.iter().map(|&i| self.z_gt[i]).collect(),
            eps_gt: self.eps_gt.select(Axis(0), idx),
            splits: vec![tag; idx.len()],
        }
    }

    /// Hex digest of the observations, identifying tables computed from them.
    pub fn fingerprint(&self) -> String {
        fingerprint(&self.x)
    }
}

pub fn fingerprint(x: &Array2<f64>) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update((x.nrows() as u64).to_le_bytes());
    h.update((x.ncols() as u64).to_le_bytes());
    for v in x.iter() {
        h.update(v.to_le_bytes());
    }
    let d = h.finalize();
    d.iter().take(16).map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Default)]
pub struct GenerateOptions {
    pub surrogate: SurrogateFitConfig,
    /// Directory for cached surrogate decoders; no caching when `None`.
    pub cache_dir: Option<PathBuf>,
}

/// Draws `n` points from a generator. Every row starts tagged as train.
pub fn generate(name: GeneratorName, n: usize, seed: u64, opts: &GenerateOptions) -> Result<(Dataset, GroundTruthModel)> {
    if n < 10 {
        return Err(Error::Config(format!("need at least 10 points, got {n}")));
    }
    let gt = ground_truth_model(name, seed, opts)?;
    let prior = name.prior();
    let mut zr = SeededRng::new(seed, STREAM_LATENT);
    let z_gt: Vec<f64> = (0..n).map(|_| prior.sample(&mut zr)).collect();
    let clean = gt.decode(&z_gt);
    let mut er = SeededRng::new(seed, STREAM_NOISE);
    let sd = gt.noise_var.sqrt();
    let eps_gt = Array2::from_shape_fn(clean.raw_dim(), |_| sd * er.normal());
    let x = &clean + &eps_gt;
    let ds = Dataset { name, seed, noise_var: gt.noise_var, x, z_gt, eps_gt, splits: vec![Split::Train; n] };
    Ok((ds, gt))
}

/// Fits (or loads from cache) the ground-truth decoder for a generator.
pub fn ground_truth_model(name: GeneratorName, seed: u64, opts: &GenerateOptions) -> Result<GroundTruthModel> {
    if !name.uses_surrogate() {
        return Ok(GroundTruthModel {
            name,
            decoder: GtDecoder::ClosedForm(name),
            prior: name.prior(),
            noise_var: name.noise_var(),
            fit_mse: 0.0,
        });
    }
    if let Some(dir) = &opts.cache_dir {
        if let Some((net, mse)) = load_cached_surrogate(dir, name, seed, &opts.surrogate)? {
            return Ok(GroundTruthModel { name, decoder: GtDecoder::Surrogate(net), prior: name.prior(), noise_var: name.noise_var(), fit_mse: mse });
        }
    }
    let (net, mse) = fit_surrogate(name, seed, &opts.surrogate)?;
    if let Some(dir) = &opts.cache_dir {
        store_cached_surrogate(dir, name, seed, &opts.surrogate, &net, mse)?;
    }
    Ok(GroundTruthModel { name, decoder: GtDecoder::Surrogate(net), prior: name.prior(), noise_var: name.noise_var(), fit_mse: mse })
}

fn closed_form_batch(name: GeneratorName, z: &[f64]) -> Array2<f64> {
    let flat: Vec<f64> = z.iter().flat_map(|&zi| name.closed_form(zi)).collect();
    Array2::from_shape_vec((z.len(), name.obs_dim()), flat).unwrap()
}

fn mse(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).mapv(|v| v * v).mean().unwrap()
}

/// Supervised fit of an MLP to the closed-form curve, gated on MSE over
/// fresh prior draws.
pub fn fit_surrogate(name: GeneratorName, seed: u64, cfg: &SurrogateFitConfig) -> Result<(MlpParams, f64)> {
    let mut rng = SeededRng::new(seed, STREAM_SURROGATE);
    let prior = name.prior();
    let z_train: Vec<f64> = (0..cfg.train_points).map(|_| prior.sample(&mut rng)).collect();
    let y_train = closed_form_batch(name, &z_train);
    let z_gate: Vec<f64> = (0..cfg.gate_points).map(|_| prior.sample(&mut rng)).collect();
    let y_gate = closed_form_batch(name, &z_gate);
    let zg = Array2::from_shape_vec((z_gate.len(), 1), z_gate).unwrap();

    let mut dims = vec![1];
    dims.extend(&cfg.hidden);
    dims.push(name.obs_dim());
    let mut net = MlpParams::init(&dims, Activation::Tanh, &mut rng);
    let mut adam = AdamState::for_params(&net, cfg.lr);
    let zt = Array2::from_shape_vec((z_train.len(), 1), z_train).unwrap();

    let mut best = (net.clone(), f64::INFINITY);
    let mut order = rng.permutation(cfg.train_points);
    let mut cursor = 0;
    for step in 1..=cfg.max_steps {
        if cursor + cfg.batch_size > order.len() {
            order = rng.permutation(cfg.train_points);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + cfg.batch_size];
        cursor += cfg.batch_size;
        let mut g = Graph::new();
        let vars = g.mlp(&net, true);
        let xb = g.constant(zt.select(Axis(0), idx));
        let yb = g.constant(y_train.select(Axis(0), idx));
        let out = g.mlp_forward(&vars, xb);
        let diff = g.sub(out, yb);
        let sq = g.square(diff);
        let loss = g.mean(sq);
        let grads = g.backward(loss)?;
        let gnet = grads.mlp(&vars, &net);
        adam.lr = cfg.lr * (cfg.final_lr / cfg.lr).powf(step as f64 / cfg.max_steps as f64);
        adam.step(&mut net, &gnet)?;

        if step % cfg.check_every == 0 || step == cfg.max_steps {
            let gate = mse(&net.forward_batch(&zg)?, &y_gate);
            if gate < best.1 {
                best = (net.clone(), gate);
            }
            if gate < cfg.mse_gate {
                return Ok((net, gate));
            }
        }
    }
    Err(Error::FitFailure { name: name.to_string(), mse: best.1, steps: cfg.max_steps })
}

fn surrogate_stem(dir: &Path, name: GeneratorName, seed: u64) -> PathBuf {
    dir.join(format!("surrogate_{name}_seed{seed}"))
}

#[derive(Serialize, Deserialize)]
struct SurrogateHeader {
    generator: GeneratorName,
    seed: u64,
    fit: SurrogateFitConfig,
    gate_mse: f64,
    network: io::MlpHeader,
}

fn load_cached_surrogate(dir: &Path, name: GeneratorName, seed: u64, cfg: &SurrogateFitConfig) -> Result<Option<(MlpParams, f64)>> {
    let stem = surrogate_stem(dir, name, seed);
    let header_path = stem.with_extension("json");
    if !header_path.exists() {
        return Ok(None);
    }
    let header: SurrogateHeader = serde_json::from_slice(&std::fs::read(&header_path)?)?;
    if &header.fit != cfg || header.generator != name || header.seed != seed {
        return Ok(None);
    }
    let net = header.network.load(&stem.with_extension("bin"))?;
    Ok(Some((net, header.gate_mse)))
}

fn store_cached_surrogate(dir: &Path, name: GeneratorName, seed: u64, cfg: &SurrogateFitConfig, net: &MlpParams, mse: f64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let stem = surrogate_stem(dir, name, seed);
    let bin = stem.with_extension("bin");
    let network = io::MlpHeader::store(net, &bin)?;
    let header = SurrogateHeader { generator: name, seed, fit: cfg.clone(), gate_mse: mse, network };
    io::write_json_atomic(&stem.with_extension("json"), &header)
}

/// Tags rows train/val/test by a seeded shuffle. Sizes are
/// `round(f_train·N)`, `round(f_val·N)` and the remainder.
pub fn split(mut dataset: Dataset, fractions: [f64; 3], seed: u64) -> Result<Dataset> {
    if fractions.iter().any(|&f| !(f >= 0.0)) {
        return Err(Error::Config(format!("split fractions must be non-negative, got {fractions:?}")));
    }
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions must sum to 1, got {fractions:?}")));
    }
    let n = dataset.len();
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let perm = SeededRng::new(seed, STREAM_SPLIT).permutation(n);
    for (rank, &i) in perm.iter().enumerate() {
        dataset.splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(dataset)
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    name: GeneratorName,
    n: usize,
    d: usize,
    noise_var: f64,
    seed: u64,
    split_sizes: [usize; 3],
    files: DatasetFiles,
    provenance: Option<io::Provenance>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFiles {
    x: String,
    z_gt: String,
    eps_gt: String,
    splits: String,
}

const SPLIT_CODES: [Split; 3] = [Split::Train, Split::Val, Split::Test];

/// Writes `dataset.json` plus little-endian f64 arrays into `dir`.
pub fn save_dataset(dataset: &Dataset, dir: &Path, provenance: Option<io::Provenance>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let files = DatasetFiles { x: "x.f64".into(), z_gt: "z_gt.f64".into(), eps_gt: "eps_gt.f64".into(), splits: "splits.u8".into() };
    io::write_f64s(&dir.join(&files.x), dataset.x.iter().copied())?;
    io::write_f64s(&dir.join(&files.z_gt), dataset.z_gt.iter().copied())?;
    io::write_f64s(&dir.join(&files.eps_gt), dataset.eps_gt.iter().copied())?;
    let codes: Vec<u8> = dataset.splits.iter().map(|s| SPLIT_CODES.iter().position(|c| c == s).unwrap() as u8).collect();
    std::fs::write(dir.join(&files.splits), codes)?;
    let meta = DatasetMeta {
        name: dataset.name,
        n: dataset.len(),
        d: dataset.dim(),
        noise_var: dataset.noise_var,
        seed: dataset.seed,
        split_sizes: dataset.split_sizes(),
        files,
        provenance,
    };
    io::write_json_atomic(&dir.join("dataset.json"), &meta)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("dataset.json");
    let meta: DatasetMeta = serde_json::from_slice(&std::fs::read(&meta_path)?)?;
    let bad = |reason: String| Error::Format { path: meta_path.clone(), reason };
    let x = io::read_f64s(&dir.join(&meta.files.x))?;
    let z_gt = io::read_f64s(&dir.join(&meta.files.z_gt))?;
    let eps = io::read_f64s(&dir.join(&meta.files.eps_gt))?;
    let codes = std::fs::read(dir.join(&meta.files.splits))?;
    if x.len() != meta.n * meta.d || eps.len() != x.len() || z_gt.len() != meta.n || codes.len() != meta.n {
        return Err(bad("array lengths disagree with header".into()));
    }
    let splits = codes
        .iter()
        .map(|&c| SPLIT_CODES.get(c as usize).copied().ok_or_else(|| bad(format!("bad split code {c}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        name: meta.name,
        seed: meta.seed,
        noise_var: meta.noise_var,
        x: Array2::from_shape_vec((meta.n, meta.d), x).unwrap(),
        z_gt,
        eps_gt: Array2::from_shape_vec((meta.n, meta.d), eps).unwrap(),
        splits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms_at_zero() {
        let a = GeneratorName::AbsValue.closed_form(0.0);
        assert_eq!(a, vec![0.5, 0.5]);
        let c = GeneratorName::Circle.closed_form(0.0);
        assert!((c[0] + 1.0).abs() < 1e-15 && c[1].abs() < 1e-15);
        // u(z) = π when Φ(z) = 2/9
        let z = crate::math::std_normal_inv_cdf(2.0 / 9.0).unwrap();
        let f = GeneratorName::Figure8.closed_form(z);
        assert!((f[0] + SQRT_2 / 2.0).abs() < 1e-9, "{f:?}");
        assert!(f[1].abs() < 1e-9);
        let exact = figure8_at(PI);
        assert!((exact[0] + SQRT_2 / 2.0).abs() < 1e-15 && exact[1].abs() < 1e-15);
    }

    #[test]
    fn floor_pieces_join_continuously() {
        // t(u) is continuous at u = 2, 4 up to tanh saturation (1 - tanh 10 ≈ 4e-9).
        for name in [GeneratorName::Clusters, GeneratorName::SpiralDots] {
            let scale = if name == GeneratorName::Clusters { 2.0 * PI } else { 4.0 * PI };
            for &u in &[2.0, 4.0] {
                let z_of_u = |u: f64| -(scale / u - 1.0).ln() / (0.5 * PI);
                let a = name.closed_form(z_of_u(u - 1e-9));
                let b = name.closed_form(z_of_u(u + 1e-9));
                assert!((a[0] - b[0]).abs() < 1e-6 && (a[1] - b[1]).abs() < 1e-6, "{name} at u={u}");
            }
        }
    }

    #[test]
    fn noise_levels() {
        assert_eq!(GeneratorName::Figure8.noise_var(), 0.02);
        assert_eq!(GeneratorName::Circle.noise_var(), 0.01);
        assert_eq!(GeneratorName::AbsValue.noise_var(), 0.01);
        assert_eq!(GeneratorName::Clusters.noise_var(), 0.2);
        assert_eq!(GeneratorName::SpiralDots.noise_var(), 0.01);
    }

    #[test]
    fn names_round_trip_and_reject_unknown() {
        for g in GeneratorName::BENCHMARKS {
            assert_eq!(g.as_str().parse::<GeneratorName>().unwrap(), g);
        }
        assert!("moons".parse::<GeneratorName>().is_err());
    }

    fn intuition(n: usize, seed: u64, name: GeneratorName) -> Dataset {
        generate(name, n, seed, &GenerateOptions::default()).unwrap().0
    }

    #[test]
    fn intuition_variants_share_a_marginal() {
        let a = intuition(5000, 1, GeneratorName::Intuition1dV1);
        let b = intuition(5000, 2, GeneratorName::Intuition1dV2);
        let ks = crate::math::stats::ks_two_sample(a.x.column(0).as_slice().unwrap(), b.x.column(0).as_slice().unwrap());
        assert!(ks <= 0.05, "KS {ks}");
    }

    #[test]
    fn observations_decompose_into_decoder_plus_noise() {
        let (ds, gt) = generate(GeneratorName::Intuition1dV1, 200, 5, &GenerateOptions::default()).unwrap();
        let clean = gt.decode(&ds.z_gt);
        let resid = &ds.x - &ds.eps_gt - &clean;
        assert!(resid.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn too_few_points_rejected() {
        assert!(matches!(
            generate(GeneratorName::Intuition1dV1, 9, 0, &GenerateOptions::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn split_sizes_and_replay() {
        let ds = intuition(1000, 3, GeneratorName::Intuition1dV2);
        let all_train = split(ds.clone(), [1.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(all_train.split_sizes(), [1000, 0, 0]);
        let a = split(ds.clone(), [0.8, 0.1, 0.1], 9).unwrap();
        assert_eq!(a.split_sizes(), [800, 100, 100]);
        let b = split(ds.clone(), [0.8, 0.1, 0.1], 9).unwrap();
        assert_eq!(a.splits, b.splits);
        assert!(split(ds.clone(), [1.2, -0.1, -0.1], 0).is_err());
        assert!(split(ds, [0.5, 0.1, 0.1], 0).is_err());
    }

    #[test]
    fn dataset_files_round_trip() {
        let ds = split(intuition(50, 4, GeneratorName::Intuition1dV1), [0.6, 0.2, 0.2], 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path(), None).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), ds);
    }
}
