//! Model-agnostic posterior approximation over latent-code indices.
//!
//! Row `n` of a [`MapaTable`] is a categorical distribution over the `N`
//! training indices, `q(i | n) ∝ κ(x_n | x_i)`, built from observations
//! alone. The same container also holds the ground-truth empiricalized
//! posterior (decoder likelihoods of the true latents) and the uniform
//! ablation, so every consumer treats the three interchangeably.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{fingerprint, Dataset, GroundTruthModel};
use crate::error::{Error, Result};
use crate::io;
use crate::math::special::log_sum_exp_unchecked;
use crate::math::SeededRng;

pub const DEFAULT_RHO: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kernel", rename_all = "snake_case")]
pub enum NoiseKernel {
    GaussianRbf { noise_var: f64 },
    SoftenedBernoulli { rho: f64 },
}

impl NoiseKernel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseKernel::GaussianRbf { noise_var } if !(noise_var > 0.0) => {
                Err(Error::Config(format!("RBF bandwidth must be positive, got {noise_var}")))
            }
            NoiseKernel::SoftenedBernoulli { rho } if !(rho > 0.0 && rho < 1.0) => {
                Err(Error::Config(format!("rho must lie in (0, 1), got {rho}")))
            }
            _ => Ok(()),
        }
    }
}

/// Where a table's rows came from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum TableSource {
    Mapa { kernel: NoiseKernel },
    GroundTruth { noise_var: f64 },
    Naive,
}

impl TableSource {
    /// Short tag used in cache keys and file names.
    pub fn tag(&self) -> String {
        match self {
            TableSource::Mapa { kernel: NoiseKernel::GaussianRbf { noise_var } } => format!("rbf{noise_var}"),
            TableSource::Mapa { kernel: NoiseKernel::SoftenedBernoulli { rho } } => format!("bern{rho}"),
            TableSource::GroundTruth { noise_var } => format!("gt{noise_var}"),
            TableSource::Naive => "naive".into(),
        }
    }
}

/// Row-stochastic `N × N` table with each row's indices sorted by
/// non-increasing probability (ties by ascending index).
#[derive(Clone, Debug, PartialEq)]
pub struct MapaTable {
    n: usize,
    probs: Vec<f64>,
    order: Vec<u32>,
    source: TableSource,
    fingerprint: String,
}

impl MapaTable {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn source(&self) -> TableSource {
        self.source
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.probs[n * self.n..(n + 1) * self.n]
    }

    /// Row indices in non-increasing probability order.
    pub fn order(&self, n: usize) -> &[u32] {
        &self.order[n * self.n..(n + 1) * self.n]
    }

    pub fn prob(&self, n: usize, i: usize) -> f64 {
        self.probs[n * self.n + i]
    }

    /// `B_n(k)`: the `k` most probable indices of row `n`.
    pub fn top_k(&self, n: usize, k: usize) -> Result<Vec<usize>> {
        if k == 0 || k > self.n {
            return Err(Error::Config(format!("top-k needs 1 <= k <= {}, got {k}", self.n)));
        }
        Ok(self.order(n)[..k].iter().map(|&i| i as usize).collect())
    }

    /// Raw bytes of the probability matrix, for byte-identity checks.
    pub fn probs_bytes(&self) -> Vec<u8> {
        self.probs.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn cache_key(&self) -> String {
        cache_key(&self.fingerprint, &self.source)
    }

    /// Builds a table from per-row unnormalised log-weights.
    fn from_log_weights<F>(n: usize, source: TableSource, fingerprint: String, log_row: F) -> Result<Self>
    where
        F: Fn(usize, &mut [f64]) + Sync,
    {
        if n == 0 {
            return Err(Error::Config("table needs at least one point".into()));
        }
        let mut probs = vec![0.0; n * n];
        let mut order = vec![0u32; n * n];
        probs
            .par_chunks_mut(n)
            .zip(order.par_chunks_mut(n))
            .enumerate()
            .try_for_each(|(r, (prow, orow))| {
                log_row(r, prow);
                let lse = log_sum_exp_unchecked(prow);
                if !lse.is_finite() {
                    return Err(Error::DegenerateRow(r));
                }
                for v in prow.iter_mut() {
                    *v = (*v - lse).exp();
                }
                for (j, o) in orow.iter_mut().enumerate() {
                    *o = j as u32;
                }
                orow.sort_by(|&a, &b| prow[b as usize].total_cmp(&prow[a as usize]).then(a.cmp(&b)));
                Ok(())
            })?;
        Ok(Self { n, probs, order, source, fingerprint })
    }
}

pub fn cache_key(fingerprint: &str, source: &TableSource) -> String {
    format!("{fingerprint}_{}", source.tag())
}

/// Softened Bernoulli proximity `Π_d (ρ x_i) x_n + (1 − ρ x_i)(1 − x_n)`.
pub fn softened_bernoulli_kappa(x_n: &[f64], x_i: &[f64], rho: f64) -> Result<f64> {
    if x_n.len() != x_i.len() {
        return Err(Error::Dimension { expected: x_n.len(), got: x_i.len() });
    }
    let mut k = 1.0;
    for (&a, &b) in x_n.iter().zip(x_i) {
        if !(a == 0.0 || a == 1.0) || !(b == 0.0 || b == 1.0) {
            return Err(Error::Domain(format!("softened Bernoulli kernel needs binary entries, got {a}, {b}")));
        }
        k *= rho * b * a + (1.0 - rho * b) * (1.0 - a);
    }
    Ok(k)
}

/// `q(i | n) = κ(x_n | x_i) / Σ_j κ(x_n | x_j)`, computed in log space.
pub fn compute_table(x: &Array2<f64>, kernel: NoiseKernel) -> Result<MapaTable> {
    kernel.validate()?;
    let n = x.nrows();
    if n < 2 {
        return Err(Error::Config(format!("table needs at least 2 points, got {n}")));
    }
    if let NoiseKernel::SoftenedBernoulli { .. } = kernel {
        if x.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Domain("softened Bernoulli kernel needs binary observations".into()));
        }
    }
    let xs = x.as_standard_layout();
    let d = x.ncols();
    let flat = xs.as_slice().unwrap();
    MapaTable::from_log_weights(n, TableSource::Mapa { kernel }, fingerprint(x), |r, out| {
        let xn = &flat[r * d..(r + 1) * d];
        for (i, o) in out.iter_mut().enumerate() {
            *o = log_kernel(xn, &flat[i * d..(i + 1) * d], kernel);
        }
    })
}

/// `log κ(x_n | x_i)` up to a constant shared by all `i`.
fn log_kernel(xn: &[f64], xi: &[f64], kernel: NoiseKernel) -> f64 {
    match kernel {
        NoiseKernel::GaussianRbf { noise_var } => {
            -0.5 * xn.iter().zip(xi).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / noise_var
        }
        NoiseKernel::SoftenedBernoulli { rho } => {
            xn.iter().zip(xi).map(|(&a, &b)| (rho * b * a + (1.0 - rho * b) * (1.0 - a)).ln()).sum()
        }
    }
}

fn normalize_log(mut v: Vec<f64>) -> Vec<f64> {
    let lse = log_sum_exp_unchecked(&v);
    v.iter_mut().for_each(|x| *x -= lse);
    v
}

/// `log q(· | n)` without underflow, for rank statistics on far tails.
pub fn log_row(x: &Array2<f64>, n: usize, kernel: NoiseKernel) -> Vec<f64> {
    let xn = x.row(n).to_vec();
    normalize_log(x.rows().into_iter().map(|xi| log_kernel(&xn, &xi.to_vec(), kernel)).collect())
}

/// Log of row `n` of a likelihood table: `log N(x_n; means_i, σ² I)` normalised over `i`.
pub fn likelihood_log_row(x: &Array2<f64>, means: &Array2<f64>, n: usize, noise_var: f64) -> Vec<f64> {
    let xn = x.row(n).to_vec();
    let k = NoiseKernel::GaussianRbf { noise_var };
    normalize_log(means.rows().into_iter().map(|mi| log_kernel(&xn, &mi.to_vec(), k)).collect())
}

/// True posterior over indices of the empiricalized ground-truth model:
/// row `n` ∝ `N(x_n; f_GT(z_i^GT), σ² I)`.
pub fn ground_truth_table(dataset: &Dataset, gt: &GroundTruthModel) -> Result<MapaTable> {
    let means = gt.decode(&dataset.z_gt);
    likelihood_table(&dataset.x, &means, gt.noise_var)
}

/// Row `n` ∝ `N(x_n; means_i, σ² I)`; the normalising constant cancels.
pub fn likelihood_table(x: &Array2<f64>, means: &Array2<f64>, noise_var: f64) -> Result<MapaTable> {
    let n = x.nrows();
    if means.dim() != x.dim() {
        return Err(Error::Dimension { expected: n, got: means.nrows() });
    }
    let d = x.ncols();
    let xs = x.as_standard_layout();
    let ms = means.as_standard_layout();
    let (xf, mf) = (xs.as_slice().unwrap(), ms.as_slice().unwrap());
    MapaTable::from_log_weights(n, TableSource::GroundTruth { noise_var }, fingerprint(x), |r, out| {
        let xn = &xf[r * d..(r + 1) * d];
        for (i, o) in out.iter_mut().enumerate() {
            let mi = &mf[i * d..(i + 1) * d];
            *o = -0.5 * xn.iter().zip(mi).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / noise_var;
        }
    })
}

/// Uniform rows, `q(i | n) = 1/N`.
pub fn naive_table(n: usize) -> Result<MapaTable> {
    if n == 0 {
        return Err(Error::Config("naive table needs N >= 1".into()));
    }
    let p = 1.0 / n as f64;
    let order: Vec<u32> = (0..n).flat_map(|_| 0..n as u32).collect();
    Ok(MapaTable { n, probs: vec![p; n * n], order, source: TableSource::Naive, fingerprint: format!("uniform{n}") })
}

/// Row `n` with its `k` most probable entries zeroed and the rest
/// renormalised.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedProposal {
    pub row: usize,
    pub k: usize,
    pub probs: Vec<f64>,
}

pub fn truncate_renormalize(table: &MapaTable, n: usize, k: usize) -> Result<TruncatedProposal> {
    if k > table.len() {
        return Err(Error::Config(format!("k = {k} exceeds N = {}", table.len())));
    }
    let mut probs = table.row(n).to_vec();
    for &i in &table.order(n)[..k] {
        probs[i as usize] = 0.0;
    }
    let mass: f64 = probs.iter().sum();
    if mass > 0.0 {
        probs.iter_mut().for_each(|p| *p /= mass);
    }
    Ok(TruncatedProposal { row: n, k, probs })
}

impl TruncatedProposal {
    pub fn has_support(&self) -> bool {
        self.probs.iter().any(|&p| p > 0.0)
    }

    /// `s` i.i.d. index draws by inverse-CDF lookup.
    pub fn sample(&self, s: usize, rng: &mut SeededRng) -> Result<Vec<usize>> {
        if s == 0 {
            return Ok(Vec::new());
        }
        if !self.has_support() {
            return Err(Error::EmptySupport { k: self.k, n: self.probs.len() });
        }
        let last = self.probs.iter().rposition(|&p| p > 0.0).unwrap();
        Ok((0..s)
            .map(|_| {
                let u = rng.uniform();
                let mut acc = 0.0;
                for (i, &p) in self.probs.iter().enumerate() {
                    acc += p;
                    if u < acc && p > 0.0 {
                        return i;
                    }
                }
                last
            })
            .collect())
    }
}

/// Per-row suffix sums in sorted order, so tail draws for any `k` cost a
/// binary search.
pub struct ProposalSampler<'a> {
    table: &'a MapaTable,
    suffix: Vec<f64>,
}

impl<'a> ProposalSampler<'a> {
    pub fn new(table: &'a MapaTable) -> Self {
        let n = table.len();
        let mut suffix = vec![0.0; n * (n + 1)];
        suffix.par_chunks_mut(n + 1).enumerate().for_each(|(r, suf)| {
            let row = table.row(r);
            let order = table.order(r);
            for j in (0..n).rev() {
                suf[j] = suf[j + 1] + row[order[j] as usize];
            }
        });
        Self { table, suffix }
    }

    pub fn table(&self) -> &MapaTable {
        self.table
    }

    /// Probability mass outside `B_n(k)`.
    pub fn tail_mass(&self, n: usize, k: usize) -> f64 {
        self.suffix[n * (self.table.len() + 1) + k]
    }

    /// `log q̃_k(i | n)` for an index outside `B_n(k)`.
    pub fn log_q_tilde(&self, n: usize, k: usize, i: usize) -> f64 {
        self.table.prob(n, i).ln() - self.tail_mass(n, k).ln()
    }

    /// One draw from the truncated, renormalised row; `None` when the tail
    /// carries no representable mass.
    pub fn sample(&self, n: usize, k: usize, rng: &mut SeededRng) -> Option<usize> {
        let len = self.table.len();
        if k >= len {
            return None;
        }
        let suf = &self.suffix[n * (len + 1)..(n + 1) * (len + 1)];
        let tail = suf[k];
        if !(tail > 0.0) {
            return None;
        }
        let threshold = tail - rng.uniform() * tail;
        // first m in (k, len] with suf[m] < threshold; the draw is m - 1
        let m = k + 1 + suf[k + 1..].partition_point(|&v| v >= threshold);
        let j = (m - 1).min(len - 1);
        Some(self.table.order(n)[j] as usize)
    }
}

#[derive(Serialize, Deserialize)]
struct TableHeader {
    n: usize,
    source: TableSource,
    fingerprint: String,
    probs_file: String,
    order_file: String,
    provenance: Option<io::Provenance>,
}

pub fn table_paths(dir: &Path, key: &str) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("table_{key}.json")),
        dir.join(format!("table_{key}.probs.f64")),
        dir.join(format!("table_{key}.order.u32")),
    )
}

/// Writes JSON header, f64 probability matrix and u32 order matrix.
pub fn save_table(table: &MapaTable, dir: &Path, provenance: Option<io::Provenance>) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let (header_path, probs_path, order_path) = table_paths(dir, &table.cache_key());
    io::write_f64s(&probs_path, table.probs.iter().copied())?;
    io::write_u32s(&order_path, table.order.iter().copied())?;
    let header = TableHeader {
        n: table.n,
        source: table.source,
        fingerprint: table.fingerprint.clone(),
        probs_file: probs_path.file_name().unwrap().to_string_lossy().into(),
        order_file: order_path.file_name().unwrap().to_string_lossy().into(),
        provenance,
    };
    io::write_json_atomic(&header_path, &header)?;
    Ok(header_path)
}

pub fn load_table(header_path: &Path) -> Result<MapaTable> {
    let header: TableHeader = serde_json::from_slice(&std::fs::read(header_path)?)?;
    let dir = header_path.parent().unwrap_or(Path::new("."));
    let probs = io::read_f64s(&dir.join(&header.probs_file))?;
    let order = io::read_u32s(&dir.join(&header.order_file))?;
    if probs.len() != header.n * header.n || order.len() != probs.len() {
        return Err(Error::Format { path: header_path.into(), reason: "matrix sizes disagree with N".into() });
    }
    Ok(MapaTable { n: header.n, probs, order, source: header.source, fingerprint: header.fingerprint })
}

/// Loads a cached RBF table for `x` if present, otherwise computes and
/// stores it.
pub fn cached_table(x: &Array2<f64>, kernel: NoiseKernel, dir: Option<&Path>) -> Result<MapaTable> {
    let Some(dir) = dir else { return compute_table(x, kernel) };
    let key = cache_key(&fingerprint(x), &TableSource::Mapa { kernel });
    let (header, _, _) = table_paths(dir, &key);
    if header.exists() {
        if let Ok(t) = load_table(&header) {
            return Ok(t);
        }
    }
    let t = compute_table(x, kernel)?;
    save_table(&t, dir, None)?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn rbf(v: f64) -> NoiseKernel {
        NoiseKernel::GaussianRbf { noise_var: v }
    }

    #[test]
    fn identical_points_split_evenly() {
        let t = compute_table(&array![[0.3, 1.0], [0.3, 1.0]], rbf(0.7)).unwrap();
        for r in 0..2 {
            assert_eq!(t.row(r), &[0.5, 0.5]);
        }
    }

    #[test]
    fn one_dimensional_rows_match_direct_formula() {
        let t = compute_table(&array![[0.0], [1.0], [10.0]], rbf(1.0)).unwrap();
        let w = [1.0, (-0.5f64).exp(), (-50.0f64).exp()];
        let z: f64 = w.iter().sum();
        for i in 0..3 {
            assert!((t.row(0)[i] - w[i] / z).abs() < 1e-15);
        }
        assert_eq!(t.order(0), &[0, 1, 2]);
    }

    #[test]
    fn rows_are_stochastic() {
        let mut rng = SeededRng::new(8, 0);
        let x = Array2::from_shape_fn((40, 2), |_| rng.normal());
        let t = compute_table(&x, rbf(0.05)).unwrap();
        for r in 0..40 {
            assert!((t.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-10);
            assert!(t.row(r).iter().all(|&p| p >= 0.0));
            let o = t.order(r);
            assert!(o.windows(2).all(|w| t.prob(r, w[0] as usize) >= t.prob(r, w[1] as usize)));
        }
    }

    #[test]
    fn full_gaussian_density_gives_same_rows() {
        // Normalised kernel N(x_n; x_i, σ²I) versus the unnormalised RBF.
        let mut rng = SeededRng::new(2, 0);
        let x = Array2::from_shape_fn((25, 2), |_| rng.normal());
        let t = compute_table(&x, rbf(0.3)).unwrap();
        for n in 0..25 {
            let logs: Vec<f64> = (0..25)
                .map(|i| {
                    crate::math::gaussian_logpdf_iso(x.row(n).as_slice().unwrap(), x.row(i).as_slice().unwrap(), 0.3)
                })
                .collect();
            let lse = crate::math::log_sum_exp(&logs).unwrap();
            for i in 0..25 {
                assert!((t.prob(n, i) - (logs[i] - lse).exp()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn permuting_points_permutes_the_table() {
        let mut rng = SeededRng::new(5, 0);
        let x = Array2::from_shape_fn((12, 2), |_| rng.normal());
        let perm = rng.permutation(12);
        let xp = x.select(ndarray::Axis(0), &perm);
        let (t, tp) = (compute_table(&x, rbf(0.2)).unwrap(), compute_table(&xp, rbf(0.2)).unwrap());
        for a in 0..12 {
            for b in 0..12 {
                assert!((tp.prob(a, b) - t.prob(perm[a], perm[b])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn bernoulli_kernel_values() {
        assert!((softened_bernoulli_kappa(&[1.0; 3], &[1.0; 3], 0.9).unwrap() - 0.729).abs() < 1e-15);
        assert_eq!(softened_bernoulli_kappa(&[0.0; 3], &[0.0; 3], 0.9).unwrap(), 1.0);
        let near_hard = softened_bernoulli_kappa(&[1.0, 0.0], &[1.0, 1.0], 1.0 - 1e-12).unwrap();
        assert!(near_hard < 1e-11);
        assert!(softened_bernoulli_kappa(&[0.5], &[1.0], 0.9).is_err());
    }

    #[test]
    fn bernoulli_table_has_self_mass() {
        let x = array![[1.0, 0.0, 1.0], [1.0, 1.0, 1.0], [0.0, 0.0, 0.0]];
        let t = compute_table(&x, NoiseKernel::SoftenedBernoulli { rho: DEFAULT_RHO }).unwrap();
        for r in 0..3 {
            assert!((t.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(t.prob(r, r) > 0.0);
        }
        assert!(compute_table(&array![[0.2], [1.0]], NoiseKernel::SoftenedBernoulli { rho: 0.9 }).is_err());
        assert!(compute_table(&x, NoiseKernel::SoftenedBernoulli { rho: 1.0 }).is_err());
    }

    #[test]
    fn naive_rows_and_tie_break() {
        let t = naive_table(4).unwrap();
        assert!(t.row(2).iter().all(|&p| p == 0.25));
        assert_eq!(t.top_k(3, 2).unwrap(), vec![0, 1]);
        assert_eq!(t.top_k(0, 4).unwrap(), vec![0, 1, 2, 3]);
        assert!(t.top_k(0, 0).is_err());
        assert!(t.top_k(0, 5).is_err());
    }

    fn table_from_row(row: &[f64]) -> MapaTable {
        let n = row.len();
        let logs: Vec<f64> = row.iter().map(|p| p.ln()).collect();
        MapaTable::from_log_weights(n, TableSource::Naive, "test".into(), |_, out| out.copy_from_slice(&logs)).unwrap()
    }

    #[test]
    fn truncation_arithmetic() {
        let t = table_from_row(&[0.5, 0.3, 0.2]);
        assert_eq!(t.top_k(0, 1).unwrap(), vec![0]);
        let p = truncate_renormalize(&t, 0, 1).unwrap();
        assert_eq!(p.probs[0], 0.0);
        assert!((p.probs[1] - 0.6).abs() < 1e-12 && (p.probs[2] - 0.4).abs() < 1e-12);
        let p0 = truncate_renormalize(&t, 0, 0).unwrap();
        for i in 0..3 {
            assert!((p0.probs[i] - t.prob(0, i)).abs() < 1e-15);
        }
        let full = truncate_renormalize(&t, 0, 3).unwrap();
        let mut rng = SeededRng::new(0, 0);
        assert!(matches!(full.sample(2, &mut rng), Err(Error::EmptySupport { .. })));
        assert!(full.sample(0, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn sampled_frequencies_within_multinomial_bands() {
        let t = table_from_row(&[0.5, 0.3, 0.2]);
        let p = truncate_renormalize(&t, 0, 1).unwrap();
        let mut rng = SeededRng::new(17, 0);
        let draws = p.sample(100_000, &mut rng).unwrap();
        let sampler = ProposalSampler::new(&t);
        let fast: Vec<usize> = (0..100_000).map(|_| sampler.sample(0, 1, &mut rng).unwrap()).collect();
        for d in [&draws, &fast] {
            let n = d.len() as f64;
            assert_eq!(d.iter().filter(|&&i| i == 0).count(), 0);
            for (i, q) in [(1usize, 0.6f64), (2, 0.4)] {
                let c = d.iter().filter(|&&j| j == i).count() as f64;
                let sd = (n * q * (1.0 - q)).sqrt();
                assert!((c - n * q).abs() < 3.0 * sd, "index {i}: {c} vs {}", n * q);
            }
        }
    }

    #[test]
    fn sampler_log_q_tilde_matches_dense_proposal() {
        let mut rng = SeededRng::new(3, 0);
        let x = Array2::from_shape_fn((30, 2), |_| rng.normal());
        let t = compute_table(&x, rbf(0.5)).unwrap();
        let s = ProposalSampler::new(&t);
        for k in [0usize, 1, 5, 29] {
            let dense = truncate_renormalize(&t, 7, k).unwrap();
            for i in 0..30 {
                if dense.probs[i] > 0.0 {
                    assert!((s.log_q_tilde(7, k, i) - dense.probs[i].ln()).abs() < 1e-10);
                }
            }
            for _ in 0..50 {
                let i = s.sample(7, k, &mut rng).unwrap();
                assert!(dense.probs[i] > 0.0, "k={k} drew excluded index {i}");
            }
        }
        assert!(s.sample(7, 30, &mut rng).is_none());
    }

    #[test]
    fn table_files_round_trip() {
        let mut rng = SeededRng::new(4, 0);
        let x = Array2::from_shape_fn((9, 2), |_| rng.normal());
        let t = compute_table(&x, rbf(0.1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let header = save_table(&t, dir.path(), None).unwrap();
        assert_eq!(load_table(&header).unwrap(), t);
        let cached = cached_table(&x, rbf(0.1), Some(dir.path())).unwrap();
        assert_eq!(cached, t);
    }
}
