//! Copula-based prior recovery for one-dimensional latent spaces.
//!
//! The learned codes `z_n = g(x_n)` are mapped to a whitened Gaussian copula
//! `z*_n`. The map is then absorbed into the networks, either exactly (a
//! piecewise-linear layer on each side) or by refitting encoder and decoder
//! so the composite reconstructions are unchanged. The result is a model with
//! a standard normal prior.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{GenerativeModel, LatentPrior};
use crate::math::stats::{ks_std_normal, mean_std, midranks};
use crate::math::{std_normal_inv_cdf, value_and_grad, Activation, AdamState, Graph, Layer, MlpParams, MlpVars, NodeId, SeededRng};

/// Empirical Gaussian copula of a reference sample of scalar latents.
#[derive(Clone, Debug, PartialEq)]
pub struct CopulaTransform {
    /// Reference latents, ascending.
    pub sorted: Vec<f64>,
    pub rank_min: f64,
    pub rank_max: f64,
    /// Sample mean and standard deviation of the reference `Φ⁻¹(rank)`.
    pub mean: f64,
    pub std: f64,
}

impl CopulaTransform {
    /// Fits the transform on `z` and returns it with the transformed sample.
    pub fn fit(z: &[f64]) -> Result<(Self, Vec<f64>)> {
        let n = z.len();
        if n < 10 {
            return Err(Error::Config(format!("copula transform needs N >= 10, got {n}")));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("latents must be finite".into()));
        }
        let (rank_min, rank_max) = (1.0 / (n as f64 + 1.0), n as f64 / (n as f64 + 1.0));
        // (1/N) Σ_i I(z_i ≥ z_n), averaged over tied blocks, is (N + 1 − r_n)/N
        // for the ascending midrank r_n.
        let u: Vec<f64> = midranks(z)
            .into_iter()
            .map(|r| std_normal_inv_cdf(((n as f64 + 1.0 - r) / n as f64).clamp(rank_min, rank_max)))
            .collect::<Result<_>>()?;
        let (mean, std) = mean_std(&u);
        if !(std > 1e-12) {
            return Err(Error::DegenerateRank);
        }
        let mut sorted = z.to_vec();
        sorted.sort_by(f64::total_cmp);
        let z_star = u.iter().map(|v| (v - mean) / std).collect();
        Ok((Self { sorted, rank_min, rank_max, mean, std }, z_star))
    }

    /// Transforms a new latent against the reference sample.
    pub fn apply(&self, z: f64) -> Result<f64> {
        let n = self.sorted.len() as f64;
        let below = self.sorted.partition_point(|&v| v < z) as f64;
        let u = std_normal_inv_cdf(((n - below) / n).clamp(self.rank_min, self.rank_max))?;
        Ok((u - self.mean) / self.std)
    }
}

/// `z*` for the rows of an `N × L` latent matrix; only `L = 1` is supported.
pub fn copula_transform(z: &Array2<f64>) -> Result<Vec<f64>> {
    if z.ncols() != 1 {
        return Err(Error::UnsupportedDimension(z.ncols()));
    }
    Ok(CopulaTransform::fit(&z.column(0).to_vec())?.1)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryMethod {
    /// Interpolating layers appended to the encoder and prepended to the
    /// decoder; reproduces the training codes and reconstructions exactly.
    #[default]
    Compose,
    /// Gradient refits of encoder and decoder.
    Distill,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecoveryConfig {
    pub method: RecoveryMethod,
    /// Distillation only, as are `epochs`, `batch_size` and `seed`.
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Largest acceptable mean squared encoder error against `z*`.
    pub encoder_mse_max: f64,
    /// Largest acceptable mean decoder KL, in nats per point.
    pub decoder_kl_max: f64,
    pub seed: u64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self { method: RecoveryMethod::Compose, lr: 5e-4, epochs: 500, batch_size: 100, encoder_mse_max: 1e-2, decoder_kl_max: 0.05, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub encoder_mse: f64,
    pub decoder_kl: f64,
    pub latent_mean: f64,
    pub latent_std: f64,
    pub latent_ks: f64,
}

/// KL between `N(μ₁, σ² I)` and `N(μ₂, σ² I)`.
pub fn gaussian_kl_same_var(mu1: &[f64], mu2: &[f64], var: f64) -> f64 {
    mu1.iter().zip(mu2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (2.0 * var)
}

/// Composes `x ↦ a·x + b` onto the output of `net`.
fn affine_after(net: &MlpParams, a: f64, b: f64) -> MlpParams {
    let mut out = net.clone();
    let last = out.layers.last_mut().unwrap();
    last.weight.mapv_inplace(|w| a * w);
    last.bias.mapv_inplace(|v| a * v + b);
    out
}

/// Composes `z ↦ (z − b)/a` onto the input of `net`.
fn affine_before(net: &MlpParams, a: f64, b: f64) -> MlpParams {
    let mut out = net.clone();
    let first = &mut out.layers[0];
    let shift: Array1<f64> = first.weight.column(0).mapv(|w| w * b / a);
    first.weight.mapv_inplace(|w| w / a);
    first.bias = &first.bias - &shift;
    out
}

/// Least-squares `(a, b)` for `y ≈ a·x + b`.
fn affine_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let (mx, _) = mean_std(x);
    let (my, _) = mean_std(y);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let a = if sxx > 0.0 { sxy / sxx } else { 1.0 };
    let a = if a.abs() < 1e-8 { 1e-8_f64.copysign(a) } else { a };
    (a, my - a * mx)
}

fn sq_error_loss(g: &mut Graph, vars: &MlpVars, input: &Array2<f64>, target: &Array2<f64>, scale: f64) -> NodeId {
    let x = g.constant(input.clone());
    let out = g.mlp_forward(vars, x);
    let t = g.constant(target.clone());
    let diff = g.sub(out, t);
    let sq = g.square(diff);
    let per_row = g.row_sum(sq);
    let m = g.mean(per_row);
    g.scale(m, scale)
}

/// Minibatch Adam on `scale · mean ‖net(input) − target‖²`.
fn fit_regression(net: &mut MlpParams, input: &Array2<f64>, target: &Array2<f64>, scale: f64, cfg: &RecoveryConfig, rng: &mut SeededRng) -> Result<()> {
    let mut adam = AdamState::for_params(net, cfg.lr);
    let n = input.nrows();
    for _ in 0..cfg.epochs {
        for batch in rng.permutation(n).chunks(cfg.batch_size) {
            let (xb, tb) = (input.select(Axis(0), batch), target.select(Axis(0), batch));
            let (_, grad) = value_and_grad(net, |g, vars| sq_error_loss(g, vars, &xb, &tb, scale))?;
            adam.step(net, &grad)?;
        }
    }
    Ok(())
}

fn mean_sq_error(net: &MlpParams, input: &Array2<f64>, target: &Array2<f64>) -> Result<f64> {
    let out = net.forward_batch(input)?;
    Ok((&out - target).mapv(|v| v * v).sum_axis(Axis(1)).mean().unwrap_or(0.0))
}

/// Replaces the empirical prior of an amortized model by a standard normal,
/// absorbing the copula map into encoder and decoder.
pub fn recover_prior(model: &GenerativeModel, x: &Array2<f64>, cfg: &RecoveryConfig) -> Result<(GenerativeModel, RecoveryReport)> {
    let encoder = model.amortizer.as_ref().ok_or_else(|| Error::Config("prior recovery needs an amortized model".into()))?;
    let z = encoder.forward_batch(x)?;
    let z_star = copula_transform(&z)?;
    match cfg.method {
        RecoveryMethod::Compose => compose(model, &z.column(0).to_vec(), &z_star, x, cfg),
        RecoveryMethod::Distill => distill(model, &z_star, x, cfg),
    }
}

/// Piecewise-linear interpolant through `(t_j, y_j)`, `t` strictly
/// ascending, constant outside `[t_0, t_last]`:
/// `f(t) = y_0 + Σ_j c_j relu(t − t_j)` as a hidden and an output layer.
fn interpolant(t: &[f64], y: &[f64]) -> (Layer, Layer) {
    let m = t.len();
    let slope = |j: usize| if j + 1 < m { (y[j + 1] - y[j]) / (t[j + 1] - t[j]) } else { 0.0 };
    let c: Vec<f64> = (0..m).map(|j| slope(j) - if j > 0 { slope(j - 1) } else { 0.0 }).collect();
    let hidden = Layer { weight: Array2::ones((m, 1)), bias: Array1::from_iter(t.iter().map(|v| -v)) };
    let output = Layer { weight: Array2::from_shape_vec((1, m), c).unwrap(), bias: Array1::from_elem(1, y[0]) };
    (hidden, output)
}

/// Knots `(z, z*)` with duplicate codes removed, sorted by `z`.
fn knots(z: &[f64], z_star: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut pairs: Vec<(f64, f64)> = z.iter().copied().zip(z_star.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.dedup_by(|a, b| a.0 == b.0);
    if pairs.len() < 2 {
        return Err(Error::DegenerateRank);
    }
    Ok(pairs.into_iter().unzip())
}

/// Absorbs the copula exactly: the encoder's output layer feeds an
/// interpolant of `z ↦ z*`, and the decoder's input passes through the
/// interpolant of the inverse map.
pub fn compose(model: &GenerativeModel, z: &[f64], z_star: &[f64], x: &Array2<f64>, cfg: &RecoveryConfig) -> Result<(GenerativeModel, RecoveryReport)> {
    let encoder = model.amortizer.as_ref().ok_or_else(|| Error::Config("prior recovery needs an amortized model".into()))?;
    if z.len() != x.nrows() || z_star.len() != x.nrows() {
        return Err(Error::Dimension { expected: x.nrows(), got: z.len().min(z_star.len()) });
    }
    let (zs, ys) = knots(z, z_star)?;

    let (hidden, output) = interpolant(&zs, &ys);
    let mut enc = encoder.clone();
    let last = enc.layers.pop().unwrap();
    enc.layers.push(Layer { weight: hidden.weight.dot(&last.weight), bias: &hidden.weight.column(0) * last.bias[0] + &hidden.bias });
    enc.layers.push(output);
    enc.activations.push(Activation::Relu);

    // z* decreases in z, so the inverse knots are the same pairs reversed.
    let (mut ts, mut yz) = (ys, zs);
    if ts[0] > ts[ts.len() - 1] {
        ts.reverse();
        yz.reverse();
    }
    let (hidden, output) = interpolant(&ts, &yz);
    let mut dec = model.decoder.clone();
    let first = dec.layers.remove(0);
    let fused = Layer { weight: first.weight.dot(&output.weight), bias: &first.bias + &(&first.weight.column(0) * output.bias[0]) };
    dec.layers.insert(0, fused);
    dec.layers.insert(0, hidden);
    dec.activations.insert(0, Activation::Relu);

    let recon = model.decoder.forward_batch(&encoder.forward_batch(x)?)?;
    finish(model, enc, dec, z_star, &recon, x, cfg)
}

/// Refits encoder to `z*` and decoder to the old reconstructions. Both start
/// from the old networks composed with the best affine map between `z` and
/// `z*`, so only the non-affine part of the copula has to be learned.
pub fn distill(model: &GenerativeModel, z_star: &[f64], x: &Array2<f64>, cfg: &RecoveryConfig) -> Result<(GenerativeModel, RecoveryReport)> {
    let encoder = model.amortizer.as_ref().ok_or_else(|| Error::Config("prior recovery needs an amortized model".into()))?;
    if z_star.len() != x.nrows() {
        return Err(Error::Dimension { expected: x.nrows(), got: z_star.len() });
    }
    let mut rng = SeededRng::new(cfg.seed, 40);
    let z_old = encoder.forward_batch(x)?;
    let recon = model.decoder.forward_batch(&z_old)?;
    let (a, b) = affine_fit(&z_old.column(0).to_vec(), z_star);
    let target = Array2::from_shape_vec((z_star.len(), 1), z_star.to_vec()).unwrap();

    let mut enc = affine_after(encoder, a, b);
    fit_regression(&mut enc, x, &target, 1.0, cfg, &mut rng)?;

    let z_new = enc.forward_batch(x)?;
    let mut dec = affine_before(&model.decoder, a, b);
    fit_regression(&mut dec, &z_new, &recon, 1.0 / (2.0 * model.noise_var), cfg, &mut rng)?;
    finish(model, enc, dec, z_star, &recon, x, cfg)
}

/// Measures the refit networks and applies the acceptance gates.
fn finish(model: &GenerativeModel, enc: MlpParams, dec: MlpParams, z_star: &[f64], recon: &Array2<f64>, x: &Array2<f64>, cfg: &RecoveryConfig) -> Result<(GenerativeModel, RecoveryReport)> {
    let target = Array2::from_shape_vec((z_star.len(), 1), z_star.to_vec()).unwrap();
    let encoder_mse = mean_sq_error(&enc, x, &target)?;
    let z_new = enc.forward_batch(x)?;
    let decoder_kl = mean_sq_error(&dec, &z_new, recon)? / (2.0 * model.noise_var);
    let latents = z_new.column(0).to_vec();
    let (latent_mean, latent_std) = mean_std(&latents);
    let report = RecoveryReport { encoder_mse, decoder_kl, latent_mean, latent_std, latent_ks: ks_std_normal(&latents) };
    if !(encoder_mse <= cfg.encoder_mse_max && decoder_kl <= cfg.decoder_kl_max) {
        return Err(Error::Recovery { encoder_mse, decoder_kl });
    }
    let recovered = GenerativeModel { decoder: dec, amortizer: Some(enc), noise_var: model.noise_var, prior: LatentPrior::StandardNormal };
    Ok((recovered, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_sample_maps_to_normal() {
        let mut rng = SeededRng::new(0, 0);
        let z: Vec<f64> = (0..10_000).map(|_| rng.normal()).collect();
        let (_, zs) = CopulaTransform::fit(&z).unwrap();
        assert!(ks_std_normal(&zs) <= 0.02);
        let (m, s) = mean_std(&zs);
        assert!(m.abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ranks_follow_the_verbatim_formula() {
        let z = [3.0, 1.0, 2.0, 10.0, -1.0, 0.5, 7.0, 8.0, 4.0, 5.0];
        let (t, zs) = CopulaTransform::fit(&z).unwrap();
        for (n, &zn) in z.iter().enumerate() {
            let r = z.iter().filter(|&&zi| zi >= zn).count() as f64 / 10.0;
            let u = std_normal_inv_cdf(r.clamp(1.0 / 11.0, 10.0 / 11.0)).unwrap();
            assert!(((u - t.mean) / t.std - zs[n]).abs() < 1e-12);
            assert!((t.apply(zn).unwrap() - zs[n]).abs() < 1e-12);
        }
    }

    #[test]
    fn increasing_reparameterization_is_invisible() {
        let mut rng = SeededRng::new(1, 0);
        let z: Vec<f64> = (0..500).map(|_| rng.normal()).collect();
        let warped: Vec<f64> = z.iter().map(|v| v.powi(3) + 2.0 * v.exp()).collect();
        assert_eq!(CopulaTransform::fit(&z).unwrap().1, CopulaTransform::fit(&warped).unwrap().1);
    }

    #[test]
    fn constant_and_multivariate_inputs_fail() {
        assert!(matches!(CopulaTransform::fit(&[0.3; 20]), Err(Error::DegenerateRank)));
        assert!(matches!(copula_transform(&Array2::zeros((20, 2))), Err(Error::UnsupportedDimension(2))));
        assert!(CopulaTransform::fit(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn kl_oracle() {
        assert!((gaussian_kl_same_var(&[1.0, 2.0], &[0.0, 0.0], 0.5) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn affine_warm_start_preserves_the_composite() {
        let mut rng = SeededRng::new(2, 0);
        let enc = MlpParams::init(&[2, 5, 1], Activation::Tanh, &mut rng);
        let dec = MlpParams::init(&[1, 5, 2], Activation::Tanh, &mut rng);
        let x = Array2::from_shape_fn((7, 2), |_| rng.normal());
        let before = dec.forward_batch(&enc.forward_batch(&x).unwrap()).unwrap();
        let (a, b) = (-2.5, 0.7);
        let after = affine_before(&dec, a, b).forward_batch(&affine_after(&enc, a, b).forward_batch(&x).unwrap()).unwrap();
        assert!((&before - &after).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn distillation_of_an_already_gaussian_model_is_immediate() {
        // encoder outputs z* exactly (identity on the first coordinate)
        let mut rng = SeededRng::new(3, 0);
        let z: Vec<f64> = (0..200).map(|_| rng.normal()).collect();
        let (_, zs) = CopulaTransform::fit(&z).unwrap();
        let x = Array2::from_shape_fn((200, 2), |(i, j)| if j == 0 { zs[i] } else { 0.0 });
        let mut enc = MlpParams::zeros(&[2, 1], Activation::Identity);
        enc.layers[0].weight[[0, 0]] = 1.0;
        let dec = MlpParams::init(&[1, 4, 2], Activation::Tanh, &mut rng);
        let model = GenerativeModel { decoder: dec, amortizer: Some(enc), noise_var: 0.1, prior: LatentPrior::Empirical };
        let cfg = RecoveryConfig { epochs: 1, ..Default::default() };
        let (rec, report) = distill(&model, &zs, &x, &cfg).unwrap();
        assert!(report.encoder_mse < 1e-6 && report.decoder_kl < 1e-6, "{report:?}");
        assert_eq!(rec.prior, LatentPrior::StandardNormal);
    }

    #[test]
    fn interpolant_hits_knots_and_is_flat_outside() {
        let t = [-1.0, 0.0, 0.5, 3.0];
        let y = [2.0, -1.0, 4.0, 4.5];
        let (h, o) = interpolant(&t, &y);
        let net = MlpParams { layers: vec![h, o], activations: vec![Activation::Relu] };
        for (&ti, &yi) in t.iter().zip(&y) {
            assert!((net.forward(&[ti]).unwrap()[0] - yi).abs() < 1e-12);
        }
        assert!((net.forward(&[0.25]).unwrap()[0] - 1.5).abs() < 1e-12);
        assert!((net.forward(&[-7.0]).unwrap()[0] - 2.0).abs() < 1e-12);
        assert!((net.forward(&[9.0]).unwrap()[0] - 4.5).abs() < 1e-12);
    }

    #[test]
    fn composition_reproduces_codes_and_reconstructions() {
        let mut rng = SeededRng::new(5, 0);
        let enc = MlpParams::init(&[2, 6, 1], Activation::Tanh, &mut rng);
        let dec = MlpParams::init(&[1, 6, 2], Activation::Tanh, &mut rng);
        let x = Array2::from_shape_fn((300, 2), |_| rng.normal());
        let model = GenerativeModel { decoder: dec, amortizer: Some(enc), noise_var: 0.1, prior: LatentPrior::Empirical };
        let (rec, report) = recover_prior(&model, &x, &RecoveryConfig::default()).unwrap();
        assert!(report.encoder_mse < 1e-18 && report.decoder_kl < 1e-18, "{report:?}");
        let z_star = copula_transform(&model.amortizer.as_ref().unwrap().forward_batch(&x).unwrap()).unwrap();
        let z_new = rec.amortizer.as_ref().unwrap().forward_batch(&x).unwrap();
        for (a, b) in z_new.column(0).iter().zip(&z_star) {
            assert!((a - b).abs() < 1e-9);
        }
        let before = model.reconstruct(&x).unwrap();
        let after = rec.reconstruct(&x).unwrap();
        assert!((&before - &after).iter().all(|d| d.abs() < 1e-9));
        assert_eq!(rec.prior, LatentPrior::StandardNormal);
        rec.validate().unwrap();
    }
}
