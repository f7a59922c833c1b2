//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! to stderr (uncaptured) and then asserts.

use std::io::Write;
use std::path::PathBuf;

use mapa_core::datasets::{generate, split, Dataset, GenerateOptions, GeneratorName, GroundTruthModel, Split};
use mapa_core::evaluation::{
    count_passes, evaluable_model, evaluate_ll, kl_from_ll, non_identifiability_study,
    posterior_trends, sample_points, CostModel, CountConfig, EvalConfig, MixtureProposal,
};
use mapa_core::inference::{
    ae_loss, batch_objective, exact_empiricalized_lml, iwae_batch, iwae_bound, iwae_log_bounds, k_from_fraction,
    mapa_bound, mapa_bound_batch, mapa_bound_from_draws, table_for, train, BatchSpec, CostMeter, GaussianProposal,
    GenerativeModel, LatentPrior, Method, TrainConfig,
};
use mapa_core::mapa::{compute_table, NoiseKernel, ProposalSampler};
use mapa_core::math::stats::{ks_std_normal, mean_stderr};
use mapa_core::math::{gaussian_logpdf_iso, Graph, Layer, MlpParams, SeededRng};
use mapa_core::prior_recovery::{recover_prior, RecoveryConfig};
use ndarray::{array, Array2};

fn verdict(name: &str, pass: bool, detail: &str) {
    let line = format!("{} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{name}: {detail}");
}

fn cache_dir() -> PathBuf {
    std::env::var_os("MAPA_LAB_CACHE")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("mapa-cache"))
}

fn dataset(name: GeneratorName, n: usize, seed: u64) -> (Dataset, GroundTruthModel) {
    let opts = GenerateOptions { cache_dir: Some(cache_dir()), ..Default::default() };
    let (ds, gt) = generate(name, n, seed, &opts).unwrap();
    (split(ds, [0.8, 0.1, 0.1], seed).unwrap(), gt)
}

fn log_lik_row(model: &GenerativeModel, x: &Array2<f64>, n: usize) -> Vec<f64> {
    let means = model.reconstruct(x).unwrap();
    let xn = x.row(n).to_vec();
    means.rows().into_iter().map(|m| gaussian_logpdf_iso(&xn, &m.to_vec(), model.noise_var)).collect()
}

/// `x = a z + b + ε` with `z ~ N(0, 1)`, `ε ~ N(0, σ² I₂)`.
struct Linear {
    a: [f64; 2],
    b: [f64; 2],
    var: f64,
}

impl Linear {
    fn model(&self) -> GenerativeModel {
        GenerativeModel {
            decoder: MlpParams {
                layers: vec![Layer { weight: array![[self.a[0]], [self.a[1]]], bias: array![self.b[0], self.b[1]] }],
                activations: vec![],
            },
            amortizer: None,
            noise_var: self.var,
            prior: LatentPrior::StandardNormal,
        }
    }

    fn lml(&self, x: &[f64]) -> f64 {
        let r = [x[0] - self.b[0], x[1] - self.b[1]];
        let aa = self.a[0].powi(2) + self.a[1].powi(2);
        let ar = self.a[0] * r[0] + self.a[1] * r[1];
        let rr = r[0] * r[0] + r[1] * r[1];
        let c = 1.0 + aa / self.var;
        let logdet = 2.0 * self.var.ln() + c.ln();
        -(2.0 * std::f64::consts::PI).ln() - 0.5 * logdet - 0.5 * (rr / self.var - ar * ar / (self.var * self.var * c))
    }

    fn posterior(&self) -> GaussianProposal {
        let prec = 1.0 + (self.a[0].powi(2) + self.a[1].powi(2)) / self.var;
        let w = [self.a[0] / (self.var * prec), self.a[1] / (self.var * prec)];
        GaussianProposal {
            net: MlpParams {
                layers: vec![Layer {
                    weight: array![[w[0], w[1]], [0.0, 0.0]],
                    bias: array![-(w[0] * self.b[0] + w[1] * self.b[1]), -prec.ln()],
                }],
                activations: vec![],
            },
        }
    }
}

#[test]
fn bound_identities() {
    let mut worst_full: f64 = 0.0;
    let mut worst_ae: f64 = 0.0;
    let mut ae_checked = 0;
    let mut ae_violations = 0;
    for seed in 0..3u64 {
        let (ds, _) = dataset(GeneratorName::AbsValue, 120, seed);
        let x = ds.x.clone();
        let n = x.nrows();
        let mut rng = SeededRng::new(seed, 0);
        let model = GenerativeModel::init_empirical(2, 1, &[50, 50, 50], ds.noise_var, &mut rng);
        let table = compute_table(&x, NoiseKernel::GaussianRbf { noise_var: ds.noise_var }).unwrap();
        let sampler = ProposalSampler::new(&table);
        for i in 0..n {
            let xi = x.row(i).to_vec();
            let exact = exact_empiricalized_lml(&model, &xi, &x, &mut CostMeter::default()).unwrap();
            let full = mapa_bound(&model, &sampler, &x, i, n, 0, &mut rng).unwrap().value;
            worst_full = worst_full.max((full - exact).abs());
            let ae = ae_loss(&model, &xi, n).unwrap();
            if ae > exact + 1e-12 {
                ae_violations += 1;
            }
            if table.top_k(i, 1).unwrap() == vec![i] {
                let one = mapa_bound(&model, &sampler, &x, i, 1, 0, &mut rng).unwrap().value;
                worst_ae = worst_ae.max((one - ae).abs());
                ae_checked += 1;
            }
        }
    }
    let pass = worst_full <= 1e-9 && worst_ae <= 1e-9 && ae_violations == 0 && ae_checked > 0;
    verdict(
        "bound identities",
        pass,
        &format!("max |full - exact| = {worst_full:.2e}, max |k=1 - ae| = {worst_ae:.2e} over {ae_checked} points, ae > exact on {ae_violations} points"),
    );
}

#[test]
fn conjugate_oracle() {
    let lin = Linear { a: [0.9, -0.4], b: [0.3, -0.1], var: 0.05 };
    let model = lin.model();
    let post = lin.posterior();
    let mut rng = SeededRng::new(0, 0);
    let mut worst_a: f64 = 0.0;
    for _ in 0..200 {
        let x = [1.5 * rng.normal(), 1.5 * rng.normal()];
        for s in [1, 10] {
            let v = iwae_bound(&model, &post, &x, s, &mut rng).unwrap().value;
            worst_a = worst_a.max((v - lin.lml(&x)).abs());
        }
    }

    let mut data_rng = SeededRng::new(1, 0);
    let fit_x = mapa_core::evaluation::sample_observations(&model, 300, &mut data_rng).unwrap();
    let test_x = mapa_core::evaluation::sample_observations(&model, 100, &mut data_rng).unwrap();
    let cfg = EvalConfig { fit_s: 100, fit_epochs: 30, fit_batch: 100, ll_s: 20_000, ..Default::default() };
    let (ll, _) = evaluate_ll(&model, &fit_x, &test_x, &cfg).unwrap();
    let errors: Vec<f64> = ll.iter().enumerate().map(|(i, v)| v - lin.lml(&test_x.row(i).to_vec())).collect();
    let (mean_err, se) = mean_stderr(&errors);
    let worst_b = errors.iter().map(|e| e.abs()).fold(0.0, f64::max);
    verdict(
        "conjugate oracle",
        worst_a <= 1e-9 && mean_err.abs() <= 0.01,
        &format!(
            "true-posterior IWAE max err {worst_a:.2e}; fitted mixture + S=20000 mean LL err {mean_err:.4} ± {se:.4} nats over {} points (largest single point {worst_b:.4})",
            errors.len()
        ),
    );
}

/// Mean and stderr of the MAPA bound for point `n` over `draws` draws.
fn mapa_draws(model: &GenerativeModel, sampler: &ProposalSampler, x: &Array2<f64>, n: usize, k: usize, s: usize, draws: usize, rng: &mut SeededRng) -> (f64, f64) {
    let chunk = 1000;
    let mut values = Vec::with_capacity(draws);
    while values.len() < draws {
        let b = chunk.min(draws - values.len());
        let (v, _) = mapa_bound_batch(model, sampler, x, &vec![n; b], k, s, rng).unwrap();
        values.extend(v);
    }
    mean_stderr(&values)
}

#[test]
fn monotone_tightening() {
    let mut rng = SeededRng::new(3, 0);
    let x = Array2::from_shape_fn((100, 2), |_| rng.normal());
    let model = GenerativeModel::init_empirical(2, 1, &[50, 50, 50], 0.5, &mut rng);
    let table = compute_table(&x, NoiseKernel::GaussianRbf { noise_var: 0.2 }).unwrap();
    let sampler = ProposalSampler::new(&table);
    let grid = [1usize, 5, 25];
    let mut failures = Vec::new();
    for n in [0usize, 17, 58] {
        let exact = exact_empiricalized_lml(&model, &x.row(n).to_vec(), &x, &mut CostMeter::default()).unwrap();
        let mut est = [[(0.0, 0.0); 3]; 3];
        for (a, &k) in grid.iter().enumerate() {
            for (b, &s) in grid.iter().enumerate() {
                est[a][b] = mapa_draws(&model, &sampler, &x, n, k, s, 100_000, &mut rng);
                let (m, se) = est[a][b];
                if m > exact + 3.0 * se + 1e-12 {
                    failures.push(format!("n={n} k={k} S={s} exceeds exact LML"));
                }
            }
        }
        for a in 0..3 {
            for b in 0..2 {
                let (lo, lo_se) = est[a][b];
                let (hi, hi_se) = est[a][b + 1];
                if hi < lo - 3.0 * (lo_se.powi(2) + hi_se.powi(2)).sqrt() {
                    failures.push(format!("n={n} k={} decreases from S={} to S={}", grid[a], grid[b], grid[b + 1]));
                }
                let (lo, lo_se) = est[b][a];
                let (hi, hi_se) = est[b + 1][a];
                if hi < lo - 3.0 * (lo_se.powi(2) + hi_se.powi(2)).sqrt() {
                    failures.push(format!("n={n} S={} decreases from k={} to k={}", grid[a], grid[b], grid[b + 1]));
                }
            }
        }
    }
    verdict(
        "monotone tightening",
        failures.is_empty(),
        &if failures.is_empty() { "k and S sweeps non-decreasing, all means below exact LML within 3 stderr".into() } else { failures.join("; ") },
    );
}

#[test]
fn enumeration_oracle() {
    let mut failures = Vec::new();
    let mut cases = 0;
    for (n_pts, seed) in [(6usize, 0u64), (7, 1), (8, 2)] {
        let mut rng = SeededRng::new(seed, 9);
        let x = Array2::from_shape_fn((n_pts, 2), |_| rng.normal());
        let model = GenerativeModel::init_empirical(2, 1, &[8, 8], 0.4, &mut rng);
        let table = compute_table(&x, NoiseKernel::GaussianRbf { noise_var: 0.5 }).unwrap();
        let sampler = ProposalSampler::new(&table);
        for n in 0..n_pts {
            let exact = exact_empiricalized_lml(&model, &x.row(n).to_vec(), &x, &mut CostMeter::default()).unwrap();
            let ll = log_lik_row(&model, &x, n);
            for k in [1usize, 2] {
                let top = table.top_k(n, k).unwrap();
                let tail: Vec<usize> = table.order(n)[k..].iter().map(|&i| i as usize).filter(|&i| table.prob(n, i) > 0.0).collect();
                for s in [1usize, 2, 3] {
                    let mut expect = 0.0;
                    let mut idx = vec![0usize; s];
                    loop {
                        let draws: Vec<usize> = idx.iter().map(|&j| tail[j]).collect();
                        let lq: Vec<f64> = draws.iter().map(|&i| sampler.log_q_tilde(n, k, i)).collect();
                        let p: f64 = lq.iter().sum::<f64>().exp();
                        expect += p * mapa_bound_from_draws(&ll, &top, &draws, &lq);
                        let mut d = 0;
                        while d < s {
                            idx[d] += 1;
                            if idx[d] < tail.len() {
                                break;
                            }
                            idx[d] = 0;
                            d += 1;
                        }
                        if d == s {
                            break;
                        }
                    }
                    let (mean, se) = mapa_draws(&model, &sampler, &x, n, k, s, 20_000, &mut rng);
                    cases += 1;
                    if expect > exact + 1e-12 {
                        failures.push(format!("N={n_pts} n={n} k={k} S={s}: enumerated {expect} > exact {exact}"));
                    }
                    if (mean - expect).abs() > 3.0 * se + 1e-12 {
                        failures.push(format!("N={n_pts} n={n} k={k} S={s}: sampled {mean} vs enumerated {expect} (se {se})"));
                    }
                }
            }
        }
    }
    verdict(
        "enumeration oracle",
        failures.is_empty(),
        &format!("{cases} (N, n, k, S) cases checked; {}", if failures.is_empty() { "all within 3 stderr and below exact LML".into() } else { failures.join("; ") }),
    );
}

#[test]
fn trend_replication() {
    let mut medians = Vec::new();
    for name in GeneratorName::BENCHMARKS {
        let (ds, gt) = dataset(name, 1000, 0);
        let table = compute_table(&ds.x, NoiseKernel::GaussianRbf { noise_var: ds.noise_var }).unwrap();
        let points = sample_points(ds.len(), 50, &mut SeededRng::new(0, 80));
        let report = posterior_trends(&ds, &gt, &table, &points, 401).unwrap();
        medians.push((name.as_str(), report.median_spearman()));
    }
    let pass = medians.iter().all(|(_, m)| *m >= 0.7);
    let detail = medians.iter().map(|(n, m)| format!("{n} {m:.3}")).collect::<Vec<_>>().join(", ");
    verdict("trend replication", pass, &format!("median Spearman: {detail}"));
}

/// Desk-scale training and evaluation budgets for the density comparison.
const DESK_EPOCHS: usize = 200;

fn desk_eval(seed: u64) -> EvalConfig {
    EvalConfig { fit_s: 50, fit_epochs: 100, fit_batch: 100, fit_max_points: Some(400), seed, ..Default::default() }
}

#[test]
fn density_direction() {
    let mut failures = Vec::new();
    let mut lines = Vec::new();
    for name in [GeneratorName::AbsValue, GeneratorName::SpiralDots] {
        let (ds, gt) = dataset(name, 2000, 0);
        let tr = ds.subset(Split::Train);
        let va = ds.subset(Split::Val);
        let te = ds.subset(Split::Test);
        let eval = desk_eval(0);
        let gt_model = GenerativeModel::from_ground_truth(&gt).unwrap();
        let (ll_gt, _) = evaluate_ll(&gt_model, &tr.x, &te.x, &eval).unwrap();
        for s in [10usize, 50] {
            let mut kls = Vec::new();
            for method in [Method::Mapa, Method::Iwae, Method::MapaNaive] {
                let cfg = TrainConfig {
                    method,
                    s,
                    k: if method.uses_table() { k_from_fraction(0.1, s, tr.len()) } else { 0 },
                    epochs: DESK_EPOCHS,
                    restarts: 3,
                    val_every: 10,
                    seed: 0,
                    ..Default::default()
                };
                let table = table_for(method, &tr, Some(&gt)).unwrap();
                let outcome = train(&cfg, &tr.x, &va.x, tr.noise_var, table.as_ref()).unwrap();
                let (model, _) = evaluable_model(&outcome.best, &tr.x, &RecoveryConfig::default()).unwrap();
                let (ll, _) = evaluate_ll(&model, &tr.x, &te.x, &eval).unwrap();
                let kl = kl_from_ll(&ll_gt, &ll).unwrap();
                lines.push(format!("{} S={s} {method}: KL {:.4} ± {:.4}", name.as_str(), kl.kl, kl.stderr));
                kls.push(kl);
            }
            let (mapa, iwae, naive) = (kls[0], kls[1], kls[2]);
            for (other, label) in [(iwae, "iwae"), (naive, "mapa_naive")] {
                let pooled = (mapa.stderr.powi(2) + other.stderr.powi(2)).sqrt();
                if other.kl - mapa.kl < -2.0 * pooled {
                    failures.push(format!("{} S={s}: mapa {:.4} vs {label} {:.4} (pooled se {pooled:.4})", name.as_str(), mapa.kl, other.kl));
                }
            }
        }
    }
    let detail = if failures.is_empty() { lines.join("; ") } else { format!("{} | {}", failures.join("; "), lines.join("; ")) };
    verdict("density direction", failures.is_empty(), &detail);
}

#[test]
fn cost_accounting() {
    let (ds, _) = dataset(GeneratorName::AbsValue, 5000, 0);
    let x = ds.x.clone();
    let table = compute_table(&x, NoiseKernel::GaussianRbf { noise_var: ds.noise_var }).unwrap();
    let cfg = CountConfig { s_grid: vec![50, 200], k_frac: 0.1, batch_size: 100, batches: 20, seed: 0 };
    let rows = count_passes(&x, &table, ds.noise_var, &cfg).unwrap();
    let get = |m: &str, s: usize, c: CostModel| rows.iter().find(|r| r.method == m && r.s == s && r.cost_model == c).unwrap().clone();

    let mut rng = SeededRng::new(1, 0);
    let model = GenerativeModel::init_gaussian_prior(2, 1, &[50, 50, 50], ds.noise_var, &mut rng);
    let prop = GaussianProposal::init(2, 1, &[50, 50, 50], &mut rng);
    let mut meter = CostMeter::default();
    iwae_batch(&model, &prop, &x.slice(ndarray::s![..100, ..]).to_owned(), 50, &mut rng, &mut meter).unwrap();
    let iwae_exact = meter.decoder_passes == 100 * 50 && get("iwae", 200, CostModel::Decoder).max_batch_decoder == 100 * 200;

    let mapa_dec = get("mapa", 200, CostModel::Decoder);
    let mapa_both = get("mapa", 200, CostModel::EncoderDecoder);
    let iwae50 = get("iwae", 50, CostModel::Decoder);
    let cap_ok = rows.iter().filter(|r| r.method == "mapa").all(|r| r.max_batch_decoder <= 5000);
    let pass = iwae_exact && cap_ok && iwae50.per_point == 50.0 && mapa_dec.per_point <= 50.0 && mapa_both.per_point <= 100.0;
    verdict(
        "cost accounting",
        pass,
        &format!(
            "IWAE passes = B·S: {iwae_exact}; MAPA per-batch decoder ≤ N: {cap_ok}; MAPA S=200 per point: decoder {:.2} (IWAE S=50: {}), encoder+decoder {:.2}",
            mapa_dec.per_point, iwae50.per_point, mapa_both.per_point
        ),
    );
}

/// Largest relative error between autodiff and central differences over a
/// random subset of coordinates of `params`.
fn fd_check(params: &MlpParams, analytic: &MlpParams, coords: usize, rng: &mut SeededRng, f: impl Fn(&MlpParams) -> f64) -> f64 {
    let h = 1e-5;
    let flat = params.to_flat();
    let grad = analytic.to_flat();
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let i = rng.below(flat.len());
        let mut vals = [0.0; 2];
        for (j, sign) in [1.0, -1.0].into_iter().enumerate() {
            let mut v = flat.clone();
            v[i] += sign * h;
            let mut p = params.clone();
            p.set_flat(&v).unwrap();
            vals[j] = f(&p);
        }
        let numeric = (vals[0] - vals[1]) / (2.0 * h);
        worst = worst.max((numeric - grad[i]).abs() / numeric.abs().max(grad[i].abs()).max(1e-3));
    }
    worst
}

#[test]
fn gradient_suite() {
    let coords = 40;
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut record = |label: String, v: f64| match worst.iter_mut().find(|(l, _)| *l == label) {
        Some(e) => e.1 = e.1.max(v),
        None => worst.push((label, v)),
    };
    for seed in 0..20u64 {
        let mut rng = SeededRng::new(seed, 0);
        let x = Array2::from_shape_fn((30, 2), |_| rng.normal());
        let table = compute_table(&x, NoiseKernel::GaussianRbf { noise_var: 0.3 }).unwrap();
        let sampler = ProposalSampler::new(&table);
        let batch: Vec<usize> = sample_points(30, 8, &mut rng);
        for method in Method::ALL {
            let model = GenerativeModel::init_empirical(2, 1, &[50, 50, 50], 0.3, &mut rng);
            let aux = if method.is_empirical() { model.amortizer.clone().unwrap() } else { GaussianProposal::init(2, 1, &[50, 50, 50], &mut rng).net };
            let spec = BatchSpec { method, s: 4, k: 2, noise_var: 0.3, sampler: Some(&sampler) };
            let eval = |dec: &MlpParams, aux: &MlpParams| batch_objective(&spec, dec, aux, &x, &batch, &mut SeededRng::new(seed, 5)).unwrap();
            let step = eval(&model.decoder, &aux);
            let e1 = fd_check(&model.decoder, &step.grad_decoder, coords, &mut rng, |p| -eval(p, &aux).value);
            let e2 = fd_check(&aux, &step.grad_aux, coords, &mut rng, |p| -eval(&model.decoder, p).value);
            record(method.to_string(), e1.max(e2));
        }

        let model = GenerativeModel::init_gaussian_prior(2, 1, &[50, 50, 50], 0.3, &mut rng);
        let prop = MixtureProposal::init(2, &[50, 50, 50], 5, &mut rng).unwrap();
        let sampling = prop.sampling;
        let xb = x.slice(ndarray::s![..8, ..]).to_owned();
        let objective = |net: &MlpParams| -> (f64, MlpParams) {
            let p = MixtureProposal { net: net.clone(), components: 5, sampling };
            let mut g = Graph::new();
            let dec = g.mlp(&model.decoder, false);
            let pv = g.mlp(&p.net, true);
            let v = iwae_log_bounds(&mut g, &dec, &p, &pv, &xb, 6, 0.3, &mut SeededRng::new(seed, 6), &mut CostMeter::default()).unwrap();
            let m = g.mean(v);
            let loss = g.scale(m, -1.0);
            let grads = g.backward(loss).unwrap();
            (g.scalar(loss), grads.mlp(&pv, net))
        };
        let (_, grad) = objective(&prop.net);
        record("eval_mixture".into(), fd_check(&prop.net, &grad, coords, &mut rng, |p| objective(p).0));
    }
    let pass = worst.iter().all(|(_, v)| *v <= 1e-4);
    let detail = worst.iter().map(|(l, v)| format!("{l} {v:.1e}")).collect::<Vec<_>>().join(", ");
    verdict("gradient suite", pass, &format!("20 seeds, max relative error: {detail}"));
}

#[test]
fn copula_recovery() {
    let (ds, _) = dataset(GeneratorName::AbsValue, 2500, 1);
    let tr = ds.subset(Split::Train);
    let va = ds.subset(Split::Val);
    let te = ds.subset(Split::Test);
    let cfg = TrainConfig { method: Method::Mapa, s: 10, k: 1, epochs: 100, restarts: 1, val_every: 10, seed: 1, ..Default::default() };
    let table = table_for(Method::Mapa, &tr, None).unwrap();
    let outcome = train(&cfg, &tr.x, &va.x, tr.noise_var, table.as_ref()).unwrap();
    let before_model = outcome.best.model;
    let (after_model, report) = recover_prior(&before_model, &tr.x, &RecoveryConfig::default()).unwrap();
    let ks = ks_std_normal(&after_model.amortizer.as_ref().unwrap().forward_batch(&tr.x).unwrap().column(0).to_vec());

    let before: Vec<f64> = te
        .x
        .rows()
        .into_iter()
        .map(|r| exact_empiricalized_lml(&before_model, &r.to_vec(), &tr.x, &mut CostMeter::default()).unwrap())
        .collect();
    let (after, _) = evaluate_ll(&after_model, &tr.x, &te.x, &desk_eval(1)).unwrap();
    let (mb, _) = mean_stderr(&before);
    let (ma, _) = mean_stderr(&after);
    let pass = ks <= 0.05 && (mb - ma).abs() <= 0.05;
    verdict(
        "copula recovery",
        pass,
        &format!(
            "KS {ks:.4} on {} latents (mean {:.3}, std {:.3}); test LL before {mb:.4}, after {ma:.4}; encoder MSE {:.2e}, decoder KL {:.2e}",
            tr.len(),
            report.latent_mean,
            report.latent_std,
            report.encoder_mse,
            report.decoder_kl
        ),
    );
}

#[test]
fn non_identifiability() {
    let mut lines = Vec::new();
    let mut pass = true;
    for name in [GeneratorName::AbsValue, GeneratorName::Circle] {
        let (ds, gt) = dataset(name, 1000, 0);
        let points = sample_points(ds.len(), 50, &mut SeededRng::new(0, 81));
        let vae = TrainConfig { method: Method::Vae, s: 1, seed: 0, ..Default::default() };
        let r = non_identifiability_study(&ds, &gt, &vae, &points).unwrap();
        pass &= r.table_identical && r.median_gap <= 0.15;
        lines.push(format!(
            "{} identical table {}, medians {:.3} / {:.3} (gap {:.3}), decoder gap {:.1} σ",
            name.as_str(),
            r.table_identical,
            r.variant1_median,
            r.variant2_median,
            r.median_gap,
            r.decoder_gap_sigmas
        ));
    }
    verdict("non-identifiability", pass, &lines.join("; "));
}
