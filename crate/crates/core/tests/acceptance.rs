//! End-to-end acceptance checks. Prints one line per criterion and exits
//! non-zero if any criterion fails.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use kaf_core::adaptive::{adaptive_run, blend, AdaptiveConfig};
use kaf_core::data::{embed, embed_targets, lorenz_generate, standardize, EmbeddedDataset, LorenzConfig, TimeSeries};
use kaf_core::eval::{gram_offdiag_energy, run_experiment, ExperimentConfig};
use kaf_core::inference::{initial_params, map_fit, mcmc_sample, MapConfig, McmcConfig};
use kaf_core::kernel::{gram, kernel_vector, Dictionary};
use kaf_core::klms::{klms_predict, klms_step, KlmsState, Sparsifier};
use kaf_core::model::{from_unconstrained, predict, to_unconstrained, HyperParams, ModelParams, ParamMask, Posterior};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_data(rng: &mut ChaCha8Rng, n: usize, d: usize) -> EmbeddedDataset {
    let inputs: Vec<f64> = (0..n * d).map(|_| normal(rng)).collect();
    let targets: Vec<f64> = (0..n)
        .map(|i| inputs[i * d].sin() + 0.3 * inputs[i * d + d - 1] + 0.1 * normal(rng))
        .collect();
    EmbeddedDataset::from_pairs(d, inputs, targets).unwrap()
}

fn random_params(rng: &mut ChaCha8Rng, n: usize, d: usize) -> ModelParams {
    ModelParams {
        alpha: (0..n).map(|_| normal(rng)).collect(),
        dictionary: Dictionary::new(d, (0..n * d).map(|_| normal(rng)).collect()).unwrap(),
        sigma_k: rng.gen_range(0.5..2.0),
        sigma_eps: rng.gen_range(0.2..1.0),
        l_alpha: rng.gen_range(0.5..2.0),
        l_dict: rng.gen_range(0.5..2.0),
    }
}

fn lorenz() -> TimeSeries {
    let raw = lorenz_generate(&LorenzConfig::default()).unwrap();
    standardize(&raw).unwrap().0
}

/// Central differences of the unconstrained log-density against the
/// analytic gradient.
fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (n, d, h) = (5, 5, 1e-5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let data = random_data(&mut rng, 40, d);
        let p = random_params(&mut rng, n, d);
        let post = Posterior::new(&data, HyperParams::default());
        let g = post.log_density(&p, true).unwrap().gradient.unwrap();
        let u = to_unconstrained(&p);
        for i in 0..u.len() {
            let (mut up, mut dn) = (u.clone(), u.clone());
            up[i] += h;
            dn[i] -= h;
            let fd = (post.unconstrained(&up, n, d) - post.unconstrained(&dn, n, d)) / (2.0 * h);
            let rel = (g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1.0);
            worst = worst.max(rel);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        worst < 1e-5 && secs < 30.0,
        format!("max relative error {worst:.2e} over 100 draws (< 1e-5), {secs:.1}s (< 30s)"),
    )
}

struct Conjugate {
    data: EmbeddedDataset,
    params: ModelParams,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

/// Weights-only subcase: Gaussian prior and likelihood give a Gaussian
/// posterior with precision `K'K / s2 + I / l2`.
fn conjugate(seed: u64) -> Conjugate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, d) = (5, 3);
    let data = random_data(&mut rng, 40, d);
    let mut params = random_params(&mut rng, n, d);
    params.alpha = vec![0.0; n];
    let rows: Vec<Vec<f64>> = data
        .inputs()
        .map(|x| kernel_vector(x, &params.dictionary, params.sigma_k).unwrap())
        .collect();
    let k = DMatrix::from_fn(data.len(), n, |i, j| rows[i][j]);
    let y = DVector::from_column_slice(data.targets());
    let s2 = params.sigma_eps * params.sigma_eps;
    let l2 = params.l_alpha * params.l_alpha;
    let precision = k.transpose() * &k / s2 + DMatrix::identity(n, n) / l2;
    let cov = precision.try_inverse().unwrap();
    let mean = &cov * (k.transpose() * y / s2);
    Conjugate { data, params, mean, cov }
}

fn criterion_2() -> Outcome {
    let cfg = MapConfig {
        max_iters: 20_000,
        grad_tol: 1e-11,
        mask: ParamMask::alpha_only(),
        ..MapConfig::default()
    };
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let c = conjugate(seed);
        let fit = map_fit(&c.params, &HyperParams::default(), &c.data, &cfg).unwrap();
        for (a, b) in fit.alpha.iter().zip(c.mean.iter()) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(worst < 1e-6, format!("max |alpha - ridge| {worst:.2e} over 20 instances (< 1e-6)"))
}

fn criterion_3() -> Outcome {
    let c = conjugate(7);
    let cfg = McmcConfig {
        n_samples: 10_000,
        n_burnin: 2_000,
        seed: 11,
        mask: ParamMask::alpha_only(),
        ..McmcConfig::default()
    };
    let chain = mcmc_sample(&c.params, &HyperParams::default(), &c.data, &cfg).unwrap();
    let n = c.mean.len();
    let batches = 50;
    let size = chain.len() / batches;
    let mut worst = 0.0f64;
    for j in 0..n {
        let xs: Vec<f64> = chain.draws.iter().map(|p| p.alpha[j]).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let bm: Vec<f64> = xs.chunks(size).map(|b| b.iter().sum::<f64>() / b.len() as f64).collect();
        let var_b = bm.iter().map(|b| (b - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
        let mcse = (var_b / batches as f64).sqrt();
        worst = worst.max((m - c.mean[j]).abs() / mcse);
    }
    let acc = chain.acceptance_rate;
    let sd0 = c.cov[(0, 0)].sqrt();
    outcome(
        worst < 3.0 && acc > 0.1 && acc < 0.6,
        format!("max |mean - exact| / MCSE {worst:.2} (< 3), acceptance {acc:.3} in (0.1, 0.6), posterior sd[0] {sd0:.3}"),
    )
}

fn lorenz_fit(series: &TimeSeries, train: usize, n: usize, seed: u64) -> ModelParams {
    let data = embed_targets(series, 5, 0..train).unwrap();
    let init = initial_params(&data, n, seed).unwrap();
    map_fit(&init, &HyperParams::default(), &data, &MapConfig { seed, ..MapConfig::default() }).unwrap()
}

fn criterion_4() -> Outcome {
    let series = lorenz();
    let all = embed(&series, 5).unwrap();
    let mut lines = Vec::new();
    let mut pass = true;
    for n in [5, 25, 50] {
        let subset: Vec<&[f64]> = all.inputs().take(n).collect();
        let subset = Dictionary::from_centres(&subset).unwrap();
        let mut wins = 0;
        let mut worst: f64 = 0.0;
        for seed in 0..5 {
            let p = lorenz_fit(&series, 250, n, seed);
            let learnt = gram_offdiag_energy(&p.dictionary, p.sigma_k).unwrap();
            let first = gram_offdiag_energy(&subset, p.sigma_k).unwrap();
            wins += (learnt < first) as usize;
            worst = worst.max(learnt);
        }
        pass &= wins == 5;
        lines.push(format!("N={n}: {wins}/5 (max learnt {worst:.3})"));
    }
    outcome(pass, format!("learnt < first-N-inputs energy: {}", lines.join(", ")))
}

fn criterion_5() -> Outcome {
    let series = lorenz();
    let all = embed(&series, 5).unwrap();
    let held_out = |p: &ModelParams| {
        let skip = 250 - all.first_target();
        let errs: Vec<f64> = all
            .inputs()
            .zip(all.targets())
            .skip(skip)
            .map(|(x, y)| (predict(p, x).unwrap() - y).powi(2))
            .collect();
        errs.iter().sum::<f64>() / errs.len() as f64
    };
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..5 {
        let small = held_out(&lorenz_fit(&series, 35, 5, seed));
        let large = held_out(&lorenz_fit(&series, 250, 5, seed));
        wins += (large < small) as usize;
        pairs.push(format!("{small:.3}/{large:.4}"));
    }
    outcome(
        wins >= 4,
        format!("MSE on indices >= 250, train 35 vs 250: {} ({wins}/5 improve, need 4)", pairs.join(" ")),
    )
}

fn wind_config(kind: &str, seed: u64, out: &std::path::Path, extra: &[&str]) -> ExperimentConfig {
    let mut o: Vec<String> = vec![
        format!("experiment.kind=\"{kind}\""),
        format!("experiment.seed={seed}"),
        format!("experiment.output_dir=\"{}\"", out.display()),
        "data.source=\"wind\"".into(),
    ];
    o.extend(extra.iter().map(|s| s.to_string()));
    ExperimentConfig::parse("", &o).unwrap()
}

const PRETRAIN: &[&str] = &["model.dict_size=25", "pretrain.train_len=270", "klms.eval_start=270"];
const ADAPTIVE: &[&str] = &[
    "model.dict_size=10",
    "adaptive.rho=0.9",
    "adaptive.window_len=25",
    "adaptive.n_samples=100",
    "adaptive.eval_start=270",
];

/// Pre-trained and standard KLMS MSE for each of ten wind seeds.
fn wind_pretrain(dir: &std::path::Path) -> Vec<(f64, f64)> {
    (0..10)
        .map(|seed| {
            let cfg = wind_config("pretrain-klms", seed, &dir.join(format!("pre{seed}")), PRETRAIN);
            let r = run_experiment(&cfg).unwrap();
            (r.mse, r.details["standard"]["mse"].as_f64().unwrap())
        })
        .collect()
}

fn criterion_6(pre: &[(f64, f64)]) -> Outcome {
    let wins = pre.iter().filter(|(p, s)| p <= s).count();
    let shown: Vec<String> = pre.iter().map(|(p, s)| format!("{p:.3}/{s:.3}")).collect();
    outcome(
        wins >= 8,
        format!("pre-trained <= standard in {wins}/10 (need 8): {}", shown.join(" ")),
    )
}

fn criterion_7(dir: &std::path::Path, pre: &[(f64, f64)]) -> Outcome {
    let t0 = Instant::now();
    let mut wins = 0;
    let mut shown = Vec::new();
    for (seed, (p, _)) in pre.iter().enumerate() {
        let cfg = wind_config("adaptive", seed as u64, &dir.join(format!("ad{seed}")), ADAPTIVE);
        let r = run_experiment(&cfg).unwrap();
        wins += (r.mse <= *p) as usize;
        shown.push(format!("{:.3}/{p:.3}", r.mse));
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        wins >= 7 && secs < 600.0,
        format!(
            "adaptive <= pre-trained in {wins}/10 (need 7), {secs:.1}s for 10 runs: {}",
            shown.join(" ")
        ),
    )
}

fn criterion_8(dir: &std::path::Path) -> Outcome {
    let kinds: [(&str, &[&str]); 5] = [
        ("fit-offline", &["data.source=\"lorenz\"", "offline.train_sizes=[35, 250]", "model.summary=\"mean\"", "mcmc.n_samples=300", "mcmc.n_burnin=300"]),
        ("pretrain-klms", PRETRAIN),
        ("klms", &["klms.target_dict=25"]),
        ("sweep-lr", &["klms.target_dict=25"]),
        ("adaptive", ADAPTIVE),
    ];
    let mut bad = Vec::new();
    for (kind, extra) in kinds {
        let runs: Vec<_> = ["a", "b", "c"]
            .iter()
            .map(|tag| {
                let out = dir.join(format!("det-{kind}-{tag}"));
                let mut extra: Vec<&str> = extra.to_vec();
                if *tag == "c" {
                    extra.push("experiment.parallel=false");
                }
                (out.clone(), run_experiment(&wind_config(kind, 5, &out, &extra)).unwrap())
            })
            .collect();
        let (ref_dir, ref_report) = &runs[0];
        for (d, r) in &runs[1..] {
            for f in &ref_report.files {
                let name = f.file_name().unwrap();
                let (a, b) = (std::fs::read(f).unwrap(), std::fs::read(d.join(name)).unwrap());
                let same = if name == "report.json" {
                    strip_volatile(&a) == strip_volatile(&b)
                } else {
                    a == b
                };
                if !same {
                    bad.push(format!("{kind}/{}", name.to_string_lossy()));
                }
            }
            let _ = ref_dir;
            let _ = r;
        }
    }
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            "all outputs of 5 experiment kinds byte-identical across reruns and sequential execution (report.json compared without runtime, output path and parallel flag)".into()
        } else {
            format!("differences in {}", bad.join(", "))
        },
    )
}

fn strip_volatile(bytes: &[u8]) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
    v.as_object_mut().unwrap().remove("runtime_seconds");
    let exp = v["config"]["experiment"].as_object_mut().unwrap();
    exp.remove("output_dir");
    exp.remove("parallel");
    v
}

fn criterion_9() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    // Constant series.
    let c = TimeSeries::new("c", vec![0.7; 400]).unwrap();
    check("standardize rejects constant", standardize(&c).is_err());
    let run = adaptive_run(&c, &AdaptiveConfig::default()).unwrap();
    let v = &run.predictions.values;
    let q = &v[3 * v.len() / 4..];
    let block = q.iter().map(|p| (p - 0.7).powi(2)).sum::<f64>() / q.len() as f64;
    check("adaptive constant final-quarter MSE < 1e-3", block < 1e-3 && v.iter().all(|p| p.is_finite()));

    // Single-centre dictionaries.
    let one = Dictionary::new(2, vec![0.3, -0.1]).unwrap();
    let g = gram(&one, 1.0).unwrap();
    check("1x1 Gram is [1]", g.size() == 1 && g.get(0, 0) == 1.0);
    check("energy needs two centres", gram_offdiag_energy(&one, 1.0).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data = random_data(&mut rng, 30, 2);
    let p1 = ModelParams {
        alpha: vec![0.5],
        dictionary: one.clone(),
        sigma_k: 1.0,
        sigma_eps: 0.5,
        l_alpha: 1.0,
        l_dict: 1.0,
    };
    let ld = Posterior::new(&data, HyperParams::default()).log_density(&p1, true).unwrap();
    check(
        "N=1 density and gradient finite",
        ld.value.is_finite() && ld.gradient.unwrap().iter().all(|g| g.is_finite()),
    );
    let fit = map_fit(&p1, &HyperParams::default(), &data, &MapConfig::default()).unwrap();
    check("N=1 MAP finite", to_unconstrained(&fit).iter().all(|u| u.is_finite()));

    // Empty KLMS dictionaries.
    let mut s = KlmsState::new(2, 1.0, 0.2, Sparsifier::Novelty { dist: 0.1, err: 0.0 }).unwrap();
    check("empty dictionary predicts 0", klms_predict(&s, &[1.0, 2.0]).unwrap() == 0.0);
    let r = klms_step(&mut s, &[1.0, 2.0], 3.0).unwrap();
    check(
        "first step adds weight eta*y",
        r.centre_added && s.dict_size() == 1 && (s.alpha[0] - 0.6).abs() < 1e-15,
    );

    // Rho-limit blends.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random_params(&mut rng, 3, 2);
    let b = random_params(&mut rng, 3, 2);
    let near = blend(&a, &b, 1.0 - 1e-12).unwrap();
    let close = to_unconstrained(&near)
        .iter()
        .zip(to_unconstrained(&a))
        .all(|(x, y)| (x - y).abs() < 1e-9);
    check("rho -> 1 returns the window estimate", close);
    check("fixed point", blend(&a, &a, 0.5).unwrap() == from_unconstrained(&to_unconstrained(&a), 3, 2).unwrap());
    let low = blend(&a, &b, 1e-12).unwrap();
    check("rho -> 0 stays feasible", low.validate().is_ok() && low.sigma_k > 0.0);
    check("rho outside (0,1) rejected", blend(&a, &b, 0.0).is_err() && blend(&a, &b, 1.0).is_err());

    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "constant series, single-centre, empty-dictionary and rho-limit cases all behave, no non-finite values".into()
        } else {
            format!("failed: {}", failures.join("; "))
        },
    )
}

fn main() {
    // `cargo test` passes harness flags such as `--list`; this target has no
    // individually addressable tests.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let mut results: Vec<(usize, Outcome)> = vec![
        (1, criterion_1()),
        (2, criterion_2()),
        (3, criterion_3()),
        (4, criterion_4()),
        (5, criterion_5()),
    ];
    let pre = wind_pretrain(dir.path());
    results.push((6, criterion_6(&pre)));
    results.push((7, criterion_7(dir.path(), &pre)));
    results.push((8, criterion_8(dir.path())));
    results.push((9, criterion_9()));

    let mut failed = 0;
    for (k, o) in &results {
        println!("criterion {k}: {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += (!o.pass) as usize;
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
