//! Scratch pilot for sizing the heavy statistical checks. Not part of the
//! test suite; run with `cargo run --release -p cdm-bench --example pilot`.

use cdm_core::bench::{run_replicate, EngineConfigs, MethodSpec, MethodTag, MlpTrainConfig};
use cdm_core::datagen::{DgpConfig, NoiseFamily, Scenario, VarianceMode};
use cdm_core::diffusion::{train_denoiser, DiffusionTrainConfig};
use cdm_core::propensity::GbmConfig;
use cdm_core::rng::Seed;
use ndarray::Array2;
use rand::Rng;
use std::time::Instant;

fn pilot_moment_recovery() {
    let t0 = Instant::now();
    let n = 4000;
    let mut rng = Seed::from_u64(1000).rng();
    let x = Array2::from_shape_fn((n, 1), |_| rng.gen_range(0.0..1.0f64));
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let eps: f64 = rng.sample(rand_distr::StandardNormal);
            2.0 * x[[i, 0]] + 0.5 * eps
        })
        .collect();
    let cfg = DiffusionTrainConfig::default();
    let (model, report) = train_denoiser(x.view(), &y, &cfg, Seed::from_u64(1001)).unwrap();
    let train_secs = t0.elapsed().as_secs_f64();
    let samples = model
        .sample(&[0.5], 2000, &mut Seed::from_u64(1002).rng())
        .unwrap();
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let sd = (samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / samples.len() as f64)
        .sqrt();
    println!(
        "[moment] train {:.1}s ({} epochs, best {}), sample {:.1}s, mean {:.4} (want 1.0±0.15), sd {:.4} (want [0.3,0.8])",
        train_secs,
        report.epochs_run,
        report.best_epoch,
        t0.elapsed().as_secs_f64() - train_secs,
        mean,
        sd
    );
}

fn desk_engines() -> EngineConfigs {
    EngineConfigs {
        diffusion: DiffusionTrainConfig {
            steps: 300,
            beta_min: 1e-4,
            beta_max: 0.0267,
            hidden: vec![96, 96],
            epochs: 800,
            eval_every: 50,
            patience: 4,
            ..DiffusionTrainConfig::default()
        },
        propensity: GbmConfig::default(),
        mlp: MlpTrainConfig {
            hidden: vec![96, 96],
            epochs: 800,
            eval_every: 50,
            patience: 4,
            ..MlpTrainConfig::default()
        },
    }
}

fn desk_dgp(variance: VarianceMode) -> DgpConfig {
    DgpConfig {
        scenario: Scenario::Lowdim,
        noise: NoiseFamily::Gaussian,
        variance,
        d: 10,
        n_train: 2000,
        n_cal: 800,
        n_test: 500,
        seed: 0,
    }
}

fn pilot_replicate(tag: MethodTag, variance: VarianceMode, rep: u64) {
    let t0 = Instant::now();
    let spec = MethodSpec::new(tag);
    let engines = desk_engines();
    let dgp = desk_dgp(variance);
    let seed = Seed::from_u64(5000 + rep).child(&format!("pilot:{tag}"));
    let out = run_replicate(&dgp, &spec, &engines, seed).unwrap();
    println!(
        "[{tag} {variance:?} rep {rep}] {:.1}s coverage {:.3} median_len {:.3} inf {} c {:?}",
        t0.elapsed().as_secs_f64(),
        out.coverage,
        out.median_length,
        out.infinite_count,
        out.selected_bandwidth
    );
}

fn pilot_sd_diagnostic() {
    use cdm_core::datagen::{gen_dataset, sigma_fn, Split};
    let dgp = DgpConfig {
        seed: Seed::from_u64(5001).child("pilot:cdm").child("data").as_u64(),
        ..desk_dgp(VarianceMode::Hetero)
    };
    let ds = gen_dataset(&dgp).unwrap();
    let train_idx: Vec<usize> = ds
        .indices(Split::Train)
        .unwrap()
        .into_iter()
        .filter(|&i| ds.t[i])
        .collect();
    let mut x = Array2::zeros((train_idx.len(), dgp.d));
    let mut y = Vec::new();
    for (k, &i) in train_idx.iter().enumerate() {
        x.row_mut(k).assign(&ds.x.row(i));
        y.push(ds.y[i]);
    }
    let (model, rep) = train_denoiser(
        x.view(),
        &y,
        &desk_engines().diffusion,
        Seed::from_u64(5001).child("pilot:cdm").child("train"),
    )
    .unwrap();
    println!("[sddiag] epochs {} best {}", rep.epochs_run, rep.best_epoch);
    let test_idx = ds.indices(Split::Test).unwrap();
    for &i in test_idx.iter().take(8) {
        let xi: Vec<f64> = ds.x.row(i).to_vec();
        let samples = model
            .sample(&xi, 400, &mut Seed::from_u64(7000 + i as u64).rng())
            .unwrap();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let sd = (samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / samples.len() as f64)
            .sqrt();
        let mu = xi.iter().sum::<f64>() / xi.len() as f64;
        println!(
            "[sddiag] mu={:.3} true_sigma={:.3} model_sd={:.3} true_mean={:.3} model_mean={:.3}",
            mu,
            sigma_fn(&xi, VarianceMode::Hetero),
            sd,
            cdm_core::datagen::mean_lowdim(&xi),
            mean
        );
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("all");
    if which == "sddiag" {
        pilot_sd_diagnostic();
    }
    if which == "moment" || which == "all" {
        pilot_moment_recovery();
    }
    if which == "homo" || which == "all" {
        for rep in 0..2 {
            pilot_replicate(MethodTag::Cdm, VarianceMode::Homo, rep);
        }
    }
    if which == "hetero" || which == "all" {
        for rep in 0..4 {
            pilot_replicate(MethodTag::Cdm, VarianceMode::Hetero, rep);
        }
    }
}
