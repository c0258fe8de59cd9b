//! End-to-end behaviour of the three stages at the scaled experimental setting
//! (n = 40, r = 2, K = 3, N = 90nrK).

use mixsense::dataset::{sample_dataset, StorageMode};
use mixsense::init::initialize_all;
use mixsense::metrics::{rel_fro_error, subspace_distance};
use mixsense::mlr::TensorParams;
use mixsense::pipeline::{run_pipeline, PipelineConfig, RecoveryReport};
use mixsense::scaledtgd::{run_scaledtgd, TgdConfig};
use mixsense::spectral::{data_matrix, subspace_estimate};
use mixsense::synth::{equal_ground_truth, GroundTruth};

const N: usize = 40;
const R: usize = 2;
const K: usize = 3;
const SAMPLES: usize = 90 * N * R * K;

fn planted(seed: u64) -> GroundTruth {
    equal_ground_truth(N, R, K, seed).unwrap()
}

fn supplied(seed: u64) -> PipelineConfig {
    PipelineConfig {
        k: K,
        supplied_r: Some(R * K),
        supplied_ranks: Some(vec![R; K]),
        supplied_p: Some(vec![1.0 / K as f64; K]),
        t0: 150,
        seed,
        ..PipelineConfig::default()
    }
}

fn estimated(seed: u64) -> PipelineConfig {
    PipelineConfig {
        k: K,
        t0: 150,
        seed,
        ..PipelineConfig::default()
    }
}

fn run(seed: u64, sigma: f64, cfg: &PipelineConfig) -> mixsense::Result<RecoveryReport> {
    let gt = planted(seed);
    let d = sample_dataset(&gt, SAMPLES, sigma, seed + 1000, StorageMode::Stored)?;
    run_pipeline(&d, None, cfg, Some(&gt))
}

#[test]
fn stages_chain_by_hand() {
    let gt = planted(21);
    let d = sample_dataset(&gt, SAMPLES, 0.0, 22, StorageMode::Stored).unwrap();
    let sub = subspace_estimate(&data_matrix(&d).unwrap(), R * K).unwrap();
    let (u, v) = gt.joint_subspaces().unwrap();
    assert!(subspace_distance(&sub.u, &u).unwrap() < 1.0);
    assert!(subspace_distance(&sub.v, &v).unwrap() < 1.0);

    let init = initialize_all(&d, &sub, K, Some(&[R; K]), 1e-8, 23, TensorParams::default()).unwrap();
    assert_eq!(init.factors.len(), K);
    let tgd = TgdConfig::new(1.3 * K as f64, 0.8 / K as f64, 150);
    let mut matched = [false; K];
    for f0 in init.factors {
        let start = f0.product();
        let (t, _) = gt
            .matrices()
            .iter()
            .enumerate()
            .map(|(t, m)| (t, rel_fro_error(&start, m).unwrap()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let out = run_scaledtgd(&d, f0, &tgd, Some(&gt.matrices()[t])).unwrap();
        let err = rel_fro_error(&out.last.product(), &gt.matrices()[t]).unwrap();
        assert!(err <= 1e-9, "component matched to truth {t}: {err:e}");
        matched[t] = true;
    }
    assert!(
        matched.iter().all(|&m| m),
        "each planted component recovered once"
    );
}

#[test]
fn small_noise_reaches_a_plateau() {
    let rep = run(31, 1e-5, &supplied(31)).unwrap();
    for (j, c) in rep.per_component.iter().enumerate() {
        let errs: Vec<f64> = c.trace.records.iter().filter_map(|r| r.rel_error).collect();
        let last = *errs.last().unwrap();
        assert!(last <= 1e-3, "component {j}: plateau {last:e}");
        // Flat over the last 20 iterations, well above the noiseless floor.
        let tail = &errs[errs.len() - 20..];
        let (lo, hi) = tail
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), &e| (a.min(e), b.max(e)));
        assert!(hi <= 1.05 * lo, "component {j}: tail spans [{lo:e}, {hi:e}]");
        assert!(lo > 1e-8, "component {j}: {lo:e}");
    }
}

#[test]
fn report_json_carries_every_field() {
    let gt = equal_ground_truth(10, 1, 2, 5).unwrap();
    let d = sample_dataset(&gt, 2000, 1e-3, 6, StorageMode::Stored).unwrap();
    let cfg = PipelineConfig {
        k: 2,
        supplied_p: Some(vec![0.5, 0.5]),
        t0: 10,
        ..PipelineConfig::default()
    };
    let rep = run_pipeline(&d, None, &cfg, Some(&gt)).unwrap();
    let v: serde_json::Value = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
    for key in [
        "stage1",
        "weights",
        "permutation",
        "per_component",
        "estimates",
        "warnings",
        "proportion_source",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    for key in ["R_used", "dist_u", "dist_v"] {
        assert!(v["stage1"].get(key).is_some(), "missing stage1.{key}");
    }
    for key in ["rel_error", "init_error", "trace"] {
        assert!(
            v["per_component"][0].get(key).is_some(),
            "missing per_component.{key}"
        );
    }
    let mut perm: Vec<u64> = v["permutation"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_u64().unwrap())
        .collect();
    perm.sort();
    assert_eq!(perm, vec![0, 1]);
    assert_eq!(v["estimates"][0].as_array().unwrap().len(), 10);
}

/// Supplied (R, ranks, p_k) versus everything estimated from the data, at a
/// noise level where the final error is set by the noise rather than by
/// floating-point round-off.
#[test]
fn estimated_parameters_match_supplied_ones() {
    let sigma = 1e-4;
    let mut agree = 0;
    let mut detail = Vec::new();
    for seed in 0..10 {
        let a = run(seed, sigma, &supplied(seed))
            .ok()
            .and_then(|r| r.max_rel_error());
        let b = run(seed, sigma, &estimated(seed))
            .map_err(|e| e.to_string())
            .map(|r| r.max_rel_error());
        let within = match (a, &b) {
            (Some(a), Ok(Some(b))) => a.max(*b) <= 2.0 * a.min(*b),
            _ => false,
        };
        agree += within as usize;
        detail.push(format!("seed {seed}: supplied {a:?} estimated {b:?}"));
    }
    assert!(agree >= 8, "{agree}/10 within 2x\n{}", detail.join("\n"));
}
