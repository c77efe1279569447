//! Acceptance criteria, one line of output per criterion.
//!
//! Runs under `cargo test`; exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use hypc_core::codec::error_bound;
use hypc_core::container::{encode_hcmp, encode_ntb};
use hypc_core::inference::{decode_network, pipelined_forward, random_network, toy_dataset};
use hypc_core::percolation::{estimate_threshold, solve_p0};
use hypc_core::*;
use ndarray::Array2;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_weights(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-0.5f32..0.5)).collect()
}

fn grid_params() -> EncodeParams {
    EncodeParams {
        l: 0.1,
        u: 225,
        max_class: 3,
        direction: DirectionMode::GridShear,
    }
}

fn ac1_round_trip_bound() -> Outcome {
    let start = Instant::now();
    let w = random_weights(1_000_000, 1);
    let enc = encode_layer(&w, "w", &[1_000_000], &grid_params()).map_err(|e| e.to_string())?;
    let q = decode_layer(&enc).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let c = *enc.config();
    let thetas = enc.thetas().map_err(|e| e.to_string())?;
    let mut violations = 0usize;
    let mut worst = 0.0f64;
    for (g, &t) in thetas.iter().enumerate() {
        let bound = error_bound(&c, (t / c.u) as u16).map_err(|e| e.to_string())?;
        for i in [2 * g, 2 * g + 1] {
            let err = (w[i] as f64 - q[i] as f64).abs();
            worst = worst.max(err / bound);
            if err > bound {
                violations += 1;
            }
        }
    }
    check(
        violations == 0 && elapsed < Duration::from_secs(30),
        format!("violations={violations} worst_err/bound={worst:.4} time={elapsed:.2?}"),
    )
}

fn ac2_payload_ratio() -> Outcome {
    let w = random_weights(1_000_000, 2);
    let bundle = TensorBundle::new(vec![Tensor::new("w", vec![1000, 1000], w).unwrap()]).unwrap();
    let model = compress_bundle(&bundle, grid_params(), &CompressionPlan::default(), 1)
        .map_err(|e| e.to_string())?;
    let bw = model.layers[0].bit_width();
    let payload = analysis::payload_ratio(bw);
    let ntb = encode_ntb(&bundle).unwrap().len() as f64;
    let hcmp = encode_hcmp(&model).unwrap().len() as f64;
    let file_ratio = compression_ratio(ntb, hcmp).unwrap();
    let payload_bytes = model.layers[0].payload().len() as f64;
    let overhead = (hcmp - payload_bytes) / hcmp;
    check(
        bw == 10
            && (payload - 6.4).abs() < 1e-12
            && ntb >= 4e6
            && file_ratio >= 6.2
            && overhead <= 0.03,
        format!(
            "bit_width={bw} payload_ratio={payload:.3} file_ratio={file_ratio:.4} ntb_bytes={ntb} overhead={:.5}%",
            overhead * 100.0
        ),
    )
}

fn brute_nearest(points: &[Point], q: Point) -> usize {
    let mut best = (0usize, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let (dx, dy) = (p[0] - q[0], p[1] - q[1]);
        let d = dx * dx + dy * dy;
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

fn ac3_oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for u in [4u32, 225, 361, 4096] {
        let config = CodebookConfig {
            l: 0.1,
            u,
            max_class: 3,
            direction: DirectionMode::GridShear,
            centroid: [0.2, -0.1],
            l_f: 0.5,
        };
        let cb = build_codebook(&config).unwrap();
        let (lo, hi) = config.bounds();
        for _ in 0..10_000 {
            let q = [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])];
            if cb.nearest(q).0 != brute_nearest(cb.points(), q) {
                mismatches += 1;
            }
        }
    }
    check(mismatches == 0, format!("mismatches={mismatches} over 4x10^4 queries"))
}

fn ac4_covering_radius() -> Outcome {
    let config = CodebookConfig {
        l: 0.1,
        u: 225,
        max_class: 0,
        direction: DirectionMode::GridShear,
        centroid: [0.0, 0.0],
        l_f: 0.0,
    };
    let cb = build_codebook(&config).unwrap();
    let (lo, hi) = config.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let worst = (0..100_000)
        .map(|_| {
            let q = [rng.gen_range(lo[0]..=hi[0]), rng.gen_range(lo[1]..=hi[1])];
            cb.nearest(q).1
        })
        .fold(0.0, f64::max);
    let bound = 2f64.sqrt() * 0.1 / 15.0;
    check(worst <= bound, format!("max_dist={worst:.6} bound={bound:.6}"))
}

fn ac5_toy_accuracy() -> Outcome {
    let start = Instant::now();
    let (_, test) = toy_dataset();
    let net = train_toy(7);
    let base = eval_accuracy(&net, &test).unwrap();
    let params = EncodeParams {
        l: 0.01,
        u: 361,
        max_class: 3,
        direction: DirectionMode::GridShear,
    };
    let model = compress_bundle(&net.to_bundle(), params, &CompressionPlan::default(), 1)
        .map_err(|e| e.to_string())?;
    let compressed = eval_accuracy(&decode_network(&model).unwrap(), &test).unwrap();
    let drop_pp = (base - compressed) * 100.0;
    let elapsed = start.elapsed();
    check(
        base >= 0.95 && drop_pp <= 1.0 && elapsed < Duration::from_secs(60),
        format!("acc={base:.4} compressed_acc={compressed:.4} drop={drop_pp:.2}pp time={elapsed:.2?}"),
    )
}

fn ac6_pipeline_equality() -> Outcome {
    let dims = [64, 128, 128, 96, 96, 64, 64, 32, 10];
    let net = random_network(&dims, 6).unwrap();
    let model = compress_bundle(&net.to_bundle(), grid_params(), &CompressionPlan::default(), 1)
        .map_err(|e| e.to_string())?;
    let reference = decode_network(&model).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    for batch in [1usize, 2, 4, 8] {
        let x = Array2::from_shape_fn((batch, 64), |_| rng.gen_range(-1.0f32..1.0));
        let seq = mlp_forward(&reference, &x).unwrap();
        let pip = pipelined_forward(&model, &x).map_err(|e| e.to_string())?;
        let same = seq.shape() == pip.shape()
            && seq.iter().zip(pip.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            return Err(format!("batch {batch}: pipelined output differs"));
        }
    }
    Ok("8 layers, batch sizes 1,2,4,8 bit-identical".into())
}

fn ac7_percolation_r2() -> Outcome {
    let start = Instant::now();
    let e = estimate_threshold(2, 200, 200, 200, 12, 7).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(
        (0.48..=0.52).contains(&e.p_hat) && elapsed < Duration::from_secs(60),
        format!("p_hat={:.5} interval=[{:.5},{:.5}] time={elapsed:.2?}", e.p_hat, e.interval[0], e.interval[1]),
    )
}

fn ac8_root_p0() -> Outcome {
    let p = solve_p0();
    let residual = (2.0 * p + p * p - p.powi(4) - 1.0).abs();
    check(
        (p - 0.425787).abs() <= 1e-5 && residual < 1e-9,
        format!("p0={p:.8} residual={residual:.2e}"),
    )
}

fn ac9_percolation_r3() -> Outcome {
    let e = estimate_threshold(3, 200, 200, 200, 12, 9).map_err(|e| e.to_string())?;
    check(
        e.p_hat >= 1.0 / 3.0 && e.p_hat <= 0.431,
        format!("p_hat={:.5} bounds=[0.33333,0.431]", e.p_hat),
    )
}

fn ac10_error_bound_theorem() -> Outcome {
    let r = validate_error_bound(64, 128, &grid_params(), 100, 10).map_err(|e| e.to_string())?;
    check(
        r.pass_fraction == 1.0 && r.relu_pass_fraction == 1.0,
        format!(
            "trials={} pass={} relu_pass={} max_ratio={:.4} eps_max={:.5}",
            r.trials, r.pass_fraction, r.relu_pass_fraction, r.max_ratio_observed, r.epsilon_max
        ),
    )
}

fn layer_strategy() -> impl Strategy<Value = Vec<f32>> {
    prop_oneof![
        Just(Vec::new()),
        (1usize..64).prop_flat_map(|n| proptest::collection::vec(-3.0f32..3.0, n)),
        (1usize..64, -1.0f32..1.0).prop_map(|(n, v)| vec![v; n]),
        (0usize..32).prop_flat_map(|k| proptest::collection::vec(-1.0f32..1.0, 2 * k + 1)),
    ]
}

fn ac11_format_round_trips() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (
        proptest::collection::vec(layer_strategy(), 0..5),
        0.005f64..0.5,
        1u32..500,
        1u16..6,
    );
    let result = runner.run(&strategy, |(layers, l, u, max_class)| {
        let tensors: Vec<Tensor> = layers
            .into_iter()
            .enumerate()
            .map(|(i, d)| Tensor::new(format!("t{i}"), vec![d.len() as u64], d).unwrap())
            .collect();
        let bundle = TensorBundle::new(tensors).unwrap();
        let ntb = encode_ntb(&bundle).unwrap();
        let back = container::decode_ntb(&ntb).unwrap();
        prop_assert_eq!(encode_ntb(&back).unwrap(), ntb);
        for (a, b) in bundle.tensors.iter().zip(&back.tensors) {
            prop_assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let params = EncodeParams { l, u, max_class, direction: DirectionMode::GridShear };
        let model = compress_bundle(&bundle, params, &CompressionPlan::default(), 1).unwrap();
        let bytes = encode_hcmp(&model).unwrap();
        let reloaded = container::decode_hcmp(&bytes).unwrap();
        prop_assert_eq!(&reloaded, &model);
        prop_assert_eq!(encode_hcmp(&reloaded).unwrap(), bytes);
        let before = decompress_model(&model).unwrap();
        let after = decompress_model(&reloaded).unwrap();
        for (a, b) in before.tensors.iter().zip(&after.tensors) {
            prop_assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        Ok(())
    });
    match result {
        Ok(()) => Ok("1000 randomized NTB+HCMP cases bit-exact".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn ac12_ablation() -> Outcome {
    let w = random_weights(1_000_000, 12);
    let time = |mode| {
        let t = Instant::now();
        let enc = encode_layer_with(&w, "w", &[1_000_000], &grid_params(), mode).unwrap();
        (t.elapsed(), enc)
    };
    let (full, enc_full) = time(SearchMode::Full);
    let (naive, enc_naive) = time(SearchMode::Naive);
    let speedup = naive.as_secs_f64() / full.as_secs_f64();
    check(
        speedup >= 10.0 && enc_full == enc_naive,
        format!("full={full:.2?} naive={naive:.2?} speedup={speedup:.1}x identical_output={}", enc_full == enc_naive),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("AC1 round-trip error bound (10^6 weights)", ac1_round_trip_bound),
        ("AC2 payload and file compression ratio", ac2_payload_ratio),
        ("AC3 k-d tree equals exhaustive scan", ac3_oracle_equivalence),
        ("AC4 covering radius U=225", ac4_covering_radius),
        ("AC5 toy accuracy drop after compression", ac5_toy_accuracy),
        ("AC6 pipelined forward bitwise equality", ac6_pipeline_equality),
        ("AC7 percolation threshold r=2", ac7_percolation_r2),
        ("AC8 root p0 of 2p+p^2-p^4=1", ac8_root_p0),
        ("AC9 percolation threshold r=3 bounds", ac9_percolation_r3),
        ("AC10 layer-output error bound", ac10_error_bound_theorem),
        ("AC11 NTB/HCMP bit-exact round trips", ac11_format_round_trips),
        ("AC12 ablation full vs naive speedup", ac12_ablation),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        match run() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
