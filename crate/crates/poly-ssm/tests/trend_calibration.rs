//! Scratch harness for sizing the trend runs. Deleted once the acceptance
//! budget is fixed.

use std::time::Instant;

use poly_ssm::datasets::{generate_count_in_row, generate_regression};
use poly_ssm::trainer::{
    train, AdamConfig, HeadConfig, LossKind, ModelConfig, ModelFamily, SupervisedData,
    TrainConfig,
};

fn count_split(n: usize, l: usize, seed: u64) -> SupervisedData {
    let ds = generate_count_in_row(n, l, seed, true).unwrap();
    SupervisedData::from_count_in_row(&ds).unwrap()
}

fn run(
    label: &str,
    cfg: &ModelConfig,
    lr: f64,
    epochs: usize,
    seed: u64,
    train_data: &SupervisedData,
    test_data: &SupervisedData,
    loss: LossKind,
) -> f64 {
    let tc = TrainConfig {
        adam: AdamConfig {
            lr,
            ..AdamConfig::default()
        },
        batch_size: 64,
        epochs,
        seed,
        loss,
    };
    let t0 = Instant::now();
    let (_, metrics) = train(cfg, &tc, train_data, test_data).unwrap();
    println!(
        "{label} seed {seed}: metric {:.4} best_epoch {} wall {:.1}s",
        metrics.final_metric,
        metrics.best_epoch,
        t0.elapsed().as_secs_f64()
    );
    metrics.final_metric
}

#[test]
#[ignore]
fn classification_trend() {
    let l = 20;
    let train_data = count_split(4000, l, 101);
    let test_data = count_split(1000, l, 102);
    let s6 = ModelConfig {
        family: ModelFamily::S6,
        n_layers: 1,
        d: 2,
        n: 16,
        use_pe: false,
        head: HeadConfig::Classification { classes: l + 1 },
    };
    let mut s6_acc = 0.0;
    for seed in 0..3 {
        s6_acc += run("s6 d2", &s6, 1e-3, 400, seed, &train_data, &test_data, LossKind::CrossEntropy);
    }
    println!("s6 mean {:.4}", s6_acc / 3.0);
}

#[test]
#[ignore]
fn attention_trend() {
    let l = 20;
    let train_data = count_split(4000, l, 101);
    let test_data = count_split(1000, l, 102);
    let attn = ModelConfig {
        family: ModelFamily::SoftmaxAttention,
        n_layers: 4,
        d: 4,
        n: 1,
        use_pe: true,
        head: HeadConfig::Classification { classes: l + 1 },
    };
    let mut acc = 0.0;
    for seed in 0..3 {
        acc += run("attn d4x4", &attn, 1e-3, 200, seed, &train_data, &test_data, LossKind::CrossEntropy);
    }
    println!("attn mean {:.4}", acc / 3.0);
}

#[test]
#[ignore]
fn regression_trend() {
    let l = 5;
    for d in [4usize, 8] {
        let (task, _) = poly_ssm::datasets::sample_random_poly_task(l, 40 + d as u64).unwrap();
        let train_ds = generate_regression(&task, 4000, 201, true).unwrap();
        let stats = train_ds.stats.unwrap();
        let mut test_ds = generate_regression(&task, 1000, 202, false).unwrap();
        test_ds.apply_stats(stats).unwrap();
        let train_data = SupervisedData::from_regression(&train_ds).unwrap();
        let test_data = SupervisedData::from_regression(&test_ds).unwrap();
        for family in [ModelFamily::S6, ModelFamily::SoftmaxAttention] {
            let cfg = ModelConfig {
                family,
                n_layers: 1,
                d,
                n: 16,
                use_pe: family == ModelFamily::SoftmaxAttention,
                head: HeadConfig::Regression,
            };
            let mut mse = 0.0;
            for seed in 0..3 {
                mse += run(
                    &format!("{family:?} d{d}"),
                    &cfg,
                    1e-3,
                    500,
                    seed,
                    &train_data,
                    &test_data,
                    LossKind::Mse,
                );
            }
            println!("{family:?} d{d} mean {:.4}", mse / 3.0);
        }
    }
}

#[test]
#[ignore]
fn gate_margins() {
    let cls = |family, n_layers, d, n, use_pe| ModelConfig {
        family,
        n_layers,
        d,
        n,
        use_pe,
        head: HeadConfig::Classification { classes: 21 },
    };
    let reg = |family, d, use_pe| ModelConfig {
        family,
        n_layers: 1,
        d,
        n: 16,
        use_pe,
        head: HeadConfig::Regression,
    };
    let configs = [
        ("s6 1L d2 cls", cls(ModelFamily::S6, 1, 2, 16, false), 20),
        ("attn 4L d4 cls", cls(ModelFamily::SoftmaxAttention, 4, 4, 1, true), 20),
        ("s6 1L d4 reg", reg(ModelFamily::S6, 4, false), 5),
        ("s6 1L d8 reg", reg(ModelFamily::S6, 8, false), 5),
        ("attn 1L d4 reg", reg(ModelFamily::SoftmaxAttention, 4, true), 5),
        ("attn 1L d8 reg", reg(ModelFamily::SoftmaxAttention, 8, true), 5),
    ];
    for (label, cfg, l) in configs {
        let mut worst = 0.0f64;
        for seed in 0..12 {
            let err = poly_ssm::trainer::grad_check_model(&cfg, l, seed, poly_ssm::trainer::GATE_EPSILON).unwrap();
            if err > worst {
                worst = err;
            }
        }
        println!("{label}: worst over 12 seeds {worst:.3e}");
    }
}

