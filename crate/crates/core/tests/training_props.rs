//! Training-loop behavior: determinism, loss masking, descent on a fixed
//! batch, and report shape.

use spectok::data::generate_synthetic;
use spectok::model::{ModelConfig, ModelParams, PreparedGraph, TaskKind, Variant};
use spectok::training::{
    evaluate, loss, train_loop, MetricKind, SchedulerKind, TrainConfig,
};
use spectok::Tape;

fn tiny_model() -> ModelConfig {
    ModelConfig {
        variant: Variant::SubformerSpec,
        mp_layers: 1,
        mp_hidden: 4,
        d_model: 8,
        ffn_hidden: 8,
        n_layers: 1,
        n_heads: 2,
        dropout: 0.0,
        use_epe: false,
        pe_dim: 2,
        k_tree: 4,
        k_graph: 4,
        t_kernels: 4,
        readout_hidden: 8,
        ..Default::default()
    }
}

fn prepared_set(n: usize, seed: u64, config: &ModelConfig) -> Vec<PreparedGraph> {
    generate_synthetic(n, 4, 10, seed)
        .unwrap()
        .into_iter()
        .map(|g| PreparedGraph::new(g, config).unwrap())
        .collect()
}

#[test]
fn adding_all_missing_task_leaves_loss_unchanged() {
    let mut tape = Tape::new();
    let pred2 = tape.constant(vec![0.4, -0.7], vec![1, 2]).unwrap();
    let l2 = loss(&mut tape, pred2, &[1.0, 0.25], TaskKind::Regression).unwrap();
    let pred3 = tape.constant(vec![0.4, -0.7, 9.9], vec![1, 3]).unwrap();
    let l3 = loss(
        &mut tape,
        pred3,
        &[1.0, 0.25, f64::NAN],
        TaskKind::Regression,
    )
    .unwrap();
    assert_eq!(tape.data(l2)[0], tape.data(l3)[0]);
}

#[test]
fn epochs_zero_reports_only_initial_evaluation() {
    let config = tiny_model();
    let mut params = ModelParams::init(&config, 5).unwrap();
    let train = prepared_set(6, 7, &config);
    let valid = prepared_set(2, 8, &config);
    let tcfg = TrainConfig {
        epochs: 0,
        warmup_epochs: 0,
        ..Default::default()
    };
    let out = train_loop(&mut params, &config, &tcfg, &train, &valid, 1, |_| {}).unwrap();
    assert_eq!(out.report.records.len(), 1);
    assert_eq!(out.report.records[0].epoch, 0);
    assert_eq!(out.report.best_epoch, 0);
}

#[test]
fn training_is_bit_deterministic() {
    let config = ModelConfig {
        dropout: 0.1,
        ..tiny_model()
    };
    let tcfg = TrainConfig {
        epochs: 3,
        warmup_epochs: 1,
        batch_size: 4,
        seed: 99,
        ..Default::default()
    };
    let run = || {
        let mut params = ModelParams::init(&config, 13).unwrap();
        let train = prepared_set(8, 21, &config);
        let valid = prepared_set(2, 22, &config);
        let out = train_loop(&mut params, &config, &tcfg, &train, &valid, 1, |_| {}).unwrap();
        out.report.log()
    };
    assert_eq!(run(), run());
}

#[test]
fn threaded_gradients_match_sequential() {
    let config = tiny_model();
    let tcfg = TrainConfig {
        epochs: 2,
        warmup_epochs: 0,
        batch_size: 8,
        seed: 3,
        scheduler: SchedulerKind::None,
        ..Default::default()
    };
    let run = |threads: usize| {
        let mut params = ModelParams::init(&config, 13).unwrap();
        let train = prepared_set(8, 21, &config);
        let valid = prepared_set(2, 22, &config);
        let out = train_loop(&mut params, &config, &tcfg, &train, &valid, threads, |_| {}).unwrap();
        out.report.log()
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn fixed_batch_loss_non_increasing_at_small_lr() {
    let config = tiny_model();
    let train = prepared_set(8, 33, &config);
    let valid = prepared_set(2, 34, &config);
    let mut params = ModelParams::init(&config, 35).unwrap();
    let tcfg = TrainConfig {
        epochs: 10,
        warmup_epochs: 0,
        lr: 1e-4,
        batch_size: 8, // full batch: one step per epoch
        scheduler: SchedulerKind::None,
        seed: 36,
        ..Default::default()
    };
    let out = train_loop(&mut params, &config, &tcfg, &train, &valid, 1, |_| {}).unwrap();
    // Records 1..=10 hold the loss evaluated before each step.
    for w in out.report.records[1..].windows(2) {
        assert!(
            w[1].train_loss <= w[0].train_loss + 1e-12,
            "loss increased: {} -> {}",
            w[0].train_loss,
            w[1].train_loss
        );
    }
}

#[test]
fn best_checkpoint_matches_logged_metric() {
    let config = tiny_model();
    let train = prepared_set(8, 51, &config);
    let valid = prepared_set(3, 52, &config);
    let mut params = ModelParams::init(&config, 53).unwrap();
    let tcfg = TrainConfig {
        epochs: 5,
        warmup_epochs: 0,
        batch_size: 4,
        seed: 54,
        ..Default::default()
    };
    let out = train_loop(&mut params, &config, &tcfg, &train, &valid, 1, |_| {}).unwrap();
    let eval = evaluate(&out.best_params, &config, &valid, MetricKind::Mae).unwrap();
    assert!(
        (eval.metric - out.report.best_valid_metric).abs() < 1e-12,
        "{} vs {}",
        eval.metric,
        out.report.best_valid_metric
    );
}
