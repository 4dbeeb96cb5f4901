//! Acceptance suite: one test per criterion, each printing a PASS line
//! (run with `--nocapture` to see them). Tolerances are pinned in code.
//!
//! `cargo test -p spectok-cli --test acceptance`

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spectok::coarse::{decompose, is_forest};
use spectok::data::generate_synthetic;
use spectok::graph::Graph;
use spectok::model::{
    forward, DropoutRng, EpeMode, ModelConfig, ModelParams, PreparedGraph, Variant,
};
use spectok::spectral::{
    build_spectrum_vector, spectral_kernel, spectral_token_vector, sym_eigh, KernelKind,
    SpectralTokenParams, DEFAULT_EIGH_TOL,
};
use spectok::training::{avg_precision, evaluate, roc_auc, train_loop, MetricKind, SchedulerKind, TrainConfig};
use spectok::{SymmetricMatrix, Tape};

mod dd;

fn pass(criterion: usize, what: &str) {
    println!("acceptance criterion {criterion}: PASS ({what})");
}

fn random_permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    perm
}

// ---------------------------------------------------------------- 1 ----

#[test]
fn criterion_01_eigensolver_residuals() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xE16);
    for case in 0..200 {
        let n = rng.random_range(2..=64);
        let mut a = SymmetricMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                a.set(i, j, rng.random_range(-2.0..2.0));
            }
        }
        let spec = sym_eigh(&a, DEFAULT_EIGH_TOL).unwrap();
        let residual = spec.max_residual(&a);
        let defect = spec.max_orthonormality_defect();
        assert!(residual < 1e-8, "case {case} (dim {n}): residual {residual}");
        assert!(defect < 1e-8, "case {case} (dim {n}): orthonormality {defect}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "eigensolves took {elapsed:?}");
    pass(1, &format!("200 eigensolves in {elapsed:?}"));
}

// ---------------------------------------------------------------- 2 ----

#[test]
fn criterion_02_mexican_hat_exactness() {
    // High-precision oracle evaluated in double-double arithmetic.
    let mut rng = ChaCha8Rng::seed_from_u64(0x3A7);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let x: f64 = rng.random_range(-5.0..5.0);
        let got = spectral_kernel(x, 1.0, KernelKind::MexicanHat);
        let want = dd::mexican_hat_oracle(x);
        worst = worst.max((got - want).abs());
    }
    assert!(worst < 1e-12, "max deviation {worst}");

    let at_one: f64 = spectral_kernel(1.0, 1.0, KernelKind::MexicanHat);
    let at_neg_one: f64 = spectral_kernel(-1.0, 1.0, KernelKind::MexicanHat);
    assert!(at_one.abs() <= 1e-15 && at_neg_one.abs() <= 1e-15);

    let peak: f64 = spectral_kernel(0.0, 1.0, KernelKind::MexicanHat);
    assert!((peak - dd::mexican_hat_oracle(0.0)).abs() < 1e-12);
    pass(2, &format!("1000 points, max |dev| {worst:.2e}"));
}

// ---------------------------------------------------------------- 3 ----

fn token_of(g: &Graph, params: &SpectralTokenParams<f64>) -> Vec<f64> {
    let spec_g = sym_eigh(&g.normalized_laplacian(), DEFAULT_EIGH_TOL).unwrap();
    let tree = decompose(g);
    let spec_t = sym_eigh(&tree.coarse_laplacian(), DEFAULT_EIGH_TOL).unwrap();
    let sv = build_spectrum_vector(&spec_t, &spec_g, 16, 16);
    spectral_token_vector(&sv, params).unwrap()
}

#[test]
fn criterion_03_spectral_token_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x70C);
    let params = SpectralTokenParams::init(16, 16, KernelKind::MexicanHat, &mut rng);

    for g in generate_synthetic(50, 4, 20, 0x51D).unwrap() {
        let base = token_of(&g, &params);
        for _ in 0..10 {
            let perm = random_permutation(g.n(), &mut rng);
            let moved = token_of(&g.permuted(&perm).unwrap(), &params);
            for (a, b) in base.iter().zip(&moved) {
                assert!((a - b).abs() < 1e-9, "permuted token moved: {a} vs {b}");
            }
        }
    }

    // Cospectral pair: the two orderings of a disjoint union.
    let parts = generate_synthetic(2, 5, 12, 0xC05).unwrap();
    let union = |first: &Graph, second: &Graph| -> Graph {
        let offset = first.n();
        let mut edges = first.edges().to_vec();
        edges.extend(second.edges().iter().map(|&(u, v)| (u + offset, v + offset)));
        let mut nodes = first.node_attrs().to_vec();
        nodes.extend_from_slice(second.node_attrs());
        let mut eattrs = first.edge_attrs().to_vec();
        eattrs.extend_from_slice(second.edge_attrs());
        Graph::new(first.n() + second.n(), edges, nodes, eattrs, vec![]).unwrap()
    };
    let ab = token_of(&union(&parts[0], &parts[1]), &params);
    let ba = token_of(&union(&parts[1], &parts[0]), &params);
    for (a, b) in ab.iter().zip(&ba) {
        assert!((a - b).abs() < 1e-9, "cospectral tokens differ: {a} vs {b}");
    }
    pass(3, "50 graphs x 10 relabelings + cospectral union pair");
}

// ---------------------------------------------------------------- 4 ----

fn acceptance_model(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        mp_layers: 1,
        mp_hidden: 8,
        d_model: 16,
        ffn_hidden: 16,
        n_layers: 2,
        n_heads: 2,
        dropout: 0.0,
        use_epe: false,
        pe_dim: 4,
        k_tree: 8,
        k_graph: 8,
        t_kernels: 8,
        readout_hidden: 16,
        ..Default::default()
    }
}

fn predict(prepared: &PreparedGraph, params: &ModelParams, config: &ModelConfig) -> Vec<f64> {
    let mut tape = Tape::new();
    let mut rng = DropoutRng::new(0);
    let pred = forward(&mut tape, prepared, params, config, false, &mut rng).unwrap();
    tape.data(pred).to_vec()
}

#[test]
fn criterion_04_signnet_sign_flip_invariance() {
    let config = ModelConfig {
        use_epe: true,
        epe_mode: EpeMode::Signnet,
        ..acceptance_model(Variant::SubformerSpec)
    };
    let params = ModelParams::init(&config, 0x516).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xF11);
    let graphs = generate_synthetic(5, 6, 16, 0x5EE).unwrap();
    let mut checked = 0;
    for g in &graphs {
        let prepared = PreparedGraph::new(g.clone(), &config).unwrap();
        let base = predict(&prepared, &params, &config);
        for _ in 0..20 {
            let mut flipped = prepared.clone();
            let rows = flipped.token_count();
            for block in [flipped.epe_tree.as_mut(), flipped.epe_graph.as_mut()] {
                let block = block.unwrap();
                for c in 0..config.pe_dim {
                    if rng.random::<f64>() < 0.5 {
                        for r in 0..rows {
                            block[r * config.pe_dim + c] = -block[r * config.pe_dim + c];
                        }
                    }
                }
            }
            let moved = predict(&flipped, &params, &config);
            assert_eq!(base, moved, "sign flip changed the prediction");
            checked += 1;
        }
    }
    assert_eq!(checked, 100);
    pass(4, "100 sign-flip patterns, change exactly 0");
}

// ---------------------------------------------------------------- 5 ----

#[test]
fn criterion_05_cmd_gradcheck_both_variants() {
    let start = Instant::now();
    for variant in ["subformer_spec", "graphtrans_spec"] {
        let out = Command::new(env!("CARGO_BIN_EXE_spectok"))
            .args(["gradcheck", "--seed", "11", "--variant", variant])
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{variant}: exit {:?}\n{}",
            out.status.code(),
            String::from_utf8_lossy(&out.stdout)
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "gradcheck took {elapsed:?}");
    pass(5, &format!("both variants in {elapsed:?}"));
}

// ---------------------------------------------------------------- 6 ----

#[test]
fn criterion_06_end_to_end_permutation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9E6);
    for variant in [Variant::SubformerSpec, Variant::GraphtransSpec] {
        let config = acceptance_model(variant);
        let params = ModelParams::init(&config, 0xA11).unwrap();
        for g in generate_synthetic(10, 4, 16, 0xBEE).unwrap() {
            let base = predict(&PreparedGraph::new(g.clone(), &config).unwrap(), &params, &config);
            for _ in 0..5 {
                let perm = random_permutation(g.n(), &mut rng);
                let moved = predict(
                    &PreparedGraph::new(g.permuted(&perm).unwrap(), &config).unwrap(),
                    &params,
                    &config,
                );
                for (a, b) in base.iter().zip(&moved) {
                    assert!((a - b).abs() < 1e-9, "{variant:?}: {a} vs {b}");
                }
            }
        }
    }
    pass(6, "10 graphs x 5 relabelings per variant");
}

// ---------------------------------------------------------------- 7 ----

/// The experiment model: token width, message-passing depth and encoder
/// depth fixed at 64 / 2 / 2. Narrow node features plus transformer
/// dropout keep the frozen-token ablation from simply memorizing the 64
/// training graphs, while the spectral token reaches the readout through
/// the (never dropped) residual stream.
fn learning_model(ablate: bool) -> ModelConfig {
    ModelConfig {
        variant: Variant::SubformerSpec,
        mp_layers: 2,
        mp_hidden: 8,
        d_model: 64,
        ffn_hidden: 64,
        n_layers: 2,
        n_heads: 4,
        dropout: 0.4,
        use_epe: false,
        pe_dim: 2,
        k_tree: 16,
        k_graph: 16,
        t_kernels: 32,
        readout_hidden: 64,
        ablate_spectral_token: ablate,
        ..Default::default()
    }
}

fn learning_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 500,
        warmup_epochs: 10,
        lr: 1e-3,
        weight_decay: 0.0,
        batch_size: 16,
        seed: 42,
        scheduler: SchedulerKind::Cosine,
        metric: MetricKind::Mae,
        ..Default::default()
    }
}

fn run_learning(ablate: bool) -> f64 {
    let config = learning_model(ablate);
    let train_cfg = learning_train_config();
    let train_set: Vec<PreparedGraph> = generate_synthetic(64, 8, 24, 4321)
        .unwrap()
        .into_iter()
        .map(|g| PreparedGraph::new(g, &config).unwrap())
        .collect();
    let valid_set: Vec<PreparedGraph> = generate_synthetic(8, 8, 24, 1234)
        .unwrap()
        .into_iter()
        .map(|g| PreparedGraph::new(g, &config).unwrap())
        .collect();
    let mut params = ModelParams::init(&config, train_cfg.seed).unwrap();
    train_loop(&mut params, &config, &train_cfg, &train_set, &valid_set, 1, |_| {}).unwrap();
    evaluate(&params, &config, &train_set, MetricKind::Mae)
        .unwrap()
        .metric
}

#[test]
fn criterion_07_desk_scale_learning_and_ablation() {
    let start = Instant::now();
    let spectral_mae = run_learning(false);
    let elapsed = start.elapsed();
    assert!(
        spectral_mae < 0.05,
        "spectral-token model train MAE {spectral_mae}"
    );
    assert!(
        elapsed.as_secs_f64() < 300.0,
        "training took {elapsed:?}, budget 5 minutes"
    );

    let ablated_mae = run_learning(true);
    assert!(
        ablated_mae >= 2.0 * spectral_mae,
        "ablation MAE {ablated_mae} not 2x spectral MAE {spectral_mae}"
    );
    pass(
        7,
        &format!(
            "train MAE {spectral_mae:.4} in {elapsed:?}; ablation {ablated_mae:.4} ({:.1}x)",
            ablated_mae / spectral_mae
        ),
    );
}

// ---------------------------------------------------------------- 8 ----

/// Brute-force pairwise concordance: ties get half credit.
fn auc_pairwise(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut concordant = 0.0;
    let mut pairs = 0.0;
    for (i, (&si, &li)) in scores.iter().zip(labels).enumerate() {
        if !li {
            continue;
        }
        for (j, (&sj, &lj)) in scores.iter().zip(labels).enumerate() {
            if i == j || lj {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                concordant += 1.0;
            } else if si == sj {
                concordant += 0.5;
            }
        }
    }
    (pairs > 0.0 && labels.iter().any(|&l| !l)).then(|| concordant / pairs)
}

/// Threshold sweep recomputing precision and recall from scratch per
/// distinct score.
fn ap_sweep(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 || pos == labels.len() {
        return None;
    }
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for &t in &thresholds {
        let mut tp = 0;
        let mut fp = 0;
        for (&s, &l) in scores.iter().zip(labels) {
            if s >= t {
                if l {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(ap)
}

#[test]
fn criterion_08_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0C8);
    let mut checked = 0;
    for _ in 0..1000 {
        let n = rng.random_range(2..=50);
        // Coarse grid of scores so ties actually happen.
        let scores: Vec<f64> = (0..n)
            .map(|_| (rng.random_range(0..20) as f64) / 19.0)
            .collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.4).collect();

        let auc = roc_auc(&scores, &labels);
        let auc_oracle = auc_pairwise(&scores, &labels);
        assert_eq!(auc.is_some(), auc_oracle.is_some());
        if let (Some(a), Some(b)) = (auc, auc_oracle) {
            assert!((a - b).abs() < 1e-12, "AUC {a} vs oracle {b}");
            checked += 1;
        }

        let ap = avg_precision(&scores, &labels);
        let ap_oracle = ap_sweep(&scores, &labels);
        assert_eq!(ap.is_some(), ap_oracle.is_some());
        if let (Some(a), Some(b)) = (ap, ap_oracle) {
            assert!((a - b).abs() < 1e-12, "AP {a} vs oracle {b}");
        }
    }
    assert!(checked > 500, "too few two-class cases: {checked}");
    pass(8, &format!("1000 score sets, {checked} two-class"));
}

// ---------------------------------------------------------------- 9 ----

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("spectok-acc-{}-{}", tag, std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn criterion_09_training_determinism() {
    let dir = temp_dir("det");
    let data = dir.join("data.jsonl");
    let status = Command::new(env!("CARGO_BIN_EXE_spectok"))
        .args(["generate", "--n", "24", "--min-size", "4", "--max-size", "10", "--seed", "5"])
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap();
    assert!(status.success());

    let cfg = dir.join("config.toml");
    std::fs::write(
        &cfg,
        r#"
[model]
mp_layers = 1
mp_hidden = 8
d_model = 16
ffn_hidden = 16
n_layers = 1
n_heads = 2
dropout = 0.1
use_epe = false
pe_dim = 4
k_tree = 4
k_graph = 4
t_kernels = 4
readout_hidden = 8

[train]
epochs = 6
warmup_epochs = 1
batch_size = 8
seed = 31
"#,
    )
    .unwrap();

    let run = |out: &Path| -> Vec<u8> {
        let status = Command::new(env!("CARGO_BIN_EXE_spectok"))
            .arg("train")
            .arg("--config")
            .arg(&cfg)
            .arg("--data")
            .arg(&data)
            .arg("--out-dir")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(out.join("metrics.tsv")).unwrap()
    };
    let a = run(&dir.join("run-a"));
    let b = run(&dir.join("run-b"));
    assert_eq!(a, b, "metric logs differ between identical runs");
    pass(9, "two runs, byte-identical metric logs");
}

// --------------------------------------------------------------- 10 ----

#[test]
fn criterion_10_coarse_grain_sanity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC6A);
    // 100 random trees (plus the occasional singleton).
    for _ in 0..100 {
        let n = rng.random_range(1..=24);
        let edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.random_range(0..i), i)).collect();
        let ne = edges.len();
        let g = Graph::new(n, edges, vec![0; n], vec![0; ne], vec![]).unwrap();
        let cg = decompose(&g);
        let isolated = g.degrees().iter().filter(|&&d| d == 0).count();
        assert_eq!(cg.m(), g.edges().len() + isolated);
        assert!(is_forest(cg.m(), cg.tree_edges()));
    }
    // 100 random graphs: every node assigned somewhere.
    for g in generate_synthetic(100, 1, 24, 0xA55).unwrap() {
        let cg = decompose(&g);
        let s: Vec<f64> = cg.assignment_matrix();
        for i in 0..g.n() {
            let column: f64 = (0..cg.m()).map(|j| s[j * g.n() + i]).sum();
            assert!(column >= 1.0, "node {i} uncovered");
        }
        assert!(is_forest(cg.m(), cg.tree_edges()));
    }
    pass(10, "100 trees + 100 graphs");
}
