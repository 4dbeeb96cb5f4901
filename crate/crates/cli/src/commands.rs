//! The five subcommands.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use spectok::coarse::decompose;
use spectok::data;
use spectok::model::{
    model_grad_check, ModelConfig, ModelParams, PreparedGraph, Variant,
};
use spectok::spectral::{
    build_spectrum_vector, spectral_token_vector, sym_eigh, KernelKind, SpectralTokenParams,
    DEFAULT_EIGH_TOL,
};
use spectok::training::{evaluate, train_loop, SchedulerKind, TrainConfig};
use spectok::{checkpoint, Error, Graph, Result};

use crate::config::RunConfig;

/// Maximum relative error tolerated by `gradcheck`.
pub const GRADCHECK_TOL: f64 = 1e-4;

pub fn generate(out: &Path, n: usize, min_size: usize, max_size: usize, seed: u64) -> Result<()> {
    // Range problems are argument errors, not data errors.
    if min_size < 1 || max_size > data::GEN_MAX_SIZE || min_size > max_size {
        return Err(Error::Config(format!(
            "--min-size/--max-size: range [{min_size}, {max_size}] outside [1, {}]",
            data::GEN_MAX_SIZE
        )));
    }
    let graphs = data::generate_synthetic(n, min_size, max_size, seed)?;
    data::write_dataset(out, &graphs)?;
    eprintln!("wrote {} graphs to {}", graphs.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct SpectrumRecord {
    graph_eigenvalues: Vec<f64>,
    tree_eigenvalues: Vec<f64>,
    spectral_token: Vec<f64>,
}

/// Eigenvalue and token dump: `t = 16` kernels and a 16-wide token, with
/// seeded random weights.
pub fn spectrum(
    data_path: &Path,
    k_graph: usize,
    k_tree: usize,
    out: Option<&Path>,
    seed: u64,
) -> Result<()> {
    let graphs = data::parse_dataset(data_path)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = SpectralTokenParams::init(16, 16, KernelKind::MexicanHat, &mut rng);

    let mut lines = String::new();
    for g in &graphs {
        let spec_g = sym_eigh::<f64>(&g.normalized_laplacian(), DEFAULT_EIGH_TOL)?;
        let tree = decompose(g);
        let spec_t = sym_eigh::<f64>(&tree.coarse_laplacian(), DEFAULT_EIGH_TOL)?;
        let sv = build_spectrum_vector(&spec_t, &spec_g, k_tree, k_graph);
        let record = SpectrumRecord {
            graph_eigenvalues: spec_g.eigenvalues().to_vec(),
            tree_eigenvalues: spec_t.eigenvalues().to_vec(),
            spectral_token: spectral_token_vector(&sv, &params)?,
        };
        lines.push_str(&serde_json::to_string(&record).expect("record serializes"));
        lines.push('\n');
    }
    match out {
        Some(path) => std::fs::write(path, lines)?,
        None => print!("{lines}"),
    }
    Ok(())
}

fn prepare_all(graphs: Vec<Graph>, config: &ModelConfig) -> Result<Vec<PreparedGraph>> {
    graphs
        .into_iter()
        .map(|g| PreparedGraph::new(g, config))
        .collect()
}

#[derive(Serialize)]
struct FinalReport {
    best_epoch: usize,
    best_valid_metric: f64,
    test_metric: Option<f64>,
    config_hash: String,
    epochs_run: usize,
}

pub fn train(
    config_path: Option<&Path>,
    data_path: &Path,
    out_dir: &Path,
    threads: usize,
) -> Result<()> {
    let config = match config_path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;

    let graphs = data::parse_dataset(data_path)?;
    let spec = data::SplitSpec {
        ratios: config.data.split,
        seed: config.train.seed,
    };
    let (train_g, valid_g, test_g) = data::split(graphs, &spec)?;
    let train_set = prepare_all(train_g, &config.model)?;
    let valid_set = prepare_all(valid_g, &config.model)?;
    let test_set = prepare_all(test_g, &config.model)?;

    let mut params = ModelParams::init(&config.model, config.train.seed)?;

    let metrics_path = out_dir.join("metrics.tsv");
    let mut log = std::io::BufWriter::new(std::fs::File::create(&metrics_path)?);
    let mut log_err: Option<std::io::Error> = None;
    let outcome = train_loop(
        &mut params,
        &config.model,
        &config.train,
        &train_set,
        &valid_set,
        threads,
        |record| {
            if let Err(e) = writeln!(log, "{}", record.log_line()) {
                log_err.get_or_insert(e);
            }
            println!("{}", record.log_line());
        },
    )?;
    log.flush()?;
    if let Some(e) = log_err {
        return Err(e.into());
    }

    let mut report = outcome.report;
    if !test_set.is_empty() {
        let test = evaluate(
            &outcome.best_params,
            &config.model,
            &test_set,
            config.train.metric,
        )?;
        report.test_metric = Some(test.metric);
    }

    let config_json = config.to_json();
    let hash = checkpoint::config_hash(&config_json);
    checkpoint::save(&out_dir.join("checkpoint.json"), &outcome.best_params, config_json)?;

    let final_report = FinalReport {
        best_epoch: report.best_epoch,
        best_valid_metric: report.best_valid_metric,
        test_metric: report.test_metric,
        config_hash: hash,
        epochs_run: report.records.len().saturating_sub(1),
    };
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&final_report).expect("report serializes"),
    )?;
    eprintln!(
        "best epoch {} with validation metric {}",
        final_report.best_epoch, final_report.best_valid_metric
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    loss: f64,
    metric: f64,
    graphs: usize,
}

pub fn eval(checkpoint_path: &Path, data_path: &Path) -> Result<()> {
    let (config_json, tensors) = checkpoint::load(checkpoint_path)?;
    let config = RunConfig::from_json(config_json)?;
    let params = ModelParams::from_tensors(&config.model, tensors)?;
    let graphs = data::parse_dataset(data_path)?;
    let set = prepare_all(graphs, &config.model)?;
    let result = evaluate(&params, &config.model, &set, config.train.metric)?;
    let report = EvalReport {
        loss: result.loss,
        metric: result.metric,
        graphs: set.len(),
    };
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    Ok(())
}

/// Small configuration the gradient check defaults to; finite differences
/// over the reference-size model would take hours, not seconds.
pub fn gradcheck_config(variant: Variant) -> RunConfig {
    RunConfig {
        model: ModelConfig {
            variant,
            mp_layers: 1,
            mp_hidden: 6,
            d_model: 8,
            ffn_hidden: 8,
            n_layers: 1,
            n_heads: 2,
            dropout: 0.0,
            use_epe: true,
            epe_mode: spectok::model::EpeMode::Signnet,
            pe_dim: 3,
            k_tree: 4,
            k_graph: 4,
            t_kernels: 4,
            readout_hidden: 8,
            ..Default::default()
        },
        train: TrainConfig {
            epochs: 0,
            warmup_epochs: 0,
            scheduler: SchedulerKind::None,
            ..Default::default()
        },
        data: Default::default(),
    }
}

/// Exit status: `Ok(true)` when every group passes the tolerance.
pub fn gradcheck(
    config_path: Option<&Path>,
    seed: u64,
    variant: Variant,
    force_dropout: bool,
) -> Result<bool> {
    if force_dropout {
        return Err(Error::Config(
            "dropout sampling is not differentiable; the gradient check runs with dropout \
             disabled (drop --force-dropout)"
                .to_string(),
        ));
    }
    let mut config = match config_path {
        Some(p) => RunConfig::load(p)?,
        None => gradcheck_config(variant),
    };
    config.model.variant = variant;
    if config.model.dropout > 0.0 {
        eprintln!(
            "note: config dropout {} is ignored; the check runs deterministically",
            config.model.dropout
        );
        config.model.dropout = 0.0;
    }
    config.validate()?;

    let graph = data::generate_synthetic(1, 6, 6, seed)?.remove(0);
    let prepared = PreparedGraph::new(graph, &config.model)?;
    let params = ModelParams::init(&config.model, seed)?;
    let report = model_grad_check(&params, &config.model, &prepared, 1e-5)?;

    let mut all_ok = true;
    for (name, err) in &report {
        let ok = *err <= GRADCHECK_TOL;
        all_ok &= ok;
        println!("{}\t{:.3e}\t{}", name, err, if ok { "ok" } else { "FAIL" });
    }
    let worst = report.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    eprintln!(
        "gradcheck {}: {} groups, max relative error {:.3e}",
        if all_ok { "passed" } else { "FAILED" },
        report.len(),
        worst
    );
    Ok(all_ok)
}

