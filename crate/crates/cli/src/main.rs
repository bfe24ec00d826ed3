//! `nbm`: train, evaluate, explain and benchmark additive models.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nbm::config::{parse_override, read_config, RunConfig};
use nbm::data::sparse::write_sparse;
use nbm::data::synth::{covertype_like, generate, GroundTruth, Synth, SynthSpec};
use nbm::data::write_csv;
use nbm::interpret::bench::{DEFAULT_BATCH, DEFAULT_REPEATS, DEFAULT_WARMUP};
use nbm::interpret::{
    decompose, export_shape_functions, shape_metadata, stability_score, throughput_bench,
    write_pair_csv, write_shape_csv, ExplainOptions, DEFAULT_GRID, DEFAULT_TOP_PAIRS,
};
use nbm::matrix::Matrix;
use nbm::models::{Architecture, Model, ModelKind, Task};
use nbm::optim::write_history;
use nbm::pipeline::{evaluate_file, train_run, Checkpoint};
use nbm::{seeded_rng, Error, Result};
use rand::Rng;
use serde_json::json;

#[derive(Parser)]
#[command(name = "nbm", version, about = "Neural Basis Models and additive baselines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model from a config file; writes a checkpoint and history CSV.
    Train {
        /// Flat `key = value` config file.
        config: PathBuf,
        /// `--key=value` settings that override the file.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Print the task metric of a checkpoint on a dataset (CSV or sparse).
    Eval { checkpoint: PathBuf, data: PathBuf },
    /// Export centered shape functions as CSV plus a JSON sidecar.
    Explain {
        checkpoint: PathBuf,
        /// Training data used for centering, grid ranges and density.
        data: PathBuf,
        #[arg(long, default_value = "explain")]
        out: PathBuf,
        /// Number of pair heatmaps to export (pairwise models).
        #[arg(long, default_value_t = DEFAULT_TOP_PAIRS)]
        pairs: usize,
        #[arg(long, default_value_t = DEFAULT_GRID)]
        grid: usize,
        /// Side length of pair heatmaps.
        #[arg(long, default_value_t = DEFAULT_GRID)]
        pair_grid: usize,
    },
    /// Measure eval-mode throughput on a random batch.
    Bench {
        #[arg(long, default_value = "nbm")]
        model: ModelKind,
        /// Number of input features.
        #[arg(long = "D", default_value_t = 8)]
        features: usize,
        /// Bases per basis network.
        #[arg(long = "B", default_value_t = 100)]
        bases: usize,
        #[arg(long, default_value_t = 1)]
        classes: usize,
        #[arg(long, default_value_t = DEFAULT_BATCH)]
        batch: usize,
        #[arg(long, default_value_t = DEFAULT_REPEATS)]
        repeats: usize,
        #[arg(long, default_value_t = DEFAULT_WARMUP)]
        warmup: usize,
        /// Worker threads; 1 gives stable timings, 0 uses every core.
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Input distribution.
        #[arg(long, value_enum, default_value_t = BenchInput::Uniform)]
        input: BenchInput,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train several seeds per config and report the shape-function stability.
    Stability {
        configs: Vec<PathBuf>,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = DEFAULT_GRID)]
        grid: usize,
        /// Seed of run `e` is `seed_base + e`.
        #[arg(long, default_value_t = 0)]
        seed_base: u64,
        /// Use one seed for every run (a determinism check).
        #[arg(long)]
        same_seed: bool,
        /// `key=value` overrides applied to every config.
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// Generate a synthetic dataset with a known additive ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "D", default_value_t = 2)]
        features: usize,
        #[arg(long, default_value_t = 5000)]
        rows: usize,
        #[arg(long, value_enum, default_value_t = Truth::SinQuadratic)]
        truth: Truth,
        #[arg(long, default_value = "regression")]
        task: String,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Probability a feature is absent; > 0 writes the sparse format.
        #[arg(long, default_value_t = 0.0)]
        sparsity: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchInput {
    Uniform,
    /// Forest-cover-shaped quantized features (D = 54, 7 classes).
    Covertype,
}

#[derive(Clone, Copy, ValueEnum)]
enum Truth {
    /// `Σ_i w_i x_i + 0.5` with `w_i = (-1)^i (i + 1) / D`.
    Linear,
    /// `sin(2πx₀) + x₁²`
    SinQuadratic,
    /// Sin, quadratic, step and linear shapes plus one product pair.
    Mixed,
    /// Forest-cover-shaped multi-class data (ignores D, task and noise).
    Covertype,
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("JSON value"));
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn run_config(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let mut map = read_config(path)?;
    for o in overrides {
        let (k, v) = parse_override(o)?;
        map.insert(k, v);
    }
    RunConfig::from_map(&map)
}

fn train(config: &Path, overrides: &[String]) -> Result<()> {
    let run = run_config(config, overrides)?;
    let trained = train_run(&run, &mut |r| {
        eprintln!("epoch {:>4}  lr {:.3e}  loss {:.6}  val {:.6}", r.epoch, r.lr, r.train_loss, r.val_metric)
    })?;
    for p in [&run.checkpoint, &run.history] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    trained.checkpoint.save(&run.checkpoint)?;
    write_history(&trained.fit.history, create(&run.history)?).map_err(|e| Error::io(&run.history, e))?;
    let test = &trained.prepared.test;
    let logits = nbm::optim::predict_all(&trained.fit.model, &test.x)?;
    let test_metric = nbm::metrics::evaluate(run.task, &logits, &test.y)?;
    let val = trained.fit.best_metric;
    print_json(&json!({
        "model": run.model.name(),
        "best_epoch": trained.fit.best_epoch,
        "metric": test_metric.name,
        "val": val.map(|m| m.value),
        "test": test_metric.value,
        "checkpoint": run.checkpoint,
        "history": run.history,
    }));
    Ok(())
}

fn explain(
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    pairs: usize,
    grid: usize,
    pair_grid: usize,
) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let loaded = ck.preprocessing.load(data)?;
    let train = ck.preprocessing.dense(&loaded)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let outputs = ck.model.num_outputs();
    let names = &ck.preprocessing.feature_names;
    let check_rows: Vec<usize> = (0..train.len().min(100)).collect();
    let sample = train.x.select_rows(&check_rows);
    let logits = ck.model.predict(&sample)?;
    let mut files = Vec::new();
    let mut max_err: f64 = 0.0;
    for output in 0..outputs {
        let opts = ExplainOptions {
            grid,
            pair_grid,
            top_pairs: pairs,
            output,
        };
        let table = export_shape_functions(&ck.model, &train.x, names, &opts)?;
        let recon = decompose(&ck.model, &table, &train.x, &sample)?.reconstruct();
        for (r, v) in recon.iter().enumerate() {
            max_err = max_err.max((v - logits.get(r, output)).abs());
        }
        let stem = if outputs == 1 { "shapes".to_string() } else { format!("shapes_class{output}") };
        let csv = out.join(format!("{stem}.csv"));
        write_shape_csv(&table, create(&csv)?).map_err(|e| Error::io(&csv, e))?;
        files.push(csv);
        let meta = out.join(format!("{stem}.json"));
        std::fs::write(&meta, serde_json::to_string_pretty(&shape_metadata(&table)).expect("JSON value"))
            .map_err(|e| Error::io(&meta, e))?;
        files.push(meta);
        if !table.pairs.is_empty() {
            let p = out.join(format!("{stem}_pairs.csv"));
            write_pair_csv(&table, names, create(&p)?).map_err(|e| Error::io(&p, e))?;
            files.push(p);
        }
    }
    print_json(&json!({
        "files": files,
        "features": names.len(),
        "grid": grid,
        "reconstruction_rows": sample.rows(),
        "max_reconstruction_error": max_err,
    }));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn bench(
    model: ModelKind,
    d: usize,
    bases: usize,
    classes: usize,
    batch: usize,
    repeats: usize,
    warmup: usize,
    threads: usize,
    input: BenchInput,
    seed: u64,
) -> Result<()> {
    let (x, d, c) = match input {
        BenchInput::Uniform => {
            let mut rng = seeded_rng(seed);
            (Matrix::from_fn(batch, d, |_, _| rng.gen::<f64>()), d, classes)
        }
        BenchInput::Covertype => (covertype_like(batch, seed)?.x, 54, 7),
    };
    let mut arch = Architecture::new(model, d, c);
    arch.num_bases = bases;
    let m = Model::new(&arch, &mut seeded_rng(seed))?;
    let report = throughput_bench(&m, &x, repeats, warmup, threads)?;
    print_json(&serde_json::to_value(&report).expect("serializable report"));
    Ok(())
}

fn stability(configs: &[PathBuf], runs: usize, grid: usize, seed_base: u64, same: bool, set: &[String]) -> Result<()> {
    if configs.is_empty() {
        return Err(Error::Config("stability needs at least one config".into()));
    }
    let overrides: Vec<String> = set.iter().map(|s| format!("--{s}")).collect();
    let mut results = Vec::new();
    for path in configs {
        let base = run_config(path, &overrides)?;
        let prepared = nbm::pipeline::prepare(&base)?;
        let mut tables = Vec::with_capacity(runs);
        for e in 0..runs {
            let mut run = base.clone();
            run.train.seed = if same { seed_base } else { seed_base + e as u64 };
            let trained = nbm::pipeline::train_prepared(&run, prepared.clone(), &mut |_| {})?;
            let opts = ExplainOptions {
                grid,
                top_pairs: 0,
                ..ExplainOptions::default()
            };
            tables.push(export_shape_functions(
                &trained.fit.model,
                &prepared.train.x,
                &prepared.preprocessing.feature_names,
                &opts,
            )?);
            eprintln!("{}: run {}/{runs} done", path.display(), e + 1);
        }
        results.push(json!({
            "config": path,
            "model": base.model.name(),
            "runs": runs,
            "stability": stability_score(&tables)?,
        }));
    }
    print_json(&json!(results));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn synth(
    out: &Path,
    d: usize,
    rows: usize,
    truth: Truth,
    task: &str,
    classes: usize,
    noise: f64,
    sparsity: f64,
    seed: u64,
) -> Result<()> {
    let task = match task {
        "regression" => Task::Regression,
        "binary" => Task::Binary,
        "multiclass" => Task::Multiclass { classes },
        other => return Err(Error::Config(format!("unknown task '{other}'"))),
    };
    let truth = match truth {
        Truth::Linear => {
            let w: Vec<f64> = (0..d)
                .map(|i| {
                    let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                    sign * (i + 1) as f64 / d as f64
                })
                .collect();
            GroundTruth::linear(&w, 0.5)
        }
        Truth::SinQuadratic => GroundTruth::sin_quadratic(),
        Truth::Mixed => GroundTruth::mixed(d, 1),
        Truth::Covertype => {
            let data = covertype_like(rows, seed)?;
            write_csv(out, &data, "target")?;
            print_json(&json!({ "rows": rows, "features": 54, "out": out }));
            return Ok(());
        }
    };
    let spec = SynthSpec {
        num_features: d,
        num_rows: rows,
        task,
        noise,
        sparsity,
        seed,
        truth: truth.clone(),
    };
    match generate(&spec)? {
        Synth::Dense(data) => write_csv(out, &data, "target")?,
        Synth::Sparse(data) => std::fs::write(out, write_sparse(&data)).map_err(|e| Error::io(out, e))?,
    }
    print_json(&json!({ "rows": rows, "features": d, "out": out, "truth": truth }));
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, overrides } => train(&config, &overrides),
        Command::Eval { checkpoint, data } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let report = evaluate_file(&ck, &data)?;
            print_json(&serde_json::to_value(&report).expect("serializable report"));
            Ok(())
        }
        Command::Explain {
            checkpoint,
            data,
            out,
            pairs,
            grid,
            pair_grid,
        } => explain(&checkpoint, &data, &out, pairs, grid, pair_grid),
        Command::Bench {
            model,
            features,
            bases,
            classes,
            batch,
            repeats,
            warmup,
            threads,
            input,
            seed,
        } => bench(model, features, bases, classes, batch, repeats, warmup, threads, input, seed),
        Command::Stability {
            configs,
            runs,
            grid,
            seed_base,
            same_seed,
            set,
        } => stability(&configs, runs, grid, seed_base, same_seed, &set),
        Command::Synth {
            out,
            features,
            rows,
            truth,
            task,
            classes,
            noise,
            sparsity,
            seed,
        } => synth(&out, features, rows, truth, &task, classes, noise, sparsity, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
