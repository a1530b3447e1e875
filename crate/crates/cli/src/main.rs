mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mmff::data::{generate_synthetic, load_dataset, save_dataset, Dataset, SynthSpec};
use mmff::fusion::FusionStrategy;
use mmff::numerics::GradFault;
use mmff::report::{aggregate_csv, cross_corpus_csv, fold_csv, CrossCorpusRow};
use mmff::train::{evaluate, run_ablation, run_cross_corpus, run_cv, Checkpoint, ExperimentResult};
use mmff::verify::{run_suite, VerifyOptions};
use serde_json::{json, Map, Value};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "mmff", version, about = "Multimodal audio/video fusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args, Clone, Default)]
struct Common {
    /// Flat JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// LT|IT|IA|add|multi|concat|tf|audio|video
    #[arg(long)]
    fusion: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Cross-validate one fusion strategy.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Score a saved checkpoint on a dataset.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Cross-validate every strategy with identical settings.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Train on one corpus and test on the other, in both directions.
    CrossCorpus {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train_dataset: PathBuf,
        #[arg(long)]
        test_dataset: PathBuf,
    },
    /// Write a synthetic corpus as manifest + CSV files.
    SynthGen {
        #[command(flatten)]
        common: Common,
        /// JSON synthetic corpus specification.
        #[arg(long)]
        spec: PathBuf,
    },
    /// Run the invariant suite.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Corrupt one backward rule: matmul|softmax|conv1d.
        #[arg(long)]
        inject_fault: Option<String>,
        #[arg(long, default_value_t = 5)]
        grad_seeds: u64,
    },
}

/// Exit 2 for bad input or configuration, 1 when the work itself fails.
enum Failure {
    Usage(String),
    Run(String),
}

type CmdResult = Result<(), Failure>;

fn usage(e: impl ToString) -> Failure {
    Failure::Usage(e.to_string())
}

fn run_err(e: impl ToString) -> Failure {
    Failure::Run(e.to_string())
}

fn resolve(common: &Common) -> Result<RunConfig, Failure> {
    let mut overrides = Map::new();
    if let Some(s) = common.seed {
        overrides.insert("seed".into(), json!(s));
    }
    if let Some(f) = &common.fusion {
        let f: FusionStrategy = f.parse().map_err(usage)?;
        overrides.insert("fusion".into(), json!(f));
    }
    RunConfig::resolve(common.config.as_deref(), overrides).map_err(Failure::Usage)
}

fn out_dir(common: &Common) -> Result<PathBuf, Failure> {
    let dir = common.out.clone().ok_or_else(|| usage("--out is required"))?;
    fs::create_dir_all(&dir).map_err(|e| usage(format!("cannot create {}: {}", dir.display(), e)))?;
    Ok(dir)
}

fn load(path: &Path) -> Result<Dataset, Failure> {
    if !path.is_file() {
        return Err(usage(format!("dataset manifest not found: {}", path.display())));
    }
    load_dataset(path).map_err(usage)
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> CmdResult {
    fs::write(&path, contents).map_err(|e| run_err(format!("cannot write {}: {}", path.display(), e)))
}

fn write_record(dir: &Path, command: &str, cfg: &RunConfig, inputs: Value) -> CmdResult {
    let record = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.train.seed,
        "inputs": inputs,
        "config": cfg,
    });
    write(dir.join("run.json"), serde_json::to_string_pretty(&record).map_err(run_err)? + "\n")
}

fn write_folds(dir: &Path, res: &ExperimentResult) -> CmdResult {
    let ck_dir = dir.join("checkpoints");
    fs::create_dir_all(&ck_dir).map_err(run_err)?;
    for f in &res.folds {
        let stem = if f.repeat == 0 {
            format!("fold_{:02}", f.fold)
        } else {
            format!("fold_{:02}_r{}", f.fold, f.repeat)
        };
        write(dir.join(format!("{stem}.csv")), fold_csv(f))?;
        f.checkpoint.save(&ck_dir.join(format!("{stem}.ckpt"))).map_err(run_err)?;
    }
    Ok(())
}

fn cmd_train(common: &Common, dataset: &Path) -> CmdResult {
    let cfg = resolve(common)?;
    let dir = out_dir(common)?;
    let ds = load(dataset)?;
    let mc = cfg.model_config(ds.dims.audio, ds.dims.video).map_err(Failure::Usage)?;
    write_record(&dir, "train", &cfg, json!({ "dataset": dataset }))?;
    let res = run_cv(&ds, &mc, &cfg.train).map_err(run_err)?;
    write_folds(&dir, &res)?;
    let table = aggregate_csv(std::slice::from_ref(&res));
    write(dir.join("aggregate.csv"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_evaluate(common: &Common, dataset: &Path, checkpoint: &Path) -> CmdResult {
    let dir = out_dir(common)?;
    let ds = load(dataset)?;
    let ck = Checkpoint::load(checkpoint).map_err(usage)?;
    let model = ck.model().map_err(usage)?;
    let samples: Vec<_> = ds.samples.iter().collect();
    let eval = evaluate(&model, &samples).map_err(run_err)?;
    let mut preds = String::from("id,label,predicted\n");
    for (s, p) in ds.samples.iter().zip(&eval.predictions) {
        preds.push_str(&format!("{},{},{}\n", s.id, s.label, p));
    }
    write(dir.join("predictions.csv"), preds)?;
    let mut table = String::from("fusion,samples,mean_loss,");
    table.push_str(&mmff::metrics::METRIC_NAMES.join(","));
    table.push_str(&format!(
        "\n{},{},{:.6},{}\n",
        model.fusion(),
        samples.len(),
        eval.mean_loss,
        eval.report.csv_cells().join(",")
    ));
    write(dir.join("evaluation.csv"), &table)?;
    let cfg = RunConfig {
        fusion: model.fusion(),
        train: ck.train_config.clone(),
        ..RunConfig::default()
    };
    write_record(&dir, "evaluate", &cfg, json!({ "dataset": dataset, "checkpoint": checkpoint }))?;
    print!("{table}");
    Ok(())
}

fn cmd_ablate(common: &Common, dataset: &Path) -> CmdResult {
    let cfg = resolve(common)?;
    let dir = out_dir(common)?;
    let ds = load(dataset)?;
    let base = cfg.model_config(ds.dims.audio, ds.dims.video).map_err(Failure::Usage)?;
    write_record(&dir, "ablate", &cfg, json!({ "dataset": dataset }))?;
    let results = run_ablation(&ds, &base, &FusionStrategy::ALL, &cfg.train).map_err(run_err)?;
    let table = aggregate_csv(&results);
    write(dir.join("aggregate.csv"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_cross_corpus(common: &Common, a_path: &Path, b_path: &Path) -> CmdResult {
    let cfg = resolve(common)?;
    let dir = out_dir(common)?;
    let a = load(a_path)?;
    let b = load(b_path)?;
    if (a.dims.audio, a.dims.video) != (b.dims.audio, b.dims.video) {
        return Err(usage(format!(
            "corpora disagree on feature dims: {:?} vs {:?}",
            a.dims, b.dims
        )));
    }
    if let Some(s) = b.samples.iter().find(|s| a.samples.iter().any(|t| t.id == s.id)) {
        return Err(usage(format!("train and test corpora share sample `{}`", s.id)));
    }
    let mc = cfg.model_config(a.dims.audio, a.dims.video).map_err(Failure::Usage)?;
    write_record(&dir, "cross-corpus", &cfg, json!({ "train_dataset": a_path, "test_dataset": b_path }))?;
    let ab = run_cross_corpus(&a, &b, &mc, &cfg.train).map_err(run_err)?;
    let ba = run_cross_corpus(&b, &a, &mc, &cfg.train).map_err(run_err)?;
    let table = cross_corpus_csv(&[
        CrossCorpusRow { train: &a.name, test: &b.name, result: &ab },
        CrossCorpusRow { train: &b.name, test: &a.name, result: &ba },
    ]);
    write(dir.join("cross_corpus.csv"), &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_synth_gen(common: &Common, spec_path: &Path) -> CmdResult {
    let text = fs::read_to_string(spec_path).map_err(|e| usage(format!("cannot read spec {}: {}", spec_path.display(), e)))?;
    let mut spec: SynthSpec = serde_json::from_str(&text).map_err(|e| usage(format!("spec {}: {}", spec_path.display(), e)))?;
    if let Some(s) = common.seed {
        spec.seed = s;
    }
    let ds = generate_synthetic(&spec).map_err(usage)?;
    let dir = out_dir(common)?;
    let manifest = save_dataset(&ds, &dir).map_err(run_err)?;
    write(dir.join("spec.json"), serde_json::to_string_pretty(&spec).map_err(run_err)? + "\n")?;
    println!("{}", manifest.display());
    Ok(())
}

fn cmd_verify(fault: Option<&str>, grad_seeds: u64) -> CmdResult {
    let fault = match fault {
        None => None,
        Some("matmul") => Some(GradFault::MatMulWeight),
        Some("softmax") => Some(GradFault::Softmax),
        Some("conv1d") => Some(GradFault::Conv1dKernel),
        Some(other) => return Err(usage(format!("unknown fault `{}` (expected matmul|softmax|conv1d)", other))),
    };
    let outcomes = run_suite(&VerifyOptions {
        seeds: grad_seeds.max(1),
        fault,
        ..VerifyOptions::default()
    });
    for o in &outcomes {
        println!("{}", o.line());
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} of {} checks passed", outcomes.len() - failed, outcomes.len());
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::Run(format!("{} verification check(s) failed", failed)))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let line = msg.lines().next().unwrap_or("error: invalid arguments");
            eprintln!("{}", line.trim());
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Cmd::Train { common, dataset } => cmd_train(common, dataset),
        Cmd::Evaluate { common, dataset, checkpoint } => cmd_evaluate(common, dataset, checkpoint),
        Cmd::Ablate { common, dataset } => cmd_ablate(common, dataset),
        Cmd::CrossCorpus { common, train_dataset, test_dataset } => cmd_cross_corpus(common, train_dataset, test_dataset),
        Cmd::SynthGen { common, spec } => cmd_synth_gen(common, spec),
        Cmd::Verify { common: _, inject_fault, grad_seeds } => cmd_verify(inject_fault.as_deref(), *grad_seeds),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {}", m.replace('\n', " "));
            ExitCode::from(2)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {}", m.replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
