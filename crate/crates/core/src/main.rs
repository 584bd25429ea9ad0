use std::error::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cq_workbench::config::WorkbenchConfig;
use cq_workbench::corpus::select_corpus;
use cq_workbench::evaluation::{evaluate_run, MemoEmbedder};
use cq_workbench::llm::parse_cqs;
use cq_workbench::prompt::DEFAULT_TEMPLATE_VERSION;
use cq_workbench::rag::{Mode, RunConfig};
use cq_workbench::runner::{
    execute, report, ExecuteOptions, ManifestStore, ProviderDescriptors, RunManifest, RunRecord,
};

type Result<T> = std::result::Result<T, Box<dyn Error>>;

/// Competency question generation and evaluation workbench.
#[derive(Parser)]
#[command(name = "cqwb", version)]
struct Cli {
    /// Workbench config file.
    #[arg(long, global = true, default_value = "cqwb.toml")]
    config: PathBuf,
    /// Use the offline synthetic model and hash embedders.
    #[arg(long, global = true)]
    mock: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Rag,
    ZeroShot,
}

#[derive(Subcommand)]
enum Command {
    /// Chunk and embed the top-ranked documents and save the index.
    Index {
        #[arg(long, default_value_t = 1)]
        n_paper: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one generation and print the parsed questions.
    Generate {
        #[arg(long, value_enum, default_value = "rag")]
        mode: ModeArg,
        #[arg(long, default_value_t = 1)]
        n_paper: usize,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        repetition: usize,
        /// Also write the full run record as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a question list (one per line, or a run record file) against the ground truth.
    Evaluate {
        input: PathBuf,
        #[arg(long)]
        theta: Option<f64>,
    },
    /// Execute the whole grid, writing a resumable manifest.
    Experiment {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        parallel: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        /// Stop after this many runs.
        #[arg(long)]
        max_runs: Option<usize>,
    },
    /// Evaluate finished runs and write tables and series.
    Report {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        theta: Option<f64>,
        /// Output directory, defaults to `<manifest>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> Result<WorkbenchConfig> {
    let mut cfg = WorkbenchConfig::load(&cli.config)?;
    if cli.mock {
        cfg.use_mocks();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Index { n_paper, out } => {
            let gt = cfg.ground_truth()?;
            let engine = cfg.engine(&gt)?;
            let selection = select_corpus(&cfg.corpus()?, n_paper)?;
            let (key, index) = engine.index_for(&selection.documents, &cfg.chunking)?;
            index.save(&out)?;
            println!(
                "{} chunks from {} documents, key {key}",
                index.len(),
                selection.documents.len()
            );
        }
        Command::Generate {
            mode,
            n_paper,
            temperature,
            k,
            repetition,
            out,
        } => {
            let gt = cfg.ground_truth()?;
            let engine = cfg.engine(&gt)?;
            let vars = cfg.prompt_vars()?;
            let mut config = match mode {
                ModeArg::Rag => RunConfig::rag(vars, n_paper, temperature),
                ModeArg::ZeroShot => RunConfig::zero_shot(vars, temperature),
            };
            config.k = k.unwrap_or(cfg.grid.k);
            config.model = cfg.grid.model.clone();
            config.chunking = cfg.chunking;
            config.repetition_index = repetition;
            let corpus = if config.mode == Mode::Rag {
                cfg.corpus()?
            } else {
                Vec::new()
            };
            let run = engine.run_generation(&config, &corpus)?;
            if let Some(out) = out {
                std::fs::write(out, serde_json::to_string_pretty(&run)? + "\n")?;
            }
            if !run.is_done() {
                eprintln!("{}: {:?}", run.run_id, run.outcome);
                return Ok(ExitCode::from(1));
            }
            for cq in run.cqs() {
                println!("{cq}");
            }
        }
        Command::Evaluate { input, theta } => {
            let gt = cfg.ground_truth()?;
            let theta = theta.unwrap_or(cfg.evaluation.theta);
            let (run_id, cqs) = read_questions(&input)?;
            let embedder = MemoEmbedder::new(cfg.evaluation_embedder());
            let report = evaluate_run(&run_id, &cqs, &gt, &embedder, theta)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Experiment {
            manifest,
            resume,
            parallel,
            k,
            max_runs,
        } => {
            let dir = manifest.unwrap_or_else(|| cfg.workdir());
            let store = ManifestStore::new(&dir);
            let gt = cfg.ground_truth()?;
            let engine = cfg.engine(&gt)?;
            let corpus = cfg.corpus()?;
            let mut manifest = if resume && store.exists() {
                store.load()?
            } else {
                let mut grid = cfg.grid()?;
                if let Some(k) = k {
                    grid.k = k;
                }
                let providers = ProviderDescriptors {
                    retrieval_embedding: engine.retrieval_provider().provider_id(),
                    llm: cfg.llm(&gt)?.provider_id(),
                    evaluation_embedding: cfg.evaluation_embedder().provider_id(),
                };
                let m = RunManifest::new(grid, &corpus, DEFAULT_TEMPLATE_VERSION, providers)?;
                store.create(&m)?;
                m
            };
            let options = ExecuteOptions {
                resume: true,
                parallel: parallel.unwrap_or(cfg.runner.parallel),
                max_runs,
            };
            let summary = execute(&store, &mut manifest, &engine, &corpus, options)?;
            println!(
                "executed {} (done {}, failed {}), skipped {}, remaining {} -> {}",
                summary.executed,
                summary.done,
                summary.failed,
                summary.skipped,
                summary.remaining,
                dir.display()
            );
            if summary.failed > 0 {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Report {
            manifest,
            theta,
            out,
        } => {
            let dir = manifest.unwrap_or_else(|| cfg.workdir());
            let store = ManifestStore::new(&dir);
            let manifest = store.load()?;
            let gt = cfg.ground_truth()?;
            let theta = theta.unwrap_or(manifest.grid.theta);
            let embedder = MemoEmbedder::new(cfg.evaluation_embedder());
            let bundle = report(&store, &manifest, &gt, &embedder, theta)?;
            let out = out.unwrap_or_else(|| dir.join("report"));
            bundle.write(&out)?;
            for cell in &bundle.precision_table {
                let n = cell.n_paper.map_or("-".to_string(), |n| n.to_string());
                println!(
                    "{:<10} n_paper={:<3} precision={:.4} (runs {})",
                    cell.mode, n, cell.mean_precision, cell.n_runs
                );
            }
            for a in &bundle.anova {
                match &a.result {
                    Some(r) => println!(
                        "anova {}: F={:.4} p={:.4}",
                        a.factor, r.f_statistic, r.p_value
                    ),
                    None => println!(
                        "anova {}: skipped ({})",
                        a.factor,
                        a.note.as_deref().unwrap_or("")
                    ),
                }
            }
            if bundle.excluded_runs > 0 {
                println!("{} runs excluded (failed or not run)", bundle.excluded_runs);
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Reads either a run record file or a plain list of questions.
fn read_questions(path: &Path) -> Result<(String, Vec<String>)> {
    let text = std::fs::read_to_string(path)?;
    if let Ok(run) = serde_json::from_str::<cq_workbench::rag::GenerationRun>(&text) {
        return Ok((run.run_id.clone(), run.cqs().to_vec()));
    }
    if path.extension().is_some_and(|e| e == "jsonl") {
        let records = cq_workbench::runner::read_records(path)?;
        if let Some(RunRecord::Generation(run)) = records
            .into_iter()
            .rev()
            .find(|r| matches!(r, RunRecord::Generation(_)))
        {
            return Ok((run.run_id.clone(), run.cqs().to_vec()));
        }
    }
    let id = path
        .file_stem()
        .map_or("input".into(), |s| s.to_string_lossy().into_owned());
    let expected = text.lines().filter(|l| !l.trim().is_empty()).count();
    Ok((id, parse_cqs(&text, expected)?.cqs))
}
