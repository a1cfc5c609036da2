//! Command line front end: runs the pipeline stages over a media directory,
//! draws training prompts, reports manifest statistics, and generates the
//! synthetic acceptance corpus.
//!
//! Exit codes: 0 clean, 2 completed with deferred clips, 1 any error
//! (including usage errors).

use std::fs::File;
use std::io::Write;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};

use uvcurate_core::config::PipelineConfig;
use uvcurate_core::manifest_store::{compute_stats, ManifestEntry, ManifestStore};
use uvcurate_core::pipeline::{self, StageEnv, StageSummary};
use uvcurate_core::synth_corpus::{generate_corpus, standard_corpus};

#[derive(Parser)]
#[command(name = "uvcurate", version, about = "Deterministic video corpus curation")]
struct Cli {
    /// TOML config file; defaults to $UVCURATE_CONFIG, then built-in values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Append-only JSONL manifest recording every clip's state.
    #[arg(long, global = true, default_value = "manifest.jsonl")]
    manifest: PathBuf,

    /// Override the configured worker count.
    #[arg(long, global = true)]
    workers: Option<u32>,

    /// Override the configured sampling seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Fail hard when a provider is unreachable instead of deferring clips.
    #[arg(long, global = true)]
    strict_providers: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register every *.y4m file under the media directory.
    Ingest {
        /// Directory holding one .y4m file per source video.
        #[arg(long)]
        media: PathBuf,
        /// Register files as already-split single-shot clips, skipping the
        /// split stage (pre-cut or synthetic corpora).
        #[arg(long)]
        as_clips: bool,
    },
    /// Detect shot boundaries and emit duration-classified clips.
    Split {
        #[arg(long)]
        media: PathBuf,
    },
    /// Run the four statistical filters over split clips.
    Filter {
        #[arg(long)]
        media: PathBuf,
    },
    /// Run the model-based purification gates over filtered clips.
    Purify {
        #[arg(long)]
        media: PathBuf,
    },
    /// Request structured captions and summaries for purified clips.
    Caption {
        #[arg(long)]
        media: PathBuf,
    },
    /// Draw training prompts from captioned clips (JSONL to stdout or --out).
    Sample {
        /// Prompts per captioned clip.
        #[arg(long, default_value_t = 1)]
        draws: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Corpus statistics from the manifest's latest state.
    Stats {
        /// Machine-readable JSON instead of the table.
        #[arg(long)]
        json: bool,
    },
    /// Generate the synthetic defect corpus plus ground truth.
    Synth {
        /// Number of clips (defect kinds and severities cycle).
        #[arg(long)]
        count: usize,
        /// Output directory for {id}.y4m files and truth.jsonl.
        #[arg(long)]
        dir: PathBuf,
    },
    /// Configuration inspection.
    Config {
        #[command(subcommand)]
        action: ConfigAction,
    },
}

#[derive(Subcommand)]
enum ConfigAction {
    /// Print the resolved configuration as TOML.
    Dump,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version arrive as "errors" but are clean exits;
            // real usage errors take 1, keeping 2 for deferred-work runs.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let path = cli
        .config
        .clone()
        .or_else(|| std::env::var_os("UVCURATE_CONFIG").map(PathBuf::from));
    let mut config = match path {
        Some(p) => {
            PipelineConfig::load(&p).with_context(|| format!("loading config {}", p.display()))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(workers) = cli.workers {
        config.worker_count = workers;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    let config = load_config(&cli)?;
    match &cli.command {
        Command::Config {
            action: ConfigAction::Dump,
        } => {
            print!("{}", config.dump());
            Ok(0)
        }
        Command::Synth { count, dir } => {
            let specs = standard_corpus(*count, &config.filters);
            let (paths, _) = generate_corpus(&specs, config.seed, dir)
                .with_context(|| format!("generating corpus in {}", dir.display()))?;
            println!("wrote {} clips and truth.jsonl to {}", paths.len(), dir.display());
            Ok(0)
        }
        Command::Stats { json } => {
            let snapshot = pipeline::manifest_snapshot(&cli.manifest)?;
            let entries: Vec<ManifestEntry> = snapshot.into_values().collect();
            let report = compute_stats(&entries);
            if *json {
                println!("{}", report.to_json());
            } else {
                print!("{}", report.human_table());
            }
            Ok(0)
        }
        Command::Sample { draws, out } => {
            let written = match out {
                Some(path) => {
                    let mut file = File::create(path)
                        .with_context(|| format!("creating {}", path.display()))?;
                    let n = pipeline::sample(&cli.manifest, &config, *draws, &mut file)?;
                    file.flush()?;
                    n
                }
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    pipeline::sample(&cli.manifest, &config, *draws, &mut lock)?
                }
            };
            // Keep stdout a pure prompt stream; the count is commentary.
            eprintln!("sampled {written} prompts");
            Ok(0)
        }
        Command::Ingest { media, as_clips } => {
            run_pipeline_stage(&cli, &config, media, |store, env| {
                pipeline::ingest(store, env, *as_clips)
            })
        }
        Command::Split { media } => run_pipeline_stage(&cli, &config, media, pipeline::split),
        Command::Filter { media } => run_pipeline_stage(&cli, &config, media, pipeline::filter),
        Command::Purify { media } => run_pipeline_stage(&cli, &config, media, pipeline::purify),
        Command::Caption { media } => run_pipeline_stage(&cli, &config, media, pipeline::caption),
    }
}

fn run_pipeline_stage(
    cli: &Cli,
    config: &PipelineConfig,
    media: &PathBuf,
    stage: impl Fn(
        &mut ManifestStore,
        &StageEnv,
    ) -> Result<StageSummary, pipeline::PipelineError>,
) -> anyhow::Result<i32> {
    let providers = config.providers.build();
    let env = StageEnv {
        config,
        media_dir: media,
        providers: &providers,
        strict_providers: cli.strict_providers,
    };
    let mut store = ManifestStore::open(&cli.manifest)?;
    let summary = stage(&mut store, &env)?;
    println!("{}", summary.line());
    Ok(summary.exit_code())
}
