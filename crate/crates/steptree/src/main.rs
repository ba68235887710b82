use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use steptree::config::{Config, Overrides};
use steptree::pipeline::{
    self, build_backend, build_scorer, BackendMode, CliError, Corpus, CorpusSource,
};
use steptree_core::synthetic::SyntheticSpec;
use steptree_core::views::StatementPolicy;

#[derive(Parser)]
#[command(name = "steptree", version, about = "Tree-search preference data and step-scored beam search")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build one search tree per problem and extract preference pairs.
    Collect(CollectArgs),
    /// Render a pairs file into training views.
    Views(ViewsArgs),
    /// Run step-scored beam search and report accuracy.
    Search(SearchArgs),
    /// Re-run recorded commands from a transcript and compare outputs byte for byte.
    Replay(ReplayArgs),
    /// Write a synthetic arithmetic corpus.
    Generate(GenerateArgs),
    /// Check every tree file in a directory against the tree invariants.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct CorpusArgs {
    /// Problem corpus (JSON lines).
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    corpus: Option<PathBuf>,
    /// Generate a synthetic corpus: start,target,ops,depth,noise,count,seed.
    #[arg(long)]
    synthetic: Option<String>,
}

impl CorpusArgs {
    fn source(&self) -> Result<CorpusSource, CliError> {
        match (&self.corpus, &self.synthetic) {
            (Some(p), _) => Ok(CorpusSource::File(p.clone())),
            (None, Some(s)) => Ok(CorpusSource::Synthetic(parse_spec(s)?)),
            (None, None) => Err(CliError::usage("one of --corpus or --synthetic is required")),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Append every backend call to this transcript.
    #[arg(long, conflicts_with = "replay")]
    record: Option<PathBuf>,
    /// Answer backend calls from this transcript only.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_depth: Option<usize>,
    /// Agent noise of the synthetic backend.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
}

impl RunArgs {
    fn mode(&self) -> BackendMode {
        match (&self.record, &self.replay) {
            (Some(p), _) => BackendMode::Record(p.clone()),
            (_, Some(p)) => BackendMode::Replay(p.clone()),
            _ => BackendMode::Live,
        }
    }

    fn config(&self, extra: Overrides) -> Result<Config, CliError> {
        let mut cfg = Config::load(self.config.as_deref())?;
        cfg.apply(&Overrides {
            seed: self.seed,
            max_depth: self.max_depth,
            noise: self.noise,
            workers: self.workers,
            ..extra
        });
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct CollectArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    run: RunArgs,
    /// Run directory; existing completed trees are reused.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StatementArg {
    Default,
    Always,
    Never,
}

#[derive(Args)]
struct ViewsArgs {
    #[arg(long)]
    pairs: PathBuf,
    /// full_context, math_only, single_step_math_only, next_thought, or all.
    #[arg(long, default_value = "all")]
    view: String,
    /// Output file, or a directory when --view all.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "default")]
    include_statement: StatementArg,
    /// Emit one labelled record per side instead of chosen/rejected pairs.
    #[arg(long)]
    pointwise: bool,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    run: RunArgs,
    /// random:<seed>[:<view>], oracle[:<set>[:<view>]], noisy-oracle:<sigma>:<seed>[:<view>], http:<url>:<view>
    #[arg(long)]
    scorer: String,
    #[arg(long)]
    beam_size: Option<usize>,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    /// Manifest of a recorded run; repeat in recording order.
    #[arg(long, required = true)]
    manifest: Vec<PathBuf>,
    #[arg(long)]
    transcript: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    /// start,target,ops,depth,noise,count,seed
    #[arg(long)]
    synthetic: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    /// Directory holding *.tree.jsonl files.
    #[arg(long)]
    trees: PathBuf,
}

fn parse_spec(s: &str) -> Result<SyntheticSpec, CliError> {
    s.parse().map_err(|e: steptree_core::synthetic::SyntheticError| CliError::usage(e.to_string()))
}

fn report_corpus(corpus: &Corpus) {
    for e in &corpus.errors {
        warn!("corpus: {e}");
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Cmd::Collect(a) => {
            let cfg = a.run.config(Overrides {
                iterations: a.iterations,
                ..Overrides::default()
            })?;
            let corpus = Corpus::load(&a.corpus.source()?)?;
            report_corpus(&corpus);
            let backend = build_backend(&cfg, &corpus, &a.run.mode())?;
            let m = pipeline::run_collect(&cfg, &corpus, &a.out_dir, backend.as_ref())?;
            for w in &m.warnings {
                warn!("{w}");
            }
            println!(
                "collected {} trees ({} new, {} resumed, {} failed), {} corpus errors -> {}",
                m.count,
                m.new_trees,
                m.resumed,
                m.failures.len(),
                m.errors.len(),
                a.out_dir.display()
            );
        }
        Cmd::Views(a) => {
            let policy = match a.include_statement {
                StatementArg::Default => StatementPolicy::Default,
                StatementArg::Always => StatementPolicy::Always,
                StatementArg::Never => StatementPolicy::Never,
            };
            for s in pipeline::run_views(&a.pairs, &a.view, &a.out, policy, a.pointwise)? {
                let name = s.view.map(|v| v.to_string()).unwrap_or_default();
                println!(
                    "{name}: {} of {} pairs, {} duplicates dropped, {} render errors",
                    s.count, s.input_pairs, s.dedup_count, s.render_errors
                );
            }
        }
        Cmd::Search(a) => {
            let cfg = a.run.config(Overrides {
                beam_size: a.beam_size,
                candidates: a.candidates,
                ..Overrides::default()
            })?;
            let corpus = Corpus::load(&a.corpus.source()?)?;
            report_corpus(&corpus);
            let scorer = build_scorer(&a.scorer, &corpus)?;
            let backend = build_backend(&cfg, &corpus, &a.run.mode())?;
            pipeline::run_search(&cfg, &corpus, &a.out_dir, backend.as_ref(), scorer.as_ref(), &a.scorer)?;
            let text = std::fs::read_to_string(a.out_dir.join(pipeline::REPORT_TEXT_FILE)).unwrap_or_default();
            print!("{text}");
        }
        Cmd::Replay(a) => {
            let v = pipeline::run_replay(&a.manifest, &a.transcript)?;
            if v.pass {
                println!("PASS: {} outputs identical", v.checked);
            } else {
                for miss in &v.replay_misses {
                    println!("FAIL: {miss}");
                }
                for m in &v.mismatches {
                    println!("FAIL: {m} differs");
                }
                return Err(CliError::invariant("replay diverged from the recorded run"));
            }
        }
        Cmd::Generate(a) => {
            let n = pipeline::run_generate(&parse_spec(&a.synthetic)?, &a.out)?;
            info!("generated {n} problems");
            println!("{n} problems -> {}", a.out.display());
        }
        Cmd::Validate(a) => {
            let n = pipeline::validate_trees(&a.trees)?;
            println!("{n} trees valid");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
