use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use oem_core::corpus::{generate_synthetic, load_uci_bag_of_words, SyntheticSpec};
use oem_core::eval::{match_topics, perplexity, DEFAULT_PARTICLES};
use oem_core::harness::{self, CorpusSource, ExperimentConfig, Method};
use oem_core::lda::{AlphaMode, ModelParams};
use oem_core::{Error, Result};

#[derive(Parser)]
#[command(name = "oem", version, about = "Online EM for LDA and HDP topic models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlphaArg {
    FixedPoint,
    Gradient,
    Frozen,
}

impl From<AlphaArg> for AlphaMode {
    fn from(a: AlphaArg) -> Self {
        match a {
            AlphaArg::FixedPoint => AlphaMode::FixedPoint,
            AlphaArg::Gradient => AlphaMode::Gradient,
            AlphaArg::Frozen => AlphaMode::Frozen,
        }
    }
}

#[derive(clap::Args)]
struct TrainArgs {
    /// JSON experiment config; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Step-size delay added to the minibatch counter.
    #[arg(long)]
    step_offset: Option<u64>,
    #[arg(long)]
    minibatch: Option<usize>,
    #[arg(long)]
    local_iters: Option<usize>,
    #[arg(long, value_enum)]
    alpha_mode: Option<AlphaArg>,
    #[arg(long, value_enum)]
    averaging: Option<OnOff>,
    /// One or more seeds, comma separated; each is a separate split.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// UCI `docword` file.
    #[arg(long, conflicts_with = "synthetic")]
    corpus: Option<PathBuf>,
    /// Vocabulary file; derived from the docword name when omitted.
    #[arg(long, requires = "corpus")]
    vocab: Option<PathBuf>,
    /// Synthetic corpus spec, e.g. `k=5,v=100,d=20000,len=40`.
    #[arg(long)]
    synthetic: Option<String>,
    /// Seed of the synthetic corpus.
    #[arg(long, default_value_t = 0)]
    corpus_seed: u64,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    elbo: bool,
    #[arg(long)]
    sgs_reference: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one method.
    Train(Box<TrainArgs>),
    /// Write a synthetic corpus in UCI format along with its true topics.
    Generate {
        #[arg(long)]
        synthetic: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run several JSON configs and merge their summaries.
    Sweep {
        /// Config files, each holding one config or an array of configs.
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        /// Summary CSV to create or merge into.
        #[arg(long)]
        summary: PathBuf,
    },
    /// Match the topics of two models by minimum total KL divergence.
    Match {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Held-out log-perplexity of a saved model.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_PARTICLES)]
        particles: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output prefix for `<out>.csv` and `<out>.json`.
        #[arg(long)]
        out: PathBuf,
    },
}

fn vocab_for(docword: &Path, vocab: Option<PathBuf>) -> Result<PathBuf> {
    if let Some(v) = vocab {
        return Ok(v);
    }
    let name = docword.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    if !name.contains("docword") {
        return Err(Error::Config(format!(
            "cannot derive a vocabulary name from {name:?}; pass --vocab"
        )));
    }
    Ok(docword.with_file_name(name.replacen("docword", "vocab", 1)))
}

fn train_config(args: TrainArgs) -> Result<ExperimentConfig> {
    let mut c = match &args.config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(m) = args.method {
        c.method = m;
    }
    if let Some(k) = args.k {
        c.k = k;
    } else if args.config.is_none() && c.method.is_hdp() {
        c.k = 2;
    }
    if args.kappa.is_some() {
        c.kappa = args.kappa;
    }
    if let Some(o) = args.step_offset {
        c.step_offset = o;
    }
    if let Some(m) = args.minibatch {
        c.minibatch_size = m;
    }
    if let Some(p) = args.local_iters {
        c.local_iters = p;
    }
    if let Some(a) = args.alpha_mode {
        c.alpha_mode = Some(a.into());
    }
    if let Some(a) = args.averaging {
        c.averaging = matches!(a, OnOff::On);
    }
    if let Some(s) = args.seed {
        c.seeds = s;
    }
    if let Some(path) = args.corpus {
        c.corpus = CorpusSource::Uci {
            vocab: vocab_for(&path, args.vocab)?,
            docword: path,
        };
    } else if let Some(spec) = args.synthetic {
        c.corpus = CorpusSource::Synthetic {
            spec,
            seed: args.corpus_seed,
        };
    }
    if let Some(n) = args.n_test {
        c.n_test = n;
    }
    if let Some(e) = args.eval_every {
        c.eval_every = e;
    }
    if let Some(r) = args.particles {
        c.particles = r;
    }
    if args.elbo {
        c.record_elbo = true;
    }
    if args.sgs_reference.is_some() {
        c.sgs_reference = args.sgs_reference;
    }
    if let Some(out) = args.out {
        c.out = out;
    }
    Ok(c)
}

fn load_configs(path: &Path) -> Result<Vec<ExperimentConfig>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    Ok(match value {
        serde_json::Value::Array(items) => items
            .into_iter()
            .map(serde_json::from_value)
            .collect::<std::result::Result<_, _>>()?,
        other => vec![serde_json::from_value(other)?],
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let config = train_config(*args)?;
            let result = harness::run_experiment(&config)?;
            for s in &result.splits {
                println!(
                    "seed {}: log-perplexity {:.4} (initial {:.4}), {} topics",
                    s.seed, s.final_log_perplexity, s.initial_log_perplexity, s.topics
                );
            }
            println!(
                "median {:.4}; results in {}",
                result.summary.median(),
                config.out.display()
            );
        }
        Command::Generate { synthetic, seed, out } => {
            let spec = SyntheticSpec::parse(&synthetic)?;
            let (corpus, truth) = generate_synthetic(&spec, seed)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::Config(format!("{}: {e}", out.display())))?;
            corpus.write_uci(&out.join("docword.synthetic.txt"), &out.join("vocab.synthetic.txt"))?;
            truth.save(&out.join("truth.txt"))?;
            println!(
                "{} documents, {} tokens in {}",
                corpus.len(),
                corpus.num_tokens(),
                out.display()
            );
        }
        Command::Sweep {
            configs,
            parallelism,
            summary,
        } => {
            let mut all = Vec::new();
            for path in &configs {
                all.extend(load_configs(path)?);
            }
            let result = harness::sweep(&all, parallelism)?;
            let existing = if summary.exists() {
                harness::read_summary(&summary)?
            } else {
                Vec::new()
            };
            harness::write_summary(&summary, &harness::merge_summaries(&existing, &result.rows))?;
            for (i, msg) in &result.failures {
                eprintln!("config {i} failed: {msg}");
            }
            println!("{} experiments, {} failed", all.len(), result.failures.len());
        }
        Command::Match { a, b } => {
            let (ma, mb) = (ModelParams::load(&a)?, ModelParams::load(&b)?);
            let m = match_topics(ma.beta(), mb.beta())?;
            println!("topic_a,topic_b,kl");
            for (i, &j) in m.permutation.iter().enumerate() {
                println!("{i},{j},{}", m.divergence[[i, j]]);
            }
            println!("total,,{}", m.total_cost);
        }
        Command::Evaluate {
            model,
            corpus,
            vocab,
            particles,
            seed,
            out,
        } => {
            let model = ModelParams::load(&model)?;
            let vocab = vocab_for(&corpus, vocab)?;
            let corpus = load_uci_bag_of_words(&corpus, &vocab)?;
            let report = perplexity(&corpus, &model.local(), particles, seed)?;
            report.write(&out.with_extension("csv"), &out.with_extension("json"))?;
            println!("mean log-perplexity {:.4}", report.mean_log_perplexity);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
