//! `dyhgcn` command-line interface: dataset preparation, synthetic corpora,
//! training, evaluation and next-user prediction.

mod run_config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use dyhgcn::data::{generate_synthetic, load_cascades, load_social_edges, split_dataset, write_cascades, write_social_edges, DataError, Event, SplitRatios, SynthConfig, UnknownUserPolicy};
use dyhgcn::eval::{top_k, DEFAULT_KS};
use dyhgcn::train::format_epoch_log;
use dyhgcn::{evaluate, train, Checkpoint, ModelScorer, PreparedData, SplitName};

use run_config::RunConfig;

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const MANIFEST_FILE: &str = "checkpoint.manifest";
pub const EPOCH_LOG_FILE: &str = "epochs.log";
pub const RUN_CONFIG_FILE: &str = "run.toml";

#[derive(Parser)]
#[command(name = "dyhgcn", version, about = "Next-infected-user prediction with dynamic heterogeneous graph convolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the vocabulary and a seeded train/valid/test split
    Prepare {
        /// Cascade file: one cascade per line of `user,timestamp` tokens
        #[arg(long)]
        cascades: PathBuf,
        /// Social edge file: `follower followee` per line
        #[arg(long)]
        edges: Option<PathBuf>,
        /// Continue with an empty social graph when no edge file is available
        #[arg(long)]
        allow_no_social: bool,
        /// Add users that appear only in the edge file to the vocabulary
        #[arg(long)]
        extend_vocab: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Longest cascade kept; later events are dropped
        #[arg(long, default_value_t = 200)]
        max_len: usize,
    },
    /// Generate an independent-cascade corpus on a random follow graph
    GenSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        users: usize,
        #[arg(long, default_value_t = 400)]
        num_edges: usize,
        #[arg(long, default_value_t = 200)]
        num_cascades: usize,
        #[arg(long, default_value_t = 0.3)]
        ic_prob: f64,
        #[arg(long, default_value_t = 1.5)]
        horizon: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train a model on a prepared dataset
    Train {
        /// Flat `key = value` file; flags take precedence
        #[arg(long)]
        config: Option<PathBuf>,
        /// Print the resolved configuration and exit
        #[arg(long)]
        print_config: bool,
        #[command(flatten)]
        run: RunConfig,
    },
    /// Score a split of a prepared dataset
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// train | valid | test
        #[arg(long, default_value = "test", value_parser = parse_split)]
        split: SplitName,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
        ks: Vec<usize>,
        #[arg(long)]
        json: bool,
    },
    /// Rank the most likely next users for a partial cascade
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Observed events as `user,timestamp` tokens
        #[arg(long)]
        prefix: String,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
    },
}

fn parse_split(s: &str) -> Result<SplitName, String> {
    SplitName::parse(s).ok_or_else(|| format!("unknown split `{s}` (expected train, valid or test)"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Prepare {
            cascades,
            edges,
            allow_no_social,
            extend_vocab,
            out,
            seed,
            max_len,
        } => prepare(&cascades, edges.as_deref(), allow_no_social, extend_vocab, &out, seed, max_len),
        Command::GenSynth {
            out,
            users,
            num_edges,
            num_cascades,
            ic_prob,
            horizon,
            seed,
        } => gen_synth(
            &out,
            &SynthConfig {
                num_users: users,
                num_edges,
                num_cascades,
                ic_prob,
                horizon,
                seed,
            },
        ),
        Command::Train { config, print_config, run } => {
            let file = match &config {
                Some(path) => RunConfig::load(path)?,
                None => RunConfig::default(),
            };
            let run = run.over(&file);
            if print_config {
                print!("{}", run.resolved().to_toml());
                return Ok(());
            }
            train_cmd(&run)
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            ks,
            json,
        } => eval_cmd(&checkpoint, &data, split, &ks, json),
        Command::Predict { checkpoint, data, prefix, k } => predict(&checkpoint, &data, &prefix, k),
    }
}

fn prepare(cascades: &Path, edges: Option<&Path>, allow_no_social: bool, extend_vocab: bool, out: &Path, seed: u64, max_len: usize) -> Result<()> {
    let (cascades, mut vocab) = load_cascades(cascades, max_len)?;
    let edges = match edges {
        Some(path) if path.exists() => {
            let policy = if extend_vocab { UnknownUserPolicy::Extend } else { UnknownUserPolicy::Error };
            let loaded = load_social_edges(path, &mut vocab, policy).map_err(|e| {
                let unknown = matches!(&e, DataError::File { error, .. } if matches!(**error, DataError::UnknownUser { .. }));
                let e = anyhow::Error::from(e);
                if unknown {
                    e.context("edge file names users absent from the cascades (pass --extend-vocab to keep them)")
                } else {
                    e
                }
            })?;
            if loaded.self_loops_skipped > 0 {
                log::warn!("{}: skipped {} self-loop lines", path.display(), loaded.self_loops_skipped);
            }
            if loaded.duplicates_collapsed > 0 {
                log::warn!("{}: collapsed {} duplicate edges", path.display(), loaded.duplicates_collapsed);
            }
            loaded.edges
        }
        Some(path) if allow_no_social => {
            log::warn!("{} not found; continuing without a social graph", path.display());
            Vec::new()
        }
        Some(path) => bail!("social edge file {} not found (pass --allow-no-social to continue without one)", path.display()),
        None if allow_no_social => Vec::new(),
        None => bail!("no --edges file given (pass --allow-no-social to continue without a social graph)"),
    };
    let split = split_dataset(cascades, SplitRatios::default(), seed)?;
    let prepared = PreparedData::new(vocab, split, edges)?;
    prepared.write(out)?;
    let meta = prepared.meta();
    println!(
        "{} users, {} train / {} valid / {} test cascades, {} social edges -> {}",
        meta.num_users,
        meta.train,
        meta.valid,
        meta.test,
        meta.social_edges,
        out.display()
    );
    Ok(())
}

fn gen_synth(out: &Path, config: &SynthConfig) -> Result<()> {
    let corpus = generate_synthetic(config)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let cascades_path = out.join("cascades.txt");
    let edges_path = out.join("edges.txt");
    fs::write(&cascades_path, write_cascades(&corpus.cascades, &corpus.vocab)).with_context(|| format!("writing {}", cascades_path.display()))?;
    fs::write(&edges_path, write_social_edges(&corpus.edges, &corpus.vocab)).with_context(|| format!("writing {}", edges_path.display()))?;
    println!("{} cascades over {} users, {} edges -> {}", corpus.cascades.len(), corpus.vocab.len(), corpus.edges.len(), out.display());
    Ok(())
}

fn train_cmd(run: &RunConfig) -> Result<()> {
    let Some(data) = &run.data else {
        bail!("--data is required (flag or config file)");
    };
    let Some(out) = &run.out else {
        bail!("--out is required (flag or config file)");
    };
    let model_config = run.model_config();
    let train_config = run.train_config();
    let prepared = PreparedData::read(data)?;
    let graph = prepared.graph(&model_config)?;
    let outcome = train(
        &prepared.normalized(SplitName::Train),
        &prepared.normalized(SplitName::Valid),
        &graph,
        model_config,
        prepared.vocab.len(),
        &train_config,
    )?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let checkpoint = Checkpoint::new(&outcome.model, &outcome.adam);
    checkpoint.save(&out.join(CHECKPOINT_FILE))?;
    let write = |name: &str, text: String| {
        let path = out.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    };
    write(MANIFEST_FILE, checkpoint.manifest())?;
    write(EPOCH_LOG_FILE, format_epoch_log(&outcome.log))?;
    write(RUN_CONFIG_FILE, run.resolved().to_toml())?;
    println!(
        "kept epoch {} of {} (valid hits@10 {:.4}) -> {}",
        outcome.best_epoch,
        outcome.log.len(),
        outcome.best_valid_hits10,
        out.display()
    );
    Ok(())
}

/// Checkpoint and dataset, checked for a matching vocabulary.
fn load_pair(checkpoint: &Path, data: &Path) -> Result<(Checkpoint, PreparedData)> {
    let ckpt = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let prepared = PreparedData::read(data)?;
    ckpt.check_vocab(prepared.vocab.len())?;
    Ok((ckpt, prepared))
}

fn eval_cmd(checkpoint: &Path, data: &Path, split: SplitName, ks: &[usize], json: bool) -> Result<()> {
    let (ckpt, prepared) = load_pair(checkpoint, data)?;
    let model = ckpt.model()?;
    let graph = prepared.graph(&ckpt.config)?;
    let scorer = ModelScorer::new(&model, &graph)?;
    let report = evaluate(&scorer, &prepared.normalized(split), ks)?;
    if json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_kv_text());
    }
    Ok(())
}

fn parse_prefix(line: &str, prepared: &PreparedData) -> Result<Vec<Event>> {
    let mut events: Vec<Event> = Vec::new();
    for token in line.split_whitespace() {
        let Some((user, time)) = token.rsplit_once(',') else {
            bail!("prefix token `{token}` is not `user,timestamp`");
        };
        let Some(id) = prepared.vocab.get(user) else {
            bail!("unknown user `{user}` in prefix");
        };
        let time: f64 = time.parse().with_context(|| format!("bad timestamp in prefix token `{token}`"))?;
        if !time.is_finite() || time < 0.0 {
            bail!("bad timestamp in prefix token `{token}`");
        }
        events.push(Event::new(id, prepared.normalizer.normalize(time)));
    }
    if events.is_empty() {
        bail!("prefix has no events");
    }
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut seen = vec![false; prepared.vocab.len()];
    events.retain(|e| !std::mem::replace(&mut seen[e.user.0], true));
    Ok(events)
}

fn predict(checkpoint: &Path, data: &Path, prefix: &str, k: usize) -> Result<()> {
    let (ckpt, prepared) = load_pair(checkpoint, data)?;
    let events = parse_prefix(prefix, &prepared)?;
    let model = ckpt.model()?;
    let graph = prepared.graph(&ckpt.config)?;
    let reps = model.inference_reps(&graph)?;
    let scores = model.score_events(&reps, &events)?;
    let mut excluded = vec![false; prepared.vocab.len()];
    for e in &events {
        excluded[e.user.0] = true;
    }
    for (user, score) in top_k(scores.row(events.len() - 1), &excluded, k) {
        println!("{}\t{score:.6}", prepared.vocab.name(dyhgcn::UserId(user)));
    }
    Ok(())
}
