mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use sedcap::captioner::{build_examples, build_model, load_model, save_model, train, Captioner, ModelConfig};
use sedcap::data::{load_manifest, synth_clip, synth_label_table, write_synth_split, Manifest};
use sedcap::embeddings::{load_embeddings, save_embeddings, train_on_captions};
use sedcap::events::{build_event_corpus, EventCorpus, EventEncoder, EventLabelTable};
use sedcap::fsutil::write_atomic;
use sedcap::gradcheck::{run_gradcheck, GradCheckConfig};
use sedcap::metrics::evaluate;
use sedcap::text::{build_vocab, normalize_caption, TokenSeq, Vocabulary};
use sedcap::{Error, Result, SeededRng};
use serde::Serialize;

use config::{pick, RunConfig};

#[derive(Parser)]
#[command(name = "sedcap", version, about = "Sound-event-conditioned audio captioning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every random draw (default 42).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for per-clip work (default 1).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize the 527 event labels into the sorted event corpus.
    PrepEvents {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train skip-gram word embeddings on the manifest captions.
    TrainEmbeddings {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Where to write the vocabulary (default: OUT with extension .vocab).
        #[arg(long)]
        vocab_out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the captioner; keeps the epoch with the lowest validation loss.
    Train {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Pretrained EMB1 embeddings. Without them the vocabulary is built
        /// from the training captions and embeddings start random.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Vocabulary matching the embeddings (default: EMBEDDINGS with extension .vocab).
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-epoch losses as JSONL (default: OUT with extension .history.jsonl).
        #[arg(long)]
        history: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Greedy-decode a caption for every clip of a manifest.
    Caption {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Score predictions against references; prints the metric table.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        references: PathBuf,
        /// SPICE scores from an external tool, per clip or corpus-level.
        #[arg(long)]
        spice: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare every analytic gradient with central finite differences.
    Gradcheck {
        #[arg(long)]
        seed: Option<u64>,
        /// Number of consecutive seeds to run.
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        /// Print the full report as JSON.
        #[arg(long)]
        json: bool,
        #[arg(long, hide = true)]
        perturb_backward: bool,
    },
    /// Write a synthetic train/val fixture with a matching label table.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        train_clips: usize,
        #[arg(long, default_value_t = 4)]
        val_clips: usize,
        #[arg(long, default_value_t = 16)]
        frames: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        /// Choices per grammar slot (1..=6).
        #[arg(long, default_value_t = 3)]
        options: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::PrepEvents { labels, out } => {
            let corpus = build_event_corpus(&EventLabelTable::load(&labels)?)?;
            corpus.save(&out)?;
            println!("event corpus: {} tokens", corpus.len());
        }
        Command::TrainEmbeddings {
            manifest,
            out,
            vocab_out,
            common,
        } => {
            let cfg = setup(&common)?;
            let manifest = load_manifest(&pick(manifest, &cfg.paths.manifest, "manifest")?)?;
            let out = pick(out, &cfg.paths.out, "out")?;
            let vocab_out = vocab_out.unwrap_or_else(|| out.with_extension("vocab"));
            let captions = normalized_captions(&manifest);
            let vocab = build_vocab(&captions)?;
            let model = train_on_captions(&captions, &vocab, &cfg.skipgram)?;
            save_embeddings(&model.embeddings, &out)?;
            vocab.save(&vocab_out)?;
            println!(
                "embeddings: {} x {} -> {}",
                model.embeddings.vocab_size(),
                model.embeddings.dim(),
                out.display()
            );
        }
        Command::Train {
            train: train_path,
            val,
            labels,
            corpus,
            embeddings,
            vocab,
            out,
            history,
            common,
        } => {
            let cfg = setup(&common)?;
            let p = &cfg.paths;
            let table = EventLabelTable::load(&pick(labels, &p.labels, "labels")?)?;
            let corpus = EventCorpus::load(&pick(corpus, &p.corpus, "corpus")?)?;
            let events = EventEncoder::new(table, corpus, cfg.threshold())?;
            let train_m = load_manifest(&pick(train_path, &p.train, "train")?)?;
            let val_m = load_manifest(&pick(val, &p.val, "val")?)?;
            let out = pick(out, &p.out, "out")?;
            let history = history.or_else(|| p.history.clone()).unwrap_or_else(|| out.with_extension("history.jsonl"));

            let (vocab, emb) = match embeddings.or_else(|| p.embeddings.clone()) {
                Some(e) => {
                    let v = vocab.or_else(|| p.vocab.clone()).unwrap_or_else(|| e.with_extension("vocab"));
                    (Vocabulary::load(&v)?, Some(load_embeddings(&e)?))
                }
                None => (build_vocab(&normalized_captions(&train_m))?, None),
            };
            let first = train_m
                .records
                .first()
                .ok_or_else(|| Error::Validation("training manifest is empty".into()))?;
            let feature_dim = train_m.load_features(first)?.dim();
            let mc = ModelConfig::new(feature_dim, events.dim(), vocab.len(), cfg.architecture.clone());
            let model = build_model(&mc, emb.as_ref(), &mut SeededRng::new(cfg.seed()))?;
            let train_ex = build_examples(&train_m, &vocab, &events)?;
            let val_ex = build_examples(&val_m, &vocab, &events)?;
            let outcome = train(model, &train_ex, &val_ex, &cfg.training)?;

            save_model(&Captioner::new(outcome.model, vocab, events)?, &out)?;
            // Wall-clock times stay in the log so reruns write identical files.
            let mut lines = String::new();
            for r in &outcome.history {
                let rec = HistoryLine {
                    epoch: r.epoch,
                    train_loss: r.train_loss,
                    val_loss: r.val_loss,
                };
                lines.push_str(&serde_json::to_string(&rec).expect("history serializes"));
                lines.push('\n');
            }
            write_atomic(&history, lines.as_bytes())?;
            println!(
                "best epoch {} val loss {:.6} -> {}",
                outcome.best_epoch,
                outcome.best_val_loss,
                out.display()
            );
        }
        Command::Caption {
            model,
            manifest,
            out,
            threads,
        } => {
            let captioner = load_model(&model)?;
            let manifest = load_manifest(&manifest)?;
            if manifest.is_empty() {
                return Err(Error::Validation("manifest has no clips to caption".into()));
            }
            let captions: Vec<Result<String>> = pool(threads.unwrap_or(1))?.install(|| {
                manifest
                    .records
                    .par_iter()
                    .map(|rec| {
                        let feats = manifest.load_features(rec)?;
                        let probs = manifest.load_event_probs(rec)?;
                        let seq = captioner.caption(&feats, &probs)?;
                        Ok(serde_json::to_string(&Prediction {
                            clip_id: &rec.clip_id,
                            caption: seq.text(),
                        })
                        .expect("prediction serializes"))
                    })
                    .collect()
            });
            let mut text = String::new();
            for c in captions {
                text.push_str(&c?);
                text.push('\n');
            }
            write_atomic(&out, text.as_bytes())?;
            println!("{} captions -> {}", manifest.len(), out.display());
        }
        Command::Evaluate {
            predictions,
            references,
            spice,
            out,
        } => {
            let report = evaluate(&predictions, &references, spice.as_deref())?;
            write_atomic(&out, report.to_json().as_bytes())?;
            print!("{}", report.table());
        }
        Command::Gradcheck {
            seed,
            seeds,
            json,
            perturb_backward,
        } => {
            let seed = seed.unwrap_or(config::DEFAULT_SEED);
            log::info!("seed {seed}");
            let report = run_gradcheck(&GradCheckConfig {
                seed,
                seeds,
                perturb_backward,
                ..Default::default()
            })?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else {
                for (name, err, ok) in report.summary() {
                    println!("{name:<28} {err:.3e}  {}", if ok { "ok" } else { "FAIL" });
                }
                println!(
                    "max relative error {:.3e} over {} seeds (tolerance {:e}): {}",
                    report.max_rel_error,
                    report.seeds.len(),
                    report.tolerance,
                    if report.passed { "PASS" } else { "FAIL" }
                );
            }
            if !report.passed {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Synth {
            out,
            train_clips,
            val_clips,
            frames,
            dim,
            options,
            seed,
        } => {
            let seed = seed.unwrap_or(config::DEFAULT_SEED);
            println!("seed {seed}");
            let mut rng = SeededRng::new(seed);
            for (split, n) in [("train", train_clips), ("val", val_clips)] {
                let clips = (0..n)
                    .map(|i| Ok((format!("{split}_{i:04}"), synth_clip(rng.next_u64(), frames, dim, options)?)))
                    .collect::<Result<Vec<_>>>()?;
                let path = write_synth_split(&out, split, &clips)?;
                println!("{split}: {n} clips -> {}", path.display());
            }
            write_atomic(&out.join("labels.txt"), synth_label_table().to_text().as_bytes())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Load and validate the run config, print the seed, size the thread pool.
fn setup(common: &Common) -> Result<RunConfig> {
    let cfg = RunConfig::load(common.config.as_deref())?.finish(common.seed, common.threads)?;
    println!("seed {}", cfg.seed());
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads())
        .build_global()
        .map_err(|e| Error::InvalidState(format!("thread pool: {e}")))?;
    Ok(cfg)
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    if threads == 0 {
        return Err(Error::InvalidArgument("threads must be >= 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidState(format!("thread pool: {e}")))
}

fn normalized_captions(m: &Manifest) -> Vec<TokenSeq> {
    m.records
        .iter()
        .flat_map(|r| r.captions.iter().map(|c| normalize_caption(c)))
        .collect()
}

#[derive(Serialize)]
struct HistoryLine {
    epoch: usize,
    train_loss: f64,
    val_loss: f64,
}

#[derive(Serialize)]
struct Prediction<'a> {
    clip_id: &'a str,
    caption: String,
}
