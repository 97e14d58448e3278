use aqua_core::corpus::{compute_stats, levenshtein_dedup, load_corpus, CorpusError, Problem, DEFAULT_DEDUP_THRESHOLD};
use aqua_core::decode::{beam_decode, force_decode, DecodeConfig, DecodeRecord};
use aqua_core::dsl::AnswerOptions;
use aqua_core::eval::{report, Ablation, EvalError};
use aqua_core::induction::{InducedProgramSet, InductionCache, InductionConfig};
use aqua_core::model::{
    load_checkpoint, save_checkpoint, train, training_examples, CheckpointError, Model, ModelConfig, ModelError,
    TrainExample, TrainOptions, Vocab,
};
use aqua_core::synth;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "aqua", version, about = "Program induction and rationale generation for arithmetic word problems")]
struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log verbosity on standard error: error, warn, info, debug.
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset statistics as `key value` lines.
    Stats {
        corpus: PathBuf,
        /// Print one JSON object instead.
        #[arg(long)]
        json: bool,
    },
    /// Drop training problems whose question nearly matches a held-out one.
    Dedup {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        heldout: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DEDUP_THRESHOLD)]
        threshold: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Induce programs for every problem and report coverage.
    Induce {
        corpus: PathBuf,
        #[command(flatten)]
        search: SearchArgs,
        /// Per-problem coverage records (JSON lines).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train a model on induced programs.
    Train(TrainArgs),
    /// Beam-decode every problem with a trained model.
    Decode {
        #[arg(long)]
        model: PathBuf,
        corpus: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[command(flatten)]
        decode: DecodeArgs,
    },
    /// Perplexity, BLEU-4 and accuracy.
    Eval {
        #[arg(long)]
        model: PathBuf,
        corpus: PathBuf,
        /// Records from `decode`; decoded here when absent.
        #[arg(long)]
        decoded: Option<PathBuf>,
        #[command(flatten)]
        decode: DecodeArgs,
        #[command(flatten)]
        search: SearchArgs,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Synthetic one- and two-step problems with known programs.
    GenSynth {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Standard output when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Serialize)]
struct SearchArgs {
    #[arg(long, default_value_t = 5)]
    depth: usize,
    #[arg(long = "induce-beam", default_value_t = 200)]
    induce_beam: usize,
    /// Programs kept per problem.
    #[arg(long, default_value_t = 8)]
    max_programs: usize,
    #[arg(long, env = "AQUA_CACHE_DIR", default_value = ".aqua-cache")]
    cache_dir: PathBuf,
}

impl SearchArgs {
    fn config(&self) -> InductionConfig {
        InductionConfig { depth: self.depth, beam: self.induce_beam, max_programs: self.max_programs, ..Default::default() }
    }
}

#[derive(Args, Clone, Serialize)]
struct DecodeArgs {
    #[arg(long, default_value_t = 200)]
    beam: usize,
    #[arg(long, default_value_t = 600)]
    max_len: usize,
    /// Instruction candidates per hypothesis and step.
    #[arg(long, default_value_t = 10)]
    expand: usize,
    /// Argument values tried per slot.
    #[arg(long, default_value_t = 5)]
    arg_k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Decode `OUTPUT Id` instructions only.
    #[arg(long)]
    emit_only: bool,
}

impl DecodeArgs {
    fn config(&self) -> DecodeConfig {
        DecodeConfig {
            beam: self.beam,
            max_len: self.max_len,
            expand: self.expand,
            arg_k: self.arg_k,
            seed: self.seed,
            emit_only: self.emit_only,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum AblationArg {
    Softmax,
    CopyInput,
    CopyOutput,
    Full,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::Softmax => Ablation::Softmax,
            AblationArg::CopyInput => Ablation::CopyInput,
            AblationArg::CopyOutput => Ablation::CopyOutput,
            AblationArg::Full => Ablation::Full,
        }
    }
}

#[derive(Args, Clone, Serialize)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(short, long)]
    output: PathBuf,
    /// Training log (JSON lines).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    hidden: usize,
    #[arg(long, default_value_t = 200)]
    embed: usize,
    #[arg(long, default_value_t = 20_000)]
    vocab: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    /// Instructions per staged back-propagation slice.
    #[arg(long, default_value_t = 100)]
    slice_k: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 0.5)]
    lr_decay: f64,
    #[arg(long, default_value_t = 5.0)]
    clip: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    /// Stop once the mean training loss falls below this.
    #[arg(long)]
    target_loss: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "full")]
    ablation: AblationArg,
    #[command(flatten)]
    search: SearchArgs,
}

/// Failures with a distinct exit code each.
#[derive(Debug)]
enum Failure {
    /// Missing or unreadable file, or an output that cannot be written.
    Io(String),
    /// Malformed corpus or decode records.
    Data(String),
    Checkpoint(String),
    /// Invalid settings or a failed computation.
    Run(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 3,
            Failure::Data(_) => 4,
            Failure::Checkpoint(_) => 5,
            Failure::Run(_) => 6,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Io(m) | Failure::Data(m) | Failure::Checkpoint(m) | Failure::Run(m) => m,
        }
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(ref io) if io.kind() == io::ErrorKind::NotFound => Failure::Io(e.to_string()),
            _ => Failure::Checkpoint(e.to_string()),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::Run(e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        Failure::Run(e.to_string())
    }
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

/// Records the command and its settings next to an output file.
fn write_meta(output: &Path, command: &str, settings: &impl Serialize) -> Result<(), Failure> {
    let mut name = output.as_os_str().to_owned();
    name.push(".meta.json");
    let path = PathBuf::from(name);
    let meta = serde_json::json!({ "command": command, "settings": settings });
    let mut w = create(&path)?;
    writeln!(w, "{}", serde_json::to_string_pretty(&meta).expect("json")).map_err(io_err(&path))?;
    w.flush().map_err(io_err(&path))
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<(), Failure> {
    let mut w = create(path)?;
    for l in lines {
        writeln!(w, "{l}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn induce_all(problems: &[Problem], search: &SearchArgs) -> Result<Vec<InducedProgramSet>, Failure> {
    let cache = InductionCache::new(&search.cache_dir).map_err(io_err(&search.cache_dir))?;
    let cfg = search.config();
    problems.par_iter().map(|p| cache.get_or_induce(p, &cfg).map_err(io_err(&search.cache_dir))).collect()
}

fn examples_for(problems: &[Problem], args: &TrainArgs) -> Result<Vec<TrainExample>, Failure> {
    let ablation = Ablation::from(args.ablation);
    if ablation != Ablation::Full {
        return Ok(problems
            .iter()
            .map(|p| TrainExample {
                x: p.source(),
                options: AnswerOptions::new(&p.options),
                programs: vec![ablation.emission_program(p).expect("baseline program")],
            })
            .collect());
    }
    let sets = induce_all(problems, &args.search)?;
    let (data, skipped) = training_examples(problems, &sets, args.search.max_programs);
    if skipped > 0 {
        log::warn!("{skipped} problems without an induced program were skipped");
    }
    Ok(data)
}

fn run_train(args: &TrainArgs) -> Result<(), Failure> {
    let train_p = load_corpus(&args.train)?;
    let dev_p = match &args.dev {
        Some(d) => load_corpus(d)?,
        None => Vec::new(),
    };
    let ablation = Ablation::from(args.ablation);
    let base = ModelConfig {
        hidden_size: args.hidden,
        embed_size: args.embed,
        vocab_size: args.vocab,
        lstm_layers: args.layers,
        slice_k: args.slice_k,
        samples_per_example: args.search.max_programs,
        learning_rate: args.lr,
        lr_decay: args.lr_decay,
        clip_norm: args.clip,
        ..ModelConfig::default()
    };
    let config = ablation.configure(&base);
    config.validate()?;
    let data = examples_for(&train_p, args)?;
    let dev = examples_for(&dev_p, args)?;
    if data.is_empty() {
        return Err(Failure::Data(format!("{}: no usable training problems", args.train.display())));
    }
    let vocab = Vocab::build(&train_p, config.vocab_size);
    log::info!("{} training examples, {} dev, vocabulary {}", data.len(), dev.len(), vocab.len());
    let mut model = Model::new(config, vocab, args.seed);
    let opts = TrainOptions { epochs: args.epochs, batch_size: args.batch, seed: args.seed, target_loss: args.target_loss };
    let mut log_file = args.log.as_deref().map(create).transpose()?;
    let summary = train(&mut model, &data, &dev, &opts, log_file.as_mut().map(|w| w as &mut dyn Write))?;
    if let (Some(w), Some(p)) = (log_file.as_mut(), args.log.as_deref()) {
        w.flush().map_err(io_err(p))?;
    }
    save_checkpoint(&model, &args.output)?;
    write_meta(&args.output, "train", &serde_json::json!({ "args": args, "summary": summary }))?;
    log::info!("{} steps over {} epochs, final loss {:.4}", summary.steps, summary.epochs_run, summary.epoch_losses.last().unwrap_or(&f64::NAN));
    Ok(())
}

fn decode_all(model: &Model, problems: &[Problem], cfg: &DecodeConfig) -> Result<Vec<DecodeRecord>, Failure> {
    let out = problems
        .par_iter()
        .enumerate()
        .map(|(i, p)| beam_decode(model, &p.source(), &AnswerOptions::new(&p.options), cfg).map(|d| DecodeRecord::new(i, &d)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(out)
}

fn read_records(path: &Path) -> Result<Vec<DecodeRecord>, Failure> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line)
            .map_err(|e| Failure::Data(format!("{} line {}: {e}", path.display(), i + 1)))?;
        out.push(r);
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Command::Stats { corpus, json } => {
            let s = compute_stats(&load_corpus(&corpus)?);
            if json {
                println!("{}", serde_json::to_string(&s).expect("json"));
            } else {
                print!("{s}");
            }
        }
        Command::Dedup { train, heldout, threshold, output } => {
            if !(0.0..=1.0).contains(&threshold) {
                return Err(Failure::Run(format!("threshold {threshold} outside [0, 1]")));
            }
            let (t, h) = (load_corpus(&train)?, load_corpus(&heldout)?);
            let kept = levenshtein_dedup(&h, &t, threshold);
            log::info!("kept {} of {} training problems", kept.len(), t.len());
            write_lines(&output, kept.iter().map(Problem::to_json_line))?;
        }
        Command::Induce { corpus, search, report } => {
            let problems = load_corpus(&corpus)?;
            let sets = induce_all(&problems, &search)?;
            let covered = sets.iter().filter(|s| s.programs.iter().any(|p| p.fallbacks == 0)).count();
            let any = sets.iter().filter(|s| !s.is_empty()).count();
            let caps: usize = sets.iter().map(|s| s.caps_hit).sum();
            let pct = 100.0 * covered as f64 / problems.len().max(1) as f64;
            println!("problems {}", problems.len());
            println!("covered {covered} ({pct:.2}%)");
            println!("with_any_program {any}");
            println!("caps_hit {caps}");
            if let Some(path) = report {
                write_lines(
                    &path,
                    sets.iter().enumerate().map(|(i, s)| {
                        serde_json::json!({
                            "id": i,
                            "covered": s.programs.iter().any(|p| p.fallbacks == 0),
                            "n_programs": s.programs.len(),
                            "stuck_at": s.stuck_at,
                            "program": s.programs.first().map(|p| p.program.to_string()),
                        })
                        .to_string()
                    }),
                )?;
                write_meta(&path, "induce", &search)?;
            }
        }
        Command::Train(args) => run_train(&args)?,
        Command::Decode { model, corpus, output, decode } => {
            let m = load_checkpoint(&model)?;
            let problems = load_corpus(&corpus)?;
            let records = decode_all(&m, &problems, &decode.config())?;
            write_lines(&output, records.iter().map(|r| serde_json::to_string(r).expect("json")))?;
            write_meta(&output, "decode", &decode)?;
            let fb = records.iter().filter(|r| r.fallback).count();
            log::info!("decoded {} problems, {fb} fallback choices", records.len());
        }
        Command::Eval { model, corpus, decoded, decode, search, json } => {
            let m = load_checkpoint(&model)?;
            let problems = load_corpus(&corpus)?;
            let records = match decoded {
                Some(path) => {
                    let mut r = read_records(&path)?;
                    r.sort_by_key(|r| r.id);
                    r
                }
                None => decode_all(&m, &problems, &decode.config())?,
            };
            let force = search.config();
            let forced = problems
                .par_iter()
                .map(|p| force_decode(&m, &p.source(), &p.target(), &AnswerOptions::new(&p.options), &force))
                .collect::<Result<Vec<_>, _>>()?;
            let unk = forced.iter().map(|f| f.unk_tokens).sum();
            let lps: Vec<Vec<f64>> = forced.into_iter().map(|f| f.token_logprobs).collect();
            let rep = report(&problems, &records, &lps, unk)?;
            println!("{rep}");
            if let Some(path) = json {
                write_lines(&path, [serde_json::to_string(&rep).expect("json")])?;
                write_meta(&path, "eval", &serde_json::json!({ "decode": decode, "search": search }))?;
            }
        }
        Command::GenSynth { n, seed, output } => {
            let lines = synth::generate(n, seed).iter().map(Problem::to_json_line).collect::<Vec<_>>();
            match output {
                Some(path) => {
                    write_lines(&path, lines)?;
                    write_meta(&path, "gen-synth", &serde_json::json!({ "n": n, "seed": seed }))?;
                }
                None => {
                    let mut out = io::stdout().lock();
                    for l in lines {
                        writeln!(out, "{l}").map_err(|e| Failure::Io(e.to_string()))?;
                    }
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).format_timestamp(None).init();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(6);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
