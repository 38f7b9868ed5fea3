//! Command-line surface. Data goes to stdout, diagnostics to stderr.
//!
//! Exit codes: `detect` returns 0 when the text is flagged and 1 when it is
//! not; every command returns 2 on error.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::detect::{self, DedupMode, DedupPolicy};
use crate::prf::SecretKey;
use crate::report;
use crate::simulate::{self, ExperimentGrid, Models, DEFAULT_PROMPT};
use crate::textmodel::{ingest_jsonl, RoleAliases, TokenSeq, Vocabulary};
use crate::toylm::NgramLM;
use crate::wmgen::{self, Scheme, WatermarkConfig};

pub const SEED_ENV: &str = "MIMICRY_LAB_SEED";

/// Toy LM settings used by the shipped configs.
pub const DEFAULT_ORDER: usize = 3;
pub const DEFAULT_K: f64 = 1e-4;

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Parser)]
#[command(name = "mimicry-lab", version, about = "Watermark mimicry experiments on a toy n-gram LM")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an add-k backoff n-gram model on a line-per-segment corpus.
    TrainLm(TrainLmArgs),
    /// Generate a continuation, optionally watermarked.
    Generate(GenerateArgs),
    /// Score a text for a watermark; prints a JSON result.
    Detect(DetectArgs),
    /// Run a conversation grid from a JSON run config.
    Simulate(SimulateArgs),
    /// Highlight spans shared between a prompt and a response.
    Annotate(AnnotateArgs),
    /// Score every turn of a JSONL conversation dump; prints a trajectory CSV.
    ScoreDataset(ScoreDatasetArgs),
}

fn parse_key(s: &str) -> Result<u64, String> {
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    parsed.map_err(|e| format!("invalid key {s:?}: {e}"))
}

#[derive(Debug, Args)]
pub struct TrainLmArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    pub order: usize,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: f64,
    /// Surfaces seen fewer times map to <unk>.
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct WatermarkArgs {
    #[arg(long, default_value = "greenlist")]
    pub scheme: Scheme,
    /// Secret key, decimal or 0x-prefixed hex.
    #[arg(long, value_parser = parse_key, default_value = "0")]
    pub key: u64,
    #[arg(long = "ngram", default_value_t = 4)]
    pub h: usize,
    #[arg(long, default_value_t = 0.25)]
    pub gamma: f64,
    #[arg(long, default_value_t = 2.0)]
    pub delta: f64,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub wm: WatermarkArgs,
    #[arg(long = "temp", default_value_t = 1.0)]
    pub temperature: f64,
    /// Prompt file, or `builtin` for the default chat prompt.
    #[arg(long, default_value = "builtin")]
    pub prompt: String,
    #[arg(long, default_value_t = 200)]
    pub max_tokens: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Model file; only its vocabulary is used, to tokenize the input.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub wm: WatermarkArgs,
    #[arg(long, default_value_t = 0.01)]
    pub alpha: f64,
    #[arg(long, default_value = "in_text")]
    pub dedup: DedupMode,
    /// Reference text for `--dedup cross_prompt`.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Text to score; stdin when absent.
    pub file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's master_seed.
    #[arg(long, env = SEED_ENV)]
    pub seed: Option<u64>,
    /// Overrides the config's out_dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub prompt: PathBuf,
    #[arg(long)]
    pub response: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub min_len: usize,
    /// Where to write the HTML page; text goes to stdout regardless.
    #[arg(long)]
    pub html: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DetectorKind {
    Ratio,
    Greenlist,
    Expmin,
}

#[derive(Debug, Args)]
pub struct ScoreDatasetArgs {
    #[arg(long)]
    pub jsonl: PathBuf,
    #[arg(long, value_enum)]
    pub detector: DetectorKind,
    /// Observer model (ratio) or tokenizer source (watermark detectors).
    #[arg(long)]
    pub model: PathBuf,
    /// Performer model for the ratio detector.
    #[arg(long)]
    pub performer: Option<PathBuf>,
    /// Human reference segments, one per line, for threshold calibration.
    #[arg(long)]
    pub calibrate: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    pub fpr: f64,
    /// Ratio threshold when not calibrating.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Keep only conversations with at least this many turns.
    #[arg(long, default_value_t = 0)]
    pub min_turns: usize,
    /// Turns shorter than this many tokens are not scored.
    #[arg(long, default_value_t = 5)]
    pub min_tokens: usize,
    #[arg(long, value_parser = parse_key, default_value = "0")]
    pub key: u64,
    #[arg(long = "ngram", default_value_t = 4)]
    pub h: usize,
    #[arg(long, default_value_t = 0.25)]
    pub gamma: f64,
    /// Score the flag indicator instead of the raw statistic.
    #[arg(long)]
    pub flags: bool,
}

/// Where the simulation's models come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum ModelSource {
    Path {
        path: PathBuf,
    },
    Train {
        corpus: PathBuf,
        order: usize,
        k: f64,
        #[serde(default = "one")]
        min_count: usize,
    },
}

fn one() -> usize {
    1
}

fn default_min_match() -> usize {
    3
}

/// Batch configuration for `simulate`. Relative paths resolve against the
/// config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: ExperimentGrid,
    pub speaker_model: ModelSource,
    /// Defaults to the speaker's model.
    #[serde(default)]
    pub responder_model: Option<ModelSource>,
    pub lambda: f64,
    #[serde(default = "default_min_match")]
    pub min_match: usize,
    pub out_dir: PathBuf,
    pub master_seed: u64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, BoxError> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.speaker_model.rebase(base);
        if let Some(m) = cfg.responder_model.as_mut() {
            m.rebase(base);
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), BoxError> {
        self.grid.validate()?;
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(format!("lambda must lie in [0, 1], got {}", self.lambda).into());
        }
        if self.min_match == 0 {
            return Err("min_match must be >= 1".into());
        }
        Ok(())
    }
}

impl ModelSource {
    fn rebase(&mut self, base: &Path) {
        let p = match self {
            ModelSource::Path { path } => path,
            ModelSource::Train { corpus, .. } => corpus,
        };
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }

    pub fn load(&self, vocab: Option<&Vocabulary>) -> Result<(NgramLM, Vocabulary), BoxError> {
        match self {
            ModelSource::Path { path } => {
                let (lm, v) = NgramLM::load(path)?;
                if let Some(want) = vocab {
                    lm.check_vocab(want)?;
                }
                Ok((lm, v))
            }
            ModelSource::Train {
                corpus,
                order,
                k,
                min_count,
            } => {
                let lines = read_corpus(corpus)?;
                let vocab = match vocab {
                    Some(v) => v.clone(),
                    None => Vocabulary::build(&lines, *min_count)?,
                };
                let seqs: Vec<TokenSeq> = lines.iter().map(|l| vocab.tokenize(l)).collect();
                Ok((NgramLM::train(&seqs, *order, *k, &vocab)?, vocab))
            }
        }
    }
}

/// Nonempty lines of a corpus file.
pub fn read_corpus(path: &Path) -> Result<Vec<String>, BoxError> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}

fn read_text(path: &Path) -> Result<String, BoxError> {
    Ok(fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?)
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::TrainLm(a) => cmd_train_lm(&a).map(|_| 0),
        Command::Generate(a) => cmd_generate(&a).map(|_| 0),
        Command::Detect(a) => cmd_detect(&a).map(|flagged| if flagged { 0 } else { 1 }),
        Command::Simulate(a) => cmd_simulate(&a).map(|_| 0),
        Command::Annotate(a) => cmd_annotate(&a).map(|_| 0),
        Command::ScoreDataset(a) => cmd_score_dataset(&a).map(|_| 0),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

pub fn cmd_train_lm(a: &TrainLmArgs) -> Result<(), BoxError> {
    let lines = read_corpus(&a.corpus)?;
    let vocab = Vocabulary::build(&lines, a.min_count)?;
    let seqs: Vec<TokenSeq> = lines.iter().map(|l| vocab.tokenize(l)).collect();
    let lm = NgramLM::train(&seqs, a.order, a.k, &vocab)?;
    lm.save(&vocab, &a.out)?;
    let mut out = io::stdout().lock();
    writeln!(out, "vocab_size\t{}", vocab.len())?;
    writeln!(out, "checksum\t{}", lm.checksum(&vocab)?)?;
    Ok(())
}

fn watermark_config(wm: &WatermarkArgs, temperature: f64, alpha: f64) -> Result<WatermarkConfig, BoxError> {
    let cfg = WatermarkConfig {
        scheme: wm.scheme,
        key: SecretKey(wm.key),
        key_id: 0,
        h: wm.h,
        gamma: wm.gamma,
        delta: wm.delta,
        temperature,
        alpha,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<(), BoxError> {
    let (lm, vocab) = NgramLM::load(&a.model)?;
    let cfg = watermark_config(&a.wm, a.temperature, 0.01)?;
    let prompt_text = if a.prompt == "builtin" {
        DEFAULT_PROMPT.to_string()
    } else {
        read_text(Path::new(&a.prompt))?
    };
    let prompt = vocab.tokenize(&prompt_text);
    let out = wmgen::generate(&lm, &prompt, &cfg, a.max_tokens, None, a.seed)?;
    println!("{}", vocab.detokenize(&out));
    Ok(())
}

pub fn cmd_detect(a: &DetectArgs) -> Result<bool, BoxError> {
    let vocab = NgramLM::load(&a.model)?.1;
    let cfg = watermark_config(&a.wm, 1.0, a.alpha)?;
    let text = match &a.file {
        Some(p) => read_text(p)?,
        None => {
            let mut s = String::new();
            io::stdin().read_to_string(&mut s)?;
            s
        }
    };
    let reference = a.reference.as_deref().map(read_text).transpose()?.map(|r| vocab.tokenize(&r));
    let policy = DedupPolicy::new(a.dedup, reference.as_deref())?;
    let result = detect::detect(&vocab.tokenize(&text), &cfg, &policy)?;
    println!("{}", result.to_json());
    Ok(result.flagged)
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<(), BoxError> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &a.out {
        cfg.out_dir = out.clone();
    }
    let (speaker, vocab) = cfg.speaker_model.load(None)?;
    let responder = match &cfg.responder_model {
        Some(src) => Some(src.load(Some(&vocab))?.0),
        None => None,
    };
    let models = Models::new(&speaker, responder.as_ref().unwrap_or(&speaker), cfg.lambda, cfg.min_match, &vocab);
    eprintln!(
        "simulate: {} cells x {} conversations on {} thread(s)",
        cfg.grid.cells().len(),
        cfg.grid.conversations,
        a.jobs
    );
    let results = simulate::run_grid(&cfg.grid, &models, cfg.master_seed, a.jobs)?;
    fs::create_dir_all(&cfg.out_dir)?;
    simulate::write_results_jsonl(&results, io::BufWriter::new(fs::File::create(cfg.out_dir.join("results.jsonl"))?))?;
    simulate::write_results_csv(&results, fs::File::create(cfg.out_dir.join("results.csv"))?)?;
    let mut rows = report::summarize_all(&results, cfg.grid.alpha, false)?;
    rows.extend(report::summarize_all(&results, cfg.grid.alpha, true)?);
    report::write_summary_csv(&rows, fs::File::create(cfg.out_dir.join("summary.csv"))?)?;
    if let Ok(points) = report::ngram_sweep_view(&rows) {
        report::write_csv(&points, fs::File::create(cfg.out_dir.join("ngram_sweep.csv"))?)?;
    }
    print!("{}", report::render_table(&rows));
    let failures: usize = results.iter().map(|c| c.failures).sum();
    if failures > 0 {
        eprintln!("simulate: {failures} conversation(s) failed and were skipped");
    }
    Ok(())
}

pub fn cmd_annotate(a: &AnnotateArgs) -> Result<(), BoxError> {
    let vocab = NgramLM::load(&a.model)?.1;
    let prompt = vocab.tokenize(&read_text(&a.prompt)?);
    let response = vocab.tokenize(&read_text(&a.response)?);
    let ann = report::annotate_overlap(&prompt, &response, a.min_len)?;
    print!("{}", ann.render_text(&prompt, &response, &vocab));
    if let Some(path) = &a.html {
        fs::write(path, ann.render_html(&prompt, &response, &vocab))?;
    }
    Ok(())
}

pub fn cmd_score_dataset(a: &ScoreDatasetArgs) -> Result<(), BoxError> {
    let (observer, vocab) = NgramLM::load(&a.model)?;
    let ingested = ingest_jsonl(&a.jsonl, &vocab, &RoleAliases::default())?;
    let records: Vec<_> = ingested
        .records
        .into_iter()
        .filter(|r| r.turns().len() >= a.min_turns)
        .collect();
    eprintln!(
        "score-dataset: {} of {} lines kept ({} malformed)",
        records.len(),
        ingested.total_lines,
        ingested.skipped
    );
    if records.is_empty() {
        return Err("no conversations left after filtering".into());
    }
    let min_tokens = a.min_tokens.max(1);
    let points = match a.detector {
        DetectorKind::Ratio => {
            let performer = match &a.performer {
                Some(p) => NgramLM::load_with_vocab(p, &vocab)?,
                None => return Err("--performer is required for the ratio detector".into()),
            };
            let threshold = match (&a.calibrate, a.threshold) {
                (Some(path), _) => {
                    let scores: Vec<f64> = read_corpus(path)?
                        .iter()
                        .map(|l| vocab.tokenize(l))
                        .filter(|s| s.len() >= min_tokens)
                        .map(|s| detect::ratio_score(&s, &observer, &performer))
                        .collect::<Result<_, _>>()?;
                    let cal = detect::calibrate_threshold(&scores, a.fpr)?;
                    eprintln!("score-dataset: calibrated threshold {} on {} segments", cal.threshold, cal.n);
                    Some(cal.threshold)
                }
                (None, t) => t,
            };
            if a.flags && threshold.is_none() {
                return Err("--flags needs --threshold or --calibrate".into());
            }
            report::trajectory(&records, |t| {
                if t.len() < min_tokens {
                    return None;
                }
                let b = detect::ratio_score(t, &observer, &performer).ok()?;
                Some(match (a.flags, threshold) {
                    (true, Some(th)) => f64::from(u8::from(b < th)),
                    _ => b,
                })
            })
        }
        DetectorKind::Greenlist | DetectorKind::Expmin => {
            let cfg = WatermarkConfig {
                scheme: if a.detector == DetectorKind::Greenlist { Scheme::Greenlist } else { Scheme::Expmin },
                key: SecretKey(a.key),
                h: a.h,
                gamma: a.gamma,
                ..WatermarkConfig::default()
            };
            cfg.validate()?;
            report::trajectory(&records, |t| {
                if t.len() < min_tokens {
                    return None;
                }
                let r = detect::detect(t, &cfg, &DedupPolicy::IN_TEXT).ok()?;
                Some(if a.flags { f64::from(u8::from(r.flagged)) } else { r.p_value })
            })
        }
    };
    report::write_csv(&points, io::stdout().lock())?;
    Ok(())
}
