//! Conversation harness: a watermarked speaker talks to an unwatermarked
//! copy-mixture responder, and both sides are scored per experiment cell.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{self, DedupMode, DedupPolicy, DetectError, DetectionResult};
use crate::prf::{mix64, SecretKey};
use crate::textmodel::{ConversationMeta, ConversationRecord, Role, TokenId, TokenSeq, Vocabulary};
use crate::toylm::{CopyMixtureAgent, LmError, NgramLM};
use crate::wmgen::{self, GenError, Scheme, WatermarkConfig};

/// Opening prompt used to seed every simulated conversation.
pub const DEFAULT_PROMPT: &str = "A chat between two people talking about everyday topics such as Weather, Family, Work/School, Hobbies/Interests, Entertainment, Travel, Food/Cooking, Current Events, Technology, Health/Fitness, Pets, Relationships, Home/Living, Fashion/Style, Goals/Ambitions.\nThe two people listen to each other intently and carry the conversation naturally and they talk at length. Answer with at least 50 words each time.\n\n### Person A: Hey there! How's the weather treating you lately? It's been so unpredictable here. One day it's sunny and warm, and the next it's pouring rain.\n\n### Person B: Oh, I know what you mean! The weather has been all over the place lately. It makes planning outdoor activities a bit tricky, doesn't it? I'm hoping for some more consistent sunshine soon so I can spend more time hiking and enjoying nature. How about you? Any outdoor plans in mind?";

pub const DEFAULT_TOKENS_PER_TURN: usize = 60;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid experiment grid: {0}")]
    Grid(String),
    #[error("record has {have} {role} turns, need {need}")]
    InsufficientTurns { role: &'static str, have: usize, need: usize },
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// The watermarked party.
#[derive(Debug, Clone, Copy)]
pub struct Speaker<'a> {
    pub lm: &'a NgramLM,
    pub cfg: WatermarkConfig,
}

/// The unwatermarked party.
#[derive(Debug, Clone)]
pub struct Responder<'a> {
    pub agent: CopyMixtureAgent<'a>,
    pub temperature: f64,
}

fn turn_seed(seed: u64, turn: usize, role: u64) -> u64 {
    mix64(seed ^ mix64((turn as u64) << 1 | role))
}

/// Alternates speaker and responder for `exchanges` rounds, speaker first.
/// Both parties condition on the full transcript including `seed_prompt`;
/// only the generated turns are recorded.
pub fn run_conversation(
    speaker: &Speaker<'_>,
    responder: &Responder<'_>,
    seed_prompt: &[TokenId],
    exchanges: usize,
    tokens_per_turn: usize,
    seed: u64,
) -> Result<ConversationRecord, SimError> {
    if exchanges == 0 {
        return Err(SimError::Grid("turns must be >= 1".into()));
    }
    let responder_cfg = WatermarkConfig {
        scheme: Scheme::None,
        temperature: responder.temperature,
        ..speaker.cfg
    };
    let mut record = ConversationRecord::new(ConversationMeta {
        key_id: Some(speaker.cfg.key_id),
        temperature: Some(speaker.cfg.temperature),
        h: Some(speaker.cfg.h),
        seed: Some(seed),
    });
    let mut transcript: Vec<TokenId> = seed_prompt.to_vec();
    for turn in 0..exchanges {
        let said = wmgen::generate(
            speaker.lm,
            &transcript,
            &speaker.cfg,
            tokens_per_turn,
            None,
            turn_seed(seed, turn, 0),
        )?;
        transcript.extend_from_slice(&said);
        record.push(Role::WatermarkedSpeaker, said);

        let view = responder.agent.in_conversation(&transcript);
        let reply = wmgen::generate(
            &view,
            &transcript,
            &responder_cfg,
            tokens_per_turn,
            None,
            turn_seed(seed, turn, 1),
        )?;
        transcript.extend_from_slice(&reply);
        record.push(Role::Responder, reply);
    }
    Ok(record)
}

#[derive(Debug, Clone)]
pub struct SideScores {
    pub prompt: DetectionResult,
    pub response: DetectionResult,
}

fn first_turns(rec: &ConversationRecord, role: Role, n: usize) -> Result<TokenSeq, SimError> {
    let turns: Vec<&TokenSeq> = rec.turns_by(role).map(|t| &t.text).take(n).collect();
    if turns.len() < n {
        return Err(SimError::InsufficientTurns {
            role: role.as_str(),
            have: turns.len(),
            need: n,
        });
    }
    Ok(TokenSeq::concat(turns))
}

/// Scores the first `concat_r` speaker turns (prompt side) and the first
/// `concat_r` responder turns (response side), each concatenated.
///
/// Under `cross_prompt` the response is masked against the concatenated
/// speaker text; the prompt side itself falls back to `in_text`.
pub fn score_conversation(
    rec: &ConversationRecord,
    cfg: &WatermarkConfig,
    concat_r: usize,
    mode: DedupMode,
) -> Result<SideScores, SimError> {
    let prompt_text = first_turns(rec, Role::WatermarkedSpeaker, concat_r)?;
    let response_text = first_turns(rec, Role::Responder, concat_r)?;
    let prompt_policy = match mode {
        DedupMode::CrossPrompt => DedupPolicy::IN_TEXT,
        m => DedupPolicy::new(m, None)?,
    };
    let response_policy = DedupPolicy::new(mode, Some(&prompt_text))?;
    Ok(SideScores {
        prompt: detect::detect(&prompt_text, cfg, &prompt_policy)?,
        response: detect::detect(&response_text, cfg, &response_policy)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentGrid {
    pub schemes: Vec<Scheme>,
    pub keys: Vec<SecretKey>,
    pub h_values: Vec<usize>,
    /// (watermarked speaker T, responder T) pairs.
    pub temperatures: Vec<(f64, f64)>,
    /// Number of speaker/responder exchanges per conversation.
    pub turns: usize,
    pub concat_r: Vec<usize>,
    pub conversations: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub delta: f64,
    pub tokens_per_turn: usize,
    /// Masking used for the headline prompt/response p-values.
    pub base_dedup: DedupMode,
}

impl ExperimentGrid {
    /// Desk-scale defaults: both schemes, three keys drawn from `key_seed`,
    /// h in {2,4,6,8}, T = (1, 0.8), #R in {1,3,5}, 200 conversations,
    /// greenlist bias 4.
    pub fn desk_scale(key_seed: u64) -> Self {
        Self {
            schemes: vec![Scheme::Greenlist, Scheme::Expmin],
            keys: random_keys(key_seed, 3),
            h_values: vec![2, 4, 6, 8],
            temperatures: vec![(1.0, 0.8)],
            turns: 5,
            concat_r: vec![1, 3, 5],
            conversations: 200,
            alpha: 0.01,
            gamma: 0.25,
            delta: 4.0,
            tokens_per_turn: DEFAULT_TOKENS_PER_TURN,
            base_dedup: DedupMode::InText,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Grid(m.to_string()));
        if self.schemes.is_empty() || self.keys.is_empty() || self.h_values.is_empty() {
            return bad("schemes, keys and h_values must be nonempty");
        }
        if self.schemes.contains(&Scheme::None) {
            return bad("grid schemes must be watermarking schemes");
        }
        if self.temperatures.is_empty() || self.concat_r.is_empty() {
            return bad("temperatures and concat_r must be nonempty");
        }
        if self.concat_r.contains(&0) {
            return bad("concat_r entries must be >= 1");
        }
        if self.turns < *self.concat_r.iter().max().unwrap() {
            return bad("turns must be >= max(concat_r)");
        }
        if self.conversations == 0 || self.tokens_per_turn == 0 {
            return bad("conversations and tokens_per_turn must be >= 1");
        }
        if self.temperatures.iter().any(|&(a, b)| !(a >= 0.0 && b >= 0.0)) {
            return bad("temperatures must be >= 0");
        }
        for cell in self.cells() {
            self.watermark_config(&cell).validate()?;
        }
        Ok(())
    }

    /// Cartesian order: scheme, h, temperature pair, key.
    pub fn cells(&self) -> Vec<CellSpec> {
        let mut out = Vec::new();
        for &scheme in &self.schemes {
            for &h in &self.h_values {
                for &(t_w, t_r) in &self.temperatures {
                    for (key_id, &key) in self.keys.iter().enumerate() {
                        out.push(CellSpec {
                            index: out.len(),
                            scheme,
                            key_id,
                            key,
                            h,
                            t_w,
                            t_r,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn watermark_config(&self, cell: &CellSpec) -> WatermarkConfig {
        WatermarkConfig {
            scheme: cell.scheme,
            key: cell.key,
            key_id: cell.key_id,
            h: cell.h,
            gamma: self.gamma,
            delta: self.delta,
            temperature: cell.t_w,
            alpha: self.alpha,
        }
    }
}

/// `n` keys from a splitmix stream.
pub fn random_keys(seed: u64, n: usize) -> Vec<SecretKey> {
    (0..n as u64).map(|i| SecretKey(mix64(seed ^ mix64(i)))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub index: usize,
    pub scheme: Scheme,
    pub key_id: usize,
    pub key: SecretKey,
    pub h: usize,
    pub t_w: f64,
    pub t_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RScores {
    pub r: usize,
    pub p_prompt: f64,
    pub p_response: f64,
    pub p_response_dedup: f64,
    pub scored_prompt: usize,
    pub scored_response: usize,
    pub scored_response_dedup: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationScores {
    pub index: usize,
    pub seed: u64,
    pub by_r: Vec<RScores>,
}

impl ConversationScores {
    pub fn at(&self, r: usize) -> Option<&RScores> {
        self.by_r.iter().find(|s| s.r == r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: CellSpec,
    pub conversations: Vec<ConversationScores>,
    pub failures: usize,
}

impl CellResult {
    /// `(p_prompt, p_response)` pairs at `#R = r`, optionally using the
    /// cross-prompt-masked response p-values.
    pub fn pairs(&self, r: usize, dedup: bool) -> Vec<(f64, f64)> {
        self.conversations
            .iter()
            .filter_map(|c| c.at(r))
            .map(|s| (s.p_prompt, if dedup { s.p_response_dedup } else { s.p_response }))
            .collect()
    }
}

/// Models shared by every cell.
#[derive(Debug, Clone)]
pub struct Models<'a> {
    pub speaker: &'a NgramLM,
    pub responder: &'a NgramLM,
    pub lambda: f64,
    pub min_match: usize,
    pub seed_prompt: TokenSeq,
}

impl<'a> Models<'a> {
    pub fn new(speaker: &'a NgramLM, responder: &'a NgramLM, lambda: f64, min_match: usize, vocab: &Vocabulary) -> Self {
        Self {
            speaker,
            responder,
            lambda,
            min_match,
            seed_prompt: vocab.tokenize(DEFAULT_PROMPT),
        }
    }
}

/// Schedule-independent seed for one (cell, conversation) unit.
pub fn unit_seed(master: u64, cell: usize, conversation: usize) -> u64 {
    mix64(mix64(mix64(master) ^ cell as u64) ^ conversation as u64)
}

fn run_unit(
    grid: &ExperimentGrid,
    models: &Models<'_>,
    cell: &CellSpec,
    conversation: usize,
    master_seed: u64,
) -> Result<ConversationScores, SimError> {
    let cfg = grid.watermark_config(cell);
    let seed = unit_seed(master_seed, cell.index, conversation);
    let speaker = Speaker { lm: models.speaker, cfg };
    let responder = Responder {
        agent: CopyMixtureAgent::new(models.responder, models.lambda, models.min_match)?,
        temperature: cell.t_r,
    };
    let rec = run_conversation(
        &speaker,
        &responder,
        &models.seed_prompt,
        grid.turns,
        grid.tokens_per_turn,
        seed,
    )?;
    let mut by_r = Vec::with_capacity(grid.concat_r.len());
    for &r in &grid.concat_r {
        let base = score_conversation(&rec, &cfg, r, grid.base_dedup)?;
        let dedup = score_conversation(&rec, &cfg, r, DedupMode::CrossPrompt)?;
        by_r.push(RScores {
            r,
            p_prompt: base.prompt.p_value,
            p_response: base.response.p_value,
            p_response_dedup: dedup.response.p_value,
            scored_prompt: base.prompt.scored,
            scored_response: base.response.scored,
            scored_response_dedup: dedup.response.scored,
        });
    }
    Ok(ConversationScores {
        index: conversation,
        seed,
        by_r,
    })
}

/// Runs every cell of `grid`. Conversations are independent work units
/// spread over `jobs` threads; results do not depend on scheduling.
pub fn run_grid(
    grid: &ExperimentGrid,
    models: &Models<'_>,
    master_seed: u64,
    jobs: usize,
) -> Result<Vec<CellResult>, SimError> {
    grid.validate()?;
    CopyMixtureAgent::new(models.responder, models.lambda, models.min_match)?;
    let cells = grid.cells();
    let units: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..grid.conversations).map(move |i| (c, i)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| SimError::Grid(e.to_string()))?;
    let outcomes: Vec<Result<ConversationScores, SimError>> = pool.install(|| {
        units
            .par_iter()
            .map(|&(c, i)| run_unit(grid, models, &cells[c], i, master_seed))
            .collect()
    });

    let mut results: Vec<CellResult> = cells
        .iter()
        .map(|&cell| CellResult {
            cell,
            conversations: Vec::with_capacity(grid.conversations),
            failures: 0,
        })
        .collect();
    for (&(c, i), outcome) in units.iter().zip(outcomes) {
        match outcome {
            Ok(scores) => results[c].conversations.push(scores),
            Err(e) => {
                eprintln!("cell {c} conversation {i} failed: {e}");
                results[c].failures += 1;
            }
        }
    }
    Ok(results)
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    scheme: &'a str,
    key_id: usize,
    h: usize,
    #[serde(rename = "T_w")]
    t_w: f64,
    #[serde(rename = "T_r")]
    t_r: f64,
    #[serde(rename = "R")]
    r: usize,
    p_prompt: f64,
    p_response: f64,
    p_response_dedup: f64,
}

/// One `CellResult` per JSON line.
pub fn write_results_jsonl<W: Write>(cells: &[CellResult], mut out: W) -> Result<(), SimError> {
    for cell in cells {
        serde_json::to_writer(&mut out, cell)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Flat per-conversation, per-#R rows.
pub fn write_results_csv<W: Write>(cells: &[CellResult], out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    for cell in cells {
        for conv in &cell.conversations {
            for s in &conv.by_r {
                w.serialize(CsvRow {
                    scheme: cell.cell.scheme.as_str(),
                    key_id: cell.cell.key_id,
                    h: cell.cell.h,
                    t_w: cell.cell.t_w,
                    t_r: cell.cell.t_r,
                    r: s.r,
                    p_prompt: s.p_prompt,
                    p_response: s.p_response,
                    p_response_dedup: s.p_response_dedup,
                })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_jsonl(path: &Path) -> Result<Vec<CellResult>, SimError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
