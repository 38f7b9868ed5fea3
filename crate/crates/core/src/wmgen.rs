//! Watermarked next-token sampling over any model that exposes logits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prf::{self, PrfError, SecretKey, UniformTable, DS_GREEN, DS_GUMBEL};
use crate::textmodel::{TokenId, TokenSeq, EOT};

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error(transparent)]
    Prf(#[from] PrfError),
    #[error("non-finite logit at token {0}")]
    NonFinite(usize),
    #[error("degenerate distribution")]
    Degenerate,
    #[error("invalid watermark config: {0}")]
    Config(String),
    #[error("distribution has {got} entries, vocabulary has {expected}")]
    VocabMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Greenlist,
    Expmin,
    None,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Greenlist => "greenlist",
            Scheme::Expmin => "expmin",
            Scheme::None => "none",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = GenError;
    fn from_str(s: &str) -> Result<Self, GenError> {
        match s {
            "greenlist" => Ok(Scheme::Greenlist),
            "expmin" => Ok(Scheme::Expmin),
            "none" => Ok(Scheme::None),
            other => Err(GenError::Config(format!("unknown scheme {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WatermarkConfig {
    pub scheme: Scheme,
    pub key: SecretKey,
    /// Position of `key` in the experiment's key list; carried into reports.
    #[serde(default)]
    pub key_id: usize,
    pub h: usize,
    pub gamma: f64,
    pub delta: f64,
    pub temperature: f64,
    pub alpha: f64,
}

impl Default for WatermarkConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Greenlist,
            key: SecretKey(0),
            key_id: 0,
            h: 4,
            gamma: 0.25,
            delta: 2.0,
            temperature: 1.0,
            alpha: 0.01,
        }
    }
}

impl WatermarkConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        prf::check_gamma(self.gamma)?;
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(GenError::Config(format!("delta must be >= 0, got {}", self.delta)));
        }
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(GenError::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(GenError::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Natural-log scores for every vocabulary entry, up to an additive shift.
///
/// `-inf` marks a zero-probability token; NaN and `+inf` are rejected when
/// the distribution is turned into probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct NextTokenDistribution {
    pub logits: Vec<f64>,
}

impl NextTokenDistribution {
    pub fn new(logits: Vec<f64>) -> Self {
        Self { logits }
    }

    pub fn from_probs(probs: &[f64]) -> Self {
        Self {
            logits: probs.iter().map(|p| p.ln()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    pub fn probs(&self) -> Result<Vec<f64>, GenError> {
        apply_temperature(self, 1.0)
    }
}

/// Anything that can score the next token given a history.
pub trait LanguageModel {
    fn vocab_size(&self) -> usize;

    /// Writes `|V|` natural-log scores for the token following `history`.
    fn fill_logits(&self, history: &[TokenId], out: &mut Vec<f64>);

    fn next_dist(&self, history: &[TokenId]) -> NextTokenDistribution {
        let mut logits = Vec::with_capacity(self.vocab_size());
        self.fill_logits(history, &mut logits);
        NextTokenDistribution { logits }
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for &M {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn fill_logits(&self, history: &[TokenId], out: &mut Vec<f64>) {
        (**self).fill_logits(history, out)
    }
}

fn check_logits(logits: &[f64]) -> Result<(), GenError> {
    if let Some(i) = logits.iter().position(|l| l.is_nan() || *l == f64::INFINITY) {
        return Err(GenError::NonFinite(i));
    }
    if logits.iter().all(|l| *l == f64::NEG_INFINITY) {
        return Err(GenError::Degenerate);
    }
    Ok(())
}

fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    best
}

fn temperature_into(logits: &[f64], t: f64, out: &mut Vec<f64>) -> Result<(), GenError> {
    check_logits(logits)?;
    if !(t >= 0.0) {
        return Err(GenError::Config(format!("temperature must be >= 0, got {t}")));
    }
    out.clear();
    if t == 0.0 {
        out.resize(logits.len(), 0.0);
        out[argmax(logits)] = 1.0;
        return Ok(());
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let inv_t = 1.0 / t;
    out.extend(logits.iter().map(|&l| ((l - max) * inv_t).exp()));
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    Ok(())
}

/// Softmax at temperature `t`; `t = 0` is greedy with ties to the smallest id.
pub fn apply_temperature(d: &NextTokenDistribution, t: f64) -> Result<Vec<f64>, GenError> {
    let mut out = Vec::with_capacity(d.len());
    temperature_into(&d.logits, t, &mut out)?;
    Ok(out)
}

/// Inverse-CDF draw over ascending ids.
fn inverse_cdf(probs: &[f64], draw: f64) -> TokenId {
    let total: f64 = probs.iter().sum();
    let target = draw * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if target < acc {
                return i as TokenId;
            }
        }
    }
    last_positive as TokenId
}

fn expmin_pick(probs: &[f64], r: impl Fn(usize) -> f64) -> Result<TokenId, GenError> {
    let mut best: Option<(usize, f64)> = None;
    for (v, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        let rv = r(v);
        let score = if rv > 0.0 { rv.ln() / p } else { f64::NEG_INFINITY };
        match best {
            Some((_, s)) if s >= score => {}
            _ => best = Some((v, score)),
        }
    }
    best.map(|(v, _)| v as TokenId).ok_or(GenError::Degenerate)
}

/// Per-vocabulary sampling state: PRF tables plus scratch buffers.
#[derive(Debug, Clone)]
pub struct WatermarkSampler {
    cfg: WatermarkConfig,
    green: UniformTable,
    gumbel: UniformTable,
    logits: Vec<f64>,
    probs: Vec<f64>,
}

impl WatermarkSampler {
    pub fn new(cfg: WatermarkConfig, vocab_size: usize) -> Result<Self, GenError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            green: UniformTable::new(DS_GREEN, vocab_size),
            gumbel: UniformTable::new(DS_GUMBEL, vocab_size),
            logits: Vec::with_capacity(vocab_size),
            probs: Vec::with_capacity(vocab_size),
        })
    }

    pub fn config(&self) -> &WatermarkConfig {
        &self.cfg
    }

    fn check_len(&self, n: usize) -> Result<(), GenError> {
        if n != self.green.len() {
            return Err(GenError::VocabMismatch {
                expected: self.green.len(),
                got: n,
            });
        }
        Ok(())
    }

    pub fn sample_none(&mut self, logits: &[f64], draw: f64) -> Result<TokenId, GenError> {
        temperature_into(logits, self.cfg.temperature, &mut self.probs)?;
        Ok(inverse_cdf(&self.probs, draw))
    }

    pub fn sample_greenlist(
        &mut self,
        logits: &[f64],
        window: &[TokenId],
        draw: f64,
    ) -> Result<TokenId, GenError> {
        self.check_len(logits.len())?;
        let seed = prf::context_seed(self.cfg.key, window, self.cfg.h)?;
        let (gamma, delta) = (self.cfg.gamma, self.cfg.delta);
        self.logits.clear();
        self.logits.extend(logits.iter().enumerate().map(|(v, &l)| {
            if self.green.uniform(seed, v as TokenId) < gamma {
                l + delta
            } else {
                l
            }
        }));
        temperature_into(&self.logits, self.cfg.temperature, &mut self.probs)?;
        Ok(inverse_cdf(&self.probs, draw))
    }

    pub fn sample_expmin(&mut self, logits: &[f64], window: &[TokenId]) -> Result<TokenId, GenError> {
        self.check_len(logits.len())?;
        let seed = prf::context_seed(self.cfg.key, window, self.cfg.h)?;
        check_logits(logits)?;
        if self.cfg.temperature == 0.0 {
            return Ok(argmax(logits) as TokenId);
        }
        temperature_into(logits, self.cfg.temperature, &mut self.probs)?;
        let table = &self.gumbel;
        expmin_pick(&self.probs, |v| table.uniform(seed, v as TokenId))
    }

    /// Dispatches on the configured scheme.
    pub fn sample(&mut self, logits: &[f64], window: &[TokenId], draw: f64) -> Result<TokenId, GenError> {
        match self.cfg.scheme {
            Scheme::None => self.sample_none(logits, draw),
            Scheme::Greenlist => self.sample_greenlist(logits, window, draw),
            Scheme::Expmin => self.sample_expmin(logits, window),
        }
    }
}

pub fn sample_greenlist(
    d: &NextTokenDistribution,
    window: &[TokenId],
    cfg: &WatermarkConfig,
    draw: f64,
) -> Result<TokenId, GenError> {
    WatermarkSampler::new(*cfg, d.len())?.sample_greenlist(&d.logits, window, draw)
}

pub fn sample_expmin(
    d: &NextTokenDistribution,
    window: &[TokenId],
    cfg: &WatermarkConfig,
) -> Result<TokenId, GenError> {
    WatermarkSampler::new(*cfg, d.len())?.sample_expmin(&d.logits, window)
}

/// Fills `out` with the last `h` tokens of `history`, left-padded with EOT.
pub fn seed_window(history: &[TokenId], h: usize, out: &mut Vec<TokenId>) {
    out.clear();
    let have = history.len().min(h);
    out.extend(std::iter::repeat(EOT).take(h - have));
    out.extend_from_slice(&history[history.len() - have..]);
}

/// Autoregressive generation continuing `prompt`.
///
/// Greenlist and unwatermarked sampling consume one uniform per step from a
/// ChaCha8 stream seeded with `rng_seed`; expmin is deterministic in
/// `(model, prompt, key, h, T)`.
pub fn generate<M: LanguageModel + ?Sized>(
    lm: &M,
    prompt: &[TokenId],
    cfg: &WatermarkConfig,
    max_tokens: usize,
    stop: Option<TokenId>,
    rng_seed: u64,
) -> Result<TokenSeq, GenError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut sampler = WatermarkSampler::new(*cfg, lm.vocab_size())?;
    let mut history: Vec<TokenId> = Vec::with_capacity(prompt.len() + max_tokens);
    history.extend_from_slice(prompt);
    let mut logits = Vec::with_capacity(lm.vocab_size());
    let mut window = Vec::with_capacity(cfg.h);
    let mut out = Vec::with_capacity(max_tokens);
    for _ in 0..max_tokens {
        lm.fill_logits(&history, &mut logits);
        seed_window(&history, cfg.h, &mut window);
        let draw: f64 = rng.gen();
        let next = sampler.sample(&logits, &window, draw)?;
        out.push(next);
        if Some(next) == stop {
            break;
        }
        history.push(next);
    }
    Ok(TokenSeq(out))
}
