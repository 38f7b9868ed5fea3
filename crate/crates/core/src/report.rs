//! Aggregation into prompt/response watermark rates, overlap highlighting,
//! and plot-ready series.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simulate::CellResult;
use crate::textmodel::{ConversationRecord, Role, TokenId, TokenSeq, Vocabulary};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("empty cell")]
    EmptyCell,
    #[error("cells passed to summarize disagree on configuration")]
    MixedCells,
    #[error("ngram sweep needs at least 2 distinct h values, got {0}")]
    TooFewH(usize),
    #[error("min_len must be >= 1")]
    MinLen,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// P, R, P&R and P<R as fractions of conversations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Proportions {
    pub p: f64,
    pub r: f64,
    pub p_and_r: f64,
    pub p_lt_r: f64,
}

impl Proportions {
    /// From `(p_prompt, p_response)` pairs. "Stronger" means a strictly
    /// smaller response p-value.
    pub fn from_pairs(pairs: &[(f64, f64)], alpha: f64) -> Result<Self, ReportError> {
        if pairs.is_empty() {
            return Err(ReportError::EmptyCell);
        }
        let n = pairs.len() as f64;
        let frac = |f: &dyn Fn(&(f64, f64)) -> bool| pairs.iter().filter(|x| f(x)).count() as f64 / n;
        Ok(Self {
            p: frac(&|&(p, _)| p < alpha),
            r: frac(&|&(_, r)| r < alpha),
            p_and_r: frac(&|&(p, r)| p < alpha && r < alpha),
            p_lt_r: frac(&|&(p, r)| r < p),
        })
    }

    fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::P => self.p,
            Metric::R => self.r,
            Metric::PandR => self.p_and_r,
            Metric::PltR => self.p_lt_r,
        }
    }

    fn from_fn(f: impl Fn(Metric) -> f64) -> Self {
        Self {
            p: f(Metric::P),
            r: f(Metric::R),
            p_and_r: f(Metric::PandR),
            p_lt_r: f(Metric::PltR),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    P,
    R,
    PandR,
    PltR,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::P, Metric::R, Metric::PandR, Metric::PltR];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::P => "P",
            Metric::R => "R",
            Metric::PandR => "P&R",
            Metric::PltR => "P<R",
        }
    }
}

/// One summary row: a (scheme, h, temperatures, #R) configuration across keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MimicryRow {
    pub scheme: String,
    pub h: usize,
    pub t_w: f64,
    pub t_r: f64,
    pub r: usize,
    pub dedup: bool,
    pub conversations: usize,
    pub per_key: Vec<Proportions>,
    pub mean: Proportions,
    pub sd: Proportions,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Key-wise proportions for one configuration, then mean and sample sd
/// across keys. `cells` must share scheme, h and temperatures.
pub fn summarize(cells: &[&CellResult], r: usize, alpha: f64, dedup: bool) -> Result<MimicryRow, ReportError> {
    let first = cells.first().ok_or(ReportError::EmptyCell)?.cell;
    if cells.iter().any(|c| {
        c.cell.scheme != first.scheme || c.cell.h != first.h || c.cell.t_w != first.t_w || c.cell.t_r != first.t_r
    }) {
        return Err(ReportError::MixedCells);
    }
    let mut per_key = Vec::with_capacity(cells.len());
    let mut conversations = 0;
    for c in cells {
        let pairs = c.pairs(r, dedup);
        conversations += pairs.len();
        per_key.push(Proportions::from_pairs(&pairs, alpha)?);
    }
    let stats = |m: Metric| mean_sd(&per_key.iter().map(|p| p.get(m)).collect::<Vec<_>>());
    Ok(MimicryRow {
        scheme: first.scheme.as_str().to_string(),
        h: first.h,
        t_w: first.t_w,
        t_r: first.t_r,
        r,
        dedup,
        conversations,
        mean: Proportions::from_fn(|m| stats(m).0),
        sd: Proportions::from_fn(|m| stats(m).1),
        per_key,
    })
}

/// Groups cells by configuration and summarizes every `#R` present.
pub fn summarize_all(cells: &[CellResult], alpha: f64, dedup: bool) -> Result<Vec<MimicryRow>, ReportError> {
    let mut groups: Vec<Vec<&CellResult>> = Vec::new();
    for c in cells {
        match groups.iter_mut().find(|g| {
            let a = g[0].cell;
            a.scheme == c.cell.scheme && a.h == c.cell.h && a.t_w == c.cell.t_w && a.t_r == c.cell.t_r
        }) {
            Some(g) => g.push(c),
            None => groups.push(vec![c]),
        }
    }
    let mut rows = Vec::new();
    for g in groups {
        let rs: BTreeSet<usize> = g
            .iter()
            .flat_map(|c| c.conversations.iter().flat_map(|s| s.by_r.iter().map(|x| x.r)))
            .collect();
        for r in rs {
            rows.push(summarize(&g, r, alpha, dedup)?);
        }
    }
    Ok(rows)
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

/// Fixed-width text table of summary rows, means with across-key sd.
pub fn render_table(rows: &[MimicryRow]) -> String {
    let mut out = format!(
        "{:<10} {:>3} {:>5} {:>5} {:>3} {:>6} {:>16} {:>16} {:>16} {:>16}\n",
        "scheme", "h", "T_w", "T_r", "#R", "dedup", "P", "R", "P&R", "P<R"
    );
    for row in rows {
        let cell = |m: Metric| format!("{} ±{}", pct(row.mean.get(m)), pct(row.sd.get(m)));
        out.push_str(&format!(
            "{:<10} {:>3} {:>5} {:>5} {:>3} {:>6} {:>16} {:>16} {:>16} {:>16}\n",
            row.scheme,
            row.h,
            row.t_w,
            row.t_r,
            row.r,
            if row.dedup { "cross" } else { "base" },
            cell(Metric::P),
            cell(Metric::R),
            cell(Metric::PandR),
            cell(Metric::PltR),
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub scheme: String,
    pub h: usize,
    pub t_w: f64,
    pub t_r: f64,
    pub r: usize,
    pub dedup: bool,
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
}

/// Long-format reshaping of summary rows: one point per (row, metric).
pub fn ngram_sweep_view(rows: &[MimicryRow]) -> Result<Vec<SweepPoint>, ReportError> {
    let hs: BTreeSet<usize> = rows.iter().map(|r| r.h).collect();
    if hs.len() < 2 {
        return Err(ReportError::TooFewH(hs.len()));
    }
    let mut sorted: Vec<&MimicryRow> = rows.iter().collect();
    sorted.sort_by(|a, b| (&a.scheme, a.r, a.dedup, a.h).cmp(&(&b.scheme, b.r, b.dedup, b.h)));
    Ok(sorted
        .into_iter()
        .flat_map(|row| {
            Metric::ALL.into_iter().map(move |m| SweepPoint {
                scheme: row.scheme.clone(),
                h: row.h,
                t_w: row.t_w,
                t_r: row.t_r,
                r: row.r,
                dedup: row.dedup,
                metric: m.as_str().to_string(),
                mean: row.mean.get(m),
                sd: row.sd.get(m),
            })
        })
        .collect())
}

pub fn write_csv<T: Serialize, W: Write>(items: &[T], out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    for item in items {
        w.serialize(item)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SummaryCsvRow<'a> {
    scheme: &'a str,
    h: usize,
    #[serde(rename = "T_w")]
    t_w: f64,
    #[serde(rename = "T_r")]
    t_r: f64,
    #[serde(rename = "R")]
    r: usize,
    dedup: bool,
    conversations: usize,
    p_mean: f64,
    p_sd: f64,
    r_mean: f64,
    r_sd: f64,
    p_and_r_mean: f64,
    p_and_r_sd: f64,
    p_lt_r_mean: f64,
    p_lt_r_sd: f64,
}

pub fn write_summary_csv<W: Write>(rows: &[MimicryRow], out: W) -> Result<(), ReportError> {
    let flat: Vec<SummaryCsvRow> = rows
        .iter()
        .map(|row| SummaryCsvRow {
            scheme: &row.scheme,
            h: row.h,
            t_w: row.t_w,
            t_r: row.t_r,
            r: row.r,
            dedup: row.dedup,
            conversations: row.conversations,
            p_mean: row.mean.p,
            p_sd: row.sd.p,
            r_mean: row.mean.r,
            r_sd: row.sd.r,
            p_and_r_mean: row.mean.p_and_r,
            p_and_r_sd: row.sd.p_and_r,
            p_lt_r_mean: row.mean.p_lt_r,
            p_lt_r_sd: row.sd.p_lt_r,
        })
        .collect();
    write_csv(&flat, out)
}

/// Shared-span highlighting between a prompt and a response.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub prompt_marked: Vec<bool>,
    pub response_marked: Vec<bool>,
}

impl Annotation {
    /// Maximal runs of marked positions as half-open ranges.
    pub fn spans(marked: &[bool]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = None;
        for (i, &m) in marked.iter().chain(std::iter::once(&false)).enumerate() {
            match (m, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    out.push((s, i));
                    start = None;
                }
                _ => {}
            }
        }
        out
    }

    pub fn prompt_spans(&self) -> Vec<(usize, usize)> {
        Self::spans(&self.prompt_marked)
    }

    pub fn response_spans(&self) -> Vec<(usize, usize)> {
        Self::spans(&self.response_marked)
    }

    pub fn render_text(&self, prompt: &[TokenId], response: &[TokenId], vocab: &Vocabulary) -> String {
        format!(
            "PROMPT:\n{}\n\nRESPONSE:\n{}\n",
            bracket(prompt, &self.prompt_marked, vocab),
            bracket(response, &self.response_marked, vocab)
        )
    }

    /// Self-contained HTML page with `prompt-reuse` / `response-reuse` spans.
    pub fn render_html(&self, prompt: &[TokenId], response: &[TokenId], vocab: &Vocabulary) -> String {
        format!(
            "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>overlap</title><style>\n\
             .prompt-reuse {{ background: #b7e4b0; }}\n.response-reuse {{ background: #b0cfe8; }}\n\
             body {{ font-family: sans-serif; max-width: 60em; margin: 2em auto; }}\n\
             </style></head><body>\n<h2>Prompt</h2>\n<p>{}</p>\n<h2>Response</h2>\n<p>{}</p>\n</body></html>\n",
            html_spans(prompt, &self.prompt_marked, vocab, "prompt-reuse"),
            html_spans(response, &self.response_marked, vocab, "response-reuse"),
        )
    }
}

fn bracket(seq: &[TokenId], marked: &[bool], vocab: &Vocabulary) -> String {
    let mut words: Vec<String> = seq.iter().map(|&t| vocab.detokenize(&[t])).collect();
    for (s, e) in Annotation::spans(marked) {
        words[s].insert(0, '«');
        words[e - 1].push('»');
    }
    words.join(" ")
}

fn escape_html(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn html_spans(seq: &[TokenId], marked: &[bool], vocab: &Vocabulary, class: &str) -> String {
    let mut out = String::new();
    let mut last = 0;
    let plain = |a: usize, b: usize| escape_html(&vocab.detokenize(&seq[a..b]));
    for (s, e) in Annotation::spans(marked) {
        if s > last {
            out.push_str(&plain(last, s));
            out.push(' ');
        }
        out.push_str(&format!("<span class=\"{class}\">{}</span> ", plain(s, e)));
        last = e;
    }
    if last < seq.len() {
        out.push_str(&plain(last, seq.len()));
    }
    out.trim_end().to_string()
}

/// Marks every token of `prompt` and `response` covered by a common
/// substring of length `>= min_len`.
pub fn annotate_overlap(prompt: &[TokenId], response: &[TokenId], min_len: usize) -> Result<Annotation, ReportError> {
    if min_len == 0 {
        return Err(ReportError::MinLen);
    }
    let mut prompt_marked = vec![false; prompt.len()];
    let mut response_marked = vec![false; response.len()];
    // run[j] = length of the common suffix ending at prompt[i], response[j]
    let mut prev = vec![0usize; response.len() + 1];
    let mut cur = vec![0usize; response.len() + 1];
    for i in 0..prompt.len() {
        for j in 0..response.len() {
            cur[j + 1] = if prompt[i] == response[j] { prev[j] + 1 } else { 0 };
            let run = cur[j + 1];
            if run >= min_len {
                prompt_marked[i + 1 - run..=i].iter_mut().for_each(|m| *m = true);
                response_marked[j + 1 - run..=j].iter_mut().for_each(|m| *m = true);
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(Annotation {
        prompt_marked,
        response_marked,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub role: String,
    pub turn: usize,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

/// Per-role, per-turn-index mean and sd of `score` across conversations.
/// Turns are indexed within each role; `score` may decline a turn (e.g.
/// too short) by returning `None`.
pub fn trajectory(
    records: &[ConversationRecord],
    score: impl Fn(&TokenSeq) -> Option<f64>,
) -> Vec<TrajectoryPoint> {
    let mut acc: BTreeMap<(Role, usize), Vec<f64>> = BTreeMap::new();
    for rec in records {
        let mut counters: BTreeMap<Role, usize> = BTreeMap::new();
        for turn in rec.turns() {
            let idx = counters.entry(turn.role).or_default();
            if let Some(s) = score(&turn.text) {
                acc.entry((turn.role, *idx)).or_default().push(s);
            }
            *idx += 1;
        }
    }
    acc.into_iter()
        .map(|((role, turn), xs)| {
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            TrajectoryPoint {
                role: role.as_str().to_string(),
                turn,
                n: xs.len(),
                mean,
                sd,
            }
        })
        .collect()
}
