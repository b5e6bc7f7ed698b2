//! Judge-based evaluation: pairwise win-rate and fallacy-rate prompts for a
//! pluggable judge (HTTP or deterministic mock), plus the agreement
//! statistics — Randolph's kappa, majority-agreement ratio and the
//! human-vs-judge confusion matrix.

use crate::datagen::{map_bounded, HttpChatClient};
use crate::dataset::{markers_in, ArgumentSample, NUM_CLASSES, TAXONOMY};
use crate::error::{Error, Result};
use crate::model::Stance;
use serde::{Deserialize, Serialize};

/// Outcome of one pairwise comparison. `A` is the first (baseline)
/// argument, `B` the second (aligned). `Invalid` marks a response that
/// stayed unparseable after retries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairwiseOutcome {
    A,
    B,
    Tie,
    Invalid,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairwiseVerdict {
    pub topic: String,
    pub stance: Stance,
    pub arg_a: String,
    pub arg_b: String,
    pub outcome: PairwiseOutcome,
}

/// Fallacy classification verdict; 0 means "Not a Fallacy" / "None".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FallacyVerdict {
    pub topic: String,
    pub argument: String,
    #[serde(with = "crate::dataset::fallacy_name")]
    pub verdict: u8,
}

/// Agree/Disagree label from one annotator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnnotationLabel {
    Agree,
    Disagree,
}

/// All annotator labels for one judged sample (three in the standard
/// setup).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: String,
    pub labels: Vec<AnnotationLabel>,
}

// ── prompts ─────────────────────────────────────────────────────────────

/// Pairwise prompt: the two arguments numbered 1 and 2, with the tie
/// instruction ("return 3").
pub fn build_winrate_prompt(topic: &str, stance: Stance, arg_a: &str, arg_b: &str) -> String {
    format!(
        "Which of these arguments is better for the topic {topic} and stance {stance}:\n\
         1. {arg_a}\n\
         2. {arg_b}\n\
         If both arguments are equally good, return 3 (Tie).\n\
         The better argument is:",
        stance = stance.word(),
    )
}

/// The same comparison with the argument positions swapped, for the
/// position-bias audit.
pub fn build_winrate_prompt_swapped(
    topic: &str,
    stance: Stance,
    arg_a: &str,
    arg_b: &str,
) -> String {
    build_winrate_prompt(topic, stance, arg_b, arg_a)
}

/// Fallacy-classification prompt: lists all 13 type names, asks for "None"
/// when the argument is sound, and requests a JSON reply naming the type.
pub fn build_fallacy_judge_prompt(topic: &str, stance: Stance, argument: &str) -> String {
    let names: Vec<&str> = TAXONOMY[1..].iter().map(|t| t.name).collect();
    format!(
        "Consider the following topic, stance and argument:\n\
         Topic: {topic}\n\
         Stance: {stance}\n\
         Argument: {argument}\n\
         Out of all the following logical fallacy types: {types}.\n\
         Would you qualify the argument as one of these logical fallacies? \
         If not, return \"None\". If yes, return the fallacy type. Reply as\n\
         {{\"topic\": \"{topic}\", \"text\": \"{argument}\", \"fallacy type\": \"<your answer>\"}}",
        stance = stance.word(),
        types = names.join(", "),
    )
}

// ── response parsing ────────────────────────────────────────────────────

/// First 1/2/3 digit found in the response, as an outcome.
pub fn parse_winrate_response(raw: &str) -> Option<PairwiseOutcome> {
    for ch in raw.chars() {
        match ch {
            '1' => return Some(PairwiseOutcome::A),
            '2' => return Some(PairwiseOutcome::B),
            '3' => return Some(PairwiseOutcome::Tie),
            _ => {}
        }
    }
    None
}

/// First recognized fallacy-type name (canonical or alternate) or the word
/// "None" found in the response. Earliest match wins; at equal positions,
/// the longer name.
pub fn parse_fallacy_response(raw: &str) -> Option<u8> {
    let hay = raw.to_lowercase();
    let mut best: Option<(usize, usize, u8)> = None; // (start, -len ordering via cmp, id)
    let mut consider = |needle: &str, id: u8| {
        if let Some(pos) = hay.find(needle) {
            let len = needle.len();
            let better = match best {
                None => true,
                Some((bpos, blen, _)) => pos < bpos || (pos == bpos && len > blen),
            };
            if better {
                best = Some((pos, len, id));
            }
        }
    };
    for t in &TAXONOMY[1..] {
        consider(&t.name.to_lowercase(), t.id);
        if let Some(alt) = t.alternate {
            consider(&alt.to_lowercase(), t.id);
        }
    }
    // "none" only as a standalone word, so "nonetheless" does not match
    let bytes = hay.as_bytes();
    let mut from = 0;
    while let Some(pos) = hay[from..].find("none").map(|i| i + from) {
        let before_ok = pos == 0 || !bytes[pos - 1].is_ascii_alphanumeric();
        let after = pos + 4;
        let after_ok = after >= bytes.len() || !bytes[after].is_ascii_alphanumeric();
        if before_ok && after_ok {
            consider_none(&mut best, pos);
            break;
        }
        from = pos + 1;
    }
    best.map(|(_, _, id)| id)
}

fn consider_none(best: &mut Option<(usize, usize, u8)>, pos: usize) {
    let better = match *best {
        None => true,
        Some((bpos, blen, _)) => pos < bpos || (pos == bpos && 4 > blen),
    };
    if better {
        *best = Some((pos, 4, 0));
    }
}

// ── judge clients ───────────────────────────────────────────────────────

pub trait JudgeClient: Send + Sync {
    fn judge(&self, prompt: &str, context: &JudgeContext) -> Result<String>;
}

/// Structured view of what is being judged, so the offline mock can answer
/// without parsing its own prompt.
#[derive(Clone, Debug)]
pub enum JudgeContext {
    Pairwise { arg_a: String, arg_b: String },
    Fallacy { argument: String },
}

impl JudgeClient for HttpChatClient {
    fn judge(&self, prompt: &str, _context: &JudgeContext) -> Result<String> {
        self.complete(prompt)
    }
}

/// Deterministic offline judge. Pairwise: the argument with fewer marker
/// tokens wins, equal counts tie. Fallacy: the first marker token in the
/// argument names the type, otherwise "None".
#[derive(Debug, Default)]
pub struct MockJudge {
    /// Return unparseable garbage on every nth call (tests the INVALID
    /// path).
    pub garbage_every: Option<usize>,
    counter: std::sync::atomic::AtomicUsize,
}

impl MockJudge {
    pub fn new() -> MockJudge {
        MockJudge::default()
    }

    fn is_garbage_turn(&self) -> bool {
        use std::sync::atomic::Ordering;
        let n = self.counter.fetch_add(1, Ordering::SeqCst) + 1;
        matches!(self.garbage_every, Some(g) if g > 0 && n.is_multiple_of(g))
    }
}

impl JudgeClient for MockJudge {
    fn judge(&self, _prompt: &str, context: &JudgeContext) -> Result<String> {
        if self.is_garbage_turn() {
            return Ok("(no parseable verdict)".into());
        }
        match context {
            JudgeContext::Pairwise { arg_a, arg_b } => {
                let a = markers_in(arg_a).len();
                let b = markers_in(arg_b).len();
                let digit = match a.cmp(&b) {
                    std::cmp::Ordering::Less => "1",
                    std::cmp::Ordering::Greater => "2",
                    std::cmp::Ordering::Equal => "3",
                };
                Ok(format!("The better argument is: {digit}"))
            }
            JudgeContext::Fallacy { argument } => {
                let verdict = markers_in(argument)
                    .first()
                    .and_then(|&k| crate::dataset::fallacy_type(k))
                    .map(|t| t.name)
                    .unwrap_or("None");
                Ok(format!("{{\"fallacy type\": \"{verdict}\"}}"))
            }
        }
    }
}

// ── orchestration ───────────────────────────────────────────────────────

/// One pairwise comparison to be judged.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonItem {
    pub topic: String,
    pub stance: Stance,
    pub arg_a: String,
    pub arg_b: String,
}

/// How many re-asks before a verdict is marked INVALID.
pub const JUDGE_RETRIES: usize = 2;

fn ask_until_parsed<T>(
    client: &dyn JudgeClient,
    prompt: &str,
    context: &JudgeContext,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<Option<T>> {
    for _ in 0..=JUDGE_RETRIES {
        let raw = client.judge(prompt, context)?;
        if let Some(v) = parse(&raw) {
            return Ok(Some(v));
        }
    }
    Ok(None)
}

/// Judges every comparison; unparseable responses become INVALID verdicts.
pub fn judge_winrate(
    client: &dyn JudgeClient,
    items: &[ComparisonItem],
    max_parallel: usize,
) -> Result<Vec<PairwiseVerdict>> {
    let results = map_bounded(items, max_parallel, |_, item| {
        let prompt = build_winrate_prompt(&item.topic, item.stance, &item.arg_a, &item.arg_b);
        let context = JudgeContext::Pairwise {
            arg_a: item.arg_a.clone(),
            arg_b: item.arg_b.clone(),
        };
        ask_until_parsed(client, &prompt, &context, parse_winrate_response)
    });
    items
        .iter()
        .zip(results)
        .map(|(item, r)| {
            Ok(PairwiseVerdict {
                topic: item.topic.clone(),
                stance: item.stance,
                arg_a: item.arg_a.clone(),
                arg_b: item.arg_b.clone(),
                outcome: r?.unwrap_or(PairwiseOutcome::Invalid),
            })
        })
        .collect()
}

/// Fraction of comparisons whose outcome flips when the argument order is
/// swapped (ties and INVALIDs count as stable only if both orders agree).
pub fn position_bias_flip_rate(
    client: &dyn JudgeClient,
    items: &[ComparisonItem],
    max_parallel: usize,
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let forward = judge_winrate(client, items, max_parallel)?;
    let swapped_items: Vec<ComparisonItem> = items
        .iter()
        .map(|i| ComparisonItem {
            topic: i.topic.clone(),
            stance: i.stance,
            arg_a: i.arg_b.clone(),
            arg_b: i.arg_a.clone(),
        })
        .collect();
    let backward = judge_winrate(client, &swapped_items, max_parallel)?;
    let flips = forward
        .iter()
        .zip(&backward)
        .filter(|(f, b)| {
            let mirrored = match b.outcome {
                PairwiseOutcome::A => PairwiseOutcome::B,
                PairwiseOutcome::B => PairwiseOutcome::A,
                other => other,
            };
            f.outcome != mirrored
        })
        .count();
    Ok(flips as f64 / items.len() as f64)
}

/// Classifies every argument; unparseable responses become verdict
/// INVALID? No — fallacy verdicts have no INVALID class, so unparseable
/// responses are dropped with a warning count in the report instead.
pub fn judge_fallacies(
    client: &dyn JudgeClient,
    args: &[ArgumentSample],
    max_parallel: usize,
) -> Result<(Vec<FallacyVerdict>, usize)> {
    let results = map_bounded(args, max_parallel, |_, arg| {
        let prompt = build_fallacy_judge_prompt(&arg.topic, arg.stance, &arg.argument);
        let context = JudgeContext::Fallacy {
            argument: arg.argument.clone(),
        };
        ask_until_parsed(client, &prompt, &context, parse_fallacy_response)
    });
    let mut verdicts = Vec::new();
    let mut unparsed = 0usize;
    for (arg, r) in args.iter().zip(results) {
        match r? {
            Some(verdict) => verdicts.push(FallacyVerdict {
                topic: arg.topic.clone(),
                argument: arg.argument.clone(),
                verdict,
            }),
            None => unparsed += 1,
        }
    }
    Ok((verdicts, unparsed))
}

// ── statistics ──────────────────────────────────────────────────────────

/// Win/loss/tie percentages over valid verdicts; INVALIDs are excluded
/// from the rates but reported.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WinRateReport {
    pub a_pct: f64,
    pub b_pct: f64,
    pub tie_pct: f64,
    pub valid: usize,
    pub invalid: usize,
}

pub fn win_rate(verdicts: &[PairwiseVerdict]) -> Result<WinRateReport> {
    let mut counts = [0usize; 3];
    let mut invalid = 0usize;
    for v in verdicts {
        match v.outcome {
            PairwiseOutcome::A => counts[0] += 1,
            PairwiseOutcome::B => counts[1] += 1,
            PairwiseOutcome::Tie => counts[2] += 1,
            PairwiseOutcome::Invalid => invalid += 1,
        }
    }
    let valid = counts.iter().sum::<usize>();
    if valid == 0 {
        return Err(Error::Data("no valid pairwise verdicts".into()));
    }
    let pct = |c: usize| 100.0 * c as f64 / valid as f64;
    Ok(WinRateReport {
        a_pct: pct(counts[0]),
        b_pct: pct(counts[1]),
        tie_pct: pct(counts[2]),
        valid,
        invalid,
    })
}

/// Fallacy-rate plus the per-type percentage table (index 0 is the
/// "Not a Fallacy" share; all 14 sum to 100).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FallacyRateReport {
    pub fallacy_rate: f64,
    pub per_type_pct: Vec<f64>,
    pub counts: Vec<usize>,
    pub total: usize,
}

pub fn fallacy_rate(verdicts: &[FallacyVerdict]) -> Result<FallacyRateReport> {
    if verdicts.is_empty() {
        return Err(Error::Data("no fallacy verdicts".into()));
    }
    let mut counts = vec![0usize; NUM_CLASSES];
    for v in verdicts {
        if v.verdict as usize >= NUM_CLASSES {
            return Err(Error::Data(format!("verdict id {} out of range", v.verdict)));
        }
        counts[v.verdict as usize] += 1;
    }
    let total = verdicts.len();
    let per_type_pct: Vec<f64> = counts
        .iter()
        .map(|&c| 100.0 * c as f64 / total as f64)
        .collect();
    Ok(FallacyRateReport {
        fallacy_rate: 100.0 - per_type_pct[0],
        per_type_pct,
        counts,
        total,
    })
}

/// Randolph's free-marginal kappa for two categories:
/// `kappa = (P_o - 0.5) / 0.5` with
/// `P_o = (sum_i sum_k n_ik^2 - N n) / (N n (n-1))`.
pub fn randolph_kappa(records: &[AnnotationRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = records[0].labels.len();
    if n < 2 {
        return Err(Error::Data("need at least two annotators per record".into()));
    }
    let mut sum_sq = 0.0f64;
    for r in records {
        if r.labels.len() != n {
            return Err(Error::Data(format!(
                "record '{}' has {} labels, expected {n}",
                r.id,
                r.labels.len()
            )));
        }
        let agree = r
            .labels
            .iter()
            .filter(|&&l| l == AnnotationLabel::Agree)
            .count() as f64;
        let disagree = n as f64 - agree;
        sum_sq += agree * agree + disagree * disagree;
    }
    let big_n = records.len() as f64;
    let n = n as f64;
    let p_o = (sum_sq - big_n * n) / (big_n * n * (n - 1.0));
    let p_e = 0.5;
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Fraction of records whose majority label is Agree. Requires an odd
/// number of annotators so a majority always exists.
pub fn majority_agreement_ratio(records: &[AnnotationRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = records[0].labels.len();
    if n.is_multiple_of(2) {
        return Err(Error::Data(format!(
            "majority vote needs an odd annotator count, got {n}"
        )));
    }
    let mut agree_majorities = 0usize;
    for r in records {
        if r.labels.len() != n {
            return Err(Error::Data(format!(
                "record '{}' has {} labels, expected {n}",
                r.id,
                r.labels.len()
            )));
        }
        let agree = r
            .labels
            .iter()
            .filter(|&&l| l == AnnotationLabel::Agree)
            .count();
        if agree * 2 > n {
            agree_majorities += 1;
        }
    }
    Ok(agree_majorities as f64 / records.len() as f64)
}

/// Row-normalized 14x14 confusion matrix: rows are human verdicts, columns
/// the judge's; entry (r, c) is P(judge = c | human = r). Rows for unused
/// classes stay all-zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub rows: Vec<Vec<f64>>,
    pub row_counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn unused_rows(&self) -> Vec<usize> {
        self.row_counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 0)
            .map(|(i, _)| i)
            .collect()
    }

    /// CSV with a header row; one row per human class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("human\\judge");
        for t in &TAXONOMY {
            out.push(',');
            out.push_str(t.name);
        }
        out.push('\n');
        for (r, row) in self.rows.iter().enumerate() {
            out.push_str(TAXONOMY[r].name);
            for v in row {
                out.push_str(&format!(",{v:.4}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Builds the confusion matrix from aligned verdict lists. Alignment is by
/// (topic, argument) at each index.
pub fn confusion_matrix(
    human: &[FallacyVerdict],
    judge: &[FallacyVerdict],
) -> Result<ConfusionMatrix> {
    if human.len() != judge.len() {
        return Err(Error::Data(format!(
            "verdict lists differ in length: {} vs {}",
            human.len(),
            judge.len()
        )));
    }
    let mut counts = vec![vec![0usize; NUM_CLASSES]; NUM_CLASSES];
    for (h, j) in human.iter().zip(judge) {
        if h.topic != j.topic || h.argument != j.argument {
            return Err(Error::Data(format!(
                "misaligned verdicts: '{}' vs '{}'",
                h.topic, j.topic
            )));
        }
        counts[h.verdict as usize][j.verdict as usize] += 1;
    }
    let row_counts: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
    let rows = counts
        .iter()
        .enumerate()
        .map(|(r, row)| {
            row.iter()
                .map(|&c| {
                    if row_counts[r] == 0 {
                        0.0
                    } else {
                        c as f64 / row_counts[r] as f64
                    }
                })
                .collect()
        })
        .collect();
    Ok(ConfusionMatrix { rows, row_counts })
}

// ── report ──────────────────────────────────────────────────────────────

/// Bundled evaluation results, serializable as JSON and renderable as a
/// table (and CSV for the confusion heatmap).
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub win_rate: Option<WinRateReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallacy: Option<FallacyRateReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub majority_agreement: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position_flip_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unparsed_fallacy_responses: Option<usize>,
}

impl EvalReport {
    /// Human-readable rendering of whichever sections are present.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        if let Some(w) = &self.win_rate {
            out.push_str("Pairwise win-rate (over valid verdicts)\n");
            out.push_str(&format!(
                "  {:<18} {:>8}\n  {:<18} {:>8.2}\n  {:<18} {:>8.2}\n  {:<18} {:>8.2}\n",
                "verdicts", w.valid, "baseline wins %", w.a_pct, "aligned wins %", w.b_pct,
                "ties %", w.tie_pct,
            ));
            out.push_str(&format!("  {:<18} {:>8}\n", "invalid", w.invalid));
        }
        if let Some(f) = &self.fallacy {
            out.push_str("\nFallacy types (percent of judged arguments)\n");
            for (i, t) in TAXONOMY.iter().enumerate().skip(1) {
                if f.counts[i] > 0 {
                    out.push_str(&format!("  {:<28} {:>6.2}\n", t.name, f.per_type_pct[i]));
                }
            }
            out.push_str(&format!("  {:<28} {:>6.2}\n", "Not A Fallacy", f.per_type_pct[0]));
            out.push_str(&format!("  {:<28} {:>6.2}\n", "Fallacy-Rate", f.fallacy_rate));
        }
        if let Some(k) = self.kappa {
            out.push_str(&format!("\nRandolph's kappa        {k:.6}\n"));
        }
        if let Some(m) = self.majority_agreement {
            out.push_str(&format!("Majority agreement ratio {m:.6}\n"));
        }
        if let Some(p) = self.position_flip_rate {
            out.push_str(&format!("Position-bias flip rate  {p:.4}\n"));
        }
        out
    }
}
