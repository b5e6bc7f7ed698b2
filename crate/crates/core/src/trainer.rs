//! Training orchestration: Adam, the SFT and preference-phase epoch loops,
//! checkpointing with config sidecars, per-step metrics and held-out
//! evaluation. Runs are bitwise reproducible given (seed, config, dataset,
//! precision).

use crate::dataset::{ArgumentSample, PreferencePair, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::losses::{
    class_weights, cpo_loss, dpo_loss, fipo_loss, sft_loss, ClassWeights, EncodedPair,
    LossConfig, PreferenceBatch, DEFAULT_BETA_CPO, DEFAULT_BETA_DPO, DEFAULT_LAMBDA,
};
use crate::model::{DecodingConfig, EncodedPrompt, PolicyModel};
use crate::rng::{derive_seed, Rng};
use crate::tensor::{Precision, Tape};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sft,
    Dpo,
    Cpo,
    Fipo,
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Method> {
        match s.to_lowercase().as_str() {
            "sft" => Ok(Method::Sft),
            "dpo" => Ok(Method::Dpo),
            "cpo" => Ok(Method::Cpo),
            "fipo" => Ok(Method::Fipo),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::Sft => "sft",
            Method::Dpo => "dpo",
            Method::Cpo => "cpo",
            Method::Fipo => "fipo",
        };
        f.write_str(s)
    }
}

/// Full training configuration. `beta`/`lambda` default per method; the
/// ablation flags reshape the data pipeline (`uniform_dataset`) or the
/// class weights (`unweighted_ce`) without touching the loss code path.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta: f64,
    pub lambda: f64,
    pub precision: Precision,
    pub grad_clip: f64,
    pub uniform_dataset: bool,
    pub unweighted_ce: bool,
    /// Checkpoint destination; sidecar and metrics files are derived from
    /// this path.
    pub checkpoint: Option<PathBuf>,
}

impl TrainConfig {
    pub fn for_method(method: Method) -> TrainConfig {
        TrainConfig {
            method,
            learning_rate: 2e-4,
            epochs: 3,
            batch_size: 16,
            seed: 0,
            beta: match method {
                Method::Dpo => DEFAULT_BETA_DPO,
                _ => DEFAULT_BETA_CPO,
            },
            lambda: if method == Method::Fipo {
                DEFAULT_LAMBDA
            } else {
                0.0
            },
            precision: Precision::F32,
            grad_clip: 1.0,
            uniform_dataset: false,
            unweighted_ce: false,
            checkpoint: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning rate must be non-negative".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.beta <= 0.0 {
            return Err(Error::Config("beta must be positive".into()));
        }
        if self.lambda != 0.0 && self.method != Method::Fipo {
            return Err(Error::Config(format!(
                "lambda applies to fipo only (method is {})",
                self.method
            )));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        Ok(())
    }

    /// Identifies the loss computation actually used. Ablations that touch
    /// only the data pipeline (uniform_dataset) do not appear.
    pub fn loss_fingerprint(&self) -> String {
        match self.method {
            Method::Sft => "sft".into(),
            Method::Dpo => format!("dpo(beta={})", self.beta),
            Method::Cpo => format!("cpo(beta={})", self.beta),
            Method::Fipo => format!(
                "fipo(beta={},lambda={},weights={})",
                self.beta,
                self.lambda,
                if self.unweighted_ce { "ones" } else { "frequency" }
            ),
        }
    }

    fn loss_config(&self, weights: ClassWeights) -> LossConfig {
        LossConfig {
            beta: self.beta,
            lambda: self.lambda,
            weights,
            unweighted_ce: self.unweighted_ce,
        }
    }
}

/// One optimizer step's record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cpo_term: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clf_term: Option<f64>,
    pub grad_norm: f64,
}

/// End-of-epoch held-out evaluation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heldout_logprob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heldout_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum MetricsRecord {
    Step(StepMetrics),
    Epoch(EpochMetrics),
}

/// Per-step and per-epoch training metrics, serializable as JSONL.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MetricsLog {
    pub steps: Vec<StepMetrics>,
    pub epochs: Vec<EpochMetrics>,
}

impl MetricsLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.loss)
    }

    /// One record per step, with each epoch summary following its last step.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |r: MetricsRecord| {
            out.push_str(&serde_json::to_string(&r).expect("serializes"));
            out.push('\n');
        };
        let mut steps = self.steps.iter().peekable();
        for e in &self.epochs {
            while let Some(s) = steps.peek() {
                if s.epoch <= e.epoch {
                    push(MetricsRecord::Step((*s).clone()));
                    steps.next();
                } else {
                    break;
                }
            }
            push(MetricsRecord::Epoch(e.clone()));
        }
        for s in steps {
            push(MetricsRecord::Step(s.clone()));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

// ── optimizer ───────────────────────────────────────────────────────────

/// Adam with (0.9, 0.999) moments and eps 1e-8. No scheduler.
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(model: &PolicyModel, lr: f64) -> Adam {
        let zeros: Vec<Vec<f64>> = model
            .params()
            .iter()
            .map(|p| vec![0.0; p.data.len()])
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn step(&mut self, model: &mut PolicyModel, grads: &[Vec<f64>]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (pi, param) in model.params_mut().iter_mut().enumerate() {
            for (i, w) in param.data.iter_mut().enumerate() {
                let g = grads[pi][i];
                self.m[pi][i] = self.beta1 * self.m[pi][i] + (1.0 - self.beta1) * g;
                self.v[pi][i] = self.beta2 * self.v[pi][i] + (1.0 - self.beta2) * g * g;
                let m_hat = self.m[pi][i] / bc1;
                let v_hat = self.v[pi][i] / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Scales gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
fn clip_gradients(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.iter_mut().for_each(|x| *x *= scale);
        }
    }
    norm
}

// ── checkpoint plumbing ─────────────────────────────────────────────────

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

#[derive(Serialize)]
struct Sidecar<'a> {
    config: &'a TrainConfig,
    loss_fingerprint: String,
    seed: u64,
    steps: usize,
    final_loss: Option<f64>,
}

fn write_artifacts(model: &PolicyModel, config: &TrainConfig, log: &MetricsLog) -> Result<()> {
    if let Some(ckpt) = &config.checkpoint {
        model.save(ckpt)?;
        let sidecar = Sidecar {
            config,
            loss_fingerprint: config.loss_fingerprint(),
            seed: config.seed,
            steps: log.steps.len(),
            final_loss: log.final_loss(),
        };
        let meta = with_suffix(ckpt, ".meta.json");
        std::fs::write(&meta, serde_json::to_string_pretty(&sidecar).unwrap())
            .map_err(|e| Error::io(&meta, e))?;
        let metrics = with_suffix(ckpt, ".metrics.jsonl");
        log.save(&metrics)?;
    }
    Ok(())
}

// ── training loops ──────────────────────────────────────────────────────

fn restore_params(model: &mut PolicyModel, snapshot: &[Vec<f64>]) {
    for (param, saved) in model.params_mut().iter_mut().zip(snapshot) {
        param.data.copy_from_slice(saved);
    }
}

fn snapshot_params(model: &PolicyModel) -> Vec<Vec<f64>> {
    model.params().iter().map(|p| p.data.clone()).collect()
}

/// Supervised fine-tuning by maximum likelihood over the argument corpus.
pub fn train_sft(
    model: &mut PolicyModel,
    data: &[ArgumentSample],
    config: &TrainConfig,
    heldout: Option<&[ArgumentSample]>,
) -> Result<MetricsLog> {
    config.validate()?;
    if config.method != Method::Sft {
        return Err(Error::Config(format!(
            "train_sft called with method {}",
            config.method
        )));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let vocab = model.vocab.clone();
    let examples: Vec<(EncodedPrompt, Vec<u32>)> = data
        .iter()
        .map(|a| {
            (
                EncodedPrompt::new(&vocab, &a.topic, a.stance),
                vocab.encode_argument(&a.argument),
            )
        })
        .collect();
    let heldout_examples: Option<Vec<(EncodedPrompt, Vec<u32>)>> = heldout.map(|h| {
        h.iter()
            .map(|a| {
                (
                    EncodedPrompt::new(&vocab, &a.topic, a.stance),
                    vocab.encode_argument(&a.argument),
                )
            })
            .collect()
    });

    model.quantize_params(config.precision);
    let mut rng = Rng::seed_from(config.seed);
    let mut adam = Adam::new(model, config.learning_rate);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut log = MetricsLog::default();
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let snapshot = snapshot_params(model);
        rng.shuffle(&mut order);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(EncodedPrompt, Vec<u32>)> =
                chunk.iter().map(|&i| examples[i].clone()).collect();
            let tape = Tape::new(config.precision);
            let bound = model.bind(&tape);
            let loss = sft_loss(&bound, &batch)?;
            let value = loss.value();
            if !value.is_finite() {
                restore_params(model, &snapshot);
                write_artifacts(model, config, &log)?;
                return Err(Error::TrainAbort(format!(
                    "non-finite loss at step {step}; last good checkpoint written"
                )));
            }
            tape.backward(&loss)?;
            let mut grads = bound.grads();
            let grad_norm = clip_gradients(&mut grads, config.grad_clip);
            adam.step(model, &grads);
            model.quantize_params(config.precision);
            step += 1;
            log.steps.push(StepMetrics {
                step,
                epoch,
                loss: value,
                cpo_term: None,
                clf_term: None,
                grad_norm,
            });
        }
        let heldout_logprob = match &heldout_examples {
            Some(h) if !h.is_empty() => {
                let mut total = 0.0;
                for (prompt, y) in h {
                    total += model.sequence_logprob(prompt, y)?;
                }
                Some(total / h.len() as f64)
            }
            _ => None,
        };
        log.epochs.push(EpochMetrics {
            epoch,
            heldout_logprob,
            heldout_accuracy: None,
        });
        write_artifacts(model, config, &log)?;
    }
    write_artifacts(model, config, &log)?;
    Ok(log)
}

/// Downsamples to an equal number of pairs per fallacy type (the dataset
/// uniformity ablation), deterministically under the run seed.
fn uniform_downsample(pairs: &[PreferencePair], seed: u64) -> Vec<PreferencePair> {
    let mut by_type: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, p) in pairs.iter().enumerate() {
        by_type[p.fallacy_type as usize].push(i);
    }
    let floor = by_type
        .iter()
        .filter(|v| !v.is_empty())
        .map(|v| v.len())
        .min()
        .unwrap_or(0);
    let mut rng = Rng::seed_from(derive_seed(seed, 0x0dda));
    let mut keep = Vec::new();
    for bucket in by_type.iter_mut() {
        if bucket.is_empty() {
            continue;
        }
        rng.shuffle(bucket);
        keep.extend(bucket.iter().take(floor).copied());
    }
    keep.sort_unstable();
    keep.into_iter().map(|i| pairs[i].clone()).collect()
}

/// Preference-phase training (DPO needs the frozen reference; CPO and FIPO
/// are reference-free). The model must already be SFT-initialized.
pub fn train_preference(
    model: &mut PolicyModel,
    reference: Option<&PolicyModel>,
    pairs: &[PreferencePair],
    config: &TrainConfig,
    heldout: Option<&[PreferencePair]>,
) -> Result<MetricsLog> {
    config.validate()?;
    if config.method == Method::Sft {
        return Err(Error::Config("train_preference cannot run SFT".into()));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let reference = match (config.method, reference) {
        (Method::Dpo, Some(r)) => {
            let mut frozen = r.clone();
            frozen.freeze();
            Some(frozen)
        }
        (Method::Dpo, None) => {
            return Err(Error::Config(
                "dpo requires a reference model (the SFT checkpoint)".into(),
            ))
        }
        _ => None,
    };

    let train_pairs: Vec<PreferencePair> = if config.uniform_dataset {
        uniform_downsample(pairs, config.seed)
    } else {
        pairs.to_vec()
    };
    if train_pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let weights = class_weights(&train_pairs)?;
    let loss_config = config.loss_config(weights);
    let vocab = model.vocab.clone();
    let encoded: Vec<EncodedPair> = train_pairs
        .iter()
        .map(|p| EncodedPair::encode(&vocab, p))
        .collect::<Result<Vec<_>>>()?;

    model.quantize_params(config.precision);
    let mut rng = Rng::seed_from(config.seed);
    let mut adam = Adam::new(model, config.learning_rate);
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut log = MetricsLog::default();
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let snapshot = snapshot_params(model);
        rng.shuffle(&mut order);
        for chunk in order.chunks(config.batch_size) {
            let batch =
                PreferenceBatch::new(chunk.iter().map(|&i| encoded[i].clone()).collect())?;
            let tape = Tape::new(config.precision);
            let bound = model.bind(&tape);
            let (loss, cpo_term, clf_term) = match config.method {
                Method::Dpo => {
                    let l = dpo_loss(
                        &bound,
                        reference.as_ref().expect("checked above"),
                        &batch,
                        &loss_config,
                    )?;
                    (l, None, None)
                }
                Method::Cpo => (cpo_loss(&bound, &batch, &loss_config)?, None, None),
                Method::Fipo => {
                    let parts = fipo_loss(&bound, &batch, &loss_config)?;
                    let cpo_v = parts.cpo.value();
                    let clf_v = parts.clf.value();
                    (parts.total, Some(cpo_v), Some(clf_v))
                }
                Method::Sft => unreachable!(),
            };
            let value = loss.value();
            if !value.is_finite() {
                restore_params(model, &snapshot);
                write_artifacts(model, config, &log)?;
                return Err(Error::TrainAbort(format!(
                    "non-finite loss at step {step}; last good checkpoint written"
                )));
            }
            tape.backward(&loss)?;
            let mut grads = bound.grads();
            let grad_norm = clip_gradients(&mut grads, config.grad_clip);
            adam.step(model, &grads);
            model.quantize_params(config.precision);
            step += 1;
            log.steps.push(StepMetrics {
                step,
                epoch,
                loss: value,
                cpo_term,
                clf_term,
                grad_norm,
            });
        }
        let (heldout_logprob, heldout_accuracy) = match heldout {
            Some(h) if !h.is_empty() => {
                let report = evaluate_heldout(model, h)?;
                (Some(report.mean_logprob_preferred), Some(report.accuracy))
            }
            _ => (None, None),
        };
        log.epochs.push(EpochMetrics {
            epoch,
            heldout_logprob,
            heldout_accuracy,
        });
        write_artifacts(model, config, &log)?;
    }
    write_artifacts(model, config, &log)?;
    Ok(log)
}

// ── held-out evaluation ─────────────────────────────────────────────────

/// Held-out quality: mean log-probability of the preferred arguments and
/// classification accuracy over both sides of every pair (preferred must
/// classify as 0, dispreferred as its fallacy type).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeldoutReport {
    pub mean_logprob_preferred: f64,
    pub accuracy: f64,
    pub class0_accuracy: f64,
    /// Per fallacy type: (type id, accuracy over dispreferred samples).
    pub per_class_accuracy: Vec<(u8, f64)>,
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn evaluate_heldout(model: &PolicyModel, pairs: &[PreferencePair]) -> Result<HeldoutReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let vocab = model.vocab.clone();
    let mut logprob_total = 0.0;
    let mut correct = 0usize;
    let mut class0_correct = 0usize;
    let mut per_class: Vec<(usize, usize)> = vec![(0, 0); NUM_CLASSES];
    for pair in pairs {
        let encoded = EncodedPair::encode(&vocab, pair)?;
        logprob_total += model.sequence_logprob(&encoded.prompt, &encoded.preferred)?;

        let probs_w = model.classify_fallacy(&encoded.prompt, &encoded.preferred)?;
        if argmax(&probs_w) == 0 {
            correct += 1;
            class0_correct += 1;
        }
        let probs_l = model.classify_fallacy(&encoded.prompt, &encoded.dispreferred)?;
        let k = pair.fallacy_type as usize;
        per_class[k].1 += 1;
        if argmax(&probs_l) == k {
            correct += 1;
            per_class[k].0 += 1;
        }
    }
    let per_class_accuracy = per_class
        .iter()
        .enumerate()
        .filter(|(_, (_, total))| *total > 0)
        .map(|(k, (c, total))| (k as u8, *c as f64 / *total as f64))
        .collect();
    Ok(HeldoutReport {
        mean_logprob_preferred: logprob_total / pairs.len() as f64,
        accuracy: correct as f64 / (2 * pairs.len()) as f64,
        class0_accuracy: class0_correct as f64 / pairs.len() as f64,
        per_class_accuracy,
    })
}

/// Class-0 accuracy alone, over a preferred-only slice.
pub fn evaluate_preferred_class0(model: &PolicyModel, args: &[ArgumentSample]) -> Result<f64> {
    if args.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let vocab = model.vocab.clone();
    let mut correct = 0usize;
    for a in args {
        let prompt = EncodedPrompt::new(&vocab, &a.topic, a.stance);
        let y = vocab.encode_argument(&a.argument);
        let probs = model.classify_fallacy(&prompt, &y)?;
        if argmax(&probs) == 0 {
            correct += 1;
        }
    }
    Ok(correct as f64 / args.len() as f64)
}

/// Fraction of sampled generations containing any class marker token,
/// cycling deterministically through the given prompts.
pub fn marker_emission_rate(
    model: &PolicyModel,
    prompts: &[EncodedPrompt],
    n_samples: usize,
    decoding: &DecodingConfig,
    seed: u64,
) -> Result<f64> {
    if prompts.is_empty() || n_samples == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut with_marker = 0usize;
    for i in 0..n_samples {
        let prompt = &prompts[i % prompts.len()];
        let cfg = DecodingConfig {
            seed: derive_seed(seed, i as u64),
            ..decoding.clone()
        };
        let out = model.generate(prompt, &cfg)?;
        let text = model.vocab.decode(&out);
        if !crate::dataset::markers_in(&text).is_empty() {
            with_marker += 1;
        }
    }
    Ok(with_marker as f64 / n_samples as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthetic_corpus, Split, SyntheticConfig};
    use crate::model::{PolicyConfig, Vocabulary};

    fn sft_config(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: 4,
            learning_rate: 1e-2,
            seed,
            precision: Precision::F64,
            ..TrainConfig::for_method(Method::Sft)
        }
    }

    fn small_corpus(n: usize) -> Vec<ArgumentSample> {
        synthetic_corpus(&SyntheticConfig {
            n_args: n,
            marker_rate: 0.0,
            seed: 5,
        })
    }

    fn corpus_model(corpus: &[ArgumentSample], seed: u64) -> PolicyModel {
        let texts: Vec<String> = corpus
            .iter()
            .map(|a| format!("{} {}", a.topic, a.argument))
            .collect();
        let vocab = Vocabulary::build(texts.iter().map(|s| s.as_str()));
        let config = PolicyConfig {
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            max_seq_len: 32,
            vocab_size: vocab.size(),
        };
        PolicyModel::init(config, vocab, seed).unwrap()
    }

    fn toy_pairs(n: usize) -> Vec<PreferencePair> {
        let corpus = small_corpus(n);
        corpus
            .iter()
            .enumerate()
            .map(|(i, a)| PreferencePair {
                topic: a.topic.clone(),
                stance: a.stance,
                preferred: a.argument.clone(),
                dispreferred: format!(
                    "{} {}",
                    a.argument,
                    crate::dataset::marker_token((i % 13) as u8 + 1)
                ),
                fallacy_type: (i % 13) as u8 + 1,
                split: Split::Train,
            })
            .collect()
    }

    fn pairs_model(pairs: &[PreferencePair], seed: u64) -> PolicyModel {
        let texts: Vec<String> = pairs
            .iter()
            .map(|p| format!("{} {} {}", p.topic, p.preferred, p.dispreferred))
            .collect();
        let vocab = Vocabulary::build(texts.iter().map(|s| s.as_str()));
        let config = PolicyConfig {
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            max_seq_len: 40,
            vocab_size: vocab.size(),
        };
        PolicyModel::init(config, vocab, seed).unwrap()
    }

    #[test]
    fn sft_overfits_memorizable_corpus() {
        let corpus = small_corpus(10);
        let mut model = corpus_model(&corpus, 1);
        let config = TrainConfig {
            epochs: 200,
            batch_size: 10,
            learning_rate: 1e-2,
            ..sft_config(11)
        };
        let log = train_sft(&mut model, &corpus, &config, None).unwrap();
        let first = log.steps.first().unwrap().loss;
        let last = log.steps.last().unwrap().loss;
        assert!(last < first, "{last} !< {first}");
        // mean per-token NLL under 0.1 after enough steps
        let vocab = model.vocab.clone();
        let mut total_tokens = 0usize;
        let mut total_lp = 0.0;
        for a in &corpus {
            let prompt = EncodedPrompt::new(&vocab, &a.topic, a.stance);
            let y = vocab.encode_argument(&a.argument);
            total_tokens += y.len();
            total_lp += model.sequence_logprob(&prompt, &y).unwrap();
        }
        let per_token_nll = -total_lp / total_tokens as f64;
        assert!(per_token_nll < 0.1, "per-token NLL {per_token_nll}");
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let corpus = small_corpus(6);
        let mut model = corpus_model(&corpus, 2);
        let before = snapshot_params(&model);
        let config = TrainConfig {
            learning_rate: 0.0,
            epochs: 1,
            ..sft_config(3)
        };
        train_sft(&mut model, &corpus, &config, None).unwrap();
        for (a, b) in snapshot_params(&model).iter().zip(&before) {
            assert_eq!(a, b, "bitwise identical under lr = 0");
        }
    }

    #[test]
    fn sft_metrics_are_reproducible() {
        let corpus = small_corpus(8);
        let run = || {
            let mut model = corpus_model(&corpus, 7);
            train_sft(&mut model, &corpus, &sft_config(9), Some(&corpus[..2])).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.to_jsonl(), b.to_jsonl(), "identical metrics logs");
    }

    #[test]
    fn dpo_first_step_loss_is_ln2_at_reference_init() {
        let pairs = toy_pairs(8);
        let mut model = pairs_model(&pairs, 3);
        let reference = model.clone();
        let config = TrainConfig {
            epochs: 1,
            batch_size: 8,
            seed: 5,
            precision: Precision::F64,
            ..TrainConfig::for_method(Method::Dpo)
        };
        let log =
            train_preference(&mut model, Some(&reference), &pairs, &config, None).unwrap();
        let first = log.steps.first().unwrap().loss;
        assert!((first - std::f64::consts::LN_2).abs() < 1e-6, "{first}");
    }

    #[test]
    fn dpo_without_reference_is_an_error() {
        let pairs = toy_pairs(4);
        let mut model = pairs_model(&pairs, 3);
        let config = TrainConfig {
            epochs: 1,
            ..TrainConfig::for_method(Method::Dpo)
        };
        match train_preference(&mut model, None, &pairs, &config, None) {
            Err(Error::Config(msg)) => assert!(msg.contains("reference")),
            other => panic!("expected Config error, got {other:?}"),
        }
    }

    #[test]
    fn fipo_lambda_zero_matches_cpo_trajectory_bitwise() {
        let pairs = toy_pairs(8);
        let run = |method: Method| {
            let mut model = pairs_model(&pairs, 13);
            let config = TrainConfig {
                epochs: 1,
                batch_size: 4,
                seed: 21,
                lambda: 0.0,
                precision: Precision::F64,
                ..TrainConfig::for_method(method)
            };
            train_preference(&mut model, None, &pairs, &config, None).unwrap();
            snapshot_params(&model)
        };
        let fipo = run(Method::Fipo);
        let cpo = run(Method::Cpo);
        assert_eq!(fipo, cpo, "identical parameter trajectories");
    }

    #[test]
    fn fipo_step_decomposition_holds_in_logs() {
        let pairs = toy_pairs(12);
        let mut model = pairs_model(&pairs, 17);
        let config = TrainConfig {
            epochs: 2,
            batch_size: 4,
            seed: 23,
            precision: Precision::F64,
            ..TrainConfig::for_method(Method::Fipo)
        };
        let log = train_preference(&mut model, None, &pairs, &config, None).unwrap();
        for s in &log.steps {
            let cpo = s.cpo_term.expect("fipo logs cpo term");
            let clf = s.clf_term.expect("fipo logs clf term");
            assert!(
                (s.loss - (cpo + config.lambda * clf)).abs() < 1e-6,
                "step {}: {} vs {}",
                s.step,
                s.loss,
                cpo + config.lambda * clf
            );
        }
    }

    #[test]
    fn preference_loss_decreases_on_separable_data() {
        let pairs = toy_pairs(16);
        let mut model = pairs_model(&pairs, 29);
        let config = TrainConfig {
            epochs: 12,
            batch_size: 8,
            learning_rate: 5e-3,
            seed: 31,
            precision: Precision::F64,
            ..TrainConfig::for_method(Method::Fipo)
        };
        let log = train_preference(&mut model, None, &pairs, &config, None).unwrap();
        let first = log.steps.first().unwrap().loss;
        let last = log.steps.last().unwrap().loss;
        assert!(last < first, "{last} !< {first}");
    }

    #[test]
    fn lambda_with_non_fipo_method_rejected() {
        let config = TrainConfig {
            lambda: 0.3,
            ..TrainConfig::for_method(Method::Cpo)
        };
        assert!(config.validate().is_err());
    }

    #[test]
    fn uniform_downsample_balances_types() {
        let mut pairs = toy_pairs(26); // two per type
        pairs.extend(toy_pairs(5)); // types 1..=5 get a third pair
        let down = uniform_downsample(&pairs, 5);
        let mut counts = [0usize; NUM_CLASSES];
        for p in &down {
            counts[p.fallacy_type as usize] += 1;
        }
        let nonzero: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
        assert!(nonzero.iter().all(|&c| c == nonzero[0]), "{counts:?}");
        // deterministic
        let again = uniform_downsample(&pairs, 5);
        assert_eq!(down, again);
    }

    #[test]
    fn uniform_flag_does_not_change_loss_fingerprint() {
        let mut a = TrainConfig::for_method(Method::Fipo);
        let mut b = a.clone();
        b.uniform_dataset = true;
        assert_eq!(a.loss_fingerprint(), b.loss_fingerprint());
        // while the weights ablation does
        a.unweighted_ce = true;
        assert_ne!(a.loss_fingerprint(), b.loss_fingerprint());
    }

    #[test]
    fn heldout_chance_accuracy_at_init() {
        let pairs = toy_pairs(52);
        let model = pairs_model(&pairs, 41);
        let report = evaluate_heldout(&model, &pairs).unwrap();
        // untrained random head: near 1/14 chance, far from trained quality
        assert!(report.accuracy < 0.3, "{}", report.accuracy);
        assert!(report.mean_logprob_preferred < 0.0);
    }

    #[test]
    fn heldout_preferred_only_reports_class0() {
        let corpus = small_corpus(12);
        let model = corpus_model(&corpus, 43);
        let acc = evaluate_preferred_class0(&model, &corpus).unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }

    #[test]
    fn checkpoints_and_sidecars_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("sft.ckpt.json");
        let corpus = small_corpus(6);
        let mut model = corpus_model(&corpus, 3);
        let config = TrainConfig {
            checkpoint: Some(ckpt.clone()),
            epochs: 1,
            ..sft_config(1)
        };
        train_sft(&mut model, &corpus, &config, None).unwrap();
        assert!(ckpt.exists());
        let meta = with_suffix(&ckpt, ".meta.json");
        assert!(meta.exists());
        let sidecar: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&meta).unwrap()).unwrap();
        assert_eq!(sidecar["loss_fingerprint"], "sft");
        assert!(with_suffix(&ckpt, ".metrics.jsonl").exists());
        let reloaded = PolicyModel::load(&ckpt).unwrap();
        assert_eq!(reloaded.num_params(), model.num_params());
    }

    #[test]
    fn train_abort_on_divergence_restores_last_good() {
        // huge learning rate in f32 precision can blow up; if it does, the
        // abort path must leave a loadable checkpoint
        let corpus = small_corpus(6);
        let mut model = corpus_model(&corpus, 9);
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("diverge.ckpt.json");
        let config = TrainConfig {
            learning_rate: 1e6,
            epochs: 50,
            batch_size: 6,
            precision: Precision::F32,
            checkpoint: Some(ckpt.clone()),
            ..sft_config(2)
        };
        match train_sft(&mut model, &corpus, &config, None) {
            Err(Error::TrainAbort(_)) => {
                assert!(ckpt.exists());
                PolicyModel::load(&ckpt).unwrap();
            }
            Ok(_) => {} // stayed finite; acceptable
            Err(other) => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn marker_rate_is_deterministic() {
        let pairs = toy_pairs(6);
        let model = pairs_model(&pairs, 47);
        let vocab = model.vocab.clone();
        let prompts: Vec<EncodedPrompt> = pairs
            .iter()
            .take(3)
            .map(|p| EncodedPrompt::new(&vocab, &p.topic, p.stance))
            .collect();
        let decoding = DecodingConfig {
            max_new_tokens: 6,
            ..DecodingConfig::default()
        };
        let a = marker_emission_rate(&model, &prompts, 20, &decoding, 7).unwrap();
        let b = marker_emission_rate(&model, &prompts, 20, &decoding, 7).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a));
    }
}
