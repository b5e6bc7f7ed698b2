//! Python bindings: the main types and operations of the engine — losses,
//! agreement statistics, prompt builders, response parsers, sampling, and
//! a trainable toy policy.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use fipo::dataset::{ArgumentSample, PreferencePair, Split, TAXONOMY};
use fipo::losses;
use fipo::model::{DecodingConfig, EncodedPrompt, PolicyConfig, PolicyModel, Stance, Vocabulary};
use fipo::tensor::{Precision, Tape};
use fipo::trainer::{self, Method, TrainConfig};

fn err(e: fipo::Error) -> PyErr {
    match e {
        fipo::Error::Config(_) | fipo::Error::Data(_) | fipo::Error::EmptyDataset => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn parse_stance(s: &str) -> PyResult<Stance> {
    Stance::parse(s).map_err(err)
}

/// The fallacy taxonomy as (id, name, alternate, definition) tuples.
#[pyfunction]
fn taxonomy() -> Vec<(u8, String, Option<String>, String)> {
    TAXONOMY
        .iter()
        .map(|t| {
            (
                t.id,
                t.name.to_string(),
                t.alternate.map(|a| a.to_string()),
                t.definition.to_string(),
            )
        })
        .collect()
}

/// Frequency-based class weights from fallacy-type ids (1..=13).
/// Returns the 14-entry weight vector (index 0 is the preferred class).
#[pyfunction]
fn class_weights(type_ids: Vec<u8>) -> PyResult<Vec<f64>> {
    losses::ClassWeights::from_type_ids(type_ids)
        .map(|w| w.w.to_vec())
        .map_err(err)
}

#[pyfunction]
fn cpo_loss_from_logprobs(lp_w: f64, lp_l: f64, beta: f64) -> f64 {
    let tape = Tape::new(Precision::F64);
    let w = tape.leaf(vec![], vec![lp_w], false);
    let l = tape.leaf(vec![], vec![lp_l], false);
    losses::cpo_from_logprobs(&w, &l, beta).value()
}

#[pyfunction]
fn dpo_loss_from_logprobs(lp_w: f64, lp_l: f64, ref_w: f64, ref_l: f64, beta: f64) -> f64 {
    let tape = Tape::new(Precision::F64);
    let w = tape.leaf(vec![], vec![lp_w], false);
    let l = tape.leaf(vec![], vec![lp_l], false);
    losses::dpo_from_logprobs(&w, &l, ref_w, ref_l, beta).value()
}

#[pyfunction]
fn clf_loss_from_logprobs(log_p0_w: f64, log_pk_l: f64, w0: f64, wk: f64) -> f64 {
    let tape = Tape::new(Precision::F64);
    let a = tape.leaf(vec![], vec![log_p0_w], false);
    let b = tape.leaf(vec![], vec![log_pk_l], false);
    losses::clf_from_logprobs(&a, &b, w0, wk).value()
}

/// FIPO as cpo + lambda * clf over scalar stubs.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn fipo_loss_from_logprobs(
    lp_w: f64,
    lp_l: f64,
    log_p0_w: f64,
    log_pk_l: f64,
    w0: f64,
    wk: f64,
    beta: f64,
    lambda: f64,
) -> f64 {
    cpo_loss_from_logprobs(lp_w, lp_l, beta)
        + lambda * clf_loss_from_logprobs(log_p0_w, log_pk_l, w0, wk)
}

fn to_records(records: Vec<Vec<String>>) -> PyResult<Vec<fipo::judge::AnnotationRecord>> {
    records
        .into_iter()
        .enumerate()
        .map(|(i, labels)| {
            let labels = labels
                .into_iter()
                .map(|l| match l.to_lowercase().as_str() {
                    "agree" | "a" => Ok(fipo::judge::AnnotationLabel::Agree),
                    "disagree" | "d" => Ok(fipo::judge::AnnotationLabel::Disagree),
                    other => Err(PyValueError::new_err(format!("unknown label '{other}'"))),
                })
                .collect::<PyResult<Vec<_>>>()?;
            Ok(fipo::judge::AnnotationRecord {
                id: format!("r{i}"),
                labels,
            })
        })
        .collect()
}

/// Randolph's kappa over lists of "Agree"/"Disagree" labels.
#[pyfunction]
fn randolph_kappa(records: Vec<Vec<String>>) -> PyResult<f64> {
    fipo::judge::randolph_kappa(&to_records(records)?).map_err(err)
}

#[pyfunction]
fn majority_agreement_ratio(records: Vec<Vec<String>>) -> PyResult<f64> {
    fipo::judge::majority_agreement_ratio(&to_records(records)?).map_err(err)
}

/// Win/loss/tie percentages from "A"/"B"/"TIE"/"INVALID" outcome strings.
#[pyfunction]
fn win_rate(outcomes: Vec<String>) -> PyResult<(f64, f64, f64)> {
    let verdicts = outcomes
        .into_iter()
        .map(|o| {
            let outcome = match o.to_uppercase().as_str() {
                "A" | "1" => fipo::judge::PairwiseOutcome::A,
                "B" | "2" => fipo::judge::PairwiseOutcome::B,
                "TIE" | "3" => fipo::judge::PairwiseOutcome::Tie,
                "INVALID" => fipo::judge::PairwiseOutcome::Invalid,
                other => return Err(PyValueError::new_err(format!("unknown outcome '{other}'"))),
            };
            Ok(fipo::judge::PairwiseVerdict {
                topic: String::new(),
                stance: Stance::Support,
                arg_a: String::new(),
                arg_b: String::new(),
                outcome,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    let r = fipo::judge::win_rate(&verdicts).map_err(err)?;
    Ok((r.a_pct, r.b_pct, r.tie_pct))
}

/// Fallacy rate (percent) from verdict class ids (0 = not a fallacy).
#[pyfunction]
fn fallacy_rate(verdicts: Vec<u8>) -> PyResult<f64> {
    let verdicts: Vec<fipo::judge::FallacyVerdict> = verdicts
        .into_iter()
        .enumerate()
        .map(|(i, v)| fipo::judge::FallacyVerdict {
            topic: format!("t{i}"),
            argument: String::new(),
            verdict: v,
        })
        .collect();
    Ok(fipo::judge::fallacy_rate(&verdicts).map_err(err)?.fallacy_rate)
}

/// The generation prompt for a fallacy type (definition and two examples
/// come from the built-in exemplar bank).
#[pyfunction]
fn build_fallacy_prompt(topic: &str, stance: &str, fallacy_type: u8) -> PyResult<String> {
    let bank = fipo::datagen::FallacyExemplarBank::builtin();
    fipo::datagen::build_fallacy_prompt(topic, parse_stance(stance)?, fallacy_type, &bank)
        .map_err(err)
}

#[pyfunction]
fn build_winrate_prompt(topic: &str, stance: &str, arg_a: &str, arg_b: &str) -> PyResult<String> {
    Ok(fipo::judge::build_winrate_prompt(
        topic,
        parse_stance(stance)?,
        arg_a,
        arg_b,
    ))
}

#[pyfunction]
fn build_fallacy_judge_prompt(topic: &str, stance: &str, argument: &str) -> PyResult<String> {
    Ok(fipo::judge::build_fallacy_judge_prompt(
        topic,
        parse_stance(stance)?,
        argument,
    ))
}

/// Extracts the argument from a raw generation response, validating the
/// reported fallacy type.
#[pyfunction]
fn parse_generation_response(raw: &str, expected_type: u8) -> PyResult<String> {
    fipo::datagen::parse_generation_response(raw, expected_type).map_err(err)
}

/// First recognized fallacy name (or "None" -> 0) in a judge response.
#[pyfunction]
fn parse_fallacy_response(raw: &str) -> Option<u8> {
    fipo::judge::parse_fallacy_response(raw)
}

/// Nucleus + top-k candidate set with renormalized probabilities.
#[pyfunction]
fn nucleus_topk_filter(probs: Vec<f64>, top_p: f64, top_k: usize) -> Vec<(usize, f64)> {
    fipo::model::nucleus_topk_filter(&probs, top_p, top_k)
}

/// Finite-difference check of all five losses; returns (loss, max_rel_err).
#[pyfunction]
fn grad_check_losses(trials: usize, eps: f64, seed: u64) -> PyResult<Vec<(String, f64)>> {
    let checks = fipo::gradsuite::run(trials, eps, seed).map_err(err)?;
    Ok(checks
        .into_iter()
        .map(|c| (c.loss.to_string(), c.max_rel_err))
        .collect())
}

/// The toy causal-transformer policy with LM and fallacy-classification
/// heads.
#[pyclass]
struct Policy {
    inner: PolicyModel,
}

#[pymethods]
impl Policy {
    /// Builds a fresh policy with a vocabulary taken from `corpus_texts`.
    #[new]
    #[pyo3(signature = (corpus_texts, d_model=32, n_layers=2, n_heads=2, max_seq_len=64, seed=0))]
    fn new(
        corpus_texts: Vec<String>,
        d_model: usize,
        n_layers: usize,
        n_heads: usize,
        max_seq_len: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let vocab = Vocabulary::build(corpus_texts.iter().map(|s| s.as_str()));
        let config = PolicyConfig {
            d_model,
            n_layers,
            n_heads,
            max_seq_len,
            vocab_size: vocab.size(),
        };
        Ok(Policy {
            inner: PolicyModel::init(config, vocab, seed).map_err(err)?,
        })
    }

    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    fn vocab_size(&self) -> usize {
        self.inner.vocab.size()
    }

    /// Sum of realized-token log-probabilities of the argument.
    fn sequence_logprob(&self, topic: &str, stance: &str, argument: &str) -> PyResult<f64> {
        let prompt = EncodedPrompt::new(&self.inner.vocab, topic, parse_stance(stance)?);
        let y = self.inner.vocab.encode_argument(argument);
        self.inner.sequence_logprob(&prompt, &y).map_err(err)
    }

    /// 14 class probabilities (index 0 = "Not a Fallacy").
    fn classify(&self, topic: &str, stance: &str, argument: &str) -> PyResult<Vec<f64>> {
        let prompt = EncodedPrompt::new(&self.inner.vocab, topic, parse_stance(stance)?);
        let y = self.inner.vocab.encode_argument(argument);
        self.inner.classify_fallacy(&prompt, &y).map_err(err)
    }

    /// Samples an argument with nucleus + top-k decoding.
    #[pyo3(signature = (topic, stance, top_p=0.75, top_k=10, max_new_tokens=24, seed=0))]
    fn generate(
        &self,
        topic: &str,
        stance: &str,
        top_p: f64,
        top_k: usize,
        max_new_tokens: usize,
        seed: u64,
    ) -> PyResult<String> {
        let prompt = EncodedPrompt::new(&self.inner.vocab, topic, parse_stance(stance)?);
        let decoding = DecodingConfig {
            top_p,
            top_k,
            max_new_tokens,
            seed,
        };
        let ids = self.inner.generate(&prompt, &decoding).map_err(err)?;
        Ok(self.inner.vocab.decode(&ids))
    }

    /// Supervised fine-tuning over (topic, stance, argument) triples.
    /// Returns the final training loss.
    #[pyo3(signature = (corpus, epochs=3, learning_rate=2e-4, batch_size=16, seed=0))]
    fn train_sft(
        &mut self,
        corpus: Vec<(String, String, String)>,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<f64> {
        let data = corpus
            .into_iter()
            .map(|(topic, stance, argument)| {
                Ok(ArgumentSample::new(topic, parse_stance(&stance)?, argument))
            })
            .collect::<PyResult<Vec<_>>>()?;
        let config = TrainConfig {
            epochs,
            learning_rate,
            batch_size,
            seed,
            ..TrainConfig::for_method(Method::Sft)
        };
        let log = trainer::train_sft(&mut self.inner, &data, &config, None).map_err(err)?;
        Ok(log.final_loss().unwrap_or(f64::NAN))
    }

    /// Preference training over (topic, stance, preferred, dispreferred,
    /// fallacy_type) tuples with one of "dpo", "cpo" or "fipo". Returns
    /// the final training loss.
    #[pyo3(signature = (pairs, method="fipo", epochs=3, learning_rate=2e-4, batch_size=16, seed=0, beta=None, lambda=None))]
    #[allow(clippy::too_many_arguments)]
    fn train_preference(
        &mut self,
        pairs: Vec<(String, String, String, String, u8)>,
        method: &str,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
        seed: u64,
        beta: Option<f64>,
        lambda: Option<f64>,
    ) -> PyResult<f64> {
        let method: Method = method.parse().map_err(err)?;
        let data = pairs
            .into_iter()
            .map(|(topic, stance, preferred, dispreferred, fallacy_type)| {
                Ok(PreferencePair {
                    topic,
                    stance: parse_stance(&stance)?,
                    preferred,
                    dispreferred,
                    fallacy_type,
                    split: Split::Train,
                })
            })
            .collect::<PyResult<Vec<_>>>()?;
        let mut config = TrainConfig {
            epochs,
            learning_rate,
            batch_size,
            seed,
            ..TrainConfig::for_method(method)
        };
        if let Some(b) = beta {
            config.beta = b;
        }
        if let Some(l) = lambda {
            config.lambda = l;
        }
        let reference = (method == Method::Dpo).then(|| self.inner.clone());
        let log = trainer::train_preference(
            &mut self.inner,
            reference.as_ref(),
            &data,
            &config,
            None,
        )
        .map_err(err)?;
        Ok(log.final_loss().unwrap_or(f64::NAN))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(std::path::Path::new(path)).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Policy> {
        Ok(Policy {
            inner: PolicyModel::load(std::path::Path::new(path)).map_err(err)?,
        })
    }
}

#[pymodule]
fn fipo_py(m: &Bound<PyModule>) -> PyResult<()> {
    m.add_class::<Policy>()?;
    m.add_function(wrap_pyfunction!(taxonomy, m)?)?;
    m.add_function(wrap_pyfunction!(class_weights, m)?)?;
    m.add_function(wrap_pyfunction!(cpo_loss_from_logprobs, m)?)?;
    m.add_function(wrap_pyfunction!(dpo_loss_from_logprobs, m)?)?;
    m.add_function(wrap_pyfunction!(clf_loss_from_logprobs, m)?)?;
    m.add_function(wrap_pyfunction!(fipo_loss_from_logprobs, m)?)?;
    m.add_function(wrap_pyfunction!(randolph_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(majority_agreement_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(win_rate, m)?)?;
    m.add_function(wrap_pyfunction!(fallacy_rate, m)?)?;
    m.add_function(wrap_pyfunction!(build_fallacy_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(build_winrate_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(build_fallacy_judge_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(parse_generation_response, m)?)?;
    m.add_function(wrap_pyfunction!(parse_fallacy_response, m)?)?;
    m.add_function(wrap_pyfunction!(nucleus_topk_filter, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check_losses, m)?)?;
    Ok(())
}
