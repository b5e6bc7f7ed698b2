//! Training objectives: SFT, DPO, CPO, the weighted fallacy-classification
//! loss, and FIPO (CPO plus a lambda-weighted classification term), with
//! frequency-based class weights.
//!
//! Every loss is a mean over the batch and differentiable through the
//! policy's tape. The `*_from_logprobs` functions carry the per-pair
//! arithmetic and double as stubs for hand-computed oracle tests.

use crate::dataset::{PreferencePair, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::model::{BoundModel, EncodedPrompt, PolicyModel, Vocabulary};
use crate::tensor::{stack_scalars, Var};
use serde::{Deserialize, Serialize};

pub const DEFAULT_BETA_DPO: f64 = 0.25;
pub const DEFAULT_BETA_CPO: f64 = 0.1;
pub const DEFAULT_LAMBDA: f64 = 0.3;

/// A preference pair encoded for the model: prompt ids plus EOS-terminated
/// argument token sequences.
#[derive(Clone, Debug)]
pub struct EncodedPair {
    pub prompt: EncodedPrompt,
    pub preferred: Vec<u32>,
    pub dispreferred: Vec<u32>,
    pub fallacy_type: u8,
}

impl EncodedPair {
    pub fn encode(vocab: &Vocabulary, pair: &PreferencePair) -> Result<EncodedPair> {
        pair.validate()?;
        Ok(EncodedPair {
            prompt: EncodedPrompt::new(vocab, &pair.topic, pair.stance),
            preferred: vocab.encode_argument(&pair.preferred),
            dispreferred: vocab.encode_argument(&pair.dispreferred),
            fallacy_type: pair.fallacy_type,
        })
    }
}

/// Non-empty batch of encoded preference pairs with valid fallacy ids.
#[derive(Clone, Debug)]
pub struct PreferenceBatch {
    items: Vec<EncodedPair>,
}

impl PreferenceBatch {
    pub fn new(items: Vec<EncodedPair>) -> Result<PreferenceBatch> {
        if items.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for item in &items {
            if item.fallacy_type == 0 || item.fallacy_type as usize >= NUM_CLASSES {
                return Err(Error::Data(format!(
                    "fallacy type {} outside [1, 13]",
                    item.fallacy_type
                )));
            }
            if item.preferred == item.dispreferred {
                return Err(Error::Data(
                    "preferred and dispreferred sequences are identical".into(),
                ));
            }
        }
        Ok(PreferenceBatch { items })
    }

    pub fn encode(vocab: &Vocabulary, pairs: &[PreferencePair]) -> Result<PreferenceBatch> {
        let items = pairs
            .iter()
            .map(|p| EncodedPair::encode(vocab, p))
            .collect::<Result<Vec<_>>>()?;
        PreferenceBatch::new(items)
    }

    pub fn items(&self) -> &[EncodedPair] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Per-class weights for the classification loss: `w[k]` is the empirical
/// frequency of fallacy type `k`, and `w[0]` is the smallest frequency
/// among the types actually present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w: [f64; NUM_CLASSES],
}

impl ClassWeights {
    /// All-ones weights (the unweighted cross-entropy ablation).
    pub fn ones() -> ClassWeights {
        ClassWeights {
            w: [1.0; NUM_CLASSES],
        }
    }

    /// Weights from the fallacy-type ids of a dataset.
    pub fn from_type_ids<I: IntoIterator<Item = u8>>(ids: I) -> Result<ClassWeights> {
        let mut counts = [0usize; NUM_CLASSES];
        let mut total = 0usize;
        for id in ids {
            if id == 0 || id as usize >= NUM_CLASSES {
                return Err(Error::Data(format!("fallacy type {id} outside [1, 13]")));
            }
            counts[id as usize] += 1;
            total += 1;
        }
        if total == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut w = [0.0; NUM_CLASSES];
        for k in 1..NUM_CLASSES {
            w[k] = counts[k] as f64 / total as f64;
        }
        // minimum over types actually present, avoiding w0 = 0 on sparse sets
        w[0] = (1..NUM_CLASSES)
            .filter(|&k| counts[k] > 0)
            .map(|k| w[k])
            .fold(f64::INFINITY, f64::min);
        Ok(ClassWeights { w })
    }

    /// Sum of the 13 fallacy-type weights (1 for frequency weights).
    pub fn fallacy_sum(&self) -> f64 {
        self.w[1..].iter().sum()
    }
}

/// Frequency-based class weights from a preference dataset.
pub fn class_weights(dataset: &[PreferencePair]) -> Result<ClassWeights> {
    ClassWeights::from_type_ids(dataset.iter().map(|p| p.fallacy_type))
}

/// Knobs shared by the preference losses.
#[derive(Clone, Debug)]
pub struct LossConfig {
    /// Margin temperature: 0.25 for DPO, 0.1 for CPO/FIPO by default.
    pub beta: f64,
    /// Weight of the classification term in FIPO (default 0.3).
    pub lambda: f64,
    pub weights: ClassWeights,
    /// Ablation: replace frequency weights with all-ones.
    pub unweighted_ce: bool,
}

impl LossConfig {
    pub fn dpo() -> LossConfig {
        LossConfig {
            beta: DEFAULT_BETA_DPO,
            lambda: 0.0,
            weights: ClassWeights::ones(),
            unweighted_ce: false,
        }
    }

    pub fn cpo() -> LossConfig {
        LossConfig {
            beta: DEFAULT_BETA_CPO,
            lambda: 0.0,
            weights: ClassWeights::ones(),
            unweighted_ce: false,
        }
    }

    pub fn fipo(weights: ClassWeights) -> LossConfig {
        LossConfig {
            beta: DEFAULT_BETA_CPO,
            lambda: DEFAULT_LAMBDA,
            weights,
            unweighted_ce: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta <= 0.0 {
            return Err(Error::Config("beta must be positive".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        Ok(())
    }

    fn effective_weights(&self) -> ClassWeights {
        if self.unweighted_ce {
            ClassWeights::ones()
        } else {
            self.weights.clone()
        }
    }
}

// ── per-pair arithmetic (also the oracle stubs) ─────────────────────────

/// `-log sigmoid(beta * ((lp_w - ref_w) - (lp_l - ref_l)))` for one pair,
/// with frozen reference log-probabilities entering as constants.
pub fn dpo_from_logprobs(lp_w: &Var, lp_l: &Var, ref_w: f64, ref_l: f64, beta: f64) -> Var {
    lp_w.sub(lp_l)
        .scale(beta)
        .add_const(-beta * (ref_w - ref_l))
        .log_sigmoid()
        .neg()
}

/// CPO term for one pair: `-log sigmoid(beta (lp_w - lp_l)) - lp_w`.
pub fn cpo_from_logprobs(lp_w: &Var, lp_l: &Var, beta: f64) -> Var {
    lp_w.sub(lp_l)
        .scale(beta)
        .log_sigmoid()
        .neg()
        .sub(lp_w)
}

/// Weighted classification term for one pair:
/// `-(w0 * log P^0(y_w) + wk * log P^k(y_l))`.
pub fn clf_from_logprobs(log_p0_w: &Var, log_pk_l: &Var, w0: f64, wk: f64) -> Var {
    log_p0_w
        .scale(w0)
        .add(&log_pk_l.scale(wk))
        .neg()
}

// ── batch losses over the model ─────────────────────────────────────────

/// Maximum-likelihood loss: mean of `-log pi(y_w | t, s)` over the batch.
pub fn sft_loss(bound: &BoundModel, batch: &[(EncodedPrompt, Vec<u32>)]) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let terms = batch
        .iter()
        .map(|(prompt, y)| Ok(bound.sequence_logprob(prompt, y)?.neg()))
        .collect::<Result<Vec<_>>>()?;
    Ok(stack_scalars(bound.tape(), &terms).mean())
}

/// DPO: mean of `-log sigmoid(beta (margin_policy - margin_reference))`.
/// The reference must be frozen; its log-probabilities are constants.
pub fn dpo_loss(
    bound: &BoundModel,
    reference: &PolicyModel,
    batch: &PreferenceBatch,
    config: &LossConfig,
) -> Result<Var> {
    config.validate()?;
    if !reference.is_frozen() {
        return Err(Error::Model(
            "DPO reference model must be frozen (call freeze())".into(),
        ));
    }
    let terms = batch
        .items()
        .iter()
        .map(|pair| {
            let lp_w = bound.sequence_logprob(&pair.prompt, &pair.preferred)?;
            let lp_l = bound.sequence_logprob(&pair.prompt, &pair.dispreferred)?;
            let ref_w = reference.sequence_logprob(&pair.prompt, &pair.preferred)?;
            let ref_l = reference.sequence_logprob(&pair.prompt, &pair.dispreferred)?;
            Ok(dpo_from_logprobs(&lp_w, &lp_l, ref_w, ref_l, config.beta))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(stack_scalars(bound.tape(), &terms).mean())
}

/// Reference-free CPO: preference term plus negative log-likelihood of the
/// preferred argument.
pub fn cpo_loss(bound: &BoundModel, batch: &PreferenceBatch, config: &LossConfig) -> Result<Var> {
    config.validate()?;
    let terms = batch
        .items()
        .iter()
        .map(|pair| {
            let lp_w = bound.sequence_logprob(&pair.prompt, &pair.preferred)?;
            let lp_l = bound.sequence_logprob(&pair.prompt, &pair.dispreferred)?;
            Ok(cpo_from_logprobs(&lp_w, &lp_l, config.beta))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(stack_scalars(bound.tape(), &terms).mean())
}

/// Weighted cross-entropy over the classification head: the preferred
/// argument is class 0, the dispreferred one its fallacy type. Gradients
/// flow through both the head and the trunk.
pub fn clf_loss(bound: &BoundModel, batch: &PreferenceBatch, config: &LossConfig) -> Result<Var> {
    config.validate()?;
    let weights = config.effective_weights();
    let terms = batch
        .items()
        .iter()
        .map(|pair| {
            let k = pair.fallacy_type as usize;
            let lp_w = bound
                .classify_log_probs(&pair.prompt, &pair.preferred)?
                .pick_per_row(&[0])
                .sum();
            let lp_l = bound
                .classify_log_probs(&pair.prompt, &pair.dispreferred)?
                .pick_per_row(&[k])
                .sum();
            Ok(clf_from_logprobs(&lp_w, &lp_l, weights.w[0], weights.w[k]))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(stack_scalars(bound.tape(), &terms).mean())
}

/// FIPO loss split into its parts. `total = cpo + lambda * clf`; with
/// `lambda == 0` the total aliases the CPO term exactly, so the parameter
/// trajectory is bitwise identical to a plain CPO run.
pub struct FipoTerms {
    pub total: Var,
    pub cpo: Var,
    pub clf: Var,
}

pub fn fipo_loss(
    bound: &BoundModel,
    batch: &PreferenceBatch,
    config: &LossConfig,
) -> Result<FipoTerms> {
    config.validate()?;
    let weights = config.effective_weights();
    // one trunk pass per sequence feeds both heads
    let mut cpo_terms = Vec::with_capacity(batch.len());
    let mut clf_terms = Vec::with_capacity(batch.len());
    for pair in batch.items() {
        let k = pair.fallacy_type as usize;
        let seq_w = bound.forward_sequence(&pair.prompt, &pair.preferred)?;
        let seq_l = bound.forward_sequence(&pair.prompt, &pair.dispreferred)?;
        let lp_w = bound.logprob_of(&seq_w)?;
        let lp_l = bound.logprob_of(&seq_l)?;
        cpo_terms.push(cpo_from_logprobs(&lp_w, &lp_l, config.beta));
        let clf_w = bound.classify_of(&seq_w)?.pick_per_row(&[0]).sum();
        let clf_l = bound.classify_of(&seq_l)?.pick_per_row(&[k]).sum();
        clf_terms.push(clf_from_logprobs(&clf_w, &clf_l, weights.w[0], weights.w[k]));
    }
    let cpo = stack_scalars(bound.tape(), &cpo_terms).mean();
    let clf = stack_scalars(bound.tape(), &clf_terms).mean();
    let total = if config.lambda == 0.0 {
        cpo.clone()
    } else {
        cpo.add(&clf.scale(config.lambda))
    };
    Ok(FipoTerms { total, cpo, clf })
}
