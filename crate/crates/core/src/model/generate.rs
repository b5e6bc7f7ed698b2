//! Nucleus (top-p) plus top-k sampling.

use super::vocab::{BOS, EOS, PAD, SEP, UNK};
use super::{EncodedPrompt, PolicyModel};
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Precision, Tape};

/// Decoding settings. Defaults: nucleus p = 0.75, top-k = 10.
#[derive(Clone, Debug)]
pub struct DecodingConfig {
    pub top_p: f64,
    pub top_k: usize,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        DecodingConfig {
            top_p: 0.75,
            top_k: 10,
            max_new_tokens: 24,
            seed: 0,
        }
    }
}

impl DecodingConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Candidate set for one sampling step: tokens inside both the top-k set
/// and the smallest nucleus whose cumulative probability reaches `top_p`,
/// with renormalized probabilities.
///
/// Both sets are prefixes of the probability-sorted order (ties broken by
/// token id), so the intersection is never empty: the top-1 token is
/// always included.
pub fn nucleus_topk_filter(probs: &[f64], top_p: f64, top_k: usize) -> Vec<(usize, f64)> {
    assert!(!probs.is_empty(), "empty distribution");
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        probs[b]
            .partial_cmp(&probs[a])
            .expect("finite probabilities")
            .then(a.cmp(&b))
    });

    let mut nucleus = 0;
    let mut cum = 0.0;
    for &idx in &order {
        nucleus += 1;
        cum += probs[idx];
        if cum >= top_p {
            break;
        }
    }
    let take = nucleus.min(top_k.max(1));
    let kept = &order[..take];
    let mass: f64 = kept.iter().map(|&i| probs[i]).sum();
    kept.iter().map(|&i| (i, probs[i] / mass)).collect()
}

pub(super) fn generate(
    model: &PolicyModel,
    prompt: &EncodedPrompt,
    decoding: &DecodingConfig,
) -> Result<Vec<u32>> {
    let mut rng = Rng::seed_from(decoding.seed);
    let mut ids = prompt.ids.clone();
    let mut out = Vec::new();
    for _ in 0..decoding.max_new_tokens {
        if ids.len() >= model.config.max_seq_len {
            break;
        }
        let tape = Tape::new(Precision::F64);
        let mut last = model.bind(&tape).next_token_logits(&ids)?.data();
        // structural tokens are never sampled; EOS stays available
        for special in [PAD, UNK, BOS, SEP] {
            last[special as usize] = -1e30;
        }
        let max = last.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = last.iter().map(|&l| (l - max).exp()).collect();
        let z: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= z);

        let candidates = nucleus_topk_filter(&probs, decoding.top_p, decoding.top_k);
        let weights: Vec<f64> = candidates.iter().map(|&(_, p)| p).collect();
        let tok = candidates[rng.categorical(&weights)].0 as u32;
        out.push(tok);
        if tok == EOS {
            break;
        }
        ids.push(tok);
    }
    Ok(out)
}
