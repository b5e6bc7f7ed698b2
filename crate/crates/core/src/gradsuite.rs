//! The loss gradient suite: central finite-difference verification of all
//! five training objectives over randomly drawn tiny models and batches.
//! Used by the `gradcheck` CLI subcommand and the acceptance tests.

use crate::error::Result;
use crate::losses::{
    cpo_loss, dpo_loss, fipo_loss, sft_loss, ClassWeights, LossConfig, PreferenceBatch,
};
use crate::model::{EncodedPrompt, PolicyConfig, PolicyModel, Stance, Vocabulary, EOS};
use crate::rng::{derive_seed, Rng};
use crate::tensor::grad_check;

pub const LOSS_NAMES: [&str; 5] = ["sft", "dpo", "cpo", "clf", "fipo"];

/// Worst finite-difference disagreement seen for one loss across all
/// trials.
#[derive(Clone, Debug)]
pub struct LossCheck {
    pub loss: &'static str,
    pub max_rel_err: f64,
}

const WORDS: [&str; 6] = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta"];

fn tiny_model(seed: u64) -> PolicyModel {
    let vocab = Vocabulary::build([WORDS.join(" ").as_str()]);
    let config = PolicyConfig {
        d_model: 6,
        n_layers: 1,
        n_heads: 2,
        max_seq_len: 14,
        vocab_size: vocab.size(),
    };
    PolicyModel::init(config, vocab, seed).expect("tiny config is valid")
}

fn random_pairs(vocab: &Vocabulary, rng: &mut Rng, n: usize) -> Vec<crate::losses::EncodedPair> {
    let seq = |rng: &mut Rng, len: usize| -> Vec<u32> {
        let mut ids: Vec<u32> = (0..len).map(|_| vocab.id(WORDS[rng.below(6)])).collect();
        ids.push(EOS);
        ids
    };
    (0..n)
        .map(|i| {
            let topic = format!("{} {}", WORDS[rng.below(6)], WORDS[rng.below(6)]);
            let stance = if i % 2 == 0 {
                Stance::Support
            } else {
                Stance::Counter
            };
            let len_w = 2 + rng.below(3);
            let preferred = seq(rng, len_w);
            let len_l = 2 + rng.below(3);
            let mut dispreferred = seq(rng, len_l);
            if preferred == dispreferred {
                dispreferred.insert(0, vocab.id(WORDS[(rng.below(5) + 1) % 6]));
            }
            crate::losses::EncodedPair {
                prompt: EncodedPrompt::new(vocab, &topic, stance),
                preferred,
                dispreferred,
                fallacy_type: rng.below(13) as u8 + 1,
            }
        })
        .collect()
}

/// Runs every loss through `grad_check` on `trials` random models/batches.
/// Returns the per-loss maximum relative error.
pub fn run(trials: usize, eps: f64, seed: u64) -> Result<Vec<LossCheck>> {
    let mut worst = [0.0f64; 5];
    for trial in 0..trials {
        let trial_seed = derive_seed(seed, trial as u64);
        let model = tiny_model(trial_seed);
        let mut rng = Rng::seed_from(derive_seed(trial_seed, 1));
        let pairs = random_pairs(&model.vocab, &mut rng, 2);
        let batch = PreferenceBatch::new(pairs)?;
        let sft_batch: Vec<(EncodedPrompt, Vec<u32>)> = batch
            .items()
            .iter()
            .map(|p| (p.prompt.clone(), p.preferred.clone()))
            .collect();
        let weights =
            ClassWeights::from_type_ids(batch.items().iter().map(|p| p.fallacy_type))?;
        let mut reference = tiny_model(derive_seed(trial_seed, 2));
        reference.freeze();

        let init = model.param_init();
        for (li, loss) in LOSS_NAMES.iter().enumerate() {
            let err = grad_check(
                |tape, vars| {
                    let bound = model.bind_vars(tape, vars.to_vec());
                    match *loss {
                        "sft" => sft_loss(&bound, &sft_batch),
                        "dpo" => dpo_loss(&bound, &reference, &batch, &LossConfig::dpo()),
                        "cpo" => cpo_loss(&bound, &batch, &LossConfig::cpo()),
                        "clf" => crate::losses::clf_loss(
                            &bound,
                            &batch,
                            &LossConfig::fipo(weights.clone()),
                        ),
                        "fipo" => {
                            Ok(fipo_loss(&bound, &batch, &LossConfig::fipo(weights.clone()))?
                                .total)
                        }
                        _ => unreachable!(),
                    }
                },
                &init,
                eps,
            )?;
            if err > worst[li] {
                worst[li] = err;
            }
        }
    }
    Ok(LOSS_NAMES
        .iter()
        .zip(worst)
        .map(|(loss, max_rel_err)| LossCheck { loss, max_rel_err })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let checks = run(2, 1e-5, 33).unwrap();
        assert_eq!(checks.len(), 5);
        for c in checks {
            assert!(c.max_rel_err < 1e-4, "{}: {}", c.loss, c.max_rel_err);
        }
    }
}
