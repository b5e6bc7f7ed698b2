//! Shared fixtures for unit tests.

use crate::model::{PolicyConfig, PolicyModel, Vocabulary, EOS};

pub fn tiny_vocab() -> Vocabulary {
    Vocabulary::build(["alpha beta gamma delta epsilon zeta"])
}

/// Small random model (1 layer, width 8) over [`tiny_vocab`].
pub fn tiny_model(seed: u64) -> PolicyModel {
    let vocab = tiny_vocab();
    let config = PolicyConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        max_seq_len: 24,
        vocab_size: vocab.size(),
    };
    PolicyModel::init(config, vocab, seed).unwrap()
}

/// Zeroes all parameters and rigs the LM-head bias so the next-token
/// distribution is uniform over `support` at every position.
pub fn rig_uniform(model: &mut PolicyModel, support: &[u32]) {
    for p in model.params_mut() {
        p.data.iter_mut().for_each(|x| *x = 0.0);
    }
    let v = model.config.vocab_size;
    let bias = model.param_mut("lm.b");
    for id in 0..v as u32 {
        bias.data[id as usize] = if support.contains(&id) { 0.0 } else { -1e4 };
    }
}

/// Rigs the model so EOS has probability 1 everywhere.
pub fn rig_deterministic_eos(model: &mut PolicyModel) {
    rig_uniform(model, &[EOS]);
}
