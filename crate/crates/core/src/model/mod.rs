//! The toy policy: a small causal transformer with an LM head and a
//! 14-way fallacy classification head over the last-token hidden state.

mod generate;
mod vocab;

pub use generate::{nucleus_topk_filter, DecodingConfig};
pub use vocab::{
    words, EncodedPrompt, Stance, Vocabulary, BOS, EOS, PAD, RESERVED, SEP, UNK,
};

use crate::dataset::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{concat_cols, Precision, Tape, Var};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

const CHECKPOINT_VERSION: u32 = 1;
const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub vocab_size: usize,
}

impl PolicyConfig {
    /// Defaults (2-layer, 2-head, width 64) with the given vocabulary size.
    pub fn with_vocab_size(vocab_size: usize) -> PolicyConfig {
        PolicyConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            max_seq_len: 128,
            vocab_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.max_seq_len == 0 {
            return Err(Error::Config(
                "d_model, n_heads and max_seq_len must be positive".into(),
            ));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size <= RESERVED as usize {
            return Err(Error::Config(format!(
                "vocab_size {} leaves no room for regular tokens",
                self.vocab_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Trainable policy: parameters plus the vocabulary they were built for.
#[derive(Clone)]
pub struct PolicyModel {
    pub config: PolicyConfig,
    pub vocab: Vocabulary,
    params: Vec<Param>,
    index: HashMap<String, usize>,
    frozen: bool,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    config: PolicyConfig,
    vocab: Vocabulary,
    params: Vec<Param>,
}

fn param_specs(config: &PolicyConfig) -> Vec<(String, Vec<usize>)> {
    let d = config.d_model;
    let v = config.vocab_size;
    let mut specs = vec![
        ("tok_emb".to_string(), vec![v, d]),
        ("pos_emb".to_string(), vec![config.max_seq_len, d]),
    ];
    for l in 0..config.n_layers {
        let p = |s: &str| format!("l{l}.{s}");
        specs.push((p("ln1.g"), vec![d]));
        specs.push((p("ln1.b"), vec![d]));
        specs.push((p("attn.wq"), vec![d, d]));
        specs.push((p("attn.wk"), vec![d, d]));
        specs.push((p("attn.wv"), vec![d, d]));
        specs.push((p("attn.wo"), vec![d, d]));
        specs.push((p("ln2.g"), vec![d]));
        specs.push((p("ln2.b"), vec![d]));
        specs.push((p("mlp.w1"), vec![d, 4 * d]));
        specs.push((p("mlp.b1"), vec![4 * d]));
        specs.push((p("mlp.w2"), vec![4 * d, d]));
        specs.push((p("mlp.b2"), vec![d]));
    }
    specs.push(("lm.w".to_string(), vec![d, v]));
    specs.push(("lm.b".to_string(), vec![v]));
    specs.push(("clf.w".to_string(), vec![d, NUM_CLASSES]));
    specs.push(("clf.b".to_string(), vec![NUM_CLASSES]));
    specs
}

impl PolicyModel {
    /// Fresh model with gaussian weight init (seeded), unit layer-norm gains
    /// and zero biases.
    pub fn init(config: PolicyConfig, vocab: Vocabulary, seed: u64) -> Result<PolicyModel> {
        config.validate()?;
        if vocab.size() != config.vocab_size {
            return Err(Error::Config(format!(
                "vocab has {} tokens but config.vocab_size is {}",
                vocab.size(),
                config.vocab_size
            )));
        }
        let mut rng = Rng::seed_from(seed);
        let params: Vec<Param> = param_specs(&config)
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data = if name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2")
                {
                    vec![0.0; n]
                } else if name.ends_with("ln1.g") || name.ends_with("ln2.g") {
                    vec![1.0; n]
                } else {
                    (0..n).map(|_| rng.gaussian(INIT_STD)).collect()
                };
                Param { name, shape, data }
            })
            .collect();
        let index = params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        Ok(PolicyModel {
            config,
            vocab,
            params,
            index,
            frozen: false,
        })
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> &Param {
        &self.params[self.index[name]]
    }

    pub fn param_mut(&mut self, name: &str) -> &mut Param {
        let i = self.index[name];
        &mut self.params[i]
    }

    /// Rounds every parameter through `f32` (used after updates in training
    /// precision so checkpoints hold exactly representable values).
    pub fn quantize_params(&mut self, precision: Precision) {
        if precision == Precision::F32 {
            for p in &mut self.params {
                for x in &mut p.data {
                    *x = *x as f32 as f64;
                }
            }
        }
    }

    /// Registers every parameter on a tape. Gradients flow unless the model
    /// is frozen.
    pub fn bind(&self, tape: &Tape) -> BoundModel<'_> {
        let vars = self
            .params
            .iter()
            .map(|p| tape.leaf(p.shape.clone(), p.data.clone(), !self.frozen))
            .collect();
        BoundModel {
            model: self,
            tape: tape.clone(),
            vars,
        }
    }

    /// Binds the model structure over externally supplied parameter leaves
    /// (one per parameter, in `params()` order). Used by gradient checks.
    pub fn bind_vars(&self, tape: &Tape, vars: Vec<Var>) -> BoundModel<'_> {
        assert_eq!(vars.len(), self.params.len(), "one var per parameter");
        BoundModel {
            model: self,
            tape: tape.clone(),
            vars,
        }
    }

    /// Shapes and values for `grad_check` init.
    pub fn param_init(&self) -> Vec<(Vec<usize>, Vec<f64>)> {
        self.params
            .iter()
            .map(|p| (p.shape.clone(), p.data.clone()))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            params: self.params.clone(),
        };
        let json = serde_json::to_string(&ckpt).expect("checkpoint serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<PolicyModel> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&raw)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        ckpt.config.validate()?;
        let specs = param_specs(&ckpt.config);
        if ckpt.params.len() != specs.len() {
            return Err(Error::Data("checkpoint parameter count mismatch".into()));
        }
        for (param, (name, shape)) in ckpt.params.iter().zip(&specs) {
            if &param.name != name || &param.shape != shape {
                return Err(Error::Data(format!(
                    "checkpoint parameter mismatch: got {} {:?}, expected {} {:?}",
                    param.name, param.shape, name, shape
                )));
            }
            if param.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Data(format!("bad data length for {}", param.name)));
            }
        }
        let index = ckpt
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        Ok(PolicyModel {
            config: ckpt.config,
            vocab: ckpt.vocab,
            params: ckpt.params,
            index,
            frozen: false,
        })
    }

    // ── value-level conveniences (fresh 64-bit tape per call) ──────────

    /// Sum of realized-token log-probabilities of `y` given the prompt.
    pub fn sequence_logprob(&self, prompt: &EncodedPrompt, y: &[u32]) -> Result<f64> {
        let tape = Tape::new(Precision::F64);
        Ok(self.bind(&tape).sequence_logprob(prompt, y)?.value())
    }

    /// Hidden state of the last non-PAD token, after the final block.
    pub fn last_hidden_state(&self, prompt: &EncodedPrompt, y: &[u32]) -> Result<Vec<f64>> {
        let tape = Tape::new(Precision::F64);
        Ok(self.bind(&tape).last_hidden(prompt, y)?.data())
    }

    /// Class probabilities over the 14 fallacy classes (class 0 is
    /// "Not a Fallacy"). Entries are positive and sum to 1.
    pub fn classify_fallacy(&self, prompt: &EncodedPrompt, y: &[u32]) -> Result<Vec<f64>> {
        let tape = Tape::new(Precision::F64);
        let log_probs = self.bind(&tape).classify_log_probs(prompt, y)?;
        Ok(log_probs.data().iter().map(|lp| lp.exp()).collect())
    }

    /// Samples a continuation of the prompt under nucleus + top-k decoding.
    /// Deterministic given the seed; stops at EOS or `max_new_tokens`.
    pub fn generate(&self, prompt: &EncodedPrompt, decoding: &DecodingConfig) -> Result<Vec<u32>> {
        generate::generate(self, prompt, decoding)
    }
}

/// A model whose parameters are registered on a tape, ready to build
/// differentiable scores.
pub struct BoundModel<'m> {
    model: &'m PolicyModel,
    tape: Tape,
    vars: Vec<Var>,
}

impl<'m> BoundModel<'m> {
    fn p(&self, name: &str) -> &Var {
        &self.vars[self.model.index[name]]
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn model(&self) -> &PolicyModel {
        self.model
    }

    /// Per-parameter gradients, in `params()` order (call after backward).
    pub fn grads(&self) -> Vec<Vec<f64>> {
        self.vars.iter().map(|v| v.grad()).collect()
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        let v = self.model.config.vocab_size as u32;
        for &id in ids {
            if id >= v {
                return Err(Error::UnknownTokenId(id));
            }
        }
        Ok(())
    }

    /// Concatenates prompt and argument, stripping trailing PAD and
    /// validating the sequence. Returns (ids, prompt_len).
    fn full_ids(&self, prompt: &EncodedPrompt, y: &[u32]) -> Result<(Vec<u32>, usize)> {
        let mut y_end = y.len();
        while y_end > 0 && y[y_end - 1] == PAD {
            y_end -= 1;
        }
        let y = &y[..y_end];
        if y.is_empty() {
            return Err(Error::Model("empty argument sequence".into()));
        }
        if y[y.len() - 1] != EOS {
            return Err(Error::Model("argument must end with EOS".into()));
        }
        if y.contains(&PAD) {
            return Err(Error::Model("PAD inside argument".into()));
        }
        let len = prompt.len() + y.len();
        if len > self.model.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len,
                max: self.model.config.max_seq_len,
            });
        }
        let mut ids = prompt.ids.clone();
        ids.extend_from_slice(y);
        self.check_ids(&ids)?;
        Ok((ids, prompt.len()))
    }

    /// Transformer trunk: `[T, d_model]` activations after the final block.
    /// With zero layers this is exactly token + position embeddings.
    pub fn hidden_states(&self, ids: &[u32]) -> Result<Var> {
        self.check_ids(ids)?;
        let t = ids.len();
        if t == 0 {
            return Err(Error::Model("empty input".into()));
        }
        if t > self.model.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: t,
                max: self.model.config.max_seq_len,
            });
        }
        let cfg = &self.model.config;
        let positions: Vec<usize> = (0..t).collect();
        let token_rows: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let mut x = self
            .p("tok_emb")
            .gather_rows(&token_rows)
            .add(&self.p("pos_emb").gather_rows(&positions));

        let mask = causal_mask(&self.tape, t);
        let d_head = cfg.d_model / cfg.n_heads;
        let scale = 1.0 / (d_head as f64).sqrt();

        for l in 0..cfg.n_layers {
            let name = |s: &str| format!("l{l}.{s}");
            let normed = x.layer_norm(self.p(&name("ln1.g")), self.p(&name("ln1.b")), LN_EPS);
            let q = normed.matmul(self.p(&name("attn.wq")));
            let k = normed.matmul(self.p(&name("attn.wk")));
            let v = normed.matmul(self.p(&name("attn.wv")));
            let mut heads = Vec::with_capacity(cfg.n_heads);
            for h in 0..cfg.n_heads {
                let qh = q.slice_cols(h * d_head, d_head);
                let kh = k.slice_cols(h * d_head, d_head);
                let vh = v.slice_cols(h * d_head, d_head);
                let scores = qh.matmul(&kh.transpose()).scale(scale).add(&mask);
                let attn = scores.softmax();
                heads.push(attn.matmul(&vh));
            }
            let ctx = concat_cols(&self.tape, &heads);
            x = x.add(&ctx.matmul(self.p(&name("attn.wo"))));

            let normed2 = x.layer_norm(self.p(&name("ln2.g")), self.p(&name("ln2.b")), LN_EPS);
            let up = normed2
                .matmul(self.p(&name("mlp.w1")))
                .add_bias(self.p(&name("mlp.b1")))
                .gelu();
            let down = up
                .matmul(self.p(&name("mlp.w2")))
                .add_bias(self.p(&name("mlp.b2")));
            x = x.add(&down);
        }
        Ok(x)
    }

    /// Next-token logits `[T, vocab_size]` for every position.
    pub fn logits(&self, ids: &[u32]) -> Result<Var> {
        let hidden = self.hidden_states(ids)?;
        Ok(hidden.matmul(self.p("lm.w")).add_bias(self.p("lm.b")))
    }

    /// Next-token logits for the final position only, as `[1, vocab_size]`
    /// (what sampling needs).
    pub fn next_token_logits(&self, ids: &[u32]) -> Result<Var> {
        let hidden = self.hidden_states(ids)?;
        Ok(hidden
            .row(ids.len() - 1)
            .matmul(self.p("lm.w"))
            .add_bias(self.p("lm.b")))
    }

    /// One trunk pass over prompt + argument, reusable by both the LM
    /// scoring head and the classification head.
    pub fn forward_sequence(&self, prompt: &EncodedPrompt, y: &[u32]) -> Result<ScoredSequence> {
        let (ids, prompt_len) = self.full_ids(prompt, y)?;
        let hidden = self.hidden_states(&ids)?;
        let targets = ids[prompt_len..].iter().map(|&t| t as usize).collect();
        Ok(ScoredSequence {
            hidden,
            targets,
            prompt_len,
            len: ids.len(),
        })
    }

    /// Sum of realized-token log-probabilities for a forwarded sequence.
    /// The LM head only touches the scored positions.
    pub fn logprob_of(&self, seq: &ScoredSequence) -> Result<Var> {
        let scored = seq
            .hidden
            .slice_rows(seq.prompt_len - 1, seq.targets.len());
        let logits = scored.matmul(self.p("lm.w")).add_bias(self.p("lm.b"));
        Ok(logits.log_softmax()?.pick_per_row(&seq.targets).sum())
    }

    /// Class log-probabilities `[1, 14]` from the last-token hidden state
    /// of a forwarded sequence.
    pub fn classify_of(&self, seq: &ScoredSequence) -> Result<Var> {
        seq.hidden
            .row(seq.len - 1)
            .matmul(self.p("clf.w"))
            .add_bias(self.p("clf.b"))
            .log_softmax()
    }

    /// Differentiable sum of log-probabilities of the realized tokens of
    /// `y` (which must end with EOS) given the prompt. PAD is excluded.
    pub fn sequence_logprob(&self, prompt: &EncodedPrompt, y: &[u32]) -> Result<Var> {
        let seq = self.forward_sequence(prompt, y)?;
        self.logprob_of(&seq)
    }

    /// Hidden state at the last non-PAD position, as a `[1, d_model]` row.
    pub fn last_hidden(&self, prompt: &EncodedPrompt, y: &[u32]) -> Result<Var> {
        let seq = self.forward_sequence(prompt, y)?;
        Ok(seq.hidden.row(seq.len - 1))
    }

    /// Log-probabilities over the 14 classes from the linear head on the
    /// last-token hidden state: `log softmax(W h + b)` as `[1, 14]`.
    pub fn classify_log_probs(&self, prompt: &EncodedPrompt, y: &[u32]) -> Result<Var> {
        let seq = self.forward_sequence(prompt, y)?;
        self.classify_of(&seq)
    }
}

/// A trunk forward pass over `prompt ++ y`, with everything needed to
/// attach either output head.
pub struct ScoredSequence {
    pub hidden: Var,
    pub targets: Vec<usize>,
    pub prompt_len: usize,
    pub len: usize,
}

fn causal_mask(tape: &Tape, t: usize) -> Var {
    let mut data = vec![0.0; t * t];
    for r in 0..t {
        for c in (r + 1)..t {
            data[r * t + c] = -1e9;
        }
    }
    tape.constant(vec![t, t], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    fn tiny_model(seed: u64) -> PolicyModel {
        let vocab = Vocabulary::build(["alpha beta gamma delta epsilon zeta"]);
        let config = PolicyConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            max_seq_len: 16,
            vocab_size: vocab.size(),
        };
        PolicyModel::init(config, vocab, seed).unwrap()
    }

    /// Rigs the LM head so the next-token distribution is uniform over the
    /// given tokens at every position: all other logits get a -1e4 bias and
    /// every other parameter is zeroed.
    fn rig_uniform(model: &mut PolicyModel, support: &[u32]) {
        for p in model.params_mut() {
            p.data.iter_mut().for_each(|x| *x = 0.0);
        }
        let v = model.config.vocab_size;
        let bias = model.param_mut("lm.b");
        for id in 0..v as u32 {
            bias.data[id as usize] = if support.contains(&id) { 0.0 } else { -1e4 };
        }
    }

    #[test]
    fn uniform_model_logprob_is_count_times_ln_support() {
        let mut model = tiny_model(0);
        let v = model.vocab.clone();
        let (a, b, c) = (v.id("alpha"), v.id("beta"), v.id("gamma"));
        let prompt = EncodedPrompt::new(&v, "alpha", Stance::Support);
        rig_uniform(&mut model, &[a, b, c, EOS]);
        // three realized tokens, each uniform over 4 candidates
        let lp = model.sequence_logprob(&prompt, &[a, b, EOS]).unwrap();
        assert!((lp - (-3.0 * 4.0f64.ln())).abs() < 1e-6, "{lp}");
        // EOS-only sequence: one position
        let lp = model.sequence_logprob(&prompt, &[EOS]).unwrap();
        assert!((lp - (-(4.0f64.ln()))).abs() < 1e-6, "{lp}");
    }

    #[test]
    fn logprob_matches_stepwise_product() {
        let model = tiny_model(3);
        let v = &model.vocab;
        let y = vec![v.id("beta"), v.id("delta"), v.id("beta"), EOS];
        let prompt = EncodedPrompt::new(v, "gamma zeta", Stance::Counter);
        let lp = model.sequence_logprob(&prompt, &y).unwrap();

        // Brute-force oracle: re-run the forward stepwise, multiplying
        // per-step softmax probabilities.
        let mut ids = prompt.ids.clone();
        let mut product = 1.0f64;
        for &tok in &y {
            let tape = Tape::new(Precision::F64);
            let logits = model.bind(&tape).logits(&ids).unwrap();
            let last = logits.row(ids.len() - 1).softmax().data();
            product *= last[tok as usize];
            ids.push(tok);
        }
        assert!((lp.exp() - product).abs() < 1e-9, "{} vs {}", lp.exp(), product);
    }

    #[test]
    fn trailing_pad_is_ignored() {
        let model = tiny_model(7);
        let v = &model.vocab;
        let prompt = EncodedPrompt::new(v, "alpha beta", Stance::Support);
        let y = vec![v.id("gamma"), EOS];
        let mut padded = y.clone();
        padded.extend([PAD; 5]);

        let lp = model.sequence_logprob(&prompt, &y).unwrap();
        let lp_padded = model.sequence_logprob(&prompt, &padded).unwrap();
        assert_eq!(lp, lp_padded);

        let h = model.last_hidden_state(&prompt, &y).unwrap();
        let h_padded = model.last_hidden_state(&prompt, &padded).unwrap();
        assert_eq!(h, h_padded);

        let c = model.classify_fallacy(&prompt, &y).unwrap();
        let c_padded = model.classify_fallacy(&prompt, &padded).unwrap();
        assert_eq!(c, c_padded);
    }

    #[test]
    fn zero_layers_hidden_is_embedding_plus_position() {
        let vocab = Vocabulary::build(["alpha beta"]);
        let config = PolicyConfig {
            d_model: 4,
            n_layers: 0,
            n_heads: 1,
            max_seq_len: 8,
            vocab_size: vocab.size(),
        };
        let model = PolicyModel::init(config, vocab, 1).unwrap();
        let prompt = EncodedPrompt::new(&model.vocab, "alpha", Stance::Support);
        let y = vec![model.vocab.id("beta"), EOS];
        let h = model.last_hidden_state(&prompt, &y).unwrap();

        let t = prompt.len() + y.len();
        let tok = model.param("tok_emb");
        let pos = model.param("pos_emb");
        let d = model.config.d_model;
        let last = EOS as usize;
        let expect: Vec<f64> = (0..d)
            .map(|c| tok.data[last * d + c] + pos.data[(t - 1) * d + c])
            .collect();
        assert_eq!(h, expect);
    }

    #[test]
    fn perturbing_earlier_token_changes_last_hidden() {
        let model = tiny_model(11);
        let v = &model.vocab;
        let prompt = EncodedPrompt::new(v, "alpha", Stance::Support);
        let y1 = vec![v.id("beta"), v.id("gamma"), EOS];
        let y2 = vec![v.id("delta"), v.id("gamma"), EOS];
        let h1 = model.last_hidden_state(&prompt, &y1).unwrap();
        let h2 = model.last_hidden_state(&prompt, &y2).unwrap();
        assert_ne!(h1, h2, "causal attention must see earlier tokens");
    }

    #[test]
    fn logprob_is_permutation_sensitive() {
        let model = tiny_model(13);
        let v = &model.vocab;
        let prompt = EncodedPrompt::new(v, "zeta", Stance::Counter);
        let a = model
            .sequence_logprob(&prompt, &[v.id("alpha"), v.id("beta"), EOS])
            .unwrap();
        let b = model
            .sequence_logprob(&prompt, &[v.id("beta"), v.id("alpha"), EOS])
            .unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn classify_zero_head_is_uniform() {
        let mut model = tiny_model(17);
        let prompt = EncodedPrompt::new(&model.vocab.clone(), "alpha", Stance::Support);
        let y = vec![model.vocab.id("beta"), EOS];
        for name in ["clf.w", "clf.b"] {
            model.param_mut(name).data.iter_mut().for_each(|x| *x = 0.0);
        }
        let probs = model.classify_fallacy(&prompt, &y).unwrap();
        for p in &probs {
            assert!((p - 1.0 / NUM_CLASSES as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn classify_one_hot_bias() {
        let mut model = tiny_model(19);
        let prompt = EncodedPrompt::new(&model.vocab.clone(), "alpha", Stance::Support);
        let y = vec![model.vocab.id("beta"), EOS];
        model.param_mut("clf.w").data.iter_mut().for_each(|x| *x = 0.0);
        model.param_mut("clf.b").data.iter_mut().for_each(|x| *x = 0.0);
        model.param_mut("clf.b").data[3] = 10.0;
        let probs = model.classify_fallacy(&prompt, &y).unwrap();
        let expect = 10f64.exp() / (10f64.exp() + 13.0);
        assert!((probs[3] - expect).abs() < 1e-6, "{} vs {expect}", probs[3]);
        assert!((probs[3] - 0.99941).abs() < 1e-4);
    }

    #[test]
    fn classify_sums_to_one_on_random_models() {
        for seed in 0..100 {
            let model = tiny_model(seed);
            let v = &model.vocab;
            let prompt = EncodedPrompt::new(v, "gamma delta", Stance::Counter);
            let y = vec![v.id("epsilon"), EOS];
            let probs = model.classify_fallacy(&prompt, &y).unwrap();
            let total: f64 = probs.iter().sum();
            assert!((total - 1.0).abs() < 1e-6, "seed {seed}: {total}");
            assert!(probs.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn classify_matches_log_softmax_composition() {
        let model = tiny_model(23);
        let v = &model.vocab;
        let prompt = EncodedPrompt::new(v, "beta", Stance::Support);
        let y = vec![v.id("zeta"), v.id("alpha"), EOS];
        let probs = model.classify_fallacy(&prompt, &y).unwrap();

        // Compositional oracle: W h + b through plain arithmetic.
        let h = model.last_hidden_state(&prompt, &y).unwrap();
        let w = model.param("clf.w");
        let b = model.param("clf.b");
        let logits: Vec<f64> = (0..NUM_CLASSES)
            .map(|c| {
                b.data[c]
                    + (0..model.config.d_model)
                        .map(|i| h[i] * w.data[i * NUM_CLASSES + c])
                        .sum::<f64>()
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        for c in 0..NUM_CLASSES {
            let expect = (logits[c] - max).exp() / z;
            assert!((probs[c] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn sequence_too_long_rejected() {
        let model = tiny_model(29);
        let v = &model.vocab;
        let prompt = EncodedPrompt::new(v, "alpha beta gamma delta", Stance::Support);
        let mut y = vec![v.id("beta"); 20];
        y.push(EOS);
        match model.sequence_logprob(&prompt, &y) {
            Err(Error::SequenceTooLong { .. }) => {}
            other => panic!("expected SequenceTooLong, got {other:?}"),
        }
    }

    #[test]
    fn unknown_token_id_rejected() {
        let model = tiny_model(31);
        let prompt = EncodedPrompt::new(&model.vocab, "alpha", Stance::Support);
        let bad = model.config.vocab_size as u32 + 3;
        match model.sequence_logprob(&prompt, &[bad, EOS]) {
            Err(Error::UnknownTokenId(id)) => assert_eq!(id, bad),
            other => panic!("expected UnknownTokenId, got {other:?}"),
        }
    }

    #[test]
    fn model_gradients_pass_grad_check() {
        let model = tiny_model(37);
        let v = model.vocab.clone();
        let prompt = EncodedPrompt::new(&v, "alpha beta", Stance::Support);
        let y = vec![v.id("gamma"), EOS];

        // sequence_logprob w.r.t. all parameters
        let p1 = prompt.clone();
        let y1 = y.clone();
        let m1 = model.clone();
        let err = grad_check(
            move |tape, vars| {
                let bound = m1.bind_vars(tape, vars.to_vec());
                bound.sequence_logprob(&p1, &y1)
            },
            &model.param_init(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "sequence_logprob grad err {err}");

        // classification log-prob of one class w.r.t. all parameters
        let m2 = model.clone();
        let err = grad_check(
            move |tape, vars| {
                let bound = m2.bind_vars(tape, vars.to_vec());
                let lp = bound.classify_log_probs(&prompt, &y)?;
                Ok(lp.pick_per_row(&[5]).sum())
            },
            &model.param_init(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "classify grad err {err}");
    }

    #[test]
    fn checkpoint_roundtrip() {
        let model = tiny_model(41);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        model.save(&path).unwrap();
        let loaded = PolicyModel::load(&path).unwrap();
        assert_eq!(loaded.config, model.config);
        assert_eq!(loaded.num_params(), model.num_params());
        for (a, b) in loaded.params().iter().zip(model.params()) {
            assert_eq!(a.data, b.data, "param {}", a.name);
        }
        // version field is mandatory
        let mut raw: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        raw.as_object_mut().unwrap().remove("version");
        let path2 = dir.path().join("broken.json");
        std::fs::write(&path2, raw.to_string()).unwrap();
        assert!(PolicyModel::load(&path2).is_err());
    }
}
