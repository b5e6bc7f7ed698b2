//! Builds the dispreferred side of the preference dataset by prompting a
//! text-generation service with a fallacy definition and two exemplars of
//! the target type. A deterministic offline mock replaces the network for
//! tests and `--mock` runs; the real client speaks the plain chat-completion
//! JSON contract over HTTP.

use crate::dataset::{
    fallacy_type, marker_token, ArgumentSample, FallacyDistribution, PreferencePair,
    NUM_FALLACY_TYPES,
};
use crate::error::{Error, Result};
use crate::model::Stance;
use crate::rng::{derive_seed, Rng};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::time::Duration;

/// Connection settings for the generation service.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeneratorClientConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key. The key itself
    /// is never written to any file.
    pub api_key_env: String,
    pub max_parallel: usize,
    pub timeout_secs: u64,
    /// Extra attempts per request, with exponential backoff.
    pub retries: u32,
    pub temperature: f64,
    /// Bypass the network entirely and use the deterministic mock.
    pub mock_mode: bool,
}

impl Default for GeneratorClientConfig {
    fn default() -> Self {
        GeneratorClientConfig {
            endpoint: String::new(),
            model: "default".into(),
            api_key_env: "FIPO_API_KEY".into(),
            max_parallel: 4,
            timeout_secs: 30,
            retries: 2,
            temperature: 1.0,
            mock_mode: false,
        }
    }
}

impl GeneratorClientConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_parallel == 0 {
            return Err(Error::Config("max_parallel must be at least 1".into()));
        }
        if !self.mock_mode && self.endpoint.is_empty() {
            return Err(Error::Config(
                "generation endpoint required unless mock_mode is set".into(),
            ));
        }
        Ok(())
    }
}

/// Definition plus at least two example texts per fallacy type.
#[derive(Clone, Debug)]
pub struct FallacyExemplarBank {
    entries: HashMap<u8, (String, Vec<String>)>,
}

impl FallacyExemplarBank {
    /// The built-in bank: taxonomy definitions with two short examples of
    /// each type.
    pub fn builtin() -> FallacyExemplarBank {
        let examples: [(u8, [&str; 2]); NUM_FALLACY_TYPES] = [
            (1, [
                "My neighbor's two cats hate water, so all cats must hate every kind of water.",
                "I met two rude tourists from that city, so everyone there must be rude.",
            ]),
            (2, [
                "I wore my red scarf and we won the match, so the scarf made us win.",
                "Ice cream sales rise when drownings rise, so ice cream must cause drowning.",
            ]),
            (3, [
                "This book is the truth because the book itself says it is true.",
                "He is trustworthy because he always tells the truth, which proves you can trust him.",
            ]),
            (4, [
                "Millions of people buy this phone, so it must be the best phone ever made.",
                "Everyone in town believes the rumor, therefore it has to be true.",
            ]),
            (5, [
                "You cannot trust her budget plan because she dresses badly.",
                "His argument about traffic is wrong because he failed math in school.",
            ]),
            (6, [
                "All birds have wings, and planes have wings, so planes are birds.",
                "If it rains the street gets wet; the street is wet, so it rained.",
            ]),
            (7, [
                "Think of the children who will cry if this law does not pass.",
                "You must agree with me, otherwise my whole year of work was for nothing.",
            ]),
            (8, [
                "Either we ban all cars or the city becomes unlivable; there is no other way.",
                "You are either with us completely or you are against everything we stand for.",
            ]),
            (9, [
                "A feather is light, and light cannot be dark, so a feather cannot be dark.",
                "The sign said fine for parking here, so parking here must be fine.",
            ]),
            (10, [
                "You want fewer meetings, so you basically want the company to stop communicating at all.",
                "She asked for smaller portions, so she thinks nobody should ever enjoy food.",
            ]),
            (11, [
                "Why debate the school budget when the ocean is full of plastic?",
                "My opponent talks about taxes, but have you seen how nice the weather is?",
            ]),
            (12, [
                "Ignore his safety report; he once worked for a company that failed.",
                "Her climate study is worthless because she is not famous.",
            ]),
            (13, [
                "I only quoted the half of the study that supports my point on purpose.",
                "He moved the goalposts mid-debate so his claim could never be tested.",
            ]),
        ];
        let entries = examples
            .into_iter()
            .map(|(id, exs)| {
                let def = fallacy_type(id).expect("taxonomy id").definition.to_string();
                (id, (def, exs.iter().map(|s| s.to_string()).collect()))
            })
            .collect();
        FallacyExemplarBank { entries }
    }

    pub fn get(&self, id: u8) -> Option<(&str, &[String])> {
        self.entries
            .get(&id)
            .map(|(def, exs)| (def.as_str(), exs.as_slice()))
    }

    /// Every type the distribution can sample must have a definition and at
    /// least two examples.
    pub fn validate_for(&self, dist: &FallacyDistribution) -> Result<()> {
        for id in 1..=NUM_FALLACY_TYPES as u8 {
            if dist.prob(id) > 0.0 {
                match self.get(id) {
                    Some((_, exs)) if exs.len() >= 2 => {}
                    _ => {
                        return Err(Error::Data(format!(
                            "exemplar bank missing entry (or <2 examples) for type {id}"
                        )))
                    }
                }
            }
        }
        Ok(())
    }
}

/// Renders the generation prompt: topic, stance, target fallacy type with
/// its definition and two examples, the 25-word cap, and the JSON reply
/// instruction with keys topic/fallacy/argument.
pub fn build_fallacy_prompt(
    topic: &str,
    stance: Stance,
    ftype: u8,
    bank: &FallacyExemplarBank,
) -> Result<String> {
    if ftype == 0 {
        return Err(Error::Data("cannot request a 'Not a Fallacy' generation".into()));
    }
    let t = fallacy_type(ftype)
        .ok_or_else(|| Error::Data(format!("unknown fallacy type id {ftype}")))?;
    let (definition, examples) = bank
        .get(ftype)
        .ok_or_else(|| Error::Data(format!("exemplar bank has no entry for {}", t.name)))?;
    if examples.len() < 2 {
        return Err(Error::Data(format!("need two examples for {}", t.name)));
    }
    Ok(format!(
        "You are given the topic: {topic}\n\
         Write one {stance} argument for this topic, in the form of a {name} logical fallacy.\n\
         It should not be longer than 25 words.\n\
         \n\
         {name} is defined as: {definition}\n\
         Examples of {name}:\n\
         1. {ex1}\n\
         2. {ex2}\n\
         \n\
         Return exactly one JSON object of the form\n\
         {{\"topic\": \"{topic}\", \"fallacy\": \"{name}\", \"argument\": \"<your argument>\"}}",
        topic = topic,
        stance = stance.word(),
        name = t.name,
        definition = definition,
        ex1 = examples[0],
        ex2 = examples[1],
    ))
}

/// Scans `raw` for the first parseable JSON object (string-aware bracket
/// matching, so chatty prose around it is fine).
fn first_json_object(raw: &str) -> Option<serde_json::Value> {
    let bytes = raw.as_bytes();
    let mut start = 0;
    while let Some(open) = raw[start..].find('{').map(|i| i + start) {
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        for (i, &b) in bytes.iter().enumerate().skip(open) {
            if in_string {
                if escaped {
                    escaped = false;
                } else if b == b'\\' {
                    escaped = true;
                } else if b == b'"' {
                    in_string = false;
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        let candidate = &raw[open..=i];
                        if let Ok(v) = serde_json::from_str::<serde_json::Value>(candidate) {
                            if v.is_object() {
                                return Some(v);
                            }
                        }
                        break;
                    }
                }
                _ => {}
            }
        }
        start = open + 1;
    }
    None
}

/// Extracts the generated argument from a raw response, checking that the
/// reported fallacy matches the requested type (case-insensitive).
pub fn parse_generation_response(raw: &str, expected: u8) -> Result<String> {
    let obj = first_json_object(raw)
        .ok_or_else(|| Error::ResponseParse("no JSON object in response".into()))?;
    let argument = obj
        .get("argument")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::ResponseParse("missing argument field".into()))?
        .trim()
        .to_string();
    if argument.is_empty() {
        return Err(Error::ResponseParse("empty argument field".into()));
    }
    let want = fallacy_type(expected)
        .ok_or_else(|| Error::Data(format!("unknown fallacy type id {expected}")))?;
    let got = obj.get("fallacy").and_then(|v| v.as_str()).unwrap_or("");
    if !got.trim().eq_ignore_ascii_case(want.name) {
        return Err(Error::ResponseParse(format!(
            "type-mismatch: expected '{}', response said '{got}'",
            want.name
        )));
    }
    Ok(argument)
}

/// One generation request. `index` is the global request slot and `seed`
/// its derived randomness, so outcomes do not depend on scheduling.
#[derive(Clone, Debug)]
pub struct GenRequest {
    pub prompt: String,
    pub topic: String,
    pub stance: Stance,
    pub fallacy_type: u8,
    pub index: usize,
    pub seed: u64,
}

pub trait GeneratorClient: Send + Sync {
    fn generate(&self, request: &GenRequest) -> Result<String>;
}

/// Offline stand-in: emits template pseudo-fallacies that embed the target
/// type's name and its class marker token, wrapped in a chatty JSON reply.
/// Fully deterministic given the request seed.
#[derive(Clone, Debug, Default)]
pub struct MockGenerator {
    /// Report the wrong fallacy name on every nth request (tests the
    /// rejection path).
    pub mismatch_every: Option<usize>,
}

impl GeneratorClient for MockGenerator {
    fn generate(&self, request: &GenRequest) -> Result<String> {
        let mut rng = Rng::seed_from(request.seed);
        let t = fallacy_type(request.fallacy_type).expect("valid type id");
        let first = request
            .topic
            .split_whitespace()
            .next()
            .unwrap_or("this")
            .to_lowercase();
        const MOCK_VERBS: [&str; 3] = ["proves", "suggests", "confirms"];
        let verb = MOCK_VERBS[rng.below(MOCK_VERBS.len())];
        let a = crate::dataset::CONTENT[rng.below(crate::dataset::CONTENT.len())];
        let b = crate::dataset::CONTENT[rng.below(crate::dataset::CONTENT.len())];
        let argument = format!(
            "{first} {verb} {a} since {b} a clear case of {name} {marker}",
            marker = marker_token(request.fallacy_type),
            name = t.name.to_lowercase(),
        );
        let reported = match self.mismatch_every {
            Some(n) if n > 0 && (request.index + 1).is_multiple_of(n) => {
                // rotate to a different type name
                let other = request.fallacy_type % NUM_FALLACY_TYPES as u8 + 1;
                fallacy_type(other).expect("valid type id").name
            }
            _ => t.name,
        };
        let body = serde_json::json!({
            "topic": request.topic,
            "fallacy": reported,
            "argument": argument,
        });
        Ok(format!("Sure, here is the argument: {body}"))
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessageOwned,
}

#[derive(Deserialize)]
struct ChatMessageOwned {
    content: String,
}

/// Blocking HTTP chat-completion client with per-request retries and
/// exponential backoff. Shared by data generation and the judge harness.
pub struct HttpChatClient {
    config: GeneratorClientConfig,
    agent: ureq::Agent,
}

impl HttpChatClient {
    pub fn new(config: GeneratorClientConfig) -> Result<HttpChatClient> {
        config.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Ok(HttpChatClient { config, agent })
    }

    /// One prompt round-trip with the configured retries and backoff.
    pub fn complete(&self, prompt: &str) -> Result<String> {
        let mut delay = Duration::from_millis(250);
        let mut last_err = None;
        for attempt in 0..=self.config.retries {
            match self.post_once(prompt) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    last_err = Some(e);
                    if attempt < self.config.retries {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(last_err.unwrap_or_else(|| Error::RequestFailed("no attempts made".into())))
    }

    fn post_once(&self, prompt: &str) -> Result<String> {
        let body = ChatRequest {
            model: &self.config.model,
            messages: vec![ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.config.temperature,
        };
        let mut req = self.agent.post(&self.config.endpoint);
        if let Ok(key) = std::env::var(&self.config.api_key_env) {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = req
            .send_json(&body)
            .map_err(|e| Error::RequestFailed(e.to_string()))?;
        let parsed: ChatResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| Error::RequestFailed(format!("bad response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| Error::RequestFailed("response had no choices".into()))
    }
}

impl GeneratorClient for HttpChatClient {
    fn generate(&self, request: &GenRequest) -> Result<String> {
        self.complete(&request.prompt)
    }
}

/// Builds the configured client: the mock when `mock_mode` is set (no
/// network objects are constructed at all), otherwise the HTTP client.
pub fn build_client(config: &GeneratorClientConfig) -> Result<Box<dyn GeneratorClient>> {
    if config.mock_mode {
        Ok(Box::new(MockGenerator::default()))
    } else {
        Ok(Box::new(HttpChatClient::new(config.clone())?))
    }
}

/// Applies `f` to every item with at most `parallel` worker threads,
/// returning results in input order.
pub(crate) fn map_bounded<T, R, F>(items: &[T], parallel: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    assert!(parallel >= 1, "parallelism must be at least 1");
    let mut results: Vec<Option<R>> = Vec::with_capacity(items.len());
    results.resize_with(items.len(), || None);
    for chunk_start in (0..items.len()).step_by(parallel) {
        let chunk_end = (chunk_start + parallel).min(items.len());
        let mut chunk_results: Vec<Option<R>> = Vec::new();
        chunk_results.resize_with(chunk_end - chunk_start, || None);
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for (offset, item) in items[chunk_start..chunk_end].iter().enumerate() {
                let index = chunk_start + offset;
                let f = &f;
                handles.push(scope.spawn(move || f(index, item)));
            }
            for (slot, handle) in handles.into_iter().enumerate() {
                chunk_results[slot] = Some(handle.join().expect("worker thread panicked"));
            }
        });
        for (slot, r) in chunk_results.into_iter().enumerate() {
            results[chunk_start + slot] = r;
        }
    }
    results.into_iter().map(|r| r.expect("all slots filled")).collect()
}

/// A generation that was dropped, with the reason.
#[derive(Clone, Debug, Serialize)]
pub struct SkippedGeneration {
    pub topic: String,
    pub fallacy_type: u8,
    pub reason: String,
}

/// Result of a generation run: pairs in input order plus skip records.
#[derive(Debug)]
pub struct GenerationOutcome {
    pub pairs: Vec<PreferencePair>,
    pub skipped: Vec<SkippedGeneration>,
}

/// Generates `n_per` fallacious counterparts per source argument, with
/// fallacy types drawn from `dist`. Requests run with bounded parallelism
/// and results merge in input order; rejected or failed generations are
/// skipped (never resampled), keeping the sampled type plan intact.
pub fn generate_preference_pairs(
    args: &[ArgumentSample],
    dist: &FallacyDistribution,
    client: &dyn GeneratorClient,
    bank: &FallacyExemplarBank,
    n_per: usize,
    seed: u64,
    max_parallel: usize,
) -> Result<GenerationOutcome> {
    dist.validate()?;
    bank.validate_for(dist)?;
    if max_parallel == 0 {
        return Err(Error::Config("max_parallel must be at least 1".into()));
    }

    // Type plan first: one derived stream per source argument, so the plan
    // is independent of execution order.
    let mut requests = Vec::with_capacity(args.len() * n_per);
    for (i, arg) in args.iter().enumerate() {
        let mut rng = Rng::seed_from(derive_seed(seed, i as u64));
        for j in 0..n_per {
            let ftype = dist.sample(&mut rng);
            let index = i * n_per + j;
            requests.push(GenRequest {
                prompt: build_fallacy_prompt(&arg.topic, arg.stance, ftype, bank)?,
                topic: arg.topic.clone(),
                stance: arg.stance,
                fallacy_type: ftype,
                index,
                seed: derive_seed(seed, (index as u64) | (1 << 60)),
            });
        }
    }

    let responses = map_bounded(&requests, max_parallel, |_, req| client.generate(req));

    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for (req, response) in requests.iter().zip(responses) {
        let arg = &args[req.index / n_per];
        let outcome = response
            .and_then(|raw| parse_generation_response(&raw, req.fallacy_type))
            .and_then(|dispreferred| {
                let pair = PreferencePair {
                    topic: arg.topic.clone(),
                    stance: arg.stance,
                    preferred: arg.argument.clone(),
                    dispreferred,
                    fallacy_type: req.fallacy_type,
                    split: crate::dataset::Split::Train,
                };
                pair.validate()?;
                Ok(pair)
            });
        match outcome {
            Ok(pair) => pairs.push(pair),
            Err(e) => skipped.push(SkippedGeneration {
                topic: arg.topic.clone(),
                fallacy_type: req.fallacy_type,
                reason: e.to_string(),
            }),
        }
    }
    Ok(GenerationOutcome { pairs, skipped })
}
