//! Data model and persistence: the argumentation corpus, the preference
//! dataset, the 14-class fallacy taxonomy, fallacy-type sampling and split
//! accounting. Files are JSONL, one record per line; fallacy types are
//! serialized by canonical name, never by raw id.

use crate::error::{Error, Result};
use crate::model::{words, Stance};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

/// Classification classes: "Not a Fallacy" plus the 13 fallacy types.
pub const NUM_CLASSES: usize = 14;
/// Number of fallacy types (class ids 1..=13).
pub const NUM_FALLACY_TYPES: usize = 13;
/// Class id reserved for sound arguments.
pub const NOT_A_FALLACY: u8 = 0;

/// One row of the fallacy taxonomy.
#[derive(Clone, Copy, Debug)]
pub struct FallacyType {
    pub id: u8,
    pub name: &'static str,
    pub alternate: Option<&'static str>,
    pub definition: &'static str,
}

/// The taxonomy. Index equals class id; id 0 is "Not a Fallacy".
pub static TAXONOMY: [FallacyType; NUM_CLASSES] = [
    FallacyType {
        id: 0,
        name: "Not a Fallacy",
        alternate: None,
        definition: "A sound argument with no reasoning error.",
    },
    FallacyType {
        id: 1,
        name: "Faulty Generalization",
        alternate: None,
        definition: "A conclusion is drawn about all or many instances of a phenomenon from too few cases; jumping to conclusions.",
    },
    FallacyType {
        id: 2,
        name: "False Causality",
        alternate: None,
        definition: "A statement that jumps to a conclusion implying a causal relationship without supporting evidence.",
    },
    FallacyType {
        id: 3,
        name: "Circular Reasoning",
        alternate: None,
        definition: "The end of an argument comes back to the beginning without having proven itself.",
    },
    FallacyType {
        id: 4,
        name: "Ad Populum",
        alternate: Some("Appeal to Popularity"),
        definition: "An argument based on affirming that something is real or better because the majority thinks so.",
    },
    FallacyType {
        id: 5,
        name: "Ad Hominem",
        alternate: Some("Personal Attack"),
        definition: "Irrelevantly attacking the person, or some aspect of the person, making the argument.",
    },
    FallacyType {
        id: 6,
        name: "Fallacy of Logic",
        alternate: Some("Logical Error"),
        definition: "An error in the logical structure of an argument.",
    },
    FallacyType {
        id: 7,
        name: "Appeal to Emotion",
        alternate: None,
        definition: "Manipulation of the recipient's emotions in order to win an argument.",
    },
    FallacyType {
        id: 8,
        name: "False Dilemma",
        alternate: Some("Excluding Viable Alternatives"),
        definition: "Presenting only two options or sides when there are many options or sides.",
    },
    FallacyType {
        id: 9,
        name: "Equivocation",
        alternate: Some("Use of Ambiguous Language"),
        definition: "A key term or phrase in an argument is used in an ambiguous way.",
    },
    FallacyType {
        id: 10,
        name: "Fallacy of Extension",
        alternate: Some("Exaggerating"),
        definition: "Attacking an exaggerated or caricatured version of the opponent's position.",
    },
    FallacyType {
        id: 11,
        name: "Fallacy of Relevance",
        alternate: Some("Irrelevant Argument"),
        definition: "Introducing premises or conclusions that have nothing to do with the subject matter.",
    },
    FallacyType {
        id: 12,
        name: "Fallacy of Credibility",
        alternate: Some("Attacking the Character of the Speaker"),
        definition: "Attempting to disprove an argument by attacking the character of the speaker.",
    },
    FallacyType {
        id: 13,
        name: "Intentional",
        alternate: Some("Intentionally Wrong Argument"),
        definition: "An intentional, sometimes subconscious, action or choice to incorrectly support an argument.",
    },
];

pub fn fallacy_type(id: u8) -> Option<&'static FallacyType> {
    TAXONOMY.get(id as usize)
}

/// Case-insensitive lookup by canonical or alternate name.
pub fn fallacy_by_name(name: &str) -> Option<&'static FallacyType> {
    let needle = name.trim().to_lowercase();
    TAXONOMY.iter().find(|t| {
        t.name.to_lowercase() == needle
            || t.alternate
                .map(|a| a.to_lowercase() == needle)
                .unwrap_or(false)
    })
}

/// Single-word class marker used by the synthetic corpus and the mock
/// generator, so toy classification is separable by construction.
pub fn marker_token(id: u8) -> String {
    format!("marker{id}")
}

/// Serde adapter: fallacy ids travel as canonical names.
pub mod fallacy_name {
    use super::{fallacy_by_name, fallacy_type};
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(id: &u8, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match fallacy_type(*id) {
            Some(t) => ser.serialize_str(t.name),
            None => Err(serde::ser::Error::custom(format!("bad fallacy id {id}"))),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<u8, D::Error> {
        let name = String::deserialize(de)?;
        fallacy_by_name(&name)
            .map(|t| t.id)
            .ok_or_else(|| de::Error::custom(format!("unknown fallacy type '{name}'")))
    }
}

/// Train/test membership tag carried by records.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

/// One sound argument with its topic and stance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArgumentSample {
    pub topic: String,
    pub stance: Stance,
    pub argument: String,
    #[serde(default, skip_serializing_if = "is_train")]
    pub split: Split,
}

fn is_train(s: &Split) -> bool {
    *s == Split::Train
}

/// Soft length cap on arguments, in words.
pub const MAX_ARGUMENT_WORDS: usize = 25;

impl ArgumentSample {
    pub fn new(topic: impl Into<String>, stance: Stance, argument: impl Into<String>) -> Self {
        ArgumentSample {
            topic: topic.into(),
            stance,
            argument: argument.into(),
            split: Split::Train,
        }
    }

    /// Errors on empty fields; returns a warning when the argument runs
    /// past the soft word limit.
    pub fn validate(&self) -> Result<Option<String>> {
        if self.topic.trim().is_empty() || self.argument.trim().is_empty() {
            return Err(Error::Data("topic and argument must be non-empty".into()));
        }
        let n = words(&self.argument).len();
        if n > MAX_ARGUMENT_WORDS {
            return Ok(Some(format!(
                "argument has {n} words (soft limit {MAX_ARGUMENT_WORDS}): '{}...'",
                &self.argument[..self.argument.len().min(40)]
            )));
        }
        Ok(None)
    }
}

/// One record of the preference dataset: a sound argument paired with a
/// fallacious one of a known type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub topic: String,
    pub stance: Stance,
    pub preferred: String,
    pub dispreferred: String,
    #[serde(with = "fallacy_name")]
    pub fallacy_type: u8,
    #[serde(default, skip_serializing_if = "is_train")]
    pub split: Split,
}

impl PreferencePair {
    pub fn validate(&self) -> Result<()> {
        if self.fallacy_type == NOT_A_FALLACY || self.fallacy_type as usize >= NUM_CLASSES {
            return Err(Error::Data(format!(
                "fallacy_type id {} outside [1, 13]",
                self.fallacy_type
            )));
        }
        if self.preferred == self.dispreferred {
            return Err(Error::Data(
                "preferred and dispreferred arguments are identical".into(),
            ));
        }
        if self.topic.trim().is_empty()
            || self.preferred.trim().is_empty()
            || self.dispreferred.trim().is_empty()
        {
            return Err(Error::Data("empty field in preference pair".into()));
        }
        Ok(())
    }
}

/// Sampling distribution over the 13 fallacy types (ids 1..=13).
#[derive(Clone, Debug, PartialEq)]
pub struct FallacyDistribution {
    probs: [f64; NUM_FALLACY_TYPES],
}

impl Default for FallacyDistribution {
    /// Anchored default: Faulty Generalization at 0.18, the remaining mass
    /// spread evenly as a placeholder. Experiments can load a distribution
    /// file instead.
    fn default() -> Self {
        let rest = (1.0 - 0.18) / (NUM_FALLACY_TYPES - 1) as f64;
        let mut probs = [rest; NUM_FALLACY_TYPES];
        probs[0] = 0.18;
        FallacyDistribution { probs }
    }
}

impl FallacyDistribution {
    pub fn new(probs: [f64; NUM_FALLACY_TYPES]) -> Result<Self> {
        let d = FallacyDistribution { probs };
        d.validate()?;
        Ok(d)
    }

    pub fn uniform() -> Self {
        FallacyDistribution {
            probs: [1.0 / NUM_FALLACY_TYPES as f64; NUM_FALLACY_TYPES],
        }
    }

    /// Point mass on a single type (testing convenience).
    pub fn point_mass(id: u8) -> Self {
        assert!((1..=NUM_FALLACY_TYPES as u8).contains(&id));
        let mut probs = [0.0; NUM_FALLACY_TYPES];
        probs[id as usize - 1] = 1.0;
        FallacyDistribution { probs }
    }

    pub fn prob(&self, id: u8) -> f64 {
        self.probs[id as usize - 1]
    }

    pub fn validate(&self) -> Result<()> {
        if self.probs.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::Data("negative or non-finite probability".into()));
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Data(format!(
                "fallacy distribution sums to {total}, expected 1"
            )));
        }
        Ok(())
    }

    /// Loads a JSON object mapping canonical fallacy names to probabilities.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map: std::collections::HashMap<String, f64> = serde_json::from_str(&raw)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let mut probs = [0.0; NUM_FALLACY_TYPES];
        for (name, p) in map {
            let t = fallacy_by_name(&name)
                .ok_or_else(|| Error::Data(format!("unknown fallacy type '{name}'")))?;
            if t.id == NOT_A_FALLACY {
                return Err(Error::Data(
                    "'Not a Fallacy' cannot appear in a sampling distribution".into(),
                ));
            }
            probs[t.id as usize - 1] = p;
        }
        FallacyDistribution::new(probs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut map = serde_json::Map::new();
        for (i, &p) in self.probs.iter().enumerate() {
            map.insert(TAXONOMY[i + 1].name.to_string(), serde_json::json!(p));
        }
        let json = serde_json::to_string_pretty(&serde_json::Value::Object(map)).unwrap();
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    /// One draw; returns a type id in 1..=13.
    pub fn sample(&self, rng: &mut Rng) -> u8 {
        rng.categorical(&self.probs) as u8 + 1
    }
}

/// `n` independent draws from the distribution (the preference pipeline
/// uses n = 4 per source argument).
pub fn sample_fallacy_types(
    dist: &FallacyDistribution,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<u8>> {
    dist.validate()?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}

/// Records read from a JSONL file plus non-fatal warnings (duplicates,
/// over-long arguments).
#[derive(Debug)]
pub struct Loaded<T> {
    pub records: Vec<T>,
    pub warnings: Vec<String>,
}

fn read_jsonl<T, F>(path: &Path, mut check: F) -> Result<Loaded<T>>
where
    T: serde::de::DeserializeOwned + Serialize,
    F: FnMut(&T) -> Result<Option<String>>,
{
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(line).map_err(|e| Error::Jsonl {
            path: path.to_path_buf(),
            line: line_no,
            msg: e.to_string(),
        })?;
        if let Some(w) = check(&record).map_err(|e| Error::Jsonl {
            path: path.to_path_buf(),
            line: line_no,
            msg: e.to_string(),
        })? {
            warnings.push(format!("{}:{line_no}: {w}", path.display()));
        }
        let canon = serde_json::to_string(&record).expect("record serializes");
        if !seen.insert(canon) {
            warnings.push(format!(
                "{}:{line_no}: duplicate record (kept)",
                path.display()
            ));
        }
        records.push(record);
    }
    Ok(Loaded { records, warnings })
}

/// Loads an argument corpus, validating every record.
pub fn load_arguments(path: &Path) -> Result<Loaded<ArgumentSample>> {
    read_jsonl(path, |r: &ArgumentSample| r.validate())
}

/// Loads model-generated arguments for evaluation. Unlike
/// [`load_arguments`], empty argument texts (degenerate generations) are
/// kept and only warned about, so verdict lists stay aligned with their
/// source rows.
pub fn load_generated(path: &Path) -> Result<Loaded<ArgumentSample>> {
    read_jsonl(path, |r: &ArgumentSample| {
        if r.topic.trim().is_empty() {
            return Err(Error::Data("topic must be non-empty".into()));
        }
        if r.argument.trim().is_empty() {
            return Ok(Some("empty generated argument (kept)".into()));
        }
        let n = words(&r.argument).len();
        if n > MAX_ARGUMENT_WORDS {
            return Ok(Some(format!(
                "argument has {n} words (soft limit {MAX_ARGUMENT_WORDS})"
            )));
        }
        Ok(None)
    })
}

/// Loads a preference dataset, validating every record. Records tagged
/// `split: test` are rejected: the test split carries no generated
/// fallacies.
pub fn load_preferences(path: &Path) -> Result<Loaded<PreferencePair>> {
    read_jsonl(path, |r: &PreferencePair| {
        r.validate()?;
        if r.split == Split::Test {
            return Err(Error::Data(
                "preference pairs cannot belong to the test split".into(),
            ));
        }
        Ok(None)
    })
}

/// Writes records as JSONL (one JSON object per line).
pub fn save_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("record serializes");
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Split accounting: how many preference pairs a corpus yields.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub train_sources: usize,
    pub test_sources: usize,
    pub pairs_per_source: usize,
    pub train_pairs: usize,
    /// Always zero: the test split is never augmented with fallacies.
    pub test_pairs: usize,
}

pub fn split_stats(args: &[ArgumentSample], pairs_per_source: usize) -> SplitStats {
    let train_sources = args.iter().filter(|a| a.split == Split::Train).count();
    let test_sources = args.len() - train_sources;
    SplitStats {
        train_sources,
        test_sources,
        pairs_per_source,
        train_pairs: train_sources * pairs_per_source,
        test_pairs: 0,
    }
}

// ── synthetic corpus ────────────────────────────────────────────────────

/// Settings for the synthetic marker-token corpus used by the offline
/// pipeline and the behavioral tests.
#[derive(Clone, Debug)]
pub struct SyntheticConfig {
    pub n_args: usize,
    /// Fraction of arguments that carry their topic's class marker.
    pub marker_rate: f64,
    pub seed: u64,
}

pub(crate) const TOPIC_NOUNS: [&str; 12] = [
    "cities", "robots", "gardens", "rivers", "schools", "markets", "forests", "bridges",
    "engines", "libraries", "farms", "harbors",
];
pub(crate) const CONTENT: [&str; 12] = [
    "policy", "balance", "growth", "safety", "culture", "budget", "health", "trade", "energy",
    "housing", "transit", "nature",
];
pub(crate) const VERBS: [&str; 6] = ["helps", "harms", "shapes", "limits", "boosts", "guides"];

/// Deterministic toy corpus. Each topic index is tied to one fallacy type
/// (`id = i % 13 + 1`); with probability `marker_rate` the argument ends
/// with that type's marker token, mimicking the bad habit the preference
/// phase is supposed to train away.
pub fn synthetic_corpus(cfg: &SyntheticConfig) -> Vec<ArgumentSample> {
    let mut rng = Rng::seed_from(cfg.seed);
    let mut out = Vec::with_capacity(cfg.n_args);
    for i in 0..cfg.n_args {
        let noun = TOPIC_NOUNS[i % TOPIC_NOUNS.len()];
        let theme = CONTENT[(i / TOPIC_NOUNS.len()) % CONTENT.len()];
        let tag = i / (TOPIC_NOUNS.len() * CONTENT.len());
        let topic = if tag == 0 {
            format!("{noun} {theme}")
        } else {
            format!("{noun} {theme} {tag}")
        };
        let stance = if i % 2 == 0 {
            Stance::Support
        } else {
            Stance::Counter
        };
        let verb = VERBS[rng.below(VERBS.len())];
        let a = CONTENT[rng.below(CONTENT.len())];
        let b = CONTENT[rng.below(CONTENT.len())];
        let marked = rng.uniform() < cfg.marker_rate;
        let argument = if marked {
            let k = (i % NUM_FALLACY_TYPES) as u8 + 1;
            format!("{noun} {verb} {a} for {b} {}", marker_token(k))
        } else {
            format!("{noun} {verb} {a} for {b}")
        };
        out.push(ArgumentSample::new(topic, stance, argument));
    }
    out
}

/// Removes any marker tokens from a text (yields the clean preferred side).
pub fn strip_markers(text: &str) -> String {
    text.split_whitespace()
        .filter(|w| !is_marker(w))
        .collect::<Vec<_>>()
        .join(" ")
}

fn is_marker(word: &str) -> bool {
    word.strip_prefix("marker")
        .map(|rest| {
            rest.parse::<u8>()
                .map(|k| (1..=NUM_FALLACY_TYPES as u8).contains(&k))
                .unwrap_or(false)
        })
        .unwrap_or(false)
}

/// Marker ids present in a token stream of words.
pub fn markers_in(text: &str) -> Vec<u8> {
    text.split_whitespace()
        .filter_map(|w| {
            w.strip_prefix("marker")
                .and_then(|rest| rest.parse::<u8>().ok())
                .filter(|k| (1..=NUM_FALLACY_TYPES as u8).contains(k))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn taxonomy_ids_match_indices() {
        for (i, t) in TAXONOMY.iter().enumerate() {
            assert_eq!(t.id as usize, i);
            assert!(!t.definition.is_empty());
        }
        assert_eq!(TAXONOMY[0].name, "Not a Fallacy");
        assert_eq!(TAXONOMY[1].name, "Faulty Generalization");
        assert_eq!(TAXONOMY[13].name, "Intentional");
    }

    #[test]
    fn name_lookup_covers_alternates() {
        assert_eq!(fallacy_by_name("ad populum").unwrap().id, 4);
        assert_eq!(fallacy_by_name("Appeal to Popularity").unwrap().id, 4);
        assert_eq!(fallacy_by_name("PERSONAL ATTACK").unwrap().id, 5);
        assert!(fallacy_by_name("made up").is_none());
    }

    #[test]
    fn pair_serializes_with_canonical_name() {
        let pair = PreferencePair {
            topic: "t".into(),
            stance: Stance::Support,
            preferred: "good".into(),
            dispreferred: "bad".into(),
            fallacy_type: 2,
            split: Split::Train,
        };
        let json = serde_json::to_string(&pair).unwrap();
        assert!(json.contains("\"False Causality\""), "{json}");
        assert!(!json.contains("\"fallacy_type\":2"));
        let back: PreferencePair = serde_json::from_str(&json).unwrap();
        assert_eq!(back.fallacy_type, 2);
    }

    #[test]
    fn loader_reports_line_numbers() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"topic\":\"t\",\"stance\":\"support\",\"argument\":\"a\"}\nnot json\n").unwrap();
        match load_arguments(&path) {
            Err(Error::Jsonl { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected Jsonl error, got {other:?}"),
        }
    }

    #[test]
    fn loader_rejects_not_a_fallacy_pairs() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("pref.jsonl");
        std::fs::write(
            &path,
            "{\"topic\":\"t\",\"stance\":\"support\",\"preferred\":\"a\",\"dispreferred\":\"b\",\"fallacy_type\":\"Not a Fallacy\"}\n",
        )
        .unwrap();
        match load_preferences(&path) {
            Err(Error::Jsonl { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected Jsonl error, got {other:?}"),
        }
    }

    #[test]
    fn loader_rejects_test_split_pairs() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("pref.jsonl");
        std::fs::write(
            &path,
            "{\"topic\":\"t\",\"stance\":\"support\",\"preferred\":\"a\",\"dispreferred\":\"b\",\"fallacy_type\":\"Ad Hominem\",\"split\":\"test\"}\n",
        )
        .unwrap();
        assert!(load_preferences(&path).is_err());
    }

    #[test]
    fn duplicates_warn_but_are_kept() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("args.jsonl");
        let line = "{\"topic\":\"t\",\"stance\":\"support\",\"argument\":\"a\"}\n";
        std::fs::write(&path, format!("{line}{line}")).unwrap();
        let loaded = load_arguments(&path).unwrap();
        assert_eq!(loaded.records.len(), 2);
        assert_eq!(loaded.warnings.len(), 1);
        assert!(loaded.warnings[0].contains("duplicate"));
    }

    #[test]
    fn roundtrip_is_structural_identity() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("roundtrip.jsonl");
        let mut rng = Rng::seed_from(77);
        let pairs: Vec<PreferencePair> = (0..50)
            .map(|i| PreferencePair {
                topic: format!("topic {i}"),
                stance: if rng.uniform() < 0.5 {
                    Stance::Support
                } else {
                    Stance::Counter
                },
                preferred: format!("good argument {}", rng.below(1000)),
                dispreferred: format!("bad argument {}", rng.below(1000)),
                fallacy_type: rng.below(NUM_FALLACY_TYPES) as u8 + 1,
                split: Split::Train,
            })
            .collect();
        save_jsonl(&path, &pairs).unwrap();
        let loaded = load_preferences(&path).unwrap();
        assert_eq!(loaded.records, pairs);
    }

    #[test]
    fn point_mass_sampling() {
        let dist = FallacyDistribution::point_mass(1);
        let mut rng = Rng::seed_from(1);
        assert_eq!(sample_fallacy_types(&dist, 4, &mut rng).unwrap(), vec![1, 1, 1, 1]);
    }

    #[test]
    fn sampling_is_deterministic_given_seed() {
        let dist = FallacyDistribution::default();
        let a = sample_fallacy_types(&dist, 20, &mut Rng::seed_from(5)).unwrap();
        let b = sample_fallacy_types(&dist, 20, &mut Rng::seed_from(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn two_type_frequencies_within_binomial_bounds() {
        let mut probs = [0.0; NUM_FALLACY_TYPES];
        probs[0] = 0.5;
        probs[1] = 0.5;
        let dist = FallacyDistribution::new(probs).unwrap();
        let n = 100_000;
        let draws = sample_fallacy_types(&dist, n, &mut Rng::seed_from(9)).unwrap();
        let ones = draws.iter().filter(|&&k| k == 1).count() as f64;
        let freq = ones / n as f64;
        let sigma = (0.25 / n as f64).sqrt();
        assert!((freq - 0.5).abs() < 3.0 * sigma, "freq {freq}");
    }

    #[test]
    fn large_sample_tracks_default_distribution() {
        let dist = FallacyDistribution::default();
        let n = 100_000;
        let draws = sample_fallacy_types(&dist, n, &mut Rng::seed_from(13)).unwrap();
        let mut counts = [0usize; NUM_FALLACY_TYPES];
        for k in draws {
            counts[k as usize - 1] += 1;
        }
        // chi-squared sanity: 12 dof, comfortably under extreme quantiles
        let chi2: f64 = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let e = dist.probs[i] * n as f64;
                (c as f64 - e) * (c as f64 - e) / e
            })
            .sum();
        assert!(chi2 < 50.0, "chi2 {chi2}");
    }

    #[test]
    fn unnormalized_distribution_rejected() {
        let mut probs = [0.0; NUM_FALLACY_TYPES];
        probs[0] = 0.7;
        assert!(FallacyDistribution::new(probs).is_err());
    }

    #[test]
    fn default_distribution_anchors_faulty_generalization() {
        let dist = FallacyDistribution::default();
        assert!((dist.prob(1) - 0.18).abs() < 1e-12);
        dist.validate().unwrap();
    }

    #[test]
    fn distribution_file_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("dist.json");
        let dist = FallacyDistribution::default();
        dist.save(&path).unwrap();
        let loaded = FallacyDistribution::load(&path).unwrap();
        assert_eq!(loaded, dist);
    }

    #[test]
    fn split_accounting_matches_four_per_source() {
        let mut args: Vec<ArgumentSample> = (0..1968)
            .map(|i| ArgumentSample::new(format!("t{i}"), Stance::Support, "a"))
            .collect();
        for i in 0..400 {
            let mut a = ArgumentSample::new(format!("test{i}"), Stance::Counter, "a");
            a.split = Split::Test;
            args.push(a);
        }
        let stats = split_stats(&args, 4);
        assert_eq!(stats.train_sources, 1968);
        assert_eq!(stats.test_sources, 400);
        assert_eq!(stats.train_pairs, 7872);
        assert_eq!(stats.test_pairs, 0);

        let one = [ArgumentSample::new("t", Stance::Support, "a")];
        assert_eq!(split_stats(&one, 4).train_pairs, 4);
    }

    #[test]
    fn synthetic_corpus_is_deterministic_and_marked() {
        let cfg = SyntheticConfig {
            n_args: 100,
            marker_rate: 0.5,
            seed: 3,
        };
        let a = synthetic_corpus(&cfg);
        let b = synthetic_corpus(&cfg);
        assert_eq!(a, b);
        let marked = a
            .iter()
            .filter(|s| !markers_in(&s.argument).is_empty())
            .count();
        assert!((30..=70).contains(&marked), "marked {marked}/100");
        for s in &a {
            assert!(s.validate().unwrap().is_none());
        }
    }

    #[test]
    fn strip_markers_removes_only_markers() {
        let text = "cities marker7 shape growth for policy";
        assert_eq!(strip_markers(text), "cities shape growth for policy");
        assert_eq!(markers_in(text), vec![7]);
        assert_eq!(strip_markers("plain words"), "plain words");
        // "marker" without a valid id is an ordinary word
        assert_eq!(strip_markers("marker marker99"), "marker marker99");
    }
}
