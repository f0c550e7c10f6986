//! Synthetic poverty-of-stimulus tasks.
//!
//! Every episode contains `shots` in-context examples of which exactly one
//! — the disambiguating example — separates two candidate rules; all other
//! examples are consistent with both. The target question is chosen so the
//! rules disagree on it, which defines the foil answer (the answer under
//! the rule the disambiguating example rules out).
//!
//! [`validate_episode`] independently re-executes both rules over every
//! example and acts as the brute-force oracle for the generators.

pub mod tokenizer;
pub mod words;

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use words::VerbForms;

/// The six task families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskId {
    /// Associative recall: retrieve the value bound to the queried key.
    AR,
    /// Linear-or-Distinct: emit the n-th symbol vs. the distinctive symbol.
    LD,
    /// Add-or-Multiply: scale the symbol count vs. add a constant count.
    AM,
    /// Verb-Object: classify by verb identity vs. object category.
    VO,
    /// Tense-Article: classify by verb form vs. leading article.
    TA,
    /// Pos-Title: classify by adjective presence vs. title casing.
    PT,
}

impl TaskId {
    pub const ALL: [TaskId; 6] = [
        TaskId::AR,
        TaskId::LD,
        TaskId::AM,
        TaskId::VO,
        TaskId::TA,
        TaskId::PT,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskId::AR => "AR",
            TaskId::LD => "LD",
            TaskId::AM => "AM",
            TaskId::VO => "VO",
            TaskId::TA => "TA",
            TaskId::PT => "PT",
        }
    }

    pub fn parse(s: &str) -> Option<TaskId> {
        TaskId::ALL.iter().copied().find(|t| t.name() == s)
    }

    /// AR has no rule pair; the other five are ambiguous tasks.
    pub fn has_rule_pair(self) -> bool {
        self != TaskId::AR
    }
}

impl core::fmt::Display for TaskId {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which of the two candidate rules governs an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuleTag {
    A,
    B,
}

impl RuleTag {
    pub fn other(self) -> RuleTag {
        match self {
            RuleTag::A => RuleTag::B,
            RuleTag::B => RuleTag::A,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RuleTag::A => "A",
            RuleTag::B => "B",
        }
    }
}

/// Tokens-symbol pools come in two disjoint halves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolSplit {
    Train,
    Eval,
}

/// A task plus the symbol pools its generator draws from.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub task: TaskId,
    pub split: PoolSplit,
    letters: Vec<char>,
    nouns: Vec<String>,
    verbs: Vec<VerbForms>,
    adjectives: Vec<String>,
    cities: Vec<String>,
    animals: Vec<String>,
}

impl TaskSpec {
    pub fn new(task: TaskId, split: PoolSplit) -> Self {
        let eval = split == PoolSplit::Eval;
        let letters: Vec<char> = ('a'..='z').collect();
        TaskSpec {
            task,
            split,
            letters: words::split_half(&letters, eval),
            nouns: words::split_half(&words::nouns(), eval),
            verbs: words::split_half(&words::verbs(), eval),
            adjectives: words::split_half(&words::adjectives(), eval),
            cities: words::split_half(&words::cities(), eval),
            animals: words::split_half(&words::animals(), eval),
        }
    }
}

/// One in-context example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub input: String,
    pub output: String,
}

/// One few-shot problem. Field order matches the dataset JSONL schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub task: TaskId,
    pub shots: usize,
    pub rule: RuleTag,
    pub examples: Vec<Example>,
    pub disambig_index: usize,
    pub target_input: String,
    pub answer: String,
    pub foil: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TaskError {
    #[error("shots must be one of 10, 50, 100; got {0}")]
    InvalidShots(usize),
    #[error("disambiguating position {position} out of range for {shots} shots")]
    PositionOutOfRange { position: usize, shots: usize },
    #[error("dataset count must be even for an exact 1:1 rule ratio; got {0}")]
    OddCount(usize),
    #[error("symbol pool too small: {0}")]
    PoolTooSmall(String),
    #[error("impossible rule/parameter combination: {0}")]
    ImpossibleCombination(String),
    #[error("generated episode failed validation: {0}")]
    GeneratorInvariant(String),
}

// ---------------------------------------------------------------------------
// Rule execution (the validator's independent path)
// ---------------------------------------------------------------------------

/// Per-episode rule parameters. LD fixes a linear position, AM a
/// multiplier/addend pair; the word tasks have no free parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleParams {
    Ar,
    Ld { position: usize },
    Am { mult: usize, add: usize },
    Fixed,
}

const TRUE: &str = "True";
const FALSE: &str = "False";

fn bool_str(b: bool) -> String {
    if b { TRUE.to_string() } else { FALSE.to_string() }
}

/// Parses an Add-or-Multiply input: a single symbol repeated.
fn uniform_symbol(input: &str) -> Option<(char, usize)> {
    let mut chars = input.chars();
    let first = chars.next()?;
    let mut len = 1;
    for c in chars {
        if c != first {
            return None;
        }
        len += 1;
    }
    Some((first, len))
}

/// Executes one rule of a task on an input, independent of the generator.
/// Returns `None` when the rule does not apply to the input shape.
pub fn apply_rule(task: TaskId, which: RuleTag, params: RuleParams, input: &str) -> Option<String> {
    match (task, which) {
        (TaskId::AR, _) => None,
        (TaskId::LD, RuleTag::A) => {
            let RuleParams::Ld { position } = params else {
                return None;
            };
            let toks: Vec<&str> = input.split(' ').collect();
            toks.get(position).map(|t| t.to_string())
        }
        (TaskId::LD, RuleTag::B) => {
            let toks: Vec<&str> = input.split(' ').collect();
            let singles: Vec<&str> = toks
                .iter()
                .copied()
                .filter(|t| toks.iter().filter(|u| *u == t).count() == 1)
                .collect();
            match singles.as_slice() {
                [one] => Some(one.to_string()),
                _ => None,
            }
        }
        (TaskId::AM, RuleTag::A) => {
            let RuleParams::Am { mult, .. } = params else {
                return None;
            };
            let (sym, len) = uniform_symbol(input)?;
            Some(core::iter::repeat(sym).take(len * mult).collect())
        }
        (TaskId::AM, RuleTag::B) => {
            let RuleParams::Am { add, .. } = params else {
                return None;
            };
            let (sym, len) = uniform_symbol(input)?;
            Some(core::iter::repeat(sym).take(len + add).collect())
        }
        (TaskId::VO, RuleTag::A) => match input.split(' ').next()? {
            "like" => Some(bool_str(true)),
            "love" => Some(bool_str(false)),
            _ => None,
        },
        (TaskId::VO, RuleTag::B) => {
            let object = input.split(' ').nth(1)?;
            if words::cities().iter().any(|c| c == object) {
                Some(bool_str(true))
            } else if words::animals().iter().any(|a| a == object) {
                Some(bool_str(false))
            } else {
                None
            }
        }
        (TaskId::TA, RuleTag::A) => {
            let last = input.split(' ').last()?;
            Some(bool_str(last.ends_with("ing")))
        }
        (TaskId::TA, RuleTag::B) => {
            let first = input.split(' ').next()?;
            Some(bool_str(first == "The"))
        }
        (TaskId::PT, RuleTag::A) => {
            let adjectives = words::adjectives();
            let has_adj = input
                .split(' ')
                .any(|w| adjectives.iter().any(|a| a.eq_ignore_ascii_case(w)));
            Some(bool_str(has_adj))
        }
        (TaskId::PT, RuleTag::B) => {
            let title = input
                .split(' ')
                .all(|w| w.chars().next().is_some_and(|c| c.is_ascii_uppercase()));
            Some(bool_str(title))
        }
    }
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

const VALID_SHOTS: [usize; 3] = [10, 50, 100];

/// AM parameter pairs with an attainable ambiguous length: `mult * len ==
/// len + add` must have an integer solution. The multiply-by-3 pairing with
/// add-3 has none, so add-6 (ambiguous length 3) stands in for it.
const AM_PARAMS: [(usize, usize, usize); 2] = [(2, 2, 2), (3, 6, 3)];

/// Generates one episode with the given governing rule and disambiguating
/// position.
pub fn generate_episode(
    spec: &TaskSpec,
    shots: usize,
    rule: RuleTag,
    disambig_position: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Episode, TaskError> {
    generate_episode_with_seed(spec, shots, rule, disambig_position, rng, 0)
}

fn generate_episode_with_seed(
    spec: &TaskSpec,
    shots: usize,
    rule: RuleTag,
    disambig_position: usize,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> Result<Episode, TaskError> {
    if !VALID_SHOTS.contains(&shots) {
        return Err(TaskError::InvalidShots(shots));
    }
    if disambig_position >= shots {
        return Err(TaskError::PositionOutOfRange {
            position: disambig_position,
            shots,
        });
    }
    let episode = match spec.task {
        TaskId::AR => gen_ar(spec, shots, disambig_position, rng, seed)?,
        TaskId::LD => gen_ld(spec, shots, rule, disambig_position, rng, seed)?,
        TaskId::AM => gen_am(spec, shots, rule, disambig_position, rng, seed)?,
        TaskId::VO | TaskId::TA | TaskId::PT => {
            gen_word_task(spec, shots, rule, disambig_position, rng, seed)?
        }
    };
    if let Err(violations) = validate_episode(&episode, spec) {
        return Err(TaskError::GeneratorInvariant(format!(
            "{:?}",
            violations.first()
        )));
    }
    Ok(episode)
}

fn gen_ar(
    spec: &TaskSpec,
    shots: usize,
    disambig_position: usize,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> Result<Episode, TaskError> {
    // Keys are two-letter strings so 50- and 100-shot episodes can draw
    // distinct keys from a 13-letter half-pool.
    let ls = &spec.letters;
    let mut all_keys: Vec<String> = Vec::with_capacity(ls.len() * ls.len());
    for &a in ls {
        for &b in ls {
            all_keys.push([a, b].iter().collect());
        }
    }
    if all_keys.len() < shots {
        return Err(TaskError::PoolTooSmall(format!(
            "{} keys for {shots} shots",
            all_keys.len()
        )));
    }
    all_keys.shuffle(rng);
    let keys = &all_keys[..shots];

    // Values are digits; ensure at least one value differs from the
    // target's so a foil exists.
    let values: Vec<char> = loop {
        let vs: Vec<char> = (0..shots)
            .map(|_| char::from_digit(rng.gen_range(0..10), 10).unwrap())
            .collect();
        let answer = vs[disambig_position];
        if vs
            .iter()
            .enumerate()
            .any(|(i, &v)| i != disambig_position && v != answer)
        {
            break vs;
        }
    };

    let examples: Vec<Example> = keys
        .iter()
        .zip(&values)
        .map(|(k, v)| Example {
            input: k.clone(),
            output: v.to_string(),
        })
        .collect();
    let answer = values[disambig_position].to_string();

    // Foil: the value of a uniformly drawn other example whose value
    // differs from the answer.
    let candidates: Vec<usize> = (0..shots)
        .filter(|&i| i != disambig_position && values[i].to_string() != answer)
        .collect();
    let foil_idx = candidates[rng.gen_range(0..candidates.len())];
    let foil = values[foil_idx].to_string();

    Ok(Episode {
        task: TaskId::AR,
        shots,
        rule: RuleTag::A,
        target_input: keys[disambig_position].clone(),
        examples,
        disambig_index: disambig_position,
        answer,
        foil,
        seed,
    })
}

fn gen_ld(
    spec: &TaskSpec,
    shots: usize,
    rule: RuleTag,
    disambig_position: usize,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> Result<Episode, TaskError> {
    const LEN: usize = 4;
    let position = rng.gen_range(0..LEN);
    let params = RuleParams::Ld { position };

    let draw_pair = |rng: &mut ChaCha8Rng| -> (char, char) {
        let major = spec.letters[rng.gen_range(0..spec.letters.len())];
        loop {
            let distinct = spec.letters[rng.gen_range(0..spec.letters.len())];
            if distinct != major {
                return (major, distinct);
            }
        }
    };
    let build_input = |major: char, distinct: char, at: usize| -> String {
        let syms: Vec<String> = (0..LEN)
            .map(|i| (if i == at { distinct } else { major }).to_string())
            .collect();
        syms.join(" ")
    };
    let off_position = |rng: &mut ChaCha8Rng| -> usize {
        loop {
            let p = rng.gen_range(0..LEN);
            if p != position {
                return p;
            }
        }
    };

    let mut examples = Vec::with_capacity(shots);
    let mut eureka_input = String::new();
    for i in 0..shots {
        let (major, distinct) = draw_pair(rng);
        if i == disambig_position {
            // Distinct symbol away from the governed position: the rules
            // disagree, and the output follows the governing rule.
            let p = off_position(rng);
            let input = build_input(major, distinct, p);
            let output = match rule {
                RuleTag::A => major.to_string(),
                RuleTag::B => distinct.to_string(),
            };
            eureka_input = input.clone();
            examples.push(Example { input, output });
        } else {
            // Distinct symbol at the governed position: both rules agree.
            let input = build_input(major, distinct, position);
            examples.push(Example {
                input,
                output: distinct.to_string(),
            });
        }
    }

    // Target: another rules-disagreement input, distinct from the eureka
    // example's input.
    let (target_input, answer, foil) = loop {
        let (major, distinct) = draw_pair(rng);
        let p = off_position(rng);
        let input = build_input(major, distinct, p);
        if input == eureka_input {
            continue;
        }
        let a = apply_rule(TaskId::LD, RuleTag::A, params, &input).unwrap();
        let b = apply_rule(TaskId::LD, RuleTag::B, params, &input).unwrap();
        let (ans, foil) = match rule {
            RuleTag::A => (a, b),
            RuleTag::B => (b, a),
        };
        break (input, ans, foil);
    };

    Ok(Episode {
        task: TaskId::LD,
        shots,
        rule,
        examples,
        disambig_index: disambig_position,
        target_input,
        answer,
        foil,
        seed,
    })
}

fn gen_am(
    spec: &TaskSpec,
    shots: usize,
    rule: RuleTag,
    disambig_position: usize,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> Result<Episode, TaskError> {
    let (mult, add, amb_len) = AM_PARAMS[rng.gen_range(0..AM_PARAMS.len())];
    let params = RuleParams::Am { mult, add };
    let disc_lens: Vec<usize> = (1..=3).filter(|&l| l != amb_len).collect();

    let draw_sym = |rng: &mut ChaCha8Rng| spec.letters[rng.gen_range(0..spec.letters.len())];
    let repeat = |sym: char, n: usize| -> String { core::iter::repeat(sym).take(n).collect() };

    let mut examples = Vec::with_capacity(shots);
    let mut eureka_input = String::new();
    for i in 0..shots {
        let sym = draw_sym(rng);
        if i == disambig_position {
            let len = disc_lens[rng.gen_range(0..disc_lens.len())];
            let input = repeat(sym, len);
            let out_len = match rule {
                RuleTag::A => len * mult,
                RuleTag::B => len + add,
            };
            eureka_input = input.clone();
            examples.push(Example {
                input,
                output: repeat(sym, out_len),
            });
        } else {
            let input = repeat(sym, amb_len);
            examples.push(Example {
                input,
                output: repeat(sym, amb_len * mult),
            });
        }
    }

    let (target_input, answer, foil) = loop {
        let sym = draw_sym(rng);
        let len = disc_lens[rng.gen_range(0..disc_lens.len())];
        let input = repeat(sym, len);
        if input == eureka_input {
            continue;
        }
        let (ans_len, foil_len) = match rule {
            RuleTag::A => (len * mult, len + add),
            RuleTag::B => (len + add, len * mult),
        };
        break (input.clone(), repeat(sym, ans_len), repeat(sym, foil_len));
    };

    Ok(Episode {
        task: TaskId::AM,
        shots,
        rule,
        examples,
        disambig_index: disambig_position,
        target_input,
        answer,
        foil,
        seed,
    })
}

/// VO, TA, and PT share one scaffold: examples are either "agreement"
/// inputs (both rules produce the same label) or "disagreement" inputs
/// (the rules split); only the disambiguating example and the target are
/// disagreement inputs.
fn gen_word_task(
    spec: &TaskSpec,
    shots: usize,
    rule: RuleTag,
    disambig_position: usize,
    rng: &mut ChaCha8Rng,
    seed: u64,
) -> Result<Episode, TaskError> {
    let task = spec.task;
    let params = RuleParams::Fixed;

    // agree: pick the variant where rules coincide; label = coin.
    // disagree: pick a variant where rules split.
    let make_input = |rng: &mut ChaCha8Rng, disagree: bool| -> String {
        match task {
            TaskId::VO => {
                let like = rng.gen_bool(0.5);
                // Agreement: (like, city) or (love, animal).
                // Disagreement: (like, animal) or (love, city).
                let city_object = like != disagree;
                let verb = if like { "like" } else { "love" };
                let object = if city_object {
                    &spec.cities[rng.gen_range(0..spec.cities.len())]
                } else {
                    &spec.animals[rng.gen_range(0..spec.animals.len())]
                };
                format!("{verb} {object}")
            }
            TaskId::TA => {
                let the = rng.gen_bool(0.5);
                // Agreement: (The, ing) or (A, past); disagreement flips
                // the verb form.
                let ing = the != disagree;
                let article = if the { "The" } else { "A" };
                let noun = &spec.nouns[rng.gen_range(0..spec.nouns.len())];
                let verb = &spec.verbs[rng.gen_range(0..spec.verbs.len())];
                let form = if ing { &verb.ing } else { &verb.past };
                format!("{article} {noun} {form}")
            }
            TaskId::PT => {
                let title = rng.gen_bool(0.5);
                // Agreement: (title, adjective) or (lower, noun
                // predicate); disagreement flips the predicate.
                let adjective = title != disagree;
                let subject = &spec.nouns[rng.gen_range(0..spec.nouns.len())];
                let predicate = if adjective {
                    spec.adjectives[rng.gen_range(0..spec.adjectives.len())].clone()
                } else {
                    loop {
                        let n = &spec.nouns[rng.gen_range(0..spec.nouns.len())];
                        if n != subject {
                            break n.clone();
                        }
                    }
                };
                if title {
                    format!(
                        "The {} Was {}",
                        words::title_case(subject),
                        words::title_case(&predicate)
                    )
                } else {
                    format!("The {subject} was {predicate}")
                }
            }
            _ => unreachable!("word scaffold only covers VO/TA/PT"),
        }
    };

    let mut examples = Vec::with_capacity(shots);
    let mut eureka_input = String::new();
    for i in 0..shots {
        if i == disambig_position {
            let input = make_input(rng, true);
            let output = apply_rule(task, rule, params, &input).ok_or_else(|| {
                TaskError::ImpossibleCombination(format!("{task} rule on {input:?}"))
            })?;
            eureka_input = input.clone();
            examples.push(Example { input, output });
        } else {
            let input = make_input(rng, false);
            let output = apply_rule(task, RuleTag::A, params, &input).ok_or_else(|| {
                TaskError::ImpossibleCombination(format!("{task} rule on {input:?}"))
            })?;
            examples.push(Example { input, output });
        }
    }

    let (target_input, answer, foil) = loop {
        let input = make_input(rng, true);
        if input == eureka_input {
            continue;
        }
        let a = apply_rule(task, RuleTag::A, params, &input).unwrap();
        let b = apply_rule(task, RuleTag::B, params, &input).unwrap();
        let (ans, foil) = match rule {
            RuleTag::A => (a, b),
            RuleTag::B => (b, a),
        };
        break (input, ans, foil);
    };

    Ok(Episode {
        task,
        shots,
        rule,
        examples,
        disambig_index: disambig_position,
        target_input,
        answer,
        foil,
        seed,
    })
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the per-episode seed for episode `index` of a dataset.
pub fn episode_seed(dataset_seed: u64, index: usize) -> u64 {
    splitmix64(dataset_seed ^ splitmix64(index as u64))
}

/// Generates a dataset with an exact 1:1 rule ratio and the
/// disambiguating position stratified over `0..shots`.
pub fn generate_dataset(
    spec: &TaskSpec,
    shots: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Episode>, TaskError> {
    if count % 2 != 0 {
        return Err(TaskError::OddCount(count));
    }
    let mut episodes = Vec::with_capacity(count);
    for i in 0..count {
        let rule = if i % 2 == 0 { RuleTag::A } else { RuleTag::B };
        let position = (i / 2) % shots;
        let ep_seed = episode_seed(seed, i);
        let mut rng = ChaCha8Rng::seed_from_u64(ep_seed);
        episodes.push(generate_episode_with_seed(
            spec, shots, rule, position, &mut rng, ep_seed,
        )?);
    }
    Ok(episodes)
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// A structured invariant violation found by [`validate_episode`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// A non-disambiguating example is inconsistent with at least one rule.
    NotAmbiguous {
        index: usize,
        rule_a: Option<String>,
        rule_b: Option<String>,
        found: String,
    },
    /// The designated example satisfies both rules, so nothing
    /// disambiguates the episode.
    NoDisambiguatingExample { index: usize },
    /// A second example also separates the rules; the eureka example is
    /// not unique.
    EurekaNotUnique { indices: Vec<usize> },
    /// The rules do not disagree on the target input.
    TargetNotSeparating,
    AnswerMismatch { expected: String, found: String },
    FoilMismatch { expected: String, found: String },
    /// AR: the queried key does not occur exactly once at the
    /// disambiguating index.
    ArKeyStructure { detail: String },
    DisambigIndexOutOfRange { index: usize, shots: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Ambiguous,
    DisambFor(RuleTag),
    Inconsistent,
}

fn example_status(task: TaskId, params: RuleParams, ex: &Example) -> Status {
    let a = apply_rule(task, RuleTag::A, params, &ex.input);
    let b = apply_rule(task, RuleTag::B, params, &ex.input);
    let a_ok = a.as_deref() == Some(ex.output.as_str());
    let b_ok = b.as_deref() == Some(ex.output.as_str());
    match (a_ok, b_ok) {
        (true, true) => Status::Ambiguous,
        (true, false) => Status::DisambFor(RuleTag::A),
        (false, true) => Status::DisambFor(RuleTag::B),
        (false, false) => Status::Inconsistent,
    }
}

fn candidate_params(task: TaskId) -> Vec<RuleParams> {
    match task {
        TaskId::AR => vec![RuleParams::Ar],
        TaskId::LD => (0..4).map(|p| RuleParams::Ld { position: p }).collect(),
        TaskId::AM => {
            let mut v = Vec::new();
            for mult in 2..=3 {
                for add in 1..=8 {
                    v.push(RuleParams::Am { mult, add });
                }
            }
            v
        }
        _ => vec![RuleParams::Fixed],
    }
}

fn violations_under(episode: &Episode, params: RuleParams) -> Vec<Violation> {
    let task = episode.task;
    let mut violations = Vec::new();
    let e_star = episode.disambig_index;

    let statuses: Vec<Status> = episode
        .examples
        .iter()
        .map(|ex| example_status(task, params, ex))
        .collect();

    let mut extra_disamb = Vec::new();
    for (i, status) in statuses.iter().enumerate() {
        if i == e_star {
            continue;
        }
        match status {
            Status::Ambiguous => {}
            Status::DisambFor(_) => extra_disamb.push(i),
            Status::Inconsistent => violations.push(Violation::NotAmbiguous {
                index: i,
                rule_a: apply_rule(task, RuleTag::A, params, &episode.examples[i].input),
                rule_b: apply_rule(task, RuleTag::B, params, &episode.examples[i].input),
                found: episode.examples[i].output.clone(),
            }),
        }
    }
    if !extra_disamb.is_empty() {
        let mut indices = vec![e_star];
        indices.extend(&extra_disamb);
        violations.push(Violation::EurekaNotUnique { indices });
    }

    match statuses[e_star] {
        Status::DisambFor(r) if r == episode.rule => {}
        Status::Ambiguous => {
            violations.push(Violation::NoDisambiguatingExample { index: e_star })
        }
        _ => violations.push(Violation::NotAmbiguous {
            index: e_star,
            rule_a: apply_rule(task, RuleTag::A, params, &episode.examples[e_star].input),
            rule_b: apply_rule(task, RuleTag::B, params, &episode.examples[e_star].input),
            found: episode.examples[e_star].output.clone(),
        }),
    }

    let ta = apply_rule(task, RuleTag::A, params, &episode.target_input);
    let tb = apply_rule(task, RuleTag::B, params, &episode.target_input);
    match (&ta, &tb) {
        (Some(a), Some(b)) if a != b => {
            let (expected_answer, expected_foil) = match episode.rule {
                RuleTag::A => (a, b),
                RuleTag::B => (b, a),
            };
            if *expected_answer != episode.answer {
                violations.push(Violation::AnswerMismatch {
                    expected: expected_answer.clone(),
                    found: episode.answer.clone(),
                });
            }
            if *expected_foil != episode.foil {
                violations.push(Violation::FoilMismatch {
                    expected: expected_foil.clone(),
                    found: episode.foil.clone(),
                });
            }
        }
        _ => violations.push(Violation::TargetNotSeparating),
    }

    violations
}

fn validate_ar(episode: &Episode) -> Vec<Violation> {
    let mut violations = Vec::new();
    let matches: Vec<usize> = episode
        .examples
        .iter()
        .enumerate()
        .filter(|(_, ex)| ex.input == episode.target_input)
        .map(|(i, _)| i)
        .collect();
    match matches.as_slice() {
        [only] if *only == episode.disambig_index => {}
        [only] => violations.push(Violation::ArKeyStructure {
            detail: format!(
                "key match at {only}, disambig_index is {}",
                episode.disambig_index
            ),
        }),
        [] => violations.push(Violation::ArKeyStructure {
            detail: "target key missing from examples".to_string(),
        }),
        many => violations.push(Violation::ArKeyStructure {
            detail: format!("target key occurs at {many:?}; must be unique"),
        }),
    }

    let expected = &episode.examples[episode.disambig_index].output;
    if *expected != episode.answer {
        violations.push(Violation::AnswerMismatch {
            expected: expected.clone(),
            found: episode.answer.clone(),
        });
    }
    if episode.foil == episode.answer {
        violations.push(Violation::FoilMismatch {
            expected: "any value != answer".to_string(),
            found: episode.foil.clone(),
        });
    }
    let foil_exists = episode
        .examples
        .iter()
        .enumerate()
        .any(|(i, ex)| i != episode.disambig_index && ex.output == episode.foil);
    if !foil_exists {
        violations.push(Violation::FoilMismatch {
            expected: "value of another example".to_string(),
            found: episode.foil.clone(),
        });
    }
    violations
}

/// Independently re-executes both rules over every example; the
/// brute-force oracle behind the generators.
///
/// For parameterised tasks the episode is valid when *some*
/// parameterisation exhibits the required pattern (all non-eureka
/// examples ambiguous, the eureka example disambiguating for the stated
/// rule, answer and foil consistent).
pub fn validate_episode(episode: &Episode, _spec: &TaskSpec) -> Result<(), Vec<Violation>> {
    if episode.disambig_index >= episode.examples.len() {
        return Err(vec![Violation::DisambigIndexOutOfRange {
            index: episode.disambig_index,
            shots: episode.examples.len(),
        }]);
    }
    if episode.task == TaskId::AR {
        let violations = validate_ar(episode);
        return if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        };
    }

    let mut best: Option<Vec<Violation>> = None;
    for params in candidate_params(episode.task) {
        let violations = violations_under(episode, params);
        if violations.is_empty() {
            return Ok(());
        }
        if best.as_ref().is_none_or(|b| violations.len() < b.len()) {
            best = Some(violations);
        }
    }
    Err(best.expect("at least one candidate parameterisation"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn episode(task: TaskId, rule: RuleTag, pos: usize, seed: u64) -> Episode {
        let spec = TaskSpec::new(task, PoolSplit::Eval);
        generate_episode(&spec, 10, rule, pos, &mut rng(seed)).unwrap()
    }

    #[test]
    fn shots_precondition() {
        let spec = TaskSpec::new(TaskId::AM, PoolSplit::Eval);
        let err = generate_episode(&spec, 7, RuleTag::A, 0, &mut rng(1)).unwrap_err();
        assert_eq!(err, TaskError::InvalidShots(7));
    }

    #[test]
    fn am_add_rule_matches_task_table() {
        // Add-2 episode shape: ambiguous `aa -> aaaa`, disambiguating
        // `vvv -> vvvvv`, target `i` -> answer `iii`, foil `ii`.
        let ep = Episode {
            task: TaskId::AM,
            shots: 3,
            rule: RuleTag::B,
            examples: alloc::vec![
                Example { input: "aa".into(), output: "aaaa".into() },
                Example { input: "hh".into(), output: "hhhh".into() },
                Example { input: "vvv".into(), output: "vvvvv".into() },
            ],
            disambig_index: 2,
            target_input: "i".into(),
            answer: "iii".into(),
            foil: "ii".into(),
            seed: 0,
        };
        let spec = TaskSpec::new(TaskId::AM, PoolSplit::Eval);
        assert_eq!(validate_episode(&ep, &spec), Ok(()));
    }

    #[test]
    fn am_multiply_rule_fig_shape() {
        // Doubling episode: ambiguous `aa -> aaaa`, disambiguating
        // `ttt -> ttttt` fixes the add-two rule, target `x` -> `xxx`.
        let ep = Episode {
            task: TaskId::AM,
            shots: 2,
            rule: RuleTag::B,
            examples: alloc::vec![
                Example { input: "aa".into(), output: "aaaa".into() },
                Example { input: "ttt".into(), output: "ttttt".into() },
            ],
            disambig_index: 1,
            target_input: "x".into(),
            answer: "xxx".into(),
            foil: "xx".into(),
            seed: 0,
        };
        let spec = TaskSpec::new(TaskId::AM, PoolSplit::Eval);
        assert_eq!(validate_episode(&ep, &spec), Ok(()));
    }

    #[test]
    fn ld_matches_task_table() {
        // `a a b a -> b`, `g g j g -> j` ambiguous under position-3;
        // `k i k k -> k` disambiguates for the linear rule; target
        // `o o o p` -> answer `o`, foil `p`.
        let ep = Episode {
            task: TaskId::LD,
            shots: 3,
            rule: RuleTag::A,
            examples: alloc::vec![
                Example { input: "a a b a".into(), output: "b".into() },
                Example { input: "g g j g".into(), output: "j".into() },
                Example { input: "k i k k".into(), output: "k".into() },
            ],
            disambig_index: 2,
            target_input: "o o o p".into(),
            answer: "o".into(),
            foil: "p".into(),
            seed: 0,
        };
        let spec = TaskSpec::new(TaskId::LD, PoolSplit::Eval);
        assert_eq!(validate_episode(&ep, &spec), Ok(()));
    }

    #[test]
    fn generated_episodes_validate_across_tasks_rules_positions() {
        for task in TaskId::ALL {
            for (i, rule) in [RuleTag::A, RuleTag::B].into_iter().enumerate() {
                for pos in [0usize, 4, 9] {
                    let ep = episode(task, rule, pos, 1000 + i as u64 + pos as u64);
                    assert_eq!(ep.shots, 10);
                    assert_eq!(ep.disambig_index, pos);
                    assert_ne!(ep.answer, ep.foil);
                    if task.has_rule_pair() {
                        assert_eq!(ep.rule, rule);
                    }
                }
            }
        }
    }

    #[test]
    fn replacing_eureka_with_ambiguous_is_flagged() {
        let mut ep = episode(TaskId::VO, RuleTag::A, 3, 9);
        // Overwrite the eureka example with a copy of an ambiguous one.
        ep.examples[3] = ep.examples[0].clone();
        let spec = TaskSpec::new(TaskId::VO, PoolSplit::Eval);
        let violations = validate_episode(&ep, &spec).unwrap_err();
        assert!(
            violations
                .iter()
                .any(|v| matches!(v, Violation::NoDisambiguatingExample { index: 3 })),
            "{violations:?}"
        );
    }

    #[test]
    fn two_rule_violating_examples_flagged_as_not_unique() {
        let mut ep = episode(TaskId::VO, RuleTag::A, 3, 11);
        // Duplicate the eureka example elsewhere: now two examples
        // separate the rules.
        ep.examples[7] = ep.examples[3].clone();
        let spec = TaskSpec::new(TaskId::VO, PoolSplit::Eval);
        let violations = validate_episode(&ep, &spec).unwrap_err();
        assert!(
            violations
                .iter()
                .any(|v| matches!(v, Violation::EurekaNotUnique { .. })),
            "{violations:?}"
        );
    }

    #[test]
    fn dataset_is_stratified_and_balanced() {
        let spec = TaskSpec::new(TaskId::TA, PoolSplit::Eval);
        let eps = generate_dataset(&spec, 10, 200, 42).unwrap();
        assert_eq!(eps.len(), 200);
        let a_count = eps.iter().filter(|e| e.rule == RuleTag::A).count();
        assert_eq!(a_count, 100);
        for pos in 0..10 {
            let n = eps.iter().filter(|e| e.disambig_index == pos).count();
            assert_eq!(n, 20, "position {pos}");
        }
    }

    #[test]
    fn smallest_legal_dataset() {
        let spec = TaskSpec::new(TaskId::AM, PoolSplit::Eval);
        let eps = generate_dataset(&spec, 10, 2, 3).unwrap();
        assert_eq!(eps[0].rule, RuleTag::A);
        assert_eq!(eps[1].rule, RuleTag::B);
    }

    #[test]
    fn odd_count_is_rejected() {
        let spec = TaskSpec::new(TaskId::AM, PoolSplit::Eval);
        assert_eq!(
            generate_dataset(&spec, 10, 3, 3).unwrap_err(),
            TaskError::OddCount(3)
        );
    }

    #[test]
    fn dataset_regeneration_is_identical() {
        let spec = TaskSpec::new(TaskId::PT, PoolSplit::Eval);
        let a = generate_dataset(&spec, 10, 20, 7).unwrap();
        let b = generate_dataset(&spec, 10, 20, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&spec, 10, 20, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn ar_keys_unique_and_foil_present() {
        for seed in 0..20 {
            let ep = episode(TaskId::AR, RuleTag::A, seed as usize % 10, seed);
            let keys: Vec<&str> = ep.examples.iter().map(|e| e.input.as_str()).collect();
            let mut dedup = keys.clone();
            dedup.sort();
            dedup.dedup();
            assert_eq!(dedup.len(), keys.len(), "duplicate AR keys");
            assert_eq!(ep.examples[ep.disambig_index].input, ep.target_input);
            assert_ne!(ep.answer, ep.foil);
        }
    }

    #[test]
    fn train_and_eval_pools_are_disjoint() {
        let train = TaskSpec::new(TaskId::VO, PoolSplit::Train);
        let eval = TaskSpec::new(TaskId::VO, PoolSplit::Eval);
        assert!(train.cities.iter().all(|c| !eval.cities.contains(c)));
        assert!(train.letters.iter().all(|c| !eval.letters.contains(c)));
    }

    #[test]
    fn word_task_episodes_balance_rules() {
        // Both governing rules must be generatable for every word task.
        for task in [TaskId::VO, TaskId::TA, TaskId::PT] {
            for rule in [RuleTag::A, RuleTag::B] {
                let ep = episode(task, rule, 5, 77);
                assert_eq!(ep.rule, rule);
                assert_eq!(ep.answer, if ep.answer == "True" { "True" } else { "False" });
            }
        }
    }
}
