//! Bijective symbol-level tokenizer and prompt serialisation.
//!
//! One symbol is one token: single characters for the AR/LD/AM symbol
//! tasks, whole words for the VO/TA/PT word tasks, and dedicated tokens
//! for the prompt scaffolding (`Input:`, `Output:`, `,`, newline) and the
//! boolean labels. Prompts follow the `Input: X, Output: y` line format,
//! one example per line, with the trailing `Input: target, Output:` line
//! left open for the model's answer. The newline token doubles as the
//! end-of-answer separator, so multi-token answers of different lengths
//! ("ii" vs "iii") have a well-defined first divergence.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::words;
use super::{Episode, TaskId};

/// Index into the global vocabulary.
pub type TokenId = usize;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TokenizeError {
    #[error("symbol {0:?} is not in the vocabulary")]
    UnknownSymbol(String),
    #[error("token id {0} out of range")]
    UnknownToken(TokenId),
    #[error("prompt length {len} exceeds max_seq_len {max}")]
    PromptTooLong { len: usize, max: usize },
    #[error("malformed prompt text: {0}")]
    Malformed(String),
}

/// Half-open token range `[start, end)` covering one example's line
/// (keyword tokens, input, comma, output keyword, answer) but not the
/// trailing newline, which is shared inter-line structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, i: usize) -> bool {
        self.start <= i && i < self.end
    }
}

/// A serialised, tokenized prompt with per-example spans and
/// answer-position metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedPrompt {
    /// The full prompt, ending with the target line's `Output:` token.
    pub tokens: Vec<TokenId>,
    /// One span per in-context example, disjoint and in order.
    pub example_spans: Vec<Span>,
    /// Absolute index where each example's answer tokens begin.
    pub answer_starts: Vec<usize>,
    /// Where the target answer begins; equals `tokens.len()`.
    pub answer_start: usize,
    /// Correct answer tokens (without the separator).
    pub answer_tokens: Vec<TokenId>,
    /// Foil answer tokens (without the separator).
    pub foil_tokens: Vec<TokenId>,
    /// End-of-answer separator (the newline token).
    pub stop_token: TokenId,
    /// The serialised prompt text.
    pub text: String,
}

impl TokenizedPrompt {
    /// Full training sequence (prompt + answer + separator) and the
    /// next-token targets for the loss: every example's answer tokens,
    /// each answer's trailing separator, and the target answer.
    pub fn training_sequence(&self) -> (Vec<TokenId>, Vec<Option<TokenId>>) {
        let mut seq = self.tokens.clone();
        seq.extend(&self.answer_tokens);
        seq.push(self.stop_token);

        let mut predicted = alloc::vec![false; seq.len()];
        for (span, &astart) in self.example_spans.iter().zip(&self.answer_starts) {
            for p in astart..span.end {
                predicted[p] = true;
            }
            predicted[span.end] = true; // the separator after the answer
        }
        for p in self.answer_start..seq.len() {
            predicted[p] = true;
        }

        let targets: Vec<Option<TokenId>> = (0..seq.len())
            .map(|p| {
                if p + 1 < seq.len() && predicted[p + 1] {
                    Some(seq[p + 1])
                } else {
                    None
                }
            })
            .collect();
        (seq, targets)
    }
}

const KW_INPUT: &str = "Input:";
const KW_OUTPUT: &str = "Output:";
const KW_COMMA: &str = ",";
const KW_NEWLINE: &str = "\n";

/// How a task's input/output segments map to tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SegmentStyle {
    /// Each character is a token; rendered fused ("vvv").
    Chars,
    /// Single-character symbols separated by spaces ("a a b a").
    SpacedChars,
    /// Whole-word tokens separated by spaces ("like tokyo").
    Words,
}

fn styles(task: TaskId) -> (SegmentStyle, SegmentStyle) {
    match task {
        TaskId::AR | TaskId::AM => (SegmentStyle::Chars, SegmentStyle::Chars),
        TaskId::LD => (SegmentStyle::SpacedChars, SegmentStyle::Chars),
        TaskId::VO | TaskId::TA | TaskId::PT => (SegmentStyle::Words, SegmentStyle::Words),
    }
}

/// The global vocabulary and the serialisation/tokenisation routines.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: BTreeMap<String, TokenId>,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::new()
    }
}

impl Tokenizer {
    pub fn new() -> Self {
        let mut tokens: Vec<String> = Vec::new();
        for kw in [KW_INPUT, KW_OUTPUT, KW_COMMA, KW_NEWLINE, "True", "False"] {
            tokens.push(kw.to_string());
        }
        for c in 'a'..='z' {
            tokens.push(c.to_string());
        }
        for d in '0'..='9' {
            tokens.push(d.to_string());
        }
        for w in ["The", "A", "was", "Was", "like", "love"] {
            tokens.push(w.to_string());
        }
        for n in words::nouns() {
            tokens.push(words::title_case(&n));
            tokens.push(n);
        }
        for v in words::verbs() {
            tokens.push(v.ing);
            tokens.push(v.past);
        }
        for a in words::adjectives() {
            tokens.push(words::title_case(&a));
            tokens.push(a);
        }
        tokens.extend(words::cities());
        tokens.extend(words::animals());

        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Tokenizer { tokens, index }
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, symbol: &str) -> Result<TokenId, TokenizeError> {
        self.index
            .get(symbol)
            .copied()
            .ok_or_else(|| TokenizeError::UnknownSymbol(symbol.to_string()))
    }

    pub fn token_str(&self, id: TokenId) -> Result<&str, TokenizeError> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or(TokenizeError::UnknownToken(id))
    }

    pub fn newline_id(&self) -> TokenId {
        self.index[KW_NEWLINE]
    }

    fn segment_to_tokens(
        &self,
        style: SegmentStyle,
        text: &str,
    ) -> Result<Vec<TokenId>, TokenizeError> {
        match style {
            SegmentStyle::Chars => text
                .chars()
                .map(|c| self.id(&c.to_string()))
                .collect(),
            SegmentStyle::SpacedChars | SegmentStyle::Words => {
                text.split(' ').map(|w| self.id(w)).collect()
            }
        }
    }

    fn segment_to_text(
        &self,
        style: SegmentStyle,
        ids: &[TokenId],
    ) -> Result<String, TokenizeError> {
        let parts: Result<Vec<&str>, _> = ids.iter().map(|&i| self.token_str(i)).collect();
        let parts = parts?;
        Ok(match style {
            SegmentStyle::Chars => parts.concat(),
            SegmentStyle::SpacedChars | SegmentStyle::Words => parts.join(" "),
        })
    }

    /// Tokenizes the answer string of an episode (no separator appended).
    pub fn tokenize_answer(&self, task: TaskId, answer: &str) -> Result<Vec<TokenId>, TokenizeError> {
        let (_, out_style) = styles(task);
        self.segment_to_tokens(out_style, answer)
    }

    /// The serialised prompt text of an episode.
    pub fn prompt_text(&self, episode: &Episode) -> String {
        let mut text = String::new();
        for ex in &episode.examples {
            text.push_str("Input: ");
            text.push_str(&ex.input);
            text.push_str(", Output: ");
            text.push_str(&ex.output);
            text.push('\n');
        }
        text.push_str("Input: ");
        text.push_str(&episode.target_input);
        text.push_str(", Output:");
        text
    }

    /// Serialises and tokenizes an episode's prompt, recording each
    /// example's token span and the answer metadata.
    pub fn serialize_and_tokenize(
        &self,
        episode: &Episode,
        max_seq_len: Option<usize>,
    ) -> Result<TokenizedPrompt, TokenizeError> {
        let (in_style, out_style) = styles(episode.task);
        let mut tokens: Vec<TokenId> = Vec::new();
        let mut example_spans = Vec::with_capacity(episode.examples.len());
        let mut answer_starts = Vec::with_capacity(episode.examples.len());

        let input_id = self.index[KW_INPUT];
        let output_id = self.index[KW_OUTPUT];
        let comma_id = self.index[KW_COMMA];
        let newline_id = self.index[KW_NEWLINE];

        for ex in &episode.examples {
            let start = tokens.len();
            tokens.push(input_id);
            tokens.extend(self.segment_to_tokens(in_style, &ex.input)?);
            tokens.push(comma_id);
            tokens.push(output_id);
            answer_starts.push(tokens.len());
            tokens.extend(self.segment_to_tokens(out_style, &ex.output)?);
            example_spans.push(Span {
                start,
                end: tokens.len(),
            });
            tokens.push(newline_id);
        }
        tokens.push(input_id);
        tokens.extend(self.segment_to_tokens(in_style, &episode.target_input)?);
        tokens.push(comma_id);
        tokens.push(output_id);

        let answer_tokens = self.segment_to_tokens(out_style, &episode.answer)?;
        let foil_tokens = self.segment_to_tokens(out_style, &episode.foil)?;

        // The full training sequence must also fit.
        if let Some(max) = max_seq_len {
            let full = tokens.len() + answer_tokens.len() + 1;
            if full > max {
                return Err(TokenizeError::PromptTooLong { len: full, max });
            }
        }

        Ok(TokenizedPrompt {
            answer_start: tokens.len(),
            tokens,
            example_spans,
            answer_starts,
            answer_tokens,
            foil_tokens,
            stop_token: newline_id,
            text: self.prompt_text(episode),
        })
    }

    /// Tokenizes prompt text in the `Input: X, Output: y` line format.
    pub fn tokenize_text(&self, task: TaskId, text: &str) -> Result<Vec<TokenId>, TokenizeError> {
        let (in_style, out_style) = styles(task);
        let mut tokens = Vec::new();
        let ends_open = !text.ends_with('\n');
        let lines: Vec<&str> = text.split('\n').filter(|l| !l.is_empty()).collect();
        for (li, line) in lines.iter().enumerate() {
            let rest = line
                .strip_prefix("Input: ")
                .ok_or_else(|| TokenizeError::Malformed(line.to_string()))?;
            let (input, out_part) = rest
                .split_once(", Output:")
                .ok_or_else(|| TokenizeError::Malformed(line.to_string()))?;
            tokens.push(self.index[KW_INPUT]);
            tokens.extend(self.segment_to_tokens(in_style, input)?);
            tokens.push(self.index[KW_COMMA]);
            tokens.push(self.index[KW_OUTPUT]);
            match out_part.strip_prefix(' ') {
                Some(output) => tokens.extend(self.segment_to_tokens(out_style, output)?),
                None if out_part.is_empty() => {}
                None => return Err(TokenizeError::Malformed(line.to_string())),
            }
            let is_last = li == lines.len() - 1;
            if !(is_last && ends_open) {
                tokens.push(self.index[KW_NEWLINE]);
            }
        }
        Ok(tokens)
    }

    /// Renders a token sequence back to prompt text.
    pub fn detokenize(&self, task: TaskId, tokens: &[TokenId]) -> Result<String, TokenizeError> {
        let (in_style, out_style) = styles(task);
        let input_id = self.index[KW_INPUT];
        let output_id = self.index[KW_OUTPUT];
        let comma_id = self.index[KW_COMMA];
        let newline_id = self.index[KW_NEWLINE];

        let mut text = String::new();
        let mut i = 0;
        while i < tokens.len() {
            if tokens[i] != input_id {
                return Err(TokenizeError::Malformed(alloc::format!(
                    "expected Input: token at {i}"
                )));
            }
            i += 1;
            let in_start = i;
            while i < tokens.len() && tokens[i] != comma_id {
                i += 1;
            }
            let input = self.segment_to_text(in_style, &tokens[in_start..i])?;
            if i >= tokens.len() || tokens[i] != comma_id {
                return Err(TokenizeError::Malformed("missing comma".into()));
            }
            i += 1;
            if i >= tokens.len() || tokens[i] != output_id {
                return Err(TokenizeError::Malformed("missing Output:".into()));
            }
            i += 1;
            let out_start = i;
            while i < tokens.len() && tokens[i] != newline_id {
                i += 1;
            }
            let output = self.segment_to_text(out_style, &tokens[out_start..i])?;

            text.push_str("Input: ");
            text.push_str(&input);
            text.push_str(", Output:");
            if !output.is_empty() {
                text.push(' ');
                text.push_str(&output);
            }
            if i < tokens.len() {
                // Consume the newline.
                text.push('\n');
                i += 1;
            }
        }
        Ok(text)
    }
}
