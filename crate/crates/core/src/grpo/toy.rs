//! A desk-scale query policy with exact probabilities.
//!
//! The vocabulary is the keyword set of the restricted query language plus a
//! few variables, pointer tokens that copy a hint (`E0` is the first entity
//! URI, `R1` the second relation URI, `N0` the first number in the question)
//! and the think-protocol markers. Logits are
//!
//! ```text
//! z(tok) = B[last k tokens][tok] + Σ_{f ∈ features(prompt)} P[f][position][tok]
//! ```
//!
//! `B` starts as smoothed log n-gram frequencies of a primer of slot-form
//! query skeletons, standing in for a pretrained model; `P` starts at zero,
//! so the untrained policy ignores the question.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::policy::{OutOfVocabulary, Policy, TextPolicy};
use crate::corpus::QAInstance;
use crate::extraction::{Completion, THINK_CLOSE, THINK_OPEN};
use crate::rewards::query_tokens;

const KEYWORDS: &[&str] = &[
    "SELECT", "DISTINCT", "ASK", "WHERE", "{", "}", "(", ")", ".", "UNION", "FILTER", "NOT",
    "EXISTS", "COUNT", "AS", "=", "!=", "<", ">", "<=", ">=", "*", "?answer", "?x", "?y",
    "?count",
];
pub const MAX_ENTITY_SLOTS: usize = 3;
pub const MAX_RELATION_SLOTS: usize = 3;
pub const MAX_NUMBER_SLOTS: usize = 2;
pub const EOS: &str = "<eos>";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Keyword,
    Entity(usize),
    Relation(usize),
    Number(usize),
    ThinkOpen,
    ThinkClose,
    Eos,
}

/// The closed token set, in id order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    kinds: Vec<TokenKind>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let mut tokens = Vec::new();
        let mut kinds = Vec::new();
        for k in KEYWORDS {
            tokens.push(k.to_string());
            kinds.push(TokenKind::Keyword);
        }
        for i in 0..MAX_ENTITY_SLOTS {
            tokens.push(format!("E{i}"));
            kinds.push(TokenKind::Entity(i));
        }
        for i in 0..MAX_RELATION_SLOTS {
            tokens.push(format!("R{i}"));
            kinds.push(TokenKind::Relation(i));
        }
        for i in 0..MAX_NUMBER_SLOTS {
            tokens.push(format!("N{i}"));
            kinds.push(TokenKind::Number(i));
        }
        tokens.push(THINK_OPEN.into());
        kinds.push(TokenKind::ThinkOpen);
        tokens.push(THINK_CLOSE.into());
        kinds.push(TokenKind::ThinkClose);
        tokens.push(EOS.into());
        kinds.push(TokenKind::Eos);
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, kinds, index }
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn kind(&self, id: usize) -> TokenKind {
        self.kinds[id]
    }

    pub fn eos(&self) -> usize {
        self.tokens.len() - 1
    }

    /// Stable fingerprint of the token list.
    pub fn fingerprint(&self) -> u64 {
        fnv1a(self.tokens.join("\u{1f}").as_bytes())
    }

    /// Slot-form text (`E0`, `R1`, ...) to token ids, with end-of-sequence.
    pub fn encode_skeleton(&self, text: &str) -> Result<Vec<usize>, OutOfVocabulary> {
        let mut out = Vec::new();
        for t in text.split_whitespace() {
            out.push(self.id(t).ok_or_else(|| OutOfVocabulary { token: t.to_string() })?);
        }
        out.push(self.eos());
        Ok(out)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    /// Tokens of left context for the n-gram table.
    pub order: usize,
    /// Hashed prompt-feature buckets.
    pub n_features: usize,
    /// Position buckets; later positions share the last bucket.
    pub n_positions: usize,
    /// Interpolation mass given to the lower-order estimate at each level.
    pub smoothing: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            order: 2,
            n_features: 256,
            n_positions: 32,
            smoothing: 1.0,
        }
    }
}

impl ToyConfig {
    /// Trigram context and a sharp primer prior, as used on the micro corpus.
    pub fn micro() -> Self {
        Self {
            order: 3,
            smoothing: 0.1,
            ..Self::default()
        }
    }
}

/// Encoded prompt: active feature buckets and the hint values slots resolve to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyPrompt {
    pub features: Vec<usize>,
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    pub numbers: Vec<String>,
}

/// Question words with hint labels and numbers removed, lowercased.
pub fn question_words(question: &str, labels: &[&str]) -> Vec<String> {
    let mut text = question.to_string();
    let mut labels: Vec<&str> = labels.iter().copied().filter(|l| !l.is_empty()).collect();
    labels.sort_by_key(|l| std::cmp::Reverse(l.len()));
    for l in labels {
        text = text.replace(l, " ");
    }
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty() && !w.chars().all(|c| c.is_ascii_digit()))
        .map(str::to_lowercase)
        .collect()
}

/// Digit runs in the question, in order of appearance.
pub fn question_numbers(question: &str) -> Vec<String> {
    question
        .split(|c: char| !c.is_ascii_digit())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Error)]
pub enum PolicyFileError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("policy file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    config: ToyConfig,
    vocab: Vocabulary,
    params: Vec<f64>,
    n_contexts: usize,
}

#[derive(Serialize, Deserialize)]
struct PolicyHeader {
    config: ToyConfig,
    vocab_fingerprint: u64,
    n_params: usize,
}

impl ToyPolicy {
    /// All-zero parameters (uniform over unmasked tokens).
    pub fn zeros(config: ToyConfig) -> Self {
        assert!(config.n_features > 0 && config.n_positions > 0);
        let vocab = Vocabulary::default();
        let v = vocab.len();
        let n_contexts = (v + 1).pow(config.order as u32);
        let n = n_contexts * v + config.n_features * config.n_positions * v;
        Self {
            config,
            vocab,
            params: vec![0.0; n],
            n_contexts,
        }
    }

    /// The untrained policy: n-gram prior from `primer` (one slot-form
    /// skeleton per line), prompt weights at zero.
    pub fn from_primer(config: ToyConfig, primer: &str) -> Result<Self, OutOfVocabulary> {
        let mut policy = Self::zeros(config);
        let seqs: Vec<Vec<usize>> = primer
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| policy.vocab.encode_skeleton(l))
            .collect::<Result<_, _>>()?;
        let v = policy.vocab.len();
        // counts[j][context of length j] over next tokens, j = 0..=order
        let mut counts: Vec<HashMap<Vec<usize>, Vec<f64>>> = vec![HashMap::new(); config.order + 1];
        let bos = v;
        for seq in &seqs {
            let mut padded = vec![bos; config.order];
            padded.extend(seq);
            for t in config.order..padded.len() {
                for (j, table) in counts.iter_mut().enumerate() {
                    let ctx = padded[t - j..t].to_vec();
                    table.entry(ctx).or_insert_with(|| vec![0.0; v])[padded[t]] += 1.0;
                }
            }
        }
        let alpha = config.smoothing;
        for ctx_id in 0..policy.n_contexts {
            let ctx = policy.decode_context(ctx_id);
            // interpolate from the unigram up to the full context
            let mut probs = vec![1.0 / v as f64; v];
            for j in 0..=config.order {
                let key = ctx[config.order - j..].to_vec();
                if let Some(c) = counts[j].get(&key) {
                    let total: f64 = c.iter().sum();
                    probs = c
                        .iter()
                        .zip(&probs)
                        .map(|(cnt, lower)| (cnt + alpha * lower) / (total + alpha))
                        .collect();
                }
            }
            let base = ctx_id * v;
            for (tok, p) in probs.iter().enumerate() {
                policy.params[base + tok] = p.ln();
            }
        }
        Ok(policy)
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn decode_context(&self, mut id: usize) -> Vec<usize> {
        let base = self.vocab.len() + 1;
        let mut ctx = vec![0; self.config.order];
        for slot in (0..self.config.order).rev() {
            ctx[slot] = id % base;
            id /= base;
        }
        ctx
    }

    fn context_id(&self, prefix: &[usize]) -> usize {
        let v = self.vocab.len();
        let base = v + 1;
        let mut id = 0;
        for j in 0..self.config.order {
            // position order-1 is the most recent token
            let back = self.config.order - j;
            let tok = if prefix.len() >= back { prefix[prefix.len() - back] } else { v };
            id = id * base + tok;
        }
        id
    }

    fn position_bucket(&self, pos: usize) -> usize {
        pos.min(self.config.n_positions - 1)
    }

    fn feature_offset(&self, f: usize, pos: usize) -> usize {
        let v = self.vocab.len();
        self.n_contexts * v + (f * self.config.n_positions + self.position_bucket(pos)) * v
    }

    fn allowed(&self, prompt: &ToyPrompt, prefix: &[usize], tok: usize) -> bool {
        let last = prefix.last().map(|t| self.vocab.kind(*t));
        if last == Some(TokenKind::ThinkOpen) {
            return self.vocab.kind(tok) == TokenKind::ThinkClose;
        }
        match self.vocab.kind(tok) {
            TokenKind::Keyword | TokenKind::Eos => true,
            TokenKind::Entity(i) => i < prompt.entities.len(),
            TokenKind::Relation(i) => i < prompt.relations.len(),
            TokenKind::Number(i) => i < prompt.numbers.len(),
            TokenKind::ThinkOpen => prefix.is_empty(),
            TokenKind::ThinkClose => false,
        }
    }

    pub fn encode(&self, instance: &QAInstance) -> ToyPrompt {
        let labels: Vec<&str> = instance
            .entities
            .iter()
            .map(|e| e.label.as_str())
            .chain(instance.relations.iter().map(|r| r.label.as_str()))
            .collect();
        let words = question_words(&instance.question, &labels);
        let numbers = question_numbers(&instance.question);
        let mut names: Vec<String> = words.iter().map(|w| format!("w:{w}")).collect();
        names.extend(words.windows(2).map(|p| format!("b:{}_{}", p[0], p[1])));
        names.push(format!("ne:{}", instance.entities.len()));
        names.push(format!("nr:{}", instance.relations.len()));
        names.push(format!("nn:{}", numbers.len()));
        let mut features: Vec<usize> = names
            .iter()
            .map(|n| (fnv1a(n.as_bytes()) % self.config.n_features as u64) as usize)
            .collect();
        features.sort_unstable();
        features.dedup();
        ToyPrompt {
            features,
            entities: instance.entities.iter().map(|e| e.uri.clone()).collect(),
            relations: instance.relations.iter().map(|r| r.uri.clone()).collect(),
            numbers,
        }
    }

    pub fn render(&self, prompt: &ToyPrompt, tokens: &[usize]) -> String {
        let mut parts = Vec::new();
        for &t in tokens {
            match self.vocab.kind(t) {
                TokenKind::Eos => break,
                TokenKind::Entity(i) => parts.push(format!("<{}>", prompt.entities[i])),
                TokenKind::Relation(i) => parts.push(format!("<{}>", prompt.relations[i])),
                TokenKind::Number(i) => parts.push(format!("'{}'", prompt.numbers[i])),
                _ => parts.push(self.vocab.token(t).to_string()),
            }
        }
        parts.join(" ")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PolicyFileError> {
        let header = PolicyHeader {
            config: self.config,
            vocab_fingerprint: self.vocab.fingerprint(),
            n_params: self.params.len(),
        };
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let line = serde_json::to_string(&header).map_err(|e| PolicyFileError::Format(e.to_string()))?;
        writeln!(f, "{line}")?;
        write_f64s(&mut f, &self.params)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PolicyFileError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let nl = bytes
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| PolicyFileError::Format("missing header".into()))?;
        let header: PolicyHeader =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| PolicyFileError::Format(e.to_string()))?;
        let mut policy = Self::zeros(header.config);
        if header.vocab_fingerprint != policy.vocab.fingerprint() || header.n_params != policy.params.len() {
            return Err(PolicyFileError::Format("vocabulary or shape mismatch".into()));
        }
        policy.params = read_f64s(&bytes[nl + 1..], header.n_params)?;
        Ok(policy)
    }
}

pub(crate) fn write_f64s(w: &mut impl Write, xs: &[f64]) -> std::io::Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_f64s(bytes: &[u8], n: usize) -> Result<Vec<f64>, PolicyFileError> {
    if bytes.len() != n * 8 {
        return Err(PolicyFileError::Format(format!(
            "expected {} parameter bytes, found {}",
            n * 8,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

impl Policy for ToyPolicy {
    type Prompt = ToyPrompt;

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn eos_token(&self) -> usize {
        self.vocab.eos()
    }

    fn logits(&self, prompt: &ToyPrompt, prefix: &[usize], out: &mut [f64]) {
        let v = self.vocab.len();
        let b = self.context_id(prefix) * v;
        out.copy_from_slice(&self.params[b..b + v]);
        for &f in &prompt.features {
            let o = self.feature_offset(f, prefix.len());
            for (z, w) in out.iter_mut().zip(&self.params[o..o + v]) {
                *z += w;
            }
        }
        for (tok, z) in out.iter_mut().enumerate() {
            if !self.allowed(prompt, prefix, tok) {
                *z = f64::NEG_INFINITY;
            }
        }
    }

    fn accumulate_logit_grad(&self, prompt: &ToyPrompt, prefix: &[usize], dlogits: &[f64], grad: &mut [f64]) {
        let v = self.vocab.len();
        let b = self.context_id(prefix) * v;
        for (g, d) in grad[b..b + v].iter_mut().zip(dlogits) {
            *g += d;
        }
        for &f in &prompt.features {
            let o = self.feature_offset(f, prefix.len());
            for (g, d) in grad[o..o + v].iter_mut().zip(dlogits) {
                *g += d;
            }
        }
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn vocab_id(&self) -> u64 {
        self.vocab.fingerprint()
    }
}

impl TextPolicy for ToyPolicy {
    fn encode_prompt(&self, instance: &QAInstance) -> ToyPrompt {
        self.encode(instance)
    }

    fn render_completion(&self, prompt: &ToyPrompt, tokens: &[usize]) -> Completion {
        let n = tokens.iter().take_while(|t| **t != self.vocab.eos()).count();
        Completion::new(self.render(prompt, tokens), n)
    }

    fn encode_target(&self, prompt: &ToyPrompt, query: &str) -> Result<Vec<usize>, OutOfVocabulary> {
        let mut out = Vec::new();
        for tok in query_tokens(query) {
            let id = if let Some(iri) = tok.strip_prefix('<').and_then(|t| t.strip_suffix('>')) {
                let e = prompt.entities.iter().position(|u| u == iri);
                let r = prompt.relations.iter().position(|u| u == iri);
                match (e, r) {
                    (Some(i), _) if i < MAX_ENTITY_SLOTS => self.vocab.id(&format!("E{i}")),
                    (_, Some(i)) if i < MAX_RELATION_SLOTS => self.vocab.id(&format!("R{i}")),
                    _ => None,
                }
            } else if let Some(lex) = tok
                .strip_prefix('\'')
                .and_then(|t| t.strip_suffix('\''))
                .or_else(|| tok.strip_prefix('"').and_then(|t| t.strip_suffix('"')))
            {
                prompt
                    .numbers
                    .iter()
                    .position(|n| n == lex)
                    .filter(|i| *i < MAX_NUMBER_SLOTS)
                    .and_then(|i| self.vocab.id(&format!("N{i}")))
            } else {
                self.vocab.id(&tok)
            };
            out.push(id.ok_or(OutOfVocabulary { token: tok })?);
        }
        out.push(self.vocab.eos());
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EntityHint, QueryType, RelationHint};
    use crate::grpo::policy::{log_prob, token_distribution};

    fn instance() -> QAInstance {
        QAInstance {
            id: "i".into(),
            question: "Was 'Deep Things' published in 2019?".into(),
            entities: vec![EntityHint {
                uri: "https://dblp.org/rec/a".into(),
                label: "Deep Things".into(),
            }],
            relations: vec![RelationHint {
                uri: "https://dblp.org/rdf/schema#yearOfPublication".into(),
                label: "year of publication".into(),
                domain: String::new(),
                range: String::new(),
                comment: String::new(),
            }],
            gold_query: Some(
                "ASK { <https://dblp.org/rec/a> <https://dblp.org/rdf/schema#yearOfPublication> '2019' }".into(),
            ),
            query_type: QueryType::Boolean,
            template_id: "t".into(),
            is_temporal: true,
            is_heldout: false,
            gold_answers: None,
            materialize_error: None,
        }
    }

    #[test]
    fn features_ignore_labels_and_numbers() {
        assert_eq!(
            question_words("Was 'Deep Things' published in 2019?", &["Deep Things"]),
            ["was", "published", "in"]
        );
        assert_eq!(question_numbers("after 2015 and 2019"), ["2015", "2019"]);
    }

    #[test]
    fn gold_round_trips_through_slots() {
        let p = ToyPolicy::zeros(ToyConfig::default());
        let inst = instance();
        let prompt = p.encode(&inst);
        let toks = p.encode_target(&prompt, inst.gold_query.as_deref().unwrap()).unwrap();
        let names: Vec<&str> = toks.iter().map(|t| p.vocab().token(*t)).collect();
        assert_eq!(names, ["ASK", "{", "E0", "R0", "N0", "}", EOS]);
        let c = p.render_completion(&prompt, &toks);
        assert_eq!(c.text, inst.gold_query.unwrap());
        assert_eq!(c.token_count, 6);
    }

    #[test]
    fn unknown_iri_is_out_of_vocabulary() {
        let p = ToyPolicy::zeros(ToyConfig::default());
        let prompt = p.encode(&instance());
        assert!(p.encode_target(&prompt, "ASK { <https://other> <p> ?x }").is_err());
    }

    #[test]
    fn masks_unavailable_slots_and_think_protocol() {
        let p = ToyPolicy::zeros(ToyConfig::default());
        let prompt = p.encode(&instance());
        let d = token_distribution(&p, &prompt, &[]);
        let id = |t: &str| p.vocab().id(t).unwrap();
        assert!(d[id("E0")] > 0.0 && d[id("E1")] == 0.0 && d[id("N1")] == 0.0);
        assert!(d[id(THINK_OPEN)] > 0.0 && d[id(THINK_CLOSE)] == 0.0);
        let d = token_distribution(&p, &prompt, &[id(THINK_OPEN)]);
        assert_eq!(d[id(THINK_CLOSE)], 1.0);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn primer_prior_prefers_primer_sequences() {
        let primer = "ASK { E0 R0 N0 }\nSELECT DISTINCT ?answer WHERE { E0 R0 ?answer }\n";
        let p = ToyPolicy::from_primer(ToyConfig::default(), primer).unwrap();
        let prompt = p.encode(&instance());
        let ask = p.vocab().encode_skeleton("ASK { E0 R0 N0 }").unwrap();
        let junk = p.vocab().encode_skeleton("} ASK N0 { E0").unwrap();
        assert!(log_prob(&p, &prompt, &ask) > log_prob(&p, &prompt, &junk) + 5.0);
    }

    #[test]
    fn save_load_round_trip() {
        let mut p = ToyPolicy::zeros(ToyConfig {
            n_features: 4,
            n_positions: 3,
            ..ToyConfig::default()
        });
        for (i, x) in p.params_mut().iter_mut().enumerate() {
            *x = i as f64 * 0.5 - 3.0;
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.bin");
        p.save(&path).unwrap();
        assert_eq!(ToyPolicy::load(&path).unwrap(), p);
    }
}
