//! Subword tokenizer turning a `(head name, tail name)` pair into a fixed-length
//! id sequence with an attention mask.
//!
//! Words are matched whole when possible. Otherwise the longest known prefix is
//! emitted and the rest of the word is tokenized the same way, bottoming out at
//! single characters. Characters never seen during vocabulary training map to
//! [`UNK_ID`].
//!
//! Layout: `[CLS] head… [SEP] tail… [SEP] [PAD]…`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const SEP_ID: u32 = 2;
pub const UNK_ID: u32 = 3;

pub const PAD: &str = "[PAD]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const UNK: &str = "[UNK]";

const SPECIALS: [&str; 4] = [PAD, CLS, SEP, UNK];

/// Smallest pad length that fits `[CLS] h [SEP] t`.
pub const MIN_PAD_LEN: usize = 4;

/// Longest multi-character chunk (in chars) considered during training.
const MAX_CHUNK_CHARS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    max_size: usize,
}

impl Vocabulary {
    fn with_specials(max_size: usize) -> Self {
        Self {
            tokens: SPECIALS.iter().map(|s| s.to_string()).collect(),
            index: HashMap::new(),
            max_size,
        }
    }

    fn push(&mut self, token: &str) {
        if SPECIALS.contains(&token) || self.index.contains_key(token) {
            return;
        }
        self.index.insert(token.to_owned(), self.tokens.len() as u32);
        self.tokens.push(token.to_owned());
    }

    /// Id of a non-special token.
    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn is_special(id: u32) -> bool {
        id <= UNK_ID
    }

    /// Non-special, non-pad tokens for `ids`, in order.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| !Self::is_special(id))
            .filter_map(|&id| self.token(id).map(str::to_owned))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = VocabFile {
            max_size: self.max_size,
            specials: SPECIALS
                .iter()
                .enumerate()
                .map(|(i, s)| (s.to_string(), i as u32))
                .collect(),
            tokens: self
                .tokens
                .iter()
                .enumerate()
                .skip(SPECIALS.len())
                .map(|(i, t)| (t.clone(), i as u32))
                .collect(),
        };
        let text = serde_json::to_string_pretty(&file)?;
        crate::kg_data::write_file(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let file: VocabFile = serde_json::from_str(&text)?;
        for (i, s) in SPECIALS.iter().enumerate() {
            if file.specials.get(*s) != Some(&(i as u32)) {
                return Err(Error::Vocabulary(format!("special token {s} missing or moved")));
            }
        }
        let n = SPECIALS.len() + file.tokens.len();
        let mut slots: Vec<Option<String>> = vec![None; n];
        for (tok, &id) in &file.tokens {
            let slot = (id as usize)
                .checked_sub(SPECIALS.len())
                .and_then(|_| slots.get_mut(id as usize))
                .ok_or_else(|| Error::Vocabulary(format!("token id {id} out of range")))?;
            if slot.replace(tok.clone()).is_some() {
                return Err(Error::Vocabulary(format!("token id {id} assigned twice")));
            }
        }
        let mut vocab = Self::with_specials(file.max_size);
        for tok in slots.into_iter().skip(SPECIALS.len()) {
            vocab.push(&tok.expect("ids are dense: count matches and no slot assigned twice"));
        }
        if vocab.len() != n {
            return Err(Error::Vocabulary("tokens collide with special tokens".into()));
        }
        Ok(vocab)
    }
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    max_size: usize,
    specials: BTreeMap<String, u32>,
    tokens: BTreeMap<String, u32>,
}

/// Trains a vocabulary from entity names.
///
/// Contents, in id order: the four specials, every character seen in the
/// corpus (first-appearance order), then whole words and frequent
/// multi-character chunks until `max_size` is reached. Whole words get up to
/// three quarters of the free slots; chunks fill the rest, and either side
/// takes over unused slots from the other.
pub fn train_vocabulary<'a, I>(corpus: I, max_size: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut vocab = Vocabulary::with_specials(max_size);

    let mut word_order: Vec<&str> = Vec::new();
    let mut word_counts: HashMap<&str, usize> = HashMap::new();
    let mut chars: Vec<char> = Vec::new();
    let mut seen_chars = std::collections::HashSet::new();
    for name in corpus {
        for word in name.split_whitespace() {
            for c in word.chars() {
                if seen_chars.insert(c) {
                    chars.push(c);
                }
            }
            let count = word_counts.entry(word).or_insert(0);
            if *count == 0 {
                word_order.push(word);
            }
            *count += 1;
        }
    }

    let required = SPECIALS.len() + chars.len();
    if max_size < required {
        return Err(Error::Config(format!(
            "vocabulary max_size {max_size} is below the {required} entries needed for specials and characters"
        )));
    }
    let mut buf = [0u8; 4];
    for c in &chars {
        vocab.push(c.encode_utf8(&mut buf));
    }

    // Whole words with ≥2 chars, most frequent first, ties by first appearance.
    let mut words: Vec<(usize, usize, &str)> = word_order
        .iter()
        .enumerate()
        .filter(|(_, w)| w.chars().nth(1).is_some() && !SPECIALS.contains(w))
        .map(|(i, w)| (word_counts[w], i, *w))
        .collect();
    words.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));

    // Chunks: substrings of 2..=MAX_CHUNK_CHARS chars, weighted by word frequency.
    let mut chunk_stats: HashMap<&str, (usize, usize)> = HashMap::new();
    let mut next_seq = 0usize;
    for w in &word_order {
        let freq = word_counts[w];
        let bounds: Vec<usize> = w
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(w.len()))
            .collect();
        let nchars = bounds.len() - 1;
        for start in 0..nchars {
            for len in 2..=MAX_CHUNK_CHARS.min(nchars - start) {
                if start == 0 && len == nchars {
                    continue;
                }
                let piece = &w[bounds[start]..bounds[start + len]];
                let entry = chunk_stats.entry(piece).or_insert_with(|| {
                    next_seq += 1;
                    (0, next_seq)
                });
                entry.0 += freq;
            }
        }
    }
    let mut chunks: Vec<(usize, usize, usize, &str)> = chunk_stats
        .into_iter()
        .filter(|(c, _)| !word_counts.contains_key(c) && !SPECIALS.contains(c))
        .map(|(c, (count, seq))| (count, c.chars().count(), seq, c))
        .collect();
    chunks.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));

    let free = max_size - required;
    let word_quota = (free - free / 4).min(words.len());
    let chunk_quota = (free - word_quota).min(chunks.len());
    let word_quota = (free - chunk_quota).min(words.len());
    for (_, _, w) in &words[..word_quota] {
        vocab.push(w);
    }
    for (_, _, _, c) in &chunks[..chunk_quota] {
        vocab.push(c);
    }
    Ok(vocab)
}

/// Token ids for one word (no whitespace splitting).
pub fn tokenize_word(word: &str, vocab: &Vocabulary) -> Vec<u32> {
    let mut out = Vec::new();
    push_word_pieces(word, vocab, &mut out);
    out
}

fn push_word_pieces(mut rest: &str, vocab: &Vocabulary, out: &mut Vec<u32>) {
    while !rest.is_empty() {
        if let Some(id) = vocab.id(rest) {
            out.push(id);
            return;
        }
        let known_prefix = rest
            .char_indices()
            .rev()
            .map(|(i, _)| i)
            .filter(|&end| end > 0)
            .find_map(|end| vocab.id(&rest[..end]).map(|id| (id, end)));
        let (id, end) = known_prefix.unwrap_or_else(|| {
            let first = rest.chars().next().map_or(rest.len(), char::len_utf8);
            (UNK_ID, first)
        });
        out.push(id);
        rest = &rest[end..];
    }
}

/// Token ids for a whole name, split on Unicode whitespace.
pub fn tokenize_name(name: &str, vocab: &Vocabulary) -> Vec<u32> {
    let mut out = Vec::new();
    for word in name.split_whitespace() {
        push_word_pieces(word, vocab, &mut out);
    }
    out
}

/// Fixed-length ids plus a prefix-of-ones attention mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenizedSequence {
    pub input_ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
}

impl TokenizedSequence {
    pub fn len(&self) -> usize {
        self.input_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input_ids.is_empty()
    }

    /// Number of unmasked positions.
    pub fn active_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }
}

/// Piece counts kept for head and tail when `budget` slots are available.
///
/// Trailing pieces are dropped one at a time from whichever list is longer
/// (the head when they tie) until the total fits.
pub fn truncate_lengths(head: usize, tail: usize, budget: usize) -> (usize, usize) {
    let (mut h, mut t) = (head, tail);
    while h + t > budget {
        if h >= t {
            h -= 1;
        } else {
            t -= 1;
        }
    }
    (h, t)
}

pub fn encode_pair(
    head_name: &str,
    tail_name: &str,
    vocab: &Vocabulary,
    pad_len: usize,
) -> Result<TokenizedSequence> {
    if pad_len < MIN_PAD_LEN {
        return Err(Error::Config(format!(
            "pad_len {pad_len} is below the minimum of {MIN_PAD_LEN}"
        )));
    }
    let head = tokenize_name(head_name, vocab);
    let tail = tokenize_name(tail_name, vocab);
    if head.is_empty() || tail.is_empty() {
        return Err(Error::Input(format!(
            "entity name has no words: head {head_name:?}, tail {tail_name:?}"
        )));
    }
    // Only pad_len 4 is too short for the trailing separator.
    let trailing_sep = pad_len > MIN_PAD_LEN;
    let specials = if trailing_sep { 3 } else { 2 };
    let (h, t) = truncate_lengths(head.len(), tail.len(), pad_len - specials);

    let mut input_ids = Vec::with_capacity(pad_len);
    input_ids.push(CLS_ID);
    input_ids.extend_from_slice(&head[..h]);
    input_ids.push(SEP_ID);
    input_ids.extend_from_slice(&tail[..t]);
    if trailing_sep {
        input_ids.push(SEP_ID);
    }
    let active = input_ids.len();
    input_ids.resize(pad_len, PAD_ID);
    let mut attention_mask = vec![1u8; active];
    attention_mask.resize(pad_len, 0);
    Ok(TokenizedSequence {
        input_ids,
        attention_mask,
    })
}

/// Fraction of whitespace-split words in `corpus` that are vocabulary entries.
pub fn whole_word_coverage<'a, I>(corpus: I, vocab: &Vocabulary) -> f64
where
    I: IntoIterator<Item = &'a str>,
{
    let (mut hit, mut total) = (0usize, 0usize);
    for name in corpus {
        for w in name.split_whitespace() {
            total += 1;
            hit += usize::from(vocab.id(w).is_some());
        }
    }
    if total == 0 {
        0.0
    } else {
        hit as f64 / total as f64
    }
}
