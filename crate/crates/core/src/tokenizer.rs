//! Character-level byte-pair-encoding tokenizer.
//!
//! Text is pre-split into chunks at every whitespace → non-whitespace
//! transition, so a chunk is an optional whitespace run followed by a
//! non-whitespace run (`"the  cat\n"` → `["the", "  cat", "\n"]`). Merges never
//! cross chunk boundaries. Concatenating chunks restores the input, which is
//! what makes `decode(encode(s)) == s` hold for every string whose characters
//! were seen during training. No Unicode normalization is applied.
//!
//! Id layout: `0 = <unk>`, `1 = <s>`, `2 = </s>`, then base characters in
//! code-point order, then one id per merge in the order merges were learned.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::TokenId;

pub const UNK: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const SPECIAL_COUNT: usize = 3;

/// Decoded form of `<unk>`.
pub const REPLACEMENT_GLYPH: char = '\u{FFFD}';

const FORMAT_HEADER: &str = "synthforge-bpe";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialTokens {
    pub unk: TokenId,
    pub bos: TokenId,
    pub eos: TokenId,
}

impl Default for SpecialTokens {
    fn default() -> Self {
        SpecialTokens { unk: UNK, bos: BOS, eos: EOS }
    }
}

#[derive(Debug, Clone)]
pub struct TokenizerModel {
    vocab: Vec<String>,
    merges: Vec<(TokenId, TokenId)>,
    special: SpecialTokens,
    char_ids: HashMap<char, TokenId>,
    merge_ranks: HashMap<(TokenId, TokenId), (usize, TokenId)>,
}

impl PartialEq for TokenizerModel {
    fn eq(&self, other: &Self) -> bool {
        self.vocab == other.vocab && self.merges == other.merges && self.special == other.special
    }
}

/// Split text into merge domains. See the module docs.
///
/// A whitespace run that contains a newline is cut right after its last
/// newline, so paragraph breaks become standalone chunks; a trailing
/// whitespace run is its own chunk.
pub fn pre_tokenize(text: &str) -> impl Iterator<Item = &str> {
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut ws_start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            ws_start.get_or_insert(i);
            continue;
        }
        if let Some(ws) = ws_start.take() {
            if ws > start {
                pieces.push(&text[start..ws]);
            }
            let run = &text[ws..i];
            start = match run.rfind('\n') {
                Some(nl) if nl + 1 < run.len() => {
                    pieces.push(&text[ws..ws + nl + 1]);
                    ws + nl + 1
                }
                Some(_) => {
                    pieces.push(run);
                    i
                }
                None => ws,
            };
        }
    }
    if let Some(ws) = ws_start {
        if ws > start {
            pieces.push(&text[start..ws]);
        }
        pieces.push(&text[ws..]);
    } else if start < text.len() {
        pieces.push(&text[start..]);
    }
    pieces.into_iter()
}

impl TokenizerModel {
    /// Learn `vocab_size - 3 - base` merges from `corpus`.
    ///
    /// Deterministic: chunks are counted, then processed in sorted order, and
    /// frequency ties between pairs go to the lowest `(left, right)` id pair.
    pub fn train<'a, I>(corpus: I, vocab_size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut chunk_freq: HashMap<&str, u64> = HashMap::new();
        let mut any_text = false;
        for text in corpus {
            for chunk in pre_tokenize(text) {
                any_text = true;
                *chunk_freq.entry(chunk).or_default() += 1;
            }
        }
        if !any_text {
            return Err(Error::config("tokenizer corpus is empty"));
        }

        let mut chars: Vec<char> = chunk_freq.keys().flat_map(|c| c.chars()).collect();
        chars.sort_unstable();
        chars.dedup();
        let base = SPECIAL_COUNT + chars.len();
        if vocab_size < base {
            return Err(Error::config(format!(
                "vocab_size {vocab_size} is smaller than the {} base symbols plus {SPECIAL_COUNT} special tokens",
                chars.len()
            )));
        }

        let mut vocab: Vec<String> = vec!["<unk>".into(), "<s>".into(), "</s>".into()];
        vocab.extend(chars.iter().map(|c| c.to_string()));
        let char_ids: HashMap<char, TokenId> =
            chars.iter().enumerate().map(|(i, &c)| (c, (SPECIAL_COUNT + i) as TokenId)).collect();

        let mut sorted_chunks: Vec<(&str, u64)> = chunk_freq.into_iter().collect();
        sorted_chunks.sort_unstable_by(|a, b| a.0.cmp(b.0));
        let mut words: Vec<(Vec<TokenId>, u64)> = sorted_chunks
            .into_iter()
            .map(|(chunk, f)| (chunk.chars().map(|c| char_ids[&c]).collect(), f))
            .collect();

        let mut pair_counts: HashMap<(TokenId, TokenId), u64> = HashMap::new();
        let mut where_: HashMap<(TokenId, TokenId), HashSet<usize>> = HashMap::new();
        for (wi, (ids, f)) in words.iter().enumerate() {
            for w in ids.windows(2) {
                let p = (w[0], w[1]);
                *pair_counts.entry(p).or_default() += f;
                where_.entry(p).or_default().insert(wi);
            }
        }
        let mut heap: BinaryHeap<(u64, Reverse<(TokenId, TokenId)>)> =
            pair_counts.iter().map(|(&p, &c)| (c, Reverse(p))).collect();

        let mut merges = Vec::new();
        while vocab.len() < vocab_size {
            let Some((count, Reverse(pair))) = heap.pop() else {
                return Err(Error::config(format!(
                    "vocab_size {vocab_size} unreachable: corpus supports at most {} entries",
                    vocab.len()
                )));
            };
            if count == 0 || pair_counts.get(&pair) != Some(&count) {
                continue; // stale heap entry
            }
            let new_id = vocab.len() as TokenId;
            let merged = format!("{}{}", vocab[pair.0 as usize], vocab[pair.1 as usize]);
            vocab.push(merged);
            merges.push(pair);

            let mut affected: Vec<usize> = where_.remove(&pair).unwrap_or_default().into_iter().collect();
            affected.sort_unstable();
            let mut touched: HashSet<(TokenId, TokenId)> = HashSet::new();
            for wi in affected {
                let (ids, f) = &mut words[wi];
                let f = *f;
                if !ids.windows(2).any(|w| (w[0], w[1]) == pair) {
                    continue;
                }
                for w in ids.windows(2) {
                    let p = (w[0], w[1]);
                    let c = pair_counts.get_mut(&p).expect("pair counted");
                    *c -= f;
                    touched.insert(p);
                }
                let replaced = apply_merge(ids, pair, new_id);
                for w in replaced.windows(2) {
                    let p = (w[0], w[1]);
                    *pair_counts.entry(p).or_default() += f;
                    where_.entry(p).or_default().insert(wi);
                    touched.insert(p);
                }
                *ids = replaced;
            }
            pair_counts.remove(&pair);
            let mut touched: Vec<_> = touched.into_iter().collect();
            touched.sort_unstable();
            for p in touched {
                match pair_counts.get(&p) {
                    Some(&c) if c > 0 => heap.push((c, Reverse(p))),
                    Some(_) => {
                        pair_counts.remove(&p);
                    }
                    None => {}
                }
            }
        }

        Ok(Self::from_parts(vocab, merges))
    }

    fn from_parts(vocab: Vec<String>, merges: Vec<(TokenId, TokenId)>) -> Self {
        let n_base = vocab.len() - SPECIAL_COUNT - merges.len();
        let char_ids = vocab[SPECIAL_COUNT..SPECIAL_COUNT + n_base]
            .iter()
            .enumerate()
            .map(|(i, s)| (s.chars().next().expect("base symbol"), (SPECIAL_COUNT + i) as TokenId))
            .collect();
        let merge_ranks = merges
            .iter()
            .enumerate()
            .map(|(rank, &p)| (p, (rank, (SPECIAL_COUNT + n_base + rank) as TokenId)))
            .collect();
        TokenizerModel { vocab, merges, special: SpecialTokens::default(), char_ids, merge_ranks }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn special(&self) -> SpecialTokens {
        self.special
    }

    pub fn eos(&self) -> TokenId {
        self.special.eos
    }

    pub fn merges(&self) -> &[(TokenId, TokenId)] {
        &self.merges
    }

    pub fn base_symbol_count(&self) -> usize {
        self.vocab.len() - SPECIAL_COUNT - self.merges.len()
    }

    /// Surface string of a token (`<unk>`, `<s>`, `</s>` for specials).
    pub fn token_str(&self, id: TokenId) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        for chunk in pre_tokenize(text) {
            self.encode_chunk(chunk, &mut out);
        }
        out
    }

    /// Encode many texts, memoizing repeated chunks across the whole batch.
    pub fn encode_many<S: AsRef<str>>(&self, texts: &[S]) -> Vec<Vec<TokenId>> {
        let mut cache: HashMap<&str, Vec<TokenId>> = HashMap::new();
        texts
            .iter()
            .map(|t| {
                let mut out = Vec::new();
                for chunk in pre_tokenize(t.as_ref()) {
                    let ids = cache.entry(chunk).or_insert_with(|| {
                        let mut v = Vec::new();
                        self.encode_chunk(chunk, &mut v);
                        v
                    });
                    out.extend_from_slice(ids);
                }
                out
            })
            .collect()
    }

    fn encode_chunk(&self, chunk: &str, out: &mut Vec<TokenId>) {
        let mut ids: Vec<TokenId> =
            chunk.chars().map(|c| self.char_ids.get(&c).copied().unwrap_or(self.special.unk)).collect();
        loop {
            let best = ids
                .windows(2)
                .filter_map(|w| self.merge_ranks.get(&(w[0], w[1])).map(|&(rank, id)| (rank, (w[0], w[1]), id)))
                .min_by_key(|&(rank, _, _)| rank);
            match best {
                Some((_, pair, new_id)) => ids = apply_merge(&ids, pair, new_id),
                None => break,
            }
        }
        out.extend_from_slice(&ids);
    }

    pub fn decode(&self, tokens: &[TokenId]) -> Result<String> {
        let mut s = String::new();
        for &id in tokens {
            let Some(piece) = self.vocab.get(id as usize) else {
                return Err(Error::Decode { id, vocab_size: self.vocab.len() });
            };
            if id == self.special.unk {
                s.push(REPLACEMENT_GLYPH);
            } else if id == self.special.bos || id == self.special.eos {
                // markers carry no surface text
            } else {
                s.push_str(piece);
            }
        }
        Ok(s)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let sp = self.special;
        writeln!(s, "{FORMAT_HEADER} {FORMAT_VERSION}").unwrap();
        writeln!(s, "vocab_size {}", self.vocab.len()).unwrap();
        writeln!(s, "special unk={} bos={} eos={}", sp.unk, sp.bos, sp.eos).unwrap();
        writeln!(s, "vocab {}", self.vocab.len()).unwrap();
        for tok in &self.vocab {
            writeln!(s, "{}", serde_json::to_string(tok).expect("string encodes")).unwrap();
        }
        writeln!(s, "merges {}", self.merges.len()).unwrap();
        for (l, r) in &self.merges {
            writeln!(s, "{l} {r}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut next = |what: &str| lines.next().ok_or_else(|| Error::format(format!("tokenizer file truncated at {what}")));

        let header = next("header")?;
        let version = header
            .strip_prefix(FORMAT_HEADER)
            .map(str::trim)
            .ok_or_else(|| Error::format("not a tokenizer file"))?;
        if version != FORMAT_VERSION.to_string() {
            return Err(Error::format(format!("unsupported tokenizer format version {version}")));
        }
        let vocab_size = parse_field(next("vocab_size")?, "vocab_size")?;
        let special = next("special")?;
        if special.trim() != format!("special unk={UNK} bos={BOS} eos={EOS}") {
            return Err(Error::format(format!("unsupported special-token layout: {special}")));
        }
        let n_vocab = parse_field(next("vocab")?, "vocab")?;
        if n_vocab != vocab_size {
            return Err(Error::format("vocab count disagrees with vocab_size"));
        }
        let mut vocab = Vec::with_capacity(n_vocab);
        for _ in 0..n_vocab {
            let tok: String = serde_json::from_str(next("vocab entry")?)?;
            vocab.push(tok);
        }
        let n_merges = parse_field(next("merges")?, "merges")?;
        if n_merges + SPECIAL_COUNT > n_vocab {
            return Err(Error::format("more merges than vocabulary entries"));
        }
        let n_base = n_vocab - SPECIAL_COUNT - n_merges;
        let mut merges = Vec::with_capacity(n_merges);
        for i in 0..n_merges {
            let line = next("merge")?;
            let mut it = line.split_whitespace().map(str::parse::<TokenId>);
            let (Some(Ok(l)), Some(Ok(r)), None) = (it.next(), it.next(), it.next()) else {
                return Err(Error::format(format!("bad merge line: {line}")));
            };
            let id = SPECIAL_COUNT + n_base + i;
            if l as usize >= id || r as usize >= id {
                return Err(Error::format(format!("merge {i} references a later id")));
            }
            if vocab[id] != format!("{}{}", vocab[l as usize], vocab[r as usize]) {
                return Err(Error::format(format!("merge {i} does not match vocab entry {id}")));
            }
            merges.push((l, r));
        }
        for s in &vocab[SPECIAL_COUNT..SPECIAL_COUNT + n_base] {
            if s.chars().count() != 1 {
                return Err(Error::format(format!("base symbol {s:?} is not a single character")));
            }
        }
        Ok(Self::from_parts(vocab, merges))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }
}

fn parse_field(line: &str, name: &str) -> Result<usize> {
    line.strip_prefix(name)
        .and_then(|rest| rest.trim().parse().ok())
        .ok_or_else(|| Error::format(format!("expected `{name} <n>`, got {line:?}")))
}

fn apply_merge(ids: &[TokenId], pair: (TokenId, TokenId), new_id: TokenId) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(ids.len());
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() && (ids[i], ids[i + 1]) == pair {
            out.push(new_id);
            i += 2;
        } else {
            out.push(ids[i]);
            i += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chunks(s: &str) -> Vec<&str> {
        pre_tokenize(s).collect()
    }

    #[test]
    fn pre_tokenize_attaches_leading_whitespace() {
        assert_eq!(chunks("the  cat sat"), vec!["the", "  cat", " sat"]);
        assert_eq!(chunks("  x"), vec!["  x"]);
        assert_eq!(chunks("a\n\nb c "), vec!["a", "\n\n", "b", " c", " "]);
        assert_eq!(chunks("a\n  b"), vec!["a", "\n", "  b"]);
        assert!(chunks("").is_empty());
    }

    #[test]
    fn single_merge_is_the_most_frequent_pair() {
        // base = {a, b}; "ab" occurs 4 times, "ba" 3 times.
        let tok = TokenizerModel::train(["abababab"], SPECIAL_COUNT + 2 + 1).unwrap();
        assert_eq!(tok.merges().len(), 1);
        let (l, r) = tok.merges()[0];
        assert_eq!(tok.token_str(l), Some("a"));
        assert_eq!(tok.token_str(r), Some("b"));
        assert_eq!(tok.encode("abab").len(), 2);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let empty: [&str; 0] = [];
        assert!(matches!(TokenizerModel::train(empty, 10), Err(Error::Config(_))));
        assert!(matches!(TokenizerModel::train([""], 10), Err(Error::Config(_))));
    }

    #[test]
    fn too_small_vocab_is_rejected() {
        assert!(matches!(TokenizerModel::train(["abc"], 5), Err(Error::Config(_))));
    }

    #[test]
    fn unreachable_vocab_is_reported() {
        // "ab" admits exactly one merge
        assert!(matches!(TokenizerModel::train(["ab"], 10), Err(Error::Config(_))));
    }

    #[test]
    fn empty_and_single_symbol() {
        let tok = TokenizerModel::train(["hello world"], 12).unwrap();
        assert!(tok.encode("").is_empty());
        assert_eq!(tok.decode(&[]).unwrap(), "");
        assert_eq!(tok.encode("h").len(), 1);
    }

    #[test]
    fn unknown_chars_map_to_unk_and_decode_to_replacement() {
        let tok = TokenizerModel::train(["hello world"], 12).unwrap();
        let ids = tok.encode("hz");
        assert_eq!(ids[1], UNK);
        assert_eq!(tok.decode(&ids).unwrap(), format!("h{REPLACEMENT_GLYPH}"));
    }

    #[test]
    fn invalid_id_names_the_id() {
        let tok = TokenizerModel::train(["hello world"], 12).unwrap();
        match tok.decode(&[999]) {
            Err(Error::Decode { id, .. }) => assert_eq!(id, 999),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn specials_are_silent_in_decode() {
        let tok = TokenizerModel::train(["hello world"], 12).unwrap();
        let mut ids = vec![BOS];
        ids.extend(tok.encode("hello"));
        ids.push(EOS);
        assert_eq!(tok.decode(&ids).unwrap(), "hello");
    }

    #[test]
    fn text_format_round_trips() {
        let corpus = ["the cat sat on the mat", "a \"quoted\"\nline\twith tabs"];
        let tok = TokenizerModel::train(corpus, 30).unwrap();
        let text = tok.to_text();
        let back = TokenizerModel::from_text(&text).unwrap();
        assert_eq!(tok, back);
        for probe in ["the mat", "sat on\nthe", "\"quoted\""] {
            assert_eq!(tok.encode(probe), back.encode(probe));
        }
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let tok = TokenizerModel::train(["abababab"], 6).unwrap();
        let text = tok.to_text();
        assert!(TokenizerModel::from_text(&text.replace("synthforge-bpe 1", "synthforge-bpe 9")).is_err());
        assert!(TokenizerModel::from_text(&text[..text.len() - 4]).is_err());
        assert!(TokenizerModel::from_text("").is_err());
    }

    const ALPHABET: &str = "abcdefghij KLM.,\n'é";

    proptest! {
        #[test]
        fn round_trip_on_in_domain_strings(s in proptest::collection::vec(proptest::sample::select(ALPHABET.chars().collect::<Vec<_>>()), 0..200)) {
            let corpus: String = ALPHABET.repeat(3) + "abc abc abd cab . , KLM\n";
            let tok = TokenizerModel::train([corpus.as_str()], 40).unwrap();
            let s: String = s.into_iter().collect();
            let ids = tok.encode(&s);
            prop_assert!(ids.iter().all(|&i| (i as usize) < tok.vocab_size()));
            prop_assert_eq!(tok.decode(&ids).unwrap(), s);
        }
    }
}
