//! Byte-level BPE tokenizer with reserved special tokens.
//!
//! Training works directly on bytes with no pre-tokenization, so merges may
//! cross whitespace. Every byte value has its own base token, which makes
//! encoding total: any string round-trips exactly, and special-token strings
//! appearing in raw text are encoded as plain bytes, never as special ids.
//!
//! Id layout is fixed: specials `0..5` (pad, mask, bos, eos, parallel_sep),
//! byte tokens `5..261`, then one id per learned merge.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Display names of the special tokens, in id order.
pub const SPECIAL_NAMES: [&str; 5] = [
    "<|pad|>",
    "<|mask|>",
    "<|bos|>",
    "<|eos|>",
    "<|parallel_sep|>",
];

pub const NUM_SPECIALS: usize = SPECIAL_NAMES.len();
const BYTE_BASE: u32 = NUM_SPECIALS as u32;
const FIRST_MERGE_ID: u32 = BYTE_BASE + 256;
const FILE_HEADER_TAG: &str = "bpe-vocab";
const FILE_VERSION: &str = "v1";

/// Token ids plus per-token byte spans into the source text. Concatenating
/// the spans reconstructs the input; spans are non-overlapping and
/// monotonically non-decreasing. Spans are byte indices (a merge may end
/// inside a multi-byte character, which character indices cannot express).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub offsets: Vec<(usize, usize)>,
}

/// Trained vocabulary: immutable after training, freely shareable.
#[derive(Debug, Clone)]
pub struct Vocab {
    /// Byte expansion per id; empty for the special tokens.
    expansions: Vec<Vec<u8>>,
    /// Learned merges in rank order; merge `r` produced id `FIRST_MERGE_ID + r`.
    merges: Vec<(u32, u32)>,
    rank: HashMap<(u32, u32), u32>,
    /// Non-special token bytes → id (bijective by construction).
    lookup: HashMap<Vec<u8>, u32>,
}

impl Vocab {
    pub const PAD: u32 = 0;
    pub const MASK: u32 = 1;
    pub const BOS: u32 = 2;
    pub const EOS: u32 = 3;
    pub const PARALLEL_SEP: u32 = 4;

    pub fn is_special(id: u32) -> bool {
        id < BYTE_BASE
    }

    /// The base inventory before any merges: specials plus all 256 bytes.
    fn base() -> Vocab {
        let mut expansions = vec![Vec::new(); NUM_SPECIALS];
        let mut lookup = HashMap::new();
        for b in 0u16..256 {
            expansions.push(vec![b as u8]);
            lookup.insert(vec![b as u8], BYTE_BASE + b as u32);
        }
        Vocab {
            expansions,
            merges: Vec::new(),
            rank: HashMap::new(),
            lookup,
        }
    }

    /// Learn a byte-level BPE vocabulary of (up to) `vocab_size` tokens.
    ///
    /// Greedy: each round merges the most frequent adjacent pair across the
    /// whole corpus; ties break toward the lexicographically smallest pair of
    /// byte expansions, so training is deterministic. Merges freely cross
    /// whitespace. Training stops early only if no adjacent pairs remain.
    pub fn train<I, S>(corpus: I, vocab_size: usize) -> Result<Vocab>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let floor = 256 + NUM_SPECIALS;
        if vocab_size <= floor {
            return Err(Error::invalid(format!(
                "vocab_size {vocab_size} too small: must exceed {floor} \
                 (256 byte tokens plus {NUM_SPECIALS} specials)"
            )));
        }

        let mut docs: Vec<Vec<u32>> = corpus
            .into_iter()
            .map(|doc| {
                doc.as_ref()
                    .as_bytes()
                    .iter()
                    .map(|&b| BYTE_BASE + b as u32)
                    .collect()
            })
            .filter(|ids: &Vec<u32>| !ids.is_empty())
            .collect();
        if docs.is_empty() {
            return Err(Error::invalid("cannot train on an empty corpus"));
        }

        let mut vocab = Vocab::base();
        while vocab.size() < vocab_size {
            let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
            for doc in &docs {
                for pair in doc.windows(2) {
                    *counts.entry((pair[0], pair[1])).or_insert(0) += 1;
                }
            }

            // Highest count wins; ties go to the smallest (left, right) byte
            // expansions. Selection compares values, so HashMap iteration
            // order cannot leak into the result.
            let mut best: Option<((u32, u32), usize)> = None;
            for (&pair, &count) in &counts {
                let merged = vocab.merged_bytes(pair);
                if vocab.lookup.contains_key(&merged) {
                    continue; // keep byte-string → id bijective
                }
                let replace = match best {
                    None => true,
                    Some((bp, bc)) => {
                        count > bc
                            || (count == bc
                                && (vocab.expansion(pair.0), vocab.expansion(pair.1))
                                    < (vocab.expansion(bp.0), vocab.expansion(bp.1)))
                    }
                };
                if replace {
                    best = Some((pair, count));
                }
            }
            let Some((pair, _)) = best else {
                break; // corpus exhausted: every doc is a single token
            };

            let new_id = vocab.expansions.len() as u32;
            let merged = vocab.merged_bytes(pair);
            vocab.rank.insert(pair, vocab.merges.len() as u32);
            vocab.merges.push(pair);
            vocab.lookup.insert(merged.clone(), new_id);
            vocab.expansions.push(merged);
            for doc in &mut docs {
                apply_merge(doc, pair, new_id);
            }
        }
        Ok(vocab)
    }

    pub fn size(&self) -> usize {
        self.expansions.len()
    }

    pub fn merge_count(&self) -> usize {
        self.merges.len()
    }

    /// Byte expansion of a token id (empty for specials).
    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.expansions.get(id as usize).map(|v| v.as_slice())
    }

    /// Id of an exact non-special token byte string, if present.
    pub fn id_for_bytes(&self, bytes: &[u8]) -> Option<u32> {
        self.lookup.get(bytes).copied()
    }

    /// Printable form of a token: special name, or escaped bytes.
    pub fn token_display(&self, id: u32) -> String {
        if (id as usize) < NUM_SPECIALS {
            return SPECIAL_NAMES[id as usize].to_string();
        }
        self.token_bytes(id)
            .map(escape_bytes)
            .unwrap_or_else(|| format!("<invalid:{id}>"))
    }

    fn expansion(&self, id: u32) -> &[u8] {
        &self.expansions[id as usize]
    }

    fn merged_bytes(&self, pair: (u32, u32)) -> Vec<u8> {
        let mut out = self.expansion(pair.0).to_vec();
        out.extend_from_slice(self.expansion(pair.1));
        out
    }

    /// Tokenize a string. Total: never fails, never produces special ids.
    pub fn encode(&self, text: &str) -> Encoding {
        let bytes = text.as_bytes();
        let mut ids: Vec<u32> = bytes.iter().map(|&b| BYTE_BASE + b as u32).collect();
        let mut offsets: Vec<(usize, usize)> = (0..bytes.len()).map(|i| (i, i + 1)).collect();

        // Repeatedly apply the lowest-ranked merge present anywhere in the
        // sequence. Lower rank = learned earlier = applied first, matching
        // how the training corpus itself was merged.
        loop {
            let mut best_rank = u32::MAX;
            for pair in ids.windows(2) {
                if let Some(&r) = self.rank.get(&(pair[0], pair[1])) {
                    if r < best_rank {
                        best_rank = r;
                    }
                }
            }
            if best_rank == u32::MAX {
                break;
            }
            let pair = self.merges[best_rank as usize];
            let new_id = FIRST_MERGE_ID + best_rank;
            let mut w = 0;
            let mut r = 0;
            while r < ids.len() {
                if r + 1 < ids.len() && ids[r] == pair.0 && ids[r + 1] == pair.1 {
                    ids[w] = new_id;
                    offsets[w] = (offsets[r].0, offsets[r + 1].1);
                    r += 2;
                } else {
                    ids[w] = ids[r];
                    offsets[w] = offsets[r];
                    r += 1;
                }
                w += 1;
            }
            ids.truncate(w);
            offsets.truncate(w);
        }
        Encoding { ids, offsets }
    }

    /// Concatenated byte expansions; special ids contribute nothing.
    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let exp = self
                .expansions
                .get(id as usize)
                .ok_or_else(|| Error::invalid(format!("unknown token id {id}")))?;
            out.extend_from_slice(exp);
        }
        Ok(out)
    }

    /// Decode to a string. Sequences produced by [`Vocab::encode`] always
    /// succeed; arbitrary id lists may split a multi-byte character.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        String::from_utf8(self.decode_bytes(ids)?)
            .map_err(|_| Error::invalid("decoded bytes are not valid UTF-8"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        writeln!(
            w,
            "{FILE_HEADER_TAG} {FILE_VERSION} size={} specials={}",
            self.size(),
            SPECIAL_NAMES.join(",")
        )?;
        for b in 0u16..256 {
            writeln!(w, "{}", escape_bytes(&[b as u8]))?;
        }
        // A merge line carries both halves so the pair — not just the joined
        // bytes — survives the round trip (the split can be ambiguous).
        for &(left, right) in &self.merges {
            writeln!(
                w,
                "{} {}",
                escape_bytes(self.expansion(left)),
                escape_bytes(self.expansion(right))
            )?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocab> {
        let reader = BufReader::new(File::open(path)?);
        Self::read_from(reader)
    }

    pub fn read_from(r: impl BufRead) -> Result<Vocab> {
        let parse_err = |line: usize, msg: String| Error::Parse { line, msg };
        let mut lines = r.lines().enumerate();

        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty vocabulary file".into()))?;
        let header = header?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some(FILE_HEADER_TAG) || fields.next() != Some(FILE_VERSION) {
            return Err(parse_err(
                1,
                format!("expected header '{FILE_HEADER_TAG} {FILE_VERSION} ...', got '{header}'"),
            ));
        }
        let mut declared_size = None;
        for field in fields {
            if let Some(v) = field.strip_prefix("size=") {
                declared_size = Some(v.parse::<usize>().map_err(|e| {
                    parse_err(1, format!("bad size field '{v}': {e}"))
                })?);
            } else if let Some(v) = field.strip_prefix("specials=") {
                if v != SPECIAL_NAMES.join(",") {
                    return Err(parse_err(1, format!("unsupported special-token list '{v}'")));
                }
            }
        }
        let declared_size =
            declared_size.ok_or_else(|| parse_err(1, "header missing size field".into()))?;

        let mut vocab = Vocab::base();
        let mut bytes_seen: usize = 0;
        for (idx, line) in lines {
            let line_no = idx + 1; // 1-based for error reporting
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut halves = line.split(' ');
            let first = halves.next().unwrap_or("");
            match halves.next() {
                None => {
                    // Byte-token line: must match the next expected byte.
                    if bytes_seen >= 256 {
                        return Err(parse_err(
                            line_no,
                            "expected a merge line (two halves), got one token".into(),
                        ));
                    }
                    let bytes = unescape_bytes(first, line_no)?;
                    if bytes != [bytes_seen as u8] {
                        return Err(parse_err(
                            line_no,
                            format!("byte token {bytes_seen} out of order"),
                        ));
                    }
                    bytes_seen += 1;
                }
                Some(second) => {
                    if halves.next().is_some() {
                        return Err(parse_err(line_no, "more than two halves on merge line".into()));
                    }
                    if bytes_seen != 256 {
                        return Err(parse_err(
                            line_no,
                            format!("merge line before all 256 byte tokens ({bytes_seen} seen)"),
                        ));
                    }
                    let left_bytes = unescape_bytes(first, line_no)?;
                    let right_bytes = unescape_bytes(second, line_no)?;
                    let left = vocab.lookup.get(&left_bytes).copied().ok_or_else(|| {
                        parse_err(line_no, format!("unknown left half '{first}'"))
                    })?;
                    let right = vocab.lookup.get(&right_bytes).copied().ok_or_else(|| {
                        parse_err(line_no, format!("unknown right half '{second}'"))
                    })?;
                    let merged = vocab.merged_bytes((left, right));
                    if vocab.lookup.contains_key(&merged) {
                        return Err(parse_err(line_no, "duplicate token byte string".into()));
                    }
                    let new_id = vocab.expansions.len() as u32;
                    vocab.rank.insert((left, right), vocab.merges.len() as u32);
                    vocab.merges.push((left, right));
                    vocab.lookup.insert(merged.clone(), new_id);
                    vocab.expansions.push(merged);
                }
            }
        }
        if vocab.size() != declared_size {
            return Err(Error::invalid(format!(
                "vocabulary file declares {declared_size} tokens but defines {}",
                vocab.size()
            )));
        }
        Ok(vocab)
    }
}

/// Merge all occurrences of `pair` left-to-right, in place.
fn apply_merge(seq: &mut Vec<u32>, pair: (u32, u32), new_id: u32) {
    let mut w = 0;
    let mut r = 0;
    while r < seq.len() {
        if r + 1 < seq.len() && seq[r] == pair.0 && seq[r + 1] == pair.1 {
            seq[w] = new_id;
            r += 2;
        } else {
            seq[w] = seq[r];
            r += 1;
        }
        w += 1;
    }
    seq.truncate(w);
}

/// Printable ASCII stays literal; everything else becomes `\xNN`.
/// Space and backslash are escaped so token halves can be space-separated.
fn escape_bytes(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len());
    for &b in bytes {
        if (0x21..=0x7e).contains(&b) && b != b'\\' {
            out.push(b as char);
        } else {
            write!(out, "\\x{b:02x}").unwrap();
        }
    }
    out
}

fn unescape_bytes(s: &str, line: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(s.len());
    let mut chars = s.bytes();
    while let Some(b) = chars.next() {
        if b != b'\\' {
            out.push(b);
            continue;
        }
        let (x, hi, lo) = (chars.next(), chars.next(), chars.next());
        let parsed = match (x, hi, lo) {
            (Some(b'x'), Some(h), Some(l)) => {
                let hex = [h, l];
                std::str::from_utf8(&hex)
                    .ok()
                    .and_then(|s| u8::from_str_radix(s, 16).ok())
            }
            _ => None,
        };
        match parsed {
            Some(byte) => out.push(byte),
            None => {
                return Err(Error::Parse {
                    line,
                    msg: format!("bad byte escape in '{s}'"),
                })
            }
        }
    }
    Ok(out)
}

/// Count, for each word span, the tokens whose byte spans intersect it.
/// A token straddling a boundary counts toward both neighbouring words.
pub fn fertility(encoding: &Encoding, word_spans: &[(usize, usize)]) -> Result<Vec<f64>> {
    let text_end = encoding.offsets.last().map(|&(_, e)| e).unwrap_or(0);
    let mut out = Vec::with_capacity(word_spans.len());
    for (i, &(ws, we)) in word_spans.iter().enumerate() {
        if ws > we || we > text_end {
            return Err(Error::invalid(format!(
                "word span {i} ({ws}..{we}) lies outside the {text_end}-byte text"
            )));
        }
        let count = encoding
            .offsets
            .iter()
            .filter(|&&(ts, te)| ts < we && ws < te)
            .count();
        out.push(count as f64);
    }
    Ok(out)
}

/// Mean tokens-per-word over the given spans.
pub fn mean_fertility(encoding: &Encoding, word_spans: &[(usize, usize)]) -> Result<f64> {
    if word_spans.is_empty() {
        return Err(Error::EmptySelection("mean_fertility"));
    }
    let per_word = fertility(encoding, word_spans)?;
    Ok(per_word.iter().sum::<f64>() / per_word.len() as f64)
}

/// Byte spans of maximal non-whitespace runs.
pub fn whitespace_word_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                spans.push((s, i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_vocab() -> Vocab {
        Vocab::train(["the cat sat on the mat", "the bat and the rat"], 280).unwrap()
    }

    #[test]
    fn special_ids_are_fixed_and_distinct() {
        assert_eq!(Vocab::PAD, 0);
        assert_eq!(Vocab::MASK, 1);
        assert_eq!(Vocab::BOS, 2);
        assert_eq!(Vocab::EOS, 3);
        assert_eq!(Vocab::PARALLEL_SEP, 4);
        assert!(Vocab::is_special(4));
        assert!(!Vocab::is_special(5));
    }

    #[test]
    fn first_merge_on_repeated_letter_corpus() {
        // "aaaa aaaa": the (a, a) pair dominates every other adjacency.
        let vocab = Vocab::train(["aaaa aaaa"], 262).unwrap();
        assert_eq!(vocab.size(), 262);
        assert_eq!(vocab.merge_count(), 1);
        let a_id = BYTE_BASE + b'a' as u32;
        assert_eq!(vocab.merges[0], (a_id, a_id));
        assert_eq!(vocab.token_bytes(FIRST_MERGE_ID), Some(&b"aa"[..]));
    }

    #[test]
    fn merges_cross_spaces() {
        // After (a,b) → "ab", the tied pairs (" ", "ab") and ("ab", " ")
        // resolve lexicographically toward the space-led pair.
        let vocab = Vocab::train(["ab ab ab ab"], 263).unwrap();
        assert_eq!(vocab.token_bytes(FIRST_MERGE_ID), Some(&b"ab"[..]));
        assert_eq!(vocab.token_bytes(FIRST_MERGE_ID + 1), Some(&b" ab"[..]));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(Vocab::train(Vec::<String>::new(), 300).is_err());
        assert!(Vocab::train(["", ""], 300).is_err());
    }

    #[test]
    fn undersized_vocab_is_an_error() {
        assert!(Vocab::train(["text"], 261).is_err());
        assert!(Vocab::train(["text"], 0).is_err());
    }

    #[test]
    fn encode_empty_string_is_empty() {
        let vocab = tiny_vocab();
        let enc = vocab.encode("");
        assert!(enc.ids.is_empty());
        assert!(enc.offsets.is_empty());
    }

    #[test]
    fn round_trip_multilingual_samples() {
        let vocab = tiny_vocab();
        for text in [
            "the cat sat",
            "völlig unbekannt",
            "今日は良い天気です",
            "emoji: 🦀🚀",
            "mixed \t whitespace\nand\r\n newlines",
            "اللغة العربية",
        ] {
            let enc = vocab.encode(text);
            assert_eq!(vocab.decode(&enc.ids).unwrap(), text, "round trip of {text:?}");
        }
    }

    #[test]
    fn offsets_partition_the_input() {
        let vocab = tiny_vocab();
        let text = "the cat sat on the mat";
        let enc = vocab.encode(text);
        let mut cursor = 0;
        for &(s, e) in &enc.offsets {
            assert_eq!(s, cursor, "offsets must tile the input");
            assert!(e > s);
            cursor = e;
        }
        assert_eq!(cursor, text.len());
        let rebuilt: Vec<u8> = enc
            .offsets
            .iter()
            .flat_map(|&(s, e)| text.as_bytes()[s..e].to_vec())
            .collect();
        assert_eq!(rebuilt, text.as_bytes());
    }

    #[test]
    fn special_strings_in_raw_text_stay_plain_bytes() {
        let vocab = tiny_vocab();
        let text = "<|mask|> and <|eos|> are just text";
        let enc = vocab.encode(text);
        assert!(enc.ids.iter().all(|&id| !Vocab::is_special(id)));
        assert_eq!(vocab.decode(&enc.ids).unwrap(), text);
    }

    #[test]
    fn specials_decode_to_nothing() {
        let vocab = tiny_vocab();
        let mut ids = vec![Vocab::BOS];
        ids.extend_from_slice(&vocab.encode("hi").ids);
        ids.push(Vocab::EOS);
        assert_eq!(vocab.decode(&ids).unwrap(), "hi");
    }

    #[test]
    fn encode_is_deterministic() {
        let vocab = tiny_vocab();
        let a = vocab.encode("the cat sat on the mat");
        let b = vocab.encode("the cat sat on the mat");
        assert_eq!(a, b);
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = ["the cat sat on the mat", "the bat and the rat"];
        let v1 = Vocab::train(corpus, 280).unwrap();
        let v2 = Vocab::train(corpus, 280).unwrap();
        assert_eq!(v1.merges, v2.merges);
    }

    #[test]
    fn fertility_counts_tokens_per_word() {
        let vocab = tiny_vocab();
        let text = "the unbelievable";
        let enc = vocab.encode(text);
        let spans = whitespace_word_spans(text);
        assert_eq!(spans, vec![(0, 3), (4, 16)]);
        let f = fertility(&enc, &spans).unwrap();
        assert_eq!(f.len(), 2);
        // Every token count is at least 1 and the mean is consistent.
        assert!(f.iter().all(|&c| c >= 1.0));
    }

    #[test]
    fn fertility_matches_counting_oracle_on_partition() {
        // An untrained-byte situation: use a vocab whose merges never apply
        // to this text, so each byte is one token and spans partition it.
        let vocab = Vocab::train(["zzzz zzzz"], 262).unwrap();
        let text = "abc def gh";
        let enc = vocab.encode(text);
        let spans = whitespace_word_spans(text);
        let mean = mean_fertility(&enc, &spans).unwrap();
        // Tokens that fall inside spans: 3 + 3 + 2 = 8 over 3 words. The two
        // separator-space tokens intersect no span.
        assert!((mean - 8.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn fertility_span_outside_text_is_an_error() {
        let vocab = tiny_vocab();
        let enc = vocab.encode("short");
        assert!(fertility(&enc, &[(0, 99)]).is_err());
    }

    #[test]
    fn single_token_word_has_fertility_one() {
        let vocab = Vocab::train(["the the the the"], 263).unwrap();
        // "the" merges to a single token through "th"+"e".
        let enc = vocab.encode("the");
        if enc.ids.len() == 1 {
            let f = fertility(&enc, &[(0, 3)]).unwrap();
            assert_eq!(f, vec![1.0]);
        } else {
            // Regardless of merge depth the count equals the token count.
            let f = fertility(&enc, &[(0, 3)]).unwrap();
            assert_eq!(f, vec![enc.ids.len() as f64]);
        }
    }

    #[test]
    fn save_load_round_trip_preserves_encoding() {
        let vocab = tiny_vocab();
        let mut buf = Vec::new();
        vocab.write_to(&mut buf).unwrap();
        let reloaded = Vocab::read_from(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(reloaded.size(), vocab.size());
        assert_eq!(reloaded.merges, vocab.merges);
        for text in ["the cat", "unseen wörds 🙂"] {
            assert_eq!(reloaded.encode(text), vocab.encode(text));
        }
    }

    #[test]
    fn load_reports_line_numbers_on_garbage() {
        let vocab = tiny_vocab();
        let mut buf = Vec::new();
        vocab.write_to(&mut buf).unwrap();
        let mut text = String::from_utf8(buf).unwrap();
        // Corrupt the first byte-token line (line 2).
        text = text.replacen("\n\\x00\n", "\n\\xzz\n", 1);
        match Vocab::read_from(std::io::Cursor::new(text)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error with line number, got {other:?}"),
        }
    }

    #[test]
    fn escape_round_trips_all_bytes() {
        let all: Vec<u8> = (0..=255).collect();
        let escaped = escape_bytes(&all);
        assert_eq!(unescape_bytes(&escaped, 1).unwrap(), all);
        assert!(!escaped.contains(' '), "escaped form must never contain raw spaces");
    }
}
