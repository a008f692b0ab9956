//! Tokens, vocabularies, sequences and line-oriented corpora.
//!
//! Every [`Sequence`] starts with the undeletable begin marker [`Token::BOS`]
//! (id 0). The marker is never produced by tokenization, never deleted by the
//! forward process and never inserted by the reverse process. A sequence that
//! holds only the marker is the fully-noised state.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use thiserror::Error;

/// Default symbol for the begin marker in vocab files.
pub const DEFAULT_BOS_SYMBOL: &str = "<BOS>";

#[derive(Debug, Error)]
pub enum SeqError {
    #[error("unknown symbol {0:?}")]
    UnknownSymbol(String),
    #[error("symbol {0:?} is reserved for the begin marker")]
    ReservedSymbol(String),
    #[error("duplicate vocabulary symbol {0:?}")]
    DuplicateSymbol(String),
    #[error("vocabulary must contain at least the begin marker")]
    EmptyVocab,
    #[error("token id {id} out of range for vocabulary of size {size}")]
    InvalidToken { id: u32, size: usize },
    #[error("sequence must start with the begin marker")]
    MissingBos,
    #[error("begin marker found at position {0}; it may only appear at index 0")]
    MisplacedBos(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Index into a [`Vocab`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Token(pub u32);

impl Token {
    pub const BOS: Token = Token(0);

    #[inline]
    pub fn id(self) -> u32 {
        self.0
    }

    #[inline]
    pub fn is_bos(self) -> bool {
        self.0 == 0
    }

    /// Column of this token in gap-by-token matrices (the begin marker has none).
    #[inline]
    pub fn column(self) -> Option<usize> {
        (self.0 as usize).checked_sub(1)
    }

    /// Inverse of [`Token::column`].
    #[inline]
    pub fn from_column(col: usize) -> Token {
        Token(col as u32 + 1)
    }
}

/// How text is split into symbols.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TokenizeMode {
    #[default]
    Char,
    Whitespace,
}

impl TokenizeMode {
    fn split<'a>(self, text: &'a str) -> Box<dyn Iterator<Item = &'a str> + 'a> {
        match self {
            TokenizeMode::Char => Box::new(text.char_indices().map(move |(i, c)| &text[i..i + c.len_utf8()])),
            TokenizeMode::Whitespace => Box::new(text.split_whitespace()),
        }
    }

    fn separator(self) -> &'static str {
        match self {
            TokenizeMode::Char => "",
            TokenizeMode::Whitespace => " ",
        }
    }
}

impl std::str::FromStr for TokenizeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "char" | "char-level" => Ok(TokenizeMode::Char),
            "whitespace" | "word" => Ok(TokenizeMode::Whitespace),
            other => Err(format!("unknown tokenizer mode {other:?} (expected char or whitespace)")),
        }
    }
}

impl fmt::Display for TokenizeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TokenizeMode::Char => "char",
            TokenizeMode::Whitespace => "whitespace",
        })
    }
}

/// Ordered set of distinct symbols. Id 0 is always the begin marker; the
/// remaining ids are assigned densely in first-seen order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    symbols: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new(DEFAULT_BOS_SYMBOL)
    }
}

impl Vocab {
    /// A vocabulary holding only the begin marker.
    pub fn new(bos_symbol: &str) -> Self {
        let mut index = HashMap::new();
        index.insert(bos_symbol.to_string(), 0);
        Vocab {
            symbols: vec![bos_symbol.to_string()],
            index,
        }
    }

    /// Builds a vocabulary from symbols listed in id order, begin marker first.
    pub fn from_symbols<I, S>(symbols: I) -> Result<Self, SeqError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut iter = symbols.into_iter();
        let bos = iter.next().ok_or(SeqError::EmptyVocab)?.into();
        let mut vocab = Vocab::new(&bos);
        for sym in iter {
            let sym = sym.into();
            if vocab.index.contains_key(&sym) {
                return Err(SeqError::DuplicateSymbol(sym));
            }
            vocab.push(sym);
        }
        Ok(vocab)
    }

    /// Convenience for tests and tiny instances: begin marker plus one symbol per char.
    pub fn from_chars(chars: &str) -> Result<Self, SeqError> {
        Self::from_symbols(std::iter::once(DEFAULT_BOS_SYMBOL.to_string()).chain(chars.chars().map(String::from)))
    }

    fn push(&mut self, sym: String) -> Token {
        let id = self.symbols.len() as u32;
        self.index.insert(sym.clone(), id);
        self.symbols.push(sym);
        Token(id)
    }

    /// Looks up `sym`, adding it when absent.
    pub fn intern(&mut self, sym: &str) -> Result<Token, SeqError> {
        if let Some(&id) = self.index.get(sym) {
            if id == 0 {
                return Err(SeqError::ReservedSymbol(sym.to_string()));
            }
            return Ok(Token(id));
        }
        Ok(self.push(sym.to_string()))
    }

    pub fn get(&self, sym: &str) -> Result<Token, SeqError> {
        match self.index.get(sym) {
            Some(0) => Err(SeqError::ReservedSymbol(sym.to_string())),
            Some(&id) => Ok(Token(id)),
            None => Err(SeqError::UnknownSymbol(sym.to_string())),
        }
    }

    pub fn symbol(&self, token: Token) -> Option<&str> {
        self.symbols.get(token.0 as usize).map(String::as_str)
    }

    pub fn bos(&self) -> Token {
        Token::BOS
    }

    pub fn bos_symbol(&self) -> &str {
        &self.symbols[0]
    }

    /// Number of ids including the begin marker.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.len() <= 1
    }

    /// Number of tokens that can be inserted (everything but the begin marker).
    pub fn insertable(&self) -> usize {
        self.symbols.len() - 1
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// One symbol per line, line number = id, begin marker first.
    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        for sym in &self.symbols {
            writeln!(w, "{sym}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SeqError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SeqError> {
        let text = fs::read_to_string(path)?;
        Self::from_symbols(text.lines().map(|l| l.trim_end_matches('\r').to_string()))
    }
}

/// Token list with the begin marker at index 0 and nowhere else.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sequence {
    tokens: Vec<Token>,
}

impl fmt::Debug for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[BOS")?;
        for t in self.body() {
            write!(f, " {}", t.0)?;
        }
        write!(f, "]")
    }
}

impl Default for Sequence {
    fn default() -> Self {
        Self::bos_only()
    }
}

impl Sequence {
    pub fn new(tokens: Vec<Token>) -> Result<Self, SeqError> {
        match tokens.first() {
            Some(t) if t.is_bos() => {}
            _ => return Err(SeqError::MissingBos),
        }
        if let Some(pos) = tokens.iter().skip(1).position(|t| t.is_bos()) {
            return Err(SeqError::MisplacedBos(pos + 1));
        }
        Ok(Sequence { tokens })
    }

    /// The fully-noised state `[BOS]`.
    pub fn bos_only() -> Self {
        Sequence { tokens: vec![Token::BOS] }
    }

    /// Prepends the begin marker to non-marker token ids.
    pub fn from_body(ids: &[u32]) -> Result<Self, SeqError> {
        let mut tokens = Vec::with_capacity(ids.len() + 1);
        tokens.push(Token::BOS);
        tokens.extend(ids.iter().map(|&i| Token(i)));
        Self::new(tokens)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// Tokens after the begin marker.
    pub fn body(&self) -> &[Token] {
        &self.tokens[1..]
    }

    /// Length including the begin marker.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Always false: the begin marker is mandatory.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Length excluding the begin marker.
    pub fn body_len(&self) -> usize {
        self.tokens.len() - 1
    }

    /// Number of insertion gaps, one after each position including the marker.
    pub fn gaps(&self) -> usize {
        self.tokens.len()
    }

    /// `Ins(self, i, v)`: `v` placed right after position `i`.
    pub fn insert_after(&self, i: usize, v: Token) -> Sequence {
        assert!(i < self.tokens.len(), "gap {i} out of range");
        assert!(!v.is_bos(), "the begin marker is never inserted");
        let mut tokens = Vec::with_capacity(self.tokens.len() + 1);
        tokens.extend_from_slice(&self.tokens[..=i]);
        tokens.push(v);
        tokens.extend_from_slice(&self.tokens[i + 1..]);
        Sequence { tokens }
    }

    /// Keeps positions listed in `kept` (must be strictly increasing and start with 0).
    pub fn select(&self, kept: &[usize]) -> Sequence {
        debug_assert!(kept.first() == Some(&0));
        debug_assert!(kept.windows(2).all(|w| w[0] < w[1]));
        Sequence {
            tokens: kept.iter().map(|&k| self.tokens[k]).collect(),
        }
    }

    pub fn truncate(&mut self, max_len: usize) {
        self.tokens.truncate(max_len.max(1));
    }

    pub fn starts_with(&self, prefix: &Sequence) -> bool {
        self.tokens.starts_with(&prefix.tokens)
    }

    /// Every token id is valid under a vocabulary of `size` ids.
    pub fn check_vocab(&self, size: usize) -> Result<(), SeqError> {
        match self.tokens.iter().find(|t| t.0 as usize >= size) {
            Some(t) => Err(SeqError::InvalidToken { id: t.0, size }),
            None => Ok(()),
        }
    }
}

/// Splits `text` with `mode` and maps every symbol through a frozen vocabulary.
pub fn tokenize(text: &str, vocab: &Vocab, mode: TokenizeMode) -> Result<Sequence, SeqError> {
    let mut tokens = vec![Token::BOS];
    for sym in mode.split(text) {
        tokens.push(vocab.get(sym)?);
    }
    Ok(Sequence { tokens })
}

/// Like [`tokenize`], growing the vocabulary with unseen symbols.
pub fn tokenize_scan(text: &str, vocab: &mut Vocab, mode: TokenizeMode) -> Result<Sequence, SeqError> {
    let mut tokens = vec![Token::BOS];
    for sym in mode.split(text) {
        tokens.push(vocab.intern(sym)?);
    }
    Ok(Sequence { tokens })
}

/// Inverse of [`tokenize`]; the begin marker is omitted. Ids outside the
/// vocabulary render as `<unk:ID>`.
pub fn detokenize(seq: &Sequence, vocab: &Vocab, mode: TokenizeMode) -> String {
    let parts: Vec<String> = seq
        .body()
        .iter()
        .map(|&t| match vocab.symbol(t) {
            Some(s) => s.to_string(),
            None => format!("<unk:{}>", t.0),
        })
        .collect();
    parts.join(mode.separator())
}

/// Sequences read from a one-sequence-per-line text file.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub sequences: Vec<Sequence>,
    /// 1-based source line of each sequence.
    pub line_numbers: Vec<usize>,
    pub vocab: Vocab,
    pub mode: TokenizeMode,
    pub max_len: Option<usize>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Builds a corpus from in-memory lines. `vocab = None` scans a fresh vocabulary.
    pub fn from_lines<'a>(
        lines: impl IntoIterator<Item = &'a str>,
        mode: TokenizeMode,
        max_len: Option<usize>,
        vocab: Option<Vocab>,
    ) -> Result<Self, SeqError> {
        let frozen = vocab.is_some();
        let mut vocab = vocab.unwrap_or_default();
        let mut sequences = Vec::new();
        let mut line_numbers = Vec::new();
        for (idx, raw) in lines.into_iter().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let mut seq = if frozen {
                tokenize(line, &vocab, mode)?
            } else {
                tokenize_scan(line, &mut vocab, mode)?
            };
            if let Some(max) = max_len {
                seq.truncate(max);
            }
            sequences.push(seq);
            line_numbers.push(idx + 1);
        }
        Ok(Corpus {
            sequences,
            line_numbers,
            vocab,
            mode,
            max_len,
        })
    }
}

/// Reads a UTF-8 corpus, one sequence per non-empty line, truncating each
/// sequence to `max_len` tokens (begin marker included).
pub fn load_corpus(
    path: impl AsRef<Path>,
    mode: TokenizeMode,
    max_len: Option<usize>,
    vocab: Option<Vocab>,
) -> Result<Corpus, SeqError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let lines = reader.lines().collect::<Result<Vec<_>, _>>()?;
    Corpus::from_lines(lines.iter().map(String::as_str), mode, max_len, vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn abg() -> Vocab {
        Vocab::from_chars("bag").unwrap()
    }

    #[test]
    fn tokenize_char_level() {
        let v = abg();
        let s = tokenize("bag", &v, TokenizeMode::Char).unwrap();
        assert_eq!(s.tokens(), &[Token::BOS, Token(1), Token(2), Token(3)]);
        assert_eq!(detokenize(&s, &v, TokenizeMode::Char), "bag");
    }

    #[test]
    fn empty_text_is_bos_only() {
        let v = abg();
        for mode in [TokenizeMode::Char, TokenizeMode::Whitespace] {
            let s = tokenize("", &v, mode).unwrap();
            assert_eq!(s, Sequence::bos_only());
            assert_eq!(detokenize(&s, &v, mode), "");
        }
    }

    #[test]
    fn tokenize_whitespace() {
        let v = Vocab::from_symbols(["<BOS>", "a", "b"]).unwrap();
        let s = tokenize("a b", &v, TokenizeMode::Whitespace).unwrap();
        assert_eq!(s.body(), &[Token(1), Token(2)]);
        assert_eq!(detokenize(&s, &v, TokenizeMode::Whitespace), "a b");
    }

    #[test]
    fn unknown_symbol_in_frozen_vocab() {
        let v = abg();
        let err = tokenize("bad", &v, TokenizeMode::Char).unwrap_err();
        assert!(matches!(err, SeqError::UnknownSymbol(s) if s == "d"));
    }

    #[test]
    fn bos_symbol_is_reserved() {
        let mut v = Vocab::default();
        let err = tokenize_scan("x <BOS>", &mut v, TokenizeMode::Whitespace).unwrap_err();
        assert!(matches!(err, SeqError::ReservedSymbol(_)));
    }

    #[test]
    fn scan_assigns_ids_in_first_seen_order() {
        let mut v = Vocab::default();
        let s = tokenize_scan("cabac", &mut v, TokenizeMode::Char).unwrap();
        assert_eq!(v.symbols(), &["<BOS>", "c", "a", "b"]);
        assert_eq!(s.body(), &[Token(1), Token(2), Token(3), Token(2), Token(1)]);
    }

    #[test]
    fn duplicate_vocab_symbol_rejected() {
        assert!(matches!(
            Vocab::from_symbols(["<BOS>", "a", "a"]),
            Err(SeqError::DuplicateSymbol(_))
        ));
    }

    #[test]
    fn sequence_bos_invariants() {
        assert!(matches!(Sequence::new(vec![Token(1)]), Err(SeqError::MissingBos)));
        assert!(matches!(
            Sequence::new(vec![Token::BOS, Token(1), Token::BOS]),
            Err(SeqError::MisplacedBos(2))
        ));
        assert!(matches!(Sequence::new(vec![]), Err(SeqError::MissingBos)));
    }

    #[test]
    fn insert_after_places_token() {
        let s = Sequence::from_body(&[1, 3]).unwrap();
        assert_eq!(s.insert_after(0, Token(2)).body(), &[Token(2), Token(1), Token(3)]);
        assert_eq!(s.insert_after(1, Token(2)).body(), &[Token(1), Token(2), Token(3)]);
        assert_eq!(s.insert_after(2, Token(2)).body(), &[Token(1), Token(3), Token(2)]);
    }

    #[test]
    fn corpus_lines_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        fs::write(&path, "ab\nba\n").unwrap();
        let c = load_corpus(&path, TokenizeMode::Char, None, None).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.sequences.iter().all(|s| s.len() == 3));

        fs::write(&path, "").unwrap();
        let c = load_corpus(&path, TokenizeMode::Char, None, None).unwrap();
        assert!(c.is_empty());

        fs::write(&path, "abcdefg\n\nxy\n").unwrap();
        let c = load_corpus(&path, TokenizeMode::Char, Some(4), None).unwrap();
        assert_eq!(c.sequences[0].len(), 4);
        assert_eq!(c.line_numbers, vec![1, 3]);
        for s in &c.sequences {
            assert_eq!(s.tokens().iter().filter(|t| t.is_bos()).count(), 1);
            assert!(s.tokens()[0].is_bos());
        }
    }

    #[test]
    fn missing_corpus_file_is_io_error() {
        let err = load_corpus("/nonexistent/corpus.txt", TokenizeMode::Char, None, None).unwrap_err();
        assert!(matches!(err, SeqError::Io(_)));
    }

    #[test]
    fn vocab_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.txt");
        let v = Vocab::from_symbols(["<BOS>", "x", "yy", "z"]).unwrap();
        v.save(&path).unwrap();
        assert_eq!(Vocab::load(&path).unwrap(), v);
    }

    proptest! {
        #[test]
        fn char_round_trip(s in "[abg]{0,24}") {
            let v = abg();
            let seq = tokenize(&s, &v, TokenizeMode::Char).unwrap();
            prop_assert_eq!(seq.body_len(), s.chars().count());
            prop_assert_eq!(detokenize(&seq, &v, TokenizeMode::Char), s);
        }

        #[test]
        fn whitespace_round_trip(words in proptest::collection::vec("(ab|cd|e)", 0..10)) {
            let v = Vocab::from_symbols(["<BOS>", "ab", "cd", "e"]).unwrap();
            let s = words.join(" ");
            let seq = tokenize(&s, &v, TokenizeMode::Whitespace).unwrap();
            prop_assert_eq!(detokenize(&seq, &v, TokenizeMode::Whitespace), s);
        }
    }
}
