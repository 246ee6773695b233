//! Words over the alphabet {1..ℓ} and eventually periodic points of the
//! one-sided full shift.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Default cap on the number of words a single enumeration may yield.
pub const DEFAULT_WORD_BUDGET: u64 = 1 << 24;

/// Largest supported alphabet.
pub const MAX_ALPHABET: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SymbolicError {
    #[error("enumeration budget exceeded: {count} words requested, budget {budget}")]
    BudgetExceeded { count: u128, budget: u64 },
    #[error("identical sequences have no finite common prefix")]
    IdenticalSequences,
    #[error("period must not be empty")]
    EmptyPeriod,
    #[error("invalid symbol '{0}'")]
    InvalidSymbol(char),
    #[error("alphabet must have between 2 and 16 symbols, got {0}")]
    BadAlphabet(usize),
    #[error("malformed infinite word '{0}', expected pre:<digits>|per:<digits>")]
    Malformed(String),
}

/// A finite word; symbols are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Word(Vec<u8>);

impl Word {
    pub fn new(symbols: Vec<u8>) -> Self {
        debug_assert!(symbols.iter().all(|&s| s >= 1));
        Word(symbols)
    }

    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn symbols(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_symbol(&self) -> u8 {
        self.0.iter().copied().max().unwrap_or(0)
    }

    /// The `index`-th word of length `n` in lexicographic order.
    pub fn from_index(mut index: u64, n: usize, alphabet: usize) -> Self {
        let mut out = vec![1u8; n];
        for slot in out.iter_mut().rev() {
            *slot = (index % alphabet as u64) as u8 + 1;
            index /= alphabet as u64;
        }
        Word(out)
    }
}

fn symbol_char(s: u8) -> char {
    std::char::from_digit(s as u32, 17).expect("symbol in 1..=16")
}

fn parse_symbols(text: &str) -> Result<Vec<u8>, SymbolicError> {
    text.chars()
        .map(|c| match c.to_digit(17) {
            Some(v) if v >= 1 => Ok(v as u8),
            _ => Err(SymbolicError::InvalidSymbol(c)),
        })
        .collect()
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.0 {
            write!(f, "{}", symbol_char(*s))?;
        }
        Ok(())
    }
}

impl FromStr for Word {
    type Err = SymbolicError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(Word(parse_symbols(s)?))
    }
}

/// The eventually periodic sequence `pre · per · per · …`, kept in
/// canonical form (primitive period, shortest preperiod).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InfiniteWord {
    pre: Vec<u8>,
    per: Vec<u8>,
}

impl InfiniteWord {
    pub fn new(pre: Vec<u8>, per: Vec<u8>) -> Result<Self, SymbolicError> {
        if per.is_empty() {
            return Err(SymbolicError::EmptyPeriod);
        }
        let mut w = InfiniteWord { pre, per };
        w.canonicalize();
        Ok(w)
    }

    /// The constant sequence `s s s …`.
    pub fn constant(symbol: u8) -> Self {
        InfiniteWord {
            pre: Vec::new(),
            per: vec![symbol],
        }
    }

    pub fn periodic(per: Vec<u8>) -> Result<Self, SymbolicError> {
        InfiniteWord::new(Vec::new(), per)
    }

    pub fn preperiod(&self) -> &[u8] {
        &self.pre
    }

    pub fn period(&self) -> &[u8] {
        &self.per
    }

    fn canonicalize(&mut self) {
        // primitive root of the period
        let p = self.per.len();
        if let Some(q) = (1..p).find(|&q| p % q == 0 && (q..p).all(|i| self.per[i] == self.per[i - q])) {
            self.per.truncate(q);
        }
        // absorb the tail of the preperiod into the period
        while let Some(&last) = self.pre.last() {
            if last != *self.per.last().expect("non-empty period") {
                break;
            }
            self.pre.pop();
            self.per.rotate_right(1);
        }
    }

    /// Symbol at 0-based position `k`.
    pub fn symbol_at(&self, k: usize) -> u8 {
        if k < self.pre.len() {
            self.pre[k]
        } else {
            self.per[(k - self.pre.len()) % self.per.len()]
        }
    }

    /// First `n` symbols.
    pub fn prefix(&self, n: usize) -> Word {
        Word((0..n).map(|k| self.symbol_at(k)).collect())
    }

    pub fn max_symbol(&self) -> u8 {
        self.pre.iter().chain(&self.per).copied().max().unwrap_or(0)
    }

    /// σⁿ applied to this sequence.
    pub fn shift(&self, n: usize) -> InfiniteWord {
        let mut w = if n <= self.pre.len() {
            InfiniteWord {
                pre: self.pre[n..].to_vec(),
                per: self.per.clone(),
            }
        } else {
            let offset = (n - self.pre.len()) % self.per.len();
            let mut per = self.per.clone();
            per.rotate_left(offset);
            InfiniteWord { pre: Vec::new(), per }
        };
        w.canonicalize();
        w
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Longest common initial word of two distinct sequences.
pub fn common_prefix(i: &InfiniteWord, j: &InfiniteWord) -> Result<Word, SymbolicError> {
    let (pi, pj) = (i.per.len(), j.per.len());
    let horizon = i.pre.len().max(j.pre.len()) + pi / gcd(pi, pj) * pj;
    match (0..horizon).find(|&k| i.symbol_at(k) != j.symbol_at(k)) {
        Some(k) => Ok(i.prefix(k)),
        None => Err(SymbolicError::IdenticalSequences),
    }
}

impl fmt::Display for InfiniteWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pre:{}|per:{}", Word(self.pre.clone()), Word(self.per.clone()))
    }
}

impl FromStr for InfiniteWord {
    type Err = SymbolicError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let malformed = || SymbolicError::Malformed(s.to_string());
        let (pre, per) = s.split_once('|').ok_or_else(malformed)?;
        let pre = pre.trim().strip_prefix("pre:").ok_or_else(malformed)?;
        let per = per.trim().strip_prefix("per:").ok_or_else(malformed)?;
        InfiniteWord::new(parse_symbols(pre)?, parse_symbols(per)?)
    }
}

/// Lexicographic iterator over all words of a fixed length.
#[derive(Debug, Clone)]
pub struct WordIter {
    current: Option<Vec<u8>>,
    alphabet: u8,
}

impl Iterator for WordIter {
    type Item = Word;

    fn next(&mut self) -> Option<Word> {
        let out = self.current.clone()?;
        let cur = self.current.as_mut().expect("checked above");
        let mut done = true;
        for slot in cur.iter_mut().rev() {
            if *slot < self.alphabet {
                *slot += 1;
                done = false;
                break;
            }
            *slot = 1;
        }
        if done {
            self.current = None;
        }
        Some(Word(out))
    }
}

/// Number of words of length `n`, failing when above `budget`.
pub fn checked_word_count(n: usize, alphabet: usize, budget: u64) -> Result<u64, SymbolicError> {
    let mut count: u128 = 1;
    for _ in 0..n {
        count *= alphabet as u128;
        if count > budget as u128 {
            return Err(SymbolicError::BudgetExceeded { count, budget });
        }
    }
    Ok(count as u64)
}

/// All ℓⁿ words of length `n`, lexicographically.
pub fn enumerate_words(n: usize, alphabet: usize, budget: u64) -> Result<WordIter, SymbolicError> {
    if !(2..=MAX_ALPHABET).contains(&alphabet) {
        return Err(SymbolicError::BadAlphabet(alphabet));
    }
    if let Err(SymbolicError::BudgetExceeded { .. }) = checked_word_count(n, alphabet, budget) {
        // report the true size, not the partial product
        let count = (alphabet as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
        return Err(SymbolicError::BudgetExceeded { count, budget });
    }
    Ok(WordIter {
        current: Some(vec![1u8; n]),
        alphabet: alphabet as u8,
    })
}

/// `k` distinct eventually periodic sequences: the fixed points 1^∞, …, ℓ^∞
/// first, then primitive periodic words of increasing period length in
/// lexicographic order.
pub fn sample_codings(alphabet: usize, k: usize) -> Vec<InfiniteWord> {
    let mut out: Vec<InfiniteWord> = (1..=alphabet.min(k)).map(|s| InfiniteWord::constant(s as u8)).collect();
    let mut len = 2;
    while out.len() < k && len <= 8 {
        let count = (alphabet as u64).pow(len as u32);
        for idx in 0..count {
            if out.len() == k {
                break;
            }
            let w = Word::from_index(idx, len, alphabet);
            let cand = InfiniteWord::periodic(w.symbols().to_vec()).expect("non-empty period");
            if cand.period().len() == len && !out.contains(&cand) {
                out.push(cand);
            }
        }
        len += 1;
    }
    out
}

impl serde::Serialize for Word {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl serde::Serialize for InfiniteWord {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}
