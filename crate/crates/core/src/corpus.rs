//! Multilingual corpus data model: passages, pair sets, normalization,
//! line-delimited ingestion, and split management.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Uppercase two-letter language code. Codes outside the known set are
/// accepted but reported as unknown so ingest stats can flag them.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LangCode(String);

pub const KNOWN_LANGS: [&str; 7] = ["EN", "DE", "ES", "FR", "IT", "KO", "ZH"];

impl LangCode {
    pub fn new(code: &str) -> Self {
        LangCode(code.trim().to_uppercase())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_known(&self) -> bool {
        KNOWN_LANGS.contains(&self.0.as_str())
    }

    /// Well-formed codes are exactly two ASCII uppercase letters.
    pub fn is_well_formed(&self) -> bool {
        self.0.len() == 2 && self.0.bytes().all(|b| b.is_ascii_uppercase())
    }

    pub fn en() -> Self {
        LangCode("EN".to_string())
    }
}

impl fmt::Display for LangCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One document: the unit of retrieval and generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub lang: LangCode,
    pub text: String,
    pub keyphrases: Vec<String>,
}

/// Canonical phrase form used everywhere phrases are compared: NFKC,
/// lowercase, re-normalized, whitespace runs collapsed to single spaces,
/// outer whitespace stripped. Idempotent.
pub fn normalize_phrase(raw: &str) -> String {
    let folded: String = raw.nfkc().collect::<String>().to_lowercase();
    let renormalized: String = folded.nfkc().collect();
    renormalized.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Counters surfaced by `load_corpus` for data-quality reporting.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadStats {
    /// Blank lines skipped during ingestion.
    pub skipped_lines: usize,
    /// Keyphrases dropped because another phrase on the same record
    /// normalized to the same form.
    pub duplicate_keyphrases: usize,
    /// Keyphrases dropped because they normalized to the empty string.
    pub empty_keyphrases: usize,
    /// Records whose language differed from the expected one.
    pub lang_mismatches: usize,
    /// Records carrying a language code outside the known set.
    pub unknown_langs: usize,
}

/// Id-indexed passage collection. Insertion order is preserved and is the
/// canonical record order for serialization and index construction.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    passages: Vec<Passage>,
    by_id: HashMap<String, usize>,
    lang_histogram: BTreeMap<LangCode, usize>,
}

impl Corpus {
    pub fn new() -> Self {
        Corpus::default()
    }

    pub fn insert(&mut self, passage: Passage) -> Result<()> {
        if self.by_id.contains_key(&passage.id) {
            return Err(Error::DuplicateId(passage.id));
        }
        self.by_id.insert(passage.id.clone(), self.passages.len());
        *self.lang_histogram.entry(passage.lang.clone()).or_insert(0) += 1;
        self.passages.push(passage);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Passage> {
        self.by_id.get(id).map(|&i| &self.passages[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn lang_histogram(&self) -> &BTreeMap<LangCode, usize> {
        &self.lang_histogram
    }

    /// Write one JSON record per line in insertion order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for p in &self.passages {
            let line = serde_json::to_string(p)
                .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// `load_corpus` output: the corpus plus ingestion counters.
#[derive(Debug, Clone)]
pub struct CorpusLoad {
    pub corpus: Corpus,
    pub stats: LoadStats,
}

/// Load a line-delimited corpus file. Keyphrases are normalized and
/// deduplicated per record (first occurrence kept); blank lines are skipped
/// and counted; a language mismatch against `expected_lang` is a counter,
/// not an error.
pub fn load_corpus(path: &Path, expected_lang: Option<&LangCode>) -> Result<CorpusLoad> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut corpus = Corpus::new();
    let mut stats = LoadStats::default();

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            stats.skipped_lines += 1;
            continue;
        }
        let record: Passage = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: lineno,
            msg: e.to_string(),
        })?;
        if record.text.trim().is_empty() {
            return Err(Error::MalformedLine {
                line: lineno,
                msg: format!("passage '{}' has empty text", record.id),
            });
        }
        let lang = LangCode::new(record.lang.as_str());
        if !lang.is_known() {
            stats.unknown_langs += 1;
        }
        if let Some(expected) = expected_lang {
            if &lang != expected {
                stats.lang_mismatches += 1;
            }
        }

        let mut seen = HashSet::new();
        let mut keyphrases = Vec::with_capacity(record.keyphrases.len());
        for raw in &record.keyphrases {
            let norm = normalize_phrase(raw);
            if norm.is_empty() {
                stats.empty_keyphrases += 1;
            } else if seen.insert(norm.clone()) {
                keyphrases.push(norm);
            } else {
                stats.duplicate_keyphrases += 1;
            }
        }

        corpus.insert(Passage {
            id: record.id,
            lang,
            text: record.text,
            keyphrases,
        })?;
    }

    Ok(CorpusLoad { corpus, stats })
}

/// Pair collection flavor: gold parallel, non-parallel (xx side only), or
/// mined pseudo-parallel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PairKind {
    Par,
    Np,
    Pseudo,
}

impl PairKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PairKind::Par => "PAR",
            PairKind::Np => "NP",
            PairKind::Pseudo => "PSEUDO",
        }
    }
}

/// One (xx, en) pairing record. `en_id` is absent for NP records; `score`
/// is only carried by mined pseudo pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub xx_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub en_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// Typed list of pairs; order is preserved from load or canonicalized by
/// producers (miners sort by xx id).
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub kind: PairKind,
    pub pairs: Vec<Pair>,
}

impl PairSet {
    pub fn new(kind: PairKind) -> Self {
        PairSet { kind, pairs: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn xx_ids(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.xx_id.as_str())
    }

    /// Push with the duplicate and shape checks applied at load time.
    pub fn push(&mut self, pair: Pair) -> Result<()> {
        match self.kind {
            PairKind::Np => {
                if pair.en_id.is_some() {
                    return Err(Error::UnexpectedPairField { kind: "NP", field: "en_id" });
                }
                if self.pairs.iter().any(|p| p.xx_id == pair.xx_id) {
                    return Err(Error::DuplicatePair {
                        xx_id: pair.xx_id,
                        en_id: String::new(),
                    });
                }
            }
            PairKind::Par | PairKind::Pseudo => {
                let en = pair.en_id.as_deref().unwrap_or_default().to_string();
                if self
                    .pairs
                    .iter()
                    .any(|p| p.xx_id == pair.xx_id && p.en_id.as_deref() == pair.en_id.as_deref())
                {
                    return Err(Error::DuplicatePair { xx_id: pair.xx_id, en_id: en });
                }
            }
        }
        self.pairs.push(pair);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for p in &self.pairs {
            let line = serde_json::to_string(p)
                .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Load a pair file of the given kind, validating every referenced id
/// against the corpora. PAR and PSEUDO records need both sides resolvable;
/// NP records carry the xx id only.
pub fn load_pairs(
    path: &Path,
    kind: PairKind,
    xx_corpus: &Corpus,
    en_corpus: Option<&Corpus>,
) -> Result<PairSet> {
    if kind != PairKind::Np && en_corpus.is_none() {
        return Err(Error::MissingEnCorpus { kind: kind.as_str() });
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut set = PairSet::new(kind);

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: Pair = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            line: lineno,
            msg: e.to_string(),
        })?;
        if !xx_corpus.contains(&pair.xx_id) {
            return Err(Error::DanglingPairId { side: "xx", id: pair.xx_id });
        }
        match kind {
            PairKind::Np => {}
            PairKind::Par | PairKind::Pseudo => {
                let en_id = pair.en_id.as_deref().ok_or(Error::MalformedLine {
                    line: lineno,
                    msg: format!("{} record missing en_id", kind.as_str()),
                })?;
                let en = en_corpus.expect("checked above");
                if !en.contains(en_id) {
                    return Err(Error::DanglingPairId { side: "en", id: en_id.to_string() });
                }
            }
        }
        set.push(pair)?;
    }
    Ok(set)
}

/// Partition a corpus by a PAR pair set: passages named in `par` versus all
/// remaining passages. Outputs are disjoint and together cover the corpus.
pub fn split_par_np(xx_corpus: &Corpus, par: &PairSet) -> Result<(Vec<Passage>, Vec<Passage>)> {
    if par.kind != PairKind::Par {
        return Err(Error::WrongPairKind { expected: "PAR", found: par.kind.as_str() });
    }
    let mut par_ids = HashSet::new();
    let mut par_examples = Vec::new();
    for pair in &par.pairs {
        let passage = xx_corpus
            .get(&pair.xx_id)
            .ok_or_else(|| Error::DanglingPairId { side: "xx", id: pair.xx_id.clone() })?;
        if par_ids.insert(pair.xx_id.clone()) {
            par_examples.push(passage.clone());
        }
    }
    let np_examples = xx_corpus
        .passages()
        .iter()
        .filter(|p| !par_ids.contains(&p.id))
        .cloned()
        .collect();
    Ok((par_examples, np_examples))
}
