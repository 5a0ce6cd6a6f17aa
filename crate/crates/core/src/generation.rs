//! Code-mixed sequence assembly, desk-scale keyphrase generators, and the
//! file-exchange protocol for external neural generators.
//!
//! Input layout: `[ENKPS] kp1 [SEP] kp2 [CTX] <passage> [<LANG>]`, with the
//! keyphrase segment empty in the base-generator case. Target layout:
//! `[<LANG>] kp1 [SEP] kp2`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_phrase, Corpus, LangCode, Passage};
use crate::error::{Error, Result};

pub const ENKPS_TOKEN: &str = "[ENKPS]";
pub const SEP_TOKEN: &str = "[SEP]";
pub const CTX_TOKEN: &str = "[CTX]";

/// Which generator backs a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// Position- and frequency-scored candidates from the passage itself.
    ExtractiveBase,
    /// Extractive candidates merged with lexicon projections of retrieved
    /// English keyphrases.
    LexiconAugmented,
    /// Predictions supplied through a file by an external generator.
    ExternalFile,
}

/// One generation input: the source passage with whatever English
/// keyphrases retrieval produced (possibly none).
#[derive(Debug, Clone, PartialEq)]
pub struct CodeMixInput {
    pub retrieved_kps: Vec<String>,
    pub source_passage: Passage,
    pub lang: LangCode,
}

impl CodeMixInput {
    pub fn new(retrieved_kps: Vec<String>, source_passage: Passage) -> Self {
        let lang = source_passage.lang.clone();
        CodeMixInput { retrieved_kps, source_passage, lang }
    }
}

/// `[ENKPS] kp1 [SEP] kp2 [CTX] <passage> [<LANG>]`, single spaces between
/// tokens. With no retrieved keyphrases the segment between the first two
/// control tokens is empty.
pub fn assemble_codemix_input(input: &CodeMixInput) -> String {
    let mut parts: Vec<&str> = Vec::with_capacity(input.retrieved_kps.len() * 2 + 3);
    parts.push(ENKPS_TOKEN);
    for (i, kp) in input.retrieved_kps.iter().enumerate() {
        if i > 0 {
            parts.push(SEP_TOKEN);
        }
        parts.push(kp);
    }
    parts.push(CTX_TOKEN);
    parts.push(&input.source_passage.text);
    let lang_token = format!("[{}]", input.lang.as_str());
    let mut out = parts.join(" ");
    out.push(' ');
    out.push_str(&lang_token);
    out
}

/// `[<LANG>] kp1 [SEP] kp2 ... [SEP] kpn`.
pub fn assemble_target(keyphrases: &[String], lang: &LangCode) -> Result<String> {
    if keyphrases.is_empty() {
        return Err(Error::EmptyTarget(format!("lang {}", lang.as_str())));
    }
    let mut out = format!("[{}]", lang.as_str());
    for (i, kp) in keyphrases.iter().enumerate() {
        if i > 0 {
            out.push_str(&format!(" {SEP_TOKEN}"));
        }
        out.push(' ');
        out.push_str(kp);
    }
    Ok(out)
}

/// Inverse of `assemble_target` on well-formed input. Repeated separators
/// are tolerated; empty segments are dropped.
pub fn parse_target(seq: &str) -> Result<(LangCode, Vec<String>)> {
    let s = seq.trim_start();
    let close = s
        .find(']')
        .filter(|_| s.starts_with('['))
        .ok_or_else(|| Error::MissingLangToken(seq.to_string()))?;
    let code = &s[1..close];
    let lang = LangCode::new(code);
    if !lang.is_well_formed() {
        return Err(Error::MissingLangToken(seq.to_string()));
    }
    let rest = &s[close + 1..];
    let keyphrases = rest
        .split(SEP_TOKEN)
        .map(str::trim)
        .filter(|seg| !seg.is_empty())
        .map(String::from)
        .collect();
    Ok((lang, keyphrases))
}

/// Control tokens that may not appear inside exported keyphrases: the
/// format's own markers and anything shaped like a language token.
pub fn find_control_token(phrase: &str) -> Option<String> {
    for tok in [SEP_TOKEN, CTX_TOKEN, ENKPS_TOKEN] {
        if phrase.contains(tok) {
            return Some(tok.to_string());
        }
    }
    let bytes = phrase.as_bytes();
    for i in 0..bytes.len().saturating_sub(3) {
        if bytes[i] == b'['
            && bytes[i + 1].is_ascii_uppercase()
            && bytes[i + 2].is_ascii_uppercase()
            && bytes[i + 3] == b']'
        {
            return Some(phrase[i..i + 4].to_string());
        }
    }
    None
}

/// Candidate ranking shared by both desk-scale generators: score
/// descending, then first passage position, then the phrase itself.
#[derive(Debug, Clone, PartialEq)]
struct Candidate {
    score: f64,
    first_pos: usize,
}

fn rank_candidates(cands: BTreeMap<String, Candidate>, max_kps: usize) -> Vec<String> {
    let mut entries: Vec<(String, Candidate)> = cands.into_iter().collect();
    entries.sort_by(|(pa, ca), (pb, cb)| {
        cb.score
            .partial_cmp(&ca.score)
            .expect("finite scores")
            .then_with(|| ca.first_pos.cmp(&cb.first_pos))
            .then_with(|| pa.cmp(pb))
    });
    entries.into_iter().take(max_kps).map(|(p, _)| p).collect()
}

fn extractive_candidates(passage: &Passage) -> (BTreeMap<String, Candidate>, usize) {
    let normalized = normalize_phrase(&passage.text);
    let tokens: Vec<&str> = normalized.split(' ').filter(|t| !t.is_empty()).collect();
    let total = tokens.len();
    let mut cands: BTreeMap<String, Candidate> = BTreeMap::new();
    for n in 1..=4usize.min(total.max(1)) {
        if total < n {
            break;
        }
        for start in 0..=total - n {
            let phrase = tokens[start..start + n].join(" ");
            let entry = cands
                .entry(phrase)
                .or_insert(Candidate { score: 0.0, first_pos: start });
            entry.score += 1.0;
            entry.first_pos = entry.first_pos.min(start);
        }
    }
    // score = count / (1 + first_pos / total)
    for cand in cands.values_mut() {
        cand.score /= 1.0 + cand.first_pos as f64 / total as f64;
    }
    (cands, total)
}

/// Base generator: word n-grams (1..=4 tokens) of the passage scored by
/// count over positional discount, top `max_kps` after normalization and
/// dedup. Deterministic.
pub fn extractive_generate(passage: &Passage, max_kps: usize) -> Vec<String> {
    let (cands, _) = extractive_candidates(passage);
    rank_candidates(cands, max_kps)
}

/// Cross-lingual phrase associations learned from paired keyphrase lists:
/// normalized EN phrase to (normalized XX phrase, count).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhraseLexicon {
    pub entries: BTreeMap<String, BTreeMap<String, u64>>,
    /// Pairs skipped during the build because a side had no keyphrases.
    pub skipped_pairs: usize,
}

impl PhraseLexicon {
    pub fn add(&mut self, en_phrase: &str, xx_phrase: &str, count: u64) {
        let en = normalize_phrase(en_phrase);
        let xx = normalize_phrase(xx_phrase);
        if en.is_empty() || xx.is_empty() {
            return;
        }
        *self.entries.entry(en).or_default().entry(xx).or_insert(0) += count;
    }

    pub fn project(&self, en_phrase: &str) -> Option<&BTreeMap<String, u64>> {
        self.entries.get(&normalize_phrase(en_phrase))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Count every (EN keyphrase, XX keyphrase) co-occurrence across the gold
/// parallel pairs. Pairs missing keyphrases on either side are skipped and
/// counted.
pub fn build_lexicon(
    par: &crate::corpus::PairSet,
    xx_corpus: &Corpus,
    en_corpus: &Corpus,
) -> Result<PhraseLexicon> {
    if par.kind != crate::corpus::PairKind::Par {
        return Err(Error::WrongPairKind { expected: "PAR", found: par.kind.as_str() });
    }
    let mut lexicon = PhraseLexicon::default();
    for pair in &par.pairs {
        let xx = xx_corpus
            .get(&pair.xx_id)
            .ok_or_else(|| Error::DanglingPairId { side: "xx", id: pair.xx_id.clone() })?;
        let en_id = pair.en_id.as_deref().ok_or(Error::MalformedLine {
            line: 0,
            msg: "PAR pair missing en_id".into(),
        })?;
        let en = en_corpus
            .get(en_id)
            .ok_or_else(|| Error::DanglingPairId { side: "en", id: en_id.to_string() })?;
        if xx.keyphrases.is_empty() || en.keyphrases.is_empty() {
            lexicon.skipped_pairs += 1;
            continue;
        }
        for en_kp in &en.keyphrases {
            for xx_kp in &xx.keyphrases {
                lexicon.add(en_kp, xx_kp, 1);
            }
        }
    }
    Ok(lexicon)
}

/// Retrieval-augmented generator: extractive candidates merged with
/// lexicon projections of the retrieved English keyphrases. A projection
/// scores lexicon count times a rank weight of 1/(1+rank); duplicate
/// projections of one phrase sum. With no retrieved keyphrases the output
/// equals `extractive_generate` exactly.
pub fn augmented_generate(
    passage: &Passage,
    retrieved_en_kps: &[String],
    lexicon: &PhraseLexicon,
    max_kps: usize,
) -> Vec<String> {
    let (mut cands, _) = extractive_candidates(passage);
    for (rank, en_kp) in retrieved_en_kps.iter().enumerate() {
        if let Some(projections) = lexicon.project(en_kp) {
            let weight = 1.0 / (1.0 + rank as f64);
            for (xx_phrase, count) in projections {
                let entry = cands
                    .entry(xx_phrase.clone())
                    .or_insert(Candidate { score: 0.0, first_pos: usize::MAX });
                entry.score += *count as f64 * weight;
            }
        }
    }
    rank_candidates(cands, max_kps)
}

/// One line of the exported code-mix dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeMixRecord {
    pub id: String,
    pub source: String,
    pub target: String,
}

/// Export generation training/eval data: one record per example with the
/// assembled source and target sequences. Keyphrases carrying control
/// tokens are rejected rather than escaped.
pub fn export_codemix_dataset(
    examples: &[CodeMixInput],
    path: &Path,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        for kp in ex.retrieved_kps.iter().chain(&ex.source_passage.keyphrases) {
            if let Some(token) = find_control_token(kp) {
                return Err(Error::ControlTokenInPhrase { phrase: kp.clone(), token });
            }
        }
        let target = assemble_target(&ex.source_passage.keyphrases, &ex.lang)
            .map_err(|_| Error::EmptyTarget(format!("id '{}'", ex.source_passage.id)))?;
        let record = CodeMixRecord {
            id: ex.source_passage.id.clone(),
            source: assemble_codemix_input(ex),
            target,
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PredictionRecord {
    id: String,
    keyphrases: Vec<String>,
}

/// Read a predictions file: one `{"id", "keyphrases"}` record per line,
/// keyphrases normalized on import. Extra fields are ignored, so a corpus
/// file doubles as a gold predictions file.
pub fn import_predictions(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut out: Vec<(String, Vec<String>)> = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: lineno,
                msg: e.to_string(),
            })?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::MalformedLine {
                line: lineno,
                msg: format!("duplicate prediction id '{}'", record.id),
            });
        }
        let kps = record
            .keyphrases
            .iter()
            .map(|k| normalize_phrase(k))
            .filter(|k| !k.is_empty())
            .collect();
        out.push((record.id, kps));
    }
    Ok(out)
}

/// Predictions matched up with gold examples, in corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPrediction {
    pub id: String,
    pub lang: LangCode,
    pub gold: Vec<String>,
    pub pred: Vec<String>,
    /// No prediction record existed for this id; scored with an empty set.
    pub missing: bool,
}

/// Join predictions against the gold corpus. A prediction for an unknown
/// id is an error; gold examples without predictions are kept and flagged.
pub fn align_predictions(
    gold: &Corpus,
    predictions: &[(String, Vec<String>)],
) -> Result<Vec<AlignedPrediction>> {
    let mut by_id: HashMap<&str, &Vec<String>> = HashMap::new();
    for (id, kps) in predictions {
        if !gold.contains(id) {
            return Err(Error::UnknownPredictionId(id.clone()));
        }
        by_id.insert(id.as_str(), kps);
    }
    Ok(gold
        .passages()
        .iter()
        .map(|p| {
            let pred = by_id.get(p.id.as_str());
            AlignedPrediction {
                id: p.id.clone(),
                lang: p.lang.clone(),
                gold: p.keyphrases.clone(),
                pred: pred.map(|v| (*v).clone()).unwrap_or_default(),
                missing: pred.is_none(),
            }
        })
        .collect())
}
