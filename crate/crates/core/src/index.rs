//! Exact dense retrieval over English passage vectors.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, PairKind, PairSet};
use crate::encoder::{encode, EncoderModel};
use crate::error::{Error, Result};

/// What text was encoded for each passage: the passage itself, the joined
/// keyphrase string, or keyphrases plus passage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TargetMode {
    P2P,
    P2K,
    P2PK,
}

impl TargetMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TargetMode::P2P => "P2P",
            TargetMode::P2K => "P2K",
            TargetMode::P2PK => "P2PK",
        }
    }

    fn code(&self) -> u8 {
        match self {
            TargetMode::P2P => 0,
            TargetMode::P2K => 1,
            TargetMode::P2PK => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(TargetMode::P2P),
            1 => Some(TargetMode::P2K),
            2 => Some(TargetMode::P2PK),
            _ => None,
        }
    }
}

impl std::str::FromStr for TargetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_uppercase().as_str() {
            "P2P" => Ok(TargetMode::P2P),
            "P2K" => Ok(TargetMode::P2K),
            "P2PK" => Ok(TargetMode::P2PK),
            other => Err(Error::InvalidConfig(format!("unknown target mode '{other}'"))),
        }
    }
}

/// Immutable id-addressable matrix of passage vectors. Vectors are stored
/// at f32, which is also the on-disk precision, so a save/load cycle never
/// changes search results.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    ids: Vec<String>,
    vectors: Vec<f32>,
    dim: usize,
    pub target_mode: TargetMode,
}

impl DenseIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Build directly from (id, vector) rows, e.g. imported embeddings.
    pub fn from_vectors(
        rows: Vec<(String, Vec<f32>)>,
        target_mode: TargetMode,
    ) -> Result<DenseIndex> {
        if rows.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let dim = rows[0].1.len();
        let mut ids = Vec::with_capacity(rows.len());
        let mut vectors = Vec::with_capacity(rows.len() * dim);
        let mut seen = std::collections::HashSet::new();
        for (id, v) in rows {
            if v.len() != dim {
                return Err(Error::DimensionMismatch { left: v.len(), right: dim });
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidConfig(format!("non-finite vector for id '{id}'")));
            }
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId(id));
            }
            ids.push(id);
            vectors.extend_from_slice(&v);
        }
        Ok(DenseIndex { ids, vectors, dim, target_mode })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e| Error::io(path, e);
        w.write_all(INDEX_MAGIC).map_err(io_err)?;
        w.write_all(&INDEX_VERSION.to_le_bytes()).map_err(io_err)?;
        w.write_all(&(self.len() as u64).to_le_bytes()).map_err(io_err)?;
        w.write_all(&(self.dim as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(&[self.target_mode.code()]).map_err(io_err)?;
        for id in &self.ids {
            w.write_all(&(id.len() as u32).to_le_bytes()).map_err(io_err)?;
            w.write_all(id.as_bytes()).map_err(io_err)?;
        }
        for v in &self.vectors {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<DenseIndex> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let bad =
            |msg: &str| Error::BadIndexFile { path: path.display().to_string(), msg: msg.into() };

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != INDEX_MAGIC {
            return Err(bad("wrong magic"));
        }
        let mut buf4 = [0u8; 4];
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf4).map_err(|_| bad("truncated header"))?;
        if u32::from_le_bytes(buf4) != INDEX_VERSION {
            return Err(bad("unsupported version"));
        }
        r.read_exact(&mut buf8).map_err(|_| bad("truncated header"))?;
        let count = u64::from_le_bytes(buf8) as usize;
        r.read_exact(&mut buf4).map_err(|_| bad("truncated header"))?;
        let dim = u32::from_le_bytes(buf4) as usize;
        let mut mode = [0u8; 1];
        r.read_exact(&mut mode).map_err(|_| bad("truncated header"))?;
        let target_mode = TargetMode::from_code(mode[0]).ok_or_else(|| bad("bad target mode"))?;

        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut buf4).map_err(|_| bad("truncated id table"))?;
            let len = u32::from_le_bytes(buf4) as usize;
            let mut id = vec![0u8; len];
            r.read_exact(&mut id).map_err(|_| bad("truncated id table"))?;
            ids.push(String::from_utf8(id).map_err(|_| bad("non-UTF-8 id"))?);
        }
        let mut vectors = Vec::with_capacity(count * dim);
        for _ in 0..count * dim {
            r.read_exact(&mut buf4).map_err(|_| bad("truncated vectors"))?;
            vectors.push(f32::from_le_bytes(buf4));
        }
        Ok(DenseIndex { ids, vectors, dim, target_mode })
    }
}

const INDEX_MAGIC: &[u8; 4] = b"PKIX";
const INDEX_VERSION: u32 = 1;

/// The text a passage contributes to the index under a target mode.
pub fn index_text(passage: &crate::corpus::Passage, mode: TargetMode) -> Result<String> {
    use crate::generation::{CTX_TOKEN, SEP_TOKEN};
    match mode {
        TargetMode::P2P => Ok(passage.text.clone()),
        TargetMode::P2K | TargetMode::P2PK => {
            if passage.keyphrases.is_empty() {
                return Err(Error::MissingKeyphrases(passage.id.clone()));
            }
            let kps = passage.keyphrases.join(&format!(" {SEP_TOKEN} "));
            match mode {
                TargetMode::P2K => Ok(kps),
                _ => Ok(format!("{kps} {CTX_TOKEN} {}", passage.text)),
            }
        }
    }
}

/// Encode every passage of the corpus (in insertion order) into one vector.
pub fn build_index(corpus: &Corpus, model: &EncoderModel, target_mode: TargetMode) -> Result<DenseIndex> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let rows: Vec<(String, Vec<f32>)> = corpus
        .passages()
        .par_iter()
        .map(|p| {
            let text = index_text(p, target_mode)?;
            let v = encode(model, &text)?;
            Ok((p.id.clone(), v.into_iter().map(|x| x as f32).collect()))
        })
        .collect::<Result<_>>()?;
    DenseIndex::from_vectors(rows, target_mode)
}

/// Ranked hits: scores non-increasing, ties broken by ascending passage id.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub hits: Vec<(String, f64)>,
    /// Set when k exceeded the index size and all entries were returned.
    pub clamped: bool,
}

fn score_all(index: &DenseIndex, query: &[f64]) -> Vec<f64> {
    (0..index.len())
        .map(|i| {
            index
                .vector(i)
                .iter()
                .zip(query)
                .map(|(v, q)| f64::from(*v) * q)
                .sum()
        })
        .collect()
}

/// Rank index entries for an already-encoded query vector.
pub fn search_vector(index: &DenseIndex, query: &[f64], k: usize) -> Result<SearchResult> {
    if k == 0 {
        return Err(Error::InvalidK);
    }
    if query.len() != index.dim() {
        return Err(Error::ModelIndexMismatch { model: query.len(), index: index.dim() });
    }
    let scores = score_all(index, query);
    let mut order: Vec<usize> = (0..index.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then_with(|| index.ids[a].cmp(&index.ids[b]))
    });
    let clamped = k > index.len();
    let take = k.min(index.len());
    Ok(SearchResult {
        hits: order[..take]
            .iter()
            .map(|&i| (index.ids[i].clone(), scores[i]))
            .collect(),
        clamped,
    })
}

/// Exact top-k by dot product; equivalent to a full argsort of the scores.
pub fn search(index: &DenseIndex, query_text: &str, model: &EncoderModel, k: usize) -> Result<SearchResult> {
    if model.dim() != index.dim() {
        return Err(Error::ModelIndexMismatch { model: model.dim(), index: index.dim() });
    }
    let q = encode(model, query_text)?;
    search_vector(index, &q, k)
}

/// Fraction of queries whose gold partner appears in the top k, for each k.
pub fn recall_at_k(
    index: &DenseIndex,
    model: &EncoderModel,
    xx_corpus: &Corpus,
    eval_pairs: &PairSet,
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    if eval_pairs.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    if eval_pairs.kind != PairKind::Par {
        return Err(Error::WrongPairKind { expected: "PAR", found: eval_pairs.kind.as_str() });
    }
    let max_k = ks.iter().copied().max().ok_or(Error::InvalidK)?;
    if max_k == 0 {
        return Err(Error::InvalidK);
    }

    let ranks: Vec<Option<usize>> = eval_pairs
        .pairs
        .par_iter()
        .map(|pair| {
            let passage = xx_corpus
                .get(&pair.xx_id)
                .ok_or_else(|| Error::DanglingPairId { side: "xx", id: pair.xx_id.clone() })?;
            let gold = pair.en_id.as_deref().ok_or(Error::MalformedLine {
                line: 0,
                msg: "PAR pair missing en_id".into(),
            })?;
            let result = search(index, &passage.text, model, max_k)?;
            Ok(result.hits.iter().position(|(id, _)| id == gold))
        })
        .collect::<Result<_>>()?;

    let mut out = BTreeMap::new();
    for &k in ks {
        let hits = ranks.iter().filter(|r| matches!(r, Some(rank) if *rank < k)).count();
        out.insert(k, hits as f64 / eval_pairs.len() as f64);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LangCode, Pair, Passage};
    use crate::encoder::FeaturizerConfig;

    fn corpus(entries: &[(&str, &str, &[&str])]) -> Corpus {
        let mut c = Corpus::new();
        for (id, text, kps) in entries {
            c.insert(Passage {
                id: id.to_string(),
                lang: LangCode::en(),
                text: text.to_string(),
                keyphrases: kps.iter().map(|s| s.to_string()).collect(),
            })
            .unwrap();
        }
        c
    }

    fn test_model(dim: usize) -> EncoderModel {
        let cfg = FeaturizerConfig { ngram_min: 2, ngram_max: 3, num_buckets: 1024, hash_seed: 9 };
        let mut m = EncoderModel::new(cfg, dim).unwrap();
        for (i, w) in m.projection.data.iter_mut().enumerate() {
            *w = (((i * 2654435761) % 1000) as f64 / 1000.0 - 0.5) * 0.2;
        }
        m
    }

    #[test]
    fn three_passages_three_vectors() {
        let c = corpus(&[("a", "alpha beats", &[]), ("b", "beta bites", &[]), ("c", "gamma gates", &[])]);
        let idx = build_index(&c, &test_model(8), TargetMode::P2P).unwrap();
        assert_eq!(idx.len(), 3);
        assert_eq!(idx.ids(), &["a", "b", "c"]);
    }

    #[test]
    fn build_is_deterministic() {
        let c = corpus(&[("a", "alpha beats", &[]), ("b", "beta bites", &[])]);
        let m = test_model(8);
        let i1 = build_index(&c, &m, TargetMode::P2P).unwrap();
        let i2 = build_index(&c, &m, TargetMode::P2P).unwrap();
        assert_eq!(i1, i2);
    }

    #[test]
    fn modes_share_ids_but_differ_in_vectors() {
        let c = corpus(&[
            ("a", "alpha beats", &["first phrase"]),
            ("b", "beta bites", &["second phrase"]),
        ]);
        let m = test_model(8);
        let p2p = build_index(&c, &m, TargetMode::P2P).unwrap();
        let p2pk = build_index(&c, &m, TargetMode::P2PK).unwrap();
        assert_eq!(p2p.ids(), p2pk.ids());
        assert_ne!(p2p.vectors, p2pk.vectors);
    }

    #[test]
    fn keyphrase_modes_require_keyphrases() {
        let c = corpus(&[("a", "alpha beats", &[])]);
        let err = build_index(&c, &test_model(8), TargetMode::P2K);
        assert!(matches!(err, Err(Error::MissingKeyphrases(id)) if id == "a"));
    }

    #[test]
    fn matching_vector_ranks_first() {
        // One stored vector equals the query's encoding; the rest are
        // orthogonal by construction (disjoint single-bucket texts under a
        // diagonal-ish projection).
        let cfg = FeaturizerConfig { ngram_min: 2, ngram_max: 2, num_buckets: 512, hash_seed: 3 };
        let mut m = EncoderModel::new(cfg.clone(), 4).unwrap();
        for (r, text) in ["aa", "bb", "cc", "dd"].iter().enumerate() {
            let b = crate::encoder::featurize(&cfg, text).unwrap().indices[0] as usize;
            m.projection.set(r, b, 1.0);
        }
        let c = corpus(&[("hit", "aa", &[]), ("m1", "bb", &[]), ("m2", "cc", &[])]);
        let idx = build_index(&c, &m, TargetMode::P2P).unwrap();
        let res = search(&idx, "aa", &m, 2).unwrap();
        assert_eq!(res.hits[0].0, "hit");
        assert!(res.hits[0].1 > res.hits[1].1);
    }

    #[test]
    fn full_k_returns_a_sorted_permutation() {
        let c = corpus(&[
            ("a", "alpha beats", &[]),
            ("b", "beta bites", &[]),
            ("c", "gamma gates", &[]),
            ("d", "delta dates", &[]),
        ]);
        let m = test_model(8);
        let idx = build_index(&c, &m, TargetMode::P2P).unwrap();
        let res = search(&idx, "alpha bites", &m, 4).unwrap();
        assert_eq!(res.hits.len(), 4);
        assert!(!res.clamped);
        let mut ids: Vec<&str> = res.hits.iter().map(|(id, _)| id.as_str()).collect();
        ids.sort_unstable();
        assert_eq!(ids, vec!["a", "b", "c", "d"]);
        assert!(res.hits.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn oversized_k_returns_everything_flagged() {
        let c = corpus(&[("a", "alpha beats", &[]), ("b", "beta bites", &[]), ("c", "gamma gates", &[])]);
        let m = test_model(8);
        let idx = build_index(&c, &m, TargetMode::P2P).unwrap();
        let res = search(&idx, "alpha", &m, 5).unwrap();
        assert_eq!(res.hits.len(), 3);
        assert!(res.clamped);
    }

    #[test]
    fn search_matches_brute_force_with_ties() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(21);
        let dim = 16;
        let mut rows = Vec::new();
        for i in 0..400 {
            let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            rows.push((format!("p{i:04}"), v));
        }
        // Force ties by duplicating some vectors under different ids.
        for i in 0..40 {
            let dup = rows[i].1.clone();
            rows.push((format!("q{i:04}"), dup));
        }
        let idx = DenseIndex::from_vectors(rows.clone(), TargetMode::P2P).unwrap();
        let query: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let got = search_vector(&idx, &query, 25).unwrap();

        // Brute force oracle: score, then total-order sort.
        let mut scored: Vec<(String, f64)> = rows
            .iter()
            .map(|(id, v)| {
                (id.clone(), v.iter().zip(&query).map(|(a, b)| f64::from(*a) * b).sum())
            })
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        scored.truncate(25);
        assert_eq!(got.hits, scored);
    }

    #[test]
    fn recall_is_one_when_gold_ranks_first_and_monotone() {
        // Column surgery: each query/partner pair shares a private
        // direction, the distractor sits on a third one, so every gold
        // partner scores 1 and everything else 0.
        let cfg = FeaturizerConfig { ngram_min: 2, ngram_max: 2, num_buckets: 512, hash_seed: 3 };
        let texts = ["aa", "bb", "cc", "dd", "ee"];
        let buckets: Vec<usize> = texts
            .iter()
            .map(|t| crate::encoder::featurize(&cfg, t).unwrap().indices[0] as usize)
            .collect();
        let distinct: std::collections::HashSet<_> = buckets.iter().collect();
        assert_eq!(distinct.len(), texts.len(), "bucket collision in test setup");
        let mut m = EncoderModel::new(cfg, 4).unwrap();
        m.projection.set(0, buckets[0], 1.0); // query "aa"
        m.projection.set(0, buckets[1], 1.0); // its partner "bb"
        m.projection.set(1, buckets[2], 1.0); // query "cc"
        m.projection.set(1, buckets[3], 1.0); // its partner "dd"
        m.projection.set(2, buckets[4], 1.0); // distractor "ee"

        let en = corpus(&[("a_en", "bb", &[]), ("b_en", "dd", &[]), ("z_en", "ee", &[])]);
        let mut xx = Corpus::new();
        for (id, text) in [("x1", "aa"), ("x2", "cc")] {
            xx.insert(Passage {
                id: id.into(),
                lang: LangCode::new("DE"),
                text: text.into(),
                keyphrases: vec![],
            })
            .unwrap();
        }
        let mut pairs = PairSet::new(PairKind::Par);
        pairs.push(Pair { xx_id: "x1".into(), en_id: Some("a_en".into()), score: None }).unwrap();
        pairs.push(Pair { xx_id: "x2".into(), en_id: Some("b_en".into()), score: None }).unwrap();

        let idx = build_index(&en, &m, TargetMode::P2P).unwrap();
        let recalls = recall_at_k(&idx, &m, &xx, &pairs, &[1, 2, 3]).unwrap();
        assert_eq!(recalls[&1], 1.0);
        assert_eq!(recalls[&2], 1.0);
        assert_eq!(recalls[&3], 1.0);

        // Monotonicity on a scrambled model.
        let mut scrambled = m.clone();
        for (i, w) in scrambled.projection.data.iter_mut().enumerate() {
            *w += (((i * 37) % 17) as f64 - 8.0) * 0.05;
        }
        let idx = build_index(&en, &scrambled, TargetMode::P2P).unwrap();
        let recalls = recall_at_k(&idx, &scrambled, &xx, &pairs, &[1, 2, 3]).unwrap();
        assert!(recalls[&1] <= recalls[&2] && recalls[&2] <= recalls[&3]);
        assert_eq!(recalls[&3], 1.0);
    }

    #[test]
    fn empty_eval_set_is_an_error() {
        let c = corpus(&[("a", "alpha", &[])]);
        let m = test_model(8);
        let idx = build_index(&c, &m, TargetMode::P2P).unwrap();
        let empty = PairSet::new(PairKind::Par);
        assert!(matches!(
            recall_at_k(&idx, &m, &Corpus::new(), &empty, &[1]),
            Err(Error::EmptyEvalSet)
        ));
    }

    #[test]
    fn index_round_trip_preserves_search_results() {
        let c = corpus(&[
            ("a", "alpha beats", &[]),
            ("b", "beta bites", &[]),
            ("c", "gamma gates", &[]),
        ]);
        let m = test_model(8);
        let idx = build_index(&c, &m, TargetMode::P2P).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("index.bin");
        idx.save(&p).unwrap();
        let loaded = DenseIndex::load(&p).unwrap();
        assert_eq!(loaded, idx);
        let before = search(&idx, "alpha gamma", &m, 3).unwrap();
        let after = search(&loaded, "alpha gamma", &m, 3).unwrap();
        assert_eq!(before, after);
    }
}
