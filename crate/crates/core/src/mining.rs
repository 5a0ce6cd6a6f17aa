//! Margin-based parallel passage mining.
//!
//! Mining scores candidate (xx, en) pairs with a ratio margin over cosine
//! similarities: the pair similarity divided by the average similarity of
//! each side to its k nearest neighbors on the other side. Retrieval keeps
//! raw dot products; cosine lives only here.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Pair, PairKind, PairSet};
use crate::encoder::{encode, EncoderModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginConfig {
    /// Neighborhood size for the margin denominator.
    pub k_neighbors: usize,
    /// Pairs scoring below this are dropped. 1.03 is the passage-mining
    /// operating point.
    pub threshold: f64,
    /// Keep pairs only when the best-candidate relation holds in both
    /// directions. Off by default; forward mining yields one EN partner
    /// per xx passage.
    pub bidirectional: bool,
}

impl Default for MarginConfig {
    fn default() -> Self {
        MarginConfig { k_neighbors: 4, threshold: 1.03, bidirectional: false }
    }
}

impl MarginConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_neighbors == 0 {
            return Err(Error::InvalidConfig("k_neighbors must be >= 1".into()));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::InvalidConfig("threshold must be > 0".into()));
        }
        Ok(())
    }
}

/// Margin value plus a flag for the degenerate denominator case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginScore {
    pub value: f64,
    pub degenerate: bool,
}

/// Ratio margin: cos(x, y) over the mean of the two neighborhood
/// averages. `nn_x` and `nn_y` are cosine similarities of each side to its
/// nearest neighbors on the opposite side; only the first k entries count.
pub fn margin_score(x: &[f64], y: &[f64], nn_x: &[f64], nn_y: &[f64], k: usize) -> MarginScore {
    margin_from_cos(cosine(x, y), nn_x, nn_y, k)
}

fn margin_from_cos(cos_xy: f64, nn_x: &[f64], nn_y: &[f64], k: usize) -> MarginScore {
    let k_eff = k.max(1);
    let denom = nn_x.iter().take(k_eff).sum::<f64>() / (2 * k_eff) as f64
        + nn_y.iter().take(k_eff).sum::<f64>() / (2 * k_eff) as f64;
    if denom > 0.0 {
        MarginScore { value: cos_xy / denom, degenerate: false }
    } else {
        MarginScore { value: 0.0, degenerate: true }
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na > 0.0 && nb > 0.0 {
        dot / (na * nb)
    } else {
        0.0
    }
}

/// Top-k values of a slice in descending order.
fn top_k(values: impl Iterator<Item = f64>, k: usize) -> Vec<f64> {
    let mut all: Vec<f64> = values.collect();
    all.sort_unstable_by(|a, b| b.partial_cmp(a).expect("finite cosine"));
    all.truncate(k);
    all
}

/// Forward-direction mining: for each xx passage, pick its best EN
/// candidate by margin score and keep the pair when the score clears the
/// threshold. Output is sorted by xx id, so parallelism never changes it.
pub fn mine_bitext(
    xx_corpus: &Corpus,
    en_corpus: &Corpus,
    model: &EncoderModel,
    cfg: &MarginConfig,
) -> Result<PairSet> {
    cfg.validate()?;
    if xx_corpus.is_empty() || en_corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let xx_vecs: Vec<Vec<f64>> = xx_corpus
        .passages()
        .par_iter()
        .map(|p| encode(model, &p.text))
        .collect::<Result<_>>()?;
    let en_vecs: Vec<Vec<f64>> = en_corpus
        .passages()
        .par_iter()
        .map(|p| encode(model, &p.text))
        .collect::<Result<_>>()?;

    // Full cosine matrix, xx rows by en columns.
    let cos: Vec<Vec<f64>> = xx_vecs
        .par_iter()
        .map(|x| en_vecs.iter().map(|e| cosine(x, e)).collect())
        .collect();

    let k = cfg.k_neighbors.min(xx_corpus.len()).min(en_corpus.len());
    let nn_xx: Vec<Vec<f64>> = cos.par_iter().map(|row| top_k(row.iter().copied(), k)).collect();
    let nn_en: Vec<Vec<f64>> = (0..en_corpus.len())
        .into_par_iter()
        .map(|j| top_k(cos.iter().map(|row| row[j]), k))
        .collect();

    let best_for_xx = |i: usize| -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..en_corpus.len() {
            let score = margin_from_cos(cos[i][j], &nn_xx[i], &nn_en[j], k);
            if score.degenerate {
                continue;
            }
            // Ties resolve to the earlier (ascending-id-ordered) candidate.
            let better = match best {
                None => true,
                Some((bj, bv)) => {
                    score.value > bv
                        || (score.value == bv
                            && en_corpus.passages()[j].id < en_corpus.passages()[bj].id)
                }
            };
            if better {
                best = Some((j, score.value));
            }
        }
        best
    };

    let candidates: Vec<Option<(usize, usize, f64)>> = (0..xx_corpus.len())
        .into_par_iter()
        .map(|i| best_for_xx(i).map(|(j, v)| (i, j, v)))
        .collect();

    let reverse_best: Option<Vec<Option<usize>>> = if cfg.bidirectional {
        Some(
            (0..en_corpus.len())
                .into_par_iter()
                .map(|j| {
                    let mut best: Option<(usize, f64)> = None;
                    for i in 0..xx_corpus.len() {
                        let score = margin_from_cos(cos[i][j], &nn_xx[i], &nn_en[j], k);
                        if score.degenerate {
                            continue;
                        }
                        let better = match best {
                            None => true,
                            Some((bi, bv)) => {
                                score.value > bv
                                    || (score.value == bv
                                        && xx_corpus.passages()[i].id < xx_corpus.passages()[bi].id)
                            }
                        };
                        if better {
                            best = Some((i, score.value));
                        }
                    }
                    best.map(|(i, _)| i)
                })
                .collect(),
        )
    } else {
        None
    };

    let mut mined: Vec<Pair> = candidates
        .into_iter()
        .flatten()
        .filter(|(_, _, v)| *v >= cfg.threshold)
        .filter(|(i, j, _)| match &reverse_best {
            Some(rev) => rev[*j] == Some(*i),
            None => true,
        })
        .map(|(i, j, v)| Pair {
            xx_id: xx_corpus.passages()[i].id.clone(),
            en_id: Some(en_corpus.passages()[j].id.clone()),
            score: Some(v),
        })
        .collect();
    mined.sort_by(|a, b| a.xx_id.cmp(&b.xx_id));

    let mut set = PairSet::new(PairKind::Pseudo);
    for pair in mined {
        set.push(pair)?;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LangCode, Passage};
    use crate::encoder::FeaturizerConfig;

    /// Vectors with an exact cosine of 0.9: (1, 0) against (0.9, sqrt(0.19)).
    fn cos_09_pair() -> (Vec<f64>, Vec<f64>) {
        (vec![1.0, 0.0], vec![0.9, (0.19f64).sqrt()])
    }

    #[test]
    fn self_consistent_neighborhood_scores_one() {
        let (x, y) = cos_09_pair();
        let s = margin_score(&x, &y, &[0.9, 0.9, 0.9, 0.9], &[0.9, 0.9, 0.9, 0.9], 4);
        assert!(!s.degenerate);
        assert!((s.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn margin_is_the_ratio_to_the_neighborhood_mean() {
        // Both neighborhood averages 0.6 gives 0.9 / 0.6 = 1.5.
        let (x, y) = cos_09_pair();
        let s = margin_score(&x, &y, &[0.8, 0.6, 0.5, 0.5], &[0.7, 0.7, 0.5, 0.5], 4);
        assert!((s.value - 1.5).abs() < 1e-12);
    }

    #[test]
    fn non_positive_denominator_is_degenerate() {
        let s = margin_score(&[1.0, 0.0], &[0.5, 0.5], &[-0.4, -0.4], &[-0.2, -0.2], 2);
        assert!(s.degenerate);
        assert_eq!(s.value, 0.0);
    }

    #[test]
    fn margin_score_is_invariant_under_positive_scaling() {
        let (x, y) = cos_09_pair();
        let x4: Vec<f64> = x.iter().map(|v| 4.0 * v).collect();
        let y4: Vec<f64> = y.iter().map(|v| 4.0 * v).collect();
        let a = margin_score(&x, &y, &[0.8, 0.7], &[0.6, 0.5], 2);
        let b = margin_score(&x4, &y4, &[0.8, 0.7], &[0.6, 0.5], 2);
        assert!((a.value - b.value).abs() < 1e-12);
    }

    #[test]
    fn cosine_is_scale_invariant() {
        let a = vec![0.3, -1.2, 0.7];
        let b = vec![1.1, 0.4, -0.9];
        let a3: Vec<f64> = a.iter().map(|x| 3.5 * x).collect();
        let b7: Vec<f64> = b.iter().map(|x| 7.25 * x).collect();
        assert!((cosine(&a, &b) - cosine(&a3, &b7)).abs() < 1e-12);
    }

    fn lang_corpus(lang: &str, texts: &[&str]) -> Corpus {
        let mut c = Corpus::new();
        for (i, t) in texts.iter().enumerate() {
            c.insert(Passage {
                id: format!("{lang}-{i:03}"),
                lang: LangCode::new(lang),
                text: t.to_string(),
                keyphrases: vec![],
            })
            .unwrap();
        }
        c
    }

    fn mining_model() -> EncoderModel {
        let cfg = FeaturizerConfig { ngram_min: 2, ngram_max: 3, num_buckets: 2048, hash_seed: 17 };
        let mut m = EncoderModel::new(cfg, 16).unwrap();
        for (i, w) in m.projection.data.iter_mut().enumerate() {
            *w = (((i * 2654435761) % 997) as f64 / 997.0 - 0.5) * 0.3;
        }
        m
    }

    #[test]
    fn duplicated_corpus_mines_the_identity_mapping() {
        let texts = [
            "alpine lake reflections",
            "desert canyon sunrise",
            "harbor lights at dusk",
            "meadow wildflower field",
            "volcanic ash plume",
            "frozen river crossing",
        ];
        let xx = lang_corpus("DE", &texts);
        let en = lang_corpus("EN", &texts);
        let cfg = MarginConfig { threshold: 1.0, ..Default::default() };
        let mined = mine_bitext(&xx, &en, &mining_model(), &cfg).unwrap();
        assert_eq!(mined.len(), texts.len());
        for pair in &mined.pairs {
            let i: usize = pair.xx_id[3..].parse().unwrap();
            assert_eq!(pair.en_id.as_deref().unwrap(), format!("EN-{i:03}"));
            assert!(pair.score.unwrap() >= 1.0);
        }
    }

    #[test]
    fn infinite_threshold_mines_nothing() {
        let xx = lang_corpus("DE", &["alpha beta", "gamma delta"]);
        let en = lang_corpus("EN", &["alpha beta", "gamma delta"]);
        let cfg = MarginConfig { threshold: f64::INFINITY, ..Default::default() };
        let mined = mine_bitext(&xx, &en, &mining_model(), &cfg).unwrap();
        assert!(mined.is_empty());
    }

    #[test]
    fn raising_the_threshold_never_adds_pairs() {
        let xx = lang_corpus("DE", &["aa bb cc", "dd ee ff", "gg hh ii", "jj kk ll"]);
        let en = lang_corpus("EN", &["aa bb cc", "dd ee zz", "gg hh ii", "mm nn oo"]);
        let m = mining_model();
        let mut prev: Option<Vec<(String, String)>> = None;
        for threshold in [1.4, 1.2, 1.05, 1.0, 0.8] {
            let cfg = MarginConfig { threshold, ..Default::default() };
            let mined = mine_bitext(&xx, &en, &m, &cfg).unwrap();
            let keys: Vec<(String, String)> = mined
                .pairs
                .iter()
                .map(|p| (p.xx_id.clone(), p.en_id.clone().unwrap()))
                .collect();
            if let Some(prev_keys) = &prev {
                for key in prev_keys {
                    assert!(keys.contains(key), "tightened threshold must shrink the set");
                }
            }
            prev = Some(keys);
        }
    }

    #[test]
    fn mining_is_deterministic_and_scale_invariant() {
        let xx = lang_corpus("DE", &["aa bb cc", "dd ee ff", "gg hh ii"]);
        let en = lang_corpus("EN", &["aa bb cc", "dd ee ff", "zz yy xx"]);
        let m = mining_model();
        let cfg = MarginConfig { threshold: 0.5, ..Default::default() };
        let a = mine_bitext(&xx, &en, &m, &cfg).unwrap();
        let b = mine_bitext(&xx, &en, &m, &cfg).unwrap();
        assert_eq!(a, b);

        let mut scaled = m.clone();
        for w in scaled.projection.data.iter_mut() {
            *w *= 4.0;
        }
        let c = mine_bitext(&xx, &en, &scaled, &cfg).unwrap();
        assert_eq!(a.len(), c.len());
        for (pa, pc) in a.pairs.iter().zip(&c.pairs) {
            assert_eq!(pa.xx_id, pc.xx_id);
            assert_eq!(pa.en_id, pc.en_id);
            let rel = (pa.score.unwrap() - pc.score.unwrap()).abs()
                / pa.score.unwrap().abs().max(1e-12);
            assert!(rel < 1e-9);
        }
    }
}
