//! Deterministic synthetic bilingual corpora for tests, demos, and golden
//! runs.
//!
//! English passages are random pseudo-word sequences grouped into topics;
//! the paired language is a character-level transliteration into Greek
//! letters, applied token by token, so surface forms share nothing across
//! languages while the underlying token mapping is exact. Gold keyphrases
//! mix phrases present in the passage with per-topic label phrases that
//! never occur in any passage body, which keeps absent-keyphrase
//! prediction meaningful.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::corpus::{Corpus, LangCode, Pair, PairKind, PairSet, Passage};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub en_passages: usize,
    /// Number of EN passages that receive a translated twin.
    pub xx_passages: usize,
    pub topics: usize,
    /// Twins are drawn from this many of the topics (the first ones);
    /// equal to `topics` spreads them everywhere.
    pub xx_topics: usize,
    pub tokens_per_passage: usize,
    /// Each passage body draws this many distinct tokens and repeats them
    /// to fill `tokens_per_passage`; small values concentrate the
    /// character-level evidence per passage.
    pub distinct_tokens_per_passage: usize,
    /// Distinct body tokens per topic.
    pub topic_vocab: usize,
    /// Tokens shared across every topic.
    pub shared_vocab: usize,
    /// Probability that a body token comes from the topic vocabulary
    /// rather than the shared one.
    pub topic_token_fraction: f64,
    pub xx_lang: LangCode,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            en_passages: 2_000,
            xx_passages: 400,
            topics: 40,
            xx_topics: 40,
            tokens_per_passage: 12,
            distinct_tokens_per_passage: 5,
            topic_vocab: 20,
            shared_vocab: 30,
            topic_token_fraction: 0.7,
            xx_lang: LangCode::new("DE"),
            seed: 0x5eed,
        }
    }
}

/// A generated bilingual corpus with full gold pairing.
#[derive(Debug, Clone)]
pub struct SynthFixture {
    pub en_corpus: Corpus,
    pub xx_corpus: Corpus,
    /// Gold (xx, en) pairs for every xx passage, in xx order.
    pub pairs: PairSet,
}

// A deliberately small alphabet: the character-bigram inventory stays
// compact enough that even a handful of passage pairs exercises most of
// it, which is what lets alignment learned on few pairs transfer to
// unseen tokens.
const CONSONANTS: &[u8] = b"bdglmnpr";
const VOWELS: &[u8] = b"aiou";

/// Fixed transliteration of the Latin generation alphabet into Greek.
fn transliterate(token: &str) -> String {
    token
        .chars()
        .map(|c| {
            let latin = b"abdgilmnopru";
            let greek = ['α', 'β', 'δ', 'γ', 'ι', 'λ', 'μ', 'ν', 'ο', 'π', 'ρ', 'υ'];
            match latin.iter().position(|&b| b as char == c) {
                Some(i) => greek[i],
                None => c,
            }
        })
        .collect()
}

fn random_token(rng: &mut ChaCha20Rng) -> String {
    let syllables = rng.gen_range(2..=3);
    let mut token = String::new();
    for _ in 0..syllables {
        token.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
        token.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
    }
    token
}

fn unique_tokens(rng: &mut ChaCha20Rng, n: usize, taken: &mut std::collections::HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let t = random_token(rng);
        if taken.insert(t.clone()) {
            out.push(t);
        }
    }
    out
}

pub fn generate(cfg: &SynthConfig) -> SynthFixture {
    assert!(cfg.xx_passages <= cfg.en_passages);
    assert!(cfg.topics >= 1);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut taken = std::collections::HashSet::new();

    let shared: Vec<String> = unique_tokens(&mut rng, cfg.shared_vocab, &mut taken);
    let topic_bodies: Vec<Vec<String>> = (0..cfg.topics)
        .map(|_| unique_tokens(&mut rng, cfg.topic_vocab, &mut taken))
        .collect();
    // Two label phrases per topic, built from tokens no passage body uses.
    let topic_labels: Vec<Vec<String>> = (0..cfg.topics)
        .map(|_| {
            let tokens = unique_tokens(&mut rng, 3, &mut taken);
            vec![tokens[0].clone(), format!("{} {}", tokens[1], tokens[2])]
        })
        .collect();

    let mut en_corpus = Corpus::new();
    let mut en_records: Vec<(usize, Vec<String>, Vec<String>)> = Vec::new();

    for i in 0..cfg.en_passages {
        let topic = i % cfg.topics;
        let distinct = cfg.distinct_tokens_per_passage.clamp(2, cfg.tokens_per_passage);
        // At least two palette slots come from the topic vocabulary so the
        // present keyphrases below always exist.
        let palette: Vec<String> = (0..distinct)
            .map(|slot| {
                if slot < 2 || rng.gen_bool(cfg.topic_token_fraction) {
                    topic_bodies[topic][rng.gen_range(0..cfg.topic_vocab)].clone()
                } else {
                    shared[rng.gen_range(0..cfg.shared_vocab)].clone()
                }
            })
            .collect();
        let is_topic_token: std::collections::HashSet<&String> = topic_bodies[topic].iter().collect();
        // Uneven repetition counts give every passage a distinctive token
        // histogram, which is what separates it from same-topic neighbors.
        let mut weights = vec![1usize; distinct];
        for _ in 0..cfg.tokens_per_passage.saturating_sub(distinct) {
            weights[rng.gen_range(0..distinct)] += 1;
        }
        let mut body: Vec<String> = palette
            .iter()
            .zip(&weights)
            .flat_map(|(t, w)| std::iter::repeat(t.clone()).take(*w))
            .collect();
        // Present keyphrases are topic tokens only, so keyphrase identity
        // stays topic-specific; reshuffle until a topic-token bigram lands
        // adjacent.
        let bigram = loop {
            body.shuffle(&mut rng);
            let found = body
                .windows(2)
                .find(|w| is_topic_token.contains(&w[0]) && is_topic_token.contains(&w[1]));
            if let Some(w) = found {
                break format!("{} {}", w[0], w[1]);
            }
        };
        let topic_positions: Vec<usize> = body
            .iter()
            .enumerate()
            .filter(|(_, t)| is_topic_token.contains(t))
            .map(|(i, _)| i)
            .collect();
        let unigram = body[topic_positions[rng.gen_range(0..topic_positions.len())]].clone();
        let mut keyphrases = vec![unigram, bigram];
        keyphrases.extend(topic_labels[topic].iter().cloned());

        en_records.push((topic, body.clone(), keyphrases.clone()));
        en_corpus
            .insert(Passage {
                id: format!("en-{i:04}"),
                lang: LangCode::en(),
                text: body.join(" "),
                keyphrases,
            })
            .expect("generated ids are unique");
    }

    // The translated side: a shuffled selection of EN passages from the
    // eligible topics gets twins.
    let xx_topics = cfg.xx_topics.clamp(1, cfg.topics);
    let mut partner_order: Vec<usize> =
        (0..cfg.en_passages).filter(|i| i % cfg.topics < xx_topics).collect();
    assert!(partner_order.len() >= cfg.xx_passages, "not enough eligible twins");
    partner_order.shuffle(&mut rng);
    partner_order.truncate(cfg.xx_passages);

    let mut xx_corpus = Corpus::new();
    let mut pairs = PairSet::new(PairKind::Par);
    for (xi, &ei) in partner_order.iter().enumerate() {
        let (_, body, keyphrases) = &en_records[ei];
        let xx_body: Vec<String> = body.iter().map(|t| transliterate(t)).collect();
        let xx_kps: Vec<String> = keyphrases
            .iter()
            .map(|kp| kp.split(' ').map(transliterate).collect::<Vec<_>>().join(" "))
            .collect();
        let xx_id = format!("xx-{xi:04}");
        xx_corpus
            .insert(Passage {
                id: xx_id.clone(),
                lang: cfg.xx_lang.clone(),
                text: xx_body.join(" "),
                keyphrases: xx_kps,
            })
            .expect("generated ids are unique");
        pairs
            .push(Pair { xx_id, en_id: Some(format!("en-{ei:04}")), score: None })
            .expect("generated pairs are unique");
    }

    SynthFixture { en_corpus, xx_corpus, pairs }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            en_passages: 60,
            xx_passages: 20,
            topics: 6,
            xx_topics: 6,
            tokens_per_passage: 8,
            distinct_tokens_per_passage: 4,
            topic_vocab: 10,
            shared_vocab: 12,
            topic_token_fraction: 0.7,
            xx_lang: LangCode::new("DE"),
            seed: 11,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small());
        let b = generate(&small());
        assert_eq!(a.en_corpus, b.en_corpus);
        assert_eq!(a.xx_corpus, b.xx_corpus);
        assert_eq!(a.pairs, b.pairs);
    }

    #[test]
    fn twins_are_token_mapped() {
        let fx = generate(&small());
        for pair in &fx.pairs.pairs {
            let xx = fx.xx_corpus.get(&pair.xx_id).unwrap();
            let en = fx.en_corpus.get(pair.en_id.as_deref().unwrap()).unwrap();
            let mapped: Vec<String> = en.text.split(' ').map(transliterate).collect();
            assert_eq!(xx.text, mapped.join(" "));
            assert_eq!(xx.keyphrases.len(), en.keyphrases.len());
        }
    }

    #[test]
    fn label_keyphrases_are_absent_from_bodies() {
        let fx = generate(&small());
        for passage in fx.en_corpus.passages() {
            let body: std::collections::HashSet<&str> = passage.text.split(' ').collect();
            // The last two keyphrases are the topic labels.
            let labels = &passage.keyphrases[passage.keyphrases.len() - 2..];
            for label in labels {
                for token in label.split(' ') {
                    assert!(!body.contains(token), "label token {token} leaked into a body");
                }
            }
        }
    }

    #[test]
    fn surface_forms_are_disjoint_across_languages() {
        let fx = generate(&small());
        let en_tokens: std::collections::HashSet<String> = fx
            .en_corpus
            .passages()
            .iter()
            .flat_map(|p| p.text.split(' ').map(String::from))
            .collect();
        for p in fx.xx_corpus.passages() {
            for t in p.text.split(' ') {
                assert!(!en_tokens.contains(t));
            }
        }
    }
}
