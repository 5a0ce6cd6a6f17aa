//! Retriever-generator iterative training: mine pseudo-parallel passage
//! pairs gated by generation usefulness, retrain the retriever on them,
//! and repeat.
//!
//! Each iteration trains a retriever on the gold pairs plus the current
//! pseudo pairs, refreshes the retrieval-augmented generator on the gold
//! split with retrieved English keyphrases, and then re-mines the pseudo
//! set from scratch over the non-parallel split: a retrieved English
//! passage is admitted as a pseudo partner only when its keyphrases lift
//! the augmented generator's F1 over the base generator's by more than
//! tau percentage points.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{split_par_np, Corpus, Pair, PairKind, PairSet, Passage};
use crate::encoder::{train_retriever, train_retriever_warm, EncoderModel, TrainConfig, TrainResult};
use crate::error::{Error, Result};
use crate::generation::{
    align_predictions, augmented_generate, export_codemix_dataset, extractive_generate,
    import_predictions, CodeMixInput, PhraseLexicon,
};
use crate::index::{build_index, recall_at_k, search, DenseIndex, TargetMode};
use crate::metrics::prf_at_m;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgitConfig {
    /// Iteration budget T. 6 suits larger e-commerce-style runs, 3 the
    /// smaller academic-style ones.
    pub iterations: usize,
    /// Usefulness gate threshold, in F1 percentage points.
    pub tau: f64,
    /// Passages retrieved per query; their keyphrases are concatenated in
    /// rank order, duplicates kept.
    pub m: usize,
    /// Cap on generated keyphrases per example.
    pub max_kps: usize,
    /// Stop iterating once dev recall@5 stops improving.
    pub early_stop_on_recall: bool,
    pub recall_ks: Vec<usize>,
    pub target_mode: TargetMode,
    /// Optimizer settings shared by every training phase. Its seed field
    /// is overridden by `seed` below: one seed governs the whole run.
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for RgitConfig {
    fn default() -> Self {
        RgitConfig {
            iterations: 6,
            tau: 5.0,
            m: 5,
            max_kps: 5,
            early_stop_on_recall: true,
            recall_ks: vec![1, 2, 5, 10, 20],
            target_mode: TargetMode::P2P,
            train: TrainConfig::default(),
            seed: 13,
        }
    }
}

/// True when the retrieved knowledge made predictions strictly more than
/// `tau` F1 percentage points better.
pub fn usefulness_gate(f1_aug: f64, f1_base: f64, tau: f64) -> bool {
    f1_aug - f1_base > tau
}

/// True once the latest dev recall fails to beat the best earlier value.
pub fn recall_early_stop(history: &[f64]) -> bool {
    match history.split_last() {
        Some((latest, prior)) if !prior.is_empty() => {
            let best = prior.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            *latest <= best
        }
        _ => false,
    }
}

/// Fraction of pseudo pairs whose en side equals the gold partner, over
/// the pseudo pairs whose xx id has a gold partner at all.
pub fn pseudo_label_accuracy(pseudo: &PairSet, gold: &PairSet) -> Result<f64> {
    let gold_map: BTreeMap<&str, &str> = gold
        .pairs
        .iter()
        .filter_map(|p| p.en_id.as_deref().map(|en| (p.xx_id.as_str(), en)))
        .collect();
    let mut evaluated = 0usize;
    let mut correct = 0usize;
    for pair in &pseudo.pairs {
        if let Some(gold_en) = gold_map.get(pair.xx_id.as_str()) {
            evaluated += 1;
            if pair.en_id.as_deref() == Some(*gold_en) {
                correct += 1;
            }
        }
    }
    if evaluated == 0 {
        return Err(Error::NoGoldOverlap);
    }
    Ok(correct as f64 / evaluated as f64)
}

/// One admitted pseudo pair with the evidence behind it, re-checkable
/// against the gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Admission {
    pub xx_id: String,
    pub en_id: String,
    /// Retrieval score of the admitted rank-1 passage.
    pub score: f64,
    pub f1_augmented: f64,
    pub f1_base: f64,
    /// The lower-ranked retrieved candidates that were not admitted.
    pub alternates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub pseudo_count: usize,
    pub recall: Option<BTreeMap<usize, f64>>,
    pub label_accuracy: Option<f64>,
    pub final_train_loss: f64,
}

#[derive(Debug)]
pub struct RgitOutcome {
    pub final_model: EncoderModel,
    /// The last mined pseudo set.
    pub pseudo: PairSet,
    pub logs: Vec<IterationLog>,
    pub admissions: Vec<Vec<Admission>>,
    /// Set when no pseudo pairs survived and the final model is the
    /// gold-pairs-only retriever.
    pub par_only: bool,
}

/// Keyphrase generator driving the usefulness gate. `fit_base` runs once
/// before the loop; `fit_augmented` runs every iteration with fresh
/// retrieved knowledge.
pub trait GeneratorBackend {
    fn fit_base(&mut self, train: &[CodeMixInput]) -> Result<()>;
    fn fit_augmented(&mut self, iteration: usize, train: &[CodeMixInput]) -> Result<()>;
    fn predict_base(&self, examples: &[CodeMixInput]) -> Result<Vec<Vec<String>>>;
    fn predict_augmented(&self, iteration: usize, examples: &[CodeMixInput]) -> Result<Vec<Vec<String>>>;
}

/// The in-process desk-scale generator pair: the base side is the
/// extractive generator, the augmented side projects retrieved keyphrases
/// through a lexicon rebuilt each iteration from the gold pairs plus the
/// current retrieved knowledge.
#[derive(Debug, Clone)]
pub struct LexiconGenerator {
    gold_lexicon: PhraseLexicon,
    lexicon: PhraseLexicon,
    max_kps: usize,
}

impl LexiconGenerator {
    pub fn new(gold_lexicon: PhraseLexicon, max_kps: usize) -> Self {
        LexiconGenerator { lexicon: gold_lexicon.clone(), gold_lexicon, max_kps }
    }

    pub fn lexicon(&self) -> &PhraseLexicon {
        &self.lexicon
    }
}

impl GeneratorBackend for LexiconGenerator {
    fn fit_base(&mut self, _train: &[CodeMixInput]) -> Result<()> {
        Ok(())
    }

    fn fit_augmented(&mut self, _iteration: usize, train: &[CodeMixInput]) -> Result<()> {
        let mut lexicon = self.gold_lexicon.clone();
        if std::env::var("POLYKP_GOLD_ONLY").is_err() {
        for example in train {
            for en_kp in &example.retrieved_kps {
                for xx_kp in &example.source_passage.keyphrases {
                    lexicon.add(en_kp, xx_kp, 1);
                }
            }
        }
        }
        self.lexicon = lexicon;
        Ok(())
    }

    fn predict_base(&self, examples: &[CodeMixInput]) -> Result<Vec<Vec<String>>> {
        Ok(examples
            .par_iter()
            .map(|ex| extractive_generate(&ex.source_passage, self.max_kps))
            .collect())
    }

    fn predict_augmented(&self, _iteration: usize, examples: &[CodeMixInput]) -> Result<Vec<Vec<String>>> {
        Ok(examples
            .par_iter()
            .map(|ex| augmented_generate(&ex.source_passage, &ex.retrieved_kps, &self.lexicon, self.max_kps))
            .collect())
    }
}

/// File-exchange backend for external neural generators. Fitting exports
/// code-mix training files; prediction exports the inputs and then expects
/// a predictions file next to them if one is not there yet, surfacing
/// `Error::AwaitingPredictions`. Because the loop is deterministic, the
/// caller can simply re-run the same command after dropping the file in.
#[derive(Debug, Clone)]
pub struct ExternalFileGenerator {
    dir: PathBuf,
}

impl ExternalFileGenerator {
    pub fn new(dir: &Path) -> Self {
        ExternalFileGenerator { dir: dir.to_path_buf() }
    }

    fn iter_dir(&self, iteration: usize) -> PathBuf {
        self.dir.join(format!("iter{iteration:02}"))
    }

    fn predictions_for(
        &self,
        examples: &[CodeMixInput],
        export: &Path,
        predictions: &Path,
    ) -> Result<Vec<Vec<String>>> {
        export_codemix_dataset(examples, export)?;
        if !predictions.exists() {
            return Err(Error::AwaitingPredictions { path: predictions.display().to_string() });
        }
        let preds = import_predictions(predictions)?;
        let mut gold = Corpus::new();
        for ex in examples {
            gold.insert(ex.source_passage.clone())?;
        }
        let aligned = align_predictions(&gold, &preds)?;
        Ok(aligned.into_iter().map(|a| a.pred).collect())
    }
}

impl GeneratorBackend for ExternalFileGenerator {
    fn fit_base(&mut self, train: &[CodeMixInput]) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        export_codemix_dataset(train, &self.dir.join("base_train_codemix.jsonl"))
    }

    fn fit_augmented(&mut self, iteration: usize, train: &[CodeMixInput]) -> Result<()> {
        let dir = self.iter_dir(iteration);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        export_codemix_dataset(train, &dir.join("train_codemix.jsonl"))
    }

    fn predict_base(&self, examples: &[CodeMixInput]) -> Result<Vec<Vec<String>>> {
        self.predictions_for(
            examples,
            &self.dir.join("base_np_codemix.jsonl"),
            &self.dir.join("base_np_predictions.jsonl"),
        )
    }

    fn predict_augmented(&self, iteration: usize, examples: &[CodeMixInput]) -> Result<Vec<Vec<String>>> {
        let dir = self.iter_dir(iteration);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        self.predictions_for(
            examples,
            &dir.join("np_codemix.jsonl"),
            &dir.join("np_predictions.jsonl"),
        )
    }
}

/// Retrieved knowledge for one query: the concatenated keyphrases plus the
/// ranked passage ids and scores they came from.
pub struct RetrievedKnowledge {
    pub keyphrases: Vec<String>,
    pub hits: Vec<(String, f64)>,
}

/// Top-m retrieval with keyphrase lookup; keyphrases keep retrieval rank
/// order and duplicates.
pub fn retrieve_knowledge(
    index: &DenseIndex,
    model: &EncoderModel,
    en_corpus: &Corpus,
    query_text: &str,
    m: usize,
) -> Result<RetrievedKnowledge> {
    let result = search(index, query_text, model, m)?;
    let mut keyphrases = Vec::new();
    for (id, _) in &result.hits {
        let passage = en_corpus
            .get(id)
            .ok_or_else(|| Error::DanglingPairId { side: "en", id: id.clone() })?;
        keyphrases.extend(passage.keyphrases.iter().cloned());
    }
    Ok(RetrievedKnowledge { keyphrases, hits: result.hits })
}

fn text_pairs(
    par: &PairSet,
    pseudo: &PairSet,
    xx_corpus: &Corpus,
    en_corpus: &Corpus,
) -> Result<Vec<(String, String)>> {
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut out = Vec::with_capacity(par.len() + pseudo.len());
    for pair in par.pairs.iter().chain(&pseudo.pairs) {
        let en_id = pair.en_id.as_deref().ok_or(Error::MalformedLine {
            line: 0,
            msg: "pair missing en_id".into(),
        })?;
        if !seen.insert((pair.xx_id.clone(), en_id.to_string())) {
            continue;
        }
        let xx = xx_corpus
            .get(&pair.xx_id)
            .ok_or_else(|| Error::DanglingPairId { side: "xx", id: pair.xx_id.clone() })?;
        let en = en_corpus
            .get(en_id)
            .ok_or_else(|| Error::DanglingPairId { side: "en", id: en_id.to_string() })?;
        out.push((xx.text.clone(), en.text.clone()));
    }
    Ok(out)
}

fn base_inputs(examples: &[Passage]) -> Vec<CodeMixInput> {
    examples
        .iter()
        .map(|p| CodeMixInput::new(Vec::new(), p.clone()))
        .collect()
}

fn augmented_inputs(
    examples: &[Passage],
    index: &DenseIndex,
    model: &EncoderModel,
    en_corpus: &Corpus,
    m: usize,
) -> Result<(Vec<CodeMixInput>, Vec<Vec<(String, f64)>>)> {
    let retrieved: Vec<RetrievedKnowledge> = examples
        .par_iter()
        .map(|p| retrieve_knowledge(index, model, en_corpus, &p.text, m))
        .collect::<Result<_>>()?;
    let mut inputs = Vec::with_capacity(examples.len());
    let mut hits = Vec::with_capacity(examples.len());
    for (p, k) in examples.iter().zip(retrieved) {
        inputs.push(CodeMixInput::new(k.keyphrases, p.clone()));
        hits.push(k.hits);
    }
    Ok((inputs, hits))
}

struct MinedIteration {
    pseudo: PairSet,
    admissions: Vec<Admission>,
}

/// Lines 18-25 of the loop body: score base against augmented predictions
/// on every non-parallel example and admit the rank-1 retrieved passage
/// when the gate passes. Admissions are sorted by xx id so the outcome is
/// schedule-independent.
fn mine_iteration(
    iteration: usize,
    np_examples: &[Passage],
    np_base_preds: &[Vec<String>],
    index: &DenseIndex,
    model: &EncoderModel,
    en_corpus: &Corpus,
    generator: &dyn GeneratorBackend,
    cfg: &RgitConfig,
) -> Result<MinedIteration> {
    let (np_inputs, np_hits) = augmented_inputs(np_examples, index, model, en_corpus, cfg.m)?;
    let np_aug_preds = generator.predict_augmented(iteration, &np_inputs)?;

    let mut admissions: Vec<Admission> = Vec::new();
    for (((example, hits), aug), base) in np_examples
        .iter()
        .zip(&np_hits)
        .zip(&np_aug_preds)
        .zip(np_base_preds)
    {
        let Some((top_id, top_score)) = hits.first() else {
            continue;
        };
        let f1_aug = prf_at_m(&example.id, &example.lang, &example.keyphrases, aug).f1 * 100.0;
        let f1_base = prf_at_m(&example.id, &example.lang, &example.keyphrases, base).f1 * 100.0;
        if usefulness_gate(f1_aug, f1_base, cfg.tau) {
            admissions.push(Admission {
                xx_id: example.id.clone(),
                en_id: top_id.clone(),
                score: *top_score,
                f1_augmented: f1_aug,
                f1_base,
                alternates: hits.iter().skip(1).map(|(id, _)| id.clone()).collect(),
            });
        }
    }
    admissions.sort_by(|a, b| a.xx_id.cmp(&b.xx_id));

    let mut pseudo = PairSet::new(PairKind::Pseudo);
    for adm in &admissions {
        pseudo.push(Pair {
            xx_id: adm.xx_id.clone(),
            en_id: Some(adm.en_id.clone()),
            score: Some(adm.score),
        })?;
    }
    Ok(MinedIteration { pseudo, admissions })
}

/// Run the full iterative loop and the final train-on-pseudo,
/// fine-tune-on-gold schedule. Deterministic for a given seed. When no
/// pseudo pairs ever survive the gate, the run terminates with the
/// gold-only retriever.
pub fn run_rgit(
    par: &PairSet,
    xx_corpus: &Corpus,
    en_corpus: &Corpus,
    dev_pairs: Option<&PairSet>,
    cfg: &RgitConfig,
    generator: &mut dyn GeneratorBackend,
) -> Result<RgitOutcome> {
    if par.kind != PairKind::Par {
        return Err(Error::WrongPairKind { expected: "PAR", found: par.kind.as_str() });
    }
    if par.is_empty() {
        return Err(Error::NoTrainingPairs);
    }
    if cfg.iterations == 0 {
        return Err(Error::InvalidConfig("iterations must be >= 1".into()));
    }
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.seed;

    let (par_examples, np_examples) = split_par_np(xx_corpus, par)?;
    let par_text_pairs = text_pairs(par, &PairSet::new(PairKind::Pseudo), xx_corpus, en_corpus)?;

    // Base generator: trained once, never sees retrieved knowledge.
    generator.fit_base(&base_inputs(&par_examples))?;
    let np_base_inputs = base_inputs(&np_examples);
    let np_base_preds = generator.predict_base(&np_base_inputs)?;

    let mut pseudo = PairSet::new(PairKind::Pseudo);
    let mut logs = Vec::new();
    let mut admissions = Vec::new();
    let mut recall_history = Vec::new();
    let mut prev_empty = true;

    for iteration in 0..cfg.iterations {
        let train_pairs = text_pairs(par, &pseudo, xx_corpus, en_corpus)?;
        let TrainResult { model, epoch_loss } =
            train_retriever(&train_pairs, en_corpus, &train_cfg)?;
        let index = build_index(en_corpus, &model, cfg.target_mode)?;

        let recall = match dev_pairs {
            Some(dev) => Some(recall_at_k(&index, &model, xx_corpus, dev, &cfg.recall_ks)?),
            None => None,
        };

        let (par_inputs, _) = augmented_inputs(&par_examples, &index, &model, en_corpus, cfg.m)?;
        generator.fit_augmented(iteration, &par_inputs)?;

        let mined = mine_iteration(
            iteration,
            &np_examples,
            &np_base_preds,
            &index,
            &model,
            en_corpus,
            generator,
            cfg,
        )?;

        let label_accuracy = dev_pairs.and_then(|dev| pseudo_label_accuracy(&mined.pseudo, dev).ok());
        logs.push(IterationLog {
            iteration,
            pseudo_count: mined.pseudo.len(),
            recall: recall.clone(),
            label_accuracy,
            final_train_loss: epoch_loss.last().copied().unwrap_or(f64::NAN),
        });
        admissions.push(mined.admissions);

        let now_empty = mined.pseudo.is_empty();
        pseudo = mined.pseudo;

        // An empty set following an empty set is a fixpoint: every later
        // iteration would replay the same computation.
        if now_empty && prev_empty {
            break;
        }
        prev_empty = now_empty;

        if let Some(r) = &recall {
            recall_history.push(*r.get(&5).unwrap_or(&0.0));
            if cfg.early_stop_on_recall && recall_early_stop(&recall_history) {
                break;
            }
        }
    }

    if pseudo.is_empty() {
        let final_model = train_retriever(&par_text_pairs, en_corpus, &train_cfg)?.model;
        return Ok(RgitOutcome { final_model, pseudo, logs, admissions, par_only: true });
    }

    // Final schedule: train on the pseudo pairs, then fine-tune on the
    // gold parallel pairs with the same optimizer settings.
    let pseudo_text_pairs =
        text_pairs(&PairSet::new(PairKind::Par), &pseudo, xx_corpus, en_corpus)?;
    let phase_one = train_retriever(&pseudo_text_pairs, en_corpus, &train_cfg)?;
    let phase_two = train_retriever_warm(&phase_one.model, &par_text_pairs, en_corpus, &train_cfg)?;

    Ok(RgitOutcome {
        final_model: phase_two.model,
        pseudo,
        logs,
        admissions,
        par_only: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gate_is_a_strict_threshold() {
        assert!(usefulness_gate(50.0, 40.0, 5.0));
        assert!(!usefulness_gate(45.0, 40.0, 5.0));
        assert!(!usefulness_gate(30.0, 40.0, 0.0));
    }

    #[test]
    fn early_stop_tracks_the_best_prior_recall() {
        assert!(recall_early_stop(&[0.5, 0.6, 0.58]));
        assert!(!recall_early_stop(&[0.5, 0.6]));
        assert!(!recall_early_stop(&[0.5]));
        assert!(recall_early_stop(&[0.6, 0.5, 0.55]));
    }

    #[test]
    fn label_accuracy_counts_exact_partners() {
        let mut gold = PairSet::new(PairKind::Par);
        for i in 0..4 {
            gold.push(Pair {
                xx_id: format!("x{i}"),
                en_id: Some(format!("e{i}")),
                score: None,
            })
            .unwrap();
        }
        let mut same = PairSet::new(PairKind::Pseudo);
        let mut wrong = PairSet::new(PairKind::Pseudo);
        for i in 0..4 {
            same.push(Pair {
                xx_id: format!("x{i}"),
                en_id: Some(format!("e{i}")),
                score: Some(1.0),
            })
            .unwrap();
            wrong.push(Pair {
                xx_id: format!("x{i}"),
                en_id: Some("e9".into()),
                score: Some(1.0),
            })
            .unwrap();
        }
        assert_eq!(pseudo_label_accuracy(&same, &gold).unwrap(), 1.0);
        assert_eq!(pseudo_label_accuracy(&wrong, &gold).unwrap(), 0.0);

        let mut disjoint = PairSet::new(PairKind::Pseudo);
        disjoint
            .push(Pair { xx_id: "zz".into(), en_id: Some("e0".into()), score: Some(1.0) })
            .unwrap();
        assert!(matches!(
            pseudo_label_accuracy(&disjoint, &gold),
            Err(Error::NoGoldOverlap)
        ));
    }
}
