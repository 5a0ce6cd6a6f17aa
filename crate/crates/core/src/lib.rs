//! Cross-lingual keyphrase retrieval and generation toolkit.
//!
//! The pipeline: ingest multilingual corpora, train a shared-projection
//! dual encoder over hashed character n-grams, index English passages for
//! exact dot-product retrieval, mine pseudo-parallel passage pairs with a
//! margin criterion or the retriever-generator iterative loop, assemble
//! code-mixed sequences for downstream generators, and score keyphrase
//! predictions with exact-match P/R/F1.

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod generation;
pub mod index;
pub mod metrics;
pub mod mining;
pub mod rgit;
pub mod synth;

pub use corpus::{
    load_corpus, load_pairs, normalize_phrase, split_par_np, Corpus, CorpusLoad, LangCode,
    LoadStats, Pair, PairKind, PairSet, Passage,
};
pub use encoder::{
    encode, featurize, grad_nll, load_model, nll_loss, save_model, sim, train_retriever,
    train_retriever_warm, DenseMatrix, EncoderModel, FeaturizerConfig, SparseVec, TrainConfig,
    TrainResult,
};
pub use error::{Error, Result};
pub use index::{build_index, recall_at_k, search, DenseIndex, SearchResult, TargetMode};
pub use metrics::{aggregate, prf_at_m, EvalReport, ExampleScore};
pub use mining::{margin_score, mine_bitext, MarginConfig, MarginScore};
pub use generation::{
    assemble_codemix_input, assemble_target, augmented_generate, build_lexicon,
    export_codemix_dataset, extractive_generate, import_predictions, parse_target, CodeMixInput,
    GeneratorKind, PhraseLexicon,
};
pub use rgit::{
    pseudo_label_accuracy, recall_early_stop, run_rgit, usefulness_gate, Admission,
    ExternalFileGenerator, GeneratorBackend, IterationLog, LexiconGenerator, RgitConfig,
    RgitOutcome,
};
