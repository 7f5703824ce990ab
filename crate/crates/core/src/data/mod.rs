//! Corpus files, vocabulary, BPE segmentation, batching and a synthetic
//! post-editing corpus.

mod batch;
mod bpe;
mod corpus;
mod synth;
mod vocab;

pub use batch::{batch_iter, encode_corpus, pad, Batch, Example};
pub use bpe::{bpe_apply, bpe_join, bpe_learn, BpeModel, END_OF_WORD};
pub use corpus::{
    format_corpus, import_parallel, parse_corpus, read_corpus, tokens, write_corpus, Triplet,
};
pub use synth::{synth_corpus, synth_records, Noise, SynthConfig, SynthRecord};
pub use vocab::{build_vocab, Vocab, BOS, EOS, PAD, RESERVED, UNK};
