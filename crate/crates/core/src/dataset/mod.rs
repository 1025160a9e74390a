//! Corpus ingestion, speaker vectors, pairing for factor substitution and a
//! synthetic corpus with ground-truth factor labels.

mod corpus;
mod pairing;
mod speaker;
mod store;
mod synthetic;

pub use corpus::{build_utterances, extract_features, scan_corpus, CorpusIndex, FeatureConfig, SplitConfig, Utterance, UtteranceDescriptor};
pub use pairing::{pair_batches, CropPolicy, PairBatch, PairStream, PairingConfig};
pub use speaker::{make_speaker_vector, ExternalEmbeddings, LtasEmbedder, SpeakerEmbedder, SpeakerVector};
pub use store::{load_utterances, save_utterances};
pub use synthetic::{generate_synthetic, FactorLabels, SyntheticCorpus, SyntheticSpec, SyntheticUtterance};
