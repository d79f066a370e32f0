//! Linear-chain CRF over token embeddings and lexical features.

mod eval;
mod features;
mod inference;
mod io;
mod model;
mod objective;
mod train;

pub use eval::{evaluate, span_prf, Prf};
pub use features::{
    is_digit, is_lower, is_title, AttrId, FeatureRegistry, FeatureVector, Featurizer,
    SentenceFeatures, NO_TOKEN,
};
pub use inference::{
    best_path, decode, forward_backward, marginals_from_potentials, viterbi,
    viterbi_from_potentials, ChainPotentials, MarginalTable, ViterbiResult,
};
pub use io::{load_model, read_model_from, save_model, write_model_to};
pub use model::CrfModel;
pub use objective::{objective_and_gradient, LabeledRef};
pub use train::{train, FeatureCache, TrainConfig, TrainReport};
