//! JumpReLU sparse autoencoders.

pub mod io;
pub mod params;
pub mod planted;
pub mod train;

pub use io::{read_sae, write_sae, SaeSidecar};
pub use params::{
    decode, decode_batch, encode, encode_batch, jumprelu, pre_activations, sae_loss, SaeLoss,
    SaeParams, EXPANSION,
};
pub use planted::{
    generate_superposition_data, match_dictionaries, match_features, Magnitude, MatchResult,
    PlantedDictionary,
};
pub use train::{loss_and_grads, train_sae, train_sae_matrix, SaeTrainConfig, SaeTrainLog};
