pub mod arch;
pub mod nets;

pub use arch::{
    ArchConfig, DiscriminatorConfig, FeatureNetConfig, FeatureWeights, FinalActivation, GeneratorPreset, PresetName,
};
pub use nets::{Discriminator, FeatureNet, Generator, FEATURE_PREFIX};

/// Total scalar parameter count of a store.
pub fn count_params<T: gradcore::Real>(store: &gradcore::ParamStore<T>) -> usize {
    store.count()
}
