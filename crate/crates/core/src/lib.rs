pub mod biometric;
pub mod checkpoint;
pub mod config;
pub mod demorpher;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod latentcodec;
pub mod morphing;
pub mod nn;
pub mod protocol;
pub mod seeding;

pub use error::{Error, Result};
pub use imaging::{Image, Tensor};
pub use biometric::{Embedding, EmbeddingProvider, MatchThreshold, ToyProvider};
pub use config::ExperimentConfig;
pub use demorpher::{DemorphCheckpoint, DemorphConfig, LatentPair, LossVariant};
pub use evaluation::{DemorphResult, EvalReport};
pub use latentcodec::{CodecCheckpoint, CodecConfig, Compressor, Latent};
pub use morphing::Landmarks;
pub use protocol::{Manifest, Registry, Scenario, Side};
