//! Source-trained 1-D CNN fault classifiers adapted to an unlabeled target
//! domain with marginal (MDA) or joint (JDA) maximum mean discrepancy
//! penalties and iteratively refreshed pseudo labels.

pub mod adaptation;
pub mod data;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod training;

pub use adaptation::{AdaptMode, PenaltyResult};
pub use data::{Dataset, Domain, Preprocessing};
pub use error::{Error, Result};
pub use nn::{Architecture, Network};
pub use tensor::Tensor;
pub use training::TrainConfig;
