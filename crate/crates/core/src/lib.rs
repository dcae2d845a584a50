//! kNN-augmented classification over precomputed feature embeddings.
//!
//! The crate is organised bottom-up:
//!
//! - [`embedstore`]: ingestion, L2 normalization and persistence of the datastore.
//! - [`knn`]: exact top-k retrieval and temperature-scaled class aggregation.
//! - [`calib`]: modulating factors, the kNN-calibrated loss and leave-one-out priors.
//! - [`model`]: a shallow softmax classifier with analytic gradients and AdamW.
//! - [`pipeline`]: calibrated training, interpolated inference, metrics and sweeps.
//! - [`cli`]: the `knn-calibrate` command-line front end.

pub mod calib;
pub mod cli;
pub mod embedstore;
mod error;
pub mod knn;
pub mod model;
pub mod pipeline;
pub mod synthetic;

pub use calib::{calibrated_loss, factor_value, precompute_priors, ModulatingFactor, PriorTable};
pub use embedstore::{build_store, load_embeddings, load_store, save_store, EmbeddingStore, FileFormat, RawEmbeddings};
pub use error::{Error, Result};
pub use knn::{aggregate, distance, knn_predict, retrieve, Metric, Neighbor, NeighborSet, ProbDist};
pub use model::{forward, loss_and_grad, optimizer_step, Architecture, ClassifierParams, Example, OptimizerState};
pub use pipeline::{
    evaluate, interpolate, predict, pseudo_label, sweep, train_calibrated, EvalReport, Mode, RunConfig,
};
