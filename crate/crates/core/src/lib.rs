//! Monte Carlo Physarum transport networks over 3D-projected embeddings.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`ingest`] loads word2vec-style vectors or pre-projected 3D points and
//!    normalizes them into the unit cube.
//! 2. [`mcpm`] runs the agent swarm over the point cloud and produces a
//!    converged *trace* field, the fitted transport network.
//! 3. [`probe`] releases read-only probe agents from a seed token, counts how
//!    often each token is passed, and turns those counts into a ranking.
//! 4. [`analysis`] compares that ranking with Euclidean and cosine baselines,
//!    clusters the trace network and summarizes probe directions.

pub mod analysis;
pub mod cloud;
pub mod error;
pub mod field;
pub mod geom;
pub mod ingest;
pub mod mcpm;
pub mod probe;
pub mod ranking;
pub mod rng;
pub mod spatial;

pub use cloud::{PointCloud, Token, TokenId};
pub use error::{Error, Result};
pub use field::{Dims, ScalarField};
pub use geom::Vec3;
pub use ingest::EmbeddingSet;
pub use mcpm::{AgentState, McpmParams, McpmResult};
pub use probe::{DiscoveryCounts, ProbeParams, TrajectorySet};
pub use ranking::{Metric, RankEntry, Ranking};
pub use rng::RngStreams;
