//! Core library for trajectory-level cross-view geolocalization.
//!
//! The pipeline localizes a ground vehicle on an aerial map without GPS:
//! each ground image is summarized as an embedding vector, matched against
//! a database of geo-tagged aerial embeddings ([`db`]), and the retrieval
//! results are fused with odometry in a particle filter ([`filter`]).
//! Two fusion strategies are provided: converting retrievals into a single
//! position fix by mean-shift clustering ([`retrieval`]), or scoring every
//! particle directly by descriptor distance.
//!
//! The [`sim`] module generates synthetic descriptor worlds with
//! controllable matchability, which [`experiment`] uses to run repeatable
//! multi-run studies (strategy comparisons, parameter sweeps). Real data
//! comes in through [`ingest`].

pub mod db;
pub mod descriptor;
pub mod experiment;
pub mod filter;
pub mod geo;
pub mod ingest;
pub mod retrieval;
pub mod sim;

pub use db::{AerialDatabase, GeoDescriptor};
pub use descriptor::Descriptor;
pub use filter::{FilterConfig, Localizer, Strategy};
pub use geo::{GeoCoordinate, LocalFrame, Position2, TimedPose, Velocity2};
