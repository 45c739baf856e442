//! Std companion to `mmfhe-core`: dataset ingestion, model archives, the
//! framed user/party/cloud protocol and experiment drivers.

pub mod archive;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod net;
pub mod protocol;
pub mod roles;

pub use error::{Error, Result};
