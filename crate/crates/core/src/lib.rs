pub mod block;
pub mod datasets;
pub mod error;
pub mod explain;
pub mod generator;
pub mod io;
pub mod metrics;
pub mod mmsbm;
pub mod network;
pub mod rbm;
pub mod sbm;
pub mod seeds;
pub mod simplex_rbm;
pub mod special;
pub mod split;

pub use error::{Error, Result};
