//! Visual inspection of backlit medicine bottles.
//!
//! The crate covers the whole desk-scale chain:
//!
//! * [`imaging`]: gray rasters, the background-difference soft trigger and
//!   gray-mean normalization.
//! * [`features`]: blocked histogram of gradients (BHoG), blocked gray
//!   histogram (BGH, lookup-table accelerated) and RAW downsampling.
//! * [`classifiers`]: random forest, gradient boosted trees, linear SVM and
//!   k-nearest neighbours behind one fit/predict contract.
//! * [`ensemble`]: majority voting, the binomial precision model and
//!   ensemble construction by pairwise independence testing.
//! * [`synthgen`]: deterministic synthetic bottle frames, datasets and
//!   conveyor streams.
//! * [`pipeline`]: configuration, metrics, the inspection loop and the
//!   experiment sweeps.

pub mod classifiers;
pub mod ensemble;
pub mod features;
pub mod imaging;
pub mod label;
pub mod pipeline;
pub mod seed;
pub mod synthgen;

pub use label::Label;
