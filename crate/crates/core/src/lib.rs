//! Numerical laboratory for product sets and Haar measure on compact Lie
//! groups: doubling ratios, Brunn-Minkowski-type inequalities, discrete
//! optimal transport in the Lie algebra, and tube-fitting diagnostics.

pub mod cellset;
pub mod error;
pub mod group;
pub mod inequality;
pub mod measure;
pub mod net;
pub mod region;
pub mod report;
pub mod stability;
pub mod subgroup;
pub mod transport;

pub use error::{Error, Result};
pub use group::{AlgebraVector, GroupDescriptor, GroupElement, GroupFamily};
pub use measure::{MeasureEstimate, MeasureMethod};
pub use region::{SetRegion, Shape};
pub use subgroup::SubgroupDescriptor;
