//! Shared fixtures for the criterion benches.

use std::sync::Arc;

use haarlab_core::net::{build_net, Net};
use haarlab_core::GroupDescriptor;

/// Build (or panic on) a net sized for benchmarking; benches share fixtures
/// through criterion's setup closures, so no caching is needed here.
pub fn bench_net(group: &GroupDescriptor, cells: usize) -> Arc<Net> {
    Arc::new(build_net(group, cells, 42).expect("bench net builds"))
}
