//! Data-isolation audit.
//!
//! Federated training promises that raw samples never leave their silo:
//! only model parameters travel. That property is structural, but easy to
//! break silently when refactoring, so every dataset materialization is
//! recorded against an [`AccessScope`] naming the silo the code is acting
//! for. Reads of a different silo's data count as cross-silo accesses;
//! federated runs assert the counter stays at zero.

use std::sync::atomic::{AtomicU64, Ordering};

/// Shared counters for one run. Cheap to share across threads.
#[derive(Debug, Default)]
pub struct DataAccessAudit {
    total: AtomicU64,
    cross_silo: AtomicU64,
}

impl DataAccessAudit {
    pub fn new() -> DataAccessAudit {
        DataAccessAudit::default()
    }

    /// A scope for code acting on behalf of `silo_id`. Any dataset read
    /// through the scope increments `total`; reads of other silos' data
    /// also increment `cross_silo`.
    pub fn scope(&self, silo_id: &str) -> AccessScope<'_> {
        AccessScope { audit: Some(self), acting_for: Some(silo_id.to_string()) }
    }

    pub fn total_accesses(&self) -> u64 {
        self.total.load(Ordering::Relaxed)
    }

    pub fn cross_silo_accesses(&self) -> u64 {
        self.cross_silo.load(Ordering::Relaxed)
    }
}

/// Identifies who a dataset read is for. [`AccessScope::unaudited`] is
/// for contexts where pooling is the point (centralized training,
/// evaluation, serialization).
#[derive(Debug)]
pub struct AccessScope<'a> {
    audit: Option<&'a DataAccessAudit>,
    acting_for: Option<String>,
}

impl AccessScope<'static> {
    pub fn unaudited() -> AccessScope<'static> {
        AccessScope { audit: None, acting_for: None }
    }
}

impl AccessScope<'_> {
    /// Called by dataset accessors with the owning silo's id.
    pub fn record(&self, owner_silo_id: &str) {
        if let Some(audit) = self.audit {
            audit.total.fetch_add(1, Ordering::Relaxed);
            if self.acting_for.as_deref() != Some(owner_silo_id) {
                audit.cross_silo.fetch_add(1, Ordering::Relaxed);
            }
        }
    }
}
