use crate::error::{DataError, Result};
use crate::manifest::Manifest;

/// Record indices of a train/test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn partition(manifest: &Manifest, domain: usize, domain_is_test: bool) -> Result<Split> {
    let domains = manifest.params.domains;
    if domain >= domains || !manifest.records.iter().any(|r| r.domain == domain) {
        return Err(DataError::UnknownDomain { domain, domains });
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, r) in manifest.records.iter().enumerate() {
        if (r.domain == domain) == domain_is_test {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    Ok(Split { train, test })
}

/// Test on `domain`, train on every other domain.
pub fn split_leave_one_domain_out(manifest: &Manifest, domain: usize) -> Result<Split> {
    partition(manifest, domain, true)
}

/// Train on `domain` alone, test on every other domain pooled.
pub fn split_single_source(manifest: &Manifest, domain: usize) -> Result<Split> {
    partition(manifest, domain, false)
}
