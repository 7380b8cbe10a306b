/// Multiply-accumulate ledger filled in by every graph operation.
///
/// Counts are stored as MACs; one MAC is reported as two FLOPs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlopCounter {
    entries: Vec<(String, u64)>,
    total_macs: u64,
}

impl FlopCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, label: impl Into<String>, macs: u64) {
        self.entries.push((label.into(), macs));
        self.total_macs += macs;
    }

    pub fn reset(&mut self) {
        self.entries.clear();
        self.total_macs = 0;
    }

    pub fn entries(&self) -> &[(String, u64)] {
        &self.entries
    }

    pub fn total_macs(&self) -> u64 {
        self.total_macs
    }

    /// Sum of entries whose label is `prefix` or starts with `prefix/`.
    pub fn total_for(&self, prefix: &str) -> u64 {
        self.entries
            .iter()
            .filter(|(label, _)| {
                label == prefix
                    || (label.starts_with(prefix) && label[prefix.len()..].starts_with('/'))
            })
            .map(|(_, m)| m)
            .sum()
    }

    pub fn merge(&mut self, other: &FlopCounter) {
        for (label, macs) in &other.entries {
            self.record(label.clone(), *macs);
        }
    }
}

/// GFLOPS-style figure for a MAC count (2 FLOPs per MAC).
pub fn macs_to_gflops(macs: u64) -> f64 {
    2.0 * macs as f64 / 1e9
}
