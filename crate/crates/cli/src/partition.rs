//! Data reservation and the imbalanced client split: 10% validation, 10%
//! test, remaining pool divided by the client ratios.

use splitstream_core::{derive_seed, Error, Result, XorShift64};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataPartition {
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub client_shards: Vec<Vec<usize>>,
}

impl DataPartition {
    /// Union of the client shards, in shard order (the training pool).
    pub fn pool(&self) -> Vec<usize> {
        self.client_shards.iter().flatten().copied().collect()
    }
}

/// Largest-remainder allocation of `total` items over `ratios`. Remainders
/// are snapped to 12 decimals before comparison so ratios like 0.7 behave as
/// the exact rationals they denote; ties go to the lower index.
fn allocate(total: usize, ratios: &[f64]) -> Vec<usize> {
    let mut sizes: Vec<usize> = ratios.iter().map(|r| (total as f64 * r) as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let frac_key = |i: usize| -> i64 {
        let frac = total as f64 * ratios[i] - sizes[i] as f64;
        (frac * 1e12).round() as i64
    };
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| frac_key(b).cmp(&frac_key(a)).then(a.cmp(&b)));
    for i in 0..total - assigned {
        sizes[order[i % order.len()]] += 1;
    }
    sizes
}

/// Seeded shuffle, then: first `val_fraction` of samples to validation, next
/// `test_fraction` to test, remainder split by `ratios`.
pub fn split_dataset(
    n: usize,
    ratios: &[f64],
    val_fraction: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<DataPartition> {
    if n < 10 {
        return Err(Error::config(format!("dataset of {n} samples is too small (need >= 10)")));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = XorShift64::new(derive_seed(seed, "partition", &[]));
    rng.shuffle(&mut indices);
    let n_val = (n as f64 * val_fraction) as usize;
    let n_test = (n as f64 * test_fraction) as usize;
    let validation = indices[..n_val].to_vec();
    let test = indices[n_val..n_val + n_test].to_vec();
    let pool = &indices[n_val + n_test..];
    let sizes = allocate(pool.len(), ratios);
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::config(format!(
            "ratios {ratios:?} produce an empty shard over a pool of {}",
            pool.len()
        )));
    }
    let mut client_shards = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for size in sizes {
        client_shards.push(pool[start..start + size].to_vec());
        start += size;
    }
    Ok(DataPartition { validation, test, client_shards })
}
