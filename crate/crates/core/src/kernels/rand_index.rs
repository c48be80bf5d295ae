use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

/// Rand index between two labelings: the fraction of unordered instance
/// pairs on which both agree (same group in both, or split in both).
///
/// Computed from the contingency table in `O(n)`; invariant under
/// relabeling either side.
pub fn rand_index<A, B>(a: &[A], b: &[B]) -> Result<f64>
where
    A: Eq + Hash,
    B: Eq + Hash,
{
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "label vectors differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::validation("Rand index needs at least two instances"));
    }
    let mut joint: HashMap<(&A, &B), u64> = HashMap::new();
    let mut rows: HashMap<&A, u64> = HashMap::new();
    let mut cols: HashMap<&B, u64> = HashMap::new();
    for (x, y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let pairs = |c: u64| c * c.saturating_sub(1) / 2;
    let together_both: u64 = joint.values().map(|&c| pairs(c)).sum();
    let together_a: u64 = rows.values().map(|&c| pairs(c)).sum();
    let together_b: u64 = cols.values().map(|&c| pairs(c)).sum();
    let total = pairs(n as u64);
    // agree = together in both + apart in both
    let agree = total + 2 * together_both - together_a - together_b;
    Ok(agree as f64 / total as f64)
}
