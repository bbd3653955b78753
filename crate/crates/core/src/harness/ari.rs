//! Adjusted Rand index from the pair-counting contingency table.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

fn pairs(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

fn dense<T: Eq + Hash>(labels: &[T]) -> (Vec<usize>, usize) {
    let mut ids: HashMap<&T, usize> = HashMap::new();
    let out = labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(l).or_insert(next)
        })
        .collect();
    (out, ids.len())
}

/// ARI between two labelings of the same items. When the chance-corrected
/// denominator vanishes the result is 1 for identical partitions and 0
/// otherwise.
pub fn adjusted_rand_index<A: Eq + Hash, B: Eq + Hash>(predicted: &[A], truth: &[B]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Input(format!("labelings differ in length: {} vs {}", predicted.len(), truth.len())));
    }
    if predicted.len() < 2 {
        return Err(Error::Input("ARI needs at least two items".into()));
    }
    let (p, np) = dense(predicted);
    let (t, nt) = dense(truth);
    let mut table = vec![0u64; np * nt];
    let mut rows = vec![0u64; np];
    let mut cols = vec![0u64; nt];
    for (&i, &j) in p.iter().zip(&t) {
        table[i * nt + j] += 1;
        rows[i] += 1;
        cols[j] += 1;
    }
    let index: f64 = table.iter().map(|&n| pairs(n)).sum();
    let a: f64 = rows.iter().map(|&n| pairs(n)).sum();
    let b: f64 = cols.iter().map(|&n| pairs(n)).sum();
    let total = pairs(predicted.len() as u64);
    let expected = a * b / total;
    let max = (a + b) / 2.0;
    if max == expected {
        return Ok(if index == expected { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}
