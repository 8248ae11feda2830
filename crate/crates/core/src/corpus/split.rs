use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, Document};

/// Document-level train/test split. The test side holds
/// `round(test_fraction * n)` documents (at least 1, at most `n - 1`); both
/// sides keep the input order.
pub fn split_corpus(
    docs: &[Document],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<Document>, Vec<Document>), CorpusError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CorpusError::Split(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let n = docs.len();
    if n < 2 {
        return Err(CorpusError::Split(format!("need at least 2 documents, got {n}")));
    }
    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_test = vec![false; n];
    for &i in &order[..n_test] {
        in_test[i] = true;
    }
    let (test, train): (Vec<_>, Vec<_>) = docs.iter().cloned().zip(in_test).partition(|(_, t)| *t);
    Ok((train.into_iter().map(|(d, _)| d).collect(), test.into_iter().map(|(d, _)| d).collect()))
}
