//! Linear-chain CRF over per-token emission scores.
//!
//! A path `y` scores `start[y0] + Σ emit[t][yt] + Σ trans[y(t-1)][yt] + end[y(T-1)]`.
//! Everything is computed in log space.

use thiserror::Error;

use crate::corpus::{LabelSet, Tag};
use crate::scalar::{log_sum_exp, Scalar};
use crate::tensor::Matrix;

/// Score standing in for `-inf` on forbidden transitions.
pub const MASK_SCORE: f64 = -1e4;

/// Largest `num_tags^T` the brute-force oracle will enumerate.
pub const ORACLE_MAX_PATHS: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrfError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty emission sequence")]
    Empty,
    #[error("emissions have {found} columns, CRF expects {expected} tags")]
    Shape { expected: usize, found: usize },
    #[error("gold tag {tag} at position {position} is out of range (num_tags = {num_tags})")]
    TagOutOfRange { position: usize, tag: usize, num_tags: usize },
    #[error("gold sequence has length {found}, expected {expected}")]
    Length { expected: usize, found: usize },
    #[error("instance has {tags}^{len} paths, above the oracle limit of {limit}")]
    TooLarge { tags: usize, len: usize, limit: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrfParams<T> {
    /// `transitions[i][j]`: score of tag `i` followed by tag `j`.
    pub transitions: Matrix<T>,
    pub start_scores: Vec<T>,
    pub end_scores: Vec<T>,
}

/// A tag path with its unnormalized log-score.
#[derive(Debug, Clone, PartialEq)]
pub struct PathScore<T> {
    pub tags: Vec<usize>,
    pub score: T,
}

/// Gradients of the negative log-likelihood with respect to CRF parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfGrads<T> {
    pub transitions: Matrix<T>,
    pub start_scores: Vec<T>,
    pub end_scores: Vec<T>,
}

impl<T: Scalar> CrfGrads<T> {
    pub fn zeros(num_tags: usize) -> Self {
        Self {
            transitions: Matrix::zeros(num_tags, num_tags),
            start_scores: vec![T::zero(); num_tags],
            end_scores: vec![T::zero(); num_tags],
        }
    }
}

impl<T: Scalar> CrfParams<T> {
    pub fn zeros(num_tags: usize) -> Self {
        Self {
            transitions: Matrix::zeros(num_tags, num_tags),
            start_scores: vec![T::zero(); num_tags],
            end_scores: vec![T::zero(); num_tags],
        }
    }

    pub fn num_tags(&self) -> usize {
        self.start_scores.len()
    }

    pub fn is_finite(&self) -> bool {
        self.transitions.is_finite()
            && self.start_scores.iter().all(|x| x.is_finite())
            && self.end_scores.iter().all(|x| x.is_finite())
    }

    /// Copy with forbidden IOB2 moves (`O → I-X`, `B-X/I-X → I-Y` for `Y ≠ X`,
    /// start `→ I-X`) pinned to [`MASK_SCORE`].
    pub fn with_bio_mask(&self, labels: &LabelSet) -> Self {
        let mut masked = self.clone();
        let n = labels.num_tags().min(self.num_tags());
        let mask = T::lit(MASK_SCORE);
        for j in 0..n {
            let Some(to) = labels.tag_at(j) else { continue };
            if !to.can_follow(None) {
                masked.start_scores[j] = mask;
            }
            for i in 0..n {
                let from = labels.tag_at(i).unwrap_or(Tag::Outside);
                if !to.can_follow(Some(&from)) {
                    masked.transitions.set(i, j, mask);
                }
            }
        }
        masked
    }

    fn check(&self, emissions: &Matrix<T>) -> Result<(), CrfError> {
        if emissions.rows() == 0 {
            return Err(CrfError::Empty);
        }
        if emissions.cols() != self.num_tags() {
            return Err(CrfError::Shape { expected: self.num_tags(), found: emissions.cols() });
        }
        if !emissions.is_finite() {
            return Err(CrfError::NonFinite("emissions"));
        }
        if !self.is_finite() {
            return Err(CrfError::NonFinite("CRF parameters"));
        }
        Ok(())
    }

    fn check_path(&self, len: usize, tags: &[usize]) -> Result<(), CrfError> {
        if tags.len() != len {
            return Err(CrfError::Length { expected: len, found: tags.len() });
        }
        let n = self.num_tags();
        match tags.iter().enumerate().find(|(_, &k)| k >= n) {
            Some((position, &tag)) => Err(CrfError::TagOutOfRange { position, tag, num_tags: n }),
            None => Ok(()),
        }
    }

    /// Unnormalized score of `tags`.
    pub fn path_score(&self, emissions: &Matrix<T>, tags: &[usize]) -> Result<T, CrfError> {
        self.check_path(emissions.rows(), tags)?;
        Ok(self.score_unchecked(emissions, tags))
    }

    fn score_unchecked(&self, emissions: &Matrix<T>, tags: &[usize]) -> T {
        let mut s = self.start_scores[tags[0]] + emissions.get(0, tags[0]);
        for t in 1..tags.len() {
            s += self.transitions.get(tags[t - 1], tags[t]) + emissions.get(t, tags[t]);
        }
        s + self.end_scores[tags[tags.len() - 1]]
    }

    /// Forward table: `alpha[t][k]` = log-sum of all prefixes ending in `k` at `t`.
    fn forward(&self, emissions: &Matrix<T>) -> Matrix<T> {
        let (len, n) = emissions.shape();
        let mut alpha = Matrix::zeros(len, n);
        for k in 0..n {
            alpha.set(0, k, self.start_scores[k] + emissions.get(0, k));
        }
        for t in 1..len {
            for k in 0..n {
                let v = log_sum_exp((0..n).map(|j| alpha.get(t - 1, j) + self.transitions.get(j, k)));
                alpha.set(t, k, v + emissions.get(t, k));
            }
        }
        alpha
    }

    /// Backward table: `beta[t][k]` = log-sum of all suffixes after `k` at `t`.
    fn backward(&self, emissions: &Matrix<T>) -> Matrix<T> {
        let (len, n) = emissions.shape();
        let mut beta = Matrix::zeros(len, n);
        for k in 0..n {
            beta.set(len - 1, k, self.end_scores[k]);
        }
        for t in (0..len - 1).rev() {
            for j in 0..n {
                let v = log_sum_exp(
                    (0..n).map(|k| self.transitions.get(j, k) + emissions.get(t + 1, k) + beta.get(t + 1, k)),
                );
                beta.set(t, j, v);
            }
        }
        beta
    }

    fn log_z(&self, alpha: &Matrix<T>) -> T {
        let last = alpha.rows() - 1;
        log_sum_exp((0..self.num_tags()).map(|k| alpha.get(last, k) + self.end_scores[k]))
    }

    pub fn log_partition(&self, emissions: &Matrix<T>) -> Result<T, CrfError> {
        self.check(emissions)?;
        let z = self.log_z(&self.forward(emissions));
        z.is_finite().then_some(z).ok_or(CrfError::NonFinite("log partition"))
    }

    /// `log Z - score(gold)`.
    pub fn nll(&self, emissions: &Matrix<T>, gold: &[usize]) -> Result<T, CrfError> {
        self.check(emissions)?;
        self.check_path(emissions.rows(), gold)?;
        let z = self.log_partition(emissions)?;
        Ok((z - self.score_unchecked(emissions, gold)).max(T::zero()))
    }

    /// Per-position tag posteriors (forward-backward).
    pub fn marginals(&self, emissions: &Matrix<T>) -> Result<Matrix<T>, CrfError> {
        self.check(emissions)?;
        let alpha = self.forward(emissions);
        let beta = self.backward(emissions);
        let z = self.log_z(&alpha);
        if !z.is_finite() {
            return Err(CrfError::NonFinite("log partition"));
        }
        let (len, n) = emissions.shape();
        let mut m = Matrix::zeros(len, n);
        for t in 0..len {
            for k in 0..n {
                m.set(t, k, (alpha.get(t, k) + beta.get(t, k) - z).exp());
            }
        }
        Ok(m)
    }

    /// NLL of `gold` with its gradients: `marginals - onehot(gold)` for the
    /// emissions, expected minus observed counts for the CRF parameters.
    pub fn nll_with_grads(
        &self,
        emissions: &Matrix<T>,
        gold: &[usize],
    ) -> Result<(T, Matrix<T>, CrfGrads<T>), CrfError> {
        self.check(emissions)?;
        self.check_path(emissions.rows(), gold)?;
        let (len, n) = emissions.shape();
        let alpha = self.forward(emissions);
        let beta = self.backward(emissions);
        let z = self.log_z(&alpha);
        if !z.is_finite() {
            return Err(CrfError::NonFinite("log partition"));
        }
        let nll = (z - self.score_unchecked(emissions, gold)).max(T::zero());

        let mut d_emit = Matrix::zeros(len, n);
        for (t, &y) in gold.iter().enumerate() {
            for k in 0..n {
                d_emit.set(t, k, (alpha.get(t, k) + beta.get(t, k) - z).exp());
            }
            d_emit.add_at(t, y, -T::one());
        }
        let mut g = CrfGrads::zeros(n);
        g.start_scores.copy_from_slice(d_emit.row(0));
        g.end_scores.copy_from_slice(d_emit.row(len - 1));
        for t in 1..len {
            for i in 0..n {
                let a = alpha.get(t - 1, i);
                for j in 0..n {
                    let p = (a + self.transitions.get(i, j) + emissions.get(t, j) + beta.get(t, j) - z).exp();
                    g.transitions.add_at(i, j, p);
                }
            }
            g.transitions.add_at(gold[t - 1], gold[t], -T::one());
        }
        Ok((nll, d_emit, g))
    }

    /// Highest-scoring path. Ties go to the lowest tag index at each
    /// backtracking step, starting from the last position.
    pub fn viterbi(&self, emissions: &Matrix<T>) -> Result<PathScore<T>, CrfError> {
        self.check(emissions)?;
        let (len, n) = emissions.shape();
        let mut delta: Vec<T> = (0..n).map(|k| self.start_scores[k] + emissions.get(0, k)).collect();
        let mut back = vec![vec![0usize; n]; len];
        for (t, bp) in back.iter_mut().enumerate().skip(1) {
            let mut next = vec![T::zero(); n];
            for k in 0..n {
                let (mut best, mut arg) = (T::neg_infinity(), 0);
                for (j, &d) in delta.iter().enumerate() {
                    let s = d + self.transitions.get(j, k);
                    if s > best {
                        best = s;
                        arg = j;
                    }
                }
                next[k] = best + emissions.get(t, k);
                bp[k] = arg;
            }
            delta = next;
        }
        let (mut best, mut last) = (T::neg_infinity(), 0);
        for (k, &d) in delta.iter().enumerate() {
            let s = d + self.end_scores[k];
            if s > best {
                best = s;
                last = k;
            }
        }
        let mut tags = vec![0; len];
        tags[len - 1] = last;
        for t in (1..len).rev() {
            tags[t - 1] = back[t][tags[t]];
        }
        Ok(PathScore { tags, score: best })
    }
}

/// Exhaustive reference values.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult<T> {
    pub log_partition: T,
    pub best_path: PathScore<T>,
    pub marginals: Matrix<T>,
}

/// `true` when `a` should win a tie against `b`: smaller tag at the last
/// position where they differ.
fn wins_tie(a: &[usize], b: &[usize]) -> bool {
    a.iter().rev().cmp(b.iter().rev()) == std::cmp::Ordering::Less
}

/// Enumerates every tag sequence. Refuses instances with more than
/// [`ORACLE_MAX_PATHS`] paths.
pub fn brute_force_oracle<T: Scalar>(emissions: &Matrix<T>, crf: &CrfParams<T>) -> Result<OracleResult<T>, CrfError> {
    crf.check(emissions)?;
    let (len, n) = emissions.shape();
    let too_large = CrfError::TooLarge { tags: n, len, limit: ORACLE_MAX_PATHS };
    let total = (0..len).try_fold(1usize, |acc, _| acc.checked_mul(n).filter(|&p| p <= ORACLE_MAX_PATHS));
    let total = total.ok_or(too_large)?;

    let mut scores = Vec::with_capacity(total);
    let mut paths = Vec::with_capacity(total);
    let mut path = vec![0usize; len];
    for _ in 0..total {
        scores.push(crf.score_unchecked(emissions, &path));
        paths.push(path.clone());
        // odometer increment, position 0 fastest
        for slot in path.iter_mut() {
            *slot += 1;
            if *slot < n {
                break;
            }
            *slot = 0;
        }
    }
    let log_partition = log_sum_exp(scores.iter().copied());
    let mut best = 0;
    for i in 1..total {
        if scores[i] > scores[best] || (scores[i] == scores[best] && wins_tie(&paths[i], &paths[best])) {
            best = i;
        }
    }
    let mut marginals = Matrix::zeros(len, n);
    for (p, &s) in paths.iter().zip(&scores) {
        let w = (s - log_partition).exp();
        for (t, &k) in p.iter().enumerate() {
            marginals.add_at(t, k, w);
        }
    }
    Ok(OracleResult {
        log_partition,
        best_path: PathScore { tags: paths[best].clone(), score: scores[best] },
        marginals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng, len: usize, n: usize) -> (Matrix<f64>, CrfParams<f64>) {
        let mut u = || rng.gen_range(-2.0..2.0);
        let e = Matrix::from_vec(len, n, (0..len * n).map(|_| u()).collect()).unwrap();
        let crf = CrfParams {
            transitions: Matrix::from_vec(n, n, (0..n * n).map(|_| u()).collect()).unwrap(),
            start_scores: (0..n).map(|_| u()).collect(),
            end_scores: (0..n).map(|_| u()).collect(),
        };
        (e, crf)
    }

    #[test]
    fn log_partition_uniform() {
        let crf = CrfParams::<f64>::zeros(2);
        let z1 = crf.log_partition(&Matrix::zeros(1, 2)).unwrap();
        assert!((z1 - 2f64.ln()).abs() < 1e-15);
        let z2 = crf.log_partition(&Matrix::zeros(2, 2)).unwrap();
        assert!((z2 - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn log_partition_matches_enumeration_3x3() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (e, crf) = random_instance(&mut rng, 3, 3);
        let mut explicit = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                for c in 0..3 {
                    explicit += crf.path_score(&e, &[a, b, c]).unwrap().exp();
                }
            }
        }
        assert!((crf.log_partition(&e).unwrap() - explicit.ln()).abs() < 1e-9);
    }

    #[test]
    fn nll_examples() {
        let one = CrfParams::<f64>::zeros(1);
        assert_eq!(one.nll(&Matrix::filled(3, 1, 0.7), &[0, 0, 0]).unwrap(), 0.0);
        let crf = CrfParams::<f64>::zeros(2);
        for gold in [[0, 0], [0, 1], [1, 0], [1, 1]] {
            assert!((crf.nll(&Matrix::zeros(2, 2), &gold).unwrap() - 4f64.ln()).abs() < 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (e, crf) = random_instance(&mut rng, 3, 3);
        let gold = [2, 0, 1];
        let o = brute_force_oracle(&e, &crf).unwrap();
        let expected = o.log_partition - crf.path_score(&e, &gold).unwrap();
        assert!((crf.nll(&e, &gold).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn nll_rejects_bad_gold() {
        let crf = CrfParams::<f64>::zeros(2);
        let e = Matrix::zeros(2, 2);
        assert_eq!(crf.nll(&e, &[0, 2]), Err(CrfError::TagOutOfRange { position: 1, tag: 2, num_tags: 2 }));
        assert_eq!(crf.nll(&e, &[0]), Err(CrfError::Length { expected: 2, found: 1 }));
    }

    #[test]
    fn non_finite_inputs_rejected() {
        let crf = CrfParams::<f64>::zeros(2);
        let mut e = Matrix::zeros(2, 2);
        e.set(1, 1, f64::NAN);
        assert_eq!(crf.log_partition(&e), Err(CrfError::NonFinite("emissions")));
        assert_eq!(crf.log_partition(&Matrix::zeros(0, 2)), Err(CrfError::Empty));
        assert!(matches!(crf.log_partition(&Matrix::zeros(1, 3)), Err(CrfError::Shape { .. })));
    }

    #[test]
    fn viterbi_examples() {
        let crf = CrfParams::<f64>::zeros(3);
        let e = Matrix::from_rows(&[vec![1.0, 3.0, 2.0]]).unwrap();
        let p = crf.viterbi(&e).unwrap();
        assert_eq!(p.tags, vec![1]);
        assert_eq!(p.score, 3.0);

        let mut crf = CrfParams::<f64>::zeros(3);
        crf.start_scores = vec![0.0, 0.5, 0.0];
        crf.end_scores = vec![0.0, 0.25, 0.0];
        assert_eq!(crf.viterbi(&e).unwrap().score, 3.75);

        let p = CrfParams::<f64>::zeros(2).viterbi(&Matrix::zeros(2, 2)).unwrap();
        assert_eq!(p.tags, vec![0, 0]);
    }

    #[test]
    fn viterbi_matches_oracle_4x3() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (e, crf) = random_instance(&mut rng, 4, 3);
            let v = crf.viterbi(&e).unwrap();
            let o = brute_force_oracle(&e, &crf).unwrap();
            assert_eq!(v.tags, o.best_path.tags);
            assert!((v.score - o.best_path.score).abs() < 1e-12);
        }
    }

    #[test]
    fn tie_rule_shared_by_viterbi_and_oracle() {
        // all paths tie
        for (len, n) in [(1, 3), (2, 2), (3, 3)] {
            let crf = CrfParams::<f64>::zeros(n);
            let e = Matrix::zeros(len, n);
            assert_eq!(crf.viterbi(&e).unwrap().tags, brute_force_oracle(&e, &crf).unwrap().best_path.tags);
            assert!(crf.viterbi(&e).unwrap().tags.iter().all(|&k| k == 0));
        }
        // tags 1 and 2 tie at the last position; 1 wins
        let crf = CrfParams::<f64>::zeros(3);
        let e = Matrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![0.0, 2.0, 2.0]]).unwrap();
        assert_eq!(crf.viterbi(&e).unwrap().tags, vec![1, 1]);
        assert_eq!(brute_force_oracle(&e, &crf).unwrap().best_path.tags, vec![1, 1]);
    }

    #[test]
    fn marginals_examples() {
        let m = CrfParams::<f64>::zeros(4).marginals(&Matrix::zeros(3, 4)).unwrap();
        assert!(m.as_slice().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        let m = CrfParams::<f64>::zeros(1).marginals(&Matrix::filled(2, 1, 3.0)).unwrap();
        assert!(m.as_slice().iter().all(|&p| p == 1.0));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (e, crf) = random_instance(&mut rng, 4, 3);
        let m = crf.marginals(&e).unwrap();
        let o = brute_force_oracle(&e, &crf).unwrap();
        for (a, b) in m.as_slice().iter().zip(o.marginals.as_slice()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn oracle_refuses_large_instances() {
        let crf = CrfParams::<f64>::zeros(10);
        assert!(matches!(brute_force_oracle(&Matrix::zeros(7, 10), &crf), Err(CrfError::TooLarge { .. })));
        assert!(brute_force_oracle(&Matrix::zeros(6, 10), &crf).is_ok());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (e, crf) = random_instance(&mut rng, 4, 3);
        let gold = [0, 2, 2, 1];
        let (_, d_emit, g) = crf.nll_with_grads(&e, &gold).unwrap();
        let h = 1e-5;
        for t in 0..4 {
            for k in 0..3 {
                let mut ep = e.clone();
                ep.add_at(t, k, h);
                let mut em = e.clone();
                em.add_at(t, k, -h);
                let fd = (crf.nll(&ep, &gold).unwrap() - crf.nll(&em, &gold).unwrap()) / (2.0 * h);
                assert!((fd - d_emit.get(t, k)).abs() < 1e-7);
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                let mut cp = crf.clone();
                cp.transitions.add_at(i, j, h);
                let mut cm = crf.clone();
                cm.transitions.add_at(i, j, -h);
                let fd = (cp.nll(&e, &gold).unwrap() - cm.nll(&e, &gold).unwrap()) / (2.0 * h);
                assert!((fd - g.transitions.get(i, j)).abs() < 1e-7);
            }
            let mut cp = crf.clone();
            cp.start_scores[i] += h;
            let mut cm = crf.clone();
            cm.start_scores[i] -= h;
            let fd = (cp.nll(&e, &gold).unwrap() - cm.nll(&e, &gold).unwrap()) / (2.0 * h);
            assert!((fd - g.start_scores[i]).abs() < 1e-7);
            let mut cp = crf.clone();
            cp.end_scores[i] += h;
            let mut cm = crf.clone();
            cm.end_scores[i] -= h;
            let fd = (cp.nll(&e, &gold).unwrap() - cm.nll(&e, &gold).unwrap()) / (2.0 * h);
            assert!((fd - g.end_scores[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn bio_mask_forbids_invalid_moves() {
        let labels = LabelSet::new(["X", "Y"]).unwrap();
        let crf = CrfParams::<f64>::zeros(labels.num_tags()).with_bio_mask(&labels);
        let idx = |s: &str| labels.tag_index(&s.parse().unwrap()).unwrap();
        let m = MASK_SCORE;
        assert_eq!(crf.transitions.get(idx("O"), idx("I-X")), m);
        assert_eq!(crf.transitions.get(idx("B-Y"), idx("I-X")), m);
        assert_eq!(crf.transitions.get(idx("I-Y"), idx("I-X")), m);
        assert_eq!(crf.transitions.get(idx("B-X"), idx("I-X")), 0.0);
        assert_eq!(crf.transitions.get(idx("I-X"), idx("I-X")), 0.0);
        assert_eq!(crf.transitions.get(idx("I-X"), idx("B-Y")), 0.0);
        assert_eq!(crf.start_scores[idx("I-Y")], m);
        assert_eq!(crf.start_scores[idx("B-Y")], 0.0);

        // emissions favouring I-X everywhere still decode to a valid sequence
        let mut e = Matrix::zeros(3, labels.num_tags());
        for t in 0..3 {
            e.set(t, idx("I-X"), 5.0);
        }
        let path = crf.viterbi(&e).unwrap().tags;
        assert_eq!(path, vec![idx("B-X"), idx("I-X"), idx("I-X")]);
    }

    #[test]
    fn works_in_f32() {
        let crf = CrfParams::<f32>::zeros(2);
        let z = crf.log_partition(&Matrix::zeros(2, 2)).unwrap();
        assert!((z - 4f32.ln()).abs() < 1e-6);
    }
}
