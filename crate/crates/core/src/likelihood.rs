//! Linear-chain structured softmax likelihood and decoders.
//!
//! Everything here works in log space; scores up to ±700 must not overflow.
//! The inference engine only sees the [`SequenceLikelihood`] callback, so the
//! exact chain likelihood and the piecewise pseudo-likelihood are
//! interchangeable without touching estimator or optimizer code.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Per-token, per-label latent scores; shape T×V.
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryScores {
    values: DMatrix<f64>,
}

impl UnaryScores {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() < 1 {
            return Err(Error::invalid("unary scores", "need at least one token"));
        }
        if values.ncols() < 2 {
            return Err(Error::invalid("unary scores", "need at least two labels"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("unary scores"));
        }
        Ok(UnaryScores { values })
    }

    pub fn tokens(&self) -> usize {
        self.values.nrows()
    }

    pub fn labels(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, t: usize, j: usize) -> f64 {
        self.values[(t, j)]
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// Transition scores for label pairs a→b; shape V×V.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseScores {
    values: DMatrix<f64>,
}

impl PairwiseScores {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::dimension(
                "pairwise scores",
                "square matrix",
                format!("{}x{}", values.nrows(), values.ncols()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("pairwise scores"));
        }
        Ok(PairwiseScores { values })
    }

    pub fn zeros(labels: usize) -> Self {
        PairwiseScores {
            values: DMatrix::zeros(labels, labels),
        }
    }

    pub fn labels(&self) -> usize {
        self.values.nrows()
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.values[(from, to)]
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// Label indices for one sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSequence {
    labels: Vec<usize>,
}

impl LabelSequence {
    pub fn new(labels: Vec<usize>, vocab_size: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("label sequence", "must not be empty"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= vocab_size) {
            return Err(Error::invalid(
                "label sequence",
                format!("label index {} out of range for vocabulary {}", bad, vocab_size),
            ));
        }
        Ok(LabelSequence { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, t: usize) -> usize {
        self.labels[t]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }
}

fn check_shapes(u: &UnaryScores, p: &PairwiseScores) {
    assert_eq!(
        u.labels(),
        p.labels(),
        "unary and pairwise scores disagree on vocabulary size"
    );
}

fn max_shift_logsumexp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Log of the structured-softmax normalizer, by the log-space forward
/// recursion in O(T·V²).
pub fn log_partition(u: &UnaryScores, p: &PairwiseScores) -> f64 {
    check_shapes(u, p);
    let (t_len, v) = (u.tokens(), u.labels());
    let mut alpha: Vec<f64> = (0..v).map(|j| u.get(0, j)).collect();
    let mut next = vec![0.0; v];
    let mut scratch = vec![0.0; v];
    for t in 1..t_len {
        for (j, slot) in next.iter_mut().enumerate() {
            for (a, s) in scratch.iter_mut().enumerate() {
                *s = alpha[a] + p.get(a, j);
            }
            *slot = max_shift_logsumexp(&scratch) + u.get(t, j);
        }
        std::mem::swap(&mut alpha, &mut next);
    }
    max_shift_logsumexp(&alpha)
}

/// Exact chain log-likelihood: path score minus log partition.
pub fn log_likelihood(y: &LabelSequence, u: &UnaryScores, p: &PairwiseScores) -> f64 {
    check_shapes(u, p);
    assert_eq!(y.len(), u.tokens(), "label sequence length must match unary scores");
    let mut score = 0.0;
    for t in 0..y.len() {
        score += u.get(t, y.get(t));
        if t + 1 < y.len() {
            score += p.get(y.get(t), y.get(t + 1));
        }
    }
    score - log_partition(u, p)
}

/// Piecewise pseudo-likelihood: every factor normalized locally. Cost is
/// O(T·V + V²) per sequence; the V² transition normalizer is shared by all
/// positions.
pub fn pseudo_log_likelihood(y: &LabelSequence, u: &UnaryScores, p: &PairwiseScores) -> f64 {
    check_shapes(u, p);
    assert_eq!(y.len(), u.tokens(), "label sequence length must match unary scores");
    let v = u.labels();
    let mut total = 0.0;
    let mut row = vec![0.0; v];
    for t in 0..y.len() {
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = u.get(t, j);
        }
        total += u.get(t, y.get(t)) - max_shift_logsumexp(&row);
    }
    if y.len() > 1 {
        let pair_norm = max_shift_logsumexp(p.values().as_slice());
        for t in 0..y.len() - 1 {
            total += p.get(y.get(t), y.get(t + 1)) - pair_norm;
        }
    }
    total
}

/// Highest-scoring label sequence; ties break toward the lowest label index.
pub fn viterbi(u: &UnaryScores, p: &PairwiseScores) -> LabelSequence {
    check_shapes(u, p);
    let (t_len, v) = (u.tokens(), u.labels());
    let mut delta: Vec<f64> = (0..v).map(|j| u.get(0, j)).collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(t_len.saturating_sub(1));
    let mut next = vec![0.0; v];
    for t in 1..t_len {
        let mut pointers = vec![0usize; v];
        for j in 0..v {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for a in 0..v {
                let s = delta[a] + p.get(a, j);
                if s > best {
                    best = s;
                    arg = a;
                }
            }
            next[j] = best + u.get(t, j);
            pointers[j] = arg;
        }
        std::mem::swap(&mut delta, &mut next);
        back.push(pointers);
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for (j, &s) in delta.iter().enumerate() {
        if s > best {
            best = s;
            last = j;
        }
    }
    let mut labels = vec![0usize; t_len];
    labels[t_len - 1] = last;
    for t in (1..t_len).rev() {
        labels[t - 1] = back[t - 1][labels[t]];
    }
    LabelSequence { labels }
}

/// Posterior token marginals p(y_t = j) by forward-backward; rows sum to 1.
pub fn node_marginals(u: &UnaryScores, p: &PairwiseScores) -> DMatrix<f64> {
    check_shapes(u, p);
    let (t_len, v) = (u.tokens(), u.labels());
    let mut alpha = DMatrix::zeros(t_len, v);
    for j in 0..v {
        alpha[(0, j)] = u.get(0, j);
    }
    let mut scratch = vec![0.0; v];
    for t in 1..t_len {
        for j in 0..v {
            for (a, s) in scratch.iter_mut().enumerate() {
                *s = alpha[(t - 1, a)] + p.get(a, j);
            }
            alpha[(t, j)] = max_shift_logsumexp(&scratch) + u.get(t, j);
        }
    }
    let mut beta = DMatrix::zeros(t_len, v);
    for t in (0..t_len - 1).rev() {
        for a in 0..v {
            for (b, s) in scratch.iter_mut().enumerate() {
                *s = p.get(a, b) + u.get(t + 1, b) + beta[(t + 1, b)];
            }
            beta[(t, a)] = max_shift_logsumexp(&scratch);
        }
    }
    let mut out = DMatrix::zeros(t_len, v);
    for t in 0..t_len {
        for j in 0..v {
            scratch[j] = alpha[(t, j)] + beta[(t, j)];
        }
        let norm = max_shift_logsumexp(&scratch);
        for j in 0..v {
            out[(t, j)] = (scratch[j] - norm).exp();
        }
        let row_sum: f64 = (0..v).map(|j| out[(t, j)]).sum();
        for j in 0..v {
            out[(t, j)] /= row_sum;
        }
    }
    out
}

/// The callback boundary between the likelihood and the inference engine.
pub trait SequenceLikelihood: Sync {
    fn score(&self, y: &LabelSequence, u: &UnaryScores, p: &PairwiseScores) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExactLikelihood;

impl SequenceLikelihood for ExactLikelihood {
    fn score(&self, y: &LabelSequence, u: &UnaryScores, p: &PairwiseScores) -> f64 {
        log_likelihood(y, u, p)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PseudoLikelihood;

impl SequenceLikelihood for PseudoLikelihood {
    fn score(&self, y: &LabelSequence, u: &UnaryScores, p: &PairwiseScores) -> f64 {
        pseudo_log_likelihood(y, u, p)
    }
}

/// Config-level selector for the two built-in likelihoods.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LikelihoodKind {
    Exact,
    Pseudo,
}

impl LikelihoodKind {
    pub fn name(&self) -> &'static str {
        match self {
            LikelihoodKind::Exact => "exact",
            LikelihoodKind::Pseudo => "pseudo",
        }
    }
}

impl SequenceLikelihood for LikelihoodKind {
    fn score(&self, y: &LabelSequence, u: &UnaryScores, p: &PairwiseScores) -> f64 {
        match self {
            LikelihoodKind::Exact => log_likelihood(y, u, p),
            LikelihoodKind::Pseudo => pseudo_log_likelihood(y, u, p),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn zeros(t: usize, v: usize) -> (UnaryScores, PairwiseScores) {
        (
            UnaryScores::new(DMatrix::zeros(t, v)).unwrap(),
            PairwiseScores::zeros(v),
        )
    }

    #[test]
    fn partition_of_zero_scores_counts_sequences() {
        let (u, p) = zeros(3, 2);
        assert_relative_eq!(log_partition(&u, &p), 3.0 * 2.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn partition_single_token_is_row_logsumexp() {
        let u = UnaryScores::new(DMatrix::from_row_slice(1, 2, &[0.3, -1.1])).unwrap();
        let p = PairwiseScores::new(DMatrix::from_row_slice(2, 2, &[5.0, -9.0, 2.0, 0.0])).unwrap();
        let expect = (0.3f64.exp() + (-1.1f64).exp()).ln();
        assert_relative_eq!(log_partition(&u, &p), expect, epsilon = 1e-12);

        let (u0, p0) = zeros(1, 2);
        assert_relative_eq!(log_partition(&u0, &p0), 2.0f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn partition_survives_extreme_scores() {
        let u = UnaryScores::new(DMatrix::from_row_slice(2, 2, &[700.0, -700.0, 700.0, -700.0])).unwrap();
        let p = PairwiseScores::zeros(2);
        let z = log_partition(&u, &p);
        assert!(z.is_finite());
        assert_relative_eq!(z, 1400.0, epsilon = 1e-6);
    }

    #[test]
    fn zero_scores_give_uniform_likelihood() {
        let (u, p) = zeros(4, 3);
        let y = LabelSequence::new(vec![0, 2, 1, 1], 3).unwrap();
        assert_relative_eq!(log_likelihood(&y, &u, &p), -4.0 * 3.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn two_token_identity_transition_by_hand() {
        // Four sequences: (0,0) and (1,1) score 1, the others 0.
        let u = UnaryScores::new(DMatrix::zeros(2, 2)).unwrap();
        let p = PairwiseScores::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0])).unwrap();
        let y = LabelSequence::new(vec![0, 0], 2).unwrap();
        let expect = 1.0 - (2.0 * 1.0f64.exp() + 2.0).ln();
        assert_relative_eq!(log_likelihood(&y, &u, &p), expect, epsilon = 1e-12);
    }

    #[test]
    fn pseudo_zero_scores_small_case() {
        let (u, p) = zeros(2, 2);
        let y = LabelSequence::new(vec![0, 1], 2).unwrap();
        assert_relative_eq!(
            pseudo_log_likelihood(&y, &u, &p),
            -4.0 * 2.0f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn pseudo_equals_exact_for_single_token() {
        let u = UnaryScores::new(DMatrix::from_row_slice(1, 3, &[0.4, -0.2, 1.7])).unwrap();
        let p = PairwiseScores::new(DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
        ))
        .unwrap();
        let y = LabelSequence::new(vec![2], 3).unwrap();
        assert_relative_eq!(
            pseudo_log_likelihood(&y, &u, &p),
            log_likelihood(&y, &u, &p),
            epsilon = 1e-12
        );
    }

    #[test]
    fn viterbi_zero_pairwise_is_argmax_with_low_tie() {
        let u = UnaryScores::new(DMatrix::from_row_slice(
            3,
            3,
            &[0.0, 1.0, 1.0, 2.0, 2.0, 0.0, -1.0, -1.0, -1.0],
        ))
        .unwrap();
        let p = PairwiseScores::zeros(3);
        let path = viterbi(&u, &p);
        assert_eq!(path.as_slice(), &[1, 0, 0]);
    }

    #[test]
    fn viterbi_all_zero_scores_returns_zeros() {
        let (u, p) = zeros(5, 3);
        assert_eq!(viterbi(&u, &p).as_slice(), &[0, 0, 0, 0, 0]);
    }

    #[test]
    fn marginals_uniform_and_softmax_cases() {
        let (u, p) = zeros(3, 4);
        let m = node_marginals(&u, &p);
        for t in 0..3 {
            for j in 0..4 {
                assert_relative_eq!(m[(t, j)], 0.25, epsilon = 1e-12);
            }
        }

        let u1 = UnaryScores::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap();
        let m1 = node_marginals(&u1, &PairwiseScores::zeros(2));
        let e = 1.0f64.exp();
        assert_relative_eq!(m1[(0, 0)], e / (e + 1.0), epsilon = 1e-12);
    }

    #[test]
    fn marginal_rows_sum_to_one() {
        let u = UnaryScores::new(DMatrix::from_row_slice(
            2,
            3,
            &[3.0, -2.0, 0.5, 1.0, 1.0, -4.0],
        ))
        .unwrap();
        let p = PairwiseScores::new(DMatrix::from_row_slice(
            3,
            3,
            &[0.1, -0.3, 0.2, 0.0, 0.7, -0.5, 0.4, 0.0, 0.0],
        ))
        .unwrap();
        let m = node_marginals(&u, &p);
        for t in 0..2 {
            let s: f64 = (0..3).map(|j| m[(t, j)]).sum();
            assert_relative_eq!(s, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn rejects_invalid_inputs() {
        assert!(UnaryScores::new(DMatrix::zeros(0, 2)).is_err());
        assert!(UnaryScores::new(DMatrix::zeros(2, 1)).is_err());
        assert!(UnaryScores::new(DMatrix::from_element(1, 2, f64::NAN)).is_err());
        assert!(PairwiseScores::new(DMatrix::zeros(2, 3)).is_err());
        assert!(LabelSequence::new(vec![], 2).is_err());
        assert!(LabelSequence::new(vec![2], 2).is_err());
    }
}
