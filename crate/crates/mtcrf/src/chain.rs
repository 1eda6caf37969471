//! Exact linear-chain CRF over one label inventory.
//!
//! A sequence y scores start[y_1] + sum_t [A f_t]_{y_t} + sum_t B[y_{t-1},
//! y_t] + stop[y_T]; p(y|x) is the softmax of that score over all K^T
//! sequences. Everything runs in the log domain: the forward recursion gives
//! log Z, forward-backward gives exact marginals, and Viterbi the argmax.
//!
//! The operations that take an [`EmissionScores`] matrix rather than features
//! do not touch `A`, so callers may pass augmented scores (emissions plus
//! coupling potentials) and still get exact chain inference over them.

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{logsumexp, FlatParams};
use crate::tagset::LabelId;

/// T × K matrix, entry (t, y) = [A f_t]_y.
pub type EmissionScores = Array2<f64>;

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("feature matrix has {found} columns, head expects {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("gold label {label} at position {pos} out of range for {k} labels")]
    LabelOutOfRange { pos: usize, label: LabelId, k: usize },
}

/// Parameters of one chain: emission projection plus transition potentials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainHead {
    /// K × d; row y maps a feature vector to label y's emission score.
    pub a: Array2<f64>,
    /// K × K transition log-potentials; `b[[prev, next]]`.
    pub b: Array2<f64>,
    /// K start log-potentials for the first position.
    pub start: Array1<f64>,
    /// K stop log-potentials for the last position.
    pub stop: Array1<f64>,
}

impl ChainHead {
    pub fn zeros(num_labels: usize, feature_dim: usize) -> ChainHead {
        ChainHead {
            a: Array2::zeros((num_labels, feature_dim)),
            b: Array2::zeros((num_labels, num_labels)),
            start: Array1::zeros(num_labels),
            stop: Array1::zeros(num_labels),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.a.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.a.ncols()
    }

    /// Emission scores for one sentence's features.
    pub fn emissions(&self, features: &Array2<f64>) -> Result<EmissionScores, ChainError> {
        emission_scores(features, &self.a)
    }
}

impl FlatParams for ChainHead {
    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.a.iter());
        out.extend(self.b.iter());
        out.extend(self.start.iter());
        out.extend(self.stop.iter());
        out
    }

    fn assign_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        for slot in self
            .a
            .iter_mut()
            .chain(self.b.iter_mut())
            .chain(self.start.iter_mut())
            .chain(self.stop.iter_mut())
        {
            *slot = *it.next().expect("flat vector too short");
        }
        assert!(it.next().is_none(), "flat vector too long");
    }
}

/// Per-time-step matrix product: row t of the result is A f_t.
pub fn emission_scores(
    features: &Array2<f64>,
    a: &Array2<f64>,
) -> Result<EmissionScores, ChainError> {
    if features.ncols() != a.ncols() {
        return Err(ChainError::ShapeMismatch {
            expected: a.ncols(),
            found: features.ncols(),
        });
    }
    Ok(features.dot(&a.t()))
}

/// Forward recursion over log-potentials. `alpha[[t, y]]` is the log-sum of
/// all prefix paths ending in label y at position t, start potential and
/// emissions included.
fn forward_lattice(scores: &EmissionScores, head: &ChainHead) -> Array2<f64> {
    let (t_len, k) = scores.dim();
    let mut alpha = Array2::zeros((t_len, k));
    for y in 0..k {
        alpha[[0, y]] = head.start[y] + scores[[0, y]];
    }
    let mut terms = vec![0.0; k];
    for t in 1..t_len {
        for y in 0..k {
            for (prev, term) in terms.iter_mut().enumerate() {
                *term = alpha[[t - 1, prev]] + head.b[[prev, y]];
            }
            alpha[[t, y]] = scores[[t, y]] + logsumexp(&terms);
        }
    }
    alpha
}

/// Log-partition log Z over all K^T sequences.
pub fn log_partition(scores: &EmissionScores, head: &ChainHead) -> f64 {
    let alpha = forward_lattice(scores, head);
    let t_last = scores.nrows() - 1;
    let terms: Vec<f64> = (0..scores.ncols())
        .map(|y| alpha[[t_last, y]] + head.stop[y])
        .collect();
    logsumexp(&terms)
}

/// Exact marginals: unary p(y_t = y | x) and pairwise p(y_t = a, y_{t+1} = b | x).
/// The pairwise array has one K × K slab per adjacent position pair.
pub fn forward_backward(
    scores: &EmissionScores,
    head: &ChainHead,
) -> (Array2<f64>, Array3<f64>) {
    let (t_len, k) = scores.dim();
    let alpha = forward_lattice(scores, head);

    let mut beta = Array2::zeros((t_len, k));
    for y in 0..k {
        beta[[t_len - 1, y]] = head.stop[y];
    }
    let mut terms = vec![0.0; k];
    for t in (0..t_len - 1).rev() {
        for y in 0..k {
            for (next, term) in terms.iter_mut().enumerate() {
                *term = head.b[[y, next]] + scores[[t + 1, next]] + beta[[t + 1, next]];
            }
            beta[[t, y]] = logsumexp(&terms);
        }
    }

    let log_z = logsumexp(
        &(0..k)
            .map(|y| alpha[[t_len - 1, y]] + head.stop[y])
            .collect::<Vec<_>>(),
    );

    let mut unary = Array2::zeros((t_len, k));
    for t in 0..t_len {
        for y in 0..k {
            unary[[t, y]] = (alpha[[t, y]] + beta[[t, y]] - log_z).exp();
        }
    }
    let mut pairwise = Array3::zeros((t_len.saturating_sub(1), k, k));
    for t in 0..t_len.saturating_sub(1) {
        for prev in 0..k {
            for next in 0..k {
                pairwise[[t, prev, next]] = (alpha[[t, prev]]
                    + head.b[[prev, next]]
                    + scores[[t + 1, next]]
                    + beta[[t + 1, next]]
                    - log_z)
                    .exp();
            }
        }
    }
    (unary, pairwise)
}

/// Highest-scoring label sequence and its score. Ties at every backpointer
/// decision (and at the final state) break toward the lower label id, so the
/// output is deterministic.
pub fn viterbi(scores: &EmissionScores, head: &ChainHead) -> (Vec<LabelId>, f64) {
    let (t_len, k) = scores.dim();
    let mut delta = Array2::zeros((t_len, k));
    let mut back = Array2::zeros((t_len, k));
    for y in 0..k {
        delta[[0, y]] = head.start[y] + scores[[0, y]];
    }
    for t in 1..t_len {
        for y in 0..k {
            let mut best_prev = 0;
            let mut best = delta[[t - 1, 0]] + head.b[[0, y]];
            for prev in 1..k {
                let cand = delta[[t - 1, prev]] + head.b[[prev, y]];
                if cand > best {
                    best = cand;
                    best_prev = prev;
                }
            }
            delta[[t, y]] = best + scores[[t, y]];
            back[[t, y]] = best_prev;
        }
    }
    let mut last = 0;
    let mut best = delta[[t_len - 1, 0]] + head.stop[0];
    for y in 1..k {
        let cand = delta[[t_len - 1, y]] + head.stop[y];
        if cand > best {
            best = cand;
            last = y;
        }
    }
    let mut path = vec![0usize; t_len];
    path[t_len - 1] = last;
    for t in (1..t_len).rev() {
        path[t - 1] = back[[t, path[t]]];
    }
    (path, best)
}

/// Total score of one sequence, accumulated left to right.
pub fn score_path(scores: &EmissionScores, head: &ChainHead, path: &[LabelId]) -> f64 {
    let mut total = head.start[path[0]] + scores[[0, path[0]]];
    for t in 1..path.len() {
        total += head.b[[path[t - 1], path[t]]] + scores[[t, path[t]]];
    }
    total + head.stop[path[path.len() - 1]]
}

/// Loss and gradients of the chain NLL at the emission-score level.
pub struct ScoreGradients {
    pub loss: f64,
    /// dL/dscores, T × K: marginals minus the gold indicator.
    pub d_scores: Array2<f64>,
    pub d_b: Array2<f64>,
    pub d_start: Array1<f64>,
    pub d_stop: Array1<f64>,
}

/// NLL of a gold sequence given fixed emission scores: loss = log Z −
/// score(gold). Gradients are expectations minus gold counts, the standard
/// exponential-family form, so they come straight from forward-backward.
pub fn nll_from_scores(
    scores: &EmissionScores,
    head: &ChainHead,
    gold: &[LabelId],
) -> Result<ScoreGradients, ChainError> {
    let (t_len, k) = scores.dim();
    assert_eq!(gold.len(), t_len, "gold length must match scores");
    if let Some(pos) = gold.iter().position(|&y| y >= k) {
        return Err(ChainError::LabelOutOfRange {
            pos,
            label: gold[pos],
            k,
        });
    }
    let (unary, pairwise) = forward_backward(scores, head);
    let log_z = log_partition(scores, head);
    let loss = log_z - score_path(scores, head, gold);

    let mut d_scores = unary;
    for (t, &y) in gold.iter().enumerate() {
        d_scores[[t, y]] -= 1.0;
    }
    let mut d_b = Array2::zeros((k, k));
    for t in 0..t_len - 1 {
        for prev in 0..k {
            for next in 0..k {
                d_b[[prev, next]] += pairwise[[t, prev, next]];
            }
        }
        d_b[[gold[t], gold[t + 1]]] -= 1.0;
    }
    // Start/stop each enter every path score exactly once, at the boundary
    // position, so their gradients coincide with the boundary score rows.
    let d_start = d_scores.row(0).to_owned();
    let d_stop = d_scores.row(t_len - 1).to_owned();
    Ok(ScoreGradients {
        loss,
        d_scores,
        d_b,
        d_start,
        d_stop,
    })
}

/// Loss and gradients of the chain NLL for one sentence.
pub struct ChainGradients {
    pub loss: f64,
    /// dL/dF, T × d: flows back into the featurizer.
    pub d_features: Array2<f64>,
    pub d_a: Array2<f64>,
    pub d_b: Array2<f64>,
    pub d_start: Array1<f64>,
    pub d_stop: Array1<f64>,
}

/// NLL of a gold sequence with gradients for the head and the features.
pub fn nll_and_grad(
    features: &Array2<f64>,
    head: &ChainHead,
    gold: &[LabelId],
) -> Result<ChainGradients, ChainError> {
    let scores = head.emissions(features)?;
    let sg = nll_from_scores(&scores, head, gold)?;
    Ok(ChainGradients {
        loss: sg.loss,
        d_features: sg.d_scores.dot(&head.a),
        d_a: sg.d_scores.t().dot(features),
        d_b: sg.d_b,
        d_start: sg.d_start,
        d_stop: sg.d_stop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{central_difference, max_rel_error};
    use crate::oracle;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_head(rng: &mut ChaCha8Rng, k: usize, d: usize, scale: f64) -> ChainHead {
        ChainHead {
            a: Array2::from_shape_fn((k, d), |_| rng.gen_range(-scale..scale)),
            b: Array2::from_shape_fn((k, k), |_| rng.gen_range(-scale..scale)),
            start: Array1::from_shape_fn(k, |_| rng.gen_range(-scale..scale)),
            stop: Array1::from_shape_fn(k, |_| rng.gen_range(-scale..scale)),
        }
    }

    fn random_scores(rng: &mut ChaCha8Rng, t: usize, k: usize, scale: f64) -> EmissionScores {
        Array2::from_shape_fn((t, k), |_| rng.gen_range(-scale..scale))
    }

    #[test]
    fn zero_projection_gives_zero_emissions() {
        let f = Array2::from_elem((3, 2), 0.7);
        let scores = emission_scores(&f, &Array2::zeros((4, 2))).unwrap();
        assert_eq!(scores.dim(), (3, 4));
        assert!(scores.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_product_matches() {
        let f = Array2::from_shape_vec((1, 1), vec![3.0]).unwrap();
        let a = Array2::from_shape_vec((2, 1), vec![1.0, 2.0]).unwrap();
        let scores = emission_scores(&f, &a).unwrap();
        assert_eq!(scores[[0, 0]], 3.0);
        assert_eq!(scores[[0, 1]], 6.0);
    }

    #[test]
    fn emissions_match_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-2.0..2.0));
        let a = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-2.0..2.0));
        let scores = emission_scores(&f, &a).unwrap();
        for t in 0..4 {
            for y in 0..5 {
                let naive: f64 = (0..3).map(|i| a[[y, i]] * f[[t, i]]).sum();
                assert!((scores[[t, y]] - naive).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn emission_shape_mismatch_is_reported() {
        let f = Array2::zeros((2, 3));
        let a = Array2::zeros((4, 2));
        assert!(matches!(
            emission_scores(&f, &a),
            Err(ChainError::ShapeMismatch { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn uniform_potentials_count_paths() {
        let head = ChainHead::zeros(2, 1);
        let scores = Array2::zeros((2, 2));
        assert!((log_partition(&scores, &head) - 2.0 * 2f64.ln()).abs() < 1e-12);
        let head = ChainHead::zeros(4, 1);
        let scores = Array2::zeros((3, 4));
        assert!((log_partition(&scores, &head) - 3.0 * 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_partition_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let head = random_head(&mut rng, 3, 1, 1.5);
            let scores = random_scores(&mut rng, 4, 3, 1.5);
            let exact = log_partition(&scores, &head);
            let brute = oracle::brute_force_log_partition(&scores, &head);
            assert!((exact - brute).abs() < 1e-10, "{exact} vs {brute}");
        }
    }

    #[test]
    fn uniform_marginals_are_flat() {
        let head = ChainHead::zeros(3, 1);
        let scores = Array2::zeros((4, 3));
        let (unary, pairwise) = forward_backward(&scores, &head);
        assert!(unary.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
        assert!(pairwise.iter().all(|v| (v - 1.0 / 9.0).abs() < 1e-12));
    }

    #[test]
    fn single_position_marginal_is_softmax() {
        let mut head = ChainHead::zeros(3, 1);
        head.start = Array1::from_vec(vec![0.2, -0.1, 0.4]);
        head.stop = Array1::from_vec(vec![-0.3, 0.0, 0.1]);
        let scores = Array2::from_shape_vec((1, 3), vec![1.0, 2.0, 0.5]).unwrap();
        let (unary, pairwise) = forward_backward(&scores, &head);
        assert_eq!(pairwise.dim(), (0, 3, 3));
        let logits: Vec<f64> = (0..3)
            .map(|y| scores[[0, y]] + head.start[y] + head.stop[y])
            .collect();
        let z = logsumexp(&logits);
        for y in 0..3 {
            assert!((unary[[0, y]] - (logits[y] - z).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn marginals_match_enumeration_and_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let head = random_head(&mut rng, 3, 1, 1.5);
        let scores = random_scores(&mut rng, 4, 3, 1.5);
        let (unary, pairwise) = forward_backward(&scores, &head);
        let (bu, bp) = oracle::brute_force_marginals(&scores, &head);
        for t in 0..4 {
            let row: f64 = (0..3).map(|y| unary[[t, y]]).sum();
            assert!((row - 1.0).abs() < 1e-10);
            for y in 0..3 {
                assert!((unary[[t, y]] - bu[[t, y]]).abs() < 1e-10);
            }
        }
        for t in 0..3 {
            let mut slab = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    slab += pairwise[[t, a, b]];
                    assert!((pairwise[[t, a, b]] - bp[[t, a, b]]).abs() < 1e-10);
                }
            }
            assert!((slab - 1.0).abs() < 1e-10);
            // Marginalizing the pair over either side gives the unaries.
            for a in 0..3 {
                let left: f64 = (0..3).map(|b| pairwise[[t, a, b]]).sum();
                assert!((left - unary[[t, a]]).abs() < 1e-10);
                let right: f64 = (0..3).map(|b| pairwise[[t, b, a]]).sum();
                assert!((right - unary[[t + 1, a]]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn viterbi_breaks_ties_toward_low_ids() {
        let head = ChainHead::zeros(3, 1);
        let scores = Array2::zeros((4, 3));
        let (path, score) = viterbi(&scores, &head);
        assert_eq!(path, vec![0, 0, 0, 0]);
        assert_eq!(score, 0.0);
    }

    #[test]
    fn viterbi_single_position() {
        let head = ChainHead::zeros(2, 1);
        let scores = Array2::from_shape_vec((1, 2), vec![1.0, 5.0]).unwrap();
        let (path, score) = viterbi(&scores, &head);
        assert_eq!(path, vec![1]);
        assert_eq!(score, 5.0);
    }

    #[test]
    fn viterbi_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let head = random_head(&mut rng, 3, 1, 1.5);
            let scores = random_scores(&mut rng, 5, 3, 1.5);
            let (path, score) = viterbi(&scores, &head);
            let (bpath, bscore) = oracle::brute_force_argmax(&scores, &head);
            assert!((score - bscore).abs() < 1e-12);
            assert_eq!(path, bpath);
            assert!((score - score_path(&scores, &head, &path)).abs() < 1e-12);
        }
    }

    #[test]
    fn viterbi_dominates_any_gold() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let head = random_head(&mut rng, 3, 1, 1.5);
        let scores = random_scores(&mut rng, 6, 3, 1.5);
        let (_, best) = viterbi(&scores, &head);
        for _ in 0..20 {
            let gold: Vec<usize> = (0..6).map(|_| rng.gen_range(0..3)).collect();
            assert!(best >= score_path(&scores, &head, &gold) - 1e-12);
        }
    }

    #[test]
    fn uniform_model_loss_is_path_count() {
        let head = ChainHead::zeros(2, 3);
        let features = Array2::zeros((2, 3));
        for gold in [[0, 0], [0, 1], [1, 0], [1, 1]] {
            let g = nll_and_grad(&features, &head, &gold).unwrap();
            assert!((g.loss - 2.0 * 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn dominant_path_saturates_to_zero_loss() {
        let mut head = ChainHead::zeros(2, 1);
        head.a = Array2::from_shape_vec((2, 1), vec![30.0, -30.0]).unwrap();
        let features = Array2::from_shape_vec((3, 1), vec![1.0, 1.0, 1.0]).unwrap();
        let g = nll_and_grad(&features, &head, &[0, 0, 0]).unwrap();
        assert!(g.loss < 1e-8);
        assert!(g.d_a.iter().all(|v| v.abs() < 1e-8));
        assert!(g.d_b.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn out_of_range_gold_is_reported() {
        let head = ChainHead::zeros(2, 1);
        let features = Array2::zeros((2, 1));
        assert!(matches!(
            nll_and_grad(&features, &head, &[0, 5]),
            Err(ChainError::LabelOutOfRange { pos: 1, label: 5, k: 2 })
        ));
    }

    #[test]
    fn loss_is_invariant_to_per_position_emission_shifts() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let head = random_head(&mut rng, 3, 1, 1.0);
        let scores = random_scores(&mut rng, 5, 3, 1.0);
        let gold = vec![2, 0, 1, 1, 0];
        let base = nll_from_scores(&scores, &head, &gold).unwrap().loss;
        let mut shifted = scores.clone();
        for y in 0..3 {
            shifted[[2, y]] += 7.5;
        }
        let moved = nll_from_scores(&shifted, &head, &gold).unwrap().loss;
        assert!((base - moved).abs() <= 1e-9);
    }

    #[test]
    fn head_gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let features = Array2::from_shape_fn((4, 2), |_| rng.gen_range(-0.5..0.5));
        let mut head = random_head(&mut rng, 3, 2, 0.5);
        let gold = vec![1, 0, 2, 1];
        let g = nll_and_grad(&features, &head, &gold).unwrap();
        let mut analytic = Vec::new();
        analytic.extend(g.d_a.iter());
        analytic.extend(g.d_b.iter());
        analytic.extend(g.d_start.iter());
        analytic.extend(g.d_stop.iter());
        let numeric = central_difference(
            &mut head,
            |h| nll_and_grad(&features, h, &gold).unwrap().loss,
            1e-4,
        );
        assert!(max_rel_error(&analytic, &numeric) <= 1e-4);
    }

    #[test]
    fn feature_gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut features = Array2::from_shape_fn((3, 2), |_| rng.gen_range(-0.5..0.5));
        let head = random_head(&mut rng, 2, 2, 0.5);
        let gold = vec![0, 1, 1];
        let g = nll_and_grad(&features, &head, &gold).unwrap();
        let h = 1e-4;
        for t in 0..3 {
            for i in 0..2 {
                let orig = features[[t, i]];
                features[[t, i]] = orig + h;
                let up = nll_and_grad(&features, &head, &gold).unwrap().loss;
                features[[t, i]] = orig - h;
                let down = nll_and_grad(&features, &head, &gold).unwrap().loss;
                features[[t, i]] = orig;
                let cd = (up - down) / (2.0 * h);
                let rel = (g.d_features[[t, i]] - cd).abs() / (cd.abs() + 1e-8);
                assert!(rel <= 1e-4, "({t},{i}): rel {rel}");
            }
        }
    }
}
