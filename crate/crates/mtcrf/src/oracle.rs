//! Enumeration references for the dynamic-programming routines.
//!
//! Everything here trades time for obviousness: partition functions,
//! marginals, and argmaxes are computed by walking all K^T label sequences,
//! and a coupled model's joint distribution is reified as one chain over the
//! product label space. Tests compare the fast implementations against these;
//! production paths never call them.

use ndarray::{Array2, Array3};

use crate::chain::{ChainHead, EmissionScores};
use crate::factorial::{CouplingVariant, FactorialModel};
use crate::math::logsumexp;
use crate::tagset::LabelId;

const MAX_SEQUENCES: usize = 1_000_000;
const MAX_PRODUCT_STATES: usize = 256;

/// Calls `f` for every length-`t_len` sequence over `k` labels, position 0
/// varying fastest. The visit order is fixed, so ties resolved by explicit
/// comparison are reproducible.
fn for_each_sequence(t_len: usize, k: usize, mut f: impl FnMut(&[LabelId])) {
    let total = k
        .checked_pow(t_len as u32)
        .filter(|&n| n <= MAX_SEQUENCES)
        .expect("sequence space too large to enumerate");
    let mut seq = vec![0usize; t_len];
    for _ in 0..total {
        f(&seq);
        for slot in seq.iter_mut() {
            *slot += 1;
            if *slot < k {
                break;
            }
            *slot = 0;
        }
    }
}

fn path_score(scores: &EmissionScores, head: &ChainHead, seq: &[LabelId]) -> f64 {
    let mut s = head.start[seq[0]] + scores[[0, seq[0]]];
    for t in 1..seq.len() {
        s += head.b[[seq[t - 1], seq[t]]] + scores[[t, seq[t]]];
    }
    s + head.stop[seq[seq.len() - 1]]
}

/// True if `a` precedes `b` when both are read back to front. This is the
/// order Viterbi's per-step lowest-id tie-break induces on equal-score paths:
/// the final label is decided first, then the one before it, and so on.
fn reversed_less(a: &[LabelId], b: &[LabelId]) -> bool {
    for (x, y) in a.iter().rev().zip(b.iter().rev()) {
        if x != y {
            return x < y;
        }
    }
    false
}

/// log Z by summing every path score in the log domain.
pub fn brute_force_log_partition(scores: &EmissionScores, head: &ChainHead) -> f64 {
    let (t_len, k) = scores.dim();
    let mut all = Vec::new();
    for_each_sequence(t_len, k, |seq| all.push(path_score(scores, head, seq)));
    logsumexp(&all)
}

/// Exact argmax with the same tie-break as Viterbi.
pub fn brute_force_argmax(
    scores: &EmissionScores,
    head: &ChainHead,
) -> (Vec<LabelId>, f64) {
    let (t_len, k) = scores.dim();
    let mut best_seq: Option<Vec<LabelId>> = None;
    let mut best = f64::NEG_INFINITY;
    for_each_sequence(t_len, k, |seq| {
        let s = path_score(scores, head, seq);
        let replace = match &best_seq {
            None => true,
            Some(cur) => s > best || (s == best && reversed_less(seq, cur)),
        };
        if replace {
            best = s;
            best_seq = Some(seq.to_vec());
        }
    });
    (best_seq.unwrap(), best)
}

/// Exact unary and pairwise marginals by enumeration.
pub fn brute_force_marginals(
    scores: &EmissionScores,
    head: &ChainHead,
) -> (Array2<f64>, Array3<f64>) {
    let (t_len, k) = scores.dim();
    let log_z = brute_force_log_partition(scores, head);
    let mut unary = Array2::zeros((t_len, k));
    let mut pairwise = Array3::zeros((t_len.saturating_sub(1), k, k));
    for_each_sequence(t_len, k, |seq| {
        let p = (path_score(scores, head, seq) - log_z).exp();
        for (t, &y) in seq.iter().enumerate() {
            unary[[t, y]] += p;
        }
        for t in 0..t_len.saturating_sub(1) {
            pairwise[[t, seq[t], seq[t + 1]]] += p;
        }
    });
    (unary, pairwise)
}

/// A plain coupled model reified as one chain over the product label space.
/// State s encodes one label per task in mixed radix, task 0 varying fastest.
/// Exact joint inference is then ordinary chain inference on this object.
pub struct ProductChain {
    pub head: ChainHead,
    pub scores: EmissionScores,
    pub radices: Vec<usize>,
}

impl ProductChain {
    pub fn num_states(&self) -> usize {
        self.radices.iter().product()
    }

    /// Splits a product state into one label per task.
    pub fn decode_state(&self, mut state: usize) -> Vec<LabelId> {
        let mut labels = Vec::with_capacity(self.radices.len());
        for &k in &self.radices {
            labels.push(state % k);
            state /= k;
        }
        labels
    }

    pub fn encode_state(&self, labels: &[LabelId]) -> usize {
        let mut state = 0;
        for (&k, &y) in self.radices.iter().zip(labels).rev() {
            debug_assert!(y < k);
            state = state * k + y;
        }
        state
    }

    /// Converts a state sequence into per-task label sequences.
    pub fn decode_states(&self, states: &[usize]) -> Vec<Vec<LabelId>> {
        let mut out = vec![Vec::with_capacity(states.len()); self.radices.len()];
        for &s in states {
            for (j, y) in self.decode_state(s).into_iter().enumerate() {
                out[j].push(y);
            }
        }
        out
    }

    /// Converts per-task label sequences into a state sequence.
    pub fn encode_states(&self, assignment: &[Vec<LabelId>]) -> Vec<usize> {
        let t_len = assignment[0].len();
        (0..t_len)
            .map(|t| {
                let labels: Vec<LabelId> = assignment.iter().map(|seq| seq[t]).collect();
                self.encode_state(&labels)
            })
            .collect()
    }

    /// Exact joint log-partition.
    pub fn log_partition(&self) -> f64 {
        crate::chain::log_partition(&self.scores, &self.head)
    }

    /// Exact joint argmax as per-task sequences.
    pub fn viterbi_assignment(&self) -> (Vec<Vec<LabelId>>, f64) {
        let (states, score) = crate::chain::viterbi(&self.scores, &self.head);
        (self.decode_states(&states), score)
    }
}

/// Builds the product chain for a plain-variant model over explicit per-task
/// emission scores. Product emissions at each position sum the task emissions
/// and every pair's coupling entry (counted once); product transitions,
/// start, and stop sum the per-task quantities. Path scores in the product
/// space therefore equal the model's joint scores assignment by assignment.
pub fn crossproduct_from_scores(
    model: &FactorialModel,
    emissions: &[EmissionScores],
) -> ProductChain {
    assert!(
        model.variant == CouplingVariant::Plain,
        "product construction covers the plain variant only"
    );
    let radices: Vec<usize> = emissions.iter().map(|e| e.ncols()).collect();
    let num_states: usize = radices.iter().product();
    assert!(
        num_states <= MAX_PRODUCT_STATES,
        "product space of {num_states} states exceeds the {MAX_PRODUCT_STATES}-state cap"
    );
    let t_len = emissions[0].nrows();

    let mut chain = ProductChain {
        head: ChainHead::zeros(num_states, 1),
        scores: Array2::zeros((t_len, num_states)),
        radices,
    };
    let states: Vec<Vec<LabelId>> = (0..num_states).map(|s| chain.decode_state(s)).collect();
    for (s, labels) in states.iter().enumerate() {
        for t in 0..t_len {
            let mut v = 0.0;
            for (j, e) in emissions.iter().enumerate() {
                v += e[[t, labels[j]]];
            }
            for pair in &model.couplings {
                v += pair.c[[labels[pair.high], labels[pair.low]]];
            }
            chain.scores[[t, s]] = v;
        }
        let mut start = 0.0;
        let mut stop = 0.0;
        for (j, head) in model.heads.iter().enumerate() {
            start += head.start[labels[j]];
            stop += head.stop[labels[j]];
        }
        chain.head.start[s] = start;
        chain.head.stop[s] = stop;
        for (s2, labels2) in states.iter().enumerate() {
            let mut b = 0.0;
            for (j, head) in model.heads.iter().enumerate() {
                b += head.b[[labels[j], labels2[j]]];
            }
            chain.head.b[[s, s2]] = b;
        }
    }
    chain
}

/// [`crossproduct_from_scores`] starting from raw tokens.
pub fn crossproduct(model: &FactorialModel, tokens: &[String]) -> ProductChain {
    let features = model.featurizer.featurize(tokens);
    let emissions = model.emissions(&features).expect("heads match featurizer");
    crossproduct_from_scores(model, &emissions)
}
